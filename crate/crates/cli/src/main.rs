// SPDX-License-Identifier: Apache-2.0

//! `oblivion` command-line driver.
//!
//! Exit codes: 0 success (including attack steps that failed as expected),
//! 2 usage, 3 crypto, 4 unexpected protocol rejection, 5 scenario error.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use oblivion::abac::{compile_canaccess, encrypt_prb, fingerprint_subject, PolicyRuleBase};
use oblivion::authsig::{auth_keygen, AuthPublicKey};
use oblivion::circuit::{self, from_bits, to_bits, Circuit};
use oblivion::fhe::{
    decrypt_bits, encrypt_bits, keygen, parse_ciphertexts_any, write_ciphertexts, BackendKind,
    EvalKeyPair, EvalPublicKey, FheError, Scheme, SchemeParams,
};
use oblivion::simnet::{run_scenario_file, RunOptions, ScenarioError};

const EXIT_USAGE: u8 = 2;
const EXIT_CRYPTO: u8 = 3;
const EXIT_REJECTED: u8 = 4;
const EXIT_SCENARIO: u8 = 5;

#[derive(Parser, Debug)]
#[command(
    name = "oblivion",
    version,
    about = "Oblivious access control over a toy homomorphic scheme"
)]
struct Cli {
    #[arg(long, global = true, value_enum)]
    backend: Option<Backend>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `secret_bits,noise_bits,pk_elements` for the toy backend.
    #[arg(long, global = true)]
    params: Option<String>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Backend {
    Clear,
    Toy,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KeyKind {
    Auth,
    Eval,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an auth or eval key pair. Writes `<out>.pub`/`<out>.key`
    /// or `<out>.pk`/`<out>.sk`.
    Keygen {
        #[arg(value_enum)]
        kind: KeyKind,
        /// Principal name for auth keys.
        #[arg(long, default_value = "principal")]
        id: String,
    },
    /// Encrypt an unsigned value bitwise under an eval public key.
    Encrypt {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        value: u64,
        #[arg(long)]
        width: usize,
    },
    /// Decrypt a ciphertext file with an eval secret key.
    Decrypt {
        #[arg(long)]
        key: PathBuf,
        input: PathBuf,
    },
    #[command(subcommand)]
    Circuit(CircuitCmd),
    #[command(subcommand)]
    Policy(PolicyCmd),
    /// Run a scenario file; writes `transcript.jsonl` and `outputs.json`
    /// into `--out` (default `out/<scenario name>`).
    Run { scenario: PathBuf },
}

#[derive(Subcommand, Debug)]
enum CircuitCmd {
    /// Parse a netlist (or a builder such as `adder:2`) and report its shape
    /// and whether the chosen backend can evaluate it.
    Check { circuit: String },
}

#[derive(Subcommand, Debug)]
enum PolicyCmd {
    /// Compile the canAccess circuit for a PRB and write it as a netlist.
    Compile {
        prb: PathBuf,
        /// `name=auth.pub` pairs resolving `@name` references.
        #[arg(long = "ref")]
        refs: Vec<String>,
    },
    /// Encrypt a PRB under an eval public key.
    Encrypt {
        prb: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long = "ref")]
        refs: Vec<String>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

type CliResult<T> = Result<T, Failure>;

fn fail(code: u8, e: impl Display) -> Failure {
    Failure {
        code,
        message: e.to_string(),
    }
}

fn crypto(e: impl Display) -> Failure {
    fail(EXIT_CRYPTO, e)
}

fn usage(e: impl Display) -> Failure {
    fail(EXIT_USAGE, e)
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn with_ext(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

struct Ctx {
    cli: Cli,
}

impl Ctx {
    fn say(&self, line: impl Display) {
        if !self.cli.quiet {
            println!("{line}");
        }
    }

    fn params(&self) -> CliResult<Option<SchemeParams>> {
        self.cli
            .params
            .as_deref()
            .map(|p| p.parse().map_err(usage))
            .transpose()
    }

    fn scheme(&self) -> CliResult<Scheme> {
        let params = self.params()?;
        match (self.cli.backend, params) {
            (Some(Backend::Clear), Some(_)) => {
                Err(usage("--params only applies to the toy backend"))
            }
            (Some(Backend::Clear), None) => Ok(Scheme::Clear),
            (None, Some(p)) | (Some(Backend::Toy), Some(p)) => Ok(Scheme::Toy(p)),
            (Some(Backend::Toy), None) => Ok(Scheme::Toy(SchemeParams::toy_default())),
            (None, None) => Ok(Scheme::Clear),
        }
    }

    fn seed(&self) -> u64 {
        self.cli.seed.unwrap_or(0)
    }

    /// Writes to `--out`, or prints when no path was given.
    fn emit(&self, text: &str) -> CliResult<()> {
        match &self.cli.out {
            Some(p) => write(p, text),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn load_prb(path: &Path, refs: &[String]) -> CliResult<PolicyRuleBase> {
    let mut keys = Vec::new();
    for r in refs {
        let (name, file) = r
            .split_once('=')
            .ok_or_else(|| usage(format!("--ref expects name=file, got `{r}`")))?;
        let bytes = hex::decode(read(Path::new(file))?.trim())
            .map_err(|e| usage(format!("{file}: {e}")))?;
        let pk = AuthPublicKey::from_bytes(&bytes).map_err(|e| usage(format!("{file}: {e}")))?;
        keys.push((name.to_string(), pk));
    }
    let resolve = |name: &str, width: usize| {
        let (_, pk) = keys.iter().find(|(n, _)| n == name)?;
        fingerprint_subject(pk, "ref", width).ok().map(|v| v.bits)
    };
    PolicyRuleBase::parse_with(&read(path)?, &resolve)
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn builtin(spec: &str) -> Option<Circuit> {
    let (name, w) = spec.split_once(':')?;
    let w: usize = w.parse().ok().filter(|&w| w > 0)?;
    Some(match name {
        "adder" => circuit::adder(w),
        "equality" => circuit::equality(w),
        "mux" => circuit::mux(w),
        "identity" => circuit::identity(w),
        "and_tree" => circuit::and_tree(w),
        "or_tree" => circuit::or_tree(w),
        _ => return None,
    })
}

fn run(ctx: &Ctx) -> CliResult<()> {
    match &ctx.cli.command {
        Command::Keygen {
            kind: KeyKind::Auth,
            id,
        } => {
            let base = ctx.cli.out.clone().unwrap_or_else(|| PathBuf::from(id));
            let pair = auth_keygen(id, ctx.seed());
            write(&with_ext(&base, "pub"), &(pair.public.to_hex() + "\n"))?;
            write(
                &with_ext(&base, "key"),
                &(hex::encode(pair.secret.to_bytes()) + "\n"),
            )?;
            ctx.say(format!(
                "auth key for {id} written to {}.{{pub,key}}",
                base.display()
            ));
        }
        Command::Keygen {
            kind: KeyKind::Eval,
            ..
        } => {
            let base = ctx.cli.out.clone().unwrap_or_else(|| PathBuf::from("eval"));
            let pair = keygen(ctx.scheme()?, ctx.seed());
            write(&with_ext(&base, "pk"), &pair.public.to_text())?;
            write(&with_ext(&base, "sk"), &pair.secret_text())?;
            ctx.say(format!(
                "eval key {} ({}) written to {}.{{pk,sk}}",
                pair.public.fingerprint(),
                pair.public.scheme(),
                base.display()
            ));
        }
        Command::Encrypt { key, value, width } => {
            let pk = EvalPublicKey::from_text(&read(key)?).map_err(crypto)?;
            if *width == 0 || *width > 64 || (*width < 64 && value >> width != 0) {
                return Err(usage(format!("{value} does not fit in {width} bits")));
            }
            ctx.emit(
                &(write_ciphertexts(&encrypt_bits(&pk, &to_bits(*value, *width), ctx.seed()))
                    + "\n"),
            )?;
        }
        Command::Decrypt { key, input } => {
            let pair = EvalKeyPair::from_secret_text(&read(key)?).map_err(crypto)?;
            let cts = parse_ciphertexts_any(&read(input)?, pair.public.scheme()).map_err(crypto)?;
            let bits = decrypt_bits(&pair.secret, &cts).map_err(|e| match e {
                FheError::KeyMismatch { .. } => crypto(format!("KeyMismatch: {e}")),
                e => crypto(e),
            })?;
            let shown: String = bits.iter().map(|&b| if b { '1' } else { '0' }).collect();
            let value = if bits.len() <= 64 {
                from_bits(&bits).to_string()
            } else {
                "-".into()
            };
            ctx.emit(&format!("bits {shown}\nvalue {value}\n"))?;
        }
        Command::Circuit(CircuitCmd::Check { circuit }) => {
            let c = match builtin(circuit) {
                Some(c) => c,
                None => Circuit::from_netlist(&read(Path::new(circuit))?)
                    .map_err(|e| usage(format!("{circuit}: {e}")))?,
            };
            let scheme = ctx.scheme()?;
            let max = scheme.max_mult_depth();
            ctx.say(format!(
                "inputs {} outputs {} gates {} and {} depth {}",
                c.num_inputs(),
                c.num_outputs(),
                c.gates().len(),
                c.and_count(),
                c.mult_depth()
            ));
            if c.mult_depth() > max {
                return Err(crypto(format!(
                    "depth {} exceeds {} supported by {scheme}",
                    c.mult_depth(),
                    max
                )));
            }
            if ctx.cli.out.is_some() {
                ctx.emit(&c.to_netlist())?;
            }
        }
        Command::Policy(PolicyCmd::Compile { prb, refs }) => {
            let prb = load_prb(prb, refs)?;
            let c = compile_canaccess(&prb.schema, prb.rules.len()).map_err(usage)?;
            if ctx.cli.out.is_some() {
                ctx.say(format!(
                    "{} rules, canAccess depth {}",
                    prb.rules.len(),
                    c.mult_depth()
                ));
            }
            ctx.emit(&c.to_netlist())?;
        }
        Command::Policy(PolicyCmd::Encrypt { prb, key, refs }) => {
            let prb = load_prb(prb, refs)?;
            let pk = EvalPublicKey::from_text(&read(key)?).map_err(crypto)?;
            let enc = encrypt_prb(&pk, &prb, ctx.seed()).map_err(crypto)?;
            ctx.emit(&enc.to_text())?;
        }
        Command::Run { scenario } => return run_scenario_cmd(ctx, scenario),
    }
    Ok(())
}

fn run_scenario_cmd(ctx: &Ctx, path: &Path) -> CliResult<()> {
    let opts = RunOptions {
        backend: ctx.cli.backend.map(|b| match b {
            Backend::Clear => BackendKind::Clear,
            Backend::Toy => BackendKind::Toy,
        }),
        params: ctx.params()?,
        seed_offset: ctx.seed(),
    };
    let report =
        run_scenario_file(path, &opts).map_err(|e: ScenarioError| fail(EXIT_SCENARIO, e))?;
    let dir = ctx
        .cli
        .out
        .clone()
        .unwrap_or_else(|| Path::new("out").join(&report.name));
    write(&dir.join("transcript.jsonl"), &report.transcript.to_jsonl())?;
    write(&dir.join("outputs.json"), &report.outputs_json())?;
    for line in report.summary_lines() {
        ctx.say(line);
    }
    let failed: Vec<_> = report.results.iter().filter(|r| !r.pass).collect();
    ctx.say(format!(
        "{} {}: {}/{} steps as expected",
        if failed.is_empty() { "PASS" } else { "FAIL" },
        report.name,
        report.results.len() - failed.len(),
        report.results.len()
    ));
    match failed.first() {
        None => Ok(()),
        Some(r) if r.is_rejection() && !is_crypto_outcome(&r.outcome) => Err(fail(
            EXIT_REJECTED,
            format!("step {} rejected: {}", r.index, r.outcome),
        )),
        Some(r) => Err(fail(
            EXIT_CRYPTO,
            format!("step {}: {} (expected {})", r.index, r.outcome, r.expected),
        )),
    }
}

fn is_crypto_outcome(outcome: &str) -> bool {
    matches!(outcome, "DepthExceeded" | "KeyMismatch" | "CryptoError")
}

fn main() -> ExitCode {
    let ctx = Ctx { cli: Cli::parse() };
    match run(&ctx) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
