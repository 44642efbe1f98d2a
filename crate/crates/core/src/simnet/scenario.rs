// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AdversaryConfig, Bus, Capability, DeliveryStatus, LeakageReport, Transcript};
use crate::abac::{fingerprint_subject, AttributeValue, Category, PolicyRuleBase};
use crate::authsig::{auth_keygen, AuthKeyPair};
use crate::circuit::{self, from_bits, to_bits, Circuit};
use crate::cloudserver::{FuncId, Handle};
use crate::fhe::{decrypt_bits, keygen, BackendKind, EvalKeyPair, Scheme, SchemeParams};
use crate::protocol::{
    basic_run, frame, mcsp_request, mcsp_run, mssp_run, op_request, reencrypt_data, revoke_user,
    rotate_auth_key, unframe, upload_data, upload_prb, Channel, McspOutcome, Message,
    ProtocolError, Role, RotationStrategy, ServerAgent, ServerMode, UserAgent,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario: {0}")]
    Invalid(String),
    #[error("action {step}: {message}")]
    Step { step: usize, message: String },
    #[error("setup failed: {0}")]
    Setup(#[from] ProtocolError),
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl ScenarioError {
    /// Index of the failing action, when the failure is tied to one.
    pub fn step(&self) -> Option<usize> {
        match self {
            ScenarioError::Step { step, .. } => Some(*step),
            _ => None,
        }
    }
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrincipalSpec {
    pub id: String,
    #[serde(default = "partner")]
    pub role: String,
    pub auth_seed: u64,
}

fn partner() -> String {
    "partner".into()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSpec {
    #[serde(default = "server_id")]
    pub id: String,
    #[serde(default)]
    pub auth_seed: u64,
}

fn server_id() -> String {
    "sally".into()
}

impl Default for ServerSpec {
    fn default() -> Self {
        Self {
            id: server_id(),
            auth_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeysSpec {
    pub eval_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttrSpec {
    pub name: String,
    pub category: String,
    pub value: u64,
    pub width: usize,
}

impl AttrSpec {
    fn value(&self) -> Result<AttributeValue, ScenarioError> {
        let category: Category = self.category.parse().map_err(|e| invalid(format!("{e}")))?;
        Ok(AttributeValue::from_u64(
            &self.name, category, self.value, self.width,
        ))
    }
}

fn attr_values(specs: &[AttrSpec]) -> Result<Vec<AttributeValue>, ScenarioError> {
    specs.iter().map(AttrSpec::value).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub name: String,
    pub owner: String,
    pub value: u64,
    pub width: usize,
    #[serde(default)]
    pub attributes: Vec<AttrSpec>,
}

/// A registered function: a builder with a width, or a netlist file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub id: u64,
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub width: Option<usize>,
    #[serde(default)]
    pub file: Option<String>,
}

impl FunctionSpec {
    fn load(&self, base: &Path) -> Result<Circuit, ScenarioError> {
        match (&self.builtin, &self.file) {
            (Some(name), None) => {
                let w = self
                    .width
                    .ok_or_else(|| invalid(format!("function {} needs a width", self.id)))?;
                if w == 0 {
                    return Err(invalid(format!("function {} has width 0", self.id)));
                }
                Ok(match name.as_str() {
                    "adder" => circuit::adder(w),
                    "equality" => circuit::equality(w),
                    "mux" => circuit::mux(w),
                    "identity" => circuit::identity(w),
                    "and_tree" => circuit::and_tree(w),
                    "or_tree" => circuit::or_tree(w),
                    other => return Err(invalid(format!("unknown builtin function `{other}`"))),
                })
            }
            (None, Some(file)) => {
                let text = read(&base.join(file))?;
                Circuit::from_netlist(&text).map_err(|e| invalid(format!("{file}: {e}")))
            }
            _ => Err(invalid(format!(
                "function {} needs exactly one of `builtin` or `file`",
                self.id
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrbSpec {
    #[serde(default)]
    pub file: Option<String>,
    #[serde(default)]
    pub text: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversarySpec {
    #[serde(default = "mallory")]
    pub id: String,
    #[serde(default)]
    pub auth_seed: u64,
    #[serde(default)]
    pub eval_seed: u64,
    #[serde(flatten)]
    pub config: AdversaryConfig,
}

fn mallory() -> String {
    "mallory".into()
}

/// One scripted step. `expect` names the outcome the step must end with;
/// each action has a sensible default.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    Run {
        user: String,
        func: u64,
        data: String,
        #[serde(default)]
        input: u64,
        #[serde(default)]
        input_width: usize,
        #[serde(default)]
        attributes: Vec<AttrSpec>,
        #[serde(default)]
        tamper: bool,
        #[serde(default)]
        expect: Option<String>,
    },
    UploadPrb {
        #[serde(default)]
        user: Option<String>,
        #[serde(default)]
        expect: Option<String>,
    },
    RotateAuth {
        user: String,
        seed: u64,
        #[serde(default)]
        expect: Option<String>,
    },
    Revoke {
        principal: String,
        #[serde(default)]
        expect: Option<String>,
    },
    Reencrypt {
        strategy: String,
        eval_seed: u64,
        #[serde(default)]
        expect: Option<String>,
    },
    CheckDecrypt {
        data: String,
        #[serde(default = "current")]
        key: String,
        #[serde(default)]
        expect: Option<String>,
    },
    Inject {
        /// `own`, `stolen` or `none`.
        sign_with: String,
        #[serde(default)]
        victim: Option<String>,
        /// Which of the victim's auth keys was stolen: `current` or `previous`.
        #[serde(default = "current")]
        victim_key: String,
        func: u64,
        data: String,
        #[serde(default)]
        input: u64,
        #[serde(default)]
        input_width: usize,
        #[serde(default)]
        attributes: Vec<AttrSpec>,
        #[serde(default)]
        expect: Option<String>,
    },
    Replay {
        seq: u64,
        #[serde(default)]
        expect: Option<String>,
    },
    ReadServer {
        #[serde(default)]
        expect: Option<String>,
    },
}

fn current() -> String {
    "current".into()
}

impl Action {
    fn expect(&self) -> Option<&str> {
        match self {
            Action::Run { expect, .. }
            | Action::UploadPrb { expect, .. }
            | Action::RotateAuth { expect, .. }
            | Action::Revoke { expect, .. }
            | Action::Reencrypt { expect, .. }
            | Action::CheckDecrypt { expect, .. }
            | Action::Inject { expect, .. }
            | Action::Replay { expect, .. }
            | Action::ReadServer { expect } => expect.as_deref(),
        }
    }

    fn label(&self) -> String {
        match self {
            Action::Run {
                user, func, data, ..
            } => format!("run {user} f{func} on {data}"),
            Action::UploadPrb { user, .. } => {
                format!("upload_prb by {}", user.as_deref().unwrap_or("admin"))
            }
            Action::RotateAuth { user, .. } => format!("rotate_auth {user}"),
            Action::Revoke { principal, .. } => format!("revoke {principal}"),
            Action::Reencrypt { strategy, .. } => format!("reencrypt {strategy}"),
            Action::CheckDecrypt { data, key, .. } => {
                format!("check_decrypt {data} with {key} key")
            }
            Action::Inject {
                sign_with, func, ..
            } => format!("inject f{func} signed {sign_with}"),
            Action::Replay { seq, .. } => format!("replay #{seq}"),
            Action::ReadServer { .. } => "read_server".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    /// `basic`, `basic-signed`, `mssp` or `mcsp`.
    pub protocol: String,
    #[serde(default = "clear")]
    pub backend: String,
    /// `secret_bits,noise_bits,pk_elements` for the toy backend.
    #[serde(default)]
    pub params: Option<String>,
    pub principals: Vec<PrincipalSpec>,
    #[serde(default)]
    pub server: ServerSpec,
    pub keys: KeysSpec,
    #[serde(default)]
    pub data: Vec<DataSpec>,
    #[serde(default)]
    pub functions: Vec<FunctionSpec>,
    #[serde(default)]
    pub prb: Option<PrbSpec>,
    #[serde(default)]
    pub adversary: Option<AdversarySpec>,
    #[serde(default)]
    pub script: Vec<Action>,
}

fn clear() -> String {
    "clear".into()
}

/// Overrides applied on top of a scenario file.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub backend: Option<BackendKind>,
    pub params: Option<SchemeParams>,
    /// Added to every seed in the scenario.
    pub seed_offset: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepResult {
    pub index: usize,
    pub name: String,
    pub outcome: String,
    pub expected: String,
    pub pass: bool,
    /// Decrypted output bits, least significant first, when the step has one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl StepResult {
    /// True when the step failed on an unexpected protocol rejection.
    pub fn is_rejection(&self) -> bool {
        !self.pass
            && !matches!(
                self.outcome.as_str(),
                "ok" | "granted" | "denied" | "mismatch" | "decrypts" | "fails"
            )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioReport {
    pub name: String,
    pub transcript: Transcript,
    pub results: Vec<StepResult>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    /// One `PASS`/`FAIL` line per scripted step.
    pub fn summary_lines(&self) -> Vec<String> {
        self.results
            .iter()
            .map(|r| {
                let verdict = if r.pass { "PASS" } else { "FAIL" };
                if r.pass {
                    format!(
                        "{verdict} [{}] {}: {} (expected)",
                        r.index, r.name, r.outcome
                    )
                } else {
                    format!(
                        "{verdict} [{}] {}: {} (expected {})",
                        r.index, r.name, r.outcome, r.expected
                    )
                }
            })
            .collect()
    }

    /// Results as pretty JSON, for the outputs file.
    pub fn outputs_json(&self) -> String {
        #[derive(Serialize)]
        struct Outputs<'a> {
            scenario: &'a str,
            passed: bool,
            results: &'a [StepResult],
        }
        let out = Outputs {
            scenario: &self.name,
            passed: self.passed(),
            results: &self.results,
        };
        serde_json::to_string_pretty(&out).expect("results serialize") + "\n"
    }
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn run_scenario_file(path: &Path, opts: &RunOptions) -> Result<ScenarioReport, ScenarioError> {
    let spec: ScenarioSpec = serde_json::from_str(&read(path)?)?;
    run_scenario(&spec, path.parent().unwrap_or(Path::new(".")), opts)
}

fn bits_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

struct Sim<'a> {
    spec: &'a ScenarioSpec,
    base: &'a Path,
    opts: &'a RunOptions,
    mode: ServerMode,
    scheme: Scheme,
    users: BTreeMap<String, UserAgent>,
    admin: Option<String>,
    server: ServerAgent,
    bus: Bus,
    handles: BTreeMap<String, Handle>,
    retired: Vec<EvalKeyPair>,
    retired_auth: BTreeMap<String, AuthKeyPair>,
    adversary: Option<AdversarySpec>,
}

fn parse_mode(name: &str) -> Result<ServerMode, ScenarioError> {
    match name {
        "basic" => Ok(ServerMode::Basic { signed: false }),
        "basic-signed" => Ok(ServerMode::Basic { signed: true }),
        "mssp" => Ok(ServerMode::Mssp),
        "mcsp" => Ok(ServerMode::Mcsp),
        other => Err(invalid(format!("unknown protocol `{other}`"))),
    }
}

fn scheme_for(spec: &ScenarioSpec, opts: &RunOptions) -> Result<Scheme, ScenarioError> {
    let kind = match opts.backend {
        Some(k) => k,
        None => spec.backend.parse().map_err(|e| invalid(format!("{e}")))?,
    };
    Ok(match kind {
        BackendKind::Clear => Scheme::Clear,
        BackendKind::Toy => {
            let params = match (&opts.params, &spec.params) {
                (Some(p), _) => *p,
                (None, Some(text)) => text.parse().map_err(|e| invalid(format!("params: {e}")))?,
                (None, None) => SchemeParams::toy_default(),
            };
            Scheme::Toy(params)
        }
    })
}

fn validate(spec: &ScenarioSpec) -> Result<(), ScenarioError> {
    let mut ids = BTreeSet::new();
    for p in &spec.principals {
        if !ids.insert(p.id.as_str()) {
            return Err(invalid(format!("principal `{}` listed twice", p.id)));
        }
        if !matches!(p.role.as_str(), "administrator" | "partner") {
            return Err(invalid(format!(
                "principal `{}` has unknown role `{}`",
                p.id, p.role
            )));
        }
    }
    let admins = spec
        .principals
        .iter()
        .filter(|p| p.role == "administrator")
        .count();
    if admins > 1 {
        return Err(invalid("at most one administrator per scenario"));
    }
    if spec.protocol == "mcsp" && admins == 0 {
        return Err(invalid("mcsp needs an administrator"));
    }
    let mut names = BTreeSet::new();
    for d in &spec.data {
        if !ids.contains(d.owner.as_str()) {
            return Err(invalid(format!(
                "data `{}` is owned by unknown principal `{}`",
                d.name, d.owner
            )));
        }
        if d.width == 0 || !names.insert(d.name.as_str()) {
            return Err(invalid(format!(
                "data `{}` is empty or listed twice",
                d.name
            )));
        }
    }
    let known = |step: usize, who: &str| {
        if ids.contains(who) {
            Ok(())
        } else {
            Err(ScenarioError::Step {
                step,
                message: format!("unknown principal `{who}`"),
            })
        }
    };
    let data = |step: usize, name: &str| {
        if names.contains(name) {
            Ok(())
        } else {
            Err(ScenarioError::Step {
                step,
                message: format!("unknown data `{name}`"),
            })
        }
    };
    for (i, a) in spec.script.iter().enumerate() {
        match a {
            Action::Run { user, data: d, .. } => {
                known(i, user)?;
                data(i, d)?;
            }
            Action::UploadPrb { user, .. } => {
                if let Some(u) = user {
                    known(i, u)?;
                }
                if spec.prb.is_none() {
                    return Err(ScenarioError::Step {
                        step: i,
                        message: "scenario has no `prb` section".into(),
                    });
                }
            }
            Action::RotateAuth { user, .. } => known(i, user)?,
            Action::CheckDecrypt { data: d, key, .. } => {
                data(i, d)?;
                if !matches!(key.as_str(), "current" | "previous") {
                    return Err(ScenarioError::Step {
                        step: i,
                        message: format!("unknown key `{key}`"),
                    });
                }
            }
            Action::Inject {
                data: d, victim, ..
            } => {
                data(i, d)?;
                if let Some(v) = victim {
                    known(i, v)?;
                }
            }
            Action::Reencrypt { strategy, .. } => {
                strategy
                    .parse::<RotationStrategy>()
                    .map_err(|e| ScenarioError::Step {
                        step: i,
                        message: e.to_string(),
                    })?;
            }
            Action::Revoke { .. } | Action::Replay { .. } | Action::ReadServer { .. } => {}
        }
    }
    Ok(())
}

/// Runs a scenario. Files named in the spec are resolved against `base`.
pub fn run_scenario(
    spec: &ScenarioSpec,
    base: &Path,
    opts: &RunOptions,
) -> Result<ScenarioReport, ScenarioError> {
    validate(spec)?;
    let mut sim = Sim::setup(spec, base, opts)?;
    sim.bus.set_phase("script");
    let mut results = Vec::with_capacity(spec.script.len());
    for (i, action) in spec.script.iter().enumerate() {
        let result = sim.act(i, action)?;
        sim.bus.record_state(i, &sim.server.visible_state());
        sim.bus.record_result(&result);
        results.push(result);
    }
    Ok(ScenarioReport {
        name: spec.name.clone(),
        transcript: sim.bus.into_transcript(),
        results,
    })
}

impl<'a> Sim<'a> {
    fn seed(&self, s: u64) -> u64 {
        s.wrapping_add(self.opts.seed_offset)
    }

    fn setup(
        spec: &'a ScenarioSpec,
        base: &'a Path,
        opts: &'a RunOptions,
    ) -> Result<Self, ScenarioError> {
        let mode = parse_mode(&spec.protocol)?;
        let scheme = scheme_for(spec, opts)?;
        let eval = keygen(scheme, spec.keys.eval_seed.wrapping_add(opts.seed_offset));
        let server = ServerAgent::new(
            &spec.server.id,
            spec.server.auth_seed.wrapping_add(opts.seed_offset),
            mode,
            eval.public.clone(),
        );
        let mut sim = Sim {
            spec,
            base,
            opts,
            mode,
            scheme,
            users: BTreeMap::new(),
            admin: None,
            server,
            bus: Bus::new(),
            handles: BTreeMap::new(),
            retired: Vec::new(),
            retired_auth: BTreeMap::new(),
            adversary: spec.adversary.clone(),
        };
        for p in &spec.principals {
            let role = if p.role == "administrator" {
                Role::Administrator
            } else {
                Role::Partner
            };
            let mut user = UserAgent::new(&p.id, role, sim.seed(p.auth_seed), eval.clone());
            user.trust_server(sim.server.auth_public().clone());
            sim.server
                .register_legible(&p.id, user.auth_public().clone());
            if role == Role::Administrator {
                sim.admin = Some(p.id.clone());
                sim.server.set_admin(&p.id);
            }
            sim.users.insert(p.id.clone(), user);
        }
        if let Some(admin) = sim.admin.clone() {
            let keys: Vec<(String, _)> = sim
                .users
                .iter()
                .map(|(k, u)| (k.clone(), u.auth_public().clone()))
                .collect();
            let a = sim.users.get_mut(&admin).expect("administrator exists");
            for (name, key) in keys {
                a.learn_partner(&name, key);
            }
        }
        for f in &spec.functions {
            let circuit = f.load(base)?;
            sim.server.register_func(FuncId(f.id), circuit)?;
        }
        for d in &spec.data {
            let attrs = attr_values(&d.attributes)?;
            let user = sim.users.get_mut(&d.owner).expect("validated owner");
            let h = upload_data(
                user,
                &mut sim.server,
                &mut sim.bus,
                &to_bits(d.value, d.width),
                &attrs,
            )?;
            sim.handles.insert(d.name.clone(), h);
        }
        Ok(sim)
    }

    fn data(&self, name: &str) -> (&DataSpec, Handle) {
        let d = self
            .spec
            .data
            .iter()
            .find(|d| d.name == name)
            .expect("validated data");
        (d, self.handles[name])
    }

    fn adversary(&self, step: usize, need: &Capability) -> Result<&AdversarySpec, ScenarioError> {
        match &self.adversary {
            Some(a) if a.config.has(need) => Ok(a),
            _ => Err(ScenarioError::Step {
                step,
                message: format!("adversary lacks capability {need:?}"),
            }),
        }
    }

    /// Plaintext oracle for `func` over `input ++ data`.
    fn oracle(&self, func: u64, input: &[bool], data: &DataSpec) -> Option<Vec<bool>> {
        let circuit = self.server.registry().lookup(FuncId(func)).ok()?;
        let mut bits = input.to_vec();
        bits.extend(to_bits(data.value, data.width));
        circuit.eval_plain(&bits).ok()
    }

    fn policy(&self, resolver: &UserAgent) -> Result<PolicyRuleBase, ScenarioError> {
        let spec = self.spec.prb.as_ref().expect("validated prb");
        let text = match (&spec.file, &spec.text) {
            (Some(f), None) => read(&self.base.join(f))?,
            (None, Some(t)) => t.clone(),
            _ => return Err(invalid("`prb` needs exactly one of `file` or `text`")),
        };
        let resolve = |name: &str, width: usize| {
            let key = resolver
                .partner(name)
                .cloned()
                .or_else(|| self.users.get(name).map(|u| u.auth_public().clone()))?;
            fingerprint_subject(&key, "ref", width).ok().map(|v| v.bits)
        };
        PolicyRuleBase::parse_with(&text, &resolve).map_err(|e| invalid(format!("prb: {e}")))
    }

    fn act(&mut self, i: usize, action: &Action) -> Result<StepResult, ScenarioError> {
        let (outcome, default, output, detail) = self.perform(i, action)?;
        let expected = action.expect().unwrap_or(default).to_string();
        Ok(StepResult {
            index: i,
            name: action.label(),
            pass: outcome == expected,
            outcome,
            expected,
            output,
            detail,
        })
    }

    #[allow(clippy::type_complexity)]
    fn perform(
        &mut self,
        i: usize,
        action: &Action,
    ) -> Result<(String, &'static str, Option<String>, String), ScenarioError> {
        let outcome_of = |r: Result<(), ProtocolError>| match r {
            Ok(()) => "ok".to_string(),
            Err(e) => e.outcome().to_string(),
        };
        match action {
            Action::Run {
                user,
                func,
                data,
                input,
                input_width,
                attributes,
                tamper,
                ..
            } => {
                if *tamper {
                    self.adversary(i, &Capability::TamperPayload)?;
                    let sid = self.server.id.clone();
                    self.bus.tamper_next_from(&sid);
                }
                let (d, h) = self.data(data);
                let d = d.clone();
                let input = to_bits(*input, *input_width);
                let oracle = self.oracle(*func, &input, &d);
                let attrs = attr_values(attributes)?;
                let u = self.users.get_mut(user).expect("validated user");
                let f = FuncId(*func);
                let result = match self.mode {
                    ServerMode::Basic { .. } => {
                        basic_run(u, &mut self.server, &mut self.bus, f, h, &input).map(Some)
                    }
                    ServerMode::Mssp => {
                        mssp_run(u, &mut self.server, &mut self.bus, f, h, &input).map(Some)
                    }
                    ServerMode::Mcsp => {
                        mcsp_run(u, &mut self.server, &mut self.bus, f, h, &input, &attrs).map(
                            |o| match o {
                                McspOutcome::Granted(bits) => Some(bits),
                                McspOutcome::Denied => None,
                            },
                        )
                    }
                };
                self.bus.disarm();
                let mcsp = self.mode == ServerMode::Mcsp;
                let default = if mcsp { "granted" } else { "ok" };
                Ok(match result {
                    Ok(Some(bits)) => {
                        let ok = oracle.as_deref() == Some(bits.as_slice());
                        let outcome = match (ok, mcsp) {
                            (false, _) => "mismatch",
                            (true, true) => "granted",
                            (true, false) => "ok",
                        };
                        let detail = format!("value {}", from_bits(&bits));
                        (
                            outcome.to_string(),
                            default,
                            Some(bits_string(&bits)),
                            detail,
                        )
                    }
                    Ok(None) => ("denied".into(), default, None, String::new()),
                    Err(e) => (e.outcome().to_string(), default, None, e.to_string()),
                })
            }
            Action::UploadPrb { user, .. } => {
                let who = match user.clone().or_else(|| self.admin.clone()) {
                    Some(w) => w,
                    None => {
                        return Err(ScenarioError::Step {
                            step: i,
                            message: "no administrator".into(),
                        })
                    }
                };
                let resolver = self
                    .users
                    .get(self.admin.as_deref().unwrap_or(&who))
                    .expect("known user")
                    .clone();
                let prb = self.policy(&resolver)?;
                let u = self.users.get_mut(&who).expect("validated user");
                let r = upload_prb(u, &mut self.server, &mut self.bus, &prb);
                Ok((
                    outcome_of(r),
                    "ok",
                    None,
                    format!("{} rules", prb.rules.len()),
                ))
            }
            Action::RotateAuth { user, seed, .. } => {
                let admin_id = self.require_admin(i)?;
                if *user == admin_id {
                    return Err(ScenarioError::Step {
                        step: i,
                        message: "the administrator cannot rotate itself here".into(),
                    });
                }
                let seed = self.seed(*seed);
                let mut u = self.users.remove(user).expect("validated user");
                let mut a = self.users.remove(&admin_id).expect("administrator exists");
                let old = u.auth().clone();
                let r = rotate_auth_key(&mut u, &mut a, &mut self.server, &mut self.bus, seed)
                    .map(|_| ());
                if r.is_ok() {
                    self.retired_auth.insert(user.clone(), old);
                }
                self.users.insert(user.clone(), u);
                self.users.insert(admin_id, a);
                Ok((outcome_of(r), "ok", None, String::new()))
            }
            Action::Revoke { principal, .. } => {
                let admin_id = self.require_admin(i)?;
                let a = self.users.get_mut(&admin_id).expect("administrator exists");
                let r = revoke_user(a, &mut self.server, &mut self.bus, principal);
                let detail = match &r {
                    Ok(None) => "no-op".to_string(),
                    Ok(Some(p)) => format!("{} rules left", p.rules.len()),
                    Err(e) => e.to_string(),
                };
                Ok((outcome_of(r.map(|_| ())), "ok", None, detail))
            }
            Action::Reencrypt {
                strategy,
                eval_seed,
                ..
            } => {
                let admin_id = self.require_admin(i)?;
                let strategy: RotationStrategy = strategy.parse().expect("validated strategy");
                let new_pair = keygen(self.scheme, self.seed(*eval_seed));
                let mut a = self.users.remove(&admin_id).expect("administrator exists");
                let old = a.eval_pair().clone();
                let mut partners: Vec<&mut UserAgent> = self.users.values_mut().collect();
                let r = reencrypt_data(
                    &mut a,
                    &mut partners,
                    &mut self.server,
                    &mut self.bus,
                    strategy,
                    new_pair,
                );
                self.users.insert(admin_id, a);
                if r.is_ok() {
                    self.retired.push(old);
                }
                let detail = r.as_ref().err().map(|e| e.to_string()).unwrap_or_default();
                Ok((outcome_of(r), "ok", None, detail))
            }
            Action::CheckDecrypt { data, key, .. } => {
                let (d, h) = self.data(data);
                let want = to_bits(d.value, d.width);
                let pair = match key.as_str() {
                    "previous" => match self.retired.last() {
                        Some(p) => p.clone(),
                        None => {
                            return Err(ScenarioError::Step {
                                step: i,
                                message: "no previous key".into(),
                            })
                        }
                    },
                    _ => {
                        let owner = self.users.get(&d.owner).expect("validated owner");
                        owner.eval_pair().clone()
                    }
                };
                let blob = self
                    .server
                    .store()
                    .fetch(h)
                    .map_err(|e| ScenarioError::Step {
                        step: i,
                        message: e.to_string(),
                    })?;
                let outcome = match decrypt_bits(&pair.secret, &blob.ciphertexts) {
                    Ok(bits) if bits == want => "decrypts",
                    _ => "fails",
                };
                Ok((outcome.into(), "decrypts", None, String::new()))
            }
            Action::Inject {
                sign_with,
                victim,
                victim_key,
                func,
                data,
                input,
                input_width,
                attributes,
                ..
            } => {
                let victim = victim.as_deref().map(|v| (v, victim_key.as_str()));
                self.inject(
                    i,
                    sign_with,
                    victim,
                    *func,
                    data,
                    to_bits(*input, *input_width),
                    attributes,
                )
            }
            Action::Replay { seq, .. } => {
                self.adversary(i, &Capability::Replay)?;
                let (from, to, bytes) = match self.bus.captured(*seq) {
                    Some((f, t, b)) => (f.to_string(), t.to_string(), b.to_vec()),
                    None => {
                        return Err(ScenarioError::Step {
                            step: i,
                            message: format!("no envelope #{seq}"),
                        })
                    }
                };
                if to != self.server.id {
                    return Err(ScenarioError::Step {
                        step: i,
                        message: format!("envelope #{seq} was not sent to the server"),
                    });
                }
                let delivered = self
                    .bus
                    .deliver(&from, &to, bytes, DeliveryStatus::Replayed);
                let r = self
                    .server
                    .handle(&from, &delivered, &mut self.bus)
                    .map(|reply| {
                        let sid = self.server.id.clone();
                        self.bus.transmit(&sid, &from, reply);
                    });
                Ok((outcome_of(r), "ok", None, String::new()))
            }
            Action::ReadServer { .. } => {
                let config = self
                    .adversary
                    .as_ref()
                    .map(|a| a.config.clone())
                    .unwrap_or_default();
                let report = LeakageReport::scan(&self.server.visible_state(), &config);
                let outcome = if report.is_empty() {
                    "empty_report"
                } else if report.ciphertext_only() {
                    "ciphertext_only"
                } else {
                    "leak"
                };
                Ok((outcome.into(), "ciphertext_only", None, report.to_string()))
            }
        }
    }

    fn require_admin(&self, step: usize) -> Result<String, ScenarioError> {
        self.admin.clone().ok_or_else(|| ScenarioError::Step {
            step,
            message: "scenario has no administrator".into(),
        })
    }

    /// Mallory crafts and sends an operation request herself. Her best
    /// decryption of any reply uses the keys she holds and is compared with
    /// the true result.
    #[allow(clippy::too_many_arguments)]
    fn inject(
        &mut self,
        i: usize,
        sign_with: &str,
        victim: Option<(&str, &str)>,
        func: u64,
        data: &str,
        input: Vec<bool>,
        attributes: &[AttrSpec],
    ) -> Result<(String, &'static str, Option<String>, String), ScenarioError> {
        let adv = self.adversary(i, &Capability::InjectRequest)?.clone();
        let own_eval = keygen(self.scheme, self.seed(adv.eval_seed));
        let shared = self.server_side_pair();
        let eval = if adv.config.has(&Capability::StealEvalSk) {
            shared.clone()
        } else {
            // the evaluation public key is public; the secret is her own
            EvalKeyPair {
                public: shared.public.clone(),
                secret: own_eval.secret,
            }
        };
        let own_auth = auth_keygen(&adv.id, self.seed(adv.auth_seed));
        let signer = match sign_with {
            "own" => Some(own_auth.clone()),
            "none" => None,
            "stolen" => {
                let (v, which) = victim.ok_or_else(|| ScenarioError::Step {
                    step: i,
                    message: "`stolen` needs a victim".into(),
                })?;
                if !adv.config.steals_auth_of(v) {
                    return Err(ScenarioError::Step {
                        step: i,
                        message: format!("adversary has not stolen {v}'s key"),
                    });
                }
                match which {
                    "current" => Some(self.users[v].auth().clone()),
                    "previous" => match self.retired_auth.get(v) {
                        Some(k) => Some(k.clone()),
                        None => {
                            return Err(ScenarioError::Step {
                                step: i,
                                message: format!("{v} never rotated"),
                            })
                        }
                    },
                    other => {
                        return Err(ScenarioError::Step {
                            step: i,
                            message: format!("unknown victim_key `{other}`"),
                        })
                    }
                }
            }
            other => {
                return Err(ScenarioError::Step {
                    step: i,
                    message: format!("unknown sign_with `{other}`"),
                })
            }
        };
        let mut mallory = UserAgent::with_keys(
            &adv.id,
            Role::Partner,
            own_auth,
            eval,
            self.seed(adv.auth_seed),
        );
        let (_, h) = self.data(data);
        let msg = if self.mode == ServerMode::Mcsp {
            mcsp_request(
                &mut mallory,
                FuncId(func),
                h,
                &input,
                &attr_values(attributes)?,
            )
        } else {
            op_request(&mut mallory, FuncId(func), h, &input)
        };
        self.bus.record_step(&adv.id, "inject", msg.kind());
        let sid = self.server.id.clone();
        let delivered = self.bus.deliver(
            &adv.id,
            &sid,
            frame(&msg, signer.as_ref()),
            DeliveryStatus::Injected,
        );
        let reply = match self.server.handle(&adv.id, &delivered, &mut self.bus) {
            Ok(r) => r,
            Err(e) => {
                return Ok((
                    e.outcome().to_string(),
                    "SignatureRejected",
                    None,
                    e.to_string(),
                ))
            }
        };
        let received = self.bus.transmit(&sid, &adv.id, reply);
        let outputs =
            match unframe(&received).and_then(|f| Message::decode(&f.payload, &self.scheme)) {
                Ok(Message::OpResponse { outputs, .. }) => outputs,
                Ok(other) => {
                    return Ok((
                        format!("unexpected {}", other.kind()),
                        "SignatureRejected",
                        None,
                        String::new(),
                    ))
                }
                Err(e) => {
                    return Ok((
                        e.outcome().to_string(),
                        "SignatureRejected",
                        None,
                        e.to_string(),
                    ))
                }
            };
        let truth = decrypt_bits(&shared.secret, &outputs).map_err(|e| ScenarioError::Step {
            step: i,
            message: e.to_string(),
        })?;
        let best: Vec<bool> = outputs
            .iter()
            .map(|c| mallory.eval_secret().decrypt_unchecked(c))
            .collect();
        let wrong = truth.iter().zip(&best).filter(|(a, b)| a != b).count();
        let outcome = if wrong > 0 {
            "accepted-but-undecryptable"
        } else {
            "accepted-decryptable"
        };
        let detail = format!("{wrong} of {} bits wrong", truth.len());
        Ok((
            outcome.into(),
            "SignatureRejected",
            Some(bits_string(&best)),
            detail,
        ))
    }

    /// The evaluation pair matching the server's current public key.
    fn server_side_pair(&self) -> EvalKeyPair {
        let pk = self.server.eval_pk();
        self.users
            .values()
            .map(UserAgent::eval_pair)
            .find(|p| &p.public == pk)
            .cloned()
            .expect("some principal holds the shared evaluation pair")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn base_spec(protocol: &str) -> ScenarioSpec {
        serde_json::from_str(&format!(
            r#"{{
              "name": "t", "protocol": "{protocol}", "backend": "clear",
              "principals": [
                {{"id": "alice", "role": "administrator", "auth_seed": 1}},
                {{"id": "bob", "auth_seed": 2}}
              ],
              "keys": {{"eval_seed": 40}},
              "functions": [
                {{"id": 0, "builtin": "adder", "width": 2}},
                {{"id": 1, "builtin": "equality", "width": 2}}
              ],
              "data": [{{"name": "d", "owner": "alice", "value": 3, "width": 2,
                         "attributes": []}}],
              "script": []
            }}"#
        ))
        .unwrap()
    }

    fn run(spec: &ScenarioSpec) -> ScenarioReport {
        run_scenario(spec, Path::new("."), &RunOptions::default()).unwrap()
    }

    fn action(json: &str) -> Action {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn happy_mssp_and_empty_script() {
        let mut spec = base_spec("mssp");
        let report = run(&spec);
        assert!(report.results.is_empty());
        assert_eq!(report.transcript.phase("script").count(), 0);
        assert!(report.transcript.phase("setup").count() > 0);

        spec.script.push(action(
            r#"{"action":"run","user":"bob","func":0,"data":"d","input":2,"input_width":2}"#,
        ));
        let report = run(&spec);
        assert!(report.passed(), "{:?}", report.summary_lines());
        assert_eq!(report.results[0].output.as_deref(), Some("101"));
        assert!(report.transcript.phase("script").all(|e| !matches!(e, super::super::Entry::Envelope { status, .. } if *status != DeliveryStatus::Delivered)));
    }

    #[test]
    fn unknown_principal_is_a_scenario_error() {
        let mut spec = base_spec("mssp");
        spec.script.push(action(
            r#"{"action":"run","user":"zed","func":0,"data":"d"}"#,
        ));
        let err = run_scenario(&spec, Path::new("."), &RunOptions::default()).unwrap_err();
        assert_eq!(err.step(), Some(0));
    }

    #[test]
    fn expectations_decide_pass_and_fail() {
        let mut spec = base_spec("mssp");
        spec.script.push(action(
            r#"{"action":"run","user":"bob","func":7,"data":"d","expect":"UnknownFunc"}"#,
        ));
        spec.script.push(action(
            r#"{"action":"run","user":"bob","func":7,"data":"d"}"#,
        ));
        let report = run(&spec);
        assert!(report.results[0].pass);
        assert!(!report.results[1].pass);
        assert!(report.results[1].is_rejection());
        assert!(report.summary_lines()[1].starts_with("FAIL"));
    }

    #[test]
    fn capabilities_are_enforced() {
        let mut spec = base_spec("mssp");
        spec.script.push(action(
            r#"{"action":"inject","sign_with":"own","func":0,"data":"d"}"#,
        ));
        assert!(run_scenario(&spec, Path::new("."), &RunOptions::default()).is_err());
        spec.script[0] = action(r#"{"action":"read_server"}"#);
        let report = run(&spec);
        assert_eq!(report.results[0].outcome, "empty_report");
    }

    #[test]
    fn replay_is_accepted() {
        let mut spec = base_spec("mssp");
        spec.adversary = serde_json::from_str(r#"{"capabilities":["replay"]}"#).unwrap();
        let seq = run(&spec)
            .transcript
            .entries
            .iter()
            .find_map(|e| match e {
                super::super::Entry::Envelope { seq, receiver, .. } if receiver == "sally" => {
                    Some(*seq)
                }
                _ => None,
            })
            .unwrap();
        spec.script
            .push(action(&format!(r#"{{"action":"replay","seq":{seq}}}"#)));
        let report = run(&spec);
        assert!(report.passed(), "{:?}", report.summary_lines());
        assert!(report
            .transcript
            .to_jsonl()
            .contains("\"status\":\"replayed\""));
    }

    #[test]
    fn same_seeds_same_bytes() {
        let mut spec = base_spec("mssp");
        spec.script.push(action(
            r#"{"action":"run","user":"bob","func":0,"data":"d","input":1,"input_width":2}"#,
        ));
        let a = run(&spec);
        let b = run(&spec);
        assert_eq!(a.transcript.to_jsonl(), b.transcript.to_jsonl());
        assert_eq!(a.outputs_json(), b.outputs_json());
        let shifted = run_scenario(
            &spec,
            Path::new("."),
            &RunOptions {
                seed_offset: 5,
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert_ne!(a.transcript.to_jsonl(), shifted.transcript.to_jsonl());
    }
}
