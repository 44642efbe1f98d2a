// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::message::{frame, unframe, BlobRecord, Frame, Message, RotationStrategy};
use super::{Channel, ProtocolError};
use crate::abac::{
    compile_canaccess, fingerprint_subject, gate_output, verify_access, Category,
    EncryptedAttribute, PolicyRuleBase, PolicySchema,
};
use crate::authsig::{auth_keygen, AuthKeyPair, AuthPublicKey};
use crate::circuit::{to_bits, Circuit};
use crate::cloudserver::{FuncId, FunctionRegistry, Handle, PrbStore, ResourceStore, StoredBlob};
use crate::fhe::{
    decrypt_bits, encrypt_bits, evaluate, trivial_bits, Ciphertext, EvalKeyPair, EvalPublicKey,
    EvalSecretKey, FheError,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Administrator,
    Partner,
}

/// A client. Holds its own signing pair and the full evaluation pair.
#[derive(Clone, Debug)]
pub struct UserAgent {
    pub id: String,
    pub role: Role,
    auth: AuthKeyPair,
    eval: EvalKeyPair,
    server_key: Option<AuthPublicKey>,
    policy: Option<PolicyRuleBase>,
    directory: BTreeMap<String, AuthPublicKey>,
    rng: ChaCha20Rng,
}

impl UserAgent {
    pub fn new(id: &str, role: Role, auth_seed: u64, eval: EvalKeyPair) -> Self {
        Self::with_keys(id, role, auth_keygen(id, auth_seed), eval, auth_seed)
    }

    /// A user holding arbitrary keys, possibly someone else's signing pair.
    pub fn with_keys(
        id: &str,
        role: Role,
        auth: AuthKeyPair,
        eval: EvalKeyPair,
        seed: u64,
    ) -> Self {
        Self {
            id: id.to_string(),
            role,
            auth,
            eval,
            server_key: None,
            policy: None,
            directory: BTreeMap::new(),
            rng: ChaCha20Rng::seed_from_u64(seed ^ 0x5eed_0fa5_e5e5),
        }
    }

    pub fn is_admin(&self) -> bool {
        self.role == Role::Administrator
    }

    pub fn auth(&self) -> &AuthKeyPair {
        &self.auth
    }

    pub fn auth_public(&self) -> &AuthPublicKey {
        &self.auth.public
    }

    pub fn eval_public(&self) -> &EvalPublicKey {
        &self.eval.public
    }

    pub fn eval_secret(&self) -> &EvalSecretKey {
        &self.eval.secret
    }

    pub fn eval_pair(&self) -> &EvalKeyPair {
        &self.eval
    }

    /// Trusted out-of-band delivery of a (new) shared evaluation pair.
    pub fn install_eval(&mut self, pair: EvalKeyPair) {
        self.eval = pair;
    }

    pub fn trust_server(&mut self, key: AuthPublicKey) {
        self.server_key = Some(key);
    }

    /// Replaces the signing pair with a fresh one; returns the old public key.
    pub fn rotate_auth(&mut self, seed: u64) -> AuthPublicKey {
        let old = std::mem::replace(&mut self.auth, auth_keygen(&self.id, seed));
        old.public
    }

    pub fn policy(&self) -> Option<&PolicyRuleBase> {
        self.policy.as_ref()
    }

    pub fn set_policy(&mut self, prb: PolicyRuleBase) {
        self.policy = Some(prb);
    }

    /// Records a partner's signing key, as the administrator knows it.
    pub fn learn_partner(&mut self, name: &str, key: AuthPublicKey) {
        self.directory.insert(name.to_string(), key);
    }

    pub fn partner(&self, name: &str) -> Option<&AuthPublicKey> {
        self.directory.get(name)
    }

    pub fn next_seed(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn encrypt(&mut self, bits: &[bool]) -> Vec<Ciphertext> {
        let seed = self.next_seed();
        encrypt_bits(&self.eval.public, bits, seed)
    }

    pub fn decrypt(&self, cts: &[Ciphertext]) -> Result<Vec<bool>, ProtocolError> {
        Ok(decrypt_bits(&self.eval.secret, cts)?)
    }

    pub(super) fn seal(&self, msg: &Message, signed: bool) -> Vec<u8> {
        frame(msg, signed.then_some(&self.auth))
    }

    /// Checks the server's signature when one is expected, then decodes.
    pub(super) fn open(
        &self,
        bytes: &[u8],
        signed: bool,
        chan: &mut dyn Channel,
    ) -> Result<Message, ProtocolError> {
        let frame = unframe(bytes)?;
        if signed {
            let ok = match (&frame.signed, &self.server_key) {
                (Some(s), Some(key)) => s.verify_with(key),
                _ => false,
            };
            chan.record_step(
                &self.id,
                "verifyResponse",
                if ok { "ok" } else { "rejected" },
            );
            if !ok {
                return Err(ProtocolError::ServerSignatureInvalid);
            }
        }
        Message::decode(&frame.payload, self.eval.public.scheme())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ServerMode {
    Basic { signed: bool },
    Mssp,
    Mcsp,
}

impl ServerMode {
    pub fn signs(&self) -> bool {
        !matches!(self, ServerMode::Basic { signed: false })
    }
}

impl fmt::Display for ServerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ServerMode::Basic { signed: false } => f.write_str("basic"),
            ServerMode::Basic { signed: true } => f.write_str("basic-signed"),
            ServerMode::Mssp => f.write_str("mssp"),
            ServerMode::Mcsp => f.write_str("mcsp"),
        }
    }
}

/// Classes of data visible in the server's state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldClass {
    Ciphertext,
    AuthPublicKey,
    EvalPublicKey,
    Circuit,
    PolicySchema,
    Metadata,
    /// The server's own signing pair; never a user secret.
    ServerSigningKey,
    Plaintext,
    EvalSecretKey,
}

impl FieldClass {
    pub const ALL: [FieldClass; 9] = [
        FieldClass::Ciphertext,
        FieldClass::AuthPublicKey,
        FieldClass::EvalPublicKey,
        FieldClass::Circuit,
        FieldClass::PolicySchema,
        FieldClass::Metadata,
        FieldClass::ServerSigningKey,
        FieldClass::Plaintext,
        FieldClass::EvalSecretKey,
    ];

    /// True for classes whose presence would be a leak.
    pub fn is_secret(&self) -> bool {
        matches!(self, FieldClass::Plaintext | FieldClass::EvalSecretKey)
    }
}

impl fmt::Display for FieldClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldClass::Ciphertext => "ciphertext",
            FieldClass::AuthPublicKey => "auth_public_key",
            FieldClass::EvalPublicKey => "eval_public_key",
            FieldClass::Circuit => "circuit",
            FieldClass::PolicySchema => "policy_schema",
            FieldClass::Metadata => "metadata",
            FieldClass::ServerSigningKey => "server_signing_key",
            FieldClass::Plaintext => "plaintext",
            FieldClass::EvalSecretKey => "eval_secret_key",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisibleField {
    pub class: FieldClass,
    pub label: String,
    pub content: String,
}

/// Everything an observer of the server's memory can see, field by field.
///
/// The classes are assigned by type: the server holds no type that could
/// produce a plaintext or eval-secret field, so those counts stay zero.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ServerView {
    pub fields: Vec<VisibleField>,
}

impl ServerView {
    fn push(&mut self, class: FieldClass, label: impl Into<String>, content: impl Into<String>) {
        self.fields.push(VisibleField {
            class,
            label: label.into(),
            content: content.into(),
        });
    }

    pub fn count(&self, class: FieldClass) -> usize {
        self.fields.iter().filter(|f| f.class == class).count()
    }

    /// One line per field: `class label content`, newlines flattened.
    pub fn dump_lines(&self) -> Vec<String> {
        self.fields
            .iter()
            .map(|f| {
                format!(
                    "{} {} {}",
                    f.class,
                    f.label,
                    f.content.trim_end().replace('\n', " ")
                )
            })
            .collect()
    }
}

/// The cloud server. Holds the evaluation public key only.
#[derive(Clone, Debug)]
pub struct ServerAgent {
    pub id: String,
    auth: AuthKeyPair,
    mode: ServerMode,
    legible: BTreeMap<String, AuthPublicKey>,
    eval_pk: EvalPublicKey,
    store: ResourceStore,
    registry: FunctionRegistry,
    prbs: Option<PrbStore>,
}

impl ServerAgent {
    pub fn new(id: &str, auth_seed: u64, mode: ServerMode, eval_pk: EvalPublicKey) -> Self {
        Self {
            id: id.to_string(),
            auth: auth_keygen(id, auth_seed),
            mode,
            legible: BTreeMap::new(),
            eval_pk,
            store: ResourceStore::new(),
            registry: FunctionRegistry::new(),
            prbs: None,
        }
    }

    pub fn mode(&self) -> ServerMode {
        self.mode
    }

    pub fn auth_public(&self) -> &AuthPublicKey {
        &self.auth.public
    }

    pub fn eval_pk(&self) -> &EvalPublicKey {
        &self.eval_pk
    }

    pub fn store(&self) -> &ResourceStore {
        &self.store
    }

    pub fn registry(&self) -> &FunctionRegistry {
        &self.registry
    }

    pub fn prb_store(&self) -> Option<&PrbStore> {
        self.prbs.as_ref()
    }

    pub fn admin(&self) -> Option<&str> {
        self.prbs.as_ref().map(PrbStore::admin)
    }

    /// Names the single administrator; only that principal may write policy
    /// or drive key lifecycle operations.
    pub fn set_admin(&mut self, admin: &str) {
        self.prbs = Some(PrbStore::new(admin));
    }

    pub fn register_legible(&mut self, name: &str, key: AuthPublicKey) {
        self.legible.insert(name.to_string(), key);
    }

    pub fn legible(&self, name: &str) -> Option<&AuthPublicKey> {
        self.legible.get(name)
    }

    pub fn register_func(&mut self, id: FuncId, circuit: Circuit) -> Result<(), ProtocolError> {
        Ok(self.registry.register(id, circuit)?)
    }

    /// Processes one incoming frame and returns the response frame.
    ///
    /// A rejected request produces an error and no response; the error is
    /// the server's reason for dropping it.
    pub fn handle(
        &mut self,
        sender: &str,
        bytes: &[u8],
        chan: &mut dyn Channel,
    ) -> Result<Vec<u8>, ProtocolError> {
        let incoming = unframe(bytes)?;
        let principal = self.authenticate(sender, &incoming, chan)?;
        let msg = Message::decode(&incoming.payload, self.eval_pk.scheme())?;
        let reply = match msg {
            Message::UploadData {
                ciphertexts,
                attributes,
            } => self.upload(&principal, ciphertexts, attributes, chan)?,
            Message::OpRequest {
                func,
                handle,
                inputs,
                attributes,
            } => {
                let (outputs, gated) =
                    self.operate(&principal, func, handle, inputs, attributes, chan)?;
                Message::OpResponse { outputs, gated }
            }
            Message::PrbUpload { .. } | Message::PrbUpdate { .. } => {
                self.update_prb(&incoming, chan)?
            }
            Message::RekeyAnnounce {
                principal: who,
                auth_key,
            } => {
                self.require_admin(&principal)?;
                self.legible.insert(who.clone(), auth_key);
                chan.record_step(&self.id, "rekey", &who);
                Message::Ack {
                    detail: format!("auth key for {who} installed"),
                }
            }
            Message::FetchData { handles } => {
                self.require_admin(&principal)?;
                Message::DataBlobs {
                    blobs: self.fetch_blobs(&handles)?,
                }
            }
            Message::ReencryptRequest {
                strategy,
                new_key,
                material,
                blobs,
            } => {
                self.require_admin(&principal)?;
                self.reencrypt(strategy, new_key, &material, blobs, chan)?;
                Message::Ack {
                    detail: format!("store re-encrypted by {strategy}"),
                }
            }
            other => {
                return Err(ProtocolError::UnexpectedMessage {
                    expected: "a request",
                    got: other.kind(),
                });
            }
        };
        chan.record_step(&self.id, "respond", reply.kind());
        Ok(frame(&reply, self.mode.signs().then_some(&self.auth)))
    }

    fn authenticate(
        &self,
        sender: &str,
        frame: &Frame,
        chan: &mut dyn Channel,
    ) -> Result<String, ProtocolError> {
        match &frame.signed {
            Some(s) => {
                let ok = self
                    .legible
                    .get(&s.signer)
                    .is_some_and(|k| s.verify_with(k));
                chan.record_step(
                    &self.id,
                    "verifySig",
                    &format!("{} {}", s.signer, if ok { "ok" } else { "rejected" }),
                );
                if ok {
                    Ok(s.signer.clone())
                } else {
                    Err(ProtocolError::SignatureRejected(s.signer.clone()))
                }
            }
            None if self.mode == (ServerMode::Basic { signed: false }) => Ok(sender.to_string()),
            None => {
                chan.record_step(
                    &self.id,
                    "verifySig",
                    &format!("{sender} unsigned rejected"),
                );
                Err(ProtocolError::SignatureRejected(sender.to_string()))
            }
        }
    }

    fn require_admin(&self, principal: &str) -> Result<(), ProtocolError> {
        match self.admin() {
            Some(admin) if admin == principal => Ok(()),
            _ => Err(ProtocolError::NotAdministrator(principal.to_string())),
        }
    }

    fn upload(
        &mut self,
        principal: &str,
        ciphertexts: Vec<Ciphertext>,
        attributes: Vec<EncryptedAttribute>,
        chan: &mut dyn Channel,
    ) -> Result<Message, ProtocolError> {
        check_key_for(&self.eval_pk, &ciphertexts)?;
        if !attributes.is_empty() && self.mode != ServerMode::Mcsp {
            return Err(ProtocolError::Malformed(
                "resource attributes are only used under MCSP".into(),
            ));
        }
        let handle = self.store.store(principal, ciphertexts, attributes)?;
        chan.record_step(&self.id, "storeData", &handle.to_string());
        Ok(Message::UploadReceipt { handle })
    }

    fn operate(
        &mut self,
        principal: &str,
        func: FuncId,
        handle: Handle,
        inputs: Vec<Ciphertext>,
        attributes: Option<Vec<EncryptedAttribute>>,
        chan: &mut dyn Channel,
    ) -> Result<(Vec<Ciphertext>, bool), ProtocolError> {
        let circuit = match self.registry.lookup(func) {
            Ok(c) => c.clone(),
            Err(e) => {
                chan.record_step(&self.id, "lookupFunc", &format!("{func} unknown"));
                return Err(e.into());
            }
        };
        let blob = self.store.fetch(handle)?.clone();
        let mut args = inputs;
        args.extend(blob.ciphertexts.iter().cloned());
        if self.mode != ServerMode::Mcsp {
            if attributes.is_some() {
                return Err(ProtocolError::Malformed(
                    "attributes are only accepted under MCSP".into(),
                ));
            }
            let outputs = evaluate(&self.eval_pk, &circuit, &args)?;
            chan.record_step(&self.id, "evaluate", &format!("func {func}"));
            return Ok((outputs, false));
        }

        let client = attributes.ok_or_else(|| {
            ProtocolError::Shape("MCSP requests carry encrypted attributes".into())
        })?;
        let decision = self.decide(principal, func, &circuit, &client, &blob, chan)?;
        // denied requests cost the same work; the decision is unreadable here
        let outputs = evaluate(&self.eval_pk, &circuit, &args)?;
        chan.record_step(&self.id, "evaluate", &format!("func {func}"));
        let mut gated = vec![decision.clone()];
        gated.extend(gate_output(&self.eval_pk, &decision, &outputs)?);
        chan.record_step(&self.id, "gate", &format!("{} outputs", outputs.len()));
        Ok((gated, true))
    }

    /// The encrypted access decision for one request.
    fn decide(
        &self,
        principal: &str,
        func: FuncId,
        circuit: &Circuit,
        client: &[EncryptedAttribute],
        blob: &StoredBlob,
        chan: &mut dyn Channel,
    ) -> Result<Ciphertext, ProtocolError> {
        let max = self.eval_pk.max_mult_depth();
        let prb = match self.prbs.as_ref().and_then(PrbStore::current) {
            Some(prb) if func.fits(prb.schema().func_id_width) => prb,
            other => {
                if circuit.mult_depth() + 1 > max {
                    return Err(FheError::DepthExceeded {
                        depth: circuit.mult_depth() + 1,
                        max,
                    }
                    .into());
                }
                let why = if other.is_none() {
                    "no policy"
                } else {
                    "func id outside policy range"
                };
                chan.record_step(&self.id, "verifyAccess", why);
                return Ok(trivial_bits(&self.eval_pk, &[false]).remove(0));
            }
        };
        let schema = prb.schema();
        let canaccess = compile_canaccess(schema, prb.rule_count())?;
        let depth = canaccess.mult_depth().max(circuit.mult_depth()) + 1;
        if depth > max {
            return Err(FheError::DepthExceeded { depth, max }.into());
        }
        let attrs = self.bind_attributes(principal, client, blob, schema)?;
        let func_bits = trivial_bits(&self.eval_pk, &to_bits(func.0, schema.func_id_width));
        let decision = verify_access(&self.eval_pk, &canaccess, &attrs, &func_bits, prb)?;
        chan.record_step(
            &self.id,
            "verifyAccess",
            &format!("{} rules", prb.rule_count()),
        );
        Ok(decision)
    }

    /// Request attributes as the server will use them. The identity comes
    /// from the verified signer and resource attributes from the stored
    /// blob; only the remaining attributes are taken from the client.
    fn bind_attributes(
        &self,
        principal: &str,
        client: &[EncryptedAttribute],
        blob: &StoredBlob,
        schema: &PolicySchema,
    ) -> Result<Vec<EncryptedAttribute>, ProtocolError> {
        if let Some(extra) = client.iter().find(|a| schema.attribute(&a.name).is_none()) {
            return Err(ProtocolError::Shape(format!(
                "attribute `{}` is not in the policy schema",
                extra.name
            )));
        }
        let mut bound = Vec::with_capacity(schema.attributes.len());
        for def in &schema.attributes {
            let attr = if schema.identity_attribute.as_deref() == Some(def.name.as_str()) {
                let key = self
                    .legible
                    .get(principal)
                    .ok_or_else(|| ProtocolError::UnknownPrincipal(principal.into()))?;
                let fp = fingerprint_subject(key, &def.name, def.width)?;
                EncryptedAttribute {
                    name: def.name.clone(),
                    category: Category::Subject,
                    ciphertexts: trivial_bits(&self.eval_pk, &fp.bits),
                }
            } else if def.category == Category::Resource {
                blob.attribute(&def.name).cloned().ok_or_else(|| {
                    ProtocolError::Shape(format!("resource has no attribute `{}`", def.name))
                })?
            } else {
                client
                    .iter()
                    .find(|a| a.name == def.name)
                    .cloned()
                    .ok_or_else(|| {
                        ProtocolError::Shape(format!("request is missing attribute `{}`", def.name))
                    })?
            };
            bound.push(attr);
        }
        Ok(bound)
    }

    fn update_prb(
        &mut self,
        frame: &Frame,
        chan: &mut dyn Channel,
    ) -> Result<Message, ProtocolError> {
        let signed = frame
            .signed
            .as_ref()
            .ok_or_else(|| ProtocolError::SignatureRejected("unsigned".into()))?;
        let prbs = self
            .prbs
            .as_mut()
            .ok_or_else(|| ProtocolError::NotAdministrator(signed.signer.clone()))?;
        let result = prbs.update_prb(signed, self.legible.get(&signed.signer), &self.eval_pk);
        match result {
            Ok(prb) => {
                let detail = format!("{} rules", prb.rule_count());
                chan.record_step(&self.id, "updatePrb", &detail);
                Ok(Message::Ack {
                    detail: format!("policy installed, {detail}"),
                })
            }
            Err(e) => {
                chan.record_step(&self.id, "updatePrb", "rejected");
                Err(e.into())
            }
        }
    }

    fn fetch_blobs(&self, handles: &[Handle]) -> Result<Vec<BlobRecord>, ProtocolError> {
        let wanted: Vec<Handle> = if handles.is_empty() {
            self.store.handles().collect()
        } else {
            handles.to_vec()
        };
        wanted
            .into_iter()
            .map(|h| {
                let blob = self.store.fetch(h)?;
                Ok(BlobRecord {
                    handle: h,
                    ciphertexts: blob.ciphertexts.clone(),
                    attributes: blob.attributes.clone(),
                })
            })
            .collect()
    }

    /// Moves every stored blob to `new_key`. Nothing changes unless every
    /// blob converts.
    fn reencrypt(
        &mut self,
        strategy: RotationStrategy,
        new_key: EvalPublicKey,
        material: &[Ciphertext],
        blobs: Vec<BlobRecord>,
        chan: &mut dyn Channel,
    ) -> Result<(), ProtocolError> {
        let mut next = self.store.clone();
        match strategy {
            RotationStrategy::Oracle => {
                let supplied: BTreeSet<Handle> = blobs.iter().map(|b| b.handle).collect();
                let stored: BTreeSet<Handle> = self.store.handles().collect();
                if supplied != stored || supplied.len() != blobs.len() {
                    return Err(ProtocolError::Shape(
                        "re-encryption must replace every stored blob exactly once".into(),
                    ));
                }
                for b in blobs {
                    check_key_for(&new_key, &b.ciphertexts)?;
                    next.replace(b.handle, b.ciphertexts, b.attributes)?;
                }
            }
            RotationStrategy::Homomorphic => {
                if !blobs.is_empty() {
                    return Err(ProtocolError::Malformed(
                        "homomorphic rotation carries no blobs".into(),
                    ));
                }
                check_key_for(&new_key, material)?;
                let switch = |ct: &Ciphertext| -> Result<Ciphertext, ProtocolError> {
                    let circuit = self
                        .eval_pk
                        .scheme()
                        .backend()
                        .decryption_circuit(&self.eval_pk, ct)?;
                    Ok(evaluate(&new_key, &circuit, material)?.remove(0))
                };
                for (h, blob) in self.store.iter() {
                    let cts = blob
                        .ciphertexts
                        .iter()
                        .map(switch)
                        .collect::<Result<Vec<_>, _>>()?;
                    let attrs = blob
                        .attributes
                        .iter()
                        .map(|a| {
                            let ciphertexts = a
                                .ciphertexts
                                .iter()
                                .map(switch)
                                .collect::<Result<Vec<_>, _>>()?;
                            Ok(EncryptedAttribute {
                                name: a.name.clone(),
                                category: a.category,
                                ciphertexts,
                            })
                        })
                        .collect::<Result<Vec<_>, ProtocolError>>()?;
                    next.replace(h, cts, attrs)?;
                }
            }
        }
        self.store = next;
        chan.record_step(
            &self.id,
            "reencrypt",
            &format!("{strategy}, {} blobs", self.store.len()),
        );
        self.eval_pk = new_key;
        Ok(())
    }

    /// Field-by-field listing of the server's state.
    pub fn visible_state(&self) -> ServerView {
        let mut v = ServerView::default();
        v.push(FieldClass::Metadata, "mode", self.mode.to_string());
        v.push(
            FieldClass::ServerSigningKey,
            "server.auth_public",
            self.auth.public.to_hex(),
        );
        v.push(
            FieldClass::EvalPublicKey,
            "eval_pk",
            self.eval_pk.fingerprint().to_string(),
        );
        for (name, key) in &self.legible {
            v.push(
                FieldClass::AuthPublicKey,
                format!("legible.{name}"),
                key.to_hex(),
            );
        }
        for (id, circuit) in self.registry.iter() {
            v.push(
                FieldClass::Circuit,
                format!("func.{id}"),
                circuit.to_netlist(),
            );
        }
        for (h, blob) in self.store.iter() {
            v.push(
                FieldClass::Metadata,
                format!("blob{h}.owner"),
                blob.owner.clone(),
            );
            for (i, ct) in blob.ciphertexts.iter().enumerate() {
                v.push(
                    FieldClass::Ciphertext,
                    format!("blob{h}.data[{i}]"),
                    ct.to_text(),
                );
            }
            for a in &blob.attributes {
                v.push(
                    FieldClass::Metadata,
                    format!("blob{h}.attr.{}", a.name),
                    a.category.to_string(),
                );
                for (i, ct) in a.ciphertexts.iter().enumerate() {
                    v.push(
                        FieldClass::Ciphertext,
                        format!("blob{h}.attr.{}[{i}]", a.name),
                        ct.to_text(),
                    );
                }
            }
        }
        if let Some(prbs) = &self.prbs {
            v.push(FieldClass::Metadata, "prb.admin", prbs.admin());
            v.push(
                FieldClass::Metadata,
                "prb.audit",
                prbs.audit().len().to_string(),
            );
            if let Some(prb) = prbs.current() {
                let mut schema = String::new();
                for a in &prb.schema().attributes {
                    schema.push_str(&format!("{} {} {}; ", a.name, a.width, a.category));
                }
                schema.push_str(&format!("funcs {}", prb.schema().func_id_width));
                v.push(FieldClass::PolicySchema, "prb.schema", schema);
                v.push(
                    FieldClass::Metadata,
                    "prb.rules",
                    prb.rule_count().to_string(),
                );
                for (r, rule) in prb.rules().iter().enumerate() {
                    for (i, ct) in rule.iter().enumerate() {
                        v.push(
                            FieldClass::Ciphertext,
                            format!("prb.rule[{r}][{i}]"),
                            ct.to_text(),
                        );
                    }
                }
            }
        }
        v
    }
}

fn check_key_for(pk: &EvalPublicKey, cts: &[Ciphertext]) -> Result<(), ProtocolError> {
    let expected = pk.fingerprint();
    match cts.iter().find(|c| c.key_fingerprint() != expected) {
        Some(c) => Err(FheError::KeyMismatch {
            expected,
            found: c.key_fingerprint(),
        }
        .into()),
        None => Ok(()),
    }
}
