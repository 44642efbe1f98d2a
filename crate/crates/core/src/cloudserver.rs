// SPDX-License-Identifier: Apache-2.0

//! The server's storage and execution substrate: ciphertext blobs addressed
//! by opaque handles, the registry of evaluable functions, and the encrypted
//! policy store that only the administrator may write.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::abac::{AbacError, Category, EncryptedAttribute, EncryptedPrb};
use crate::authsig::{decode_envelope, AuthPublicKey, SignedMessage};
use crate::circuit::Circuit;
use crate::fhe::{
    parse_ciphertexts, write_ciphertexts, Ciphertext, EvalPublicKey, FheError, KeyFingerprint,
};

/// Identifier of a registered function; encoded little-endian in policies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FuncId(pub u64);

impl FuncId {
    pub fn fits(&self, width: usize) -> bool {
        width >= 64 || self.0 >> width == 0
    }
}

impl fmt::Display for FuncId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Handle(pub u64);

impl fmt::Display for Handle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("unknown resource handle {0}")]
    UnknownHandle(Handle),
    #[error("function id {0} is already registered")]
    DuplicateFuncId(FuncId),
    #[error("unknown function id {0}")]
    UnknownFunc(FuncId),
    #[error("`{0}` is not the administrator")]
    NotAdministrator(String),
    #[error("signature from `{0}` rejected")]
    SignatureRejected(String),
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Fhe(#[from] FheError),
    #[error(transparent)]
    Abac(#[from] AbacError),
}

/// A stored resource: the data bits plus any encrypted resource attributes
/// the owner attached at upload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoredBlob {
    pub owner: String,
    pub key: KeyFingerprint,
    pub ciphertexts: Vec<Ciphertext>,
    pub attributes: Vec<EncryptedAttribute>,
}

impl StoredBlob {
    fn new(
        owner: &str,
        ciphertexts: Vec<Ciphertext>,
        attributes: Vec<EncryptedAttribute>,
    ) -> Result<Self, ServerError> {
        let key = match ciphertexts.first() {
            Some(c) => c.key_fingerprint(),
            None => return Err(ServerError::Malformed("empty blob".into())),
        };
        let all = ciphertexts
            .iter()
            .chain(attributes.iter().flat_map(|a| &a.ciphertexts));
        for c in all {
            if c.key_fingerprint() != key {
                return Err(FheError::KeyMismatch {
                    expected: key,
                    found: c.key_fingerprint(),
                }
                .into());
            }
        }
        if let Some(a) = attributes.iter().find(|a| a.category != Category::Resource) {
            return Err(ServerError::Malformed(format!(
                "blob attribute `{}` is not a resource attribute",
                a.name
            )));
        }
        Ok(Self {
            owner: owner.to_string(),
            key,
            ciphertexts,
            attributes,
        })
    }

    pub fn attribute(&self, name: &str) -> Option<&EncryptedAttribute> {
        self.attributes.iter().find(|a| a.name == name)
    }
}

const INDEX_FILE: &str = "index";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ResourceStore {
    blobs: BTreeMap<Handle, StoredBlob>,
    next: u64,
}

impl ResourceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn store(
        &mut self,
        owner: &str,
        ciphertexts: Vec<Ciphertext>,
        attributes: Vec<EncryptedAttribute>,
    ) -> Result<Handle, ServerError> {
        let blob = StoredBlob::new(owner, ciphertexts, attributes)?;
        let handle = Handle(self.next);
        self.next += 1;
        self.blobs.insert(handle, blob);
        Ok(handle)
    }

    pub fn fetch(&self, handle: Handle) -> Result<&StoredBlob, ServerError> {
        self.blobs
            .get(&handle)
            .ok_or(ServerError::UnknownHandle(handle))
    }

    /// Swaps a blob's ciphertexts, as done by re-encryption.
    pub fn replace(
        &mut self,
        handle: Handle,
        ciphertexts: Vec<Ciphertext>,
        attributes: Vec<EncryptedAttribute>,
    ) -> Result<(), ServerError> {
        let owner = self.fetch(handle)?.owner.clone();
        let blob = StoredBlob::new(&owner, ciphertexts, attributes)?;
        self.blobs.insert(handle, blob);
        Ok(())
    }

    pub fn handles(&self) -> impl Iterator<Item = Handle> + '_ {
        self.blobs.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Handle, &StoredBlob)> {
        self.blobs.iter().map(|(h, b)| (*h, b))
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    /// Writes one `<handle>.ct` file per blob plus an index of
    /// `handle owner fingerprint byte_len` lines. Resource attributes, when
    /// present, go to `<handle>.attrs`.
    pub fn save(&self, dir: &Path) -> Result<(), ServerError> {
        fs::create_dir_all(dir)?;
        let mut index = String::new();
        for (h, blob) in &self.blobs {
            let text = write_ciphertexts(&blob.ciphertexts);
            fs::write(dir.join(format!("{}.ct", h.0)), &text)?;
            if !blob.attributes.is_empty() {
                let mut attrs = String::new();
                for a in &blob.attributes {
                    attrs.push_str(&format!("attribute {} {}\n", a.name, a.category));
                    attrs.push_str(&write_ciphertexts(&a.ciphertexts));
                    attrs.push_str("end\n");
                }
                fs::write(dir.join(format!("{}.attrs", h.0)), attrs)?;
            }
            index.push_str(&format!(
                "{} {} {} {}\n",
                h.0,
                blob.owner,
                blob.key,
                text.len()
            ));
        }
        fs::write(dir.join(INDEX_FILE), index)?;
        Ok(())
    }

    pub fn load(dir: &Path, pk: &EvalPublicKey) -> Result<Self, ServerError> {
        let index = fs::read_to_string(dir.join(INDEX_FILE))?;
        let mut store = Self::new();
        for (i, line) in index.lines().enumerate() {
            let bad = || ServerError::Malformed(format!("index line {}: `{line}`", i + 1));
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [handle, owner, key, len] = parts.as_slice() else {
                return Err(bad());
            };
            let handle = Handle(handle.parse().map_err(|_| bad())?);
            let key: KeyFingerprint = key.parse()?;
            let len: usize = len.parse().map_err(|_| bad())?;
            let text = fs::read_to_string(dir.join(format!("{}.ct", handle.0)))?;
            if text.len() != len {
                return Err(ServerError::Malformed(format!(
                    "blob {handle} is {} bytes, index says {len}",
                    text.len()
                )));
            }
            if key != pk.fingerprint() {
                return Err(FheError::KeyMismatch {
                    expected: pk.fingerprint(),
                    found: key,
                }
                .into());
            }
            let cts = parse_ciphertexts(&text, key, pk.scheme())?;
            let attrs_path = dir.join(format!("{}.attrs", handle.0));
            let attributes = if attrs_path.exists() {
                parse_attributes(&fs::read_to_string(attrs_path)?, key, pk)?
            } else {
                Vec::new()
            };
            store
                .blobs
                .insert(handle, StoredBlob::new(owner, cts, attributes)?);
            store.next = store.next.max(handle.0 + 1);
        }
        Ok(store)
    }
}

fn parse_attributes(
    text: &str,
    key: KeyFingerprint,
    pk: &EvalPublicKey,
) -> Result<Vec<EncryptedAttribute>, ServerError> {
    let mut out = Vec::new();
    let mut lines = text.lines();
    while let Some(header) = lines.next() {
        if header.trim().is_empty() {
            continue;
        }
        let bad = || ServerError::Malformed(format!("bad attribute header `{header}`"));
        let parts: Vec<&str> = header.split_whitespace().collect();
        let ["attribute", name, category] = parts.as_slice() else {
            return Err(bad());
        };
        let category: Category = category.parse()?;
        let body: Vec<&str> = lines.by_ref().take_while(|l| l.trim() != "end").collect();
        let ciphertexts = parse_ciphertexts(&body.join("\n"), key, pk.scheme())?;
        out.push(EncryptedAttribute {
            name: name.to_string(),
            category,
            ciphertexts,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FunctionRegistry {
    funcs: BTreeMap<FuncId, Circuit>,
}

impl FunctionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, id: FuncId, circuit: Circuit) -> Result<(), ServerError> {
        if self.funcs.contains_key(&id) {
            return Err(ServerError::DuplicateFuncId(id));
        }
        self.funcs.insert(id, circuit);
        Ok(())
    }

    pub fn lookup(&self, id: FuncId) -> Result<&Circuit, ServerError> {
        self.funcs.get(&id).ok_or(ServerError::UnknownFunc(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (FuncId, &Circuit)> {
        self.funcs.iter().map(|(id, c)| (*id, c))
    }
}

/// Encrypted policy store. Every accepted update is appended to the audit
/// list, so its length equals the number of successful updates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrbStore {
    admin: String,
    audit: Vec<EncryptedPrb>,
}

impl PrbStore {
    pub fn new(admin: &str) -> Self {
        Self {
            admin: admin.to_string(),
            audit: Vec::new(),
        }
    }

    pub fn admin(&self) -> &str {
        &self.admin
    }

    pub fn current(&self) -> Option<&EncryptedPrb> {
        self.audit.last()
    }

    pub fn audit(&self) -> &[EncryptedPrb] {
        &self.audit
    }

    /// Installs the encrypted PRB carried in field 0 of the signed envelope.
    ///
    /// The signature is checked first against `signer_key`, the key the
    /// server holds for the claimed signer; a valid signature from anyone
    /// but the administrator is still refused.
    pub fn update_prb(
        &mut self,
        signed: &SignedMessage,
        signer_key: Option<&AuthPublicKey>,
        pk: &EvalPublicKey,
    ) -> Result<&EncryptedPrb, ServerError> {
        match signer_key {
            Some(key) if signed.verify_with(key) => {}
            _ => return Err(ServerError::SignatureRejected(signed.signer.clone())),
        }
        if signed.signer != self.admin {
            return Err(ServerError::NotAdministrator(signed.signer.clone()));
        }
        let (_, fields) =
            decode_envelope(&signed.payload).map_err(|e| ServerError::Malformed(e.to_string()))?;
        let text = fields
            .first()
            .and_then(|f| std::str::from_utf8(f).ok())
            .ok_or_else(|| ServerError::Malformed("PRB payload must be UTF-8 text".into()))?;
        let prb = EncryptedPrb::from_text(text, pk)?;
        self.audit.push(prb);
        Ok(self.audit.last().unwrap())
    }
}
