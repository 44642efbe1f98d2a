// SPDX-License-Identifier: Apache-2.0

//! Protocol messages and their wire framing.
//!
//! A message is a canonical envelope (tag, field count, length-prefixed
//! fields). On the wire it is prefixed by [`PROTOCOL_VERSION`] and, when the
//! flow calls for it, wrapped in a [`SignedMessage`] whose payload is exactly
//! the message envelope.

use std::fmt;
use std::str::FromStr;

use super::ProtocolError;
use crate::abac::{Category, EncryptedAttribute};
use crate::authsig::{
    decode_envelope, encode_envelope, AuthKeyPair, AuthPublicKey, SignedMessage, SIGNED_TAG,
};
use crate::cloudserver::{FuncId, Handle};
use crate::fhe::{parse_ciphertexts_any, write_ciphertexts, Ciphertext, EvalPublicKey, Scheme};

pub const PROTOCOL_VERSION: u8 = 1;

/// How stored data moves to a new evaluation key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RotationStrategy {
    /// A trusted client decrypts under the old key and re-encrypts.
    Oracle,
    /// The server evaluates the old key's decryption circuit under the new
    /// key, fed with the old secret's bits encrypted under the new key.
    Homomorphic,
}

impl fmt::Display for RotationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RotationStrategy::Oracle => "oracle_rotation",
            RotationStrategy::Homomorphic => "homomorphic_rotation",
        })
    }
}

impl FromStr for RotationStrategy {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle_rotation" | "oracle" => Ok(RotationStrategy::Oracle),
            "homomorphic_rotation" | "homomorphic" => Ok(RotationStrategy::Homomorphic),
            other => Err(ProtocolError::Malformed(format!(
                "unknown rotation strategy `{other}`"
            ))),
        }
    }
}

/// One stored resource as carried in re-encryption traffic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlobRecord {
    pub handle: Handle,
    pub ciphertexts: Vec<Ciphertext>,
    pub attributes: Vec<EncryptedAttribute>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    UploadData {
        ciphertexts: Vec<Ciphertext>,
        attributes: Vec<EncryptedAttribute>,
    },
    UploadReceipt {
        handle: Handle,
    },
    OpRequest {
        func: FuncId,
        handle: Handle,
        inputs: Vec<Ciphertext>,
        attributes: Option<Vec<EncryptedAttribute>>,
    },
    /// With `gated`, the first output is the encrypted validity bit.
    OpResponse {
        outputs: Vec<Ciphertext>,
        gated: bool,
    },
    PrbUpload {
        prb: String,
    },
    PrbUpdate {
        prb: String,
    },
    RekeyAnnounce {
        principal: String,
        auth_key: AuthPublicKey,
    },
    ReencryptRequest {
        strategy: RotationStrategy,
        new_key: EvalPublicKey,
        material: Vec<Ciphertext>,
        blobs: Vec<BlobRecord>,
    },
    /// Empty `handles` asks for every stored blob.
    FetchData {
        handles: Vec<Handle>,
    },
    DataBlobs {
        blobs: Vec<BlobRecord>,
    },
    Ack {
        detail: String,
    },
}

const TAGS: [(u8, &str); 11] = [
    (1, "UploadData"),
    (2, "UploadReceipt"),
    (3, "OpRequest"),
    (4, "OpResponse"),
    (5, "PrbUpload"),
    (6, "PrbUpdate"),
    (7, "RekeyAnnounce"),
    (8, "ReencryptRequest"),
    (9, "FetchData"),
    (10, "DataBlobs"),
    (11, "Ack"),
];

/// Name of the message type with envelope tag `tag`.
pub fn kind_name(tag: u8) -> &'static str {
    TAGS.iter()
        .find(|(t, _)| *t == tag)
        .map_or("Unknown", |(_, n)| n)
}

// Field writers and readers. Ciphertext lists travel in their text form.

struct Fields(Vec<Vec<u8>>);

impl Fields {
    fn u64(&mut self, v: u64) {
        self.0.push(v.to_be_bytes().to_vec());
    }
    fn text(&mut self, s: &str) {
        self.0.push(s.as_bytes().to_vec());
    }
    fn cts(&mut self, cts: &[Ciphertext]) {
        self.text(&write_ciphertexts(cts));
    }
    fn attrs(&mut self, attrs: &[EncryptedAttribute]) {
        self.u64(attrs.len() as u64);
        for a in attrs {
            self.text(&a.name);
            self.text(&a.category.to_string());
            self.cts(&a.ciphertexts);
        }
    }
    fn blobs(&mut self, blobs: &[BlobRecord]) {
        self.u64(blobs.len() as u64);
        for b in blobs {
            self.u64(b.handle.0);
            self.cts(&b.ciphertexts);
            self.attrs(&b.attributes);
        }
    }
}

struct Reader<'a> {
    fields: std::vec::IntoIter<Vec<u8>>,
    scheme: &'a Scheme,
}

fn malformed(msg: impl Into<String>) -> ProtocolError {
    ProtocolError::Malformed(msg.into())
}

impl Reader<'_> {
    fn next(&mut self) -> Result<Vec<u8>, ProtocolError> {
        self.fields
            .next()
            .ok_or_else(|| malformed("missing message field"))
    }
    fn u64(&mut self) -> Result<u64, ProtocolError> {
        let f = self.next()?;
        let bytes: [u8; 8] = f
            .as_slice()
            .try_into()
            .map_err(|_| malformed("integer field must be 8 bytes"))?;
        Ok(u64::from_be_bytes(bytes))
    }
    fn count(&mut self) -> Result<usize, ProtocolError> {
        let n = self.u64()?;
        // every counted item takes at least one more field
        if n as usize > self.fields.len() {
            return Err(malformed("count exceeds remaining fields"));
        }
        Ok(n as usize)
    }
    fn text(&mut self) -> Result<String, ProtocolError> {
        String::from_utf8(self.next()?).map_err(|_| malformed("text field is not UTF-8"))
    }
    fn cts(&mut self) -> Result<Vec<Ciphertext>, ProtocolError> {
        Ok(parse_ciphertexts_any(&self.text()?, self.scheme)?)
    }
    fn attrs(&mut self) -> Result<Vec<EncryptedAttribute>, ProtocolError> {
        let n = self.count()?;
        (0..n)
            .map(|_| {
                let name = self.text()?;
                let category: Category = self
                    .text()?
                    .parse()
                    .map_err(|e| malformed(format!("{e}")))?;
                Ok(EncryptedAttribute {
                    name,
                    category,
                    ciphertexts: self.cts()?,
                })
            })
            .collect()
    }
    fn blobs(&mut self) -> Result<Vec<BlobRecord>, ProtocolError> {
        let n = self.count()?;
        (0..n)
            .map(|_| {
                Ok(BlobRecord {
                    handle: Handle(self.u64()?),
                    ciphertexts: self.cts()?,
                    attributes: self.attrs()?,
                })
            })
            .collect()
    }
    fn finish(mut self) -> Result<(), ProtocolError> {
        match self.fields.next() {
            None => Ok(()),
            Some(_) => Err(malformed("trailing message fields")),
        }
    }
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::UploadData { .. } => 1,
            Message::UploadReceipt { .. } => 2,
            Message::OpRequest { .. } => 3,
            Message::OpResponse { .. } => 4,
            Message::PrbUpload { .. } => 5,
            Message::PrbUpdate { .. } => 6,
            Message::RekeyAnnounce { .. } => 7,
            Message::ReencryptRequest { .. } => 8,
            Message::FetchData { .. } => 9,
            Message::DataBlobs { .. } => 10,
            Message::Ack { .. } => 11,
        }
    }

    pub fn kind(&self) -> &'static str {
        kind_name(self.tag())
    }

    /// Canonical envelope bytes; this is what gets signed.
    pub fn encode(&self) -> Vec<u8> {
        let mut f = Fields(Vec::new());
        match self {
            Message::UploadData {
                ciphertexts,
                attributes,
            } => {
                f.cts(ciphertexts);
                f.attrs(attributes);
            }
            Message::UploadReceipt { handle } => f.u64(handle.0),
            Message::OpRequest {
                func,
                handle,
                inputs,
                attributes,
            } => {
                f.u64(func.0);
                f.u64(handle.0);
                f.cts(inputs);
                match attributes {
                    Some(a) => {
                        f.u64(1);
                        f.attrs(a);
                    }
                    None => f.u64(0),
                }
            }
            Message::OpResponse { outputs, gated } => {
                f.cts(outputs);
                f.u64(*gated as u64);
            }
            Message::PrbUpload { prb } | Message::PrbUpdate { prb } => f.text(prb),
            Message::RekeyAnnounce {
                principal,
                auth_key,
            } => {
                f.text(principal);
                f.0.push(auth_key.to_bytes());
            }
            Message::ReencryptRequest {
                strategy,
                new_key,
                material,
                blobs,
            } => {
                f.text(&strategy.to_string());
                f.text(&new_key.to_text());
                f.cts(material);
                f.blobs(blobs);
            }
            Message::FetchData { handles } => {
                f.u64(handles.len() as u64);
                handles.iter().for_each(|h| f.u64(h.0));
            }
            Message::DataBlobs { blobs } => f.blobs(blobs),
            Message::Ack { detail } => f.text(detail),
        }
        let refs: Vec<&[u8]> = f.0.iter().map(Vec::as_slice).collect();
        encode_envelope(self.tag(), &refs)
    }

    /// Decodes an envelope. Ciphertexts are read under `scheme`; their key
    /// fingerprints are kept as sent and checked when they are used.
    pub fn decode(bytes: &[u8], scheme: &Scheme) -> Result<Self, ProtocolError> {
        let (tag, fields) = decode_envelope(bytes).map_err(|e| malformed(e.to_string()))?;
        let mut r = Reader {
            fields: fields.into_iter(),
            scheme,
        };
        let msg = match tag {
            1 => Message::UploadData {
                ciphertexts: r.cts()?,
                attributes: r.attrs()?,
            },
            2 => Message::UploadReceipt {
                handle: Handle(r.u64()?),
            },
            3 => {
                let func = FuncId(r.u64()?);
                let handle = Handle(r.u64()?);
                let inputs = r.cts()?;
                let attributes = match r.u64()? {
                    0 => None,
                    1 => Some(r.attrs()?),
                    _ => return Err(malformed("bad attribute flag")),
                };
                Message::OpRequest {
                    func,
                    handle,
                    inputs,
                    attributes,
                }
            }
            4 => {
                let outputs = r.cts()?;
                let gated = match r.u64()? {
                    0 => false,
                    1 => true,
                    _ => return Err(malformed("bad gated flag")),
                };
                Message::OpResponse { outputs, gated }
            }
            5 => Message::PrbUpload { prb: r.text()? },
            6 => Message::PrbUpdate { prb: r.text()? },
            7 => {
                let principal = r.text()?;
                let auth_key =
                    AuthPublicKey::from_bytes(&r.next()?).map_err(|e| malformed(e.to_string()))?;
                Message::RekeyAnnounce {
                    principal,
                    auth_key,
                }
            }
            8 => {
                let strategy: RotationStrategy = r.text()?.parse()?;
                let new_key = EvalPublicKey::from_text(&r.text()?)?;
                // material and blobs are under the announced key
                let mut inner = Reader {
                    fields: r.fields,
                    scheme: new_key.scheme(),
                };
                let material = inner.cts()?;
                let blobs = inner.blobs()?;
                inner.finish()?;
                return Ok(Message::ReencryptRequest {
                    strategy,
                    new_key,
                    material,
                    blobs,
                });
            }
            9 => {
                let n = r.count()?;
                Message::FetchData {
                    handles: (0..n)
                        .map(|_| r.u64().map(Handle))
                        .collect::<Result<_, _>>()?,
                }
            }
            10 => Message::DataBlobs { blobs: r.blobs()? },
            11 => Message::Ack { detail: r.text()? },
            other => return Err(malformed(format!("unknown message tag {other}"))),
        };
        r.finish()?;
        Ok(msg)
    }
}

/// A received frame: the message envelope plus its signature, if any.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub payload: Vec<u8>,
    pub signed: Option<SignedMessage>,
}

impl Frame {
    /// Message type name, readable without key context.
    pub fn kind(&self) -> &'static str {
        self.payload.first().map_or("Unknown", |&t| kind_name(t))
    }

    pub fn signer(&self) -> Option<&str> {
        self.signed.as_ref().map(|s| s.signer.as_str())
    }
}

/// Wire bytes for `msg`, signed by `signer` when given.
pub fn frame(msg: &Message, signer: Option<&AuthKeyPair>) -> Vec<u8> {
    let payload = msg.encode();
    let mut out = vec![PROTOCOL_VERSION];
    match signer {
        Some(kp) => out.extend(kp.seal(payload).encode()),
        None => out.extend(payload),
    }
    out
}

pub fn unframe(bytes: &[u8]) -> Result<Frame, ProtocolError> {
    match bytes.split_first() {
        Some((&PROTOCOL_VERSION, rest)) => {
            if rest.first() == Some(&SIGNED_TAG) {
                let signed = SignedMessage::decode(rest).map_err(|e| malformed(e.to_string()))?;
                Ok(Frame {
                    payload: signed.payload.clone(),
                    signed: Some(signed),
                })
            } else {
                Ok(Frame {
                    payload: rest.to_vec(),
                    signed: None,
                })
            }
        }
        Some((v, _)) => Err(malformed(format!("unsupported protocol version {v}"))),
        None => Err(malformed("empty frame")),
    }
}
