// SPDX-License-Identifier: Apache-2.0

use super::agents::{ServerAgent, UserAgent};
use super::message::Message;
use super::{Channel, ProtocolError};
use crate::abac::{encrypt_attributes, AttributeValue};
use crate::cloudserver::{FuncId, Handle};
use crate::fhe::Ciphertext;

/// Result of an MCSP run as the requester sees it after decryption.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum McspOutcome {
    Granted(Vec<bool>),
    /// Leading validity bit decrypted to 0; every gated bit is 0 too.
    Denied,
}

/// Sends `msg` from `user` to `server` and returns the decoded reply.
///
/// With `signed`, the request is signed and the reply must carry a valid
/// server signature.
pub fn exchange(
    user: &mut UserAgent,
    server: &mut ServerAgent,
    chan: &mut dyn Channel,
    msg: &Message,
    signed: bool,
) -> Result<Message, ProtocolError> {
    chan.record_step(
        &user.id,
        if signed { "signAndSend" } else { "send" },
        msg.kind(),
    );
    let bytes = user.seal(msg, signed);
    let delivered = chan.transmit(&user.id, &server.id, bytes);
    let reply = server.handle(&user.id, &delivered, chan)?;
    let received = chan.transmit(&server.id, &user.id, reply);
    user.open(&received, signed, chan)
}

/// Encrypts and stores `bits`, with optional resource attributes.
pub fn upload_data(
    user: &mut UserAgent,
    server: &mut ServerAgent,
    chan: &mut dyn Channel,
    bits: &[bool],
    attributes: &[AttributeValue],
) -> Result<Handle, ProtocolError> {
    let ciphertexts = user.encrypt(bits);
    let seed = user.next_seed();
    let attributes = encrypt_attributes(user.eval_public(), attributes, seed);
    chan.record_step(&user.id, "encrypt", &format!("{} data bits", bits.len()));
    let signed = server.mode().signs();
    match exchange(
        user,
        server,
        chan,
        &Message::UploadData {
            ciphertexts,
            attributes,
        },
        signed,
    )? {
        Message::UploadReceipt { handle } => Ok(handle),
        other => Err(ProtocolError::UnexpectedMessage {
            expected: "UploadReceipt",
            got: other.kind(),
        }),
    }
}

/// An encrypted operation request over `input_bits` and stored `handle`.
pub fn op_request(
    user: &mut UserAgent,
    func: FuncId,
    handle: Handle,
    input_bits: &[bool],
) -> Message {
    let inputs = user.encrypt(input_bits);
    Message::OpRequest {
        func,
        handle,
        inputs,
        attributes: None,
    }
}

/// Like [`op_request`], with encrypted request attributes attached.
pub fn mcsp_request(
    user: &mut UserAgent,
    func: FuncId,
    handle: Handle,
    input_bits: &[bool],
    attributes: &[AttributeValue],
) -> Message {
    let inputs = user.encrypt(input_bits);
    let seed = user.next_seed();
    let attributes = Some(encrypt_attributes(user.eval_public(), attributes, seed));
    Message::OpRequest {
        func,
        handle,
        inputs,
        attributes,
    }
}

fn run_op(
    user: &mut UserAgent,
    server: &mut ServerAgent,
    chan: &mut dyn Channel,
    request: Message,
) -> Result<(Vec<Ciphertext>, bool), ProtocolError> {
    chan.record_step(&user.id, "encrypt", request.kind());
    let signed = server.mode().signs();
    match exchange(user, server, chan, &request, signed)? {
        Message::OpResponse { outputs, gated } => Ok((outputs, gated)),
        other => Err(ProtocolError::UnexpectedMessage {
            expected: "OpResponse",
            got: other.kind(),
        }),
    }
}

fn plain_outputs(
    user: &mut UserAgent,
    server: &mut ServerAgent,
    chan: &mut dyn Channel,
    func: FuncId,
    handle: Handle,
    input_bits: &[bool],
) -> Result<Vec<bool>, ProtocolError> {
    let request = op_request(user, func, handle, input_bits);
    let (outputs, gated) = run_op(user, server, chan, request)?;
    if gated {
        return Err(ProtocolError::Malformed("unexpected gated response".into()));
    }
    let bits = user.decrypt(&outputs)?;
    chan.record_step(&user.id, "decrypt", &format!("{} bits", bits.len()));
    Ok(bits)
}

/// Single-user run: the user's own pair is the evaluation pair. The server
/// evaluates `func` over `input_bits ++ stored data`.
pub fn basic_run(
    user: &mut UserAgent,
    server: &mut ServerAgent,
    chan: &mut dyn Channel,
    func: FuncId,
    handle: Handle,
    input_bits: &[bool],
) -> Result<Vec<bool>, ProtocolError> {
    plain_outputs(user, server, chan, func, handle, input_bits)
}

/// Shared-secret run. Any legible partner can compute over data any other
/// partner uploaded, since all share one evaluation pair.
pub fn mssp_run(
    user: &mut UserAgent,
    server: &mut ServerAgent,
    chan: &mut dyn Channel,
    func: FuncId,
    handle: Handle,
    input_bits: &[bool],
) -> Result<Vec<bool>, ProtocolError> {
    plain_outputs(user, server, chan, func, handle, input_bits)
}

/// Constrained-secret run: the reply is `validity ++ gated outputs`.
pub fn mcsp_run(
    user: &mut UserAgent,
    server: &mut ServerAgent,
    chan: &mut dyn Channel,
    func: FuncId,
    handle: Handle,
    input_bits: &[bool],
    request_attrs: &[AttributeValue],
) -> Result<McspOutcome, ProtocolError> {
    let request = mcsp_request(user, func, handle, input_bits, request_attrs);
    let (outputs, gated) = run_op(user, server, chan, request)?;
    if !gated || outputs.is_empty() {
        return Err(ProtocolError::Malformed("expected a gated response".into()));
    }
    let bits = user.decrypt(&outputs)?;
    chan.record_step(&user.id, "decrypt", &format!("validity {}", bits[0] as u8));
    if bits[0] {
        Ok(McspOutcome::Granted(bits[1..].to_vec()))
    } else {
        Ok(McspOutcome::Denied)
    }
}
