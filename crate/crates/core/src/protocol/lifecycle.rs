// SPDX-License-Identifier: Apache-2.0

//! Policy administration and key lifecycle: installing a rule base,
//! rotating a partner's signing key, revoking a partner, and moving stored
//! data to a new evaluation key.

use super::agents::{ServerAgent, UserAgent};
use super::flows::exchange;
use super::message::{BlobRecord, Message, RotationStrategy};
use super::{Channel, ProtocolError};
use crate::abac::{encrypt_prb, fingerprint_subject, EncryptedAttribute, PolicyRuleBase};
use crate::authsig::AuthPublicKey;
use crate::fhe::{encrypt_bits, EvalKeyPair};

fn expect_ack(reply: Message) -> Result<String, ProtocolError> {
    match reply {
        Message::Ack { detail } => Ok(detail),
        other => Err(ProtocolError::UnexpectedMessage {
            expected: "Ack",
            got: other.kind(),
        }),
    }
}

fn push_policy(
    user: &mut UserAgent,
    server: &mut ServerAgent,
    chan: &mut dyn Channel,
    prb: &PolicyRuleBase,
    initial: bool,
) -> Result<(), ProtocolError> {
    let seed = user.next_seed();
    let text = encrypt_prb(user.eval_public(), prb, seed)?.to_text();
    chan.record_step(
        &user.id,
        "encryptPrb",
        &format!("{} rules", prb.rules.len()),
    );
    let msg = if initial {
        Message::PrbUpload { prb: text }
    } else {
        Message::PrbUpdate { prb: text }
    };
    expect_ack(exchange(user, server, chan, &msg, true)?)?;
    user.set_policy(prb.clone());
    Ok(())
}

/// Encrypts `prb` under the shared key and installs it at the server. The
/// server accepts this only from the administrator.
pub fn upload_prb(
    user: &mut UserAgent,
    server: &mut ServerAgent,
    chan: &mut dyn Channel,
    prb: &PolicyRuleBase,
) -> Result<(), ProtocolError> {
    push_policy(user, server, chan, prb, true)
}

fn identity_bits(
    prb: &PolicyRuleBase,
    key: &AuthPublicKey,
) -> Result<Option<Vec<bool>>, ProtocolError> {
    let Some(name) = &prb.schema.identity_attribute else {
        return Ok(None);
    };
    let width = prb.schema.attribute(name).map_or(0, |a| a.width);
    Ok(Some(fingerprint_subject(key, name, width)?.bits))
}

/// `user` gets a fresh signing pair. The administrator announces it to the
/// server and re-issues every rule naming the old key's fingerprint.
///
/// Returns the updated plaintext rule base, if the administrator has one.
pub fn rotate_auth_key(
    user: &mut UserAgent,
    admin: &mut UserAgent,
    server: &mut ServerAgent,
    chan: &mut dyn Channel,
    new_seed: u64,
) -> Result<Option<PolicyRuleBase>, ProtocolError> {
    let old = user.rotate_auth(new_seed);
    let new = user.auth_public().clone();
    chan.record_step(&user.id, "rotateAuthKey", "new key pair");
    let announce = Message::RekeyAnnounce {
        principal: user.id.clone(),
        auth_key: new.clone(),
    };
    expect_ack(exchange(admin, server, chan, &announce, true)?)?;
    admin.learn_partner(&user.id, new.clone());
    let Some(prb) = admin.policy().cloned() else {
        return Ok(None);
    };
    let (Some(old_fp), Some(new_fp)) = (identity_bits(&prb, &old)?, identity_bits(&prb, &new)?)
    else {
        return Ok(Some(prb));
    };
    let updated = prb.with_identity_replaced(&old_fp, &new_fp);
    push_policy(admin, server, chan, &updated, false)?;
    Ok(Some(updated))
}

/// Drops every rule naming `principal`. Unknown principals are a no-op.
pub fn revoke_user(
    admin: &mut UserAgent,
    server: &mut ServerAgent,
    chan: &mut dyn Channel,
    principal: &str,
) -> Result<Option<PolicyRuleBase>, ProtocolError> {
    let (Some(key), Some(prb)) = (admin.partner(principal).cloned(), admin.policy().cloned())
    else {
        chan.record_step(
            &admin.id,
            "revoke",
            &format!("{principal}: nothing to revoke"),
        );
        return Ok(None);
    };
    let Some(fp) = identity_bits(&prb, &key)? else {
        chan.record_step(
            &admin.id,
            "revoke",
            &format!("{principal}: policy has no identity attribute"),
        );
        return Ok(Some(prb));
    };
    let updated = prb.without_identity(&fp);
    chan.record_step(
        &admin.id,
        "revoke",
        &format!("{principal}: {} rules left", updated.rules.len()),
    );
    push_policy(admin, server, chan, &updated, false)?;
    Ok(Some(updated))
}

/// Moves the server's store to `new_pair`, then hands the pair to the
/// administrator and `partners` and re-uploads the policy under it.
///
/// A failed conversion leaves the server and every agent unchanged.
pub fn reencrypt_data(
    admin: &mut UserAgent,
    partners: &mut [&mut UserAgent],
    server: &mut ServerAgent,
    chan: &mut dyn Channel,
    strategy: RotationStrategy,
    new_pair: EvalKeyPair,
) -> Result<(), ProtocolError> {
    let request = match strategy {
        RotationStrategy::Oracle => {
            let blobs = match exchange(
                admin,
                server,
                chan,
                &Message::FetchData { handles: vec![] },
                true,
            )? {
                Message::DataBlobs { blobs } => blobs,
                other => {
                    return Err(ProtocolError::UnexpectedMessage {
                        expected: "DataBlobs",
                        got: other.kind(),
                    })
                }
            };
            let mut fresh = Vec::with_capacity(blobs.len());
            for b in blobs {
                let data = admin.decrypt(&b.ciphertexts)?;
                let ciphertexts = encrypt_bits(&new_pair.public, &data, admin.next_seed());
                let mut attributes = Vec::with_capacity(b.attributes.len());
                for a in b.attributes {
                    let bits = admin.decrypt(&a.ciphertexts)?;
                    let ciphertexts = encrypt_bits(&new_pair.public, &bits, admin.next_seed());
                    attributes.push(EncryptedAttribute { ciphertexts, ..a });
                }
                fresh.push(BlobRecord {
                    handle: b.handle,
                    ciphertexts,
                    attributes,
                });
            }
            chan.record_step(
                &admin.id,
                "reencryptLocally",
                &format!("{} blobs", fresh.len()),
            );
            Message::ReencryptRequest {
                strategy,
                new_key: new_pair.public.clone(),
                material: vec![],
                blobs: fresh,
            }
        }
        RotationStrategy::Homomorphic => {
            let material = encrypt_bits(
                &new_pair.public,
                &admin.eval_secret().secret_bits(),
                admin.next_seed(),
            );
            chan.record_step(
                &admin.id,
                "encryptOldSecret",
                &format!("{} bits", material.len()),
            );
            Message::ReencryptRequest {
                strategy,
                new_key: new_pair.public.clone(),
                material,
                blobs: vec![],
            }
        }
    };
    expect_ack(exchange(admin, server, chan, &request, true)?)?;
    admin.install_eval(new_pair.clone());
    for p in partners.iter_mut() {
        p.install_eval(new_pair.clone());
    }
    chan.record_step(
        &admin.id,
        "distributeEvalKey",
        &format!("{} partners", partners.len()),
    );
    if let Some(prb) = admin.policy().cloned() {
        push_policy(admin, server, chan, &prb, false)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authsig::auth_keygen;
    use crate::circuit::to_bits;
    use crate::fhe::{decrypt_bits, keygen_default, BackendKind};
    use crate::protocol::agents::ServerMode;
    use crate::protocol::flows::tests::{bob_may_add, mcsp_world, world, ADD};
    use crate::protocol::flows::{mcsp_request, mcsp_run, mssp_run, upload_data, McspOutcome};
    use crate::protocol::message::frame;
    use crate::protocol::Loopback;

    #[test]
    fn partner_cannot_write_policy() {
        let mut w = world(BackendKind::Clear, ServerMode::Mcsp);
        let prb = bob_may_add(&w);
        let err = upload_prb(&mut w.bob, &mut w.server, &mut w.chan, &prb).unwrap_err();
        assert!(matches!(err, ProtocolError::NotAdministrator(ref p) if p == "bob"));
        assert!(w.server.prb_store().unwrap().audit().is_empty());
        assert!(w.bob.policy().is_none());
        upload_prb(&mut w.alice, &mut w.server, &mut w.chan, &prb).unwrap();
        assert_eq!(w.server.prb_store().unwrap().audit().len(), 1);
    }

    #[test]
    fn partner_cannot_announce_keys() {
        let mut w = world(BackendKind::Clear, ServerMode::Mssp);
        let msg = Message::RekeyAnnounce {
            principal: "bob".into(),
            auth_key: auth_keygen("bob", 77).public,
        };
        let err = exchange(&mut w.bob, &mut w.server, &mut w.chan, &msg, true).unwrap_err();
        assert!(matches!(err, ProtocolError::NotAdministrator(_)));
    }

    #[test]
    fn rotation_moves_access_to_the_new_key() {
        for kind in [BackendKind::Clear, BackendKind::Toy] {
            let (mut w, h) = mcsp_world(kind);
            let old_bob = w.bob.clone();
            let updated =
                rotate_auth_key(&mut w.bob, &mut w.alice, &mut w.server, &mut w.chan, 202)
                    .unwrap()
                    .unwrap();
            let new_fp = fingerprint_subject(w.bob.auth_public(), "subject.id", 8).unwrap();
            assert_eq!(
                updated.rules[0].predicate("subject.id"),
                Some(new_fp.bits.as_slice())
            );
            let out = mcsp_run(
                &mut w.bob,
                &mut w.server,
                &mut w.chan,
                ADD,
                h,
                &to_bits(2, 2),
                &[],
            )
            .unwrap();
            assert_eq!(out, McspOutcome::Granted(to_bits(5, 3)));
            // the old key no longer verifies
            let mut stale = old_bob;
            let msg = mcsp_request(&mut stale, ADD, h, &to_bits(2, 2), &[]);
            let err = w
                .server
                .handle(
                    "bob",
                    &frame(&msg, Some(stale.auth())),
                    &mut Loopback::new(),
                )
                .unwrap_err();
            assert!(matches!(err, ProtocolError::SignatureRejected(_)));
        }
    }

    #[test]
    fn revocation_yields_the_sentinel_and_spares_others() {
        let (mut w, h) = mcsp_world(BackendKind::Clear);
        // alice grants herself the same access first
        let mut prb = w.alice.policy().unwrap().clone();
        let alice_fp = fingerprint_subject(w.alice.auth_public(), "subject.id", 8).unwrap();
        let mut rule = prb.rules[0].clone();
        rule.predicates[0].1 = alice_fp.bits;
        prb.rules.push(rule);
        upload_prb(&mut w.alice, &mut w.server, &mut w.chan, &prb).unwrap();
        let after = revoke_user(&mut w.alice, &mut w.server, &mut w.chan, "bob")
            .unwrap()
            .unwrap();
        assert_eq!(after.rules.len(), 1);
        let bob = mcsp_run(
            &mut w.bob,
            &mut w.server,
            &mut w.chan,
            ADD,
            h,
            &to_bits(2, 2),
            &[],
        )
        .unwrap();
        assert_eq!(bob, McspOutcome::Denied);
        let alice = mcsp_run(
            &mut w.alice,
            &mut w.server,
            &mut w.chan,
            ADD,
            h,
            &to_bits(2, 2),
            &[],
        )
        .unwrap();
        assert_eq!(alice, McspOutcome::Granted(to_bits(5, 3)));
        let audit = w.server.prb_store().unwrap().audit().len();
        assert_eq!(
            revoke_user(&mut w.alice, &mut w.server, &mut w.chan, "nobody").unwrap(),
            None
        );
        assert_eq!(w.server.prb_store().unwrap().audit().len(), audit);
    }

    #[test]
    fn oracle_rotation_on_toy() {
        let (mut w, h) = mcsp_world(BackendKind::Toy);
        let old = w.alice.eval_pair().clone();
        let new = keygen_default(BackendKind::Toy, 41);
        reencrypt_data(
            &mut w.alice,
            &mut [&mut w.bob],
            &mut w.server,
            &mut w.chan,
            RotationStrategy::Oracle,
            new.clone(),
        )
        .unwrap();
        let blob = w.server.store().fetch(h).unwrap();
        assert_eq!(
            decrypt_bits(&new.secret, &blob.ciphertexts).unwrap(),
            to_bits(3, 2)
        );
        assert!(decrypt_bits(&old.secret, &blob.ciphertexts).is_err());
        assert_eq!(w.server.eval_pk(), &new.public);
        let out = mcsp_run(
            &mut w.bob,
            &mut w.server,
            &mut w.chan,
            ADD,
            h,
            &to_bits(2, 2),
            &[],
        )
        .unwrap();
        assert_eq!(out, McspOutcome::Granted(to_bits(5, 3)));
    }

    #[test]
    fn homomorphic_rotation_on_clear() {
        let mut w = world(BackendKind::Clear, ServerMode::Mssp);
        let h = upload_data(
            &mut w.alice,
            &mut w.server,
            &mut w.chan,
            &to_bits(2, 2),
            &[],
        )
        .unwrap();
        let new = keygen_default(BackendKind::Clear, 99);
        let strategy = RotationStrategy::Homomorphic;
        reencrypt_data(
            &mut w.alice,
            &mut [&mut w.bob],
            &mut w.server,
            &mut w.chan,
            strategy,
            new.clone(),
        )
        .unwrap();
        let blob = w.server.store().fetch(h).unwrap();
        assert_eq!(
            decrypt_bits(&new.secret, &blob.ciphertexts).unwrap(),
            to_bits(2, 2)
        );
        let sum = mssp_run(
            &mut w.bob,
            &mut w.server,
            &mut w.chan,
            ADD,
            h,
            &to_bits(1, 2),
        )
        .unwrap();
        assert_eq!(sum, to_bits(3, 3));
    }

    #[test]
    fn homomorphic_rotation_on_toy_is_too_deep() {
        let mut w = world(BackendKind::Toy, ServerMode::Mssp);
        let h = upload_data(&mut w.alice, &mut w.server, &mut w.chan, &[true], &[]).unwrap();
        let before = w.server.store().fetch(h).unwrap().clone();
        let new = keygen_default(BackendKind::Toy, 98);
        let strategy = RotationStrategy::Homomorphic;
        let err = reencrypt_data(
            &mut w.alice,
            &mut [&mut w.bob],
            &mut w.server,
            &mut w.chan,
            strategy,
            new,
        )
        .unwrap_err();
        assert_eq!(err.outcome(), "DepthExceeded");
        assert_eq!(w.server.store().fetch(h).unwrap(), &before);
        assert_eq!(w.alice.eval_public(), w.server.eval_pk());
    }
}
