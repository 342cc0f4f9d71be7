use super::*;
use crate::plugtrust::message::{Body, Message};

const NOW: u64 = 500;
const VALIDITY: (u64, u64) = (0, 1_000);

fn pki() -> SimPki {
    SimPki::new(1, 10, VALIDITY, 42)
}

fn pair(seed: u64) -> (Endpoint, Endpoint) {
    let p = pki();
    let mut ap: Endpoint = Endpoint::new(Role::Ap, p.device(100), NOW, seed);
    let mut ed: Endpoint = Endpoint::new(Role::Ed, p.device(200), NOW, seed ^ 0xffff);
    initial_auth(&mut ap, &mut ed, &mut SimLink::lossless()).unwrap();
    (ap, ed)
}

#[test]
fn honest_pairing_and_handshake() {
    let p = pki();
    let mut ap: Endpoint = Endpoint::new(Role::Ap, p.device(100), NOW, 1);
    let mut ed: Endpoint = Endpoint::new(Role::Ed, p.device(200), NOW, 2);
    let mut link = SimLink::lossless();
    let (at_ap, at_ed) = initial_auth(&mut ap, &mut ed, &mut link).unwrap();
    assert_eq!(at_ap.peer.device_id, 200);
    assert_eq!(at_ed.peer.device_id, 100);
    assert_eq!(link.log().len(), 6);
    let types: Vec<u8> = link.log().iter().map(|e| e.msg_type).collect();
    assert_eq!(types, [1, 1, 2, 2, 3, 3]);

    link.clear_log();
    let keys = session_handshake(&mut ap, &mut ed, &mut link).unwrap();
    assert_eq!(ap.session_keys(), Some(&keys));
    assert_eq!(*ap.phase(), Phase::KeysEstablished);
    assert_eq!(*ed.phase(), Phase::KeysEstablished);
    assert_eq!(link.log().len(), 4);
    assert_eq!(keys.key_epoch, 0);

    // A second session produces different keys.
    let keys2 = session_handshake(&mut ap, &mut ed, &mut link).unwrap();
    assert_ne!(keys, keys2);
}

#[test]
fn self_signed_device_aborts_at_global() {
    let p = pki();
    let mut ap: Endpoint = Endpoint::new(Role::Ap, p.device(100), NOW, 1);
    let mut ed: Endpoint = Endpoint::new(Role::Ed, p.self_signed_device(666), NOW, 2);
    let err = initial_auth(&mut ap, &mut ed, &mut SimLink::lossless()).unwrap_err();
    assert_eq!(err, AbortReason::Certificate(CertError::UnknownRoot(666)));
    assert!(ap.phase().is_failed());
}

#[test]
fn wrong_operator_aborts_at_local() {
    let p = pki();
    let foreign = p.foreign_local(11);
    let mut ap: Endpoint = Endpoint::new(Role::Ap, p.device(100), NOW, 1);
    let mut ed: Endpoint = Endpoint::new(Role::Ed, p.device_under(&foreign, 200), NOW, 2);
    let err = initial_auth(&mut ap, &mut ed, &mut SimLink::lossless()).unwrap_err();
    assert_eq!(err, AbortReason::Certificate(CertError::MissingLocal(Some(11))));
    assert_eq!(*ap.phase(), Phase::Failed(err));
}

#[test]
fn expired_certificates_rejected() {
    let p = pki();
    let mut ap: Endpoint = Endpoint::new(Role::Ap, p.device(100), 5_000, 1);
    let mut ed: Endpoint = Endpoint::new(Role::Ed, p.device(200), NOW, 2);
    let err = initial_auth(&mut ap, &mut ed, &mut SimLink::lossless()).unwrap_err();
    assert!(matches!(err, AbortReason::Certificate(CertError::Expired { .. })));
}

/// Drives one handshake manually, returning the four messages.
fn manual_handshake(ap: &mut Endpoint, ed: &mut Endpoint) -> [Vec<u8>; 4] {
    ap.reset_session().unwrap();
    let m1 = ed.start_session().unwrap();
    let m2 = ap.handle(&m1).unwrap().unwrap();
    let m3 = ed.handle(&m2).unwrap().unwrap();
    let m4 = ap.handle(&m3).unwrap().unwrap();
    assert_eq!(ed.handle(&m4).unwrap(), None);
    [m1, m2, m3, m4]
}

#[test]
fn replayed_ap_share_is_stale() {
    let (mut ap, mut ed) = pair(3);
    let old = manual_handshake(&mut ap, &mut ed);
    let _fresh_hello = ed.start_session().unwrap();
    assert_eq!(ed.handle(&old[1]), Err(AbortReason::StaleNonce));
    assert!(ed.phase().is_failed());
    assert_eq!(ed.handle(&old[1]), Err(AbortReason::AlreadyFailed));

    // Relabelling the old message with the new session id does not help.
    let (mut ap, mut ed) = pair(4);
    let old = manual_handshake(&mut ap, &mut ed);
    let hello = ed.start_session().unwrap();
    let mut relabelled = old[1].clone();
    relabelled[1..5].copy_from_slice(&hello[1..5]);
    assert_eq!(ed.handle(&relabelled), Err(AbortReason::StaleNonce));
}

#[test]
fn replayed_hello_is_rejected() {
    let (mut ap, mut ed) = pair(5);
    let old = manual_handshake(&mut ap, &mut ed);
    ap.reset_session().unwrap();
    assert_eq!(ap.handle(&old[0]), Err(AbortReason::NonceReplay));
}

#[test]
fn forged_ed_share_fails_signature() {
    let (mut ap, mut ed) = pair(6);
    ap.reset_session().unwrap();
    let m1 = ed.start_session().unwrap();
    let m2 = ap.handle(&m1).unwrap().unwrap();
    let m3 = ed.handle(&m2).unwrap().unwrap();
    // Attacker substitutes its own share, signed with a key it owns.
    let Message { session_id, body } = Message::decode(&m3).unwrap();
    let Body::EdShare { signature, .. } = body else { panic!() };
    let attacker_sk = Ed25519::from_seed([9; 32]);
    let attacker_share = X25519::public_share(&X25519::from_seed([8; 32]));
    let forged = Message {
        session_id,
        body: Body::EdShare {
            signature: Ed25519::sign(&attacker_sk, &attacker_share),
            share: attacker_share.clone(),
        },
    };
    assert_eq!(ap.handle(&forged.encode()), Err(AbortReason::BadSignature));
    assert!(!ap.peer_signature_verified());
    // Keeping the genuine signature over a swapped share fails too.
    let (mut ap, mut ed) = pair(7);
    ap.reset_session().unwrap();
    let m1 = ed.start_session().unwrap();
    let m2 = ap.handle(&m1).unwrap().unwrap();
    let m3 = ed.handle(&m2).unwrap().unwrap();
    let session_id = Message::decode(&m3).unwrap().session_id;
    let swapped = Message {
        session_id,
        body: Body::EdShare {
            share: attacker_share,
            signature,
        },
    };
    assert_eq!(ap.handle(&swapped.encode()), Err(AbortReason::BadSignature));
}

#[test]
fn every_single_bit_corruption_aborts() {
    for idx in 0..4 {
        let (mut ap0, mut ed0) = pair(8);
        let msgs = manual_handshake(&mut ap0, &mut ed0);
        for bit in 0..msgs[idx].len() * 8 {
            let (mut ap, mut ed) = pair(9);
            ap.reset_session().unwrap();
            let mut m = ed.start_session().unwrap();
            let mut to_ap = true;
            let mut aborted = false;
            for step in 0..4 {
                if step == idx {
                    m[bit / 8] ^= 1 << (bit % 8);
                }
                let r = if to_ap { ap.handle(&m) } else { ed.handle(&m) };
                match r {
                    Ok(Some(next)) => m = next,
                    Ok(None) => break,
                    Err(_) => {
                        aborted = true;
                        break;
                    }
                }
                to_ap = !to_ap;
            }
            assert!(aborted, "message {idx} bit {bit} accepted");
            assert_ne!(ap.session_keys().is_some() && ed.session_keys().is_some(), true);
        }
    }
}

#[test]
fn lossy_link_retransmits_then_times_out() {
    let (mut ap, mut ed) = pair(10);
    let mut link = SimLink::new(0.3, 20, 7);
    let keys = session_handshake(&mut ap, &mut ed, &mut link).unwrap();
    assert_eq!(ed.session_keys(), Some(&keys));
    assert!(link.log().iter().any(|e| !e.delivered));

    let (mut ap, mut ed) = pair(11);
    let mut dead = SimLink::new(1.0, 3, 7);
    assert_eq!(session_handshake(&mut ap, &mut ed, &mut dead), Err(AbortReason::Timeout));
    assert_eq!(dead.log().len(), 4);
    assert_eq!(*ap.phase(), Phase::Failed(AbortReason::Timeout));
}

#[test]
fn unpaired_endpoint_refuses_sessions() {
    let p = pki();
    let mut ed: Endpoint = Endpoint::new(Role::Ed, p.device(200), NOW, 2);
    assert_eq!(ed.start_session(), Err(AbortReason::NotPaired));
    let mut ap: Endpoint = Endpoint::new(Role::Ap, p.device(100), NOW, 2);
    let hello = Message {
        session_id: 1,
        body: Body::Hello { nonce_ed: [0; 16] },
    };
    assert!(matches!(ap.handle(&hello.encode()), Err(AbortReason::UnexpectedMessage { .. })));
}

#[test]
fn rekey_updates_or_defers() {
    use crate::channel::{ChannelParams, ChannelTrace};
    use crate::skg::{run_skg_detailed, SkgConfig};

    let (mut ap, mut ed) = pair(12);
    let keys = session_handshake(&mut ap, &mut ed, &mut SimLink::lossless()).unwrap();
    let mut upd_ap = KeyUpdater::new(Role::Ap, keys.clone());
    let mut upd_ed = KeyUpdater::new(Role::Ed, keys.clone());

    let params = ChannelParams::new(4, 0.95, f64::INFINITY, 0.0);
    let trace = ChannelTrace::generate(params, 1, 512).unwrap();
    let outcome = run_skg_detailed(&trace, &SkgConfig::new(512, 1));
    assert!(outcome.report.success);
    let r = upd_ap.rekey_via_skg(&outcome);
    upd_ed.rekey_via_skg(&outcome);
    assert!(matches!(r, RekeyResult::Updated { epoch: 1, .. }));
    assert_eq!(upd_ap.keys(), upd_ed.keys());
    assert_ne!(upd_ap.keys(), &keys);

    let noisy = ChannelParams::new(4, 0.95, -10.0, 0.0);
    let trace = ChannelTrace::generate(noisy, 2, 512).unwrap();
    let failed = run_skg_detailed(&trace, &SkgConfig::new(512, 1));
    assert!(!failed.report.success);
    let before = upd_ap.keys().clone();
    let r = upd_ap.rekey_via_skg(&failed);
    assert!(matches!(r, RekeyResult::Deferred { retry_count: 1, .. }));
    assert_eq!(upd_ap.keys(), &before);
    assert!(upd_ap.retry_pending());
}
