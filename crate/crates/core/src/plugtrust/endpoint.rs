//! Per-node protocol state machine covering both the initial authentication
//! phase and the per-session URLLC handshake.
//!
//! Initial authentication (once per ED/network pairing), ED first:
//!
//! ```text
//! ED -> AP  GlobalCert      AP verifies root, replies GlobalCert
//! ED -> AP  LocalCert       (after verifying the AP root) ... and so on
//! ```
//!
//! Each side verifies the peer's global certificate against its trust store,
//! then the local CA (which must be authorized for this network), then the
//! device certificate, and stores the peer device certificate.
//!
//! Session handshake (fresh association per session):
//!
//! ```text
//! 1. ED -> AP  Hello   { nonce_ed }
//! 2. AP -> ED  ApShare { nonce_ed, nonce_ap, ap_share, sig_AP(ap_share, nonces, H(1)) }
//! 3. ED -> AP  EdShare { ed_share, sig_ED(ed_share, nonces, H(1..2)) }
//! 4. AP -> ED  Confirm { CMAC_confirm(H(1..3)) }
//! ```
//!
//! Session keys come from HKDF-SHA256 over the key-agreement secret, salted
//! with the transcript hash `H(1..3)`. Any failure moves the endpoint to
//! `Failed`, after which every message is refused.

use std::collections::HashSet;
use std::fmt;

use hkdf::Hkdf;
use rand::Rng;
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;

use super::cert::{
    verify_device, verify_global, verify_local, CertChain, CertError, CertLevel, Certificate,
    TrustStore, VerifiedIdentity,
};
use super::crypto::{Ed25519, KeyAgreement, SignatureScheme, X25519};
use super::message::{Body, Message, Nonce};
use crate::secure_channel::{aes_cmac, SessionKeys};
use crate::stats::{rng_from_seed, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Ap,
    Ed,
}

impl Role {
    pub fn peer(self) -> Role {
        match self {
            Role::Ap => Role::Ed,
            Role::Ed => Role::Ap,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Ap => "AP",
            Role::Ed => "ED",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AbortReason {
    #[error("certificate check failed: {0}")]
    Certificate(#[from] CertError),
    #[error("message type {msg_type:#04x} not expected in phase {phase}")]
    UnexpectedMessage { phase: String, msg_type: u8 },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("session id {got} does not match {expected}")]
    SessionMismatch { expected: u32, got: u32 },
    #[error("nonce already seen")]
    NonceReplay,
    #[error("message echoes a nonce other than ours (replayed message)")]
    StaleNonce,
    #[error("handshake signature verification failed")]
    BadSignature,
    #[error("key agreement share rejected")]
    KeyAgreementFailed,
    #[error("confirmation does not match the transcript")]
    TranscriptMismatch,
    #[error("transport gave up after retransmissions")]
    Timeout,
    #[error("endpoint is not paired with a peer")]
    NotPaired,
    #[error("endpoint already failed")]
    AlreadyFailed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Phase {
    Idle,
    GlobalVerified,
    LocalVerified,
    DeviceCertsExchanged,
    ChallengeSent,
    Authenticated,
    KeysEstablished,
    Failed(AbortReason),
}

impl Phase {
    fn name(&self) -> &'static str {
        match self {
            Phase::Idle => "Idle",
            Phase::GlobalVerified => "GlobalVerified",
            Phase::LocalVerified => "LocalVerified",
            Phase::DeviceCertsExchanged => "DeviceCertsExchanged",
            Phase::ChallengeSent => "ChallengeSent",
            Phase::Authenticated => "Authenticated",
            Phase::KeysEstablished => "KeysEstablished",
            Phase::Failed(_) => "Failed",
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, Phase::Failed(_))
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A node's own certificate chain, private key and trust anchors.
#[derive(Clone)]
pub struct Credentials<S: SignatureScheme = Ed25519> {
    pub chain: CertChain,
    pub signing_key: S::SigningKey,
    pub trust: TrustStore,
}

/// Result of initial authentication, stored per (ED, network) pairing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingRecord {
    pub peer: VerifiedIdentity,
    pub peer_device: Certificate,
}

struct SessionCtx<G: KeyAgreement> {
    id: u32,
    my_nonce: Nonce,
    peer_nonce: Option<Nonce>,
    ka_secret: G::Secret,
    transcript: Vec<u8>,
    confirm_key: Option<[u8; 16]>,
    pending_keys: Option<SessionKeys>,
}

impl<G: KeyAgreement> SessionCtx<G> {
    fn transcript_hash(&self) -> [u8; 32] {
        Sha256::digest(&self.transcript).into()
    }
}

const AP_SIG_LABEL: &[u8] = b"plugtrust-ap-share";
const ED_SIG_LABEL: &[u8] = b"plugtrust-ed-share";
const CONFIRM_LABEL: &[u8] = b"plugtrust-ap-confirm";

fn share_signing_input(label: &[u8], share: &[u8], nonce_ed: &Nonce, nonce_ap: &Nonce, th: &[u8; 32]) -> Vec<u8> {
    let mut m = Vec::with_capacity(label.len() + share.len() + 64);
    m.extend_from_slice(label);
    m.extend_from_slice(share);
    m.extend_from_slice(nonce_ed);
    m.extend_from_slice(nonce_ap);
    m.extend_from_slice(th);
    m
}

fn derive_session(shared: &[u8], transcript_hash: &[u8; 32]) -> (SessionKeys, [u8; 16]) {
    let hk = Hkdf::<Sha256>::new(Some(transcript_hash), shared);
    let expand = |info: &[u8]| {
        let mut k = [0u8; 16];
        hk.expand(info, &mut k).expect("16 bytes is a valid HKDF length");
        k
    };
    (
        SessionKeys {
            enc_key: expand(b"physec plugtrust enc"),
            mac_key: expand(b"physec plugtrust mac"),
            key_epoch: 0,
        },
        expand(b"physec plugtrust confirm"),
    )
}

pub struct Endpoint<S: SignatureScheme = Ed25519, G: KeyAgreement = X25519> {
    role: Role,
    creds: Credentials<S>,
    now: u64,
    rng: SimRng,
    phase: Phase,
    sent_level: Option<CertLevel>,
    peer_global: Option<Certificate>,
    peer_local: Option<Certificate>,
    pairing: Option<PairingRecord>,
    session: Option<SessionCtx<G>>,
    seen_nonces: HashSet<Nonce>,
    keys: Option<SessionKeys>,
    peer_signature_verified: bool,
}

impl<S: SignatureScheme, G: KeyAgreement> fmt::Debug for Endpoint<S, G> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Endpoint")
            .field("role", &self.role)
            .field("phase", &self.phase)
            .finish_non_exhaustive()
    }
}

impl<S: SignatureScheme, G: KeyAgreement> Endpoint<S, G> {
    /// `now` is the injected clock used for certificate validity.
    pub fn new(role: Role, creds: Credentials<S>, now: u64, seed: u64) -> Self {
        Self {
            role,
            creds,
            now,
            rng: rng_from_seed(seed),
            phase: Phase::Idle,
            sent_level: None,
            peer_global: None,
            peer_local: None,
            pairing: None,
            session: None,
            seen_nonces: HashSet::new(),
            keys: None,
            peer_signature_verified: false,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn pairing(&self) -> Option<&PairingRecord> {
        self.pairing.as_ref()
    }

    pub fn session_keys(&self) -> Option<&SessionKeys> {
        self.keys.as_ref()
    }

    /// True once the peer's handshake signature has verified in the current session.
    pub fn peer_signature_verified(&self) -> bool {
        self.peer_signature_verified
    }

    pub fn set_clock(&mut self, now: u64) {
        self.now = now;
    }

    pub(crate) fn fail(&mut self, reason: AbortReason) {
        if !self.phase.is_failed() {
            self.phase = Phase::Failed(reason);
        }
    }

    fn own_cert(&self, level: CertLevel) -> Certificate {
        self.creds
            .chain
            .at_level(level)
            .cloned()
            .unwrap_or_else(|| self.creds.chain.0.last().cloned().expect("credentials hold a certificate"))
    }

    fn cert_message(&mut self, level: CertLevel) -> Vec<u8> {
        self.sent_level = Some(level);
        Message {
            session_id: 0,
            body: Body::Cert(level, self.own_cert(level)),
        }
        .encode()
    }

    /// Opens initial authentication by sending our global certificate. The
    /// joining device (ED) calls this.
    pub fn start_initial_auth(&mut self) -> Result<Vec<u8>, AbortReason> {
        if self.phase != Phase::Idle {
            return Err(self.reject(0));
        }
        Ok(self.cert_message(CertLevel::Global))
    }

    /// Starts a fresh session on a paired ED.
    pub fn start_session(&mut self) -> Result<Vec<u8>, AbortReason> {
        if self.role != Role::Ed {
            return Err(self.reject(0));
        }
        self.reset_session()?;
        let id: u32 = self.rng.random();
        let nonce: Nonce = self.rng.random();
        let msg = Message {
            session_id: id,
            body: Body::Hello { nonce_ed: nonce },
        }
        .encode();
        self.session = Some(SessionCtx {
            id,
            my_nonce: nonce,
            peer_nonce: None,
            ka_secret: G::from_seed(self.rng.random()),
            transcript: msg.clone(),
            confirm_key: None,
            pending_keys: None,
        });
        self.phase = Phase::ChallengeSent;
        Ok(msg)
    }

    /// Discards any session state (including a failed one) and waits for a
    /// new handshake. Requires a completed pairing; the nonce cache survives.
    pub fn reset_session(&mut self) -> Result<(), AbortReason> {
        if self.pairing.is_none() {
            return Err(AbortReason::NotPaired);
        }
        self.session = None;
        self.keys = None;
        self.peer_signature_verified = false;
        self.phase = Phase::DeviceCertsExchanged;
        Ok(())
    }

    fn reject(&self, msg_type: u8) -> AbortReason {
        AbortReason::UnexpectedMessage {
            phase: self.phase.to_string(),
            msg_type,
        }
    }

    /// Processes one received message, returning the reply to send, if any.
    pub fn handle(&mut self, bytes: &[u8]) -> Result<Option<Vec<u8>>, AbortReason> {
        if self.phase.is_failed() {
            return Err(AbortReason::AlreadyFailed);
        }
        let result = Message::decode(bytes)
            .map_err(AbortReason::Malformed)
            .and_then(|msg| self.dispatch(msg));
        if let Err(reason) = &result {
            self.fail(reason.clone());
        }
        result
    }

    fn dispatch(&mut self, msg: Message) -> Result<Option<Vec<u8>>, AbortReason> {
        let msg_type = msg.msg_type();
        // Decoding is strict, so re-encoding reproduces the received bytes.
        let raw = msg.encode();
        match (&self.phase, msg.body) {
            (Phase::Idle, Body::Cert(CertLevel::Global, cert))
            | (Phase::GlobalVerified, Body::Cert(CertLevel::Local, cert))
            | (Phase::LocalVerified, Body::Cert(CertLevel::Device, cert)) => self.on_cert(cert, msg_type),
            (Phase::DeviceCertsExchanged, Body::Hello { nonce_ed }) if self.role == Role::Ap => {
                self.on_hello(msg.session_id, nonce_ed, raw).map(Some)
            }
            (
                Phase::ChallengeSent,
                Body::ApShare {
                    nonce_ed,
                    nonce_ap,
                    share,
                    signature,
                },
            ) if self.role == Role::Ed => {
                self.on_ap_share(msg.session_id, nonce_ed, nonce_ap, share, signature, raw)
                    .map(Some)
            }
            (Phase::ChallengeSent, Body::EdShare { share, signature }) if self.role == Role::Ap => {
                self.on_ed_share(msg.session_id, share, signature, raw).map(Some)
            }
            (Phase::Authenticated, Body::Confirm { tag }) if self.role == Role::Ed => {
                self.on_confirm(msg.session_id, tag).map(|_| None)
            }
            _ => Err(self.reject(msg_type)),
        }
    }

    fn on_cert(&mut self, cert: Certificate, _msg_type: u8) -> Result<Option<Vec<u8>>, AbortReason> {
        let trust = &self.creds.trust;
        let level = match self.phase {
            Phase::Idle => {
                verify_global::<S>(&cert, trust, self.now)?;
                self.peer_global = Some(cert);
                self.phase = Phase::GlobalVerified;
                CertLevel::Global
            }
            Phase::GlobalVerified => {
                let global = self.peer_global.as_ref().expect("set in GlobalVerified");
                verify_local::<S>(&cert, global, trust, self.now)?;
                self.peer_local = Some(cert);
                self.phase = Phase::LocalVerified;
                CertLevel::Local
            }
            Phase::LocalVerified => {
                let local = self.peer_local.as_ref().expect("set in LocalVerified");
                verify_device::<S>(&cert, local, self.now)?;
                let global = self.peer_global.as_ref().expect("set in GlobalVerified");
                self.pairing = Some(PairingRecord {
                    peer: VerifiedIdentity {
                        device_id: cert.subject_id,
                        local_id: local.subject_id,
                        global_id: global.subject_id,
                        public_key: cert.public_key.clone(),
                    },
                    peer_device: cert,
                });
                self.phase = Phase::DeviceCertsExchanged;
                CertLevel::Device
            }
            _ => unreachable!("dispatch only routes certificates in the pairing phases"),
        };
        // Responder mirrors the level it just verified; the initiator, having
        // already sent that level, moves on to the next one.
        let reply = match self.sent_level {
            Some(sent) if sent >= level => level.next(),
            _ => Some(level),
        };
        Ok(reply.map(|l| self.cert_message(l)))
    }

    fn peer_key(&self) -> Result<Vec<u8>, AbortReason> {
        self.pairing
            .as_ref()
            .map(|p| p.peer_device.public_key.clone())
            .ok_or(AbortReason::NotPaired)
    }

    fn on_hello(&mut self, session_id: u32, nonce_ed: Nonce, hello: Vec<u8>) -> Result<Vec<u8>, AbortReason> {
        if !self.seen_nonces.insert(nonce_ed) {
            return Err(AbortReason::NonceReplay);
        }
        let nonce_ap: Nonce = self.rng.random();
        let ka_secret = G::from_seed(self.rng.random());
        let share = G::public_share(&ka_secret);
        let th1: [u8; 32] = Sha256::digest(&hello).into();
        let signature = S::sign(
            &self.creds.signing_key,
            &share_signing_input(AP_SIG_LABEL, &share, &nonce_ed, &nonce_ap, &th1),
        );
        let reply = Message {
            session_id,
            body: Body::ApShare {
                nonce_ed,
                nonce_ap,
                share,
                signature,
            },
        }
        .encode();
        let mut transcript = hello;
        transcript.extend_from_slice(&reply);
        self.session = Some(SessionCtx {
            id: session_id,
            my_nonce: nonce_ap,
            peer_nonce: Some(nonce_ed),
            ka_secret,
            transcript,
            confirm_key: None,
            pending_keys: None,
        });
        self.phase = Phase::ChallengeSent;
        Ok(reply)
    }

    fn session_mut(&mut self, session_id: u32) -> Result<&mut SessionCtx<G>, AbortReason> {
        let ctx = self.session.as_mut().ok_or(AbortReason::NotPaired)?;
        if ctx.id != session_id {
            return Err(AbortReason::SessionMismatch {
                expected: ctx.id,
                got: session_id,
            });
        }
        Ok(ctx)
    }

    fn on_ap_share(
        &mut self,
        session_id: u32,
        nonce_ed: Nonce,
        nonce_ap: Nonce,
        ap_share: Vec<u8>,
        signature: Vec<u8>,
        raw: Vec<u8>,
    ) -> Result<Vec<u8>, AbortReason> {
        let peer_key = self.peer_key()?;
        // Freshness first: a replayed message 2 echoes some earlier nonce,
        // whatever session id it has been relabelled with.
        if self.session.as_ref().is_some_and(|c| c.my_nonce != nonce_ed) {
            return Err(AbortReason::StaleNonce);
        }
        let ctx = self.session_mut(session_id)?;
        let th1 = ctx.transcript_hash();
        let input = share_signing_input(AP_SIG_LABEL, &ap_share, &nonce_ed, &nonce_ap, &th1);
        if !S::verify(&peer_key, &input, &signature) {
            return Err(AbortReason::BadSignature);
        }
        ctx.peer_nonce = Some(nonce_ap);
        ctx.transcript.extend_from_slice(&raw);
        let shared = G::agree(&ctx.ka_secret, &ap_share).ok_or(AbortReason::KeyAgreementFailed)?;
        let ed_share = G::public_share(&ctx.ka_secret);
        let th2 = ctx.transcript_hash();
        let sig = S::sign(
            &self.creds.signing_key,
            &share_signing_input(ED_SIG_LABEL, &ed_share, &nonce_ed, &nonce_ap, &th2),
        );
        let reply = Message {
            session_id,
            body: Body::EdShare {
                share: ed_share,
                signature: sig,
            },
        }
        .encode();
        let ctx = self.session.as_mut().expect("session checked above");
        ctx.transcript.extend_from_slice(&reply);
        let (keys, confirm_key) = derive_session(&shared, &ctx.transcript_hash());
        ctx.pending_keys = Some(keys);
        ctx.confirm_key = Some(confirm_key);
        self.peer_signature_verified = true;
        self.phase = Phase::Authenticated;
        Ok(reply)
    }

    fn on_ed_share(
        &mut self,
        session_id: u32,
        ed_share: Vec<u8>,
        signature: Vec<u8>,
        raw: Vec<u8>,
    ) -> Result<Vec<u8>, AbortReason> {
        let peer_key = self.peer_key()?;
        let ctx = self.session_mut(session_id)?;
        let nonce_ed = ctx.peer_nonce.expect("AP records the ED nonce on Hello");
        let th2 = ctx.transcript_hash();
        let input = share_signing_input(ED_SIG_LABEL, &ed_share, &nonce_ed, &ctx.my_nonce, &th2);
        if !S::verify(&peer_key, &input, &signature) {
            return Err(AbortReason::BadSignature);
        }
        self.peer_signature_verified = true;
        self.phase = Phase::Authenticated;
        let ctx = self.session.as_mut().expect("session checked above");
        ctx.transcript.extend_from_slice(&raw);
        let shared = G::agree(&ctx.ka_secret, &ed_share).ok_or(AbortReason::KeyAgreementFailed)?;
        let th3 = ctx.transcript_hash();
        let (keys, confirm_key) = derive_session(&shared, &th3);
        let mut confirm_input = CONFIRM_LABEL.to_vec();
        confirm_input.extend_from_slice(&th3);
        let tag = aes_cmac(&confirm_key, &confirm_input);
        self.keys = Some(keys);
        self.phase = Phase::KeysEstablished;
        Ok(Message {
            session_id,
            body: Body::Confirm { tag },
        }
        .encode())
    }

    fn on_confirm(&mut self, session_id: u32, tag: [u8; 16]) -> Result<(), AbortReason> {
        let ctx = self.session_mut(session_id)?;
        let confirm_key = ctx.confirm_key.expect("set when Authenticated");
        let mut confirm_input = CONFIRM_LABEL.to_vec();
        confirm_input.extend_from_slice(&ctx.transcript_hash());
        let expected = aes_cmac(&confirm_key, &confirm_input);
        if !bool::from(expected.ct_eq(&tag)) {
            return Err(AbortReason::TranscriptMismatch);
        }
        self.keys = ctx.pending_keys.take();
        self.phase = Phase::KeysEstablished;
        Ok(())
    }
}
