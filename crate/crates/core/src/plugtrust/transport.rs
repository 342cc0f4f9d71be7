//! Lossy message transport and the drivers that run the two protocol phases
//! between an AP and an ED endpoint.
//!
//! The protocol is strictly ping-pong (one message in flight), so the only
//! impairment modelled is loss. A lost message is retransmitted up to
//! `max_retries` times before both sides abort with `Timeout`.

use rand::Rng;
use serde::Serialize;

use super::crypto::{KeyAgreement, SignatureScheme};
use super::endpoint::{AbortReason, Endpoint, PairingRecord, Phase, Role};
use crate::secure_channel::SessionKeys;
use crate::stats::{rng_from_seed, SimRng};

/// One transmission attempt on the link.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LinkEvent {
    pub seq: u64,
    pub from: &'static str,
    pub msg_type: u8,
    pub len_bytes: usize,
    pub delivered: bool,
}

pub trait Transport {
    /// Attempts one transmission; returns whether it reached the peer.
    fn transmit(&mut self, from: Role, bytes: &[u8]) -> bool;
    fn max_retries(&self) -> u32;
}

#[derive(Debug)]
pub struct SimLink {
    pub loss_probability: f64,
    pub max_retries: u32,
    rng: SimRng,
    log: Vec<LinkEvent>,
}

impl SimLink {
    pub fn new(loss_probability: f64, max_retries: u32, seed: u64) -> Self {
        Self {
            loss_probability: loss_probability.clamp(0.0, 1.0),
            max_retries,
            rng: rng_from_seed(seed),
            log: Vec::new(),
        }
    }

    pub fn lossless() -> Self {
        Self::new(0.0, 0, 0)
    }

    pub fn log(&self) -> &[LinkEvent] {
        &self.log
    }

    pub fn clear_log(&mut self) {
        self.log.clear();
    }

    /// Bits of every delivered message, i.e. the signaling the peer received.
    pub fn delivered_bits(&self) -> usize {
        self.log.iter().filter(|e| e.delivered).map(|e| e.len_bytes * 8).sum()
    }
}

impl Transport for SimLink {
    fn transmit(&mut self, from: Role, bytes: &[u8]) -> bool {
        let delivered = self.loss_probability == 0.0 || self.rng.random::<f64>() >= self.loss_probability;
        self.log.push(LinkEvent {
            seq: self.log.len() as u64,
            from: from.as_str(),
            msg_type: bytes.first().copied().unwrap_or(0),
            len_bytes: bytes.len(),
            delivered,
        });
        delivered
    }

    fn max_retries(&self) -> u32 {
        self.max_retries
    }
}

fn pick<'a, S: SignatureScheme, G: KeyAgreement>(
    ap: &'a mut Endpoint<S, G>,
    ed: &'a mut Endpoint<S, G>,
    role: Role,
) -> &'a mut Endpoint<S, G> {
    match role {
        Role::Ap => ap,
        Role::Ed => ed,
    }
}

/// Runs messages back and forth, starting with `first` sent by `from`,
/// until a side has nothing more to say. Errors abort both endpoints.
pub fn exchange<S: SignatureScheme, G: KeyAgreement, T: Transport>(
    ap: &mut Endpoint<S, G>,
    ed: &mut Endpoint<S, G>,
    link: &mut T,
    from: Role,
    first: Vec<u8>,
) -> Result<(), AbortReason> {
    let mut sender = from;
    let mut msg = first;
    loop {
        let mut attempts = 0;
        while !link.transmit(sender, &msg) {
            attempts += 1;
            if attempts > link.max_retries() {
                ap.fail(AbortReason::Timeout);
                ed.fail(AbortReason::Timeout);
                return Err(AbortReason::Timeout);
            }
        }
        let receiver = sender.peer();
        match pick(ap, ed, receiver).handle(&msg) {
            Ok(Some(reply)) => {
                msg = reply;
                sender = receiver;
            }
            Ok(None) => return Ok(()),
            Err(reason) => {
                // The peer learns of the abort out of band; a real link would
                // signal it or time out.
                pick(ap, ed, sender).fail(reason.clone());
                return Err(reason);
            }
        }
    }
}

/// Initial authentication: mutual certificate exchange at global, local and
/// device level. Returns the pairing records as seen by (AP, ED).
pub fn initial_auth<S: SignatureScheme, G: KeyAgreement, T: Transport>(
    ap: &mut Endpoint<S, G>,
    ed: &mut Endpoint<S, G>,
    link: &mut T,
) -> Result<(PairingRecord, PairingRecord), AbortReason> {
    let first = ed.start_initial_auth()?;
    exchange(ap, ed, link, Role::Ed, first)?;
    match (ap.pairing(), ed.pairing()) {
        (Some(a), Some(e)) if *ap.phase() == Phase::DeviceCertsExchanged && *ed.phase() == Phase::DeviceCertsExchanged => {
            Ok((a.clone(), e.clone()))
        }
        _ => Err(AbortReason::NotPaired),
    }
}

/// Per-session handshake on a paired AP/ED. Returns the agreed keys.
pub fn session_handshake<S: SignatureScheme, G: KeyAgreement, T: Transport>(
    ap: &mut Endpoint<S, G>,
    ed: &mut Endpoint<S, G>,
    link: &mut T,
) -> Result<SessionKeys, AbortReason> {
    ap.reset_session()?;
    let hello = ed.start_session()?;
    exchange(ap, ed, link, Role::Ed, hello)?;
    match (ap.session_keys(), ed.session_keys()) {
        (Some(a), Some(e)) if a == e => Ok(a.clone()),
        _ => Err(AbortReason::TranscriptMismatch),
    }
}
