//! Periodic session-key update from physical-layer key generation, and the
//! signaling-cost comparison against re-running the session handshake.

use serde::Serialize;

use super::endpoint::Role;
use crate::secure_channel::{rekey, SessionKeys};
use crate::skg::SkgOutcome;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RekeyResult {
    /// New keys installed at `epoch`; `public_bits` were exchanged in the clear.
    Updated { epoch: u8, public_bits: usize },
    /// SKG failed; the current keys stay in use and a retry is scheduled.
    Deferred { reason: String, retry_count: u32 },
}

/// Holds one side's session keys across SKG-driven updates. A failed key
/// generation never interrupts traffic: the old keys remain valid.
#[derive(Debug, Clone)]
pub struct KeyUpdater {
    role: Role,
    keys: SessionKeys,
    retry_count: u32,
}

impl KeyUpdater {
    pub fn new(role: Role, keys: SessionKeys) -> Self {
        Self {
            role,
            keys,
            retry_count: 0,
        }
    }

    pub fn keys(&self) -> &SessionKeys {
        &self.keys
    }

    pub fn retry_count(&self) -> u32 {
        self.retry_count
    }

    pub fn retry_pending(&self) -> bool {
        self.retry_count > 0
    }

    pub fn rekey_via_skg(&mut self, outcome: &SkgOutcome) -> RekeyResult {
        let material = match self.role {
            Role::Ap => outcome.key_ap.as_ref(),
            Role::Ed => outcome.key_ed.as_ref(),
        };
        let attempt = match (outcome.report.success, material) {
            (true, Some(key)) => rekey(&self.keys, key).map_err(|e| e.to_string()),
            _ => Err(outcome
                .report
                .failure
                .as_ref()
                .map_or_else(|| "key generation failed".to_string(), |e| e.to_string())),
        };
        match attempt {
            Ok(keys) => {
                self.keys = keys;
                self.retry_count = 0;
                RekeyResult::Updated {
                    epoch: self.keys.key_epoch,
                    public_bits: outcome.report.leaked_bits,
                }
            }
            Err(reason) => {
                self.retry_count += 1;
                RekeyResult::Deferred {
                    reason,
                    retry_count: self.retry_count,
                }
            }
        }
    }
}

/// Public bits needed to refresh a session key by each method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SignalingComparison {
    pub key_bits: usize,
    /// Reconciliation syndromes sent by the AP.
    pub skg_syndrome_bits: usize,
    /// Syndromes plus the 32-bit agreement verifier.
    pub skg_total_bits: usize,
    /// Every delivered byte of a full session handshake, as bits.
    pub handshake_bits: usize,
}

impl SignalingComparison {
    pub fn new(outcome: &SkgOutcome, key_bits: usize, handshake_bits: usize) -> Self {
        let skg_syndrome_bits = outcome.report.leaked_bits;
        let verifier_bits = if outcome.syndrome.is_some() { 32 } else { 0 };
        Self {
            key_bits,
            skg_syndrome_bits,
            skg_total_bits: skg_syndrome_bits + verifier_bits,
            handshake_bits,
        }
    }

    pub fn skg_cheaper(&self) -> bool {
        self.skg_total_bits < self.handshake_bits
    }
}
