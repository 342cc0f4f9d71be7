//! Secret key generation from reciprocal channel measurements.
//!
//! The pipeline has five stages, each exposed as its own function:
//!
//! 1. [`probe`]: collect `M` time-aligned channel magnitude profiles per party.
//! 2. [`enhance_reciprocity`]: moving-average smoothing to suppress estimation noise.
//! 3. [`quantize`]: threshold quantization with a guard band; dropped sample
//!    indices are exchanged publicly and both parties discard the union
//!    ([`align`]).
//! 4. [`reconcile`]: syndrome-based reconciliation with a Hamming code. The AP
//!    is the key source and the ED corrects toward it. Agreement is confirmed
//!    with a 32-bit verifier hash.
//! 5. [`privacy_amplify`]: SHA-256 of the synchronized key, truncated.
//!
//! [`run_skg`] composes the stages and reports bit disagreement rate (on the
//! aligned preliminary keys) and key generation rate.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bits::BitString;
use crate::channel::{ChannelTrace, Direction, Observer};
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkgError {
    #[error("trace has {available} probing steps, {needed} required")]
    InsufficientTrace { needed: usize, available: usize },
    #[error("smoothing window must be at least 1")]
    InvalidWindow,
    #[error("unsupported bits per measurement {0} (supported: 1, 2)")]
    UnsupportedBitsPerMeasurement(usize),
    #[error("guard band dropped every sample; no key bits left")]
    EmptyKey,
    #[error("preliminary keys differ in length ({ap} vs {ed})")]
    LengthMismatch { ap: usize, ed: usize },
    #[error("key shorter than one code block of {block_size} bits")]
    KeyTooShort { block_size: usize },
    #[error("reconciliation failed: verifier mismatch (corrected blocks {suspect_blocks:?})")]
    ReconciliationFailed { suspect_blocks: Vec<usize> },
    #[error("insufficient residual entropy: {available} bits after leakage, {requested} requested")]
    InsufficientEntropy { available: usize, requested: usize },
    #[error("invalid SKG config: {0}")]
    InvalidConfig(String),
}

/// Linear block code used for reconciliation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReconciliationCode {
    /// Binary Hamming code of length `2^r - 1` with `r` parity bits;
    /// `parity_bits = 3` is Hamming(7,4).
    Hamming { parity_bits: u32 },
}

impl Default for ReconciliationCode {
    fn default() -> Self {
        Self::HAMMING_7_4
    }
}

impl fmt::Display for ReconciliationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hamming({},{})", self.block_size(), self.block_size() - self.syndrome_bits())
    }
}

impl ReconciliationCode {
    pub const HAMMING_7_4: Self = Self::Hamming { parity_bits: 3 };

    pub fn block_size(&self) -> usize {
        match *self {
            Self::Hamming { parity_bits } => (1usize << parity_bits) - 1,
        }
    }

    pub fn syndrome_bits(&self) -> usize {
        match *self {
            Self::Hamming { parity_bits } => parity_bits as usize,
        }
    }

    /// Errors per block the decoder always corrects.
    pub fn correction_capability(&self) -> usize {
        1
    }

    fn validate(&self) -> Result<(), SkgError> {
        match *self {
            Self::Hamming { parity_bits } if (2..=12).contains(&parity_bits) => Ok(()),
            Self::Hamming { parity_bits } => Err(SkgError::InvalidConfig(format!(
                "hamming parity_bits {parity_bits} outside 2..=12"
            ))),
        }
    }

    /// Syndrome of one block as an integer. Column `j` of the parity-check
    /// matrix is the binary expansion of `j + 1`.
    fn syndrome_value(&self, block: &[bool]) -> usize {
        block
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .fold(0, |acc, (j, _)| acc ^ (j + 1))
    }

    pub fn syndrome(&self, block: &[bool]) -> BitString {
        debug_assert_eq!(block.len(), self.block_size());
        let s = self.syndrome_value(block);
        let r = self.syndrome_bits();
        (0..r).map(|i| (s >> (r - 1 - i)) & 1 == 1).collect()
    }

    /// Moves `block` into the coset named by `target` (the source's syndrome)
    /// assuming the minimum-weight error pattern. Returns whether a bit was flipped.
    pub fn correct_block(&self, block: &mut [bool], target: &BitString) -> bool {
        let target = target.iter().fold(0usize, |acc, b| (acc << 1) | b as usize);
        let diff = target ^ self.syndrome_value(block);
        if diff == 0 {
            return false;
        }
        block[diff - 1] = !block[diff - 1];
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkgConfig {
    pub num_measurements: usize,
    pub bits_per_measurement: usize,
    #[serde(default = "one")]
    pub enhancement_window: usize,
    #[serde(default)]
    pub guard_band_alpha: f64,
    #[serde(default)]
    pub code: ReconciliationCode,
    #[serde(default = "default_key_bits")]
    pub amplified_key_bits: usize,
}

fn one() -> usize {
    1
}

fn default_key_bits() -> usize {
    128
}

impl SkgConfig {
    pub fn new(num_measurements: usize, bits_per_measurement: usize) -> Self {
        Self {
            num_measurements,
            bits_per_measurement,
            enhancement_window: 1,
            guard_band_alpha: 0.0,
            code: ReconciliationCode::HAMMING_7_4,
            amplified_key_bits: 128,
        }
    }

    /// Raw key length `M * N` before guard-band and reconciliation losses.
    pub fn key_length_bits(&self) -> usize {
        self.num_measurements * self.bits_per_measurement
    }

    pub fn validate(&self) -> Result<(), SkgError> {
        if self.num_measurements == 0 {
            return Err(SkgError::InvalidConfig("num_measurements must be positive".into()));
        }
        if !matches!(self.bits_per_measurement, 1 | 2) {
            return Err(SkgError::UnsupportedBitsPerMeasurement(self.bits_per_measurement));
        }
        if self.enhancement_window == 0 {
            return Err(SkgError::InvalidWindow);
        }
        if !(self.guard_band_alpha >= 0.0) {
            return Err(SkgError::InvalidConfig("guard_band_alpha must be non-negative".into()));
        }
        if self.amplified_key_bits == 0 || self.amplified_key_bits > 256 {
            return Err(SkgError::InvalidConfig("amplified_key_bits must be in 1..=256".into()));
        }
        self.code.validate()?;
        // Upper bound on what the entropy accounting can ever allow.
        let blocks = self.key_length_bits() / self.code.block_size();
        let best_case = blocks * (self.code.block_size() - self.code.syndrome_bits());
        if best_case < self.amplified_key_bits {
            return Err(SkgError::InvalidConfig(format!(
                "M*N = {} leaves at most {best_case} bits after syndrome leakage, fewer than amplified_key_bits = {}",
                self.key_length_bits(),
                self.amplified_key_bits
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelProfile {
    /// One per-tap magnitude vector per measurement.
    pub samples: Vec<Vec<f64>>,
    pub owner: Observer,
}

impl ChannelProfile {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Scalar quantizer input per measurement: the mean magnitude over taps.
    pub fn scalar_features(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| s.iter().sum::<f64>() / s.len() as f64)
            .collect()
    }

    /// Builds a profile whose samples are one-tap vectors.
    pub fn from_scalars(values: &[f64], owner: Observer) -> Self {
        Self {
            samples: values.iter().map(|&v| vec![v]).collect(),
            owner,
        }
    }
}

/// Collects the AP, ED and attacker profiles from the first `m` steps.
///
/// The attacker fuses its downlink and uplink observations by averaging the
/// per-tap magnitudes.
pub fn probe(
    trace: &ChannelTrace,
    m: usize,
) -> Result<(ChannelProfile, ChannelProfile, ChannelProfile), SkgError> {
    if trace.steps() < m {
        return Err(SkgError::InsufficientTrace {
            needed: m,
            available: trace.steps(),
        });
    }
    let magnitudes = |step, observer, direction| -> Vec<f64> {
        trace
            .get(step, observer, direction)
            .expect("trace holds every slot for each step")
            .estimate
            .iter()
            .map(|z| z.norm())
            .collect()
    };
    let mut ap = Vec::with_capacity(m);
    let mut ed = Vec::with_capacity(m);
    let mut att = Vec::with_capacity(m);
    for k in 0..m {
        ap.push(magnitudes(k, Observer::Ap, Direction::Uplink));
        ed.push(magnitudes(k, Observer::Ed, Direction::Downlink));
        let down = magnitudes(k, Observer::Attacker, Direction::Downlink);
        let up = magnitudes(k, Observer::Attacker, Direction::Uplink);
        att.push(down.iter().zip(&up).map(|(a, b)| 0.5 * (a + b)).collect());
    }
    Ok((
        ChannelProfile { samples: ap, owner: Observer::Ap },
        ChannelProfile { samples: ed, owner: Observer::Ed },
        ChannelProfile { samples: att, owner: Observer::Attacker },
    ))
}

/// Centered moving average along time, per tap.
///
/// Sample `i` averages indices `i - (window-1)/2 ..= i + window/2`, clipped
/// to the profile, so the window shrinks at the edges.
pub fn enhance_reciprocity(profile: &ChannelProfile, window: usize) -> Result<ChannelProfile, SkgError> {
    if window == 0 {
        return Err(SkgError::InvalidWindow);
    }
    if window == 1 {
        return Ok(profile.clone());
    }
    let m = profile.len();
    let back = (window - 1) / 2;
    let ahead = window / 2;
    let samples = (0..m)
        .map(|i| {
            let lo = i.saturating_sub(back);
            let hi = (i + ahead).min(m - 1);
            let taps = profile.samples[i].len();
            let count = (hi - lo + 1) as f64;
            (0..taps)
                .map(|t| profile.samples[lo..=hi].iter().map(|s| s[t]).sum::<f64>() / count)
                .collect()
        })
        .collect();
    Ok(ChannelProfile {
        samples,
        owner: profile.owner,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreliminaryKey {
    pub bits: BitString,
    /// Sorted sample indices discarded by the guard band.
    pub dropped_indices: Vec<usize>,
    pub num_samples: usize,
    pub bits_per_sample: usize,
}

impl PreliminaryKey {
    pub fn kept_indices(&self) -> Vec<usize> {
        let dropped: BTreeSet<_> = self.dropped_indices.iter().copied().collect();
        (0..self.num_samples).filter(|i| !dropped.contains(i)).collect()
    }

    /// Removes every sample index in `drop` (a superset of the key's own
    /// dropped indices is allowed).
    pub fn restricted_to(&self, drop: &BTreeSet<usize>) -> PreliminaryKey {
        let n = self.bits_per_sample;
        let mut bits = BitString::new();
        for (chunk, idx) in self.kept_indices().into_iter().enumerate() {
            if !drop.contains(&idx) {
                for b in 0..n {
                    bits.push(self.bits[chunk * n + b]);
                }
            }
        }
        let mut dropped: BTreeSet<usize> = drop.clone();
        dropped.extend(self.dropped_indices.iter().copied());
        PreliminaryKey {
            bits,
            dropped_indices: dropped.into_iter().collect(),
            num_samples: self.num_samples,
            bits_per_sample: n,
        }
    }
}

/// Gray labels for the four quantization regions.
const GRAY2: [[bool; 2]; 4] = [[false, false], [false, true], [true, true], [true, false]];

/// Quantizes the per-measurement scalar features into `n` bits each.
///
/// `n = 1`: threshold at the profile mean; bit is 1 above the mean.
/// `n = 2`: thresholds at the empirical quartiles, Gray-coded regions.
/// With `alpha > 0` any sample within `alpha` standard deviations of a
/// threshold is dropped.
pub fn quantize(profile: &ChannelProfile, n: usize, alpha: f64) -> Result<PreliminaryKey, SkgError> {
    if !matches!(n, 1 | 2) {
        return Err(SkgError::UnsupportedBitsPerMeasurement(n));
    }
    if !(alpha >= 0.0) {
        return Err(SkgError::InvalidConfig("guard_band_alpha must be non-negative".into()));
    }
    let features = profile.scalar_features();
    if features.is_empty() {
        return Err(SkgError::EmptyKey);
    }
    let sigma = stats::std_dev(&features);
    let thresholds = match n {
        1 => vec![stats::mean(&features)],
        _ => {
            let mut sorted = features.clone();
            sorted.sort_by(f64::total_cmp);
            [0.25, 0.5, 0.75]
                .iter()
                .map(|&p| stats::quantile_sorted(&sorted, p))
                .collect()
        }
    };
    let guard = alpha * sigma;
    let mut bits = BitString::new();
    let mut dropped = Vec::new();
    for (i, &x) in features.iter().enumerate() {
        if alpha > 0.0 && thresholds.iter().any(|q| (x - q).abs() <= guard) {
            dropped.push(i);
            continue;
        }
        let region = thresholds.iter().filter(|&&q| x > q).count();
        match n {
            1 => bits.push(region == 1),
            _ => GRAY2[region].iter().for_each(|&b| bits.push(b)),
        }
    }
    if bits.is_empty() {
        return Err(SkgError::EmptyKey);
    }
    Ok(PreliminaryKey {
        bits,
        dropped_indices: dropped,
        num_samples: features.len(),
        bits_per_sample: n,
    })
}

/// Public dropped-index exchange: both parties discard the union.
pub fn align(ap: &PreliminaryKey, ed: &PreliminaryKey) -> (PreliminaryKey, PreliminaryKey) {
    let union: BTreeSet<usize> = ap
        .dropped_indices
        .iter()
        .chain(&ed.dropped_indices)
        .copied()
        .collect();
    (ap.restricted_to(&union), ed.restricted_to(&union))
}

/// Fraction of disagreeing bits; the denominator is the aligned key length.
pub fn bit_disagreement_rate(a: &BitString, b: &BitString) -> f64 {
    assert_eq!(a.len(), b.len(), "BDR needs aligned keys");
    if a.is_empty() {
        return 0.0;
    }
    a.hamming_distance(b) as f64 / a.len() as f64
}

/// Secret bits per second of probing.
pub fn key_generation_rate(key_bits: usize, num_measurements: usize, probe_interval_s: f64) -> f64 {
    key_bits as f64 / (num_measurements as f64 * probe_interval_s)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyndromeMessage {
    pub syndromes: Vec<BitString>,
    pub block_size: usize,
    pub leaked_bits: usize,
    /// Verifier of the source's synchronized key.
    pub verifier: u32,
}

/// 32-bit agreement check value, domain-separated from privacy amplification.
pub fn key_verifier(s: &BitString) -> u32 {
    let mut h = Sha256::new();
    h.update(b"physec-skg-verifier");
    h.update((s.len() as u64).to_be_bytes());
    h.update(s.to_bytes());
    let d = h.finalize();
    u32::from_be_bytes(d[..4].try_into().expect("digest has 32 bytes"))
}

/// Source side: syndromes of every full block of `key`. Trailing bits that do
/// not fill a block are discarded by both parties.
pub fn compute_syndromes(key: &BitString, code: ReconciliationCode) -> Result<(BitString, SyndromeMessage), SkgError> {
    let n = code.block_size();
    let blocks = key.len() / n;
    if blocks == 0 {
        return Err(SkgError::KeyTooShort { block_size: n });
    }
    let s = key.truncated(blocks * n);
    let syndromes: Vec<BitString> = s.as_slice().chunks(n).map(|b| code.syndrome(b)).collect();
    let leaked_bits = syndromes.iter().map(BitString::len).sum();
    let verifier = key_verifier(&s);
    Ok((
        s,
        SyndromeMessage {
            syndromes,
            block_size: n,
            leaked_bits,
            verifier,
        },
    ))
}

/// Receiver side: decodes each block toward the published syndrome.
/// Returns the corrected key and the indices of blocks that were changed.
pub fn apply_syndromes(key: &BitString, msg: &SyndromeMessage, code: ReconciliationCode) -> (BitString, Vec<usize>) {
    let n = msg.block_size;
    let mut out = key.truncated(msg.syndromes.len() * n).as_slice().to_vec();
    let mut corrected = Vec::new();
    for (i, (block, syn)) in out.chunks_mut(n).zip(&msg.syndromes).enumerate() {
        if code.correct_block(block, syn) {
            corrected.push(i);
        }
    }
    (BitString::from_bools(out), corrected)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reconciled {
    /// Synchronized key `S` (the ED's corrected key, equal to the AP's).
    pub s: BitString,
    pub syndrome: SyndromeMessage,
    pub corrected_blocks: Vec<usize>,
}

/// Aligns the ED's key to the AP's using public syndromes.
pub fn reconcile(
    p_ed: &PreliminaryKey,
    p_ap: &PreliminaryKey,
    code: ReconciliationCode,
) -> Result<Reconciled, SkgError> {
    if p_ed.bits.len() != p_ap.bits.len() {
        return Err(SkgError::LengthMismatch {
            ap: p_ap.bits.len(),
            ed: p_ed.bits.len(),
        });
    }
    let (_, syndrome) = compute_syndromes(&p_ap.bits, code)?;
    let (s, corrected_blocks) = apply_syndromes(&p_ed.bits, &syndrome, code);
    if key_verifier(&s) != syndrome.verifier {
        return Err(SkgError::ReconciliationFailed {
            suspect_blocks: corrected_blocks,
        });
    }
    Ok(Reconciled {
        s,
        syndrome,
        corrected_blocks,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretKey {
    pub bits: BitString,
    pub verifier: u32,
}

impl SecretKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits.to_bytes()
    }
}

/// Compresses `s` to `out_bits` bits with SHA-256.
pub fn privacy_amplify(s: &BitString, leaked_bits: usize, out_bits: usize) -> Result<SecretKey, SkgError> {
    let available = s.len().saturating_sub(leaked_bits);
    if available < out_bits {
        return Err(SkgError::InsufficientEntropy {
            available,
            requested: out_bits,
        });
    }
    if out_bits > 256 {
        return Err(SkgError::InvalidConfig(format!("cannot extract {out_bits} bits from a 256-bit hash")));
    }
    let digest = Sha256::digest(s.to_bytes());
    Ok(SecretKey {
        bits: BitString::from_bytes(&digest, out_bits),
        verifier: key_verifier(s),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkgReport {
    /// Disagreement on the aligned preliminary keys; `None` if quantization failed.
    pub bdr: Option<f64>,
    pub kgr_bits_per_s: f64,
    pub success: bool,
    pub leaked_bits: usize,
    pub failure: Option<SkgError>,
}

/// Every intermediate artifact of one SKG run.
#[derive(Debug, Clone)]
pub struct SkgOutcome {
    pub report: SkgReport,
    pub p_ap: Option<PreliminaryKey>,
    pub p_ed: Option<PreliminaryKey>,
    /// The AP's synchronized key (the reconciliation source).
    pub s_ap: Option<BitString>,
    pub syndrome: Option<SyndromeMessage>,
    pub key_ap: Option<SecretKey>,
    pub key_ed: Option<SecretKey>,
}

impl SkgOutcome {
    fn failed(error: SkgError) -> Self {
        Self {
            report: SkgReport {
                bdr: None,
                kgr_bits_per_s: 0.0,
                success: false,
                leaked_bits: 0,
                failure: Some(error),
            },
            p_ap: None,
            p_ed: None,
            s_ap: None,
            syndrome: None,
            key_ap: None,
            key_ed: None,
        }
    }
}

pub fn run_skg(trace: &ChannelTrace, config: &SkgConfig) -> SkgReport {
    run_skg_detailed(trace, config).report
}

pub fn run_skg_detailed(trace: &ChannelTrace, config: &SkgConfig) -> SkgOutcome {
    if let Err(e) = config.validate() {
        return SkgOutcome::failed(e);
    }
    let m = config.num_measurements;
    let prelim = || -> Result<(PreliminaryKey, PreliminaryKey), SkgError> {
        let (ap, ed, _) = probe(trace, m)?;
        let ap = enhance_reciprocity(&ap, config.enhancement_window)?;
        let ed = enhance_reciprocity(&ed, config.enhancement_window)?;
        let p_ap = quantize(&ap, config.bits_per_measurement, config.guard_band_alpha)?;
        let p_ed = quantize(&ed, config.bits_per_measurement, config.guard_band_alpha)?;
        let (p_ap, p_ed) = align(&p_ap, &p_ed);
        if p_ap.bits.is_empty() {
            return Err(SkgError::EmptyKey);
        }
        Ok((p_ap, p_ed))
    };
    let (p_ap, p_ed) = match prelim() {
        Ok(keys) => keys,
        Err(e) => return SkgOutcome::failed(e),
    };

    let bdr = bit_disagreement_rate(&p_ap.bits, &p_ed.bits);
    let mut outcome = SkgOutcome::failed(SkgError::EmptyKey);
    outcome.report.bdr = Some(bdr);
    outcome.report.failure = None;

    let (s_ap, syndrome) = match compute_syndromes(&p_ap.bits, config.code) {
        Ok(x) => x,
        Err(e) => {
            outcome.report.failure = Some(e);
            outcome.p_ap = Some(p_ap);
            outcome.p_ed = Some(p_ed);
            return outcome;
        }
    };
    outcome.report.leaked_bits = syndrome.leaked_bits;

    let result = reconcile(&p_ed, &p_ap, config.code).and_then(|rec| {
        let k_ap = privacy_amplify(&s_ap, syndrome.leaked_bits, config.amplified_key_bits)?;
        let k_ed = privacy_amplify(&rec.s, rec.syndrome.leaked_bits, config.amplified_key_bits)?;
        Ok((k_ap, k_ed))
    });
    match result {
        Ok((k_ap, k_ed)) => {
            let success = k_ap.bits == k_ed.bits;
            outcome.report.success = success;
            outcome.report.kgr_bits_per_s = if success {
                key_generation_rate(config.amplified_key_bits, m, trace.params.probe_interval_s)
            } else {
                0.0
            };
            outcome.key_ap = Some(k_ap);
            outcome.key_ed = Some(k_ed);
        }
        Err(e) => outcome.report.failure = Some(e),
    }
    outcome.p_ap = Some(p_ap);
    outcome.p_ed = Some(p_ed);
    outcome.s_ap = Some(s_ap);
    outcome.syndrome = Some(syndrome);
    outcome
}
