//! Scripted adversary: passive eavesdropper on key generation, spoofer
//! transmitting from its own (partly decorrelated) position, and replayer of
//! recorded frames.
//!
//! The attacker knows the whole protocol, including quantizer settings and
//! the reconciliation code. Its only handicap is its channel.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{AuthConfig, AuthError, Authenticator, Hypothesis};
use crate::bits::BitString;
use crate::channel::{Channel, ChannelError, ChannelParams, ChannelTrace, Direction, Observer};
use crate::secure_channel::{Frame, FrameError, FrameReceiver, FrameSender, SessionKeys, DEFAULT_REPLAY_WINDOW};
use crate::skg::{
    apply_syndromes, enhance_reciprocity, privacy_amplify, probe, quantize, run_skg_detailed, ChannelProfile,
    SecretKey, SkgConfig, SkgError, SyndromeMessage,
};
use crate::stats::{derive_seed, rng_from_seed};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("no frames to attack with")]
    NoFrames,
    #[error("invalid attack script: {0}")]
    InvalidScript(String),
    #[error("attacker correlation {0} outside [0, 1]")]
    InvalidCorrelation(f64),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackAction {
    /// Listen to one complete key generation run.
    Eavesdrop,
    /// Transmit a forged frame at this traffic step.
    SpoofFrame { step: u64 },
    /// Re-send the frame recorded at `recorded_index` during traffic step `step`.
    ReplayFrame { recorded_index: usize, step: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerConfig {
    /// Correlation of the attacker channel to the legitimate one; 0 models a
    /// position more than half a wavelength away.
    pub correlation_to_legit: f64,
    #[serde(with = "crate::channel::snr_serde")]
    pub snr_db: f64,
    pub script: Vec<AttackAction>,
}

impl AttackerConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        if !(0.0..=1.0).contains(&self.correlation_to_legit) {
            return Err(AttackError::InvalidCorrelation(self.correlation_to_legit));
        }
        if self.snr_db.is_nan() {
            return Err(AttackError::InvalidScript("snr_db must not be NaN".into()));
        }
        for action in &self.script {
            if let AttackAction::ReplayFrame { recorded_index, step } = *action {
                if recorded_index as u64 > step {
                    return Err(AttackError::InvalidScript(format!(
                        "frame {recorded_index} is replayed at step {step}, before it was sent"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The legitimate channel with this attacker's position and receiver.
    pub fn apply_to(&self, channel: &ChannelParams) -> ChannelParams {
        let mut p = channel.clone();
        p.attacker_correlation = self.correlation_to_legit;
        p.attacker_snr_db = self.snr_db;
        p
    }
}

/// Rates in [0, 1]; `None` where the script contains no such action.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct AttackOutcome {
    /// Agreement between the attacker's guess and the reconciled key `S`.
    pub key_bit_agreement: Option<f64>,
    /// Agreement between the guessed and true amplified key `K`.
    pub amplified_key_agreement: Option<f64>,
    pub spoof_detection_rate: Option<f64>,
    pub replay_rejection_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EavesdropGuess {
    pub s: BitString,
    /// `None` when the guess is too short to amplify.
    pub k: Option<SecretKey>,
}

fn agreement(a: &BitString, b: &BitString) -> (usize, usize) {
    let n = a.len().min(b.len());
    let same = (0..n).filter(|&i| a[i] == b[i]).count();
    (same, n)
}

impl EavesdropGuess {
    /// Matching bits and compared bits against the true `S`.
    pub fn s_agreement(&self, s: &BitString) -> (usize, usize) {
        agreement(&self.s, s)
    }

    pub fn k_agreement(&self, k: &SecretKey) -> (usize, usize) {
        match &self.k {
            Some(g) => agreement(&g.bits, &k.bits),
            None => (0, 0),
        }
    }
}

/// Runs the legitimate pipeline on the attacker's own observations, using
/// the public dropped indices and syndromes.
pub fn eavesdrop_key_guess(
    attacker_profile: &ChannelProfile,
    public_dropped: &[usize],
    syndrome: &SyndromeMessage,
    config: &SkgConfig,
) -> Result<EavesdropGuess, SkgError> {
    let smoothed = enhance_reciprocity(attacker_profile, config.enhancement_window)?;
    let drop: BTreeSet<usize> = public_dropped.iter().copied().collect();
    let prelim = quantize(&smoothed, config.bits_per_measurement, 0.0)?.restricted_to(&drop);
    let (s, _) = apply_syndromes(&prelim.bits, syndrome, config.code);
    let k = privacy_amplify(&s, syndrome.leaked_bits, config.amplified_key_bits).ok();
    Ok(EavesdropGuess { s, k })
}

/// Per-run eavesdropping result in raw counts, so runs can be pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct EavesdropCounts {
    pub s_matches: usize,
    pub s_bits: usize,
    pub k_matches: usize,
    pub k_bits: usize,
}

impl EavesdropCounts {
    pub fn add(&mut self, other: &EavesdropCounts) {
        self.s_matches += other.s_matches;
        self.s_bits += other.s_bits;
        self.k_matches += other.k_matches;
        self.k_bits += other.k_bits;
    }

    pub fn s_rate(&self) -> Option<f64> {
        (self.s_bits > 0).then(|| self.s_matches as f64 / self.s_bits as f64)
    }

    pub fn k_rate(&self) -> Option<f64> {
        (self.k_bits > 0).then(|| self.k_matches as f64 / self.k_bits as f64)
    }
}

/// Eavesdrops on one SKG run over `trace`. The guess is scored against the
/// AP's reconciled key `S` and the key the AP amplifies from it, whether or
/// not the ED managed to reconcile. Runs that publish no syndromes
/// contribute nothing.
pub fn eavesdrop_trace(trace: &ChannelTrace, config: &SkgConfig) -> Result<EavesdropCounts, SkgError> {
    let outcome = run_skg_detailed(trace, config);
    let (Some(p_ap), Some(s), Some(syn)) = (&outcome.p_ap, &outcome.s_ap, &outcome.syndrome) else {
        return Ok(EavesdropCounts::default());
    };
    let (_, _, att) = probe(trace, config.num_measurements)?;
    let guess = eavesdrop_key_guess(&att, &p_ap.dropped_indices, syn, config)?;
    let (s_matches, s_bits) = guess.s_agreement(s);
    let (k_matches, k_bits) = match privacy_amplify(s, syn.leaked_bits, config.amplified_key_bits) {
        Ok(k) => guess.k_agreement(&k),
        Err(_) => (0, 0),
    };
    Ok(EavesdropCounts {
        s_matches,
        s_bits,
        k_matches,
        k_bits,
    })
}

/// Decisions and anomaly scores collected while frames were injected.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpoofRun {
    pub authentic_scores: Vec<f64>,
    pub spoof_scores: Vec<f64>,
    pub false_alarms: usize,
    pub detections: usize,
}

impl SpoofRun {
    pub fn detection_rate(&self) -> f64 {
        self.detections as f64 / self.spoof_scores.len() as f64
    }

    pub fn false_alarm_rate(&self) -> f64 {
        self.false_alarms as f64 / self.authentic_scores.len() as f64
    }
}

/// Observes `training_len` authentic frames and trains the AP's detector.
pub fn train_on_channel(channel: &mut Channel, config: &AuthConfig) -> Result<Authenticator, AttackError> {
    config.validate()?;
    let mut estimates = Vec::with_capacity(config.training_len);
    for i in 0..config.training_len {
        if i > 0 {
            channel.evolve();
        }
        let obs = channel.observe(Observer::Ap, Direction::Uplink)?;
        estimates.push((obs.step_index, obs.estimate));
    }
    let coherence = channel.params().coherence_steps;
    Ok(Authenticator::train(config, estimates, coherence)?)
}

/// Injects `n_frames` spoofed frames. At each step the ED also sends an
/// authentic frame; both are judged against the previous authentic estimate,
/// so the false-alarm rate is measured under identical conditions.
pub fn spoof_frames(channel: &mut Channel, auth: &mut Authenticator, n_frames: usize) -> Result<SpoofRun, AttackError> {
    if n_frames == 0 {
        return Err(AttackError::NoFrames);
    }
    let mut run = SpoofRun::default();
    for _ in 0..n_frames {
        channel.evolve();
        let authentic = channel.observe(Observer::Ap, Direction::Uplink)?;
        let spoof = channel.observe_attacker_transmission();
        let step = authentic.step_index;
        let a = auth.judge(step, &authentic.estimate)?;
        let s = auth.judge(step, &spoof.estimate)?;
        run.authentic_scores.push(auth.score(step, &authentic.estimate)?);
        run.spoof_scores.push(auth.score(step, &spoof.estimate)?);
        run.false_alarms += usize::from(a.hypothesis == Hypothesis::H1Attack);
        run.detections += usize::from(s.hypothesis == Hypothesis::H1Attack);
        auth.accept_authentic(step, authentic.estimate)?;
    }
    Ok(run)
}

/// Train on a fresh channel and run `n_frames` spoofing attempts.
pub fn spoof_trial(params: &ChannelParams, auth: &AuthConfig, n_frames: usize, seed: u64) -> Result<SpoofRun, AttackError> {
    let mut channel = Channel::new(params.clone(), seed)?;
    let mut authenticator = train_on_channel(&mut channel, auth)?;
    spoof_frames(&mut channel, &mut authenticator, n_frames)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayRun {
    pub attempts: usize,
    pub rejected: usize,
    pub rejections: Vec<Option<FrameError>>,
}

impl ReplayRun {
    pub fn rejection_rate(&self) -> f64 {
        self.rejected as f64 / self.attempts as f64
    }
}

/// Re-sends recorded frames to a live receiver.
pub fn replay_frames(recorded: &[Frame], receiver: &mut FrameReceiver) -> Result<ReplayRun, AttackError> {
    if recorded.is_empty() {
        return Err(AttackError::NoFrames);
    }
    let mut run = ReplayRun::default();
    for frame in recorded {
        let result = receiver.open(frame);
        run.attempts += 1;
        run.rejected += usize::from(result.is_err());
        run.rejections.push(result.err());
    }
    Ok(run)
}

/// Executes `config.script` against fresh legitimate sessions.
///
/// Eavesdrop actions each observe an independent key generation run; spoofed
/// frames are injected into one authenticated traffic stream; replays target
/// one encrypted session carrying a frame per step.
pub fn run_script(
    config: &AttackerConfig,
    channel: &ChannelParams,
    skg: &SkgConfig,
    auth: &AuthConfig,
    seed: u64,
) -> Result<AttackOutcome, AttackError> {
    config.validate()?;
    let params = config.apply_to(channel).validated()?;
    let mut outcome = AttackOutcome::default();

    let mut counts = EavesdropCounts::default();
    let mut listened = false;
    for (i, _) in config
        .script
        .iter()
        .enumerate()
        .filter(|(_, a)| matches!(a, AttackAction::Eavesdrop))
    {
        listened = true;
        let trace = ChannelTrace::generate(params.clone(), derive_seed(seed, "eavesdrop", i as u64), skg.num_measurements)?;
        if let Ok(c) = eavesdrop_trace(&trace, skg) {
            counts.add(&c);
        }
    }
    if listened {
        outcome.key_bit_agreement = counts.s_rate();
        outcome.amplified_key_agreement = counts.k_rate();
    }

    let spoof_steps: Vec<u64> = config
        .script
        .iter()
        .filter_map(|a| match a {
            AttackAction::SpoofFrame { step } => Some(*step),
            _ => None,
        })
        .collect();
    if let Some(&last) = spoof_steps.iter().max() {
        let mut ch = Channel::new(params.clone(), derive_seed(seed, "spoof", 0))?;
        let mut authenticator = train_on_channel(&mut ch, auth)?;
        let mut detected = 0usize;
        for step in 0..=last {
            ch.evolve();
            let injected = spoof_steps.iter().filter(|&&s| s == step).count();
            for _ in 0..injected {
                let spoof = ch.observe_attacker_transmission();
                let d = authenticator.judge(spoof.step_index, &spoof.estimate)?;
                detected += usize::from(d.hypothesis == Hypothesis::H1Attack);
            }
            let authentic = ch.observe(Observer::Ap, Direction::Uplink)?;
            authenticator.accept_authentic(authentic.step_index, authentic.estimate)?;
        }
        outcome.spoof_detection_rate = Some(detected as f64 / spoof_steps.len() as f64);
    }

    let replays: Vec<(usize, u64)> = config
        .script
        .iter()
        .filter_map(|a| match a {
            AttackAction::ReplayFrame { recorded_index, step } => Some((*recorded_index, *step)),
            _ => None,
        })
        .collect();
    if let Some(last) = replays.iter().map(|r| r.1).max() {
        let mut material = [0u8; 16];
        rand::Rng::fill(&mut rng_from_seed(derive_seed(seed, "replay", 0)), &mut material);
        let keys = SessionKeys::derive(&material, 0);
        let mut tx = FrameSender::new(keys.clone(), 1, 2);
        let mut rx = FrameReceiver::new(keys, DEFAULT_REPLAY_WINDOW);
        let mut recorded = Vec::new();
        let mut run = ReplayRun::default();
        for step in 0..=last {
            let payload = BitString::from_bytes(&step.to_be_bytes(), 64);
            let frame = tx.seal(&payload)?;
            rx.open(&frame)?;
            recorded.push(frame);
            for &(idx, _) in replays.iter().filter(|r| r.1 == step) {
                let r = replay_frames(std::slice::from_ref(&recorded[idx]), &mut rx)?;
                run.attempts += r.attempts;
                run.rejected += r.rejected;
                run.rejections.extend(r.rejections);
            }
        }
        outcome.replay_rejection_rate = Some(run.rejection_rate());
    }
    Ok(outcome)
}

/// One row of the attack outcome table.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeRow {
    pub scenario_id: String,
    pub correlation: f64,
    pub snr_db: f64,
    pub outcome: AttackOutcome,
}

/// Writes `scenario_id,correlation,snr_db,key_bit_agreement,spoof_detection_rate,replay_rejection_rate`;
/// undefined rates are left empty.
pub fn write_outcome_csv<W: Write>(rows: &[OutcomeRow], writer: W) -> csv::Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "scenario_id",
        "correlation",
        "snr_db",
        "key_bit_agreement",
        "spoof_detection_rate",
        "replay_rejection_rate",
    ])?;
    for r in rows {
        w.write_record([
            r.scenario_id.clone(),
            r.correlation.to_string(),
            r.snr_db.to_string(),
            opt(r.outcome.key_bit_agreement),
            opt(r.outcome.spoof_detection_rate),
            opt(r.outcome.replay_rejection_rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}
