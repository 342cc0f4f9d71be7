//! Synthetic reciprocal multi-tap channel.
//!
//! Every tap follows a first-order Gauss-Markov recursion
//! `h' = rho * h + sqrt(1 - rho^2) * w` with `w` unit-power circular complex
//! Gaussian, so each tap is Rayleigh-faded with unit average power. The
//! attacker's channel is `c * h + sqrt(1 - c^2) * v` for an independent
//! process `v`, where `c` is the configured attacker correlation; `c = 0`
//! stands for an attacker more than half a wavelength away from both
//! legitimate nodes.
//!
//! Channel estimates add white circular complex Gaussian noise whose
//! variance is `10^(-snr_db / 10)` (channel power is one per tap).

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{rng_from_seed, SimRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("invalid channel parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("{observer:?} cannot observe the {direction:?} link")]
    InconsistentObservation {
        observer: Observer,
        direction: Direction,
    },
}

/// Lag (in probing steps) at which the autocorrelation `rho^lag` falls to 0.5.
///
/// `rho = 1` never decorrelates and maps to `u64::MAX`; `rho = 0` maps to 1.
pub fn coherence_steps_for(rho: f64) -> u64 {
    if rho >= 1.0 {
        return u64::MAX;
    }
    if rho <= 0.0 {
        return 1;
    }
    let lag = (0.5f64.ln() / rho.ln()).ceil();
    (lag as u64).max(1)
}

/// Noise variance for a given estimation SNR; infinite SNR gives zero noise.
pub fn noise_variance_for(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-snr_db / 10.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub num_taps: usize,
    pub temporal_correlation: f64,
    /// Zero in a config file means "derive from `temporal_correlation`".
    #[serde(default)]
    pub coherence_steps: u64,
    #[serde(default = "default_carrier")]
    pub carrier_frequency_hz: f64,
    pub probe_interval_s: f64,
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
    #[serde(with = "snr_serde")]
    pub attacker_snr_db: f64,
    pub attacker_correlation: f64,
}

fn default_carrier() -> f64 {
    5.8e9
}

impl ChannelParams {
    /// Parameters with the coherence length derived from `temporal_correlation`.
    pub fn new(
        num_taps: usize,
        temporal_correlation: f64,
        snr_db: f64,
        attacker_correlation: f64,
    ) -> Self {
        Self {
            num_taps,
            temporal_correlation,
            coherence_steps: coherence_steps_for(temporal_correlation),
            carrier_frequency_hz: default_carrier(),
            probe_interval_s: 0.01,
            snr_db,
            attacker_snr_db: snr_db,
            attacker_correlation,
        }
    }

    pub fn with_attacker_snr(mut self, attacker_snr_db: f64) -> Self {
        self.attacker_snr_db = attacker_snr_db;
        self
    }

    pub fn with_probe_interval(mut self, probe_interval_s: f64) -> Self {
        self.probe_interval_s = probe_interval_s;
        self
    }

    /// Checks every invariant and fills in a zero `coherence_steps`.
    pub fn validated(mut self) -> Result<Self, ChannelError> {
        let invalid = |field, reason: String| Err(ChannelError::InvalidParams { field, reason });
        if self.num_taps == 0 {
            return invalid("num_taps", "must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.temporal_correlation) {
            return invalid(
                "temporal_correlation",
                format!("{} outside [0, 1]", self.temporal_correlation),
            );
        }
        if !(0.0..=1.0).contains(&self.attacker_correlation) {
            return invalid(
                "attacker_correlation",
                format!("{} outside [0, 1]", self.attacker_correlation),
            );
        }
        if !(self.carrier_frequency_hz > 0.0) {
            return invalid("carrier_frequency_hz", "must be positive".into());
        }
        if !(self.probe_interval_s > 0.0) {
            return invalid("probe_interval_s", "must be positive".into());
        }
        if self.snr_db.is_nan() || self.attacker_snr_db.is_nan() {
            return invalid("snr_db", "must not be NaN".into());
        }
        let derived = coherence_steps_for(self.temporal_correlation);
        if self.coherence_steps == 0 {
            self.coherence_steps = derived;
        } else if self.coherence_steps != derived {
            return invalid(
                "coherence_steps",
                format!(
                    "{} inconsistent with temporal_correlation {} (expected {derived})",
                    self.coherence_steps, self.temporal_correlation
                ),
            );
        }
        Ok(self)
    }

    pub fn noise_variance(&self) -> f64 {
        noise_variance_for(self.snr_db)
    }

    pub fn attacker_noise_variance(&self) -> f64 {
        noise_variance_for(self.attacker_snr_db)
    }

    /// Half the carrier wavelength in metres.
    pub fn half_wavelength_m(&self) -> f64 {
        299_792_458.0 / self.carrier_frequency_hz / 2.0
    }
}

/// SNR values in config files may be numbers or the string `"inf"`.
pub(crate) mod snr_serde {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        struct SnrVisitor;
        impl Visitor<'_> for SnrVisitor {
            type Value = f64;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                match v {
                    "inf" | "infinity" | "Infinity" => Ok(f64::INFINITY),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(SnrVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Observer {
    Ap,
    Ed,
    Attacker,
}

impl Observer {
    pub fn as_str(self) -> &'static str {
        match self {
            Observer::Ap => "AP",
            Observer::Ed => "ED",
            Observer::Attacker => "Attacker",
        }
    }
}

/// Link direction: downlink is AP to ED, uplink is ED to AP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Uplink,
    Downlink,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Uplink => "uplink",
            Direction::Downlink => "downlink",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    /// True legitimate channel, shared by both directions.
    pub h_ap_ed: Vec<Complex64>,
    pub h_attacker: Vec<Complex64>,
    pub step_index: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub estimate: Vec<Complex64>,
    pub observer: Observer,
    pub direction: Direction,
    pub step_index: u64,
    pub noise_variance: f64,
}

/// Draws one unit-power circular complex Gaussian sample.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn noisy<R: Rng + ?Sized>(h: &[Complex64], noise_variance: f64, rng: &mut R) -> Vec<Complex64> {
    let sigma = noise_variance.sqrt();
    h.iter()
        .map(|&tap| {
            if sigma == 0.0 {
                tap
            } else {
                tap + complex_gaussian(rng) * sigma
            }
        })
        .collect()
}

/// Draws the initial channel state.
pub fn init_channel<R: Rng + ?Sized>(
    params: &ChannelParams,
    rng: &mut R,
) -> Result<ChannelState, ChannelError> {
    let params = params.clone().validated()?;
    let c = params.attacker_correlation;
    let c_perp = (1.0 - c * c).sqrt();
    let mut h_ap_ed = Vec::with_capacity(params.num_taps);
    let mut h_attacker = Vec::with_capacity(params.num_taps);
    for _ in 0..params.num_taps {
        let h = complex_gaussian(rng);
        let v = complex_gaussian(rng);
        h_ap_ed.push(h);
        h_attacker.push(if c_perp == 0.0 { h } else { h * c + v * c_perp });
    }
    Ok(ChannelState {
        h_ap_ed,
        h_attacker,
        step_index: 0,
    })
}

/// Advances the state by one probing step.
///
/// The attacker channel is driven by the same innovation mixed with an
/// independent one, which keeps its correlation to the legitimate channel
/// at exactly `attacker_correlation` at every step.
pub fn evolve<R: Rng + ?Sized>(
    params: &ChannelParams,
    state: &ChannelState,
    rng: &mut R,
) -> ChannelState {
    let rho = params.temporal_correlation;
    let rho_perp = (1.0 - rho * rho).sqrt();
    let c = params.attacker_correlation;
    let c_perp = (1.0 - c * c).sqrt();
    let mut next = ChannelState {
        h_ap_ed: Vec::with_capacity(state.h_ap_ed.len()),
        h_attacker: Vec::with_capacity(state.h_attacker.len()),
        step_index: state.step_index + 1,
    };
    for (h, ha) in state.h_ap_ed.iter().zip(&state.h_attacker) {
        if rho_perp == 0.0 {
            next.h_ap_ed.push(*h);
            next.h_attacker.push(*ha);
            continue;
        }
        let w = complex_gaussian(rng);
        let w_ind = complex_gaussian(rng);
        next.h_ap_ed.push(h * rho + w * rho_perp);
        let w_att = if c_perp == 0.0 { w } else { w * c + w_ind * c_perp };
        next.h_attacker.push(ha * rho + w_att * rho_perp);
    }
    next
}

/// Noisy channel estimate taken by `observer` on the `direction` link.
///
/// The AP receives on the uplink and the ED on the downlink; both see the
/// same true channel with independent noise. The attacker overhears either
/// link through its own channel.
pub fn observe<R: Rng + ?Sized>(
    params: &ChannelParams,
    state: &ChannelState,
    observer: Observer,
    direction: Direction,
    rng: &mut R,
) -> Result<Observation, ChannelError> {
    let (truth, noise_variance) = match (observer, direction) {
        (Observer::Ap, Direction::Uplink) | (Observer::Ed, Direction::Downlink) => {
            (&state.h_ap_ed, params.noise_variance())
        }
        (Observer::Attacker, _) => (&state.h_attacker, params.attacker_noise_variance()),
        _ => return Err(ChannelError::InconsistentObservation { observer, direction }),
    };
    Ok(Observation {
        estimate: noisy(truth, noise_variance, rng),
        observer,
        direction,
        step_index: state.step_index,
        noise_variance,
    })
}

/// The AP's estimate of a frame transmitted from the attacker's position.
pub fn observe_attacker_transmission<R: Rng + ?Sized>(
    params: &ChannelParams,
    state: &ChannelState,
    rng: &mut R,
) -> Observation {
    let noise_variance = params.noise_variance();
    Observation {
        estimate: noisy(&state.h_attacker, noise_variance, rng),
        observer: Observer::Ap,
        direction: Direction::Uplink,
        step_index: state.step_index,
        noise_variance,
    }
}

/// A channel together with its own seeded random stream.
#[derive(Debug, Clone)]
pub struct Channel {
    params: ChannelParams,
    state: ChannelState,
    rng: SimRng,
}

impl Channel {
    pub fn new(params: ChannelParams, seed: u64) -> Result<Self, ChannelError> {
        let params = params.validated()?;
        let mut rng = rng_from_seed(seed);
        let state = init_channel(&params, &mut rng)?;
        Ok(Self { params, state, rng })
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn state(&self) -> &ChannelState {
        &self.state
    }

    pub fn evolve(&mut self) {
        self.state = evolve(&self.params, &self.state, &mut self.rng);
    }

    pub fn observe(
        &mut self,
        observer: Observer,
        direction: Direction,
    ) -> Result<Observation, ChannelError> {
        observe(&self.params, &self.state, observer, direction, &mut self.rng)
    }

    pub fn observe_attacker_transmission(&mut self) -> Observation {
        observe_attacker_transmission(&self.params, &self.state, &mut self.rng)
    }
}

/// The four observations recorded per probing step, in trace order.
pub const TRACE_SLOTS: [(Observer, Direction); 4] = [
    (Observer::Ap, Direction::Uplink),
    (Observer::Ed, Direction::Downlink),
    (Observer::Attacker, Direction::Downlink),
    (Observer::Attacker, Direction::Uplink),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    pub observations: Vec<Observation>,
    pub params: ChannelParams,
    pub seed: u64,
}

impl ChannelTrace {
    /// Runs a ping-pong probing session of `steps` steps.
    ///
    /// Within one step both directions are probed inside the same coherence
    /// interval, so the AP and ED estimate the same true channel.
    pub fn generate(params: ChannelParams, seed: u64, steps: usize) -> Result<Self, ChannelError> {
        let mut channel = Channel::new(params, seed)?;
        let mut observations = Vec::with_capacity(steps * TRACE_SLOTS.len());
        for step in 0..steps {
            if step > 0 {
                channel.evolve();
            }
            for (observer, direction) in TRACE_SLOTS {
                observations.push(channel.observe(observer, direction)?);
            }
        }
        Ok(Self {
            observations,
            params: channel.params,
            seed,
        })
    }

    pub fn steps(&self) -> usize {
        self.observations.len() / TRACE_SLOTS.len()
    }

    pub fn get(&self, step: usize, observer: Observer, direction: Direction) -> Option<&Observation> {
        let slot = TRACE_SLOTS
            .iter()
            .position(|&s| s == (observer, direction))?;
        self.observations.get(step * TRACE_SLOTS.len() + slot)
    }

    /// Writes the trace as CSV: `step,observer,direction,tap_index,re,im,noise_variance`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "step",
            "observer",
            "direction",
            "tap_index",
            "re",
            "im",
            "noise_variance",
        ])?;
        for obs in &self.observations {
            for (tap, z) in obs.estimate.iter().enumerate() {
                w.write_record([
                    obs.step_index.to_string(),
                    obs.observer.as_str().to_string(),
                    obs.direction.as_str().to_string(),
                    tap.to_string(),
                    z.re.to_string(),
                    z.im.to_string(),
                    obs.noise_variance.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(taps: usize, rho: f64, snr: f64, c: f64) -> ChannelParams {
        ChannelParams::new(taps, rho, snr, c)
    }

    #[test]
    fn init_is_deterministic() {
        let p = params(4, 0.9, 10.0, 0.0);
        let a = Channel::new(p.clone(), 42).unwrap();
        let b = Channel::new(p, 42).unwrap();
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn full_attacker_correlation_copies_channel() {
        let mut ch = Channel::new(params(4, 0.9, 10.0, 1.0), 3).unwrap();
        for _ in 0..20 {
            assert_eq!(ch.state().h_ap_ed, ch.state().h_attacker);
            ch.evolve();
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = [
            params(0, 0.9, 10.0, 0.0),
            params(4, 1.1, 10.0, 0.0),
            params(4, 0.9, 10.0, -0.1),
            params(4, 0.9, f64::NAN, 0.0),
        ];
        for p in bad {
            assert!(matches!(
                Channel::new(p, 1),
                Err(ChannelError::InvalidParams { .. })
            ));
        }
        let mut p = params(4, 0.9, 10.0, 0.0);
        p.coherence_steps = 3;
        assert!(p.validated().is_err());
    }

    #[test]
    fn coherence_mapping() {
        assert_eq!(coherence_steps_for(0.5), 1);
        // ln 0.5 / ln 0.99 = 68.97
        assert_eq!(coherence_steps_for(0.99), 69);
        assert_eq!(coherence_steps_for(0.0), 1);
        assert_eq!(coherence_steps_for(1.0), u64::MAX);
        assert!(0.99f64.powi(69) <= 0.5 && 0.99f64.powi(68) > 0.5);
    }

    #[test]
    fn static_channel_only_advances_step() {
        let mut ch = Channel::new(params(3, 1.0, 10.0, 0.3), 5).unwrap();
        let before = ch.state().clone();
        ch.evolve();
        assert_eq!(ch.state().h_ap_ed, before.h_ap_ed);
        assert_eq!(ch.state().h_attacker, before.h_attacker);
        assert_eq!(ch.state().step_index, 1);
    }

    #[test]
    fn noiseless_estimates_are_reciprocal() {
        let mut ch = Channel::new(params(4, 0.9, f64::INFINITY, 0.0), 9).unwrap();
        let ap = ch.observe(Observer::Ap, Direction::Uplink).unwrap();
        let ed = ch.observe(Observer::Ed, Direction::Downlink).unwrap();
        assert_eq!(ap.estimate, ed.estimate);
        assert_eq!(ap.noise_variance, 0.0);
    }

    #[test]
    fn ap_cannot_observe_downlink() {
        let mut ch = Channel::new(params(1, 0.9, 10.0, 0.0), 9).unwrap();
        assert!(ch.observe(Observer::Ap, Direction::Downlink).is_err());
        assert!(ch.observe(Observer::Ed, Direction::Uplink).is_err());
    }

    #[test]
    fn trace_lookup_and_csv() {
        let trace = ChannelTrace::generate(params(2, 0.9, 10.0, 0.0), 1, 3).unwrap();
        assert_eq!(trace.steps(), 3);
        let o = trace.get(2, Observer::Attacker, Direction::Uplink).unwrap();
        assert_eq!(o.step_index, 2);
        assert_eq!(o.observer, Observer::Attacker);
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,observer,direction,tap_index,re,im,noise_variance"
        );
        assert_eq!(lines.count(), 3 * 4 * 2);
    }

    #[test]
    fn snr_accepts_inf_string() {
        let json = r#"{"num_taps":2,"temporal_correlation":0.9,"probe_interval_s":0.01,
            "snr_db":"inf","attacker_snr_db":-3,"attacker_correlation":0}"#;
        let p: ChannelParams = serde_json::from_str(json).unwrap();
        assert!(p.snr_db.is_infinite());
        assert_eq!(p.attacker_snr_db, -3.0);
        let back = serde_json::to_string(&p).unwrap();
        assert!(back.contains("\"inf\""));
    }
}
