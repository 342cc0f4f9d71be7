//! Channel-based message authentication.
//!
//! During training the AP collects channel estimates of cryptographically
//! verified frames from the ED. Afterwards every frame is judged from the
//! difference between its channel estimate and the previous one: a frame
//! whose estimate is inconsistent with the legitimate channel plus noise is
//! attributed to an attacker (`H1`).
//!
//! Two detectors are provided:
//!
//! * [`NphtDetector`]: Neyman-Pearson threshold on the normalized squared
//!   norm of the delta feature.
//! * [`GmmDetector`]: diagonal-covariance Gaussian mixture fitted by EM to the
//!   per-tap delta magnitudes; low log-likelihood means attack.
//!
//! Both thresholds are empirical quantiles of the training statistics at a
//! configured false-alarm target. A statistic exactly at the threshold is
//! decided `H0`.

use std::collections::VecDeque;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::Observation;
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuthError {
    #[error("vector length mismatch ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("estimates at steps {prev} and {now} are more than {coherence_steps} steps apart")]
    CoherenceViolation { prev: u64, now: u64, coherence_steps: u64 },
    #[error("estimate steps must strictly increase ({prev} then {now})")]
    NonIncreasingSteps { prev: u64, now: u64 },
    #[error("target false-alarm rate {0} outside (0, 1)")]
    InvalidTargetPfa(f64),
    #[error("invalid detector parameter: {0}")]
    InvalidParameter(String),
    #[error("detector trained on {expected}-tap features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty statistic list")]
    EmptyInput,
}

/// Per-tap magnitude of the difference between consecutive estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaFeature {
    pub value: Vec<f64>,
    pub step: u64,
}

impl DeltaFeature {
    pub fn squared_norm(&self) -> f64 {
        self.value.iter().map(|v| v * v).sum()
    }
}

pub fn delta_feature(h_now: &[Complex64], h_prev: &[Complex64]) -> Result<DeltaFeature, AuthError> {
    if h_now.len() != h_prev.len() {
        return Err(AuthError::LengthMismatch(h_now.len(), h_prev.len()));
    }
    Ok(DeltaFeature {
        value: h_now.iter().zip(h_prev).map(|(a, b)| (a - b).norm()).collect(),
        step: 0,
    })
}

/// Delta between two observations, enforcing that they lie within the
/// channel coherence time.
pub fn delta_between(
    now: &Observation,
    prev: &Observation,
    coherence_steps: u64,
) -> Result<DeltaFeature, AuthError> {
    check_spacing(prev.step_index, now.step_index, coherence_steps)?;
    let mut d = delta_feature(&now.estimate, &prev.estimate)?;
    d.step = now.step_index;
    Ok(d)
}

fn check_spacing(prev: u64, now: u64, coherence_steps: u64) -> Result<(), AuthError> {
    if now <= prev {
        return Err(AuthError::NonIncreasingSteps { prev, now });
    }
    if now - prev > coherence_steps {
        return Err(AuthError::CoherenceViolation {
            prev,
            now,
            coherence_steps,
        });
    }
    Ok(())
}

/// Labeled channel estimates of authentic frames, in step order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    estimates: Vec<(u64, Vec<Complex64>)>,
    coherence_steps: u64,
}

impl TrainingSet {
    pub fn new(estimates: Vec<(u64, Vec<Complex64>)>, coherence_steps: u64) -> Result<Self, AuthError> {
        for pair in estimates.windows(2) {
            check_spacing(pair[0].0, pair[1].0, coherence_steps)?;
            if pair[0].1.len() != pair[1].1.len() {
                return Err(AuthError::LengthMismatch(pair[0].1.len(), pair[1].1.len()));
            }
        }
        Ok(Self {
            estimates,
            coherence_steps,
        })
    }

    pub fn from_observations(observations: &[Observation], coherence_steps: u64) -> Result<Self, AuthError> {
        Self::new(
            observations
                .iter()
                .map(|o| (o.step_index, o.estimate.clone()))
                .collect(),
            coherence_steps,
        )
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    pub fn coherence_steps(&self) -> u64 {
        self.coherence_steps
    }

    pub fn deltas(&self) -> Vec<DeltaFeature> {
        self.estimates
            .windows(2)
            .map(|w| {
                let mut d = delta_feature(&w[1].1, &w[0].1).expect("lengths checked in new");
                d.step = w[1].0;
                d
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Frame sent by the legitimate ED.
    H0Authentic,
    /// Frame not sent by the ED.
    H1Attack,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub hypothesis: Hypothesis,
    pub statistic: f64,
}

fn check_pfa(target_pfa: f64) -> Result<(), AuthError> {
    if target_pfa > 0.0 && target_pfa < 1.0 {
        Ok(())
    } else {
        Err(AuthError::InvalidTargetPfa(target_pfa))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NphtDetector {
    pub threshold: f64,
    /// Mean raw statistic over the training deltas (1 if that mean is zero).
    pub statistic_normalizer: f64,
    pub num_taps: usize,
}

impl NphtDetector {
    pub fn statistic(&self, feature: &DeltaFeature) -> Result<f64, AuthError> {
        if feature.value.len() != self.num_taps {
            return Err(AuthError::DimensionMismatch {
                expected: self.num_taps,
                got: feature.value.len(),
            });
        }
        Ok(feature.squared_norm() / self.statistic_normalizer)
    }
}

pub fn train_npht(training: &TrainingSet, target_pfa: f64) -> Result<NphtDetector, AuthError> {
    check_pfa(target_pfa)?;
    if training.len() < 2 {
        return Err(AuthError::InsufficientSamples {
            needed: 2,
            got: training.len(),
        });
    }
    let deltas = training.deltas();
    train_npht_on_deltas(&deltas, target_pfa)
}

pub fn train_npht_on_deltas(deltas: &[DeltaFeature], target_pfa: f64) -> Result<NphtDetector, AuthError> {
    check_pfa(target_pfa)?;
    let first = deltas.first().ok_or(AuthError::InsufficientSamples { needed: 1, got: 0 })?;
    let num_taps = first.value.len();
    let raw: Vec<f64> = deltas.iter().map(DeltaFeature::squared_norm).collect();
    let m = stats::mean(&raw);
    let statistic_normalizer = if m > 0.0 { m } else { 1.0 };
    let normalized: Vec<f64> = raw.iter().map(|r| r / statistic_normalizer).collect();
    Ok(NphtDetector {
        threshold: stats::quantile(&normalized, 1.0 - target_pfa),
        statistic_normalizer,
        num_taps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmParams {
    pub num_components: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_floor")]
    pub variance_floor: f64,
}

fn default_max_iter() -> usize {
    200
}
fn default_tol() -> f64 {
    1e-8
}
fn default_floor() -> f64 {
    1e-6
}

impl GmmParams {
    pub fn new(num_components: usize) -> Self {
        Self {
            num_components,
            max_iter: default_max_iter(),
            tol: default_tol(),
            variance_floor: default_floor(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Diagonal covariance.
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmDetector {
    pub components: Vec<GmmComponent>,
    pub log_likelihood_threshold: f64,
    /// False when EM stopped at `max_iter`; the parameters are the last iterate.
    pub converged: bool,
    /// Mean per-sample training log-likelihood, one entry per E-step.
    pub log_likelihood_trace: Vec<f64>,
}

impl GmmDetector {
    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn dimension(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64, AuthError> {
        if x.len() != self.dimension() {
            return Err(AuthError::DimensionMismatch {
                expected: self.dimension(),
                got: x.len(),
            });
        }
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + log_gaussian_diag(x, &c.mean, &c.variance))
            .collect();
        Ok(log_sum_exp(&terms))
    }
}

fn log_gaussian_diag(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    const LN_2PI: f64 = 1.837_877_066_409_345_5;
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((xi, mi), vi)| -0.5 * (LN_2PI + vi.ln() + (xi - mi) * (xi - mi) / vi))
        .sum()
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Fits a diagonal GMM by EM and sets the likelihood threshold at the
/// `target_pfa` quantile of the training log-likelihoods.
///
/// Initial means are taken at evenly spaced quantiles of the samples ordered
/// by coordinate sum, which makes training deterministic.
pub fn train_gmm(data: &[Vec<f64>], params: &GmmParams, target_pfa: f64) -> Result<GmmDetector, AuthError> {
    check_pfa(target_pfa)?;
    let k = params.num_components;
    if k == 0 {
        return Err(AuthError::InvalidParameter("num_components must be at least 1".into()));
    }
    if !(params.variance_floor > 0.0) {
        return Err(AuthError::InvalidParameter("variance_floor must be positive".into()));
    }
    if params.max_iter == 0 {
        return Err(AuthError::InvalidParameter("max_iter must be at least 1".into()));
    }
    let n = data.len();
    if n < 10 * k {
        return Err(AuthError::InsufficientSamples { needed: 10 * k, got: n });
    }
    let dim = data[0].len();
    if dim == 0 {
        return Err(AuthError::InvalidParameter("zero-dimensional features".into()));
    }
    if let Some(bad) = data.iter().find(|x| x.len() != dim) {
        return Err(AuthError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }

    let floor = params.variance_floor;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| data[a].iter().sum::<f64>().total_cmp(&data[b].iter().sum::<f64>()));
    let global_mean: Vec<f64> = (0..dim)
        .map(|d| data.iter().map(|x| x[d]).sum::<f64>() / n as f64)
        .collect();
    let global_var: Vec<f64> = (0..dim)
        .map(|d| {
            (data.iter().map(|x| (x[d] - global_mean[d]).powi(2)).sum::<f64>() / n as f64).max(floor)
        })
        .collect();
    let mut components: Vec<GmmComponent> = (0..k)
        .map(|j| GmmComponent {
            weight: 1.0 / k as f64,
            mean: if k == 1 {
                global_mean.clone()
            } else {
                data[order[((2 * j + 1) * n) / (2 * k)]].clone()
            },
            variance: global_var.clone(),
        })
        .collect();

    let mut resp = vec![vec![0.0; k]; n];
    let e_step = |components: &[GmmComponent], resp: &mut [Vec<f64>]| -> f64 {
        let mut total = 0.0;
        for (x, r) in data.iter().zip(resp.iter_mut()) {
            for (rj, c) in r.iter_mut().zip(components) {
                *rj = c.weight.ln() + log_gaussian_diag(x, &c.mean, &c.variance);
            }
            let lse = log_sum_exp(r);
            total += lse;
            for rj in r.iter_mut() {
                *rj = (*rj - lse).exp();
            }
        }
        total / n as f64
    };

    let mut trace = vec![e_step(&components, &mut resp)];
    let mut converged = false;
    for _ in 0..params.max_iter {
        for (j, c) in components.iter_mut().enumerate() {
            let nk: f64 = resp.iter().map(|r| r[j]).sum();
            c.weight = nk / n as f64;
            if nk < 1e-12 {
                continue;
            }
            for d in 0..dim {
                let m = resp.iter().zip(data).map(|(r, x)| r[j] * x[d]).sum::<f64>() / nk;
                let v = resp
                    .iter()
                    .zip(data)
                    .map(|(r, x)| r[j] * (x[d] - m).powi(2))
                    .sum::<f64>()
                    / nk;
                c.mean[d] = m;
                c.variance[d] = v.max(floor);
            }
        }
        let ll = e_step(&components, &mut resp);
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(ll);
        if (ll - prev).abs() < params.tol {
            converged = true;
            break;
        }
    }

    let mut detector = GmmDetector {
        components,
        log_likelihood_threshold: 0.0,
        converged,
        log_likelihood_trace: trace,
    };
    let lls: Vec<f64> = data
        .iter()
        .map(|x| detector.log_likelihood(x))
        .collect::<Result<_, _>>()?;
    detector.log_likelihood_threshold = stats::quantile(&lls, target_pfa);
    Ok(detector)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Detector {
    Npht(NphtDetector),
    Gmm(GmmDetector),
}

impl Detector {
    pub fn decide(&self, feature: &DeltaFeature) -> Result<Decision, AuthError> {
        match self {
            Detector::Npht(d) => {
                let statistic = d.statistic(feature)?;
                let hypothesis = if statistic > d.threshold {
                    Hypothesis::H1Attack
                } else {
                    Hypothesis::H0Authentic
                };
                Ok(Decision { hypothesis, statistic })
            }
            Detector::Gmm(d) => {
                let statistic = d.log_likelihood(&feature.value)?;
                let hypothesis = if statistic < d.log_likelihood_threshold {
                    Hypothesis::H1Attack
                } else {
                    Hypothesis::H0Authentic
                };
                Ok(Decision { hypothesis, statistic })
            }
        }
    }

    /// Statistic oriented so that larger means more suspicious (the GMM
    /// log-likelihood is negated). Used for ROC sweeps.
    pub fn anomaly_score(&self, feature: &DeltaFeature) -> Result<f64, AuthError> {
        match self {
            Detector::Npht(d) => d.statistic(feature),
            Detector::Gmm(d) => d.log_likelihood(&feature.value).map(|ll| -ll),
        }
    }

    pub fn family(&self) -> DetectorKind {
        match self {
            Detector::Npht(_) => DetectorKind::Npht,
            Detector::Gmm(_) => DetectorKind::Gmm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Npht,
    Gmm,
}

/// Detector settings as they appear in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuthConfig {
    pub detector: DetectorKind,
    pub target_pfa: f64,
    /// Number of authentic training frames `T`.
    pub training_len: usize,
    /// Authentic and spoofed test frames per trial.
    pub test_len: usize,
    #[serde(default)]
    pub gmm: Option<GmmParams>,
    /// Retrain on the most recent `training_len` authentic frames every this
    /// many accepted frames. `None` relies on the delta feature alone.
    #[serde(default)]
    pub retrain_interval: Option<usize>,
}

impl AuthConfig {
    pub fn npht(target_pfa: f64, training_len: usize, test_len: usize) -> Self {
        Self {
            detector: DetectorKind::Npht,
            target_pfa,
            training_len,
            test_len,
            gmm: None,
            retrain_interval: None,
        }
    }

    pub fn validate(&self) -> Result<(), AuthError> {
        check_pfa(self.target_pfa)?;
        if self.training_len < 2 {
            return Err(AuthError::InsufficientSamples {
                needed: 2,
                got: self.training_len,
            });
        }
        if self.test_len == 0 {
            return Err(AuthError::InvalidParameter("test_len must be positive".into()));
        }
        if self.retrain_interval == Some(0) {
            return Err(AuthError::InvalidParameter("retrain_interval must be positive".into()));
        }
        Ok(())
    }

    pub fn train(&self, training: &TrainingSet) -> Result<Detector, AuthError> {
        match self.detector {
            DetectorKind::Npht => train_npht(training, self.target_pfa).map(Detector::Npht),
            DetectorKind::Gmm => {
                let params = self.gmm.clone().unwrap_or_else(|| GmmParams::new(2));
                let data: Vec<Vec<f64>> = training.deltas().into_iter().map(|d| d.value).collect();
                train_gmm(&data, &params, self.target_pfa).map(Detector::Gmm)
            }
        }
    }
}

/// A trained detector in operation at the AP. It judges each frame against
/// the most recent authentic estimate and, with `retrain_interval` set,
/// refits on the latest `training_len` authentic estimates.
#[derive(Debug, Clone)]
pub struct Authenticator {
    config: AuthConfig,
    detector: Detector,
    history: VecDeque<(u64, Vec<Complex64>)>,
    coherence_steps: u64,
    since_retrain: usize,
    retrain_count: usize,
}

impl Authenticator {
    /// Trains on `estimates`, which must be step-ordered authentic frames.
    pub fn train(
        config: &AuthConfig,
        estimates: Vec<(u64, Vec<Complex64>)>,
        coherence_steps: u64,
    ) -> Result<Self, AuthError> {
        config.validate()?;
        let training = TrainingSet::new(estimates, coherence_steps)?;
        let detector = config.train(&training)?;
        Ok(Self {
            config: config.clone(),
            detector,
            history: training.estimates.into(),
            coherence_steps,
            since_retrain: 0,
            retrain_count: 0,
        })
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn retrain_count(&self) -> usize {
        self.retrain_count
    }

    fn feature(&self, step: u64, estimate: &[Complex64]) -> Result<DeltaFeature, AuthError> {
        let (prev_step, prev) = self.history.back().ok_or(AuthError::EmptyInput)?;
        check_spacing(*prev_step, step, self.coherence_steps)?;
        let mut d = delta_feature(estimate, prev)?;
        d.step = step;
        Ok(d)
    }

    pub fn judge(&self, step: u64, estimate: &[Complex64]) -> Result<Decision, AuthError> {
        self.detector.decide(&self.feature(step, estimate)?)
    }

    pub fn score(&self, step: u64, estimate: &[Complex64]) -> Result<f64, AuthError> {
        self.detector.anomaly_score(&self.feature(step, estimate)?)
    }

    /// Records a frame known to be authentic (e.g. its MAC verified).
    pub fn accept_authentic(&mut self, step: u64, estimate: Vec<Complex64>) -> Result<(), AuthError> {
        if let Some((prev, _)) = self.history.back() {
            check_spacing(*prev, step, self.coherence_steps)?;
        }
        self.history.push_back((step, estimate));
        while self.history.len() > self.config.training_len {
            self.history.pop_front();
        }
        self.since_retrain += 1;
        if let Some(interval) = self.config.retrain_interval {
            if self.since_retrain >= interval {
                let training = TrainingSet {
                    estimates: self.history.iter().cloned().collect(),
                    coherence_steps: self.coherence_steps,
                };
                self.detector = self.config.train(&training)?;
                self.since_retrain = 0;
                self.retrain_count += 1;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub p_fa: f64,
    pub p_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Sorted by increasing `p_fa` (and `p_d`).
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// Best detection probability among operating points with `p_fa <= max_pfa`.
    pub fn p_d_at(&self, max_pfa: f64) -> f64 {
        self.points
            .iter()
            .filter(|p| p.p_fa <= max_pfa)
            .map(|p| p.p_d)
            .fold(0.0, f64::max)
    }

    /// CSV with columns `threshold,p_fa,p_d` and a final `summary` row.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
        w.write_record(["threshold", "p_fa", "p_d"])?;
        for p in &self.points {
            w.write_record([p.threshold.to_string(), p.p_fa.to_string(), p.p_d.to_string()])?;
        }
        w.write_record([
            "summary".to_string(),
            format!("auc={}", self.auc),
            format!("p_d_at_pfa_0.05={}", self.p_d_at(0.05)),
            format!("p_d_at_pfa_0.01={}", self.p_d_at(0.01)),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Sweeps the decision threshold over every distinct score.
///
/// Scores are oriented so a frame is flagged when `score > threshold`. The
/// sweep includes `-inf` (everything flagged) so the curve spans (0,0) to (1,1).
pub fn evaluate_roc(authentic: &[f64], attack: &[f64]) -> Result<RocCurve, AuthError> {
    if authentic.is_empty() || attack.is_empty() {
        return Err(AuthError::EmptyInput);
    }
    let mut auth_sorted = authentic.to_vec();
    auth_sorted.sort_by(f64::total_cmp);
    let mut att_sorted = attack.to_vec();
    att_sorted.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = auth_sorted.iter().chain(&att_sorted).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.insert(0, f64::NEG_INFINITY);

    let flagged = |sorted: &[f64], t: f64| sorted.len() - sorted.partition_point(|&s| s <= t);
    let mut points: Vec<RocPoint> = thresholds
        .iter()
        .rev()
        .map(|&t| RocPoint {
            threshold: t,
            p_fa: flagged(&auth_sorted, t) as f64 / auth_sorted.len() as f64,
            p_d: flagged(&att_sorted, t) as f64 / att_sorted.len() as f64,
        })
        .collect();
    points.sort_by(|a, b| a.p_fa.total_cmp(&b.p_fa).then(a.p_d.total_cmp(&b.p_d)));
    let auc = points
        .windows(2)
        .map(|w| (w[1].p_fa - w[0].p_fa) * (w[1].p_d + w[0].p_d) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn delta_of_identical_estimates_is_zero() {
        let h = vec![c(1.0, 2.0), c(-0.5, 0.1)];
        assert_eq!(delta_feature(&h, &h).unwrap().value, vec![0.0, 0.0]);
    }

    #[test]
    fn delta_of_unit_shift() {
        let prev = vec![c(0.3, -0.2), c(1.0, 1.0)];
        let mut now = prev.clone();
        now[0] += c(1.0, 0.0);
        let d = delta_feature(&now, &prev).unwrap();
        assert!((d.value[0] - 1.0).abs() < 1e-12);
        assert_eq!(d.value[1], 0.0);
    }

    #[test]
    fn delta_length_mismatch() {
        assert_eq!(
            delta_feature(&[c(0.0, 0.0)], &[]),
            Err(AuthError::LengthMismatch(1, 0))
        );
    }

    #[test]
    fn training_set_enforces_coherence() {
        let h = vec![c(1.0, 0.0)];
        assert!(TrainingSet::new(vec![(0, h.clone()), (3, h.clone())], 3).is_ok());
        assert_eq!(
            TrainingSet::new(vec![(0, h.clone()), (4, h.clone())], 3),
            Err(AuthError::CoherenceViolation { prev: 0, now: 4, coherence_steps: 3 })
        );
        assert!(matches!(
            TrainingSet::new(vec![(2, h.clone()), (2, h)], 3),
            Err(AuthError::NonIncreasingSteps { .. })
        ));
    }

    fn constant_training(t: usize) -> TrainingSet {
        TrainingSet::new((0..t as u64).map(|k| (k, vec![c(0.5, 0.5); 2])).collect(), 1).unwrap()
    }

    #[test]
    fn constant_training_gives_zero_threshold() {
        let det = Detector::Npht(train_npht(&constant_training(20), 0.05).unwrap());
        let Detector::Npht(inner) = &det else { unreachable!() };
        assert_eq!(inner.threshold, 0.0);
        let zero = DeltaFeature { value: vec![0.0, 0.0], step: 0 };
        assert_eq!(det.decide(&zero).unwrap().hypothesis, Hypothesis::H0Authentic);
        let tiny = DeltaFeature { value: vec![1e-9, 0.0], step: 0 };
        assert_eq!(det.decide(&tiny).unwrap().hypothesis, Hypothesis::H1Attack);
    }

    #[test]
    fn half_pfa_threshold_is_median() {
        let mut rng = rng_from_seed(5);
        let est: Vec<(u64, Vec<Complex64>)> = (0..101u64)
            .map(|k| (k, vec![c(rng.sample(StandardNormal), rng.sample(StandardNormal))]))
            .collect();
        let ts = TrainingSet::new(est, 1).unwrap();
        let det = train_npht(&ts, 0.5).unwrap();
        let stats: Vec<f64> = ts
            .deltas()
            .iter()
            .map(|d| det.statistic(d).unwrap())
            .collect();
        assert!((det.threshold - stats::quantile(&stats, 0.5)).abs() < 1e-12);
    }

    #[test]
    fn npht_rejects_bad_inputs() {
        assert!(matches!(
            train_npht(&constant_training(1), 0.05),
            Err(AuthError::InsufficientSamples { .. })
        ));
        assert_eq!(
            train_npht(&constant_training(5), 1.0),
            Err(AuthError::InvalidTargetPfa(1.0))
        );
    }

    #[test]
    fn gross_exceedance_is_attack() {
        let mut rng = rng_from_seed(6);
        let est = (0..50u64)
            .map(|k| (k, vec![c(rng.sample(StandardNormal), 0.0)]))
            .collect();
        let det = train_npht(&TrainingSet::new(est, 1).unwrap(), 0.05).unwrap();
        let target = 10.0 * det.threshold * det.statistic_normalizer;
        let f = DeltaFeature { value: vec![target.sqrt()], step: 0 };
        let d = Detector::Npht(det).decide(&f).unwrap();
        assert_eq!(d.hypothesis, Hypothesis::H1Attack);
    }

    #[test]
    fn tie_at_threshold_is_authentic() {
        let det = NphtDetector { threshold: 4.0, statistic_normalizer: 1.0, num_taps: 1 };
        let f = DeltaFeature { value: vec![2.0], step: 0 };
        let d = Detector::Npht(det).decide(&f).unwrap();
        assert_eq!(d.statistic, 4.0);
        assert_eq!(d.hypothesis, Hypothesis::H0Authentic);
    }

    #[test]
    fn dimension_mismatch_reported() {
        let det = Detector::Npht(NphtDetector { threshold: 1.0, statistic_normalizer: 1.0, num_taps: 3 });
        let f = DeltaFeature { value: vec![1.0], step: 0 };
        assert_eq!(
            det.decide(&f),
            Err(AuthError::DimensionMismatch { expected: 3, got: 1 })
        );
    }

    #[test]
    fn single_component_on_constant_data() {
        let data = vec![vec![2.5, -1.0]; 30];
        let g = train_gmm(&data, &GmmParams::new(1), 0.05).unwrap();
        assert_eq!(g.components[0].mean, vec![2.5, -1.0]);
        assert_eq!(g.components[0].variance, vec![1e-6, 1e-6]);
        assert!((g.components[0].weight - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gmm_needs_ten_samples_per_component() {
        let data = vec![vec![1.0]; 19];
        assert_eq!(
            train_gmm(&data, &GmmParams::new(2), 0.05).unwrap_err(),
            AuthError::InsufficientSamples { needed: 20, got: 19 }
        );
    }

    #[test]
    fn gmm_flags_outlier() {
        let mut rng = rng_from_seed(7);
        let data: Vec<Vec<f64>> = (0..500)
            .map(|_| vec![rng.sample::<f64, _>(StandardNormal) * 0.1])
            .collect();
        let det = Detector::Gmm(train_gmm(&data, &GmmParams::new(2), 0.05).unwrap());
        let normal = DeltaFeature { value: vec![0.0], step: 0 };
        let outlier = DeltaFeature { value: vec![3.0], step: 0 };
        assert_eq!(det.decide(&normal).unwrap().hypothesis, Hypothesis::H0Authentic);
        assert_eq!(det.decide(&outlier).unwrap().hypothesis, Hypothesis::H1Attack);
        assert!(det.anomaly_score(&outlier).unwrap() > det.anomaly_score(&normal).unwrap());
    }

    #[test]
    fn non_convergence_is_flagged() {
        let mut rng = rng_from_seed(8);
        let data: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.sample::<f64, _>(StandardNormal)])
            .collect();
        let params = GmmParams { max_iter: 1, tol: 0.0, ..GmmParams::new(3) };
        let g = train_gmm(&data, &params, 0.05).unwrap();
        assert!(!g.converged);
        assert_eq!(g.log_likelihood_trace.len(), 2);
    }

    #[test]
    fn roc_perfect_separation() {
        let roc = evaluate_roc(&[0.1, 0.2, 0.3], &[1.0, 2.0]).unwrap();
        assert_eq!(roc.auc, 1.0);
        assert!(roc.points.iter().any(|p| p.p_fa == 0.0 && p.p_d == 1.0));
        assert_eq!(roc.points.first().map(|p| (p.p_fa, p.p_d)), Some((0.0, 0.0)));
        assert_eq!(roc.points.last().map(|p| (p.p_fa, p.p_d)), Some((1.0, 1.0)));
    }

    #[test]
    fn roc_single_pair() {
        let roc = evaluate_roc(&[1.0], &[2.0]).unwrap();
        assert!(roc.points.iter().any(|p| p.p_fa == 0.0 && p.p_d == 1.0));
        assert_eq!(roc.p_d_at(0.05), 1.0);
    }

    #[test]
    fn roc_empty_inputs() {
        assert_eq!(evaluate_roc(&[], &[1.0]), Err(AuthError::EmptyInput));
        assert_eq!(evaluate_roc(&[1.0], &[]), Err(AuthError::EmptyInput));
    }

    #[test]
    fn roc_csv_has_summary_row() {
        let roc = evaluate_roc(&[1.0], &[2.0]).unwrap();
        let mut buf = Vec::new();
        roc.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("threshold,p_fa,p_d\n"));
        assert!(text.trim_end().ends_with("summary,auc=1,p_d_at_pfa_0.05=1,p_d_at_pfa_0.01=1"));
    }

    #[test]
    fn authenticator_tracks_and_retrains() {
        let est = |step: u64, v: f64| (step, vec![Complex64::new(v, 0.0); 2]);
        let training: Vec<_> = (0..20).map(|k| est(k, (k as f64 * 0.7).sin() * 0.1)).collect();
        let mut cfg = AuthConfig::npht(0.1, 20, 10);
        cfg.retrain_interval = Some(5);
        let mut auth = Authenticator::train(&cfg, training, 4).unwrap();
        assert_eq!(auth.judge(20, &[Complex64::new(5.0, 0.0); 2]).unwrap().hypothesis, Hypothesis::H1Attack);
        assert!(matches!(
            auth.judge(30, &[Complex64::new(0.0, 0.0); 2]),
            Err(AuthError::CoherenceViolation { .. })
        ));
        for k in 20..30 {
            auth.accept_authentic(k, est(k, (k as f64 * 0.7).sin() * 0.1).1).unwrap();
        }
        assert_eq!(auth.retrain_count(), 2);
        assert_eq!(
            auth.accept_authentic(29, vec![Complex64::new(0.0, 0.0); 2]),
            Err(AuthError::NonIncreasingSteps { prev: 29, now: 29 })
        );
    }
}
