//! Experiment runner: strict JSON configs, seeded trials (optionally in
//! parallel), aggregated tables, and atomically written CSV outputs.
//!
//! Every trial draws its randomness from `derive_seed(master, scenario, i)`,
//! so results do not depend on the number of worker threads. Rows are
//! merged in trial order.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attacker::{run_script, spoof_trial, AttackAction, AttackOutcome, AttackerConfig};
use crate::auth::{evaluate_roc, AuthConfig};
use crate::channel::{ChannelParams, ChannelTrace};
use crate::plugtrust::{initial_auth, session_handshake, Endpoint, KeyUpdater, Role, SignalingComparison, SimLink, SimPki};
use crate::secure_channel::overhead_sweep;
use crate::skg::{run_skg_detailed, SkgConfig};
use crate::stats::{self, derive_seed};

pub const TOOL_NAME: &str = "physec-lab";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[serde(alias = "SkgSweep")]
    SkgSweep,
    #[serde(alias = "AuthRoc")]
    AuthRoc,
    #[serde(alias = "OverheadSweep")]
    OverheadSweep,
    #[serde(alias = "ProtocolRun")]
    ProtocolRun,
    #[serde(alias = "AttackSuite")]
    AttackSuite,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::SkgSweep => "skg_sweep",
            Scenario::AuthRoc => "auth_roc",
            Scenario::OverheadSweep => "overhead_sweep",
            Scenario::ProtocolRun => "protocol_run",
            Scenario::AttackSuite => "attack_suite",
        }
    }
}

/// Sweep axes. Empty lists fall back to the single value in the base config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub snr_db: Vec<f64>,
    #[serde(default)]
    pub correlations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverheadConfig {
    pub l_bits: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    #[serde(default)]
    pub loss_probability: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_retries() -> u32 {
    3
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            loss_probability: 0.0,
            max_retries: default_retries(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skg: Option<SkgConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth: Option<AuthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attacker: Option<AttackerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overhead: Option<OverheadConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolConfig>,
    #[serde(default)]
    pub sweep: SweepConfig,
    pub trials: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("at `{path}` (line {line}, column {column}): {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("`{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config(_))
    }
}

fn runtime(e: impl ToString) -> HarnessError {
    HarnessError::Runtime(e.to_string())
}

/// Parses and checks a JSON config. Unknown keys are rejected with their path.
pub fn validate_config(raw: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(raw);
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ConfigError::Parse {
            path,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.trials == 0 {
            return Err(invalid("trials", "must be positive"));
        }
        if let Some(ch) = &self.channel {
            ch.clone().validated().map_err(|e| invalid("channel", e))?;
        }
        if let Some(skg) = &self.skg {
            skg.validate().map_err(|e| invalid("skg", e))?;
        }
        if let Some(auth) = &self.auth {
            auth.validate().map_err(|e| invalid("auth", e))?;
        }
        if let Some(att) = &self.attacker {
            att.validate().map_err(|e| invalid("attacker", e))?;
        }
        if let Some(p) = &self.protocol {
            if !(0.0..1.0).contains(&p.loss_probability) {
                return Err(invalid("protocol.loss_probability", "must be in [0, 1)"));
            }
        }
        if self.sweep.snr_db.iter().any(|s| s.is_nan()) {
            return Err(invalid("sweep.snr_db", "NaN entry"));
        }
        if let Some(c) = self.sweep.correlations.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(invalid("sweep.correlations", format!("{c} outside [0, 1]")));
        }
        let need = |present: bool, field: &str| {
            if present {
                Ok(())
            } else {
                Err(invalid(field, format!("required for scenario {}", self.scenario.as_str())))
            }
        };
        match self.scenario {
            Scenario::SkgSweep => {
                need(self.channel.is_some(), "channel")?;
                need(self.skg.is_some(), "skg")?;
            }
            Scenario::AuthRoc => {
                need(self.channel.is_some(), "channel")?;
                need(self.auth.is_some(), "auth")?;
            }
            Scenario::OverheadSweep => {
                need(self.overhead.is_some(), "overhead")?;
                let o = self.overhead.as_ref().expect("checked");
                if o.l_bits == 0 || o.n_min == 0 || o.step == 0 || o.n_min > o.n_max {
                    return Err(invalid(
                        "overhead",
                        "need l_bits, n_min, step > 0 and n_min <= n_max",
                    ));
                }
            }
            Scenario::ProtocolRun => {
                if self.skg.is_some() {
                    need(self.channel.is_some(), "channel")?;
                }
            }
            Scenario::AttackSuite => {
                need(self.channel.is_some(), "channel")?;
                let att = self.attacker.as_ref();
                need(att.is_some(), "attacker")?;
                let script = &att.expect("checked").script;
                if script.is_empty() {
                    return Err(invalid("attacker.script", "empty script"));
                }
                if script.contains(&AttackAction::Eavesdrop) {
                    need(self.skg.is_some(), "skg")?;
                }
                if script.iter().any(|a| matches!(a, AttackAction::SpoofFrame { .. })) {
                    need(self.auth.is_some(), "auth")?;
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the effective config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }

    fn channel(&self) -> ChannelParams {
        self.channel.clone().expect("validated").validated().expect("validated")
    }
}

/// A CSV table; rows may be shorter or longer than the header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Mean, population std and 95% CI half-width of one metric over a group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub group: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci95: f64,
}

impl Aggregate {
    fn of(group: impl ToString, metric: &str, xs: &[f64]) -> Self {
        Self {
            group: group.to_string(),
            metric: metric.to_string(),
            n: xs.len(),
            mean: stats::mean(xs),
            std: stats::std_dev(xs),
            ci95: stats::ci95_half_width(xs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    /// Per-trial records first, then any derived tables.
    pub tables: Vec<Table>,
    pub summary: Vec<Aggregate>,
}

impl ScenarioResult {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn aggregate(&self, group: &str, metric: &str) -> Option<&Aggregate> {
        self.summary.iter().find(|a| a.group == group && a.metric == metric)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads for trials; 1 runs serially.
    pub parallel: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { parallel: 1 }
    }
}

fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        x.to_string()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn par_trials<T: Send>(
    n: u64,
    opts: RunOptions,
    f: impl Fn(u64) -> Result<T, HarnessError> + Sync + Send,
) -> Result<Vec<T>, HarnessError> {
    if opts.parallel <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallel)
        .build()
        .map_err(runtime)?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

pub fn run(config: &ExperimentConfig, opts: RunOptions) -> Result<ScenarioResult, HarnessError> {
    config.validate()?;
    match config.scenario {
        Scenario::SkgSweep => run_skg_sweep(config, opts),
        Scenario::AuthRoc => run_auth_roc(config, opts),
        Scenario::OverheadSweep => run_overhead(config),
        Scenario::ProtocolRun => run_protocol(config, opts),
        Scenario::AttackSuite => run_attack_suite(config, opts),
    }
}

fn run_skg_sweep(config: &ExperimentConfig, opts: RunOptions) -> Result<ScenarioResult, HarnessError> {
    let base = config.channel();
    let skg = config.skg.clone().expect("validated");
    let snrs = if config.sweep.snr_db.is_empty() {
        vec![base.snr_db]
    } else {
        config.sweep.snr_db.clone()
    };
    let mut table = Table::new(
        "skg_trials",
        &["snr_db", "trial", "seed", "bdr", "kgr_bits_per_s", "success", "leaked_bits", "failure"],
    );
    let mut summary = Vec::new();
    for &snr in &snrs {
        let mut params = base.clone();
        params.snr_db = snr;
        // The same trial seeds at every SNR point (common random numbers)
        // keep the comparison between points paired.
        let reports = par_trials(config.trials, opts, |i| {
            let seed = derive_seed(config.seed, "skg_sweep", i);
            let trace = ChannelTrace::generate(params.clone(), seed, skg.num_measurements).map_err(runtime)?;
            Ok((seed, run_skg_detailed(&trace, &skg).report))
        })?;
        for (i, (seed, r)) in reports.iter().enumerate() {
            table.rows.push(vec![
                fmt_f64(snr),
                i.to_string(),
                seed.to_string(),
                fmt_opt(r.bdr),
                fmt_f64(r.kgr_bits_per_s),
                r.success.to_string(),
                r.leaked_bits.to_string(),
                r.failure.as_ref().map(|e| e.to_string()).unwrap_or_default(),
            ]);
        }
        let group = format!("snr_db={}", fmt_f64(snr));
        let bdrs: Vec<f64> = reports.iter().filter_map(|(_, r)| r.bdr).collect();
        let kgrs: Vec<f64> = reports.iter().map(|(_, r)| r.kgr_bits_per_s).collect();
        let ok: Vec<f64> = reports.iter().map(|(_, r)| f64::from(u8::from(r.success))).collect();
        summary.push(Aggregate::of(&group, "bdr", &bdrs));
        summary.push(Aggregate::of(&group, "kgr_bits_per_s", &kgrs));
        summary.push(Aggregate::of(&group, "success", &ok));
    }
    Ok(ScenarioResult {
        scenario: Scenario::SkgSweep,
        tables: vec![table],
        summary,
    })
}

fn run_auth_roc(config: &ExperimentConfig, opts: RunOptions) -> Result<ScenarioResult, HarnessError> {
    let params = config.channel();
    let auth = config.auth.clone().expect("validated");
    let runs = par_trials(config.trials, opts, |i| {
        let seed = derive_seed(config.seed, "auth_roc", i);
        let run = spoof_trial(&params, &auth, auth.test_len, seed).map_err(runtime)?;
        Ok((seed, run))
    })?;
    let mut trials = Table::new("auth_trials", &["trial", "seed", "false_alarm_rate", "detection_rate"]);
    let mut authentic = Vec::new();
    let mut attack = Vec::new();
    for (i, (seed, run)) in runs.iter().enumerate() {
        trials.rows.push(vec![
            i.to_string(),
            seed.to_string(),
            fmt_f64(run.false_alarm_rate()),
            fmt_f64(run.detection_rate()),
        ]);
        authentic.extend_from_slice(&run.authentic_scores);
        attack.extend_from_slice(&run.spoof_scores);
    }
    let roc = evaluate_roc(&authentic, &attack).map_err(runtime)?;
    let mut roc_table = Table::new("auth_roc", &["threshold", "p_fa", "p_d"]);
    for p in &roc.points {
        roc_table
            .rows
            .push(vec![fmt_f64(p.threshold), fmt_f64(p.p_fa), fmt_f64(p.p_d)]);
    }
    roc_table.rows.push(vec![
        "summary".into(),
        format!("auc={}", fmt_f64(roc.auc)),
        format!("p_d_at_pfa_0.05={}", fmt_f64(roc.p_d_at(0.05))),
        format!("p_d_at_pfa_0.01={}", fmt_f64(roc.p_d_at(0.01))),
    ]);
    let pfa: Vec<f64> = runs.iter().map(|(_, r)| r.false_alarm_rate()).collect();
    let pd: Vec<f64> = runs.iter().map(|(_, r)| r.detection_rate()).collect();
    let summary = vec![
        Aggregate::of("all", "false_alarm_rate", &pfa),
        Aggregate::of("all", "detection_rate", &pd),
        Aggregate::of("all", "auc", &[roc.auc]),
    ];
    Ok(ScenarioResult {
        scenario: Scenario::AuthRoc,
        tables: vec![trials, roc_table],
        summary,
    })
}

fn run_overhead(config: &ExperimentConfig) -> Result<ScenarioResult, HarnessError> {
    let o = config.overhead.as_ref().expect("validated");
    let points = overhead_sweep(o.l_bits, o.n_min, o.n_max, o.step).map_err(runtime)?;
    let mut table = Table::new("overhead", &["n_bits", "l_bits", "moh"]);
    for p in &points {
        table
            .rows
            .push(vec![p.n_bits.to_string(), p.l_bits.to_string(), fmt_f64(p.moh)]);
    }
    let moh: Vec<f64> = points.iter().map(|p| p.moh).collect();
    Ok(ScenarioResult {
        scenario: Scenario::OverheadSweep,
        tables: vec![table],
        summary: vec![Aggregate::of(format!("l_bits={}", o.l_bits), "moh", &moh)],
    })
}

const PKI_VALIDITY: (u64, u64) = (0, u64::MAX);
const PKI_NOW: u64 = 1;

struct ProtocolTrial {
    seed: u64,
    events: Vec<(&'static str, crate::plugtrust::LinkEvent)>,
    paired: bool,
    keys_match: bool,
    handshake_bits: usize,
    abort: Option<String>,
    signaling: Option<(SignalingComparison, bool, u8)>,
}

fn protocol_trial(config: &ExperimentConfig, i: u64) -> Result<ProtocolTrial, HarnessError> {
    let seed = derive_seed(config.seed, "protocol_run", i);
    let proto = config.protocol.clone().unwrap_or_default();
    let pki: SimPki = SimPki::new(1, 10, PKI_VALIDITY, seed);
    let mut ap: Endpoint = Endpoint::new(Role::Ap, pki.device(100), PKI_NOW, derive_seed(seed, "ap", 0));
    let mut ed: Endpoint = Endpoint::new(Role::Ed, pki.device(200), PKI_NOW, derive_seed(seed, "ed", 0));
    let mut link = SimLink::new(proto.loss_probability, proto.max_retries, derive_seed(seed, "link", 0));
    let mut out = ProtocolTrial {
        seed,
        events: Vec::new(),
        paired: false,
        keys_match: false,
        handshake_bits: 0,
        abort: None,
        signaling: None,
    };
    let paired = initial_auth(&mut ap, &mut ed, &mut link);
    out.events
        .extend(link.log().iter().cloned().map(|e| ("initial_auth", e)));
    link.clear_log();
    if let Err(e) = paired {
        out.abort = Some(e.to_string());
        return Ok(out);
    }
    out.paired = true;
    let keys = match session_handshake(&mut ap, &mut ed, &mut link) {
        Ok(k) => k,
        Err(e) => {
            out.events.extend(link.log().iter().cloned().map(|e| ("session", e)));
            out.abort = Some(e.to_string());
            return Ok(out);
        }
    };
    out.keys_match = true;
    out.handshake_bits = link.delivered_bits();
    out.events.extend(link.log().iter().cloned().map(|e| ("session", e)));

    if let Some(skg) = &config.skg {
        let trace = ChannelTrace::generate(config.channel(), derive_seed(seed, "rekey", 0), skg.num_measurements)
            .map_err(runtime)?;
        let outcome = run_skg_detailed(&trace, skg);
        let mut up_ap = KeyUpdater::new(Role::Ap, keys.clone());
        let mut up_ed = KeyUpdater::new(Role::Ed, keys);
        up_ap.rekey_via_skg(&outcome);
        up_ed.rekey_via_skg(&outcome);
        let agreed = up_ap.keys() == up_ed.keys();
        let cmp = SignalingComparison::new(&outcome, skg.amplified_key_bits, out.handshake_bits);
        out.signaling = Some((cmp, outcome.report.success && agreed, up_ap.keys().key_epoch));
    }
    Ok(out)
}

fn run_protocol(config: &ExperimentConfig, opts: RunOptions) -> Result<ScenarioResult, HarnessError> {
    let trials = par_trials(config.trials, opts, |i| protocol_trial(config, i))?;
    let mut per_trial = Table::new(
        "protocol_trials",
        &["trial", "seed", "paired", "keys_match", "handshake_bits", "abort_reason"],
    );
    let mut transcript = Table::new(
        "protocol_transcript",
        &["trial", "phase", "seq", "from", "msg_type", "len_bytes", "delivered"],
    );
    let mut signaling = Table::new(
        "rekey_signaling",
        &[
            "trial",
            "key_bits",
            "skg_syndrome_bits",
            "skg_total_bits",
            "handshake_bits",
            "skg_success",
            "epoch_after",
        ],
    );
    for (i, t) in trials.iter().enumerate() {
        per_trial.rows.push(vec![
            i.to_string(),
            t.seed.to_string(),
            t.paired.to_string(),
            t.keys_match.to_string(),
            t.handshake_bits.to_string(),
            t.abort.clone().unwrap_or_default(),
        ]);
        for (phase, e) in &t.events {
            transcript.rows.push(vec![
                i.to_string(),
                phase.to_string(),
                e.seq.to_string(),
                e.from.to_string(),
                format!("{:#04x}", e.msg_type),
                e.len_bytes.to_string(),
                e.delivered.to_string(),
            ]);
        }
        if let Some((cmp, ok, epoch)) = &t.signaling {
            signaling.rows.push(vec![
                i.to_string(),
                cmp.key_bits.to_string(),
                cmp.skg_syndrome_bits.to_string(),
                cmp.skg_total_bits.to_string(),
                cmp.handshake_bits.to_string(),
                ok.to_string(),
                epoch.to_string(),
            ]);
        }
    }
    let frac = |f: &dyn Fn(&ProtocolTrial) -> bool| -> Vec<f64> {
        trials.iter().map(|t| f64::from(u8::from(f(t)))).collect()
    };
    let mut summary = vec![
        Aggregate::of("all", "paired", &frac(&|t| t.paired)),
        Aggregate::of("all", "keys_match", &frac(&|t| t.keys_match)),
    ];
    let hs: Vec<f64> = trials
        .iter()
        .filter(|t| t.keys_match)
        .map(|t| t.handshake_bits as f64)
        .collect();
    summary.push(Aggregate::of("all", "handshake_bits", &hs));
    let mut tables = vec![per_trial, transcript];
    if !signaling.rows.is_empty() {
        let skg_bits: Vec<f64> = trials
            .iter()
            .filter_map(|t| t.signaling.as_ref())
            .filter(|s| s.1)
            .map(|s| s.0.skg_total_bits as f64)
            .collect();
        summary.push(Aggregate::of("all", "skg_rekey_bits", &skg_bits));
        tables.push(signaling);
    }
    Ok(ScenarioResult {
        scenario: Scenario::ProtocolRun,
        tables,
        summary,
    })
}

fn run_attack_suite(config: &ExperimentConfig, opts: RunOptions) -> Result<ScenarioResult, HarnessError> {
    let base = config.attacker.clone().expect("validated");
    let channel = config.channel();
    let skg = config.skg.clone().unwrap_or_else(|| SkgConfig::new(512, 1));
    let auth = config.auth.clone().unwrap_or_else(|| AuthConfig::npht(0.05, 100, 1));
    let correlations = if config.sweep.correlations.is_empty() {
        vec![base.correlation_to_legit]
    } else {
        config.sweep.correlations.clone()
    };
    let mut table = Table::new(
        "attack_outcomes",
        &[
            "scenario_id",
            "correlation",
            "snr_db",
            "key_bit_agreement",
            "spoof_detection_rate",
            "replay_rejection_rate",
        ],
    );
    let mut summary = Vec::new();
    for (ci, &corr) in correlations.iter().enumerate() {
        let attacker = AttackerConfig {
            correlation_to_legit: corr,
            ..base.clone()
        };
        let outcomes: Vec<AttackOutcome> = par_trials(config.trials, opts, |i| {
            let seed = derive_seed(config.seed, "attack_suite", i);
            run_script(&attacker, &channel, &skg, &auth, seed).map_err(runtime)
        })?;
        for (i, o) in outcomes.iter().enumerate() {
            table.rows.push(vec![
                format!("c{ci}-t{i}"),
                fmt_f64(corr),
                fmt_f64(attacker.snr_db),
                fmt_opt(o.key_bit_agreement),
                fmt_opt(o.spoof_detection_rate),
                fmt_opt(o.replay_rejection_rate),
            ]);
        }
        let group = format!("correlation={}", fmt_f64(corr));
        let metrics: [(&str, fn(&AttackOutcome) -> Option<f64>); 4] = [
            ("key_bit_agreement", |o| o.key_bit_agreement),
            ("amplified_key_agreement", |o| o.amplified_key_agreement),
            ("spoof_detection_rate", |o| o.spoof_detection_rate),
            ("replay_rejection_rate", |o| o.replay_rejection_rate),
        ];
        for (name, get) in metrics {
            let xs: Vec<f64> = outcomes.iter().filter_map(get).collect();
            if !xs.is_empty() {
                summary.push(Aggregate::of(&group, name, &xs));
            }
        }
    }
    Ok(ScenarioResult {
        scenario: Scenario::AttackSuite,
        tables: vec![table],
        summary,
    })
}

/// The `#` line heading every output file.
pub fn metadata_line(config: &ExperimentConfig) -> String {
    format!(
        "# tool={TOOL_NAME} version={TOOL_VERSION} scenario={} seed={} config_sha256={}",
        config.scenario.as_str(),
        config.seed,
        config.hash()
    )
}

pub fn summary_table(result: &ScenarioResult) -> Table {
    let mut t = Table::new(
        &format!("{}_summary", result.scenario.as_str()),
        &["group", "metric", "n", "mean", "std", "ci95"],
    );
    for a in &result.summary {
        t.rows.push(vec![
            a.group.clone(),
            a.metric.clone(),
            a.n.to_string(),
            fmt_f64(a.mean),
            fmt_f64(a.std),
            fmt_f64(a.ci95),
        ]);
    }
    t
}

pub fn render_csv(meta: &str, table: &Table) -> String {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    w.write_record(&table.header).expect("in-memory write");
    for row in &table.rows {
        w.write_record(row).expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields");
    let mut out = String::with_capacity(meta.len() + body.len() + 1);
    let _ = writeln!(out, "{meta}");
    out.push_str(&body);
    out
}

/// Writes `contents` via a temporary file in the same directory and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    let io = |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Writes every table of `result` plus the summary into `out_dir`.
pub fn write_outputs(
    config: &ExperimentConfig,
    result: &ScenarioResult,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    let meta = metadata_line(config);
    let mut written = Vec::new();
    let summary = summary_table(result);
    for table in result.tables.iter().chain(std::iter::once(&summary)) {
        let path = out_dir.join(format!("{}.csv", table.name));
        write_atomic(&path, render_csv(&meta, table).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
