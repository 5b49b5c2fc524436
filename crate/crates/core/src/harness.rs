//! Experiment orchestration: sweeps over `(K, μ)`, ensemble statistics against
//! the closed-form predictions, and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gillespie::{
    self, Condition, PopulationState, ReplicaRecord, RunConfig, SimError, StopRule, Terminal, Watch,
};
use crate::model::{derive_landscape, Kernel, ModelError, ModelParams, DEFAULT_DISTINCT_TOL};
use crate::rng::Seed;
use crate::stats::{self, KsResult, Summary};
use crate::theory::{self, Regime, RegimePrediction, TheoryError};
use crate::tropical::{self, ConvergenceReport, TropicalError, TropicalPath};

pub const MIN_RESOLVED: u64 = 30;
pub const MIN_HORIZON_MULTIPLE: f64 = 5.0;
pub const DEFAULT_HORIZON_MULTIPLE: f64 = 20.0;
pub const DEFAULT_EPSILON: f64 = 0.1;

/// Finite-size tolerances, set by pilot runs.
pub const LOGK_RATIO_BAND: (f64, f64) = (0.8, 1.25);
pub const CV_BAND: (f64, f64) = (0.8, 1.2);
pub const MEAN_RATIO_TOL: f64 = 0.35;
pub const EXTINCTION_LEVEL: f64 = 0.95;
/// Largest extrapolated sup distance accepted as convergence to the limit path.
pub const LIMIT_TOL: f64 = 0.25;

/// Column contract of `summary.csv` for ensemble experiments.
pub const SUMMARY_COLUMNS: &[&str] = &[
    "point",
    "k",
    "mu",
    "regime",
    "alpha",
    "epsilon",
    "replicas",
    "resolved",
    "inconclusive",
    "clock",
    "predicted",
    "mean_normalized",
    "median_normalized",
    "ks_distance",
    "ks_critical",
    "cv",
    "extinct_before_crossing",
];

/// Column contract of `summary.csv` for tropical experiments.
pub const TROPICAL_COLUMNS: &[&str] = &["mu", "sup_distance", "argmax_t", "argmax_trait"];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{source_name}:{line}:{column}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("point {point}: horizon {horizon} is below {MIN_HORIZON_MULTIPLE}x the predicted scale {scale}")]
    HorizonTooShort {
        point: usize,
        horizon: f64,
        scale: f64,
    },
    #[error("point {point}: no prediction to scale the horizon and no fallback given")]
    NoHorizon { point: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Tropical(#[from] TropicalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Crossing,
    Extinction,
    Tropical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonPolicy {
    Absolute(f64),
    /// Multiple of the predicted time scale; `fallback` applies where nothing is predicted.
    Scaled {
        multiple: f64,
        fallback: Option<f64>,
    },
}

impl Default for HorizonPolicy {
    fn default() -> Self {
        HorizonPolicy::Scaled {
            multiple: DEFAULT_HORIZON_MULTIPLE,
            fallback: None,
        }
    }
}

/// Points are every `K` paired with every listed `μ`, then with `μ = K^{-1/α}` for every listed `α`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub k: Vec<u64>,
    #[serde(default)]
    pub mu: Vec<f64>,
    #[serde(default)]
    pub alpha: Vec<f64>,
}

impl Sweep {
    pub fn points(&self) -> Vec<(u64, f64)> {
        let mut out = Vec::new();
        for &k in &self.k {
            out.extend(self.mu.iter().map(|&mu| (k, mu)));
            out.extend(self.alpha.iter().map(|&a| (k, (k as f64).powf(-1.0 / a))));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TropicalSweep {
    /// Decreasing mutation probabilities.
    pub mu: Vec<f64>,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    /// Overrides the model's kernel.
    #[serde(default)]
    pub kernel: Option<Kernel>,
}

fn default_t_end() -> f64 {
    10.0
}

fn default_step() -> f64 {
    0.05
}

fn default_replicas() -> u64 {
    200
}

fn default_epsilons() -> Vec<f64> {
    vec![DEFAULT_EPSILON]
}

fn default_threads() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub kind: ExperimentKind,
    /// Template; `K` and `μ` are overwritten per point.
    pub model: ModelParams,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default = "default_replicas")]
    pub replicas: u64,
    #[serde(default)]
    pub horizon: HorizonPolicy,
    /// Fixation thresholds `(x̄_L - ε) K`; the first is primary, the rest are sensitivity reruns.
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    /// Extra watched levels, reported alongside the built-in stopping times.
    #[serde(default)]
    pub watches: Vec<Watch>,
    pub master_seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub tropical: Option<TropicalSweep>,
}

/// Maps a serde error to a positioned parse error.
fn parse_error(source_name: &str, e: serde_json::Error) -> HarnessError {
    HarnessError::Parse {
        source_name: source_name.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

impl ExperimentPlan {
    pub fn from_json(text: &str, source_name: &str) -> Result<Self, HarnessError> {
        let plan: ExperimentPlan =
            serde_json::from_str(text).map_err(|e| parse_error(source_name, e))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_json(&read(path)?, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Plan(m));
        self.model.validate()?;
        if self.replicas == 0 {
            return bad("replicas must be positive".into());
        }
        if self.threads == 0 {
            return bad("threads must be positive".into());
        }
        match self.horizon {
            HorizonPolicy::Absolute(h) if !(h > 0.0 && h.is_finite()) => {
                return bad(format!("absolute horizon must be positive (got {h})"));
            }
            HorizonPolicy::Scaled { multiple, fallback } => {
                if !(multiple >= MIN_HORIZON_MULTIPLE) {
                    return bad(format!(
                        "horizon multiple must be at least {MIN_HORIZON_MULTIPLE} (got {multiple})"
                    ));
                }
                if fallback.is_some_and(|h| !(h > 0.0 && h.is_finite())) {
                    return bad("fallback horizon must be positive".into());
                }
            }
            _ => {}
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|&e| !(e > 0.0)) {
            return bad("epsilons must be a nonempty list of positive values".into());
        }
        match self.kind {
            ExperimentKind::Tropical => {
                let Some(t) = &self.tropical else {
                    return bad("a tropical experiment needs a `tropical` sweep".into());
                };
                if t.mu.is_empty() || t.mu.iter().any(|&m| !(m > 0.0 && m < 1.0)) {
                    return bad("tropical mu list must be nonempty with values in (0, 1)".into());
                }
                if t.mu.windows(2).any(|w| w[1] >= w[0]) {
                    return bad("tropical mu list must be strictly decreasing".into());
                }
                if !(t.t_end > 0.0 && t.step > 0.0 && t.step <= t.t_end) {
                    return bad("tropical grid needs 0 < step <= t_end".into());
                }
            }
            _ => {
                let points = self.sweep.points();
                if points.is_empty() {
                    return bad("sweep has no points (need k and mu or alpha)".into());
                }
                if let Some((k, mu)) = points
                    .iter()
                    .find(|(k, mu)| *k == 0 || !(0.0..=1.0).contains(mu))
                {
                    return bad(format!("sweep point K = {k}, mu = {mu} is out of range"));
                }
            }
        }
        Ok(())
    }

    /// Seed of sweep point `index`, derived from the master seed.
    pub fn point_seed(&self, index: usize) -> u64 {
        Seed::new(self.master_seed)
            .split(u64::MAX - index as u64)
            .rng()
            .next_u64()
    }
}

/// One statistic compared against its limit statement at a finite-size tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub limit: String,
    pub tolerance: String,
    pub value: Option<f64>,
    /// `None` when there is too little data for a verdict.
    pub pass: Option<bool>,
}

impl Check {
    fn new(name: &str, limit: &str, tolerance: String, value: f64, pass: Option<bool>) -> Self {
        Check {
            name: name.into(),
            limit: limit.into(),
            tolerance,
            value: value.is_finite().then_some(value),
            pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStats {
    pub name: String,
    pub count: usize,
    pub summary: Option<Summary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fraction {
    pub count: u64,
    pub n: u64,
    pub estimate: Option<f64>,
    /// Wilson 95% interval.
    pub ci: (f64, f64),
}

impl Fraction {
    fn new(count: u64, n: u64) -> Self {
        Fraction {
            count,
            n,
            estimate: (n > 0).then(|| count as f64 / n as f64),
            ci: stats::wilson_interval(count, n, 1.959964),
        }
    }
}

/// Crossing times on the regime's clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedStats {
    pub epsilon: f64,
    /// `"log K"` or `"K mu^L"`.
    pub clock: String,
    /// `log K` multiplier, or `Kμ^L · rate`.
    pub scale: f64,
    /// Predicted value of the normalized time: `t(L, α)`, or 1 on the rate clock.
    pub predicted: f64,
    pub summary: Option<Summary>,
    pub ks: Option<KsResult>,
    pub cv: Option<f64>,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub index: usize,
    pub k: u64,
    pub mu: f64,
    pub model_hash: String,
    pub seed: u64,
    pub prediction: Option<RegimePrediction>,
    pub prediction_error: Option<String>,
    pub horizon: f64,
    pub replicas: u64,
    pub failed: u64,
    pub resolved: u64,
    pub inconclusive: bool,
    pub stopping_times: Vec<TimeStats>,
    pub normalized: Vec<NormalizedStats>,
    pub extinct_before_crossing: Option<Fraction>,
    /// `P(T₀ < B_L)` in extinction experiments.
    pub extinction_first: Option<Fraction>,
    pub checks: Vec<Check>,
}

impl PointReport {
    pub fn regime(&self) -> Option<Regime> {
        self.prediction.as_ref().map(|p| p.regime)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub kind: ExperimentKind,
    pub model_hash: String,
    pub master_seed: u64,
    pub tool_version: String,
    pub epsilons: Vec<f64>,
    pub points: Vec<PointReport>,
    pub checks: Vec<Check>,
    /// Wall-clock stamp; excluded from [`StatReport::body_json`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_ms: Option<u64>,
}

impl StatReport {
    /// Deterministic serialization without the timestamp.
    pub fn body_json(&self) -> String {
        let mut body = self.clone();
        body.timestamp_ms = None;
        serde_json::to_string_pretty(&body).expect("report serializes")
    }

    /// Every verdict that was reached, with its name.
    pub fn verdicts(&self) -> impl Iterator<Item = (&str, bool)> {
        self.points
            .iter()
            .flat_map(|p| p.checks.iter())
            .chain(&self.checks)
            .filter_map(|c| c.pass.map(|v| (c.name.as_str(), v)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TropicalReport {
    pub model_hash: String,
    pub master_seed: u64,
    pub tool_version: String,
    pub convergence: ConvergenceReport,
    pub checks: Vec<Check>,
    pub grid: Vec<f64>,
    pub path: TropicalPath,
    /// Log-rescaled ODE values per `μ`, rows aligned with `grid`.
    pub ode: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_ms: Option<u64>,
}

impl TropicalReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass != Some(false))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "report", rename_all = "snake_case")]
pub enum ExperimentReport {
    Ensemble(StatReport),
    Tropical(TropicalReport),
}

struct PointSetup {
    params: ModelParams,
    prediction: Result<RegimePrediction, TheoryError>,
    seed: u64,
    horizon: f64,
}

/// Predicted time scale a horizon multiple applies to.
fn predicted_scale(pred: &RegimePrediction, k: u64) -> Option<f64> {
    match pred.regime {
        Regime::LargeMutation => pred.t_l_alpha.map(|t| t * (k as f64).ln()),
        Regime::SmallMutationPower | Regime::TinyMutation => pred.mean_crossing_time,
        Regime::ExtinctionFirst => None,
    }
}

fn setup_point(
    plan: &ExperimentPlan,
    index: usize,
    k: u64,
    mu: f64,
) -> Result<PointSetup, HarnessError> {
    let params = plan.model.with_k(k).with_mu(mu);
    params.validate()?;
    let prediction = theory::classify_regime(&params);
    let scale = prediction.as_ref().ok().and_then(|p| predicted_scale(p, k));
    let horizon = match (plan.horizon, scale) {
        (HorizonPolicy::Absolute(h), Some(s)) if h < MIN_HORIZON_MULTIPLE * s => {
            return Err(HarnessError::HorizonTooShort {
                point: index,
                horizon: h,
                scale: s,
            })
        }
        (HorizonPolicy::Absolute(h), _) => h,
        (HorizonPolicy::Scaled { multiple, .. }, Some(s)) => multiple * s,
        (
            HorizonPolicy::Scaled {
                fallback: Some(h), ..
            },
            None,
        ) => h,
        (HorizonPolicy::Scaled { fallback: None, .. }, None) => {
            return Err(HarnessError::NoHorizon { point: index })
        }
    };
    Ok(PointSetup {
        params,
        prediction,
        seed: plan.point_seed(index),
        horizon,
    })
}

fn time_stats(name: String, values: Vec<f64>, seed: u64) -> TimeStats {
    TimeStats {
        name,
        count: values.len(),
        summary: stats::describe(&values, seed),
    }
}

fn ok_records(records: &[ReplicaRecord]) -> impl Iterator<Item = &ReplicaRecord> {
    records.iter().filter(|r| r.error.is_none())
}

fn collect<F: Fn(&gillespie::StoppingTimes) -> Option<f64>>(
    records: &[ReplicaRecord],
    f: F,
) -> Vec<f64> {
    ok_records(records)
        .filter_map(|r| r.stopping_times.as_ref().and_then(&f))
        .collect()
}

/// Summaries of the built-in and watched stopping times; watch `i` of `hits` is named by `names[i]`.
fn stopping_time_stats(records: &[ReplicaRecord], names: &[String], seed: u64) -> Vec<TimeStats> {
    let mut out: Vec<TimeStats> = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            time_stats(
                name.clone(),
                collect(records, |s| s.hit(i)),
                seed ^ (i as u64 + 1),
            )
        })
        .collect();
    out.push(time_stats(
        "sigma0".into(),
        collect(records, |s| s.sigma0),
        seed ^ 0x51,
    ));
    out.push(time_stats(
        "target_born".into(),
        collect(records, |s| s.b_l),
        seed ^ 0x52,
    ));
    out.push(time_stats(
        "extinct".into(),
        collect(records, |s| s.t0),
        seed ^ 0x53,
    ));
    out
}

fn normalized_stats(
    epsilon: f64,
    clock: &str,
    scale: f64,
    predicted: f64,
    raw: &[f64],
    seed: u64,
) -> NormalizedStats {
    let samples: Vec<f64> = raw.iter().map(|t| t * scale).collect();
    let enough = samples.len() as u64 >= MIN_RESOLVED;
    NormalizedStats {
        epsilon,
        clock: clock.into(),
        scale,
        predicted,
        summary: stats::describe(&samples, seed),
        ks: enough.then(|| stats::ks_unit_exponential(&samples)),
        cv: enough.then(|| stats::coefficient_of_variation(&samples)),
        samples,
    }
}

fn crossing_checks(n: &NormalizedStats, regime: Regime, enough: bool) -> Vec<Check> {
    let gate = |ok: bool| enough.then_some(ok);
    let tag = |s: &str| format!("{s}[eps={}]", n.epsilon);
    let Some(summary) = &n.summary else {
        return Vec::new();
    };
    match regime {
        Regime::LargeMutation => {
            let ratio = summary.median / n.predicted;
            vec![Check::new(
                &tag("logk_median_ratio"),
                "T_sigma0 / log K -> t(L, alpha) in probability",
                format!(
                    "median ratio in [{}, {}]",
                    LOGK_RATIO_BAND.0, LOGK_RATIO_BAND.1
                ),
                ratio,
                gate((LOGK_RATIO_BAND.0..=LOGK_RATIO_BAND.1).contains(&ratio)),
            )]
        }
        _ => {
            let gate = |ok: bool| (enough && n.ks.is_some()).then_some(ok);
            let ks = n.ks.unwrap_or(KsResult {
                n: n.samples.len(),
                distance: f64::NAN,
                critical_1pct: stats::ks_critical_1pct(n.samples.len()),
                rejected: false,
            });
            let cv = n.cv.unwrap_or(f64::NAN);
            let mean_ratio = summary.mean / n.predicted;
            vec![
                Check::new(
                    &tag("ks_unit_exponential"),
                    "T K mu^L rate -> Exp(1) in law",
                    format!("KS distance < 1% critical value {:.4}", ks.critical_1pct),
                    ks.distance,
                    gate(!ks.rejected),
                ),
                Check::new(
                    &tag("coefficient_of_variation"),
                    "CV of an exponential law is 1",
                    format!("CV in [{}, {}]", CV_BAND.0, CV_BAND.1),
                    cv,
                    gate((CV_BAND.0..=CV_BAND.1).contains(&cv)),
                ),
                Check::new(
                    &tag("mean_ratio"),
                    "mean normalized crossing time -> 1",
                    format!("within +-{}%", MEAN_RATIO_TOL * 100.0),
                    mean_ratio,
                    gate((mean_ratio - 1.0).abs() <= MEAN_RATIO_TOL),
                ),
            ]
        }
    }
}

fn crossing_point(
    plan: &ExperimentPlan,
    index: usize,
    k: u64,
    mu: f64,
) -> Result<PointReport, HarnessError> {
    let setup = setup_point(plan, index, k, mu)?;
    let params = &setup.params;
    let l = params.l;
    let land = derive_landscape(params)?;
    let x_l = land.xbar[l];
    for &eps in &plan.epsilons {
        if eps >= x_l {
            return Err(HarnessError::Plan(format!(
                "epsilon {eps} must be below x_L = {x_l}"
            )));
        }
    }
    let regime = setup.prediction.as_ref().ok().map(|p| p.regime);

    let mut config = RunConfig::new(setup.horizon).no_trajectory();
    let mut names = Vec::new();
    for &eps in &plan.epsilons {
        config = config.watch(Watch::new(l, x_l - eps));
        names.push(format!("fixation[eps={eps}]"));
    }
    for w in &plan.watches {
        config = config.watch(*w);
        names.push(format!("watch[trait={},level={}]", w.trait_index, w.level));
    }
    let fix: Vec<Condition> = (0..plan.epsilons.len()).map(Condition::Hit).collect();
    config = config.stop(if regime == Some(Regime::LargeMutation) {
        StopRule::AllOf(fix.iter().copied().chain([Condition::Sigma0]).collect())
    } else {
        StopRule::AllOf(fix)
    });

    let init = PopulationState::resident(params);
    let ens = gillespie::run_ensemble(
        params,
        &init,
        &config,
        plan.replicas,
        setup.seed,
        plan.threads,
    )?;
    let records = &ens.records;
    let failed = records.iter().filter(|r| r.error.is_some()).count() as u64;
    for r in records.iter().filter_map(|r| r.error.as_ref()) {
        log::warn!("point {index}: replica failed: {r}");
    }

    let primary_resolved = |s: &gillespie::StoppingTimes| match regime {
        Some(Regime::LargeMutation) => s.sigma0.is_some() && s.hit(0).is_some(),
        _ => s.hit(0).is_some(),
    };
    let resolved = ok_records(records)
        .filter(|r| r.stopping_times.as_ref().is_some_and(primary_resolved))
        .count() as u64;
    let inconclusive = resolved < MIN_RESOLVED;
    if inconclusive {
        log::warn!("point {index} (K = {k}, mu = {mu:e}): only {resolved} replicas resolved; marked inconclusive");
    }
    let n_ok = plan.replicas - failed;
    let extinct_first = ok_records(records)
        .filter(|r| {
            r.terminal == Some(Terminal::Extinct)
                && r.stopping_times
                    .as_ref()
                    .is_some_and(|s| s.hit(0).is_none())
        })
        .count() as u64;

    let mut normalized = Vec::new();
    let mut checks = Vec::new();
    if let Ok(pred) = &setup.prediction {
        match pred.regime {
            Regime::LargeMutation => {
                let raw = collect(
                    records,
                    |s| if s.hit(0).is_some() { s.sigma0 } else { None },
                );
                let t = pred.t_l_alpha.expect("large regime predicts t(L, alpha)");
                let ns = normalized_stats(
                    plan.epsilons[0],
                    "log K",
                    1.0 / (k as f64).ln(),
                    t,
                    &raw,
                    setup.seed ^ 0xa0,
                );
                checks.extend(crossing_checks(&ns, pred.regime, !inconclusive));
                normalized.push(ns);
            }
            Regime::SmallMutationPower | Regime::TinyMutation => {
                let scale = pred.k_mu_l * pred.rate.expect("crossing regimes predict a rate");
                for (i, &eps) in plan.epsilons.iter().enumerate() {
                    let raw = collect(records, |s| s.hit(i));
                    let ns = normalized_stats(
                        eps,
                        "K mu^L",
                        scale,
                        1.0,
                        &raw,
                        setup.seed ^ (0xb0 + i as u64),
                    );
                    let enough = raw.len() as u64 >= MIN_RESOLVED;
                    checks.extend(crossing_checks(&ns, pred.regime, enough));
                    normalized.push(ns);
                }
            }
            Regime::ExtinctionFirst => {
                checks.push(Check::new(
                    "no_crossing",
                    "the resident dies out before the target appears",
                    "flagged, no crossing statistics".into(),
                    resolved as f64,
                    None,
                ));
            }
        }
    }

    Ok(PointReport {
        index,
        k,
        mu,
        model_hash: params.model_hash(),
        seed: setup.seed,
        prediction_error: setup.prediction.as_ref().err().map(|e| e.to_string()),
        prediction: setup.prediction.ok(),
        horizon: setup.horizon,
        replicas: plan.replicas,
        failed,
        resolved,
        inconclusive,
        stopping_times: stopping_time_stats(records, &names, setup.seed),
        normalized,
        extinct_before_crossing: Some(Fraction::new(extinct_first, n_ok)),
        extinction_first: None,
        checks,
    })
}

fn extinction_point(
    plan: &ExperimentPlan,
    index: usize,
    k: u64,
    mu: f64,
) -> Result<PointReport, HarnessError> {
    let setup = setup_point(plan, index, k, mu)?;
    let params = &setup.params;
    let mut report = PointReport {
        index,
        k,
        mu,
        model_hash: params.model_hash(),
        seed: setup.seed,
        prediction_error: setup.prediction.as_ref().err().map(|e| e.to_string()),
        prediction: setup.prediction.clone().ok(),
        horizon: setup.horizon,
        replicas: plan.replicas,
        failed: 0,
        resolved: plan.replicas,
        inconclusive: false,
        stopping_times: Vec::new(),
        normalized: Vec::new(),
        extinct_before_crossing: None,
        extinction_first: None,
        checks: Vec::new(),
    };
    let fraction = if mu == 0.0 {
        // No mutant is ever born, so extinction comes first with certainty.
        Fraction::new(plan.replicas, plan.replicas)
    } else {
        let config = RunConfig::new(setup.horizon)
            .no_trajectory()
            .stop(StopRule::AnyOf(vec![Condition::TargetBorn]));
        let init = PopulationState::resident(params);
        let ens = gillespie::run_ensemble(
            params,
            &init,
            &config,
            plan.replicas,
            setup.seed,
            plan.threads,
        )?;
        let records = &ens.records;
        report.failed = records.iter().filter(|r| r.error.is_some()).count() as u64;
        let (mut first, mut resolved) = (0, 0);
        for s in ok_records(records).filter_map(|r| r.stopping_times.as_ref()) {
            match (s.t0, s.b_l) {
                (Some(_), None) => {
                    first += 1;
                    resolved += 1;
                }
                (_, Some(_)) => resolved += 1,
                _ => {}
            }
        }
        report.resolved = resolved;
        report.stopping_times = stopping_time_stats(records, &[], setup.seed);
        Fraction::new(first, resolved)
    };
    report.inconclusive = report.resolved < MIN_RESOLVED;
    if report.regime() == Some(Regime::ExtinctionFirst) {
        report.checks.push(Check::new(
            "extinction_first_probability",
            "P(T0 < B_L) -> 1",
            format!("estimate >= {EXTINCTION_LEVEL}"),
            fraction.estimate.unwrap_or(f64::NAN),
            (!report.inconclusive)
                .then(|| fraction.estimate.is_some_and(|p| p >= EXTINCTION_LEVEL)),
        ));
    }
    report.extinction_first = Some(fraction);
    Ok(report)
}

/// At each `K`, the extinction-first probability should not fall as `μ` decreases
/// (consecutive Wilson intervals must overlap or rise).
fn extinction_trend(points: &[PointReport]) -> Vec<Check> {
    let mut ks: Vec<u64> = points.iter().map(|p| p.k).collect();
    ks.sort_unstable();
    ks.dedup();
    ks.into_iter()
        .filter_map(|k| {
            let mut at_k: Vec<&PointReport> = points
                .iter()
                .filter(|p| p.k == k && !p.inconclusive)
                .collect();
            if at_k.len() < 2 {
                return None;
            }
            at_k.sort_by(|a, b| b.mu.total_cmp(&a.mu));
            let worst = at_k
                .windows(2)
                .map(|w| {
                    let (hi_mu, lo_mu) = (
                        w[0].extinction_first.unwrap(),
                        w[1].extinction_first.unwrap(),
                    );
                    lo_mu.ci.1 - hi_mu.ci.0
                })
                .fold(f64::INFINITY, f64::min);
            Some(Check::new(
                &format!("extinction_trend[K={k}]"),
                "P(T0 < B_L) increases to 1 as mu decreases",
                "consecutive 95% intervals never drop".into(),
                worst,
                Some(worst >= 0.0),
            ))
        })
        .collect()
}

fn run_points(
    plan: &ExperimentPlan,
    point: fn(&ExperimentPlan, usize, u64, f64) -> Result<PointReport, HarnessError>,
) -> Result<Vec<PointReport>, HarnessError> {
    plan.sweep
        .points()
        .into_iter()
        .enumerate()
        .map(|(i, (k, mu))| {
            log::info!("point {i}: K = {k}, mu = {mu:e}");
            point(plan, i, k, mu)
        })
        .collect()
}

fn stat_report(plan: &ExperimentPlan, points: Vec<PointReport>, checks: Vec<Check>) -> StatReport {
    StatReport {
        kind: plan.kind,
        model_hash: plan.model.model_hash(),
        master_seed: plan.master_seed,
        tool_version: crate::VERSION.into(),
        epsilons: plan.epsilons.clone(),
        points,
        checks,
        timestamp_ms: None,
    }
}

/// Simulates every sweep point until fixation of the target (all thresholds),
/// extinction or the horizon; in the large-mutation regime also until the
/// non-target traits are gone.
pub fn run_crossing_experiment(plan: &ExperimentPlan) -> Result<StatReport, HarnessError> {
    plan.validate()?;
    let points = run_points(plan, crossing_point)?;
    Ok(stat_report(plan, points, Vec::new()))
}

/// Estimates `P(T₀ < B_L)` per sweep point.
pub fn run_extinction_experiment(plan: &ExperimentPlan) -> Result<StatReport, HarnessError> {
    plan.validate()?;
    let points = run_points(plan, extinction_point)?;
    let trend = extinction_trend(&points);
    Ok(stat_report(plan, points, trend))
}

fn tropical_grid(sweep: &TropicalSweep) -> Vec<f64> {
    let n = (sweep.t_end / sweep.step).round() as usize;
    (1..=n).map(|i| i as f64 * sweep.step).collect()
}

fn tropical_report(
    plan: &ExperimentPlan,
    path: TropicalPath,
) -> Result<TropicalReport, HarnessError> {
    let sweep = plan.tropical.as_ref().expect("validated");
    let grid = tropical_grid(sweep);
    let params = plan.model.with_kernel(path.kernel);
    let convergence = tropical::compare_with_path(&params, &path, &sweep.mu, &grid)?;
    let ode = sweep
        .mu
        .iter()
        .map(|&mu| tropical::rescaled_ode_path(&params, mu, &grid))
        .collect::<Result<Vec<_>, _>>()?;
    let last = convergence.last().sup_distance;
    let mut checks = vec![Check::new(
        "sup_distance_decreasing",
        "rescaled ODE path -> limit path uniformly on bounded intervals",
        "strictly decreasing along the mu list".into(),
        last,
        Some(convergence.decreasing),
    )];
    checks.push(Check::new(
        "extrapolated_limit",
        "sup distance -> 0",
        format!("extrapolated distance < {LIMIT_TOL}"),
        convergence.limit_estimate.unwrap_or(f64::NAN),
        convergence.limit_estimate.map(|v| v < LIMIT_TOL),
    ));
    Ok(TropicalReport {
        model_hash: plan.model.model_hash(),
        master_seed: plan.master_seed,
        tool_version: crate::VERSION.into(),
        convergence,
        checks,
        grid,
        path,
        ode,
        timestamp_ms: None,
    })
}

fn limit_path(plan: &ExperimentPlan) -> Result<TropicalPath, HarnessError> {
    let sweep = plan.tropical.as_ref().expect("validated");
    let kernel = sweep.kernel.unwrap_or(plan.model.kernel);
    let land = derive_landscape(&plan.model.with_kernel(kernel))?.validated(DEFAULT_DISTINCT_TOL);
    Ok(tropical::limit_path(&land, kernel)?)
}

/// Compares the log-rescaled ODE with the limit path along the `μ` sweep.
pub fn run_tropical_experiment(plan: &ExperimentPlan) -> Result<TropicalReport, HarnessError> {
    plan.validate()?;
    if plan.kind != ExperimentKind::Tropical {
        return Err(HarnessError::Plan("not a tropical plan".into()));
    }
    tropical_report(plan, limit_path(plan)?)
}

/// Scales the slope of the piece of `trait_index` active at time `t`.
pub fn inject_slope_mismatch(path: &mut TropicalPath, trait_index: usize, t: f64, factor: f64) {
    let pieces = &mut path.traits[trait_index].pieces;
    let i = pieces
        .iter()
        .rposition(|p| p.t0 < t || p.t0 == 0.0)
        .expect("every path starts at t = 0");
    pieces[i].slope *= factor;
}

/// Comparator self-test: reruns the sweep against a limit path whose slope at
/// the worst point of the honest comparison is off by 10%.
pub fn tropical_negative_control(plan: &ExperimentPlan) -> Result<TropicalReport, HarnessError> {
    let honest = run_tropical_experiment(plan)?;
    let worst = honest.convergence.last();
    let mut path = honest.path.clone();
    inject_slope_mismatch(&mut path, worst.argmax_trait, worst.argmax_t, 1.1);
    tropical_report(plan, path)
}

/// Runs the plan according to its kind.
pub fn run_plan(plan: &ExperimentPlan) -> Result<ExperimentReport, HarnessError> {
    Ok(match plan.kind {
        ExperimentKind::Crossing => ExperimentReport::Ensemble(run_crossing_experiment(plan)?),
        ExperimentKind::Extinction => ExperimentReport::Ensemble(run_extinction_experiment(plan)?),
        ExperimentKind::Tropical => ExperimentReport::Tropical(run_tropical_experiment(plan)?),
    })
}

impl ExperimentReport {
    fn provenance(&self) -> (&str, u64, &str) {
        match self {
            ExperimentReport::Ensemble(r) => (&r.model_hash, r.master_seed, &r.tool_version),
            ExperimentReport::Tropical(r) => (&r.model_hash, r.master_seed, &r.tool_version),
        }
    }

    fn set_timestamp(&mut self, ms: Option<u64>) {
        match self {
            ExperimentReport::Ensemble(r) => r.timestamp_ms = ms,
            ExperimentReport::Tropical(r) => r.timestamp_ms = ms,
        }
    }

    /// Deterministic JSON without the timestamp.
    pub fn body_json(&self) -> String {
        let mut body = self.clone();
        body.set_timestamp(None);
        serde_json::to_string_pretty(&body).expect("report serializes")
    }

    pub fn from_json(text: &str, source_name: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| parse_error(source_name, e))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_json(&read(path)?, &path.display().to_string())
    }

    fn header(&self) -> String {
        let (hash, seed, version) = self.provenance();
        format!("# model_hash={hash} seed={seed} version={version}\n")
    }

    /// `summary.csv` contents, after the provenance comment line.
    pub fn summary_csv(&self) -> String {
        let mut out = self.header();
        match self {
            ExperimentReport::Ensemble(r) => {
                out.push_str(&SUMMARY_COLUMNS.join(","));
                out.push('\n');
                for p in &r.points {
                    let regime = p
                        .regime()
                        .map_or("unknown".to_string(), |g| format!("{g:?}"));
                    let alpha = p
                        .prediction
                        .as_ref()
                        .and_then(|q| q.alpha)
                        .map_or(String::new(), |a| a.to_string());
                    let extinct = p
                        .extinct_before_crossing
                        .or(p.extinction_first)
                        .and_then(|f| f.estimate)
                        .map_or(String::new(), |e| e.to_string());
                    let rows: Vec<Option<&NormalizedStats>> = if p.normalized.is_empty() {
                        vec![None]
                    } else {
                        p.normalized.iter().map(Some).collect()
                    };
                    for n in rows {
                        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
                        let _ = writeln!(
                            out,
                            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                            p.index,
                            p.k,
                            p.mu,
                            regime,
                            alpha,
                            opt(n.map(|n| n.epsilon)),
                            p.replicas,
                            p.resolved,
                            p.inconclusive,
                            n.map_or("", |n| n.clock.as_str()),
                            opt(n.map(|n| n.predicted)),
                            opt(n.and_then(|n| n.summary.as_ref().map(|s| s.mean))),
                            opt(n.and_then(|n| n.summary.as_ref().map(|s| s.median))),
                            opt(n.and_then(|n| n.ks.map(|k| k.distance))),
                            opt(n.and_then(|n| n.ks.map(|k| k.critical_1pct))),
                            opt(n.and_then(|n| n.cv)),
                            extinct,
                        );
                    }
                }
            }
            ExperimentReport::Tropical(r) => {
                out.push_str(&TROPICAL_COLUMNS.join(","));
                out.push('\n');
                for e in &r.convergence.entries {
                    let _ = writeln!(
                        out,
                        "{},{},{},{}",
                        e.mu, e.sup_distance, e.argmax_t, e.argmax_trait
                    );
                }
            }
        }
        out
    }

    /// Plot tables as `(file stem, csv)`.
    pub fn plot_data(&self) -> Vec<(String, String)> {
        let header = self.header();
        match self {
            ExperimentReport::Ensemble(r) => r
                .points
                .iter()
                .flat_map(|p| {
                    let header = header.clone();
                    p.normalized.iter().map(move |n| {
                        let mut csv = header.clone();
                        csv.push_str("normalized_time\n");
                        for s in &n.samples {
                            let _ = writeln!(csv, "{s}");
                        }
                        (format!("point{}_eps{}", p.index, n.epsilon), csv)
                    })
                })
                .collect(),
            ExperimentReport::Tropical(r) => {
                let cols: Vec<String> = (0..r.path.traits.len())
                    .map(|i| format!("trait{i}"))
                    .collect();
                let mut limit = header.clone();
                let _ = writeln!(limit, "t,{}", cols.join(","));
                for &t in &r.grid {
                    let row: Vec<String> = r.path.eval(t).iter().map(|v| v.to_string()).collect();
                    let _ = writeln!(limit, "{t},{}", row.join(","));
                }
                let mut out = vec![("limit_path".to_string(), limit)];
                for (e, rows) in r.convergence.entries.iter().zip(&r.ode) {
                    let mut csv = header.clone();
                    let _ = writeln!(csv, "t,{}", cols.join(","));
                    for (t, row) in r.grid.iter().zip(rows) {
                        let row: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                        let _ = writeln!(csv, "{t},{}", row.join(","));
                    }
                    out.push((format!("ode_mu{:e}", e.mu), csv));
                }
                out
            }
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes `report.json`, `summary.csv` and `plotdata/*.csv` under `dir`.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let plot_dir = dir.join("plotdata");
    fs::create_dir_all(&plot_dir).map_err(|e| HarnessError::Io {
        path: plot_dir.clone(),
        message: e.to_string(),
    })?;
    let mut stamped = report.clone();
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .ok();
    stamped.set_timestamp(now);
    let mut written = Vec::new();
    let json = dir.join("report.json");
    write(
        &json,
        &serde_json::to_string_pretty(&stamped).expect("report serializes"),
    )?;
    written.push(json);
    let summary = dir.join("summary.csv");
    write(&summary, &report.summary_csv())?;
    written.push(summary);
    for (stem, csv) in report.plot_data() {
        let p = plot_dir.join(format!("{stem}.csv"));
        write(&p, &csv)?;
        written.push(p);
    }
    Ok(written)
}
