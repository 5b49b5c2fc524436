//! Closed-form predictions: regime classification, crossing-time scales and
//! rates, excursion laws of subcritical birth–death processes, hitting
//! probabilities and the extinction-time scale of the resident.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::model::{derive_landscape, FitnessLandscape, ModelParams, DEFAULT_DISTINCT_TOL};

/// Hard cap on the number of series terms.
pub const SERIES_MAX_TERMS: u64 = 1_000_000;

/// Relative size below which a series term ends the summation.
pub const SERIES_REL_TOL: f64 = 1e-15;

/// `a ≪ b` is read as `a < SEPARATION · b`.
pub const SEPARATION: f64 = 0.01;

/// Distance to an integer below which `α` triggers a warning.
pub const INTEGER_ALPHA_WARN: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("{0}")]
    Domain(String),
    #[error("series did not converge within {SERIES_MAX_TERMS} terms")]
    SeriesDiverged,
    #[error("landscape violates the valley conditions: {0}")]
    InvalidLandscape(String),
    #[error("alpha = {alpha} is outside the range required here ({range})")]
    AlphaOutOfRange { alpha: f64, range: &'static str },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

fn domain<T>(msg: impl Into<String>) -> Result<T, TheoryError> {
    Err(TheoryError::Domain(msg.into()))
}

/// Natural log of `p(k) = Cat(k) ρ^k (1-ρ)^{k+1}`, `ρ = b/(b+d)`.
pub fn excursion_log_pmf(b: f64, d: f64, k: u64) -> Result<f64, TheoryError> {
    if !(b > 0.0 && d > b && d.is_finite()) {
        return domain(format!(
            "excursion law needs 0 < b < d (got b = {b}, d = {d})"
        ));
    }
    let rho = b / (b + d);
    let kf = k as f64;
    let log_catalan = ln_gamma(2.0 * kf + 1.0) - ln_gamma(kf + 1.0) - ln_gamma(kf + 2.0);
    Ok(log_catalan + kf * rho.ln() + (kf + 1.0) * (d / (b + d)).ln())
}

/// Probability that a subcritical excursion started by one individual has exactly `k` births.
pub fn excursion_pmf(b: f64, d: f64, k: u64) -> Result<f64, TheoryError> {
    excursion_log_pmf(b, d, k).map(f64::exp)
}

/// Neumaier-compensated sum.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `λ(ρ) = Σ_{k≥1} k·Cat(k)·ρ^k (1-ρ)^{k+1}`, the mean number of births in a
/// subcritical excursion whose per-event birth probability is `ρ`.
///
/// Terms follow the ratio `(k+1)/k · 2(2k+1)/(k+2) · ρ(1-ρ)`; summation stops once
/// the terms are decreasing and below [`SERIES_REL_TOL`] of the partial sum.
pub fn lambda_rho(rho: f64) -> Result<f64, TheoryError> {
    if !(0.0..0.5).contains(&rho) {
        return domain(format!("lambda needs 0 <= rho < 1/2 (got {rho})"));
    }
    if rho == 0.0 {
        return Ok(0.0);
    }
    let q = rho * (1.0 - rho);
    let mut term = rho * (1.0 - rho) * (1.0 - rho);
    let mut sum = CompensatedSum::default();
    sum.add(term);
    for k in 1..SERIES_MAX_TERMS {
        let kf = k as f64;
        let ratio = (kf + 1.0) / kf * 2.0 * (2.0 * kf + 1.0) / (kf + 2.0) * q;
        term *= ratio;
        sum.add(term);
        if ratio < 1.0 && term < SERIES_REL_TOL * sum.value() {
            return Ok(sum.value());
        }
    }
    Err(TheoryError::SeriesDiverged)
}

/// Mean number of births in an excursion with birth rate `b` and death rate `d`.
pub fn excursion_mean(b: f64, d: f64) -> Result<f64, TheoryError> {
    if !(b >= 0.0 && d > b && d.is_finite()) {
        return domain(format!(
            "excursion mean needs 0 <= b < d (got b = {b}, d = {d})"
        ));
    }
    lambda_rho(b / (b + d))
}

/// `P_i(T_0 ≤ t)` for a linear birth–death process with per-capita rates `b ≠ d`.
pub fn extinction_cdf(b: f64, d: f64, i: u64, t: f64) -> Result<f64, TheoryError> {
    if !(b > 0.0 && d > 0.0 && b != d && b.is_finite() && d.is_finite()) {
        return domain(format!(
            "extinction law needs positive b != d (got b = {b}, d = {d})"
        ));
    }
    if !(t >= 0.0) {
        return domain(format!("time must be nonnegative (got {t})"));
    }
    // Both branches keep the exponential argument nonpositive.
    let one = if d > b {
        let q = ((b - d) * t).exp();
        let num = -d * (-(d - b) * t).exp_m1();
        num / (d - b * q)
    } else {
        let q = ((d - b) * t).exp();
        let num = -d * ((d - b) * t).exp_m1();
        num / (b - d * q)
    };
    Ok(one.clamp(0.0, 1.0).powi(i as i32))
}

/// `P_j(T_k < T_i)` for the embedded walk of a linear birth–death process, `i ≤ j ≤ k`, `i < k`.
pub fn ruin_probability(b: f64, d: f64, i: u64, j: u64, k: u64) -> Result<f64, TheoryError> {
    if !(b > 0.0 && d > 0.0 && b.is_finite() && d.is_finite()) {
        return domain(format!(
            "ruin law needs positive rates (got b = {b}, d = {d})"
        ));
    }
    if !(i <= j && j <= k && i < k) {
        return domain(format!(
            "ruin law needs i <= j <= k and i < k (got {i}, {j}, {k})"
        ));
    }
    let (up, span) = ((j - i) as f64, (k - i) as f64);
    if b == d {
        return Ok(up / span);
    }
    let r: f64 = d / b;
    Ok((r.powf(up) - 1.0) / (r.powf(span) - 1.0))
}

/// Natural log of [`rho0`]; stays finite where `rho0` underflows.
pub fn log_rho0(k: f64, b0: f64, d0: f64) -> Result<f64, TheoryError> {
    if !(k > 0.0 && b0 > d0 && d0 >= 0.0 && b0.is_finite()) {
        return domain(format!(
            "extinction scale needs b0 > d0 >= 0, K > 0 (got {b0}, {d0}, {k})"
        ));
    }
    let tail = if d0 == 0.0 { 0.0 } else { d0 * (d0 / b0).ln() };
    Ok(0.5 * k.ln() - k * (b0 - d0 + tail))
}

/// `√K · exp(-K (b₀ - d₀ + d₀ ln(d₀/b₀)))`, with the `d₀ → 0` limit `√K · exp(-K b₀)`.
pub fn rho0(k: f64, b0: f64, d0: f64) -> Result<f64, TheoryError> {
    log_rho0(k, b0, d0).map(f64::exp)
}

/// Finite-size exponent `α = ln K / ln(1/μ)`.
pub fn finite_size_alpha(k: u64, mu: f64) -> f64 {
    (k as f64).ln() / (1.0 / mu).ln()
}

/// `ρ_i = b_i / (b_i + d_i + c_i0 x̄₀)`, written through `f_i0 = b_i - d_i - c_i0 x̄₀`.
pub fn rho_i(land: &FitnessLandscape, i: usize) -> f64 {
    let b = land.b[i];
    b / (2.0 * b - land.f(i, 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeToExtinction {
    pub value: f64,
    /// Trait attaining the supremum: the slowest to disappear.
    pub bottleneck: usize,
}

/// `t(L, α) = (L/α)/f_L0 + sup_{i<L} (1 - i/α)/|f_iL|`, for `α > L`.
pub fn t_l_alpha(land: &FitnessLandscape, alpha: f64) -> Result<TimeToExtinction, TheoryError> {
    let ts = logk_timescale(land, alpha)?;
    Ok(TimeToExtinction {
        value: ts.total,
        bottleneck: ts.bottleneck,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogKTimescale {
    /// Time, in units of `log K`, for the target trait to reach order `K`.
    pub invasion: f64,
    /// Decay constant `(1 - i/α)/|f_iL|` of every non-target trait.
    pub per_trait: Vec<f64>,
    pub bottleneck: usize,
    /// `invasion + max(per_trait)`.
    pub total: f64,
}

/// Constants of the `log K` time scale when `α > L`.
pub fn logk_timescale(land: &FitnessLandscape, alpha: f64) -> Result<LogKTimescale, TheoryError> {
    let l = land.l;
    if !(alpha > l as f64) {
        return Err(TheoryError::AlphaOutOfRange {
            alpha,
            range: "alpha > L",
        });
    }
    let invasion = (l as f64 / alpha) / land.f(l, 0);
    let per_trait: Vec<f64> = (0..l)
        .map(|i| (1.0 - i as f64 / alpha) / land.f(i, l).abs())
        .collect();
    let (bottleneck, worst) =
        per_trait
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
            );
    Ok(LogKTimescale {
        invasion,
        per_trait,
        bottleneck,
        total: invasion + worst,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `α > L`: crossing on the `log K` scale.
    LargeMutation,
    /// `1 ≤ α < L`: exponential crossing time on the `Kμ^L` clock.
    SmallMutationPower,
    /// `Kμ < 1`: exponential crossing time, every intermediate trait in excursions.
    TinyMutation,
    /// The resident dies out before the target appears.
    ExtinctionFirst,
}

/// Exponential rate of the normalized crossing time `T · Kμ^L`.
///
/// In the small-power regime the first `⌊α⌋` intermediate traits are at
/// quasi-equilibrium and contribute `b_{i-1}/|f_i0|`; the remaining ones live in
/// excursions and contribute `λ(ρ_i)`. Empty products are 1.
pub fn crossing_rate(
    land: &FitnessLandscape,
    k: u64,
    mu: f64,
    regime: Regime,
) -> Result<f64, TheoryError> {
    let l = land.l;
    let deterministic = match regime {
        Regime::TinyMutation => 0,
        Regime::SmallMutationPower => {
            let a = finite_size_alpha(k, mu).floor() as usize;
            if a >= l {
                return Err(TheoryError::AlphaOutOfRange {
                    alpha: finite_size_alpha(k, mu),
                    range: "floor(alpha) < L",
                });
            }
            a
        }
        other => return domain(format!("no crossing rate in regime {other:?}")),
    };
    let mut rate = land.xbar[0] * land.f(l, 0) / land.b[l];
    for i in 1..=deterministic {
        rate *= land.b[i - 1] / land.f(i, 0).abs();
    }
    for i in deterministic + 1..l {
        rate *= lambda_rho(rho_i(land, i))?;
    }
    Ok(rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoEntry {
    #[serde(rename = "trait")]
    pub trait_index: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimePrediction {
    pub regime: Regime,
    pub alpha: Option<f64>,
    pub k_mu: f64,
    pub k_mu_l: f64,
    pub rho0_k: f64,
    pub log_rho0_k: f64,
    /// `t(L, α)` and its bottleneck trait (large-mutation regime).
    pub t_l_alpha: Option<f64>,
    pub bottleneck: Option<usize>,
    pub invasion_constant: Option<f64>,
    /// Rate on the `Kμ^L` clock and the implied mean crossing time.
    pub rate: Option<f64>,
    pub mean_crossing_time: Option<f64>,
    pub rho: Vec<RhoEntry>,
    pub formulas: Vec<String>,
    pub warnings: Vec<String>,
}

fn intermediates_subcritical(params: &ModelParams) -> bool {
    (1..params.l).all(|i| params.b[i] < params.d[i])
}

/// Classifies a concrete `(K, μ)` and fills every applicable prediction.
pub fn classify_regime(params: &ModelParams) -> Result<RegimePrediction, TheoryError> {
    params.validate()?;
    let land = derive_landscape(params)?.validated(DEFAULT_DISTINCT_TOL);
    let l = params.l;
    let kf = params.k as f64;
    let mu = params.mu;
    let k_mu = kf * mu;
    let k_mu_l = kf * mu.powi(l as i32);
    let (b0, d0) = (params.b[0], params.d[0]);
    if b0 <= d0 {
        return domain("the resident trait is not viable (b0 <= d0)");
    }
    if mu >= 1.0 {
        return domain("alpha is undefined at mu = 1");
    }
    let log_rho0_k = log_rho0(kf, b0, d0)?;
    let rho0_k = log_rho0_k.exp();
    let log_sep = SEPARATION.ln();
    let mut formulas = vec!["rho0 = sqrt(K) exp(-K (b0 - d0 + d0 ln(d0/b0)))".to_string()];
    let mut warnings = Vec::new();
    let rho: Vec<RhoEntry> = (1..l)
        .map(|i| RhoEntry {
            trait_index: i,
            rho: rho_i(&land, i),
        })
        .collect();

    let mut pred = RegimePrediction {
        regime: Regime::ExtinctionFirst,
        alpha: None,
        k_mu,
        k_mu_l,
        rho0_k,
        log_rho0_k,
        t_l_alpha: None,
        bottleneck: None,
        invasion_constant: None,
        rate: None,
        mean_crossing_time: None,
        rho,
        formulas: Vec::new(),
        warnings: Vec::new(),
    };

    if k_mu.ln() < log_sep + log_rho0_k {
        formulas.push("extinction first: K mu << rho0(K)".into());
        pred.formulas = formulas;
        return Ok(pred);
    }
    let log_k_mu_l = kf.ln() + l as f64 * mu.ln();
    if intermediates_subcritical(params) && log_k_mu_l < log_sep + log_rho0_k {
        formulas.push("extinction first: b_i < d_i on the valley and K mu^L << rho0(K)".into());
        pred.formulas = formulas;
        return Ok(pred);
    }

    let report = land.validity.clone().expect("validated above");
    if !report.valid {
        let failed: Vec<String> = report.failed().map(|c| format!("{c:?}")).collect();
        return Err(TheoryError::InvalidLandscape(failed.join(", ")));
    }

    let alpha = finite_size_alpha(params.k, mu);
    pred.alpha = Some(alpha);
    formulas.push("alpha = ln K / ln(1/mu)".into());
    if k_mu < 1.0 {
        pred.regime = Regime::TinyMutation;
    } else if alpha >= l as f64 {
        pred.regime = Regime::LargeMutation;
    } else {
        pred.regime = Regime::SmallMutationPower;
    }
    if alpha >= 1.0 && alpha <= l as f64 + INTEGER_ALPHA_WARN {
        let nearest = alpha.round();
        if (alpha - nearest).abs() < INTEGER_ALPHA_WARN {
            let msg = format!("alpha = {alpha:.4} is within {INTEGER_ALPHA_WARN} of the integer {nearest}; regime boundaries blur here");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    match pred.regime {
        Regime::LargeMutation => {
            let ts = logk_timescale(&land, alpha.max(l as f64 + f64::EPSILON))?;
            pred.t_l_alpha = Some(ts.total);
            pred.bottleneck = Some(ts.bottleneck);
            pred.invasion_constant = Some(ts.invasion);
            formulas.push("t(L,alpha) = (L/alpha)/f_L0 + sup_{i<L} (1 - i/alpha)/|f_iL|".into());
        }
        Regime::SmallMutationPower | Regime::TinyMutation => {
            let rate = crossing_rate(&land, params.k, mu, pred.regime)?;
            pred.rate = Some(rate);
            pred.mean_crossing_time = Some(1.0 / (rate * k_mu_l));
            formulas.push(if pred.regime == Regime::TinyMutation {
                "rate = xbar0 (f_L0/b_L) prod_{1<=i<L} lambda(rho_i)".into()
            } else {
                "rate = xbar0 prod_{i<=floor(alpha)} b_{i-1}/|f_i0| (f_L0/b_L) prod_{floor(alpha)<i<L} lambda(rho_i)".into()
            });
        }
        Regime::ExtinctionFirst => unreachable!(),
    }
    pred.formulas = formulas;
    pred.warnings = warnings;
    Ok(pred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_example_landscape, Kernel, ValleyBuilder};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    /// Six-step valley: unfit intermediates, a fit target, and a shallow trait 5 against it.
    fn six_step() -> FitnessLandscape {
        let p = ValleyBuilder::new(
            &[-0.5, -1.0, -1.5, -1.25, -0.75, 1.0],
            &[-5.0, -1.0, -0.25, -1.5, -2.0, -0.05],
        )
        .rates(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0], &[0.0; 7])
        .build()
        .unwrap();
        crate::model::derive_landscape(&p).unwrap()
    }

    #[test]
    fn six_step_bottleneck_at_alpha_7() {
        let t = t_l_alpha(&six_step(), 7.0).unwrap();
        assert_eq!(t.bottleneck, 5);
        assert!(close(t.value, 6.0 / 7.0 + (1.0 - 5.0 / 7.0) / 0.05, 1e-12));
    }

    #[test]
    fn six_step_invasion_constant_at_alpha_12() {
        let ts = logk_timescale(&six_step(), 12.0).unwrap();
        assert!(close(ts.invasion, 0.5, 1e-12));
        let slower = logk_timescale(&six_step(), 24.0).unwrap();
        for (a, b) in ts.per_trait.iter().zip(&slower.per_trait).skip(1) {
            assert!(b > a);
        }
    }

    #[test]
    fn pmf_first_terms() {
        assert!(close(excursion_pmf(1.0, 2.0, 0).unwrap(), 2.0 / 3.0, 1e-14));
        assert!(close(
            excursion_pmf(1.0, 2.0, 1).unwrap(),
            4.0 / 27.0,
            1e-14
        ));
        // Cat(3) = 5.
        let p3 = 5.0 * (1.0f64 / 3.0).powi(3) * (2.0f64 / 3.0).powi(4);
        assert!(close(excursion_pmf(1.0, 2.0, 3).unwrap(), p3, 1e-13));
        assert!(excursion_pmf(2.0, 1.0, 0).is_err());
    }

    #[test]
    fn pmf_is_normalized() {
        let total: f64 = (0..2000).map(|k| excursion_pmf(1.0, 2.0, k).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn lambda_matches_mean_offspring_identity() {
        // Mean births per excursion equals b/(d-b).
        for (b, d) in [(1.0, 2.0), (0.3, 1.7), (0.9, 1.0), (1e-6, 1.0)] {
            let got = excursion_mean(b, d).unwrap();
            assert!(close(got, b / (d - b), 1e-12), "({b},{d}): {got}");
        }
        assert!(close(lambda_rho(1.0 / 3.0).unwrap(), 1.0, 1e-13));
        assert_eq!(excursion_mean(0.0, 1.0).unwrap(), 0.0);
        assert!(lambda_rho(0.5).is_err());
    }

    #[test]
    fn lambda_small_rho_leading_term() {
        let r = 1e-6;
        assert!(close(lambda_rho(r).unwrap(), r, 1e-5));
    }

    #[test]
    fn ruin_boundaries_and_value() {
        assert_eq!(ruin_probability(1.0, 2.0, 0, 0, 3).unwrap(), 0.0);
        assert_eq!(ruin_probability(1.0, 2.0, 0, 3, 3).unwrap(), 1.0);
        assert!(close(
            ruin_probability(1.0, 2.0, 0, 1, 3).unwrap(),
            1.0 / 7.0,
            1e-15
        ));
        assert!(ruin_probability(1.0, 2.0, 2, 1, 3).is_err());
    }

    #[test]
    fn extinction_cdf_limits() {
        assert_eq!(extinction_cdf(1.0, 2.0, 1, 0.0).unwrap(), 0.0);
        assert!(close(
            extinction_cdf(1.0, 2.0, 3, 200.0).unwrap(),
            1.0,
            1e-12
        ));
        // Supercritical: eventual extinction probability (d/b)^i.
        assert!(close(
            extinction_cdf(2.0, 1.0, 2, 200.0).unwrap(),
            0.25,
            1e-12
        ));
        // One individual: P(T0 <= t) = d(e^{(b-d)t} - 1)/(b e^{(b-d)t} - d).
        let (b, d, t) = (0.7, 1.3, 0.9f64);
        let e = ((b - d) * t).exp();
        assert!(close(
            extinction_cdf(b, d, 1, t).unwrap(),
            d * (e - 1.0) / (b * e - d),
            1e-13
        ));
    }

    #[test]
    fn rho0_values() {
        let want = 30f64.sqrt() * (-30.0 * (0.5 + 0.5 * 0.5f64.ln())).exp();
        assert!(close(rho0(30.0, 1.0, 0.5).unwrap(), want, 1e-14));
        assert!(close(
            rho0(30.0, 2.0, 0.0).unwrap(),
            30f64.sqrt() * (-60.0f64).exp(),
            1e-14
        ));
        assert_eq!(rho0(1e4, 1.0, 0.5).unwrap(), 0.0);
        // Doubling K doubles the exponent; only the sqrt prefactor breaks exact scaling.
        let gap = log_rho0(2e4, 1.0, 0.5).unwrap() - 2.0 * log_rho0(1e4, 1.0, 0.5).unwrap();
        assert!((gap - 0.5 * (2.0f64.ln() - 1e4f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn t_l_alpha_hand_computed() {
        // f_20 = 1, f_02 = -1, f_12 = -0.5.
        let p = ValleyBuilder::new(&[-0.5, 1.0], &[-1.0, -0.5])
            .rates(&[1.0, 1.0, 2.0], &[0.0; 3])
            .build()
            .unwrap();
        let land = derive_landscape(&p).unwrap();
        let t = t_l_alpha(&land, 3.0).unwrap();
        assert!(close(t.value, 2.0, 1e-12), "{}", t.value);
        assert_eq!(t.bottleneck, 1);
        assert!(t_l_alpha(&land, 2.0).is_err());
    }

    #[test]
    fn tiny_mutation_rate_composition() {
        // ρ_1 = 1/(1 + 1.5 + 0.5) = 1/3, so λ(ρ_1) = 1; f_20 = 0.5.
        let p = ModelParams::new(
            vec![1.0, 1.0, 1.0],
            vec![0.0, 1.5, 0.0],
            vec![
                vec![1.0, 1.0, 2.0],
                vec![0.5, 1.0, 1.0],
                vec![0.5, 1.0, 1.0],
            ],
            Kernel::OneSided,
            1000,
            1e-4,
        )
        .unwrap();
        let land = derive_landscape(&p).unwrap();
        assert!(close(rho_i(&land, 1), 1.0 / 3.0, 1e-15));
        let rate = crossing_rate(&land, 1000, 1e-4, Regime::TinyMutation).unwrap();
        assert!(close(rate, 0.5, 1e-13));
    }

    #[test]
    fn single_step_rate_is_survival_probability() {
        let p = build_example_landscape(&[0.4], &[-0.7]).unwrap();
        let land = derive_landscape(&p).unwrap();
        assert!(close(
            crossing_rate(&land, 100, 1e-3, Regime::TinyMutation).unwrap(),
            0.4,
            1e-15
        ));
    }

    #[test]
    fn small_power_rate_bookkeeping() {
        // L = 3, floor(alpha) = 1: factor b_0/|f_10| and a single λ(ρ_2).
        let p = build_example_landscape(&[-0.5, -2.0, 0.5], &[-1.0, -0.6, -0.8]).unwrap();
        let land = derive_landscape(&p).unwrap();
        let k = 10_000u64;
        let mu = (k as f64).powf(-1.0 / 1.5);
        let want = 1.0 / 0.5 * 0.5 * lambda_rho(rho_i(&land, 2)).unwrap();
        assert!(close(
            crossing_rate(&land, k, mu, Regime::SmallMutationPower).unwrap(),
            want,
            1e-12
        ));
        assert!(close(lambda_rho(rho_i(&land, 2)).unwrap(), 0.5, 1e-12));
    }

    #[test]
    fn classification_examples() {
        let p3 = build_example_landscape(&[-0.5, -2.0, 0.5], &[-1.0, -0.6, -0.8]).unwrap();
        let large =
            classify_regime(&p3.clone().with_k(1_000_000).with_mu(1e6f64.powf(-0.25))).unwrap();
        assert_eq!(large.regime, Regime::LargeMutation);
        assert!(large.t_l_alpha.unwrap() > 0.0);

        let small =
            classify_regime(&p3.clone().with_k(10_000).with_mu(1e4f64.powf(-1.0 / 1.5))).unwrap();
        assert_eq!(small.regime, Regime::SmallMutationPower);
        assert!(small.rate.unwrap() > 0.0 && small.warnings.is_empty());

        let near_int =
            classify_regime(&p3.clone().with_k(10_000).with_mu(1e4f64.powf(-1.0 / 2.02))).unwrap();
        assert_eq!(near_int.warnings.len(), 1);

        let tiny = classify_regime(&p3.clone().with_k(1000).with_mu(1e-4)).unwrap();
        assert_eq!(tiny.regime, Regime::TinyMutation);

        let ext = ValleyBuilder::new(&[-0.5, 0.5], &[-1.0, -0.3])
            .rates(&[1.0, 1.0, 1.0], &[0.5, 0.0, 0.0])
            .capacity(30)
            .mu(1e-30)
            .build()
            .unwrap();
        let pred = classify_regime(&ext).unwrap();
        assert_eq!(pred.regime, Regime::ExtinctionFirst);
        assert!(pred.k_mu < 0.01 * rho0(30.0, 1.0, 0.5).unwrap());
    }

    #[test]
    fn rho_below_half_on_valley() {
        let p = build_example_landscape(&[-0.5, -2.0, 0.5], &[-1.0, -0.6, -0.8]).unwrap();
        let land = derive_landscape(&p).unwrap();
        for i in 1..3 {
            assert!(rho_i(&land, i) < 0.5);
        }
    }
}
