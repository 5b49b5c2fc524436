//! Descriptive statistics and goodness-of-fit tests used by the harness.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::rng::Seed;

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Sample standard deviation over mean.
pub fn coefficient_of_variation(xs: &[f64]) -> f64 {
    variance(xs).sqrt() / mean(xs)
}

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(xs: &[f64]) -> f64 {
    quantile_sorted(&sorted(xs), 0.5)
}

/// Percentile bootstrap 95% interval of `stat`, from a seeded stream.
pub fn bootstrap_ci(
    xs: &[f64],
    stat: impl Fn(&[f64]) -> f64,
    resamples: usize,
    seed: u64,
) -> (f64, f64) {
    let mut rng = Seed::new(seed).rng();
    let n = xs.len();
    let mut buf = vec![0.0; n];
    let mut values: Vec<f64> = (0..resamples)
        .map(|_| {
            for slot in buf.iter_mut() {
                *slot = xs[rng.random_range(0..n)];
            }
            stat(&buf)
        })
        .collect();
    values.sort_by(f64::total_cmp);
    (
        quantile_sorted(&values, 0.025),
        quantile_sorted(&values, 0.975),
    )
}

/// Location summary with bootstrap intervals for the mean and the median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub mean_ci: (f64, f64),
    pub median: f64,
    pub median_ci: (f64, f64),
    pub q05: f64,
    pub q25: f64,
    pub q75: f64,
    pub q95: f64,
}

/// `None` for an empty sample.
pub fn describe(xs: &[f64], seed: u64) -> Option<Summary> {
    if xs.is_empty() {
        return None;
    }
    let s = sorted(xs);
    Some(Summary {
        n: xs.len(),
        mean: mean(xs),
        mean_ci: bootstrap_ci(xs, mean, BOOTSTRAP_RESAMPLES, seed),
        median: quantile_sorted(&s, 0.5),
        median_ci: bootstrap_ci(xs, median, BOOTSTRAP_RESAMPLES, seed.wrapping_add(1)),
        q05: quantile_sorted(&s, 0.05),
        q25: quantile_sorted(&s, 0.25),
        q75: quantile_sorted(&s, 0.75),
        q95: quantile_sorted(&s, 0.95),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub n: usize,
    pub distance: f64,
    /// Asymptotic 1% critical value with the small-sample correction.
    pub critical_1pct: f64,
    pub rejected: bool,
}

pub fn ks_critical_1pct(n: usize) -> f64 {
    let r = (n as f64).sqrt();
    1.6276 / (r + 0.12 + 0.11 / r)
}

/// One-sample Kolmogorov–Smirnov distance against a continuous CDF.
pub fn ks_distance(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let s = sorted(xs);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// KS test of `xs` against the unit exponential.
pub fn ks_unit_exponential(xs: &[f64]) -> KsResult {
    let distance = ks_distance(xs, |x| if x <= 0.0 { 0.0 } else { -(-x).exp_m1() });
    let critical_1pct = ks_critical_1pct(xs.len());
    KsResult {
        n: xs.len(),
        distance,
        critical_1pct,
        rejected: distance >= critical_1pct,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Pearson goodness of fit; `probs` must sum to 1 over the bins of `observed`.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> ChiSquareResult {
    assert_eq!(observed.len(), probs.len(), "one probability per bin");
    let n: u64 = observed.iter().sum();
    let statistic = observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let df = observed.len() - 1;
    let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    ChiSquareResult {
        statistic,
        df,
        p_value: dist.sf(statistic),
    }
}

/// Wilson score interval for a binomial proportion at normal quantile `z`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * nf)) / (1.0 + z2 / nf);
    let half = z / (1.0 + z2 / nf) * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

/// Ordinary least squares `y = intercept + slope · x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LineFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let slope_se = if n > 2.0 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    LineFit {
        slope,
        intercept,
        slope_se,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp1(rng: &mut impl Rng) -> f64 {
        -(1.0 - rng.random::<f64>()).ln()
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn ks_accepts_exponential_and_rejects_constant() {
        let mut rng = Seed::new(7).rng();
        let xs: Vec<f64> = (0..400).map(|_| exp1(&mut rng)).collect();
        assert!(!ks_unit_exponential(&xs).rejected);
        assert!(ks_unit_exponential(&vec![1.0; 400]).rejected);
        assert!((ks_critical_1pct(200) - 0.1147).abs() < 1e-3);
    }

    #[test]
    fn ks_distance_single_point() {
        // One observation at the median: D = 1/2.
        let d = ks_distance(&[2f64.ln()], |x| 1.0 - (-x).exp());
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn chi_square_known_value() {
        // Fair die with a perfect count gives statistic 0 and p = 1.
        let r = chi_square_gof(&[10; 6], &[1.0 / 6.0; 6]);
        assert!(r.statistic.abs() < 1e-12 && (r.p_value - 1.0).abs() < 1e-12);
        // A lopsided count is rejected decisively.
        let r = chi_square_gof(&[0, 50, 50], &[1.0 / 3.0; 3]);
        assert_eq!(r.df, 2);
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn wilson_brackets_estimate() {
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert!(lo < 0.5 && hi > 0.5 && (lo + hi - 1.0).abs() < 1e-12);
        let (lo, hi) = wilson_interval(100, 100, 1.96);
        assert!(lo > 0.95 && (hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_is_seeded_and_brackets_mean() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let a = bootstrap_ci(&xs, mean, 2000, 3);
        assert_eq!(a, bootstrap_ci(&xs, mean, 2000, 3));
        assert!(a.0 < 24.5 && a.1 > 24.5);
    }

    #[test]
    fn line_fit_exact() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = linear_fit(&x, &y);
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.intercept - 2.0).abs() < 1e-14);
        assert!(f.slope_se.abs() < 1e-7);
    }

    #[test]
    fn cv_of_exponential_near_one() {
        let mut rng = Seed::new(11).rng();
        let xs: Vec<f64> = (0..20_000).map(|_| exp1(&mut rng)).collect();
        assert!((coefficient_of_variation(&xs) - 1.0).abs() < 0.03);
    }
}
