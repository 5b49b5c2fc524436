//! Brute-force Monte Carlo and exhaustive references, deliberately written
//! without any of the closed forms or the simulator they are used to check.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::Seed;
use crate::tropical::CascadeSpec;

/// Replicas per parallel chunk; chunk `c` draws from stream `c`.
const CHUNK: u64 = 10_000;

fn check_rates(b: f64, d: f64) -> Result<f64, String> {
    if !(b >= 0.0 && d > 0.0 && b.is_finite() && d.is_finite()) {
        return Err(format!("need b >= 0 and d > 0 (got b = {b}, d = {d})"));
    }
    Ok(b / (b + d))
}

/// Births in one excursion of a linear birth–death process started from one
/// individual, following the jump chain until the population is empty.
/// `None` if the excursion exceeds `cap` births.
fn one_excursion(rng: &mut impl Rng, p_birth: f64, cap: u64) -> Option<u64> {
    let (mut alive, mut births) = (1u64, 0u64);
    while alive > 0 {
        if rng.random::<f64>() < p_birth {
            alive += 1;
            births += 1;
            if births > cap {
                return None;
            }
        } else {
            alive -= 1;
        }
    }
    Some(births)
}

fn chunked<T: Send>(
    n: u64,
    seed: u64,
    threads: usize,
    per_chunk: impl Fn(&mut crate::rng::RandomStream, u64) -> T + Sync + Send,
) -> Result<Vec<T>, String> {
    let chunks = n.div_ceil(CHUNK);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| e.to_string())?;
    Ok(pool.install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let size = CHUNK.min(n - c * CHUNK);
                per_chunk(&mut Seed::new(seed).split(c).rng(), size)
            })
            .collect()
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionCensus {
    pub b: f64,
    pub d: f64,
    pub n: u64,
    /// `histogram[k]` counts excursions with exactly `k` births; the last bin pools the tail.
    pub histogram: Vec<u64>,
    pub mean_births: f64,
    pub std_error: f64,
    /// Excursions stopped at the birth cap (excluded from the histogram).
    pub truncated: u64,
}

/// Simulates `n` excursions and bins their birth counts into `0..=max_bin` (tail pooled).
pub fn excursion_census(
    b: f64,
    d: f64,
    n: u64,
    max_bin: usize,
    seed: u64,
    threads: usize,
) -> Result<ExcursionCensus, String> {
    let p = check_rates(b, d)?;
    if b >= d {
        return Err(format!("excursions need b < d (got b = {b}, d = {d})"));
    }
    let cap = 100_000_000;
    let parts = chunked(n, seed, threads, |rng, size| {
        let mut hist = vec![0u64; max_bin + 1];
        let (mut sum, mut sq, mut truncated) = (0.0f64, 0.0f64, 0u64);
        for _ in 0..size {
            match one_excursion(rng, p, cap) {
                Some(k) => {
                    hist[(k as usize).min(max_bin)] += 1;
                    sum += k as f64;
                    sq += (k as f64) * (k as f64);
                }
                None => truncated += 1,
            }
        }
        (hist, sum, sq, truncated)
    })?;
    let mut histogram = vec![0u64; max_bin + 1];
    let (mut sum, mut sq, mut truncated) = (0.0, 0.0, 0);
    for (h, s, q, t) in parts {
        for (a, b) in histogram.iter_mut().zip(h) {
            *a += b;
        }
        sum += s;
        sq += q;
        truncated += t;
    }
    let m = (n - truncated) as f64;
    let mean_births = sum / m;
    let var = (sq / m - mean_births * mean_births) * m / (m - 1.0);
    Ok(ExcursionCensus {
        b,
        d,
        n,
        histogram,
        mean_births,
        std_error: (var / m).sqrt(),
        truncated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuinEstimate {
    pub trials: u64,
    /// Walks reaching `k` before `i`.
    pub hits: u64,
    pub frequency: f64,
    pub std_error: f64,
}

/// Frequency with which the jump chain started at `j` reaches `k` before `i`, for `(i, j, k)`.
pub fn ruin_trials(
    b: f64,
    d: f64,
    (i, j, k): (u64, u64, u64),
    n: u64,
    seed: u64,
    threads: usize,
) -> Result<RuinEstimate, String> {
    let p = check_rates(b, d)?;
    if !(i <= j && j <= k && i < k) {
        return Err(format!("need i <= j <= k and i < k (got {i}, {j}, {k})"));
    }
    let hits: u64 = chunked(n, seed, threads, |rng, size| {
        let mut hits = 0;
        for _ in 0..size {
            let mut x = j;
            while x != i && x != k {
                if rng.random::<f64>() < p {
                    x += 1;
                } else {
                    x -= 1;
                }
            }
            hits += (x == k) as u64;
        }
        hits
    })?
    .into_iter()
    .sum();
    let f = hits as f64 / n as f64;
    Ok(RuinEstimate {
        trials: n,
        hits,
        frequency: f,
        std_error: (f * (1.0 - f) / n as f64).sqrt(),
    })
}

/// Exhaustive limiting exponents: the best over every seeded source `α` and
/// every growth trait `β` with `α ≤ β ≤ i` of `(i - α) + p_α - t f_β`, negated.
pub fn exhaustive_exponent(spec: &CascadeSpec, t: f64) -> Vec<f64> {
    let n = spec.f.len();
    let mut out = vec![f64::NEG_INFINITY; n];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut best = f64::INFINITY;
        for alpha in 0..=i {
            if spec.ell[alpha] == 0.0 {
                continue;
            }
            for beta in alpha..=i {
                let v = ((i - alpha) as f64 + spec.p[alpha]) - t * spec.f[beta];
                if v < best {
                    best = v;
                }
            }
        }
        *slot = -best;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn census_is_reproducible_across_threads() {
        let a = excursion_census(1.0, 2.0, 25_000, 5, 9, 1).unwrap();
        let b = excursion_census(1.0, 2.0, 25_000, 5, 9, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.histogram.iter().sum::<u64>(), 25_000);
    }

    #[test]
    fn census_zero_birth_fraction() {
        // First event is a death with probability d/(b+d) = 2/3.
        let c = excursion_census(1.0, 2.0, 100_000, 3, 1, 1).unwrap();
        let f = c.histogram[0] as f64 / 1e5;
        assert!((f - 2.0 / 3.0).abs() < 4.0 * (2.0f64 / 9.0 / 1e5).sqrt());
    }

    #[test]
    fn ruin_boundary_starts() {
        assert_eq!(ruin_trials(1.0, 2.0, (0, 0, 3), 100, 1, 1).unwrap().hits, 0);
        assert_eq!(
            ruin_trials(1.0, 2.0, (0, 3, 3), 100, 1, 1).unwrap().hits,
            100
        );
        assert!(ruin_trials(1.0, 2.0, (3, 1, 3), 100, 1, 1).is_err());
    }

    #[test]
    fn exhaustive_matches_hand_values() {
        let spec = CascadeSpec {
            zeta: 1,
            f: vec![0.0, -1.0, 1.0],
            b: vec![1.0; 3],
            ell: vec![1.0, 0.0, 0.0],
            p: vec![0.0; 3],
        };
        assert_eq!(exhaustive_exponent(&spec, 2.0), vec![0.0, -1.0, 0.0]);
    }
}
