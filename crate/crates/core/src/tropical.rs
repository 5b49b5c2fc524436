//! Log-rescaled limits as the mutation probability vanishes.
//!
//! Two constructions live here: the exact solution of the lower-bidiagonal
//! linear cascade `y' = M y` together with its limiting exponents, and the
//! piecewise-linear limit paths of the full deterministic system started from
//! the resident equilibrium.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FitnessLandscape, Kernel, ModelParams, DEFAULT_DISTINCT_TOL};
use crate::ode::{self, IntegrateOptions, OdeError, VectorField};

/// Smallest admissible gap between two growth rates for the spectral formulas.
pub const NEAR_DEGENERATE_GAP: f64 = 1e-9;

/// Tolerance for the continuity check at the swap time.
pub const CONTINUITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TropicalError {
    #[error("kernel factor must be 1 or 2 (got {0})")]
    BadZeta(u8),
    #[error("{name} has length {got}, expected {expected}")]
    Length {
        name: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("{name}[{index}] = {value} is not admissible")]
    BadEntry {
        name: &'static str,
        index: usize,
        value: f64,
    },
    #[error("growth rates {i} and {j} differ by {gap:e}, below {NEAR_DEGENERATE_GAP:e}")]
    NearDegenerate { i: usize, j: usize, gap: f64 },
    #[error("mutation probability must be in (0, 1) here (got {0})")]
    BadMu(f64),
    #[error("landscape violates the valley conditions: {0}")]
    InvalidLandscape(String),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

/// Linear cascade `y_i' = (f_i - b_i μ) y_i + (μ b_{i-1} / ζ) y_{i-1}` with
/// initial data `y_i(0) = ell_i · μ^{p_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeSpec {
    pub zeta: u8,
    pub f: Vec<f64>,
    pub b: Vec<f64>,
    pub ell: Vec<f64>,
    pub p: Vec<f64>,
}

impl CascadeSpec {
    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn validate(&self) -> Result<(), TropicalError> {
        if self.zeta != 1 && self.zeta != 2 {
            return Err(TropicalError::BadZeta(self.zeta));
        }
        let n = self.n();
        for (name, v) in [("b", &self.b), ("ell", &self.ell), ("p", &self.p)] {
            if v.len() != n {
                return Err(TropicalError::Length {
                    name,
                    got: v.len(),
                    expected: n,
                });
            }
        }
        let bad = |name, index, value| Err(TropicalError::BadEntry { name, index, value });
        for i in 0..n {
            if !self.f[i].is_finite() {
                return bad("f", i, self.f[i]);
            }
            if !(self.b[i].is_finite() && self.b[i] >= 0.0) {
                return bad("b", i, self.b[i]);
            }
            if !(self.ell[i].is_finite() && self.ell[i] >= 0.0) {
                return bad("ell", i, self.ell[i]);
            }
            if self.ell[i] != 0.0 && !(self.p[i].is_finite() && self.p[i] >= 0.0) {
                return bad("p", i, self.p[i]);
            }
        }
        Ok(())
    }

    /// Smallest pairwise gap of `f`, with the pair attaining it.
    pub fn min_gap(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..self.n() {
            for j in i + 1..self.n() {
                let g = (self.f[i] - self.f[j]).abs();
                if best.is_none_or(|b| g < b.2) {
                    best = Some((i, j, g));
                }
            }
        }
        best
    }

    fn rates(&self, mu: f64) -> (Vec<f64>, Vec<f64>) {
        let diag = self
            .f
            .iter()
            .zip(&self.b)
            .map(|(f, b)| f - b * mu)
            .collect();
        let zeta = self.zeta as f64;
        let sub = (1..self.n()).map(|i| mu * self.b[i - 1] / zeta).collect();
        (diag, sub)
    }

    pub fn initial(&self, mu: f64) -> Vec<f64> {
        self.ell
            .iter()
            .zip(&self.p)
            .map(|(&l, &p)| if l == 0.0 { 0.0 } else { l * mu.powf(p) })
            .collect()
    }
}

/// The cascade as a vector field for the numerical integrator.
#[derive(Debug, Clone)]
pub struct CascadeField {
    diag: Vec<f64>,
    sub: Vec<f64>,
}

impl CascadeField {
    pub fn new(spec: &CascadeSpec, mu: f64) -> Self {
        let (diag, sub) = spec.rates(mu);
        CascadeField { diag, sub }
    }
}

impl VectorField for CascadeField {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn eval(&self, y: &[f64], dy: &mut [f64]) {
        dy[0] = self.diag[0] * y[0];
        for i in 1..y.len() {
            dy[i] = self.diag[i] * y[i] + self.sub[i - 1] * y[i - 1];
        }
    }
}

/// Limiting exponents `-m_i(t)`; `-∞` where no trait at or below `i` is seeded.
pub fn cascade_exponent(spec: &CascadeSpec, t: f64) -> Vec<f64> {
    let n = spec.n();
    (0..n)
        .map(|i| {
            let mut best = f64::INFINITY;
            let mut source_min = f64::INFINITY;
            for alpha in 0..=i {
                if spec.ell[alpha] != 0.0 {
                    source_min = source_min.min((i - alpha) as f64 + spec.p[alpha]);
                }
                if source_min < f64::INFINITY {
                    best = best.min(source_min - t * spec.f[alpha]);
                }
            }
            -best
        })
        .collect()
}

/// Natural logarithm of the exact cascade solution at time `t`.
///
/// The solution is `exp(tM) y(0)`. Shifting the diagonal by its most negative
/// entry makes `tM + ctI` entrywise nonnegative, so Taylor expansion and
/// repeated squaring involve no cancellation and every entry keeps full
/// relative accuracy, however small. A running log-scale keeps the squaring
/// inside the floating-point range.
pub fn cascade_log(spec: &CascadeSpec, mu: f64, t: f64) -> Result<Vec<f64>, TropicalError> {
    spec.validate()?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(TropicalError::BadEntry {
            name: "t",
            index: 0,
            value: t,
        });
    }
    let n = spec.n();
    let (diag, sub) = spec.rates(mu);
    let shift = diag.iter().cloned().fold(0.0, |acc: f64, v| acc.max(-v));
    // Lower-bidiagonal A = t (M + shift I), stored densely.
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        a[i][i] = t * (diag[i] + shift);
        if i > 0 {
            a[i][i - 1] = t * sub[i - 1];
        }
    }
    let norm = (0..n).map(|i| a[i].iter().sum::<f64>()).fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scale = 0.5f64.powi(squarings);
    for row in a.iter_mut() {
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    let mut e = identity(n);
    let mut term = identity(n);
    for k in 1..=(n + 30) {
        term = matmul(&term, &a);
        let inv = 1.0 / k as f64;
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        for i in 0..n {
            for j in 0..=i {
                e[i][j] += term[i][j];
            }
        }
    }
    let mut log_scale = 0.0;
    for _ in 0..squarings {
        e = matmul(&e, &e);
        let m = e.iter().flatten().cloned().fold(0.0, f64::max);
        for row in e.iter_mut() {
            for v in row.iter_mut() {
                *v /= m;
            }
        }
        log_scale = 2.0 * log_scale + m.ln();
    }
    // Combine the initial data in log space: each term is e_ij · ell_j · μ^{p_j}.
    let log_mu = mu.ln();
    let log_y0: Vec<f64> = (0..n)
        .map(|j| {
            if spec.ell[j] == 0.0 {
                f64::NEG_INFINITY
            } else {
                spec.ell[j].ln() + spec.p[j] * log_mu
            }
        })
        .collect();
    Ok((0..n)
        .map(|i| {
            let logs: Vec<f64> = (0..=i)
                .filter(|&j| e[i][j] > 0.0 && log_y0[j] > f64::NEG_INFINITY)
                .map(|j| e[i][j].ln() + log_y0[j])
                .collect();
            log_sum_exp(&logs) + log_scale - shift * t
        })
        .collect())
}

/// Exact cascade solution at time `t`.
///
/// Rejects specs whose growth rates come closer than [`NEAR_DEGENERATE_GAP`],
/// where the spectral form of the solution loses meaning; see
/// [`cascade_values`] for the numerical fallback.
pub fn cascade_exact(spec: &CascadeSpec, mu: f64, t: f64) -> Result<Vec<f64>, TropicalError> {
    spec.validate()?;
    if let Some((i, j, gap)) = spec.min_gap() {
        if gap < NEAR_DEGENERATE_GAP {
            return Err(TropicalError::NearDegenerate { i, j, gap });
        }
    }
    Ok(cascade_log(spec, mu, t)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

/// [`cascade_exact`], falling back to numerical integration for near-degenerate specs.
pub fn cascade_values(spec: &CascadeSpec, mu: f64, t: f64) -> Result<Vec<f64>, TropicalError> {
    match cascade_exact(spec, mu, t) {
        Err(TropicalError::NearDegenerate { i, j, gap }) => {
            log::warn!(
                "growth rates {i} and {j} differ by {gap:e}; integrating the cascade numerically"
            );
            let opts = IntegrateOptions::new(1e-11).atol(0.0);
            let sol =
                ode::integrate_field(&CascadeField::new(spec, mu), &spec.initial(mu), &[t], &opts)?;
            Ok(sol.final_state().to_vec())
        }
        other => other,
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            if a[i][k] != 0.0 {
                for j in 0..n {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
    }
    c
}

/// Explicit diagonalization `M = S D S^{-1}` of the cascade matrix.
///
/// Entries of `S` and `S^{-1}` scale like powers of `1/μ` and `μ`; evaluating
/// `S e^{tD} S^{-1}` is only well conditioned when the growth rates are well
/// separated on the time scale considered.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigendecomposition {
    pub s: Vec<Vec<f64>>,
    pub d: Vec<f64>,
    pub s_inv: Vec<Vec<f64>>,
}

impl Eigendecomposition {
    pub fn new(spec: &CascadeSpec, mu: f64) -> Result<Self, TropicalError> {
        spec.validate()?;
        if !(mu > 0.0 && mu < 1.0) {
            return Err(TropicalError::BadMu(mu));
        }
        let n = spec.n();
        let l = n - 1;
        if let Some(i) = (0..l).find(|&i| spec.b[i] <= 0.0) {
            return Err(TropicalError::BadEntry {
                name: "b",
                index: i,
                value: spec.b[i],
            });
        }
        let (lambda, _) = spec.rates(mu);
        for i in 0..n {
            for j in i + 1..n {
                let gap = (lambda[i] - lambda[j]).abs();
                if gap < NEAR_DEGENERATE_GAP {
                    return Err(TropicalError::NearDegenerate { i, j, gap });
                }
            }
        }
        let ratio = spec.zeta as f64 / mu;
        let mut s = vec![vec![0.0; n]; n];
        let mut s_inv = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let num: f64 = (i + 1..=l).map(|k| lambda[j] - lambda[k]).product();
                let births: f64 = (i..l).map(|k| spec.b[k]).product();
                s[i][j] = ratio.powi((l - i) as i32) * num / births;

                let births: f64 = (j..l).map(|k| spec.b[k]).product();
                let den: f64 = (j..=l)
                    .filter(|&k| k != i)
                    .map(|k| lambda[i] - lambda[k])
                    .product();
                s_inv[i][j] = ratio.powi(-((l - j) as i32)) * births / den;
            }
        }
        Ok(Eigendecomposition {
            s,
            d: lambda,
            s_inv,
        })
    }

    /// `S e^{tD} S^{-1} y0`.
    pub fn evaluate(&self, t: f64, y0: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        let z: Vec<f64> = (0..n)
            .map(|a| (0..=a).map(|g| self.s_inv[a][g] * y0[g]).sum::<f64>() * (t * self.d[a]).exp())
            .collect();
        (0..n)
            .map(|i| (0..=i).map(|a| self.s[i][a] * z[a]).sum())
            .collect()
    }

    /// `S D S^{-1}`, which should reproduce the cascade matrix.
    pub fn reconstruct(&self) -> Vec<Vec<f64>> {
        let n = self.d.len();
        let sd: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| self.s[i][j] * self.d[j]).collect())
            .collect();
        matmul(&sd, &self.s_inv)
    }
}

/// One linear piece on `[t0, t1)`; `t1 = None` means unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub t0: f64,
    pub t1: Option<f64>,
    pub value_at_t0: f64,
    pub slope: f64,
}

impl Piece {
    fn at(&self, t: f64) -> f64 {
        self.value_at_t0 + self.slope * (t - self.t0)
    }
}

/// Continuous piecewise-linear function on `[t0, ∞)` given by its breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    pub pieces: Vec<Piece>,
}

impl PiecewiseLinear {
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.pieces.iter().rposition(|p| p.t0 <= t).unwrap_or(0);
        self.pieces[idx].at(t)
    }

    pub fn slopes(&self) -> Vec<f64> {
        self.pieces.iter().map(|p| p.slope).collect()
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces.iter().skip(1).map(|p| p.t0).collect()
    }

    /// Largest jump between the left and right limits at interior breakpoints.
    pub fn max_jump(&self) -> f64 {
        self.pieces
            .windows(2)
            .map(|w| (w[0].at(w[1].t0) - w[1].value_at_t0).abs())
            .fold(0.0, f64::max)
    }

    fn push(&mut self, piece: Piece) {
        if let Some(last) = self.pieces.last_mut() {
            if last.slope == piece.slope && (last.at(piece.t0) - piece.value_at_t0).abs() <= 1e-12 {
                last.t1 = piece.t1;
                return;
            }
        }
        self.pieces.push(piece);
    }

    fn append(&mut self, other: PiecewiseLinear) {
        for p in other.pieces {
            self.push(p);
        }
    }
}

/// A line given by its value at the left end of the window and its slope.
#[derive(Debug, Clone, Copy)]
struct Line {
    value: f64,
    slope: f64,
}

/// Upper envelope of `lines` on `[a, b)`, with exact crossing points.
fn upper_envelope(lines: &[Line], a: f64, b: Option<f64>) -> PiecewiseLinear {
    let better =
        |x: &Line, y: &Line| x.value > y.value || (x.value == y.value && x.slope > y.slope);
    let mut cur = lines[0];
    for l in &lines[1..] {
        if better(l, &cur) {
            cur = *l;
        }
    }
    let mut out = PiecewiseLinear { pieces: Vec::new() };
    let mut t = a;
    loop {
        // Earliest point after t where a steeper line overtakes the current one.
        let mut next: Option<(f64, Line)> = None;
        for l in lines.iter().filter(|l| l.slope > cur.slope) {
            let cross = a + (cur.value - l.value) / (l.slope - cur.slope);
            let cross = cross.max(t);
            let take = match next {
                None => true,
                Some((tc, lc)) => cross < tc || (cross == tc && l.slope > lc.slope),
            };
            if take {
                next = Some((cross, *l));
            }
        }
        match next {
            Some((tc, l)) if b.is_none_or(|b| tc < b) => {
                if tc > t {
                    out.push(Piece {
                        t0: t,
                        t1: Some(tc),
                        value_at_t0: cur.value + cur.slope * (t - a),
                        slope: cur.slope,
                    });
                }
                t = tc;
                cur = l;
            }
            _ => {
                out.push(Piece {
                    t0: t,
                    t1: b,
                    value_at_t0: cur.value + cur.slope * (t - a),
                    slope: cur.slope,
                });
                return out;
            }
        }
    }
}

/// Indices where `f_iL` strictly exceeds every earlier `f_kL`, starting at 0.
///
/// These are the traits whose slow decay after the swap is not already
/// dominated by a trait closer to the resident.
pub fn fitness_records(f_col_l: &[f64]) -> Vec<usize> {
    let mut records = vec![0];
    let mut best = f_col_l[0];
    for (i, &f) in f_col_l.iter().enumerate().skip(1) {
        if f > best {
            records.push(i);
            best = f;
        }
    }
    records
}

/// Limit paths of every trait, plus the swap time and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TropicalPath {
    pub kernel: Kernel,
    /// Rescaled time at which the target trait reaches order one.
    pub swap_time: f64,
    /// Fitness records used by the two-sided formula (empty for one-sided).
    pub records: Vec<usize>,
    pub traits: Vec<PiecewiseLinear>,
    /// Largest mismatch between the left and right limits at the swap.
    pub swap_jump: f64,
}

impl TropicalPath {
    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.traits.iter().map(|p| p.eval(t)).collect()
    }

    pub fn is_continuous(&self) -> bool {
        self.swap_jump <= CONTINUITY_TOL
    }

    /// JSON array of `{trait, pieces}` records.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.traits
                .iter()
                .enumerate()
                .map(|(i, p)| serde_json::json!({ "trait": i, "pieces": p.pieces }))
                .collect(),
        )
    }

    /// CSV `t,x0,...,xL` sampled on `grid`.
    pub fn to_csv(&self, grid: &[f64]) -> String {
        let mut out = String::from("t");
        for i in 0..self.traits.len() {
            out.push_str(&format!(",x{i}"));
        }
        out.push('\n');
        for &t in grid {
            out.push_str(&t.to_string());
            for v in self.eval(t) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Piecewise-linear limits of `log x_i(t log(1/μ)) / log(1/μ)` from the resident equilibrium.
pub fn limit_path(land: &FitnessLandscape, kernel: Kernel) -> Result<TropicalPath, TropicalError> {
    let report = match &land.validity {
        Some(r) => r.clone(),
        None => crate::model::validate_valley(land, DEFAULT_DISTINCT_TOL),
    };
    if !report.valid {
        let failed: Vec<String> = report.failed().map(|c| format!("{c:?}")).collect();
        return Err(TropicalError::InvalidLandscape(failed.join(", ")));
    }
    let l = land.l;
    let lf = l as f64;
    let f_l0 = land.f(l, 0);
    let swap = lf / f_l0;
    let f_col_l: Vec<f64> = (0..l).map(|i| land.f(i, l)).collect();
    let records = match kernel {
        Kernel::OneSided => Vec::new(),
        Kernel::TwoSided => fitness_records(&f_col_l),
    };

    let mut traits = Vec::with_capacity(l + 1);
    let mut swap_jump: f64 = 0.0;
    for i in 0..=l {
        let fi = i as f64;
        let (pre_lines, post_lines): (Vec<Line>, Vec<Line>) = match kernel {
            Kernel::OneSided if i == l => (
                vec![Line {
                    value: -lf,
                    slope: f_l0,
                }],
                vec![Line {
                    value: 0.0,
                    slope: 0.0,
                }],
            ),
            Kernel::OneSided => {
                let slowest = f_col_l[..=i]
                    .iter()
                    .map(|f| f.abs())
                    .fold(f64::INFINITY, f64::min);
                (
                    vec![Line {
                        value: -fi,
                        slope: 0.0,
                    }],
                    vec![Line {
                        value: -fi,
                        slope: -slowest,
                    }],
                )
            }
            Kernel::TwoSided => {
                let pre = vec![
                    Line {
                        value: -fi,
                        slope: 0.0,
                    },
                    Line {
                        value: -2.0 * lf + fi,
                        slope: f_l0,
                    },
                ];
                let mut post = vec![Line {
                    value: -(lf - fi),
                    slope: 0.0,
                }];
                for f in f_col_l.iter().take((i + 1).min(l)) {
                    post.push(Line {
                        value: -fi,
                        slope: -f.abs(),
                    });
                }
                for &r in &records {
                    let dist = (i as f64 - r as f64).abs();
                    post.push(Line {
                        value: -(r as f64) - dist,
                        slope: -f_col_l[r].abs(),
                    });
                }
                (pre, post)
            }
        };
        let mut path = upper_envelope(&pre_lines, 0.0, Some(swap));
        let left = path.eval(swap);
        let post = upper_envelope(&post_lines, swap, None);
        swap_jump = swap_jump.max((left - post.pieces[0].value_at_t0).abs());
        path.append(post);
        traits.push(path);
    }
    if swap_jump > CONTINUITY_TOL {
        log::warn!("limit path is discontinuous at the swap (jump {swap_jump:e})");
    }
    Ok(TropicalPath {
        kernel,
        swap_time: swap,
        records,
        traits,
        swap_jump,
    })
}

/// Distance between the log-rescaled ODE solution and the limit path at one `μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceEntry {
    pub mu: f64,
    pub sup_distance: f64,
    pub per_trait: Vec<f64>,
    /// Rescaled time and trait where the supremum is attained.
    pub argmax_t: f64,
    pub argmax_trait: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub kernel: Kernel,
    pub entries: Vec<ConvergenceEntry>,
    /// Whether the sup distances strictly decrease along the `μ` list.
    pub decreasing: bool,
    /// Sup distance extrapolated to `μ → 0`; see [`compare_with_path`].
    pub limit_estimate: Option<f64>,
}

impl ConvergenceReport {
    pub fn last(&self) -> &ConvergenceEntry {
        self.entries.last().expect("report has at least one entry")
    }
}

/// Log-rescaled ODE coordinates at rescaled times `grid`, from the resident equilibrium.
pub fn rescaled_ode_path(
    params: &ModelParams,
    mu: f64,
    grid: &[f64],
) -> Result<Vec<Vec<f64>>, TropicalError> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(TropicalError::BadMu(mu));
    }
    let p = params.clone().with_mu(mu);
    let land = crate::model::derive_landscape(&p).map_err(OdeError::from)?;
    let mut x0 = vec![0.0; p.n_traits()];
    x0[0] = land.xbar[0];
    let scale = (1.0 / mu).ln();
    let real: Vec<f64> = grid.iter().map(|t| t * scale).collect();
    // Pure relative control: the interesting components are powers of μ.
    let opts = IntegrateOptions::new(1e-10).atol(0.0);
    let sol = ode::integrate_with(&p, &x0, &real, &opts)?;
    Ok(sol
        .states
        .iter()
        .map(|x| x.iter().map(|v| v.ln() / scale).collect())
        .collect())
}

/// Sup-norm distance between the rescaled ODE path and the limit path for each `μ`.
///
/// Grid points at `t = 0` are skipped: the ODE starts from exact zeros there.
pub fn verify_against_ode(
    params: &ModelParams,
    kernel: Kernel,
    mu_list: &[f64],
    grid: &[f64],
) -> Result<ConvergenceReport, TropicalError> {
    let params = params.clone().with_kernel(kernel);
    let land = crate::model::derive_landscape(&params.clone().with_mu(0.0))
        .map_err(OdeError::from)?
        .validated(DEFAULT_DISTINCT_TOL);
    let path = limit_path(&land, kernel)?;
    compare_with_path(&params, &path, mu_list, grid)
}

/// As [`verify_against_ode`], against a caller-supplied limit path.
pub fn compare_with_path(
    params: &ModelParams,
    path: &TropicalPath,
    mu_list: &[f64],
    grid: &[f64],
) -> Result<ConvergenceReport, TropicalError> {
    let params = params.clone().with_kernel(path.kernel);
    let grid: Vec<f64> = grid.iter().copied().filter(|&t| t > 0.0).collect();
    let mut entries = Vec::with_capacity(mu_list.len());
    for &mu in mu_list {
        let rescaled = rescaled_ode_path(&params, mu, &grid)?;
        let mut per_trait = vec![0.0f64; params.n_traits()];
        let (mut sup, mut arg_t, mut arg_i) = (0.0, 0.0, 0);
        for (&t, row) in grid.iter().zip(&rescaled) {
            let limit = path.eval(t);
            for (i, (v, w)) in row.iter().zip(&limit).enumerate() {
                let d = (v - w).abs();
                per_trait[i] = per_trait[i].max(d);
                if d > sup {
                    (sup, arg_t, arg_i) = (d, t, i);
                }
            }
        }
        entries.push(ConvergenceEntry {
            mu,
            sup_distance: sup,
            per_trait,
            argmax_t: arg_t,
            argmax_trait: arg_i,
        });
    }
    let decreasing = entries
        .windows(2)
        .all(|w| w[1].sup_distance < w[0].sup_distance);
    let limit_estimate = limit_estimate(&entries);
    Ok(ConvergenceReport {
        kernel: path.kernel,
        entries,
        decreasing,
        limit_estimate,
    })
}

/// Sup distance extrapolated to `μ → 0` through the last two entries, linearly
/// in `1/ln(1/μ)`. Earlier entries are left out because small rescaled
/// prefactors make the largest `μ` pre-asymptotic.
fn limit_estimate(entries: &[ConvergenceEntry]) -> Option<f64> {
    let [.., a, b] = entries else { return None };
    let (xa, xb) = (1.0 / (1.0 / a.mu).ln(), 1.0 / (1.0 / b.mu).ln());
    if xa == xb {
        return None;
    }
    let slope = (a.sup_distance - b.sup_distance) / (xa - xb);
    Some(b.sup_distance - slope * xb)
}
