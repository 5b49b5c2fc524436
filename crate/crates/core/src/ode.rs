//! Deterministic large-population limit and a Dormand–Prince 5(4) integrator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{derive_landscape, ModelError, ModelParams, Targets};

/// Smallest clamp threshold: negatives above `-NEG_CLAMP` are always set to zero.
pub const NEG_CLAMP: f64 = 1e-14;

/// With an absolute error floor, vanishing components carry noise of a few
/// times that floor; the exact solution is nonnegative, so negatives down to
/// this multiple of the floor are clamped too.
pub const CLAMP_FLOOR_MULTIPLE: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size {h:e} fell below the floor {floor:e} at t = {t} (system too stiff for an explicit pair)")]
    StepSizeUnderflow { t: f64, h: f64, floor: f64 },
    #[error("tolerance {0:e} outside (1e-13, 1e-3)")]
    BadTolerance(f64),
    #[error("initial value has {got} components, expected {expected}")]
    Shape { got: usize, expected: usize },
    #[error("initial component {0} is negative or not finite")]
    BadInitial(usize),
    #[error("output grid must be nondecreasing and start at or after 0")]
    BadGrid,
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error("step budget of {0} exhausted")]
    TooManySteps(u64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Autonomous vector field `y' = F(y)`.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, y: &[f64], dy: &mut [f64]);
}

/// Mutation-perturbed Lotka–Volterra field.
#[derive(Debug, Clone)]
pub struct LvField {
    n: usize,
    growth: Vec<f64>,
    c: Vec<f64>,
    /// Per source trait: coefficient `μ b_j` times kernel weight, and destination.
    inflow: Vec<(usize, usize, f64)>,
}

impl LvField {
    pub fn new(params: &ModelParams) -> Self {
        let n = params.n_traits();
        let mut inflow = Vec::new();
        for j in 0..n {
            let m = params.mu * params.b[j];
            match params.kernel.targets(j, params.l) {
                Targets::None => {}
                Targets::One(i) => inflow.push((j, i, m)),
                Targets::Split(a, b) => {
                    inflow.push((j, a, 0.5 * m));
                    inflow.push((j, b, 0.5 * m));
                }
            }
        }
        LvField {
            n,
            growth: (0..n)
                .map(|i| (1.0 - params.mu) * params.b[i] - params.d[i])
                .collect(),
            c: params.c.clone(),
            inflow,
        }
    }
}

impl VectorField for LvField {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.c[i * n..(i + 1) * n];
            let pressure: f64 = row.iter().zip(x).map(|(c, x)| c * x).sum();
            dx[i] = (self.growth[i] - pressure) * x[i];
        }
        for &(j, i, m) in &self.inflow {
            dx[i] += m * x[j];
        }
    }
}

/// Right-hand side of the deterministic system at `x`.
pub fn rhs(x: &[f64], params: &ModelParams) -> Vec<f64> {
    let field = LvField::new(params);
    let mut dx = vec![0.0; x.len()];
    field.eval(x, &mut dx);
    dx
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrateOptions {
    pub rtol: f64,
    /// Absolute error floor; defaults to `rtol · 1e-3`. Zero selects pure
    /// relative control, under which components that are exactly zero at the
    /// start of a step do not enter the error estimate.
    pub atol: Option<f64>,
    pub max_steps: u64,
    /// Clamp tiny negative overshoot to zero after each accepted step.
    pub clamp: bool,
}

impl IntegrateOptions {
    pub fn new(tol: f64) -> Self {
        IntegrateOptions {
            rtol: tol,
            atol: None,
            max_steps: 50_000_000,
            clamp: true,
        }
    }

    pub fn atol(mut self, atol: f64) -> Self {
        self.atol = Some(atol);
        self
    }

    fn abs_floor(&self) -> f64 {
        self.atol.unwrap_or(self.rtol * 1e-3)
    }

    /// Negative values above `-clamp_threshold()` are reset to zero.
    pub fn clamp_threshold(&self) -> f64 {
        (CLAMP_FLOOR_MULTIPLE * self.abs_floor()).max(NEG_CLAMP)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeState {
    pub x: Vec<f64>,
    pub t: f64,
}

/// States on the requested output grid plus integration statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub accepted: u64,
    pub rejected: u64,
    /// Number of component values clamped from tiny negatives to zero.
    pub clamped: u64,
    /// Most negative component seen in an accepted step (0 if none).
    pub min_component: f64,
}

impl Solution {
    pub fn state(&self, index: usize) -> OdeState {
        OdeState {
            x: self.states[index].clone(),
            t: self.times[index],
        }
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// CSV `t,x0,...,xL`.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, |s| s.len());
        let mut out = String::from("t");
        for i in 0..n {
            out.push_str(&format!(",x{i}"));
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.states) {
            out.push_str(&t.to_string());
            for x in row {
                out.push_str(&format!(",{x:e}"));
            }
            out.push('\n');
        }
        out
    }

    /// Rescaled clock `τ = t / log(1/μ)` and `log x_i / log(1/μ)` per trait.
    pub fn log_rescaled(&self, mu: f64) -> Vec<(f64, Vec<f64>)> {
        let scale = (1.0 / mu).ln();
        self.times
            .iter()
            .zip(&self.states)
            .map(|(t, x)| (t / scale, x.iter().map(|v| v.ln() / scale).collect()))
            .collect()
    }

    /// CSV `tau,log_x0,...` of [`Solution::log_rescaled`].
    pub fn to_log_csv(&self, mu: f64) -> String {
        let rows = self.log_rescaled(mu);
        let n = rows.first().map_or(0, |r| r.1.len());
        let mut out = String::from("tau");
        for i in 0..n {
            out.push_str(&format!(",log_x{i}"));
        }
        out.push('\n');
        for (tau, row) in rows {
            out.push_str(&tau.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

// Dormand–Prince 5(4) tableau.
// The field is autonomous, so the node abscissae are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

struct Work {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
    err: Vec<f64>,
    dense: [Vec<f64>; 5],
}

impl Work {
    fn new(n: usize) -> Self {
        Work {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
            err: vec![0.0; n],
            dense: std::array::from_fn(|_| vec![0.0; n]),
        }
    }
}

fn error_norm(y: &[f64], y_new: &[f64], err: &[f64], rtol: f64, atol: f64) -> f64 {
    let n = y.len() as f64;
    let s: f64 = y
        .iter()
        .zip(y_new)
        .zip(err)
        .map(|((a, b), e)| {
            // Under pure relative control a component that starts the step at
            // exactly zero has no scale to be measured against.
            if atol == 0.0 && *a == 0.0 {
                return 0.0;
            }
            let sc = (atol + rtol * a.abs().max(b.abs())).max(f64::MIN_POSITIVE);
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

fn initial_step<F: VectorField>(
    field: &F,
    y: &[f64],
    f0: &[f64],
    span: f64,
    rtol: f64,
    atol: f64,
) -> f64 {
    let sc: Vec<f64> = y
        .iter()
        .map(|v| (atol + rtol * v.abs()).max(f64::MIN_POSITIVE))
        .collect();
    let skip: Vec<bool> = y.iter().map(|v| atol == 0.0 && *v == 0.0).collect();
    let norm = |v: &[f64]| -> f64 {
        let s: f64 = v
            .iter()
            .zip(&sc)
            .zip(&skip)
            .filter(|(_, &skip)| !skip)
            .map(|((a, s), _)| (a / s).powi(2))
            .sum();
        (s / v.len() as f64).sqrt()
    };
    let d0 = norm(y);
    let d1 = norm(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(span);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, f)| a + h0 * f).collect();
    let mut f1 = vec![0.0; y.len()];
    field.eval(&y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = norm(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    // Zero components under pure relative control make the estimates above
    // collapse; the controller can always shrink a step that is too long.
    (100.0 * h0).min(h1).min(span).max(1e-6 * span)
}

/// Integrates `field` from `y0` at time 0 and reports states on `grid`.
pub fn integrate_field<F: VectorField>(
    field: &F,
    y0: &[f64],
    grid: &[f64],
    opts: &IntegrateOptions,
) -> Result<Solution, OdeError> {
    let n = field.dim();
    let threshold = opts.clamp_threshold();
    if y0.len() != n {
        return Err(OdeError::Shape {
            got: y0.len(),
            expected: n,
        });
    }
    if let Some(i) = y0.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(OdeError::BadInitial(i));
    }
    if grid.first().is_some_and(|&t| t < 0.0) || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(OdeError::BadGrid);
    }
    let (rtol, atol) = (opts.rtol, opts.abs_floor());
    let t_end = grid.last().copied().unwrap_or(0.0);
    let floor = 1e-14 * t_end.max(1e-300);

    let mut sol = Solution {
        times: Vec::with_capacity(grid.len()),
        states: Vec::with_capacity(grid.len()),
        accepted: 0,
        rejected: 0,
        clamped: 0,
        min_component: 0.0,
    };
    let mut next = 0;
    while next < grid.len() && grid[next] == 0.0 {
        sol.times.push(0.0);
        sol.states.push(y0.to_vec());
        next += 1;
    }
    if next == grid.len() {
        return Ok(sol);
    }

    let mut w = Work::new(n);
    let mut y = y0.to_vec();
    let mut t = 0.0;
    field.eval(&y, &mut w.k[0]);
    let mut h = initial_step(field, &y, &w.k[0], t_end, rtol, atol);
    let mut reject_streak = false;

    while next < grid.len() {
        if sol.accepted + sol.rejected >= opts.max_steps {
            return Err(OdeError::TooManySteps(opts.max_steps));
        }
        if h < floor {
            return Err(OdeError::StepSizeUnderflow { t, h, floor });
        }
        h = h.min(t_end - t);
        if t + h > t_end - 1e-14 * t_end {
            h = t_end - t;
        }
        let Work {
            k,
            tmp,
            y_new,
            err,
            dense,
        } = &mut w;
        let stage = |tmp: &mut Vec<f64>, k: &[Vec<f64>], coeffs: &[f64]| {
            for i in 0..n {
                let mut s = 0.0;
                for (kk, a) in k.iter().zip(coeffs) {
                    s += a * kk[i];
                }
                tmp[i] = y[i] + h * s;
            }
        };
        stage(tmp, &k[..1], &[A21]);
        field.eval(tmp, &mut k[1]);
        stage(tmp, &k[..2], &[A31, A32]);
        field.eval(tmp, &mut k[2]);
        stage(tmp, &k[..3], &[A41, A42, A43]);
        field.eval(tmp, &mut k[3]);
        stage(tmp, &k[..4], &[A51, A52, A53, A54]);
        field.eval(tmp, &mut k[4]);
        stage(tmp, &k[..5], &[A61, A62, A63, A64, A65]);
        field.eval(tmp, &mut k[5]);
        for i in 0..n {
            y_new[i] = y[i]
                + h * (A71 * k[0][i]
                    + A73 * k[2][i]
                    + A74 * k[3][i]
                    + A75 * k[4][i]
                    + A76 * k[5][i]);
        }
        field.eval(y_new, &mut k[6]);
        for i in 0..n {
            err[i] = h
                * (E1 * k[0][i]
                    + E3 * k[2][i]
                    + E4 * k[3][i]
                    + E5 * k[4][i]
                    + E6 * k[5][i]
                    + E7 * k[6][i]);
        }
        let e = error_norm(&y, y_new, err, rtol, atol);
        if !(e <= 1.0) {
            sol.rejected += 1;
            let fac = if e.is_finite() {
                (0.9 * e.powf(-0.2)).max(0.2)
            } else {
                0.2
            };
            h *= if reject_streak { fac.min(0.5) } else { fac };
            reject_streak = true;
            continue;
        }
        reject_streak = false;
        sol.accepted += 1;
        let t_new = t + h;

        if next < grid.len() && grid[next] <= t_new {
            for i in 0..n {
                let ydiff = y_new[i] - y[i];
                let bspl = h * k[0][i] - ydiff;
                dense[0][i] = y[i];
                dense[1][i] = ydiff;
                dense[2][i] = bspl;
                dense[3][i] = ydiff - h * k[6][i] - bspl;
                dense[4][i] = h
                    * (D1 * k[0][i]
                        + D3 * k[2][i]
                        + D4 * k[3][i]
                        + D5 * k[4][i]
                        + D6 * k[5][i]
                        + D7 * k[6][i]);
            }
            while next < grid.len() && grid[next] <= t_new {
                let theta = ((grid[next] - t) / h).clamp(0.0, 1.0);
                let th1 = 1.0 - theta;
                let mut out: Vec<f64> = (0..n)
                    .map(|i| {
                        dense[0][i]
                            + theta
                                * (dense[1][i]
                                    + th1
                                        * (dense[2][i] + theta * (dense[3][i] + th1 * dense[4][i])))
                    })
                    .collect();
                if grid[next] == t_new {
                    out.copy_from_slice(y_new);
                }
                for v in out.iter_mut() {
                    if *v < sol.min_component {
                        sol.min_component = *v;
                    }
                    if opts.clamp && *v < 0.0 && *v > -threshold {
                        *v = 0.0;
                        sol.clamped += 1;
                    }
                }
                sol.times.push(grid[next]);
                sol.states.push(out);
                next += 1;
            }
        }

        std::mem::swap(&mut y, y_new);
        for v in y.iter_mut() {
            if *v < sol.min_component {
                sol.min_component = *v;
            }
            if opts.clamp && *v < 0.0 && *v > -threshold {
                *v = 0.0;
                sol.clamped += 1;
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite(t_new));
        }
        t = t_new;
        k.swap(0, 6);
        // Clamping changes y, so the FSAL derivative must be refreshed.
        if opts.clamp && sol.clamped > 0 {
            field.eval(&y, &mut k[0]);
        }
        let fac = (0.9 * e.max(1e-10).powf(-0.2)).clamp(0.2, 10.0);
        h *= fac;
    }
    Ok(sol)
}

fn check_tol(tol: f64) -> Result<(), OdeError> {
    if tol > 1e-13 && tol < 1e-3 {
        Ok(())
    } else {
        Err(OdeError::BadTolerance(tol))
    }
}

/// Uniform grid of `n + 1` points on `[0, t_end]`.
pub fn uniform_grid(t_end: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| t_end * k as f64 / n as f64).collect()
}

/// Integrates the deterministic system with mixed error control.
pub fn integrate(
    params: &ModelParams,
    x0: &[f64],
    grid: &[f64],
    tol: f64,
) -> Result<Solution, OdeError> {
    check_tol(tol)?;
    integrate_with(params, x0, grid, &IntegrateOptions::new(tol))
}

/// [`integrate`] with explicit options.
pub fn integrate_with(
    params: &ModelParams,
    x0: &[f64],
    grid: &[f64],
    opts: &IntegrateOptions,
) -> Result<Solution, OdeError> {
    params.validate()?;
    integrate_field(&LvField::new(params), x0, grid, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
    /// A zero eigenvalue; linearization is inconclusive.
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    /// Densities of trait 0 and trait L.
    pub x: [f64; 2],
    pub eigenvalues: [f64; 2],
    pub stability: Stability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsystemPattern {
    /// Target trait invades and resists: `(0, x̄_L)` is the stable state.
    TargetWins,
    /// Resident resists and the target cannot invade.
    ResidentWins,
    /// Both invade each other; the stable state is interior and out of scope.
    Coexistence,
    /// Neither invades the other.
    Bistable,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvClassification {
    pub extinct: FixedPoint,
    pub resident: FixedPoint,
    pub target: FixedPoint,
    pub pattern: SubsystemPattern,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("trait {0} has zero equilibrium density")]
    NonViable(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn label(eig: [f64; 2]) -> Stability {
    if eig.contains(&0.0) {
        Stability::Marginal
    } else if eig.iter().all(|&e| e < 0.0) {
        Stability::Stable
    } else {
        Stability::Unstable
    }
}

/// Boundary fixed points of the mutation-free two-species system on traits 0 and L.
pub fn lv_equilibrium(params: &ModelParams) -> Result<LvClassification, EquilibriumError> {
    let land = derive_landscape(params)?;
    let l = params.l;
    let (x0, xl) = (land.xbar[0], land.xbar[l]);
    if x0 <= 0.0 {
        return Err(EquilibriumError::NonViable(0));
    }
    if xl <= 0.0 {
        return Err(EquilibriumError::NonViable(l));
    }
    let g0 = params.b[0] - params.d[0];
    let gl = params.b[l] - params.d[l];
    let (f_l0, f_0l) = (land.f(l, 0), land.f(0, l));
    // Triangular Jacobians: the eigenvalues are the diagonal entries.
    let point = |x: [f64; 2], eig: [f64; 2]| FixedPoint {
        x,
        eigenvalues: eig,
        stability: label(eig),
    };
    let pattern = match (f_l0.partial_cmp(&0.0), f_0l.partial_cmp(&0.0)) {
        (Some(std::cmp::Ordering::Greater), Some(std::cmp::Ordering::Less)) => {
            SubsystemPattern::TargetWins
        }
        (Some(std::cmp::Ordering::Less), Some(std::cmp::Ordering::Greater)) => {
            SubsystemPattern::ResidentWins
        }
        (Some(std::cmp::Ordering::Greater), Some(std::cmp::Ordering::Greater)) => {
            SubsystemPattern::Coexistence
        }
        (Some(std::cmp::Ordering::Less), Some(std::cmp::Ordering::Less)) => {
            SubsystemPattern::Bistable
        }
        _ => SubsystemPattern::Degenerate,
    };
    Ok(LvClassification {
        extinct: point([0.0, 0.0], [g0, gl]),
        resident: point([x0, 0.0], [-g0, f_l0]),
        target: point([0.0, xl], [f_0l, -gl]),
        pattern,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_example_landscape, Kernel};

    fn two_trait() -> ModelParams {
        build_example_landscape(&[0.5], &[-0.3]).unwrap()
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let p = build_example_landscape(&[-0.5, 0.5], &[-1.0, -0.3])
            .unwrap()
            .with_mu(0.1);
        assert!(rhs(&[0.0; 3], &p).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn monomorphic_equilibrium_is_fixed() {
        let p = build_example_landscape(&[-0.5, 0.5], &[-1.0, -0.3]).unwrap();
        assert!(rhs(&[1.0, 0.0, 0.0], &p).iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn linearization_gives_invasion_fitness() {
        let p = two_trait();
        let eps = 1e-8;
        let g = rhs(&[1.0, eps], &p)[1] / eps;
        let f10 = derive_landscape(&p).unwrap().f(1, 0);
        assert!(((g - f10) / f10).abs() < 1e-5);
    }

    #[test]
    fn two_species_converges_to_target() {
        let p = two_trait();
        let eps = 1e-3;
        let sol = integrate(&p, &[1.0 - eps, eps], &[0.0, 200.0], 1e-10).unwrap();
        let x = sol.final_state();
        assert!(x[0].abs() < 1e-8 && (x[1] - 1.0).abs() < 1e-8, "{x:?}");
    }

    #[test]
    fn equilibrium_path_stays_put() {
        let p = two_trait();
        let sol = integrate(&p, &[1.0, 0.0], &uniform_grid(50.0, 50), 1e-8).unwrap();
        for s in &sol.states {
            assert!((s[0] - 1.0).abs() < 1e-8 && s[1] == 0.0);
        }
    }

    #[test]
    fn logistic_matches_closed_form() {
        // Single trait with growth r and c = 1: x(t) = x0 e^{rt} / (1 + x0 (e^{rt} - 1) / r).
        let p = ModelParams::new(
            vec![1.5, 1.0],
            vec![0.5, 0.0],
            vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            Kernel::OneSided,
            10,
            0.0,
        )
        .unwrap();
        let grid = uniform_grid(8.0, 16);
        let sol = integrate(&p, &[0.01, 0.0], &grid, 1e-11).unwrap();
        for (t, s) in sol.times.iter().zip(&sol.states) {
            let e = t.exp();
            let exact = 0.01 * e / (1.0 + 0.01 * (e - 1.0));
            assert!((s[0] - exact).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn tolerance_self_convergence() {
        let p = build_example_landscape(&[-0.5, 0.5], &[-1.0, -0.3])
            .unwrap()
            .with_mu(1e-3);
        let grid = uniform_grid(60.0, 600);
        let a = integrate(&p, &[1.0, 0.0, 0.0], &grid, 1e-10).unwrap();
        let b = integrate(&p, &[1.0, 0.0, 0.0], &grid, 1e-8).unwrap();
        let sup = a
            .states
            .iter()
            .zip(&b.states)
            .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
            .fold(0.0, f64::max);
        assert!(sup < 1e-6, "{sup}");
    }

    #[test]
    fn rejects_bad_tolerance() {
        assert_eq!(
            integrate(&two_trait(), &[1.0, 0.0], &[1.0], 1e-2),
            Err(OdeError::BadTolerance(1e-2))
        );
    }

    #[test]
    fn classification_sign_patterns() {
        let c = lv_equilibrium(&two_trait()).unwrap();
        assert_eq!(c.pattern, SubsystemPattern::TargetWins);
        assert_eq!(c.target.stability, Stability::Stable);
        assert_eq!(c.resident.stability, Stability::Unstable);
        assert_eq!(c.extinct.stability, Stability::Unstable);

        let rev = lv_equilibrium(&build_example_landscape(&[-0.5], &[0.3]).unwrap()).unwrap();
        assert_eq!(rev.pattern, SubsystemPattern::ResidentWins);
        assert_eq!(rev.resident.stability, Stability::Stable);

        let co = lv_equilibrium(&build_example_landscape(&[0.5], &[0.3]).unwrap()).unwrap();
        assert_eq!(co.pattern, SubsystemPattern::Coexistence);
        assert_eq!(co.resident.stability, Stability::Unstable);
        assert_eq!(co.target.stability, Stability::Unstable);
    }

    #[test]
    fn csv_headers() {
        let sol = integrate(&two_trait(), &[0.5, 0.5], &[0.0, 1.0], 1e-8).unwrap();
        assert!(sol.to_csv().starts_with("t,x0,x1\n"));
        assert!(sol.to_log_csv(1e-4).starts_with("tau,log_x0,log_x1\n"));
    }
}
