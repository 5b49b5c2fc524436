//! Parameterization of the (L+1)-trait logistic birth-death model and the
//! fitness landscape derived from it.
//!
//! Traits live on the path `0..=L`. Trait 0 is the resident, trait `L` is the
//! fit target, and the traits in between form the valley.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default relative tolerance for the pairwise-distinctness clauses.
pub const DEFAULT_DISTINCT_TOL: f64 = 1e-12;

/// Schema version of model files.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("L must be at least 1 (got {0})")]
    TooFewTraits(usize),
    #[error("{name} has length {got}, expected {expected}")]
    Length {
        name: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("{name}[{index}] = {value} is not a finite nonnegative rate")]
    BadRate {
        name: &'static str,
        index: usize,
        value: f64,
    },
    #[error("competition c[{i}][{j}] must be strictly positive")]
    ZeroCompetition { i: usize, j: usize },
    #[error("mutation probability {0} outside [0, 1]")]
    BadMutation(f64),
    #[error("carrying capacity must be positive")]
    ZeroCapacity,
    #[error("requested fitness f[{i}][{j}] = {value} needs a nonpositive competition rate (limit {limit})")]
    FitnessTooLarge {
        i: usize,
        j: usize,
        value: f64,
        limit: f64,
    },
    #[error("trait {0} must have a positive monomorphic equilibrium to anchor the landscape")]
    NonViableAnchor(usize),
    #[error("unsupported model schema version {0}")]
    SchemaVersion(u32),
}

/// Which neighbours receive mutant offspring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// All mutants of trait `i` carry trait `i + 1`.
    #[serde(alias = "OneSided", alias = "one-sided", alias = "1")]
    OneSided,
    /// Mutants of trait `i` go to `i - 1` or `i + 1` with equal probability.
    #[serde(alias = "TwoSided", alias = "two-sided", alias = "2")]
    TwoSided,
}

impl Kernel {
    /// The factor dividing the forward mutation flux in the linearised cascade.
    pub fn zeta(self) -> u8 {
        match self {
            Kernel::OneSided => 1,
            Kernel::TwoSided => 2,
        }
    }

    /// Mutant offspring destinations of trait `i` with their probabilities.
    ///
    /// At the ends of the path the two-sided kernel reflects: trait 0 sends all
    /// of its mutants to 1 and trait `L` sends all of them to `L - 1`. The
    /// one-sided kernel has no destination from trait `L`; those mutant births
    /// are lost, exactly as in the deterministic limit.
    pub fn targets(self, i: usize, l: usize) -> Targets {
        match self {
            Kernel::OneSided if i < l => Targets::One(i + 1),
            Kernel::OneSided => Targets::None,
            Kernel::TwoSided if i == 0 => Targets::One(1),
            Kernel::TwoSided if i == l => Targets::One(l - 1),
            Kernel::TwoSided => Targets::Split(i - 1, i + 1),
        }
    }
}

/// Destinations of mutant births out of one trait.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Targets {
    None,
    One(usize),
    /// Half of the mass to each.
    Split(usize, usize),
}

/// Full parameterization of the birth-death-competition-mutation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct ModelParams {
    /// Highest trait index.
    pub l: usize,
    /// Per-capita birth rates `b_i`.
    pub b: Vec<f64>,
    /// Natural death rates `d_i`.
    pub d: Vec<f64>,
    /// Competition kernel, row-major: `c[i * (L+1) + j]` is the pressure of `j` on `i`.
    pub c: Vec<f64>,
    pub kernel: Kernel,
    /// Carrying capacity.
    pub k: u64,
    /// Mutation probability per birth.
    pub mu: f64,
}

impl ModelParams {
    pub fn new(
        b: Vec<f64>,
        d: Vec<f64>,
        c: Vec<Vec<f64>>,
        kernel: Kernel,
        k: u64,
        mu: f64,
    ) -> Result<Self, ModelError> {
        let l = b.len().saturating_sub(1);
        if c.len() != b.len() {
            return Err(ModelError::Length {
                name: "c",
                got: c.len(),
                expected: b.len(),
            });
        }
        let mut flat = Vec::with_capacity(b.len() * b.len());
        for row in &c {
            if row.len() != b.len() {
                return Err(ModelError::Length {
                    name: "c row",
                    got: row.len(),
                    expected: b.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        let params = ModelParams {
            l,
            b,
            d,
            c: flat,
            kernel,
            k,
            mu,
        };
        params.validate()?;
        Ok(params)
    }

    /// Number of traits, `L + 1`.
    #[inline]
    pub fn n_traits(&self) -> usize {
        self.l + 1
    }

    #[inline]
    pub fn c(&self, i: usize, j: usize) -> f64 {
        self.c[i * (self.l + 1) + j]
    }

    pub fn c_row(&self, i: usize) -> &[f64] {
        let n = self.l + 1;
        &self.c[i * n..(i + 1) * n]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.l < 1 {
            return Err(ModelError::TooFewTraits(self.l));
        }
        let n = self.l + 1;
        for (name, v) in [("b", &self.b), ("d", &self.d)] {
            if v.len() != n {
                return Err(ModelError::Length {
                    name,
                    got: v.len(),
                    expected: n,
                });
            }
            check_rates(name, v)?;
        }
        if self.c.len() != n * n {
            return Err(ModelError::Length {
                name: "c",
                got: self.c.len(),
                expected: n * n,
            });
        }
        check_rates("c", &self.c)?;
        for i in 0..n {
            for j in [i, 0, self.l] {
                if self.c(i, j) <= 0.0 {
                    return Err(ModelError::ZeroCompetition { i, j });
                }
            }
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(ModelError::BadMutation(self.mu));
        }
        if self.k == 0 {
            return Err(ModelError::ZeroCapacity);
        }
        Ok(())
    }

    /// Copy with a different mutation probability.
    pub fn with_mu(&self, mu: f64) -> Self {
        ModelParams { mu, ..self.clone() }
    }

    /// Copy with a different carrying capacity.
    pub fn with_k(&self, k: u64) -> Self {
        ModelParams { k, ..self.clone() }
    }

    pub fn with_kernel(&self, kernel: Kernel) -> Self {
        ModelParams {
            kernel,
            ..self.clone()
        }
    }

    /// Short content hash of the canonical JSON encoding, embedded in outputs.
    pub fn model_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("model params always serialize");
        let digest = Sha256::digest(&bytes);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("model params always serialize")
    }
}

fn check_rates(name: &'static str, v: &[f64]) -> Result<(), ModelError> {
    for (index, &value) in v.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(ModelError::BadRate { name, index, value });
        }
    }
    Ok(())
}

/// On-disk form of [`ModelParams`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    v: u32,
    #[serde(rename = "L")]
    l: usize,
    b: Vec<f64>,
    d: Vec<f64>,
    c: Matrix,
    kernel: Kernel,
    #[serde(rename = "K")]
    k: u64,
    mu: f64,
}

/// Competition matrix as written: flat row-major, or a list of rows on input.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum Matrix {
    Flat(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

impl TryFrom<ModelFile> for ModelParams {
    type Error = ModelError;

    fn try_from(file: ModelFile) -> Result<Self, ModelError> {
        if file.v != MODEL_SCHEMA_VERSION {
            return Err(ModelError::SchemaVersion(file.v));
        }
        let c = match file.c {
            Matrix::Flat(c) => c,
            Matrix::Rows(rows) => rows.into_iter().flatten().collect(),
        };
        let params = ModelParams {
            l: file.l,
            b: file.b,
            d: file.d,
            c,
            kernel: file.kernel,
            k: file.k,
            mu: file.mu,
        };
        params.validate()?;
        Ok(params)
    }
}

impl From<ModelParams> for ModelFile {
    fn from(p: ModelParams) -> Self {
        ModelFile {
            v: MODEL_SCHEMA_VERSION,
            l: p.l,
            b: p.b,
            d: p.d,
            c: Matrix::Flat(p.c),
            kernel: p.kernel,
            k: p.k,
            mu: p.mu,
        }
    }
}

/// Equilibrium densities and invasion fitnesses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessLandscape {
    pub l: usize,
    /// Monomorphic equilibrium densities `x̄_i`.
    pub xbar: Vec<f64>,
    /// Row-major invasion fitness matrix, `f[i * (L+1) + j] = f_ij`.
    pub f: Vec<f64>,
    /// Birth rates, carried along because several predictors need them.
    pub b: Vec<f64>,
    /// `None` until [`FitnessLandscape::validated`] is called.
    pub validity: Option<ValidityReport>,
}

impl FitnessLandscape {
    #[inline]
    pub fn f(&self, i: usize, j: usize) -> f64 {
        self.f[i * (self.l + 1) + j]
    }

    /// Column `j` of the fitness matrix: `(f_0j, ..., f_Lj)`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..=self.l).map(|i| self.f(i, j)).collect()
    }

    pub fn validated(mut self, tol: f64) -> Self {
        self.validity = Some(validate_valley(&self, tol));
        self
    }

    pub fn is_valid(&self) -> bool {
        self.validity.as_ref().is_some_and(|v| v.valid)
    }
}

/// `x̄_i = ((b_i - d_i) / c_ii) ∨ 0` and `f_ij = b_i - d_i - c_ij x̄_j`.
pub fn derive_landscape(params: &ModelParams) -> Result<FitnessLandscape, ModelError> {
    let n = params.n_traits();
    let mut xbar = Vec::with_capacity(n);
    for i in 0..n {
        let cii = params.c(i, i);
        if cii == 0.0 {
            return Err(ModelError::ZeroCompetition { i, j: i });
        }
        xbar.push(((params.b[i] - params.d[i]) / cii).max(0.0));
    }
    let mut f = Vec::with_capacity(n * n);
    for i in 0..n {
        for (j, x) in xbar.iter().enumerate() {
            f.push(params.b[i] - params.d[i] - params.c(i, j) * x);
        }
    }
    Ok(FitnessLandscape {
        l: params.l,
        xbar,
        f,
        b: params.b.clone(),
        validity: None,
    })
}

/// One condition of the fitness-valley assumption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clause {
    /// `x̄_0 > 0`.
    ResidentViable,
    /// `f_i0 < 0` for `1 <= i <= L-1`.
    ValleyUnfit,
    /// `f_L0 > 0`.
    TargetFit,
    /// `f_iL < 0` for `0 <= i <= L-1`.
    UnfitAgainstTarget,
    /// The `f_i0` are pairwise distinct.
    DistinctColumn0,
    /// The `f_iL` are pairwise distinct.
    DistinctColumnL,
}

impl Clause {
    pub const ALL: [Clause; 6] = [
        Clause::ResidentViable,
        Clause::ValleyUnfit,
        Clause::TargetFit,
        Clause::UnfitAgainstTarget,
        Clause::DistinctColumn0,
        Clause::DistinctColumnL,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseCheck {
    pub clause: Clause,
    pub passed: bool,
    /// Offending trait indices (pairs are flattened for the distinctness clauses).
    pub offenders: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub valid: bool,
    pub checks: Vec<ClauseCheck>,
}

impl ValidityReport {
    pub fn check(&self, clause: Clause) -> &ClauseCheck {
        self.checks
            .iter()
            .find(|c| c.clause == clause)
            .expect("every clause is always checked")
    }

    pub fn failed(&self) -> impl Iterator<Item = Clause> + '_ {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.clause)
    }
}

fn near_tie(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn ties(values: &[f64], tol: f64) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            if near_tie(values[i], values[j], tol) {
                out.push(i);
                out.push(j);
            }
        }
    }
    out
}

/// Checks every clause of the fitness-valley assumption; never fails.
pub fn validate_valley(landscape: &FitnessLandscape, tol: f64) -> ValidityReport {
    let l = landscape.l;
    let mut checks = Vec::with_capacity(Clause::ALL.len());
    let mut push = |clause, offenders: Vec<usize>| {
        checks.push(ClauseCheck {
            clause,
            passed: offenders.is_empty(),
            offenders,
        })
    };

    push(
        Clause::ResidentViable,
        if landscape.xbar[0] > 0.0 {
            vec![]
        } else {
            vec![0]
        },
    );
    push(
        Clause::ValleyUnfit,
        (1..l).filter(|&i| landscape.f(i, 0) >= 0.0).collect(),
    );
    push(
        Clause::TargetFit,
        if landscape.f(l, 0) > 0.0 {
            vec![]
        } else {
            vec![l]
        },
    );
    push(
        Clause::UnfitAgainstTarget,
        (0..l).filter(|&i| landscape.f(i, l) >= 0.0).collect(),
    );
    push(Clause::DistinctColumn0, ties(&landscape.column(0), tol));
    push(Clause::DistinctColumnL, ties(&landscape.column(l), tol));

    let valid = checks.iter().all(|c| c.passed);
    ValidityReport { valid, checks }
}

/// Builds a model realising requested fitness columns.
///
/// With the default rates (`b_i = 1`, `d_i = 0`) every anchored trait has
/// `x̄_i = 1` and the competition rates are `c_i0 = 1 - f_i0`,
/// `c_iL = 1 - f_iL`. Interior pairs get a constant (default 1) and the
/// interior rows/columns against 0 and `L` are completed symmetrically, except
/// `c_0L` and `c_L0`, which are pinned by the targets.
#[derive(Debug, Clone)]
pub struct ValleyBuilder {
    f_col0: Vec<f64>,
    f_col_l: Vec<f64>,
    b: Option<Vec<f64>>,
    d: Option<Vec<f64>>,
    interior: f64,
    kernel: Kernel,
    k: u64,
    mu: f64,
}

impl ValleyBuilder {
    /// `f_col0 = (f_10, ..., f_L0)` and `f_col_l = (f_0L, ..., f_{L-1,L})`.
    pub fn new(f_col0: &[f64], f_col_l: &[f64]) -> Self {
        ValleyBuilder {
            f_col0: f_col0.to_vec(),
            f_col_l: f_col_l.to_vec(),
            b: None,
            d: None,
            interior: 1.0,
            kernel: Kernel::OneSided,
            k: 1000,
            mu: 0.0,
        }
    }

    pub fn rates(mut self, b: &[f64], d: &[f64]) -> Self {
        self.b = Some(b.to_vec());
        self.d = Some(d.to_vec());
        self
    }

    pub fn interior(mut self, c: f64) -> Self {
        self.interior = c;
        self
    }

    pub fn kernel(mut self, kernel: Kernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn capacity(mut self, k: u64) -> Self {
        self.k = k;
        self
    }

    pub fn mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn build(&self) -> Result<ModelParams, ModelError> {
        let l = self.f_col0.len();
        if l < 1 {
            return Err(ModelError::TooFewTraits(l));
        }
        if self.f_col_l.len() != l {
            return Err(ModelError::Length {
                name: "f_col_l",
                got: self.f_col_l.len(),
                expected: l,
            });
        }
        let n = l + 1;
        let b = self.b.clone().unwrap_or_else(|| vec![1.0; n]);
        let d = self.d.clone().unwrap_or_else(|| vec![0.0; n]);
        for (name, v) in [("b", &b), ("d", &d)] {
            if v.len() != n {
                return Err(ModelError::Length {
                    name,
                    got: v.len(),
                    expected: n,
                });
            }
            check_rates(name, v)?;
        }
        let growth: Vec<f64> = b.iter().zip(&d).map(|(b, d)| b - d).collect();
        for anchor in [0, l] {
            if growth[anchor] <= 0.0 {
                return Err(ModelError::NonViableAnchor(anchor));
            }
        }

        let mut c = vec![vec![self.interior; n]; n];
        // Viable traits get x̄_i = 1; nonviable ones keep c_ii = 1 and x̄_i = 0.
        for i in 0..n {
            c[i][i] = if growth[i] > 0.0 { growth[i] } else { 1.0 };
        }
        // x̄_0 = x̄_L = 1, so f_ij = growth_i - c_ij for j in {0, L}.
        let pin = |c: &mut Vec<Vec<f64>>, i: usize, j: usize, f: f64| -> Result<f64, ModelError> {
            let cij = growth[i] - f;
            if cij <= 0.0 {
                return Err(ModelError::FitnessTooLarge {
                    i,
                    j,
                    value: f,
                    limit: growth[i],
                });
            }
            c[i][j] = cij;
            Ok(cij)
        };
        for i in 1..=l {
            let cij = pin(&mut c, i, 0, self.f_col0[i - 1])?;
            if i < l {
                c[0][i] = cij;
            }
        }
        for i in 0..l {
            let cij = pin(&mut c, i, l, self.f_col_l[i])?;
            if i > 0 {
                c[l][i] = cij;
            }
        }
        ModelParams::new(b, d, c, self.kernel, self.k, self.mu)
    }
}

/// The plain recipe: unit birth rates, zero death rates, unit interior competition.
pub fn build_example_landscape(f_col0: &[f64], f_col_l: &[f64]) -> Result<ModelParams, ModelError> {
    ValleyBuilder::new(f_col0, f_col_l).build()
}
