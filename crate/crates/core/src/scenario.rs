//! Coefficient bundles (b, σ, γ, (p_k), ψ, Ψ) with their declared bound constants.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genealogy::Label;
use crate::measure::AtomicMeasure;
use crate::rng::{label_stream, StreamKind};
use crate::table::{MatrixTable, ScalarTable};

/// Tolerance on Σ p_k = 1.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("mark z = {z} lies outside [0, {c_gamma}]")]
    MarkOutOfRange { z: f64, c_gamma: f64 },
    #[error("offspring probabilities sum to {0}, not 1")]
    ProbabilitySum(f64),
    #[error("negative offspring probability {0}")]
    NegativeProbability(f64),
    #[error("{name} must be symmetric")]
    NotSymmetric { name: &'static str },
    #[error("{name} must be positive semidefinite (smallest eigenvalue {min_eig})")]
    NotPositiveSemidefinite { name: &'static str, min_eig: f64 },
    #[error("{name} must be uniformly positive definite (smallest eigenvalue {min_eig})")]
    NotPositiveDefinite { name: &'static str, min_eig: f64 },
    #[error("{name} has shape {rows}x{cols}, expected {want_rows}x{want_cols}")]
    Shape {
        name: &'static str,
        rows: usize,
        cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("{name} must be non-negative")]
    Negative { name: &'static str },
    #[error("bound violated: {0}")]
    BoundViolation(String),
}

/// State, noise and action dimensions (d, d′, q).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub state: usize,
    pub noise: usize,
    pub action: usize,
}

/// Declared constants of the standing growth and moment assumptions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub c_b: f64,
    pub c_sigma: f64,
    pub c_gamma: f64,
    pub c_phi1: f64,
    pub c_phi2: f64,
    pub c_terminal: f64,
    pub c_coercive: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ActionSet {
    Full,
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl ActionSet {
    pub fn contains(&self, a: &[f64]) -> bool {
        match self {
            ActionSet::Full => a.iter().all(|v| v.is_finite()),
            ActionSet::Box { lower, upper } => a
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi),
        }
    }
}

/// Record of the convexity condition needed for relaxed/strong equivalence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilippovNote {
    pub convex: bool,
    pub justification: String,
}

/// The coefficient bundle of a controlled branching diffusion.
///
/// Evaluators must be pure; they may be called concurrently.
pub trait Scenario: Send + Sync {
    fn name(&self) -> &str;
    fn dims(&self) -> Dims;
    fn drift(&self, t: f64, x: &[f64], lambda: &AtomicMeasure, a: &[f64]) -> Vec<f64>;
    /// d × d′ volatility matrix.
    fn volatility(&self, t: f64, x: &[f64], lambda: &AtomicMeasure, a: &[f64]) -> DMatrix<f64>;
    fn branch_rate(&self, t: f64, x: &[f64], lambda: &AtomicMeasure, a: &[f64]) -> f64;
    /// (p_0, …, p_{K_max}).
    fn offspring_probs(&self, t: f64, x: &[f64], lambda: &AtomicMeasure, a: &[f64]) -> Vec<f64>;
    fn running_cost(&self, t: f64, x: &[f64], lambda: &AtomicMeasure, a: &[f64]) -> f64;
    fn terminal_cost(&self, lambda: &AtomicMeasure) -> f64;
    fn bounds(&self) -> &Bounds;
    fn action_set(&self) -> ActionSet {
        ActionSet::Full
    }
    fn filippov(&self) -> FilippovNote;
}

/// Result of a branching candidate event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "k")]
pub enum BranchOutcome {
    Thinned,
    Offspring(usize),
}

/// Maps a uniform mark z ∈ [0, C_γ] onto the partition I_k of [0, γ).
pub fn outcome_from_mark(gamma: f64, probs: &[f64], c_gamma: f64, z: f64) -> Result<BranchOutcome, ScenarioError> {
    if !(0.0..=c_gamma).contains(&z) {
        return Err(ScenarioError::MarkOutOfRange { z, c_gamma });
    }
    if z >= gamma {
        return Ok(BranchOutcome::Thinned);
    }
    let mut upper = 0.0;
    for (k, p) in probs.iter().enumerate() {
        upper += gamma * p;
        if z < upper {
            return Ok(BranchOutcome::Offspring(k));
        }
    }
    // rounding left z just past the last cell: take the last non-empty one
    let k = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    Ok(BranchOutcome::Offspring(k))
}

pub fn offspring_from_mark(
    scn: &dyn Scenario,
    t: f64,
    x: &[f64],
    lambda: &AtomicMeasure,
    a: &[f64],
    z: f64,
) -> Result<BranchOutcome, ScenarioError> {
    let gamma = scn.branch_rate(t, x, lambda, a);
    let probs = scn.offspring_probs(t, x, lambda, a);
    outcome_from_mark(gamma, &probs, scn.bounds().c_gamma, z)
}

/// Intervals I_k = [γ Σ_{ℓ<k} p_ℓ, γ Σ_{ℓ≤k} p_ℓ).
pub fn offspring_intervals(gamma: f64, probs: &[f64]) -> Vec<(f64, f64)> {
    let mut lo = 0.0;
    probs
        .iter()
        .map(|p| {
            let hi = lo + gamma * p;
            let cell = (lo, hi);
            lo = hi;
            cell
        })
        .collect()
}

/// (M₁, M₂) = (Σ (k−1) p_k, Σ (k−1)² p_k).
pub fn moments_m(probs: &[f64]) -> (f64, f64) {
    probs.iter().enumerate().fold((0.0, 0.0), |(m1, m2), (k, p)| {
        let j = k as f64 - 1.0;
        (m1 + j * p, m2 + j * j * p)
    })
}

/// (Σ k p_k, Σ k(k−1) p_k), the generating-function derivatives at 1.
pub fn factorial_moments(probs: &[f64]) -> (f64, f64) {
    probs.iter().enumerate().fold((0.0, 0.0), |(f1, f2), (k, p)| {
        let k = k as f64;
        (f1 + k * p, f2 + k * (k - 1.0) * p)
    })
}

pub fn validate_probs(probs: &[f64]) -> Result<(), ScenarioError> {
    if let Some(&p) = probs.iter().find(|&&p| p < 0.0 || !p.is_finite()) {
        return Err(ScenarioError::NegativeProbability(p));
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
        return Err(ScenarioError::ProbabilitySum(s));
    }
    Ok(())
}

fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// Closure-backed scenario

pub type CoefficientFn<T> = Arc<dyn Fn(f64, &[f64], &AtomicMeasure, &[f64]) -> T + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&AtomicMeasure) -> f64 + Send + Sync>;

/// A scenario assembled from arbitrary evaluators.
#[derive(Clone)]
pub struct GenericScenario {
    pub name: String,
    pub dims: Dims,
    pub drift: CoefficientFn<Vec<f64>>,
    pub volatility: CoefficientFn<DMatrix<f64>>,
    pub branch_rate: CoefficientFn<f64>,
    pub offspring: CoefficientFn<Vec<f64>>,
    pub running_cost: CoefficientFn<f64>,
    pub terminal_cost: TerminalFn,
    pub bounds: Bounds,
    pub action_set: ActionSet,
    pub filippov: FilippovNote,
}

impl GenericScenario {
    /// A motionless, non-branching, cost-free scenario to be customised field by field.
    pub fn inert(name: &str, dims: Dims) -> Self {
        let (d, dn) = (dims.state, dims.noise);
        Self {
            name: name.to_string(),
            dims,
            drift: Arc::new(move |_, _, _, _| vec![0.0; d]),
            volatility: Arc::new(move |_, _, _, _| DMatrix::zeros(d, dn)),
            branch_rate: Arc::new(|_, _, _, _| 0.0),
            offspring: Arc::new(|_, _, _, _| vec![0.0, 1.0]),
            running_cost: Arc::new(|_, _, _, _| 0.0),
            terminal_cost: Arc::new(|_| 0.0),
            bounds: Bounds {
                c_b: 1.0,
                c_sigma: 1.0,
                c_gamma: 0.0,
                c_phi1: 1.0,
                c_phi2: 0.0,
                c_terminal: 1.0,
                c_coercive: 1.0,
            },
            action_set: ActionSet::Full,
            filippov: FilippovNote {
                convex: true,
                justification: "coefficients do not depend on the action".into(),
            },
        }
    }

    /// State-independent branching at rate γ with offspring law `probs`; sets C_γ, C¹_Φ, C²_Φ.
    pub fn with_constant_branching(mut self, gamma: f64, probs: Vec<f64>) -> Self {
        let (f1, f2) = factorial_moments(&probs);
        self.bounds.c_gamma = gamma;
        self.bounds.c_phi1 = f1;
        self.bounds.c_phi2 = f2;
        self.branch_rate = Arc::new(move |_, _, _, _| gamma);
        self.offspring = Arc::new(move |_, _, _, _| probs.clone());
        self
    }

    /// Constant drift vector and isotropic volatility σ·I.
    pub fn with_constant_motion(mut self, drift: Vec<f64>, sigma: f64) -> Self {
        let d = self.dims.state;
        let dn = self.dims.noise;
        self.bounds.c_b = norm(&drift).max(f64::MIN_POSITIVE);
        self.bounds.c_sigma = sigma.abs() * (d.min(dn) as f64).sqrt();
        self.drift = Arc::new(move |_, _, _, _| drift.clone());
        self.volatility = Arc::new(move |_, _, _, _| {
            let mut m = DMatrix::zeros(d, dn);
            for i in 0..d.min(dn) {
                m[(i, i)] = sigma;
            }
            m
        });
        self
    }
}

impl Scenario for GenericScenario {
    fn name(&self) -> &str {
        &self.name
    }
    fn dims(&self) -> Dims {
        self.dims
    }
    fn drift(&self, t: f64, x: &[f64], l: &AtomicMeasure, a: &[f64]) -> Vec<f64> {
        (self.drift)(t, x, l, a)
    }
    fn volatility(&self, t: f64, x: &[f64], l: &AtomicMeasure, a: &[f64]) -> DMatrix<f64> {
        (self.volatility)(t, x, l, a)
    }
    fn branch_rate(&self, t: f64, x: &[f64], l: &AtomicMeasure, a: &[f64]) -> f64 {
        (self.branch_rate)(t, x, l, a)
    }
    fn offspring_probs(&self, t: f64, x: &[f64], l: &AtomicMeasure, a: &[f64]) -> Vec<f64> {
        (self.offspring)(t, x, l, a)
    }
    fn running_cost(&self, t: f64, x: &[f64], l: &AtomicMeasure, a: &[f64]) -> f64 {
        (self.running_cost)(t, x, l, a)
    }
    fn terminal_cost(&self, l: &AtomicMeasure) -> f64 {
        (self.terminal_cost)(l)
    }
    fn bounds(&self) -> &Bounds {
        &self.bounds
    }
    fn action_set(&self) -> ActionSet {
        self.action_set.clone()
    }
    fn filippov(&self) -> FilippovNote {
        self.filippov.clone()
    }
}

// ---------------------------------------------------------------------------
// Linear-quadratic scenario

/// Coefficient tables of the linear-quadratic model.
///
/// Drift B_t x + B̄_t a, volatility σ_t I, branching rate γ_t with a fixed
/// offspring law, running cost xᵀC_t x + c_t<1,λ> + aᵀC̄_t a and terminal
/// cost ∫xᵀHx λ(dx) + h<1,λ>².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqCoefficients {
    pub state_dim: usize,
    pub action_dim: usize,
    pub b: MatrixTable,
    pub b_bar: MatrixTable,
    pub sigma: ScalarTable,
    pub gamma: ScalarTable,
    pub offspring: Vec<f64>,
    pub c: MatrixTable,
    pub c_mass: ScalarTable,
    pub c_bar: MatrixTable,
    pub h: DMatrix<f64>,
    pub h_mass: f64,
}

impl LqCoefficients {
    /// Scalar model (d = q = 1) with time-constant coefficients.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar(
        b: f64,
        b_bar: f64,
        sigma: f64,
        gamma: f64,
        offspring: Vec<f64>,
        c: f64,
        c_mass: f64,
        c_bar: f64,
        h: f64,
        h_mass: f64,
    ) -> Self {
        let m = |v: f64| MatrixTable::constant(DMatrix::from_element(1, 1, v));
        Self {
            state_dim: 1,
            action_dim: 1,
            b: m(b),
            b_bar: m(b_bar),
            sigma: ScalarTable::constant(sigma),
            gamma: ScalarTable::constant(gamma),
            offspring,
            c: m(c),
            c_mass: ScalarTable::constant(c_mass),
            c_bar: m(c_bar),
            h: DMatrix::from_element(1, 1, h),
            h_mass,
        }
    }

    /// (M₁, M₂) of the offspring law.
    pub fn branching_moments(&self) -> (f64, f64) {
        moments_m(&self.offspring)
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-12 * scale
}

fn check_shape(name: &'static str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<(), ScenarioError> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(ScenarioError::Shape {
            name,
            rows: m.nrows(),
            cols: m.ncols(),
            want_rows: rows,
            want_cols: cols,
        });
    }
    Ok(())
}

fn check_psd(name: &'static str, m: &DMatrix<f64>) -> Result<(), ScenarioError> {
    if !is_symmetric(m) {
        return Err(ScenarioError::NotSymmetric { name });
    }
    let min_eig = min_eigenvalue(m);
    if min_eig < -1e-12 {
        return Err(ScenarioError::NotPositiveSemidefinite { name, min_eig });
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct LqScenario {
    coeffs: LqCoefficients,
    bounds: Bounds,
}

/// Validates the LQ tables and derives the bound constants from them.
pub fn builtin_lq(coeffs: LqCoefficients) -> Result<LqScenario, ScenarioError> {
    let (d, q) = (coeffs.state_dim, coeffs.action_dim);
    for m in coeffs.b.values() {
        check_shape("B", m, d, d)?;
    }
    for m in coeffs.b_bar.values() {
        check_shape("B̄", m, d, q)?;
    }
    for m in coeffs.c.values() {
        check_shape("C", m, d, d)?;
        check_psd("C", m)?;
    }
    let mut eps = f64::INFINITY;
    for m in coeffs.c_bar.values() {
        check_shape("C̄", m, q, q)?;
        if !is_symmetric(m) {
            return Err(ScenarioError::NotSymmetric { name: "C̄" });
        }
        let min_eig = min_eigenvalue(m);
        if min_eig <= 0.0 {
            return Err(ScenarioError::NotPositiveDefinite { name: "C̄", min_eig });
        }
        eps = eps.min(min_eig);
    }
    check_shape("H", &coeffs.h, d, d)?;
    check_psd("H", &coeffs.h)?;
    if coeffs.gamma.min() < 0.0 {
        return Err(ScenarioError::Negative { name: "γ" });
    }
    if coeffs.c_mass.min() < 0.0 {
        return Err(ScenarioError::Negative { name: "c" });
    }
    if coeffs.h_mass < 0.0 {
        return Err(ScenarioError::Negative { name: "h" });
    }
    validate_probs(&coeffs.offspring)?;

    let max_norm = |t: &MatrixTable| t.values().iter().map(frobenius).fold(0.0, f64::max);
    let (f1, f2) = factorial_moments(&coeffs.offspring);
    let c_b = max_norm(&coeffs.b).max(max_norm(&coeffs.b_bar)).max(f64::MIN_POSITIVE);
    let c_sigma = coeffs.sigma.values().iter().fold(0.0f64, |m, s| m.max(s.abs())) * (d as f64).sqrt();
    let c_terminal = [
        frobenius(&coeffs.h),
        coeffs.h_mass,
        max_norm(&coeffs.c),
        max_norm(&coeffs.c_bar),
        coeffs.c_mass.max(),
        1.0,
    ]
    .into_iter()
    .fold(0.0, f64::max);
    let bounds = Bounds {
        c_b,
        c_sigma,
        c_gamma: coeffs.gamma.max(),
        c_phi1: f1,
        c_phi2: f2,
        c_terminal,
        c_coercive: eps,
    };
    Ok(LqScenario { coeffs, bounds })
}

impl LqScenario {
    pub fn coefficients(&self) -> &LqCoefficients {
        &self.coeffs
    }
}

fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> DVector<f64> {
    m * DVector::from_column_slice(v)
}

fn quad_form(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let x = DVector::from_column_slice(v);
    x.dot(&(m * &x))
}

impl Scenario for LqScenario {
    fn name(&self) -> &str {
        "lq"
    }
    fn dims(&self) -> Dims {
        Dims {
            state: self.coeffs.state_dim,
            noise: self.coeffs.state_dim,
            action: self.coeffs.action_dim,
        }
    }
    fn drift(&self, t: f64, x: &[f64], _: &AtomicMeasure, a: &[f64]) -> Vec<f64> {
        let v = mat_vec(&self.coeffs.b.at(t), x) + mat_vec(&self.coeffs.b_bar.at(t), a);
        v.as_slice().to_vec()
    }
    fn volatility(&self, t: f64, _: &[f64], _: &AtomicMeasure, _: &[f64]) -> DMatrix<f64> {
        let d = self.coeffs.state_dim;
        DMatrix::identity(d, d) * self.coeffs.sigma.at(t)
    }
    fn branch_rate(&self, t: f64, _: &[f64], _: &AtomicMeasure, _: &[f64]) -> f64 {
        self.coeffs.gamma.at(t)
    }
    fn offspring_probs(&self, _: f64, _: &[f64], _: &AtomicMeasure, _: &[f64]) -> Vec<f64> {
        self.coeffs.offspring.clone()
    }
    fn running_cost(&self, t: f64, x: &[f64], l: &AtomicMeasure, a: &[f64]) -> f64 {
        quad_form(&self.coeffs.c.at(t), x)
            + self.coeffs.c_mass.at(t) * l.mass() as f64
            + quad_form(&self.coeffs.c_bar.at(t), a)
    }
    fn terminal_cost(&self, l: &AtomicMeasure) -> f64 {
        let n = l.mass() as f64;
        l.integrate(|x| quad_form(&self.coeffs.h, x)) + self.coeffs.h_mass * n * n
    }
    fn bounds(&self) -> &Bounds {
        &self.bounds
    }
    fn filippov(&self) -> FilippovNote {
        FilippovNote {
            convex: true,
            justification: "drift is affine in a, volatility and branching do not depend on a, \
                            and the running cost is convex in a"
                .into(),
        }
    }
}

// ---------------------------------------------------------------------------
// Kinetic-energy scenario

pub type SpaceTimeFn<T> = Arc<dyn Fn(f64, &[f64]) -> T + Send + Sync>;
pub type SpaceFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Ingredients of the kinetic-energy model: drift b(t,x) + a, σ = I,
/// running cost ½|a|² and terminal cost ∫G dλ.
#[derive(Clone)]
pub struct KineticParts {
    pub dim: usize,
    pub drift: SpaceTimeFn<Vec<f64>>,
    /// Declared Lipschitz/growth constant of the drift.
    pub drift_bound: f64,
    pub branch_rate: SpaceTimeFn<f64>,
    /// Declared sup of the branching rate.
    pub rate_bound: f64,
    pub offspring: SpaceTimeFn<Vec<f64>>,
    /// Declared bounds on Σ k p_k and Σ k(k−1) p_k.
    pub offspring_bounds: (f64, f64),
    pub terminal: SpaceFn,
    /// Declared growth constant of G.
    pub terminal_bound: f64,
}

#[derive(Clone)]
pub struct KineticScenario {
    parts: KineticParts,
    bounds: Bounds,
}

pub fn builtin_kinetic(parts: KineticParts) -> KineticScenario {
    let bounds = Bounds {
        c_b: parts.drift_bound.max(1.0),
        c_sigma: (parts.dim as f64).sqrt(),
        c_gamma: parts.rate_bound,
        c_phi1: parts.offspring_bounds.0,
        c_phi2: parts.offspring_bounds.1,
        c_terminal: parts.terminal_bound.max(1.0),
        c_coercive: 0.5,
    };
    KineticScenario { parts, bounds }
}

impl KineticScenario {
    pub fn parts(&self) -> &KineticParts {
        &self.parts
    }

    /// Uncontrolled drift b(t, x).
    pub fn base_drift(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (self.parts.drift)(t, x)
    }

    /// φ(t,x) = γ_t(x)(Σ_k k p_k(x) − 1).
    pub fn potential(&self, t: f64, x: &[f64]) -> f64 {
        let (f1, _) = factorial_moments(&(self.parts.offspring)(t, x));
        (self.parts.branch_rate)(t, x) * (f1 - 1.0)
    }

    /// Terminal function G.
    pub fn terminal_fn(&self, x: &[f64]) -> f64 {
        (self.parts.terminal)(x)
    }
}

impl Scenario for KineticScenario {
    fn name(&self) -> &str {
        "kinetic"
    }
    fn dims(&self) -> Dims {
        Dims {
            state: self.parts.dim,
            noise: self.parts.dim,
            action: self.parts.dim,
        }
    }
    fn drift(&self, t: f64, x: &[f64], _: &AtomicMeasure, a: &[f64]) -> Vec<f64> {
        let mut b = (self.parts.drift)(t, x);
        for (bi, ai) in b.iter_mut().zip(a) {
            *bi += ai;
        }
        b
    }
    fn volatility(&self, _: f64, _: &[f64], _: &AtomicMeasure, _: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.parts.dim, self.parts.dim)
    }
    fn branch_rate(&self, t: f64, x: &[f64], _: &AtomicMeasure, _: &[f64]) -> f64 {
        (self.parts.branch_rate)(t, x)
    }
    fn offspring_probs(&self, t: f64, x: &[f64], _: &AtomicMeasure, _: &[f64]) -> Vec<f64> {
        (self.parts.offspring)(t, x)
    }
    fn running_cost(&self, _: f64, _: &[f64], _: &AtomicMeasure, a: &[f64]) -> f64 {
        0.5 * a.iter().map(|v| v * v).sum::<f64>()
    }
    fn terminal_cost(&self, l: &AtomicMeasure) -> f64 {
        l.integrate(|x| (self.parts.terminal)(x))
    }
    fn bounds(&self) -> &Bounds {
        &self.bounds
    }
    fn filippov(&self) -> FilippovNote {
        FilippovNote {
            convex: true,
            justification: "drift is affine in a, branching does not depend on a, \
                            and ½|a|² is convex"
                .into(),
        }
    }
}

// ---------------------------------------------------------------------------
// Sampling spot-check of declared bounds

/// Summary of a randomized bound check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpotCheckReport {
    pub samples: usize,
    pub violations: Vec<String>,
}

impl SpotCheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Samples (t, x, λ, a) and checks Σp = 1, γ ≤ C_γ, the moment bounds,
/// the linear growth of b, |σ| ≤ C_σ and the coercivity bounds on ψ and Ψ.
pub fn spot_check_bounds(scn: &dyn Scenario, horizon: f64, samples: usize, seed: u64) -> SpotCheckReport {
    let dims = scn.dims();
    let b = scn.bounds().clone();
    let mut rng = label_stream(seed, &Label::root(), StreamKind::UniformMark);
    let slack = 1e-9;
    let mut violations = Vec::new();
    for _ in 0..samples {
        let t = horizon * rng.uniform();
        let mut gauss = |n: usize, scale: f64| -> Vec<f64> { (0..n).map(|_| scale * rng.standard_normal()).collect() };
        let x = gauss(dims.state, 2.0);
        let a = gauss(dims.action, 2.0);
        let atoms: Vec<Vec<f64>> = (0..4).map(|_| gauss(dims.state, 2.0)).collect();
        let n_atoms = 1 + (rng.index(4));
        let lambda = crate::measure::embed(dims.state, &atoms[..n_atoms]).expect("consistent dimension");

        let mass = lambda.mass() as f64;
        let first = lambda.integrate(norm);
        let second = lambda.integrate(|y| norm(y).powi(2));
        let (nx, na) = (norm(&x), norm(&a));

        let probs = scn.offspring_probs(t, &x, &lambda, &a);
        if let Err(e) = validate_probs(&probs) {
            violations.push(format!("offspring law at t={t}: {e}"));
        }
        let (f1, f2) = factorial_moments(&probs);
        if f1 > b.c_phi1 + slack || f2 > b.c_phi2 + slack {
            violations.push(format!(
                "offspring moments ({f1}, {f2}) exceed ({}, {})",
                b.c_phi1, b.c_phi2
            ));
        }
        let gamma = scn.branch_rate(t, &x, &lambda, &a);
        if gamma < 0.0 || gamma > b.c_gamma * (1.0 + 1e-12) + slack {
            violations.push(format!("branching rate {gamma} outside [0, {}]", b.c_gamma));
        }
        let drift = scn.drift(t, &x, &lambda, &a);
        if norm(&drift) > b.c_b * (1.0 + nx + na) + slack {
            violations.push(format!("|b| = {} exceeds C_b(1+|x|+|a|)", norm(&drift)));
        }
        let vol = frobenius(&scn.volatility(t, &x, &lambda, &a));
        if vol > b.c_sigma + slack {
            violations.push(format!("|σ| = {vol} exceeds C_σ = {}", b.c_sigma));
        }
        let big = scn.terminal_cost(&lambda);
        if big > b.c_terminal * (1.0 + second + mass * mass) + slack {
            violations.push(format!("Ψ = {big} above its quadratic growth bound"));
        }
        if big < -b.c_terminal * (1.0 + first + mass) - slack {
            violations.push(format!("Ψ = {big} below its linear lower bound"));
        }
        let small = scn.running_cost(t, &x, &lambda, &a);
        if small > b.c_terminal * (1.0 + nx * nx + first + na * na) + slack {
            violations.push(format!("ψ = {small} above its quadratic growth bound"));
        }
        if small < -b.c_terminal * (1.0 + nx) + b.c_coercive * na * na - slack {
            violations.push(format!("ψ = {small} below its coercive lower bound"));
        }
    }
    SpotCheckReport { samples, violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mark_examples() {
        let p = [0.5, 0.0, 0.5];
        assert_eq!(outcome_from_mark(1.0, &p, 1.0, 0.25), Ok(BranchOutcome::Offspring(0)));
        assert_eq!(outcome_from_mark(1.0, &p, 1.0, 0.75), Ok(BranchOutcome::Offspring(2)));
        assert_eq!(outcome_from_mark(0.5, &p, 1.0, 0.8), Ok(BranchOutcome::Thinned));
        assert!(matches!(
            outcome_from_mark(0.5, &p, 1.0, 1.5),
            Err(ScenarioError::MarkOutOfRange { .. })
        ));
        assert!(outcome_from_mark(0.5, &p, 1.0, -0.1).is_err());
    }

    #[test]
    fn moments_examples() {
        assert_eq!(moments_m(&[0.0, 0.0, 1.0]), (1.0, 1.0));
        assert_eq!(moments_m(&[1.0]), (-1.0, 1.0));
        assert_eq!(moments_m(&[0.0, 1.0]), (0.0, 0.0));
    }

    #[test]
    fn intervals_partition_the_rate() {
        let cells = offspring_intervals(0.7, &[0.3, 0.2, 0.5]);
        assert_eq!(cells[0].0, 0.0);
        for w in cells.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
        assert!((cells[2].1 - 0.7).abs() < 1e-15);
    }

    #[test]
    fn mark_frequencies_match_rates() {
        // chi-square against γ p_k / C_γ and 1 − γ / C_γ
        let (gamma, c_gamma) = (0.6, 1.0);
        let p = [0.3, 0.2, 0.5];
        let n = 100_000;
        let mut rng = label_stream(11, &Label::root(), StreamKind::UniformMark);
        let mut counts = [0usize; 4];
        for _ in 0..n {
            match outcome_from_mark(gamma, &p, c_gamma, c_gamma * rng.uniform()).unwrap() {
                BranchOutcome::Thinned => counts[3] += 1,
                BranchOutcome::Offspring(k) => counts[k] += 1,
            }
        }
        let expected = [gamma * p[0], gamma * p[1], gamma * p[2], 1.0 - gamma / c_gamma].map(|q| q * n as f64);
        let chi2: f64 = counts
            .iter()
            .zip(expected)
            .map(|(&o, e)| (o as f64 - e).powi(2) / e)
            .sum();
        // 3 degrees of freedom, 0.999 quantile is 16.27
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    fn scalar_lq() -> LqCoefficients {
        LqCoefficients::scalar(0.0, 1.0, 0.5, 0.2, vec![0.5, 0.0, 0.5], 1.0, 0.0, 1.0, 1.0, 0.0)
    }

    #[test]
    fn lq_zero_costs() {
        let mut c = scalar_lq();
        c.c = MatrixTable::constant(DMatrix::zeros(1, 1));
        c.h = DMatrix::zeros(1, 1);
        let s = builtin_lq(c).unwrap();
        let l = crate::measure::embed(1, &[[2.0], [3.0]]).unwrap();
        assert_eq!(s.running_cost(0.0, &[2.0], &l, &[3.0]), 9.0);
        assert_eq!(s.terminal_cost(&l), 0.0);
    }

    #[test]
    fn lq_scalar_drift_and_bounds() {
        let s = builtin_lq(scalar_lq()).unwrap();
        let l = AtomicMeasure::zero(1);
        assert_eq!(s.drift(0.3, &[5.0], &l, &[-2.0]), vec![-2.0]);
        assert_eq!(s.bounds().c_gamma, 0.2);
        assert_eq!(s.bounds().c_coercive, 1.0);
        assert!(s.filippov().convex);
    }

    #[test]
    fn lq_gamma_bound_is_sup_of_table() {
        let mut c = scalar_lq();
        c.gamma = ScalarTable::new(vec![0.0, 0.5, 1.0], vec![0.1, 0.9, 0.3]).unwrap();
        assert_eq!(builtin_lq(c).unwrap().bounds().c_gamma, 0.9);
    }

    #[test]
    fn lq_rejects_bad_matrices() {
        let mut c = scalar_lq();
        c.c_bar = MatrixTable::constant(DMatrix::from_element(1, 1, 0.0));
        assert!(matches!(builtin_lq(c), Err(ScenarioError::NotPositiveDefinite { .. })));
        let mut c = scalar_lq();
        c.h = DMatrix::from_element(1, 1, -1.0);
        assert!(matches!(
            builtin_lq(c),
            Err(ScenarioError::NotPositiveSemidefinite { .. })
        ));
        let mut c = scalar_lq();
        c.state_dim = 2;
        c.action_dim = 1;
        c.b = MatrixTable::constant(DMatrix::zeros(2, 2));
        c.b_bar = MatrixTable::constant(DMatrix::zeros(2, 1));
        c.c = MatrixTable::constant(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]));
        assert!(matches!(builtin_lq(c), Err(ScenarioError::NotSymmetric { .. })));
    }

    fn quadratic_kinetic() -> KineticScenario {
        builtin_kinetic(KineticParts {
            dim: 1,
            drift: Arc::new(|_, _| vec![0.0]),
            drift_bound: 0.0,
            branch_rate: Arc::new(|_, _| 0.5),
            rate_bound: 0.5,
            offspring: Arc::new(|_, _| vec![0.3, 0.2, 0.5]),
            offspring_bounds: (1.2, 1.0),
            terminal: Arc::new(|x| x[0] * x[0]),
            terminal_bound: 1.0,
        })
    }

    #[test]
    fn kinetic_terminal_and_potential() {
        let s = quadratic_kinetic();
        let l = crate::measure::embed(1, &[[1.0], [-1.0]]).unwrap();
        assert_eq!(s.terminal_cost(&l), 2.0);
        // γ (Σ k p_k − 1) = 0.5 · 0.2
        assert!((s.potential(0.0, &[0.0]) - 0.1).abs() < 1e-15);
        assert_eq!(s.drift(0.0, &[1.0], &l, &[0.25]), vec![0.25]);
        assert_eq!(s.running_cost(0.0, &[1.0], &l, &[2.0]), 2.0);
    }

    #[test]
    fn kinetic_zero_terminal() {
        let mut parts = quadratic_kinetic().parts().clone();
        parts.terminal = Arc::new(|_| 0.0);
        let s = builtin_kinetic(parts);
        let l = crate::measure::embed(1, &[[3.0]]).unwrap();
        assert_eq!(s.terminal_cost(&l), 0.0);
    }

    #[test]
    fn builtins_pass_spot_check() {
        let lq = builtin_lq(scalar_lq()).unwrap();
        let r = spot_check_bounds(&lq, 1.0, 2000, 3);
        assert!(r.passed(), "{:?}", r.violations);
        let kin = quadratic_kinetic();
        let r = spot_check_bounds(&kin, 1.0, 2000, 4);
        assert!(r.passed(), "{:?}", r.violations);
    }

    #[test]
    fn spot_check_flags_rate_violation() {
        let mut s = GenericScenario::inert(
            "bad",
            Dims {
                state: 1,
                noise: 1,
                action: 1,
            },
        )
        .with_constant_branching(1.0, vec![0.0, 0.0, 1.0]);
        s.bounds.c_gamma = 0.5;
        assert!(!spot_check_bounds(&s, 1.0, 10, 1).passed());
    }
}
