//! Monte Carlo cost estimation, moment-bound checks and statistical
//! martingale / submartingale tests.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::AtomicMeasure;
use crate::policy::Policy;
use crate::rng::replication_seed;
use crate::scenario::{factorial_moments, Scenario};
use crate::simulate::{run_path, Observer, PathSummary, SimConfig, SimError, StepView};

pub const DEFAULT_Z_THRESHOLD: f64 = 4.0;

#[derive(Debug, Error, Clone)]
pub enum EstimateError {
    #[error("at least 2 replications are required, got {0}")]
    TooFewReplications(usize),
    #[error("{failed} of {replications} replications exceeded the population cap")]
    Explosions { failed: usize, replications: usize },
    #[error("invalid test configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Simulation(#[from] SimError),
}

/// Replication count, master seed and optional thread count of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub replications: usize,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Ensemble {
    pub fn new(replications: usize, seed: u64) -> Self {
        Self {
            replications,
            seed,
            threads: None,
        }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads);
        self
    }

    fn check(&self) -> Result<(), EstimateError> {
        if self.replications < 2 {
            return Err(EstimateError::TooFewReplications(self.replications));
        }
        Ok(())
    }
}

/// Runs `f` on the master seed of every replication and returns the results in
/// replication order, whatever the number of threads.
pub fn replicate<R, F>(ens: &Ensemble, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(u64) -> R + Sync + Send,
{
    let n = ens.replications as u64;
    let seed = ens.seed;
    let run = || -> Vec<R> { (0..n).into_par_iter().map(|i| f(replication_seed(seed, i))).collect() };
    match ens.threads {
        Some(k) if k > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map(|pool| pool.install(run))
            .unwrap_or_else(|_| run()),
        _ => run(),
    }
}

/// Neumaier-compensated sum in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(values.iter().copied()) / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, (ss / (n - 1) as f64 / n as f64).sqrt())
}

/// z-score of a mean; zero when both mean and SE vanish.
pub fn z_score(mean: f64, se: f64) -> f64 {
    if se > 0.0 {
        mean / se
    } else if mean == 0.0 {
        0.0
    } else {
        mean.signum() * f64::INFINITY
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub mean: f64,
    pub standard_error: f64,
    pub replications: usize,
    pub seed: u64,
    /// Replications excluded because they hit the population cap.
    #[serde(default)]
    pub failed: usize,
}

impl EstimateResult {
    pub fn from_samples(samples: &[f64], seed: u64, failed: usize) -> Self {
        let (mean, standard_error) = mean_and_se(samples);
        Self {
            mean,
            standard_error,
            replications: samples.len(),
            seed,
            failed,
        }
    }

    /// |mean − target| ≤ k·SE + slack.
    pub fn within(&self, target: f64, k: f64, slack: f64) -> bool {
        (self.mean - target).abs() <= k * self.standard_error + slack
    }
}

fn split_explosions<T>(results: Vec<Result<T, SimError>>) -> Result<(Vec<T>, usize), EstimateError> {
    let mut ok = Vec::with_capacity(results.len());
    let mut failed = 0;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(SimError::Explosion { .. }) => failed += 1,
            Err(e) => return Err(e.into()),
        }
    }
    Ok((ok, failed))
}

/// Path costs ∫Σψ + Ψ(ξ_T) of every replication, in replication order.
pub fn cost_samples(
    scn: &dyn Scenario,
    pol: &Policy,
    t0: f64,
    initial: &AtomicMeasure,
    cfg: &SimConfig,
    ens: &Ensemble,
) -> Result<Vec<f64>, EstimateError> {
    ens.check()?;
    let results = replicate(ens, |seed| {
        run_path(scn, pol, t0, initial, cfg, seed, &mut ()).map(|s| s.total_cost())
    });
    let (costs, failed) = split_explosions(results)?;
    if failed > 0 {
        return Err(EstimateError::Explosions {
            failed,
            replications: ens.replications,
        });
    }
    Ok(costs)
}

/// Monte Carlo estimate of the cost J(t, λ; policy).
pub fn estimate_cost(
    scn: &dyn Scenario,
    pol: &Policy,
    t0: f64,
    initial: &AtomicMeasure,
    cfg: &SimConfig,
    ens: &Ensemble,
) -> Result<EstimateResult, EstimateError> {
    let costs = cost_samples(scn, pol, t0, initial, cfg, ens)?;
    Ok(EstimateResult::from_samples(&costs, ens.seed, 0))
}

/// Paired comparison of two policies under common random numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub cost_a: EstimateResult,
    pub cost_b: EstimateResult,
    /// J(a) − J(b), estimated from per-replication differences.
    pub difference: EstimateResult,
    pub common_random_numbers: bool,
}

impl Comparison {
    /// Whether J(a) < J(b) with the difference exceeding k standard errors.
    pub fn a_better(&self, k: f64) -> bool {
        self.difference.mean < 0.0 && self.difference.mean.abs() > k * self.difference.standard_error
    }
}

pub fn compare_policies(
    scn: &dyn Scenario,
    pol_a: &Policy,
    pol_b: &Policy,
    t0: f64,
    initial: &AtomicMeasure,
    cfg: &SimConfig,
    ens: &Ensemble,
) -> Result<Comparison, EstimateError> {
    let a = cost_samples(scn, pol_a, t0, initial, cfg, ens)?;
    let b = cost_samples(scn, pol_b, t0, initial, cfg, ens)?;
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    Ok(Comparison {
        cost_a: EstimateResult::from_samples(&a, ens.seed, 0),
        cost_b: EstimateResult::from_samples(&b, ens.seed, 0),
        difference: EstimateResult::from_samples(&diff, ens.seed, 0),
        common_random_numbers: true,
    })
}

// ---------------------------------------------------------------------------
// Moment bounds

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentBoundReport {
    pub horizon: f64,
    pub initial_mass: u64,
    /// E[sup_u |V_u|].
    pub sup_mass: EstimateResult,
    /// E[sup_u |V_u|²].
    pub sup_mass_squared: EstimateResult,
    /// <1,λ> exp(C_γ C¹ h).
    pub first_bound: f64,
    /// <1,λ>² exp(C_γ (C¹ + C²) h).
    pub second_bound: f64,
    pub first_ok: bool,
    pub second_ok: bool,
    pub explosions: usize,
}

impl MomentBoundReport {
    pub fn passed(&self) -> bool {
        self.first_ok && self.second_ok
    }
}

/// Compares E[sup|V|] and E[sup|V|²] with their exponential bounds, with 3-SE slack.
///
/// The second bound scales with the squared initial mass; at h = 0 it must
/// dominate <1,λ>², so a linear prefactor only works for unit initial mass.
pub fn check_moment_bounds(
    scn: &dyn Scenario,
    pol: &Policy,
    t0: f64,
    initial: &AtomicMeasure,
    cfg: &SimConfig,
    ens: &Ensemble,
) -> Result<MomentBoundReport, EstimateError> {
    ens.check()?;
    let results = replicate(ens, |seed| {
        run_path(scn, pol, t0, initial, cfg, seed, &mut ()).map(|s: PathSummary| s.max_population as f64)
    });
    let (sups, explosions) = split_explosions(results)?;
    let squares: Vec<f64> = sups.iter().map(|v| v * v).collect();
    let b = scn.bounds();
    let h = cfg.horizon - t0;
    let mass = initial.mass() as f64;
    let first_bound = mass * (b.c_gamma * b.c_phi1 * h).exp();
    let second_bound = mass * mass * (b.c_gamma * (b.c_phi1 + b.c_phi2) * h).exp();
    let sup_mass = EstimateResult::from_samples(&sups, ens.seed, explosions);
    let sup_mass_squared = EstimateResult::from_samples(&squares, ens.seed, explosions);
    Ok(MomentBoundReport {
        horizon: h,
        initial_mass: initial.mass(),
        first_ok: sup_mass.mean - 3.0 * sup_mass.standard_error <= first_bound,
        second_ok: sup_mass_squared.mean - 3.0 * sup_mass_squared.standard_error <= second_bound,
        sup_mass,
        sup_mass_squared,
        first_bound,
        second_bound,
        explosions,
    })
}

// ---------------------------------------------------------------------------
// Checkpoint statistics

struct CheckpointRecorder<'a> {
    f: &'a (dyn Fn(&AtomicMeasure) -> f64 + Sync),
    values: Vec<f64>,
}

impl Observer for CheckpointRecorder<'_> {
    fn on_checkpoint(&mut self, _index: usize, view: &StepView) {
        self.values.push((self.f)(view.measure));
    }
}

/// Monte Carlo means of f(ξ_s) at each checkpoint s.
#[allow(clippy::too_many_arguments)]
pub fn checkpoint_means(
    scn: &dyn Scenario,
    pol: &Policy,
    t0: f64,
    initial: &AtomicMeasure,
    cfg: &SimConfig,
    ens: &Ensemble,
    checkpoints: &[f64],
    f: &(dyn Fn(&AtomicMeasure) -> f64 + Sync),
) -> Result<Vec<EstimateResult>, EstimateError> {
    ens.check()?;
    let cfg = cfg.clone().with_grid(checkpoints.to_vec());
    let results = replicate(ens, |seed| {
        let mut rec = CheckpointRecorder { f, values: Vec::new() };
        run_path(scn, pol, t0, initial, &cfg, seed, &mut rec).map(|_| rec.values)
    });
    let (paths, failed) = split_explosions(results)?;
    Ok((0..checkpoints.len())
        .map(|j| {
            let col: Vec<f64> = paths.iter().map(|p| p[j]).collect();
            EstimateResult::from_samples(&col, ens.seed, failed)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Martingale problem

/// Outer function F of a cylindrical functional F(<φ, λ>).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OuterFn {
    /// F(y) = y
    Identity,
    /// F(y) = y²
    Square,
    /// F(y) = e^{−y}
    ExpNeg,
}

impl OuterFn {
    /// (F, F′, F″) at y.
    pub fn eval(self, y: f64) -> (f64, f64, f64) {
        match self {
            OuterFn::Identity => (y, 1.0, 0.0),
            OuterFn::Square => (y * y, 2.0 * y, 2.0),
            OuterFn::ExpNeg => {
                let e = (-y).exp();
                (e, -e, e)
            }
        }
    }
}

/// Bounded test function φ with its gradient and Hessian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TestFunction {
    /// φ ≡ 1
    One,
    /// exp(−|x − c|² / (2w²))
    Bump { center: Vec<f64>, width: f64 },
    /// 1 / (1 + exp(−(<v, x> − o)))
    Sigmoid { direction: Vec<f64>, offset: f64 },
}

impl TestFunction {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.eval(x).0
    }

    /// (φ, Dφ, D²φ) at x.
    pub fn eval(&self, x: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let d = x.len();
        match self {
            TestFunction::One => (1.0, DVector::zeros(d), DMatrix::zeros(d, d)),
            TestFunction::Bump { center, width } => {
                let r = DVector::from_iterator(d, x.iter().zip(center).map(|(a, c)| a - c));
                let w2 = width * width;
                let v = (-r.norm_squared() / (2.0 * w2)).exp();
                let grad = &r * (-v / w2);
                let hess = (&r * r.transpose()) * (v / (w2 * w2)) - DMatrix::identity(d, d) * (v / w2);
                (v, grad, hess)
            }
            TestFunction::Sigmoid { direction, offset } => {
                let dir = DVector::from_column_slice(direction);
                let u = dir.dot(&DVector::from_column_slice(x)) - offset;
                let s = 1.0 / (1.0 + (-u).exp());
                let s1 = s * (1.0 - s);
                let s2 = s1 * (1.0 - 2.0 * s);
                (s, &dir * s1, (&dir * dir.transpose()) * s2)
            }
        }
    }
}

/// A cylindrical functional F(<φ, ·>).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Functional {
    pub outer: OuterFn,
    pub test: TestFunction,
}

impl Functional {
    pub fn describe(&self) -> String {
        let outer = match self.outer {
            OuterFn::Identity => "y",
            OuterFn::Square => "y^2",
            OuterFn::ExpNeg => "exp(-y)",
        };
        let test = match &self.test {
            TestFunction::One => "1".to_string(),
            TestFunction::Bump { center, width } => format!("bump(center={center:?}, width={width})"),
            TestFunction::Sigmoid { direction, offset } => format!("sigmoid(direction={direction:?}, offset={offset})"),
        };
        format!("F(y)={outer}, phi={test}")
    }
}

/// Mean increment statistics on one checkpoint interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalStat {
    pub s: f64,
    pub h: f64,
    pub mean: f64,
    pub standard_error: f64,
    pub z: f64,
    pub pass: bool,
}

fn interval_stats(checkpoints: &[f64], samples: &[Vec<f64>], verdict: impl Fn(f64) -> bool) -> Vec<IntervalStat> {
    (0..checkpoints.len() - 1)
        .map(|j| {
            let d: Vec<f64> = samples.iter().map(|row| row[j]).collect();
            let (mean, standard_error) = mean_and_se(&d);
            let z = z_score(mean, standard_error);
            IntervalStat {
                s: checkpoints[j],
                h: checkpoints[j + 1] - checkpoints[j],
                mean,
                standard_error,
                z,
                pass: verdict(z),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTestReport {
    pub functional: String,
    pub intervals: Vec<IntervalStat>,
    pub max_abs_z: f64,
    /// E[(ΔM)² − ∫ QV-integrand] per interval; only for F(y) = y.
    pub quadratic_variation: Option<Vec<IntervalStat>>,
    pub threshold: f64,
    pub replications: usize,
    pub seed: u64,
    pub explosions: usize,
    pub passed: bool,
}

struct CompensatorObserver<'a> {
    scn: &'a dyn Scenario,
    funcs: &'a [Functional],
    integral: Vec<f64>,
    qv: Vec<f64>,
    /// per functional, per checkpoint: (M, ∫QV)
    marks: Vec<Vec<(f64, f64)>>,
}

impl Observer for CompensatorObserver<'_> {
    fn on_substep(&mut self, view: &StepView, h: f64) {
        if view.particles.is_empty() {
            return;
        }
        let t = view.time;
        let lambda = view.measure;
        let ys: Vec<f64> = self
            .funcs
            .iter()
            .map(|f| lambda.integrate(|x| f.test.value(x)))
            .collect();
        let mut gen = vec![0.0; self.funcs.len()];
        let mut qv = vec![0.0; self.funcs.len()];
        for (p, a) in view.particles.iter().zip(view.actions) {
            let x = p.position.as_slice();
            let b = DVector::from_vec(self.scn.drift(t, x, lambda, a));
            let sigma = self.scn.volatility(t, x, lambda, a);
            let cov = &sigma * sigma.transpose();
            let gamma = self.scn.branch_rate(t, x, lambda, a);
            let probs = self.scn.offspring_probs(t, x, lambda, a);
            for (k, f) in self.funcs.iter().enumerate() {
                let (phi, grad, hess) = f.test.eval(x);
                let l_phi = b.dot(&grad) + 0.5 * cov.component_mul(&hess).sum();
                let grad_sigma = (sigma.transpose() * &grad).norm_squared();
                let y = ys[k];
                let (fy, f1, f2) = f.outer.eval(y);
                let mut jump = 0.0;
                let mut jump_sq = 0.0;
                for (n, pk) in probs.iter().enumerate() {
                    let shift = (n as f64 - 1.0) * phi;
                    jump += pk * (f.outer.eval(y + shift).0 - fy);
                    jump_sq += pk * shift * shift;
                }
                gen[k] += f1 * l_phi + 0.5 * f2 * grad_sigma + gamma * jump;
                qv[k] += grad_sigma + gamma * jump_sq;
            }
        }
        for k in 0..self.funcs.len() {
            self.integral[k] += h * gen[k];
            self.qv[k] += h * qv[k];
        }
    }

    fn on_checkpoint(&mut self, _index: usize, view: &StepView) {
        for (k, f) in self.funcs.iter().enumerate() {
            let y = view.measure.integrate(|x| f.test.value(x));
            let m = f.outer.eval(y).0 - self.integral[k];
            self.marks[k].push((m, self.qv[k]));
        }
    }
}

fn check_checkpoints(t0: f64, cfg: &SimConfig, checkpoints: &[f64]) -> Result<(), EstimateError> {
    if checkpoints.len() < 2 {
        return Err(EstimateError::Config("at least two checkpoints are required".into()));
    }
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EstimateError::Config("checkpoints must be strictly increasing".into()));
    }
    if checkpoints[0] < t0 || checkpoints[checkpoints.len() - 1] > cfg.horizon {
        return Err(EstimateError::Config(format!(
            "checkpoints must lie within [{t0}, {}]",
            cfg.horizon
        )));
    }
    Ok(())
}

/// z-tests that the compensated processes F(<φ, ξ_s>) − ∫ ℒF_φ are martingales.
///
/// All functionals are evaluated on one shared ensemble. The compensator is
/// accumulated with the left-point rule on the simulation's own substeps.
#[allow(clippy::too_many_arguments)]
pub fn martingale_test(
    scn: &dyn Scenario,
    pol: &Policy,
    t0: f64,
    initial: &AtomicMeasure,
    cfg: &SimConfig,
    ens: &Ensemble,
    functionals: &[Functional],
    checkpoints: &[f64],
    threshold: f64,
) -> Result<Vec<MartingaleTestReport>, EstimateError> {
    ens.check()?;
    check_checkpoints(t0, cfg, checkpoints)?;
    let cfg = cfg.clone().with_grid(checkpoints.to_vec());
    let nf = functionals.len();
    let results = replicate(ens, |seed| {
        let mut obs = CompensatorObserver {
            scn,
            funcs: functionals,
            integral: vec![0.0; nf],
            qv: vec![0.0; nf],
            marks: vec![Vec::with_capacity(checkpoints.len()); nf],
        };
        run_path(scn, pol, t0, initial, &cfg, seed, &mut obs).map(|_| obs.marks)
    });
    let (paths, explosions) = split_explosions(results)?;
    let reports = functionals
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let increments: Vec<Vec<f64>> = paths
                .iter()
                .map(|p| p[k].windows(2).map(|w| w[1].0 - w[0].0).collect())
                .collect();
            let intervals = interval_stats(checkpoints, &increments, |z| z.abs() < threshold);
            let quadratic_variation = (f.outer == OuterFn::Identity).then(|| {
                let gaps: Vec<Vec<f64>> = paths
                    .iter()
                    .map(|p| {
                        p[k].windows(2)
                            .map(|w| {
                                let dm = w[1].0 - w[0].0;
                                dm * dm - (w[1].1 - w[0].1)
                            })
                            .collect()
                    })
                    .collect();
                interval_stats(checkpoints, &gaps, |z| z.abs() < threshold)
            });
            let max_abs_z = intervals.iter().map(|i| i.z.abs()).fold(0.0, f64::max);
            let passed = intervals.iter().all(|i| i.pass)
                && quadratic_variation.as_ref().is_none_or(|q| q.iter().all(|i| i.pass));
            MartingaleTestReport {
                functional: f.describe(),
                intervals,
                max_abs_z,
                quadratic_variation,
                threshold,
                replications: paths.len(),
                seed: ens.seed,
                explosions,
                passed,
            }
        })
        .collect();
    Ok(reports)
}

// ---------------------------------------------------------------------------
// Verification of candidate value fields

/// A candidate value function w_t(λ).
pub trait ValueField: Send + Sync {
    fn value(&self, t: f64, lambda: &AtomicMeasure) -> f64;
    /// Time interval on which the field is defined, if restricted.
    fn domain(&self) -> Option<(f64, f64)> {
        None
    }
}

/// The zero field.
pub struct ZeroField;

impl ValueField for ZeroField {
    fn value(&self, _: f64, _: &AtomicMeasure) -> f64 {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyMode {
    /// E[Δ(w + ∫Σψ)] = 0 on every interval.
    Martingale,
    /// E[Δ(w + ∫Σψ)] ≥ 0 on every interval.
    Submartingale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmartingaleReport {
    pub mode: VerifyMode,
    pub intervals: Vec<IntervalStat>,
    /// Drift over the whole checkpoint range.
    pub total: IntervalStat,
    pub max_abs_z: f64,
    pub threshold: f64,
    pub replications: usize,
    pub seed: u64,
    pub explosions: usize,
    pub passed: bool,
}

struct ValueRecorder<'a> {
    w: &'a dyn ValueField,
    values: Vec<f64>,
}

impl Observer for ValueRecorder<'_> {
    fn on_checkpoint(&mut self, _index: usize, view: &StepView) {
        self.values
            .push(self.w.value(view.time, view.measure) + view.running_cost);
    }
}

/// z-tests of the drift of w_s(ξ_s) + ∫_t^s Σψ du on each checkpoint interval.
#[allow(clippy::too_many_arguments)]
pub fn submartingale_test(
    scn: &dyn Scenario,
    pol: &Policy,
    t0: f64,
    initial: &AtomicMeasure,
    w: &dyn ValueField,
    cfg: &SimConfig,
    ens: &Ensemble,
    checkpoints: &[f64],
    mode: VerifyMode,
    threshold: f64,
) -> Result<SubmartingaleReport, EstimateError> {
    ens.check()?;
    check_checkpoints(t0, cfg, checkpoints)?;
    if let Some((lo, hi)) = w.domain() {
        if checkpoints[0] < lo || checkpoints[checkpoints.len() - 1] > hi {
            return Err(EstimateError::Config(format!(
                "checkpoints leave the value field's domain [{lo}, {hi}]"
            )));
        }
    }
    let cfg = cfg.clone().with_grid(checkpoints.to_vec());
    let results = replicate(ens, |seed| {
        let mut rec = ValueRecorder { w, values: Vec::new() };
        run_path(scn, pol, t0, initial, &cfg, seed, &mut rec).map(|_| rec.values)
    });
    let (paths, explosions) = split_explosions(results)?;
    let verdict = move |z: f64| match mode {
        VerifyMode::Martingale => z.abs() < threshold,
        VerifyMode::Submartingale => z > -threshold,
    };
    let increments: Vec<Vec<f64>> = paths
        .iter()
        .map(|p| p.windows(2).map(|w| w[1] - w[0]).collect())
        .collect();
    let intervals = interval_stats(checkpoints, &increments, verdict);
    let ends = [checkpoints[0], checkpoints[checkpoints.len() - 1]];
    let totals: Vec<Vec<f64>> = paths.iter().map(|p| vec![p[p.len() - 1] - p[0]]).collect();
    let total = interval_stats(&ends, &totals, verdict).remove(0);
    let max_abs_z = intervals.iter().map(|i| i.z.abs()).fold(0.0, f64::max);
    let passed = intervals.iter().all(|i| i.pass) && total.pass;
    Ok(SubmartingaleReport {
        mode,
        intervals,
        total,
        max_abs_z,
        threshold,
        replications: paths.len(),
        seed: ens.seed,
        explosions,
        passed,
    })
}

/// Reports in the CSV layout `s,h,mean,se,z,verdict`.
pub fn intervals_to_csv(intervals: &[IntervalStat]) -> String {
    let mut out = String::from("s,h,mean,se,z,verdict\n");
    for i in intervals {
        out.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
            i.s,
            i.h,
            i.mean,
            i.standard_error,
            i.z,
            if i.pass { "pass" } else { "fail" }
        ));
    }
    out
}

/// Expected number of offspring minus one, Σ k p_k − 1, for a constant law.
pub fn mean_growth(probs: &[f64]) -> f64 {
    factorial_moments(probs).0 - 1.0
}
