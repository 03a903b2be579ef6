//! Batch driver: reads an experiment file, runs one subcommand and writes
//! JSON/CSV artifacts that embed the resolved configuration.

pub mod config;
pub mod model;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use branchlab_core::estimate::{intervals_to_csv, EstimateError, ZeroField};
use branchlab_core::kinetic::{kinetic_feedback_policy, KineticError};
use branchlab_core::lq::{lq_feedback_policy, lq_perturbed_policy, lq_value, LqError};
use branchlab_core::simulate::grid_to_csv;
use branchlab_core::{
    check_moment_bounds, compare_policies, estimate_cost, martingale_test, replication_seed, simulate_path,
    solve_kinetic_hjb, solve_riccati, submartingale_test, AtomicMeasure, Ensemble, KineticSolution, Policy, PolicyName,
    RiccatiSolution, SimConfig, SimError, ValueField,
};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use config::{LoadedConfig, ValueFieldName};
use model::Model;

pub const TOOL: &str = "branchlab";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Explosion { .. } | SimError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::TooFewReplications(_) | EstimateError::Config(_) => CliError::Config(e.to_string()),
            EstimateError::Explosions { .. } => CliError::Numerical(e.to_string()),
            EstimateError::Simulation(s) => s.into(),
        }
    }
}

impl From<LqError> for CliError {
    fn from(e: LqError) -> Self {
        match e {
            LqError::NotPositiveDefinite { .. } | LqError::OutsideGrid { .. } => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<KineticError> for CliError {
    fn from(e: KineticError) -> Self {
        match e {
            KineticError::Dimension(_) | KineticError::Grid(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "branchlab",
    version,
    about = "Experiments on controlled branching diffusions"
)]
pub struct Cli {
    /// Worker threads for replications (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Target {
    /// Experiment file (TOML).
    pub config: PathBuf,
    /// Write artifacts here instead of the configured output directory.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate one path and write its record.
    Simulate(Target),
    /// Monte Carlo estimate of the cost of the configured policy.
    EstimateCost(Target),
    /// Compare E[sup mass] and E[sup mass²] with their exponential bounds.
    Moments(Target),
    /// Statistical test of the martingale problem for cylindrical functionals.
    MartingaleTest(Target),
    /// Martingale or submartingale test of a candidate value field.
    Verify(Target),
    /// Solve the Riccati system of a linear-quadratic scenario.
    LqSolve(Target),
    /// Solve the HJB equation of a kinetic-energy scenario.
    KineticSolve(Target),
    /// Paired cost comparison of two policies on common random numbers.
    Compare(Target),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::EstimateCost(_) => "estimate-cost",
            Command::Moments(_) => "moments",
            Command::MartingaleTest(_) => "martingale-test",
            Command::Verify(_) => "verify",
            Command::LqSolve(_) => "lq-solve",
            Command::KineticSolve(_) => "kinetic-solve",
            Command::Compare(_) => "compare",
        }
    }

    fn target(&self) -> &Target {
        match self {
            Command::Simulate(t)
            | Command::EstimateCost(t)
            | Command::Moments(t)
            | Command::MartingaleTest(t)
            | Command::Verify(t)
            | Command::LqSolve(t)
            | Command::KineticSolve(t)
            | Command::Compare(t) => t,
        }
    }
}

#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    verdict: Option<&'static str>,
    result: T,
}

/// What a subcommand produced.
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
    /// `Some(false)` when a statistical test failed.
    pub passed: Option<bool>,
}

struct Context {
    loaded: LoadedConfig,
    model: Model,
    initial: AtomicMeasure,
    sim: SimConfig,
    threads: Option<usize>,
    riccati: Option<Arc<RiccatiSolution>>,
    kinetic: Option<Arc<KineticSolution>>,
}

impl Context {
    fn new(loaded: LoadedConfig, threads: Option<usize>) -> Result<Self, CliError> {
        let model = model::build(&loaded.scenario)?;
        let dim = model.scenario.dims().state;
        let c = &loaded.config;
        if let Some(bad) = c.initial.atoms.iter().position(|a| a.position.len() != dim) {
            return Err(CliError::Config(format!(
                "initial.atoms[{bad}]: position has {} components, the scenario state dimension is {dim}",
                c.initial.atoms[bad].position.len()
            )));
        }
        let initial = AtomicMeasure::from_atoms(
            dim,
            c.initial.atoms.iter().map(|a| (a.position.as_slice(), a.multiplicity)),
        )
        .map_err(|e| CliError::Config(format!("initial.atoms: {e}")))?;
        let sim = SimConfig {
            dt_max: c.sim.dt_max,
            horizon: c.sim.horizon,
            output_grid: c.sim.output_grid.clone(),
            max_population: c.sim.max_population,
        };
        sim.validate(c.initial.t)
            .map_err(|e| CliError::Config(format!("sim: {e}")))?;
        Ok(Self {
            loaded,
            model,
            initial,
            sim,
            threads,
            riccati: None,
            kinetic: None,
        })
    }

    fn t0(&self) -> f64 {
        self.loaded.config.initial.t
    }

    fn ensemble(&self) -> Ensemble {
        let e = Ensemble::new(self.loaded.config.replications, self.loaded.config.seed);
        match self.threads {
            Some(k) => e.with_threads(k),
            None => e,
        }
    }

    fn riccati(&mut self) -> Result<Arc<RiccatiSolution>, CliError> {
        if let Some(sol) = &self.riccati {
            return Ok(sol.clone());
        }
        let lq = self
            .model
            .lq
            .as_ref()
            .ok_or_else(|| CliError::Config("this needs a scenario of kind `lq`".into()))?;
        let sol = Arc::new(solve_riccati(
            lq.coefficients(),
            self.sim.horizon,
            self.loaded.config.riccati.steps,
        )?);
        self.riccati = Some(sol.clone());
        Ok(sol)
    }

    fn kinetic(&mut self) -> Result<Arc<KineticSolution>, CliError> {
        if let Some(sol) = &self.kinetic {
            return Ok(sol.clone());
        }
        let scn = self
            .model
            .kinetic
            .as_ref()
            .ok_or_else(|| CliError::Config("this needs a scenario of kind `kinetic`".into()))?;
        let grid = self.loaded.config.kinetic_grid.grid();
        let sol = Arc::new(solve_kinetic_hjb(scn, self.sim.horizon, &grid)?);
        self.kinetic = Some(sol.clone());
        Ok(sol)
    }

    fn policy(&mut self, name: &PolicyName) -> Result<Policy, CliError> {
        let q = self.model.scenario.dims().action;
        Ok(match name {
            PolicyName::Zero => Policy::zero(q),
            PolicyName::Constant(a) => {
                if a.len() != q {
                    return Err(CliError::Config(format!(
                        "policy `{name}` has {} components, the action dimension is {q}",
                        a.len()
                    )));
                }
                Policy::Constant(a.clone())
            }
            PolicyName::LqOptimal => lq_feedback_policy(self.riccati()?),
            PolicyName::LqPerturbed(eps) => lq_perturbed_policy(self.riccati()?, *eps),
            PolicyName::KineticOptimal => kinetic_feedback_policy(self.kinetic()?),
        })
    }

    fn value_field(&mut self, name: ValueFieldName) -> Result<Arc<dyn ValueField>, CliError> {
        Ok(match name {
            ValueFieldName::Zero => Arc::new(ZeroField),
            ValueFieldName::Lq => self.riccati()?,
            ValueFieldName::Kinetic => self.kinetic()?,
        })
    }
}

struct Writer {
    dir: PathBuf,
    command: &'static str,
    config: serde_json::Value,
    files: Vec<PathBuf>,
}

impl Writer {
    fn file(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, result: T, passed: Option<bool>) -> Result<(), CliError> {
        let artifact = Artifact {
            tool: TOOL,
            version: VERSION,
            command: self.command,
            config: &self.config,
            verdict: passed.map(|p| if p { "pass" } else { "fail" }),
            result,
        };
        let mut text = serde_json::to_string_pretty(&artifact).expect("artifact serializes");
        text.push('\n');
        let name = format!("{}.json", self.command);
        self.file(&name, &text)
    }

    fn csv(&mut self, suffix: &str, contents: &str) -> Result<(), CliError> {
        let name = format!("{}{suffix}.csv", self.command);
        self.file(&name, contents)
    }
}

fn f(v: f64) -> String {
    format!("{v:.16e}")
}

/// Runs one parsed invocation.
pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let target = cli.command.target();
    let loaded = config::load(&target.config)?;
    let dir = target.output_dir.clone().unwrap_or_else(|| loaded.output_dir());
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let command = cli.command.name();
    let mut w = Writer {
        dir,
        command,
        config: loaded.resolved(),
        files: Vec::new(),
    };
    let mut ctx = Context::new(loaded, cli.threads)?;
    let t0 = ctx.t0();
    let (summary, passed) = match &cli.command {
        Command::Simulate(_) => simulate(&mut ctx, &mut w)?,
        Command::EstimateCost(_) => {
            let name = ctx.loaded.config.policy.clone();
            let pol = ctx.policy(&name)?;
            let est = estimate_cost(
                ctx.model.scenario.as_ref(),
                &pol,
                t0,
                &ctx.initial,
                &ctx.sim,
                &ctx.ensemble(),
            )?;
            w.json(&est, None)?;
            w.csv(
                "",
                &format!(
                    "mean,se,replications,seed,failed\n{},{},{},{},{}\n",
                    f(est.mean),
                    f(est.standard_error),
                    est.replications,
                    est.seed,
                    est.failed
                ),
            )?;
            (format!("J({name}) = {} ± {}", est.mean, est.standard_error), None)
        }
        Command::Moments(_) => {
            let name = ctx.loaded.config.policy.clone();
            let pol = ctx.policy(&name)?;
            let r = check_moment_bounds(
                ctx.model.scenario.as_ref(),
                &pol,
                t0,
                &ctx.initial,
                &ctx.sim,
                &ctx.ensemble(),
            )?;
            w.json(&r, Some(r.passed()))?;
            w.csv(
                "",
                &format!(
                    "moment,mean,se,bound,verdict\nsup_mass,{},{},{},{}\nsup_mass_squared,{},{},{},{}\n",
                    f(r.sup_mass.mean),
                    f(r.sup_mass.standard_error),
                    f(r.first_bound),
                    verdict(r.first_ok),
                    f(r.sup_mass_squared.mean),
                    f(r.sup_mass_squared.standard_error),
                    f(r.second_bound),
                    verdict(r.second_ok),
                ),
            )?;
            (
                format!(
                    "E sup|V| = {} (bound {}), E sup|V|^2 = {} (bound {})",
                    r.sup_mass.mean, r.first_bound, r.sup_mass_squared.mean, r.second_bound
                ),
                Some(r.passed()),
            )
        }
        Command::MartingaleTest(_) => {
            let name = ctx.loaded.config.policy.clone();
            let pol = ctx.policy(&name)?;
            let m = ctx.loaded.config.martingale.clone();
            let checkpoints = ctx.loaded.checkpoints(&m.checkpoints);
            let reports = martingale_test(
                ctx.model.scenario.as_ref(),
                &pol,
                t0,
                &ctx.initial,
                &ctx.sim,
                &ctx.ensemble(),
                &m.functionals,
                &checkpoints,
                m.threshold,
            )?;
            let passed = reports.iter().all(|r| r.passed);
            w.json(&reports, Some(passed))?;
            for (k, r) in reports.iter().enumerate() {
                w.csv(&format!("-{k}"), &intervals_to_csv(&r.intervals))?;
                if let Some(qv) = &r.quadratic_variation {
                    w.csv(&format!("-{k}-qv"), &intervals_to_csv(qv))?;
                }
            }
            let worst = reports.iter().map(|r| r.max_abs_z).fold(0.0, f64::max);
            (
                format!("{} functionals, max |z| = {worst}", reports.len()),
                Some(passed),
            )
        }
        Command::Verify(_) => {
            let name = ctx.loaded.config.policy.clone();
            let pol = ctx.policy(&name)?;
            let v = ctx.loaded.config.verify.clone();
            let field = ctx.value_field(v.value_field)?;
            let checkpoints = ctx.loaded.checkpoints(&v.checkpoints);
            let r = submartingale_test(
                ctx.model.scenario.as_ref(),
                &pol,
                t0,
                &ctx.initial,
                field.as_ref(),
                &ctx.sim,
                &ctx.ensemble(),
                &checkpoints,
                v.mode,
                v.threshold,
            )?;
            w.json(&r, Some(r.passed))?;
            w.csv("", &intervals_to_csv(&r.intervals))?;
            (
                format!(
                    "total drift {} ± {} (z = {}), max |z| = {}",
                    r.total.mean, r.total.standard_error, r.total.z, r.max_abs_z
                ),
                Some(r.passed),
            )
        }
        Command::LqSolve(_) => {
            let sol = ctx.riccati()?;
            let (q0, p0, p_bar0) = sol.at(0.0)?;
            let result = LqSummary {
                horizon: sol.horizon(),
                steps: sol.times.len() - 1,
                q0: (0..q0.nrows()).map(|i| q0.row(i).iter().copied().collect()).collect(),
                p0,
                p_bar0,
                min_eigenvalue: sol.min_eigenvalue(),
                initial_time: t0,
                value_at_initial: lq_value(t0, &ctx.initial, &sol)?,
            };
            w.json(&result, None)?;
            w.csv("", &sol.to_csv())?;
            (
                format!("Q(0) = {:?}, w(t, λ) = {}", result.q0, result.value_at_initial),
                None,
            )
        }
        Command::KineticSolve(_) => {
            let sol = ctx.kinetic()?;
            let result = KineticSummary {
                horizon: sol.horizon(),
                grid: ctx.loaded.config.kinetic_grid.grid(),
                initial_time: t0,
                value_at_initial: sol.value(t0, &ctx.initial),
                value_at_origin: sol.value_at(t0, 0.0),
            };
            w.json(&result, None)?;
            w.csv("", &sol.to_csv())?;
            (format!("w(t, λ) = {}", result.value_at_initial), None)
        }
        Command::Compare(_) => {
            let c = ctx.loaded.config.compare.clone();
            let a = ctx.policy(&c.policy_a)?;
            let b = ctx.policy(&c.policy_b)?;
            let cmp = compare_policies(
                ctx.model.scenario.as_ref(),
                &a,
                &b,
                t0,
                &ctx.initial,
                &ctx.sim,
                &ctx.ensemble(),
            )?;
            let result = CompareSummary {
                policy_a: c.policy_a.to_string(),
                policy_b: c.policy_b.to_string(),
                significance: c.significance,
                a_better: cmp.a_better(c.significance),
                comparison: cmp,
            };
            w.json(&result, None)?;
            let row = |name: &str, e: &branchlab_core::EstimateResult| {
                format!("{name},{},{}\n", f(e.mean), f(e.standard_error))
            };
            w.csv(
                "",
                &format!(
                    "quantity,mean,se\n{}{}{}",
                    row("cost_a", &result.comparison.cost_a),
                    row("cost_b", &result.comparison.cost_b),
                    row("difference", &result.comparison.difference)
                ),
            )?;
            (
                format!(
                    "J({}) - J({}) = {} ± {}",
                    result.policy_a,
                    result.policy_b,
                    result.comparison.difference.mean,
                    result.comparison.difference.standard_error
                ),
                None,
            )
        }
    };
    Ok(Outcome {
        files: w.files,
        summary,
        passed,
    })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

fn simulate(ctx: &mut Context, w: &mut Writer) -> Result<(String, Option<bool>), CliError> {
    let name = ctx.loaded.config.policy.clone();
    let pol = ctx.policy(&name)?;
    // the path is replication 0 of the ensemble with the same seed
    let seed = replication_seed(ctx.loaded.config.seed, 0);
    match simulate_path(
        ctx.model.scenario.as_ref(),
        &pol,
        ctx.t0(),
        &ctx.initial,
        &ctx.sim,
        seed,
    ) {
        Ok(record) => {
            w.json(&record, None)?;
            w.csv("", &grid_to_csv(&record))?;
            Ok((
                format!(
                    "{} events, terminal mass {}, cost {}",
                    record.events.len(),
                    record.terminal.particles.len(),
                    record.total_cost()
                ),
                None,
            ))
        }
        Err(SimError::Explosion {
            time,
            population,
            partial: Some(partial),
        }) => {
            w.json(&partial, None)?;
            Err(CliError::Numerical(format!(
                "population reached {population} particles at t = {time}; partial record written"
            )))
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct LqSummary {
    horizon: f64,
    steps: usize,
    q0: Vec<Vec<f64>>,
    p0: f64,
    p_bar0: f64,
    min_eigenvalue: f64,
    initial_time: f64,
    value_at_initial: f64,
}

#[derive(Serialize)]
struct KineticSummary {
    horizon: f64,
    grid: branchlab_core::KineticGrid,
    initial_time: f64,
    value_at_initial: f64,
    value_at_origin: f64,
}

#[derive(Serialize)]
struct CompareSummary {
    policy_a: String,
    policy_b: String,
    significance: f64,
    a_better: bool,
    comparison: branchlab_core::estimate::Comparison,
}

/// Parses `args`, runs the subcommand and returns the process exit status:
/// 0 success, 2 configuration error, 3 numerical failure, 4 failed test verdict.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(out) => {
            for file in &out.files {
                println!("wrote {}", display(file));
            }
            println!("{}", out.summary);
            match out.passed {
                Some(false) => {
                    eprintln!("test verdict: fail");
                    4
                }
                _ => 0,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
