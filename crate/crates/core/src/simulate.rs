//! Event-driven simulation of a controlled branching diffusion.
//!
//! Candidate branching times come from a single exponential clock at rate
//! C_γ·|V| with the triggering particle chosen uniformly; between candidates
//! all particles follow explicit Euler–Maruyama substeps with the empirical
//! measure and the actions frozen at the start of each substep.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genealogy::{child_label, Label};
use crate::measure::AtomicMeasure;
use crate::policy::{evaluate, Policy, PolicyError};
use crate::rng::{label_stream, LabelStream, StreamKind};
use crate::scenario::{offspring_from_mark, BranchOutcome, Scenario, ScenarioError};

pub const DEFAULT_MAX_POPULATION: usize = 1_000_000;

#[derive(Debug, Error, Clone)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("initial measure has dimension {found}, scenario state dimension is {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("population reached {population} particles at t = {time}, above the cap")]
    Explosion {
        time: f64,
        population: usize,
        partial: Option<Box<PathRecord>>,
    },
    #[error("non-finite position of particle {label} at t = {time}")]
    NonFinite { time: f64, label: Label },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Discretization and output settings of one path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt_max: f64,
    pub horizon: f64,
    #[serde(default)]
    pub output_grid: Vec<f64>,
    #[serde(default = "default_max_population")]
    pub max_population: usize,
}

fn default_max_population() -> usize {
    DEFAULT_MAX_POPULATION
}

impl SimConfig {
    pub fn new(dt_max: f64, horizon: f64) -> Self {
        Self {
            dt_max,
            horizon,
            output_grid: Vec::new(),
            max_population: DEFAULT_MAX_POPULATION,
        }
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Self {
        self.output_grid = grid;
        self
    }

    pub fn validate(&self, t0: f64) -> Result<(), SimError> {
        if !(self.dt_max > 0.0 && self.dt_max.is_finite()) {
            return Err(SimError::Config(format!(
                "dt_max must be positive, got {}",
                self.dt_max
            )));
        }
        if !(self.horizon >= t0 && self.horizon.is_finite() && t0.is_finite()) {
            return Err(SimError::Config(format!(
                "horizon {} must be finite and not before the start time {t0}",
                self.horizon
            )));
        }
        if self.max_population == 0 {
            return Err(SimError::Config("max_population must be positive".into()));
        }
        if self.output_grid.windows(2).any(|w| w[0] > w[1]) {
            return Err(SimError::Config("output grid must be sorted".into()));
        }
        if self.output_grid.iter().any(|&s| s < t0 || s > self.horizon) {
            return Err(SimError::Config(format!(
                "output grid must lie within [{t0}, {}]",
                self.horizon
            )));
        }
        Ok(())
    }
}

/// One alive particle together with its random streams.
#[derive(Clone, Debug)]
pub struct Particle {
    pub label: Label,
    pub position: Vec<f64>,
    brownian: LabelStream,
    action: LabelStream,
    mark: LabelStream,
}

impl Particle {
    fn new(seed: u64, label: Label, position: Vec<f64>) -> Self {
        Self {
            brownian: label_stream(seed, &label, StreamKind::Brownian),
            action: label_stream(seed, &label, StreamKind::Action),
            mark: label_stream(seed, &label, StreamKind::UniformMark),
            label,
            position,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelledPosition {
    pub label: Label,
    pub position: Vec<f64>,
}

/// Alive particles at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    pub time: f64,
    pub particles: Vec<LabelledPosition>,
}

impl PopulationState {
    pub fn mass(&self) -> usize {
        self.particles.len()
    }

    pub fn measure(&self, dim: usize) -> AtomicMeasure {
        let pos: Vec<&[f64]> = self.particles.iter().map(|p| p.position.as_slice()).collect();
        AtomicMeasure::from_atoms(dim, pos.iter().map(|x| (*x, 1))).expect("positions share one dimension")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub parent: Label,
    pub position: Vec<f64>,
    pub outcome: BranchOutcome,
    pub offspring: Vec<Label>,
}

/// Output-grid state together with the running cost accumulated up to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub state: PopulationState,
    pub running_cost: f64,
}

/// Full record of one simulated path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub initial_time: f64,
    pub initial: AtomicMeasure,
    pub grid: Vec<GridState>,
    pub events: Vec<Event>,
    pub running_cost_integral: f64,
    pub terminal: PopulationState,
    pub terminal_cost: f64,
    /// sup over the path of the number of alive particles.
    pub max_population: usize,
    pub seed: u64,
    pub dt_max: f64,
}

impl PathRecord {
    pub fn total_cost(&self) -> f64 {
        self.running_cost_integral + self.terminal_cost
    }
}

/// Read-only snapshot handed to observers.
pub struct StepView<'a> {
    pub time: f64,
    pub particles: &'a [Particle],
    pub actions: &'a [Vec<f64>],
    pub measure: &'a AtomicMeasure,
    pub running_cost: f64,
}

/// Hooks into the simulation loop.
pub trait Observer {
    /// Called at the start of each Euler substep of length `h`.
    fn on_substep(&mut self, _start: &StepView, _h: f64) {}
    /// Called after a candidate event has been resolved.
    fn on_event(&mut self, _event: &Event, _after: &StepView) {}
    /// Called at every output-grid time, after any event at that time.
    fn on_checkpoint(&mut self, _index: usize, _view: &StepView) {}
}

impl Observer for () {}

/// Scalar outcome of a path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSummary {
    pub running_cost: f64,
    pub terminal_cost: f64,
    pub terminal_mass: usize,
    pub max_population: usize,
}

impl PathSummary {
    pub fn total_cost(&self) -> f64 {
        self.running_cost + self.terminal_cost
    }
}

struct Engine<'a> {
    scn: &'a dyn Scenario,
    pol: &'a Policy,
    cfg: &'a SimConfig,
    dim: usize,
    time: f64,
    particles: Vec<Particle>,
    actions: Vec<Vec<f64>>,
    measure: AtomicMeasure,
    psi_sum: f64,
    running_cost: f64,
    max_population: usize,
    seed: u64,
}

impl<'a> Engine<'a> {
    fn view(&self) -> StepView<'_> {
        StepView {
            time: self.time,
            particles: &self.particles,
            actions: &self.actions,
            measure: &self.measure,
            running_cost: self.running_cost,
        }
    }

    /// Recomputes the empirical measure, the actions and Σψ at the current state.
    fn refresh(&mut self) -> Result<(), SimError> {
        let t = self.time;
        self.measure = AtomicMeasure::from_atoms(self.dim, self.particles.iter().map(|p| (p.position.as_slice(), 1)))
            .expect("positions share one dimension");
        let dims = self.scn.dims();
        let set = self.scn.action_set();
        self.actions.clear();
        let mut psi = 0.0;
        for p in self.particles.iter_mut() {
            let a = evaluate(
                self.pol,
                t,
                &p.position,
                &self.measure,
                &mut p.action,
                dims.action,
                &set,
            )?;
            psi += self.scn.running_cost(t, &p.position, &self.measure, &a);
            self.actions.push(a);
        }
        self.psi_sum = psi;
        debug_assert!(self.admissible());
        Ok(())
    }

    /// Deterministic policies give equal actions at equal positions.
    fn admissible(&self) -> bool {
        if !self.pol.is_deterministic() || self.particles.len() > 64 {
            return true;
        }
        for i in 0..self.particles.len() {
            for j in 0..i {
                if self.particles[i].position == self.particles[j].position && self.actions[i] != self.actions[j] {
                    return false;
                }
            }
        }
        true
    }

    fn euler_substep(&mut self, h: f64, obs: &mut dyn Observer) -> Result<(), SimError> {
        obs.on_substep(&self.view(), h);
        let t = self.time;
        let sqrt_h = h.sqrt();
        let noise_dim = self.scn.dims().noise;
        for (p, a) in self.particles.iter_mut().zip(&self.actions) {
            let b = self.scn.drift(t, &p.position, &self.measure, a);
            let sigma = self.scn.volatility(t, &p.position, &self.measure, a);
            let z = DVector::from_fn(noise_dim, |_, _| p.brownian.standard_normal());
            let dw = sigma * z;
            for k in 0..self.dim {
                p.position[k] += b[k] * h + dw[k] * sqrt_h;
            }
            if p.position.iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonFinite {
                    time: t + h,
                    label: p.label.clone(),
                });
            }
        }
        Ok(())
    }

    /// Advances to `target` and accumulates the running cost by the trapezoid rule.
    fn advance_to(&mut self, target: f64, obs: &mut dyn Observer) -> Result<(), SimError> {
        if self.particles.is_empty() {
            if target > self.time {
                obs.on_substep(&self.view(), target - self.time);
            }
            self.time = target;
            return Ok(());
        }
        while self.time < target {
            let remaining = target - self.time;
            let (h, next) = if remaining <= self.cfg.dt_max {
                (remaining, target)
            } else {
                (self.cfg.dt_max, self.time + self.cfg.dt_max)
            };
            let left = self.psi_sum;
            self.euler_substep(h, obs)?;
            self.time = next;
            self.refresh()?;
            self.running_cost += 0.5 * h * (left + self.psi_sum);
        }
        Ok(())
    }

    /// Resolves one candidate event on particle `idx`.
    fn branch(&mut self, idx: usize, obs: &mut dyn Observer) -> Result<(), SimError> {
        let c_gamma = self.scn.bounds().c_gamma;
        let t = self.time;
        let z = c_gamma * self.particles[idx].mark.uniform();
        let outcome = offspring_from_mark(
            self.scn,
            t,
            &self.particles[idx].position,
            &self.measure,
            &self.actions[idx],
            z,
        )?;
        let parent = self.particles[idx].label.clone();
        let position = self.particles[idx].position.clone();
        let mut offspring = Vec::new();
        if let BranchOutcome::Offspring(k) = outcome {
            let seed = self.seed;
            let children: Vec<Particle> = (0..k as u32)
                .map(|j| {
                    let label = child_label(&parent, j);
                    offspring.push(label.clone());
                    Particle::new(seed, label, position.clone())
                })
                .collect();
            // keep the order stable: first child takes the parent's slot
            let mut children = children.into_iter();
            match children.next() {
                Some(first) => self.particles[idx] = first,
                None => {
                    self.particles.remove(idx);
                }
            }
            self.particles.extend(children);
            self.refresh()?;
            self.max_population = self.max_population.max(self.particles.len());
        }
        let event = Event {
            time: t,
            parent,
            position,
            outcome,
            offspring,
        };
        obs.on_event(&event, &self.view());
        if self.particles.len() > self.cfg.max_population {
            return Err(SimError::Explosion {
                time: t,
                population: self.particles.len(),
                partial: None,
            });
        }
        Ok(())
    }
}

/// Runs one path, reporting to `obs`. This is the engine behind every estimator.
#[allow(clippy::too_many_arguments)]
pub fn run_path(
    scn: &dyn Scenario,
    pol: &Policy,
    t0: f64,
    initial: &AtomicMeasure,
    cfg: &SimConfig,
    seed: u64,
    obs: &mut dyn Observer,
) -> Result<PathSummary, SimError> {
    cfg.validate(t0)?;
    let dim = scn.dims().state;
    if !initial.is_zero() && initial.dim() != dim {
        return Err(SimError::Dimension {
            expected: dim,
            found: initial.dim(),
        });
    }
    let particles: Vec<Particle> = initial
        .unit_atoms()
        .into_iter()
        .enumerate()
        .map(|(i, x)| Particle::new(seed, Label::from_path(vec![i as u32]), x.to_vec()))
        .collect();
    let n0 = particles.len();
    if n0 > cfg.max_population {
        return Err(SimError::Explosion {
            time: t0,
            population: n0,
            partial: None,
        });
    }
    let mut eng = Engine {
        scn,
        pol,
        cfg,
        dim,
        time: t0,
        particles,
        actions: Vec::new(),
        measure: AtomicMeasure::zero(dim),
        psi_sum: 0.0,
        running_cost: 0.0,
        max_population: n0,
        seed,
    };
    eng.refresh()?;

    let horizon = cfg.horizon;
    let c_gamma = scn.bounds().c_gamma;
    let mut clock = label_stream(seed, &Label::root(), StreamKind::Poisson);
    let draw_next = |eng: &Engine, clock: &mut LabelStream| {
        let rate = c_gamma * eng.particles.len() as f64;
        if rate > 0.0 {
            eng.time + clock.exponential(rate)
        } else {
            f64::INFINITY
        }
    };
    let mut next_event = draw_next(&eng, &mut clock);
    let grid = &cfg.output_grid;
    let mut next_grid = 0;
    while next_grid < grid.len() && grid[next_grid] <= t0 {
        obs.on_checkpoint(next_grid, &eng.view());
        next_grid += 1;
    }

    while eng.time < horizon {
        let grid_time = grid.get(next_grid).copied().unwrap_or(f64::INFINITY);
        let target = next_event.min(grid_time).min(horizon);
        eng.advance_to(target, obs)?;
        if next_event == target && next_event < horizon {
            let idx = clock.index(eng.particles.len());
            eng.branch(idx, obs)?;
            next_event = draw_next(&eng, &mut clock);
        }
        while next_grid < grid.len() && grid[next_grid] <= eng.time {
            obs.on_checkpoint(next_grid, &eng.view());
            next_grid += 1;
        }
    }

    let terminal_cost = scn.terminal_cost(&eng.measure);
    Ok(PathSummary {
        running_cost: eng.running_cost,
        terminal_cost,
        terminal_mass: eng.particles.len(),
        max_population: eng.max_population,
    })
}

fn snapshot(view: &StepView) -> PopulationState {
    PopulationState {
        time: view.time,
        particles: view
            .particles
            .iter()
            .map(|p| LabelledPosition {
                label: p.label.clone(),
                position: p.position.clone(),
            })
            .collect(),
    }
}

#[derive(Default)]
struct Recorder {
    grid: Vec<GridState>,
    events: Vec<Event>,
    last: Option<PopulationState>,
    max_population: usize,
}

impl Observer for Recorder {
    fn on_event(&mut self, event: &Event, after: &StepView) {
        self.events.push(event.clone());
        self.max_population = self.max_population.max(after.particles.len());
        self.last = Some(snapshot(after));
    }

    fn on_checkpoint(&mut self, _index: usize, view: &StepView) {
        self.max_population = self.max_population.max(view.particles.len());
        self.grid.push(GridState {
            state: snapshot(view),
            running_cost: view.running_cost,
        });
    }
}

/// Simulates one path and records grid states, events and costs.
pub fn simulate_path(
    scn: &dyn Scenario,
    pol: &Policy,
    t0: f64,
    initial: &AtomicMeasure,
    cfg: &SimConfig,
    seed: u64,
) -> Result<PathRecord, SimError> {
    let mut rec = Recorder {
        max_population: initial.mass() as usize,
        ..Recorder::default()
    };
    // the terminal state is captured through a checkpoint at the horizon
    let mut with_end = cfg.clone();
    with_end.output_grid.push(cfg.horizon);
    let user_points = cfg.output_grid.len();
    let result = run_path(scn, pol, t0, initial, &with_end, seed, &mut rec);
    let build = |rec: Recorder, summary: Option<&PathSummary>| {
        let Recorder {
            mut grid,
            events,
            last,
            max_population,
        } = rec;
        let terminal = if summary.is_some() {
            grid.pop().expect("horizon checkpoint").state
        } else {
            last.or_else(|| grid.last().map(|g| g.state.clone()))
                .unwrap_or(PopulationState {
                    time: t0,
                    particles: Vec::new(),
                })
        };
        grid.truncate(user_points);
        PathRecord {
            initial_time: t0,
            initial: initial.clone(),
            grid,
            running_cost_integral: summary.map_or(f64::NAN, |s| s.running_cost),
            terminal_cost: summary.map_or(f64::NAN, |s| s.terminal_cost),
            events,
            terminal,
            max_population,
            seed,
            dt_max: cfg.dt_max,
        }
    };
    match result {
        Ok(summary) => Ok(build(rec, Some(&summary))),
        Err(SimError::Explosion { time, population, .. }) => Err(SimError::Explosion {
            time,
            population,
            partial: Some(Box::new(build(rec, None))),
        }),
        Err(e) => Err(e),
    }
}

/// One explicit Euler–Maruyama step of every particle with frozen measure and actions.
pub fn euler_step(
    scn: &dyn Scenario,
    pol: &Policy,
    state: &PopulationState,
    h: f64,
    seed: u64,
) -> Result<PopulationState, SimError> {
    if !(h > 0.0) {
        return Err(SimError::Config(format!("step must be positive, got {h}")));
    }
    let dim = scn.dims().state;
    let cfg = SimConfig::new(h, state.time + h);
    let mut eng = Engine {
        scn,
        pol,
        cfg: &cfg,
        dim,
        time: state.time,
        particles: state
            .particles
            .iter()
            .map(|p| Particle::new(seed, p.label.clone(), p.position.clone()))
            .collect(),
        actions: Vec::new(),
        measure: AtomicMeasure::zero(dim),
        psi_sum: 0.0,
        running_cost: 0.0,
        max_population: state.particles.len(),
        seed,
    };
    eng.refresh()?;
    eng.euler_substep(h, &mut ())?;
    eng.time += h;
    Ok(snapshot(&eng.view()))
}

/// Grid states as CSV rows `time,label,x_1,…,x_d`.
pub fn grid_to_csv(record: &PathRecord) -> String {
    let mut out = String::from("time,label");
    for k in 1..=record.initial.dim() {
        out.push_str(&format!(",x{k}"));
    }
    out.push('\n');
    for g in &record.grid {
        for p in &g.state.particles {
            out.push_str(&format!("{:.16e},{}", g.state.time, p.label));
            for v in &p.position {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::embed;
    use crate::scenario::{Dims, GenericScenario};
    use std::sync::Arc;

    fn dims() -> Dims {
        Dims {
            state: 1,
            noise: 1,
            action: 1,
        }
    }

    #[test]
    fn inert_scenario_keeps_initial_state() {
        let scn = GenericScenario::inert("inert", dims());
        let l0 = embed(1, &[[0.5], [-1.0], [0.5]]).unwrap();
        let cfg = SimConfig::new(0.1, 1.0).with_grid(vec![0.0, 0.5, 1.0]);
        let rec = simulate_path(&scn, &Policy::zero(1), 0.0, &l0, &cfg, 3).unwrap();
        assert!(rec.events.is_empty());
        assert_eq!(rec.terminal.measure(1), l0);
        assert_eq!(rec.grid.len(), 3);
        assert!(rec.grid.iter().all(|g| g.state.measure(1) == l0));
        assert_eq!(rec.terminal.time, 1.0);
        let labels: Vec<String> = rec.terminal.particles.iter().map(|p| p.label.to_string()).collect();
        assert_eq!(labels, ["0", "1", "2"]);
    }

    #[test]
    fn trapezoid_running_cost() {
        let mut scn = GenericScenario::inert("cost", dims());
        scn.running_cost = Arc::new(|t, _, _, _| t);
        let l0 = embed(1, &[[0.0], [1.0]]).unwrap();
        let cfg = SimConfig::new(0.1, 1.0);
        let rec = simulate_path(&scn, &Policy::zero(1), 0.0, &l0, &cfg, 1).unwrap();
        // trapezoid is exact for linear integrands: 2 ∫₀¹ t dt
        assert!((rec.running_cost_integral - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_drift_shift() {
        let scn = GenericScenario::inert("drift", dims()).with_constant_motion(vec![1.0], 0.0);
        let state = PopulationState {
            time: 0.0,
            particles: vec![LabelledPosition {
                label: Label::from_path(vec![0]),
                position: vec![2.0],
            }],
        };
        let next = euler_step(&scn, &Policy::zero(1), &state, 0.5, 1).unwrap();
        assert_eq!(next.particles[0].position, vec![2.5]);
        assert_eq!(next.time, 0.5);
        let still = euler_step(&GenericScenario::inert("x", dims()), &Policy::zero(1), &state, 0.5, 1).unwrap();
        assert_eq!(still.particles, state.particles);
        assert!(euler_step(&scn, &Policy::zero(1), &state, 0.0, 1).is_err());
    }

    #[test]
    fn euler_increment_variance() {
        let scn = GenericScenario::inert("bm", dims()).with_constant_motion(vec![0.0], 1.0);
        let n = 10_000;
        let state = PopulationState {
            time: 0.0,
            particles: (0..n)
                .map(|i| LabelledPosition {
                    label: Label::from_path(vec![i]),
                    position: vec![0.0],
                })
                .collect(),
        };
        let h = 0.3;
        let next = euler_step(&scn, &Policy::zero(1), &state, h, 17).unwrap();
        let xs: Vec<f64> = next.particles.iter().map(|p| p.position[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var / h - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn same_seed_same_record() {
        let scn = GenericScenario::inert("bb", dims())
            .with_constant_motion(vec![0.1], 0.7)
            .with_constant_branching(1.5, vec![0.3, 0.2, 0.5]);
        let l0 = embed(1, &[[0.0], [1.0]]).unwrap();
        let cfg = SimConfig::new(0.01, 1.0).with_grid(vec![0.25, 0.5]);
        let pol = Policy::feedback(|_, x, _| vec![-x[0]]);
        let a = simulate_path(&scn, &pol, 0.0, &l0, &cfg, 42).unwrap();
        let b = simulate_path(&scn, &pol, 0.0, &l0, &cfg, 42).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = simulate_path(&scn, &pol, 0.0, &l0, &cfg, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn events_respect_mass_and_genealogy() {
        let scn = GenericScenario::inert("mixed", dims())
            .with_constant_motion(vec![0.0], 1.0)
            .with_constant_branching(1.0, vec![0.3, 0.2, 0.5]);
        let mut scn = scn;
        // a larger clock than the true rate forces thinned candidates
        scn.bounds.c_gamma = 2.0;
        let l0 = embed(1, &[[0.0]]).unwrap();
        let cfg = SimConfig::new(0.01, 3.0);
        for seed in 0..20 {
            let rec = simulate_path(&scn, &Policy::zero(1), 0.0, &l0, &cfg, seed).unwrap();
            let mut mass = 1i64;
            let mut seen = std::collections::HashSet::new();
            seen.insert(Label::from_path(vec![0]));
            for e in &rec.events {
                match e.outcome {
                    BranchOutcome::Thinned => assert!(e.offspring.is_empty()),
                    BranchOutcome::Offspring(k) => {
                        assert_eq!(e.offspring.len(), k);
                        mass += k as i64 - 1;
                        for (j, c) in e.offspring.iter().enumerate() {
                            assert_eq!(c, &child_label(&e.parent, j as u32));
                            assert!(seen.insert(c.clone()), "label {c} reused");
                        }
                    }
                }
            }
            assert_eq!(mass as usize, rec.terminal.mass());
            let alive: Vec<Label> = rec.terminal.particles.iter().map(|p| p.label.clone()).collect();
            assert!(crate::genealogy::LabelSet::new(alive.clone()).is_ok());
            assert_eq!(
                crate::genealogy::LabelSet::new(alive).unwrap().len(),
                rec.terminal.mass()
            );
        }
    }

    struct BirthCheck {
        ok: bool,
        births: usize,
    }

    impl Observer for BirthCheck {
        fn on_event(&mut self, event: &Event, after: &StepView) {
            for child in &event.offspring {
                let p = after.particles.iter().find(|p| &p.label == child).expect("child alive");
                self.ok &= p.position == event.position;
                self.births += 1;
            }
            self.ok &=
                after.particles.iter().all(|p| p.label != event.parent) || event.outcome == BranchOutcome::Thinned;
        }
    }

    #[test]
    fn offspring_start_where_parent_died() {
        let scn = GenericScenario::inert("bb", dims())
            .with_constant_motion(vec![0.0], 1.0)
            .with_constant_branching(2.0, vec![0.0, 0.0, 1.0]);
        let mut obs = BirthCheck { ok: true, births: 0 };
        let cfg = SimConfig::new(0.01, 1.0);
        run_path(
            &scn,
            &Policy::zero(1),
            0.0,
            &embed(1, &[[0.0]]).unwrap(),
            &cfg,
            5,
            &mut obs,
        )
        .unwrap();
        assert!(obs.ok);
        assert!(obs.births > 0);
    }

    #[test]
    fn explosion_carries_partial_record() {
        let scn = GenericScenario::inert("boom", dims()).with_constant_branching(20.0, vec![0.0, 0.0, 1.0]);
        let cfg = SimConfig {
            max_population: 10,
            ..SimConfig::new(0.01, 5.0)
        };
        match simulate_path(&scn, &Policy::zero(1), 0.0, &embed(1, &[[0.0]]).unwrap(), &cfg, 1) {
            Err(SimError::Explosion {
                population, partial, ..
            }) => {
                assert_eq!(population, 11);
                let partial = partial.unwrap();
                assert_eq!(partial.terminal.mass(), 11);
                assert_eq!(partial.max_population, 11);
            }
            other => panic!("expected explosion, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_positions_are_reported() {
        let mut scn = GenericScenario::inert("blowup", dims());
        scn.drift = Arc::new(|_, x, _, _| vec![1e308 * (1.0 + x[0].abs())]);
        let cfg = SimConfig::new(0.5, 2.0);
        let err = simulate_path(&scn, &Policy::zero(1), 0.0, &embed(1, &[[1.0]]).unwrap(), &cfg, 1).unwrap_err();
        assert!(matches!(err, SimError::NonFinite { .. }));
    }

    #[test]
    fn extinct_population_runs_to_horizon() {
        let mut scn = GenericScenario::inert("death", dims()).with_constant_branching(50.0, vec![1.0]);
        scn.terminal_cost = Arc::new(|l| 1.0 + l.mass() as f64);
        let cfg = SimConfig::new(0.01, 1.0).with_grid(vec![0.5, 1.0]);
        let rec = simulate_path(&scn, &Policy::zero(1), 0.0, &embed(1, &[[0.0]]).unwrap(), &cfg, 2).unwrap();
        assert_eq!(rec.terminal.mass(), 0);
        assert_eq!(rec.terminal.time, 1.0);
        assert_eq!(rec.terminal_cost, 1.0);
        assert_eq!(rec.grid.len(), 2);
    }

    #[test]
    fn config_validation() {
        let scn = GenericScenario::inert("x", dims());
        let l0 = embed(1, &[[0.0]]).unwrap();
        for cfg in [
            SimConfig::new(0.0, 1.0),
            SimConfig::new(0.1, -1.0),
            SimConfig::new(0.1, 1.0).with_grid(vec![0.5, 0.2]),
            SimConfig::new(0.1, 1.0).with_grid(vec![2.0]),
        ] {
            assert!(matches!(
                simulate_path(&scn, &Policy::zero(1), 0.0, &l0, &cfg, 1),
                Err(SimError::Config(_))
            ));
        }
        let l2 = embed(2, &[[0.0, 1.0]]).unwrap();
        assert!(matches!(
            simulate_path(&scn, &Policy::zero(1), 0.0, &l2, &SimConfig::new(0.1, 1.0), 1),
            Err(SimError::Dimension { .. })
        ));
    }

    #[test]
    fn csv_lists_grid_particles() {
        let scn = GenericScenario::inert("x", dims());
        let l0 = embed(1, &[[0.0], [1.0]]).unwrap();
        let cfg = SimConfig::new(0.1, 1.0).with_grid(vec![0.0, 1.0]);
        let rec = simulate_path(&scn, &Policy::zero(1), 0.0, &l0, &cfg, 1).unwrap();
        let csv = grid_to_csv(&rec);
        assert!(csv.starts_with("time,label,x1\n"));
        assert_eq!(csv.lines().count(), 5);
    }
}
