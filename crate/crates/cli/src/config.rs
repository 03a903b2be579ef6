//! Experiment files: schema, loading and resolution of paths and defaults.

use std::path::{Path, PathBuf};

use branchlab_core::estimate::{Functional, OuterFn, TestFunction, VerifyMode, DEFAULT_Z_THRESHOLD};
use branchlab_core::scenario::{ActionSet, Bounds};
use branchlab_core::simulate::DEFAULT_MAX_POPULATION;
use branchlab_core::{KineticGrid, PolicyName};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable that overrides the workspace root of every experiment.
pub const ROOT_ENV: &str = "BRANCHLAB_ROOT";

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Directory that relative output paths are resolved against.
    #[serde(default)]
    pub workspace_root: Option<PathBuf>,
    /// Scenario definition in a separate file, relative to this file.
    #[serde(default, skip_serializing)]
    pub scenario_file: Option<PathBuf>,
    /// Inline scenario definition; parsed separately according to its `kind`.
    #[serde(default, skip_serializing)]
    pub scenario: Option<toml::Table>,
    #[serde(default = "default_policy")]
    pub policy: PolicyName,
    pub initial: InitialConfig,
    pub sim: SimSection,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub riccati: RiccatiConfig,
    #[serde(default)]
    pub kinetic_grid: KineticGridConfig,
    #[serde(default)]
    pub martingale: MartingaleConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

fn default_replications() -> usize {
    10_000
}

fn default_policy() -> PolicyName {
    PolicyName::Zero
}

fn default_threshold() -> f64 {
    DEFAULT_Z_THRESHOLD
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default)]
    pub t: f64,
    pub atoms: Vec<AtomConfig>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub position: Vec<f64>,
    #[serde(default = "one")]
    pub multiplicity: u64,
}

fn one() -> u64 {
    1
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
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

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_output_dir")]
    pub dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_output_dir(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RiccatiConfig {
    #[serde(default = "default_riccati_steps")]
    pub steps: usize,
}

fn default_riccati_steps() -> usize {
    2000
}

impl Default for RiccatiConfig {
    fn default() -> Self {
        Self {
            steps: default_riccati_steps(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct KineticGridConfig {
    #[serde(default = "grid_x_min")]
    pub x_min: f64,
    #[serde(default = "grid_x_max")]
    pub x_max: f64,
    #[serde(default = "grid_nodes")]
    pub nodes: usize,
    #[serde(default = "grid_time_steps")]
    pub time_steps: usize,
    #[serde(default = "grid_stored_slices")]
    pub stored_slices: usize,
}

fn grid_x_min() -> f64 {
    KineticGrid::default().x_min
}
fn grid_x_max() -> f64 {
    KineticGrid::default().x_max
}
fn grid_nodes() -> usize {
    KineticGrid::default().nodes
}
fn grid_time_steps() -> usize {
    KineticGrid::default().time_steps
}
fn grid_stored_slices() -> usize {
    KineticGrid::default().stored_slices
}

impl Default for KineticGridConfig {
    fn default() -> Self {
        let g = KineticGrid::default();
        Self {
            x_min: g.x_min,
            x_max: g.x_max,
            nodes: g.nodes,
            time_steps: g.time_steps,
            stored_slices: g.stored_slices,
        }
    }
}

impl KineticGridConfig {
    pub fn grid(&self) -> KineticGrid {
        KineticGrid {
            x_min: self.x_min,
            x_max: self.x_max,
            nodes: self.nodes,
            time_steps: self.time_steps,
            stored_slices: self.stored_slices,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleConfig {
    #[serde(default = "default_functionals")]
    pub functionals: Vec<Functional>,
    /// Defaults to ten equal intervals between the initial time and the horizon.
    #[serde(default)]
    pub checkpoints: Option<Vec<f64>>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_functionals() -> Vec<Functional> {
    vec![
        Functional {
            outer: OuterFn::Identity,
            test: TestFunction::One,
        },
        Functional {
            outer: OuterFn::Square,
            test: TestFunction::One,
        },
    ]
}

impl Default for MartingaleConfig {
    fn default() -> Self {
        Self {
            functionals: default_functionals(),
            checkpoints: None,
            threshold: DEFAULT_Z_THRESHOLD,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ValueFieldName {
    Zero,
    Lq,
    Kinetic,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_value_field")]
    pub value_field: ValueFieldName,
    #[serde(default = "default_mode")]
    pub mode: VerifyMode,
    #[serde(default)]
    pub checkpoints: Option<Vec<f64>>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_value_field() -> ValueFieldName {
    ValueFieldName::Zero
}

fn default_mode() -> VerifyMode {
    VerifyMode::Martingale
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            value_field: default_value_field(),
            mode: default_mode(),
            checkpoints: None,
            threshold: DEFAULT_Z_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default = "default_policy_a")]
    pub policy_a: PolicyName,
    #[serde(default = "default_policy")]
    pub policy_b: PolicyName,
    /// Standard errors the difference must exceed for a significant verdict.
    #[serde(default = "default_significance")]
    pub significance: f64,
}

fn default_policy_a() -> PolicyName {
    PolicyName::LqOptimal
}

fn default_significance() -> f64 {
    3.0
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            policy_a: default_policy_a(),
            policy_b: default_policy(),
            significance: default_significance(),
        }
    }
}

// ---------------------------------------------------------------------------
// Scenario definitions

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScenarioConfig {
    Lq(LqConfig),
    Kinetic(KineticConfig),
    CustomTabular(TabularConfig),
}

/// A scalar coefficient, constant or piecewise linear in time.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ScalarTableConfig {
    Constant(f64),
    Knots { knots: Vec<f64>, values: Vec<f64> },
}

/// A matrix coefficient given row by row, as a multiple of the identity, or
/// piecewise linear in time.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum MatrixTableConfig {
    Identity(f64),
    Constant(Vec<Vec<f64>>),
    Knots {
        knots: Vec<f64>,
        values: Vec<Vec<Vec<f64>>>,
    },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum MatrixConfig {
    Identity(f64),
    Rows(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LqConfig {
    #[serde(default = "one_usize")]
    pub state_dim: usize,
    #[serde(default = "one_usize")]
    pub action_dim: usize,
    pub b: MatrixTableConfig,
    pub b_bar: MatrixTableConfig,
    pub sigma: ScalarTableConfig,
    pub gamma: ScalarTableConfig,
    pub offspring: Vec<f64>,
    pub c: MatrixTableConfig,
    #[serde(default = "zero_scalar")]
    pub c_mass: ScalarTableConfig,
    pub c_bar: MatrixTableConfig,
    pub h: MatrixConfig,
    #[serde(default)]
    pub h_mass: f64,
}

fn one_usize() -> usize {
    1
}

fn zero_scalar() -> ScalarTableConfig {
    ScalarTableConfig::Constant(0.0)
}

fn zero_matrix() -> MatrixTableConfig {
    MatrixTableConfig::Identity(0.0)
}

/// Affine uncontrolled drift b(x) = slope·x + offset, applied componentwise.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AffineDrift {
    #[serde(default)]
    pub slope: f64,
    #[serde(default)]
    pub offset: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TerminalConfig {
    /// G(x) = scale·|x|²
    Quadratic { scale: f64 },
    /// G(x) = height·exp(−|x|²/(2 width²))
    Gaussian { height: f64, width: f64 },
    /// G(x) = amplitude·cos(frequency·x₁)
    Cosine { amplitude: f64, frequency: f64 },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct KineticConfig {
    #[serde(default = "one_usize")]
    pub dim: usize,
    #[serde(default)]
    pub drift: AffineDrift,
    pub branch_rate: f64,
    pub offspring: Vec<f64>,
    pub terminal: TerminalConfig,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FilippovConfig {
    pub convex: bool,
    pub justification: String,
}

/// Time-tabulated affine dynamics and quadratic costs with author-declared bounds.
///
/// Drift B_t x + B̄_t a + β, volatility Σ_t, constant-law branching at rate γ_t,
/// running cost xᵀC_t x + aᵀC̄_t a + c_t<1,λ>, terminal cost ∫xᵀHx dλ + h<1,λ>².
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TabularConfig {
    #[serde(default = "one_usize")]
    pub state_dim: usize,
    #[serde(default = "one_usize")]
    pub noise_dim: usize,
    #[serde(default = "one_usize")]
    pub action_dim: usize,
    #[serde(default = "zero_matrix")]
    pub drift_matrix: MatrixTableConfig,
    #[serde(default = "zero_matrix")]
    pub control_matrix: MatrixTableConfig,
    #[serde(default)]
    pub drift_offset: Option<Vec<f64>>,
    #[serde(default = "zero_matrix")]
    pub volatility: MatrixTableConfig,
    #[serde(default = "zero_scalar")]
    pub branch_rate: ScalarTableConfig,
    #[serde(default = "default_offspring")]
    pub offspring: Vec<f64>,
    #[serde(default = "zero_matrix")]
    pub state_cost: MatrixTableConfig,
    #[serde(default = "zero_matrix")]
    pub action_cost: MatrixTableConfig,
    #[serde(default = "zero_scalar")]
    pub mass_cost: ScalarTableConfig,
    #[serde(default = "zero_terminal")]
    pub terminal_state_cost: MatrixConfig,
    #[serde(default)]
    pub terminal_mass_cost: f64,
    pub bounds: Bounds,
    #[serde(default)]
    pub action_set: Option<ActionSet>,
    #[serde(default)]
    pub filippov: Option<FilippovConfig>,
}

fn default_offspring() -> Vec<f64> {
    vec![0.0, 1.0]
}

fn zero_terminal() -> MatrixConfig {
    MatrixConfig::Identity(0.0)
}

// ---------------------------------------------------------------------------
// Loading

/// A parsed experiment with its paths resolved.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub scenario: ScenarioConfig,
    pub workspace_root: PathBuf,
}

impl LoadedConfig {
    pub fn output_dir(&self) -> PathBuf {
        self.workspace_root.join(&self.config.output.dir)
    }

    /// The configuration as embedded in artifacts: defaults filled in and the
    /// scenario inlined.
    pub fn resolved(&self) -> serde_json::Value {
        let mut c = self.config.clone();
        c.workspace_root = None;
        let mut value = serde_json::to_value(&c).expect("configuration serializes");
        value["scenario"] = serde_json::to_value(&self.scenario).expect("scenario serializes");
        value
    }

    pub fn checkpoints(&self, given: &Option<Vec<f64>>) -> Vec<f64> {
        given.clone().unwrap_or_else(|| {
            let (t0, t1) = (self.config.initial.t, self.config.sim.horizon);
            (0..=10).map(|k| t0 + (t1 - t0) * k as f64 / 10.0).collect()
        })
    }
}

fn path_error<E: std::fmt::Display>(e: serde_path_to_error::Error<E>, path: &Path, prefix: &str) -> CliError {
    let field = e.path().to_string();
    let field = match (prefix.is_empty(), field.as_str()) {
        (true, _) => field,
        (false, ".") => prefix.to_string(),
        (false, _) => format!("{prefix}.{field}"),
    };
    CliError::Config(format!("{}: at `{field}`: {}", path.display(), e.inner()))
}

fn parse_experiment(text: &str, path: &Path) -> Result<ExperimentConfig, CliError> {
    let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_path_to_error::deserialize(de).map_err(|e| path_error(e, path, ""))
}

fn variant<T: DeserializeOwned>(table: toml::Table, path: &Path) -> Result<T, CliError> {
    serde_path_to_error::deserialize(table).map_err(|e| path_error(e, path, "scenario"))
}

fn parse_scenario(mut table: toml::Table, path: &Path) -> Result<ScenarioConfig, CliError> {
    let kind = match table.remove("kind") {
        Some(toml::Value::String(k)) => k,
        Some(_) => {
            return Err(CliError::Config(format!(
                "{}: at `scenario.kind`: expected a string",
                path.display()
            )))
        }
        None => {
            return Err(CliError::Config(format!(
                "{}: at `scenario`: missing field `kind`",
                path.display()
            )))
        }
    };
    match kind.as_str() {
        "lq" => variant(table, path).map(ScenarioConfig::Lq),
        "kinetic" => variant(table, path).map(ScenarioConfig::Kinetic),
        "custom-tabular" => variant(table, path).map(ScenarioConfig::CustomTabular),
        other => Err(CliError::Config(format!(
            "{}: at `scenario.kind`: unknown scenario kind `{other}`, expected one of lq, kinetic, custom-tabular",
            path.display()
        ))),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

/// Reads an experiment file, resolving the scenario file and the workspace root
/// (environment override, then the file's `workspace_root`, then its directory).
pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = read(path)?;
    let config = parse_experiment(&text, path)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let scenario = match (&config.scenario, &config.scenario_file) {
        (Some(table), None) => parse_scenario(table.clone(), path)?,
        (None, Some(file)) => {
            let file = dir.join(file);
            let text = read(&file)?;
            let table: toml::Table =
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", file.display())))?;
            parse_scenario(table, &file)?
        }
        (Some(_), Some(_)) => {
            return Err(CliError::Config(format!(
                "{}: give either `scenario` or `scenario_file`, not both",
                path.display()
            )))
        }
        (None, None) => {
            return Err(CliError::Config(format!(
                "{}: missing `scenario` or `scenario_file`",
                path.display()
            )))
        }
    };
    let workspace_root = match std::env::var_os(ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root),
        _ => match &config.workspace_root {
            Some(root) => dir.join(root),
            None => dir,
        },
    };
    let mut loaded = LoadedConfig {
        config,
        scenario,
        workspace_root,
    };
    let m = loaded.checkpoints(&loaded.config.martingale.checkpoints);
    let v = loaded.checkpoints(&loaded.config.verify.checkpoints);
    loaded.config.martingale.checkpoints = Some(m);
    loaded.config.verify.checkpoints = Some(v);
    Ok(loaded)
}
