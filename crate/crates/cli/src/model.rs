//! Turns scenario definitions into scenarios.

use std::sync::Arc;

use branchlab_core::scenario::{
    builtin_kinetic, factorial_moments, validate_probs, FilippovNote, GenericScenario, KineticParts, KineticScenario,
    LqCoefficients, LqScenario, SpaceFn,
};
use branchlab_core::table::TableError;
use branchlab_core::{builtin_lq, Dims, MatrixTable, ScalarTable, Scenario};
use nalgebra::{DMatrix, DVector};

use crate::config::{
    KineticConfig, LqConfig, MatrixConfig, MatrixTableConfig, ScalarTableConfig, ScenarioConfig, TabularConfig,
    TerminalConfig,
};
use crate::CliError;

/// A built scenario together with its typed form when a solver needs it.
#[derive(Clone)]
pub struct Model {
    pub scenario: Arc<dyn Scenario>,
    pub lq: Option<LqScenario>,
    pub kinetic: Option<KineticScenario>,
}

fn table_error(name: &str) -> impl Fn(TableError) -> CliError + '_ {
    move |e| CliError::Config(format!("scenario.{name}: {e}"))
}

fn scalar_table(cfg: &ScalarTableConfig, name: &str) -> Result<ScalarTable, CliError> {
    match cfg {
        ScalarTableConfig::Constant(v) => Ok(ScalarTable::constant(*v)),
        ScalarTableConfig::Knots { knots, values } => {
            ScalarTable::new(knots.clone(), values.clone()).map_err(table_error(name))
        }
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], shape: (usize, usize), name: &str) -> Result<DMatrix<f64>, CliError> {
    let (r, c) = shape;
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        let found_cols = rows.first().map_or(0, Vec::len);
        return Err(CliError::Config(format!(
            "scenario.{name}: expected a {r}x{c} matrix, found {}x{found_cols}",
            rows.len()
        )));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn scaled_identity(v: f64, (r, c): (usize, usize)) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |i, j| if i == j { v } else { 0.0 })
}

fn matrix(cfg: &MatrixConfig, shape: (usize, usize), name: &str) -> Result<DMatrix<f64>, CliError> {
    match cfg {
        MatrixConfig::Identity(v) => Ok(scaled_identity(*v, shape)),
        MatrixConfig::Rows(rows) => rows_to_matrix(rows, shape, name),
    }
}

fn matrix_table(cfg: &MatrixTableConfig, shape: (usize, usize), name: &str) -> Result<MatrixTable, CliError> {
    match cfg {
        MatrixTableConfig::Identity(v) => Ok(MatrixTable::constant(scaled_identity(*v, shape))),
        MatrixTableConfig::Constant(rows) => Ok(MatrixTable::constant(rows_to_matrix(rows, shape, name)?)),
        MatrixTableConfig::Knots { knots, values } => {
            let values = values
                .iter()
                .map(|rows| rows_to_matrix(rows, shape, name))
                .collect::<Result<Vec<_>, _>>()?;
            MatrixTable::new(knots.clone(), values).map_err(table_error(name))
        }
    }
}

fn probabilities(probs: &[f64]) -> Result<(), CliError> {
    validate_probs(probs).map_err(|e| CliError::Config(format!("scenario.offspring: {e}")))
}

pub fn build(cfg: &ScenarioConfig) -> Result<Model, CliError> {
    match cfg {
        ScenarioConfig::Lq(c) => {
            let scn = builtin_lq(lq_coefficients(c)?).map_err(|e| CliError::Config(format!("scenario: {e}")))?;
            Ok(Model {
                scenario: Arc::new(scn.clone()),
                lq: Some(scn),
                kinetic: None,
            })
        }
        ScenarioConfig::Kinetic(c) => {
            let scn = kinetic(c)?;
            Ok(Model {
                scenario: Arc::new(scn.clone()),
                lq: None,
                kinetic: Some(scn),
            })
        }
        ScenarioConfig::CustomTabular(c) => Ok(Model {
            scenario: Arc::new(tabular(c)?),
            lq: None,
            kinetic: None,
        }),
    }
}

fn lq_coefficients(c: &LqConfig) -> Result<LqCoefficients, CliError> {
    let (d, q) = (c.state_dim, c.action_dim);
    probabilities(&c.offspring)?;
    Ok(LqCoefficients {
        state_dim: d,
        action_dim: q,
        b: matrix_table(&c.b, (d, d), "b")?,
        b_bar: matrix_table(&c.b_bar, (d, q), "b_bar")?,
        sigma: scalar_table(&c.sigma, "sigma")?,
        gamma: scalar_table(&c.gamma, "gamma")?,
        offspring: c.offspring.clone(),
        c: matrix_table(&c.c, (d, d), "c")?,
        c_mass: scalar_table(&c.c_mass, "c_mass")?,
        c_bar: matrix_table(&c.c_bar, (q, q), "c_bar")?,
        h: matrix(&c.h, (d, d), "h")?,
        h_mass: c.h_mass,
    })
}

fn kinetic(c: &KineticConfig) -> Result<KineticScenario, CliError> {
    probabilities(&c.offspring)?;
    if c.branch_rate < 0.0 {
        return Err(CliError::Config("scenario.branch_rate: must be non-negative".into()));
    }
    let (slope, offset) = (c.drift.slope, c.drift.offset);
    let probs = c.offspring.clone();
    let (mean, factorial) = factorial_moments(&probs);
    let (terminal, terminal_bound): (SpaceFn, f64) = match c.terminal {
        TerminalConfig::Quadratic { scale } => (
            Arc::new(move |x| scale * x.iter().map(|v| v * v).sum::<f64>()),
            scale.abs(),
        ),
        TerminalConfig::Gaussian { height, width } => {
            if !(width > 0.0) {
                return Err(CliError::Config("scenario.terminal.width: must be positive".into()));
            }
            let w2 = 2.0 * width * width;
            (
                Arc::new(move |x| height * (-x.iter().map(|v| v * v).sum::<f64>() / w2).exp()),
                height.abs(),
            )
        }
        TerminalConfig::Cosine { amplitude, frequency } => {
            (Arc::new(move |x| amplitude * (frequency * x[0]).cos()), amplitude.abs())
        }
    };
    let rate = c.branch_rate;
    Ok(builtin_kinetic(KineticParts {
        dim: c.dim,
        drift: Arc::new(move |_, x| x.iter().map(|v| slope * v + offset).collect()),
        drift_bound: slope.abs() + offset.abs(),
        branch_rate: Arc::new(move |_, _| rate),
        rate_bound: rate,
        offspring: Arc::new(move |_, _| probs.clone()),
        offspring_bounds: (mean, factorial),
        terminal,
        terminal_bound,
    }))
}

fn quadratic_form(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let v = DVector::from_column_slice(v);
    v.dot(&(m * &v))
}

fn tabular(c: &TabularConfig) -> Result<GenericScenario, CliError> {
    let (d, n, q) = (c.state_dim, c.noise_dim, c.action_dim);
    probabilities(&c.offspring)?;
    let b = matrix_table(&c.drift_matrix, (d, d), "drift_matrix")?;
    let b_bar = matrix_table(&c.control_matrix, (d, q), "control_matrix")?;
    let beta = DVector::from_vec(c.drift_offset.clone().unwrap_or_else(|| vec![0.0; d]));
    if beta.len() != d {
        return Err(CliError::Config(format!(
            "scenario.drift_offset: expected {d} components, found {}",
            beta.len()
        )));
    }
    let sigma = matrix_table(&c.volatility, (d, n), "volatility")?;
    let gamma = scalar_table(&c.branch_rate, "branch_rate")?;
    if gamma.min() < 0.0 {
        return Err(CliError::Config("scenario.branch_rate: must be non-negative".into()));
    }
    let state_cost = matrix_table(&c.state_cost, (d, d), "state_cost")?;
    let action_cost = matrix_table(&c.action_cost, (q, q), "action_cost")?;
    let mass_cost = scalar_table(&c.mass_cost, "mass_cost")?;
    let h = matrix(&c.terminal_state_cost, (d, d), "terminal_state_cost")?;
    let h_mass = c.terminal_mass_cost;

    let mut scn = GenericScenario::inert(
        "custom-tabular",
        Dims {
            state: d,
            noise: n,
            action: q,
        },
    );
    scn.drift = Arc::new(move |t, x, _, a| {
        let y = b.at(t) * DVector::from_column_slice(x) + b_bar.at(t) * DVector::from_column_slice(a) + &beta;
        y.as_slice().to_vec()
    });
    scn.volatility = Arc::new(move |t, _, _, _| sigma.at(t));
    let probs = c.offspring.clone();
    scn.branch_rate = Arc::new(move |t, _, _, _| gamma.at(t));
    scn.offspring = Arc::new(move |_, _, _, _| probs.clone());
    scn.running_cost = Arc::new(move |t, x, l, a| {
        quadratic_form(&state_cost.at(t), x) + quadratic_form(&action_cost.at(t), a) + mass_cost.at(t) * l.mass() as f64
    });
    scn.terminal_cost = Arc::new(move |l| {
        let n = l.mass() as f64;
        l.integrate(|x| quadratic_form(&h, x)) + h_mass * n * n
    });
    scn.bounds = c.bounds.clone();
    if let Some(set) = &c.action_set {
        scn.action_set = set.clone();
    }
    scn.filippov = match &c.filippov {
        Some(f) => FilippovNote {
            convex: f.convex,
            justification: f.justification.clone(),
        },
        None => FilippovNote {
            convex: true,
            justification: "drift is affine in a, volatility and branching do not depend on a, \
                            and the running cost is quadratic in a"
                .into(),
        },
    };
    Ok(scn)
}
