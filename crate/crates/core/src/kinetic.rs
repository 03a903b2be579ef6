//! Kinetic-energy model in one dimension: finite-difference solution of
//!
//! ```text
//! ∂_t h + b Dh − ½|Dh|² + ½Δh + φh = 0,   h(T, ·) = G,
//! ```
//!
//! the feedback a = −Dh, and a Monte Carlo Feynman–Kac oracle for φ ≡ 0, b ≡ 0.
//!
//! Time is reversed (τ = T − t). Each step treats diffusion implicitly and the
//! drift, gradient-square and potential terms explicitly from the previous
//! slice, with homogeneous Neumann conditions through ghost nodes.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimate::{mean_and_se, ValueField};
use crate::genealogy::Label;
use crate::measure::AtomicMeasure;
use crate::policy::Policy;
use crate::rng::{label_stream, StreamKind};
use crate::scenario::KineticScenario;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KineticError {
    #[error("the grid solver is one-dimensional, scenario has dimension {0}")]
    Dimension(usize),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("explicit terms violate the stability bound at t = {t} (Courant number {courant})")]
    Cfl { t: f64, courant: f64 },
    #[error("solution became non-finite at t = {t}")]
    NonFinite { t: f64 },
}

/// Space-time grid of the HJB solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KineticGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub nodes: usize,
    pub time_steps: usize,
    /// Number of stored time intervals; slices are kept at `stored_slices + 1` times.
    pub stored_slices: usize,
}

impl Default for KineticGrid {
    fn default() -> Self {
        Self {
            x_min: -6.0,
            x_max: 6.0,
            nodes: 241,
            time_steps: 20_000,
            stored_slices: 200,
        }
    }
}

impl KineticGrid {
    fn validate(&self) -> Result<(), KineticError> {
        if !(self.x_min < self.x_max) || !self.x_min.is_finite() || !self.x_max.is_finite() {
            return Err(KineticError::Grid("need x_min < x_max".into()));
        }
        if self.nodes < 3 {
            return Err(KineticError::Grid("need at least 3 space nodes".into()));
        }
        if self.time_steps == 0 || self.stored_slices == 0 || self.stored_slices > self.time_steps {
            return Err(KineticError::Grid("need 0 < stored_slices <= time_steps".into()));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nodes - 1) as f64
    }
}

/// Grid solution h(t, x) and its central-difference gradient on stored slices.
#[derive(Clone, Debug, Serialize)]
pub struct KineticSolution {
    pub x_min: f64,
    pub dx: f64,
    pub nodes: usize,
    /// Increasing calendar times of the stored slices; the last one is T.
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub gradients: Vec<Vec<f64>>,
    pub boundary: String,
}

fn central_gradient(h: &[f64], dx: f64) -> Vec<f64> {
    let n = h.len();
    let mut g = vec![0.0; n];
    for j in 1..n - 1 {
        g[j] = (h[j + 1] - h[j - 1]) / (2.0 * dx);
    }
    g
}

/// Tridiagonal factorization of I − κ·Δ_Neumann, reused every step.
struct Implicit {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Implicit {
    fn new(n: usize, kappa: f64) -> Self {
        let mut lower = vec![-kappa; n];
        let mut upper = vec![-kappa; n];
        let diag = vec![1.0 + 2.0 * kappa; n];
        // ghost nodes h_{-1} = h_1 and h_n = h_{n-2}
        upper[0] = -2.0 * kappa;
        lower[n - 1] = -2.0 * kappa;
        lower[0] = 0.0;
        upper[n - 1] = 0.0;
        // forward elimination once
        let mut d = diag;
        for j in 1..n {
            let m = lower[j] / d[j - 1];
            lower[j] = m;
            d[j] -= m * upper[j - 1];
        }
        Self { lower, diag: d, upper }
    }

    fn solve(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        for j in 1..n {
            rhs[j] -= self.lower[j] * rhs[j - 1];
        }
        rhs[n - 1] /= self.diag[n - 1];
        for j in (0..n - 1).rev() {
            rhs[j] = (rhs[j] - self.upper[j] * rhs[j + 1]) / self.diag[j];
        }
    }
}

/// Solves the HJB equation backward from h(T, ·) = G on `grid`.
pub fn solve_kinetic_hjb(
    scn: &KineticScenario,
    horizon: f64,
    grid: &KineticGrid,
) -> Result<KineticSolution, KineticError> {
    if scn.parts().dim != 1 {
        return Err(KineticError::Dimension(scn.parts().dim));
    }
    grid.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(KineticError::Grid(format!("horizon must be positive, got {horizon}")));
    }
    let n = grid.nodes;
    let dx = grid.dx();
    let xs: Vec<f64> = (0..n).map(|j| grid.x_min + j as f64 * dx).collect();
    let dtau = horizon / grid.time_steps as f64;
    let implicit = Implicit::new(n, 0.5 * dtau / (dx * dx));

    let mut h: Vec<f64> = xs.iter().map(|&x| scn.terminal_fn(&[x])).collect();
    if h.iter().any(|v| !v.is_finite()) {
        return Err(KineticError::NonFinite { t: horizon });
    }
    let store_at = |k: usize| (k * grid.time_steps + grid.stored_slices / 2) / grid.stored_slices;
    let mut times = vec![horizon];
    let mut values = vec![h.clone()];
    let mut next_store = 1;
    let mut rhs = vec![0.0; n];
    for step in 0..grid.time_steps {
        let t = horizon - step as f64 * dtau;
        let g = central_gradient(&h, dx);
        let mut courant = 0.0f64;
        for j in 0..n {
            let x = [xs[j]];
            let b = scn.base_drift(t, &x)[0];
            let phi = scn.potential(t, &x);
            courant = courant.max((b - 0.5 * g[j]).abs() * dtau / dx).max(phi.abs() * dtau);
            rhs[j] = h[j] + dtau * (b * g[j] - 0.5 * g[j] * g[j] + phi * h[j]);
        }
        if courant > 1.0 {
            return Err(KineticError::Cfl { t, courant });
        }
        implicit.solve(&mut rhs);
        std::mem::swap(&mut h, &mut rhs);
        let t_next = horizon * (1.0 - (step + 1) as f64 / grid.time_steps as f64);
        if h.iter().any(|v| !v.is_finite()) {
            return Err(KineticError::NonFinite { t: t_next });
        }
        if next_store <= grid.stored_slices && step + 1 == store_at(next_store) {
            times.push(t_next);
            values.push(h.clone());
            next_store += 1;
        }
    }
    times.reverse();
    values.reverse();
    let gradients = values.iter().map(|v| central_gradient(v, dx)).collect();
    Ok(KineticSolution {
        x_min: grid.x_min,
        dx,
        nodes: n,
        times,
        values,
        gradients,
        boundary: "neumann (ghost nodes, zero gradient)".into(),
    })
}

impl KineticSolution {
    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        (0..self.nodes).map(|j| self.x_min + j as f64 * self.dx).collect()
    }

    fn bilinear(&self, field: &[Vec<f64>], t: f64, x: f64) -> f64 {
        let nt = self.times.len();
        let t = t.clamp(self.times[0], self.times[nt - 1]);
        let k = self.times.partition_point(|&s| s <= t).clamp(1, nt - 1) - 1;
        let wt = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        let s = ((x - self.x_min) / self.dx).clamp(0.0, (self.nodes - 1) as f64);
        let j = (s.floor() as usize).min(self.nodes - 2);
        let wx = s - j as f64;
        let row = |r: &[f64]| r[j] + (r[j + 1] - r[j]) * wx;
        let (a, b) = (row(&field[k]), row(&field[k + 1]));
        a + (b - a) * wt
    }

    /// h(t, x); x is clamped to the grid.
    pub fn value_at(&self, t: f64, x: f64) -> f64 {
        self.bilinear(&self.values, t, x)
    }

    /// Dh(t, x) from central differences; x is clamped to the grid.
    pub fn gradient_at(&self, t: f64, x: f64) -> f64 {
        self.bilinear(&self.gradients, t, x)
    }

    /// CSV with columns `t,x,h,Dh` over all stored slices.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,h,Dh\n");
        let xs = self.x_nodes();
        for (k, t) in self.times.iter().enumerate() {
            for (j, x) in xs.iter().enumerate() {
                out.push_str(&format!(
                    "{t:.16e},{x:.16e},{:.16e},{:.16e}\n",
                    self.values[k][j], self.gradients[k][j]
                ));
            }
        }
        out
    }
}

/// a = −Dh(t, x).
pub fn kinetic_feedback(t: f64, x: &[f64], sol: &KineticSolution) -> Vec<f64> {
    vec![-sol.gradient_at(t, x[0])]
}

pub fn kinetic_feedback_policy(sol: Arc<KineticSolution>) -> Policy {
    Policy::feedback(move |t, x, _| kinetic_feedback(t, x, &sol))
}

impl ValueField for KineticSolution {
    /// w_t(λ) = ∫h(t, x) λ(dx).
    fn value(&self, t: f64, lambda: &AtomicMeasure) -> f64 {
        lambda.integrate(|x| self.value_at(t, x[0]))
    }

    fn domain(&self) -> Option<(f64, f64)> {
        Some((self.times[0], self.horizon()))
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub value: f64,
    pub standard_error: f64,
}

/// −ln E[exp(−G(x + √τ Z))], the solution for b ≡ 0, φ ≡ 0 at time to maturity τ.
///
/// The standard error is propagated through the logarithm by the delta method.
pub fn hopf_cole_oracle(g: &dyn Fn(&[f64]) -> f64, tau: f64, x: &[f64], samples: usize, seed: u64) -> OracleEstimate {
    let mut rng = label_stream(seed, &Label::root(), StreamKind::Brownian);
    let sd = tau.max(0.0).sqrt();
    let mut y = vec![0.0; x.len()];
    let draws: Vec<f64> = (0..samples)
        .map(|_| {
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi = xi + sd * rng.standard_normal();
            }
            (-g(&y)).exp()
        })
        .collect();
    let (m, se) = mean_and_se(&draws);
    OracleEstimate {
        value: -m.ln(),
        standard_error: se / m,
    }
}
