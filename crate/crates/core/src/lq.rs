//! Linear-quadratic model: backward Riccati system, value field and optimal feedback.
//!
//! With the quadratic ansatz w_t(λ) = ∫xᵀQ_t x λ(dx) + p_t<1,λ>² + p̄_t<1,λ>,
//! the generator of the controlled population applied to w, plus the running
//! cost, is minimized per particle by â = −C̄⁻¹B̄ᵀQx. The remaining terms
//! vanish identically iff
//!
//! ```text
//! Q' + BᵀQ + QB + γM₁Q + C − QB̄C̄⁻¹B̄ᵀQ = 0,   Q(T) = H
//! p' + 2γM₁p + c = 0,                          p(T) = h
//! p̄' + σ²Tr(Q) + γM₁p̄ + γM₂p = 0,             p̄(T) = 0
//! ```
//!
//! where M₁ = Σ(k−1)p_k and M₂ = Σ(k−1)²p_k. The factor 2 in the p equation
//! comes from the cross term of (<1,λ> + k − 1)².

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::estimate::ValueField;
use crate::measure::AtomicMeasure;
use crate::policy::Policy;
use crate::scenario::{min_eigenvalue, LqCoefficients};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LqError {
    #[error("C̄ is not positive definite at t = {t}")]
    NotPositiveDefinite { t: f64 },
    #[error("step size underflow: horizon {horizon} with {steps} steps")]
    StepUnderflow { horizon: f64, steps: usize },
    #[error("Riccati solution became non-finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("time {t} lies outside the solution grid [0, {horizon}]")]
    OutsideGrid { t: f64, horizon: f64 },
}

/// Dense backward solution of the Riccati system on a uniform grid.
#[derive(Clone, Debug, Serialize)]
pub struct RiccatiSolution {
    pub times: Vec<f64>,
    pub q: Vec<DMatrix<f64>>,
    pub p: Vec<f64>,
    pub p_bar: Vec<f64>,
    pub coefficients: LqCoefficients,
}

#[derive(Clone)]
struct State {
    q: DMatrix<f64>,
    p: f64,
    p_bar: f64,
}

impl State {
    fn axpy(&self, h: f64, k: &State) -> State {
        State {
            q: &self.q + &k.q * h,
            p: self.p + h * k.p,
            p_bar: self.p_bar + h * k.p_bar,
        }
    }
}

/// d/ds of (Q, p, p̄) in reversed time s = T − t, evaluated at calendar time t.
fn rhs(c: &LqCoefficients, m: (f64, f64), t: f64, y: &State) -> Result<State, LqError> {
    let (m1, m2) = m;
    let b = c.b.at(t);
    let b_bar = c.b_bar.at(t);
    let gamma = c.gamma.at(t);
    let sigma = c.sigma.at(t);
    let chol = c.c_bar.at(t).cholesky().ok_or(LqError::NotPositiveDefinite { t })?;
    let qb = &y.q * &b_bar;
    let gain = chol.solve(&qb.transpose());
    let q = b.transpose() * &y.q + &y.q * &b + &y.q * (gamma * m1) + c.c.at(t) - &qb * gain;
    Ok(State {
        q,
        p: 2.0 * gamma * m1 * y.p + c.c_mass.at(t),
        p_bar: sigma * sigma * y.q.trace() + gamma * m1 * y.p_bar + gamma * m2 * y.p,
    })
}

/// Integrates the Riccati system backward from `horizon` to 0 with classical RK4.
pub fn solve_riccati(coeffs: &LqCoefficients, horizon: f64, steps: usize) -> Result<RiccatiSolution, LqError> {
    if steps == 0 || !(horizon > 0.0) || !(horizon / steps as f64 > 0.0) {
        return Err(LqError::StepUnderflow { horizon, steps });
    }
    let m = coeffs.branching_moments();
    let h = horizon / steps as f64;
    let mut y = State {
        q: coeffs.h.clone(),
        p: coeffs.h_mass,
        p_bar: 0.0,
    };
    let mut q = vec![y.q.clone()];
    let mut p = vec![y.p];
    let mut p_bar = vec![y.p_bar];
    for n in 0..steps {
        // calendar time of the step start, moving backward
        let t = horizon - n as f64 * h;
        let tm = t - 0.5 * h;
        let te = horizon - (n + 1) as f64 * h;
        let k1 = rhs(coeffs, m, t, &y)?;
        let k2 = rhs(coeffs, m, tm, &y.axpy(0.5 * h, &k1))?;
        let k3 = rhs(coeffs, m, tm, &y.axpy(0.5 * h, &k2))?;
        let k4 = rhs(coeffs, m, te, &y.axpy(h, &k3))?;
        let mut next = State {
            q: &y.q + (k1.q + k2.q * 2.0 + k3.q * 2.0 + k4.q) * (h / 6.0),
            p: y.p + h / 6.0 * (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p),
            p_bar: y.p_bar + h / 6.0 * (k1.p_bar + 2.0 * k2.p_bar + 2.0 * k3.p_bar + k4.p_bar),
        };
        next.q = (&next.q + next.q.transpose()) * 0.5;
        if next.q.iter().any(|v| !v.is_finite()) || !next.p.is_finite() || !next.p_bar.is_finite() {
            return Err(LqError::NonFinite { t: te });
        }
        q.push(next.q.clone());
        p.push(next.p);
        p_bar.push(next.p_bar);
        y = next;
    }
    q.reverse();
    p.reverse();
    p_bar.reverse();
    let times = (0..=steps).map(|n| n as f64 * h).collect();
    Ok(RiccatiSolution {
        times,
        q,
        p,
        p_bar,
        coefficients: coeffs.clone(),
    })
}

impl RiccatiSolution {
    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    fn locate(&self, t: f64) -> Result<(usize, f64), LqError> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(LqError::OutsideGrid { t, horizon });
        }
        let n = self.times.len() - 1;
        let s = t / horizon * n as f64;
        let k = (s.floor() as usize).min(n - 1);
        Ok((k, s - k as f64))
    }

    /// (Q_t, p_t, p̄_t), linearly interpolated.
    pub fn at(&self, t: f64) -> Result<(DMatrix<f64>, f64, f64), LqError> {
        let (k, w) = self.locate(t)?;
        let lerp = |a: f64, b: f64| a + (b - a) * w;
        Ok((
            &self.q[k] + (&self.q[k + 1] - &self.q[k]) * w,
            lerp(self.p[k], self.p[k + 1]),
            lerp(self.p_bar[k], self.p_bar[k + 1]),
        ))
    }

    /// Smallest eigenvalue of Q over all grid nodes.
    pub fn min_eigenvalue(&self) -> f64 {
        self.q.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min)
    }

    /// CSV with columns `t, Q_11, Q_12, …, Q_dd, p, p_bar` (Q row-major).
    pub fn to_csv(&self) -> String {
        let d = self.coefficients.state_dim;
        let mut out = String::from("t");
        for i in 1..=d {
            for j in 1..=d {
                out.push_str(&format!(",Q_{i}{j}"));
            }
        }
        out.push_str(",p,p_bar\n");
        for (n, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t:.16e}"));
            for i in 0..d {
                for j in 0..d {
                    out.push_str(&format!(",{:.16e}", self.q[n][(i, j)]));
                }
            }
            out.push_str(&format!(",{:.16e},{:.16e}\n", self.p[n], self.p_bar[n]));
        }
        out
    }
}

/// w_t(λ) = ∫xᵀQ_t x λ(dx) + p_t<1,λ>² + p̄_t<1,λ>.
pub fn lq_value(t: f64, lambda: &AtomicMeasure, sol: &RiccatiSolution) -> Result<f64, LqError> {
    let (q, p, p_bar) = sol.at(t)?;
    let n = lambda.mass() as f64;
    let quad = lambda.integrate(|x| {
        let x = DVector::from_column_slice(x);
        x.dot(&(&q * &x))
    });
    Ok(quad + p * n * n + p_bar * n)
}

/// â = −C̄_t⁻¹B̄_tᵀQ_t x.
pub fn lq_feedback(t: f64, x: &[f64], sol: &RiccatiSolution) -> Result<Vec<f64>, LqError> {
    let (q, _, _) = sol.at(t)?;
    let c = &sol.coefficients;
    let chol = c.c_bar.at(t).cholesky().ok_or(LqError::NotPositiveDefinite { t })?;
    let rhs = c.b_bar.at(t).transpose() * (q * DVector::from_column_slice(x));
    Ok((-chol.solve(&rhs)).as_slice().to_vec())
}

/// The optimal feedback as a policy. Times outside the grid are clamped.
pub fn lq_feedback_policy(sol: Arc<RiccatiSolution>) -> Policy {
    lq_perturbed_policy(sol, 0.0)
}

/// Optimal feedback plus ε times the unit vector (1, …, 1)/√q.
pub fn lq_perturbed_policy(sol: Arc<RiccatiSolution>, eps: f64) -> Policy {
    let q = sol.coefficients.action_dim;
    let shift = eps / (q as f64).sqrt();
    Policy::feedback(move |t, x, _| {
        let t = t.clamp(0.0, sol.horizon());
        let mut a = lq_feedback(t, x, &sol).expect("validated coefficients");
        for v in a.iter_mut() {
            *v += shift;
        }
        a
    })
}

impl ValueField for RiccatiSolution {
    fn value(&self, t: f64, lambda: &AtomicMeasure) -> f64 {
        lq_value(t, lambda, self).unwrap_or(f64::NAN)
    }

    fn domain(&self) -> Option<(f64, f64)> {
        Some((0.0, self.horizon()))
    }
}
