//! Control laws: constant actions, Markov feedback, and randomized feedback.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::AtomicMeasure;
use crate::rng::LabelStream;
use crate::scenario::ActionSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("action {action:?} lies outside the action set")]
    OutsideActionSet { action: Vec<f64> },
    #[error("policy returned an action of dimension {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("unknown policy {0:?}")]
    UnknownName(String),
}

pub type FeedbackFn = Arc<dyn Fn(f64, &[f64], &AtomicMeasure) -> Vec<f64> + Send + Sync>;
pub type SamplerFn = Arc<dyn Fn(f64, &[f64], &AtomicMeasure, &mut LabelStream) -> Vec<f64> + Send + Sync>;

/// A Markov control law.
///
/// Randomized feedback draws a fresh action per particle per Euler step from
/// the particle's own action stream, which realizes a relaxed control in the
/// small-step limit.
#[derive(Clone)]
pub enum Policy {
    Constant(Vec<f64>),
    Feedback(FeedbackFn),
    RandomizedFeedback(SamplerFn),
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Constant(a) => f.debug_tuple("Constant").field(a).finish(),
            Policy::Feedback(_) => f.write_str("Feedback(..)"),
            Policy::RandomizedFeedback(_) => f.write_str("RandomizedFeedback(..)"),
        }
    }
}

impl Policy {
    pub fn zero(action_dim: usize) -> Self {
        Policy::Constant(vec![0.0; action_dim])
    }

    pub fn feedback<F>(f: F) -> Self
    where
        F: Fn(f64, &[f64], &AtomicMeasure) -> Vec<f64> + Send + Sync + 'static,
    {
        Policy::Feedback(Arc::new(f))
    }

    pub fn randomized<F>(f: F) -> Self
    where
        F: Fn(f64, &[f64], &AtomicMeasure, &mut LabelStream) -> Vec<f64> + Send + Sync + 'static,
    {
        Policy::RandomizedFeedback(Arc::new(f))
    }

    /// Whether particles at the same position always receive the same action.
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, Policy::RandomizedFeedback(_))
    }

    /// Raw action, without domain checks.
    pub fn action(&self, t: f64, x: &[f64], lambda: &AtomicMeasure, stream: &mut LabelStream) -> Vec<f64> {
        match self {
            Policy::Constant(a) => a.clone(),
            Policy::Feedback(f) => f(t, x, lambda),
            Policy::RandomizedFeedback(f) => f(t, x, lambda, stream),
        }
    }
}

/// Evaluates the policy and checks the action against its dimension and the action set.
pub fn evaluate(
    pol: &Policy,
    t: f64,
    x: &[f64],
    lambda: &AtomicMeasure,
    stream: &mut LabelStream,
    action_dim: usize,
    set: &ActionSet,
) -> Result<Vec<f64>, PolicyError> {
    let a = pol.action(t, x, lambda, stream);
    if a.len() != action_dim {
        return Err(PolicyError::Dimension {
            expected: action_dim,
            found: a.len(),
        });
    }
    if !set.contains(&a) {
        return Err(PolicyError::OutsideActionSet { action: a });
    }
    Ok(a)
}

/// Policies that can be referred to by name in experiment files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicyName {
    Zero,
    Constant(Vec<f64>),
    LqOptimal,
    KineticOptimal,
    /// Optimal feedback plus ε times the normalized all-ones direction.
    LqPerturbed(f64),
}

impl FromStr for PolicyName {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PolicyError::UnknownName(s.to_string());
        let s = s.trim();
        match s {
            "zero" => return Ok(PolicyName::Zero),
            "lq-optimal" => return Ok(PolicyName::LqOptimal),
            "kinetic-optimal" => return Ok(PolicyName::KineticOptimal),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("constant:") {
            let a = rest
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad())?;
            return Ok(PolicyName::Constant(a));
        }
        if let Some(rest) = s.strip_prefix("lq-perturbed:") {
            return rest.trim().parse().map(PolicyName::LqPerturbed).map_err(|_| bad());
        }
        Err(bad())
    }
}

impl TryFrom<String> for PolicyName {
    type Error = PolicyError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PolicyName> for String {
    fn from(p: PolicyName) -> String {
        p.to_string()
    }
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyName::Zero => f.write_str("zero"),
            PolicyName::Constant(a) => {
                f.write_str("constant:")?;
                for (k, v) in a.iter().enumerate() {
                    if k > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{v}")?;
                }
                Ok(())
            }
            PolicyName::LqOptimal => f.write_str("lq-optimal"),
            PolicyName::KineticOptimal => f.write_str("kinetic-optimal"),
            PolicyName::LqPerturbed(eps) => write!(f, "lq-perturbed:{eps}"),
        }
    }
}
