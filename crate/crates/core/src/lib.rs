//! Simulation, cost estimation and verification of optimally controlled
//! branching diffusions.
//!
//! The state of the system is a finite point measure on R^d. Particles
//! diffuse under a controlled SDE, die at a (thinned) state-dependent rate
//! and leave a random number of offspring where they died. The crate
//! simulates such systems, estimates control costs by Monte Carlo and checks
//! candidate value functions and feedback laws through statistical
//! martingale tests.

pub mod assignment;
pub mod estimate;
pub mod genealogy;
pub mod kinetic;
pub mod lq;
pub mod measure;
pub mod policy;
pub mod rng;
pub mod scenario;
pub mod simulate;
pub mod table;

pub use estimate::{
    check_moment_bounds, compare_policies, estimate_cost, martingale_test, submartingale_test, Ensemble, EstimateError,
    EstimateResult, ValueField, VerifyMode,
};
pub use genealogy::{Label, LabelSet};
pub use kinetic::{solve_kinetic_hjb, KineticGrid, KineticSolution};
pub use lq::{solve_riccati, RiccatiSolution};
pub use measure::{embed, wasserstein, AtomicMeasure};
pub use policy::{Policy, PolicyName};
pub use rng::{label_stream, replication_seed, LabelStream, StreamKind};
pub use scenario::{builtin_kinetic, builtin_lq, Bounds, BranchOutcome, Dims, GenericScenario, Scenario};
pub use simulate::{simulate_path, PathRecord, SimConfig, SimError};
pub use table::{MatrixTable, ScalarTable};
