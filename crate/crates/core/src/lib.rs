//! Goodness-of-fit testing for quantum states from homodyne tomography data.
//!
//! The crate covers pattern functions (with detection-noise correction),
//! the catalogue of reference states, a data simulator, the U-statistic
//! estimator of the squared L2 distance, threshold calibration and the
//! experiment driver used by the `qht-gof` binary.

pub mod estimator;
pub mod experiments;
pub mod pattern;
pub mod seed;
pub mod simulator;
pub mod states;
pub mod testing;

pub use estimator::{compute_mn, expected_mn, EstimatorConfig, EstimatorError, MnAccumulator};
pub use pattern::{pattern_eval, Efficiency, PatternError, PatternKernel, PatternTable};
pub use simulator::{generate, QhtDataset, QhtRecord, SimError};
pub use states::{l2_distance_sq, make_state, DensityMatrix, StateKind};
pub use testing::{decide, Decision, MonteCarloReport, TestConfig};
