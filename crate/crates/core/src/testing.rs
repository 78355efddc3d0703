//! Test decision, Monte Carlo threshold calibration, and level/power estimates.

use std::ops::Range;

use rayon::prelude::*;

use crate::estimator::{compute_mn, EstimatorConfig, EstimatorError};
use crate::seed::{replicate_seed, SeedStream};
use crate::simulator::{generate, SimError};
use crate::states::StateKind;

#[derive(Debug, thiserror::Error)]
pub enum TestingError {
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    AcceptH0,
    AcceptH1,
}

/// Rejects the null when `|mn|` strictly exceeds `nu`.
pub fn decide(mn: f64, nu: f64) -> Decision {
    if mn.abs() > nu {
        Decision::AcceptH1
    } else {
        Decision::AcceptH0
    }
}

/// A fully specified test: null, efficiency and bandwidth (through the
/// estimator), sample size, nominal level and threshold.
#[derive(Debug, Clone)]
pub struct TestConfig {
    pub estimator: EstimatorConfig,
    pub n: usize,
    pub alpha: f64,
    pub nu: f64,
}

impl TestConfig {
    pub fn new(estimator: EstimatorConfig, n: usize, alpha: f64, nu: f64) -> Result<Self, TestingError> {
        check_alpha(alpha)?;
        if n < 2 {
            return Err(TestingError::InvalidParameter(format!("n must be at least 2, got {n}")));
        }
        if !(nu > 0.0) {
            return Err(TestingError::InvalidParameter(format!("threshold must be positive, got {nu}")));
        }
        Ok(TestConfig { estimator, n, alpha, nu })
    }
}

fn check_alpha(alpha: f64) -> Result<(), TestingError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(TestingError::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn check_runs(runs: usize, alpha: Option<f64>) -> Result<(), TestingError> {
    if runs < 100 {
        return Err(TestingError::InvalidParameter(format!("at least 100 runs are required, got {runs}")));
    }
    if let Some(alpha) = alpha {
        if alpha * (runs as f64) < 1.0 {
            return Err(TestingError::InvalidParameter(format!(
                "alpha * runs must be at least 1, got {alpha} * {runs}"
            )));
        }
    }
    Ok(())
}

/// `M_n` of replicate `index` of `stream`: a fresh dataset of `n` records
/// from `state`, seeded by the replicate index alone.
pub fn replicate_mn(
    state: StateKind,
    cfg: &EstimatorConfig,
    n: usize,
    master_seed: u64,
    stream: SeedStream,
    index: u64,
) -> Result<f64, TestingError> {
    let ds = generate(state, n, cfg.eta().value(), replicate_seed(master_seed, stream, index))?;
    Ok(compute_mn(&ds, cfg)?)
}

/// Replicates `indices` of `stream` in index order, whatever the thread count.
pub fn simulate_replicates(
    state: StateKind,
    cfg: &EstimatorConfig,
    n: usize,
    indices: Range<u64>,
    master_seed: u64,
    stream: SeedStream,
) -> Result<Vec<f64>, TestingError> {
    indices
        .into_par_iter()
        .map(|i| replicate_mn(state, cfg, n, master_seed, stream, i))
        .collect()
}

/// Empirical `(1 - alpha)`-quantile of `|M_n|`: the order statistic of rank
/// `ceil((1 - alpha) runs)`.
pub fn quantile_threshold(values: &[f64], alpha: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let rank = ((1.0 - alpha) * abs.len() as f64 - 1e-9).ceil() as usize;
    abs[rank.clamp(1, abs.len()) - 1]
}

/// Null replicates on the calibration stream, summarised per level.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub report: MonteCarloReport,
    /// `(alpha, nu)` pairs in the requested order.
    pub thresholds: Vec<(f64, f64)>,
}

/// Simulates `runs` datasets under the null of `cfg` and calibrates one
/// threshold per level.
pub fn calibrate(
    cfg: &EstimatorConfig,
    n: usize,
    alphas: &[f64],
    runs: usize,
    seed: u64,
) -> Result<Calibration, TestingError> {
    check_runs(runs, None)?;
    for &alpha in alphas {
        check_alpha(alpha)?;
        check_runs(runs, Some(alpha))?;
    }
    let values = simulate_replicates(cfg.tau().kind(), cfg, n, 0..runs as u64, seed, SeedStream::Calibration)?;
    let thresholds = alphas.iter().map(|&a| (a, quantile_threshold(&values, a))).collect();
    Ok(Calibration {
        report: MonteCarloReport::from_values(values, 0.0, seed),
        thresholds,
    })
}

/// Empirical `(1 - alpha)`-quantile of `|M_n|` under the null of `cfg`.
pub fn calibrate_threshold(
    cfg: &EstimatorConfig,
    n: usize,
    alpha: f64,
    runs: usize,
    seed: u64,
) -> Result<f64, TestingError> {
    Ok(calibrate(cfg, n, &[alpha], runs, seed)?.thresholds[0].1)
}

/// Fraction of `runs` null datasets on which the test rejects.
pub fn estimate_level(cfg: &TestConfig, runs: usize, seed: u64) -> Result<f64, TestingError> {
    estimate_power(cfg.estimator.tau().kind(), cfg, runs, seed)
}

/// Fraction of `runs` datasets from `rho` on which the test rejects.
pub fn estimate_power(rho: StateKind, cfg: &TestConfig, runs: usize, seed: u64) -> Result<f64, TestingError> {
    check_runs(runs, None)?;
    let values = simulate_replicates(rho, &cfg.estimator, cfg.n, 0..runs as u64, seed, SeedStream::Evaluation(0))?;
    Ok(rejection_rate(&values, cfg.nu))
}

/// Fraction of `values` with `|M_n| > nu`.
pub fn rejection_rate(values: &[f64], nu: f64) -> f64 {
    let hits = values.iter().filter(|&&v| decide(v, nu) == Decision::AcceptH1).count();
    hits as f64 / values.len() as f64
}

/// Theory-side threshold `C* phi_n^2`.
pub fn theoretical_threshold(rate_phi_sq: f64, c_star: f64) -> Result<f64, TestingError> {
    if rate_phi_sq > 0.0 && c_star > 0.0 && (rate_phi_sq * c_star).is_finite() {
        Ok(c_star * rate_phi_sq)
    } else {
        Err(TestingError::InvalidParameter(format!(
            "rate and constant must be positive, got {rate_phi_sq} and {c_star}"
        )))
    }
}

/// Replicate values of `M_n` with their summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub values: Vec<f64>,
    pub median: f64,
    /// Mean squared error against `truth`.
    pub mse: f64,
    pub truth: f64,
    pub runs: usize,
    pub seed: u64,
}

impl MonteCarloReport {
    pub fn from_values(values: Vec<f64>, truth: f64, seed: u64) -> Self {
        let runs = values.len();
        MonteCarloReport {
            median: median(&values),
            mse: values.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / runs as f64,
            truth,
            runs,
            seed,
            values,
        }
    }

    pub fn rejection_rate(&self, nu: f64) -> f64 {
        rejection_rate(&self.values, nu)
    }
}

/// Sample median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    match v.len() {
        0 => f64::NAN,
        l if l % 2 == 1 => v[m],
        _ => 0.5 * (v[m - 1] + v[m]),
    }
}

/// Interquartile range with the same midpoint convention as [`median`].
pub fn iqr(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    let (lower, upper) = if v.len() % 2 == 1 { (&v[..h], &v[h + 1..]) } else { (&v[..h], &v[h..]) };
    median(upper) - median(lower)
}
