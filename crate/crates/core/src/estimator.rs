//! U-statistic estimator of the squared L2 distance between the data's
//! state and a null state, plus the theoretical bandwidth and rate formulas.
//!
//! With `a_l = F_{j,k}(Y_l / sqrt(eta), Phi_l) - tau_{j,k}` the pairwise sum
//! over `l != m` of `a_l conj(a_m)` equals `|sum a_l|^2 - sum |a_l|^2`, so
//! the statistic costs `O(n N^2)` instead of `O(n^2 N^2)`. Pairs with
//! `j < k` contribute the same modulus as their mirror and are counted twice.

use std::sync::Arc;

use num_complex::Complex64;

use crate::pattern::{pair_count, pair_index, Efficiency, PatternTable};
use crate::simulator::{QhtDataset, QhtRecord};
use crate::states::DensityMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimatorError {
    #[error("the estimator needs at least two records, got {0}")]
    TooFewRecords(usize),
    #[error("dataset efficiency {dataset} does not match the pattern table's {table}")]
    EfficiencyMismatch { dataset: f64, table: f64 },
    #[error("null state dimension {dim} is below the bandwidth {bandwidth}")]
    NullTooSmall { dim: usize, bandwidth: usize },
    #[error("log log n is undefined or nonpositive for n = {0}")]
    SampleTooSmall(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Everything needed to evaluate the statistic for one null hypothesis.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    table: Arc<PatternTable>,
    tau: DensityMatrix,
    // tau_{j,k}, j >= k, packed
    tau_packed: Vec<Complex64>,
}

impl EstimatorConfig {
    pub fn new(tau: DensityMatrix, table: Arc<PatternTable>) -> Result<Self, EstimatorError> {
        let bandwidth = table.bandwidth();
        if tau.dim() < bandwidth {
            return Err(EstimatorError::NullTooSmall {
                dim: tau.dim(),
                bandwidth,
            });
        }
        let mut tau_packed = vec![Complex64::new(0.0, 0.0); pair_count(bandwidth)];
        for j in 0..bandwidth {
            for k in 0..=j {
                tau_packed[pair_index(j, k)] = tau.get(j, k);
            }
        }
        Ok(EstimatorConfig {
            table,
            tau,
            tau_packed,
        })
    }

    pub fn bandwidth(&self) -> usize {
        self.table.bandwidth()
    }

    pub fn eta(&self) -> Efficiency {
        self.table.eta()
    }

    pub fn tau(&self) -> &DensityMatrix {
        &self.tau
    }

    pub fn table(&self) -> &Arc<PatternTable> {
        &self.table
    }

    /// Single-record kernel `F^eta_{j,k}(y / sqrt(eta), phi)`.
    ///
    /// The tabulated pattern functions follow the reflected sign convention
    /// (`f(-x) = (-1)^{j-k} f(x)`) relative to the Fock-basis phase of the
    /// state tables; the factor `(-1)^{j-k}` realigns them so that
    /// `E[F_{j,k}] = rho_{j,k}` for every pair.
    pub fn kernel_value(&self, j: usize, k: usize, y: f64, phi: f64) -> Complex64 {
        let x = y / self.eta().value().sqrt();
        let f = self.table.eval(j, k, x);
        let d = j as i64 - k as i64;
        let sign = if d.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        // e^{-i(k - j) phi}
        Complex64::from_polar(sign * f, d as f64 * phi)
    }
}

/// Running sums `S_{j,k} = sum a_l` and `Q_{j,k} = sum |a_l|^2` over records.
///
/// Accumulators of disjoint shards merge by addition.
#[derive(Debug, Clone, PartialEq)]
pub struct MnAccumulator {
    bandwidth: usize,
    sums: Vec<Complex64>,
    squares: Vec<f64>,
    count: usize,
}

impl MnAccumulator {
    pub fn new(bandwidth: usize) -> Self {
        let pairs = pair_count(bandwidth);
        MnAccumulator {
            bandwidth,
            sums: vec![Complex64::new(0.0, 0.0); pairs],
            squares: vec![0.0; pairs],
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push_records(&mut self, cfg: &EstimatorConfig, records: &[QhtRecord]) {
        assert_eq!(self.bandwidth, cfg.bandwidth(), "accumulator bandwidth mismatch");
        let n_band = self.bandwidth;
        let pairs = pair_count(n_band);
        let inv_sqrt_eta = 1.0 / cfg.eta().value().sqrt();
        let mut f = vec![0.0; pairs];
        let mut phase = vec![Complex64::new(0.0, 0.0); n_band];
        for r in records {
            cfg.table.eval_all(r.y * inv_sqrt_eta, &mut f);
            // (-e^{i phi})^d carries both e^{-i(k-j)phi} and the sign alignment
            let step = -Complex64::new(r.phi.cos(), r.phi.sin());
            let mut w = Complex64::new(1.0, 0.0);
            for p in phase.iter_mut() {
                *p = w;
                w *= step;
            }
            let mut p = 0;
            for j in 0..n_band {
                for k in 0..=j {
                    let a = phase[j - k] * f[p] - cfg.tau_packed[p];
                    self.sums[p] += a;
                    self.squares[p] += a.norm_sqr();
                    p += 1;
                }
            }
        }
        self.count += records.len();
    }

    pub fn merge(&mut self, other: &MnAccumulator) {
        assert_eq!(self.bandwidth, other.bandwidth, "accumulator bandwidth mismatch");
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        for (a, b) in self.squares.iter_mut().zip(&other.squares) {
            *a += b;
        }
        self.count += other.count;
    }

    /// Value of the statistic over all accumulated records.
    pub fn finish(&self) -> Result<f64, EstimatorError> {
        let n = self.count;
        if n < 2 {
            return Err(EstimatorError::TooFewRecords(n));
        }
        let mut total = 0.0;
        for j in 0..self.bandwidth {
            for k in 0..=j {
                let p = pair_index(j, k);
                let off_diagonal = self.sums[p].norm_sqr() - self.squares[p];
                total += if j == k { off_diagonal } else { 2.0 * off_diagonal };
            }
        }
        Ok(total / (n as f64 * (n as f64 - 1.0)))
    }
}

/// Estimates `sum_{j,k<N} |rho_{j,k} - tau_{j,k}|^2` from a dataset.
pub fn compute_mn(ds: &QhtDataset, cfg: &EstimatorConfig) -> Result<f64, EstimatorError> {
    if ds.len() < 2 {
        return Err(EstimatorError::TooFewRecords(ds.len()));
    }
    if ds.eta() != cfg.eta() {
        return Err(EstimatorError::EfficiencyMismatch {
            dataset: ds.eta().value(),
            table: cfg.eta().value(),
        });
    }
    let mut acc = MnAccumulator::new(cfg.bandwidth());
    acc.push_records(cfg, ds.records());
    acc.finish()
}

/// Exact mean of the statistic under `rho`: the truncated squared distance.
pub fn expected_mn(rho: &DensityMatrix, tau: &DensityMatrix, bandwidth: usize) -> f64 {
    let mut total = 0.0;
    for j in 0..bandwidth {
        for k in 0..bandwidth {
            total += (rho.get(j, k) - tau.get(j, k)).norm_sqr();
        }
    }
    total
}

fn log_log(n: f64) -> Result<(f64, f64), EstimatorError> {
    if !(n > std::f64::consts::E) {
        return Err(EstimatorError::SampleTooSmall(n));
    }
    let ln = n.ln();
    Ok((ln, ln.ln()))
}

fn positive(name: &str, v: f64) -> Result<(), EstimatorError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(EstimatorError::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// Ideal-detection bandwidth `(log n / (4B) + (log log n)^2 / (4B))^{2/r}`.
pub fn bandwidth_n1(n: f64, b: f64, r: f64) -> Result<f64, EstimatorError> {
    positive("B", b)?;
    if !(r > 0.0 && r <= 2.0) {
        return Err(EstimatorError::InvalidParameter(format!("r must lie in (0, 2], got {r}")));
    }
    let (ln, lln) = log_log(n)?;
    Ok(((ln + lln * lln) / (4.0 * b)).powf(2.0 / r))
}

/// Noisy bandwidth for `r = 2`:
/// `log n / (4 (4 gamma + B)) * (1 + 8 log log n / (3 log n))`.
pub fn bandwidth_n2(n: f64, b: f64, gamma: f64) -> Result<f64, EstimatorError> {
    positive("B", b)?;
    positive("gamma", gamma)?;
    let (ln, lln) = log_log(n)?;
    Ok(ln / (4.0 * (4.0 * gamma + b)) * (1.0 + 8.0 * lln / (3.0 * ln)))
}

/// Root of `16 gamma N + 4 B N^{r/2} = log n`, found by bisection.
pub fn bandwidth_n3(n: f64, b: f64, r: f64, gamma: f64) -> Result<f64, EstimatorError> {
    positive("B", b)?;
    positive("gamma", gamma)?;
    if !(r > 0.0 && r <= 2.0) {
        return Err(EstimatorError::InvalidParameter(format!("r must lie in (0, 2], got {r}")));
    }
    if !(n > 1.0) {
        return Err(EstimatorError::SampleTooSmall(n));
    }
    let target = n.ln();
    let g = |x: f64| 16.0 * gamma * x + 4.0 * b * x.powf(r / 2.0) - target;
    let (mut lo, mut hi) = (0.0, 1.0);
    while g(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Regime selecting the testing-rate formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateRegime {
    /// `eta = 1`, any `r` in `(0, 2]`.
    Ideal,
    /// `r = 2`, `eta < 1`.
    SmoothR2,
    /// `r` in `(0, 2)`, `eta < 1`.
    General,
}

/// Squared testing rate `phi_n^2 = t_n^2` of the given regime.
pub fn rate_phi(n: f64, b: f64, r: f64, gamma: f64, regime: RateRegime) -> Result<f64, EstimatorError> {
    positive("B", b)?;
    let mismatch = |msg: &str| Err(EstimatorError::InvalidParameter(format!("{regime:?} regime: {msg}")));
    match regime {
        RateRegime::Ideal => {
            if gamma != 0.0 {
                return mismatch("requires gamma = 0");
            }
            if !(r > 0.0 && r <= 2.0) {
                return mismatch("requires r in (0, 2]");
            }
            let (ln, _) = log_log(n)?;
            Ok(n.powf(-0.5) * ln.powf(17.0 / (6.0 * r)))
        }
        RateRegime::SmoothR2 => {
            if r != 2.0 {
                return mismatch("requires r = 2");
            }
            if !(gamma > 0.0) {
                return mismatch("requires gamma > 0");
            }
            let (ln, _) = log_log(n)?;
            let denom = 4.0 * gamma + b;
            Ok(ln.powf((12.0 * gamma - b) / (3.0 * denom)) * n.powf(-b / (2.0 * denom)))
        }
        RateRegime::General => {
            if !(r > 0.0 && r < 2.0) {
                return mismatch("requires r in (0, 2)");
            }
            if !(gamma > 0.0) {
                return mismatch("requires gamma > 0");
            }
            let root = bandwidth_n3(n, b, r, gamma)?;
            Ok(root.powf(2.0 - r / 2.0) * (-2.0 * b * root.powf(r / 2.0)).exp())
        }
    }
}

/// Sample size, class smoothness and efficiency behind the rate formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams {
    pub n: f64,
    pub b: f64,
    pub r: f64,
    pub eta: Efficiency,
}

impl RateParams {
    pub fn gamma(&self) -> f64 {
        self.eta.gamma()
    }

    /// Regime implied by `eta` and `r`.
    pub fn regime(&self) -> RateRegime {
        if self.eta.is_ideal() {
            RateRegime::Ideal
        } else if self.r == 2.0 {
            RateRegime::SmoothR2
        } else {
            RateRegime::General
        }
    }

    pub fn bandwidth(&self) -> Result<f64, EstimatorError> {
        match self.regime() {
            RateRegime::Ideal => bandwidth_n1(self.n, self.b, self.r),
            RateRegime::SmoothR2 => bandwidth_n2(self.n, self.b, self.gamma()),
            RateRegime::General => bandwidth_n3(self.n, self.b, self.r, self.gamma()),
        }
    }

    pub fn rate_sq(&self) -> Result<f64, EstimatorError> {
        rate_phi(self.n, self.b, self.r, self.gamma(), self.regime())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{make_state, StateKind};

    #[test]
    fn n1_substitution() {
        let b = 1.5f64;
        let n = (4.0 * b).exp();
        let expected = 1.0 + (4.0 * b).ln().powi(2) / (4.0 * b);
        assert!((bandwidth_n1(n, b, 2.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn n1_monotone_and_rejects_small_n() {
        let mut prev = 0.0;
        for n in (16..10_000).step_by(97) {
            let v = bandwidth_n1(n as f64, 0.7, 2.0).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        assert!(bandwidth_n1(1e4, 0.7, 1.0).unwrap() > bandwidth_n1(1e4, 0.7, 2.0).unwrap());
        assert_eq!(bandwidth_n1(2.0, 1.0, 2.0), Err(EstimatorError::SampleTooSmall(2.0)));
        assert!(bandwidth_n1(std::f64::consts::E, 1.0, 2.0).is_err());
    }

    #[test]
    fn n2_substitution_and_limits() {
        let n: f64 = 50_000.0;
        let (ln, lln) = (n.ln(), n.ln().ln());
        let gamma = 1.0 / 36.0;
        let expected = ln / (4.0 * (4.0 * gamma + 1.0)) * (1.0 + 8.0 * lln / (3.0 * ln));
        assert!((bandwidth_n2(n, 1.0, gamma).unwrap() - expected).abs() < 1e-12);
        let limit = ln * (1.0 + 8.0 * lln / (3.0 * ln)) / 4.0;
        assert!((bandwidth_n2(n, 1.0, 1e-14).unwrap() - limit).abs() < 1e-10);
        assert!(bandwidth_n2(n, 1.0, 0.1).unwrap() < bandwidth_n2(n, 1.0, 0.05).unwrap());
        assert!(bandwidth_n2(n, 1.0, 0.0).is_err());
    }

    #[test]
    fn n3_solves_its_equation() {
        for &(n, b, r, g) in &[(1e4, 0.5, 1.0, 0.02), (5e4, 1.0, 1.5, 1.0 / 36.0), (100.0, 2.0, 0.3, 0.1)] {
            let root = bandwidth_n3(n, b, r, g).unwrap();
            let residual = 16.0 * g * root + 4.0 * b * root.powf(r / 2.0) - f64::ln(n);
            assert!(residual.abs() < 1e-8, "residual {residual}");
        }
        let mut prev = 0.0;
        for n in [10.0, 100.0, 1e3, 1e4, 1e6] {
            let root = bandwidth_n3(n, 1.0, 1.0, 0.05).unwrap();
            assert!(root > prev);
            prev = root;
        }
    }

    #[test]
    fn ideal_rate_substitution() {
        let n: f64 = 1e4;
        let expected = 1e-2 * n.ln().powf(17.0 / 12.0);
        assert!((rate_phi(n, 1.0, 2.0, 0.0, RateRegime::Ideal).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn rate_regime_mismatch() {
        assert!(rate_phi(1e4, 1.0, 2.0, 0.1, RateRegime::Ideal).is_err());
        assert!(rate_phi(1e4, 1.0, 1.0, 0.1, RateRegime::SmoothR2).is_err());
        assert!(rate_phi(1e4, 1.0, 2.0, 0.1, RateRegime::General).is_err());
        assert!(rate_phi(1e4, 1.0, 1.0, 0.0, RateRegime::General).is_err());
    }

    #[test]
    fn rates_vanish_along_geometric_grid() {
        for (r, g, regime) in [
            (2.0, 0.0, RateRegime::Ideal),
            (2.0, 1.0 / 36.0, RateRegime::SmoothR2),
            (1.0, 1.0 / 36.0, RateRegime::General),
        ] {
            let rates: Vec<f64> = (0..8)
                .map(|e| rate_phi(10f64.powi(4 + 4 * e), 1.0, r, g, regime).unwrap())
                .collect();
            assert!(rates.last().unwrap() < &(rates[0] * 1e-2), "{regime:?}: {rates:?}");
        }
    }

    #[test]
    fn general_rate_composes_with_root() {
        let (n, b, r, g) = (5e4, 1.0, 1.2, 0.03);
        let root = bandwidth_n3(n, b, r, g).unwrap();
        let expected = root.powf(2.0 - r / 2.0) * (-2.0 * b * root.powf(r / 2.0)).exp();
        assert_eq!(rate_phi(n, b, r, g, RateRegime::General).unwrap(), expected);
    }

    #[test]
    fn rate_params_pick_regime() {
        let p = RateParams {
            n: 1e4,
            b: 1.0,
            r: 2.0,
            eta: Efficiency::new(0.9).unwrap(),
        };
        assert_eq!(p.regime(), RateRegime::SmoothR2);
        assert!(p.bandwidth().unwrap() > 0.0);
        let ideal = RateParams { eta: Efficiency::IDEAL, ..p };
        assert_eq!(ideal.regime(), RateRegime::Ideal);
        assert_eq!(ideal.rate_sq().unwrap(), rate_phi(1e4, 1.0, 2.0, 0.0, RateRegime::Ideal).unwrap());
    }

    #[test]
    fn expected_mn_examples() {
        let vac = make_state(StateKind::Vacuum, 10).unwrap();
        let photon = make_state(StateKind::SinglePhoton, 10).unwrap();
        assert_eq!(expected_mn(&vac, &vac, 6), 0.0);
        assert_eq!(expected_mn(&photon, &vac, 2), 2.0);
    }

    #[test]
    fn null_state_must_cover_bandwidth() {
        let table = Arc::new(PatternTable::build(1.0, 4, 4.0, 0.05).unwrap());
        let tau = make_state(StateKind::Vacuum, 3).unwrap();
        assert_eq!(
            EstimatorConfig::new(tau, table).unwrap_err(),
            EstimatorError::NullTooSmall { dim: 3, bandwidth: 4 }
        );
    }

    #[test]
    fn accumulator_needs_two_records() {
        let acc = MnAccumulator::new(3);
        assert_eq!(acc.finish(), Err(EstimatorError::TooFewRecords(0)));
    }
}
