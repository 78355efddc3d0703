//! Fock basis functions and pattern functions.
//!
//! A pattern function `f_{j,k}` is the kernel whose expectation against
//! homodyne data recovers the density-matrix entry `rho_{j,k}`. Its Fourier
//! transform is known in closed form through generalized Laguerre
//! polynomials; the noise-corrected variant multiplies that transform by
//! `exp(gamma t^2)` with `gamma = (1 - eta) / (4 eta)`.
//!
//! Inversion goes through the Radon filter: the closed form is a radial
//! profile, so the inverse transform carries an extra `|t|` weight and the
//! profile is extended to negative frequencies by Hermitian symmetry,
//!
//! ```text
//! f^eta_{j,k}(x) = 1/(2 pi) * Int |t| f~_{j,k}(t) exp(gamma t^2) exp(-i t x) dt.
//! ```
//!
//! The integral is evaluated with a composite Simpson rule on a uniform
//! frequency grid whose truncation point comes from an explicit Gaussian tail
//! bound. Tabulation on a uniform `x` grid with six-point Lagrange
//! interpolation serves the estimator's bulk evaluations.

use std::f64::consts::PI;
use std::io::{self, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Default frequency step of the inversion rule.
pub const DEFAULT_FREQ_STEP: f64 = 0.01;
/// Default half-width of the tabulation grid.
pub const DEFAULT_X_MAX: f64 = 8.0;
/// Default spacing of the tabulation grid.
pub const DEFAULT_X_STEP: f64 = 0.01;

/// Target bound for the truncated frequency tail of every inversion.
const TAIL_TOLERANCE: f64 = 1e-12;
/// Largest imaginary residue tolerated in a direct inversion.
const IMAG_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PatternError {
    #[error("efficiency must lie in (1/2, 1], got {0}")]
    InvalidEfficiency(f64),
    #[error("pattern transform requires j >= k, got j = {j}, k = {k}")]
    IndexOrder { j: usize, k: usize },
    #[error("bandwidth must be at least 1")]
    EmptyBandwidth,
    #[error("grid step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("grid half-width must be positive and finite, got {0}")]
    InvalidRange(f64),
    #[error("recurrence cross-check covers j <= 5 and |x| <= 3 only, got j = {j}, x = {x}")]
    RecurrenceRange { j: usize, x: f64 },
    #[error("inverse transform of ({j}, {k}) at x = {x} left imaginary residue {residue:e}")]
    ImaginaryResidue {
        j: usize,
        k: usize,
        x: f64,
        residue: f64,
    },
    #[error("non-finite pattern value for ({j}, {k}) at x = {x}")]
    NonFinite { j: usize, k: usize, x: f64 },
    #[error("malformed pattern table cache: {0}")]
    Cache(String),
}

/// Detection efficiency `eta`, restricted to `(1/2, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Efficiency(f64);

impl Efficiency {
    pub const IDEAL: Efficiency = Efficiency(1.0);

    pub fn new(eta: f64) -> Result<Self, PatternError> {
        if eta.is_finite() && eta > 0.5 && eta <= 1.0 {
            Ok(Efficiency(eta))
        } else {
            Err(PatternError::InvalidEfficiency(eta))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `gamma = (1 - eta) / (4 eta)`; zero exactly when `eta = 1`.
    pub fn gamma(self) -> f64 {
        (1.0 - self.0) / (4.0 * self.0)
    }

    /// Net Gaussian decay rate `(2 eta - 1) / (4 eta)` of the corrected transform.
    pub fn decay_rate(self) -> f64 {
        (2.0 * self.0 - 1.0) / (4.0 * self.0)
    }

    pub fn is_ideal(self) -> bool {
        self.0 == 1.0
    }
}

impl TryFrom<f64> for Efficiency {
    type Error = PatternError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Efficiency::new(value)
    }
}

impl From<Efficiency> for f64 {
    fn from(value: Efficiency) -> Self {
        value.0
    }
}

/// Evaluates `psi_0(x), ..., psi_{n-1}(x)` into `out` (length `n`).
pub fn fock_values_into(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = PI.powf(-0.25) * (-0.5 * x * x).exp();
    if out.len() > 1 {
        out[1] = std::f64::consts::SQRT_2 * x * out[0];
    }
    for k in 1..out.len().saturating_sub(1) {
        let kf = k as f64;
        out[k + 1] = x * (2.0 / (kf + 1.0)).sqrt() * out[k] - (kf / (kf + 1.0)).sqrt() * out[k - 1];
    }
}

/// Normalized Hermite function `psi_k(x)` of the Fock basis.
pub fn fock_eval(k: usize, x: f64) -> f64 {
    let mut vals = vec![0.0; k + 1];
    fock_values_into(x, &mut vals);
    vals[k]
}

/// Generalized Laguerre polynomial `L_n^alpha(y)` by the three-term recurrence.
pub fn laguerre(n: usize, alpha: f64, y: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + alpha - y;
    for m in 1..n {
        let mf = m as f64;
        let next = ((2.0 * mf + 1.0 + alpha - y) * cur - (mf + alpha) * prev) / (mf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// `sqrt(2^(k-j) k! / j!)` accumulated as a product of ratios.
fn ratio_prefactor(j: usize, k: usize) -> f64 {
    ((k + 1)..=j).fold(1.0, |acc, i| acc / (2.0 * i as f64).sqrt())
}

/// `(-i)^d`.
fn minus_i_pow(d: usize) -> Complex64 {
    match d % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    }
}

/// Fourier transform `f~_{j,k}(t)` of the pattern function, `j >= k`.
pub fn pattern_ft(j: usize, k: usize, t: f64) -> Result<Complex64, PatternError> {
    if j < k {
        return Err(PatternError::IndexOrder { j, k });
    }
    let d = j - k;
    let radial = PI
        * ratio_prefactor(j, k)
        * t.abs().powi(d as i32)
        * (-0.25 * t * t).exp()
        * laguerre(k, d as f64, 0.5 * t * t);
    Ok(minus_i_pow(d) * radial)
}

/// Real radial profile `|t| * t^d * pi * c * exp(-a t^2) * L_k^d(t^2/2)` at `t >= 0`.
fn radial_profile(j: usize, k: usize, decay: f64, t: f64) -> f64 {
    let d = j - k;
    PI * ratio_prefactor(j, k)
        * t.powi(d as i32 + 1)
        * (-decay * t * t).exp()
        * laguerre(k, d as f64, 0.5 * t * t)
}

/// Upper envelope of `|radial_profile|` built from absolute Laguerre coefficients.
fn radial_envelope(j: usize, k: usize, decay: f64, t: f64) -> f64 {
    let d = j - k;
    let y = 0.5 * t * t;
    // sum_i binom(k + d, k - i) y^i / i!
    let mut coeff = 1.0;
    for m in 0..k {
        coeff *= (k + d - m) as f64 / (k - m) as f64;
    }
    let mut poly = 0.0;
    let mut term_y = 1.0;
    for i in 0..=k {
        poly += coeff * term_y;
        if i < k {
            coeff *= (k - i) as f64 / (d + i + 1) as f64;
            term_y *= y / (i + 1) as f64;
        }
    }
    PI * ratio_prefactor(j, k) * t.powi(d as i32 + 1) * (-decay * t * t).exp() * poly
}

/// Frequency cutoff beyond which the tail of every pair `0 <= k <= j < bandwidth`
/// integrates to less than the tail tolerance.
fn frequency_cutoff(eta: Efficiency, bandwidth: usize) -> f64 {
    let decay = eta.decay_rate();
    let mut cutoff: f64 = 1.0;
    for j in 0..bandwidth {
        for k in 0..=j {
            let degree = (j - k + 1 + 2 * k) as f64;
            let peak = (degree / (2.0 * decay)).sqrt();
            let mut t = peak + 1.0;
            loop {
                let slope = 2.0 * decay * t - degree / t;
                if slope > 0.0 && radial_envelope(j, k, decay, t) / slope < TAIL_TOLERANCE {
                    break;
                }
                t += 0.25;
            }
            cutoff = cutoff.max(t);
        }
    }
    cutoff
}

/// Composite Simpson nodes and weights on `[0, cutoff]`.
#[derive(Debug, Clone)]
struct FrequencyRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl FrequencyRule {
    fn new(cutoff: f64, max_step: f64) -> Self {
        let mut intervals = (cutoff / max_step).ceil() as usize;
        if intervals % 2 == 1 {
            intervals += 1;
        }
        let h = cutoff / intervals as f64;
        let nodes: Vec<f64> = (0..=intervals).map(|m| m as f64 * h).collect();
        let weights = (0..=intervals)
            .map(|m| {
                let w = if m == 0 || m == intervals {
                    1.0
                } else if m % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * h / 3.0
            })
            .collect();
        FrequencyRule { nodes, weights }
    }
}

/// Pair index of `(j, k)` with `j >= k` in the packed lower triangle.
pub fn pair_index(j: usize, k: usize) -> usize {
    debug_assert!(j >= k);
    j * (j + 1) / 2 + k
}

/// Number of stored pairs for a bandwidth.
pub fn pair_count(bandwidth: usize) -> usize {
    bandwidth * (bandwidth + 1) / 2
}

/// Direct evaluator of `f^eta_{j,k}` for every pair below a bandwidth.
///
/// For each pair the radial profile is pre-multiplied by the quadrature
/// weights, so one evaluation is a dot product against `cos(t x)` (even
/// `j - k`) or `sin(t x)` (odd `j - k`).
#[derive(Debug, Clone)]
pub struct PatternKernel {
    eta: Efficiency,
    bandwidth: usize,
    rule: FrequencyRule,
    // [pair][node], weighted and signed, already divided by pi
    weighted: Vec<Vec<f64>>,
    // [pair][node], raw radial profile for the two-sided check
    profiles: Vec<Vec<f64>>,
}

impl PatternKernel {
    pub fn new(eta: Efficiency, bandwidth: usize) -> Result<Self, PatternError> {
        Self::with_step(eta, bandwidth, DEFAULT_FREQ_STEP)
    }

    pub fn with_step(eta: Efficiency, bandwidth: usize, freq_step: f64) -> Result<Self, PatternError> {
        if bandwidth == 0 {
            return Err(PatternError::EmptyBandwidth);
        }
        if !(freq_step.is_finite() && freq_step > 0.0) {
            return Err(PatternError::InvalidStep(freq_step));
        }
        let rule = FrequencyRule::new(frequency_cutoff(eta, bandwidth), freq_step.min(DEFAULT_FREQ_STEP));
        let decay = eta.decay_rate();
        let mut weighted = Vec::with_capacity(pair_count(bandwidth));
        let mut profiles = Vec::with_capacity(pair_count(bandwidth));
        for j in 0..bandwidth {
            for k in 0..=j {
                let d = j - k;
                let sign = if d.div_ceil(2) % 2 == 0 { 1.0 } else { -1.0 };
                let profile: Vec<f64> = rule
                    .nodes
                    .iter()
                    .map(|&t| radial_profile(j, k, decay, t))
                    .collect();
                weighted.push(
                    profile
                        .iter()
                        .zip(&rule.weights)
                        .map(|(r, w)| sign * r * w / PI)
                        .collect(),
                );
                profiles.push(profile);
            }
        }
        Ok(PatternKernel {
            eta,
            bandwidth,
            rule,
            weighted,
            profiles,
        })
    }

    pub fn eta(&self) -> Efficiency {
        self.eta
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Truncation point of the frequency integral.
    pub fn cutoff(&self) -> f64 {
        *self.rule.nodes.last().expect("rule has nodes")
    }

    fn check_pair(&self, j: usize, k: usize) -> (usize, usize) {
        let (j, k) = if j >= k { (j, k) } else { (k, j) };
        assert!(j < self.bandwidth, "pair ({j}, {k}) outside bandwidth {}", self.bandwidth);
        (j, k)
    }

    /// `f^eta_{j,k}(x)`; `j < k` is served by symmetry.
    pub fn eval(&self, j: usize, k: usize, x: f64) -> f64 {
        let (j, k) = self.check_pair(j, k);
        let w = &self.weighted[pair_index(j, k)];
        let odd = (j - k) % 2 == 1;
        self.rule
            .nodes
            .iter()
            .zip(w)
            .map(|(&t, &c)| if odd { c * (t * x).sin() } else { c * (t * x).cos() })
            .sum()
    }

    /// Full two-sided inversion returning the complex result before projection.
    pub fn eval_complex(&self, j: usize, k: usize, x: f64) -> Complex64 {
        let (j, k) = self.check_pair(j, k);
        let d = j - k;
        let parity = if d % 2 == 0 { 1.0 } else { -1.0 };
        let profile = &self.profiles[pair_index(j, k)];
        let mut acc = Complex64::new(0.0, 0.0);
        for ((&t, &w), &r) in self.rule.nodes.iter().zip(&self.rule.weights).zip(profile) {
            let (s, c) = (t * x).sin_cos();
            // positive frequency: r e^{-itx}; negative frequency: (-1)^d r e^{+itx}
            acc += w * r * (Complex64::new(c, -s) + parity * Complex64::new(c, s));
        }
        minus_i_pow(d) * acc / (2.0 * PI)
    }

    /// Evaluates every stored pair at `x` into `out` (packed order).
    pub fn eval_all(&self, x: f64, out: &mut [f64]) {
        let n = self.rule.nodes.len();
        let mut cos = Vec::with_capacity(n);
        let mut sin = Vec::with_capacity(n);
        for &t in &self.rule.nodes {
            let (s, c) = (t * x).sin_cos();
            cos.push(c);
            sin.push(s);
        }
        for j in 0..self.bandwidth {
            for k in 0..=j {
                let p = pair_index(j, k);
                let trig = if (j - k) % 2 == 1 { &sin } else { &cos };
                out[p] = self.weighted[p].iter().zip(trig).map(|(a, b)| a * b).sum();
            }
        }
    }
}

/// `f^eta_{j,k}(x)` by direct quadrature, with the realness check enforced.
pub fn pattern_eval(j: usize, k: usize, eta: f64, x: f64) -> Result<f64, PatternError> {
    let eta = Efficiency::new(eta)?;
    let (hi, lo) = if j >= k { (j, k) } else { (k, j) };
    let kernel = single_pair_kernel(eta, hi, lo)?;
    let z = kernel.eval_complex(hi, lo, x);
    if z.im.abs() > IMAG_TOLERANCE {
        return Err(PatternError::ImaginaryResidue {
            j,
            k,
            x,
            residue: z.im.abs(),
        });
    }
    if !z.re.is_finite() {
        return Err(PatternError::NonFinite { j, k, x });
    }
    Ok(z.re)
}

/// Kernel restricted to a single pair (other pairs are left empty).
fn single_pair_kernel(eta: Efficiency, j: usize, k: usize) -> Result<PatternKernel, PatternError> {
    let decay = eta.decay_rate();
    let degree = (j + k + 1) as f64;
    let mut cutoff = (degree / (2.0 * decay)).sqrt() + 1.0;
    loop {
        let slope = 2.0 * decay * cutoff - degree / cutoff;
        if slope > 0.0 && radial_envelope(j, k, decay, cutoff) / slope < TAIL_TOLERANCE {
            break;
        }
        cutoff += 0.25;
    }
    let rule = FrequencyRule::new(cutoff, DEFAULT_FREQ_STEP);
    let bandwidth = j + 1;
    let mut weighted = vec![Vec::new(); pair_count(bandwidth)];
    let mut profiles = vec![Vec::new(); pair_count(bandwidth)];
    let d = j - k;
    let sign = if d.div_ceil(2) % 2 == 0 { 1.0 } else { -1.0 };
    let profile: Vec<f64> = rule.nodes.iter().map(|&t| radial_profile(j, k, decay, t)).collect();
    weighted[pair_index(j, k)] = profile
        .iter()
        .zip(&rule.weights)
        .map(|(r, w)| sign * r * w / PI)
        .collect();
    profiles[pair_index(j, k)] = profile;
    Ok(PatternKernel {
        eta,
        bandwidth,
        rule,
        weighted,
        profiles,
    })
}

/// Squared L2 norm of `f^eta_{j,k}` via Plancherel on the frequency side.
pub fn pattern_l2_norm_sq(j: usize, k: usize, eta: f64) -> Result<f64, PatternError> {
    let eta = Efficiency::new(eta)?;
    let (j, k) = if j >= k { (j, k) } else { (k, j) };
    // |profile|^2 decays twice as fast; the single-pair cutoff is ample.
    let kernel = single_pair_kernel(eta, j, k)?;
    let profile = &kernel.profiles[pair_index(j, k)];
    let half: f64 = profile
        .iter()
        .zip(&kernel.rule.weights)
        .map(|(r, w)| w * r * r)
        .sum();
    // (1/2pi) * two-sided integral of |t f~|^2
    Ok(half / PI)
}

/// Nodes in the interpolation stencil.
const STENCIL: usize = 6;

/// Tabulated pattern functions on a uniform grid with quintic interpolation.
///
/// Values are laid out grid-point-major so that all pairs at one node are
/// contiguous; interpolating every pair at a point touches six rows.
#[derive(Debug, Clone)]
pub struct PatternTable {
    kernel: PatternKernel,
    x_max: f64,
    step: f64,
    len: usize,
    pairs: usize,
    values: Vec<f64>,
}

impl PatternTable {
    pub fn build(eta: f64, bandwidth: usize, x_max: f64, step: f64) -> Result<Self, PatternError> {
        let eta = Efficiency::new(eta)?;
        if !(step.is_finite() && step > 0.0) {
            return Err(PatternError::InvalidStep(step));
        }
        if !(x_max.is_finite() && x_max > 0.0) {
            return Err(PatternError::InvalidRange(x_max));
        }
        let kernel = PatternKernel::new(eta, bandwidth)?;
        let len = (2.0 * x_max / step + 1e-9).floor() as usize + 1;
        let pairs = pair_count(bandwidth);
        let mut values = vec![0.0; len * pairs];
        for (i, row) in values.chunks_mut(pairs).enumerate() {
            kernel.eval_all(-x_max + i as f64 * step, row);
        }
        let table = PatternTable {
            kernel,
            x_max,
            step,
            len,
            pairs,
            values,
        };
        table.check_finite()?;
        Ok(table)
    }

    /// Builds with the default grid `[-8, 8]` at step `0.01`.
    pub fn with_defaults(eta: f64, bandwidth: usize) -> Result<Self, PatternError> {
        Self::build(eta, bandwidth, DEFAULT_X_MAX, DEFAULT_X_STEP)
    }

    fn check_finite(&self) -> Result<(), PatternError> {
        for (idx, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                let (i, p) = (idx / self.pairs, idx % self.pairs);
                let (j, k) = unpack_pair(p);
                return Err(PatternError::NonFinite {
                    j,
                    k,
                    x: self.grid_x(i),
                });
            }
        }
        Ok(())
    }

    pub fn eta(&self) -> Efficiency {
        self.kernel.eta
    }

    pub fn bandwidth(&self) -> usize {
        self.kernel.bandwidth
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn grid_len(&self) -> usize {
        self.len
    }

    pub fn grid_x(&self, i: usize) -> f64 {
        -self.x_max + i as f64 * self.step
    }

    pub fn kernel(&self) -> &PatternKernel {
        &self.kernel
    }

    /// Stored value at grid node `i` (`j < k` served by symmetry).
    pub fn node_value(&self, j: usize, k: usize, i: usize) -> f64 {
        let (j, k) = if j >= k { (j, k) } else { (k, j) };
        self.values[i * self.pairs + pair_index(j, k)]
    }

    /// Lagrange weights for the six nodes around `x`, or `None` when the
    /// stencil would leave the grid.
    fn stencil(&self, x: f64) -> Option<(usize, [f64; STENCIL])> {
        let pos = (x + self.x_max) / self.step;
        if !pos.is_finite() || pos < 2.0 {
            return None;
        }
        let i = pos.floor() as usize;
        if i + 3 >= self.len {
            return None;
        }
        let u = pos - i as f64;
        // nodes at offsets -2..=3 from i
        let mut w = [1.0; STENCIL];
        for (a, wa) in w.iter_mut().enumerate() {
            let oa = a as f64 - 2.0;
            for b in 0..STENCIL {
                if b != a {
                    let ob = b as f64 - 2.0;
                    *wa *= (u - ob) / (oa - ob);
                }
            }
        }
        Some((i - 2, w))
    }

    /// `f^eta_{j,k}(x)` from the table, or by direct quadrature off the grid.
    pub fn eval(&self, j: usize, k: usize, x: f64) -> f64 {
        let (j, k) = if j >= k { (j, k) } else { (k, j) };
        let p = pair_index(j, k);
        match self.stencil(x) {
            Some((base, w)) => (0..STENCIL)
                .map(|s| w[s] * self.values[(base + s) * self.pairs + p])
                .sum(),
            None => self.kernel.eval(j, k, x),
        }
    }

    /// Evaluates all stored pairs at `x` into `out` (packed order).
    pub fn eval_all(&self, x: f64, out: &mut [f64]) {
        let out = &mut out[..self.pairs];
        match self.stencil(x) {
            Some((base, w)) => {
                let rows = &self.values[base * self.pairs..(base + STENCIL) * self.pairs];
                let (r0, rest) = rows.split_at(self.pairs);
                let (r1, rest) = rest.split_at(self.pairs);
                let (r2, rest) = rest.split_at(self.pairs);
                let (r3, rest) = rest.split_at(self.pairs);
                let (r4, r5) = rest.split_at(self.pairs);
                for p in 0..self.pairs {
                    out[p] = w[0] * r0[p] + w[1] * r1[p] + w[2] * r2[p] + w[3] * r3[p] + w[4] * r4[p] + w[5] * r5[p];
                }
            }
            None => self.kernel.eval_all(x, out),
        }
    }

    /// CSV export with header `j,k,x,value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "j,k,x,value")?;
        for j in 0..self.bandwidth() {
            for k in 0..=j {
                let p = pair_index(j, k);
                for i in 0..self.len {
                    writeln!(out, "{},{},{},{:.17e}", j, k, self.grid_x(i), self.values[i * self.pairs + p])?;
                }
            }
        }
        Ok(())
    }

    const MAGIC: &'static [u8; 8] = b"QHTPTAB1";

    /// Binary cache image: magic, parameters, then little-endian values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(48 + 8 * self.values.len());
        buf.extend_from_slice(Self::MAGIC);
        buf.extend_from_slice(&self.eta().value().to_le_bytes());
        buf.extend_from_slice(&(self.bandwidth() as u64).to_le_bytes());
        buf.extend_from_slice(&self.x_max.to_le_bytes());
        buf.extend_from_slice(&self.step.to_le_bytes());
        buf.extend_from_slice(&(self.len as u64).to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    /// Restores a table from [`PatternTable::to_bytes`] output; the
    /// parameters must match the requested ones exactly.
    pub fn from_bytes(bytes: &[u8], eta: f64, bandwidth: usize, x_max: f64, step: f64) -> Result<Self, PatternError> {
        let bad = |msg: &str| PatternError::Cache(msg.to_string());
        if bytes.len() < 48 || &bytes[..8] != Self::MAGIC {
            return Err(bad("missing header"));
        }
        let word = |i: usize| -> [u8; 8] { bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes") };
        let header_eta = f64::from_le_bytes(word(0));
        let header_bw = u64::from_le_bytes(word(1)) as usize;
        let header_xmax = f64::from_le_bytes(word(2));
        let header_step = f64::from_le_bytes(word(3));
        let len = u64::from_le_bytes(word(4)) as usize;
        if header_eta != eta || header_bw != bandwidth || header_xmax != x_max || header_step != step {
            return Err(bad("parameter mismatch"));
        }
        let pairs = pair_count(bandwidth);
        let body = &bytes[48..];
        if body.len() != 8 * len * pairs {
            return Err(bad("truncated body"));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let kernel = PatternKernel::new(Efficiency::new(eta)?, bandwidth)?;
        let table = PatternTable {
            kernel,
            x_max,
            step,
            len,
            pairs,
            values,
        };
        table.check_finite()?;
        Ok(table)
    }
}

fn unpack_pair(p: usize) -> (usize, usize) {
    let mut j = 0;
    while pair_index(j + 1, 0) <= p {
        j += 1;
    }
    (j, p - pair_index(j, 0))
}

/// Imaginary error function by its power series; accurate for `|x| <= 3`.
fn erfi_small(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= x2 / n;
        let contrib = term / (2.0 * n + 1.0);
        sum += contrib;
        if contrib.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    2.0 / PI.sqrt() * sum
}

/// Irregular wave functions `phi_0(x), ..., phi_{n-1}(x)`.
///
/// `phi_0 = pi^{3/4} e^{-x^2/2} Erfi(x)`; the rest follow from the raising
/// relation and the same three-term recurrence as the regular solutions.
fn irregular_values(x: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    out[0] = PI.powf(0.75) * (-0.5 * x * x).exp() * erfi_small(x);
    if n > 1 {
        out[1] = std::f64::consts::SQRT_2 * (x * out[0] - PI.powf(0.25) * (0.5 * x * x).exp());
    }
    for k in 1..n.saturating_sub(1) {
        let kf = k as f64;
        out[k + 1] = x * (2.0 / (kf + 1.0)).sqrt() * out[k] - (kf / (kf + 1.0)).sqrt() * out[k - 1];
    }
    out
}

/// Ideal-detection pattern function from products of regular and irregular
/// wave functions,
/// `2x psi_k phi_j - sqrt(2(k+1)) psi_{k+1} phi_j - sqrt(2(j+1)) psi_k phi_{j+1}`.
///
/// Cross-check only. This physics convention differs from [`pattern_eval`]
/// by the reflection `x -> -x`, i.e. by `(-1)^{j-k}`.
pub fn recurrence_check(j: usize, k: usize, x: f64) -> Result<f64, PatternError> {
    if j < k {
        return Err(PatternError::IndexOrder { j, k });
    }
    if j > 5 || !(x.abs() <= 3.0) {
        return Err(PatternError::RecurrenceRange { j, x });
    }
    let mut psi = vec![0.0; k + 2];
    fock_values_into(x, &mut psi);
    let phi = irregular_values(x, j + 2);
    Ok(2.0 * x * psi[k] * phi[j]
        - (2.0 * (k as f64 + 1.0)).sqrt() * psi[k + 1] * phi[j]
        - (2.0 * (j as f64 + 1.0)).sqrt() * psi[k] * phi[j + 1])
}
