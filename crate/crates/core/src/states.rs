//! Truncated density matrices in the Fock basis for the reference states
//! (vacuum, single photon, coherent, squeezed, thermal, Schrödinger cat).

use std::fmt;
use std::io::{self, Write};

use nalgebra::{Complex, DMatrix};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Truncation used for distance ground truth.
pub const DEFAULT_DIM: usize = 40;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StateError {
    #[error("dimension must be at least 1")]
    EmptyDimension,
    #[error("squeezed state requires M >= sinh^2(xi), got M = {m}, sinh^2(xi) = {bound}")]
    SqueezedPhotonNumber { m: f64, bound: f64 },
    #[error("squeezed state requires xi > 0 for a real Hermite argument, got {0}")]
    SqueezedParameter(f64),
    #[error("thermal state requires beta > 0, got {0}")]
    ThermalBeta(f64),
    #[error("cat state requires q0 > 0, got {0}")]
    CatAmplitude(f64),
    #[error("state parameter must be finite")]
    NonFinite,
    #[error("squeezed-state normalization did not converge")]
    SqueezedNormalization,
}

/// State descriptor, serialized as e.g. `{"kind": "coherent", "q0": 3.0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateKind {
    Vacuum,
    SinglePhoton,
    Coherent { q0: f64 },
    Squeezed { m: f64, xi: f64 },
    Thermal { beta: f64 },
    Cat { q0: f64 },
}

impl StateKind {
    pub fn validate(&self) -> Result<(), StateError> {
        match *self {
            StateKind::Vacuum | StateKind::SinglePhoton => Ok(()),
            StateKind::Coherent { q0 } => finite(&[q0]),
            StateKind::Thermal { beta } => {
                finite(&[beta])?;
                if beta > 0.0 {
                    Ok(())
                } else {
                    Err(StateError::ThermalBeta(beta))
                }
            }
            StateKind::Cat { q0 } => {
                finite(&[q0])?;
                if q0 > 0.0 {
                    Ok(())
                } else {
                    Err(StateError::CatAmplitude(q0))
                }
            }
            StateKind::Squeezed { m, xi } => {
                finite(&[m, xi])?;
                let bound = xi.sinh().powi(2);
                if m < bound {
                    return Err(StateError::SqueezedPhotonNumber { m, bound });
                }
                if xi <= 0.0 {
                    return Err(StateError::SqueezedParameter(xi));
                }
                Ok(())
            }
        }
    }

    /// Parses `vacuum`, `single_photon`, `coherent:3`, `cat:3`, `thermal:1`,
    /// `squeezed:M,xi`, or a JSON object.
    pub fn parse(text: &str) -> Result<Self, String> {
        let text = text.trim();
        if text.starts_with('{') {
            let kind: StateKind = serde_json::from_str(text).map_err(|e| e.to_string())?;
            kind.validate().map_err(|e| e.to_string())?;
            return Ok(kind);
        }
        let (name, args) = match text.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (text, None),
        };
        let nums = |a: Option<&str>, want: usize| -> Result<Vec<f64>, String> {
            let a = a.ok_or_else(|| format!("state `{name}` needs {want} parameter(s)"))?;
            let v = a
                .split(',')
                .map(|s| parse_number(s.trim()))
                .collect::<Result<Vec<_>, _>>()?;
            if v.len() != want {
                return Err(format!("state `{name}` needs {want} parameter(s), got {}", v.len()));
            }
            Ok(v)
        };
        let kind = match name {
            "vacuum" if args.is_none() => StateKind::Vacuum,
            "single_photon" if args.is_none() => StateKind::SinglePhoton,
            "coherent" => StateKind::Coherent { q0: nums(args, 1)?[0] },
            "cat" => StateKind::Cat { q0: nums(args, 1)?[0] },
            "thermal" => StateKind::Thermal { beta: nums(args, 1)?[0] },
            "squeezed" => {
                let v = nums(args, 2)?;
                StateKind::Squeezed { m: v[0], xi: v[1] }
            }
            _ => return Err(format!("unrecognized state descriptor `{text}`")),
        };
        kind.validate().map_err(|e| e.to_string())?;
        Ok(kind)
    }
}

/// Accepts plain numbers and `sqrt(v)`.
fn parse_number(s: &str) -> Result<f64, String> {
    if let Some(inner) = s.strip_prefix("sqrt(").and_then(|r| r.strip_suffix(')')) {
        return parse_number(inner).map(f64::sqrt);
    }
    s.parse::<f64>().map_err(|_| format!("not a number: `{s}`"))
}

fn finite(vals: &[f64]) -> Result<(), StateError> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StateError::NonFinite)
    }
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateKind::Vacuum => write!(f, "vacuum"),
            StateKind::SinglePhoton => write!(f, "single_photon"),
            StateKind::Coherent { q0 } => write!(f, "coherent:{q0}"),
            StateKind::Squeezed { m, xi } => write!(f, "squeezed:{m},{xi}"),
            StateKind::Thermal { beta } => write!(f, "thermal:{beta}"),
            StateKind::Cat { q0 } => write!(f, "cat:{q0}"),
        }
    }
}

/// Truncated density matrix `rho_{j,k}`, `0 <= j, k < dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dim: usize,
    entries: Vec<Complex64>,
    kind: StateKind,
}

/// `e^{-a^2/2} a^j / sqrt(j!)` for `j < n`, with `a = q0 / sqrt(2)`.
fn coherent_amplitudes(q0: f64, n: usize) -> Vec<f64> {
    let a = q0 / std::f64::consts::SQRT_2;
    let mut amp = Vec::with_capacity(n);
    let mut cur = (-0.5 * a * a).exp();
    for j in 0..n {
        amp.push(cur);
        cur *= a / ((j + 1) as f64).sqrt();
    }
    amp
}

/// Builds the truncated density matrix of a reference state.
pub fn make_state(kind: StateKind, dim: usize) -> Result<DensityMatrix, StateError> {
    if dim == 0 {
        return Err(StateError::EmptyDimension);
    }
    kind.validate()?;
    let mut entries = vec![Complex64::new(0.0, 0.0); dim * dim];
    let mut set = |j: usize, k: usize, v: f64| entries[j * dim + k] = Complex64::new(v, 0.0);
    match kind {
        StateKind::Vacuum => set(0, 0, 1.0),
        StateKind::SinglePhoton => {
            if dim > 1 {
                set(1, 1, 1.0)
            }
        }
        StateKind::Coherent { q0 } => {
            let amp = coherent_amplitudes(q0, dim);
            for j in 0..dim {
                for k in 0..dim {
                    set(j, k, amp[j] * amp[k]);
                }
            }
        }
        StateKind::Thermal { beta } => {
            for j in 0..dim {
                set(j, j, (1.0 - (-beta).exp()) * (-beta * j as f64).exp());
            }
        }
        StateKind::Cat { q0 } => {
            // 2 (q0/sqrt2)^{j+k} / (sqrt(j!k!) (e^{q0^2/2} + e^{-q0^2/2})), j, k even
            let amp = coherent_amplitudes(q0, dim);
            let scale = 2.0 / (1.0 + (-q0 * q0).exp());
            for j in (0..dim).step_by(2) {
                for k in (0..dim).step_by(2) {
                    set(j, k, scale * (amp[j] * amp[k]));
                }
            }
        }
        StateKind::Squeezed { m, xi } => {
            let v = squeezed_vector(m, xi, dim)?;
            for j in 0..dim {
                for k in 0..dim {
                    set(j, k, v[j] * v[k]);
                }
            }
        }
    }
    Ok(DensityMatrix { dim, entries, kind })
}

/// Unit-trace amplitudes `sqrt(C) (tanh(xi)/2)^j H_j(delta) / sqrt(j!)`.
///
/// `C(M, xi)` is fixed numerically: the series is summed until its terms
/// are negligible and the result rescaled to trace one.
fn squeezed_vector(m: f64, xi: f64, dim: usize) -> Result<Vec<f64>, StateError> {
    let alpha = (m - xi.sinh().powi(2)).sqrt() / (xi.cosh() - xi.sinh());
    let delta = (alpha / (2.0 * xi).sinh()).sqrt();
    // With h_j = H_j(delta) / sqrt(2^j j!): amplitude = (tanh(xi)/sqrt2)^j h_j.
    let ratio = xi.tanh() / std::f64::consts::SQRT_2;
    let mut amps = Vec::new();
    let (mut h_prev, mut h_cur) = (0.0, 1.0);
    let mut weight = 1.0;
    let mut tail_small = 0;
    for j in 0..100_000usize {
        let a = weight * h_cur;
        amps.push(a);
        if j >= dim {
            if a * a < 1e-20 * amps.iter().map(|x| x * x).sum::<f64>() {
                tail_small += 1;
                if tail_small >= 10 {
                    break;
                }
            } else {
                tail_small = 0;
            }
        }
        let jf = j as f64;
        let h_next = (2.0 / (jf + 1.0)).sqrt() * delta * h_cur - (jf / (jf + 1.0)).sqrt() * h_prev;
        h_prev = h_cur;
        h_cur = h_next;
        weight *= ratio;
    }
    if tail_small < 10 {
        return Err(StateError::SqueezedNormalization);
    }
    let norm = amps.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(StateError::SqueezedNormalization);
    }
    amps.truncate(dim);
    Ok(amps.into_iter().map(|a| a / norm).collect())
}

impl DensityMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> StateKind {
        self.kind
    }

    /// Entry `rho_{j,k}`, zero outside the truncation.
    pub fn get(&self, j: usize, k: usize) -> Complex64 {
        if j < self.dim && k < self.dim {
            self.entries[j * self.dim + k]
        } else {
            Complex64::new(0.0, 0.0)
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|j| self.get(j, j).re).sum()
    }

    pub fn is_hermitian(&self) -> bool {
        (0..self.dim).all(|j| (0..self.dim).all(|k| self.get(j, k) == self.get(k, j).conj()))
    }

    /// Smallest eigenvalue of the truncated Hermitian matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let m = DMatrix::from_fn(self.dim, self.dim, |j, k| {
            let v = self.get(j, k);
            Complex::new(v.re, v.im)
        });
        m.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// CSV export with header `j,k,re,im`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "j,k,re,im")?;
        for j in 0..self.dim {
            for k in 0..self.dim {
                let v = self.get(j, k);
                writeln!(out, "{j},{k},{:.17e},{:.17e}", v.re, v.im)?;
            }
        }
        Ok(())
    }
}

/// Squared Hilbert-Schmidt distance; the smaller matrix is zero-padded.
pub fn l2_distance_sq(rho: &DensityMatrix, tau: &DensityMatrix) -> f64 {
    let dim = rho.dim.max(tau.dim);
    let mut acc = 0.0;
    for j in 0..dim {
        for k in 0..dim {
            acc += (rho.get(j, k) - tau.get(j, k)).norm_sqr();
        }
    }
    acc
}

/// `Tr(rho^2) = sum |rho_{j,k}|^2` for Hermitian `rho`.
pub fn purity(rho: &DensityMatrix) -> f64 {
    rho.entries.iter().map(|v| v.norm_sqr()).sum()
}

/// Parameters `(B, r, L)` of the decay class `|rho_{j,k}| <= L exp(-B (j+k)^{r/2})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateClassParams {
    b: f64,
    r: f64,
    l: f64,
}

impl StateClassParams {
    pub fn new(b: f64, r: f64, l: f64) -> Result<Self, String> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(format!("B must be positive, got {b}"));
        }
        if !(r > 0.0 && r <= 2.0) {
            return Err(format!("r must lie in (0, 2], got {r}"));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(format!("L must be positive, got {l}"));
        }
        Ok(StateClassParams { b, r, l })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn bound(&self, j: usize, k: usize) -> f64 {
        self.l * (-self.b * ((j + k) as f64).powf(self.r / 2.0)).exp()
    }
}

/// `max_{j,k} |rho_{j,k}| - L exp(-B (j+k)^{r/2})`; nonpositive inside the class.
pub fn class_margin(rho: &DensityMatrix, params: &StateClassParams) -> f64 {
    let mut margin = f64::NEG_INFINITY;
    for j in 0..rho.dim {
        for k in 0..rho.dim {
            margin = margin.max(rho.get(j, k).norm() - params.bound(j, k));
        }
    }
    margin
}
