//! Simulation of noisy homodyne records `(Y, Phi)`.
//!
//! Phases are uniform on `[0, pi]`, the noiseless quadrature `X` is drawn
//! from the state's conditional density `p(x | phi)`, and detection losses
//! add Gaussian noise: `Y = sqrt(eta) X + sqrt((1 - eta) / 2) xi`.
//!
//! Every record owns a ChaCha8 stream selected by its index, so a dataset is
//! a pure function of `(state, n, eta, seed)` however the work is sharded.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::pattern::{Efficiency, PatternError};
use crate::seed::expand_seed;
use crate::states::{StateError, StateKind};

/// Envelope constant for the single-photon sampler (`c * N(0, 1)`).
const PHOTON_ENVELOPE: f64 = 3.0;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Efficiency(#[from] PatternError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("no validated quadrature density for {0}")]
    Unsupported(StateKind),
    #[error("phase {0} outside [0, pi]")]
    PhaseOutOfRange(f64),
    #[error("sample count must be at least 1")]
    Empty,
    #[error("rejection envelope violated for {state} at x = {x}: density {density:e} > envelope {envelope:e}")]
    EnvelopeViolation {
        state: StateKind,
        x: f64,
        density: f64,
        envelope: f64,
    },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("dataset line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// One measurement: quadrature reading and phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QhtRecord {
    pub y: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QhtDataset {
    records: Vec<QhtRecord>,
    eta: Efficiency,
    state: StateKind,
    seed: u64,
}

impl QhtDataset {
    /// Wraps externally produced records after checking the phase invariant.
    pub fn from_records(records: Vec<QhtRecord>, eta: Efficiency, state: StateKind, seed: u64) -> Result<Self, SimError> {
        if records.is_empty() {
            return Err(SimError::Empty);
        }
        if let Some(r) = records.iter().find(|r| !(0.0..=PI).contains(&r.phi) || !r.y.is_finite()) {
            return Err(SimError::PhaseOutOfRange(r.phi));
        }
        Ok(QhtDataset {
            records,
            eta,
            state,
            seed,
        })
    }

    pub fn records(&self) -> &[QhtRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn eta(&self) -> Efficiency {
        self.eta
    }

    pub fn state(&self) -> StateKind {
        self.state
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

fn check_phase(phi: f64) -> Result<(), SimError> {
    if (0.0..=PI).contains(&phi) {
        Ok(())
    } else {
        Err(SimError::PhaseOutOfRange(phi))
    }
}

fn gaussian(x: f64, mean: f64) -> f64 {
    (-(x - mean) * (x - mean)).exp() / PI.sqrt()
}

/// Conditional quadrature density `p(x | phi)` of a reference state.
pub fn density_eval(state: &StateKind, x: f64, phi: f64) -> Result<f64, SimError> {
    check_phase(phi)?;
    state.validate()?;
    let p = match *state {
        StateKind::Vacuum => gaussian(x, 0.0),
        StateKind::SinglePhoton => 2.0 * x * x * gaussian(x, 0.0),
        StateKind::Coherent { q0 } => gaussian(x, q0 * phi.cos()),
        StateKind::Thermal { beta } => {
            let t = (0.5 * beta).tanh();
            (t / PI).sqrt() * (-x * x * t).exp()
        }
        StateKind::Cat { q0 } => {
            let a = q0 * phi.cos();
            let interference = 2.0 * (2.0 * q0 * x * phi.sin()).cos() * (-x * x - a * a).exp();
            ((-(x - a) * (x - a)).exp() + (-(x + a) * (x + a)).exp() + interference)
                / (2.0 * PI.sqrt() * (1.0 + (-q0 * q0).exp()))
        }
        StateKind::Squeezed { .. } => return Err(SimError::Unsupported(*state)),
    };
    Ok(p)
}

/// Draws `X ~ p(. | phi)`.
///
/// Gaussian states are sampled directly. The single photon uses the envelope
/// `3 N(0, 1)`; the cat state uses the two-component coherent mixture scaled
/// by `2 / (1 + e^{-q0^2})`, which dominates the interference term.
pub fn sample_quadrature<R: Rng + ?Sized>(state: &StateKind, phi: f64, rng: &mut R) -> Result<f64, SimError> {
    check_phase(phi)?;
    let half_normal = |rng: &mut R| -> f64 { rng.sample::<f64, _>(StandardNormal) * std::f64::consts::FRAC_1_SQRT_2 };
    match *state {
        StateKind::Vacuum => Ok(half_normal(rng)),
        StateKind::Coherent { q0 } => Ok(q0 * phi.cos() + half_normal(rng)),
        StateKind::Thermal { beta } => {
            let sd = (0.5 / (0.5 * beta).tanh()).sqrt();
            Ok(sd * rng.sample::<f64, _>(StandardNormal))
        }
        StateKind::SinglePhoton => loop {
            let x: f64 = rng.sample(StandardNormal);
            let envelope = PHOTON_ENVELOPE * (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
            let density = 2.0 * x * x * gaussian(x, 0.0);
            if density > envelope {
                return Err(SimError::EnvelopeViolation {
                    state: *state,
                    x,
                    density,
                    envelope,
                });
            }
            if rng.random::<f64>() * envelope < density {
                return Ok(x);
            }
        },
        StateKind::Cat { q0 } => {
            if !(q0 > 0.0) {
                return Err(StateError::CatAmplitude(q0).into());
            }
            let a = q0 * phi.cos();
            let scale = 2.0 / (1.0 + (-q0 * q0).exp());
            loop {
                let centre = if rng.random::<bool>() { a } else { -a };
                let x = centre + half_normal(rng);
                let mixture = 0.5 * (gaussian(x, a) + gaussian(x, -a));
                let envelope = scale * mixture;
                let density = density_eval(state, x, phi)?;
                if density > envelope * (1.0 + 1e-12) {
                    return Err(SimError::EnvelopeViolation {
                        state: *state,
                        x,
                        density,
                        envelope,
                    });
                }
                if rng.random::<f64>() * envelope < density {
                    return Ok(x);
                }
            }
        }
        StateKind::Squeezed { .. } => Err(SimError::Unsupported(*state)),
    }
}

/// Random stream of record `index` within the dataset keyed by `seed`.
pub fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(expand_seed(seed));
    rng.set_stream(index);
    rng
}

fn generate_record(state: &StateKind, eta: Efficiency, seed: u64, index: u64) -> Result<QhtRecord, SimError> {
    let mut rng = record_rng(seed, index);
    let phi = rng.random::<f64>() * PI;
    let x = sample_quadrature(state, phi, &mut rng)?;
    let y = if eta.is_ideal() {
        x
    } else {
        let noise: f64 = rng.sample(StandardNormal);
        eta.value().sqrt() * x + ((1.0 - eta.value()) / 2.0).sqrt() * noise
    };
    Ok(QhtRecord { y, phi })
}

/// Simulates `n` i.i.d. noisy records from `state`.
pub fn generate(state: StateKind, n: usize, eta: f64, seed: u64) -> Result<QhtDataset, SimError> {
    let eta = Efficiency::new(eta)?;
    if n == 0 {
        return Err(SimError::Empty);
    }
    state.validate()?;
    if matches!(state, StateKind::Squeezed { .. }) {
        return Err(SimError::Unsupported(state));
    }
    let records = (0..n as u64)
        .into_par_iter()
        .map(|i| generate_record(&state, eta, seed, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(QhtDataset {
        records,
        eta,
        state,
        seed,
    })
}

/// Writes the dataset as CSV: a `# qht-dataset v1, ...` header, then `y,phi` rows.
pub fn save_dataset(ds: &QhtDataset, path: &Path) -> Result<(), SimError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_dataset(ds, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_dataset<W: Write>(ds: &QhtDataset, out: &mut W) -> io::Result<()> {
    writeln!(
        out,
        "# qht-dataset v1, state={}, eta={}, n={}, seed={}",
        ds.state,
        ds.eta.value(),
        ds.records.len(),
        ds.seed
    )?;
    for r in &ds.records {
        writeln!(out, "{:.16e},{:.16e}", r.y, r.phi)?;
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<QhtDataset, SimError> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<QhtDataset, SimError> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.ok_or(SimError::Format {
        line: 1,
        msg: "empty file".into(),
    })?;
    let bad_header = |msg: String| SimError::Format { line: 1, msg };
    let body = header
        .strip_prefix("# qht-dataset v1, ")
        .ok_or_else(|| bad_header("expected `# qht-dataset v1, ...` header".into()))?;
    let (mut state, mut eta, mut n, mut seed) = (None, None, None, None);
    for field in body.split(", ") {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| bad_header(format!("malformed header field `{field}`")))?;
        match key {
            "state" => state = Some(StateKind::parse(value).map_err(bad_header)?),
            "eta" => {
                let v: f64 = value.parse().map_err(|_| bad_header(format!("bad eta `{value}`")))?;
                eta = Some(Efficiency::new(v).map_err(|e| bad_header(e.to_string()))?);
            }
            "n" => n = Some(value.parse::<usize>().map_err(|_| bad_header(format!("bad n `{value}`")))?),
            "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad_header(format!("bad seed `{value}`")))?),
            other => return Err(bad_header(format!("unknown header field `{other}`"))),
        }
    }
    let missing = |name: &str| bad_header(format!("header lacks `{name}`"));
    let (state, eta, n, seed) = (
        state.ok_or_else(|| missing("state"))?,
        eta.ok_or_else(|| missing("eta"))?,
        n.ok_or_else(|| missing("n"))?,
        seed.ok_or_else(|| missing("seed"))?,
    );
    let mut records = Vec::with_capacity(n);
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let lineno = idx + 2;
        let trimmed = line.trim();
        if trimmed.is_empty() || (records.is_empty() && trimmed == "y,phi") {
            continue;
        }
        let fail = |msg: String| SimError::Format { line: lineno, msg };
        let (y, phi) = trimmed
            .split_once(',')
            .ok_or_else(|| fail("expected `y,phi`".into()))?;
        let y: f64 = y.trim().parse().map_err(|_| fail(format!("bad y `{y}`")))?;
        let phi: f64 = phi.trim().parse().map_err(|_| fail(format!("bad phi `{phi}`")))?;
        if !y.is_finite() {
            return Err(fail(format!("non-finite y `{y}`")));
        }
        if !(0.0..=PI).contains(&phi) {
            return Err(fail(format!("phase {phi} outside [0, pi]")));
        }
        records.push(QhtRecord { y, phi });
    }
    if records.len() != n {
        return Err(bad_header(format!("header says n={n} but file has {} records", records.len())));
    }
    QhtDataset::from_records(records, eta, state, seed)
}
