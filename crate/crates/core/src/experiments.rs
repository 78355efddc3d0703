//! Experiment specs, the pattern-table cache, and the calibrate-then-evaluate
//! driver behind `qht-gof run`.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::estimator::{EstimatorConfig, EstimatorError};
use crate::pattern::{Efficiency, PatternError, PatternTable, DEFAULT_X_MAX, DEFAULT_X_STEP};
use crate::seed::SeedStream;
use crate::states::{l2_distance_sq, make_state, StateError, StateKind, DEFAULT_DIM};
use crate::testing::{quantile_threshold, simulate_replicates, MonteCarloReport, TestingError};

pub const SCHEMA_VERSION: u32 = 1;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Replicates per flushed batch of the replicate CSVs.
pub const FLUSH_BATCH: usize = 50;
pub const FULL_SCALE_RUNS: usize = 1000;
pub const CACHE_ENV: &str = "QHT_GOF_CACHE";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid spec at `{path}`: {msg}")]
    Spec { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Testing(#[from] TestingError),
}

impl ExperimentError {
    /// Whether the failure stems from bad input rather than from running.
    pub fn is_validation(&self) -> bool {
        matches!(self, ExperimentError::Spec { .. })
    }
}

fn spec_error(path: impl Into<String>, msg: impl fmt::Display) -> ExperimentError {
    ExperimentError::Spec {
        path: path.into(),
        msg: msg.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseId {
    A,
    B,
    #[serde(rename = "custom")]
    Custom,
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseId::A => "A",
            CaseId::B => "B",
            CaseId::Custom => "custom",
        })
    }
}

fn default_runs() -> usize {
    200
}

fn default_alphas() -> Vec<f64> {
    vec![0.01, 0.05]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("qht-gof-out")
}

/// JSON experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub case: CaseId,
    pub tau: StateKind,
    pub alternatives: Vec<StateKind>,
    pub eta: f64,
    #[serde(rename = "N")]
    pub bandwidth: usize,
    pub n: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentSpec {
    /// Parses and validates; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: ExperimentSpec = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            spec_error(path, e.into_inner())
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| spec_error(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(spec_error(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        Efficiency::new(self.eta).map_err(|e| spec_error("eta", e))?;
        if self.bandwidth == 0 {
            return Err(spec_error("N", "bandwidth must be at least 1"));
        }
        if self.n < 2 {
            return Err(spec_error("n", format!("need at least 2 records, got {}", self.n)));
        }
        if self.runs < 100 {
            return Err(spec_error("runs", format!("need at least 100 runs, got {}", self.runs)));
        }
        check_sampled_state("tau", &self.tau)?;
        if self.alternatives.is_empty() {
            return Err(spec_error("alternatives", "at least one alternative is required"));
        }
        for (i, alt) in self.alternatives.iter().enumerate() {
            check_sampled_state(&format!("alternatives[{i}]"), alt)?;
        }
        if self.alphas.is_empty() {
            return Err(spec_error("alphas", "at least one level is required"));
        }
        for (i, &alpha) in self.alphas.iter().enumerate() {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(spec_error(format!("alphas[{i}]"), format!("level must lie in (0, 1), got {alpha}")));
            }
            if alpha * (self.runs as f64) < 1.0 {
                return Err(spec_error(
                    format!("alphas[{i}]"),
                    format!("level {alpha} needs at least {} runs", (1.0 / alpha).ceil()),
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, so overrides change the hash.
    /// The output directory is left out: it does not affect any result.
    pub fn digest(&self) -> String {
        let mut content = self.clone();
        content.output_dir = PathBuf::new();
        let canonical = serde_json::to_vec(&content).expect("spec serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            version: format!("qht-gof {VERSION}"),
            spec_sha256: self.digest(),
            seed: self.seed,
        }
    }
}

fn check_sampled_state(path: &str, state: &StateKind) -> Result<(), ExperimentError> {
    state.validate().map_err(|e| spec_error(path, e))?;
    if matches!(state, StateKind::Squeezed { .. }) {
        return Err(spec_error(path, "squeezed states cannot be simulated"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub version: String,
    pub spec_sha256: String,
    pub seed: u64,
}

impl Provenance {
    fn csv_line(&self) -> String {
        format!("# {} spec_sha256={} seed={}", self.version, self.spec_sha256, self.seed)
    }
}

/// Builds the default-grid table, reusing a cached image from the
/// directory named by `QHT_GOF_CACHE` when present.
pub fn load_or_build_table(eta: f64, bandwidth: usize) -> Result<PatternTable, ExperimentError> {
    match std::env::var_os(CACHE_ENV) {
        Some(dir) if !dir.is_empty() => cached_table(Path::new(&dir), eta, bandwidth),
        _ => Ok(PatternTable::with_defaults(eta, bandwidth)?),
    }
}

/// Table from `dir`, or freshly built and written there.
pub fn cached_table(dir: &Path, eta: f64, bandwidth: usize) -> Result<PatternTable, ExperimentError> {
    let name = format!(
        "pattern-eta{:016x}-N{bandwidth}-x{:016x}-s{:016x}.bin",
        eta.to_bits(),
        DEFAULT_X_MAX.to_bits(),
        DEFAULT_X_STEP.to_bits()
    );
    let path = dir.join(name);
    if let Ok(bytes) = fs::read(&path) {
        if let Ok(table) = PatternTable::from_bytes(&bytes, eta, bandwidth, DEFAULT_X_MAX, DEFAULT_X_STEP) {
            return Ok(table);
        }
    }
    let table = PatternTable::with_defaults(eta, bandwidth)?;
    fs::create_dir_all(dir)?;
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, table.to_bytes())?;
    fs::rename(&tmp, &path)?;
    Ok(table)
}

/// One summary row: an alternative tested at one level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub case: CaseId,
    pub state: String,
    pub tau: String,
    pub eta: f64,
    #[serde(rename = "N")]
    pub bandwidth: usize,
    pub n: usize,
    pub alpha: f64,
    pub nu: f64,
    pub runs: usize,
    pub median: f64,
    pub mse: f64,
    pub level_or_power: f64,
    pub seed: u64,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    row: &'a ReportRow,
}

/// Everything a run produced, mirroring the files written.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub calibration: MonteCarloReport,
    /// `(alpha, nu)` in spec order.
    pub thresholds: Vec<(f64, f64)>,
    /// One report per alternative, in spec order.
    pub reports: Vec<MonteCarloReport>,
    pub rows: Vec<ReportRow>,
}

fn write_replicates(
    path: &Path,
    provenance: &Provenance,
    label: &str,
    runs: usize,
    mut next_batch: impl FnMut(std::ops::Range<u64>) -> Result<Vec<f64>, ExperimentError>,
) -> Result<Vec<f64>, ExperimentError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", provenance.csv_line())?;
    writeln!(out, "# state={label}")?;
    writeln!(out, "replicate,mn")?;
    out.flush()?;
    let mut values = Vec::with_capacity(runs);
    let mut start = 0u64;
    while (start as usize) < runs {
        let end = (start + FLUSH_BATCH as u64).min(runs as u64);
        let batch = next_batch(start..end)?;
        for (i, v) in (start..end).zip(&batch) {
            writeln!(out, "{i},{v:.17e}")?;
        }
        out.flush()?;
        values.extend(batch);
        start = end;
    }
    Ok(values)
}

fn slug(state: &StateKind) -> String {
    state
        .to_string()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect()
}

/// Calibrates thresholds under `tau`, then evaluates every alternative on
/// its own seed stream. Replicate CSVs are flushed batch by batch, so an
/// interrupted run leaves every completed batch on disk.
pub fn run(spec: &ExperimentSpec) -> Result<RunOutcome, ExperimentError> {
    spec.validate()?;
    let provenance = spec.provenance();
    let dir = &spec.output_dir;
    fs::create_dir_all(dir)?;

    let table = Arc::new(load_or_build_table(spec.eta, spec.bandwidth)?);
    let dim = DEFAULT_DIM.max(spec.bandwidth);
    let tau = make_state(spec.tau, dim)?;
    let cfg = EstimatorConfig::new(tau.clone(), table)?;

    let calib_values = write_replicates(
        &dir.join("calibration.csv"),
        &provenance,
        &spec.tau.to_string(),
        spec.runs,
        |range| Ok(simulate_replicates(spec.tau, &cfg, spec.n, range, spec.seed, SeedStream::Calibration)?),
    )?;
    let thresholds: Vec<(f64, f64)> = spec
        .alphas
        .iter()
        .map(|&a| (a, quantile_threshold(&calib_values, a)))
        .collect();
    {
        let mut out = BufWriter::new(File::create(dir.join("thresholds.csv"))?);
        writeln!(out, "{}", provenance.csv_line())?;
        writeln!(out, "alpha,nu")?;
        for (a, nu) in &thresholds {
            writeln!(out, "{a},{nu:.17e}")?;
        }
        out.flush()?;
    }
    let calibration = MonteCarloReport::from_values(calib_values, 0.0, spec.seed);

    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for (i, &alt) in spec.alternatives.iter().enumerate() {
        let stream = SeedStream::Evaluation(i as u32);
        let values = write_replicates(
            &dir.join(format!("replicates_{i}_{}.csv", slug(&alt))),
            &provenance,
            &alt.to_string(),
            spec.runs,
            |range| Ok(simulate_replicates(alt, &cfg, spec.n, range, spec.seed, stream)?),
        )?;
        let truth = l2_distance_sq(&make_state(alt, dim)?, &tau);
        let report = MonteCarloReport::from_values(values, truth, spec.seed);
        for &(alpha, nu) in &thresholds {
            let row = ReportRow {
                case: spec.case,
                state: alt.to_string(),
                tau: spec.tau.to_string(),
                eta: spec.eta,
                bandwidth: spec.bandwidth,
                n: spec.n,
                alpha,
                nu,
                runs: report.runs,
                median: report.median,
                mse: report.mse,
                level_or_power: report.rejection_rate(nu),
                seed: spec.seed,
            };
            let file = File::create(dir.join(format!("report_{i}_{}_alpha{alpha}.json", slug(&alt))))?;
            let mut out = BufWriter::new(file);
            serde_json::to_writer_pretty(
                &mut out,
                &ReportFile {
                    provenance: &provenance,
                    row: &row,
                },
            )
            .map_err(io::Error::from)?;
            writeln!(out)?;
            out.flush()?;
            rows.push(row);
        }
        reports.push(report);
    }
    write_summary(&dir.join("summary.csv"), &provenance, &rows)?;
    Ok(RunOutcome {
        calibration,
        thresholds,
        reports,
        rows,
    })
}

fn write_summary(path: &Path, provenance: &Provenance, rows: &[ReportRow]) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", provenance.csv_line())?;
    writeln!(out, "case,state,tau,eta,N,n,alpha,nu,runs,median,mse,level_or_power,seed")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{:.6e},{},{:.6e},{:.6e},{:.4},{}",
            r.case, r.state, r.tau, r.eta, r.bandwidth, r.n, r.alpha, r.nu, r.runs, r.median, r.mse, r.level_or_power, r.seed
        )?;
    }
    out.flush()
}
