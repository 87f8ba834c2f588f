//! Run-state persistence: a line-delimited, self-describing JSON record
//! stream for decoupled posteriors and daily diagnostics (resumable and
//! inspectable with standard tools), plus manifest writing.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sgdlm_core::{DayDiagnostics, NormalGamma};

pub const STATE_FORMAT_VERSION: u32 = 1;

/// One line of a state file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum StateRecord {
    /// First line of every state file.
    Header {
        version: u32,
        phase: String,
        m: usize,
        k: usize,
        seed: u64,
    },
    /// One series' decoupled posterior after a day's full cycle (already
    /// evolved into the next day's prior). `scale` is row-major.
    Series {
        day: usize,
        date: String,
        series: usize,
        location: Vec<f64>,
        scale: Vec<f64>,
        dof: f64,
        variance_estimate: f64,
    },
    /// The discount factors a phase-2 search settled on.
    Discounts {
        beta: f64,
        delta_phi: f64,
        delta_gamma: f64,
    },
    /// Day completion marker with the recoupling diagnostics.
    Day {
        day: usize,
        date: String,
        ess: f64,
        kl: f64,
        kl_bound: f64,
    },
}

pub fn series_record(
    day: usize,
    date: &str,
    series: usize,
    ng: &NormalGamma,
) -> StateRecord {
    StateRecord::Series {
        day,
        date: date.to_string(),
        series,
        location: ng.location().iter().copied().collect(),
        scale: ng.scale_matrix().transpose().iter().copied().collect(),
        dof: ng.dof(),
        variance_estimate: ng.variance_estimate(),
    }
}

pub fn day_record(day: usize, date: &str, diag: &DayDiagnostics) -> StateRecord {
    StateRecord::Day {
        day,
        date: date.to_string(),
        ess: diag.ess,
        kl: diag.kl,
        kl_bound: diag.kl_bound,
    }
}

pub fn record_to_ng(record: &StateRecord) -> Result<NormalGamma> {
    let StateRecord::Series {
        location,
        scale,
        dof,
        variance_estimate,
        series,
        ..
    } = record
    else {
        bail!("expected a series record");
    };
    let p = location.len();
    if scale.len() != p * p {
        bail!("series {series}: scale has {} entries for dimension {p}", scale.len());
    }
    NormalGamma::new(
        DVector::from_row_slice(location),
        DMatrix::from_row_slice(p, p, scale),
        *dof,
        *variance_estimate,
    )
    .with_context(|| format!("series {series}: persisted posterior fails validation"))
}

/// Read a state file, tolerating one truncated trailing line (the footprint
/// of an interrupted write).
pub fn read_records(path: &Path) -> Result<Vec<StateRecord>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading state file {}", path.display()))?;
    let mut records = Vec::new();
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<StateRecord>(line) {
            Ok(r) => records.push(r),
            Err(e) if i + 1 == lines.len() => {
                log::warn!(
                    "{}: dropping truncated final line ({e})",
                    path.display()
                );
            }
            Err(e) => bail!("{} line {}: {e}", path.display(), i + 1),
        }
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[StateRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn append_records(path: &Path, records: &[StateRecord]) -> Result<()> {
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {} for append", path.display()))?;
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    file.write_all(&out)?;
    file.flush()?;
    Ok(())
}

/// Check a state file's header against the active run parameters.
pub fn check_header(
    records: &[StateRecord],
    path: &Path,
    phase: &str,
    m: usize,
    k: usize,
    seed: u64,
) -> Result<()> {
    match records.first() {
        Some(StateRecord::Header {
            version,
            phase: got_phase,
            m: got_m,
            k: got_k,
            seed: got_seed,
        }) => {
            if *version != STATE_FORMAT_VERSION {
                bail!(
                    "{}: state format version {} (this build reads {})",
                    path.display(),
                    version,
                    STATE_FORMAT_VERSION
                );
            }
            if got_phase != phase || *got_m != m || *got_k != k || *got_seed != seed {
                bail!(
                    "{}: header ({got_phase}, m={got_m}, k={got_k}, seed={got_seed}) does not \
                     match this run ({phase}, m={m}, k={k}, seed={seed}); refusing to mix runs",
                    path.display()
                );
            }
            Ok(())
        }
        _ => bail!("{}: missing header record", path.display()),
    }
}

/// Write the run manifest: config digest, seed, and component versions.
/// Deliberately timestamp-free so identical runs produce identical bytes.
pub fn write_manifest(out_dir: &Path, config_bytes: &[u8], seed: u64) -> Result<()> {
    let mut hasher = Sha256::new();
    hasher.update(config_bytes);
    let digest = hasher.finalize();
    let text = format!(
        "config_sha256 = {digest:x}\nseed = {seed}\nengine = sgdlm-core {}\ncli = sgdlm-cli {}\nstate_format = {STATE_FORMAT_VERSION}\n",
        env!("CARGO_PKG_VERSION"),
        env!("CARGO_PKG_VERSION"),
    );
    fs::write(out_dir.join("manifest.txt"), text).context("writing manifest.txt")
}

/// Format a float with the shortest representation that parses back to the
/// identical value, keeping CSV artifacts byte-deterministic.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
