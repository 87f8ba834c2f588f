//! Run configuration: a TOML file mirroring the engine's knobs, with the
//! published defaults baked in. Validation failures name the offending key.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use sgdlm_core::eval::IntervalSpec;
use sgdlm_core::{DiscountSet, MonteCarloSettings, NormalGamma, ReturnsPanel};

/// A phase's day range: either inclusive row indices into the return panel
/// or an inclusive ISO-date window resolved against its calendar.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum RangeSpec {
    Rows([usize; 2]),
    Dates([String; 2]),
}

impl RangeSpec {
    /// Resolve to inclusive row indices on `panel`.
    pub fn resolve(&self, panel: &ReturnsPanel, key: &str) -> Result<(usize, usize)> {
        let (start, end) = match self {
            RangeSpec::Rows([a, b]) => (*a, *b),
            RangeSpec::Dates([a, b]) => {
                let parse = |s: &str| {
                    NaiveDate::parse_from_str(s, "%Y-%m-%d")
                        .with_context(|| format!("config error at `{key}`: bad date {s:?}"))
                };
                let (da, db) = (parse(a)?, parse(b)?);
                let dates = panel.dates();
                let start = dates.partition_point(|d| *d < da);
                let end = dates.partition_point(|d| *d <= db);
                if start >= end {
                    bail!("config error at `{key}`: no panel days inside {a}..{b}");
                }
                (start, end - 1)
            }
        };
        if start > end || end >= panel.n_days() {
            bail!(
                "config error at `{key}`: rows {start}..{end} do not fit a {}-day panel",
                panel.n_days()
            );
        }
        Ok((start, end))
    }
}

fn default_k() -> usize {
    1
}
fn default_draws() -> usize {
    2000
}
fn default_seed() -> u64 {
    42
}
fn default_beta() -> f64 {
    0.95
}
fn default_delta_phi() -> f64 {
    0.99
}
fn default_delta_gamma() -> f64 {
    0.95
}
fn default_ess_floor() -> f64 {
    10.0
}
fn default_sma_window() -> usize {
    100
}
fn default_levels() -> Vec<f64> {
    vec![0.99, 0.95, 0.90, 0.80, 0.50, 0.20, 0.10]
}

/// The coarse published search grid for the coupling-block discount.
fn default_delta_gamma_grid() -> Vec<f64> {
    vec![0.859, 0.894, 0.929, 0.964, 0.999]
}

/// 0.850 to 0.995 in steps of 0.005, plus 0.999.
fn default_fine_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (0..=29).map(|i| (850 + 5 * i) as f64 / 1000.0).collect();
    grid.push(0.999);
    grid
}

fn default_passes() -> usize {
    1
}
fn default_out_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_delta_gamma_grid")]
    pub delta_gamma: Vec<f64>,
    #[serde(default = "default_fine_grid")]
    pub delta_phi: Vec<f64>,
    #[serde(default = "default_fine_grid")]
    pub beta: Vec<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            delta_gamma: default_delta_gamma_grid(),
            delta_phi: default_fine_grid(),
            beta: default_fine_grid(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase1Section {
    pub range: Option<RangeSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase2Section {
    pub range: Option<RangeSpec>,
    /// How many full sweeps (delta_gamma, then delta_phi, then beta) to run.
    #[serde(default = "default_passes")]
    pub passes: usize,
}

impl Default for Phase2Section {
    fn default() -> Self {
        Self {
            range: None,
            passes: 1,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase3Section {
    pub range: Option<RangeSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    /// Initial degrees of freedom.
    pub r0: f64,
    /// Initial variance estimate.
    pub c0: f64,
    /// Scale entry for the local-level coefficient.
    #[serde(rename = "R_phi")]
    pub r_phi: f64,
    /// Scale entry for each coupling coefficient.
    #[serde(rename = "R_gamma")]
    pub r_gamma: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            r0: 5.0,
            c0: 0.001,
            r_phi: 0.0001,
            r_gamma: 0.01,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    /// Daily closing-price CSV (`date,TICKER1,...`); mutually exclusive
    /// with `returns`.
    pub prices: Option<String>,
    /// Pre-computed log-return CSV, e.g. from the `simulate` subcommand.
    pub returns: Option<String>,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub m: usize,
    pub days: usize,
    /// "decoupled", "mutual-pairs", or "ring".
    pub design: String,
    #[serde(default)]
    pub strength: f64,
    pub phi_scale: Option<f64>,
    pub phi_drift: Option<f64>,
    pub gamma_drift: Option<f64>,
    pub precision_low: Option<f64>,
    pub precision_high: Option<f64>,
    pub precision_drift: Option<f64>,
    pub start_date: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Number of simultaneous parents per series.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Forecast Monte Carlo sample size (K).
    #[serde(default = "default_draws")]
    pub big_k: usize,
    /// Posterior importance sample size (N).
    #[serde(default = "default_draws")]
    pub big_n: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Precision-discount factor (provisional until a grid search runs).
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Level-block state discount.
    #[serde(default = "default_delta_phi")]
    pub delta_phi: f64,
    /// Coupling-block state discount.
    #[serde(default = "default_delta_gamma")]
    pub delta_gamma: f64,
    #[serde(default = "default_ess_floor")]
    pub ess_floor: f64,
    #[serde(default = "default_sma_window")]
    pub sma_window: usize,
    /// Use exact normal quantiles instead of the conventional two-decimal
    /// interval multipliers.
    #[serde(default)]
    pub exact_z: bool,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub phase1: Phase1Section,
    #[serde(default)]
    pub phase2: Phase2Section,
    #[serde(default)]
    pub phase3: Phase3Section,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub io: IoSection,
    pub synthetic: Option<SyntheticSection>,
}

impl RunConfig {
    /// Parse and validate a TOML config file.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            // The TOML error message already carries the key path and span.
            anyhow::anyhow!("config error: {e}")
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.big_k < 2 {
            bail!("config error at `big_k`: need at least 2 draws, got {}", self.big_k);
        }
        if self.big_n < 2 {
            bail!("config error at `big_n`: need at least 2 draws, got {}", self.big_n);
        }
        for (key, v) in [
            ("beta", self.beta),
            ("delta_phi", self.delta_phi),
            ("delta_gamma", self.delta_gamma),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                bail!("config error at `{key}`: discount {v} outside (0, 1]");
            }
        }
        if !(self.ess_floor >= 1.0) {
            bail!("config error at `ess_floor`: {} below 1", self.ess_floor);
        }
        if self.sma_window == 0 {
            bail!("config error at `sma_window`: must be positive");
        }
        if self.levels.is_empty() {
            bail!("config error at `levels`: need at least one level");
        }
        for &l in &self.levels {
            if !(l > 0.0 && l < 1.0) {
                bail!("config error at `levels`: level {l} outside (0, 1)");
            }
        }
        for (key, grid) in [
            ("grid.delta_gamma", &self.grid.delta_gamma),
            ("grid.delta_phi", &self.grid.delta_phi),
            ("grid.beta", &self.grid.beta),
        ] {
            for w in grid.windows(2) {
                if !(w[0] < w[1]) {
                    bail!("config error at `{key}`: grid must be strictly ascending");
                }
            }
            if grid.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
                bail!("config error at `{key}`: grid values outside (0, 1]");
            }
        }
        for (key, v) in [
            ("prior.r0", self.prior.r0),
            ("prior.c0", self.prior.c0),
            ("prior.R_phi", self.prior.r_phi),
            ("prior.R_gamma", self.prior.r_gamma),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                bail!("config error at `{key}`: {v} must be positive");
            }
        }
        if self.phase2.passes == 0 {
            bail!("config error at `phase2.passes`: must be at least 1");
        }
        if self.io.prices.is_some() && self.io.returns.is_some() {
            bail!("config error at `io`: set either `prices` or `returns`, not both");
        }
        if let Some(s) = &self.synthetic {
            match s.design.as_str() {
                "decoupled" | "mutual-pairs" | "ring" => {}
                other => bail!(
                    "config error at `synthetic.design`: unknown design {other:?} \
                     (expected decoupled, mutual-pairs, or ring)"
                ),
            }
        }
        Ok(())
    }

    /// The provisional (or selected) discount set.
    pub fn discounts(&self) -> DiscountSet {
        DiscountSet::new(self.beta, self.delta_phi, self.delta_gamma)
            .expect("validated at load time")
    }

    pub fn settings(&self) -> MonteCarloSettings {
        MonteCarloSettings {
            forecast_draws: self.big_k,
            posterior_draws: self.big_n,
            ess_floor: self.ess_floor,
        }
    }

    /// The diffuse starting prior for a `dim`-coefficient state: a zero
    /// location, a level-scale first entry with coupling-scale remainder,
    /// and the configured degrees of freedom and variance estimate.
    pub fn initial_prior(&self, dim: usize) -> Result<NormalGamma> {
        let diag = DVector::from_fn(dim, |i, _| {
            if i == 0 {
                self.prior.r_phi
            } else {
                self.prior.r_gamma
            }
        });
        NormalGamma::new(
            DVector::zeros(dim),
            DMatrix::from_diagonal(&diag),
            self.prior.r0,
            self.prior.c0,
        )
        .context("building the initial prior from `prior.*`")
    }

    /// Interval specifications for the configured levels: the conventional
    /// two-decimal multipliers where available (unless `exact_z`), exact
    /// normal quantiles otherwise.
    pub fn interval_specs(&self) -> Result<Vec<IntervalSpec>> {
        let rounded: &[(f64, f64)] = &[
            (0.99, 2.58),
            (0.95, 1.96),
            (0.90, 1.64),
            (0.80, 1.28),
            (0.50, 0.67),
            (0.20, 0.25),
            (0.10, 0.13),
        ];
        self.levels
            .iter()
            .map(|&level| {
                if !self.exact_z {
                    if let Some(&(_, z)) = rounded.iter().find(|(l, _)| (l - level).abs() < 1e-12)
                    {
                        return IntervalSpec::new(level, z)
                            .context("building interval from the standard table");
                    }
                }
                IntervalSpec::exact(level)
                    .with_context(|| format!("config error at `levels`: level {level}"))
            })
            .collect()
    }

    /// Resolve the configured phase ranges against a panel and enforce the
    /// phase1 < phase2 < phase3 ordering for the ranges that are present.
    pub fn resolve_ranges(&self, panel: &ReturnsPanel) -> Result<PhaseRanges> {
        let p1 = self
            .phase1
            .range
            .as_ref()
            .map(|r| r.resolve(panel, "phase1.range"))
            .transpose()?;
        let p2 = self
            .phase2
            .range
            .as_ref()
            .map(|r| r.resolve(panel, "phase2.range"))
            .transpose()?;
        let p3 = self
            .phase3
            .range
            .as_ref()
            .map(|r| r.resolve(panel, "phase3.range"))
            .transpose()?;
        if let (Some(a), Some(b)) = (p1, p2) {
            if a.1 >= b.0 {
                bail!("config error at `phase2.range`: phase 2 must start after phase 1 ends");
            }
        }
        if let (Some(b), Some(c)) = (p2, p3) {
            if b.1 >= c.0 {
                bail!("config error at `phase3.range`: phase 3 must start after phase 2 ends");
            }
        }
        if let (Some(a), Some(c)) = (p1, p3) {
            if a.1 >= c.0 {
                bail!("config error at `phase3.range`: phase 3 must start after phase 1 ends");
            }
        }
        Ok(PhaseRanges {
            phase1: p1,
            phase2: p2,
            phase3: p3,
        })
    }
}

/// Inclusive row ranges per phase, where configured.
#[derive(Debug, Clone, Copy)]
pub struct PhaseRanges {
    pub phase1: Option<(usize, usize)>,
    pub phase2: Option<(usize, usize)>,
    pub phase3: Option<(usize, usize)>,
}

impl PhaseRanges {
    pub fn require(
        range: Option<(usize, usize)>,
        key: &str,
    ) -> Result<(usize, usize)> {
        range.with_context(|| format!("config error at `{key}`: range is required here"))
    }
}

/// Resolve a path from the config file relative to the config's directory.
pub fn resolve_path(config_path: &Path, value: &str) -> PathBuf {
    let p = Path::new(value);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(p)
    }
}
