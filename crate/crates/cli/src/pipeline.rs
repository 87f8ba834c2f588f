//! The phase-oriented pipeline: simulate → phase1 (parents) → phase2
//! (discounts + starting priors) → phase3 (daily forecast loop, resumable)
//! → evaluate / dlm-baseline. Each step reads its prerequisites from the
//! output directory and writes CSV artifacts plus a run manifest; a missing
//! prerequisite is an ordered-pipeline error.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::Deserialize;
use sgdlm_core::eval::{coverage, diagnostics_series, rmse_mad, sma};
use sgdlm_core::{
    ingest_prices, log_likelihood, one_step_predictive, run_phase2, select_discount,
    select_parents, simulate_synthetic, step_day, CouplingDesign, DayDiagnostics, DiscountFactor,
    DiscountGrid, DiscountSet, DlmState, NormalGamma, ParentStructure, ReturnsPanel,
    SyntheticScenario,
};

use crate::config::{resolve_path, PhaseRanges, RunConfig};
use crate::persist::{
    append_records, check_header, day_record, fmt_f64, read_records, record_to_ng,
    series_record, write_manifest, write_records, StateRecord, STATE_FORMAT_VERSION,
};

pub struct Runner {
    pub cfg: RunConfig,
    pub out_dir: PathBuf,
    config_path: PathBuf,
    config_bytes: Vec<u8>,
}

fn missing_step(artifact: &Path, needed_step: &str) -> anyhow::Error {
    anyhow::anyhow!(
        "ordered-pipeline error: {} is missing — run `{needed_step}` first",
        artifact.display()
    )
}

impl Runner {
    pub fn from_config_file(path: &Path) -> Result<Self> {
        let config_bytes =
            fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
        let text = std::str::from_utf8(&config_bytes).context("config file is not UTF-8")?;
        let cfg = RunConfig::from_toml(text)?;
        let out_dir = resolve_path(path, &cfg.io.out_dir);
        Ok(Self {
            cfg,
            out_dir,
            config_path: path.to_path_buf(),
            config_bytes,
        })
    }

    fn prepare_out_dir(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))
    }

    fn finish(&self) -> Result<()> {
        write_manifest(&self.out_dir, &self.config_bytes, self.cfg.seed)
    }

    fn load_panel(&self) -> Result<ReturnsPanel> {
        match (&self.cfg.io.prices, &self.cfg.io.returns) {
            (Some(p), None) => {
                let path = resolve_path(&self.config_path, p);
                let (panel, report) = ingest_prices(&path, None)
                    .with_context(|| format!("ingesting prices {}", path.display()))?;
                log::info!(
                    "ingested {} price rows ({} dropped) into {} return rows x {} series",
                    report.price_rows_read,
                    report.price_rows_dropped,
                    report.return_rows,
                    panel.n_series()
                );
                Ok(panel)
            }
            (None, Some(r)) => {
                let path = resolve_path(&self.config_path, r);
                ReturnsPanel::from_csv(&path)
                    .with_context(|| format!("reading returns {}", path.display()))
            }
            _ => bail!("config error at `io`: set exactly one of `prices` or `returns`"),
        }
    }

    // ---- simulate ------------------------------------------------------

    pub fn simulate(&self) -> Result<()> {
        let syn = self
            .cfg
            .synthetic
            .as_ref()
            .context("config error at `synthetic`: the table is required by `simulate`")?;
        let design = match syn.design.as_str() {
            "decoupled" => CouplingDesign::Decoupled,
            "mutual-pairs" => CouplingDesign::MutualPairs {
                strength: syn.strength,
            },
            "ring" => CouplingDesign::Ring {
                strength: syn.strength,
            },
            other => bail!("config error at `synthetic.design`: unknown design {other:?}"),
        };
        let mut scenario = SyntheticScenario::mild(syn.m, syn.days, design);
        if let Some(v) = syn.phi_scale {
            scenario.phi_scale = v;
        }
        if let Some(v) = syn.phi_drift {
            scenario.phi_drift = v;
        }
        if let Some(v) = syn.gamma_drift {
            scenario.gamma_drift = v;
        }
        if let Some(v) = syn.precision_low {
            scenario.precision_range.0 = v;
        }
        if let Some(v) = syn.precision_high {
            scenario.precision_range.1 = v;
        }
        if let Some(v) = syn.precision_drift {
            scenario.precision_drift = v;
        }
        if let Some(s) = &syn.start_date {
            scenario.start_date = NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .with_context(|| format!("config error at `synthetic.start_date`: {s:?}"))?;
        }
        let (panel, truth) = simulate_synthetic(&scenario, self.cfg.seed)?;
        self.prepare_out_dir()?;
        panel.to_csv(self.out_dir.join("returns.csv"))?;

        // Truth record for oracle checks: sparse coupling entries per day.
        let structure = &truth.structure;
        let mut lines = Vec::new();
        lines.push(serde_json::json!({
            "record": "truth_header",
            "version": STATE_FORMAT_VERSION,
            "m": structure.m(),
            "k": structure.k(),
            "parents": (0..structure.m()).map(|i| structure.parents(i).to_vec()).collect::<Vec<_>>(),
            "start_date": truth.start_date.format("%Y-%m-%d").to_string(),
        }));
        for day in 0..truth.days() {
            let gamma: Vec<serde_json::Value> = (0..structure.m())
                .flat_map(|i| {
                    structure.parents(i).iter().map(move |&j| (i, j)).collect::<Vec<_>>()
                })
                .map(|(i, j)| serde_json::json!([i, j, truth.gamma[day][(i, j)]]))
                .collect();
            lines.push(serde_json::json!({
                "record": "truth_day",
                "day": day,
                "phi": truth.phi[day].iter().copied().collect::<Vec<f64>>(),
                "lambda": truth.lambda[day].iter().copied().collect::<Vec<f64>>(),
                "gamma": gamma,
            }));
        }
        let mut text = String::new();
        for l in &lines {
            text.push_str(&serde_json::to_string(l)?);
            text.push('\n');
        }
        fs::write(self.out_dir.join("truth.jsonl"), text)?;
        log::info!(
            "simulated {} days x {} series into {}",
            panel.n_days(),
            panel.n_series(),
            self.out_dir.display()
        );
        self.finish()
    }

    // ---- phase 1: parent selection --------------------------------------

    pub fn phase1(&self) -> Result<()> {
        let panel = self.load_panel()?;
        let ranges = self.cfg.resolve_ranges(&panel)?;
        let (start, end) = PhaseRanges::require(ranges.phase1, "phase1.range")?;
        let sub = panel.restrict(start..end + 1)?;
        let prior = self.cfg.initial_prior(panel.n_series())?;
        let report = select_parents(&sub, self.cfg.k, &prior, &self.cfg.discounts())?;

        self.prepare_out_dir()?;
        let mut out = String::from("series,rank,candidate,effect_size,chosen\n");
        for (i, ranked) in report.ranked.iter().enumerate() {
            for (rank, &(candidate, effect)) in ranked.iter().enumerate() {
                out.push_str(&format!(
                    "{i},{rank},{candidate},{},{}\n",
                    fmt_f64(effect),
                    rank < self.cfg.k
                ));
            }
        }
        fs::write(self.out_dir.join("parents.csv"), out)?;
        log::info!(
            "phase 1 selected {} parent(s) per series over days {start}..={end}",
            self.cfg.k
        );
        self.finish()
    }

    fn read_parents(&self, m: usize) -> Result<ParentStructure> {
        let path = self.out_dir.join("parents.csv");
        if !path.exists() {
            return Err(missing_step(&path, "phase1"));
        }
        #[derive(Deserialize)]
        struct Row {
            series: usize,
            rank: usize,
            candidate: usize,
            #[allow(dead_code)]
            effect_size: f64,
            chosen: bool,
        }
        let mut reader = csv::Reader::from_path(&path)?;
        let mut chosen: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m];
        for row in reader.deserialize::<Row>() {
            let row = row.with_context(|| format!("parsing {}", path.display()))?;
            if row.series >= m {
                bail!(
                    "{}: series {} out of range for this {m}-series panel",
                    path.display(),
                    row.series
                );
            }
            if row.chosen {
                chosen[row.series].push((row.rank, row.candidate));
            }
        }
        let sp: Vec<Vec<usize>> = chosen
            .into_iter()
            .map(|mut picks| {
                picks.sort_by_key(|&(rank, _)| rank);
                picks.into_iter().map(|(_, c)| c).collect()
            })
            .collect();
        if sp.iter().any(|p| p.len() != self.cfg.k) {
            bail!(
                "{}: chosen parent count does not match config `k` = {}; re-run phase1",
                path.display(),
                self.cfg.k
            );
        }
        Ok(ParentStructure::new(m, sp)?)
    }

    // ---- phase 2: discount selection + starting priors -------------------

    pub fn phase2(&self) -> Result<()> {
        let panel = self.load_panel()?;
        let m = panel.n_series();
        let ranges = self.cfg.resolve_ranges(&panel)?;
        let (start, end) = PhaseRanges::require(ranges.phase2, "phase2.range")?;
        let structure = self.read_parents(m)?;
        let prior = self.cfg.initial_prior(structure.state_dim())?;

        let mut base = self.cfg.discounts();
        let sweep: [(DiscountFactor, &Vec<f64>); 3] = [
            (DiscountFactor::DeltaGamma, &self.cfg.grid.delta_gamma),
            (DiscountFactor::DeltaPhi, &self.cfg.grid.delta_phi),
            (DiscountFactor::Beta, &self.cfg.grid.beta),
        ];
        let mut latest: Vec<Option<(DiscountFactor, Vec<f64>, f64)>> = vec![None; 3];
        for pass in 0..self.cfg.phase2.passes {
            for (slot, (factor, candidates)) in sweep.iter().enumerate() {
                if candidates.is_empty() {
                    continue;
                }
                let grid = DiscountGrid::new(*factor, (*candidates).clone(), base)?;
                let selection = select_discount(&panel, &grid, &structure, &prior, (start, end))?;
                log::info!(
                    "pass {pass}: {} -> {} (per-series argmaxes {:?})",
                    factor.name(),
                    selection.mean,
                    selection.per_series
                );
                base = grid.discounts_for(selection.mean);
                latest[slot] = Some((*factor, selection.per_series, selection.mean));
            }
        }

        self.prepare_out_dir()?;
        let mut out = String::from("factor,series,value\n");
        for entry in latest.iter().flatten() {
            let (factor, per_series, mean) = entry;
            for (i, v) in per_series.iter().enumerate() {
                out.push_str(&format!("{},{i},{}\n", factor.name(), fmt_f64(*v)));
            }
            out.push_str(&format!("{},mean,{}\n", factor.name(), fmt_f64(*mean)));
        }
        fs::write(self.out_dir.join("discounts.csv"), out)?;

        // Carry the cycle over all data through the end of phase 2 to
        // produce the decoupled starting priors for the forecast phase.
        let initial = vec![prior; m];
        let carried = run_phase2(
            &panel,
            &structure,
            &base,
            &initial,
            &self.cfg.settings(),
            self.cfg.seed,
            0..end + 1,
        )?;
        let date = panel.dates()[end].format("%Y-%m-%d").to_string();
        let mut records = vec![
            StateRecord::Header {
                version: STATE_FORMAT_VERSION,
                phase: "phase2".into(),
                m,
                k: structure.k(),
                seed: self.cfg.seed,
            },
            StateRecord::Discounts {
                beta: base.beta,
                delta_phi: base.delta_phi,
                delta_gamma: base.delta_gamma,
            },
        ];
        for (i, ng) in carried.iter().enumerate() {
            records.push(series_record(end, &date, i, ng));
        }
        write_records(&self.out_dir.join("phase2_state.jsonl"), &records)?;
        log::info!(
            "phase 2 selected beta={} delta_phi={} delta_gamma={}",
            base.beta,
            base.delta_phi,
            base.delta_gamma
        );
        self.finish()
    }

    fn read_phase2_state(
        &self,
        m: usize,
        k: usize,
    ) -> Result<(DiscountSet, Vec<NormalGamma>)> {
        let path = self.out_dir.join("phase2_state.jsonl");
        if !path.exists() {
            return Err(missing_step(&path, "phase2"));
        }
        let records = read_records(&path)?;
        check_header(&records, &path, "phase2", m, k, self.cfg.seed)?;
        let mut discounts = None;
        let mut priors: Vec<Option<NormalGamma>> = vec![None; m];
        for r in &records[1..] {
            match r {
                StateRecord::Discounts {
                    beta,
                    delta_phi,
                    delta_gamma,
                } => discounts = Some(DiscountSet::new(*beta, *delta_phi, *delta_gamma)?),
                StateRecord::Series { series, .. } => {
                    if *series >= m {
                        bail!("{}: series {series} out of range", path.display());
                    }
                    priors[*series] = Some(record_to_ng(r)?);
                }
                _ => {}
            }
        }
        let discounts =
            discounts.with_context(|| format!("{}: no discounts record", path.display()))?;
        let priors: Vec<NormalGamma> = priors
            .into_iter()
            .enumerate()
            .map(|(i, p)| p.with_context(|| format!("{}: series {i} missing", path.display())))
            .collect::<Result<_>>()?;
        Ok((discounts, priors))
    }

    // ---- phase 3: the daily forecast loop --------------------------------

    pub fn phase3(&self) -> Result<()> {
        let clock = Instant::now();
        let panel = self.load_panel()?;
        let m = panel.n_series();
        let ranges = self.cfg.resolve_ranges(&panel)?;
        let (start, end) = PhaseRanges::require(ranges.phase3, "phase3.range")?;
        let structure = self.read_parents(m)?;
        let (discounts, mut priors) = self.read_phase2_state(m, structure.k())?;
        self.prepare_out_dir()?;

        let state_path = self.out_dir.join("state.jsonl");
        let forecasts_path = self.out_dir.join("forecasts.csv");
        let diagnostics_path = self.out_dir.join("diagnostics.csv");
        let mut next_day = start;
        if state_path.exists() {
            let records = read_records(&state_path)?;
            check_header(&records, &state_path, "phase3", m, structure.k(), self.cfg.seed)?;
            if let Some((resume_day, resumed_priors)) = last_complete_day(&records, m)? {
                // Drop anything after the last complete day, in all files.
                let kept: Vec<StateRecord> = records
                    .into_iter()
                    .filter(|r| match r {
                        StateRecord::Series { day, .. } | StateRecord::Day { day, .. } => {
                            *day <= resume_day
                        }
                        _ => true,
                    })
                    .collect();
                write_records(&state_path, &kept)?;
                let cutoff = panel.dates()[resume_day].format("%Y-%m-%d").to_string();
                truncate_csv_by_date(&forecasts_path, &cutoff)?;
                truncate_csv_by_date(&diagnostics_path, &cutoff)?;
                priors = resumed_priors;
                next_day = resume_day + 1;
                log::info!("resuming phase 3 after {cutoff} (day {resume_day})");
            } else {
                write_records(
                    &state_path,
                    &[phase3_header(m, structure.k(), self.cfg.seed)],
                )?;
                fs::write(&forecasts_path, FORECAST_HEADER)?;
                fs::write(&diagnostics_path, DIAGNOSTIC_HEADER)?;
            }
        } else {
            write_records(
                &state_path,
                &[phase3_header(m, structure.k(), self.cfg.seed)],
            )?;
            fs::write(&forecasts_path, FORECAST_HEADER)?;
            fs::write(&diagnostics_path, DIAGNOSTIC_HEADER)?;
        }

        if next_day > end {
            log::info!("phase 3 already complete through day {end}");
            return self.finish();
        }

        let settings = self.cfg.settings();
        let mut forecasts = BufWriter::new(
            fs::OpenOptions::new().append(true).open(&forecasts_path)?,
        );
        let mut diagnostics = BufWriter::new(
            fs::OpenOptions::new().append(true).open(&diagnostics_path)?,
        );
        let ess_threshold = 0.66 * self.cfg.big_n as f64;
        for day in next_day..=end {
            let y = panel.row(day);
            let date = panel.dates()[day].format("%Y-%m-%d").to_string();
            let (next, summary, diag) = step_day(
                &priors,
                &y,
                &structure,
                &discounts,
                &settings,
                self.cfg.seed,
                day as u64,
            )?;
            priors = next;
            for i in 0..m {
                writeln!(
                    forecasts,
                    "{date},{},{},{},{}",
                    panel.tickers()[i],
                    fmt_f64(summary.point[i]),
                    fmt_f64(summary.covariance[(i, i)]),
                    fmt_f64(y[i])
                )?;
            }
            writeln!(
                diagnostics,
                "{date},{},{},{},{}",
                fmt_f64(diag.ess),
                fmt_f64(diag.kl),
                fmt_f64(diag.kl_bound),
                diag.ess < ess_threshold
            )?;
            forecasts.flush()?;
            diagnostics.flush()?;
            let mut records = Vec::with_capacity(m + 1);
            for (i, ng) in priors.iter().enumerate() {
                records.push(series_record(day, &date, i, ng));
            }
            records.push(day_record(day, &date, &diag));
            append_records(&state_path, &records)?;
        }
        log::info!(
            "phase 3: {} forecast day(s) in {:.1}s",
            end + 1 - next_day,
            clock.elapsed().as_secs_f64()
        );
        self.finish()
    }

    // ---- univariate baseline ---------------------------------------------

    pub fn dlm_baseline(&self) -> Result<()> {
        let panel = self.load_panel()?;
        let ranges = self.cfg.resolve_ranges(&panel)?;
        let (sel_start, sel_end) = PhaseRanges::require(ranges.phase2, "phase2.range")?;
        let (start, end) = PhaseRanges::require(ranges.phase3, "phase3.range")?;
        let prior = self.cfg.initial_prior(1)?;
        let regressors =
            vec![nalgebra::DVector::from_element(1, 1.0); panel.n_days()];

        self.prepare_out_dir()?;
        let n_days = end + 1 - start;
        let mut points = DMatrix::zeros(n_days, panel.n_series());
        let mut variances = DMatrix::zeros(n_days, panel.n_series());
        for i in 0..panel.n_series() {
            let observations = panel.column(i);
            let mut best: Option<(f64, f64, f64)> = None; // (ll, delta, beta)
            for &delta in &self.cfg.grid.delta_phi {
                for &beta in &self.cfg.grid.beta {
                    let discounts = DiscountSet::new(beta, delta, delta)?;
                    let ll = match log_likelihood(
                        &observations,
                        &regressors,
                        &prior,
                        &discounts,
                        (sel_start, sel_end),
                    ) {
                        Ok(v) if v.is_finite() => v,
                        _ => continue,
                    };
                    if best.map_or(true, |(b, _, _)| ll > b) {
                        best = Some((ll, delta, beta));
                    }
                }
            }
            let (_, delta, beta) = best.with_context(|| {
                format!(
                    "series {i}: no finite baseline likelihood on the (delta, beta) grid"
                )
            })?;
            log::info!(
                "baseline for {}: delta={delta} beta={beta}",
                panel.tickers()[i]
            );
            let discounts = DiscountSet::new(beta, delta, delta)?;
            let mut state = DlmState::new(prior.clone());
            for t in 0..=end {
                if t >= start {
                    let (dof, mode, scale2) = one_step_predictive(&state.prior, &regressors[t])?;
                    if dof <= 2.0 {
                        bail!(
                            "series {i} day {t}: predictive dof {dof} has no finite variance"
                        );
                    }
                    points[(t - start, i)] = mode;
                    variances[(t - start, i)] = scale2 * dof / (dof - 2.0);
                }
                state.assimilate(&regressors[t], observations[t])?;
                state.advance(&discounts)?;
            }
        }
        let mut out = String::from(FORECAST_HEADER);
        for t in 0..n_days {
            let date = panel.dates()[start + t].format("%Y-%m-%d");
            for i in 0..panel.n_series() {
                out.push_str(&format!(
                    "{date},{},{},{},{}\n",
                    panel.tickers()[i],
                    fmt_f64(points[(t, i)]),
                    fmt_f64(variances[(t, i)]),
                    fmt_f64(panel.values()[(start + t, i)])
                ));
            }
        }
        fs::write(self.out_dir.join("dlm_forecasts.csv"), out)?;
        self.finish()
    }

    // ---- evaluation -------------------------------------------------------

    pub fn evaluate(&self) -> Result<()> {
        let forecasts_path = self.out_dir.join("forecasts.csv");
        if !forecasts_path.exists() {
            return Err(missing_step(&forecasts_path, "phase3"));
        }
        let table = ForecastTable::read(&forecasts_path)?;

        // Interval coverage.
        let specs = self.cfg.interval_specs()?;
        let cov = coverage(
            &table.observed,
            &table.y_hat,
            &table.variance,
            self.cfg.big_k,
            &specs,
        )?;
        let mut out = String::from("level,ticker,coverage\n");
        for (l, spec) in specs.iter().enumerate() {
            for (i, ticker) in table.tickers.iter().enumerate() {
                out.push_str(&format!(
                    "{},{ticker},{}\n",
                    fmt_f64(spec.level()),
                    fmt_f64(cov.per_series[l][i])
                ));
            }
            out.push_str(&format!(
                "{},aggregate,{}\n",
                fmt_f64(spec.level()),
                fmt_f64(cov.aggregate[l])
            ));
        }
        fs::write(self.out_dir.join("coverage.csv"), out)?;

        // Point-forecast error summaries, with the univariate baseline
        // alongside when it has been produced.
        let baseline_path = self.out_dir.join("dlm_forecasts.csv");
        let baseline = if baseline_path.exists() {
            let b = ForecastTable::read(&baseline_path)?;
            if b.dates != table.dates || b.tickers != table.tickers {
                bail!(
                    "{} is not aligned with {}; re-run `dlm-baseline`",
                    baseline_path.display(),
                    forecasts_path.display()
                );
            }
            Some(b)
        } else {
            None
        };
        let mut out = String::from("ticker,rmse_sgdlm,mad_sgdlm,rmse_dlm,mad_dlm\n");
        for (i, ticker) in table.tickers.iter().enumerate() {
            let obs: Vec<f64> = table.observed.column(i).iter().copied().collect();
            let fit: Vec<f64> = table.y_hat.column(i).iter().copied().collect();
            let (rmse, mad) = rmse_mad(&obs, &fit)?;
            match &baseline {
                Some(b) => {
                    let bfit: Vec<f64> = b.y_hat.column(i).iter().copied().collect();
                    let (rmse_b, mad_b) = rmse_mad(&obs, &bfit)?;
                    out.push_str(&format!(
                        "{ticker},{},{},{},{}\n",
                        fmt_f64(rmse),
                        fmt_f64(mad),
                        fmt_f64(rmse_b),
                        fmt_f64(mad_b)
                    ));
                }
                None => {
                    out.push_str(&format!("{ticker},{},{},,\n", fmt_f64(rmse), fmt_f64(mad)));
                }
            }
        }
        fs::write(self.out_dir.join("errors.csv"), out)?;

        // Moving-average trend comparison (window-end dated).
        let window = self.cfg.sma_window;
        let mut out = String::from("ticker,date,observed_sma,forecast_sma\n");
        for (i, ticker) in table.tickers.iter().enumerate() {
            let obs: Vec<f64> = table.observed.column(i).iter().copied().collect();
            let fit: Vec<f64> = table.y_hat.column(i).iter().copied().collect();
            let obs_sma = sma(&obs, window)?;
            let fit_sma = sma(&fit, window)?;
            for (t, (o, f)) in obs_sma.iter().zip(&fit_sma).enumerate() {
                out.push_str(&format!(
                    "{ticker},{},{},{}\n",
                    table.dates[t + window - 1],
                    fmt_f64(*o),
                    fmt_f64(*f)
                ));
            }
        }
        fs::write(self.out_dir.join("sma.csv"), out)?;

        // Rebuild the diagnostics table (idempotent with phase 3's output).
        let state_path = self.out_dir.join("state.jsonl");
        if !state_path.exists() {
            return Err(missing_step(&state_path, "phase3"));
        }
        let records = read_records(&state_path)?;
        let mut dated: Vec<(String, DayDiagnostics)> = Vec::new();
        for r in &records {
            if let StateRecord::Day {
                date,
                ess,
                kl,
                kl_bound,
                ..
            } = r
            {
                dated.push((
                    date.clone(),
                    DayDiagnostics {
                        ess: *ess,
                        kl: *kl,
                        kl_bound: *kl_bound,
                    },
                ));
            }
        }
        let diags: Vec<DayDiagnostics> = dated.iter().map(|(_, d)| *d).collect();
        let rows = diagnostics_series(&diags, self.cfg.big_n)?;
        let mut out = String::from(DIAGNOSTIC_HEADER);
        for ((date, _), row) in dated.iter().zip(&rows) {
            out.push_str(&format!(
                "{date},{},{},{},{}\n",
                fmt_f64(row.ess),
                fmt_f64(row.kl),
                fmt_f64(row.kl_bound),
                row.flagged
            ));
        }
        fs::write(self.out_dir.join("diagnostics.csv"), out)?;
        self.finish()
    }
}

const FORECAST_HEADER: &str = "date,ticker,y_hat,variance,observed\n";
const DIAGNOSTIC_HEADER: &str = "date,ess,kl,kl_bound,flagged\n";

fn phase3_header(m: usize, k: usize, seed: u64) -> StateRecord {
    StateRecord::Header {
        version: STATE_FORMAT_VERSION,
        phase: "phase3".into(),
        m,
        k,
        seed,
    }
}

/// Find the last day with all `m` series records and a completion marker,
/// returning that day and its persisted (already evolved) priors.
fn last_complete_day(
    records: &[StateRecord],
    m: usize,
) -> Result<Option<(usize, Vec<NormalGamma>)>> {
    use std::collections::BTreeMap;
    let mut series_by_day: BTreeMap<usize, Vec<Option<&StateRecord>>> = BTreeMap::new();
    let mut complete: Vec<usize> = Vec::new();
    for r in records {
        match r {
            StateRecord::Series { day, series, .. } => {
                let slot = series_by_day.entry(*day).or_insert_with(|| vec![None; m]);
                if *series < m {
                    slot[*series] = Some(r);
                }
            }
            StateRecord::Day { day, .. } => complete.push(*day),
            _ => {}
        }
    }
    for day in complete.into_iter().rev() {
        if let Some(slots) = series_by_day.get(&day) {
            if slots.iter().all(|s| s.is_some()) {
                let priors = slots
                    .iter()
                    .map(|s| record_to_ng(s.unwrap()))
                    .collect::<Result<Vec<_>>>()?;
                return Ok(Some((day, priors)));
            }
        }
    }
    Ok(None)
}

/// Keep only the header and rows dated `<= cutoff` (ISO dates compare
/// lexicographically).
fn truncate_csv_by_date(path: &Path, cutoff: &str) -> Result<()> {
    if !path.exists() {
        bail!(
            "{} is missing although the state file exists; delete the state to start over",
            path.display()
        );
    }
    let text = fs::read_to_string(path)?;
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.split(',').next().is_some_and(|d| d <= cutoff) {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept)?;
    Ok(())
}

/// In-memory view of a forecast artifact: days-by-series matrices aligned
/// with the file's own date and ticker order.
struct ForecastTable {
    dates: Vec<String>,
    tickers: Vec<String>,
    y_hat: DMatrix<f64>,
    variance: DMatrix<f64>,
    observed: DMatrix<f64>,
}

impl ForecastTable {
    fn read(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            date: String,
            ticker: String,
            y_hat: f64,
            variance: f64,
            observed: f64,
        }
        let mut reader = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for row in reader.deserialize::<Row>() {
            rows.push(row.with_context(|| format!("parsing {}", path.display()))?);
        }
        if rows.is_empty() {
            bail!("{} has no forecast rows", path.display());
        }
        let mut tickers = Vec::new();
        for r in &rows {
            if r.date != rows[0].date {
                break;
            }
            tickers.push(r.ticker.clone());
        }
        let m = tickers.len();
        if rows.len() % m != 0 {
            bail!("{}: {} rows is not a whole number of days", path.display(), rows.len());
        }
        let t_len = rows.len() / m;
        let mut dates = Vec::with_capacity(t_len);
        let mut y_hat = DMatrix::zeros(t_len, m);
        let mut variance = DMatrix::zeros(t_len, m);
        let mut observed = DMatrix::zeros(t_len, m);
        for (idx, r) in rows.iter().enumerate() {
            let (t, i) = (idx / m, idx % m);
            if r.ticker != tickers[i] {
                bail!(
                    "{} row {}: ticker {} out of order (expected {})",
                    path.display(),
                    idx + 2,
                    r.ticker,
                    tickers[i]
                );
            }
            if i == 0 {
                dates.push(r.date.clone());
            } else if r.date != dates[t] {
                bail!("{} row {}: date changes mid-day", path.display(), idx + 2);
            }
            y_hat[(t, i)] = r.y_hat;
            variance[(t, i)] = r.variance;
            observed[(t, i)] = r.observed;
        }
        Ok(Self {
            dates,
            tickers,
            y_hat,
            variance,
            observed,
        })
    }
}
