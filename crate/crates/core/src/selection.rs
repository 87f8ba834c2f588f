//! Model selection: choosing each series' simultaneous parents by effect
//! size, and choosing discount factors by per-series predictive
//! log-likelihood maximization with cross-series averaging.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::cycle::{assimilate_day, regressor_for, MonteCarloSettings};
use crate::dlm::{log_likelihood, DiscountSet, DlmState};
use crate::error::Error;
use crate::ng::NormalGamma;
use crate::panel::ReturnsPanel;
use crate::structure::ParentStructure;
use crate::Result;

/// Which discount factor a grid search sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscountFactor {
    Beta,
    DeltaPhi,
    DeltaGamma,
}

impl DiscountFactor {
    pub fn name(self) -> &'static str {
        match self {
            DiscountFactor::Beta => "beta",
            DiscountFactor::DeltaPhi => "delta_phi",
            DiscountFactor::DeltaGamma => "delta_gamma",
        }
    }
}

/// A one-dimensional grid search specification: the candidate values for one
/// discount factor, with the other two held at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountGrid {
    factor: DiscountFactor,
    candidates: Vec<f64>,
    base: DiscountSet,
}

impl DiscountGrid {
    pub fn new(factor: DiscountFactor, candidates: Vec<f64>, base: DiscountSet) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Range("discount grid must be nonempty".into()));
        }
        for w in candidates.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::Range(format!(
                    "discount grid must be strictly ascending, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if candidates.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::Range("discount candidates must lie in (0, 1]".into()));
        }
        Ok(Self {
            factor,
            candidates,
            base,
        })
    }

    pub fn factor(&self) -> DiscountFactor {
        self.factor
    }

    pub fn candidates(&self) -> &[f64] {
        &self.candidates
    }

    /// The full discount set with the searched factor set to `value`.
    pub fn discounts_for(&self, value: f64) -> DiscountSet {
        let mut d = self.base;
        match self.factor {
            DiscountFactor::Beta => d.beta = value,
            DiscountFactor::DeltaPhi => d.delta_phi = value,
            DiscountFactor::DeltaGamma => d.delta_gamma = value,
        }
        d
    }
}

/// Outcome of a parent search: for each series, every candidate ranked by
/// effect size (descending, ties broken toward the lower index), and the
/// top-k chosen as its parents.
#[derive(Debug, Clone, PartialEq)]
pub struct ParentReport {
    /// Per series: (candidate series index, |posterior coupling mean|),
    /// sorted by effect size descending.
    pub ranked: Vec<Vec<(usize, f64)>>,
    /// Per series: the chosen parents — the first `k` entries of `ranked`.
    pub chosen: Vec<Vec<usize>>,
}

impl ParentReport {
    pub fn structure(&self) -> Result<ParentStructure> {
        ParentStructure::new(self.chosen.len(), self.chosen.clone())
    }
}

/// Outcome of a grid search: the per-series argmax values, their mean (the
/// value applied uniformly from then on), and the score matrix behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountSelection {
    pub factor: DiscountFactor,
    pub per_series: Vec<f64>,
    pub mean: f64,
    /// `scores[i][g]` = cumulative predictive log density for series `i` at
    /// grid point `g`; minus infinity where evaluation failed.
    pub scores: Vec<Vec<f64>>,
}

fn rank_by_effect(mut pairs: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    pairs.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("effect sizes are finite")
            .then(a.0.cmp(&b.0))
    });
    pairs
}

/// Phase-1 parent search: filter every series against all `m-1` candidates
/// simultaneously over the supplied panel, then rank candidates by the
/// magnitude of their final posterior coupling means and keep the top `k`.
pub fn select_parents(
    panel: &ReturnsPanel,
    k: usize,
    initial_prior: &NormalGamma,
    discounts: &DiscountSet,
) -> Result<ParentReport> {
    let m = panel.n_series();
    if m < 2 || k > m - 1 {
        return Err(Error::Range(format!(
            "cannot choose {k} parents among {} candidates",
            m.saturating_sub(1)
        )));
    }
    if initial_prior.dim() != m {
        return Err(Error::Dimension {
            what: "phase-1 prior (level plus one coefficient per candidate)".into(),
            expected: m,
            got: initial_prior.dim(),
        });
    }
    let t_len = panel.n_days();
    let ranked: Vec<Vec<(usize, f64)>> = (0..m)
        .into_par_iter()
        .map(|i| -> Result<Vec<(usize, f64)>> {
            let candidates: Vec<usize> = (0..m).filter(|&j| j != i).collect();
            let mut state = DlmState::new(initial_prior.clone());
            let mut regressor = DVector::zeros(m);
            for t in 0..t_len {
                let row = panel.row(t);
                regressor[0] = 1.0;
                for (slot, &j) in candidates.iter().enumerate() {
                    regressor[slot + 1] = row[j];
                }
                state.assimilate(&regressor, row[i])?;
                if t + 1 < t_len {
                    state.advance(discounts)?;
                }
            }
            let location = state
                .posterior
                .as_ref()
                .expect("observation just assimilated")
                .location();
            let pairs = candidates
                .iter()
                .enumerate()
                .map(|(slot, &j)| (j, location[slot + 1].abs()))
                .collect();
            Ok(rank_by_effect(pairs))
        })
        .collect::<Result<_>>()?;
    let chosen = ranked
        .iter()
        .map(|r| r.iter().take(k).map(|&(j, _)| j).collect())
        .collect();
    Ok(ParentReport { ranked, chosen })
}

/// Per-series argmax over grid candidates, and the cross-series mean of the
/// argmaxes. `scores[i][g]` is series `i`'s objective at candidate `g`; a
/// series whose scores are all non-finite fails the selection. Ties resolve
/// to the smallest candidate.
pub fn argmax_discounts(candidates: &[f64], scores: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    if candidates.is_empty() || scores.is_empty() {
        return Err(Error::Range("empty discount grid or score table".into()));
    }
    let mut per_series = Vec::with_capacity(scores.len());
    for (i, row) in scores.iter().enumerate() {
        if row.len() != candidates.len() {
            return Err(Error::Alignment(format!(
                "series {i} has {} scores for {} grid points",
                row.len(),
                candidates.len()
            )));
        }
        let mut best: Option<(f64, f64)> = None;
        for (&value, &score) in candidates.iter().zip(row) {
            if !score.is_finite() {
                continue;
            }
            match best {
                Some((_, s)) if s >= score => {}
                _ => best = Some((value, score)),
            }
        }
        match best {
            Some((value, _)) => per_series.push(value),
            None => {
                return Err(Error::SelectionFailure(format!(
                    "series {i}: no finite log-likelihood on the grid"
                )))
            }
        }
    }
    let mean = per_series.iter().sum::<f64>() / per_series.len() as f64;
    Ok((per_series, mean))
}

/// Phase-2 grid search for one discount factor: evaluate every series'
/// cumulative one-step predictive log density over `range` at each candidate
/// (conditioning on realized parent returns), take per-series argmaxes, and
/// average them into the uniformly applied value.
pub fn select_discount(
    panel: &ReturnsPanel,
    grid: &DiscountGrid,
    structure: &ParentStructure,
    initial_prior: &NormalGamma,
    range: (usize, usize),
) -> Result<DiscountSelection> {
    let m = panel.n_series();
    if structure.m() != m {
        return Err(Error::Dimension {
            what: "parent structure".into(),
            expected: m,
            got: structure.m(),
        });
    }
    if initial_prior.dim() != structure.state_dim() {
        return Err(Error::Dimension {
            what: "phase-2 prior".into(),
            expected: structure.state_dim(),
            got: initial_prior.dim(),
        });
    }
    if range.1 >= panel.n_days() || range.0 > range.1 {
        return Err(Error::Alignment(format!(
            "range [{}, {}] does not fit a panel of {} days",
            range.0,
            range.1,
            panel.n_days()
        )));
    }
    let scores: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let observations = panel.column(i);
            let regressors: Vec<DVector<f64>> = (0..panel.n_days())
                .map(|t| regressor_for(structure, i, &panel.row(t)))
                .collect();
            Ok(grid
                .candidates()
                .iter()
                .map(|&value| {
                    let discounts = grid.discounts_for(value);
                    match log_likelihood(
                        &observations,
                        &regressors,
                        initial_prior,
                        &discounts,
                        range,
                    ) {
                        Ok(ll) => ll,
                        Err(e) => {
                            log::debug!(
                                "series {i}, {} = {value}: likelihood failed: {e}",
                                grid.factor().name()
                            );
                            f64::NEG_INFINITY
                        }
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let (per_series, mean) = argmax_discounts(grid.candidates(), &scores)?;
    Ok(DiscountSelection {
        factor: grid.factor(),
        per_series,
        mean,
        scores,
    })
}

/// Re-run the daily cycle (without forecasting) over `range` to carry the
/// selected discounts through the data and produce decoupled starting priors
/// for the forecasting phase. A zero-length range returns the initial priors
/// unchanged.
pub fn run_phase2(
    panel: &ReturnsPanel,
    structure: &ParentStructure,
    discounts: &DiscountSet,
    initial_priors: &[NormalGamma],
    settings: &MonteCarloSettings,
    seed: u64,
    range: std::ops::Range<usize>,
) -> Result<Vec<NormalGamma>> {
    if range.end > panel.n_days() {
        return Err(Error::Alignment(format!(
            "range end {} exceeds panel length {}",
            range.end,
            panel.n_days()
        )));
    }
    let mut priors = initial_priors.to_vec();
    for t in range {
        let observations = panel.row(t);
        let (next, _) = assimilate_day(
            &priors,
            &observations,
            structure,
            discounts,
            settings,
            seed,
            t as u64,
        )?;
        priors = next;
    }
    Ok(priors)
}
