//! Rayon drivers for the per-window computations. Every driver collects in
//! window order, so results do not depend on the thread count.

use gapscope_core::panel::{ReturnPanel, WindowSpec};
use gapscope_core::portfolio::{
    eligible_columns, study_portfolio, study_windows, PortfolioStudy, StudyConfig, WindowOutcome,
};
use gapscope_core::regimes::{gap_point, panel_months, sector_columns, GapConfig, GapSeries, HeatmapGrid};
use gapscope_core::{Error, Result};
use rayon::prelude::*;

use crate::error::{CliError, CliResult};

/// Pool with `threads` workers; 0 lets rayon choose.
pub fn pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start thread pool: {e}")))
}

pub fn gap_series(returns: &ReturnPanel, config: &GapConfig) -> Result<GapSeries> {
    let windows = WindowSpec::rolling(returns.n_dates(), config.window, config.step)?;
    let results: Vec<_> = windows.par_iter().map(|w| gap_point(returns, *w, config)).collect();
    GapSeries::assemble(*config, results)
}

pub fn sector_gap_series(returns: &ReturnPanel, config: &GapConfig) -> Result<Vec<(String, GapSeries)>> {
    sector_columns(returns)?
        .into_par_iter()
        .map(|(sector, cols)| Ok((sector, gap_series(&returns.select_columns(&cols), config)?)))
        .collect()
}

pub fn heatmap(returns: &ReturnPanel, config: &GapConfig) -> Result<HeatmapGrid> {
    Ok(HeatmapGrid::from_sector_series(
        panel_months(returns),
        sector_gap_series(returns, config)?,
    ))
}

pub fn portfolio_study(
    returns: &ReturnPanel,
    market: &str,
    market_index: u64,
    config: &StudyConfig,
    seed: u64,
) -> Result<PortfolioStudy> {
    let windows = study_windows(returns.n_dates(), config)?;
    if windows.is_empty() {
        return Err(Error::TooFewDates {
            needed: config.formation + config.test + 1,
            got: returns.n_dates() + 1,
        });
    }
    let eligible: Vec<Vec<usize>> = windows.par_iter().map(|w| eligible_columns(returns, w)).collect();
    let jobs: Vec<(usize, usize)> = windows
        .iter()
        .enumerate()
        .filter(|(k, _)| eligible[*k].len() >= config.n_stocks)
        .flat_map(|(k, _)| (0..config.portfolios).map(move |p| (k, p)))
        .collect();
    let mut results = jobs
        .par_iter()
        .map(|&(k, p)| {
            study_portfolio(
                returns,
                market,
                market_index,
                &windows[k],
                &eligible[k],
                p,
                config,
                seed,
            )
        })
        .collect::<Vec<_>>()
        .into_iter();
    let outcomes = windows
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let outcome = if eligible[k].len() < config.n_stocks {
                WindowOutcome::TooFewEligible {
                    eligible: eligible[k].len(),
                }
            } else {
                WindowOutcome::Portfolios(results.by_ref().take(config.portfolios).collect())
            };
            (*w, outcome)
        })
        .collect();
    PortfolioStudy::assemble(market, *config, seed, returns, outcomes)
}
