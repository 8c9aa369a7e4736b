//! Multi-threaded gain surface.
//!
//! Every `(cell, iteration)` pair owns its generator, so the split across
//! threads has no effect on the numbers: the result is bit-identical to
//! [`splitpoint_core::montecarlo::run_gain_grid`].

use rayon::prelude::*;
use splitpoint_core::montecarlo::{aggregate_cell, run_iteration, GainSurface, MonteCarloConfig};
use splitpoint_core::netprofile::NetworkProfile;
use splitpoint_core::ocla::SplitRegionTable;

use crate::error::{FormatError, Result};

/// Runs the surface on a rayon pool of `threads` workers (the global pool
/// when `None`).
pub fn run_gain_grid_parallel(
    profile: &NetworkProfile,
    table: &SplitRegionTable,
    cfg: &MonteCarloConfig,
    threads: Option<usize>,
) -> Result<GainSurface> {
    cfg.validate(profile, table)?;
    let work = || -> Result<GainSurface> {
        let iters = cfg.iterations;
        let outcomes = (0..cfg.grid.len() * iters)
            .into_par_iter()
            .map(|k| run_iteration(profile, table, cfg, k / iters, k % iters))
            .collect::<Result<Vec<_>, _>>()?;
        let cells = cfg
            .grid
            .iter()
            .zip(outcomes.chunks(iters))
            .map(|(&cell, chunk)| aggregate_cell(cell, chunk))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GainSurface { cells })
    };
    match threads {
        None => work(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| FormatError::Invalid(format!("thread pool: {e}")))?
            .install(work),
    }
}
