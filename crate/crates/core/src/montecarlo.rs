//! Monte Carlo evaluation of cut selectors under randomly varying resources.
//!
//! The link rate `R` and the speed ratio `1−β = f_k/f_s` are drawn from folded
//! normal distributions whose standard deviations are given as coefficients
//! of variation of their means. Each `(cell, iteration)` pair owns a generator
//! seeded from `(seed, cell, iteration)`, so results do not depend on the
//! order in which iterations are evaluated.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::exhaustive_optimal;
use crate::delaymodel::{ResourceState, TrainingConfig};
use crate::netprofile::NetworkProfile;
use crate::ocla::{select_cut_layer, SplitRegionTable};
use crate::{Error, Result};

const MAX_REDRAWS: u32 = 1_000_000;

/// Distribution of `|X|` with `X ~ Normal(mean, sigma²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldedNormalParams {
    /// Location of the underlying normal.
    pub mean: f64,
    /// Scale of the underlying normal.
    pub sigma: f64,
}

impl FoldedNormalParams {
    /// Validated constructor; `sigma` must be finite and non-negative.
    pub fn new(mean: f64, sigma: f64) -> Result<Self> {
        if !mean.is_finite() || !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::Config(alloc::format!(
                "folded normal needs finite mean and sigma >= 0, got ({mean}, {sigma})"
            )));
        }
        Ok(Self { mean, sigma })
    }

    /// Parameters with `sigma = cv · mean`.
    pub fn from_cv(mean: f64, cv: f64) -> Result<Self> {
        Self::new(mean, cv * mean)
    }
}

/// One draw `|mean + sigma·Z|`.
pub fn sample_folded_normal<R: Rng + ?Sized>(p: &FoldedNormalParams, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (p.mean + p.sigma * z).abs()
}

/// Mean resources around which draws are made.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceDistribution {
    /// Client speed `f_k`, FLOP/s (held fixed).
    pub client_flops: f64,
    /// `E[R]`, bit/s.
    pub mean_link_bps: f64,
    /// `E[1−β] = E[f_k/f_s]`, in `(0, 1)`.
    pub mean_speed_ratio: f64,
}

impl ResourceDistribution {
    /// 20 Mbit/s mean link and `E[1−β] = 0.03`, with the given client speed.
    pub fn reference(client_flops: f64) -> Self {
        Self {
            client_flops,
            mean_link_bps: 20e6,
            mean_speed_ratio: 0.03,
        }
    }

    /// Checks ranges.
    pub fn validate(&self) -> Result<()> {
        if !(self.client_flops.is_finite() && self.client_flops > 0.0) {
            return Err(Error::Config("client speed must be finite and positive".into()));
        }
        if !(self.mean_link_bps.is_finite() && self.mean_link_bps > 0.0) {
            return Err(Error::Config("mean link rate must be finite and positive".into()));
        }
        if !(self.mean_speed_ratio > 0.0 && self.mean_speed_ratio < 1.0) {
            return Err(Error::Config("mean speed ratio E[1-beta] must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// `θ` at the means: `(1 − E[1−β])·E[R]/f_k`.
    pub fn mean_theta(&self) -> f64 {
        (1.0 - self.mean_speed_ratio) * self.mean_link_bps / self.client_flops
    }
}

/// Coefficients of variation of the link rate and of the speed ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    /// `R_cv = σ_R / E[R]`.
    pub rate_cv: f64,
    /// `(1−β)_cv = σ_{1−β} / E[1−β]`.
    pub ratio_cv: f64,
}

impl CvCell {
    /// Cartesian product, rate values outermost.
    pub fn grid(rate_cvs: &[f64], ratio_cvs: &[f64]) -> Vec<CvCell> {
        rate_cvs
            .iter()
            .flat_map(|&rate_cv| {
                ratio_cvs
                    .iter()
                    .map(move |&ratio_cv| CvCell { rate_cv, ratio_cv })
            })
            .collect()
    }
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Draws one resource state for a cell.
///
/// Speed-ratio draws outside `(0, 1)` (server not faster than the client) and
/// zero link rates are redrawn. Returns the state and the number of redraws.
pub fn draw_resource<R: Rng + ?Sized>(
    dist: &ResourceDistribution,
    cell: CvCell,
    rng: &mut R,
) -> Result<(ResourceState, u32)> {
    let rate = FoldedNormalParams::from_cv(dist.mean_link_bps, cell.rate_cv)?;
    let ratio = FoldedNormalParams::from_cv(dist.mean_speed_ratio, cell.ratio_cv)?;
    let mut rejections = 0u32;
    let link_bps = loop {
        let r = sample_folded_normal(&rate, rng);
        if r > 0.0 {
            break r;
        }
        rejections += 1;
        if rejections > MAX_REDRAWS {
            return Err(Error::Config("link-rate distribution yields no positive draws".into()));
        }
    };
    let speed_ratio = loop {
        let s = sample_folded_normal(&ratio, rng);
        if s > 0.0 && s < 1.0 {
            break s;
        }
        rejections += 1;
        if rejections > MAX_REDRAWS {
            return Err(Error::Config(
                "speed-ratio distribution yields no draws in (0, 1)".into(),
            ));
        }
    };
    let state = ResourceState::new(
        dist.client_flops,
        dist.client_flops / speed_ratio,
        link_bps,
    )?;
    Ok((state, rejections))
}

/// Fraction of predictions equal to the corresponding truth.
pub fn selection_rate(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("prediction list"));
    }
    if predictions.len() != truths.len() {
        return Err(Error::Length {
            what: "truth list",
            expected: predictions.len(),
            actual: truths.len(),
        });
    }
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Monte Carlo setup for a gain surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    /// Iterations `I` per cell.
    pub iterations: usize,
    /// Draws `J` per iteration.
    pub samples_per_iteration: usize,
    /// Coefficient-of-variation cells.
    pub grid: Vec<CvCell>,
    /// Mean resources.
    pub distribution: ResourceDistribution,
    /// Dataset and batching used by the oracle.
    pub training: TrainingConfig,
    /// Layer the naive baseline always picks.
    pub naive_layer: usize,
    /// Base seed.
    pub seed: u64,
}

impl MonteCarloConfig {
    /// Checks counts, ranges and that `table` matches the oracle's delay model.
    pub fn validate(&self, profile: &NetworkProfile, table: &SplitRegionTable) -> Result<()> {
        if self.iterations == 0 || self.samples_per_iteration == 0 {
            return Err(Error::Config("iterations and samples must be at least 1".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Empty("coefficient-of-variation grid"));
        }
        for cell in &self.grid {
            if !(cell.rate_cv > 0.0 && cell.ratio_cv > 0.0)
                || !cell.rate_cv.is_finite()
                || !cell.ratio_cv.is_finite()
            {
                return Err(Error::Config("coefficients of variation must be positive".into()));
            }
        }
        self.distribution.validate()?;
        self.training.validate()?;
        profile.check_cut(self.naive_layer)?;
        check_table(profile, table, &self.training)
    }
}

pub(crate) fn check_table(
    profile: &NetworkProfile,
    table: &SplitRegionTable,
    training: &TrainingConfig,
) -> Result<()> {
    if table.dataset_size != training.effective_dataset_size()
        || table.scalar_bits != profile.scalar_bits
    {
        return Err(Error::Config(alloc::format!(
            "region table built for D_k={} and {} bits/scalar, but delays use D_k={} and {} bits/scalar",
            table.dataset_size,
            table.scalar_bits,
            training.effective_dataset_size(),
            profile.scalar_bits
        )));
    }
    if let Some(bad) = table.layers().find(|&l| profile.check_cut(l).is_err()) {
        return Err(Error::InvalidCut {
            cut: bad,
            layers: profile.num_layers(),
        });
    }
    Ok(())
}

/// Generator for one `(cell, iteration)` pair.
pub fn iteration_rng(seed: u64, cell: usize, iteration: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(cell as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(iteration as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Hit counts of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IterationOutcome {
    /// Draws where the region lookup matched the oracle.
    pub ocla_hits: usize,
    /// Draws where the naive layer matched the oracle.
    pub naive_hits: usize,
    /// Draws made, `J`.
    pub samples: usize,
    /// Redrawn speed-ratio or link-rate samples.
    pub rejections: u64,
}

/// Runs iteration `iteration` of cell `cell_index`.
pub fn run_iteration(
    profile: &NetworkProfile,
    table: &SplitRegionTable,
    cfg: &MonteCarloConfig,
    cell_index: usize,
    iteration: usize,
) -> Result<IterationOutcome> {
    let cell = *cfg.grid.get(cell_index).ok_or(Error::Length {
        what: "coefficient-of-variation grid",
        expected: cell_index + 1,
        actual: cfg.grid.len(),
    })?;
    let mut rng = iteration_rng(cfg.seed, cell_index, iteration);
    let mut out = IterationOutcome {
        samples: cfg.samples_per_iteration,
        ..IterationOutcome::default()
    };
    for _ in 0..cfg.samples_per_iteration {
        let (res, rejected) = draw_resource(&cfg.distribution, cell, &mut rng)?;
        out.rejections += u64::from(rejected);
        let (truth, _) = exhaustive_optimal(profile, &res, &cfg.training)?;
        if select_cut_layer(table, &res)? == truth {
            out.ocla_hits += 1;
        }
        if cfg.naive_layer == truth {
            out.naive_hits += 1;
        }
    }
    Ok(out)
}

/// Aggregated result for one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainCell {
    /// `R_cv`.
    pub rate_cv: f64,
    /// `(1−β)_cv`.
    pub ratio_cv: f64,
    /// Mean over iterations of the region lookup's selection rate.
    pub a_ocla: f64,
    /// Mean over iterations of the naive selection rate.
    pub a_naive: f64,
    /// `a_ocla / a_naive`; `+∞` when the naive layer never hit.
    pub gain: f64,
    /// Sample standard deviation of the per-iteration OCLA rate.
    pub a_ocla_std: f64,
    /// Sample standard deviation of the per-iteration naive rate.
    pub a_naive_std: f64,
    /// Standard error of `a_naive`.
    pub stderr: f64,
    /// Total predictions scored, `I·J`.
    pub predictions: usize,
    /// Total redrawn samples.
    pub rejections: u64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}

/// Combines iteration outcomes (in iteration order) into a cell summary.
pub fn aggregate_cell(cell: CvCell, outcomes: &[IterationOutcome]) -> Result<GainCell> {
    if outcomes.is_empty() {
        return Err(Error::Empty("iteration outcomes"));
    }
    let rate = |hits: usize, n: usize| hits as f64 / n as f64;
    let (a_ocla, a_ocla_std) = mean_std(outcomes.iter().map(|o| rate(o.ocla_hits, o.samples)));
    let (a_naive, a_naive_std) =
        mean_std(outcomes.iter().map(|o| rate(o.naive_hits, o.samples)));
    let gain = if a_naive > 0.0 {
        a_ocla / a_naive
    } else {
        f64::INFINITY
    };
    Ok(GainCell {
        rate_cv: cell.rate_cv,
        ratio_cv: cell.ratio_cv,
        a_ocla,
        a_naive,
        gain,
        a_ocla_std,
        a_naive_std,
        stderr: a_naive_std / libm::sqrt(outcomes.len() as f64),
        predictions: outcomes.iter().map(|o| o.samples).sum(),
        rejections: outcomes.iter().map(|o| o.rejections).sum(),
    })
}

/// Gain of the region lookup over the naive baseline on every grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSurface {
    /// Cells in grid order.
    pub cells: Vec<GainCell>,
}

impl GainSurface {
    /// Cell with the given coefficients of variation.
    pub fn cell(&self, rate_cv: f64, ratio_cv: f64) -> Option<&GainCell> {
        self.cells
            .iter()
            .find(|c| c.rate_cv == rate_cv && c.ratio_cv == ratio_cv)
    }
}

/// Sequential gain-surface computation.
pub fn run_gain_grid(
    profile: &NetworkProfile,
    table: &SplitRegionTable,
    cfg: &MonteCarloConfig,
) -> Result<GainSurface> {
    cfg.validate(profile, table)?;
    let cells = cfg
        .grid
        .iter()
        .enumerate()
        .map(|(c, &cell)| {
            let outcomes = (0..cfg.iterations)
                .map(|i| run_iteration(profile, table, cfg, c, i))
                .collect::<Result<Vec<_>>>()?;
            aggregate_cell(cell, &outcomes)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GainSurface { cells })
}

/// Client speed placing the mean `θ` at the log-midpoint of `layer`'s region.
///
/// Open-ended regions use one decade beyond their finite bound.
pub fn calibrate_client_flops(
    table: &SplitRegionTable,
    layer: usize,
    mean_link_bps: f64,
    mean_speed_ratio: f64,
) -> Result<f64> {
    let region = table
        .entries
        .iter()
        .find(|e| e.layer == layer)
        .ok_or_else(|| Error::Config(alloc::format!("layer {layer} has no split region")))?;
    let target = match (region.theta_low > 0.0, region.theta_high.is_finite()) {
        (true, true) => libm::sqrt(region.theta_low * region.theta_high),
        (true, false) => region.theta_low * 10.0,
        (false, true) => region.theta_high / 10.0,
        (false, false) => 1.0,
    };
    let dist = ResourceDistribution {
        client_flops: 1.0,
        mean_link_bps,
        mean_speed_ratio,
    };
    dist.validate()?;
    Ok(dist.mean_theta() / target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netprofile::{build_profile, reference_emg_cnn, FlopConvention};
    use crate::ocla::offline_phase;

    #[test]
    fn degenerate_folded_normal() {
        let mut rng = iteration_rng(1, 0, 0);
        let p = FoldedNormalParams::new(0.03, 0.0).unwrap();
        for _ in 0..100 {
            assert_eq!(sample_folded_normal(&p, &mut rng), 0.03);
        }
        assert!(FoldedNormalParams::new(1.0, -1.0).is_err());
    }

    #[test]
    fn folded_draws_are_non_negative() {
        let mut rng = iteration_rng(2, 0, 0);
        let p = FoldedNormalParams::new(-0.5, 3.0).unwrap();
        assert!((0..10_000).all(|_| sample_folded_normal(&p, &mut rng) >= 0.0));
    }

    #[test]
    fn low_variance_cell_is_nearly_deterministic() {
        let dist = ResourceDistribution::reference(2.8e9);
        let cell = CvCell {
            rate_cv: 1e-12,
            ratio_cv: 1e-12,
        };
        let mut rng = iteration_rng(3, 0, 0);
        let (res, rejected) = draw_resource(&dist, cell, &mut rng).unwrap();
        assert_eq!(rejected, 0);
        let rel = (res.theta() - dist.mean_theta()).abs() / dist.mean_theta();
        assert!(rel < 1e-9, "{rel}");
    }

    #[test]
    fn invalid_speed_ratios_are_redrawn() {
        // mean 0.9 with cv 1: roughly 46% of draws land at or above 1
        let dist = ResourceDistribution {
            client_flops: 1e9,
            mean_link_bps: 1e6,
            mean_speed_ratio: 0.9,
        };
        let cell = CvCell {
            rate_cv: 0.5,
            ratio_cv: 1.0,
        };
        let mut rng = iteration_rng(4, 0, 0);
        let mut total = 0;
        for _ in 0..1000 {
            let (res, rejected) = draw_resource(&dist, cell, &mut rng).unwrap();
            assert!(res.server_flops > res.client_flops);
            total += rejected;
        }
        assert!(total > 100);
    }

    #[test]
    fn seeded_draws_repeat() {
        let dist = ResourceDistribution::reference(2.8e9);
        let cell = CvCell {
            rate_cv: 0.5,
            ratio_cv: 0.5,
        };
        let draw = |seed| {
            let mut rng = iteration_rng(seed, 2, 7);
            (0..50)
                .map(|_| draw_resource(&dist, cell, &mut rng).unwrap().0)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn selection_rates() {
        assert_eq!(selection_rate(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(selection_rate(&[1, 1, 1], &[2, 3, 6]).unwrap(), 0.0);
        let preds: Vec<usize> = (0..300).map(|i| if i < 225 { 3 } else { 1 }).collect();
        assert_eq!(selection_rate(&preds, &[3; 300]).unwrap(), 0.75);
        assert!(selection_rate(&[], &[]).is_err());
        assert!(selection_rate(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn grid_and_linspace() {
        let v = linspace(0.01, 0.5, 10);
        assert_eq!(v.len(), 10);
        assert_eq!(v[0], 0.01);
        assert_eq!(v[9], 0.5);
        let cells = CvCell::grid(&[0.1, 0.2], &[0.3, 0.4, 0.5]);
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[4], CvCell { rate_cv: 0.2, ratio_cv: 0.4 });
    }

    #[test]
    fn small_surface_has_perfect_lookup() {
        let profile = build_profile(&reference_emg_cnn(), &FlopConvention::default(), 32).unwrap();
        let training = TrainingConfig::reference();
        let table = offline_phase(&profile, training.effective_dataset_size()).unwrap();
        let fk = calibrate_client_flops(&table, 3, 20e6, 0.03).unwrap();
        let cfg = MonteCarloConfig {
            iterations: 4,
            samples_per_iteration: 50,
            grid: CvCell::grid(&[0.01, 0.5], &[0.01, 0.5]),
            distribution: ResourceDistribution::reference(fk),
            training,
            naive_layer: 3,
            seed: 11,
        };
        let surface = run_gain_grid(&profile, &table, &cfg).unwrap();
        assert_eq!(surface.cells.len(), 4);
        for c in &surface.cells {
            assert_eq!(c.a_ocla, 1.0);
            assert!(c.gain >= 1.0);
            assert_eq!(c.predictions, 200);
        }
        assert_eq!(surface, run_gain_grid(&profile, &table, &cfg).unwrap());
    }

    #[test]
    fn mismatched_table_is_rejected() {
        let profile = build_profile(&reference_emg_cnn(), &FlopConvention::default(), 32).unwrap();
        let table = offline_phase(&profile, 5000).unwrap();
        let cfg = MonteCarloConfig {
            iterations: 1,
            samples_per_iteration: 1,
            grid: CvCell::grid(&[0.1], &[0.1]),
            distribution: ResourceDistribution::reference(2.8e9),
            training: TrainingConfig::reference(),
            naive_layer: 3,
            seed: 0,
        };
        assert!(run_gain_grid(&profile, &table, &cfg).is_err());
    }

    #[test]
    fn calibration_hits_layer3_region() {
        let profile = build_profile(&reference_emg_cnn(), &FlopConvention::default(), 32).unwrap();
        let table = offline_phase(&profile, 9992).unwrap();
        let fk = calibrate_client_flops(&table, 3, 20e6, 0.03).unwrap();
        let theta = ResourceDistribution::reference(fk).mean_theta();
        assert_eq!(table.lookup(theta).unwrap().layer, 3);
        assert!((fk - 2.8e9).abs() < 0.05e9, "{fk}");
        assert!(calibrate_client_flops(&table, 2, 20e6, 0.03).is_err());
    }

    #[test]
    fn aggregation() {
        let outcomes = [
            IterationOutcome { ocla_hits: 10, naive_hits: 5, samples: 10, rejections: 1 },
            IterationOutcome { ocla_hits: 10, naive_hits: 7, samples: 10, rejections: 0 },
        ];
        let cell = aggregate_cell(CvCell { rate_cv: 0.1, ratio_cv: 0.2 }, &outcomes).unwrap();
        assert_eq!(cell.a_ocla, 1.0);
        assert!((cell.a_naive - 0.6).abs() < 1e-15);
        assert!((cell.gain - 1.0 / 0.6).abs() < 1e-12);
        assert!((cell.a_naive_std - libm::sqrt(0.02)).abs() < 1e-12);
        assert_eq!(cell.rejections, 1);
        let never = [IterationOutcome { ocla_hits: 3, naive_hits: 0, samples: 3, rejections: 0 }];
        assert_eq!(
            aggregate_cell(CvCell { rate_cv: 0.1, ratio_cv: 0.2 }, &never).unwrap().gain,
            f64::INFINITY
        );
    }
}
