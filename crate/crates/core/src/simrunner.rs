//! Sequential multi-client split-learning timeline.
//!
//! Rounds visit the clients in order; each client trains `E` epochs on its
//! local data. Resources are fixed for the duration of an epoch and drawn
//! anew for the next one, and the selector picks a cut for every epoch.
//!
//! Every epoch is charged its full delay `T = 2·(D_k/B_k)·(τ_k+t_0+τ_s) + 2·t_p`
//! except that the very first epoch skips the parameter download (nothing to
//! synchronise yet) and the very last epoch skips the upload.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::SelectorKind;
use crate::delaymodel::{epoch_delay, DelayBreakdown, ResourceState, TrainingConfig};
use crate::montecarlo::{check_table, draw_resource, CvCell, ResourceDistribution};
use crate::netprofile::NetworkProfile;
use crate::ocla::SplitRegionTable;
use crate::{Error, Result};

/// Where per-epoch resources come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceSource {
    /// The same state for every epoch.
    Fixed(ResourceState),
    /// Fresh folded-normal draw per epoch.
    Sampled {
        /// Means.
        distribution: ResourceDistribution,
        /// Coefficients of variation.
        cell: CvCell,
    },
    /// Replay, one state per epoch in order.
    Trace(Vec<ResourceState>),
}

/// Simulation setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Dataset, batching and schedule.
    pub training: TrainingConfig,
    /// Cut selector applied every epoch.
    pub selector: SelectorKind,
    /// Resource source.
    pub resources: ResourceSource,
    /// Seed for sampled resources.
    pub seed: u64,
}

/// One client epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochEvent {
    /// 1-based round.
    pub round: usize,
    /// 1-based client.
    pub client: usize,
    /// 1-based epoch within the client's turn.
    pub epoch: usize,
    /// Resources during the epoch.
    pub resources: ResourceState,
    /// Delay components for the chosen cut (`breakdown.cut`).
    pub breakdown: DelayBreakdown,
    /// Time actually charged after the synchronisation exceptions.
    pub charged: f64,
    /// Wall clock at the end of the epoch.
    pub cumulative: f64,
}

/// Simulation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    /// Epochs in execution order.
    pub events: Vec<EpochEvent>,
    /// Charged time per round.
    pub round_totals: Vec<f64>,
}

impl Timeline {
    /// Wall clock at the end of training.
    pub fn total(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.cumulative)
    }

    /// Wall clock at the end of each round.
    pub fn round_ends(&self) -> Vec<f64> {
        let per_round = self.events.len() / self.round_totals.len().max(1);
        self.events
            .chunks(per_round.max(1))
            .map(|c| c.last().map_or(0.0, |e| e.cumulative))
            .collect()
    }
}

#[allow(clippy::large_enum_variant)]
enum Draws<'a> {
    Fixed(ResourceState),
    Sampled(ResourceDistribution, CvCell, ChaCha8Rng),
    Trace(core::slice::Iter<'a, ResourceState>),
}

impl Draws<'_> {
    fn next(&mut self) -> Result<ResourceState> {
        match self {
            Draws::Fixed(r) => Ok(*r),
            Draws::Sampled(dist, cell, rng) => draw_resource(dist, *cell, rng).map(|(r, _)| r),
            Draws::Trace(it) => it.next().copied().ok_or(Error::Empty("resource trace")),
        }
    }
}

/// Runs the sequential training schedule.
///
/// `table` is required when the selector is the region lookup and must have
/// been built for `cfg.training.effective_dataset_size()`.
pub fn simulate_training(
    profile: &NetworkProfile,
    table: Option<&SplitRegionTable>,
    cfg: &SimulationConfig,
) -> Result<Timeline> {
    let t = &cfg.training;
    t.validate()?;
    let epochs_total = t.rounds * t.clients * t.epochs;
    match (cfg.selector, table) {
        (SelectorKind::Ocla, None) => return Err(Error::Empty("region table")),
        (SelectorKind::Ocla, Some(table)) => check_table(profile, table, t)?,
        (SelectorKind::Naive(k), _) => profile.check_cut(k)?,
        _ => {}
    }
    let mut draws = match &cfg.resources {
        ResourceSource::Fixed(r) => {
            r.validate()?;
            Draws::Fixed(*r)
        }
        ResourceSource::Sampled { distribution, cell } => {
            distribution.validate()?;
            Draws::Sampled(*distribution, *cell, ChaCha8Rng::seed_from_u64(cfg.seed))
        }
        ResourceSource::Trace(states) => {
            if states.len() < epochs_total {
                return Err(Error::Length {
                    what: "resource trace",
                    expected: epochs_total,
                    actual: states.len(),
                });
            }
            Draws::Trace(states.iter())
        }
    };

    let mut events = Vec::with_capacity(epochs_total);
    let mut round_totals = Vec::with_capacity(t.rounds);
    let mut clock = 0.0;
    for round in 1..=t.rounds {
        let mut round_time = 0.0;
        for client in 1..=t.clients {
            for epoch in 1..=t.epochs {
                let res = draws.next()?;
                let cut = cfg.selector.select(profile, table, &res, t)?;
                let breakdown = epoch_delay(profile, cut, &res, t)?;
                let first = events.is_empty();
                let last = events.len() + 1 == epochs_total;
                let mut charged = breakdown.t_epoch;
                if first {
                    charged -= breakdown.t_p;
                }
                if last {
                    charged -= breakdown.t_p;
                }
                clock += charged;
                round_time += charged;
                events.push(EpochEvent {
                    round,
                    client,
                    epoch,
                    resources: res,
                    breakdown,
                    charged,
                    cumulative: clock,
                });
            }
        }
        round_totals.push(round_time);
    }
    Ok(Timeline {
        events,
        round_totals,
    })
}

/// Externally measured training loss (and optionally accuracy) after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    /// 1-based epoch.
    pub epoch: usize,
    /// Training loss.
    pub loss: f64,
    /// Training accuracy, if recorded.
    pub accuracy: Option<f64>,
}

/// A learning-curve point on the simulated time axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// 1-based epoch.
    pub epoch: usize,
    /// Wall clock at the end of the epoch.
    pub seconds: f64,
    /// Training loss.
    pub loss: f64,
    /// Training accuracy, if recorded.
    pub accuracy: Option<f64>,
}

/// Places the `e`-th trace entry at the end time of the `e`-th epoch.
/// Entries beyond the number of simulated epochs are ignored.
pub fn attach_loss_trace(timeline: &Timeline, trace: &[LossPoint]) -> Result<Vec<CurvePoint>> {
    if trace.is_empty() {
        return Err(Error::Empty("loss trace"));
    }
    if trace.len() < timeline.events.len() {
        return Err(Error::Length {
            what: "loss trace",
            expected: timeline.events.len(),
            actual: trace.len(),
        });
    }
    Ok(timeline
        .events
        .iter()
        .zip(trace)
        .map(|(e, p)| CurvePoint {
            epoch: p.epoch,
            seconds: e.cumulative,
            loss: p.loss,
            accuracy: p.accuracy,
        })
        .collect())
}
