//! Cut-layer selection for split learning.
//!
//! The crate profiles a layered network ([`netprofile`]), models the per-epoch
//! training delay of a split at any layer ([`delaymodel`]), prunes the layer
//! pool and builds the split-region table used for constant-time online
//! selection ([`ocla`]), provides reference selectors ([`baselines`]), and
//! evaluates selectors under randomly varying resources ([`montecarlo`],
//! [`simrunner`]).
//!
//! Everything here is pure computation over in-memory values and builds
//! without `std`. File formats, the command line and parallel execution live
//! in the `splitpoint` crate.

#![no_std]
#![deny(missing_docs)]

extern crate alloc;

#[cfg(any(test, feature = "std"))]
extern crate std;

mod error;

pub mod baselines;
pub mod delaymodel;
pub mod montecarlo;
pub mod netprofile;
pub mod ocla;
pub mod simrunner;

pub use self::baselines::{exhaustive_optimal, naive_select, SelectorKind};
pub use self::delaymodel::{
    compute_delays, epoch_delay, transmission_delays, BatchCount, DelayBreakdown, ResourceState,
    TrainingConfig,
};
pub use self::error::Error;
pub use self::montecarlo::{
    aggregate_cell, calibrate_client_flops, draw_resource, iteration_rng, linspace,
    run_gain_grid, run_iteration, sample_folded_normal, selection_rate, CvCell,
    FoldedNormalParams, GainCell, GainSurface, IterationOutcome, MonteCarloConfig,
    ResourceDistribution,
};
pub use self::netprofile::{
    build_profile, layer_cost, reference_emg_cnn, synthetic_architecture, Activation, ArchitectureSpec, FlopConvention,
    LayerDecl, LayerKind, LayerSpec, NetworkProfile,
};
pub use self::ocla::{
    build_region_table, offline_phase, prune_profile_function, prune_tradeoff, select_by_theta,
    select_cut_layer, tradeoff, CandidateSet, PruneStage, Region, SplitRegionTable, Tradeoff,
};
pub use self::simrunner::{
    attach_loss_trace, simulate_training, CurvePoint, EpochEvent, LossPoint, ResourceSource,
    SimulationConfig, Timeline,
};

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = core::result::Result<T, E>;
