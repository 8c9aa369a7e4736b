//! Per-epoch split-learning delay for a given cut layer and resource state.
//!
//! One epoch runs `D_k / B_k` batches, each with a forward and a backward
//! pass of equal duration through the client segment, the link and the server
//! segment, followed by one download and one upload of the client-side
//! parameters:
//!
//! ```text
//! T = 2·(D_k/B_k)·(τ_k + t_0 + τ_s) + 2·t_p
//! ```

use serde::{Deserialize, Serialize};

use crate::netprofile::NetworkProfile;
use crate::{Error, Result};

/// Computing speeds and link rate during one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceState {
    /// Client speed `f_k` in FLOP/s.
    pub client_flops: f64,
    /// Server speed `f_s` in FLOP/s.
    pub server_flops: f64,
    /// Link rate `R` in bit/s.
    pub link_bps: f64,
}

impl ResourceState {
    /// Validated constructor.
    pub fn new(client_flops: f64, server_flops: f64, link_bps: f64) -> Result<Self> {
        let res = Self {
            client_flops,
            server_flops,
            link_bps,
        };
        res.validate()?;
        Ok(res)
    }

    /// Rejects non-finite or non-positive components.
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.client_flops) {
            return Err(Error::Resource("client speed must be finite and positive"));
        }
        if !ok(self.server_flops) {
            return Err(Error::Resource("server speed must be finite and positive"));
        }
        if !ok(self.link_bps) {
            return Err(Error::Resource("link rate must be finite and positive"));
        }
        Ok(())
    }

    /// `a = f_s / f_k`.
    pub fn speed_ratio(&self) -> f64 {
        self.server_flops / self.client_flops
    }

    /// `β = (a - 1) / a = 1 - f_k / f_s`.
    pub fn beta(&self) -> f64 {
        1.0 - self.client_flops / self.server_flops
    }

    /// `θ = β·R / f_k` in bits per FLOP.
    pub fn theta(&self) -> f64 {
        self.beta() * self.link_bps / self.client_flops
    }

    /// A resource state with `f_k = 1`, `f_s = 2` and the link rate chosen so
    /// that `θ` equals `theta`. The delay-optimal cut depends on resources
    /// only through `θ`, so this is a canonical representative.
    pub fn from_theta(theta: f64) -> Result<Self> {
        Self::new(1.0, 2.0, 2.0 * theta)
    }
}

/// How the number of batches per epoch is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchCount {
    /// `D_k / B_k` as a real number (9992 / 100 = 99.92).
    #[default]
    Exact,
    /// `ceil(D_k / B_k)`, charging the partial final batch as a full batch.
    Ceil,
}

/// Dataset, batching and schedule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Samples per client, `D_k`.
    pub dataset_size: u64,
    /// Samples per batch, `B_k`.
    pub batch_size: u64,
    /// Clients per round, `N`.
    pub clients: usize,
    /// Training rounds, `T`.
    pub rounds: usize,
    /// Epochs per client turn, `E`.
    pub epochs: usize,
    /// Batch-count convention.
    #[serde(default)]
    pub batch_count: BatchCount,
}

impl TrainingConfig {
    /// The evaluation setup: 9992 samples, batches of 100, 10 clients,
    /// 35 rounds, one epoch per turn, exact batch count.
    pub fn reference() -> Self {
        Self {
            dataset_size: 9992,
            batch_size: 100,
            clients: 10,
            rounds: 35,
            epochs: 1,
            batch_count: BatchCount::Exact,
        }
    }

    /// Rejects zero sizes and counts.
    pub fn validate(&self) -> Result<()> {
        if self.dataset_size == 0 || self.batch_size == 0 {
            return Err(Error::Config("dataset and batch size must be positive".into()));
        }
        if self.clients == 0 || self.rounds == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "clients, rounds and epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Batches per epoch under the configured convention.
    pub fn batches_per_epoch(&self) -> f64 {
        match self.batch_count {
            BatchCount::Exact => self.dataset_size as f64 / self.batch_size as f64,
            BatchCount::Ceil => self.dataset_size.div_ceil(self.batch_size) as f64,
        }
    }

    /// Dataset size the delay formula effectively sees: `D_k` in exact mode,
    /// `ceil(D_k / B_k)·B_k` in ceil mode. Region tables must be built with
    /// this value for their boundaries to match the delays computed here.
    pub fn effective_dataset_size(&self) -> u64 {
        match self.batch_count {
            BatchCount::Exact => self.dataset_size,
            BatchCount::Ceil => self.dataset_size.div_ceil(self.batch_size) * self.batch_size,
        }
    }
}

/// The four delay components and the epoch total for one cut.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayBreakdown {
    /// Cut layer.
    pub cut: usize,
    /// Client computation per batch pass, seconds.
    pub tau_k: f64,
    /// Server computation per batch pass, seconds.
    pub tau_s: f64,
    /// Activation (or gradient) transfer per batch pass, seconds.
    pub t_0: f64,
    /// One transfer of the client-side parameters, seconds.
    pub t_p: f64,
    /// Epoch total, seconds.
    pub t_epoch: f64,
}

/// `(τ_k, τ_s)` for one batch pass.
pub fn compute_delays(
    profile: &NetworkProfile,
    cut: usize,
    res: &ResourceState,
    cfg: &TrainingConfig,
) -> Result<(f64, f64)> {
    profile.check_cut(cut)?;
    res.validate()?;
    let batch = cfg.batch_size as f64;
    let tau_k = profile.client_flops(cut) as f64 * batch / res.client_flops;
    let tau_s = profile.server_flops(cut) as f64 * batch / res.server_flops;
    Ok((tau_k, tau_s))
}

/// `(t_0, t_p)`: one batch of activations, and one copy of the client-side
/// parameters, over the link.
pub fn transmission_delays(
    profile: &NetworkProfile,
    cut: usize,
    res: &ResourceState,
    cfg: &TrainingConfig,
) -> Result<(f64, f64)> {
    profile.check_cut(cut)?;
    res.validate()?;
    let bits = f64::from(profile.scalar_bits);
    let t_0 = profile.activation_size(cut) as f64 * bits * cfg.batch_size as f64 / res.link_bps;
    let t_p = profile.client_params(cut) as f64 * bits / res.link_bps;
    Ok((t_0, t_p))
}

/// Full per-epoch breakdown for a cut.
pub fn epoch_delay(
    profile: &NetworkProfile,
    cut: usize,
    res: &ResourceState,
    cfg: &TrainingConfig,
) -> Result<DelayBreakdown> {
    cfg.validate()?;
    let (tau_k, tau_s) = compute_delays(profile, cut, res, cfg)?;
    let (t_0, t_p) = transmission_delays(profile, cut, res, cfg)?;
    let t_epoch = 2.0 * cfg.batches_per_epoch() * (tau_k + t_0 + tau_s) + 2.0 * t_p;
    Ok(DelayBreakdown {
        cut,
        tau_k,
        tau_s,
        t_0,
        t_p,
        t_epoch,
    })
}
