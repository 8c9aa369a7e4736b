//! Offline pruning and split-region construction, plus the online lookup.
//!
//! For a fixed profile, the epoch delay of cut `n` is a positive multiple of
//!
//! ```text
//! θ·L_k(n) + bits·(N_k(n) + N_c(n)/D_k)        with θ = β·R/f_k
//! ```
//!
//! plus a cut-independent constant, so the delay-optimal cut only depends on
//! `θ`. The offline phase removes every layer that can never be optimal and
//! records, for each survivor, the interval of `θ` on which it is optimal.
//! The online phase is a single interval lookup.
//!
//! Trade-off values are kept as exact rationals over `i128` so that pruning
//! decisions are free of rounding; only the published region boundaries are
//! `f64`.

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::delaymodel::ResourceState;
use crate::netprofile::NetworkProfile;
use crate::{Error, Result};

/// Which pruning step produced a [`CandidateSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneStage {
    /// After profile-function pruning.
    AfterStep1,
    /// After trade-off pruning.
    AfterStep2,
}

/// Surviving cut candidates, strictly increasing, never empty, never `M`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    /// Candidate layer indices.
    pub layers: Vec<usize>,
    /// Pruning step that produced the set.
    pub stage: PruneStage,
}

/// Communication saved per client FLOP added when moving the cut from one
/// layer to a deeper one, as an exact rational.
///
/// The value in bits per FLOP is `num · scalar_bits / (D_k · den)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tradeoff {
    /// Deeper layer costs no extra client work but sends less.
    PosInf,
    /// `num / den` with `den > 0`.
    Finite {
        /// `(N_k(a) − N_k(b))·D_k − (N_c(b) − N_c(a))`.
        num: i128,
        /// `L_k(b) − L_k(a)`.
        den: i128,
    },
    /// Deeper layer costs no extra client work and sends no less.
    NegInf,
}

impl Tradeoff {
    fn from_parts(num: i128, den: i128) -> Self {
        match den.cmp(&0) {
            Ordering::Greater => Tradeoff::Finite { num, den },
            Ordering::Less => Tradeoff::Finite {
                num: -num,
                den: -den,
            },
            Ordering::Equal if num > 0 => Tradeoff::PosInf,
            Ordering::Equal => Tradeoff::NegInf,
        }
    }

    /// Value in bits per FLOP.
    pub fn bits_per_flop(self, scalar_bits: u32, dataset_size: u64) -> f64 {
        match self {
            Tradeoff::PosInf => f64::INFINITY,
            Tradeoff::NegInf => f64::NEG_INFINITY,
            Tradeoff::Finite { num, den } => {
                (num as f64 / den as f64) * (f64::from(scalar_bits) / dataset_size as f64)
            }
        }
    }
}

impl PartialOrd for Tradeoff {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Tradeoff {
    fn cmp(&self, other: &Self) -> Ordering {
        use Tradeoff::*;
        match (*self, *other) {
            (PosInf, PosInf) | (NegInf, NegInf) => Ordering::Equal,
            (PosInf, _) | (_, NegInf) => Ordering::Greater,
            (_, PosInf) | (NegInf, _) => Ordering::Less,
            (Finite { num: n1, den: d1 }, Finite { num: n2, den: d2 }) => {
                match (n1.checked_mul(d2), n2.checked_mul(d1)) {
                    (Some(l), Some(r)) => l.cmp(&r),
                    _ => (n1 as f64 / d1 as f64).total_cmp(&(n2 as f64 / d2 as f64)),
                }
            }
        }
    }
}

/// One end of a trade-off: a real layer or the virtual terminal layer with
/// zero activations, load and parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Point {
    Layer(usize),
    Virtual,
}

fn point_values(profile: &NetworkProfile, p: Point) -> (i128, i128, i128) {
    match p {
        Point::Layer(i) => (
            i128::from(profile.activation_size(i)),
            i128::from(profile.client_params(i)),
            i128::from(profile.client_flops(i)),
        ),
        Point::Virtual => (0, 0, 0),
    }
}

fn tradeoff_between(
    profile: &NetworkProfile,
    from: Point,
    to: Point,
    dataset_size: u64,
) -> Result<Tradeoff> {
    let (nk_a, nc_a, lk_a) = point_values(profile, from);
    let (nk_b, nc_b, lk_b) = point_values(profile, to);
    let overflow = || Error::Overflow {
        layer: match to {
            Point::Layer(i) => i,
            Point::Virtual => profile.num_layers(),
        },
    };
    let num = (nk_a - nk_b)
        .checked_mul(i128::from(dataset_size))
        .and_then(|v| v.checked_sub(nc_b - nc_a))
        .ok_or_else(overflow)?;
    let den = lk_b - lk_a;
    if to == Point::Virtual && den == 0 {
        // the terminal never pulls the cut deeper
        return Ok(Tradeoff::NegInf);
    }
    Ok(Tradeoff::from_parts(num, den))
}

/// `Δ(from, to)` between two layers, `from < to`.
///
/// `from = 0` is the input sentinel and yields `+∞`. `to = None` denotes the
/// virtual terminal layer after the deepest candidate, whose trade-off is
/// always negative.
pub fn tradeoff(
    profile: &NetworkProfile,
    from: usize,
    to: Option<usize>,
    dataset_size: u64,
) -> Result<Tradeoff> {
    if dataset_size == 0 {
        return Err(Error::Config("dataset size must be positive".into()));
    }
    if from == 0 {
        return Ok(Tradeoff::PosInf);
    }
    let to = match to {
        Some(to) if to <= from => {
            return Err(Error::Config(alloc::format!(
                "trade-off needs from < to, got {from} >= {to}"
            )))
        }
        Some(to) if to > profile.num_layers() => {
            return Err(Error::InvalidCut {
                cut: to,
                layers: profile.num_layers(),
            })
        }
        Some(to) => Point::Layer(to),
        None => Point::Virtual,
    };
    tradeoff_between(profile, Point::Layer(from), to, dataset_size)
}

/// `N_k(i)·D_k + N_c(i)`: total scalars transferred per epoch, scaled by 1/2.
fn epoch_traffic(profile: &NetworkProfile, layer: usize, dataset_size: u64) -> Result<i128> {
    i128::from(profile.activation_size(layer))
        .checked_mul(i128::from(dataset_size))
        .and_then(|v| v.checked_add(i128::from(profile.client_params(layer))))
        .ok_or(Error::Overflow { layer })
}

/// Profile-function pruning.
///
/// Starting from `{1, …, M−1}`, drops every layer whose per-epoch traffic
/// (activations for `D_k` samples plus one copy of the client parameters) is
/// no smaller than that of its closest surviving shallower layer: such a
/// layer adds client work without saving communication.
pub fn prune_profile_function(profile: &NetworkProfile, dataset_size: u64) -> Result<CandidateSet> {
    if dataset_size == 0 {
        return Err(Error::Config("dataset size must be positive".into()));
    }
    if profile.num_layers() < 2 {
        return Err(Error::Architecture(
            "a split needs at least two layers".into(),
        ));
    }
    let mut layers = Vec::new();
    let mut last_traffic = i128::MAX;
    for layer in profile.cut_range() {
        let traffic = epoch_traffic(profile, layer, dataset_size)?;
        if traffic < last_traffic {
            layers.push(layer);
            last_traffic = traffic;
        }
    }
    Ok(CandidateSet {
        layers,
        stage: PruneStage::AfterStep1,
    })
}

fn neighbor_tradeoffs(
    profile: &NetworkProfile,
    layers: &[usize],
    dataset_size: u64,
) -> Result<Vec<Tradeoff>> {
    // deltas[k] = Δ(layers[k-1], layers[k]); deltas[0] = Δ(0, first); last = Δ(P, virtual)
    let mut deltas = Vec::with_capacity(layers.len() + 1);
    deltas.push(Tradeoff::PosInf);
    for pair in layers.windows(2) {
        deltas.push(tradeoff_between(
            profile,
            Point::Layer(pair[0]),
            Point::Layer(pair[1]),
            dataset_size,
        )?);
    }
    if let Some(&last) = layers.last() {
        deltas.push(tradeoff_between(
            profile,
            Point::Layer(last),
            Point::Virtual,
            dataset_size,
        )?);
    }
    Ok(deltas)
}

/// Trade-off pruning.
///
/// Removes every candidate `j` with `Δ(prev, j) ≤ Δ(j, next)` over its current
/// neighbours, then recomputes the trade-offs between the new neighbours,
/// until the sequence of trade-offs is strictly decreasing.
pub fn prune_tradeoff(
    candidates: &CandidateSet,
    profile: &NetworkProfile,
    dataset_size: u64,
) -> Result<CandidateSet> {
    if candidates.stage != PruneStage::AfterStep1 {
        return Err(Error::Config(
            "trade-off pruning expects a profile-pruned candidate set".into(),
        ));
    }
    if dataset_size == 0 {
        return Err(Error::Config("dataset size must be positive".into()));
    }
    let mut layers = candidates.layers.clone();
    loop {
        let deltas = neighbor_tradeoffs(profile, &layers, dataset_size)?;
        let before = layers.len();
        let mut k = 0;
        layers.retain(|_| {
            let keep = deltas[k] > deltas[k + 1];
            k += 1;
            keep
        });
        if layers.len() == before {
            break;
        }
    }
    if layers.is_empty() {
        // unreachable for profile-pruned input; the deepest survivor always
        // has a negative trade-off to the terminal
        return Err(Error::Empty("candidate set"));
    }
    Ok(CandidateSet {
        layers,
        stage: PruneStage::AfterStep2,
    })
}

/// One split region: `layer` is the optimal cut for `θ ∈ [theta_low, theta_high)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    /// Cut layer.
    pub layer: usize,
    /// Inclusive lower bound, bits per FLOP.
    pub theta_low: f64,
    /// Exclusive upper bound, bits per FLOP; `+∞` for the shallowest layer.
    pub theta_high: f64,
}

impl Region {
    /// Whether `theta` lies in `[theta_low, theta_high)`.
    pub fn contains(&self, theta: f64) -> bool {
        self.theta_low <= theta && theta < self.theta_high
    }
}

/// Split regions of every surviving candidate, shallowest first. The
/// intervals partition `[0, ∞)` with strictly decreasing boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRegionTable {
    /// Regions, shallowest layer first.
    pub entries: Vec<Region>,
    /// Dataset size the boundaries were computed for.
    pub dataset_size: u64,
    /// Bits per scalar the boundaries were computed for.
    pub scalar_bits: u32,
}

impl SplitRegionTable {
    /// Checks the partition invariants, for tables loaded from storage.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(alloc::format!("region table: {m}")));
        let (Some(first), Some(last)) = (self.entries.first(), self.entries.last()) else {
            return Err(Error::Empty("region table"));
        };
        if first.theta_high != f64::INFINITY {
            return bad("shallowest region must extend to +inf");
        }
        if last.theta_low != 0.0 {
            return bad("deepest region must start at 0");
        }
        for e in &self.entries {
            if !(e.theta_low >= 0.0 && e.theta_low < e.theta_high) {
                return bad("each region needs 0 <= theta_low < theta_high");
            }
        }
        for pair in self.entries.windows(2) {
            if pair[0].layer >= pair[1].layer {
                return bad("layers must be strictly increasing");
            }
            if pair[0].theta_low != pair[1].theta_high {
                return bad("regions must be contiguous");
            }
        }
        Ok(())
    }

    /// Boundaries between consecutive regions, strictly decreasing.
    pub fn boundaries(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().skip(1).map(|e| e.theta_high)
    }

    /// Layers in the table, shallowest first.
    pub fn layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.layer)
    }

    /// Region containing `theta`, for `theta ≥ 0`.
    pub fn lookup(&self, theta: f64) -> Option<&Region> {
        let idx = self.entries.partition_point(|e| e.theta_low > theta);
        self.entries.get(idx).filter(|e| e.contains(theta))
    }
}

/// Builds the split-region table from trade-off-pruned candidates.
///
/// Candidate `n` with neighbours `prev` and `next` owns
/// `[max(Δ(n, next), 0), Δ(prev, n))`. A boundary `θ = Δ(n, next)` is a delay
/// tie between `n` and `next` and is assigned to `n`, the layer with the
/// smaller client-side load.
pub fn build_region_table(
    candidates: &CandidateSet,
    profile: &NetworkProfile,
    dataset_size: u64,
) -> Result<SplitRegionTable> {
    if candidates.stage != PruneStage::AfterStep2 {
        return Err(Error::Config(
            "region table expects a trade-off-pruned candidate set".into(),
        ));
    }
    if candidates.layers.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    let bits = profile.scalar_bits;
    let deltas = neighbor_tradeoffs(profile, &candidates.layers, dataset_size)?;
    let values: Vec<f64> = deltas
        .iter()
        .map(|d| d.bits_per_flop(bits, dataset_size))
        .collect();
    let last = candidates.layers.len() - 1;
    let entries = candidates
        .layers
        .iter()
        .enumerate()
        .map(|(k, &layer)| Region {
            layer,
            theta_low: if k == last { 0.0 } else { values[k + 1].max(0.0) },
            theta_high: values[k],
        })
        .collect();
    Ok(SplitRegionTable {
        entries,
        dataset_size,
        scalar_bits: bits,
    })
}

/// Runs both pruning steps and builds the region table.
pub fn offline_phase(profile: &NetworkProfile, dataset_size: u64) -> Result<SplitRegionTable> {
    let step1 = prune_profile_function(profile, dataset_size)?;
    let step2 = prune_tradeoff(&step1, profile, dataset_size)?;
    build_region_table(&step2, profile, dataset_size)
}

/// Online phase: the cut whose region contains `θ = β·R/f_k`.
pub fn select_cut_layer(table: &SplitRegionTable, res: &ResourceState) -> Result<usize> {
    res.validate()?;
    if res.server_flops <= res.client_flops {
        return Err(Error::ServerNotFaster {
            client_flops: res.client_flops,
            server_flops: res.server_flops,
        });
    }
    select_by_theta(table, res.theta())
}

/// Lookup by a precomputed `θ`.
pub fn select_by_theta(table: &SplitRegionTable, theta: f64) -> Result<usize> {
    if !theta.is_finite() || theta <= 0.0 {
        return Err(Error::Resource("theta must be finite and positive"));
    }
    table
        .lookup(theta)
        .map(|r| r.layer)
        .ok_or(Error::Empty("region table"))
}
