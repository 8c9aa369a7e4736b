//! Reference selectors: the exhaustive oracle and the fixed-layer baseline.

use alloc::format;
use alloc::string::{String, ToString};
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::delaymodel::{epoch_delay, DelayBreakdown, ResourceState, TrainingConfig};
use crate::netprofile::NetworkProfile;
use crate::ocla::{select_cut_layer, SplitRegionTable};
use crate::{Error, Result};

/// How a cut layer is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SelectorKind {
    /// Region-table lookup.
    Ocla,
    /// Argmin of the epoch delay over every cut.
    Exhaustive,
    /// Always the same layer, whatever the resources.
    Naive(usize),
}

impl SelectorKind {
    /// Picks a cut for one resource state. `table` is required for
    /// [`SelectorKind::Ocla`].
    pub fn select(
        self,
        profile: &NetworkProfile,
        table: Option<&SplitRegionTable>,
        res: &ResourceState,
        cfg: &TrainingConfig,
    ) -> Result<usize> {
        match self {
            SelectorKind::Ocla => {
                let table = table.ok_or(Error::Empty("region table"))?;
                select_cut_layer(table, res)
            }
            SelectorKind::Exhaustive => exhaustive_optimal(profile, res, cfg).map(|(n, _)| n),
            SelectorKind::Naive(layer) => naive_select(layer, profile),
        }
    }
}

impl core::fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SelectorKind::Ocla => f.write_str("ocla"),
            SelectorKind::Exhaustive => f.write_str("exhaustive"),
            SelectorKind::Naive(k) => write!(f, "naive:{k}"),
        }
    }
}

impl FromStr for SelectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ocla" => Ok(SelectorKind::Ocla),
            "exhaustive" => Ok(SelectorKind::Exhaustive),
            _ => {
                let layer = s
                    .strip_prefix("naive:")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "unknown selector `{s}` (expected ocla, exhaustive or naive:<layer>)"
                        ))
                    })?;
                Ok(SelectorKind::Naive(layer))
            }
        }
    }
}

impl TryFrom<String> for SelectorKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SelectorKind> for String {
    fn from(kind: SelectorKind) -> Self {
        kind.to_string()
    }
}

/// Delay-optimal cut over all of `1..=M-1`.
///
/// Exact delay ties go to the layer with the smaller client-side load, then
/// to the shallower layer.
pub fn exhaustive_optimal(
    profile: &NetworkProfile,
    res: &ResourceState,
    cfg: &TrainingConfig,
) -> Result<(usize, DelayBreakdown)> {
    let mut best: Option<DelayBreakdown> = None;
    for cut in profile.cut_range() {
        let d = epoch_delay(profile, cut, res, cfg)?;
        let better = match &best {
            None => true,
            Some(b) => {
                d.t_epoch < b.t_epoch
                    || (d.t_epoch == b.t_epoch
                        && profile.client_flops(cut) < profile.client_flops(b.cut))
            }
        };
        if better {
            best = Some(d);
        }
    }
    let best = best.ok_or_else(|| Error::Architecture("a split needs at least two layers".into()))?;
    Ok((best.cut, best))
}

/// The fixed-layer baseline.
pub fn naive_select(fixed_layer: usize, profile: &NetworkProfile) -> Result<usize> {
    profile.check_cut(fixed_layer)?;
    Ok(fixed_layer)
}
