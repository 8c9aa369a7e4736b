//! On-disk split-region database.
//!
//! ```json
//! {"arch_hash": "…", "convention": {…}, "D_k": 9992, "scalar_bits": 32,
//!  "entries": [{"layer": 1, "theta_low": 0.0088, "theta_high": null}, …]}
//! ```
//!
//! `theta_high: null` stands for `+∞`. A table is keyed by architecture hash,
//! FLOP convention, scalar width and dataset size; loading checks the key
//! against the caller's expectations.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use splitpoint_core::netprofile::{ArchitectureSpec, FlopConvention};
use splitpoint_core::ocla::{Region, SplitRegionTable};

use crate::arch::architecture_hash;
use crate::error::{FormatError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryDoc {
    pub layer: usize,
    pub theta_low: f64,
    pub theta_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTableFile {
    pub arch_hash: String,
    pub convention: FlopConvention,
    #[serde(rename = "D_k")]
    pub dataset_size: u64,
    pub scalar_bits: u32,
    pub entries: Vec<EntryDoc>,
}

impl RegionTableFile {
    pub fn new(
        table: &SplitRegionTable,
        arch: &ArchitectureSpec,
        convention: &FlopConvention,
    ) -> Self {
        let entries = table
            .entries
            .iter()
            .map(|e| EntryDoc {
                layer: e.layer,
                theta_low: e.theta_low,
                theta_high: e.theta_high.is_finite().then_some(e.theta_high),
            })
            .collect();
        Self {
            arch_hash: architecture_hash(arch, convention),
            convention: *convention,
            dataset_size: table.dataset_size,
            scalar_bits: table.scalar_bits,
            entries,
        }
    }

    /// The validated in-memory table.
    pub fn table(&self) -> Result<SplitRegionTable> {
        let table = SplitRegionTable {
            entries: self
                .entries
                .iter()
                .map(|e| Region {
                    layer: e.layer,
                    theta_low: e.theta_low,
                    theta_high: e.theta_high.unwrap_or(f64::INFINITY),
                })
                .collect(),
            dataset_size: self.dataset_size,
            scalar_bits: self.scalar_bits,
        };
        table.validate()?;
        Ok(table)
    }

    /// Fails unless this file was built for `arch` under `convention`.
    pub fn check_architecture(
        &self,
        arch: &ArchitectureSpec,
        convention: &FlopConvention,
    ) -> Result<()> {
        let expected = architecture_hash(arch, convention);
        if self.arch_hash != expected {
            return Err(FormatError::Invalid(format!(
                "region table was built for architecture {} but this one hashes to {expected}",
                self.arch_hash
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        let file: Self = serde_json::from_str(&text)?;
        file.table()?;
        Ok(file)
    }

    /// Writes to a sibling temporary file and renames it into place, so
    /// readers never observe a partial table.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_vec_pretty(self)?;
        let mut f = fs::File::create(&tmp).map_err(|e| FormatError::io(&tmp, e))?;
        f.write_all(&body)
            .and_then(|_| f.write_all(b"\n"))
            .and_then(|_| f.sync_all())
            .map_err(|e| FormatError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| FormatError::io(path, e))
    }
}
