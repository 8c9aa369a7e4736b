//! CSV row layouts for every table the tool emits. Loss curves are written
//! straight from [`splitpoint_core::simrunner::CurvePoint`].

use std::io::Write;

use serde::Serialize;
use splitpoint_core::montecarlo::GainSurface;
use splitpoint_core::netprofile::NetworkProfile;
use splitpoint_core::ocla::SplitRegionTable;
use splitpoint_core::simrunner::Timeline;

use crate::error::Result;

#[derive(Debug, Serialize)]
pub struct ProfileRow {
    pub layer_index: usize,
    pub kind: &'static str,
    pub l_flops: u64,
    #[serde(rename = "L_k")]
    pub cumulative_flops: u64,
    #[serde(rename = "N_k")]
    pub activations: u64,
    #[serde(rename = "N_p")]
    pub params: u64,
    #[serde(rename = "N_c")]
    pub cumulative_params: u64,
}

pub fn profile_rows(p: &NetworkProfile) -> Vec<ProfileRow> {
    (0..p.num_layers())
        .map(|i| ProfileRow {
            layer_index: i + 1,
            kind: p.kinds[i].as_str(),
            l_flops: p.layer_flops[i],
            cumulative_flops: p.cumulative_flops[i],
            activations: p.activations[i],
            params: p.layer_params[i],
            cumulative_params: p.cumulative_params[i],
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct RegionRow {
    pub layer: usize,
    pub theta_low: f64,
    pub theta_high: f64,
}

pub fn region_rows(t: &SplitRegionTable) -> Vec<RegionRow> {
    t.entries
        .iter()
        .map(|e| RegionRow {
            layer: e.layer,
            theta_low: e.theta_low,
            theta_high: e.theta_high,
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct TimelineRow {
    pub round: usize,
    pub client: usize,
    pub cut: usize,
    pub tau_k: f64,
    pub tau_s: f64,
    pub t0: f64,
    pub tp: f64,
    #[serde(rename = "epoch_T")]
    pub epoch_t: f64,
    #[serde(rename = "cum_T")]
    pub cum_t: f64,
}

pub fn timeline_rows(t: &Timeline) -> Vec<TimelineRow> {
    t.events
        .iter()
        .map(|e| TimelineRow {
            round: e.round,
            client: e.client,
            cut: e.breakdown.cut,
            tau_k: e.breakdown.tau_k,
            tau_s: e.breakdown.tau_s,
            t0: e.breakdown.t_0,
            tp: e.breakdown.t_p,
            epoch_t: e.breakdown.t_epoch,
            cum_t: e.cumulative,
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct SurfaceRow {
    pub r_cv: f64,
    pub beta_cv: f64,
    pub a_ocla: f64,
    pub a_naive: f64,
    pub gain: f64,
    pub stderr: f64,
}

pub fn surface_rows(s: &GainSurface) -> Vec<SurfaceRow> {
    s.cells
        .iter()
        .map(|c| SurfaceRow {
            r_cv: c.rate_cv,
            beta_cv: c.ratio_cv,
            a_ocla: c.a_ocla,
            a_naive: c.a_naive,
            gain: c.gain,
            stderr: c.stderr,
        })
        .collect()
}

pub fn write_csv<W: Write, R: Serialize>(out: W, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
