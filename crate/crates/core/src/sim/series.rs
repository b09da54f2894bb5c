use super::{render_tagged, simulate_drift, CameraConfig, ChopState, DriftModel, Frame, Scene};
use crate::config::RunConfig;
use crate::error::{invalid, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Force chopping: one frame per integration window, alternating force OFF
/// and ON, starting and ending with OFF so every ON frame has a drift
/// reference on both sides. `n_cycles` cycles yield `2·n_cycles + 1` frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChopSchedule {
    pub integration_time_s: f64,
    pub n_cycles: usize,
    /// Ion displacement while the force is ON.
    pub applied_displacement_nm: [f64; 3],
}

impl ChopSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.integration_time_s.is_finite() && self.integration_time_s > 0.0) {
            return Err(invalid("schedule integration_time_s must be > 0"));
        }
        if self.n_cycles < 2 {
            return Err(invalid(format!("schedule n_cycles must be ≥ 2, got {}", self.n_cycles)));
        }
        if self.applied_displacement_nm.iter().any(|v| !v.is_finite()) {
            return Err(invalid("schedule applied_displacement_nm must be finite"));
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        2 * self.n_cycles + 1
    }

    pub fn state(&self, index: usize) -> ChopState {
        if index.is_multiple_of(2) {
            ChopState::ForceOff
        } else {
            ChopState::ForceOn
        }
    }

    /// Mid-exposure time of frame `index`.
    pub fn timestamp(&self, index: usize) -> f64 {
        (index as f64 + 0.5) * self.integration_time_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub frame_index: u64,
    pub timestamp_s: f64,
    pub chop_state: ChopState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesManifest {
    pub format: String,
    pub seed: u64,
    pub integration_time_s: f64,
    pub n_frames: usize,
    pub frames: Vec<ManifestEntry>,
    /// Configuration the series was generated from, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<RunConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    pub frames: Vec<Frame>,
    pub manifest: SeriesManifest,
}

pub fn simulate_chopped_series(
    scene: &Scene,
    camera: &CameraConfig,
    drift: &DriftModel,
    schedule: &ChopSchedule,
    seed: u64,
) -> Result<FrameSeries> {
    scene.validate()?;
    camera.validate()?;
    schedule.validate()?;
    let n = schedule.n_frames();
    let times: Vec<f64> = (0..n).map(|i| schedule.timestamp(i)).collect();
    let trajectory = simulate_drift(drift, &times)?;

    let frames = (0..n)
        .into_par_iter()
        .map(|i| {
            let state = schedule.state(i);
            let mut pos = scene.ion_position_nm;
            for a in 0..3 {
                pos[a] += trajectory[i][a];
                if state == ChopState::ForceOn {
                    pos[a] += schedule.applied_displacement_nm[a];
                }
            }
            render_tagged(&scene.at_position(pos), camera, seed, i as u64, times[i], state)
        })
        .collect::<Result<Vec<Frame>>>()?;

    let entries = frames
        .iter()
        .map(|f| ManifestEntry {
            file: super::ionf::frame_file_name(f.meta.frame_index),
            frame_index: f.meta.frame_index,
            timestamp_s: f.meta.timestamp_s,
            chop_state: f.meta.chop_state,
        })
        .collect();
    Ok(FrameSeries {
        frames,
        manifest: SeriesManifest {
            format: super::ionf::SERIES_FORMAT.to_string(),
            seed,
            integration_time_s: schedule.integration_time_s,
            n_frames: n,
            frames: entries,
            run_config: None,
        },
    })
}
