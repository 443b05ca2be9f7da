//! Detections in, speeds out: ingest -> track -> rectify -> speed.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GeometryError;
use crate::ingest::{anchor_point, Calibration, DetectionStream, IngestError};
use crate::metrics::SpeedRow;
use crate::speed::{
    transit_speed, window_speed, History, SpeedConfig, SpeedError, SpeedEstimate, SpeedMode, TrajectoryPoint,
};
use crate::tracker::{TrackId, Tracker, TrackerConfig, TrackerError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Speed(#[from] SpeedError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PipelineConfig {
    pub tracker: TrackerConfig,
    pub speed: SpeedConfig,
}

/// One per reported detection, for drawing boxes and speed labels outside
/// this crate. `speed_kmh` is the live estimate as of this frame, or null
/// before the track has a road-plane sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayRecord {
    pub frame: u64,
    pub track_id: u64,
    pub bbox: [f64; 4],
    pub speed_kmh: Option<u32>,
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOutput {
    /// Transit mode: one per track. Window mode: one per window.
    pub estimates: Vec<SpeedEstimate>,
    /// Final speed per track in `id,speed_kmh` form, ordered by track id.
    pub predictions: Vec<SpeedRow>,
    pub overlay: Vec<OverlayRecord>,
    pub frames: usize,
    pub detections: usize,
    /// Reported detections whose anchor was outside the ROI or on the horizon.
    pub excluded: usize,
}

/// Estimate at the latest sample of a trajectory.
fn live_estimate(track: TrackId, traj: &[TrajectoryPoint], fps: f64, cfg: &SpeedConfig) -> Option<u32> {
    let last = traj.last()?;
    let span = match cfg.mode {
        SpeedMode::Transit => traj,
        SpeedMode::Window => {
            let start = traj.partition_point(|p| (last.frame - p.frame) as f64 / fps > cfg.window_s + 1e-9);
            &traj[start..]
        }
    };
    Some(transit_speed(track, span, fps, cfg.min_samples).speed_kmh)
}

pub fn run<R: BufRead>(
    reader: R,
    calibration: &Calibration,
    config: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    config.speed.validate()?;
    let mut tracker = Tracker::new(config.tracker)?;
    let mut history = History::new();
    let mut out = PipelineOutput::default();
    let fps = calibration.fps;
    let h = calibration.homography();

    for batch in DetectionStream::new(reader, calibration.confidence_threshold) {
        let batch = batch?;
        out.frames += 1;
        out.detections += batch.detections.len();
        for (id, det) in tracker.step(&batch)? {
            let anchor = anchor_point(&det);
            let world = if calibration.roi.contains(anchor) {
                h.apply(anchor).ok()
            } else {
                None
            };
            match world {
                Some(world) => history.record(id, TrajectoryPoint { frame: batch.frame, world })?,
                None => out.excluded += 1,
            }
            let speed_kmh = history
                .trajectory(id)
                .and_then(|t| live_estimate(id, t, fps, &config.speed));
            out.overlay.push(OverlayRecord {
                frame: batch.frame,
                track_id: id.0,
                bbox: det.bbox.to_array(),
                speed_kmh,
            });
        }
    }

    let cfg = &config.speed;
    for (id, traj) in history.iter() {
        let per_track = match cfg.mode {
            SpeedMode::Transit => vec![transit_speed(id, traj, fps, cfg.min_samples)],
            SpeedMode::Window => window_speed(id, traj, fps, cfg.window_s, cfg.min_samples),
        };
        if let Some(last) = per_track.last() {
            out.predictions.push(SpeedRow {
                id: id.to_string(),
                speed_kmh: f64::from(last.speed_kmh),
            });
        }
        out.estimates.extend(per_track);
    }
    Ok(out)
}

pub fn write_overlay<W: Write>(mut w: W, records: &[OverlayRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
