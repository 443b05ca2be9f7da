//! Road-plane trajectories and speed estimates.
//!
//! Speed is straight-line displacement between the first and last samples of
//! a span, divided by the elapsed time `frames / fps`, converted m/s -> km/h
//! and rounded half away from zero.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::WorldPoint;
use crate::tracker::TrackId;

pub const MPS_TO_KMH: f64 = 3.6;

#[derive(Debug, Error, PartialEq)]
pub enum SpeedError {
    #[error("track {track}: frame {found} does not follow frame {previous}")]
    NonMonotonicFrame { track: TrackId, previous: u64, found: u64 },
    #[error("invalid speed config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub frame: u64,
    pub world: WorldPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedEstimate {
    pub track: TrackId,
    pub speed_kmh: u32,
    pub first_frame: u64,
    pub last_frame: u64,
    pub distance_m: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedMode {
    Transit,
    Window,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedConfig {
    pub mode: SpeedMode,
    pub window_s: f64,
    pub min_samples: usize,
}

impl Default for SpeedConfig {
    fn default() -> Self {
        Self {
            mode: SpeedMode::Transit,
            window_s: 0.5,
            min_samples: 2,
        }
    }
}

impl SpeedConfig {
    pub fn validate(&self) -> Result<(), SpeedError> {
        if !(self.window_s.is_finite() && self.window_s > 0.0) {
            return Err(SpeedError::InvalidConfig(format!(
                "window_s must be positive, got {}",
                self.window_s
            )));
        }
        if self.min_samples < 2 {
            return Err(SpeedError::InvalidConfig(format!(
                "min_samples must be at least 2, got {}",
                self.min_samples
            )));
        }
        Ok(())
    }
}

/// Per-track trajectories, iterated in track-id order.
#[derive(Debug, Clone, Default)]
pub struct History {
    tracks: BTreeMap<TrackId, Vec<TrajectoryPoint>>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, track: TrackId, point: TrajectoryPoint) -> Result<(), SpeedError> {
        let traj = self.tracks.entry(track).or_default();
        if let Some(last) = traj.last() {
            if point.frame <= last.frame {
                return Err(SpeedError::NonMonotonicFrame {
                    track,
                    previous: last.frame,
                    found: point.frame,
                });
            }
        }
        traj.push(point);
        Ok(())
    }

    pub fn trajectory(&self, track: TrackId) -> Option<&[TrajectoryPoint]> {
        self.tracks.get(&track).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (TrackId, &[TrajectoryPoint])> {
        self.tracks.iter().map(|(id, t)| (*id, t.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }
}

pub fn elapsed_time(n_frames: u64, fps: f64) -> f64 {
    n_frames as f64 / fps
}

pub fn to_kmh(distance_m: f64, elapsed_s: f64) -> u32 {
    if elapsed_s <= 0.0 {
        return 0;
    }
    (distance_m / elapsed_s * MPS_TO_KMH).round() as u32
}

fn span_estimate(track: TrackId, span: &[TrajectoryPoint], fps: f64, min_samples: usize) -> SpeedEstimate {
    let (first, last) = match (span.first(), span.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => {
            return SpeedEstimate {
                track,
                speed_kmh: 0,
                first_frame: 0,
                last_frame: 0,
                distance_m: 0.0,
                elapsed_s: 0.0,
            }
        }
    };
    let distance_m = first.world.distance(&last.world);
    let elapsed_s = elapsed_time(last.frame - first.frame, fps);
    let speed_kmh = if span.len() < min_samples {
        0
    } else {
        to_kmh(distance_m, elapsed_s)
    };
    SpeedEstimate {
        track,
        speed_kmh,
        first_frame: first.frame,
        last_frame: last.frame,
        distance_m,
        elapsed_s,
    }
}

/// Endpoint-displacement speed over the whole trajectory. Trajectories with
/// fewer than `min_samples` points, or spanning zero time, report 0 km/h.
pub fn transit_speed(
    track: TrackId,
    trajectory: &[TrajectoryPoint],
    fps: f64,
    min_samples: usize,
) -> SpeedEstimate {
    span_estimate(track, trajectory, fps, min_samples)
}

/// Rolling estimates over the trailing `window_s` seconds. One estimate is
/// produced per sample once a full window of history exists; a trajectory
/// shorter than the window yields a single estimate over all of it.
pub fn window_speed(
    track: TrackId,
    trajectory: &[TrajectoryPoint],
    fps: f64,
    window_s: f64,
    min_samples: usize,
) -> Vec<SpeedEstimate> {
    let Some(first) = trajectory.first() else {
        return Vec::new();
    };
    // absorbs rounding in window_s * fps
    let tol = 1e-9;
    let mut out = Vec::new();
    let mut start = 0;
    for (end, p) in trajectory.iter().enumerate() {
        if elapsed_time(p.frame - first.frame, fps) + tol < window_s {
            continue;
        }
        while elapsed_time(p.frame - trajectory[start].frame, fps) > window_s + tol {
            start += 1;
        }
        out.push(span_estimate(track, &trajectory[start..=end], fps, min_samples));
    }
    if out.is_empty() {
        out.push(span_estimate(track, trajectory, fps, min_samples));
    }
    out
}

/// Writes estimates as CSV with a header row.
pub fn write_speed_table<W: Write>(w: W, estimates: &[SpeedEstimate]) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "track_id",
        "speed_kmh",
        "first_frame",
        "last_frame",
        "distance_m",
        "elapsed_s",
    ])?;
    for e in estimates {
        wtr.write_record([
            e.track.to_string(),
            e.speed_kmh.to_string(),
            e.first_frame.to_string(),
            e.last_frame.to_string(),
            format!("{:.4}", e.distance_m),
            format!("{:.4}", e.elapsed_s),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const T: TrackId = TrackId(1);

    fn pt(frame: u64, x: f64, y: f64) -> TrajectoryPoint {
        TrajectoryPoint { frame, world: WorldPoint::new(x, y) }
    }

    /// Constant-velocity trajectory along y, speed given in km/h.
    fn straight(kmh: f64, fps: f64, frames: u64) -> Vec<TrajectoryPoint> {
        let v = kmh / 3.6;
        (0..frames).map(|f| pt(f, 1.5, v * f as f64 / fps)).collect()
    }

    #[test]
    fn record_examples() {
        let mut h = History::new();
        h.record(T, pt(0, 0., 0.)).unwrap();
        assert_eq!(h.trajectory(T).unwrap().len(), 1);
        h.record(T, pt(7, 0., 0.)).unwrap();
        assert_eq!(
            h.record(T, pt(5, 0., 0.)),
            Err(SpeedError::NonMonotonicFrame { track: T, previous: 7, found: 5 })
        );
        let mut h = History::new();
        for f in 0..30 {
            h.record(T, pt(f, f as f64, 0.)).unwrap();
        }
        let traj = h.trajectory(T).unwrap();
        assert_eq!(traj.len(), 30);
        assert!(traj.windows(2).all(|w| w[0].frame < w[1].frame));
    }

    #[test]
    fn elapsed_time_examples() {
        assert_eq!(elapsed_time(25, 25.0), 1.0);
        assert_eq!(elapsed_time(0, 30.0), 0.0);
        assert_eq!(elapsed_time(30, 24.0), 1.25);
    }

    #[test]
    fn transit_examples() {
        let e = transit_speed(T, &[pt(0, 0., 0.), pt(25, 0., 10.)], 25.0, 2);
        assert_eq!(e.speed_kmh, 36);
        assert_eq!((e.first_frame, e.last_frame), (0, 25));
        assert_eq!(e.distance_m, 10.0);
        assert_eq!(e.elapsed_s, 1.0);

        let e = transit_speed(T, &[pt(3, 5., 5.)], 25.0, 2);
        assert_eq!(e.speed_kmh, 0);
        assert_eq!((e.first_frame, e.last_frame), (3, 3));

        let e = transit_speed(T, &straight(50.0, 25.0, 40), 25.0, 2);
        assert_eq!(e.speed_kmh, 50);
    }

    #[test]
    fn under_sampled_reports_zero() {
        let e = transit_speed(T, &[pt(0, 0., 0.), pt(10, 0., 10.)], 25.0, 3);
        assert_eq!(e.speed_kmh, 0);
        assert!(e.distance_m > 0.0);
    }

    #[test]
    fn rounds_half_away_from_zero() {
        // 12.5 km/h = 125/36 m/s over one second
        assert_eq!(to_kmh(12.5 / 3.6, 1.0), 13);
        assert_eq!(to_kmh(12.49 / 3.6, 1.0), 12);
    }

    #[test]
    fn window_on_constant_velocity_matches_transit() {
        let traj = straight(72.0, 25.0, 60);
        let transit = transit_speed(T, &traj, 25.0, 2).speed_kmh;
        let windows = window_speed(T, &traj, 25.0, 0.5, 2);
        // half a second is 12.5 frames: frames 13..=59 have a full window,
        // each spanning the 12 frame intervals that fit inside it
        assert_eq!(windows.len(), 47);
        assert!(windows.iter().all(|e| e.speed_kmh == transit));
        assert!(windows.iter().all(|e| e.last_frame - e.first_frame == 12));
    }

    #[test]
    fn short_trajectory_gives_single_window() {
        let traj = straight(40.0, 25.0, 5);
        let w = window_speed(T, &traj, 25.0, 1.0, 2);
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].first_frame, w[0].last_frame), (0, 4));
        assert_eq!(w[0].speed_kmh, 40);
    }

    #[test]
    fn window_tracks_speed_change() {
        // 30 km/h for 2 s, then 60 km/h for 2 s, at 25 fps
        let fps = 25.0;
        let mut traj = Vec::new();
        let mut y = 0.0;
        for f in 0..100u64 {
            traj.push(pt(f, 0.0, y));
            let kmh = if f < 50 { 30.0 } else { 60.0 };
            y += kmh / 3.6 / fps;
        }
        let w = window_speed(T, &traj, fps, 0.5, 2);
        // segment-wise oracle: windows wholly inside a segment see that speed
        for e in &w {
            if e.last_frame <= 50 {
                assert_eq!(e.speed_kmh, 30, "{e:?}");
            } else if e.first_frame >= 50 {
                assert_eq!(e.speed_kmh, 60, "{e:?}");
            } else {
                assert!((30..=60).contains(&e.speed_kmh));
            }
        }
        let speeds: Vec<u32> = w.iter().map(|e| e.speed_kmh).collect();
        assert!(speeds.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn speed_table_format() {
        let mut buf = Vec::new();
        let e = transit_speed(T, &[pt(0, 0., 0.), pt(25, 0., 10.)], 25.0, 2);
        write_speed_table(&mut buf, &[e]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "track_id,speed_kmh,first_frame,last_frame,distance_m,elapsed_s\n1,36,0,25,10.0000,1.0000\n"
        );
    }

    proptest! {
        #[test]
        fn translation_invariance(
            pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..20),
            dx in -1e3f64..1e3, dy in -1e3f64..1e3,
        ) {
            let traj: Vec<_> = pts.iter().enumerate().map(|(i, &(x, y))| pt(i as u64 * 3, x, y)).collect();
            let moved: Vec<_> = traj.iter().map(|p| pt(p.frame, p.world.x + dx, p.world.y + dy)).collect();
            let a = transit_speed(T, &traj, 25.0, 2);
            let b = transit_speed(T, &moved, 25.0, 2);
            prop_assert!((a.distance_m - b.distance_m).abs() < 1e-9);
            prop_assert!(a.speed_kmh.abs_diff(b.speed_kmh) <= 1);
        }

        #[test]
        fn stationary_is_zero(x in -100.0f64..100.0, y in -100.0f64..100.0, n in 1u64..200) {
            let traj: Vec<_> = (0..n).map(|f| pt(f, x, y)).collect();
            prop_assert_eq!(transit_speed(T, &traj, 30.0, 2).speed_kmh, 0);
            prop_assert!(window_speed(T, &traj, 30.0, 0.5, 2).iter().all(|e| e.speed_kmh == 0));
        }

        #[test]
        fn constant_velocity_matches_commanded(kmh in 0.0f64..150.0, frames in 2u64..200, fps in 10.0f64..60.0) {
            let traj = straight(kmh, fps, frames);
            let e = transit_speed(T, &traj, fps, 2);
            prop_assert!((e.speed_kmh as f64 - kmh).abs() <= 1.0);
        }
    }
}
