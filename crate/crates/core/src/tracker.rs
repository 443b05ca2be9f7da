//! Greedy IoU association across frames.
//!
//! Each frame, every (track, detection) pair whose IoU reaches the threshold
//! is a candidate. Candidates are taken highest IoU first; ties go to the
//! lower track id, then the lower detection index. There is no motion model:
//! a track is compared using the last box it was matched to.

use std::fmt;

use thiserror::Error;

use crate::ingest::{BBox, Detection, FrameBatch};

#[derive(Debug, Error, PartialEq)]
pub enum TrackerError {
    #[error("frame {found} arrived after frame {previous}")]
    OutOfOrderFrame { previous: u64, found: u64 },
    #[error("invalid tracker config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrackId(pub u64);

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub iou_threshold: f64,
    /// Frames a track may go unmatched before it is retired.
    pub max_age: u64,
    /// Matches required before a track appears in the output.
    pub min_hits: u32,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.3,
            max_age: 15,
            min_hits: 3,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(TrackerError::InvalidConfig(format!(
                "iou_threshold {} outside (0, 1)",
                self.iou_threshold
            )));
        }
        if self.max_age == 0 || self.min_hits == 0 {
            return Err(TrackerError::InvalidConfig(
                "max_age and min_hits must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub id: TrackId,
    pub last_box: BBox,
    pub last_frame: u64,
    pub hits: u32,
    pub misses: u64,
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<TrackState>,
    next_id: u64,
    last_frame: Option<u64>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self, TrackerError> {
        config.validate()?;
        Ok(Self {
            config,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Live tracks ordered by id.
    pub fn tracks(&self) -> &[TrackState] {
        &self.tracks
    }

    /// Associates one frame of detections. Returns the confirmed
    /// (hits >= min_hits) tracks matched in this frame, ordered by id.
    pub fn step(&mut self, batch: &FrameBatch) -> Result<Vec<(TrackId, Detection)>, TrackerError> {
        let frame = batch.frame;
        if let Some(prev) = self.last_frame {
            if frame <= prev {
                return Err(TrackerError::OutOfOrderFrame {
                    previous: prev,
                    found: frame,
                });
            }
        }
        self.last_frame = Some(frame);

        // frames absent from the stream count as misses too
        let max_age = self.config.max_age;
        self.tracks.retain(|t| frame - t.last_frame - 1 <= max_age);

        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, t) in self.tracks.iter().enumerate() {
            for (di, d) in batch.detections.iter().enumerate() {
                let score = iou(&t.last_box, &d.bbox);
                if score >= self.config.iou_threshold {
                    candidates.push((score, ti, di));
                }
            }
        }
        // tracks are kept in id order, so the track index orders like the id
        candidates.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });

        let mut track_taken = vec![false; self.tracks.len()];
        let mut det_taken = vec![false; batch.detections.len()];
        let mut out = Vec::new();
        for (_, ti, di) in candidates {
            if track_taken[ti] || det_taken[di] {
                continue;
            }
            track_taken[ti] = true;
            det_taken[di] = true;
            let t = &mut self.tracks[ti];
            t.last_box = batch.detections[di].bbox;
            t.last_frame = frame;
            t.hits += 1;
            t.misses = 0;
            if t.hits >= self.config.min_hits {
                out.push((t.id, batch.detections[di].clone()));
            }
        }
        for (t, taken) in self.tracks.iter_mut().zip(&track_taken) {
            if !taken {
                t.misses = frame - t.last_frame;
            }
        }
        self.tracks.retain(|t| t.misses <= max_age);
        for (di, d) in batch.detections.iter().enumerate() {
            if det_taken[di] {
                continue;
            }
            let id = TrackId(self.next_id);
            self.next_id += 1;
            self.tracks.push(TrackState {
                id,
                last_box: d.bbox,
                last_frame: frame,
                hits: 1,
                misses: 0,
            });
            if self.config.min_hits <= 1 {
                out.push((id, d.clone()));
            }
        }
        out.sort_by_key(|(id, _)| *id);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bbox(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det(frame: u64, b: BBox) -> Detection {
        Detection {
            frame,
            bbox: b,
            class_label: "car".into(),
            confidence: 0.9,
        }
    }

    #[test]
    fn iou_examples() {
        let a = bbox(0., 0., 2., 2.);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bbox(5., 5., 6., 6.)), 0.0);
        assert_eq!(iou(&a, &bbox(2., 0., 4., 2.)), 0.0);
        // intersection 1, union 4 + 4 - 1
        assert!((iou(&a, &bbox(1., 1., 3., 3.)) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn out_of_order_frame() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        let b = FrameBatch { frame: 5, detections: vec![det(5, bbox(0., 0., 1., 1.))] };
        t.step(&b).unwrap();
        let err = t.step(&FrameBatch { frame: 5, detections: vec![] }).unwrap_err();
        assert_eq!(err, TrackerError::OutOfOrderFrame { previous: 5, found: 5 });
    }

    #[test]
    fn rejects_bad_config() {
        let bad = TrackerConfig { iou_threshold: 1.0, ..TrackerConfig::default() };
        assert!(Tracker::new(bad).is_err());
        let bad = TrackerConfig { min_hits: 0, ..TrackerConfig::default() };
        assert!(Tracker::new(bad).is_err());
    }

    #[test]
    fn min_hits_gates_output() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        let mut counts = Vec::new();
        for f in 0..4 {
            let b = FrameBatch { frame: f, detections: vec![det(f, bbox(0., 0., 10., 10.))] };
            counts.push(t.step(&b).unwrap().len());
        }
        assert_eq!(counts, vec![0, 0, 1, 1]);
    }

    #[test]
    fn greedy_prefers_highest_iou() {
        let cfg = TrackerConfig { min_hits: 1, ..TrackerConfig::default() };
        let mut t = Tracker::new(cfg).unwrap();
        t.step(&FrameBatch {
            frame: 0,
            detections: vec![det(0, bbox(0., 0., 10., 10.)), det(0, bbox(6., 0., 16., 10.))],
        })
        .unwrap();
        // Detection order is swapped; each box still follows its best overlap.
        let out = t
            .step(&FrameBatch {
                frame: 1,
                detections: vec![det(1, bbox(7., 0., 17., 10.)), det(1, bbox(1., 0., 11., 10.))],
            })
            .unwrap();
        assert_eq!(out[0].0, TrackId(1));
        assert_eq!(out[0].1.bbox.x_min, 1.0);
        assert_eq!(out[1].0, TrackId(2));
        assert_eq!(out[1].1.bbox.x_min, 7.0);
    }

    #[test]
    fn misses_never_exceed_max_age() {
        let cfg = TrackerConfig { max_age: 3, min_hits: 1, ..TrackerConfig::default() };
        let mut t = Tracker::new(cfg).unwrap();
        t.step(&FrameBatch { frame: 0, detections: vec![det(0, bbox(0., 0., 5., 5.))] }).unwrap();
        for f in 1..10 {
            t.step(&FrameBatch { frame: f, detections: vec![det(f, bbox(100., 0., 105., 5.))] })
                .unwrap();
            assert!(t.tracks().iter().all(|s| s.misses <= 3 && s.hits >= 1));
        }
        assert_eq!(t.tracks().len(), 1);
    }
}
