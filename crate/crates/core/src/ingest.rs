//! Detection wire format and calibration config.
//!
//! Detections arrive as line-delimited JSON, one record per line:
//!
//! ```text
//! {"frame":0,"bbox":[412.0,300.5,470.0,344.0],"class":"car","conf":0.87}
//! ```
//!
//! Records below the calibration's confidence threshold are dropped here, so
//! later stages only ever see accepted detections. Frame indices are the sole
//! clock; any other keys on a record are ignored.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{estimate_homography, GeometryError, Homography, PixelPoint, Polygon, WorldPoint};

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.3;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: frame index decreased from {previous} to {found}")]
    NonMonotonicFrame { line: usize, previous: u64, found: u64 },
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("calibration schema error: {0}")]
    SchemaError(String),
    #[error("unsupported target unit {0:?} (expected \"meters\")")]
    UnitError(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("cannot read calibration: {0}")]
    Io(#[from] std::io::Error),
}

/// Axis-aligned bounding box in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, String> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<(), String> {
        let v = [self.x_min, self.y_min, self.x_max, self.y_max];
        if v.iter().any(|c| !c.is_finite()) {
            return Err("bbox has non-finite coordinate".into());
        }
        if self.x_min >= self.x_max {
            return Err(format!("x_min {} >= x_max {}", self.x_min, self.x_max));
        }
        if self.y_min >= self.y_max {
            return Err(format!("y_min {} >= y_max {}", self.y_min, self.y_max));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn contains(&self, p: PixelPoint) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: u64,
    pub bbox: BBox,
    pub class_label: String,
    pub confidence: f64,
}

/// All accepted detections sharing one frame index.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBatch {
    pub frame: u64,
    pub detections: Vec<Detection>,
}

/// Bottom-center of the box: the point where the vehicle meets the road.
pub fn anchor_point(d: &Detection) -> PixelPoint {
    PixelPoint::new((d.bbox.x_min + d.bbox.x_max) / 2.0, d.bbox.y_max)
}

#[derive(Debug, Serialize, Deserialize)]
struct WireRecord {
    frame: u64,
    bbox: [f64; 4],
    class: String,
    conf: f64,
}

fn decode_line(line: &str, line_no: usize) -> Result<Detection, IngestError> {
    let malformed = |reason: String| IngestError::MalformedRecord {
        line: line_no,
        reason,
    };
    let rec: WireRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    let [x_min, y_min, x_max, y_max] = rec.bbox;
    let bbox = BBox::new(x_min, y_min, x_max, y_max).map_err(malformed)?;
    if !(0.0..=1.0).contains(&rec.conf) {
        return Err(malformed(format!("conf {} outside [0, 1]", rec.conf)));
    }
    Ok(Detection {
        frame: rec.frame,
        bbox,
        class_label: rec.class,
        confidence: rec.conf,
    })
}

/// Streaming reader that yields one [`FrameBatch`] per frame that has at least
/// one accepted detection.
pub struct DetectionStream<R> {
    reader: R,
    threshold: f64,
    line_no: usize,
    last_frame: Option<u64>,
    pending: Option<FrameBatch>,
    done: bool,
    buf: String,
}

impl<R: BufRead> DetectionStream<R> {
    pub fn new(reader: R, threshold: f64) -> Self {
        Self {
            reader,
            threshold,
            line_no: 0,
            last_frame: None,
            pending: None,
            done: false,
            buf: String::new(),
        }
    }

    /// Next accepted detection, or `None` at end of input.
    fn next_detection(&mut self) -> Result<Option<Detection>, IngestError> {
        loop {
            self.buf.clear();
            if self.reader.read_line(&mut self.buf)? == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            let line = self.buf.trim();
            if line.is_empty() {
                continue;
            }
            let det = decode_line(line, self.line_no)?;
            if let Some(prev) = self.last_frame {
                if det.frame < prev {
                    return Err(IngestError::NonMonotonicFrame {
                        line: self.line_no,
                        previous: prev,
                        found: det.frame,
                    });
                }
            }
            self.last_frame = Some(det.frame);
            if det.confidence >= self.threshold {
                return Ok(Some(det));
            }
        }
    }
}

impl<R: BufRead> Iterator for DetectionStream<R> {
    type Item = Result<FrameBatch, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            match self.next_detection() {
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
                Ok(None) => {
                    self.done = true;
                    return self.pending.take().map(Ok);
                }
                Ok(Some(det)) => match &mut self.pending {
                    Some(batch) if batch.frame == det.frame => batch.detections.push(det),
                    _ => {
                        let fresh = FrameBatch {
                            frame: det.frame,
                            detections: vec![det],
                        };
                        if let Some(done) = self.pending.replace(fresh) {
                            return Some(Ok(done));
                        }
                    }
                },
            }
        }
    }
}

/// Reads the whole stream into frame batches.
pub fn parse_detection_stream<R: BufRead>(
    reader: R,
    threshold: f64,
) -> Result<Vec<FrameBatch>, IngestError> {
    DetectionStream::new(reader, threshold).collect()
}

pub fn write_detection<W: Write>(mut w: W, d: &Detection) -> std::io::Result<()> {
    let rec = WireRecord {
        frame: d.frame,
        bbox: d.bbox.to_array(),
        class: d.class_label.clone(),
        conf: d.confidence,
    };
    serde_json::to_writer(&mut w, &rec)?;
    w.write_all(b"\n")
}

/// Serializes batches in the wire format, one line per detection.
pub fn write_detection_stream<W: Write>(mut w: W, batches: &[FrameBatch]) -> std::io::Result<()> {
    for d in batches.iter().flat_map(|b| &b.detections) {
        write_detection(&mut w, d)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetUnit {
    Meters,
}

/// On-disk calibration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub source_points: [[f64; 2]; 4],
    pub target_points: [[f64; 2]; 4],
    pub target_unit: String,
    pub roi: Vec<[f64; 2]>,
    pub fps: f64,
    #[serde(default = "default_threshold")]
    pub confidence_threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_CONFIDENCE_THRESHOLD
}

/// Validated calibration with its homography precomputed.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub source_points: [PixelPoint; 4],
    pub target_points: [WorldPoint; 4],
    pub target_unit: TargetUnit,
    pub roi: Polygon,
    pub fps: f64,
    pub confidence_threshold: f64,
    homography: Homography,
}

impl Calibration {
    pub fn from_config(cfg: &CalibrationConfig) -> Result<Self, CalibrationError> {
        let target_unit = match cfg.target_unit.as_str() {
            "meters" => TargetUnit::Meters,
            other => return Err(CalibrationError::UnitError(other.to_string())),
        };
        if !(cfg.fps.is_finite() && cfg.fps > 0.0) {
            return Err(CalibrationError::SchemaError(format!(
                "fps must be positive, got {}",
                cfg.fps
            )));
        }
        if !(0.0..=1.0).contains(&cfg.confidence_threshold) {
            return Err(CalibrationError::SchemaError(format!(
                "confidence_threshold {} outside [0, 1]",
                cfg.confidence_threshold
            )));
        }
        let roi = Polygon::new(cfg.roi.iter().map(|&[x, y]| PixelPoint::new(x, y)).collect())
            .map_err(|e| CalibrationError::SchemaError(format!("roi: {e}")))?;
        let source_points = cfg.source_points.map(|[x, y]| PixelPoint::new(x, y));
        let target_points = cfg.target_points.map(|[x, y]| WorldPoint::new(x, y));
        let pairs: Vec<_> = source_points.into_iter().zip(target_points).collect();
        let homography = estimate_homography(&pairs)?;
        Ok(Self {
            source_points,
            target_points,
            target_unit,
            roi,
            fps: cfg.fps,
            confidence_threshold: cfg.confidence_threshold,
            homography,
        })
    }

    pub fn homography(&self) -> &Homography {
        &self.homography
    }

    pub fn to_config(&self) -> CalibrationConfig {
        CalibrationConfig {
            source_points: self.source_points.map(|p| [p.x, p.y]),
            target_points: self.target_points.map(|p| [p.x, p.y]),
            target_unit: "meters".into(),
            roi: self.roi.vertices().iter().map(|p| [p.x, p.y]).collect(),
            fps: self.fps,
            confidence_threshold: self.confidence_threshold,
        }
    }
}

/// Parses and validates a JSON calibration document.
pub fn load_calibration(doc: &str) -> Result<Calibration, CalibrationError> {
    let cfg: CalibrationConfig =
        serde_json::from_str(doc).map_err(|e| CalibrationError::SchemaError(e.to_string()))?;
    Calibration::from_config(&cfg)
}

pub fn load_calibration_file(path: &Path) -> Result<Calibration, CalibrationError> {
    load_calibration(&std::fs::read_to_string(path)?)
}
