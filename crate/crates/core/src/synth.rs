//! Synthetic traffic with known speeds.
//!
//! Vehicles move in straight lines at constant speed on the road plane. Each
//! frame their road position is projected into the image through the inverse
//! calibration homography, and a fixed-size box is placed with its
//! bottom-center on that pixel. Output uses the detection wire format and the
//! `id,speed_kmh` truth format, so a generated scenario can be fed straight
//! through the estimation pipeline and scored.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, PixelPoint, WorldPoint};
use crate::ingest::{write_detection, BBox, Calibration, CalibrationConfig, CalibrationError, Detection};
use crate::metrics::{write_speed_rows, SpeedRow};

pub const SYNTH_CLASS: &str = "car";
pub const SYNTH_CONFIDENCE: f64 = 0.9;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("scenario schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("calibration homography is singular")]
    SingularMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthWarning {
    /// The projected box does not fit in the image; the detection was skipped.
    ProjectsOutsideImage { vehicle: usize, frame: u64 },
    /// The road position maps to the horizon line; the detection was skipped.
    HorizonSingularity { vehicle: usize, frame: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub entry_world: [f64; 2],
    pub heading: [f64; 2],
    pub speed_kmh: f64,
    #[serde(default)]
    pub enter_s: f64,
    pub box_w_px: f64,
    pub box_h_px: f64,
}

/// On-disk scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub calibration: CalibrationConfig,
    pub vehicles: Vec<VehicleSpec>,
    pub duration_s: f64,
    #[serde(default)]
    pub noise_px: f64,
    #[serde(default)]
    pub seed: u64,
    /// Image width and height in pixels; boxes falling outside are skipped.
    #[serde(default)]
    pub image_size: Option<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub calibration: Calibration,
    pub vehicles: Vec<VehicleSpec>,
    pub duration_s: f64,
    pub noise_px: f64,
    pub seed: u64,
    pub image_size: Option<[f64; 2]>,
}

impl ScenarioSpec {
    pub fn from_document(doc: &ScenarioDocument) -> Result<Self, SynthError> {
        let calibration = Calibration::from_config(&doc.calibration)?;
        Self::new(calibration, doc.vehicles.clone(), doc.duration_s, doc.noise_px, doc.seed)
            .map(|s| Self { image_size: doc.image_size, ..s })
    }

    pub fn new(
        calibration: Calibration,
        vehicles: Vec<VehicleSpec>,
        duration_s: f64,
        noise_px: f64,
        seed: u64,
    ) -> Result<Self, SynthError> {
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return Err(SynthError::Schema(format!("duration_s must be positive, got {duration_s}")));
        }
        if !(noise_px.is_finite() && noise_px >= 0.0) {
            return Err(SynthError::Schema(format!("noise_px must be >= 0, got {noise_px}")));
        }
        for (i, v) in vehicles.iter().enumerate() {
            let norm = v.heading[0].hypot(v.heading[1]);
            if (norm - 1.0).abs() > 1e-6 {
                return Err(SynthError::Schema(format!("vehicle {i}: heading must be a unit vector (norm {norm})")));
            }
            if !(v.speed_kmh.is_finite() && v.speed_kmh >= 0.0) {
                return Err(SynthError::Schema(format!("vehicle {i}: speed_kmh must be >= 0")));
            }
            if !(v.enter_s.is_finite() && v.enter_s >= 0.0) {
                return Err(SynthError::Schema(format!("vehicle {i}: enter_s must be >= 0")));
            }
            if !(v.box_w_px > 0.0 && v.box_h_px > 0.0) {
                return Err(SynthError::Schema(format!("vehicle {i}: box extents must be positive")));
            }
        }
        Ok(Self {
            calibration,
            vehicles,
            duration_s,
            noise_px,
            seed,
            image_size: None,
        })
    }

    pub fn to_document(&self) -> ScenarioDocument {
        ScenarioDocument {
            calibration: self.calibration.to_config(),
            vehicles: self.vehicles.clone(),
            duration_s: self.duration_s,
            noise_px: self.noise_px,
            seed: self.seed,
            image_size: self.image_size,
        }
    }
}

pub fn parse_scenario(doc: &str) -> Result<ScenarioSpec, SynthError> {
    let doc: ScenarioDocument = serde_json::from_str(doc).map_err(|e| SynthError::Schema(e.to_string()))?;
    ScenarioSpec::from_document(&doc)
}

/// Adds independent zero-mean Gaussian offsets to both coordinates. Two
/// normal draws are consumed whatever `std` is, so scenarios that differ
/// only in noise level see the same underlying draws.
pub fn perturb<R: rand::Rng>(point: PixelPoint, std: f64, rng: &mut R) -> PixelPoint {
    let dx: f64 = StandardNormal.sample(rng);
    let dy: f64 = StandardNormal.sample(rng);
    if std == 0.0 {
        return point;
    }
    PixelPoint::new(point.x + std * dx, point.y + std * dy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    /// Detection stream in the wire format.
    pub detections: Vec<u8>,
    /// Truth table (`id,speed_kmh`) for every vehicle that produced at least
    /// one detection, ordered by first detection frame, then vehicle index.
    pub truth: String,
    pub warnings: Vec<SynthWarning>,
    pub frame_count: u64,
}

#[derive(Default, Clone, Copy)]
struct VehicleState {
    entered: bool,
    exited: bool,
    first_frame: Option<u64>,
}

pub fn generate(spec: &ScenarioSpec) -> Result<SynthOutput, SynthError> {
    let inv = spec.calibration.homography().invert().map_err(|_| SynthError::SingularMatrix)?;
    let fps = spec.calibration.fps;
    let frame_count = (spec.duration_s * fps).round() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut states = vec![VehicleState::default(); spec.vehicles.len()];
    let mut detections = Vec::new();
    let mut warnings = Vec::new();

    for frame in 0..frame_count {
        let t = frame as f64 / fps;
        for (vi, v) in spec.vehicles.iter().enumerate() {
            let state = &mut states[vi];
            if state.exited || t < v.enter_s {
                continue;
            }
            let dist = v.speed_kmh / 3.6 * (t - v.enter_s);
            let world = WorldPoint::new(v.entry_world[0] + v.heading[0] * dist, v.entry_world[1] + v.heading[1] * dist);
            let pixel = match inv.project(world) {
                Ok(p) => p,
                Err(GeometryError::HorizonSingularity { .. }) => {
                    warnings.push(SynthWarning::HorizonSingularity { vehicle: vi, frame });
                    continue;
                }
                Err(_) => return Err(SynthError::SingularMatrix),
            };
            if !spec.calibration.roi.contains(pixel) {
                if state.entered {
                    state.exited = true;
                }
                continue;
            }
            state.entered = true;
            let anchor = perturb(pixel, spec.noise_px, &mut rng);
            let half_w = v.box_w_px / 2.0;
            let bbox = BBox::new(anchor.x - half_w, anchor.y - v.box_h_px, anchor.x + half_w, anchor.y)
                .expect("box extents validated positive");
            if let Some([w, h]) = spec.image_size {
                if bbox.x_min < 0.0 || bbox.y_min < 0.0 || bbox.x_max > w || bbox.y_max > h {
                    warnings.push(SynthWarning::ProjectsOutsideImage { vehicle: vi, frame });
                    continue;
                }
            }
            state.first_frame.get_or_insert(frame);
            let det = Detection {
                frame,
                bbox,
                class_label: SYNTH_CLASS.to_string(),
                confidence: SYNTH_CONFIDENCE,
            };
            write_detection(&mut detections, &det).expect("writing to memory");
        }
    }

    let mut emitted: Vec<(u64, usize)> = states
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.first_frame.map(|f| (f, i)))
        .collect();
    emitted.sort();
    let rows: Vec<SpeedRow> = emitted
        .iter()
        .map(|&(_, i)| SpeedRow {
            id: (i + 1).to_string(),
            speed_kmh: spec.vehicles[i].speed_kmh,
        })
        .collect();

    Ok(SynthOutput {
        detections,
        truth: write_speed_rows(&rows),
        warnings,
        frame_count,
    })
}
