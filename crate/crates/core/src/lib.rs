//! Vehicle speed estimation from per-frame bounding-box detections.
//!
//! Detections from any detector are read from a line-delimited stream,
//! associated into tracks, mapped from image pixels to road-plane meters
//! through a four-point homography calibration, and turned into per-vehicle
//! speeds. Predicted speeds can be scored against ground truth, and a
//! synthetic scenario generator provides traffic with known speeds for
//! end-to-end checks.

pub mod geometry;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod speed;
pub mod synth;
pub mod tracker;

pub use geometry::{estimate_homography, GeometryError, Homography, PixelPoint, Polygon, WorldPoint};
pub use ingest::{
    anchor_point, load_calibration, parse_detection_stream, BBox, Calibration, CalibrationConfig,
    CalibrationError, Detection, FrameBatch, IngestError,
};
pub use metrics::{EvalPair, EvalReport, MetricsError};
pub use pipeline::{OverlayRecord, PipelineConfig, PipelineError, PipelineOutput};
pub use speed::{SpeedConfig, SpeedEstimate, SpeedMode, TrajectoryPoint};
pub use synth::{ScenarioSpec, SynthError, VehicleSpec};
pub use tracker::{TrackId, Tracker, TrackerConfig};
