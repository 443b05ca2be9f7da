//! `roadspeed` command-line front end.
//!
//! Exit codes: 0 success, 2 input/schema error, 3 geometry error,
//! 4 empty result (outputs are still written).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use roadspeed_core::geometry::GeometryError;
use roadspeed_core::ingest::{load_calibration_file, Calibration, CalibrationError};
use roadspeed_core::metrics::{self, MetricsError, MAE_VS_RMSE_SVG, PRED_VS_ACTUAL_SVG};
use roadspeed_core::pipeline::{self, PipelineConfig, PipelineError};
use roadspeed_core::speed::{write_speed_table, SpeedConfig, SpeedMode};
use roadspeed_core::synth::{self, ScenarioDocument, ScenarioSpec, SynthError, SynthWarning};
use roadspeed_core::tracker::TrackerConfig;

const EXIT_INPUT: u8 = 2;
const EXIT_GEOMETRY: u8 = 3;
const EXIT_EMPTY: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "roadspeed", version, about = "Vehicle speed estimation from bounding-box detections")]
struct Cli {
    /// Calibration document (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Transit,
    Window,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the image-to-road homography and report how well it fits.
    Calibrate,
    /// Track detections and compute per-vehicle speeds.
    Estimate {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Transit)]
        mode: Mode,
        #[arg(long, default_value_t = 0.5)]
        window_s: f64,
        #[arg(long, default_value_t = 2)]
        min_samples: usize,
        #[arg(long, default_value_t = 0.3)]
        iou_threshold: f64,
        #[arg(long, default_value_t = 15)]
        max_age: u64,
        #[arg(long, default_value_t = 3)]
        min_hits: u32,
    },
    /// Score predicted speeds against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Generate a synthetic detection stream with known speeds.
    Synth {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// An error carrying the process exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl Failure {
    fn input(err: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_INPUT, err: err.into() }
    }
}

impl From<CalibrationError> for Failure {
    fn from(e: CalibrationError) -> Self {
        let code = match &e {
            CalibrationError::Geometry(GeometryError::NonFinite) => EXIT_INPUT,
            CalibrationError::Geometry(_) => EXIT_GEOMETRY,
            _ => EXIT_INPUT,
        };
        Self { code, err: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Self::input(err)
    }
}

#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    inputs: BTreeMap<&'static str, String>,
    config: Option<String>,
    out: String,
    flags: BTreeMap<&'static str, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl RunManifest {
    fn new(command: &'static str, config: Option<&Path>, out: &Path) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            inputs: BTreeMap::new(),
            config: config.map(|p| p.display().to_string()),
            out: out.display().to_string(),
            flags: BTreeMap::new(),
            seed: None,
        }
    }

    fn write(&self, out: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        write_file(&out.join("manifest.json"), text.as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    p.as_deref()
        .ok_or_else(|| Failure::input(anyhow::anyhow!("--{flag} is required for this command")))
}

fn prepare_out(out: &Option<PathBuf>) -> Result<&Path, Failure> {
    let dir = require(out, "out")?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_cal(config: &Option<PathBuf>) -> Result<Calibration, Failure> {
    let path = require(config, "config")?;
    load_calibration_file(path).map_err(|e| {
        let mut f = Failure::from(e);
        f.err = f.err.context(format!("calibration {}", path.display()));
        f
    })
}

fn fmt_row(r: &[f64; 3]) -> String {
    r.iter().map(|v| format!("{v:>14.8}")).collect::<Vec<_>>().join(" ")
}

fn cmd_calibrate(cli: &Cli) -> Result<u8, Failure> {
    let cal = load_cal(&cli.config)?;
    let h = cal.homography();
    println!("homography (canonical scale, image -> road plane):");
    for row in h.rows() {
        println!("  {}", fmt_row(&row));
    }
    println!("determinant: {:.6e}", h.determinant());
    println!("condition number: {:.6e}", h.condition_number());
    println!("source -> mapped (target, residual m):");
    let mut max_residual = 0.0f64;
    for (s, t) in cal.source_points.iter().zip(&cal.target_points) {
        let m = h.apply(*s).map_err(|e| Failure { code: EXIT_GEOMETRY, err: e.into() })?;
        let r = m.distance(t);
        max_residual = max_residual.max(r);
        println!(
            "  ({:.3}, {:.3}) -> ({:.9}, {:.9})  target ({}, {})  residual {:.3e}",
            s.x, s.y, m.x, m.y, t.x, t.y, r
        );
    }
    println!("max residual: {max_residual:.3e} m");
    if let Some(out) = &cli.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let doc = serde_json::json!({
            "homography": h.rows(),
            "determinant": h.determinant(),
            "condition_number": h.condition_number(),
            "max_residual_m": max_residual,
        });
        write_file(&out.join("calibration.json"), (serde_json::to_string_pretty(&doc).map_err(Failure::input)? + "\n").as_bytes())?;
        RunManifest::new("calibrate", cli.config.as_deref(), out).write(out)?;
    }
    Ok(0)
}

fn cmd_estimate(
    cli: &Cli,
    detections: &Path,
    mode: Mode,
    window_s: f64,
    min_samples: usize,
    tracker: TrackerConfig,
) -> Result<u8, Failure> {
    let cal = load_cal(&cli.config)?;
    let out = prepare_out(&cli.out)?;
    let speed = SpeedConfig {
        mode: match mode {
            Mode::Transit => SpeedMode::Transit,
            Mode::Window => SpeedMode::Window,
        },
        window_s,
        min_samples,
    };
    let file = File::open(detections)
        .with_context(|| format!("opening {}", detections.display()))?;
    let result = pipeline::run(BufReader::new(file), &cal, &PipelineConfig { tracker, speed })
        .map_err(|e| match e {
            PipelineError::Geometry(g) => Failure { code: EXIT_GEOMETRY, err: g.into() },
            other => Failure::input(anyhow::Error::new(other).context(format!("{}", detections.display()))),
        })?;

    let mut table = BufWriter::new(File::create(out.join("speeds.csv")).context("creating speeds.csv")?);
    write_speed_table(&mut table, &result.estimates).map_err(Failure::input)?;
    table.flush().context("writing speeds.csv")?;
    write_file(&out.join("predictions.csv"), metrics::write_speed_rows(&result.predictions).as_bytes())?;
    let mut overlay = BufWriter::new(File::create(out.join("overlay.jsonl")).context("creating overlay.jsonl")?);
    pipeline::write_overlay(&mut overlay, &result.overlay).context("writing overlay.jsonl")?;
    overlay.flush().context("writing overlay.jsonl")?;

    let mut manifest = RunManifest::new("estimate", cli.config.as_deref(), out);
    manifest.inputs.insert("detections", detections.display().to_string());
    manifest.flags.insert("mode", format!("{mode:?}").to_lowercase());
    manifest.flags.insert("window_s", window_s.to_string());
    manifest.flags.insert("min_samples", min_samples.to_string());
    manifest.flags.insert("iou_threshold", tracker.iou_threshold.to_string());
    manifest.flags.insert("max_age", tracker.max_age.to_string());
    manifest.flags.insert("min_hits", tracker.min_hits.to_string());
    manifest.write(out)?;

    println!(
        "{} frames, {} detections, {} tracks, {} estimates",
        result.frames,
        result.detections,
        result.predictions.len(),
        result.estimates.len()
    );
    if result.frames == 0 {
        eprintln!("warning: no detections at or above confidence {}", cal.confidence_threshold);
        return Ok(EXIT_EMPTY);
    }
    Ok(0)
}

fn cmd_eval(cli: &Cli, pred: &Path, truth: &Path) -> Result<u8, Failure> {
    let out = prepare_out(&cli.out)?;
    let open = |p: &Path| File::open(p).with_context(|| format!("opening {}", p.display()));
    let pairs = metrics::join_tables(open(pred)?, open(truth)?).map_err(|e: MetricsError| Failure::input(e))?;
    let report = metrics::report(&pairs).map_err(Failure::input)?;
    let plots = metrics::emit_plots(&report, &pairs).map_err(Failure::input)?;
    write_file(&out.join("report.json"), report.to_json().as_bytes())?;
    write_file(&out.join(PRED_VS_ACTUAL_SVG), plots.pred_vs_actual.as_bytes())?;
    write_file(&out.join(MAE_VS_RMSE_SVG), plots.mae_vs_rmse.as_bytes())?;
    let mut manifest = RunManifest::new("eval", cli.config.as_deref(), out);
    manifest.inputs.insert("pred", pred.display().to_string());
    manifest.inputs.insert("truth", truth.display().to_string());
    manifest.write(out)?;

    println!("n {}", report.n);
    println!("sse {}", report.sse);
    println!("sae {}", report.sae);
    println!("mae {:.2}", report.mae);
    println!("rmse {:.2}", report.rmse);
    println!("accuracy {:.2}%", report.accuracy_pct);
    Ok(0)
}

fn cmd_synth(cli: &Cli, scenario: &Path, seed: Option<u64>) -> Result<u8, Failure> {
    let text = fs::read_to_string(scenario).with_context(|| format!("reading {}", scenario.display()))?;
    let mut doc: ScenarioDocument = serde_json::from_str(&text)
        .map_err(|e| Failure::input(anyhow::Error::new(e).context(format!("scenario {}", scenario.display()))))?;
    if let Some(path) = &cli.config {
        let cfg = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        doc.calibration = serde_json::from_str(&cfg)
            .map_err(|e| Failure::from(CalibrationError::SchemaError(e.to_string())))?;
    }
    if let Some(s) = seed {
        doc.seed = s;
    }
    let map_synth = |e: SynthError| match e {
        SynthError::Calibration(c) => Failure::from(c),
        SynthError::SingularMatrix => Failure { code: EXIT_GEOMETRY, err: e.into() },
        SynthError::Schema(_) => Failure::input(e),
    };
    let spec = ScenarioSpec::from_document(&doc).map_err(map_synth)?;
    let out = prepare_out(&cli.out)?;
    let generated = synth::generate(&spec).map_err(map_synth)?;
    for w in &generated.warnings {
        match w {
            SynthWarning::ProjectsOutsideImage { vehicle, frame } => {
                eprintln!("warning: vehicle {} frame {frame}: box outside image, skipped", vehicle + 1)
            }
            SynthWarning::HorizonSingularity { vehicle, frame } => {
                eprintln!("warning: vehicle {} frame {frame}: maps to horizon, skipped", vehicle + 1)
            }
        }
    }
    write_file(&out.join("detections.jsonl"), &generated.detections)?;
    write_file(&out.join("truth.csv"), generated.truth.as_bytes())?;
    let mut manifest = RunManifest::new("synth", cli.config.as_deref(), out);
    manifest.inputs.insert("scenario", scenario.display().to_string());
    manifest.seed = Some(doc.seed);
    manifest.write(out)?;
    println!(
        "{} frames, {} vehicles, {} warnings",
        generated.frame_count,
        spec.vehicles.len(),
        generated.warnings.len()
    );
    Ok(0)
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Calibrate => cmd_calibrate(cli),
        Command::Estimate {
            detections,
            mode,
            window_s,
            min_samples,
            iou_threshold,
            max_age,
            min_hits,
        } => cmd_estimate(
            cli,
            detections,
            *mode,
            *window_s,
            *min_samples,
            TrackerConfig {
                iou_threshold: *iou_threshold,
                max_age: *max_age,
                min_hits: *min_hits,
            },
        ),
        Command::Eval { pred, truth } => cmd_eval(cli, pred, truth),
        Command::Synth { scenario, seed } => cmd_synth(cli, scenario, *seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
