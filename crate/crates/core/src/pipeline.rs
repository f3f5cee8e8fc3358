//! End-to-end pipeline orchestration.
//!
//! Stages run strictly in order: tile, spot (parallel across patches),
//! merge, correct, georeference, link, emit. Patches are distributed to a
//! bounded worker pool and gathered completely, then sorted by provenance
//! before anything order-sensitive happens — output bytes are identical for
//! any worker count. All shared state (truth, gazetteer index, vocabulary,
//! transform) is immutable during the run.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::{Error, Result, Stage};
use crate::geojson::{emit_collection, GeoFeature};
use crate::geometry::Point;
use crate::georef::{fit_affine, load_gcp_file};
use crate::linker::{load_gazetteer, DEFAULT_GRID_CELL_DEG, DEFAULT_POINT_BUFFER_DEG};
use crate::merge::{dedupe, to_map_coords, MergedDetection};
use crate::postocr::{correct, Vocabulary};
use crate::raster::{crop, load_raster, plan_tiles, PatchWindow, RasterImage};
use crate::spotter::{load_truth, SpotterConfig, TextDetection};

pub const DEFAULT_PATCH_SIZE: u32 = 1000;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MAX_EDIT_DISTANCE: usize = 2;
pub const DEFAULT_P_SUB: f64 = 0.1;
pub const DEFAULT_JITTER_PX: f64 = 1.0;
pub const DEFAULT_MAX_EDITS: usize = 2;
pub const DEFAULT_EXTERNAL_TIMEOUT_SECS: u64 = 120;
pub const DEFAULT_EXTERNAL_MARGIN_PX: f64 = 8.0;

/// Which spotting backend to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpotterKind {
    Oracle,
    Noise,
    External,
}

impl std::str::FromStr for SpotterKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(SpotterKind::Oracle),
            "noise" => Ok(SpotterKind::Noise),
            "external" => Ok(SpotterKind::External),
            other => Err(format!(
                "unknown spotter backend {other:?} (oracle | noise | external)"
            )),
        }
    }
}

/// Policy for per-patch spotter failures (external backends can crash or
/// time out on a single patch).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnPatchError {
    Abort,
    Skip,
}

impl std::str::FromStr for OnPatchError {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "abort" => Ok(OnPatchError::Abort),
            "skip" => Ok(OnPatchError::Skip),
            other => Err(format!(
                "unknown patch error policy {other:?} (abort | skip)"
            )),
        }
    }
}

/// Full configuration of one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub gcps: PathBuf,
    pub gazetteer: PathBuf,
    pub output: PathBuf,
    pub spotter: SpotterKind,
    /// Truth sidecar, required by the oracle and noise backends.
    pub truth: Option<PathBuf>,
    /// Command line for the external backend (argv vector).
    pub external_cmd: Option<Vec<String>>,
    pub external_timeout_secs: u64,
    pub external_margin_px: f64,
    pub p_sub: f64,
    pub jitter_px: f64,
    pub max_edits: usize,
    pub patch_size: u32,
    pub stride: u32,
    pub iou_threshold: f64,
    pub max_edit_distance: usize,
    pub point_buffer_deg: f64,
    pub grid_cell_deg: f64,
    pub jobs: usize,
    pub seed: u64,
    pub on_patch_error: OnPatchError,
    /// Debug dumps of intermediate stage outputs (JSONL files) into this
    /// directory.
    pub dump_intermediate: Option<PathBuf>,
}

impl PipelineConfig {
    /// A config with every tunable at its default; paths must be filled in.
    pub fn new(
        input: impl Into<PathBuf>,
        gcps: impl Into<PathBuf>,
        gazetteer: impl Into<PathBuf>,
        output: impl Into<PathBuf>,
    ) -> Self {
        PipelineConfig {
            input: input.into(),
            gcps: gcps.into(),
            gazetteer: gazetteer.into(),
            output: output.into(),
            spotter: SpotterKind::Oracle,
            truth: None,
            external_cmd: None,
            external_timeout_secs: DEFAULT_EXTERNAL_TIMEOUT_SECS,
            external_margin_px: DEFAULT_EXTERNAL_MARGIN_PX,
            p_sub: DEFAULT_P_SUB,
            jitter_px: DEFAULT_JITTER_PX,
            max_edits: DEFAULT_MAX_EDITS,
            patch_size: DEFAULT_PATCH_SIZE,
            stride: DEFAULT_PATCH_SIZE,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            max_edit_distance: DEFAULT_MAX_EDIT_DISTANCE,
            point_buffer_deg: DEFAULT_POINT_BUFFER_DEG,
            grid_cell_deg: DEFAULT_GRID_CELL_DEG,
            jobs: 1,
            seed: 42,
            on_patch_error: OnPatchError::Abort,
            dump_intermediate: None,
        }
    }
}

/// Validates the whole config, collecting every violation rather than
/// stopping at the first.
pub fn validate_config(cfg: &PipelineConfig) -> Vec<String> {
    fn require_file(violations: &mut Vec<String>, stage: Stage, what: &str, path: &Path) {
        if path.as_os_str().is_empty() {
            violations.push(format!("{stage}: missing {what} path"));
        } else if !path.is_file() {
            violations.push(format!("{stage}: {what} not found: {}", path.display()));
        }
    }
    let mut violations = Vec::new();
    require_file(&mut violations, Stage::Tiling, "input raster", &cfg.input);
    require_file(
        &mut violations,
        Stage::Georeferencing,
        "GCP metadata",
        &cfg.gcps,
    );
    require_file(&mut violations, Stage::Linking, "gazetteer", &cfg.gazetteer);

    if cfg.output.as_os_str().is_empty() {
        violations.push(format!("{}: missing output path", Stage::Output));
    }
    if cfg.patch_size == 0 {
        violations.push(format!("{}: patch size must be positive", Stage::Tiling));
    }
    if cfg.stride == 0 {
        violations.push(format!("{}: stride must be positive", Stage::Tiling));
    }
    if cfg.stride > cfg.patch_size {
        violations.push(format!(
            "{}: stride exceeds patch size ({} > {})",
            Stage::Tiling,
            cfg.stride,
            cfg.patch_size
        ));
    }
    if cfg.jobs == 0 {
        violations.push("orchestrator: jobs must be at least 1".into());
    }
    if !(cfg.iou_threshold > 0.0 && cfg.iou_threshold <= 1.0) {
        violations.push(format!(
            "{}: IoU threshold {} outside (0, 1]",
            Stage::Merging,
            cfg.iou_threshold
        ));
    }
    if !(0.0..=1.0).contains(&cfg.p_sub) {
        violations.push(format!(
            "{}: substitution rate {} outside [0, 1]",
            Stage::Spotting,
            cfg.p_sub
        ));
    }
    if cfg.jitter_px < 0.0 {
        violations.push(format!("{}: jitter must be non-negative", Stage::Spotting));
    }
    if cfg.point_buffer_deg < 0.0 {
        violations.push(format!(
            "{}: point buffer must be non-negative",
            Stage::Linking
        ));
    }
    if cfg.grid_cell_deg <= 0.0 {
        violations.push(format!("{}: grid cell must be positive", Stage::Linking));
    }
    match cfg.spotter {
        SpotterKind::Oracle | SpotterKind::Noise => match &cfg.truth {
            None => violations.push(format!(
                "{}: the oracle/noise backend requires --truth",
                Stage::Spotting
            )),
            Some(truth) => require_file(&mut violations, Stage::Spotting, "truth sidecar", truth),
        },
        SpotterKind::External => {
            if cfg.external_cmd.as_ref().is_none_or(|c| c.is_empty()) {
                violations.push(format!(
                    "{}: the external backend requires --spotter-cmd",
                    Stage::Spotting
                ));
            }
        }
    }
    violations
}

/// Per-stage wall times in seconds.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StageTimings {
    pub tiling_s: f64,
    pub spotting_s: f64,
    pub merging_s: f64,
    pub postocr_s: f64,
    pub georeferencing_s: f64,
    pub linking_s: f64,
    pub output_s: f64,
    pub total_s: f64,
}

/// Counters and quality figures for one run; printed as a JSON summary.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunStats {
    pub map_id: String,
    pub patches_total: usize,
    pub patches_processed: usize,
    pub patches_skipped: usize,
    pub detections_raw: usize,
    pub detections_degenerate_dropped: usize,
    pub detections_merged: usize,
    pub detections_deduped: usize,
    pub labels_matched: usize,
    pub labels_linked: usize,
    pub gazetteer_entities: usize,
    pub gazetteer_malformed_lines: usize,
    pub vocabulary_size: usize,
    pub gcp_fit_rmse_deg: f64,
    pub timings: StageTimings,
}

fn secs(since: Instant) -> f64 {
    since.elapsed().as_secs_f64()
}

/// Spots all windows with a bounded worker pool. Results are gathered into
/// window order; each worker builds its own backend instance.
fn spot_all(
    raster: &RasterImage,
    windows: &[PatchWindow],
    spotter_cfg: &SpotterConfig,
    jobs: usize,
    on_patch_error: OnPatchError,
) -> Result<(Vec<Vec<TextDetection>>, usize)> {
    let next = AtomicUsize::new(0);
    let cancel = AtomicBool::new(false);
    let build_failure: std::sync::Mutex<Option<Error>> = std::sync::Mutex::new(None);
    let (tx, rx) = mpsc::channel::<(usize, Result<Vec<TextDetection>>)>();
    let workers = jobs.max(1).min(windows.len().max(1));

    let gathered: Vec<Option<Result<Vec<TextDetection>>>> = std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let cancel = &cancel;
            let build_failure = &build_failure;
            scope.spawn(move || {
                let mut spotter = match spotter_cfg.build() {
                    Ok(s) => s,
                    Err(e) => {
                        // A backend that cannot even start is a config-level
                        // fault, fatal under either patch-error policy.
                        build_failure.lock().unwrap().get_or_insert(e);
                        cancel.store(true, Ordering::Relaxed);
                        return;
                    }
                };
                loop {
                    if cancel.load(Ordering::Relaxed) {
                        break;
                    }
                    let idx = next.fetch_add(1, Ordering::Relaxed);
                    if idx >= windows.len() {
                        break;
                    }
                    let window = &windows[idx];
                    let result =
                        crop(raster, window).and_then(|patch| spotter.spot_patch(&patch, window));
                    if result.is_err() && on_patch_error == OnPatchError::Abort {
                        cancel.store(true, Ordering::Relaxed);
                    }
                    if tx.send((idx, result)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);
        let mut slots: Vec<Option<Result<Vec<TextDetection>>>> = Vec::new();
        slots.resize_with(windows.len(), || None);
        for (idx, result) in rx {
            if idx < slots.len() {
                slots[idx] = Some(result);
            }
        }
        slots
    });
    if let Some(e) = build_failure.into_inner().unwrap() {
        return Err(e.at_stage(Stage::Spotting));
    }

    let mut per_window: Vec<Vec<TextDetection>> = Vec::with_capacity(windows.len());
    let mut skipped = 0usize;
    for (idx, slot) in gathered.into_iter().enumerate() {
        match slot {
            Some(Ok(dets)) => per_window.push(dets),
            Some(Err(e)) => match on_patch_error {
                OnPatchError::Abort => return Err(e.at_stage(Stage::Spotting)),
                OnPatchError::Skip => {
                    eprintln!("warning: skipping patch {idx}: {e}");
                    skipped += 1;
                    per_window.push(Vec::new());
                }
            },
            // Under abort the pool may stop before touching some windows.
            None => match on_patch_error {
                OnPatchError::Abort => {
                    return Err(Error::Input(
                        "spotting aborted before all patches completed".into(),
                    )
                    .at_stage(Stage::Spotting))
                }
                OnPatchError::Skip => {
                    skipped += 1;
                    per_window.push(Vec::new());
                }
            },
        }
    }
    Ok((per_window, skipped))
}

fn dump_jsonl<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<()> {
    let path = dir.join(name);
    let mut text = String::new();
    for row in rows {
        text.push_str(
            &serde_json::to_string(row).map_err(|e| Error::Serialization(e.to_string()))?,
        );
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[derive(Serialize)]
struct DetectionDump<'a> {
    provenance: String,
    text: &'a str,
    score: f64,
    polygon_map_px: Vec<(f64, f64)>,
}

fn detection_dump(d: &MergedDetection) -> DetectionDump<'_> {
    DetectionDump {
        provenance: d.provenance.to_string(),
        text: &d.text,
        score: d.score,
        polygon_map_px: d.polygon_map_px.iter().map(|p| (p.x, p.y)).collect(),
    }
}

/// Runs the whole pipeline and writes the output FeatureCollection.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunStats> {
    let violations = validate_config(cfg);
    if !violations.is_empty() {
        return Err(Error::Config(violations.join("; ")));
    }
    let run_start = Instant::now();
    let mut stats = RunStats::default();

    // Inputs that downstream stages share, loaded up front so a bad path
    // fails before any spotting work starts.
    let raster = load_raster(&cfg.input).map_err(|e| e.at_stage(Stage::Tiling))?;
    stats.map_id = raster.id.clone();
    let gcps = load_gcp_file(&cfg.gcps).map_err(|e| e.at_stage(Stage::Georeferencing))?;
    let transform = fit_affine(&gcps).map_err(|e| e.at_stage(Stage::Georeferencing))?;
    stats.gcp_fit_rmse_deg = transform
        .residual_rmse(&gcps)
        .map_err(|e| e.at_stage(Stage::Georeferencing))?;
    let (gaz_index, gaz_report) =
        load_gazetteer(&cfg.gazetteer, cfg.grid_cell_deg, cfg.point_buffer_deg)
            .map_err(|e| e.at_stage(Stage::Linking))?;
    stats.gazetteer_entities = gaz_report.records;
    stats.gazetteer_malformed_lines = gaz_report.malformed;
    let vocabulary = Vocabulary::from_entities(gaz_index.entities());
    stats.vocabulary_size = vocabulary.len();

    let spotter_cfg = match cfg.spotter {
        SpotterKind::Oracle => SpotterConfig::Oracle {
            truth: Arc::new(
                load_truth(cfg.truth.as_ref().expect("validated"))
                    .map_err(|e| e.at_stage(Stage::Spotting))?,
            ),
        },
        SpotterKind::Noise => SpotterConfig::Noise {
            truth: Arc::new(
                load_truth(cfg.truth.as_ref().expect("validated"))
                    .map_err(|e| e.at_stage(Stage::Spotting))?,
            ),
            p_sub: cfg.p_sub,
            jitter_px: cfg.jitter_px,
            max_edits: cfg.max_edits,
            seed: cfg.seed,
        },
        SpotterKind::External => SpotterConfig::External {
            command: cfg.external_cmd.clone().expect("validated"),
            timeout: Duration::from_secs(cfg.external_timeout_secs),
            margin_px: cfg.external_margin_px,
        },
    };

    // M1: plan the tile grid.
    let stage_start = Instant::now();
    let windows = plan_tiles(
        raster.width_px,
        raster.height_px,
        cfg.patch_size,
        cfg.stride,
    )
    .map_err(|e| e.at_stage(Stage::Tiling))?;
    stats.patches_total = windows.len();
    stats.timings.tiling_s = secs(stage_start);

    // M2: spot patches in parallel.
    let stage_start = Instant::now();
    let (per_window, skipped) = spot_all(
        &raster,
        &windows,
        &spotter_cfg,
        cfg.jobs,
        cfg.on_patch_error,
    )?;
    stats.patches_skipped = skipped;
    stats.patches_processed = stats.patches_total - skipped;
    stats.timings.spotting_s = secs(stage_start);

    // M3: lift to map coordinates (dropping degenerate zero-area rings) and
    // dedupe overlap duplicates.
    let stage_start = Instant::now();
    let mut merged: Vec<MergedDetection> = Vec::new();
    for (window, dets) in windows.iter().zip(&per_window) {
        for det in dets {
            if det.area() == 0.0 {
                stats.detections_degenerate_dropped += 1;
                continue;
            }
            merged.push(to_map_coords(det, window));
        }
    }
    stats.detections_raw = merged.len();
    stats.detections_merged = merged.len();
    if let Some(dir) = &cfg.dump_intermediate {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let rows: Vec<DetectionDump> = merged.iter().map(detection_dump).collect();
        dump_jsonl(dir, "detections_map_px.jsonl", &rows)?;
    }
    let deduped = dedupe(merged, cfg.iou_threshold);
    stats.detections_deduped = deduped.len();
    if let Some(dir) = &cfg.dump_intermediate {
        let rows: Vec<DetectionDump> = deduped.iter().map(detection_dump).collect();
        dump_jsonl(dir, "detections_deduped.jsonl", &rows)?;
    }
    stats.timings.merging_s = secs(stage_start);

    // M4: post-OCR correction.
    let stage_start = Instant::now();
    let corrections: Vec<_> = deduped
        .iter()
        .map(|d| correct(&d.text, &vocabulary, cfg.max_edit_distance))
        .collect();
    stats.labels_matched = corrections.iter().filter(|c| c.matched).count();
    stats.timings.postocr_s = secs(stage_start);

    // M5: pixel -> lon/lat.
    let stage_start = Instant::now();
    let rings_geo: Vec<Vec<Point>> = deduped
        .iter()
        .map(|d| transform.apply_ring(&d.polygon_map_px))
        .collect();
    stats.timings.georeferencing_s = secs(stage_start);

    // M6: entity linking.
    let stage_start = Instant::now();
    let features: Vec<GeoFeature> = deduped
        .iter()
        .zip(&corrections)
        .zip(&rings_geo)
        .map(|((det, correction), ring)| {
            let osm_ids = gaz_index.link(&correction.postocr_label, ring);
            GeoFeature {
                ring_geo: ring.clone(),
                text: det.text.clone(),
                score: det.score,
                postocr_label: correction.postocr_label.clone(),
                osm_ids,
            }
        })
        .collect();
    stats.labels_linked = features.iter().filter(|f| !f.osm_ids.is_empty()).count();
    stats.timings.linking_s = secs(stage_start);

    // Emit, features already in provenance order from dedupe.
    let stage_start = Instant::now();
    emit_collection(&features, &cfg.output).map_err(|e| e.at_stage(Stage::Output))?;
    stats.timings.output_s = secs(stage_start);
    stats.timings.total_s = secs(run_start);
    Ok(stats)
}
