//! `mapkurator` — batch extraction, georeferencing and entity linking of
//! text labels on scanned historical maps.
//!
//! Subcommands:
//! - `run`          process one map (or a directory of maps) into GeoJSON
//! - `synth`        generate a deterministic synthetic map fixture
//! - `serve-types`  serve the semantic-type recommendation API over HTTP
//! - `spotter-stdio` expose the built-in spotters over the external wire
//!   protocol (reference backend implementation, useful for testing)
//!
//! Exit codes: 0 success, 1 runtime stage failure, 2 configuration error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use mapkurator_core::pipeline::{
    run_pipeline, validate_config, OnPatchError, PipelineConfig, SpotterKind,
};
use mapkurator_core::raster::PatchWindow;
use mapkurator_core::recommend::{server, TypeIndex, DEFAULT_DIM};
use mapkurator_core::spotter::external::{parse_patch_id, serve_protocol, SpotRequest};
use mapkurator_core::spotter::{load_truth, SpotterConfig};
use mapkurator_core::synth::{generate, Background, SynthSpec};
use mapkurator_core::Error;

#[derive(Parser)]
#[command(
    name = "mapkurator",
    version,
    about = "Extract, georeference and link text labels on scanned maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the extraction pipeline on one map (or --batch over a directory).
    Run(Box<RunArgs>),
    /// Generate a synthetic map with truth sidecar, GCPs, and gazetteer.
    Synth(SynthArgs),
    /// Serve the semantic type recommendation API.
    ServeTypes(ServeTypesArgs),
    /// Speak the external spotter wire protocol on stdin/stdout using the
    /// built-in oracle or noise backend.
    SpotterStdio(SpotterStdioArgs),
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// TOML config file; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input map raster (PNG or 8-bit RGB TIFF).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Process every .png/.tif map in this directory instead of --input.
    /// Expects <stem>.gcps.json and <stem>.truth.jsonl next to each map;
    /// --output then names a directory.
    #[arg(long, conflicts_with = "input")]
    batch: Option<PathBuf>,
    /// Ground control point metadata (JSON).
    #[arg(long)]
    gcps: Option<PathBuf>,
    /// Gazetteer file (newline-delimited JSON entities).
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    /// Output GeoJSON path (a directory in --batch mode).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Spotting backend: oracle | noise | external.
    #[arg(long)]
    spotter: Option<String>,
    /// Truth sidecar for the oracle/noise backends.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// External backend command line (split on whitespace, no shell quoting).
    #[arg(long)]
    spotter_cmd: Option<String>,
    /// Per-patch reply timeout for the external backend, seconds.
    #[arg(long)]
    spotter_timeout: Option<u64>,
    /// How far external detections may overshoot patch bounds, pixels.
    #[arg(long)]
    spotter_margin: Option<f64>,
    #[arg(long)]
    patch_size: Option<u32>,
    /// Tile stride; defaults to the patch size (no overlap).
    #[arg(long)]
    stride: Option<u32>,
    #[arg(long)]
    iou_threshold: Option<f64>,
    #[arg(long)]
    max_edit_distance: Option<usize>,
    /// Noise backend: per-character substitution probability.
    #[arg(long)]
    p_sub: Option<f64>,
    /// Noise backend: vertex jitter bound in pixels.
    #[arg(long)]
    jitter: Option<f64>,
    /// Noise backend: cap on realized substitutions per label.
    #[arg(long)]
    max_edits: Option<usize>,
    /// Linking buffer radius for point entities, degrees.
    #[arg(long)]
    point_buffer: Option<f64>,
    /// Spatial index cell size, degrees.
    #[arg(long)]
    grid_cell: Option<f64>,
    /// Worker pool size for patch spotting.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-patch spotter failure policy: abort | skip.
    #[arg(long)]
    on_patch_error: Option<String>,
    /// Write per-stage intermediate JSONL dumps into this directory.
    #[arg(long)]
    dump_intermediate: Option<PathBuf>,
}

/// TOML mirror of the run flags (snake_case keys).
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    input: Option<PathBuf>,
    gcps: Option<PathBuf>,
    gazetteer: Option<PathBuf>,
    output: Option<PathBuf>,
    spotter: Option<String>,
    truth: Option<PathBuf>,
    spotter_cmd: Option<String>,
    spotter_timeout: Option<u64>,
    spotter_margin: Option<f64>,
    patch_size: Option<u32>,
    stride: Option<u32>,
    iou_threshold: Option<f64>,
    max_edit_distance: Option<usize>,
    p_sub: Option<f64>,
    jitter: Option<f64>,
    max_edits: Option<usize>,
    point_buffer: Option<f64>,
    grid_cell: Option<f64>,
    jobs: Option<usize>,
    seed: Option<u64>,
    on_patch_error: Option<String>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Raster dimensions as WIDTHxHEIGHT.
    #[arg(long, default_value = "3000x2000")]
    size: String,
    #[arg(long, default_value_t = 50)]
    labels: u32,
    /// Output directory for map.png, truth.jsonl, gcps.json, gazetteer.jsonl.
    #[arg(long)]
    out: PathBuf,
    /// Enforce pairwise label edit distance >= 5 (exact post-OCR checks).
    #[arg(long)]
    separated_vocab: bool,
    /// Background style: plain | grid.
    #[arg(long, default_value = "plain")]
    background: String,
}

#[derive(Args, Debug)]
struct ServeTypesArgs {
    /// Type list file (newline-delimited JSON); defaults to the bundled
    /// Schema.org list.
    #[arg(long)]
    types: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Embedding dimensionality.
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
}

#[derive(Args, Debug)]
struct SpotterStdioArgs {
    /// Truth sidecar in map-pixel coordinates.
    #[arg(long)]
    truth: PathBuf,
    /// Tile stride used by the orchestrator (reconstructs window origins
    /// from patch ids).
    #[arg(long, default_value_t = 1000)]
    stride: u32,
    /// Backend to serve: oracle | noise.
    #[arg(long, default_value = "oracle")]
    backend: String,
    #[arg(long, default_value_t = 0.1)]
    p_sub: f64,
    #[arg(long, default_value_t = 1.0)]
    jitter: f64,
    #[arg(long, default_value_t = 2)]
    max_edits: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn fail_config(messages: &[String]) -> ExitCode {
    for m in messages {
        eprintln!("error: {m}");
    }
    ExitCode::from(2)
}

fn fail_runtime(err: &Error) -> ExitCode {
    // Display formats already embed their source chain.
    eprintln!("error: {err}");
    ExitCode::from(1)
}

fn build_pipeline_config(args: &RunArgs) -> Result<PipelineConfig, Vec<String>> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| vec![format!("cannot read config {}: {e}", path.display())])?;
            toml::from_str(&text).map_err(|e| vec![format!("{}: {e}", path.display())])?
        }
        None => FileConfig::default(),
    };

    // Precedence: built-in defaults < config file < command line.
    let mut cfg = PipelineConfig::new("", "", "", "");
    let input = args.input.clone().or(file.input);
    let gcps = args.gcps.clone().or(file.gcps);
    let gazetteer = args.gazetteer.clone().or(file.gazetteer);
    let output = args.output.clone().or(file.output);
    cfg.input = input.unwrap_or_default();
    cfg.gcps = gcps.unwrap_or_default();
    cfg.gazetteer = gazetteer.unwrap_or_default();
    cfg.output = output.unwrap_or_default();
    cfg.truth = args.truth.clone().or(file.truth);

    let mut errors = Vec::new();
    if let Some(name) = args.spotter.as_ref().or(file.spotter.as_ref()) {
        match name.parse::<SpotterKind>() {
            Ok(kind) => cfg.spotter = kind,
            Err(e) => errors.push(e),
        }
    }
    if let Some(policy) = args
        .on_patch_error
        .as_ref()
        .or(file.on_patch_error.as_ref())
    {
        match policy.parse::<OnPatchError>() {
            Ok(p) => cfg.on_patch_error = p,
            Err(e) => errors.push(e),
        }
    }
    if let Some(cmd) = args.spotter_cmd.as_ref().or(file.spotter_cmd.as_ref()) {
        let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
        if argv.is_empty() {
            errors.push("--spotter-cmd is empty".into());
        } else {
            cfg.external_cmd = Some(argv);
        }
    }
    if let Some(v) = args.spotter_timeout.or(file.spotter_timeout) {
        cfg.external_timeout_secs = v;
    }
    if let Some(v) = args.spotter_margin.or(file.spotter_margin) {
        cfg.external_margin_px = v;
    }
    if let Some(v) = args.patch_size.or(file.patch_size) {
        cfg.patch_size = v;
        cfg.stride = v; // stride defaults to the patch size
    }
    if let Some(v) = args.stride.or(file.stride) {
        cfg.stride = v;
    }
    if let Some(v) = args.iou_threshold.or(file.iou_threshold) {
        cfg.iou_threshold = v;
    }
    if let Some(v) = args.max_edit_distance.or(file.max_edit_distance) {
        cfg.max_edit_distance = v;
    }
    if let Some(v) = args.p_sub.or(file.p_sub) {
        cfg.p_sub = v;
    }
    if let Some(v) = args.jitter.or(file.jitter) {
        cfg.jitter_px = v;
    }
    if let Some(v) = args.max_edits.or(file.max_edits) {
        cfg.max_edits = v;
    }
    if let Some(v) = args.point_buffer.or(file.point_buffer) {
        cfg.point_buffer_deg = v;
    }
    if let Some(v) = args.grid_cell.or(file.grid_cell) {
        cfg.grid_cell_deg = v;
    }
    if let Some(v) = args.jobs.or(file.jobs) {
        cfg.jobs = v;
    } else {
        cfg.jobs = std::thread::available_parallelism().map_or(1, |n| n.get().min(8));
    }
    if let Some(v) = args.seed.or(file.seed) {
        cfg.seed = v;
    }
    cfg.dump_intermediate = args.dump_intermediate.clone();

    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(errors)
    }
}

fn print_stats(stats: &mapkurator_core::pipeline::RunStats) {
    match serde_json::to_string(stats) {
        Ok(line) => println!("{line}"),
        Err(e) => eprintln!("warning: cannot serialize stats: {e}"),
    }
}

fn run_single(cfg: &PipelineConfig) -> ExitCode {
    let violations = validate_config(cfg);
    if !violations.is_empty() {
        return fail_config(&violations);
    }
    match run_pipeline(cfg) {
        Ok(stats) => {
            print_stats(&stats);
            eprintln!(
                "wrote {} ({} labels, {} linked)",
                cfg.output.display(),
                stats.detections_deduped,
                stats.labels_linked
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail_runtime(&e),
    }
}

fn run_batch(base: &PipelineConfig, batch_dir: &Path, out_dir: &Path) -> ExitCode {
    let mut maps: Vec<PathBuf> = match std::fs::read_dir(batch_dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                matches!(
                    p.extension().and_then(|s| s.to_str()),
                    Some("png") | Some("tif") | Some("tiff")
                )
            })
            .collect(),
        Err(e) => {
            return fail_config(&[format!(
                "cannot read batch dir {}: {e}",
                batch_dir.display()
            )])
        }
    };
    maps.sort();
    if maps.is_empty() {
        return fail_config(&[format!("no .png/.tif maps in {}", batch_dir.display())]);
    }
    if let Err(e) = std::fs::create_dir_all(out_dir) {
        return fail_config(&[format!(
            "cannot create output dir {}: {e}",
            out_dir.display()
        )]);
    }
    for map in maps {
        let stem = map
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        let mut cfg = base.clone();
        cfg.input = map.clone();
        cfg.gcps = batch_dir.join(format!("{stem}.gcps.json"));
        let truth = batch_dir.join(format!("{stem}.truth.jsonl"));
        if truth.is_file() {
            cfg.truth = Some(truth);
        }
        cfg.output = out_dir.join(format!("{stem}.geojson"));
        eprintln!("processing {}", map.display());
        let code = run_single(&cfg);
        if code != ExitCode::SUCCESS {
            return code;
        }
    }
    ExitCode::SUCCESS
}

fn cmd_run(args: &RunArgs) -> ExitCode {
    let cfg = match build_pipeline_config(args) {
        Ok(cfg) => cfg,
        Err(errors) => return fail_config(&errors),
    };
    match &args.batch {
        Some(dir) => {
            if cfg.output.as_os_str().is_empty() {
                return fail_config(&["--batch mode requires --output <dir>".to_string()]);
            }
            let out_dir = cfg.output.clone();
            run_batch(&cfg, dir, &out_dir)
        }
        None => run_single(&cfg),
    }
}

fn cmd_synth(args: &SynthArgs) -> ExitCode {
    let Some((w, h)) = args
        .size
        .split_once('x')
        .and_then(|(w, h)| Some((w.parse::<u32>().ok()?, h.parse::<u32>().ok()?)))
    else {
        return fail_config(&[format!(
            "--size must look like 3000x2000, got {:?}",
            args.size
        )]);
    };
    let mut spec = SynthSpec::new(args.seed, w, h, args.labels);
    spec.separated_vocab = args.separated_vocab;
    spec.background = match args.background.as_str() {
        "plain" => Background::Plain,
        "grid" => Background::Grid,
        other => return fail_config(&[format!("unknown background {other:?} (plain | grid)")]),
    };
    match generate(&spec, &args.out) {
        Ok(out) => {
            eprintln!(
                "wrote {}, {}, {}, {} ({} labels)",
                out.raster_path.display(),
                out.truth_path.display(),
                out.gcps_path.display(),
                out.gazetteer_path.display(),
                out.labels.len()
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail_runtime(&e),
    }
}

fn cmd_serve_types(args: &ServeTypesArgs) -> ExitCode {
    let index = match &args.types {
        Some(path) => match TypeIndex::load(path, args.dim) {
            Ok(index) => index,
            Err(e) => return fail_config(&[e.to_string()]),
        },
        None => TypeIndex::bundled(args.dim),
    };
    eprintln!("serving {} semantic types", index.len());
    let addr = match server::spawn(Arc::new(index), &format!("{}:{}", args.host, args.port)) {
        Ok(addr) => addr,
        Err(e) => return fail_config(&[e.to_string()]),
    };
    println!("listening on {addr}");
    let _ = std::io::stdout().flush();
    loop {
        std::thread::park();
    }
}

fn cmd_spotter_stdio(args: &SpotterStdioArgs) -> ExitCode {
    let truth = match load_truth(&args.truth) {
        Ok(t) => Arc::new(t),
        Err(e) => return fail_config(&[e.to_string()]),
    };
    let spotter_cfg = match args.backend.as_str() {
        "oracle" => SpotterConfig::Oracle { truth },
        "noise" => SpotterConfig::Noise {
            truth,
            p_sub: args.p_sub,
            jitter_px: args.jitter,
            max_edits: args.max_edits,
            seed: args.seed,
        },
        other => return fail_config(&[format!("unknown backend {other:?} (oracle | noise)")]),
    };
    let mut spotter = match spotter_cfg.build() {
        Ok(s) => s,
        Err(e) => return fail_config(&[e.to_string()]),
    };
    let stride = args.stride;
    let window_for = move |req: &SpotRequest| -> mapkurator_core::error::Result<PatchWindow> {
        let (row, col) = parse_patch_id(&req.patch_id).ok_or_else(|| {
            Error::Input(format!(
                "patch id {:?} does not encode a grid position",
                req.patch_id
            ))
        })?;
        Ok(PatchWindow {
            row_index: row,
            col_index: col,
            origin_x_px: col * stride,
            origin_y_px: row * stride,
            width_px: req.width,
            height_px: req.height,
        })
    };
    let stdin = std::io::stdin().lock();
    let stdout = std::io::stdout().lock();
    match serve_protocol(spotter.as_mut(), window_for, stdin, stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail_runtime(&e),
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(&args),
        Command::Synth(args) => cmd_synth(&args),
        Command::ServeTypes(args) => cmd_serve_types(&args),
        Command::SpotterStdio(args) => cmd_spotter_stdio(&args),
    }
}
