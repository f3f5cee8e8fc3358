//! End-to-end tests of the `mapkurator` binary: exit codes, stdout/stderr
//! contracts, the synth and serve-types subcommands, and the external
//! spotter protocol driven through `spotter-stdio`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use mapkurator_core::synth::{generate, SynthOutput, SynthSpec};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mapkurator")
}

fn fixture(dir: &Path, seed: u64, labels: u32) -> SynthOutput {
    generate(&SynthSpec::new(seed, 1200, 900, labels), dir).expect("fixture")
}

fn run_cmd(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn blank_map_exits_zero_with_stats_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = fixture(dir.path(), 3, 0);
    let geojson = dir.path().join("out.geojson");
    let output = run_cmd(&[
        "run",
        "--input",
        path_str(&out.raster_path),
        "--gcps",
        path_str(&out.gcps_path),
        "--gazetteer",
        path_str(&out.gazetteer_path),
        "--truth",
        path_str(&out.truth_path),
        "--spotter",
        "oracle",
        "--output",
        path_str(&geojson),
    ]);
    assert!(output.status.success(), "{output:?}");
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8(output.stdout).unwrap();
    let stats: serde_json::Value =
        serde_json::from_str(stdout.trim()).expect("stats JSON on stdout");
    assert_eq!(stats["detections_deduped"], 0);
    assert_eq!(stats["labels_linked"], 0);
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&geojson).unwrap()).unwrap();
    assert_eq!(doc["type"], "FeatureCollection");
    assert_eq!(doc["features"].as_array().unwrap().len(), 0);
}

#[test]
fn missing_gazetteer_exits_two_naming_the_linker() {
    let dir = tempfile::tempdir().unwrap();
    let out = fixture(dir.path(), 3, 2);
    let output = run_cmd(&[
        "run",
        "--input",
        path_str(&out.raster_path),
        "--gcps",
        path_str(&out.gcps_path),
        "--truth",
        path_str(&out.truth_path),
        "--output",
        path_str(&dir.path().join("out.geojson")),
    ]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("entity-linker"), "{stderr}");
}

#[test]
fn stride_violation_exits_two_with_all_violations() {
    let dir = tempfile::tempdir().unwrap();
    let out = fixture(dir.path(), 3, 1);
    let output = run_cmd(&[
        "run",
        "--input",
        path_str(&out.raster_path),
        "--gcps",
        path_str(&out.gcps_path),
        "--gazetteer",
        path_str(&out.gazetteer_path),
        "--truth",
        path_str(&out.truth_path),
        "--output",
        path_str(&dir.path().join("out.geojson")),
        "--patch-size",
        "500",
        "--stride",
        "900",
        "--jobs",
        "0",
    ]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("stride exceeds patch size"), "{stderr}");
    assert!(stderr.contains("jobs"), "{stderr}");
}

#[test]
fn runtime_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = fixture(dir.path(), 3, 1);
    // Corrupt gazetteer: >50% malformed lines fails at load time.
    let bad_gaz = dir.path().join("bad.jsonl");
    std::fs::write(&bad_gaz, "junk\nmore junk\n").unwrap();
    let output = run_cmd(&[
        "run",
        "--input",
        path_str(&out.raster_path),
        "--gcps",
        path_str(&out.gcps_path),
        "--gazetteer",
        path_str(&bad_gaz),
        "--truth",
        path_str(&out.truth_path),
        "--output",
        path_str(&dir.path().join("out.geojson")),
    ]);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("entity-linker"), "{stderr}");
}

#[test]
fn synth_writes_deterministic_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let output = run_cmd(&[
            "synth",
            "--seed",
            "7",
            "--size",
            "800x600",
            "--labels",
            "5",
            "--separated-vocab",
            "--out",
            path_str(out),
        ]);
        assert!(output.status.success(), "{output:?}");
    }
    for name in ["map.png", "truth.jsonl", "gcps.json", "gazetteer.jsonl"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert!(!a.is_empty() || name != "map.png");
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn external_spotter_stdio_matches_oracle_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = fixture(dir.path(), 11, 5);
    let oracle_out = dir.path().join("oracle.geojson");
    let external_out = dir.path().join("external.geojson");

    let base = [
        "run",
        "--input",
        path_str(&out.raster_path),
        "--gcps",
        path_str(&out.gcps_path),
        "--gazetteer",
        path_str(&out.gazetteer_path),
        "--patch-size",
        "600",
        "--stride",
        "600",
        "--jobs",
        "3",
    ];

    let mut oracle_args: Vec<&str> = base.to_vec();
    oracle_args.extend_from_slice(&[
        "--spotter",
        "oracle",
        "--truth",
        path_str(&out.truth_path),
        "--output",
        path_str(&oracle_out),
    ]);
    let output = run_cmd(&oracle_args);
    assert!(output.status.success(), "{output:?}");

    // Same run driven over the wire protocol through the binary itself.
    let spotter_cmd = format!(
        "{} spotter-stdio --truth {} --stride 600",
        bin(),
        path_str(&out.truth_path)
    );
    // The oracle assigns whole labels by centroid, so replies can overshoot
    // patch bounds by up to a label's half extent; widen the margin.
    let mut external_args: Vec<&str> = base.to_vec();
    external_args.extend_from_slice(&[
        "--spotter",
        "external",
        "--spotter-cmd",
        &spotter_cmd,
        "--spotter-margin",
        "400",
        "--output",
        path_str(&external_out),
    ]);
    let output = run_cmd(&external_args);
    assert!(output.status.success(), "{output:?}");

    assert_eq!(
        std::fs::read(&oracle_out).unwrap(),
        std::fs::read(&external_out).unwrap(),
        "external oracle must reproduce the in-process oracle byte for byte"
    );
}

#[test]
fn config_file_obeys_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let out = fixture(dir.path(), 5, 2);
    let geojson = dir.path().join("out.geojson");
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            "input = {:?}\ngcps = {:?}\ngazetteer = {:?}\ntruth = {:?}\noutput = {:?}\nspotter = \"oracle\"\npatch_size = 400\njobs = 2\n",
            path_str(&out.raster_path),
            path_str(&out.gcps_path),
            path_str(&out.gazetteer_path),
            path_str(&out.truth_path),
            path_str(&geojson),
        ),
    )
    .unwrap();

    // File alone works.
    let output = run_cmd(&["run", "--config", path_str(&config)]);
    assert!(output.status.success(), "{output:?}");
    let stats: serde_json::Value =
        serde_json::from_str(String::from_utf8(output.stdout).unwrap().trim()).unwrap();
    // 1200x900 at patch 400: 3 columns x 3 rows.
    assert_eq!(stats["patches_total"], 9);

    // CLI flag overrides the file's patch size.
    let output = run_cmd(&["run", "--config", path_str(&config), "--patch-size", "1200"]);
    assert!(output.status.success(), "{output:?}");
    let stats: serde_json::Value =
        serde_json::from_str(String::from_utf8(output.stdout).unwrap().trim()).unwrap();
    assert_eq!(stats["patches_total"], 1);
}

#[test]
fn batch_mode_processes_directory() {
    let dir = tempfile::tempdir().unwrap();
    let maps_dir = dir.path().join("maps");
    std::fs::create_dir_all(&maps_dir).unwrap();
    // Two maps with per-map sidecars following the <stem>.* convention; one
    // shared gazetteer.
    let mut shared_gaz = String::new();
    for (stem, seed) in [("alpha", 21u64), ("beta", 22u64)] {
        let scratch = tempfile::tempdir().unwrap();
        let out = fixture(scratch.path(), seed, 3);
        std::fs::copy(&out.raster_path, maps_dir.join(format!("{stem}.png"))).unwrap();
        std::fs::copy(&out.gcps_path, maps_dir.join(format!("{stem}.gcps.json"))).unwrap();
        std::fs::copy(
            &out.truth_path,
            maps_dir.join(format!("{stem}.truth.jsonl")),
        )
        .unwrap();
        shared_gaz.push_str(&std::fs::read_to_string(&out.gazetteer_path).unwrap());
    }
    // Entity ids collide between the two generated gazetteers; rewrite them
    // uniquely per line.
    let gaz_path = dir.path().join("gazetteer.jsonl");
    let unique: String = shared_gaz
        .lines()
        .enumerate()
        .map(|(i, line)| line.replace("synth/", &format!("synth/{i}-")) + "\n")
        .collect();
    std::fs::write(&gaz_path, unique).unwrap();

    let out_dir = dir.path().join("results");
    let output = run_cmd(&[
        "run",
        "--batch",
        path_str(&maps_dir),
        "--gazetteer",
        path_str(&gaz_path),
        "--spotter",
        "oracle",
        "--output",
        path_str(&out_dir),
    ]);
    assert!(output.status.success(), "{output:?}");
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert_eq!(
        stdout.lines().count(),
        2,
        "one stats line per map: {stdout}"
    );
    assert!(out_dir.join("alpha.geojson").is_file());
    assert!(out_dir.join("beta.geojson").is_file());
}

#[test]
fn serve_types_answers_http() {
    let mut child = Command::new(bin())
        .args(["serve-types", "--port", "0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .expect("spawn server");
    let stdout = child.stdout.take().unwrap();
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line).unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .expect("bind line")
        .to_string();

    let get = |target: &str| -> String {
        let mut stream = std::net::TcpStream::connect(&addr).unwrap();
        write!(stream, "GET {target} HTTP/1.1\r\nHost: x\r\n\r\n").unwrap();
        let mut response = String::new();
        stream.read_to_string(&mut response).unwrap();
        response
    };
    let health = get("/healthz");
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    let recs = get("/recommend?q=hote&k=2");
    assert!(recs.contains("\"label\":\"Hotel\""), "{recs}");
    let missing = get("/recommend");
    assert!(missing.starts_with("HTTP/1.1 400"), "{missing}");

    child.kill().unwrap();
    let _ = child.wait();
}

#[test]
fn dump_intermediate_flag_writes_debug_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = fixture(dir.path(), 9, 2);
    let debug_dir = dir.path().join("debug");
    let output = run_cmd(&[
        "run",
        "--input",
        path_str(&out.raster_path),
        "--gcps",
        path_str(&out.gcps_path),
        "--gazetteer",
        path_str(&out.gazetteer_path),
        "--truth",
        path_str(&out.truth_path),
        "--output",
        path_str(&dir.path().join("out.geojson")),
        "--dump-intermediate",
        path_str(&debug_dir),
    ]);
    assert!(output.status.success(), "{output:?}");
    assert!(debug_dir.join("detections_map_px.jsonl").is_file());
    assert!(debug_dir.join("detections_deduped.jsonl").is_file());
}

#[test]
fn unknown_spotter_name_exits_two() {
    let output = run_cmd(&["run", "--spotter", "neural"]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("unknown spotter backend"), "{stderr}");
}
