//! Wire protocol for external (out-of-process) spotter backends.
//!
//! The backend is any executable that reads newline-delimited JSON requests
//! on stdin and writes one JSON response line per request on stdout, in
//! order:
//!
//! ```text
//! request:  {"patch_id": "...", "image_path": "/tmp/....png", "width": 1000, "height": 1000}
//! response: {"patch_id": "...", "detections": [{"polygon": [[x, y], ...16], "text": "...", "score": 0.9}]}
//! ```
//!
//! The patch is handed over as a temporary PNG file path rather than inline
//! bytes, so a backend can be debugged by hand. A non-conforming reply,
//! crash, or timeout is a stage error carrying the patch id; the
//! orchestrator decides whether to skip the patch or abort the run.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::raster::{save_png, PatchWindow, RasterImage};
use crate::spotter::{Spotter, TextDetection, POLYGON_VERTICES};

/// One request line sent to the child process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpotRequest {
    pub patch_id: String,
    pub image_path: String,
    pub width: u32,
    pub height: u32,
}

/// One response line expected from the child process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpotResponse {
    pub patch_id: String,
    pub detections: Vec<WireDetection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireDetection {
    pub polygon: Vec<(f64, f64)>,
    pub text: String,
    pub score: f64,
}

pub struct ExternalSpotter {
    child: Child,
    stdin: ChildStdin,
    lines: mpsc::Receiver<std::io::Result<String>>,
    timeout: Duration,
    margin_px: f64,
    workdir: tempfile::TempDir,
    counter: u64,
    command_name: String,
}

impl ExternalSpotter {
    /// Spawns the backend process. `command` is the argv vector; the first
    /// element is the executable.
    pub fn spawn(command: &[String], timeout: Duration, margin_px: f64) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Config("external spotter command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Config(format!("cannot start spotter {program:?}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let workdir = tempfile::Builder::new()
            .prefix("mapkurator-spot-")
            .tempdir()
            .map_err(|e| Error::Config(format!("cannot create spotter temp dir: {e}")))?;
        Ok(ExternalSpotter {
            child,
            stdin,
            lines: rx,
            timeout,
            margin_px,
            workdir,
            counter: 0,
            command_name: program.clone(),
        })
    }

    fn backend_error(&self, patch_id: &str, message: impl Into<String>) -> Error {
        Error::SpotterBackend {
            patch_id: patch_id.to_string(),
            message: format!("{} ({})", message.into(), self.command_name),
        }
    }

    fn validate(
        &self,
        reply: SpotResponse,
        patch_id: &str,
        window: &PatchWindow,
    ) -> Result<Vec<TextDetection>> {
        if reply.patch_id != patch_id {
            return Err(self.backend_error(
                patch_id,
                format!(
                    "reply for patch {:?} does not match request",
                    reply.patch_id
                ),
            ));
        }
        let (w, h) = (window.width_px as f64, window.height_px as f64);
        let m = self.margin_px;
        let mut out = Vec::with_capacity(reply.detections.len());
        for (seq, det) in reply.detections.into_iter().enumerate() {
            if det.polygon.len() != POLYGON_VERTICES {
                return Err(self.backend_error(
                    patch_id,
                    format!(
                        "detection {seq} has {} polygon vertices, expected {POLYGON_VERTICES}",
                        det.polygon.len()
                    ),
                ));
            }
            let ring: Vec<Point> = det.polygon.iter().map(|&(x, y)| Point::new(x, y)).collect();
            for p in &ring {
                if !p.x.is_finite()
                    || !p.y.is_finite()
                    || p.x < -m
                    || p.x > w + m
                    || p.y < -m
                    || p.y > h + m
                {
                    return Err(self.backend_error(
                        patch_id,
                        format!(
                            "detection {seq} vertex ({}, {}) outside patch bounds ±{m}px",
                            p.x, p.y
                        ),
                    ));
                }
            }
            out.push(
                TextDetection::new(
                    ring,
                    det.text,
                    det.score,
                    window.row_index,
                    window.col_index,
                    seq as u32,
                )
                .map_err(|e| self.backend_error(patch_id, format!("detection {seq}: {e}")))?,
            );
        }
        Ok(out)
    }
}

impl Spotter for ExternalSpotter {
    fn spot_patch(
        &mut self,
        patch: &RasterImage,
        window: &PatchWindow,
    ) -> Result<Vec<TextDetection>> {
        let patch_id = patch.id.clone();
        self.counter += 1;
        let image_path = self
            .workdir
            .path()
            .join(format!("patch-{:06}.png", self.counter));
        save_png(patch, &image_path)
            .map_err(|e| self.backend_error(&patch_id, format!("cannot write patch image: {e}")))?;

        let request = SpotRequest {
            patch_id: patch_id.clone(),
            image_path: image_path.to_string_lossy().into_owned(),
            width: patch.width_px,
            height: patch.height_px,
        };
        let line = serde_json::to_string(&request)
            .map_err(|e| self.backend_error(&patch_id, format!("cannot encode request: {e}")))?;
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| self.backend_error(&patch_id, format!("cannot write to backend: {e}")))?;

        let reply_line = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(self.backend_error(&patch_id, format!("read failed: {e}"))),
            Err(mpsc::RecvTimeoutError::Timeout) => {
                return Err(self.backend_error(
                    &patch_id,
                    format!("no reply within {}s", self.timeout.as_secs()),
                ))
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                return Err(self.backend_error(&patch_id, "backend closed stdout"))
            }
        };
        let _ = std::fs::remove_file(&image_path);

        let reply: SpotResponse = serde_json::from_str(&reply_line)
            .map_err(|e| self.backend_error(&patch_id, format!("malformed reply: {e}")))?;
        self.validate(reply, &patch_id, window)
    }
}

impl Drop for ExternalSpotter {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Serves the wire protocol over the given reader/writer by delegating each
/// request to `spotter`. This is the building block for wrapping an
/// in-process backend as an external one (used by `mapkurator spotter-stdio`).
pub fn serve_protocol<R: BufRead, W: Write>(
    spotter: &mut dyn Spotter,
    window_for: impl Fn(&SpotRequest) -> Result<PatchWindow>,
    input: R,
    mut output: W,
) -> Result<()> {
    for line in input.lines() {
        let line = line.map_err(|e| Error::Input(format!("protocol read: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let request: SpotRequest = serde_json::from_str(&line)
            .map_err(|e| Error::Input(format!("malformed protocol request: {e}")))?;
        let window = window_for(&request)?;
        let patch = crate::raster::load_raster(std::path::Path::new(&request.image_path))?;
        let detections = spotter.spot_patch(&patch, &window)?;
        let response = SpotResponse {
            patch_id: request.patch_id,
            detections: detections
                .into_iter()
                .map(|d| WireDetection {
                    polygon: d.polygon_px.iter().map(|p| (p.x, p.y)).collect(),
                    text: d.text,
                    score: d.score,
                })
                .collect(),
        };
        let line = serde_json::to_string(&response)
            .map_err(|e| Error::Serialization(format!("protocol reply: {e}")))?;
        writeln!(output, "{line}").map_err(|e| Error::Input(format!("protocol write: {e}")))?;
        output
            .flush()
            .map_err(|e| Error::Input(format!("protocol flush: {e}")))?;
    }
    Ok(())
}

/// Parses a crop id of the form `<map>_r<row>_c<col>` back into grid
/// indices. External helpers use this to reconstruct the window a patch was
/// cut from.
pub fn parse_patch_id(patch_id: &str) -> Option<(u32, u32)> {
    let (_, tail) = patch_id.rsplit_once("_r")?;
    let (row, col) = tail.split_once("_c")?;
    Some((row.parse().ok()?, col.parse().ok()?))
}
