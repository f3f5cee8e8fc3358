//! Text spotting over raster patches, as a pluggable backend contract.
//!
//! A backend receives one patch and returns text detections: a 16-vertex
//! polygon in patch coordinates, the recognized string, and a confidence
//! score. Two deterministic backends ship with the pipeline — `oracle`
//! (echoes a ground-truth sidecar) and `noise` (oracle plus seeded character
//! substitutions and vertex jitter) — plus `external`, which drives any
//! machine-learning spotter over a newline-delimited JSON protocol (see
//! [`external`]).

pub mod external;

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{centroid, perimeter, signed_area, Point};
use crate::raster::{PatchWindow, RasterImage};
use crate::rng::{mix_seed, DetRng};

/// Number of boundary points every detection polygon carries.
pub const POLYGON_VERTICES: usize = 16;

/// Substitution alphabet used by the noise backend.
const NOISE_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

/// One recognized text instance on a patch, in patch pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TextDetection {
    /// Exactly 16 vertices forming an implicitly closed ring.
    pub polygon_px: Vec<Point>,
    pub text: String,
    /// Confidence in [0, 1].
    pub score: f64,
    pub patch_row: u32,
    pub patch_col: u32,
    pub seq_in_patch: u32,
}

impl TextDetection {
    pub fn new(
        polygon_px: Vec<Point>,
        text: impl Into<String>,
        score: f64,
        patch_row: u32,
        patch_col: u32,
        seq_in_patch: u32,
    ) -> Result<Self> {
        let text = text.into();
        if polygon_px.len() != POLYGON_VERTICES {
            return Err(Error::Input(format!(
                "detection polygon must have {POLYGON_VERTICES} vertices, got {}",
                polygon_px.len()
            )));
        }
        if text.trim().is_empty() {
            return Err(Error::Input("detection text is empty".into()));
        }
        if !(0.0..=1.0).contains(&score) || !score.is_finite() {
            return Err(Error::Input(format!(
                "detection score {score} outside [0, 1]"
            )));
        }
        Ok(TextDetection {
            polygon_px,
            text,
            score,
            patch_row,
            patch_col,
            seq_in_patch,
        })
    }

    /// Unsigned ring area; zero-area detections are dropped before merging.
    pub fn area(&self) -> f64 {
        signed_area(&self.polygon_px).abs()
    }
}

/// Ground-truth label in full-map pixel coordinates, read from a truth
/// sidecar file (one JSON record per line).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub text: String,
    pub polygon_map_px: Vec<Point>,
}

/// Reads a newline-delimited JSON truth sidecar:
/// `{"text": "...", "polygon": [[x, y], ...]}` per line, map-pixel frame.
pub fn load_truth(path: &Path) -> Result<Vec<GroundTruthLabel>> {
    #[derive(Deserialize)]
    struct Record {
        text: String,
        polygon: Vec<Point>,
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| {
            Error::Input(format!(
                "{}:{}: bad truth record: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        if rec.polygon.len() < 3 {
            return Err(Error::Input(format!(
                "{}:{}: truth polygon needs at least 3 vertices",
                path.display(),
                lineno + 1
            )));
        }
        labels.push(GroundTruthLabel {
            text: rec.text,
            polygon_map_px: rec.polygon,
        });
    }
    Ok(labels)
}

/// Resamples a ring of at least 3 vertices to exactly `target_count` points
/// spaced at equal arc length along the ring, starting from the first input
/// vertex. Orientation is preserved; every output point lies on the input
/// ring boundary.
pub fn resample_polygon(vertices: &[Point], target_count: usize) -> Result<Vec<Point>> {
    if vertices.len() < 3 {
        return Err(Error::Input(format!(
            "ring needs at least 3 vertices, got {}",
            vertices.len()
        )));
    }
    if target_count == 0 {
        return Err(Error::Input("target vertex count must be positive".into()));
    }
    let total = perimeter(vertices);
    if total <= 0.0 {
        return Err(Error::DegenerateGeometry(
            "cannot resample a zero-perimeter ring".into(),
        ));
    }
    let step = total / target_count as f64;
    let mut out = Vec::with_capacity(target_count);
    let mut seg = 0usize; // current edge index
    let mut seg_start = 0.0; // arc length at the start of the current edge
    let mut seg_len = vertices[0].distance(vertices[1 % vertices.len()]);
    for k in 0..target_count {
        let target = step * k as f64;
        while target > seg_start + seg_len && seg + 1 < vertices.len() {
            seg_start += seg_len;
            seg += 1;
            seg_len = vertices[seg].distance(vertices[(seg + 1) % vertices.len()]);
        }
        let a = vertices[seg];
        let b = vertices[(seg + 1) % vertices.len()];
        let t = if seg_len > 0.0 {
            ((target - seg_start) / seg_len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
    }
    Ok(out)
}

/// Whether a truth label belongs to a window: its polygon centroid must lie
/// inside the window under the closed-left/top, open-right/bottom rule.
fn centroid_in_window(label: &GroundTruthLabel, window: &PatchWindow) -> bool {
    let c = centroid(&label.polygon_map_px);
    let x0 = window.origin_x_px as f64;
    let y0 = window.origin_y_px as f64;
    c.x >= x0
        && c.x < x0 + window.width_px as f64
        && c.y >= y0
        && c.y < y0 + window.height_px as f64
}

/// Deterministic truth-to-window assignment: a label is emitted for a window
/// iff its centroid falls inside it, translated into the patch frame and
/// resampled to 16 vertices with score 1.0. Output is sorted by polygon
/// centroid (y, then x).
pub fn oracle_assign(
    truth: &[GroundTruthLabel],
    window: &PatchWindow,
) -> Result<Vec<TextDetection>> {
    let mut picked: Vec<(Point, Vec<Point>, &GroundTruthLabel)> = Vec::new();
    for label in truth.iter().filter(|l| centroid_in_window(l, window)) {
        let shifted: Vec<Point> = label
            .polygon_map_px
            .iter()
            .map(|p| {
                Point::new(
                    p.x - window.origin_x_px as f64,
                    p.y - window.origin_y_px as f64,
                )
            })
            .collect();
        let ring = resample_polygon(&shifted, POLYGON_VERTICES)?;
        picked.push((centroid(&ring), ring, label));
    }
    sort_by_centroid(&mut picked);
    picked
        .into_iter()
        .enumerate()
        .map(|(seq, (_, ring, label))| {
            TextDetection::new(
                ring,
                label.text.clone(),
                1.0,
                window.row_index,
                window.col_index,
                seq as u32,
            )
        })
        .collect()
}

fn sort_by_centroid<T>(items: &mut [(Point, Vec<Point>, T)]) {
    items.sort_by(|(a, _, _), (b, _, _)| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)));
}

/// A text-spotting backend. Implementations must be deterministic per
/// (configuration, patch) so pipeline output does not depend on worker
/// count; each worker owns its own instance.
pub trait Spotter: Send {
    fn spot_patch(
        &mut self,
        patch: &RasterImage,
        window: &PatchWindow,
    ) -> Result<Vec<TextDetection>>;
}

/// Backend selection plus everything needed to build per-worker instances.
#[derive(Debug, Clone)]
pub enum SpotterConfig {
    Oracle {
        truth: Arc<Vec<GroundTruthLabel>>,
    },
    Noise {
        truth: Arc<Vec<GroundTruthLabel>>,
        /// Per-character substitution probability.
        p_sub: f64,
        /// Vertex jitter bound in pixels (uniform in ±jitter_px).
        jitter_px: f64,
        /// Cap on realized substitutions per label.
        max_edits: usize,
        seed: u64,
    },
    External {
        command: Vec<String>,
        timeout: Duration,
        /// Polygon vertices may overshoot the patch by at most this margin.
        margin_px: f64,
    },
}

impl SpotterConfig {
    /// Builds a fresh backend instance for one worker.
    pub fn build(&self) -> Result<Box<dyn Spotter>> {
        match self {
            SpotterConfig::Oracle { truth } => Ok(Box::new(OracleSpotter {
                truth: Arc::clone(truth),
            })),
            SpotterConfig::Noise {
                truth,
                p_sub,
                jitter_px,
                max_edits,
                seed,
            } => {
                if !(0.0..=1.0).contains(p_sub) {
                    return Err(Error::Config(format!(
                        "substitution rate {p_sub} outside [0, 1]"
                    )));
                }
                Ok(Box::new(NoiseSpotter {
                    truth: Arc::clone(truth),
                    p_sub: *p_sub,
                    jitter_px: *jitter_px,
                    max_edits: *max_edits,
                    seed: *seed,
                }))
            }
            SpotterConfig::External {
                command,
                timeout,
                margin_px,
            } => Ok(Box::new(external::ExternalSpotter::spawn(
                command, *timeout, *margin_px,
            )?)),
        }
    }
}

/// Echoes the truth sidecar: exact text, exact polygon, score 1.0.
struct OracleSpotter {
    truth: Arc<Vec<GroundTruthLabel>>,
}

impl Spotter for OracleSpotter {
    fn spot_patch(
        &mut self,
        _patch: &RasterImage,
        window: &PatchWindow,
    ) -> Result<Vec<TextDetection>> {
        oracle_assign(&self.truth, window)
    }
}

/// Oracle plus seeded degradation: character substitutions over A–Z/0–9 and
/// uniform vertex jitter. A pure function of (seed, window, truth), so runs
/// are reproducible regardless of worker count.
struct NoiseSpotter {
    truth: Arc<Vec<GroundTruthLabel>>,
    p_sub: f64,
    jitter_px: f64,
    max_edits: usize,
    seed: u64,
}

impl NoiseSpotter {
    fn perturb_text(&self, text: &str, rng: &mut DetRng) -> String {
        let mut out: Vec<char> = Vec::with_capacity(text.len());
        let mut edits = 0usize;
        for ch in text.chars() {
            let substitute = edits < self.max_edits && rng.next_f64() < self.p_sub;
            if substitute {
                let replacement = loop {
                    let cand = NOISE_ALPHABET[rng.range_usize(NOISE_ALPHABET.len())] as char;
                    if cand != ch {
                        break cand;
                    }
                };
                out.push(replacement);
                edits += 1;
            } else {
                out.push(ch);
            }
        }
        out.into_iter().collect()
    }
}

impl Spotter for NoiseSpotter {
    fn spot_patch(
        &mut self,
        _patch: &RasterImage,
        window: &PatchWindow,
    ) -> Result<Vec<TextDetection>> {
        let clean = oracle_assign(&self.truth, window)?;
        let mut rng = DetRng::new(mix_seed(&[
            self.seed,
            window.row_index as u64,
            window.col_index as u64,
        ]));
        let mut noisy: Vec<(Point, Vec<Point>, String)> = clean
            .into_iter()
            .map(|det| {
                let text = self.perturb_text(&det.text, &mut rng);
                let ring: Vec<Point> = det
                    .polygon_px
                    .iter()
                    .map(|p| {
                        Point::new(
                            p.x + rng.jitter(self.jitter_px),
                            p.y + rng.jitter(self.jitter_px),
                        )
                    })
                    .collect();
                (centroid(&ring), ring, text)
            })
            .collect();
        sort_by_centroid(&mut noisy);
        noisy
            .into_iter()
            .enumerate()
            .map(|(seq, (_, ring, text))| {
                TextDetection::new(
                    ring,
                    text,
                    1.0,
                    window.row_index,
                    window.col_index,
                    seq as u32,
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Point> {
        vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ]
    }

    fn window(row: u32, col: u32, ox: u32, oy: u32, w: u32, h: u32) -> PatchWindow {
        PatchWindow {
            row_index: row,
            col_index: col,
            origin_x_px: ox,
            origin_y_px: oy,
            width_px: w,
            height_px: h,
        }
    }

    fn blank_patch(w: u32, h: u32) -> RasterImage {
        RasterImage::filled("p", w, h, [255, 255, 255]).unwrap()
    }

    #[test]
    fn resample_unit_square_to_16() {
        // Arc-length walk computed by hand: perimeter 4, spacing 0.25,
        // four points per side, corners hit exactly.
        let ring = resample_polygon(&rect(0.0, 0.0, 1.0, 1.0), 16).unwrap();
        assert_eq!(ring.len(), 16);
        assert_eq!(ring[0], Point::new(0.0, 0.0));
        assert_eq!(ring[1], Point::new(0.25, 0.0));
        assert_eq!(ring[4], Point::new(1.0, 0.0));
        assert_eq!(ring[8], Point::new(1.0, 1.0));
        assert!((perimeter(&ring) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn resample_fixed_point() {
        let ring = resample_polygon(&rect(0.0, 0.0, 1.0, 1.0), 16).unwrap();
        let again = resample_polygon(&ring, 16).unwrap();
        for (a, b) in ring.iter().zip(&again) {
            assert!(a.distance(*b) < 1e-12);
        }
    }

    #[test]
    fn resample_perimeter_converges() {
        // Irregular pentagon; chord perimeters approach the original from
        // below as the sample count grows.
        let ring = vec![
            Point::new(0.0, 0.0),
            Point::new(4.0, 1.0),
            Point::new(5.0, 4.0),
            Point::new(2.0, 6.0),
            Point::new(-1.0, 3.0),
        ];
        let original = perimeter(&ring);
        let p16 = perimeter(&resample_polygon(&ring, 16).unwrap());
        let p64 = perimeter(&resample_polygon(&ring, 64).unwrap());
        let p256 = perimeter(&resample_polygon(&ring, 256).unwrap());
        assert!(p16 <= original + 1e-9);
        assert!(p64 <= original + 1e-9);
        assert!(p256 <= original + 1e-9);
        assert!((original - p64) <= (original - p16) + 1e-9);
        assert!((original - p256) <= (original - p64) + 1e-9);
        // Corner-cutting shortfall shrinks linearly with the sample count.
        assert!(
            (original - p256) / original < 0.01,
            "p256 {p256} vs {original}"
        );
        assert!((original - p256) < (original - p16) / 4.0);
    }

    #[test]
    fn resample_rejects_degenerate() {
        let flat = vec![
            Point::new(1.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 1.0),
        ];
        assert!(matches!(
            resample_polygon(&flat, 16),
            Err(Error::DegenerateGeometry(_))
        ));
        assert!(resample_polygon(&[Point::new(0.0, 0.0)], 16).is_err());
    }

    #[test]
    fn oracle_echoes_centered_label() {
        let truth = vec![GroundTruthLabel {
            text: "BROOK".into(),
            polygon_map_px: rect(450.0, 480.0, 550.0, 520.0),
        }];
        let win = window(0, 0, 0, 0, 1000, 1000);
        let dets = oracle_assign(&truth, &win).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].text, "BROOK");
        assert_eq!(dets[0].score, 1.0);
        assert_eq!(dets[0].polygon_px.len(), 16);
        // Translated truth: every resampled vertex on the original outline.
        for v in &dets[0].polygon_px {
            let d = crate::geometry::point_ring_distance(*v, &rect(450.0, 480.0, 550.0, 520.0));
            assert!(d < 1e-9);
        }
    }

    #[test]
    fn oracle_blank_patch_empty() {
        let win = window(0, 0, 0, 0, 100, 100);
        assert!(oracle_assign(&[], &win).unwrap().is_empty());
    }

    #[test]
    fn centroid_on_left_top_edge_is_inside() {
        // Centroid exactly at x = 1000 belongs to the window starting there,
        // not to the one ending there.
        let truth = vec![GroundTruthLabel {
            text: "EDGE".into(),
            polygon_map_px: rect(950.0, 100.0, 1050.0, 200.0),
        }];
        let left = window(0, 0, 0, 0, 1000, 1000);
        let right = window(0, 1, 1000, 0, 1000, 1000);
        assert!(oracle_assign(&truth, &left).unwrap().is_empty());
        assert_eq!(oracle_assign(&truth, &right).unwrap().len(), 1);
    }

    #[test]
    fn straddling_label_emitted_once_with_outside_vertices() {
        let truth = vec![GroundTruthLabel {
            text: "WIDE".into(),
            polygon_map_px: rect(900.0, 10.0, 1080.0, 60.0), // centroid x = 990
        }];
        let a = window(0, 0, 0, 0, 1000, 1000);
        let b = window(0, 1, 1000, 0, 1000, 1000);
        let in_a = oracle_assign(&truth, &a).unwrap();
        assert_eq!(in_a.len(), 1);
        assert!(oracle_assign(&truth, &b).unwrap().is_empty());
        assert!(in_a[0].polygon_px.iter().any(|p| p.x > 1000.0));
    }

    #[test]
    fn oracle_uniqueness_at_full_stride() {
        // 50 pseudo-random labels, stride = patch size: each label emitted
        // exactly once across all windows (checked against a brute-force
        // centroid count).
        let mut rng = DetRng::new(99);
        let mut truth = Vec::new();
        for i in 0..50 {
            let x = rng.next_f64() * 2900.0;
            let y = rng.next_f64() * 1900.0;
            truth.push(GroundTruthLabel {
                text: format!("L{i}"),
                polygon_map_px: rect(x, y, x + 80.0, y + 30.0),
            });
        }
        let windows = crate::raster::plan_tiles(3000, 2000, 1000, 1000).unwrap();
        let mut counts = vec![0usize; truth.len()];
        for w in &windows {
            for det in oracle_assign(&truth, w).unwrap() {
                let idx = truth.iter().position(|t| t.text == det.text).unwrap();
                counts[idx] += 1;
            }
        }
        // Independent oracle: count centroid membership directly.
        for (i, label) in truth.iter().enumerate() {
            let expected = windows
                .iter()
                .filter(|w| centroid_in_window(label, w))
                .count();
            assert_eq!(expected, 1, "label {i} centroid in {expected} windows");
            assert_eq!(counts[i], 1, "label {i} emitted {} times", counts[i]);
        }
    }

    #[test]
    fn noise_full_substitution_differs_everywhere() {
        let truth = Arc::new(vec![GroundTruthLabel {
            text: "BROOK".into(),
            polygon_map_px: rect(10.0, 10.0, 110.0, 50.0),
        }]);
        let cfg = SpotterConfig::Noise {
            truth,
            p_sub: 1.0,
            jitter_px: 1.0,
            max_edits: usize::MAX,
            seed: 5,
        };
        let mut spotter = cfg.build().unwrap();
        let win = window(0, 0, 0, 0, 200, 200);
        let dets = spotter.spot_patch(&blank_patch(200, 200), &win).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].text.len(), 5);
        for (a, b) in dets[0].text.chars().zip("BROOK".chars()) {
            assert_ne!(a, b, "substitution must change the character");
        }
        // Jittered vertices stay within the per-axis bound of the truth
        // outline (each axis moves by at most jitter_px).
        for v in &dets[0].polygon_px {
            let d = crate::geometry::point_ring_distance(*v, &rect(10.0, 10.0, 110.0, 50.0));
            assert!(d <= 2.0f64.sqrt() + 1e-9, "vertex {v:?} drifted {d} px");
        }
    }

    #[test]
    fn noise_is_deterministic_per_seed_and_window() {
        let truth = Arc::new(vec![
            GroundTruthLabel {
                text: "HARBOR".into(),
                polygon_map_px: rect(20.0, 20.0, 140.0, 60.0),
            },
            GroundTruthLabel {
                text: "QUARRY".into(),
                polygon_map_px: rect(30.0, 100.0, 150.0, 140.0),
            },
        ]);
        let cfg = SpotterConfig::Noise {
            truth,
            p_sub: 0.4,
            jitter_px: 1.0,
            max_edits: 2,
            seed: 7,
        };
        let win = window(0, 0, 0, 0, 200, 200);
        let patch = blank_patch(200, 200);
        let a = cfg.build().unwrap().spot_patch(&patch, &win).unwrap();
        let b = cfg.build().unwrap().spot_patch(&patch, &win).unwrap();
        assert_eq!(a, b);
        // Re-running the perturbation with the same seed is itself the
        // oracle for the expected strings.
        for det in &a {
            assert!(det.text.chars().count() >= 6);
        }
    }

    #[test]
    fn noise_caps_realized_edits() {
        let truth = Arc::new(vec![GroundTruthLabel {
            text: "ABCDEFGHIJKLMNOP".into(),
            polygon_map_px: rect(10.0, 10.0, 200.0, 40.0),
        }]);
        let cfg = SpotterConfig::Noise {
            truth,
            p_sub: 1.0,
            jitter_px: 0.0,
            max_edits: 2,
            seed: 3,
        };
        let win = window(0, 0, 0, 0, 300, 300);
        let dets = cfg
            .build()
            .unwrap()
            .spot_patch(&blank_patch(300, 300), &win)
            .unwrap();
        let diffs = dets[0]
            .text
            .chars()
            .zip("ABCDEFGHIJKLMNOP".chars())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(diffs, 2);
    }

    #[test]
    fn detection_invariants_enforced() {
        let ring16 = resample_polygon(&rect(0.0, 0.0, 10.0, 10.0), 16).unwrap();
        assert!(TextDetection::new(ring16.clone(), "A", 1.5, 0, 0, 0).is_err());
        assert!(TextDetection::new(ring16.clone(), "   ", 0.5, 0, 0, 0).is_err());
        assert!(TextDetection::new(ring16[..15].to_vec(), "A", 0.5, 0, 0, 0).is_err());
        assert!(TextDetection::new(ring16, "A", 0.5, 0, 0, 0).is_ok());
    }
}
