//! Deterministic synthetic map fixtures.
//!
//! Generates a map raster with known text placements plus the three sidecar
//! files the pipeline consumes — a truth sidecar, exact corner GCPs, and a
//! gazetteer with one entity per label — so every downstream stage can be
//! verified end to end against exact expectations. Labels are rendered from
//! the built-in bitmap font ([`font`]), scaled and rotated; placement
//! decisions use integers (and fixed-precision trig) only, so a fixed seed
//! reproduces byte-identical files on any platform.

pub mod font;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::georef::{AffineTransform, GcpFile, GroundControlPoint};
use crate::postocr::levenshtein;
use crate::raster::{save_png, RasterImage};
use crate::rng::{mix_seed, DetRng};
use crate::spotter::GroundTruthLabel;

use font::{GLYPH_ADVANCE, GLYPH_HEIGHT, GLYPH_WIDTH};

/// Edit-distance floor between any two labels under `separated_vocab`; noise
/// within half this distance is always uniquely correctable.
pub const SEPARATED_VOCAB_MIN_DISTANCE: usize = 5;

const PLACEMENT_RETRIES: usize = 1000;
const BORDER_PX: i64 = 2;
const LABEL_GAP_PX: i64 = 2;
const PAPER_RGB: [u8; 3] = [236, 229, 207];
const INK_RGB: [u8; 3] = [28, 24, 20];
const GRID_RGB: [u8; 3] = [205, 196, 170];
const GRID_SPACING_PX: u32 = 250;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Background {
    Plain,
    Grid,
}

/// Everything that determines a synthetic map. All four output files are a
/// pure function of this value.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub seed: u64,
    pub width_px: u32,
    pub height_px: u32,
    pub n_labels: u32,
    /// Inclusive label length range, in characters.
    pub label_len: (u32, u32),
    /// Inclusive rotation range in whole degrees.
    pub rotation_deg: (i32, i32),
    /// Inclusive glyph scale range (pixels per glyph cell).
    pub glyph_scale: (u32, u32),
    pub background: Background,
    /// The generating pixel->geo transform; GCPs and gazetteer geometries
    /// are exact under it.
    pub transform: AffineTransform,
    /// Enforce pairwise label edit distance >= 5.
    pub separated_vocab: bool,
}

impl SynthSpec {
    pub fn new(seed: u64, width_px: u32, height_px: u32, n_labels: u32) -> Self {
        SynthSpec {
            seed,
            width_px,
            height_px,
            n_labels,
            label_len: (6, 10),
            rotation_deg: (-30, 30),
            glyph_scale: (2, 4),
            background: Background::Plain,
            transform: SynthSpec::default_transform(),
            separated_vocab: false,
        }
    }

    /// A map-plausible default frame: ~0.1 deg per 1000 px with the usual
    /// y-down / lat-up flip.
    pub fn default_transform() -> AffineTransform {
        AffineTransform {
            a: -122.5,
            b: 1.0e-4,
            c: 0.0,
            d: 47.6,
            e: 0.0,
            f: -1.0e-4,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::Input("raster dimensions must be positive".into()));
        }
        if self.label_len.0 == 0 || self.label_len.0 > self.label_len.1 {
            return Err(Error::Input(format!(
                "label length range {:?} is empty",
                self.label_len
            )));
        }
        if self.rotation_deg.0 > self.rotation_deg.1 {
            return Err(Error::Input(format!(
                "rotation range {:?} is empty",
                self.rotation_deg
            )));
        }
        if self.glyph_scale.0 == 0 || self.glyph_scale.0 > self.glyph_scale.1 {
            return Err(Error::Input(format!(
                "glyph scale range {:?} is empty",
                self.glyph_scale
            )));
        }
        if self.transform.determinant() == 0.0 {
            return Err(Error::Input("generating transform is singular".into()));
        }
        Ok(())
    }
}

/// Paths of the four generated files plus the in-memory truth.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub raster_path: PathBuf,
    pub truth_path: PathBuf,
    pub gcps_path: PathBuf,
    pub gazetteer_path: PathBuf,
    pub labels: Vec<GroundTruthLabel>,
    pub entity_ids: Vec<String>,
}

/// Fixed-precision sin/cos for whole degrees: quantized to 1/4096 so the
/// value survives any libm's final-ulp differences.
fn quantized_trig(angle_deg: i64) -> (f64, f64) {
    let rad = (angle_deg as f64).to_radians();
    const Q: f64 = 4096.0;
    ((rad.sin() * Q).round() / Q, (rad.cos() * Q).round() / Q)
}

#[derive(Debug, Clone)]
struct Placement {
    text: String,
    center_x: i64,
    center_y: i64,
    scale: u32,
    sin: f64,
    cos: f64,
    /// Label box size in pixels (ink extent).
    w: f64,
    h: f64,
    /// Integer AABB of the rotated box, used for overlap checks.
    aabb: (i64, i64, i64, i64),
}

impl Placement {
    /// Rotated rectangle corners in map pixels.
    fn corners(&self) -> Vec<Point> {
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)]
            .iter()
            .map(|&(lx, ly)| {
                Point::new(
                    self.center_x as f64 + self.cos * lx - self.sin * ly,
                    self.center_y as f64 + self.sin * lx + self.cos * ly,
                )
            })
            .collect()
    }
}

fn aabb_of(corners: &[Point]) -> (i64, i64, i64, i64) {
    let b = crate::geometry::Bbox::of(corners);
    (
        b.min_x.floor() as i64,
        b.min_y.floor() as i64,
        b.max_x.ceil() as i64,
        b.max_y.ceil() as i64,
    )
}

fn aabbs_overlap(a: (i64, i64, i64, i64), b: (i64, i64, i64, i64), gap: i64) -> bool {
    a.0 - gap <= b.2 && b.0 - gap <= a.2 && a.1 - gap <= b.3 && b.1 - gap <= a.3
}

fn random_text(rng: &mut DetRng, len_range: (u32, u32)) -> String {
    let len = rng.range_i64(len_range.0 as i64, len_range.1 as i64) as usize;
    (0..len)
        .map(|_| (b'A' + rng.range_usize(26) as u8) as char)
        .collect()
}

fn pick_texts(spec: &SynthSpec, rng: &mut DetRng) -> Result<Vec<String>> {
    let mut texts: Vec<String> = Vec::with_capacity(spec.n_labels as usize);
    for i in 0..spec.n_labels {
        let mut attempts = 0;
        let text = loop {
            attempts += 1;
            if attempts > PLACEMENT_RETRIES {
                return Err(Error::Capacity(format!(
                    "could not draw label {i} with pairwise edit distance >= {SEPARATED_VOCAB_MIN_DISTANCE}"
                )));
            }
            let cand = random_text(rng, spec.label_len);
            let ok = !texts.contains(&cand)
                && (!spec.separated_vocab
                    || texts
                        .iter()
                        .all(|t| levenshtein(t, &cand) >= SEPARATED_VOCAB_MIN_DISTANCE));
            if ok {
                break cand;
            }
        };
        texts.push(text);
    }
    Ok(texts)
}

fn place_labels(spec: &SynthSpec, texts: &[String], rng: &mut DetRng) -> Result<Vec<Placement>> {
    let mut placements: Vec<Placement> = Vec::with_capacity(texts.len());
    for (i, text) in texts.iter().enumerate() {
        let n = text.chars().count() as i64;
        let mut attempts = 0;
        let placed = loop {
            attempts += 1;
            if attempts > PLACEMENT_RETRIES {
                return Err(Error::Capacity(format!(
                    "no room to place label {i} ({text:?}) on a {}x{} raster",
                    spec.width_px, spec.height_px
                )));
            }
            let scale = rng.range_i64(spec.glyph_scale.0 as i64, spec.glyph_scale.1 as i64) as u32;
            let angle = rng.range_i64(spec.rotation_deg.0 as i64, spec.rotation_deg.1 as i64);
            let (sin, cos) = quantized_trig(angle);
            let w = ((n * GLYPH_ADVANCE as i64 - 1) * scale as i64) as f64;
            let h = (GLYPH_HEIGHT as i64 * scale as i64) as f64;
            let ex = ((w / 2.0) * cos.abs() + (h / 2.0) * sin.abs()).ceil() as i64;
            let ey = ((w / 2.0) * sin.abs() + (h / 2.0) * cos.abs()).ceil() as i64;
            let (cx_min, cx_max) = (ex + BORDER_PX, spec.width_px as i64 - 1 - BORDER_PX - ex);
            let (cy_min, cy_max) = (ey + BORDER_PX, spec.height_px as i64 - 1 - BORDER_PX - ey);
            if cx_min > cx_max || cy_min > cy_max {
                continue; // label too large at this scale/rotation
            }
            let candidate = Placement {
                text: text.clone(),
                center_x: rng.range_i64(cx_min, cx_max),
                center_y: rng.range_i64(cy_min, cy_max),
                scale,
                sin,
                cos,
                w,
                h,
                aabb: (0, 0, 0, 0),
            };
            let aabb = aabb_of(&candidate.corners());
            if placements
                .iter()
                .any(|p| aabbs_overlap(aabb, p.aabb, LABEL_GAP_PX))
            {
                continue;
            }
            break Placement { aabb, ..candidate };
        };
        placements.push(placed);
    }
    Ok(placements)
}

fn render(spec: &SynthSpec, placements: &[Placement]) -> Result<RasterImage> {
    let mut raster = RasterImage::filled("map", spec.width_px, spec.height_px, PAPER_RGB)?;
    if spec.background == Background::Grid {
        for y in 0..spec.height_px {
            for x in 0..spec.width_px {
                if x % GRID_SPACING_PX == 0 || y % GRID_SPACING_PX == 0 {
                    raster.set(x, y, GRID_RGB);
                }
            }
        }
    }
    for p in placements {
        let chars: Vec<char> = p.text.chars().collect();
        let cols = chars.len() as i64 * GLYPH_ADVANCE as i64 - 1;
        let (x0, y0, x1, y1) = p.aabb;
        for iy in y0.max(0)..=y1.min(spec.height_px as i64 - 1) {
            for ix in x0.max(0)..=x1.min(spec.width_px as i64 - 1) {
                // Inverse rotation of the pixel center into the label frame.
                let dx = ix as f64 + 0.5 - p.center_x as f64;
                let dy = iy as f64 + 0.5 - p.center_y as f64;
                let lx = p.cos * dx + p.sin * dy + p.w / 2.0;
                let ly = -p.sin * dx + p.cos * dy + p.h / 2.0;
                if lx < 0.0 || ly < 0.0 || lx >= p.w || ly >= p.h {
                    continue;
                }
                let cell_x = (lx / p.scale as f64) as i64;
                let cell_y = (ly / p.scale as f64) as i64;
                if cell_x >= cols || cell_y >= GLYPH_HEIGHT as i64 {
                    continue;
                }
                let char_idx = (cell_x / GLYPH_ADVANCE as i64) as usize;
                let char_col = (cell_x % GLYPH_ADVANCE as i64) as u32;
                if char_col < GLYPH_WIDTH
                    && font::is_inked(chars[char_idx], char_col, cell_y as u32)
                {
                    raster.set(ix as u32, iy as u32, INK_RGB);
                }
            }
        }
    }
    Ok(raster)
}

fn corner_gcps(spec: &SynthSpec) -> Vec<GroundControlPoint> {
    let (w, h) = (spec.width_px as f64, spec.height_px as f64);
    [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
        .iter()
        .map(|&(px, py)| {
            let geo = spec.transform.apply_point(Point::new(px, py));
            GroundControlPoint {
                px,
                py,
                lon: geo.x,
                lat: geo.y,
            }
        })
        .collect()
}

/// Generates `map.png`, `truth.jsonl`, `gcps.json`, and `gazetteer.jsonl`
/// under `out_dir`.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<SynthOutput> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut text_rng = DetRng::new(mix_seed(&[spec.seed, 1]));
    let texts = pick_texts(spec, &mut text_rng)?;
    let mut place_rng = DetRng::new(mix_seed(&[spec.seed, 2]));
    let placements = place_labels(spec, &texts, &mut place_rng)?;

    let labels: Vec<GroundTruthLabel> = placements
        .iter()
        .map(|p| GroundTruthLabel {
            text: p.text.clone(),
            polygon_map_px: p.corners(),
        })
        .collect();

    let raster = render(spec, &placements)?;
    let raster_path = out_dir.join("map.png");
    save_png(&raster, &raster_path)?;

    let truth_path = out_dir.join("truth.jsonl");
    let mut truth_lines = String::new();
    for label in &labels {
        let polygon: Vec<(f64, f64)> = label.polygon_map_px.iter().map(|p| (p.x, p.y)).collect();
        let line = serde_json::json!({ "text": label.text, "polygon": polygon });
        truth_lines.push_str(&line.to_string());
        truth_lines.push('\n');
    }
    std::fs::write(&truth_path, truth_lines).map_err(|e| Error::io(&truth_path, e))?;

    let gcps_path = out_dir.join("gcps.json");
    let gcp_doc = GcpFile {
        method: "affine".into(),
        gcps: corner_gcps(spec),
    };
    let mut gcp_text =
        serde_json::to_string_pretty(&gcp_doc).map_err(|e| Error::Serialization(e.to_string()))?;
    gcp_text.push('\n');
    std::fs::write(&gcps_path, gcp_text).map_err(|e| Error::io(&gcps_path, e))?;

    let gazetteer_path = out_dir.join("gazetteer.jsonl");
    let mut entity_ids = Vec::with_capacity(labels.len());
    let mut gaz_lines = String::new();
    for (i, label) in labels.iter().enumerate() {
        let id = format!("synth/{i:04}");
        // Closed geo ring, exact image of the truth polygon.
        let mut ring: Vec<(f64, f64)> = spec
            .transform
            .apply_ring(&label.polygon_map_px)
            .iter()
            .map(|p| (p.x, p.y))
            .collect();
        ring.push(ring[0]);
        let line = serde_json::json!({
            "id": id,
            "name": label.text,
            "popularity": i as u64 + 1,
            "geometry": { "type": "Polygon", "coordinates": [ring] },
        });
        gaz_lines.push_str(&line.to_string());
        gaz_lines.push('\n');
        entity_ids.push(id);
    }
    std::fs::write(&gazetteer_path, gaz_lines).map_err(|e| Error::io(&gazetteer_path, e))?;

    Ok(SynthOutput {
        raster_path,
        truth_path,
        gcps_path,
        gazetteer_path,
        labels,
        entity_ids,
    })
}
