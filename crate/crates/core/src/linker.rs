//! Gazetteer loading, spatial indexing, and entity linking.
//!
//! A label links to an entity when (1) the corrected label is a
//! case-insensitive substring of the entity's normalized name and (2) the
//! label's geo polygon intersects the entity geometry. Point entities get a
//! small buffer radius — OSM nodes have zero area and would otherwise almost
//! never intersect anything. The spatial prefilter is a uniform grid over
//! entity bounding boxes; it may produce false positives (settled by the
//! exact test) but never false negatives.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_in_ring, point_ring_distance, segments_intersect, Bbox, Point};
use crate::postocr::normalize_label;

pub const DEFAULT_GRID_CELL_DEG: f64 = 0.01;
pub const DEFAULT_POINT_BUFFER_DEG: f64 = 0.0005;

#[derive(Debug, Clone, PartialEq)]
pub enum EntityGeometry {
    /// Implicitly closed lon/lat ring, at least 3 vertices.
    Polygon(Vec<Point>),
    Point(Point),
}

impl EntityGeometry {
    fn bbox(&self) -> Bbox {
        match self {
            EntityGeometry::Polygon(ring) => Bbox::of(ring),
            EntityGeometry::Point(p) => Bbox::of(std::slice::from_ref(p)),
        }
    }
}

/// One gazetteer record.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoEntity {
    pub id: String,
    pub name: String,
    pub popularity: u64,
    pub geometry: EntityGeometry,
}

/// Counters from a gazetteer load; malformed lines are skipped, not fatal,
/// unless they dominate the file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GazetteerLoadReport {
    pub records: usize,
    pub malformed: usize,
    pub duplicate_ids: usize,
}

/// Immutable gazetteer index: entities, their normalized names, and a
/// uniform lon/lat grid over entity bounding boxes.
#[derive(Debug)]
pub struct GazetteerIndex {
    entities: Vec<GeoEntity>,
    normalized_names: Vec<String>,
    grid: HashMap<(i32, i32), Vec<u32>>,
    cell_deg: f64,
    point_buffer_deg: f64,
}

fn cell_range(b: &Bbox, cell: f64) -> (i32, i32, i32, i32) {
    (
        (b.min_x / cell).floor() as i32,
        (b.max_x / cell).floor() as i32,
        (b.min_y / cell).floor() as i32,
        (b.max_y / cell).floor() as i32,
    )
}

impl GazetteerIndex {
    /// Builds the index from already-validated entities.
    pub fn build(entities: Vec<GeoEntity>, cell_deg: f64, point_buffer_deg: f64) -> Result<Self> {
        if cell_deg <= 0.0 {
            return Err(Error::Config(format!(
                "grid cell must be positive, got {cell_deg}"
            )));
        }
        if point_buffer_deg < 0.0 {
            return Err(Error::Config(format!(
                "point buffer must be non-negative, got {point_buffer_deg}"
            )));
        }
        let normalized_names = entities.iter().map(|e| normalize_label(&e.name)).collect();
        let mut grid: HashMap<(i32, i32), Vec<u32>> = HashMap::new();
        for (i, entity) in entities.iter().enumerate() {
            // Point entities are indexed with their buffer so the prefilter
            // cannot miss a within-buffer query ring.
            let mut bbox = entity.geometry.bbox();
            if matches!(entity.geometry, EntityGeometry::Point(_)) {
                bbox = bbox.expand(point_buffer_deg);
            }
            let (x0, x1, y0, y1) = cell_range(&bbox, cell_deg);
            for cx in x0..=x1 {
                for cy in y0..=y1 {
                    grid.entry((cx, cy)).or_default().push(i as u32);
                }
            }
        }
        Ok(GazetteerIndex {
            entities,
            normalized_names,
            grid,
            cell_deg,
            point_buffer_deg,
        })
    }

    pub fn entities(&self) -> &[GeoEntity] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn point_buffer_deg(&self) -> f64 {
        self.point_buffer_deg
    }

    /// Entity ids satisfying both linking criteria, ordered by popularity
    /// descending then id ascending. The label is normalized before the
    /// substring test; an empty normalized label matches nothing.
    pub fn link(&self, postocr_label: &str, ring_geo: &[Point]) -> Vec<String> {
        let label = normalize_label(postocr_label);
        if label.is_empty() || ring_geo.len() < 3 {
            return Vec::new();
        }
        let (x0, x1, y0, y1) = cell_range(&Bbox::of(ring_geo), self.cell_deg);
        let mut candidates: Vec<u32> = Vec::new();
        for cx in x0..=x1 {
            for cy in y0..=y1 {
                if let Some(idxs) = self.grid.get(&(cx, cy)) {
                    candidates.extend_from_slice(idxs);
                }
            }
        }
        candidates.sort_unstable();
        candidates.dedup();
        let mut matched: Vec<&GeoEntity> = candidates
            .into_iter()
            .map(|i| i as usize)
            .filter(|&i| self.matches(&label, ring_geo, i))
            .map(|i| &self.entities[i])
            .collect();
        matched.sort_by(|a, b| {
            b.popularity
                .cmp(&a.popularity)
                .then_with(|| a.id.cmp(&b.id))
        });
        matched.into_iter().map(|e| e.id.clone()).collect()
    }

    /// Exact per-entity test of the two linking criteria.
    fn matches(&self, normalized_label: &str, ring_geo: &[Point], idx: usize) -> bool {
        if !self.normalized_names[idx].contains(normalized_label) {
            return false;
        }
        entity_intersects(
            ring_geo,
            &self.entities[idx].geometry,
            self.point_buffer_deg,
        )
    }

    /// Brute-force variant of [`Self::link`] that scans every entity,
    /// bypassing the grid. Exists to pin index behavior in tests.
    pub fn link_scan(&self, postocr_label: &str, ring_geo: &[Point]) -> Vec<String> {
        let label = normalize_label(postocr_label);
        if label.is_empty() || ring_geo.len() < 3 {
            return Vec::new();
        }
        let mut matched: Vec<&GeoEntity> = (0..self.entities.len())
            .filter(|&i| self.matches(&label, ring_geo, i))
            .map(|i| &self.entities[i])
            .collect();
        matched.sort_by(|a, b| {
            b.popularity
                .cmp(&a.popularity)
                .then_with(|| a.id.cmp(&b.id))
        });
        matched.into_iter().map(|e| e.id.clone()).collect()
    }
}

/// Non-empty intersection between a label ring and an entity geometry.
/// Polygon entities intersect when any label vertex lies inside the entity,
/// any entity vertex lies inside the label ring, or any pair of edges
/// crosses. Point entities intersect when the point is inside the ring or
/// within `point_buffer_deg` of its outline.
pub fn entity_intersects(
    ring_geo: &[Point],
    geometry: &EntityGeometry,
    point_buffer_deg: f64,
) -> bool {
    match geometry {
        EntityGeometry::Point(p) => {
            point_in_ring(*p, ring_geo) || point_ring_distance(*p, ring_geo) <= point_buffer_deg
        }
        EntityGeometry::Polygon(entity_ring) => {
            if ring_geo.iter().any(|&v| point_in_ring(v, entity_ring)) {
                return true;
            }
            if entity_ring.iter().any(|&v| point_in_ring(v, ring_geo)) {
                return true;
            }
            for i in 0..ring_geo.len() {
                let a1 = ring_geo[i];
                let a2 = ring_geo[(i + 1) % ring_geo.len()];
                for j in 0..entity_ring.len() {
                    let b1 = entity_ring[j];
                    let b2 = entity_ring[(j + 1) % entity_ring.len()];
                    if segments_intersect(a1, a2, b1, b2) {
                        return true;
                    }
                }
            }
            false
        }
    }
}

#[derive(Deserialize)]
struct GeometryRecord {
    #[serde(rename = "type")]
    kind: String,
    coordinates: serde_json::Value,
}

#[derive(Deserialize)]
struct EntityRecord {
    id: String,
    name: String,
    popularity: u64,
    geometry: GeometryRecord,
}

fn parse_entity(line: &str) -> std::result::Result<GeoEntity, String> {
    let rec: EntityRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if rec.id.is_empty() {
        return Err("empty id".into());
    }
    if rec.name.is_empty() {
        return Err("empty name".into());
    }
    if rec.popularity == 0 {
        return Err("popularity must be >= 1".into());
    }
    let geometry = match rec.geometry.kind.as_str() {
        "Point" => {
            let (lon, lat): (f64, f64) =
                serde_json::from_value(rec.geometry.coordinates).map_err(|e| e.to_string())?;
            validate_lonlat(lon, lat)?;
            EntityGeometry::Point(Point::new(lon, lat))
        }
        "Polygon" => {
            let rings: Vec<Vec<(f64, f64)>> =
                serde_json::from_value(rec.geometry.coordinates).map_err(|e| e.to_string())?;
            let outer = rings.first().ok_or("polygon has no rings")?;
            // Accept both open and closed outer rings.
            let mut ring: Vec<Point> = outer.iter().map(|&(x, y)| Point::new(x, y)).collect();
            if ring.len() >= 2 && ring.first() == ring.last() {
                ring.pop();
            }
            if ring.len() < 3 {
                return Err("polygon ring needs at least 3 distinct vertices".into());
            }
            for p in &ring {
                validate_lonlat(p.x, p.y)?;
            }
            EntityGeometry::Polygon(ring)
        }
        other => return Err(format!("unsupported geometry type {other:?}")),
    };
    Ok(GeoEntity {
        id: rec.id,
        name: rec.name,
        popularity: rec.popularity,
        geometry,
    })
}

fn validate_lonlat(lon: f64, lat: f64) -> std::result::Result<(), String> {
    if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
        return Err(format!("coordinate ({lon}, {lat}) outside WGS84 bounds"));
    }
    Ok(())
}

/// Loads a newline-delimited JSON gazetteer into a spatial index. Malformed
/// lines and duplicate ids are counted and skipped; the load fails only when
/// more than half of the non-empty lines are malformed.
pub fn load_gazetteer(
    path: &Path,
    cell_deg: f64,
    point_buffer_deg: f64,
) -> Result<(GazetteerIndex, GazetteerLoadReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entities: Vec<GeoEntity> = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    let mut report = GazetteerLoadReport::default();
    let mut non_empty = 0usize;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        non_empty += 1;
        match parse_entity(&line) {
            Ok(entity) => {
                if seen_ids.insert(entity.id.clone()) {
                    entities.push(entity);
                } else {
                    report.duplicate_ids += 1;
                }
            }
            Err(_) => report.malformed += 1,
        }
    }
    if non_empty > 0 && report.malformed * 2 > non_empty {
        return Err(Error::CorruptGazetteer(format!(
            "{}: {} of {} lines are malformed",
            path.display(),
            report.malformed,
            non_empty
        )));
    }
    report.records = entities.len();
    let index = GazetteerIndex::build(entities, cell_deg, point_buffer_deg)?;
    Ok((index, report))
}
