//! GeoJSON (RFC 7946) serialization of the final label records.
//!
//! Every feature is a Polygon whose exterior ring is explicitly closed and
//! counterclockwise, with exactly the four properties `text`, `score`,
//! `postocr_label`, and `osm_id`. Coordinates are written with at most 7
//! fractional digits (about 1 cm at the equator) and scores with at most 6,
//! so identical runs produce byte-identical files.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{signed_area, Point};

/// One output record: a geo polygon plus label properties. `osm_ids` may be
/// empty (unlinked label); it is still emitted, as an empty array.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoFeature {
    /// Lon/lat ring, implicitly closed (16 vertices from the pipeline).
    pub ring_geo: Vec<Point>,
    pub text: String,
    pub score: f64,
    pub postocr_label: String,
    pub osm_ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct FeatureJson {
    #[serde(rename = "type")]
    kind: String,
    geometry: GeometryJson,
    properties: PropertiesJson,
}

#[derive(Serialize, Deserialize)]
struct GeometryJson {
    #[serde(rename = "type")]
    kind: String,
    coordinates: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct PropertiesJson {
    text: String,
    score: f64,
    postocr_label: String,
    osm_id: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct CollectionJson {
    #[serde(rename = "type")]
    kind: String,
    features: Vec<FeatureJson>,
}

fn round_to(value: f64, digits: i32) -> f64 {
    let scale = 10f64.powi(digits);
    (value * scale).round() / scale
}

fn feature_json(f: &GeoFeature) -> Result<FeatureJson> {
    for p in &f.ring_geo {
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(Error::Serialization(format!(
                "non-finite coordinate ({}, {}) in feature {:?}",
                p.x, p.y, f.text
            )));
        }
    }
    if !f.score.is_finite() {
        return Err(Error::Serialization(format!(
            "non-finite score in feature {:?}",
            f.text
        )));
    }
    if f.ring_geo.len() < 3 {
        return Err(Error::Serialization(format!(
            "feature {:?} ring has fewer than 3 vertices",
            f.text
        )));
    }
    // Exterior ring counterclockwise per the right-hand rule, regardless of
    // the order the spotter emitted.
    let mut ring = f.ring_geo.clone();
    if signed_area(&ring) < 0.0 {
        ring.reverse();
    }
    let mut coordinates: Vec<[f64; 2]> = ring
        .iter()
        .map(|p| [round_to(p.x, 7), round_to(p.y, 7)])
        .collect();
    let first = coordinates[0];
    coordinates.push(first); // explicit closure
    Ok(FeatureJson {
        kind: "Feature".into(),
        geometry: GeometryJson {
            kind: "Polygon".into(),
            coordinates: vec![coordinates],
        },
        properties: PropertiesJson {
            text: f.text.clone(),
            score: round_to(f.score, 6),
            postocr_label: f.postocr_label.clone(),
            osm_id: f.osm_ids.clone(),
        },
    })
}

/// Renders one feature as a GeoJSON `Feature` value.
pub fn emit_feature(f: &GeoFeature) -> Result<serde_json::Value> {
    let json = feature_json(f)?;
    serde_json::to_value(&json).map_err(|e| Error::Serialization(e.to_string()))
}

/// Renders the whole FeatureCollection document (with trailing newline).
pub fn emit_collection_string(features: &[GeoFeature]) -> Result<String> {
    let collection = CollectionJson {
        kind: "FeatureCollection".into(),
        features: features
            .iter()
            .map(feature_json)
            .collect::<Result<Vec<_>>>()?,
    };
    let mut text =
        serde_json::to_string(&collection).map_err(|e| Error::Serialization(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

/// Writes the FeatureCollection to `out_path` as UTF-8.
pub fn emit_collection(features: &[GeoFeature], out_path: &Path) -> Result<()> {
    let text = emit_collection_string(features)?;
    let mut file = std::fs::File::create(out_path).map_err(|e| Error::io(out_path, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(out_path, e))
}

/// Parses one of our own collection documents back into features (ring
/// reopened, i.e. the repeated closing vertex removed).
pub fn parse_collection(text: &str) -> Result<Vec<GeoFeature>> {
    let collection: CollectionJson =
        serde_json::from_str(text).map_err(|e| Error::Input(format!("bad GeoJSON: {e}")))?;
    if collection.kind != "FeatureCollection" {
        return Err(Error::Input(format!(
            "expected FeatureCollection, got {:?}",
            collection.kind
        )));
    }
    collection
        .features
        .into_iter()
        .map(|f| {
            if f.kind != "Feature" || f.geometry.kind != "Polygon" {
                return Err(Error::Input("expected Polygon Feature".into()));
            }
            let outer = f
                .geometry
                .coordinates
                .into_iter()
                .next()
                .ok_or_else(|| Error::Input("polygon without rings".into()))?;
            let mut ring: Vec<Point> = outer.iter().map(|&[x, y]| Point::new(x, y)).collect();
            if ring.len() >= 2 && ring.first() == ring.last() {
                ring.pop();
            }
            Ok(GeoFeature {
                ring_geo: ring,
                text: f.properties.text,
                score: f.properties.score,
                postocr_label: f.properties.postocr_label,
                osm_ids: f.properties.osm_id,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feature(osm_ids: Vec<String>) -> GeoFeature {
        // Clockwise input ring: emission must flip it.
        GeoFeature {
            ring_geo: vec![
                Point::new(-122.30, 47.56),
                Point::new(-122.29, 47.56),
                Point::new(-122.29, 47.55),
                Point::new(-122.30, 47.55),
            ],
            text: "BR0OK".into(),
            score: 0.973512345,
            postocr_label: "BROOK".into(),
            osm_ids,
        }
    }

    #[test]
    fn feature_layout_and_linked_entity() {
        let v = emit_feature(&feature(vec!["way/123".into()])).unwrap();
        assert_eq!(v["type"], "Feature");
        assert_eq!(v["geometry"]["type"], "Polygon");
        assert_eq!(v["properties"]["postocr_label"], "BROOK");
        let ids = v["properties"]["osm_id"].as_array().unwrap();
        assert_eq!(ids.len(), 1);
        let props = v["properties"].as_object().unwrap();
        let mut keys: Vec<&str> = props.keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(keys, vec!["osm_id", "postocr_label", "score", "text"]);
    }

    #[test]
    fn unlinked_feature_keeps_empty_array() {
        let v = emit_feature(&feature(vec![])).unwrap();
        assert_eq!(v["properties"]["osm_id"], serde_json::json!([]));
    }

    #[test]
    fn ring_closed_and_counterclockwise() {
        let v = emit_feature(&feature(vec![])).unwrap();
        let ring = v["geometry"]["coordinates"][0].as_array().unwrap();
        assert_eq!(ring.len(), 5);
        assert_eq!(ring.first(), ring.last());
        let pts: Vec<Point> = ring[..4]
            .iter()
            .map(|c| Point::new(c[0].as_f64().unwrap(), c[1].as_f64().unwrap()))
            .collect();
        assert!(signed_area(&pts) > 0.0, "exterior ring must be CCW");
    }

    #[test]
    fn non_finite_coordinates_rejected() {
        let mut f = feature(vec![]);
        f.ring_geo[1].x = f64::NAN;
        assert!(matches!(emit_feature(&f), Err(Error::Serialization(_))));
        let mut g = feature(vec![]);
        g.score = f64::INFINITY;
        assert!(matches!(emit_feature(&g), Err(Error::Serialization(_))));
    }

    #[test]
    fn collection_round_trip() {
        let features = vec![feature(vec!["way/1".into()]), feature(vec![])];
        let text = emit_collection_string(&features).unwrap();
        assert!(text.ends_with('\n'));
        let parsed = parse_collection(&text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].text, "BR0OK");
        assert_eq!(parsed[0].postocr_label, "BROOK");
        assert_eq!(parsed[0].osm_ids, vec!["way/1".to_string()]);
        // Values survive within serialization precision; orientation may
        // flip, so compare vertices as sets of rounded points.
        assert!((parsed[0].score - 0.973512).abs() < 1e-12);
        let orig_set: Vec<(f64, f64)> = features[0]
            .ring_geo
            .iter()
            .map(|p| (round_to(p.x, 7), round_to(p.y, 7)))
            .collect();
        for p in &parsed[0].ring_geo {
            assert!(orig_set.contains(&(p.x, p.y)));
        }
    }

    #[test]
    fn empty_collection_is_valid() {
        let text = emit_collection_string(&[]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["type"], "FeatureCollection");
        assert_eq!(v["features"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn deterministic_bytes() {
        let features = vec![feature(vec!["way/1".into()])];
        assert_eq!(
            emit_collection_string(&features).unwrap(),
            emit_collection_string(&features).unwrap()
        );
    }

    #[test]
    fn coordinate_precision_capped() {
        let mut f = feature(vec![]);
        f.ring_geo[0].x = -122.123456789123;
        let text = emit_collection_string(&[f]).unwrap();
        assert!(text.contains("-122.1234568"), "{text}");
        assert!(!text.contains("-122.12345678"), "{text}");
    }
}
