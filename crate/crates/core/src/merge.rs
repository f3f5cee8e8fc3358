//! Patch-to-map merging: shifts patch-frame detections into full-map pixel
//! coordinates and collapses duplicates produced by overlapping tiles.
//!
//! Duplicate suppression is greedy over bounding-box IoU. Overlap duplicates
//! are near-identical rings, so box IoU separates them from genuinely
//! distinct neighbors without an exact polygon-intersection dependency.
//! Geometry only is compared — the same glyphs may be recognized differently
//! in two patches, and the higher-score reading wins.

use crate::geometry::{Bbox, Point};
use crate::raster::PatchWindow;
use crate::spotter::TextDetection;

/// Identifies the surviving source detection: (patch_row, patch_col,
/// seq_in_patch). Lexicographic order makes parallel runs reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Provenance {
    pub patch_row: u32,
    pub patch_col: u32,
    pub seq_in_patch: u32,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "r{}c{}#{}",
            self.patch_row, self.patch_col, self.seq_in_patch
        )
    }
}

/// A detection lifted into full-map pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedDetection {
    pub polygon_map_px: Vec<Point>,
    pub text: String,
    pub score: f64,
    pub provenance: Provenance,
}

/// Shifts a patch-frame detection by the window origin. Text, score, and
/// provenance are unchanged.
pub fn to_map_coords(det: &TextDetection, window: &PatchWindow) -> MergedDetection {
    let dx = window.origin_x_px as f64;
    let dy = window.origin_y_px as f64;
    MergedDetection {
        polygon_map_px: det
            .polygon_px
            .iter()
            .map(|p| Point::new(p.x + dx, p.y + dy))
            .collect(),
        text: det.text.clone(),
        score: det.score,
        provenance: Provenance {
            patch_row: det.patch_row,
            patch_col: det.patch_col,
            seq_in_patch: det.seq_in_patch,
        },
    }
}

/// Intersection-over-union of the two detections' axis-aligned bounding
/// boxes: 1.0 for equal boxes, 0.0 for disjoint ones.
pub fn bbox_iou(a: &MergedDetection, b: &MergedDetection) -> f64 {
    let ba = Bbox::of(&a.polygon_map_px);
    let bb = Bbox::of(&b.polygon_map_px);
    let inter = ba.intersection_area(&bb);
    let union = ba.area() + bb.area() - inter;
    if union <= 0.0 {
        // Two identical zero-area boxes still count as the same box.
        return if ba == bb { 1.0 } else { 0.0 };
    }
    inter / union
}

/// Greedy duplicate suppression. Candidates are visited by (score
/// descending, provenance ascending); a detection is kept iff its box IoU
/// with every already-kept detection stays below `iou_threshold`. The
/// result is sorted by provenance and is independent of input order.
pub fn dedupe(dets: Vec<MergedDetection>, iou_threshold: f64) -> Vec<MergedDetection> {
    let mut ordered = dets;
    ordered.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.provenance.cmp(&b.provenance))
    });
    let mut kept: Vec<MergedDetection> = Vec::new();
    for det in ordered {
        if kept.iter().all(|k| bbox_iou(k, &det) < iou_threshold) {
            kept.push(det);
        }
    }
    kept.sort_by_key(|d| d.provenance);
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;
    use proptest::prelude::*;

    fn boxed(
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        score: f64,
        prov: (u32, u32, u32),
    ) -> MergedDetection {
        // A 16-vertex ring tracing the box boundary.
        let corners = vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ];
        MergedDetection {
            polygon_map_px: crate::spotter::resample_polygon(&corners, 16).unwrap(),
            text: format!("T{}", prov.2),
            score,
            provenance: Provenance {
                patch_row: prov.0,
                patch_col: prov.1,
                seq_in_patch: prov.2,
            },
        }
    }

    #[test]
    fn shift_identity_and_translation() {
        let det = TextDetection::new(
            crate::spotter::resample_polygon(
                &[
                    Point::new(10.0, 20.0),
                    Point::new(30.0, 20.0),
                    Point::new(30.0, 40.0),
                    Point::new(10.0, 40.0),
                ],
                16,
            )
            .unwrap(),
            "A",
            0.8,
            0,
            1,
            0,
        )
        .unwrap();
        let origin0 = PatchWindow {
            row_index: 0,
            col_index: 0,
            origin_x_px: 0,
            origin_y_px: 0,
            width_px: 100,
            height_px: 100,
        };
        let shifted0 = to_map_coords(&det, &origin0);
        assert_eq!(shifted0.polygon_map_px, det.polygon_px);

        let origin1000 = PatchWindow {
            origin_x_px: 1000,
            ..origin0
        };
        let shifted = to_map_coords(&det, &origin1000);
        assert_eq!(shifted.polygon_map_px[0], Point::new(1010.0, 20.0));
        // Shifting back by the negated origin restores the original exactly.
        for (v, orig) in shifted.polygon_map_px.iter().zip(&det.polygon_px) {
            assert_eq!(Point::new(v.x - 1000.0, v.y), *orig);
        }
        assert_eq!(shifted.text, det.text);
        assert_eq!(shifted.score, det.score);
    }

    #[test]
    fn iou_identical_and_disjoint() {
        let a = boxed(0.0, 0.0, 10.0, 10.0, 0.9, (0, 0, 0));
        let b = boxed(0.0, 0.0, 10.0, 10.0, 0.8, (0, 1, 0));
        let c = boxed(50.0, 50.0, 60.0, 60.0, 0.8, (1, 0, 0));
        assert_eq!(bbox_iou(&a, &b), 1.0);
        assert_eq!(bbox_iou(&a, &c), 0.0);
        assert_eq!(bbox_iou(&a, &c), bbox_iou(&c, &a));
    }

    #[test]
    fn iou_quarter_overlap() {
        // Boxes [0,0,10,10] and [5,5,15,15]: intersection 25, union 175.
        let a = boxed(0.0, 0.0, 10.0, 10.0, 0.9, (0, 0, 0));
        let b = boxed(5.0, 5.0, 15.0, 15.0, 0.8, (0, 0, 1));
        assert!((bbox_iou(&a, &b) - 25.0 / 175.0).abs() < 1e-12);
    }

    #[test]
    fn exact_duplicate_keeps_higher_score() {
        let a = boxed(0.0, 0.0, 10.0, 10.0, 0.9, (0, 0, 0));
        let b = boxed(0.0, 0.0, 10.0, 10.0, 0.8, (0, 1, 0));
        let out = dedupe(vec![b, a], 0.5);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.9);
    }

    #[test]
    fn disjoint_detections_both_survive() {
        let a = boxed(0.0, 0.0, 10.0, 10.0, 0.9, (0, 0, 0));
        let b = boxed(50.0, 0.0, 60.0, 10.0, 0.1, (0, 0, 1));
        assert_eq!(dedupe(vec![a, b], 0.5).len(), 2);
    }

    #[test]
    fn greedy_chain_suppression() {
        // IoU(A,B) = 50/150 = 1/3 >= 0.3 suppresses B; C is far away.
        let a = boxed(0.0, 0.0, 10.0, 10.0, 0.9, (0, 0, 0));
        let b = boxed(5.0, 0.0, 15.0, 10.0, 0.8, (0, 0, 1));
        let c = boxed(20.0, 0.0, 30.0, 10.0, 0.7, (0, 0, 2));
        let out = dedupe(vec![a.clone(), b, c.clone()], 0.3);
        let texts: Vec<&str> = out.iter().map(|d| d.text.as_str()).collect();
        assert_eq!(texts, vec!["T0", "T2"]);
    }

    #[test]
    fn equal_scores_tie_break_on_provenance() {
        let a = boxed(0.0, 0.0, 10.0, 10.0, 0.9, (0, 1, 0));
        let b = boxed(0.0, 0.0, 10.0, 10.0, 0.9, (0, 0, 3));
        let out = dedupe(vec![a, b], 0.5);
        assert_eq!(out.len(), 1);
        assert_eq!(
            out[0].provenance,
            Provenance {
                patch_row: 0,
                patch_col: 0,
                seq_in_patch: 3
            }
        );
    }

    proptest! {
        /// Any permutation of the input yields the same output; output is a
        /// subset of input with geometry and text unmutated.
        #[test]
        fn order_independence(seed in 0u64..500, threshold in 1u32..10) {
            let threshold = threshold as f64 / 10.0;
            let mut rng = DetRng::new(seed);
            let n = 2 + rng.range_usize(12);
            let mut dets = Vec::new();
            for i in 0..n {
                let x = rng.next_f64() * 60.0;
                let y = rng.next_f64() * 60.0;
                let w = 4.0 + rng.next_f64() * 20.0;
                let h = 4.0 + rng.next_f64() * 20.0;
                let score = (rng.range_usize(5) as f64) / 4.0;
                dets.push(boxed(x, y, x + w, y + h, score, (0, 0, i as u32)));
            }
            let baseline = dedupe(dets.clone(), threshold);
            // Deterministic permutation.
            let mut shuffled = dets.clone();
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.range_usize(i + 1));
            }
            let permuted = dedupe(shuffled, threshold);
            prop_assert_eq!(&baseline, &permuted);
            for d in &baseline {
                prop_assert!(dets.iter().any(|o| o == d), "output not a subset of input");
            }
        }
    }
}
