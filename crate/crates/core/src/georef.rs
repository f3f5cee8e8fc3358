//! Pixel-to-geocoordinate conversion.
//!
//! An affine transform is fitted by least squares to ground control point
//! pairs from the map metadata and applied to detection polygons. Only the
//! affine method is supported; the metadata carries a method tag and
//! anything else is rejected explicitly.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// A pixel ↔ geographic correspondence from the map metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundControlPoint {
    pub px: f64,
    pub py: f64,
    pub lon: f64,
    pub lat: f64,
}

impl GroundControlPoint {
    pub fn validate(&self) -> Result<()> {
        if !(-180.0..=180.0).contains(&self.lon) || !(-90.0..=90.0).contains(&self.lat) {
            return Err(Error::Input(format!(
                "GCP geocoordinate ({}, {}) outside lon [-180, 180] / lat [-90, 90]",
                self.lon, self.lat
            )));
        }
        if !self.px.is_finite() || !self.py.is_finite() {
            return Err(Error::Input("GCP pixel coordinate is not finite".into()));
        }
        Ok(())
    }
}

/// Six-coefficient mapping `lon = a + b*px + c*py`, `lat = d + e*px + f*py`.
/// The linear part must be invertible (b*f - c*e != 0); a negative `f`
/// typically encodes the y-down-pixels / lat-up flip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        a: 0.0,
        b: 1.0,
        c: 0.0,
        d: 0.0,
        e: 0.0,
        f: 1.0,
    };

    pub fn determinant(&self) -> f64 {
        self.b * self.f - self.c * self.e
    }

    pub fn apply_point(&self, p: Point) -> Point {
        Point::new(
            self.a + self.b * p.x + self.c * p.y,
            self.d + self.e * p.x + self.f * p.y,
        )
    }

    /// Maps a pixel ring to (lon, lat); vertex count and order preserved.
    pub fn apply_ring(&self, ring_px: &[Point]) -> Vec<Point> {
        ring_px.iter().map(|&p| self.apply_point(p)).collect()
    }

    /// Analytic inverse (geo -> pixel).
    pub fn inverse(&self) -> Result<AffineTransform> {
        let det = self.determinant();
        if det == 0.0 {
            return Err(Error::DegenerateGeometry(
                "affine transform is singular and cannot be inverted".into(),
            ));
        }
        let (ib, ic) = (self.f / det, -self.c / det);
        let (ie, iff) = (-self.e / det, self.b / det);
        Ok(AffineTransform {
            a: -(ib * self.a + ic * self.d),
            b: ib,
            c: ic,
            d: -(ie * self.a + iff * self.d),
            e: ie,
            f: iff,
        })
    }

    /// Root-mean-square of Euclidean residuals over the GCPs, in degrees.
    pub fn residual_rmse(&self, gcps: &[GroundControlPoint]) -> Result<f64> {
        if gcps.is_empty() {
            return Err(Error::Input("RMSE over an empty GCP list".into()));
        }
        let sum: f64 = gcps
            .iter()
            .map(|g| {
                let p = self.apply_point(Point::new(g.px, g.py));
                let (dx, dy) = (p.x - g.lon, p.y - g.lat);
                dx * dx + dy * dy
            })
            .sum();
        Ok((sum / gcps.len() as f64).sqrt())
    }
}

/// Solves a 3x3 linear system with partial pivoting. Returns None when the
/// pivot falls below `tol` relative to the largest matrix entry.
fn solve3(mut m: [[f64; 3]; 3], mut rhs: [f64; 3], tol: f64) -> Option<[f64; 3]> {
    let scale = m
        .iter()
        .flatten()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()))
        .max(1e-300);
    for col in 0..3 {
        let pivot_row = (col..3)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[pivot_row][col].abs() < tol * scale {
            return None;
        }
        m.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        let pivot = m[col];
        for row in (col + 1)..3 {
            let factor = m[row][col] / pivot[col];
            for (k, entry) in m[row].iter_mut().enumerate().skip(col) {
                *entry -= factor * pivot[k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = [0.0f64; 3];
    for row in (0..3).rev() {
        let mut acc = rhs[row];
        for k in (row + 1)..3 {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

/// Fits the least-squares affine transform from at least three GCPs whose
/// pixel points are not all collinear. With exactly three non-collinear GCPs
/// the fit interpolates them exactly. Pixel coordinates are centered and
/// scaled before forming the normal equations so the tiny 3x3 solve stays
/// well conditioned at map-scale coordinates.
pub fn fit_affine(gcps: &[GroundControlPoint]) -> Result<AffineTransform> {
    if gcps.len() < 3 {
        return Err(Error::InsufficientControl(format!(
            "affine fit needs at least 3 ground control points, got {}",
            gcps.len()
        )));
    }
    for g in gcps {
        g.validate()?;
    }
    let n = gcps.len() as f64;
    let mx = gcps.iter().map(|g| g.px).sum::<f64>() / n;
    let my = gcps.iter().map(|g| g.py).sum::<f64>() / n;
    let sx = gcps
        .iter()
        .map(|g| (g.px - mx).abs())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let sy = gcps
        .iter()
        .map(|g| (g.py - my).abs())
        .fold(0.0f64, f64::max)
        .max(1.0);

    // Normal equations over scaled coordinates u = (px-mx)/sx, v = (py-my)/sy.
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs_lon = [0.0f64; 3];
    let mut rhs_lat = [0.0f64; 3];
    for g in gcps {
        let u = (g.px - mx) / sx;
        let v = (g.py - my) / sy;
        let row = [1.0, u, v];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += row[i] * row[j];
            }
            rhs_lon[i] += row[i] * g.lon;
            rhs_lat[i] += row[i] * g.lat;
        }
    }
    let lon = solve3(m, rhs_lon, 1e-12).ok_or_else(collinear_error)?;
    let lat = solve3(m, rhs_lat, 1e-12).ok_or_else(collinear_error)?;

    // Undo the centering/scaling substitution.
    let t = AffineTransform {
        a: lon[0] - lon[1] * mx / sx - lon[2] * my / sy,
        b: lon[1] / sx,
        c: lon[2] / sy,
        d: lat[0] - lat[1] * mx / sx - lat[2] * my / sy,
        e: lat[1] / sx,
        f: lat[2] / sy,
    };
    if t.determinant() == 0.0 {
        return Err(Error::DegenerateGeometry(
            "fitted transform is singular (GCP geocoordinates span no area)".into(),
        ));
    }
    Ok(t)
}

fn collinear_error() -> Error {
    Error::DegenerateGeometry(
        "GCP pixel points are collinear; the affine fit is underdetermined".into(),
    )
}

/// On-disk metadata format: `{"method": "affine", "gcps": [...]}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct GcpFile {
    pub method: String,
    pub gcps: Vec<GroundControlPoint>,
}

/// Loads GCP metadata, rejecting unsupported transform methods.
pub fn load_gcp_file(path: &Path) -> Result<Vec<GroundControlPoint>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parsed: GcpFile = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Input(format!("{}: bad GCP metadata: {e}", path.display())))?;
    if parsed.method != "affine" {
        return Err(Error::UnsupportedMethod(parsed.method));
    }
    for g in &parsed.gcps {
        g.validate()?;
    }
    Ok(parsed.gcps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    fn gcp(px: f64, py: f64, lon: f64, lat: f64) -> GroundControlPoint {
        GroundControlPoint { px, py, lon, lat }
    }

    #[test]
    fn identity_fit() {
        let t = fit_affine(&[
            gcp(0.0, 0.0, 0.0, 0.0),
            gcp(1.0, 0.0, 1.0, 0.0),
            gcp(0.0, 1.0, 0.0, 1.0),
        ])
        .unwrap();
        for (got, want) in [
            (t.a, 0.0),
            (t.b, 1.0),
            (t.c, 0.0),
            (t.d, 0.0),
            (t.e, 0.0),
            (t.f, 1.0),
        ] {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn three_point_interpolation_with_y_flip() {
        // Solved by hand: lon depends only on px, lat only on py, and the
        // negative f encodes the y-down/lat-up flip.
        let gcps = [
            gcp(0.0, 0.0, 10.0, 50.0),
            gcp(100.0, 0.0, 10.2, 50.0),
            gcp(0.0, 100.0, 10.0, 49.8),
        ];
        let t = fit_affine(&gcps).unwrap();
        assert!((t.a - 10.0).abs() < 1e-9);
        assert!((t.b - 0.002).abs() < 1e-12);
        assert!(t.c.abs() < 1e-12);
        assert!((t.d - 50.0).abs() < 1e-9);
        assert!(t.e.abs() < 1e-12);
        assert!((t.f + 0.002).abs() < 1e-12);
        assert!(t.residual_rmse(&gcps).unwrap() < 1e-9);
    }

    #[test]
    fn too_few_gcps() {
        let err = fit_affine(&[gcp(0.0, 0.0, 0.0, 0.0), gcp(1.0, 1.0, 1.0, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::InsufficientControl(_)));
    }

    #[test]
    fn collinear_pixels_rejected() {
        let err = fit_affine(&[
            gcp(0.0, 0.0, 0.0, 0.0),
            gcp(1.0, 1.0, 1.0, 1.0),
            gcp(2.0, 2.0, 2.0, 2.0),
            gcp(3.0, 3.0, 3.0, 3.0),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry(_)));
    }

    #[test]
    fn apply_identity_and_translation() {
        let ring = vec![Point::new(1.5, 2.5), Point::new(3.0, 4.0)];
        assert_eq!(AffineTransform::IDENTITY.apply_ring(&ring), ring);
        let shift = AffineTransform {
            a: 10.0,
            b: 1.0,
            c: 0.0,
            d: -5.0,
            e: 0.0,
            f: 1.0,
        };
        let out = shift.apply_ring(&ring);
        assert_eq!(out[0], Point::new(11.5, -2.5));
        assert_eq!(out[1], Point::new(13.0, -1.0));
    }

    #[test]
    fn round_trip_through_inverse() {
        let t = AffineTransform {
            a: -122.5,
            b: 1.0e-4,
            c: 2.0e-6,
            d: 47.6,
            e: -3.0e-6,
            f: -1.0e-4,
        };
        let inv = t.inverse().unwrap();
        let ring: Vec<Point> = (0..16)
            .map(|i| Point::new(100.0 * i as f64, 37.0 * i as f64))
            .collect();
        let back = inv.apply_ring(&t.apply_ring(&ring));
        for (orig, got) in ring.iter().zip(&back) {
            assert!(orig.distance(*got) < 1e-9, "{orig:?} vs {got:?}");
        }
    }

    #[test]
    fn rmse_uniform_offset() {
        let gcps = [
            gcp(0.0, 0.0, 10.0, 50.0),
            gcp(100.0, 0.0, 10.2, 50.0),
            gcp(0.0, 100.0, 10.0, 49.8),
        ];
        let mut t = fit_affine(&gcps).unwrap();
        t.a += 0.1;
        let rmse = t.residual_rmse(&gcps).unwrap();
        assert!((rmse - 0.1).abs() < 1e-9, "rmse {rmse}");
        assert!(t.residual_rmse(&[]).is_err());
    }

    #[test]
    fn exact_recovery_from_sampled_points() {
        let truth = AffineTransform {
            a: -122.5,
            b: 1.2e-4,
            c: -7.0e-6,
            d: 47.6,
            e: 4.0e-6,
            f: -0.9e-4,
        };
        let mut rng = DetRng::new(404);
        for n in [3usize, 10, 40] {
            let gcps: Vec<GroundControlPoint> = (0..n)
                .map(|i| {
                    let (px, py) = match i {
                        0 => (0.0, 0.0),
                        1 => (3000.0, 0.0),
                        2 => (0.0, 2000.0),
                        _ => (rng.next_f64() * 3000.0, rng.next_f64() * 2000.0),
                    };
                    let geo = truth.apply_point(Point::new(px, py));
                    gcp(px, py, geo.x, geo.y)
                })
                .collect();
            let fitted = fit_affine(&gcps).unwrap();
            let got = [fitted.a, fitted.b, fitted.c, fitted.d, fitted.e, fitted.f];
            let want = [truth.a, truth.b, truth.c, truth.d, truth.e, truth.f];
            let err: f64 = got
                .iter()
                .zip(&want)
                .map(|(g, w)| (g - w) * (g - w))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = want.iter().map(|w| w * w).sum::<f64>().sqrt();
            assert!(err / norm < 1e-9, "n={n}: relative error {}", err / norm);
            assert!(fitted.residual_rmse(&gcps).unwrap() < 1e-9);
        }
    }

    #[test]
    fn least_squares_beats_perturbed_coefficients() {
        // Noisy 4-point fit: the fitted coefficients minimize RMSE against a
        // grid of hand-perturbed alternatives.
        let truth = AffineTransform {
            a: 10.0,
            b: 0.002,
            c: 0.0,
            d: 50.0,
            e: 0.0,
            f: -0.002,
        };
        let noise = [0.003, -0.002, 0.001, -0.004];
        let gcps: Vec<GroundControlPoint> =
            [(0.0, 0.0), (100.0, 0.0), (0.0, 100.0), (100.0, 100.0)]
                .iter()
                .zip(noise)
                .map(|(&(px, py), nz)| {
                    let geo = truth.apply_point(Point::new(px, py));
                    gcp(px, py, geo.x + nz, geo.y - nz)
                })
                .collect();
        let fitted = fit_affine(&gcps).unwrap();
        let base = fitted.residual_rmse(&gcps).unwrap();
        for delta in [-1e-3, 1e-3] {
            for coeff in 0..6 {
                let mut alt = fitted;
                match coeff {
                    0 => alt.a += delta,
                    1 => alt.b += delta,
                    2 => alt.c += delta,
                    3 => alt.d += delta,
                    4 => alt.e += delta,
                    _ => alt.f += delta,
                }
                assert!(alt.residual_rmse(&gcps).unwrap() >= base);
            }
        }
        // And the fit does no worse than the generating transform itself.
        assert!(base <= truth.residual_rmse(&gcps).unwrap() + 1e-12);
    }

    #[test]
    fn apply_is_linear_after_offset_removal() {
        let t = AffineTransform {
            a: 5.0,
            b: 2.0,
            c: -1.0,
            d: -3.0,
            e: 0.5,
            f: 4.0,
        };
        let origin = t.apply_point(Point::new(0.0, 0.0));
        let lin = |p: Point| {
            let q = t.apply_point(p);
            Point::new(q.x - origin.x, q.y - origin.y)
        };
        let u = Point::new(2.0, 3.0);
        let v = Point::new(-1.0, 4.0);
        let (alpha, beta) = (1.5, -0.25);
        let combo = lin(Point::new(
            alpha * u.x + beta * v.x,
            alpha * u.y + beta * v.y,
        ));
        let lu = lin(u);
        let lv = lin(v);
        assert!((combo.x - (alpha * lu.x + beta * lv.x)).abs() < 1e-12);
        assert!((combo.y - (alpha * lu.y + beta * lv.y)).abs() < 1e-12);
    }

    #[test]
    fn gcp_file_method_check() {
        let dir = std::env::temp_dir();
        let good = dir.join("mk_test_gcps_good.json");
        std::fs::write(
            &good,
            r#"{"method": "affine", "gcps": [{"px": 0, "py": 0, "lon": 1, "lat": 2}]}"#,
        )
        .unwrap();
        assert_eq!(load_gcp_file(&good).unwrap().len(), 1);
        let bad = dir.join("mk_test_gcps_bad.json");
        std::fs::write(&bad, r#"{"method": "thin-plate-spline", "gcps": []}"#).unwrap();
        assert!(matches!(
            load_gcp_file(&bad),
            Err(Error::UnsupportedMethod(_))
        ));
        let _ = std::fs::remove_file(good);
        let _ = std::fs::remove_file(bad);
    }
}
