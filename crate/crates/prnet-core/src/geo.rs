//! Geographic primitives: points, bounding boxes, and the local
//! equirectangular projection used for every meter-valued distance.

use serde::{Deserialize, Serialize};

/// Mean Earth radius in meters (IUGG).
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// A WGS-84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }
}

/// Axis-aligned geographic bounding box in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Self {
        assert!(lat_max > lat_min && lon_max > lon_min, "degenerate bounding box");
        Self { lat_min, lat_max, lon_min, lon_max }
    }

    /// Smallest box strictly containing all points, expanded by a relative
    /// margin so boundary points never normalize to exactly 0 or 1.
    pub fn enclosing(points: impl IntoIterator<Item = GeoPoint>, margin: f64) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let (mut lat_min, mut lat_max) = (first.lat, first.lat);
        let (mut lon_min, mut lon_max) = (first.lon, first.lon);
        for p in it {
            lat_min = lat_min.min(p.lat);
            lat_max = lat_max.max(p.lat);
            lon_min = lon_min.min(p.lon);
            lon_max = lon_max.max(p.lon);
        }
        let dlat = (lat_max - lat_min).max(1e-6) * margin;
        let dlon = (lon_max - lon_min).max(1e-6) * margin;
        Some(Self::new(lat_min - dlat, lat_max + dlat, lon_min - dlon, lon_max + dlon))
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint::new(
            0.5 * (self.lat_min + self.lat_max),
            0.5 * (self.lon_min + self.lon_max),
        )
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lat >= self.lat_min && p.lat <= self.lat_max && p.lon >= self.lon_min && p.lon <= self.lon_max
    }

    /// Map a point into unit-box coordinates (x = lon axis, y = lat axis).
    pub fn normalize(&self, p: GeoPoint) -> [f64; 2] {
        [
            (p.lat - self.lat_min) / (self.lat_max - self.lat_min),
            (p.lon - self.lon_min) / (self.lon_max - self.lon_min),
        ]
    }

    /// Inverse of [`normalize`](Self::normalize).
    pub fn denormalize(&self, unit: [f64; 2]) -> GeoPoint {
        GeoPoint::new(
            self.lat_min + unit[0] * (self.lat_max - self.lat_min),
            self.lon_min + unit[1] * (self.lon_max - self.lon_min),
        )
    }

    /// Meters per unit step along the normalized lat / lon axes.
    ///
    /// Because the equirectangular projection is affine over the box, these
    /// two scales turn unit-box displacements into meter displacements.
    pub fn unit_scale_m(&self) -> [f64; 2] {
        let proj = Projection::new(self.center());
        let a = proj.project(GeoPoint::new(self.lat_min, self.lon_min));
        let b = proj.project(GeoPoint::new(self.lat_max, self.lon_min));
        let c = proj.project(GeoPoint::new(self.lat_min, self.lon_max));
        [(b[1] - a[1]).abs(), (c[0] - a[0]).abs()]
    }
}

/// Equirectangular projection anchored at a reference point.
///
/// Valid for the few-kilometer areas this crate works with; the error
/// against great-circle distance stays well below 0.5% there.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    anchor: GeoPoint,
    cos_lat: f64,
}

impl Projection {
    pub fn new(anchor: GeoPoint) -> Self {
        Self { anchor, cos_lat: anchor.lat.to_radians().cos() }
    }

    /// Project to local meters, x east, y north.
    pub fn project(&self, p: GeoPoint) -> [f64; 2] {
        let x = (p.lon - self.anchor.lon).to_radians() * self.cos_lat * EARTH_RADIUS_M;
        let y = (p.lat - self.anchor.lat).to_radians() * EARTH_RADIUS_M;
        [x, y]
    }

    pub fn unproject(&self, xy: [f64; 2]) -> GeoPoint {
        let lon = self.anchor.lon + (xy[0] / (self.cos_lat * EARTH_RADIUS_M)).to_degrees();
        let lat = self.anchor.lat + (xy[1] / EARTH_RADIUS_M).to_degrees();
        GeoPoint::new(lat, lon)
    }

    pub fn distance_m(&self, a: GeoPoint, b: GeoPoint) -> f64 {
        let pa = self.project(a);
        let pb = self.project(b);
        ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt()
    }
}

/// Great-circle distance in meters. Used as the independent cross-check
/// for the projected distance, not on any hot path.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (la1, la2) = (a.lat.to_radians(), b.lat.to_radians());
    let dla = la2 - la1;
    let dlo = (b.lon - a.lon).to_radians();
    let h = (dla / 2.0).sin().powi(2) + la1.cos() * la2.cos() * (dlo / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().asin()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_round_trips() {
        let bbox = BoundingBox::new(31.0, 31.02, 121.0, 121.03);
        let p = GeoPoint::new(31.0137, 121.0212);
        let back = bbox.denormalize(bbox.normalize(p));
        assert!((back.lat - p.lat).abs() < 1e-9);
        assert!((back.lon - p.lon).abs() < 1e-9);
    }

    #[test]
    fn projection_matches_haversine_at_desk_scale() {
        let anchor = GeoPoint::new(31.01, 121.015);
        let proj = Projection::new(anchor);
        let a = GeoPoint::new(31.002, 121.001);
        let b = GeoPoint::new(31.018, 121.029);
        let d_proj = proj.distance_m(a, b);
        let d_hav = haversine_m(a, b);
        assert!((d_proj - d_hav).abs() / d_hav < 0.005, "{d_proj} vs {d_hav}");
    }

    #[test]
    fn unit_scale_converts_normalized_displacements() {
        let bbox = BoundingBox::new(31.0, 31.02, 121.0, 121.03);
        let scale = bbox.unit_scale_m();
        let a = bbox.denormalize([0.2, 0.4]);
        let b = bbox.denormalize([0.25, 0.4]);
        let d = Projection::new(bbox.center()).distance_m(a, b);
        assert!((d - 0.05 * scale[0]).abs() < 1e-6);
    }

    #[test]
    fn enclosing_box_strictly_contains_inputs() {
        let pts = vec![GeoPoint::new(31.0, 121.0), GeoPoint::new(31.01, 121.02)];
        let bbox = BoundingBox::enclosing(pts.clone(), 1e-3).unwrap();
        for p in pts {
            assert!(bbox.contains(p));
            let n = bbox.normalize(p);
            assert!(n[0] > 0.0 && n[0] < 1.0 && n[1] > 0.0 && n[1] < 1.0);
        }
    }
}
