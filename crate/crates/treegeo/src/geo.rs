//! Core geodesy: WGS84 point type, local metric distance, and bearing/offset
//! arithmetic valid at sub-kilometer scale.
//!
//! All distances use the equirectangular approximation on a sphere of mean
//! radius [`EARTH_RADIUS_M`]. At the working scale of this pipeline (pairs
//! well under 100 m apart) the error against a great-circle computation is
//! negligible, and the formula is analytically invertible, which `offset`
//! relies on.

use crate::error::{Error, Result};

/// IUGG mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// A WGS84 latitude/longitude pair in degrees.
///
/// Invariants: both components finite, `lat` in [-90, 90], `lon` in [-180, 180).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    lat_deg: f64,
    lon_deg: f64,
}

impl GeoPoint {
    /// Builds a point, validating the WGS84 ranges.
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self> {
        if !lat_deg.is_finite() || !(-90.0..=90.0).contains(&lat_deg) {
            return Err(Error::InvalidCoordinate(format!(
                "latitude {lat_deg} outside [-90, 90]"
            )));
        }
        if !lon_deg.is_finite() || !(-180.0..180.0).contains(&lon_deg) {
            return Err(Error::InvalidCoordinate(format!(
                "longitude {lon_deg} outside [-180, 180)"
            )));
        }
        Ok(Self { lat_deg, lon_deg })
    }

    pub fn lat(&self) -> f64 {
        self.lat_deg
    }

    pub fn lon(&self) -> f64 {
        self.lon_deg
    }
}

/// Wraps a longitude into [-180, 180).
fn wrap_lon(lon: f64) -> f64 {
    let mut l = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if l >= 180.0 {
        l -= 360.0;
    }
    l
}

/// Wraps a bearing into [0, 360).
pub fn wrap_bearing(deg: f64) -> f64 {
    let mut b = deg.rem_euclid(360.0);
    if b >= 360.0 {
        b -= 360.0;
    }
    b
}

/// Local metric distance in meters between two nearby points.
///
/// Equirectangular: `dx = R * dlon * cos(lat_mid)`, `dy = R * dlat`,
/// `d = sqrt(dx^2 + dy^2)`. Symmetric, zero iff the points are identical.
/// Intended for separations below ~10 km.
pub fn local_distance_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat_mid = 0.5 * (a.lat_deg + b.lat_deg);
    let dlat = (b.lat_deg - a.lat_deg).to_radians();
    let dlon = wrap_lon(b.lon_deg - a.lon_deg).to_radians();
    let dx = EARTH_RADIUS_M * dlon * lat_mid.to_radians().cos();
    let dy = EARTH_RADIUS_M * dlat;
    (dx * dx + dy * dy).sqrt()
}

/// Initial bearing from `a` to `b`, degrees clockwise from true north in [0, 360).
///
/// Uses the same local planar model as [`local_distance_m`] so that
/// `offset(a, bearing_deg(a, b), local_distance_m(a, b))` recovers `b`.
pub fn bearing_deg(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat_mid = 0.5 * (a.lat_deg + b.lat_deg);
    let dlat = (b.lat_deg - a.lat_deg).to_radians();
    let dlon = wrap_lon(b.lon_deg - a.lon_deg).to_radians();
    let dx = dlon * lat_mid.to_radians().cos();
    let dy = dlat;
    wrap_bearing(dx.atan2(dy).to_degrees())
}

/// Moves `distance_m` meters from `origin` along `bearing_deg` (clockwise from
/// true north). Inverse of [`local_distance_m`] in the small-distance regime:
/// bearing 0 increases latitude, bearing 90 increases longitude.
pub fn offset(origin: GeoPoint, bearing_deg: f64, distance_m: f64) -> GeoPoint {
    debug_assert!((0.0..10_000.0).contains(&distance_m));
    let b = bearing_deg.to_radians();
    let dy = distance_m * b.cos();
    let dx = distance_m * b.sin();
    translate(origin, dx, dy)
}

/// Metric east/north offsets of `p` relative to `origin` in the local planar
/// frame. Inverse of [`translate`].
pub fn local_east_north(origin: GeoPoint, p: GeoPoint) -> (f64, f64) {
    let lat_mid = 0.5 * (origin.lat_deg + p.lat_deg);
    let north = (p.lat_deg - origin.lat_deg).to_radians() * EARTH_RADIUS_M;
    let east = wrap_lon(p.lon_deg - origin.lon_deg).to_radians()
        * EARTH_RADIUS_M
        * lat_mid.to_radians().cos();
    (east, north)
}

/// Moves `origin` by metric east/north offsets in the local planar frame.
pub fn translate(origin: GeoPoint, east_m: f64, north_m: f64) -> GeoPoint {
    let dlat = (north_m / EARTH_RADIUS_M).to_degrees();
    let lat = (origin.lat_deg + dlat).clamp(-90.0, 90.0);
    // Same midpoint convention as local_distance_m, so the pair inverts exactly.
    let lat_mid = 0.5 * (origin.lat_deg + lat);
    let dlon = (east_m / (EARTH_RADIUS_M * lat_mid.to_radians().cos())).to_degrees();
    let lon = wrap_lon(origin.lon_deg + dlon);
    GeoPoint {
        lat_deg: lat,
        lon_deg: lon,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Great-circle oracle, used only to cross-check the equirectangular metric.
    pub(crate) fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
        let (la, lb) = (a.lat().to_radians(), b.lat().to_radians());
        let dlat = lb - la;
        let dlon = wrap_lon(b.lon() - a.lon()).to_radians();
        let s = (dlat / 2.0).sin().powi(2) + la.cos() * lb.cos() * (dlon / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * s.sqrt().asin()
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(GeoPoint::new(90.1, 0.0).is_err());
        assert!(GeoPoint::new(0.0, 180.0).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert!(GeoPoint::new(-90.0, -180.0).is_ok());
    }

    #[test]
    fn identical_points_have_zero_distance() {
        let p = GeoPoint::new(37.0, -122.0).unwrap();
        assert_eq!(local_distance_m(p, p), 0.0);
    }

    #[test]
    fn one_millidegree_of_latitude() {
        let a = GeoPoint::new(0.0, 0.0).unwrap();
        let b = GeoPoint::new(0.001, 0.0).unwrap();
        let d = local_distance_m(a, b);
        assert!((d - 111.195).abs() < 0.001, "got {d}");
    }

    #[test]
    fn matches_haversine_within_half_percent() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..1000 {
            let lat = rng.random_range(-60.0..60.0);
            let lon = rng.random_range(-179.0..179.0);
            let a = GeoPoint::new(lat, lon).unwrap();
            let b = offset(
                a,
                rng.random_range(0.0..360.0),
                rng.random_range(0.0..1000.0),
            );
            let eq = local_distance_m(a, b);
            let hv = haversine_m(a, b);
            if hv > 1.0 {
                assert!(
                    (eq - hv).abs() / hv < 0.005,
                    "equirect {eq} vs haversine {hv} at {lat},{lon}"
                );
            }
        }
    }

    #[test]
    fn symmetry_is_exact() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..200 {
            let a = GeoPoint::new(
                rng.random_range(-60.0..60.0),
                rng.random_range(-179.0..179.0),
            )
            .unwrap();
            let b = offset(
                a,
                rng.random_range(0.0..360.0),
                rng.random_range(0.0..900.0),
            );
            assert_eq!(local_distance_m(a, b), local_distance_m(b, a));
        }
    }

    #[test]
    fn triangle_inequality_within_slack() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..500 {
            let o = GeoPoint::new(
                rng.random_range(-60.0..60.0),
                rng.random_range(-179.0..179.0),
            )
            .unwrap();
            let a = offset(
                o,
                rng.random_range(0.0..360.0),
                rng.random_range(0.0..500.0),
            );
            let b = offset(
                o,
                rng.random_range(0.0..360.0),
                rng.random_range(0.0..500.0),
            );
            let c = offset(
                o,
                rng.random_range(0.0..360.0),
                rng.random_range(0.0..500.0),
            );
            let ab = local_distance_m(a, b);
            let bc = local_distance_m(b, c);
            let ac = local_distance_m(a, c);
            assert!(ac <= ab + bc + 1e-9);
        }
    }

    #[test]
    fn offset_zero_distance_is_identity() {
        let p = GeoPoint::new(37.0, -122.0).unwrap();
        let q = offset(p, 123.0, 0.0);
        assert_eq!(p, q);
    }

    #[test]
    fn offset_north_adds_latitude() {
        let p = GeoPoint::new(37.0, -122.0).unwrap();
        let q = offset(p, 0.0, 111.195);
        assert!((q.lat() - 37.001).abs() < 1e-8, "lat {}", q.lat());
        assert_eq!(q.lon(), p.lon());
    }

    #[test]
    fn offset_distance_round_trip() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..1000 {
            let p = GeoPoint::new(
                rng.random_range(-60.0..60.0),
                rng.random_range(-179.0..179.0),
            )
            .unwrap();
            let bearing = rng.random_range(0.0..360.0);
            let d = rng.random_range(0.1..2000.0);
            let q = offset(p, bearing, d);
            let back = local_distance_m(p, q);
            assert!((back - d).abs() / d < 1e-6, "d {d} back {back}");
            let br = bearing_deg(p, q);
            let diff = (br - bearing).abs().min(360.0 - (br - bearing).abs());
            assert!(diff < 1e-6, "bearing {bearing} recovered {br}");
        }
    }

    #[test]
    fn lon_wraps_across_antimeridian() {
        let p = GeoPoint::new(0.0, 179.9999).unwrap();
        let q = offset(p, 90.0, 100.0);
        assert!(q.lon() < -179.99);
        assert!((local_distance_m(p, q) - 100.0).abs() < 1e-6);
    }
}
