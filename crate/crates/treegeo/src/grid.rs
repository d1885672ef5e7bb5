//! Uniform lat/lon bucket grid for radius-bounded neighbor queries.
//!
//! Cell size is chosen so that every pair within `radius_m` meters lands in
//! the same or an adjacent cell, which makes a 3x3 neighborhood scan exact.

use std::collections::HashMap;

use crate::geo::{GeoPoint, EARTH_RADIUS_M};

const METERS_PER_DEG_LAT: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

pub(crate) struct BucketGrid {
    cell_lat_deg: f64,
    cell_lon_deg: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl BucketGrid {
    /// Indexes `points` for neighbor queries at `radius_m`.
    ///
    /// The longitude cell width is derived from the smallest meters-per-degree
    /// over the data's latitude span, padded by one radius of latitude:
    /// query points within `radius_m` of an indexed point can sit that far
    /// above the indexed span, and their pair midpoints must still fall in a
    /// regime where cells are at least `radius_m` wide.
    pub(crate) fn build(points: &[GeoPoint], radius_m: f64) -> Self {
        assert!(radius_m > 0.0);
        let max_abs_lat = (points.iter().map(|p| p.lat().abs()).fold(0.0_f64, f64::max)
            + radius_m / METERS_PER_DEG_LAT)
            .min(89.9);
        let meters_per_deg_lon = METERS_PER_DEG_LAT * max_abs_lat.to_radians().cos();
        let cell_lat_deg = radius_m / METERS_PER_DEG_LAT;
        let cell_lon_deg = radius_m / meters_per_deg_lon;
        let mut grid = Self {
            cell_lat_deg,
            cell_lon_deg,
            cells: HashMap::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let key = grid.key(*p);
            grid.cells.entry(key).or_default().push(i);
        }
        grid
    }

    fn key(&self, p: GeoPoint) -> (i64, i64) {
        (
            (p.lat() / self.cell_lat_deg).floor() as i64,
            (p.lon() / self.cell_lon_deg).floor() as i64,
        )
    }

    /// Indices of all indexed points in the 3x3 cell neighborhood of `p`,
    /// in ascending index order. A superset of the true `radius_m` neighbors;
    /// callers apply the exact distance test.
    pub(crate) fn neighborhood(&self, p: GeoPoint) -> Vec<usize> {
        let (kr, kc) = self.key(p);
        let mut out = Vec::new();
        for dr in -1..=1 {
            for dc in -1..=1 {
                if let Some(ids) = self.cells.get(&(kr + dr, kc + dc)) {
                    out.extend_from_slice(ids);
                }
            }
        }
        out.sort_unstable();
        out
    }
}
