//! Ground projection of detection bounding boxes in equirectangular
//! street-level panoramas.
//!
//! Model: locally flat terrain, camera level with the ground (pitch 0), so
//! the horizon sits on the horizontal center line of the panorama. A pixel
//! column maps linearly to a compass bearing; the depression angle of the
//! bounding-box bottom edge plus the camera height give the ground distance.

use crate::error::{Error, Result};
use crate::geo::{self, GeoPoint};
use crate::par::par_iter;
#[cfg(feature = "parallel")]
use crate::par::*;

/// Default camera height above ground, meters.
pub const DEFAULT_CAMERA_HEIGHT_M: f64 = 3.0;
/// Default cutoff for projected ground distance, meters.
pub const DEFAULT_MAX_DISTANCE_M: f64 = 50.0;

/// Pose and geometry of one full equirectangular panorama.
#[derive(Debug, Clone, PartialEq)]
pub struct PanoramaMeta {
    pub pano_id: String,
    pub camera: GeoPoint,
    /// Compass heading of the image center column, degrees clockwise from north.
    pub heading_deg: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub camera_height_m: f64,
}

impl PanoramaMeta {
    /// Validates the full-sphere aspect ratio (width = 2 x height) and the
    /// heading range.
    pub fn new(
        pano_id: String,
        camera: GeoPoint,
        heading_deg: f64,
        width_px: u32,
        height_px: u32,
        camera_height_m: f64,
    ) -> Result<Self> {
        if width_px == 0 || height_px == 0 || width_px != 2 * height_px {
            return Err(Error::Degenerate(format!(
                "panorama {pano_id}: expected width = 2 x height, got {width_px} x {height_px}"
            )));
        }
        if !(0.0..360.0).contains(&heading_deg) {
            return Err(Error::Degenerate(format!(
                "panorama {pano_id}: heading {heading_deg} outside [0, 360)"
            )));
        }
        if camera_height_m.is_nan() || camera_height_m <= 0.0 {
            return Err(Error::Degenerate(format!(
                "panorama {pano_id}: camera height must be positive"
            )));
        }
        Ok(Self {
            pano_id,
            camera,
            heading_deg,
            width_px,
            height_px,
            camera_height_m,
        })
    }
}

/// One detector bounding box in panorama pixel coordinates (y down), with a
/// confidence score in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub pano_id: String,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub score: f64,
}

impl Detection {
    pub fn new(
        pano_id: String,
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        score: f64,
    ) -> Result<Self> {
        if x_min.partial_cmp(&x_max) != Some(std::cmp::Ordering::Less)
            || y_min.partial_cmp(&y_max) != Some(std::cmp::Ordering::Less)
        {
            return Err(Error::Degenerate(format!(
                "detection in {pano_id}: empty bounding box [{x_min},{y_min},{x_max},{y_max}]"
            )));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Degenerate(format!(
                "detection in {pano_id}: score {score} outside [0, 1]"
            )));
        }
        Ok(Self {
            pano_id,
            x_min,
            y_min,
            x_max,
            y_max,
            score,
        })
    }
}

/// A detection projected to a geographic ground point.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedDetection {
    pub point: GeoPoint,
    pub score: f64,
    pub source_pano: String,
    pub camera_distance_m: f64,
}

/// Projects the bottom-center of a detection box to a ground point.
///
/// Bearing: `heading + (u/width - 1/2) * 360`, wrapped to [0, 360), where `u`
/// is the box center column. Depression: `theta = (v/height - 1/2) * 180`
/// degrees, where `v` is the box bottom row; `theta` must be positive or the
/// box does not intersect the ground. Ground distance: `h / tan(theta)`.
pub fn project_detection(
    pano: &PanoramaMeta,
    det: &Detection,
    max_distance_m: f64,
) -> Result<ProjectedDetection> {
    assert_eq!(
        pano.pano_id, det.pano_id,
        "detection paired with wrong panorama"
    );
    let width = pano.width_px as f64;
    let height = pano.height_px as f64;
    if det.x_min < 0.0 || det.y_min < 0.0 || det.x_max > width || det.y_max > height {
        return Err(Error::Degenerate(format!(
            "detection in {}: box outside image bounds",
            det.pano_id
        )));
    }

    let u = 0.5 * (det.x_min + det.x_max);
    let v = det.y_max;
    let theta_deg = (v - height / 2.0) / height * 180.0;
    if theta_deg <= 0.0 {
        return Err(Error::NoGroundIntersection);
    }
    let distance = pano.camera_height_m / theta_deg.to_radians().tan();
    if distance > max_distance_m {
        return Err(Error::TooFar(distance));
    }
    let bearing = geo::wrap_bearing(pano.heading_deg + (u / width - 0.5) * 360.0);
    Ok(ProjectedDetection {
        point: geo::offset(pano.camera, bearing, distance),
        score: det.score,
        source_pano: det.pano_id.clone(),
        camera_distance_m: distance,
    })
}

/// Skip counters from a batch projection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProjectStats {
    pub projected: usize,
    /// Box bottom at or above the horizon line.
    pub no_ground: usize,
    /// Ground point beyond the distance cutoff.
    pub too_far: usize,
    /// Box invalid for its panorama, or panorama unknown.
    pub invalid: usize,
}

/// Projects a batch of detections against their panorama metadata, skipping
/// and counting the failures. Output preserves input order.
pub fn project_all(
    panos: &[PanoramaMeta],
    detections: &[Detection],
    max_distance_m: f64,
) -> (Vec<ProjectedDetection>, ProjectStats) {
    use std::collections::HashMap;
    let by_id: HashMap<&str, &PanoramaMeta> =
        panos.iter().map(|p| (p.pano_id.as_str(), p)).collect();

    let results: Vec<std::result::Result<ProjectedDetection, u8>> = par_iter!(detections)
        .map(|det| match by_id.get(det.pano_id.as_str()) {
            Some(pano) => match project_detection(pano, det, max_distance_m) {
                Ok(p) => Ok(p),
                Err(Error::NoGroundIntersection) => Err(1),
                Err(Error::TooFar(_)) => Err(2),
                Err(_) => Err(3),
            },
            None => Err(3),
        })
        .collect();

    let mut stats = ProjectStats::default();
    let mut projected = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(p) => {
                stats.projected += 1;
                projected.push(p);
            }
            Err(1) => stats.no_ground += 1,
            Err(2) => stats.too_far += 1,
            Err(_) => stats.invalid += 1,
        }
    }
    (projected, stats)
}

/// Pixel width used when synthesizing boxes: the angular size of a 2 m wide
/// trunk at the tree's distance.
const SYNTH_TRUNK_WIDTH_M: f64 = 2.0;

/// Inverse of [`project_detection`]: builds a bounding box whose bottom-center
/// pixel projects back to `tree` (within float precision). The tree must lie
/// in (0, `max_distance_m`] meters of the camera.
pub fn synthesize_detection(
    pano: &PanoramaMeta,
    tree: GeoPoint,
    score: f64,
    max_distance_m: f64,
) -> Result<Detection> {
    let d = geo::local_distance_m(pano.camera, tree);
    if d <= 0.0 {
        return Err(Error::Degenerate(
            "cannot synthesize a detection for a tree at the camera position".into(),
        ));
    }
    if d > max_distance_m {
        return Err(Error::TooFar(d));
    }
    let width = pano.width_px as f64;
    let height = pano.height_px as f64;

    let bearing = geo::bearing_deg(pano.camera, tree);
    let mut u = (geo::wrap_bearing(bearing - pano.heading_deg) / 360.0 + 0.5) * width;
    if u >= width {
        u -= width;
    }
    let theta_deg = (pano.camera_height_m / d).atan().to_degrees();
    let v = (theta_deg / 180.0 + 0.5) * height;

    // Trunk angular size in pixels, clipped so the box stays inside the image
    // near the seam. Only the bottom-center matters to the projection.
    let angular_half_width_deg = (SYNTH_TRUNK_WIDTH_M / 2.0 / d).atan().to_degrees();
    let half_w = (angular_half_width_deg / 360.0 * width)
        .min(u)
        .min(width - u);
    let box_h = (half_w * 2.0).max(1.0).min(v);

    Detection::new(
        pano.pano_id.clone(),
        u - half_w,
        (v - box_h).max(0.0),
        u + half_w,
        v,
        score,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn pano(heading: f64) -> PanoramaMeta {
        PanoramaMeta::new(
            "p0".into(),
            GeoPoint::new(37.0, -122.0).unwrap(),
            heading,
            8192,
            4096,
            3.0,
        )
        .unwrap()
    }

    fn det_at(u: f64, v: f64) -> Detection {
        Detection::new("p0".into(), u - 10.0, v - 30.0, u + 10.0, v, 0.9).unwrap()
    }

    #[test]
    fn forty_five_degree_depression_lands_at_camera_height_distance() {
        // theta = 45 deg at v = 3/4 height; d = h / tan(45) = h = 3 m.
        let p = pano(0.0);
        let v = 0.75 * p.height_px as f64;
        let u = 0.5 * p.width_px as f64;
        let proj = project_detection(&p, &det_at(u, v), 50.0).unwrap();
        assert!((proj.camera_distance_m - 3.0).abs() < 1e-12);
        let d = geo::local_distance_m(p.camera, proj.point);
        assert!((d - 3.0).abs() < 1e-9, "distance {d}");
        // Due north of the camera.
        let b = geo::bearing_deg(p.camera, proj.point);
        assert!(!(1e-9..=360.0 - 1e-9).contains(&b), "bearing {b}");
    }

    #[test]
    fn quarter_image_left_is_minus_ninety_degrees() {
        let p = pano(200.0);
        let u = 0.5 * p.width_px as f64 - 0.25 * p.width_px as f64;
        let v = 0.75 * p.height_px as f64;
        let proj = project_detection(&p, &det_at(u, v), 50.0).unwrap();
        let b = geo::bearing_deg(p.camera, proj.point);
        assert!((b - 110.0).abs() < 1e-6, "bearing {b}");
    }

    #[test]
    fn bottom_on_horizon_has_no_ground_intersection() {
        let p = pano(0.0);
        let v = 0.5 * p.height_px as f64;
        let err = project_detection(&p, &det_at(100.0, v), 50.0).unwrap_err();
        assert!(matches!(err, Error::NoGroundIntersection));
    }

    #[test]
    fn distant_ground_point_rejected() {
        let p = pano(0.0);
        // Just below the horizon: tan(theta) tiny, distance enormous.
        let v = 0.5 * p.height_px as f64 + 1.0;
        let err = project_detection(&p, &det_at(100.0, v), 50.0).unwrap_err();
        assert!(matches!(err, Error::TooFar(_)));
    }

    #[test]
    fn synthesize_rejects_tree_at_camera() {
        let p = pano(0.0);
        let err = synthesize_detection(&p, p.camera, 0.9, 50.0).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn tree_due_north_at_three_meters_sits_at_three_quarters_height() {
        let p = pano(0.0);
        let tree = geo::offset(p.camera, 0.0, 3.0);
        let det = synthesize_detection(&p, tree, 0.9, 50.0).unwrap();
        let v_expected = 0.75 * p.height_px as f64;
        assert!((det.y_max - v_expected).abs() < 1e-6, "v {}", det.y_max);
        let u = 0.5 * (det.x_min + det.x_max);
        assert!((u - 0.5 * p.width_px as f64).abs() < 1e-6);
    }

    #[test]
    fn round_trip_recovers_tree_position() {
        let mut rng = StdRng::seed_from_u64(41);
        let mut max_err: f64 = 0.0;
        for i in 0..1000 {
            let camera = GeoPoint::new(
                rng.random_range(-60.0..60.0),
                rng.random_range(-179.0..179.0),
            )
            .unwrap();
            let p = PanoramaMeta::new(
                format!("p{i}"),
                camera,
                rng.random_range(0.0..360.0),
                8192,
                4096,
                3.0,
            )
            .unwrap();
            let tree = geo::offset(
                camera,
                rng.random_range(0.0..360.0),
                rng.random_range(0.5..50.0),
            );
            let det = synthesize_detection(&p, tree, 0.8, 50.0).unwrap();
            let proj = project_detection(&p, &det, 50.0).unwrap();
            max_err = max_err.max(geo::local_distance_m(proj.point, tree));
        }
        assert!(max_err < 1e-6, "max recovery error {max_err} m");
    }

    #[test]
    fn project_all_counts_skips() {
        let p = pano(0.0);
        let dets = vec![
            det_at(100.0, 0.75 * 4096.0),
            det_at(100.0, 0.5 * 4096.0),       // on horizon
            det_at(100.0, 0.5 * 4096.0 + 1.0), // too far
        ];
        let (projected, stats) = project_all(std::slice::from_ref(&p), &dets, 50.0);
        assert_eq!(projected.len(), 1);
        assert_eq!(stats.projected, 1);
        assert_eq!(stats.no_ground, 1);
        assert_eq!(stats.too_far, 1);
    }

    proptest! {
        /// For a fixed column, moving the box bottom down strictly shrinks
        /// the ground distance.
        #[test]
        fn distance_monotone_in_bottom_row(
            v1 in 2049.0..4095.0f64,
            dv in 1.0..1000.0f64,
        ) {
            let p = pano(0.0);
            let v2 = (v1 + dv).min(4096.0);
            prop_assume!(v2 > v1);
            let d1 = project_detection(&p, &det_at(100.0, v1), f64::INFINITY).unwrap();
            let d2 = project_detection(&p, &det_at(100.0, v2), f64::INFINITY).unwrap();
            prop_assert!(d2.camera_distance_m < d1.camera_distance_m);
        }

        /// Bearing is affine in the box center column with slope 360/width,
        /// and wraps across the seam.
        #[test]
        fn bearing_affine_in_column(
            u in 20.0..8172.0f64,
            du in -2000.0..2000.0f64,
            heading in 0.0..360.0f64,
        ) {
            let p = pano(heading);
            let width = p.width_px as f64;
            let u2 = (u + du).rem_euclid(width);
            prop_assume!(u2 > 15.0 && u2 < width - 15.0);
            let v = 0.75 * 4096.0;
            let b1 = geo::bearing_deg(p.camera, project_detection(&p, &det_at(u, v), 50.0).unwrap().point);
            let b2 = geo::bearing_deg(p.camera, project_detection(&p, &det_at(u2, v), 50.0).unwrap().point);
            let expected = geo::wrap_bearing((u2 - u) * 360.0 / width);
            let got = geo::wrap_bearing(b2 - b1);
            let diff = (got - expected).abs().min(360.0 - (got - expected).abs());
            prop_assert!(diff < 1e-6, "slope mismatch: expected {expected}, got {got}");
        }
    }
}
