//! Multi-view detection fusion: collapse repeated projections of one physical
//! tree into a single position by greedy suppression with inverse-distance
//! weighting of detection scores.

use std::collections::BTreeSet;

use crate::geo::{self, GeoPoint};
use crate::grid::BucketGrid;
use crate::project::ProjectedDetection;

/// Default clustering/IDW neighborhood radius, meters.
pub const DEFAULT_FUSE_RADIUS_M: f64 = 4.0;
/// Default additive IDW smoothing term, meters; bounds the self term.
pub const DEFAULT_IDW_EPSILON_M: f64 = 1.0;
/// Default inverse-distance exponent.
pub const DEFAULT_IDW_EXPONENT: f64 = 1.0;

/// Fusion tuning knobs; all three shape the IDW aggregate
/// `sum score_j / (epsilon + d_ij)^exponent` over the radius neighborhood.
#[derive(Debug, Clone, Copy)]
pub struct FuseParams {
    pub radius_m: f64,
    pub idw_epsilon_m: f64,
    pub idw_exponent: f64,
}

impl Default for FuseParams {
    fn default() -> Self {
        Self {
            radius_m: DEFAULT_FUSE_RADIUS_M,
            idw_epsilon_m: DEFAULT_IDW_EPSILON_M,
            idw_exponent: DEFAULT_IDW_EXPONENT,
        }
    }
}

impl FuseParams {
    fn weight_denominator(&self, distance_m: f64) -> f64 {
        let base = self.idw_epsilon_m + distance_m;
        if self.idw_exponent == 1.0 {
            base
        } else {
            base.powf(self.idw_exponent)
        }
    }
}

/// A single fused tree position aggregated from one or more projected
/// detections. The point lies in the convex hull of its members.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedTree {
    pub point: GeoPoint,
    /// IDW score aggregate of the winning detection at selection time.
    pub fused_score: f64,
    pub member_count: usize,
    pub member_panos: BTreeSet<String>,
}

/// Canonical content-based detection order: panorama id, then score, then
/// position. Makes the greedy procedure independent of input order.
fn canonical_key(d: &ProjectedDetection) -> (&str, f64, f64, f64, f64) {
    (
        d.source_pano.as_str(),
        d.score,
        d.point.lat(),
        d.point.lon(),
        d.camera_distance_m,
    )
}

fn canonical_cmp(a: &ProjectedDetection, b: &ProjectedDetection) -> std::cmp::Ordering {
    let (ap, asc, alat, alon, ad) = canonical_key(a);
    let (bp, bsc, blat, blon, bd) = canonical_key(b);
    ap.cmp(bp)
        .then(asc.total_cmp(&bsc))
        .then(alat.total_cmp(&blat))
        .then(alon.total_cmp(&blon))
        .then(ad.total_cmp(&bd))
}

/// Greedy IDW fusion.
///
/// Repeats until no detections remain: score every remaining detection by the
/// IDW aggregate of its neighbors within `radius_m` (self term included at
/// distance zero), pick the highest aggregate (ties to the lower panorama id,
/// then the lower score), average the winner's neighborhood using each
/// member's own aggregate as its weight, and remove the cluster. Equal-score
/// symmetric pairs therefore fuse at their midpoint. Output is ordered by
/// descending fused score.
pub fn fuse_detections(dets: &[ProjectedDetection], params: &FuseParams) -> Vec<FusedTree> {
    assert!(params.radius_m > 0.0 && params.idw_epsilon_m > 0.0 && params.idw_exponent > 0.0);
    if dets.is_empty() {
        return Vec::new();
    }

    // Work on a canonically sorted copy so results are content-determined.
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| canonical_cmp(&dets[a], &dets[b]));
    let dets: Vec<&ProjectedDetection> = order.into_iter().map(|i| &dets[i]).collect();
    let n = dets.len();

    let points: Vec<GeoPoint> = dets.iter().map(|d| d.point).collect();
    let grid = BucketGrid::build(&points, params.radius_m);

    // neighbors[i]: (j, distance) for all j within radius, ascending j.
    let neighbors: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            grid.neighborhood(points[i])
                .into_iter()
                .filter_map(|j| {
                    let d = geo::local_distance_m(points[i], points[j]);
                    (d <= params.radius_m).then_some((j, d))
                })
                .collect()
        })
        .collect();

    let mut remaining = vec![true; n];
    let idw_sum = |i: usize, remaining: &[bool]| -> f64 {
        neighbors[i]
            .iter()
            .filter(|(j, _)| remaining[*j])
            .map(|(j, d)| dets[*j].score / params.weight_denominator(*d))
            .sum()
    };

    let mut scores: Vec<f64> = (0..n).map(|i| idw_sum(i, &remaining)).collect();
    let mut left = n;
    let mut out = Vec::new();

    while left > 0 {
        // Ascending scan with strict '>' keeps the lowest canonical index
        // (lower pano id, then lower score) among ties.
        let mut best = usize::MAX;
        for i in 0..n {
            if remaining[i] && (best == usize::MAX || scores[i] > scores[best]) {
                best = i;
            }
        }

        let cluster: Vec<(usize, f64)> = neighbors[best]
            .iter()
            .filter(|(j, _)| remaining[*j])
            .copied()
            .collect();

        let mut w_sum = 0.0;
        let mut east = 0.0;
        let mut north = 0.0;
        let mut panos = BTreeSet::new();
        for &(j, _) in &cluster {
            let w = scores[j];
            let (e, no) = geo::local_east_north(points[best], points[j]);
            w_sum += w;
            east += w * e;
            north += w * no;
            panos.insert(dets[j].source_pano.clone());
        }
        out.push(FusedTree {
            point: geo::translate(points[best], east / w_sum, north / w_sum),
            fused_score: scores[best],
            member_count: cluster.len(),
            member_panos: panos,
        });

        for &(j, _) in &cluster {
            remaining[j] = false;
        }
        left -= cluster.len();

        // Refresh aggregates that lost a neighbor; each refresh is a clean
        // sum over the current remaining set.
        let mut dirty = BTreeSet::new();
        for &(j, _) in &cluster {
            for &(k, _) in &neighbors[j] {
                if remaining[k] {
                    dirty.insert(k);
                }
            }
        }
        for k in dirty {
            scores[k] = idw_sum(k, &remaining);
        }
    }

    out.sort_by(|a, b| {
        b.fused_score
            .total_cmp(&a.fused_score)
            .then(a.point.lat().total_cmp(&b.point.lat()))
            .then(a.point.lon().total_cmp(&b.point.lon()))
    });
    out
}

/// Drops fused trees farther than `max_offset_m` from every camera. Trees far
/// from the street are usually on private land and outside the public
/// street-tree population.
pub fn filter_far_from_street(
    trees: Vec<FusedTree>,
    cameras: &[GeoPoint],
    max_offset_m: f64,
) -> Vec<FusedTree> {
    if trees.is_empty() {
        return trees;
    }
    assert!(
        !cameras.is_empty(),
        "camera list required to filter fused trees"
    );
    let grid = BucketGrid::build(cameras, max_offset_m);
    trees
        .into_iter()
        .filter(|t| {
            grid.neighborhood(t.point)
                .into_iter()
                .any(|c| geo::local_distance_m(t.point, cameras[c]) <= max_offset_m)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::offset;
    use rand::rngs::StdRng;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    fn det(pano: &str, point: GeoPoint, score: f64) -> ProjectedDetection {
        ProjectedDetection {
            point,
            score,
            source_pano: pano.to_string(),
            camera_distance_m: 10.0,
        }
    }

    fn base() -> GeoPoint {
        GeoPoint::new(37.0, -122.0).unwrap()
    }

    #[test]
    fn empty_input_empty_output() {
        assert!(fuse_detections(&[], &FuseParams::default()).is_empty());
    }

    #[test]
    fn single_detection_passes_through() {
        let p = base();
        let fused = fuse_detections(&[det("p1", p, 0.9)], &FuseParams::default());
        assert_eq!(fused.len(), 1);
        assert_eq!(fused[0].member_count, 1);
        assert_eq!(fused[0].point, p);
        assert!((fused[0].fused_score - 0.9).abs() < 1e-12);
    }

    #[test]
    fn equal_scores_fuse_at_midpoint() {
        let a = base();
        let b = offset(a, 0.0, 1.0);
        let fused = fuse_detections(
            &[det("p1", a, 0.8), det("p2", b, 0.8)],
            &FuseParams::default(),
        );
        assert_eq!(fused.len(), 1);
        assert_eq!(fused[0].member_count, 2);
        let d_a = geo::local_distance_m(fused[0].point, a);
        let d_b = geo::local_distance_m(fused[0].point, b);
        assert!((d_a - d_b).abs() < 1e-9, "midpoint: {d_a} vs {d_b}");
        assert!((d_a - 0.5).abs() < 1e-6);
    }

    #[test]
    fn worked_three_detection_example() {
        // A at 0 m (0.9), B at 0.5 m (0.8), C at 10.5 m (0.95), radius 4, eps 1.
        let a = base();
        let b = offset(a, 0.0, 0.5);
        let c = offset(a, 0.0, 10.5);
        let dets = vec![det("pa", a, 0.9), det("pb", b, 0.8), det("pc", c, 0.95)];
        let fused = fuse_detections(&dets, &FuseParams::default());
        assert_eq!(fused.len(), 2);

        // Independent straight-line evaluation of the procedure:
        let d_ab = geo::local_distance_m(a, b);
        let s_a = 0.9 / 1.0 + 0.8 / (1.0 + d_ab);
        let s_b = 0.8 / 1.0 + 0.9 / (1.0 + d_ab);
        let s_c = 0.95 / 1.0;
        assert!(s_a > s_b && s_a > s_c, "A must win the first round");
        let expected_north = (s_b * d_ab) / (s_a + s_b);

        let first = &fused[0];
        assert_eq!(first.member_count, 2);
        assert!((first.fused_score - s_a).abs() < 1e-12);
        let (e, n) = geo::local_east_north(a, first.point);
        assert!(e.abs() < 1e-9);
        assert!(
            (n - expected_north).abs() < 1e-9,
            "centroid north {n} vs {expected_north}"
        );
        // Exact-math cross-check with d = 1/2: S_A = 43/30, S_B = 42/30,
        // centroid north = (42/30 * 1/2) / (85/30) = 21/85.
        assert!((n - 21.0 / 85.0).abs() < 1e-6);

        let second = &fused[1];
        assert_eq!(second.member_count, 1);
        assert!((second.fused_score - s_c).abs() < 1e-12);
        assert!(geo::local_distance_m(second.point, c) < 1e-9);
    }

    #[test]
    fn permutation_invariance_bitwise() {
        let mut rng = StdRng::seed_from_u64(43);
        let origin = base();
        let dets: Vec<ProjectedDetection> = (0..60)
            .map(|i| {
                det(
                    &format!("p{i:03}"),
                    offset(
                        origin,
                        rng.random_range(0.0..360.0),
                        rng.random_range(0.0..40.0),
                    ),
                    rng.random_range(0.05..1.0),
                )
            })
            .collect();
        let reference = fuse_detections(&dets, &FuseParams::default());
        for _ in 0..5 {
            let mut shuffled = dets.clone();
            shuffled.shuffle(&mut rng);
            assert_eq!(
                fuse_detections(&shuffled, &FuseParams::default()),
                reference
            );
        }
    }

    #[test]
    fn coverage_every_detection_in_exactly_one_cluster() {
        let mut rng = StdRng::seed_from_u64(47);
        let origin = base();
        for _ in 0..20 {
            let n = rng.random_range(1..80);
            let dets: Vec<ProjectedDetection> = (0..n)
                .map(|i| {
                    det(
                        &format!("p{i:03}"),
                        offset(
                            origin,
                            rng.random_range(0.0..360.0),
                            rng.random_range(0.0..60.0),
                        ),
                        rng.random_range(0.05..1.0),
                    )
                })
                .collect();
            let fused = fuse_detections(&dets, &FuseParams::default());
            let total: usize = fused.iter().map(|f| f.member_count).sum();
            assert_eq!(total, n);
            // Unique pano ids make member sets recoverable: they partition.
            let mut all_panos: Vec<&String> =
                fused.iter().flat_map(|f| f.member_panos.iter()).collect();
            all_panos.sort();
            all_panos.dedup();
            assert_eq!(all_panos.len(), n);
        }
    }

    #[test]
    fn idempotent_on_separated_output() {
        let mut rng = StdRng::seed_from_u64(53);
        let origin = base();
        // Detections spaced far beyond the radius: each is its own cluster.
        let dets: Vec<ProjectedDetection> = (0..10)
            .map(|i| {
                det(
                    &format!("p{i:03}"),
                    offset(origin, 90.0, i as f64 * 25.0),
                    rng.random_range(0.1..1.0),
                )
            })
            .collect();
        let once = fuse_detections(&dets, &FuseParams::default());
        let as_dets: Vec<ProjectedDetection> = once
            .iter()
            .map(|f| {
                det(
                    f.member_panos.iter().next().unwrap(),
                    f.point,
                    f.fused_score,
                )
            })
            .collect();
        let twice = fuse_detections(&as_dets, &FuseParams::default());
        assert_eq!(once.len(), twice.len());
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(a.point, b.point);
            assert!((a.fused_score - b.fused_score).abs() < 1e-12);
        }
    }

    #[test]
    fn exponent_sharpens_the_weighting() {
        let a = base();
        let b = offset(a, 0.0, 3.0);
        let dets = vec![det("p1", a, 0.9), det("p2", b, 0.6)];
        let linear = fuse_detections(&dets, &FuseParams::default());
        let sharp = fuse_detections(
            &dets,
            &FuseParams {
                idw_exponent: 3.0,
                ..Default::default()
            },
        );
        assert_eq!(linear.len(), 1);
        assert_eq!(sharp.len(), 1);
        // A larger exponent shrinks cross terms, pulling the centroid toward
        // the high-score winner.
        let n_linear = geo::local_east_north(a, linear[0].point).1;
        let n_sharp = geo::local_east_north(a, sharp[0].point).1;
        assert!(n_sharp < n_linear, "sharp {n_sharp} vs linear {n_linear}");
    }

    #[test]
    fn far_from_street_filter_matches_brute_force() {
        let mut rng = StdRng::seed_from_u64(59);
        let origin = base();
        let cameras: Vec<GeoPoint> = (0..10)
            .map(|_| {
                offset(
                    origin,
                    rng.random_range(0.0..360.0),
                    rng.random_range(0.0..300.0),
                )
            })
            .collect();
        let trees: Vec<FusedTree> = (0..10)
            .map(|_| FusedTree {
                point: offset(
                    origin,
                    rng.random_range(0.0..360.0),
                    rng.random_range(0.0..400.0),
                ),
                fused_score: 1.0,
                member_count: 1,
                member_panos: BTreeSet::new(),
            })
            .collect();
        let kept = filter_far_from_street(trees.clone(), &cameras, 50.0);
        let expected: Vec<&FusedTree> = trees
            .iter()
            .filter(|t| {
                cameras
                    .iter()
                    .any(|c| geo::local_distance_m(t.point, *c) <= 50.0)
            })
            .collect();
        assert_eq!(kept.len(), expected.len());
        for (a, b) in kept.iter().zip(expected) {
            assert_eq!(a.point, b.point);
        }
    }

    #[test]
    fn near_camera_kept_far_dropped() {
        let cam = base();
        let near = FusedTree {
            point: offset(cam, 10.0, 5.0),
            fused_score: 1.0,
            member_count: 1,
            member_panos: BTreeSet::new(),
        };
        let far = FusedTree {
            point: offset(cam, 10.0, 60.0),
            fused_score: 1.0,
            member_count: 1,
            member_panos: BTreeSet::new(),
        };
        let kept = filter_far_from_street(vec![near.clone(), far], &[cam], 50.0);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].point, near.point);
    }
}
