//! Synthetic municipality generator: ground-truth streets, parcels,
//! addresses, trees, cameras, and detections, providing a fully known
//! end-to-end oracle.
//!
//! Streets lie on an axis-aligned grid. Parcels line both street sides with
//! rooftop geocodes at the parcel centers; trees sit 2-6 m from the street
//! line on the parcel side, spaced widely enough that fusion never merges
//! two distinct trees. Detections are synthesized through the projection
//! geometry, so a noise-free scene closes the loop exactly.
//!
//! Failure modes can be injected structurally (exact counts recorded in
//! [`InjectedFailures`]) or statistically via the rate knobs.

use std::collections::HashMap;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geo::{self, GeoPoint};
use crate::geocode::{Accuracy, GeocodeOutcome};
use crate::inventory::{normalize_address, InventoryTree};
use crate::project::{synthesize_detection, Detection, PanoramaMeta};

/// Scene generation parameters. Defaults mirror the pipeline constants:
/// 20 m address spacing, 15 m camera spacing, 3 m camera height.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_streets: usize,
    pub blocks_per_street: usize,
    /// Parcel width along the street, meters.
    pub address_spacing_m: f64,
    /// Distance between parallel streets, meters.
    pub street_spacing_m: f64,
    pub camera_spacing_m: f64,
    /// Weights for drawing 0, 1, 2 or 3 trees per address.
    pub trees_per_address: [f64; 4],
    /// Isotropic Gaussian noise applied to each detection, meters.
    pub detection_noise_sigma_m: f64,
    /// Probability that an individual detection is dropped.
    pub miss_rate: f64,
    /// Probability of one spurious detection per panorama.
    pub false_positive_rate: f64,
    /// Fraction of addresses geocoded by a non-rooftop mechanism.
    pub non_rooftop_fraction: f64,
    /// Displacement toward the street centerline for non-rooftop geocodes.
    pub geocode_offset_m: f64,
    /// Addresses whose geocoding fails outright (exact count).
    pub inject_failed_geocodes: usize,
    /// Addresses whose geocode lands far (> 50 m) from their trees.
    pub inject_far_geocodes: usize,
    /// Addresses whose trees all go undetected. Drawn only from addresses
    /// whose street-facing twin parcel carries no trees, so nothing else is
    /// detectable near their geocode.
    pub inject_missed_addresses: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_streets: 4,
            blocks_per_street: 3,
            address_spacing_m: 20.0,
            street_spacing_m: 100.0,
            camera_spacing_m: 15.0,
            trees_per_address: [0.15, 0.30, 0.30, 0.25],
            detection_noise_sigma_m: 0.0,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            non_rooftop_fraction: 0.0,
            geocode_offset_m: 30.0,
            inject_failed_geocodes: 0,
            inject_far_geocodes: 0,
            inject_missed_addresses: 0,
        }
    }
}

/// Exact per-tree counts of the structurally injected failure modes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InjectedFailures {
    pub failed_geocode_trees: usize,
    pub far_geocode_trees: usize,
    pub missed_trees: usize,
}

/// Raw inventory row as a legacy file would carry it (un-normalized address).
#[derive(Debug, Clone)]
pub struct RawInventoryRow {
    pub tree_id: String,
    pub raw_address: String,
    pub species: String,
    pub lat: f64,
    pub lon: f64,
}

/// A generated municipality with complete ground truth.
#[derive(Debug, Clone)]
pub struct SynthScene {
    /// Normalized inventory records, ground truth attached.
    pub trees: Vec<InventoryTree>,
    /// The same records in raw file form.
    pub raw_rows: Vec<RawInventoryRow>,
    pub panoramas: Vec<PanoramaMeta>,
    pub detections: Vec<Detection>,
    /// Offline geocoder fixture keyed by normalized address.
    pub geocoder_entries: HashMap<String, GeocodeOutcome>,
    pub ground_truth: HashMap<String, GeoPoint>,
    pub injected: InjectedFailures,
    /// Trees whose own geocode is strictly the nearest resolved geocode.
    pub unambiguous_trees: usize,
}

const STREET_NAMES: [&str; 12] = [
    "Oak", "Elm", "Maple", "Pine", "Cedar", "Birch", "Walnut", "Ash", "Laurel", "Alder", "Willow",
    "Magnolia",
];

const SPECIES: [&str; 6] = [
    "Platanus acerifolia",
    "Quercus agrifolia",
    "Liquidambar styraciflua",
    "Magnolia grandiflora",
    "Pyrus calleryana",
    "Ulmus parvifolia",
];

fn street_name(i: usize) -> String {
    let base = STREET_NAMES[i % STREET_NAMES.len()];
    if i < STREET_NAMES.len() {
        format!("{base} St")
    } else {
        format!("{base} {} St", i / STREET_NAMES.len() + 1)
    }
}

struct Parcel {
    address: String,
    /// Parcel center; the rooftop geocode position.
    center: GeoPoint,
    /// +1 north of the street, -1 south.
    side: f64,
    /// Index of the parcel directly across the street.
    twin: usize,
    tree_indices: Vec<usize>,
}

/// Generates a scene. Deterministic for a fixed config (single seeded RNG,
/// fixed iteration order throughout).
pub fn generate(config: &SynthConfig) -> Result<SynthScene> {
    validate(config)?;
    let mut rng = StdRng::seed_from_u64(config.seed);
    let origin = GeoPoint::new(37.3, -121.9).unwrap();
    let depth_m = 10.0; // parcel center distance from the street centerline

    let addrs_per_side = config.blocks_per_street * 4;
    let street_len = addrs_per_side as f64 * config.address_spacing_m;

    let mut parcels: Vec<Parcel> = Vec::new();
    let mut trees: Vec<InventoryTree> = Vec::new();
    let mut raw_rows: Vec<RawInventoryRow> = Vec::new();
    let mut tree_points: Vec<GeoPoint> = Vec::new();
    let mut panoramas: Vec<PanoramaMeta> = Vec::new();

    for si in 0..config.n_streets {
        let name = street_name(si);
        let y = si as f64 * config.street_spacing_m;
        for side_i in 0..2 {
            let side = if side_i == 0 { 1.0 } else { -1.0 };
            for pi in 0..addrs_per_side {
                let x = (pi as f64 + 0.5) * config.address_spacing_m;
                let number = if side > 0.0 { 2 * pi + 2 } else { 2 * pi + 1 };
                let raw_address = format!("{number} {name}");
                let address = normalize_address(&raw_address);
                let center = geo::translate(origin, x, y + side * depth_m);

                let k = draw_tree_count(&mut rng, &config.trees_per_address);
                let offsets: &[f64] = match k {
                    0 => &[],
                    1 => &[0.0],
                    2 => &[-4.0, 4.0],
                    _ => &[-6.0, 0.0, 6.0],
                };
                let mut tree_indices = Vec::with_capacity(k);
                for &off in offsets {
                    let depth = rng.random_range(2.0..6.0);
                    let point = geo::translate(origin, x + off, y + side * depth);
                    let tree_id = format!("t{:05}", trees.len() + 1);
                    let species = SPECIES[rng.random_range(0..SPECIES.len())].to_string();
                    tree_indices.push(trees.len());
                    tree_points.push(point);
                    raw_rows.push(RawInventoryRow {
                        tree_id: tree_id.clone(),
                        raw_address: raw_address.clone(),
                        species: species.clone(),
                        lat: point.lat(),
                        lon: point.lon(),
                    });
                    trees.push(InventoryTree {
                        tree_id,
                        address: address.clone(),
                        species: Some(species),
                        ground_truth: Some(point),
                    });
                }
                parcels.push(Parcel {
                    address,
                    center,
                    side,
                    twin: (si * 2 + (1 - side_i)) * addrs_per_side + pi,
                    tree_indices,
                });
            }
        }

        let n_cams = (street_len / config.camera_spacing_m).floor() as usize + 1;
        for ci in 0..n_cams {
            let cam = geo::translate(origin, ci as f64 * config.camera_spacing_m, y);
            panoramas.push(
                PanoramaMeta::new(format!("s{si:02}p{ci:03}"), cam, 90.0, 8192, 4096, 3.0).unwrap(),
            );
        }
    }

    // Structural injections draw from addresses that actually carry trees;
    // misses additionally require a treeless facing parcel so no other tree
    // is detectable near the geocode.
    let mut candidates: Vec<usize> = (0..parcels.len())
        .filter(|&i| !parcels[i].tree_indices.is_empty())
        .collect();
    candidates.shuffle(&mut rng);
    let total_injected =
        config.inject_failed_geocodes + config.inject_far_geocodes + config.inject_missed_addresses;
    if total_injected > candidates.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot inject {total_injected} failures into {} tree-bearing addresses",
            candidates.len()
        )));
    }
    let failed_set: Vec<usize> = candidates[..config.inject_failed_geocodes].to_vec();
    let far_set: Vec<usize> = candidates
        [config.inject_failed_geocodes..config.inject_failed_geocodes + config.inject_far_geocodes]
        .to_vec();
    let missed_set: Vec<usize> = candidates
        [config.inject_failed_geocodes + config.inject_far_geocodes..]
        .iter()
        .copied()
        .filter(|&i| parcels[parcels[i].twin].tree_indices.is_empty())
        .take(config.inject_missed_addresses)
        .collect();
    if missed_set.len() < config.inject_missed_addresses {
        return Err(Error::InvalidConfig(format!(
            "only {} addresses with a treeless facing parcel available for {} miss injections",
            missed_set.len(),
            config.inject_missed_addresses
        )));
    }
    let is_in = |set: &[usize], i: usize| set.contains(&i);

    let mut injected = InjectedFailures::default();
    for &i in &failed_set {
        injected.failed_geocode_trees += parcels[i].tree_indices.len();
    }
    for &i in &far_set {
        injected.far_geocode_trees += parcels[i].tree_indices.len();
    }
    for &i in &missed_set {
        injected.missed_trees += parcels[i].tree_indices.len();
    }

    // Geocoder fixture. Far-injected geocodes displace 80 m along the street
    // (still within the municipality, so the z-score keeps them); non-rooftop
    // geocodes displace toward the street centerline.
    let mut geocoder_entries: HashMap<String, GeocodeOutcome> = HashMap::new();
    let mut geocode_points: Vec<Option<GeoPoint>> = Vec::with_capacity(parcels.len());
    for (i, parcel) in parcels.iter().enumerate() {
        let outcome = if is_in(&failed_set, i) {
            geocode_points.push(None);
            GeocodeOutcome::NotFound
        } else if is_in(&far_set, i) {
            let p = geo::translate(parcel.center, 80.0, 0.0);
            geocode_points.push(Some(p));
            GeocodeOutcome::Resolved {
                point: p,
                accuracy: Accuracy::Rooftop,
            }
        } else if rng.random_bool(config.non_rooftop_fraction) {
            let p = geo::translate(parcel.center, 0.0, -parcel.side * config.geocode_offset_m);
            geocode_points.push(Some(p));
            let accuracy = if rng.random_bool(0.3) {
                Accuracy::Approximate
            } else {
                Accuracy::Interpolated
            };
            GeocodeOutcome::Resolved { point: p, accuracy }
        } else {
            geocode_points.push(Some(parcel.center));
            GeocodeOutcome::Resolved {
                point: parcel.center,
                accuracy: Accuracy::Rooftop,
            }
        };
        geocoder_entries.insert(parcel.address.clone(), outcome);
    }

    // Detections: every panorama sees every unmissed tree within range.
    let miss_addr_trees: Vec<bool> = {
        let mut v = vec![false; trees.len()];
        for &i in &missed_set {
            for &t in &parcels[i].tree_indices {
                v[t] = true;
            }
        }
        v
    };
    let noise = if config.detection_noise_sigma_m > 0.0 {
        Some(Normal::new(0.0, config.detection_noise_sigma_m).unwrap())
    } else {
        None
    };
    let mut detections: Vec<Detection> = Vec::new();
    for pano in &panoramas {
        for (ti, point) in tree_points.iter().enumerate() {
            if miss_addr_trees[ti] {
                continue;
            }
            let d = geo::local_distance_m(pano.camera, *point);
            if d <= 0.0 || d > 50.0 {
                continue;
            }
            if config.miss_rate > 0.0 && rng.random_bool(config.miss_rate) {
                continue;
            }
            let seen = match &noise {
                Some(n) => geo::translate(*point, n.sample(&mut rng), n.sample(&mut rng)),
                None => *point,
            };
            let score = rng.random_range(0.70..0.99);
            if let Ok(det) = synthesize_detection(pano, seen, score, 50.0) {
                detections.push(det);
            }
        }
        if config.false_positive_rate > 0.0 && rng.random_bool(config.false_positive_rate) {
            let bearing = rng.random_range(0.0..360.0);
            let dist = rng.random_range(3.0..20.0);
            let ghost = geo::offset(pano.camera, bearing, dist);
            let score = rng.random_range(0.50..0.70);
            if let Ok(det) = synthesize_detection(pano, ghost, score, 50.0) {
                detections.push(det);
            }
        }
    }

    // A tree is unambiguous when its own geocode is strictly the nearest
    // resolved geocode.
    let mut unambiguous_trees = 0;
    for (pi, parcel) in parcels.iter().enumerate() {
        for &ti in &parcel.tree_indices {
            let own = match geocode_points[pi] {
                Some(p) => geo::local_distance_m(tree_points[ti], p),
                None => continue,
            };
            // Only tree-bearing parcels compete in the assignment.
            let strictly_nearest = geocode_points.iter().enumerate().all(|(qi, gp)| {
                qi == pi
                    || parcels[qi].tree_indices.is_empty()
                    || gp.is_none_or(|p| geo::local_distance_m(tree_points[ti], p) > own + 1e-6)
            });
            if strictly_nearest {
                unambiguous_trees += 1;
            }
        }
    }

    let ground_truth = trees
        .iter()
        .map(|t| (t.tree_id.clone(), t.ground_truth.unwrap()))
        .collect();

    Ok(SynthScene {
        trees,
        raw_rows,
        panoramas,
        detections,
        geocoder_entries,
        ground_truth,
        injected,
        unambiguous_trees,
    })
}

fn validate(config: &SynthConfig) -> Result<()> {
    if config.n_streets == 0 || config.blocks_per_street == 0 {
        return Err(Error::InvalidConfig(
            "scene needs at least one street and one block".into(),
        ));
    }
    for (name, v) in [
        ("address_spacing_m", config.address_spacing_m),
        ("street_spacing_m", config.street_spacing_m),
        ("camera_spacing_m", config.camera_spacing_m),
    ] {
        if v.is_nan() || v <= 0.0 {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
    }
    for (name, p) in [
        ("miss_rate", config.miss_rate),
        ("false_positive_rate", config.false_positive_rate),
        ("non_rooftop_fraction", config.non_rooftop_fraction),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("{name} must be in [0, 1]")));
        }
    }
    if config.trees_per_address.iter().any(|&w| w < 0.0)
        || config.trees_per_address.iter().sum::<f64>() <= 0.0
    {
        return Err(Error::InvalidConfig(
            "trees_per_address weights must be non-negative and not all zero".into(),
        ));
    }
    Ok(())
}

fn draw_tree_count(rng: &mut StdRng, weights: &[f64; 4]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (k, &w) in weights.iter().enumerate() {
        if u < w {
            return k;
        }
        u -= w;
    }
    3
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::project::project_detection;

    #[test]
    fn fixed_seed_reproduces_scene() {
        let config = SynthConfig {
            n_streets: 2,
            blocks_per_street: 2,
            detection_noise_sigma_m: 0.3,
            miss_rate: 0.1,
            false_positive_rate: 0.05,
            non_rooftop_fraction: 0.2,
            ..Default::default()
        };
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a.trees, b.trees);
        assert_eq!(a.detections, b.detections);
        assert_eq!(a.panoramas, b.panoramas);
        assert_eq!(a.injected, b.injected);
    }

    #[test]
    fn miss_rate_one_drops_everything() {
        let config = SynthConfig {
            n_streets: 1,
            blocks_per_street: 1,
            miss_rate: 1.0,
            ..Default::default()
        };
        let scene = generate(&config).unwrap();
        assert!(!scene.trees.is_empty());
        assert!(scene.detections.is_empty());
    }

    #[test]
    fn zero_streets_is_an_error() {
        let config = SynthConfig {
            n_streets: 0,
            ..Default::default()
        };
        assert!(generate(&config).is_err());
    }

    #[test]
    fn noise_free_detections_project_back_to_their_trees() {
        let config = SynthConfig {
            n_streets: 2,
            blocks_per_street: 2,
            ..Default::default()
        };
        let scene = generate(&config).unwrap();
        assert!(!scene.detections.is_empty());
        let by_id: std::collections::HashMap<&str, &PanoramaMeta> = scene
            .panoramas
            .iter()
            .map(|p| (p.pano_id.as_str(), p))
            .collect();
        for det in &scene.detections {
            let pano = by_id[det.pano_id.as_str()];
            let proj = project_detection(pano, det, 50.0).unwrap();
            let nearest = scene
                .trees
                .iter()
                .map(|t| geo::local_distance_m(proj.point, t.ground_truth.unwrap()))
                .fold(f64::INFINITY, f64::min);
            assert!(
                nearest < 1e-6,
                "detection strayed {nearest} m from every tree"
            );
        }
    }

    #[test]
    fn injections_are_disjoint_and_counted() {
        let config = SynthConfig {
            n_streets: 3,
            blocks_per_street: 3,
            address_spacing_m: 150.0,
            inject_failed_geocodes: 3,
            inject_far_geocodes: 2,
            inject_missed_addresses: 4,
            ..Default::default()
        };
        let scene = generate(&config).unwrap();
        let failed_addrs: usize = scene
            .geocoder_entries
            .values()
            .filter(|o| matches!(o, GeocodeOutcome::NotFound))
            .count();
        assert_eq!(failed_addrs, 3);
        assert!(scene.injected.failed_geocode_trees >= 3);
        assert!(scene.injected.far_geocode_trees >= 2);
        assert!(scene.injected.missed_trees >= 4);
    }

    #[test]
    fn scene_statistics_track_config() {
        let config = SynthConfig {
            seed: 3,
            n_streets: 12,
            blocks_per_street: 8,
            non_rooftop_fraction: 0.3,
            ..Default::default()
        };
        let scene = generate(&config).unwrap();

        let rooftop = scene
            .geocoder_entries
            .values()
            .filter(|o| {
                matches!(
                    o,
                    GeocodeOutcome::Resolved {
                        accuracy: Accuracy::Rooftop,
                        ..
                    }
                )
            })
            .count() as f64;
        let rooftop_fraction = rooftop / scene.geocoder_entries.len() as f64;
        assert!(
            (rooftop_fraction - 0.7).abs() < 0.05,
            "rooftop fraction {rooftop_fraction}"
        );

        // Most trees share their address with others; the default weights
        // put the shared fraction near four in five.
        let mut per_addr: HashMap<&str, usize> = HashMap::new();
        for t in &scene.trees {
            *per_addr.entry(t.address.as_str()).or_default() += 1;
        }
        let shared = scene
            .trees
            .iter()
            .filter(|t| per_addr[t.address.as_str()] > 1)
            .count() as f64;
        let shared_fraction = shared / scene.trees.len() as f64;
        assert!(
            (0.72..=0.92).contains(&shared_fraction),
            "shared-address fraction {shared_fraction}"
        );
    }

    #[test]
    fn camera_spacing_matches_config() {
        let config = SynthConfig {
            n_streets: 1,
            blocks_per_street: 3,
            ..Default::default()
        };
        let scene = generate(&config).unwrap();
        let cams: Vec<GeoPoint> = scene.panoramas.iter().map(|p| p.camera).collect();
        for w in cams.windows(2) {
            let d = geo::local_distance_m(w[0], w[1]);
            assert!((d - 15.0).abs() < 1e-6);
        }
    }
}
