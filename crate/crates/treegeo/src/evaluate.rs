//! Run scoring against ground-truth tree coordinates with a seven-category
//! error taxonomy, the blind subset computable without ground truth, and the
//! rooftop-only post-filter.
//!
//! Every inventory tree lands in exactly one category, decided by the first
//! applicable rule in a fixed precedence order:
//!
//! 1. geocoding not possible - the address failed to geocode
//! 2. geocoding outlier - the address was flagged by the z-score filter
//! 3. geocoding wrong - geocode farther than the threshold from the true tree
//! 4. no tree detected - no fused tree near the geocoded address
//! 5. no tree assigned - fused trees nearby, but none assigned to this tree
//! 6. tree assigned incorrectly - the assigned detection belongs elsewhere
//! 7. tree correct - assigned a detection of a tree at this address
//!
//! Correctness is evaluated at address granularity: an assignment is correct
//! when the detected tree's true source grows at the assigned address.

use std::collections::{HashMap, HashSet};

use crate::assign::ExpandedMatch;
use crate::error::{Error, Result};
use crate::fuse::FusedTree;
use crate::geo::{self, GeoPoint};
use crate::geocode::{Accuracy, GeocodedAddress};
use crate::grid::BucketGrid;
use crate::inventory::{AddressGroup, InventoryTree};

/// Distance thresholds for categorization.
#[derive(Debug, Clone, Copy)]
pub struct EvalParams {
    /// Geocode farther than this from the true tree counts as wrong.
    pub wrong_threshold_m: f64,
    /// Radius around the geocode scanned for fused trees.
    pub detected_radius_m: f64,
    /// A fused tree represents the ground-truth tree nearest to it within
    /// this tolerance; farther means it is spurious.
    pub correct_tolerance_m: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            wrong_threshold_m: 50.0,
            detected_radius_m: 50.0,
            correct_tolerance_m: 4.0,
        }
    }
}

/// Everything a scoring pass needs, bundled so the rooftop filter can produce
/// a reduced copy.
#[derive(Debug, Clone)]
pub struct EvalInputs {
    pub trees: Vec<InventoryTree>,
    /// Address groups and their geocodes, index-aligned.
    pub groups: Vec<AddressGroup>,
    pub geocoded: Vec<GeocodedAddress>,
    /// Addresses flagged by the z-score filter.
    pub outlier_addresses: HashSet<String>,
    pub fused: Vec<FusedTree>,
    /// Assignment result expanded to inventory tree ids.
    pub expanded: Vec<ExpandedMatch>,
}

/// Per-category counts. Categories partition the inventory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvaluationReport {
    pub geocoding_not_possible: usize,
    pub geocoding_outlier: usize,
    pub geocoding_wrong: usize,
    pub no_tree_detected: usize,
    pub no_tree_assigned: usize,
    pub tree_assigned_incorrectly: usize,
    pub tree_correct: usize,
    pub total: usize,
}

pub const CATEGORY_LABELS: [&str; 7] = [
    "Geocoding not possible",
    "Geocoding outlier",
    "Geocoding wrong",
    "No tree detected",
    "No tree assigned",
    "Tree assigned incorrectly",
    "Tree correct",
];

impl EvaluationReport {
    pub fn counts(&self) -> [usize; 7] {
        [
            self.geocoding_not_possible,
            self.geocoding_outlier,
            self.geocoding_wrong,
            self.no_tree_detected,
            self.no_tree_assigned,
            self.tree_assigned_incorrectly,
            self.tree_correct,
        ]
    }

    pub fn percentage(&self, count: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * count as f64 / self.total as f64
        }
    }

    /// Human-readable aligned table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<28}{:>8}{:>8}\n", "Category", "Count", "%"));
        for (label, count) in CATEGORY_LABELS.iter().zip(self.counts()) {
            out.push_str(&format!(
                "{label:<28}{count:>8}{:>8.1}\n",
                self.percentage(count)
            ));
        }
        out.push_str(&format!("{:<28}{:>8}{:>8.1}\n", "TOTAL", self.total, 100.0));
        out
    }

    /// Machine-readable key=value lines.
    pub fn render_kv(&self) -> String {
        let keys = [
            "geocoding_not_possible",
            "geocoding_outlier",
            "geocoding_wrong",
            "no_tree_detected",
            "no_tree_assigned",
            "tree_assigned_incorrectly",
            "tree_correct",
        ];
        let mut out = String::new();
        for (key, count) in keys.iter().zip(self.counts()) {
            out.push_str(&format!("{key}={count}\n"));
            out.push_str(&format!("{key}_pct={:.1}\n", self.percentage(count)));
        }
        out.push_str(&format!("total={}\n", self.total));
        out
    }
}

/// Categories detectable without ground truth. `assigned` counts trees that
/// received a detection; the remainder (trees near detections that got none)
/// is not separable from geocoding errors at blind time, so the four counts
/// need not sum to `total`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BlindReport {
    pub geocoding_not_possible: usize,
    pub geocoding_outlier: usize,
    pub no_tree_detected: usize,
    pub assigned: usize,
    pub total: usize,
}

impl BlindReport {
    pub fn render_kv(&self) -> String {
        format!(
            "geocoding_not_possible={}\ngeocoding_outlier={}\nno_tree_detected={}\nassigned={}\ntotal={}\n",
            self.geocoding_not_possible,
            self.geocoding_outlier,
            self.no_tree_detected,
            self.assigned,
            self.total
        )
    }
}

struct AddressView<'a> {
    geocoded: &'a GeocodedAddress,
    outlier: bool,
}

fn index_addresses<'a>(inputs: &'a EvalInputs) -> HashMap<&'a str, AddressView<'a>> {
    inputs
        .groups
        .iter()
        .zip(&inputs.geocoded)
        .map(|(g, rec)| {
            debug_assert_eq!(g.address, rec.address, "groups/geocoded misaligned");
            (
                g.address.as_str(),
                AddressView {
                    geocoded: rec,
                    outlier: inputs.outlier_addresses.contains(&g.address),
                },
            )
        })
        .collect()
}

/// True when some fused tree lies within `radius` of `p`.
fn detected_near(fused: &[FusedTree], grid: Option<&BucketGrid>, p: GeoPoint, radius: f64) -> bool {
    match grid {
        Some(grid) => grid
            .neighborhood(p)
            .into_iter()
            .any(|i| geo::local_distance_m(fused[i].point, p) <= radius),
        None => false,
    }
}

/// Scores a run against ground truth. Every inventory tree id must appear in
/// `ground_truth`.
pub fn categorize(
    inputs: &EvalInputs,
    ground_truth: &HashMap<String, GeoPoint>,
    params: &EvalParams,
) -> Result<EvaluationReport> {
    let addresses = index_addresses(inputs);
    let assigned_by_tree: HashMap<&str, &ExpandedMatch> = inputs
        .expanded
        .iter()
        .map(|m| (m.tree_id.as_str(), m))
        .collect();

    let fused_points: Vec<GeoPoint> = inputs.fused.iter().map(|f| f.point).collect();
    let fused_grid = (!fused_points.is_empty())
        .then(|| BucketGrid::build(&fused_points, params.detected_radius_m));

    // True positions of all inventory trees, for deciding which tree a fused
    // detection actually represents.
    let truth_points: Vec<GeoPoint> = inputs
        .trees
        .iter()
        .map(|t| {
            ground_truth
                .get(&t.tree_id)
                .copied()
                .ok_or_else(|| Error::MissingGroundTruth(t.tree_id.clone()))
        })
        .collect::<Result<_>>()?;
    let truth_grid = (!truth_points.is_empty())
        .then(|| BucketGrid::build(&truth_points, params.correct_tolerance_m.max(1.0)));

    let mut report = EvaluationReport {
        total: inputs.trees.len(),
        ..Default::default()
    };

    for (ti, tree) in inputs.trees.iter().enumerate() {
        let view = addresses
            .get(tree.address.as_str())
            .unwrap_or_else(|| panic!("tree {} references unknown address", tree.tree_id));

        if view.geocoded.accuracy == Accuracy::Failed {
            report.geocoding_not_possible += 1;
            continue;
        }
        if view.outlier {
            report.geocoding_outlier += 1;
            continue;
        }
        let geocode = view
            .geocoded
            .point
            .expect("resolved geocode carries a point");
        if geo::local_distance_m(geocode, truth_points[ti]) > params.wrong_threshold_m {
            report.geocoding_wrong += 1;
            continue;
        }
        if !detected_near(
            &inputs.fused,
            fused_grid.as_ref(),
            geocode,
            params.detected_radius_m,
        ) {
            report.no_tree_detected += 1;
            continue;
        }
        let Some(m) = assigned_by_tree.get(tree.tree_id.as_str()) else {
            report.no_tree_assigned += 1;
            continue;
        };
        // The detection represents the ground-truth tree nearest to it; the
        // match is correct when that tree grows at the assigned address.
        let represented = truth_grid.as_ref().and_then(|grid| {
            grid.neighborhood(m.point)
                .into_iter()
                .map(|i| (geo::local_distance_m(truth_points[i], m.point), i))
                .filter(|(d, _)| *d <= params.correct_tolerance_m)
                .min_by(|a, b| a.partial_cmp(b).unwrap())
                .map(|(_, i)| i)
        });
        match represented {
            Some(src) if inputs.trees[src].address == tree.address => report.tree_correct += 1,
            _ => report.tree_assigned_incorrectly += 1,
        }
    }

    debug_assert_eq!(report.counts().iter().sum::<usize>(), report.total);
    Ok(report)
}

/// The ground-truth-free subset of the report.
pub fn blind_report(inputs: &EvalInputs, params: &EvalParams) -> BlindReport {
    let addresses = index_addresses(inputs);
    let assigned_ids: HashSet<&str> = inputs.expanded.iter().map(|m| m.tree_id.as_str()).collect();
    let fused_points: Vec<GeoPoint> = inputs.fused.iter().map(|f| f.point).collect();
    let fused_grid = (!fused_points.is_empty())
        .then(|| BucketGrid::build(&fused_points, params.detected_radius_m));

    let mut report = BlindReport {
        total: inputs.trees.len(),
        ..Default::default()
    };
    for tree in &inputs.trees {
        let view = &addresses[tree.address.as_str()];
        if view.geocoded.accuracy == Accuracy::Failed {
            report.geocoding_not_possible += 1;
            continue;
        }
        if view.outlier {
            report.geocoding_outlier += 1;
            continue;
        }
        let geocode = view
            .geocoded
            .point
            .expect("resolved geocode carries a point");
        if !detected_near(
            &inputs.fused,
            fused_grid.as_ref(),
            geocode,
            params.detected_radius_m,
        ) {
            report.no_tree_detected += 1;
            continue;
        }
        if assigned_ids.contains(tree.tree_id.as_str()) {
            report.assigned += 1;
        }
    }
    report
}

/// Restricts evaluation to trees whose address was geocoded via rooftop
/// coordinates. Pipeline outputs (fused trees, assignment) are untouched;
/// only the evaluated tree set shrinks, mirroring a post-hoc filter.
pub fn rooftop_filter(inputs: &EvalInputs) -> EvalInputs {
    let keep: HashSet<&str> = inputs
        .geocoded
        .iter()
        .filter(|r| r.accuracy == Accuracy::Rooftop)
        .map(|r| r.address.as_str())
        .collect();

    let trees: Vec<InventoryTree> = inputs
        .trees
        .iter()
        .filter(|t| keep.contains(t.address.as_str()))
        .cloned()
        .collect();
    let kept_ids: HashSet<&str> = trees.iter().map(|t| t.tree_id.as_str()).collect();

    let mut groups = Vec::new();
    let mut geocoded = Vec::new();
    for (g, rec) in inputs.groups.iter().zip(&inputs.geocoded) {
        if keep.contains(g.address.as_str()) {
            groups.push(g.clone());
            geocoded.push(rec.clone());
        }
    }

    EvalInputs {
        expanded: inputs
            .expanded
            .iter()
            .filter(|m| kept_ids.contains(m.tree_id.as_str()))
            .cloned()
            .collect(),
        trees,
        groups,
        geocoded,
        outlier_addresses: inputs
            .outlier_addresses
            .iter()
            .filter(|a| keep.contains(a.as_str()))
            .cloned()
            .collect(),
        fused: inputs.fused.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn point(east: f64, north: f64) -> GeoPoint {
        geo::translate(GeoPoint::new(37.0, -122.0).unwrap(), east, north)
    }

    struct Builder {
        inputs: EvalInputs,
        truth: HashMap<String, GeoPoint>,
    }

    impl Builder {
        fn new() -> Self {
            Self {
                inputs: EvalInputs {
                    trees: Vec::new(),
                    groups: Vec::new(),
                    geocoded: Vec::new(),
                    outlier_addresses: HashSet::new(),
                    fused: Vec::new(),
                    expanded: Vec::new(),
                },
                truth: HashMap::new(),
            }
        }

        fn address(&mut self, name: &str, geocode: Option<GeoPoint>, accuracy: Accuracy) {
            self.inputs.groups.push(AddressGroup {
                address: name.to_string(),
                capacity_k: 1,
                tree_ids: Vec::new(),
            });
            self.inputs.geocoded.push(GeocodedAddress {
                address: name.to_string(),
                point: geocode,
                accuracy,
                capacity_k: 1,
            });
        }

        fn tree(&mut self, id: &str, address: &str, truth: GeoPoint) {
            self.inputs.trees.push(InventoryTree {
                tree_id: id.to_string(),
                address: address.to_string(),
                species: None,
                ground_truth: Some(truth),
            });
            let group = self
                .inputs
                .groups
                .iter_mut()
                .find(|g| g.address == address)
                .expect("address registered before tree");
            group.tree_ids.push(id.to_string());
            group.capacity_k = group.tree_ids.len();
            self.truth.insert(id.to_string(), truth);
        }

        fn fused_at(&mut self, p: GeoPoint) -> usize {
            self.inputs.fused.push(FusedTree {
                point: p,
                fused_score: 1.0,
                member_count: 1,
                member_panos: BTreeSet::new(),
            });
            self.inputs.fused.len() - 1
        }

        fn assign(&mut self, tree_id: &str, fused_index: usize) {
            let point = self.inputs.fused[fused_index].point;
            self.inputs.expanded.push(ExpandedMatch {
                tree_id: tree_id.to_string(),
                address_index: 0,
                fused_index,
                point,
                dist_m: 0.0,
            });
        }
    }

    #[test]
    fn failed_geocode_takes_precedence() {
        let mut b = Builder::new();
        b.address("1 A STREET", None, Accuracy::Failed);
        b.tree("t1", "1 A STREET", point(0.0, 0.0));
        let r = categorize(&b.inputs, &b.truth, &EvalParams::default()).unwrap();
        assert_eq!(r.geocoding_not_possible, 1);
        assert_eq!(r.total, 1);
    }

    #[test]
    fn outlier_beats_wrong_geocode() {
        let mut b = Builder::new();
        b.address("1 A STREET", Some(point(500.0, 0.0)), Accuracy::Rooftop);
        b.tree("t1", "1 A STREET", point(0.0, 0.0));
        b.inputs.outlier_addresses.insert("1 A STREET".into());
        let r = categorize(&b.inputs, &b.truth, &EvalParams::default()).unwrap();
        assert_eq!(r.geocoding_outlier, 1);
        assert_eq!(r.geocoding_wrong, 0);
    }

    #[test]
    fn sixty_meter_geocode_is_wrong() {
        let mut b = Builder::new();
        b.address("1 A STREET", Some(point(60.0, 0.0)), Accuracy::Rooftop);
        b.tree("t1", "1 A STREET", point(0.0, 0.0));
        // A fused tree exists, but geocoding_wrong wins by precedence.
        let f = b.fused_at(point(0.0, 0.0));
        b.assign("t1", f);
        let r = categorize(&b.inputs, &b.truth, &EvalParams::default()).unwrap();
        assert_eq!(r.geocoding_wrong, 1);
        assert_eq!(r.tree_correct, 0);
    }

    #[test]
    fn no_fused_tree_nearby_is_no_tree_detected() {
        let mut b = Builder::new();
        b.address("1 A STREET", Some(point(0.0, 0.0)), Accuracy::Rooftop);
        b.tree("t1", "1 A STREET", point(3.0, 0.0));
        b.fused_at(point(200.0, 0.0));
        let r = categorize(&b.inputs, &b.truth, &EvalParams::default()).unwrap();
        assert_eq!(r.no_tree_detected, 1);
    }

    #[test]
    fn nearby_but_unassigned_is_no_tree_assigned() {
        let mut b = Builder::new();
        b.address("1 A STREET", Some(point(0.0, 0.0)), Accuracy::Rooftop);
        b.tree("t1", "1 A STREET", point(3.0, 0.0));
        b.fused_at(point(3.0, 0.0));
        let r = categorize(&b.inputs, &b.truth, &EvalParams::default()).unwrap();
        assert_eq!(r.no_tree_assigned, 1);
    }

    #[test]
    fn assignment_from_wrong_address_is_incorrect() {
        let mut b = Builder::new();
        b.address("1 A STREET", Some(point(0.0, 0.0)), Accuracy::Rooftop);
        b.address("2 A STREET", Some(point(20.0, 0.0)), Accuracy::Rooftop);
        b.tree("t1", "1 A STREET", point(3.0, 0.0));
        b.tree("t2", "2 A STREET", point(17.0, 0.0));
        // t1 receives the detection of t2.
        let f = b.fused_at(point(17.0, 0.0));
        b.assign("t1", f);
        let r = categorize(&b.inputs, &b.truth, &EvalParams::default()).unwrap();
        assert_eq!(r.tree_assigned_incorrectly, 1);
        assert_eq!(r.no_tree_assigned, 1); // t2 lost its detection
    }

    #[test]
    fn correct_assignment_counted() {
        let mut b = Builder::new();
        b.address("1 A STREET", Some(point(0.0, 0.0)), Accuracy::Rooftop);
        b.tree("t1", "1 A STREET", point(3.0, 0.0));
        let f = b.fused_at(point(3.0, 0.0));
        b.assign("t1", f);
        let r = categorize(&b.inputs, &b.truth, &EvalParams::default()).unwrap();
        assert_eq!(r.tree_correct, 1);
        assert_eq!(r.counts().iter().sum::<usize>(), r.total);
    }

    #[test]
    fn spurious_detection_is_incorrect() {
        let mut b = Builder::new();
        b.address("1 A STREET", Some(point(0.0, 0.0)), Accuracy::Rooftop);
        b.tree("t1", "1 A STREET", point(3.0, 0.0));
        // Fused tree 20 m from any true tree: a false positive.
        let f = b.fused_at(point(0.0, 20.0));
        b.assign("t1", f);
        let r = categorize(&b.inputs, &b.truth, &EvalParams::default()).unwrap();
        assert_eq!(r.tree_assigned_incorrectly, 1);
    }

    #[test]
    fn missing_ground_truth_is_fatal() {
        let mut b = Builder::new();
        b.address("1 A STREET", Some(point(0.0, 0.0)), Accuracy::Rooftop);
        b.tree("t1", "1 A STREET", point(3.0, 0.0));
        b.truth.clear();
        let err = categorize(&b.inputs, &b.truth, &EvalParams::default()).unwrap_err();
        assert!(matches!(err, Error::MissingGroundTruth(_)));
    }

    #[test]
    fn record_order_never_changes_counts() {
        let mut b = Builder::new();
        for i in 0..6 {
            let x = i as f64 * 30.0;
            b.address(
                &format!("{i} A STREET"),
                Some(point(x, 0.0)),
                Accuracy::Rooftop,
            );
            b.tree(
                &format!("t{i}"),
                &format!("{i} A STREET"),
                point(x + 3.0, 0.0),
            );
        }
        let f0 = b.fused_at(point(3.0, 0.0));
        b.assign("t0", f0);
        let f1 = b.fused_at(point(63.0, 0.0));
        b.assign("t2", f1);
        let base = categorize(&b.inputs, &b.truth, &EvalParams::default()).unwrap();

        let mut shuffled = b.inputs.clone();
        shuffled.trees.reverse();
        shuffled.groups.reverse();
        shuffled.geocoded.reverse();
        shuffled.expanded.reverse();
        let permuted = categorize(&shuffled, &b.truth, &EvalParams::default()).unwrap();
        assert_eq!(base, permuted);
    }

    #[test]
    fn blind_all_failed_is_all_not_possible() {
        let mut b = Builder::new();
        b.address("1 A STREET", None, Accuracy::Failed);
        b.address("2 A STREET", None, Accuracy::Failed);
        b.tree("t1", "1 A STREET", point(0.0, 0.0));
        b.tree("t2", "2 A STREET", point(20.0, 0.0));
        let r = blind_report(&b.inputs, &EvalParams::default());
        assert_eq!(r.geocoding_not_possible, 2);
        assert_eq!(r.total, 2);
        assert_eq!(r.assigned, 0);
    }

    #[test]
    fn blind_matches_full_report_on_shared_categories() {
        let mut b = Builder::new();
        b.address("1 A STREET", None, Accuracy::Failed);
        b.address("2 A STREET", Some(point(30.0, 0.0)), Accuracy::Rooftop);
        b.address("3 A STREET", Some(point(60.0, 0.0)), Accuracy::Rooftop);
        b.tree("t1", "1 A STREET", point(0.0, 0.0));
        b.tree("t2", "2 A STREET", point(33.0, 0.0));
        b.tree("t3", "3 A STREET", point(63.0, 0.0));
        let f = b.fused_at(point(63.0, 0.0));
        b.assign("t3", f);
        // t2's detections were all missed; the only fused tree is 30 m from
        // its geocode, within the radius, so it is "no tree assigned".
        let full = categorize(&b.inputs, &b.truth, &EvalParams::default()).unwrap();
        let blind = blind_report(&b.inputs, &EvalParams::default());
        assert_eq!(blind.geocoding_not_possible, full.geocoding_not_possible);
        assert_eq!(blind.geocoding_outlier, full.geocoding_outlier);
        assert_eq!(blind.no_tree_detected, full.no_tree_detected);
        assert_eq!(
            blind.assigned,
            full.tree_correct + full.tree_assigned_incorrectly
        );
    }

    #[test]
    fn rooftop_filter_identity_when_all_rooftop() {
        let mut b = Builder::new();
        b.address("1 A STREET", Some(point(0.0, 0.0)), Accuracy::Rooftop);
        b.tree("t1", "1 A STREET", point(3.0, 0.0));
        let filtered = rooftop_filter(&b.inputs);
        assert_eq!(filtered.trees.len(), 1);
        assert_eq!(filtered.groups.len(), 1);
    }

    #[test]
    fn rooftop_filter_drops_interpolated() {
        let mut b = Builder::new();
        b.address("1 A STREET", Some(point(0.0, 0.0)), Accuracy::Interpolated);
        b.address("2 A STREET", Some(point(30.0, 0.0)), Accuracy::Approximate);
        b.tree("t1", "1 A STREET", point(3.0, 0.0));
        b.tree("t2", "2 A STREET", point(33.0, 0.0));
        let filtered = rooftop_filter(&b.inputs);
        assert!(filtered.trees.is_empty());
        assert!(filtered.groups.is_empty());
        let r = categorize(&filtered, &b.truth, &EvalParams::default()).unwrap();
        assert_eq!(r.total, 0);
    }

    #[test]
    fn report_renders_both_formats() {
        let r = EvaluationReport {
            geocoding_not_possible: 4,
            geocoding_outlier: 0,
            geocoding_wrong: 343,
            no_tree_detected: 170,
            no_tree_assigned: 65,
            tree_assigned_incorrectly: 393,
            tree_correct: 726,
            total: 1701,
        };
        let table = r.render_table();
        assert!(table.contains("Tree correct"));
        assert!(table.contains("42.7"));
        let kv = r.render_kv();
        assert!(kv.contains("tree_correct=726"));
        assert!(kv.contains("tree_correct_pct=42.7"));
        assert!(kv.contains("total=1701"));
    }
}
