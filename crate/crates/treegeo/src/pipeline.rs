//! In-memory orchestration of the full processing chain: group, geocode,
//! z-filter, project, fuse, assign, expand. The CLI stages wrap the same
//! functions around the shared file formats.

use std::collections::HashSet;

use crate::assign::{self, AssignmentResult, ExpandedMatch};
use crate::error::Result;
use crate::evaluate::EvalInputs;
use crate::fuse::{self, FusedTree};
use crate::geo::GeoPoint;
use crate::geocode::{
    self, Accuracy, GeocodeCache, GeocodeClient, GeocodeOptions, GeocodeStats, GeocodedAddress,
};
use crate::inventory::{group_by_address, AddressGroup, InventoryTree};
use crate::project::{self, Detection, PanoramaMeta, ProjectStats, ProjectedDetection};

/// All pipeline tuning knobs with their standard defaults.
#[derive(Debug, Clone)]
pub struct PipelineParams {
    /// Maximum admissible match distance M, meters.
    pub max_match_distance_m: f64,
    /// Fusion clustering / IDW neighborhood radius, meters.
    pub fuse_radius_m: f64,
    /// Additive IDW smoothing, meters.
    pub idw_epsilon_m: f64,
    /// Inverse-distance exponent in the fusion weights.
    pub idw_exponent: f64,
    /// Coordinate outlier threshold in standard deviations.
    pub zscore_threshold: f64,
    /// Camera height above ground, meters.
    pub camera_height_m: f64,
    /// Projection ground-distance cutoff, meters.
    pub max_projection_distance_m: f64,
    /// Fused trees farther than this from every camera are dropped, meters.
    pub street_filter_m: f64,
    /// Detection-to-truth tolerance when judging correctness, meters.
    pub correct_tolerance_m: f64,
    /// Geocoder transport retries.
    pub geocode_retries: u32,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            max_match_distance_m: assign::DEFAULT_MAX_MATCH_DISTANCE_M,
            fuse_radius_m: fuse::DEFAULT_FUSE_RADIUS_M,
            idw_epsilon_m: fuse::DEFAULT_IDW_EPSILON_M,
            idw_exponent: fuse::DEFAULT_IDW_EXPONENT,
            zscore_threshold: 3.0,
            camera_height_m: project::DEFAULT_CAMERA_HEIGHT_M,
            max_projection_distance_m: project::DEFAULT_MAX_DISTANCE_M,
            street_filter_m: 50.0,
            correct_tolerance_m: 4.0,
            geocode_retries: 2,
        }
    }
}

/// Everything a full run produces, ready for file emission or evaluation.
pub struct PipelineRun {
    pub groups: Vec<AddressGroup>,
    pub geocoded: Vec<GeocodedAddress>,
    pub geocode_stats: GeocodeStats,
    pub outlier_addresses: HashSet<String>,
    pub projected: Vec<ProjectedDetection>,
    pub project_stats: ProjectStats,
    pub fused: Vec<FusedTree>,
    /// Fused trees dropped by the street filter.
    pub far_from_street: usize,
    pub assignment: AssignmentResult,
    /// Addresses that entered the assignment, index-aligned with the
    /// assignment's address indices.
    pub assignable: Vec<GeocodedAddress>,
    pub expanded: Vec<ExpandedMatch>,
}

impl PipelineRun {
    /// Bundles the run for the evaluation module.
    pub fn eval_inputs(&self, trees: &[InventoryTree]) -> EvalInputs {
        EvalInputs {
            trees: trees.to_vec(),
            groups: self.groups.clone(),
            geocoded: self.geocoded.clone(),
            outlier_addresses: self.outlier_addresses.clone(),
            fused: self.fused.clone(),
            expanded: self.expanded.clone(),
        }
    }
}

/// Runs the chain end to end over in-memory inputs.
pub fn run(
    trees: &[InventoryTree],
    panoramas: &[PanoramaMeta],
    detections: &[Detection],
    client: &dyn GeocodeClient,
    cache: &mut GeocodeCache,
    params: &PipelineParams,
) -> Result<PipelineRun> {
    let groups = group_by_address(trees);
    let (geocoded, geocode_stats) = geocode::geocode_all(
        &groups,
        client,
        cache,
        &GeocodeOptions {
            retries: params.geocode_retries,
        },
    );

    let resolved: Vec<&GeocodedAddress> = geocoded
        .iter()
        .filter(|r| r.accuracy != Accuracy::Failed)
        .collect();
    let points: Vec<GeoPoint> = resolved.iter().map(|r| r.point.unwrap()).collect();
    let flags = geocode::zscore_flags(&points, params.zscore_threshold);
    let outlier_addresses: HashSet<String> = resolved
        .iter()
        .zip(&flags)
        .filter(|(_, &f)| f)
        .map(|(r, _)| r.address.clone())
        .collect();

    let (projected, project_stats) =
        project::project_all(panoramas, detections, params.max_projection_distance_m);

    let fuse_params = fuse::FuseParams {
        radius_m: params.fuse_radius_m,
        idw_epsilon_m: params.idw_epsilon_m,
        idw_exponent: params.idw_exponent,
    };
    let fused_all = fuse::fuse_detections(&projected, &fuse_params);
    let n_before = fused_all.len();
    let cameras: Vec<GeoPoint> = panoramas.iter().map(|p| p.camera).collect();
    let fused = if cameras.is_empty() {
        fused_all
    } else {
        fuse::filter_far_from_street(fused_all, &cameras, params.street_filter_m)
    };
    let far_from_street = n_before - fused.len();

    // Assignment sees only resolved, non-outlier addresses.
    let assignable: Vec<GeocodedAddress> = geocoded
        .iter()
        .filter(|r| r.accuracy != Accuracy::Failed && !outlier_addresses.contains(&r.address))
        .cloned()
        .collect();
    let assignable_groups: Vec<AddressGroup> = {
        let by_addr: std::collections::HashMap<&str, &AddressGroup> =
            groups.iter().map(|g| (g.address.as_str(), g)).collect();
        assignable
            .iter()
            .map(|r| by_addr[r.address.as_str()].clone())
            .collect()
    };

    let candidates = assign::build_candidates(&assignable, &fused, params.max_match_distance_m);
    let capacities: Vec<usize> = assignable.iter().map(|r| r.capacity_k).collect();
    let assignment = assign::solve_assignment(
        &candidates,
        &capacities,
        fused.len(),
        params.max_match_distance_m,
    )?;
    let expanded = assign::expand_to_trees(&assignment, &assignable_groups, &fused);

    Ok(PipelineRun {
        groups,
        geocoded,
        geocode_stats,
        outlier_addresses,
        projected,
        project_stats,
        fused,
        far_from_street,
        assignment,
        assignable,
        expanded,
    })
}
