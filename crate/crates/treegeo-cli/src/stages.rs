//! Pipeline stages over the shared file formats. Each stage reads its inputs,
//! writes its outputs into the configured directory, and prints one summary
//! line (counts and timing go to stdout only, never into output files, so
//! reruns stay byte-identical).

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};

use treegeo::assign::{self, ExpandedMatch};
use treegeo::evaluate::{self, EvalInputs};
use treegeo::formats;
use treegeo::fuse;
use treegeo::geo::GeoPoint;
use treegeo::geocode::{self, Accuracy, FileGeocoder, GeocodeCache, GeocodeOptions};
use treegeo::inventory::{self, SchemaMap};
use treegeo::project;
use treegeo::synth;

use crate::config::RunConfig;

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| anyhow!("missing required setting '{key}'"))
}

fn must_exist(path: &Path) -> Result<&Path> {
    if !path.exists() {
        bail!("input file not found: {}", path.display());
    }
    Ok(path)
}

fn out_file(config: &RunConfig, name: &str) -> PathBuf {
    config.out_dir.join(name)
}

fn ensure_out_dir(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir).with_context(|| {
        format!(
            "cannot create output directory {}",
            config.out_dir.display()
        )
    })
}

pub fn ingest(config: &RunConfig) -> Result<()> {
    let start = Instant::now();
    ensure_out_dir(config)?;
    let path = must_exist(require(&config.inventory, "inventory")?)?;
    let file =
        std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let schema = SchemaMap {
        address: config.address_column.clone(),
        id: config.id_column.clone(),
        species: config.species_column.clone(),
        lat: config.lat_column.clone(),
        lon: config.lon_column.clone(),
    };
    let (trees, stats) =
        inventory::load_inventory(std::io::BufReader::new(file), &schema, config.delimiter)?;
    let groups = inventory::group_by_address(&trees);
    formats::write_inventory(&out_file(config, "inventory.tsv"), &trees)?;
    println!(
        "ingest: trees={} addresses={} dropped_empty_address={} coordinate_warnings={} elapsed_ms={}",
        trees.len(),
        groups.len(),
        stats.dropped_empty_address,
        stats.coordinate_warnings,
        start.elapsed().as_millis()
    );
    Ok(())
}

pub fn geocode(config: &RunConfig) -> Result<()> {
    let start = Instant::now();
    ensure_out_dir(config)?;
    let trees = formats::read_inventory(must_exist(&out_file(config, "inventory.tsv"))?)?;
    let groups = inventory::group_by_address(&trees);
    let geocoder_path = must_exist(require(&config.geocoder_file, "geocoder_file")?)?;
    let client = FileGeocoder::from_path(geocoder_path)?;
    let cache_path = config.cache_path();
    let mut cache = GeocodeCache::load(&cache_path)?;
    let (records, stats) = geocode::geocode_all(
        &groups,
        &client,
        &mut cache,
        &GeocodeOptions {
            retries: config.geocode_retries,
        },
    );

    let resolved: Vec<&geocode::GeocodedAddress> = records
        .iter()
        .filter(|r| r.accuracy != Accuracy::Failed)
        .collect();
    let points: Vec<GeoPoint> = resolved.iter().map(|r| r.point.unwrap()).collect();
    let flags = geocode::zscore_flags(&points, config.zscore_threshold);
    let outliers: HashSet<String> = resolved
        .iter()
        .zip(&flags)
        .filter(|(_, &f)| f)
        .map(|(r, _)| r.address.clone())
        .collect();

    formats::write_geocoded(&out_file(config, "geocoded.tsv"), &records, &outliers)?;
    cache.save(&cache_path)?;
    println!(
        "geocode: addresses={} cache_hits={} client_calls={} failed={} transport_failures={} outliers={} elapsed_ms={}",
        records.len(),
        stats.cache_hits,
        stats.client_calls,
        records.iter().filter(|r| r.accuracy == Accuracy::Failed).count(),
        stats.transport_failures,
        outliers.len(),
        start.elapsed().as_millis()
    );
    Ok(())
}

pub fn project(config: &RunConfig) -> Result<()> {
    let start = Instant::now();
    ensure_out_dir(config)?;
    let panos = formats::read_panoramas(
        must_exist(require(&config.panoramas, "panoramas")?)?,
        config.camera_height_m,
    )?;
    let detections =
        formats::read_detections(must_exist(require(&config.detections, "detections")?)?)?;
    let (projected, stats) =
        project::project_all(&panos, &detections, config.max_projection_distance_m);
    formats::write_projected(&out_file(config, "projected.tsv"), &projected)?;
    println!(
        "project: detections={} projected={} no_ground={} too_far={} invalid={} elapsed_ms={}",
        detections.len(),
        stats.projected,
        stats.no_ground,
        stats.too_far,
        stats.invalid,
        start.elapsed().as_millis()
    );
    Ok(())
}

pub fn fuse(config: &RunConfig) -> Result<()> {
    let start = Instant::now();
    ensure_out_dir(config)?;
    let projected = formats::read_projected(must_exist(&out_file(config, "projected.tsv"))?)?;
    let panos = formats::read_panoramas(
        must_exist(require(&config.panoramas, "panoramas")?)?,
        config.camera_height_m,
    )?;
    let fused_all = fuse::fuse_detections(
        &projected,
        &fuse::FuseParams {
            radius_m: config.fuse_radius_m,
            idw_epsilon_m: config.idw_epsilon_m,
            idw_exponent: config.idw_exponent,
        },
    );
    let n_before = fused_all.len();
    let cameras: Vec<GeoPoint> = panos.iter().map(|p| p.camera).collect();
    let fused = if cameras.is_empty() {
        fused_all
    } else {
        fuse::filter_far_from_street(fused_all, &cameras, config.street_filter_m)
    };
    formats::write_fused(&out_file(config, "fused.tsv"), &fused)?;
    formats::write_fused_geojson(&out_file(config, "fused.geojson"), &fused)?;
    println!(
        "fuse: projected={} fused={} far_from_street={} elapsed_ms={}",
        projected.len(),
        fused.len(),
        n_before - fused.len(),
        start.elapsed().as_millis()
    );
    Ok(())
}

pub fn assign(config: &RunConfig) -> Result<()> {
    let start = Instant::now();
    ensure_out_dir(config)?;
    let trees = formats::read_inventory(must_exist(&out_file(config, "inventory.tsv"))?)?;
    let groups = inventory::group_by_address(&trees);
    let (records, outliers) =
        formats::read_geocoded(must_exist(&out_file(config, "geocoded.tsv"))?)?;
    let fused = formats::read_fused(must_exist(&out_file(config, "fused.tsv"))?)?;

    let assignable: Vec<geocode::GeocodedAddress> = records
        .iter()
        .filter(|r| r.accuracy != Accuracy::Failed && !outliers.contains(&r.address))
        .cloned()
        .collect();
    let by_addr: HashMap<&str, &inventory::AddressGroup> =
        groups.iter().map(|g| (g.address.as_str(), g)).collect();
    let assignable_groups: Vec<inventory::AddressGroup> = assignable
        .iter()
        .map(|r| {
            by_addr
                .get(r.address.as_str())
                .copied()
                .cloned()
                .ok_or_else(|| anyhow!("geocoded address '{}' missing from inventory", r.address))
        })
        .collect::<Result<_>>()?;

    let candidates = assign::build_candidates(&assignable, &fused, config.max_match_distance_m);
    let capacities: Vec<usize> = assignable.iter().map(|r| r.capacity_k).collect();
    let result = assign::solve_assignment(
        &candidates,
        &capacities,
        fused.len(),
        config.max_match_distance_m,
    )?;
    let expanded = assign::expand_to_trees(&result, &assignable_groups, &fused);
    let addresses: Vec<String> = assignable.iter().map(|r| r.address.clone()).collect();

    formats::write_matches(&out_file(config, "matches.tsv"), &expanded, &addresses)?;
    formats::write_matches_geojson(
        &out_file(config, "matches.geojson"),
        &expanded,
        &addresses,
        &fused,
    )?;
    formats::write_atomic(
        &out_file(config, "assign_summary.kv"),
        &format!(
            "objective={:.6}\nmatches={}\ncandidates={}\nunmatched_trees={}\nunfilled_capacity={}\n",
            result.objective_value,
            result.matches.len(),
            candidates.len(),
            result.unmatched_trees,
            result.unfilled_capacity
        ),
    )?;
    println!(
        "assign: addresses={} trees={} candidates={} matches={} objective={:.3} elapsed_ms={}",
        assignable.len(),
        fused.len(),
        candidates.len(),
        result.matches.len(),
        result.objective_value,
        start.elapsed().as_millis()
    );
    Ok(())
}

/// Rebuilds the evaluation bundle from stage output files.
fn eval_inputs(config: &RunConfig) -> Result<EvalInputs> {
    let trees = formats::read_inventory(must_exist(&out_file(config, "inventory.tsv"))?)?;
    let groups = inventory::group_by_address(&trees);
    let (geocoded, outlier_addresses) =
        formats::read_geocoded(must_exist(&out_file(config, "geocoded.tsv"))?)?;
    let fused = formats::read_fused(must_exist(&out_file(config, "fused.tsv"))?)?;

    // Reconstruct expanded matches from the matches table. The fused index is
    // recovered by nearest point; coordinates carry 9 decimals, so the lookup
    // is unambiguous at any realistic density.
    let addr_index: HashMap<&str, usize> = groups
        .iter()
        .enumerate()
        .map(|(i, g)| (g.address.as_str(), i))
        .collect();
    let rows = std::fs::read_to_string(out_file(config, "matches.tsv"))
        .with_context(|| "missing matches.tsv; run the assign stage first".to_string())?;
    let mut expanded = Vec::new();
    for (i, line) in rows.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            bail!("matches.tsv line {}: expected 5 fields", i + 1);
        }
        let point = GeoPoint::new(f[2].parse()?, f[3].parse()?)?;
        let fused_index = fused
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                treegeo::geo::local_distance_m(a.point, point)
                    .total_cmp(&treegeo::geo::local_distance_m(b.point, point))
            })
            .map(|(idx, _)| idx)
            .unwrap_or(0);
        expanded.push(ExpandedMatch {
            tree_id: f[0].to_string(),
            address_index: addr_index.get(f[1]).copied().unwrap_or(0),
            fused_index,
            point,
            dist_m: f[4].parse()?,
        });
    }

    Ok(EvalInputs {
        trees,
        groups,
        geocoded,
        outlier_addresses,
        fused,
        expanded,
    })
}

pub fn evaluate(config: &RunConfig) -> Result<()> {
    let start = Instant::now();
    ensure_out_dir(config)?;
    let inputs = eval_inputs(config)?;
    let params = config.eval_params();

    // Ground truth from the configured table, falling back to coordinates
    // embedded in the inventory.
    let truth: HashMap<String, GeoPoint> = match &config.ground_truth {
        Some(path) => formats::read_ground_truth(must_exist(path)?)?,
        None => inputs
            .trees
            .iter()
            .filter_map(|t| t.ground_truth.map(|p| (t.tree_id.clone(), p)))
            .collect(),
    };

    let blind = evaluate::blind_report(&inputs, &params);
    formats::write_atomic(&out_file(config, "blind_report.kv"), &blind.render_kv())?;

    let mut summary = format!(
        "evaluate: total={} blind_assigned={}",
        inputs.trees.len(),
        blind.assigned
    );
    let covered =
        !inputs.trees.is_empty() && inputs.trees.iter().all(|t| truth.contains_key(&t.tree_id));
    if covered {
        let report = evaluate::categorize(&inputs, &truth, &params)?;
        formats::write_atomic(&out_file(config, "report.txt"), &report.render_table())?;
        formats::write_atomic(&out_file(config, "report.kv"), &report.render_kv())?;
        summary.push_str(&format!(
            " tree_correct={} ({:.1}%)",
            report.tree_correct,
            report.percentage(report.tree_correct)
        ));
        if config.rooftop_only {
            let filtered = evaluate::rooftop_filter(&inputs);
            let rooftop_truth: HashMap<String, GeoPoint> = filtered
                .trees
                .iter()
                .filter_map(|t| truth.get(&t.tree_id).map(|p| (t.tree_id.clone(), *p)))
                .collect();
            let rooftop = evaluate::categorize(&filtered, &rooftop_truth, &params)?;
            formats::write_atomic(
                &out_file(config, "report_rooftop.txt"),
                &rooftop.render_table(),
            )?;
            formats::write_atomic(&out_file(config, "report_rooftop.kv"), &rooftop.render_kv())?;
            summary.push_str(&format!(
                " rooftop_tree_correct={} ({:.1}%)",
                rooftop.tree_correct,
                rooftop.percentage(rooftop.tree_correct)
            ));
        }
    } else if config.ground_truth.is_some() {
        bail!("ground truth does not cover every inventory tree");
    }
    summary.push_str(&format!(" elapsed_ms={}", start.elapsed().as_millis()));
    println!("{summary}");
    Ok(())
}

/// Synth stage flags beyond the shared config.
#[derive(Debug, Clone, clap::Args)]
pub struct SynthArgs {
    #[arg(long = "streets", default_value_t = 4)]
    pub streets: usize,
    #[arg(long = "blocks", default_value_t = 3)]
    pub blocks: usize,
    #[arg(long = "address_spacing_m", default_value_t = 20.0)]
    pub address_spacing_m: f64,
    #[arg(long = "street_spacing_m", default_value_t = 100.0)]
    pub street_spacing_m: f64,
    #[arg(long = "camera_spacing_m", default_value_t = 15.0)]
    pub camera_spacing_m: f64,
    /// Weights for 0,1,2,3 trees per address, comma separated.
    #[arg(long = "tree_weights", default_value = "0.15,0.30,0.30,0.25")]
    pub tree_weights: String,
    #[arg(long = "noise_sigma_m", default_value_t = 0.0)]
    pub noise_sigma_m: f64,
    #[arg(long = "miss_rate", default_value_t = 0.0)]
    pub miss_rate: f64,
    #[arg(long = "false_positive_rate", default_value_t = 0.0)]
    pub false_positive_rate: f64,
    #[arg(long = "non_rooftop_fraction", default_value_t = 0.0)]
    pub non_rooftop_fraction: f64,
    #[arg(long = "geocode_offset_m", default_value_t = 30.0)]
    pub geocode_offset_m: f64,
    #[arg(long = "inject_failed_geocodes", default_value_t = 0)]
    pub inject_failed_geocodes: usize,
    #[arg(long = "inject_far_geocodes", default_value_t = 0)]
    pub inject_far_geocodes: usize,
    #[arg(long = "inject_missed_addresses", default_value_t = 0)]
    pub inject_missed_addresses: usize,
}

impl SynthArgs {
    pub fn to_config(&self, seed: u64) -> Result<synth::SynthConfig> {
        let weights: Vec<f64> = self
            .tree_weights
            .split(',')
            .map(|w| {
                w.trim()
                    .parse()
                    .map_err(|_| anyhow!("bad tree weight '{w}'"))
            })
            .collect::<Result<_>>()?;
        if weights.len() != 4 {
            bail!("tree_weights needs exactly 4 comma-separated values");
        }
        Ok(synth::SynthConfig {
            seed,
            n_streets: self.streets,
            blocks_per_street: self.blocks,
            address_spacing_m: self.address_spacing_m,
            street_spacing_m: self.street_spacing_m,
            camera_spacing_m: self.camera_spacing_m,
            trees_per_address: [weights[0], weights[1], weights[2], weights[3]],
            detection_noise_sigma_m: self.noise_sigma_m,
            miss_rate: self.miss_rate,
            false_positive_rate: self.false_positive_rate,
            non_rooftop_fraction: self.non_rooftop_fraction,
            geocode_offset_m: self.geocode_offset_m,
            inject_failed_geocodes: self.inject_failed_geocodes,
            inject_far_geocodes: self.inject_far_geocodes,
            inject_missed_addresses: self.inject_missed_addresses,
        })
    }
}

pub fn synth_cmd(config: &RunConfig, args: &SynthArgs) -> Result<()> {
    let start = Instant::now();
    ensure_out_dir(config)?;
    let scene = synth::generate(&args.to_config(config.seed)?)?;

    // Raw inventory in the legacy comma-separated shape the ingest stage
    // consumes.
    let mut raw = String::from("tree_id,address,species,lat,lon\n");
    for row in &scene.raw_rows {
        raw.push_str(&format!(
            "{},{},{},{:.9},{:.9}\n",
            row.tree_id, row.raw_address, row.species, row.lat, row.lon
        ));
    }
    formats::write_atomic(&out_file(config, "raw_inventory.csv"), &raw)?;

    // Geocoder fixture, same line format as the cache.
    let mut cache = GeocodeCache::new();
    for (addr, outcome) in &scene.geocoder_entries {
        match outcome {
            treegeo::geocode::GeocodeOutcome::Resolved { point, accuracy } => {
                cache.insert(addr.clone(), Some(*point), *accuracy)
            }
            treegeo::geocode::GeocodeOutcome::NotFound => {
                cache.insert(addr.clone(), None, Accuracy::Failed)
            }
        }
    }
    cache.save(&out_file(config, "geocoder.tsv"))?;

    formats::write_panoramas(&out_file(config, "panoramas.tsv"), &scene.panoramas)?;
    formats::write_detections(&out_file(config, "detections.tsv"), &scene.detections)?;
    formats::write_ground_truth(&out_file(config, "ground_truth.tsv"), &scene.ground_truth)?;

    println!(
        "synth: trees={} addresses={} panoramas={} detections={} injected_failed={} injected_far={} injected_missed={} unambiguous={} elapsed_ms={}",
        scene.trees.len(),
        scene.geocoder_entries.len(),
        scene.panoramas.len(),
        scene.detections.len(),
        scene.injected.failed_geocode_trees,
        scene.injected.far_geocode_trees,
        scene.injected.missed_trees,
        scene.unambiguous_trees,
        start.elapsed().as_millis()
    );
    Ok(())
}

/// Chains ingest, geocode, project, fuse, assign and evaluate over the
/// intermediate files, so a run-all equals the stage-by-stage application.
pub fn run_all(config: &RunConfig) -> Result<()> {
    ingest(config)?;
    geocode(config)?;
    project(config)?;
    fuse(config)?;
    assign(config)?;
    evaluate(config)?;
    Ok(())
}
