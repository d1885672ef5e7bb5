//! Line-oriented tabular file formats shared by the pipeline stages, plus a
//! GeoJSON emitter for map display. All files are UTF-8 with a tab-separated
//! header row; coordinates carry 9 decimal places. Writers go through a temp
//! file and an atomic rename.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::assign::ExpandedMatch;
use crate::error::{Error, Result};
use crate::fuse::FusedTree;
use crate::geo::GeoPoint;
use crate::geocode::{Accuracy, GeocodedAddress};
use crate::project::{Detection, PanoramaMeta, ProjectedDetection};

/// Writes `content` to `path` atomically (temp file, then rename).
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(content.as_bytes())?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    Ok(std::io::BufReader::new(std::fs::File::open(path)?))
}

fn malformed(line: usize, msg: impl Into<String>) -> Error {
    Error::MalformedInput {
        line,
        msg: msg.into(),
    }
}

/// Splits a data file into header-checked tab rows.
fn read_rows(path: &Path, expected_header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut lines = open(path)?.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l?,
        None => return Err(malformed(1, "missing header row")),
    };
    if header != expected_header {
        return Err(malformed(
            1,
            format!("expected header '{expected_header}', found '{header}'"),
        ));
    }
    let n_cols = expected_header.split('\t').count();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
        if fields.len() != n_cols {
            return Err(malformed(
                i + 1,
                format!("expected {n_cols} fields, found {}", fields.len()),
            ));
        }
        rows.push((i + 1, fields));
    }
    Ok(rows)
}

fn parse_f64(line: usize, field: &str, what: &str) -> Result<f64> {
    field
        .parse()
        .map_err(|_| malformed(line, format!("unparsable {what} '{field}'")))
}

fn parse_point(line: usize, lat: &str, lon: &str) -> Result<GeoPoint> {
    GeoPoint::new(
        parse_f64(line, lat, "latitude")?,
        parse_f64(line, lon, "longitude")?,
    )
    .map_err(|e| malformed(line, e.to_string()))
}

pub const PANORAMA_HEADER: &str = "pano_id\tlat\tlon\theading\twidth_px\theight_px";

pub fn write_panoramas(path: &Path, panos: &[PanoramaMeta]) -> Result<()> {
    let mut out = String::from(PANORAMA_HEADER);
    out.push('\n');
    for p in panos {
        out.push_str(&format!(
            "{}\t{:.9}\t{:.9}\t{:.3}\t{}\t{}\n",
            p.pano_id,
            p.camera.lat(),
            p.camera.lon(),
            p.heading_deg,
            p.width_px,
            p.height_px
        ));
    }
    write_atomic(path, &out)
}

pub fn read_panoramas(path: &Path, camera_height_m: f64) -> Result<Vec<PanoramaMeta>> {
    read_rows(path, PANORAMA_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let camera = parse_point(line, &f[1], &f[2])?;
            let heading = parse_f64(line, &f[3], "heading")?;
            let width: u32 = f[4]
                .parse()
                .map_err(|_| malformed(line, "unparsable width"))?;
            let height: u32 = f[5]
                .parse()
                .map_err(|_| malformed(line, "unparsable height"))?;
            PanoramaMeta::new(
                f[0].clone(),
                camera,
                heading,
                width,
                height,
                camera_height_m,
            )
            .map_err(|e| malformed(line, e.to_string()))
        })
        .collect()
}

pub const DETECTION_HEADER: &str = "pano_id\tx_min\ty_min\tx_max\ty_max\tscore";

pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    let mut out = String::from(DETECTION_HEADER);
    out.push('\n');
    for d in detections {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            d.pano_id, d.x_min, d.y_min, d.x_max, d.y_max, d.score
        ));
    }
    write_atomic(path, &out)
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    read_rows(path, DETECTION_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            Detection::new(
                f[0].clone(),
                parse_f64(line, &f[1], "x_min")?,
                parse_f64(line, &f[2], "y_min")?,
                parse_f64(line, &f[3], "x_max")?,
                parse_f64(line, &f[4], "y_max")?,
                parse_f64(line, &f[5], "score")?,
            )
            .map_err(|e| malformed(line, e.to_string()))
        })
        .collect()
}

pub const INVENTORY_HEADER: &str = "tree_id\taddress\tspecies\tlat\tlon";

/// Normalized inventory table (the `ingest` stage output).
pub fn write_inventory(path: &Path, trees: &[crate::inventory::InventoryTree]) -> Result<()> {
    let mut out = String::from(INVENTORY_HEADER);
    out.push('\n');
    for t in trees {
        let (lat, lon) = match t.ground_truth {
            Some(p) => (format!("{:.9}", p.lat()), format!("{:.9}", p.lon())),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            t.tree_id,
            t.address,
            t.species.as_deref().unwrap_or(""),
            lat,
            lon
        ));
    }
    write_atomic(path, &out)
}

pub fn read_inventory(path: &Path) -> Result<Vec<crate::inventory::InventoryTree>> {
    read_rows(path, INVENTORY_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let ground_truth = if f[3].is_empty() || f[4].is_empty() {
                None
            } else {
                Some(parse_point(line, &f[3], &f[4])?)
            };
            Ok(crate::inventory::InventoryTree {
                tree_id: f[0].clone(),
                address: f[1].clone(),
                species: (!f[2].is_empty()).then(|| f[2].clone()),
                ground_truth,
            })
        })
        .collect()
}

pub const GEOCODED_HEADER: &str = "address\tlat\tlon\taccuracy\tcapacity_k\toutlier";

pub fn write_geocoded(
    path: &Path,
    records: &[GeocodedAddress],
    outliers: &std::collections::HashSet<String>,
) -> Result<()> {
    let mut out = String::from(GEOCODED_HEADER);
    out.push('\n');
    for r in records {
        let (lat, lon) = match r.point {
            Some(p) => (format!("{:.9}", p.lat()), format!("{:.9}", p.lon())),
            None => ("-".into(), "-".into()),
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.address,
            lat,
            lon,
            r.accuracy,
            r.capacity_k,
            u8::from(outliers.contains(&r.address))
        ));
    }
    write_atomic(path, &out)
}

pub fn read_geocoded(
    path: &Path,
) -> Result<(Vec<GeocodedAddress>, std::collections::HashSet<String>)> {
    let mut records = Vec::new();
    let mut outliers = std::collections::HashSet::new();
    for (line, f) in read_rows(path, GEOCODED_HEADER)? {
        let accuracy = Accuracy::parse(&f[3])
            .ok_or_else(|| malformed(line, format!("unknown accuracy '{}'", f[3])))?;
        let point = if f[1] == "-" || f[2] == "-" {
            None
        } else {
            Some(parse_point(line, &f[1], &f[2])?)
        };
        if accuracy == Accuracy::Failed && point.is_some() {
            return Err(malformed(line, "FAILED row carries coordinates"));
        }
        let capacity_k: usize = f[4]
            .parse()
            .map_err(|_| malformed(line, "unparsable capacity"))?;
        if f[5] == "1" {
            outliers.insert(f[0].clone());
        } else if f[5] != "0" {
            return Err(malformed(line, "outlier flag must be 0 or 1"));
        }
        records.push(GeocodedAddress {
            address: f[0].clone(),
            point,
            accuracy,
            capacity_k,
        });
    }
    Ok((records, outliers))
}

pub const PROJECTED_HEADER: &str = "lat\tlon\tscore\tsource_pano\tcamera_distance_m";

pub fn write_projected(path: &Path, projected: &[ProjectedDetection]) -> Result<()> {
    let mut out = String::from(PROJECTED_HEADER);
    out.push('\n');
    for p in projected {
        out.push_str(&format!(
            "{:.9}\t{:.9}\t{:.6}\t{}\t{:.6}\n",
            p.point.lat(),
            p.point.lon(),
            p.score,
            p.source_pano,
            p.camera_distance_m
        ));
    }
    write_atomic(path, &out)
}

pub fn read_projected(path: &Path) -> Result<Vec<ProjectedDetection>> {
    read_rows(path, PROJECTED_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            Ok(ProjectedDetection {
                point: parse_point(line, &f[0], &f[1])?,
                score: parse_f64(line, &f[2], "score")?,
                source_pano: f[3].clone(),
                camera_distance_m: parse_f64(line, &f[4], "camera distance")?,
            })
        })
        .collect()
}

pub const FUSED_HEADER: &str = "lat\tlon\tfused_score\tmember_count\tmember_panos";

pub fn write_fused(path: &Path, fused: &[FusedTree]) -> Result<()> {
    let mut out = String::from(FUSED_HEADER);
    out.push('\n');
    for f in fused {
        let panos: Vec<&str> = f.member_panos.iter().map(String::as_str).collect();
        out.push_str(&format!(
            "{:.9}\t{:.9}\t{:.6}\t{}\t{}\n",
            f.point.lat(),
            f.point.lon(),
            f.fused_score,
            f.member_count,
            panos.join(",")
        ));
    }
    write_atomic(path, &out)
}

pub fn read_fused(path: &Path) -> Result<Vec<FusedTree>> {
    read_rows(path, FUSED_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            Ok(FusedTree {
                point: parse_point(line, &f[0], &f[1])?,
                fused_score: parse_f64(line, &f[2], "fused score")?,
                member_count: f[3]
                    .parse()
                    .map_err(|_| malformed(line, "unparsable member count"))?,
                member_panos: f[4]
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect(),
            })
        })
        .collect()
}

pub const MATCHES_HEADER: &str = "tree_id\taddress\tlat\tlon\tdist_m";

pub fn write_matches(path: &Path, matches: &[ExpandedMatch], addresses: &[String]) -> Result<()> {
    let mut out = String::from(MATCHES_HEADER);
    out.push('\n');
    for m in matches {
        out.push_str(&format!(
            "{}\t{}\t{:.9}\t{:.9}\t{:.3}\n",
            m.tree_id,
            addresses[m.address_index],
            m.point.lat(),
            m.point.lon(),
            m.dist_m
        ));
    }
    write_atomic(path, &out)
}

pub const GROUND_TRUTH_HEADER: &str = "tree_id\tlat\tlon";

pub fn write_ground_truth(
    path: &Path,
    truth: &std::collections::HashMap<String, GeoPoint>,
) -> Result<()> {
    let mut ids: Vec<&String> = truth.keys().collect();
    ids.sort();
    let mut out = String::from(GROUND_TRUTH_HEADER);
    out.push('\n');
    for id in ids {
        let p = truth[id];
        out.push_str(&format!("{id}\t{:.9}\t{:.9}\n", p.lat(), p.lon()));
    }
    write_atomic(path, &out)
}

pub fn read_ground_truth(path: &Path) -> Result<std::collections::HashMap<String, GeoPoint>> {
    read_rows(path, GROUND_TRUTH_HEADER)?
        .into_iter()
        .map(|(line, f)| Ok((f[0].clone(), parse_point(line, &f[1], &f[2])?)))
        .collect()
}

fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

/// One GeoJSON point feature; properties are (key, json-encoded value) pairs.
fn feature(point: GeoPoint, properties: &[(&str, String)]) -> String {
    let props: Vec<String> = properties
        .iter()
        .map(|(k, v)| format!("\"{}\":{}", json_escape(k), v))
        .collect();
    format!(
        "{{\"type\":\"Feature\",\"geometry\":{{\"type\":\"Point\",\"coordinates\":[{:.9},{:.9}]}},\"properties\":{{{}}}}}",
        point.lon(),
        point.lat(),
        props.join(",")
    )
}

fn feature_collection(features: &[String]) -> String {
    let mut out = String::from("{\"type\":\"FeatureCollection\",\"features\":[\n");
    out.push_str(&features.join(",\n"));
    out.push_str("\n]}\n");
    out
}

/// Fused trees as a GeoJSON FeatureCollection.
pub fn write_fused_geojson(path: &Path, fused: &[FusedTree]) -> Result<()> {
    let features: Vec<String> = fused
        .iter()
        .map(|f| {
            feature(
                f.point,
                &[
                    ("fused_score", format!("{:.6}", f.fused_score)),
                    ("member_count", f.member_count.to_string()),
                ],
            )
        })
        .collect();
    write_atomic(path, &feature_collection(&features))
}

/// Matched trees as a GeoJSON FeatureCollection with tree_id, address and
/// score attributes.
pub fn write_matches_geojson(
    path: &Path,
    matches: &[ExpandedMatch],
    addresses: &[String],
    fused: &[FusedTree],
) -> Result<()> {
    let features: Vec<String> = matches
        .iter()
        .map(|m| {
            feature(
                m.point,
                &[
                    ("tree_id", format!("\"{}\"", json_escape(&m.tree_id))),
                    (
                        "address",
                        format!("\"{}\"", json_escape(&addresses[m.address_index])),
                    ),
                    ("score", format!("{:.6}", fused[m.fused_index].fused_score)),
                    ("dist_m", format!("{:.3}", m.dist_m)),
                ],
            )
        })
        .collect();
    write_atomic(path, &feature_collection(&features))
}
