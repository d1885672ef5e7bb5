//! Address geocoding behind a pluggable client interface with a persistent
//! file cache, plus the z-score coordinate outlier filter.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::inventory::AddressGroup;
use crate::par::par_iter;
#[cfg(feature = "parallel")]
use crate::par::*;

/// How a geocoder arrived at a coordinate. `Failed` means no coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Accuracy {
    /// Center of the main building on the parcel; the most precise class.
    Rooftop,
    /// Interpolated between two precise points such as road intersections.
    Interpolated,
    /// Geometric center of a street or known region.
    Approximate,
    Failed,
}

impl Accuracy {
    pub fn name(self) -> &'static str {
        match self {
            Accuracy::Rooftop => "ROOFTOP",
            Accuracy::Interpolated => "INTERPOLATED",
            Accuracy::Approximate => "APPROXIMATE",
            Accuracy::Failed => "FAILED",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ROOFTOP" => Some(Accuracy::Rooftop),
            "INTERPOLATED" => Some(Accuracy::Interpolated),
            "APPROXIMATE" => Some(Accuracy::Approximate),
            "FAILED" => Some(Accuracy::Failed),
            _ => None,
        }
    }
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A geocoded address group. `point` is absent exactly when `accuracy` is
/// [`Accuracy::Failed`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeocodedAddress {
    pub address: String,
    pub point: Option<GeoPoint>,
    pub accuracy: Accuracy,
    pub capacity_k: usize,
}

/// Transport-level failure talking to a geocoder (as opposed to the geocoder
/// answering "no such address").
#[derive(Debug, Clone)]
pub struct TransportError(pub String);

/// Semantic answer from a geocoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeocodeOutcome {
    Resolved { point: GeoPoint, accuracy: Accuracy },
    NotFound,
}

/// A geocoding backend. Implementations must be safe to call from multiple
/// threads; `geocode_all` fans requests out in parallel.
pub trait GeocodeClient: Sync {
    fn resolve(
        &self,
        normalized_address: &str,
    ) -> std::result::Result<GeocodeOutcome, TransportError>;
}

/// File-backed geocoder for offline, deterministic runs. Same line format as
/// the cache; addresses absent from the file resolve to `NotFound`.
pub struct FileGeocoder {
    entries: HashMap<String, GeocodeOutcome>,
}

impl FileGeocoder {
    pub fn from_path(path: &Path) -> Result<Self> {
        let entries = read_cache_lines(path)?
            .into_iter()
            .map(|(addr, point, accuracy)| {
                let outcome = match point {
                    Some(p) => GeocodeOutcome::Resolved { point: p, accuracy },
                    None => GeocodeOutcome::NotFound,
                };
                (addr, outcome)
            })
            .collect();
        Ok(Self { entries })
    }

    pub fn from_entries(entries: HashMap<String, GeocodeOutcome>) -> Self {
        Self { entries }
    }
}

impl GeocodeClient for FileGeocoder {
    fn resolve(&self, addr: &str) -> std::result::Result<GeocodeOutcome, TransportError> {
        Ok(self
            .entries
            .get(addr)
            .copied()
            .unwrap_or(GeocodeOutcome::NotFound))
    }
}

/// Persistent key-value cache of geocoding results. Semantic results
/// (including definitive `NotFound`) are cached; transport failures are not,
/// so they are retried on the next run.
#[derive(Debug, Default)]
pub struct GeocodeCache {
    entries: HashMap<String, (Option<GeoPoint>, Accuracy)>,
}

impl GeocodeCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads a cache file; a missing file is an empty cache.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::new());
        }
        let entries = read_cache_lines(path)?
            .into_iter()
            .map(|(addr, point, accuracy)| (addr, (point, accuracy)))
            .collect();
        Ok(Self { entries })
    }

    /// Writes the cache sorted by address, via a temp file and atomic rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            for k in keys {
                let (point, accuracy) = &self.entries[k];
                match point {
                    Some(p) => writeln!(f, "{k}\t{:.9}\t{:.9}\t{}", p.lat(), p.lon(), accuracy)?,
                    None => writeln!(f, "{k}\t-\t-\t{accuracy}")?,
                }
            }
            f.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn get(&self, address: &str) -> Option<(Option<GeoPoint>, Accuracy)> {
        self.entries.get(address).cloned()
    }

    pub fn insert(&mut self, address: String, point: Option<GeoPoint>, accuracy: Accuracy) {
        self.entries.insert(address, (point, accuracy));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn read_cache_lines(path: &Path) -> Result<Vec<(String, Option<GeoPoint>, Accuracy)>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |msg: &str| Error::MalformedInput {
            line: i + 1,
            msg: msg.to_string(),
        };
        if fields.len() != 4 {
            return Err(bad(&format!(
                "expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let accuracy = Accuracy::parse(fields[3])
            .ok_or_else(|| bad(&format!("unknown accuracy '{}'", fields[3])))?;
        let point = if fields[1] == "-" || fields[2] == "-" {
            None
        } else {
            let lat: f64 = fields[1].parse().map_err(|_| bad("unparsable latitude"))?;
            let lon: f64 = fields[2].parse().map_err(|_| bad("unparsable longitude"))?;
            Some(GeoPoint::new(lat, lon).map_err(|e| bad(&e.to_string()))?)
        };
        if accuracy == Accuracy::Failed && point.is_some() {
            return Err(bad("FAILED entry carries coordinates"));
        }
        out.push((fields[0].to_string(), point, accuracy));
    }
    Ok(out)
}

/// Knobs for [`geocode_all`].
#[derive(Debug, Clone)]
pub struct GeocodeOptions {
    /// Retries after a transport failure before marking the address failed.
    pub retries: u32,
}

impl Default for GeocodeOptions {
    fn default() -> Self {
        Self { retries: 2 }
    }
}

/// Counters reported by [`geocode_all`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GeocodeStats {
    pub cache_hits: usize,
    pub client_calls: usize,
    /// Geocoder answered "no such address".
    pub semantic_failures: usize,
    /// Transport kept failing through all retries.
    pub transport_failures: usize,
}

/// Resolves every address group to a [`GeocodedAddress`], going to the client
/// only on cache misses. Output order matches input order. Failed entries are
/// retained so evaluation can count them.
pub fn geocode_all(
    groups: &[AddressGroup],
    client: &dyn GeocodeClient,
    cache: &mut GeocodeCache,
    options: &GeocodeOptions,
) -> (Vec<GeocodedAddress>, GeocodeStats) {
    let mut stats = GeocodeStats::default();

    let misses: Vec<&AddressGroup> = groups
        .iter()
        .filter(|g| cache.get(&g.address).is_none())
        .collect();
    // Group addresses are unique, so every non-miss is a hit.
    stats.cache_hits = groups.len() - misses.len();

    // (address, outcome, calls, cacheable)
    let resolved: Vec<(String, GeocodeOutcome, usize, bool)> = par_iter!(misses)
        .map(|g| {
            let mut calls = 0usize;
            for _ in 0..=options.retries {
                calls += 1;
                match client.resolve(&g.address) {
                    Ok(outcome) => return (g.address.clone(), outcome, calls, true),
                    Err(_) => continue,
                }
            }
            (g.address.clone(), GeocodeOutcome::NotFound, calls, false)
        })
        .collect();

    for (address, outcome, calls, cacheable) in resolved {
        stats.client_calls += calls;
        if !cacheable {
            stats.transport_failures += 1;
            continue;
        }
        match outcome {
            GeocodeOutcome::Resolved { point, accuracy } => {
                cache.insert(address, Some(point), accuracy);
            }
            GeocodeOutcome::NotFound => {
                stats.semantic_failures += 1;
                cache.insert(address, None, Accuracy::Failed);
            }
        }
    }

    let records = groups
        .iter()
        .map(|g| match cache.get(&g.address) {
            Some((point, accuracy)) => GeocodedAddress {
                address: g.address.clone(),
                point,
                accuracy,
                capacity_k: g.capacity_k,
            },
            // Transport-failed: marked failed for this run, not cached.
            None => GeocodedAddress {
                address: g.address.clone(),
                point: None,
                accuracy: Accuracy::Failed,
                capacity_k: g.capacity_k,
            },
        })
        .collect();

    (records, stats)
}

/// Population mean and standard deviation of a coordinate set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZScoreStats {
    pub mu_lat: f64,
    pub mu_lon: f64,
    pub sigma_lat: f64,
    pub sigma_lon: f64,
    pub n: usize,
}

/// Computes population (divide-by-n) statistics over the points.
pub fn zscore_stats(points: &[GeoPoint]) -> ZScoreStats {
    let n = points.len();
    assert!(n >= 1, "zscore_stats requires at least one point");
    let nf = n as f64;
    let mu_lat = points.iter().map(|p| p.lat()).sum::<f64>() / nf;
    let mu_lon = points.iter().map(|p| p.lon()).sum::<f64>() / nf;
    let var_lat = points
        .iter()
        .map(|p| (p.lat() - mu_lat).powi(2))
        .sum::<f64>()
        / nf;
    let var_lon = points
        .iter()
        .map(|p| (p.lon() - mu_lon).powi(2))
        .sum::<f64>()
        / nf;
    ZScoreStats {
        mu_lat,
        mu_lon,
        sigma_lat: var_lat.sqrt(),
        sigma_lon: var_lon.sqrt(),
        n,
    }
}

/// Flags per point: true when |z| exceeds `threshold` on either axis.
///
/// Statistics are computed once over the full input; the filter never
/// re-iterates after removing points. Degenerate cases flag nothing: a single
/// point, or an axis with zero spread (an outlier needs dispersion to be
/// defined against).
pub fn zscore_flags(points: &[GeoPoint], threshold: f64) -> Vec<bool> {
    if points.len() <= 1 {
        return vec![false; points.len()];
    }
    let stats = zscore_stats(points);
    points
        .iter()
        .map(|p| {
            let lat_out = stats.sigma_lat > 0.0
                && ((p.lat() - stats.mu_lat) / stats.sigma_lat).abs() > threshold;
            let lon_out = stats.sigma_lon > 0.0
                && ((p.lon() - stats.mu_lon) / stats.sigma_lon).abs() > threshold;
            lat_out || lon_out
        })
        .collect()
}

/// Splits records into (inliers, outliers) by the z-score rule. All records
/// must be resolved (non-`Failed`); statistics cover the full input in a
/// single pass.
pub fn zscore_filter(
    records: &[GeocodedAddress],
    threshold: f64,
) -> (Vec<GeocodedAddress>, Vec<GeocodedAddress>) {
    let points: Vec<GeoPoint> = records
        .iter()
        .map(|r| r.point.expect("zscore_filter requires resolved records"))
        .collect();
    let flags = zscore_flags(&points, threshold);
    let mut inliers = Vec::new();
    let mut outliers = Vec::new();
    for (r, flagged) in records.iter().zip(flags) {
        if flagged {
            outliers.push(r.clone());
        } else {
            inliers.push(r.clone());
        }
    }
    (inliers, outliers)
}
