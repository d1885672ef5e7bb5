//! Inventory ingestion: parse heterogeneous legacy tree tables into a unified
//! record format, normalize street addresses, and derive per-address tree
//! capacities.

use std::collections::HashMap;
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::geo::GeoPoint;

/// One tree record from a legacy inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct InventoryTree {
    /// Opaque unique identifier within a municipality dataset.
    pub tree_id: String,
    /// Normalized street address (see [`normalize_address`]).
    pub address: String,
    pub species: Option<String>,
    /// True position, present only for evaluation municipalities.
    pub ground_truth: Option<GeoPoint>,
}

/// All inventory trees sharing one normalized address. `capacity_k` bounds
/// how many detected trees the assignment stage may place at the address.
#[derive(Debug, Clone, PartialEq)]
pub struct AddressGroup {
    pub address: String,
    pub capacity_k: usize,
    /// Tree ids in input order.
    pub tree_ids: Vec<String>,
}

/// Column-name mapping for [`load_inventory`]. Only the address column is
/// required; records get a synthetic 1-based row id when no id column is
/// mapped.
#[derive(Debug, Clone)]
pub struct SchemaMap {
    pub address: String,
    pub id: Option<String>,
    pub species: Option<String>,
    pub lat: Option<String>,
    pub lon: Option<String>,
}

impl SchemaMap {
    pub fn address_only(address: &str) -> Self {
        Self {
            address: address.to_string(),
            id: None,
            species: None,
            lat: None,
            lon: None,
        }
    }
}

/// Counters reported alongside a successful load.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    /// Rows dropped because the address was empty after normalization.
    pub dropped_empty_address: usize,
    /// Rows whose optional lat/lon columns did not parse; record kept,
    /// ground truth absent.
    pub coordinate_warnings: usize,
}

/// Street-suffix expansions applied to the final address token.
const SUFFIX_TABLE: [(&str, &str); 9] = [
    ("ST", "STREET"),
    ("AVE", "AVENUE"),
    ("BLVD", "BOULEVARD"),
    ("DR", "DRIVE"),
    ("RD", "ROAD"),
    ("LN", "LANE"),
    ("CT", "COURT"),
    ("PL", "PLACE"),
    ("WAY", "WAY"),
];

/// Unit designators stripped (with their argument) before grouping, since
/// parcels rather than units carry trees.
const UNIT_MARKERS: [&str; 5] = ["APT", "UNIT", "STE", "SUITE", "#"];

/// Normalizes a raw street address: uppercase, collapse whitespace, strip
/// trailing periods from tokens, drop unit/apartment designators, and expand
/// a known suffix abbreviation in the final token. Idempotent.
pub fn normalize_address(raw: &str) -> String {
    let mut tokens: Vec<String> = raw
        .to_uppercase()
        .split_whitespace()
        .map(|t| t.trim_end_matches('.').to_string())
        .filter(|t| !t.is_empty())
        .collect();

    // Drop "#4" style tokens outright, and marker+argument pairs like "APT B".
    let mut stripped = Vec::with_capacity(tokens.len());
    let mut skip_next = false;
    for tok in tokens.drain(..) {
        if skip_next {
            skip_next = false;
            continue;
        }
        if tok.starts_with('#') {
            continue;
        }
        if UNIT_MARKERS.contains(&tok.as_str()) {
            skip_next = true;
            continue;
        }
        stripped.push(tok);
    }

    if let Some(last) = stripped.last_mut() {
        for (abbr, full) in SUFFIX_TABLE {
            if last == abbr {
                *last = full.to_string();
                break;
            }
        }
    }
    stripped.join(" ")
}

/// Loads inventory records from delimiter-separated text with a header row.
///
/// Rows with an empty address after normalization are dropped and counted.
/// A missing mapped column is a fatal error naming the column; an unparsable
/// coordinate in an optional column keeps the record and counts a warning.
pub fn load_inventory<R: BufRead>(
    reader: R,
    schema: &SchemaMap,
    delimiter: char,
) -> Result<(Vec<InventoryTree>, LoadStats)> {
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => {
            return Err(Error::MalformedInput {
                line: 1,
                msg: "empty input: missing header row".into(),
            })
        }
    };
    let columns: Vec<String> = header
        .split(delimiter)
        .map(|c| c.trim().to_string())
        .collect();
    let find = |name: &str| -> Option<usize> { columns.iter().position(|c| c == name) };
    let require = |name: &str| -> Result<usize> {
        find(name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let addr_idx = require(&schema.address)?;
    let id_idx = schema.id.as_deref().map(require).transpose()?;
    let species_idx = schema.species.as_deref().map(require).transpose()?;
    let lat_idx = schema.lat.as_deref().map(require).transpose()?;
    let lon_idx = schema.lon.as_deref().map(require).transpose()?;

    let mut trees = Vec::new();
    let mut stats = LoadStats::default();
    let mut seen_ids: HashMap<String, ()> = HashMap::new();
    let mut row = 0usize;

    for (lineno, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        row += 1;
        let fields: Vec<&str> = line.split(delimiter).collect();
        let get = |idx: usize| -> Result<&str> {
            fields.get(idx).copied().ok_or(Error::MalformedInput {
                line: lineno + 1,
                msg: format!(
                    "expected at least {} fields, found {}",
                    idx + 1,
                    fields.len()
                ),
            })
        };

        let address = normalize_address(get(addr_idx)?);
        if address.is_empty() {
            stats.dropped_empty_address += 1;
            continue;
        }

        let tree_id = match id_idx {
            Some(i) => get(i)?.trim().to_string(),
            None => row.to_string(),
        };
        if seen_ids.insert(tree_id.clone(), ()).is_some() {
            return Err(Error::DuplicateTreeId(tree_id));
        }

        let species = species_idx
            .map(|i| get(i).map(|s| s.trim().to_string()))
            .transpose()?
            .filter(|s| !s.is_empty());

        let ground_truth = match (lat_idx, lon_idx) {
            (Some(la), Some(lo)) => {
                let lat_s = get(la)?.trim();
                let lon_s = get(lo)?.trim();
                match (lat_s.parse::<f64>(), lon_s.parse::<f64>()) {
                    (Ok(lat), Ok(lon)) => match GeoPoint::new(lat, lon) {
                        Ok(p) => Some(p),
                        Err(_) => {
                            stats.coordinate_warnings += 1;
                            None
                        }
                    },
                    _ if lat_s.is_empty() && lon_s.is_empty() => None,
                    _ => {
                        stats.coordinate_warnings += 1;
                        None
                    }
                }
            }
            _ => None,
        };

        trees.push(InventoryTree {
            tree_id,
            address,
            species,
            ground_truth,
        });
    }

    Ok((trees, stats))
}

/// Groups normalized trees by address, preserving first-appearance order of
/// addresses and input order of tree ids. The groups partition the input, so
/// capacities sum to the tree count.
pub fn group_by_address(trees: &[InventoryTree]) -> Vec<AddressGroup> {
    let mut order: Vec<String> = Vec::new();
    let mut by_addr: HashMap<String, Vec<String>> = HashMap::new();
    for t in trees {
        let entry = by_addr.entry(t.address.clone()).or_insert_with(|| {
            order.push(t.address.clone());
            Vec::new()
        });
        entry.push(t.tree_id.clone());
    }
    order
        .into_iter()
        .map(|address| {
            let tree_ids = by_addr.remove(&address).unwrap();
            AddressGroup {
                capacity_k: tree_ids.len(),
                address,
                tree_ids,
            }
        })
        .collect()
}
