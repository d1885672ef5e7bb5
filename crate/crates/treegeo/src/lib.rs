//! treegeo assigns geographic coordinates to address-keyed street-tree
//! inventory records by fusing multi-view tree detections from street-level
//! panoramas and solving a capacity-constrained, globally optimal
//! tree-to-address assignment.
//!
//! Pipeline stages, each a module:
//!
//! 1. **inventory** – ingest heterogeneous inventory tables, normalize
//!    addresses, derive per-address tree capacities.
//! 2. **geocode** – resolve addresses through a pluggable geocoder with a
//!    persistent cache; flag coordinate outliers with a z-score test.
//! 3. **project** – convert detection bounding boxes in equirectangular
//!    panoramas to ground points under the flat-terrain assumption.
//! 4. **fuse** – collapse repeated detections of one physical tree into a
//!    single position via inverse-distance-weighted suppression.
//! 5. **assign** – match fused trees to geocoded addresses with a min-cost
//!    max-flow solver, exactly optimal for the thresholded objective.
//! 6. **evaluate** – score a run against ground truth with a seven-category
//!    error breakdown, plus the blind subset computable without ground truth.
//! 7. **synth** – generate synthetic municipalities with known ground truth
//!    and injected failure modes for end-to-end verification.

pub mod assign;
pub mod error;
pub mod evaluate;
pub mod formats;
pub mod fuse;
pub mod geo;
pub mod geocode;
mod grid;
pub mod inventory;
pub(crate) mod par;
pub mod pipeline;
pub mod project;
pub mod synth;

pub use error::{Error, Result};
