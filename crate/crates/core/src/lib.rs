//! Place embeddings from GPS stop sequences.
//!
//! Raw waypoints are split into vehicle-days, reduced to stops, mapped to
//! Morton-coded cells of a Web Mercator grid and fed as sentences to a
//! skip-gram model. The [`analytics`] module compares the resulting cell
//! vectors against POI labels and geographic distance.

pub mod analytics;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod geo;
pub mod ingest;
pub mod poi;
pub mod stats;
pub mod stops;
pub mod synth;

pub use error::{Error, Result};
pub use geo::{CellId, DistanceMetric, GeoPoint, GridSpec};
