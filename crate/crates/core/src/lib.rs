//! Reserving engine for data-breach notification counts.
//!
//! Raw breach records are cleaned and aggregated into quarterly run-off
//! triangles ([`ingest`], [`triangle`]), fitted with over-dispersed Poisson
//! models built from a small term algebra ([`design`], [`glm`]), and turned
//! into IBNR projections, reporting-delay curves and frequency trends
//! ([`analytics`]). [`chainladder`] is the classical baseline and
//! [`diagnostics`] produces actual-versus-fitted tables and heatmaps.

pub mod analytics;
pub mod chainladder;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod glm;
pub mod ingest;
pub mod linalg;
pub mod quarter;
pub mod segment;
pub mod svg;
pub mod triangle;

pub use error::ParseError;
pub use quarter::{Quarter, QuarterRange};
pub use segment::{SegmentKey, SegmentSpec, SeverityBand, State};
