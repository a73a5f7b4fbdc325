//! Room scene discovery and grouping for property listings.
//!
//! Images are typed by rules over predicted tags, scored pairwise for
//! overlapping content, grouped per room type with spectral clustering and,
//! for bedrooms, mapped one-to-one onto the listed bed types.

pub mod bedmap;
pub mod catalog;
pub mod clustering;
pub mod metrics;
pub mod overlap;
pub mod pipeline;
pub mod room_typing;
pub mod synthgen;

pub use bedmap::{BedAssignment, BedInventory, BedmapError, FirstOption, OracleFromTruth, Predictor, RemoteService};
pub use catalog::{CatalogError, GroupRecord, GroupingOutput, ImageRecord, PropertyCatalog, PropertyMetadata, TagSet};
pub use clustering::{ClusterError, Grouping, SpectralParams};
pub use metrics::{MetricError, MetricReport};
pub use overlap::{CallAccounting, OverlapError, OverlapMatrix, ScorerBackend};
pub use pipeline::{Diagnostic, PipelineError, PipelineOptions};
pub use room_typing::{RoomType, RuleTable};
pub use synthgen::{GroundTruth, SynthConfig, SynthError};
