//! Window-contrast scan statistics for line-like anomalies (fissures) in
//! two-dimensional gray-value images.
//!
//! The crate is organized bottom-up:
//!
//! * [`geometry`]: scan-window segments, rasterized offset masks, exact areas
//! * [`field`]: gray-value fields, noise models, fissure injection
//! * [`stats`]: local means, contrasts, the F1/F2/NB/FnB1/FnB2 statistics
//! * [`calibrate`]: Monte Carlo family-wise thresholds and their cache
//! * [`experiments`]: false-positive and detection studies, two-stage scan
//! * [`verify`]: empirical checks of the limit theory at desk scale
//! * [`io`]: PGM/PNG/CSV/JSON import and export
//!
//! Data-parallel loops go through [`exec::Exec`]; with the default
//! `parallel` feature they run on rayon, otherwise sequentially. Random draws
//! are keyed by `(seed, replicate, row)` so results never depend on the
//! thread count.

pub mod calibrate;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod field;
pub mod geometry;
pub mod io;
pub mod rng;
pub mod stats;
pub mod verify;

pub use error::{Result, ScanError};
pub use exec::Exec;
pub use field::{GrayField, NoiseModel, SignalSpec};
pub use geometry::{AnchorRect, OffsetMask, RectAnomaly, SegmentId, WindowSpec};
pub use stats::{HeatMap, ScanPlan, SigmaSource, StatConfig, StatKind};
