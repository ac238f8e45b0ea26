//! Mean personal income as a function of work experience and time.
//!
//! The crate covers the whole pipeline:
//!
//! - [`ingest`]: Census-style income tables, gender merging, participation
//!   correction to natural means.
//! - [`kinetics`]: the two-branch income shape, critical work experience
//!   recurrences, normalization and interval binning.
//! - [`calibrate`]: conversion factors, per-group trend regressions,
//!   peak-group tracking and median/mean diagnostics.
//! - [`macrodyn`]: GDP growth from cohort dynamics, its inverse, the coupled
//!   recurrence and long-horizon projections.
//!
//! The `incdyn` binary wraps these as subcommands that write plot-ready
//! CSV/JSON files.

pub mod calibrate;
pub mod error;
pub mod format;
pub mod ingest;
pub mod kinetics;
pub mod macrodyn;

pub use error::{Error, ErrorClass, Result};
