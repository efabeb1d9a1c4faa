//! Barrier-to-exit analytics for recommender rating logs.
//!
//! The pipeline turns a longitudinal rating log into a per-user measure of
//! how much accumulated engagement a user has to wind down before leaving a
//! content category:
//!
//! 1. [`ingest`] parses rating logs and tag-relevance tables and groups
//!    events into time bins.
//! 2. [`preference`] collapses each bin into per-category revealed
//!    preference and derives rolling significance thresholds.
//! 3. [`barrier`] detects exit windows (a significant rise followed by a
//!    significant fall) and scores them.
//! 4. [`report`] serializes results and renders small SVG summaries.
//! 5. [`simloop`] is a closed-loop user/recommender simulator with scripted
//!    preference shifts, used to validate the detector against known ground
//!    truth.
//! 6. [`cli`] wires the above into the `bte` binary.

pub mod barrier;
pub mod cli;
pub mod error;
pub mod ingest;
pub mod preference;
pub mod report;
pub mod simloop;

pub use error::{BteError, Result};
