//! Multi-resolution independence testing by cuboid-wise Fisher tests.
//!
//! A sample of `(X, Y)` is reduced to marginal ranks. The unit cube is
//! partitioned into dyadic cuboids, and within each cuboid every pair of one
//! `X` margin and one `Y` margin is summarised by a 2x2 table of half-cuboid
//! counts. Those tables are tested for independence, searched coarse to fine,
//! and the resulting p-values are adjusted for multiplicity.

pub mod engine;
pub mod error;
pub mod harness;
pub mod lattice;
pub mod mtp;
pub mod preprocess;
pub mod scenarios;

pub use engine::{
    decide, run_exhaustive, run_multifit, ConfigOverrides, EngineConfig, Mode, Report, TestRecord,
};
pub use error::{Error, Result};
pub use exact_tests::{
    fisher_mid_p, fisher_two_sided, normal_approx, LogFactorial, PValue, TestMethod,
};
pub use lattice::{CuboidKey, CuboidNode, FaceTable};
pub use mtp::{adjust, holm, modified_holm, AdjustedResults, Correction};
pub use preprocess::{ingest_csv, rank_transform, DataMatrix, RankedSample, TiePolicy};
