//! Independent oracles and the seeded verification suites built on them.
//! Everything here is `f64`.

pub mod oracles;
pub mod suites;

pub use suites::{run_selftest, SelftestOptions, SuiteReport};
