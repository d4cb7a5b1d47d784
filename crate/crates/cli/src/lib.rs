//! Report schemas shared by the `stablelab` binary and its tests.

pub mod report;
