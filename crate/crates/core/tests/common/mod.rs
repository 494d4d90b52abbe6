//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod grad;
pub mod noise;
pub mod stats_oracles;
