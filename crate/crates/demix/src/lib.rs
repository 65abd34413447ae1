//! Detection and separation of mixed bacterial strains from aligned
//! whole-genome sequencing reads.
//!
//! The pipeline builds per-position allele-frequency feature vectors from a
//! SAM alignment, tests a single-strain against a two-strain hypothesis with
//! a likelihood-ratio test, estimates mixture proportions with a binomial or
//! Gaussian mixture model fit by EM, and partitions variant-bearing reads
//! into per-strain alignments with consensus sequences. A deterministic
//! sample simulator and an evaluation harness accompany the detector.

pub mod assign;
pub mod cli;
pub mod error;
pub mod evaluate;
pub mod fasta;
pub mod hypothesis;
pub mod math;
pub mod mixture;
pub mod pileup;
pub mod report;
pub mod sam;
pub mod simulate;

pub use error::{DemixError, Result};
