//! The JSON report emitted by the detect and separate commands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hypothesis::Call;
use crate::mixture::Component;

pub const SCHEMA_VERSION: u32 = 1;

/// Schema-stable result record for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub sample_id: String,
    pub call: Call,
    pub lr_statistic: f64,
    pub threshold_c: f64,
    pub alpha: f64,
    pub epsilon0: f64,
    pub epsilon1: f64,
    pub p_mle: f64,
    /// Strain proportions from the mixture fit; present for mixed calls
    /// with a successful fit.
    pub em_proportions: Option<Vec<f64>>,
    /// Fitted mixture components (mean, spread, weight per component).
    pub component_table: Option<Vec<Component>>,
    pub n_filtered_sites: usize,
    pub n_variant_sites: usize,
    pub n_assigned_reads: usize,
    pub warnings: Vec<String>,
}

impl Report {
    /// All numeric fields must be finite for the JSON schema to stay stable.
    pub fn numbers_are_finite(&self) -> bool {
        let mut values = vec![
            self.lr_statistic,
            self.threshold_c,
            self.alpha,
            self.epsilon0,
            self.epsilon1,
            self.p_mle,
        ];
        if let Some(props) = &self.em_proportions {
            values.extend(props.iter().copied());
        }
        if let Some(comps) = &self.component_table {
            for c in comps {
                values.extend([c.mu, c.sigma, c.weight]);
            }
        }
        values.iter().all(|v| v.is_finite())
    }
}

pub fn write_report(path: &Path, report: &Report) -> Result<()> {
    debug_assert!(report.numbers_are_finite());
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), report)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<Report> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}
