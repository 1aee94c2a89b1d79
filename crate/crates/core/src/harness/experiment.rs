use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::mean_and_variance;
use super::trial::{run_prepared, shared_problem, TrialOptions, TrialResult};
use crate::error::Result;
use crate::protocol::Algorithm;

pub const CSV_HEADER: &str = "k,mean_mse,var_mse,mean_consensus,mean_xi_sq";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub k: usize,
    pub mean_mse: f64,
    pub var_mse: f64,
    pub mean_consensus: f64,
    pub mean_xi_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub algorithm: Algorithm,
    pub trials: usize,
    pub iterations: usize,
    pub rows: Vec<SummaryRow>,
}

/// Rows at every `stride`-th iteration and at the last one.
pub fn summarize(config: &ExperimentConfig, results: &[TrialResult]) -> ExperimentSummary {
    let k_max = config.iterations;
    let stride = config.log_stride.max(1);
    let column = |k: usize, f: fn(&TrialResult) -> &Vec<f64>| -> Vec<f64> { results.iter().map(|r| f(r)[k]).collect() };
    let rows = (0..=k_max)
        .filter(|k| k % stride == 0 || *k == k_max)
        .map(|k| {
            let (mean_mse, var_mse) = mean_and_variance(&column(k, |r| &r.mse));
            SummaryRow {
                k,
                mean_mse,
                var_mse,
                mean_consensus: mean_and_variance(&column(k, |r| &r.consensus)).0,
                mean_xi_sq: mean_and_variance(&column(k, |r| &r.xi_sq)).0,
            }
        })
        .collect();
    ExperimentSummary {
        algorithm: config.algorithm,
        trials: results.len(),
        iterations: k_max,
        rows,
    }
}

/// All trials in parallel; results are reduced in trial order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    let shared = shared_problem(config)?;
    let results = (0..config.trials as u64)
        .into_par_iter()
        .map(|t| run_prepared(config, &shared, t, TrialOptions::default()).map(|r| r.result))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(config, &results))
}

impl ExperimentSummary {
    pub fn row_at(&self, k: usize) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    pub fn last(&self) -> &SummaryRow {
        self.rows.last().expect("at least the initial row")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{}", r.k, r.mean_mse, r.var_mse, r.mean_consensus, r.mean_xi_sq).unwrap();
        }
        s
    }

    /// Written via a temporary file so a failed write leaves no partial CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("csv.partial");
        fs::write(&tmp, self.to_csv())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}
