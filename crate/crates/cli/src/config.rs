//! Everything a run needs, in one serializable value.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use zidrm_core::{BasisKind, BootstrapKind, CiMethod, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Json,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// One `value` column per file.
    Files { input0: PathBuf, input1: PathBuf },
    /// A single file with `group` (0/1) and `value` columns.
    Grouped { input: PathBuf },
    /// Simulated data. Each model is run at each `(n0, n1)` pair.
    Scenarios {
        models: Vec<String>,
        sizes: Vec<[usize; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scenario_file: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub source: DataSource,
    pub basis: BasisKind,
    pub functionals: Vec<String>,
    pub maps: Vec<String>,
    pub cis: Vec<CiMethod>,
    pub gamma: f64,
    pub bootstrap_b: usize,
    pub bootstrap_kind: BootstrapKind,
    pub seed: u64,
    pub workers: usize,
    pub reps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_null: Option<Vec<f64>>,
    pub zero_tol: f64,
    pub solver: SolverOptions,
    pub format: OutputFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl AnalysisConfig {
    pub fn new(source: DataSource) -> Self {
        AnalysisConfig {
            source,
            basis: BasisKind::Log,
            functionals: vec!["mean_pair".into()],
            maps: vec!["ratio".into()],
            cis: vec![CiMethod::I4, CiMethod::I4L],
            gamma: 0.05,
            bootstrap_b: 999,
            bootstrap_kind: BootstrapKind::Studentized,
            seed: 1,
            workers: 1,
            reps: 1000,
            test_null: None,
            zero_tol: 0.0,
            solver: SolverOptions::default(),
            format: OutputFormat::Json,
            out: None,
        }
    }

    /// The config as echoed in reports: scheduling and destination settings
    /// are dropped because they do not change any number.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            for key in ["workers", "out", "format"] {
                map.remove(key);
            }
        }
        v
    }
}
