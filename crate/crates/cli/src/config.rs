//! Run configuration: one JSON file composing every knob, with defaults for
//! anything left out and unknown keys rejected.

use std::path::{Path, PathBuf};

use dltrack_core::{DLConfig, MatchCriteria, ScenarioConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Applies to result files and the printed summary; batches and truth
    /// sidecars are always CSV.
    pub format: Format,
    /// Also write the converged `N x H` association matrix.
    pub associations: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            format: Format::Csv,
            associations: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub llr_threshold: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self { llr_threshold: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RocConfig {
    pub clutter_levels: Vec<usize>,
    pub trials: usize,
    pub thresholds: Vec<f64>,
}

impl Default for RocConfig {
    fn default() -> Self {
        Self {
            clutter_levels: vec![50, 100, 200],
            trials: 100,
            thresholds: (-20..=200).map(|k| k as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub n_values: Vec<usize>,
    pub h_values: Vec<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_values: vec![500, 1000, 2000, 4000, 8000],
            h_values: vec![2, 4, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub instances: usize,
    /// Returns per exhaustive-likelihood instance.
    pub n: usize,
    /// Hypotheses per exhaustive-likelihood instance, clutter included.
    pub h: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            instances: 50,
            n: 6,
            h: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub dl: DLConfig,
    /// Truth-matching gates; derived from the scenario when absent.
    #[serde(rename = "match")]
    pub match_criteria: Option<MatchCriteria>,
    pub detection: DetectionConfig,
    pub roc: RocConfig,
    pub bench: BenchConfig,
    pub verify: VerifyConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Config(format!(
                "{}: line {} column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })
    }

    pub fn criteria(&self) -> MatchCriteria {
        self.match_criteria
            .unwrap_or_else(|| MatchCriteria::for_scenario(&self.scenario))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scenario.validate()?;
        self.dl.validate()?;
        self.criteria().validate()?;
        Ok(())
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hash of everything that can change results; the output directory is
    /// left out so the same run written to two places stamps the same hash.
    pub fn hash(&self) -> u64 {
        let mut c = self.clone();
        c.output.dir = PathBuf::new();
        dltrack_core::io::fnv1a(c.canonical_json().as_bytes())
    }
}
