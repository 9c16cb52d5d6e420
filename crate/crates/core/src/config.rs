//! Run configuration: category thresholds, paths, plan and endpoint settings.
//!
//! A run is described by a TOML document; every field has a default so an
//! empty file is a valid configuration. Command-line flags override fields
//! after loading.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::digest::json_digest;
use crate::error::{Error, Result};
use crate::eval::{EndpointConfig, Strategy};

/// Smallest window length that still exceeds the critical-ID count threshold
/// and gives 5% bucket-share resolution.
pub const MIN_WINDOW_LEN: usize = 20;
pub const DEFAULT_WINDOW_LEN: usize = 100;
pub const DEFAULT_SEED: u64 = 42;

/// Every numeric threshold the ten question categories use.
///
/// Shares are fractions in `[0, 1]`, durations are seconds and percentiles are
/// in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Category 2: single-appearance share boundary.
    pub single_appearance_share: f64,
    /// Categories 2 and 3: dominant-ID share boundary.
    pub dominant_id_share: f64,
    /// Category 3 distribution template: evenly-distributed share boundary.
    pub even_id_share: f64,
    /// Distinct-ID count statement threshold.
    pub distinct_id_count: usize,
    /// Categories 4 and 10: a gap above this is a long gap.
    pub gap_over_secs: f64,
    /// Category 4: a gap below this is a short gap.
    pub gap_under_secs: f64,
    /// Category 3: baseline frame-rate percentile.
    pub frame_rate_percentile: f64,
    /// Category 5: baseline payload-variance percentile.
    pub payload_variance_percentile: f64,
    /// Category 8: baseline transition-frequency percentile.
    pub transition_percentile: f64,
    /// Category 7: number of most frequent baseline IDs treated as critical.
    pub critical_top_n: usize,
    /// Category 7: a critical ID appearing more than this many times triggers.
    pub critical_count: usize,
    /// Category 9: timestamp rounding granularity.
    pub bucket_secs: f64,
    /// Category 9: minimum share of frames in one bucket.
    pub bucket_share: f64,
    /// Categories 6 and 10: DLC at or above this is high.
    pub high_dlc: u8,
    /// Categories 6 and 10: high-DLC share boundary.
    pub high_dlc_share: f64,
    /// Category 10: rare-ID share signal boundary.
    pub rare_id_share: f64,
    /// Category 10: minimum number of signals for a multi-signal interpretation.
    pub min_signals: usize,
    /// Fraction of baseline windows an ID must appear in to be expected per window.
    pub expected_presence: f64,
    /// Baseline share below which an ID is rare.
    pub rare_id_baseline_share: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            single_appearance_share: 0.30,
            dominant_id_share: 0.50,
            even_id_share: 0.20,
            distinct_id_count: 30,
            gap_over_secs: 0.001,
            gap_under_secs: 0.0005,
            frame_rate_percentile: 95.0,
            payload_variance_percentile: 10.0,
            transition_percentile: 5.0,
            critical_top_n: 3,
            critical_count: 15,
            bucket_secs: 0.01,
            bucket_share: 0.05,
            high_dlc: 8,
            high_dlc_share: 0.50,
            rare_id_share: 0.30,
            min_signals: 2,
            expected_presence: 0.99,
            rare_id_baseline_share: 0.01,
        }
    }
}

fn secs_to_micros(secs: f64) -> u64 {
    (secs * 1e6).round() as u64
}

impl Thresholds {
    pub fn gap_over_us(&self) -> u64 {
        secs_to_micros(self.gap_over_secs)
    }

    pub fn gap_under_us(&self) -> u64 {
        secs_to_micros(self.gap_under_secs)
    }

    pub fn bucket_us(&self) -> u64 {
        secs_to_micros(self.bucket_secs).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let shares = [
            ("single_appearance_share", self.single_appearance_share),
            ("dominant_id_share", self.dominant_id_share),
            ("even_id_share", self.even_id_share),
            ("bucket_share", self.bucket_share),
            ("high_dlc_share", self.high_dlc_share),
            ("rare_id_share", self.rare_id_share),
            ("expected_presence", self.expected_presence),
            ("rare_id_baseline_share", self.rare_id_baseline_share),
        ];
        for (name, v) in shares {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("threshold {name}={v} must lie in [0, 1]")));
            }
        }
        let percentiles = [
            ("frame_rate_percentile", self.frame_rate_percentile),
            ("payload_variance_percentile", self.payload_variance_percentile),
            ("transition_percentile", self.transition_percentile),
        ];
        for (name, v) in percentiles {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::Config(format!("threshold {name}={v} must lie in [0, 100]")));
            }
        }
        for (name, v) in [
            ("gap_over_secs", self.gap_over_secs),
            ("gap_under_secs", self.gap_under_secs),
            ("bucket_secs", self.bucket_secs),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("threshold {name}={v} must be positive")));
            }
        }
        if self.even_id_share > self.dominant_id_share {
            return Err(Error::Config("even_id_share must not exceed dominant_id_share".to_string()));
        }
        Ok(())
    }
}

/// The part of a configuration that changes generated ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthConfig {
    pub window_len: usize,
    pub thresholds: Thresholds,
}

impl GroundTruthConfig {
    pub fn digest(&self) -> String {
        json_digest(self)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Attack traces the dataset is generated from.
    pub inputs: Vec<PathBuf>,
    /// Attack-free trace the baseline is learned from.
    pub normal: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub records: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    /// Questions per format per window.
    pub per_window: usize,
    /// Include the additional templates so categories 2 and 3 get both formats.
    pub both_formats: bool,
    /// Worker threads for generation; `0` lets the pool decide.
    pub parallelism: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { per_window: 1, both_formats: false, parallelism: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub strategy: Strategy,
    /// Shots per prompt in few-shot strategies.
    pub shots: usize,
    pub parallelism: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { strategy: Strategy::ZeroShot, shots: 5, parallelism: 4 }
    }
}

/// Complete configuration of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub window_len: usize,
    pub thresholds: Thresholds,
    pub paths: PathsConfig,
    pub plan: PlanConfig,
    pub eval: EvalConfig,
    pub endpoint: EndpointConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            window_len: DEFAULT_WINDOW_LEN,
            thresholds: Thresholds::default(),
            paths: PathsConfig::default(),
            plan: PlanConfig::default(),
            eval: EvalConfig::default(),
            endpoint: EndpointConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len < MIN_WINDOW_LEN {
            return Err(Error::Config(format!(
                "window length {} is below the minimum of {MIN_WINDOW_LEN}",
                self.window_len
            )));
        }
        if self.plan.per_window == 0 {
            return Err(Error::Config("plan.per_window must be at least 1".to_string()));
        }
        if self.eval.parallelism == 0 {
            return Err(Error::Config("eval.parallelism must be at least 1".to_string()));
        }
        self.thresholds.validate()
    }

    pub fn ground_truth(&self) -> GroundTruthConfig {
        GroundTruthConfig { window_len: self.window_len, thresholds: self.thresholds.clone() }
    }
}
