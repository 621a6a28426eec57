//! Declarative pipeline configuration: a single TOML file, with the API
//! key coming from the environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::client::BackendConfig;
use crate::prompts::PromptStrategy;
use crate::scoring::UtilityMetric;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub n_examples: usize,
    pub n_samples: usize,
    pub temperature: f64,
    pub context_token_range: (usize, usize),
    pub max_output_tokens: usize,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            n_examples: 2048,
            n_samples: 32,
            temperature: 0.7,
            context_token_range: (4096, 31744),
            max_output_tokens: 1024,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub utility: UtilityMetric,
    /// Utility matrices are kept in scored archives only up to this N.
    pub matrix_cap: usize,
    /// Reference-based self-eval costs N^2 model calls per set.
    pub self_eval_n_cap: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            utility: UtilityMetric::EmbeddingSim,
            matrix_cap: 64,
            self_eval_n_cap: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetMode {
    Sft,
    Preference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub mode: DatasetMode,
    pub output: PathBuf,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            mode: DatasetMode::Preference,
            output: PathBuf::from("out/dataset.jsonl"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Paths to task corpus files; each needs a sibling `<stem>.task.json`
    /// manifest naming the task and strategy.
    pub tasks: Vec<PathBuf>,
    pub strategy: PromptStrategy,
    pub target_tokens: usize,
    pub max_output_tokens: usize,
    pub temperature: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tasks: Vec::new(),
            strategy: PromptStrategy::PlanAndSolve,
            target_tokens: 8192,
            max_output_tokens: 1024,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub backend: BackendConfig,
    pub synthesis: SynthesisConfig,
    pub scoring: ScoringConfig,
    pub dataset: DatasetConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: PathBuf::from("corpus.jsonl"),
            backend: BackendConfig::default(),
            synthesis: SynthesisConfig::default(),
            scoring: ScoringConfig::default(),
            dataset: DatasetConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: PipelineConfig = toml::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    /// Collects every validation problem at once instead of failing on the
    /// first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if self.synthesis.n_samples == 0 {
            problems.push("synthesis.n_samples must be >= 1".to_string());
        }
        if self.dataset.mode == DatasetMode::Preference && self.synthesis.n_samples < 2 {
            problems.push("synthesis.n_samples must be >= 2 in preference mode".to_string());
        }
        if self.synthesis.n_examples == 0 {
            problems.push("synthesis.n_examples must be >= 1".to_string());
        }
        if self.synthesis.temperature < 0.0 {
            problems.push("synthesis.temperature must be non-negative".to_string());
        }
        let (lo, hi) = self.synthesis.context_token_range;
        if lo == 0 || hi < lo {
            problems.push(format!(
                "synthesis.context_token_range ({lo}, {hi}) must be positive and ordered"
            ));
        }
        if self.scoring.utility == UtilityMetric::ReferenceBasedSelfEval
            && self.synthesis.n_samples > self.scoring.self_eval_n_cap
        {
            problems.push(format!(
                "reference-based self-eval is capped at N <= {} (configured N = {})",
                self.scoring.self_eval_n_cap, self.synthesis.n_samples
            ));
        }
        if self.backend.concurrency == 0 {
            problems.push("backend.concurrency must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }

    /// Stable hash stamped into every stage output for provenance.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("serializable config");
        let digest = Sha256::digest(&canonical);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_contract() {
        let c = PipelineConfig::default();
        assert_eq!(c.synthesis.n_examples, 2048);
        assert_eq!(c.synthesis.n_samples, 32);
        assert_eq!(c.synthesis.temperature, 0.7);
        assert_eq!(c.synthesis.context_token_range, (4096, 31744));
        assert_eq!(c.eval.strategy, PromptStrategy::PlanAndSolve);
        assert_eq!(c.scoring.utility, UtilityMetric::EmbeddingSim);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn validation_collects_all_problems() {
        let mut c = PipelineConfig::default();
        c.synthesis.n_samples = 1; // preference mode needs >= 2
        c.synthesis.temperature = -1.0;
        c.synthesis.context_token_range = (100, 10);
        match c.validate() {
            Err(ConfigError::Invalid(problems)) => assert_eq!(problems.len(), 3, "{problems:?}"),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn self_eval_cap_enforced() {
        let mut c = PipelineConfig::default();
        c.scoring.utility = UtilityMetric::ReferenceBasedSelfEval;
        c.synthesis.n_samples = 32;
        assert!(c.validate().is_err());
        c.synthesis.n_samples = 16;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = PipelineConfig::default();
        let mut b = PipelineConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.synthesis.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn toml_round_trip() {
        let c = PipelineConfig::default();
        let text = toml::to_string(&c).unwrap();
        let parsed: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(parsed, c);
    }
}
