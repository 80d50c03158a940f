//! Run configuration: a single flat JSON document covering model
//! dimensions, loss coefficients, data source, and output location.
//! Unknown keys are rejected so typos fail loudly; every field has a
//! default, and a fully-resolved config round-trips to the same run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::{EntropySign, GatingVariant, LossConfig};

/// How the initial raw task weights are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaInit {
    /// All raw weights 1.0 (the documented default).
    Uniform,
    /// Inner-product similarity of each task vector against the
    /// reference vector.
    Similarity,
}

/// Reference-vector choice for similarity-based weight initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "index")]
pub enum ConfigReferenceMode {
    Centroid,
    Index(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Model dimensions.
    pub d_feat: usize,
    pub d_model: usize,
    pub hidden: usize,
    pub rank: usize,
    pub n_experts: usize,
    pub class_count: usize,
    pub tau: f64,
    pub dropout_p: f64,

    // Loss and optimizer settings (see LossConfig).
    pub lambda1: f64,
    pub lambda2: f64,
    pub gating_coeff: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub expert_epochs: usize,
    pub batch_size: usize,
    pub backbone_epochs: usize,
    pub renormalize_alpha: bool,
    pub enable_gl: bool,
    pub enable_rl: bool,
    pub entropy_sign: EntropySign,
    pub gating_variant: GatingVariant,
    pub gamma_scale: f64,
    pub gamma_beta: f64,

    // Data source: a JSONL corpus or the synthetic generator.
    pub corpus_path: Option<String>,
    pub synth_per_dimension: Option<usize>,

    // Run plumbing.
    pub seed: u64,
    pub out_dir: String,
    pub gamma_init: GammaInit,
    pub reference_mode: ConfigReferenceMode,
    /// Inference-time expert truncation; training is always dense.
    pub top_k: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        RunConfig {
            d_feat: 500,
            d_model: 64,
            hidden: 128,
            rank: 8,
            n_experts: 3,
            class_count: 2,
            tau: 0.7,
            dropout_p: 0.1,
            lambda1: loss.lambda1,
            lambda2: loss.lambda2,
            gating_coeff: loss.gating_coeff,
            learning_rate: loss.learning_rate,
            epochs: loss.epochs,
            expert_epochs: loss.expert_epochs,
            batch_size: loss.batch_size,
            backbone_epochs: loss.backbone_epochs,
            renormalize_alpha: loss.renormalize_alpha,
            enable_gl: loss.enable_gl,
            enable_rl: loss.enable_rl,
            entropy_sign: loss.entropy_sign,
            gating_variant: loss.gating_variant,
            gamma_scale: loss.gamma_scale,
            gamma_beta: loss.gamma_beta,
            corpus_path: None,
            synth_per_dimension: None,
            seed: 42,
            out_dir: "out".to_string(),
            gamma_init: GammaInit::Uniform,
            reference_mode: ConfigReferenceMode::Centroid,
            top_k: None,
        }
    }
}

impl RunConfig {
    /// Project the loss/optimizer fields into a LossConfig.
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            gating_coeff: self.gating_coeff,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            expert_epochs: self.expert_epochs,
            batch_size: self.batch_size,
            backbone_epochs: self.backbone_epochs,
            renormalize_alpha: self.renormalize_alpha,
            enable_gl: self.enable_gl,
            enable_rl: self.enable_rl,
            entropy_sign: self.entropy_sign,
            gating_variant: self.gating_variant,
            gamma_scale: self.gamma_scale,
            gamma_beta: self.gamma_beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_config().validate()?;
        for (name, v) in [
            ("d_feat", self.d_feat),
            ("d_model", self.d_model),
            ("hidden", self.hidden),
            ("rank", self.rank),
            ("class_count", self.class_count),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.n_experts != 3 {
            return Err(Error::Config(format!(
                "n_experts must be 3 (one per alignment dimension), got {}",
                self.n_experts
            )));
        }
        if self.tau <= 0.0 || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if self.corpus_path.is_none() && self.synth_per_dimension.is_none() {
            return Err(Error::Config(
                "no data source: set corpus_path or synth_per_dimension".into(),
            ));
        }
        if let Some(k) = self.top_k {
            if k == 0 || k > self.n_experts {
                return Err(Error::Config(format!(
                    "top_k must be in 1..={}, got {k}",
                    self.n_experts
                )));
            }
        }
        if let ConfigReferenceMode::Index(k) = self.reference_mode {
            if k >= self.n_experts {
                return Err(Error::Config(format!(
                    "reference_mode index {k} out of range for {} experts",
                    self.n_experts
                )));
            }
        }
        Ok(())
    }

    /// Replace the seed from MOCAE_SEED when the variable is set.
    pub fn apply_env_seed(&mut self) -> Result<()> {
        match std::env::var("MOCAE_SEED") {
            Ok(v) => {
                self.seed = v.trim().parse().map_err(|_| {
                    Error::Config(format!("MOCAE_SEED must be an unsigned integer, got {v:?}"))
                })?;
                Ok(())
            }
            Err(std::env::VarError::NotPresent) => Ok(()),
            Err(e) => Err(Error::Config(format!("MOCAE_SEED unreadable: {e}"))),
        }
    }
}

/// Parse a RunConfig from JSON text. Exposed for fuzzing.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    parse_run_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_with_synth_source() {
        let cfg = RunConfig {
            synth_per_dimension: Some(10),
            ..RunConfig::default()
        };
        cfg.validate().unwrap();
        assert_eq!(cfg.d_feat, 500);
        assert_eq!(cfg.hidden, 128);
        assert_eq!(cfg.d_model, 64);
        assert!((cfg.tau - 0.7).abs() < 1e-15);
    }

    #[test]
    fn default_rejects_missing_data_source() {
        let cfg = RunConfig::default();
        let err = cfg.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("corpus_path"), "message should name the key: {msg}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_run_config(r#"{"synth_per_dimension": 5, "learnign_rate": 0.1}"#)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn empty_object_takes_all_defaults() {
        let cfg = parse_run_config("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig {
            synth_per_dimension: Some(25),
            seed: 7,
            epochs: 4,
            ..RunConfig::default()
        };
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = parse_run_config(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn env_seed_override() {
        // Env vars are process-global: set, apply, then restore.
        let mut cfg = RunConfig::default();
        std::env::set_var("MOCAE_SEED", "123");
        cfg.apply_env_seed().unwrap();
        assert_eq!(cfg.seed, 123);
        std::env::set_var("MOCAE_SEED", "not-a-number");
        assert!(matches!(cfg.apply_env_seed(), Err(Error::Config(_))));
        std::env::remove_var("MOCAE_SEED");
        let before = cfg.seed;
        cfg.apply_env_seed().unwrap();
        assert_eq!(cfg.seed, before);
    }

    #[test]
    fn validation_bounds() {
        let base = RunConfig {
            synth_per_dimension: Some(5),
            ..RunConfig::default()
        };
        let bad_tau = RunConfig { tau: 0.0, ..base.clone() };
        assert!(matches!(bad_tau.validate(), Err(Error::Config(_))));
        let bad_k = RunConfig { top_k: Some(4), ..base.clone() };
        assert!(matches!(bad_k.validate(), Err(Error::Config(_))));
        let bad_n = RunConfig { n_experts: 2, ..base };
        assert!(matches!(bad_n.validate(), Err(Error::Config(_))));
    }
}
