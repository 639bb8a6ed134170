//! TOML-backed configuration. Missing keys fall back to the published
//! defaults; unknown keys are rejected so typos cannot silently change a run.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Which sentence patterns a sampler draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternSplit {
    Training,
    Testing,
    All,
}

/// Language-model backend kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LmBackendKind {
    /// Word embeddings plus a single GRU, trained jointly with the masked
    /// reconstruction objective. Default.
    TrainableRecurrent,
    /// Frozen transformer encoder with deterministic seed-derived weights.
    PretrainedTransformer,
}

/// Task-language representation kind. `Predicate` is the structured default;
/// the other two are unstructured ablations produced by a plain MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TlRep {
    Predicate,
    Binary,
    Continuous,
}

/// Translator architecture kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TranslatorKind {
    Vae,
    Mlp,
}

/// Conditioning method for instruction-following policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyMethod {
    /// Frozen translator output (the full task-language path).
    Talar,
    BertBinary,
    BertContinuous,
    OneHot,
}

impl PolicyMethod {
    pub fn name(self) -> &'static str {
        match self {
            PolicyMethod::Talar => "talar",
            PolicyMethod::BertBinary => "bert-binary",
            PolicyMethod::BertContinuous => "bert-continuous",
            PolicyMethod::OneHot => "one-hot",
        }
    }
}

/// High-level action abstraction for hierarchical runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Abstraction {
    /// High level emits a task-language vector directly.
    Tl,
    /// High level emits an instruction index that is rendered and translated.
    Hal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub master_seed: u64,
    pub out_root: String,
    /// Training seeds for multi-seed experiments and report aggregation.
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            master_seed: 0,
            out_root: "out".to_string(),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Arena half width L; positions live in [-L, L]^2.
    pub half_width: f64,
    /// Spawn positions are drawn from [-spawn_half_width, spawn_half_width]^2.
    /// Kept below L - target_offset + success_radius so every sampled goal is
    /// reachable despite wall clamping.
    pub spawn_half_width: f64,
    pub ball_radius: f64,
    /// Per-step displacement magnitude for pushed balls.
    pub step_size: f64,
    /// Offset of the goal point from the destination ball along the relation.
    pub target_offset: f64,
    /// Success when the mover is strictly closer than this to the goal point.
    pub success_radius: f64,
    /// Margin for arrangement-constraint satisfaction.
    pub arrangement_margin: f64,
    pub max_steps: u32,
    /// Placement rejection-sampling budget before reset fails.
    pub place_retries: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            half_width: 1.0,
            spawn_half_width: 0.7,
            ball_radius: 0.1,
            step_size: 0.2,
            target_offset: 0.5,
            success_radius: 0.25,
            arrangement_margin: 0.1,
            max_steps: 50,
            place_retries: 1000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Number of (s, s', NL) triplets collected into a dataset.
    pub dataset_n: usize,
    /// Pattern split used when rendering dataset sentences.
    pub split: PatternSplit,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            dataset_n: 10_000,
            split: PatternSplit::Training,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub backend: LmBackendKind,
    /// Contextual embedding width.
    pub d_lm: usize,
    /// Frozen-transformer depth.
    pub frozen_layers: usize,
    /// Frozen-transformer attention heads.
    pub frozen_heads: usize,
    /// Seed tag for the frozen backend's deterministic weights.
    pub frozen_seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            backend: LmBackendKind::TrainableRecurrent,
            d_lm: 128,
            frozen_layers: 2,
            frozen_heads: 4,
            frozen_seed: 17,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TlConfig {
    /// Number of predicate modules.
    pub n_pm: usize,
    /// Predicate networks per module (shared parameters across modules).
    pub n_pn: usize,
    /// Argument networks per module.
    pub n_a: usize,
    /// Categories per argument (one-hot width).
    pub arg_dim: usize,
    /// Gumbel-Softmax temperature.
    pub tau: f64,
    pub rep: TlRep,
}

impl Default for TlConfig {
    fn default() -> Self {
        TlConfig {
            n_pm: 1,
            n_pn: 4,
            n_a: 2,
            arg_dim: 5,
            tau: 1.0,
            rep: TlRep::Predicate,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlmConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Fraction of training over which the Gumbel/Bernoulli sampling noise in
    /// the generator decays linearly from full strength to zero. Past that
    /// point the straight-through samples are deterministic, so the training
    /// task language matches the evaluation one. 0 disables sampling noise
    /// entirely; very large values keep it at full strength throughout.
    pub noise_anneal_frac: f64,
    /// Probability that the reconstruction head sees an argument group of the
    /// task language zeroed out on a training sample. Without it the head
    /// reads object identity exclusively from the argument groups and the
    /// predicate bits settle on other features; the dropout forces the bits
    /// to carry object identity redundantly, which is what makes them
    /// interpretable as object predicates.
    pub arg_dropout: f64,
    /// Sampling weight of ball-color words when choosing masked positions
    /// (function words keep weight 1.0). Uniform masking rarely hits the
    /// destination color word, so the generator is never pressed to encode
    /// the destination object; weights above 1 concentrate the masked-token
    /// task on the object identities the task language exists to carry.
    pub mask_salient_weight: f64,
}

impl Default for MlmConfig {
    fn default() -> Self {
        MlmConfig {
            lr: 3e-4,
            batch_size: 64,
            steps: 3000,
            noise_anneal_frac: 0.7,
            arg_dropout: 0.0,
            mask_salient_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Latent width.
    pub z_dim: usize,
    pub kind: TranslatorKind,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            lr: 3e-4,
            batch_size: 64,
            steps: 4000,
            z_dim: 32,
            kind: TranslatorKind::Vae,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    /// Upper bound on minibatches consumed per epoch.
    pub minibatch_count: usize,
    pub lr_policy: f64,
    pub lr_value: f64,
    /// Environment steps collected per update iteration.
    pub rollout_horizon: usize,
    pub total_steps: u64,
    pub method: PolicyMethod,
    /// Task restriction: the policy is trained on this many instructions,
    /// chosen by even stride over the canonical enumeration of all 80.
    pub instruction_count: usize,
    /// Pattern split sentences are drawn from during training.
    pub train_split: PatternSplit,
    /// When nonzero, only the first this-many patterns of the split render
    /// training sentences; 0 uses the whole split.
    pub pattern_limit: usize,
    /// Greedy evaluation cadence during training, in env steps (0 = off).
    pub eval_every: u64,
    pub eval_episodes: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            clip: 0.2,
            entropy_coef: 0.01,
            gae_lambda: 0.95,
            epochs: 10,
            minibatch_size: 128,
            minibatch_count: 160,
            lr_policy: 3e-4,
            lr_value: 3e-4,
            rollout_horizon: 2048,
            total_steps: 500_000,
            method: PolicyMethod::Talar,
            instruction_count: 80,
            train_split: PatternSplit::Training,
            pattern_limit: 0,
            eval_every: 0,
            eval_episodes: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HrlConfig {
    /// Low-level steps executed per high-level decision.
    pub k: u32,
    /// Episode cap in low-level steps for arrangement episodes.
    pub horizon: u32,
    /// Training budget in high-level decisions.
    pub total_hl_steps: u64,
    pub abstraction: Abstraction,
    /// Sentence pattern used to render instructions chosen by the HAL head.
    pub hal_pattern: usize,
    pub gamma: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub lr_policy: f64,
    pub lr_value: f64,
    /// High-level decisions collected per update iteration.
    pub rollout_hl: usize,
}

impl Default for HrlConfig {
    fn default() -> Self {
        HrlConfig {
            k: 25,
            horizon: 500,
            total_hl_steps: 200_000,
            abstraction: Abstraction::Tl,
            hal_pattern: 0,
            gamma: 0.99,
            clip: 0.2,
            entropy_coef: 0.01,
            gae_lambda: 0.95,
            epochs: 10,
            minibatch_size: 128,
            lr_policy: 3e-4,
            lr_value: 3e-4,
            rollout_hl: 512,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub split: PatternSplit,
    /// Apply one corpus error to every sentence during evaluation.
    pub with_errors: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 500,
            split: PatternSplit::Training,
            with_errors: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub run: RunConfig,
    pub env: EnvConfig,
    pub corpus: CorpusConfig,
    pub lm: LmConfig,
    pub tl: TlConfig,
    pub mlm: MlmConfig,
    pub vae: VaeConfig,
    pub ppo: PpoConfig,
    pub hrl: HrlConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Config = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let e = |msg: String| Err(Error::Config(msg));
        if self.env.half_width <= 0.0 || self.env.ball_radius <= 0.0 {
            return e("env: half_width and ball_radius must be positive".into());
        }
        if self.env.spawn_half_width > self.env.half_width - self.env.ball_radius {
            return e(format!(
                "env: spawn_half_width {} exceeds half_width - ball_radius = {}",
                self.env.spawn_half_width,
                self.env.half_width - self.env.ball_radius
            ));
        }
        // Worst-case goal distance after wall clamping must stay winnable.
        let slack = self.env.half_width
            - (self.env.spawn_half_width + self.env.target_offset - self.env.success_radius);
        if slack < 0.0 {
            return e(format!(
                "env: goals can leave the arena beyond reach; reduce spawn_half_width \
                 or target_offset (slack = {slack})"
            ));
        }
        if self.env.max_steps == 0 {
            return e("env: max_steps must be at least 1".into());
        }
        if self.tl.n_pm == 0 || self.tl.n_pn == 0 || self.tl.n_a == 0 || self.tl.arg_dim < 2 {
            return e("tl: n_pm, n_pn, n_a must be >= 1 and arg_dim >= 2".into());
        }
        if self.tl.tau <= 0.0 {
            return e("tl: tau must be positive".into());
        }
        for (name, lr) in [
            ("mlm.lr", self.mlm.lr),
            ("vae.lr", self.vae.lr),
            ("ppo.lr_policy", self.ppo.lr_policy),
            ("ppo.lr_value", self.ppo.lr_value),
            ("hrl.lr_policy", self.hrl.lr_policy),
            ("hrl.lr_value", self.hrl.lr_value),
        ] {
            if lr <= 0.0 || !lr.is_finite() {
                return e(format!("{name} must be positive and finite"));
            }
        }
        if self.ppo.instruction_count == 0 || self.ppo.instruction_count > 80 {
            return e("ppo: instruction_count must be in 1..=80".into());
        }
        let split_len = crate::corpus::pattern_ids(self.ppo.train_split).len();
        if self.ppo.pattern_limit > split_len {
            return e(format!(
                "ppo: pattern_limit {} exceeds the {} patterns of the split",
                self.ppo.pattern_limit, split_len
            ));
        }
        if self.ppo.minibatch_size == 0 || self.ppo.rollout_horizon == 0 {
            return e("ppo: minibatch_size and rollout_horizon must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.ppo.gamma) || !(0.0..=1.0).contains(&self.ppo.gae_lambda) {
            return e("ppo: gamma and gae_lambda must lie in [0, 1]".into());
        }
        if self.hrl.k == 0 || self.hrl.horizon == 0 {
            return e("hrl: k and horizon must be positive".into());
        }
        if self.hrl.hal_pattern >= crate::corpus::PATTERN_COUNT {
            return e(format!(
                "hrl: hal_pattern must be < {}",
                crate::corpus::PATTERN_COUNT
            ));
        }
        if self.lm.d_lm == 0 {
            return e("lm: d_lm must be positive".into());
        }
        if self.lm.backend == LmBackendKind::PretrainedTransformer
            && self.lm.d_lm % self.lm.frozen_heads != 0
        {
            return e("lm: d_lm must be divisible by frozen_heads".into());
        }
        Ok(())
    }

    /// Hex SHA-256 over the named top-level sections, serialized as TOML.
    /// Checkpoints store this to detect layout-incompatible loads.
    pub fn hash_sections(&self, sections: &[&str]) -> Result<String> {
        let value = toml::Value::try_from(self)?;
        let table = value
            .as_table()
            .ok_or_else(|| Error::Config("config did not serialize to a table".into()))?;
        let mut hasher = Sha256::new();
        for &name in sections {
            let section = table
                .get(name)
                .ok_or_else(|| Error::Config(format!("unknown config section {name}")))?;
            hasher.update(name.as_bytes());
            hasher.update(toml::to_string(section)?.as_bytes());
        }
        Ok(hex(&hasher.finalize()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = Config::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: Config = toml::from_str(&text).unwrap();
        let again = toml::to_string_pretty(&back).unwrap();
        assert_eq!(text, again);
    }

    #[test]
    fn missing_keys_take_defaults() {
        let cfg: Config = toml::from_str("[mlm]\nlr = 1e-3\n").unwrap();
        assert_eq!(cfg.mlm.lr, 1e-3);
        assert_eq!(cfg.mlm.batch_size, Config::default().mlm.batch_size);
        assert_eq!(cfg.tl.n_pn, 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<Config>("[mlm]\nlearning_rate = 1e-3\n");
        assert!(err.is_err());
        let err = toml::from_str::<Config>("[nonexistent]\nx = 1\n");
        assert!(err.is_err());
    }

    #[test]
    fn published_defaults_are_pinned() {
        let cfg = Config::default();
        assert_eq!(cfg.tl.n_pm, 1);
        assert_eq!(cfg.tl.n_pn, 4);
        assert_eq!(cfg.tl.n_a, 2);
        assert_eq!(cfg.tl.arg_dim, 5);
        assert_eq!(cfg.mlm.lr, 3e-4);
        assert_eq!(cfg.vae.lr, 3e-4);
        assert_eq!(cfg.vae.z_dim, 32);
        assert_eq!(cfg.ppo.epochs, 10);
        assert_eq!(cfg.ppo.lr_policy, 3e-4);
        assert_eq!(cfg.ppo.lr_value, 3e-4);
        assert_eq!(cfg.ppo.minibatch_size, 128);
        assert_eq!(cfg.ppo.minibatch_count, 160);
        assert_eq!(cfg.env.step_size, 0.2);
        assert_eq!(cfg.env.ball_radius, 0.1);
        assert_eq!(cfg.env.target_offset, 0.5);
        assert_eq!(cfg.env.success_radius, 0.25);
        assert_eq!(cfg.env.arrangement_margin, 0.1);
        assert_eq!(cfg.env.max_steps, 50);
        assert_eq!(cfg.hrl.k, 25);
    }

    #[test]
    fn section_hash_tracks_layout_changes() {
        let a = Config::default();
        let mut b = Config::default();
        b.tl.n_pn = 6;
        let ha = a.hash_sections(&["tl", "lm"]).unwrap();
        let hb = b.hash_sections(&["tl", "lm"]).unwrap();
        assert_ne!(ha, hb);
        // Sections outside the list do not affect the hash.
        let mut c = Config::default();
        c.ppo.total_steps = 1;
        assert_eq!(ha, c.hash_sections(&["tl", "lm"]).unwrap());
    }

    #[test]
    fn validate_rejects_unreachable_goals() {
        let mut cfg = Config::default();
        cfg.env.spawn_half_width = 0.89;
        assert!(cfg.validate().is_err());
    }
}
