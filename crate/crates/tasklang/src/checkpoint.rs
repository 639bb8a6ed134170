//! Typed JSON checkpoints. Every file carries a kind tag, the hash of the
//! config sections the artifact's shape depends on, the seed it was trained
//! under, and the step count; loading verifies the hash against the current
//! config so layout-incompatible artifacts fail loudly instead of
//! mis-deserializing into a runnable model.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::generator::MlmModel;
use crate::policy::{HlBundle, PolicyBundle};
use crate::translator::TranslatorModel;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CheckpointPayload {
    Generator(Box<MlmModel>),
    Translator(Box<TranslatorModel>),
    Policy(Box<PolicyBundle>),
    HighLevel(Box<HlBundle>),
}

impl CheckpointPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            CheckpointPayload::Generator(_) => "generator",
            CheckpointPayload::Translator(_) => "translator",
            CheckpointPayload::Policy(_) => "policy",
            CheckpointPayload::HighLevel(_) => "high-level",
        }
    }

    /// Config sections whose values determine this artifact's shape.
    pub fn sections(&self) -> &'static [&'static str] {
        match self {
            CheckpointPayload::Generator(_) => &["tl", "lm"],
            CheckpointPayload::Translator(_) => &["tl", "lm", "vae"],
            CheckpointPayload::Policy(_) => &["tl", "lm", "env"],
            CheckpointPayload::HighLevel(_) => &["tl", "env", "hrl"],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub payload: CheckpointPayload,
}

/// Serializes the payload with its compatibility stamp. JSON keeps every f64
/// bit, so reload reproduces the exact parameters.
pub fn save(
    path: &Path,
    cfg: &Config,
    seed: u64,
    step: u64,
    payload: CheckpointPayload,
) -> Result<()> {
    let meta = CheckpointMeta {
        kind: payload.kind().to_string(),
        config_hash: cfg.hash_sections(payload.sections())?,
        seed,
        step,
    };
    let ckpt = Checkpoint { meta, payload };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string(&ckpt)?)?;
    Ok(())
}

/// Loads without verifying compatibility (the caller owns the risk).
pub fn load_unchecked(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok(ckpt)
}

/// Loads and verifies that the artifact was built under config sections that
/// hash identically to the current config.
pub fn load(path: &Path, cfg: &Config) -> Result<Checkpoint> {
    let ckpt = load_unchecked(path)?;
    let expected = cfg.hash_sections(ckpt.payload.sections())?;
    if ckpt.meta.config_hash != expected {
        return Err(Error::CheckpointMismatch(format!(
            "{}: {} checkpoint was trained under config hash {} but the current \
             config hashes to {}",
            path.display(),
            ckpt.meta.kind,
            ckpt.meta.config_hash,
            expected
        )));
    }
    Ok(ckpt)
}

impl Checkpoint {
    pub fn into_generator(self) -> Result<MlmModel> {
        match self.payload {
            CheckpointPayload::Generator(m) => Ok(*m),
            other => Err(wrong_kind("generator", other.kind())),
        }
    }

    pub fn into_translator(self) -> Result<TranslatorModel> {
        match self.payload {
            CheckpointPayload::Translator(m) => Ok(*m),
            other => Err(wrong_kind("translator", other.kind())),
        }
    }

    pub fn into_policy(self) -> Result<PolicyBundle> {
        match self.payload {
            CheckpointPayload::Policy(m) => Ok(*m),
            other => Err(wrong_kind("policy", other.kind())),
        }
    }

    pub fn into_high_level(self) -> Result<HlBundle> {
        match self.payload {
            CheckpointPayload::HighLevel(m) => Ok(*m),
            other => Err(wrong_kind("high-level", other.kind())),
        }
    }
}

fn wrong_kind(wanted: &str, got: &str) -> Error {
    Error::Checkpoint(format!("wanted a {wanted} checkpoint, found {got}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PolicyMethod;
    use crate::lang::{LmBackend, RecurrentLm, Vocab};

    fn small_model(d: usize, seed: u64) -> MlmModel {
        let cfg = Config::default();
        let lm = LmBackend::Recurrent(RecurrentLm::new(Vocab::project(), d, seed));
        MlmModel::new(&cfg.tl, lm, seed)
    }

    #[test]
    fn generator_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen.ckpt.json");
        let cfg = Config::default();
        let model = small_model(12, 3);
        let hash = model.params.content_hash();
        let s: Vec<f64> = (0..10).map(|i| 0.05 * i as f64 - 0.3).collect();
        let sp: Vec<f64> = (0..10).map(|i| 0.21 - 0.04 * i as f64).collect();
        let tl_before = model.core.generate(&model.params, &s, &sp);

        save(&path, &cfg, 3, 500, CheckpointPayload::Generator(Box::new(model))).unwrap();
        let loaded = load(&path, &cfg).unwrap();
        assert_eq!(loaded.meta.kind, "generator");
        assert_eq!(loaded.meta.seed, 3);
        assert_eq!(loaded.meta.step, 500);
        let model = loaded.into_generator().unwrap();
        assert_eq!(model.params.content_hash(), hash, "reload must keep every bit");
        assert_eq!(model.core.generate(&model.params, &s, &sp).values, tl_before.values);
    }

    #[test]
    fn incompatible_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen.ckpt.json");
        let cfg = Config::default();
        save(&path, &cfg, 1, 0, CheckpointPayload::Generator(Box::new(small_model(10, 5))))
            .unwrap();
        let mut other = Config::default();
        other.tl.n_pn = 6;
        match load(&path, &other) {
            Err(Error::CheckpointMismatch(msg)) => {
                assert!(msg.contains("generator"), "message names the kind: {msg}")
            }
            other => panic!("expected a mismatch error, got {other:?}"),
        }
        // Sections the artifact does not depend on may change freely.
        let mut unrelated = Config::default();
        unrelated.ppo.total_steps = 1;
        load(&path, &unrelated).unwrap();
        // And the unchecked loader ignores the stamp entirely.
        load_unchecked(&path).unwrap();
    }

    #[test]
    fn wrong_kind_extraction_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pol.ckpt.json");
        let cfg = Config::default();
        let bundle = PolicyBundle::new(PolicyMethod::OneHot, 14, 10, 100, 7);
        let table_hash = bundle.pi_params.content_hash();
        save(&path, &cfg, 7, 42, CheckpointPayload::Policy(Box::new(bundle))).unwrap();
        let loaded = load(&path, &cfg).unwrap();
        assert!(matches!(
            loaded.clone().into_generator(),
            Err(Error::Checkpoint(_))
        ));
        let bundle = loaded.into_policy().unwrap();
        assert_eq!(bundle.pi_params.content_hash(), table_hash);
        assert!(matches!(bundle.method, PolicyMethod::OneHot));
    }
}
