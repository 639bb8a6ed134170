//! Staged experiment orchestration with cached artifacts.
//!
//! The pipeline runs collect-dataset → train-tl → train-translator →
//! train-policy → eval inside one run directory. Each stage records the hash
//! of the config sections it reads and the files it wrote into
//! `manifest.json`; a stage is skipped when that hash is unchanged, all its
//! outputs still exist, and nothing upstream reran. The manifest carries no
//! timestamps, so a fully cached rerun leaves it byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointPayload};
use crate::config::{Config, LmBackendKind};
use crate::corpus::{self, Triplet};
use crate::env::{all_instructions, instruction_subset};
use crate::error::{Error, Result};
use crate::eval::{evaluate_success, EvalPolicy};
use crate::generator::{train_mlm, LossPoint, MlmModel};
use crate::lang::{EmbeddingCache, FrozenLm, LmBackend, RecurrentLm, Vocab};
use crate::policy::{train_ifp, Conditioner, PolicyBundle, PolicyCurvePoint};
use crate::rng;
use crate::translator::{build_pairs, train_translator, TranslatorModel};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESOLVED_CONFIG_FILE: &str = "resolved-config.toml";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const TL_CKPT: &str = "tl.ckpt.json";
pub const TL_CURVE: &str = "tl_curve.jsonl";
pub const TRANSLATOR_CKPT: &str = "translator.ckpt.json";
pub const TRANSLATOR_CURVE: &str = "translator_curve.jsonl";
pub const POLICY_CKPT: &str = "policy.ckpt.json";
pub const POLICY_CURVE: &str = "policy_curve.jsonl";
pub const EVAL_REPORT: &str = "eval_report.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash of the config sections this stage reads.
    pub config_hash: String,
    /// Files the stage wrote, relative to the run directory.
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// What one pipeline invocation did.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    /// Stage name → whether it actually ran (false = served from cache).
    pub ran: BTreeMap<String, bool>,
    pub manifest: Manifest,
}

/// Stage table: name, config sections it reads, outputs it owns.
const STAGES: [(&str, &[&str], &[&str]); 5] = [
    ("collect-dataset", &["env", "corpus", "run"], &[DATASET_FILE]),
    ("train-tl", &["env", "corpus", "tl", "lm", "mlm", "run"], &[TL_CKPT, TL_CURVE]),
    ("train-translator", &["tl", "lm", "vae", "run"], &[TRANSLATOR_CKPT, TRANSLATOR_CURVE]),
    ("train-policy", &["env", "tl", "lm", "ppo", "run"], &[POLICY_CKPT, POLICY_CURVE]),
    ("eval", &["env", "eval", "run"], &[EVAL_REPORT]),
];

fn stage_is_cached(
    manifest: &Manifest,
    dir: &Path,
    name: &str,
    hash: &str,
    outputs: &[&str],
    upstream_reran: bool,
) -> bool {
    if upstream_reran {
        return false;
    }
    match manifest.stages.get(name) {
        Some(rec) => {
            rec.config_hash == hash && outputs.iter().all(|o| dir.join(o).exists())
        }
        None => false,
    }
}

/// Builds the configured language backend.
pub fn make_lm(cfg: &Config, master_seed: u64) -> Result<LmBackend> {
    Ok(match cfg.lm.backend {
        LmBackendKind::TrainableRecurrent => LmBackend::Recurrent(RecurrentLm::new(
            Vocab::project(),
            cfg.lm.d_lm,
            rng::derive(master_seed, "lm-init", 0),
        )),
        LmBackendKind::PretrainedTransformer => LmBackend::Frozen(FrozenLm::new(
            Vocab::project(),
            cfg.lm.d_lm,
            cfg.lm.frozen_layers,
            cfg.lm.frozen_heads,
            cfg.lm.frozen_seed,
        )?),
    })
}

pub fn write_curve<T: Serialize>(path: &Path, points: &[T]) -> Result<()> {
    let mut text = String::new();
    for p in points {
        text.push_str(&serde_json::to_string(p)?);
        text.push('\n');
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

// --- Individual stage bodies, reusable by the CLI's single-stage commands.

pub fn stage_collect_dataset(cfg: &Config, dir: &Path) -> Result<Vec<Triplet>> {
    let data = corpus::collect_task_dataset(
        &cfg.env,
        cfg.corpus.dataset_n,
        rng::derive(cfg.run.master_seed, "dataset", 0),
        cfg.corpus.split,
    )?;
    corpus::write_jsonl(&dir.join(DATASET_FILE), &data)?;
    Ok(data)
}

pub fn stage_train_tl(
    cfg: &Config,
    dir: &Path,
    data: &[Triplet],
    mut log: impl FnMut(&LossPoint),
) -> Result<MlmModel> {
    let lm = make_lm(cfg, cfg.run.master_seed)?;
    let mut model = MlmModel::new(&cfg.tl, lm, rng::derive(cfg.run.master_seed, "mlm-init", 0));
    let curve = train_mlm(&mut model, data, &cfg.mlm, cfg.run.master_seed, |p| log(p))?;
    write_curve(&dir.join(TL_CURVE), &curve)?;
    checkpoint::save(
        &dir.join(TL_CKPT),
        cfg,
        cfg.run.master_seed,
        cfg.mlm.steps as u64,
        CheckpointPayload::Generator(Box::new(model)),
    )?;
    checkpoint::load(&dir.join(TL_CKPT), cfg)?.into_generator()
}

pub fn stage_train_translator(
    cfg: &Config,
    dir: &Path,
    data: &[Triplet],
    mlm: &MlmModel,
    mut log: impl FnMut(&LossPoint),
) -> Result<TranslatorModel> {
    let mut cache = EmbeddingCache::new();
    let pairs = build_pairs(data, mlm, &mut cache)?;
    let mut model = TranslatorModel::new(
        &cfg.vae,
        &cfg.tl,
        mlm.lm.d_lm(),
        rng::derive(cfg.run.master_seed, "translator-init", 0),
    );
    let curve = train_translator(&mut model, &pairs, &cfg.vae, cfg.run.master_seed, |p| log(p))?;
    write_curve(&dir.join(TRANSLATOR_CURVE), &curve)?;
    checkpoint::save(
        &dir.join(TRANSLATOR_CKPT),
        cfg,
        cfg.run.master_seed,
        cfg.vae.steps as u64,
        CheckpointPayload::Translator(Box::new(model)),
    )?;
    checkpoint::load(&dir.join(TRANSLATOR_CKPT), cfg)?.into_translator()
}

pub fn stage_train_policy(
    cfg: &Config,
    dir: &Path,
    mlm: &MlmModel,
    translator: Option<TranslatorModel>,
    mut log: impl FnMut(&PolicyCurvePoint),
) -> Result<PolicyBundle> {
    let mut cond = Conditioner::new(mlm.lm.clone(), translator);
    let cond_dim = crate::translator::TlShape::from_cfg(&cfg.tl).out_len;
    let mut bundle = PolicyBundle::new(
        cfg.ppo.method,
        cond_dim,
        mlm.lm.d_lm(),
        cond.registry.len(),
        rng::derive(cfg.run.master_seed, "policy-init", 0),
    );
    let curve = train_ifp(&mut bundle, &mut cond, &cfg.env, &cfg.ppo, cfg.run.master_seed, |p| {
        log(p)
    })?;
    write_curve(&dir.join(POLICY_CURVE), &curve)?;
    checkpoint::save(
        &dir.join(POLICY_CKPT),
        cfg,
        cfg.run.master_seed,
        cfg.ppo.total_steps,
        CheckpointPayload::Policy(Box::new(bundle)),
    )?;
    checkpoint::load(&dir.join(POLICY_CKPT), cfg)?.into_policy()
}

pub fn stage_eval(
    cfg: &Config,
    dir: &Path,
    bundle: &PolicyBundle,
    mlm: &MlmModel,
    translator: Option<TranslatorModel>,
) -> Result<()> {
    let mut cond = Conditioner::new(mlm.lm.clone(), translator);
    let instructions = if cfg.ppo.instruction_count == 0 {
        all_instructions()
    } else {
        instruction_subset(cfg.ppo.instruction_count)
    };
    let report = evaluate_success(
        &mut EvalPolicy::Net { bundle, cond: &mut cond },
        &cfg.env,
        &cfg.eval,
        &instructions,
        rng::derive(cfg.run.master_seed, "pipeline-eval", 0),
    )?;
    std::fs::write(dir.join(EVAL_REPORT), serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

/// Runs all stages in order, serving unchanged stages from cache. `log`
/// receives one line per stage decision and occasional progress lines.
pub fn run_pipeline(
    cfg: &Config,
    run_dir: &Path,
    mut log: impl FnMut(&str),
) -> Result<PipelineReport> {
    cfg.validate()?;
    std::fs::create_dir_all(run_dir)?;
    std::fs::write(run_dir.join(RESOLVED_CONFIG_FILE), toml::to_string_pretty(cfg)?)?;

    let old = Manifest::load(run_dir)?;
    let mut manifest = Manifest::default();
    let mut ran = BTreeMap::new();
    let mut upstream_reran = false;

    // Lazily materialized inter-stage values: reload from cached artifacts
    // only when a later stage actually runs.
    let mut data: Option<Vec<Triplet>> = None;
    let mut mlm: Option<MlmModel> = None;
    let mut translator: Option<TranslatorModel> = None;
    let mut bundle: Option<PolicyBundle> = None;

    for (name, sections, outputs) in STAGES {
        let hash = cfg.hash_sections(sections)?;
        let cached = stage_is_cached(&old, run_dir, name, &hash, outputs, upstream_reran);
        if cached {
            log(&format!("{name}: cached"));
        } else {
            log(&format!("{name}: running"));
            run_stage(cfg, run_dir, name, &mut data, &mut mlm, &mut translator, &mut bundle, &mut log)
                .map_err(|e| Error::Pipeline(format!("stage {name} failed: {e}")))?;
            upstream_reran = true;
        }
        ran.insert(name.to_string(), !cached);
        manifest.stages.insert(
            name.to_string(),
            StageRecord {
                config_hash: hash,
                outputs: outputs.iter().map(|s| s.to_string()).collect(),
            },
        );
    }
    manifest.save(run_dir)?;
    Ok(PipelineReport { ran, manifest })
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    cfg: &Config,
    dir: &Path,
    name: &str,
    data: &mut Option<Vec<Triplet>>,
    mlm: &mut Option<MlmModel>,
    translator: &mut Option<TranslatorModel>,
    bundle: &mut Option<PolicyBundle>,
    log: &mut impl FnMut(&str),
) -> Result<()> {
    match name {
        "collect-dataset" => {
            *data = Some(stage_collect_dataset(cfg, dir)?);
        }
        "train-tl" => {
            ensure_data(cfg, dir, data)?;
            let mut last = 0u64;
            *mlm = Some(stage_train_tl(cfg, dir, data.as_ref().expect("dataset"), |p| {
                if p.step >= last + 100 {
                    last = p.step;
                    log(&format!("  train-tl step {} loss {:.4}", p.step, p.loss));
                }
            })?);
        }
        "train-translator" => {
            ensure_data(cfg, dir, data)?;
            ensure_mlm(cfg, dir, mlm)?;
            let mut last = 0u64;
            *translator = Some(stage_train_translator(
                cfg,
                dir,
                data.as_ref().expect("dataset"),
                mlm.as_ref().expect("generator"),
                |p| {
                    if p.step >= last + 200 {
                        last = p.step;
                        log(&format!("  train-translator step {} loss {:.4}", p.step, p.loss));
                    }
                },
            )?);
        }
        "train-policy" => {
            ensure_mlm(cfg, dir, mlm)?;
            ensure_translator(cfg, dir, translator)?;
            *bundle = Some(stage_train_policy(
                cfg,
                dir,
                mlm.as_ref().expect("generator"),
                translator.clone(),
                |p| {
                    log(&format!(
                        "  train-policy steps {} return {:.3} success {:.3}",
                        p.env_steps, p.mean_return, p.rollout_success
                    ));
                },
            )?);
        }
        "eval" => {
            ensure_mlm(cfg, dir, mlm)?;
            ensure_translator(cfg, dir, translator)?;
            ensure_policy(cfg, dir, bundle)?;
            stage_eval(
                cfg,
                dir,
                bundle.as_ref().expect("policy"),
                mlm.as_ref().expect("generator"),
                translator.clone(),
            )?;
        }
        other => return Err(Error::Pipeline(format!("unknown stage {other}"))),
    }
    Ok(())
}

fn ensure_data(cfg: &Config, dir: &Path, data: &mut Option<Vec<Triplet>>) -> Result<()> {
    let _ = cfg;
    if data.is_none() {
        *data = Some(corpus::read_jsonl(&dir.join(DATASET_FILE))?);
    }
    Ok(())
}

fn ensure_mlm(cfg: &Config, dir: &Path, mlm: &mut Option<MlmModel>) -> Result<()> {
    if mlm.is_none() {
        *mlm = Some(checkpoint::load(&dir.join(TL_CKPT), cfg)?.into_generator()?);
    }
    Ok(())
}

fn ensure_translator(
    cfg: &Config,
    dir: &Path,
    translator: &mut Option<TranslatorModel>,
) -> Result<()> {
    if translator.is_none() && cfg.ppo.method == crate::config::PolicyMethod::Talar {
        *translator =
            Some(checkpoint::load(&dir.join(TRANSLATOR_CKPT), cfg)?.into_translator()?);
    }
    Ok(())
}

fn ensure_policy(cfg: &Config, dir: &Path, bundle: &mut Option<PolicyBundle>) -> Result<()> {
    if bundle.is_none() {
        *bundle = Some(checkpoint::load(&dir.join(POLICY_CKPT), cfg)?.into_policy()?);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A configuration small enough to run the whole pipeline in seconds.
    pub(crate) fn smoke_config() -> Config {
        let mut c = Config::default();
        c.corpus.dataset_n = 60;
        c.lm.d_lm = 16;
        c.mlm.steps = 30;
        c.mlm.batch_size = 16;
        c.vae.steps = 40;
        c.vae.batch_size = 16;
        c.vae.z_dim = 8;
        c.ppo.total_steps = 120;
        c.ppo.rollout_horizon = 60;
        c.ppo.epochs = 2;
        c.ppo.minibatch_size = 16;
        c.ppo.instruction_count = 4;
        c.eval.episodes = 6;
        c
    }

    #[test]
    fn pipeline_runs_caches_and_cascades() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = smoke_config();

        // First run executes everything and emits all artifacts.
        let r1 = run_pipeline(&cfg, dir.path(), |_| {}).unwrap();
        assert!(r1.ran.values().all(|&v| v), "first run executes every stage");
        for f in [
            MANIFEST_FILE,
            RESOLVED_CONFIG_FILE,
            DATASET_FILE,
            TL_CKPT,
            TL_CURVE,
            TRANSLATOR_CKPT,
            TRANSLATOR_CURVE,
            POLICY_CKPT,
            POLICY_CURVE,
            EVAL_REPORT,
        ] {
            assert!(dir.path().join(f).exists(), "missing artifact {f}");
        }
        let manifest_bytes = std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        // Manifest lists every stage output.
        let listed: Vec<String> = r1
            .manifest
            .stages
            .values()
            .flat_map(|s| s.outputs.clone())
            .collect();
        for f in [DATASET_FILE, TL_CKPT, TRANSLATOR_CKPT, POLICY_CKPT, EVAL_REPORT] {
            assert!(listed.iter().any(|o| o == f), "{f} not in manifest");
        }

        // Second run with identical config: everything cached, manifest
        // byte-identical.
        let r2 = run_pipeline(&cfg, dir.path(), |_| {}).unwrap();
        assert!(r2.ran.values().all(|&v| !v), "second run must be fully cached");
        assert_eq!(std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), manifest_bytes);

        // Deleting the translator checkpoint reruns it and everything after,
        // but not the stages before it.
        std::fs::remove_file(dir.path().join(TRANSLATOR_CKPT)).unwrap();
        let r3 = run_pipeline(&cfg, dir.path(), |_| {}).unwrap();
        assert!(!r3.ran["collect-dataset"]);
        assert!(!r3.ran["train-tl"]);
        assert!(r3.ran["train-translator"]);
        assert!(r3.ran["train-policy"]);
        assert!(r3.ran["eval"]);

        // Changing only an eval knob reruns only eval.
        let mut cfg2 = cfg.clone();
        cfg2.eval.episodes = 8;
        let r4 = run_pipeline(&cfg2, dir.path(), |_| {}).unwrap();
        assert!(!r4.ran["train-policy"]);
        assert!(r4.ran["eval"]);
    }

    #[test]
    fn baseline_methods_skip_the_translator_dependency() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = smoke_config();
        cfg.ppo.method = crate::config::PolicyMethod::OneHot;
        let report = run_pipeline(&cfg, dir.path(), |_| {}).unwrap();
        assert!(report.ran["train-policy"]);
        assert!(dir.path().join(EVAL_REPORT).exists());
    }
}
