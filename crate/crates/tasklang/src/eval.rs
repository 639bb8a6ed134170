//! Evaluation and analysis: greedy success rates across sentence splits,
//! paraphrase consistency of sentence encodings, per-predicate destination
//! frequencies, and embedding export for external 2D projection.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EnvConfig, EvalConfig};
use crate::corpus::{
    canonical_error_variant, pattern_ids, render_nl, Triplet, ALL_ERROR_KINDS,
};
use crate::env::{scripted_mover_action, BallEnv, Instruction, PushAction, ACTION_COUNT};
use crate::error::{Error, Result};
use crate::generator::{GenCore, MlmModel};
use crate::policy::{run_greedy_episode, Conditioner, PolicyBundle};
use crate::rng;

/// Action source under evaluation.
pub enum EvalPolicy<'a> {
    /// A trained bundle plus the language stack that conditions it.
    Net { bundle: &'a PolicyBundle, cond: &'a mut Conditioner },
    /// The hand-coded controller used for dataset collection.
    Scripted,
    /// Uniform random actions.
    Random,
}

impl EvalPolicy<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            EvalPolicy::Net { bundle, .. } => bundle.method.name(),
            EvalPolicy::Scripted => "scripted",
            EvalPolicy::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstructionOutcome {
    pub instruction: Instruction,
    pub episodes: usize,
    pub successes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub split: String,
    pub with_errors: bool,
    pub episodes: usize,
    pub success_rate: f64,
    pub per_instruction: Vec<InstructionOutcome>,
}

/// Runs `cfg.episodes` greedy evaluation episodes over a deterministic grid:
/// instructions round-robin, split patterns cycling, error kinds cycling when
/// enabled, environment seeds derived from `seed`.
pub fn evaluate_success(
    policy: &mut EvalPolicy,
    env_cfg: &EnvConfig,
    cfg: &EvalConfig,
    instructions: &[Instruction],
    seed: u64,
) -> Result<EvalReport> {
    if instructions.is_empty() || cfg.episodes == 0 {
        return Err(Error::Config("evaluation needs instructions and episodes".into()));
    }
    let patterns = pattern_ids(cfg.split);
    let mut noise_rng = rng::rng_from(seed, "eval-cond-noise", 0);
    let mut action_rng = rng::rng_from(seed, "eval-random-action", 0);
    let mut outcomes: Vec<InstructionOutcome> = instructions
        .iter()
        .map(|&instruction| InstructionOutcome { instruction, episodes: 0, successes: 0 })
        .collect();
    for e in 0..cfg.episodes {
        let which = e % instructions.len();
        let instr = instructions[which];
        let pattern = patterns[(e / instructions.len()) % patterns.len()];
        let nl = if cfg.with_errors {
            let kind = ALL_ERROR_KINDS[e % ALL_ERROR_KINDS.len()];
            canonical_error_variant(&instr, pattern, kind)?.text
        } else {
            render_nl(&instr, pattern)?
        };
        let env_seed = rng::derive(seed, "eval-env", e as u64);
        let mut env = BallEnv::new(env_cfg.clone(), env_seed, instr)?;
        let success = match policy {
            EvalPolicy::Net { bundle, cond } => {
                let payload = cond.payload(bundle, &nl, &mut noise_rng)?;
                run_greedy_episode(bundle, &payload, &mut env)?.success
            }
            EvalPolicy::Scripted => loop {
                let a = scripted_mover_action(&env.state.positions, &env.instruction, env_cfg);
                let r = env.step(a)?;
                if r.done {
                    break r.info.success;
                }
            },
            EvalPolicy::Random => loop {
                let a = PushAction::from_index(action_rng.gen_range(0..ACTION_COUNT))?;
                let r = env.step(a)?;
                if r.done {
                    break r.info.success;
                }
            },
        };
        outcomes[which].episodes += 1;
        outcomes[which].successes += usize::from(success);
    }
    let hits: usize = outcomes.iter().map(|o| o.successes).sum();
    Ok(EvalReport {
        method: policy.name().to_string(),
        split: format!("{:?}", cfg.split).to_lowercase(),
        with_errors: cfg.with_errors,
        episodes: cfg.episodes,
        success_rate: hits as f64 / cfg.episodes as f64,
        per_instruction: outcomes,
    })
}

/// Mean and population standard deviation over per-seed success rates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub rates: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate_rates(rates: &[f64]) -> MultiSeedReport {
    let n = rates.len().max(1) as f64;
    let mean = rates.iter().sum::<f64>() / n;
    let var = rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    MultiSeedReport { rates: rates.to_vec(), mean, std: var.sqrt() }
}

/// Paraphrase-consistency report: for each instruction, every selected
/// pattern is rendered and encoded; `exact_fraction` is the share of
/// instructions whose renderings all encode identically, and `silhouette`
/// scores the continuous clustering by instruction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub exact_fraction: f64,
    pub silhouette: Option<f64>,
    /// Every encoding across all instructions was identical, so the grouping
    /// carries no information.
    pub degenerate: bool,
    pub instructions: usize,
    pub patterns: usize,
}

/// Measures how consistently an encoder maps paraphrases of one instruction
/// to one code. `discrete` selects exact matching; otherwise the silhouette
/// of instruction-labeled clusters is also reported.
pub fn paraphrase_consistency(
    mut encode: impl FnMut(&str) -> Result<Vec<f64>>,
    discrete: bool,
    instructions: &[Instruction],
    patterns: &[usize],
) -> Result<ConsistencyReport> {
    if patterns.len() < 2 {
        return Err(Error::Config("consistency needs at least two patterns".into()));
    }
    if instructions.is_empty() {
        return Err(Error::Config("consistency needs instructions".into()));
    }
    let mut groups: Vec<Vec<Vec<f64>>> = Vec::with_capacity(instructions.len());
    for instr in instructions {
        let mut g = Vec::with_capacity(patterns.len());
        for &p in patterns {
            g.push(encode(&render_nl(instr, p)?)?);
        }
        groups.push(g);
    }
    let consistent = groups.iter().filter(|g| g.iter().all(|v| *v == g[0])).count();
    let exact_fraction = consistent as f64 / groups.len() as f64;
    let first = &groups[0][0];
    let degenerate = groups.iter().flatten().all(|v| v == first);
    let silhouette = if discrete {
        None
    } else if degenerate {
        Some(0.0)
    } else {
        Some(mean_silhouette(&groups))
    };
    Ok(ConsistencyReport {
        exact_fraction,
        silhouette,
        degenerate,
        instructions: instructions.len(),
        patterns: patterns.len(),
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette over all points, clusters given by the outer grouping.
/// Singleton clusters contribute 0, the usual convention.
pub fn mean_silhouette(groups: &[Vec<Vec<f64>>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (ci, cluster) in groups.iter().enumerate() {
        for (pi, point) in cluster.iter().enumerate() {
            count += 1;
            if cluster.len() < 2 {
                continue;
            }
            let a = cluster
                .iter()
                .enumerate()
                .filter(|(qi, _)| *qi != pi)
                .map(|(_, q)| dist(point, q))
                .sum::<f64>()
                / (cluster.len() - 1) as f64;
            let b = groups
                .iter()
                .enumerate()
                .filter(|(cj, _)| *cj != ci)
                .map(|(_, other)| {
                    other.iter().map(|q| dist(point, q)).sum::<f64>() / other.len() as f64
                })
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                total += (b - a) / denom;
            }
        }
    }
    total / count.max(1) as f64
}

/// One predicate's empirical destination-color distribution among the
/// dataset triplets where its bit fires.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredicateFrequencyRow {
    /// Module-major predicate index.
    pub predicate: usize,
    pub fires: usize,
    /// Destination-color distribution (red, blue, green, cyan, purple);
    /// zeros when inactive.
    pub freq: [f64; 5],
    pub inactive: bool,
}

/// For each predicate bit, how destination colors distribute over the
/// triplets where the bit is 1. Needs the predicate-structured generator.
pub fn predicate_frequency(model: &MlmModel, dataset: &[Triplet]) -> Result<Vec<PredicateFrequencyRow>> {
    let gen = match &model.core {
        GenCore::Predicate(g) => g,
        GenCore::Flat(_) => {
            return Err(Error::Config(
                "predicate analysis needs the predicate-structured generator".into(),
            ))
        }
    };
    let layout = gen.layout;
    let rows = layout.n_pm * layout.n_pn;
    let mut counts = vec![[0usize; 5]; rows];
    for t in dataset {
        let tl = gen.generate(&model.params, &t.s, &t.s_prime);
        for pm in 0..layout.n_pm {
            for j in 0..layout.n_pn {
                if tl.pred_bit(&layout, pm, j) {
                    counts[pm * layout.n_pn + j][t.instruction.destination] += 1;
                }
            }
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(predicate, c)| {
            let fires: usize = c.iter().sum();
            let mut freq = [0.0; 5];
            if fires > 0 {
                for (f, n) in freq.iter_mut().zip(c) {
                    *f = n as f64 / fires as f64;
                }
            }
            PredicateFrequencyRow { predicate, fires, freq, inactive: fires == 0 }
        })
        .collect())
}

/// One exported encoding row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub instruction: Instruction,
    pub pattern_id: usize,
    pub nl: String,
    pub vector: Vec<f64>,
}

/// Writes one JSONL row per (instruction, pattern) encoding for external 2D
/// projection. Returns the number of rows written.
pub fn export_embeddings(
    mut encode: impl FnMut(&str) -> Result<Vec<f64>>,
    instructions: &[Instruction],
    patterns: &[usize],
    out: &Path,
) -> Result<usize> {
    let mut lines = String::new();
    let mut rows = 0usize;
    for instr in instructions {
        for &p in patterns {
            let nl = render_nl(instr, p)?;
            let vector = encode(&nl)?;
            let row = EmbeddingRow { instruction: *instr, pattern_id: p, nl, vector };
            lines.push_str(&serde_json::to_string(&row)?);
            lines.push('\n');
            rows += 1;
        }
    }
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, lines)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Config, PatternSplit, PolicyMethod};
    use crate::env::{instruction_subset, Direction};
    use crate::lang::{LmBackend, RecurrentLm, Vocab};

    #[test]
    fn scripted_policy_scores_near_perfect_and_random_scores_low() {
        let cfg = Config::default();
        let eval_cfg = EvalConfig { episodes: 40, split: PatternSplit::Training, with_errors: false };
        let instrs = instruction_subset(10);
        let scripted =
            evaluate_success(&mut EvalPolicy::Scripted, &cfg.env, &eval_cfg, &instrs, 3).unwrap();
        assert!(
            scripted.success_rate >= 0.99,
            "scripted controller should be near-perfect, got {}",
            scripted.success_rate
        );
        let random =
            evaluate_success(&mut EvalPolicy::Random, &cfg.env, &eval_cfg, &instrs, 3).unwrap();
        assert!(
            random.success_rate < 0.2,
            "random actions should rarely succeed, got {}",
            random.success_rate
        );
        // Episode accounting.
        let total: usize = scripted.per_instruction.iter().map(|o| o.episodes).sum();
        assert_eq!(total, 40);
        assert_eq!(scripted.episodes, 40);
        // Determinism.
        let again =
            evaluate_success(&mut EvalPolicy::Scripted, &cfg.env, &eval_cfg, &instrs, 3).unwrap();
        assert_eq!(scripted.success_rate, again.success_rate);
    }

    #[test]
    fn error_added_evaluation_renders_perturbed_sentences() {
        let cfg = Config::default();
        let eval_cfg = EvalConfig { episodes: 8, split: PatternSplit::Training, with_errors: true };
        let instrs = instruction_subset(4);
        // A net policy driven through the conditioner must accept the
        // perturbed sentences (they tokenize like any other).
        let lm = LmBackend::Recurrent(RecurrentLm::new(Vocab::project(), 10, 2));
        let mut cond = Conditioner::new(lm, None);
        let bundle = PolicyBundle::new(PolicyMethod::OneHot, 14, 10, cond.registry.len(), 7);
        let report = evaluate_success(
            &mut EvalPolicy::Net { bundle: &bundle, cond: &mut cond },
            &cfg.env,
            &eval_cfg,
            &instrs,
            5,
        )
        .unwrap();
        assert!(report.with_errors);
        assert_eq!(report.episodes, 8);
    }

    #[test]
    fn multi_seed_aggregation_matches_hand_computation() {
        let r = aggregate_rates(&[0.5, 0.7, 0.9]);
        assert!((r.mean - 0.7).abs() < 1e-12);
        let expect = ((0.04 + 0.0 + 0.04) / 3.0_f64).sqrt();
        assert!((r.std - expect).abs() < 1e-12);
    }

    #[test]
    fn consistency_flags_constant_and_distinct_encoders() {
        let instrs = instruction_subset(5);
        let patterns = [0usize, 1, 2];
        // Constant map: perfectly consistent but degenerate.
        let r = paraphrase_consistency(|_| Ok(vec![1.0, 0.0]), true, &instrs, &patterns).unwrap();
        assert_eq!(r.exact_fraction, 1.0);
        assert!(r.degenerate);
        assert!(r.silhouette.is_none());
        // Every rendering distinct: consistency 0.
        let mut n = 0.0;
        let r = paraphrase_consistency(
            |_| {
                n += 1.0;
                Ok(vec![n])
            },
            true,
            &instrs,
            &patterns,
        )
        .unwrap();
        assert_eq!(r.exact_fraction, 0.0);
        assert!(!r.degenerate);
    }

    #[test]
    fn silhouette_rewards_tight_separated_clusters() {
        let instrs = instruction_subset(3);
        let patterns = [0usize, 1, 2];
        // Encode by instruction identity (tight, well-separated clusters):
        // recover the mover color from the sentence text.
        let r = paraphrase_consistency(
            |nl: &str| {
                // Mover color = earliest color mention in the sentence.
                let c = ["red", "blue", "green", "cyan", "purple"]
                    .iter()
                    .enumerate()
                    .filter_map(|(i, c)| nl.find(c).map(|pos| (pos, i)))
                    .min()
                    .unwrap()
                    .1 as f64;
                Ok(vec![10.0 * c, -3.0 * c])
            },
            false,
            &instrs,
            &patterns,
        );
        let r = r.unwrap();
        let s = r.silhouette.unwrap();
        assert!(s > 0.9, "tight separated clusters should score near 1, got {s}");
        assert!((-1.0..=1.0).contains(&s));
        // Degenerate continuous encoder: silhouette forced to 0 with flag.
        let d = paraphrase_consistency(|_| Ok(vec![0.5]), false, &instrs, &patterns).unwrap();
        assert_eq!(d.silhouette, Some(0.0));
        assert!(d.degenerate);
    }

    fn fake_dataset(n: usize, seed: u64) -> Vec<Triplet> {
        let mut r = rng::rng_from(seed, "eval-test-data", 0);
        (0..n)
            .map(|i| {
                let s: Vec<f64> = (0..10).map(|_| rng::uniform_open(&mut r) * 2.0 - 1.0).collect();
                let s_prime: Vec<f64> =
                    (0..10).map(|_| rng::uniform_open(&mut r) * 2.0 - 1.0).collect();
                let mover = i % 5;
                let destination = (i + 1 + i / 5) % 5;
                let instruction = if mover == destination {
                    Instruction::new(mover, Direction::Left, (mover + 1) % 5).unwrap()
                } else {
                    Instruction::new(mover, Direction::Left, destination).unwrap()
                };
                Triplet {
                    s,
                    s_prime,
                    nl: String::new(),
                    instruction,
                    pattern_id: 0,
                }
            })
            .collect()
    }

    #[test]
    fn predicate_frequency_rows_are_distributions_and_flag_dead_bits() {
        let cfg = Config::default();
        let lm = LmBackend::Recurrent(RecurrentLm::new(Vocab::project(), 16, 2));
        let mut model = MlmModel::new(&cfg.tl, lm, 11);
        // Silence predicate 2 everywhere: zero the shared output weights and
        // bias the two-way choice hard toward "off".
        if let GenCore::Predicate(g) = &model.core {
            let out = g.pred_nets[2].layers.last().unwrap();
            let (w, b) = (out.w, out.b);
            model.params.tensor_mut(w).data.iter_mut().for_each(|v| *v = 0.0);
            model.params.tensor_mut(b).data.copy_from_slice(&[10.0, -10.0]);
        } else {
            panic!("default core is predicate-structured");
        }
        let data = fake_dataset(300, 13);
        let rows = predicate_frequency(&model, &data).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[2].inactive, "silenced predicate must be flagged");
        assert_eq!(rows[2].fires, 0);
        for row in &rows {
            if !row.inactive {
                let sum: f64 = row.freq.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9, "active rows sum to 1, got {sum}");
            }
        }
    }

    #[test]
    fn embedding_export_writes_one_row_per_pair() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("emb.jsonl");
        let instrs = instruction_subset(10);
        let patterns: Vec<usize> = (0..9).collect();
        let rows = export_embeddings(
            |nl: &str| Ok(vec![f64::from(u32::try_from(nl.len()).unwrap()), 1.0]),
            &instrs,
            &patterns,
            &out,
        )
        .unwrap();
        assert_eq!(rows, 90);
        let text = std::fs::read_to_string(&out).unwrap();
        let parsed: Vec<EmbeddingRow> =
            text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(parsed.len(), 90);
        assert_eq!(parsed[0].vector.len(), 2);
        assert!(!parsed[0].nl.is_empty());
    }
}
