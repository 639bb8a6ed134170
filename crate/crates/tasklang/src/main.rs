//! Command-line entry point: single-stage commands, the cached pipeline,
//! evaluation, analysis, and plotting. Every command resolves one `Config`
//! (file < --set overrides < dedicated flags), writes the resolved form into
//! the run directory, and derives all randomness from `run.master_seed`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use tasklang::checkpoint::{self, CheckpointPayload};
use tasklang::config::{Abstraction, Config, PatternSplit, PolicyMethod};
use tasklang::corpus::{self, Registry};
use tasklang::env::{all_instructions, instruction_subset};
use tasklang::eval::{
    aggregate_rates, evaluate_success, export_embeddings, paraphrase_consistency,
    predicate_frequency, EvalPolicy,
};
use tasklang::generator::MlmModel;
use tasklang::lang::EmbeddingCache;
use tasklang::pipeline::{
    self, run_pipeline, stage_collect_dataset, stage_train_policy, stage_train_tl,
    stage_train_translator, write_curve,
};
use tasklang::plot::plot_files;
use tasklang::policy::{
    arrangement_score, train_hrl, Conditioner, HlActor, HlBundle,
};
use tasklang::rng;
use tasklang::translator::TranslatorModel;

const HL_CKPT: &str = "hl.ckpt.json";
const HRL_CURVE: &str = "hrl_curve.jsonl";
const HRL_REPORT: &str = "hrl_report.json";

#[derive(Parser)]
#[command(
    name = "tasklang",
    version,
    about = "Task-language learning and instruction-following RL in a 2D ball world"
)]
struct Cli {
    /// TOML config file; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory (default: {out_root}/seed-{master_seed}; out_root from
    /// the config, overridable with TASKLANG_OUT_ROOT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dotted config override, e.g. --set ppo.total_steps=100000 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Roll scripted episodes and write the (state, state', sentence) dataset.
    CollectDataset {
        /// Number of triplets.
        #[arg(long)]
        n: Option<usize>,
        /// Sentence patterns: training, testing, or all.
        #[arg(long)]
        split: Option<String>,
    },
    /// Train the task-language generator by masked sentence reconstruction.
    TrainTl {
        #[arg(long)]
        steps: Option<usize>,
        /// Dataset file (default: {run dir}/dataset.jsonl).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train the sentence-to-task-language translator.
    TrainTranslator {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        tl_ckpt: Option<PathBuf>,
    },
    /// Train an instruction-following policy with PPO.
    TrainPolicy {
        /// talar, bert-binary, bert-continuous, or one-hot.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        steps: Option<u64>,
        /// Distinct instructions sampled during training (0 = all).
        #[arg(long)]
        instructions: Option<usize>,
        /// Use only the first N patterns of the training split (0 = all).
        #[arg(long)]
        pattern_limit: Option<usize>,
        #[arg(long)]
        tl_ckpt: Option<PathBuf>,
        #[arg(long)]
        translator_ckpt: Option<PathBuf>,
    },
    /// Train a high-level policy over a frozen instruction follower.
    TrainHrl {
        /// tl (factorized task-language heads) or hal (instruction index).
        #[arg(long)]
        abstraction: Option<String>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        policy_ckpt: Option<PathBuf>,
        #[arg(long)]
        tl_ckpt: Option<PathBuf>,
        #[arg(long)]
        translator_ckpt: Option<PathBuf>,
        /// Arrangement episodes for the final trained-vs-random comparison.
        #[arg(long, default_value_t = 40)]
        eval_episodes: usize,
    },
    /// Evaluate a policy's greedy success rate.
    Eval {
        #[arg(long)]
        policy_ckpt: Option<PathBuf>,
        /// net, scripted, or random.
        #[arg(long, default_value = "net")]
        policy: String,
        #[arg(long)]
        split: Option<String>,
        /// Perturb every sentence with one simulated human error.
        #[arg(long)]
        with_errors: bool,
        #[arg(long)]
        episodes: Option<usize>,
        /// Evaluation seeds; the report aggregates mean and std over them.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        tl_ckpt: Option<PathBuf>,
        #[arg(long)]
        translator_ckpt: Option<PathBuf>,
    },
    /// Destination-color frequencies per predicate bit over a dataset.
    AnalyzePredicates {
        #[arg(long)]
        tl_ckpt: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out_file: Option<PathBuf>,
    },
    /// Export sentence encodings for 2D projection, plus a consistency score.
    AnalyzeEmbeddings {
        /// translator (discrete task language), lm (sentence embedding), or
        /// one-hot (registry row indicator).
        #[arg(long, default_value = "translator")]
        provider: String,
        #[arg(long, default_value_t = 10)]
        instructions: usize,
        #[arg(long, default_value = "training")]
        patterns: String,
        #[arg(long)]
        out_file: Option<PathBuf>,
        #[arg(long)]
        tl_ckpt: Option<PathBuf>,
        #[arg(long)]
        translator_ckpt: Option<PathBuf>,
    },
    /// Draw an SVG line chart from curve JSONL files.
    Plot {
        /// Curve files, each as PATH or PATH:LABEL (repeatable).
        #[arg(long, required = true)]
        input: Vec<String>,
        #[arg(long, default_value = "step")]
        x: String,
        #[arg(long, default_value = "loss")]
        y: String,
        #[arg(long, default_value = "training curve")]
        title: String,
        #[arg(long)]
        out_file: Option<PathBuf>,
    },
    /// Run collect-dataset → train-tl → train-translator → train-policy →
    /// eval with cached-stage skipping.
    RunPipeline,
    /// Print the fully resolved config.
    ShowConfig,
}

/// Gather every `--set` occurrence from the raw argument list, in the order
/// written. Clap propagates global args by *replacing* outer occurrences
/// with inner ones whenever the flag appears on both sides of a subcommand,
/// which silently drops the outer overrides from every `ArgMatches` level,
/// so the full list has to be rebuilt from the raw arguments. Later
/// occurrences are applied later and therefore win on conflicting keys.
fn collect_sets(args: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut out = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        if arg == "--set" {
            // Clap has already rejected a trailing `--set` without a value.
            if let Some(value) = it.next() {
                out.push(value);
            }
        } else if let Some(value) = arg.strip_prefix("--set=") {
            out.push(value.to_string());
        }
    }
    out
}

fn main() -> Result<()> {
    let matches = Cli::command().get_matches();
    let mut cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    cli.sets = collect_sets(std::env::args().skip(1));
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => Config::default(),
    };
    for spec in &cli.sets {
        apply_set(&mut cfg, spec)?;
    }
    if let Some(seed) = cli.seed {
        cfg.run.master_seed = seed;
    }
    run(cli, cfg)
}

fn run(cli: Cli, mut cfg: Config) -> Result<()> {
    let out_override = cli.out;
    match cli.cmd {
        Cmd::CollectDataset { n, split } => {
            if let Some(n) = n {
                cfg.corpus.dataset_n = n;
            }
            if let Some(s) = &split {
                cfg.corpus.split = parse_split(s)?;
            }
            let dir = prepare_run_dir(out_override.as_deref(), &cfg)?;
            let data = stage_collect_dataset(&cfg, &dir)?;
            println!(
                "wrote {} triplets to {}",
                data.len(),
                dir.join(pipeline::DATASET_FILE).display()
            );
        }
        Cmd::TrainTl { steps, dataset } => {
            if let Some(s) = steps {
                cfg.mlm.steps = s;
            }
            let dir = prepare_run_dir(out_override.as_deref(), &cfg)?;
            let data = read_dataset(&dir, dataset.as_deref())?;
            let model = stage_train_tl(&cfg, &dir, &data, |p| {
                println!("step {:>6}  loss {:.4}", p.step, p.loss);
            })?;
            println!(
                "saved generator ({} parameters) to {}",
                model.params.scalar_count(),
                dir.join(pipeline::TL_CKPT).display()
            );
        }
        Cmd::TrainTranslator { steps, dataset, tl_ckpt } => {
            if let Some(s) = steps {
                cfg.vae.steps = s;
            }
            let dir = prepare_run_dir(out_override.as_deref(), &cfg)?;
            let data = read_dataset(&dir, dataset.as_deref())?;
            let mlm = load_generator(&cfg, &dir, tl_ckpt.as_deref())?;
            stage_train_translator(&cfg, &dir, &data, &mlm, |p| {
                println!("step {:>6}  loss {:.4}", p.step, p.loss);
            })?;
            println!("saved translator to {}", dir.join(pipeline::TRANSLATOR_CKPT).display());
        }
        Cmd::TrainPolicy { method, steps, instructions, pattern_limit, tl_ckpt, translator_ckpt } => {
            if let Some(m) = &method {
                cfg.ppo.method = parse_method(m)?;
            }
            if let Some(s) = steps {
                cfg.ppo.total_steps = s;
            }
            if let Some(i) = instructions {
                cfg.ppo.instruction_count = i;
            }
            if let Some(p) = pattern_limit {
                cfg.ppo.pattern_limit = p;
            }
            let dir = prepare_run_dir(out_override.as_deref(), &cfg)?;
            let mlm = load_generator(&cfg, &dir, tl_ckpt.as_deref())?;
            let translator = load_translator_if_needed(&cfg, &dir, translator_ckpt.as_deref())?;
            stage_train_policy(&cfg, &dir, &mlm, translator, |p| {
                println!(
                    "steps {:>8}  return {:>7.3}  rollout success {:.3}{}",
                    p.env_steps,
                    p.mean_return,
                    p.rollout_success,
                    p.eval_success
                        .map(|s| format!("  eval success {s:.3}"))
                        .unwrap_or_default()
                );
            })?;
            println!("saved policy to {}", dir.join(pipeline::POLICY_CKPT).display());
        }
        Cmd::TrainHrl {
            abstraction,
            steps,
            policy_ckpt,
            tl_ckpt,
            translator_ckpt,
            eval_episodes,
        } => {
            if let Some(a) = &abstraction {
                cfg.hrl.abstraction = parse_abstraction(a)?;
            }
            if let Some(s) = steps {
                cfg.hrl.total_hl_steps = s;
            }
            let dir = prepare_run_dir(out_override.as_deref(), &cfg)?;
            let mlm = load_generator(&cfg, &dir, tl_ckpt.as_deref())?;
            let ifp = checkpoint::load(
                &policy_ckpt.unwrap_or_else(|| dir.join(pipeline::POLICY_CKPT)),
                &cfg,
            )?
            .into_policy()?;
            let translator = match ifp.method {
                PolicyMethod::Talar => {
                    Some(load_translator(&cfg, &dir, translator_ckpt.as_deref())?)
                }
                _ => None,
            };
            let mut cond = Conditioner::new(mlm.lm.clone(), translator);
            let layout = tasklang::generator::TlLayout::from_cfg(&cfg.tl);
            let mut hl = HlBundle::new(
                &cfg.hrl,
                layout,
                rng::derive(cfg.run.master_seed, "hl-init", 0),
            );
            let curve =
                train_hrl(&mut hl, &ifp, &mut cond, &cfg.env, &cfg.hrl, cfg.run.master_seed, |p| {
                    println!(
                        "hl steps {:>8}  reward {:>7.3}  satisfied at end {:.2}",
                        p.hl_steps, p.mean_reward, p.mean_final_count
                    );
                })?;
            write_curve(&dir.join(HRL_CURVE), &curve)?;
            checkpoint::save(
                &dir.join(HL_CKPT),
                &cfg,
                cfg.run.master_seed,
                cfg.hrl.total_hl_steps,
                CheckpointPayload::HighLevel(Box::new(hl.clone())),
            )?;
            let eval_seed = rng::derive(cfg.run.master_seed, "hrl-final-eval", 0);
            let trained = arrangement_score(
                &HlActor::Net { bundle: &hl, greedy: true },
                &ifp,
                &mut cond,
                &cfg.env,
                &cfg.hrl,
                eval_episodes,
                eval_seed,
            )?;
            let heads = hl.heads.clone();
            let random = arrangement_score(
                &HlActor::Random { heads: &heads },
                &ifp,
                &mut cond,
                &cfg.env,
                &cfg.hrl,
                eval_episodes,
                eval_seed,
            )?;
            let report = serde_json::json!({
                "abstraction": format!("{:?}", cfg.hrl.abstraction).to_lowercase(),
                "episodes": eval_episodes,
                "trained_mean_satisfied": trained,
                "random_mean_satisfied": random,
            });
            std::fs::write(dir.join(HRL_REPORT), serde_json::to_string_pretty(&report)?)?;
            println!(
                "trained {trained:.2} vs random {random:.2} satisfied constraints \
                 ({eval_episodes} episodes); report at {}",
                dir.join(HRL_REPORT).display()
            );
        }
        Cmd::Eval {
            policy_ckpt,
            policy,
            split,
            with_errors,
            episodes,
            seeds,
            tl_ckpt,
            translator_ckpt,
        } => {
            if let Some(s) = &split {
                cfg.eval.split = parse_split(s)?;
            }
            if with_errors {
                cfg.eval.with_errors = true;
            }
            if let Some(e) = episodes {
                cfg.eval.episodes = e;
            }
            let dir = prepare_run_dir(out_override.as_deref(), &cfg)?;
            let instructions = if cfg.ppo.instruction_count == 0 {
                all_instructions()
            } else {
                instruction_subset(cfg.ppo.instruction_count)
            };
            let seeds = if seeds.is_empty() {
                vec![rng::derive(cfg.run.master_seed, "cli-eval", 0)]
            } else {
                seeds
            };
            let mut reports = Vec::new();
            match policy.as_str() {
                "net" => {
                    let mlm = load_generator(&cfg, &dir, tl_ckpt.as_deref())?;
                    let bundle = checkpoint::load(
                        &policy_ckpt.unwrap_or_else(|| dir.join(pipeline::POLICY_CKPT)),
                        &cfg,
                    )?
                    .into_policy()?;
                    let translator = match bundle.method {
                        PolicyMethod::Talar => {
                            Some(load_translator(&cfg, &dir, translator_ckpt.as_deref())?)
                        }
                        _ => None,
                    };
                    let mut cond = Conditioner::new(mlm.lm.clone(), translator);
                    for &s in &seeds {
                        reports.push(evaluate_success(
                            &mut EvalPolicy::Net { bundle: &bundle, cond: &mut cond },
                            &cfg.env,
                            &cfg.eval,
                            &instructions,
                            s,
                        )?);
                    }
                }
                "scripted" => {
                    for &s in &seeds {
                        reports.push(evaluate_success(
                            &mut EvalPolicy::Scripted,
                            &cfg.env,
                            &cfg.eval,
                            &instructions,
                            s,
                        )?);
                    }
                }
                "random" => {
                    for &s in &seeds {
                        reports.push(evaluate_success(
                            &mut EvalPolicy::Random,
                            &cfg.env,
                            &cfg.eval,
                            &instructions,
                            s,
                        )?);
                    }
                }
                other => bail!("unknown policy kind {other} (net, scripted, random)"),
            }
            let rates: Vec<f64> = reports.iter().map(|r| r.success_rate).collect();
            let agg = aggregate_rates(&rates);
            for (s, r) in seeds.iter().zip(&reports) {
                println!(
                    "seed {s}: success {:.3} over {} episodes ({}, errors={})",
                    r.success_rate, r.episodes, r.split, r.with_errors
                );
            }
            println!("mean {:.3} ± {:.3} over {} seed(s)", agg.mean, agg.std, seeds.len());
            let payload = serde_json::json!({ "aggregate": agg, "reports": reports });
            std::fs::write(
                dir.join(pipeline::EVAL_REPORT),
                serde_json::to_string_pretty(&payload)?,
            )?;
            println!("report at {}", dir.join(pipeline::EVAL_REPORT).display());
        }
        Cmd::AnalyzePredicates { tl_ckpt, dataset, out_file } => {
            let dir = prepare_run_dir(out_override.as_deref(), &cfg)?;
            let mlm = load_generator(&cfg, &dir, tl_ckpt.as_deref())?;
            let data = read_dataset(&dir, dataset.as_deref())?;
            let rows = predicate_frequency(&mlm, &data)?;
            println!("predicate  fires  red    blue   green  cyan   purple");
            for r in &rows {
                if r.inactive {
                    println!("{:>9}  {:>5}  (never fires)", r.predicate, r.fires);
                } else {
                    println!(
                        "{:>9}  {:>5}  {:.3}  {:.3}  {:.3}  {:.3}  {:.3}",
                        r.predicate, r.fires, r.freq[0], r.freq[1], r.freq[2], r.freq[3],
                        r.freq[4]
                    );
                }
            }
            let out = out_file.unwrap_or_else(|| dir.join("predicate_freq.json"));
            std::fs::write(&out, serde_json::to_string_pretty(&rows)?)?;
            println!("table at {}", out.display());
        }
        Cmd::AnalyzeEmbeddings {
            provider,
            instructions,
            patterns,
            out_file,
            tl_ckpt,
            translator_ckpt,
        } => {
            let dir = prepare_run_dir(out_override.as_deref(), &cfg)?;
            let instrs = if instructions == 0 {
                all_instructions()
            } else {
                instruction_subset(instructions)
            };
            let pats = corpus::pattern_ids(parse_split(&patterns)?);
            let out = out_file.unwrap_or_else(|| dir.join(format!("embeddings_{provider}.jsonl")));
            let (rows, report) = match provider.as_str() {
                "translator" => {
                    let mlm = load_generator(&cfg, &dir, tl_ckpt.as_deref())?;
                    let tr = load_translator(&cfg, &dir, translator_ckpt.as_deref())?;
                    let mut cache = EmbeddingCache::new();
                    let mut encode = |nl: &str| {
                        let emb = cache.get(&mlm.lm, nl)?;
                        Ok(tr.translate(&emb).values)
                    };
                    let rows = export_embeddings(&mut encode, &instrs, &pats, &out)?;
                    let rep = paraphrase_consistency(&mut encode, true, &instrs, &pats)?;
                    (rows, rep)
                }
                "lm" => {
                    let mlm = load_generator(&cfg, &dir, tl_ckpt.as_deref())?;
                    let mut cache = EmbeddingCache::new();
                    let mut encode = |nl: &str| cache.get(&mlm.lm, nl);
                    let rows = export_embeddings(&mut encode, &instrs, &pats, &out)?;
                    let rep = paraphrase_consistency(&mut encode, false, &instrs, &pats)?;
                    (rows, rep)
                }
                "one-hot" => {
                    let registry = Registry::build();
                    let width = registry.len() + 1;
                    let mut encode = move |nl: &str| {
                        let mut v = vec![0.0; width];
                        v[registry.lookup(nl).unwrap_or(width - 1)] = 1.0;
                        Ok(v)
                    };
                    let rows = export_embeddings(&mut encode, &instrs, &pats, &out)?;
                    let rep = paraphrase_consistency(&mut encode, true, &instrs, &pats)?;
                    (rows, rep)
                }
                other => bail!("unknown provider {other} (translator, lm, one-hot)"),
            };
            println!(
                "wrote {rows} rows to {}; paraphrase consistency {:.3}{}{}",
                out.display(),
                report.exact_fraction,
                report
                    .silhouette
                    .map(|s| format!(", silhouette {s:.3}"))
                    .unwrap_or_default(),
                if report.degenerate { " (degenerate encodings)" } else { "" }
            );
        }
        Cmd::Plot { input, x, y, title, out_file } => {
            let dir = prepare_run_dir(out_override.as_deref(), &cfg)?;
            let inputs: Vec<(PathBuf, String)> = input
                .iter()
                .map(|spec| {
                    let (path, label) = match spec.rsplit_once(':') {
                        Some((p, l)) if !l.contains('/') && !l.is_empty() => {
                            (PathBuf::from(p), l.to_string())
                        }
                        _ => {
                            let p = PathBuf::from(spec);
                            let label = p
                                .file_stem()
                                .map(|s| s.to_string_lossy().into_owned())
                                .unwrap_or_else(|| spec.clone());
                            (p, label)
                        }
                    };
                    (path, label)
                })
                .collect();
            let out = out_file.unwrap_or_else(|| dir.join("plot.svg"));
            plot_files(&inputs, &x, &y, &title, &out)?;
            println!("wrote {}", out.display());
        }
        Cmd::RunPipeline => {
            let dir = prepare_run_dir(out_override.as_deref(), &cfg)?;
            let report = run_pipeline(&cfg, &dir, |line| println!("{line}"))?;
            let executed: Vec<&str> = report
                .ran
                .iter()
                .filter_map(|(k, &v)| v.then_some(k.as_str()))
                .collect();
            if executed.is_empty() {
                println!("all stages cached; artifacts in {}", dir.display());
            } else {
                println!("ran {}; artifacts in {}", executed.join(", "), dir.display());
            }
        }
        Cmd::ShowConfig => {
            cfg.validate()?;
            print!("{}", toml::to_string_pretty(&cfg)?);
        }
    }
    Ok(())
}

/// Applies a dotted-path override, keeping the original value's TOML type.
fn apply_set(cfg: &mut Config, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .with_context(|| format!("--set wants KEY=VALUE, got {spec}"))?;
    let mut tree = toml::Value::try_from(&*cfg).context("serializing config")?;
    let parts: Vec<&str> = path.split('.').collect();
    let mut cur = &mut tree;
    for part in &parts[..parts.len().saturating_sub(1)] {
        cur = cur
            .get_mut(part)
            .with_context(|| format!("unknown config section `{part}` in {path}"))?;
    }
    let last = *parts.last().context("empty --set key")?;
    let table = cur
        .as_table_mut()
        .with_context(|| format!("{path} does not address a config table"))?;
    let old = table
        .get(last)
        .with_context(|| format!("unknown config key {path}"))?;
    let new = parse_as(old, raw).with_context(|| format!("parsing value for {path}"))?;
    table.insert(last.to_string(), new);
    *cfg = tree.try_into().context("config rejected the override")?;
    Ok(())
}

fn parse_as(old: &toml::Value, raw: &str) -> Result<toml::Value> {
    Ok(match old {
        toml::Value::Integer(_) => toml::Value::Integer(raw.parse()?),
        toml::Value::Float(_) => toml::Value::Float(raw.parse()?),
        toml::Value::Boolean(_) => toml::Value::Boolean(raw.parse()?),
        toml::Value::String(_) => toml::Value::String(raw.to_string()),
        toml::Value::Array(_) => toml::Value::Array(
            raw.split(',')
                .filter(|s| !s.is_empty())
                .map(|s| -> Result<toml::Value> {
                    Ok(match s.parse::<i64>() {
                        Ok(i) => toml::Value::Integer(i),
                        Err(_) => toml::Value::String(s.to_string()),
                    })
                })
                .collect::<Result<_>>()?,
        ),
        other => bail!("cannot override a {} value", other.type_str()),
    })
}

fn parse_split(s: &str) -> Result<PatternSplit> {
    Ok(match s {
        "training" => PatternSplit::Training,
        "testing" => PatternSplit::Testing,
        "all" => PatternSplit::All,
        other => bail!("unknown split {other} (training, testing, all)"),
    })
}

fn parse_method(s: &str) -> Result<PolicyMethod> {
    Ok(match s {
        "talar" => PolicyMethod::Talar,
        "bert-binary" => PolicyMethod::BertBinary,
        "bert-continuous" => PolicyMethod::BertContinuous,
        "one-hot" => PolicyMethod::OneHot,
        other => bail!("unknown method {other} (talar, bert-binary, bert-continuous, one-hot)"),
    })
}

fn parse_abstraction(s: &str) -> Result<Abstraction> {
    Ok(match s {
        "tl" => Abstraction::Tl,
        "hal" => Abstraction::Hal,
        other => bail!("unknown abstraction {other} (tl, hal)"),
    })
}

/// Resolves the run directory, creates it, and drops the resolved config
/// beside the outputs.
fn prepare_run_dir(out: Option<&Path>, cfg: &Config) -> Result<PathBuf> {
    cfg.validate()?;
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => {
            let root = std::env::var("TASKLANG_OUT_ROOT")
                .unwrap_or_else(|_| cfg.run.out_root.clone());
            PathBuf::from(root).join(format!("seed-{}", cfg.run.master_seed))
        }
    };
    std::fs::create_dir_all(&dir)?;
    std::fs::write(
        dir.join(pipeline::RESOLVED_CONFIG_FILE),
        toml::to_string_pretty(cfg)?,
    )?;
    Ok(dir)
}

fn read_dataset(dir: &Path, explicit: Option<&Path>) -> Result<Vec<corpus::Triplet>> {
    let path = explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dir.join(pipeline::DATASET_FILE));
    corpus::read_jsonl(&path)
        .with_context(|| format!("reading dataset {} (run collect-dataset first?)", path.display()))
}

fn load_generator(cfg: &Config, dir: &Path, explicit: Option<&Path>) -> Result<MlmModel> {
    let path =
        explicit.map(Path::to_path_buf).unwrap_or_else(|| dir.join(pipeline::TL_CKPT));
    Ok(checkpoint::load(&path, cfg)
        .with_context(|| format!("loading generator {} (run train-tl first?)", path.display()))?
        .into_generator()?)
}

fn load_translator(cfg: &Config, dir: &Path, explicit: Option<&Path>) -> Result<TranslatorModel> {
    let path = explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dir.join(pipeline::TRANSLATOR_CKPT));
    Ok(checkpoint::load(&path, cfg)
        .with_context(|| {
            format!("loading translator {} (run train-translator first?)", path.display())
        })?
        .into_translator()?)
}

fn load_translator_if_needed(
    cfg: &Config,
    dir: &Path,
    explicit: Option<&Path>,
) -> Result<Option<TranslatorModel>> {
    match cfg.ppo.method {
        PolicyMethod::Talar => Ok(Some(load_translator(cfg, dir, explicit)?)),
        _ => Ok(None),
    }
}


#[cfg(test)]
mod tests {
    use super::collect_sets;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn collect_sets_keeps_occurrences_on_both_sides_of_a_subcommand() {
        let got = collect_sets(strs(&[
            "--set",
            "a.b=1",
            "--seed",
            "7",
            "go",
            "--set=c.d=2",
            "--set",
            "e.f=3",
        ]));
        assert_eq!(got, strs(&["a.b=1", "c.d=2", "e.f=3"]));
    }

    #[test]
    fn collect_sets_handles_equals_form_and_empty_input() {
        assert_eq!(collect_sets(strs(&["--set=x=1"])), strs(&["x=1"]));
        assert!(collect_sets(strs(&[])).is_empty());
        // Non --set arguments pass through untouched.
        assert!(collect_sets(strs(&["show-config", "--out", "d"])).is_empty());
    }
}
