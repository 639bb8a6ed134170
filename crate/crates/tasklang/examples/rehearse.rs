use std::time::Instant;

use tasklang::config::{Config, PatternSplit, PolicyMethod};
use tasklang::corpus::{collect_task_dataset, pattern_ids, Registry};
use tasklang::env::instruction_subset;
use tasklang::eval::{mean_silhouette, paraphrase_consistency, predicate_frequency};
use tasklang::generator::{masked_accuracy, train_mlm, MlmModel};
use tasklang::lang::{EmbeddingCache, LmBackend, RecurrentLm, Vocab};
use tasklang::policy::{train_ifp, Conditioner, PolicyBundle, CondProvider};
use tasklang::policy::success_rate;
use tasklang::translator::{build_pairs, slot_agreement, train_translator, TranslatorModel};

fn base_cfg() -> Config {
    let drop: f64 =
        std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(0.0);
    let mut cfg = Config::default();
    cfg.lm.d_lm = 64;
    cfg.mlm.steps = 10_000;
    cfg.mlm.batch_size = 64;
    cfg.mlm.lr = 1e-3;
    cfg.mlm.noise_anneal_frac = 0.4;
    cfg.mlm.arg_dropout = drop;
    cfg.vae.steps = 4000;
    cfg.vae.batch_size = 128;
    cfg.ppo.total_steps = 500_000;
    cfg.ppo.instruction_count = 20;
    cfg.ppo.eval_every = 0;
    cfg
}

fn lm(cfg: &Config) -> LmBackend {
    LmBackend::Recurrent(RecurrentLm::new(Vocab::project(), cfg.lm.d_lm, 2))
}

fn main() {
    let cfg = base_cfg();
    let seed = 0u64;

    let t = Instant::now();
    let data = collect_task_dataset(&cfg.env, 10_000, seed ^ 0xD5, PatternSplit::Training).unwrap();
    println!("[{:6.1}s] dataset 10k", t.elapsed().as_secs_f64());

    // --- generator (MLM) ---
    let t = Instant::now();
    let mut gen = MlmModel::new(&cfg.tl, lm(&cfg), seed ^ 0x6E);
    train_mlm(&mut gen, &data, &cfg.mlm, seed ^ 0x7A, |p| {
        if p.step % 500 == 0 {
            eprintln!("  mlm step {} loss {:.3}", p.step, p.loss);
        }
    })
    .unwrap();
    let acc_tl = masked_accuracy(&gen, &data, 600, 101).unwrap();
    let mut zeroed = gen.clone();
    zeroed.zero_tl = true;
    let acc_z = masked_accuracy(&zeroed, &data, 600, 101).unwrap();
    println!(
        "[{:6.1}s] mlm: acc(tl) {:.3} acc(zero) {:.3} gap {:+.1} pts",
        t.elapsed().as_secs_f64(),
        acc_tl,
        acc_z,
        (acc_tl - acc_z) * 100.0
    );

    // Predicate interpretability (criterion 7 precheck).
    let rows = predicate_frequency(&gen, &data).unwrap();
    for r in &rows {
        println!(
            "  pred {}: inactive={} mode {:.3} freq {:?}",
            r.predicate,
            r.inactive,
            r.freq.iter().cloned().fold(0.0, f64::max),
            r.freq.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
    let untrained = MlmModel::new(&cfg.tl, lm(&cfg), seed ^ 0x55);
    let urows = predicate_frequency(&untrained, &data).unwrap();
    for r in &urows {
        println!(
            "  untrained pred {}: inactive={} spread {:.3}",
            r.predicate,
            r.inactive,
            r.freq.iter().cloned().fold(f64::MIN, f64::max)
                - r.freq.iter().cloned().fold(f64::MAX, f64::min)
        );
    }

    // --- translator ---
    let t = Instant::now();
    let mut cache = EmbeddingCache::default();
    let pairs = build_pairs(&data, &gen, &mut cache).unwrap();
    let mut translator = TranslatorModel::new(&cfg.vae, &cfg.tl, cfg.lm.d_lm, seed ^ 0x3C);
    train_translator(&mut translator, &pairs, &cfg.vae, seed ^ 0x91, |p| {
        if p.step % 1000 == 0 {
            eprintln!("  vae step {} loss {:.3}", p.step, p.loss);
        }
    })
    .unwrap();
    let holdout_data =
        collect_task_dataset(&cfg.env, 1500, seed ^ 0xB7, PatternSplit::Training).unwrap();
    let holdout = build_pairs(&holdout_data, &gen, &mut cache).unwrap();
    let agree = slot_agreement(&translator, &holdout).unwrap();
    println!("[{:6.1}s] translator: held-out slot agreement {:.3}", t.elapsed().as_secs_f64(), agree);

    let sample = instruction_subset(10);
    let train_pats = pattern_ids(PatternSplit::Training);
    let test_pats = pattern_ids(PatternSplit::Testing);
    let lm_enc = lm(&cfg);
    let mut cache2 = EmbeddingCache::default();
    let mut enc = |nl: &str| -> tasklang::error::Result<Vec<f64>> {
        let emb = cache2.get(&lm_enc, nl)?;
        Ok(translator.translate(&emb).values)
    };
    let cons_train = paraphrase_consistency(&mut enc, true, &sample, &train_pats).unwrap();
    let cons_test = paraphrase_consistency(&mut enc, true, &sample, &test_pats).unwrap();
    println!(
        "  consistency train {:.3} test {:.3}",
        cons_train.exact_fraction, cons_test.exact_fraction
    );

    // --- IFP runs (criterion 5, seed 0 only as rehearsal) ---
    let registry = Registry::build();
    let shape = tasklang::translator::TlShape::from_cfg(&cfg.tl);
    let run = |method: PolicyMethod, pattern_limit: usize, tag: &str| {
        let t = Instant::now();
        let mut c = cfg.clone();
        c.ppo.method = method;
        c.ppo.pattern_limit = pattern_limit;
        let mut bundle = PolicyBundle::new(
            method,
            shape.out_len,
            c.lm.d_lm,
            registry.len(),
            rng_seed(method, pattern_limit),
        );
        let mut conder = Conditioner::new(lm(&c), Some(translator.clone()));
        train_ifp(&mut bundle, &mut conder, &c.env, &c.ppo, seed ^ 0x11, |_| {}).unwrap();
        let instrs = instruction_subset(c.ppo.instruction_count);
        let tr =
            success_rate(&bundle, &mut conder, &c.env, &instrs, &train_pats, 40, 9000).unwrap();
        let te = success_rate(&bundle, &mut conder, &c.env, &instrs, &test_pats, 40, 9001).unwrap();
        println!(
            "[{:6.1}s] {tag}: train {tr:.3} test {te:.3}",
            t.elapsed().as_secs_f64()
        );
        bundle
    };
    let talar = run(PolicyMethod::Talar, 0, "talar  p9");
    let bc = run(PolicyMethod::BertContinuous, 0, "bontin p9");
    let _oh = run(PolicyMethod::OneHot, 0, "onehot p9");
    let _t1 = run(PolicyMethod::Talar, 1, "talar  p1");
    let _b1 = run(PolicyMethod::BertContinuous, 1, "bontin p1");

    // Bert-continuous encoder silhouette on testing patterns (criterion 4 comparison).
    if let CondProvider::BertContinuous { net } = &bc.provider {
        let mut cache3 = EmbeddingCache::default();
        let lm_enc2 = lm(&cfg);
        let mut encb = |nl: &str| -> tasklang::error::Result<Vec<f64>> {
            let emb = cache3.get(&lm_enc2, nl)?;
            Ok(net.forward_plain(&bc.pi_params, &tasklang::nn::Tensor::from_vec(1, emb.len(), emb))
                .data)
        };
        let mut groups = Vec::new();
        for i in &sample {
            let mut g = Vec::new();
            for &p in &test_pats {
                let nl = tasklang::corpus::render_nl(i, p).unwrap();
                g.push(encb(&nl).unwrap());
            }
            groups.push(g);
        }
        let sil = mean_silhouette(&groups);
        println!("  bert-continuous test silhouette {sil:.3} vs talar exact {:.3}", {
            let mut enc2 = |nl: &str| -> tasklang::error::Result<Vec<f64>> {
                let emb = cache2.get(&lm_enc, nl)?;
                Ok(translator.translate(&emb).values)
            };
            paraphrase_consistency(&mut enc2, true, &sample, &test_pats)
                .unwrap()
                .exact_fraction
        });
    }

    // --- HRL probe timing: 2000 HL decisions with the talar IFP ---
    let t = Instant::now();
    let mut hc = cfg.clone();
    hc.hrl.total_hl_steps = 2000;
    let layout = tasklang::generator::TlLayout::from_cfg(&cfg.tl);
    let mut hl = tasklang::policy::HlBundle::new(&hc.hrl, layout, seed ^ 0x77);
    let mut conder = Conditioner::new(lm(&cfg), Some(translator.clone()));
    tasklang::policy::train_hrl(&mut hl, &talar, &mut conder, &cfg.env, &hc.hrl, seed ^ 0x78, |_| {})
        .unwrap();
    let dt = t.elapsed().as_secs_f64();
    println!(
        "[{dt:6.1}s] hrl 2000 decisions -> 200k est {:.1} min",
        dt * 100.0 / 60.0
    );
}

fn rng_seed(method: PolicyMethod, pattern_limit: usize) -> u64 {
    let m = match method {
        PolicyMethod::Talar => 1,
        PolicyMethod::BertBinary => 2,
        PolicyMethod::BertContinuous => 3,
        PolicyMethod::OneHot => 4,
    };
    m * 1000 + pattern_limit as u64
}
