use std::time::Instant;

use tasklang::config::Config;
use tasklang::corpus::collect_task_dataset;
use tasklang::generator::{masked_accuracy, train_mlm, MlmModel};
use tasklang::lang::{LmBackend, RecurrentLm, Vocab};
use tasklang::policy::{train_ifp, Conditioner, PolicyBundle};
use tasklang::translator::TranslatorModel;

fn main() {
    let mut cfg = Config::default();
    cfg.lm.d_lm = 64;

    let t0 = Instant::now();
    let data = collect_task_dataset(&cfg.env, 10_000, 7, cfg.corpus.split).unwrap();
    println!("dataset 10k: {:.1}s", t0.elapsed().as_secs_f64());

    // MLM probe: short run to time steps/sec.
    let lm = LmBackend::Recurrent(RecurrentLm::new(Vocab::project(), cfg.lm.d_lm, 2));
    let mut model = MlmModel::new(&cfg.tl, lm, 11);
    cfg.mlm.steps = 100;
    cfg.mlm.batch_size = 64;
    let t0 = Instant::now();
    train_mlm(&mut model, &data, &cfg.mlm, 13, |_| {}).unwrap();
    let mlm_dt = t0.elapsed().as_secs_f64();
    println!("mlm 100 steps @bs64 d64: {mlm_dt:.1}s ({:.1} ms/step)", mlm_dt * 10.0);

    let t0 = Instant::now();
    let acc = masked_accuracy(&model, &data, 400, 17).unwrap();
    println!("masked_accuracy 400: {:.1}s (acc {acc:.3})", t0.elapsed().as_secs_f64());

    // IFP probe: 20k steps, talar conditioning via untrained translator.
    let translator = TranslatorModel::new(&cfg.vae, &cfg.tl, cfg.lm.d_lm, 19);
    let lm2 = LmBackend::Recurrent(RecurrentLm::new(Vocab::project(), cfg.lm.d_lm, 2));
    let mut conder = Conditioner::new(lm2, Some(translator));
    let shape = tasklang::translator::TlShape::from_cfg(&cfg.tl);
    let mut bundle = PolicyBundle::new(
        tasklang::config::PolicyMethod::Talar,
        shape.out_len,
        cfg.lm.d_lm,
        0,
        23,
    );
    cfg.ppo.total_steps = 20_000;
    cfg.ppo.instruction_count = 20;
    cfg.ppo.eval_every = 0;
    let t0 = Instant::now();
    train_ifp(&mut bundle, &mut conder, &cfg.env, &cfg.ppo, 29, |_| {}).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "ifp talar 20k steps: {dt:.1}s -> 500k est {:.1} min",
        dt * 25.0 / 60.0
    );
}
