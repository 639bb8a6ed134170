use std::collections::HashSet;
use std::time::Instant;

use tasklang::config::{Config, PatternSplit};
use tasklang::corpus::collect_task_dataset;
use tasklang::eval::predicate_frequency;
use tasklang::generator::{masked_accuracy, train_mlm, MlmModel};
use tasklang::lang::{LmBackend, RecurrentLm, Vocab};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let frac: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.7);
    let steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(4000);
    let tau: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let lr: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(3e-4);
    let seed: u64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0x6E);
    let batch: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(64);
    let drop: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(0.0);

    let mut cfg = Config::default();
    cfg.lm.d_lm = 64;
    cfg.tl.tau = tau;
    cfg.mlm.steps = steps;
    cfg.mlm.batch_size = batch;
    cfg.mlm.noise_anneal_frac = frac;
    cfg.mlm.lr = lr;
    cfg.mlm.arg_dropout = drop;

    let data = collect_task_dataset(&cfg.env, 10_000, 0xD5, PatternSplit::Training).unwrap();
    let lm = LmBackend::Recurrent(RecurrentLm::new(Vocab::project(), cfg.lm.d_lm, 2));
    let mut gen = MlmModel::new(&cfg.tl, lm, seed);

    let t = Instant::now();
    train_mlm(&mut gen, &data, &cfg.mlm, 0x7A, |p| {
        if p.step % 1000 == 0 {
            eprintln!("  step {} loss {:.3}", p.step, p.loss);
        }
    })
    .unwrap();
    let dt = t.elapsed().as_secs_f64();

    let acc_tl = masked_accuracy(&gen, &data, 600, 101).unwrap();
    let mut zeroed = gen.clone();
    zeroed.zero_tl = true;
    let acc_z = masked_accuracy(&zeroed, &data, 600, 101).unwrap();

    let mut distinct = HashSet::new();
    for t in data.iter().take(2000) {
        let tl = gen.generate(&t.s, &t.s_prime);
        let key: Vec<u8> = tl.values.iter().map(|&v| v as u8).collect();
        distinct.insert(key);
    }

    println!(
        "frac {frac} steps {steps} tau {tau} lr {lr} seed {seed} batch {batch} drop {drop}: {dt:.0}s gap {:+.1} pts (tl {acc_tl:.3} zero {acc_z:.3}) distinct TLs {}",
        (acc_tl - acc_z) * 100.0,
        distinct.len()
    );

    // Destination-, mover-, and direction-conditional fire rates per bit.
    let layout = tasklang::generator::TlLayout::from_cfg(&cfg.tl);
    let n_bits = layout.n_pm * layout.n_pn;
    let mut dest = vec![[0usize; 5]; n_bits];
    let mut mover = vec![[0usize; 5]; n_bits];
    let mut dir = vec![[0usize; 4]; n_bits];
    let mut fires = vec![0usize; n_bits];
    for t in &data {
        let tl = gen.generate(&t.s, &t.s_prime);
        for pm in 0..layout.n_pm {
            for j in 0..layout.n_pn {
                let k = pm * layout.n_pn + j;
                if tl.pred_bit(&layout, pm, j) {
                    fires[k] += 1;
                    dest[k][t.instruction.destination] += 1;
                    mover[k][t.instruction.mover] += 1;
                    dir[k][t.instruction.direction.index()] += 1;
                }
            }
        }
    }
    let mode = |c: &[usize]| {
        let s: usize = c.iter().sum();
        if s == 0 { 0.0 } else { *c.iter().max().unwrap() as f64 / s as f64 }
    };
    for k in 0..n_bits {
        println!(
            "  bit {k}: fires {:.2} dest-mode {:.3} mover-mode {:.3} dir-mode {:.3}",
            fires[k] as f64 / data.len() as f64,
            mode(&dest[k]),
            mode(&mover[k]),
            mode(&dir[k])
        );
    }
    // Alignment of each argument group with the instruction attributes:
    // average per-class mode of P(arg index | attribute), i.e. 1.0 when the
    // group is a deterministic function of that attribute.
    let n_groups = layout.n_pm * layout.n_a;
    let mut by_dest = vec![[[0usize; 5]; 5]; n_groups];
    let mut by_mover = vec![[[0usize; 5]; 5]; n_groups];
    let mut by_dir = vec![[[0usize; 5]; 4]; n_groups];
    for t in &data {
        let tl = gen.generate(&t.s, &t.s_prime);
        for pm in 0..layout.n_pm {
            for a in 0..layout.n_a {
                let g = pm * layout.n_a + a;
                let idx = tl.arg_index(&layout, pm, a);
                by_dest[g][t.instruction.destination][idx] += 1;
                by_mover[g][t.instruction.mover][idx] += 1;
                by_dir[g][t.instruction.direction.index()][idx] += 1;
            }
        }
    }
    let align = |rows: &[[usize; 5]]| {
        let mut acc = 0.0;
        let mut n = 0;
        for r in rows {
            let s: usize = r.iter().sum();
            if s > 0 {
                acc += *r.iter().max().unwrap() as f64 / s as f64;
                n += 1;
            }
        }
        acc / n as f64
    };
    for g in 0..n_groups {
        println!(
            "  arg {g}: dest-align {:.3} mover-align {:.3} dir-align {:.3}",
            align(&by_dest[g]),
            align(&by_mover[g]),
            align(&by_dir[g])
        );
    }
    let _ = predicate_frequency(&gen, &data).unwrap();
}
