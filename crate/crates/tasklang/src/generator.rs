//! Task-language generator. Maps a state transition (s, s') to a discrete
//! predicate-structured vector: per module, a block of predicate truth bits
//! followed by one-hot argument selections. Trained end to end through
//! Gumbel-Softmax by reconstructing masked tokens of the describing sentence,
//! so the vector is forced to carry exactly the information language carries.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::config::{MlmConfig, TlConfig, TlRep};
use crate::corpus::Triplet;
use crate::env::OBS_DIM;
use crate::error::{Error, Result};
use crate::lang::{mask_tokens, pad_batch, tokenize, LmBackend, MaskPlan, TokenSeq, MASK_COUNT};
use crate::nn::{
    bernoulli_st, gumbel_softmax_soft, gumbel_softmax_st, hard_bits, Act, Adam, Mlp, Params, Tape,
    Tensor, Var,
};
use crate::rng;

/// Shape of the task-language vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlLayout {
    pub n_pm: usize,
    pub n_pn: usize,
    pub n_a: usize,
    pub arg_dim: usize,
}

impl TlLayout {
    pub fn from_cfg(cfg: &TlConfig) -> TlLayout {
        TlLayout { n_pm: cfg.n_pm, n_pn: cfg.n_pn, n_a: cfg.n_a, arg_dim: cfg.arg_dim }
    }

    /// Width of one module block: predicate bits then argument one-hots.
    pub fn pm_len(&self) -> usize {
        self.n_pn + self.n_a * self.arg_dim
    }

    pub fn total_len(&self) -> usize {
        self.n_pm * self.pm_len()
    }

    /// Column of predicate bit `j` in module `pm`.
    pub fn pred_col(&self, pm: usize, j: usize) -> usize {
        debug_assert!(pm < self.n_pm && j < self.n_pn);
        pm * self.pm_len() + j
    }

    /// Column range of argument `a`'s one-hot in module `pm`.
    pub fn arg_cols(&self, pm: usize, a: usize) -> std::ops::Range<usize> {
        debug_assert!(pm < self.n_pm && a < self.n_a);
        let start = pm * self.pm_len() + self.n_pn + a * self.arg_dim;
        start..start + self.arg_dim
    }
}

/// A concrete task-language vector. For the predicate representation every
/// entry is 0 or 1 with one-hot argument groups; the flat binary ablation has
/// free 0/1 entries; the continuous ablation holds raw reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLanguage {
    pub values: Vec<f64>,
}

impl TaskLanguage {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn pred_bit(&self, layout: &TlLayout, pm: usize, j: usize) -> bool {
        self.values[layout.pred_col(pm, j)] > 0.5
    }

    pub fn arg_index(&self, layout: &TlLayout, pm: usize, a: usize) -> usize {
        let r = layout.arg_cols(pm, a);
        let slice = &self.values[r];
        let mut best = 0;
        for (i, v) in slice.iter().enumerate() {
            if *v > slice[best] {
                best = i;
            }
        }
        best
    }

    /// Checks predicate-representation invariants: binary entries and exactly
    /// one active slot per argument group.
    pub fn validate_predicate(&self, layout: &TlLayout) -> Result<()> {
        if self.values.len() != layout.total_len() {
            return Err(Error::Config(format!(
                "task language has {} entries, layout wants {}",
                self.values.len(),
                layout.total_len()
            )));
        }
        for v in &self.values {
            if *v != 0.0 && *v != 1.0 {
                return Err(Error::Config(format!("non-binary task-language entry {v}")));
            }
        }
        for pm in 0..layout.n_pm {
            for a in 0..layout.n_a {
                let ones: f64 = self.values[layout.arg_cols(pm, a)].iter().sum();
                if ones != 1.0 {
                    return Err(Error::Config(format!(
                        "argument group ({pm}, {a}) has {ones} active slots"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Forward mode for training-time generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GenMode {
    /// Straight-through: hard one-hot forward, tempered-softmax backward.
    /// `noise_scale` multiplies the sampling noise; 1.0 is the standard
    /// Gumbel/Bernoulli draw, 0.0 makes the hard samples deterministic
    /// argmax/threshold decisions (matching evaluation-mode generation).
    /// `arg_dropout` is the per-sample probability that the reconstruction
    /// head sees an argument group zeroed out during training, which forces
    /// the predicate bits to carry object identity redundantly instead of
    /// leaving it to the argument groups alone; it has no effect on the
    /// generator forward itself (and none at all for representations without
    /// argument groups).
    Train { noise_scale: f64, arg_dropout: f64 },
    /// Fully relaxed forward, used by gradient probes.
    SoftProbe,
}

/// Predicate-structured generator. Argument networks are per (module, slot);
/// predicate networks are shared across modules by construction: the same
/// parameter tensors score every module's block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TlGenerator {
    pub layout: TlLayout,
    pub tau: f64,
    pub(crate) arg_nets: Vec<Mlp>,
    pub(crate) pred_nets: Vec<Mlp>,
}

const NET_HIDDEN: usize = 128;

impl TlGenerator {
    pub fn new(params: &mut Params, cfg: &TlConfig, rng: &mut ChaCha12Rng) -> TlGenerator {
        let layout = TlLayout::from_cfg(cfg);
        let x_dim = 2 * OBS_DIM;
        let mut arg_nets = Vec::new();
        for pm in 0..layout.n_pm {
            for a in 0..layout.n_a {
                arg_nets.push(Mlp::new(
                    params,
                    &format!("arg.{pm}.{a}"),
                    &[x_dim, NET_HIDDEN, NET_HIDDEN, layout.arg_dim],
                    Act::Relu,
                    rng,
                ));
            }
        }
        let mut pred_nets = Vec::new();
        for j in 0..layout.n_pn {
            pred_nets.push(Mlp::new(
                params,
                &format!("pred.{j}"),
                &[x_dim + layout.n_a * layout.arg_dim, NET_HIDDEN, NET_HIDDEN, 2],
                Act::Relu,
                rng,
            ));
        }
        TlGenerator { layout, tau: cfg.tau, arg_nets, pred_nets }
    }

    /// Differentiable batched forward. `x` is B x 2*OBS_DIM. Gumbel noise is
    /// drawn from `noise_rng`, so cloning the RNG state reproduces the exact
    /// forward (which is what finite-difference probes need).
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        noise_rng: &mut ChaCha12Rng,
        mode: GenMode,
    ) -> Var {
        let b = tape.value(x).rows;
        let mut out: Option<Var> = None;
        for pm in 0..self.layout.n_pm {
            let mut args: Option<Var> = None;
            for a in 0..self.layout.n_a {
                let logits = self.arg_nets[pm * self.layout.n_a + a].forward(tape, vars, x);
                let noise = gumbel_tensor(b, self.layout.arg_dim, noise_rng);
                let one_hot = match mode {
                    GenMode::Train { noise_scale, .. } => {
                        let noise = noise.scaled(noise_scale);
                        gumbel_softmax_st(tape, logits, &noise, self.tau).0
                    }
                    GenMode::SoftProbe => gumbel_softmax_soft(tape, logits, &noise, self.tau),
                };
                args = Some(match args {
                    None => one_hot,
                    Some(prev) => tape.concat_cols(prev, one_hot),
                });
            }
            let args = args.expect("n_a >= 1");
            let pred_in = tape.concat_cols(x, args);
            let mut bits: Option<Var> = None;
            for j in 0..self.layout.n_pn {
                let logits = self.pred_nets[j].forward(tape, vars, pred_in);
                let noise = gumbel_tensor(b, 2, noise_rng);
                let pair = match mode {
                    GenMode::Train { noise_scale, .. } => {
                        let noise = noise.scaled(noise_scale);
                        gumbel_softmax_st(tape, logits, &noise, self.tau).0
                    }
                    GenMode::SoftProbe => gumbel_softmax_soft(tape, logits, &noise, self.tau),
                };
                // Column 1 of the two-way choice is the truth bit.
                let bit = tape.slice_cols(pair, 1, 2);
                bits = Some(match bits {
                    None => bit,
                    Some(prev) => tape.concat_cols(prev, bit),
                });
            }
            let block = tape.concat_cols(bits.expect("n_pn >= 1"), args);
            out = Some(match out {
                None => block,
                Some(prev) => tape.concat_cols(prev, block),
            });
        }
        out.expect("n_pm >= 1")
    }

    /// Evaluation-mode argument one-hots for one module, flattened.
    fn eval_args(&self, params: &Params, x: &Tensor, pm: usize) -> Vec<f64> {
        let mut args_flat = Vec::with_capacity(self.layout.n_a * self.layout.arg_dim);
        for a in 0..self.layout.n_a {
            let logits = self.arg_nets[pm * self.layout.n_a + a].forward_plain(params, x);
            let mut one_hot = vec![0.0; self.layout.arg_dim];
            one_hot[logits.argmax_row(0)] = 1.0;
            args_flat.extend_from_slice(&one_hot);
        }
        args_flat
    }

    fn pred_input(&self, x: &Tensor, args_flat: &[f64]) -> Tensor {
        let mut data = x.data.clone();
        data.extend_from_slice(args_flat);
        Tensor::from_vec(1, 2 * OBS_DIM + args_flat.len(), data)
    }

    /// Deterministic evaluation-mode generation: argmax everywhere, no noise.
    pub fn generate(&self, params: &Params, s: &[f64], s_prime: &[f64]) -> TaskLanguage {
        let x = state_pair(s, s_prime);
        let mut values = Vec::with_capacity(self.layout.total_len());
        for pm in 0..self.layout.n_pm {
            let args_flat = self.eval_args(params, &x, pm);
            let pred_in = self.pred_input(&x, &args_flat);
            for j in 0..self.layout.n_pn {
                let logits = self.pred_nets[j].forward_plain(params, &pred_in);
                values.push(if logits.at(0, 1) > logits.at(0, 0) { 1.0 } else { 0.0 });
            }
            values.extend_from_slice(&args_flat);
        }
        TaskLanguage { values }
    }

    /// Evaluation-mode predicate decision margins (true minus false logit),
    /// module-major: entry pm * n_pn + j belongs to predicate j of module pm.
    /// The bit in the task language is the sign of the margin.
    pub fn pred_margins(&self, params: &Params, s: &[f64], s_prime: &[f64]) -> Vec<f64> {
        let x = state_pair(s, s_prime);
        let mut out = Vec::with_capacity(self.layout.n_pm * self.layout.n_pn);
        for pm in 0..self.layout.n_pm {
            let args_flat = self.eval_args(params, &x, pm);
            let pred_in = self.pred_input(&x, &args_flat);
            for j in 0..self.layout.n_pn {
                let logits = self.pred_nets[j].forward_plain(params, &pred_in);
                out.push(logits.at(0, 1) - logits.at(0, 0));
            }
        }
        out
    }
}

fn gumbel_tensor(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> Tensor {
    let mut t = Tensor::zeros(rows, cols);
    for v in &mut t.data {
        *v = rng::gumbel(rng);
    }
    t
}

fn uniform_tensor(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> Tensor {
    let mut t = Tensor::zeros(rows, cols);
    for v in &mut t.data {
        *v = rng::uniform_open(rng);
    }
    t
}

pub fn state_pair(s: &[f64], s_prime: &[f64]) -> Tensor {
    assert_eq!(s.len(), OBS_DIM);
    assert_eq!(s_prime.len(), OBS_DIM);
    let mut data = Vec::with_capacity(2 * OBS_DIM);
    data.extend_from_slice(s);
    data.extend_from_slice(s_prime);
    Tensor::from_vec(1, 2 * OBS_DIM, data)
}

fn state_pair_batch(triplets: &[&Triplet]) -> Tensor {
    let mut data = Vec::with_capacity(triplets.len() * 2 * OBS_DIM);
    for t in triplets {
        data.extend_from_slice(&t.s);
        data.extend_from_slice(&t.s_prime);
    }
    Tensor::from_vec(triplets.len(), 2 * OBS_DIM, data)
}

/// Unstructured ablation generator: one MLP from the state pair straight to
/// the task-language vector, either thresholded to bits or left continuous.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlatGenerator {
    pub rep: TlRep,
    pub out_len: usize,
    mlp: Mlp,
}

impl FlatGenerator {
    pub fn new(params: &mut Params, cfg: &TlConfig, rng: &mut ChaCha12Rng) -> FlatGenerator {
        let out_len = TlLayout::from_cfg(cfg).total_len();
        let mlp = Mlp::new(
            params,
            "flat",
            &[2 * OBS_DIM, NET_HIDDEN, NET_HIDDEN, out_len],
            Act::Relu,
            rng,
        );
        FlatGenerator { rep: cfg.rep, out_len, mlp }
    }

    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        noise_rng: &mut ChaCha12Rng,
        mode: GenMode,
    ) -> Var {
        let logits = self.mlp.forward(tape, vars, x);
        match self.rep {
            TlRep::Continuous => logits,
            TlRep::Binary | TlRep::Predicate => {
                let b = tape.value(logits).rows;
                let mut u = uniform_tensor(b, self.out_len, noise_rng);
                match mode {
                    GenMode::Train { noise_scale, .. } => {
                        // Shrink the thresholds toward 1/2 so zero noise
                        // degenerates to the deterministic sign decision.
                        for v in &mut u.data {
                            *v = 0.5 + noise_scale * (*v - 0.5);
                        }
                        bernoulli_st(tape, logits, &u).0
                    }
                    GenMode::SoftProbe => tape.sigmoid(logits),
                }
            }
        }
    }

    pub fn generate(&self, params: &Params, s: &[f64], s_prime: &[f64]) -> TaskLanguage {
        let x = state_pair(s, s_prime);
        let logits = self.mlp.forward_plain(params, &x);
        let values = match self.rep {
            TlRep::Continuous => logits.data,
            _ => hard_bits(&logits).data,
        };
        TaskLanguage { values }
    }
}

/// Either generator kind behind one interface.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum GenCore {
    Predicate(TlGenerator),
    Flat(FlatGenerator),
}

impl GenCore {
    pub fn new(params: &mut Params, cfg: &TlConfig, rng: &mut ChaCha12Rng) -> GenCore {
        match cfg.rep {
            TlRep::Predicate => GenCore::Predicate(TlGenerator::new(params, cfg, rng)),
            _ => GenCore::Flat(FlatGenerator::new(params, cfg, rng)),
        }
    }

    pub fn out_len(&self) -> usize {
        match self {
            GenCore::Predicate(g) => g.layout.total_len(),
            GenCore::Flat(g) => g.out_len,
        }
    }

    pub fn rep(&self) -> TlRep {
        match self {
            GenCore::Predicate(_) => TlRep::Predicate,
            GenCore::Flat(g) => g.rep,
        }
    }

    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        noise_rng: &mut ChaCha12Rng,
        mode: GenMode,
    ) -> Var {
        match self {
            GenCore::Predicate(g) => g.forward_tape(tape, vars, x, noise_rng, mode),
            GenCore::Flat(g) => g.forward_tape(tape, vars, x, noise_rng, mode),
        }
    }

    pub fn generate(&self, params: &Params, s: &[f64], s_prime: &[f64]) -> TaskLanguage {
        match self {
            GenCore::Predicate(g) => g.generate(params, s, s_prime),
            GenCore::Flat(g) => g.generate(params, s, s_prime),
        }
    }
}

/// Generator, reconstruction head, and language backend: everything the
/// masked-reconstruction phase trains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlmModel {
    pub core: GenCore,
    pub head: Mlp,
    /// Generator and head parameters (one optimizer).
    pub params: Params,
    pub lm: LmBackend,
    /// When set, the head sees zeros instead of the task language. Control
    /// model for information checks.
    pub zero_tl: bool,
}

impl MlmModel {
    pub fn new(tl_cfg: &TlConfig, lm: LmBackend, seed: u64) -> MlmModel {
        let mut r = rng::rng_from(seed, "mlm-model-init", 0);
        let mut params = Params::new();
        let core = GenCore::new(&mut params, tl_cfg, &mut r);
        let head = Mlp::new(
            &mut params,
            "head",
            &[lm.d_lm() + core.out_len(), NET_HIDDEN, NET_HIDDEN, lm.vocab().len()],
            Act::Relu,
            &mut r,
        );
        MlmModel { core, head, params, lm, zero_tl: false }
    }

    pub fn layout(&self) -> Option<&TlLayout> {
        match &self.core {
            GenCore::Predicate(g) => Some(&g.layout),
            GenCore::Flat(_) => None,
        }
    }

    pub fn generate(&self, s: &[f64], s_prime: &[f64]) -> TaskLanguage {
        self.core.generate(&self.params, s, s_prime)
    }
}

/// One prepared training batch: masked token sequences plus targets.
pub struct MlmBatch {
    pub x: Tensor,
    pub masked: Vec<TokenSeq>,
    pub plans: Vec<MaskPlan>,
}

impl MlmBatch {
    /// Tokenizes, masks, and stacks a batch of triplets. `mask_salt` keeps
    /// mask positions varying across training steps; `salient_weight` biases
    /// mask positions toward ball-color words (1.0 = uniform).
    pub fn assemble(
        model: &MlmModel,
        triplets: &[&Triplet],
        master_seed: u64,
        mask_salt: u64,
        salient_weight: f64,
    ) -> Result<MlmBatch> {
        let vocab = model.lm.vocab();
        let salient = color_token_ids(vocab);
        let mut masked = Vec::with_capacity(triplets.len());
        let mut plans = Vec::with_capacity(triplets.len());
        for (i, t) in triplets.iter().enumerate() {
            let seq = tokenize(vocab, &t.nl)?;
            let seed = rng::derive(master_seed, "mlm-mask", mask_salt.wrapping_add(i as u64));
            let (m, plan) = mask_tokens_weighted(&seq, &salient, salient_weight, seed)?;
            masked.push(m);
            plans.push(plan);
        }
        Ok(MlmBatch { x: state_pair_batch(triplets), masked, plans })
    }
}

/// Vocabulary ids of the ball-color words — the salient tokens for
/// mask-position biasing.
fn color_token_ids(vocab: &Vocab) -> Vec<u32> {
    COLORS.iter().map(|c| vocab.id_of(c)).collect()
}

/// Differentiable masked-reconstruction loss: mean negative log-likelihood of
/// the original tokens at the two masked positions, conditioning the head on
/// the contextual state and the generated task language.
///
/// Returns the loss Var plus bound parameter vars (generator+head, then LM)
/// for gradient extraction.
pub struct MlmLossGraph {
    pub loss: Var,
    pub model_vars: Vec<Var>,
    pub lm_vars: Vec<Var>,
    /// Fraction of masked positions whose argmax prediction was correct.
    pub accuracy: f64,
}

pub fn mlm_loss(
    tape: &mut Tape,
    model: &MlmModel,
    batch: &MlmBatch,
    noise_rng: &mut ChaCha12Rng,
    mode: GenMode,
) -> MlmLossGraph {
    let b = batch.masked.len();
    assert!(b > 0, "empty batch");
    let model_vars = model.params.bind_all(tape);
    let x = tape.leaf(batch.x.clone());
    let mut tl = if model.zero_tl {
        tape.leaf(Tensor::zeros(b, model.core.out_len()))
    } else {
        model.core.forward_tape(tape, &model_vars, x, noise_rng, mode)
    };
    // Argument-group dropout on the head's view of the task language. The
    // mask is drawn from `noise_rng` after the generator's own draws, so a
    // cloned RNG still reproduces the whole stochastic forward exactly.
    if let GenMode::Train { arg_dropout, .. } = mode {
        if arg_dropout > 0.0 && !model.zero_tl {
            if let Some(layout) = model.layout() {
                let mut mask = Tensor::zeros(b, layout.total_len());
                mask.data.fill(1.0);
                for i in 0..b {
                    for pm in 0..layout.n_pm {
                        for a in 0..layout.n_a {
                            if rng::uniform_open(noise_rng) < arg_dropout {
                                for c in layout.arg_cols(pm, a) {
                                    mask.data[i * layout.total_len() + c] = 0.0;
                                }
                            }
                        }
                    }
                }
                let mask = tape.leaf(mask);
                tl = tape.mul(tl, mask);
            }
        }
    }

    // Contextual states at each masked slot.
    let padded = pad_batch(&batch.masked);
    let (ctx, lm_vars): (Vec<Var>, Vec<Var>) = match &model.lm {
        LmBackend::Recurrent(lm) => {
            let lm_vars = lm.params.bind_all(tape);
            let states = lm.forward_tape(tape, &lm_vars, &padded);
            let mut ctx = Vec::with_capacity(MASK_COUNT);
            for k in 0..MASK_COUNT {
                let mut acc: Option<Var> = None;
                for (t, state) in states.iter().enumerate() {
                    let ind: Vec<f64> = batch
                        .plans
                        .iter()
                        .map(|p| if p.positions[k] == t { 1.0 } else { 0.0 })
                        .collect();
                    if ind.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let iv = tape.leaf(Tensor::from_vec(b, 1, ind));
                    let picked = tape.mul_col_broadcast(*state, iv);
                    acc = Some(match acc {
                        None => picked,
                        Some(prev) => tape.add(prev, picked),
                    });
                }
                ctx.push(acc.expect("masked positions exist"));
            }
            (ctx, lm_vars)
        }
        LmBackend::Frozen(lm) => {
            let d = lm.d_lm;
            let states: Vec<Tensor> = batch.masked.iter().map(|s| lm.contextual(s)).collect();
            let mut ctx = Vec::with_capacity(MASK_COUNT);
            for k in 0..MASK_COUNT {
                let mut m = Tensor::zeros(b, d);
                for (i, st) in states.iter().enumerate() {
                    let p = batch.plans[i].positions[k];
                    m.data[i * d..(i + 1) * d].copy_from_slice(st.row(p));
                }
                ctx.push(tape.leaf(m));
            }
            (ctx, Vec::new())
        }
    };

    // Head loss per masked slot; average over both slots and the batch.
    let mut total: Option<Var> = None;
    let mut correct = 0usize;
    for (k, ctx_k) in ctx.iter().enumerate() {
        let inp = tape.concat_cols(*ctx_k, tl);
        let logits = model.head.forward(tape, &model_vars, inp);
        let targets: Vec<usize> =
            batch.plans.iter().map(|p| p.originals[k] as usize).collect();
        for (r, &target) in targets.iter().enumerate() {
            if tape.value(logits).argmax_row(r) == target {
                correct += 1;
            }
        }
        let logp = tape.log_softmax(logits);
        let picked = tape.pick_per_row(logp, targets);
        let mean = tape.mean_all(picked);
        total = Some(match total {
            None => mean,
            Some(prev) => tape.add(prev, mean),
        });
    }
    let sum = total.expect("mask count >= 1");
    let loss = tape.scale(sum, -1.0 / MASK_COUNT as f64);
    let accuracy = correct as f64 / (b * MASK_COUNT) as f64;
    MlmLossGraph { loss, model_vars, lm_vars, accuracy }
}

/// Progress row emitted during training.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: u64,
    pub loss: f64,
}

/// Sampling-noise strength for a training step: decays linearly from 1 to 0
/// over the first `noise_anneal_frac` of the configured steps, so late
/// training (and everything after it) sees the same deterministic hard
/// samples that evaluation-mode generation produces.
fn noise_scale(cfg: &MlmConfig, step: usize) -> f64 {
    let span = cfg.noise_anneal_frac * cfg.steps as f64;
    if span <= 0.0 {
        return 0.0;
    }
    (1.0 - step as f64 / span).clamp(0.0, 1.0)
}

/// Trains the generator (and the language backend when trainable) by masked
/// reconstruction. Returns the loss curve.
pub fn train_mlm(
    model: &mut MlmModel,
    data: &[Triplet],
    cfg: &MlmConfig,
    master_seed: u64,
    mut progress: impl FnMut(&LossPoint),
) -> Result<Vec<LossPoint>> {
    if data.is_empty() {
        return Err(Error::Config("mlm training needs a non-empty dataset".into()));
    }
    let mut model_opt = Adam::new(cfg.lr, &model.params);
    let mut lm_opt = match &model.lm {
        LmBackend::Recurrent(lm) => Some(Adam::new(cfg.lr, &lm.params)),
        LmBackend::Frozen(_) => None,
    };
    let mut batch_rng = rng::rng_from(master_seed, "mlm-batch", 0);
    let mut noise_rng = rng::rng_from(master_seed, "mlm-gumbel", 0);
    let mut curve = Vec::new();
    for step in 0..cfg.steps {
        let picks: Vec<&Triplet> =
            (0..cfg.batch_size).map(|_| &data[batch_rng.gen_range(0..data.len())]).collect();
        let batch =
            MlmBatch::assemble(model, &picks, master_seed, (step * cfg.batch_size) as u64)?;
        let mut tape = Tape::new();
        let mode = GenMode::Train {
            noise_scale: noise_scale(cfg, step),
            arg_dropout: cfg.arg_dropout,
        };
        let graph = mlm_loss(&mut tape, model, &batch, &mut noise_rng, mode);
        let loss = tape.scalar(graph.loss);
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("mlm loss became {loss} at step {step}")));
        }
        let grads = tape.backward(graph.loss);
        let model_grads = model.params.grads_from(&grads, &graph.model_vars);
        model_opt.step(&mut model.params, &model_grads);
        if let (Some(opt), LmBackend::Recurrent(lm)) = (&mut lm_opt, &mut model.lm) {
            let lm_grads = lm.params.grads_from(&grads, &graph.lm_vars);
            opt.step(&mut lm.params, &lm_grads);
        }
        let point = LossPoint { step: step as u64, loss };
        if step % 25 == 0 || step + 1 == cfg.steps {
            progress(&point);
            curve.push(point);
        }
    }
    if !model.params.all_finite() {
        return Err(Error::Diverged("non-finite generator parameters after training".into()));
    }
    Ok(curve)
}

/// Masked-prediction accuracy of a trained model over a sample of triplets,
/// in evaluation mode (deterministic task language, no Gumbel noise).
pub fn masked_accuracy(
    model: &MlmModel,
    data: &[Triplet],
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let vocab = model.lm.vocab();
    let mut pick_rng = rng::rng_from(seed, "mlm-eval-pick", 0);
    let mut correct = 0usize;
    let mut total = 0usize;
    for i in 0..samples {
        let t = &data[pick_rng.gen_range(0..data.len())];
        let seq = tokenize(vocab, &t.nl)?;
        let (masked, plan) = mask_tokens(&seq, rng::derive(seed, "mlm-eval-mask", i as u64))?;
        let tl = if model.zero_tl {
            TaskLanguage { values: vec![0.0; model.core.out_len()] }
        } else {
            model.generate(&t.s, &t.s_prime)
        };
        let ctx = model.lm.contextual(&masked);
        for k in 0..MASK_COUNT {
            let p = plan.positions[k];
            let mut inp = ctx.row(p).to_vec();
            inp.extend_from_slice(&tl.values);
            let x = Tensor::from_vec(1, inp.len(), inp);
            let logits = model.head.forward_plain(&model.params, &x);
            if logits.argmax_row(0) == plan.originals[k] as usize {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}
