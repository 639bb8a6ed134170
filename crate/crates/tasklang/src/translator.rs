//! Instruction translator: maps a whole-sentence embedding to the same
//! discrete task-language space the generator emits, so a policy trained on
//! generated vectors can be driven by free-form sentences. The main model is
//! a small VAE (the latent bottleneck groups paraphrases); a direct MLP
//! regressor serves as an ablation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{TlConfig, TlRep, TranslatorKind, VaeConfig};
use crate::corpus::Triplet;
use crate::env::Instruction;
use crate::error::{Error, Result};
use crate::generator::{LossPoint, MlmModel, TaskLanguage, TlLayout};
use crate::lang::EmbeddingCache;
use crate::nn::{Act, Adam, Linear, Mlp, Params, Tape, Tensor, Var};
use crate::rng;

const VAE_HIDDEN: usize = 256;
/// Log-variance clamp; keeps exp() sane long before divergence guards fire.
const LOGVAR_LIMIT: f64 = 8.0;

/// What the translated vector means, carried from the generator setup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlShape {
    pub rep: TlRep,
    pub layout: Option<TlLayout>,
    pub out_len: usize,
}

impl TlShape {
    pub fn from_cfg(tl_cfg: &TlConfig) -> TlShape {
        let layout = TlLayout::from_cfg(tl_cfg);
        TlShape {
            rep: tl_cfg.rep,
            layout: (tl_cfg.rep == TlRep::Predicate).then_some(layout),
            out_len: layout.total_len(),
        }
    }

    /// Rounds raw decoder outputs into a well-formed task-language vector.
    pub fn discretize(&self, raw: &[f64]) -> TaskLanguage {
        assert_eq!(raw.len(), self.out_len);
        match self.rep {
            TlRep::Continuous => TaskLanguage { values: raw.to_vec() },
            TlRep::Binary => TaskLanguage {
                values: raw.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect(),
            },
            TlRep::Predicate => {
                let layout = self.layout.expect("predicate rep carries a layout");
                let mut values = vec![0.0; self.out_len];
                for pm in 0..layout.n_pm {
                    for j in 0..layout.n_pn {
                        let c = layout.pred_col(pm, j);
                        values[c] = if raw[c] > 0.0 { 1.0 } else { 0.0 };
                    }
                    for a in 0..layout.n_a {
                        let r = layout.arg_cols(pm, a);
                        let start = r.start;
                        let mut best = start;
                        for c in r {
                            if raw[c] > raw[best] {
                                best = c;
                            }
                        }
                        values[best] = 1.0;
                    }
                }
                TaskLanguage { values }
            }
        }
    }
}

/// Variational translator: encoder trunk with two latent heads, Gaussian
/// reparameterization, and a decoder back to task-language logits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeTranslator {
    pub shape: TlShape,
    pub z_dim: usize,
    pub d_lm: usize,
    pub params: Params,
    trunk: Mlp,
    mu_head: Linear,
    logvar_head: Linear,
    decoder: Mlp,
}

impl VaeTranslator {
    pub fn new(cfg: &VaeConfig, tl_cfg: &TlConfig, d_lm: usize, seed: u64) -> VaeTranslator {
        let shape = TlShape::from_cfg(tl_cfg);
        let mut r = rng::rng_from(seed, "translator-init", 0);
        let mut params = Params::new();
        let trunk =
            Mlp::new(&mut params, "enc", &[d_lm, VAE_HIDDEN, VAE_HIDDEN], Act::Relu, &mut r);
        let mu_head = Linear::new(&mut params, "mu", VAE_HIDDEN, cfg.z_dim, Act::Linear, &mut r);
        let logvar_head =
            Linear::new(&mut params, "logvar", VAE_HIDDEN, cfg.z_dim, Act::Linear, &mut r);
        let decoder = Mlp::new(
            &mut params,
            "dec",
            &[cfg.z_dim, VAE_HIDDEN, VAE_HIDDEN, shape.out_len],
            Act::Relu,
            &mut r,
        );
        VaeTranslator { shape, z_dim: cfg.z_dim, d_lm, params, trunk, mu_head, logvar_head, decoder }
    }

    /// Encoder trunk with ReLU on both hidden layers.
    fn trunk_forward(&self, tape: &mut Tape, vars: &[Var], emb: Var) -> Var {
        let h = self.trunk.forward(tape, vars, emb);
        tape.relu(h)
    }

    /// Posterior parameters for a batch of embeddings.
    pub fn posterior(&self, tape: &mut Tape, vars: &[Var], emb: Var) -> (Var, Var) {
        let h = self.trunk_forward(tape, vars, emb);
        let mu = self.mu_head.forward(tape, vars, h);
        let logvar_raw = self.logvar_head.forward(tape, vars, h);
        let logvar = tape.clamp(logvar_raw, -LOGVAR_LIMIT, LOGVAR_LIMIT);
        (mu, logvar)
    }

    /// Deterministic translation: decode the posterior mean, then round.
    pub fn translate(&self, emb: &[f64]) -> TaskLanguage {
        assert_eq!(emb.len(), self.d_lm);
        let x = Tensor::from_vec(1, self.d_lm, emb.to_vec());
        let h = self.trunk.forward_plain(&self.params, &x).map(|v| v.max(0.0));
        let mu = self.mu_head.forward_plain(&self.params, &h);
        let raw = self.decoder.forward_plain(&self.params, &mu);
        self.shape.discretize(&raw.data)
    }

    /// Posterior mean for a single embedding; the continuous code behind
    /// `translate`, useful for latent-space inspection.
    pub fn latent_mean(&self, emb: &[f64]) -> Vec<f64> {
        let x = Tensor::from_vec(1, self.d_lm, emb.to_vec());
        let h = self.trunk.forward_plain(&self.params, &x).map(|v| v.max(0.0));
        self.mu_head.forward_plain(&self.params, &h).data
    }
}

/// Ablation: a plain regressor from embedding to task-language logits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpTranslator {
    pub shape: TlShape,
    pub d_lm: usize,
    pub params: Params,
    net: Mlp,
}

impl MlpTranslator {
    pub fn new(tl_cfg: &TlConfig, d_lm: usize, seed: u64) -> MlpTranslator {
        let shape = TlShape::from_cfg(tl_cfg);
        let mut r = rng::rng_from(seed, "translator-init", 1);
        let mut params = Params::new();
        let net = Mlp::new(
            &mut params,
            "mlp",
            &[d_lm, VAE_HIDDEN, VAE_HIDDEN, shape.out_len],
            Act::Relu,
            &mut r,
        );
        MlpTranslator { shape, d_lm, params, net }
    }

    pub fn translate(&self, emb: &[f64]) -> TaskLanguage {
        assert_eq!(emb.len(), self.d_lm);
        let x = Tensor::from_vec(1, self.d_lm, emb.to_vec());
        let raw = self.net.forward_plain(&self.params, &x);
        self.shape.discretize(&raw.data)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TranslatorModel {
    Vae(VaeTranslator),
    Mlp(MlpTranslator),
}

impl TranslatorModel {
    pub fn new(cfg: &VaeConfig, tl_cfg: &TlConfig, d_lm: usize, seed: u64) -> TranslatorModel {
        match cfg.kind {
            TranslatorKind::Vae => {
                TranslatorModel::Vae(VaeTranslator::new(cfg, tl_cfg, d_lm, seed))
            }
            TranslatorKind::Mlp => TranslatorModel::Mlp(MlpTranslator::new(tl_cfg, d_lm, seed)),
        }
    }

    pub fn shape(&self) -> &TlShape {
        match self {
            TranslatorModel::Vae(t) => &t.shape,
            TranslatorModel::Mlp(t) => &t.shape,
        }
    }

    pub fn d_lm(&self) -> usize {
        match self {
            TranslatorModel::Vae(t) => t.d_lm,
            TranslatorModel::Mlp(t) => t.d_lm,
        }
    }

    pub fn params(&self) -> &Params {
        match self {
            TranslatorModel::Vae(t) => &t.params,
            TranslatorModel::Mlp(t) => &t.params,
        }
    }

    pub fn translate(&self, emb: &[f64]) -> TaskLanguage {
        match self {
            TranslatorModel::Vae(t) => t.translate(emb),
            TranslatorModel::Mlp(t) => t.translate(emb),
        }
    }
}

/// One supervised example: sentence embedding in, generated vector out.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranslatePair {
    pub emb: Vec<f64>,
    pub target: Vec<f64>,
    pub instruction: Instruction,
    pub pattern_id: usize,
}

/// Builds translation pairs from a triplet dataset: the embedding comes from
/// the language backend, the target from the trained generator in
/// deterministic evaluation mode.
pub fn build_pairs(
    data: &[Triplet],
    model: &MlmModel,
    cache: &mut EmbeddingCache,
) -> Result<Vec<TranslatePair>> {
    data.iter()
        .map(|t| {
            let emb = cache.get(&model.lm, &t.nl)?;
            let target = model.generate(&t.s, &t.s_prime).values;
            Ok(TranslatePair {
                emb,
                target,
                instruction: t.instruction,
                pattern_id: t.pattern_id,
            })
        })
        .collect()
}

fn stack_pairs(pairs: &[&TranslatePair]) -> (Tensor, Tensor) {
    let d = pairs[0].emb.len();
    let o = pairs[0].target.len();
    let mut emb = Vec::with_capacity(pairs.len() * d);
    let mut tgt = Vec::with_capacity(pairs.len() * o);
    for p in pairs {
        emb.extend_from_slice(&p.emb);
        tgt.extend_from_slice(&p.target);
    }
    (Tensor::from_vec(pairs.len(), d, emb), Tensor::from_vec(pairs.len(), o, tgt))
}

/// Reconstruction term: Bernoulli cross-entropy per entry for discrete
/// vectors, half squared error for continuous ones; summed over entries,
/// averaged over the batch.
fn recon_loss(tape: &mut Tape, rep: TlRep, raw: Var, targets: &Tensor) -> Var {
    let per_entry = match rep {
        TlRep::Continuous => {
            let tv = tape.leaf(targets.clone());
            let diff = tape.sub(raw, tv);
            let sq = tape.mul(diff, diff);
            tape.scale(sq, 0.5)
        }
        TlRep::Binary | TlRep::Predicate => tape.bce_with_logits(raw, targets.clone()),
    };
    let rows = tape.row_sum(per_entry);
    tape.mean_all(rows)
}

pub struct VaeLossGraph {
    pub loss: Var,
    pub vars: Vec<Var>,
    pub recon: f64,
    pub kl: f64,
}

/// Evidence bound for one batch: reconstruction plus KL of the diagonal
/// Gaussian posterior against the standard normal. `eps` is the
/// reparameterization draw, one row per example.
pub fn vae_loss(
    tape: &mut Tape,
    t: &VaeTranslator,
    emb: &Tensor,
    targets: &Tensor,
    eps: &Tensor,
) -> VaeLossGraph {
    assert_eq!(eps.shape(), (emb.rows, t.z_dim), "eps shape");
    let vars = t.params.bind_all(tape);
    let x = tape.leaf(emb.clone());
    let (mu, logvar) = t.posterior(tape, &vars, x);

    // z = mu + exp(logvar / 2) * eps
    let half = tape.scale(logvar, 0.5);
    let std = tape.exp(half);
    let ev = tape.leaf(eps.clone());
    let noise = tape.mul(std, ev);
    let z = tape.add(mu, noise);

    let raw = t.decoder.forward(tape, &vars, z);
    let recon = recon_loss(tape, t.shape.rep, raw, targets);

    // KL(q || N(0, I)) = 1/2 sum(exp(lv) + mu^2 - 1 - lv)
    let var_term = tape.exp(logvar);
    let mu2 = tape.mul(mu, mu);
    let s1 = tape.add(var_term, mu2);
    let s2 = tape.sub(s1, logvar);
    let s3 = tape.add_scalar(s2, -1.0);
    let rows = tape.row_sum(s3);
    let kl_mean = tape.mean_all(rows);
    let kl = tape.scale(kl_mean, 0.5);

    let loss = tape.add(recon, kl);
    VaeLossGraph { loss, vars, recon: tape.scalar(recon), kl: tape.scalar(kl) }
}

/// Supervised loss of the MLP ablation.
pub fn mlp_translate_loss(
    tape: &mut Tape,
    t: &MlpTranslator,
    emb: &Tensor,
    targets: &Tensor,
) -> (Var, Vec<Var>) {
    let vars = t.params.bind_all(tape);
    let x = tape.leaf(emb.clone());
    let raw = t.net.forward(tape, &vars, x);
    let loss = recon_loss(tape, t.shape.rep, raw, targets);
    (loss, vars)
}

/// Trains the translator on embedding/vector pairs. The generator and the
/// language backend are inputs to pair construction only; nothing here can
/// touch their parameters.
pub fn train_translator(
    model: &mut TranslatorModel,
    pairs: &[TranslatePair],
    cfg: &VaeConfig,
    master_seed: u64,
    mut progress: impl FnMut(&LossPoint),
) -> Result<Vec<LossPoint>> {
    if pairs.is_empty() {
        return Err(Error::Config("translator training needs pairs".into()));
    }
    let mut opt = match model {
        TranslatorModel::Vae(t) => Adam::new(cfg.lr, &t.params),
        TranslatorModel::Mlp(t) => Adam::new(cfg.lr, &t.params),
    };
    let mut batch_rng = rng::rng_from(master_seed, "translator-batch", 0);
    let mut eps_rng = rng::rng_from(master_seed, "translator-eps", 0);
    let mut curve = Vec::new();
    for step in 0..cfg.steps {
        let picks: Vec<&TranslatePair> =
            (0..cfg.batch_size).map(|_| &pairs[batch_rng.gen_range(0..pairs.len())]).collect();
        let (emb, tgt) = stack_pairs(&picks);
        let mut tape = Tape::new();
        let (loss_var, vars, params): (Var, Vec<Var>, &mut Params) = match model {
            TranslatorModel::Vae(t) => {
                let mut eps = Tensor::zeros(emb.rows, t.z_dim);
                for v in &mut eps.data {
                    *v = rng::normal(&mut eps_rng);
                }
                let g = vae_loss(&mut tape, t, &emb, &tgt, &eps);
                (g.loss, g.vars, &mut t.params)
            }
            TranslatorModel::Mlp(t) => {
                let (loss, vars) = mlp_translate_loss(&mut tape, t, &emb, &tgt);
                (loss, vars, &mut t.params)
            }
        };
        let loss = tape.scalar(loss_var);
        if !loss.is_finite() {
            return Err(Error::Diverged(format!(
                "translator loss became {loss} at step {step}"
            )));
        }
        let grads = tape.backward(loss_var);
        let got = params.grads_from(&grads, &vars);
        opt.step(params, &got);
        let point = LossPoint { step: step as u64, loss };
        if step % 25 == 0 || step + 1 == cfg.steps {
            progress(&point);
            curve.push(point);
        }
    }
    if !model.params().all_finite() {
        return Err(Error::Diverged("non-finite translator parameters after training".into()));
    }
    Ok(curve)
}

/// Fraction of slots where the translated vector matches the target: each
/// predicate bit is a slot, each argument group (compared by active index) is
/// a slot. Binary vectors count every bit as a slot. Not defined for the
/// continuous representation.
pub fn slot_agreement(model: &TranslatorModel, pairs: &[TranslatePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Config("slot agreement needs pairs".into()));
    }
    let shape = *model.shape();
    let mut matched = 0usize;
    let mut total = 0usize;
    for p in pairs {
        let got = model.translate(&p.emb);
        let want = TaskLanguage { values: p.target.clone() };
        match shape.rep {
            TlRep::Continuous => {
                return Err(Error::Config(
                    "slot agreement is undefined for continuous vectors".into(),
                ))
            }
            TlRep::Binary => {
                for (g, w) in got.values.iter().zip(&want.values) {
                    matched += usize::from(g == w);
                    total += 1;
                }
            }
            TlRep::Predicate => {
                let layout = shape.layout.expect("predicate layout");
                for pm in 0..layout.n_pm {
                    for j in 0..layout.n_pn {
                        matched += usize::from(
                            got.pred_bit(&layout, pm, j) == want.pred_bit(&layout, pm, j),
                        );
                        total += 1;
                    }
                    for a in 0..layout.n_a {
                        matched += usize::from(
                            got.arg_index(&layout, pm, a) == want.arg_index(&layout, pm, a),
                        );
                        total += 1;
                    }
                }
            }
        }
    }
    Ok(matched as f64 / total as f64)
}
