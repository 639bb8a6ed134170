//! Conditioned control policies trained with clipped-surrogate PPO.
//!
//! The instruction-following policy observes ball positions plus a
//! conditioning vector that encodes the sentence; four providers produce that
//! vector. The translated task language arrives as a fixed per-episode
//! constant, while the baseline providers (binary or continuous grounding of
//! the sentence embedding, and a per-sentence lookup table) are trained
//! jointly with the policy, so minibatches recompute their output on the
//! tape. A hierarchical layer reuses the same PPO core: a high-level policy
//! emits either a task-language vector or an instruction index every k steps
//! and is rewarded by newly satisfied arrangement constraints.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Abstraction, EnvConfig, HrlConfig, PolicyMethod, PpoConfig};
use crate::corpus::{pattern_ids, render_nl, Registry};
use crate::env::{
    all_instructions, instruction_subset, ArrangementEnv, ArrangementSpec, BallEnv, Instruction,
    PushAction, ACTION_COUNT, INSTRUCTION_COUNT, OBS_DIM,
};
use crate::error::{Error, Result};
use crate::generator::TlLayout;
use crate::lang::{EmbeddingCache, LmBackend};
use crate::nn::{bernoulli_st, sigmoid, Act, Adam, Mlp, ParamId, Params, Tape, Tensor, Var};
use crate::rng;
use crate::translator::TranslatorModel;

const GROUND_HIDDEN: usize = 128;

fn policy_dims(input: usize, out: usize) -> Vec<usize> {
    vec![input, 32, 64, 64, out]
}

/// How the conditioning vector is produced. Trainable providers keep their
/// parameters inside the policy-side `Params` and are updated by the policy
/// gradient through recomputation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CondProvider {
    /// Conditioning computed outside the bundle (translated task language)
    /// and held constant per episode.
    Fixed,
    /// Sentence embedding -> MLP -> straight-through Bernoulli bits.
    BertBinary { net: Mlp },
    /// Sentence embedding -> MLP -> continuous vector.
    BertContinuous { net: Mlp },
    /// Trainable row per known sentence; unknown sentences share the last row.
    OneHot { table: ParamId, rows: usize },
}

/// Policy, value net, and conditioning provider for one training method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyBundle {
    pub method: PolicyMethod,
    pub cond_dim: usize,
    pub d_lm: usize,
    pub pi: Mlp,
    pub vf: Mlp,
    pub provider: CondProvider,
    pub pi_params: Params,
    pub v_params: Params,
}

impl PolicyBundle {
    /// `registry_rows` is the number of known sentences (used by the lookup
    /// provider; pass the registry length).
    pub fn new(
        method: PolicyMethod,
        cond_dim: usize,
        d_lm: usize,
        registry_rows: usize,
        seed: u64,
    ) -> PolicyBundle {
        let mut r = rng::rng_from(seed, "policy-init", 0);
        let mut pi_params = Params::new();
        let pi = Mlp::new(
            &mut pi_params,
            "pi",
            &policy_dims(OBS_DIM + cond_dim, ACTION_COUNT),
            Act::Tanh,
            &mut r,
        );
        let provider = match method {
            PolicyMethod::Talar => CondProvider::Fixed,
            PolicyMethod::BertBinary => CondProvider::BertBinary {
                net: Mlp::new(
                    &mut pi_params,
                    "cond",
                    &[d_lm, GROUND_HIDDEN, GROUND_HIDDEN, cond_dim],
                    Act::Relu,
                    &mut r,
                ),
            },
            PolicyMethod::BertContinuous => CondProvider::BertContinuous {
                net: Mlp::new(
                    &mut pi_params,
                    "cond",
                    &[d_lm, GROUND_HIDDEN, GROUND_HIDDEN, cond_dim],
                    Act::Relu,
                    &mut r,
                ),
            },
            PolicyMethod::OneHot => {
                let rows = registry_rows + 1;
                let table =
                    pi_params.add("cond.table", Tensor::randn(rows, cond_dim, 0.1, &mut r));
                CondProvider::OneHot { table, rows }
            }
        };
        let mut v_params = Params::new();
        let vf = Mlp::new(
            &mut v_params,
            "vf",
            &policy_dims(OBS_DIM + cond_dim, 1),
            Act::Tanh,
            &mut r,
        );
        PolicyBundle { method, cond_dim, d_lm, pi, vf, provider, pi_params, v_params }
    }
}

/// Everything an episode's conditioning depends on, captured at episode
/// start. `cond_now` is what the rollout actually fed the policy; the other
/// fields let an update minibatch recompute the vector differentiably.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodePayload {
    pub cond_now: Vec<f64>,
    pub emb: Option<Vec<f64>>,
    pub u: Option<Vec<f64>>,
    pub reg_row: Option<usize>,
}

impl EpisodePayload {
    pub fn fixed(cond: Vec<f64>) -> EpisodePayload {
        EpisodePayload { cond_now: cond, emb: None, u: None, reg_row: None }
    }
}

/// Shared language-side state for turning sentences into payloads.
pub struct Conditioner {
    pub lm: LmBackend,
    pub translator: Option<TranslatorModel>,
    pub registry: Registry,
    cache: EmbeddingCache,
}

impl Conditioner {
    pub fn new(lm: LmBackend, translator: Option<TranslatorModel>) -> Conditioner {
        Conditioner { lm, translator, registry: Registry::build(), cache: EmbeddingCache::new() }
    }

    /// Builds the conditioning payload for one episode. `noise_rng` only
    /// feeds the binary provider's threshold draw.
    pub fn payload(
        &mut self,
        bundle: &PolicyBundle,
        nl: &str,
        noise_rng: &mut ChaCha12Rng,
    ) -> Result<EpisodePayload> {
        match &bundle.provider {
            CondProvider::Fixed => {
                let tr = self.translator.as_ref().ok_or_else(|| {
                    Error::Config("translated conditioning needs a translator".into())
                })?;
                let emb = self.cache.get(&self.lm, nl)?;
                Ok(EpisodePayload::fixed(tr.translate(&emb).values))
            }
            CondProvider::BertBinary { net } => {
                let emb = self.cache.get(&self.lm, nl)?;
                let x = Tensor::from_vec(1, emb.len(), emb.clone());
                let logits = net.forward_plain(&bundle.pi_params, &x);
                let u: Vec<f64> =
                    (0..bundle.cond_dim).map(|_| rng::uniform_open(noise_rng)).collect();
                let cond: Vec<f64> = logits
                    .data
                    .iter()
                    .zip(&u)
                    .map(|(&l, &uu)| if sigmoid(l) > uu { 1.0 } else { 0.0 })
                    .collect();
                Ok(EpisodePayload { cond_now: cond, emb: Some(emb), u: Some(u), reg_row: None })
            }
            CondProvider::BertContinuous { net } => {
                let emb = self.cache.get(&self.lm, nl)?;
                let x = Tensor::from_vec(1, emb.len(), emb.clone());
                let logits = net.forward_plain(&bundle.pi_params, &x);
                Ok(EpisodePayload {
                    cond_now: logits.data,
                    emb: Some(emb),
                    u: None,
                    reg_row: None,
                })
            }
            CondProvider::OneHot { table, rows } => {
                let row = self.registry.lookup(nl).unwrap_or(rows - 1);
                let t = bundle.pi_params.tensor(*table);
                let cond = t.row(row).to_vec();
                Ok(EpisodePayload { cond_now: cond, emb: None, u: None, reg_row: Some(row) })
            }
        }
    }
}

/// Generalized advantage estimation over a buffer of complete episodes.
/// Every `dones[i] == true` row is terminal (no bootstrap); the last row must
/// be terminal.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n);
    assert_eq!(dones.len(), n);
    assert!(n == 0 || dones[n - 1], "buffer must end on an episode boundary");
    let mut adv = vec![0.0; n];
    let mut carry = 0.0;
    for i in (0..n).rev() {
        let v_next = if dones[i] { 0.0 } else { values[i + 1] };
        let delta = rewards[i] + gamma * v_next - values[i];
        carry = delta + gamma * lambda * if dones[i] { 0.0 } else { carry };
        adv[i] = carry;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// One collected on-policy batch. Rows are steps; `ep[i]` points into
/// `payloads`. Single-head rows use `actions`; factorized rows use `choices`.
#[derive(Debug, Default)]
pub struct Rollout {
    pub obs: Vec<Vec<f64>>,
    pub ep: Vec<usize>,
    pub actions: Vec<usize>,
    pub choices: Vec<Vec<usize>>,
    pub logp_old: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub values: Vec<f64>,
    pub payloads: Vec<EpisodePayload>,
    pub adv: Vec<f64>,
    pub ret: Vec<f64>,
    pub episodes: usize,
    pub successes: usize,
    pub episode_returns: Vec<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn finish(&mut self, gamma: f64, lambda: f64) {
        let (adv, ret) = gae(&self.rewards, &self.values, &self.dones, gamma, lambda);
        self.adv = adv;
        self.ret = ret;
    }

    pub fn mean_return(&self) -> f64 {
        if self.episode_returns.is_empty() {
            0.0
        } else {
            self.episode_returns.iter().sum::<f64>() / self.episode_returns.len() as f64
        }
    }
}

/// Clipped-update hyperparameters common to both PPO users.
#[derive(Debug, Clone, Copy)]
pub struct UpdateCfg {
    pub epochs: usize,
    pub minibatch_size: usize,
    /// Cap on minibatches consumed per epoch.
    pub minibatch_count: usize,
    pub clip: f64,
    pub entropy_coef: f64,
}

impl From<&PpoConfig> for UpdateCfg {
    fn from(c: &PpoConfig) -> UpdateCfg {
        UpdateCfg {
            epochs: c.epochs,
            minibatch_size: c.minibatch_size,
            minibatch_count: c.minibatch_count,
            clip: c.clip,
            entropy_coef: c.entropy_coef,
        }
    }
}

impl From<&HrlConfig> for UpdateCfg {
    fn from(c: &HrlConfig) -> UpdateCfg {
        UpdateCfg {
            epochs: c.epochs,
            minibatch_size: c.minibatch_size,
            minibatch_count: usize::MAX,
            clip: c.clip,
            entropy_coef: c.entropy_coef,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// PPO clipped-surrogate update over one rollout. The caller supplies the
/// per-minibatch forward passes; this owns shuffling, advantage
/// normalization, the clip/entropy objective, the value regression, and the
/// divergence guards.
#[allow(clippy::too_many_arguments)]
pub fn clipped_update<FP, FV>(
    pi_params: &mut Params,
    pi_opt: &mut Adam,
    v_params: &mut Params,
    v_opt: &mut Adam,
    logp_old: &[f64],
    adv: &[f64],
    ret: &[f64],
    cfg: &UpdateCfg,
    shuffle_rng: &mut ChaCha12Rng,
    mut policy_mb: FP,
    mut value_mb: FV,
) -> Result<UpdateStats>
where
    FP: FnMut(&mut Tape, &[Var], &[usize]) -> (Var, Var),
    FV: FnMut(&mut Tape, &[Var], &[usize]) -> Var,
{
    let n = logp_old.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    for _ in 0..cfg.epochs {
        order.shuffle(shuffle_rng);
        for (used, chunk) in order.chunks(cfg.minibatch_size).enumerate() {
            if used >= cfg.minibatch_count || chunk.len() < 2 {
                break;
            }
            let b = chunk.len();

            // Policy side.
            let mut tape = Tape::new();
            let vars = pi_params.bind_all(&mut tape);
            let (logp_new, entropy) = policy_mb(&mut tape, &vars, chunk);
            let (m, s) = mean_std(&chunk.iter().map(|&i| adv[i]).collect::<Vec<_>>());
            let advn: Vec<f64> = chunk.iter().map(|&i| (adv[i] - m) / (s + 1e-8)).collect();
            let adv_l = tape.leaf(Tensor::from_vec(b, 1, advn));
            let old: Vec<f64> = chunk.iter().map(|&i| logp_old[i]).collect();
            let old_l = tape.leaf(Tensor::from_vec(b, 1, old));
            let diff = tape.sub(logp_new, old_l);
            let ratio = tape.exp(diff);
            let surr1 = tape.mul(ratio, adv_l);
            let clipped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
            let surr2 = tape.mul(clipped, adv_l);
            let best = tape.min(surr1, surr2);
            let surr_mean = tape.mean_all(best);
            let neg_surr = tape.scale(surr_mean, -1.0);
            let ent_term = tape.scale(entropy, -cfg.entropy_coef);
            let loss = tape.add(neg_surr, ent_term);
            let loss_v = tape.scalar(loss);
            if !loss_v.is_finite() {
                return Err(Error::Diverged(format!("policy loss became {loss_v}")));
            }
            stats.policy_loss = loss_v;
            let grads = tape.backward(loss);
            let got = pi_params.grads_from(&grads, &vars);
            pi_opt.step(pi_params, &got);

            // Value side.
            let mut tape = Tape::new();
            let vars = v_params.bind_all(&mut tape);
            let v = value_mb(&mut tape, &vars, chunk);
            let want: Vec<f64> = chunk.iter().map(|&i| ret[i]).collect();
            let ret_l = tape.leaf(Tensor::from_vec(b, 1, want));
            let d = tape.sub(v, ret_l);
            let sq = tape.mul(d, d);
            let vloss = tape.mean_all(sq);
            let vloss_v = tape.scalar(vloss);
            if !vloss_v.is_finite() {
                return Err(Error::Diverged(format!("value loss became {vloss_v}")));
            }
            stats.value_loss = vloss_v;
            let grads = tape.backward(vloss);
            let got = v_params.grads_from(&grads, &vars);
            v_opt.step(v_params, &got);
        }
    }
    if !pi_params.all_finite() || !v_params.all_finite() {
        return Err(Error::Diverged("non-finite policy parameters after update".into()));
    }
    Ok(stats)
}

/// Differentiable conditioning rows for an update minibatch.
fn cond_var(
    tape: &mut Tape,
    vars: &[Var],
    provider: &CondProvider,
    cond_dim: usize,
    rollout: &Rollout,
    idxs: &[usize],
) -> Var {
    let b = idxs.len();
    match provider {
        CondProvider::Fixed => {
            let mut data = Vec::with_capacity(b * cond_dim);
            for &i in idxs {
                data.extend_from_slice(&rollout.payloads[rollout.ep[i]].cond_now);
            }
            tape.leaf(Tensor::from_vec(b, cond_dim, data))
        }
        CondProvider::BertBinary { net } => {
            let (emb, u) = stack_emb_noise(rollout, idxs, true);
            let ev = tape.leaf(emb);
            let logits = net.forward(tape, vars, ev);
            bernoulli_st(tape, logits, &u).0
        }
        CondProvider::BertContinuous { net } => {
            let (emb, _) = stack_emb_noise(rollout, idxs, false);
            let ev = tape.leaf(emb);
            net.forward(tape, vars, ev)
        }
        CondProvider::OneHot { table, .. } => {
            let rows: Vec<usize> = idxs
                .iter()
                .map(|&i| rollout.payloads[rollout.ep[i]].reg_row.expect("lookup row"))
                .collect();
            tape.gather_rows(vars[*table], rows)
        }
    }
}

fn stack_emb_noise(rollout: &Rollout, idxs: &[usize], with_u: bool) -> (Tensor, Tensor) {
    let first = &rollout.payloads[rollout.ep[idxs[0]]];
    let d = first.emb.as_ref().expect("embedding stored").len();
    let c = first.cond_now.len();
    let mut emb = Vec::with_capacity(idxs.len() * d);
    let mut u = Vec::with_capacity(idxs.len() * c);
    for &i in idxs {
        let p = &rollout.payloads[rollout.ep[i]];
        emb.extend_from_slice(p.emb.as_ref().expect("embedding stored"));
        if with_u {
            u.extend_from_slice(p.u.as_ref().expect("noise stored"));
        }
    }
    (
        Tensor::from_vec(idxs.len(), d, emb),
        if with_u { Tensor::from_vec(idxs.len(), c, u) } else { Tensor::zeros(0, 0) },
    )
}

fn stack_obs(rollout: &Rollout, idxs: &[usize]) -> Tensor {
    let d = rollout.obs[idxs[0]].len();
    let mut data = Vec::with_capacity(idxs.len() * d);
    for &i in idxs {
        data.extend_from_slice(&rollout.obs[i]);
    }
    Tensor::from_vec(idxs.len(), d, data)
}

/// Stable log-probabilities of one logits row.
fn log_probs_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    logits.iter().map(|x| x - lse).collect()
}

fn sample_from_logits(logits: &[f64], rng: &mut ChaCha12Rng) -> (usize, f64) {
    let lps = log_probs_row(logits);
    let u = rng::uniform_open(rng);
    let mut acc = 0.0;
    for (i, lp) in lps.iter().enumerate() {
        acc += lp.exp();
        if u <= acc {
            return (i, *lp);
        }
    }
    (lps.len() - 1, *lps.last().expect("non-empty logits"))
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

fn policy_logits_plain(bundle: &PolicyBundle, obs: &[f64], cond: &[f64]) -> Vec<f64> {
    let mut row = obs.to_vec();
    row.extend_from_slice(cond);
    let x = Tensor::from_vec(1, row.len(), row);
    bundle.pi.forward_plain(&bundle.pi_params, &x).data
}

fn value_plain(bundle: &PolicyBundle, obs: &[f64], cond: &[f64]) -> f64 {
    let mut row = obs.to_vec();
    row.extend_from_slice(cond);
    let x = Tensor::from_vec(1, row.len(), row);
    bundle.vf.forward_plain(&bundle.v_params, &x).data[0]
}

/// Per-episode sentence sampling space during training.
struct TaskSampler {
    instructions: Vec<Instruction>,
    patterns: Vec<usize>,
}

impl TaskSampler {
    fn from_cfg(cfg: &PpoConfig) -> TaskSampler {
        let mut patterns = pattern_ids(cfg.train_split);
        if cfg.pattern_limit > 0 {
            patterns.truncate(cfg.pattern_limit);
        }
        TaskSampler { instructions: instruction_subset(cfg.instruction_count), patterns }
    }

    fn draw(&self, rng: &mut ChaCha12Rng) -> Result<(Instruction, String)> {
        let instr = self.instructions[rng.gen_range(0..self.instructions.len())];
        let pattern = self.patterns[rng.gen_range(0..self.patterns.len())];
        Ok((instr, render_nl(&instr, pattern)?))
    }
}

/// Collects complete instruction-following episodes until at least
/// `min_steps` rows exist.
#[allow(clippy::too_many_arguments)]
fn collect_ifp_rollout(
    bundle: &PolicyBundle,
    cond: &mut Conditioner,
    env_cfg: &EnvConfig,
    sampler: &TaskSampler,
    min_steps: usize,
    master_seed: u64,
    episode_counter: &mut u64,
    pick_rng: &mut ChaCha12Rng,
    action_rng: &mut ChaCha12Rng,
    noise_rng: &mut ChaCha12Rng,
) -> Result<Rollout> {
    let mut out = Rollout::default();
    while out.len() < min_steps {
        let (instr, nl) = sampler.draw(pick_rng)?;
        let payload = cond.payload(bundle, &nl, noise_rng)?;
        let ep_idx = out.payloads.len();
        out.payloads.push(payload);
        let seed = rng::derive(master_seed, "ppo-env", *episode_counter);
        *episode_counter += 1;
        let mut env = BallEnv::new(env_cfg.clone(), seed, instr)?;
        let mut obs = env.obs();
        let mut ep_ret = 0.0;
        loop {
            let cond_now = &out.payloads[ep_idx].cond_now;
            let logits = policy_logits_plain(bundle, &obs, cond_now);
            let (a, logp) = sample_from_logits(&logits, action_rng);
            let v = value_plain(bundle, &obs, cond_now);
            let r = env.step(PushAction::from_index(a)?)?;
            out.obs.push(obs);
            out.ep.push(ep_idx);
            out.actions.push(a);
            out.logp_old.push(logp);
            out.rewards.push(r.reward);
            out.dones.push(r.done);
            out.values.push(v);
            ep_ret += r.reward;
            obs = r.obs;
            if r.done {
                out.episodes += 1;
                out.successes += usize::from(r.info.success);
                out.episode_returns.push(ep_ret);
                break;
            }
        }
    }
    Ok(out)
}

/// One point of the training curve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PolicyCurvePoint {
    pub env_steps: u64,
    pub mean_return: f64,
    /// Success fraction of the (stochastic) rollout episodes.
    pub rollout_success: f64,
    /// Greedy evaluation success, when scheduled.
    pub eval_success: Option<f64>,
}

/// Trains an instruction-following policy with PPO.
pub fn train_ifp(
    bundle: &mut PolicyBundle,
    cond: &mut Conditioner,
    env_cfg: &EnvConfig,
    cfg: &PpoConfig,
    master_seed: u64,
    mut progress: impl FnMut(&PolicyCurvePoint),
) -> Result<Vec<PolicyCurvePoint>> {
    let sampler = TaskSampler::from_cfg(cfg);
    if sampler.patterns.is_empty() {
        return Err(Error::Config("no training patterns selected".into()));
    }
    let mut pi_opt = Adam::new(cfg.lr_policy, &bundle.pi_params);
    let mut v_opt = Adam::new(cfg.lr_value, &bundle.v_params);
    let mut pick_rng = rng::rng_from(master_seed, "ppo-pick", 0);
    let mut action_rng = rng::rng_from(master_seed, "ppo-action", 0);
    let mut noise_rng = rng::rng_from(master_seed, "ppo-cond-noise", 0);
    let mut shuffle_rng = rng::rng_from(master_seed, "ppo-shuffle", 0);
    let mut episode_counter = 0u64;
    let mut steps = 0u64;
    let mut next_eval = cfg.eval_every;
    let mut curve = Vec::new();
    while steps < cfg.total_steps {
        let mut rollout = collect_ifp_rollout(
            bundle,
            cond,
            env_cfg,
            &sampler,
            cfg.rollout_horizon,
            master_seed,
            &mut episode_counter,
            &mut pick_rng,
            &mut action_rng,
            &mut noise_rng,
        )?;
        rollout.finish(cfg.gamma, cfg.gae_lambda);
        steps += rollout.len() as u64;

        let pi = bundle.pi.clone();
        let vf = bundle.vf.clone();
        let provider = bundle.provider.clone();
        let cond_dim = bundle.cond_dim;
        let update_cfg = UpdateCfg::from(cfg);
        clipped_update(
            &mut bundle.pi_params,
            &mut pi_opt,
            &mut bundle.v_params,
            &mut v_opt,
            &rollout.logp_old,
            &rollout.adv,
            &rollout.ret,
            &update_cfg,
            &mut shuffle_rng,
            |tape, vars, idxs| {
                let obs = stack_obs(&rollout, idxs);
                let ov = tape.leaf(obs);
                let cv = cond_var(tape, vars, &provider, cond_dim, &rollout, idxs);
                let input = tape.concat_cols(ov, cv);
                let logits = pi.forward(tape, vars, input);
                let lp = tape.log_softmax(logits);
                let acts: Vec<usize> = idxs.iter().map(|&i| rollout.actions[i]).collect();
                let logp = tape.pick_per_row(lp, acts);
                let p = tape.softmax(logits);
                let pl = tape.mul(p, lp);
                let rs = tape.row_sum(pl);
                let me = tape.mean_all(rs);
                let entropy = tape.scale(me, -1.0);
                (logp, entropy)
            },
            |tape, vars, idxs| {
                let obs = stack_obs(&rollout, idxs);
                let ov = tape.leaf(obs);
                // The value net sees the rollout-time conditioning as a
                // constant; provider gradients come from the policy side only.
                let mut data = Vec::with_capacity(idxs.len() * cond_dim);
                for &i in idxs {
                    data.extend_from_slice(&rollout.payloads[rollout.ep[i]].cond_now);
                }
                let cv = tape.leaf(Tensor::from_vec(idxs.len(), cond_dim, data));
                let input = tape.concat_cols(ov, cv);
                vf.forward(tape, vars, input)
            },
        )?;

        let point = PolicyCurvePoint {
            env_steps: steps,
            mean_return: rollout.mean_return(),
            rollout_success: rollout.successes as f64 / rollout.episodes.max(1) as f64,
            eval_success: if cfg.eval_every > 0 && steps >= next_eval {
                next_eval += cfg.eval_every;
                Some(success_rate(
                    bundle,
                    cond,
                    env_cfg,
                    &sampler.instructions,
                    &sampler.patterns,
                    cfg.eval_episodes,
                    rng::derive(master_seed, "ppo-eval", steps),
                )?)
            } else {
                None
            },
        };
        progress(&point);
        curve.push(point);
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub success: bool,
    pub steps: u32,
    pub ret: f64,
    pub final_goal_distance: f64,
}

/// Runs one episode with greedy (argmax) actions.
pub fn run_greedy_episode(
    bundle: &PolicyBundle,
    payload: &EpisodePayload,
    env: &mut BallEnv,
) -> Result<EpisodeOutcome> {
    let mut obs = env.obs();
    let mut ret = 0.0;
    loop {
        let logits = policy_logits_plain(bundle, &obs, &payload.cond_now);
        let r = env.step(PushAction::from_index(argmax(&logits))?)?;
        ret += r.reward;
        obs = r.obs;
        if r.done {
            return Ok(EpisodeOutcome {
                success: r.info.success,
                steps: env.state.t,
                ret,
                final_goal_distance: r.info.goal_distance,
            });
        }
    }
}

/// Greedy success rate over a deterministic grid of episodes: instructions
/// round-robin, patterns cycling, env seeds derived from the seed.
pub fn success_rate(
    bundle: &PolicyBundle,
    cond: &mut Conditioner,
    env_cfg: &EnvConfig,
    instructions: &[Instruction],
    patterns: &[usize],
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    if instructions.is_empty() || patterns.is_empty() || episodes == 0 {
        return Err(Error::Config("success_rate needs instructions, patterns, episodes".into()));
    }
    let mut noise_rng = rng::rng_from(seed, "eval-cond-noise", 0);
    let mut hits = 0usize;
    for e in 0..episodes {
        let instr = instructions[e % instructions.len()];
        let pattern = patterns[(e / instructions.len()) % patterns.len()];
        let nl = render_nl(&instr, pattern)?;
        let payload = cond.payload(bundle, &nl, &mut noise_rng)?;
        let mut env = BallEnv::new(env_cfg.clone(), rng::derive(seed, "eval-env", e as u64), instr)?;
        hits += usize::from(run_greedy_episode(bundle, &payload, &mut env)?.success);
    }
    Ok(hits as f64 / episodes as f64)
}

// ---------------------------------------------------------------------------
// Hierarchical layer.

/// Output heads of the high-level policy: factorized task-language groups, or
/// a single instruction-index head rendered to a sentence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum HlHeads {
    Tl { layout: TlLayout },
    Hal { count: usize },
}

impl HlHeads {
    /// Categorical group sizes, in output order.
    pub fn group_dims(&self) -> Vec<usize> {
        match self {
            HlHeads::Tl { layout } => {
                let mut dims = Vec::new();
                for _pm in 0..layout.n_pm {
                    dims.extend(std::iter::repeat(2).take(layout.n_pn));
                    dims.extend(std::iter::repeat(layout.arg_dim).take(layout.n_a));
                }
                dims
            }
            HlHeads::Hal { count } => vec![*count],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.group_dims().iter().sum()
    }

    /// Builds the task-language vector selected by per-group choices. Only
    /// meaningful for the factorized heads.
    pub fn assemble_tl(&self, choices: &[usize]) -> Vec<f64> {
        match self {
            HlHeads::Tl { layout } => {
                let mut values = Vec::with_capacity(layout.total_len());
                let mut g = 0;
                for _pm in 0..layout.n_pm {
                    for _j in 0..layout.n_pn {
                        values.push(choices[g] as f64);
                        g += 1;
                    }
                    for _a in 0..layout.n_a {
                        let mut one_hot = vec![0.0; layout.arg_dim];
                        one_hot[choices[g]] = 1.0;
                        values.extend_from_slice(&one_hot);
                        g += 1;
                    }
                }
                values
            }
            HlHeads::Hal { .. } => panic!("assemble_tl on instruction heads"),
        }
    }
}

/// High-level policy and value net.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HlBundle {
    pub abstraction: Abstraction,
    pub heads: HlHeads,
    pub pi: Mlp,
    pub vf: Mlp,
    pub pi_params: Params,
    pub v_params: Params,
}

impl HlBundle {
    pub fn new(cfg: &HrlConfig, layout: TlLayout, seed: u64) -> HlBundle {
        let heads = match cfg.abstraction {
            Abstraction::Tl => HlHeads::Tl { layout },
            Abstraction::Hal => HlHeads::Hal { count: INSTRUCTION_COUNT },
        };
        let mut r = rng::rng_from(seed, "hl-init", 0);
        let mut pi_params = Params::new();
        let pi = Mlp::new(
            &mut pi_params,
            "hl-pi",
            &policy_dims(OBS_DIM, heads.out_dim()),
            Act::Tanh,
            &mut r,
        );
        let mut v_params = Params::new();
        let vf =
            Mlp::new(&mut v_params, "hl-vf", &policy_dims(OBS_DIM, 1), Act::Tanh, &mut r);
        HlBundle { abstraction: cfg.abstraction, heads, pi, vf, pi_params, v_params }
    }
}

/// Samples all head groups of one logits row. Returns choices, total log
/// probability, and (unused by callers today) nothing else.
fn sample_groups(
    logits: &[f64],
    dims: &[usize],
    rng: &mut ChaCha12Rng,
    greedy: bool,
) -> (Vec<usize>, f64) {
    let mut choices = Vec::with_capacity(dims.len());
    let mut logp = 0.0;
    let mut start = 0;
    for &d in dims {
        let slice = &logits[start..start + d];
        let (c, lp) = if greedy {
            let c = argmax(slice);
            (c, log_probs_row(slice)[c])
        } else {
            sample_from_logits(slice, rng)
        };
        choices.push(c);
        logp += lp;
        start += d;
    }
    (choices, logp)
}

/// Turns one high-level decision into the conditioning the low-level policy
/// follows for the next k steps.
fn hl_decision_cond(
    heads: &HlHeads,
    choices: &[usize],
    ifp: &PolicyBundle,
    cond: &mut Conditioner,
    hal_pattern: usize,
    noise_rng: &mut ChaCha12Rng,
) -> Result<Vec<f64>> {
    match heads {
        HlHeads::Tl { .. } => Ok(heads.assemble_tl(choices)),
        HlHeads::Hal { .. } => {
            let instr = all_instructions()[choices[0]];
            let nl = render_nl(&instr, hal_pattern)?;
            Ok(cond.payload(ifp, &nl, noise_rng)?.cond_now)
        }
    }
}

/// Executes k greedy low-level steps under the given conditioning.
fn run_ll_segment(
    ifp: &PolicyBundle,
    env: &mut ArrangementEnv,
    cond_vec: &[f64],
    k: u32,
) -> Result<()> {
    for _ in 0..k {
        let obs = env.obs();
        let logits = policy_logits_plain(ifp, &obs, cond_vec);
        env.step(PushAction::from_index(argmax(&logits))?)?;
    }
    Ok(())
}

pub enum HlActor<'a> {
    Net { bundle: &'a HlBundle, greedy: bool },
    Random { heads: &'a HlHeads },
}

/// Runs one arrangement episode; returns per-decision (obs, choices, logp,
/// value, reward) rows when a buffer is supplied, and always the final
/// satisfied-constraint count.
#[allow(clippy::too_many_arguments)]
fn hl_episode(
    actor: &HlActor,
    ifp: &PolicyBundle,
    cond: &mut Conditioner,
    env_cfg: &EnvConfig,
    cfg: &HrlConfig,
    spec: &ArrangementSpec,
    seed: u64,
    action_rng: &mut ChaCha12Rng,
    noise_rng: &mut ChaCha12Rng,
    mut sink: Option<&mut Rollout>,
) -> Result<usize> {
    let decisions = (cfg.horizon / cfg.k).max(1) as usize;
    let mut env = ArrangementEnv::new(env_cfg.clone(), seed)?;
    let heads = match actor {
        HlActor::Net { bundle, .. } => &bundle.heads,
        HlActor::Random { heads } => heads,
    };
    let dims = heads.group_dims();
    let mut ep_ret = 0.0;
    for d in 0..decisions {
        let obs = env.obs();
        let before = spec.count_satisfied(env.positions(), env_cfg);
        let (choices, logp, value) = match actor {
            HlActor::Net { bundle, greedy } => {
                let logits = bundle.pi.forward_plain(
                    &bundle.pi_params,
                    &Tensor::from_vec(1, obs.len(), obs.clone()),
                );
                let (c, lp) = sample_groups(&logits.data, &dims, action_rng, *greedy);
                let v = bundle
                    .vf
                    .forward_plain(&bundle.v_params, &Tensor::from_vec(1, obs.len(), obs.clone()))
                    .data[0];
                (c, lp, v)
            }
            HlActor::Random { .. } => {
                let c: Vec<usize> =
                    dims.iter().map(|&k| action_rng.gen_range(0..k)).collect();
                (c, 0.0, 0.0)
            }
        };
        let cond_vec = hl_decision_cond(heads, &choices, ifp, cond, cfg.hal_pattern, noise_rng)?;
        run_ll_segment(ifp, &mut env, &cond_vec, cfg.k)?;
        let after = spec.count_satisfied(env.positions(), env_cfg);
        let reward = after as f64 - before as f64;
        ep_ret += reward;
        if let Some(buf) = sink.as_deref_mut() {
            buf.obs.push(obs);
            buf.ep.push(0);
            buf.choices.push(choices);
            buf.logp_old.push(logp);
            buf.rewards.push(reward);
            buf.dones.push(d + 1 == decisions);
            buf.values.push(value);
        }
    }
    if let Some(buf) = sink.as_deref_mut() {
        buf.episodes += 1;
        buf.episode_returns.push(ep_ret);
    }
    Ok(spec.count_satisfied(env.positions(), env_cfg))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HrlCurvePoint {
    pub hl_steps: u64,
    pub mean_reward: f64,
    /// Mean satisfied constraints at episode end over the rollout.
    pub mean_final_count: f64,
}

/// Trains the high-level policy with PPO over arrangement episodes; the
/// low-level policy stays frozen.
pub fn train_hrl(
    hl: &mut HlBundle,
    ifp: &PolicyBundle,
    cond: &mut Conditioner,
    env_cfg: &EnvConfig,
    cfg: &HrlConfig,
    master_seed: u64,
    mut progress: impl FnMut(&HrlCurvePoint),
) -> Result<Vec<HrlCurvePoint>> {
    if let HlHeads::Tl { layout } = &hl.heads {
        if layout.total_len() != ifp.cond_dim {
            return Err(Error::Config(format!(
                "high-level task-language width {} does not match the low-level \
                 conditioning width {}",
                layout.total_len(),
                ifp.cond_dim
            )));
        }
    }
    let spec = ArrangementSpec::standard();
    let mut pi_opt = Adam::new(cfg.lr_policy, &hl.pi_params);
    let mut v_opt = Adam::new(cfg.lr_value, &hl.v_params);
    let mut action_rng = rng::rng_from(master_seed, "hrl-action", 0);
    let mut noise_rng = rng::rng_from(master_seed, "hrl-cond-noise", 0);
    let mut shuffle_rng = rng::rng_from(master_seed, "hrl-shuffle", 0);
    let mut episode_counter = 0u64;
    let mut hl_steps = 0u64;
    let mut curve = Vec::new();
    while hl_steps < cfg.total_hl_steps {
        let mut rollout = Rollout::default();
        let mut final_counts = Vec::new();
        while rollout.len() < cfg.rollout_hl {
            let seed = rng::derive(master_seed, "hrl-env", episode_counter);
            episode_counter += 1;
            let count = hl_episode(
                &HlActor::Net { bundle: hl, greedy: false },
                ifp,
                cond,
                env_cfg,
                cfg,
                &spec,
                seed,
                &mut action_rng,
                &mut noise_rng,
                Some(&mut rollout),
            )?;
            final_counts.push(count as f64);
        }
        rollout.finish(cfg.gamma, cfg.gae_lambda);
        hl_steps += rollout.len() as u64;

        let pi = hl.pi.clone();
        let vf = hl.vf.clone();
        let dims = hl.heads.group_dims();
        let update_cfg = UpdateCfg::from(cfg);
        clipped_update(
            &mut hl.pi_params,
            &mut pi_opt,
            &mut hl.v_params,
            &mut v_opt,
            &rollout.logp_old,
            &rollout.adv,
            &rollout.ret,
            &update_cfg,
            &mut shuffle_rng,
            |tape, vars, idxs| {
                let obs = stack_obs(&rollout, idxs);
                let ov = tape.leaf(obs);
                let logits = pi.forward(tape, vars, ov);
                let mut start = 0;
                let mut logp: Option<Var> = None;
                let mut neg_entropy: Option<Var> = None;
                for (g, &d) in dims.iter().enumerate() {
                    let slice = tape.slice_cols(logits, start, start + d);
                    let lp = tape.log_softmax(slice);
                    let chosen: Vec<usize> =
                        idxs.iter().map(|&i| rollout.choices[i][g]).collect();
                    let picked = tape.pick_per_row(lp, chosen);
                    logp = Some(match logp {
                        None => picked,
                        Some(prev) => tape.add(prev, picked),
                    });
                    let p = tape.softmax(slice);
                    let pl = tape.mul(p, lp);
                    let rs = tape.row_sum(pl);
                    let me = tape.mean_all(rs);
                    neg_entropy = Some(match neg_entropy {
                        None => me,
                        Some(prev) => tape.add(prev, me),
                    });
                    start += d;
                }
                let entropy = tape.scale(neg_entropy.expect("groups"), -1.0);
                (logp.expect("groups"), entropy)
            },
            |tape, vars, idxs| {
                let obs = stack_obs(&rollout, idxs);
                let ov = tape.leaf(obs);
                vf.forward(tape, vars, ov)
            },
        )?;

        let point = HrlCurvePoint {
            hl_steps,
            mean_reward: rollout.mean_return(),
            mean_final_count: final_counts.iter().sum::<f64>() / final_counts.len() as f64,
        };
        progress(&point);
        curve.push(point);
    }
    Ok(curve)
}

/// Mean satisfied constraints at episode end for an actor, over a
/// deterministic batch of arrangement episodes.
pub fn arrangement_score(
    actor: &HlActor,
    ifp: &PolicyBundle,
    cond: &mut Conditioner,
    env_cfg: &EnvConfig,
    cfg: &HrlConfig,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let spec = ArrangementSpec::standard();
    let mut action_rng = rng::rng_from(seed, "hrl-eval-action", 0);
    let mut noise_rng = rng::rng_from(seed, "hrl-eval-noise", 0);
    let mut total = 0.0;
    for e in 0..episodes {
        total += hl_episode(
            actor,
            ifp,
            cond,
            env_cfg,
            cfg,
            &spec,
            rng::derive(seed, "hrl-eval-env", e as u64),
            &mut action_rng,
            &mut noise_rng,
            None,
        )? as f64;
    }
    Ok(total / episodes.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::env::Direction;
    use crate::lang::{RecurrentLm, Vocab};
    use crate::translator::VaeTranslator;

    fn tiny_conditioner(d_lm: usize, with_translator: bool) -> Conditioner {
        let lm = LmBackend::Recurrent(RecurrentLm::new(Vocab::project(), d_lm, 2));
        let translator = with_translator.then(|| {
            let mut cfg = Config::default();
            cfg.vae.z_dim = 8;
            TranslatorModel::Vae(VaeTranslator::new(&cfg.vae, &cfg.tl, d_lm, 3))
        });
        Conditioner::new(lm, translator)
    }

    #[test]
    fn gae_matches_hand_computation() {
        // Episode 1: two steps; episode 2: one step. gamma=0.5, lambda=0.5.
        let rewards = [1.0, 0.0, 2.0];
        let values = [0.5, 0.25, 1.0];
        let dones = [false, true, true];
        let (adv, ret) = gae(&rewards, &values, &dones, 0.5, 0.5);
        // Row 1 (terminal): delta = 0 - 0.25 = -0.25.
        assert!((adv[1] - (-0.25)).abs() < 1e-12);
        // Row 0: delta = 1 + 0.5*0.25 - 0.5 = 0.625; adv = 0.625 + 0.25*(-0.25).
        assert!((adv[0] - 0.5625).abs() < 1e-12);
        // Row 2 (new episode, terminal): delta = 2 - 1 = 1.
        assert!((adv[2] - 1.0).abs() < 1e-12);
        for i in 0..3 {
            assert!((ret[i] - (adv[i] + values[i])).abs() < 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "episode boundary")]
    fn gae_rejects_truncated_buffers() {
        gae(&[1.0], &[0.0], &[false], 0.9, 0.9);
    }

    #[test]
    fn hl_heads_dims_and_assembly() {
        let layout = TlLayout { n_pm: 1, n_pn: 4, n_a: 2, arg_dim: 5 };
        let heads = HlHeads::Tl { layout };
        assert_eq!(heads.group_dims(), vec![2, 2, 2, 2, 5, 5]);
        assert_eq!(heads.out_dim(), 18);
        let tl = heads.assemble_tl(&[1, 0, 1, 1, 2, 4]);
        assert_eq!(tl.len(), 14);
        assert_eq!(&tl[0..4], &[1.0, 0.0, 1.0, 1.0]);
        assert_eq!(&tl[4..9], &[0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(&tl[9..14], &[0.0, 0.0, 0.0, 0.0, 1.0]);
        crate::generator::TaskLanguage { values: tl }
            .validate_predicate(&layout)
            .unwrap();

        let hal = HlHeads::Hal { count: INSTRUCTION_COUNT };
        assert_eq!(hal.group_dims(), vec![80]);
        assert_eq!(hal.out_dim(), 80);
    }

    #[test]
    fn clipped_update_moves_probability_toward_positive_advantage() {
        // Three-action bandit with a fixed input row. Rows alternate between
        // action 0 (advantage +1) and action 1 (advantage -1).
        let mut r = rng::rng_from(5, "policy-test", 0);
        let mut pi_params = Params::new();
        let pi = Mlp::new(&mut pi_params, "pi", &[4, 16, 3], Act::Tanh, &mut r);
        let mut v_params = Params::new();
        let vf = Mlp::new(&mut v_params, "vf", &[4, 16, 1], Act::Tanh, &mut r);
        let x_row = vec![0.3, -0.2, 0.8, 0.1];
        let n = 64;
        let actions: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let adv: Vec<f64> = actions.iter().map(|&a| if a == 0 { 1.0 } else { -1.0 }).collect();
        let logits0 = pi.forward_plain(&pi_params, &Tensor::from_vec(1, 4, x_row.clone()));
        let lp0 = log_probs_row(&logits0.data);
        let logp_old: Vec<f64> = actions.iter().map(|&a| lp0[a]).collect();
        let ret = vec![0.0; n];

        let cfg = UpdateCfg {
            epochs: 4,
            minibatch_size: 32,
            minibatch_count: usize::MAX,
            clip: 0.2,
            entropy_coef: 0.0,
        };
        let mut pi_opt = Adam::new(1e-2, &pi_params);
        let mut v_opt = Adam::new(1e-2, &v_params);
        let mut shuffle = rng::rng_from(7, "policy-test-shuffle", 0);
        let pi_c = pi.clone();
        let vf_c = vf.clone();
        let x_c = x_row.clone();
        let actions_c = actions.clone();
        clipped_update(
            &mut pi_params,
            &mut pi_opt,
            &mut v_params,
            &mut v_opt,
            &logp_old,
            &adv,
            &ret,
            &cfg,
            &mut shuffle,
            |tape, vars, idxs| {
                let b = idxs.len();
                let mut data = Vec::with_capacity(b * 4);
                for _ in idxs {
                    data.extend_from_slice(&x_c);
                }
                let xv = tape.leaf(Tensor::from_vec(b, 4, data));
                let logits = pi_c.forward(tape, vars, xv);
                let lp = tape.log_softmax(logits);
                let acts: Vec<usize> = idxs.iter().map(|&i| actions_c[i]).collect();
                let logp = tape.pick_per_row(lp, acts);
                let p = tape.softmax(logits);
                let pl = tape.mul(p, lp);
                let rs = tape.row_sum(pl);
                let me = tape.mean_all(rs);
                let ent = tape.scale(me, -1.0);
                (logp, ent)
            },
            |tape, vars, idxs| {
                let b = idxs.len();
                let mut data = Vec::with_capacity(b * 4);
                for _ in idxs {
                    data.extend_from_slice(&x_c);
                }
                let xv = tape.leaf(Tensor::from_vec(b, 4, data));
                vf_c.forward(tape, vars, xv)
            },
        )
        .unwrap();

        let logits1 = pi.forward_plain(&pi_params, &Tensor::from_vec(1, 4, x_row));
        let lp1 = log_probs_row(&logits1.data);
        assert!(lp1[0] > lp0[0], "P(a0) should rise: {} -> {}", lp0[0], lp1[0]);
        assert!(lp1[1] < lp0[1], "P(a1) should fall: {} -> {}", lp0[1], lp1[1]);
    }

    #[test]
    fn conditioner_payloads_have_method_specific_shape() {
        let mut cond = tiny_conditioner(12, true);
        let nl = render_nl(&Instruction::new(0, Direction::Left, 2).unwrap(), 0).unwrap();
        let mut nr = rng::rng_from(9, "policy-test-noise", 0);
        let reg_len = cond.registry.len();

        let talar = PolicyBundle::new(PolicyMethod::Talar, 14, 12, reg_len, 11);
        let p = cond.payload(&talar, &nl, &mut nr).unwrap();
        assert_eq!(p.cond_now.len(), 14);
        assert!(p.cond_now.iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(p.emb.is_none() && p.u.is_none() && p.reg_row.is_none());
        // Matches the translator directly.
        let emb = cond.cache.get(&cond.lm, &nl).unwrap();
        let direct = cond.translator.as_ref().unwrap().translate(&emb).values;
        assert_eq!(p.cond_now, direct);

        let bb = PolicyBundle::new(PolicyMethod::BertBinary, 14, 12, reg_len, 13);
        let p = cond.payload(&bb, &nl, &mut nr).unwrap();
        assert_eq!(p.cond_now.len(), 14);
        assert!(p.cond_now.iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(p.u.as_ref().unwrap().len(), 14);
        assert!(p.emb.is_some());

        let bc = PolicyBundle::new(PolicyMethod::BertContinuous, 14, 12, reg_len, 15);
        let p = cond.payload(&bc, &nl, &mut nr).unwrap();
        assert!(p.cond_now.iter().any(|&v| v != 0.0 && v != 1.0));
        assert!(p.u.is_none());

        let oh = PolicyBundle::new(PolicyMethod::OneHot, 14, 12, reg_len, 17);
        let p = cond.payload(&oh, &nl, &mut nr).unwrap();
        let row = p.reg_row.unwrap();
        assert!(row < reg_len, "known sentence must hit a registry row");
        let q = cond.payload(&oh, "utter gibberish never rendered", &mut nr).unwrap();
        assert_eq!(q.reg_row.unwrap(), reg_len, "unknown sentence uses the fallback row");
    }

    #[test]
    fn rollout_collection_is_deterministic_and_leaves_params_untouched() {
        let mut cond = tiny_conditioner(10, true);
        let bundle = PolicyBundle::new(PolicyMethod::Talar, 14, 10, cond.registry.len(), 19);
        let hash_before = bundle.pi_params.content_hash();
        let cfg = Config::default();
        let sampler = TaskSampler::from_cfg(&cfg.ppo);
        let collect = |cond: &mut Conditioner| {
            let mut ec = 0u64;
            let mut pick = rng::rng_from(21, "t-pick", 0);
            let mut act = rng::rng_from(21, "t-act", 0);
            let mut noi = rng::rng_from(21, "t-noi", 0);
            collect_ifp_rollout(
                &bundle, cond, &cfg.env, &sampler, 48, 23, &mut ec, &mut pick, &mut act,
                &mut noi,
            )
            .unwrap()
        };
        let a = collect(&mut cond);
        let b = collect(&mut cond);
        assert!(a.len() >= 48);
        assert_eq!(a.obs, b.obs);
        assert_eq!(a.actions, b.actions);
        assert_eq!(a.logp_old, b.logp_old);
        assert_eq!(a.rewards, b.rewards);
        assert_eq!(bundle.pi_params.content_hash(), hash_before);
        // Every row's episode payload exists and has the right width.
        for &e in &a.ep {
            assert_eq!(a.payloads[e].cond_now.len(), 14);
        }
        assert!(a.dones.last().copied().unwrap());
    }

    #[test]
    fn success_rate_runs_with_an_untrained_net() {
        let mut cond = tiny_conditioner(10, true);
        let bundle = PolicyBundle::new(PolicyMethod::Talar, 14, 10, cond.registry.len(), 25);
        let cfg = Config::default();
        let instrs = instruction_subset(4);
        let rate = success_rate(&bundle, &mut cond, &cfg.env, &instrs, &[0, 1], 8, 27).unwrap();
        assert!((0.0..=1.0).contains(&rate));
        // Deterministic.
        let again = success_rate(&bundle, &mut cond, &cfg.env, &instrs, &[0, 1], 8, 27).unwrap();
        assert_eq!(rate, again);
    }

    #[test]
    fn hl_episode_and_random_baseline_produce_sane_counts() {
        let mut cond = tiny_conditioner(10, true);
        let ifp = PolicyBundle::new(PolicyMethod::Talar, 14, 10, cond.registry.len(), 29);
        let cfg = Config::default();
        let mut hrl = cfg.hrl.clone();
        hrl.horizon = 100;
        hrl.k = 25;

        let layout = TlLayout { n_pm: 1, n_pn: 4, n_a: 2, arg_dim: 5 };
        let hl = HlBundle::new(&hrl, layout, 31);
        let net_score = arrangement_score(
            &HlActor::Net { bundle: &hl, greedy: true },
            &ifp,
            &mut cond,
            &cfg.env,
            &hrl,
            3,
            33,
        )
        .unwrap();
        assert!((0.0..=10.0).contains(&net_score));

        let heads = hl.heads.clone();
        let rand_score = arrangement_score(
            &HlActor::Random { heads: &heads },
            &ifp,
            &mut cond,
            &cfg.env,
            &hrl,
            3,
            33,
        )
        .unwrap();
        assert!((0.0..=10.0).contains(&rand_score));

        // HAL heads drive the same machinery through sentence rendering.
        let mut hrl_hal = hrl.clone();
        hrl_hal.abstraction = Abstraction::Hal;
        let hal = HlBundle::new(&hrl_hal, layout, 35);
        let hal_score = arrangement_score(
            &HlActor::Net { bundle: &hal, greedy: true },
            &ifp,
            &mut cond,
            &cfg.env,
            &hrl_hal,
            2,
            37,
        )
        .unwrap();
        assert!((0.0..=10.0).contains(&hal_score));
    }

    #[test]
    fn short_hrl_training_runs_and_is_finite() {
        let mut cond = tiny_conditioner(10, true);
        let ifp = PolicyBundle::new(PolicyMethod::Talar, 14, 10, cond.registry.len(), 39);
        let cfg = Config::default();
        let mut hrl = cfg.hrl.clone();
        hrl.horizon = 50;
        hrl.k = 25;
        hrl.rollout_hl = 8;
        hrl.total_hl_steps = 16;
        hrl.epochs = 2;
        hrl.minibatch_size = 4;
        let layout = TlLayout { n_pm: 1, n_pn: 4, n_a: 2, arg_dim: 5 };
        let mut hl = HlBundle::new(&hrl, layout, 41);
        let curve = train_hrl(&mut hl, &ifp, &mut cond, &cfg.env, &hrl, 43, |_| {}).unwrap();
        assert!(!curve.is_empty());
        assert!(curve.iter().all(|p| p.mean_final_count.is_finite()));
        assert!(hl.pi_params.all_finite());
    }

    #[test]
    fn short_ifp_training_step_runs_for_every_method() {
        let cfg = {
            let mut c = Config::default();
            c.ppo.rollout_horizon = 40;
            c.ppo.total_steps = 40;
            c.ppo.epochs = 2;
            c.ppo.minibatch_size = 16;
            c.ppo.instruction_count = 4;
            c
        };
        for method in [
            PolicyMethod::Talar,
            PolicyMethod::BertBinary,
            PolicyMethod::BertContinuous,
            PolicyMethod::OneHot,
        ] {
            let mut cond = tiny_conditioner(10, method == PolicyMethod::Talar);
            let mut bundle = PolicyBundle::new(method, 14, 10, cond.registry.len(), 45);
            let mut ppo = cfg.ppo.clone();
            ppo.method = method;
            let curve =
                train_ifp(&mut bundle, &mut cond, &cfg.env, &ppo, 47, |_| {}).unwrap();
            assert!(!curve.is_empty(), "{method:?}");
            assert!(bundle.pi_params.all_finite(), "{method:?}");
            assert!(bundle.v_params.all_finite(), "{method:?}");
        }
    }
}
