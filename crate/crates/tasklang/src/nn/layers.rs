//! Network building blocks composed from tape ops: linear layers, MLPs, a
//! GRU cell, discrete relaxations, and a finite-difference gradient probe.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, Params};
use super::tape::{rowwise_softmax, sigmoid, Tape, Var};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Act {
    Relu,
    Tanh,
    Linear,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        params: &mut Params,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        act: Act,
        rng: &mut ChaCha12Rng,
    ) -> Linear {
        let std = match act {
            Act::Relu => (2.0 / fan_in as f64).sqrt(),
            _ => (1.0 / fan_in as f64).sqrt(),
        };
        let w = params.add(&format!("{name}.w"), Tensor::randn(fan_in, fan_out, std, rng));
        let b = params.add(&format!("{name}.b"), Tensor::zeros(1, fan_out));
        Linear { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Var {
        let h = tape.matmul(x, vars[self.w]);
        tape.add_row_broadcast(h, vars[self.b])
    }

    /// Plain forward outside any tape, for frozen or greedy paths.
    pub fn forward_plain(&self, params: &Params, x: &Tensor) -> Tensor {
        let mut h = x.matmul(params.tensor(self.w));
        let b = params.tensor(self.b);
        for r in 0..h.rows {
            for c in 0..h.cols {
                h.data[r * h.cols + c] += b.data[c];
            }
        }
        h
    }
}

/// Feed-forward stack; the activation sits between layers, the output layer
/// stays linear.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Act,
}

impl Mlp {
    pub fn new(
        params: &mut Params,
        name: &str,
        dims: &[usize],
        act: Act,
        rng: &mut ChaCha12Rng,
    ) -> Mlp {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let layer_act = if i + 2 == dims.len() { Act::Linear } else { act };
            layers.push(Linear::new(
                params,
                &format!("{name}.{i}"),
                dims[i],
                dims[i + 1],
                layer_act,
                rng,
            ));
        }
        Mlp { layers, act }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, vars, h);
            if i < last {
                h = match self.act {
                    Act::Relu => tape.relu(h),
                    Act::Tanh => tape.tanh(h),
                    Act::Linear => h,
                };
            }
        }
        h
    }

    pub fn forward_plain(&self, params: &Params, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward_plain(params, &h);
            if i < last {
                h = match self.act {
                    Act::Relu => h.map(|v| v.max(0.0)),
                    Act::Tanh => h.map(f64::tanh),
                    Act::Linear => h,
                };
            }
        }
        h
    }
}

/// Single GRU cell. The recurrent language encoder runs it over token
/// embeddings; everything is built from tape primitives so gradients come
/// for free.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GruCell {
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wn: ParamId,
    pub un: ParamId,
    pub bn: ParamId,
    pub d_h: usize,
}

impl GruCell {
    pub fn new(
        params: &mut Params,
        name: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut ChaCha12Rng,
    ) -> GruCell {
        let si = (1.0 / d_in as f64).sqrt();
        let sh = (1.0 / d_h as f64).sqrt();
        let wz = params.add(&format!("{name}.wz"), Tensor::randn(d_in, d_h, si, rng));
        let uz = params.add(&format!("{name}.uz"), Tensor::randn(d_h, d_h, sh, rng));
        let bz = params.add(&format!("{name}.bz"), Tensor::zeros(1, d_h));
        let wr = params.add(&format!("{name}.wr"), Tensor::randn(d_in, d_h, si, rng));
        let ur = params.add(&format!("{name}.ur"), Tensor::randn(d_h, d_h, sh, rng));
        let br = params.add(&format!("{name}.br"), Tensor::zeros(1, d_h));
        let wn = params.add(&format!("{name}.wn"), Tensor::randn(d_in, d_h, si, rng));
        let un = params.add(&format!("{name}.un"), Tensor::randn(d_h, d_h, sh, rng));
        let bn = params.add(&format!("{name}.bn"), Tensor::zeros(1, d_h));
        GruCell { wz, uz, bz, wr, ur, br, wn, un, bn, d_h }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var, h: Var) -> Var {
        let gate = |tape: &mut Tape, w: ParamId, u: ParamId, b: ParamId, hx: Var| {
            let a = tape.matmul(x, vars[w]);
            let c = tape.matmul(hx, vars[u]);
            let s = tape.add(a, c);
            tape.add_row_broadcast(s, vars[b])
        };
        let z_pre = gate(tape, self.wz, self.uz, self.bz, h);
        let z = tape.sigmoid(z_pre);
        let r_pre = gate(tape, self.wr, self.ur, self.br, h);
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h);
        let n_pre = gate(tape, self.wn, self.un, self.bn, rh);
        let n = tape.tanh(n_pre);
        // h' = (1 - z) * n + z * h
        let zn = tape.mul(z, n);
        let zh = tape.mul(z, h);
        let diff = tape.sub(n, zn);
        tape.add(diff, zh)
    }
}

/// Gumbel-Softmax with straight-through output: the returned `hard` Var holds
/// exact one-hot rows in the forward pass while gradients flow through the
/// tempered softmax. `noise` must be standard Gumbel draws of logits shape.
pub fn gumbel_softmax_st(tape: &mut Tape, logits: Var, noise: &Tensor, tau: f64) -> (Var, Var) {
    let soft = gumbel_softmax_soft(tape, logits, noise, tau);
    let y = tape.value(soft);
    let mut hard = Tensor::zeros(y.rows, y.cols);
    for r in 0..y.rows {
        *hard.at_mut(r, y.argmax_row(r)) = 1.0;
    }
    let st = tape.straight_through(soft, hard);
    (st, soft)
}

/// The relaxed (differentiable-everywhere) Gumbel-Softmax sample.
pub fn gumbel_softmax_soft(tape: &mut Tape, logits: Var, noise: &Tensor, tau: f64) -> Var {
    assert!(tau > 0.0);
    let nv = tape.leaf(noise.clone());
    let pert = tape.add(logits, nv);
    let scaled = tape.scale(pert, 1.0 / tau);
    tape.softmax(scaled)
}

/// Deterministic evaluation-mode discretization: argmax one-hot per row with
/// no noise.
pub fn hard_onehot(logits: &Tensor) -> Tensor {
    let mut hard = Tensor::zeros(logits.rows, logits.cols);
    for r in 0..logits.rows {
        *hard.at_mut(r, logits.argmax_row(r)) = 1.0;
    }
    hard
}

/// Softmax probabilities without a tape, for inspection paths.
pub fn softmax_plain(logits: &Tensor) -> Tensor {
    rowwise_softmax(logits)
}

/// Straight-through Bernoulli bits: forward emits 1[sigmoid(logit) > u] for
/// stored uniform noise `u`, gradients flow through the sigmoid.
pub fn bernoulli_st(tape: &mut Tape, logits: Var, noise_u: &Tensor) -> (Var, Var) {
    let p = tape.sigmoid(logits);
    let probs = tape.value(p);
    assert_eq!(probs.shape(), noise_u.shape(), "bernoulli noise shape");
    let mut hard = Tensor::zeros(probs.rows, probs.cols);
    for k in 0..probs.data.len() {
        hard.data[k] = if probs.data[k] > noise_u.data[k] { 1.0 } else { 0.0 };
    }
    let st = tape.straight_through(p, hard);
    (st, p)
}

/// Deterministic evaluation-mode bits: threshold the sigmoid at 1/2, which is
/// logit > 0.
pub fn hard_bits(logits: &Tensor) -> Tensor {
    logits.map(|x| if x > 0.0 { 1.0 } else { 0.0 })
}

pub fn sigmoid_plain(logits: &Tensor) -> Tensor {
    logits.map(sigmoid)
}

/// Samples a few elements of each listed parameter tensor and compares the
/// analytic gradient against a central finite difference of `loss`. Returns
/// the worst relative error. `loss` must be a deterministic function of the
/// parameters (fix all noise before calling).
pub fn fd_max_rel_err(
    params: &mut Params,
    ids: &[ParamId],
    analytic: &[Tensor],
    samples_per_tensor: usize,
    h: f64,
    rng: &mut ChaCha12Rng,
    mut loss: impl FnMut(&Params) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for &id in ids {
        let n = params.tensor(id).len();
        for _ in 0..samples_per_tensor.min(n) {
            let k = rng.gen_range(0..n);
            let orig = params.tensor(id).data[k];
            params.tensor_mut(id).data[k] = orig + h;
            let fp = loss(params);
            params.tensor_mut(id).data[k] = orig - h;
            let fm = loss(params);
            params.tensor_mut(id).data[k] = orig;
            let want = (fp - fm) / (2.0 * h);
            let got = analytic[id].data[k];
            let denom = want.abs().max(got.abs()).max(1e-6);
            worst = worst.max((want - got).abs() / denom);
        }
    }
    worst
}
