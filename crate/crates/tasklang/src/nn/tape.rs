//! Reverse-mode autodiff on a flat tape. Each op pushes one node holding its
//! forward value; `backward` walks the tape once in reverse. The op set is
//! exactly what the training objectives here need, nothing speculative.

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Min { a: Var, b: Var },
    Scale { a: Var, k: f64 },
    AddScalar { a: Var },
    /// b is 1 x cols, added to every row of a.
    AddRowBroadcast { a: Var, b: Var },
    /// m is rows x 1, multiplied across every column of a.
    MulColBroadcast { a: Var, m: Var },
    Relu { a: Var },
    Tanh { a: Var },
    Sigmoid { a: Var },
    Exp { a: Var },
    Clamp { a: Var, lo: f64, hi: f64 },
    Softmax { a: Var },
    LogSoftmax { a: Var },
    ConcatCols { a: Var, b: Var },
    SliceCols { a: Var, from: usize },
    GatherRows { a: Var, idx: Vec<usize> },
    PickPerRow { a: Var, idx: Vec<usize> },
    RowSum { a: Var },
    MeanAll { a: Var },
    /// Forward emits `hard`; backward passes the gradient to `soft`
    /// untouched (straight-through estimator).
    StraightThrough { soft: Var },
    /// Per-element binary cross-entropy on logits against constant targets.
    BceWithLogits { logits: Var, targets: Tensor },
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "scalar() on non 1x1 tensor");
        t.data[0]
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input. Constants and trainable parameters look the same
    /// on the tape; the caller keeps hold of the Vars whose gradients it
    /// wants to read after `backward`.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul { a, b }, v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "add shape");
        let mut v = ta.clone();
        v.add_assign(tb);
        self.push(Op::Add { a, b }, v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "sub shape");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(Op::Sub { a, b }, v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "mul shape");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(Op::Mul { a, b }, v)
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "min shape");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x.min(*y)).collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(Op::Min { a, b }, v)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push(Op::Scale { a, k }, v)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x + k);
        self.push(Op::AddScalar { a }, v)
    }

    pub fn add_row_broadcast(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(tb.rows, 1, "bias must be a row vector");
        assert_eq!(ta.cols, tb.cols, "bias width");
        let mut v = ta.clone();
        for r in 0..v.rows {
            for c in 0..v.cols {
                v.data[r * v.cols + c] += tb.data[c];
            }
        }
        self.push(Op::AddRowBroadcast { a, b }, v)
    }

    pub fn mul_col_broadcast(&mut self, a: Var, m: Var) -> Var {
        let (ta, tm) = (self.value(a), self.value(m));
        assert_eq!(tm.cols, 1, "mask must be a column vector");
        assert_eq!(ta.rows, tm.rows, "mask height");
        let mut v = ta.clone();
        for r in 0..v.rows {
            let k = tm.data[r];
            for c in 0..v.cols {
                v.data[r * v.cols + c] *= k;
            }
        }
        self.push(Op::MulColBroadcast { a, m }, v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu { a }, v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh { a }, v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid { a }, v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp { a }, v)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp { a, lo, hi }, v)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = rowwise_softmax(self.value(a));
        self.push(Op::Softmax { a }, v)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut v = ta.clone();
        for r in 0..ta.rows {
            let row = ta.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for c in 0..ta.cols {
                v.data[r * ta.cols + c] = row[c] - lse;
            }
        }
        self.push(Op::LogSoftmax { a }, v)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rows, tb.rows, "concat rows");
        let mut v = Tensor::zeros(ta.rows, ta.cols + tb.cols);
        for r in 0..ta.rows {
            let dst = &mut v.data[r * v.cols..(r + 1) * v.cols];
            dst[..ta.cols].copy_from_slice(ta.row(r));
            dst[ta.cols..].copy_from_slice(tb.row(r));
        }
        self.push(Op::ConcatCols { a, b }, v)
    }

    pub fn slice_cols(&mut self, a: Var, from: usize, to: usize) -> Var {
        let ta = self.value(a);
        assert!(from < to && to <= ta.cols, "slice bounds");
        let mut v = Tensor::zeros(ta.rows, to - from);
        for r in 0..ta.rows {
            v.data[r * v.cols..(r + 1) * v.cols].copy_from_slice(&ta.row(r)[from..to]);
        }
        self.push(Op::SliceCols { a, from }, v)
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let ta = self.value(a);
        let mut v = Tensor::zeros(idx.len(), ta.cols);
        for (r, &i) in idx.iter().enumerate() {
            assert!(i < ta.rows, "gather index");
            v.data[r * v.cols..(r + 1) * v.cols].copy_from_slice(ta.row(i));
        }
        self.push(Op::GatherRows { a, idx }, v)
    }

    pub fn pick_per_row(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let ta = self.value(a);
        assert_eq!(idx.len(), ta.rows, "pick index height");
        let mut v = Tensor::zeros(ta.rows, 1);
        for (r, &i) in idx.iter().enumerate() {
            assert!(i < ta.cols, "pick index width");
            v.data[r] = ta.at(r, i);
        }
        self.push(Op::PickPerRow { a, idx }, v)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut v = Tensor::zeros(ta.rows, 1);
        for r in 0..ta.rows {
            v.data[r] = ta.row(r).iter().sum();
        }
        self.push(Op::RowSum { a }, v)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mean = ta.data.iter().sum::<f64>() / ta.len() as f64;
        self.push(Op::MeanAll { a }, Tensor::from_vec(1, 1, vec![mean]))
    }

    pub fn straight_through(&mut self, soft: Var, hard: Tensor) -> Var {
        assert_eq!(self.value(soft).shape(), hard.shape(), "straight-through shape");
        self.push(Op::StraightThrough { soft }, hard)
    }

    pub fn bce_with_logits(&mut self, logits: Var, targets: Tensor) -> Var {
        let tl = self.value(logits);
        assert_eq!(tl.shape(), targets.shape(), "bce shape");
        let data = tl
            .data
            .iter()
            .zip(&targets.data)
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .collect();
        let v = Tensor::from_vec(tl.rows, tl.cols, data);
        self.push(Op::BceWithLogits { logits, targets }, v)
    }

    /// Backpropagates from a scalar loss. Returns one gradient tensor per
    /// node; index with the Vars handed out during the forward pass.
    pub fn backward(&self, loss: Var) -> Vec<Tensor> {
        assert_eq!(self.value(loss).len(), 1, "backward from non-scalar");
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.rows, n.value.cols))
            .collect();
        grads[loss.0].data[0] = 1.0;
        for i in (0..=loss.0).rev() {
            if grads[i].data.iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = grads[i].clone();
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    grads[a.0].add_assign(&ga);
                    grads[b.0].add_assign(&gb);
                }
                Op::Add { a, b } => {
                    grads[a.0].add_assign(&g);
                    grads[b.0].add_assign(&g);
                }
                Op::Sub { a, b } => {
                    grads[a.0].add_assign(&g);
                    for (x, y) in grads[b.0].data.iter_mut().zip(&g.data) {
                        *x -= y;
                    }
                }
                Op::Mul { a, b } => {
                    let ta = self.value(*a).clone();
                    let tb = self.value(*b).clone();
                    for ((x, y), gv) in grads[a.0].data.iter_mut().zip(&tb.data).zip(&g.data) {
                        *x += y * gv;
                    }
                    for ((x, y), gv) in grads[b.0].data.iter_mut().zip(&ta.data).zip(&g.data) {
                        *x += y * gv;
                    }
                }
                Op::Min { a, b } => {
                    let ta = self.value(*a).clone();
                    let tb = self.value(*b).clone();
                    for k in 0..g.data.len() {
                        if ta.data[k] <= tb.data[k] {
                            grads[a.0].data[k] += g.data[k];
                        } else {
                            grads[b.0].data[k] += g.data[k];
                        }
                    }
                }
                Op::Scale { a, k } => {
                    for (x, gv) in grads[a.0].data.iter_mut().zip(&g.data) {
                        *x += k * gv;
                    }
                }
                Op::AddScalar { a } => grads[a.0].add_assign(&g),
                Op::AddRowBroadcast { a, b } => {
                    grads[a.0].add_assign(&g);
                    let cols = g.cols;
                    for r in 0..g.rows {
                        for c in 0..cols {
                            grads[b.0].data[c] += g.data[r * cols + c];
                        }
                    }
                }
                Op::MulColBroadcast { a, m } => {
                    let ta = self.value(*a).clone();
                    let tm = self.value(*m).clone();
                    let cols = g.cols;
                    for r in 0..g.rows {
                        let k = tm.data[r];
                        let mut dot = 0.0;
                        for c in 0..cols {
                            grads[a.0].data[r * cols + c] += k * g.data[r * cols + c];
                            dot += ta.data[r * cols + c] * g.data[r * cols + c];
                        }
                        grads[m.0].data[r] += dot;
                    }
                }
                Op::Relu { a } => {
                    let ta = self.value(*a).clone();
                    for (k, gv) in g.data.iter().enumerate() {
                        if ta.data[k] > 0.0 {
                            grads[a.0].data[k] += gv;
                        }
                    }
                }
                Op::Tanh { a } => {
                    let y = &self.nodes[i].value.clone();
                    for (k, gv) in g.data.iter().enumerate() {
                        grads[a.0].data[k] += (1.0 - y.data[k] * y.data[k]) * gv;
                    }
                }
                Op::Sigmoid { a } => {
                    let y = &self.nodes[i].value.clone();
                    for (k, gv) in g.data.iter().enumerate() {
                        grads[a.0].data[k] += y.data[k] * (1.0 - y.data[k]) * gv;
                    }
                }
                Op::Exp { a } => {
                    let y = &self.nodes[i].value.clone();
                    for (k, gv) in g.data.iter().enumerate() {
                        grads[a.0].data[k] += y.data[k] * gv;
                    }
                }
                Op::Clamp { a, lo, hi } => {
                    let ta = self.value(*a).clone();
                    for (k, gv) in g.data.iter().enumerate() {
                        if ta.data[k] > *lo && ta.data[k] < *hi {
                            grads[a.0].data[k] += gv;
                        }
                    }
                }
                Op::Softmax { a } => {
                    // dL/dx = y * (g - sum(g * y)) per row.
                    let y = self.nodes[i].value.clone();
                    let cols = y.cols;
                    for r in 0..y.rows {
                        let mut dot = 0.0;
                        for c in 0..cols {
                            dot += g.data[r * cols + c] * y.data[r * cols + c];
                        }
                        for c in 0..cols {
                            grads[a.0].data[r * cols + c] +=
                                y.data[r * cols + c] * (g.data[r * cols + c] - dot);
                        }
                    }
                }
                Op::LogSoftmax { a } => {
                    // dL/dx = g - softmax(x) * sum(g) per row.
                    let y = self.nodes[i].value.clone();
                    let cols = y.cols;
                    for r in 0..y.rows {
                        let gsum: f64 = g.data[r * cols..(r + 1) * cols].iter().sum();
                        for c in 0..cols {
                            grads[a.0].data[r * cols + c] +=
                                g.data[r * cols + c] - y.data[r * cols + c].exp() * gsum;
                        }
                    }
                }
                Op::ConcatCols { a, b } => {
                    let ca = self.value(*a).cols;
                    let cols = g.cols;
                    for r in 0..g.rows {
                        for c in 0..ca {
                            grads[a.0].data[r * ca + c] += g.data[r * cols + c];
                        }
                        let cb = cols - ca;
                        for c in 0..cb {
                            grads[b.0].data[r * cb + c] += g.data[r * cols + ca + c];
                        }
                    }
                }
                Op::SliceCols { a, from } => {
                    let ca = self.value(*a).cols;
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            grads[a.0].data[r * ca + from + c] += g.data[r * g.cols + c];
                        }
                    }
                }
                Op::GatherRows { a, idx } => {
                    let cols = g.cols;
                    for (r, &src) in idx.iter().enumerate() {
                        for c in 0..cols {
                            grads[a.0].data[src * cols + c] += g.data[r * cols + c];
                        }
                    }
                }
                Op::PickPerRow { a, idx } => {
                    let ca = self.value(*a).cols;
                    for (r, &c) in idx.iter().enumerate() {
                        grads[a.0].data[r * ca + c] += g.data[r];
                    }
                }
                Op::RowSum { a } => {
                    let ca = self.value(*a).cols;
                    for r in 0..g.rows {
                        for c in 0..ca {
                            grads[a.0].data[r * ca + c] += g.data[r];
                        }
                    }
                }
                Op::MeanAll { a } => {
                    let n = self.value(*a).len() as f64;
                    let gv = g.data[0] / n;
                    for x in grads[a.0].data.iter_mut() {
                        *x += gv;
                    }
                }
                Op::StraightThrough { soft } => grads[soft.0].add_assign(&g),
                Op::BceWithLogits { logits, targets } => {
                    let x = self.value(*logits).clone();
                    for (k, gv) in g.data.iter().enumerate() {
                        grads[logits.0].data[k] += (sigmoid(x.data[k]) - targets.data[k]) * gv;
                    }
                }
            }
        }
        grads
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn rowwise_softmax(t: &Tensor) -> Tensor {
    let mut v = t.clone();
    for r in 0..t.rows {
        let row = t.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..t.cols {
            let e = (row[c] - m).exp();
            v.data[r * t.cols + c] = e;
            sum += e;
        }
        for c in 0..t.cols {
            v.data[r * t.cols + c] /= sum;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    /// Central finite difference of a scalar loss with respect to one input
    /// element, with the loss rebuilt from scratch each evaluation.
    fn fd(loss: &mut dyn FnMut(&Tensor) -> f64, x: &Tensor, k: usize, h: f64) -> f64 {
        let mut xp = x.clone();
        xp.data[k] += h;
        let fp = loss(&xp);
        let mut xm = x.clone();
        xm.data[k] -= h;
        let fm = loss(&xm);
        (fp - fm) / (2.0 * h)
    }

    fn max_rel_err(loss: &mut dyn FnMut(&Tensor) -> f64, x: &Tensor, analytic: &Tensor) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..x.len() {
            let want = fd(loss, x, k, 1e-5);
            let got = analytic.data[k];
            let denom = want.abs().max(got.abs()).max(1e-6);
            worst = worst.max((want - got).abs() / denom);
        }
        worst
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        let mut r = rng::rng_from(11, "tape-test", 0);
        let x0 = Tensor::randn(3, 4, 1.0, &mut r);
        let w0 = Tensor::randn(4, 5, 0.7, &mut r);
        let b0 = Tensor::randn(1, 5, 0.3, &mut r);
        let mask = Tensor::from_vec(3, 1, vec![1.0, 0.5, 2.0]);

        let build = |x: &Tensor, w: &Tensor, b: &Tensor| -> (Tape, Var, Var, Var, Var) {
            let mut t = Tape::new();
            let xv = t.leaf(x.clone());
            let wv = t.leaf(w.clone());
            let bv = t.leaf(b.clone());
            let mv = t.leaf(mask.clone());
            let h = t.matmul(xv, wv);
            let h = t.add_row_broadcast(h, bv);
            let h = t.tanh(h);
            let h = t.mul_col_broadcast(h, mv);
            let s = t.softmax(h);
            let l = t.log_softmax(h);
            let ent = t.mul(s, l);
            let row = t.row_sum(ent);
            let picked = t.pick_per_row(h, vec![1, 0, 3]);
            let cat = t.concat_cols(row, picked);
            let sl = t.slice_cols(cat, 0, 2);
            let sq = t.mul(sl, sl);
            let loss = t.mean_all(sq);
            (t, loss, xv, wv, bv)
        };

        let (t, loss, xv, wv, bv) = build(&x0, &w0, &b0);
        let grads = t.backward(loss);

        let mut fx = |x: &Tensor| {
            let (t, l, ..) = build(x, &w0, &b0);
            t.scalar(l)
        };
        assert!(max_rel_err(&mut fx, &x0, &grads[xv.0]) < 1e-5);
        let mut fw = |w: &Tensor| {
            let (t, l, ..) = build(&x0, w, &b0);
            t.scalar(l)
        };
        assert!(max_rel_err(&mut fw, &w0, &grads[wv.0]) < 1e-5);
        let mut fb = |b: &Tensor| {
            let (t, l, ..) = build(&x0, &w0, b);
            t.scalar(l)
        };
        assert!(max_rel_err(&mut fb, &b0, &grads[bv.0]) < 1e-5);
    }

    #[test]
    fn activations_match_finite_differences() {
        let mut r = rng::rng_from(5, "tape-test", 1);
        // Keep away from relu/clamp kinks.
        let x0 = Tensor::from_vec(
            2,
            3,
            (0..6).map(|_| {
                let v: f64 = r.gen_range(0.2..1.5);
                if r.gen::<bool>() { v } else { -v }
            }).collect(),
        );
        let build = |x: &Tensor| -> (Tape, Var, Var) {
            let mut t = Tape::new();
            let xv = t.leaf(x.clone());
            let a = t.relu(xv);
            let b = t.sigmoid(xv);
            let c = t.exp(xv);
            let d = t.clamp(xv, -1.2, 1.2);
            let ab = t.mul(a, b);
            let cd = t.min(c, d);
            let s = t.add(ab, cd);
            let s2 = t.scale(s, 0.7);
            let s3 = t.add_scalar(s2, 0.1);
            let gathered = t.gather_rows(s3, vec![0, 1, 1]);
            let loss = t.mean_all(gathered);
            (t, loss, xv)
        };
        let (t, loss, xv) = build(&x0);
        let grads = t.backward(loss);
        let mut f = |x: &Tensor| {
            let (t, l, _) = build(x);
            t.scalar(l)
        };
        assert!(max_rel_err(&mut f, &x0, &grads[xv.0]) < 1e-5);
    }

    #[test]
    fn bce_with_logits_is_stable_and_correct() {
        let logits = Tensor::from_vec(1, 4, vec![-40.0, 40.0, 0.0, 1.5]);
        let targets = Tensor::from_vec(1, 4, vec![0.0, 1.0, 1.0, 0.0]);
        let mut t = Tape::new();
        let lv = t.leaf(logits.clone());
        let bce = t.bce_with_logits(lv, targets.clone());
        let loss = t.mean_all(bce);
        assert!(t.scalar(loss).is_finite());
        // Element [0,2]: logit 0 against target 1 costs ln 2.
        assert!((t.value(bce).at(0, 2) - std::f64::consts::LN_2).abs() < 1e-12);
        let grads = t.backward(loss);
        // d/dx = (sigmoid(x) - t) / n.
        let want = (sigmoid(1.5) - 0.0) / 4.0;
        assert!((grads[lv.0].at(0, 3) - want).abs() < 1e-12);
    }

    #[test]
    fn straight_through_forwards_hard_and_backprops_soft() {
        let logits = Tensor::from_vec(2, 3, vec![0.1, 2.0, -1.0, 0.5, 0.4, 0.3]);
        let mut t = Tape::new();
        let lv = t.leaf(logits);
        let soft = t.softmax(lv);
        let mut hard = Tensor::zeros(2, 3);
        for r in 0..2 {
            let c = t.value(soft).argmax_row(r);
            *hard.at_mut(r, c) = 1.0;
        }
        let st = t.straight_through(soft, hard.clone());
        assert_eq!(t.value(st), &hard);
        let picked = t.pick_per_row(st, vec![1, 0]);
        let loss = t.mean_all(picked);
        let grads = t.backward(loss);
        // Gradient reaches the logits through the soft path.
        assert!(grads[lv.0].data.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn shared_parameter_accumulates_gradient_from_both_uses() {
        let w = Tensor::from_vec(2, 2, vec![0.3, -0.2, 0.5, 0.1]);
        let x1 = Tensor::from_vec(1, 2, vec![1.0, 2.0]);
        let x2 = Tensor::from_vec(1, 2, vec![-0.5, 0.7]);
        let build = |w: &Tensor| -> (Tape, Var, Var) {
            let mut t = Tape::new();
            let wv = t.leaf(w.clone());
            let a = t.leaf(x1.clone());
            let b = t.leaf(x2.clone());
            let ya = t.matmul(a, wv);
            let yb = t.matmul(b, wv);
            let s = t.add(ya, yb);
            let sq = t.mul(s, s);
            let loss = t.mean_all(sq);
            (t, loss, wv)
        };
        let (t, loss, wv) = build(&w);
        let grads = t.backward(loss);
        let mut f = |w: &Tensor| {
            let (t, l, _) = build(w);
            t.scalar(l)
        };
        for k in 0..w.len() {
            let want = fd(&mut f, &w, k, 1e-6);
            assert!((grads[wv.0].data[k] - want).abs() < 1e-6);
        }
    }
}
