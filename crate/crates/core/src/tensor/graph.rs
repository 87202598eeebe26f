use std::collections::HashMap;

use rand::Rng;

use super::{Float, ParamId, ParamStore, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(ParamId),
    MatMul {
        a: usize,
        b: usize,
        b_trans: bool,
    },
    AddRow {
        x: usize,
        bias: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        factor: T,
    },
    Gelu {
        x: usize,
    },
    Silu {
        x: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Dropout {
        x: usize,
        mask: Vec<T>,
    },
    Attention(Box<AttentionCache<T>>),
    Gather {
        table: usize,
        index: Vec<Option<usize>>,
    },
    Scatter {
        src: usize,
        rows: Vec<usize>,
    },
    Select {
        x: usize,
        rows: Vec<usize>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Mse {
        pred: usize,
        target: Vec<T>,
    },
    Mae {
        pred: usize,
        target: Vec<T>,
    },
    Sum {
        x: usize,
    },
}

struct AttentionCache<T> {
    q: usize,
    k: usize,
    v: usize,
    heads: usize,
    batch: usize,
    seq: usize,
    /// Softmax weights before dropout, `[batch][head][seq][seq]`.
    weights: Vec<T>,
    /// Inverted-dropout multipliers with the same layout, when active.
    drop: Option<Vec<T>>,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// A recorded forward computation that can be differentiated once.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

fn gelu_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

const LN_EPS: f64 = 1e-5;

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input)
    }

    /// Records a parameter leaf; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var, b_trans: bool) -> Result<Var, TensorError> {
        let value = self.value(a).matmul(self.value(b), b_trans)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a: a.0,
                b: b.0,
                b_trans,
            },
        ))
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if bv.len() != xv.cols() {
            return Err(shape_err("add_row", format!("{:?} + {:?}", xv.shape(), bv.shape())));
        }
        let mut out = xv.clone();
        let c = out.cols();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += bv.data()[i % c];
        }
        Ok(self.push(out, Op::AddRow { x: x.0, bias: bias.0 }))
    }

    /// `x · W + b` with `W` stored as `in x out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let h = self.matmul(x, w, false)?;
        self.add_row(h, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return Err(shape_err("add", format!("{:?} + {:?}", av.shape(), bv.shape())));
        }
        let mut out = av.clone();
        for (o, &y) in out.data_mut().iter_mut().zip(bv.data()) {
            *o += y;
        }
        Ok(self.push(out, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale { x: x.0, factor })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| {
            let f = v.as_f64();
            T::from_f64_lossy(f * gelu_cdf(f))
        });
        self.push(out, Op::Gelu { x: x.0 })
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v / (T::one() + (-v).exp()));
        self.push(out, Op::Silu { x: x.0 })
    }

    /// Row-wise layer normalization followed by a learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.len() != cols || bv.len() != cols {
            return Err(shape_err("layer_norm", format!("{:?} with gain {:?}", xv.shape(), gv.shape())));
        }
        let mut xhat = vec![T::zero(); rows * cols];
        let mut rstd = vec![T::zero(); rows];
        let mut out = Tensor::zeros(xv.shape());
        let n = T::from_usize(cols).unwrap();
        let eps = T::from_f64_lossy(LN_EPS);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out.data_mut()[r * cols + c] = h * gv.data()[c] + bv.data()[c];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                rstd,
            },
        ))
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let xv = self.value(x);
        let mask: Vec<T> = (0..xv.len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let mut out = xv.clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(out, Op::Dropout { x: x.0, mask })
    }

    /// Multi-head scaled dot-product attention over a batch of sequences.
    ///
    /// `q`, `k`, `v` are `(batch * seq) x d_model`; each head sees a contiguous
    /// `d_model / heads` column slice. `key_mask[b * seq + j]` is false for
    /// padded keys, which receive zero weight.
    #[allow(clippy::too_many_arguments)]
    pub fn attention<R: Rng + ?Sized>(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        batch: usize,
        seq: usize,
        key_mask: &[bool],
        dropout: Option<(f64, &mut R)>,
    ) -> Result<Var, TensorError> {
        let d = self.value(q).cols();
        for var in [q, k, v] {
            let t = self.value(var);
            if t.rows() != batch * seq || t.cols() != d {
                return Err(shape_err("attention", format!("operand {:?} for batch {batch} x seq {seq}", t.shape())));
            }
        }
        if heads == 0 || d % heads != 0 || key_mask.len() != batch * seq {
            return Err(shape_err("attention", format!("d_model {d}, heads {heads}, mask {}", key_mask.len())));
        }
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut weights = vec![T::zero(); batch * heads * seq * seq];
        let drop: Option<Vec<T>> = dropout.filter(|(p, _)| *p > 0.0).map(|(p, rng)| {
            let keep = T::from_f64_lossy(1.0 / (1.0 - p));
            (0..weights.len())
                .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
                .collect()
        });
        let mut out = Tensor::zeros(&[batch * seq, d]);
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut qh = vec![T::zero(); seq * dh];
        let mut kh = vec![T::zero(); seq * dh];
        let mut vh = vec![T::zero(); seq * dh];
        let mut oh = vec![T::zero(); seq * dh];
        for b in 0..batch {
            let mask = &key_mask[b * seq..(b + 1) * seq];
            for h in 0..heads {
                gather_head(qv, b, seq, h, dh, &mut qh);
                gather_head(kv, b, seq, h, dh, &mut kh);
                gather_head(vv, b, seq, h, dh, &mut vh);
                let base = (b * heads + h) * seq * seq;
                let w = &mut weights[base..base + seq * seq];
                T::gemm(seq, dh, seq, scale, &qh, false, &kh, true, T::zero(), w);
                masked_softmax_rows(w, seq, seq, mask)?;
                match &drop {
                    Some(dm) => {
                        let wd: Vec<T> = w.iter().zip(&dm[base..base + seq * seq]).map(|(&a, &m)| a * m).collect();
                        T::gemm(seq, seq, dh, T::one(), &wd, false, &vh, false, T::zero(), &mut oh);
                    }
                    None => T::gemm(seq, seq, dh, T::one(), w, false, &vh, false, T::zero(), &mut oh),
                }
                scatter_head(&mut out, b, seq, h, dh, &oh);
            }
        }
        Ok(self.push(
            out,
            Op::Attention(Box::new(AttentionCache {
                q: q.0,
                k: k.0,
                v: v.0,
                heads,
                batch,
                seq,
                weights,
                drop,
            })),
        ))
    }

    /// Pre-dropout attention weights of an attention node, `[batch][head][seq][seq]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention(c) => Some(&c.weights),
            _ => None,
        }
    }

    /// Row `r` of the output is `table[index[r]]`, or zeros for `None`.
    pub fn gather(&mut self, table: Var, index: Vec<Option<usize>>) -> Result<Var, TensorError> {
        let tv = self.value(table);
        let cols = tv.cols();
        let mut out = Tensor::zeros(&[index.len(), cols]);
        for (r, idx) in index.iter().enumerate() {
            if let Some(i) = *idx {
                if i >= tv.rows() {
                    return Err(TensorError::Index { index: i, len: tv.rows() });
                }
                out.row_mut(r).copy_from_slice(tv.row(i));
            }
        }
        Ok(self.push(out, Op::Gather { table: table.0, index }))
    }

    /// Places row `i` of `src` at row `rows[i]` of a zero `total x cols` matrix.
    pub fn scatter(&mut self, src: Var, rows: Vec<usize>, total: usize) -> Result<Var, TensorError> {
        let sv = self.value(src);
        if rows.len() != sv.rows() {
            return Err(shape_err("scatter", format!("{} rows for {:?}", rows.len(), sv.shape())));
        }
        let mut out = Tensor::zeros(&[total, sv.cols()]);
        for (i, &r) in rows.iter().enumerate() {
            if r >= total {
                return Err(TensorError::Index { index: r, len: total });
            }
            out.row_mut(r).copy_from_slice(sv.row(i));
        }
        Ok(self.push(out, Op::Scatter { src: src.0, rows }))
    }

    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let mut out = Tensor::zeros(&[rows.len(), xv.cols()]);
        for (i, &r) in rows.iter().enumerate() {
            if r >= xv.rows() {
                return Err(TensorError::Index { index: r, len: xv.rows() });
            }
            out.row_mut(i).copy_from_slice(xv.row(r));
        }
        Ok(self.push(out, Op::Select { x: x.0, rows }))
    }

    /// Mean softmax cross-entropy of logit rows against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var, TensorError> {
        let lv = self.value(logits);
        let (n, c) = (lv.rows(), lv.cols());
        if targets.len() != n || n == 0 {
            return Err(shape_err("cross_entropy", format!("{} targets for {:?}", targets.len(), lv.shape())));
        }
        let mut probs = vec![T::zero(); n * c];
        let mut total = 0.0f64;
        for r in 0..n {
            let row = lv.row(r);
            let t = targets[r];
            if t >= c {
                return Err(TensorError::Index { index: t, len: c });
            }
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: f64 = row.iter().map(|&v| (v - max).as_f64().exp()).sum();
            for j in 0..c {
                probs[r * c + j] = T::from_f64_lossy((row[j] - max).as_f64().exp() / z);
            }
            total += z.ln() - (row[t] - max).as_f64();
        }
        let value = Tensor::scalar(T::from_f64_lossy(total / n as f64));
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits: logits.0,
                targets,
                probs,
            },
        ))
    }

    /// Mean squared error against a constant target of the same size.
    pub fn mse(&mut self, pred: Var, target: &[T]) -> Result<Var, TensorError> {
        let pv = self.value(pred);
        if pv.len() != target.len() || target.is_empty() {
            return Err(shape_err("mse", format!("{:?} vs {} targets", pv.shape(), target.len())));
        }
        let s: f64 = pv.data().iter().zip(target).map(|(&p, &t)| (p - t).as_f64().powi(2)).sum();
        let value = Tensor::scalar(T::from_f64_lossy(s / target.len() as f64));
        Ok(self.push(
            value,
            Op::Mse {
                pred: pred.0,
                target: target.to_vec(),
            },
        ))
    }

    /// Mean absolute error against a constant target of the same size.
    pub fn mae(&mut self, pred: Var, target: &[T]) -> Result<Var, TensorError> {
        let pv = self.value(pred);
        if pv.len() != target.len() || target.is_empty() {
            return Err(shape_err("mae", format!("{:?} vs {} targets", pv.shape(), target.len())));
        }
        let s: f64 = pv.data().iter().zip(target).map(|(&p, &t)| (p - t).as_f64().abs()).sum();
        let value = Tensor::scalar(T::from_f64_lossy(s / target.len() as f64));
        Ok(self.push(
            value,
            Op::Mae {
                pred: pred.0,
                target: target.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        self.push(Tensor::scalar(T::from_f64_lossy(s)), Op::Sum { x: x.0 })
    }

    /// Back-propagates from a scalar `loss`, adding parameter gradients into
    /// `store`, and releases the graph. Returns the loss value.
    pub fn backward(self, loss: Var, store: &mut ParamStore<T>) -> Result<T, TensorError> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(TensorError::NoForward);
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(TensorError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let loss_scalar = loss_value.data()[0];
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => store.accumulate_grad(*id, &g),
                Op::MatMul { a, b, b_trans } => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (m, k) = (av.rows(), av.cols());
                    let n = node.value.cols();
                    // dA = dC · op(B)^T
                    let ga = acc(&mut grads, *a, m * k);
                    T::gemm(m, n, k, T::one(), &g, false, bv.data(), !*b_trans, T::one(), ga);
                    if *b_trans {
                        // B is n x k: dB = dC^T · A
                        let gb = acc(&mut grads, *b, n * k);
                        T::gemm(n, m, k, T::one(), &g, true, av.data(), false, T::one(), gb);
                    } else {
                        // B is k x n: dB = A^T · dC
                        let gb = acc(&mut grads, *b, k * n);
                        T::gemm(k, m, n, T::one(), av.data(), true, &g, false, T::one(), gb);
                    }
                }
                Op::AddRow { x, bias } => {
                    let c = node.value.cols();
                    add_into(acc(&mut grads, *x, g.len()), &g);
                    let gb = acc(&mut grads, *bias, c);
                    for (j, &v) in g.iter().enumerate() {
                        gb[j % c] += v;
                    }
                }
                Op::Add { a, b } => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    add_into(acc(&mut grads, *b, g.len()), &g);
                }
                Op::Scale { x, factor } => {
                    let gx = acc(&mut grads, *x, g.len());
                    for (d, &v) in gx.iter_mut().zip(&g) {
                        *d += v * *factor;
                    }
                }
                Op::Gelu { x } => {
                    let xv = &self.nodes[*x].value;
                    let gx = acc(&mut grads, *x, g.len());
                    for ((d, &v), &xi) in gx.iter_mut().zip(&g).zip(xv.data()) {
                        let f = xi.as_f64();
                        let pdf = (-0.5 * f * f).exp() / (2.0 * std::f64::consts::PI).sqrt();
                        *d += v * T::from_f64_lossy(gelu_cdf(f) + f * pdf);
                    }
                }
                Op::Silu { x } => {
                    let xv = &self.nodes[*x].value;
                    let gx = acc(&mut grads, *x, g.len());
                    for ((d, &v), &xi) in gx.iter_mut().zip(&g).zip(xv.data()) {
                        let s = T::one() / (T::one() + (-xi).exp());
                        *d += v * s * (T::one() + xi * (T::one() - s));
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let cols = node.value.cols();
                    let rows = node.value.rows();
                    let gv = self.nodes[*gain].value.data().to_vec();
                    {
                        let gg = acc(&mut grads, *gain, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                gg[c] += g[r * cols + c] * xhat[r * cols + c];
                            }
                        }
                    }
                    {
                        let gb = acc(&mut grads, *bias, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                gb[c] += g[r * cols + c];
                            }
                        }
                    }
                    let n = T::from_usize(cols).unwrap();
                    let gx = acc(&mut grads, *x, rows * cols);
                    for r in 0..rows {
                        let mut sum_dy = T::zero();
                        let mut sum_dy_xhat = T::zero();
                        for c in 0..cols {
                            let dy = g[r * cols + c] * gv[c];
                            sum_dy += dy;
                            sum_dy_xhat += dy * xhat[r * cols + c];
                        }
                        for c in 0..cols {
                            let dy = g[r * cols + c] * gv[c];
                            let xh = xhat[r * cols + c];
                            gx[r * cols + c] += rstd[r] * (dy - sum_dy / n - xh * sum_dy_xhat / n);
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let gx = acc(&mut grads, *x, g.len());
                    for ((d, &v), &m) in gx.iter_mut().zip(&g).zip(mask) {
                        *d += v * m;
                    }
                }
                Op::Attention(cache) => self.attention_backward(cache, &g, &mut grads),
                Op::Gather { table, index } => {
                    let cols = node.value.cols();
                    let rows = self.nodes[*table].value.rows();
                    let gt = acc(&mut grads, *table, rows * cols);
                    for (r, idx) in index.iter().enumerate() {
                        if let Some(t) = *idx {
                            add_into(&mut gt[t * cols..(t + 1) * cols], &g[r * cols..(r + 1) * cols]);
                        }
                    }
                }
                Op::Scatter { src, rows } => {
                    let cols = node.value.cols();
                    let gs = acc(&mut grads, *src, rows.len() * cols);
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut gs[i * cols..(i + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                }
                Op::Select { x, rows } => {
                    let cols = node.value.cols();
                    let n = self.nodes[*x].value.len();
                    let gx = acc(&mut grads, *x, n);
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut gx[r * cols..(r + 1) * cols], &g[i * cols..(i + 1) * cols]);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let n = targets.len();
                    let c = probs.len() / n;
                    let scale = g[0] / T::from_usize(n).unwrap();
                    let gl = acc(&mut grads, *logits, n * c);
                    for r in 0..n {
                        for j in 0..c {
                            let onehot = if j == targets[r] { T::one() } else { T::zero() };
                            gl[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                }
                Op::Mse { pred, target } => {
                    let pv = &self.nodes[*pred].value;
                    let scale = g[0] * T::from_f64_lossy(2.0 / target.len() as f64);
                    let gp = acc(&mut grads, *pred, target.len());
                    for ((d, &p), &t) in gp.iter_mut().zip(pv.data()).zip(target) {
                        *d += scale * (p - t);
                    }
                }
                Op::Mae { pred, target } => {
                    let pv = &self.nodes[*pred].value;
                    let scale = g[0] / T::from_usize(target.len()).unwrap();
                    let gp = acc(&mut grads, *pred, target.len());
                    for ((d, &p), &t) in gp.iter_mut().zip(pv.data()).zip(target) {
                        let diff = p - t;
                        let sign = if diff > T::zero() {
                            T::one()
                        } else if diff < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        *d += scale * sign;
                    }
                }
                Op::Sum { x } => {
                    let n = self.nodes[*x].value.len();
                    let gx = acc(&mut grads, *x, n);
                    for d in gx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
        }
        store.mark_grads_ready();
        Ok(loss_scalar)
    }

    fn attention_backward(&self, c: &AttentionCache<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let (seq, heads) = (c.seq, c.heads);
        let d = self.nodes[c.q].value.cols();
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let (qv, kv, vv) = (&self.nodes[c.q].value, &self.nodes[c.k].value, &self.nodes[c.v].value);
        let total = c.batch * seq * d;
        let mut gq = vec![T::zero(); total];
        let mut gk = vec![T::zero(); total];
        let mut gv = vec![T::zero(); total];
        let mut qh = vec![T::zero(); seq * dh];
        let mut kh = vec![T::zero(); seq * dh];
        let mut vh = vec![T::zero(); seq * dh];
        let mut goh = vec![T::zero(); seq * dh];
        let mut tmp = vec![T::zero(); seq * dh];
        let mut dw = vec![T::zero(); seq * seq];
        let gt = Tensor::from_vec(&[c.batch * seq, d], g.to_vec()).expect("attention grad shape");
        for b in 0..c.batch {
            for h in 0..heads {
                gather_head(qv, b, seq, h, dh, &mut qh);
                gather_head(kv, b, seq, h, dh, &mut kh);
                gather_head(vv, b, seq, h, dh, &mut vh);
                gather_head(&gt, b, seq, h, dh, &mut goh);
                let base = (b * heads + h) * seq * seq;
                let w = &c.weights[base..base + seq * seq];
                let wd: Vec<T> = match &c.drop {
                    Some(m) => w.iter().zip(&m[base..base + seq * seq]).map(|(&a, &m)| a * m).collect(),
                    None => w.to_vec(),
                };
                // dV = Wd^T · dO
                T::gemm(seq, seq, dh, T::one(), &wd, true, &goh, false, T::zero(), &mut tmp);
                scatter_head_add(&mut gv, d, b, seq, h, dh, &tmp);
                // dWd = dO · V^T, then through dropout
                T::gemm(seq, dh, seq, T::one(), &goh, false, &vh, true, T::zero(), &mut dw);
                if let Some(m) = &c.drop {
                    for (x, &mm) in dw.iter_mut().zip(&m[base..base + seq * seq]) {
                        *x *= mm;
                    }
                }
                // softmax backward: dS = W ⊙ (dW - rowdot(dW, W))
                for r in 0..seq {
                    let row_w = &w[r * seq..(r + 1) * seq];
                    let row_d = &mut dw[r * seq..(r + 1) * seq];
                    let dot: T = row_w.iter().zip(row_d.iter()).map(|(&a, &b)| a * b).sum();
                    for (x, &wv) in row_d.iter_mut().zip(row_w) {
                        *x = wv * (*x - dot);
                    }
                }
                // dQ = dS · K * scale; dK = dS^T · Q * scale
                T::gemm(seq, seq, dh, scale, &dw, false, &kh, false, T::zero(), &mut tmp);
                scatter_head_add(&mut gq, d, b, seq, h, dh, &tmp);
                T::gemm(seq, seq, dh, scale, &dw, true, &qh, false, T::zero(), &mut tmp);
                scatter_head_add(&mut gk, d, b, seq, h, dh, &tmp);
            }
        }
        add_into(acc(grads, c.q, total), &gq);
        add_into(acc(grads, c.k, total), &gk);
        add_into(acc(grads, c.v, total), &gv);
    }
}

fn acc<T: Float>(grads: &mut [Option<Vec<T>>], i: usize, n: usize) -> &mut Vec<T> {
    grads[i].get_or_insert_with(|| vec![T::zero(); n])
}

fn add_into<T: Float>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn gather_head<T: Float>(x: &Tensor<T>, b: usize, seq: usize, h: usize, dh: usize, out: &mut [T]) {
    for i in 0..seq {
        let row = x.row(b * seq + i);
        out[i * dh..(i + 1) * dh].copy_from_slice(&row[h * dh..(h + 1) * dh]);
    }
}

fn scatter_head<T: Float>(x: &mut Tensor<T>, b: usize, seq: usize, h: usize, dh: usize, src: &[T]) {
    for i in 0..seq {
        let row = x.row_mut(b * seq + i);
        row[h * dh..(h + 1) * dh].copy_from_slice(&src[i * dh..(i + 1) * dh]);
    }
}

fn scatter_head_add<T: Float>(x: &mut [T], d: usize, b: usize, seq: usize, h: usize, dh: usize, src: &[T]) {
    for i in 0..seq {
        let start = (b * seq + i) * d + h * dh;
        add_into(&mut x[start..start + dh], &src[i * dh..(i + 1) * dh]);
    }
}

/// Row softmax of an `n x m` score block with masked columns forced to zero.
pub(crate) fn masked_softmax_rows<T: Float>(s: &mut [T], n: usize, m: usize, key_mask: &[bool]) -> Result<(), TensorError> {
    for r in 0..n {
        let row = &mut s[r * m..(r + 1) * m];
        let max = row
            .iter()
            .zip(key_mask)
            .filter(|(_, &keep)| keep)
            .map(|(&v, _)| v)
            .fold(T::neg_infinity(), T::max);
        if max == T::neg_infinity() {
            return Err(TensorError::DegenerateMask { row: r });
        }
        let mut z = T::zero();
        for (v, &keep) in row.iter_mut().zip(key_mask) {
            *v = if keep { (*v - max).exp() } else { T::zero() };
            z += *v;
        }
        for v in row.iter_mut() {
            *v = *v / z;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference gradient of `f` with respect to every entry of parameter `id`.
    fn numeric_grad(store: &ParamStore<f64>, id: ParamId, f: &dyn Fn(&ParamStore<f64>) -> f64) -> Vec<f64> {
        let eps = 1e-5;
        let mut s = store.clone();
        (0..store.value(id).len())
            .map(|i| {
                let orig = s.value(id).data()[i];
                s.value_mut(id).data_mut()[i] = orig + eps;
                let up = f(&s);
                s.value_mut(id).data_mut()[i] = orig - eps;
                let down = f(&s);
                s.value_mut(id).data_mut()[i] = orig;
                (up - down) / (2.0 * eps)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / (x.abs() + y.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn sum_of_parameters_has_unit_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::from_vec(&[2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let b = store.add("b", Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap());
        let unused = store.add("unused", Tensor::filled(&[2], 7.0));
        let mut g = Graph::<f64>::new();
        let va = g.param(&store, a);
        let vb = g.param(&store, b);
        let sa = g.sum(va);
        let sb = g.sum(vb);
        let loss = g.add(sa, sb).unwrap();
        let l = g.backward(loss, &mut store).unwrap();
        assert!((l - 3.1).abs() < 1e-12);
        assert!(store.grad(a).data().iter().all(|&v| v == 1.0));
        assert!(store.grad(b).data().iter().all(|&v| v == 1.0));
        assert!(store.grad(unused).data().iter().all(|&v| v == 0.0));
        assert!(store.grads_ready());
    }

    #[test]
    fn backward_errors() {
        let mut store = ParamStore::<f64>::new();
        let g = Graph::<f64>::new();
        assert_eq!(g.backward(Var(0), &mut store), Err(TensorError::NoForward));
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(x, &mut store), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn degenerate_mask_is_an_error() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::filled(&[2, 4], 0.5));
        let err = g
            .attention::<ChaCha8Rng>(x, x, x, 2, 1, 2, &[false, false], None)
            .unwrap_err();
        assert!(matches!(err, TensorError::DegenerateMask { .. }));
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let (batch, seq, d, heads) = (2usize, 3usize, 4usize, 2usize);
        let x = store.add("x", random(&mut rng, &[batch * seq, d]));
        let wq = store.add("wq", random(&mut rng, &[d, d]));
        let wk = store.add("wk", random(&mut rng, &[d, d]));
        let wv = store.add("wv", random(&mut rng, &[d, d]));
        let bias = store.add("bias", random(&mut rng, &[d]));
        let gain = store.add("gain", random(&mut rng, &[d]));
        let table = store.add("table", random(&mut rng, &[5, d]));
        let out_w = store.add("out_w", random(&mut rng, &[d, 3]));
        let key_mask = vec![true, true, false, true, false, true];

        let f = |s: &ParamStore<f64>, backward: bool| -> (f64, Option<ParamStore<f64>>) {
            let mut g = Graph::<f64>::new();
            let xv = g.param(s, x);
            let emb = g.param(s, table);
            let gathered = g.gather(emb, vec![Some(1), None, Some(4), Some(0), Some(1), None]).unwrap();
            let xin = g.add(xv, gathered).unwrap();
            let (q, k, v) = (g.param(s, wq), g.param(s, wk), g.param(s, wv));
            let q = g.matmul(xin, q, false).unwrap();
            let k = g.matmul(xin, k, false).unwrap();
            let v = g.matmul(xin, v, false).unwrap();
            let att = g.attention::<ChaCha8Rng>(q, k, v, heads, batch, seq, &key_mask, None).unwrap();
            let (gn, bn) = (g.param(s, gain), g.param(s, bias));
            let h = g.layer_norm(att, gn, bn).unwrap();
            let h = g.gelu(h);
            let b2 = g.param(s, bias);
            let h = g.add_row(h, b2).unwrap();
            let h = g.silu(h);
            let sel = g.select_rows(h, vec![0, 3, 4]).unwrap();
            let ow = g.param(s, out_w);
            let logits = g.matmul(sel, ow, false).unwrap();
            let ce = g.cross_entropy(logits, vec![2, 0, 1]).unwrap();
            let tied = g.matmul(sel, emb, true).unwrap();
            let mse = g.mse(tied, &[0.3; 15]).unwrap();
            let scattered = g.scatter(logits, vec![4, 0, 2], 6).unwrap();
            let mae = g.mae(scattered, &[0.1; 18]).unwrap();
            let t = g.add(ce, mse).unwrap();
            let t = g.scale(t, 0.7);
            let loss = g.add(t, mae).unwrap();
            if backward {
                let mut s2 = s.clone();
                s2.zero_grads();
                let l = g.backward(loss, &mut s2).unwrap();
                (l, Some(s2))
            } else {
                (g.value(loss).data()[0], None)
            }
        };
        let (_, grads) = f(&store, true);
        let grads = grads.unwrap();
        for id in store.ids() {
            let num = numeric_grad(&store, id, &|s| f(s, false).0);
            let err = rel_err(grads.grad(id).data(), &num);
            assert!(err < 1e-6, "{}: rel err {err}", store.name(id));
        }
    }

    #[test]
    fn dropout_gradients_follow_the_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let x = store.add("x", random(&mut rng, &[4, 4]));
        let run = |s: &ParamStore<f64>, seed: u64, backward: bool| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut g = Graph::<f64>::new();
            let xv = g.param(s, x);
            let h = g.dropout(xv, 0.3, &mut r);
            let a = g.attention(h, h, h, 2, 2, 2, &[true; 4], Some((0.25, &mut r))).unwrap();
            let loss = g.mse(a, &[0.2; 16]).unwrap();
            if backward {
                let mut s2 = s.clone();
                g.backward(loss, &mut s2).unwrap();
                (0.0, Some(s2))
            } else {
                (g.value(loss).data()[0], None)
            }
        };
        let (_, grads) = run(&store, 11, true);
        let num = numeric_grad(&store, x, &|s| run(s, 11, false).0);
        assert!(rel_err(grads.unwrap().grad(x).data(), &num) < 1e-6);
    }
}
