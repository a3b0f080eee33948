use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};

use crate::{Mat, ParamId, ParamStore};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Mat),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Gather {
        sources: Vec<Var>,
        index: Vec<(usize, usize)>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Attention {
        qkv: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<Mat>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Mat,
        count: usize,
    },
    SetNll {
        logits: Var,
        sets: Vec<Vec<usize>>,
        probs: Mat,
    },
    Bce {
        logits: Var,
        targets: Mat,
    },
}

struct Node {
    value: Value,
    op: Op,
}

const LN_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

/// A single forward pass recorded for differentiation.
///
/// Parameters are borrowed from the store rather than copied, so building a
/// graph for inference costs only the activations.
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Parameter gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Mat)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Mat)> {
        self.grads
            .iter_mut()
            .enumerate()
            .filter_map(|(i, g)| g.as_mut().map(|g| (ParamId(i), g)))
    }

    /// Euclidean norm over every gradient entry.
    pub fn global_norm(&self) -> f64 {
        self.iter()
            .map(|(_, g)| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.store.get(*id),
        }
    }

    /// Scalar value of a `(1, 1)` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar() on a non-scalar node");
        m[[0, 0]]
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    /// `a + row`, broadcasting a `(1, m)` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a single row");
        let out = self.value(a) + self.value(row);
        self.push(out, Op::AddRow(a, row))
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        self.push(out, Op::Scale(a, factor))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .mapv(|x| 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()));
        self.push(out, Op::Gelu(a))
    }

    /// Row-wise layer normalization with `(1, m)` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let m = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / m;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / m;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| v * inv);
            inv_std.push(inv);
        }
        let out = &xhat * self.value(gain) + self.value(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Builds a matrix whose row `i` is row `index[i].1` of `sources[index[i].0]`.
    ///
    /// Embedding lookups and sequence assembly (placing a projected sentence
    /// vector in front of token rows) are both expressed with this op.
    pub fn gather_rows(&mut self, sources: &[Var], index: Vec<(usize, usize)>) -> Var {
        assert!(!sources.is_empty(), "gather_rows needs a source");
        let width = self.value(sources[0]).ncols();
        let mut out = Mat::zeros((index.len(), width));
        for (i, &(src, row)) in index.iter().enumerate() {
            let sv = self.value(sources[src]);
            assert_eq!(sv.ncols(), width, "gather_rows sources differ in width");
            out.row_mut(i).assign(&sv.row(row));
        }
        self.push(
            out,
            Op::Gather {
                sources: sources.to_vec(),
                index,
            },
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols { x, start })
    }

    /// Multi-head scaled dot-product self-attention.
    ///
    /// `qkv` is `(batch * seq, 3 * width)` holding queries, keys and values
    /// side by side; the result is `(batch * seq, width)` with heads
    /// concatenated. With `causal`, position `i` attends to `0..=i` only.
    pub fn attention(&mut self, qkv: Var, batch: usize, seq: usize, heads: usize, causal: bool) -> Var {
        let qv = self.value(qkv);
        assert_eq!(qv.nrows(), batch * seq, "attention row count");
        assert_eq!(qv.ncols() % 3, 0, "attention expects packed q|k|v");
        let width = qv.ncols() / 3;
        assert_eq!(width % heads, 0, "width not divisible by heads");
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Mat::zeros((batch * seq, width));
        let mut probs = Vec::with_capacity(batch * heads);
        for b in 0..batch {
            let rows = b * seq..(b + 1) * seq;
            for h in 0..heads {
                let c = h * dh;
                let q = qv.slice(s![rows.clone(), c..c + dh]);
                let k = qv.slice(s![rows.clone(), width + c..width + c + dh]);
                let v = qv.slice(s![rows.clone(), 2 * width + c..2 * width + c + dh]);
                let mut p = q.dot(&k.t());
                for (i, mut row) in p.rows_mut().into_iter().enumerate() {
                    let visible = if causal { i + 1 } else { seq };
                    let max = row
                        .iter()
                        .take(visible)
                        .fold(f64::NEG_INFINITY, |a, &x| a.max(x * scale));
                    let mut total = 0.0;
                    for (j, x) in row.iter_mut().enumerate() {
                        if j < visible {
                            *x = (*x * scale - max).exp();
                            total += *x;
                        } else {
                            *x = 0.0;
                        }
                    }
                    row.mapv_inplace(|x| x / total);
                }
                out.slice_mut(s![rows.clone(), c..c + dh]).assign(&p.dot(&v));
                probs.push(p);
            }
        }
        self.push(
            out,
            Op::Attention {
                qkv,
                batch,
                seq,
                heads,
                probs,
            },
        )
    }

    /// Mean softmax cross-entropy over rows whose target is `Some`.
    /// Rows with `None` are masked out; an all-masked batch yields 0.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<Option<usize>>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len(), "cross_entropy target count");
        let mut probs = lv.clone();
        let mut total = 0.0;
        let mut count = 0;
        for (mut row, target) in probs.rows_mut().into_iter().zip(&targets) {
            let lse = log_sum_exp(row.iter().copied());
            if let Some(t) = *target {
                total += lse - row[t];
                count += 1;
            }
            row.mapv_inplace(|x| (x - lse).exp());
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        self.push(
            Mat::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            },
        )
    }

    /// Sum over rows of `-log sum_{w in set} softmax(row)_w`; rows with an
    /// empty set contribute exactly zero.
    pub fn set_nll(&mut self, logits: Var, sets: Vec<Vec<usize>>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), sets.len(), "set_nll set count");
        let mut probs = lv.clone();
        let mut total = 0.0;
        for (mut row, set) in probs.rows_mut().into_iter().zip(&sets) {
            let lse = log_sum_exp(row.iter().copied());
            if !set.is_empty() {
                let lse_set = log_sum_exp(set.iter().map(|&w| row[w]));
                total += lse - lse_set;
            }
            row.mapv_inplace(|x| (x - lse).exp());
        }
        self.push(Mat::from_elem((1, 1), total), Op::SetNll { logits, sets, probs })
    }

    /// Binary cross-entropy on logits, averaged over every entry.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Mat) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.dim(), targets.dim(), "bce target shape");
        let mut total = 0.0;
        Zip::from(lv).and(&targets).for_each(|&x, &y| {
            total += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        });
        let loss = total / lv.len() as f64;
        self.push(Mat::from_elem((1, 1), loss), Op::Bce { logits, targets })
    }

    /// Back-propagates from a scalar node and returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Mat>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Mat::ones((1, 1)));
        let mut out = Gradients {
            grads: vec![None; self.store.len()],
        };
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    if let Value::Param(id) = node.value {
                        accumulate(&mut out.grads[id.0], g);
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[b.0], -&g);
                    accumulate(&mut grads[a.0], g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[row.0], gr);
                    accumulate(&mut grads[a.0], g);
                }
                Op::Scale(a, f) => accumulate(&mut grads[a.0], g * *f),
                Op::Sigmoid(a) => {
                    let y = self.value(Var(i));
                    let ga = Zip::from(&g).and(y).map_collect(|&g, &y| g * y * (1.0 - y));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Tanh(a) => {
                    let y = self.value(Var(i));
                    let ga = Zip::from(&g).and(y).map_collect(|&g, &y| g * (1.0 - y * y));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let ga = Zip::from(&g).and(x).map_collect(|&g, &x| {
                        let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
                        let dt = (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x);
                        g * (0.5 * (1.0 + t) + 0.5 * x * dt)
                    });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let ggain = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gbias = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * gv;
                    let m = xhat.ncols() as f64;
                    let mut gx = Mat::zeros(xhat.dim());
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let dxr = dxhat.row(r);
                        let xr = xhat.row(r);
                        let sum_d = dxr.sum();
                        let sum_dx = dxr.dot(&xr);
                        Zip::from(gx.row_mut(r)).and(dxr).and(xr).for_each(|o, &d, &xh| {
                            *o = inv / m * (m * d - sum_d - xh * sum_dx);
                        });
                    }
                    accumulate(&mut grads[gain.0], ggain);
                    accumulate(&mut grads[bias.0], gbias);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Gather { sources, index } => {
                    let mut per_src: Vec<Option<Mat>> = vec![None; sources.len()];
                    for (r, &(src, row)) in index.iter().enumerate() {
                        let buf = per_src[src].get_or_insert_with(|| Mat::zeros(self.value(sources[src]).dim()));
                        let mut dst = buf.row_mut(row);
                        dst += &g.row(r);
                    }
                    for (src, gs) in per_src.into_iter().enumerate() {
                        if let Some(gs) = gs {
                            accumulate(&mut grads[sources[src].0], gs);
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let mut gx = Mat::zeros(self.value(*x).dim());
                    gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Attention {
                    qkv,
                    batch,
                    seq,
                    heads,
                    probs,
                } => {
                    let qv = self.value(*qkv);
                    let width = qv.ncols() / 3;
                    let dh = width / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut gqkv = Mat::zeros(qv.dim());
                    for b in 0..*batch {
                        let rows = b * seq..(b + 1) * seq;
                        for h in 0..*heads {
                            let c = h * dh;
                            let p = &probs[b * heads + h];
                            let q = qv.slice(s![rows.clone(), c..c + dh]);
                            let k = qv.slice(s![rows.clone(), width + c..width + c + dh]);
                            let v = qv.slice(s![rows.clone(), 2 * width + c..2 * width + c + dh]);
                            let go = g.slice(s![rows.clone(), c..c + dh]);
                            let gv = p.t().dot(&go);
                            let gp = go.dot(&v.t());
                            let mut gs: Array2<f64> = gp.clone();
                            for ((mut gs_row, p_row), gp_row) in gs.rows_mut().into_iter().zip(p.rows()).zip(gp.rows())
                            {
                                let dot = p_row.dot(&gp_row);
                                Zip::from(&mut gs_row)
                                    .and(p_row)
                                    .and(gp_row)
                                    .for_each(|o, &p, &d| *o = p * (d - dot) * scale);
                            }
                            let gq = gs.dot(&k);
                            let gk = gs.t().dot(&q);
                            gqkv.slice_mut(s![rows.clone(), c..c + dh]).assign(&gq);
                            gqkv.slice_mut(s![rows.clone(), width + c..width + c + dh]).assign(&gk);
                            gqkv.slice_mut(s![rows.clone(), 2 * width + c..2 * width + c + dh])
                                .assign(&gv);
                        }
                    }
                    accumulate(&mut grads[qkv.0], gqkv);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    let upstream = g[[0, 0]];
                    let mut gl = Mat::zeros(probs.dim());
                    if *count > 0 {
                        let f = upstream / *count as f64;
                        for (r, t) in targets.iter().enumerate() {
                            if let Some(t) = *t {
                                let mut row = gl.row_mut(r);
                                row.assign(&probs.row(r));
                                row[t] -= 1.0;
                                row.mapv_inplace(|x| x * f);
                            }
                        }
                    }
                    accumulate(&mut grads[logits.0], gl);
                }
                Op::SetNll { logits, sets, probs } => {
                    let upstream = g[[0, 0]];
                    let lv = self.value(*logits);
                    let mut gl = Mat::zeros(probs.dim());
                    for (r, set) in sets.iter().enumerate() {
                        if set.is_empty() {
                            continue;
                        }
                        let row_l = lv.row(r);
                        let lse_set = log_sum_exp(set.iter().map(|&w| row_l[w]));
                        let mut row = gl.row_mut(r);
                        row.assign(&probs.row(r));
                        for &w in set {
                            row[w] -= (row_l[w] - lse_set).exp();
                        }
                        row.mapv_inplace(|x| x * upstream);
                    }
                    accumulate(&mut grads[logits.0], gl);
                }
                Op::Bce { logits, targets } => {
                    let f = g[[0, 0]] / targets.len() as f64;
                    let gl = Zip::from(self.value(*logits))
                        .and(targets)
                        .map_collect(|&x, &y| (sigmoid(x) - y) * f);
                    accumulate(&mut grads[logits.0], gl);
                }
            }
        }
        out
    }
}
