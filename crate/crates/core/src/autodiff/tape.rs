use rand::Rng;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
        b_shared: bool,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax {
        x: Var,
        dims: AxisDims,
    },
    LogSoftmax {
        x: Var,
        dims: AxisDims,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Reshape(Var),
    Sum(Var),
    Dot(Var, Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
}

/// `[outer, len, inner]` view of a tensor around a reduction axis.
#[derive(Clone, Copy, Debug)]
struct AxisDims {
    outer: usize,
    len: usize,
    inner: usize,
}

impl AxisDims {
    fn new(shape: &[usize], axis: usize) -> Result<Self> {
        if axis >= shape.len() {
            return Err(Error::Contract(format!(
                "axis {axis} out of range for shape {shape:?}"
            )));
        }
        Ok(Self {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        })
    }

    /// Calls `f` with the flat indices of every lane along the axis.
    fn for_each_lane(&self, mut f: impl FnMut(&[usize])) {
        let mut idx = vec![0; self.len];
        for o in 0..self.outer {
            for j in 0..self.inner {
                for (i, slot) in idx.iter_mut().enumerate() {
                    *slot = (o * self.len + i) * self.inner + j;
                }
                f(&idx);
            }
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations in topological order for reverse-mode differentiation.
///
/// Every op appends exactly one node whose inputs are already on the tape,
/// so the node order is a valid topological order and `backward` can walk
/// it once in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Handles of every recorded value, in recording order.
    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.nodes.len()).map(Var)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf: gradients are collected for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Batched matrix product over the trailing two axes.
    ///
    /// `a` is `[.., m, k]`. `b` is `[.., k, n]` (or `[.., n, k]` when `trans_b`)
    /// with the same leading axes as `a`, or a plain matrix shared by every batch.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        let lead_a = &sa[..sa.len() - 2];
        let lead_b = &sb[..sb.len() - 2];
        let b_shared = lead_b.is_empty() && !lead_a.is_empty();
        if kb != k || !(b_shared || lead_a == lead_b) {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let batch: usize = lead_a.iter().product();
        let mut out = vec![0.0; batch * m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            for bi in 0..batch {
                let a_blk = &av[bi * m * k..(bi + 1) * m * k];
                let b_off = if b_shared { 0 } else { bi * k * n };
                let b_blk = &bv[b_off..b_off + k * n];
                let c_blk = &mut out[bi * m * n..(bi + 1) * m * n];
                if trans_b {
                    gemm_nt(a_blk, b_blk, c_blk, m, k, n);
                } else {
                    gemm_nn(a_blk, b_blk, c_blk, m, k, n);
                }
            }
        }
        let mut shape = lead_a.to_vec();
        shape.extend([m, n]);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::MatMul {
                a,
                b,
                trans_b,
                b_shared,
                batch,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), rg))
    }

    /// Adds a length-`n` vector to every row of a `[.., n]` tensor.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(bias);
        if sb.len() != 1 || sa.last() != Some(&sb[0]) {
            return Err(Error::shape("add_bias", sa, sb));
        }
        let n = sb[0];
        let bv = self.value(bias).data();
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i % n])
            .collect();
        let shape = sa.to_vec();
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddBias(a, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|x| x * c).collect();
        let shape = v.shape().to_vec();
        let rg = self.rg(a);
        self.push(
            Tensor::new(shape, data).expect("same shape"),
            Op::Scale(a, c),
            rg,
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| x.max(0.0)).collect();
        let shape = v.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::new(shape, data).expect("same shape"), Op::Relu(a), rg)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let dims = AxisDims::new(self.shape(x), axis)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        dims.for_each_lane(|idx| {
            let max = idx.iter().map(|&i| src[i]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for &i in idx {
                let e = (src[i] - max).exp();
                out[i] = e;
                total += e;
            }
            for &i in idx {
                out[i] /= total;
            }
        });
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, dims }, rg))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let dims = AxisDims::new(self.shape(x), axis)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        dims.for_each_lane(|idx| {
            let max = idx.iter().map(|&i| src[i]).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = idx.iter().map(|&i| (src[i] - max).exp()).sum();
            let log_z = max + total.ln();
            for &i in idx {
                out[i] = src[i] - log_z;
            }
        });
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::LogSoftmax { x, dims }, rg))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().ok_or_else(|| Error::shape("layer_norm", &sx, &[]))?;
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(Error::shape("layer_norm", &sx, self.shape(p)));
            }
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = xv.len() / d.max(1);
        let mut out = vec![0.0; xv.len()];
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(sx, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Gathers rows of a `[rows, d]` table; output shape is `out_shape ++ [d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], out_shape: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 || out_shape.iter().product::<usize>() != ids.len() {
            return Err(Error::shape("embedding", &st, out_shape));
        }
        let (rows, d) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!(
                "embedding id {bad} out of range for table with {rows} rows"
            )));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let mut shape = out_shape.to_vec();
        shape.push(d);
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let mut seen = vec![false; sx.len()];
        if axes.len() != sx.len() || axes.iter().any(|&a| a >= sx.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape("permute", &sx, axes));
        }
        let (data, shape) = permute_data(self.value(x).data(), &sx, axes);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `Σ a ⊙ b`, a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), rg))
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let v = self.value(x);
        let mask: Vec<f64> = (0..v.numel())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = zip_map(v.data(), &mask, |a, m| a * m);
        let shape = v.shape().to_vec();
        let rg = self.rg(x);
        self.push(
            Tensor::new(shape, data).expect("same shape"),
            Op::Dropout { x, mask },
            rg,
        )
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    /// Reverse sweep from a scalar `loss`. Each node is visited once, in
    /// reverse recording order; contributions from multiple uses are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !self.rg(loss) {
            return Err(Error::Contract(
                "loss is not connected to any trainable parameter".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        let val = |v: Var| self.nodes[v.0].value.data();

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                trans_b,
                b_shared,
                batch,
                m,
                k,
                n,
            } => {
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |da| {
                    for bi in 0..batch {
                        let g_blk = &g[bi * m * n..(bi + 1) * m * n];
                        let b_off = if b_shared { 0 } else { bi * k * n };
                        let b_blk = &bv[b_off..b_off + k * n];
                        let da_blk = &mut da[bi * m * k..(bi + 1) * m * k];
                        if trans_b {
                            gemm_nn(g_blk, b_blk, da_blk, m, n, k);
                        } else {
                            gemm_nt(g_blk, b_blk, da_blk, m, n, k);
                        }
                    }
                });
                acc(b, &mut |db| {
                    for bi in 0..batch {
                        let g_blk = &g[bi * m * n..(bi + 1) * m * n];
                        let a_blk = &av[bi * m * k..(bi + 1) * m * k];
                        let b_off = if b_shared { 0 } else { bi * k * n };
                        let db_blk = &mut db[b_off..b_off + k * n];
                        if trans_b {
                            gemm_tn(g_blk, a_blk, db_blk, m, n, k);
                        } else {
                            gemm_tn(a_blk, g_blk, db_blk, m, k, n);
                        }
                    }
                });
            }
            &Op::Add(a, b) => {
                acc(a, &mut |da| add_into(da, g));
                acc(b, &mut |db| add_into(db, g));
            }
            &Op::AddBias(a, bias) => {
                acc(a, &mut |da| add_into(da, g));
                acc(bias, &mut |db| {
                    let n = db.len();
                    for (i, gi) in g.iter().enumerate() {
                        db[i % n] += gi;
                    }
                });
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |da| {
                    for i in 0..da.len() {
                        da[i] += g[i] * bv[i];
                    }
                });
                acc(b, &mut |db| {
                    for i in 0..db.len() {
                        db[i] += g[i] * av[i];
                    }
                });
            }
            &Op::Scale(a, c) => acc(a, &mut |da| {
                for (d, gi) in da.iter_mut().zip(g) {
                    *d += c * gi;
                }
            }),
            &Op::Relu(a) => {
                let y = node.value.data();
                acc(a, &mut |da| {
                    for i in 0..da.len() {
                        if y[i] > 0.0 {
                            da[i] += g[i];
                        }
                    }
                });
            }
            &Op::Softmax { x, dims } => {
                let y = node.value.data();
                acc(x, &mut |dx| {
                    dims.for_each_lane(|idx| {
                        let s: f64 = idx.iter().map(|&i| g[i] * y[i]).sum();
                        for &i in idx {
                            dx[i] += y[i] * (g[i] - s);
                        }
                    });
                });
            }
            &Op::LogSoftmax { x, dims } => {
                let y = node.value.data();
                acc(x, &mut |dx| {
                    dims.for_each_lane(|idx| {
                        let s: f64 = idx.iter().map(|&i| g[i]).sum();
                        for &i in idx {
                            dx[i] += g[i] - y[i].exp() * s;
                        }
                    });
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gv = val(*gamma);
                let d = gv.len();
                acc(*x, &mut |dx| {
                    for (r, &rs) in rstd.iter().enumerate() {
                        let off = r * d;
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            let dh = g[off + j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[off + j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for j in 0..d {
                            let dh = g[off + j] * gv[j];
                            dx[off + j] += rs * (dh - mean_dh - xhat[off + j] * mean_dh_h);
                        }
                    }
                });
                acc(*gamma, &mut |dg| {
                    for (i, gi) in g.iter().enumerate() {
                        dg[i % d] += gi * xhat[i];
                    }
                });
                acc(*beta, &mut |db| {
                    for (i, gi) in g.iter().enumerate() {
                        db[i % d] += gi;
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = self.nodes[table.0].value.shape()[1];
                acc(*table, &mut |dt| {
                    for (row, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * d..(id + 1) * d], &g[row * d..(row + 1) * d]);
                    }
                });
            }
            Op::Permute { x, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let (back, _) = permute_data(g, node.value.shape(), &inverse);
                acc(*x, &mut |dx| add_into(dx, &back));
            }
            &Op::Reshape(x) => acc(x, &mut |dx| add_into(dx, g)),
            &Op::Sum(x) => acc(x, &mut |dx| {
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }),
            &Op::Dot(a, b) => {
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |da| {
                    for i in 0..da.len() {
                        da[i] += g[0] * bv[i];
                    }
                });
                acc(b, &mut |db| {
                    for i in 0..db.len() {
                        db[i] += g[0] * av[i];
                    }
                });
            }
            Op::Dropout { x, mask } => acc(*x, &mut |dx| {
                for i in 0..dx.len() {
                    dx[i] += g[i] * mask[i];
                }
            }),
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn permute_data(src: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(src.len());
    let mut counter = vec![0usize; rank];
    for _ in 0..src.len() {
        let offset: usize = counter.iter().zip(&strides).map(|(c, s)| c * s).sum();
        out.push(src[offset]);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            if counter[ax] < out_shape[ax] {
                break;
            }
            counter[ax] = 0;
        }
    }
    (out, out_shape)
}
