//! Dense 2-D tensors with a reverse-mode tape.
//!
//! Every op evaluates eagerly and records enough to run its adjoint. A
//! [`Graph`] is built per forward pass and discarded after `backward`.

use std::rc::Rc;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `out = Aop · Bop` where each operand is read through its row and column
/// strides, so transposed views cost nothing.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize) -> Tensor {
    let mut out = Tensor::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    // SAFETY: the strides describe in-bounds views of `a` (m×k) and `b`
    // (k×n), and `out` is a fresh contiguous m×n buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// `a (r×k) · b (k×c)`
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    gemm(a.rows, a.cols, b.cols, &a.data, a.cols as isize, 1, &b.data, b.cols as isize, 1)
}

/// `a (r×k) · bᵀ` with `b (c×k)`
pub fn matmul_bt(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.cols, "matmul_bt shape mismatch");
    gemm(a.rows, a.cols, b.rows, &a.data, a.cols as isize, 1, &b.data, 1, b.cols as isize)
}

/// `aᵀ · b` with `a (r×k)`, `b (r×c)`
pub fn matmul_at(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows, b.rows, "matmul_at shape mismatch");
    gemm(a.cols, a.rows, b.cols, &a.data, 1, a.cols as isize, &b.data, b.cols as isize, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Per-row rotation angles for rotary encoding: `rows × pairs` cos and sin.
#[derive(Debug, Clone)]
pub struct RotaryAngles {
    pub pairs: usize,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Silu(Var),
    SoftmaxRows(Var),
    LayerNorm(Var, Vec<f64>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Rc<Vec<usize>>),
    Rotary(Var, Rc<RotaryAngles>),
    MaskedMse(Var, Rc<Tensor>, Rc<Vec<bool>>, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    /// Some parameter lies upstream.
    needs_grad: bool,
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => Vec::new(),
            Op::MatMul(a, b) | Op::MatMulBt(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Silu(a)
            | Op::SoftmaxRows(a)
            | Op::LayerNorm(a, _)
            | Op::SliceCols(a, _)
            | Op::SliceRows(a, _)
            | Op::GatherRows(a, _)
            | Op::Rotary(a, _)
            | Op::MaskedMse(a, ..) => vec![*a],
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
        }
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

const LN_EPS: f64 = 1e-6;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = matches!(op, Op::Param(_)) || op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows, t.cols)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf whose gradient is reported under `id` by [`Graph::param_grads`].
    pub fn param(&mut self, id: usize, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = matmul_bt(self.value(a), self.value(b));
        self.push(v, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "add shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let v = Tensor::from_vec(x.rows, x.cols, data);
        self.push(v, Op::Add(a, b))
    }

    /// Adds the single row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (x, b) = (self.value(a), self.value(bias));
        assert!(b.rows == 1 && b.cols == x.cols, "add_row shape mismatch");
        let mut v = x.clone();
        for r in 0..v.rows {
            for (o, bb) in v.row_mut(r).iter_mut().zip(&b.data) {
                *o += bb;
            }
        }
        self.push(v, Op::AddRow(a, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "mul shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let v = Tensor::from_vec(x.rows, x.cols, data);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let v = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|p| p * s).collect());
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let v = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|p| p + s).collect());
        self.push(v, Op::AddScalar(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|p| p * sigmoid(*p)).collect());
        self.push(v, Op::Silu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows {
            let row = v.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Per-row normalization to zero mean and unit variance, no affine.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        let mut inv_std = Vec::with_capacity(v.rows);
        let n = v.cols as f64;
        for r in 0..v.rows {
            let row = v.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(v, Op::LayerNorm(a, inv_std))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols, "slice_cols out of range");
        let mut v = Tensor::zeros(x.rows, len);
        for r in 0..x.rows {
            v.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let x = self.value(*p);
            assert_eq!(x.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                v.row_mut(r)[off..off + x.cols].copy_from_slice(x.row(r));
            }
            off += x.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.rows, "slice_rows out of range");
        let v = Tensor::from_vec(len, x.cols, x.data[start * x.cols..(start + len) * x.cols].to_vec());
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let x = self.value(*p);
            assert_eq!(x.cols, cols, "concat_rows col mismatch");
            data.extend_from_slice(&x.data);
            rows += x.rows;
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let x = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * x.cols);
        for &i in idx.iter() {
            data.extend_from_slice(x.row(i));
        }
        let v = Tensor::from_vec(idx.len(), x.cols, data);
        self.push(v, Op::GatherRows(a, idx))
    }

    /// Rotates adjacent channel pairs `(2p, 2p+1)` of each row by its angles.
    pub fn rotary(&mut self, a: Var, angles: Rc<RotaryAngles>) -> Var {
        let mut v = self.value(a).clone();
        assert_eq!(v.cols, 2 * angles.pairs, "rotary width mismatch");
        assert_eq!(angles.cos.len(), v.rows * angles.pairs, "rotary rows mismatch");
        for r in 0..v.rows {
            let (c, s) = (&angles.cos[r * angles.pairs..], &angles.sin[r * angles.pairs..]);
            let row = v.row_mut(r);
            for p in 0..angles.pairs {
                let (x0, x1) = (row[2 * p], row[2 * p + 1]);
                row[2 * p] = x0 * c[p] - x1 * s[p];
                row[2 * p + 1] = x0 * s[p] + x1 * c[p];
            }
        }
        self.push(v, Op::Rotary(a, angles))
    }

    /// Mean squared error over the rows where `mask` is true.
    pub fn masked_mse(&mut self, pred: Var, target: Rc<Tensor>, mask: Rc<Vec<bool>>) -> Var {
        let p = self.value(pred);
        assert_eq!((p.rows, p.cols), (target.rows, target.cols), "mse shape mismatch");
        assert_eq!(mask.len(), p.rows, "mse mask length mismatch");
        let mut sum = 0.0;
        let mut count = 0;
        for r in (0..p.rows).filter(|r| mask[*r]) {
            for (a, b) in p.row(r).iter().zip(target.row(r)) {
                sum += (a - b) * (a - b);
            }
            count += p.cols;
        }
        let count = count.max(1);
        self.push(Tensor::from_vec(1, 1, vec![sum / count as f64]), Op::MaskedMse(pred, target, mask, count))
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Back-propagates from the scalar `out`.
    pub fn backward(&mut self, out: Var) {
        assert_eq!(self.shape(out), (1, 1), "backward needs a scalar output");
        self.grads = vec![None; self.nodes.len()];
        self.grads[out.0] = Some(Tensor::from_vec(1, 1, vec![1.0]));
        for i in (0..=out.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.propagate(i, &g);
            }
            self.grads[i] = Some(g);
        }
    }

    fn propagate(&mut self, i: usize, g: &Tensor) {
        // Adjoints are computed against immutable borrows of node values,
        // then accumulated.
        let mut out: Vec<(Var, Tensor)> = Vec::new();
        {
            let node = &self.nodes[i];
            let val = |v: Var| &self.nodes[v.0].value;
            let need = |v: Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    if need(*a) {
                        out.push((*a, matmul_bt(g, val(*b))));
                    }
                    if need(*b) {
                        out.push((*b, matmul_at(val(*a), g)));
                    }
                }
                Op::MatMulBt(a, b) => {
                    if need(*a) {
                        out.push((*a, matmul(g, val(*b))));
                    }
                    if need(*b) {
                        out.push((*b, matmul_at(g, val(*a))));
                    }
                }
                Op::Add(a, b) => {
                    out.push((*a, g.clone()));
                    out.push((*b, g.clone()));
                }
                Op::AddRow(a, b) => {
                    out.push((*a, g.clone()));
                    let mut gb = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, x) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    out.push((*b, gb));
                }
                Op::Mul(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    let ga = g.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
                    let gb = g.data.iter().zip(&x.data).map(|(p, q)| p * q).collect();
                    out.push((*a, Tensor::from_vec(g.rows, g.cols, ga)));
                    out.push((*b, Tensor::from_vec(g.rows, g.cols, gb)));
                }
                Op::Scale(a, s) => {
                    out.push((*a, Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|p| p * s).collect())));
                }
                Op::AddScalar(a) => out.push((*a, g.clone())),
                Op::Silu(a) => {
                    let x = val(*a);
                    let d = x
                        .data
                        .iter()
                        .zip(&g.data)
                        .map(|(x, gg)| {
                            let s = sigmoid(*x);
                            gg * s * (1.0 + x * (1.0 - s))
                        })
                        .collect();
                    out.push((*a, Tensor::from_vec(g.rows, g.cols, d)));
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = Tensor::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(p, q)| p * q).sum();
                        for ((o, yy), gg) in d.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                            *o = yy * (gg - dot);
                        }
                    }
                    out.push((*a, d));
                }
                Op::LayerNorm(a, inv_std) => {
                    let y = &node.value;
                    let n = g.cols as f64;
                    let mut d = Tensor::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let mg = g.row(r).iter().sum::<f64>() / n;
                        let mgy = g.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum::<f64>() / n;
                        for ((o, yy), gg) in d.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                            *o = inv_std[r] * (gg - mg - yy * mgy);
                        }
                    }
                    out.push((*a, d));
                }
                Op::SliceCols(a, start) => {
                    let x = val(*a);
                    let mut d = Tensor::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        d.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    out.push((*a, d));
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let cols = val(*p).cols;
                        let mut d = Tensor::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        off += cols;
                        out.push((*p, d));
                    }
                }
                Op::SliceRows(a, start) => {
                    let x = val(*a);
                    let mut d = Tensor::zeros(x.rows, x.cols);
                    d.data[start * x.cols..(start + g.rows) * x.cols].copy_from_slice(&g.data);
                    out.push((*a, d));
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let rows = val(*p).rows;
                        let d = Tensor::from_vec(rows, g.cols, g.data[off * g.cols..(off + rows) * g.cols].to_vec());
                        off += rows;
                        out.push((*p, d));
                    }
                }
                Op::GatherRows(a, idx) => {
                    let x = val(*a);
                    let mut d = Tensor::zeros(x.rows, x.cols);
                    for (r, &src) in idx.iter().enumerate() {
                        for (o, gg) in d.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o += gg;
                        }
                    }
                    out.push((*a, d));
                }
                Op::Rotary(a, angles) => {
                    let mut d = g.clone();
                    for r in 0..d.rows {
                        let (c, s) = (&angles.cos[r * angles.pairs..], &angles.sin[r * angles.pairs..]);
                        let row = d.row_mut(r);
                        for p in 0..angles.pairs {
                            let (g0, g1) = (row[2 * p], row[2 * p + 1]);
                            row[2 * p] = g0 * c[p] + g1 * s[p];
                            row[2 * p + 1] = -g0 * s[p] + g1 * c[p];
                        }
                    }
                    out.push((*a, d));
                }
                Op::MaskedMse(p, target, mask, count) => {
                    let x = val(*p);
                    let scale = 2.0 * g.data[0] / *count as f64;
                    let mut d = Tensor::zeros(x.rows, x.cols);
                    for r in (0..x.rows).filter(|r| mask[*r]) {
                        for ((o, a), b) in d.row_mut(r).iter_mut().zip(x.row(r)).zip(target.row(r)) {
                            *o = scale * (a - b);
                        }
                    }
                    out.push((*p, d));
                }
            }
        }
        for (v, t) in out {
            if self.nodes[v.0].needs_grad {
                self.accumulate(v, t);
            }
        }
    }

    /// Gradients of parameter leaves after [`Graph::backward`], summed per id.
    pub fn param_grads(&self) -> Vec<(usize, &Tensor)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => self.grads.get(i).and_then(|g| g.as_ref()).map(|g| (id, g)),
                _ => None,
            })
            .collect()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Checks d(loss)/d(input) of `build` against central differences.
    fn check(build: impl Fn(&mut Graph, Var) -> Var, input: Tensor) {
        let mut g = Graph::new();
        let x = g.param(0, &input);
        let y = build(&mut g, x);
        g.backward(y);
        let analytic = g.grad(x).cloned().unwrap_or_else(|| Tensor::zeros(input.rows, input.cols));
        let h = 1e-6;
        for i in 0..input.len() {
            let eval = |delta: f64| {
                let mut t = input.clone();
                t.data[i] += delta;
                let mut g = Graph::new();
                let x = g.constant(t);
                let y = build(&mut g, x);
                g.value(y).data[0]
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (numeric - analytic.data[i]).abs();
            assert!(err < 1e-6 * (1.0 + numeric.abs()), "element {i}: {numeric} vs {}", analytic.data[i]);
        }
    }

    fn sum_sq(g: &mut Graph, v: Var, seed: u64) -> Var {
        // Random projection target so every output element matters.
        let (r, c) = g.shape(v);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Rc::new(rand_tensor(&mut rng, r, c));
        g.masked_mse(v, t, Rc::new(vec![true; r]))
    }

    fn transpose(t: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(t.cols, t.rows);
        for i in 0..t.rows {
            for j in 0..t.cols {
                out.data[j * t.rows + i] = t.data[i * t.cols + j];
            }
        }
        out
    }

    #[test]
    fn matmul_kernels_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let naive = |a: &Tensor, b: &Tensor| {
            let mut out = Tensor::zeros(a.rows, b.cols);
            for i in 0..a.rows {
                for j in 0..b.cols {
                    out.data[i * b.cols + j] = (0..a.cols).map(|p| a.data[i * a.cols + p] * b.data[p * b.cols + j]).sum();
                }
            }
            out
        };
        for (r, k, c) in [(3, 4, 5), (1, 7, 1), (17, 9, 33)] {
            let a = rand_tensor(&mut rng, r, k);
            let b = rand_tensor(&mut rng, k, c);
            let want = naive(&a, &b);
            let close = |got: &Tensor| {
                assert_eq!((got.rows, got.cols), (want.rows, want.cols));
                got.data.iter().zip(&want.data).all(|(x, y)| (x - y).abs() < 1e-12)
            };
            assert!(close(&matmul(&a, &b)));
            assert!(close(&matmul_bt(&a, &transpose(&b))));
            assert!(close(&matmul_at(&transpose(&a), &b)));
        }
    }

    #[test]
    fn op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = rand_tensor(&mut rng, 4, 3);
        let bias = rand_tensor(&mut rng, 1, 3);
        check(
            |g, x| {
                let w = g.constant(w.clone());
                let b = g.constant(bias.clone());
                let y = g.matmul(x, w);
                let y = g.add_row(y, b);
                let y = g.silu(y);
                sum_sq(g, y, 10)
            },
            rand_tensor(&mut rng, 5, 4),
        );
        check(
            |g, x| {
                let k = g.slice_cols(x, 1, 2);
                let s = g.matmul_bt(x, x);
                let s = g.softmax_rows(s);
                let o = g.matmul(s, k);
                let o = g.scale(o, 1.7);
                sum_sq(g, o, 11)
            },
            rand_tensor(&mut rng, 4, 4),
        );
        check(
            |g, x| {
                let n = g.layer_norm(x);
                let m = g.add_scalar(n, 1.0);
                let p = g.mul(m, x);
                let q = g.add(p, x);
                sum_sq(g, q, 12)
            },
            rand_tensor(&mut rng, 3, 6),
        );
        let angles = Rc::new(RotaryAngles {
            pairs: 2,
            cos: (0..6).map(|i| (i as f64).cos()).collect(),
            sin: (0..6).map(|i| (i as f64).sin()).collect(),
        });
        check(
            |g, x| {
                let a = g.slice_rows(x, 1, 2);
                let b = g.slice_rows(x, 0, 1);
                let c = g.concat_rows(&[a, b]);
                let d = g.gather_rows(c, Rc::new(vec![2, 0, 0]));
                let e = g.rotary(d, angles.clone());
                let f = g.concat_cols(&[e, d]);
                sum_sq(g, f, 13)
            },
            rand_tensor(&mut rng, 3, 4),
        );
    }

    #[test]
    fn masked_rows_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.param(7, &Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let t = Rc::new(Tensor::zeros(2, 2));
        let l = g.masked_mse(x, t, Rc::new(vec![false, true]));
        assert_eq!(g.value(l).data[0], (9.0 + 16.0) / 2.0);
        g.backward(l);
        let grads = g.param_grads();
        assert_eq!(grads[0].0, 7);
        assert_eq!(grads[0].1.data, vec![0.0, 0.0, 3.0, 4.0]);
    }
}
