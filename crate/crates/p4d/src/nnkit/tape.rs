//! Reverse-mode automatic differentiation over dynamic f64 arrays.
//!
//! The tape is rebuilt for every forward pass: leaves are pushed for
//! parameters and constants, ops append nodes eagerly, and [`Tape::backward`]
//! walks the node list in reverse accumulating gradients. The op set is
//! exactly what the models in this crate need; there is no broadcasting
//! beyond the few fused variants below.

use ndarray::{Array1, Array2, ArrayD, Axis, IxDyn};

use crate::nnkit::ops;
use crate::nnkit::Arr;
use crate::{P4dError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, f64),
    /// `(r, c)` matrix plus a `(c,)` row vector broadcast over rows.
    AddRow(VarId, VarId),
    MatMul(VarId, VarId),
    Gelu(VarId),
    LayerNorm {
        x: VarId,
        gamma: VarId,
        beta: VarId,
    },
    /// Row-wise softmax on a 2-D array; `causal` masks columns j > i.
    /// The flag only shapes the forward output (the backward pass works on
    /// the stored probabilities, where masked entries are exactly zero),
    /// but it is kept on the node so a tape dump shows the masking.
    Softmax {
        x: VarId,
        #[allow(dead_code)]
        causal: bool,
    },
    Transpose(VarId),
    Reshape(VarId),
    GatherRows {
        x: VarId,
        idx: Vec<usize>,
    },
    ConcatRows(Vec<VarId>),
    ConcatCols(VarId, VarId),
    /// Mean pooling of an `(h*w, c)` token grid by an `s x s` window.
    AvgPool {
        x: VarId,
        h: usize,
        w: usize,
        s: usize,
    },
    /// Bilinear resize of an `(h*w, c)` grid to `(h2*w2, c)`.
    Bilinear {
        x: VarId,
        h: usize,
        w: usize,
        h2: usize,
        w2: usize,
    },
    SmoothL1Mean {
        a: VarId,
        b: VarId,
        delta: f64,
    },
    /// Mean of `-log softmax(logits[row])[class]` over the listed rows.
    CrossEntropyMean {
        logits: VarId,
        targets: Vec<(usize, usize)>,
    },
    SumWeighted(Vec<(VarId, f64)>),
}

struct Node {
    data: Arr,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;

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

    pub fn value(&self, id: VarId) -> &Arr {
        &self.nodes[id.0].data
    }

    pub fn scalar_value(&self, id: VarId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1);
        v.iter().copied().next().unwrap()
    }

    fn push(&mut self, data: Arr, op: Op) -> VarId {
        self.nodes.push(Node { data, op });
        VarId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, data: Arr) -> VarId {
        self.push(data, Op::Leaf)
    }

    fn as2(&self, id: VarId) -> Array2<f64> {
        self.value(id)
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("expected 2-D value")
            .to_owned()
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "add shapes");
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "sub shapes");
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "mul shapes");
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: VarId, k: f64) -> VarId {
        let out = self.value(a).mapv(|x| x * k);
        self.push(out, Op::Scale(a, k))
    }

    pub fn add_row(&mut self, a: VarId, b: VarId) -> VarId {
        let m = self.as2(a);
        let v = self.value(b).view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned();
        assert_eq!(m.ncols(), v.len(), "add_row widths");
        let out = (&m + &v).into_dyn();
        self.push(out, Op::AddRow(a, b))
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let am = self.as2(a);
        let bm = self.as2(b);
        assert_eq!(am.ncols(), bm.nrows(), "matmul inner dims");
        let out = am.dot(&bm).into_dyn();
        self.push(out, Op::MatMul(a, b))
    }

    pub fn gelu(&mut self, a: VarId) -> VarId {
        let out = self.value(a).mapv(ops::gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn layer_norm(&mut self, x: VarId, gamma: VarId, beta: VarId) -> VarId {
        let xm = self.as2(x);
        let g = self.value(gamma).view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned();
        let b = self.value(beta).view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned();
        assert_eq!(xm.ncols(), g.len(), "layer_norm widths");
        let mut out = Array2::<f64>::zeros(xm.raw_dim());
        for (i, row) in xm.outer_iter().enumerate() {
            let mean = row.mean().unwrap();
            let var = row.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
            let std = (var + LN_EPS).sqrt();
            for j in 0..row.len() {
                out[[i, j]] = (row[j] - mean) / std * g[j] + b[j];
            }
        }
        self.push(out.into_dyn(), Op::LayerNorm { x, gamma, beta })
    }

    pub fn softmax(&mut self, x: VarId, causal: bool) -> VarId {
        let xm = self.as2(x);
        let mut out = Array2::<f64>::zeros(xm.raw_dim());
        for (i, row) in xm.outer_iter().enumerate() {
            let limit = if causal { (i + 1).min(row.len()) } else { row.len() };
            let mx = row.iter().take(limit).cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..limit {
                denom += (row[j] - mx).exp();
            }
            for j in 0..limit {
                out[[i, j]] = (row[j] - mx).exp() / denom;
            }
        }
        self.push(out.into_dyn(), Op::Softmax { x, causal })
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let out = self.as2(a).reversed_axes().as_standard_layout().to_owned().into_dyn();
        self.push(out, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: VarId, shape: &[usize]) -> VarId {
        let out = self
            .value(a)
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape numel");
        self.push(out, Op::Reshape(a))
    }

    pub fn gather_rows(&mut self, x: VarId, idx: &[usize]) -> VarId {
        let xm = self.as2(x);
        let mut out = Array2::<f64>::zeros((idx.len(), xm.ncols()));
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(i).assign(&xm.row(r));
        }
        self.push(out.into_dyn(), Op::GatherRows { x, idx: idx.to_vec() })
    }

    pub fn concat_rows(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty());
        let mats: Vec<Array2<f64>> = parts.iter().map(|&p| self.as2(p)).collect();
        let views: Vec<_> = mats.iter().map(|m| m.view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).unwrap().into_dyn();
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, a: VarId, b: VarId) -> VarId {
        let am = self.as2(a);
        let bm = self.as2(b);
        assert_eq!(am.nrows(), bm.nrows(), "concat_cols rows");
        let out = ndarray::concatenate(Axis(1), &[am.view(), bm.view()]).unwrap().into_dyn();
        self.push(out, Op::ConcatCols(a, b))
    }

    pub fn avg_pool(&mut self, x: VarId, h: usize, w: usize, s: usize) -> VarId {
        assert!(h % s == 0 && w % s == 0, "pool grid not divisible by s");
        let xm = self.as2(x);
        assert_eq!(xm.nrows(), h * w, "pool token count");
        let (h2, w2) = (h / s, w / s);
        let c = xm.ncols();
        let mut out = Array2::<f64>::zeros((h2 * w2, c));
        let norm = 1.0 / (s * s) as f64;
        for oy in 0..h2 {
            for ox in 0..w2 {
                for dy in 0..s {
                    for dx in 0..s {
                        let src = (oy * s + dy) * w + (ox * s + dx);
                        let dst = oy * w2 + ox;
                        for ch in 0..c {
                            out[[dst, ch]] += xm[[src, ch]] * norm;
                        }
                    }
                }
            }
        }
        self.push(out.into_dyn(), Op::AvgPool { x, h, w, s })
    }

    pub fn bilinear(&mut self, x: VarId, h: usize, w: usize, h2: usize, w2: usize) -> VarId {
        let xm = self.as2(x);
        assert_eq!(xm.nrows(), h * w, "bilinear token count");
        let c = xm.ncols();
        let mut out = Array2::<f64>::zeros((h2 * w2, c));
        for (dst, taps) in bilinear_taps(h, w, h2, w2) {
            for (src, wgt) in taps {
                for ch in 0..c {
                    out[[dst, ch]] += xm[[src, ch]] * wgt;
                }
            }
        }
        self.push(out.into_dyn(), Op::Bilinear { x, h, w, h2, w2 })
    }

    pub fn smooth_l1_mean(&mut self, a: VarId, b: VarId, delta: f64) -> VarId {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "smooth_l1 shapes");
        assert!(delta > 0.0, "smooth_l1 delta must be positive");
        let mut acc = 0.0;
        for (&x, &y) in self.value(a).iter().zip(self.value(b).iter()) {
            acc += ops::smooth_l1_elem(x - y, delta);
        }
        let n = self.value(a).len() as f64;
        self.push(crate::nnkit::scalar(acc / n), Op::SmoothL1Mean { a, b, delta })
    }

    /// Mean cross-entropy over `(row, class)` pairs of a 2-D logits array.
    pub fn cross_entropy_mean(&mut self, logits: VarId, targets: &[(usize, usize)]) -> VarId {
        assert!(!targets.is_empty(), "cross_entropy_mean needs targets");
        let lm = self.as2(logits);
        let mut acc = 0.0;
        for &(row, class) in targets {
            acc += ops::cross_entropy(lm.row(row).as_slice().unwrap(), class).expect("finite logits");
        }
        let n = targets.len() as f64;
        self.push(
            crate::nnkit::scalar(acc / n),
            Op::CrossEntropyMean { logits, targets: targets.to_vec() },
        )
    }

    pub fn sum_weighted(&mut self, parts: &[(VarId, f64)]) -> VarId {
        let mut acc = 0.0;
        for &(p, w) in parts {
            acc += self.scalar_value(p) * w;
        }
        self.push(crate::nnkit::scalar(acc), Op::SumWeighted(parts.to_vec()))
    }

    /// Backpropagate from a scalar root; returns one gradient slot per node.
    pub fn backward(&self, root: VarId) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(P4dError::InvalidArgument("backward root must be scalar".into()));
        }
        let mut grads: Vec<Option<Arr>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(ArrayD::ones(self.value(root).raw_dim()));
        for i in (0..self.nodes.len()).rev() {
            let gy = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, i: usize, gy: &Arr, grads: &mut Vec<Option<Arr>>) {
        let add_to = |grads: &mut Vec<Option<Arr>>, id: VarId, g: Arr| {
            match &mut grads[id.0] {
                Some(acc) => *acc += &g,
                slot @ None => *slot = Some(g),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_to(grads, *a, gy.clone());
                add_to(grads, *b, gy.clone());
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, gy.clone());
                add_to(grads, *b, gy.mapv(|v| -v));
            }
            Op::Mul(a, b) => {
                add_to(grads, *a, gy * self.value(*b));
                add_to(grads, *b, gy * self.value(*a));
            }
            Op::Scale(a, k) => add_to(grads, *a, gy.mapv(|v| v * k)),
            Op::AddRow(a, b) => {
                add_to(grads, *a, gy.clone());
                let g2 = gy.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                add_to(grads, *b, g2.sum_axis(Axis(0)).into_dyn());
            }
            Op::MatMul(a, b) => {
                let gm = gy.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let am = self.as2(*a);
                let bm = self.as2(*b);
                add_to(grads, *a, gm.dot(&bm.t()).into_dyn());
                add_to(grads, *b, am.t().dot(&gm).into_dyn());
            }
            Op::Gelu(a) => {
                let mut g = self.value(*a).clone();
                g.zip_mut_with(gy, |x, &gyv| *x = ops::gelu_grad(*x) * gyv);
                add_to(grads, *a, g);
            }
            Op::LayerNorm { x, gamma, beta } => {
                let xm = self.as2(*x);
                let g = self.value(*gamma).view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned();
                let gym = gy.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let c = xm.ncols() as f64;
                let mut dx = Array2::<f64>::zeros(xm.raw_dim());
                let mut dgamma = Array1::<f64>::zeros(g.len());
                let mut dbeta = Array1::<f64>::zeros(g.len());
                for (r, row) in xm.outer_iter().enumerate() {
                    let mean = row.mean().unwrap();
                    let var = row.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
                    let std = (var + LN_EPS).sqrt();
                    let xhat: Array1<f64> = row.mapv(|v| (v - mean) / std);
                    let dy = gym.row(r);
                    let dyg: Array1<f64> = (0..g.len()).map(|j| dy[j] * g[j]).collect();
                    let m1 = dyg.sum() / c;
                    let m2 = (0..g.len()).map(|j| dyg[j] * xhat[j]).sum::<f64>() / c;
                    for j in 0..g.len() {
                        dx[[r, j]] = (dyg[j] - m1 - xhat[j] * m2) / std;
                        dgamma[j] += dy[j] * xhat[j];
                        dbeta[j] += dy[j];
                    }
                }
                add_to(grads, *x, dx.into_dyn());
                add_to(grads, *gamma, dgamma.into_dyn());
                add_to(grads, *beta, dbeta.into_dyn());
            }
            Op::Softmax { x, .. } => {
                let y = self.as2(VarId(i));
                let gym = gy.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let mut dx = Array2::<f64>::zeros(y.raw_dim());
                for r in 0..y.nrows() {
                    let dot: f64 = (0..y.ncols()).map(|j| gym[[r, j]] * y[[r, j]]).sum();
                    for j in 0..y.ncols() {
                        dx[[r, j]] = (gym[[r, j]] - dot) * y[[r, j]];
                    }
                }
                add_to(grads, *x, dx.into_dyn());
            }
            Op::Transpose(a) => {
                let gm = gy.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                add_to(grads, *a, gm.t().as_standard_layout().to_owned().into_dyn());
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).raw_dim();
                add_to(grads, *a, gy.clone().into_shape_with_order(shape).unwrap());
            }
            Op::GatherRows { x, idx } => {
                let xm = self.as2(*x);
                let gym = gy.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let mut dx = Array2::<f64>::zeros(xm.raw_dim());
                for (r, &src) in idx.iter().enumerate() {
                    let mut dst = dx.row_mut(src);
                    dst += &gym.row(r);
                }
                add_to(grads, *x, dx.into_dyn());
            }
            Op::ConcatRows(parts) => {
                let gym = gy.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).shape()[0];
                    let slice = gym.slice(ndarray::s![offset..offset + rows, ..]).to_owned();
                    add_to(grads, p, slice.into_dyn());
                    offset += rows;
                }
            }
            Op::ConcatCols(a, b) => {
                let gym = gy.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let ca = self.value(*a).shape()[1];
                add_to(grads, *a, gym.slice(ndarray::s![.., ..ca]).to_owned().into_dyn());
                add_to(grads, *b, gym.slice(ndarray::s![.., ca..]).to_owned().into_dyn());
            }
            Op::AvgPool { x, h, w, s } => {
                let gym = gy.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let c = gym.ncols();
                let (h2, w2) = (h / s, w / s);
                let mut dx = Array2::<f64>::zeros((h * w, c));
                let norm = 1.0 / (s * s) as f64;
                for oy in 0..h2 {
                    for ox in 0..w2 {
                        let dst = oy * w2 + ox;
                        for dy in 0..*s {
                            for dxp in 0..*s {
                                let src = (oy * s + dy) * w + (ox * s + dxp);
                                for ch in 0..c {
                                    dx[[src, ch]] += gym[[dst, ch]] * norm;
                                }
                            }
                        }
                    }
                }
                add_to(grads, *x, dx.into_dyn());
            }
            Op::Bilinear { x, h, w, h2, w2 } => {
                let gym = gy.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let c = gym.ncols();
                let mut dx = Array2::<f64>::zeros((h * w, c));
                for (dst, taps) in bilinear_taps(*h, *w, *h2, *w2) {
                    for (src, wgt) in taps {
                        for ch in 0..c {
                            dx[[src, ch]] += gym[[dst, ch]] * wgt;
                        }
                    }
                }
                add_to(grads, *x, dx.into_dyn());
            }
            Op::SmoothL1Mean { a, b, delta } => {
                let gval = gy.iter().next().copied().unwrap();
                let n = self.value(*a).len() as f64;
                let mut da = self.value(*a).clone();
                da.zip_mut_with(self.value(*b), |x, &y| {
                    *x = ops::smooth_l1_grad_elem(*x - y, *delta) * gval / n
                });
                add_to(grads, *b, da.mapv(|v| -v));
                add_to(grads, *a, da);
            }
            Op::CrossEntropyMean { logits, targets } => {
                let gval = gy.iter().next().copied().unwrap();
                let lm = self.as2(*logits);
                let mut dl = Array2::<f64>::zeros(lm.raw_dim());
                let n = targets.len() as f64;
                for &(row, class) in targets {
                    let r = lm.row(row);
                    let mx = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = r.iter().map(|&v| (v - mx).exp()).sum();
                    for j in 0..r.len() {
                        let p = (r[j] - mx).exp() / denom;
                        let onehot = if j == class { 1.0 } else { 0.0 };
                        dl[[row, j]] += (p - onehot) * gval / n;
                    }
                }
                add_to(grads, *logits, dl.into_dyn());
            }
            Op::SumWeighted(parts) => {
                let gval = gy.iter().next().copied().unwrap();
                for &(p, w) in parts {
                    add_to(grads, p, crate::nnkit::scalar(gval * w));
                }
            }
        }
    }
}

pub struct Gradients {
    grads: Vec<Option<Arr>>,
}

impl Gradients {
    pub fn get(&self, id: VarId) -> Option<&Arr> {
        self.grads[id.0].as_ref()
    }
}

/// Interpolation taps for a half-pixel-convention bilinear resize: for each
/// destination row index, the source row indices and weights.
fn bilinear_taps(h: usize, w: usize, h2: usize, w2: usize) -> Vec<(usize, Vec<(usize, f64)>)> {
    let mut taps = Vec::with_capacity(h2 * w2);
    let axis = |src: usize, dst: usize, i: usize| -> [(usize, f64); 2] {
        if src == dst {
            return [(i, 1.0), (i, 0.0)];
        }
        let scale = src as f64 / dst as f64;
        let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(src - 1);
        let frac = pos - lo as f64;
        [(lo, 1.0 - frac), (hi, frac)]
    };
    for oy in 0..h2 {
        let ys = axis(h, h2, oy);
        for ox in 0..w2 {
            let xs = axis(w, w2, ox);
            let mut cell = Vec::with_capacity(4);
            for &(y, wy) in &ys {
                for &(x, wx) in &xs {
                    let wgt = wy * wx;
                    if wgt != 0.0 {
                        cell.push((y * w + x, wgt));
                    }
                }
            }
            taps.push((oy * w2 + ox, cell));
        }
    }
    taps
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn arr2(v: Vec<Vec<f64>>) -> Arr {
        let rows = v.len();
        let cols = v[0].len();
        Array2::from_shape_vec((rows, cols), v.into_iter().flatten().collect())
            .unwrap()
            .into_dyn()
    }

    #[test]
    fn matmul_forward_and_backward() {
        let mut t = Tape::new();
        let a = t.leaf(arr2(vec![vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = t.leaf(arr2(vec![vec![5.0], vec![6.0]]));
        let y = t.matmul(a, b);
        let s = t.smooth_l1_mean(y, y, 1.0); // zero loss, just to get a scalar
        assert_eq!(t.value(y).shape(), &[2, 1]);
        assert_eq!(t.value(y)[[0, 0]], 17.0);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().shape(), &[2, 2]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let x = t.leaf(arr2(vec![vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 0.0]]));
        let y = t.softmax(x, false);
        let ym = t.value(y);
        for r in 0..2 {
            let s: f64 = (0..3).map(|j| ym[[r, j]]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut t = Tape::new();
        let x = t.leaf(arr2(vec![vec![5.0, 100.0, 100.0], vec![1.0, 1.0, 100.0]]));
        let y = t.softmax(x, true);
        let ym = t.value(y);
        assert_eq!(ym[[0, 1]], 0.0);
        assert_eq!(ym[[0, 2]], 0.0);
        assert_eq!(ym[[1, 2]], 0.0);
        assert!((ym[[1, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bilinear_2x2_to_1x1_is_mean() {
        let mut t = Tape::new();
        let x = t.leaf(arr2(vec![vec![0.0], vec![1.0], vec![1.0], vec![0.0]]));
        let y = t.bilinear(x, 2, 2, 1, 1);
        assert!((t.value(y)[[0, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bilinear_identity_when_same_shape() {
        let mut t = Tape::new();
        let x = t.leaf(arr2(vec![vec![0.3, -1.0], vec![2.0, 4.5], vec![0.0, 1.0], vec![7.0, 8.0]]));
        let y = t.bilinear(x, 2, 2, 2, 2);
        assert_eq!(t.value(x), t.value(y));
    }

    #[test]
    fn gather_rows_backward_scatters() {
        let mut t = Tape::new();
        let x = t.leaf(arr2(vec![vec![1.0], vec![2.0], vec![3.0]]));
        let y = t.gather_rows(x, &[0, 0, 2]);
        let target = t.leaf(arr2(vec![vec![0.0], vec![0.0], vec![0.0]]));
        let loss = t.smooth_l1_mean(y, target, 10.0);
        let g = t.backward(loss).unwrap();
        let gx = g.get(x).unwrap();
        // quadratic branch: d/dx of mean(0.5 d^2 / delta); row 0 used twice
        assert!((gx[[0, 0]] - 2.0 * 1.0 / 10.0 / 3.0).abs() < 1e-12);
        assert!((gx[[1, 0]]).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_mean_matches_closed_form() {
        let mut t = Tape::new();
        let logits = t.leaf(arr2(vec![vec![0.0; 8]]));
        let l = t.cross_entropy_mean(logits, &[(0, 3)]);
        assert!((t.scalar_value(l) - (8.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_nonscalar_root() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, 2.0]].into_dyn());
        assert!(t.backward(x).is_err());
    }
}
