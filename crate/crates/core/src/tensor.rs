//! Dense tensors on a reverse-mode gradient tape.
//!
//! A [`Graph`] is an append-only tape: every operation evaluates eagerly,
//! stores its value, and records enough to replay the chain rule backwards.
//! Node indices are creation-ordered, so reverse index order is a valid
//! reverse topological order — `backward` is a single reverse sweep.
//!
//! Gradient semantics are additive: `backward` propagates through transient
//! adjoint buffers and then *adds* the result into each node's persistent
//! `grad`, so calling it twice accumulates exactly twice the gradient.
//!
//! Shapes are dynamic (`Vec<usize>`, row-major). Structured ops accept both
//! the per-sample rank (e.g. `[C,H,W]`, `[N]`) and the batched rank
//! (`[B,C,H,W]`, `[B,N]`); the batch dimension is always leading.

use crate::error::{Error, Result};
use crate::num::Real;
use crate::ops;

/// Handle into a [`Graph`]; cheap to copy, meaningless across graphs.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Tensor {
    pub(crate) id: usize,
}

/// Floor used whenever a logarithm or division needs protection.
pub(crate) const CLAMP_FLOOR: f64 = 1e-12;

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddScalar(usize, T),
    Square(usize),
    Sqrt(usize),
    /// ln(max(x, 1e-12))
    LnClamped(usize),
    Relu(usize),
    /// Softmax over the last axis, independently per row.
    SoftmaxRows(usize),
    SumAll(usize),
    MeanAll(usize),
    /// out[r] = x[r, idx[r]] — one gathered column per row.
    PickPerRow(usize, Vec<u32>),
    /// out[r, j] = x[r, cols[j]] — fixed column subset, all rows.
    PickCols(usize, Vec<usize>),
    ConcatChannels(Vec<usize>),
    Reshape(usize),
    Dense {
        x: usize,
        w: usize,
        b: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        same: bool,
    },
    MaxPool {
        x: usize,
        /// Flat source index of each output's argmax (ties → first row-major).
        argmax: Vec<u32>,
    },
    AffineGrid {
        theta: usize,
    },
    BilinearSample {
        image: usize,
        grid: usize,
    },
}

pub(crate) struct Node<T> {
    pub(crate) op: Op<T>,
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<T>,
    pub(crate) grad: Option<Vec<T>>,
}

/// The computation tape. One graph per forward/backward episode (typically
/// one mini-batch); parameters live outside and enter as leaves.
pub struct Graph<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub(crate) fn push(&mut self, op: Op<T>, shape: Vec<usize>, value: Vec<T>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            op,
            shape,
            value,
            grad: None,
        });
        Tensor {
            id: self.nodes.len() - 1,
        }
    }

    pub fn leaf(&mut self, shape: &[usize], values: Vec<T>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::dim(
                "leaf",
                format!("shape {:?} wants {} values, got {}", shape, shape.iter().product::<usize>(), values.len()),
            ));
        }
        Ok(self.push(Op::Leaf, shape.to_vec(), values))
    }

    pub fn leaf_scalar(&mut self, v: T) -> Tensor {
        self.push(Op::Leaf, vec![1], vec![v])
    }

    pub fn value(&self, t: Tensor) -> &[T] {
        &self.nodes[t.id].value
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.nodes[t.id].shape
    }

    pub fn numel(&self, t: Tensor) -> usize {
        self.nodes[t.id].value.len()
    }

    /// Scalar convenience: the single value of a 1-element tensor.
    pub fn scalar_value(&self, t: Tensor) -> T {
        debug_assert_eq!(self.numel(t), 1);
        self.nodes[t.id].value[0]
    }

    pub fn grad(&self, t: Tensor) -> Option<&[T]> {
        self.nodes[t.id].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn binary_same_shape(&self, op: &'static str, a: Tensor, b: Tensor) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(sa.to_vec())
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let shape = self.binary_same_shape("add", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a.id, b.id), shape, v))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let shape = self.binary_same_shape("sub", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub(a.id, b.id), shape, v))
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let shape = self.binary_same_shape("mul", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul(a.id, b.id), shape, v))
    }

    pub fn scale(&mut self, a: Tensor, k: T) -> Tensor {
        let shape = self.shape(a).to_vec();
        let v = self.value(a).iter().map(|&x| x * k).collect();
        self.push(Op::Scale(a.id, k), shape, v)
    }

    pub fn add_scalar(&mut self, a: Tensor, k: T) -> Tensor {
        let shape = self.shape(a).to_vec();
        let v = self.value(a).iter().map(|&x| x + k).collect();
        self.push(Op::AddScalar(a.id, k), shape, v)
    }

    pub fn square(&mut self, a: Tensor) -> Tensor {
        let shape = self.shape(a).to_vec();
        let v = self.value(a).iter().map(|&x| x * x).collect();
        self.push(Op::Square(a.id), shape, v)
    }

    /// Elementwise square root. Inputs are expected non-negative; the
    /// backward pass floors the denominator at 1e-12 so exact zeros do not
    /// produce infinities.
    pub fn sqrt(&mut self, a: Tensor) -> Tensor {
        let shape = self.shape(a).to_vec();
        let v = self.value(a).iter().map(|&x| x.sqrt()).collect();
        self.push(Op::Sqrt(a.id), shape, v)
    }

    /// ln(max(x, 1e-12)) — the clamp absorbs saturated probabilities.
    pub fn ln_clamped(&mut self, a: Tensor) -> Tensor {
        let floor = T::from_f64c(CLAMP_FLOOR);
        let shape = self.shape(a).to_vec();
        let v = self
            .value(a)
            .iter()
            .map(|&x| if x > floor { x.ln() } else { floor.ln() })
            .collect();
        self.push(Op::LnClamped(a.id), shape, v)
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        let z = T::zero();
        let shape = self.shape(a).to_vec();
        let v = self
            .value(a)
            .iter()
            .map(|&x| if x > z { x } else { z })
            .collect();
        self.push(Op::Relu(a.id), shape, v)
    }

    /// Stable softmax over the last axis of a `[K]` or `[B,K]` tensor.
    pub fn softmax_rows(&mut self, a: Tensor) -> Result<Tensor> {
        let shape = self.shape(a).to_vec();
        let k = *shape
            .last()
            .ok_or_else(|| Error::dim("softmax", "rank-0 input".to_string()))?;
        if k == 0 {
            return Err(Error::dim("softmax", "empty last axis".to_string()));
        }
        let mut v = self.value(a).to_vec();
        for row in v.chunks_mut(k) {
            let mut m = row[0];
            for &x in row.iter() {
                if x > m {
                    m = x;
                }
            }
            let mut sum = T::zero();
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x = *x / sum;
            }
        }
        Ok(self.push(Op::SoftmaxRows(a.id), shape, v))
    }

    pub fn sum_all(&mut self, a: Tensor) -> Tensor {
        let s = self.value(a).iter().fold(T::zero(), |acc, &x| acc + x);
        self.push(Op::SumAll(a.id), vec![1], vec![s])
    }

    pub fn mean_all(&mut self, a: Tensor) -> Tensor {
        let n = T::from_f64c(self.numel(a) as f64);
        let s = self.value(a).iter().fold(T::zero(), |acc, &x| acc + x);
        self.push(Op::MeanAll(a.id), vec![1], vec![s / n])
    }

    /// Gather one column per row: `[B,K]` + indices `[B]` → `[B]`
    /// (or `[K]` + one index → `[1]`).
    pub fn pick_per_row(&mut self, a: Tensor, idx: &[u32]) -> Result<Tensor> {
        let shape = self.shape(a);
        let (rows, k) = match shape.len() {
            1 => (1usize, shape[0]),
            2 => (shape[0], shape[1]),
            r => return Err(Error::dim("pick_per_row", format!("rank {} input", r))),
        };
        if idx.len() != rows {
            return Err(Error::dim(
                "pick_per_row",
                format!("{} rows but {} indices", rows, idx.len()),
            ));
        }
        let mut v = Vec::with_capacity(rows);
        for (r, &i) in idx.iter().enumerate() {
            if i as usize >= k {
                return Err(Error::contract(
                    "pick_per_row",
                    format!("index {} out of {} columns", i, k),
                ));
            }
            v.push(self.value(a)[r * k + i as usize]);
        }
        let out_shape = if shape.len() == 1 { vec![1] } else { vec![rows] };
        Ok(self.push(Op::PickPerRow(a.id, idx.to_vec()), out_shape, v))
    }

    /// Select a fixed set of columns from every row: `[B,K]` → `[B,len]`
    /// (or `[K]` → `[len]`).
    pub fn pick_cols(&mut self, a: Tensor, cols: &[usize]) -> Result<Tensor> {
        let shape = self.shape(a);
        let (rows, k, batched) = match shape.len() {
            1 => (1usize, shape[0], false),
            2 => (shape[0], shape[1], true),
            r => return Err(Error::dim("pick_cols", format!("rank {} input", r))),
        };
        if let Some(&bad) = cols.iter().find(|&&c| c >= k) {
            return Err(Error::contract(
                "pick_cols",
                format!("column {} out of {}", bad, k),
            ));
        }
        let mut v = Vec::with_capacity(rows * cols.len());
        for r in 0..rows {
            for &c in cols {
                v.push(self.value(a)[r * k + c]);
            }
        }
        let out_shape = if batched {
            vec![rows, cols.len()]
        } else {
            vec![cols.len()]
        };
        Ok(self.push(Op::PickCols(a.id, cols.to_vec()), out_shape, v))
    }

    /// Concatenate along the channel axis of `[C,H,W]` or `[B,C,H,W]` inputs.
    pub fn concat_channels(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::dim("concat_channels", "no inputs".to_string()));
        }
        let first = self.shape(parts[0]).to_vec();
        let rank = first.len();
        if rank != 3 && rank != 4 {
            return Err(Error::dim(
                "concat_channels",
                format!("rank {} input", rank),
            ));
        }
        let (b, h, w) = if rank == 3 {
            (1, first[1], first[2])
        } else {
            (first[0], first[2], first[3])
        };
        let mut c_total = 0usize;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == rank
                && if rank == 3 {
                    s[1] == h && s[2] == w
                } else {
                    s[0] == b && s[2] == h && s[3] == w
                };
            if !ok {
                return Err(Error::dim(
                    "concat_channels",
                    format!("incompatible shapes {:?} vs {:?}", first, s),
                ));
            }
            c_total += if rank == 3 { s[0] } else { s[1] };
        }
        let plane = h * w;
        let mut v = vec![T::zero(); b * c_total * plane];
        let mut c_off = 0usize;
        for &p in parts {
            let s = self.shape(p);
            let c = if rank == 3 { s[0] } else { s[1] };
            let src = self.value(p);
            for bi in 0..b {
                let dst_base = (bi * c_total + c_off) * plane;
                let src_base = bi * c * plane;
                v[dst_base..dst_base + c * plane]
                    .copy_from_slice(&src[src_base..src_base + c * plane]);
            }
            c_off += c;
        }
        let out_shape = if rank == 3 {
            vec![c_total, h, w]
        } else {
            vec![b, c_total, h, w]
        };
        Ok(self.push(
            Op::ConcatChannels(parts.iter().map(|t| t.id).collect()),
            out_shape,
            v,
        ))
    }

    pub fn reshape(&mut self, a: Tensor, new_shape: &[usize]) -> Result<Tensor> {
        let n: usize = new_shape.iter().product();
        if n != self.numel(a) {
            return Err(Error::dim(
                "reshape",
                format!("{:?} -> {:?}", self.shape(a), new_shape),
            ));
        }
        let v = self.value(a).to_vec();
        Ok(self.push(Op::Reshape(a.id), new_shape.to_vec(), v))
    }

    /// Flatten `[C,H,W]` → `[C*H*W]` or `[B,C,H,W]` → `[B, C*H*W]`.
    pub fn flatten_features(&mut self, a: Tensor) -> Result<Tensor> {
        let s = self.shape(a).to_vec();
        match s.len() {
            1 | 2 => Ok(a),
            3 => self.reshape(a, &[s.iter().product()]),
            4 => self.reshape(a, &[s[0], s[1] * s[2] * s[3]]),
            r => Err(Error::dim("flatten", format!("rank {}", r))),
        }
    }

    /// Reverse-mode sweep from a scalar root. Transient adjoints propagate
    /// through the tape; at the end each visited node's persistent `grad`
    /// receives `+=`, so repeated calls accumulate additively.
    pub fn backward(&mut self, root: Tensor) -> Result<()> {
        if self.numel(root) != 1 {
            return Err(Error::contract(
                "backward",
                format!("root must be scalar, got shape {:?}", self.shape(root)),
            ));
        }
        let mut adj: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.id] = Some(vec![T::one()]);

        for id in (0..=root.id).rev() {
            let Some(dy) = adj[id].take() else { continue };
            self.propagate(id, &dy, &mut adj);
            let node = &mut self.nodes[id];
            match node.grad.as_mut() {
                Some(g) => {
                    for (gi, di) in g.iter_mut().zip(dy.iter()) {
                        *gi += *di;
                    }
                }
                None => node.grad = Some(dy),
            }
        }
        Ok(())
    }

    /// Add `contrib` into the transient adjoint of node `target`.
    fn accum(adj: &mut [Option<Vec<T>>], target: usize, contrib: Vec<T>) {
        match adj[target].as_mut() {
            Some(buf) => {
                for (b, c) in buf.iter_mut().zip(contrib.iter()) {
                    *b += *c;
                }
            }
            None => adj[target] = Some(contrib),
        }
    }

    fn propagate(&self, id: usize, dy: &[T], adj: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                Self::accum(adj, *a, dy.to_vec());
                Self::accum(adj, *b, dy.to_vec());
            }
            Op::Sub(a, b) => {
                Self::accum(adj, *a, dy.to_vec());
                Self::accum(adj, *b, dy.iter().map(|&d| -d).collect());
            }
            Op::Mul(a, b) => {
                let va = &self.nodes[*a].value;
                let vb = &self.nodes[*b].value;
                Self::accum(adj, *a, zip_map(dy, vb, |d, y| d * y));
                Self::accum(adj, *b, zip_map(dy, va, |d, x| d * x));
            }
            Op::Scale(a, k) => {
                Self::accum(adj, *a, dy.iter().map(|&d| d * *k).collect());
            }
            Op::AddScalar(a, _) => {
                Self::accum(adj, *a, dy.to_vec());
            }
            Op::Square(a) => {
                let two = T::from_f64c(2.0);
                let va = &self.nodes[*a].value;
                Self::accum(adj, *a, zip_map(dy, va, |d, x| d * two * x));
            }
            Op::Sqrt(a) => {
                let floor = T::from_f64c(CLAMP_FLOOR);
                let half = T::from_f64c(0.5);
                // d sqrt(x) = 1/(2 sqrt(x)); reuse the stored output value.
                let y = &node.value;
                Self::accum(
                    adj,
                    *a,
                    zip_map(dy, y, |d, s| d * half / if s > floor { s } else { floor }),
                );
            }
            Op::LnClamped(a) => {
                let floor = T::from_f64c(CLAMP_FLOOR);
                let va = &self.nodes[*a].value;
                Self::accum(
                    adj,
                    *a,
                    zip_map(dy, va, |d, x| if x > floor { d / x } else { T::zero() }),
                );
            }
            Op::Relu(a) => {
                let z = T::zero();
                let va = &self.nodes[*a].value;
                Self::accum(adj, *a, zip_map(dy, va, |d, x| if x > z { d } else { z }));
            }
            Op::SoftmaxRows(a) => {
                let k = *node.shape.last().expect("softmax keeps shape");
                let y = &node.value;
                let mut dx = vec![T::zero(); y.len()];
                for r in 0..y.len() / k {
                    let yr = &y[r * k..(r + 1) * k];
                    let dr = &dy[r * k..(r + 1) * k];
                    let mut dot = T::zero();
                    for (yi, di) in yr.iter().zip(dr.iter()) {
                        dot += *yi * *di;
                    }
                    for ((o, yi), di) in dx[r * k..(r + 1) * k].iter_mut().zip(yr).zip(dr) {
                        *o = *yi * (*di - dot);
                    }
                }
                Self::accum(adj, *a, dx);
            }
            Op::SumAll(a) => {
                let n = self.nodes[*a].value.len();
                Self::accum(adj, *a, vec![dy[0]; n]);
            }
            Op::MeanAll(a) => {
                let n = self.nodes[*a].value.len();
                let k = dy[0] / T::from_f64c(n as f64);
                Self::accum(adj, *a, vec![k; n]);
            }
            Op::PickPerRow(a, idx) => {
                let src = &self.nodes[*a];
                let k = *src.shape.last().expect("pick source has columns");
                let mut dx = vec![T::zero(); src.value.len()];
                for (r, &i) in idx.iter().enumerate() {
                    dx[r * k + i as usize] += dy[r];
                }
                Self::accum(adj, *a, dx);
            }
            Op::PickCols(a, cols) => {
                let src = &self.nodes[*a];
                let k = *src.shape.last().expect("pick source has columns");
                let rows = src.value.len() / k;
                let mut dx = vec![T::zero(); src.value.len()];
                for r in 0..rows {
                    for (j, &c) in cols.iter().enumerate() {
                        dx[r * k + c] += dy[r * cols.len() + j];
                    }
                }
                Self::accum(adj, *a, dx);
            }
            Op::ConcatChannels(parts) => {
                let rank = node.shape.len();
                let (b, c_total, plane) = if rank == 3 {
                    (1, node.shape[0], node.shape[1] * node.shape[2])
                } else {
                    (node.shape[0], node.shape[1], node.shape[2] * node.shape[3])
                };
                let mut c_off = 0usize;
                for &p in parts {
                    let s = &self.nodes[p].shape;
                    let c = if rank == 3 { s[0] } else { s[1] };
                    let mut dp = vec![T::zero(); self.nodes[p].value.len()];
                    for bi in 0..b {
                        let src_base = (bi * c_total + c_off) * plane;
                        let dst_base = bi * c * plane;
                        dp[dst_base..dst_base + c * plane]
                            .copy_from_slice(&dy[src_base..src_base + c * plane]);
                    }
                    Self::accum(adj, p, dp);
                    c_off += c;
                }
            }
            Op::Reshape(a) => {
                Self::accum(adj, *a, dy.to_vec());
            }
            Op::Dense { x, w, b } => {
                let (dx, dw, db) = ops::dense::backward(
                    &self.nodes[*x].value,
                    &self.nodes[*x].shape,
                    &self.nodes[*w].value,
                    &self.nodes[*w].shape,
                    dy,
                );
                Self::accum(adj, *x, dx);
                Self::accum(adj, *w, dw);
                Self::accum(adj, *b, db);
            }
            Op::Conv2d { x, w, b, same } => {
                let (dx, dw, db) = ops::conv::backward(
                    &self.nodes[*x].value,
                    &self.nodes[*x].shape,
                    &self.nodes[*w].value,
                    &self.nodes[*w].shape,
                    dy,
                    &node.shape,
                    *same,
                );
                Self::accum(adj, *x, dx);
                Self::accum(adj, *w, dw);
                Self::accum(adj, *b, db);
            }
            Op::MaxPool { x, argmax, .. } => {
                let mut dx = vec![T::zero(); self.nodes[*x].value.len()];
                for (o, &src) in argmax.iter().enumerate() {
                    dx[src as usize] += dy[o];
                }
                Self::accum(adj, *x, dx);
            }
            Op::AffineGrid { theta } => {
                let dtheta = ops::sample::affine_grid_backward(
                    &self.nodes[*theta].shape,
                    &node.shape,
                    dy,
                );
                Self::accum(adj, *theta, dtheta);
            }
            Op::BilinearSample { image, grid } => {
                let (dimg, dgrid) = ops::sample::bilinear_backward(
                    &self.nodes[*image].value,
                    &self.nodes[*image].shape,
                    &self.nodes[*grid].value,
                    &self.nodes[*grid].shape,
                    dy,
                );
                Self::accum(adj, *image, dimg);
                Self::accum(adj, *grid, dgrid);
            }
        }
    }
}

pub(crate) fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph() -> Graph<f64> {
        Graph::new()
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = graph();
        let x = g.leaf(&[2, 2], vec![3.0, -1.0, 0.5, 2.0]).unwrap();
        let s = g.sum_all(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let mut g = graph();
        let x = g.leaf(&[2], vec![1.0, 2.0]).unwrap();
        let sq = g.square(x);
        let s = g.sum_all(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_twice_accumulates_exactly_double() {
        let mut g = graph();
        let x = g.leaf(&[3], vec![0.3, -0.7, 1.1]).unwrap();
        let sq = g.square(x);
        let s = g.sum_all(sq);
        g.backward(s).unwrap();
        let once: Vec<f64> = g.grad(x).unwrap().to_vec();
        g.backward(s).unwrap();
        let twice: Vec<f64> = g.grad(x).unwrap().to_vec();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert_eq!(*b, 2.0 * *a);
        }
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = graph();
        let x = g.leaf(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(g.backward(x), Err(Error::Contract { .. })));
    }

    #[test]
    fn softmax_uniform_and_stability() {
        let mut g = graph();
        let x = g.leaf(&[3], vec![0.0, 0.0, 0.0]).unwrap();
        let y = g.softmax_rows(x).unwrap();
        for &v in g.value(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = g.leaf(&[3], vec![1000.0, 0.0, 0.0]).unwrap();
        let yb = g.softmax_rows(big).unwrap();
        let vb = g.value(yb);
        assert!(vb.iter().all(|v| v.is_finite()));
        assert!((vb[0] - 1.0).abs() < 1e-12);
        let sum: f64 = vb.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_sums_to_one_for_large_magnitudes() {
        let mut g = graph();
        let x = g
            .leaf(&[2, 3], vec![1e3, -1e3, 0.0, 999.0, 998.0, -500.0])
            .unwrap();
        let y = g.softmax_rows(x).unwrap();
        for row in g.value(y).chunks(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "row sum {}", s);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn relu_examples() {
        let mut g = graph();
        let x = g.leaf(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = g.relu(x);
        assert_eq!(g.value(y), &[0.0, 0.0, 2.0]);
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        // subgradient at 0 is 0
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_all_negative_zero_grad() {
        let mut g = graph();
        let x = g.leaf(&[4], vec![-1.0, -2.0, -0.5, -3.0]).unwrap();
        let y = g.relu(x);
        assert!(g.value(y).iter().all(|&v| v == 0.0));
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pick_and_concat_round_trip_gradients() {
        let mut g = graph();
        let x = g.leaf(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = g.pick_per_row(x, &[2, 0]).unwrap();
        assert_eq!(g.value(p), &[3.0, 4.0]);
        let s = g.sum_all(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn pick_cols_selects_and_scatters() {
        let mut g = graph();
        let x = g.leaf(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = g.pick_cols(x, &[1, 1]).unwrap();
        assert_eq!(g.value(p), &[2.0, 2.0, 5.0, 5.0]);
        let s = g.sum_all(p);
        g.backward(s).unwrap();
        // duplicated column accumulates
        assert_eq!(g.grad(x).unwrap(), &[0.0, 2.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn concat_channels_batched() {
        let mut g = graph();
        let a = g.leaf(&[2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = g.leaf(&[2, 2, 1, 2], (10..18).map(f64::from).collect()).unwrap();
        let c = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.shape(c), &[2, 3, 1, 2]);
        assert_eq!(
            g.value(c),
            &[1.0, 2.0, 10.0, 11.0, 12.0, 13.0, 3.0, 4.0, 14.0, 15.0, 16.0, 17.0]
        );
    }

    #[test]
    fn mean_all_gradient_is_uniform() {
        let mut g = graph();
        let x = g.leaf(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = g.mean_all(x);
        assert_eq!(g.scalar_value(m), 2.5);
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.25; 4]);
    }

    #[test]
    fn graphs_are_deterministic() {
        let run = || {
            let mut g: Graph<f64> = Graph::new();
            let x = g.leaf(&[3], vec![0.1, 0.2, 0.3]).unwrap();
            let y = g.softmax_rows(x).unwrap();
            let l = g.ln_clamped(y);
            let s = g.sum_all(l);
            g.scalar_value(s).to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn ln_clamped_handles_zero() {
        let mut g = graph();
        let x = g.leaf(&[2], vec![0.0, 1.0]).unwrap();
        let y = g.ln_clamped(x);
        assert_eq!(g.value(y)[0], (1e-12f64).ln());
        assert_eq!(g.value(y)[1], 0.0);
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        // clamped region has zero slope
        assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0]);
    }
}
