//! Fully connected layer: out = W·x + b, batched over leading rows.

use super::kernels::{axpy, dot};
use crate::error::{Error, Result};
use crate::num::Real;
use crate::tensor::{Graph, Op, Tensor};

impl<T: Real> Graph<T> {
    /// `x`: `[N]` or `[B,N]`; `w`: `[M,N]`; `b`: `[M]` → `[M]` or `[B,M]`.
    pub fn dense(&mut self, x: Tensor, w: Tensor, b: Tensor) -> Result<Tensor> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if ws.len() != 2 {
            return Err(Error::dim("dense", format!("weights rank {:?}", ws)));
        }
        let (m, n) = (ws[0], ws[1]);
        let (rows, batched) = match xs.len() {
            1 => (1usize, false),
            2 => (xs[0], true),
            r => return Err(Error::dim("dense", format!("input rank {}", r))),
        };
        let n_in = *xs.last().unwrap();
        if n_in != n {
            return Err(Error::dim(
                "dense",
                format!("input features {} vs weight columns {}", n_in, n),
            ));
        }
        if bs != [m] {
            return Err(Error::dim(
                "dense",
                format!("bias shape {:?} vs {} outputs", bs, m),
            ));
        }

        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let mut out = vec![T::zero(); rows * m];
        for r in 0..rows {
            let xrow = &xv[r * n..(r + 1) * n];
            for i in 0..m {
                out[r * m + i] = dot(&wv[i * n..(i + 1) * n], xrow) + bv[i];
            }
        }
        let shape = if batched { vec![rows, m] } else { vec![m] };
        Ok(self.push(Op::Dense { x: x.id, w: w.id, b: b.id }, shape, out))
    }
}

/// Gradients for dense: returns (dx, dw, db).
pub(crate) fn backward<T: Real>(
    xv: &[T],
    xs: &[usize],
    wv: &[T],
    ws: &[usize],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (m, n) = (ws[0], ws[1]);
    let rows = if xs.len() == 2 { xs[0] } else { 1 };
    let mut dx = vec![T::zero(); rows * n];
    let mut dw = vec![T::zero(); m * n];
    let mut db = vec![T::zero(); m];
    for r in 0..rows {
        let xrow = &xv[r * n..(r + 1) * n];
        let dxrow = &mut dx[r * n..(r + 1) * n];
        for i in 0..m {
            let d = dy[r * m + i];
            if d != T::zero() {
                axpy(dxrow, &wv[i * n..(i + 1) * n], d);
                axpy(&mut dw[i * n..(i + 1) * n], xrow, d);
            }
            db[i] += d;
        }
    }
    (dx, dw, db)
}
