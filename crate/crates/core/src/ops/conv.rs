//! 2-D convolution (cross-correlation) via im2col.
//!
//! The column buffer is laid out `[out_pixel][C·kh·kw]` so both the forward
//! pass and the weight gradient reduce to contiguous dot/axpy kernels. The
//! buffer is rebuilt in backward rather than stored — recomputing a gather
//! is cheaper than holding ~10 MB per conv node across the whole tape.

use super::kernels::{axpy, dot};
use crate::error::{Error, Result};
use crate::num::Real;
use crate::tensor::{Graph, Op, Tensor};

pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub batched: bool,
}

pub(crate) fn dims(xs: &[usize], ws: &[usize], same: bool) -> Result<ConvDims> {
    if ws.len() != 4 {
        return Err(Error::dim("conv2d", format!("kernel rank {:?}", ws)));
    }
    let (c_out, c_k, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::dim(
            "conv2d",
            format!("kernel sides must be odd, got {}x{}", kh, kw),
        ));
    }
    let (batch, c_in, h, w, batched) = match xs.len() {
        3 => (1, xs[0], xs[1], xs[2], false),
        4 => (xs[0], xs[1], xs[2], xs[3], true),
        r => return Err(Error::dim("conv2d", format!("input rank {}", r))),
    };
    if c_in != c_k {
        return Err(Error::dim(
            "conv2d",
            format!("input channels {} vs kernel channels {}", c_in, c_k),
        ));
    }
    let (pad_h, pad_w) = if same { (kh / 2, kw / 2) } else { (0, 0) };
    if !same && (h < kh || w < kw) {
        return Err(Error::dim(
            "conv2d",
            format!("valid conv needs input >= kernel, got {}x{} vs {}x{}", h, w, kh, kw),
        ));
    }
    let h_out = h + 2 * pad_h - kh + 1;
    let w_out = w + 2 * pad_w - kw + 1;
    Ok(ConvDims {
        batch,
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        h_out,
        w_out,
        pad_h,
        pad_w,
        batched,
    })
}

/// Fill `col` (shape `[h_out*w_out][c*kh*kw]`) from one sample's pixels.
fn im2col<T: Real>(x: &[T], d: &ConvDims, col: &mut [T]) {
    let k = d.c_in * d.kh * d.kw;
    debug_assert_eq!(col.len(), d.h_out * d.w_out * k);
    for oi in 0..d.h_out {
        for oj in 0..d.w_out {
            let row = &mut col[(oi * d.w_out + oj) * k..(oi * d.w_out + oj + 1) * k];
            let mut idx = 0usize;
            for c in 0..d.c_in {
                let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
                for ki in 0..d.kh {
                    let si = (oi + ki) as isize - d.pad_h as isize;
                    for kj in 0..d.kw {
                        let sj = (oj + kj) as isize - d.pad_w as isize;
                        row[idx] = if si >= 0
                            && si < d.h as isize
                            && sj >= 0
                            && sj < d.w as isize
                        {
                            plane[si as usize * d.w + sj as usize]
                        } else {
                            T::zero()
                        };
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Scatter a column-gradient buffer back onto one sample's pixel gradient.
fn col2im<T: Real>(dcol: &[T], d: &ConvDims, dx: &mut [T]) {
    let k = d.c_in * d.kh * d.kw;
    for oi in 0..d.h_out {
        for oj in 0..d.w_out {
            let row = &dcol[(oi * d.w_out + oj) * k..(oi * d.w_out + oj + 1) * k];
            let mut idx = 0usize;
            for c in 0..d.c_in {
                for ki in 0..d.kh {
                    let si = (oi + ki) as isize - d.pad_h as isize;
                    for kj in 0..d.kw {
                        let sj = (oj + kj) as isize - d.pad_w as isize;
                        if si >= 0 && si < d.h as isize && sj >= 0 && sj < d.w as isize {
                            dx[(c * d.h + si as usize) * d.w + sj as usize] += row[idx];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
}

impl<T: Real> Graph<T> {
    /// Cross-correlation plus bias. `x`: `[C,H,W]` or `[B,C,H,W]`;
    /// `w`: `[C_out,C_in,kh,kw]` (odd kernel sides); `b`: `[C_out]`.
    /// `same=true` zero-pads to preserve spatial size.
    pub fn conv2d(&mut self, x: Tensor, w: Tensor, b: Tensor, same: bool) -> Result<Tensor> {
        let d = dims(self.shape(x), self.shape(w), same)?;
        if self.shape(b) != [d.c_out] {
            return Err(Error::dim(
                "conv2d",
                format!("bias shape {:?} vs {} filters", self.shape(b), d.c_out),
            ));
        }
        let k = d.c_in * d.kh * d.kw;
        let npix = d.h_out * d.w_out;
        let plane_in = d.c_in * d.h * d.w;
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let mut out = vec![T::zero(); d.batch * d.c_out * npix];
        let mut col = vec![T::zero(); npix * k];
        for bi in 0..d.batch {
            im2col(&xv[bi * plane_in..(bi + 1) * plane_in], &d, &mut col);
            let out_s = &mut out[bi * d.c_out * npix..(bi + 1) * d.c_out * npix];
            for p in 0..npix {
                let crow = &col[p * k..(p + 1) * k];
                for o in 0..d.c_out {
                    out_s[o * npix + p] = dot(&wv[o * k..(o + 1) * k], crow) + bv[o];
                }
            }
        }
        let shape = if d.batched {
            vec![d.batch, d.c_out, d.h_out, d.w_out]
        } else {
            vec![d.c_out, d.h_out, d.w_out]
        };
        Ok(self.push(
            Op::Conv2d {
                x: x.id,
                w: w.id,
                b: b.id,
                same,
            },
            shape,
            out,
        ))
    }
}

pub(crate) fn backward<T: Real>(
    xv: &[T],
    xs: &[usize],
    wv: &[T],
    ws: &[usize],
    dy: &[T],
    _out_shape: &[usize],
    same: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let d = dims(xs, ws, same).expect("shapes validated at forward time");
    let k = d.c_in * d.kh * d.kw;
    let npix = d.h_out * d.w_out;
    let plane_in = d.c_in * d.h * d.w;
    let mut dx = vec![T::zero(); xv.len()];
    let mut dw = vec![T::zero(); wv.len()];
    let mut db = vec![T::zero(); d.c_out];
    let mut col = vec![T::zero(); npix * k];
    let mut dcol = vec![T::zero(); npix * k];
    for bi in 0..d.batch {
        im2col(&xv[bi * plane_in..(bi + 1) * plane_in], &d, &mut col);
        let dy_s = &dy[bi * d.c_out * npix..(bi + 1) * d.c_out * npix];
        for v in dcol.iter_mut() {
            *v = T::zero();
        }
        for o in 0..d.c_out {
            let dyo = &dy_s[o * npix..(o + 1) * npix];
            let wrow = &wv[o * k..(o + 1) * k];
            let dwrow = &mut dw[o * k..(o + 1) * k];
            let mut s = T::zero();
            for p in 0..npix {
                let g = dyo[p];
                s += g;
                if g != T::zero() {
                    axpy(dwrow, &col[p * k..(p + 1) * k], g);
                    axpy(&mut dcol[p * k..(p + 1) * k], wrow, g);
                }
            }
            db[o] += s;
        }
        col2im(&dcol, &d, &mut dx[bi * plane_in..(bi + 1) * plane_in]);
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use crate::tensor::Graph;

    #[test]
    fn one_by_one_identity_kernel() {
        let mut g: Graph<f64> = Graph::new();
        let x = g
            .leaf(&[1, 3, 3], (1..=9).map(f64::from).collect())
            .unwrap();
        let w = g.leaf(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = g.leaf(&[1], vec![0.0]).unwrap();
        let y = g.conv2d(x, w, b, true).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn all_ones_valid_conv_sums_window() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(&[1, 3, 3], vec![1.0; 9]).unwrap();
        let w = g.leaf(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let b = g.leaf(&[1], vec![0.0]).unwrap();
        let y = g.conv2d(x, w, b, false).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1]);
        assert_eq!(g.value(y), &[9.0]);
    }

    #[test]
    fn same_padding_preserves_spatial_size() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(&[2, 5, 4], vec![0.25; 40]).unwrap();
        let w = g.leaf(&[3, 2, 3, 3], vec![0.1; 54]).unwrap();
        let b = g.leaf(&[3], vec![0.0; 3]).unwrap();
        let y = g.conv2d(x, w, b, true).unwrap();
        assert_eq!(g.shape(y), &[3, 5, 4]);
    }

    #[test]
    fn channel_mismatch_reports_axes() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(&[2, 4, 4], vec![0.0; 32]).unwrap();
        let w = g.leaf(&[1, 3, 3, 3], vec![0.0; 27]).unwrap();
        let b = g.leaf(&[1], vec![0.0]).unwrap();
        let err = g.conv2d(x, w, b, true).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2") && msg.contains("3"), "{}", msg);
    }

    #[test]
    fn even_kernel_rejected() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(&[1, 4, 4], vec![0.0; 16]).unwrap();
        let w = g.leaf(&[1, 1, 2, 2], vec![0.0; 4]).unwrap();
        let b = g.leaf(&[1], vec![0.0]).unwrap();
        assert!(g.conv2d(x, w, b, true).is_err());
    }

    #[test]
    fn batched_matches_per_sample() {
        let mut g: Graph<f64> = Graph::new();
        let vals: Vec<f64> = (0..2 * 12).map(|i| (i as f64 * 0.3).sin()).collect();
        let wv: Vec<f64> = (0..9).map(|i| (i as f64 * 0.7).cos()).collect();
        let xb = g.leaf(&[2, 1, 3, 4], vals.clone()).unwrap();
        let w = g.leaf(&[1, 1, 3, 3], wv.clone()).unwrap();
        let b = g.leaf(&[1], vec![0.2]).unwrap();
        let yb = g.conv2d(xb, w, b, true).unwrap();
        for s in 0..2 {
            let xs = g.leaf(&[1, 3, 4], vals[s * 12..(s + 1) * 12].to_vec()).unwrap();
            let ys = g.conv2d(xs, w, b, true).unwrap();
            let full = g.value(yb)[s * 12..(s + 1) * 12].to_vec();
            assert_eq!(full, g.value(ys));
        }
    }
}
