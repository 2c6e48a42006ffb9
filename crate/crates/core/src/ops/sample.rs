//! Affine grid generation and differentiable bilinear sampling — the pair
//! that lets a regressed transform warp the input inside the tape.
//!
//! Conventions (shared with the geometry module):
//! - theta is the row-major 2×3 vector `[t1,t2,tx,t3,t4,ty]`, mapping
//!   *output* coords to *source* coords;
//! - normalized coords are endpoint-aligned: position j of an axis of
//!   length n sits at −1 + 2j/(n−1), so ±1 are the first/last pixel centers;
//! - source coords within 1e-9 of a pixel center snap to it, which makes
//!   identity sampling bit-exact;
//! - anything outside [−1,1] reads as zero (zero padding).

use crate::error::{Error, Result};
use crate::num::Real;
use crate::tensor::{Graph, Op, Tensor};

/// Snap radius around exact pixel centers, in pixel units.
pub(crate) const SNAP: f64 = 1e-9;

/// Normalized coordinate of index j on an endpoint-aligned axis of length n.
pub(crate) fn norm_coord<T: Real>(j: usize, n: usize) -> T {
    debug_assert!(n >= 2);
    T::from_f64c(-1.0 + 2.0 * j as f64 / (n - 1) as f64)
}

/// Map a normalized coordinate to pixel units with snapping; returns the
/// floor cell and the fractional part.
fn to_pixel<T: Real>(x: T, size: usize) -> (isize, T) {
    let half = T::from_f64c(0.5);
    let mut u = (x + T::one()) * half * T::from_f64c((size - 1) as f64);
    let r = u.round();
    if (u - r).abs() < T::from_f64c(SNAP) {
        u = r;
    }
    let f = u.floor();
    (f.to_f64c() as isize, u - f)
}

#[inline]
fn at<T: Real>(plane: &[T], h: usize, w: usize, i: isize, j: isize) -> T {
    if i >= 0 && i < h as isize && j >= 0 && j < w as isize {
        plane[i as usize * w + j as usize]
    } else {
        T::zero()
    }
}

/// Fill one sample's grid `[2,h_out,w_out]` (x-plane, then y-plane).
pub(crate) fn fill_grid<T: Real>(theta: &[T], h_out: usize, w_out: usize, out: &mut [T]) {
    debug_assert_eq!(theta.len(), 6);
    debug_assert_eq!(out.len(), 2 * h_out * w_out);
    let (t1, t2, tx, t3, t4, ty) = (theta[0], theta[1], theta[2], theta[3], theta[4], theta[5]);
    let plane = h_out * w_out;
    for i in 0..h_out {
        let yt: T = norm_coord(i, h_out);
        for j in 0..w_out {
            let xt: T = norm_coord(j, w_out);
            out[i * w_out + j] = t1 * xt + t2 * yt + tx;
            out[plane + i * w_out + j] = t3 * xt + t4 * yt + ty;
        }
    }
}

/// Bilinear-sample one image `[C,h,w]` at grid `[2,ho,wo]` into `[C,ho,wo]`.
pub(crate) fn sample_one<T: Real>(
    img: &[T],
    c: usize,
    h: usize,
    w: usize,
    grid: &[T],
    ho: usize,
    wo: usize,
    out: &mut [T],
) {
    let gplane = ho * wo;
    let one = T::one();
    for p in 0..gplane {
        let (j0, fu) = to_pixel(grid[p], w);
        let (i0, fv) = to_pixel(grid[gplane + p], h);
        let (w00, w01) = ((one - fv) * (one - fu), (one - fv) * fu);
        let (w10, w11) = (fv * (one - fu), fv * fu);
        for ci in 0..c {
            let plane = &img[ci * h * w..(ci + 1) * h * w];
            let v = w00 * at(plane, h, w, i0, j0)
                + w01 * at(plane, h, w, i0, j0 + 1)
                + w10 * at(plane, h, w, i0 + 1, j0)
                + w11 * at(plane, h, w, i0 + 1, j0 + 1);
            out[ci * gplane + p] = v;
        }
    }
}

impl<T: Real> Graph<T> {
    /// Build the sampling grid for `theta` (`[6]` or `[B,6]`) at the given
    /// output resolution. Output is `[2,H,W]` / `[B,2,H,W]`: an x-plane of
    /// source coords followed by a y-plane, both normalized.
    pub fn affine_grid(&mut self, theta: Tensor, h_out: usize, w_out: usize) -> Result<Tensor> {
        if h_out < 2 || w_out < 2 {
            return Err(Error::contract(
                "affine_grid",
                format!("output size must be >= 2, got {}x{}", h_out, w_out),
            ));
        }
        let ts = self.shape(theta).to_vec();
        let (batch, batched) = match ts.as_slice() {
            [6] => (1usize, false),
            [b, 6] => (*b, true),
            other => {
                return Err(Error::dim(
                    "affine_grid",
                    format!("theta shape {:?}, want [6] or [B,6]", other),
                ))
            }
        };
        let tv = self.value(theta);
        let plane = 2 * h_out * w_out;
        let mut out = vec![T::zero(); batch * plane];
        for bi in 0..batch {
            fill_grid(
                &tv[bi * 6..(bi + 1) * 6],
                h_out,
                w_out,
                &mut out[bi * plane..(bi + 1) * plane],
            );
        }
        let shape = if batched {
            vec![batch, 2, h_out, w_out]
        } else {
            vec![2, h_out, w_out]
        };
        Ok(self.push(Op::AffineGrid { theta: theta.id }, shape, out))
    }

    /// Sample `image` (`[C,H,W]` / `[B,C,H,W]`) at `grid` (`[2,Ho,Wo]` /
    /// `[B,2,Ho,Wo]`); differentiable w.r.t. both image and grid (and hence
    /// theta, through `affine_grid`).
    pub fn bilinear_sample(&mut self, image: Tensor, grid: Tensor) -> Result<Tensor> {
        let is = self.shape(image).to_vec();
        let gs = self.shape(grid).to_vec();
        let (batch, c, h, w, batched) = match is.as_slice() {
            [c, h, w] => (1usize, *c, *h, *w, false),
            [b, c, h, w] => (*b, *c, *h, *w, true),
            other => {
                return Err(Error::dim(
                    "bilinear_sample",
                    format!("image shape {:?}", other),
                ))
            }
        };
        let (gb, ho, wo) = match gs.as_slice() {
            [2, ho, wo] => (1usize, *ho, *wo),
            [b, 2, ho, wo] => (*b, *ho, *wo),
            other => {
                return Err(Error::dim(
                    "bilinear_sample",
                    format!("grid shape {:?}, want [2,H,W] or [B,2,H,W]", other),
                ))
            }
        };
        if gb != batch || (gs.len() == 4) != batched {
            return Err(Error::dim(
                "bilinear_sample",
                format!("image batch {:?} vs grid batch {:?}", is, gs),
            ));
        }
        let gplane = 2 * ho * wo;
        let iplane = c * h * w;
        let oplane = c * ho * wo;
        let iv = self.value(image);
        let gv = self.value(grid);
        let mut out = vec![T::zero(); batch * oplane];
        for bi in 0..batch {
            sample_one(
                &iv[bi * iplane..(bi + 1) * iplane],
                c,
                h,
                w,
                &gv[bi * gplane..(bi + 1) * gplane],
                ho,
                wo,
                &mut out[bi * oplane..(bi + 1) * oplane],
            );
        }
        let shape = if batched {
            vec![batch, c, ho, wo]
        } else {
            vec![c, ho, wo]
        };
        Ok(self.push(
            Op::BilinearSample {
                image: image.id,
                grid: grid.id,
            },
            shape,
            out,
        ))
    }
}

pub(crate) fn affine_grid_backward<T: Real>(
    theta_shape: &[usize],
    grid_shape: &[usize],
    dy: &[T],
) -> Vec<T> {
    let (batch, h_out, w_out) = match grid_shape {
        [2, h, w] => (1usize, *h, *w),
        [b, 2, h, w] => (*b, *h, *w),
        _ => unreachable!("grid shape fixed at forward time"),
    };
    let mut dtheta = vec![T::zero(); theta_shape.iter().product()];
    let plane = h_out * w_out;
    for bi in 0..batch {
        let dxs = &dy[bi * 2 * plane..bi * 2 * plane + plane];
        let dys = &dy[bi * 2 * plane + plane..(bi + 1) * 2 * plane];
        let dt = &mut dtheta[bi * 6..(bi + 1) * 6];
        for i in 0..h_out {
            let yt: T = norm_coord(i, h_out);
            for j in 0..w_out {
                let xt: T = norm_coord(j, w_out);
                let gx = dxs[i * w_out + j];
                let gy = dys[i * w_out + j];
                dt[0] += gx * xt;
                dt[1] += gx * yt;
                dt[2] += gx;
                dt[3] += gy * xt;
                dt[4] += gy * yt;
                dt[5] += gy;
            }
        }
    }
    dtheta
}

pub(crate) fn bilinear_backward<T: Real>(
    iv: &[T],
    is: &[usize],
    gv: &[T],
    gs: &[usize],
    dy: &[T],
) -> (Vec<T>, Vec<T>) {
    let (batch, c, h, w) = match is {
        [c, h, w] => (1usize, *c, *h, *w),
        [b, c, h, w] => (*b, *c, *h, *w),
        _ => unreachable!("image shape fixed at forward time"),
    };
    let (ho, wo) = match gs {
        [2, ho, wo] => (*ho, *wo),
        [_, 2, ho, wo] => (*ho, *wo),
        _ => unreachable!("grid shape fixed at forward time"),
    };
    let one = T::one();
    let half = T::from_f64c(0.5);
    let su = half * T::from_f64c((w - 1) as f64); // du/dx_s
    let sv = half * T::from_f64c((h - 1) as f64); // dv/dy_s
    let gplane = 2 * ho * wo;
    let iplane = c * h * w;
    let oplane = c * ho * wo;
    let mut dimg = vec![T::zero(); iv.len()];
    let mut dgrid = vec![T::zero(); gv.len()];
    for bi in 0..batch {
        let img = &iv[bi * iplane..(bi + 1) * iplane];
        let grid = &gv[bi * gplane..(bi + 1) * gplane];
        let dyb = &dy[bi * oplane..(bi + 1) * oplane];
        let dimg_b = &mut dimg[bi * iplane..(bi + 1) * iplane];
        let dgrid_b = &mut dgrid[bi * gplane..(bi + 1) * gplane];
        let pix = ho * wo;
        for p in 0..pix {
            let (j0, fu) = to_pixel(grid[p], w);
            let (i0, fv) = to_pixel(grid[pix + p], h);
            let (w00, w01) = ((one - fv) * (one - fu), (one - fv) * fu);
            let (w10, w11) = (fv * (one - fu), fv * fu);
            let mut du = T::zero();
            let mut dv = T::zero();
            for ci in 0..c {
                let g = dyb[ci * pix + p];
                if g == T::zero() {
                    continue;
                }
                let base = ci * h * w;
                let plane = &img[base..base + h * w];
                let p00 = at(plane, h, w, i0, j0);
                let p01 = at(plane, h, w, i0, j0 + 1);
                let p10 = at(plane, h, w, i0 + 1, j0);
                let p11 = at(plane, h, w, i0 + 1, j0 + 1);
                // scatter into the four (in-bounds) neighbours
                let dplane = &mut dimg_b[base..base + h * w];
                let mut scat = |i: isize, j: isize, wgt: T| {
                    if i >= 0 && i < h as isize && j >= 0 && j < w as isize {
                        dplane[i as usize * w + j as usize] += g * wgt;
                    }
                };
                scat(i0, j0, w00);
                scat(i0, j0 + 1, w01);
                scat(i0 + 1, j0, w10);
                scat(i0 + 1, j0 + 1, w11);
                du += g * ((one - fv) * (p01 - p00) + fv * (p11 - p10));
                dv += g * ((one - fu) * (p10 - p00) + fu * (p11 - p01));
            }
            dgrid_b[p] += du * su;
            dgrid_b[pix + p] += dv * sv;
        }
    }
    (dimg, dgrid)
}
