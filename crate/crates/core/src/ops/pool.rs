//! Max pooling. The public layer op is the 2×2/stride-2 reduction; the
//! inception block additionally uses a 3×3/stride-1/same variant. Both share
//! one kernel that records the argmax (ties → first in row-major order) so
//! backward is an exact scatter.

use crate::error::{Error, Result};
use crate::num::Real;
use crate::tensor::{Graph, Op, Tensor};

impl<T: Real> Graph<T> {
    /// Standard 2×2, stride-2 pooling. H and W must be even.
    pub fn maxpool2d(&mut self, x: Tensor) -> Result<Tensor> {
        let s = self.shape(x);
        let (h, w) = match s.len() {
            3 => (s[1], s[2]),
            4 => (s[2], s[3]),
            r => return Err(Error::dim("maxpool2d", format!("input rank {}", r))),
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim(
                "maxpool2d",
                format!("spatial dims must be even, got {}x{}", h, w),
            ));
        }
        self.maxpool(x, 2, 2, false)
    }

    /// General max pool. With `same=true` the output keeps the spatial size
    /// (stride must be 1) and out-of-bounds positions are ignored, i.e.
    /// treated as −∞.
    pub fn maxpool(
        &mut self,
        x: Tensor,
        window: usize,
        stride: usize,
        same: bool,
    ) -> Result<Tensor> {
        if window == 0 || stride == 0 {
            return Err(Error::contract("maxpool", "window/stride must be positive".to_string()));
        }
        if same && stride != 1 {
            return Err(Error::contract(
                "maxpool",
                "same-padding pool requires stride 1".to_string(),
            ));
        }
        let s = self.shape(x).to_vec();
        let (batch, c, h, w, batched) = match s.len() {
            3 => (1, s[0], s[1], s[2], false),
            4 => (s[0], s[1], s[2], s[3], true),
            r => return Err(Error::dim("maxpool", format!("input rank {}", r))),
        };
        let pad = if same { window / 2 } else { 0 };
        if !same && (h < window || w < window) {
            return Err(Error::dim(
                "maxpool",
                format!("input {}x{} smaller than window {}", h, w, window),
            ));
        }
        let h_out = if same { h } else { (h - window) / stride + 1 };
        let w_out = if same { w } else { (w - window) / stride + 1 };

        let xv = self.value(x);
        let mut out = vec![T::zero(); batch * c * h_out * w_out];
        let mut argmax = vec![0u32; out.len()];
        for bi in 0..batch {
            for ci in 0..c {
                let plane_base = (bi * c + ci) * h * w;
                let out_base = (bi * c + ci) * h_out * w_out;
                for oi in 0..h_out {
                    for oj in 0..w_out {
                        let mut best: Option<(T, usize)> = None;
                        for ki in 0..window {
                            let si = (oi * stride + ki) as isize - pad as isize;
                            if si < 0 || si >= h as isize {
                                continue;
                            }
                            for kj in 0..window {
                                let sj = (oj * stride + kj) as isize - pad as isize;
                                if sj < 0 || sj >= w as isize {
                                    continue;
                                }
                                let idx = plane_base + si as usize * w + sj as usize;
                                let v = xv[idx];
                                // strict > keeps the first (row-major) maximum
                                if best.map_or(true, |(bv, _)| v > bv) {
                                    best = Some((v, idx));
                                }
                            }
                        }
                        let (v, idx) = best.expect("window always overlaps the image");
                        out[out_base + oi * w_out + oj] = v;
                        argmax[out_base + oi * w_out + oj] = idx as u32;
                    }
                }
            }
        }
        let shape = if batched {
            vec![batch, c, h_out, w_out]
        } else {
            vec![c, h_out, w_out]
        };
        Ok(self.push(Op::MaxPool { x: x.id, argmax }, shape, out))
    }
}
