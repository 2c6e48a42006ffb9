//! Crop geometry and the spatial-transformer plumbing built on it.
//!
//! A *source canvas* holds a cell whose annotated center is pixel
//! `(cx, cy)` (column, row). Training patches of side `d_i` are cut with the
//! window center displaced by an integer offset `(Δx, Δy)` from the cell, so
//! the cell sits at `−Δ` relative to the patch center. The transformer
//! recovers a `d_c`-sided, scale-`ϑ_s` view of the cell by sampling the patch
//! with the affine map
//!
//! ```text
//!   ϑ = [ ϑ_s   0    ϑ_x ]      ϑ_x = −2Δx/(d_i−1)
//!       [ 0    ϑ_s   ϑ_y ]      ϑ_y = −2Δy/(d_i−1)
//! ```
//!
//! in endpoint-aligned normalized coordinates (±1 are the outermost pixel
//! centers; see [`crate::tensor::Graph::affine_grid`]). The `d_i−1`
//! denominator is what makes a `+Δ` pixel shift of the window and a `ϑ`
//! translation of the grid cancel exactly, which the round-trip tests pin
//! to 1e-9.

use rand::Rng;

use crate::error::{Error, Result};
use crate::img::Image;
use crate::num::Real;
use crate::ops::sample;
use crate::tensor::{Graph, Tensor};

/// Static description of the crop scheme: patch side `d_i`, cell-crop side
/// `d_c`, transformer scale `theta_s`, and the pixel offset of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropGeometry<T> {
    /// Side of the patch the network sees.
    pub d_i: usize,
    /// Side of the crop the transformer extracts.
    pub d_c: usize,
    /// Fixed scale of the ground-truth transform.
    pub theta_s: T,
    /// Horizontal window offset in pixels (window center − cell center).
    pub dx: i32,
    /// Vertical window offset in pixels.
    pub dy: i32,
}

impl<T: Real> CropGeometry<T> {
    /// Largest offset magnitude that keeps the cell crop inside the patch.
    pub fn max_offset(&self) -> i32 {
        ((self.d_i - self.d_c) / 2) as i32
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_c == 0 || self.d_i <= self.d_c {
            return Err(Error::contract(
                "crop_geometry",
                format!("need d_i > d_c > 0, got d_i={} d_c={}", self.d_i, self.d_c),
            ));
        }
        if self.theta_s <= T::zero() {
            return Err(Error::contract(
                "crop_geometry",
                format!("theta_s must be positive, got {}", self.theta_s),
            ));
        }
        let b = self.max_offset();
        if self.dx.abs() > b || self.dy.abs() > b {
            return Err(Error::contract(
                "crop_geometry",
                format!(
                    "offset ({},{}) exceeds bound {} = (d_i-d_c)/2",
                    self.dx, self.dy, b
                ),
            ));
        }
        Ok(())
    }
}

/// A 2×3 affine map in row-major layout `[t1, t2, tx, t3, t4, ty]`,
/// taking normalized output coords to normalized source coords.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTheta<T>(pub [T; 6]);

impl<T: Real> AffineTheta<T> {
    pub fn identity() -> Self {
        AffineTheta([
            T::one(),
            T::zero(),
            T::zero(),
            T::zero(),
            T::one(),
            T::zero(),
        ])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    /// `(tx, ty)` — the translation components.
    pub fn translation(&self) -> (T, T) {
        (self.0[2], self.0[5])
    }

    /// Column norms of the linear part: `s_x = √(t1²+t3²)`,
    /// `s_y = √(t2²+t4²)`. Invariant under rotation of the columns.
    pub fn scales(&self) -> (T, T) {
        let [t1, t2, _, t3, t4, _] = self.0;
        (
            (t1 * t1 + t3 * t3).sqrt(),
            (t2 * t2 + t4 * t4).sqrt(),
        )
    }
}

/// Ground-truth transform for a patch cut at offset `(Δx, Δy)`: pure scale
/// `ϑ_s` plus the translation that re-centers the cell.
pub fn make_ground_truth_theta<T: Real>(geom: &CropGeometry<T>) -> Result<AffineTheta<T>> {
    geom.validate()?;
    let denom = T::from_f64c((geom.d_i - 1) as f64);
    let two = T::from_f64c(2.0);
    let tx = -(two * T::from_f64c(geom.dx as f64)) / denom;
    let ty = -(two * T::from_f64c(geom.dy as f64)) / denom;
    Ok(AffineTheta([
        geom.theta_s,
        T::zero(),
        tx,
        T::zero(),
        geom.theta_s,
        ty,
    ]))
}

/// Per-output-pixel source coordinates produced by an affine map; plain
/// (non-tape) counterpart of [`Graph::affine_grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid<T> {
    pub h_out: usize,
    pub w_out: usize,
    /// Planar `[2, h_out, w_out]`: x-plane then y-plane, normalized coords.
    planar: Vec<T>,
}

impl<T: Real> SampleGrid<T> {
    /// `(x_s, y_s)` sampled for output pixel `(i, j)`.
    pub fn at(&self, i: usize, j: usize) -> (T, T) {
        let plane = self.h_out * self.w_out;
        let p = i * self.w_out + j;
        (self.planar[p], self.planar[plane + p])
    }

    pub fn planar(&self) -> &[T] {
        &self.planar
    }
}

/// Evaluate the sampling grid for `theta` at `h_out`×`w_out` (≥ 2 each).
pub fn affine_grid<T: Real>(
    theta: &AffineTheta<T>,
    h_out: usize,
    w_out: usize,
) -> Result<SampleGrid<T>> {
    if h_out < 2 || w_out < 2 {
        return Err(Error::contract(
            "affine_grid",
            format!("output size must be >= 2, got {}x{}", h_out, w_out),
        ));
    }
    let mut planar = vec![T::zero(); 2 * h_out * w_out];
    sample::fill_grid(&theta.0, h_out, w_out, &mut planar);
    Ok(SampleGrid {
        h_out,
        w_out,
        planar,
    })
}

/// Bilinear-sample `image` at `grid`; zero outside the source, exact on
/// snapped pixel centers. Plain counterpart of [`Graph::bilinear_sample`].
pub fn bilinear_sample<T: Real>(image: &Image<T>, grid: &SampleGrid<T>) -> Image<T> {
    let mut out = Image::zeros(image.channels, grid.h_out, grid.w_out);
    sample::sample_one(
        &image.data,
        image.channels,
        image.height,
        image.width,
        &grid.planar,
        grid.h_out,
        grid.w_out,
        &mut out.data,
    );
    out
}

/// In-graph scale extraction: `theta` is `[6]` or `[B,6]`; returns
/// `(s_x, s_y)` of shape `[1]` / `[B,1]`, differentiable through the
/// column norms.
pub fn extract_scales<T: Real>(g: &mut Graph<T>, theta: Tensor) -> Result<(Tensor, Tensor)> {
    let col = |g: &mut Graph<T>, a: usize, b: usize| -> Result<Tensor> {
        let ta = g.pick_cols(theta, &[a])?;
        let tb = g.pick_cols(theta, &[b])?;
        let qa = g.square(ta);
        let qb = g.square(tb);
        let sum = g.add(qa, qb)?;
        Ok(g.sqrt(sum))
    };
    let sx = col(g, 0, 3)?;
    let sy = col(g, 1, 4)?;
    Ok((sx, sy))
}

/// Top-left `(top, left)` of the `d`-sided window centered at the cell and
/// shifted by `(dx, dy)` pixels.
pub fn offset_window(center: (i32, i32), d: usize, dx: i32, dy: i32) -> (i32, i32) {
    let half = (d / 2) as i32;
    (center.1 - half + dy, center.0 - half + dx)
}

/// Crop the patch for cell `center = (cx, cy)` at window offset `(dx, dy)`.
pub fn crop_at_offset<T: Real>(
    src: &Image<T>,
    center: (i32, i32),
    d: usize,
    dx: i32,
    dy: i32,
) -> Result<Image<T>> {
    let (top, left) = offset_window(center, d, dx, dy);
    src.crop(top, left, d)
}

/// Admissible `(dx, dy)` ranges for a cell: `±max_offset` intersected with
/// the offsets that keep the window inside an `src_h`×`src_w` source (a cell
/// near a border forces the window inward). Errors when no admissible offset
/// remains.
pub fn offset_bounds<T: Real>(
    geom: &CropGeometry<T>,
    center: (i32, i32),
    src_h: usize,
    src_w: usize,
) -> Result<((i32, i32), (i32, i32))> {
    let b = geom.max_offset();
    let half = (geom.d_i / 2) as i32;
    let axis = |c: i32, size: usize| -> Result<(i32, i32)> {
        // window start c − half + d ∈ [0, size − d_i]
        let lo = (half - c).max(-b);
        let hi = (size as i32 - geom.d_i as i32 + half - c).min(b);
        if lo > hi {
            return Err(Error::contract(
                "offset_bounds",
                format!(
                    "no {}px window within offset bound {} fits a source of extent {} at {}",
                    geom.d_i, b, size, c
                ),
            ));
        }
        Ok((lo, hi))
    };
    Ok((axis(center.0, src_w)?, axis(center.1, src_h)?))
}

/// Draw integer offsets uniformly from the given inclusive ranges.
pub fn draw_offset<R: Rng>(
    bounds: ((i32, i32), (i32, i32)),
    rng: &mut R,
) -> (i32, i32) {
    let ((x_lo, x_hi), (y_lo, y_hi)) = bounds;
    (rng.random_range(x_lo..=x_hi), rng.random_range(y_lo..=y_hi))
}

/// Cut a patch at a uniformly random admissible offset; returns the patch
/// and the drawn `(Δx, Δy)`.
pub fn random_offset_crop<T: Real, R: Rng>(
    src: &Image<T>,
    center: (i32, i32),
    geom: &CropGeometry<T>,
    rng: &mut R,
) -> Result<(Image<T>, i32, i32)> {
    geom.validate()?;
    let bounds = offset_bounds(geom, center, src.height, src.width)?;
    let (dx, dy) = draw_offset(bounds, rng);
    let patch = crop_at_offset(src, center, geom.d_i, dx, dy)?;
    Ok((patch, dx, dy))
}
