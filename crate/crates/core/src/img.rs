//! Plain (non-tape) image buffers shared by the geometry and data layers.
//!
//! `Image<T>` is channel-planar (CHW, row-major) to match tensor layout;
//! `ImageU8` is interleaved RGB like an 8-bit PNG, which keeps the large
//! source canvases at one byte per sample instead of eight.

use crate::error::{Error, Result};
use crate::num::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// CHW row-major; `len == channels*height*width`.
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::dim(
                "image",
                format!(
                    "{}x{}x{} wants {} values, got {}",
                    channels,
                    height,
                    width,
                    channels * height * width,
                    data.len()
                ),
            ));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn at(&self, c: usize, i: usize, j: usize) -> T {
        self.data[(c * self.height + i) * self.width + j]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, i: usize, j: usize) -> &mut T {
        &mut self.data[(c * self.height + i) * self.width + j]
    }

    pub fn mean(&self) -> T {
        let n = T::from_f64c(self.data.len() as f64);
        self.data.iter().fold(T::zero(), |a, &x| a + x) / n
    }

    /// Crop a `side`×`side` window with top-left `(top, left)`; the window
    /// must lie within bounds.
    pub fn crop(&self, top: i32, left: i32, side: usize) -> Result<Image<T>> {
        if top < 0
            || left < 0
            || top as usize + side > self.height
            || left as usize + side > self.width
        {
            return Err(Error::contract(
                "crop",
                format!(
                    "window {}x{} at ({},{}) exceeds {}x{} source",
                    side, side, top, left, self.height, self.width
                ),
            ));
        }
        let mut out = Image::zeros(self.channels, side, side);
        for c in 0..self.channels {
            for i in 0..side {
                let src = (c * self.height + top as usize + i) * self.width + left as usize;
                let dst = (c * side + i) * side;
                out.data[dst..dst + side].copy_from_slice(&self.data[src..src + side]);
            }
        }
        Ok(out)
    }
}

/// Interleaved 8-bit RGB (HWC), the storage form of source canvases.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageU8 {
    pub height: usize,
    pub width: usize,
    /// RGB interleaved, row-major; `len == 3*height*width`.
    pub data: Vec<u8>,
}

impl ImageU8 {
    pub fn new(height: usize, width: usize) -> Self {
        ImageU8 {
            height,
            width,
            data: vec![0; 3 * height * width],
        }
    }

    #[inline]
    pub fn px(&self, i: usize, j: usize) -> [u8; 3] {
        let o = (i * self.width + j) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set_px(&mut self, i: usize, j: usize, rgb: [u8; 3]) {
        let o = (i * self.width + j) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Quantize a `[0,1]` channel-planar image back to interleaved bytes;
    /// inverse of [`ImageU8::to_planar`] up to rounding. Values outside
    /// `[0,1]` are clamped.
    pub fn from_planar<T: Real>(img: &Image<T>) -> Result<ImageU8> {
        if img.channels != 3 {
            return Err(Error::dim(
                "from_planar",
                format!("want 3 channels, got {}", img.channels),
            ));
        }
        let mut out = ImageU8::new(img.height, img.width);
        let plane = img.height * img.width;
        for p in 0..plane {
            for c in 0..3 {
                let v = img.data[c * plane + p].to_f64c();
                out.data[p * 3 + c] = (v * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
        Ok(out)
    }

    /// Normalize to `[0,1]` channel-planar floats (divide by 255).
    pub fn to_planar<T: Real>(&self) -> Image<T> {
        let mut out = Image::zeros(3, self.height, self.width);
        let inv = T::from_f64c(1.0 / 255.0);
        let plane = self.height * self.width;
        for p in 0..plane {
            for c in 0..3 {
                out.data[c * plane + p] = T::from_f64c(self.data[p * 3 + c] as f64) * inv;
            }
        }
        out
    }

    /// Crop a `side`×`side` window with top-left `(top, left)`; the window
    /// must lie within bounds.
    pub fn crop(&self, top: i32, left: i32, side: usize) -> Result<ImageU8> {
        if top < 0
            || left < 0
            || top as usize + side > self.height
            || left as usize + side > self.width
        {
            return Err(Error::contract(
                "crop",
                format!(
                    "window {}x{} at ({},{}) exceeds {}x{} source",
                    side, side, top, left, self.height, self.width
                ),
            ));
        }
        let mut out = ImageU8::new(side, side);
        for i in 0..side {
            let src = ((top as usize + i) * self.width + left as usize) * 3;
            let dst = i * side * 3;
            out.data[dst..dst + side * 3].copy_from_slice(&self.data[src..src + side * 3]);
        }
        Ok(out)
    }
}

/// Rotate about the image center by `angle` radians, bilinear resampled,
/// zero fill outside the source. Source coordinates within 1e-9 of a pixel
/// center snap to it, so 0 and π rotations are exact.
pub fn rotate_bilinear<T: Real>(src: &Image<T>, angle: f64) -> Image<T> {
    let (c, h, w) = (src.channels, src.height, src.width);
    let mut out = Image::zeros(c, h, w);
    let ci = (h as f64 - 1.0) / 2.0;
    let cj = (w as f64 - 1.0) / 2.0;
    let (sin, cos) = angle.sin_cos();
    let snap = |x: f64| {
        let r = x.round();
        if (x - r).abs() < 1e-9 {
            r
        } else {
            x
        }
    };
    for i in 0..h {
        for j in 0..w {
            let di = i as f64 - ci;
            let dj = j as f64 - cj;
            // inverse map: rotate output coords by −angle into the source
            let sj = snap(cj + cos * dj + sin * di);
            let si = snap(ci - sin * dj + cos * di);
            let (i0, j0) = (si.floor(), sj.floor());
            let (fi, fj) = (si - i0, sj - j0);
            let (i0, j0) = (i0 as isize, j0 as isize);
            let get = |cc: usize, ii: isize, jj: isize| -> f64 {
                if ii >= 0 && ii < h as isize && jj >= 0 && jj < w as isize {
                    src.at(cc, ii as usize, jj as usize).to_f64c()
                } else {
                    0.0
                }
            };
            for cc in 0..c {
                let v = (1.0 - fi) * ((1.0 - fj) * get(cc, i0, j0) + fj * get(cc, i0, j0 + 1))
                    + fi * ((1.0 - fj) * get(cc, i0 + 1, j0) + fj * get(cc, i0 + 1, j0 + 1));
                *out.at_mut(cc, i, j) = T::from_f64c(v);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(h: usize, w: usize) -> Image<f64> {
        let mut im = Image::zeros(1, h, w);
        for i in 0..h {
            for j in 0..w {
                *im.at_mut(0, i, j) = ((i * 31 + j * 17) % 97) as f64 / 97.0;
            }
        }
        im
    }

    #[test]
    fn rotate_zero_is_identity() {
        let im = pattern(9, 7);
        assert_eq!(rotate_bilinear(&im, 0.0), im);
    }

    #[test]
    fn rotate_pi_on_point_symmetric_pattern_is_identity() {
        // f(i,j) = f(h-1-i, w-1-j) by construction
        let mut im = Image::zeros(1, 8, 8);
        for i in 0..8 {
            for j in 0..8 {
                let v = ((i.min(7 - i) * 8) + j.min(7 - j)) as f64;
                *im.at_mut(0, i, j) = v;
            }
        }
        let rot = rotate_bilinear(&im, std::f64::consts::PI);
        for (a, b) in rot.data.iter().zip(im.data.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rotation_preserves_interior_disc_mean() {
        // a soft disc well inside the frame: every nonzero pixel stays
        // in-bounds under rotation, so bilinear mass is conserved closely
        let n = 33usize;
        let c = (n as f64 - 1.0) / 2.0;
        let mut im = Image::zeros(1, n, n);
        for i in 0..n {
            for j in 0..n {
                let r = ((i as f64 - c).powi(2) + (j as f64 - c).powi(2)).sqrt();
                *im.at_mut(0, i, j) = (1.0 - (r / 8.0).powi(2)).max(0.0);
            }
        }
        let rot = rotate_bilinear(&im, 0.65);
        assert!((rot.mean() - im.mean()).abs() < 1e-3);
    }

    #[test]
    fn u8_round_trip_and_crop() {
        let mut src = ImageU8::new(6, 6);
        for i in 0..6 {
            for j in 0..6 {
                src.set_px(i, j, [(i * 40) as u8, (j * 40) as u8, 7]);
            }
        }
        let crop = src.crop(2, 1, 3).unwrap();
        assert_eq!(crop.px(0, 0), src.px(2, 1));
        assert_eq!(crop.px(2, 2), src.px(4, 3));
        assert!(src.crop(4, 4, 3).is_err());

        let planar: Image<f64> = crop.to_planar();
        assert_eq!(planar.at(2, 0, 0), 7.0 / 255.0);
        assert_eq!(ImageU8::from_planar(&planar).unwrap(), crop);
    }

    #[test]
    fn from_planar_clamps_out_of_range_values() {
        let img = Image::from_vec(3, 1, 1, vec![-0.2, 0.5, 1.7]).unwrap();
        let q = ImageU8::from_planar(&img).unwrap();
        assert_eq!(q.px(0, 0), [0, 128, 255]);
        let gray = Image::from_vec(1, 2, 2, vec![0.0; 4]).unwrap();
        assert!(ImageU8::from_planar(&gray).is_err());
    }
}
