//! Synthetic cell-image generator: a stand-in corpus with the same
//! geometry as the annotated slides. Each record is a textured RGB canvas
//! holding one target structure at a known center plus smaller distractor
//! structures that mimic the class shapes.
//!
//! The three classes are distinguished by *shape*, not color — all stain
//! colors come from one shared family:
//!   class 0 "granulocyte": hollow ring (annulus),
//!   class 1 "mitosis":     elongated high-contrast capsule at random angle,
//!   class 2 "tumor":       filled disc.
//!
//! Every structure fits inside the d_c focus box, and distractors keep far
//! enough from the cell center that no ground-truth focus crop (even of a
//! rotated copy) can contain one.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::img::ImageU8;
use crate::losses::ClassLabel;
use crate::num::Real;
use crate::seeding;
use crate::stn::CropGeometry;

use super::{SourceRecord, SynthTruth};

/// Shape parameters recorded in the synthetic truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeParams {
    Ring { r_outer: f64, thickness: f64 },
    Bar { length: f64, width: f64, angle: f64 },
    Disc { radius: f64 },
}

/// Canvas center jitter: the cell sits near, not exactly at, canvas center.
const JITTER: i32 = 3;
/// Soft-edge width of rendered structures, px.
const FALLOFF: f64 = 1.5;

/// Canvas side for a crop geometry: room for the patch window at any
/// admissible offset around a jittered center, plus a safety margin.
pub fn canvas_side<T: Real>(geom: &CropGeometry<T>) -> usize {
    geom.d_i + 2 * (geom.max_offset() + JITTER + 1) as usize
}

fn clamp_u8(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round() as u8
}

/// Coverage of a signed distance: 1 well inside, 0 well outside, linear
/// across the `FALLOFF` band.
fn coverage(d: f64) -> f64 {
    (0.5 - d / FALLOFF).clamp(0.0, 1.0)
}

/// Low-frequency value noise plus per-pixel grain over a light stain tint.
fn textured_background(side: usize, rng: &mut ChaCha8Rng) -> ImageU8 {
    let base = [
        rng.random_range(200.0..232.0),
        rng.random_range(165.0..200.0),
        rng.random_range(190.0..222.0),
    ];
    const G: usize = 9;
    let mut coarse = [[[0.0f64; G]; G]; 3];
    for plane in &mut coarse {
        for row in plane.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.random_range(-16.0..16.0);
            }
        }
    }
    let mut img = ImageU8::new(side, side);
    let step = (side - 1) as f64 / (G - 1) as f64;
    for i in 0..side {
        for j in 0..side {
            let (gy, gx) = (i as f64 / step, j as f64 / step);
            let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
            let (fy, fx) = (gy - y0 as f64, gx - x0 as f64);
            let (y1, x1) = ((y0 + 1).min(G - 1), (x0 + 1).min(G - 1));
            let grain = rng.random_range(-7.0..7.0);
            let mut px = [0u8; 3];
            for c in 0..3 {
                let n = &coarse[c];
                let blotch = (1.0 - fy) * ((1.0 - fx) * n[y0][x0] + fx * n[y0][x1])
                    + fy * ((1.0 - fx) * n[y1][x0] + fx * n[y1][x1]);
                px[c] = clamp_u8(base[c] + blotch + grain);
            }
            img.set_px(i, j, px);
        }
    }
    img
}

/// Blend `color` over the canvas with per-pixel alpha from a signed
/// distance function, evaluated on a bounding box around (cx, cy).
fn render_sdf(
    img: &mut ImageU8,
    cx: f64,
    cy: f64,
    extent: f64,
    color: [f64; 3],
    opacity: f64,
    sdf: impl Fn(f64, f64) -> f64,
    rng: &mut ChaCha8Rng,
) {
    let r = extent + FALLOFF + 1.0;
    let (i0, i1) = (
        ((cy - r).floor().max(0.0)) as usize,
        ((cy + r).ceil().min((img.height - 1) as f64)) as usize,
    );
    let (j0, j1) = (
        ((cx - r).floor().max(0.0)) as usize,
        ((cx + r).ceil().min((img.width - 1) as f64)) as usize,
    );
    for i in i0..=i1 {
        for j in j0..=j1 {
            let a = coverage(sdf(j as f64 - cx, i as f64 - cy)) * opacity;
            if a <= 0.0 {
                continue;
            }
            let jitter = rng.random_range(-6.0..6.0);
            let old = img.px(i, j);
            let mut new = [0u8; 3];
            for c in 0..3 {
                let v = (1.0 - a) * old[c] as f64 + a * (color[c] + jitter);
                new[c] = clamp_u8(v);
            }
            img.set_px(i, j, new);
        }
    }
}

fn disc_sdf(radius: f64) -> impl Fn(f64, f64) -> f64 {
    move |x, y| (x * x + y * y).sqrt() - radius
}

fn ring_sdf(r_mid: f64, half_t: f64) -> impl Fn(f64, f64) -> f64 {
    move |x, y| ((x * x + y * y).sqrt() - r_mid).abs() - half_t
}

/// Capsule: a segment of half-length `h` at `angle`, inflated by `half_w`.
fn bar_sdf(h: f64, half_w: f64, angle: f64) -> impl Fn(f64, f64) -> f64 {
    let (sin, cos) = angle.sin_cos();
    move |x, y| {
        let along = (x * cos + y * sin).clamp(-h, h);
        let (px, py) = (along * cos, along * sin);
        ((x - px).powi(2) + (y - py).powi(2)).sqrt() - half_w
    }
}

/// One stain color from the shared purple family, scaled by a per-use
/// lightness factor.
fn stain_color(rng: &mut ChaCha8Rng, lightness: std::ops::Range<f64>) -> [f64; 3] {
    let f = rng.random_range(lightness);
    [
        rng.random_range(78.0..118.0) * f,
        rng.random_range(42.0..72.0) * f,
        rng.random_range(112.0..158.0) * f,
    ]
}

fn render_shape(
    img: &mut ImageU8,
    cx: f64,
    cy: f64,
    shape: ShapeParams,
    opacity: f64,
    lightness: std::ops::Range<f64>,
    rng: &mut ChaCha8Rng,
) {
    let color = stain_color(rng, lightness);
    match shape {
        ShapeParams::Disc { radius } => {
            render_sdf(img, cx, cy, radius, color, opacity, disc_sdf(radius), rng)
        }
        ShapeParams::Ring { r_outer, thickness } => render_sdf(
            img,
            cx,
            cy,
            r_outer,
            color,
            opacity,
            ring_sdf(r_outer - thickness / 2.0, thickness / 2.0),
            rng,
        ),
        ShapeParams::Bar {
            length,
            width,
            angle,
        } => render_sdf(
            img,
            cx,
            cy,
            length / 2.0,
            color,
            opacity,
            bar_sdf((length - width) / 2.0, width / 2.0, angle),
            rng,
        ),
    }
}

fn draw_shape_params(label: ClassLabel, rng: &mut ChaCha8Rng) -> ShapeParams {
    match label.index() {
        0 => ShapeParams::Ring {
            r_outer: rng.random_range(19.0..26.0),
            thickness: rng.random_range(5.5..9.0),
        },
        1 => ShapeParams::Bar {
            length: rng.random_range(36.0..50.0),
            width: rng.random_range(8.0..12.0),
            angle: rng.random_range(0.0..std::f64::consts::PI),
        },
        _ => ShapeParams::Disc {
            radius: rng.random_range(14.0..21.0),
        },
    }
}

fn shape_extent(shape: ShapeParams) -> f64 {
    match shape {
        ShapeParams::Ring { r_outer, .. } => r_outer,
        ShapeParams::Bar { length, .. } => length / 2.0,
        ShapeParams::Disc { radius } => radius,
    }
}

/// Minimum distance of a distractor center from the cell center: the
/// ground-truth focus crop spans ϑ_s·(d_i−1) source pixels, so it reaches
/// (d_i−1)·ϑ_s/2 px from the cell — ×√2 for rotated copies, plus the
/// distractor's own extent and soft edge.
fn distractor_clearance<T: Real>(geom: &CropGeometry<T>, extent: f64) -> f64 {
    let focus = (geom.d_i as f64 - 1.0) * geom.theta_s.to_f64c() / 2.0;
    focus * std::f64::consts::SQRT_2 + extent + FALLOFF + 2.0
}

fn render_distractors<T: Real>(
    img: &mut ImageU8,
    geom: &CropGeometry<T>,
    label: ClassLabel,
    cx: f64,
    cy: f64,
    rng: &mut ChaCha8Rng,
) {
    let side = img.width as f64;
    let count = rng.random_range(5..=8);
    for _ in 0..count {
        // Distractors mimic the class structures at reduced scale and are
        // drawn from the two classes *other* than the target's, like
        // neighbouring structures of a different type. They are large and
        // dark enough to contaminate pooled whole-patch features, yet
        // strictly smaller than any target (disjoint parameter ranges), so
        // the annotated structure is always the largest one in the patch.
        let class = {
            let pick = rng.random_range(0..2usize);
            (0..3).filter(|&c| c != label.index()).nth(pick).unwrap()
        };
        let shape = match class {
            0 => ShapeParams::Ring {
                r_outer: rng.random_range(9.0..13.0),
                thickness: rng.random_range(3.0..5.0),
            },
            1 => ShapeParams::Bar {
                length: rng.random_range(18.0..25.0),
                width: rng.random_range(5.0..7.5),
                angle: rng.random_range(0.0..std::f64::consts::PI),
            },
            _ => ShapeParams::Disc {
                radius: rng.random_range(7.0..10.5),
            },
        };
        let extent = shape_extent(shape);
        let clearance = distractor_clearance(geom, extent);
        let margin = extent + FALLOFF + 1.0;
        // rejection-sample a position that is far from the cell yet on-canvas
        for _ in 0..24 {
            let ang = rng.random_range(0.0..std::f64::consts::TAU);
            let dist = rng.random_range(clearance..(clearance + 34.0));
            let (px, py) = (cx + dist * ang.cos(), cy + dist * ang.sin());
            if px >= margin && px <= side - 1.0 - margin && py >= margin && py <= side - 1.0 - margin
            {
                render_shape(img, px, py, shape, rng.random_range(0.7..0.9), 0.75..1.1, rng);
                break;
            }
        }
    }
}

/// Render one record: background, target structure at a jittered center,
/// distractors. All randomness comes from the per-record stream.
fn generate_record<T: Real>(
    geom: &CropGeometry<T>,
    label: ClassLabel,
    index: u64,
    seed: u64,
) -> SourceRecord {
    let mut rng = seeding::stream(seed, "synth-record", index);
    let side = canvas_side(geom);
    let mut canvas = textured_background(side, &mut rng);
    let half = (side / 2) as i32;
    let cx = half + rng.random_range(-JITTER..=JITTER);
    let cy = half + rng.random_range(-JITTER..=JITTER);
    let shape = draw_shape_params(label, &mut rng);
    render_shape(
        &mut canvas,
        cx as f64,
        cy as f64,
        shape,
        1.0,
        0.72..1.05,
        &mut rng,
    );
    render_distractors(&mut canvas, geom, label, cx as f64, cy as f64, &mut rng);
    SourceRecord {
        canvas,
        cx,
        cy,
        label,
        source_id: format!("synth-{:05}", index),
        truth: Some(SynthTruth {
            cx,
            cy,
            shape: Some(shape),
        }),
    }
}

/// Generate `n_per_class` records of each class, classes interleaved,
/// bit-identical for a given seed.
pub fn generate_canvases<T: Real>(
    n_per_class: usize,
    geom: &CropGeometry<T>,
    seed: u64,
) -> Vec<SourceRecord> {
    (0..3 * n_per_class)
        .map(|i| {
            let label = ClassLabel::new(i % 3).expect("class index < 3");
            generate_record(geom, label, i as u64, seed)
        })
        .collect()
}
