//! The canonical finite-difference suite: every differentiable operator
//! checked on several random instances with fixed seeds. Shared by the
//! `gradcheck` CLI subcommand and the acceptance gate.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{check_op, GradReport, Instance};
use crate::losses::{cross_entropy, localization_loss, ClassLabel};
use crate::networks::{inception_block, InceptionSpec};
use crate::seeding;
use crate::stn::{extract_scales, AffineTheta};

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
const INSTANCES: usize = 5;

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values bounded away from zero (for kinked ops like relu and sqrt).
fn off_zero(rng: &mut ChaCha8Rng, n: usize, min_abs: f64, max_abs: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let sign = if rng.random_range(0..2) == 0 { -1.0 } else { 1.0 };
            sign * rng.random_range(min_abs..max_abs)
        })
        .collect()
}

/// Well-separated values for pooling windows: a shuffled ramp, so no two
/// candidates sit within finite-difference reach of each other.
fn separated(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut vals: Vec<f64> = (0..n).map(|i| 0.05 + 0.9 * i as f64 / n as f64).collect();
    use rand::seq::SliceRandom;
    vals.shuffle(rng);
    vals
}

fn conv2d_instances(seed: u64) -> Vec<Instance<'static>> {
    (0..INSTANCES)
        .map(|i| {
            let mut rng = seeding::stream(seed, "conv2d", i as u64);
            let batched = i % 2 == 0;
            let same = i % 3 != 0;
            let (in_c, out_c, side, k) = (1 + i % 3, 1 + (i + 1) % 3, 6, 3 + 2 * (i % 2));
            let x_shape = if batched {
                vec![2, in_c, side, side]
            } else {
                vec![in_c, side, side]
            };
            let n_x = x_shape.iter().product();
            let x = uniform(&mut rng, n_x, -1.0, 1.0);
            let w = uniform(&mut rng, out_c * in_c * k * k, -0.5, 0.5);
            let b = uniform(&mut rng, out_c, -0.2, 0.2);
            Instance {
                inputs: vec![
                    (x_shape, x),
                    (vec![out_c, in_c, k, k], w),
                    (vec![out_c], b),
                ],
                build: Box::new(move |g, l| g.conv2d(l[0], l[1], l[2], same)),
            }
        })
        .collect()
}

fn maxpool_instances(seed: u64) -> Vec<Instance<'static>> {
    (0..INSTANCES)
        .map(|i| {
            let mut rng = seeding::stream(seed, "maxpool", i as u64);
            let shape = match i % 3 {
                0 => vec![2, 6, 6],
                1 => vec![2, 2, 8, 8],
                _ => vec![1, 3, 6, 6],
            };
            let n = shape.iter().product();
            let x = separated(&mut rng, n);
            // alternate between the 2x2 downsample and the same-padded
            // 3x3 stride-1 pool the inception block uses
            let same_pool = i >= 3;
            Instance {
                inputs: vec![(shape, x)],
                build: Box::new(move |g, l| {
                    if same_pool {
                        g.maxpool(l[0], 3, 1, true)
                    } else {
                        g.maxpool2d(l[0])
                    }
                }),
            }
        })
        .collect()
}

fn dense_instances(seed: u64) -> Vec<Instance<'static>> {
    (0..INSTANCES)
        .map(|i| {
            let mut rng = seeding::stream(seed, "dense", i as u64);
            let (m, n) = (2 + i, 3 + i);
            let x_shape = if i % 2 == 0 { vec![3, n] } else { vec![n] };
            let rows: usize = if i % 2 == 0 { 3 } else { 1 };
            Instance {
                inputs: vec![
                    (x_shape, uniform(&mut rng, rows * n, -1.0, 1.0)),
                    (vec![m, n], uniform(&mut rng, m * n, -1.0, 1.0)),
                    (vec![m], uniform(&mut rng, m, -0.5, 0.5)),
                ],
                build: Box::new(|g, l| g.dense(l[0], l[1], l[2])),
            }
        })
        .collect()
}

fn relu_instances(seed: u64) -> Vec<Instance<'static>> {
    (0..INSTANCES)
        .map(|i| {
            let mut rng = seeding::stream(seed, "relu", i as u64);
            let n = 24 + 8 * i;
            Instance {
                inputs: vec![(vec![n], off_zero(&mut rng, n, 0.05, 1.0))],
                build: Box::new(|g, l| Ok(g.relu(l[0]))),
            }
        })
        .collect()
}

fn softmax_instances(seed: u64) -> Vec<Instance<'static>> {
    (0..INSTANCES)
        .map(|i| {
            let mut rng = seeding::stream(seed, "softmax", i as u64);
            let rows = 2 + i;
            Instance {
                inputs: vec![(vec![rows, 3], uniform(&mut rng, rows * 3, -2.0, 2.0))],
                build: Box::new(|g, l| g.softmax_rows(l[0])),
            }
        })
        .collect()
}

fn bilinear_instances(seed: u64) -> Vec<Instance<'static>> {
    (0..INSTANCES)
        .map(|i| {
            let mut rng = seeding::stream(seed, "bilinear", i as u64);
            let batched = i % 2 == 1;
            let (c, side) = (1 + i % 3, 5 + i % 2);
            let img_shape = if batched {
                vec![2, c, side, side]
            } else {
                vec![c, side, side]
            };
            let n_img = img_shape.iter().product();
            let img = uniform(&mut rng, n_img, 0.0, 1.0);
            // generic transforms keep sample points away from the integer
            // lattice where bilinear interpolation has kinks
            let rows = if batched { 2 } else { 1 };
            let theta: Vec<f64> = (0..rows)
                .flat_map(|_| {
                    vec![
                        0.43 + rng.random_range(-0.05..0.05),
                        0.11 + rng.random_range(-0.05..0.05),
                        0.07 + rng.random_range(-0.05..0.05),
                        -0.09 + rng.random_range(-0.05..0.05),
                        0.52 + rng.random_range(-0.05..0.05),
                        -0.13 + rng.random_range(-0.05..0.05),
                    ]
                })
                .collect();
            let theta_shape = if batched { vec![2, 6] } else { vec![6] };
            Instance {
                inputs: vec![(img_shape, img), (theta_shape, theta)],
                build: Box::new(move |g, l| {
                    let grid = g.affine_grid(l[1], 4, 4)?;
                    g.bilinear_sample(l[0], grid)
                }),
            }
        })
        .collect()
}

fn extract_scales_instances(seed: u64) -> Vec<Instance<'static>> {
    (0..INSTANCES)
        .map(|i| {
            let mut rng = seeding::stream(seed, "scales", i as u64);
            let rows = 1 + i % 3;
            let shape = if i % 2 == 0 { vec![6] } else { vec![rows, 6] };
            let n = shape.iter().product();
            Instance {
                inputs: vec![(shape, off_zero(&mut rng, n, 0.2, 1.0))],
                build: Box::new(|g, l| {
                    let (sx, sy) = extract_scales(g, l[0])?;
                    g.add(sx, sy)
                }),
            }
        })
        .collect()
}

fn cross_entropy_instances(seed: u64) -> Vec<Instance<'static>> {
    (0..INSTANCES)
        .map(|i| {
            let mut rng = seeding::stream(seed, "ce", i as u64);
            let rows = 1 + i;
            let labels: Vec<ClassLabel> = (0..rows)
                .map(|_| ClassLabel::new(rng.random_range(0..3)).expect("class < 3"))
                .collect();
            Instance {
                inputs: vec![(vec![rows, 3], uniform(&mut rng, rows * 3, 0.1, 0.9))],
                build: Box::new(move |g, l| cross_entropy(g, l[0], &labels)),
            }
        })
        .collect()
}

fn localization_loss_instances(seed: u64) -> Vec<Instance<'static>> {
    (0..INSTANCES)
        .map(|i| {
            let mut rng = seeding::stream(seed, "locloss", i as u64);
            let rows = 1 + i % 4;
            let targets: Vec<AffineTheta<f64>> = (0..rows)
                .map(|_| {
                    let s = rng.random_range(0.3..0.8);
                    let tx = rng.random_range(-0.4..0.4);
                    let ty = rng.random_range(-0.4..0.4);
                    AffineTheta([s, 0.0, tx, 0.0, s, ty])
                })
                .collect();
            Instance {
                inputs: vec![(vec![rows, 6], off_zero(&mut rng, rows * 6, 0.2, 0.9))],
                build: Box::new(move |g, l| localization_loss(g, l[0], &targets)),
            }
        })
        .collect()
}

fn inception_instances(seed: u64) -> Vec<Instance<'static>> {
    let spec = InceptionSpec {
        b1: 1,
        b3_reduce: 1,
        b3: 1,
        b5_reduce: 1,
        b5: 1,
        pool_proj: 1,
    };
    (0..INSTANCES)
        .map(|i| {
            let mut rng = seeding::stream(seed, "inception", i as u64);
            let in_c = 2 + i % 2;
            let mut inputs = vec![(
                vec![in_c, 6, 6],
                uniform(&mut rng, in_c * 36, 0.1, 1.0),
            )];
            // twelve parameter leaves in block order: (w,b) for b1, b3r,
            // b3, b5r, b5, pool_proj — positive biases keep most relu
            // sites away from the kink
            let convs = [
                (1, in_c, 1usize),
                (1, in_c, 1),
                (1, 1, 3),
                (1, in_c, 1),
                (1, 1, 5),
                (1, in_c, 1),
            ];
            for &(oc, ic, k) in &convs {
                inputs.push((vec![oc, ic, k, k], uniform(&mut rng, oc * ic * k * k, -0.4, 0.4)));
                inputs.push((vec![oc], uniform(&mut rng, oc, 0.1, 0.3)));
            }
            let spec = spec.clone();
            Instance {
                inputs,
                build: Box::new(move |g, l| inception_block(g, l[0], &spec, &l[1..])),
            }
        })
        .collect()
}

/// Distance from each grid sample coordinate to the nearest integer, for
/// the affine transform the mini localizer would emit. Bilinear sampling
/// has derivative kinks on the integer lattice; finite differences need
/// every sample point bounded away from them.
fn min_lattice_clearance(x: &[f64], loc_w: &[f64], loc_b: &[f64], side: usize, focus: usize) -> f64 {
    let n_in = x.len();
    let theta: Vec<f64> = (0..6)
        .map(|j| loc_b[j] + (0..n_in).map(|k| loc_w[j * n_in + k] * x[k]).sum::<f64>())
        .collect();
    let half = (side - 1) as f64 / 2.0;
    let mut min = f64::INFINITY;
    for i in 0..focus {
        for j in 0..focus {
            let yo = -1.0 + 2.0 * i as f64 / (focus - 1) as f64;
            let xo = -1.0 + 2.0 * j as f64 / (focus - 1) as f64;
            let xs = theta[0] * xo + theta[1] * yo + theta[2];
            let ys = theta[3] * xo + theta[4] * yo + theta[5];
            for c in [(xs + 1.0) * half, (ys + 1.0) * half] {
                min = min.min((c - c.round()).abs());
            }
        }
    }
    min
}

fn stn_chain_instances(seed: u64) -> Vec<Instance<'static>> {
    (0..INSTANCES)
        .map(|i| {
            let mut rng = seeding::stream(seed, "stn-chain", i as u64);
            // miniature transformer: dense localizer head over the raw
            // patch, affine grid, bilinear sample, dense classifier,
            // softmax — the identical composite path at toy size
            let (side, focus) = (8usize, 4usize);
            let n_in = 3 * side * side;
            let n_focus = 3 * focus * focus;
            let x = uniform(&mut rng, n_in, 0.1, 0.9);
            let loc_w = uniform(&mut rng, 6 * n_in, -0.002, 0.002);
            let mut loc_b = vec![0.5, 0.0, 0.0, 0.0, 0.5, 0.0];
            for v in &mut loc_b {
                *v += rng.random_range(-0.04..0.04);
            }
            while min_lattice_clearance(&x, &loc_w, &loc_b, side, focus) < 1e-3 {
                loc_b[2] += 0.0037;
                loc_b[5] += 0.0037;
            }
            Instance {
                inputs: vec![
                    (vec![1, 3, side, side], x),
                    (vec![6, n_in], loc_w),
                    (vec![6], loc_b),
                    (vec![3, n_focus], uniform(&mut rng, 3 * n_focus, -0.3, 0.3)),
                    (vec![3], uniform(&mut rng, 3, -0.1, 0.1)),
                ],
                build: Box::new(move |g, l| {
                    let flat = g.flatten_features(l[0])?;
                    let theta = g.dense(flat, l[1], l[2])?;
                    let grid = g.affine_grid(theta, focus, focus)?;
                    let crop = g.bilinear_sample(l[0], grid)?;
                    let crop_flat = g.flatten_features(crop)?;
                    let logits = g.dense(crop_flat, l[3], l[4])?;
                    g.softmax_rows(logits)
                }),
            }
        })
        .collect()
}

/// Run the whole suite; one report per op, fixed seeds throughout.
pub fn full_suite() -> Result<Vec<GradReport>> {
    let seed = 0x5eed_cafe;
    let mut rng = seeding::stream(seed, "weights", 0);
    let ops: Vec<(&str, Vec<Instance>)> = vec![
        ("conv2d", conv2d_instances(seed)),
        ("maxpool2d", maxpool_instances(seed)),
        ("dense", dense_instances(seed)),
        ("relu", relu_instances(seed)),
        ("softmax", softmax_instances(seed)),
        ("bilinear_sample", bilinear_instances(seed)),
        ("extract_scales", extract_scales_instances(seed)),
        ("cross_entropy", cross_entropy_instances(seed)),
        ("localization_loss", localization_loss_instances(seed)),
        ("inception_block", inception_instances(seed)),
        ("stn_forward", stn_chain_instances(seed)),
    ];
    ops.into_iter()
        .map(|(name, instances)| check_op(name, instances, EPS, TOL, &mut rng))
        .collect()
}

/// Render one line per op; `true` iff every op passed.
pub fn render_suite(reports: &[GradReport]) -> (String, bool) {
    let mut all_pass = true;
    let mut text = String::new();
    for r in reports {
        all_pass &= r.pass();
        text.push_str(&r.summary_line());
        text.push('\n');
    }
    (text, all_pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_in_the_suite_passes() {
        let reports = full_suite().unwrap();
        assert_eq!(reports.len(), 11);
        let (text, all_pass) = render_suite(&reports);
        assert!(all_pass, "gradient suite failures:\n{text}");
        for r in &reports {
            assert!(r.instances >= 5, "{}: only {} instances", r.op, r.instances);
        }
    }
}
