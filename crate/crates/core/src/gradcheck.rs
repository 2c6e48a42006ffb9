//! Central-difference gradient checking.
//!
//! An op under test is a closure that rebuilds its graph from leaf inputs.
//! The harness scalarizes the op's output through a *random-weighted* sum
//! (weights fixed per instance): a plain sum would hide entire Jacobian
//! structure (e.g. softmax rows sum to one, so d(sum)/dx ≡ 0) and its exact
//! zeros sit below the relative-error floor. Dead paths (negative ReLU
//! inputs, non-argmax pool cells) still produce bit-identical f(x±ε) and
//! check out exactly.

use crate::error::Result;
use crate::tensor::{Graph, Tensor};
use rand::Rng;

/// Per-element relative error, denominator floored at 1e-8.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone)]
pub struct GradFailure {
    pub instance: usize,
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub op: String,
    pub instances: usize,
    pub elements_checked: usize,
    pub max_rel_err: f64,
    pub tol: f64,
    pub failures: Vec<GradFailure>,
}

impl GradReport {
    pub fn pass(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{:<24} {}  instances={} elements={} max_rel_err={:.3e} (tol {:.0e})",
            self.op,
            if self.pass() { "PASS" } else { "FAIL" },
            self.instances,
            self.elements_checked,
            self.max_rel_err,
            self.tol,
        )
    }
}

/// One gradcheck instance: named leaf inputs and a builder that returns the
/// op output (any shape). `weights` scalarize the output; they are supplied
/// by the caller so reruns are reproducible.
pub struct Instance<'a> {
    pub inputs: Vec<(Vec<usize>, Vec<f64>)>,
    pub build: Box<dyn Fn(&mut Graph<f64>, &[Tensor]) -> Result<Tensor> + 'a>,
}

fn scalarize(
    g: &mut Graph<f64>,
    inst: &Instance,
    values: &[Vec<f64>],
    weights: &[f64],
) -> Result<f64> {
    let leaves: Vec<Tensor> = inst
        .inputs
        .iter()
        .zip(values.iter())
        .map(|((shape, _), vals)| g.leaf(shape, vals.clone()))
        .collect::<Result<_>>()?;
    let out = (inst.build)(g, &leaves)?;
    let w = g.leaf(&[g.numel(out)], weights.to_vec())?;
    let flat_shape = [g.numel(out)];
    let flat = g.reshape(out, &flat_shape)?;
    let prod = g.mul(flat, w)?;
    let root = g.sum_all(prod);
    Ok(g.scalar_value(root))
}

/// Check one instance; returns (elements_checked, max_rel_err, failures).
/// Analytic gradients come from one backward pass; numeric gradients from
/// central differences with the same scalarization weights.
pub fn check_instance(
    instance_idx: usize,
    inst: &Instance,
    eps: f64,
    tol: f64,
    rng: &mut impl Rng,
) -> Result<(usize, f64, Vec<GradFailure>)> {
    // Forward once to learn the output size, then fix the weights.
    let out_len = {
        let mut g = Graph::new();
        let leaves: Vec<Tensor> = inst
            .inputs
            .iter()
            .map(|(shape, vals)| g.leaf(shape, vals.clone()))
            .collect::<Result<_>>()?;
        let out = (inst.build)(&mut g, &leaves)?;
        g.numel(out)
    };
    let weights: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();

    // Analytic pass.
    let mut g = Graph::new();
    let leaves: Vec<Tensor> = inst
        .inputs
        .iter()
        .map(|(shape, vals)| g.leaf(shape, vals.clone()))
        .collect::<Result<_>>()?;
    let out = (inst.build)(&mut g, &leaves)?;
    let w = g.leaf(&[out_len], weights.clone())?;
    let flat = g.reshape(out, &[out_len])?;
    let prod = g.mul(flat, w)?;
    let root = g.sum_all(prod);
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|&t| g.grad(t).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let base: Vec<Vec<f64>> = inst.inputs.iter().map(|(_, v)| v.clone()).collect();
    let mut max_rel = 0.0f64;
    let mut failures = Vec::new();
    let mut checked = 0usize;
    for (ii, (_, vals)) in inst.inputs.iter().enumerate() {
        for e in 0..vals.len() {
            let mut plus = base.clone();
            plus[ii][e] += eps;
            let mut minus = base.clone();
            minus[ii][e] -= eps;
            let mut gp = Graph::new();
            let fp = scalarize(&mut gp, inst, &plus, &weights)?;
            let mut gm = Graph::new();
            let fm = scalarize(&mut gm, inst, &minus, &weights)?;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = if analytic[ii].is_empty() {
                0.0
            } else {
                analytic[ii][e]
            };
            let rel = relative_error(a, numeric);
            checked += 1;
            if rel > max_rel {
                max_rel = rel;
            }
            if rel > tol {
                failures.push(GradFailure {
                    instance: instance_idx,
                    input: ii,
                    element: e,
                    analytic: a,
                    numeric,
                    rel_err: rel,
                });
            }
        }
    }
    Ok((checked, max_rel, failures))
}

/// Run `instances` through the harness and aggregate a report.
pub fn check_op(
    op: &str,
    instances: Vec<Instance>,
    eps: f64,
    tol: f64,
    rng: &mut impl Rng,
) -> Result<GradReport> {
    let mut report = GradReport {
        op: op.to_string(),
        instances: instances.len(),
        elements_checked: 0,
        max_rel_err: 0.0,
        tol,
        failures: Vec::new(),
    };
    for (i, inst) in instances.iter().enumerate() {
        let (n, m, mut f) = check_instance(i, inst, eps, tol, rng)?;
        report.elements_checked += n;
        report.max_rel_err = report.max_rel_err.max(m);
        report.failures.append(&mut f);
    }
    Ok(report)
}

/// Compare precomputed analytic/numeric gradient arrays — the primitive the
/// harness uses, exposed so negative controls can exercise the failure path.
pub fn compare_grads(analytic: &[f64], numeric: &[f64], tol: f64) -> (f64, usize) {
    let mut max_rel = 0.0f64;
    let mut failures = 0usize;
    for (&a, &n) in analytic.iter().zip(numeric.iter()) {
        let r = relative_error(a, n);
        if r > max_rel {
            max_rel = r;
        }
        if r > tol {
            failures += 1;
        }
    }
    (max_rel, failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_function_is_exact_to_rounding() {
        let inst = Instance {
            inputs: vec![(vec![4], vec![0.3, -0.2, 0.9, 0.5])],
            build: Box::new(|g, t| Ok(g.scale(t[0], 3.0))),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, max_rel, fails) = check_instance(0, &inst, 1e-5, 1e-6, &mut rng).unwrap();
        assert!(fails.is_empty());
        assert!(max_rel < 1e-9, "max_rel {}", max_rel);
    }

    #[test]
    fn quadratic_in_five_vars_passes_tight_tol() {
        let inst = Instance {
            inputs: vec![(vec![5], vec![0.1, -0.4, 0.8, -0.9, 0.33])],
            build: Box::new(|g, t| Ok(g.square(t[0]))),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, _, fails) = check_instance(0, &inst, 1e-5, 1e-6, &mut rng).unwrap();
        assert!(fails.is_empty());
    }

    #[test]
    fn doubled_analytic_gradient_fails() {
        // negative control on the comparator: a gradient off by 2x must trip
        let analytic = [2.0, -4.0, 6.0];
        let numeric = [1.0, -2.0, 3.0];
        let (max_rel, failures) = compare_grads(&analytic, &numeric, 1e-4);
        assert_eq!(failures, 3);
        assert!(max_rel > 0.4);
    }

    #[test]
    fn composite_graph_passes() {
        // conv → relu → pool → dense, the composite example
        let xv: Vec<f64> = (0..16).map(|i| ((i * 7 % 13) as f64 - 6.0) / 7.0).collect();
        let wv: Vec<f64> = (0..9).map(|i| ((i * 5 % 11) as f64 - 5.0) / 11.0).collect();
        let dw: Vec<f64> = (0..8).map(|i| ((i * 3 % 7) as f64 - 3.0) / 7.0).collect();
        let inst = Instance {
            inputs: vec![
                (vec![1, 4, 4], xv),
                (vec![1, 1, 3, 3], wv),
                (vec![2, 4], dw),
            ],
            build: Box::new(|g, t| {
                let b = g.leaf(&[1], vec![0.05])?;
                let c = g.conv2d(t[0], t[1], b, true)?;
                let r = g.relu(c);
                let p = g.maxpool2d(r)?;
                let flat = g.flatten_features(p)?;
                let db = g.leaf(&[2], vec![0.01, -0.02])?;
                g.dense(flat, t[2], db)
            }),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (checked, max_rel, fails) = check_instance(0, &inst, 1e-5, 1e-5, &mut rng).unwrap();
        assert!(checked > 30);
        assert!(fails.is_empty(), "max_rel {}", max_rel);
    }
}
