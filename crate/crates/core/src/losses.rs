//! The three training objectives: cross-entropy over the class posterior,
//! the constrained localization loss on the regressed transform, and their
//! weighted combination.
//!
//! All losses are built as graph compositions of the tape primitives, so
//! their gradients come out of the same reverse pass as everything else.
//! Batched inputs are averaged over the batch.

use crate::error::{Error, Result};
use crate::num::Real;
use crate::stn::{extract_scales, AffineTheta};
use crate::tensor::{Graph, Tensor};

pub const NUM_CLASSES: usize = 3;
/// Canonical class order; indices into network outputs and confusion rows.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["granulocyte", "mitosis", "tumor"];

/// A cell class, stored as its canonical index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassLabel(u8);

impl ClassLabel {
    pub fn new(index: usize) -> Result<Self> {
        if index >= NUM_CLASSES {
            return Err(Error::contract(
                "class_label",
                format!("index {} out of range 0..{}", index, NUM_CLASSES),
            ));
        }
        Ok(ClassLabel(index as u8))
    }

    /// Parse either a canonical class name or a bare index.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(i) = CLASS_NAMES.iter().position(|&n| n == s) {
            return Ok(ClassLabel(i as u8));
        }
        match s.parse::<usize>() {
            Ok(i) => ClassLabel::new(i),
            Err(_) => Err(Error::contract(
                "class_label",
                format!("unknown class {:?}, want one of {:?} or an index", s, CLASS_NAMES),
            )),
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.index()]
    }

    pub fn one_hot<T: Real>(self) -> [T; NUM_CLASSES] {
        let mut v = [T::zero(); NUM_CLASSES];
        v[self.index()] = T::one();
        v
    }

    pub fn all() -> [ClassLabel; NUM_CLASSES] {
        [ClassLabel(0), ClassLabel(1), ClassLabel(2)]
    }
}

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Weight of the classification term in the combined loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T> {
    pub kappa: T,
}

impl<T: Real> LossWeights<T> {
    pub fn new(kappa: T) -> Result<Self> {
        if !(kappa >= T::zero() && kappa.is_finite()) {
            return Err(Error::contract(
                "loss_weights",
                format!("kappa must be finite and >= 0, got {}", kappa),
            ));
        }
        Ok(LossWeights { kappa })
    }
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        LossWeights { kappa: T::one() }
    }
}

/// Mean cross-entropy −ln ĉ[label] over the batch. `probs` is `[3]` or
/// `[B,3]` of class probabilities (a softmax output); probabilities are
/// clamped below at 1e-12 inside the log, so degenerate zeros stay finite.
pub fn cross_entropy<T: Real>(
    g: &mut Graph<T>,
    probs: Tensor,
    labels: &[ClassLabel],
) -> Result<Tensor> {
    let shape = g.shape(probs).to_vec();
    let rows = match shape.as_slice() {
        [NUM_CLASSES] => 1,
        [b, NUM_CLASSES] => *b,
        other => {
            return Err(Error::dim(
                "cross_entropy",
                format!("probs shape {:?}, want [3] or [B,3]", other),
            ))
        }
    };
    if labels.len() != rows {
        return Err(Error::dim(
            "cross_entropy",
            format!("{} labels for {} rows", labels.len(), rows),
        ));
    }
    let idx: Vec<u32> = labels.iter().map(|l| l.index() as u32).collect();
    let picked = g.pick_per_row(probs, &idx)?;
    let logs = g.ln_clamped(picked);
    let neg = g.scale(logs, -T::one());
    Ok(g.mean_all(neg))
}

/// Check that a target transform is ground-truth form: pure scale plus
/// translation, i.e. `[s, 0, tx, 0, s, ty]` with `s > 0`.
fn require_ground_truth_form<T: Real>(t: &AffineTheta<T>) -> Result<()> {
    let [t1, t2, _, t3, t4, _] = t.0;
    if t2 != T::zero() || t3 != T::zero() || t1 != t4 || t1 <= T::zero() {
        return Err(Error::contract(
            "localization_loss",
            format!(
                "target is not ground-truth form [s,0,tx,0,s,ty] with s>0: {:?}",
                t.as_slice()
                    .iter()
                    .map(|v| v.to_f64c())
                    .collect::<Vec<_>>()
            ),
        ));
    }
    Ok(())
}

/// Constrained localization loss: per sample the sum of six squared terms —
/// translation error in x and y, both scale errors against the target scale
/// (through the rotation-invariant column norms), the diagonal-equality
/// term `(ϑ̂1−ϑ̂4)²` and the skew-symmetry term `(ϑ̂2+ϑ̂3)²` — averaged over
/// the batch. Zero exactly on any rotation-with-scale that matches the
/// target's scale and translation; rotation itself is left free.
///
/// `theta_hat` is `[6]` or `[B,6]` in the tape; `theta_gt` supplies one
/// ground-truth-form target per sample.
pub fn localization_loss<T: Real>(
    g: &mut Graph<T>,
    theta_hat: Tensor,
    theta_gt: &[AffineTheta<T>],
) -> Result<Tensor> {
    let shape = g.shape(theta_hat).to_vec();
    let rows = match shape.as_slice() {
        [6] => 1,
        [b, 6] => *b,
        other => {
            return Err(Error::dim(
                "localization_loss",
                format!("theta shape {:?}, want [6] or [B,6]", other),
            ))
        }
    };
    if theta_gt.len() != rows {
        return Err(Error::dim(
            "localization_loss",
            format!("{} targets for {} rows", theta_gt.len(), rows),
        ));
    }
    for t in theta_gt {
        require_ground_truth_form(t)?;
    }
    let target = |g: &mut Graph<T>, vals: Vec<T>| -> Result<Tensor> {
        let shape = if shape.len() == 1 {
            vec![1]
        } else {
            vec![rows, 1]
        };
        g.leaf(&shape, vals)
    };

    // translation terms
    let tx_hat = g.pick_cols(theta_hat, &[2])?;
    let ty_hat = g.pick_cols(theta_hat, &[5])?;
    let tx_gt = target(g, theta_gt.iter().map(|t| t.0[2]).collect())?;
    let ty_gt = target(g, theta_gt.iter().map(|t| t.0[5]).collect())?;
    let dx = g.sub(tx_hat, tx_gt)?;
    let dy = g.sub(ty_hat, ty_gt)?;
    let dx2 = g.square(dx);
    let dy2 = g.square(dy);

    // scale terms via the rotation-invariant column norms
    let (sx, sy) = extract_scales(g, theta_hat)?;
    let s_gt = target(g, theta_gt.iter().map(|t| t.0[0]).collect())?;
    let ex = g.sub(sx, s_gt)?;
    let ey = g.sub(sy, s_gt)?;
    let ex2 = g.square(ex);
    let ey2 = g.square(ey);

    // similarity-structure terms on theta_hat alone
    let t1 = g.pick_cols(theta_hat, &[0])?;
    let t4 = g.pick_cols(theta_hat, &[4])?;
    let t2 = g.pick_cols(theta_hat, &[1])?;
    let t3 = g.pick_cols(theta_hat, &[3])?;
    let d14 = g.sub(t1, t4)?;
    let s23 = g.add(t2, t3)?;
    let d14sq = g.square(d14);
    let s23sq = g.square(s23);

    let mut total = g.add(dx2, dy2)?;
    for term in [ex2, ey2, d14sq, s23sq] {
        total = g.add(total, term)?;
    }
    Ok(g.mean_all(total))
}

/// `l_loc + κ·l_cla`, both scalars.
pub fn combined_loss<T: Real>(
    g: &mut Graph<T>,
    l_loc: Tensor,
    l_cla: Tensor,
    w: &LossWeights<T>,
) -> Result<Tensor> {
    for (name, t) in [("l_loc", l_loc), ("l_cla", l_cla)] {
        if g.numel(t) != 1 {
            return Err(Error::dim(
                "combined_loss",
                format!("{} must be scalar, got shape {:?}", name, g.shape(t)),
            ));
        }
    }
    LossWeights::new(w.kappa)?;
    let weighted = g.scale(l_cla, w.kappa);
    g.add(l_loc, weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_op, Instance};
    use crate::seeding;
    use crate::stn::{make_ground_truth_theta, CropGeometry};
    use rand::Rng;

    fn ce(probs: Vec<f64>, rows: usize, labels: &[usize]) -> f64 {
        let mut g: Graph<f64> = Graph::new();
        let shape = if rows == 1 {
            vec![NUM_CLASSES]
        } else {
            vec![rows, NUM_CLASSES]
        };
        let p = g.leaf(&shape, probs).unwrap();
        let ls: Vec<ClassLabel> = labels.iter().map(|&i| ClassLabel::new(i).unwrap()).collect();
        let l = cross_entropy(&mut g, p, &ls).unwrap();
        g.scalar_value(l)
    }

    #[test]
    fn class_label_round_trip() {
        for (i, name) in CLASS_NAMES.iter().enumerate() {
            let l = ClassLabel::parse(name).unwrap();
            assert_eq!(l.index(), i);
            assert_eq!(l.name(), *name);
            assert_eq!(ClassLabel::parse(&i.to_string()).unwrap(), l);
        }
        assert!(ClassLabel::new(3).is_err());
        assert!(ClassLabel::parse("lymphocyte").is_err());
        assert_eq!(ClassLabel::new(1).unwrap().one_hot::<f64>(), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn cross_entropy_perfect_prediction_is_zero() {
        assert_eq!(ce(vec![1.0, 0.0, 0.0], 1, &[0]), 0.0);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_three() {
        let u = 1.0 / 3.0;
        for c in 0..3 {
            let v = ce(vec![u, u, u], 1, &[c]);
            assert!((v - 3.0f64.ln()).abs() < 1e-15, "{}", v);
        }
    }

    #[test]
    fn cross_entropy_hand_value() {
        let v = ce(vec![0.7, 0.2, 0.1], 1, &[0]);
        assert_eq!(v, -(0.7f64.ln()));
        assert!((v - 0.35667).abs() < 1e-5);
    }

    #[test]
    fn cross_entropy_batch_averages() {
        let v = ce(vec![0.7, 0.2, 0.1, 0.7, 0.2, 0.1], 2, &[0, 1]);
        let want = (-(0.7f64.ln()) - 0.2f64.ln()) / 2.0;
        assert!((v - want).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let v = ce(vec![0.0, 1.0, 0.0], 1, &[0]);
        assert_eq!(v, -(1e-12f64.ln()));
        assert!(v.is_finite());
    }

    fn loc(hat: [f64; 6], gt: AffineTheta<f64>) -> f64 {
        let mut g: Graph<f64> = Graph::new();
        let h = g.leaf(&[6], hat.to_vec()).unwrap();
        let l = localization_loss(&mut g, h, &[gt]).unwrap();
        g.scalar_value(l)
    }

    fn gt_theta(dx: i32, dy: i32) -> AffineTheta<f64> {
        make_ground_truth_theta(&CropGeometry {
            d_i: 128,
            d_c: 64,
            theta_s: 0.5,
            dx,
            dy,
        })
        .unwrap()
    }

    #[test]
    fn localization_loss_zero_on_exact_target() {
        let gt = gt_theta(17, -9);
        assert_eq!(loc(gt.0, gt), 0.0);
    }

    #[test]
    fn localization_loss_rotation_invariant() {
        let mut rng = seeding::stream(7, "loss-rotations", 0);
        for k in 0..100 {
            let s = rng.random_range(0.3..1.2);
            let tx = rng.random_range(-0.5..0.5);
            let ty = rng.random_range(-0.5..0.5);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let gt = AffineTheta([s, 0.0, tx, 0.0, s, ty]);
            let hat = [
                s * phi.cos(),
                -s * phi.sin(),
                tx,
                s * phi.sin(),
                s * phi.cos(),
                ty,
            ];
            let v = loc(hat, gt);
            assert!(v < 1e-12, "k={} phi={}: loss {}", k, phi, v);
        }
    }

    #[test]
    fn localization_loss_single_offset_term() {
        let gt = gt_theta(0, 0);
        let mut hat = gt.0;
        hat[2] += 0.1;
        assert!((loc(hat, gt) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn localization_loss_rejects_non_ground_truth_target() {
        let bad = AffineTheta([0.5, 0.1, 0.0, 0.0, 0.5, 0.0]);
        let mut g: Graph<f64> = Graph::new();
        let h = g.leaf(&[6], bad.0.to_vec()).unwrap();
        assert!(localization_loss(&mut g, h, &[bad]).is_err());
        // negative scale is not a valid target either
        let neg = AffineTheta([-0.5, 0.0, 0.0, 0.0, -0.5, 0.0]);
        assert!(localization_loss(&mut g, h, &[neg]).is_err());
    }

    #[test]
    fn localization_loss_batch_averages() {
        let gt = gt_theta(0, 0);
        let mut off = gt.0;
        off[2] += 0.1;
        let mut g: Graph<f64> = Graph::new();
        let flat: Vec<f64> = gt.0.iter().chain(off.iter()).cloned().collect();
        let h = g.leaf(&[2, 6], flat).unwrap();
        let l = localization_loss(&mut g, h, &[gt, gt]).unwrap();
        assert!((g.scalar_value(l) - 0.005).abs() < 1e-12);
    }

    #[test]
    fn combined_loss_examples() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.leaf_scalar(0.2);
        let b = g.leaf_scalar(0.3);
        let l1 = combined_loss(&mut g, a, b, &LossWeights { kappa: 1.0 }).unwrap();
        assert_eq!(g.scalar_value(l1), 0.5);
        let l0 = combined_loss(&mut g, a, b, &LossWeights { kappa: 0.0 }).unwrap();
        assert_eq!(g.scalar_value(l0), 0.2);
        let z1 = g.leaf_scalar(0.0);
        let z2 = g.leaf_scalar(0.0);
        let lz = combined_loss(&mut g, z1, z2, &LossWeights { kappa: 1.0 }).unwrap();
        assert_eq!(g.scalar_value(lz), 0.0);
        assert!(LossWeights::new(-0.5).is_err());
        assert!(LossWeights::new(f64::NAN).is_err());
    }

    #[test]
    fn both_losses_pass_gradcheck() {
        let mut rng = seeding::stream(11, "loss-gradcheck", 0);
        let mut instances = Vec::new();
        for _ in 0..3 {
            let probs: Vec<f64> = (0..4 * 3).map(|_| rng.random_range(0.05..0.95)).collect();
            instances.push(Instance {
                inputs: vec![(vec![4, 3], probs)],
                build: Box::new(|g, t| {
                    let labels = [
                        ClassLabel::new(0).unwrap(),
                        ClassLabel::new(2).unwrap(),
                        ClassLabel::new(1).unwrap(),
                        ClassLabel::new(0).unwrap(),
                    ];
                    cross_entropy(g, t[0], &labels)
                }),
            });
        }
        let rep = check_op("cross_entropy", instances, 1e-5, 1e-5, &mut rng).unwrap();
        assert!(rep.pass(), "{}", rep.summary_line());

        let mut instances = Vec::new();
        for _ in 0..3 {
            // keep column norms away from zero so sqrt stays smooth
            let theta: Vec<f64> = (0..3 * 6)
                .map(|_| {
                    let mag: f64 = rng.random_range(0.2..1.0);
                    if rng.random_range(0.0..1.0) < 0.5 {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect();
            instances.push(Instance {
                inputs: vec![(vec![3, 6], theta)],
                build: Box::new(|g, t| {
                    let gt = [gt_theta(5, -12), gt_theta(0, 0), gt_theta(-32, 32)];
                    localization_loss(g, t[0], &gt)
                }),
            });
        }
        let rep = check_op("localization_loss", instances, 1e-5, 1e-5, &mut rng).unwrap();
        assert!(rep.pass(), "{}", rep.summary_line());
    }
}
