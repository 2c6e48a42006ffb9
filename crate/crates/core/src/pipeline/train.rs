//! The staged training schedule. Each stage mutates its parameter group(s)
//! in place and returns a per-epoch loss trace.
//!
//! Training sets are lists of [`TrainEntry`] over shared source records so
//! off-center stages can redraw crop offsets every epoch — the offset is
//! labelled supervision, so fresh draws are free augmentation; rotated
//! copies keep their angle and rotate the fresh offsets with them.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    balance_classes, crop_centered, crop_random_offset, rotate_sample, Dataset, Sample,
    SourceRecord,
};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, cross_entropy, localization_loss, ClassLabel, LossWeights};
use crate::networks::{bind, forward, stn_forward, BoundGroup, ModelParams, ParamGroup};
use crate::optim::AdamState;
use crate::seeding;
use crate::stn::{make_ground_truth_theta, AffineTheta, CropGeometry};
use crate::tensor::{Graph, Tensor};
use crate::Scalar;

use super::TrainConfig;

/// One training-set entry: a record index plus an optional fixed rotation
/// angle (set on augmented copies).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainEntry {
    pub record: usize,
    pub rotation: Option<f64>,
}

/// A training view over shared records: which entries participate and the
/// seed all stage-internal streams derive from.
#[derive(Debug, Clone)]
pub struct TrainSet<'a> {
    pub records: &'a [SourceRecord],
    pub entries: Vec<TrainEntry>,
    pub seed: u64,
}

/// Balance the given record indices to uniform class counts, then double
/// the set with one arbitrarily rotated copy per survivor.
pub fn build_train_set<'a>(ds: &'a Dataset, indices: &[usize], seed: u64) -> Result<TrainSet<'a>> {
    let labelled: Vec<(usize, ClassLabel)> = indices
        .iter()
        .map(|&i| (i, ds.records[i].label))
        .collect();
    let balanced = balance_classes(labelled, &mut seeding::stream(seed, "balance", 0))?;
    let mut angles = seeding::stream(seed, "augment", 0);
    let mut entries: Vec<TrainEntry> = balanced
        .iter()
        .map(|&(record, _)| TrainEntry {
            record,
            rotation: None,
        })
        .collect();
    entries.extend(balanced.iter().map(|&(record, _)| TrainEntry {
        record,
        rotation: Some(angles.random_range(0.0..std::f64::consts::TAU)),
    }));
    Ok(TrainSet {
        records: &ds.records,
        entries,
        seed,
    })
}

impl<'a> TrainSet<'a> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Centered `d`×`d` crop of an entry (rotated copies stay centered).
    pub fn centered(&self, entry: &TrainEntry, d: usize) -> Result<Sample<Scalar>> {
        let s = crop_centered(&self.records[entry.record], d)?;
        Ok(match entry.rotation {
            Some(angle) => rotate_sample(&s, angle, 0),
            None => s,
        })
    }

    /// All entries as centered crops, in entry order.
    pub fn centered_all(&self, d: usize) -> Result<Vec<Sample<Scalar>>> {
        self.entries.iter().map(|e| self.centered(e, d)).collect()
    }

    /// Off-center crop of an entry at freshly drawn offsets; rotated
    /// copies rotate patch and offsets together.
    pub fn offset(
        &self,
        entry: &TrainEntry,
        geom: &CropGeometry<Scalar>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Sample<Scalar>> {
        let s = crop_random_offset(&self.records[entry.record], geom, rng)?;
        Ok(match entry.rotation {
            Some(angle) => rotate_sample(&s, angle, geom.max_offset()),
            None => s,
        })
    }
}

/// Per-epoch mean training loss of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: String,
    pub epoch_losses: Vec<f64>,
}

impl StageReport {
    pub fn first(&self) -> f64 {
        *self.epoch_losses.first().expect("at least one epoch")
    }

    pub fn last(&self) -> f64 {
        *self.epoch_losses.last().expect("at least one epoch")
    }
}

/// Stack samples into one `[B,3,d,d]` leaf.
pub(crate) fn batch_leaf(g: &mut Graph<Scalar>, samples: &[&Sample<Scalar>]) -> Result<Tensor> {
    let first = samples
        .first()
        .ok_or_else(|| Error::contract("batch_leaf", "empty batch"))?;
    let d = first.image.height;
    let mut data = Vec::with_capacity(samples.len() * 3 * d * d);
    for s in samples {
        if s.image.channels != 3 || s.image.height != d || s.image.width != d {
            return Err(Error::dim(
                "batch_leaf",
                format!(
                    "{}: sample is {}x{}x{}, batch wants 3x{d}x{d}",
                    s.source_id, s.image.channels, s.image.height, s.image.width
                ),
            ));
        }
        data.extend_from_slice(&s.image.data);
    }
    g.leaf(&[samples.len(), 3, d, d], data)
}

/// Ground-truth transforms for a batch, from each sample's recorded offsets.
pub(crate) fn gt_thetas(
    samples: &[&Sample<Scalar>],
    cfg: &TrainConfig,
) -> Result<Vec<AffineTheta<Scalar>>> {
    samples
        .iter()
        .map(|s| {
            make_ground_truth_theta(&CropGeometry {
                d_i: cfg.d_i,
                d_c: cfg.d_c,
                theta_s: cfg.theta_s,
                dx: s.dx,
                dy: s.dy,
            })
        })
        .collect()
}

/// One Adam step over a group from the gradients of its bound leaves.
fn apply_grads(
    g: &Graph<Scalar>,
    group: &mut ParamGroup<Scalar>,
    bound: &BoundGroup,
    adam: &mut AdamState<Scalar>,
) -> Result<()> {
    adam.begin_step();
    for (slot, (buf, &leaf)) in group.bufs.iter_mut().zip(&bound.leaves).enumerate() {
        let grad = g
            .grad(leaf)
            .ok_or_else(|| Error::contract("train", format!("no gradient for {}", buf.name)))?;
        adam.apply(slot, &mut buf.data, grad)?;
    }
    Ok(())
}

fn shuffled_order(n: usize, seed: u64, label: &str, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeding::stream(seed, label, epoch as u64));
    order
}

/// Stage 1: train the classifier alone on centered focus-sized crops with
/// cross-entropy. The localizer is untouched. Samples must carry zero
/// offsets and match the classifier's input side.
pub fn stage1_train_classifier(
    cfg: &TrainConfig,
    samples: &[Sample<Scalar>],
    models: &mut ModelParams<Scalar>,
    seed: u64,
) -> Result<StageReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::contract("stage1", "empty training set"));
    }
    for s in samples {
        if s.dx != 0 || s.dy != 0 {
            return Err(Error::contract(
                "stage1",
                format!(
                    "{}: carries offsets ({},{}); stage 1 trains on centered crops",
                    s.source_id, s.dx, s.dy
                ),
            ));
        }
    }
    let mut adam = AdamState::new(cfg.stage1_lr, &models.group("classifier")?.sizes());
    let mut epoch_losses = Vec::with_capacity(cfg.stage1_epochs);
    for epoch in 0..cfg.stage1_epochs {
        let order = shuffled_order(samples.len(), seed, "stage1-order", epoch);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample<Scalar>> = chunk.iter().map(|&i| &samples[i]).collect();
            let labels: Vec<ClassLabel> = batch.iter().map(|s| s.label).collect();
            let mut g = Graph::new();
            let group = models.group("classifier")?;
            let bound = bind(&mut g, group)?;
            let input = batch_leaf(&mut g, &batch)?;
            let probs = forward(&mut g, group, &bound, input)?;
            let loss = cross_entropy(&mut g, probs, &labels)?;
            g.backward(loss)?;
            loss_sum += g.value(loss)[0] * batch.len() as f64;
            apply_grads(&g, models.group_mut("classifier")?, &bound, &mut adam)?;
        }
        epoch_losses.push(loss_sum / samples.len() as f64);
    }
    Ok(StageReport {
        stage: "stage1".into(),
        epoch_losses,
    })
}

/// Stage 2: train the localizer alone against ground-truth transforms on
/// off-center patches, offsets redrawn every epoch. The classifier is
/// frozen and class labels are never read.
pub fn stage2_train_localizer(
    cfg: &TrainConfig,
    set: &TrainSet,
    models: &mut ModelParams<Scalar>,
    seed: u64,
) -> Result<StageReport> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::contract("stage2", "empty training set"));
    }
    let geom = cfg.geometry();
    let mut adam = AdamState::new(cfg.stage2_lr, &models.group("localizer")?.sizes());
    let mut epoch_losses = Vec::with_capacity(cfg.stage2_epochs);
    for epoch in 0..cfg.stage2_epochs {
        let order = shuffled_order(set.len(), seed, "stage2-order", epoch);
        let mut offsets = seeding::stream(seed, "stage2-offsets", epoch as u64);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample<Scalar>> = chunk
                .iter()
                .map(|&i| set.offset(&set.entries[i], &geom, &mut offsets))
                .collect::<Result<_>>()?;
            let refs: Vec<&Sample<Scalar>> = batch.iter().collect();
            let targets = gt_thetas(&refs, cfg)?;
            let mut g = Graph::new();
            let group = models.group("localizer")?;
            let bound = bind(&mut g, group)?;
            let input = batch_leaf(&mut g, &refs)?;
            let theta = forward(&mut g, group, &bound, input)?;
            let loss = localization_loss(&mut g, theta, &targets)?;
            g.backward(loss)?;
            loss_sum += g.value(loss)[0] * batch.len() as f64;
            apply_grads(&g, models.group_mut("localizer")?, &bound, &mut adam)?;
        }
        epoch_losses.push(loss_sum / set.len() as f64);
    }
    Ok(StageReport {
        stage: "stage2".into(),
        epoch_losses,
    })
}

/// Stage 3: end-to-end refinement of localizer and classifier through the
/// full transformer chain under the combined loss.
pub fn stage3_joint_refine(
    cfg: &TrainConfig,
    set: &TrainSet,
    models: &mut ModelParams<Scalar>,
    seed: u64,
) -> Result<StageReport> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::contract("stage3", "empty training set"));
    }
    let geom = cfg.geometry();
    let weights = LossWeights::new(cfg.kappa)?;
    let mut adam_loc = AdamState::new(cfg.stage3_lr, &models.group("localizer")?.sizes());
    let mut adam_cla = AdamState::new(cfg.stage3_lr, &models.group("classifier")?.sizes());
    let mut epoch_losses = Vec::with_capacity(cfg.stage3_epochs);
    for epoch in 0..cfg.stage3_epochs {
        let order = shuffled_order(set.len(), seed, "stage3-order", epoch);
        let mut offsets = seeding::stream(seed, "stage3-offsets", epoch as u64);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample<Scalar>> = chunk
                .iter()
                .map(|&i| set.offset(&set.entries[i], &geom, &mut offsets))
                .collect::<Result<_>>()?;
            let refs: Vec<&Sample<Scalar>> = batch.iter().collect();
            let targets = gt_thetas(&refs, cfg)?;
            let labels: Vec<ClassLabel> = refs.iter().map(|s| s.label).collect();
            let mut g = Graph::new();
            let localizer = models.group("localizer")?;
            let classifier = models.group("classifier")?;
            let loc_bound = bind(&mut g, localizer)?;
            let cla_bound = bind(&mut g, classifier)?;
            let input = batch_leaf(&mut g, &refs)?;
            let out = stn_forward(&mut g, localizer, &loc_bound, classifier, &cla_bound, input)?;
            let l_loc = localization_loss(&mut g, out.theta, &targets)?;
            let l_cla = cross_entropy(&mut g, out.probs, &labels)?;
            let loss = combined_loss(&mut g, l_loc, l_cla, &weights)?;
            g.backward(loss)?;
            loss_sum += g.value(loss)[0] * batch.len() as f64;
            apply_grads(&g, models.group_mut("localizer")?, &loc_bound, &mut adam_loc)?;
            apply_grads(&g, models.group_mut("classifier")?, &cla_bound, &mut adam_cla)?;
        }
        epoch_losses.push(loss_sum / set.len() as f64);
    }
    Ok(StageReport {
        stage: "stage3".into(),
        epoch_losses,
    })
}

/// Baseline: train the plain CNN with cross-entropy on the same off-center
/// full-size patches the transformer sees, offsets redrawn every epoch.
pub fn train_baseline(
    cfg: &TrainConfig,
    set: &TrainSet,
    models: &mut ModelParams<Scalar>,
    seed: u64,
) -> Result<StageReport> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::contract("baseline", "empty training set"));
    }
    let geom = cfg.geometry();
    let mut adam = AdamState::new(cfg.baseline_lr, &models.group("baseline")?.sizes());
    let mut epoch_losses = Vec::with_capacity(cfg.baseline_epochs);
    for epoch in 0..cfg.baseline_epochs {
        let order = shuffled_order(set.len(), seed, "baseline-order", epoch);
        let mut offsets = seeding::stream(seed, "baseline-offsets", epoch as u64);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample<Scalar>> = chunk
                .iter()
                .map(|&i| set.offset(&set.entries[i], &geom, &mut offsets))
                .collect::<Result<_>>()?;
            let refs: Vec<&Sample<Scalar>> = batch.iter().collect();
            let labels: Vec<ClassLabel> = refs.iter().map(|s| s.label).collect();
            let mut g = Graph::new();
            let group = models.group("baseline")?;
            let bound = bind(&mut g, group)?;
            let input = batch_leaf(&mut g, &refs)?;
            let probs = forward(&mut g, group, &bound, input)?;
            let loss = cross_entropy(&mut g, probs, &labels)?;
            g.backward(loss)?;
            loss_sum += g.value(loss)[0] * batch.len() as f64;
            apply_grads(&g, models.group_mut("baseline")?, &bound, &mut adam)?;
        }
        epoch_losses.push(loss_sum / set.len() as f64);
    }
    Ok(StageReport {
        stage: "baseline".into(),
        epoch_losses,
    })
}
