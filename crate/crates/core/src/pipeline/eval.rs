//! Batched inference, metrics evaluation, and k-fold cross-validation.

use crate::data::{crop_centered, crop_random_offset, Dataset, FoldPlan, Sample, SourceRecord};
use crate::error::{Error, Result};
use crate::losses::{ClassLabel, NUM_CLASSES};
use crate::metrics::{argmax_class, MetricsReport};
use crate::networks::{
    bind, build_baseline, build_classifier, build_localizer, forward, stn_forward, ModelParams,
    ParamGroup,
};
use crate::seeding;
use crate::stn::CropGeometry;
use crate::tensor::Graph;
use crate::Scalar;

use super::train::{batch_leaf, build_train_set};
use super::{
    stage1_train_classifier, stage2_train_localizer, stage3_joint_refine, train_baseline,
    StageReport, TrainConfig,
};

/// Materialize one off-center and one centered full-size patch per test
/// index; the offset draws come from a single stream so every model is
/// evaluated on identical patches.
pub fn test_samples(
    records: &[SourceRecord],
    indices: &[usize],
    geom: &CropGeometry<Scalar>,
    seed: u64,
) -> Result<(Vec<Sample<Scalar>>, Vec<Sample<Scalar>>)> {
    let mut rng = seeding::stream(seed, "test-offsets", 0);
    let mut off = Vec::with_capacity(indices.len());
    let mut centered = Vec::with_capacity(indices.len());
    for &i in indices {
        off.push(crop_random_offset(&records[i], geom, &mut rng)?);
        centered.push(crop_centered(&records[i], geom.d_i)?);
    }
    Ok((off, centered))
}

/// Class probabilities of a single-group network over samples, batched.
pub fn predict_probs_net(
    group: &ParamGroup<Scalar>,
    samples: &[Sample<Scalar>],
    batch_size: usize,
) -> Result<Vec<[Scalar; NUM_CLASSES]>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample<Scalar>> = chunk.iter().collect();
        let mut g = Graph::new();
        let bound = bind(&mut g, group)?;
        let input = batch_leaf(&mut g, &refs)?;
        let probs = forward(&mut g, group, &bound, input)?;
        for row in g.value(probs).chunks(NUM_CLASSES) {
            out.push([row[0], row[1], row[2]]);
        }
    }
    Ok(out)
}

/// Probabilities and regressed transforms of the full transformer chain.
pub fn predict_probs_stn(
    localizer: &ParamGroup<Scalar>,
    classifier: &ParamGroup<Scalar>,
    samples: &[Sample<Scalar>],
    batch_size: usize,
) -> Result<Vec<([Scalar; NUM_CLASSES], [Scalar; 6])>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample<Scalar>> = chunk.iter().collect();
        let mut g = Graph::new();
        let loc_bound = bind(&mut g, localizer)?;
        let cla_bound = bind(&mut g, classifier)?;
        let input = batch_leaf(&mut g, &refs)?;
        let stn = stn_forward(&mut g, localizer, &loc_bound, classifier, &cla_bound, input)?;
        let probs = g.value(stn.probs).to_vec();
        let thetas = g.value(stn.theta);
        for (p, t) in probs.chunks(NUM_CLASSES).zip(thetas.chunks(6)) {
            out.push((
                [p[0], p[1], p[2]],
                [t[0], t[1], t[2], t[3], t[4], t[5]],
            ));
        }
    }
    Ok(out)
}

/// Regressed transforms alone (no classifier pass).
pub fn predict_thetas(
    localizer: &ParamGroup<Scalar>,
    samples: &[Sample<Scalar>],
    batch_size: usize,
) -> Result<Vec<[Scalar; 6]>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample<Scalar>> = chunk.iter().collect();
        let mut g = Graph::new();
        let bound = bind(&mut g, localizer)?;
        let input = batch_leaf(&mut g, &refs)?;
        let theta = forward(&mut g, localizer, &bound, input)?;
        for t in g.value(theta).chunks(6) {
            out.push([t[0], t[1], t[2], t[3], t[4], t[5]]);
        }
    }
    Ok(out)
}

fn pairs_from(
    samples: &[Sample<Scalar>],
    probs: impl Iterator<Item = [Scalar; NUM_CLASSES]>,
) -> Result<Vec<(ClassLabel, ClassLabel)>> {
    samples
        .iter()
        .zip(probs)
        .map(|(s, p)| Ok((s.label, argmax_class(&p)?)))
        .collect()
}

/// Evaluate a single-group network on a test set.
pub fn evaluate_net(
    group: &ParamGroup<Scalar>,
    samples: &[Sample<Scalar>],
    batch_size: usize,
) -> Result<MetricsReport> {
    let probs = predict_probs_net(group, samples, batch_size)?;
    MetricsReport::from_pairs(&pairs_from(samples, probs.into_iter())?)
}

/// Evaluate the transformer chain on a test set.
pub fn evaluate_stn(
    localizer: &ParamGroup<Scalar>,
    classifier: &ParamGroup<Scalar>,
    samples: &[Sample<Scalar>],
    batch_size: usize,
) -> Result<MetricsReport> {
    let probs = predict_probs_stn(localizer, classifier, samples, batch_size)?;
    MetricsReport::from_pairs(&pairs_from(samples, probs.into_iter().map(|(p, _)| p))?)
}

/// Everything produced while running one fold.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub stn: MetricsReport,
    pub baseline: MetricsReport,
    pub baseline_centered: MetricsReport,
    pub stages: Vec<StageReport>,
    pub models: ModelParams<Scalar>,
}

/// Cross-validation result: per-fold outcomes plus ensemble reports over
/// the concatenated test predictions.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub plan: FoldPlan,
    pub folds: Vec<FoldOutcome>,
    pub stn: MetricsReport,
    pub baseline: MetricsReport,
    pub baseline_centered: MetricsReport,
}

/// Fresh untrained models for one fold.
pub fn init_models(cfg: &TrainConfig, seed: u64) -> Result<ModelParams<Scalar>> {
    Ok(ModelParams {
        groups: vec![
            build_localizer(cfg.d_i, cfg.theta_s, seeding::derive(seed, "init-localizer", 0))?,
            build_classifier(cfg.d_c, seeding::derive(seed, "init-classifier", 0))?,
            build_baseline(cfg.d_i, seeding::derive(seed, "init-baseline", 0))?,
        ],
    })
}

/// K-fold cross-validation of the full pipeline. Each fold balances and
/// augments its training portion, runs the three transformer stages plus
/// the baseline, and evaluates every model on that fold's off-center test
/// patches (the baseline also on centered ones). Fold prediction vectors
/// are concatenated into the ensemble reports.
pub fn cross_validate(cfg: &TrainConfig, ds: &Dataset) -> Result<CvOutcome> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::contract("cross_validate", "empty dataset"));
    }
    let plan = crate::data::kfold_split(ds.len(), cfg.k, seeding::derive(cfg.seed, "kfold", 0))?;
    let geom = cfg.geometry();

    let mut folds = Vec::with_capacity(cfg.k);
    let mut stn_pairs = Vec::with_capacity(ds.len());
    let mut base_pairs = Vec::with_capacity(ds.len());
    let mut base_c_pairs = Vec::with_capacity(ds.len());

    for fold in 0..cfg.k {
        let fold_seed = seeding::derive(cfg.seed, "fold", fold as u64);
        let set = build_train_set(ds, &plan.train_indices(fold), fold_seed)?;
        let mut models = init_models(cfg, fold_seed)?;

        let centered = set.centered_all(cfg.d_c)?;
        let s1 = stage1_train_classifier(
            cfg,
            &centered,
            &mut models,
            seeding::derive(fold_seed, "stage1", 0),
        )?;
        let s2 = stage2_train_localizer(
            cfg,
            &set,
            &mut models,
            seeding::derive(fold_seed, "stage2", 0),
        )?;
        let s3 = stage3_joint_refine(
            cfg,
            &set,
            &mut models,
            seeding::derive(fold_seed, "stage3", 0),
        )?;
        let bl = train_baseline(
            cfg,
            &set,
            &mut models,
            seeding::derive(fold_seed, "baseline", 0),
        )?;

        let (off, centered_full) = test_samples(
            &ds.records,
            plan.test_indices(fold),
            &geom,
            seeding::derive(fold_seed, "test", 0),
        )?;

        let stn_probs = predict_probs_stn(
            models.group("localizer")?,
            models.group("classifier")?,
            &off,
            cfg.batch_size,
        )?;
        let fold_stn = pairs_from(&off, stn_probs.into_iter().map(|(p, _)| p))?;
        let base_probs = predict_probs_net(models.group("baseline")?, &off, cfg.batch_size)?;
        let fold_base = pairs_from(&off, base_probs.into_iter())?;
        let base_c_probs =
            predict_probs_net(models.group("baseline")?, &centered_full, cfg.batch_size)?;
        let fold_base_c = pairs_from(&centered_full, base_c_probs.into_iter())?;

        folds.push(FoldOutcome {
            fold,
            stn: MetricsReport::from_pairs(&fold_stn)?,
            baseline: MetricsReport::from_pairs(&fold_base)?,
            baseline_centered: MetricsReport::from_pairs(&fold_base_c)?,
            stages: vec![s1, s2, s3, bl],
            models,
        });
        stn_pairs.extend(fold_stn);
        base_pairs.extend(fold_base);
        base_c_pairs.extend(fold_base_c);
    }

    Ok(CvOutcome {
        plan,
        folds,
        stn: MetricsReport::from_pairs(&stn_pairs)?,
        baseline: MetricsReport::from_pairs(&base_pairs)?,
        baseline_centered: MetricsReport::from_pairs(&base_c_pairs)?,
    })
}
