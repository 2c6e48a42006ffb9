//! Data layer: annotated source canvases, materialized training samples,
//! CSV annotation/manifest I/O, PNG corpora, class balancing, rotation
//! augmentation, and k-fold planning.
//!
//! A [`SourceRecord`] keeps the full 8-bit canvas so patches can be
//! re-cropped at fresh offsets every epoch; a [`Sample`] is one normalized
//! `[3, d, d]` patch with the offsets that produced it.

pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::img::{rotate_bilinear, Image, ImageU8};
use crate::losses::{ClassLabel, CLASS_NAMES, NUM_CLASSES};
use crate::num::Real;
use crate::seeding;
use crate::stn::{self, CropGeometry};

pub use synth::{canvas_side, generate_canvases, ShapeParams};

/// Ground truth recorded by the synthetic generator. Shape parameters are
/// only known in-process; a reloaded manifest carries the center alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthTruth {
    pub cx: i32,
    pub cy: i32,
    pub shape: Option<ShapeParams>,
}

/// One annotated source image held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceRecord {
    pub canvas: ImageU8,
    /// Annotated cell center, canvas coordinates (x = column, y = row).
    pub cx: i32,
    pub cy: i32,
    pub label: ClassLabel,
    /// Stable identifier used in error messages and corpus file names.
    pub source_id: String,
    pub truth: Option<SynthTruth>,
}

/// One materialized training sample: a normalized patch plus the offsets
/// the crop was taken at (`(0, 0)` for centered crops).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    /// `[3, d, d]`, values in `[0, 1]`.
    pub image: Image<T>,
    pub label: ClassLabel,
    pub dx: i32,
    pub dy: i32,
    pub source_id: String,
    /// Generator truth, when known (synthetic data).
    pub truth: Option<SynthTruth>,
}

/// Anything that carries a class label; lets balancing work on records,
/// samples, or bare index/label pairs alike.
pub trait HasLabel {
    fn class_label(&self) -> ClassLabel;
}

impl HasLabel for SourceRecord {
    fn class_label(&self) -> ClassLabel {
        self.label
    }
}

impl<T> HasLabel for Sample<T> {
    fn class_label(&self) -> ClassLabel {
        self.label
    }
}

impl HasLabel for ClassLabel {
    fn class_label(&self) -> ClassLabel {
        *self
    }
}

impl<A> HasLabel for (A, ClassLabel) {
    fn class_label(&self) -> ClassLabel {
        self.1
    }
}

/// One row of an annotation CSV, with the image path resolved against the
/// image root.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub path: PathBuf,
    /// The image reference exactly as written in the CSV.
    pub image: String,
    pub cx: i32,
    pub cy: i32,
    pub label: ClassLabel,
    /// `(true_cx, true_cy)` when the manifest carries generator truth.
    pub truth: Option<(i32, i32)>,
}

fn parse_err(path: &Path, line: u64, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        detail: detail.into(),
    }
}

fn field_i32(path: &Path, line: u64, name: &str, raw: &str) -> Result<i32> {
    raw.trim()
        .parse::<i32>()
        .map_err(|_| parse_err(path, line, format!("{name} '{raw}' is not an integer")))
}

/// Load an annotation CSV. The header must name `image,cx,cy,class`;
/// `true_cx,true_cy` are optional and must appear together. Rows that fail
/// to parse are reported with their line number and offending value.
pub fn load_annotations(csv_path: &Path, image_root: &Path) -> Result<Vec<AnnotationRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(csv_path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(csv_path, io),
            other => parse_err(csv_path, 1, format!("{other:?}")),
        })?;

    let headers = rdr
        .headers()
        .map_err(|e| parse_err(csv_path, 1, e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| {
        col(name).ok_or_else(|| parse_err(csv_path, 1, format!("missing column '{name}'")))
    };
    let (ci_image, ci_cx, ci_cy, ci_class) =
        (need("image")?, need("cx")?, need("cy")?, need("class")?);
    let truth_cols = match (col("true_cx"), col("true_cy")) {
        (Some(a), Some(b)) => Some((a, b)),
        (None, None) => None,
        _ => {
            return Err(parse_err(
                csv_path,
                1,
                "'true_cx' and 'true_cy' must appear together",
            ))
        }
    };

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, csv::Position::line);
            parse_err(csv_path, line, e.to_string())
        })?;
        let line = row.position().map_or(0, csv::Position::line);
        let get = |i: usize| {
            row.get(i)
                .ok_or_else(|| parse_err(csv_path, line, format!("missing field {i}")))
        };
        let image = get(ci_image)?.to_string();
        if image.is_empty() {
            return Err(parse_err(csv_path, line, "empty image reference"));
        }
        let cx = field_i32(csv_path, line, "cx", get(ci_cx)?)?;
        let cy = field_i32(csv_path, line, "cy", get(ci_cy)?)?;
        let class_raw = get(ci_class)?;
        let label = ClassLabel::parse(class_raw)
            .map_err(|_| parse_err(csv_path, line, format!("unknown class '{class_raw}'")))?;
        let truth = match truth_cols {
            Some((a, b)) => {
                let (ra, rb) = (get(a)?, get(b)?);
                match (ra.is_empty(), rb.is_empty()) {
                    (true, true) => None,
                    (false, false) => Some((
                        field_i32(csv_path, line, "true_cx", ra)?,
                        field_i32(csv_path, line, "true_cy", rb)?,
                    )),
                    _ => {
                        return Err(parse_err(
                            csv_path,
                            line,
                            "true_cx/true_cy must both be present or both empty",
                        ))
                    }
                }
            }
            None => None,
        };
        out.push(AnnotationRecord {
            path: image_root.join(&image),
            image,
            cx,
            cy,
            label,
            truth,
        });
    }
    Ok(out)
}

/// In-memory dataset: a list of source records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<SourceRecord>,
}

impl Dataset {
    /// Generate a synthetic corpus sized for `geom`, `n_per_class` records
    /// of each class, deterministic in `seed`.
    pub fn synthetic<T: Real>(n_per_class: usize, geom: &CropGeometry<T>, seed: u64) -> Dataset {
        Dataset {
            records: generate_canvases(n_per_class, geom, seed),
        }
    }

    /// Load a corpus from a manifest CSV plus PNG canvases.
    pub fn load(manifest: &Path, image_root: &Path) -> Result<Dataset> {
        let mut records = Vec::new();
        for ann in load_annotations(manifest, image_root)? {
            let canvas = load_png(&ann.path)?;
            let source_id = ann
                .path
                .file_stem()
                .map_or_else(|| ann.image.clone(), |s| s.to_string_lossy().into_owned());
            records.push(SourceRecord {
                canvas,
                cx: ann.cx,
                cy: ann.cy,
                label: ann.label,
                source_id,
                truth: ann.truth.map(|(cx, cy)| SynthTruth { cx, cy, shape: None }),
            });
        }
        Ok(Dataset { records })
    }

    /// Write every canvas as `{source_id}.png` plus `manifest.csv` into
    /// `dir`; returns the manifest path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for rec in &self.records {
            save_png(&rec.canvas, &dir.join(format!("{}.png", rec.source_id)))?;
        }
        let manifest = dir.join("manifest.csv");
        write_manifest(&self.records, &manifest)?;
        Ok(manifest)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for r in &self.records {
            counts[r.label.index()] += 1;
        }
        counts
    }
}

/// Write a manifest CSV (`image,cx,cy,class,true_cx,true_cy`; the truth
/// fields are empty for records without generator truth).
pub fn write_manifest(records: &[SourceRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::contract("write_manifest", format!("{other:?}")),
    })?;
    let io_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::contract("write_manifest", format!("{other:?}")),
    };
    w.write_record(["image", "cx", "cy", "class", "true_cx", "true_cy"])
        .map_err(io_err)?;
    for rec in records {
        let (tx, ty) = rec
            .truth
            .map_or((String::new(), String::new()), |t| {
                (t.cx.to_string(), t.cy.to_string())
            });
        w.write_record([
            format!("{}.png", rec.source_id),
            rec.cx.to_string(),
            rec.cy.to_string(),
            rec.label.name().to_string(),
            tx,
            ty,
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_png(path: &Path) -> Result<ImageU8> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.display().to_string(),
            source: e,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = ImageU8::new(h, w);
    out.data.copy_from_slice(img.as_raw());
    Ok(out)
}

pub fn save_png(canvas: &ImageU8, path: &Path) -> Result<()> {
    let buf: image::RgbImage = image::ImageBuffer::from_raw(
        canvas.width as u32,
        canvas.height as u32,
        canvas.data.clone(),
    )
    .ok_or_else(|| Error::contract("save_png", "canvas buffer size mismatch"))?;
    buf.save(path).map_err(|e| Error::Image {
        path: path.display().to_string(),
        source: e,
    })
}

fn with_source(id: &str, e: Error) -> Error {
    Error::contract("crop", format!("{id}: {e}"))
}

/// Materialize the centered `d_i` patch of a record (offsets zero).
pub fn crop_centered<T: Real>(rec: &SourceRecord, d_i: usize) -> Result<Sample<T>> {
    crop_offset(rec, d_i, 0, 0)
}

/// Materialize a patch whose window is displaced by `(dx, dy)` from
/// centered; the cell center lands at `(d_i/2 - dx, d_i/2 - dy)`.
pub fn crop_offset<T: Real>(rec: &SourceRecord, d_i: usize, dx: i32, dy: i32) -> Result<Sample<T>> {
    let (top, left) = stn::offset_window((rec.cx, rec.cy), d_i, dx, dy);
    let patch = rec
        .canvas
        .crop(top, left, d_i)
        .map_err(|e| with_source(&rec.source_id, e))?;
    Ok(Sample {
        image: patch.to_planar(),
        label: rec.label,
        dx,
        dy,
        source_id: rec.source_id.clone(),
        truth: rec.truth,
    })
}

/// Materialize a patch at offsets drawn uniformly from the record's
/// admissible (clamped) range.
pub fn crop_random_offset<T: Real, R: Rng>(
    rec: &SourceRecord,
    geom: &CropGeometry<T>,
    rng: &mut R,
) -> Result<Sample<T>> {
    let bounds = stn::offset_bounds(geom, (rec.cx, rec.cy), rec.canvas.height, rec.canvas.width)
        .map_err(|e| with_source(&rec.source_id, e))?;
    let (dx, dy) = stn::draw_offset(bounds, rng);
    crop_offset(rec, geom.d_i, dx, dy)
}

/// Rotate a sample by `angle` (radians) about the patch center. The content
/// rotates with zero fill; the offsets rotate with it, rounded to integers
/// and re-clamped to `±max_offset`.
pub fn rotate_sample<T: Real>(s: &Sample<T>, angle: f64, max_offset: i32) -> Sample<T> {
    let (sin, cos) = angle.sin_cos();
    let rx = cos * s.dx as f64 - sin * s.dy as f64;
    let ry = sin * s.dx as f64 + cos * s.dy as f64;
    let b = max_offset;
    Sample {
        image: rotate_bilinear(&s.image, angle),
        label: s.label,
        dx: (rx.round() as i32).clamp(-b, b),
        dy: (ry.round() as i32).clamp(-b, b),
        source_id: s.source_id.clone(),
        truth: s.truth,
    }
}

/// Rotation augmentation: one copy rotated by an angle drawn uniformly
/// from `[0, 2π)`.
pub fn augment_rotate<T: Real, R: Rng>(s: &Sample<T>, max_offset: i32, rng: &mut R) -> Sample<T> {
    rotate_sample(s, rng.random_range(0.0..std::f64::consts::TAU), max_offset)
}

/// Undersample every class down to the minority count. Deletions are drawn
/// uniformly; surviving samples keep their original order. Errors if any
/// class has no samples at all.
pub fn balance_classes<S: HasLabel, R: Rng>(samples: Vec<S>, rng: &mut R) -> Result<Vec<S>> {
    let mut per_class: [Vec<usize>; NUM_CLASSES] = Default::default();
    for (i, s) in samples.iter().enumerate() {
        per_class[s.class_label().index()].push(i);
    }
    if let Some(empty) = per_class.iter().position(Vec::is_empty) {
        return Err(Error::contract(
            "balance_classes",
            format!("class '{}' has no samples", CLASS_NAMES[empty]),
        ));
    }
    let minority = per_class.iter().map(Vec::len).min().expect("three classes");
    let mut keep = vec![false; samples.len()];
    for list in &mut per_class {
        list.shuffle(rng);
        for &i in list.iter().take(minority) {
            keep[i] = true;
        }
    }
    Ok(samples
        .into_iter()
        .enumerate()
        .filter_map(|(i, s)| keep[i].then_some(s))
        .collect())
}

/// A k-fold partition of `0..n`: disjoint folds covering every index, with
/// sizes differing by at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }

    /// Indices held out in `fold`.
    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    /// All indices outside `fold`, ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(f, _)| f != fold)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn n(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }
}

/// Shuffle `0..n` with a seeded stream and cut it into `k` near-equal
/// folds (the first `n % k` folds get one extra index).
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::contract("kfold_split", format!("k = {k}, need k >= 2")));
    }
    if n < k {
        return Err(Error::contract(
            "kfold_split",
            format!("n = {n} < k = {k}: some fold would be empty"),
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeding::stream(seed, "kfold", 0));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut cursor = 0;
    for f in 0..k {
        let take = base + usize::from(f < extra);
        let mut fold: Vec<usize> = idx[cursor..cursor + take].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        cursor += take;
    }
    Ok(FoldPlan { k, seed, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn geom() -> CropGeometry<f64> {
        CropGeometry {
            d_i: 128,
            d_c: 64,
            theta_s: 0.5,
            dx: 0,
            dy: 0,
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        seeding::stream(seed, "data-test", 0)
    }

    fn write_csv(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn annotations_round_trip_with_and_without_truth() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(
            dir.path(),
            "ann.csv",
            "image,cx,cy,class,true_cx,true_cy\n\
             a.png,100,90,granulocyte,100,90\n\
             b.png,80,120,1,,\n\
             c.png,99,101,tumor,98,102\n",
        );
        let anns = load_annotations(&p, Path::new("/imgs")).unwrap();
        assert_eq!(anns.len(), 3);
        assert_eq!(anns[0].path, Path::new("/imgs/a.png"));
        assert_eq!(anns[0].truth, Some((100, 90)));
        assert_eq!(anns[1].label, ClassLabel::new(1).unwrap());
        assert_eq!(anns[1].truth, None);
        assert_eq!((anns[2].cx, anns[2].cy), (99, 101));

        let bare = write_csv(
            dir.path(),
            "bare.csv",
            "image,cx,cy,class\nx.png,10,20,mitosis\n",
        );
        let anns = load_annotations(&bare, Path::new(".")).unwrap();
        assert_eq!(anns[0].truth, None);
        assert_eq!(anns[0].label.name(), "mitosis");
    }

    #[test]
    fn annotation_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let bad_class = write_csv(
            dir.path(),
            "bad_class.csv",
            "image,cx,cy,class\na.png,1,2,granulocyte\nb.png,3,4,fibroblast\n",
        );
        let err = load_annotations(&bad_class, Path::new(".")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("fibroblast"), "{msg}");

        let bad_cx = write_csv(
            dir.path(),
            "bad_cx.csv",
            "image,cx,cy,class\na.png,twelve,2,tumor\n",
        );
        let msg = load_annotations(&bad_cx, Path::new(".")).unwrap_err().to_string();
        assert!(msg.contains("line 2") && msg.contains("twelve"), "{msg}");

        let no_col = write_csv(dir.path(), "no_col.csv", "image,cx,cy\na.png,1,2\n");
        let msg = load_annotations(&no_col, Path::new(".")).unwrap_err().to_string();
        assert!(msg.contains("missing column 'class'"), "{msg}");

        let half_truth = write_csv(
            dir.path(),
            "half.csv",
            "image,cx,cy,class,true_cx\na.png,1,2,tumor,5\n",
        );
        let msg = load_annotations(&half_truth, Path::new(".")).unwrap_err().to_string();
        assert!(msg.contains("must appear together"), "{msg}");
    }

    #[test]
    fn centered_crop_matches_canvas_bytes() {
        let rec = &generate_canvases(1, &geom(), 11)[0];
        let s: Sample<f64> = crop_centered(rec, 128).unwrap();
        assert_eq!(
            (s.image.channels, s.image.height, s.image.width),
            (3, 128, 128)
        );
        assert_eq!((s.dx, s.dy), (0, 0));
        let (top, left) = stn::offset_window((rec.cx, rec.cy), 128, 0, 0);
        for &(c, i, j) in &[(0, 0, 0), (1, 64, 64), (2, 127, 127), (0, 3, 120)] {
            let want = rec.canvas.px(top as usize + i, left as usize + j)[c] as f64 / 255.0;
            assert_eq!(s.image.at(c, i, j), want);
        }
        assert!(s.image.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // f32 instantiation compiles and stays in range
        let s32: Sample<f32> = crop_centered(rec, 64).unwrap();
        assert!(s32.image.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn crop_errors_name_the_source_record() {
        let mut rec = generate_canvases(1, &geom(), 12)[0].clone();
        rec.cx = 5; // centered 128 window cannot fit
        let err = crop_centered::<f64>(&rec, 128).unwrap_err().to_string();
        assert!(err.contains("synth-00000"), "{err}");
    }

    #[test]
    fn random_offset_crop_respects_clamped_bounds() {
        let rec = &generate_canvases(1, &geom(), 13)[0];
        let mut r = rng(4);
        let (mut min_dx, mut max_dx) = (i32::MAX, i32::MIN);
        for _ in 0..300 {
            let s: Sample<f64> = crop_random_offset(rec, &geom(), &mut r).unwrap();
            assert!(s.dx.abs() <= 32 && s.dy.abs() <= 32);
            min_dx = min_dx.min(s.dx);
            max_dx = max_dx.max(s.dx);
            // the cell center must land at patch position (64-dx, 64-dy)
            let (top, left) = stn::offset_window((rec.cx, rec.cy), 128, s.dx, s.dy);
            assert_eq!(top + 64 - s.dy, rec.cy);
            assert_eq!(left + 64 - s.dx, rec.cx);
        }
        assert!(min_dx <= -25 && max_dx >= 25, "offsets {min_dx}..{max_dx} barely vary");
    }

    #[test]
    fn rotation_moves_content_and_offsets_together() {
        // bright dot at the cell position (center - delta); after rotating
        // by a quarter turn the dot and the recorded offsets must agree
        let d = 65usize; // odd side: exact center pixel
        let mut img = Image::<f64>::zeros(3, d, d);
        let (dx, dy) = (10i32, 4i32);
        let (ci, cj) = (32i32, 32i32);
        *img.at_mut(0, (ci - dy) as usize, (cj - dx) as usize) = 1.0;
        let s = Sample {
            image: img,
            label: ClassLabel::new(1).unwrap(),
            dx,
            dy,
            source_id: "dot".into(),
            truth: None,
        };
        let r = rotate_sample(&s, std::f64::consts::FRAC_PI_2, 32);
        // R(pi/2): (dx, dy) -> (-dy, dx)
        assert_eq!((r.dx, r.dy), (-4, 10));
        let (mut bi, mut bj, mut bv) = (0, 0, 0.0);
        for i in 0..d {
            for j in 0..d {
                if r.image.at(0, i, j) > bv {
                    bv = r.image.at(0, i, j);
                    (bi, bj) = (i, j);
                }
            }
        }
        assert!(bv > 0.5, "dot lost by rotation, max {bv}");
        assert_eq!((bi as i32, bj as i32), (ci - r.dy, cj - r.dx));
    }

    #[test]
    fn rotated_offsets_are_reclamped_to_bounds() {
        let mut img = Image::<f64>::zeros(3, 8, 8);
        *img.at_mut(0, 0, 0) = 1.0;
        let s = Sample {
            image: img,
            label: ClassLabel::new(0).unwrap(),
            dx: 32,
            dy: 32,
            source_id: "corner".into(),
            truth: None,
        };
        // R(pi/4) sends (32, 32) to (0, 45.25) -> dy clamps to 32
        let r = rotate_sample(&s, std::f64::consts::FRAC_PI_4, 32);
        assert_eq!((r.dx, r.dy), (0, 32));
    }

    #[test]
    fn augment_rotate_is_stream_deterministic() {
        let rec = &generate_canvases(1, &geom(), 14)[0];
        let s: Sample<f64> = crop_centered(rec, 128).unwrap();
        let a = augment_rotate(&s, 32, &mut rng(7));
        let b = augment_rotate(&s, 32, &mut rng(7));
        let c = augment_rotate(&s, 32, &mut rng(8));
        assert_eq!(a, b);
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn balancing_undersamples_to_the_minority_preserving_order() {
        let mut samples: Vec<(usize, ClassLabel)> = Vec::new();
        let sizes = [100usize, 50, 80];
        for (cls, &n) in sizes.iter().enumerate() {
            for _ in 0..n {
                samples.push((samples.len(), ClassLabel::new(cls).unwrap()));
            }
        }
        let balanced = balance_classes(samples, &mut rng(21)).unwrap();
        assert_eq!(balanced.len(), 150);
        let mut counts = [0usize; NUM_CLASSES];
        for &(_, l) in &balanced {
            counts[l.index()] += 1;
        }
        assert_eq!(counts, [50, 50, 50]);
        assert!(balanced.windows(2).all(|w| w[0].0 < w[1].0), "order broken");
        // different seeds keep different subsets
        let again = balance_classes(
            (0..230)
                .map(|i| (i, ClassLabel::new(if i < 100 { 0 } else if i < 150 { 1 } else { 2 }).unwrap()))
                .collect(),
            &mut rng(22),
        )
        .unwrap();
        assert_ne!(balanced, again);
    }

    #[test]
    fn balancing_requires_every_class() {
        let only_two: Vec<(usize, ClassLabel)> = (0..10)
            .map(|i| (i, ClassLabel::new(i % 2).unwrap()))
            .collect();
        let err = balance_classes(only_two, &mut rng(3)).unwrap_err().to_string();
        assert!(err.contains("tumor") && err.contains("no samples"), "{err}");
    }

    #[test]
    fn kfold_shapes_and_determinism() {
        let plan = kfold_split(7, 5, 42).unwrap();
        let mut sizes: Vec<usize> = plan.folds().iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, [1, 1, 1, 2, 2]);
        assert_eq!(plan, kfold_split(7, 5, 42).unwrap());
        assert_ne!(plan, kfold_split(7, 5, 43).unwrap());

        let plan = kfold_split(103, 5, 1).unwrap();
        let mut seen = vec![false; 103];
        for f in 0..5 {
            for &i in plan.test_indices(f) {
                assert!(!seen[i], "index {i} in two folds");
                seen[i] = true;
            }
            let train = plan.train_indices(f);
            assert_eq!(train.len() + plan.test_indices(f).len(), 103);
            assert!(train.iter().all(|i| !plan.test_indices(f).contains(i)));
        }
        assert!(seen.iter().all(|&s| s), "some index in no fold");
    }

    #[test]
    fn kfold_rejects_degenerate_requests() {
        assert!(kfold_split(10, 1, 0).is_err());
        assert!(kfold_split(3, 5, 0).is_err());
    }

    #[test]
    fn corpus_saves_and_reloads_identically() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::synthetic(2, &geom(), 31);
        let manifest = ds.save(dir.path()).unwrap();
        let back = Dataset::load(&manifest, dir.path()).unwrap();
        assert_eq!(back.len(), 6);
        for (a, b) in ds.records.iter().zip(&back.records) {
            assert_eq!(a.canvas, b.canvas, "{}: canvas bytes differ", a.source_id);
            assert_eq!((a.cx, a.cy), (b.cx, b.cy));
            assert_eq!(a.label, b.label);
            assert_eq!(a.source_id, b.source_id);
            let at = a.truth.unwrap();
            let bt = b.truth.unwrap();
            assert_eq!((at.cx, at.cy), (bt.cx, bt.cy));
        }
        assert_eq!(back.class_counts(), [2, 2, 2]);
    }
}
