//! Run-directory artifacts: the metrics CSV, the rendered multi-block text
//! report, and side-by-side patch/focus-crop PNG dumps.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{save_png, Sample};
use crate::error::{Error, Result};
use crate::img::{Image, ImageU8};
use crate::metrics::MetricsReport;
use crate::networks::ParamGroup;
use crate::stn::{affine_grid, bilinear_sample, AffineTheta};
use crate::Scalar;

use super::eval::predict_thetas;

/// Write `metrics.csv`: a header plus one block of rows per model.
pub fn write_metrics_csv(path: &Path, blocks: &[(&str, &MetricsReport)]) -> Result<()> {
    let mut text = String::from("model,class,precision,recall,f1,support\n");
    for (model, report) in blocks {
        for row in report.csv_rows(model) {
            text.push_str(&row);
            text.push('\n');
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Render the stacked text report: one classification table per model.
pub fn render_report(blocks: &[(&str, &MetricsReport)]) -> String {
    blocks
        .iter()
        .map(|(model, report)| report.render_table(model))
        .collect::<Vec<_>>()
        .join("\n")
}

fn to_u8(v: Scalar) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Compose a patch and its focus crop side by side (focus upscaled to the
/// patch height with nearest neighbor, separated by a white gutter).
pub fn compose_side_by_side(patch: &Image<Scalar>, focus: &Image<Scalar>) -> ImageU8 {
    const GAP: usize = 4;
    let side = patch.height;
    let mut out = ImageU8::new(side, side + GAP + side);
    for i in 0..side {
        for j in 0..side + GAP + side {
            out.set_px(i, j, [255, 255, 255]);
        }
    }
    for i in 0..side {
        for j in 0..side {
            out.set_px(
                i,
                j,
                [
                    to_u8(patch.at(0, i, j)),
                    to_u8(patch.at(1, i, j)),
                    to_u8(patch.at(2, i, j)),
                ],
            );
        }
        for j in 0..side {
            // nearest-neighbor upscale of the focus crop
            let fi = i * focus.height / side;
            let fj = j * focus.width / side;
            out.set_px(
                i,
                side + GAP + j,
                [
                    to_u8(focus.at(0, fi, fj)),
                    to_u8(focus.at(1, fi, fj)),
                    to_u8(focus.at(2, fi, fj)),
                ],
            );
        }
    }
    out
}

/// One written focus dump.
#[derive(Debug, Clone)]
pub struct FocusDump {
    pub source_id: String,
    pub path: PathBuf,
}

/// For up to `limit` samples: regress the transform, extract the focus
/// crop, and write `<source_id>-focus.png` showing patch and crop side by
/// side. Returns the written files.
pub fn save_focus_dumps(
    dir: &Path,
    localizer: &ParamGroup<Scalar>,
    d_c: usize,
    samples: &[Sample<Scalar>],
    limit: usize,
    batch_size: usize,
) -> Result<Vec<FocusDump>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let take = limit.min(samples.len());
    let thetas = predict_thetas(localizer, &samples[..take], batch_size)?;
    let mut dumps = Vec::with_capacity(take);
    for (sample, theta) in samples[..take].iter().zip(thetas) {
        let grid = affine_grid(&AffineTheta(theta), d_c, d_c)?;
        let focus = bilinear_sample(&sample.image, &grid);
        let composite = compose_side_by_side(&sample.image, &focus);
        let path = dir.join(format!("{}-focus.png", sample.source_id));
        save_png(&composite, &path)?;
        dumps.push(FocusDump {
            source_id: sample.source_id.clone(),
            path,
        });
    }
    Ok(dumps)
}
