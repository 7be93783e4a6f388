//! Evaluation metrics, reports, and weight-map export.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::{crop, rgb_to_y, save_png, ImagePair};
use crate::error::{Error, Result};
use crate::judge::Judge;
use crate::models::{SrModel, WeightModel};
use crate::tensor::Tensor;

/// PSNR in dB on the BT.601 luma channel over the region left after
/// shaving `shave` border pixels; capped at 100 dB (identical inputs hit
/// the cap exactly).
pub fn psnr_y(x: &Tensor, x_hat: &Tensor, shave: usize) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::shape(
            "psnr_y",
            format!("shapes differ: {} vs {}", x.shape(), x_hat.shape()),
        ));
    }
    let ya = rgb_to_y(x)?;
    let yb = rgb_to_y(x_hat)?;
    let shape = ya.shape();
    if shape.h <= 2 * shave || shape.w <= 2 * shave {
        return Err(Error::InvalidArgument(format!(
            "psnr_y: shave {shave} leaves no pixels of a {}x{} image",
            shape.h, shape.w
        )));
    }
    let (ya, yb) = (
        crop(&ya, shave, shave, shape.h - 2 * shave, shape.w - 2 * shave),
        crop(&yb, shave, shave, shape.h - 2 * shave, shape.w - 2 * shave),
    );
    let mut acc = 0.0f64;
    for (a, b) in ya.values().iter().zip(yb.values().iter()) {
        let d = *a as f64 - *b as f64;
        acc += d * d;
    }
    let mse = acc / ya.numel() as f64;
    if mse == 0.0 {
        return Ok(100.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(100.0))
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalRow {
    pub name: String,
    pub psnr_y: f64,
    pub judge_dist: f64,
}

/// Per-image and mean PSNR-Y / judge distance for one dataset and
/// checkpoint.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub dataset_id: String,
    pub scale: usize,
    pub checkpoint_hash: String,
    pub rows: Vec<EvalRow>,
    pub mean_psnr_y: f64,
    pub mean_judge_dist: f64,
}

impl EvalReport {
    pub fn from_rows(
        dataset_id: String,
        scale: usize,
        checkpoint_hash: String,
        rows: Vec<EvalRow>,
    ) -> EvalReport {
        let n = rows.len().max(1) as f64;
        let mean_psnr_y = rows.iter().map(|r| r.psnr_y).sum::<f64>() / n;
        let mean_judge_dist = rows.iter().map(|r| r.judge_dist).sum::<f64>() / n;
        EvalReport {
            dataset_id,
            scale,
            checkpoint_hash,
            rows,
            mean_psnr_y,
            mean_judge_dist,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,psnr_y,judge_dist\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.6},{:.8}\n", r.name, r.psnr_y, r.judge_dist));
        }
        out.push_str(&format!(
            "mean,{:.6},{:.8}\n",
            self.mean_psnr_y, self.mean_judge_dist
        ));
        out
    }

    /// Write `eval.csv` and `eval.json` under `out_dir`.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let csv_path = out_dir.join("eval.csv");
        std::fs::write(&csv_path, self.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
        let json_path = out_dir.join("eval.json");
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("report encode: {e}")))?;
        std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))
    }
}

/// Run the model over named pairs and score against the HR references.
/// Outputs are clamped to [0, 1] before scoring; rows keep input order.
pub fn eval_pairs(
    model: &SrModel,
    items: &[(String, ImagePair)],
    judge: &Judge,
    shave: usize,
    dataset_id: String,
    scale: usize,
    checkpoint_hash: String,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(items.len());
    for (name, pair) in items {
        let out = model.forward(&pair.lr_up)?.detach().clamp(0.0, 1.0);
        rows.push(EvalRow {
            name: name.clone(),
            psnr_y: psnr_y(&pair.hr, &out, shave)?,
            judge_dist: judge.distance(&pair.hr, &out)?.value() as f64,
        });
    }
    Ok(EvalReport::from_rows(dataset_id, scale, checkpoint_hash, rows))
}

/// Mean (PSNR-Y, judge distance) without the report wrapper.
pub fn mean_scores(
    model: &SrModel,
    pairs: &[ImagePair],
    judge: &Judge,
    shave: usize,
) -> Result<(f64, f64)> {
    let items: Vec<(String, ImagePair)> = pairs
        .iter()
        .map(|p| {
            (
                String::new(),
                ImagePair {
                    hr: p.hr.clone(),
                    lr: p.lr.clone(),
                    lr_up: p.lr_up.clone(),
                    scale: p.scale,
                },
            )
        })
        .collect();
    let report = eval_pairs(model, &items, judge, shave, String::new(), 0, String::new())?;
    Ok((report.mean_psnr_y, report.mean_judge_dist))
}

/// Render a (1, 1, H, W) weight map as an 8-bit grayscale PNG
/// (weight 0 -> 0, weight 1 -> 255).
pub fn save_weight_map_png(map: &Tensor, path: &Path) -> Result<()> {
    save_png(map, path)
}

/// For every named pair, run the weighting network on (HR, estimate) and
/// write `<image>_<epoch>.png` grayscale maps into `out_dir`. The estimate
/// is the SR model's clamped output when a model is given, otherwise the
/// bicubic upsample.
pub fn export_weight_maps(
    wnet: &WeightModel,
    sr: Option<&SrModel>,
    items: &[(String, ImagePair)],
    k: f32,
    epoch: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::with_capacity(items.len());
    for (name, pair) in items {
        let estimate = match sr {
            Some(model) => model.forward(&pair.lr_up)?.detach().clamp(0.0, 1.0),
            None => pair.lr_up.clone(),
        };
        let map = wnet.forward(&pair.hr, &estimate, k)?;
        let stem = Path::new(name)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| name.clone());
        let path = out_dir.join(format!("{stem}_{epoch}.png"));
        save_weight_map_png(&map.values.detach(), &path)?;
        written.push(path);
    }
    Ok(written)
}
