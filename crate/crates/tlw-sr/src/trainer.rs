//! The alternating training loop: one weighting-network update and one
//! SR-network update per iteration, the epoch k-schedule, checkpointing,
//! metrics, and the four-loss comparison harness.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::eval::mean_scores;
use crate::judge::Judge;
use crate::models::{init_models, Checkpoint, SrModel, WeightModel};
use crate::optim::Adam;
use crate::stochastic::{sample_relaxed_bernoulli, seed_all, RngState};
use crate::tensor::{Shape, Tensor};
use crate::weighting::{
    loss_phi, loss_theta, weight_criterion, BaseLossKind, CriterionValue, WeightMap,
};

const TAG_SAMPLE: u64 = 0x73616d70;
const TAG_SHUFFLE: u64 = 0x73687566;

/// Metrics rows are computed on at most this many training pairs.
const TRAIN_METRIC_PAIRS: usize = 32;

pub const METRICS_HEADER: &str = "epoch,iter,loss_theta,loss_phi,mean_wc,psnr_y,judge_dist";

/// Target mean weight for an epoch under the default schedule.
pub fn k_schedule(epoch: u64) -> f64 {
    crate::config::KSchedule::default().value(epoch)
}

/// Deterministic batch order for one epoch.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    RngState::new(seed)
        .derive(TAG_SHUFFLE)
        .derive(epoch)
        .shuffled_indices(n)
}

pub struct Dataset {
    pub train: Vec<ImagePair>,
    pub val: Vec<ImagePair>,
}

pub struct Batch {
    pub hr: Tensor,
    pub lr_up: Tensor,
}

/// Stack pairs (all of one patch size) into (B, 3, H, W) tensors.
pub fn make_batch(pairs: &[ImagePair], idx: &[usize]) -> Result<Batch> {
    if idx.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let first = pairs[idx[0]].hr.shape();
    let (h, w) = (first.h, first.w);
    let mut hr = Vec::with_capacity(idx.len() * 3 * h * w);
    let mut lr_up = Vec::with_capacity(idx.len() * 3 * h * w);
    for &i in idx {
        let p = &pairs[i];
        if p.hr.shape().h != h || p.hr.shape().w != w {
            return Err(Error::shape(
                "make_batch",
                format!("pair {} has extents {}, expected {h}x{w}", i, p.hr.shape()),
            ));
        }
        hr.extend_from_slice(&p.hr.values());
        lr_up.extend_from_slice(&p.lr_up.values());
    }
    Ok(Batch {
        hr: Tensor::from_vec(Shape::new(idx.len(), 3, h, w), hr)?,
        lr_up: Tensor::from_vec(Shape::new(idx.len(), 3, h, w), lr_up)?,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct IterationRecord {
    pub loss_theta: f32,
    pub loss_phi: f32,
    pub mean_wc: f64,
    /// (weighting steps, SR steps) observed right after the weighting
    /// update and right after the SR update.
    pub counters_after_phi: (u64, u64),
    pub counters_after_theta: (u64, u64),
}

fn ensure_finite(t: &Tensor, name: &str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { name: name.into() })
    }
}

/// One alternating iteration:
/// estimate, draw one weight map, update the weighting network on its
/// criterion, redraw T maps from the updated network, update the SR
/// network on the sample-weighted likelihood loss.
#[allow(clippy::too_many_arguments)]
pub fn em_iteration(
    batch: &Batch,
    sr: &SrModel,
    wnet: &WeightModel,
    judge: &Judge,
    cfg: &TrainConfig,
    k: f32,
    opt_theta: &mut Adam,
    opt_phi: &mut Adam,
    rng: &mut RngState,
) -> Result<IterationRecord> {
    let x_hat = sr.forward(&batch.lr_up)?;
    ensure_finite(&x_hat, "sr_output")?;
    let x_hat_const = x_hat.detach();

    // weighting step
    let mean_map = wnet.forward(&batch.hr, &x_hat_const, k)?;
    ensure_finite(&mean_map.values, "weight_map_mean")?;
    let drawn = sample_relaxed_bernoulli(&mean_map.values, cfg.temperature, rng)?;
    ensure_finite(&drawn, "sampled_weights")?;
    let w = WeightMap::new(drawn, k)?;
    let crit = weight_criterion(&batch.hr, &x_hat_const, &w, judge, cfg.epsilon_wc)?;
    let lphi = loss_phi(&crit, cfg.direction);
    ensure_finite(&lphi, "loss_phi")?;
    lphi.backward()?;
    debug_assert!(
        sr.parameters().iter().all(|p| p.grad().is_none()),
        "weighting step leaked gradient into the SR network"
    );
    opt_phi.step(&wnet.parameters(), Some(cfg.grad_clip))?;
    wnet.zero_grad();
    let counters_after_phi = (opt_phi.steps(), opt_theta.steps());

    // SR step: T fresh samples from the updated weighting network
    let mean_map = wnet.forward(&batch.hr, &x_hat_const, k)?;
    let mut samples = Vec::with_capacity(cfg.samples);
    let mut wcs: Vec<CriterionValue> = Vec::with_capacity(cfg.samples);
    let mut wc_sum = 0.0f64;
    for _ in 0..cfg.samples {
        let drawn = sample_relaxed_bernoulli(&mean_map.values, cfg.temperature, rng)?;
        let w = WeightMap::new(drawn.detach(), k)?;
        let crit = weight_criterion(&batch.hr, &x_hat_const, &w, judge, cfg.epsilon_wc)?;
        wc_sum += crit.value();
        samples.push(w);
        wcs.push(crit);
    }
    let ltheta = loss_theta(
        &batch.hr,
        &x_hat,
        &samples,
        &wcs,
        cfg.base_loss,
        cfg.direction,
    )?;
    ensure_finite(&ltheta, "loss_theta")?;
    ltheta.backward()?;
    debug_assert!(
        wnet.parameters().iter().all(|p| p.grad().is_none()),
        "SR step leaked gradient into the weighting network"
    );
    opt_theta.step(&sr.parameters(), Some(cfg.grad_clip))?;
    sr.zero_grad();
    let counters_after_theta = (opt_phi.steps(), opt_theta.steps());

    Ok(IterationRecord {
        loss_theta: ltheta.scalar_value(),
        loss_phi: lphi.scalar_value(),
        mean_wc: wc_sum / cfg.samples as f64,
        counters_after_phi,
        counters_after_theta,
    })
}

/// One plain (unweighted) training step on the base loss.
pub fn plain_iteration(
    batch: &Batch,
    sr: &SrModel,
    kind: BaseLossKind,
    opt: &mut Adam,
    clip: f32,
) -> Result<f32> {
    let x_hat = sr.forward(&batch.lr_up)?;
    ensure_finite(&x_hat, "sr_output")?;
    let residual = batch.hr.sub(&x_hat)?;
    let loss = match kind {
        BaseLossKind::L1 => residual.abs().mean(),
        BaseLossKind::Mse => residual.square().mean(),
    };
    ensure_finite(&loss, "loss")?;
    loss.backward()?;
    opt.step(&sr.parameters(), Some(clip))?;
    sr.zero_grad();
    Ok(loss.scalar_value())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub iter: u64,
    pub loss_theta: f64,
    pub loss_phi: f64,
    pub mean_wc: f64,
    pub psnr_y: f64,
    pub judge_dist: f64,
}

impl EpochMetrics {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.8}",
            self.epoch,
            self.iter,
            self.loss_theta,
            self.loss_phi,
            self.mean_wc,
            self.psnr_y,
            self.judge_dist
        )
    }
}

pub fn write_metrics_csv(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for row in history {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Everything loaded back from a training checkpoint.
pub struct LoadedBundle {
    pub config: TrainConfig,
    pub legs: Vec<String>,
    pub models: Vec<SrModel>,
    pub weight: WeightModel,
    pub epoch: u64,
    pub iter: u64,
    pub rng_counter: u64,
    pub theta_steps: Vec<u64>,
    pub phi_steps: u64,
    pub history: Vec<EpochMetrics>,
    pub checkpoint: Checkpoint,
}

#[allow(clippy::too_many_arguments)]
fn save_bundle(
    path: &Path,
    cfg: &TrainConfig,
    legs: &[&str],
    models: &[&SrModel],
    wnet: &WeightModel,
    opt_thetas: &[&Adam],
    opt_phi: &Adam,
    epoch: u64,
    iter: u64,
    rng_counter: u64,
    history: &[EpochMetrics],
) -> Result<()> {
    let meta = serde_json::json!({
        "kind": "train",
        "config": cfg,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "legs": legs,
        "epoch": epoch,
        "iter": iter,
        "rng_counter": rng_counter,
        "theta_steps": opt_thetas.iter().map(|o| o.steps()).collect::<Vec<_>>(),
        "phi_steps": opt_phi.steps(),
        "history": history,
    });
    let mut ckpt = Checkpoint::new(meta);
    for (leg, model) in legs.iter().zip(models) {
        ckpt.push(model.to_arrays(&format!("sr.{leg}")));
    }
    ckpt.push(wnet.to_arrays("weight"));
    for (leg, opt) in legs.iter().zip(opt_thetas) {
        ckpt.push(opt.state_arrays(&format!("opt_theta.{leg}")));
    }
    ckpt.push(opt_phi.state_arrays("opt_phi"));
    ckpt.save(path)
}

pub fn load_bundle(path: &Path) -> Result<LoadedBundle> {
    let ckpt = Checkpoint::load(path)?;
    let meta = &ckpt.meta;
    let config: TrainConfig = serde_json::from_value(
        meta.get("config")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("missing `config` in checkpoint".into()))?,
    )
    .map_err(|e| Error::Checkpoint(format!("config decode: {e}")))?;
    let legs: Vec<String> = serde_json::from_value(
        meta.get("legs")
            .cloned()
            .unwrap_or_else(|| serde_json::json!(["main"])),
    )
    .map_err(|e| Error::Checkpoint(format!("legs decode: {e}")))?;
    let mut models = Vec::with_capacity(legs.len());
    for leg in &legs {
        models.push(SrModel::from_arrays(
            config.sr_depth,
            config.sr_width,
            &ckpt,
            &format!("sr.{leg}"),
        )?);
    }
    let weight = WeightModel::from_arrays(&ckpt, "weight")?;
    let read_u64 = |key: &str| -> u64 {
        meta.get(key).and_then(|v| v.as_u64()).unwrap_or_default()
    };
    let theta_steps: Vec<u64> = serde_json::from_value(
        meta.get("theta_steps")
            .cloned()
            .unwrap_or_else(|| serde_json::json!([])),
    )
    .unwrap_or_default();
    let history: Vec<EpochMetrics> = serde_json::from_value(
        meta.get("history")
            .cloned()
            .unwrap_or_else(|| serde_json::json!([])),
    )
    .map_err(|e| Error::Checkpoint(format!("history decode: {e}")))?;
    Ok(LoadedBundle {
        config,
        legs,
        models,
        weight,
        epoch: read_u64("epoch"),
        iter: read_u64("iter"),
        rng_counter: read_u64("rng_counter"),
        theta_steps,
        phi_steps: read_u64("phi_steps"),
        history,
        checkpoint: ckpt,
    })
}

pub struct TrainOutcome {
    pub model: SrModel,
    pub weight: WeightModel,
    pub history: Vec<EpochMetrics>,
    pub checkpoints: Vec<PathBuf>,
    pub metrics_path: PathBuf,
}

/// Train on the dataset per the config, writing per-epoch checkpoints and
/// a metrics CSV into `out_dir`. `resume` continues bit-exactly from a
/// previous checkpoint of the same config.
pub fn train_run(
    dataset: &Dataset,
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::InvalidArgument("dataset has no training pairs".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let judge = Judge::build(&cfg.judge)?;

    let (model, wnet, mut opt_theta, mut opt_phi, mut rng, mut history, start_epoch, mut iter);
    match resume {
        Some(ckpt_path) => {
            let bundle = load_bundle(ckpt_path)?;
            if bundle.config.config_hash() != cfg.config_hash() {
                return Err(Error::Checkpoint(
                    "checkpoint was produced by a different config".into(),
                ));
            }
            if bundle.legs.len() != 1 {
                return Err(Error::Checkpoint(
                    "cannot resume a four-loss checkpoint with `train`".into(),
                ));
            }
            model = bundle.models.into_iter().next().unwrap();
            wnet = bundle.weight;
            opt_theta = Adam::new(&model.parameters(), cfg.lr_theta);
            opt_theta.restore_state(
                &bundle.checkpoint,
                "opt_theta.main",
                bundle.theta_steps.first().copied().unwrap_or_default(),
            )?;
            opt_phi = Adam::new(&wnet.parameters(), cfg.lr_phi);
            opt_phi.restore_state(&bundle.checkpoint, "opt_phi", bundle.phi_steps)?;
            rng = RngState::at(
                seed_all(cfg.seed).derive(TAG_SAMPLE).seed(),
                bundle.rng_counter,
            );
            history = bundle.history;
            start_epoch = bundle.epoch;
            iter = bundle.iter;
        }
        None => {
            let (mut models, weight) = init_models(cfg.seed, cfg.sr_depth, cfg.sr_width, false)?;
            model = models.remove(0);
            wnet = weight;
            opt_theta = Adam::new(&model.parameters(), cfg.lr_theta);
            opt_phi = Adam::new(&wnet.parameters(), cfg.lr_phi);
            rng = seed_all(cfg.seed).derive(TAG_SAMPLE);
            history = Vec::new();
            start_epoch = 0;
            iter = 0;
            // initial checkpoint (epoch 0, no steps taken)
            save_bundle(
                &out_dir.join("ckpt_epoch_0.bin"),
                cfg,
                &["main"],
                &[&model],
                &wnet,
                &[&opt_theta],
                &opt_phi,
                0,
                0,
                rng.counter(),
                &history,
            )?;
        }
    }

    let metrics_path = out_dir.join("metrics.csv");
    write_metrics_csv(&metrics_path, &history)?;
    let mut checkpoints = vec![out_dir.join("ckpt_epoch_0.bin")];

    for epoch in start_epoch + 1..=cfg.epochs {
        let k = cfg.k_schedule.value(epoch - 1) as f32;
        let order = epoch_order(cfg.seed, epoch, dataset.train.len());
        let (mut sum_lt, mut sum_lp, mut sum_wc, mut n_iter) = (0.0f64, 0.0f64, 0.0f64, 0u64);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = make_batch(&dataset.train, chunk)?;
            let rec = em_iteration(
                &batch, &model, &wnet, &judge, cfg, k, &mut opt_theta, &mut opt_phi, &mut rng,
            )?;
            sum_lt += rec.loss_theta as f64;
            sum_lp += rec.loss_phi as f64;
            sum_wc += rec.mean_wc;
            n_iter += 1;
            iter += 1;
        }
        let metric_pairs: &[ImagePair] = if dataset.train.len() > TRAIN_METRIC_PAIRS {
            &dataset.train[..TRAIN_METRIC_PAIRS]
        } else {
            &dataset.train
        };
        let (psnr, dist) = mean_scores(&model, metric_pairs, &judge, cfg.scale)?;
        history.push(EpochMetrics {
            epoch,
            iter,
            loss_theta: sum_lt / n_iter.max(1) as f64,
            loss_phi: sum_lp / n_iter.max(1) as f64,
            mean_wc: sum_wc / n_iter.max(1) as f64,
            psnr_y: psnr,
            judge_dist: dist,
        });
        let ckpt_path = out_dir.join(format!("ckpt_epoch_{epoch}.bin"));
        save_bundle(
            &ckpt_path,
            cfg,
            &["main"],
            &[&model],
            &wnet,
            &[&opt_theta],
            &opt_phi,
            epoch,
            iter,
            rng.counter(),
            &history,
        )?;
        checkpoints.push(ckpt_path);
        write_metrics_csv(&metrics_path, &history)?;
    }

    Ok(TrainOutcome {
        model,
        weight: wnet,
        history,
        checkpoints,
        metrics_path,
    })
}

pub const FOUR_LOSS_LEGS: [&str; 4] = ["l1+tlw", "mse+tlw", "l1", "mse"];

#[derive(Clone, Debug, Serialize)]
pub struct LegResult {
    pub leg: String,
    pub psnr_y: f64,
    pub judge_dist: f64,
}

pub struct FourLossOutcome {
    pub table: Vec<LegResult>,
    pub models: Vec<SrModel>,
    pub weight: WeightModel,
    pub table_path: PathBuf,
}

/// Train four SR models in parallel legs — weighted L1, weighted MSE,
/// plain L1, plain MSE — from identical initial parameters on identical
/// batches, with one shared weighting network updated once per iteration
/// (driven by the weighted-L1 leg's estimate). Emits a per-leg table of
/// validation PSNR-Y and judge distance.
pub fn four_loss_run(dataset: &Dataset, cfg: &TrainConfig, out_dir: &Path) -> Result<FourLossOutcome> {
    cfg.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::InvalidArgument("dataset has no training pairs".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let judge = Judge::build(&cfg.judge)?;
    let (models, wnet) = init_models(cfg.seed, cfg.sr_depth, cfg.sr_width, true)?;
    let mut opt_thetas: Vec<Adam> = models
        .iter()
        .map(|m| Adam::new(&m.parameters(), cfg.lr_theta))
        .collect();
    let mut opt_phi = Adam::new(&wnet.parameters(), cfg.lr_phi);
    let mut rng = seed_all(cfg.seed).derive(TAG_SAMPLE);
    let mut iter = 0u64;

    for epoch in 1..=cfg.epochs {
        let k = cfg.k_schedule.value(epoch - 1) as f32;
        let order = epoch_order(cfg.seed, epoch, dataset.train.len());
        for chunk in order.chunks(cfg.batch_size) {
            let batch = make_batch(&dataset.train, chunk)?;
            four_loss_iteration(
                &batch,
                &models,
                &wnet,
                &judge,
                cfg,
                k,
                &mut opt_thetas,
                &mut opt_phi,
                &mut rng,
            )?;
            iter += 1;
        }
    }

    let eval_pairs: &[ImagePair] = if dataset.val.is_empty() {
        &dataset.train
    } else {
        &dataset.val
    };
    let mut table = Vec::with_capacity(4);
    for (leg, model) in FOUR_LOSS_LEGS.iter().zip(&models) {
        let (psnr_y, judge_dist) = mean_scores(model, eval_pairs, &judge, cfg.scale)?;
        table.push(LegResult {
            leg: leg.to_string(),
            psnr_y,
            judge_dist,
        });
    }

    let table_path = out_dir.join("compare.csv");
    let mut csv = String::from("loss,psnr_y,judge_dist\n");
    for row in &table {
        csv.push_str(&format!(
            "{},{:.6},{:.8}\n",
            row.leg, row.psnr_y, row.judge_dist
        ));
    }
    std::fs::write(&table_path, csv).map_err(|e| Error::io(&table_path, e))?;

    let model_refs: Vec<&SrModel> = models.iter().collect();
    let opt_refs: Vec<&Adam> = opt_thetas.iter().collect();
    save_bundle(
        &out_dir.join("ckpt_final.bin"),
        cfg,
        &FOUR_LOSS_LEGS,
        &model_refs,
        &wnet,
        &opt_refs,
        &opt_phi,
        cfg.epochs,
        iter,
        rng.counter(),
        &[],
    )?;

    Ok(FourLossOutcome {
        table,
        models,
        weight: wnet,
        table_path,
    })
}

/// One harness iteration over all four legs on a shared batch.
#[allow(clippy::too_many_arguments)]
fn four_loss_iteration(
    batch: &Batch,
    models: &[SrModel],
    wnet: &WeightModel,
    judge: &Judge,
    cfg: &TrainConfig,
    k: f32,
    opt_thetas: &mut [Adam],
    opt_phi: &mut Adam,
    rng: &mut RngState,
) -> Result<()> {
    // weighting update, driven by the weighted-L1 leg's estimate
    let x_hat_0 = models[0].forward(&batch.lr_up)?;
    ensure_finite(&x_hat_0, "sr_output")?;
    let x_hat_0_const = x_hat_0.detach();
    {
        let mean_map = wnet.forward(&batch.hr, &x_hat_0_const, k)?;
        let drawn = sample_relaxed_bernoulli(&mean_map.values, cfg.temperature, rng)?;
        let w = WeightMap::new(drawn, k)?;
        let crit = weight_criterion(&batch.hr, &x_hat_0_const, &w, judge, cfg.epsilon_wc)?;
        let lphi = loss_phi(&crit, cfg.direction);
        ensure_finite(&lphi, "loss_phi")?;
        lphi.backward()?;
        opt_phi.step(&wnet.parameters(), Some(cfg.grad_clip))?;
        wnet.zero_grad();
    }

    // weighted legs
    for (li, kind) in [(0usize, BaseLossKind::L1), (1usize, BaseLossKind::Mse)] {
        let x_hat = if li == 0 {
            x_hat_0.clone()
        } else {
            models[li].forward(&batch.lr_up)?
        };
        ensure_finite(&x_hat, "sr_output")?;
        let x_hat_const = x_hat.detach();
        let mean_map = wnet.forward(&batch.hr, &x_hat_const, k)?;
        let mut samples = Vec::with_capacity(cfg.samples);
        let mut wcs = Vec::with_capacity(cfg.samples);
        for _ in 0..cfg.samples {
            let drawn = sample_relaxed_bernoulli(&mean_map.values, cfg.temperature, rng)?;
            let w = WeightMap::new(drawn.detach(), k)?;
            let crit = weight_criterion(&batch.hr, &x_hat_const, &w, judge, cfg.epsilon_wc)?;
            samples.push(w);
            wcs.push(crit);
        }
        let ltheta = loss_theta(&batch.hr, &x_hat, &samples, &wcs, kind, cfg.direction)?;
        ensure_finite(&ltheta, "loss_theta")?;
        ltheta.backward()?;
        opt_thetas[li].step(&models[li].parameters(), Some(cfg.grad_clip))?;
        models[li].zero_grad();
    }

    // plain legs
    plain_iteration(batch, &models[2], BaseLossKind::L1, &mut opt_thetas[2], cfg.grad_clip)?;
    plain_iteration(batch, &models[3], BaseLossKind::Mse, &mut opt_thetas[3], cfg.grad_clip)?;
    Ok(())
}
