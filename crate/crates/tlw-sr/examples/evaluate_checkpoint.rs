//! Train briefly, then evaluate the checkpoint against the bicubic
//! baseline on held-out toy images.

use tlw_sr::config::TrainConfig;
use tlw_sr::data::synthetic::toy_pairs;
use tlw_sr::data::ImagePair;
use tlw_sr::eval::{eval_pairs, psnr_y};
use tlw_sr::judge::{Judge, JudgeSpec};
use tlw_sr::trainer::{train_run, Dataset};

fn main() -> tlw_sr::Result<()> {
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        samples: 2,
        sr_depth: 4,
        sr_width: 16,
        lr_theta: 1e-3,
        judge: JudgeSpec::FixedFeature {
            widths: vec![8, 16],
            kernel: 3,
            seed: 0,
        },
        ..TrainConfig::default()
    };
    let (train, val) = toy_pairs(40, 32, cfg.scale, 3, 8)?;
    let val_items: Vec<(String, ImagePair)> = val
        .iter()
        .enumerate()
        .map(|(i, p)| {
            (
                format!("toy_{i:02}"),
                ImagePair {
                    hr: p.hr.clone(),
                    lr: p.lr.clone(),
                    lr_up: p.lr_up.clone(),
                    scale: p.scale,
                },
            )
        })
        .collect();
    let dataset = Dataset { train, val };

    let out = std::env::temp_dir().join("tlw_sr_evaluate");
    let outcome = train_run(&dataset, &cfg, &out, None)?;

    let judge = Judge::build(&cfg.judge)?;
    let report = eval_pairs(
        &outcome.model,
        &val_items,
        &judge,
        cfg.scale,
        "toy-val".into(),
        cfg.scale,
        "in-memory".into(),
    )?;
    let baseline: f64 = val_items
        .iter()
        .map(|(_, p)| psnr_y(&p.hr, &p.lr_up, cfg.scale).unwrap())
        .sum::<f64>()
        / val_items.len() as f64;

    println!("image        psnr_y     judge_dist");
    for row in &report.rows {
        println!("{:<10}  {:>8.4}  {:>12.8}", row.name, row.psnr_y, row.judge_dist);
    }
    println!("mean model PSNR-Y   : {:.4} dB", report.mean_psnr_y);
    println!("mean bicubic PSNR-Y : {baseline:.4} dB");
    report.write(&out)?;
    println!("report written to {}", out.display());
    Ok(())
}
