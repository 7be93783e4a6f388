//! Train the SR and weighting networks jointly on an in-memory toy corpus
//! and print the per-epoch metrics.

use tlw_sr::config::TrainConfig;
use tlw_sr::data::synthetic::toy_pairs;
use tlw_sr::judge::JudgeSpec;
use tlw_sr::trainer::{train_run, Dataset};

fn main() -> tlw_sr::Result<()> {
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        samples: 2,
        sr_depth: 4,
        sr_width: 16,
        lr_theta: 1e-3,
        lr_phi: 1e-4,
        judge: JudgeSpec::FixedFeature {
            widths: vec![8, 16, 32],
            kernel: 3,
            seed: 0,
        },
        ..TrainConfig::default()
    };
    let (train, val) = toy_pairs(48, 32, cfg.scale, cfg.seed, 8)?;
    let dataset = Dataset { train, val };

    let out = std::env::temp_dir().join("tlw_sr_train_toy");
    let outcome = train_run(&dataset, &cfg, &out, None)?;

    println!("epoch  loss_theta  loss_phi   mean_wc   psnr_y");
    for row in &outcome.history {
        println!(
            "{:>5}  {:>10.5}  {:>8.5}  {:>8.5}  {:>7.3}",
            row.epoch, row.loss_theta, row.loss_phi, row.mean_wc, row.psnr_y
        );
    }
    println!("checkpoints in {}", out.display());
    Ok(())
}
