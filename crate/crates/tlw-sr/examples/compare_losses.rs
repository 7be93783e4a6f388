//! Four losses in parallel from identical initial weights — weighted L1,
//! weighted MSE, plain L1, plain MSE — compared on held-out toy images.

use tlw_sr::config::TrainConfig;
use tlw_sr::data::synthetic::toy_pairs;
use tlw_sr::judge::JudgeSpec;
use tlw_sr::trainer::{four_loss_run, Dataset};

fn main() -> tlw_sr::Result<()> {
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        samples: 2,
        sr_depth: 3,
        sr_width: 8,
        lr_theta: 1e-3,
        four_loss: true,
        judge: JudgeSpec::FixedFeature {
            widths: vec![8, 16],
            kernel: 3,
            seed: 0,
        },
        ..TrainConfig::default()
    };
    let (train, val) = toy_pairs(32, 32, cfg.scale, 5, 8)?;
    let dataset = Dataset { train, val };

    let out = std::env::temp_dir().join("tlw_sr_compare");
    let outcome = four_loss_run(&dataset, &cfg, &out)?;

    println!("loss        psnr_y      judge_dist");
    for row in &outcome.table {
        println!("{:<10}  {:>9.4}  {:>12.8}", row.leg, row.psnr_y, row.judge_dist);
    }
    println!("table at {}", outcome.table_path.display());
    Ok(())
}
