use tlw_sr::config::TrainConfig;
use tlw_sr::data::synthetic::toy_pairs;
use tlw_sr::judge::JudgeSpec;
use tlw_sr::trainer::{train_run, Dataset};

fn main() {
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        samples: 4,
        sr_depth: 4,
        sr_width: 16,
        lr_theta: 1e-3,
        lr_phi: 1e-3,
        judge: JudgeSpec::FixedFeature { widths: vec![8, 16, 32], kernel: 3, seed: 0 },
        ..TrainConfig::default()
    };
    let (train, val) = toy_pairs(200, 32, 2, 0, 20).unwrap();
    let dataset = Dataset { train, val };
    let t0 = std::time::Instant::now();
    let out = std::env::temp_dir().join("tlw_sr_diag_time");
    let outcome = train_run(&dataset, &cfg, &out, None).unwrap();
    let iters = outcome.history.last().unwrap().iter;
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "{iters} iterations in {dt:.1}s  ->  {:.3} s/iter; 500 iters ~ {:.1}s",
        dt / iters as f64,
        500.0 * dt / iters as f64
    );
    for row in &outcome.history {
        println!("epoch {} psnr {:.3} wc {:.4}", row.epoch, row.psnr_y, row.mean_wc);
    }
}
