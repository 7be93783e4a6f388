use tlw_sr::config::TrainConfig;
use tlw_sr::data::synthetic::toy_pairs;
use tlw_sr::eval::psnr_y;
use tlw_sr::judge::{Judge, JudgeSpec};
use tlw_sr::models::init_models;
use tlw_sr::optim::Adam;
use tlw_sr::trainer::{epoch_order, make_batch, plain_iteration, Dataset};
use tlw_sr::weighting::BaseLossKind;

fn main() {
    let lr: f32 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let batch: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(2);
    let cfg = TrainConfig {
        batch_size: batch,
        sr_depth: 4,
        sr_width: 16,
        lr_theta: lr,
        ..TrainConfig::default()
    };
    let (train, val) = toy_pairs(200, 32, 2, 0, 20).unwrap();
    let dataset = Dataset { train, val };
    let judge = Judge::build(&JudgeSpec::PixelMse).unwrap();
    let (models, _) = init_models(0, cfg.sr_depth, cfg.sr_width, false).unwrap();
    let model = &models[0];
    let mut opt = Adam::new(&model.parameters(), cfg.lr_theta);

    let baseline: f64 = dataset.val.iter().map(|p| psnr_y(&p.hr, &p.lr_up, 2).unwrap()).sum::<f64>()
        / dataset.val.len() as f64;
    println!("baseline {baseline:.4} dB (lr {lr}, batch {batch})");

    let mut iter = 0;
    'outer: for epoch in 1.. {
        let order = epoch_order(cfg.seed, epoch, dataset.train.len());
        for chunk in order.chunks(cfg.batch_size) {
            let b = make_batch(&dataset.train, chunk).unwrap();
            let kind = if std::env::args().nth(3).as_deref() == Some("mse") { BaseLossKind::Mse } else { BaseLossKind::L1 };
            plain_iteration(&b, model, kind, &mut opt, cfg.grad_clip).unwrap();
            iter += 1;
            if iter % 100 == 0 {
                let (p, _) = tlw_sr::eval::mean_scores(model, &dataset.val, &judge, 2).unwrap();
                println!("iter {iter}: val {p:.4} dB (gain {:+.4})", p - baseline);
            }
            if iter >= 500 {
                break 'outer;
            }
        }
    }
}
