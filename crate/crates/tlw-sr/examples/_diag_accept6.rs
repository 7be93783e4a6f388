use tlw_sr::config::TrainConfig;
use tlw_sr::data::synthetic::toy_pairs;
use tlw_sr::data::ImagePair;
use tlw_sr::eval::psnr_y;
use tlw_sr::judge::{Judge, JudgeSpec};
use tlw_sr::models::init_models;
use tlw_sr::optim::Adam;
use tlw_sr::stochastic::seed_all;
use tlw_sr::trainer::{em_iteration, epoch_order, make_batch, Dataset};

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let cfg = TrainConfig {
        seed,
        epochs: 100,
        batch_size: 4,
        samples: 4,
        sr_depth: 4,
        sr_width: 16,
        lr_theta: 1e-3,
        lr_phi: 1e-3,
        base_loss: tlw_sr::weighting::BaseLossKind::Mse,
        judge: JudgeSpec::FixedFeature { widths: vec![8, 16], kernel: 3, seed: 0 },
        ..TrainConfig::default()
    };
    let (train, val) = toy_pairs(200, 32, 2, seed, 20).unwrap();
    let dataset = Dataset { train, val };
    let judge = Judge::build(&cfg.judge).unwrap();
    let (models, wnet) = init_models(cfg.seed, cfg.sr_depth, cfg.sr_width, false).unwrap();
    let model = &models[0];
    let mut opt_theta = Adam::new(&model.parameters(), cfg.lr_theta);
    let mut opt_phi = Adam::new(&wnet.parameters(), cfg.lr_phi);
    let mut rng = seed_all(cfg.seed).derive(0x73616d70);

    let baseline: f64 = dataset
        .val
        .iter()
        .map(|p| psnr_y(&p.hr, &p.lr_up, 2).unwrap())
        .sum::<f64>()
        / dataset.val.len() as f64;

    let t0 = std::time::Instant::now();
    let mut wcs = Vec::with_capacity(500);
    let mut iter = 0usize;
    'outer: for epoch in 1..=cfg.epochs {
        let k = cfg.k_schedule.value(epoch - 1) as f32;
        let order = epoch_order(cfg.seed, epoch, dataset.train.len());
        for chunk in order.chunks(cfg.batch_size) {
            let batch = make_batch(&dataset.train, chunk).unwrap();
            let rec = em_iteration(
                &batch, model, &wnet, &judge, &cfg, k, &mut opt_theta, &mut opt_phi, &mut rng,
            )
            .unwrap();
            wcs.push(rec.mean_wc);
            iter += 1;
            if iter % 100 == 0 {
                println!("iter {iter}: wc {:.4} ({:.0}s)", rec.mean_wc, t0.elapsed().as_secs_f64());
            }
            if iter >= 500 {
                break 'outer;
            }
        }
    }

    let final_psnr: f64 = {
        let items: Vec<(String, ImagePair)> = dataset
            .val
            .iter()
            .map(|p| (String::new(), ImagePair { hr: p.hr.clone(), lr: p.lr.clone(), lr_up: p.lr_up.clone(), scale: p.scale }))
            .collect();
        let report = tlw_sr::eval::eval_pairs(model, &items, &judge, 2, "".into(), 2, "".into()).unwrap();
        report.mean_psnr_y
    };
    let early: f64 = wcs[..50].iter().sum::<f64>() / 50.0;
    let late: f64 = wcs[450..500].iter().sum::<f64>() / 50.0;
    println!(
        "seed {seed}: baseline {baseline:.4} dB, final {final_psnr:.4} dB (gain {:+.4}); wc early {early:.4} late {late:.4}; {:.0}s",
        final_psnr - baseline,
        t0.elapsed().as_secs_f64()
    );
}
