use tlw_sr::config::TrainConfig;
use tlw_sr::data::synthetic::toy_pairs;
use tlw_sr::judge::{Judge, JudgeSpec};
use tlw_sr::models::init_models;
use tlw_sr::optim::Adam;
use tlw_sr::stochastic::{sample_relaxed_bernoulli, seed_all};
use tlw_sr::trainer::{make_batch, Dataset};
use tlw_sr::weighting::{loss_phi, weight_criterion, Direction, WeightMap, WC_EPSILON};

fn main() {
    let cfg = TrainConfig {
        sr_depth: 4,
        sr_width: 16,
        judge: JudgeSpec::FixedFeature { widths: vec![8, 16, 32], kernel: 3, seed: 0 },
        ..TrainConfig::default()
    };
    let (train, _) = toy_pairs(16, 32, 2, 0, 0).unwrap();
    let dataset = Dataset { train, val: vec![] };
    let judge = Judge::build(&cfg.judge).unwrap();
    let (models, wnet) = init_models(0, cfg.sr_depth, cfg.sr_width, false).unwrap();
    let model = &models[0];
    let mut opt_phi = Adam::new(&wnet.parameters(), 1e-3);
    let mut rng = seed_all(0);
    let batch = make_batch(&dataset.train, &[0, 1, 2, 3]).unwrap();
    let x_hat = model.forward(&batch.lr_up).unwrap().detach();
    let k = 0.3f32;

    for it in 0..200 {
        let mean_map = wnet.forward(&batch.hr, &x_hat, k).unwrap();
        let drawn = sample_relaxed_bernoulli(&mean_map.values, cfg.temperature, &mut rng).unwrap();
        let w = WeightMap::new(drawn, k).unwrap();
        let crit = weight_criterion(&batch.hr, &x_hat, &w, &judge, WC_EPSILON).unwrap();
        let lphi = loss_phi(&crit, Direction::Inverted);
        lphi.backward().unwrap();
        // grad norm diagnostic
        let gnorm: f64 = wnet
            .parameters()
            .iter()
            .map(|p| p.grad().map(|g| g.iter().map(|&v| (v as f64).powi(2)).sum::<f64>()).unwrap_or(0.0))
            .sum::<f64>()
            .sqrt();
        opt_phi.step(&wnet.parameters(), Some(1.0)).unwrap();
        wnet.zero_grad();
        if it % 20 == 0 {
            // evaluate wc on the MEAN map (no sampling noise)
            let mm = wnet.forward(&batch.hr, &x_hat, k).unwrap();
            let mc = weight_criterion(&batch.hr, &x_hat, &mm, &judge, WC_EPSILON).unwrap();
            println!(
                "it {it:>3}  sampled wc {:.4}  mean-map wc {:.4}  loss_phi {:+.4}  gnorm {gnorm:.3e}",
                crit.value(),
                mc.value(),
                lphi.scalar_value()
            );
        }
    }
}
