//! Train a few epochs, then render the weighting network's maps for the
//! same images at each epoch checkpoint (the weight-epoch picture).

use tlw_sr::config::TrainConfig;
use tlw_sr::data::synthetic::toy_pairs;
use tlw_sr::data::ImagePair;
use tlw_sr::eval::export_weight_maps;
use tlw_sr::judge::JudgeSpec;
use tlw_sr::trainer::{load_bundle, train_run, Dataset};

fn main() -> tlw_sr::Result<()> {
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        samples: 2,
        sr_depth: 3,
        sr_width: 8,
        lr_phi: 1e-3,
        judge: JudgeSpec::FixedFeature {
            widths: vec![8, 16],
            kernel: 3,
            seed: 0,
        },
        ..TrainConfig::default()
    };
    let (train, val) = toy_pairs(32, 32, cfg.scale, 7, 4)?;
    let items: Vec<(String, ImagePair)> = val
        .iter()
        .take(2)
        .enumerate()
        .map(|(i, p)| {
            (
                format!("toy_{i}"),
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

    let out = std::env::temp_dir().join("tlw_sr_weight_maps");
    let outcome = train_run(&dataset, &cfg, &out, None)?;

    let maps_dir = out.join("maps");
    for ckpt in &outcome.checkpoints {
        let bundle = load_bundle(ckpt)?;
        let k = bundle.config.k_schedule.value(bundle.epoch.saturating_sub(1)) as f32;
        let written = export_weight_maps(
            &bundle.weight,
            bundle.models.first(),
            &items,
            k,
            bundle.epoch,
            &maps_dir,
        )?;
        for path in written {
            println!("{}", path.display());
        }
    }
    Ok(())
}
