//! The weight criterion: maps that spend weight on visibly wrong pixels
//! score below one, the balanced map scores exactly one, and inverted
//! maps score the reciprocal.

use tlw_sr::data::synthetic::generate_toy_images;
use tlw_sr::data::{bicubic_resize, ImagePair};
use tlw_sr::judge::{Judge, JudgeSpec};
use tlw_sr::tensor::{Shape, Tensor};
use tlw_sr::weighting::{weight_criterion, WeightMap, WC_EPSILON};

fn main() -> tlw_sr::Result<()> {
    let hr = generate_toy_images(1, 32, 8).remove(0);
    let pair = ImagePair::from_hr(&hr, 2)?;
    let estimate = pair.lr_up.clone();
    let judge = Judge::build(&JudgeSpec::default())?;

    // where does the bicubic estimate actually err?
    let err_map = hr.sub(&estimate)?.abs().channel_sum();
    let max_err = err_map.values().iter().fold(0.0f32, |a, &b| a.max(b));
    let shape = Shape::new(1, 1, 32, 32);

    let mk = |vals: Vec<f32>| WeightMap::new(Tensor::from_vec(shape, vals).unwrap(), 0.5).unwrap();
    let on_errors = mk(err_map.values().iter().map(|&v| v / max_err).collect());
    let off_errors = on_errors.complement()?;
    let balanced = mk(vec![0.5; 32 * 32]);
    let blurred_est = bicubic_resize(&bicubic_resize(&hr, 8, 8), 32, 32);

    println!("weight map        WC (bicubic est)  WC (blurrier est)");
    for (name, map) in [
        ("on the errors", &on_errors),
        ("off the errors", &off_errors),
        ("balanced 0.5", &balanced),
    ] {
        let a = weight_criterion(&hr, &estimate, map, &judge, WC_EPSILON)?;
        let b = weight_criterion(&hr, &blurred_est, map, &judge, WC_EPSILON)?;
        println!("{name:<16}  {:>14.6}  {:>15.6}", a.value(), b.value());
    }
    Ok(())
}
