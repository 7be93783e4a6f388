//! Judge distances: how the pixel-MSE judge and the fixed-feature judge
//! score identical, noisy, and blurred versions of toy images.

use tlw_sr::data::bicubic_resize;
use tlw_sr::data::synthetic::generate_toy_images;
use tlw_sr::judge::{Judge, JudgeSpec};
use tlw_sr::stochastic::seed_all;
use tlw_sr::Tensor;

fn main() -> tlw_sr::Result<()> {
    let img = generate_toy_images(3, 32, 4).remove(2);
    let shape = img.shape();

    let noise = seed_all(9).uniform_vec(shape.numel());
    let noisy_vals: Vec<f32> = img
        .values()
        .iter()
        .zip(&noise)
        .map(|(&v, &u)| (v + 0.08 * (u - 0.5)).clamp(0.0, 1.0))
        .collect();
    let noisy = Tensor::from_vec(shape, noisy_vals)?;
    let blurred = bicubic_resize(&bicubic_resize(&img, 16, 16), 32, 32);

    let judges = [
        ("pixel-mse", Judge::build(&JudgeSpec::PixelMse)?),
        ("fixed-feature", Judge::build(&JudgeSpec::default())?),
    ];
    println!("judge          identical   noisy      blurred");
    for (name, judge) in &judges {
        println!(
            "{name:<13}  {:>9.6}  {:>9.6}  {:>9.6}",
            judge.distance(&img, &img)?.value(),
            judge.distance(&img, &noisy)?.value(),
            judge.distance(&img, &blurred)?.value(),
        );
    }
    Ok(())
}
