//! The FixedSum activation: per-image sums pinned to k*N with every
//! element kept inside [0, 1].

use tlw_sr::weighting::fixedsum;
use tlw_sr::Tensor;

fn show(label: &str, values: &[f32], k: f32) -> tlw_sr::Result<()> {
    let t = Tensor::from_vec((1, 1, 1, values.len()), values.to_vec())?;
    let out = fixedsum(&t, k)?;
    let sum: f32 = out.values().iter().sum();
    println!(
        "{label}: {values:?} --k={k}--> {:?} (sum {sum:.4}, target {:.4})",
        out.to_vec(),
        k * values.len() as f32
    );
    Ok(())
}

fn main() -> tlw_sr::Result<()> {
    // raising branch: the sum is below k*N
    show("raise", &[0.2, 0.2], 0.5)?;
    // scaling branch: the sum is above k*N
    show("scale", &[0.8, 0.6], 0.3)?;
    // already on target
    show("fixed", &[0.5, 0.5], 0.5)?;

    // a larger random map
    let vals = tlw_sr::stochastic::seed_all(1).uniform_vec(16);
    show("random", &vals, 0.35)?;
    Ok(())
}
