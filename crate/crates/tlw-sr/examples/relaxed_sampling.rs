//! Relaxed Bernoulli weight sampling: draws concentrate on {0, 1} as the
//! temperature drops while the mean tracks the probability map.

use tlw_sr::stochastic::{sample_relaxed_bernoulli, seed_all};
use tlw_sr::Tensor;

fn main() -> tlw_sr::Result<()> {
    let n = 50_000;
    let p0 = 0.7f32;
    let p = Tensor::full((1, 1, 1, n), p0);

    println!("p = {p0}, {n} draws per temperature");
    println!("tau     mean     P(w>0.5)  near 0/1");
    for tau in [2.0f32, 1.0, 0.5, 0.1, 0.05] {
        let mut rng = seed_all(42);
        let w = sample_relaxed_bernoulli(&p, tau, &mut rng)?;
        let vals = w.to_vec();
        let mean: f64 = vals.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let hard = vals.iter().filter(|&&v| v > 0.5).count() as f64 / n as f64;
        let corner = vals.iter().filter(|&&v| v <= 0.05 || v >= 0.95).count() as f64 / n as f64;
        println!("{tau:<6}  {mean:.4}   {hard:.4}    {corner:.4}");
    }
    Ok(())
}
