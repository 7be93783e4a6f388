use std::time::Instant;
use tlw_sr::stochastic::seed_all;
use tlw_sr::Tensor;

fn bench(label: &str, b: usize, cin: usize, cout: usize, hw: usize, reps: usize, grad: bool) {
    let mut rng = seed_all(0);
    let x = if grad {
        Tensor::param((b, cin, hw, hw), rng.uniform_vec(b * cin * hw * hw)).unwrap()
    } else {
        Tensor::from_vec((b, cin, hw, hw), rng.uniform_vec(b * cin * hw * hw)).unwrap()
    };
    let k = Tensor::param((cout, cin, 3, 3), rng.uniform_vec(cout * cin * 9)).unwrap();
    let bias = Tensor::param((1, cout, 1, 1), vec![0.0; cout]).unwrap();
    let t0 = Instant::now();
    for _ in 0..reps {
        let out = x.conv2d(&k, &bias, 1).unwrap();
        if grad {
            out.sum().backward().unwrap();
            x.zero_grad();
            k.zero_grad();
            bias.zero_grad();
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    let macs = (b * cout * cin * 9 * hw * hw * reps) as f64 * if grad { 3.0 } else { 1.0 };
    println!(
        "{label}: {:.1} ms/call, {:.2} GMAC/s",
        dt * 1e3 / reps as f64,
        macs / dt / 1e9
    );
}

fn main() {
    bench("wnet fwd  (4,32->32,32x32)", 4, 32, 32, 32, 50, false);
    bench("wnet f+b  (4,32->32,32x32)", 4, 32, 32, 32, 20, true);
    bench("judge fwd (4,16->32,32x32)", 4, 16, 32, 32, 50, false);
    bench("sr fwd    (4,16->16,32x32)", 4, 16, 16, 32, 50, false);
}
