//! Test support: central finite-difference oracles for gradient checks.
//!
//! These helpers are independent of the backward rules they validate; they
//! only re-run a caller-supplied forward closure at perturbed inputs.
//!
//! Errors are measured relative to the largest gradient magnitude of the
//! tensor under test: forwards are f32, so per-coordinate relative
//! comparison is meaningless where a coordinate happens to be near zero.

/// Central finite-difference gradient of `f` at `x0` with step `h`.
pub fn finite_difference<F>(mut f: F, x0: &[f32], h: f32) -> Vec<f64>
where
    F: FnMut(&[f32]) -> f64,
{
    let mut grad = Vec::with_capacity(x0.len());
    let mut x = x0.to_vec();
    for i in 0..x0.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        grad.push((fp - fm) / (2.0 * h as f64));
    }
    grad
}

/// As `finite_difference`, but only at the given coordinates; other entries
/// are filled with the analytic placeholder NaN and must not be compared.
pub fn finite_difference_at<F>(mut f: F, x0: &[f32], h: f32, idx: &[usize]) -> Vec<f64>
where
    F: FnMut(&[f32]) -> f64,
{
    let mut grad = vec![f64::NAN; x0.len()];
    let mut x = x0.to_vec();
    for &i in idx {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h as f64);
    }
    grad
}

/// f64 dot product of two f32 buffers; used to assemble scalar test losses
/// without a final f32 rounding step.
pub fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// max_i |analytic_i - fd_i| / scale, with scale the largest magnitude seen
/// in either gradient (floored to avoid 0/0 on all-zero gradients).
pub fn max_rel_err(analytic: &[f32], fd: &[f64], floor: f64) -> f64 {
    let idx: Vec<usize> = (0..analytic.len()).collect();
    max_rel_err_at(analytic, fd, &idx, floor)
}

/// As `max_rel_err`, restricted to the given coordinates.
pub fn max_rel_err_at(analytic: &[f32], fd: &[f64], idx: &[usize], floor: f64) -> f64 {
    let scale = idx
        .iter()
        .map(|&i| (analytic[i].abs() as f64).max(fd[i].abs()))
        .fold(floor, f64::max);
    idx.iter()
        .map(|&i| (analytic[i] as f64 - fd[i]).abs())
        .fold(0.0, f64::max)
        / scale
}
