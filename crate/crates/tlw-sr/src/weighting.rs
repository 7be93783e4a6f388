//! Loss-weighting mathematics: the FixedSum activation, the weight
//! criterion, the posterior mapping of criterion values, weighted base
//! norms, and the two training losses.
//!
//! A weight map scores per-pixel importance. The criterion compares a map
//! `w` by blending the reference `x` and the estimate `x_hat` two ways and
//! taking the ratio of judge distances:
//!
//! ```text
//! x_w     = (1 - w) .* x_hat + w .* x
//! x_{1-w} = w .* x_hat + (1 - w) .* x
//! wc      = (D(x_w, x) + eps) / (D(x_{1-w}, x) + eps)
//! ```
//!
//! A map that puts weight on perceptually important error pixels pulls
//! `x_w` toward the reference and drives `wc` below one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::judge::Judge;
use crate::tensor::{logsumexp, Tensor};

/// Offset added to both judge distances in the criterion ratio; prevents
/// 0/0 when the estimate equals the reference early in training.
pub const WC_EPSILON: f32 = 1e-6;

/// Residual offset in the MSE weight modification w / (|x - x_hat| + 0.1).
const MSE_RESIDUAL_OFFSET: f32 = 0.1;

/// Which base norm enters the likelihood exponent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseLossKind {
    #[default]
    L1,
    Mse,
}

/// How a criterion value maps to the posterior coefficient m(wc).
///
/// `Literal` uses m = wc (the training algorithm as printed); `Inverted`
/// uses m = 1/wc, matching the semantics that better maps score lower.
/// Inverted is the default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Literal,
    #[default]
    Inverted,
}

/// Per-pixel loss weights: a (batch, 1, H, W) tensor with values in [0, 1],
/// broadcast over the color channels of the image it weights. Maps produced
/// by FixedSum additionally sum to k*N per image; sampled maps inherit `k`
/// from the mean map they were drawn from.
#[derive(Clone)]
pub struct WeightMap {
    pub values: Tensor,
    pub k: f32,
}

impl WeightMap {
    pub fn new(values: Tensor, k: f32) -> Result<WeightMap> {
        let shape = values.shape();
        if shape.c != 1 {
            return Err(Error::shape(
                "weight_map",
                format!("expected a single channel, got shape {shape}"),
            ));
        }
        if !(k > 0.0 && k < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "weight_map: k must lie in (0, 1), got {k}"
            )));
        }
        if values.values().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument(
                "weight_map: values must lie in [0, 1]".into(),
            ));
        }
        Ok(WeightMap { values, k })
    }

    /// Pixel count per image.
    pub fn pixel_count(&self) -> usize {
        self.values.shape().per_image()
    }

    /// Largest per-image deviation |sum(w) - k*N| across the batch.
    pub fn fixed_sum_error(&self) -> f64 {
        let shape = self.values.shape();
        let n = shape.per_image();
        let target = self.k as f64 * n as f64;
        let v = self.values.values();
        (0..shape.b)
            .map(|b| {
                let s: f64 = v[b * n..][..n].iter().map(|&x| x as f64).sum();
                (s - target).abs()
            })
            .fold(0.0, f64::max)
    }

    /// The complementary map 1 - w.
    pub fn complement(&self) -> Result<WeightMap> {
        WeightMap::new(self.values.neg().add_scalar(1.0), 1.0 - self.k)
    }

    pub fn detach(&self) -> WeightMap {
        WeightMap {
            values: self.values.detach(),
            k: self.k,
        }
    }
}

/// Rescale a [0, 1] tensor so every batch item sums to `k * N` while each
/// element stays in [0, 1]; differentiable with the full per-image
/// Jacobian.
pub fn fixedsum(x: &Tensor, k: f32) -> Result<Tensor> {
    x.fixedsum(k)
}

/// A computed weight criterion: the ratio value together with the raw
/// distances and a graph tensor of log(wc) for the weighting-network loss.
pub struct CriterionValue {
    /// (numerator + eps) / (denominator + eps), in f64.
    wc: f64,
    pub numerator: f32,
    pub denominator: f32,
    pub epsilon: f32,
    /// log(wc) as a scalar graph tensor, differentiable w.r.t. the weight
    /// map the criterion was computed from.
    pub log_wc: Tensor,
}

impl CriterionValue {
    pub fn new(numerator: f32, denominator: f32, epsilon: f32, log_wc: Tensor) -> CriterionValue {
        let wc = (numerator as f64 + epsilon as f64) / (denominator as f64 + epsilon as f64);
        CriterionValue {
            wc,
            numerator,
            denominator,
            epsilon,
            log_wc,
        }
    }

    pub fn value(&self) -> f64 {
        self.wc
    }
}

/// Score a weight map against reference `x` and estimate `x_hat` under the
/// given judge. Differentiable w.r.t. the map (through `log_wc`); pass a
/// detached `x_hat` when the estimate must act as a constant.
pub fn weight_criterion(
    x: &Tensor,
    x_hat: &Tensor,
    w: &WeightMap,
    judge: &Judge,
    epsilon: f32,
) -> Result<CriterionValue> {
    if x.shape() != x_hat.shape() {
        return Err(Error::shape(
            "weight_criterion",
            format!("shapes differ: {} vs {}", x.shape(), x_hat.shape()),
        ));
    }
    let wv = &w.values;
    let one_minus = wv.neg().add_scalar(1.0);
    let x_w = one_minus.mul(x_hat)?.add(&wv.mul(x)?)?;
    let x_1mw = wv.mul(x_hat)?.add(&one_minus.mul(x)?)?;
    let d_num = judge.forward(&x_w, x)?;
    let d_den = judge.forward(&x_1mw, x)?;
    let log_wc = d_num
        .add_scalar(epsilon)
        .log()
        .sub(&d_den.add_scalar(epsilon).log())?;
    Ok(CriterionValue::new(
        d_num.scalar_value(),
        d_den.scalar_value(),
        epsilon,
        log_wc,
    ))
}

/// Posterior coefficient m(wc) used both as a constant in the SR loss and
/// (through its log) in the weighting loss.
pub fn posterior_weight(wc: &CriterionValue, direction: Direction) -> f64 {
    match direction {
        Direction::Literal => wc.value(),
        Direction::Inverted => 1.0 / wc.value(),
    }
}

/// Weighted base norm in mean form.
///
/// L1: mean(w .* |x - x_hat|). MSE: mean(w' .* (x - x_hat)^2) with
/// w' = w / (|x - x_hat| + 0.1) and the residual inside w' detached, so the
/// modification itself adds no gradient path.
pub fn weighted_base_norm(
    x: &Tensor,
    x_hat: &Tensor,
    w: &WeightMap,
    kind: BaseLossKind,
) -> Result<Tensor> {
    let residual = x.sub(x_hat)?;
    match kind {
        BaseLossKind::L1 => Ok(w.values.mul(&residual.abs())?.mean()),
        BaseLossKind::Mse => {
            let inv: Vec<f32> = residual
                .values()
                .iter()
                .map(|&r| 1.0 / (r.abs() + MSE_RESIDUAL_OFFSET))
                .collect();
            let inv = Tensor::from_vec(residual.shape(), inv)?;
            let w_mod = w.values.mul(&inv)?;
            Ok(w_mod.mul(&residual.square())?.mean())
        }
    }
}

/// SR-network loss over `T` weight samples:
///
/// ```text
/// Loss = -logsumexp_i( log m(wc_i) - ||w_i .* (x - x_hat)|| )
/// ```
///
/// algebraically -log sum_i m(wc_i) * exp(-||...||) but underflow-safe.
/// Samples and criterion values are constants here; the gradient reaches
/// the estimate only through the weighted base norms.
pub fn loss_theta(
    x: &Tensor,
    x_hat: &Tensor,
    samples: &[WeightMap],
    wcs: &[CriterionValue],
    kind: BaseLossKind,
    direction: Direction,
) -> Result<Tensor> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "loss_theta: need at least one weight sample".into(),
        ));
    }
    if samples.len() != wcs.len() {
        return Err(Error::InvalidArgument(format!(
            "loss_theta: {} samples but {} criterion values",
            samples.len(),
            wcs.len()
        )));
    }
    for s in samples {
        if s.values.requires_grad() {
            return Err(Error::InvalidArgument(
                "loss_theta: weight samples must be detached (constant coefficients)".into(),
            ));
        }
    }
    let mut terms = Vec::with_capacity(samples.len());
    for (w, wc) in samples.iter().zip(wcs) {
        let m = posterior_weight(wc, direction);
        let norm = weighted_base_norm(x, x_hat, w, kind)?;
        terms.push(norm.neg().add_scalar(m.ln() as f32));
    }
    Ok(logsumexp(&terms)?.neg())
}

/// Weighting-network loss -log m(wc): log(wc) in inverted mode, -log(wc)
/// in literal mode. Differentiable w.r.t. the sampled weight map behind
/// `wc.log_wc`.
pub fn loss_phi(wc: &CriterionValue, direction: Direction) -> Tensor {
    match direction {
        Direction::Literal => wc.log_wc.neg(),
        Direction::Inverted => wc.log_wc.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_difference, max_rel_err};
    use crate::judge::{Judge, JudgeSpec};
    use crate::stochastic::{sample_relaxed_bernoulli_with_noise, seed_all};
    use crate::tensor::Shape;

    fn vec_tensor(vals: &[f32]) -> Tensor {
        Tensor::from_vec((1, 1, 1, vals.len()), vals.to_vec()).unwrap()
    }

    fn random_image(seed: u64, shape: impl Into<Shape>) -> Tensor {
        let shape = shape.into();
        let vals = seed_all(seed).uniform_vec(shape.numel());
        Tensor::from_vec(shape, vals).unwrap()
    }

    /// Weights on a 2^-10 grid so that 1 - w is exact in f32 and the
    /// swapped-blend substitution is bitwise.
    fn dyadic_weights(seed: u64, n: usize) -> Vec<f32> {
        seed_all(seed)
            .uniform_vec(n)
            .into_iter()
            .map(|v| ((v * 1022.0).round() + 1.0) / 1024.0)
            .collect()
    }

    // fixedsum

    #[test]
    fn fixedsum_raises_low_sums() {
        let out = fixedsum(&vec_tensor(&[0.2, 0.2]), 0.5).unwrap();
        let v = out.to_vec();
        assert!((v[0] - 0.5).abs() < 1e-7 && (v[1] - 0.5).abs() < 1e-7, "{v:?}");
        assert!((v[0] as f64 + v[1] as f64 - 1.0).abs() < 1e-7);
    }

    #[test]
    fn fixedsum_scales_high_sums() {
        let out = fixedsum(&vec_tensor(&[0.8, 0.6]), 0.3).unwrap();
        let v = out.to_vec();
        assert!((v[0] - 0.342_857_14).abs() < 1e-6, "{v:?}");
        assert!((v[1] - 0.257_142_86).abs() < 1e-6, "{v:?}");
        assert!((v[0] as f64 + v[1] as f64 - 0.6).abs() < 1e-7);
    }

    #[test]
    fn fixedsum_is_identity_at_target_sum() {
        let x = vec_tensor(&[0.5, 0.5]);
        let out = fixedsum(&x, 0.5).unwrap();
        assert_eq!(out.to_vec(), x.to_vec());
    }

    #[test]
    fn fixedsum_rejects_bad_k() {
        let x = vec_tensor(&[0.5, 0.5]);
        assert!(fixedsum(&x, 0.0).is_err());
        assert!(fixedsum(&x, 1.0).is_err());
        assert!(fixedsum(&x, -0.3).is_err());
    }

    #[test]
    fn fixedsum_sum_and_range_on_random_vectors() {
        let mut rng = seed_all(17);
        for trial in 0..1000 {
            let n = 2 + (rng.uniform_vec(1)[0] * 510.0) as usize;
            let vals = rng.uniform_vec(n);
            let k = 0.1 + 0.8 * rng.uniform_vec(1)[0];
            let out = Tensor::from_vec((1, 1, 1, n), vals).unwrap();
            let out = fixedsum(&out, k).unwrap();
            let sum: f64 = out.values().iter().map(|&v| v as f64).sum();
            let target = k as f64 * n as f64;
            assert!(
                (sum - target).abs() <= 1e-4 * n as f64,
                "trial {trial}: sum {sum} target {target}"
            );
            assert!(out.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn fixedsum_applies_per_image() {
        // batch of two images with different branches
        let mut vals = vec![0.1; 4];
        vals.extend_from_slice(&[0.9; 4]);
        let x = Tensor::from_vec((2, 1, 2, 2), vals).unwrap();
        let out = fixedsum(&x, 0.5).unwrap();
        let v = out.to_vec();
        let s0: f32 = v[..4].iter().sum();
        let s1: f32 = v[4..].iter().sum();
        assert!((s0 - 2.0).abs() < 1e-5 && (s1 - 2.0).abs() < 1e-5);
    }

    /// Independent f64 reference of the activation, for the FD oracle.
    fn fixedsum_ref(x: &[f64], k: f64) -> Vec<f64> {
        let n = x.len() as f64;
        let s: f64 = x.iter().sum();
        if k * n > s {
            let r = (k * n - s) / (n - s);
            x.iter().map(|&v| v + r * (1.0 - v)).collect()
        } else {
            x.iter().map(|&v| v * k * n / s).collect()
        }
    }

    /// Analytic Jacobian straight from the branch formulas.
    fn fixedsum_jacobian_ref(x: &[f64], k: f64) -> Vec<Vec<f64>> {
        let n = x.len() as f64;
        let s: f64 = x.iter().sum();
        let kn = k * n;
        let mut jac = vec![vec![0.0; x.len()]; x.len()];
        for (i, row) in jac.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                let delta = if i == j { 1.0 } else { 0.0 };
                *entry = if kn > s {
                    delta * (n - kn) / (n - s) + (1.0 - x[i]) * (kn - n) / ((n - s) * (n - s))
                } else {
                    delta * kn / s - x[i] * kn / (s * s)
                };
            }
        }
        jac
    }

    #[test]
    fn fixedsum_jacobian_matches_autodiff_and_finite_differences() {
        let mut rng = seed_all(23);
        for trial in 0..40 {
            let n = 5;
            let x32 = rng.uniform_vec(n);
            let k = 0.15 + 0.7 * rng.uniform_vec(1)[0];
            let x64: Vec<f64> = x32.iter().map(|&v| v as f64).collect();
            let s: f64 = x64.iter().sum();
            // keep away from the branch boundary so the FD step stays on
            // one branch
            if (k as f64 * n as f64 - s).abs() < 0.05 {
                continue;
            }
            let jac = fixedsum_jacobian_ref(&x64, k as f64);

            // autodiff: unit upstream vectors probe one Jacobian row each
            for i in 0..n {
                let xt = Tensor::param((1, 1, 1, n), x32.clone()).unwrap();
                let out = fixedsum(&xt, k).unwrap();
                let mut e = vec![0.0f32; n];
                e[i] = 1.0;
                let probe = Tensor::from_vec((1, 1, 1, n), e).unwrap();
                out.mul(&probe).unwrap().sum().backward().unwrap();
                let row = xt.grad().unwrap();
                for j in 0..n {
                    let a = row[j] as f64;
                    let b = jac[i][j];
                    assert!(
                        (a - b).abs() <= 1e-4 * a.abs().max(b.abs()).max(1e-3),
                        "trial {trial} J[{i}][{j}]: autodiff {a} vs analytic {b}"
                    );
                }
            }

            // finite differences on the f64 reference
            for i in 0..n {
                let f = |xv: &[f32]| -> f64 {
                    let x64: Vec<f64> = xv.iter().map(|&v| v as f64).collect();
                    fixedsum_ref(&x64, k as f64)[i]
                };
                let fd = finite_difference(f, &x32, 1e-3);
                for j in 0..n {
                    let b = jac[i][j];
                    assert!(
                        (fd[j] - b).abs() <= 1e-4 * fd[j].abs().max(b.abs()).max(1e-3),
                        "trial {trial} FD J[{i}][{j}]: {} vs {b}",
                        fd[j]
                    );
                }
            }
        }
    }

    // weight criterion

    fn judge() -> Judge {
        Judge::build(&JudgeSpec::default()).unwrap()
    }

    fn map_from(vals: Vec<f32>, shape: Shape, k: f32) -> WeightMap {
        WeightMap::new(Tensor::from_vec(shape, vals).unwrap(), k).unwrap()
    }

    #[test]
    fn balanced_map_scores_exactly_one() {
        let x = random_image(1, (1, 3, 8, 8));
        let x_hat = random_image(2, (1, 3, 8, 8));
        let w = map_from(vec![0.5; 64], Shape::new(1, 1, 8, 8), 0.5);
        let wc = weight_criterion(&x, &x_hat, &w, &judge(), WC_EPSILON).unwrap();
        assert_eq!(wc.value(), 1.0);
        assert_eq!(loss_phi(&wc, Direction::Inverted).scalar_value(), 0.0);
        assert_eq!(loss_phi(&wc, Direction::Literal).scalar_value(), 0.0);
    }

    #[test]
    fn full_weight_selects_reference_and_scores_near_zero() {
        let x = random_image(3, (1, 3, 8, 8));
        let x_hat = random_image(4, (1, 3, 8, 8));
        let w = map_from(vec![1.0; 64], Shape::new(1, 1, 8, 8), 0.999);
        let wc = weight_criterion(&x, &x_hat, &w, &judge(), WC_EPSILON).unwrap();
        assert_eq!(wc.numerator, 0.0);
        assert!(wc.value() < 0.01, "wc {}", wc.value());
    }

    #[test]
    fn criterion_ordering_full_vs_zero_weight() {
        let j = judge();
        for seed in 0..20u64 {
            let x = random_image(seed * 2 + 50, (1, 3, 8, 8));
            let x_hat = random_image(seed * 2 + 51, (1, 3, 8, 8));
            if j.distance(&x_hat, &x).unwrap().value() < 1e-4 {
                continue;
            }
            let shape = Shape::new(1, 1, 8, 8);
            let w1 = map_from(vec![1.0; 64], shape, 0.999);
            let w0 = map_from(vec![0.0; 64], shape, 0.001);
            let whalf = map_from(vec![0.5; 64], shape, 0.5);
            let c1 = weight_criterion(&x, &x_hat, &w1, &j, WC_EPSILON).unwrap();
            let c0 = weight_criterion(&x, &x_hat, &w0, &j, WC_EPSILON).unwrap();
            let ch = weight_criterion(&x, &x_hat, &whalf, &j, WC_EPSILON).unwrap();
            assert!(
                c1.value() < ch.value() && ch.value() < c0.value(),
                "seed {seed}: {} / {} / {}",
                c1.value(),
                ch.value(),
                c0.value()
            );
            assert_eq!(ch.value(), 1.0);
        }
    }

    #[test]
    fn reciprocity_swapping_w_inverts_the_ratio() {
        let j = judge();
        for seed in 0..20u64 {
            let x = random_image(seed + 200, (1, 3, 8, 8));
            let x_hat = random_image(seed + 300, (1, 3, 8, 8));
            let wv = dyadic_weights(seed + 400, 64);
            let w = map_from(wv, Shape::new(1, 1, 8, 8), 0.5);
            let wc = weight_criterion(&x, &x_hat, &w, &j, WC_EPSILON).unwrap();
            let wcc = weight_criterion(&x, &x_hat, &w.complement().unwrap(), &j, WC_EPSILON)
                .unwrap();
            if wc.numerator < 1e-6 || wc.denominator < 1e-6 {
                continue;
            }
            let product = wc.value() * wcc.value();
            assert!(
                (product - 1.0).abs() <= 1e-6,
                "seed {seed}: product {product}"
            );
        }
    }

    // posterior weight

    #[test]
    fn posterior_weight_examples() {
        let unit = CriterionValue::new(1.0, 1.0, 0.0, Tensor::scalar(0.0));
        assert_eq!(posterior_weight(&unit, Direction::Literal), 1.0);
        assert_eq!(posterior_weight(&unit, Direction::Inverted), 1.0);
        let four = CriterionValue::new(4.0, 1.0, 0.0, Tensor::scalar(4.0f32.ln()));
        assert_eq!(posterior_weight(&four, Direction::Literal), 4.0);
        assert_eq!(posterior_weight(&four, Direction::Inverted), 0.25);
    }

    // weighted base norm

    #[test]
    fn unit_weights_reduce_l1_to_plain_mae() {
        let x = random_image(5, (1, 3, 6, 6));
        let x_hat = random_image(6, (1, 3, 6, 6));
        let w = map_from(vec![1.0; 36], Shape::new(1, 1, 6, 6), 0.999);
        let norm = weighted_base_norm(&x, &x_hat, &w, BaseLossKind::L1).unwrap();
        let mae = x.sub(&x_hat).unwrap().abs().mean();
        assert_eq!(norm.scalar_value(), mae.scalar_value());
    }

    #[test]
    fn mse_modification_single_pixel() {
        let x = Tensor::from_vec((1, 1, 1, 1), vec![0.4]).unwrap();
        let x_hat = Tensor::zeros((1, 1, 1, 1));
        let w = map_from(vec![0.5], Shape::new(1, 1, 1, 1), 0.5);
        let norm = weighted_base_norm(&x, &x_hat, &w, BaseLossKind::Mse).unwrap();
        // w' = 0.5 / (0.4 + 0.1) = 1.0; contribution 1.0 * 0.16
        assert!((norm.scalar_value() - 0.16).abs() <= 1e-7);
    }

    #[test]
    fn mse_modification_zero_residual() {
        let x = Tensor::from_vec((1, 1, 1, 1), vec![0.4]).unwrap();
        let w = map_from(vec![0.8], Shape::new(1, 1, 1, 1), 0.8);
        let norm = weighted_base_norm(&x, &x, &w, BaseLossKind::Mse).unwrap();
        assert_eq!(norm.scalar_value(), 0.0);
    }

    #[test]
    fn mse_modification_residual_is_detached() {
        // gradient w.r.t. x_hat must come only from the squared residual,
        // matching finite differences of the full expression with the
        // divisor held fixed
        let x = random_image(7, (1, 3, 4, 4));
        let xh0 = seed_all(8).uniform_vec(48);
        let w = map_from(seed_all(9).uniform_vec(16), Shape::new(1, 1, 4, 4), 0.5);

        let x_hat = Tensor::param((1, 3, 4, 4), xh0.clone()).unwrap();
        let norm = weighted_base_norm(&x, &x_hat, &w, BaseLossKind::Mse).unwrap();
        norm.backward().unwrap();
        let analytic = x_hat.grad().unwrap();

        // fixed divisor from the unperturbed residual
        let base_res: Vec<f32> = x
            .values()
            .iter()
            .zip(&xh0)
            .map(|(&a, &b)| (a - b).abs())
            .collect();
        let f = |xv: &[f32]| -> f64 {
            let mut acc = 0.0f64;
            let wv = w.values.to_vec();
            for c in 0..3 {
                for i in 0..16 {
                    let idx = c * 16 + i;
                    let r = x.values()[idx] as f64 - xv[idx] as f64;
                    let wp = wv[i] as f64 / (base_res[idx] as f64 + 0.1);
                    acc += wp * r * r;
                }
            }
            acc / 48.0
        };
        let fd = finite_difference(f, &xh0, 1e-3);
        let err = max_rel_err(&analytic, &fd, 1e-3);
        assert!(err <= 1e-3, "max rel err {err}");
    }

    // loss_theta

    fn unit_criterion() -> CriterionValue {
        CriterionValue::new(1.0, 1.0, 0.0, Tensor::scalar(0.0))
    }

    #[test]
    fn single_sample_unit_weights_collapse_to_mae() {
        let x = random_image(10, (1, 3, 6, 6));
        let x_hat = random_image(11, (1, 3, 6, 6));
        let w = map_from(vec![1.0; 36], Shape::new(1, 1, 6, 6), 0.999);
        for direction in [Direction::Literal, Direction::Inverted] {
            let loss = loss_theta(
                &x,
                &x_hat,
                &[w.clone()],
                &[unit_criterion()],
                BaseLossKind::L1,
                direction,
            )
            .unwrap();
            let mae = x.sub(&x_hat).unwrap().abs().mean().scalar_value();
            assert!(
                (loss.scalar_value() - mae).abs() <= 1e-7,
                "{} vs {mae}",
                loss.scalar_value()
            );
        }
    }

    #[test]
    fn duplicate_samples_leave_the_gradient_unchanged() {
        let x = random_image(12, (1, 3, 6, 6));
        let xh0 = seed_all(13).uniform_vec(108);
        let w = map_from(seed_all(14).uniform_vec(36), Shape::new(1, 1, 6, 6), 0.5);
        let wc = || CriterionValue::new(0.5, 1.0, WC_EPSILON, Tensor::scalar(0.0));

        let grad_of = |t: usize| -> Vec<f32> {
            let x_hat = Tensor::param((1, 3, 6, 6), xh0.clone()).unwrap();
            let samples: Vec<WeightMap> = (0..t).map(|_| w.clone()).collect();
            let wcs: Vec<CriterionValue> = (0..t).map(|_| wc()).collect();
            let loss = loss_theta(
                &x,
                &x_hat,
                &samples,
                &wcs,
                BaseLossKind::L1,
                Direction::Inverted,
            )
            .unwrap();
            loss.backward().unwrap();
            x_hat.grad().unwrap()
        };
        let g1 = grad_of(1);
        let g2 = grad_of(2);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn huge_exponents_stay_finite() {
        let x = Tensor::full((1, 3, 4, 4), 1.0e4);
        let x_hat = Tensor::param((1, 3, 4, 4), vec![0.0; 48]).unwrap();
        let w = map_from(vec![1.0; 16], Shape::new(1, 1, 4, 4), 0.999);
        let loss = loss_theta(
            &x,
            &x_hat,
            &[w],
            &[unit_criterion()],
            BaseLossKind::L1,
            Direction::Inverted,
        )
        .unwrap();
        assert!(loss.scalar_value().is_finite());
        loss.backward().unwrap();
        assert!(x_hat.grad().unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn loss_theta_requires_detached_samples() {
        let x = random_image(15, (1, 3, 4, 4));
        let x_hat = random_image(16, (1, 3, 4, 4));
        let p = Tensor::param((1, 1, 4, 4), vec![0.5; 16]).unwrap();
        let live = WeightMap {
            values: sample_relaxed_bernoulli_with_noise(&p, 0.5, &vec![0.3; 16]).unwrap(),
            k: 0.5,
        };
        let err = loss_theta(
            &x,
            &x_hat,
            &[live],
            &[unit_criterion()],
            BaseLossKind::L1,
            Direction::Inverted,
        );
        assert!(err.is_err(), "undetached samples must be rejected");
    }

    #[test]
    fn no_gradient_reaches_weighting_side_through_loss_theta() {
        // weights drawn from a live parameter, then detached as the
        // contract requires: the parameter must stay gradient-free
        let x = random_image(17, (1, 3, 4, 4));
        let x_hat = Tensor::param((1, 3, 4, 4), seed_all(18).uniform_vec(48)).unwrap();
        let p = Tensor::param((1, 1, 4, 4), vec![0.5; 16]).unwrap();
        let drawn = sample_relaxed_bernoulli_with_noise(&p, 0.5, &vec![0.3; 16]).unwrap();
        let w = WeightMap {
            values: drawn.detach(),
            k: 0.5,
        };
        let j = judge();
        let crit = weight_criterion(&x, &x_hat.detach(), &w, &j, WC_EPSILON).unwrap();
        let loss = loss_theta(
            &x,
            &x_hat,
            &[w],
            &[crit],
            BaseLossKind::L1,
            Direction::Inverted,
        )
        .unwrap();
        loss.backward().unwrap();
        assert!(p.grad().is_none(), "criterion subgraph leaked gradient");
        assert!(x_hat.grad().is_some());
    }

    #[test]
    fn loss_theta_rejects_empty_sample_list() {
        let x = random_image(19, (1, 3, 4, 4));
        assert!(loss_theta(
            &x,
            &x,
            &[],
            &[],
            BaseLossKind::L1,
            Direction::Inverted
        )
        .is_err());
    }

    #[test]
    fn loss_theta_matches_direct_evaluation_where_stable() {
        // direct -log sum m_i exp(-norm_i) without the logsumexp shift
        let x = random_image(20, (1, 3, 6, 6));
        let x_hat = random_image(21, (1, 3, 6, 6));
        let shape = Shape::new(1, 1, 6, 6);
        let samples: Vec<WeightMap> = (0..3)
            .map(|i| map_from(seed_all(30 + i).uniform_vec(36), shape, 0.5))
            .collect();
        let wcs: Vec<CriterionValue> = (0..3)
            .map(|i| {
                let v = 0.5 + 0.3 * i as f32;
                CriterionValue::new(v, 1.0, 0.0, Tensor::scalar(v.ln()))
            })
            .collect();
        for direction in [Direction::Literal, Direction::Inverted] {
            let loss = loss_theta(&x, &x_hat, &samples, &wcs, BaseLossKind::L1, direction)
                .unwrap()
                .scalar_value() as f64;
            let mut direct = 0.0f64;
            for (w, wc) in samples.iter().zip(&wcs) {
                let norm =
                    weighted_base_norm(&x, &x_hat, w, BaseLossKind::L1).unwrap().scalar_value();
                direct += posterior_weight(wc, direction) * (-norm as f64).exp();
            }
            let direct = -direct.ln();
            assert!(
                (loss - direct).abs() <= 1e-6 * direct.abs().max(1.0),
                "{loss} vs {direct}"
            );
        }
    }

    // loss_phi

    #[test]
    fn loss_phi_is_monotone_in_wc_for_inverted_mode() {
        let low = CriterionValue::new(0.2, 1.0, 0.0, Tensor::scalar(0.2f32.ln()));
        let high = CriterionValue::new(0.9, 1.0, 0.0, Tensor::scalar(0.9f32.ln()));
        assert!(
            loss_phi(&low, Direction::Inverted).scalar_value()
                < loss_phi(&high, Direction::Inverted).scalar_value()
        );
        assert!(
            loss_phi(&low, Direction::Literal).scalar_value()
                > loss_phi(&high, Direction::Literal).scalar_value()
        );
    }

    #[test]
    fn loss_phi_gradient_reaches_the_probability_map() {
        let x = random_image(22, (1, 3, 6, 6));
        let x_hat = random_image(23, (1, 3, 6, 6));
        let p = Tensor::param((1, 1, 6, 6), vec![0.5; 36]).unwrap();
        let noise = seed_all(24).uniform_vec(36);
        let drawn = sample_relaxed_bernoulli_with_noise(&p, 0.5, &noise).unwrap();
        let w = WeightMap { values: drawn, k: 0.5 };
        let crit = weight_criterion(&x, &x_hat, &w, &judge(), WC_EPSILON).unwrap();
        let loss = loss_phi(&crit, Direction::Inverted);
        loss.backward().unwrap();
        let g = p.grad().expect("gradient must reach the probability map");
        assert!(g.iter().any(|&v| v != 0.0));
        assert!(g.iter().all(|v| v.is_finite()));
    }
}
