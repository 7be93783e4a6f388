//! Pluggable perceptual distance D(a, b) between images.
//!
//! Two judge kinds ship: a plain pixel MSE and a fixed-feature judge that
//! follows the perceptual-metric computation pattern (stacked convolutions,
//! channel-unit-normalized features, per-layer spatial means, layer sums)
//! with frozen, seeded random orthogonal filters instead of pretrained
//! weights. Judges are immutable once built and never expose trainable
//! parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::RngState;
use crate::tensor::{Shape, Tensor};

/// Guard in the channel-unit-normalization denominator.
const NORM_EPS: f32 = 1e-10;

/// Fully determines a judge: two judges built from equal specs produce
/// bitwise-equal distances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum JudgeSpec {
    PixelMse,
    FixedFeature {
        widths: Vec<usize>,
        kernel: usize,
        seed: u64,
    },
}

impl Default for JudgeSpec {
    fn default() -> Self {
        JudgeSpec::FixedFeature {
            widths: vec![16, 32, 64],
            kernel: 3,
            seed: 0,
        }
    }
}

/// Convenience constructor for the fixed-feature spec.
pub fn build_fixed_feature_judge(layer_widths: &[usize], kernel: usize, seed: u64) -> JudgeSpec {
    JudgeSpec::FixedFeature {
        widths: layer_widths.to_vec(),
        kernel,
        seed,
    }
}

/// Nonnegative perceptual distance value; zero iff the judge considers the
/// inputs identical (always the case at exact equality).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JudgeDistance(pub f32);

impl JudgeDistance {
    pub fn value(&self) -> f32 {
        self.0
    }
}

struct JudgeLayer {
    weights: Vec<f32>,
    out_ch: usize,
    in_ch: usize,
    kernel: usize,
}

/// A built judge; immutable and shareable across threads.
pub struct Judge {
    spec: JudgeSpec,
    layers: Vec<JudgeLayer>,
}

impl Judge {
    pub fn build(spec: &JudgeSpec) -> Result<Judge> {
        let layers = match spec {
            JudgeSpec::PixelMse => Vec::new(),
            JudgeSpec::FixedFeature {
                widths,
                kernel,
                seed,
            } => {
                if widths.is_empty() {
                    return Err(Error::InvalidArgument(
                        "fixed-feature judge needs at least one layer".into(),
                    ));
                }
                if *kernel == 0 || *kernel % 2 == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "fixed-feature judge kernel must be odd, got {kernel}"
                    )));
                }
                let mut rng = RngState::new(*seed).derive(0x6a75_6467);
                let mut layers = Vec::with_capacity(widths.len());
                let mut in_ch = 3usize;
                for &out_ch in widths {
                    let fan_in = in_ch * kernel * kernel;
                    let weights = orthogonal_rows(&mut rng, out_ch, fan_in);
                    layers.push(JudgeLayer {
                        weights,
                        out_ch,
                        in_ch,
                        kernel: *kernel,
                    });
                    in_ch = out_ch;
                }
                layers
            }
        };
        Ok(Judge {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &JudgeSpec {
        &self.spec
    }

    /// Judges are frozen by construction; nothing here may ever enter an
    /// optimizer step.
    pub fn trainable_parameters(&self) -> Vec<Tensor> {
        Vec::new()
    }

    /// Distance as a scalar graph tensor, differentiable w.r.t. both inputs.
    pub fn forward(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::shape(
                "judge",
                format!("input shapes differ: {} vs {}", a.shape(), b.shape()),
            ));
        }
        match &self.spec {
            JudgeSpec::PixelMse => Ok(a.sub(b)?.square().mean()),
            JudgeSpec::FixedFeature { .. } => {
                let mut xa = a.clone();
                let mut xb = b.clone();
                let mut total: Option<Tensor> = None;
                for layer in &self.layers {
                    let kshape = Shape::new(layer.out_ch, layer.in_ch, layer.kernel, layer.kernel);
                    let kernel = Tensor::from_vec(kshape, layer.weights.clone())?;
                    let bias = Tensor::zeros((1, layer.out_ch, 1, 1));
                    let pad = (layer.kernel - 1) / 2;
                    let fa = xa.conv2d(&kernel, &bias, pad)?;
                    let fb = xb.conv2d(&kernel, &bias, pad)?;
                    let na = unit_normalize(&fa)?;
                    let nb = unit_normalize(&fb)?;
                    let s = fa.shape();
                    let d = na
                        .sub(&nb)?
                        .square()
                        .sum()
                        .scale(1.0 / (s.b * s.h * s.w) as f32);
                    total = Some(match total {
                        Some(t) => t.add(&d)?,
                        None => d,
                    });
                    xa = fa.relu();
                    xb = fb.relu();
                }
                Ok(total.expect("at least one layer"))
            }
        }
    }

    /// Plain distance value outside any gradient graph.
    pub fn distance(&self, a: &Tensor, b: &Tensor) -> Result<JudgeDistance> {
        let d = self.forward(&a.detach(), &b.detach())?;
        Ok(JudgeDistance(d.scalar_value()))
    }
}

/// Distance under a one-off judge built from `spec`.
pub fn judge_distance(spec: &JudgeSpec, a: &Tensor, b: &Tensor) -> Result<JudgeDistance> {
    Judge::build(spec)?.distance(a, b)
}

/// Scale features to unit L2 norm across channels at every spatial
/// position, guarded by NORM_EPS.
fn unit_normalize(f: &Tensor) -> Result<Tensor> {
    let inv = f.square().channel_sum().recip_sqrt(NORM_EPS);
    f.mul(&inv)
}

/// Rows of a (rows x cols) matrix: seeded Gaussian draws, orthonormalized
/// by modified Gram-Schmidt, scaled by sqrt(2).
fn orthogonal_rows(rng: &mut RngState, rows: usize, cols: usize) -> Vec<f32> {
    let mut m: Vec<Vec<f64>> = (0..rows)
        .map(|_| {
            rng.normal_vec(cols, 1.0)
                .into_iter()
                .map(|v| v as f64)
                .collect()
        })
        .collect();
    for i in 0..rows {
        for j in 0..i {
            let dot: f64 = m[i].iter().zip(&m[j]).map(|(a, b)| a * b).sum();
            for c in 0..cols {
                m[i][c] -= dot * m[j][c];
            }
        }
        let norm: f64 = m[i].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let scale = std::f64::consts::SQRT_2 / norm;
        for v in m[i].iter_mut() {
            *v *= scale;
        }
    }
    m.into_iter()
        .flat_map(|row| row.into_iter().map(|v| v as f32))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::seed_all;

    fn random_image(seed: u64, shape: impl Into<Shape>) -> Tensor {
        let shape = shape.into();
        let vals = seed_all(seed).uniform_vec(shape.numel());
        Tensor::from_vec(shape, vals).unwrap()
    }

    fn all_specs() -> Vec<JudgeSpec> {
        vec![
            JudgeSpec::PixelMse,
            JudgeSpec::default(),
            build_fixed_feature_judge(&[8], 3, 4),
        ]
    }

    #[test]
    fn distance_to_self_is_zero_for_every_kind() {
        let x = random_image(1, (1, 3, 8, 8));
        for spec in all_specs() {
            let d = judge_distance(&spec, &x, &x).unwrap();
            assert_eq!(d.value(), 0.0, "spec {spec:?}");
        }
    }

    #[test]
    fn pixel_mse_of_constant_offset() {
        let a = random_image(2, (1, 3, 6, 6));
        let b = a.add_scalar(0.1);
        let d = judge_distance(&JudgeSpec::PixelMse, &a, &b).unwrap();
        assert!((d.value() - 0.01).abs() <= 1e-6, "got {}", d.value());
    }

    #[test]
    fn equal_specs_give_bitwise_equal_distances() {
        let a = random_image(3, (1, 3, 10, 10));
        let b = random_image(4, (1, 3, 10, 10));
        let spec = JudgeSpec::default();
        let d1 = judge_distance(&spec, &a, &b).unwrap();
        let d2 = judge_distance(&spec, &a, &b).unwrap();
        assert_eq!(d1.value().to_bits(), d2.value().to_bits());
    }

    #[test]
    fn distance_is_symmetric() {
        let a = random_image(5, (1, 3, 9, 9));
        let b = random_image(6, (1, 3, 9, 9));
        for spec in all_specs() {
            let judge = Judge::build(&spec).unwrap();
            let dab = judge.distance(&a, &b).unwrap();
            let dba = judge.distance(&b, &a).unwrap();
            assert_eq!(dab.value().to_bits(), dba.value().to_bits(), "spec {spec:?}");
        }
    }

    #[test]
    fn nonnegative_on_random_pairs() {
        for seed in 0..20u64 {
            let a = random_image(seed * 2 + 100, (1, 3, 7, 7));
            let b = random_image(seed * 2 + 101, (1, 3, 7, 7));
            for spec in all_specs() {
                let d = judge_distance(&spec, &a, &b).unwrap();
                assert!(d.value() >= 0.0, "spec {spec:?} seed {seed}");
            }
        }
    }

    #[test]
    fn strictly_positive_for_visible_differences_across_seeds() {
        // 100 judge seeds, random pair with at least one pixel differing by
        // >= 1e-6
        let a = random_image(7, (1, 3, 8, 8));
        let mut bv = a.to_vec();
        bv[17] += 1e-3;
        bv[100] -= 2e-4;
        let b = Tensor::from_vec(a.shape(), bv).unwrap();
        for seed in 0..100u64 {
            let spec = build_fixed_feature_judge(&[8, 16], 3, seed);
            let d = judge_distance(&spec, &a, &b).unwrap();
            assert!(d.value() > 0.0, "seed {seed} gave zero distance");
        }
    }

    #[test]
    fn single_layer_judge_on_identical_inputs() {
        let x = random_image(8, (2, 3, 5, 5));
        let spec = build_fixed_feature_judge(&[4], 3, 0);
        assert_eq!(judge_distance(&spec, &x, &x).unwrap().value(), 0.0);
    }

    #[test]
    fn gradient_reaches_both_inputs() {
        let a = Tensor::param((1, 3, 6, 6), seed_all(9).uniform_vec(108)).unwrap();
        let b = Tensor::param((1, 3, 6, 6), seed_all(10).uniform_vec(108)).unwrap();
        let judge = Judge::build(&JudgeSpec::default()).unwrap();
        let d = judge.forward(&a, &b).unwrap();
        d.backward().unwrap();
        let ga = a.grad().expect("first input should receive gradient");
        let gb = b.grad().expect("second input should receive gradient");
        assert!(ga.iter().any(|&v| v != 0.0));
        assert!(gb.iter().any(|&v| v != 0.0));
        assert!(ga.iter().chain(gb.iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn judges_expose_no_trainable_parameters() {
        for spec in all_specs() {
            assert!(Judge::build(&spec).unwrap().trainable_parameters().is_empty());
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = random_image(11, (1, 3, 8, 8));
        let b = random_image(12, (1, 3, 8, 9));
        assert!(judge_distance(&JudgeSpec::PixelMse, &a, &b).is_err());
    }

    #[test]
    fn spec_serializes_with_kind_tag() {
        let spec = JudgeSpec::default();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"kind\":\"fixed-feature\""), "{json}");
        let back: JudgeSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let mse: JudgeSpec = serde_json::from_str("{\"kind\":\"pixel-mse\"}").unwrap();
        assert_eq!(mse, JudgeSpec::PixelMse);
    }
}
