//! Separable bicubic resampling with the a = -0.5 kernel.
//!
//! Output pixel centers map to source coordinates via
//! `src = (dst + 0.5) * (in / out) - 0.5`. When downscaling, the kernel
//! support is stretched by the scale factor (anti-aliasing), the de-facto
//! convention of super-resolution benchmarks. Edges are handled by
//! clamping source coordinates; per-axis weights are renormalized to sum
//! to one, so constant images are preserved at any size. Accumulation and
//! the intermediate pass are f64.

use crate::tensor::{Shape, Tensor};

const A: f64 = -0.5;

pub(crate) fn cubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

struct AxisTaps {
    start: isize,
    weights: Vec<f64>,
}

fn axis_taps(in_size: usize, out_size: usize) -> Vec<AxisTaps> {
    let scale = in_size as f64 / out_size as f64;
    let stretch = scale.max(1.0);
    let radius = 2.0 * stretch;
    (0..out_size)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let lo = (src - radius).ceil() as isize;
            let hi = (src + radius).floor() as isize;
            let mut weights: Vec<f64> = (lo..=hi)
                .map(|i| cubic_kernel((i as f64 - src) / stretch))
                .collect();
            let total: f64 = weights.iter().sum();
            for w in weights.iter_mut() {
                *w /= total;
            }
            AxisTaps { start: lo, weights }
        })
        .collect()
}

#[inline]
fn clamp_index(i: isize, size: usize) -> usize {
    i.clamp(0, size as isize - 1) as usize
}

/// Resize every (batch, channel) plane to `out_h` x `out_w`.
pub fn bicubic_resize(img: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    assert!(out_h > 0 && out_w > 0, "bicubic_resize: empty target");
    let shape = img.shape();
    let (h, w) = (shape.h, shape.w);
    let x_taps = axis_taps(w, out_w);
    let y_taps = axis_taps(h, out_h);
    let planes = shape.b * shape.c;
    let src = img.values();
    let mut out = vec![0.0f32; planes * out_h * out_w];
    for p in 0..planes {
        let plane = &src[p * h * w..][..h * w];
        // horizontal pass, f64 intermediate
        let mut tmp = vec![0.0f64; h * out_w];
        for row in 0..h {
            let src_row = &plane[row * w..][..w];
            for (ox, taps) in x_taps.iter().enumerate() {
                let mut acc = 0.0f64;
                for (j, &wt) in taps.weights.iter().enumerate() {
                    acc += wt * src_row[clamp_index(taps.start + j as isize, w)] as f64;
                }
                tmp[row * out_w + ox] = acc;
            }
        }
        // vertical pass
        let dst = &mut out[p * out_h * out_w..][..out_h * out_w];
        for (oy, taps) in y_taps.iter().enumerate() {
            for ox in 0..out_w {
                let mut acc = 0.0f64;
                for (j, &wt) in taps.weights.iter().enumerate() {
                    acc += wt * tmp[clamp_index(taps.start + j as isize, h) * out_w + ox];
                }
                dst[oy * out_w + ox] = acc as f32;
            }
        }
    }
    Tensor::make_leaf(Shape::new(shape.b, shape.c, out_h, out_w), out)
}
