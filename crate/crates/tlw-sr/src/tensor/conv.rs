//! Stride-1 zero-padded convolution kernels, forward and backward.
//!
//! Accumulation is in f64; operands are widened once per call so the hot
//! loops run as pure f64 fused multiply-adds. Work is parallelized over
//! independent output planes, so results are bitwise identical for any
//! worker count.

use rayon::prelude::*;

use super::Shape;

fn widen(values: &[f32]) -> Vec<f64> {
    values.iter().map(|&v| v as f64).collect()
}

#[allow(clippy::too_many_arguments)]
pub(super) fn forward(
    input: &[f32],
    ishape: Shape,
    kernel: &[f32],
    kshape: Shape,
    bias: &[f32],
    padding: usize,
    oh: usize,
    ow: usize,
) -> Vec<f32> {
    let (h, w) = (ishape.h, ishape.w);
    let (cin, cout) = (ishape.c, kshape.b);
    let (kh, kw) = (kshape.h, kshape.w);
    let p = padding as isize;
    let input64 = widen(input);
    let kernel64 = widen(kernel);
    let mut out = vec![0.0f32; ishape.b * cout * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(idx, plane)| {
        let b = idx / cout;
        let oc = idx % cout;
        let mut acc = vec![bias[oc] as f64; oh * ow];
        for ic in 0..cin {
            let in_plane = &input64[(b * cin + ic) * h * w..][..h * w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let kv = kernel64[((oc * cin + ic) * kh + ki) * kw + kj];
                    // iw = owi + kj - p must land in [0, w)
                    let lo = (p - kj as isize).max(0) as usize;
                    let hi = ((w as isize + p - kj as isize).min(ow as isize)).max(0) as usize;
                    if lo >= hi {
                        continue;
                    }
                    let shift = kj as isize - p;
                    for ohi in 0..oh {
                        let ih = ohi as isize + ki as isize - p;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let base = ih * w as isize + shift;
                        let src = &in_plane[(base + lo as isize) as usize..(base + hi as isize) as usize];
                        let acc_row = &mut acc[ohi * ow..][..ow];
                        for (a, iv) in acc_row[lo..hi].iter_mut().zip(src) {
                            *a += kv * iv;
                        }
                    }
                }
            }
        }
        for (o, a) in plane.iter_mut().zip(acc) {
            *o = a as f32;
        }
    });
    out
}

pub(super) fn backward_input(
    grad: &[f32],
    oshape: Shape,
    kernel: &[f32],
    kshape: Shape,
    ishape: Shape,
    padding: usize,
) -> Vec<f32> {
    let (h, w) = (ishape.h, ishape.w);
    let (oh, ow) = (oshape.h, oshape.w);
    let (cin, cout) = (ishape.c, kshape.b);
    let (kh, kw) = (kshape.h, kshape.w);
    let p = padding as isize;
    let grad64 = widen(grad);
    let kernel64 = widen(kernel);
    let mut gin = vec![0.0f32; ishape.numel()];
    gin.par_chunks_mut(h * w).enumerate().for_each(|(idx, plane)| {
        let b = idx / cin;
        let ic = idx % cin;
        let mut acc = vec![0.0f64; h * w];
        for oc in 0..cout {
            let gplane = &grad64[(b * cout + oc) * oh * ow..][..oh * ow];
            for ki in 0..kh {
                for kj in 0..kw {
                    let kv = kernel64[((oc * cin + ic) * kh + ki) * kw + kj];
                    // owi = iw + p - kj must land in [0, ow)
                    let lo = (kj as isize - p).max(0) as usize;
                    let hi = ((ow as isize + kj as isize - p).min(w as isize)).max(0) as usize;
                    if lo >= hi {
                        continue;
                    }
                    let shift = p - kj as isize;
                    for ih in 0..h {
                        let ohi = ih as isize + p - ki as isize;
                        if ohi < 0 || ohi >= oh as isize {
                            continue;
                        }
                        let base = ohi * ow as isize + shift;
                        let src = &gplane[(base + lo as isize) as usize..(base + hi as isize) as usize];
                        let acc_row = &mut acc[ih * w..][..w];
                        for (a, gv) in acc_row[lo..hi].iter_mut().zip(src) {
                            *a += kv * gv;
                        }
                    }
                }
            }
        }
        for (o, a) in plane.iter_mut().zip(acc) {
            *o = a as f32;
        }
    });
    gin
}

pub(super) fn backward_kernel(
    grad: &[f32],
    oshape: Shape,
    input: &[f32],
    ishape: Shape,
    kshape: Shape,
    padding: usize,
) -> Vec<f32> {
    let (h, w) = (ishape.h, ishape.w);
    let (oh, ow) = (oshape.h, oshape.w);
    let (cin, cout) = (ishape.c, kshape.b);
    let (kh, kw) = (kshape.h, kshape.w);
    let batch = ishape.b;
    let p = padding as isize;
    let grad64 = widen(grad);
    let input64 = widen(input);
    let mut gker = vec![0.0f32; kshape.numel()];
    gker.par_chunks_mut(kh * kw).enumerate().for_each(|(idx, plane)| {
        let oc = idx / cin;
        let ic = idx % cin;
        let mut acc = vec![0.0f64; kh * kw];
        for b in 0..batch {
            let gplane = &grad64[(b * cout + oc) * oh * ow..][..oh * ow];
            let in_plane = &input64[(b * cin + ic) * h * w..][..h * w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let lo = (p - kj as isize).max(0) as usize;
                    let hi = ((w as isize + p - kj as isize).min(ow as isize)).max(0) as usize;
                    if lo >= hi {
                        continue;
                    }
                    let shift = kj as isize - p;
                    let mut s = 0.0f64;
                    for ohi in 0..oh {
                        let ih = ohi as isize + ki as isize - p;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let base = ih as isize * w as isize + shift;
                        let src = &in_plane[(base + lo as isize) as usize..(base + hi as isize) as usize];
                        let g_row = &gplane[ohi * ow + lo..ohi * ow + hi];
                        // four running sums break the f64 add latency chain
                        let mut part = [0.0f64; 4];
                        let mut g4 = g_row.chunks_exact(4);
                        let mut i4 = src.chunks_exact(4);
                        for (g, i) in (&mut g4).zip(&mut i4) {
                            part[0] += g[0] * i[0];
                            part[1] += g[1] * i[1];
                            part[2] += g[2] * i[2];
                            part[3] += g[3] * i[3];
                        }
                        for (gv, iv) in g4.remainder().iter().zip(i4.remainder()) {
                            part[0] += gv * iv;
                        }
                        s += (part[0] + part[1]) + (part[2] + part[3]);
                    }
                    acc[ki * kw + kj] += s;
                }
            }
        }
        for (o, a) in plane.iter_mut().zip(acc) {
            *o = a as f32;
        }
    });
    gker
}

pub(super) fn backward_bias(grad: &[f32], oshape: Shape) -> Vec<f32> {
    let cout = oshape.c;
    let plane = oshape.h * oshape.w;
    let mut gbias = vec![0.0f32; cout];
    for (oc, gb) in gbias.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for b in 0..oshape.b {
            for &g in &grad[(b * cout + oc) * plane..][..plane] {
                acc += g as f64;
            }
        }
        *gb = acc as f32;
    }
    gbias
}
