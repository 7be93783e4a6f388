//! Procedurally generated toy corpus: linear gradients, checkerboards, and
//! soft-edged disks. Small enough to train on a laptop CPU in minutes,
//! structured enough that edges and textures matter.

use std::path::{Path, PathBuf};

use crate::data::{save_png, DatasetManifest, ImagePair, ManifestEntry, Split};
use crate::error::Result;
use crate::stochastic::RngState;
use crate::tensor::{Shape, Tensor};

/// `count` RGB images of `size` x `size`, cycling through the three shape
/// families, fully determined by the seed.
pub fn generate_toy_images(count: usize, size: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = RngState::new(seed).derive(0x746f_79);
    (0..count)
        .map(|i| match i % 3 {
            0 => gradient_image(size, &mut rng),
            1 => checkerboard_image(size, &mut rng),
            _ => disk_image(size, &mut rng),
        })
        .collect()
}

/// Two colors with per-channel separation of at least 0.3, so every image
/// carries visible structure.
fn color_pair(rng: &mut RngState) -> ([f32; 3], [f32; 3]) {
    let c = rng.uniform_vec(6);
    let mut a = [0.0f32; 3];
    let mut b = [0.0f32; 3];
    for i in 0..3 {
        a[i] = c[i];
        let step = 0.3 + 0.6 * c[i + 3];
        b[i] = if a[i] < 0.5 { a[i] + step } else { a[i] - step }.clamp(0.0, 1.0);
    }
    (a, b)
}

fn assemble(size: usize, rgb: impl Fn(usize, usize) -> [f32; 3]) -> Tensor {
    let mut vals = vec![0.0f32; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let px = rgb(x, y);
            for c in 0..3 {
                vals[c * size * size + y * size + x] = px[c];
            }
        }
    }
    Tensor::from_vec(Shape::new(1, 3, size, size), vals).unwrap()
}

fn blend(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [
        a[0] + t * (b[0] - a[0]),
        a[1] + t * (b[1] - a[1]),
        a[2] + t * (b[2] - a[2]),
    ]
}

fn gradient_image(size: usize, rng: &mut RngState) -> Tensor {
    let (c0, c1) = color_pair(rng);
    let draws = rng.uniform_vec(4);
    let angle = draws[0] * std::f32::consts::TAU;
    let (dx, dy) = (angle.cos(), angle.sin());
    let half = (size as f32 - 1.0) / 2.0;
    let max_proj = half * (dx.abs() + dy.abs()).max(1e-6);
    // fine shading bands across the ramp; a pure linear ramp would be
    // reproduced exactly by the cubic resampler
    let wavelength = 2.5 + 3.0 * draws[1];
    let phase = draws[2] * std::f32::consts::TAU;
    let amplitude = 0.12 + 0.18 * draws[3];
    assemble(size, |x, y| {
        let proj = (x as f32 - half) * dx + (y as f32 - half) * dy;
        let band = amplitude * (std::f32::consts::TAU * proj / wavelength + phase).sin();
        let t = (0.5 + 0.5 * proj / max_proj + band).clamp(0.0, 1.0);
        blend(c0, c1, t)
    })
}

fn checkerboard_image(size: usize, rng: &mut RngState) -> Tensor {
    let (c0, c1) = color_pair(rng);
    let draws = rng.uniform_vec(3);
    let cell = [2usize, 4, 8][(draws[0] * 3.0) as usize % 3];
    let phase_x = (draws[1] * cell as f32) as usize;
    let phase_y = (draws[2] * cell as f32) as usize;
    assemble(size, |x, y| {
        let parity = ((x + phase_x) / cell + (y + phase_y) / cell) % 2;
        if parity == 0 {
            c0
        } else {
            c1
        }
    })
}

fn disk_image(size: usize, rng: &mut RngState) -> Tensor {
    let (bg, fg) = color_pair(rng);
    let draws = rng.uniform_vec(3);
    let cx = size as f32 * (0.25 + 0.5 * draws[0]);
    let cy = size as f32 * (0.25 + 0.5 * draws[1]);
    let radius = size as f32 * (1.0 / 6.0 + draws[2] / 6.0);
    assemble(size, |x, y| {
        let dist = ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt();
        // hard edge: the step is what the resampler destroys
        if dist <= radius {
            fg
        } else {
            bg
        }
    })
}

/// In-memory degraded pairs split into (train, val); the last `val_count`
/// images form the validation split.
pub fn toy_pairs(
    count: usize,
    size: usize,
    scale: usize,
    seed: u64,
    val_count: usize,
) -> Result<(Vec<ImagePair>, Vec<ImagePair>)> {
    let images = generate_toy_images(count, size, seed);
    let split_at = count.saturating_sub(val_count);
    let mut train = Vec::with_capacity(split_at);
    let mut val = Vec::with_capacity(count - split_at);
    for (i, img) in images.iter().enumerate() {
        let pair = ImagePair::from_hr(img, scale)?;
        if i < split_at {
            train.push(pair);
        } else {
            val.push(pair);
        }
    }
    Ok((train, val))
}

/// Write the corpus as PNGs plus a manifest; returns the manifest path.
pub fn write_toy_dataset(
    dir: &Path,
    count: usize,
    size: usize,
    seed: u64,
    val_count: usize,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    let images = generate_toy_images(count, size, seed);
    let split_at = count.saturating_sub(val_count);
    let mut entries = Vec::with_capacity(count);
    for (i, img) in images.iter().enumerate() {
        let name = format!("toy_{i:04}.png");
        save_png(img, &dir.join(&name))?;
        entries.push(ManifestEntry {
            path: name,
            split: if i < split_at { Split::Train } else { Split::Val },
        });
    }
    let manifest = dir.join("manifest.json");
    DatasetManifest::save(&entries, &manifest)?;
    Ok(manifest)
}
