//! Image decoding/encoding, color conversion, degradation, and patch
//! dataset assembly.

mod resize;
pub mod synthetic;

pub use resize::bicubic_resize;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::stochastic::RngState;
use crate::tensor::{Shape, Tensor};

/// An aligned training pair: HR reference, bicubic-downscaled LR, and the
/// LR pre-upsampled back to HR size.
pub struct ImagePair {
    pub hr: Tensor,
    pub lr: Tensor,
    pub lr_up: Tensor,
    pub scale: usize,
}

impl ImagePair {
    /// Degrade an HR image: crop to a multiple of `scale`, downscale by
    /// `scale`, upsample back to the cropped size.
    pub fn from_hr(hr: &Tensor, scale: usize) -> Result<ImagePair> {
        if scale == 0 {
            return Err(Error::InvalidArgument("scale must be positive".into()));
        }
        let shape = hr.shape();
        let ch = (shape.h / scale) * scale;
        let cw = (shape.w / scale) * scale;
        if ch == 0 || cw == 0 {
            return Err(Error::InvalidArgument(format!(
                "image {}x{} too small for scale {scale}",
                shape.h, shape.w
            )));
        }
        let hr = crop(hr, 0, 0, ch, cw);
        let lr = bicubic_resize(&hr, ch / scale, cw / scale);
        let lr_up = bicubic_resize(&lr, ch, cw);
        Ok(ImagePair {
            hr,
            lr,
            lr_up,
            scale,
        })
    }
}

/// Top-left crop of every plane.
pub fn crop(img: &Tensor, top: usize, left: usize, h: usize, w: usize) -> Tensor {
    let shape = img.shape();
    assert!(top + h <= shape.h && left + w <= shape.w, "crop out of range");
    let src = img.values();
    let mut out = Vec::with_capacity(shape.b * shape.c * h * w);
    for p in 0..shape.b * shape.c {
        let plane = &src[p * shape.h * shape.w..][..shape.h * shape.w];
        for row in top..top + h {
            out.extend_from_slice(&plane[row * shape.w + left..][..w]);
        }
    }
    drop(src);
    Tensor::from_vec(Shape::new(shape.b, shape.c, h, w), out).unwrap()
}

/// Decode an 8-bit RGB or grayscale PNG into a (1, C, H, W) tensor in
/// [0, 1] (C = 3 or 1).
pub fn load_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    match img {
        image::DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let mut out = vec![0.0f32; 3 * h * w];
            for (x, y, px) in rgb.enumerate_pixels() {
                let (x, y) = (x as usize, y as usize);
                for c in 0..3 {
                    out[c * h * w + y * w + x] = px.0[c] as f32 / 255.0;
                }
            }
            Tensor::from_vec(Shape::new(1, 3, h, w), out)
        }
        image::DynamicImage::ImageLuma8(gray) => {
            let (w, h) = (gray.width() as usize, gray.height() as usize);
            let mut out = vec![0.0f32; h * w];
            for (x, y, px) in gray.enumerate_pixels() {
                out[y as usize * w + x as usize] = px.0[0] as f32 / 255.0;
            }
            Tensor::from_vec(Shape::new(1, 1, h, w), out)
        }
        other => Err(Error::InvalidArgument(format!(
            "{}: unsupported color type {:?}; expected 8-bit RGB or grayscale",
            path.display(),
            other.color()
        ))),
    }
}

/// Encode a (1, 1|3, H, W) tensor as an 8-bit PNG; values are clamped to
/// [0, 1] and rounded half away from zero.
pub fn save_png(img: &Tensor, path: &Path) -> Result<()> {
    let shape = img.shape();
    if shape.b != 1 || (shape.c != 1 && shape.c != 3) {
        return Err(Error::shape(
            "save_png",
            format!("expected shape (1, 1|3, H, W), got {shape}"),
        ));
    }
    let quant = |v: f32| -> u8 { (v.clamp(0.0, 1.0) * 255.0).round() as u8 };
    let v = img.values();
    let (h, w) = (shape.h, shape.w);
    let encode_err = |e: image::ImageError| Error::Image {
        path: path.to_path_buf(),
        source: e,
    };
    if shape.c == 3 {
        let mut buf = image::RgbImage::new(w as u32, h as u32);
        for (x, y, px) in buf.enumerate_pixels_mut() {
            for c in 0..3 {
                px.0[c] = quant(v[c * h * w + y as usize * w + x as usize]);
            }
        }
        buf.save(path).map_err(encode_err)
    } else {
        let mut buf = image::GrayImage::new(w as u32, h as u32);
        for (x, y, px) in buf.enumerate_pixels_mut() {
            px.0[0] = quant(v[y as usize * w + x as usize]);
        }
        buf.save(path).map_err(encode_err)
    }
}

/// Replicate a single-channel image to three channels; RGB passes through.
pub fn to_rgb(img: &Tensor) -> Result<Tensor> {
    match img.shape().c {
        3 => Ok(img.clone()),
        1 => {
            let double = img.concat_channels(img)?;
            double.slice_channels(0, 1)?.concat_channels(&double)
        }
        c => Err(Error::shape(
            "to_rgb",
            format!("expected 1 or 3 channels, got {c}"),
        )),
    }
}

/// Studio-swing BT.601 luma: Y = (16 + 65.481 R + 128.553 G + 24.966 B)/255
/// on [0, 1] inputs, single channel in [16/255, 235/255].
pub fn rgb_to_y(img: &Tensor) -> Result<Tensor> {
    let shape = img.shape();
    if shape.c != 3 {
        return Err(Error::shape(
            "rgb_to_y",
            format!("expected 3 channels, got shape {shape}"),
        ));
    }
    let hw = shape.h * shape.w;
    let v = img.values();
    let mut out = vec![0.0f32; shape.b * hw];
    for b in 0..shape.b {
        let base = b * 3 * hw;
        for i in 0..hw {
            let r = v[base + i] as f64;
            let g = v[base + hw + i] as f64;
            let bl = v[base + 2 * hw + i] as f64;
            out[b * hw + i] = ((16.0 + 65.481 * r + 128.553 * g + 24.966 * bl) / 255.0) as f32;
        }
    }
    drop(v);
    Tensor::from_vec(Shape::new(shape.b, 1, shape.h, shape.w), out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub split: Split,
}

/// A list of image files with split tags; paths are relative to the
/// manifest file. The content hash covers the file list and all file
/// bytes.
#[derive(Debug)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
    pub content_hash: String,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<DatasetManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base_dir = path
            .parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_else(|| PathBuf::from("."));
        let mut hasher = Sha256::new();
        for entry in &entries {
            let file = base_dir.join(&entry.path);
            let bytes = std::fs::read(&file).map_err(|e| Error::io(&file, e))?;
            hasher.update(entry.path.as_bytes());
            hasher.update([match entry.split {
                Split::Train => 0u8,
                Split::Val => 1u8,
            }]);
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        }
        Ok(DatasetManifest {
            entries,
            base_dir,
            content_hash: hex::encode(hasher.finalize()),
        })
    }

    pub fn save(entries: &[ManifestEntry], path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(entries)
            .map_err(|e| Error::Config(format!("manifest encode: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn paths(&self, split: Split) -> Vec<PathBuf> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| self.base_dir.join(&e.path))
            .collect()
    }

    /// Load a split as named RGB images.
    pub fn load_images(&self, split: Split) -> Result<Vec<(String, Tensor)>> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| {
                let img = to_rgb(&load_png(&self.base_dir.join(&e.path))?)?;
                Ok((e.path.clone(), img))
            })
            .collect()
    }
}

/// Deterministic patch extraction: a fixed grid per image (no random
/// crops), shuffled by the seeded RNG. Images smaller than the patch are
/// skipped with a warning.
pub fn make_pairs(
    manifest: &DatasetManifest,
    split: Split,
    scale: usize,
    patch: usize,
    stride: usize,
    seed: u64,
) -> Result<Vec<ImagePair>> {
    if patch % scale != 0 {
        return Err(Error::InvalidArgument(format!(
            "patch size {patch} is not divisible by scale {scale}"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let mut patches: Vec<Tensor> = Vec::new();
    for (name, img) in manifest.load_images(split)? {
        let shape = img.shape();
        if shape.h < patch || shape.w < patch {
            eprintln!(
                "warning: skipping {name}: {}x{} smaller than patch {patch}",
                shape.h, shape.w
            );
            continue;
        }
        let mut top = 0;
        while top + patch <= shape.h {
            let mut left = 0;
            while left + patch <= shape.w {
                patches.push(crop(&img, top, left, patch, patch));
                left += stride;
            }
            top += stride;
        }
    }
    let order = RngState::new(seed)
        .derive(0x7061_7463)
        .shuffled_indices(patches.len());
    order
        .into_iter()
        .map(|i| ImagePair::from_hr(&patches[i], scale))
        .collect()
}
