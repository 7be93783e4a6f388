//! The super-resolution network, the weighting network, seeded
//! initialization, and the checkpoint container.
//!
//! The SR network is a plain pre-upsample residual stack: `depth` 3x3
//! convolutions at `width` channels with ReLU between them, output added
//! to the input. The weighting network is four 3x3 convolutions
//! (6 -> 32 -> 32 -> 32 -> 1, ReLU after the first three) over the
//! channel-concatenated (reference, estimate) pair, finished by sigmoid and
//! the per-image FixedSum activation.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::stochastic::RngState;
use crate::tensor::{Shape, Tensor};
use crate::weighting::WeightMap;

const WEIGHT_NET_WIDTHS: [usize; 5] = [6, 32, 32, 32, 1];

pub struct ConvLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub padding: usize,
}

impl ConvLayer {
    /// Kaiming fan-in scaled Gaussian kernel, zero bias.
    fn seeded(out_ch: usize, in_ch: usize, k: usize, rng: &mut RngState) -> Result<ConvLayer> {
        let fan_in = (in_ch * k * k) as f32;
        let std = (2.0 / fan_in).sqrt();
        let kernel = Tensor::param(
            Shape::new(out_ch, in_ch, k, k),
            rng.normal_vec(out_ch * in_ch * k * k, std),
        )?;
        let bias = Tensor::param(Shape::new(1, out_ch, 1, 1), vec![0.0; out_ch])?;
        Ok(ConvLayer {
            kernel,
            bias,
            padding: (k - 1) / 2,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.kernel, &self.bias, self.padding)
    }

    fn clone_parameters(&self) -> ConvLayer {
        ConvLayer {
            kernel: Tensor::param(self.kernel.shape(), self.kernel.to_vec()).unwrap(),
            bias: Tensor::param(self.bias.shape(), self.bias.to_vec()).unwrap(),
            padding: self.padding,
        }
    }
}

/// Pre-upsample residual SR network; input and output are 3-channel images
/// of the same spatial size.
pub struct SrModel {
    pub depth: usize,
    pub width: usize,
    layers: Vec<ConvLayer>,
}

impl SrModel {
    /// Kaiming-initialized stack with a zero-initialized final layer, so a
    /// fresh model starts as the identity on its pre-upsampled input.
    pub fn new(depth: usize, width: usize, rng: &mut RngState) -> Result<SrModel> {
        if depth < 2 {
            return Err(Error::InvalidArgument(format!(
                "sr model: depth must be at least 2, got {depth}"
            )));
        }
        let mut layers = Vec::with_capacity(depth);
        layers.push(ConvLayer::seeded(width, 3, 3, rng)?);
        for _ in 1..depth - 1 {
            layers.push(ConvLayer::seeded(width, width, 3, rng)?);
        }
        let last = ConvLayer::seeded(3, width, 3, rng)?;
        last.kernel.set_values(&vec![0.0; last.kernel.numel()])?;
        layers.push(last);
        Ok(SrModel {
            depth,
            width,
            layers,
        })
    }

    /// x_hat = y_up + residual(y_up). Not clamped; clamp to [0, 1] only at
    /// evaluation or export.
    pub fn forward(&self, y_up: &Tensor) -> Result<Tensor> {
        if y_up.shape().c != 3 {
            return Err(Error::shape(
                "sr_forward",
                format!("expected a 3-channel input, got shape {}", y_up.shape()),
            ));
        }
        let mut h = self.layers[0].forward(y_up)?.relu();
        for layer in &self.layers[1..self.depth - 1] {
            h = layer.forward(&h)?.relu();
        }
        let residual = self.layers[self.depth - 1].forward(&h)?;
        residual.add(y_up)
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [l.kernel.clone(), l.bias.clone()])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    /// Deep copy with fresh parameter tensors holding identical values.
    pub fn clone_parameters(&self) -> SrModel {
        SrModel {
            depth: self.depth,
            width: self.width,
            layers: self.layers.iter().map(|l| l.clone_parameters()).collect(),
        }
    }

    pub fn zero_grad(&self) {
        for p in self.parameters() {
            p.zero_grad();
        }
    }

    pub fn to_arrays(&self, prefix: &str) -> Vec<ArrayRecord> {
        layers_to_arrays(&self.layers, prefix)
    }

    pub fn from_arrays(
        depth: usize,
        width: usize,
        ckpt: &Checkpoint,
        prefix: &str,
    ) -> Result<SrModel> {
        let mut model = SrModel::new(depth, width, &mut RngState::new(0))?;
        load_layers(&mut model.layers, ckpt, prefix)?;
        Ok(model)
    }
}

/// Weighting network producing the mean map of the weight distribution.
pub struct WeightModel {
    layers: Vec<ConvLayer>,
}

impl WeightModel {
    pub fn new(rng: &mut RngState) -> Result<WeightModel> {
        let mut layers = Vec::with_capacity(4);
        for i in 0..4 {
            layers.push(ConvLayer::seeded(
                WEIGHT_NET_WIDTHS[i + 1],
                WEIGHT_NET_WIDTHS[i],
                3,
                rng,
            )?);
        }
        Ok(WeightModel { layers })
    }

    /// Concatenate (x, x_hat) to 6 channels, run the stack, and squash the
    /// single-channel output through sigmoid and FixedSum(k).
    pub fn forward(&self, x: &Tensor, x_hat: &Tensor, k: f32) -> Result<WeightMap> {
        let mut h = x.concat_channels(x_hat)?;
        for layer in &self.layers[..3] {
            h = layer.forward(&h)?.relu();
        }
        let logits = self.layers[3].forward(&h)?;
        let p = logits.sigmoid().fixedsum(k)?;
        WeightMap::new(p, k)
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [l.kernel.clone(), l.bias.clone()])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    pub fn clone_parameters(&self) -> WeightModel {
        WeightModel {
            layers: self.layers.iter().map(|l| l.clone_parameters()).collect(),
        }
    }

    pub fn zero_grad(&self) {
        for p in self.parameters() {
            p.zero_grad();
        }
    }

    pub fn to_arrays(&self, prefix: &str) -> Vec<ArrayRecord> {
        layers_to_arrays(&self.layers, prefix)
    }

    pub fn from_arrays(ckpt: &Checkpoint, prefix: &str) -> Result<WeightModel> {
        let mut model = WeightModel::new(&mut RngState::new(0))?;
        load_layers(&mut model.layers, ckpt, prefix)?;
        Ok(model)
    }
}

/// Seeded model initialization. With `four_loss` set, returns four SR
/// models with elementwise-identical initial parameters (one per training
/// leg); otherwise a single model.
pub fn init_models(
    seed: u64,
    depth: usize,
    width: usize,
    four_loss: bool,
) -> Result<(Vec<SrModel>, WeightModel)> {
    let mut rng = RngState::new(seed).derive(0x696e_6974);
    let base = SrModel::new(depth, width, &mut rng)?;
    let weight = WeightModel::new(&mut rng)?;
    let models = if four_loss {
        (0..4).map(|_| base.clone_parameters()).collect()
    } else {
        vec![base]
    };
    Ok((models, weight))
}

fn layers_to_arrays(layers: &[ConvLayer], prefix: &str) -> Vec<ArrayRecord> {
    let mut out = Vec::with_capacity(layers.len() * 2);
    for (i, l) in layers.iter().enumerate() {
        out.push(ArrayRecord::from_tensor(
            format!("{prefix}.layer{i}.kernel"),
            &l.kernel,
        ));
        out.push(ArrayRecord::from_tensor(
            format!("{prefix}.layer{i}.bias"),
            &l.bias,
        ));
    }
    out
}

fn load_layers(layers: &mut [ConvLayer], ckpt: &Checkpoint, prefix: &str) -> Result<()> {
    for (i, l) in layers.iter_mut().enumerate() {
        let kernel = ckpt.array(&format!("{prefix}.layer{i}.kernel"))?;
        let bias = ckpt.array(&format!("{prefix}.layer{i}.bias"))?;
        kernel.check_shape(l.kernel.shape())?;
        bias.check_shape(l.bias.shape())?;
        l.kernel.set_values(&kernel.data)?;
        l.bias.set_values(&bias.data)?;
    }
    Ok(())
}

/// One named flat float array inside a checkpoint.
#[derive(Clone)]
pub struct ArrayRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl ArrayRecord {
    pub fn from_tensor(name: String, t: &Tensor) -> ArrayRecord {
        let s = t.shape();
        ArrayRecord {
            name,
            shape: vec![s.b, s.c, s.h, s.w],
            data: t.to_vec(),
        }
    }

    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> ArrayRecord {
        ArrayRecord {
            name: name.into(),
            shape,
            data,
        }
    }

    fn check_shape(&self, expected: Shape) -> Result<()> {
        let got = &self.shape;
        if got != &[expected.b, expected.c, expected.h, expected.w] {
            return Err(Error::Checkpoint(format!(
                "array `{}` has shape {:?}, expected {}",
                self.name, got, expected
            )));
        }
        Ok(())
    }
}

/// Checkpoint file: a little-endian u64 header length, a JSON header
/// (metadata plus array names/shapes), then all arrays concatenated as
/// little-endian f32.
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub arrays: Vec<ArrayRecord>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Checkpoint {
        Checkpoint {
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, arrays: Vec<ArrayRecord>) {
        self.arrays.extend(arrays);
    }

    pub fn array(&self, name: &str) -> Result<&ArrayRecord> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let arrays_meta: Vec<serde_json::Value> = self
            .arrays
            .iter()
            .map(|a| {
                serde_json::json!({
                    "name": a.name,
                    "shape": a.shape,
                    "len": a.data.len(),
                })
            })
            .collect();
        let header = serde_json::json!({
            "version": 1,
            "meta": self.meta,
            "arrays": arrays_meta,
        });
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut write = |buf: &[u8]| -> Result<()> {
            file.write_all(buf).map_err(|e| Error::io(path, e))
        };
        write(&(header_bytes.len() as u64).to_le_bytes())?;
        write(&header_bytes)?;
        for a in &self.arrays {
            let mut bytes = Vec::with_capacity(a.data.len() * 4);
            for v in &a.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            write(&bytes)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes)
            .map_err(|e| Error::io(path, e))?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        file.read_exact(&mut header_bytes)
            .map_err(|e| Error::io(path, e))?;
        let header: serde_json::Value = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
        let meta = header
            .get("meta")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("header missing `meta`".into()))?;
        let arrays_meta = header
            .get("arrays")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Checkpoint("header missing `arrays`".into()))?;
        let mut arrays = Vec::with_capacity(arrays_meta.len());
        for am in arrays_meta {
            let name = am
                .get("name")
                .and_then(|v| v.as_str())
                .ok_or_else(|| Error::Checkpoint("array entry missing `name`".into()))?;
            let shape: Vec<usize> = am
                .get("shape")
                .and_then(|v| v.as_array())
                .map(|v| {
                    v.iter()
                        .filter_map(|x| x.as_u64().map(|u| u as usize))
                        .collect()
                })
                .ok_or_else(|| Error::Checkpoint("array entry missing `shape`".into()))?;
            let len = am
                .get("len")
                .and_then(|v| v.as_u64())
                .ok_or_else(|| Error::Checkpoint("array entry missing `len`".into()))?
                as usize;
            let mut bytes = vec![0u8; len * 4];
            file.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
            let data: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            arrays.push(ArrayRecord::new(name, shape, data));
        }
        Ok(Checkpoint { meta, arrays })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{dot64, finite_difference, max_rel_err};
    use crate::stochastic::seed_all;

    fn random_image(seed: u64, shape: impl Into<Shape>) -> Tensor {
        let shape = shape.into();
        let vals = seed_all(seed).uniform_vec(shape.numel());
        Tensor::from_vec(shape, vals).unwrap()
    }

    #[test]
    fn zeroed_last_layer_reproduces_the_input_bit_exactly() {
        let mut rng = seed_all(1);
        let model = SrModel::new(4, 8, &mut rng).unwrap();
        let params = model.parameters();
        // last layer: kernel and bias are the final two parameters
        let last_kernel = &params[params.len() - 2];
        let last_bias = &params[params.len() - 1];
        last_kernel.set_values(&vec![0.0; last_kernel.numel()]).unwrap();
        last_bias.set_values(&vec![0.0; last_bias.numel()]).unwrap();
        let y = random_image(2, (2, 3, 8, 8));
        let out = model.forward(&y).unwrap();
        let yb: Vec<u32> = y.to_vec().iter().map(|v| v.to_bits()).collect();
        let ob: Vec<u32> = out.to_vec().iter().map(|v| v.to_bits()).collect();
        assert_eq!(yb, ob);
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let mut rng = seed_all(3);
        let model = SrModel::new(8, 32, &mut rng).unwrap();
        // first: 32 filters over 3 channels; middle x6: 32 over 32; last: 3 over 32
        let expected = (32 * 3 * 9 + 32) + 6 * (32 * 32 * 9 + 32) + (3 * 32 * 9 + 3);
        assert_eq!(model.parameter_count(), expected);
        assert_eq!(expected, 57_251);

        let wnet = WeightModel::new(&mut rng).unwrap();
        let expected_w = (32 * 6 * 9 + 32) + 2 * (32 * 32 * 9 + 32) + (32 * 9 + 1);
        assert_eq!(wnet.parameter_count(), expected_w);
    }

    #[test]
    fn sr_forward_rejects_wrong_channel_count() {
        let mut rng = seed_all(4);
        let model = SrModel::new(2, 4, &mut rng).unwrap();
        let bad = Tensor::ones((1, 1, 8, 8));
        assert!(model.forward(&bad).is_err());
    }

    #[test]
    fn two_layer_model_passes_gradient_check() {
        let mut rng = seed_all(5);
        let model = SrModel::new(2, 4, &mut rng).unwrap();
        // the residual head initializes to zero; give it values so every
        // layer carries gradient
        let params = model.parameters();
        let last_kernel = &params[params.len() - 2];
        last_kernel
            .set_values(&seed_all(55).normal_vec(last_kernel.numel(), 0.2))
            .unwrap();
        let y = random_image(6, (1, 3, 6, 6));
        let proj = seed_all(7).uniform_vec(y.numel());

        let out = model.forward(&y).unwrap();
        let r = Tensor::from_vec(y.shape(), proj.clone()).unwrap();
        out.mul(&r).unwrap().sum().backward().unwrap();

        for (pi, p) in model.parameters().iter().enumerate() {
            let p0 = p.to_vec();
            let fd = finite_difference(
                |pv: &[f32]| {
                    p.set_values(pv).unwrap();
                    let out = model.forward(&y).unwrap();
                    let loss = dot64(&out.values(), &proj);
                    loss
                },
                &p0,
                1e-3,
            );
            p.set_values(&p0).unwrap();
            let err = max_rel_err(&p.grad().unwrap(), &fd, 1e-3);
            assert!(err <= 1e-3, "parameter {pi}: max rel err {err}");
        }
    }

    #[test]
    fn weight_forward_satisfies_weight_map_invariants() {
        let mut rng = seed_all(8);
        for trial in 0..30 {
            let wnet = WeightModel::new(&mut rng).unwrap();
            let x = random_image(100 + trial, (2, 3, 8, 8));
            let x_hat = random_image(200 + trial, (2, 3, 8, 8));
            let k = 0.1 + 0.8 * seed_all(trial).uniform_vec(1)[0];
            let map = wnet.forward(&x, &x_hat, k).unwrap();
            let n = map.pixel_count() as f64;
            assert!(
                map.fixed_sum_error() <= 1e-4 * n,
                "trial {trial}: sum error {}",
                map.fixed_sum_error()
            );
            assert!(map.values.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn weight_forward_is_deterministic_for_fixed_parameters() {
        let mut rng = seed_all(9);
        let wnet = WeightModel::new(&mut rng).unwrap();
        let x = random_image(10, (1, 3, 8, 8));
        let x_hat = random_image(11, (1, 3, 8, 8));
        let a = wnet.forward(&x, &x_hat, 0.4).unwrap();
        let b = wnet.forward(&x, &x_hat, 0.4).unwrap();
        let ab: Vec<u32> = a.values.to_vec().iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u32> = b.values.to_vec().iter().map(|v| v.to_bits()).collect();
        assert_eq!(ab, bb);
    }

    #[test]
    fn four_loss_init_is_elementwise_identical() {
        let (models, _) = init_models(21, 4, 8, true).unwrap();
        assert_eq!(models.len(), 4);
        let reference: Vec<Vec<f32>> = models[0].parameters().iter().map(|p| p.to_vec()).collect();
        for m in &models[1..] {
            for (p, r) in m.parameters().iter().zip(&reference) {
                assert_eq!(&p.to_vec(), r);
            }
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let (a, wa) = init_models(33, 4, 8, false).unwrap();
        let (b, wb) = init_models(33, 4, 8, false).unwrap();
        for (pa, pb) in a[0].parameters().iter().zip(b[0].parameters()) {
            assert_eq!(pa.to_vec(), pb.to_vec());
        }
        for (pa, pb) in wa.parameters().iter().zip(wb.parameters()) {
            assert_eq!(pa.to_vec(), pb.to_vec());
        }
        let (c, _) = init_models(34, 4, 8, false).unwrap();
        let differs = a[0]
            .parameters()
            .iter()
            .zip(c[0].parameters())
            .any(|(pa, pc)| pa.to_vec() != pc.to_vec());
        assert!(differs, "different seeds must give different parameters");
    }

    #[test]
    fn checkpoint_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (models, wnet) = init_models(55, 3, 6, false).unwrap();
        let mut ckpt = Checkpoint::new(serde_json::json!({
            "seed": 55, "epoch": 2, "config_hash": "abc",
        }));
        ckpt.push(models[0].to_arrays("sr"));
        ckpt.push(wnet.to_arrays("weight"));
        ckpt.save(&path).unwrap();

        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.meta["seed"], 55);
        assert_eq!(loaded.arrays.len(), ckpt.arrays.len());
        for (a, b) in ckpt.arrays.iter().zip(&loaded.arrays) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let ab: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }

        let restored = SrModel::from_arrays(3, 6, &loaded, "sr").unwrap();
        for (p, q) in models[0].parameters().iter().zip(restored.parameters()) {
            assert_eq!(p.to_vec(), q.to_vec());
        }
    }
}
