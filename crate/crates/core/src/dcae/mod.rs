//! Deformable convolutional auto-encoder mapping a NOCS map (plus backbone
//! features) to an IVFC map.
//!
//! Encoder: three stride-2 deformable 3×3 layers with ReLU. Decoder: a 4×4
//! stride-2 transposed convolution, bilinear 2×, a 3×3 convolution, bilinear
//! 2×, a 1×1 projection to three channels and a sigmoid.

mod conv;
mod deform;
mod tensor;
pub mod weights;

pub use conv::{relu, sigmoid, upsample_bilinear2x, Conv2d, ConvTranspose2d};
pub use deform::{DeformConv2d, DeformGrads, KERNEL};
pub use tensor::{bilinear_sample, Tensor4};

use crate::coordmap::CoordinateMap;
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Where the output map's mask comes from when none is supplied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OutputMask {
    /// Input NOCS mask dilated by one pixel (8-neighbourhood).
    #[default]
    DilatedInput,
    /// Input NOCS mask unchanged.
    Input,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcaeConfig {
    pub input_size: usize,
    pub in_channels: usize,
    pub encoder_channels: [usize; 3],
    /// Offset groups of each encoder layer.
    pub encoder_groups: [usize; 3],
    pub backbone_channels: usize,
    pub decoder_channels: [usize; 2],
    pub out_channels: usize,
    #[serde(default)]
    pub output_mask: OutputMask,
}

impl Default for DcaeConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            in_channels: 3,
            encoder_channels: [64, 128, 256],
            encoder_groups: [1, 4, 4],
            backbone_channels: 256,
            decoder_channels: [128, 64],
            out_channels: 3,
            output_mask: OutputMask::DilatedInput,
        }
    }
}

impl DcaeConfig {
    /// A reduced configuration for fast tests.
    pub fn small() -> Self {
        Self {
            input_size: 16,
            in_channels: 3,
            encoder_channels: [4, 8, 8],
            encoder_groups: [1, 2, 2],
            backbone_channels: 4,
            decoder_channels: [4, 4],
            out_channels: 3,
            output_mask: OutputMask::DilatedInput,
        }
    }

    pub fn bottleneck_size(&self) -> usize {
        self.input_size / 8
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(8) {
            return Err(Error::InvalidInput(format!(
                "input size must be a positive multiple of 8, got {}",
                self.input_size
            )));
        }
        if self.in_channels != 3 || self.out_channels != 3 {
            return Err(Error::InvalidInput(
                "coordinate maps have exactly 3 channels".into(),
            ));
        }
        let inputs = [
            self.in_channels,
            self.encoder_channels[0],
            self.encoder_channels[1],
        ];
        for (i, (&cin, &g)) in inputs.iter().zip(&self.encoder_groups).enumerate() {
            if g == 0 || cin % g != 0 {
                return Err(Error::InvalidInput(format!(
                    "encoder layer {i}: {cin} input channels not divisible into {g} groups"
                )));
            }
        }
        if self
            .encoder_channels
            .iter()
            .chain(&self.decoder_channels)
            .any(|&c| c == 0)
        {
            return Err(Error::InvalidInput(
                "channel counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcaeWeights<T> {
    pub encoder: Vec<DeformConv2d<T>>,
    pub deconv: ConvTranspose2d<T>,
    pub mid: Conv2d<T>,
    pub head: Conv2d<T>,
}

impl<T: Real> DcaeWeights<T> {
    pub fn zeros(cfg: &DcaeConfig) -> Result<Self> {
        cfg.validate()?;
        let ins = [
            cfg.in_channels,
            cfg.encoder_channels[0],
            cfg.encoder_channels[1],
        ];
        let encoder = (0..3)
            .map(|i| DeformConv2d::zeros(ins[i], cfg.encoder_channels[i], 2, cfg.encoder_groups[i]))
            .collect::<Result<Vec<_>>>()?;
        let fused = cfg.encoder_channels[2] + cfg.backbone_channels;
        Ok(Self {
            encoder,
            deconv: ConvTranspose2d::zeros(fused, cfg.decoder_channels[0], 4, 2, 1),
            mid: Conv2d::zeros(cfg.decoder_channels[0], cfg.decoder_channels[1], 3, 1, 1),
            head: Conv2d::zeros(cfg.decoder_channels[1], cfg.out_channels, 1, 1, 0),
        })
    }

    /// Kaiming-uniform weights (`±sqrt(6/fan_in)`), biases uniform in
    /// `±1/sqrt(fan_in)`; offset and mask predictors start at zero.
    pub fn random(cfg: &DcaeConfig, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |t: &mut [T], fan_in: usize, gain: f64| {
            let bound = gain / (fan_in as f64).sqrt();
            for v in t {
                *v = lit((rng.random::<f64>() * 2.0 - 1.0) * bound);
            }
        };
        for l in &mut w.encoder {
            let fan = l.in_channels() * KERNEL * KERNEL;
            fill(l.weight.data_mut(), fan, 6f64.sqrt());
            fill(&mut l.bias, fan, 1.0);
        }
        let [cin, _, k, _] = w.deconv.weight.dims();
        fill(w.deconv.weight.data_mut(), cin * k * k / 4, 6f64.sqrt());
        fill(&mut w.deconv.bias, cin * k * k / 4, 1.0);
        for c in [&mut w.mid, &mut w.head] {
            let [_, cin, kh, kw] = c.weight.dims();
            fill(c.weight.data_mut(), cin * kh * kw, 6f64.sqrt());
            fill(&mut c.bias, cin * kh * kw, 1.0);
        }
        Ok(w)
    }

    /// Every parameter tensor with a stable name and shape.
    pub fn named(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out: Vec<(String, Vec<usize>, &[T])> = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            out.push((
                format!("encoder.{i}.weight"),
                l.weight.dims().to_vec(),
                l.weight.data(),
            ));
            out.push((format!("encoder.{i}.bias"), vec![l.bias.len()], &l.bias));
            out.push((
                format!("encoder.{i}.offset.weight"),
                l.offset.weight.dims().to_vec(),
                l.offset.weight.data(),
            ));
            out.push((
                format!("encoder.{i}.offset.bias"),
                vec![l.offset.bias.len()],
                &l.offset.bias,
            ));
            out.push((
                format!("encoder.{i}.mask.weight"),
                l.mask.weight.dims().to_vec(),
                l.mask.weight.data(),
            ));
            out.push((
                format!("encoder.{i}.mask.bias"),
                vec![l.mask.bias.len()],
                &l.mask.bias,
            ));
        }
        out.push((
            "decoder.deconv.weight".into(),
            self.deconv.weight.dims().to_vec(),
            self.deconv.weight.data(),
        ));
        out.push((
            "decoder.deconv.bias".into(),
            vec![self.deconv.bias.len()],
            &self.deconv.bias,
        ));
        out.push((
            "decoder.conv.weight".into(),
            self.mid.weight.dims().to_vec(),
            self.mid.weight.data(),
        ));
        out.push((
            "decoder.conv.bias".into(),
            vec![self.mid.bias.len()],
            &self.mid.bias,
        ));
        out.push((
            "decoder.head.weight".into(),
            self.head.weight.dims().to_vec(),
            self.head.weight.data(),
        ));
        out.push((
            "decoder.head.bias".into(),
            vec![self.head.bias.len()],
            &self.head.bias,
        ));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, Vec<usize>, &mut [T])> {
        let mut out: Vec<(String, Vec<usize>, &mut [T])> = Vec::new();
        for (i, l) in self.encoder.iter_mut().enumerate() {
            let n = l.bias.len();
            let (od, on) = (l.offset.weight.dims().to_vec(), l.offset.bias.len());
            let (md, mn) = (l.mask.weight.dims().to_vec(), l.mask.bias.len());
            out.push((
                format!("encoder.{i}.weight"),
                l.weight.dims().to_vec(),
                l.weight.data_mut(),
            ));
            out.push((format!("encoder.{i}.bias"), vec![n], &mut l.bias));
            out.push((
                format!("encoder.{i}.offset.weight"),
                od,
                l.offset.weight.data_mut(),
            ));
            out.push((
                format!("encoder.{i}.offset.bias"),
                vec![on],
                &mut l.offset.bias,
            ));
            out.push((
                format!("encoder.{i}.mask.weight"),
                md,
                l.mask.weight.data_mut(),
            ));
            out.push((format!("encoder.{i}.mask.bias"), vec![mn], &mut l.mask.bias));
        }
        let n = self.deconv.bias.len();
        out.push((
            "decoder.deconv.weight".into(),
            self.deconv.weight.dims().to_vec(),
            self.deconv.weight.data_mut(),
        ));
        out.push(("decoder.deconv.bias".into(), vec![n], &mut self.deconv.bias));
        let n = self.mid.bias.len();
        out.push((
            "decoder.conv.weight".into(),
            self.mid.weight.dims().to_vec(),
            self.mid.weight.data_mut(),
        ));
        out.push(("decoder.conv.bias".into(), vec![n], &mut self.mid.bias));
        let n = self.head.bias.len();
        out.push((
            "decoder.head.weight".into(),
            self.head.weight.dims().to_vec(),
            self.head.weight.data_mut(),
        ));
        out.push(("decoder.head.bias".into(), vec![n], &mut self.head.bias));
        out
    }
}

/// Tensor shapes seen by one forward pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DcaeTrace {
    pub encoder: Vec<[usize; 4]>,
    pub fused: [usize; 4],
    pub decoder: Vec<[usize; 4]>,
}

#[derive(Debug, Clone)]
pub struct DcaeOutput<T: Real> {
    pub map: CoordinateMap<T>,
    /// Sigmoid output before masking, `[1, 3, H, W]`.
    pub raw: Tensor4<T>,
    pub bottleneck: Tensor4<T>,
    pub trace: DcaeTrace,
}

/// `[1, 3, H, W]` tensor of a coordinate map.
pub fn map_to_tensor<T: Real>(map: &CoordinateMap<T>) -> Tensor4<T> {
    let (w, h) = (map.width(), map.height());
    Tensor4::from_fn([1, 3, h, w], |[_, c, y, x]| map.coords()[y * w + x][c])
}

/// Encoder pass; returns the bottleneck and the shape after each layer.
pub fn encode<T: Real>(
    input: &Tensor4<T>,
    weights: &DcaeWeights<T>,
) -> Result<(Tensor4<T>, Vec<[usize; 4]>)> {
    let mut x = input.clone();
    let mut shapes = Vec::new();
    for layer in &weights.encoder {
        x = relu(&layer.forward(&x)?);
        shapes.push(x.dims());
    }
    Ok((x, shapes))
}

/// Decoder pass from the fused bottleneck to the sigmoid output.
pub fn decode<T: Real>(
    fused: &Tensor4<T>,
    weights: &DcaeWeights<T>,
) -> Result<(Tensor4<T>, Vec<[usize; 4]>)> {
    let mut shapes = Vec::new();
    let x = relu(&weights.deconv.forward(fused)?);
    shapes.push(x.dims());
    let x = upsample_bilinear2x(&x);
    shapes.push(x.dims());
    let x = relu(&weights.mid.forward(&x)?);
    let x = upsample_bilinear2x(&x);
    shapes.push(x.dims());
    let x = sigmoid(&weights.head.forward(&x)?);
    shapes.push(x.dims());
    Ok((x, shapes))
}

fn dilate(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    out[yy * w + xx] = true;
                }
            }
        }
    }
    out
}

/// Runs the auto-encoder on a NOCS map and `[1, F, s/8, s/8]` backbone
/// features. The output mask is `mask` when given, otherwise derived from the
/// input mask per `cfg.output_mask`.
pub fn dcae_forward<T: Real>(
    nocs: &CoordinateMap<T>,
    backbone: &Tensor4<T>,
    cfg: &DcaeConfig,
    weights: &DcaeWeights<T>,
    mask: Option<&[bool]>,
) -> Result<DcaeOutput<T>> {
    cfg.validate()?;
    let s = cfg.input_size;
    if nocs.width() != s || nocs.height() != s {
        return Err(Error::ShapeMismatch(format!(
            "input map must be {s}x{s}, got {}x{}",
            nocs.width(),
            nocs.height()
        )));
    }
    let b = cfg.bottleneck_size();
    let expect = [1, cfg.backbone_channels, b, b];
    if backbone.dims() != expect {
        return Err(Error::ShapeMismatch(format!(
            "backbone feature must be {:?}, got {:?}",
            expect,
            backbone.dims()
        )));
    }
    if let Some(m) = mask {
        if m.len() != s * s {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} entries, expected {}",
                m.len(),
                s * s
            )));
        }
    }
    let input = map_to_tensor(nocs);
    let (bottleneck, enc_shapes) = encode(&input, weights)?;
    let fused = bottleneck.concat_channels(backbone)?;
    let (raw, dec_shapes) = decode(&fused, weights)?;
    if raw.dims() != [1, 3, s, s] {
        return Err(Error::ShapeMismatch(format!(
            "decoder produced {:?}",
            raw.dims()
        )));
    }
    let out_mask = match mask {
        Some(m) => m.to_vec(),
        None => match cfg.output_mask {
            OutputMask::DilatedInput => dilate(nocs.mask(), s, s),
            OutputMask::Input => nocs.mask().to_vec(),
        },
    };
    let coords = (0..s * s)
        .map(|i| {
            if out_mask[i] {
                let (y, x) = (i / s, i % s);
                Vector3::new(
                    raw.get(0, 0, y, x),
                    raw.get(0, 1, y, x),
                    raw.get(0, 2, y, x),
                )
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    let map = CoordinateMap::from_parts(s, s, coords, out_mask)?;
    Ok(DcaeOutput {
        map,
        raw,
        trace: DcaeTrace {
            encoder: enc_shapes,
            fused: fused.dims(),
            decoder: dec_shapes,
        },
        bottleneck,
    })
}
