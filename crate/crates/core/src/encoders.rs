//! Small convolutional encoders for video clips and motion spectrograms.
//!
//! Both encoders share one layout: strided convolutions with ReLU, adaptive
//! average pooling onto a fixed grid, and one affine projection to the shared
//! embedding dimension. The video encoder convolves over `(time, height,
//! width)`; the motion encoder treats the spectrogram as a six-channel image
//! over `(frequency, frame)`. Outputs are not normalized here.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{he_uniform, ConvGeom, Graph, ParamStore, Tensor, Var};
use crate::signal::Spectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Video,
    Motion,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Video => "video",
            Modality::Motion => "motion",
        }
    }

    /// Parameter-name prefix of this modality's encoder.
    pub fn prefix(self) -> String {
        format!("{}.", self.name())
    }
}

/// Feature vector produced by an encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

/// Dense `[frames x height x width x channels]` clip with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    tensor: Tensor,
    frame_rate_hz: f64,
}

impl VideoClip {
    pub fn new(tensor: Tensor, frame_rate_hz: f64) -> Result<Self> {
        if tensor.rank() != 4 {
            return Err(Error::Shape(format!(
                "video must be [frames, height, width, channels], got {:?}",
                tensor.shape()
            )));
        }
        if let Some(v) = tensor.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidSamples(format!("video intensity {v} outside [0, 1]")));
        }
        if !(frame_rate_hz > 0.0) {
            return Err(Error::InvalidSamples(format!("frame rate {frame_rate_hz}")));
        }
        Ok(Self {
            tensor,
            frame_rate_hz,
        })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn frames(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn geometry(&self) -> [usize; 4] {
        let s = self.tensor.shape();
        [s[0], s[1], s[2], s[3]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub modality: Modality,
    /// Input geometry: video `[frames, height, width, channels]`,
    /// motion `[channels, freq_bins, frames]`.
    pub input_shape: Vec<usize>,
    /// Output channels of each convolution.
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    /// Adaptive pooling grid over the convolved axes.
    pub pool: Vec<usize>,
    pub embed_dim: usize,
    pub seed: u64,
}

pub const DEFAULT_EMBED_DIM: usize = 64;

impl EncoderConfig {
    pub fn video(geometry: [usize; 4], seed: u64) -> Self {
        Self {
            modality: Modality::Video,
            input_shape: geometry.to_vec(),
            widths: vec![8, 16],
            kernel: 3,
            stride: 2,
            pool: vec![2, 2, 2],
            embed_dim: DEFAULT_EMBED_DIM,
            seed,
        }
    }

    pub fn motion(geometry: [usize; 3], seed: u64) -> Self {
        Self {
            modality: Modality::Motion,
            input_shape: geometry.to_vec(),
            widths: vec![8, 16],
            kernel: 3,
            stride: 2,
            pool: vec![3, 3],
            embed_dim: DEFAULT_EMBED_DIM,
            seed,
        }
    }
}

/// A validated encoder: the architecture only; weights live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    /// `[C, d1, .., dk]` consumed by the first convolution.
    input: Vec<usize>,
    /// Spatial dims after each convolution.
    conv_dims: Vec<Vec<usize>>,
    flat: usize,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        let bad = |msg: String| Error::Config(format!("{} encoder: {msg}", config.modality.name()));
        if config.embed_dim < 2 {
            return Err(bad(format!("embedding dimension {} < 2", config.embed_dim)));
        }
        if config.widths.is_empty() || config.widths.contains(&0) {
            return Err(bad(format!("widths {:?} must be positive", config.widths)));
        }
        if config.kernel == 0 || config.stride == 0 {
            return Err(bad("kernel and stride must be positive".into()));
        }
        let input = match (config.modality, config.input_shape.as_slice()) {
            (Modality::Video, &[t, h, w, c]) => vec![c, t, h, w],
            (Modality::Motion, &[c, b, f]) => vec![c, b, f],
            (_, s) => return Err(bad(format!("input shape {s:?} has the wrong rank"))),
        };
        if input.contains(&0) {
            return Err(bad("input dimensions must be positive".into()));
        }
        let pad = config.kernel / 2;
        let mut dims = input[1..].to_vec();
        let mut conv_dims = Vec::new();
        for _ in &config.widths {
            dims = dims
                .iter()
                .map(|&n| {
                    let span = n + 2 * pad;
                    if span < config.kernel {
                        1
                    } else {
                        (span - config.kernel) / config.stride + 1
                    }
                })
                .collect();
            conv_dims.push(dims.clone());
        }
        if config.pool.len() != dims.len() || config.pool.iter().zip(&dims).any(|(&p, &d)| p == 0 || p > d) {
            return Err(bad(format!(
                "pool grid {:?} does not fit convolved dims {dims:?}",
                config.pool
            )));
        }
        let flat = config.widths.last().expect("non-empty") * config.pool.iter().product::<usize>();
        Ok(Self {
            config,
            input,
            conv_dims,
            flat,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn modality(&self) -> Modality {
        self.config.modality
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn prefix(&self) -> String {
        self.config.modality.prefix()
    }

    /// Shape of the prepared input tensor, channels first.
    pub fn input_shape(&self) -> &[usize] {
        &self.input
    }

    fn kernel_shape(&self, out: usize, inp: usize) -> Vec<usize> {
        let mut shape = vec![out, inp];
        shape.extend(std::iter::repeat_n(self.config.kernel, self.input.len() - 1));
        shape
    }

    /// `(name, shape, fan_in)` of every parameter, in initialization order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>, usize)> {
        let p = self.prefix();
        let mut specs = Vec::new();
        let mut in_ch = self.input[0];
        let kvol = self.config.kernel.pow((self.input.len() - 1) as u32);
        for (i, &w) in self.config.widths.iter().enumerate() {
            specs.push((format!("{p}conv{}.weight", i + 1), self.kernel_shape(w, in_ch), in_ch * kvol));
            specs.push((format!("{p}conv{}.bias", i + 1), vec![w], 0));
            in_ch = w;
        }
        specs.push((format!("{p}proj.weight"), vec![self.flat, self.config.embed_dim], self.flat));
        specs.push((format!("{p}proj.bias"), vec![self.config.embed_dim], 0));
        specs
    }

    /// Adds freshly initialized weights (seeded by the config) to `store`.
    pub fn init_params(&self, store: &mut ParamStore) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        for (name, shape, fan_in) in self.param_specs() {
            let value = if fan_in == 0 {
                Tensor::zeros(&shape)
            } else {
                he_uniform(&shape, fan_in, &mut rng)
            };
            store.insert(name, value)?;
        }
        Ok(())
    }

    /// Checks that `store` holds every parameter of this encoder with the right shape.
    pub fn check_params(&self, store: &ParamStore) -> Result<()> {
        for (name, shape, _) in self.param_specs() {
            match store.value(&name) {
                None => return Err(Error::NoSuchParameterGroup(name)),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::ParamMismatch(format!(
                        "{name}: stored {:?}, architecture needs {shape:?}",
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// Records the encoder on `g` for a prepared input (see [`prepare_video`] / [`prepare_motion`]).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, input: &Tensor) -> Result<Var> {
        if input.shape() != self.input.as_slice() {
            return Err(Error::InputShape {
                expected: self.input.clone(),
                got: input.shape().to_vec(),
            });
        }
        let p = self.prefix();
        let pad = self.config.kernel / 2;
        let mut x = g.input(input.clone());
        for i in 1..=self.config.widths.len() {
            let w = g.param(store, &format!("{p}conv{i}.weight"))?;
            let b = g.param(store, &format!("{p}conv{i}.bias"))?;
            x = match self.config.modality {
                Modality::Video => g.conv3d(x, w, b, ConvGeom::uniform(self.config.stride, pad))?,
                Modality::Motion => g.conv2d(x, w, b, self.config.stride, pad)?,
            };
            x = g.relu(x);
        }
        debug_assert_eq!(&g.shape(x)[1..], self.conv_dims.last().unwrap().as_slice());
        let pooled = g.adaptive_avg_pool(x, &self.config.pool)?;
        let flat = g.reshape(pooled, &[self.flat])?;
        let w = g.param(store, &format!("{p}proj.weight"))?;
        let b = g.param(store, &format!("{p}proj.bias"))?;
        g.affine(flat, w, b)
    }

    /// Embedding of one prepared input, without gradients.
    pub fn embed(&self, store: &ParamStore, input: &Tensor) -> Result<Embedding> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, input)?;
        let values = g.value(out).data().to_vec();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalOverflow("non-finite embedding".into()));
        }
        Ok(Embedding::new(values))
    }
}

/// `[T, H, W, C]` clip to the encoder's `[C, T, H, W]` layout, centered on zero.
pub fn prepare_video(clip: &VideoClip) -> Tensor {
    let [t, h, w, c] = clip.geometry();
    let src = clip.tensor().data();
    let mut out = vec![0.0; src.len()];
    for ti in 0..t {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[((ch * t + ti) * h + y) * w + x] =
                        src[((ti * h + y) * w + x) * c + ch] - 0.5;
                }
            }
        }
    }
    Tensor::new(vec![c, t, h, w], out).expect("same element count")
}

/// A (normalized) spectrogram is already channels-first.
pub fn prepare_motion(spec: &Spectrogram) -> Tensor {
    spec.grids().clone()
}

pub fn encode_video(encoder: &Encoder, clip: &VideoClip, params: &ParamStore) -> Result<Embedding> {
    if encoder.modality() != Modality::Video {
        return Err(Error::Config("encode_video needs a video encoder".into()));
    }
    let [t, h, w, c] = clip.geometry();
    if encoder.config().input_shape != [t, h, w, c] {
        return Err(Error::InputShape {
            expected: encoder.config().input_shape.clone(),
            got: vec![t, h, w, c],
        });
    }
    encoder.embed(params, &prepare_video(clip))
}

pub fn encode_motion(encoder: &Encoder, spec: &Spectrogram, params: &ParamStore) -> Result<Embedding> {
    if encoder.modality() != Modality::Motion {
        return Err(Error::Config("encode_motion needs a motion encoder".into()));
    }
    encoder.embed(params, &prepare_motion(spec))
}
