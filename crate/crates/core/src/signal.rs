//! IMU clips and their log-magnitude spectrograms.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const IMU_CHANNELS: usize = 6;
pub const CHANNEL_ORDER: [&str; IMU_CHANNELS] =
    ["accel_x", "accel_y", "accel_z", "gyro_x", "gyro_y", "gyro_z"];

/// Default sample rate of the head-mounted IMU.
pub const IMU_RATE_HZ: f64 = 198.0;
pub const DEFAULT_N_FFT: usize = 64;
pub const DEFAULT_HOP: usize = 32;
/// Added to magnitudes before the logarithm.
pub const LOG_FLOOR: f64 = 1e-8;
/// Lower bound applied to fitted standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Six-channel inertial time series stored `[time x channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuClip {
    samples: Vec<f64>,
    sample_rate_hz: f64,
}

impl ImuClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return Err(Error::InvalidSamples(format!("sample rate {sample_rate_hz}")));
        }
        if samples.is_empty() || samples.len() % IMU_CHANNELS != 0 {
            return Err(Error::InvalidSamples(format!(
                "{} values is not a whole number of 6-channel samples",
                samples.len()
            )));
        }
        if let Some(bad) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSamples(format!(
                "non-finite value at sample {}, channel {}",
                bad / IMU_CHANNELS,
                bad % IMU_CHANNELS
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// Builds a clip from per-channel series of equal length.
    pub fn from_channels(channels: &[Vec<f64>; IMU_CHANNELS], sample_rate_hz: f64) -> Result<Self> {
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidSamples("channels differ in length".into()));
        }
        let mut samples = Vec::with_capacity(len * IMU_CHANNELS);
        for t in 0..len {
            samples.extend(channels.iter().map(|c| c[t]));
        }
        Self::new(samples, sample_rate_hz)
    }

    pub fn len(&self) -> usize {
        self.samples.len() / IMU_CHANNELS
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.samples.iter().skip(c).step_by(IMU_CHANNELS).copied().collect()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.samples.iter().map(|v| v * factor).collect(), self.sample_rate_hz)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), IMU_CHANNELS], self.samples.clone())
            .expect("validated clip")
    }

    pub fn from_tensor(t: &Tensor, sample_rate_hz: f64) -> Result<Self> {
        match t.shape() {
            [_, c] if *c == IMU_CHANNELS => Self::new(t.data().to_vec(), sample_rate_hz),
            s => Err(Error::InvalidSamples(format!("IMU tensor must be [time, 6], got {s:?}"))),
        }
    }
}

/// Number of samples in a clip of `duration_s` seconds.
pub fn clip_length(duration_s: f64, sample_rate_hz: f64) -> usize {
    (duration_s * sample_rate_hz).round() as usize
}

/// Log-magnitude STFT grids `[channel x freq_bin x frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    grids: Tensor,
    pub n_fft: usize,
    pub hop: usize,
    pub sample_rate_hz: f64,
}

impl Spectrogram {
    pub fn new(grids: Tensor, n_fft: usize, hop: usize, sample_rate_hz: f64) -> Result<Self> {
        if grids.rank() != 3 {
            return Err(Error::Shape(format!(
                "spectrogram grids must be 3-D, got {:?}",
                grids.shape()
            )));
        }
        if !grids.is_finite() {
            return Err(Error::InvalidSamples("non-finite spectrogram entry".into()));
        }
        Ok(Self {
            grids,
            n_fft,
            hop,
            sample_rate_hz,
        })
    }

    pub fn grids(&self) -> &Tensor {
        &self.grids
    }

    pub fn channels(&self) -> usize {
        self.grids.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.grids.shape()[1]
    }

    pub fn frames(&self) -> usize {
        self.grids.shape()[2]
    }

    pub fn at(&self, channel: usize, bin: usize, frame: usize) -> f64 {
        self.grids.data()[(channel * self.bins() + bin) * self.frames() + frame]
    }

    /// Frequency in Hz of a bin.
    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate_hz / self.n_fft as f64
    }

    /// Index of the loudest frequency bin of `channel` in every frame.
    pub fn peak_bins(&self, channel: usize) -> Vec<usize> {
        (0..self.frames())
            .map(|f| {
                (0..self.bins())
                    .max_by(|&a, &b| self.at(channel, a, f).total_cmp(&self.at(channel, b, f)))
                    .expect("at least one bin")
            })
            .collect()
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Frames produced by a clip of `len` samples.
pub fn frame_count(len: usize, n_fft: usize, hop: usize) -> usize {
    (len - n_fft) / hop + 1
}

/// Hann-windowed STFT of every channel, reported as `ln(|X| + LOG_FLOOR)`.
pub fn stft_log_magnitude(clip: &ImuClip, n_fft: usize, hop: usize) -> Result<Spectrogram> {
    if n_fft == 0 || n_fft % 2 != 0 {
        return Err(Error::Config(format!("n_fft must be positive and even, got {n_fft}")));
    }
    if hop == 0 {
        return Err(Error::Config("hop must be positive".into()));
    }
    if let Some(v) = clip.samples().iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidSamples(format!("non-finite sample {v}")));
    }
    let len = clip.len();
    if len < n_fft {
        return Err(Error::ClipTooShort { len, n_fft });
    }
    let bins = n_fft / 2 + 1;
    let frames = frame_count(len, n_fft, hop);
    let window = hann_window(n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut grids = vec![0.0; IMU_CHANNELS * bins * frames];
    for c in 0..IMU_CHANNELS {
        let series = clip.channel(c);
        for f in 0..frames {
            let start = f * hop;
            for (slot, (x, w)) in buf.iter_mut().zip(series[start..start + n_fft].iter().zip(&window)) {
                *slot = Complex::new(x * w, 0.0);
            }
            fft.process(&mut buf);
            for (k, z) in buf.iter().take(bins).enumerate() {
                grids[(c * bins + k) * frames + f] = (z.norm() + LOG_FLOOR).ln();
            }
        }
    }
    let grids = Tensor::new(vec![IMU_CHANNELS, bins, frames], grids)?;
    Spectrogram::new(grids, n_fft, hop, clip.sample_rate_hz())
}

/// Per-channel affine standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Population mean and standard deviation of one spectrogram, unfloored.
    pub fn of(spec: &Spectrogram) -> Self {
        welford(std::slice::from_ref(spec))
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

fn welford(specs: &[Spectrogram]) -> ChannelStats {
    let channels = specs[0].channels();
    let per = specs[0].bins() * specs[0].frames();
    let mut mean = vec![0.0; channels];
    let mut m2 = vec![0.0; channels];
    let mut count = vec![0usize; channels];
    for spec in specs {
        for (c, chunk) in spec.grids().data().chunks(per).enumerate() {
            for &x in chunk {
                count[c] += 1;
                let delta = x - mean[c];
                mean[c] += delta / count[c] as f64;
                m2[c] += delta * (x - mean[c]);
            }
        }
    }
    let std = m2
        .iter()
        .zip(&count)
        .map(|(m, &n)| (m / n as f64).sqrt())
        .collect();
    ChannelStats { mean, std }
}

/// Per-channel mean and standard deviation over a collection; `std` is floored at `STD_FLOOR`.
pub fn fit_normalizer(specs: &[Spectrogram]) -> Result<ChannelStats> {
    let first = specs.first().ok_or(Error::NoData)?;
    if specs.iter().any(|s| s.grids().shape() != first.grids().shape()) {
        return Err(Error::Shape("spectrograms differ in shape".into()));
    }
    let mut stats = welford(specs);
    for s in &mut stats.std {
        *s = s.max(STD_FLOOR);
    }
    Ok(stats)
}

fn check_stats(spec: &Spectrogram, stats: &ChannelStats) -> Result<()> {
    if stats.mean.len() != spec.channels() || stats.std.len() != spec.channels() {
        return Err(Error::Shape(format!(
            "statistics cover {} channels, spectrogram has {}",
            stats.mean.len(),
            spec.channels()
        )));
    }
    if let Some((channel, &std)) = stats.std.iter().enumerate().find(|(_, s)| !(**s > 0.0)) {
        return Err(Error::DegenerateStatistics { channel, std });
    }
    Ok(())
}

fn per_channel_affine(spec: &Spectrogram, f: impl Fn(usize, f64) -> f64) -> Result<Spectrogram> {
    let per = spec.bins() * spec.frames();
    let data = spec
        .grids()
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(i / per, x))
        .collect();
    let grids = Tensor::new(spec.grids().shape().to_vec(), data)?;
    Spectrogram::new(grids, spec.n_fft, spec.hop, spec.sample_rate_hz)
}

/// `(x - mean) / std` per channel.
pub fn normalize_spectrogram(spec: &Spectrogram, stats: &ChannelStats) -> Result<Spectrogram> {
    check_stats(spec, stats)?;
    per_channel_affine(spec, |c, x| (x - stats.mean[c]) / stats.std[c])
}

/// Inverse of [`normalize_spectrogram`].
pub fn denormalize_spectrogram(spec: &Spectrogram, stats: &ChannelStats) -> Result<Spectrogram> {
    check_stats(spec, stats)?;
    per_channel_affine(spec, |c, x| x * stats.std[c] + stats.mean[c])
}
