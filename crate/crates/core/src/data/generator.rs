//! Synthetic paired clips with planted cross-modal structure.
//!
//! Every pair draws a subject, a class and a four-dimensional instance latent
//! `z`. The latent drives slow yaw/pitch head rotation in the gyroscope
//! channels; the video is a moving class pattern shifted by camera shake equal
//! to the low-passed integral of those same gyro channels. Matched clips
//! therefore share `z` while mismatched clips do not. Class identity is
//! carried by IMU tones and by the video pattern and drift, and a per-class
//! informativeness map can hide it from one modality.

use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::VideoClip;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::signal::{clip_length, ImuClip, IMU_CHANNELS, IMU_RATE_HZ};

pub const LATENT_DIM: usize = 4;

/// Gyro channels carrying head yaw and pitch; their integral moves the camera.
pub const YAW_CHANNEL: usize = 5;
pub const PITCH_CHANNEL: usize = 4;
const GRAVITY_CHANNEL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub channel: usize,
    pub freq_hz: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSignature {
    pub tones: Vec<Tone>,
}

impl MotionSignature {
    /// The tone with the largest amplitude.
    pub fn dominant(&self) -> Option<&Tone> {
        self.tones
            .iter()
            .max_by(|a, b| a.amplitude.total_cmp(&b.amplitude))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VideoSignature {
    pub pattern: usize,
    /// Drift of the pattern in pixels per second, `[x, y]`.
    pub drift: [f64; 2],
}

/// Which modality can tell a class apart from the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Informativeness {
    Both,
    /// The video of this class is rendered with the shared signature of the
    /// motion-only group, so only the IMU distinguishes it.
    MotionOnly,
    /// The IMU of this class uses the shared signature of the video-only group.
    VideoOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Geometry {
    pub duration_s: f64,
    pub imu_rate_hz: f64,
    pub video_fps: f64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            duration_s: 2.0,
            imu_rate_hz: IMU_RATE_HZ,
            video_fps: 4.0,
            height: 16,
            width: 16,
            channels: 3,
        }
    }
}

impl Geometry {
    pub fn imu_samples(&self) -> usize {
        clip_length(self.duration_s, self.imu_rate_hz)
    }

    pub fn video_frames(&self) -> usize {
        clip_length(self.duration_s, self.video_fps)
    }

    pub fn video_shape(&self) -> [usize; 4] {
        [self.video_frames(), self.height, self.width, self.channels]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub num_classes: usize,
    /// Relative class frequencies.
    pub class_weights: Vec<f64>,
    pub motion_signatures: Vec<MotionSignature>,
    pub video_signatures: Vec<VideoSignature>,
    pub informativeness: Vec<Informativeness>,
    pub n_subjects: usize,
    /// Standard deviation of additive IMU noise.
    pub motion_noise: f64,
    /// Standard deviation of additive pixel noise.
    pub video_noise: f64,
    /// Relative standard deviation of per-instance tone amplitudes.
    pub amplitude_jitter: f64,
    /// Standard deviation of per-subject accelerometer bias.
    pub subject_bias: f64,
    /// Angular velocity per unit of latent.
    pub head_motion_gain: f64,
    /// Zero-rate offset of the yaw and pitch gyros. It shows in the IMU but
    /// does not move the camera.
    pub gyro_bias: f64,
    /// Half-width in pixels of the uniform random pattern offset per clip.
    pub position_jitter: f64,
    /// Frequency of the latent-driven head rotation.
    pub head_motion_hz: f64,
    /// Pixels of camera shift per unit of integrated rotation.
    pub pixels_per_unit: f64,
    /// Grating wavelength of pattern 0 in pixels; patterns 1 and 2 add 2 and 4.
    pub pattern_wavelength: f64,
    pub geometry: Geometry,
    pub seed: u64,
}

/// Frequency of FFT bin `k` for the 64-point transform at the default IMU rate.
pub fn bin_hz(k: usize) -> f64 {
    k as f64 * IMU_RATE_HZ / 64.0
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        let tone = |channel, bin, amplitude| Tone {
            channel,
            freq_hz: bin_hz(bin),
            amplitude,
        };
        Self {
            num_classes: 4,
            class_weights: vec![0.27, 0.25, 0.24, 0.24],
            motion_signatures: vec![
                MotionSignature { tones: vec![tone(0, 4, 1.0), tone(3, 7, 0.5)] },
                MotionSignature { tones: vec![tone(1, 6, 1.0), tone(3, 10, 0.5)] },
                MotionSignature { tones: vec![tone(2, 9, 1.0), tone(0, 13, 0.5)] },
                MotionSignature { tones: vec![tone(0, 12, 1.0), tone(1, 3, 0.5)] },
            ],
            // one shared scene; classes differ in how it drifts across the view
            video_signatures: vec![
                VideoSignature { pattern: 0, drift: [3.0, 0.0] },
                VideoSignature { pattern: 0, drift: [0.0, 3.0] },
                VideoSignature { pattern: 0, drift: [-3.0, 0.0] },
                VideoSignature { pattern: 0, drift: [0.0, -3.0] },
            ],
            informativeness: vec![Informativeness::Both; 4],
            n_subjects: 40,
            motion_noise: 0.05,
            video_noise: 0.05,
            amplitude_jitter: 0.1,
            subject_bias: 0.05,
            head_motion_gain: 1.0,
            gyro_bias: 4.0,
            position_jitter: 8.0,
            head_motion_hz: 0.5,
            pixels_per_unit: 4.0,
            pattern_wavelength: 10.0,
            geometry: Geometry::default(),
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    /// Four classes where classes 0 and 1 share one video signature (only the
    /// IMU separates them) and classes 2 and 3 share one motion signature
    /// (only the video separates them).
    pub fn complementary() -> Self {
        let mut spec = Self::default();
        spec.informativeness = vec![
            Informativeness::MotionOnly,
            Informativeness::MotionOnly,
            Informativeness::VideoOnly,
            Informativeness::VideoOnly,
        ];
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGeneratorSpec(m));
        let k = self.num_classes;
        if k < 2 {
            return bad(format!("need at least 2 classes, got {k}"));
        }
        if self.class_weights.len() != k
            || self.motion_signatures.len() != k
            || self.video_signatures.len() != k
            || self.informativeness.len() != k
        {
            return bad(format!("per-class tables must all have {k} entries"));
        }
        if self.class_weights.iter().any(|w| !(*w >= 0.0)) || self.class_weights.iter().sum::<f64>() <= 0.0 {
            return bad("class weights must be non-negative with a positive sum".into());
        }
        let nyquist = self.geometry.imu_rate_hz / 2.0;
        for (c, sig) in self.motion_signatures.iter().enumerate() {
            for t in &sig.tones {
                if t.channel >= IMU_CHANNELS {
                    return bad(format!("class {c}: tone channel {} out of range", t.channel));
                }
                if !(t.freq_hz >= 0.0) || t.freq_hz >= nyquist {
                    return bad(format!(
                        "class {c}: tone at {} Hz is not below Nyquist ({nyquist} Hz)",
                        t.freq_hz
                    ));
                }
                if !t.amplitude.is_finite() {
                    return bad(format!("class {c}: non-finite tone amplitude"));
                }
            }
        }
        if self.head_motion_hz >= nyquist || !(self.head_motion_hz >= 0.0) {
            return bad(format!("head motion at {} Hz is not below Nyquist", self.head_motion_hz));
        }
        for (name, v) in [
            ("motion_noise", self.motion_noise),
            ("video_noise", self.video_noise),
            ("amplitude_jitter", self.amplitude_jitter),
            ("subject_bias", self.subject_bias),
            ("position_jitter", self.position_jitter),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if self.n_subjects == 0 {
            return bad("need at least one subject".into());
        }
        let g = &self.geometry;
        if !(g.duration_s > 0.0) || !(g.imu_rate_hz > 0.0) || !(g.video_fps > 0.0) {
            return bad("durations and rates must be positive".into());
        }
        if g.video_frames() == 0 || g.imu_samples() == 0 || g.height == 0 || g.width == 0 || g.channels == 0 {
            return bad(format!("degenerate clip geometry {g:?}"));
        }
        Ok(())
    }

    /// Motion signature actually rendered for `class`.
    pub fn effective_motion(&self, class: usize) -> &MotionSignature {
        self.group_representative(class, Informativeness::VideoOnly)
            .map(|c| &self.motion_signatures[c])
            .unwrap_or(&self.motion_signatures[class])
    }

    /// Video signature actually rendered for `class`.
    pub fn effective_video(&self, class: usize) -> &VideoSignature {
        self.group_representative(class, Informativeness::MotionOnly)
            .map(|c| &self.video_signatures[c])
            .unwrap_or(&self.video_signatures[class])
    }

    fn group_representative(&self, class: usize, group: Informativeness) -> Option<usize> {
        if self.informativeness[class] != group {
            return None;
        }
        self.informativeness.iter().position(|&i| i == group)
    }
}

/// One synchronized clip pair with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub clip_id: u32,
    pub subject_id: u32,
    pub action_label: usize,
    pub video: VideoClip,
    pub motion: ImuClip,
    /// Instance latent that drove both renderings.
    pub latent: [f64; LATENT_DIM],
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

fn clip_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const SUBJECT_STREAM: u64 = 1 << 40;

/// Accelerometer bias of a subject: gravity on z plus a small tilt.
fn subject_bias(spec: &GeneratorSpec, subject: u32) -> [f64; 3] {
    let mut rng = clip_rng(spec.seed, SUBJECT_STREAM + subject as u64);
    let mut b = [0.0; 3];
    for v in &mut b {
        *v = spec.subject_bias * normal(&mut rng);
    }
    b[GRAVITY_CHANNEL] += 1.0;
    b
}

/// Generates `n_pairs` pairs; pair `i` gets `clip_id = i` and depends only on `(seed, i)`.
pub fn generate_dataset(spec: &GeneratorSpec, n_pairs: usize) -> Result<Vec<LabeledPair>> {
    spec.validate()?;
    if n_pairs == 0 {
        return Err(Error::InvalidGeneratorSpec("n_pairs must be positive".into()));
    }
    let classes = WeightedIndex::new(&spec.class_weights)
        .map_err(|e| Error::InvalidGeneratorSpec(e.to_string()))?;
    (0..n_pairs as u32)
        .into_par_iter()
        .map(|id| generate_pair(spec, &classes, id))
        .collect()
}

fn generate_pair(spec: &GeneratorSpec, classes: &WeightedIndex<f64>, clip_id: u32) -> Result<LabeledPair> {
    let mut rng = clip_rng(spec.seed, clip_id as u64);
    let subject_id = rng.random_range(0..spec.n_subjects as u32);
    let label = classes.sample(&mut rng);
    let mut latent = [0.0; LATENT_DIM];
    for z in &mut latent {
        *z = normal(&mut rng);
    }
    let motion = render_motion(spec, label, subject_id, &latent, &mut rng)?;
    let video = render_video(spec, label, &motion, &mut rng)?;
    Ok(LabeledPair {
        clip_id,
        subject_id,
        action_label: label,
        video,
        motion,
        latent,
    })
}

fn render_motion<R: Rng>(
    spec: &GeneratorSpec,
    label: usize,
    subject: u32,
    latent: &[f64; LATENT_DIM],
    rng: &mut R,
) -> Result<ImuClip> {
    let g = &spec.geometry;
    let n = g.imu_samples();
    let mut channels: [Vec<f64>; IMU_CHANNELS] = Default::default();
    for ch in channels.iter_mut() {
        *ch = vec![0.0; n];
    }
    let bias = subject_bias(spec, subject);
    for (c, b) in bias.iter().enumerate() {
        channels[c].iter_mut().for_each(|v| *v += b);
    }
    for tone in &spec.effective_motion(label).tones {
        let amp = tone.amplitude * (1.0 + spec.amplitude_jitter * normal(rng));
        let phase = rng.random_range(0.0..2.0 * PI);
        let w = 2.0 * PI * tone.freq_hz / g.imu_rate_hz;
        for (t, v) in channels[tone.channel].iter_mut().enumerate() {
            *v += amp * (w * t as f64 + phase).sin();
        }
    }
    let w = 2.0 * PI * spec.head_motion_hz / g.imu_rate_hz;
    for t in 0..n {
        let (s, c) = (w * t as f64).sin_cos();
        channels[YAW_CHANNEL][t] += spec.gyro_bias + spec.head_motion_gain * (latent[0] * s + latent[1] * c);
        channels[PITCH_CHANNEL][t] += spec.gyro_bias + spec.head_motion_gain * (latent[2] * s + latent[3] * c);
    }
    for ch in channels.iter_mut() {
        for v in ch.iter_mut() {
            *v += spec.motion_noise * normal(rng);
            *v = *v as f32 as f64;
        }
    }
    ImuClip::from_channels(&channels, g.imu_rate_hz)
}

/// Camera displacement in pixels at every video frame: the running integral of
/// the bias-corrected yaw (x) and pitch (y) gyro channels, box-filtered over
/// one frame period.
pub fn camera_shake(spec: &GeneratorSpec, motion: &ImuClip) -> Vec<[f64; 2]> {
    let g = &spec.geometry;
    let dt = 1.0 / g.imu_rate_hz;
    let integrate = |ch: usize| -> Vec<f64> {
        let mut acc = 0.0;
        motion
            .channel(ch)
            .iter()
            .map(|w| {
                acc += (w - spec.gyro_bias) * dt;
                acc
            })
            .collect()
    };
    let yaw = integrate(YAW_CHANNEL);
    let pitch = integrate(PITCH_CHANNEL);
    let n = yaw.len();
    let half = ((g.imu_rate_hz / g.video_fps) / 2.0).round() as isize;
    (0..g.video_frames())
        .map(|f| {
            let center = ((f as f64 / g.video_fps) * g.imu_rate_hz).round() as isize;
            let lo = (center - half).max(0) as usize;
            let hi = ((center + half).min(n as isize - 1)) as usize;
            let span = (hi - lo + 1) as f64;
            let mean = |s: &[f64]| s[lo..=hi].iter().sum::<f64>() / span;
            [spec.pixels_per_unit * mean(&yaw), spec.pixels_per_unit * mean(&pitch)]
        })
        .collect()
}

/// Two-grating plaid for a pattern id: `(wavevector a, wavevector b, colour)`.
fn pattern_params(pattern: usize, base_wavelength: f64, channels: usize) -> ([f64; 2], [f64; 2], Vec<f64>) {
    let angle = 0.35 + pattern as f64 * 0.7;
    let wavelength = base_wavelength + 2.0 * (pattern % 3) as f64;
    let k = 1.0 / wavelength;
    let a = [k * angle.cos(), k * angle.sin()];
    let b = [-k * angle.sin() * 0.8, k * angle.cos() * 0.8];
    let colour = (0..channels)
        .map(|c| 0.55 + 0.45 * (2.0 * PI * (c as f64 / channels as f64 + pattern as f64 * 0.29)).cos())
        .collect();
    (a, b, colour)
}

fn render_video<R: Rng>(spec: &GeneratorSpec, label: usize, motion: &ImuClip, rng: &mut R) -> Result<VideoClip> {
    let g = &spec.geometry;
    let sig = spec.effective_video(label);
    let (ka, kb, colour) = pattern_params(sig.pattern, spec.pattern_wavelength, g.channels);
    let j = spec.position_jitter;
    let offset = [j * rng.random_range(-1.0..1.0), j * rng.random_range(-1.0..1.0)];
    let shake = camera_shake(spec, motion);
    let [frames, h, w, c] = g.video_shape();
    let mut data = Vec::with_capacity(frames * h * w * c);
    for (f, s) in shake.iter().enumerate() {
        let t = f as f64 / g.video_fps;
        let sx = offset[0] + sig.drift[0] * t + s[0];
        let sy = offset[1] + sig.drift[1] * t + s[1];
        for y in 0..h {
            for x in 0..w {
                let px = x as f64 - sx;
                let py = y as f64 - sy;
                let va = (2.0 * PI * (ka[0] * px + ka[1] * py)).sin();
                let vb = (2.0 * PI * (kb[0] * px + kb[1] * py)).sin();
                let p = 0.5 * (va + vb);
                for col in colour.iter().take(c) {
                    let v = 0.5 + 0.4 * p * col + spec.video_noise * normal(rng);
                    data.push(v.clamp(0.0, 1.0) as f32 as f64);
                }
            }
        }
    }
    VideoClip::new(Tensor::new(vec![frames, h, w, c], data)?, g.video_fps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        GeneratorSpec::default().validate().unwrap();
        GeneratorSpec::complementary().validate().unwrap();
    }

    #[test]
    fn rejects_tone_above_nyquist() {
        let mut spec = GeneratorSpec::default();
        spec.motion_signatures[1].tones[0].freq_hz = 99.0;
        let err = generate_dataset(&spec, 3).unwrap_err();
        assert!(err.to_string().starts_with("invalid generator spec"));
    }

    #[test]
    fn geometry_of_generated_pairs() {
        let pairs = generate_dataset(&GeneratorSpec::default(), 5).unwrap();
        for (i, p) in pairs.iter().enumerate() {
            assert_eq!(p.clip_id, i as u32);
            assert_eq!(p.motion.len(), 396);
            assert_eq!(p.video.geometry(), [8, 16, 16, 3]);
            assert!((p.motion.duration_s() - p.video.frames() as f64 / p.video.frame_rate_hz()).abs() < 1e-12);
        }
    }

    #[test]
    fn pairs_depend_only_on_seed_and_id() {
        let spec = GeneratorSpec::default();
        let ten = generate_dataset(&spec, 10).unwrap();
        let four = generate_dataset(&spec, 4).unwrap();
        assert_eq!(&ten[..4], &four[..]);
    }

    #[test]
    fn informativeness_groups_share_signatures() {
        let spec = GeneratorSpec::complementary();
        assert_eq!(spec.effective_video(1), spec.effective_video(0));
        assert_ne!(spec.effective_motion(1), spec.effective_motion(0));
        assert_eq!(spec.effective_motion(3), spec.effective_motion(2));
        assert_ne!(spec.effective_video(3), spec.effective_video(2));
    }
}
