//! On-disk datasets: a JSON manifest plus one binary blob per modality.
//!
//! Blob layout, little-endian:
//!
//! ```text
//! "EGOS"  u16 version  u32 record_count
//! record_count x { u32 clip_id, u8 rank, rank x u32 dim, f32 payload }
//! ```
//!
//! The manifest records, per clip, its labels and the byte offset of its
//! record in each blob.

use std::fs;
use std::io::{BufWriter, Cursor, Seek, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::generator::{GeneratorSpec, LabeledPair, LATENT_DIM};
use crate::encoders::VideoClip;
use crate::error::{Error, Result};
use crate::numerics::checkpoint::{read_header, read_tensor_body, read_u32, write_tensor_body, MAGIC};
use crate::numerics::Tensor;
use crate::signal::ImuClip;

pub const BLOB_VERSION: u16 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const VIDEO_BLOB: &str = "video.bin";
pub const MOTION_BLOB: &str = "motion.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: u32,
    pub subject_id: u32,
    pub action_label: usize,
    pub video_offset: u64,
    pub motion_offset: u64,
    pub latent: [f64; LATENT_DIM],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u16,
    pub seed: u64,
    pub n_pairs: usize,
    pub num_classes: usize,
    pub video_fps: f64,
    pub imu_rate_hz: f64,
    pub video_blob: String,
    pub motion_blob: String,
    pub generator: GeneratorSpec,
    pub clips: Vec<ClipRecord>,
}

/// A dataset loaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub pairs: Vec<LabeledPair>,
}

fn encode_blob<'a>(records: impl Iterator<Item = (u32, &'a Tensor)>, count: usize) -> Result<(Vec<u8>, Vec<u64>)> {
    let mut cur = Cursor::new(Vec::new());
    cur.write_all(MAGIC)?;
    cur.write_all(&BLOB_VERSION.to_le_bytes())?;
    cur.write_all(&(count as u32).to_le_bytes())?;
    let mut offsets = Vec::with_capacity(count);
    for (id, tensor) in records {
        offsets.push(cur.stream_position()?);
        cur.write_all(&id.to_le_bytes())?;
        write_tensor_body(&mut cur, tensor)?;
    }
    Ok((cur.into_inner(), offsets))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

/// Writes `pairs` under `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, spec: &GeneratorSpec, pairs: &[LabeledPair]) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let motions: Vec<Tensor> = pairs.iter().map(|p| p.motion.to_tensor()).collect();
    let (video_bytes, video_offsets) =
        encode_blob(pairs.iter().map(|p| (p.clip_id, p.video.tensor())), pairs.len())?;
    let (motion_bytes, motion_offsets) =
        encode_blob(pairs.iter().zip(&motions).map(|(p, m)| (p.clip_id, m)), pairs.len())?;
    let clips = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| ClipRecord {
            clip_id: p.clip_id,
            subject_id: p.subject_id,
            action_label: p.action_label,
            video_offset: video_offsets[i],
            motion_offset: motion_offsets[i],
            latent: p.latent,
        })
        .collect();
    let manifest = Manifest {
        format_version: BLOB_VERSION,
        seed: spec.seed,
        n_pairs: pairs.len(),
        num_classes: spec.num_classes,
        video_fps: spec.geometry.video_fps,
        imu_rate_hz: spec.geometry.imu_rate_hz,
        video_blob: VIDEO_BLOB.into(),
        motion_blob: MOTION_BLOB.into(),
        generator: spec.clone(),
        clips,
    };
    write_file(&dir.join(VIDEO_BLOB), &video_bytes)?;
    write_file(&dir.join(MOTION_BLOB), &motion_bytes)?;
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

fn read_blob(path: &Path, expected: usize) -> Result<Vec<(u64, u32, Tensor)>> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor::new(bytes.as_slice());
    read_header(&mut cur, BLOB_VERSION)?;
    let count = read_u32(&mut cur)? as usize;
    if count != expected {
        return Err(Error::Format(format!(
            "{} holds {count} records, manifest lists {expected}",
            path.display()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let offset = cur.position();
        let id = read_u32(&mut cur)?;
        let tensor = read_tensor_body(&mut cur)?;
        out.push((offset, id, tensor));
    }
    Ok(out)
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(manifest_path(dir))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != BLOB_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset version {} (expected {BLOB_VERSION})",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let n = manifest.clips.len();
    let videos = read_blob(&dir.join(&manifest.video_blob), n)?;
    let motions = read_blob(&dir.join(&manifest.motion_blob), n)?;
    let mut pairs = Vec::with_capacity(n);
    for ((rec, (voff, vid, vt)), (moff, mid, mt)) in manifest.clips.iter().zip(videos).zip(motions) {
        if vid != rec.clip_id || mid != rec.clip_id || voff != rec.video_offset || moff != rec.motion_offset {
            return Err(Error::Format(format!(
                "blob records out of step with manifest at clip {}",
                rec.clip_id
            )));
        }
        pairs.push(LabeledPair {
            clip_id: rec.clip_id,
            subject_id: rec.subject_id,
            action_label: rec.action_label,
            video: VideoClip::new(vt, manifest.video_fps)?,
            motion: ImuClip::from_tensor(&mt, manifest.imu_rate_hz)?,
            latent: rec.latent,
        });
    }
    Ok(Dataset { manifest, pairs })
}
