//! Persisted multi-view datasets: a JSON manifest plus one raw tensor
//! file per split. Split files are little-endian "MVTD" containers with
//! a trailing SHA-256 so corruption surfaces as a format error.
//!
//! Layout per split file:
//!   magic "MVTD" | u32 version | u32 count | u32 views | u32 h | u32 w |
//!   u32 channels | count x (u32 label | u64 shape id | views*h*w*c f32)
//!   | 32-byte SHA-256 of everything before it

use crate::error::{DataError, Result};
use crate::render::render_views;
use crate::shapes::{ShapeCategory, ShapeSpec, CLASS_NAMES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

const MAGIC: &[u8; 4] = b"MVTD";
const FORMAT_VERSION: u32 = 1;
/// Resampling budget per sample before degeneracy becomes an error.
const MAX_RESAMPLE_ATTEMPTS: usize = 64;

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub seed: u64,
    pub views: usize,
    pub img_h: usize,
    pub img_w: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views == 0 || self.img_h == 0 || self.img_w == 0 {
            return Err(DataError::Config(format!(
                "geometry must be positive: views={} h={} w={}",
                self.views, self.img_h, self.img_w
            )));
        }
        if self.train == 0 || self.val == 0 || self.test == 0 {
            return Err(DataError::Config(format!(
                "every split needs at least one sample: train={} val={} test={}",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub count: usize,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub classes: Vec<String>,
    pub views: usize,
    pub img_h: usize,
    pub img_w: usize,
    pub channels: usize,
    pub splits: BTreeMap<String, SplitInfo>,
}

/// One sample: l views of h*w*c pixels in [0,1] plus its label and a
/// dataset-wide unique shape id.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub views: Vec<Vec<f32>>,
    pub label: usize,
    pub shape_id: u64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn render_split(
    rng: &mut ChaCha8Rng,
    cfg: &DatasetConfig,
    count: usize,
    next_id: &mut u64,
) -> Result<Vec<ViewSet>> {
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        // Round-robin labels keep every split balanced within one sample.
        let category = ShapeCategory::ALL[i % ShapeCategory::ALL.len()];
        let mut attempts = 0;
        let views = loop {
            attempts += 1;
            let spec = ShapeSpec::sample(category, rng);
            match render_views(&spec, cfg.views, cfg.img_w, cfg.img_h) {
                Ok(v) => break v,
                Err(DataError::Degenerate { .. }) if attempts < MAX_RESAMPLE_ATTEMPTS => continue,
                Err(DataError::Degenerate { category, .. }) => {
                    return Err(DataError::Degenerate { category, attempts })
                }
                Err(e) => return Err(e),
            }
        };
        samples.push(ViewSet {
            views,
            label: category.label(),
            shape_id: *next_id,
        });
        *next_id += 1;
    }
    Ok(samples)
}

fn encode_split(cfg: &DatasetConfig, samples: &[ViewSet]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    for v in [
        FORMAT_VERSION,
        samples.len() as u32,
        cfg.views as u32,
        cfg.img_h as u32,
        cfg.img_w as u32,
        1u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for s in samples {
        buf.extend_from_slice(&(s.label as u32).to_le_bytes());
        buf.extend_from_slice(&s.shape_id.to_le_bytes());
        for view in &s.views {
            for &px in view {
                buf.extend_from_slice(&px.to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

/// Generate, render, and persist all three splits; returns the manifest
/// that was written alongside them.
pub fn make_dataset(dir: &Path, cfg: &DatasetConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut next_id = 0u64;
    let mut splits = BTreeMap::new();
    for (name, count) in SPLIT_NAMES
        .iter()
        .zip([cfg.train, cfg.val, cfg.test])
    {
        let samples = render_split(&mut rng, cfg, count, &mut next_id)?;
        let bytes = encode_split(cfg, &samples);
        let file = format!("{name}.mvtd");
        let path = dir.join(&file);
        std::fs::write(&path, &bytes).map_err(|e| DataError::io(&path, e))?;
        splits.insert(
            name.to_string(),
            SplitInfo {
                count,
                file,
                sha256: hex(&Sha256::digest(&bytes)),
            },
        );
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        seed: cfg.seed,
        classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        views: cfg.views,
        img_h: cfg.img_h,
        img_w: cfg.img_w,
        channels: 1,
        splits,
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| DataError::Format(format!("manifest serialization failed: {e}")))?;
    std::fs::write(&manifest_path, json + "\n").map_err(|e| DataError::io(&manifest_path, e))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let bytes = std::fs::read(&path).map_err(|e| DataError::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_slice(&bytes)
        .map_err(|e| DataError::Format(format!("manifest parse failed: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(DataError::Format(format!(
            "manifest version {} unsupported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(DataError::Format(format!(
                "split file truncated: need {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Load one split, verifying the trailing checksum and that the header
/// agrees with the manifest geometry.
pub fn load_split(dir: &Path, manifest: &DatasetManifest, name: &str) -> Result<Vec<ViewSet>> {
    let info = manifest
        .splits
        .get(name)
        .ok_or_else(|| DataError::Format(format!("manifest has no split {name:?}")))?;
    let path = dir.join(&info.file);
    let bytes = std::fs::read(&path).map_err(|e| DataError::io(&path, e))?;
    if bytes.len() < 32 {
        return Err(DataError::Format(format!(
            "split file {} too short for a checksum",
            info.file
        )));
    }
    let (body, stored) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != stored {
        return Err(DataError::Format(format!(
            "checksum mismatch in {}",
            info.file
        )));
    }
    let mut c = Cursor { buf: body, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(DataError::Format(format!("bad magic in {}", info.file)));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(DataError::Format(format!(
            "split version {version} unsupported (expected {FORMAT_VERSION})"
        )));
    }
    let count = c.u32()? as usize;
    let views = c.u32()? as usize;
    let img_h = c.u32()? as usize;
    let img_w = c.u32()? as usize;
    let channels = c.u32()? as usize;
    if count != info.count
        || views != manifest.views
        || img_h != manifest.img_h
        || img_w != manifest.img_w
        || channels != manifest.channels
    {
        return Err(DataError::Format(format!(
            "split header of {} disagrees with manifest: \
             count {count} views {views} {img_h}x{img_w}x{channels}",
            info.file
        )));
    }
    let pixels = img_h * img_w * channels;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let label = c.u32()? as usize;
        if label >= manifest.classes.len() {
            return Err(DataError::Format(format!(
                "label {label} out of range for {} classes",
                manifest.classes.len()
            )));
        }
        let shape_id = c.u64()?;
        let mut vs = Vec::with_capacity(views);
        for _ in 0..views {
            let raw = c.take(pixels * 4)?;
            let mut view = Vec::with_capacity(pixels);
            for chunk in raw.chunks_exact(4) {
                view.push(f32::from_le_bytes(chunk.try_into().unwrap()));
            }
            vs.push(view);
        }
        samples.push(ViewSet {
            views: vs,
            label,
            shape_id,
        });
    }
    if c.pos != body.len() {
        return Err(DataError::Format(format!(
            "{} has {} trailing bytes",
            info.file,
            body.len() - c.pos
        )));
    }
    Ok(samples)
}
