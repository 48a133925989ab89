//! Clip records, manifest loading, frame decoding, and epoch pairing.
//!
//! The [`Dataset`] wrapper owns an in-memory decode cache and the audit
//! counters that the protocol tests assert on: BASELINE must read zero
//! depth-train tensors, UMAFD must read zero depth-train labels.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use image::imageops::FilterType;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::ops::Scalar;
use crate::rng::{self, Purpose};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Rgb,
    Depth,
}

impl Modality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Depth => "depth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One manifest row. `frame_dir` is resolved against the dataset root at
/// load time.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub modality: Modality,
    pub split: Split,
    /// 0 = other, 1 = fall. Present for RGB TRAIN and all TEST records;
    /// depth TRAIN may carry one but training never reads it.
    pub label: Option<u8>,
    pub frame_dir: PathBuf,
}

/// Decoded clip: 3 x T x H x W in [0,1]. Depth-train labels are stripped at
/// decode time so tensors handed to the trainer carry no target labels.
#[derive(Debug, Clone)]
pub struct ClipTensor<S> {
    pub data: Arc<Tensor4<S>>,
    pub modality: Modality,
    pub label: Option<u8>,
}

/// One training batch: one labeled RGB clip and one depth clip whose label,
/// if any, is ignored.
#[derive(Debug, Clone)]
pub struct PairedBatch<S> {
    pub rgb: ClipTensor<S>,
    pub depth: ClipTensor<S>,
}

/// Synthetic corpus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_train_pairs: usize,
    pub n_test_depth: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { n_train_pairs: 10, n_test_depth: 10, t: 8, h: 256, w: 256, noise_level: 0.0, seed: 0 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train_pairs == 0 || self.n_test_depth == 0 {
            return Err(Error::Config("synth clip counts must be > 0".into()));
        }
        if self.t < 8 || self.h < 8 || self.w < 8 {
            return Err(Error::Config("synth dimensions must be >= 8".into()));
        }
        if !self.noise_level.is_finite() || self.noise_level < 0.0 {
            return Err(Error::Config("noise_level must be finite and >= 0".into()));
        }
        Ok(())
    }
}

// ── Manifest ────────────────────────────────────────────────────────────────

/// Reads `<root>/manifest.csv`, resolving frame dirs and validating the
/// label invariants (RGB TRAIN and all TEST rows must be labeled).
pub fn load_manifest(root: &Path) -> Result<Vec<ClipRecord>> {
    let manifest = root.join("manifest.csv");
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&manifest)
        .map_err(|e| Error::file(&manifest, e))?;
    let headers = reader.headers().map_err(|e| Error::file(&manifest, e))?.clone();
    let expected = ["clip_id", "modality", "split", "label", "frame_dir"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Schema(format!(
            "manifest header must be `{}`, got `{}`",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::file(&manifest, e))?;
        let field = |j: usize| row.get(j).unwrap_or("").trim().to_string();
        let clip_id = field(0);
        let modality = match field(1).as_str() {
            "rgb" => Modality::Rgb,
            "depth" => Modality::Depth,
            other => return Err(Error::Schema(format!("row {}: unknown modality `{other}`", i + 2))),
        };
        let split = match field(2).as_str() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(Error::Schema(format!("row {}: unknown split `{other}`", i + 2))),
        };
        let label = match field(3).as_str() {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            other => return Err(Error::Schema(format!("row {}: label must be 0, 1 or empty, got `{other}`", i + 2))),
        };
        let label_required = split == Split::Test || (split == Split::Train && modality == Modality::Rgb);
        if label_required && label.is_none() {
            return Err(Error::Schema(format!("row {}: {} {} clip `{clip_id}` requires a label", i + 2, modality.as_str(), split.as_str())));
        }
        let dir = {
            let raw = PathBuf::from(field(4));
            if raw.is_absolute() {
                raw
            } else {
                root.join(raw)
            }
        };
        if !dir.is_dir() {
            return Err(Error::file(&dir, format!("frame_dir for clip `{clip_id}` does not exist")));
        }
        records.push(ClipRecord { clip_id, modality, split, label, frame_dir: dir });
    }
    Ok(records)
}

// ── Decoding ────────────────────────────────────────────────────────────────

/// Uniform temporal sampling: index of output frame `i` among `n` source
/// frames.
pub fn frame_index(i: usize, n: usize, t: usize) -> usize {
    if n == 0 || t <= 1 {
        return 0;
    }
    i * (n - 1) / (t - 1)
}

fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::file(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().map_or(false, |x| x == "png")
                && p.file_stem().map_or(false, |s| s.to_string_lossy().starts_with("frame_"))
        })
        .collect();
    frames.sort();
    if frames.is_empty() {
        return Err(Error::Data(format!("no frames in {}", dir.display())));
    }
    Ok(frames)
}

/// Decodes one clip to a (3, T, H, W) tensor in [0,1]: frames sampled
/// uniformly, bilinear resize to (h, w), 8-bit RGB scaled by 1/255, 16-bit
/// depth scaled by 1/65535 and replicated to three channels. Depth-train
/// labels are dropped (the target modality is treated as unlabeled).
pub fn decode_clip<S: Scalar>(record: &ClipRecord, t: usize, h: usize, w: usize) -> Result<ClipTensor<S>> {
    let frames = frame_paths(&record.frame_dir)?;
    let mut out = Tensor4::zeros(3, t, h, w);
    for i in 0..t {
        let path = &frames[frame_index(i, frames.len(), t)];
        let img = image::open(path).map_err(|e| Error::Data(format!("unreadable image {}: {e}", path.display())))?;
        match record.modality {
            Modality::Rgb => {
                let rgb = img.into_rgb8();
                let rgb = if (rgb.width(), rgb.height()) == (w as u32, h as u32) {
                    rgb
                } else {
                    image::imageops::resize(&rgb, w as u32, h as u32, FilterType::Triangle)
                };
                for (y, x, c) in iter_yxc(h, w) {
                    let v = rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0;
                    out.set(c, i, y, x, S::from_f64(v));
                }
            }
            Modality::Depth => {
                let gray = img.into_luma16();
                let gray = if (gray.width(), gray.height()) == (w as u32, h as u32) {
                    gray
                } else {
                    image::imageops::resize(&gray, w as u32, h as u32, FilterType::Triangle)
                };
                for y in 0..h {
                    for x in 0..w {
                        let v = gray.get_pixel(x as u32, y as u32)[0] as f64 / 65535.0;
                        let s = S::from_f64(v);
                        for c in 0..3 {
                            out.set(c, i, y, x, s);
                        }
                    }
                }
            }
        }
    }
    let label = if record.modality == Modality::Depth && record.split == Split::Train { None } else { record.label };
    Ok(ClipTensor { data: Arc::new(out), modality: record.modality, label })
}

fn iter_yxc(h: usize, w: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..h).flat_map(move |y| (0..w).flat_map(move |x| (0..3).map(move |c| (y, x, c))))
}

// ── Pairing ─────────────────────────────────────────────────────────────────

/// Deterministic shuffle of records for one epoch stream.
pub fn shuffled(records: &[ClipRecord], purpose: Purpose, seed: u64, epoch: u64) -> Vec<ClipRecord> {
    let mut out = records.to_vec();
    out.shuffle(&mut rng::stream(seed, purpose, epoch));
    out
}

/// Random pairing for one epoch: independent permutations of each side,
/// truncated to the shorter length. Every RGB record is used at most once.
pub fn make_pairs(
    rgb: &[ClipRecord],
    depth: &[ClipRecord],
    seed: u64,
    epoch: u64,
) -> Result<Vec<(ClipRecord, ClipRecord)>> {
    if rgb.is_empty() || depth.is_empty() {
        return Err(Error::Data("make_pairs requires non-empty rgb and depth lists".into()));
    }
    if let Some(r) = rgb.iter().find(|r| r.label.is_none()) {
        return Err(Error::Data(format!("rgb record `{}` is unlabeled", r.clip_id)));
    }
    let r = shuffled(rgb, Purpose::ShuffleRgb, seed, epoch);
    let d = shuffled(depth, Purpose::ShuffleDepth, seed, epoch);
    Ok(r.into_iter().zip(d).collect())
}

// ── Dataset with audit counters ─────────────────────────────────────────────

/// Counts of reads the protocols must never perform. Tensor reads count
/// logical decode requests (the cache does not hide them).
#[derive(Debug, Default)]
pub struct AuditCounters {
    depth_train_tensor_reads: AtomicU64,
    depth_train_label_reads: AtomicU64,
}

impl AuditCounters {
    pub fn depth_train_tensor_reads(&self) -> u64 {
        self.depth_train_tensor_reads.load(Ordering::Relaxed)
    }
    pub fn depth_train_label_reads(&self) -> u64 {
        self.depth_train_label_reads.load(Ordering::Relaxed)
    }
    pub fn reset(&self) {
        self.depth_train_tensor_reads.store(0, Ordering::Relaxed);
        self.depth_train_label_reads.store(0, Ordering::Relaxed);
    }
}

/// Manifest plus decode cache plus audit counters. All tensor and label
/// access during training and evaluation goes through this type.
pub struct Dataset {
    pub root: PathBuf,
    pub records: Vec<ClipRecord>,
    dims: (usize, usize, usize),
    cache: Mutex<HashMap<String, ClipTensor<f32>>>,
    pub audit: AuditCounters,
}

impl Dataset {
    /// Opens a dataset root; `dims` is the configured (T, H, W).
    pub fn open(root: &Path, dims: (usize, usize, usize)) -> Result<Self> {
        let records = load_manifest(root)?;
        Ok(Dataset {
            root: root.to_path_buf(),
            records,
            dims,
            cache: Mutex::new(HashMap::new()),
            audit: AuditCounters::default(),
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn select(&self, modality: Modality, split: Split) -> Vec<ClipRecord> {
        self.records.iter().filter(|r| r.modality == modality && r.split == split).cloned().collect()
    }

    /// Decoded tensor for one record, cached after the first request.
    /// Counts as a depth-train tensor read when applicable.
    pub fn clip_tensor(&self, record: &ClipRecord) -> Result<ClipTensor<f32>> {
        if record.modality == Modality::Depth && record.split == Split::Train {
            self.audit.depth_train_tensor_reads.fetch_add(1, Ordering::Relaxed);
        }
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&record.clip_id) {
            return Ok(hit.clone());
        }
        let (t, h, w) = self.dims;
        let decoded = decode_clip::<f32>(record, t, h, w)?;
        self.cache.lock().expect("cache lock").insert(record.clip_id.clone(), decoded.clone());
        Ok(decoded)
    }

    /// Label for a training record; the only label path the trainer uses.
    /// Counts as a depth-train label read when applicable.
    pub fn train_label(&self, record: &ClipRecord) -> Result<u8> {
        if record.modality == Modality::Depth && record.split == Split::Train {
            self.audit.depth_train_label_reads.fetch_add(1, Ordering::Relaxed);
        }
        record.label.ok_or_else(|| Error::Data(format!("clip `{}` has no label", record.clip_id)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, modality: Modality, split: Split, label: Option<u8>) -> ClipRecord {
        ClipRecord { clip_id: id.into(), modality, split, label, frame_dir: PathBuf::from(".") }
    }

    #[test]
    fn frame_index_identity_when_counts_match() {
        for i in 0..8 {
            assert_eq!(frame_index(i, 8, 8), i);
        }
    }

    #[test]
    fn frame_index_uniform_stride_for_double_length() {
        let t = 8;
        let n = 16;
        let idx: Vec<usize> = (0..t).map(|i| frame_index(i, n, t)).collect();
        assert_eq!(idx, vec![0, 2, 4, 6, 8, 10, 12, 15]);
        for w in idx.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn frame_index_repeats_when_short() {
        let idx: Vec<usize> = (0..8).map(|i| frame_index(i, 3, 8)).collect();
        assert_eq!(idx, vec![0, 0, 0, 0, 1, 1, 1, 2]);
    }

    #[test]
    fn make_pairs_is_deterministic_and_exhaustive() {
        let rgb: Vec<ClipRecord> = (0..5).map(|i| rec(&format!("r{i}"), Modality::Rgb, Split::Train, Some((i % 2) as u8))).collect();
        let depth: Vec<ClipRecord> = (0..5).map(|i| rec(&format!("d{i}"), Modality::Depth, Split::Train, None)).collect();
        let a = make_pairs(&rgb, &depth, 7, 0).unwrap();
        let b = make_pairs(&rgb, &depth, 7, 0).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(
            a.iter().map(|(r, d)| (r.clip_id.clone(), d.clip_id.clone())).collect::<Vec<_>>(),
            b.iter().map(|(r, d)| (r.clip_id.clone(), d.clip_id.clone())).collect::<Vec<_>>()
        );
        // Each rgb clip appears exactly once.
        let mut ids: Vec<&str> = a.iter().map(|(r, _)| r.clip_id.as_str()).collect();
        ids.sort();
        assert_eq!(ids, vec!["r0", "r1", "r2", "r3", "r4"]);
    }

    #[test]
    fn make_pairs_rejects_empty_and_unlabeled() {
        let rgb = vec![rec("r0", Modality::Rgb, Split::Train, Some(1))];
        let depth = vec![rec("d0", Modality::Depth, Split::Train, None)];
        assert!(make_pairs(&[], &depth, 0, 0).is_err());
        assert!(make_pairs(&rgb, &[], 0, 0).is_err());
        let bad = vec![rec("r1", Modality::Rgb, Split::Train, None)];
        assert!(make_pairs(&bad, &depth, 0, 0).is_err());
    }

    #[test]
    fn pair_permutations_differ_across_seeds() {
        let rgb: Vec<ClipRecord> = (0..10).map(|i| rec(&format!("r{i}"), Modality::Rgb, Split::Train, Some(0))).collect();
        let depth: Vec<ClipRecord> = (0..10).map(|i| rec(&format!("d{i}"), Modality::Depth, Split::Train, None)).collect();
        let mut differing = 0;
        for s in 0..100u64 {
            let a = make_pairs(&rgb, &depth, s, 0).unwrap();
            let b = make_pairs(&rgb, &depth, s + 1, 0).unwrap();
            let ka: Vec<_> = a.iter().map(|(r, d)| (r.clip_id.clone(), d.clip_id.clone())).collect();
            let kb: Vec<_> = b.iter().map(|(r, d)| (r.clip_id.clone(), d.clip_id.clone())).collect();
            if ka != kb {
                differing += 1;
            }
        }
        assert!(differing >= 95, "only {differing}/100 seed pairs differ");
    }

    #[test]
    fn every_record_appears_across_epochs() {
        let rgb: Vec<ClipRecord> = (0..7).map(|i| rec(&format!("r{i}"), Modality::Rgb, Split::Train, Some(0))).collect();
        let depth: Vec<ClipRecord> = (0..9).map(|i| rec(&format!("d{i}"), Modality::Depth, Split::Train, None)).collect();
        let mut seen_rgb = std::collections::HashSet::new();
        let mut seen_depth = std::collections::HashSet::new();
        for epoch in 0..1000 {
            for (r, d) in make_pairs(&rgb, &depth, 42, epoch).unwrap() {
                seen_rgb.insert(r.clip_id);
                seen_depth.insert(d.clip_id);
            }
        }
        assert_eq!(seen_rgb.len(), 7);
        assert_eq!(seen_depth.len(), 9);
    }
}
