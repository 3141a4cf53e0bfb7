//! Feature container I/O, annotation parsing, frame sampling and the
//! train/test split.
//!
//! Feature files (`.v2cf`) are little-endian:
//!
//! ```text
//! "V2CF" | version u32 = 1 | feature_dim u32 | frame_count u32
//! pad_vector  : feature_dim x f32
//! frames      : frame_count x feature_dim x f32
//! ```

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, V2cError};

pub const FEATURE_MAGIC: &[u8; 4] = b"V2CF";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_EXTENSION: &str = "v2cf";
const HEADER_LEN: usize = 16;

/// Per-frame features of one video plus its pad frame, promoted to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub feature_dim: usize,
    pub pad_vector: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
}

impl FeatureFile {
    pub fn new(pad_vector: Vec<f64>, frames: Vec<Vec<f64>>) -> Result<Self> {
        let file = FeatureFile { feature_dim: pad_vector.len(), pad_vector, frames };
        file.validate()?;
        Ok(file)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(V2cError::Format("feature dimension is 0".into()));
        }
        if self.pad_vector.len() != self.feature_dim {
            return Err(V2cError::Format(format!("pad vector has {} values, feature_dim is {}", self.pad_vector.len(), self.feature_dim)));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.len() != self.feature_dim {
                return Err(V2cError::Format(format!("frame {i} has {} values, feature_dim is {}", f.len(), self.feature_dim)));
            }
        }
        let all = self.pad_vector.iter().chain(self.frames.iter().flatten());
        if let Some(v) = all.into_iter().find(|v| !v.is_finite()) {
            return Err(V2cError::Format(format!("non-finite feature value {v}")));
        }
        Ok(())
    }

    /// Serialize; values are stored as `f32`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let count = self.frames.len();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.feature_dim * (count + 1));
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&u32_field("feature_dim", self.feature_dim)?.to_le_bytes());
        out.extend_from_slice(&u32_field("frame_count", count)?.to_le_bytes());
        for v in self.pad_vector.iter().chain(self.frames.iter().flatten()) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(V2cError::Format(format!("feature file truncated: {} bytes, header needs {HEADER_LEN}", bytes.len())));
        }
        if &bytes[..4] != FEATURE_MAGIC {
            return Err(V2cError::Format(format!("bad magic {:?} (expected \"V2CF\")", String::from_utf8_lossy(&bytes[..4]))));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != FEATURE_VERSION {
            return Err(V2cError::Format(format!("unsupported feature file version {version}")));
        }
        let dim = word(8) as usize;
        let count = word(12) as usize;
        if dim == 0 {
            return Err(V2cError::Format("feature dimension is 0".into()));
        }
        let expected = (count + 1)
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| V2cError::Format("feature file header sizes overflow".into()))?;
        if bytes.len() != expected {
            return Err(V2cError::Format(format!(
                "feature file size {} does not match header (dim {dim}, {count} frames needs {expected} bytes)",
                bytes.len()
            )));
        }
        let mut values = bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
        let pad_vector: Vec<f64> = values.by_ref().take(dim).collect();
        let frames = (0..count).map(|_| values.by_ref().take(dim).collect()).collect();
        let file = FeatureFile { feature_dim: dim, pad_vector, frames };
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| V2cError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            V2cError::Format(m) => V2cError::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| V2cError::io(path, e))
    }

    /// Sample or pad to `n` frames.
    pub fn prepare(&self, n: usize) -> Result<SampledFrames> {
        sample_frames(&self.frames, &self.pad_vector, n)
    }
}

fn u32_field(what: &str, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| V2cError::Format(format!("{what} {v} does not fit in u32")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledFrames {
    pub rows: Vec<Vec<f64>>,
    /// `true` for real frames, `false` for pad frames.
    pub frame_mask: Vec<bool>,
}

/// Uniformly pick `n` of `k` frames (`floor(j*k/n)`) or append pad frames
/// when `k < n`.
pub fn sample_frames(frames: &[Vec<f64>], pad: &[f64], n: usize) -> Result<SampledFrames> {
    let k = frames.len();
    if k == 0 {
        return Err(V2cError::Format("video has no frames".into()));
    }
    if n == 0 {
        return Err(V2cError::Config("frame count n must be at least 1".into()));
    }
    if k >= n {
        let rows = (0..n).map(|j| frames[j * k / n].clone()).collect();
        Ok(SampledFrames { rows, frame_mask: vec![true; n] })
    } else {
        let mut rows = frames.to_vec();
        rows.resize(n, pad.to_vec());
        let mut frame_mask = vec![true; k];
        frame_mask.resize(n, false);
        Ok(SampledFrames { rows, frame_mask })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub video_id: String,
    pub command: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnnotationSet {
    pub records: Vec<Annotation>,
}

impl AnnotationSet {
    /// Parse `video_id<TAB>token token ...` lines; `#` lines and blank lines
    /// are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, command) = line
                .split_once('\t')
                .ok_or_else(|| V2cError::Parse { line: line_no, message: "missing TAB between video id and command".into() })?;
            let id = id.trim();
            if id.is_empty() {
                return Err(V2cError::Parse { line: line_no, message: "empty video id".into() });
            }
            let command = command.trim();
            if command.is_empty() {
                return Err(V2cError::Parse { line: line_no, message: format!("empty command for `{id}`") });
            }
            let tokens: Vec<String> = command.split(' ').filter(|t| !t.is_empty()).map(str::to_lowercase).collect();
            if let Some(first) = seen.insert(id.to_owned(), line_no) {
                return Err(V2cError::Parse { line: line_no, message: format!("duplicate video id `{id}` (first seen on line {first})") });
            }
            records.push(Annotation { video_id: id.to_owned(), command: tokens });
        }
        Ok(AnnotationSet { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| V2cError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.records.iter().map(|r| format!("{}\t{}\n", r.video_id, r.command.join(" "))).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn commands(&self) -> Vec<Vec<String>> {
        self.records.iter().map(|r| r.command.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// Every clip is an independent unit.
    #[default]
    ByClip,
    /// Clips sharing the id prefix before the last `_` stay together.
    ByVideo,
}

/// Group key for [`SplitMode::ByVideo`]: the id up to its last `_`.
pub fn video_group(video_id: &str) -> &str {
    video_id.rsplit_once('_').map_or(video_id, |(g, _)| g)
}

/// Seeded shuffle after sorting by id; the first `ceil(fraction * N)` units
/// go to training.
pub fn split(set: &AnnotationSet, train_fraction: f64, seed: u64, mode: SplitMode) -> Result<(AnnotationSet, AnnotationSet)> {
    if set.is_empty() {
        return Err(V2cError::Usage("cannot split an empty annotation set".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(V2cError::Usage(format!("train fraction {train_fraction} must lie in (0, 1)")));
    }
    let key = |a: &Annotation| -> String {
        match mode {
            SplitMode::ByClip => a.video_id.clone(),
            SplitMode::ByVideo => video_group(&a.video_id).to_owned(),
        }
    };
    let mut units: Vec<String> = set.records.iter().map(key).collect::<HashSet<_>>().into_iter().collect();
    units.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    units.shuffle(&mut rng);
    let n_train = (train_fraction * units.len() as f64).ceil() as usize;
    let train_units: HashSet<&String> = units[..n_train].iter().collect();

    let mut sorted = set.records.clone();
    sorted.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let (train, test): (Vec<_>, Vec<_>) = sorted.into_iter().partition(|a| train_units.contains(&key(a)));
    Ok((AnnotationSet { records: train }, AnnotationSet { records: test }))
}

/// One prepared (features, command) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub video_id: String,
    /// Exactly `n` rows.
    pub features: Vec<Vec<f64>>,
    pub frame_mask: Vec<bool>,
    pub command: Vec<String>,
}

impl Sample {
    pub fn prepare(video_id: &str, file: &FeatureFile, command: &[String], n: usize) -> Result<Self> {
        if command.len() + 1 > n {
            return Err(V2cError::Config(format!(
                "`{video_id}`: command has {} words, at most {} fit in {n} steps",
                command.len(),
                n.saturating_sub(1)
            )));
        }
        let sampled = file.prepare(n)?;
        Ok(Sample { video_id: video_id.to_owned(), features: sampled.rows, frame_mask: sampled.frame_mask, command: command.to_vec() })
    }
}

pub fn feature_path(dir: &Path, video_id: &str) -> std::path::PathBuf {
    dir.join(format!("{video_id}.{FEATURE_EXTENSION}"))
}

/// Load `<dir>/<video_id>.v2cf` for every annotation and prepare it to `n`
/// frames. When `expected_dim` is given every file must match it.
pub fn load_samples(dir: &Path, set: &AnnotationSet, n: usize, expected_dim: Option<usize>) -> Result<Vec<Sample>> {
    let mut dim = expected_dim;
    set.records
        .iter()
        .map(|rec| {
            let path = feature_path(dir, &rec.video_id);
            let file = FeatureFile::load(&path)?;
            match dim {
                Some(d) if d != file.feature_dim => {
                    return Err(V2cError::Config(format!(
                        "{}: feature dimension mismatch: expected {d}, found {}",
                        path.display(),
                        file.feature_dim
                    )))
                }
                None => dim = Some(file.feature_dim),
                _ => {}
            }
            Sample::prepare(&rec.video_id, &file, &rec.command, n)
        })
        .collect()
}
