//! Frame-sequence datasets: window indexing, example loading and
//! augmentation.
//!
//! Layout: `root/<sequence_id>/frame_%04d.png`, optionally with
//! `root/index.txt` listing `<sequence_id> <start>` per line.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frame::Frame;

pub const INDEX_FILE: &str = "index.txt";
/// Default quintuplet stride for evaluation sets.
pub const EVAL_STRIDE: usize = 2;

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:04}.png")
}

fn parse_frame_number(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    if digits.len() < 4 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowMode {
    /// 7-frame windows: inputs at offsets 0, 2, 4, 6 and target 3.
    Septuplet,
    /// 5-frame windows: inputs at offsets 0, 1, 3, 4 and target 2.
    Quintuplet,
}

impl WindowMode {
    pub fn span(self) -> usize {
        match self {
            WindowMode::Septuplet => 7,
            WindowMode::Quintuplet => 5,
        }
    }

    pub fn input_offsets(self) -> [usize; 4] {
        match self {
            WindowMode::Septuplet => [0, 2, 4, 6],
            WindowMode::Quintuplet => [0, 1, 3, 4],
        }
    }

    pub fn target_offset(self) -> usize {
        match self {
            WindowMode::Septuplet => 3,
            WindowMode::Quintuplet => 2,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "septuplet" => Ok(WindowMode::Septuplet),
            "quintuplet" => Ok(WindowMode::Quintuplet),
            _ => Err(Error::Config(format!("unknown window mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct IndexEntry {
    pub sequence: String,
    pub start: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceIndex {
    pub root: PathBuf,
    pub mode: WindowMode,
    pub entries: Vec<IndexEntry>,
}

impl SequenceIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frame_path(&self, sequence: &str, i: usize) -> PathBuf {
        self.root.join(sequence).join(frame_file_name(i))
    }

    /// Reads an index file; the dataset root is the file's directory.
    pub fn from_file(path: &Path, mode: WindowMode) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(seq), Some(start), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Validation(format!("{}:{}: expected \"<sequence> <start>\"", path.display(), n + 1)));
            };
            let start = start
                .parse()
                .map_err(|_| Error::Validation(format!("{}:{}: bad start {start:?}", path.display(), n + 1)))?;
            entries.push(IndexEntry {
                sequence: seq.to_string(),
                start,
            });
        }
        let idx = Self { root, mode, entries };
        idx.verify()?;
        Ok(idx)
    }

    /// Fails with every window that lacks a frame on disk.
    pub fn verify(&self) -> Result<()> {
        let mut missing = Vec::new();
        for e in &self.entries {
            for k in 0..self.mode.span() {
                let p = self.frame_path(&e.sequence, e.start + k);
                if !p.is_file() {
                    missing.push(p.display().to_string());
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!("index refers to missing frames: {}", missing.join(", "))))
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for e in &self.entries {
            let _ = writeln!(s, "{} {}", e.sequence, e.start);
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Indexes every sequence directory under `root`, or reads
/// `root/index.txt` when present. Order is by sequence id, then start.
pub fn index_dataset(root: &Path, mode: WindowMode, stride: usize) -> Result<SequenceIndex> {
    if stride == 0 {
        return Err(Error::Validation("window stride must be at least 1".into()));
    }
    let listed = root.join(INDEX_FILE);
    if listed.is_file() {
        let mut idx = SequenceIndex::from_file(&listed, mode)?;
        idx.entries.sort();
        return Ok(idx);
    }
    let read = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs: Vec<(String, PathBuf)> = Vec::new();
    for d in read {
        let d = d.map_err(|e| Error::io(root, e))?;
        if d.path().is_dir() {
            dirs.push((d.file_name().to_string_lossy().into_owned(), d.path()));
        }
    }
    dirs.sort();
    let span = mode.span();
    let mut entries = Vec::new();
    for (name, dir) in dirs {
        let mut frames = BTreeSet::new();
        for f in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let f = f.map_err(|e| Error::io(&dir, e))?;
            if let Some(i) = parse_frame_number(&f.file_name().to_string_lossy()) {
                frames.insert(i);
            }
        }
        let (Some(&first), Some(&last)) = (frames.first(), frames.last()) else {
            continue;
        };
        let before = entries.len();
        let mut s = first;
        while s + span <= last + 1 {
            if (s..s + span).all(|i| frames.contains(&i)) {
                entries.push(IndexEntry {
                    sequence: name.clone(),
                    start: s,
                });
            }
            s += stride;
        }
        if entries.len() == before {
            log::warn!("sequence {name} has no complete {span}-frame window");
        }
    }
    Ok(SequenceIndex {
        root: root.to_path_buf(),
        mode,
        entries,
    })
}

/// Quintuplet index at the evaluation stride.
pub fn extract_eval_quintuplets(dir: &Path) -> Result<SequenceIndex> {
    index_dataset(dir, WindowMode::Quintuplet, EVAL_STRIDE)
}

/// Four context frames and the ground-truth midpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub inputs: [Frame; 4],
    pub target: Frame,
    pub sequence: String,
    pub start: usize,
}

/// Frame numbers `(inputs, target)` used by a window.
pub fn window_frames(mode: WindowMode, start: usize) -> ([usize; 4], usize) {
    (mode.input_offsets().map(|o| start + o), start + mode.target_offset())
}

pub fn load_example(index: &SequenceIndex, entry: &IndexEntry) -> Result<TrainingExample> {
    let (ins, tgt) = window_frames(index.mode, entry.start);
    let load = |i: usize| Frame::load_png(&index.frame_path(&entry.sequence, i));
    let inputs = [load(ins[0])?, load(ins[1])?, load(ins[2])?, load(ins[3])?];
    let target = load(tgt)?;
    if inputs.iter().any(|f| !f.same_size(&target)) {
        return Err(Error::Validation(format!(
            "window {} {} mixes frame sizes",
            entry.sequence, entry.start
        )));
    }
    Ok(TrainingExample {
        inputs,
        target,
        sequence: entry.sequence.clone(),
        start: entry.start,
    })
}

pub fn load_all(index: &SequenceIndex) -> Result<Vec<TrainingExample>> {
    index.entries.iter().map(|e| load_example(index, e)).collect()
}

/// Spatial and temporal augmentation decided by `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augmentation {
    pub top: usize,
    pub left: usize,
    pub size: usize,
    pub hflip: bool,
    pub vflip: bool,
    pub reverse: bool,
}

impl Augmentation {
    pub fn draw(h: usize, w: usize, crop: usize, seed: u64) -> Result<Self> {
        if crop == 0 || crop > h || crop > w {
            return Err(Error::Validation(format!("cannot crop {crop}×{crop} from {h}×{w}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            top: rng.random_range(0..=h - crop),
            left: rng.random_range(0..=w - crop),
            size: crop,
            hflip: rng.random(),
            vflip: rng.random(),
            reverse: rng.random(),
        })
    }

    pub fn apply_frame(&self, f: &Frame) -> Frame {
        let s = self.size;
        Frame::from_fn(s, s, |y, x| {
            let sy = if self.vflip { s - 1 - y } else { y };
            let sx = if self.hflip { s - 1 - x } else { x };
            let (yy, xx) = (self.top + sy, self.left + sx);
            [f.get(yy, xx, 0), f.get(yy, xx, 1), f.get(yy, xx, 2)]
        })
    }

    pub fn apply(&self, ex: &TrainingExample) -> TrainingExample {
        let mut inputs = ex.inputs.clone().map(|f| self.apply_frame(&f));
        if self.reverse {
            inputs.reverse();
        }
        TrainingExample {
            inputs,
            target: self.apply_frame(&ex.target),
            sequence: ex.sequence.clone(),
            start: ex.start,
        }
    }
}

/// Same crop window and flips for all five frames; optional temporal
/// reversal of the inputs.
pub fn augment(ex: &TrainingExample, crop: usize, seed: u64) -> Result<TrainingExample> {
    let aug = Augmentation::draw(ex.target.height(), ex.target.width(), crop, seed)?;
    Ok(aug.apply(ex))
}
