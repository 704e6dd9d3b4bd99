//! Cell Tracking Challenge style dataset trees.
//!
//! A dataset root holds one directory per sequence (`01`, `02`, ...) with
//! frame images `t000.tif`, `t001.tif`, ...; annotations live in
//! `01_GT/SEG/man_seg000.tif` (gold truth) and `01_ST/SEG/man_seg000.tif`
//! (silver truth). Result masks are written as `mask000.tif` and tracks as
//! `res_track.txt` lines `L B E P`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Image, ImageMeta, LabelMap, RawImage};
use crate::imageio;
use crate::track::TrackRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dimensionality {
    #[serde(rename = "2D")]
    TwoD,
    #[serde(rename = "3D")]
    ThreeD,
}

/// Raw-intensity extrema of a whole sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrema {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceDescriptor {
    pub id: String,
    pub frame_count: usize,
    /// `(width, height)` in pixels.
    pub resolution: (usize, usize),
    /// z-planes per frame; 1 for 2D data.
    pub depth: usize,
    pub gt_frames: BTreeSet<usize>,
    pub st_frames: BTreeSet<usize>,
    /// Unset until a normalization scan has run.
    pub extrema: Option<Extrema>,
    #[serde(skip)]
    pub frame_paths: Vec<PathBuf>,
    #[serde(skip)]
    pub gt_paths: BTreeMap<usize, PathBuf>,
    #[serde(skip)]
    pub st_paths: BTreeMap<usize, PathBuf>,
}

impl SequenceDescriptor {
    pub fn annotation_path(&self, kind: AnnotationKind, frame: usize) -> Option<&Path> {
        match kind {
            AnnotationKind::Gt => self.gt_paths.get(&frame),
            AnnotationKind::St => self.st_paths.get(&frame),
        }
        .map(PathBuf::as_path)
    }

    pub fn annotated_frames(&self, kind: AnnotationKind) -> &BTreeSet<usize> {
        match kind {
            AnnotationKind::Gt => &self.gt_frames,
            AnnotationKind::St => &self.st_frames,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub dimensionality: Dimensionality,
    pub sequences: Vec<SequenceDescriptor>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetDescriptor {
    pub fn sequence(&self, id: &str) -> Option<&SequenceDescriptor> {
        self.sequences.iter().find(|s| s.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnnotationKind {
    #[serde(rename = "GT")]
    Gt,
    #[serde(rename = "ST")]
    St,
}

impl AnnotationKind {
    pub fn dir_suffix(self) -> &'static str {
        match self {
            AnnotationKind::Gt => "GT",
            AnnotationKind::St => "ST",
        }
    }
}

/// The six data configurations of the segmentation benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DataConfig {
    #[serde(rename = "GT-only")]
    GtOnly,
    #[serde(rename = "ST-only")]
    StOnly,
    #[serde(rename = "GT+ST")]
    GtSt,
    #[serde(rename = "allGT")]
    AllGt,
    #[serde(rename = "allST")]
    AllSt,
    #[serde(rename = "allGT+allST")]
    AllGtAllSt,
}

impl DataConfig {
    /// True for configurations that train one network over all datasets.
    pub fn is_universal(self) -> bool {
        matches!(self, DataConfig::AllGt | DataConfig::AllSt | DataConfig::AllGtAllSt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SplitEntry {
    pub dataset: String,
    pub sequence: String,
    pub frame: usize,
    pub kind: AnnotationKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub config: DataConfig,
    pub train: Vec<SplitEntry>,
    pub valid: Vec<SplitEntry>,
}

fn is_sequence_dir(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_digit())
}

/// First run of decimal digits in a file stem (`t012` → 12, `man_seg003` → 3).
fn frame_index(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let start = stem.find(|c: char| c.is_ascii_digit())?;
    let digits: String = stem[start..].chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::layout(dir, e.to_string()))? {
        let path = entry?.path();
        if path.is_file() && imageio::is_image_file(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn scan_annotations(
    dir: &Path,
    frame_count: usize,
    resolution: (usize, usize),
) -> Result<BTreeMap<usize, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for path in list_images(dir)? {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if !name.starts_with("man_seg") {
            continue;
        }
        let frame = frame_index(&path)
            .ok_or_else(|| Error::layout(&path, "cannot parse frame index from file name"))?;
        if frame >= frame_count {
            return Err(Error::layout(&path, format!("annotation for frame {frame} but sequence has {frame_count} frames")));
        }
        let mask = imageio::read_label_map(&path)?;
        if (mask.width(), mask.height()) != resolution {
            return Err(Error::layout(&path, "annotation size differs from frame size"));
        }
        out.insert(frame, path);
    }
    Ok(out)
}

/// Enumerates the sequences, frames and annotations of a dataset root.
pub fn scan_dataset(root: &Path) -> Result<DatasetDescriptor> {
    if !root.is_dir() {
        return Err(Error::layout(root, "dataset root is not a directory"));
    }
    let mut seq_dirs: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::layout(root, e.to_string()))? {
        let path = entry?.path();
        if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            if path.is_dir() && is_sequence_dir(name) {
                seq_dirs.push((name.to_string(), path.clone()));
            }
        }
    }
    if seq_dirs.is_empty() {
        return Err(Error::layout(root, "no sequence directories (e.g. 01, 02) found"));
    }
    seq_dirs.sort();

    let mut sequences = Vec::new();
    let mut depth_seen = 1;
    for (id, dir) in seq_dirs {
        let mut frames: Vec<(usize, PathBuf)> = Vec::new();
        for path in list_images(&dir)? {
            let idx = frame_index(&path)
                .ok_or_else(|| Error::layout(&path, "cannot parse frame index from file name"))?;
            frames.push((idx, path));
        }
        if frames.is_empty() {
            return Err(Error::layout(&dir, "sequence directory holds no frames"));
        }
        frames.sort();
        for (expected, (idx, path)) in frames.iter().enumerate() {
            if *idx != expected {
                return Err(Error::layout(path, format!("expected frame {expected}, found {idx}")));
            }
        }
        let mut resolution = None;
        let mut depth = None;
        for (_, path) in &frames {
            let stack = imageio::read_raw_stack(path)?;
            let res = (stack[0].width(), stack[0].height());
            if *resolution.get_or_insert(res) != res || *depth.get_or_insert(stack.len()) != stack.len() {
                return Err(Error::layout(path, "frame size differs within sequence"));
            }
        }
        let resolution = resolution.unwrap_or((0, 0));
        let depth = depth.unwrap_or(1);
        depth_seen = depth_seen.max(depth);
        let frame_count = frames.len();
        let gt_paths = scan_annotations(&root.join(format!("{id}_GT")).join("SEG"), frame_count, resolution)?;
        let st_paths = scan_annotations(&root.join(format!("{id}_ST")).join("SEG"), frame_count, resolution)?;
        sequences.push(SequenceDescriptor {
            id,
            frame_count,
            resolution,
            depth,
            gt_frames: gt_paths.keys().copied().collect(),
            st_frames: st_paths.keys().copied().collect(),
            extrema: None,
            frame_paths: frames.into_iter().map(|(_, p)| p).collect(),
            gt_paths,
            st_paths,
        });
    }

    let name = root
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("dataset")
        .to_string();
    Ok(DatasetDescriptor {
        name,
        dimensionality: if depth_seen > 1 { Dimensionality::ThreeD } else { Dimensionality::TwoD },
        sequences,
        root: root.to_path_buf(),
    })
}

/// Global raw-intensity extrema over every pixel of every frame.
pub fn sequence_extrema<'a>(frames: impl IntoIterator<Item = &'a RawImage>) -> Option<Extrema> {
    let mut lo = u16::MAX;
    let mut hi = u16::MIN;
    let mut any = false;
    for frame in frames {
        for &v in frame.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
            any = true;
        }
    }
    any.then(|| Extrema { min: f64::from(lo), max: f64::from(hi) })
}

impl Extrema {
    /// Affine map of a raw intensity onto `[0, 1]`.
    #[inline]
    pub fn normalize(&self, raw: f64) -> f64 {
        (raw - self.min) / (self.max - self.min)
    }
}

/// Maps raw intensities to `[0, 1]` with the given extrema.
pub fn apply_normalization(frame: &RawImage, extrema: Extrema) -> Result<Grid<f64>> {
    if extrema.max <= extrema.min {
        return Err(Error::DegenerateRange(extrema.min));
    }
    Ok(frame.map(|&v| extrema.normalize(f64::from(v))))
}

/// Normalizes a sequence by the extrema taken over the whole sequence.
pub fn normalize_sequence(frames: &[RawImage]) -> Result<(Vec<Image>, Extrema)> {
    let extrema = sequence_extrema(frames).ok_or_else(|| Error::Shape("empty sequence".into()))?;
    if extrema.max <= extrema.min {
        return Err(Error::DegenerateRange(extrema.min));
    }
    let images = frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            Ok(Image {
                pixels: apply_normalization(f, extrema)?,
                meta: ImageMeta { frame: i, ..ImageMeta::default() },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((images, extrema))
}

/// One z-plane cut out of a 3D stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub slice: usize,
    pub image: RawImage,
}

/// Splits a 3D stack into planar images in z order.
pub fn slice_stack(volume: &[RawImage]) -> Result<Vec<Plane>> {
    if volume.is_empty() {
        return Err(Error::Shape("stack has no z-planes".into()));
    }
    let shape = volume[0].shape();
    if volume.iter().any(|p| p.shape() != shape) {
        return Err(Error::Shape("z-planes differ in size".into()));
    }
    Ok(volume.iter().enumerate().map(|(slice, image)| Plane { slice, image: image.clone() }).collect())
}

/// Inverse of [`slice_stack`]; planes are placed by their slice index.
pub fn restack(planes: &[Plane]) -> Result<Vec<RawImage>> {
    let mut out: Vec<Option<RawImage>> = vec![None; planes.len()];
    for p in planes {
        let slot = out
            .get_mut(p.slice)
            .ok_or_else(|| Error::Shape(format!("slice index {} out of range", p.slice)))?;
        *slot = Some(p.image.clone());
    }
    out.into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| Error::Shape(format!("missing slice {i}"))))
        .collect()
}

fn annotated_entries(d: &DatasetDescriptor, kind: AnnotationKind) -> Vec<SplitEntry> {
    let mut entries = Vec::new();
    for seq in &d.sequences {
        for &frame in seq.annotated_frames(kind) {
            entries.push(SplitEntry { dataset: d.name.clone(), sequence: seq.id.clone(), frame, kind });
        }
    }
    entries.sort();
    entries
}

fn require(d: &DatasetDescriptor, kind: AnnotationKind) -> Result<Vec<SplitEntry>> {
    let entries = annotated_entries(d, kind);
    if entries.is_empty() {
        return Err(Error::MissingAnnotation(format!(
            "dataset '{}' has no {} frames",
            d.name,
            kind.dir_suffix()
        )));
    }
    Ok(entries)
}

/// Builds the train/validation split for a data configuration.
///
/// For the 90/10 configurations every frame whose rank within its dataset
/// (sorted by sequence, then frame) is a multiple of 10 goes to validation.
pub fn build_split(descriptors: &[DatasetDescriptor], config: DataConfig) -> Result<SplitPlan> {
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for d in descriptors {
        match config {
            DataConfig::GtOnly | DataConfig::AllGt | DataConfig::StOnly | DataConfig::AllSt => {
                let kind = if matches!(config, DataConfig::GtOnly | DataConfig::AllGt) {
                    AnnotationKind::Gt
                } else {
                    AnnotationKind::St
                };
                for (rank, entry) in require(d, kind)?.into_iter().enumerate() {
                    if rank % 10 == 0 {
                        valid.push(entry);
                    } else {
                        train.push(entry);
                    }
                }
            }
            DataConfig::GtSt | DataConfig::AllGtAllSt => {
                let gt = require(d, AnnotationKind::Gt)?;
                let st = require(d, AnnotationKind::St)?;
                train.extend(st);
                valid.extend(gt);
            }
        }
    }
    Ok(SplitPlan { config, train, valid })
}

/// CTC frame file name: three digits, or four for sequences beyond 1000 frames.
pub fn frame_file_name(prefix: &str, frame: usize, frame_count: usize) -> String {
    if frame_count > 1000 {
        format!("{prefix}{frame:04}.tif")
    } else {
        format!("{prefix}{frame:03}.tif")
    }
}

fn check_ids(map: &LabelMap) -> Result<Grid<u16>> {
    if let Some(&bad) = map.iter().find(|&&v| v > u32::from(u16::MAX)) {
        return Err(Error::IdOverflow(bad));
    }
    Ok(map.map(|&v| v as u16))
}

/// Writes an instance mask as a 16-bit single-channel TIFF.
pub fn write_label_mask(map: &LabelMap, path: &Path) -> Result<()> {
    let plane = check_ids(map)?;
    imageio::write_tiff16(path, std::slice::from_ref(&plane))
}

/// Writes a 3D instance mask (one page per plane).
pub fn write_label_stack(planes: &[LabelMap], path: &Path) -> Result<()> {
    let planes = planes.iter().map(check_ids).collect::<Result<Vec<_>>>()?;
    imageio::write_tiff16(path, &planes)
}

pub fn read_label_mask(path: &Path) -> Result<LabelMap> {
    imageio::read_label_map(path)
}

/// Renders track records as `L B E P` lines sorted by label.
pub fn format_tracks(tracks: &[TrackRecord]) -> Result<String> {
    let mut seen = HashSet::new();
    for t in tracks {
        if !seen.insert(t.id) {
            return Err(Error::DuplicateTrack(t.id));
        }
        if t.begin > t.end {
            return Err(Error::Shape(format!("track {} begins at {} after it ends at {}", t.id, t.begin, t.end)));
        }
    }
    let mut sorted: Vec<&TrackRecord> = tracks.iter().collect();
    sorted.sort_by_key(|t| t.id);
    Ok(sorted.iter().map(|t| format!("{} {} {} {}\n", t.id, t.begin, t.end, t.parent)).collect())
}

pub fn write_track_file(tracks: &[TrackRecord], path: &Path) -> Result<()> {
    let text = format_tracks(tracks)?;
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}
