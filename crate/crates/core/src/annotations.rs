//! FDDB-format ground truth, detection files, image manifests and fold
//! lists.
//!
//! All text formats are UTF-8 with `\n` line endings on write; readers also
//! accept `\r\n`. Blank lines between blocks are tolerated.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, Ellipse, GeometryError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unexpected end of input, {message}")]
    Truncated { line: usize, message: String },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::Malformed { line, .. } | ParseError::Truncated { line, .. } => *line,
        }
    }

    fn malformed(line: usize, message: impl Into<String>) -> Self {
        ParseError::Malformed {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("image {0:?} has no entry in the manifest")]
    MissingDimensions(String),
    #[error(
        "image {image_id:?}: face center ({x}, {y}) is far outside the {width}x{height} image"
    )]
    FaceOutOfRange {
        image_id: String,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("image id {0:?} appears more than once")]
    DuplicateImage(String),
    #[error("image id must be nonempty")]
    EmptyImageId,
    #[error("image {0:?} has zero width or height")]
    ZeroSize(String),
    #[error("cannot split {records} records into {folds} folds")]
    TooManyFolds { records: usize, folds: usize },
    #[error("fold count must be at least 2, got {0}")]
    TooFewFolds(usize),
    #[error("fold index {index} outside 1..={folds} for image {image_id:?}")]
    FoldOutOfRange {
        image_id: String,
        index: usize,
        folds: usize,
    },
    #[error("image {0:?} is listed in more than one fold")]
    ImageInTwoFolds(String),
    #[error("fold list names image {0:?} that is not in the dataset")]
    UnknownImage(String),
}

/// A detector output: a region and its confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub region: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(region: BBox, score: f64) -> Self {
        Self { region, score }
    }

    pub fn scaled(&self, factor: f64) -> Detection {
        Detection {
            region: self.region.scaled(factor),
            score: self.score,
        }
    }
}

/// Ground-truth faces of one image, as read from an ellipse list.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceAnnotation {
    pub image_id: String,
    pub faces: Vec<Ellipse>,
}

/// An image with its dimensions and ground-truth faces.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub faces: Vec<Ellipse>,
    /// Fold assignment read from fold list files, when present.
    pub fold: Option<usize>,
}

impl ImageRecord {
    pub fn new(
        image_id: impl Into<String>,
        width: u32,
        height: u32,
        faces: Vec<Ellipse>,
    ) -> Result<Self, DatasetError> {
        let record = Self {
            image_id: image_id.into(),
            width,
            height,
            faces,
            fold: None,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.image_id.is_empty() {
            return Err(DatasetError::EmptyImageId);
        }
        if self.width == 0 || self.height == 0 {
            return Err(DatasetError::ZeroSize(self.image_id.clone()));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        for face in &self.faces {
            let (x, y) = (face.center_x(), face.center_y());
            if !(-w..=2.0 * w).contains(&x) || !(-h..=2.0 * h).contains(&y) {
                return Err(DatasetError::FaceOutOfRange {
                    image_id: self.image_id.clone(),
                    x,
                    y,
                    width: self.width,
                    height: self.height,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub fold_index: usize,
    pub records: Vec<ImageRecord>,
}

/// Detections for one image. Written in descending score order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

/// Non-empty lines with their 1-based numbers and trailing `\r` removed.
struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last_line: usize,
}

impl<'a> Lines<'a> {
    fn new(content: &'a str) -> Self {
        Self {
            inner: content.lines().enumerate().peekable(),
            last_line: 0,
        }
    }

    fn next_nonblank(&mut self) -> Option<(usize, &'a str)> {
        for (idx, raw) in self.inner.by_ref() {
            self.last_line = idx + 1;
            let line = raw.trim_end_matches('\r').trim();
            if !line.is_empty() {
                return Some((idx + 1, line));
            }
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str), ParseError> {
        self.next_nonblank().ok_or_else(|| ParseError::Truncated {
            line: self.last_line + 1,
            message: format!("expected {what}"),
        })
    }
}

fn parse_fields<const N: usize>(line_no: usize, line: &str) -> Result<[f64; N], ParseError> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() < N {
        return Err(ParseError::malformed(
            line_no,
            format!("expected {N} numeric fields, found {}", tokens.len()),
        ));
    }
    let mut out = [0.0; N];
    for (slot, tok) in out.iter_mut().zip(&tokens) {
        *slot = tok
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| ParseError::malformed(line_no, format!("non-numeric field {tok:?}")))?;
    }
    Ok(out)
}

fn parse_count(line_no: usize, line: &str) -> Result<usize, ParseError> {
    line.parse::<usize>()
        .map_err(|_| ParseError::malformed(line_no, format!("malformed count {line:?}")))
}

fn geometry_err(line_no: usize, err: GeometryError) -> ParseError {
    ParseError::malformed(line_no, err.to_string())
}

/// Parses an FDDB ellipse list: image id line, face count line, then one
/// `major_radius minor_radius angle center_x center_y 1` line per face.
/// Angles are in radians.
pub fn parse_annotation_file(content: &str) -> Result<Vec<FaceAnnotation>, ParseError> {
    let mut lines = Lines::new(content);
    let mut out = Vec::new();
    while let Some((_, image_id)) = lines.next_nonblank() {
        let (count_line, count_text) = lines.expect("face count")?;
        let count = parse_count(count_line, count_text)?;
        let mut faces = Vec::with_capacity(count);
        for k in 0..count {
            let (line_no, line) = lines.expect(&format!("face {} of {count}", k + 1))?;
            let tokens = line.split_whitespace().count();
            if tokens != 5 && tokens != 6 {
                return Err(ParseError::malformed(
                    line_no,
                    format!("expected 6 fields in face line, found {tokens}"),
                ));
            }
            let [ra, rb, angle, cx, cy] = parse_fields::<5>(line_no, line)?;
            let face =
                Ellipse::from_radii(cx, cy, ra, rb, angle).map_err(|e| geometry_err(line_no, e))?;
            faces.push(face);
        }
        out.push(FaceAnnotation {
            image_id: image_id.to_string(),
            faces,
        });
    }
    Ok(out)
}

pub fn write_annotation_file(annotations: &[FaceAnnotation]) -> String {
    let mut out = String::new();
    for a in annotations {
        writeln!(out, "{}", a.image_id).unwrap();
        writeln!(out, "{}", a.faces.len()).unwrap();
        for f in &a.faces {
            writeln!(
                out,
                "{:.6} {:.6} {:.6} {:.6} {:.6} 1",
                f.major_radius(),
                f.minor_radius(),
                f.angle(),
                f.center_x(),
                f.center_y()
            )
            .unwrap();
        }
    }
    out
}

/// Writes detections as `x_min y_min width height score` with six decimals,
/// each image's detections in descending score order.
pub fn write_detection_file(records: &[DetectionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let mut dets = r.detections.clone();
        dets.sort_by(|a, b| b.score.total_cmp(&a.score));
        writeln!(out, "{}", r.image_id).unwrap();
        writeln!(out, "{}", dets.len()).unwrap();
        for d in &dets {
            writeln!(
                out,
                "{:.6} {:.6} {:.6} {:.6} {:.6}",
                d.region.x_min(),
                d.region.y_min(),
                d.region.width(),
                d.region.height(),
                d.score
            )
            .unwrap();
        }
    }
    out
}

pub fn parse_detection_file(content: &str) -> Result<Vec<DetectionRecord>, ParseError> {
    let mut lines = Lines::new(content);
    let mut out = Vec::new();
    while let Some((_, image_id)) = lines.next_nonblank() {
        let (count_line, count_text) = lines.expect("detection count")?;
        let count = parse_count(count_line, count_text)?;
        let mut detections = Vec::with_capacity(count);
        for k in 0..count {
            let (line_no, line) = lines.expect(&format!("detection {} of {count}", k + 1))?;
            if line.split_whitespace().count() != 5 {
                return Err(ParseError::malformed(
                    line_no,
                    "expected 5 fields in detection line",
                ));
            }
            let [x, y, w, h, score] = parse_fields::<5>(line_no, line)?;
            let region = BBox::from_xywh(x, y, w, h).map_err(|e| geometry_err(line_no, e))?;
            detections.push(Detection { region, score });
        }
        out.push(DetectionRecord {
            image_id: image_id.to_string(),
            detections,
        });
    }
    Ok(out)
}

/// Image dimensions keyed by image id, one `image_id width height` per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(String, u32, u32)>,
}

impl Manifest {
    pub fn from_records(records: &[ImageRecord]) -> Self {
        Self {
            entries: records
                .iter()
                .map(|r| (r.image_id.clone(), r.width, r.height))
                .collect(),
        }
    }

    pub fn parse(content: &str) -> Result<Self, ParseError> {
        let mut lines = Lines::new(content);
        let mut entries = Vec::new();
        while let Some((line_no, line)) = lines.next_nonblank() {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != 3 {
                return Err(ParseError::malformed(
                    line_no,
                    "expected `image_id width height`",
                ));
            }
            let dim = |t: &str| {
                t.parse::<u32>()
                    .ok()
                    .filter(|v| *v > 0)
                    .ok_or_else(|| ParseError::malformed(line_no, format!("bad dimension {t:?}")))
            };
            entries.push((tokens[0].to_string(), dim(tokens[1])?, dim(tokens[2])?));
        }
        Ok(Self { entries })
    }

    pub fn write(&self) -> String {
        let mut out = String::new();
        for (id, w, h) in &self.entries {
            writeln!(out, "{id} {w} {h}").unwrap();
        }
        out
    }
}

/// Joins parsed annotations with manifest dimensions. Images listed in the
/// manifest but absent from the annotations get an empty face list.
pub fn build_records(
    manifest: &Manifest,
    annotations: &[FaceAnnotation],
) -> Result<Vec<ImageRecord>, DatasetError> {
    let mut faces: HashMap<&str, &FaceAnnotation> = HashMap::new();
    for a in annotations {
        if faces.insert(a.image_id.as_str(), a).is_some() {
            return Err(DatasetError::DuplicateImage(a.image_id.clone()));
        }
    }
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(manifest.entries.len());
    for (id, w, h) in &manifest.entries {
        if !seen.insert(id.as_str()) {
            return Err(DatasetError::DuplicateImage(id.clone()));
        }
        let f = faces
            .get(id.as_str())
            .map(|a| a.faces.clone())
            .unwrap_or_default();
        records.push(ImageRecord::new(id.clone(), *w, *h, f)?);
    }
    if let Some(a) = annotations
        .iter()
        .find(|a| !seen.contains(a.image_id.as_str()))
    {
        return Err(DatasetError::MissingDimensions(a.image_id.clone()));
    }
    Ok(records)
}

pub fn parse_fold_list(content: &str) -> Vec<String> {
    content
        .lines()
        .map(|l| l.trim_end_matches('\r').trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn write_fold_list(fold: &Fold) -> String {
    let mut out = String::new();
    for r in &fold.records {
        writeln!(out, "{}", r.image_id).unwrap();
    }
    out
}

/// Marks each record with the fold whose list names it. `lists[i]` is fold
/// `i + 1`.
pub fn assign_folds(
    records: &mut [ImageRecord],
    lists: &[Vec<String>],
) -> Result<(), DatasetError> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, list) in lists.iter().enumerate() {
        for id in list {
            if index.insert(id.as_str(), i + 1).is_some() {
                return Err(DatasetError::ImageInTwoFolds(id.clone()));
            }
        }
    }
    let known: HashSet<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
    if let Some(id) = index.keys().find(|id| !known.contains(*id)) {
        return Err(DatasetError::UnknownImage(id.to_string()));
    }
    for r in records.iter_mut() {
        r.fold = index.get(r.image_id.as_str()).copied();
    }
    Ok(())
}

/// Scales an image record so its shorter side equals `target_shorter_side`.
/// Returns the new record and the factor applied; divide detection
/// coordinates by the factor to map them back.
pub fn rescale_record(record: &ImageRecord, target_shorter_side: f64) -> (ImageRecord, f64) {
    let shorter = record.width.min(record.height) as f64;
    let scale = target_shorter_side / shorter;
    let mut out = record.clone();
    out.width = (record.width as f64 * scale).round() as u32;
    out.height = (record.height as f64 * scale).round() as u32;
    out.faces = record.faces.iter().map(|f| f.scaled(scale)).collect();
    (out, scale)
}

/// Partitions records into `k` folds numbered from 1.
///
/// If every record carries a fold assignment, those assignments are used.
/// Otherwise records are shuffled with `seed` and dealt so that fold sizes
/// differ by at most one, the larger folds first.
pub fn split_folds(
    records: &[ImageRecord],
    k: usize,
    seed: u64,
) -> Result<Vec<Fold>, DatasetError> {
    if k < 2 {
        return Err(DatasetError::TooFewFolds(k));
    }
    if k > records.len() {
        return Err(DatasetError::TooManyFolds {
            records: records.len(),
            folds: k,
        });
    }
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.image_id.as_str()) {
            return Err(DatasetError::DuplicateImage(r.image_id.clone()));
        }
    }

    if records.iter().all(|r| r.fold.is_some()) {
        let mut folds: Vec<Fold> = (1..=k)
            .map(|fold_index| Fold {
                fold_index,
                records: Vec::new(),
            })
            .collect();
        for r in records {
            let idx = r.fold.unwrap();
            if !(1..=k).contains(&idx) {
                return Err(DatasetError::FoldOutOfRange {
                    image_id: r.image_id.clone(),
                    index: idx,
                    folds: k,
                });
            }
            folds[idx - 1].records.push(r.clone());
        }
        return Ok(folds);
    }

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (records.len() / k, records.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut cursor = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        let recs = order[cursor..cursor + size]
            .iter()
            .map(|&j| {
                let mut r = records[j].clone();
                r.fold = Some(i + 1);
                r
            })
            .collect();
        cursor += size;
        folds.push(Fold {
            fold_index: i + 1,
            records: recs,
        });
    }
    Ok(folds)
}
