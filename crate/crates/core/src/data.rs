//! Labeled datasets: IDX and CSV ingestion, per-feature normalization and
//! stratified train/validation splitting.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled feature vectors. Rows of `features` are points; `labels[i]` is the
/// class id of row `i`, in `0..class_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    class_count: usize,
    class_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset with class names `"0"`, `"1"`, ...
    pub fn new(features: Array2<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let names = (0..class_count).map(|c| c.to_string()).collect();
        Self::with_class_names(features, labels, names)
    }

    pub fn with_class_names(
        features: Array2<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let class_count = class_names.len();
        if class_count < 2 {
            return Err(Error::InvalidDataset(format!(
                "at least 2 classes required, got {class_count}"
            )));
        }
        if features.nrows() == 0 {
            return Err(Error::InvalidDataset("dataset is empty".into()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::InvalidDataset(format!(
                "label {l} at row {i} is out of range for {class_count} classes"
            )));
        }
        if let Some(((i, j), v)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite feature {v} at row {i}, column {j}"
            )));
        }
        Ok(Self {
            features,
            labels,
            class_count,
            class_names,
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of points in each class.
    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.class_count];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Rows at `indices`, keeping the class coding of `self`.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::with_class_names(features, labels, self.class_names.clone())
    }

    /// Same points, different feature matrix (for example after normalization).
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        Self::with_class_names(features, self.labels.clone(), self.class_names.clone())
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            msg: format!("truncated header: expected at least {} bytes", offset + 4),
        })
}

fn idx_error(path: &Path, offset: usize, msg: String) -> Error {
    Error::Idx {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg,
    }
}

/// Parses an IDX image/label file pair in the MNIST distribution format.
/// Either file may be gzip-compressed. Pixel bytes are divided by 255.
pub fn load_idx(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<Dataset> {
    let image_path = image_path.as_ref();
    let label_path = label_path.as_ref();
    let images = read_maybe_gz(image_path)?;
    let labels = read_maybe_gz(label_path)?;

    let magic = be_u32(&images, 0, image_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(idx_error(
            image_path,
            0,
            format!("bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        ));
    }
    let n_images = be_u32(&images, 4, image_path)? as usize;
    let rows = be_u32(&images, 8, image_path)? as usize;
    let cols = be_u32(&images, 12, image_path)? as usize;
    let pixels = rows * cols;
    let expected = 16 + n_images * pixels;
    if images.len() < expected {
        return Err(idx_error(
            image_path,
            images.len(),
            format!("truncated pixel data: expected {expected} bytes"),
        ));
    }
    if images.len() > expected {
        return Err(idx_error(
            image_path,
            expected,
            format!("{} trailing bytes", images.len() - expected),
        ));
    }

    let magic = be_u32(&labels, 0, label_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(idx_error(
            label_path,
            0,
            format!("bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        ));
    }
    let n_labels = be_u32(&labels, 4, label_path)? as usize;
    if n_labels != n_images {
        return Err(idx_error(
            label_path,
            4,
            format!("count mismatch: {n_labels} labels for {n_images} images"),
        ));
    }
    let expected = 8 + n_labels;
    if labels.len() < expected {
        return Err(idx_error(
            label_path,
            labels.len(),
            format!("truncated label data: expected {expected} bytes"),
        ));
    }
    if labels.len() > expected {
        return Err(idx_error(
            label_path,
            expected,
            format!("{} trailing bytes", labels.len() - expected),
        ));
    }

    let features = Array2::from_shape_vec(
        (n_images, pixels),
        images[16..].iter().map(|&b| f64::from(b) / 255.0).collect(),
    )
    .expect("shape checked above");
    let labels: Vec<usize> = labels[8..].iter().map(|&b| usize::from(b)).collect();
    let class_count = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(features, labels, class_count)
}

/// Which CSV column holds the class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
    Last,
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(if s.eq_ignore_ascii_case("last") {
            LabelColumn::Last
        } else if let Ok(i) = s.parse::<usize>() {
            LabelColumn::Index(i)
        } else {
            LabelColumn::Name(s.to_string())
        })
    }
}

const MAX_NUMERIC_LABEL: usize = 1 << 16;

/// Loads a numeric CSV table. Integer labels are used as class indices
/// directly, so separate train and test files agree on the coding. Other
/// labels are coded `0..c` in order of first appearance, keeping the
/// original strings as class names.
pub fn load_csv(path: impl AsRef<Path>, label_column: &LabelColumn, has_header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let csv_err = |line: u64, msg: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(0, e.to_string()))?;

    let header: Option<Vec<String>> = if has_header {
        let h = reader.headers().map_err(|e| csv_err(1, e.to_string()))?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut width: Option<usize> = header.as_ref().map(Vec::len).filter(|&w| w > 0);
    let mut label_idx: Option<usize> = None;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut coding: HashMap<String, usize> = HashMap::new();
    let mut names = Vec::new();

    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(csv_err(
                line,
                format!("ragged row: {} fields, expected {w}", record.len()),
            ));
        }
        let li = match label_idx {
            Some(li) => li,
            None => {
                let li = match label_column {
                    LabelColumn::Last => w - 1,
                    LabelColumn::Index(i) => *i,
                    LabelColumn::Name(name) => header
                        .as_ref()
                        .and_then(|h| h.iter().position(|c| c == name))
                        .ok_or_else(|| csv_err(1, format!("no label column named {name:?}")))?,
                };
                if li >= w {
                    return Err(csv_err(
                        line,
                        format!("label column {li} out of range for {w} columns"),
                    ));
                }
                *label_idx.insert(li)
            }
        };
        for (j, cell) in record.iter().enumerate() {
            if j == li {
                let next = coding.len();
                let code = *coding.entry(cell.to_string()).or_insert_with(|| {
                    names.push(cell.to_string());
                    next
                });
                labels.push(code);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    csv_err(line, format!("non-numeric value {cell:?} in column {j}"))
                })?;
                values.push(v);
            }
        }
    }

    if labels.is_empty() {
        return Err(csv_err(0, "empty file".into()));
    }
    let numeric: Option<Vec<usize>> = names.iter().map(|s| s.parse::<usize>().ok()).collect();
    if let Some(codes) = numeric.filter(|c| c.iter().all(|&v| v < MAX_NUMERIC_LABEL)) {
        let count = codes.iter().max().map_or(0, |m| m + 1);
        labels.iter_mut().for_each(|l| *l = codes[*l]);
        names = (0..count).map(|c| c.to_string()).collect();
    }
    let n = labels.len();
    let h = values.len() / n;
    let features = Array2::from_shape_vec((n, h), values).expect("rectangular by construction");
    Dataset::with_class_names(features, labels, names)
}

/// Writes features followed by a `label` column holding class names.
/// Values use the shortest representation that parses back to the same bits.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let h = ds.feature_dim();
    let header: Vec<String> = (0..h).map(|j| format!("f{j}")).chain(["label".into()]).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (row, &label) in ds.features.rows().into_iter().zip(&ds.labels) {
        for v in row {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&ds.class_names[label]);
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMode {
    None,
    /// Each feature mapped to `[0, 1]` by its own range.
    MinMax01,
    ZScore,
    /// All features mapped to `[0, 1]` by the range of the whole matrix, so
    /// relative feature scales (e.g. pixel intensities) are kept.
    GlobalMinMax01,
}

impl NormMode {
    pub fn tag(self) -> u32 {
        match self {
            NormMode::None => 0,
            NormMode::MinMax01 => 1,
            NormMode::ZScore => 2,
            NormMode::GlobalMinMax01 => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(NormMode::None),
            1 => Some(NormMode::MinMax01),
            2 => Some(NormMode::ZScore),
            3 => Some(NormMode::GlobalMinMax01),
            _ => None,
        }
    }
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NormMode::None),
            "minmax01" => Ok(NormMode::MinMax01),
            "zscore" => Ok(NormMode::ZScore),
            "global01" => Ok(NormMode::GlobalMinMax01),
            other => Err(Error::InvalidArgument(format!(
                "unknown normalization {other:?} (expected none, minmax01, zscore or global01)"
            ))),
        }
    }
}

/// Per-feature affine normalization `(x - offset) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mode: NormMode,
    pub offsets: Array1<f64>,
    /// Strictly positive; constant features get 1.
    pub scales: Array1<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mode: NormMode::None,
            offsets: Array1::zeros(dim),
            scales: Array1::ones(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.offsets.len()
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        if self.mode == NormMode::None {
            return Ok(x.to_owned());
        }
        Ok((&x - &self.offsets) / &self.scales)
    }

    pub fn invert(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        if self.mode == NormMode::None {
            return Ok(x.to_owned());
        }
        Ok(&x * &self.scales + &self.offsets)
    }

    fn check_dim(&self, cols: usize) -> Result<()> {
        if cols != self.dim() {
            return Err(Error::Dimension(format!(
                "normalization expects {} features, got {cols}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Computes normalization statistics on `ds` and returns the normalized copy.
pub fn normalize(ds: &Dataset, mode: NormMode) -> (Dataset, NormStats) {
    let x = ds.features();
    let h = ds.feature_dim();
    let stats = match mode {
        NormMode::None => NormStats::identity(h),
        NormMode::MinMax01 => {
            let mut offsets = Array1::zeros(h);
            let mut scales = Array1::ones(h);
            for (j, col) in x.columns().into_iter().enumerate() {
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                offsets[j] = lo;
                if hi > lo {
                    scales[j] = hi - lo;
                }
            }
            NormStats {
                mode,
                offsets,
                scales,
            }
        }
        NormMode::GlobalMinMax01 => {
            let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            NormStats {
                mode,
                offsets: Array1::from_elem(h, lo),
                scales: Array1::from_elem(h, if hi > lo { hi - lo } else { 1.0 }),
            }
        }
        NormMode::ZScore => {
            let n = x.nrows() as f64;
            let mut offsets = Array1::zeros(h);
            let mut scales = Array1::ones(h);
            for (j, col) in x.columns().into_iter().enumerate() {
                let mean = col.sum() / n;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                offsets[j] = mean;
                let sd = var.sqrt();
                if sd > 0.0 && col.iter().any(|&v| v != col[0]) {
                    scales[j] = sd;
                }
            }
            NormStats {
                mode,
                offsets,
                scales,
            }
        }
    };
    let features = stats.apply(x).expect("dims agree");
    let normalized = ds.with_features(features).expect("affine map of finite values");
    (normalized, stats)
}

/// Disjoint train/validation index sets. Both are sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub holdout_frac: f64,
}

impl Split {
    /// Everything in train, nothing held out.
    pub fn all_train(n: usize) -> Self {
        Self {
            train: (0..n).collect(),
            validation: Vec::new(),
            holdout_frac: 0.0,
        }
    }
}

/// Holds out `round(frac * size)` points of every class (at least one, and
/// never the whole class) for validation.
pub fn stratified_split(ds: &Dataset, holdout_frac: f64, seed: u64) -> Result<Split> {
    if !(holdout_frac > 0.0 && holdout_frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction must be in (0, 1), got {holdout_frac}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.class_count()];
    for (i, &l) in ds.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::ClassTooSmall {
                class,
                available: members.len(),
                requested: 2,
            });
        }
        let held = ((holdout_frac * members.len() as f64).round() as usize)
            .clamp(1, members.len() - 1);
        members.shuffle(&mut rng);
        validation.extend_from_slice(&members[..held]);
        train.extend_from_slice(&members[held..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    Ok(Split {
        train,
        validation,
        holdout_frac,
    })
}
