//! Labeled datasets: toy generators, IDX and CSV ingestion, known/unknown
//! splits.
//!
//! All features live in `[-1, 1]` so they share the range of the decoder's
//! `tanh` output.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Samples with class labels. Features are stored row-major, `dim` values
/// per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    class_count: usize,
    class_names: Option<Vec<String>>,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("feature dimension must be positive".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Dimension(format!(
                "{} feature values for {} samples of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Index(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if let Some(bad) = features.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::Contract(format!(
                "feature value {bad} outside [-1, 1]"
            )));
        }
        Ok(Self {
            features,
            dim,
            labels,
            class_count,
            class_names: None,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.class_count {
            return Err(Error::Dimension(format!(
                "{} class names for {} classes",
                names.len(),
                self.class_count
            )));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// `N x D` tensor of all features.
    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(vec![self.len(), self.dim], self.features.clone())
    }

    /// `len(indices) x D` tensor of the selected rows.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor::new(vec![indices.len(), self.dim], data)
    }

    /// New dataset holding the selected rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            dim: self.dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            class_names: self.class_names.clone(),
        }
    }

    /// Sample indices grouped by class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// The three two-dimensional toy problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    TwoGauss,
    FourGauss,
    UniGauss,
}

impl FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "two_gauss" => Ok(ToyKind::TwoGauss),
            "four_gauss" => Ok(ToyKind::FourGauss),
            "uni_gauss" => Ok(ToyKind::UniGauss),
            other => Err(Error::Contract(format!("unknown toy kind '{other}'"))),
        }
    }
}

impl fmt::Display for ToyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToyKind::TwoGauss => "two-gauss",
            ToyKind::FourGauss => "four-gauss",
            ToyKind::UniGauss => "uni-gauss",
        })
    }
}

/// Shape parameters for [`gen_toy_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyParams {
    pub sigma: f64,
    pub annulus: (f64, f64),
}

impl Default for ToyParams {
    fn default() -> Self {
        Self {
            sigma: 0.2,
            annulus: (1.5, 2.0),
        }
    }
}

/// Class centres of the four-Gaussian problem, one per quadrant.
pub const FOUR_GAUSS_MEANS: [(f64, f64); 4] = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];

pub fn gen_toy(kind: ToyKind, n_per_class: usize, seed: u64) -> Result<LabeledDataset> {
    gen_toy_with(kind, n_per_class, seed, ToyParams::default())
}

/// Draws `n_per_class` points per class, class-major, then rescales all
/// coordinates by the largest magnitude so they fit in `[-1, 1]`.
pub fn gen_toy_with(kind: ToyKind, n_per_class: usize, seed: u64, params: ToyParams) -> Result<LabeledDataset> {
    if n_per_class == 0 {
        return Err(Error::Contract("n_per_class must be at least 1".into()));
    }
    if !(params.sigma > 0.0) {
        return Err(Error::Contract("sigma must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.sigma).expect("sigma checked");
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut gaussian = |rng: &mut ChaCha8Rng, cx: f64, cy: f64, label: usize| {
        for _ in 0..n_per_class {
            points.push(cx + noise.sample(rng));
            points.push(cy + noise.sample(rng));
            labels.push(label);
        }
    };
    let class_count = match kind {
        ToyKind::TwoGauss => {
            gaussian(&mut rng, -1.0, 0.0, 0);
            gaussian(&mut rng, 1.0, 0.0, 1);
            2
        }
        ToyKind::FourGauss => {
            for (c, &(x, y)) in FOUR_GAUSS_MEANS.iter().enumerate() {
                gaussian(&mut rng, x, y, c);
            }
            4
        }
        ToyKind::UniGauss => {
            gaussian(&mut rng, 0.0, 0.0, 0);
            let (r_in, r_out) = params.annulus;
            if !(0.0 <= r_in && r_in < r_out) {
                return Err(Error::Contract("annulus radii must satisfy 0 <= inner < outer".into()));
            }
            for _ in 0..n_per_class {
                // area-uniform radius
                let r = rng.random_range(r_in * r_in..r_out * r_out).sqrt();
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                points.push(r * angle.cos());
                points.push(r * angle.sin());
                labels.push(1);
            }
            2
        }
    };
    let scale = points.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let features = points.into_iter().map(|v| v / scale).collect();
    LabeledDataset::new(features, 2, labels, class_count)
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::format(0, format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(offset as u64, format!("truncated {what} header")))
}

/// Parses an IDX image file and its label file (optionally gzipped).
///
/// Pixels map to `[-1, 1]` via `v / 127.5 - 1`; images are flattened row by
/// row. The class count is `max(label) + 1`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images = read_maybe_gz(images_path.as_ref())?;
    let labels = read_maybe_gz(labels_path.as_ref())?;
    parse_idx(&images, &labels)
}

pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    let magic = be_u32(images, 0, "image")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(0, format!("image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let count = be_u32(images, 4, "image")? as usize;
    let rows = be_u32(images, 8, "image")? as usize;
    let cols = be_u32(images, 12, "image")? as usize;
    let dim = rows * cols;
    if dim == 0 {
        return Err(Error::format(8, "image rows and columns must be positive"));
    }
    let payload = &images[16..];
    if payload.len() < count * dim {
        let complete = payload.len() / dim;
        return Err(Error::format(
            (16 + complete * dim) as u64,
            format!("image payload truncated: {count} images declared, {complete} complete"),
        ));
    }

    let magic = be_u32(labels, 0, "label")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(0, format!("label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let label_count = be_u32(labels, 4, "label")? as usize;
    if label_count != count {
        return Err(Error::format(
            4,
            format!("label file declares {label_count} items, image file declares {count}"),
        ));
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < count {
        return Err(Error::format(
            (8 + label_bytes.len()) as u64,
            format!("label payload truncated: {count} declared, {} present", label_bytes.len()),
        ));
    }
    let labels: Vec<usize> = label_bytes[..count].iter().map(|&b| b as usize).collect();
    let features = payload[..count * dim]
        .iter()
        .map(|&p| f64::from(p) / 127.5 - 1.0)
        .collect();
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    LabeledDataset::new(features, dim, labels, class_count)
}

/// Writes uncompressed IDX files. Features are quantized back to bytes, so
/// a dataset loaded from IDX round-trips exactly.
pub fn save_idx(
    dataset: &LabeledDataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    if rows * cols != dataset.dim() {
        return Err(Error::Dimension(format!(
            "{rows}x{cols} images do not match feature width {}",
            dataset.dim()
        )));
    }
    if let Some(&bad) = dataset.labels().iter().find(|&&l| l > 255) {
        return Err(Error::Contract(format!("label {bad} does not fit in a byte")));
    }
    let mut img = BufWriter::new(File::create(images_path)?);
    img.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    for v in [dataset.len(), rows, cols] {
        img.write_all(&(v as u32).to_be_bytes())?;
    }
    let bytes: Vec<u8> = dataset
        .features()
        .iter()
        .map(|&v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
        .collect();
    img.write_all(&bytes)?;
    img.flush()?;

    let mut lab = BufWriter::new(File::create(labels_path)?);
    lab.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    lab.write_all(&(dataset.len() as u32).to_be_bytes())?;
    let labels: Vec<u8> = dataset.labels().iter().map(|&l| l as u8).collect();
    lab.write_all(&labels)?;
    lab.flush()?;
    Ok(())
}

/// Writes `x0,..,x{D-1},label` rows.
pub fn write_csv(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_csv_to(dataset, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_csv_to(dataset: &LabeledDataset, out: &mut impl Write) -> Result<()> {
    let header: Vec<String> = (0..dataset.dim())
        .map(|d| format!("x{d}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..dataset.len() {
        let mut fields: Vec<String> = dataset.row(i).iter().map(|v| v.to_string()).collect();
        fields.push(dataset.labels()[i].to_string());
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Feature rows read from CSV, with labels when a `label` column exists.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub dim: usize,
    pub features: Vec<f64>,
    pub labels: Option<Vec<usize>>,
}

pub fn read_csv_table(path: impl AsRef<Path>) -> Result<CsvTable> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let label_col = headers.iter().position(|h| h.trim() == "label");
    let dim = headers.len() - usize::from(label_col.is_some());
    if dim == 0 {
        return Err(Error::format(0, format!("{}: no feature columns", path.display())));
    }
    let mut features = Vec::new();
    let mut labels = label_col.map(|_| Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let offset = record.position().map_or(0, |p| p.byte());
        if record.len() != headers.len() {
            return Err(Error::format(offset, format!("expected {} fields, got {}", headers.len(), record.len())));
        }
        for (col, field) in record.iter().enumerate() {
            if Some(col) == label_col {
                let l = field
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::format(offset, format!("bad label '{field}'")))?;
                labels.as_mut().expect("label column present").push(l);
            } else {
                let v = field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format(offset, format!("bad number '{field}'")))?;
                features.push(v);
            }
        }
    }
    Ok(CsvTable { dim, features, labels })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::format(offset, format!("{}: {other:?}", path.display())),
    }
}

/// Loads a labeled CSV. The class count is `max(label) + 1`.
pub fn read_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let table = read_csv_table(path)?;
    let labels = table
        .labels
        .ok_or_else(|| Error::format(0, format!("{}: no 'label' column", path.display())))?;
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    LabeledDataset::new(table.features, table.dim, labels, class_count)
}

/// Which original classes are known, which are held out as unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub known_classes: Vec<usize>,
    pub unknown_classes: Vec<usize>,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self, class_count: usize) -> Result<()> {
        if self.known_classes.is_empty() {
            return Err(Error::Contract("known class set is empty".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Contract(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        for (i, c) in self.known_classes.iter().chain(&self.unknown_classes).enumerate() {
            if *c >= class_count {
                return Err(Error::Contract(format!("class {c} not present ({class_count} classes)")));
            }
            let all: Vec<_> = self.known_classes.iter().chain(&self.unknown_classes).collect();
            if all[..i].contains(&c) {
                return Err(Error::Contract(format!("class {c} listed twice or in both sets")));
            }
        }
        Ok(())
    }

    /// Known classes in ascending order; position = remapped label.
    pub fn sorted_known(&self) -> Vec<usize> {
        let mut k = self.known_classes.clone();
        k.sort_unstable();
        k
    }
}

/// Output of [`split_known_unknown`]. The `*_ids` vectors hold the row
/// indices in the source dataset.
#[derive(Debug, Clone)]
pub struct KnownUnknownSplit {
    pub train_known: LabeledDataset,
    pub test_known: LabeledDataset,
    pub test_unknown: LabeledDataset,
    pub train_ids: Vec<usize>,
    pub test_known_ids: Vec<usize>,
    pub test_unknown_ids: Vec<usize>,
}

/// Stratified known/unknown split. Known labels are remapped to `0..k` in
/// ascending original-id order; unknown samples keep their original labels.
pub fn split_known_unknown(dataset: &LabeledDataset, spec: &SplitSpec) -> Result<KnownUnknownSplit> {
    spec.validate(dataset.class_count())?;
    let known = spec.sorted_known();
    let by_class = dataset.indices_by_class();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut train_ids = Vec::new();
    let mut test_known_ids = Vec::new();
    for &c in &known {
        let mut ids = by_class[c].clone();
        ids.shuffle(&mut rng);
        let n_train = (ids.len() as f64 * spec.train_fraction).round() as usize;
        train_ids.extend_from_slice(&ids[..n_train]);
        test_known_ids.extend_from_slice(&ids[n_train..]);
    }
    train_ids.sort_unstable();
    test_known_ids.sort_unstable();
    let mut test_unknown_ids: Vec<usize> = spec
        .unknown_classes
        .iter()
        .flat_map(|&c| by_class[c].iter().copied())
        .collect();
    test_unknown_ids.sort_unstable();

    let names: Vec<String> = match dataset.class_names() {
        Some(n) => known.iter().map(|&c| n[c].clone()).collect(),
        None => known.iter().map(|c| c.to_string()).collect(),
    };
    let remap = |ids: &[usize]| -> Result<LabeledDataset> {
        let sub = dataset.subset(ids);
        let labels = sub
            .labels()
            .iter()
            .map(|l| known.binary_search(l).expect("only known classes selected"))
            .collect();
        LabeledDataset::new(sub.features, sub.dim, labels, known.len())?.with_class_names(names.clone())
    };
    Ok(KnownUnknownSplit {
        train_known: remap(&train_ids)?,
        test_known: remap(&test_known_ids)?,
        test_unknown: dataset.subset(&test_unknown_ids),
        train_ids,
        test_known_ids,
        test_unknown_ids,
    })
}

/// Picks `n_known` of `n_classes` classes at random; the rest are unknown.
pub fn sample_class_split(n_classes: usize, n_known: usize, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let mut all: Vec<usize> = (0..n_classes).collect();
    all.shuffle(rng);
    let mut known = all[..n_known.min(n_classes)].to_vec();
    let mut unknown = all[n_known.min(n_classes)..].to_vec();
    known.sort_unstable();
    unknown.sort_unstable();
    (known, unknown)
}
