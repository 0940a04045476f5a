//! Datasets: Gaussian blobs, CSV I/O, and seeded batching.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

/// Radius of the ring (or sphere) the blob centers sit on.
pub const BLOB_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One row of `dim` features per sample.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidInput("dataset has no samples".to_string()));
        }
        if features.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} feature rows for {} labels",
                features.len(),
                labels.len()
            )));
        }
        let dim = features[0].len();
        for (i, row) in features.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} features, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("row {i} has a non-finite feature")));
            }
        }
        if let Some(i) = labels.iter().position(|&y| y >= n_classes) {
            return Err(Error::InvalidInput(format!(
                "label {} at row {i} out of range for {n_classes} classes",
                labels[i]
            )));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Rows at the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> (Vec<&[f64]>, Vec<usize>) {
        indices
            .iter()
            .map(|&i| (self.features[i].as_slice(), self.labels[i]))
            .unzip()
    }
}

/// Class centers: evenly spaced on a radius-3 circle for `dim = 2`,
/// seeded random unit directions scaled to radius 3 otherwise.
pub fn blob_centers(n_classes: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    if dim == 2 {
        return (0..n_classes)
            .map(|c| {
                let angle = std::f64::consts::TAU * c as f64 / n_classes as f64;
                vec![BLOB_RADIUS * angle.cos(), BLOB_RADIUS * angle.sin()]
            })
            .collect();
    }
    let mut rng = SplitMix64::new(derive_seed(seed, 0xC3));
    (0..n_classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| BLOB_RADIUS * x / norm).collect();
            }
        })
        .collect()
}

/// `per_class` Gaussian samples (std `spread`) around each class center,
/// emitted class by class.
pub fn make_blobs(
    n_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_classes < 2 || per_class == 0 || dim == 0 {
        return Err(Error::InvalidParameter(format!(
            "need ≥ 2 classes, ≥ 1 sample per class and ≥ 1 dimension \
             (got {n_classes}, {per_class}, {dim})"
        )));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "spread must be positive, got {spread}"
        )));
    }
    let centers = blob_centers(n_classes, dim, seed);
    let mut rng = SplitMix64::new(seed);
    let mut features = Vec::with_capacity(n_classes * per_class);
    let mut labels = Vec::with_capacity(n_classes * per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            features.push(center.iter().map(|m| m + spread * rng.gaussian()).collect());
            labels.push(c);
        }
    }
    Dataset::new(features, labels, n_classes)
}

/// Write `label,f0,f1,...` with shortest round-trip decimal formatting.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("label");
    for j in 0..ds.dim() {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for (row, y) in ds.features.iter().zip(&ds.labels) {
        out.push_str(&y.to_string());
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

/// Read a `label,f0,...` CSV. Row numbers in errors count the header as row 1.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let parse_err = |row: usize, message: String| Error::DataParse {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_io(e, path))?;
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.get(0).map(str::trim) != Some("label") || header.len() < 2 {
        return Err(parse_err(
            1,
            "header must be 'label,f0,f1,...' with at least one feature".to_string(),
        ));
    }
    let dim = header.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 2;
        let record = record.map_err(|e| parse_err(row, e.to_string()))?;
        if record.len() != dim + 1 {
            return Err(parse_err(
                row,
                format!("expected {} fields, found {}", dim + 1, record.len()),
            ));
        }
        let label: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(row, format!("label '{}' is not a class index", &record[0])))?;
        let feats = record
            .iter()
            .skip(1)
            .map(|cell| {
                cell.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(row, format!("feature '{cell}' is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        features.push(feats);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    if n_classes < 2 {
        return Err(parse_err(2, "labels span fewer than 2 classes".to_string()));
    }
    Dataset::new(features, labels, n_classes)
}

/// Like [`load_csv`] but checks labels against a known class count.
pub fn load_csv_with_classes(path: &Path, n_classes: usize) -> Result<Dataset> {
    let mut ds = load_csv(path)?;
    if ds.n_classes > n_classes {
        let row = ds.labels.iter().position(|&y| y >= n_classes).unwrap_or(0) + 2;
        return Err(Error::DataParse {
            path: path.to_path_buf(),
            row,
            message: format!("label out of range for {n_classes} classes"),
        });
    }
    ds.n_classes = n_classes;
    Ok(ds)
}

fn csv_io(e: csv::Error, path: &Path) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::DataParse {
            path: path.to_path_buf(),
            row: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Shuffled batches of sample indices for one epoch. The permutation comes
/// from SplitMix64 seeded by `(seed, epoch)` and a back-to-front
/// Fisher–Yates pass; the last batch may be short.
pub fn batch_iter(ds: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    index_batches(ds.len(), batch_size, seed, epoch)
}

/// [`batch_iter`] over `0..n`.
pub fn index_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(derive_seed(seed, epoch)).shuffle(&mut order);
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}
