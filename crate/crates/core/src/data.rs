//! Loading, saving and standardizing tabular data, plus the smiley generator.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{DgmmError, Result};

/// Column centering and scaling applied by [`standardize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Columns with zero spread; these were centered but not scaled.
    pub constant: Vec<bool>,
}

impl Standardization {
    pub fn has_constant_columns(&self) -> bool {
        self.constant.iter().any(|&c| c)
    }

    /// Maps a standardized row back to the original units.
    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

/// Observations (rows) with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    /// One-based class codes.
    pub labels: Option<Vec<usize>>,
    pub feature_names: Option<Vec<String>>,
    /// Original label strings, indexed by code - 1.
    pub label_names: Option<Vec<String>>,
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
            let (row, col) = (bad % x.nrows(), bad / x.nrows());
            return Err(DgmmError::Csv {
                row: row + 1,
                col: col + 1,
                msg: "value is not finite".into(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != x.nrows() {
                return Err(DgmmError::DimensionMismatch {
                    expected: x.nrows(),
                    found: l.len(),
                });
            }
        }
        Ok(Self {
            x,
            labels,
            feature_names: None,
            label_names: None,
            standardization: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Which column holds class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    /// Zero-based position.
    Index(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadOptions {
    pub has_header: bool,
    pub label_column: Option<LabelColumn>,
    pub delimiter: u8,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            has_header: true,
            label_column: None,
            delimiter: b',',
        }
    }
}

/// Encodes values as 1..k in order of first appearance.
pub fn encode_labels<S: AsRef<str>>(values: &[S]) -> (Vec<usize>, Vec<String>) {
    let mut codes = HashMap::new();
    let mut names = Vec::new();
    let labels = values
        .iter()
        .map(|v| {
            *codes.entry(v.as_ref().to_string()).or_insert_with(|| {
                names.push(v.as_ref().to_string());
                names.len()
            })
        })
        .collect();
    (labels, names)
}

fn csv_error(e: csv::Error) -> DgmmError {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    DgmmError::Csv {
        row,
        col: 0,
        msg: e.to_string(),
    }
}

pub fn load_csv(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, options)
}

/// Parses delimited text. Row and column numbers in errors are one-based and
/// count the header line.
pub fn read_csv<R: Read>(reader: R, options: &LoadOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .delimiter(options.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Option<Vec<String>> = if options.has_header {
        let h = rdr.headers().map_err(csv_error)?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        records.push((line, rec));
    }
    let width = match (&header, records.first()) {
        (Some(h), _) if !h.is_empty() && !(h.len() == 1 && h[0].is_empty()) => h.len(),
        (_, Some((_, r))) => r.len(),
        _ => 0,
    };
    if records.is_empty() || width == 0 {
        return Err(DgmmError::Empty("the file contains no data rows".into()));
    }

    let label_idx = match &options.label_column {
        None => None,
        Some(LabelColumn::Index(i)) if *i < width => Some(*i),
        Some(LabelColumn::Index(i)) => {
            return Err(DgmmError::InvalidArgument(format!(
                "label column {} is out of range for {width} columns",
                i + 1
            )))
        }
        Some(LabelColumn::Name(name)) => {
            let Some(h) = &header else {
                return Err(DgmmError::InvalidArgument(format!(
                    "label column '{name}' given by name but the file has no header"
                )));
            };
            match h.iter().position(|c| c == name) {
                Some(i) => Some(i),
                None => match name.parse::<usize>() {
                    Ok(i) if (1..=width).contains(&i) => Some(i - 1),
                    _ => {
                        return Err(DgmmError::InvalidArgument(format!(
                            "no column named '{name}'"
                        )))
                    }
                },
            }
        }
    };
    let p = width - usize::from(label_idx.is_some());
    if p == 0 {
        return Err(DgmmError::Empty("no feature columns".into()));
    }

    let n = records.len();
    let mut x = DMatrix::zeros(n, p);
    let mut raw_labels = Vec::with_capacity(if label_idx.is_some() { n } else { 0 });
    for (i, (line, rec)) in records.iter().enumerate() {
        if rec.len() != width {
            return Err(DgmmError::Csv {
                row: *line,
                col: rec.len().min(width) + 1,
                msg: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let mut j = 0;
        for (c, cell) in rec.iter().enumerate() {
            if Some(c) == label_idx {
                raw_labels.push(cell.to_string());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| DgmmError::Csv {
                row: *line,
                col: c + 1,
                msg: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(DgmmError::Csv {
                    row: *line,
                    col: c + 1,
                    msg: format!("'{cell}' is not finite"),
                });
            }
            x[(i, j)] = v;
            j += 1;
        }
    }

    let (labels, label_names) = if label_idx.is_some() {
        let (codes, names) = encode_labels(&raw_labels);
        (Some(codes), Some(names))
    } else {
        (None, None)
    };
    let feature_names = header.map(|h| {
        h.into_iter()
            .enumerate()
            .filter(|(c, _)| Some(*c) != label_idx)
            .map(|(_, name)| name)
            .collect()
    });
    Ok(Dataset {
        x,
        labels,
        feature_names,
        label_names,
        standardization: None,
    })
}

/// Writes features (with a header) and, if present, a `class` column of
/// one-based codes. Values are printed with round-trip precision.
pub fn write_csv<W: Write>(w: W, ds: &Dataset) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| DgmmError::Io(std::io::Error::other(e));
    let mut header: Vec<String> = match &ds.feature_names {
        Some(names) if names.len() == ds.p() => names.clone(),
        _ => (1..=ds.p()).map(|j| format!("x{j}")).collect(),
    };
    if ds.labels.is_some() {
        header.push("class".into());
    }
    out.write_record(&header).map_err(io)?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..ds.n() {
        row.clear();
        row.extend((0..ds.p()).map(|j| format!("{:?}", ds.x[(i, j)])));
        if let Some(l) = &ds.labels {
            row.push(l[i].to_string());
        }
        out.write_record(&row).map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_csv(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv(std::io::BufWriter::new(file), ds)
}

/// Reads a label file: the `class` column if the header has one, otherwise
/// the last column. Labels are encoded by first appearance.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(csv_error)?.clone();
    let col = header
        .iter()
        .position(|c| c == "class")
        .unwrap_or(header.len().saturating_sub(1));
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let cell = rec.get(col).ok_or_else(|| DgmmError::Csv {
            row: line,
            col: col + 1,
            msg: "missing label field".into(),
        })?;
        values.push(cell.to_string());
    }
    if values.is_empty() {
        return Err(DgmmError::Empty("the label file contains no rows".into()));
    }
    Ok(encode_labels(&values).0)
}

/// Centers each column and divides by its sample standard deviation (n - 1).
/// Constant columns are only centered and flagged.
pub fn standardize(ds: &Dataset) -> Dataset {
    let (n, p) = (ds.n(), ds.p());
    let mut x = ds.x.clone();
    let mut means = vec![0.0; p];
    let mut sds = vec![1.0; p];
    let mut constant = vec![false; p];
    for j in 0..p {
        let col = ds.x.column(j);
        let mean = col.sum() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
        means[j] = mean;
        if sd <= 1e-12 * mean.abs().max(1.0) {
            constant[j] = true;
            x.column_mut(j).iter_mut().for_each(|v| *v -= mean);
        } else {
            sds[j] = sd;
            x.column_mut(j).iter_mut().for_each(|v| *v = (*v - mean) / sd);
        }
    }
    Dataset {
        x,
        standardization: Some(Standardization { means, sds, constant }),
        ..ds.clone()
    }
}

/// Two-dimensional face with Gaussian eyes, a triangular nose and a parabolic
/// mouth, plus an independent Gaussian noise coordinate. Labels are
/// 1 = left eye, 2 = right eye, 3 = nose, 4 = mouth.
pub fn generate_smiley<R: Rng + ?Sized>(
    n: usize,
    sd_eyes: f64,
    sd_mouth: f64,
    sd_noise: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if n < 4 {
        return Err(DgmmError::InvalidArgument(format!(
            "smiley needs at least 4 observations, got {n}"
        )));
    }
    for (name, v) in [("sd_eyes", sd_eyes), ("sd_mouth", sd_mouth), ("sd_noise", sd_noise)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(DgmmError::InvalidArgument(format!(
                "{name} must be finite and non-negative, got {v}"
            )));
        }
    }
    let mut x = DMatrix::zeros(n, 3);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = rng.random_range(0..4usize);
        let (a, b) = match class {
            0 | 1 => {
                let cx = if class == 0 { -0.8 } else { 0.8 };
                let dx: f64 = rng.sample(StandardNormal);
                let dy: f64 = rng.sample(StandardNormal);
                (cx + sd_eyes * dx, 1.0 + sd_eyes * dy)
            }
            2 => {
                let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                // apex (0, 0.4), base corners (-0.3, -0.4) and (0.3, -0.4)
                (-0.3 * u + 0.3 * v, 0.4 - 0.8 * u - 0.8 * v)
            }
            _ => {
                let t: f64 = rng.random_range(-1.0..1.0);
                let e: f64 = rng.sample(StandardNormal);
                (t, 0.5 * t * t - 1.5 + sd_mouth * e)
            }
        };
        let z: f64 = rng.sample(StandardNormal);
        x[(i, 0)] = a;
        x[(i, 1)] = b;
        x[(i, 2)] = sd_noise * z + 0.0;
        labels.push(class + 1);
    }
    let mut ds = Dataset::new(x, Some(labels))?;
    ds.feature_names = Some(vec!["x1".into(), "x2".into(), "x3".into()]);
    Ok(ds)
}
