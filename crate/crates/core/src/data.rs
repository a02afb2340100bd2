//! Datasets: delimited tabular files with a column schema, the 16×16 digit
//! text format, z-score normalization, seeded splits and synthetic
//! generators.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::seeds::{self, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Continuous,
    /// 0/1 indicator; left untouched by normalization and never shifted.
    BinaryFactor,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: ColumnRole,
    pub shift_eligible: bool,
}

impl ColumnSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            role: ColumnRole::Continuous,
            shift_eligible: true,
        }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            role: ColumnRole::BinaryFactor,
            shift_eligible: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum LabelSpec {
    /// Integer class in the last column; `min_label` maps to class 0.
    Class {
        n_classes: usize,
        #[serde(default)]
        min_label: i64,
    },
    /// Real targets in the last `n_targets` columns.
    Regression { n_targets: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<ColumnSpec>,
    pub label: LabelSpec,
    pub has_header: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    #[serde(default)]
    has_header: bool,
    label: LabelSpec,
    columns: Vec<ColumnEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ColumnEntry {
    name: String,
    role: ColumnRole,
    shift_eligible: Option<bool>,
    /// Expands to `name1..nameN`.
    count: Option<usize>,
}

impl FeatureSchema {
    pub fn new(columns: Vec<ColumnSpec>, label: LabelSpec) -> Result<Self> {
        let schema = Self {
            columns,
            label,
            has_header: false,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn all_continuous(d: usize, label: LabelSpec) -> Self {
        Self {
            columns: (0..d).map(|i| ColumnSpec::continuous(format!("x{i}"))).collect(),
            label,
            has_header: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.columns {
            if c.role == ColumnRole::BinaryFactor && c.shift_eligible {
                return Err(Error::Schema(format!(
                    "binary factor column '{}' cannot be shift eligible",
                    c.name
                )));
            }
        }
        match self.label {
            LabelSpec::Class { n_classes, .. } if n_classes < 2 => {
                Err(Error::Schema("classification needs at least two classes".into()))
            }
            LabelSpec::Regression { n_targets: 0 } => {
                Err(Error::Schema("regression needs at least one target".into()))
            }
            _ => Ok(()),
        }
    }

    /// Parses the structured-text schema format.
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: SchemaFile = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        let mut columns = Vec::new();
        for entry in file.columns {
            let eligible = entry
                .shift_eligible
                .unwrap_or(entry.role == ColumnRole::Continuous);
            let names: Vec<String> = match entry.count {
                None => vec![entry.name],
                Some(n) => (1..=n).map(|i| format!("{}{i}", entry.name)).collect(),
            };
            for name in names {
                columns.push(ColumnSpec {
                    name,
                    role: entry.role,
                    shift_eligible: eligible,
                });
            }
        }
        let schema = Self {
            columns,
            label: file.label,
            has_header: file.has_header,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// The public forest cover-type layout: ten cartographic measurements,
    /// four wilderness indicators, forty soil indicators, classes 1–7.
    pub fn cover_type() -> Self {
        let mut columns: Vec<ColumnSpec> = [
            "Elevation",
            "Aspect",
            "Slope",
            "Horizontal_Distance_To_Hydrology",
            "Vertical_Distance_To_Hydrology",
            "Horizontal_Distance_To_Roadways",
            "Hillshade_9am",
            "Hillshade_Noon",
            "Hillshade_3pm",
            "Horizontal_Distance_To_Fire_Points",
        ]
        .into_iter()
        .map(ColumnSpec::continuous)
        .collect();
        columns.extend((1..=4).map(|i| ColumnSpec::binary(format!("Wilderness_Area{i}"))));
        columns.extend((1..=40).map(|i| ColumnSpec::binary(format!("Soil_Type{i}"))));
        Self {
            columns,
            label: LabelSpec::Class {
                n_classes: 7,
                min_label: 1,
            },
            has_header: false,
        }
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn eligible_columns(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.shift_eligible)
            .map(|(i, _)| i)
            .collect()
    }

    fn label_width(&self) -> usize {
        match self.label {
            LabelSpec::Class { .. } => 1,
            LabelSpec::Regression { n_targets } => n_targets,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Classes { values: Vec<usize>, n_classes: usize },
    Targets(Matrix),
}

impl Labels {
    fn len(&self) -> usize {
        match self {
            Labels::Classes { values, .. } => values.len(),
            Labels::Targets(m) => m.rows(),
        }
    }

    fn select(&self, rows: &[usize]) -> Self {
        match self {
            Labels::Classes { values, n_classes } => Labels::Classes {
                values: rows.iter().map(|&i| values[i]).collect(),
                n_classes: *n_classes,
            },
            Labels::Targets(m) => Labels::Targets(m.select_rows(rows)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageGeometry {
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Labels,
    pub schema: FeatureSchema,
    /// Present for image data; rows are the row-major flattened images.
    pub geometry: Option<ImageGeometry>,
}

/// Width of the network output for a class count: a single logit for two
/// classes, one sigmoid unit per class otherwise.
pub fn output_width(n_classes: usize) -> usize {
    if n_classes == 2 {
        1
    } else {
        n_classes
    }
}

/// Class read off a network output row, matching [`output_width`].
pub fn decode_class(output: &[f64]) -> usize {
    if output.len() == 1 {
        usize::from(output[0] > 0.0)
    } else {
        output
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    }
}

impl Dataset {
    pub fn new(features: Matrix, labels: Labels, schema: FeatureSchema) -> Result<Self> {
        let ds = Self {
            features,
            labels,
            schema,
            geometry: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.cols() != self.schema.n_features() {
            return Err(Error::Schema(format!(
                "{} feature columns but schema lists {}",
                self.features.cols(),
                self.schema.n_features()
            )));
        }
        if self.labels.len() != self.features.rows() {
            return Err(Error::shape("labels", self.features.rows(), self.labels.len()));
        }
        if !self.features.all_finite() {
            return Err(Error::Validation("features contain non-finite values".into()));
        }
        match &self.labels {
            Labels::Classes { values, n_classes } => {
                if let Some(bad) = values.iter().find(|&&v| v >= *n_classes) {
                    return Err(Error::Validation(format!(
                        "label {bad} outside {n_classes} classes"
                    )));
                }
            }
            Labels::Targets(m) => {
                if !m.all_finite() {
                    return Err(Error::Validation("targets contain non-finite values".into()));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn class_labels(&self) -> Option<&[usize]> {
        match &self.labels {
            Labels::Classes { values, .. } => Some(values),
            Labels::Targets(_) => None,
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match &self.labels {
            Labels::Classes { n_classes, .. } => Some(*n_classes),
            Labels::Targets(_) => None,
        }
    }

    /// Network output width for this dataset.
    pub fn output_dim(&self) -> usize {
        match &self.labels {
            Labels::Classes { n_classes, .. } => output_width(*n_classes),
            Labels::Targets(m) => m.cols(),
        }
    }

    /// Training targets: 0/1 for binary tasks, one-vs-all indicators for
    /// multiclass tasks, raw values for regression.
    pub fn targets(&self) -> Matrix {
        match &self.labels {
            Labels::Classes { values, n_classes } => {
                let width = output_width(*n_classes);
                let mut t = Matrix::zeros(values.len(), width);
                for (r, &c) in values.iter().enumerate() {
                    if width == 1 {
                        t[(r, 0)] = c as f64;
                    } else {
                        t[(r, c)] = 1.0;
                    }
                }
                t
            }
            Labels::Targets(m) => m.clone(),
        }
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(rows),
            labels: self.labels.select(rows),
            schema: self.schema.clone(),
            geometry: self.geometry,
        }
    }

    pub fn with_features(&self, features: Matrix) -> Self {
        Self {
            features,
            labels: self.labels.clone(),
            schema: self.schema.clone(),
            geometry: self.geometry,
        }
    }
}

/// Stacks datasets that share a schema, in order.
pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Validation("nothing to concatenate".into()))?;
    let d = first.n_features();
    let mut features = Vec::new();
    let mut classes = Vec::new();
    let mut targets = Vec::new();
    for p in parts {
        if p.schema != first.schema {
            return Err(Error::Schema("datasets have different schemas".into()));
        }
        features.extend_from_slice(p.features.as_slice());
        match (&p.labels, &first.labels) {
            (Labels::Classes { values, .. }, Labels::Classes { .. }) => classes.extend_from_slice(values),
            (Labels::Targets(m), Labels::Targets(_)) => targets.extend_from_slice(m.as_slice()),
            _ => return Err(Error::Schema("datasets mix class labels and targets".into())),
        }
    }
    let n = features.len() / d.max(1);
    let labels = match &first.labels {
        Labels::Classes { n_classes, .. } => Labels::Classes {
            values: classes,
            n_classes: *n_classes,
        },
        Labels::Targets(m) => Labels::Targets(Matrix::from_vec(n, m.cols(), targets)?),
    };
    Ok(Dataset {
        features: Matrix::from_vec(n, d, features)?,
        labels,
        schema: first.schema.clone(),
        geometry: first.geometry,
    })
}

/// Reads a delimited file: feature columns in schema order, then the label
/// column(s). Row numbers in errors are 1-based file lines.
pub fn load_tabular(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_tabular(file, schema)
}

pub fn read_tabular<R: std::io::Read>(reader: R, schema: &FeatureSchema) -> Result<Dataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let nf = schema.n_features();
    let width = nf + schema.label_width();
    let mut features = Vec::new();
    let mut classes = Vec::new();
    let mut targets = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            row: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != width {
            return Err(Error::Schema(format!(
                "row {row} has {} fields, schema expects {width}",
                record.len()
            )));
        }
        let mut values = Vec::with_capacity(width);
        for (ci, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                message: format!("field {} ('{field}') is not numeric", ci + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("field {} is not finite", ci + 1),
                });
            }
            values.push(v);
        }
        features.extend_from_slice(&values[..nf]);
        match schema.label {
            LabelSpec::Class { n_classes, min_label } => {
                let raw = values[nf];
                if raw.fract() != 0.0 {
                    return Err(Error::Parse {
                        row,
                        message: format!("label {raw} is not an integer"),
                    });
                }
                let c = raw as i64 - min_label;
                if c < 0 || c as usize >= n_classes {
                    return Err(Error::Parse {
                        row,
                        message: format!("label {raw} outside the declared classes"),
                    });
                }
                classes.push(c as usize);
            }
            LabelSpec::Regression { .. } => targets.extend_from_slice(&values[nf..]),
        }
    }
    let n = features.len() / nf.max(1);
    let labels = match schema.label {
        LabelSpec::Class { n_classes, .. } => Labels::Classes {
            values: classes,
            n_classes,
        },
        LabelSpec::Regression { n_targets } => Labels::Targets(Matrix::from_vec(n, n_targets, targets)?),
    };
    Dataset::new(Matrix::from_vec(n, nf, features)?, labels, schema.clone())
}

/// Per-column training statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Whether each column is z-scored (continuous) or passed through.
    pub normalized: Vec<bool>,
}

impl NormStats {
    /// Population statistics of every continuous column.
    pub fn fit(train: &Dataset) -> Result<Self> {
        let n = train.len();
        if n == 0 {
            return Err(Error::Validation("cannot normalize an empty dataset".into()));
        }
        let d = train.n_features();
        let mut mean = vec![0.0; d];
        let mut std = vec![1.0; d];
        let mut normalized = vec![false; d];
        for (j, col) in train.schema.columns.iter().enumerate() {
            if col.role != ColumnRole::Continuous {
                continue;
            }
            let values = train.features.column(j);
            let m = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            let s = var.sqrt();
            if !(s > 0.0) {
                return Err(Error::Validation(format!(
                    "continuous column '{}' has zero variance",
                    col.name
                )));
            }
            mean[j] = m;
            std[j] = s;
            normalized[j] = true;
        }
        Ok(Self {
            mean,
            std,
            normalized,
        })
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.n_features() != self.mean.len() {
            return Err(Error::shape("NormStats::apply", self.mean.len(), ds.n_features()));
        }
        let mut f = ds.features.clone();
        for r in 0..f.rows() {
            for (j, x) in f.row_mut(r).iter_mut().enumerate() {
                if self.normalized[j] {
                    *x = (*x - self.mean[j]) / self.std[j];
                }
            }
        }
        Ok(ds.with_features(f))
    }
}

/// Fits statistics on `train` and returns the z-scored copy.
pub fn normalize(train: &Dataset) -> Result<(NormStats, Dataset)> {
    let stats = NormStats::fit(train)?;
    let out = stats.apply(train)?;
    Ok((stats, out))
}

/// Seeded shuffle, then contiguous train / validation / test partitions.
/// Validation and test sizes are `floor(n·fraction)`; the remainder goes to
/// train.
pub fn split(ds: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (ft, fv, fs) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fs > 0.0) {
        return Err(Error::Validation("split fractions must all be positive".into()));
    }
    if (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::Validation("split fractions must sum to 1".into()));
    }
    let n = ds.len();
    let n_val = (n as f64 * fv + 1e-9).floor() as usize;
    let n_test = (n as f64 * fs + 1e-9).floor() as usize;
    let n_train = n.saturating_sub(n_val + n_test);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Validation(format!(
            "split of {n} samples leaves an empty partition"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeds::rng(seed, Stream::Split, 0));
    let train = ds.subset(&idx[..n_train]);
    let val = ds.subset(&idx[n_train..n_train + n_val]);
    let test = ds.subset(&idx[n_train + n_val..]);
    Ok((train, val, test))
}

/// Seeded hold-out of `floor(n·fraction)` rows; returns `(rest, held_out)`.
pub fn holdout(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Validation("holdout fraction must lie in (0, 1)".into()));
    }
    let n = ds.len();
    let n_out = (n as f64 * fraction + 1e-9).floor() as usize;
    if n_out == 0 || n_out == n {
        return Err(Error::Validation("holdout leaves an empty partition".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeds::rng(seed, Stream::Split, 1));
    Ok((ds.subset(&idx[n_out..]), ds.subset(&idx[..n_out])))
}

/// Unit-variance Gaussian clusters whose means sit `separation` apart along
/// seeded random directions.
pub fn synth_clusters(n_per_class: usize, d: usize, n_classes: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 || d == 0 || n_classes < 2 {
        return Err(Error::Validation(
            "synth_clusters needs positive sizes and at least two classes".into(),
        ));
    }
    if !(separation >= 0.0) {
        return Err(Error::Validation("separation must be non-negative".into()));
    }
    let mut rng = seeds::rng(seed, Stream::Synth, 0);
    // Random directions, orthonormalized while there is room.
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    while dirs.len() < n_classes {
        let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        if dirs.len() < d {
            for prev in &dirs {
                let p = dot(&u, prev);
                for (ui, pi) in u.iter_mut().zip(prev) {
                    *ui -= p * pi;
                }
            }
        }
        let nu = dot(&u, &u).sqrt();
        if nu > 1e-8 {
            dirs.push(u.iter().map(|x| x / nu).collect());
        }
    }
    // Orthonormal means at distance r·√2 apart; r = separation/√2. For two
    // classes place them symmetrically at ±separation/2.
    let means: Vec<Vec<f64>> = if n_classes == 2 {
        let h = separation / 2.0;
        vec![
            dirs[0].iter().map(|x| h * x).collect(),
            dirs[0].iter().map(|x| -h * x).collect(),
        ]
    } else {
        let r = separation / std::f64::consts::SQRT_2;
        dirs.iter().map(|u| u.iter().map(|x| r * x).collect()).collect()
    };
    let n = n_per_class * n_classes;
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % n_classes;
        for m in &means[c] {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(m + z);
        }
        labels.push(c);
    }
    let label = LabelSpec::Class {
        n_classes,
        min_label: 0,
    };
    Dataset::new(
        Matrix::from_vec(n, d, features)?,
        Labels::Classes {
            values: labels,
            n_classes,
        },
        FeatureSchema::all_continuous(d, label),
    )
}

pub const DIGIT_SIDE: usize = 16;
const DIGIT_PIXELS: usize = DIGIT_SIDE * DIGIT_SIDE;

fn digits_schema(n_classes: usize) -> FeatureSchema {
    FeatureSchema {
        columns: (0..DIGIT_PIXELS)
            .map(|i| ColumnSpec {
                name: format!("px{i}"),
                role: ColumnRole::Continuous,
                shift_eligible: false,
            })
            .collect(),
        label: LabelSpec::Class {
            n_classes,
            min_label: 0,
        },
        has_header: false,
    }
}

/// Reads the whitespace-separated digit format: a label, then 256 grey
/// values per line. Values are mapped linearly to `[-1, 1]` unless they
/// already lie there.
pub fn load_digits(path: impl AsRef<Path>) -> Result<Dataset> {
    read_digits(&std::fs::read_to_string(path)?)
}

pub fn read_digits(text: &str) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 1 + DIGIT_PIXELS {
            return Err(Error::Parse {
                row,
                message: format!("expected {} values, found {}", 1 + DIGIT_PIXELS, fields.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    message: format!("'{s}' is not a finite number"),
                })
        };
        let label = parse(fields[0])?;
        if label.fract() != 0.0 || !(0.0..=9.0).contains(&label) {
            return Err(Error::Parse {
                row,
                message: format!("digit label {label} outside 0-9"),
            });
        }
        labels.push(label as usize);
        for f in &fields[1..] {
            pixels.push(parse(f)?);
        }
    }
    let (lo, hi) = pixels
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !pixels.is_empty() && (lo < -1.0 || hi > 1.0) {
        let span = (hi - lo).max(f64::MIN_POSITIVE);
        for p in &mut pixels {
            *p = (2.0 * (*p - lo) / span - 1.0).clamp(-1.0, 1.0);
        }
    }
    let n = labels.len();
    let mut ds = Dataset::new(
        Matrix::from_vec(n, DIGIT_PIXELS, pixels)?,
        Labels::Classes {
            values: labels,
            n_classes: 10,
        },
        digits_schema(10),
    )?;
    ds.geometry = Some(ImageGeometry {
        height: DIGIT_SIDE,
        width: DIGIT_SIDE,
    });
    Ok(ds)
}

/// Squared distance from `p` to the segment `a–b`.
fn segment_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    qx * qx + qy * qy
}

/// Seeded 16×16 two-class stroke images in `[-1, 1]` on a `-1` background.
///
/// Class 0 is a single near-vertical stroke (a "1"); class 1 adds a bar
/// across the top (a "7"). Tilt, length, bar width, thickness, placement
/// and pixel noise are random per image.
pub fn synth_digits(n_per_class: usize, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::Validation("n_per_class must be positive".into()));
    }
    let mut rng = seeds::rng(seed, Stream::Synth, 1);
    let noise = Normal::new(0.0, 0.05).expect("valid std");
    let n = 2 * n_per_class;
    let mut pixels = Vec::with_capacity(n * DIGIT_PIXELS);
    let mut labels = Vec::with_capacity(n);
    let c = (DIGIT_SIDE as f64 - 1.0) / 2.0;
    for i in 0..n {
        let class = i % 2;
        let tilt: f64 = rng.random_range(-12.0..12.0_f64).to_radians();
        let half = rng.random_range(4.5..6.5);
        let width = rng.random_range(0.6..1.0);
        let cx = c + rng.random_range(-1.5..1.5);
        let cy = c + rng.random_range(-1.0..1.0);
        // Angle measured from vertical; image rows grow downward.
        let (s, co) = tilt.sin_cos();
        let bottom = (cx - half * s, cy + half * co);
        let top = (cx + half * s, cy - half * co);
        let mut segments = vec![(bottom, top)];
        if class == 1 {
            let bar = rng.random_range(3.5..6.0);
            let droop = rng.random_range(-0.6..0.6);
            segments.push(((top.0 - bar, top.1 + droop), top));
        }
        for r in 0..DIGIT_SIDE {
            for col in 0..DIGIT_SIDE {
                let p = (col as f64, r as f64);
                let d2 = segments
                    .iter()
                    .map(|&(a, b)| segment_dist2(p, a, b))
                    .fold(f64::INFINITY, f64::min);
                let ink = (-d2 / (2.0 * width * width)).exp();
                let v: f64 = -1.0 + 2.0 * ink + noise.sample(&mut rng);
                pixels.push(v.clamp(-1.0, 1.0));
            }
        }
        labels.push(class);
    }
    let mut ds = Dataset::new(
        Matrix::from_vec(n, DIGIT_PIXELS, pixels)?,
        Labels::Classes {
            values: labels,
            n_classes: 2,
        },
        digits_schema(2),
    )?;
    ds.geometry = Some(ImageGeometry {
        height: DIGIT_SIDE,
        width: DIGIT_SIDE,
    });
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn two_col_schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![ColumnSpec::continuous("a"), ColumnSpec::continuous("b")],
            LabelSpec::Class {
                n_classes: 3,
                min_label: 0,
            },
        )
        .unwrap()
    }

    #[test]
    fn loads_small_table() {
        let text = "1.0,2.0,0\n3.5,-1,2\n0,0,1\n";
        let ds = read_tabular(text.as_bytes(), &two_col_schema()).unwrap();
        assert_eq!((ds.len(), ds.n_features()), (3, 2));
        assert_eq!(ds.class_labels().unwrap(), &[0, 2, 1]);
        assert_eq!(ds.features.row(1), &[3.5, -1.0]);
    }

    #[test]
    fn text_field_names_row() {
        let text = "1.0,2.0,0\n3.5,abc,2\n";
        match read_tabular(text.as_bytes(), &two_col_schema()).unwrap_err() {
            Error::Parse { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn column_count_mismatch_is_schema_error() {
        let text = "1.0,2.0,0\n3.5,2\n";
        assert!(matches!(
            read_tabular(text.as_bytes(), &two_col_schema()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn header_row_skipped_when_flagged() {
        let mut schema = two_col_schema();
        schema.has_header = true;
        let ds = read_tabular("a,b,label\n1,2,0\n".as_bytes(), &schema).unwrap();
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn schema_file_expands_counts() {
        let text = r#"
            [label]
            kind = "class"
            n_classes = 7
            min_label = 1

            [[columns]]
            name = "Elevation"
            role = "continuous"

            [[columns]]
            name = "Soil_Type"
            role = "binary_factor"
            count = 3
        "#;
        let schema = FeatureSchema::from_toml(text).unwrap();
        assert_eq!(schema.n_features(), 4);
        assert_eq!(schema.columns[3].name, "Soil_Type3");
        assert_eq!(schema.eligible_columns(), vec![0]);
    }

    #[test]
    fn binary_factor_cannot_be_eligible() {
        let text = r#"
            [label]
            kind = "class"
            n_classes = 2
            [[columns]]
            name = "w"
            role = "binary_factor"
            shift_eligible = true
        "#;
        assert!(matches!(FeatureSchema::from_toml(text), Err(Error::Schema(_))));
    }

    #[test]
    fn unknown_schema_keys_rejected() {
        let text = r#"
            bogus = 1
            [label]
            kind = "class"
            n_classes = 2
            [[columns]]
            name = "w"
            role = "continuous"
        "#;
        assert!(FeatureSchema::from_toml(text).is_err());
    }

    #[test]
    fn normalize_two_values() {
        let schema = FeatureSchema::new(
            vec![ColumnSpec::continuous("x"), ColumnSpec::binary("b")],
            LabelSpec::Class {
                n_classes: 2,
                min_label: 0,
            },
        )
        .unwrap();
        let ds = Dataset::new(
            Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 1.0]]).unwrap(),
            Labels::Classes {
                values: vec![0, 1],
                n_classes: 2,
            },
            schema,
        )
        .unwrap();
        let (stats, out) = normalize(&ds).unwrap();
        assert_eq!((stats.mean[0], stats.std[0]), (1.0, 1.0));
        assert_eq!(out.features.column(0), vec![-1.0, 1.0]);
        assert_eq!(out.features.column(1), vec![0.0, 1.0]);
    }

    #[test]
    fn zero_variance_column_named() {
        let ds = Dataset::new(
            Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap(),
            Labels::Classes {
                values: vec![0, 1],
                n_classes: 2,
            },
            two_col_schema(),
        );
        // label 1 within 3 classes; column a is constant
        let err = normalize(&ds.unwrap()).unwrap_err();
        assert!(err.to_string().contains("'a'"));
    }

    #[test]
    fn split_sizes() {
        let ds = synth_clusters(50, 2, 2, 3.0, 1).unwrap();
        let (tr, va, te) = split(&ds, (0.64, 0.16, 0.20), 5).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (64, 16, 20));
        let (tr2, _, _) = split(&ds, (0.64, 0.16, 0.20), 5).unwrap();
        assert_eq!(tr, tr2);
    }

    #[test]
    fn degenerate_split_rejected() {
        let ds = synth_clusters(5, 2, 2, 3.0, 1).unwrap();
        assert!(split(&ds, (1.0, 0.0, 0.0), 0).is_err());
        assert!(split(&ds, (0.98, 0.01, 0.01), 0).is_err());
    }

    #[test]
    fn synth_clusters_deterministic() {
        let a = synth_clusters(10, 3, 3, 4.0, 9).unwrap();
        let b = synth_clusters(10, 3, 3, 4.0, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_clusters(10, 3, 3, 4.0, 10).unwrap());
    }

    #[test]
    fn digits_parse_and_scale() {
        let mut line = String::from("3");
        for i in 0..256 {
            line.push_str(&format!(" {}", i as f64));
        }
        let ds = read_digits(&format!("{line}\n{line}\n")).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.geometry.unwrap().width, 16);
        assert!(ds.features.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(ds.features[(0, 0)], -1.0);
        assert_eq!(ds.features[(0, 255)], 1.0);
    }

    #[test]
    fn digits_wrong_count() {
        let err = read_digits("1 0.5 0.5\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, .. }));
    }

    #[test]
    fn digits_file_round_trip() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for k in 0..3 {
            write!(f, "{k}").unwrap();
            for _ in 0..256 {
                write!(f, " -0.5").unwrap();
            }
            writeln!(f).unwrap();
        }
        let ds = load_digits(f.path()).unwrap();
        assert_eq!(ds.class_labels().unwrap(), &[0, 1, 2]);
        assert!(ds.features.as_slice().iter().all(|&v| v == -0.5));
    }

    #[test]
    fn synth_digits_shape() {
        let ds = synth_digits(5, 3).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.n_features(), 256);
        assert!(ds.features.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn targets_encoding() {
        let ds = synth_clusters(2, 2, 3, 1.0, 0).unwrap();
        let t = ds.targets();
        assert_eq!(t.cols(), 3);
        assert!(t.as_slice().iter().sum::<f64>() == 6.0);
        assert_eq!(decode_class(&[0.1, 0.9, -1.0]), 1);
        assert_eq!(decode_class(&[-0.2]), 0);
        assert_eq!(decode_class(&[0.2]), 1);
    }
}
