//! Generalization harnesses: covariate-shift re-weighting trials, test-time
//! image augmentation, and slope statistics over trial tables.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{decode_class, Dataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::net::Network;
use crate::seeds::{self, Stream};

/// Anything that assigns class indices to feature rows.
pub trait Classifier: Sync {
    fn classify(&self, features: &Matrix) -> Result<Vec<usize>>;
}

impl Classifier for Network {
    fn classify(&self, features: &Matrix) -> Result<Vec<usize>> {
        let out = self.predict(features)?;
        Ok((0..out.rows()).map(|r| decode_class(out.row(r))).collect())
    }
}

/// Fraction of matching entries.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::shape("accuracy", labels.len(), predicted.len()));
    }
    if labels.is_empty() {
        return Err(Error::Validation("accuracy of an empty set".into()));
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// `Σ w_i·1[correct_i] / Σ w_i`.
pub fn weighted_accuracy(correct: &[bool], weights: &[f64]) -> Result<f64> {
    if correct.len() != weights.len() {
        return Err(Error::shape("weighted_accuracy", correct.len(), weights.len()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Validation("weights must have a positive finite sum".into()));
    }
    let hit: f64 = correct
        .iter()
        .zip(weights)
        .filter(|(c, _)| **c)
        .map(|(_, w)| *w)
        .sum();
    Ok(hit / total)
}

fn correctness(model: &dyn Classifier, test: &Dataset) -> Result<Vec<bool>> {
    let labels = test
        .class_labels()
        .ok_or_else(|| Error::Validation("evaluation needs class labels".into()))?;
    let pred = model.classify(&test.features)?;
    if pred.len() != labels.len() {
        return Err(Error::shape("classifier output", labels.len(), pred.len()));
    }
    Ok(pred.iter().zip(labels).map(|(p, l)| p == l).collect())
}

/// Per-row standard-normal density ratios for a mean shift `delta`, plus
/// the columns whose spread suggests the input was not z-scored.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftWeights {
    pub weights: Vec<f64>,
    pub unnormalized_columns: Vec<usize>,
}

/// `w_i = exp(Σ_j x_ij·δ_j − δ_j²/2)`: the product over columns of
/// `φ(x − δ) / φ(x)` for the standard normal density `φ`.
pub fn shift_weights(features: &Matrix, delta: &[f64]) -> Result<ShiftWeights> {
    if delta.len() != features.cols() {
        return Err(Error::shape("shift delta", features.cols(), delta.len()));
    }
    let n = features.rows();
    let mut unnormalized_columns = Vec::new();
    if n > 1 {
        for (j, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let col = features.column(j);
            let m = col.iter().sum::<f64>() / n as f64;
            let s = (col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64).sqrt();
            if !(0.5..=2.0).contains(&s) {
                unnormalized_columns.push(j);
            }
        }
    }
    let offset: f64 = delta.iter().map(|d| d * d / 2.0).sum();
    let mut weights = Vec::with_capacity(n);
    for r in 0..n {
        let mut log_w = 0.0;
        for (x, d) in features.row(r).iter().zip(delta) {
            if *d != 0.0 {
                log_w += x * d;
            }
        }
        let w = (log_w - offset).exp();
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::Numerical {
                layer: 0,
                quantity: "shift weight",
            });
        }
        weights.push(w);
    }
    Ok(ShiftWeights {
        weights,
        unnormalized_columns,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftSpec {
    pub sigma_shift: f64,
    pub n_trials: usize,
    pub seed: u64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            sigma_shift: 0.05,
            n_trials: 1000,
            seed: 0,
        }
    }
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_shift > 0.0 && self.sigma_shift.is_finite()) {
            return Err(Error::Config("sigma_shift must be positive".into()));
        }
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        Ok(())
    }

    /// The shift vector for one trial: normal draws on `eligible`, zero
    /// elsewhere.
    pub fn draw_delta(&self, trial: usize, n_features: usize, eligible: &[usize]) -> Vec<f64> {
        let mut rng = seeds::rng(self.seed, Stream::Shift, trial as u64);
        let dist = Normal::new(0.0, self.sigma_shift).expect("validated sigma");
        let mut delta = vec![0.0; n_features];
        for &j in eligible {
            delta[j] = dist.sample(&mut rng);
        }
        delta
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftTrial {
    pub trial_id: usize,
    pub delta: Vec<f64>,
    pub l1_norm: f64,
    /// One weighted accuracy per model, in model order.
    pub accuracies: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftTrialTable {
    pub model_names: Vec<String>,
    pub trials: Vec<ShiftTrial>,
    /// Shifted columns whose spread looked un-normalized.
    pub unnormalized_columns: Vec<usize>,
}

impl ShiftTrialTable {
    pub fn l1_norms(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.l1_norm).collect()
    }

    pub fn accuracies(&self, model: usize) -> Vec<f64> {
        self.trials.iter().map(|t| t.accuracies[model]).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["trial_id".to_string(), "l1_norm".to_string()];
        header.extend(self.model_names.iter().cloned());
        w.write_record(&header).map_err(csv_io)?;
        for t in &self.trials {
            let mut rec = vec![t.trial_id.to_string(), format!("{:e}", t.l1_norm)];
            rec.extend(t.accuracies.iter().map(|a| format!("{a:e}")));
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Scores every model on shared seeded shift trials.
pub fn run_shift_trials(
    models: &[(&str, &dyn Classifier)],
    test: &Dataset,
    spec: &ShiftSpec,
) -> Result<ShiftTrialTable> {
    spec.validate()?;
    let eligible = test.schema.eligible_columns();
    if eligible.is_empty() {
        return Err(Error::Validation("no shift-eligible columns".into()));
    }
    let deltas: Vec<Vec<f64>> = (0..spec.n_trials)
        .map(|t| spec.draw_delta(t, test.n_features(), &eligible))
        .collect();
    run_shift_trials_with(models, test, &deltas)
}

/// Same as [`run_shift_trials`] with caller-supplied shift vectors.
pub fn run_shift_trials_with(
    models: &[(&str, &dyn Classifier)],
    test: &Dataset,
    deltas: &[Vec<f64>],
) -> Result<ShiftTrialTable> {
    if models.is_empty() {
        return Err(Error::Validation("no models to evaluate".into()));
    }
    // Predictions do not depend on the shift, only the weights do.
    let correct: Vec<Vec<bool>> = models
        .iter()
        .map(|(_, m)| correctness(*m, test))
        .collect::<Result<_>>()?;
    let one = |trial_id: usize| -> Result<(ShiftTrial, Vec<usize>)> {
        let delta = &deltas[trial_id];
        let sw = shift_weights(&test.features, delta)?;
        let accuracies = correct
            .iter()
            .map(|c| weighted_accuracy(c, &sw.weights))
            .collect::<Result<Vec<_>>>()?;
        let l1_norm = delta.iter().map(|d| d.abs()).sum();
        Ok((
            ShiftTrial {
                trial_id,
                delta: delta.clone(),
                l1_norm,
                accuracies,
            },
            sw.unnormalized_columns,
        ))
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<_>> = {
        use rayon::prelude::*;
        (0..deltas.len()).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<_>> = (0..deltas.len()).map(one).collect();

    let mut trials = Vec::with_capacity(results.len());
    let mut unnormalized_columns = Vec::new();
    for r in results {
        let (trial, flagged) = r?;
        for j in flagged {
            if !unnormalized_columns.contains(&j) {
                unnormalized_columns.push(j);
            }
        }
        trials.push(trial);
    }
    unnormalized_columns.sort_unstable();
    Ok(ShiftTrialTable {
        model_names: models.iter().map(|(n, _)| n.to_string()).collect(),
        trials,
        unnormalized_columns,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOrder {
    #[default]
    RotateThenCrop,
    CropThenRotate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub max_crop_px: usize,
    pub max_rot_deg: f64,
    pub pad_fill: f64,
    pub seed: u64,
    pub order: AugmentOrder,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_crop_px: 0,
            max_rot_deg: 0.0,
            pad_fill: -1.0,
            seed: 0,
            order: AugmentOrder::RotateThenCrop,
        }
    }
}

impl AugmentConfig {
    pub fn tier(max_crop_px: usize, max_rot_deg: f64, seed: u64) -> Self {
        Self {
            max_crop_px,
            max_rot_deg,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_rot_deg >= 0.0 && self.max_rot_deg.is_finite()) {
            return Err(Error::Config("max_rot_deg must be a non-negative number".into()));
        }
        if !self.pad_fill.is_finite() {
            return Err(Error::Config("pad_fill must be finite".into()));
        }
        Ok(())
    }
}

fn check_square(image: &Matrix) -> Result<usize> {
    if image.rows() != image.cols() {
        return Err(Error::shape("square image", image.rows(), image.cols()));
    }
    Ok(image.rows())
}

/// Rotation about the image center by `degrees` (counter-clockwise on
/// screen), bilinear sampling, `fill` outside the source.
pub fn rotate(image: &Matrix, degrees: f64, fill: f64) -> Result<Matrix> {
    let n = check_square(image)?;
    if degrees == 0.0 {
        return Ok(image.clone());
    }
    let c = (n as f64 - 1.0) / 2.0;
    let (s, co) = degrees.to_radians().sin_cos();
    let at = |r: isize, col: isize| -> f64 {
        if r < 0 || col < 0 || r >= n as isize || col >= n as isize {
            fill
        } else {
            image[(r as usize, col as usize)]
        }
    };
    let mut out = Matrix::zeros(n, n);
    for r in 0..n {
        for col in 0..n {
            // Inverse map: rotate the output point back by −θ. Rows grow
            // downward, so use y = c − r.
            let x = col as f64 - c;
            let y = c - r as f64;
            let sx = co * x + s * y;
            let sy = -s * x + co * y;
            let src_c = sx + c;
            let src_r = c - sy;
            let r0 = src_r.floor();
            let c0 = src_c.floor();
            let (fr, fc) = (src_r - r0, src_c - c0);
            let (r0, c0) = (r0 as isize, c0 as isize);
            out[(r, col)] = (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c0 + 1))
                + fr * ((1.0 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1));
        }
    }
    Ok(out)
}

/// Integer translation: content moves `dx` columns right and `dy` rows down.
pub fn translate(image: &Matrix, dx: isize, dy: isize, fill: f64) -> Result<Matrix> {
    let n = check_square(image)? as isize;
    let mut out = Matrix::zeros(n as usize, n as usize);
    for r in 0..n {
        for c in 0..n {
            let (sr, sc) = (r - dy, c - dx);
            out[(r as usize, c as usize)] = if sr < 0 || sc < 0 || sr >= n || sc >= n {
                fill
            } else {
                image[(sr as usize, sc as usize)]
            };
        }
    }
    Ok(out)
}

/// One random draw of rotation angle and translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub degrees: f64,
    pub dx: isize,
    pub dy: isize,
}

impl AugmentDraw {
    pub fn sample<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let degrees = if cfg.max_rot_deg > 0.0 {
            rng.random_range(-cfg.max_rot_deg..=cfg.max_rot_deg)
        } else {
            0.0
        };
        let k = cfg.max_crop_px as i64;
        let (dx, dy) = if k > 0 {
            (rng.random_range(-k..=k) as isize, rng.random_range(-k..=k) as isize)
        } else {
            (0, 0)
        };
        Self { degrees, dx, dy }
    }
}

/// Applies a specific draw in the configured order.
pub fn apply_draw(image: &Matrix, draw: &AugmentDraw, cfg: &AugmentConfig) -> Result<Matrix> {
    match cfg.order {
        AugmentOrder::RotateThenCrop => {
            let rotated = rotate(image, draw.degrees, cfg.pad_fill)?;
            translate(&rotated, draw.dx, draw.dy, cfg.pad_fill)
        }
        AugmentOrder::CropThenRotate => {
            let moved = translate(image, draw.dx, draw.dy, cfg.pad_fill)?;
            rotate(&moved, draw.degrees, cfg.pad_fill)
        }
    }
}

/// Random rotation within `±max_rot_deg` and translation within
/// `±max_crop_px`.
pub fn augment<R: Rng>(image: &Matrix, cfg: &AugmentConfig, rng: &mut R) -> Result<Matrix> {
    cfg.validate()?;
    check_square(image)?;
    let draw = AugmentDraw::sample(cfg, rng);
    apply_draw(image, &draw, cfg)
}

/// Every image augmented once (seeded per image index).
pub fn augment_dataset(test: &Dataset, cfg: &AugmentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let geom = test
        .geometry
        .ok_or_else(|| Error::Validation("dataset has no image geometry".into()))?;
    let mut features = test.features.clone();
    for i in 0..test.len() {
        let image = Matrix::from_vec(geom.height, geom.width, test.features.row(i).to_vec())?;
        let mut rng = seeds::rng(cfg.seed, Stream::Augment, i as u64);
        let out = augment(&image, cfg, &mut rng)?;
        features.row_mut(i).copy_from_slice(out.as_slice());
    }
    Ok(test.with_features(features))
}

/// Accuracy on one augmented copy of the test set.
pub fn run_augmented_eval(model: &dyn Classifier, test: &Dataset, cfg: &AugmentConfig) -> Result<f64> {
    let augmented = augment_dataset(test, cfg)?;
    let labels = augmented
        .class_labels()
        .ok_or_else(|| Error::Validation("evaluation needs class labels".into()))?;
    accuracy(&model.classify(&augmented.features)?, labels)
}

/// Plain test accuracy.
pub fn evaluate(model: &dyn Classifier, test: &Dataset) -> Result<f64> {
    let labels = test
        .class_labels()
        .ok_or_else(|| Error::Validation("evaluation needs class labels".into()))?;
    accuracy(&model.classify(&test.features)?, labels)
}

/// Ordinary least-squares fit of `y` on `x` with a normal-approximation
/// two-sided p-value for the slope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub std_err: f64,
    pub p_value: f64,
    pub r_squared: f64,
}

pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.len() != y.len() {
        return Err(Error::shape("ols_slope", x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Validation("slope statistics need at least 3 points".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateRegression);
    }
    if y.iter().all(|&v| v == y[0]) {
        return Ok(SlopeFit {
            slope: 0.0,
            intercept: y[0],
            std_err: 0.0,
            p_value: 1.0,
            r_squared: 0.0,
        });
    }
    let my = y.iter().sum::<f64>() / nf;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - intercept - slope * a;
            e * e
        })
        .sum();
    let std_err = (ssr / (nf - 2.0) / sxx).sqrt();
    let p_value = if std_err > 0.0 {
        erfc((slope / std_err).abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
    } else if slope == 0.0 {
        1.0
    } else {
        0.0
    };
    let r_squared = if syy > 0.0 { (1.0 - ssr / syy).clamp(0.0, 1.0) } else { 0.0 };
    Ok(SlopeFit {
        slope,
        intercept,
        std_err,
        p_value,
        r_squared,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairwiseSlope {
    pub first: String,
    pub second: String,
    /// Fit of `accuracy(first) − accuracy(second)` on the L1 shift norm.
    pub fit: SlopeFit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeReport {
    pub n_trials: usize,
    pub models: Vec<(String, SlopeFit)>,
    pub pairwise: Vec<PairwiseSlope>,
}

pub const P_VALUE_METHOD: &str = "normal_approximation";

impl SlopeReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["comparison", "slope", "std_err", "p_value", "r_squared", "p_method"])
            .map_err(csv_io)?;
        let rows = self
            .models
            .iter()
            .map(|(n, f)| (n.clone(), f))
            .chain(self.pairwise.iter().map(|p| (format!("{} - {}", p.first, p.second), &p.fit)));
        for (name, f) in rows {
            w.write_record([
                name,
                format!("{:e}", f.slope),
                format!("{:e}", f.std_err),
                format!("{:e}", f.p_value),
                format!("{:e}", f.r_squared),
                P_VALUE_METHOD.to_string(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-model slopes of accuracy on shift magnitude, and paired-difference
/// slopes for every model pair.
pub fn slope_stats(table: &ShiftTrialTable) -> Result<SlopeReport> {
    let x = table.l1_norms();
    let m = table.model_names.len();
    let cols: Vec<Vec<f64>> = (0..m).map(|k| table.accuracies(k)).collect();
    let mut models = Vec::with_capacity(m);
    for (name, y) in table.model_names.iter().zip(&cols) {
        models.push((name.clone(), ols_slope(&x, y)?));
    }
    let mut pairwise = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            let diff: Vec<f64> = cols[a].iter().zip(&cols[b]).map(|(p, q)| p - q).collect();
            pairwise.push(PairwiseSlope {
                first: table.model_names[a].clone(),
                second: table.model_names[b].clone(),
                fit: ols_slope(&x, &diff)?,
            });
        }
    }
    Ok(SlopeReport {
        n_trials: x.len(),
        models,
        pairwise,
    })
}

/// A one-model trial table with accuracy `base + slope·L1 + noise`, where
/// shifts are drawn as in [`ShiftSpec`] over `n_shifted` columns.
pub fn simulated_table(slope: f64, noise_sd: f64, n_trials: usize, n_shifted: usize, seed: u64) -> Result<ShiftTrialTable> {
    let spec = ShiftSpec {
        n_trials,
        seed,
        ..Default::default()
    };
    spec.validate()?;
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let eligible: Vec<usize> = (0..n_shifted).collect();
    let mut rng = seeds::rng(seed, Stream::Synth, 2);
    let trials = (0..n_trials)
        .map(|trial_id| {
            let delta = spec.draw_delta(trial_id, n_shifted, &eligible);
            let l1_norm: f64 = delta.iter().map(|d| d.abs()).sum();
            let acc = 0.9 + slope * l1_norm + noise.sample(&mut rng);
            ShiftTrial {
                trial_id,
                delta,
                l1_norm,
                accuracies: vec![acc],
            }
        })
        .collect();
    Ok(ShiftTrialTable {
        model_names: vec!["simulated".into()],
        trials,
        unnormalized_columns: vec![],
    })
}
