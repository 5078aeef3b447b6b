//! Per-axis affine calibration of a hand tracker against a reference system,
//! and the MAD / MAPE accuracy metrics.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// References closer to zero than this are excluded from MAPE.
pub const DEFAULT_MAPE_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("tracker and reference lengths differ ({tracker} vs {reference})")]
    LengthMismatch { tracker: usize, reference: usize },
    #[error("tracker column has zero variance")]
    Degenerate,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("every reference value is below the MAPE threshold")]
    AllExcluded,
    #[error("calibration file: {0}")]
    Format(String),
    #[error("calibration I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("paired-sample CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// `reference ~= scale * tracker + offset` for one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRegression {
    pub scale: f64,
    pub offset: f64,
    pub r_squared: f64,
}

impl AxisRegression {
    pub const IDENTITY: Self = Self { scale: 1.0, offset: 0.0, r_squared: 1.0 };

    pub fn apply(&self, v: f64) -> f64 {
        self.scale * v + self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub x: AxisRegression,
    pub y: AxisRegression,
    pub z: AxisRegression,
}

impl Default for CalibrationModel {
    fn default() -> Self {
        Self::identity()
    }
}

impl CalibrationModel {
    pub fn identity() -> Self {
        Self { x: AxisRegression::IDENTITY, y: AxisRegression::IDENTITY, z: AxisRegression::IDENTITY }
    }

    pub fn axes(&self) -> [&AxisRegression; 3] {
        [&self.x, &self.y, &self.z]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CalibrationError> {
        let model: Self = serde_json::from_str(text).map_err(|e| CalibrationError::Format(e.to_string()))?;
        for axis in model.axes() {
            if !(axis.scale.is_finite() && axis.scale != 0.0 && axis.offset.is_finite()) {
                return Err(CalibrationError::Format("scale must be finite and nonzero".into()));
            }
        }
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CalibrationError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CalibrationError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// Per-axis affine map of a tracker-frame point.
pub fn apply(model: &CalibrationModel, p: [f64; 3]) -> [f64; 3] {
    [model.x.apply(p[0]), model.y.apply(p[1]), model.z.apply(p[2])]
}

/// Ordinary least squares fit of `reference` on `tracker`.
pub fn fit_axis(tracker: &[f64], reference: &[f64]) -> Result<AxisRegression, CalibrationError> {
    if tracker.len() != reference.len() {
        return Err(CalibrationError::LengthMismatch { tracker: tracker.len(), reference: reference.len() });
    }
    if tracker.len() < 2 {
        return Err(CalibrationError::TooFewSamples { needed: 2, got: tracker.len() });
    }
    if let Some(i) = tracker.iter().chain(reference).position(|v| !v.is_finite()) {
        return Err(CalibrationError::NonFinite(i % tracker.len()));
    }
    let n = tracker.len() as f64;
    let mean_t = tracker.iter().sum::<f64>() / n;
    let mean_r = reference.iter().sum::<f64>() / n;
    let (mut stt, mut str_, mut srr) = (0.0, 0.0, 0.0);
    for (t, r) in tracker.iter().zip(reference) {
        let dt = t - mean_t;
        let dr = r - mean_r;
        stt += dt * dt;
        str_ += dt * dr;
        srr += dr * dr;
    }
    // Relative threshold: a constant column leaves only rounding noise.
    if stt <= f64::EPSILON * f64::EPSILON * n * (mean_t * mean_t).max(f64::MIN_POSITIVE) || stt == 0.0 {
        return Err(CalibrationError::Degenerate);
    }
    let scale = str_ / stt;
    let offset = mean_r - scale * mean_t;
    let r_squared = if srr > 0.0 { ((str_ * str_) / (stt * srr)).clamp(0.0, 1.0) } else { 1.0 };
    Ok(AxisRegression { scale, offset, r_squared })
}

/// Samples recorded simultaneously by the tracker and the reference system.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairedSamples {
    pub tracker: Vec<[f64; 3]>,
    pub reference: Vec<[f64; 3]>,
}

impl PairedSamples {
    pub fn len(&self) -> usize {
        self.tracker.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracker.is_empty()
    }

    pub fn axis(&self, axis: usize) -> (Vec<f64>, Vec<f64>) {
        (
            self.tracker.iter().map(|p| p[axis]).collect(),
            self.reference.iter().map(|p| p[axis]).collect(),
        )
    }

    /// Reads `tx,ty,tz,rx,ry,rz` rows (metres) with a header line.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, CalibrationError> {
        let mut out = Self::default();
        let mut rdr = csv::Reader::from_reader(reader);
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let v: Vec<f64> = row
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CalibrationError::Format(format!("row {i}: {e}")))?;
            if v.len() != 6 {
                return Err(CalibrationError::Format(format!("row {i}: expected 6 columns, got {}", v.len())));
            }
            out.tracker.push([v[0], v[1], v[2]]);
            out.reference.push([v[3], v[4], v[5]]);
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CalibrationError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Fits each axis independently.
pub fn fit_model(samples: &PairedSamples) -> Result<CalibrationModel, CalibrationError> {
    if samples.tracker.len() != samples.reference.len() {
        return Err(CalibrationError::LengthMismatch {
            tracker: samples.tracker.len(),
            reference: samples.reference.len(),
        });
    }
    let fit = |axis| {
        let (t, r) = samples.axis(axis);
        fit_axis(&t, &r)
    };
    Ok(CalibrationModel { x: fit(0)?, y: fit(1)?, z: fit(2)? })
}

/// Mean absolute deviation of a set of errors.
pub fn mad(errors: &[f64]) -> Result<f64, CalibrationError> {
    if errors.is_empty() {
        return Err(CalibrationError::TooFewSamples { needed: 1, got: 0 });
    }
    Ok(errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapeReport {
    /// Percent.
    pub value: f64,
    pub used: usize,
    pub excluded: usize,
}

pub fn mape(predicted: &[f64], reference: &[f64]) -> Result<MapeReport, CalibrationError> {
    mape_with_epsilon(predicted, reference, DEFAULT_MAPE_EPSILON)
}

/// Mean absolute percentage error; samples with `|reference| <= epsilon` are
/// skipped and counted.
pub fn mape_with_epsilon(predicted: &[f64], reference: &[f64], epsilon: f64) -> Result<MapeReport, CalibrationError> {
    if predicted.len() != reference.len() {
        return Err(CalibrationError::LengthMismatch { tracker: predicted.len(), reference: reference.len() });
    }
    if predicted.is_empty() {
        return Err(CalibrationError::TooFewSamples { needed: 1, got: 0 });
    }
    let mut sum = 0.0;
    let mut used = 0;
    for (p, r) in predicted.iter().zip(reference) {
        if r.abs() > epsilon {
            sum += ((p - r) / r).abs();
            used += 1;
        }
    }
    if used == 0 {
        return Err(CalibrationError::AllExcluded);
    }
    Ok(MapeReport { value: 100.0 * sum / used as f64, used, excluded: predicted.len() - used })
}
