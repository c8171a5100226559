//! Disparity evaluation: end-point error, bad-x percentages, and the
//! common benchmark masking convention that drops far-field ground truth.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bad-pixel thresholds reported by [`MetricReport`].
pub const BAD_THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 3.0];

/// Mean absolute disparity error over the masked pixels.
pub fn epe(pred: &Tensor<f32>, gt: &Tensor<f32>, mask: &[bool]) -> Result<f64> {
    let (sum, n) = fold_errors(pred, gt, mask, |acc, e| acc + e)?;
    Ok(sum / n as f64)
}

/// Percentage of masked pixels whose error exceeds `x` (strictly).
pub fn bad_x(pred: &Tensor<f32>, gt: &Tensor<f32>, mask: &[bool], x: f64) -> Result<f64> {
    assert!(x > 0.0, "threshold must be positive");
    let (hits, n) = fold_errors(pred, gt, mask, |acc, e| if e > x { acc + 1.0 } else { acc })?;
    Ok(100.0 * hits / n as f64)
}

fn fold_errors(
    pred: &Tensor<f32>,
    gt: &Tensor<f32>,
    mask: &[bool],
    f: impl Fn(f64, f64) -> f64,
) -> Result<(f64, usize)> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs ground truth {:?}", pred.shape(), gt.shape())));
    }
    if mask.len() != gt.numel() {
        return Err(Error::Shape("mask length does not match the maps".into()));
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for i in 0..mask.len() {
        if mask[i] {
            acc = f(acc, (pred.data()[i] as f64 - gt.data()[i] as f64).abs());
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Config("no pixels to evaluate under the mask".into()));
    }
    Ok((acc, n))
}

/// The common benchmark protocol: evaluate valid pixels whose ground truth
/// does not exceed 192 px.
pub fn sceneflow_mask(gt: &Tensor<f32>, valid: &[bool]) -> Vec<bool> {
    assert_eq!(valid.len(), gt.numel());
    valid.iter().zip(gt.data()).map(|(&v, &d)| v && d <= 192.0).collect()
}

/// EPE plus bad-pixel rates at the standard thresholds.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub epe: f64,
    /// Percentages aligned with [`BAD_THRESHOLDS`].
    pub bad: [f64; 4],
    pub valid_count: usize,
}

impl MetricReport {
    pub fn compute(pred: &Tensor<f32>, gt: &Tensor<f32>, mask: &[bool]) -> Result<Self> {
        let epe = epe(pred, gt, mask)?;
        let mut bad = [0.0; 4];
        for (slot, &x) in bad.iter_mut().zip(&BAD_THRESHOLDS) {
            *slot = bad_x(pred, gt, mask, x)?;
        }
        Ok(Self { epe, bad, valid_count: mask.iter().filter(|&&m| m).count() })
    }

    /// Plain-text table, header plus one data row.
    pub fn table(&self) -> String {
        let mut head = format!("{:>10} ", "epe");
        let mut row = format!("{:>10.4} ", self.epe);
        for (&x, &b) in BAD_THRESHOLDS.iter().zip(&self.bad) {
            head.push_str(&format!("{:>10} ", format!("bad-{x}")));
            row.push_str(&format!("{b:>10.3} "));
        }
        head.push_str(&format!("{:>10}", "pixels"));
        row.push_str(&format!("{:>10}", self.valid_count));
        format!("{head}\n{row}")
    }

    /// Machine-readable `name=value` lines.
    pub fn lines(&self) -> String {
        let mut s = format!("epe={:.6}\n", self.epe);
        for (&x, &b) in BAD_THRESHOLDS.iter().zip(&self.bad) {
            s.push_str(&format!("bad_{x}={b:.6}\n"));
        }
        s.push_str(&format!("valid_count={}\n", self.valid_count));
        s
    }
}
