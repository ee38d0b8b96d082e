//! Center location error, overlap, and the precision/success curves.

use mfst_core::BBox;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// CLE thresholds `0..=50` pixels.
pub const PRECISION_POINTS: usize = 51;
/// IoU thresholds `k / 20` for `k = 0..=20`.
pub const SUCCESS_POINTS: usize = 21;
pub const RANKING_THRESHOLD: usize = 20;

/// `(center distance in pixels, intersection over union)`.
pub fn frame_metrics(pred: &BBox, gt: &BBox) -> (f64, f64) {
    let cle = (pred.center_x - gt.center_x).hypot(pred.center_y - gt.center_y);
    let [px, py, pw, ph] = pred.to_top_left();
    let [gx, gy, gw, gh] = gt.to_top_left();
    let iw = ((px + pw).min(gx + gw) - px.max(gx)).max(0.0);
    let ih = ((py + ph).min(gy + gh) - py.max(gy)).max(0.0);
    let inter = iw * ih;
    let union = pw * ph + gw * gh - inter;
    let iou = if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (cle, iou)
}

/// IoU threshold of success-curve point `k`.
pub fn success_threshold(k: usize) -> f64 {
    k as f64 / (SUCCESS_POINTS - 1) as f64
}

/// Fraction of frames with CLE `<= t` for `t = 0..=50`, and the value at 20.
pub fn precision_curve(cles: &[f64]) -> Result<(Vec<f64>, f64)> {
    if cles.is_empty() {
        return Err(HarnessError::Argument(
            "precision curve of an empty list".into(),
        ));
    }
    let n = cles.len() as f64;
    let curve: Vec<f64> = (0..PRECISION_POINTS)
        .map(|t| cles.iter().filter(|&&c| c <= t as f64).count() as f64 / n)
        .collect();
    let at_20 = curve[RANKING_THRESHOLD];
    Ok((curve, at_20))
}

/// Fraction of frames with IoU `>= k/20` for `k = 0..=20`, and its mean.
pub fn success_curve(ious: &[f64]) -> Result<(Vec<f64>, f64)> {
    if ious.is_empty() {
        return Err(HarnessError::Argument(
            "success curve of an empty list".into(),
        ));
    }
    let n = ious.len() as f64;
    let curve: Vec<f64> = (0..SUCCESS_POINTS)
        .map(|k| ious.iter().filter(|&&v| v >= success_threshold(k)).count() as f64 / n)
        .collect();
    let auc = curve.iter().sum::<f64>() / SUCCESS_POINTS as f64;
    Ok((curve, auc))
}

/// Per-sequence scores. `fps` is wall-clock and is kept out of the
/// deterministic results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_frame_cle: Vec<f64>,
    pub per_frame_iou: Vec<f64>,
    pub precision_curve: Vec<f64>,
    pub success_curve: Vec<f64>,
    pub precision_at_20: f64,
    pub auc: f64,
    #[serde(skip)]
    pub fps: f64,
}

impl EvalResult {
    pub fn from_boxes(predicted: &[BBox], ground_truth: &[BBox], fps: f64) -> Result<Self> {
        if predicted.len() != ground_truth.len() {
            return Err(HarnessError::Validation(format!(
                "{} predictions for {} ground-truth boxes",
                predicted.len(),
                ground_truth.len()
            )));
        }
        let (cles, ious): (Vec<f64>, Vec<f64>) = predicted
            .iter()
            .zip(ground_truth)
            .map(|(p, g)| frame_metrics(p, g))
            .unzip();
        let (precision_curve, precision_at_20) = precision_curve(&cles)?;
        let (success_curve, auc) = success_curve(&ious)?;
        Ok(Self {
            per_frame_cle: cles,
            per_frame_iou: ious,
            precision_curve,
            success_curve,
            precision_at_20,
            auc,
            fps,
        })
    }

    pub fn frames(&self) -> usize {
        self.per_frame_cle.len()
    }

    pub fn mean_iou(&self) -> f64 {
        self.per_frame_iou.iter().sum::<f64>() / self.frames().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tl(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::from_top_left(x, y, w, h).unwrap()
    }

    #[test]
    fn identical_and_disjoint_boxes() {
        let a = tl(3.0, 4.0, 10.0, 6.0);
        assert_eq!(frame_metrics(&a, &a), (0.0, 1.0));
        let (_, iou) = frame_metrics(&a, &tl(50.0, 50.0, 2.0, 2.0));
        assert_eq!(iou, 0.0);
    }

    #[test]
    fn half_shifted_square() {
        let (cle, iou) = frame_metrics(&tl(0.0, 0.0, 2.0, 2.0), &tl(1.0, 0.0, 2.0, 2.0));
        assert_eq!(cle, 1.0);
        assert!((iou - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn curve_examples() {
        let (curve, p20) = precision_curve(&[0.0; 3]).unwrap();
        assert!(curve.iter().all(|&v| v == 1.0) && p20 == 1.0);
        let (curve, _) = precision_curve(&[100.0]).unwrap();
        assert!(curve.iter().all(|&v| v == 0.0));
        let (_, p20) = precision_curve(&[5.0, 15.0, 25.0, 45.0]).unwrap();
        assert_eq!(p20, 0.5);

        let (curve, auc) = success_curve(&[1.0, 1.0]).unwrap();
        assert!(curve.iter().all(|&v| v == 1.0) && auc == 1.0);
        let (curve, auc) = success_curve(&[0.0]).unwrap();
        assert_eq!(curve[0], 1.0);
        assert!(curve[1..].iter().all(|&v| v == 0.0));
        assert!((auc - 1.0 / 21.0).abs() < 1e-15);
        let (curve, _) = success_curve(&[0.3, 0.6, 0.9]).unwrap();
        assert_eq!(curve[10], 2.0 / 3.0);

        assert!(precision_curve(&[]).is_err());
        assert!(success_curve(&[]).is_err());
    }
}
