//! Evaluation metrics: MPJPE, Procrustes-aligned MPJPE, PCK, AUC, and the
//! all-joints/present-joints truncation split.
//!
//! Corpus aggregation uses compensated summation so parallel and serial
//! evaluation orders agree to within 1e-9.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{MetroError, Result};
use crate::geometry::Pose3D;
use crate::heatmaps::root_relative;

/// PCK threshold convention (mm).
pub const PCK_THRESHOLD_MM: f64 = 150.0;
/// AUC threshold grid: 0, 5, ..., 150 mm.
pub const AUC_THRESHOLDS: usize = 31;

/// Aggregated evaluation results over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mpjpe_mm: f64,
    pub p_mpjpe_mm: f64,
    pub pck: f64,
    pub auc: f64,
    pub per_joint_errors_mm: Vec<f64>,
    pub n_examples: usize,
}

/// Compensated (Kahan) accumulator; summation order independent to ~1e-16.
#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

fn shared_mask(pred: &Pose3D, gt: &Pose3D) -> Result<Vec<bool>> {
    if pred.len() != gt.len() {
        return Err(MetroError::contract("pose lengths differ"));
    }
    if pred.mask != gt.mask {
        return Err(MetroError::contract("poses must share the same mask"));
    }
    Ok(pred.mask.clone())
}

/// Per-joint root-relative Euclidean errors (NaN on unmasked joints).
fn root_relative_errors(pred: &Pose3D, gt: &Pose3D, root: usize) -> Result<Vec<f64>> {
    let mask = shared_mask(pred, gt)?;
    if !mask.iter().any(|&b| b) {
        return Err(MetroError::contract("no masked joints"));
    }
    let pr = root_relative(pred, root)?;
    let gr = root_relative(gt, root)?;
    Ok((0..pred.len())
        .map(|j| {
            if mask[j] {
                (0..3)
                    .map(|k| (pr.joints[j][k] - gr.joints[j][k]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            } else {
                f64::NAN
            }
        })
        .collect())
}

/// Mean per-joint position error after root alignment, mm.
pub fn mpjpe(pred: &Pose3D, gt: &Pose3D, root: usize) -> Result<f64> {
    let errs = root_relative_errors(pred, gt, root)?;
    let mut acc = Kahan::default();
    let mut m = 0usize;
    for e in errs {
        if !e.is_nan() {
            acc.add(e);
            m += 1;
        }
    }
    Ok(acc.sum / m as f64)
}

/// Mean joint distance after similarity-Procrustes alignment (rotation +
/// uniform scale + translation, reflection disallowed).
pub fn procrustes_mpjpe(pred: &Pose3D, gt: &Pose3D) -> Result<f64> {
    let mask = shared_mask(pred, gt)?;
    let m = mask.iter().filter(|&&b| b).count();
    if m < 3 {
        return Err(MetroError::degenerate("need at least 3 masked joints"));
    }
    let mean = |pose: &Pose3D| {
        let mut s = Vector3::zeros();
        for (j, &b) in pose.joints.iter().zip(&mask) {
            if b {
                s += Vector3::new(j[0], j[1], j[2]);
            }
        }
        s / m as f64
    };
    let pm = mean(pred);
    let gm = mean(gt);
    let mut cov = Matrix3::zeros();
    let mut var_p = 0.0;
    for ((p, g), &b) in pred.joints.iter().zip(&gt.joints).zip(&mask) {
        if b {
            let pc = Vector3::new(p[0], p[1], p[2]) - pm;
            let gc = Vector3::new(g[0], g[1], g[2]) - gm;
            cov += gc * pc.transpose();
            var_p += pc.norm_squared();
        }
    }
    cov /= m as f64;
    var_p /= m as f64;
    if var_p == 0.0 {
        return Err(MetroError::degenerate("prediction has zero spread"));
    }
    let svd = cov.svd(true, true);
    let u = svd.u.ok_or_else(|| MetroError::degenerate("svd failed"))?;
    let vt = svd.v_t.ok_or_else(|| MetroError::degenerate("svd failed"))?;
    // Second singular value zero means the prediction is collinear and the
    // in-plane rotation is unconstrained.
    if svd.singular_values[1] <= 1e-12 * svd.singular_values[0].max(1.0) {
        return Err(MetroError::degenerate("masked joints are collinear"));
    }
    let det_sign = (u * vt).determinant().signum();
    let s_fix = Vector3::new(1.0, 1.0, det_sign);
    let rot = u * Matrix3::from_diagonal(&s_fix) * vt;
    let scale = svd.singular_values.dot(&s_fix) / var_p;
    let t = gm - scale * (rot * pm);
    let mut acc = Kahan::default();
    for ((p, g), &b) in pred.joints.iter().zip(&gt.joints).zip(&mask) {
        if b {
            let q = scale * (rot * Vector3::new(p[0], p[1], p[2])) + t;
            acc.add((q - Vector3::new(g[0], g[1], g[2])).norm());
        }
    }
    Ok(acc.sum / m as f64)
}

/// Fraction of masked non-root joints within `threshold` mm root-relative
/// error. The root is excluded: after root alignment its error is zero by
/// construction and would only dilute the score.
pub fn pck(pred: &Pose3D, gt: &Pose3D, threshold: f64, root: usize) -> Result<f64> {
    let errs = root_relative_errors(pred, gt, root)?;
    let mut hit = 0usize;
    let mut m = 0usize;
    for (j, e) in errs.into_iter().enumerate() {
        if j != root && !e.is_nan() {
            m += 1;
            if e <= threshold {
                hit += 1;
            }
        }
    }
    if m == 0 {
        return Err(MetroError::contract("no masked non-root joints for pck"));
    }
    Ok(hit as f64 / m as f64)
}

/// Mean PCK over the 31 evenly spaced thresholds 0, 5, ..., 150 mm.
pub fn auc(pred: &Pose3D, gt: &Pose3D, root: usize) -> Result<f64> {
    let mut acc = Kahan::default();
    for i in 0..AUC_THRESHOLDS {
        let threshold = i as f64 * PCK_THRESHOLD_MM / (AUC_THRESHOLDS - 1) as f64;
        acc.add(pck(pred, gt, threshold, root)?);
    }
    Ok(acc.sum / AUC_THRESHOLDS as f64)
}

/// All-joints vs present-joints MPJPE under truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub mpjpe_all_mm: f64,
    /// Absent when no joint is flagged in-image.
    pub mpjpe_present_mm: Option<f64>,
}

/// Evaluate a corpus twice: over all masked joints and over the subset
/// flagged as inside the image.
pub fn truncation_report(
    preds: &[Pose3D],
    gts: &[Pose3D],
    visibility: &[Vec<bool>],
    root: usize,
) -> Result<TruncationReport> {
    if preds.len() != gts.len() || preds.len() != visibility.len() {
        return Err(MetroError::contract("corpus length mismatch"));
    }
    let mut all = Kahan::default();
    let mut present = Kahan::default();
    let mut n_all = 0usize;
    let mut n_present = 0usize;
    for ((p, g), vis) in preds.iter().zip(gts).zip(visibility) {
        if vis.len() != p.len() {
            return Err(MetroError::contract("visibility flags do not align with joints"));
        }
        let errs = root_relative_errors(p, g, root)?;
        for (e, &v) in errs.iter().zip(vis) {
            if !e.is_nan() {
                all.add(*e);
                n_all += 1;
                if v {
                    present.add(*e);
                    n_present += 1;
                }
            }
        }
    }
    if n_all == 0 {
        return Err(MetroError::contract("no masked joints in corpus"));
    }
    Ok(TruncationReport {
        mpjpe_all_mm: all.sum / n_all as f64,
        mpjpe_present_mm: (n_present > 0).then(|| present.sum / n_present as f64),
    })
}

/// Aggregate the full metric suite over a corpus of pose pairs.
pub fn evaluate_corpus(preds: &[Pose3D], gts: &[Pose3D], root: usize) -> Result<EvalReport> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(MetroError::contract("corpus must be non-empty and aligned"));
    }
    let n_joints = preds[0].len();
    let mut mp = Kahan::default();
    let mut pmp = Kahan::default();
    let mut pck_acc = Kahan::default();
    let mut auc_acc = Kahan::default();
    let mut per_joint = vec![Kahan::default(); n_joints];
    let mut per_joint_n = vec![0usize; n_joints];
    for (p, g) in preds.iter().zip(gts) {
        mp.add(mpjpe(p, g, root)?);
        pmp.add(procrustes_mpjpe(p, g)?);
        pck_acc.add(pck(p, g, PCK_THRESHOLD_MM, root)?);
        auc_acc.add(auc(p, g, root)?);
        for (j, e) in root_relative_errors(p, g, root)?.into_iter().enumerate() {
            if !e.is_nan() {
                per_joint[j].add(e);
                per_joint_n[j] += 1;
            }
        }
    }
    let n = preds.len() as f64;
    Ok(EvalReport {
        mpjpe_mm: mp.sum / n,
        p_mpjpe_mm: pmp.sum / n,
        pck: pck_acc.sum / n,
        auc: auc_acc.sum / n,
        per_joint_errors_mm: per_joint
            .iter()
            .zip(&per_joint_n)
            .map(|(k, &c)| if c > 0 { k.sum / c as f64 } else { f64::NAN })
            .collect(),
        n_examples: preds.len(),
    })
}
