//! Training losses: root-relative L1 in 3D and the scale/translation
//! invariant L1 in 2D with its differentiable least-squares alignment.
//!
//! Reduction convention: every L1 term is the mean over masked joints and
//! coordinates, so the 2D weight keeps its meaning independent of the joint
//! count.

use serde::{Deserialize, Serialize};

use crate::error::{MetroError, Result};
use crate::geometry::{Pose2D, Pose3D};
use crate::heatmaps::root_relative;

/// Least-squares scale/translation alignment of 2D point sets.
///
/// `alpha` minimizes the summed squared residual and is not sign-constrained;
/// a negative value indicates a degenerate prediction and is left to the
/// caller to flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentFit {
    pub alpha: f64,
    pub t: [f64; 2],
    /// RMS residual in px at the optimum.
    pub residual: f64,
}

impl AlignmentFit {
    pub fn is_negative_scale(&self) -> bool {
        self.alpha < 0.0
    }
}

/// Weight of the 2D loss term in the combined loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_2d: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_2d: 0.1 }
    }
}

fn shared_mask(a: &[bool], b: &[bool]) -> Result<Vec<bool>> {
    if a.len() != b.len() {
        return Err(MetroError::contract("pose lengths differ"));
    }
    if a != b {
        return Err(MetroError::contract("poses must share the same mask"));
    }
    Ok(a.to_vec())
}

/// Mean absolute root-relative coordinate error in mm.
pub fn loss_3d_l1(pred: &Pose3D, gt: &Pose3D, root: usize) -> Result<f64> {
    Ok(loss_3d_l1_grad(pred, gt, root)?.0)
}

/// [`loss_3d_l1`] together with its gradient w.r.t. the predicted joints.
pub fn loss_3d_l1_grad(pred: &Pose3D, gt: &Pose3D, root: usize) -> Result<(f64, Vec<[f64; 3]>)> {
    let mask = shared_mask(&pred.mask, &gt.mask)?;
    let m = mask.iter().filter(|&&b| b).count();
    if m == 0 {
        return Err(MetroError::contract("no masked joints"));
    }
    let pr = root_relative(pred, root)?;
    let gr = root_relative(gt, root)?;
    let norm = 1.0 / (3.0 * m as f64);
    let mut loss = 0.0;
    let mut grad = vec![[0.0f64; 3]; pred.len()];
    for j in 0..pred.len() {
        if !mask[j] || j == root {
            continue;
        }
        for k in 0..3 {
            let d = pr.joints[j][k] - gr.joints[j][k];
            loss += d.abs();
            let s = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad[j][k] += s * norm;
            grad[root][k] -= s * norm;
        }
    }
    Ok((loss * norm, grad))
}

/// Closed-form least-squares fit of `alpha * pred + t` to `gt` over the
/// shared mask.
pub fn fit_scale_translation(pred: &Pose2D, gt: &Pose2D) -> Result<AlignmentFit> {
    let mask = shared_mask(&pred.mask, &gt.mask)?;
    let m = mask.iter().filter(|&&b| b).count();
    if m < 2 {
        return Err(MetroError::degenerate("need at least 2 masked joints"));
    }
    let mean = |pts: &Vec<[f64; 2]>| {
        let mut s = [0.0f64; 2];
        for (p, &b) in pts.iter().zip(&mask) {
            if b {
                s[0] += p[0];
                s[1] += p[1];
            }
        }
        [s[0] / m as f64, s[1] / m as f64]
    };
    let pm = mean(&pred.joints);
    let gm = mean(&gt.joints);
    let mut num = 0.0;
    let mut den = 0.0;
    for ((p, g), &b) in pred.joints.iter().zip(&gt.joints).zip(&mask) {
        if b {
            let pc = [p[0] - pm[0], p[1] - pm[1]];
            let gc = [g[0] - gm[0], g[1] - gm[1]];
            num += pc[0] * gc[0] + pc[1] * gc[1];
            den += pc[0] * pc[0] + pc[1] * pc[1];
        }
    }
    if den == 0.0 {
        return Err(MetroError::degenerate(
            "masked prediction points are all identical",
        ));
    }
    let alpha = num / den;
    let t = [gm[0] - alpha * pm[0], gm[1] - alpha * pm[1]];
    let mut ss = 0.0;
    for ((p, g), &b) in pred.joints.iter().zip(&gt.joints).zip(&mask) {
        if b {
            let rx = alpha * p[0] + t[0] - g[0];
            let ry = alpha * p[1] + t[1] - g[1];
            ss += rx * rx + ry * ry;
        }
    }
    Ok(AlignmentFit {
        alpha,
        t,
        residual: (ss / m as f64).sqrt(),
    })
}

fn drop_z(pred: &Pose3D) -> Pose2D {
    Pose2D {
        joints: pred.joints.iter().map(|j| [j[0], j[1]]).collect(),
        mask: pred.mask.clone(),
    }
}

/// Scale/translation-invariant 2D loss: orthographically project the metric
/// prediction (discard Z), align to the 2D ground truth by the least-squares
/// fit, then take the L1 mean.
pub fn loss_2d_aligned(pred: &Pose3D, gt2d: &Pose2D) -> Result<f64> {
    Ok(loss_2d_aligned_grad(pred, gt2d)?.0)
}

/// [`loss_2d_aligned`] with its gradient w.r.t. the predicted 3D joints,
/// including the dependence of the fitted (alpha, t) on the prediction.
pub fn loss_2d_aligned_grad(pred: &Pose3D, gt2d: &Pose2D) -> Result<(f64, Vec<[f64; 3]>)> {
    let mask = shared_mask(&pred.mask, &gt2d.mask)?;
    let m = mask.iter().filter(|&&b| b).count();
    let p2 = drop_z(pred);
    let fit = fit_scale_translation(&p2, gt2d)?;
    let alpha = fit.alpha;

    // Centered coordinates; the residual is alpha * p~ - g~.
    let mut pm = [0.0f64; 2];
    let mut gm = [0.0f64; 2];
    for ((p, g), &b) in p2.joints.iter().zip(&gt2d.joints).zip(&mask) {
        if b {
            pm[0] += p[0];
            pm[1] += p[1];
            gm[0] += g[0];
            gm[1] += g[1];
        }
    }
    for k in 0..2 {
        pm[k] /= m as f64;
        gm[k] /= m as f64;
    }
    let centered: Vec<([f64; 2], [f64; 2])> = p2
        .joints
        .iter()
        .zip(&gt2d.joints)
        .map(|(p, g)| ([p[0] - pm[0], p[1] - pm[1]], [g[0] - gm[0], g[1] - gm[1]]))
        .collect();

    let mut den = 0.0;
    for ((pc, _), &b) in centered.iter().zip(&mask) {
        if b {
            den += pc[0] * pc[0] + pc[1] * pc[1];
        }
    }

    let norm = 1.0 / (2.0 * m as f64);
    let mut loss = 0.0;
    let mut signs = vec![[0.0f64; 2]; pred.len()];
    let mut sign_mean = [0.0f64; 2];
    let mut s_dot_p = 0.0; // sum_i <sign_i, p~_i>
    for (i, ((pc, gc), &b)) in centered.iter().zip(&mask).enumerate() {
        if !b {
            continue;
        }
        for k in 0..2 {
            let r = alpha * pc[k] - gc[k];
            loss += r.abs();
            let s = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            signs[i][k] = s;
            sign_mean[k] += s;
            s_dot_p += s * pc[k];
        }
    }
    for k in 0..2 {
        sign_mean[k] /= m as f64;
    }

    let mut grad = vec![[0.0f64; 3]; pred.len()];
    for (i, ((pc, gc), &b)) in centered.iter().zip(&mask).enumerate() {
        if !b {
            continue;
        }
        // d alpha / d p_i = (g~_i - 2 alpha p~_i) / den.
        for k in 0..2 {
            let dalpha = (gc[k] - 2.0 * alpha * pc[k]) / den;
            grad[i][k] = norm * (s_dot_p * dalpha + alpha * (signs[i][k] - sign_mean[k]));
        }
    }
    Ok((loss * norm, grad))
}

/// Weighted combination of the 3D and 2D terms.
pub fn loss_combined(l3d: f64, l2d: f64, w: &LossWeights) -> f64 {
    l3d + w.lambda_2d * l2d
}
