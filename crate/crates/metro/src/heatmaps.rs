//! Volumetric heatmaps over a fixed metric volume and their soft-argmax
//! decodings.
//!
//! A heatmap is a per-joint probability grid of shape `nz x ny x nx`. The
//! metric decoding reads out the expected bin anchor under the heatmap
//! weights, with fixed scaling factors tying bin indices to millimeters:
//! bin `p` along X anchors at `p * s/w * W` (raw 0-based indices, not bin
//! centers). The 2.5D decoding reads out crop pixels for X/Y and a
//! root-relative metric depth for Z.

use ndarray::{Array4, ArrayView4};
use serde::{Deserialize, Serialize};

use crate::error::{MetroError, Result};
use crate::geometry::Pose3D;

/// Metric extents and bin counts of the prediction volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeSpec {
    /// Metric extents in mm.
    pub w_mm: f64,
    pub h_mm: f64,
    pub d_mm: f64,
    /// Bin counts per axis.
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Effective stride in px.
    pub stride: usize,
    /// Crop resolution in px.
    pub crop_w: usize,
    pub crop_h: usize,
}

impl VolumeSpec {
    pub fn new(
        w_mm: f64,
        h_mm: f64,
        d_mm: f64,
        nx: usize,
        ny: usize,
        nz: usize,
        stride: usize,
        crop_w: usize,
        crop_h: usize,
    ) -> Result<Self> {
        if !(w_mm > 0.0 && h_mm > 0.0 && d_mm > 0.0) {
            return Err(MetroError::contract("volume extents must be positive"));
        }
        if nx < 2 || ny < 2 || nz < 2 {
            return Err(MetroError::contract("bin counts must be at least 2"));
        }
        if stride == 0 || nx * stride != crop_w || ny * stride != crop_h {
            return Err(MetroError::contract(
                "bin counts must equal crop size divided by stride exactly",
            ));
        }
        Ok(Self {
            w_mm,
            h_mm,
            d_mm,
            nx,
            ny,
            nz,
            stride,
            crop_w,
            crop_h,
        })
    }

    /// 2.2 m extents, 8x8x8 bins over a square crop of the given resolution.
    pub fn default_for_crop(crop: usize) -> Result<Self> {
        Self::new(2200.0, 2200.0, 2200.0, 8, 8, 8, crop / 8, crop, crop)
    }

    fn check_shape(&self, shape: &[usize]) -> Result<()> {
        if shape[1] != self.nz || shape[2] != self.ny || shape[3] != self.nx {
            return Err(MetroError::contract(format!(
                "heatmap shape {:?} does not match volume spec {}x{}x{}",
                shape, self.nz, self.ny, self.nx
            )));
        }
        Ok(())
    }
}

/// Pre-softmax heatmap activations, shape `J x nz x ny x nx`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapLogits(pub Array4<f64>);

/// Softmax-normalized heatmaps; per joint the values sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumetricHeatmap(pub Array4<f64>);

/// Per-joint crop pixel coordinates and root-relative metric depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose25D {
    /// (u px, v px, z_rel mm) per joint.
    pub joints: Vec<[f64; 3]>,
    pub mask: Vec<bool>,
}

/// Per-joint 3D spatial softmax, numerically stabilized by max-subtraction.
pub fn spatial_softmax(logits: &HeatmapLogits) -> VolumetricHeatmap {
    let mut out = logits.0.clone();
    let j = out.shape()[0];
    for jj in 0..j {
        let mut slice = out.index_axis_mut(ndarray::Axis(0), jj);
        let max = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        slice.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = slice.sum();
        slice.mapv_inplace(|v| v / sum);
    }
    VolumetricHeatmap(out)
}

/// Soft-argmax readout in volume-frame metric coordinates.
pub fn decode_metric(hm: &VolumetricHeatmap, spec: &VolumeSpec) -> Result<Pose3D> {
    decode_metric_view(hm.0.view(), spec)
}

fn decode_metric_view(v: ArrayView4<'_, f64>, spec: &VolumeSpec) -> Result<Pose3D> {
    spec.check_shape(v.shape())?;
    let joints_n = v.shape()[0];
    let sx = spec.stride as f64 / spec.crop_w as f64 * spec.w_mm;
    let sy = spec.stride as f64 / spec.crop_h as f64 * spec.h_mm;
    let sz = spec.d_mm / spec.nz as f64;
    let mut joints = Vec::with_capacity(joints_n);
    for j in 0..joints_n {
        let lane = v.index_axis(ndarray::Axis(0), j);
        let (mut bx, mut by, mut bz) = (0.0, 0.0, 0.0);
        if let Some(flat) = lane.as_slice() {
            // Contiguous row-major lane: accumulate x-weighted sums per row
            // and reuse the row totals for the y and z barycenters.
            let mut i = 0;
            for r in 0..spec.nz {
                for q in 0..spec.ny {
                    let row = &flat[i..i + spec.nx];
                    let mut row_sum = 0.0;
                    for (p, &w) in row.iter().enumerate() {
                        bx += w * p as f64;
                        row_sum += w;
                    }
                    by += row_sum * q as f64;
                    bz += row_sum * r as f64;
                    i += spec.nx;
                }
            }
        } else {
            for r in 0..spec.nz {
                for q in 0..spec.ny {
                    for p in 0..spec.nx {
                        let w = lane[[r, q, p]];
                        bx += w * p as f64;
                        by += w * q as f64;
                        bz += w * r as f64;
                    }
                }
            }
        }
        joints.push([bx * sx, by * sy, bz * sz]);
    }
    Pose3D::all_masked(joints)
}

/// Soft-argmax readout as a 2.5D pose: crop pixels and root-relative depth.
///
/// X/Y bins anchor at `p * stride` px; the depth axis spans `[-D/2, D/2]` mm
/// before root-centering.
pub fn decode_25d(hm: &VolumetricHeatmap, spec: &VolumeSpec, root: usize) -> Result<Pose25D> {
    spec.check_shape(hm.0.shape())?;
    let joints_n = hm.0.shape()[0];
    if root >= joints_n {
        return Err(MetroError::contract("root index out of range"));
    }
    let sz = spec.d_mm / spec.nz as f64;
    let mut raw = Vec::with_capacity(joints_n);
    for j in 0..joints_n {
        let (mut bx, mut by, mut bz) = (0.0, 0.0, 0.0);
        for r in 0..spec.nz {
            for q in 0..spec.ny {
                for p in 0..spec.nx {
                    let w = hm.0[[j, r, q, p]];
                    bx += w * p as f64;
                    by += w * q as f64;
                    bz += w * r as f64;
                }
            }
        }
        raw.push([
            bx * spec.stride as f64,
            by * spec.stride as f64,
            bz * sz - spec.d_mm / 2.0,
        ]);
    }
    let z_root = raw[root][2];
    let joints = raw
        .into_iter()
        .map(|[u, v, z]| [u, v, z - z_root])
        .collect();
    Ok(Pose25D {
        joints,
        mask: vec![true; joints_n],
    })
}

/// Shift a pose so the root joint lands exactly at the origin.
pub fn root_relative(pose: &Pose3D, root: usize) -> Result<Pose3D> {
    if root >= pose.len() {
        return Err(MetroError::contract("root index out of range"));
    }
    if !pose.mask[root] {
        return Err(MetroError::contract("root joint is not masked valid"));
    }
    let r = pose.joints[root];
    let joints = pose
        .joints
        .iter()
        .enumerate()
        .map(|(i, j)| {
            if i == root {
                [0.0, 0.0, 0.0]
            } else {
                [j[0] - r[0], j[1] - r[1], j[2] - r[2]]
            }
        })
        .collect();
    Pose3D::new(joints, pose.mask.clone())
}

/// Forward pass of `spatial_softmax -> decode_metric -> root_relative`.
pub fn decode_metric_root_relative(
    logits: &HeatmapLogits,
    spec: &VolumeSpec,
    root: usize,
) -> Result<Pose3D> {
    let hm = spatial_softmax(logits);
    let pose = decode_metric(&hm, spec)?;
    root_relative(&pose, root)
}

/// Exact reverse-mode derivative of [`decode_metric_root_relative`].
///
/// `upstream` is the per-joint cotangent on the root-relative coordinates
/// (shape `J x 3`). The root joint's own output is identically zero, so its
/// upstream entry has no effect; the root's heatmap still receives gradient
/// through the subtraction term.
pub fn decode_metric_vjp(
    logits: &HeatmapLogits,
    spec: &VolumeSpec,
    root: usize,
    upstream: &[[f64; 3]],
) -> Result<Array4<f64>> {
    spec.check_shape(logits.0.shape())?;
    let joints_n = logits.0.shape()[0];
    if upstream.len() != joints_n {
        return Err(MetroError::contract("upstream cotangent length mismatch"));
    }
    if root >= joints_n {
        return Err(MetroError::contract("root index out of range"));
    }
    let sx = spec.stride as f64 / spec.crop_w as f64 * spec.w_mm;
    let sy = spec.stride as f64 / spec.crop_h as f64 * spec.h_mm;
    let sz = spec.d_mm / spec.nz as f64;
    // Cotangent on the pre-subtraction metric coordinates.
    let mut cot = vec![[0.0f64; 3]; joints_n];
    for j in 0..joints_n {
        if j != root {
            cot[j] = upstream[j];
            for k in 0..3 {
                cot[root][k] -= upstream[j][k];
            }
        }
    }
    let hm = spatial_softmax(logits);
    let mut grad = Array4::zeros(logits.0.raw_dim());
    for j in 0..joints_n {
        // a_b = <anchor_b, cot_j>; dl_b = softmax_b * (a_b - E[a]).
        let mut mean_a = 0.0;
        for r in 0..spec.nz {
            for q in 0..spec.ny {
                for p in 0..spec.nx {
                    let a = p as f64 * sx * cot[j][0]
                        + q as f64 * sy * cot[j][1]
                        + r as f64 * sz * cot[j][2];
                    grad[[j, r, q, p]] = a;
                    mean_a += hm.0[[j, r, q, p]] * a;
                }
            }
        }
        for r in 0..spec.nz {
            for q in 0..spec.ny {
                for p in 0..spec.nx {
                    grad[[j, r, q, p]] = hm.0[[j, r, q, p]] * (grad[[j, r, q, p]] - mean_a);
                }
            }
        }
    }
    Ok(grad)
}

/// Forward pass of `spatial_softmax -> decode_25d` on logits.
pub fn decode_25d_from_logits(
    logits: &HeatmapLogits,
    spec: &VolumeSpec,
    root: usize,
) -> Result<Pose25D> {
    decode_25d(&spatial_softmax(logits), spec, root)
}

/// Reverse-mode derivative of [`decode_25d_from_logits`].
pub fn decode_25d_vjp(
    logits: &HeatmapLogits,
    spec: &VolumeSpec,
    root: usize,
    upstream: &[[f64; 3]],
) -> Result<Array4<f64>> {
    spec.check_shape(logits.0.shape())?;
    let joints_n = logits.0.shape()[0];
    if upstream.len() != joints_n {
        return Err(MetroError::contract("upstream cotangent length mismatch"));
    }
    let su = spec.stride as f64;
    let sz = spec.d_mm / spec.nz as f64;
    // Root-centering couples only the depth coordinate.
    let mut cot = vec![[0.0f64; 3]; joints_n];
    for j in 0..joints_n {
        cot[j][0] = upstream[j][0];
        cot[j][1] = upstream[j][1];
        if j != root {
            cot[j][2] = upstream[j][2];
            cot[root][2] -= upstream[j][2];
        }
    }
    let hm = spatial_softmax(logits);
    let mut grad = Array4::zeros(logits.0.raw_dim());
    for j in 0..joints_n {
        let mut mean_a = 0.0;
        for r in 0..spec.nz {
            for q in 0..spec.ny {
                for p in 0..spec.nx {
                    let a = p as f64 * su * cot[j][0]
                        + q as f64 * su * cot[j][1]
                        + r as f64 * sz * cot[j][2];
                    grad[[j, r, q, p]] = a;
                    mean_a += hm.0[[j, r, q, p]] * a;
                }
            }
        }
        for r in 0..spec.nz {
            for q in 0..spec.ny {
                for p in 0..spec.nx {
                    grad[[j, r, q, p]] = hm.0[[j, r, q, p]] * (grad[[j, r, q, p]] - mean_a);
                }
            }
        }
    }
    Ok(grad)
}
