//! Absolute-depth recovery for 2.5D poses.
//!
//! A 2.5D pose (pixels + root-relative depths) leaves the absolute person
//! distance unknown. The baseline recovers it by searching for the root
//! depth at which the back-projected skeleton's bone lengths best match
//! reference lengths in least squares; the residuals are on lengths, so the
//! objective stays in mm. A weak-perspective variant rescales the whole
//! lifted skeleton so its total length matches the reference total.

use serde::{Deserialize, Serialize};

use crate::error::{MetroError, Result};
use crate::geometry::{back_project, CameraIntrinsics, Pose2D, Pose3D};
use crate::heatmaps::{root_relative, Pose25D};

/// Skeleton topology with per-bone reference lengths in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonDef {
    pub edges: Vec<(usize, usize)>,
    pub ref_lengths_mm: Vec<f64>,
}

impl SkeletonDef {
    pub fn new(edges: Vec<(usize, usize)>, ref_lengths_mm: Vec<f64>) -> Result<Self> {
        if edges.len() != ref_lengths_mm.len() {
            return Err(MetroError::contract("edge/length count mismatch"));
        }
        if ref_lengths_mm.iter().any(|l| !(*l > 0.0)) {
            return Err(MetroError::contract("reference lengths must be positive"));
        }
        Ok(Self {
            edges,
            ref_lengths_mm,
        })
    }

    fn check_joints(&self, n: usize) -> Result<()> {
        if self.edges.iter().any(|&(a, b)| a >= n || b >= n) {
            return Err(MetroError::contract("skeleton edge references invalid joint"));
        }
        Ok(())
    }
}

/// Search interval and refinement settings for the depth search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthSearch {
    pub z_min_mm: f64,
    pub z_max_mm: f64,
    /// Coarse grid step in mm.
    pub grid_step_mm: f64,
    /// Final golden-section bracket width in mm.
    pub bracket_mm: f64,
}

impl Default for DepthSearch {
    fn default() -> Self {
        Self {
            z_min_mm: 500.0,
            z_max_mm: 10_000.0,
            grid_step_mm: 10.0,
            bracket_mm: 0.01,
        }
    }
}

/// Result of the depth search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRecovery {
    pub root_depth_mm: f64,
    pub objective: f64,
    /// Set when the minimizer sits at a search-interval boundary.
    pub boundary_warning: bool,
}

/// Sum of squared bone-length residuals of the pose back-projected with root
/// depth `z`. Non-finite when some usable joint would land at non-positive
/// depth.
pub fn bone_length_objective(
    p25d: &Pose25D,
    cam: &CameraIntrinsics,
    skel: &SkeletonDef,
    z: f64,
) -> f64 {
    let mut sum = 0.0;
    for (&(a, b), &ref_len) in skel.edges.iter().zip(&skel.ref_lengths_mm) {
        if !p25d.mask[a] || !p25d.mask[b] {
            continue;
        }
        let za = z + p25d.joints[a][2];
        let zb = z + p25d.joints[b][2];
        if za <= 0.0 || zb <= 0.0 {
            return f64::INFINITY;
        }
        let pa = [
            (p25d.joints[a][0] - cam.cx) * za / cam.fx,
            (p25d.joints[a][1] - cam.cy) * za / cam.fy,
            za,
        ];
        let pb = [
            (p25d.joints[b][0] - cam.cx) * zb / cam.fx,
            (p25d.joints[b][1] - cam.cy) * zb / cam.fy,
            zb,
        ];
        let len = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2))
            .sqrt();
        let r = len - ref_len;
        sum += r * r;
    }
    sum
}

fn usable_bones(p25d: &Pose25D, skel: &SkeletonDef) -> usize {
    skel.edges
        .iter()
        .filter(|&&(a, b)| p25d.mask[a] && p25d.mask[b])
        .count()
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_895;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (b - a) > tol {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    (a + b) / 2.0
}

/// Recover the absolute root depth by coarse grid search plus golden-section
/// refinement of the bone-length objective.
pub fn recover_root_depth(
    p25d: &Pose25D,
    cam: &CameraIntrinsics,
    skel: &SkeletonDef,
    search: &DepthSearch,
) -> Result<DepthRecovery> {
    skel.check_joints(p25d.joints.len())?;
    if skel.edges.is_empty() || usable_bones(p25d, skel) == 0 {
        return Err(MetroError::contract("no usable bones for depth recovery"));
    }
    if p25d
        .joints
        .iter()
        .zip(&p25d.mask)
        .any(|(j, &m)| m && !j[2].is_finite())
    {
        return Err(MetroError::contract("non-finite root-relative depth"));
    }
    let f = |z: f64| bone_length_objective(p25d, cam, skel, z);
    let n = ((search.z_max_mm - search.z_min_mm) / search.grid_step_mm).floor() as usize;
    let mut best_z = search.z_min_mm;
    let mut best_f = f(best_z);
    for i in 1..=n {
        let z = search.z_min_mm + i as f64 * search.grid_step_mm;
        let fz = f(z);
        if fz < best_f {
            best_f = fz;
            best_z = z;
        }
    }
    let lo = (best_z - search.grid_step_mm).max(search.z_min_mm);
    let hi = (best_z + search.grid_step_mm).min(search.z_max_mm);
    let z = golden_section(f, lo, hi, search.bracket_mm);
    let fz = f(z);
    // Strict improvement only: on plateaus keep the first grid minimum.
    let (z, fz) = if fz < best_f { (z, fz) } else { (best_z, best_f) };
    let boundary = (z - search.z_min_mm).abs() <= search.grid_step_mm
        || (search.z_max_mm - z).abs() <= search.grid_step_mm;
    Ok(DepthRecovery {
        root_depth_mm: z,
        objective: fz,
        boundary_warning: boundary,
    })
}

/// Full 2.5D -> 3D reconstruction: recover the root depth, back-project all
/// joints, and return the root-relative metric pose.
pub fn reconstruct_3d(
    p25d: &Pose25D,
    cam: &CameraIntrinsics,
    skel: &SkeletonDef,
    search: &DepthSearch,
    root: usize,
) -> Result<Pose3D> {
    let rec = recover_root_depth(p25d, cam, skel, search)?;
    let pose2d = Pose2D::new(
        p25d.joints.iter().map(|j| [j[0], j[1]]).collect(),
        p25d.mask.clone(),
    )?;
    let depths: Vec<f64> = p25d
        .joints
        .iter()
        .map(|j| rec.root_depth_mm + j[2])
        .collect();
    let pose = back_project(&pose2d, &depths, cam)?;
    root_relative(&pose, root)
}

/// Lift a 2.5D pose at unit scale by treating (u, v, z_rel) as coordinates.
pub fn weak_perspective_lift(p25d: &Pose25D) -> Pose3D {
    Pose3D {
        joints: p25d.joints.clone(),
        mask: p25d.mask.clone(),
    }
}

/// Skeleton-length scale factor under the weak-perspective model: the ratio
/// of the total reference length to the total lifted segment length.
pub fn recover_scale_weak_perspective(p25d: &Pose25D, skel: &SkeletonDef) -> Result<f64> {
    skel.check_joints(p25d.joints.len())?;
    let total_ref: f64 = skel
        .edges
        .iter()
        .zip(&skel.ref_lengths_mm)
        .filter(|(&(a, b), _)| p25d.mask[a] && p25d.mask[b])
        .map(|(_, l)| l)
        .sum();
    if !(total_ref > 0.0) {
        return Err(MetroError::contract("total reference skeleton length is zero"));
    }
    let lifted = weak_perspective_lift(p25d);
    let mut total_pred = 0.0;
    for &(a, b) in &skel.edges {
        if p25d.mask[a] && p25d.mask[b] {
            let d: f64 = (0..3)
                .map(|k| (lifted.joints[a][k] - lifted.joints[b][k]).powi(2))
                .sum::<f64>()
                .sqrt();
            total_pred += d;
        }
    }
    if total_pred == 0.0 {
        return Err(MetroError::degenerate("lifted skeleton has zero length"));
    }
    Ok(total_ref / total_pred)
}

/// Multiply all joint coordinates by a scalar.
pub fn scale_pose(pose: &Pose3D, scale: f64) -> Pose3D {
    Pose3D {
        joints: pose
            .joints
            .iter()
            .map(|j| [j[0] * scale, j[1] * scale, j[2] * scale])
            .collect(),
        mask: pose.mask.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use metro_oracles::grid_argmin_1d;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(1150.0, 1150.0, 128.0, 128.0).unwrap()
    }

    /// Simple 5-joint chain at true depth `z_root`.
    fn synthetic(rng: &mut ChaCha8Rng, z_root: f64) -> (Pose25D, SkeletonDef, Pose3D) {
        let n = 5;
        let mut joints = vec![[0.0, 0.0, z_root]];
        for i in 1..n {
            let prev = joints[i - 1];
            joints.push([
                prev[0] + rng.gen_range(-250.0..250.0),
                prev[1] + rng.gen_range(-250.0..250.0),
                prev[2] + rng.gen_range(-150.0..150.0),
            ]);
        }
        let pose = Pose3D::all_masked(joints.clone()).unwrap();
        let p2 = project(&pose, &cam()).unwrap();
        let p25d = Pose25D {
            joints: (0..n)
                .map(|i| [p2.joints[i][0], p2.joints[i][1], joints[i][2] - z_root])
                .collect(),
            mask: vec![true; n],
        };
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        let ref_lengths = edges
            .iter()
            .map(|&(a, b)| {
                (0..3)
                    .map(|k| (joints[a][k] - joints[b][k]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        (p25d, SkeletonDef::new(edges, ref_lengths).unwrap(), pose)
    }

    #[test]
    fn noiseless_depth_recovered_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..10 {
            let (p25d, skel, _) = synthetic(&mut rng, 3000.0);
            let rec =
                recover_root_depth(&p25d, &cam(), &skel, &DepthSearch::default()).unwrap();
            assert!(
                (rec.root_depth_mm - 3000.0).abs() < 0.1,
                "recovered {}",
                rec.root_depth_mm
            );
            // Dense-grid oracle agrees.
            let (oz, _) = grid_argmin_1d(
                |z| bone_length_objective(&p25d, &cam(), &skel, z),
                500.0,
                10_000.0,
                0.1,
            );
            assert!((rec.root_depth_mm - oz).abs() < 0.2);
        }
    }

    #[test]
    fn empty_edge_list_is_contract_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (p25d, _, _) = synthetic(&mut rng, 3000.0);
        let skel = SkeletonDef::new(vec![], vec![]).unwrap();
        assert_eq!(
            recover_root_depth(&p25d, &cam(), &skel, &DepthSearch::default())
                .unwrap_err()
                .category(),
            "contract"
        );
    }

    #[test]
    fn noisy_inputs_match_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..10 {
            let (mut p25d, skel, _) = synthetic(&mut rng, 3500.0);
            for j in p25d.joints.iter_mut() {
                j[0] += rng.gen_range(-2.0..2.0);
                j[1] += rng.gen_range(-2.0..2.0);
            }
            let rec =
                recover_root_depth(&p25d, &cam(), &skel, &DepthSearch::default()).unwrap();
            let (oz, of) = grid_argmin_1d(
                |z| bone_length_objective(&p25d, &cam(), &skel, z),
                500.0,
                10_000.0,
                0.1,
            );
            assert!(
                (rec.root_depth_mm - oz).abs() < 0.5,
                "{} vs oracle {}",
                rec.root_depth_mm,
                oz
            );
            // Returned objective is at least as good as every dense grid point.
            assert!(rec.objective <= of + 1e-9);
        }
    }

    #[test]
    fn reconstruct_noiseless_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (p25d, skel, pose) = synthetic(&mut rng, 3000.0);
        let rec3d =
            reconstruct_3d(&p25d, &cam(), &skel, &DepthSearch::default(), 0).unwrap();
        let gt_rel = root_relative(&pose, 0).unwrap();
        let mpjpe = rec3d
            .joints
            .iter()
            .zip(&gt_rel.joints)
            .map(|(a, b)| {
                (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
            })
            .sum::<f64>()
            / rec3d.len() as f64;
        assert!(mpjpe < 0.5, "mpjpe {mpjpe}");
    }

    #[test]
    fn scaled_prior_shifts_depth_consistently() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let (p25d, skel, _) = synthetic(&mut rng, 4000.0);
        let scaled = SkeletonDef::new(
            skel.edges.clone(),
            skel.ref_lengths_mm.iter().map(|l| l * 1.1).collect(),
        )
        .unwrap();
        let rec =
            recover_root_depth(&p25d, &cam(), &scaled, &DepthSearch::default()).unwrap();
        // Weak perspective: depth scales roughly with the prior.
        assert!((rec.root_depth_mm / 4000.0 - 1.1).abs() < 0.05);
        let (oz, _) = grid_argmin_1d(
            |z| bone_length_objective(&p25d, &cam(), &scaled, z),
            500.0,
            10_000.0,
            0.1,
        );
        assert!((rec.root_depth_mm - oz).abs() < 0.5);
    }

    #[test]
    fn single_bone_along_optical_axis_matches_oracle() {
        let c = cam();
        let p25d = Pose25D {
            joints: vec![[128.0, 128.0, 0.0], [128.0, 128.0, 400.0]],
            mask: vec![true, true],
        };
        let skel = SkeletonDef::new(vec![(0, 1)], vec![400.0]).unwrap();
        let rec = recover_root_depth(&p25d, &c, &skel, &DepthSearch::default()).unwrap();
        let (oz, _) = grid_argmin_1d(
            |z| bone_length_objective(&p25d, &c, &skel, z),
            500.0,
            10_000.0,
            0.1,
        );
        assert!((rec.root_depth_mm - oz).abs() < 0.5);
    }

    #[test]
    fn monotone_in_prior_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..5 {
            let (p25d, skel, _) = synthetic(&mut rng, 3000.0);
            let mut last = 0.0;
            for c in [1.0, 1.05, 1.1, 1.2] {
                let scaled = SkeletonDef::new(
                    skel.edges.clone(),
                    skel.ref_lengths_mm.iter().map(|l| l * c).collect(),
                )
                .unwrap();
                let rec =
                    recover_root_depth(&p25d, &cam(), &scaled, &DepthSearch::default())
                        .unwrap();
                assert!(rec.root_depth_mm >= last);
                last = rec.root_depth_mm;
            }
        }
    }

    #[test]
    fn weak_perspective_scale_identities() {
        let p25d = Pose25D {
            joints: vec![[0.0, 0.0, 0.0], [300.0, 0.0, 0.0], [300.0, 400.0, 0.0]],
            mask: vec![true; 3],
        };
        let skel = SkeletonDef::new(vec![(0, 1), (1, 2)], vec![300.0, 400.0]).unwrap();
        assert!((recover_scale_weak_perspective(&p25d, &skel).unwrap() - 1.0).abs() < 1e-12);

        let half = SkeletonDef::new(vec![(0, 1), (1, 2)], vec![600.0, 800.0]).unwrap();
        assert!((recover_scale_weak_perspective(&p25d, &half).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn weak_perspective_total_length_matches_after_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let (p25d, skel, _) = synthetic(&mut rng, 3000.0);
        let scale = recover_scale_weak_perspective(&p25d, &skel).unwrap();
        let scaled = scale_pose(&weak_perspective_lift(&p25d), scale);
        let total: f64 = skel
            .edges
            .iter()
            .map(|&(a, b)| {
                (0..3)
                    .map(|k| (scaled.joints[a][k] - scaled.joints[b][k]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        let total_ref: f64 = skel.ref_lengths_mm.iter().sum();
        assert!((total - total_ref).abs() / total_ref < 1e-9);
    }

    #[test]
    fn zero_length_lift_is_degenerate() {
        let p25d = Pose25D {
            joints: vec![[1.0, 1.0, 0.0], [1.0, 1.0, 0.0]],
            mask: vec![true, true],
        };
        let skel = SkeletonDef::new(vec![(0, 1)], vec![100.0]).unwrap();
        assert_eq!(
            recover_scale_weak_perspective(&p25d, &skel)
                .unwrap_err()
                .category(),
            "degenerate"
        );
    }
}
