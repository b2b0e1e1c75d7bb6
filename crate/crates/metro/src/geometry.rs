//! Pinhole camera model and the perspective-correcting crop transform.
//!
//! Cropping an image around a subject and treating the crop as a new image
//! implicitly rotates the camera: the ray through the crop center becomes the
//! new optical axis. [`perspective_crop`] constructs that virtual rotation
//! together with intrinsics for the cropped view, so poses and pixels can be
//! mapped consistently between the original and the cropped camera frames.
//!
//! Conventions: right-handed camera frame, +Z forward, +Y down image rows.
//! Pixel coordinates are continuous; pixel `p` occupies `[p, p+1)`.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{MetroError, Result};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(MetroError::domain("focal lengths must be positive"));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Unit ray through the given pixel.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Unit<Vector3<f64>> {
        Unit::new_normalize(Vector3::new(
            (u - self.cx) / self.fx,
            (v - self.cy) / self.fy,
            1.0,
        ))
    }

    /// Project a camera-frame point; requires z > 0.
    pub fn project_point(&self, p: &Vector3<f64>) -> (f64, f64) {
        (
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        )
    }
}

/// Axis-aligned square region in source-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquareBox {
    pub x0: f64,
    pub y0: f64,
    pub side: f64,
}

impl SquareBox {
    pub fn new(x0: f64, y0: f64, side: f64) -> Result<Self> {
        if !(side > 0.0) {
            return Err(MetroError::domain("crop box must have positive side length"));
        }
        Ok(Self { x0, y0, side })
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x0 + self.side / 2.0, self.y0 + self.side / 2.0)
    }

    pub fn from_center(cx: f64, cy: f64, side: f64) -> Result<Self> {
        Self::new(cx - side / 2.0, cy - side / 2.0, side)
    }
}

/// Virtual-camera transform produced by [`perspective_crop`].
///
/// `rotation` maps original camera-frame coordinates into the rotated (crop)
/// camera frame; it is orthonormal with determinant +1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    pub rotation: Matrix3<f64>,
    pub new_intrinsics: CameraIntrinsics,
    pub crop_box: SquareBox,
    pub out_size: f64,
}

/// Per-joint metric 3D coordinates (mm, camera frame) with a validity mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    pub joints: Vec<[f64; 3]>,
    pub mask: Vec<bool>,
}

impl Pose3D {
    pub fn new(joints: Vec<[f64; 3]>, mask: Vec<bool>) -> Result<Self> {
        if joints.len() != mask.len() {
            return Err(MetroError::contract("joint/mask length mismatch"));
        }
        for (i, (j, &m)) in joints.iter().zip(&mask).enumerate() {
            if m && !j.iter().all(|c| c.is_finite()) {
                return Err(MetroError::contract(format!(
                    "non-finite coordinates on masked joint {i}"
                )));
            }
        }
        Ok(Self { joints, mask })
    }

    pub fn all_masked(joints: Vec<[f64; 3]>) -> Result<Self> {
        let mask = vec![true; joints.len()];
        Self::new(joints, mask)
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }
}

/// Per-joint 2D pixel coordinates; values may lie outside image bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub joints: Vec<[f64; 2]>,
    pub mask: Vec<bool>,
}

impl Pose2D {
    pub fn new(joints: Vec<[f64; 2]>, mask: Vec<bool>) -> Result<Self> {
        if joints.len() != mask.len() {
            return Err(MetroError::contract("joint/mask length mismatch"));
        }
        for (i, (j, &m)) in joints.iter().zip(&mask).enumerate() {
            if m && !j.iter().all(|c| c.is_finite()) {
                return Err(MetroError::contract(format!(
                    "non-finite coordinates on masked joint {i}"
                )));
            }
        }
        Ok(Self { joints, mask })
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }
}

/// Pinhole projection of a metric pose; masked joints must have z > 0.
pub fn project(pose: &Pose3D, cam: &CameraIntrinsics) -> Result<Pose2D> {
    let mut joints = Vec::with_capacity(pose.len());
    for (i, (j, &m)) in pose.joints.iter().zip(&pose.mask).enumerate() {
        if m && j[2] <= 0.0 {
            return Err(MetroError::domain(format!(
                "non-positive depth {} on masked joint {i}",
                j[2]
            )));
        }
        if j[2] > 0.0 {
            let (u, v) = cam.project_point(&Vector3::new(j[0], j[1], j[2]));
            joints.push([u, v]);
        } else {
            joints.push([0.0, 0.0]);
        }
    }
    Pose2D::new(joints, pose.mask.clone())
}

/// Back-projection of pixel positions at the given metric depths.
pub fn back_project(pose2d: &Pose2D, depths: &[f64], cam: &CameraIntrinsics) -> Result<Pose3D> {
    if depths.len() != pose2d.len() {
        return Err(MetroError::contract("depths length mismatch"));
    }
    let mut joints = Vec::with_capacity(pose2d.len());
    for (i, ((j, &z), &m)) in pose2d.joints.iter().zip(depths).zip(&pose2d.mask).enumerate() {
        if m && z <= 0.0 {
            return Err(MetroError::domain(format!(
                "non-positive depth {z} on masked joint {i}"
            )));
        }
        joints.push([
            (j[0] - cam.cx) * z / cam.fx,
            (j[1] - cam.cy) * z / cam.fy,
            z,
        ]);
    }
    Pose3D::new(joints, pose2d.mask.clone())
}

/// Build the virtual-camera transform for a square crop.
///
/// The rotation is the minimal-angle rotation taking the ray through the box
/// center onto the new optical axis; the new intrinsics scale the box to
/// `out_size` with the principal point at the crop center.
pub fn perspective_crop(
    cam: &CameraIntrinsics,
    crop_box: SquareBox,
    out_size: f64,
) -> Result<CropTransform> {
    if !(crop_box.side > 0.0) {
        return Err(MetroError::domain("degenerate crop box"));
    }
    if !(out_size > 0.0) {
        return Err(MetroError::domain("output size must be positive"));
    }
    let (bx, by) = crop_box.center();
    let ray = cam.pixel_ray(bx, by);
    let z = Unit::new_unchecked(Vector3::z());
    // Minimal rotation about ray x z mapping the center ray onto +Z of the
    // new frame (identity when the box is centered on the principal point).
    let rotation = Rotation3::rotation_between(&ray.into_inner(), &z.into_inner())
        .ok_or_else(|| MetroError::degenerate("crop center ray opposes optical axis"))?;
    let scale = out_size / crop_box.side;
    let new_intrinsics = CameraIntrinsics::new(
        cam.fx * scale,
        cam.fy * scale,
        out_size / 2.0,
        out_size / 2.0,
    )?;
    Ok(CropTransform {
        rotation: rotation.into_inner(),
        new_intrinsics,
        crop_box,
        out_size,
    })
}

/// Rotate a pose into (or out of, with `inverse`) the crop camera frame.
pub fn rotate_pose(pose: &Pose3D, t: &CropTransform, inverse: bool) -> Pose3D {
    let rot = if inverse {
        t.rotation.transpose()
    } else {
        t.rotation
    };
    let joints = pose
        .joints
        .iter()
        .map(|j| {
            let v = rot * Vector3::new(j[0], j[1], j[2]);
            [v.x, v.y, v.z]
        })
        .collect();
    Pose3D {
        joints,
        mask: pose.mask.clone(),
    }
}

impl CropTransform {
    /// Project an original-camera-frame pose into crop pixels.
    pub fn project(&self, pose: &Pose3D) -> Result<Pose2D> {
        project(&rotate_pose(pose, self, false), &self.new_intrinsics)
    }

    /// Map a crop pixel back to the original image plane.
    pub fn crop_to_image(&self, cam: &CameraIntrinsics, u: f64, v: f64) -> (f64, f64) {
        let ray = self.new_intrinsics.pixel_ray(u, v);
        let back = self.rotation.transpose() * ray.into_inner();
        cam.project_point(&back)
    }

    /// Map an original-image pixel into crop pixels.
    pub fn image_to_crop(&self, cam: &CameraIntrinsics, u: f64, v: f64) -> (f64, f64) {
        let ray = cam.pixel_ray(u, v);
        let fwd = self.rotation * ray.into_inner();
        self.new_intrinsics.project_point(&fwd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 128.0, 128.0).unwrap()
    }

    #[test]
    fn project_optical_axis() {
        let pose = Pose3D::all_masked(vec![[0.0, 0.0, 1000.0]]).unwrap();
        let p = project(&pose, &cam()).unwrap();
        assert_eq!(p.joints[0], [128.0, 128.0]);
    }

    #[test]
    fn project_similar_triangles() {
        let pose = Pose3D::all_masked(vec![[100.0, 0.0, 1000.0]]).unwrap();
        let p = project(&pose, &cam()).unwrap();
        assert_eq!(p.joints[0], [228.0, 128.0]);
    }

    #[test]
    fn project_rejects_nonpositive_depth() {
        let pose = Pose3D::all_masked(vec![[0.0, 0.0, -5.0]]).unwrap();
        let err = project(&pose, &cam()).unwrap_err();
        assert_eq!(err.category(), "domain");
        assert!(err.to_string().contains("joint 0"));
    }

    #[test]
    fn back_project_axis_and_offset() {
        let p2 = Pose2D::new(vec![[128.0, 128.0], [228.0, 128.0]], vec![true, true]).unwrap();
        let p3 = back_project(&p2, &[1000.0, 1000.0], &cam()).unwrap();
        assert_eq!(p3.joints[0], [0.0, 0.0, 1000.0]);
        assert_eq!(p3.joints[1], [100.0, 0.0, 1000.0]);
    }

    #[test]
    fn round_trip_project_back_project() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let joints: Vec<[f64; 3]> = (0..100)
            .map(|_| {
                [
                    rng.gen_range(-800.0..800.0),
                    rng.gen_range(-800.0..800.0),
                    rng.gen_range(1500.0..6000.0),
                ]
            })
            .collect();
        let pose = Pose3D::all_masked(joints.clone()).unwrap();
        let c = cam();
        let p2 = project(&pose, &c).unwrap();
        let depths: Vec<f64> = joints.iter().map(|j| j[2]).collect();
        let back = back_project(&p2, &depths, &c).unwrap();
        for (a, b) in back.joints.iter().zip(&joints) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn centered_box_gives_identity_rotation() {
        let t = perspective_crop(&cam(), SquareBox::from_center(128.0, 128.0, 100.0).unwrap(), 64.0)
            .unwrap();
        assert_abs_diff_eq!(t.rotation, Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn rotation_is_special_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let b = SquareBox::from_center(
                rng.gen_range(-200.0..500.0),
                rng.gen_range(-200.0..500.0),
                rng.gen_range(10.0..400.0),
            )
            .unwrap();
            let t = perspective_crop(&cam(), b, 64.0).unwrap();
            let r = t.rotation;
            assert_abs_diff_eq!(r * r.transpose(), Matrix3::identity(), epsilon = 1e-9);
            assert_abs_diff_eq!(r.determinant(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn crop_projection_consistent_with_direct() {
        // Rotate a pose into the crop frame, project with the new intrinsics,
        // then map the crop pixel back; must match direct projection.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = cam();
        for _ in 0..20 {
            let b = SquareBox::from_center(
                rng.gen_range(0.0..300.0),
                rng.gen_range(0.0..300.0),
                rng.gen_range(50.0..300.0),
            )
            .unwrap();
            let t = perspective_crop(&c, b, 128.0).unwrap();
            let pose = Pose3D::all_masked(vec![[
                rng.gen_range(-500.0..500.0),
                rng.gen_range(-500.0..500.0),
                rng.gen_range(2000.0..5000.0),
            ]])
            .unwrap();
            let direct = project(&pose, &c).unwrap();
            let in_crop = t.project(&pose).unwrap();
            let (u, v) = t.crop_to_image(&c, in_crop.joints[0][0], in_crop.joints[0][1]);
            assert!((u - direct.joints[0][0]).abs() < 1e-6);
            assert!((v - direct.joints[0][1]).abs() < 1e-6);
        }
    }

    #[test]
    fn rotate_pose_identity_and_inverse() {
        let c = cam();
        let t = perspective_crop(&c, SquareBox::from_center(128.0, 128.0, 64.0).unwrap(), 64.0)
            .unwrap();
        let pose = Pose3D::all_masked(vec![[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(rotate_pose(&pose, &t, false).joints, pose.joints);

        let off = perspective_crop(&c, SquareBox::from_center(400.0, 30.0, 64.0).unwrap(), 64.0)
            .unwrap();
        let fwd = rotate_pose(&pose, &off, false);
        let back = rotate_pose(&fwd, &off, true);
        for k in 0..3 {
            assert!((back.joints[0][k] - pose.joints[0][k]).abs() < 1e-9);
        }
    }

    #[test]
    fn rotate_pose_matches_matrix_product_oracle() {
        // 90-degree virtual yaw: build the rotation directly and compare.
        let axis = nalgebra::Vector3::y_axis();
        let rot = nalgebra::Rotation3::from_axis_angle(&axis, std::f64::consts::FRAC_PI_2);
        let t = CropTransform {
            rotation: rot.into_inner(),
            new_intrinsics: cam(),
            crop_box: SquareBox::new(0.0, 0.0, 1.0).unwrap(),
            out_size: 1.0,
        };
        let pose = Pose3D::all_masked(vec![[0.0, 0.0, 1000.0]]).unwrap();
        let rotated = rotate_pose(&pose, &t, false);
        let expect = metro_oracles::apply_matrix(&rot.into_inner(), [0.0, 0.0, 1000.0]);
        for k in 0..3 {
            assert!((rotated.joints[0][k] - expect[k]).abs() < 1e-9);
        }
        // +Z maps to +X under this convention.
        assert!((rotated.joints[0][0] - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn rotation_preserves_pairwise_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let joints: Vec<[f64; 3]> = (0..10)
            .map(|_| {
                [
                    rng.gen_range(-500.0..500.0),
                    rng.gen_range(-500.0..500.0),
                    rng.gen_range(1000.0..4000.0),
                ]
            })
            .collect();
        let pose = Pose3D::all_masked(joints).unwrap();
        let t = perspective_crop(&cam(), SquareBox::from_center(350.0, 40.0, 80.0).unwrap(), 64.0)
            .unwrap();
        let rot = rotate_pose(&pose, &t, false);
        for a in 0..pose.len() {
            for b in (a + 1)..pose.len() {
                let d0: f64 = (0..3)
                    .map(|k| (pose.joints[a][k] - pose.joints[b][k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let d1: f64 = (0..3)
                    .map(|k| (rot.joints[a][k] - rot.joints[b][k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((d0 - d1).abs() / d0.max(1e-12) < 1e-9);
            }
        }
    }

    #[test]
    fn zero_area_box_is_domain_error() {
        assert!(SquareBox::new(0.0, 0.0, 0.0).is_err());
        let err = perspective_crop(&cam(), SquareBox { x0: 0.0, y0: 0.0, side: 0.0 }, 64.0)
            .unwrap_err();
        assert_eq!(err.category(), "domain");
    }
}
