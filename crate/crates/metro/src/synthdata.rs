//! Deterministic synthetic scenes: parametric stick figures of varying
//! height, an optional metric scale-cue bar, pinhole rendering into small
//! crops, truncated-crop sampling, and augmentation.
//!
//! Everything here is a pure function of `(seed, config)`. Geometric
//! augmentations are expressed as exact virtual-camera updates (a rotation
//! or mirror composed into the crop transform plus new intrinsics), so the
//! projected 2D labels stay consistent with the 3D targets to float
//! precision; only the raster is resampled.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MetroError, Result};
use crate::geometry::{
    perspective_crop, project, rotate_pose, CameraIntrinsics, CropTransform, Pose2D, Pose3D,
    SquareBox,
};
use crate::scale_recovery::SkeletonDef;

/// Number of joints in the fixed topology.
pub const NUM_JOINTS: usize = 17;
/// Root joint (pelvis).
pub const ROOT_JOINT: usize = 0;
/// Metric length of the scale-cue bar.
pub const CUE_LENGTH_MM: f64 = 1000.0;

/// Joint names, index-aligned with the template.
pub fn joint_names() -> Vec<String> {
    [
        "pelvis",
        "spine",
        "neck",
        "head",
        "head_top",
        "l_shoulder",
        "l_elbow",
        "l_wrist",
        "r_shoulder",
        "r_elbow",
        "r_wrist",
        "l_hip",
        "l_knee",
        "l_ankle",
        "r_hip",
        "r_knee",
        "r_ankle",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Parent of each non-root joint; the root maps to itself.
pub const PARENTS: [usize; NUM_JOINTS] =
    [0, 0, 1, 2, 3, 2, 5, 6, 2, 8, 9, 0, 11, 12, 0, 14, 15];

/// Left/right joint swap used by horizontal flips.
pub const FLIP_PERMUTATION: [usize; NUM_JOINTS] =
    [0, 1, 2, 3, 4, 8, 9, 10, 5, 6, 7, 14, 15, 16, 11, 12, 13];

/// Per-bone rest direction in the person frame (x left, y up, z forward)
/// and length as a fraction of person height; row j describes bone
/// `PARENTS[j] -> j`.
const TEMPLATE: [([f64; 3], f64); NUM_JOINTS] = [
    ([0.0, 0.0, 0.0], 0.0), // root placeholder
    ([0.0, 1.0, 0.0], 0.15),
    ([0.0, 1.0, 0.0], 0.15),
    ([0.0, 1.0, 0.0], 0.07),
    ([0.0, 1.0, 0.0], 0.10),
    ([1.0, -0.15, 0.0], 0.12),
    ([0.3, -1.0, 0.1], 0.16),
    ([0.1, -1.0, 0.2], 0.15),
    ([-1.0, -0.15, 0.0], 0.12),
    ([-0.3, -1.0, 0.1], 0.16),
    ([-0.1, -1.0, 0.2], 0.15),
    ([1.0, -0.2, 0.0], 0.10),
    ([0.0, -1.0, 0.05], 0.28),
    ([0.0, -1.0, 0.05], 0.25),
    ([-1.0, -0.2, 0.0], 0.10),
    ([0.0, -1.0, 0.05], 0.28),
    ([0.0, -1.0, 0.05], 0.25),
];

/// Bone edges (parent, child) in template order.
pub fn bone_edges() -> Vec<(usize, usize)> {
    (1..NUM_JOINTS).map(|j| (PARENTS[j], j)).collect()
}

/// Skeleton definition with reference bone lengths for a given height.
pub fn default_skeleton(height_mm: f64) -> Result<SkeletonDef> {
    SkeletonDef::new(
        bone_edges(),
        (1..NUM_JOINTS).map(|j| TEMPLATE[j].1 * height_mm).collect(),
    )
}

/// Scene sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height_range_mm: (f64, f64),
    pub distance_range_mm: (f64, f64),
    /// Root offset perpendicular to the optical axis, +/- mm.
    pub lateral_range_mm: f64,
    /// Maximum per-bone articulation away from the rest pose, degrees.
    pub articulation_deg: f64,
    /// Render the 1000 mm scale-cue bar at the person's feet.
    pub cue: bool,
    pub cam: CameraIntrinsics,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height_range_mm: (1500.0, 1950.0),
            distance_range_mm: (2000.0, 6000.0),
            lateral_range_mm: 300.0,
            articulation_deg: 25.0,
            cue: true,
            cam: CameraIntrinsics {
                fx: 1100.0,
                fy: 1100.0,
                cx: 512.0,
                cy: 512.0,
            },
        }
    }
}

impl SceneConfig {
    fn validate(&self) -> Result<()> {
        let ok_range = |(lo, hi): (f64, f64)| lo > 0.0 && hi >= lo;
        if !ok_range(self.height_range_mm)
            || !ok_range(self.distance_range_mm)
            || self.lateral_range_mm < 0.0
            || !(0.0..=90.0).contains(&self.articulation_deg)
        {
            return Err(MetroError::contract("invalid scene config ranges"));
        }
        Ok(())
    }
}

/// One sampled scene in the camera frame (mm, +Z forward, +Y down).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub pose: Pose3D,
    pub person_height_mm: f64,
    pub cam: CameraIntrinsics,
    /// Endpoints of the scale-cue bar, if enabled.
    pub cue: Option<([f64; 3], [f64; 3])>,
    pub seed: u64,
}

/// Deterministically sample a scene: height, articulated skeleton, yaw,
/// and root placement 2-6 m in front of the camera.
pub fn sample_scene(seed: u64, config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let height = rng.gen_range(config.height_range_mm.0..=config.height_range_mm.1);
    let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let max_art = config.articulation_deg.to_radians();

    // Person frame: x left, y up, z forward; pelvis at the origin.
    let mut person = vec![Vector3::zeros(); NUM_JOINTS];
    for j in 1..NUM_JOINTS {
        let (rest, frac) = TEMPLATE[j];
        let axis = Unit::new_normalize(Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ));
        let angle = rng.gen_range(0.0..max_art.max(1e-12));
        let dir = Rotation3::from_axis_angle(&axis, angle)
            * Unit::new_normalize(Vector3::from(rest)).into_inner();
        // Normalize after the perturbation so the bone length is exactly
        // frac * height by construction.
        person[j] = person[PARENTS[j]] + frac * height * dir.normalize();
    }

    let spin = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
    let root = Vector3::new(
        rng.gen_range(-config.lateral_range_mm..=config.lateral_range_mm),
        rng.gen_range(-config.lateral_range_mm..=config.lateral_range_mm),
        rng.gen_range(config.distance_range_mm.0..=config.distance_range_mm.1),
    );
    // Person-to-camera: yaw about the up axis, then flip y (up -> down).
    let to_cam = |p: &Vector3<f64>| {
        let s = spin * p;
        root + Vector3::new(s.x, -s.y, s.z)
    };
    let joints: Vec<[f64; 3]> = person
        .iter()
        .map(|p| {
            let c = to_cam(p);
            [c.x, c.y, c.z]
        })
        .collect();
    let pose = Pose3D::all_masked(joints)?;
    if pose.joints.iter().any(|j| j[2] <= 0.0) {
        return Err(MetroError::contract("scene places joints behind the camera"));
    }

    // Ground-level bar through the person's footprint, metric length fixed.
    let cue = config.cue.then(|| {
        let ground_y = pose
            .joints
            .iter()
            .map(|j| j[1])
            .fold(f64::NEG_INFINITY, f64::max);
        let half = CUE_LENGTH_MM / 2.0;
        (
            [root.x - half, ground_y, root.z],
            [root.x + half, ground_y, root.z],
        )
    });

    Ok(Scene {
        pose,
        person_height_mm: height,
        cam: config.cam,
        cue,
        seed,
    })
}

/// Person bounding square in full-image pixels (15% margin).
pub fn person_bounding_square(scene: &Scene) -> Result<SquareBox> {
    let p2 = project(&scene.pose, &scene.cam)?;
    let (mut lo_u, mut hi_u) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lo_v, mut hi_v) = (f64::INFINITY, f64::NEG_INFINITY);
    for j in &p2.joints {
        lo_u = lo_u.min(j[0]);
        hi_u = hi_u.max(j[0]);
        lo_v = lo_v.min(j[1]);
        hi_v = hi_v.max(j[1]);
    }
    let side = (hi_u - lo_u).max(hi_v - lo_v) * 1.15;
    SquareBox::from_center((lo_u + hi_u) / 2.0, (lo_v + hi_v) / 2.0, side)
}

fn intersection_area(a: &SquareBox, b: &SquareBox) -> f64 {
    let w = (a.x0 + a.side).min(b.x0 + b.side) - a.x0.max(b.x0);
    let h = (a.y0 + a.side).min(b.y0 + b.side) - a.y0.max(b.y0);
    w.max(0.0) * h.max(0.0)
}

/// Does `crop` keep at least a quarter of the bounding square's area?
pub fn crop_keeps_quarter_area(bbox: &SquareBox, crop: &SquareBox) -> bool {
    intersection_area(bbox, crop) >= 0.25 * bbox.side * bbox.side
}

/// Sample a truncating sub-square of the person bounding square whose
/// intersection with it keeps at least 1/4 of its area. The full bounding
/// square itself lies in the sampler's support.
pub fn truncated_crop(scene: &Scene, seed: u64) -> Result<SquareBox> {
    let bbox = person_bounding_square(scene)?;
    let (bcx, bcy) = bbox.center();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let side = bbox.side * rng.gen_range(0.5..=1.0);
        let crop = SquareBox::from_center(
            bcx + bbox.side * rng.gen_range(-0.5..=0.5),
            bcy + bbox.side * rng.gen_range(-0.5..=0.5),
            side,
        )?;
        if crop_keeps_quarter_area(&bbox, &crop) {
            return Ok(crop);
        }
    }
}

/// One rendered training example. `target_pose` is root-relative in the
/// crop camera frame; `root_mm` restores the absolute pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Channels-first raster (3, out, out), values in [0, 1].
    pub image: Array3<f64>,
    pub target_pose: Pose3D,
    pub root_mm: [f64; 3],
    pub target_2d: Pose2D,
    pub visibility: Vec<bool>,
    pub crop: CropTransform,
    pub person_height_mm: f64,
}

impl Example {
    pub fn out_size(&self) -> usize {
        self.image.shape()[1]
    }

    /// Absolute crop-frame pose (root-relative targets plus root).
    pub fn absolute_pose(&self) -> Pose3D {
        Pose3D {
            joints: self
                .target_pose
                .joints
                .iter()
                .map(|j| [j[0] + self.root_mm[0], j[1] + self.root_mm[1], j[2] + self.root_mm[2]])
                .collect(),
            mask: self.target_pose.mask.clone(),
        }
    }
}

fn in_crop(j: &[f64; 2], out: f64) -> bool {
    (0.0..out).contains(&j[0]) && (0.0..out).contains(&j[1])
}

/// Fixed per-bone palette (16 bones), plus white joints and a magenta cue.
const BONE_COLORS: [[f64; 3]; NUM_JOINTS - 1] = [
    [0.9, 0.3, 0.2],
    [0.9, 0.6, 0.1],
    [0.9, 0.9, 0.2],
    [0.6, 0.9, 0.2],
    [0.2, 0.9, 0.3],
    [0.2, 0.9, 0.7],
    [0.2, 0.8, 0.9],
    [0.2, 0.5, 0.9],
    [0.3, 0.2, 0.9],
    [0.6, 0.2, 0.9],
    [0.9, 0.2, 0.8],
    [0.9, 0.2, 0.5],
    [0.7, 0.5, 0.3],
    [0.5, 0.7, 0.5],
    [0.5, 0.5, 0.9],
    [0.8, 0.8, 0.6],
];
const CUE_COLOR: [f64; 3] = [1.0, 0.1, 0.9];
const JOINT_COLOR: [f64; 3] = [1.0, 1.0, 1.0];
const BONE_HALF_WIDTH: f64 = 0.9;
const JOINT_RADIUS: f64 = 1.5;

/// Additively composite an anti-aliased segment into the raster; the
/// caller clamps to [0, 1] when drawing is finished. Additive blending
/// keeps overlapping limbs detectable instead of hiding the back one.
fn draw_segment(img: &mut Array3<f64>, a: [f64; 2], b: [f64; 2], color: [f64; 3], half_w: f64) {
    let out = img.shape()[1] as isize;
    let pad = half_w + 1.0;
    let x_lo = ((a[0].min(b[0]) - pad).floor() as isize).max(0);
    let x_hi = ((a[0].max(b[0]) + pad).ceil() as isize).min(out);
    let y_lo = ((a[1].min(b[1]) - pad).floor() as isize).max(0);
    let y_hi = ((a[1].max(b[1]) + pad).ceil() as isize).min(out);
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let p = [x as f64 + 0.5, y as f64 + 0.5];
            let t = if len2 > 0.0 {
                (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = [a[0] + t * d[0], a[1] + t * d[1]];
            let dist = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            let cov = (half_w + 0.5 - dist).clamp(0.0, 1.0);
            if cov > 0.0 {
                for c in 0..3 {
                    img[(c, y as usize, x as usize)] += cov * color[c];
                }
            }
        }
    }
}

/// Render the scene through a square crop into an `out_size` raster and
/// assemble crop-frame targets.
pub fn render(scene: &Scene, crop_box: SquareBox, out_size: usize) -> Result<Example> {
    if out_size < 16 {
        return Err(MetroError::contract("output size must be at least 16 px"));
    }
    let crop = perspective_crop(&scene.cam, crop_box, out_size as f64)?;
    let pose_crop = rotate_pose(&scene.pose, &crop, false);
    let target_2d = project(&pose_crop, &crop.new_intrinsics)?;

    let mut image = Array3::zeros((3, out_size, out_size));
    if let Some((e0, e1)) = scene.cue {
        let bar = rotate_pose(&Pose3D::all_masked(vec![e0, e1])?, &crop, false);
        let p = project(&bar, &crop.new_intrinsics)?;
        draw_segment(&mut image, p.joints[0].into(), p.joints[1].into(), CUE_COLOR, BONE_HALF_WIDTH);
    }
    // Depth-cue shading: brightness encodes root-relative depth so that
    // monocular depth is well-posed at this raster scale.
    let z_root = pose_crop.joints[ROOT_JOINT][2];
    for (bone, (parent, child)) in bone_edges().into_iter().enumerate() {
        let z_mid = (pose_crop.joints[parent][2] + pose_crop.joints[child][2]) / 2.0 - z_root;
        let shade = (1.2 - 0.4 * z_mid / 1000.0).clamp(0.5, 1.5);
        let color = BONE_COLORS[bone].map(|c| c * shade);
        draw_segment(
            &mut image,
            target_2d.joints[parent],
            target_2d.joints[child],
            color,
            BONE_HALF_WIDTH,
        );
    }
    for j in &target_2d.joints {
        // Degenerate segment = anti-aliased disc.
        draw_segment(&mut image, *j, *j, JOINT_COLOR, JOINT_RADIUS);
    }
    image.mapv_inplace(|v| v.min(1.0));

    let visibility = target_2d
        .joints
        .iter()
        .map(|j| in_crop(j, out_size as f64))
        .collect();
    let root_mm = pose_crop.joints[ROOT_JOINT];
    let target_pose = Pose3D {
        joints: pose_crop
            .joints
            .iter()
            .map(|j| [j[0] - root_mm[0], j[1] - root_mm[1], j[2] - root_mm[2]])
            .collect(),
        mask: pose_crop.mask,
    };
    // Project the reconstructed (target + root) pose, not the original, so
    // every later reconstruction reproduces target_2d bit-for-bit.
    let mut ex = Example {
        image,
        target_pose,
        root_mm,
        target_2d,
        visibility,
        crop,
        person_height_mm: scene.person_height_mm,
    };
    ex.target_2d = project(&ex.absolute_pose(), &ex.crop.new_intrinsics)?;
    ex.visibility = ex
        .target_2d
        .joints
        .iter()
        .map(|j| in_crop(j, out_size as f64))
        .collect();
    Ok(ex)
}

/// Augmentation parameters; each family can be toggled independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub occlusion_prob: f64,
    pub geometric: bool,
    pub max_rotation_deg: f64,
    pub scale_range: (f64, f64),
    /// Max principal-point shift as a fraction of the crop size.
    pub max_translate_frac: f64,
    pub hflip_prob: f64,
    pub color: bool,
    pub color_jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            occlusion_prob: 0.70,
            geometric: true,
            max_rotation_deg: 15.0,
            scale_range: (0.8, 1.2),
            max_translate_frac: 0.08,
            hflip_prob: 0.5,
            color: true,
            color_jitter: 0.2,
        }
    }
}

impl AugmentConfig {
    /// Everything off: `augment` becomes the identity.
    pub fn disabled() -> Self {
        Self {
            occlusion_prob: 0.0,
            geometric: false,
            hflip_prob: 0.0,
            color: false,
            ..Self::default()
        }
    }
}

/// Bilinear sample with black border; pixel `p` has its center at `p+0.5`.
fn bilinear(img: &Array3<f64>, c: usize, u: f64, v: f64) -> f64 {
    let out = img.shape()[1] as isize;
    let x = u - 0.5;
    let y = v - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let mut acc = 0.0;
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let xi = x0 as isize + dx;
            let yi = y0 as isize + dy;
            if xi >= 0 && xi < out && yi >= 0 && yi < out {
                acc += wy * wx * img[(c, yi as usize, xi as usize)];
            }
        }
    }
    acc
}

/// Re-derive labels after composing a frame change `g` (rotation about the
/// optical axis or a mirror) and new intrinsics into the crop transform.
fn apply_view_change(ex: &Example, g: Matrix3<f64>, k_new: CameraIntrinsics) -> Result<Example> {
    // Transform the root-relative targets and the root separately: for a
    // mirror this is exact sign flipping, which makes hflip an involution.
    let rot = |j: &[f64; 3]| {
        let v = g * Vector3::new(j[0], j[1], j[2]);
        [v.x, v.y, v.z]
    };
    let target_pose = Pose3D {
        joints: ex.target_pose.joints.iter().map(&rot).collect(),
        mask: ex.target_pose.mask.clone(),
    };
    let root_mm = rot(&ex.root_mm);
    let mut moved = Example {
        image: ex.image.clone(),
        target_pose,
        root_mm,
        target_2d: ex.target_2d.clone(),
        visibility: ex.visibility.clone(),
        crop: CropTransform {
            rotation: g * ex.crop.rotation,
            new_intrinsics: k_new,
            crop_box: ex.crop.crop_box,
            out_size: ex.crop.out_size,
        },
        person_height_mm: ex.person_height_mm,
    };
    moved.target_2d = project(&moved.absolute_pose(), &k_new)?;
    let out = ex.out_size() as f64;
    moved.visibility = moved.target_2d.joints.iter().map(|j| in_crop(j, out)).collect();
    Ok(moved)
}

/// Pixel map induced by a frame change: `(u,v)` in the old view to the new
/// view. Affine because `g` preserves the z component.
fn pixel_map(k_old: &CameraIntrinsics, g: &Matrix3<f64>, k_new: &CameraIntrinsics, u: f64, v: f64) -> (f64, f64) {
    let p = Vector3::new((u - k_old.cx) / k_old.fx, (v - k_old.cy) / k_old.fy, 1.0);
    let q = g * p;
    (k_new.fx * q.x / q.z + k_new.cx, k_new.fy * q.y / q.z + k_new.cy)
}

/// Horizontal flip: mirror the camera frame, reverse raster columns
/// exactly, and swap left/right joints. An involution.
fn hflip(ex: &Example) -> Result<Example> {
    let flip = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
    // Mirroring is only an exact column reversal when the principal point
    // sits at the crop center.
    let k = ex.crop.new_intrinsics;
    let out = ex.out_size() as f64;
    if (k.cx - out / 2.0).abs() > 1e-9 {
        return Err(MetroError::contract("flip requires centered principal point"));
    }
    let mut flipped = apply_view_change(ex, flip, k)?;
    let n = ex.out_size();
    let mut image = Array3::zeros((3, n, n));
    for c in 0..3 {
        for y in 0..n {
            for x in 0..n {
                image[(c, y, x)] = flipped.image[(c, y, n - 1 - x)];
            }
        }
    }
    flipped.image = image;
    let perm = |m: &mut Example| {
        let reorder_3d = |v: &Vec<[f64; 3]>| FLIP_PERMUTATION.map(|i| v[i]).to_vec();
        let reorder_2d = |v: &Vec<[f64; 2]>| FLIP_PERMUTATION.map(|i| v[i]).to_vec();
        m.target_pose.joints = reorder_3d(&m.target_pose.joints);
        m.target_pose.mask = FLIP_PERMUTATION.map(|i| m.target_pose.mask[i]).to_vec();
        m.target_2d.joints = reorder_2d(&m.target_2d.joints);
        m.target_2d.mask = m.target_pose.mask.clone();
        m.visibility = FLIP_PERMUTATION.map(|i| m.visibility[i]).to_vec();
    };
    perm(&mut flipped);
    Ok(flipped)
}

/// Apply occlusion, geometric, and color augmentations per config,
/// deterministically in `seed`.
pub fn augment(ex: &Example, seed: u64, config: &AugmentConfig) -> Result<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ex = ex.clone();
    let n = ex.out_size();
    let nf = n as f64;

    if config.hflip_prob > 0.0 && rng.gen::<f64>() < config.hflip_prob {
        ex = hflip(&ex)?;
    }

    if config.geometric {
        let theta = rng
            .gen_range(-config.max_rotation_deg..=config.max_rotation_deg)
            .to_radians();
        let gamma = rng.gen_range(config.scale_range.0..=config.scale_range.1);
        let t = config.max_translate_frac * nf;
        let (tx, ty) = (rng.gen_range(-t..=t), rng.gen_range(-t..=t));
        let g = Rotation3::from_axis_angle(&Vector3::z_axis(), theta).into_inner();
        let k_old = ex.crop.new_intrinsics;
        let k_new = CameraIntrinsics {
            fx: gamma * k_old.fx,
            fy: gamma * k_old.fy,
            cx: k_old.cx + tx,
            cy: k_old.cy + ty,
        };
        let mut moved = apply_view_change(&ex, g, k_new)?;
        let g_inv = g.transpose();
        let mut image = Array3::zeros((3, n, n));
        for y in 0..n {
            for x in 0..n {
                let (u, v) =
                    pixel_map(&k_new, &g_inv, &k_old, x as f64 + 0.5, y as f64 + 0.5);
                for c in 0..3 {
                    image[(c, y, x)] = bilinear(&ex.image, c, u, v);
                }
            }
        }
        moved.image = image;
        ex = moved;
    }

    if config.occlusion_prob > 0.0 && rng.gen::<f64>() < config.occlusion_prob {
        if rng.gen::<bool>() {
            // Uniform-noise rectangle.
            let w = (nf * rng.gen_range(0.2..0.5)) as usize;
            let h = (nf * rng.gen_range(0.2..0.5)) as usize;
            let x0 = rng.gen_range(0..n - w);
            let y0 = rng.gen_range(0..n - h);
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    for c in 0..3 {
                        ex.image[(c, y, x)] = rng.gen();
                    }
                }
            }
        } else {
            // Solid convex polygon of a random color.
            let cx = rng.gen_range(0.0..nf);
            let cy = rng.gen_range(0.0..nf);
            let r = nf * rng.gen_range(0.12..0.30);
            let sides = rng.gen_range(3..=6);
            let mut angles: Vec<f64> = (0..sides)
                .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
                .collect();
            angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let verts: Vec<[f64; 2]> = angles
                .iter()
                .map(|a| [cx + r * a.cos(), cy + r * a.sin()])
                .collect();
            let color: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
            for y in 0..n {
                for x in 0..n {
                    let p = [x as f64 + 0.5, y as f64 + 0.5];
                    // Convex, counter-clockwise-by-angle: inside iff every
                    // edge cross product is non-negative.
                    let inside = (0..sides).all(|i| {
                        let a = verts[i];
                        let b = verts[(i + 1) % sides];
                        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
                    });
                    if inside {
                        for c in 0..3 {
                            ex.image[(c, y, x)] = color[c];
                        }
                    }
                }
            }
        }
    }

    if config.color {
        let j = config.color_jitter;
        for c in 0..3 {
            let gain = rng.gen_range(1.0 - j..=1.0 + j);
            let offset = rng.gen_range(-j / 2.0..=j / 2.0);
            ex.image
                .index_axis_mut(ndarray::Axis(0), c)
                .mapv_inplace(|v| (gain * v + offset).clamp(0.0, 1.0));
        }
    }

    Ok(ex)
}

/// Dataset generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub scene: SceneConfig,
    /// None = no augmentation pass.
    pub augment: Option<AugmentConfig>,
    /// Sample truncating crops instead of the full bounding square.
    pub truncate: bool,
    pub out_size: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            augment: None,
            truncate: false,
            out_size: 64,
        }
    }
}

/// Generate one example; sub-seeds for scene, crop, and augmentation are
/// derived from `seed` through one stream.
pub fn generate_example(config: &DatasetConfig, seed: u64) -> Result<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (scene_seed, crop_seed, aug_seed) = (rng.gen(), rng.gen(), rng.gen());
    let scene = sample_scene(scene_seed, &config.scene)?;
    let crop_box = if config.truncate {
        truncated_crop(&scene, crop_seed)?
    } else {
        person_bounding_square(&scene)?
    };
    let ex = render(&scene, crop_box, config.out_size)?;
    match &config.augment {
        Some(a) => augment(&ex, aug_seed, a),
        None => Ok(ex),
    }
}

/// Generate `n` examples with per-example seeds `base_seed + i`.
pub fn generate_dataset(config: &DatasetConfig, n: usize, base_seed: u64) -> Result<Vec<Example>> {
    (0..n)
        .map(|i| generate_example(config, base_seed.wrapping_add(i as u64)))
        .collect()
}

/// Manifest stored alongside a written dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub n: usize,
    pub base_seed: u64,
    pub joint_names: Vec<String>,
}

/// Per-example JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub target_pose_mm: Vec<[f64; 3]>,
    pub mask: Vec<bool>,
    pub root_mm: [f64; 3],
    pub target_2d_px: Vec<[f64; 2]>,
    pub visibility: Vec<bool>,
    pub crop: CropTransform,
    pub person_height_mm: f64,
}

fn image_name(i: usize) -> String {
    format!("img_{i:05}.mtrt")
}

fn sidecar_name(i: usize) -> String {
    format!("ex_{i:05}.json")
}

/// Write a dataset directory: MTRT images, JSON sidecars, and a manifest.
pub fn save_dataset(
    dir: &std::path::Path,
    config: &DatasetConfig,
    n: usize,
    base_seed: u64,
) -> Result<Vec<Example>> {
    std::fs::create_dir_all(dir)?;
    let examples = generate_dataset(config, n, base_seed)?;
    for (i, ex) in examples.iter().enumerate() {
        crate::io::save_mtrt(dir.join(image_name(i)), &ex.image.mapv(|v| v as f32).into_dyn())?;
        crate::io::save_json(
            dir.join(sidecar_name(i)),
            &ExampleRecord {
                target_pose_mm: ex.target_pose.joints.clone(),
                mask: ex.target_pose.mask.clone(),
                root_mm: ex.root_mm,
                target_2d_px: ex.target_2d.joints.clone(),
                visibility: ex.visibility.clone(),
                crop: ex.crop.clone(),
                person_height_mm: ex.person_height_mm,
            },
        )?;
    }
    crate::io::save_json(
        dir.join("manifest.json"),
        &DatasetManifest {
            config: config.clone(),
            n,
            base_seed,
            joint_names: joint_names(),
        },
    )?;
    Ok(examples)
}

/// Read a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &std::path::Path) -> Result<(DatasetManifest, Vec<Example>)> {
    let manifest: DatasetManifest = crate::io::load_json(dir.join("manifest.json"))?;
    let mut examples = Vec::with_capacity(manifest.n);
    for i in 0..manifest.n {
        let image = crate::io::load_mtrt(dir.join(image_name(i)))?;
        let image = image
            .mapv(|v| v as f64)
            .into_dimensionality::<ndarray::Ix3>()
            .map_err(|_| MetroError::format("image tensor must be rank 3"))?;
        let rec: ExampleRecord = crate::io::load_json(dir.join(sidecar_name(i)))?;
        examples.push(Example {
            image,
            target_pose: Pose3D::new(rec.target_pose_mm, rec.mask.clone())?,
            root_mm: rec.root_mm,
            target_2d: Pose2D::new(rec.target_2d_px, rec.mask)?,
            visibility: rec.visibility,
            crop: rec.crop,
            person_height_mm: rec.person_height_mm,
        });
    }
    Ok((manifest, examples))
}
