//! File formats: the MTRT binary tensor container and JSON sidecars for
//! poses, cameras, skeletons, and layer stacks.
//!
//! MTRT layout (all integers little-endian): magic `M T R T`, `u32`
//! version = 1, `u8` dtype (0 = f32), `u8` ndim, then `ndim × u32` dims and
//! the row-major f32 payload. Tensors are stored in 32-bit; everything in
//! the numeric core stays 64-bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{MetroError, Result};
use crate::geometry::{CameraIntrinsics, Pose2D, Pose3D};
use crate::scale_recovery::SkeletonDef;
use crate::striding::LayerSpec;

const MAGIC: [u8; 4] = *b"MTRT";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Serialize a tensor into MTRT bytes.
pub fn write_mtrt<W: Write>(mut w: W, tensor: &ArrayD<f32>) -> Result<()> {
    if tensor.ndim() > u8::MAX as usize {
        return Err(MetroError::contract("tensor rank exceeds format limit"));
    }
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[DTYPE_F32, tensor.ndim() as u8])?;
    for &d in tensor.shape() {
        let d = u32::try_from(d)
            .map_err(|_| MetroError::contract("tensor dimension exceeds u32"))?;
        w.write_all(&d.to_le_bytes())?;
    }
    // `iter` walks in row-major (logical) order regardless of memory layout.
    for &v in tensor.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Parse MTRT bytes back into a tensor.
pub fn read_mtrt<R: Read>(mut r: R) -> Result<ArrayD<f32>> {
    let mut head = [0u8; 10];
    r.read_exact(&mut head)
        .map_err(|_| MetroError::format("truncated MTRT header"))?;
    if head[0..4] != MAGIC {
        return Err(MetroError::format("bad MTRT magic"));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(MetroError::format(format!(
            "unsupported MTRT version {version}"
        )));
    }
    if head[8] != DTYPE_F32 {
        return Err(MetroError::format(format!("unsupported dtype {}", head[8])));
    }
    let ndim = head[9] as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)
            .map_err(|_| MetroError::format("truncated MTRT dims"))?;
        dims.push(u32::from_le_bytes(b) as usize);
    }
    let count: usize = dims.iter().product();
    let mut payload = vec![0u8; count * 4];
    r.read_exact(&mut payload)
        .map_err(|_| MetroError::format("truncated MTRT payload"))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(MetroError::format("trailing bytes after MTRT payload"));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ArrayD::from_shape_vec(IxDyn(&dims), data)
        .map_err(|_| MetroError::format("MTRT dims inconsistent with payload"))
}

/// Write a tensor to an MTRT file.
pub fn save_mtrt<P: AsRef<Path>>(path: P, tensor: &ArrayD<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_mtrt(&mut w, tensor)?;
    w.flush()?;
    Ok(())
}

/// Read a tensor from an MTRT file.
pub fn load_mtrt<P: AsRef<Path>>(path: P) -> Result<ArrayD<f32>> {
    read_mtrt(BufReader::new(File::open(path)?))
}

/// Pose JSON sidecar: named joints with metric coordinates and a mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub joint_names: Vec<String>,
    pub joints_mm: Vec<[f64; 3]>,
    pub mask: Vec<bool>,
}

impl PoseRecord {
    pub fn from_pose(pose: &Pose3D, joint_names: &[String]) -> Result<Self> {
        if joint_names.len() != pose.len() {
            return Err(MetroError::contract("joint name count mismatch"));
        }
        Ok(Self {
            joint_names: joint_names.to_vec(),
            joints_mm: pose.joints.clone(),
            mask: pose.mask.clone(),
        })
    }

    pub fn to_pose(&self) -> Result<Pose3D> {
        if self.joint_names.len() != self.joints_mm.len() {
            return Err(MetroError::format("joint name count mismatch"));
        }
        Pose3D::new(self.joints_mm.clone(), self.mask.clone())
    }
}

/// 2D pose JSON sidecar (crop-pixel coordinates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose2DRecord {
    pub joints_px: Vec<[f64; 2]>,
    pub mask: Vec<bool>,
}

impl Pose2DRecord {
    pub fn from_pose(pose: &Pose2D) -> Self {
        Self {
            joints_px: pose.joints.clone(),
            mask: pose.mask.clone(),
        }
    }

    pub fn to_pose(&self) -> Result<Pose2D> {
        Pose2D::new(self.joints_px.clone(), self.mask.clone())
    }
}

/// Write any serializable value as pretty JSON (with trailing newline so
/// files are diff-friendly and byte-stable).
pub fn save_json<P: AsRef<Path>, T: Serialize>(path: P, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| MetroError::format(format!("json encode: {e}")))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Read a JSON file into any deserializable value.
pub fn load_json<P: AsRef<Path>, T: DeserializeOwned>(path: P) -> Result<T> {
    let r = BufReader::new(File::open(path)?);
    serde_json::from_reader(r).map_err(|e| MetroError::format(format!("json decode: {e}")))
}

/// Load a camera sidecar (`{"fx","fy","cx","cy"}`), revalidating invariants.
pub fn load_camera<P: AsRef<Path>>(path: P) -> Result<CameraIntrinsics> {
    let cam: CameraIntrinsics = load_json(path)?;
    CameraIntrinsics::new(cam.fx, cam.fy, cam.cx, cam.cy)
}

/// Load a skeleton sidecar (`{"edges","ref_lengths_mm"}`), revalidating.
pub fn load_skeleton<P: AsRef<Path>>(path: P) -> Result<SkeletonDef> {
    let s: SkeletonDef = load_json(path)?;
    SkeletonDef::new(s.edges, s.ref_lengths_mm)
}

/// Load a layer stack (JSON array of `{kernel, stride, padding, dilation}`),
/// revalidating each layer.
pub fn load_layer_stack<P: AsRef<Path>>(path: P) -> Result<Vec<LayerSpec>> {
    let layers: Vec<LayerSpec> = load_json(path)?;
    layers
        .into_iter()
        .map(|l| LayerSpec::new(l.kernel, l.stride, l.padding, l.dilation))
        .collect()
}
