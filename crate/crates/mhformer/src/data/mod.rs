//! Pose data: skeleton metadata, 2D/3D sequences, synthetic motion
//! generation, camera projection, sliding windows, and the pose JSON
//! interchange format.

mod camera;
mod json;
mod synth;
mod windows;

pub use camera::CameraModel;
pub use json::{load_pose_json, save_pose_json, LoadedPose};
pub use synth::{add_noise, synth_generate, MotionParams};
pub use windows::{windows, windows_2d, Window};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid pose data: {0}")]
    Validation(String),
    #[error("point at or behind the camera plane (z = {z} mm)")]
    BehindCamera { z: f64 },
}

fn invalid(msg: impl Into<String>) -> DataError {
    DataError::Validation(msg.into())
}

/// Joint names, tree structure, mirror pairs, and canonical bone lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub names: Vec<String>,
    /// Parent index per joint; the root is its own parent.
    pub parents: Vec<usize>,
    /// Left/right joint index pairs swapped by a horizontal flip.
    pub pairs: Vec<(usize, usize)>,
    /// Canonical bone length to the parent, in millimeters. Zero for the root.
    pub bone_lengths_mm: Vec<f64>,
}

impl Skeleton {
    pub fn joints(&self) -> usize {
        self.names.len()
    }

    pub fn root(&self) -> usize {
        self.parents
            .iter()
            .enumerate()
            .find(|(i, &p)| *i == p)
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let j = self.joints();
        if j == 0 {
            return Err(invalid("skeleton has no joints"));
        }
        if self.parents.len() != j || self.bone_lengths_mm.len() != j {
            return Err(invalid("parents/bone_lengths length must match joint count"));
        }
        let roots = self.parents.iter().enumerate().filter(|(i, &p)| *i == p).count();
        if roots != 1 {
            return Err(invalid(format!("expected exactly one root joint, found {roots}")));
        }
        // Walking up from any joint must reach the root without cycling.
        for start in 0..j {
            let mut cur = start;
            for _ in 0..=j {
                let p = *self
                    .parents
                    .get(cur)
                    .ok_or_else(|| invalid(format!("parent index {cur} out of range")))?;
                if p == cur {
                    break;
                }
                cur = p;
            }
            if self.parents[cur] != cur {
                return Err(invalid(format!("parent chain from joint {start} does not terminate")));
            }
        }
        let mut seen = vec![false; j];
        for &(l, r) in &self.pairs {
            if l >= j || r >= j {
                return Err(invalid(format!("pair ({l}, {r}) out of range")));
            }
            if l == r {
                return Err(invalid(format!("pair ({l}, {r}) maps a joint to itself")));
            }
            if seen[l] || seen[r] {
                return Err(invalid(format!("joint {l} or {r} appears in multiple pairs")));
            }
            seen[l] = true;
            seen[r] = true;
        }
        let root = self.root();
        for (i, &len) in self.bone_lengths_mm.iter().enumerate() {
            if i == root {
                if len != 0.0 {
                    return Err(invalid("root bone length must be zero"));
                }
            } else if !(len > 0.0) {
                return Err(invalid(format!("bone length of joint {i} must be positive")));
            }
        }
        Ok(())
    }

    /// Joint order with every parent before its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let j = self.joints();
        let mut order = Vec::with_capacity(j);
        let mut placed = vec![false; j];
        let root = self.root();
        order.push(root);
        placed[root] = true;
        while order.len() < j {
            for i in 0..j {
                if !placed[i] && placed[self.parents[i]] {
                    order.push(i);
                    placed[i] = true;
                }
            }
        }
        order
    }

    /// The 17-joint skeleton used throughout: hip root, leg/arm chains, and
    /// a spine-thorax-nose-head column, with plausible bone lengths.
    pub fn h36m_17() -> Skeleton {
        let names = [
            "hip", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "spine", "thorax",
            "nose", "head", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow",
            "r_wrist",
        ];
        Skeleton {
            names: names.iter().map(|s| s.to_string()).collect(),
            parents: vec![0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15],
            pairs: vec![(4, 1), (5, 2), (6, 3), (11, 14), (12, 15), (13, 16)],
            bone_lengths_mm: vec![
                0.0, 130.0, 450.0, 440.0, 130.0, 450.0, 440.0, 230.0, 255.0, 120.0, 115.0, 150.0,
                280.0, 250.0, 150.0, 280.0, 250.0,
            ],
        }
    }

    /// Five-joint toy skeleton for fast tests.
    pub fn toy5() -> Skeleton {
        Skeleton {
            names: ["root", "spine", "head", "l_arm", "r_arm"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            parents: vec![0, 0, 1, 1, 1],
            pairs: vec![(3, 4)],
            bone_lengths_mm: vec![0.0, 300.0, 200.0, 350.0, 350.0],
        }
    }

    /// Two-joint stick used by the tiny model configuration.
    pub fn stick2() -> Skeleton {
        Skeleton {
            names: vec!["root".into(), "head".into()],
            parents: vec![0, 0],
            pairs: vec![],
            bone_lengths_mm: vec![0.0, 500.0],
        }
    }
}

/// Frame-major joint coordinates; `dims` is 2 or 3.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    pub skeleton: Skeleton,
    pub fps: f64,
    pub provenance: String,
    dims: usize,
    frames: usize,
    data: Vec<f64>,
}

pub type PoseSequence2D = PoseSequence;
pub type PoseSequence3D = PoseSequence;

impl PoseSequence {
    pub fn new(
        skeleton: Skeleton,
        fps: f64,
        dims: usize,
        frames: usize,
        data: Vec<f64>,
        provenance: impl Into<String>,
    ) -> Result<Self, DataError> {
        skeleton.validate()?;
        if dims != 2 && dims != 3 {
            return Err(invalid(format!("dims must be 2 or 3, got {dims}")));
        }
        if frames == 0 {
            return Err(invalid("a pose sequence needs at least one frame"));
        }
        if data.len() != frames * skeleton.joints() * dims {
            return Err(invalid(format!(
                "coordinate count {} does not match {frames} frames x {} joints x {dims}",
                data.len(),
                skeleton.joints()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("coordinates must be finite"));
        }
        if !(fps > 0.0) {
            return Err(invalid("fps must be positive"));
        }
        Ok(PoseSequence { skeleton, fps, provenance: provenance.into(), dims, frames, data })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.skeleton.joints()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let w = self.joints() * self.dims;
        &self.data[f * w..(f + 1) * w]
    }

    /// Coordinates of one joint in one frame (2 or 3 values).
    pub fn joint(&self, f: usize, j: usize) -> &[f64] {
        let w = self.joints() * self.dims;
        &self.data[f * w + j * self.dims..f * w + (j + 1) * self.dims]
    }

    pub fn set_joint(&mut self, f: usize, j: usize, coords: &[f64]) {
        let w = self.joints() * self.dims;
        let at = f * w + j * self.dims;
        self.data[at..at + self.dims].copy_from_slice(coords);
    }

    /// Maximum relative deviation of any bone length from its canonical
    /// value, across all frames. Only meaningful for 3D sequences.
    pub fn max_bone_length_error(&self) -> f64 {
        debug_assert_eq!(self.dims, 3);
        let root = self.skeleton.root();
        let mut worst = 0.0f64;
        for f in 0..self.frames {
            for j in 0..self.joints() {
                if j == root {
                    continue;
                }
                let p = self.skeleton.parents[j];
                let a = self.joint(f, j);
                let b = self.joint(f, p);
                let len = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2))
                    .sqrt();
                let canonical = self.skeleton.bone_lengths_mm[j];
                worst = worst.max((len - canonical).abs() / canonical);
            }
        }
        worst
    }
}
