//! The pose JSON interchange format.
//!
//! ```json
//! {"version": 1, "fps": 50.0,
//!  "skeleton": {"names": [...], "parents": [...], "pairs": [[l, r], ...],
//!               "bone_lengths_mm": [...]},
//!  "dims": 2, "frames": [[[x, y], ...J], ...F], "provenance": "..."}
//! ```
//!
//! Coordinates are plain JSON numbers; NaN/Inf are rejected. Round-trips are
//! bit-exact for f64 payloads.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, PoseSequence, Skeleton};

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SkeletonDoc {
    names: Vec<String>,
    parents: Vec<usize>,
    pairs: Vec<[usize; 2]>,
    bone_lengths_mm: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseDoc {
    version: u32,
    fps: f64,
    skeleton: SkeletonDoc,
    dims: usize,
    frames: Vec<Vec<Vec<f64>>>,
    provenance: String,
}

/// A parsed pose file; `expected_skeleton` checks happen at call sites via
/// [`LoadedPose::require_skeleton`].
#[derive(Debug)]
pub struct LoadedPose {
    pub sequence: PoseSequence,
}

impl LoadedPose {
    /// Reject the file when its skeleton differs from the expected one.
    pub fn require_skeleton(self, expected: &Skeleton) -> Result<PoseSequence, DataError> {
        if &self.sequence.skeleton != expected {
            return Err(DataError::Validation(format!(
                "skeleton mismatch: file has {} joints ({:?}...), expected {}",
                self.sequence.skeleton.joints(),
                self.sequence.skeleton.names.first(),
                expected.joints()
            )));
        }
        Ok(self.sequence)
    }
}

pub fn save_pose_json(seq: &PoseSequence, path: &Path) -> Result<(), DataError> {
    let doc = PoseDoc {
        version: FORMAT_VERSION,
        fps: seq.fps,
        skeleton: SkeletonDoc {
            names: seq.skeleton.names.clone(),
            parents: seq.skeleton.parents.clone(),
            pairs: seq.skeleton.pairs.iter().map(|&(l, r)| [l, r]).collect(),
            bone_lengths_mm: seq.skeleton.bone_lengths_mm.clone(),
        },
        dims: seq.dims(),
        frames: (0..seq.frames())
            .map(|f| {
                (0..seq.joints())
                    .map(|j| seq.joint(f, j).to_vec())
                    .collect()
            })
            .collect(),
        provenance: seq.provenance.clone(),
    };
    let text = serde_json::to_string(&doc)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_pose_json(path: &Path) -> Result<LoadedPose, DataError> {
    let text = std::fs::read_to_string(path)?;
    let doc: PoseDoc = serde_json::from_str(&text)?;
    if doc.version != FORMAT_VERSION {
        return Err(DataError::Validation(format!(
            "unsupported pose file version {} (expected {FORMAT_VERSION})",
            doc.version
        )));
    }
    let skeleton = Skeleton {
        names: doc.skeleton.names,
        parents: doc.skeleton.parents,
        pairs: doc.skeleton.pairs.iter().map(|p| (p[0], p[1])).collect(),
        bone_lengths_mm: doc.skeleton.bone_lengths_mm,
    };
    let frames = doc.frames.len();
    let joints = skeleton.joints();
    let mut data = Vec::with_capacity(frames * joints * doc.dims);
    for (f, frame) in doc.frames.iter().enumerate() {
        if frame.len() != joints {
            return Err(DataError::Validation(format!(
                "frame {f} has {} joints, skeleton declares {joints}",
                frame.len()
            )));
        }
        for (j, coords) in frame.iter().enumerate() {
            if coords.len() != doc.dims {
                return Err(DataError::Validation(format!(
                    "frame {f} joint {j} has {} coordinates, dims is {}",
                    coords.len(),
                    doc.dims
                )));
            }
            data.extend_from_slice(coords);
        }
    }
    let sequence =
        PoseSequence::new(skeleton, doc.fps, doc.dims, frames, data, doc.provenance)?;
    Ok(LoadedPose { sequence })
}
