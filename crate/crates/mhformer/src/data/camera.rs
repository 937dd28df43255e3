//! Pinhole camera: world-to-camera transform, perspective projection, and
//! normalization of pixel coordinates to [-1, 1].

use serde::{Deserialize, Serialize};

use super::{DataError, PoseSequence2D, PoseSequence3D};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    /// World-to-camera translation (mm): `p_cam = R p_world + t`.
    pub translation: [f64; 3],
    pub image_width: f64,
    pub image_height: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        // Forward-facing camera four meters from the scene origin, principal
        // point at the image center (which keeps horizontal flips consistent
        // between image and camera space).
        CameraModel {
            fx: 1145.0,
            fy: 1145.0,
            cx: 500.0,
            cy: 500.0,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0, 0.0, 4000.0],
            image_width: 1000.0,
            image_height: 1000.0,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(DataError::Validation("focal lengths must be positive".into()));
        }
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return Err(DataError::Validation("image size must be positive".into()));
        }
        Ok(())
    }

    pub fn to_camera_point(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    /// `u = fx·x/z + cx`, `v = fy·y/z + cy`; fails when `z_cam <= 0`.
    pub fn project_point(&self, p_world: [f64; 3]) -> Result<[f64; 2], DataError> {
        let c = self.to_camera_point(p_world);
        if c[2] <= 0.0 {
            return Err(DataError::BehindCamera { z: c[2] });
        }
        Ok([self.fx * c[0] / c[2] + self.cx, self.fy * c[1] / c[2] + self.cy])
    }

    /// Inverse of [`Self::project_point`] given the true camera depth.
    pub fn back_project_point(&self, u: f64, v: f64, z_cam: f64) -> [f64; 3] {
        let c = [(u - self.cx) * z_cam / self.fx, (v - self.cy) * z_cam / self.fy, z_cam];
        let r = &self.rotation;
        let d = [
            c[0] - self.translation[0],
            c[1] - self.translation[1],
            c[2] - self.translation[2],
        ];
        // Rotation inverse is the transpose.
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }

    /// Project a world-space 3D sequence to pixel coordinates.
    pub fn project(&self, seq: &PoseSequence3D) -> Result<PoseSequence2D, DataError> {
        self.validate()?;
        if seq.dims() != 3 {
            return Err(DataError::Validation("projection needs a 3D sequence".into()));
        }
        let mut data = Vec::with_capacity(seq.frames() * seq.joints() * 2);
        for f in 0..seq.frames() {
            for j in 0..seq.joints() {
                let p = seq.joint(f, j);
                let uv = self.project_point([p[0], p[1], p[2]])?;
                data.extend_from_slice(&uv);
            }
        }
        PoseSequence2D::new(
            seq.skeleton.clone(),
            seq.fps,
            2,
            seq.frames(),
            data,
            format!("{} projected(px)", seq.provenance),
        )
    }

    /// Rewrite a world-space 3D sequence in camera coordinates.
    pub fn to_camera_frame(&self, seq: &PoseSequence3D) -> Result<PoseSequence3D, DataError> {
        if seq.dims() != 3 {
            return Err(DataError::Validation("camera transform needs a 3D sequence".into()));
        }
        let mut data = Vec::with_capacity(seq.data().len());
        for f in 0..seq.frames() {
            for j in 0..seq.joints() {
                let p = seq.joint(f, j);
                data.extend_from_slice(&self.to_camera_point([p[0], p[1], p[2]]));
            }
        }
        PoseSequence3D::new(
            seq.skeleton.clone(),
            seq.fps,
            3,
            seq.frames(),
            data,
            format!("{} camera_frame", seq.provenance),
        )
    }

    /// Map pixel coordinates to [-1, 1] about the image center, dividing both
    /// axes by half the width so the aspect ratio is preserved.
    pub fn normalize(&self, seq: &PoseSequence2D) -> Result<PoseSequence2D, DataError> {
        self.validate()?;
        if seq.dims() != 2 {
            return Err(DataError::Validation("normalization needs a 2D sequence".into()));
        }
        let half_w = self.image_width / 2.0;
        let half_h = self.image_height / 2.0;
        let mut data = Vec::with_capacity(seq.data().len());
        for f in 0..seq.frames() {
            for j in 0..seq.joints() {
                let p = seq.joint(f, j);
                data.push((p[0] - half_w) / half_w);
                data.push((p[1] - half_h) / half_w);
            }
        }
        PoseSequence2D::new(
            seq.skeleton.clone(),
            seq.fps,
            2,
            seq.frames(),
            data,
            format!(
                "{} normalized(image={}x{})",
                seq.provenance, self.image_width, self.image_height
            ),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Skeleton;

    fn single_point_seq(p: [f64; 3]) -> PoseSequence3D {
        let mut s = Skeleton::stick2();
        s.bone_lengths_mm = vec![0.0, 1.0];
        let data = vec![p[0], p[1], p[2], p[0], p[1], p[2] + 1.0];
        PoseSequence3D::new(s, 50.0, 3, 1, data, "test").unwrap()
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let cam = CameraModel::default();
        let uv = cam.project_point([0.0, 0.0, 0.0]).unwrap();
        assert_eq!(uv, [cam.cx, cam.cy]);
    }

    #[test]
    fn doubling_depth_halves_offset() {
        let cam = CameraModel::default();
        let near = cam.project_point([100.0, -50.0, -2000.0]).unwrap(); // z_cam = 2000
        let far = cam.project_point([100.0, -50.0, 0.0]).unwrap(); // z_cam = 4000
        assert!(((near[0] - cam.cx) - 2.0 * (far[0] - cam.cx)).abs() < 1e-9);
        assert!(((near[1] - cam.cy) - 2.0 * (far[1] - cam.cy)).abs() < 1e-9);
    }

    #[test]
    fn projection_matches_scalar_oracle() {
        let cam = CameraModel {
            rotation: [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [10.0, -20.0, 3000.0],
            ..CameraModel::default()
        };
        let p = [123.4, -56.7, 89.0];
        let uv = cam.project_point(p).unwrap();
        // Oracle: transform then divide, written out by hand.
        let xc = p[1] + 10.0;
        let yc = -p[0] - 20.0;
        let zc = p[2] + 3000.0;
        assert!((uv[0] - (cam.fx * xc / zc + cam.cx)).abs() < 1e-12);
        assert!((uv[1] - (cam.fy * yc / zc + cam.cy)).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let cam = CameraModel::default();
        assert!(matches!(
            cam.project_point([0.0, 0.0, -4000.0]),
            Err(DataError::BehindCamera { .. })
        ));
    }

    #[test]
    fn back_projection_recovers_world_point() {
        let cam = CameraModel {
            rotation: [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]],
            translation: [5.0, 7.0, 3500.0],
            ..CameraModel::default()
        };
        let p = [211.0, -330.5, 48.25];
        let z_cam = cam.to_camera_point(p)[2];
        let uv = cam.project_point(p).unwrap();
        let back = cam.back_project_point(uv[0], uv[1], z_cam);
        for (a, b) in back.iter().zip(&p) {
            assert!((a - b).abs() < 1e-9, "{back:?} vs {p:?}");
        }
    }

    #[test]
    fn normalization_is_centered_and_flip_consistent() {
        let cam = CameraModel::default();
        let seq = single_point_seq([0.0, 0.0, 0.0]);
        let px = cam.project(&seq).unwrap();
        let ndc = cam.normalize(&px).unwrap();
        // The principal-point projection lands at the origin.
        assert!(ndc.joint(0, 0)[0].abs() < 1e-12);
        assert!(ndc.joint(0, 0)[1].abs() < 1e-12);

        // Mirroring the world x axis negates the normalized u coordinate.
        let mirrored = single_point_seq([-150.0, 30.0, 100.0]);
        let orig = single_point_seq([150.0, 30.0, 100.0]);
        let a = cam.normalize(&cam.project(&orig).unwrap()).unwrap();
        let b = cam.normalize(&cam.project(&mirrored).unwrap()).unwrap();
        assert!((a.joint(0, 0)[0] + b.joint(0, 0)[0]).abs() < 1e-12);
        assert!((a.joint(0, 0)[1] - b.joint(0, 0)[1]).abs() < 1e-12);
    }
}
