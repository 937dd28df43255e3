//! Synthetic motion generation: sinusoid-driven joint rotations pushed
//! through forward kinematics, so bone lengths are preserved exactly.

use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::{gauss, seeded, seeded_stream};

use super::{DataError, PoseSequence2D, PoseSequence3D, Skeleton};

#[derive(Clone, Debug)]
pub struct MotionParams {
    /// Peak root translation per axis (mm).
    pub root_amplitude_mm: f64,
    /// Peak joint rotation angle (rad).
    pub joint_amplitude_rad: f64,
    pub min_freq_hz: f64,
    pub max_freq_hz: f64,
    pub fps: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        MotionParams {
            root_amplitude_mm: 150.0,
            joint_amplitude_rad: 0.5,
            min_freq_hz: 0.2,
            max_freq_hz: 1.0,
            fps: 50.0,
        }
    }
}

/// Rest-pose offset direction of each joint from its parent (unit vectors).
/// Known skeletons get anatomical directions; anything else gets
/// deterministic pseudo-random ones.
fn rest_directions(skeleton: &Skeleton) -> Vec<Vector3<f64>> {
    let up = Vector3::new(0.0, -1.0, 0.0); // image y grows downward
    let down = -up;
    let left = Vector3::new(1.0, 0.0, 0.0);
    let right = -left;
    match skeleton.joints() {
        17 => vec![
            Vector3::zeros(),
            right,
            down,
            down,
            left,
            down,
            down,
            up,
            up,
            up,
            up,
            left,
            (left + down).normalize(),
            down,
            right,
            (right + down).normalize(),
            down,
        ],
        5 => vec![Vector3::zeros(), up, up, left, right],
        2 => vec![Vector3::zeros(), up],
        _ => {
            let mut rng = seeded(0xD1F5);
            (0..skeleton.joints())
                .map(|_| {
                    Vector3::new(gauss(&mut rng), gauss(&mut rng), gauss(&mut rng)).normalize()
                })
                .collect()
        }
    }
}

struct JointOscillator {
    axis: Unit<Vector3<f64>>,
    amplitude: f64,
    freq_hz: f64,
    phase: f64,
}

impl JointOscillator {
    fn sample(rng: &mut ChaCha8Rng, motion: &MotionParams) -> Self {
        let axis = Unit::new_normalize(Vector3::new(
            gauss(rng),
            gauss(rng),
            gauss(rng),
        ));
        JointOscillator {
            axis,
            amplitude: motion.joint_amplitude_rad * rng.gen_range(0.3..1.0),
            freq_hz: rng.gen_range(motion.min_freq_hz..motion.max_freq_hz),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
        }
    }

    fn rotation(&self, t_sec: f64) -> Rotation3<f64> {
        let angle =
            self.amplitude * (std::f64::consts::TAU * self.freq_hz * t_sec + self.phase).sin();
        Rotation3::from_axis_angle(&self.axis, angle)
    }
}

/// Generate a 3D pose sequence in world coordinates (mm), deterministic in
/// the seed. Every frame satisfies the skeleton's canonical bone lengths
/// exactly (up to floating-point rounding).
pub fn synth_generate(
    skeleton: &Skeleton,
    frames: usize,
    seed: u64,
    motion: &MotionParams,
) -> Result<PoseSequence3D, DataError> {
    skeleton.validate()?;
    if frames == 0 {
        return Err(DataError::Validation("frames must be >= 1".into()));
    }
    let j = skeleton.joints();
    let dirs = rest_directions(skeleton);
    let mut rng = seeded_stream(seed, 1);
    let oscillators: Vec<JointOscillator> =
        (0..j).map(|_| JointOscillator::sample(&mut rng, motion)).collect();
    // Per-axis root trajectory oscillators.
    let root_osc: Vec<(f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(motion.min_freq_hz..motion.max_freq_hz),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();

    let order = skeleton.topological_order();
    let root = skeleton.root();
    let mut data = Vec::with_capacity(frames * j * 3);
    let mut positions = vec![Vector3::zeros(); j];
    let mut rotations = vec![Rotation3::identity(); j];
    for f in 0..frames {
        let t = f as f64 / motion.fps;
        for &jt in &order {
            let local = if motion.joint_amplitude_rad == 0.0 {
                Rotation3::identity()
            } else {
                oscillators[jt].rotation(t)
            };
            if jt == root {
                rotations[jt] = local;
                positions[jt] = Vector3::from_iterator((0..3).map(|a| {
                    let (freq, phase) = root_osc[a];
                    motion.root_amplitude_mm * (std::f64::consts::TAU * freq * t + phase).sin()
                }));
            } else {
                let p = skeleton.parents[jt];
                rotations[jt] = rotations[p] * local;
                positions[jt] =
                    positions[p] + rotations[jt] * (dirs[jt] * skeleton.bone_lengths_mm[jt]);
            }
        }
        for jt in 0..j {
            data.extend_from_slice(positions[jt].as_slice());
        }
    }
    PoseSequence3D::new(
        skeleton.clone(),
        motion.fps,
        3,
        frames,
        data,
        format!("synthetic(seed={seed})"),
    )
}

/// Additive i.i.d. Gaussian noise on every coordinate, deterministic in the
/// seed. `sigma` is in the sequence's own units.
pub fn add_noise(seq: &PoseSequence2D, sigma: f64, seed: u64) -> Result<PoseSequence2D, DataError> {
    if sigma < 0.0 {
        return Err(DataError::Validation("sigma must be non-negative".into()));
    }
    if sigma == 0.0 {
        return Ok(seq.clone());
    }
    let mut rng = seeded_stream(seed, 2);
    let data = seq.data().iter().map(|&v| v + sigma * gauss(&mut rng)).collect();
    PoseSequence2D::new(
        seq.skeleton.clone(),
        seq.fps,
        seq.dims(),
        seq.frames(),
        data,
        format!("{} noise(sigma={sigma},seed={seed})", seq.provenance),
    )
}
