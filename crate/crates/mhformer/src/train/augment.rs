//! Horizontal flip augmentation: negate x, swap left/right joints.

use crate::data::Skeleton;
use crate::tensor::Tensor;

use super::TrainError;

/// Flip a pose tensor of shape `[J, D]` or `[N, J, D]` (D = 2 or 3): the
/// x coordinate of every joint is negated, then each left/right pair is
/// swapped. An exact involution.
pub fn hflip(pose: &Tensor, skeleton: &Skeleton) -> Result<Tensor, TrainError> {
    let shape = pose.shape().to_vec();
    let (frames, joints, dims) = match shape.as_slice() {
        [j, d] => (1, *j, *d),
        [n, j, d] => (*n, *j, *d),
        other => {
            return Err(TrainError::Input(format!(
                "hflip expects [J, D] or [N, J, D], got {other:?}"
            )))
        }
    };
    if dims != 2 && dims != 3 {
        return Err(TrainError::Input(format!("hflip needs 2 or 3 coordinates, got {dims}")));
    }
    if joints != skeleton.joints() {
        return Err(TrainError::Input(format!(
            "pose has {joints} joints, skeleton declares {}",
            skeleton.joints()
        )));
    }
    let mut out = pose.clone();
    let data = out.data_mut();
    for f in 0..frames {
        let frame = &mut data[f * joints * dims..(f + 1) * joints * dims];
        for j in 0..joints {
            frame[j * dims] = -frame[j * dims];
        }
        for &(l, r) in &skeleton.pairs {
            for c in 0..dims {
                frame.swap(l * dims + c, r * dims + c);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Skeleton;
    use crate::metrics::mpjpe;
    use crate::rng::{gauss, seeded};
    use crate::tensor::DType;

    fn random_pose(skel: &Skeleton, frames: usize, dims: usize, seed: u64) -> Tensor {
        let mut rng = seeded(seed);
        let data = (0..frames * skel.joints() * dims)
            .map(|_| gauss(&mut rng) * 100.0)
            .collect();
        Tensor::from_vec(data, &[frames, skel.joints(), dims], DType::F64).unwrap()
    }

    #[test]
    fn flip_is_an_exact_involution() {
        let skel = Skeleton::h36m_17();
        let p = random_pose(&skel, 7, 3, 1);
        let back = hflip(&hflip(&p, &skel).unwrap(), &skel).unwrap();
        assert_eq!(back.data(), p.data());
    }

    #[test]
    fn unpaired_midline_joint_maps_to_itself() {
        let skel = Skeleton::toy5();
        let mut p = random_pose(&skel, 1, 3, 2);
        // Put the head (index 2, unpaired) on the midline.
        p.data_mut()[2 * 3] = 0.0;
        let flipped = hflip(&p, &skel).unwrap();
        assert_eq!(&flipped.data()[6..9], &p.data()[6..9]);
    }

    #[test]
    fn flip_is_an_isometry_of_mpjpe() {
        let skel = Skeleton::h36m_17();
        let p = random_pose(&skel, 1, 3, 3).reshaped(&[17, 3]).unwrap();
        let q = random_pose(&skel, 1, 3, 4).reshaped(&[17, 3]).unwrap();
        let fp = hflip(&p, &skel).unwrap();
        let fq = hflip(&q, &skel).unwrap();
        assert_eq!(mpjpe(&fp, &fq).unwrap(), mpjpe(&p, &q).unwrap());
    }

    #[test]
    fn flip_commutes_through_the_metric() {
        // mpjpe(hflip(a), b) == mpjpe(a, hflip(b)) for any poses a, b.
        let skel = Skeleton::h36m_17();
        let a = random_pose(&skel, 1, 3, 5).reshaped(&[17, 3]).unwrap();
        let b = random_pose(&skel, 1, 3, 6).reshaped(&[17, 3]).unwrap();
        let lhs = mpjpe(&hflip(&a, &skel).unwrap(), &b).unwrap();
        let rhs = mpjpe(&a, &hflip(&b, &skel).unwrap()).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn two_dim_windows_flip_too() {
        let skel = Skeleton::stick2();
        let p = random_pose(&skel, 3, 2, 7);
        let f = hflip(&p, &skel).unwrap();
        for (i, (a, b)) in p.data().iter().zip(f.data()).enumerate() {
            if i % 2 == 0 {
                assert_eq!(*b, -*a);
            } else {
                assert_eq!(*b, *a);
            }
        }
    }
}
