//! Seeded sampling helpers shared by weight init, synthetic data, and noise.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for (seed, stream) pairs, so e.g. every epoch or every
/// joint draws from its own deterministic sequence.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal sample via Box-Muller.
pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Normal sample rejected outside two standard deviations.
pub fn trunc_gauss(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        let z = gauss(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = seeded(42);
        let mut b = seeded(42);
        for _ in 0..100 {
            assert_eq!(gauss(&mut a), gauss(&mut b));
        }
    }

    #[test]
    fn gauss_moments_are_plausible() {
        let mut rng = seeded(7);
        let n = 100_000;
        let samples: Vec<f64> = (0..n).map(|_| gauss(&mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn trunc_gauss_respects_bound() {
        let mut rng = seeded(9);
        for _ in 0..10_000 {
            assert!(trunc_gauss(&mut rng, 0.02).abs() <= 0.04);
        }
    }
}
