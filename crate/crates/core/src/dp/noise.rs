//! Seeded Gaussian noise.
//!
//! The stream is ChaCha20 (`rand_chacha::ChaCha20Rng::seed_from_u64`) feeding
//! a Box–Muller transform evaluated with `libm`, so the same seed yields the
//! same bits on every platform:
//!
//! ```text
//! u1 = ((next_u64 >> 11) + 1) · 2⁻⁵³        in (0, 1]
//! u2 =  (next_u64 >> 11)      · 2⁻⁵³        in [0, 1)
//! r  = sqrt(−2 ln u1)
//! z0 = r · cos(2π u2),  z1 = r · sin(2π u2)
//! ```
//!
//! Values are emitted in the order `z0, z1, z0', z1', ...`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

pub struct GaussianNoise {
    rng: ChaCha20Rng,
    spare: Option<f64>,
    seed: Option<u64>,
}

impl GaussianNoise {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
            spare: None,
            seed: Some(seed),
        }
    }

    /// Seeds from OS entropy. The resulting stream cannot be replayed.
    pub fn from_entropy() -> Self {
        Self {
            rng: ChaCha20Rng::from_os_rng(),
            spare: None,
            seed: None,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn standard(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * TWO_POW_NEG_53;
        let u2 = (self.rng.next_u64() >> 11) as f64 * TWO_POW_NEG_53;
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }

    pub fn gaussian(&mut self, sigma: f64) -> f64 {
        sigma * self.standard()
    }

    pub fn fill(&mut self, sigma: f64, out: &mut [f64]) {
        for v in out {
            *v = self.gaussian(sigma);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseVector {
    pub values: Vec<f64>,
    pub sigma: f64,
    pub seed_tag: u64,
}

pub fn sample_noise(sigma: f64, dim: usize, seed: u64) -> Result<NoiseVector> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if dim == 0 {
        return Err(Error::invalid("noise dimension must be positive"));
    }
    let mut noise = GaussianNoise::from_seed(seed);
    let mut values = vec![0.0; dim];
    noise.fill(sigma, &mut values);
    Ok(NoiseVector {
        values,
        sigma,
        seed_tag: seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn law_of_large_numbers() {
        let n = 1_000_000;
        let v = sample_noise(1.0, n, 17).unwrap().values;
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.01, "std {}", var.sqrt());
    }

    #[test]
    fn deterministic_for_seed() {
        let a = sample_noise(6.0, 2, 42).unwrap();
        let b = sample_noise(6.0, 2, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_noise(6.0, 2, 43).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn vanishing_sigma() {
        let v = sample_noise(1e-12, 2, 5).unwrap();
        assert!(v.values.iter().all(|x| x.abs() <= 1e-10));
    }

    #[test]
    fn golden_prefix() {
        // Pinned so that a change to the generator or transform is caught.
        let v = sample_noise(1.0, 4, 0).unwrap().values;
        let bits: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
        assert_eq!(
            bits,
            [0x4005aa84200ef837, 0xbfd3aae33a581d60, 0x3fcb80b786f0533a, 0x3fe01e1bd8179511]
        );
    }

    #[test]
    fn rejects_bad_sigma() {
        assert!(sample_noise(0.0, 3, 1).is_err());
        assert!(sample_noise(-1.0, 3, 1).is_err());
        assert!(sample_noise(1.0, 0, 1).is_err());
    }
}
