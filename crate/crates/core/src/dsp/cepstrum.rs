//! Orthonormal DCT-II over the mel axis.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_traits::Float;

use crate::error::{invalid, shape_err, Result};
use crate::tensor::{Real, Tensor};

fn dct_basis(n: usize, k: usize, i: usize) -> f64 {
    let scale = if k == 0 {
        Float::sqrt(1.0 / n as f64)
    } else {
        Float::sqrt(2.0 / n as f64)
    };
    scale * Float::cos(PI * (i as f64 + 0.5) * k as f64 / n as f64)
}

/// Orthonormal DCT-II of `x`, first `n_coeffs` coefficients.
pub fn dct2_ortho(x: &[f64], n_coeffs: usize) -> Vec<f64> {
    let n = x.len();
    (0..n_coeffs.min(n))
        .map(|k| x.iter().enumerate().map(|(i, &v)| v * dct_basis(n, k, i)).sum())
        .collect()
}

/// Inverse of [`dct2_ortho`] at full order.
pub fn idct2_ortho(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    (0..n)
        .map(|i| c.iter().enumerate().map(|(k, &v)| v * dct_basis(n, k, i)).sum())
        .collect()
}

/// Mel cepstra of a `[n_mels, frames]` log-mel matrix, as `[n_coeffs, frames]`.
pub fn mel_cepstra<T: Real>(logmel: &Tensor<T>, n_coeffs: usize) -> Result<Tensor<T>> {
    let s = logmel.shape();
    if s.len() != 2 {
        return Err(shape_err("mel_cepstra", format!("expected [n_mels, frames], got {s:?}")));
    }
    let (n_mels, frames) = (s[0], s[1]);
    if n_coeffs == 0 || n_coeffs > n_mels {
        return Err(invalid("mel_cepstra", format!("n_coeffs {n_coeffs} must be in 1..={n_mels}")));
    }
    let basis: Vec<f64> = (0..n_coeffs)
        .flat_map(|k| (0..n_mels).map(move |i| dct_basis(n_mels, k, i)))
        .collect();
    let mut out = alloc::vec![T::zero(); n_coeffs * frames];
    let mut column = alloc::vec![0.0; n_mels];
    for f in 0..frames {
        for (m, c) in column.iter_mut().enumerate() {
            *c = logmel.data()[m * frames + f].f64();
        }
        for k in 0..n_coeffs {
            let b = &basis[k * n_mels..(k + 1) * n_mels];
            out[k * frames + f] = T::of(b.iter().zip(&column).map(|(p, q)| p * q).sum());
        }
    }
    Tensor::new(&[n_coeffs, frames], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_column_has_only_c0() {
        let logmel = Tensor::<f64>::full(&[80, 3], -2.5);
        let c = mel_cepstra(&logmel, 13).unwrap();
        for f in 0..3 {
            assert!((c.data()[f] - (-2.5 * 80f64.sqrt())).abs() < 1e-9);
            for k in 1..13 {
                assert!(c.data()[k * 3 + f].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn full_order_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..80).map(|_| rng.random_range(-10.0..2.0)).collect();
        let back = idct2_ortho(&dct2_ortho(&x, 80));
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_direct_cosine_sum() {
        // Oracle: textbook DCT-II sum with explicit orthonormal scaling.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 80;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..2.0)).collect();
        let logmel = Tensor::<f64>::from_f64(&[n, 1], &x).unwrap();
        let c = mel_cepstra(&logmel, n).unwrap();
        for k in 0..n {
            let mut s = 0.0;
            for (i, &v) in x.iter().enumerate() {
                s += v * (PI / n as f64 * (i as f64 + 0.5) * k as f64).cos();
            }
            s *= if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            assert!((c.data()[k] - s).abs() < 1e-9, "k={k}");
        }
    }

    #[test]
    fn rejects_too_many_coefficients() {
        assert!(mel_cepstra(&Tensor::<f64>::zeros(&[4, 2]), 5).is_err());
    }
}
