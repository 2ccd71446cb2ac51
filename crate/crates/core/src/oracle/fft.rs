//! Iterative radix-2 FFT.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// In-place forward transform `X_k = Σ_j x_j e^{-2πi jk/n}`. The length must
/// be a power of two.
pub fn fft_in_place(data: &mut [Complex64]) -> Result<()> {
    let n = data.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Config(format!("FFT length {n} is not a power of two")));
    }
    let bits = n.trailing_zeros();
    if bits == 0 {
        return Ok(());
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            data.swap(i, j);
        }
    }
    // twiddles for the largest stage; stage of length `len` uses every
    // (n/len)-th one
    let twiddles: Vec<Complex64> = (0..n / 2)
        .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
        .collect();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for block in data.chunks_exact_mut(len) {
            let (lo, hi) = block.split_at_mut(half);
            for (k, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                let t = *b * twiddles[k * stride];
                *b = *a - t;
                *a += t;
            }
        }
        len *= 2;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, v)| v * Complex64::from_polar(1.0, -2.0 * PI * ((j * k) % n) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_direct_dft() {
        for bits in [0u32, 1, 2, 3, 6, 10] {
            let n = 1usize << bits;
            let x: Vec<Complex64> = (0..n)
                .map(|j| Complex64::new((0.37 * j as f64).sin(), (1.3 * j as f64).cos() - 0.2))
                .collect();
            let mut y = x.clone();
            fft_in_place(&mut y).unwrap();
            let d = dft(&x);
            let scale = d.iter().map(|v| v.norm()).fold(1.0, f64::max);
            for (a, b) in y.iter().zip(&d) {
                assert!((a - b).norm() < 1e-12 * scale, "n={n}");
            }
        }
    }

    #[test]
    fn impulse_and_constant() {
        let n = 64;
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        x[0] = Complex64::new(1.0, 0.0);
        fft_in_place(&mut x).unwrap();
        assert!(x.iter().all(|v| (v - 1.0).norm() < 1e-15));
        let mut c = vec![Complex64::new(1.0, 0.0); n];
        fft_in_place(&mut c).unwrap();
        assert!((c[0] - n as f64).norm() < 1e-12);
        assert!(c[1..].iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn rejects_non_power_of_two() {
        let mut x = vec![Complex64::new(0.0, 0.0); 12];
        assert!(fft_in_place(&mut x).is_err());
        assert!(fft_in_place(&mut []).is_err());
    }
}
