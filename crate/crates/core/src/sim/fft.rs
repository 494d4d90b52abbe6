//! Unitary 2-D DFT: iterative radix-2 for power-of-two lengths, direct DFT otherwise.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

fn fft_pow2(buf: &mut [Complex64], dir: Direction) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if dir == Direction::Forward { -1.0 } else { 1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        let half = len / 2;
        let twiddles: Vec<Complex64> = (0..half).map(|k| Complex64::from_polar(1.0, ang * k as f64)).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn dft_direct(buf: &mut [Complex64], dir: Direction) {
    let n = buf.len();
    let sign = if dir == Direction::Forward { -1.0 } else { 1.0 };
    let twiddles: Vec<Complex64> = (0..n)
        .map(|i| Complex64::from_polar(1.0, sign * 2.0 * PI * i as f64 / n as f64))
        .collect();
    let input = buf.to_vec();
    for (k, out) in buf.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, &v) in input.iter().enumerate() {
            acc += v * twiddles[(k * j) % n];
        }
        *out = acc;
    }
}

/// Unnormalized 1-D transform in place.
pub fn fft1d(buf: &mut [Complex64], dir: Direction) {
    match buf.len() {
        0 | 1 => {}
        n if n.is_power_of_two() => fft_pow2(buf, dir),
        _ => dft_direct(buf, dir),
    }
}

/// Unitary 2-D transform of a row-major `h x w` array (scaled by `1/sqrt(h*w)`).
pub fn fft2(data: &mut [Complex64], h: usize, w: usize, dir: Direction) -> Result<()> {
    if data.len() != h * w {
        return Err(Error::Shape {
            context: "fft2",
            expected: vec![h, w],
            actual: vec![data.len()],
        });
    }
    for row in data.chunks_exact_mut(w) {
        fft1d(row, dir);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = data[y * w + x];
        }
        fft1d(&mut col, dir);
        for y in 0..h {
            data[y * w + x] = col[y];
        }
    }
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for v in data.iter_mut() {
        *v *= scale;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn radix2_matches_direct_dft() {
        let x = random(32, 1);
        let mut a = x.clone();
        let mut b = x;
        fft_pow2(&mut a, Direction::Forward);
        dft_direct(&mut b, Direction::Forward);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).norm() < 1e-10);
        }
    }

    #[test]
    fn round_trip_is_identity_for_both_paths() {
        for (h, w) in [(16, 32), (12, 10), (7, 8)] {
            let x = random(h * w, (h * w) as u64);
            let mut y = x.clone();
            fft2(&mut y, h, w, Direction::Forward).unwrap();
            fft2(&mut y, h, w, Direction::Inverse).unwrap();
            let err = x.iter().zip(&y).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "{h}x{w}: {err}");
        }
    }

    #[test]
    fn transform_preserves_energy() {
        let x = random(64 * 64, 3);
        let mut y = x.clone();
        fft2(&mut y, 64, 64, Direction::Forward).unwrap();
        let ex: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let ey: f64 = y.iter().map(|v| v.norm_sqr()).sum();
        assert!((ex - ey).abs() < 1e-9 * ex);
    }

    #[test]
    fn dc_term_of_constant_image() {
        let mut y = vec![Complex64::new(2.0, 0.0); 4 * 8];
        fft2(&mut y, 4, 8, Direction::Forward).unwrap();
        assert!((y[0].re - 2.0 * (32f64).sqrt()).abs() < 1e-12);
        assert!(y[1..].iter().all(|v| v.norm() < 1e-12));
    }
}
