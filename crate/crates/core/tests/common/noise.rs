//! Monte Carlo noise statistics of the acquisition and reconstruction chain.

use dwi_denoise::recon::{average_kspace, reconstruct_image};
use dwi_denoise::sim::fft::{fft2, Direction};
use dwi_denoise::sim::*;
use statrs::function::gamma::ln_gamma;

pub const SIGMA: f64 = 0.3;

fn empty_acquisition(n: usize, coils: usize, avgs: usize, seed: u64) -> RawAcquisition {
    let phantom = generate_phantom(&PhantomSpec { matrix: (n, n), regions: vec![], seed }).unwrap();
    let cfg = AcquisitionConfig {
        n_directions: 1,
        n_coils: coils,
        n_avg_high: avgs,
        n_avg_low: 1,
        noise_sigma: SIGMA,
        seed,
        ..Default::default()
    };
    simulate_acquisition(&phantom, &cfg).unwrap()
}

fn std_of_components(k: &[num_complex::Complex64]) -> f64 {
    let n = 2 * k.len();
    let mean = k.iter().map(|v| v.re + v.im).sum::<f64>() / n as f64;
    (k.iter().map(|v| (v.re - mean).powi(2) + (v.im - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Image-domain noise std of one average divided by that of the mean of four
/// (1024x1024 complex samples, i.e. about 2e6 real components).
pub fn averaging_ratio() -> f64 {
    let n = 1024;
    let acq = empty_acquisition(n, 1, 4, 11);
    let image = |avgs: &[usize]| {
        let mut k = average_kspace(&acq, BValue::High, 0, 0, avgs).unwrap();
        fft2(&mut k, n, n, Direction::Inverse).unwrap();
        std_of_components(&k)
    };
    image(&[0]) / image(&[0, 1, 2, 3])
}

fn central_chi_mean(dof: f64) -> f64 {
    SIGMA * 2f64.sqrt() * (ln_gamma((dof + 1.0) / 2.0) - ln_gamma(dof / 2.0)).exp()
}

/// Empirical mean of the zero-signal magnitude image over its analytic
/// central-chi mean, for `coils` sum-of-squares combined coils.
pub fn magnitude_bias_ratio(coils: usize) -> f64 {
    let n = 1024 / coils.next_power_of_two().min(4);
    let acq = empty_acquisition(n, coils, 2, 5 + coils as u64);
    let img = reconstruct_image(&acq, BValue::High, &[0]).unwrap();
    let mean = img.data().iter().sum::<f64>() / img.len() as f64;
    mean / central_chi_mean(2.0 * coils as f64)
}
