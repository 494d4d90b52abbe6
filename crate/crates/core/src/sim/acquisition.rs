//! Multi-coil, multi-average DWI acquisition with complex Gaussian k-space noise.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::fft::{fft2, Direction};
use super::phantom::PhantomCase;
use crate::error::{Error, Result};
use crate::seeds::split_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BValue {
    Low,
    High,
}

impl BValue {
    pub fn index(self) -> usize {
        match self {
            BValue::Low => 0,
            BValue::High => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    /// s/mm^2
    pub b_low: f64,
    /// s/mm^2
    pub b_high: f64,
    pub tr_ms: f64,
    pub n_directions: usize,
    pub n_avg_low: usize,
    pub n_avg_high: usize,
    pub n_coils: usize,
    /// Std of each real/imaginary component per coil per average.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            b_low: 50.0,
            b_high: 1000.0,
            tr_ms: 7833.0,
            n_directions: 3,
            n_avg_low: 4,
            n_avg_high: 16,
            n_coils: 4,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            seed: 0,
        }
    }
}

/// Noise level produced by [`crate::recon::calibrate_noise_sigma`] for the
/// default 128x128 phantom and acquisition (reference apparent SNR 25).
pub const DEFAULT_NOISE_SIGMA: f64 = 0.1846;

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.b_low && self.b_low < self.b_high) {
            return Err(Error::invalid(format!(
                "need 0 <= b_low < b_high, got {} and {}",
                self.b_low, self.b_high
            )));
        }
        if self.n_avg_high < 2 {
            return Err(Error::invalid("at least two high-b averages are required"));
        }
        if self.n_avg_low < 1 || self.n_coils < 1 || self.n_directions < 1 {
            return Err(Error::invalid("averages, coils and directions must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma must be non-negative"));
        }
        Ok(())
    }

    pub fn b_value(&self, b: BValue) -> f64 {
        match b {
            BValue::Low => self.b_low,
            BValue::High => self.b_high,
        }
    }

    pub fn averages(&self, b: BValue) -> usize {
        match b {
            BValue::Low => self.n_avg_low,
            BValue::High => self.n_avg_high,
        }
    }
}

/// Complex k-space frames indexed `[b][direction][coil][average]`, each `H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAcquisition {
    pub config: AcquisitionConfig,
    pub matrix: (usize, usize),
    /// One flat buffer per b-value, frames laid out direction-major.
    pub kspace: [Vec<Complex64>; 2],
}

impl RawAcquisition {
    fn frame_index(&self, b: BValue, direction: usize, coil: usize, average: usize) -> Result<usize> {
        let c = &self.config;
        let n_avg = c.averages(b);
        if direction >= c.n_directions || coil >= c.n_coils || average >= n_avg {
            return Err(Error::invalid(format!(
                "frame index ({direction}, {coil}, {average}) out of range"
            )));
        }
        Ok((direction * c.n_coils + coil) * n_avg + average)
    }

    pub fn frame(&self, b: BValue, direction: usize, coil: usize, average: usize) -> Result<&[Complex64]> {
        let hw = self.matrix.0 * self.matrix.1;
        let f = self.frame_index(b, direction, coil, average)?;
        Ok(&self.kspace[b.index()][f * hw..(f + 1) * hw])
    }

    pub fn frames_per_b(&self, b: BValue) -> usize {
        self.config.n_directions * self.config.n_coils * self.config.averages(b)
    }
}

/// Mono-exponential decay `s0 * exp(-b * adc / 1000)` with ADC in 1e-3 mm^2/s.
pub fn signal_model(s0: f64, adc: f64, b: f64) -> f64 {
    s0 * (-b * adc / 1000.0).exp()
}

/// Noiseless DW image at b-value `b`.
pub fn noiseless_image(phantom: &PhantomCase, b: f64) -> Tensor<f64> {
    Tensor::from_fn(phantom.s0_map.shape(), |i| {
        signal_model(phantom.s0_map.data()[i], phantom.adc_truth.data()[i], b)
    })
}

/// Simulate every (b, direction, coil, average) frame.
///
/// Coil sensitivities are uniform and the phantom is isotropic, so all
/// frames of one b-value share the same noiseless k-space; each frame gets
/// independent complex Gaussian noise from its own seed stream.
pub fn simulate_acquisition(phantom: &PhantomCase, config: &AcquisitionConfig) -> Result<RawAcquisition> {
    config.validate()?;
    let (h, w) = phantom.shape();
    let hw = h * w;
    let mut kspace: [Vec<Complex64>; 2] = [Vec::new(), Vec::new()];
    for b in [BValue::Low, BValue::High] {
        let img = noiseless_image(phantom, config.b_value(b));
        let mut clean: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft2(&mut clean, h, w, Direction::Forward)?;
        let n_frames = config.n_directions * config.n_coils * config.averages(b);
        let mut buf = Vec::with_capacity(n_frames * hw);
        let b_stream = split_seed(config.seed, b.index() as u64);
        for f in 0..n_frames {
            if config.noise_sigma == 0.0 {
                buf.extend_from_slice(&clean);
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed(b_stream, f as u64));
            let sigma = config.noise_sigma;
            buf.extend(clean.iter().map(|&v| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                v + Complex64::new(sigma * re, sigma * im)
            }));
        }
        kspace[b.index()] = buf;
    }
    Ok(RawAcquisition {
        config: *config,
        matrix: (h, w),
        kspace,
    })
}

/// Acquisition time in whole seconds: `round(TR * directions * averages / 1000)`.
pub fn scan_time_s(tr_ms: f64, n_directions: usize, n_averages: usize) -> u64 {
    (tr_ms * n_directions as f64 * n_averages as f64 / 1000.0).round() as u64
}

/// Mean over `signal_mask` divided by the sample (n-1) standard deviation
/// over `noise_mask`.
pub fn apparent_snr(image: &Tensor<f64>, signal_mask: &[bool], noise_mask: &[bool]) -> Result<f64> {
    if signal_mask.len() != image.len() || noise_mask.len() != image.len() {
        return Err(Error::invalid("mask length differs from image size"));
    }
    if signal_mask.iter().zip(noise_mask).any(|(&a, &b)| a && b) {
        return Err(Error::invalid("signal and noise masks overlap"));
    }
    let pick = |mask: &[bool]| -> Vec<f64> {
        image
            .data()
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect()
    };
    let signal = pick(signal_mask);
    let noise = pick(noise_mask);
    if signal.is_empty() || noise.len() < 2 {
        return Err(Error::invalid("signal mask must be non-empty and noise mask needs >= 2 pixels"));
    }
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    let nm = noise.iter().sum::<f64>() / noise.len() as f64;
    let sd = (noise.iter().map(|v| (v - nm).powi(2)).sum::<f64>() / (noise.len() - 1) as f64).sqrt();
    if sd == 0.0 {
        return Err(Error::Degenerate("noise region has zero standard deviation".into()));
    }
    Ok(mean / sd)
}
