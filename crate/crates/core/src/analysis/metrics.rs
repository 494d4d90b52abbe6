//! Full-reference image quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn mse(x: &Tensor<f64>, reference: &Tensor<f64>) -> Result<f64> {
    x.ensure_same_shape(reference, "image metric")?;
    if x.is_empty() {
        return Err(Error::invalid("empty image"));
    }
    Ok(x.data().iter().zip(reference.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64)
}

/// `10 log10(max(ref)^2 / mse)`; `+inf` when the images are identical.
pub fn psnr(x: &Tensor<f64>, reference: &Tensor<f64>) -> Result<f64> {
    let m = mse(x, reference)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = reference.max();
    if !(peak > 0.0) {
        return Err(Error::Degenerate("reference maximum is not positive".into()));
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// `sum (x - ref)^2 / sum ref^2` as a fraction.
pub fn nmse(x: &Tensor<f64>, reference: &Tensor<f64>) -> Result<f64> {
    x.ensure_same_shape(reference, "nmse")?;
    let den: f64 = reference.data().iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::Degenerate("reference is all zero".into()));
    }
    let num: f64 = x.data().iter().zip(reference.data()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    /// Odd window side length.
    pub window: usize,
    pub sigma: f64,
    /// `None` uses `max(ref) - min(ref)`.
    pub dynamic_range: Option<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            k1: 0.01,
            k2: 0.03,
            window: 11,
            sigma: 1.5,
            dynamic_range: None,
        }
    }
}

/// Normalized 2-D Gaussian weights, row-major `window x window`.
pub fn gaussian_window(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window / 2) as f64;
    let mut w: Vec<f64> = (0..window * window)
        .map(|i| {
            let (y, x) = ((i / window) as f64 - c, (i % window) as f64 - c);
            (-(y * y + x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mean SSIM over all fully contained windows.
pub fn ssim_with(x: &Tensor<f64>, reference: &Tensor<f64>, params: &SsimParams) -> Result<f64> {
    x.ensure_same_shape(reference, "ssim")?;
    let (h, w) = x.dims2()?;
    let win = params.window;
    if win % 2 == 0 || win == 0 || !(params.sigma > 0.0) {
        return Err(Error::invalid("SSIM window must be odd with positive sigma"));
    }
    if h < win || w < win {
        return Err(Error::invalid(format!("image {h}x{w} is smaller than the {win}x{win} SSIM window")));
    }
    let l = params.dynamic_range.unwrap_or(reference.max() - reference.min());
    if !(l > 0.0) {
        return Err(Error::Degenerate("SSIM dynamic range is zero".into()));
    }
    let c1 = (params.k1 * l).powi(2);
    let c2 = (params.k2 * l).powi(2);
    let g = gaussian_window(win, params.sigma);
    let (xd, rd) = (x.data(), reference.data());
    let mut total = 0.0;
    for y0 in 0..=h - win {
        for x0 in 0..=w - win {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..win {
                let row = (y0 + dy) * w + x0;
                for dx in 0..win {
                    let k = g[dy * win + dx];
                    let (a, b) = (xd[row + dx], rd[row + dx]);
                    mx += k * a;
                    my += k * b;
                    sxx += k * a * a;
                    syy += k * b * b;
                    sxy += k * a * b;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / ((h - win + 1) * (w - win + 1)) as f64)
}

pub fn ssim(x: &Tensor<f64>, reference: &Tensor<f64>) -> Result<f64> {
    ssim_with(x, reference, &SsimParams::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub nmse: f64,
}

pub fn metric_report(x: &Tensor<f64>, reference: &Tensor<f64>, params: &SsimParams) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr_db: psnr(x, reference)?,
        ssim: ssim_with(x, reference, params)?,
        nmse: nmse(x, reference)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(&[h, w], |i| ((i * 7919) % 101) as f64 / 100.0)
    }

    #[test]
    fn psnr_examples() {
        let r = Tensor::from_vec(&[1, 4], vec![1.0, 0.0, 0.5, 0.5]).unwrap();
        let x = r.map(|v| v + 0.1);
        assert!((psnr(&x, &r).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&r, &r).unwrap(), f64::INFINITY);
        let half = r.map(|v| v + 0.05);
        let gain = psnr(&half, &r).unwrap() - psnr(&x, &r).unwrap();
        assert!((gain - 20.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn nmse_examples() {
        let r = ramp(8, 8);
        assert_eq!(nmse(&r, &r).unwrap(), 0.0);
        assert!((nmse(&r.map(|v| 2.0 * v), &r).unwrap() - 1.0).abs() < 1e-12);
        assert!((nmse(&Tensor::zeros(&[8, 8]), &r).unwrap() - 1.0).abs() < 1e-12);
        assert!(nmse(&r, &Tensor::zeros(&[8, 8])).is_err());
    }

    #[test]
    fn ssim_identity_and_errors() {
        let r = ramp(16, 20);
        assert_eq!(ssim(&r, &r).unwrap(), 1.0);
        assert!(ssim(&ramp(8, 20), &ramp(8, 20)).is_err());
        assert!(ssim(&Tensor::filled(&[12, 12], 1.0), &Tensor::filled(&[12, 12], 1.0)).is_err());
        let g = gaussian_window(11, 1.5);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert_eq!(g[5 * 11 + 5], g.iter().copied().fold(0.0, f64::max));
    }
}
