//! ADC maps and ROI statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recon::NormalizationRecord;
use crate::tensor::Tensor;

/// Signals at or below this fraction of their image maximum are not fitted.
pub const ADC_VALIDITY_FLOOR: f64 = 1e-6;

/// Two-point ADC estimate in units of 1e-3 mm^2/s.
#[derive(Debug, Clone, PartialEq)]
pub struct AdcMap {
    pub values: Tensor<f64>,
    /// Pixels where both signals exceed the validity floor. Invalid pixels
    /// hold NaN.
    pub valid: Vec<bool>,
}

impl AdcMap {
    /// ROI statistics over `mask` intersected with the validity mask.
    pub fn roi_stats(&self, mask: &[bool]) -> Result<RoiStats> {
        if mask.len() != self.valid.len() {
            return Err(Error::invalid("ROI mask length differs from ADC map size"));
        }
        let m: Vec<bool> = mask.iter().zip(&self.valid).map(|(&a, &b)| a && b).collect();
        roi_stats(&self.values, &m)
    }
}

/// `ln(S_lb / S_hb) / (b_high - b_low) * 1000` on de-normalized signals.
///
/// Negative estimates are kept: they arise where noise lifts the high-b
/// signal above the low-b one.
pub fn adc_map(
    lb: &Tensor<f64>,
    hb: &Tensor<f64>,
    b_low: f64,
    b_high: f64,
    norm: &NormalizationRecord,
) -> Result<AdcMap> {
    if !(b_high > b_low) {
        return Err(Error::invalid(format!("need b_high > b_low, got {b_high} and {b_low}")));
    }
    if !(norm.lb_scale > 0.0 && norm.hb_scale > 0.0) {
        return Err(Error::invalid("normalization scales must be positive"));
    }
    lb.ensure_same_shape(hb, "adc_map")?;
    let s_lb: Vec<f64> = lb.data().iter().map(|v| v * norm.lb_scale).collect();
    let s_hb: Vec<f64> = hb.data().iter().map(|v| v * norm.hb_scale).collect();
    let floor = |s: &[f64]| ADC_VALIDITY_FLOOR * s.iter().copied().fold(0.0, f64::max);
    let (f_lb, f_hb) = (floor(&s_lb), floor(&s_hb));
    let db = b_high - b_low;
    let mut valid = Vec::with_capacity(s_lb.len());
    let values: Vec<f64> = s_lb
        .iter()
        .zip(&s_hb)
        .map(|(&l, &h)| {
            let ok = l > f_lb && h > f_hb;
            valid.push(ok);
            if ok {
                (l / h).ln() / db * 1000.0
            } else {
                f64::NAN
            }
        })
        .collect();
    Ok(AdcMap {
        values: Tensor::from_vec(lb.shape(), values)?,
        valid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiStats {
    pub n_pixels: usize,
    pub mean: f64,
    /// Sample (n-1) standard deviation; 0 for a single pixel.
    pub sd: f64,
    pub median: f64,
    pub iqr: f64,
}

/// Quantile by inclusive linear interpolation on sorted data: position
/// `q * (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<RoiStats> {
    if values.is_empty() {
        return Err(Error::invalid("ROI is empty"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ROI values".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(RoiStats {
        n_pixels: n,
        mean,
        sd,
        median: quantile_sorted(&sorted, 0.5),
        iqr: quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25),
    })
}

pub fn roi_stats(image: &Tensor<f64>, mask: &[bool]) -> Result<RoiStats> {
    if mask.len() != image.len() {
        return Err(Error::invalid("ROI mask length differs from image size"));
    }
    let vals: Vec<f64> = image.data().iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    summarize(&vals)
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT: NormalizationRecord = NormalizationRecord { lb_scale: 1.0, hb_scale: 1.0 };

    #[test]
    fn analytic_inverse() {
        let lb = Tensor::filled(&[2, 2], 1000.0);
        let hb = Tensor::filled(&[2, 2], 1000.0 * (-1.5f64).exp());
        let m = adc_map(&lb, &hb, 0.0, 1000.0, &UNIT).unwrap();
        assert!(m.values.data().iter().all(|v| (v - 1.5).abs() < 1e-12));
        let same = adc_map(&lb, &lb, 50.0, 1000.0, &UNIT).unwrap();
        assert!(same.values.data().iter().all(|&v| v == 0.0));
        assert!(adc_map(&lb, &hb, 1000.0, 1000.0, &UNIT).is_err());
    }

    #[test]
    fn normalization_is_undone() {
        let lb = Tensor::filled(&[1, 3], 1.0);
        let hb = Tensor::filled(&[1, 3], 1.0);
        let norm = NormalizationRecord { lb_scale: 10.0, hb_scale: 10.0 * (-1.0f64).exp() };
        let m = adc_map(&lb, &hb, 0.0, 1000.0, &norm).unwrap();
        assert!(m.values.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn floor_and_negative_values() {
        let lb = Tensor::from_vec(&[1, 3], vec![1.0, 0.0, 0.5]).unwrap();
        let hb = Tensor::from_vec(&[1, 3], vec![0.5, 0.2, 1.0]).unwrap();
        let m = adc_map(&lb, &hb, 0.0, 1000.0, &UNIT).unwrap();
        assert_eq!(m.valid, vec![true, false, true]);
        assert!(m.values.data()[1].is_nan());
        assert!(m.values.data()[2] < 0.0);
        let s = m.roi_stats(&[true, true, true]).unwrap();
        assert_eq!(s.n_pixels, 2);
        assert!(m.roi_stats(&[false, true, false]).is_err());
    }

    #[test]
    fn stats_examples() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.iqr, 1.5);
        assert_eq!(s.mean, 2.5);
        assert!((s.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let c = summarize(&[0.75; 9]).unwrap();
        assert_eq!((c.mean, c.median, c.sd, c.iqr), (0.75, 0.75, 0.0, 0.0));
        assert!(summarize(&[]).is_err());
    }
}
