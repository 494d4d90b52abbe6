//! Reconstruction chain: k-space averaging, inverse FFT, sum-of-squares coil
//! combination, geometric direction averaging and normalization.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::case_seed;
use crate::sim::acquisition::{apparent_snr, simulate_acquisition, AcquisitionConfig, BValue, RawAcquisition};
use crate::sim::fft::{fft2, Direction};
use crate::sim::phantom::{PhantomCase, TissueLabel};
use crate::tensor::Tensor;

/// Seed purpose for the noisy-average draw within a case.
pub const SELECT_PURPOSE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationRecord {
    pub lb_scale: f64,
    pub hb_scale: f64,
}

/// Guidance / noisy / reference triple for one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct DwiCase {
    pub id: u64,
    /// Low-b image from all low-b averages, divided by `norm.lb_scale`.
    pub guidance_lb: Tensor<f64>,
    /// High-b image from the selected averages, divided by `norm.hb_scale`.
    pub noisy_hb: Tensor<f64>,
    /// High-b image from all averages, divided by `norm.hb_scale`.
    pub reference_hb: Tensor<f64>,
    pub b_low: f64,
    pub b_high: f64,
    pub norm: NormalizationRecord,
    pub selected_averages: Vec<usize>,
}

impl DwiCase {
    pub fn shape(&self) -> (usize, usize) {
        (self.reference_hb.shape()[0], self.reference_hb.shape()[1])
    }
}

/// Mean of the selected complex k-space averages of one (b, direction, coil).
pub fn average_kspace(
    acq: &RawAcquisition,
    b: BValue,
    direction: usize,
    coil: usize,
    average_indices: &[usize],
) -> Result<Vec<Complex64>> {
    if average_indices.is_empty() {
        return Err(Error::invalid("average index list is empty"));
    }
    let mut seen = average_indices.to_vec();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("average index list contains duplicates"));
    }
    let hw = acq.matrix.0 * acq.matrix.1;
    let mut acc = vec![Complex64::new(0.0, 0.0); hw];
    for &a in average_indices {
        for (s, &v) in acc.iter_mut().zip(acq.frame(b, direction, coil, a)?) {
            *s += v;
        }
    }
    let inv = 1.0 / average_indices.len() as f64;
    for v in &mut acc {
        *v *= inv;
    }
    Ok(acc)
}

/// Root of summed squared coil magnitudes, per pixel.
pub fn sos_combine(coil_images: &[Vec<Complex64>], shape: (usize, usize)) -> Result<Tensor<f64>> {
    let first = coil_images.first().ok_or_else(|| Error::invalid("no coil images"))?;
    if coil_images.iter().any(|c| c.len() != first.len()) || first.len() != shape.0 * shape.1 {
        return Err(Error::invalid("coil images have inconsistent sizes"));
    }
    let data = (0..first.len())
        .map(|i| coil_images.iter().map(|c| c[i].norm_sqr()).sum::<f64>().sqrt())
        .collect();
    Tensor::from_vec(&[shape.0, shape.1], data)
}

/// Per-pixel geometric mean across direction images; identity for one image.
pub fn geometric_average(direction_images: &[Tensor<f64>]) -> Result<Tensor<f64>> {
    let first = direction_images
        .first()
        .ok_or_else(|| Error::invalid("no direction images"))?;
    for img in direction_images {
        first.ensure_same_shape(img, "geometric_average")?;
        if img.data().iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("geometric average of a negative pixel"));
        }
    }
    if direction_images.len() == 1 {
        return Ok(first.clone());
    }
    let n = direction_images.len() as f64;
    Ok(Tensor::from_fn(first.shape(), |i| {
        if direction_images.iter().any(|img| img.data()[i] == 0.0) {
            0.0
        } else {
            (direction_images.iter().map(|img| img.data()[i].ln()).sum::<f64>() / n).exp()
        }
    }))
}

/// Uniform draw of `n_select` distinct indices out of `n_total`, sorted ascending.
pub fn select_noisy_averages(n_total: usize, n_select: usize, seed: u64) -> Result<Vec<usize>> {
    if n_select > n_total {
        return Err(Error::invalid(format!(
            "cannot select {n_select} of {n_total} averages"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n_total, n_select).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Reconstruct one magnitude image from a set of averages of one b-value.
pub fn reconstruct_image(acq: &RawAcquisition, b: BValue, averages: &[usize]) -> Result<Tensor<f64>> {
    let (h, w) = acq.matrix;
    let mut direction_images = Vec::with_capacity(acq.config.n_directions);
    for d in 0..acq.config.n_directions {
        let mut coils = Vec::with_capacity(acq.config.n_coils);
        for c in 0..acq.config.n_coils {
            let mut k = average_kspace(acq, b, d, c, averages)?;
            fft2(&mut k, h, w, Direction::Inverse)?;
            coils.push(k);
        }
        direction_images.push(sos_combine(&coils, (h, w))?);
    }
    geometric_average(&direction_images)
}

/// Build the guidance / noisy / reference triple for one case.
///
/// The two noisy averages are drawn once per `(seed, case_id)`.
pub fn reconstruct_case(acq: &RawAcquisition, case_id: u64, seed: u64) -> Result<DwiCase> {
    let cfg = &acq.config;
    if cfg.n_avg_high < 2 {
        return Err(Error::invalid("need at least two high-b averages"));
    }
    let all_low: Vec<usize> = (0..cfg.n_avg_low).collect();
    let all_high: Vec<usize> = (0..cfg.n_avg_high).collect();
    let selected = select_noisy_averages(cfg.n_avg_high, 2, case_seed(seed, case_id, SELECT_PURPOSE))?;

    let lb = reconstruct_image(acq, BValue::Low, &all_low)?;
    let reference = reconstruct_image(acq, BValue::High, &all_high)?;
    let noisy = reconstruct_image(acq, BValue::High, &selected)?;

    let lb_scale = lb.max();
    let hb_scale = reference.max();
    if !(lb_scale > 0.0 && hb_scale > 0.0) {
        return Err(Error::Degenerate("image maximum is zero; cannot normalize".into()));
    }
    Ok(DwiCase {
        id: case_id,
        guidance_lb: lb.map(|v| v / lb_scale),
        noisy_hb: noisy.map(|v| v / hb_scale),
        reference_hb: reference.map(|v| v / hb_scale),
        b_low: cfg.b_low,
        b_high: cfg.b_high,
        norm: NormalizationRecord { lb_scale, hb_scale },
        selected_averages: selected,
    })
}

/// Drop the first and last two slices of a stack.
pub fn discard_edge_slices<S>(stack: Vec<S>) -> Vec<S> {
    if stack.len() <= 4 {
        return Vec::new();
    }
    let n = stack.len();
    stack.into_iter().skip(2).take(n - 4).collect()
}

/// Apparent SNR of an image: mean over prostate labels divided by the std
/// over background.
pub fn prostate_apparent_snr(image: &Tensor<f64>, phantom: &PhantomCase) -> Result<f64> {
    let signal: Vec<bool> = phantom.label_map.iter().map(|l| l.is_prostate()).collect();
    let noise = phantom.mask(TissueLabel::Background);
    apparent_snr(image, &signal, &noise)
}

/// Find the k-space noise sigma at which the all-average reference image of
/// `phantom` reaches `target_snr` apparent SNR.
///
/// Background std scales linearly with sigma while the prostate mean is
/// nearly sigma-independent, so a few fixed-point iterations of
/// `sigma <- sigma * snr / target` converge.
pub fn calibrate_noise_sigma(phantom: &PhantomCase, config: &AcquisitionConfig, target_snr: f64) -> Result<f64> {
    if !(target_snr > 0.0) {
        return Err(Error::invalid("target SNR must be positive"));
    }
    let mut sigma = 0.02;
    for _ in 0..5 {
        let cfg = AcquisitionConfig {
            noise_sigma: sigma,
            ..*config
        };
        let acq = simulate_acquisition(phantom, &cfg)?;
        let all: Vec<usize> = (0..cfg.n_avg_high).collect();
        let reference = reconstruct_image(&acq, BValue::High, &all)?;
        let snr = prostate_apparent_snr(&reference, phantom)?;
        sigma *= snr / target_snr;
    }
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::phantom::{generate_phantom, PhantomSpec};

    fn small_acq(sigma: f64) -> (PhantomCase, RawAcquisition) {
        let p = generate_phantom(&PhantomSpec::prostate_like((32, 32), 2)).unwrap();
        let cfg = AcquisitionConfig {
            n_avg_high: 4,
            n_avg_low: 2,
            noise_sigma: sigma,
            seed: 3,
            ..Default::default()
        };
        let acq = simulate_acquisition(&p, &cfg).unwrap();
        (p, acq)
    }

    #[test]
    fn averaging_replicas_and_single_index() {
        let (_, acq) = small_acq(0.0);
        let one = acq.frame(BValue::High, 0, 0, 0).unwrap().to_vec();
        assert_eq!(average_kspace(&acq, BValue::High, 0, 0, &[0, 1, 2, 3]).unwrap(), one);
        let (_, noisy) = small_acq(0.1);
        let f = noisy.frame(BValue::High, 1, 2, 3).unwrap().to_vec();
        assert_eq!(average_kspace(&noisy, BValue::High, 1, 2, &[3]).unwrap(), f);
        assert!(average_kspace(&noisy, BValue::High, 0, 0, &[]).is_err());
        assert!(average_kspace(&noisy, BValue::High, 0, 0, &[1, 1]).is_err());
        assert!(average_kspace(&noisy, BValue::High, 0, 0, &[9]).is_err());
    }

    #[test]
    fn sos_examples() {
        let a = vec![Complex64::new(3.0, 0.0)];
        let b = vec![Complex64::new(0.0, 4.0)];
        assert_eq!(sos_combine(&[a.clone(), b.clone()], (1, 1)).unwrap().data(), &[5.0]);
        assert_eq!(sos_combine(&[b.clone(), a.clone()], (1, 1)).unwrap().data(), &[5.0]);
        assert_eq!(sos_combine(&[b], (1, 1)).unwrap().data(), &[4.0]);
        assert!(sos_combine(&[], (1, 1)).is_err());
    }

    #[test]
    fn geometric_average_examples() {
        let t = |v: f64| Tensor::from_vec(&[1, 2], vec![v, v * 2.0]).unwrap();
        let g = geometric_average(&[t(1.0), t(4.0), t(16.0)]).unwrap();
        assert!((g.data()[0] - 4.0).abs() < 1e-12);
        let z = geometric_average(&[t(1.0), t(0.0), t(16.0)]).unwrap();
        assert_eq!(z.data()[0], 0.0);
        assert_eq!(geometric_average(&[t(3.0)]).unwrap(), t(3.0));
        assert!(geometric_average(&[t(-1.0), t(1.0)]).is_err());
    }

    #[test]
    fn selection_rules() {
        assert_eq!(select_noisy_averages(2, 2, 99).unwrap(), vec![0, 1]);
        assert_eq!(select_noisy_averages(16, 2, 7).unwrap(), select_noisy_averages(16, 2, 7).unwrap());
        assert!(select_noisy_averages(1, 2, 0).is_err());
    }

    #[test]
    fn noiseless_case_noisy_equals_reference() {
        let (_, acq) = small_acq(0.0);
        let c = reconstruct_case(&acq, 0, 1).unwrap();
        assert_eq!(c.reference_hb.max(), 1.0);
        for (a, b) in c.noisy_hb.data().iter().zip(c.reference_hb.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_bias_raises_noisy_background() {
        let (p, acq) = small_acq(0.05);
        let c = reconstruct_case(&acq, 0, 1).unwrap();
        let bg = p.mask(TissueLabel::Background);
        let mean = |t: &Tensor<f64>| {
            let v: Vec<f64> = t.data().iter().zip(&bg).filter(|(_, &m)| m).map(|(&x, _)| x).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(&c.noisy_hb) > mean(&c.reference_hb));
        assert_eq!(c.reference_hb.max(), 1.0);
    }

    #[test]
    fn edge_slices_are_dropped() {
        assert_eq!(discard_edge_slices((0..10).collect()), (2..8).collect::<Vec<_>>());
        assert!(discard_edge_slices(vec![1, 2, 3, 4]).is_empty());
        assert!(discard_edge_slices(vec![1]).is_empty());
    }
}
