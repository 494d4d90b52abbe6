//! Patch extraction and dihedral augmentation.

use crate::error::{Error, Result};
use crate::recon::DwiCase;
use crate::tensor::Tensor;

/// Co-registered noisy / guidance / reference windows of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub noisy: Tensor<f32>,
    pub guidance: Tensor<f32>,
    pub reference: Tensor<f32>,
    pub case_id: u64,
    /// `(row, col)` of the top-left corner.
    pub offset: (usize, usize),
}

/// Window starts along one axis: a regular grid plus a final window
/// anchored to the far edge when the grid leaves the border uncovered.
pub fn window_starts(len: usize, p: usize, stride: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..=len - p).step_by(stride).collect();
    if let Some(&last) = starts.last() {
        if last + p < len {
            starts.push(len - p);
        }
    }
    starts
}

fn crop(img: &Tensor<f64>, y0: usize, x0: usize, p: usize) -> Tensor<f32> {
    let w = img.shape()[1];
    let mut data = Vec::with_capacity(p * p);
    for y in y0..y0 + p {
        data.extend(img.data()[y * w + x0..y * w + x0 + p].iter().map(|&v| v as f32));
    }
    Tensor::from_vec(&[p, p], data).expect("crop size")
}

pub fn extract_patches(case: &DwiCase, p: usize, stride: usize) -> Result<Vec<PatchPair>> {
    let (h, w) = case.shape();
    if p == 0 || p > h.min(w) {
        return Err(Error::invalid(format!("patch size {p} does not fit a {h}x{w} image")));
    }
    if stride == 0 {
        return Err(Error::invalid("patch stride must be >= 1"));
    }
    let mut out = Vec::new();
    for &y in &window_starts(h, p, stride) {
        for &x in &window_starts(w, p, stride) {
            out.push(PatchPair {
                noisy: crop(&case.noisy_hb, y, x, p),
                guidance: crop(&case.guidance_lb, y, x, p),
                reference: crop(&case.reference_hb, y, x, p),
                case_id: case.id,
                offset: (y, x),
            });
        }
    }
    Ok(out)
}

/// Apply dihedral element `k` to a square image: `k % 4` quarter turns
/// counter-clockwise, preceded by a horizontal flip when `k >= 4`.
pub fn dihedral(img: &Tensor<f32>, k: usize) -> Result<Tensor<f32>> {
    let (h, w) = img.dims2()?;
    if h != w {
        return Err(Error::invalid("dihedral transforms need square patches"));
    }
    if k > 7 {
        return Err(Error::invalid(format!("dihedral index {k} outside 0..8")));
    }
    let n = h;
    let src = img.data();
    let flip = k >= 4;
    let rot = k % 4;
    let mut out = vec![0.0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            // destination (y, x) reads from the inverse-transformed source position
            let (sy, sx) = match rot {
                0 => (y, x),
                1 => (x, n - 1 - y),
                2 => (n - 1 - y, n - 1 - x),
                _ => (n - 1 - x, y),
            };
            let sx = if flip { n - 1 - sx } else { sx };
            out[y * n + x] = src[sy * n + sx];
        }
    }
    Tensor::from_vec(&[n, n], out)
}

pub fn augment(pair: &PatchPair, k: usize) -> Result<PatchPair> {
    Ok(PatchPair {
        noisy: dihedral(&pair.noisy, k)?,
        guidance: dihedral(&pair.guidance, k)?,
        reference: dihedral(&pair.reference, k)?,
        case_id: pair.case_id,
        offset: pair.offset,
    })
}
