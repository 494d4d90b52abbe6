//! Elliptical prostate-like phantoms with per-tissue ADC and S0 fields.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TissueLabel {
    Background = 0,
    Muscle = 1,
    PeripheralZone = 2,
    TransitionZone = 3,
    Lesion = 4,
    Bladder = 5,
}

impl TissueLabel {
    pub const ALL: [TissueLabel; 6] = [
        TissueLabel::Background,
        TissueLabel::Muscle,
        TissueLabel::PeripheralZone,
        TissueLabel::TransitionZone,
        TissueLabel::Lesion,
        TissueLabel::Bladder,
    ];

    /// The four tissues with reference ADC values: muscle, PZ, TZ, lesion.
    pub const EVALUATED: [TissueLabel; 4] = [
        TissueLabel::Muscle,
        TissueLabel::PeripheralZone,
        TissueLabel::TransitionZone,
        TissueLabel::Lesion,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TissueLabel::Background => "background",
            TissueLabel::Muscle => "muscle",
            TissueLabel::PeripheralZone => "peripheral_zone",
            TissueLabel::TransitionZone => "transition_zone",
            TissueLabel::Lesion => "lesion",
            TissueLabel::Bladder => "bladder",
        }
    }

    pub fn is_prostate(self) -> bool {
        matches!(
            self,
            TissueLabel::PeripheralZone | TissueLabel::TransitionZone | TissueLabel::Lesion
        )
    }
}

/// Tissue parameters. ADC in units of 1e-3 mm^2/s, S0 in arbitrary units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TissueClass {
    pub label: TissueLabel,
    pub adc_mean: f64,
    pub adc_sd: f64,
    pub s0_mean: f64,
    pub s0_sd: f64,
}

impl TissueClass {
    /// Default parameters. Muscle, PZ, TZ and lesion ADC match published
    /// reference prostate values (0.99, 1.59, 1.22, 0.76 with sd 0.14, 0.33,
    /// 0.20, 0.19); bladder approximates free water. S0 levels are chosen to
    /// give plausible relative T2-weighted contrast.
    pub fn default_for(label: TissueLabel) -> Self {
        let (adc_mean, adc_sd, s0_mean, s0_sd) = match label {
            TissueLabel::Background => (0.0, 0.0, 0.0, 0.0),
            TissueLabel::Muscle => (0.99, 0.14, 0.55, 0.05),
            TissueLabel::PeripheralZone => (1.59, 0.33, 1.0, 0.08),
            TissueLabel::TransitionZone => (1.22, 0.20, 0.8, 0.06),
            TissueLabel::Lesion => (0.76, 0.19, 0.7, 0.05),
            TissueLabel::Bladder => (2.8, 0.10, 1.2, 0.05),
        };
        TissueClass {
            label,
            adc_mean,
            adc_sd,
            s0_mean,
            s0_sd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipse {
    /// `(row, col)` in pixels.
    pub center: (f64, f64),
    /// `(row, col)` semi-axes in pixels before rotation.
    pub semi_axes: (f64, f64),
    /// Rotation in radians.
    pub rotation: f64,
}

impl Ellipse {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.center.0, x - self.center.1);
        let (s, c) = self.rotation.sin_cos();
        let u = c * dy + s * dx;
        let v = -s * dy + c * dx;
        (u / self.semi_axes.0).powi(2) + (v / self.semi_axes.1).powi(2) <= 1.0
    }

    /// Axis-aligned half extents `(row, col)` of the rotated ellipse.
    fn half_extent(&self) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        let (a, b) = self.semi_axes;
        (((a * c).powi(2) + (b * s).powi(2)).sqrt(), ((a * s).powi(2) + (b * c).powi(2)).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub shape: Ellipse,
    pub tissue: TissueClass,
}

/// Regions are painted in order; later regions overwrite earlier ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub matrix: (usize, usize),
    pub regions: Vec<Region>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCase {
    pub s0_map: Tensor<f64>,
    /// ADC in units of 1e-3 mm^2/s; zero in background.
    pub adc_truth: Tensor<f64>,
    pub label_map: Vec<TissueLabel>,
    pub warnings: Vec<String>,
}

impl PhantomCase {
    pub fn shape(&self) -> (usize, usize) {
        (self.s0_map.shape()[0], self.s0_map.shape()[1])
    }

    pub fn mask(&self, label: TissueLabel) -> Vec<bool> {
        self.label_map.iter().map(|&l| l == label).collect()
    }
}

/// A smooth field bounded by 1 in absolute value: a random offset plus a
/// few low-frequency plane waves.
struct SmoothField {
    offset: f64,
    waves: Vec<(f64, f64, f64, f64)>, // amplitude, ky, kx, phase
}

impl SmoothField {
    fn random(rng: &mut ChaCha8Rng, scale: f64) -> Self {
        let offset = rng.random_range(-0.5..0.5);
        let n = 3;
        let waves = (0..n)
            .map(|_| {
                let amp = 0.5 / n as f64;
                let theta = rng.random_range(0.0..2.0 * PI);
                let freq = rng.random_range(0.5..1.5) * 2.0 * PI / scale;
                (amp, freq * theta.sin(), freq * theta.cos(), rng.random_range(0.0..2.0 * PI))
            })
            .collect();
        SmoothField { offset, waves }
    }

    fn at(&self, y: f64, x: f64) -> f64 {
        self.offset
            + self
                .waves
                .iter()
                .map(|&(a, ky, kx, ph)| a * (ky * y + kx * x + ph).cos())
                .sum::<f64>()
    }
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<PhantomCase> {
    let (h, w) = spec.matrix;
    if h == 0 || w == 0 {
        return Err(Error::invalid("phantom matrix must be non-empty"));
    }
    for (i, r) in spec.regions.iter().enumerate() {
        let (ey, ex) = r.shape.half_extent();
        let (cy, cx) = r.shape.center;
        if r.shape.semi_axes.0 <= 0.0 || r.shape.semi_axes.1 <= 0.0 {
            return Err(Error::invalid(format!("region {i}: semi-axes must be positive")));
        }
        if cy - ey < -0.5 || cx - ex < -0.5 || cy + ey > h as f64 - 0.5 || cx + ex > w as f64 - 0.5 {
            return Err(Error::invalid(format!("region {i}: ellipse extends outside the matrix")));
        }
        if r.tissue.label != TissueLabel::Background && !(r.tissue.adc_mean > 0.0) {
            return Err(Error::invalid(format!("region {i}: tissue ADC must be positive")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut s0 = Tensor::zeros(&[h, w]);
    let mut adc = Tensor::zeros(&[h, w]);
    let mut labels = vec![TissueLabel::Background; h * w];
    let mut owner = vec![usize::MAX; h * w];
    for (ri, r) in spec.regions.iter().enumerate() {
        let scale = 2.0 * r.shape.semi_axes.0.max(r.shape.semi_axes.1);
        let adc_field = SmoothField::random(&mut rng, scale);
        let s0_field = SmoothField::random(&mut rng, scale);
        let t = &r.tissue;
        for y in 0..h {
            for x in 0..w {
                if !r.shape.contains(y as f64, x as f64) {
                    continue;
                }
                let i = y * w + x;
                labels[i] = t.label;
                owner[i] = ri;
                if t.label == TissueLabel::Background {
                    s0.data_mut()[i] = 0.0;
                    adc.data_mut()[i] = 0.0;
                } else {
                    adc.data_mut()[i] = t.adc_mean + t.adc_sd * adc_field.at(y as f64, x as f64);
                    s0.data_mut()[i] = t.s0_mean + t.s0_sd * s0_field.at(y as f64, x as f64);
                }
            }
        }
    }
    let mut warnings = Vec::new();
    for (ri, r) in spec.regions.iter().enumerate() {
        if r.tissue.label == TissueLabel::Lesion && !owner.contains(&ri) {
            warnings.push(format!("lesion region {ri} is fully occluded by later regions"));
        }
    }
    Ok(PhantomCase {
        s0_map: s0,
        adc_truth: adc,
        label_map: labels,
        warnings,
    })
}

impl PhantomSpec {
    /// A randomized axial pelvis-like layout: body outline (muscle), bladder,
    /// peripheral zone, transition zone and one lesion inside the PZ.
    pub fn prostate_like(matrix: (usize, usize), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_9a47);
        let (h, w) = (matrix.0 as f64, matrix.1 as f64);
        let j = |rng: &mut ChaCha8Rng, s: f64| rng.random_range(-s..s);
        let tissue = TissueClass::default_for;
        let cy = h * (0.5 + j(&mut rng, 0.03));
        let cx = w * (0.5 + j(&mut rng, 0.03));
        let body = Ellipse {
            center: (cy, cx),
            semi_axes: (h * (0.36 + j(&mut rng, 0.03)), w * (0.42 + j(&mut rng, 0.03))),
            rotation: j(&mut rng, 0.08),
        };
        let bladder = Ellipse {
            center: (cy - h * 0.2, cx + j(&mut rng, 0.03) * w),
            semi_axes: (h * (0.09 + j(&mut rng, 0.02)), w * (0.14 + j(&mut rng, 0.02))),
            rotation: j(&mut rng, 0.3),
        };
        let pz_c = (cy + h * (0.05 + j(&mut rng, 0.02)), cx + j(&mut rng, 0.02) * w);
        let pz = Ellipse {
            center: pz_c,
            semi_axes: (h * (0.13 + j(&mut rng, 0.015)), w * (0.17 + j(&mut rng, 0.02))),
            rotation: j(&mut rng, 0.2),
        };
        let tz = Ellipse {
            center: (pz_c.0 - h * 0.035, pz_c.1),
            semi_axes: (pz.semi_axes.0 * 0.55, pz.semi_axes.1 * 0.6),
            rotation: pz.rotation,
        };
        // lesion in the posterior/lateral PZ
        let ang = rng.random_range(0.15 * PI..0.85 * PI);
        let r = 0.72;
        let lesion = Ellipse {
            center: (
                pz_c.0 + r * pz.semi_axes.0 * ang.sin(),
                pz_c.1 + r * pz.semi_axes.1 * ang.cos(),
            ),
            semi_axes: (h * (0.035 + j(&mut rng, 0.008)), w * (0.04 + j(&mut rng, 0.01))),
            rotation: rng.random_range(0.0..PI),
        };
        let regions = vec![
            Region { shape: body, tissue: tissue(TissueLabel::Muscle) },
            Region { shape: bladder, tissue: tissue(TissueLabel::Bladder) },
            Region { shape: pz, tissue: tissue(TissueLabel::PeripheralZone) },
            Region { shape: tz, tissue: tissue(TissueLabel::TransitionZone) },
            Region { shape: lesion, tissue: tissue(TissueLabel::Lesion) },
        ];
        PhantomSpec {
            matrix,
            regions,
            seed,
        }
    }
}
