//! Paired agreement and hypothesis tests.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanResult {
    pub bias: f64,
    /// Sample (n-1) standard deviation of the differences.
    pub sd: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    /// `a[i] - b[i]`.
    pub differences: Vec<f64>,
}

pub fn bland_altman(a: &[f64], b: &[f64]) -> Result<BlandAltmanResult> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("paired lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::invalid("Bland-Altman needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let bias = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - bias).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(BlandAltmanResult {
        bias,
        sd,
        loa_low: bias - 1.96 * sd,
        loa_high: bias + 1.96 * sd,
        differences: d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Pairs with a non-zero difference.
    pub n: usize,
    /// Rank sum of positive differences `a - b`.
    pub w_plus: f64,
    pub w_minus: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub exact: bool,
}

/// Largest non-zero sample size evaluated by exact enumeration.
pub const WILCOXON_EXACT_MAX_N: usize = 20;

/// Mid-ranks of `abs_values` (ascending, ties share the average rank).
pub fn midranks(abs_values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..abs_values.len()).collect();
    idx.sort_by(|&i, &j| abs_values[i].total_cmp(&abs_values[j]));
    let mut ranks = vec![0.0; abs_values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && abs_values[idx[j + 1]] == abs_values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Wilcoxon signed-rank test on paired samples. Zero differences are
/// dropped. Small samples use the exact permutation distribution (ties
/// handled through doubled mid-ranks); larger ones the tie-corrected normal
/// approximation.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("paired lengths differ: {} vs {}", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Wilcoxon differences".into()));
    }
    if d.is_empty() {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    let n = d.len();
    let ranks = midranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;

    if n <= WILCOXON_EXACT_MAX_N {
        // doubled mid-ranks are integers
        let r2: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let sum2: usize = r2.iter().sum();
        let mut counts = vec![0u64; sum2 + 1];
        counts[0] = 1;
        for &r in &r2 {
            for s in (r..=sum2).rev() {
                counts[s] += counts[s - r];
            }
        }
        let t2 = (2.0 * w_plus).round() as i64;
        let dev = (2 * t2 - sum2 as i64).abs();
        let hits: u64 = counts
            .iter()
            .enumerate()
            .filter(|(s, _)| (2 * *s as i64 - sum2 as i64).abs() >= dev)
            .map(|(_, c)| c)
            .sum();
        return Ok(WilcoxonResult {
            n,
            w_plus,
            w_minus,
            p_value: hits as f64 / (1u64 << n) as f64,
            exact: true,
        });
    }

    let nf = n as f64;
    let mut var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    for group in sorted.chunk_by(|x, y| x == y) {
        let t = group.len() as f64;
        var -= (t * t * t - t) / 48.0;
    }
    let z = (w_plus - total / 2.0) / var.sqrt();
    Ok(WilcoxonResult {
        n,
        w_plus,
        w_minus,
        p_value: erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0),
        exact: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaWeighting {
    Linear,
    Quadratic,
}

/// Weighted Cohen's kappa for ordinal scores in `1..=n_categories`.
pub fn weighted_cohens_kappa(
    scores_a: &[usize],
    scores_b: &[usize],
    n_categories: usize,
    weighting: KappaWeighting,
) -> Result<f64> {
    if scores_a.len() != scores_b.len() || scores_a.is_empty() {
        return Err(Error::invalid("kappa needs two non-empty score lists of equal length"));
    }
    if n_categories < 2 {
        return Err(Error::invalid("kappa needs at least two categories"));
    }
    let k = n_categories;
    let mut obs = vec![0.0; k * k];
    for (&a, &b) in scores_a.iter().zip(scores_b) {
        if !(1..=k).contains(&a) || !(1..=k).contains(&b) {
            return Err(Error::invalid(format!("score outside 1..={k}: ({a}, {b})")));
        }
        obs[(a - 1) * k + (b - 1)] += 1.0;
    }
    let n = scores_a.len() as f64;
    obs.iter_mut().for_each(|v| *v /= n);
    let row: Vec<f64> = (0..k).map(|i| (0..k).map(|j| obs[i * k + j]).sum()).collect();
    let col: Vec<f64> = (0..k).map(|j| (0..k).map(|i| obs[i * k + j]).sum()).collect();
    let weight = |i: usize, j: usize| {
        let d = i.abs_diff(j) as f64 / (k - 1) as f64;
        match weighting {
            KappaWeighting::Linear => d,
            KappaWeighting::Quadratic => d * d,
        }
    };
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            num += weight(i, j) * obs[i * k + j];
            den += weight(i, j) * row[i] * col[j];
        }
    }
    if den == 0.0 {
        return Err(Error::Degenerate(
            "expected weighted disagreement is zero: both raters used a single identical category".into(),
        ));
    }
    Ok(1.0 - num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bland_altman_examples() {
        let r = bland_altman(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((r.bias, r.loa_low, r.loa_high), (0.0, 0.0, 0.0));
        let r = bland_altman(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(r.bias, 0.0);
        assert!((r.sd - 2f64.sqrt()).abs() < 1e-15);
        assert!((r.loa_high - 1.96 * 2f64.sqrt()).abs() < 1e-12);
        assert!(bland_altman(&[1.0], &[1.0]).is_err());
        assert!(bland_altman(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn wilcoxon_all_positive() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = wilcoxon_signed_rank(&a, &[0.0; 5]).unwrap();
        assert_eq!((r.w_plus, r.w_minus, r.n), (15.0, 0.0, 5));
        assert!((r.p_value - 0.0625).abs() < 1e-15);
        assert!(r.exact);
        assert!(wilcoxon_signed_rank(&a, &a).is_err());
    }

    #[test]
    fn wilcoxon_symmetric_differences() {
        let a = [1.0, -1.0, 2.0, -2.0, 3.0, -3.0];
        let r = wilcoxon_signed_rank(&a, &[0.0; 6]).unwrap();
        assert_eq!(r.w_plus, r.w_minus);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn wilcoxon_normal_path_is_close_to_exact_tail() {
        // 25 positive of distinct size against none: z is large, p tiny
        let a: Vec<f64> = (1..=25).map(|v| v as f64).collect();
        let r = wilcoxon_signed_rank(&a, &vec![0.0; 25]).unwrap();
        assert!(!r.exact);
        assert!(r.p_value < 1e-4);
        let mixed: Vec<f64> = (1..=30).map(|v| if v % 2 == 0 { v as f64 } else { -(v as f64) }).collect();
        let r = wilcoxon_signed_rank(&mixed, &vec![0.0; 30]).unwrap();
        assert!(r.p_value > 0.5);
    }

    #[test]
    fn midrank_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn kappa_basics() {
        let a = [1, 2, 3, 2, 1];
        for w in [KappaWeighting::Linear, KappaWeighting::Quadratic] {
            assert_eq!(weighted_cohens_kappa(&a, &a, 3, w).unwrap(), 1.0);
        }
        assert!(weighted_cohens_kappa(&[2, 2], &[2, 2], 3, KappaWeighting::Linear).is_err());
        assert!(weighted_cohens_kappa(&[1, 4], &[1, 2], 3, KappaWeighting::Linear).is_err());
        assert!(weighted_cohens_kappa(&[1], &[1, 2], 3, KappaWeighting::Linear).is_err());
    }
}
