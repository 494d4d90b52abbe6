//! Independent reference implementations of the statistics and metrics.

use dwi_denoise::Tensor;

/// Mid-rank of every |d| by counting, not sorting.
fn count_ranks(abs: &[f64]) -> Vec<f64> {
    abs.iter()
        .map(|&v| {
            let less = abs.iter().filter(|&&u| u < v).count() as f64;
            let equal = abs.iter().filter(|&&u| u == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Two-sided signed-rank p-value by enumerating every sign assignment.
pub fn brute_force_wilcoxon_p(differences: &[f64]) -> f64 {
    let d: Vec<f64> = differences.iter().copied().filter(|v| *v != 0.0).collect();
    let n = d.len();
    let ranks = count_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let observed: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let centre = (n * (n + 1)) as f64 / 4.0;
    let dev = (observed - centre).abs();
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if (w - centre).abs() >= dev - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

/// SSIM straight from its definition with two-pass weighted moments.
pub fn ssim_oracle(x: &Tensor<f64>, y: &Tensor<f64>, win: usize, sigma: f64, k1: f64, k2: f64, l: f64) -> f64 {
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let c = (win / 2) as f64;
    let mut g = vec![vec![0.0; win]; win];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let r2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            *v = (-r2 / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let c1 = (k1 * l).powi(2);
    let c2 = (k2 * l).powi(2);
    let mut acc = 0.0;
    let mut count = 0.0;
    for y0 in 0..=h - win {
        for x0 in 0..=w - win {
            let px = |i: usize, j: usize| x[[y0 + i, x0 + j]];
            let py = |i: usize, j: usize| y[[y0 + i, x0 + j]];
            let wt = |i: usize, j: usize| g[i][j] / total;
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..win {
                for j in 0..win {
                    mx += wt(i, j) * px(i, j);
                    my += wt(i, j) * py(i, j);
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..win {
                for j in 0..win {
                    let (dx, dy) = (px(i, j) - mx, py(i, j) - my);
                    vx += wt(i, j) * dx * dx;
                    vy += wt(i, j) * dy * dy;
                    cov += wt(i, j) * dx * dy;
                }
            }
            let luminance = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            let structure = (2.0 * cov + c2) / (vx + vy + c2);
            acc += luminance * structure;
            count += 1.0;
        }
    }
    acc / count
}

/// Score lists reproducing a contingency table (rows: rater A, columns: rater B).
pub fn scores_from_table(table: &[&[usize]]) -> (Vec<usize>, Vec<usize>) {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, row) in table.iter().enumerate() {
        for (j, &n) in row.iter().enumerate() {
            for _ in 0..n {
                a.push(i + 1);
                b.push(j + 1);
            }
        }
    }
    (a, b)
}
