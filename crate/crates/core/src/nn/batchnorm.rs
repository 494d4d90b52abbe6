//! Per-channel batch normalization over NCHW activations.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: f64,
    /// `running = (1 - momentum) * running + momentum * batch`
    pub momentum: f64,
}

impl<T: Element> BatchNormParams<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: Tensor::filled(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Values saved by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T = f32> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
    gamma: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads<T = f32> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Normalize `input`. In train mode the batch statistics are used and the
/// running statistics in `params` are updated; the returned cache is `Some`
/// only in train mode.
pub fn batchnorm_forward<T: Element>(
    input: &Tensor<T>,
    params: &mut BatchNormParams<T>,
    mode: Mode,
) -> Result<(Tensor<T>, Option<BatchNormCache<T>>)> {
    let (n, c, h, w) = input.dims4()?;
    if c != params.channels() {
        return Err(Error::Shape {
            context: "batchnorm channels",
            expected: vec![params.channels()],
            actual: vec![c],
        });
    }
    if !(params.epsilon > 0.0) {
        return Err(Error::invalid("batchnorm epsilon must be positive"));
    }
    let hw = h * w;
    let count = n * hw;
    let x = input.data();
    match mode {
        Mode::Eval => Ok((batchnorm_eval(input, params)?, None)),
        Mode::Train => {
            let mut out = Tensor::zeros(input.shape());
            if count < 2 {
                return Err(Error::invalid(
                    "batchnorm train mode needs at least two values per channel",
                ));
            }
            let momentum = T::from_f64_lossy(params.momentum);
            let mut normalized = Tensor::zeros(input.shape());
            let mut inv_std = Vec::with_capacity(c);
            for ch in 0..c {
                let plane = |b: usize| &x[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                let mut sum = 0.0f64;
                for b in 0..n {
                    sum += plane(b).iter().map(|v| v.to_f64_lossy()).sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0f64;
                for b in 0..n {
                    sq += plane(b)
                        .iter()
                        .map(|v| {
                            let d = v.to_f64_lossy() - mean;
                            d * d
                        })
                        .sum::<f64>();
                }
                let var = sq / count as f64;
                let inv = T::from_f64_lossy((var + params.epsilon).sqrt().recip());
                let mean_t = T::from_f64_lossy(mean);
                let g = params.gamma.data()[ch];
                let bt = params.beta.data()[ch];
                for b in 0..n {
                    let off = (b * c + ch) * hw;
                    let xs = &x[off..off + hw];
                    let ns = &mut normalized.data_mut()[off..off + hw];
                    for (nv, &xv) in ns.iter_mut().zip(xs) {
                        *nv = (xv - mean_t) * inv;
                    }
                    let ns = &normalized.data()[off..off + hw];
                    for (o, &nv) in out.data_mut()[off..off + hw].iter_mut().zip(ns) {
                        *o = g * nv + bt;
                    }
                }
                inv_std.push(inv);
                let unbiased = T::from_f64_lossy(var * count as f64 / (count as f64 - 1.0));
                let mean = mean_t;
                let rm = &mut params.running_mean.data_mut()[ch];
                *rm = (T::one() - momentum) * *rm + momentum * mean;
                let rv = &mut params.running_var.data_mut()[ch];
                *rv = (T::one() - momentum) * *rv + momentum * unbiased;
            }
            let cache = BatchNormCache {
                normalized,
                inv_std,
                gamma: params.gamma.data().to_vec(),
            };
            Ok((out, Some(cache)))
        }
    }
}

/// Eval-mode normalization with the running statistics; never mutates `params`.
pub fn batchnorm_eval<T: Element>(input: &Tensor<T>, params: &BatchNormParams<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if c != params.channels() {
        return Err(Error::Shape {
            context: "batchnorm channels",
            expected: vec![params.channels()],
            actual: vec![c],
        });
    }
    let hw = h * w;
    let eps = T::from_f64_lossy(params.epsilon);
    let mut out = Tensor::zeros(input.shape());
    for ch in 0..c {
        let inv = (params.running_var.data()[ch] + eps).sqrt().recip();
        let scale = params.gamma.data()[ch] * inv;
        let shift = params.beta.data()[ch] - params.running_mean.data()[ch] * scale;
        for b in 0..n {
            let off = (b * c + ch) * hw;
            for (o, &v) in out.data_mut()[off..off + hw].iter_mut().zip(&input.data()[off..off + hw]) {
                *o = v * scale + shift;
            }
        }
    }
    Ok(out)
}

pub fn batchnorm_backward<T: Element>(
    grad_out: &Tensor<T>,
    cache: Option<&BatchNormCache<T>>,
) -> Result<BatchNormGrads<T>> {
    let cache = cache.ok_or(Error::MissingCache("batchnorm"))?;
    grad_out.ensure_same_shape(&cache.normalized, "batchnorm grad_out")?;
    let (n, c, h, w) = grad_out.dims4()?;
    let hw = h * w;
    let count_t = T::from_usize(n * hw).unwrap();
    let dy = grad_out.data();
    let xn = cache.normalized.data();
    let mut grad_in = Tensor::zeros(grad_out.shape());
    let mut grad_gamma = Tensor::zeros(&[c]);
    let mut grad_beta = Tensor::zeros(&[c]);
    for ch in 0..c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xn = 0.0f64;
        for b in 0..n {
            let off = (b * c + ch) * hw;
            for (&d, &v) in dy[off..off + hw].iter().zip(&xn[off..off + hw]) {
                sum_dy += d.to_f64_lossy();
                sum_dy_xn += (d * v).to_f64_lossy();
            }
        }
        let (sum_dy, sum_dy_xn) = (T::from_f64_lossy(sum_dy), T::from_f64_lossy(sum_dy_xn));
        grad_beta.data_mut()[ch] = sum_dy;
        grad_gamma.data_mut()[ch] = sum_dy_xn;
        let k = cache.gamma[ch] * cache.inv_std[ch] / count_t;
        for b in 0..n {
            let off = (b * c + ch) * hw;
            let gi = &mut grad_in.data_mut()[off..off + hw];
            for ((o, &d), &v) in gi.iter_mut().zip(&dy[off..off + hw]).zip(&xn[off..off + hw]) {
                *o = k * (count_t * d - sum_dy - v * sum_dy_xn);
            }
        }
    }
    Ok(BatchNormGrads {
        input: grad_in,
        gamma: grad_gamma,
        beta: grad_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-2.0..3.0))
    }

    fn channel_moments(t: &Tensor<f64>, ch: usize) -> (f64, f64) {
        let (n, c, h, w) = t.dims4().unwrap();
        let vals: Vec<f64> = (0..n)
            .flat_map(|b| t.data()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w].to_vec())
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        (m, v)
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let x = Tensor::<f64>::filled(&[2, 3, 4, 4], 7.5);
        let mut p = BatchNormParams::new(3);
        let (y, _) = batchnorm_forward(&x, &mut p, Mode::Train).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn train_output_has_beta_mean_and_gamma_squared_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[3, 2, 6, 6], &mut rng);
        let mut p = BatchNormParams::new(2);
        p.gamma.data_mut().copy_from_slice(&[2.0, 0.5]);
        p.beta.data_mut().copy_from_slice(&[5.0, -1.0]);
        let (y, _) = batchnorm_forward(&x, &mut p, Mode::Train).unwrap();
        let (m0, v0) = channel_moments(&y, 0);
        let (m1, v1) = channel_moments(&y, 1);
        assert!((m0 - 5.0).abs() < 1e-10 && (m1 + 1.0).abs() < 1e-10);
        assert!((v0 - 4.0).abs() < 1e-3 && (v1 - 0.25).abs() < 1e-3);
    }

    #[test]
    fn running_stats_follow_momentum_rule_in_train_mode_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[2, 1, 3, 3], &mut rng);
        let mut p = BatchNormParams::new(1);
        let mean = x.data().iter().sum::<f64>() / 18.0;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 17.0;
        batchnorm_forward(&x, &mut p, Mode::Train).unwrap();
        assert!((p.running_mean.data()[0] - 0.1 * mean).abs() < 1e-12);
        assert!((p.running_var.data()[0] - (0.9 + 0.1 * var)).abs() < 1e-12);
        let before = p.clone();
        let (_, cache) = batchnorm_forward(&x, &mut p, Mode::Eval).unwrap();
        assert!(cache.is_none());
        assert_eq!(before, p);
    }

    #[test]
    fn zero_epsilon_is_rejected() {
        let x = Tensor::<f64>::filled(&[1, 1, 2, 2], 1.0);
        let mut p = BatchNormParams::new(1);
        p.epsilon = 0.0;
        assert!(batchnorm_forward(&x, &mut p, Mode::Train).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients_and_beta_grad_is_channel_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&[2, 2, 3, 3], &mut rng);
        let mut p = BatchNormParams::new(2);
        let (_, cache) = batchnorm_forward(&x, &mut p, Mode::Train).unwrap();
        let g = batchnorm_backward(&Tensor::zeros(&[2, 2, 3, 3]), cache.as_ref()).unwrap();
        assert!(g.input.data().iter().chain(g.gamma.data()).chain(g.beta.data()).all(|&v| v == 0.0));

        let dy = random(&[2, 2, 3, 3], &mut rng);
        let g = batchnorm_backward(&dy, cache.as_ref()).unwrap();
        for ch in 0..2 {
            let s: f64 = (0..2).flat_map(|b| dy.data()[(b * 2 + ch) * 9..(b * 2 + ch + 1) * 9].to_vec()).sum();
            assert!((g.beta.data()[ch] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_cache_is_reported() {
        let dy = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        assert!(matches!(batchnorm_backward(&dy, None), Err(Error::MissingCache(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random(&[2, 2, 4, 3], &mut rng);
        let c = random(&[2, 2, 4, 3], &mut rng);
        let mut p = BatchNormParams::new(2);
        p.gamma.data_mut().copy_from_slice(&[1.3, -0.7]);
        p.beta.data_mut().copy_from_slice(&[0.2, 0.4]);
        // non-linear scalar loss so the input gradient is not trivially zero
        let loss = |x: &Tensor<f64>, p: &BatchNormParams<f64>| -> f64 {
            let mut p = p.clone();
            let (y, _) = batchnorm_forward(x, &mut p, Mode::Train).unwrap();
            y.data().iter().zip(c.data()).map(|(a, b)| a * b + 0.5 * a * a).sum()
        };
        let mut pc = p.clone();
        let (y, cache) = batchnorm_forward(&x, &mut pc, Mode::Train).unwrap();
        let dy = Tensor::from_fn(y.shape(), |i| c.data()[i] + y.data()[i]);
        let g = batchnorm_backward(&dy, cache.as_ref()).unwrap();
        let h = 1e-4;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let up = loss(&xp, &p);
            xp.data_mut()[i] -= 2.0 * h;
            let dn = loss(&xp, &p);
            let fd = (up - dn) / (2.0 * h);
            assert!(rel(fd, g.input.data()[i]) < 1e-5, "x[{i}] {fd} vs {}", g.input.data()[i]);
        }
        for ch in 0..2 {
            for (which, analytic) in [(0, g.gamma.data()[ch]), (1, g.beta.data()[ch])] {
                let mut pp = p.clone();
                let t = if which == 0 { &mut pp.gamma } else { &mut pp.beta };
                t.data_mut()[ch] += h;
                let up = loss(&x, &pp);
                let t = if which == 0 { &mut pp.gamma } else { &mut pp.beta };
                t.data_mut()[ch] -= 2.0 * h;
                let dn = loss(&x, &pp);
                let fd = (up - dn) / (2.0 * h);
                assert!(rel(fd, analytic) < 1e-5, "param {which} ch {ch}: {fd} vs {analytic}");
            }
        }
    }
}
