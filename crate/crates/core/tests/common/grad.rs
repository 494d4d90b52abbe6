//! Finite-difference gradient checks.

use dwi_denoise::nn::*;
use dwi_denoise::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;

pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Max relative error of `analytic` against central differences of the
/// scalar `f` over every entry of `x`.
fn check_entries(x: &mut Tensor<f64>, analytic: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + FD_STEP;
        let up = f(x);
        x.data_mut()[i] = orig - FD_STEP;
        let down = f(x);
        x.data_mut()[i] = orig;
        worst = worst.max(rel_err(analytic.data()[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// Conv layer: input, weight and bias gradients.
pub fn conv_gradcheck(seed: u64) -> f64 {
    let x = random(&[2, 3, 6, 5], seed);
    let w = random(&[4, 3, 3, 3], seed + 1);
    let b = random(&[4], seed + 2);
    let r = random(&[2, 4, 6, 5], seed + 3);
    let params = ConvLayerParams::new(w, Some(b)).unwrap();
    let g = conv2d_backward(&r, Some(&x), &params).unwrap();
    let mut worst = check_entries(&mut x.clone(), &g.input, |x| dot(&conv2d_forward(x, &params).unwrap(), &r));
    let mut w = params.weights.clone();
    worst = worst.max(check_entries(&mut w, &g.weights, |w| {
        let p = ConvLayerParams::new(w.clone(), params.bias.clone()).unwrap();
        dot(&conv2d_forward(&x, &p).unwrap(), &r)
    }));
    let mut b = params.bias.clone().unwrap();
    worst = worst.max(check_entries(&mut b, g.bias.as_ref().unwrap(), |b| {
        let p = ConvLayerParams::new(params.weights.clone(), Some(b.clone())).unwrap();
        dot(&conv2d_forward(&x, &p).unwrap(), &r)
    }));
    worst
}

/// Train-mode batch norm: input, gamma and beta gradients.
pub fn batchnorm_gradcheck(seed: u64) -> f64 {
    let x = random(&[3, 2, 4, 4], seed);
    let mut params = BatchNormParams::<f64>::new(2);
    params.gamma = random(&[2], seed + 1);
    params.beta = random(&[2], seed + 2);
    let r = random(&[3, 2, 4, 4], seed + 3);
    let forward = |x: &Tensor<f64>, p: &BatchNormParams<f64>| {
        let mut p = p.clone();
        dot(&batchnorm_forward(x, &mut p, Mode::Train).unwrap().0, &r)
    };
    let (_, cache) = batchnorm_forward(&x, &mut params.clone(), Mode::Train).unwrap();
    let g = batchnorm_backward(&r, cache.as_ref()).unwrap();
    let mut worst = check_entries(&mut x.clone(), &g.input, |x| forward(x, &params));
    let mut gamma = params.gamma.clone();
    worst = worst.max(check_entries(&mut gamma, &g.gamma, |gm| {
        let mut p = params.clone();
        p.gamma = gm.clone();
        forward(&x, &p)
    }));
    let mut beta = params.beta.clone();
    worst = worst.max(check_entries(&mut beta, &g.beta, |bt| {
        let mut p = params.clone();
        p.beta = bt.clone();
        forward(&x, &p)
    }));
    worst
}

/// ReLU away from the kink.
pub fn relu_gradcheck(seed: u64) -> f64 {
    let x = random(&[1, 2, 5, 5], seed).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let r = random(&[1, 2, 5, 5], seed + 1);
    let g = relu_backward(&r, &x).unwrap();
    check_entries(&mut x.clone(), &g, |x| dot(&relu(x), &r))
}

pub fn mse_gradcheck(seed: u64) -> f64 {
    let d = random(&[2, 1, 4, 4], seed);
    let t = random(&[2, 1, 4, 4], seed + 1);
    let (_, g) = mse_loss(&d, &t).unwrap();
    check_entries(&mut d.clone(), &g, |d| mse_loss(d, &t).unwrap().0)
}

/// Full guided network (depth 4, width 8, 12x12 inputs, batch 2) under the
/// MSE loss of the denoised output; returns the max relative error over all
/// trainable parameters.
pub fn network_gradcheck(seed: u64) -> f64 {
    let spec = NetworkSpec::new(4, 8, true).unwrap();
    let model = init_params::<f64>(spec, seed).unwrap();
    let noisy = random(&[2, 1, 12, 12], seed + 10).map(|v| v.abs());
    let guide = random(&[2, 1, 12, 12], seed + 11).map(|v| v.abs());
    let reference = random(&[2, 1, 12, 12], seed + 12).map(|v| v.abs());
    let loss = |m: &ModelState<f64>| {
        let mut m = m.clone();
        let (res, _) = network_forward(&noisy, Some(&guide), &mut m, Mode::Train).unwrap();
        mse_loss(&noisy.sub(&res).unwrap(), &reference).unwrap().0
    };
    let mut m = model.clone();
    let (res, cache) = network_forward(&noisy, Some(&guide), &mut m, Mode::Train).unwrap();
    let (_, g) = mse_loss(&noisy.sub(&res).unwrap(), &reference).unwrap();
    let grads = network_backward(&g.map(|v| -v), cache.as_ref(), &model).unwrap();

    let mut worst: f64 = 0.0;
    let n_params = model.trainable().len();
    assert_eq!(grads.tensors.len(), n_params);
    for p in 0..n_params {
        let len = model.trainable()[p].1.len();
        for i in 0..len {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.trainable_mut()[p].1.data_mut()[i] += delta;
                loss(&m)
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grads.tensors[p].data()[i], numeric));
        }
    }
    worst
}
