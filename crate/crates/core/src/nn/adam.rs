use serde::{Deserialize, Serialize};

use super::model::{Gradients, ModelState};
use crate::error::{Error, Result};
use crate::tensor::Element;

/// ADAM hyperparameters. Weight decay is applied as an L2 term added to the
/// gradient before the moment updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// One bias-corrected ADAM update of every trainable parameter.
pub fn adam_step<T: Element>(model: &mut ModelState<T>, grads: &Gradients<T>, cfg: &AdamConfig) -> Result<()> {
    if !(cfg.lr > 0.0) {
        return Err(Error::invalid(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    {
        let params = model.trainable();
        if params.len() != grads.tensors.len() {
            return Err(Error::invalid(format!(
                "expected {} gradient tensors, got {}",
                params.len(),
                grads.tensors.len()
            )));
        }
        for ((id, p), g) in params.iter().zip(&grads.tensors) {
            p.ensure_same_shape(g, "adam gradient")?;
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {id}")));
            }
        }
    }

    model.step_count += 1;
    let t = model.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let one = T::one();
    let wd = T::from_f64_lossy(cfg.weight_decay);
    let lr = T::from_f64_lossy(cfg.lr);
    let eps = T::from_f64_lossy(cfg.epsilon);
    let bc1 = T::from_f64_lossy(bc1);
    let bc2 = T::from_f64_lossy(bc2);

    let mut adam_m = std::mem::take(&mut model.adam_m);
    let mut adam_v = std::mem::take(&mut model.adam_v);
    for (((_, p), g), (m, v)) in model
        .trainable_mut()
        .into_iter()
        .zip(&grads.tensors)
        .zip(adam_m.iter_mut().zip(adam_v.iter_mut()))
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let gi = gi + wd * *pi;
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi = *pi - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    model.adam_m = adam_m;
    model.adam_v = adam_v;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::conv::ConvLayerParams;
    use crate::nn::model::{init_params, LayerParams, NetworkSpec};
    use crate::tensor::Tensor;

    fn small_model() -> ModelState<f64> {
        init_params(NetworkSpec::new(3, 2, false).unwrap(), 4).unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_leaves_parameters() {
        let mut m = small_model();
        let before = m.clone();
        let g = m.zero_gradients();
        let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
        adam_step(&mut m, &g, &cfg).unwrap();
        assert_eq!(m.layers, before.layers);
        assert_eq!(m.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut m = small_model();
        let mut g = m.zero_gradients();
        g.tensors[0].data_mut()[0] = 0.3;
        g.tensors[0].data_mut()[1] = -2.0;
        let w0 = m.layers[0].conv.weights.data()[0];
        let w1 = m.layers[0].conv.weights.data()[1];
        let cfg = AdamConfig { lr: 0.01, weight_decay: 0.0, ..AdamConfig::default() };
        adam_step(&mut m, &g, &cfg).unwrap();
        // m_hat / sqrt(v_hat) = g / |g| on the first step
        assert!((m.layers[0].conv.weights.data()[0] - (w0 - 0.01)).abs() < 1e-9);
        assert!((m.layers[0].conv.weights.data()[1] - (w1 + 0.01)).abs() < 1e-9);
    }

    #[test]
    fn two_steps_match_hand_computation() {
        // model reduced to a two-parameter view: the first two weights
        let spec = NetworkSpec::new(3, 1, false).unwrap();
        let mut w = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        w.data_mut()[0] = 0.5;
        w.data_mut()[1] = -1.5;
        let mut layers = init_params::<f64>(spec, 0).unwrap().layers;
        layers[0] = LayerParams { conv: ConvLayerParams::new(w, Some(Tensor::zeros(&[1]))).unwrap(), bn: None };
        let mut m = ModelState::from_layers(spec, layers).unwrap();
        let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 0.01 };
        let grads_seq = [[0.2, -0.4], [-0.1, 0.3]];

        // hand computation
        let mut p = [0.5f64, -1.5];
        let mut mm = [0.0f64; 2];
        let mut vv = [0.0f64; 2];
        for (step, gs) in grads_seq.iter().enumerate() {
            let t = (step + 1) as i32;
            for k in 0..2 {
                let g = gs[k] + 0.01 * p[k];
                mm[k] = 0.9 * mm[k] + 0.1 * g;
                vv[k] = 0.999 * vv[k] + 0.001 * g * g;
                let mh = mm[k] / (1.0 - 0.9f64.powi(t));
                let vh = vv[k] / (1.0 - 0.999f64.powi(t));
                p[k] -= 0.1 * mh / (vh.sqrt() + 1e-8);
            }
            let mut g = m.zero_gradients();
            g.tensors[0].data_mut()[0] = gs[0];
            g.tensors[0].data_mut()[1] = gs[1];
            adam_step(&mut m, &g, &cfg).unwrap();
        }
        assert!((m.layers[0].conv.weights.data()[0] - p[0]).abs() < 1e-10);
        assert!((m.layers[0].conv.weights.data()[1] - p[1]).abs() < 1e-10);
    }

    #[test]
    fn non_finite_gradient_names_the_layer() {
        let mut m = small_model();
        let mut g = m.zero_gradients();
        let last = g.tensors.len() - 1;
        g.tensors[last].data_mut()[0] = f64::NAN;
        let err = adam_step(&mut m, &g, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("layer2"), "{err}");
        assert_eq!(m.step_count, 0);
    }
}
