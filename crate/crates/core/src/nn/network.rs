//! Forward and handwritten backward pass of the (guided) DnCNN.

use super::activation::{relu_backward, relu_inplace};
use super::batchnorm::{batchnorm_backward, batchnorm_eval, batchnorm_forward, BatchNormCache, Mode};
use super::conv::{conv2d_backward, conv2d_forward};
use super::model::{Gradients, ModelState};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Activations retained by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T = f32> {
    /// Input of every conv layer; for layers > 0 this is the previous ReLU output.
    conv_inputs: Vec<Tensor<T>>,
    bn: Vec<Option<BatchNormCache<T>>>,
}

/// Concatenate the noisy image and optional guidance along the channel axis.
pub fn assemble_input<T: Element>(
    noisy: &Tensor<T>,
    guidance: Option<&Tensor<T>>,
    in_channels: usize,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = noisy.dims4()?;
    if c != 1 {
        return Err(Error::Shape {
            context: "noisy input channels",
            expected: vec![1],
            actual: vec![c],
        });
    }
    if h < 3 || w < 3 {
        return Err(Error::invalid(format!("input must be at least 3x3, got {h}x{w}")));
    }
    match (guidance, in_channels) {
        (None, 1) => Ok(noisy.clone()),
        (Some(g), 2) => {
            noisy.ensure_same_shape(g, "guidance image")?;
            let hw = h * w;
            let mut data = Vec::with_capacity(2 * n * hw);
            for b in 0..n {
                data.extend_from_slice(&noisy.data()[b * hw..(b + 1) * hw]);
                data.extend_from_slice(&g.data()[b * hw..(b + 1) * hw]);
            }
            Tensor::from_vec(&[n, 2, h, w], data)
        }
        (Some(_), _) => Err(Error::SpecMismatch(
            "guidance image supplied to a plain (single-channel) model".into(),
        )),
        (None, _) => Err(Error::SpecMismatch("guided model requires a guidance image".into())),
    }
}

/// Predict the residual (noise) image.
///
/// In [`Mode::Train`] batch statistics are used, BN running statistics in
/// `model` are updated and a cache for [`network_backward`] is returned.
pub fn network_forward<T: Element>(
    noisy: &Tensor<T>,
    guidance: Option<&Tensor<T>>,
    model: &mut ModelState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, Option<ForwardCache<T>>)> {
    if mode == Mode::Eval {
        return Ok((predict_residual(noisy, guidance, model)?, None));
    }
    let mut x = assemble_input(noisy, guidance, model.spec.in_channels)?;
    let depth = model.layers.len();
    let mut conv_inputs = Vec::with_capacity(depth);
    let mut bn_caches = Vec::with_capacity(depth);
    for (i, layer) in model.layers.iter_mut().enumerate() {
        let mut y = conv2d_forward(&x, &layer.conv)?;
        conv_inputs.push(x);
        let mut bn_cache = None;
        if let Some(bn) = &mut layer.bn {
            let (z, cache) = batchnorm_forward(&y, bn, Mode::Train)?;
            y = z;
            bn_cache = cache;
        }
        bn_caches.push(bn_cache);
        if i + 1 < depth {
            relu_inplace(&mut y);
        }
        x = y;
    }
    Ok((
        x,
        Some(ForwardCache {
            conv_inputs,
            bn: bn_caches,
        }),
    ))
}

/// Eval-mode residual prediction; does not touch `model`.
pub fn predict_residual<T: Element>(
    noisy: &Tensor<T>,
    guidance: Option<&Tensor<T>>,
    model: &ModelState<T>,
) -> Result<Tensor<T>> {
    let mut x = assemble_input(noisy, guidance, model.spec.in_channels)?;
    let depth = model.layers.len();
    for (i, layer) in model.layers.iter().enumerate() {
        x = conv2d_forward(&x, &layer.conv)?;
        if let Some(bn) = &layer.bn {
            x = batchnorm_eval(&x, bn)?;
        }
        if i + 1 < depth {
            relu_inplace(&mut x);
        }
    }
    Ok(x)
}

/// Backpropagate `grad_residual` (dLoss/dResidual) through the network.
pub fn network_backward<T: Element>(
    grad_residual: &Tensor<T>,
    cache: Option<&ForwardCache<T>>,
    model: &ModelState<T>,
) -> Result<Gradients<T>> {
    let cache = cache.ok_or(Error::MissingCache("network"))?;
    let depth = model.layers.len();
    if cache.conv_inputs.len() != depth {
        return Err(Error::invalid("forward cache does not match model depth"));
    }
    // gradients per layer in trainable order: weights, bias?, gamma?, beta?
    let mut per_layer: Vec<Vec<Tensor<T>>> = vec![Vec::new(); depth];
    let mut grad = grad_residual.clone();
    for i in (0..depth).rev() {
        let layer = &model.layers[i];
        if i + 1 < depth {
            // ReLU output of layer i is the conv input of layer i + 1
            grad = relu_backward(&grad, &cache.conv_inputs[i + 1])?;
        }
        let mut bn_grads = None;
        if layer.bn.is_some() {
            let g = batchnorm_backward(&grad, cache.bn[i].as_ref())?;
            grad = g.input;
            bn_grads = Some((g.gamma, g.beta));
        }
        let cg = conv2d_backward(&grad, Some(&cache.conv_inputs[i]), &layer.conv)?;
        let entry = &mut per_layer[i];
        entry.push(cg.weights);
        if let Some(b) = cg.bias {
            entry.push(b);
        }
        if let Some((g, b)) = bn_grads {
            entry.push(g);
            entry.push(b);
        }
        grad = cg.input;
    }
    Ok(Gradients {
        tensors: per_layer.into_iter().flatten().collect(),
    })
}

/// `noisy - residual`, computed in eval mode.
pub fn denoise<T: Element>(
    noisy: &Tensor<T>,
    guidance: Option<&Tensor<T>>,
    model: &ModelState<T>,
) -> Result<Tensor<T>> {
    let residual = predict_residual(noisy, guidance, model)?;
    noisy.sub(&residual)
}
