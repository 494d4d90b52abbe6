//! Network description, parameter storage and initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::batchnorm::BatchNormParams;
use super::conv::{ConvLayerParams, KERNEL};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Shape of a (guided) DnCNN: `depth` conv layers of `width` channels.
///
/// Layer 1 is Conv+ReLU, layers 2..depth-1 are Conv+BN+ReLU and the last
/// layer is a single-output Conv. `in_channels == 2` means the low-b
/// guidance image rides along as a second input channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub depth: usize,
    pub width: usize,
    pub in_channels: usize,
}

impl NetworkSpec {
    pub fn new(depth: usize, width: usize, guided: bool) -> Result<Self> {
        let spec = NetworkSpec {
            depth,
            width,
            in_channels: if guided { 2 } else { 1 },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 3 {
            return Err(Error::invalid(format!("network depth must be >= 3, got {}", self.depth)));
        }
        if !(1..=2).contains(&self.in_channels) {
            return Err(Error::invalid(format!(
                "in_channels must be 1 or 2, got {}",
                self.in_channels
            )));
        }
        if self.width == 0 {
            return Err(Error::invalid("network width must be positive"));
        }
        Ok(())
    }

    pub fn is_guided(&self) -> bool {
        self.in_channels == 2
    }

    /// `(in, out, has_bias, has_bn)` for layer `index` (0-based).
    pub fn layer_shape(&self, index: usize) -> (usize, usize, bool, bool) {
        let last = self.depth - 1;
        match index {
            0 => (self.in_channels, self.width, true, false),
            i if i == last => (self.width, 1, true, false),
            _ => (self.width, self.width, false, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T = f32> {
    pub conv: ConvLayerParams<T>,
    pub bn: Option<BatchNormParams<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weights,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Weights => "weights",
            ParamKind::Bias => "bias",
            ParamKind::Gamma => "gamma",
            ParamKind::Beta => "beta",
            ParamKind::RunningMean => "running_mean",
            ParamKind::RunningVar => "running_var",
        }
    }

    pub fn is_trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId {
    pub layer: usize,
    pub kind: ParamKind,
}

impl std::fmt::Display for ParamId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "layer{}.{}", self.layer, self.kind.name())
    }
}

/// Network parameters, ADAM moments and BN running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T = f32> {
    pub spec: NetworkSpec,
    pub layers: Vec<LayerParams<T>>,
    /// First moments, aligned with [`ModelState::trainable`].
    pub adam_m: Vec<Tensor<T>>,
    /// Second moments, aligned with [`ModelState::trainable`].
    pub adam_v: Vec<Tensor<T>>,
    pub step_count: u64,
}

/// Per-parameter gradients aligned with [`ModelState::trainable`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Element> ModelState<T> {
    /// All parameter tensors in the stable enumeration order: layer index
    /// ascending, then weights, bias, gamma, beta, running_mean, running_var
    /// (absent entries skipped).
    pub fn state_tensors(&self) -> Vec<(ParamId, &Tensor<T>)> {
        let mut out = Vec::new();
        for (layer, p) in self.layers.iter().enumerate() {
            let id = |kind| ParamId { layer, kind };
            out.push((id(ParamKind::Weights), &p.conv.weights));
            if let Some(b) = &p.conv.bias {
                out.push((id(ParamKind::Bias), b));
            }
            if let Some(bn) = &p.bn {
                out.push((id(ParamKind::Gamma), &bn.gamma));
                out.push((id(ParamKind::Beta), &bn.beta));
                out.push((id(ParamKind::RunningMean), &bn.running_mean));
                out.push((id(ParamKind::RunningVar), &bn.running_var));
            }
        }
        out
    }

    pub fn state_tensors_mut(&mut self) -> Vec<(ParamId, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (layer, p) in self.layers.iter_mut().enumerate() {
            let id = |kind| ParamId { layer, kind };
            out.push((id(ParamKind::Weights), &mut p.conv.weights));
            if let Some(b) = &mut p.conv.bias {
                out.push((id(ParamKind::Bias), b));
            }
            if let Some(bn) = &mut p.bn {
                out.push((id(ParamKind::Gamma), &mut bn.gamma));
                out.push((id(ParamKind::Beta), &mut bn.beta));
                out.push((id(ParamKind::RunningMean), &mut bn.running_mean));
                out.push((id(ParamKind::RunningVar), &mut bn.running_var));
            }
        }
        out
    }

    /// Trainable parameters (weights, bias, gamma, beta) in enumeration order.
    pub fn trainable(&self) -> Vec<(ParamId, &Tensor<T>)> {
        self.state_tensors()
            .into_iter()
            .filter(|(id, _)| id.kind.is_trainable())
            .collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<(ParamId, &mut Tensor<T>)> {
        self.state_tensors_mut()
            .into_iter()
            .filter(|(id, _)| id.kind.is_trainable())
            .collect()
    }

    /// Build a model from explicit layers with fresh optimizer state.
    pub fn from_layers(spec: NetworkSpec, layers: Vec<LayerParams<T>>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.depth {
            return Err(Error::invalid(format!(
                "expected {} layers, got {}",
                spec.depth,
                layers.len()
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            let (cin, cout, bias, bn) = spec.layer_shape(i);
            if l.conv.in_channels() != cin || l.conv.out_channels() != cout {
                return Err(Error::SpecMismatch(format!(
                    "layer {i}: expected {cin}->{cout} channels, got {}->{}",
                    l.conv.in_channels(),
                    l.conv.out_channels()
                )));
            }
            if l.conv.bias.is_some() != bias || l.bn.is_some() != bn {
                return Err(Error::SpecMismatch(format!("layer {i}: bias/batchnorm layout differs")));
            }
        }
        let mut model = ModelState {
            spec,
            layers,
            adam_m: Vec::new(),
            adam_v: Vec::new(),
            step_count: 0,
        };
        model.reset_optimizer();
        Ok(model)
    }

    pub fn reset_optimizer(&mut self) {
        let zeros: Vec<Tensor<T>> = self
            .trainable()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        self.adam_m = zeros.clone();
        self.adam_v = zeros;
        self.step_count = 0;
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            tensors: self
                .trainable()
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|(_, t)| t.len()).sum()
    }

    /// Convert every tensor to another precision.
    pub fn cast<U: Element>(&self) -> ModelState<U> {
        ModelState {
            spec: self.spec,
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    conv: ConvLayerParams {
                        weights: l.conv.weights.cast(),
                        bias: l.conv.bias.as_ref().map(Tensor::cast),
                    },
                    bn: l.bn.as_ref().map(|bn| BatchNormParams {
                        gamma: bn.gamma.cast(),
                        beta: bn.beta.cast(),
                        running_mean: bn.running_mean.cast(),
                        running_var: bn.running_var.cast(),
                        epsilon: bn.epsilon,
                        momentum: bn.momentum,
                    }),
                })
                .collect(),
            adam_m: self.adam_m.iter().map(Tensor::cast).collect(),
            adam_v: self.adam_v.iter().map(Tensor::cast).collect(),
            step_count: self.step_count,
        }
    }
}

/// He (fan-in) initialization: conv weights ~ N(0, 2 / (9 * in_ch)), biases
/// zero, BN gamma 1, beta 0, running mean 0, running var 1.
///
/// Draws are made in `f64` from a seeded ChaCha8 stream so the result is
/// identical for a given seed regardless of `T`.
pub fn init_params<T: Element>(spec: NetworkSpec, seed: u64) -> Result<ModelState<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(spec.depth);
    for i in 0..spec.depth {
        let (cin, cout, bias, bn) = spec.layer_shape(i);
        let std = (2.0 / (KERNEL * KERNEL * cin) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let weights = Tensor::from_fn(&[cout, cin, KERNEL, KERNEL], |_| {
            T::from_f64_lossy(normal.sample(&mut rng))
        });
        layers.push(LayerParams {
            conv: ConvLayerParams::new(weights, bias.then(|| Tensor::zeros(&[cout])))?,
            bn: bn.then(|| BatchNormParams::new(cout)),
        });
    }
    ModelState::from_layers(spec, layers)
}
