//! From-scratch CNN building blocks and the (guided) DnCNN.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod loss;
pub mod model;
pub mod network;

pub use activation::{relu, relu_backward};
pub use adam::{adam_step, AdamConfig};
pub use batchnorm::{batchnorm_backward, batchnorm_eval, batchnorm_forward, BatchNormParams, Mode};
pub use conv::{conv2d_backward, conv2d_forward, ConvLayerParams};
pub use loss::mse_loss;
pub use model::{init_params, Gradients, LayerParams, ModelState, NetworkSpec, ParamId, ParamKind};
pub use network::{denoise, network_backward, network_forward, predict_residual, ForwardCache};
