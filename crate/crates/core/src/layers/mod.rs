//! Differentiable layer primitives.

pub mod activation;
pub mod batchnorm;
pub mod conv;
mod gemm;
pub mod gradcheck;
pub mod linear;
pub mod loss;
pub mod optim;
pub mod pool;

pub use activation::{relu_backward, relu_forward};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward_eval, batchnorm_forward_train, BnCache, BnGrads, BnParams,
};
pub use conv::{conv2d_backward, conv2d_forward, conv2d_forward_reference, ConvGrads, ConvParams};
pub use linear::{linear_backward, linear_forward, LinearGrads, LinearParams};
pub use loss::{softmax, softmax_cross_entropy};
pub use optim::sgd_step;
pub use pool::{global_avg_pool_backward, global_avg_pool_forward, maxpool_backward, maxpool_forward};
