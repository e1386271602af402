//! Toy networks and generator primitives.
//!
//! The MLPs stand in for the denoiser and classifier on low-dimensional
//! oracle data and are trained with hand-written backprop. The remaining
//! pieces (attention, global-local attention, confidence concatenation,
//! decoder fusion, composite loss) are forward-only building blocks.

mod attention;
pub mod checkpoint;
mod egla;
mod fusion;
mod loss;
mod mlp;
mod tensor;
mod train;

pub use attention::{attention, attention_weights, multi_head_attention, multi_head_attention_with_weights, MhaParams};
pub use egla::{egla_forward, EglaParams};
pub use fusion::{concat_confidence, fuse, fuse_outputs, DecoderBundle};
pub use loss::{composite_loss, composite_loss_default, DEFAULT_LAMBDA_CYC, DEFAULT_LAMBDA_IDE};
pub use mlp::{time_embedding, Activation, ForwardCache, Layer, Mlp};
pub use tensor::{flatten_tokens, max_pool_2x2, unflatten_tokens, upsample_bilinear, Conv2d, FeatureMap, Linear, Tensor3};
pub use train::{
    classifier_accuracy, cross_entropy_loss, default_classifier, default_denoiser, gradient_check, regression_loss,
    train_classifier, train_denoiser, GradCheck, OptimizerConfig, TimestepWeight, ToyClassifier, ToyDenoiser,
    TrainOutcome, GRAD_CHECK_FLOOR,
};
