//! Convolutional and fully connected networks over echo features, written
//! from scratch: layer kernels with hand-derived backward passes, minibatch
//! SGD, and a compact model file format.

pub mod arch;
pub mod gradcheck;
mod features;
pub mod model;
pub mod network;
pub mod ops;
mod tensor;
pub mod train;

pub use arch::{build_named_arch, cnn_variant, count_params, named_arch_names, CnnArch, FeatureKind, LayerSpec};
pub use model::{ModelBundle, Normalizer, Prediction};
pub use network::{BatchGradients, Gradients, Network};
pub use ops::{conv2d, dense, dropout, flatten, maxpool, relu, softmax, softmax_xent, DropoutMode, Padding};
pub use tensor::Tensor;
pub use train::{evaluate, train, Evaluation, History, HistoryRow, LabeledSet, TrainConfig};
