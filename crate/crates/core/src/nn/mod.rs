//! Small CNN / fully-connected classifiers with hand-written backpropagation.
//!
//! Convolutions are 3-wide with stride 1: the first layer is padded to keep
//! the input size, later layers are unpadded. A single 2x2 (or 1x2 for 1-D
//! inputs) stride-2 max-pool follows the stack, then one fully-connected
//! layer into a log-softmax (two-node) or sigmoid (one-node) head.

pub mod checkpoint;
pub mod layers;
pub mod network;
pub mod optim;
pub mod real;
pub mod spec;
pub mod train;

pub use network::{loss, predictions, Gradients, Network};
pub use optim::{Optimizer, OptimizerChoice, TrainingConfig};
pub use real::Real;
pub use spec::{Architecture, ConvDim, Head, NetworkSpec, Shape};
pub use train::{predict_all, train, Dataset, TrainReport};
