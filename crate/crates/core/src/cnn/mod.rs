//! The 3D convolutional classifier with hand-written reverse-mode gradients.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use layers::{conv3d_backward, conv3d_forward, softmax_cross_entropy, Conv3d, MaxPool3d};
pub use metrics::{Confusion, Metrics};
pub use network::{ActivationPattern, Layer, ModelParams, Network, NetworkSpec, Param, ShapeStep};
pub use optim::{Adam, AdamConfig};
pub use train::{evaluate, predict, stratified_split, train, Dataset, EpochMetrics, Split, TrainConfig, Trained};
