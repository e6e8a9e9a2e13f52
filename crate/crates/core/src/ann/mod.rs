//! Neural-network depth classification of photocount histograms.
//!
//! Training data are model-based: twin-beam sources post-selected on a signal
//! count give idler photon-number distributions whose depth is computed
//! exactly, and whose photocount histograms (optionally with sampling noise)
//! become the network inputs. The classifier is a small fully connected ReLU
//! network with a softmax output over equidistant depth classes.

mod data;
mod model;
mod scheme;
mod train;

pub use data::{
    balance_classes, generate_training_set, grid_points, linspace, max_pair_intensity, oracle_tau, resample_input,
    GridPoint, InputResponse, Sample, SourceFamily, TrainingConfig, TrainingMetadata, TrainingSet,
    DEFAULT_NOISE_FRAMES,
};
pub use model::{
    adam_step, backprop, cross_entropy, default_hidden, mlp_forward, softmax, Activation, AdamState, Gradients,
    MlpModel, INPUT_LEN, PROB_CLAMP,
};
pub use scheme::ClassScheme;
pub use train::{
    architecture_sweep, argmax, classify, evaluate, input_from_histogram, split_indices, train, Classification,
    EpochMetrics, Evaluation, SweepEntry, TrainConfig, TrainResult,
};
