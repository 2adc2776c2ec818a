//! Pyramidal convolutional network for classifying first-person camera frames
//! into twelve environmental fall-hazard classes.
//!
//! The pipeline is: decode a PGM/PPM/PNG frame, convert to grayscale, resize
//! to 32x32, normalize to `[-1, 1]`, and run it through
//! `C1(64@5x5) -> S2(max 2x2) -> C3(32@3x3) -> S4(max 2x2) -> C5(16@6x6) -> F6(12)`.
//! Training is full-batch MSE with iRprop-.
//!
//! ```no_run
//! use pyranet_core::{dataset, training, Network, PyraNetConfig, TrainConfig};
//!
//! let data = dataset::synth_dataset(10, 7);
//! let net = Network::init(PyraNetConfig::default(), 42).unwrap();
//! let (net, history) = training::fit(net, &data, &TrainConfig::default()).unwrap();
//! println!("final mse {}", history.last().unwrap().mse);
//! # let _ = net;
//! ```

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod model_io;
pub mod network;
pub mod tensor;
pub mod training;

/// Number of hazard classes and F6 output neurons.
pub const NUM_CLASSES: usize = 12;

pub use dataset::{ClassLabel, Dataset, LabeledImage, RawImage};
pub use error::{Error, Result};
pub use evaluation::{evaluate, predict, EvalReport, Prediction, Scorer};
pub use model_io::{load_model, save_model};
pub use network::{
    shape_plan, ForwardCache, GradientSet, LayerShape, Network, ParamBanks, PyraNetConfig,
};
pub use tensor::{ActivationKind, KernelBank, PoolCache, Shape, Tensor};
pub use training::{fit, EpochMetrics, RpropState, TrainConfig};
