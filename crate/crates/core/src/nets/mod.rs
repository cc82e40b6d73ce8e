//! Model zoo and the small training engine behind it.

pub mod checkpoint;
pub mod im2col;
pub mod layers;
pub mod network;
pub mod optim;
pub mod output_mode;
pub mod zoo;

pub use checkpoint::{load_models, save_models, LoadedModel, ModelSpec};
pub use network::{Layer, Network};
pub use optim::{Optimizer, OptimizerKind};
pub use output_mode::{apply_output_mode, argmax, round_simplex, softmax, OutputMode, Released};
pub use zoo::{
    build_classifier, build_decoder, set_decoder_prior, ClassifierSpec, DecoderSpec, Family, DEFAULT_WRN_DEPTH,
};
