//! The patch-based distortion classifier: a small two-convolution network
//! over 32x32 patches, its trainer, whole-image inference, and the DDM1
//! model container.

mod infer;
mod net;
mod serial;
mod train;

pub use infer::{classify_image, detect, DetectParams, ScoredBox};
pub use net::{
    backward, forward, sgd_step, Architecture, BatchStats, Gradients, PatchClassifierModel,
    SgdMomentum,
};
pub use serial::{load_model, save_model};
pub use train::{curve_to_csv, train, EpochStats, TrainConfig, TrainedModel};
