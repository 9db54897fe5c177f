//! Synthesis of locally- and globally-distorted image datasets, a small
//! patch-based distortion classifier with a sliding-window detector, and
//! detection-style evaluation (accuracy, mAP over IoU thresholds, size
//! buckets, transfer tables).
//!
//! Pipeline: pristine reference images go through the eight distortion
//! operators ([`distort`]) either whole-image (classification task) or in
//! sampled rectangular regions ([`region`], detection task); [`dataset`]
//! persists images plus JSONL manifests; [`model`] trains and runs the
//! patch classifier; [`eval`] scores predictions against manifests.
//!
//! Everything is deterministic given a master seed: randomness flows
//! through explicit [`rng::RngStream`] values, so rebuilds are
//! byte-identical regardless of thread count.

pub mod dataset;
pub mod distort;
mod error;
pub mod eval;
mod image;
mod io;
pub mod model;
pub mod region;
mod resize;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use image::{ByteImage, Image, RealImage, Rect};
pub use io::{image_dimensions, load_image, save_image, SaveFormat};
pub use resize::resize_bilinear;
pub use rng::RngStream;
