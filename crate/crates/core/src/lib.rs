//! Online handwriting recognition for scripts with curved strokes and
//! headlines: synthetic data, rasterization and thinning, stroke recovery
//! from offline images, a bidirectional LSTM classifier, an HMM baseline and
//! a two-model combiner.

pub mod blstm;
pub mod ensemble;
pub mod harness;
pub mod error;
pub mod hmm;
pub mod io;
pub mod model;
pub mod raster;
pub mod rng;
pub mod seq;
pub mod strokerec;
pub mod synth;

pub use error::{Error, Result};
pub use seq::{
    ClassSet, Components, DatasetSplit, EncodedSequence, FeatureSeq, FeatureVector, Granularity, NormalizationStats, Point2,
    Stroke, StrokeSample,
};
