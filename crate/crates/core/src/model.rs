//! Versioned JSON container for trained classifiers.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blstm::{BlstmConfig, BlstmNetwork, ClassPosterior, Tensor};
use crate::error::{Error, Result};
use crate::hmm::HmmClassifier;
use crate::seq::{ClassSet, FeatureSeq, NormalizationStats};

pub const MODEL_VERSION: u32 = 1;

/// What a model consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureKind {
    /// `(x, y, pen_start)` per trajectory point, after optional height
    /// normalization and resampling at `resample_step`.
    Trajectory { resample_step: Option<f64> },
    /// Column occupancy of a size- and width-normalized image.
    RawPixel {
        target_height: usize,
        stroke_width: usize,
        bin_height: usize,
    },
}

impl FeatureKind {
    pub fn width(&self) -> usize {
        match self {
            FeatureKind::Trajectory { .. } => 3,
            FeatureKind::RawPixel { bin_height, .. } => *bin_height,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Blstm(BlstmNetwork),
    Hmm(HmmClassifier),
}

impl Classifier {
    pub fn kind(&self) -> &'static str {
        match self {
            Classifier::Blstm(_) => "blstm",
            Classifier::Hmm(_) => "hmm",
        }
    }

    pub fn predict(&self, seq: &FeatureSeq) -> Result<ClassPosterior> {
        match self {
            Classifier::Blstm(net) => net.predict(seq),
            Classifier::Hmm(h) => Ok(h.classify(seq)?.posterior),
        }
    }
}

/// A trained classifier with what is needed to feed it.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub classes: ClassSet,
    pub features: FeatureKind,
    /// Statistics of the training set, for callers that standardize with them.
    pub stats: Option<NormalizationStats>,
    pub classifier: Classifier,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Body {
    Blstm { config: BlstmConfig, tensors: Vec<Tensor> },
    Hmm { classifier: HmmClassifier },
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    classes: Vec<String>,
    features: FeatureKind,
    stats: Option<NormalizationStats>,
    #[serde(flatten)]
    body: Body,
}

impl Model {
    pub fn to_json(&self) -> Result<String> {
        let body = match &self.classifier {
            Classifier::Blstm(net) => Body::Blstm {
                config: net.config().clone(),
                tensors: net.to_tensors(),
            },
            Classifier::Hmm(h) => Body::Hmm { classifier: h.clone() },
        };
        let file = ModelFile {
            version: MODEL_VERSION,
            classes: self.classes.labels.clone(),
            features: self.features.clone(),
            stats: self.stats.clone(),
            body,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Format("model file has no version".into()))?;
        if version != u64::from(MODEL_VERSION) {
            return Err(Error::UnknownVersion(u32::try_from(version).unwrap_or(u32::MAX)));
        }
        let file: ModelFile = serde_json::from_value(value)?;
        let classes = ClassSet::new(file.classes);
        let classifier = match file.body {
            Body::Blstm { config, tensors } => Classifier::Blstm(BlstmNetwork::from_tensors(config, &tensors)?),
            Body::Hmm { classifier } => {
                classifier.validate()?;
                Classifier::Hmm(classifier)
            }
        };
        let model = Self {
            classes,
            features: file.features,
            stats: file.stats,
            classifier,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let (width, k) = match &self.classifier {
            Classifier::Blstm(net) => (net.input_size(), net.classes()),
            Classifier::Hmm(h) => (h.models[0].width, h.models.len()),
        };
        if width != self.features.width() {
            return Err(Error::ShapeError(format!(
                "model input width {width} does not match its features ({})",
                self.features.width()
            )));
        }
        if k != self.classes.len() {
            return Err(Error::ShapeError(format!(
                "model has {k} outputs for {} classes",
                self.classes.len()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::io::read_to_string(crate::io::open(path)?)?)
    }
}
