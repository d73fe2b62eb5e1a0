//! Experiment configuration and the train/evaluate/combine pipelines behind
//! the command-line tool.
//!
//! Every random choice derives from the config's root seed through named
//! substreams (`data`, `split`, `augment/*`, `init`, `shuffle`, `hmm`), so a
//! config fully determines its outputs apart from wall-clock fields.

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blstm::{self, BlstmConfig, BlstmNetwork, ClassPosterior, GradCheckConfig, Labelled, TrainConfig, TrainReport};
use crate::ensemble::{combine, BinaryDecision};
use crate::error::{Error, Result};
use crate::hmm::{self, HmmConfig, HmmTrainReport};
use crate::io;
use crate::model::{Classifier, FeatureKind, Model};
use crate::raster::{canvas_for_height, normalize_size, normalize_stroke_width, rasterize, raw_pixel_sequence, skeletonize};
use crate::rng::{derive_seed, item_stream};
use crate::seq::{
    encode, fit_standardizer, normalize_trajectory, split, standardize, ClassSet, Components, DatasetSplit, EncodedSequence, FeatureSeq, Granularity,
    NormalizationStats, StrokeSample,
};
use crate::strokerec::{prune_spurs, recover, RecoveryConfig};
use crate::synth::{gen_dataset, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Blstm,
    Hmm,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blstm" => Ok(ModelKind::Blstm),
            "hmm" => Ok(ModelKind::Hmm),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// How samples reach the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    /// Encoded pen trajectories.
    Online,
    /// Rendered, thinned and traced back into trajectories.
    OfflineRecovered,
    /// Column occupancy of the rendered image.
    OfflineRawpixel,
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "online" => Ok(Pipeline::Online),
            "offline-recovered" => Ok(Pipeline::OfflineRecovered),
            "offline-rawpixel" => Ok(Pipeline::OfflineRawpixel),
            other => Err(Error::Config(format!("unknown pipeline {other:?}"))),
        }
    }
}

/// Which statistics standardize an evaluated set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Standardization {
    /// Each dataset is standardized by its own statistics.
    PerDataset,
    /// Everything is standardized by the training set's statistics.
    TrainStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RasterSettings {
    pub pen_width: usize,
    pub char_canvas: (usize, usize),
    /// Words get this height and a width that follows their aspect ratio.
    pub word_height: usize,
    /// Raw-pixel pipeline: height after size normalization.
    pub target_height: usize,
    /// Raw-pixel pipeline: pen width after stroke-width normalization.
    pub stroke_width: usize,
    /// Raw-pixel pipeline: row bins per column.
    pub bin_height: usize,
}

impl Default for RasterSettings {
    fn default() -> Self {
        Self {
            pen_width: 3,
            char_canvas: (40, 40),
            word_height: 40,
            target_height: 32,
            stroke_width: 3,
            bin_height: 32,
        }
    }
}

impl RasterSettings {
    pub fn canvas_for(&self, sample: &StrokeSample) -> (usize, usize) {
        match sample.granularity {
            Granularity::Character => self.char_canvas,
            Granularity::Word => canvas_for_height(sample, self.word_height, self.pen_width),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.pen_width == 0 || self.stroke_width == 0 || self.bin_height == 0 {
            return Err(Error::Config("pen_width, stroke_width and bin_height must be positive".into()));
        }
        if self.bin_height > self.target_height {
            return Err(Error::Config("bin_height cannot exceed target_height".into()));
        }
        let (w, h) = self.char_canvas;
        let needed = 2 * self.pen_width + 4;
        if w < needed || h < needed || self.word_height < needed {
            return Err(Error::InvalidCanvas { width: w, height: h.min(self.word_height) });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSettings {
    pub hidden_sizes: Vec<usize>,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![16, 16, 16],
        }
    }
}

/// Optimizer settings; defaults are sized for minute-scale CPU runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub momentum: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            patience: 10,
            max_epochs: 60,
            batch_size: 16,
        }
    }
}

impl TrainSettings {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            patience: self.patience,
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySettings {
    /// Arc-length step, in units of sample height, at which every
    /// trajectory is resampled before encoding; 0 keeps the raw points.
    pub resample_step: f64,
}

impl Default for TrajectorySettings {
    fn default() -> Self {
        Self { resample_step: 0.1 }
    }
}

/// HMM settings; the variance floor is raised above the library default
/// because the pen-start feature is binary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmmSettings {
    pub states: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub restarts: usize,
    pub variance_floor: f64,
}

impl Default for HmmSettings {
    fn default() -> Self {
        Self {
            variance_floor: 0.1,
            ..HmmSettings::from(&HmmConfig::default())
        }
    }
}

impl From<&HmmConfig> for HmmSettings {
    fn from(c: &HmmConfig) -> Self {
        Self {
            states: c.states,
            max_iterations: c.max_iterations,
            tolerance: c.tolerance,
            restarts: c.restarts,
            variance_floor: c.variance_floor,
        }
    }
}

impl HmmSettings {
    pub fn to_config(&self) -> HmmConfig {
        HmmConfig {
            states: self.states,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            restarts: self.restarts,
            variance_floor: self.variance_floor,
        }
    }
}

/// Training-set augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSettings {
    /// Each training and validation sample has its x coordinates scaled by
    /// a log-uniform factor in `[x_squeeze_min, 1]`; 1 disables it. A word
    /// standardized as a whole has far narrower letters than a character
    /// standardized on its own, and this shows the classifier such glyphs.
    pub x_squeeze_min: f64,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        Self { x_squeeze_min: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckSettings {
    pub trials: usize,
    pub tolerance: f64,
    pub input_size: usize,
    pub hidden_sizes: Vec<usize>,
    pub classes: usize,
    pub length: usize,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        let c = GradCheckConfig::default();
        Self {
            trials: 5,
            tolerance: 1e-4,
            input_size: c.input_size,
            hidden_sizes: c.hidden_sizes,
            classes: c.classes,
            length: c.length,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every random substream.
    pub seed: u64,
    /// Stroke files to read; empty means generate data from `synth`, whose
    /// own seed is replaced by the `data` substream of `seed`.
    pub samples: Vec<PathBuf>,
    pub synth: SynthConfig,
    pub model: ModelKind,
    pub pipeline: Pipeline,
    pub train_granularity: Granularity,
    pub eval_granularity: Granularity,
    /// Train, validation and test fractions of the training granularity.
    pub fractions: (f64, f64, f64),
    pub standardization: Standardization,
    pub raster: RasterSettings,
    pub recovery: RecoveryConfig,
    pub trajectory: TrajectorySettings,
    pub network: NetworkSettings,
    pub train: TrainSettings,
    pub hmm: HmmSettings,
    pub augment: AugmentSettings,
    pub gradcheck: GradCheckSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            samples: Vec::new(),
            synth: SynthConfig::default(),
            model: ModelKind::Blstm,
            pipeline: Pipeline::Online,
            train_granularity: Granularity::Character,
            eval_granularity: Granularity::Word,
            fractions: (0.625, 0.125, 0.25),
            standardization: Standardization::PerDataset,
            raster: RasterSettings::default(),
            recovery: RecoveryConfig::default(),
            trajectory: TrajectorySettings::default(),
            network: NetworkSettings::default(),
            train: TrainSettings::default(),
            hmm: HmmSettings::default(),
            augment: AugmentSettings::default(),
            gradcheck: GradCheckSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            self.synth.validate()?;
        }
        let (a, b, c) = self.fractions;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidFractions(format!("{:?} must be positive and sum to 1", self.fractions)));
        }
        self.raster.validate()?;
        if self.network.hidden_sizes.is_empty() || self.network.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden_sizes must be non-empty and positive".into()));
        }
        self.train.to_config(0).validate()?;
        self.hmm.to_config().validate()?;
        let step = self.trajectory.resample_step;
        if !(step >= 0.0 && step.is_finite()) {
            return Err(Error::Config(format!("resample_step {step} must be non-negative")));
        }
        let m = self.augment.x_squeeze_min;
        if !(m > 0.0 && m <= 1.0) {
            return Err(Error::Config(format!("x_squeeze_min {m} must lie in (0, 1]")));
        }
        Ok(())
    }

    /// Hex SHA-256 of the config's canonical JSON.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: derive_seed(self.seed, "data"),
            ..self.synth.clone()
        }
    }

    pub fn feature_kind(&self) -> FeatureKind {
        match self.pipeline {
            Pipeline::OfflineRawpixel => FeatureKind::RawPixel {
                target_height: self.raster.target_height,
                stroke_width: self.raster.stroke_width,
                bin_height: self.raster.bin_height,
            },
            Pipeline::Online | Pipeline::OfflineRecovered => FeatureKind::Trajectory {
                resample_step: Some(self.trajectory.resample_step).filter(|&s| s > 0.0),
            },
        }
    }

    pub fn gradcheck_config(&self) -> GradCheckConfig {
        let g = &self.gradcheck;
        GradCheckConfig {
            input_size: g.input_size,
            hidden_sizes: g.hidden_sizes.clone(),
            classes: g.classes,
            length: g.length,
            seed: derive_seed(self.seed, "gradcheck"),
        }
    }
}

/// The configured stroke files, or freshly generated synthetic data.
pub fn load_data(config: &ExperimentConfig) -> Result<Vec<StrokeSample>> {
    if config.samples.is_empty() {
        return gen_dataset(&config.synth_config());
    }
    let mut all = Vec::new();
    for path in &config.samples {
        all.extend(io::load_samples(path)?);
    }
    Ok(all)
}

pub fn of_granularity(data: &[StrokeSample], granularity: Granularity) -> Vec<StrokeSample> {
    data.iter().filter(|s| s.granularity == granularity).cloned().collect()
}

/// Split of the training-granularity samples.
pub fn training_split(config: &ExperimentConfig, data: &[StrokeSample]) -> Result<DatasetSplit> {
    let subset = of_granularity(data, config.train_granularity);
    if subset.is_empty() {
        return Err(Error::Config(format!("no {} samples to train on", config.train_granularity)));
    }
    split(&subset, config.fractions, derive_seed(config.seed, "split"))
}

/// Samples to evaluate on: the held-out test part when evaluating at the
/// training granularity, otherwise every sample of the evaluation
/// granularity.
pub fn evaluation_set(config: &ExperimentConfig, data: &[StrokeSample]) -> Result<Vec<StrokeSample>> {
    let set = if config.eval_granularity == config.train_granularity {
        training_split(config, data)?.test
    } else {
        of_granularity(data, config.eval_granularity)
    };
    if set.is_empty() {
        return Err(Error::Config(format!("no {} samples to evaluate", config.eval_granularity)));
    }
    Ok(set)
}

/// Scale x coordinates of each sample by a seeded log-uniform factor in
/// `[min, 1]`.
pub fn squeeze_x(samples: &[StrokeSample], min: f64, seed: u64, stream: &str) -> Vec<StrokeSample> {
    if min >= 1.0 {
        return samples.to_vec();
    }
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let f = item_stream(seed, stream, i as u64).random_range(min.ln()..=0.0).exp();
            let mut out = s.clone();
            for p in out.strokes.iter_mut().flat_map(|st| st.points.iter_mut()) {
                p.x *= f;
            }
            out
        })
        .collect()
}

/// Output of offline stroke recovery for one sample.
#[derive(Debug, Clone)]
pub struct Recovered {
    pub sample: StrokeSample,
    pub coverage: f64,
}

pub fn recover_offline(sample: &StrokeSample, raster: &RasterSettings, recovery: &RecoveryConfig) -> Result<Recovered> {
    let img = rasterize(sample, raster.canvas_for(sample), raster.pen_width)?.image;
    let skel = prune_spurs(&skeletonize(&img)?, recovery.spur_length)?;
    let result = recover(&skel, recovery)?;
    Ok(Recovered {
        sample: result.to_sample(&sample.id, &sample.label, sample.granularity),
        coverage: result.coverage,
    })
}

fn rawpixel_features(sample: &StrokeSample, raster: &RasterSettings, kind: &FeatureKind) -> Result<FeatureSeq> {
    let FeatureKind::RawPixel {
        target_height,
        stroke_width,
        bin_height,
    } = *kind
    else {
        return Err(Error::Config("raw-pixel features requested from a trajectory model".into()));
    };
    let img = rasterize(sample, raster.canvas_for(sample), raster.pen_width)?.image;
    let img = normalize_stroke_width(&normalize_size(&img, target_height)?, stroke_width)?;
    raw_pixel_sequence(&img, bin_height)
}

/// Resample if asked, encode and standardize; `stats` of `None` fits them
/// on `samples`.
pub fn trajectory_features(
    samples: &[StrokeSample],
    resample_step: Option<f64>,
    stats: Option<&NormalizationStats>,
) -> Result<(Vec<FeatureSeq>, NormalizationStats)> {
    let encoded: Vec<EncodedSequence> = samples
        .par_iter()
        .map(|s| match resample_step {
            Some(step) => encode(&normalize_trajectory(s, step)?),
            None => encode(s),
        })
        .collect::<Result<_>>()?;
    let stats = match stats {
        Some(s) => s.clone(),
        None => fit_standardizer(&encoded, Components::XY)?,
    };
    let feats = encoded
        .iter()
        .map(|e| standardize(e, &stats).map(|s| s.features()))
        .collect::<Result<_>>()?;
    Ok((feats, stats))
}

fn class_indices(classes: &ClassSet, samples: &[StrokeSample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            classes
                .index_of(&s.label)
                .ok_or_else(|| Error::Config(format!("label {:?} of {} is not a trained class", s.label, s.id)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverySummary {
    pub mean_coverage: f64,
    pub min_coverage: f64,
    pub mean_strokes: f64,
    /// Fraction of samples whose recovered stroke count equals the original.
    pub stroke_count_match: f64,
}

/// Features for `samples` as `model` expects them under `pipeline`.
pub fn model_features(
    model: &Model,
    pipeline: Pipeline,
    samples: &[StrokeSample],
    config: &ExperimentConfig,
) -> Result<(Vec<FeatureSeq>, Option<RecoverySummary>)> {
    if samples.is_empty() {
        return Err(Error::Config("empty evaluation set".into()));
    }
    let rawpixel_model = matches!(model.features, FeatureKind::RawPixel { .. });
    if rawpixel_model != (pipeline == Pipeline::OfflineRawpixel) {
        return Err(Error::Config(format!(
            "pipeline {pipeline:?} cannot feed a model trained on {:?} features",
            model.features
        )));
    }
    let resample_step = match model.features {
        FeatureKind::Trajectory { resample_step } => resample_step,
        FeatureKind::RawPixel { .. } => None,
    };
    let standardize_with = |set: &[StrokeSample]| -> Result<Vec<FeatureSeq>> {
        let stats = match config.standardization {
            Standardization::PerDataset => None,
            Standardization::TrainStats => Some(
                model
                    .stats
                    .as_ref()
                    .ok_or_else(|| Error::Config("model carries no training statistics".into()))?,
            ),
        };
        Ok(trajectory_features(set, resample_step, stats)?.0)
    };
    match pipeline {
        Pipeline::Online => Ok((standardize_with(samples)?, None)),
        Pipeline::OfflineRecovered => {
            let recovered: Vec<Recovered> = samples
                .par_iter()
                .map(|s| recover_offline(s, &config.raster, &config.recovery))
                .collect::<Result<_>>()?;
            let n = recovered.len() as f64;
            let summary = RecoverySummary {
                mean_coverage: recovered.iter().map(|r| r.coverage).sum::<f64>() / n,
                min_coverage: recovered.iter().map(|r| r.coverage).fold(1.0, f64::min),
                mean_strokes: recovered.iter().map(|r| r.sample.strokes.len() as f64).sum::<f64>() / n,
                stroke_count_match: recovered
                    .iter()
                    .zip(samples)
                    .filter(|(r, s)| r.sample.strokes.len() == s.strokes.len())
                    .count() as f64
                    / n,
            };
            let traced: Vec<StrokeSample> = recovered.into_iter().map(|r| r.sample).collect();
            Ok((standardize_with(&traced)?, Some(summary)))
        }
        Pipeline::OfflineRawpixel => {
            let feats = samples
                .par_iter()
                .map(|s| rawpixel_features(s, &config.raster, &model.features))
                .collect::<Result<_>>()?;
            Ok((feats, None))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub support: usize,
    /// Zero when the class is never predicted.
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub pipeline: Pipeline,
    pub samples: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    pub recovery: Option<RecoverySummary>,
    pub wall_time_secs: f64,
    pub config_digest: String,
}

impl MetricsReport {
    pub fn from_predictions(classes: &ClassSet, truth: &[usize], predicted: &[usize]) -> Self {
        let k = classes.len();
        let mut confusion = vec![vec![0usize; k]; k];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t][p] += 1;
        }
        let per_class = (0..k)
            .map(|c| {
                let support: usize = confusion[c].iter().sum();
                let predicted_c: usize = confusion.iter().map(|row| row[c]).sum();
                let hit = confusion[c][c] as f64;
                ClassMetrics {
                    label: classes.labels[c].clone(),
                    support,
                    precision: if predicted_c == 0 { 0.0 } else { hit / predicted_c as f64 },
                    recall: if support == 0 { 0.0 } else { hit / support as f64 },
                }
            })
            .collect();
        let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
        let samples = truth.len();
        Self {
            model: String::new(),
            pipeline: Pipeline::Online,
            samples,
            accuracy: if samples == 0 { 0.0 } else { correct as f64 / samples as f64 },
            per_class,
            confusion,
            recovery: None,
            wall_time_secs: 0.0,
            config_digest: String::new(),
        }
    }
}

/// Posteriors of `model` over `samples`, fed through `pipeline`.
pub fn predict(
    model: &Model,
    pipeline: Pipeline,
    samples: &[StrokeSample],
    config: &ExperimentConfig,
) -> Result<(Vec<ClassPosterior>, Option<RecoverySummary>)> {
    let (feats, summary) = model_features(model, pipeline, samples, config)?;
    let posteriors = feats.par_iter().map(|f| model.classifier.predict(f)).collect::<Result<_>>()?;
    Ok((posteriors, summary))
}

pub fn evaluate(model: &Model, pipeline: Pipeline, samples: &[StrokeSample], config: &ExperimentConfig) -> Result<MetricsReport> {
    let t0 = Instant::now();
    let truth = class_indices(&model.classes, samples)?;
    let (posteriors, recovery) = predict(model, pipeline, samples, config)?;
    let predicted: Vec<usize> = posteriors.iter().map(|p| p.predicted).collect();
    Ok(MetricsReport {
        model: model.classifier.kind().to_string(),
        pipeline,
        recovery,
        wall_time_secs: t0.elapsed().as_secs_f64(),
        config_digest: config.digest(),
        ..MetricsReport::from_predictions(&model.classes, &truth, &predicted)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: ModelKind,
    pub pipeline: Pipeline,
    pub granularity: Granularity,
    pub classes: Vec<String>,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub test_samples: usize,
    pub mean_sequence_length: f64,
    pub validation_accuracy: f64,
    pub test_accuracy: f64,
    pub blstm: Option<TrainReport>,
    pub hmm: Option<HmmTrainReport>,
    pub wall_time_secs: f64,
    pub config_digest: String,
}

pub struct TrainOutcome {
    pub model: Model,
    pub summary: TrainSummary,
    pub split: DatasetSplit,
}

fn labelled(feats: Vec<FeatureSeq>, labels: Vec<usize>) -> Vec<Labelled> {
    feats.into_iter().zip(labels).collect()
}

/// Train the configured model on the training split of `data`. Online and
/// offline-recovered configs both train on trajectories; raw-pixel configs
/// train on column sequences.
pub fn train_model(config: &ExperimentConfig, data: &[StrokeSample]) -> Result<TrainOutcome> {
    config.validate()?;
    let t0 = Instant::now();
    let split = training_split(config, data)?;
    let classes = ClassSet::from_samples(&split.train);
    if classes.len() < 2 {
        return Err(Error::Config("training needs at least two classes".into()));
    }
    // Trajectories are squeezed after resampling: letters inside a
    // standardized word keep a character's point count but lose width.
    let squeeze = |set: &[StrokeSample], part: &str| squeeze_x(set, config.augment.x_squeeze_min, config.seed, part);
    let kind = config.feature_kind();
    let (train_feats, val_feats, test_feats, stats) = match kind {
        FeatureKind::Trajectory { resample_step } => {
            let resampled = |set: &[StrokeSample]| -> Result<Vec<StrokeSample>> {
                match resample_step {
                    Some(step) => set.par_iter().map(|s| normalize_trajectory(s, step)).collect(),
                    None => Ok(set.to_vec()),
                }
            };
            let train_set = squeeze(&resampled(&split.train)?, "augment/train");
            let val_set = squeeze(&resampled(&split.validation)?, "augment/validation");
            let (tr, stats) = trajectory_features(&train_set, None, None)?;
            let fixed = match config.standardization {
                Standardization::PerDataset => None,
                Standardization::TrainStats => Some(&stats),
            };
            let va = trajectory_features(&val_set, None, fixed)?.0;
            let te = trajectory_features(&split.test, resample_step, fixed)?.0;
            (tr, va, te, Some(stats))
        }
        FeatureKind::RawPixel { .. } => {
            let feats = |set: &[StrokeSample]| -> Result<Vec<FeatureSeq>> {
                set.par_iter().map(|s| rawpixel_features(s, &config.raster, &kind)).collect()
            };
            let tr = feats(&squeeze(&split.train, "augment/train"))?;
            let va = feats(&squeeze(&split.validation, "augment/validation"))?;
            (tr, va, feats(&split.test)?, None)
        }
    };
    let mean_sequence_length = train_feats.iter().map(FeatureSeq::len).sum::<usize>() as f64 / train_feats.len() as f64;
    let train_l = labelled(train_feats, class_indices(&classes, &split.train)?);
    let val_l = labelled(val_feats, class_indices(&classes, &split.validation)?);
    let test_l = labelled(test_feats, class_indices(&classes, &split.test)?);

    let (classifier, blstm_report, hmm_report) = match config.model {
        ModelKind::Blstm => {
            let mut net = BlstmNetwork::new(BlstmConfig {
                input_size: kind.width(),
                hidden_sizes: config.network.hidden_sizes.clone(),
                classes: classes.len(),
                seed: derive_seed(config.seed, "init"),
            })?;
            let report = blstm::train(&mut net, &train_l, &val_l, &config.train.to_config(derive_seed(config.seed, "shuffle")))?;
            (Classifier::Blstm(net), Some(report), None)
        }
        ModelKind::Hmm => {
            let (h, report) = hmm::train_classifier(&train_l, &val_l, classes.len(), &config.hmm.to_config(), derive_seed(config.seed, "hmm"))?;
            (Classifier::Hmm(h), None, Some(report))
        }
    };
    let accuracy_on = |set: &[Labelled]| -> Result<f64> {
        if set.is_empty() {
            return Ok(0.0);
        }
        let hits: Vec<bool> = set
            .par_iter()
            .map(|(f, y)| classifier.predict(f).map(|p| p.predicted == *y))
            .collect::<Result<_>>()?;
        Ok(hits.iter().filter(|&&h| h).count() as f64 / set.len() as f64)
    };
    let validation_accuracy = accuracy_on(&val_l)?;
    let test_accuracy = accuracy_on(&test_l)?;
    let summary = TrainSummary {
        model: config.model,
        pipeline: config.pipeline,
        granularity: config.train_granularity,
        classes: classes.labels.clone(),
        train_samples: train_l.len(),
        validation_samples: val_l.len(),
        test_samples: test_l.len(),
        mean_sequence_length,
        validation_accuracy,
        test_accuracy,
        blstm: blstm_report,
        hmm: hmm_report,
        wall_time_secs: t0.elapsed().as_secs_f64(),
        config_digest: config.digest(),
    };
    let model = Model {
        classes,
        features: kind,
        stats,
        classifier,
    };
    Ok(TrainOutcome { model, summary, split })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombineReport {
    pub first: MetricsReport,
    pub second: MetricsReport,
    pub combined: MetricsReport,
    /// Samples on which the two models predicted different classes.
    pub disagreements: usize,
}

/// Evaluate two binary models and their error-based combination on the
/// same samples.
pub fn combine_models(
    first: (&Model, Pipeline),
    second: (&Model, Pipeline),
    samples: &[StrokeSample],
    config: &ExperimentConfig,
) -> Result<CombineReport> {
    let t0 = Instant::now();
    let (a, pa) = first;
    let (b, pb) = second;
    if a.classes != b.classes || a.classes.len() != 2 {
        return Err(Error::Config("combination needs two models over the same two classes".into()));
    }
    let truth = class_indices(&a.classes, samples)?;
    let (post_a, _) = predict(a, pa, samples, config)?;
    let (post_b, _) = predict(b, pb, samples, config)?;
    let mut predicted = Vec::with_capacity(samples.len());
    let mut disagreements = 0;
    for (x, y) in post_a.iter().zip(&post_b) {
        let (da, db) = (BinaryDecision::from_posterior(x)?, BinaryDecision::from_posterior(y)?);
        if da.predicted_class != db.predicted_class {
            disagreements += 1;
        }
        predicted.push(combine(da, db).predicted_class);
    }
    let first = evaluate(a, pa, samples, config)?;
    let second = evaluate(b, pb, samples, config)?;
    let combined = MetricsReport {
        model: format!("{}+{}", first.model, second.model),
        pipeline: pa,
        wall_time_secs: t0.elapsed().as_secs_f64(),
        config_digest: config.digest(),
        ..MetricsReport::from_predictions(&a.classes, &truth, &predicted)
    };
    Ok(CombineReport {
        first,
        second,
        combined,
        disagreements,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub granularity: Granularity,
    /// `None` for the whole granularity.
    pub label: Option<String>,
    pub samples: usize,
    pub strokes_mean: f64,
    pub strokes_std: f64,
    pub points_mean: f64,
    pub points_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Stroke and point counts per granularity, overall and per class, with
/// population standard deviations.
pub fn dataset_stats(data: &[StrokeSample]) -> Vec<GroupStats> {
    let mut keys: Vec<(Granularity, Option<String>)> = Vec::new();
    for s in data {
        for key in [(s.granularity, None), (s.granularity, Some(s.label.clone()))] {
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
    }
    keys.sort();
    keys.into_iter()
        .map(|(granularity, label)| {
            let members: Vec<&StrokeSample> = data
                .iter()
                .filter(|s| s.granularity == granularity && label.as_ref().is_none_or(|l| *l == s.label))
                .collect();
            let strokes: Vec<f64> = members.iter().map(|s| s.strokes.len() as f64).collect();
            let points: Vec<f64> = members.iter().map(|s| s.point_count() as f64).collect();
            let (strokes_mean, strokes_std) = mean_std(&strokes);
            let (points_mean, points_std) = mean_std(&points);
            GroupStats {
                granularity,
                label,
                samples: members.len(),
                strokes_mean,
                strokes_std,
                points_mean,
                points_std,
            }
        })
        .collect()
}
