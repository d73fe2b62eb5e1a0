//! Stroke samples, the three-value point encoding, dataset standardization and
//! stratified splitting.
//!
//! A sample is encoded by concatenating its strokes into one series of
//! `(x, y, pen_start)` vectors, where `pen_start` is 1 on the first point of
//! every stroke and 0 elsewhere. Standardization statistics are always fitted
//! over a whole dataset, never per sample.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dist(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Stroke {
    pub points: Vec<Point2>,
}

impl Stroke {
    pub fn new(points: Vec<Point2>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Option<&Point2> {
        self.points.first()
    }

    pub fn last(&self) -> Option<&Point2> {
        self.points.last()
    }

    /// True when no two consecutive points coincide.
    pub fn is_clean(&self) -> bool {
        self.points.windows(2).all(|w| w[0] != w[1])
    }

    /// Euclidean length of the polyline.
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].dist(&w[1])).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Granularity {
    #[serde(rename = "char")]
    Character,
    #[serde(rename = "word")]
    Word,
}

impl std::fmt::Display for Granularity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Granularity::Character => f.write_str("char"),
            Granularity::Word => f.write_str("word"),
        }
    }
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" | "character" => Ok(Granularity::Character),
            "word" => Ok(Granularity::Word),
            other => Err(Error::Config(format!("unknown granularity {other:?}"))),
        }
    }
}

/// A labeled sequence of pen strokes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeSample {
    pub id: String,
    pub label: String,
    pub granularity: Granularity,
    pub strokes: Vec<Stroke>,
}

impl StrokeSample {
    pub fn point_count(&self) -> usize {
        self.strokes.iter().map(Stroke::len).sum()
    }

    pub fn points(&self) -> impl Iterator<Item = &Point2> {
        self.strokes.iter().flat_map(|s| s.points.iter())
    }

    pub fn validate(&self) -> Result<()> {
        if self.strokes.is_empty() {
            return Err(Error::InvalidSample(format!("{}: no strokes", self.id)));
        }
        if self.strokes.iter().any(Stroke::is_empty) {
            return Err(Error::InvalidSample(format!("{}: empty stroke", self.id)));
        }
        if self.point_count() < 2 {
            return Err(Error::InvalidSample(format!("{}: fewer than 2 points", self.id)));
        }
        if !self.points().all(Point2::is_finite) {
            return Err(Error::InvalidSample(format!("{}: non-finite coordinate", self.id)));
        }
        Ok(())
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in self.points() {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub x: f64,
    pub y: f64,
    pub pen_start: f64,
}

impl FeatureVector {
    pub const fn new(x: f64, y: f64, pen_start: f64) -> Self {
        Self { x, y, pen_start }
    }

    fn get(&self, c: usize) -> f64 {
        match c {
            0 => self.x,
            1 => self.y,
            _ => self.pen_start,
        }
    }

    fn set(&mut self, c: usize, v: f64) {
        match c {
            0 => self.x = v,
            1 => self.y = v,
            _ => self.pen_start = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub source_sample_id: String,
    pub vectors: Vec<FeatureVector>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Split back into strokes at every `pen_start == 1`. Only meaningful
    /// before standardization.
    pub fn decode(&self) -> Vec<Stroke> {
        let mut strokes: Vec<Stroke> = Vec::new();
        for v in &self.vectors {
            let p = Point2::new(v.x, v.y);
            if v.pen_start == 1.0 || strokes.is_empty() {
                strokes.push(Stroke::new(vec![p]));
            } else if let Some(s) = strokes.last_mut() {
                s.points.push(p);
            }
        }
        strokes
    }

    pub fn features(&self) -> FeatureSeq {
        let mut data = Vec::with_capacity(self.vectors.len() * 3);
        for v in &self.vectors {
            data.extend_from_slice(&[v.x, v.y, v.pen_start]);
        }
        FeatureSeq { width: 3, data }
    }
}

/// Dense row-major `(time, feature)` matrix fed to the classifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSeq {
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureSeq {
    pub fn new(width: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || !data.len().is_multiple_of(width) {
            return Err(Error::ShapeError(format!(
                "{} values do not tile rows of width {width}",
                data.len()
            )));
        }
        Ok(Self { width, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::ShapeError("ragged rows".into()));
        }
        Self::new(width, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.width..(t + 1) * self.width]
    }

    pub fn reversed(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for t in (0..self.len()).rev() {
            data.extend_from_slice(self.row(t));
        }
        Self { width: self.width, data }
    }
}

/// Points spaced `step` apart in arc length along `points`, both ends kept.
pub fn resample_polyline(points: &[Point2], step: f64) -> Vec<Point2> {
    let Some(&first) = points.first() else {
        return Vec::new();
    };
    let mut out = vec![first];
    let mut need = step;
    for w in points.windows(2) {
        let d = w[0].dist(&w[1]);
        let mut along = 0.0;
        while d - along >= need {
            along += need;
            let t = along / d;
            out.push(Point2::new(w[0].x + t * (w[1].x - w[0].x), w[0].y + t * (w[1].y - w[0].y)));
            need = step;
        }
        need -= d - along;
    }
    let last = points[points.len() - 1];
    if out[out.len() - 1].dist(&last) > 1e-9 * step {
        out.push(last);
    }
    out
}

/// Scale to unit height with the bounding box at the origin, then resample
/// every stroke at `step` in those units. Samples with no height use their
/// width instead. Online input and trajectories traced from images come in
/// at very different sizes and point densities; this puts them on one grid.
pub fn normalize_trajectory(sample: &StrokeSample, step: f64) -> Result<StrokeSample> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("resampling step {step} must be positive")));
    }
    let (lo, hi) = sample.bounds();
    let extent = match (hi.y - lo.y, hi.x - lo.x) {
        (h, _) if h > 0.0 => h,
        (_, w) if w > 0.0 => w,
        _ => return Err(Error::InvalidSample(format!("{}: no extent to normalize", sample.id))),
    };
    let mut out = sample.clone();
    for stroke in &mut out.strokes {
        let scaled: Vec<Point2> = stroke
            .points
            .iter()
            .map(|p| Point2::new((p.x - lo.x) / extent, (p.y - lo.y) / extent))
            .collect();
        stroke.points = resample_polyline(&scaled, step);
    }
    Ok(out)
}

pub fn encode(sample: &StrokeSample) -> Result<EncodedSequence> {
    if sample.strokes.is_empty() || sample.strokes.iter().any(Stroke::is_empty) {
        return Err(Error::InvalidSample(format!("{}: empty stroke list or stroke", sample.id)));
    }
    let mut vectors = Vec::with_capacity(sample.point_count());
    for stroke in &sample.strokes {
        for (i, p) in stroke.points.iter().enumerate() {
            let flag = if i == 0 { 1.0 } else { 0.0 };
            vectors.push(FeatureVector::new(p.x, p.y, flag));
        }
    }
    Ok(EncodedSequence {
        source_sample_id: sample.id.clone(),
        vectors,
    })
}

/// Which of the three components are standardized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub x: bool,
    pub y: bool,
    pub pen_start: bool,
}

impl Components {
    pub const XY: Components = Components {
        x: true,
        y: true,
        pen_start: false,
    };
    pub const ALL: Components = Components {
        x: true,
        y: true,
        pen_start: true,
    };

    fn flags(&self) -> [bool; 3] {
        [self.x, self.y, self.pen_start]
    }
}

const COMPONENT_NAMES: [&str; 3] = ["x", "y", "pen_start"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub components: Components,
}

/// Population mean and standard deviation of the selected components over
/// every vector of every sequence.
pub fn fit_standardizer(dataset: &[EncodedSequence], components: Components) -> Result<NormalizationStats> {
    // Welford accumulation, one pass.
    let mut n = 0.0_f64;
    let mut mean = [0.0_f64; 3];
    let mut m2 = [0.0_f64; 3];
    for v in dataset.iter().flat_map(|s| s.vectors.iter()) {
        n += 1.0;
        for c in 0..3 {
            let x = v.get(c);
            let delta = x - mean[c];
            mean[c] += delta / n;
            m2[c] += delta * (x - mean[c]);
        }
    }
    if n == 0.0 {
        return Err(Error::InvalidInput("cannot fit standardizer on an empty dataset".into()));
    }
    let mut std = [1.0_f64; 3];
    let mut out_mean = [0.0_f64; 3];
    for (c, selected) in components.flags().into_iter().enumerate() {
        if !selected {
            continue;
        }
        let s = (m2[c] / n).sqrt();
        if s.is_nan() || s <= 0.0 {
            return Err(Error::DegenerateComponent(COMPONENT_NAMES[c]));
        }
        out_mean[c] = mean[c];
        std[c] = s;
    }
    Ok(NormalizationStats {
        mean: out_mean,
        std,
        components,
    })
}

fn check_stats(stats: &NormalizationStats, components: Components) -> Result<()> {
    if stats.components != components {
        return Err(Error::StatsMismatch);
    }
    for (c, selected) in components.flags().into_iter().enumerate() {
        if selected && (stats.std[c].is_nan() || stats.std[c] <= 0.0) {
            return Err(Error::DegenerateComponent(COMPONENT_NAMES[c]));
        }
    }
    Ok(())
}

/// Replace each selected component by `(v - mean) / std`.
pub fn standardize(seq: &EncodedSequence, stats: &NormalizationStats) -> Result<EncodedSequence> {
    standardize_as(seq, stats, stats.components)
}

/// Like [`standardize`], but fails with `StatsMismatch` unless `stats` was
/// fitted over exactly `components`.
pub fn standardize_as(seq: &EncodedSequence, stats: &NormalizationStats, components: Components) -> Result<EncodedSequence> {
    check_stats(stats, components)?;
    let flags = components.flags();
    let mut out = seq.clone();
    for v in &mut out.vectors {
        for (c, &on) in flags.iter().enumerate() {
            if on {
                v.set(c, (v.get(c) - stats.mean[c]) / stats.std[c]);
            }
        }
    }
    Ok(out)
}

/// Inverse of [`standardize`].
pub fn destandardize(seq: &EncodedSequence, stats: &NormalizationStats) -> Result<EncodedSequence> {
    check_stats(stats, stats.components)?;
    let flags = stats.components.flags();
    let mut out = seq.clone();
    for v in &mut out.vectors {
        for (c, &on) in flags.iter().enumerate() {
            if on {
                v.set(c, v.get(c) * stats.std[c] + stats.mean[c]);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<StrokeSample>,
    pub validation: Vec<StrokeSample>,
    pub test: Vec<StrokeSample>,
    pub seed: u64,
}

/// Stratified, seeded three-way split.
pub fn split(dataset: &[StrokeSample], fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (ft, fv, fs) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fs > 0.0) {
        return Err(Error::InvalidFractions(format!("{fractions:?} must all be positive")));
    }
    if ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidFractions(format!("{fractions:?} must sum to 1")));
    }

    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.iter().enumerate() {
        by_label.entry(s.label.as_str()).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![0u8; dataset.len()];
    for (label, mut idx) in by_label {
        let n = idx.len();
        if n < 3 {
            return Err(Error::InsufficientClass {
                label: label.to_string(),
                count: n,
                needed: 3,
            });
        }
        idx.shuffle(&mut rng);
        let n_train = ((n as f64 * ft).round() as usize).clamp(1, n - 2);
        let n_val = ((n as f64 * fv).round() as usize).clamp(1, n - n_train - 1);
        for (k, &i) in idx.iter().enumerate() {
            assign[i] = if k < n_train {
                0
            } else if k < n_train + n_val {
                1
            } else {
                2
            };
        }
    }

    let mut out = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for (s, a) in dataset.iter().zip(assign) {
        match a {
            0 => out.train.push(s.clone()),
            1 => out.validation.push(s.clone()),
            _ => out.test.push(s.clone()),
        }
    }
    Ok(out)
}

/// Sorted set of labels with their class indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSet {
    pub labels: Vec<String>,
}

impl ClassSet {
    pub fn new(mut labels: Vec<String>) -> Self {
        labels.sort();
        labels.dedup();
        Self { labels }
    }

    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a StrokeSample>) -> Self {
        let mut labels: Vec<String> = samples.into_iter().map(|s| s.label.clone()).collect();
        labels.sort();
        labels.dedup();
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(strokes: Vec<Vec<(f64, f64)>>) -> StrokeSample {
        StrokeSample {
            id: "t".into(),
            label: "A".into(),
            granularity: Granularity::Character,
            strokes: strokes
                .into_iter()
                .map(|s| Stroke::new(s.into_iter().map(|(x, y)| Point2::new(x, y)).collect()))
                .collect(),
        }
    }

    fn triples(seq: &EncodedSequence) -> Vec<(f64, f64, f64)> {
        seq.vectors.iter().map(|v| (v.x, v.y, v.pen_start)).collect()
    }

    #[test]
    fn resample_spacing_and_ends() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(1.0, 1.25)];
        let out = resample_polyline(&pts, 0.5);
        let xs: Vec<(f64, f64)> = out.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(xs, vec![(0.0, 0.0), (0.5, 0.0), (1.0, 0.0), (1.0, 0.5), (1.0, 1.0), (1.0, 1.25)]);
        assert_eq!(resample_polyline(&pts[..1], 0.5).len(), 1);
    }

    #[test]
    fn normalize_to_unit_height() {
        let s = sample(vec![vec![(10.0, 10.0), (10.0, 30.0)], vec![(20.0, 10.0), (30.0, 10.0)]]);
        let n = normalize_trajectory(&s, 0.25).unwrap();
        assert_eq!(n.strokes[0].len(), 5);
        assert_eq!(n.strokes[1].len(), 3);
        let (lo, hi) = n.bounds();
        assert_eq!((lo.x, lo.y, hi.x, hi.y), (0.0, 0.0, 1.0, 1.0));
        let flat = sample(vec![vec![(0.0, 3.0), (4.0, 3.0)]]);
        assert_eq!(normalize_trajectory(&flat, 0.5).unwrap().strokes[0].len(), 3);
        assert!(normalize_trajectory(&sample(vec![vec![(1.0, 1.0)]]), 0.5).is_err());
    }

    #[test]
    fn encode_single_stroke() {
        let enc = encode(&sample(vec![vec![(0.0, 0.0), (1.0, 1.0)]])).unwrap();
        assert_eq!(triples(&enc), vec![(0.0, 0.0, 1.0), (1.0, 1.0, 0.0)]);
    }

    #[test]
    fn encode_flags_each_stroke_head() {
        let enc = encode(&sample(vec![vec![(0.0, 0.0)], vec![(5.0, 5.0), (6.0, 5.0)]])).unwrap();
        assert_eq!(triples(&enc), vec![(0.0, 0.0, 1.0), (5.0, 5.0, 1.0), (6.0, 5.0, 0.0)]);
    }

    #[test]
    fn encode_rejects_empty() {
        assert!(matches!(encode(&sample(vec![])), Err(Error::InvalidSample(_))));
        assert!(matches!(encode(&sample(vec![vec![]])), Err(Error::InvalidSample(_))));
    }

    #[test]
    fn cleanliness_flags_duplicates() {
        let s = Stroke::new(vec![Point2::new(0.0, 0.0), Point2::new(0.0, 0.0)]);
        assert!(!s.is_clean());
    }

    #[test]
    fn fit_two_point_symmetric() {
        let enc = encode(&sample(vec![vec![(0.0, 0.0), (2.0, 4.0)]])).unwrap();
        let stats = fit_standardizer(std::slice::from_ref(&enc), Components::XY).unwrap();
        assert_eq!(stats.mean[0], 1.0);
        assert_eq!(stats.std[0], 1.0);
        let out = standardize(&enc, &stats).unwrap();
        assert_eq!(out.vectors[0].x, -1.0);
        assert_eq!(out.vectors[1].x, 1.0);
        // pen_start passes through
        assert_eq!(out.vectors[0].pen_start, 1.0);
    }

    #[test]
    fn fit_degenerate_pen_column() {
        let enc = encode(&sample(vec![vec![(0.0, 0.0)], vec![(2.0, 4.0)]])).unwrap();
        assert!(matches!(
            fit_standardizer(&[enc], Components::ALL),
            Err(Error::DegenerateComponent("pen_start"))
        ));
    }

    #[test]
    fn identity_stats() {
        let enc = encode(&sample(vec![vec![(3.0, -2.0), (7.5, 1.0)]])).unwrap();
        let stats = NormalizationStats {
            mean: [0.0; 3],
            std: [1.0; 3],
            components: Components::XY,
        };
        assert_eq!(standardize(&enc, &stats).unwrap(), enc);
    }

    #[test]
    fn standardize_as_rejects_mismatch() {
        let enc = encode(&sample(vec![vec![(0.0, 0.0), (2.0, 4.0)]])).unwrap();
        let stats = fit_standardizer(std::slice::from_ref(&enc), Components::XY).unwrap();
        assert!(matches!(standardize_as(&enc, &stats, Components::ALL), Err(Error::StatsMismatch)));
    }

    fn labelled(n_per: usize) -> Vec<StrokeSample> {
        let mut v = Vec::new();
        for label in ["A", "B"] {
            for i in 0..n_per {
                let mut s = sample(vec![vec![(i as f64, 0.0), (0.0, 1.0)]]);
                s.id = format!("{label}{i}");
                s.label = label.into();
                v.push(s);
            }
        }
        v
    }

    #[test]
    fn split_counts_and_determinism() {
        let data = labelled(50);
        let a = split(&data, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (80, 10, 10));
        for part in [&a.train, &a.validation, &a.test] {
            assert!(part.iter().any(|s| s.label == "A"));
            assert!(part.iter().any(|s| s.label == "B"));
        }
        let b = split(&data, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(a, b);
        let mut ids: Vec<_> = a.train.iter().chain(&a.validation).chain(&a.test).map(|s| &s.id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 100);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let data = labelled(10);
        assert!(matches!(split(&data, (0.5, 0.5, 0.1), 1), Err(Error::InvalidFractions(_))));
        assert!(matches!(split(&data, (1.0, 0.0, 0.0), 1), Err(Error::InvalidFractions(_))));
    }

    #[test]
    fn split_rejects_tiny_class() {
        let mut data = labelled(10);
        data.truncate(12);
        assert!(matches!(split(&data, (0.8, 0.1, 0.1), 1), Err(Error::InsufficientClass { .. })));
    }

    fn arb_sample() -> impl Strategy<Value = StrokeSample> {
        let pt = (-1e3..1e3f64, -1e3..1e3f64);
        prop::collection::vec(prop::collection::vec(pt, 1..8), 1..5).prop_map(sample)
    }

    proptest! {
        #[test]
        fn encode_round_trips(s in arb_sample()) {
            let enc = encode(&s).unwrap();
            prop_assert_eq!(enc.vectors[0].pen_start, 1.0);
            let heads = enc.vectors.iter().filter(|v| v.pen_start == 1.0).count();
            prop_assert_eq!(heads, s.strokes.len());
            prop_assert_eq!(enc.decode(), s.strokes);
        }

        #[test]
        fn standardize_inverts(s in arb_sample(), extra in arb_sample()) {
            let a = encode(&s).unwrap();
            let b = encode(&extra).unwrap();
            if let Ok(stats) = fit_standardizer(&[a.clone(), b], Components::XY) {
                let back = destandardize(&standardize(&a, &stats).unwrap(), &stats).unwrap();
                for (u, v) in back.vectors.iter().zip(&a.vectors) {
                    prop_assert!((u.x - v.x).abs() < 1e-9 * (1.0 + v.x.abs()));
                    prop_assert!((u.y - v.y).abs() < 1e-9 * (1.0 + v.y.abs()));
                    prop_assert_eq!(u.pen_start, v.pen_start);
                }
            }
        }

        #[test]
        fn fit_is_permutation_invariant(s in arb_sample(), seed in any::<u64>()) {
            let a = encode(&s).unwrap();
            let mut shuffled = a.clone();
            shuffled.vectors.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let p = fit_standardizer(&[a], Components::XY);
            let q = fit_standardizer(&[shuffled], Components::XY);
            if let (Ok(p), Ok(q)) = (p, q) {
                for c in 0..2 {
                    prop_assert!((p.mean[c] - q.mean[c]).abs() < 1e-9 * (1.0 + p.mean[c].abs()));
                    prop_assert!((p.std[c] - q.std[c]).abs() < 1e-9 * (1.0 + p.std[c]));
                }
            }
        }
    }
}
