//! Sequence encoding, standardization, splitting and synthetic data.

use std::collections::HashSet;

use proptest::prelude::*;
use strokescript::io::write_samples;
use strokescript::seq::{
    destandardize, encode, fit_standardizer, normalize_trajectory, resample_polyline, split, standardize,
};
use strokescript::synth::{gen_character, gen_dataset, ScriptProfile, SynthConfig};
use strokescript::{Components, EncodedSequence, FeatureVector, Granularity, Point2, StrokeSample};

fn dataset(chars: usize, words: usize, seed: u64) -> Vec<StrokeSample> {
    gen_dataset(&SynthConfig {
        chars_per_class: chars,
        words_per_class: words,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

/// Mean and population std of one component, computed in two passes.
fn two_pass(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn column(seqs: &[EncodedSequence], c: usize) -> Vec<f64> {
    seqs.iter()
        .flat_map(|s| s.vectors.iter())
        .map(|v| [v.x, v.y, v.pen_start][c])
        .collect()
}

#[test]
fn stats_match_two_pass_oracle() {
    // 1000 vectors of awkward magnitude
    let vectors: Vec<FeatureVector> = (0..1000)
        .map(|i| {
            let t = i as f64;
            FeatureVector::new(1e4 + (t * 0.37).sin() * 3.0, -250.0 + (t * 1.3).cos() * t * 0.01, f64::from(i % 7 == 0))
        })
        .collect();
    let seqs: Vec<EncodedSequence> = vectors
        .chunks(100)
        .map(|c| EncodedSequence {
            source_sample_id: "s".into(),
            vectors: c.to_vec(),
        })
        .collect();
    let stats = fit_standardizer(&seqs, Components::ALL).unwrap();
    for c in 0..3 {
        let (m, s) = two_pass(&column(&seqs, c));
        assert!((stats.mean[c] - m).abs() < 1e-9, "mean {c}");
        assert!((stats.std[c] - s).abs() < 1e-9, "std {c}");
    }
}

#[test]
fn standardized_generated_data_is_centered() {
    let data = dataset(40, 10, 3);
    let seqs: Vec<EncodedSequence> = data.iter().map(|s| encode(s).unwrap()).collect();
    let stats = fit_standardizer(&seqs, Components::XY).unwrap();
    let out: Vec<EncodedSequence> = seqs.iter().map(|s| standardize(s, &stats).unwrap()).collect();
    for c in 0..2 {
        let (m, s) = two_pass(&column(&out, c));
        assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9, "component {c}: {m} {s}");
    }
    assert_eq!(column(&out, 2), column(&seqs, 2));
}

#[test]
fn generated_sample_flags_each_stroke() {
    let data = dataset(20, 0, 5);
    let sample = data.iter().find(|s| s.strokes.len() == 3).expect("a three-stroke glyph");
    let enc = encode(sample).unwrap();
    assert_eq!(enc.vectors[0].pen_start, 1.0);
    assert_eq!(enc.vectors.iter().filter(|v| v.pen_start == 1.0).count(), 3);
    assert_eq!(enc.decode(), sample.strokes);
}

#[test]
fn split_is_disjoint_and_stratified() {
    let data = dataset(80, 20, 9);
    let s = split(&data, (0.625, 0.125, 0.25), 4).unwrap();
    let ids = |v: &[StrokeSample]| v.iter().map(|x| x.id.clone()).collect::<HashSet<_>>();
    let (a, b, c) = (ids(&s.train), ids(&s.validation), ids(&s.test));
    assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
    assert_eq!(a.len() + b.len() + c.len(), data.len());
    let share = |v: &[StrokeSample]| v.iter().filter(|x| x.label == "arcish").count() as f64 / v.len() as f64;
    let whole = share(&data);
    for part in [&s.train, &s.validation, &s.test] {
        assert!((share(part) - whole).abs() <= 0.02);
    }
    assert_eq!(split(&data, (0.625, 0.125, 0.25), 4).unwrap(), s);
}

#[test]
fn generation_is_byte_identical() {
    let write = || {
        let mut buf = Vec::new();
        write_samples(&mut buf, &dataset(30, 10, 42)).unwrap();
        buf
    };
    assert_eq!(write(), write());
}

/// Mean absolute turning angle between consecutive segments of every stroke.
fn mean_turning(sample: &StrokeSample) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for s in &sample.strokes {
        for w in s.points.windows(3) {
            let a = (w[1].x - w[0].x, w[1].y - w[0].y);
            let b = (w[2].x - w[1].x, w[2].y - w[1].y);
            total += (a.0 * b.1 - a.1 * b.0).atan2(a.0 * b.0 + a.1 * b.1).abs();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// A near-horizontal stroke along the top spanning most of the glyph.
fn has_top_bar(sample: &StrokeSample) -> bool {
    let (lo, hi) = sample.bounds();
    let width = hi.x - lo.x;
    sample.strokes.iter().any(|s| {
        let (first, last) = (s.first().unwrap(), s.last().unwrap());
        let span = (last.x - first.x).abs();
        let ys: Vec<f64> = s.points.iter().map(|p| p.y).collect();
        let rise = ys.iter().copied().fold(f64::MIN, f64::max) - ys.iter().copied().fold(f64::MAX, f64::min);
        span >= 0.6 * width && rise < 0.2 * (hi.y - lo.y) && ys.iter().all(|&y| y - lo.y < 0.3 * (hi.y - lo.y))
    })
}

#[test]
fn summary_statistic_separates_classes() {
    let data = dataset(250, 0, 17);
    assert_eq!(data.len(), 500);
    // linear score over (mean turning angle, headline presence)
    let scored: Vec<(f64, bool)> = data
        .iter()
        .map(|s| (mean_turning(s) + f64::from(u8::from(has_top_bar(s))), s.label == "barred"))
        .collect();
    let class_mean = |barred: bool| {
        let v: Vec<f64> = scored.iter().filter(|s| s.1 == barred).map(|s| s.0).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let threshold = 0.5 * (class_mean(false) + class_mean(true));
    let correct = scored.iter().filter(|(score, truth)| (*score > threshold) == *truth).count();
    assert!(correct as f64 >= 0.99 * data.len() as f64, "{correct}/500");
}

#[test]
fn headline_spans_most_of_the_glyph() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let s = gen_character(&ScriptProfile::barred(), 2.0, &mut rng);
        assert!(has_top_bar(&s), "{:?}", s.id);
    }
}

#[test]
fn words_carry_more_strokes_than_chars() {
    let data = dataset(100, 50, 23);
    for profile in ["arcish", "barred"] {
        let mean = |g: Granularity| {
            let v: Vec<usize> = data
                .iter()
                .filter(|s| s.label == profile && s.granularity == g)
                .map(|s| s.strokes.len())
                .collect();
            v.iter().sum::<usize>() as f64 / v.len() as f64
        };
        assert!(mean(Granularity::Word) > mean(Granularity::Character), "{profile}");
    }
}

#[test]
fn normalized_trajectory_has_unit_height() {
    for s in dataset(10, 5, 31) {
        let n = normalize_trajectory(&s, 0.1).unwrap();
        let (lo, hi) = n.bounds();
        // the extreme points may fall between resampled positions
        assert!(lo.x >= -1e-9 && lo.y >= -1e-9 && lo.x < 0.1 && lo.y < 0.1);
        assert!(hi.y <= 1.0 + 1e-9 && hi.y > 0.9, "{}", hi.y);
        assert_eq!(n.strokes.len(), s.strokes.len());
    }
}

fn arb_sample() -> impl Strategy<Value = StrokeSample> {
    let stroke = prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..8);
    prop::collection::vec(stroke, 1..5).prop_map(|strokes| StrokeSample {
        id: "p".into(),
        label: "a".into(),
        granularity: Granularity::Character,
        strokes: strokes
            .into_iter()
            .map(|s| strokescript::Stroke::new(s.into_iter().map(|(x, y)| Point2::new(x, y)).collect()))
            .collect(),
    })
}

proptest! {
    #[test]
    fn standardization_inverts(sample in arb_sample()) {
        prop_assume!(sample.point_count() >= 2);
        let enc = encode(&sample).unwrap();
        let Ok(stats) = fit_standardizer(std::slice::from_ref(&enc), Components::XY) else {
            return Ok(());
        };
        let back = destandardize(&standardize(&enc, &stats).unwrap(), &stats).unwrap();
        for (a, b) in back.vectors.iter().zip(&enc.vectors) {
            prop_assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
            prop_assert_eq!(a.pen_start, b.pen_start);
        }
    }

    #[test]
    fn resampling_keeps_ends_and_spacing(pts in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 2..10), step in 0.05f64..3.0) {
        let pts: Vec<Point2> = pts.into_iter().map(|(x, y)| Point2::new(x, y)).collect();
        let out = resample_polyline(&pts, step);
        prop_assert_eq!(out[0], pts[0]);
        prop_assert!(out.last().unwrap().dist(pts.last().unwrap()) < 1e-9);
        // consecutive resampled points are never farther apart than the step
        for w in out.windows(2) {
            prop_assert!(w[0].dist(&w[1]) <= step + 1e-9);
        }
    }
}
