//! Synthetic pseudo-script generator.
//!
//! Each profile describes a family of glyphs by a handful of curve
//! statistics: the sign of curvature of its arcs, how angular its strokes
//! are, whether glyphs hang from a connecting top bar, and how many strokes a
//! glyph has. Points are emitted at fixed arc-length steps and then jittered.
//!
//! Glyphs are laid out with `y` growing downward and the top-left corner of
//! the glyph box at the origin. The first stroke always starts at the glyph
//! point closest to that corner.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::item_stream;
use crate::seq::{Granularity, Point2, Stroke, StrokeSample};

pub const GLYPH_HEIGHT: f64 = 32.0;
const GLYPH_WIDTH: (f64, f64) = (20.0, 28.0);
const BAR_Y: (f64, f64) = (1.0, 3.0);
const BODY_TOP: f64 = 6.0;
const WORD_GAP: (f64, f64) = (3.0, 6.0);
/// Minimum clearance between the first stroke's start and every other
/// stroke end point.
const START_CLEARANCE: f64 = 5.0;
const MAX_WORD_LENGTH: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurvatureSign {
    Positive,
    Negative,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptProfile {
    pub name: String,
    pub curvature_sign: CurvatureSign,
    /// Inclusive stroke count per glyph, headline included.
    pub stroke_count_range: (usize, usize),
    pub has_headline: bool,
    /// 0 gives smooth arcs, 1 gives straight zigzag polylines.
    pub angularity: f64,
    pub jitter_std: f64,
}

impl ScriptProfile {
    /// Smooth, clockwise arcs without a headline.
    pub fn arcish() -> Self {
        Self {
            name: "arcish".into(),
            curvature_sign: CurvatureSign::Positive,
            stroke_count_range: (1, 3),
            has_headline: false,
            angularity: 0.0,
            jitter_std: 0.5,
        }
    }

    /// Angular zigzags hanging from a top bar.
    pub fn barred() -> Self {
        Self {
            name: "barred".into(),
            curvature_sign: CurvatureSign::Mixed,
            stroke_count_range: (2, 4),
            has_headline: true,
            angularity: 1.0,
            jitter_std: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.stroke_count_range;
        if lo < 1 || hi > 10 || lo > hi {
            return Err(Error::Config(format!(
                "profile {}: stroke_count_range {:?} must lie within [1, 10]",
                self.name, self.stroke_count_range
            )));
        }
        if self.has_headline && lo < 2 {
            return Err(Error::Config(format!(
                "profile {}: a headline profile needs at least 2 strokes",
                self.name
            )));
        }
        if !(0.0..=1.0).contains(&self.angularity) {
            return Err(Error::Config(format!("profile {}: angularity outside [0, 1]", self.name)));
        }
        if self.jitter_std.is_nan() || self.jitter_std < 0.0 {
            return Err(Error::Config(format!("profile {}: negative jitter", self.name)));
        }
        Ok(())
    }

    fn distinct_from(&self, other: &ScriptProfile) -> bool {
        self.curvature_sign != other.curvature_sign
            || self.has_headline != other.has_headline
            || self.angularity != other.angularity
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub profiles: Vec<ScriptProfile>,
    pub chars_per_class: usize,
    pub words_per_class: usize,
    pub word_length_range: (usize, usize),
    /// Default raster canvas for generated characters.
    pub canvas: (usize, usize),
    /// Arc-length step between emitted points.
    pub step: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            profiles: vec![ScriptProfile::arcish(), ScriptProfile::barred()],
            chars_per_class: 800,
            words_per_class: 200,
            word_length_range: (3, 6),
            canvas: (40, 40),
            step: 2.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.profiles.len() < 2 {
            return Err(Error::Config("at least two profiles are required".into()));
        }
        for p in &self.profiles {
            p.validate()?;
        }
        for (i, a) in self.profiles.iter().enumerate() {
            for b in &self.profiles[i + 1..] {
                if a.name == b.name {
                    return Err(Error::Config(format!("duplicate profile name {}", a.name)));
                }
                if !a.distinct_from(b) {
                    return Err(Error::Config(format!("profiles {} and {} are indistinguishable", a.name, b.name)));
                }
            }
        }
        let (lo, hi) = self.word_length_range;
        if lo < 2 || hi > MAX_WORD_LENGTH || lo > hi {
            return Err(Error::Config(format!(
                "word_length_range {:?} must lie within [2, {MAX_WORD_LENGTH}]",
                self.word_length_range
            )));
        }
        if self.step.is_nan() || self.step <= 0.0 {
            return Err(Error::Config("step must be positive".into()));
        }
        if self.canvas.0 == 0 || self.canvas.1 == 0 {
            return Err(Error::InvalidCanvas {
                width: self.canvas.0,
                height: self.canvas.1,
            });
        }
        Ok(())
    }
}

/// Sample a parametric curve `f: [0, 1] -> Point2` at fixed arc-length steps,
/// always keeping both ends.
fn resample<F: Fn(f64) -> Point2>(f: F, step: f64) -> Vec<Point2> {
    const DENSE: usize = 256;
    let dense: Vec<Point2> = (0..=DENSE).map(|i| f(i as f64 / DENSE as f64)).collect();
    let mut out = vec![dense[0]];
    let mut carried = 0.0;
    for w in dense.windows(2) {
        let seg = w[0].dist(&w[1]);
        let mut pos = step - carried;
        while pos <= seg {
            let t = pos / seg;
            out.push(Point2::new(w[0].x + t * (w[1].x - w[0].x), w[0].y + t * (w[1].y - w[0].y)));
            pos += step;
        }
        carried = seg - (pos - step);
    }
    let end = dense[DENSE];
    if out.last().is_none_or(|p| p.dist(&end) > 0.25 * step) {
        out.push(end);
    } else if let Some(p) = out.last_mut() {
        *p = end;
    }
    out
}

fn arc(center: Point2, radius: f64, theta0: f64, sweep: f64, step: f64) -> Vec<Point2> {
    resample(
        |t| {
            let th = theta0 + sweep * t;
            Point2::new(center.x + radius * th.cos(), center.y + radius * th.sin())
        },
        step,
    )
}

/// Quadratic Bezier segments through `vertices`, each bent sideways by
/// `bulge` times its length (sign picks the side).
fn polyline(vertices: &[Point2], bulges: &[f64], step: f64) -> Vec<Point2> {
    let mut out: Vec<Point2> = Vec::new();
    for (k, w) in vertices.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        // Perpendicular pointing to the clockwise side (y down).
        let ctrl = Point2::new(
            (a.x + b.x) / 2.0 - dy * bulges[k],
            (a.y + b.y) / 2.0 + dx * bulges[k],
        );
        let seg = resample(
            |t| {
                let u = 1.0 - t;
                Point2::new(
                    u * u * a.x + 2.0 * u * t * ctrl.x + t * t * b.x,
                    u * u * a.y + 2.0 * u * t * ctrl.y + t * t * b.y,
                )
            },
            step,
        );
        if out.is_empty() {
            out.extend(seg);
        } else {
            out.extend(seg.into_iter().skip(1));
        }
    }
    out
}

fn pick_sign<R: Rng + ?Sized>(sign: CurvatureSign, rng: &mut R) -> f64 {
    match sign {
        CurvatureSign::Positive => 1.0,
        CurvatureSign::Negative => -1.0,
        CurvatureSign::Mixed => {
            if rng.random_bool(0.5) {
                1.0
            } else {
                -1.0
            }
        }
    }
}

/// One glyph before jitter: body strokes inside `[0, width] x [0, height]`
/// and, for headline profiles, the bar span.
struct GlyphParts {
    width: f64,
    body: Vec<Vec<Point2>>,
}

fn body_stroke<R: Rng + ?Sized>(
    profile: &ScriptProfile,
    width: f64,
    top: f64,
    start: Option<Point2>,
    step: f64,
    rng: &mut R,
) -> Vec<Point2> {
    let bottom = GLYPH_HEIGHT;
    if profile.angularity < 0.5 {
        let sign = pick_sign(profile.curvature_sign, rng);
        let max_r = ((width - 2.0) / 2.0).min((bottom - top) / 2.0 - 1.0);
        let radius = rng.random_range(5.0..max_r.max(5.5));
        let sweep = sign * rng.random_range(0.75 * PI..1.5 * PI);
        match start {
            Some(s) => {
                // The start is the circle point closest to the origin.
                let n = s.x.hypot(s.y).max(1e-9);
                let u = (s.x / n, s.y / n);
                let center = Point2::new(s.x + radius * u.0, s.y + radius * u.1);
                let theta0 = (-u.1).atan2(-u.0);
                arc(center, radius, theta0, sweep, step)
            }
            None => {
                let cx = rng.random_range(radius + 1.0..(width - radius - 1.0).max(radius + 1.5));
                let cy = rng.random_range(top + radius..(bottom - radius).max(top + radius + 0.5));
                let theta0 = rng.random_range(0.0..2.0 * PI);
                arc(Point2::new(cx, cy), radius, theta0, sweep, step)
            }
        }
    } else {
        // Zigzag running downward, alternating between the two halves of
        // the box, so the stroke never folds back over itself.
        let n_vertices = rng.random_range(3..=5);
        let span = bottom - top;
        let left_first = rng.random_bool(0.5);
        let mid = width / 2.0;
        let mut vertices = Vec::new();
        for _attempt in 0..32 {
            vertices = (0..n_vertices)
                .map(|k| {
                    let y = top + span * (k as f64 + rng.random_range(0.2..0.8)) / n_vertices as f64;
                    let x = if (k % 2 == 0) == left_first {
                        rng.random_range(2.0..mid - 1.0)
                    } else {
                        rng.random_range(mid + 1.0..width - 2.0)
                    };
                    Point2::new(x, y)
                })
                .collect();
            if vertices.windows(3).all(|w| turn_angle(w[0], w[1], w[2]) <= MAX_TURN) {
                break;
            }
        }
        let bend = 0.3 * (1.0 - profile.angularity);
        let bulges: Vec<f64> = (1..n_vertices)
            .map(|_| bend * pick_sign(profile.curvature_sign, rng))
            .collect();
        polyline(&vertices, &bulges, step)
    }
}

/// Sharpest allowed corner of an angular stroke; tighter cusps merge into
/// blobs once drawn with a real pen.
const MAX_TURN: f64 = 0.7 * PI;

fn turn_angle(a: Point2, b: Point2, c: Point2) -> f64 {
    let (ux, uy) = (b.x - a.x, b.y - a.y);
    let (vx, vy) = (c.x - b.x, c.y - b.y);
    (ux * vy - uy * vx).atan2(ux * vx + uy * vy).abs()
}

fn start_is_clear(strokes: &[Vec<Point2>]) -> bool {
    let Some(s) = strokes.first().and_then(|s| s.first()) else {
        return false;
    };
    let r = s.x.hypot(s.y);
    let first_ok = strokes[0].iter().all(|p| p.x.hypot(p.y) >= r - 1e-9)
        && strokes[0].last().is_some_and(|e| e.dist(s) >= START_CLEARANCE);
    let others_ok = strokes[1..].iter().all(|st| {
        st.iter().all(|p| p.x.hypot(p.y) >= r + START_CLEARANCE)
    });
    first_ok && others_ok
}

fn glyph_parts<R: Rng + ?Sized>(profile: &ScriptProfile, step: f64, rng: &mut R) -> GlyphParts {
    let (lo, hi) = profile.stroke_count_range;
    let total = rng.random_range(lo..=hi);
    let n_body = if profile.has_headline { total - 1 } else { total };
    let width = rng.random_range(GLYPH_WIDTH.0..GLYPH_WIDTH.1);
    let top = if profile.has_headline { BODY_TOP } else { 0.0 };

    // Rejection sampling keeps the first stroke's start nearest the corner.
    let mut body = Vec::new();
    for _attempt in 0..64 {
        body.clear();
        for k in 0..n_body {
            let start = if k == 0 && !profile.has_headline {
                Some(Point2::new(rng.random_range(1.0..4.0), rng.random_range(1.0..4.0)))
            } else {
                None
            };
            body.push(body_stroke(profile, width, top, start, step, rng));
        }
        let ok = if profile.has_headline {
            let bar = vec![Point2::new(0.0, BAR_Y.0), Point2::new(width, BAR_Y.0)];
            let mut all = vec![bar];
            all.extend(body.iter().cloned());
            start_is_clear(&all)
        } else {
            start_is_clear(&body)
        };
        if ok {
            break;
        }
    }
    GlyphParts { width, body }
}

fn bar<R: Rng + ?Sized>(x1: f64, step: f64, rng: &mut R) -> Vec<Point2> {
    let y0 = rng.random_range(BAR_Y.0..BAR_Y.1);
    let y1 = rng.random_range(BAR_Y.0..BAR_Y.1);
    resample(|t| Point2::new(x1 * t, y0 + (y1 - y0) * t), step)
}

/// Correlation between the offsets of consecutive points.
const JITTER_CORRELATION: f64 = 0.8;

/// Smooth AR(1) noise with marginal standard deviation `std`, so the pen
/// wobbles instead of shaking point to point.
fn jitter<R: Rng + ?Sized>(strokes: Vec<Vec<Point2>>, std: f64, rng: &mut R) -> Vec<Stroke> {
    let Some(normal) = (std > 0.0).then(|| Normal::new(0.0, std).expect("finite std")) else {
        return strokes.into_iter().map(Stroke::new).collect();
    };
    let rho = JITTER_CORRELATION;
    let innovation = (1.0 - rho * rho).sqrt();
    strokes
        .into_iter()
        .map(|pts| {
            let (mut ox, mut oy) = (normal.sample(rng), normal.sample(rng));
            let mut out = Vec::with_capacity(pts.len());
            for (k, p) in pts.into_iter().enumerate() {
                if k > 0 {
                    ox = rho * ox + innovation * normal.sample(rng);
                    oy = rho * oy + innovation * normal.sample(rng);
                }
                out.push(Point2::new(p.x + ox, p.y + oy));
            }
            Stroke::new(out)
        })
        .collect()
}

fn assemble<R: Rng + ?Sized>(profile: &ScriptProfile, glyphs: usize, step: f64, rng: &mut R) -> Vec<Stroke> {
    let mut strokes: Vec<Vec<Point2>> = Vec::new();
    let mut x = 0.0;
    for g in 0..glyphs {
        if g > 0 {
            x += rng.random_range(WORD_GAP.0..WORD_GAP.1);
        }
        let parts = glyph_parts(profile, step, rng);
        strokes.extend(
            parts
                .body
                .into_iter()
                .map(|s| s.into_iter().map(|p| Point2::new(p.x + x, p.y)).collect()),
        );
        x += parts.width;
    }
    if profile.has_headline {
        strokes.insert(0, bar(x, step, rng));
    }
    jitter(strokes, profile.jitter_std, rng)
}

pub fn gen_character<R: Rng + ?Sized>(profile: &ScriptProfile, step: f64, rng: &mut R) -> StrokeSample {
    StrokeSample {
        id: String::new(),
        label: profile.name.clone(),
        granularity: Granularity::Character,
        strokes: assemble(profile, 1, step, rng),
    }
}

/// `length` glyphs side by side with positive gaps; headline profiles get a
/// single bar spanning the whole word, drawn first.
pub fn gen_word<R: Rng + ?Sized>(profile: &ScriptProfile, length: usize, step: f64, rng: &mut R) -> Result<StrokeSample> {
    if !(1..=MAX_WORD_LENGTH).contains(&length) {
        return Err(Error::InvalidLength {
            length,
            min: 1,
            max: MAX_WORD_LENGTH,
        });
    }
    Ok(StrokeSample {
        id: String::new(),
        label: profile.name.clone(),
        granularity: Granularity::Word,
        strokes: assemble(profile, length, step, rng),
    })
}

/// Characters then words for every profile, in profile order. Each sample
/// draws from its own stream keyed by `(seed, profile, kind, index)`, so the
/// parallel and serial orders agree.
pub fn gen_dataset(config: &SynthConfig) -> Result<Vec<StrokeSample>> {
    config.validate()?;
    let mut jobs = Vec::new();
    for (p, profile) in config.profiles.iter().enumerate() {
        for i in 0..config.chars_per_class {
            jobs.push((p, profile, Granularity::Character, i));
        }
    }
    for (p, profile) in config.profiles.iter().enumerate() {
        for i in 0..config.words_per_class {
            jobs.push((p, profile, Granularity::Word, i));
        }
    }
    jobs.into_par_iter()
        .map(|(p, profile, gran, i)| {
            let kind = match gran {
                Granularity::Character => "char",
                Granularity::Word => "word",
            };
            let mut rng = item_stream(config.seed, &format!("synth/{p}/{kind}"), i as u64);
            let mut sample = match gran {
                Granularity::Character => gen_character(profile, config.step, &mut rng),
                Granularity::Word => {
                    let (lo, hi) = config.word_length_range;
                    let len = rng.random_range(lo..=hi);
                    gen_word(profile, len, config.step, &mut rng)?
                }
            };
            sample.id = format!("{}-{}{i:05}", profile.name, &kind[..1]);
            Ok(sample)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn resample_keeps_steps() {
        let pts = resample(|t| Point2::new(10.0 * t, 0.0), 2.0);
        assert_eq!(pts.len(), 6);
        for w in pts.windows(2) {
            assert!((w[0].dist(&w[1]) - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forced_single_arc() {
        let mut p = ScriptProfile::arcish();
        p.stroke_count_range = (1, 1);
        p.jitter_std = 0.0;
        for seed in 0..20 {
            let s = gen_character(&p, 2.0, &mut rng(seed));
            assert_eq!(s.strokes.len(), 1);
            // smooth: every turn has the same (positive) sign and is small
            let pts = &s.strokes[0].points;
            for w in pts.windows(3) {
                let (ax, ay) = (w[1].x - w[0].x, w[1].y - w[0].y);
                let (bx, by) = (w[2].x - w[1].x, w[2].y - w[1].y);
                let cross = ax * by - ay * bx;
                let turn = cross.atan2(ax * bx + ay * by);
                assert!(turn > -1e-6 && turn < 0.5, "turn {turn}");
            }
        }
    }

    #[test]
    fn headline_spans_glyph() {
        let p = ScriptProfile::barred();
        for seed in 0..50 {
            let s = gen_character(&p, 2.0, &mut rng(seed));
            let (lo, hi) = s.bounds();
            let width = hi.x - lo.x;
            let bar = &s.strokes[0];
            let (a, b) = (bar.first().unwrap(), bar.last().unwrap());
            let span = (b.x - a.x).abs();
            assert!(span >= 0.6 * width, "span {span} width {width}");
            assert!((b.y - a.y).abs() < 0.2 * span, "not near horizontal");
            assert!(bar.points.iter().all(|p| p.y < lo.y + 5.0), "not at the top");
        }
    }

    #[test]
    fn length_one_word_is_a_character() {
        for p in [ScriptProfile::arcish(), ScriptProfile::barred()] {
            let c = gen_character(&p, 2.0, &mut rng(5));
            let w = gen_word(&p, 1, 2.0, &mut rng(5)).unwrap();
            assert_eq!(c.strokes, w.strokes);
            assert_eq!(w.granularity, Granularity::Word);
        }
    }

    #[test]
    fn word_length_validated() {
        let p = ScriptProfile::arcish();
        assert!(matches!(gen_word(&p, 0, 2.0, &mut rng(1)), Err(Error::InvalidLength { .. })));
        assert!(matches!(gen_word(&p, 13, 2.0, &mut rng(1)), Err(Error::InvalidLength { .. })));
    }

    #[test]
    fn headline_word_has_one_bar() {
        let p = ScriptProfile::barred();
        let mut r = rng(11);
        let w = gen_word(&p, 5, 2.0, &mut r).unwrap();
        let (lo, hi) = w.bounds();
        let bar = &w.strokes[0];
        assert!(bar.last().unwrap().x - bar.first().unwrap().x > 0.9 * (hi.x - lo.x));
        // every other stroke lies below the bar
        for s in &w.strokes[1..] {
            assert!(s.points.iter().all(|q| q.y > BAR_Y.1));
        }
        // 5 glyphs, each with 1..=3 body strokes
        assert!((1 + 5..=1 + 15).contains(&w.strokes.len()));
    }

    #[test]
    fn config_validation() {
        let mut c = SynthConfig::default();
        assert!(c.validate().is_ok());
        c.word_length_range = (1, 4);
        assert!(c.validate().is_err());
        let mut c = SynthConfig::default();
        c.profiles[1] = ScriptProfile {
            name: "clone".into(),
            ..ScriptProfile::arcish()
        };
        assert!(c.validate().is_err());
        let mut c = SynthConfig::default();
        c.profiles.truncate(1);
        assert!(c.validate().is_err());
    }

    #[test]
    fn dataset_counts_and_words_optional() {
        let cfg = SynthConfig {
            chars_per_class: 7,
            words_per_class: 0,
            ..SynthConfig::default()
        };
        let data = gen_dataset(&cfg).unwrap();
        assert_eq!(data.len(), 14);
        assert!(data.iter().all(|s| s.granularity == Granularity::Character));
        assert!(data.iter().all(|s| s.validate().is_ok()));
    }
}
