//! Per-class Gaussian HMM baseline.
//!
//! Each class gets a left-to-right HMM with self-loops and diagonal Gaussian
//! emissions, fitted by Baum-Welch. A sequence is labelled with the class
//! whose model gives it the highest log-likelihood. Several random restarts
//! per class are fitted and the best combination is picked on validation
//! data.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blstm::{ClassPosterior, Labelled};
use crate::error::{Error, Result};
use crate::rng::{item_stream, stream};
use crate::seq::FeatureSeq;

/// Default and smallest allowed emission variance floor.
pub const VARIANCE_FLOOR: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmmConfig {
    pub states: usize,
    pub max_iterations: usize,
    /// EM stops once the total log-likelihood gains less than this.
    pub tolerance: f64,
    pub restarts: usize,
    /// Lower bound on every emission variance. Raise it when a feature is
    /// discrete: a state pinned to one value otherwise gets a near-zero
    /// variance and dominates every likelihood.
    pub variance_floor: f64,
}

impl Default for HmmConfig {
    fn default() -> Self {
        Self {
            states: 8,
            max_iterations: 100,
            tolerance: 1e-4,
            restarts: 5,
            variance_floor: VARIANCE_FLOOR,
        }
    }
}

impl HmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.states == 0 || self.restarts == 0 {
            return Err(Error::Config("states and restarts must be positive".into()));
        }
        if !(self.variance_floor >= VARIANCE_FLOOR && self.variance_floor.is_finite()) {
            return Err(Error::Config(format!("variance_floor must be at least {VARIANCE_FLOOR}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianHmm {
    pub width: usize,
    pub initial: Vec<f64>,
    /// Row-major `N x N`.
    pub transitions: Vec<f64>,
    /// Row-major `N x width`.
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

/// Log-likelihood after each EM iteration (the first entry is the initial
/// model's).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
}

struct Posteriors {
    log_likelihood: f64,
    /// Per-time state occupancy, `T x N`.
    gamma: Vec<f64>,
    /// Expected transition counts summed over time, `N x N`.
    xi: Vec<f64>,
}

impl GaussianHmm {
    pub fn states(&self) -> usize {
        self.initial.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.states();
        let ok = n > 0
            && self.width > 0
            && self.transitions.len() == n * n
            && self.means.len() == n * self.width
            && self.variances.len() == n * self.width;
        if !ok {
            return Err(Error::ShapeError("inconsistent HMM dimensions".into()));
        }
        let row_ok = |r: &[f64]| (r.iter().sum::<f64>() - 1.0).abs() < 1e-9 && r.iter().all(|&p| p >= 0.0);
        if !row_ok(&self.initial) || !self.transitions.chunks(n).all(row_ok) {
            return Err(Error::ShapeError("HMM probabilities off the simplex".into()));
        }
        if self.variances.iter().any(|&v| v.is_nan() || v < VARIANCE_FLOOR) || self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::ShapeError("HMM emission parameters out of range".into()));
        }
        Ok(())
    }

    fn check(&self, seq: &FeatureSeq) -> Result<()> {
        if seq.width != self.width {
            return Err(Error::ShapeError(format!(
                "sequence width {} does not match model width {}",
                seq.width, self.width
            )));
        }
        if seq.is_empty() {
            return Err(Error::ShapeError("empty sequence".into()));
        }
        Ok(())
    }

    /// Log-density of row `x` under state `j`.
    pub fn log_emission(&self, j: usize, x: &[f64]) -> f64 {
        let d = self.width;
        let mu = &self.means[j * d..(j + 1) * d];
        let var = &self.variances[j * d..(j + 1) * d];
        x.iter()
            .zip(mu)
            .zip(var)
            .map(|((x, m), v)| -0.5 * (LN_2PI + v.ln() + (x - m).powi(2) / v))
            .sum()
    }

    /// Emission likelihoods per step rescaled by the step maximum, with the
    /// log of that maximum.
    fn scaled_emissions(&self, seq: &FeatureSeq) -> (Vec<f64>, Vec<f64>) {
        let n = self.states();
        let t_len = seq.len();
        let mut e = vec![0.0; t_len * n];
        let mut shift = vec![0.0; t_len];
        for t in 0..t_len {
            let row = &mut e[t * n..(t + 1) * n];
            for (j, r) in row.iter_mut().enumerate() {
                *r = self.log_emission(j, seq.row(t));
            }
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            shift[t] = m;
            row.iter_mut().for_each(|r| *r = (*r - m).exp());
        }
        (e, shift)
    }

    /// Scaled forward pass. Returns normalized alphas, the scale per step
    /// and the log-likelihood.
    fn forward_scaled(&self, e: &[f64], shift: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let n = self.states();
        let t_len = shift.len();
        let mut alpha = vec![0.0; t_len * n];
        let mut scale = vec![0.0; t_len];
        let mut ll = 0.0;
        for t in 0..t_len {
            for j in 0..n {
                let prior = if t == 0 {
                    self.initial[j]
                } else {
                    (0..n).map(|i| alpha[(t - 1) * n + i] * self.transitions[i * n + j]).sum()
                };
                alpha[t * n + j] = prior * e[t * n + j];
            }
            let c: f64 = alpha[t * n..(t + 1) * n].iter().sum();
            if c > 0.0 {
                alpha[t * n..(t + 1) * n].iter_mut().for_each(|a| *a /= c);
                ll += c.ln() + shift[t];
            } else {
                return (alpha, scale, f64::NEG_INFINITY);
            }
            scale[t] = c;
        }
        (alpha, scale, ll)
    }

    /// Forward-algorithm log-likelihood with per-step scaling.
    pub fn log_likelihood(&self, seq: &FeatureSeq) -> Result<f64> {
        self.check(seq)?;
        let (e, shift) = self.scaled_emissions(seq);
        Ok(self.forward_scaled(&e, &shift).2)
    }

    fn posteriors(&self, seq: &FeatureSeq) -> Posteriors {
        let n = self.states();
        let t_len = seq.len();
        let (e, shift) = self.scaled_emissions(seq);
        let (alpha, scale, ll) = self.forward_scaled(&e, &shift);
        let mut gamma = vec![0.0; t_len * n];
        let mut xi = vec![0.0; n * n];
        if !ll.is_finite() {
            return Posteriors {
                log_likelihood: ll,
                gamma,
                xi,
            };
        }
        let mut beta = vec![1.0; n];
        gamma[(t_len - 1) * n..].copy_from_slice(&alpha[(t_len - 1) * n..]);
        for t in (0..t_len - 1).rev() {
            let c = scale[t + 1];
            let next: Vec<f64> = (0..n).map(|j| e[(t + 1) * n + j] * beta[j]).collect();
            for i in 0..n {
                for j in 0..n {
                    xi[i * n + j] += alpha[t * n + i] * self.transitions[i * n + j] * next[j] / c;
                }
            }
            let nb: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| self.transitions[i * n + j] * next[j]).sum::<f64>() / c)
                .collect();
            beta = nb;
            let row = &mut gamma[t * n..(t + 1) * n];
            for (j, g) in row.iter_mut().enumerate() {
                *g = alpha[t * n + j] * beta[j];
            }
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|g| *g /= s);
            }
        }
        Posteriors {
            log_likelihood: ll,
            gamma,
            xi,
        }
    }

    /// Left-to-right start: sequences cut into `n` equal segments give the
    /// initial emissions, perturbed by `rng` so restarts differ.
    fn initial_model<R: Rng + ?Sized>(seqs: &[FeatureSeq], n: usize, floor: f64, rng: &mut R) -> Self {
        let d = seqs[0].width;
        let mut sum = vec![0.0; n * d];
        let mut sq = vec![0.0; n * d];
        let mut count = vec![0.0; n];
        for s in seqs {
            let t_len = s.len();
            for t in 0..t_len {
                let j = (t * n / t_len).min(n - 1);
                count[j] += 1.0;
                for (k, &x) in s.row(t).iter().enumerate() {
                    sum[j * d + k] += x;
                    sq[j * d + k] += x * x;
                }
            }
        }
        let (gm, gv) = global_moments(seqs, floor);
        let mut means = vec![0.0; n * d];
        let mut variances = vec![0.0; n * d];
        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        for j in 0..n {
            for k in 0..d {
                let (m, v) = if count[j] > 0.0 {
                    let m = sum[j * d + k] / count[j];
                    (m, sq[j * d + k] / count[j] - m * m)
                } else {
                    (gm[k], gv[k])
                };
                let v = v.max(floor);
                means[j * d + k] = m + 0.25 * v.sqrt() * noise.sample(rng);
                variances[j * d + k] = v;
            }
        }
        let mut transitions = vec![0.0; n * n];
        for i in 0..n {
            if i + 1 < n {
                let stay = rng.random_range(0.5..0.9);
                transitions[i * n + i] = stay;
                transitions[i * n + i + 1] = 1.0 - stay;
            } else {
                transitions[i * n + i] = 1.0;
            }
        }
        let mut initial = vec![0.0; n];
        initial[0] = 1.0;
        Self {
            width: d,
            initial,
            transitions,
            means,
            variances,
        }
    }

    /// One Baum-Welch step over all sequences. Returns the new model and the
    /// total log-likelihood of the current one.
    fn em_step(&self, seqs: &[FeatureSeq], floor: f64) -> (Self, f64) {
        let n = self.states();
        let d = self.width;
        let posts: Vec<Posteriors> = seqs.par_iter().map(|s| self.posteriors(s)).collect();
        let total: f64 = posts.iter().map(|p| p.log_likelihood).sum();

        let mut init = vec![0.0; n];
        let mut trans = vec![0.0; n * n];
        let mut occ = vec![0.0; n];
        let mut sum = vec![0.0; n * d];
        let mut sq = vec![0.0; n * d];
        for (s, p) in seqs.iter().zip(&posts) {
            if !p.log_likelihood.is_finite() {
                continue;
            }
            for (acc, g) in init.iter_mut().zip(&p.gamma) {
                *acc += g;
            }
            for (t, v) in trans.iter_mut().zip(&p.xi) {
                *t += v;
            }
            for t in 0..s.len() {
                for j in 0..n {
                    let g = p.gamma[t * n + j];
                    occ[j] += g;
                    for (k, &x) in s.row(t).iter().enumerate() {
                        sum[j * d + k] += g * x;
                        sq[j * d + k] += g * x * x;
                    }
                }
            }
        }
        let mut next = self.clone();
        let z: f64 = init.iter().sum();
        if z > 0.0 {
            next.initial = init.iter().map(|v| v / z).collect();
        }
        for i in 0..n {
            let row: f64 = trans[i * n..(i + 1) * n].iter().sum();
            if row > 0.0 {
                for j in 0..n {
                    next.transitions[i * n + j] = trans[i * n + j] / row;
                }
            }
            if occ[i] > 0.0 {
                for k in 0..d {
                    let m = sum[i * d + k] / occ[i];
                    next.means[i * d + k] = m;
                    next.variances[i * d + k] = (sq[i * d + k] / occ[i] - m * m).max(floor);
                }
            }
        }
        (next, total)
    }
}

fn global_moments(seqs: &[FeatureSeq], floor: f64) -> (Vec<f64>, Vec<f64>) {
    let d = seqs[0].width;
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    let mut n = 0.0;
    for s in seqs {
        for t in 0..s.len() {
            n += 1.0;
            for (k, &x) in s.row(t).iter().enumerate() {
                sum[k] += x;
                sq[k] += x * x;
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let var = sq.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(floor)).collect();
    (mean, var)
}

/// Fit one HMM by Baum-Welch until the log-likelihood gain drops below the
/// tolerance or the iteration budget runs out. A single state has a closed
/// form and skips EM.
pub fn fit(seqs: &[FeatureSeq], config: &HmmConfig, seed: u64) -> Result<(GaussianHmm, FitTrace)> {
    config.validate()?;
    let Some(first) = seqs.first() else {
        return Err(Error::InvalidInput("no training sequences".into()));
    };
    if seqs.iter().any(|s| s.width != first.width || s.is_empty()) {
        return Err(Error::ShapeError("training sequences differ in width or are empty".into()));
    }
    if config.states == 1 {
        let (means, variances) = global_moments(seqs, config.variance_floor);
        let model = GaussianHmm {
            width: first.width,
            initial: vec![1.0],
            transitions: vec![1.0],
            means,
            variances,
        };
        let ll = seqs.iter().map(|s| model.log_likelihood(s)).sum::<Result<f64>>()?;
        return Ok((
            model,
            FitTrace {
                log_likelihoods: vec![ll],
                iterations: 0,
            },
        ));
    }
    let mut rng = stream(seed, "hmm-init");
    let mut model = GaussianHmm::initial_model(seqs, config.states, config.variance_floor, &mut rng);
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let (next, ll) = model.em_step(seqs, config.variance_floor);
        trace.push(ll);
        let converged = trace.len() >= 2 && ll - trace[trace.len() - 2] < config.tolerance;
        if converged || iterations == config.max_iterations {
            break;
        }
        model = next;
        iterations += 1;
    }
    Ok((
        model,
        FitTrace {
            log_likelihoods: trace,
            iterations,
        },
    ))
}

/// Per-class log-likelihoods and the resulting decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmDecision {
    pub log_likelihoods: Vec<f64>,
    pub posterior: ClassPosterior,
}

/// Softmax over log-likelihoods, i.e. the class posterior under equal
/// priors; the prediction is the first maximal log-likelihood.
pub fn decide(log_likelihoods: Vec<f64>) -> HmmDecision {
    let max = log_likelihoods.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = if max.is_finite() {
        log_likelihoods.iter().map(|l| (l - max).exp()).collect()
    } else {
        vec![1.0; log_likelihoods.len()]
    };
    let z: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= z);
    let predicted = log_likelihoods
        .iter()
        .enumerate()
        .fold(0, |best, (i, &l)| if l > log_likelihoods[best] { i } else { best });
    HmmDecision {
        log_likelihoods,
        posterior: ClassPosterior { probs, predicted },
    }
}

pub fn classify(models: &[GaussianHmm], seq: &FeatureSeq) -> Result<HmmDecision> {
    if models.len() < 2 {
        return Err(Error::InvalidInput("need at least two class models".into()));
    }
    let lls = models.iter().map(|m| m.log_likelihood(seq)).collect::<Result<Vec<_>>>()?;
    Ok(decide(lls))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmEnsembleChoice {
    /// Chosen candidate index per class.
    pub chosen: Vec<usize>,
    pub accuracy: f64,
    /// Every combination evaluated, with its validation accuracy.
    pub evaluated: Vec<(Vec<usize>, f64)>,
    pub greedy: bool,
}

/// Largest number of combinations searched exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 256;

/// Pick one candidate per class to maximize validation accuracy:
/// exhaustively when there are few combinations, otherwise greedily one
/// class at a time with the others held at their best so far.
pub fn select_restarts(candidates: &[Vec<GaussianHmm>], validation: &[Labelled]) -> Result<HmmEnsembleChoice> {
    if candidates.len() < 2 || candidates.iter().any(Vec::is_empty) {
        return Err(Error::InvalidInput("need at least one candidate for each of two or more classes".into()));
    }
    if validation.is_empty() {
        return Err(Error::InvalidSplit("empty validation set".into()));
    }
    // ll[class][candidate][sample]
    let ll: Vec<Vec<Vec<f64>>> = candidates
        .iter()
        .map(|cands| {
            cands
                .iter()
                .map(|m| validation.par_iter().map(|(s, _)| m.log_likelihood(s)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let score = |combo: &[usize]| -> f64 {
        let hits = validation
            .iter()
            .enumerate()
            .filter(|(i, (_, y))| {
                let lls: Vec<f64> = combo.iter().enumerate().map(|(c, &k)| ll[c][k][*i]).collect();
                decide(lls).posterior.predicted == *y
            })
            .count();
        hits as f64 / validation.len() as f64
    };
    let sizes: Vec<usize> = candidates.iter().map(Vec::len).collect();
    let total = sizes.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s));
    let mut evaluated = Vec::new();
    let greedy = total.is_none_or(|t| t > EXHAUSTIVE_LIMIT);
    if let (false, Some(total)) = (greedy, total) {
        for mut index in 0..total {
            // mixed-radix digits, last class fastest
            let mut combo = vec![0; sizes.len()];
            for c in (0..sizes.len()).rev() {
                combo[c] = index % sizes[c];
                index /= sizes[c];
            }
            let acc = score(&combo);
            evaluated.push((combo, acc));
        }
    } else {
        let mut combo = vec![0; sizes.len()];
        for c in 0..sizes.len() {
            let mut best = (combo[c], f64::NEG_INFINITY);
            for k in 0..sizes[c] {
                combo[c] = k;
                let acc = score(&combo);
                evaluated.push((combo.clone(), acc));
                if acc > best.1 {
                    best = (k, acc);
                }
            }
            combo[c] = best.0;
        }
        let acc = score(&combo);
        evaluated.push((combo, acc));
    }
    let (chosen, accuracy) = evaluated
        .iter()
        .fold(None::<&(Vec<usize>, f64)>, |best, e| match best {
            Some(b) if b.1 >= e.1 => Some(b),
            _ => Some(e),
        })
        .cloned()
        .expect("at least one combination");
    Ok(HmmEnsembleChoice {
        chosen,
        accuracy,
        evaluated,
        greedy,
    })
}

/// One chosen HMM per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmClassifier {
    pub models: Vec<GaussianHmm>,
}

impl HmmClassifier {
    pub fn classify(&self, seq: &FeatureSeq) -> Result<HmmDecision> {
        classify(&self.models, seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.len() < 2 {
            return Err(Error::ShapeError("an HMM classifier needs at least two class models".into()));
        }
        let w = self.models[0].width;
        for m in &self.models {
            m.validate()?;
            if m.width != w {
                return Err(Error::ShapeError("class models differ in width".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmTrainReport {
    pub choice: HmmEnsembleChoice,
    /// EM trace for every class and restart.
    pub traces: Vec<Vec<FitTrace>>,
}

/// Fit `restarts` models per class in parallel and keep the best
/// combination on validation data.
pub fn train_classifier(
    train: &[Labelled],
    validation: &[Labelled],
    classes: usize,
    config: &HmmConfig,
    seed: u64,
) -> Result<(HmmClassifier, HmmTrainReport)> {
    config.validate()?;
    let per_class: Vec<Vec<FeatureSeq>> = (0..classes)
        .map(|c| train.iter().filter(|(_, y)| *y == c).map(|(s, _)| s.clone()).collect())
        .collect();
    if per_class.iter().any(Vec::is_empty) {
        return Err(Error::InvalidSplit("every class needs training sequences".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..classes).flat_map(|c| (0..config.restarts).map(move |r| (c, r))).collect();
    let fitted: Vec<(GaussianHmm, FitTrace)> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let s = item_stream(seed, &format!("hmm/{c}"), r as u64).random();
            fit(&per_class[c], config, s)
        })
        .collect::<Result<_>>()?;
    let mut candidates = vec![Vec::new(); classes];
    let mut traces = vec![Vec::new(); classes];
    for ((c, _), (m, t)) in jobs.iter().zip(fitted) {
        candidates[*c].push(m);
        traces[*c].push(t);
    }
    let choice = select_restarts(&candidates, validation)?;
    let models = choice.chosen.iter().enumerate().map(|(c, &k)| candidates[c][k].clone()).collect();
    Ok((HmmClassifier { models }, HmmTrainReport { choice, traces }))
}
