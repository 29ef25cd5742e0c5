//! Fitting a synthetic payload to a true update.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use tracing::debug;

use super::decode::record;
use super::loss::{param_sq_loss, project_simplex_in_place, LossVariant, MetaLoss};
use super::payload::{epoch_schedule, SyntheticBatch, SyntheticPayload};
use crate::error::{Error, Result};
use crate::fedsim::ClientShard;
use crate::nn::{self, matrix::norm, Matrix, ModelParams};
use crate::rng::StreamRng;

/// Step sizes are clamped to at least this after every meta-update.
pub const ETA_FLOOR: f64 = 1e-6;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Weight of the Dirichlet(1) draw mixed into the uniform label vector at
/// initialization.
const LABEL_JITTER: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaOptimizer {
    Adam,
    Gd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// i.i.d. standard normal scaled by the per-feature std of the real data.
    Gaussian,
    /// Random real points plus N(0, 0.01) noise.
    SampleReal,
}

impl std::str::FromStr for MetaOptimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::Adam),
            "gd" => Ok(Self::Gd),
            other => Err(Error::Config(format!("unknown meta optimizer `{other}`"))),
        }
    }
}

impl std::fmt::Display for MetaOptimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Adam => "adam",
            Self::Gd => "gd",
        })
    }
}

impl std::str::FromStr for InitScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "sample_real" => Ok(Self::SampleReal),
            other => Err(Error::Config(format!("unknown init scheme `{other}`"))),
        }
    }
}

impl std::fmt::Display for InitScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian",
            Self::SampleReal => "sample_real",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub num_synth_batches: usize,
    pub synth_batch_size: usize,
    /// Passes over the batches during decoding; `M = num_synth_batches * synth_epochs`.
    pub synth_epochs: usize,
    /// Meta learning rate α.
    pub distill_lr: f64,
    /// Meta-steps T.
    pub distill_steps: usize,
    pub meta_optimizer: MetaOptimizer,
    pub loss_variant: LossVariant,
    pub init_scheme: InitScheme,
    /// Per-step multiplicative decay of α.
    pub lr_decay: f64,
    /// Initial value of every η.
    pub eta_init: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            num_synth_batches: 5,
            synth_batch_size: 10,
            synth_epochs: 5,
            distill_lr: 0.2,
            distill_steps: 300,
            meta_optimizer: MetaOptimizer::Adam,
            loss_variant: LossVariant::ParamSq,
            init_scheme: InitScheme::Gaussian,
            lr_decay: 0.995,
            eta_init: 0.02,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_synth_batches", self.num_synth_batches),
            ("synth_batch_size", self.synth_batch_size),
            ("synth_epochs", self.synth_epochs),
            ("distill_steps", self.distill_steps),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("distill_lr", self.distill_lr),
            ("lr_decay", self.lr_decay),
            ("eta_init", self.eta_init),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a positive number")));
            }
        }
        Ok(())
    }

    /// Unroll length M.
    pub fn num_steps(&self) -> usize {
        self.num_synth_batches * self.synth_epochs
    }

    pub fn num_points(&self) -> usize {
        self.num_synth_batches * self.synth_batch_size
    }
}

/// Keeps the lowest-scoring candidate seen so far; ties keep the incumbent.
#[derive(Debug, Clone)]
pub struct BestTracker<T> {
    best: Option<(T, f64, usize)>,
}

impl<T> Default for BestTracker<T> {
    fn default() -> Self {
        Self { best: None }
    }
}

impl<T> BestTracker<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Whether a candidate with this score would replace the incumbent.
    pub fn improves(&self, score: f64) -> bool {
        match &self.best {
            None => true,
            Some((_, s, _)) => score < *s,
        }
    }

    /// Offers a candidate produced at `step`; returns whether it was retained.
    pub fn offer(&mut self, candidate: T, score: f64, step: usize) -> bool {
        let keep = self.improves(score);
        if keep {
            self.best = Some((candidate, score, step));
        }
        keep
    }

    pub fn offer_with(&mut self, score: f64, step: usize, candidate: impl FnOnce() -> T) -> bool {
        if self.improves(score) {
            self.best = Some((candidate(), score, step));
            true
        } else {
            false
        }
    }

    pub fn best(&self) -> Option<&T> {
        self.best.as_ref().map(|b| &b.0)
    }

    pub fn best_score(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.1)
    }

    pub fn best_step(&self) -> Option<usize> {
        self.best.as_ref().map(|b| b.2)
    }

    pub fn into_best(self) -> Option<(T, f64, usize)> {
        self.best
    }
}

/// Criterion used to pick the payload that is finally returned.
#[derive(Debug, Clone, Copy)]
pub enum Selection<'a> {
    /// Cross-entropy of `w0 − g` on the client's real, hard-labelled data.
    ClientCrossEntropy { x: &'a Matrix, labels: &'a [usize] },
    /// `‖θ − g‖²`.
    TargetDistance,
}

/// Cross-entropy of the decoded model `w0 − g` on labelled data.
pub fn client_ce(payload: &SyntheticPayload, w0: &ModelParams, x: &Matrix, labels: &[usize]) -> Result<f64> {
    let g = super::update_from_synthetic(payload, w0)?;
    nn::cross_entropy(&w0.step(&g)?, x, labels)
}

/// Decodes `candidate` and offers it to `tracker` scored by client
/// cross-entropy.
pub fn track_best(
    tracker: &mut BestTracker<SyntheticPayload>,
    candidate: &SyntheticPayload,
    client: &ClientShard,
    w0: &ModelParams,
    step: usize,
) -> Result<bool> {
    let ce = client_ce(candidate, w0, &client.x, &client.labels)?;
    Ok(tracker.offer_with(ce, step, || candidate.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Meta-loss of the initial payload (NaN if it was degenerate).
    pub initial_loss: f64,
    /// Meta-loss of the final iterate.
    pub final_loss: f64,
    /// Meta-loss of the returned payload.
    pub best_loss: f64,
    /// Selection score of the returned payload.
    pub best_score: f64,
    /// Meta-step at which the returned payload was produced.
    pub best_step: usize,
    pub skipped_steps: usize,
    pub decoder_calls: usize,
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub payload: SyntheticPayload,
    /// The payload's own decode against `w0`, as computed during fitting.
    pub decoded: Vec<f64>,
    pub report: FitReport,
}

/// Fits a payload to the client's true update `θ` and returns the candidate
/// whose decoded model has the lowest cross-entropy on the client's data.
pub fn client_update(
    client: &ClientShard,
    w0: &ModelParams,
    theta: &[f64],
    cfg: &DistillConfig,
    rng: &mut StreamRng,
) -> Result<Fitted> {
    fit_payload(
        w0,
        theta,
        cfg,
        Some(&client.x),
        Selection::ClientCrossEntropy {
            x: &client.x,
            labels: &client.labels,
        },
        rng,
    )
}

/// Meta-optimizes a payload so that decoding it from `w0` reproduces `theta`.
///
/// `init_data` supplies feature scales (and points, for `sample_real`) for the
/// initial covariates; without it features are drawn at unit scale.
pub fn fit_payload(
    w0: &ModelParams,
    theta: &[f64],
    cfg: &DistillConfig,
    init_data: Option<&Matrix>,
    selection: Selection<'_>,
    rng: &mut StreamRng,
) -> Result<Fitted> {
    cfg.validate()?;
    if theta.len() != w0.len() {
        return Err(Error::Shape("θ length differs from model size".into()));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("true update"));
    }
    let arch = w0.arch().clone();
    let scales = feature_scales(init_data, arch.input_dim);
    let h = norm(theta);
    let batches = init_batches(cfg, &arch, init_data, &scales, rng)?;
    let mut current = SyntheticPayload::new(arch, batches, epoch_schedule(cfg.num_synth_batches, cfg.synth_epochs), h)?;

    if h == 0.0 {
        let decoded = vec![0.0; w0.len()];
        return Ok(Fitted {
            payload: current,
            decoded,
            report: FitReport {
                initial_loss: 0.0,
                final_loss: 0.0,
                best_loss: 0.0,
                best_score: 0.0,
                best_step: 0,
                skipped_steps: 0,
                decoder_calls: 0,
            },
        });
    }

    let meta = match (cfg.loss_variant, init_data) {
        (LossVariant::ParamSq, _) => MetaLoss::param_sq(theta),
        (LossVariant::FunctionKl, Some(x)) => MetaLoss::function_kl(x, w0, theta)?,
        (LossVariant::FunctionKl, None) => {
            return Err(Error::Config("function_kl meta-loss needs client data".into()))
        }
    };

    let mut tracker: BestTracker<(SyntheticPayload, Vec<f64>, f64)> = BestTracker::new();
    let mut opt = OptimizerState::new(cfg, flat_len(current.batches()));
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    let mut skipped = 0;
    let mut decoder_calls = 0;

    for step in 0..=cfg.distill_steps {
        decoder_calls += 1;
        let tape = match record(&current, w0) {
            Ok(t) => t,
            Err(Error::Degenerate(msg)) => {
                skipped += 1;
                debug!(step, %msg, "degenerate synthetic data, re-perturbing");
                perturb(current.batches_mut(), &scales, rng);
                continue;
            }
            Err(e) => return Err(e),
        };
        let g = tape.update().expect("finished tape");
        let (loss, cotangent) = meta.value_and_cotangent(g)?;
        if step == 0 {
            initial_loss = loss;
        }
        final_loss = loss;
        let score = match selection {
            Selection::ClientCrossEntropy { x, labels } => w0
                .step(g)
                .and_then(|w| nn::cross_entropy(&w, x, labels))
                .unwrap_or(f64::INFINITY),
            Selection::TargetDistance => param_sq_loss(theta, g)?,
        };
        tracker.offer_with(score, step, || (current.clone(), g.to_vec(), loss));
        if step == cfg.distill_steps {
            break;
        }
        let grads = tape.meta_grad(&cotangent)?;
        drop(tape);

        let flat_grad = flatten_grads(&grads);
        let mut params = flatten(current.batches());
        opt.apply(&mut params, &flat_grad);
        unflatten(current.batches_mut(), &params);
        for b in current.batches_mut() {
            project_simplex_in_place(&mut b.y);
            b.eta = b.eta.max(ETA_FLOOR);
        }
    }

    let (best, score, best_step) = tracker.into_best().ok_or_else(|| {
        Error::DistillFailed(format!(
            "all {} meta-steps produced degenerate synthetic data",
            cfg.distill_steps
        ))
    })?;
    let (payload, decoded, best_loss) = best;
    Ok(Fitted {
        payload,
        decoded,
        report: FitReport {
            initial_loss,
            final_loss,
            best_loss,
            best_score: score,
            best_step,
            skipped_steps: skipped,
            decoder_calls,
        },
    })
}

/// Population standard deviation of each feature; 1 where unavailable or zero
/// for every feature.
fn feature_scales(data: Option<&Matrix>, dim: usize) -> Vec<f64> {
    let Some(x) = data.filter(|x| x.rows() > 0 && x.cols() == dim) else {
        return vec![1.0; dim];
    };
    let n = x.rows() as f64;
    let mut mean = vec![0.0; dim];
    for r in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; dim];
    for r in x.iter_rows() {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let std: Vec<f64> = var.into_iter().map(f64::sqrt).collect();
    if std.iter().all(|&s| s == 0.0) {
        vec![1.0; dim]
    } else {
        std
    }
}

fn dirichlet_row(classes: usize, rng: &mut StreamRng) -> Vec<f64> {
    let draws: Vec<f64> = (0..classes).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / s).collect()
}

fn init_labels(rows: usize, classes: usize, rng: &mut StreamRng) -> Matrix {
    let mut y = Matrix::zeros(rows, classes);
    let uniform = 1.0 / classes as f64;
    for r in 0..rows {
        let d = dirichlet_row(classes, rng);
        for (c, dc) in d.into_iter().enumerate() {
            y.set(r, c, (1.0 - LABEL_JITTER) * uniform + LABEL_JITTER * dc);
        }
    }
    project_simplex_in_place(&mut y);
    y
}

fn init_batches(
    cfg: &DistillConfig,
    arch: &nn::ArchDescriptor,
    data: Option<&Matrix>,
    scales: &[f64],
    rng: &mut StreamRng,
) -> Result<Vec<SyntheticBatch>> {
    let (b, d) = (cfg.synth_batch_size, arch.input_dim);
    (0..cfg.num_synth_batches)
        .map(|_| {
            let x = match cfg.init_scheme {
                InitScheme::Gaussian => {
                    let mut x = Matrix::zeros(b, d);
                    for r in 0..b {
                        for (v, s) in x.row_mut(r).iter_mut().zip(scales) {
                            let z: f64 = StandardNormal.sample(rng);
                            *v = s * z;
                        }
                    }
                    x
                }
                InitScheme::SampleReal => {
                    let real = data.ok_or_else(|| {
                        Error::Config("sample_real initialization needs client data".into())
                    })?;
                    let idx: Vec<usize> = (0..b).map(|_| rng.gen_range(0..real.rows())).collect();
                    let mut x = real.select_rows(&idx);
                    for v in x.as_mut_slice() {
                        let z: f64 = StandardNormal.sample(rng);
                        *v += 0.1 * z;
                    }
                    x
                }
            };
            Ok(SyntheticBatch {
                x,
                y: init_labels(b, arch.num_classes, rng),
                eta: cfg.eta_init,
            })
        })
        .collect()
}

fn perturb(batches: &mut [SyntheticBatch], scales: &[f64], rng: &mut StreamRng) {
    for b in batches {
        for r in 0..b.x.rows() {
            for (v, s) in b.x.row_mut(r).iter_mut().zip(scales) {
                let z: f64 = StandardNormal.sample(rng);
                *v += 0.1 * s * z;
            }
        }
        for r in 0..b.y.rows() {
            let d = dirichlet_row(b.y.cols(), rng);
            for (v, dc) in b.y.row_mut(r).iter_mut().zip(d) {
                *v = 0.5 * *v + 0.5 * dc;
            }
        }
        project_simplex_in_place(&mut b.y);
    }
}

// Leaf layout for the meta-optimizer: per batch, X then Y then η.
fn flat_len(batches: &[SyntheticBatch]) -> usize {
    batches
        .iter()
        .map(|b| b.x.as_slice().len() + b.y.as_slice().len() + 1)
        .sum()
}

fn flatten(batches: &[SyntheticBatch]) -> Vec<f64> {
    let mut out = Vec::with_capacity(flat_len(batches));
    for b in batches {
        out.extend_from_slice(b.x.as_slice());
        out.extend_from_slice(b.y.as_slice());
        out.push(b.eta);
    }
    out
}

fn flatten_grads(g: &nn::LeafGrads) -> Vec<f64> {
    let mut out = Vec::new();
    for ((x, y), eta) in g.x.iter().zip(&g.y).zip(&g.eta) {
        out.extend_from_slice(x.as_slice());
        out.extend_from_slice(y.as_slice());
        out.push(*eta);
    }
    out
}

fn unflatten(batches: &mut [SyntheticBatch], flat: &[f64]) {
    let mut at = 0;
    for b in batches {
        let nx = b.x.as_slice().len();
        b.x.as_mut_slice().copy_from_slice(&flat[at..at + nx]);
        at += nx;
        let ny = b.y.as_slice().len();
        b.y.as_mut_slice().copy_from_slice(&flat[at..at + ny]);
        at += ny;
        b.eta = flat[at];
        at += 1;
    }
}

struct OptimizerState {
    kind: MetaOptimizer,
    lr: f64,
    decay: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    fn new(cfg: &DistillConfig, len: usize) -> Self {
        Self {
            kind: cfg.meta_optimizer,
            lr: cfg.distill_lr,
            decay: cfg.lr_decay,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        let lr = self.lr * self.decay.powi(self.t);
        self.t += 1;
        match self.kind {
            MetaOptimizer::Gd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            MetaOptimizer::Adam => {
                let c1 = 1.0 - ADAM_BETA1.powi(self.t);
                let c2 = 1.0 - ADAM_BETA2.powi(self.t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::update_from_synthetic;
    use rand::SeedableRng;

    #[test]
    fn tracker_semantics() {
        let mut t = BestTracker::new();
        assert!(t.offer("a", 3.0, 0));
        assert!(t.offer("b", 1.0, 1));
        assert!(!t.offer("c", 2.0, 2));
        assert!(!t.offer("d", 1.0, 3), "ties keep the incumbent");
        assert_eq!(t.best(), Some(&"b"));
        assert_eq!(t.best_step(), Some(1));
        assert_eq!(t.best_score(), Some(1.0));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = DistillConfig {
            distill_lr: 0.1,
            ..DistillConfig::default()
        };
        let mut opt = OptimizerState::new(&cfg, 2);
        let mut p = vec![1.0, 1.0];
        opt.apply(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-8);
        assert!((p[1] - 1.1).abs() < 1e-8);
        // second step uses the decayed rate
        let before = p.clone();
        opt.apply(&mut p, &[3.0, -0.5]);
        assert!((before[0] - p[0] - 0.1 * 0.995).abs() < 1e-8);
    }

    #[test]
    fn flatten_round_trip() {
        let mut rng = StreamRng::seed_from_u64(1);
        let arch = nn::ArchDescriptor::mlp(&[2, 3]).unwrap();
        let cfg = DistillConfig {
            num_synth_batches: 2,
            synth_batch_size: 3,
            ..DistillConfig::default()
        };
        let mut batches = init_batches(&cfg, &arch, None, &[1.0, 1.0], &mut rng).unwrap();
        let flat = flatten(&batches);
        assert_eq!(flat.len(), flat_len(&batches));
        let orig = batches.clone();
        unflatten(&mut batches, &flat);
        assert_eq!(batches, orig);
        for b in &batches {
            for r in b.y.iter_rows() {
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_target_short_circuits() {
        let arch = nn::ArchDescriptor::mlp(&[2, 4, 3]).unwrap();
        let mut rng = StreamRng::seed_from_u64(2);
        let w0 = ModelParams::init(arch, &mut rng);
        let theta = vec![0.0; w0.len()];
        let fit = fit_payload(
            &w0,
            &theta,
            &DistillConfig::default(),
            None,
            Selection::TargetDistance,
            &mut rng,
        )
        .unwrap();
        assert_eq!(fit.payload.h(), 0.0);
        assert!(update_from_synthetic(&fit.payload, &w0).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(DistillConfig::default().validate().is_ok());
        let bad = DistillConfig {
            synth_epochs: 0,
            ..DistillConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = DistillConfig {
            distill_lr: -1.0,
            ..DistillConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(DistillConfig::default().num_steps(), 25);
    }
}
