//! Server-to-client transmission: a client rebuilds the server model from the
//! seed that initialized it plus a server-fitted synthetic payload.
//!
//! The target is always the cumulative change `w_init − w_server`, never an
//! incremental one, so a client only ever needs the anchor and the latest
//! payload.

use std::collections::BTreeSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::distill::{self, fit_payload, DistillConfig, LossVariant, Selection, SyntheticPayload};
use crate::error::{Error, Result};
use crate::fedsim::Simulation;
use crate::harness::accounting::{payload_float_count, CommCost};
use crate::harness::metrics::RoundMetrics;
use crate::nn::{self, matrix::norm, ArchDescriptor, ModelParams};

const ANCHOR_VERSION: u32 = 1;

/// Enough to regenerate the server's initial model on a client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAnchor {
    pub init_seed: u64,
    pub arch: ArchDescriptor,
}

#[derive(Serialize, Deserialize)]
struct AnchorWire {
    version: u32,
    init_seed: u64,
    arch: ArchDescriptor,
}

impl SeedAnchor {
    pub fn expand(&self) -> ModelParams {
        ModelParams::from_seed(self.arch.clone(), self.init_seed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&AnchorWire {
            version: ANCHOR_VERSION,
            init_seed: self.init_seed,
            arch: self.arch.clone(),
        })
        .expect("anchor serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let w: AnchorWire = serde_json::from_str(s)?;
        if w.version != ANCHOR_VERSION {
            return Err(Error::Format(format!("unsupported anchor version {}", w.version)));
        }
        w.arch.validate()?;
        Ok(Self {
            init_seed: w.init_seed,
            arch: w.arch,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseConfig {
    pub num_batches: usize,
    pub batch_size: usize,
    pub synth_epochs: usize,
    pub distill_steps: usize,
    /// Independent fits per round; the best one is sent.
    pub num_seeds: usize,
    pub distill_lr: f64,
    /// A fit whose relative error `‖ŵ − w‖ / ‖w_init − w‖` reaches this is
    /// counted as a failure event.
    pub failure_threshold: f64,
}

impl Default for ReverseConfig {
    fn default() -> Self {
        Self {
            num_batches: 10,
            batch_size: 10,
            synth_epochs: 5,
            distill_steps: 600,
            num_seeds: 10,
            distill_lr: 0.2,
            failure_threshold: 1.0,
        }
    }
}

impl ReverseConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("reverse_num_batches", self.num_batches),
            ("reverse_batch_size", self.batch_size),
            ("reverse_synth_epochs", self.synth_epochs),
            ("reverse_distill_steps", self.distill_steps),
            ("reverse_num_seeds", self.num_seeds),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.distill_lr > 0.0 && self.distill_lr.is_finite()) {
            return Err(Error::Config("reverse_distill_lr must be a positive number".into()));
        }
        if self.failure_threshold.is_nan() || self.failure_threshold <= 0.0 {
            return Err(Error::Config("reverse_failure_threshold must be positive".into()));
        }
        Ok(())
    }

    /// The fitting configuration for one seed; unlisted knobs follow `base`.
    pub fn distill_config(&self, base: &DistillConfig) -> DistillConfig {
        DistillConfig {
            num_synth_batches: self.num_batches,
            synth_batch_size: self.batch_size,
            synth_epochs: self.synth_epochs,
            distill_lr: self.distill_lr,
            distill_steps: self.distill_steps,
            loss_variant: LossVariant::ParamSq,
            ..base.clone()
        }
    }

    pub fn num_points(&self) -> usize {
        self.num_batches * self.batch_size
    }
}

/// Outcome of the per-seed fits of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// `‖ŵ − w_server‖` per seed; `None` where the fit failed outright.
    pub distances: Vec<Option<f64>>,
    pub chosen: usize,
    pub chosen_distance: f64,
    /// `chosen_distance / ‖w_init − w_server‖`, or 0 when the two coincide.
    pub relative_error: f64,
    pub decoder_calls: u64,
}

#[derive(Debug, Clone)]
pub struct ServerFit {
    pub payload: SyntheticPayload,
    /// The server's own decode of `payload` against the anchor model.
    pub decoded: Vec<f64>,
    pub report: SelectionReport,
}

/// Fits `cfg.num_seeds` payloads in parallel, seed `i` drawing from
/// `rng_for(i)`, and keeps the one whose decoded model lands closest to
/// `w_server`. Ties go to the lower seed index.
pub fn fit_server_payload<F>(
    anchor: &SeedAnchor,
    w_server: &ModelParams,
    cfg: &ReverseConfig,
    base: &DistillConfig,
    rng_for: F,
) -> Result<ServerFit>
where
    F: Fn(usize) -> crate::rng::StreamRng + Sync,
{
    cfg.validate()?;
    let w_init = anchor.expand();
    if w_init.arch() != w_server.arch() {
        return Err(Error::Shape("anchor and server model architectures differ".into()));
    }
    let theta: Vec<f64> = w_init.values().iter().zip(w_server.values()).map(|(a, b)| a - b).collect();
    let dcfg = cfg.distill_config(base);

    let fits: Vec<Result<distill::Fitted>> = (0..cfg.num_seeds)
        .into_par_iter()
        .map(|i| fit_payload(&w_init, &theta, &dcfg, None, Selection::TargetDistance, &mut rng_for(i)))
        .collect();

    let target_norm = norm(&theta);
    let mut distances = Vec::with_capacity(fits.len());
    let mut best: Option<(usize, f64, distill::Fitted)> = None;
    let mut decoder_calls = 0u64;
    for (i, fit) in fits.into_iter().enumerate() {
        let fit = match fit {
            Ok(f) => f,
            Err(e @ (Error::DistillFailed(_) | Error::Degenerate(_))) => {
                warn!(seed = i, error = %e, "server fit failed");
                distances.push(None);
                continue;
            }
            Err(e) => return Err(e),
        };
        decoder_calls += fit.report.decoder_calls as u64;
        let d = theta
            .iter()
            .zip(&fit.decoded)
            .map(|(t, g)| (t - g) * (t - g))
            .sum::<f64>()
            .sqrt();
        distances.push(Some(d));
        if best.as_ref().is_none_or(|(_, bd, _)| d < *bd) {
            best = Some((i, d, fit));
        }
    }
    let (chosen, chosen_distance, fit) =
        best.ok_or_else(|| Error::DistillFailed(format!("all {} server fits failed", cfg.num_seeds)))?;
    Ok(ServerFit {
        payload: fit.payload,
        decoded: fit.decoded,
        report: SelectionReport {
            distances,
            chosen,
            chosen_distance,
            relative_error: if target_norm > 0.0 { chosen_distance / target_norm } else { 0.0 },
            decoder_calls,
        },
    })
}

/// `expand(anchor) − update_from_synthetic(payload, expand(anchor))`.
pub fn client_restore(anchor: &SeedAnchor, payload: &SyntheticPayload) -> Result<ModelParams> {
    if payload.arch() != &anchor.arch {
        return Err(Error::Shape("payload and anchor architectures differ".into()));
    }
    let w_init = anchor.expand();
    let g = distill::update_from_synthetic(payload, &w_init)?;
    w_init.step(&g)
}

fn payload_cost(payload: &SyntheticPayload, include_etas: bool) -> CommCost {
    let arch = payload.arch();
    CommCost {
        points: payload.num_points(),
        input_dim: arch.input_dim,
        num_classes: arch.num_classes,
        include_etas,
        num_etas: payload.batches().len(),
        model_param_count: arch.param_count(),
    }
}

/// Federated training with synthetic data in both directions.
///
/// Each round the server fits a payload that carries the anchor model to the
/// current server model; the cohort restores `ŵ` from it, trains from `ŵ`, and
/// uploads through the simulation's codec. The aggregate is applied to the
/// exact server model. A round whose server fit fails outright is skipped and
/// logged as a failure.
pub fn run_double_distill(
    sim: &mut Simulation,
    cfg: &ReverseConfig,
    base: &DistillConfig,
    include_etas: bool,
) -> Result<Vec<RoundMetrics>> {
    cfg.validate()?;
    let anchor = SeedAnchor {
        init_seed: sim.streams().init_seed(),
        arch: sim.server().arch().clone(),
    };
    if anchor.expand().values() != sim.server().values() {
        return Err(Error::Config("server model is not at its anchor initialization".into()));
    }
    let mut enrolled = BTreeSet::new();
    let mut rows = Vec::with_capacity(sim.config().rounds);

    for round in 0..sim.config().rounds {
        let start = Instant::now();
        let streams = *sim.streams();
        let server = sim.server().clone();
        let fitted = sim.install(|| {
            fit_server_payload(&anchor, &server, cfg, base, |slot| streams.reverse_fit(round, slot))
        });
        let fit = match fitted {
            Ok(f) => f,
            Err(e @ Error::DistillFailed(_)) => {
                warn!(round, error = %e, "server fit failed, skipping round");
                let (test_loss, test_accuracy) = sim.evaluate(&server)?;
                rows.push(RoundMetrics {
                    round,
                    test_accuracy,
                    test_loss,
                    upload_floats: 0,
                    download_floats: 0,
                    distill_losses: Vec::new(),
                    failures: 1,
                    decode_mismatches: 0,
                    decoder_calls: 0,
                    restored_accuracy: None,
                    wall_ms: start.elapsed().as_millis() as u64,
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut failures = 0;
        if fit.report.relative_error >= cfg.failure_threshold {
            warn!(round, relative_error = fit.report.relative_error, "server fit no closer than the anchor");
            failures += 1;
        }
        info!(round, relative_error = fit.report.relative_error, chosen = fit.report.chosen, "server payload fitted");

        // What every client reconstructs from the wire bytes.
        let wire = fit.payload.to_bytes();
        let restored = client_restore(&anchor, &SyntheticPayload::from_bytes(&wire)?)?;
        let server_view = anchor.expand().step(&fit.decoded)?;
        let mut mismatches = usize::from(
            restored
                .values()
                .iter()
                .zip(server_view.values())
                .any(|(a, b)| a.to_bits() != b.to_bits()),
        );

        let outcome = sim.client_phase(round, &restored)?;
        mismatches += outcome.decode_mismatches;
        let newcomers = outcome.cohort.iter().filter(|&&c| enrolled.insert(c)).count();
        let per_client = payload_float_count(&payload_cost(&fit.payload, include_etas));
        let next = server.step(&outcome.update)?;
        let (test_loss, test_accuracy) = sim.evaluate(&next)?;
        let restored_accuracy = nn::accuracy(&restored, &sim.test_set().x, &sim.test_set().labels)?;
        sim.set_server(next)?;

        rows.push(RoundMetrics {
            round,
            test_accuracy,
            test_loss,
            upload_floats: outcome.upload_floats,
            // the anchor is one seed, sent once per client
            download_floats: outcome.cohort.len() as u64 * per_client + newcomers as u64,
            distill_losses: outcome.distill_losses,
            failures: failures + outcome.failures,
            decode_mismatches: mismatches,
            decoder_calls: outcome.decoder_calls + fit.report.decoder_calls,
            restored_accuracy: Some(restored_accuracy),
            wall_ms: start.elapsed().as_millis() as u64,
        });
    }
    Ok(rows)
}
