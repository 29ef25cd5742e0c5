use std::sync::Arc;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use tracing::warn;

use super::{aggregate, local_update, shard_iid, shard_noniid, ClientShard, Dataset, FedConfig, Partition};
use crate::distill::{self, DistillConfig, FitReport, SyntheticPayload};
use crate::error::{Error, Result};
use crate::harness::accounting::{payload_float_count, CommCost};
use crate::harness::metrics::RoundMetrics;
use crate::nn::{self, model::{read_f64s, write_f64s}, ArchDescriptor, ModelParams};
use crate::rng::{self, Streams};

/// What one client sends back in a round.
#[derive(Debug, Clone)]
pub struct ClientUpload {
    pub client_id: usize,
    /// Aggregation weight (the client's data size).
    pub weight: f64,
    /// Wire bytes.
    pub bytes: Vec<u8>,
    /// Floats charged to the upload.
    pub floats: u64,
    /// The update as the client itself decodes it.
    pub client_decode: Vec<f64>,
    pub fit: Option<FitReport>,
}

/// How a client's true update is carried to the server.
pub trait UplinkCodec: Send + Sync {
    fn encode(
        &self,
        client: &ClientShard,
        w0: &ModelParams,
        theta: Vec<f64>,
        round: usize,
    ) -> Result<ClientUpload>;

    /// Server-side reconstruction from the wire bytes.
    fn decode(&self, bytes: &[u8], w0: &ModelParams) -> Result<Vec<f64>>;
}

/// Sends `θ` itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct FullGradientCodec;

impl UplinkCodec for FullGradientCodec {
    fn encode(&self, client: &ClientShard, _w0: &ModelParams, theta: Vec<f64>, _round: usize) -> Result<ClientUpload> {
        let mut bytes = Vec::with_capacity(theta.len() * 8);
        write_f64s(&mut bytes, &theta)?;
        Ok(ClientUpload {
            client_id: client.client_id,
            weight: client.len() as f64,
            bytes,
            floats: theta.len() as u64,
            client_decode: theta,
            fit: None,
        })
    }

    fn decode(&self, bytes: &[u8], w0: &ModelParams) -> Result<Vec<f64>> {
        if bytes.len() != w0.len() * 8 {
            return Err(Error::Format("full-gradient upload has the wrong length".into()));
        }
        read_f64s(&mut &bytes[..], w0.len())
    }
}

/// Sends a fitted synthetic payload.
#[derive(Debug, Clone)]
pub struct SyntheticCodec {
    pub cfg: DistillConfig,
    /// Count the step sizes in the upload accounting.
    pub include_etas: bool,
}

impl SyntheticCodec {
    pub fn cost(&self, payload: &SyntheticPayload) -> CommCost {
        let arch = payload.arch();
        CommCost {
            points: payload.num_points(),
            input_dim: arch.input_dim,
            num_classes: arch.num_classes,
            include_etas: self.include_etas,
            num_etas: payload.batches().len(),
            model_param_count: arch.param_count(),
        }
    }
}

impl UplinkCodec for SyntheticCodec {
    fn encode(&self, client: &ClientShard, w0: &ModelParams, theta: Vec<f64>, round: usize) -> Result<ClientUpload> {
        let mut stream = rng::distill(client.rng_seed, round);
        let fit = distill::client_update(client, w0, &theta, &self.cfg, &mut stream)?;
        Ok(ClientUpload {
            client_id: client.client_id,
            weight: client.len() as f64,
            bytes: fit.payload.to_bytes(),
            floats: payload_float_count(&self.cost(&fit.payload)),
            client_decode: fit.decoded,
            fit: Some(fit.report),
        })
    }

    fn decode(&self, bytes: &[u8], w0: &ModelParams) -> Result<Vec<f64>> {
        distill::update_from_synthetic(&SyntheticPayload::from_bytes(bytes)?, w0)
    }
}

/// Result of the client half of a round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub cohort: Vec<usize>,
    /// Aggregated server-side update.
    pub update: Vec<f64>,
    pub upload_floats: u64,
    pub distill_losses: Vec<f64>,
    pub failures: usize,
    pub decode_mismatches: usize,
    pub decoder_calls: u64,
}

fn is_client_failure(e: &Error) -> bool {
    matches!(e, Error::DistillFailed(_) | Error::Degenerate(_))
}

/// A federated run: shards, test data and the evolving server model.
pub struct Simulation {
    cfg: FedConfig,
    streams: Streams,
    shards: Vec<ClientShard>,
    test: Dataset,
    server: ModelParams,
    codec: Arc<dyn UplinkCodec>,
    pool: rayon::ThreadPool,
}

impl Simulation {
    /// Shards `train` per `cfg.partition` and initializes the server model
    /// from the run's init seed.
    pub fn new(
        cfg: FedConfig,
        arch: ArchDescriptor,
        train: &Dataset,
        test: Dataset,
        streams: Streams,
        codec: Arc<dyn UplinkCodec>,
        threads: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        arch.validate()?;
        if train.x.cols() != arch.input_dim || test.x.cols() != arch.input_dim {
            return Err(Error::Config("dataset width differs from the architecture".into()));
        }
        if train.num_classes != arch.num_classes {
            return Err(Error::Config("dataset classes differ from the architecture".into()));
        }
        let shards = match cfg.partition {
            Partition::Iid => shard_iid(train, cfg.num_clients, &streams)?,
            Partition::Noniid => {
                let k = cfg.num_clients * cfg.shards_per_client;
                shard_noniid(train, cfg.num_clients, cfg.shards_per_client, train.len() / k, &streams)?
            }
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(Self {
            server: ModelParams::from_seed(arch, streams.init_seed()),
            cfg,
            streams,
            shards,
            test,
            codec,
            pool,
        })
    }

    pub fn config(&self) -> &FedConfig {
        &self.cfg
    }

    pub fn streams(&self) -> &Streams {
        &self.streams
    }

    pub fn shards(&self) -> &[ClientShard] {
        &self.shards
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    pub fn server(&self) -> &ModelParams {
        &self.server
    }

    pub fn set_server(&mut self, params: ModelParams) -> Result<()> {
        if params.arch() != self.server.arch() {
            return Err(Error::Shape("replacement server model has a different architecture".into()));
        }
        self.server = params;
        Ok(())
    }

    /// Runs `f` on the simulation's worker pool.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    /// `cohort_size` distinct client ids from the round's stream, ascending.
    pub fn sample_cohort(&self, round: usize) -> Vec<usize> {
        let mut ids = index::sample(&mut self.streams.cohort(round), self.cfg.num_clients, self.cfg.cohort_size).into_vec();
        ids.sort_unstable();
        ids
    }

    /// `(test loss, test accuracy)`.
    pub fn evaluate(&self, params: &ModelParams) -> Result<(f64, f64)> {
        nn::evaluate(params, &self.test.x, &self.test.labels)
    }

    /// Local updates, uploads, server decodes and aggregation for the round's
    /// cohort, with every client starting from `w0`.
    pub fn client_phase(&self, round: usize, w0: &ModelParams) -> Result<RoundOutcome> {
        let cohort = self.sample_cohort(round);
        let codec = &self.codec;
        let results: Vec<Result<ClientUpload>> = self.pool.install(|| {
            cohort
                .par_iter()
                .map(|&c| {
                    let client = &self.shards[c];
                    let theta = local_update(client, w0, &self.cfg, round)?;
                    codec.encode(client, w0, theta, round)
                })
                .collect()
        });

        let mut updates = Vec::with_capacity(cohort.len());
        let mut weights = Vec::with_capacity(cohort.len());
        let mut out = RoundOutcome {
            cohort: cohort.clone(),
            update: Vec::new(),
            upload_floats: 0,
            distill_losses: Vec::new(),
            failures: 0,
            decode_mismatches: 0,
            decoder_calls: 0,
        };
        for (&c, res) in cohort.iter().zip(results) {
            let upload = match res {
                Ok(u) => u,
                Err(e) if is_client_failure(&e) => {
                    warn!(round, client = c, error = %e, "dropping client from cohort");
                    out.failures += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let server_side = codec.decode(&upload.bytes, w0)?;
            let same = server_side.len() == upload.client_decode.len()
                && server_side
                    .iter()
                    .zip(&upload.client_decode)
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                warn!(round, client = c, "server decode differs from client decode");
                out.decode_mismatches += 1;
            }
            out.upload_floats += upload.floats;
            if let Some(fit) = &upload.fit {
                out.distill_losses.push(fit.best_loss);
                out.decoder_calls += fit.decoder_calls as u64;
            }
            updates.push(server_side);
            weights.push(upload.weight);
        }
        if updates.is_empty() {
            return Err(Error::Round {
                round,
                reason: "every client in the cohort failed".into(),
            });
        }
        out.update = aggregate(&updates, &weights)?;
        Ok(out)
    }

    /// One round of federated training: `w ← w − aggregate(updates)`.
    pub fn run_round(&mut self, round: usize) -> Result<RoundMetrics> {
        let start = Instant::now();
        let outcome = self.client_phase(round, &self.server)?;
        self.server = self.server.step(&outcome.update)?;
        let (test_loss, test_accuracy) = self.evaluate(&self.server)?;
        Ok(RoundMetrics {
            round,
            test_accuracy,
            test_loss,
            upload_floats: outcome.upload_floats,
            download_floats: (outcome.cohort.len() * self.server.len()) as u64,
            distill_losses: outcome.distill_losses,
            failures: outcome.failures,
            decode_mismatches: outcome.decode_mismatches,
            decoder_calls: outcome.decoder_calls,
            restored_accuracy: None,
            wall_ms: start.elapsed().as_millis() as u64,
        })
    }

    pub fn run(&mut self) -> Result<Vec<RoundMetrics>> {
        (0..self.cfg.rounds).map(|r| self.run_round(r)).collect()
    }
}
