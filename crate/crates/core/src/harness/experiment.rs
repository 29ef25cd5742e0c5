//! The experiments a run configuration can name, and what they write.
//!
//! Every experiment writes `config.snapshot` (the resolved configuration) and
//! one JSON-lines metrics file per trajectory into the output directory.
//! Wall-clock timings go under `timings/` so the metrics files themselves are
//! reproducible byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use tracing::info;

use super::blobs::{make_blobs, split_blobs};
use super::config::{DatasetKind, Experiment, RunConfig};
use super::idx::load_idx;
use super::metrics::{difference, write_diff_csv, write_jsonl, write_timings, DiffRow, RoundMetrics};
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::fedsim::{Dataset, FedConfig, FullGradientCodec, Simulation, SyntheticCodec, Transport, UplinkCodec};
use crate::reverse::run_double_distill;
use crate::rng::Streams;

pub const SNAPSHOT_FILE: &str = "config.snapshot";
pub const THREADS_ENV: &str = "FEDSYNTH_THREADS";

/// Worker count from `FEDSYNTH_THREADS`, else the machine's parallelism.
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// `(train, test)` for the configured dataset.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    match cfg.dataset {
        DatasetKind::Blobs => {
            let all = make_blobs(
                cfg.blob_classes,
                cfg.blob_train_per_class + cfg.blob_test_per_class,
                cfg.blob_dim,
                cfg.blob_spread,
                &mut Streams::new(cfg.master_seed).dataset(),
            )?;
            Ok(split_blobs(&all, cfg.blob_train_per_class))
        }
        DatasetKind::IdxFiles => Ok((
            load_idx(&cfg.train_images, &cfg.train_labels)?,
            load_idx(&cfg.test_images, &cfg.test_labels)?,
        )),
    }
}

/// A named metrics series.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub name: String,
    pub rows: Vec<RoundMetrics>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub trajectories: Vec<Trajectory>,
    /// `synthetic − full_gradient`, for `compare_transports`.
    pub diff: Option<Vec<DiffRow>>,
}

impl ExperimentOutput {
    pub fn get(&self, name: &str) -> Option<&[RoundMetrics]> {
        self.trajectories.iter().find(|t| t.name == name).map(|t| t.rows.as_slice())
    }
}

struct Context<'a> {
    cfg: &'a RunConfig,
    train: Dataset,
    test: Dataset,
    threads: usize,
}

impl Context<'_> {
    fn simulation(&self, fed: FedConfig, codec: Arc<dyn UplinkCodec>) -> Result<Simulation> {
        Simulation::new(
            fed,
            self.cfg.arch()?,
            &self.train,
            self.test.clone(),
            Streams::new(self.cfg.master_seed),
            codec,
            self.threads,
        )
    }

    fn synthetic(&self, distill: DistillConfig) -> Arc<dyn UplinkCodec> {
        Arc::new(SyntheticCodec {
            cfg: distill,
            include_etas: self.cfg.include_etas,
        })
    }

    fn run(&self, transport: Transport, codec: Arc<dyn UplinkCodec>) -> Result<Vec<RoundMetrics>> {
        let fed = FedConfig {
            transport,
            ..self.cfg.fed.clone()
        };
        self.simulation(fed, codec)?.run()
    }
}

/// [`run_experiment_with`] using `FEDSYNTH_THREADS` workers and the regular
/// codecs.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentOutput> {
    run_experiment_with(cfg, threads_from_env(), None)
}

/// Runs `cfg.experiment` and writes its files under `cfg.output_dir`.
///
/// `synthetic_override` replaces the synthetic codec in every synthetic
/// trajectory; tests use it to force particular decodes.
pub fn run_experiment_with(
    cfg: &RunConfig,
    threads: usize,
    synthetic_override: Option<Arc<dyn UplinkCodec>>,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let (train, test) = load_data(cfg)?;
    let ctx = Context {
        cfg,
        train,
        test,
        threads,
    };
    let synthetic = |distill: DistillConfig| synthetic_override.clone().unwrap_or_else(|| ctx.synthetic(distill));

    let mut out = ExperimentOutput {
        trajectories: Vec::new(),
        diff: None,
    };
    match cfg.experiment {
        Experiment::CompareTransports => {
            info!("full-gradient trajectory");
            let full = ctx.run(Transport::FullGradient, Arc::new(FullGradientCodec))?;
            info!("synthetic trajectory");
            let synth = ctx.run(Transport::Synthetic, synthetic(cfg.distill.clone()))?;
            out.diff = Some(difference(&full, &synth));
            out.trajectories.push(Trajectory {
                name: "full_gradient".into(),
                rows: full,
            });
            out.trajectories.push(Trajectory {
                name: "synthetic".into(),
                rows: synth,
            });
        }
        Experiment::LrSweep => {
            for &alpha in &cfg.lr_grid {
                info!(alpha, "synthetic trajectory");
                let distill = DistillConfig {
                    distill_lr: alpha,
                    ..cfg.distill.clone()
                };
                out.trajectories.push(Trajectory {
                    name: format!("synthetic_lr_{alpha}"),
                    rows: ctx.run(Transport::Synthetic, synthetic(distill))?,
                });
            }
        }
        Experiment::DoubleDistill => {
            let fed = FedConfig {
                transport: Transport::Synthetic,
                ..cfg.fed.clone()
            };
            let mut sim = ctx.simulation(fed, synthetic(cfg.distill.clone()))?;
            let rows = run_double_distill(&mut sim, &cfg.reverse, &cfg.distill, cfg.include_etas)?;
            out.trajectories.push(Trajectory {
                name: "double_distill".into(),
                rows,
            });
        }
    }
    write_outputs(cfg, &out)?;
    Ok(out)
}

fn metrics_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.jsonl"))
}

fn write_outputs(cfg: &RunConfig, out: &ExperimentOutput) -> Result<()> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir.join("timings"))
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    fs::write(dir.join(SNAPSHOT_FILE), cfg.snapshot())?;
    for t in &out.trajectories {
        write_jsonl(&metrics_path(dir, &t.name), &t.rows)?;
        write_timings(&dir.join("timings").join(format!("{}.jsonl", t.name)), &t.rows)?;
    }
    if let Some(diff) = &out.diff {
        write_diff_csv(fs::File::create(dir.join("diff.csv"))?, diff)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::parse_str(
            "num_clients = 4\ncohort_size = 2\nrounds = 2\nblob_train_per_class = 20\n\
             blob_test_per_class = 10\nhidden = 4\ndistill_steps = 5\nnum_synth_batches = 2\n\
             synth_batch_size = 3\nsynth_epochs = 2\nlocal_epochs = 1\n",
        )
        .unwrap();
        cfg.output_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn compare_writes_files_and_snapshot_reproduces() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let out = run_experiment_with(&cfg, 1, None).unwrap();
        assert_eq!(out.get("synthetic").unwrap().len(), 2);
        for f in ["config.snapshot", "full_gradient.jsonl", "synthetic.jsonl", "diff.csv", "timings/synthetic.jsonl"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let again = RunConfig::parse_str(&fs::read_to_string(dir.path().join(SNAPSHOT_FILE)).unwrap()).unwrap();
        assert_eq!(again, cfg);
        let first = fs::read(dir.path().join("synthetic.jsonl")).unwrap();
        run_experiment_with(&again, 2, None).unwrap();
        assert_eq!(fs::read(dir.path().join("synthetic.jsonl")).unwrap(), first);
    }

    #[test]
    fn exact_synthetic_decode_gives_zero_difference() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let out = run_experiment_with(&cfg, 1, Some(Arc::new(FullGradientCodec))).unwrap();
        let diff = out.diff.unwrap();
        assert_eq!(diff.len(), 2);
        assert!(diff.iter().all(|r| r.accuracy_diff == 0.0 && r.loss_diff == 0.0));
    }

    #[test]
    fn sweep_names_each_rate() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.experiment = Experiment::LrSweep;
        cfg.lr_grid = vec![0.1, 0.3];
        cfg.fed.rounds = 1;
        let out = run_experiment_with(&cfg, 1, None).unwrap();
        assert!(out.get("synthetic_lr_0.1").is_some());
        assert!(dir.path().join("synthetic_lr_0.3.jsonl").exists());
    }

    #[test]
    fn invalid_config_fails_before_compute() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.fed.cohort_size = 50;
        assert!(matches!(run_experiment_with(&cfg, 1, None), Err(Error::Config(_))));
        assert!(!dir.path().join(SNAPSHOT_FILE).exists());
    }
}
