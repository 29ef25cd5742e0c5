//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored; every other line must
//! set a known key. Values use the same spelling as [`RunConfig::snapshot`]
//! writes, so a snapshot can be fed straight back in.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::fedsim::FedConfig;
use crate::nn::{Activation, ArchDescriptor};
use crate::reverse::ReverseConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    CompareTransports,
    LrSweep,
    DoubleDistill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Blobs,
    IdxFiles,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($variant:ident => $name:literal),+) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(Self::$variant),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }
        impl Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self { $(Self::$variant => $name,)+ })
            }
        }
    };
}

keyword_enum!(Experiment, "experiment",
    CompareTransports => "compare_transports", LrSweep => "lr_sweep", DoubleDistill => "double_distill");
keyword_enum!(DatasetKind, "dataset", Blobs => "blobs", IdxFiles => "idx_files");

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub master_seed: u64,
    pub experiment: Experiment,
    pub dataset: DatasetKind,
    pub output_dir: PathBuf,

    pub blob_classes: usize,
    pub blob_dim: usize,
    pub blob_train_per_class: usize,
    pub blob_test_per_class: usize,
    /// Noise std as a fraction of a quarter of the closest mean distance.
    pub blob_spread: f64,

    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,

    pub hidden: Vec<usize>,
    pub activation: Activation,

    pub fed: FedConfig,
    pub distill: DistillConfig,
    pub reverse: ReverseConfig,
    /// Count step sizes in upload/download accounting.
    pub include_etas: bool,
    /// Meta learning rates for `lr_sweep`.
    pub lr_grid: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            experiment: Experiment::CompareTransports,
            dataset: DatasetKind::Blobs,
            output_dir: PathBuf::from("out"),
            blob_classes: 3,
            blob_dim: 2,
            blob_train_per_class: 200,
            blob_test_per_class: 100,
            blob_spread: 1.0,
            train_images: PathBuf::new(),
            train_labels: PathBuf::new(),
            test_images: PathBuf::new(),
            test_labels: PathBuf::new(),
            hidden: vec![16],
            activation: Activation::Relu,
            fed: FedConfig::default(),
            distill: DistillConfig::default(),
            reverse: ReverseConfig::default(),
            include_etas: false,
            lr_grid: vec![0.03, 0.1, 0.3],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "master_seed" => self.master_seed = parse(key, v)?,
            "experiment" => self.experiment = parse(key, v)?,
            "dataset" => self.dataset = parse(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "blob_classes" => self.blob_classes = parse(key, v)?,
            "blob_dim" => self.blob_dim = parse(key, v)?,
            "blob_train_per_class" => self.blob_train_per_class = parse(key, v)?,
            "blob_test_per_class" => self.blob_test_per_class = parse(key, v)?,
            "blob_spread" => self.blob_spread = parse(key, v)?,
            "train_images" => self.train_images = PathBuf::from(v),
            "train_labels" => self.train_labels = PathBuf::from(v),
            "test_images" => self.test_images = PathBuf::from(v),
            "test_labels" => self.test_labels = PathBuf::from(v),
            "hidden" => self.hidden = parse_list(key, v)?,
            "activation" => self.activation = parse(key, v)?,
            "num_clients" => self.fed.num_clients = parse(key, v)?,
            "cohort_size" => self.fed.cohort_size = parse(key, v)?,
            "rounds" => self.fed.rounds = parse(key, v)?,
            "partition" => self.fed.partition = parse(key, v)?,
            "shards_per_client" => self.fed.shards_per_client = parse(key, v)?,
            "local_epochs" => self.fed.local_epochs = parse(key, v)?,
            "local_batch_size" => self.fed.local_batch_size = parse(key, v)?,
            "local_lr" => self.fed.local_lr = parse(key, v)?,
            "transport" => self.fed.transport = parse(key, v)?,
            "num_synth_batches" => self.distill.num_synth_batches = parse(key, v)?,
            "synth_batch_size" => self.distill.synth_batch_size = parse(key, v)?,
            "synth_epochs" => self.distill.synth_epochs = parse(key, v)?,
            "distill_lr" => self.distill.distill_lr = parse(key, v)?,
            "distill_steps" => self.distill.distill_steps = parse(key, v)?,
            "meta_optimizer" => self.distill.meta_optimizer = parse(key, v)?,
            "loss_variant" => self.distill.loss_variant = parse(key, v)?,
            "init_scheme" => self.distill.init_scheme = parse(key, v)?,
            "lr_decay" => self.distill.lr_decay = parse(key, v)?,
            "eta_init" => self.distill.eta_init = parse(key, v)?,
            "reverse_num_batches" => self.reverse.num_batches = parse(key, v)?,
            "reverse_batch_size" => self.reverse.batch_size = parse(key, v)?,
            "reverse_synth_epochs" => self.reverse.synth_epochs = parse(key, v)?,
            "reverse_distill_steps" => self.reverse.distill_steps = parse(key, v)?,
            "reverse_num_seeds" => self.reverse.num_seeds = parse(key, v)?,
            "reverse_distill_lr" => self.reverse.distill_lr = parse(key, v)?,
            "reverse_failure_threshold" => self.reverse.failure_threshold = parse(key, v)?,
            "include_etas" => self.include_etas = parse(key, v)?,
            "lr_grid" => self.lr_grid = parse_list(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = |p: &Path| p.display().to_string();
        vec![
            ("master_seed", self.master_seed.to_string()),
            ("experiment", self.experiment.to_string()),
            ("dataset", self.dataset.to_string()),
            ("output_dir", p(&self.output_dir)),
            ("blob_classes", self.blob_classes.to_string()),
            ("blob_dim", self.blob_dim.to_string()),
            ("blob_train_per_class", self.blob_train_per_class.to_string()),
            ("blob_test_per_class", self.blob_test_per_class.to_string()),
            ("blob_spread", self.blob_spread.to_string()),
            ("train_images", p(&self.train_images)),
            ("train_labels", p(&self.train_labels)),
            ("test_images", p(&self.test_images)),
            ("test_labels", p(&self.test_labels)),
            ("hidden", join(&self.hidden)),
            ("activation", self.activation.to_string()),
            ("num_clients", self.fed.num_clients.to_string()),
            ("cohort_size", self.fed.cohort_size.to_string()),
            ("rounds", self.fed.rounds.to_string()),
            ("partition", self.fed.partition.to_string()),
            ("shards_per_client", self.fed.shards_per_client.to_string()),
            ("local_epochs", self.fed.local_epochs.to_string()),
            ("local_batch_size", self.fed.local_batch_size.to_string()),
            ("local_lr", self.fed.local_lr.to_string()),
            ("transport", self.fed.transport.to_string()),
            ("num_synth_batches", self.distill.num_synth_batches.to_string()),
            ("synth_batch_size", self.distill.synth_batch_size.to_string()),
            ("synth_epochs", self.distill.synth_epochs.to_string()),
            ("distill_lr", self.distill.distill_lr.to_string()),
            ("distill_steps", self.distill.distill_steps.to_string()),
            ("meta_optimizer", self.distill.meta_optimizer.to_string()),
            ("loss_variant", self.distill.loss_variant.to_string()),
            ("init_scheme", self.distill.init_scheme.to_string()),
            ("lr_decay", self.distill.lr_decay.to_string()),
            ("eta_init", self.distill.eta_init.to_string()),
            ("reverse_num_batches", self.reverse.num_batches.to_string()),
            ("reverse_batch_size", self.reverse.batch_size.to_string()),
            ("reverse_synth_epochs", self.reverse.synth_epochs.to_string()),
            ("reverse_distill_steps", self.reverse.distill_steps.to_string()),
            ("reverse_num_seeds", self.reverse.num_seeds.to_string()),
            ("reverse_distill_lr", self.reverse.distill_lr.to_string()),
            ("reverse_failure_threshold", self.reverse.failure_threshold.to_string()),
            ("include_etas", self.include_etas.to_string()),
            ("lr_grid", join(&self.lr_grid)),
        ]
    }

    /// Parses config text over the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    /// Reads a config file; relative dataset paths resolve against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.train_images,
            &mut cfg.train_labels,
            &mut cfg.test_images,
            &mut cfg.test_labels,
        ] {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Text that [`RunConfig::parse_str`] maps back to `self`.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn arch(&self) -> Result<ArchDescriptor> {
        let (input_dim, num_classes) = match self.dataset {
            DatasetKind::Blobs => (self.blob_dim, self.blob_classes),
            DatasetKind::IdxFiles => (784, 10),
        };
        ArchDescriptor::new(input_dim, self.hidden.clone(), num_classes, self.activation)
    }

    pub fn validate(&self) -> Result<()> {
        self.fed.validate()?;
        self.distill.validate()?;
        self.reverse.validate()?;
        self.arch()?;
        match self.dataset {
            DatasetKind::Blobs => {
                if self.blob_classes < 2 || self.blob_dim == 0 {
                    return Err(Error::Config("blobs need at least 2 classes and 1 dimension".into()));
                }
                if self.blob_train_per_class == 0 || self.blob_test_per_class == 0 {
                    return Err(Error::Config("blob point counts must be positive".into()));
                }
                if !(self.blob_spread >= 0.0 && self.blob_spread.is_finite()) {
                    return Err(Error::Config("blob_spread must be non-negative".into()));
                }
            }
            DatasetKind::IdxFiles => {
                for (k, p) in [
                    ("train_images", &self.train_images),
                    ("train_labels", &self.train_labels),
                    ("test_images", &self.test_images),
                    ("test_labels", &self.test_labels),
                ] {
                    if p.as_os_str().is_empty() {
                        return Err(Error::Config(format!("{k} is required for idx_files")));
                    }
                }
            }
        }
        if self.experiment == Experiment::LrSweep
            && (self.lr_grid.is_empty() || self.lr_grid.iter().any(|&a| !(a > 0.0 && a.is_finite())))
        {
            return Err(Error::Config("lr_grid needs positive learning rates".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::LossVariant;
    use crate::fedsim::Partition;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse_str(&cfg.snapshot()).unwrap(), cfg);
    }

    #[test]
    fn awkward_values_round_trip() {
        let mut cfg = RunConfig::default();
        for (k, v) in [
            ("distill_lr", "0.1"),
            ("local_lr", "0.30000000000000004"),
            ("blob_spread", "1e-7"),
            ("hidden", "64, 64"),
            ("lr_grid", "0.03,0.1,0.3"),
            ("partition", "noniid"),
            ("loss_variant", "function_kl"),
            ("master_seed", "18446744073709551615"),
        ] {
            cfg.set(k, v).unwrap();
        }
        let back = RunConfig::parse_str(&cfg.snapshot()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hidden, vec![64, 64]);
        assert_eq!(back.fed.partition, Partition::Noniid);
        assert_eq!(back.distill.loss_variant, LossVariant::FunctionKl);
        assert_eq!(back.fed.local_lr, 0.1 + 0.2);
    }

    #[test]
    fn comments_blanks_and_errors() {
        let cfg = RunConfig::parse_str("# hi\n\n  rounds = 7  \n").unwrap();
        assert_eq!(cfg.fed.rounds, 7);
        assert!(RunConfig::parse_str("roundz = 7").is_err());
        assert!(RunConfig::parse_str("rounds 7").is_err());
        assert!(RunConfig::parse_str("rounds = seven").is_err());
        assert!(RunConfig::parse_str("experiment = nope").is_err());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        let idx = RunConfig::parse_str("dataset = idx_files").unwrap();
        assert!(idx.validate().is_err());
        let bad = RunConfig::parse_str("cohort_size = 101").unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("run.cfg");
        std::fs::write(&f, "train_images = data/a.gz\ntest_images = /abs/b.gz\n").unwrap();
        let cfg = RunConfig::from_file(&f).unwrap();
        assert_eq!(cfg.train_images, dir.path().join("data/a.gz"));
        assert_eq!(cfg.test_images, PathBuf::from("/abs/b.gz"));
    }
}
