//! Federated orchestration: sharding, local updates, server rounds and
//! federated averaging.

mod local;
mod round;
mod shard;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

pub use local::{aggregate, local_update};
pub use round::{
    ClientUpload, FullGradientCodec, RoundOutcome, Simulation, SyntheticCodec, UplinkCodec,
};
pub use shard::{shard_iid, shard_noniid};

/// Labelled examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(x: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} labels",
                x.rows(),
                labels.len()
            )));
        }
        if let Some(&c) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Shape(format!("label {c} outside {num_classes} classes")));
        }
        Ok(Self {
            x,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

/// One client's private data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub x: Matrix,
    pub labels: Vec<usize>,
    /// Root of the client's RNG streams, derived from the master seed and id.
    pub rng_seed: u64,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Iid,
    Noniid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    FullGradient,
    Synthetic,
}

impl std::str::FromStr for Partition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(Self::Iid),
            "noniid" => Ok(Self::Noniid),
            other => Err(Error::Config(format!("unknown partition `{other}`"))),
        }
    }
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Iid => "iid",
            Self::Noniid => "noniid",
        })
    }
}

impl std::str::FromStr for Transport {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full_gradient" => Ok(Self::FullGradient),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(Error::Config(format!("unknown transport `{other}`"))),
        }
    }
}

impl std::fmt::Display for Transport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::FullGradient => "full_gradient",
            Self::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub num_clients: usize,
    pub cohort_size: usize,
    pub rounds: usize,
    pub partition: Partition,
    /// Label-sorted shards dealt to each client under `noniid`.
    pub shards_per_client: usize,
    pub local_epochs: usize,
    pub local_batch_size: usize,
    pub local_lr: f64,
    pub transport: Transport,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            num_clients: 100,
            cohort_size: 10,
            rounds: 30,
            partition: Partition::Iid,
            shards_per_client: 2,
            local_epochs: 5,
            local_batch_size: 10,
            local_lr: 0.02,
            transport: Transport::Synthetic,
        }
    }
}

impl FedConfig {
    /// `local_epochs = 0` is accepted so that tests can produce zero updates.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_clients", self.num_clients),
            ("cohort_size", self.cohort_size),
            ("rounds", self.rounds),
            ("shards_per_client", self.shards_per_client),
            ("local_batch_size", self.local_batch_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.cohort_size > self.num_clients {
            return Err(Error::Config(format!(
                "cohort_size {} exceeds num_clients {}",
                self.cohort_size, self.num_clients
            )));
        }
        if !(self.local_lr > 0.0 && self.local_lr.is_finite()) {
            return Err(Error::Config("local_lr must be a positive number".into()));
        }
        Ok(())
    }
}
