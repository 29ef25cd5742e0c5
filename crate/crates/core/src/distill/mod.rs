//! Synthetic-data encoding of model updates.
//!
//! [`update_from_synthetic`] is the decoder shared by clients and the server;
//! [`client_update`] fits a payload so that the decoder reproduces a client's
//! true local update.

mod decode;
pub mod fit;
pub mod loss;
pub mod payload;

pub use decode::{meta_gradient, update_from_synthetic};
pub use fit::{
    client_ce, client_update, fit_payload, track_best, BestTracker, DistillConfig, FitReport,
    Fitted, InitScheme, MetaOptimizer, Selection, ETA_FLOOR,
};
pub use loss::{function_kl_loss, param_sq_loss, project_simplex, LossVariant, MetaLoss, LABEL_FLOOR};
pub use payload::{epoch_schedule, SyntheticBatch, SyntheticPayload};
