//! Ensemble distribution distillation.
//!
//! An ensemble of small classifiers is trained on synthetic 2-D data and its
//! distribution of predictions is distilled into a single Dirichlet prior
//! network. The crate holds every piece of that pipeline:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`specfn`] | `ln_gamma`, `digamma` |
//! | [`net`] | MLP forward/backward, dropout, tempered softmax, checkpoints |
//! | [`optim`] | Adam, 1-cycle learning rate, temperature annealing |
//! | [`dirichlet`] | concentration parameters, uncertainty decomposition, Dirichlet NLL |
//! | [`ensemble`] | seed-varied ensembles, transfer sets |
//! | [`distill`] | DNN, EnD and EnD² trainers |
//! | [`metrics`] | NLL, ECE, AUROC/AUPR, rejection curves, PRR |
//! | [`data`] | spiral, OOD and auxiliary samplers, CSV I/O |
//!
//! All uncertainties are in nats.

pub mod data;
pub mod dirichlet;
pub mod distill;
pub mod ensemble;
mod error;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod rng;
pub mod specfn;

pub use data::{Dataset2D, OodGeometry, SpiralParams, Split};
pub use dirichlet::{DirichletParams, MemberSample};
pub use distill::{DistillConfig, DistillMode, TrainConfig, TrainLog};
pub use ensemble::{Ensemble, TransferSet, Uncertainties};
pub use error::{Error, Result};
pub use metrics::{Measure, Predictor, RejectionCurve, ScoredPredictions};
pub use net::{Activation, CategoricalProbs, Checkpoint, CheckpointMeta, Mlp, ModelKind, Mode};
pub use optim::{AdamState, LrSchedule, TemperatureSchedule};
