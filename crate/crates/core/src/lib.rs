//! Time adaptive Gaussian models: a hidden Markov chain whose states emit
//! sparse Gaussian graphical models, fitted by penalized EM with a
//! graphical lasso in the M-step.

pub mod error;
pub mod ext;
pub mod fit;
pub mod glasso;
pub mod hmm;
pub mod init;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod selection;
pub mod synth;

pub use error::{Result, TagmError};
pub use fit::{evaluate_params, fit_em, fit_from, FitConfig, FitResult};
pub use linalg::SymMatrix;
pub use model::{EStepResult, ModelParams, ObservationSequence};
