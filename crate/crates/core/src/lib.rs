//! Ranking models built from repeated selection: rankings are decomposed into
//! a sequence of discrete choices, each modelled by a choice kernel (MNL,
//! the context-dependent CDM, or a Mallows stage kernel).

pub mod decompose;
pub mod error;
pub mod estimate;
pub mod evaluate;
pub mod io;
pub mod models;
pub mod spectral;
pub mod types;

pub use decompose::{repeated_selection, ChoiceDataset, WeightedChoice};
pub use error::{Error, Result};
pub use estimate::{fit, fit_from, BatchSize, FitConfig, FitReport};
pub use evaluate::{kfold_eval, risk_experiment, CVResult, RiskExperimentConfig, RiskRow};
pub use models::{choice_logprob, ranking_logprob, sample_rankings, SampleConfig};
pub use spectral::{certify, MatrixKind, SpectralCertificate};
pub use types::{
    pair_index, validate_dataset, ChoiceObservation, ModelKind, ModelParams, Ranking,
    RankingDataset, Universe,
};
