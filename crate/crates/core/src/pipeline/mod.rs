//! Cross-validated experiment runner: per fold it standardizes, trains the
//! base model, builds the ellipsoid and the evaluator ensembles, tunes ε on
//! the validation split and scores counterfactuals on the test split.

mod config;
mod run;
mod tune;

pub use config::{DataSource, EpsilonScale, ExperimentConfig, LofReference, Method, CONFIG_VERSION};
pub use run::{run, CellResult, ExperimentResult, CELLS_FILE, RESULT_CSV, RESULT_JSON};
pub use tune::{tune_epsilon, TuneScore, Tuned};
