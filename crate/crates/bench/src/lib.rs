//! Shared fixtures for the benchmarks.

use nalgebra::DVector;

use recourse_core::data::{read_csv, synth};
use recourse_core::models::train;
use recourse_core::{Dataset, Model, RashomonEllipsoid, TrainConfig};

pub struct Fixture {
    pub ds: Dataset,
    pub model: Model,
    pub ell: RashomonEllipsoid,
    /// Rows the model rejects.
    pub queries: Vec<DVector<f64>>,
}

/// Balanced synthetic credit data, standardized, with a trained model and
/// an ellipsoid at `rel` times its objective.
pub fn credit(rows: usize, hidden: &[usize], rel: f64) -> Fixture {
    let (raw, _) = read_csv(
        synth::german_credit_csv(rows, 0).as_bytes(),
        &synth::german_credit_schema(),
    )
    .expect("synthetic data loads");
    let raw = raw.balance(0);
    let all: Vec<usize> = (0..raw.n()).collect();
    let ds = raw.preprocess(&all).expect("preprocess");
    let cfg = TrainConfig {
        hidden_sizes: hidden.to_vec(),
        learning_rate: if hidden.is_empty() { 0.001 } else { 0.01 },
        max_epochs: if hidden.is_empty() { 200 } else { 50 },
        ..TrainConfig::default()
    };
    let model = train(&ds, &cfg).expect("training").model;
    let eps = rel * model.objective(&ds).expect("objective");
    let ell = RashomonEllipsoid::build(&model, &ds, eps).expect("ellipsoid");
    let queries = (0..ds.n())
        .map(|i| ds.row(i))
        .filter(|x| model.predict(x).expect("predict") == 0)
        .take(32)
        .collect();
    Fixture {
        ds,
        model,
        ell,
        queries,
    }
}
