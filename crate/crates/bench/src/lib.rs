//! Shared fixtures for the criterion benchmarks in `benches/`.

use mcis_core::counterfactual::{compute_label_counterfactual, Intervention};
use mcis_core::dataset::{generate_corpus, Corpus, GeneratorConfig};
use mcis_core::debias::PredictionTriple;
use mcis_core::model::{train, ModelParams, TrainConfig};

/// Default-sized biased corpus and a model trained on it for `epochs`.
pub fn trained(epochs: usize) -> (Corpus, ModelParams) {
    let corpus = generate_corpus(&GeneratorConfig::default(), 42).expect("generate corpus");
    let params = train(
        &corpus,
        &TrainConfig {
            epochs,
            ..TrainConfig::default()
        },
    )
    .expect("train");
    (corpus, params)
}

/// Validation triples from a fully trained model.
pub fn validation_triples() -> Vec<PredictionTriple> {
    let (corpus, params) = trained(TrainConfig::default().epochs);
    let cfe = compute_label_counterfactual(&corpus, &params).expect("counterfactual");
    Intervention::new(cfe)
        .triples(&params, &corpus.valid)
        .expect("triples")
}
