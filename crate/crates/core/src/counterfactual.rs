//! Counterfactual inputs and outcomes.
//!
//! The label-bias outcome feeds the model the training-set average of every
//! modality, so nothing specific to a sample is visible. The context-bias
//! outcome keeps only the context words of an utterance: content words become
//! `[MASK]` and the audio/visual features are zeroed.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, Utterance};
use crate::debias::PredictionTriple;
use crate::error::{Error, Result};
use crate::model::{predict, LangInput, ModelParams};
use crate::numerics::{derive_seed, rng_from_seed, vec_mean, Vector};

/// Average pre-encoder features of the training split.
///
/// `l_hat` is the mean of the per-utterance mean-pooled token embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualEmbeddings {
    pub l_hat: Vector,
    pub a_hat: Vector,
    pub v_hat: Vector,
}

pub fn compute_label_counterfactual(
    corpus: &Corpus,
    params: &ModelParams,
) -> Result<CounterfactualEmbeddings> {
    if corpus.train.is_empty() {
        return Err(Error::EmptyAggregate);
    }
    let pooled = corpus
        .train
        .iter()
        .map(|u| params.pool_tokens(&u.tokens, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(CounterfactualEmbeddings {
        l_hat: vec_mean(pooled.iter().map(|v| &**v))?,
        a_hat: vec_mean(corpus.train.iter().map(|u| &*u.audio))?,
        v_hat: vec_mean(corpus.train.iter().map(|u| &*u.visual))?,
    })
}

/// Seeded standard-normal stand-ins for the averages.
pub fn random_counterfactual_embeddings(
    embed_dim: usize,
    audio_dim: usize,
    visual_dim: usize,
    seed: u64,
) -> CounterfactualEmbeddings {
    let mut rng = rng_from_seed(seed);
    let mut draw = |d: usize| -> Vector {
        (0..d)
            .map(|_| -> f64 { StandardNormal.sample(&mut rng) })
            .collect()
    };
    CounterfactualEmbeddings {
        l_hat: draw(embed_dim),
        a_hat: draw(audio_dim),
        v_hat: draw(visual_dim),
    }
}

fn check_cfe(params: &ModelParams, cfe: &CounterfactualEmbeddings) -> Result<()> {
    for (want, got) in [
        (params.embed_dim(), cfe.l_hat.dim()),
        (params.audio_dim(), cfe.a_hat.dim()),
        (params.visual_dim(), cfe.v_hat.dim()),
    ] {
        if want != got {
            return Err(Error::dims(want, got));
        }
    }
    Ok(())
}

/// Sample-independent label-bias outcome.
pub fn predict_label_bias(params: &ModelParams, cfe: &CounterfactualEmbeddings) -> Result<f64> {
    check_cfe(params, cfe)?;
    Ok(params
        .forward(cfe.l_hat.clone(), &cfe.a_hat, &cfe.v_hat)?
        .output)
}

/// Which modalities use the averaged embedding in the label counterfactual.
/// A `false` entry keeps the utterance's own feature for that modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTreatment {
    pub language: bool,
    pub audio: bool,
    pub visual: bool,
}

impl Default for LabelTreatment {
    fn default() -> Self {
        LabelTreatment {
            language: true,
            audio: true,
            visual: true,
        }
    }
}

impl LabelTreatment {
    pub fn is_full(&self) -> bool {
        self.language && self.audio && self.visual
    }
}

/// Label counterfactual with some modalities left factual.
pub fn predict_label_bias_partial(
    params: &ModelParams,
    utterance: &Utterance,
    cfe: &CounterfactualEmbeddings,
    treatment: LabelTreatment,
) -> Result<f64> {
    check_cfe(params, cfe)?;
    let lang = if treatment.language {
        LangInput::Pooled(&cfe.l_hat)
    } else {
        LangInput::Full
    };
    predict(
        params,
        utterance,
        lang,
        treatment.audio.then_some(&*cfe.a_hat),
        treatment.visual.then_some(&*cfe.v_hat),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum MaskPolicy {
    /// Mask exactly the content-flagged tokens.
    ContentMask,
    NoMask,
    AllMask,
    /// Mask each token independently with probability `p`.
    RandomMask {
        p: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum FeaturePolicy {
    Zero,
    Keep,
    /// One seeded standard-normal vector shared by every utterance.
    Random {
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextTreatment {
    pub mask: MaskPolicy,
    pub audio: FeaturePolicy,
    pub visual: FeaturePolicy,
}

impl Default for ContextTreatment {
    fn default() -> Self {
        ContextTreatment {
            mask: MaskPolicy::ContentMask,
            audio: FeaturePolicy::Zero,
            visual: FeaturePolicy::Zero,
        }
    }
}

impl ContextTreatment {
    pub fn validate(&self) -> Result<()> {
        if let MaskPolicy::RandomMask { p, .. } = self.mask {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "random mask probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Per-token mask decisions for `utterance` under `policy`.
///
/// Random masks draw from a generator keyed by the seed and the token
/// sequence, so the result does not depend on evaluation order.
pub fn mask_flags(utterance: &Utterance, policy: MaskPolicy) -> Vec<bool> {
    match policy {
        MaskPolicy::ContentMask => utterance.content_flags.clone(),
        MaskPolicy::NoMask => vec![false; utterance.tokens.len()],
        MaskPolicy::AllMask => vec![true; utterance.tokens.len()],
        MaskPolicy::RandomMask { p, seed } => {
            let key = utterance.tokens.join("\u{1f}");
            let mut rng = rng_from_seed(derive_seed(seed, &key));
            (0..utterance.tokens.len())
                .map(|_| rng.random_bool(p))
                .collect()
        }
    }
}

fn feature(policy: FeaturePolicy, own: &[f64], tag: &str) -> Option<Vec<f64>> {
    match policy {
        FeaturePolicy::Keep => None,
        FeaturePolicy::Zero => Some(vec![0.0; own.len()]),
        FeaturePolicy::Random { seed } => {
            let mut rng = rng_from_seed(derive_seed(seed, tag));
            Some(
                (0..own.len())
                    .map(|_| -> f64 { StandardNormal.sample(&mut rng) })
                    .collect(),
            )
        }
    }
}

/// Per-utterance context-bias outcome.
pub fn predict_context_bias(
    params: &ModelParams,
    utterance: &Utterance,
    treatment: &ContextTreatment,
) -> Result<f64> {
    treatment.validate()?;
    let flags = mask_flags(utterance, treatment.mask);
    let audio = feature(treatment.audio, &utterance.audio, "audio");
    let visual = feature(treatment.visual, &utterance.visual, "visual");
    predict(
        params,
        utterance,
        LangInput::Masked(&flags),
        audio.as_deref(),
        visual.as_deref(),
    )
}

/// Everything needed to produce the counterfactual outcomes of a split.
#[derive(Debug, Clone)]
pub struct Intervention {
    pub cfe: CounterfactualEmbeddings,
    pub label: LabelTreatment,
    pub context: ContextTreatment,
}

impl Intervention {
    pub fn new(cfe: CounterfactualEmbeddings) -> Self {
        Intervention {
            cfe,
            label: LabelTreatment::default(),
            context: ContextTreatment::default(),
        }
    }

    /// The label-bias outcome when it is shared by every utterance.
    pub fn shared_label_bias(&self, params: &ModelParams) -> Result<Option<f64>> {
        if self.label.is_full() {
            predict_label_bias(params, &self.cfe).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Factual, label-counterfactual and context-counterfactual scores for
    /// every utterance, in input order.
    pub fn triples(
        &self,
        params: &ModelParams,
        utterances: &[Utterance],
    ) -> Result<Vec<PredictionTriple>> {
        self.context.validate()?;
        let shared = self.shared_label_bias(params)?;
        utterances
            .par_iter()
            .map(|u| {
                let factual = predict(params, u, LangInput::Full, None, None)?;
                let label_cf = match shared {
                    Some(v) => v,
                    None => predict_label_bias_partial(params, u, &self.cfe, self.label)?,
                };
                let context_cf = predict_context_bias(params, u, &self.context)?;
                Ok(PredictionTriple {
                    factual,
                    label_cf,
                    context_cf,
                    gold: u.label,
                })
            })
            .collect()
    }
}
