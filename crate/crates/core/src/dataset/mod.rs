//! Multimodal corpora: vocabulary, utterances, splits, and the synthetic
//! generator that plants label and context biases.

mod generate;
mod io;
mod stats;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Vector;

pub use generate::{generate_corpus, GeneratorConfig};
pub(crate) use io::write_json_line;
pub use io::{load_corpus, save_corpus};
pub use stats::{corpus_stats, sentiment_class, CorpusStats, SplitStats, WordCounts};

pub const MASK_TOKEN: &str = "[MASK]";
pub const UNK_TOKEN: &str = "[UNK]";

/// Labels live on the seven-point scale [-3, +3].
pub const LABEL_MIN: f64 = -3.0;
pub const LABEL_MAX: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentWord {
    pub token: String,
    pub sentiment_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextWord {
    pub token: String,
    /// Positive values co-occur with positive samples, negative with negative.
    pub category_skew: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub content_words: Vec<ContentWord>,
    pub context_words: Vec<ContextWord>,
}

impl Vocabulary {
    pub fn validate(&self) -> Result<()> {
        if self.content_words.is_empty() || self.context_words.is_empty() {
            return Err(Error::SchemaError(
                "vocabulary needs at least one content and one context word".into(),
            ));
        }
        let mut seen = HashSet::new();
        let tokens = self
            .content_words
            .iter()
            .map(|w| (&w.token, w.sentiment_weight))
            .chain(
                self.context_words
                    .iter()
                    .map(|w| (&w.token, w.category_skew)),
            );
        for (token, weight) in tokens {
            if token == MASK_TOKEN || token == UNK_TOKEN {
                return Err(Error::SchemaError(format!(
                    "reserved token {token} in vocabulary"
                )));
            }
            if !seen.insert(token.as_str()) {
                return Err(Error::SchemaError(format!("duplicate token {token:?}")));
            }
            if !(-1.0..=1.0).contains(&weight) {
                return Err(Error::SchemaError(format!(
                    "weight {weight} of {token:?} outside [-1, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn content_set(&self) -> HashSet<&str> {
        self.content_words
            .iter()
            .map(|w| w.token.as_str())
            .collect()
    }

    /// All vocabulary tokens, content words first, in declaration order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.content_words
            .iter()
            .map(|w| w.token.as_str())
            .chain(self.context_words.iter().map(|w| w.token.as_str()))
    }
}

/// Flags each token as content (`true`) or context (`false`).
///
/// Tokens missing from the vocabulary are context words, so masking never
/// removes anything the lexicon does not know about.
pub fn tag_content_words<S: AsRef<str>>(tokens: &[S], vocabulary: &Vocabulary) -> Vec<bool> {
    let content = vocabulary.content_set();
    tokens
        .iter()
        .map(|t| content.contains(t.as_ref()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

/// One multimodal sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub tokens: Vec<String>,
    pub content_flags: Vec<bool>,
    pub audio: Vector,
    pub visual: Vector,
    pub label: f64,
    /// Bias-free target recorded by the generator; absent for external data.
    pub clean_signal: Option<f64>,
    /// True when the planted label fell outside [-3, 3] and was clamped.
    pub clamped: bool,
}

impl Utterance {
    pub fn validate(&self, audio_dim: usize, visual_dim: usize) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::SchemaError("utterance has no tokens".into()));
        }
        if self.tokens.len() != self.content_flags.len() {
            return Err(Error::SchemaError(format!(
                "{} tokens but {} content flags",
                self.tokens.len(),
                self.content_flags.len()
            )));
        }
        if self.audio.dim() != audio_dim {
            return Err(Error::SchemaError(format!(
                "audio dim {} does not match corpus dim {audio_dim}",
                self.audio.dim()
            )));
        }
        if self.visual.dim() != visual_dim {
            return Err(Error::SchemaError(format!(
                "visual dim {} does not match corpus dim {visual_dim}",
                self.visual.dim()
            )));
        }
        if !self.audio.is_finite() || !self.visual.is_finite() {
            return Err(Error::SchemaError("non-finite feature value".into()));
        }
        if !self.label.is_finite() || !(LABEL_MIN..=LABEL_MAX).contains(&self.label) {
            return Err(Error::SchemaError(format!(
                "label {} outside [-3, 3]",
                self.label
            )));
        }
        Ok(())
    }
}

/// Parameters of the planted confounder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasSpec {
    /// Target fraction of positive-labelled samples in biased splits.
    pub label_skew: f64,
    /// Constant shift added to every biased label.
    pub label_offset: f64,
    /// Strength of context-word/polarity co-occurrence, and the scale of the
    /// per-utterance shift `context_strength * mean(category_skew)`.
    pub context_strength: f64,
    /// Expected fraction of content tokens across the corpus.
    pub content_mask_ratio_target: f64,
    /// Which splits carry the planted bias.
    pub bias_scope: BiasScope,
}

/// `Train` plants the confounder only in the training split; validation and
/// test are drawn from the intervened distribution (gold = clean signal,
/// context words independent of polarity). `All` plants it everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasScope {
    Train,
    All,
}

impl Default for BiasSpec {
    fn default() -> Self {
        BiasSpec {
            label_skew: 0.75,
            label_offset: 0.6,
            context_strength: 0.8,
            content_mask_ratio_target: 0.6896,
            bias_scope: BiasScope::Train,
        }
    }
}

impl BiasSpec {
    pub fn unbiased() -> Self {
        BiasSpec {
            label_skew: 0.5,
            label_offset: 0.0,
            context_strength: 0.0,
            ..BiasSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.label_skew) {
            return bad(format!("label_skew {} outside [0, 1]", self.label_skew));
        }
        if !self.label_offset.is_finite() {
            return bad("label_offset must be finite".into());
        }
        if !(self.context_strength >= 0.0 && self.context_strength.is_finite()) {
            return bad(format!(
                "context_strength {} must be >= 0",
                self.context_strength
            ));
        }
        let r = self.content_mask_ratio_target;
        if !(r > 0.0 && r < 1.0) {
            return bad(format!("content_mask_ratio_target {r} outside (0, 1)"));
        }
        Ok(())
    }

    pub fn plants_bias_in(&self, split: Split) -> bool {
        match self.bias_scope {
            BiasScope::All => true,
            BiasScope::Train => split == Split::Train,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocabulary: Vocabulary,
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub bias_spec: Option<BiasSpec>,
    pub seed: Option<u64>,
    pub train: Vec<Utterance>,
    pub valid: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Utterance] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.vocabulary.validate()?;
        if self.audio_dim == 0 || self.visual_dim == 0 {
            return Err(Error::SchemaError("modality dims must be >= 1".into()));
        }
        if self.train.is_empty() || self.valid.is_empty() {
            return Err(Error::SchemaError(
                "train and valid splits must be nonempty".into(),
            ));
        }
        for split in Split::ALL {
            for u in self.split(split) {
                u.validate(self.audio_dim, self.visual_dim)?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
