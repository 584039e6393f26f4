use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    BiasSpec, ContentWord, ContextWord, Corpus, Split, Utterance, Vocabulary, LABEL_MAX, LABEL_MIN,
};
use crate::error::{Error, Result};
use crate::numerics::{rng_from_seed, Rng, Vector};

const CONTENT_POOL: &[&str] = &[
    "love",
    "hate",
    "great",
    "awful",
    "enjoy",
    "boring",
    "brilliant",
    "terrible",
    "amazing",
    "dull",
    "beautiful",
    "ugly",
    "happy",
    "sad",
    "funny",
    "annoying",
    "fantastic",
    "horrible",
    "perfect",
    "weak",
    "charming",
    "painful",
    "excellent",
    "poor",
    "wonderful",
    "mediocre",
    "delight",
    "mess",
    "masterpiece",
    "disaster",
    "smart",
    "stupid",
    "touching",
    "bland",
    "gripping",
    "tedious",
    "superb",
    "lousy",
    "fresh",
    "stale",
    "thrilling",
    "clumsy",
    "moving",
    "pointless",
    "clever",
    "forgettable",
    "stunning",
    "waste",
];

const CONTEXT_POOL: &[&str] = &[
    "the", "a", "also", "very", "movie", "just", "really", "so", "this", "film", "it", "was", "i",
    "and", "good", "kind", "of", "like", "um", "actually", "pretty", "well", "you", "know",
];

/// Sharpness of content-word choice around an utterance's latent valence.
const VALENCE_SHARPNESS: f64 = 3.0;
/// Co-occurrence sharpness per unit of `context_strength`.
const COOCCURRENCE_SHARPNESS: f64 = 2.0;
/// Rejection-sampling budget per utterance before declaring the spec infeasible.
const MAX_ATTEMPTS: usize = 500;

/// Everything `generate_corpus` needs besides the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub bias_spec: BiasSpec,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub n_content_words: usize,
    pub n_context_words: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            bias_spec: BiasSpec::default(),
            n_train: 2000,
            n_valid: 400,
            n_test: 600,
            audio_dim: 6,
            visual_dim: 6,
            n_content_words: 40,
            n_context_words: 20,
            min_tokens: 6,
            max_tokens: 14,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        self.bias_spec.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_train < 8 || self.n_valid < 4 || self.n_test < 4 {
            return bad("split sizes must be at least (8, 4, 4)");
        }
        if self.audio_dim == 0 || self.visual_dim == 0 {
            return bad("audio and visual dims must be >= 1");
        }
        if self.n_content_words == 0 || self.n_context_words == 0 {
            return bad("need at least one content and one context word");
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad("token length range must satisfy 1 <= min_tokens <= max_tokens");
        }
        Ok(())
    }
}

/// The hidden linear ground truth of one corpus.
struct CleanSignal {
    sentiment_coef: f64,
    audio_coef: Vec<f64>,
    visual_coef: Vec<f64>,
}

impl CleanSignal {
    fn draw(rng: &mut Rng, audio_dim: usize, visual_dim: usize) -> Self {
        let mut coefs = |d: usize| -> Vec<f64> {
            let scale = 0.6 / (d as f64).sqrt();
            (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    scale * z
                })
                .collect()
        };
        let audio_coef = coefs(audio_dim);
        let visual_coef = coefs(visual_dim);
        CleanSignal {
            sentiment_coef: rng.random_range(1.5..2.5),
            audio_coef,
            visual_coef,
        }
    }

    fn eval(&self, mean_sentiment: f64, audio: &[f64], visual: &[f64]) -> f64 {
        let a: f64 = self.audio_coef.iter().zip(audio).map(|(c, x)| c * x).sum();
        let v: f64 = self
            .visual_coef
            .iter()
            .zip(visual)
            .map(|(c, x)| c * x)
            .sum();
        self.sentiment_coef * mean_sentiment + a + v
    }
}

fn build_vocabulary(rng: &mut Rng, n_content: usize, n_context: usize) -> Vocabulary {
    let name = |pool: &[&str], i: usize| {
        let base = pool[i % pool.len()];
        match i / pool.len() {
            0 => base.to_string(),
            k => format!("{base}{k}"),
        }
    };
    let content_words = (0..n_content)
        .map(|i| ContentWord {
            token: name(CONTENT_POOL, i),
            sentiment_weight: rng.random_range(-1.0..=1.0),
        })
        .collect();
    let context_words = (0..n_context)
        .map(|i| ContextWord {
            token: name(CONTEXT_POOL, i),
            category_skew: rng.random_range(-1.0..=1.0),
        })
        .collect();
    Vocabulary {
        content_words,
        context_words,
    }
}

/// Samples an index with probability proportional to `exp(scores[i])`.
fn sample_softmax(rng: &mut Rng, scores: &[f64]) -> usize {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

struct Generator<'a> {
    cfg: &'a GeneratorConfig,
    vocab: &'a Vocabulary,
    clean: &'a CleanSignal,
}

impl Generator<'_> {
    /// Draws one candidate utterance. `polarity` steers context-word choice
    /// when the split is confounded.
    fn candidate(&self, rng: &mut Rng, polarity: Option<f64>) -> (Utterance, f64) {
        let spec = &self.cfg.bias_spec;
        let len = rng.random_range(self.cfg.min_tokens..=self.cfg.max_tokens);
        let valence: f64 = StandardNormal.sample(rng);

        let content_scores: Vec<f64> = self
            .vocab
            .content_words
            .iter()
            .map(|w| VALENCE_SHARPNESS * valence * w.sentiment_weight)
            .collect();
        let context_scores: Vec<f64> = self
            .vocab
            .context_words
            .iter()
            .map(|w| match polarity {
                Some(p) => COOCCURRENCE_SHARPNESS * spec.context_strength * p * w.category_skew,
                None => 0.0,
            })
            .collect();

        let mut flags: Vec<bool> = (0..len)
            .map(|_| rng.random_bool(spec.content_mask_ratio_target))
            .collect();
        if !flags.iter().any(|&f| f) {
            let at = rng.random_range(0..len);
            flags[at] = true;
        }

        let mut tokens = Vec::with_capacity(len);
        let mut sentiment_sum = 0.0;
        let mut n_content = 0usize;
        let mut skew_sum = 0.0;
        let mut n_context = 0usize;
        for &is_content in &flags {
            if is_content {
                let w = &self.vocab.content_words[sample_softmax(rng, &content_scores)];
                sentiment_sum += w.sentiment_weight;
                n_content += 1;
                tokens.push(w.token.clone());
            } else {
                let w = &self.vocab.context_words[sample_softmax(rng, &context_scores)];
                skew_sum += w.category_skew;
                n_context += 1;
                tokens.push(w.token.clone());
            }
        }

        let audio: Vector = (0..self.cfg.audio_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let visual: Vector = (0..self.cfg.visual_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();

        let clean = self
            .clean
            .eval(sentiment_sum / n_content as f64, &audio, &visual);
        let context_term = if n_context == 0 {
            0.0
        } else {
            skew_sum / n_context as f64
        };
        let planted = match polarity {
            Some(_) => spec.label_offset + spec.context_strength * context_term,
            None => 0.0,
        };
        let raw = clean + planted;
        let label = raw.clamp(LABEL_MIN, LABEL_MAX);
        let utt = Utterance {
            tokens,
            content_flags: flags,
            audio,
            visual,
            label,
            clean_signal: Some(clean),
            clamped: label != raw,
        };
        (utt, raw)
    }

    fn split(&self, rng: &mut Rng, split: Split, n: usize) -> Result<Vec<Utterance>> {
        let spec = &self.cfg.bias_spec;
        if !spec.plants_bias_in(split) {
            return Ok((0..n).map(|_| self.candidate(rng, None).0).collect());
        }
        // Exact positive count, then shuffled into place.
        let n_pos = (n as f64 * spec.label_skew).round() as usize;
        let mut polarities: Vec<f64> = (0..n).map(|i| if i < n_pos { 1.0 } else { -1.0 }).collect();
        polarities.shuffle(rng);

        let mut out = Vec::with_capacity(n);
        for (i, &p) in polarities.iter().enumerate() {
            let accepted = (0..MAX_ATTEMPTS).find_map(|_| {
                let (u, _) = self.candidate(rng, Some(p));
                let ok = if p > 0.0 {
                    u.label > 0.0
                } else {
                    u.label < 0.0
                };
                ok.then_some(u)
            });
            match accepted {
                Some(u) => out.push(u),
                None => {
                    return Err(Error::SpecInfeasible(format!(
                        "no {} label reachable for {split} sample {i} after {MAX_ATTEMPTS} draws",
                        if p > 0.0 { "positive" } else { "negative" }
                    )))
                }
            }
        }
        Ok(out)
    }
}

/// Generates a synthetic corpus with the planted biases of `cfg.bias_spec`.
///
/// Every utterance records its clean signal, a fixed linear function of
/// (mean content-word sentiment weight, audio, visual). In biased splits the
/// gold label is `clean + label_offset + context_strength * mean(category_skew
/// of the context tokens)`, clamped to [-3, 3], and exactly
/// `round(n * label_skew)` samples are positive.
pub fn generate_corpus(cfg: &GeneratorConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    let vocabulary = build_vocabulary(&mut rng, cfg.n_content_words, cfg.n_context_words);
    let clean = CleanSignal::draw(&mut rng, cfg.audio_dim, cfg.visual_dim);
    let gen = Generator {
        cfg,
        vocab: &vocabulary,
        clean: &clean,
    };
    let train = gen.split(&mut rng, Split::Train, cfg.n_train)?;
    let valid = gen.split(&mut rng, Split::Valid, cfg.n_valid)?;
    let test = gen.split(&mut rng, Split::Test, cfg.n_test)?;
    Ok(Corpus {
        vocabulary,
        audio_dim: cfg.audio_dim,
        visual_dim: cfg.visual_dim,
        bias_spec: Some(cfg.bias_spec.clone()),
        seed: Some(seed),
        train,
        valid,
        test,
    })
}
