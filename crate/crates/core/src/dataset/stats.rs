use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Corpus, Split, Utterance};
use crate::error::{Error, Result};

/// Seven-class bin of a sentiment score: round half away from zero, then
/// clamp to [-3, 3].
pub fn sentiment_class(score: f64) -> i32 {
    score.round().clamp(-3.0, 3.0) as i32
}

/// Occurrences of a context token in positive and negative samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordCounts {
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub n: usize,
    /// Counts for classes -3..=3, index 0 is class -3.
    pub label_histogram: [usize; 7],
    pub positive_fraction: f64,
    pub content_token_ratio: f64,
    pub context_words: BTreeMap<String, WordCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub train: SplitStats,
    pub valid: SplitStats,
    pub test: SplitStats,
    pub content_token_ratio: f64,
}

fn split_stats(utterances: &[Utterance]) -> SplitStats {
    let mut label_histogram = [0usize; 7];
    let mut context_words: BTreeMap<String, WordCounts> = BTreeMap::new();
    let mut positives = 0usize;
    let (mut content, mut total) = (0usize, 0usize);
    for u in utterances {
        label_histogram[(sentiment_class(u.label) + 3) as usize] += 1;
        if u.label > 0.0 {
            positives += 1;
        }
        for (tok, &is_content) in u.tokens.iter().zip(&u.content_flags) {
            total += 1;
            if is_content {
                content += 1;
                continue;
            }
            let entry = context_words.entry(tok.clone()).or_default();
            if u.label > 0.0 {
                entry.positive += 1;
            } else if u.label < 0.0 {
                entry.negative += 1;
            }
        }
    }
    let n = utterances.len();
    SplitStats {
        n,
        label_histogram,
        positive_fraction: if n == 0 {
            0.0
        } else {
            positives as f64 / n as f64
        },
        content_token_ratio: if total == 0 {
            0.0
        } else {
            content as f64 / total as f64
        },
        context_words,
    }
}

/// Label histograms and context-word polarity counts for each split.
pub fn corpus_stats(corpus: &Corpus) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyAggregate);
    }
    let (mut content, mut total) = (0usize, 0usize);
    for split in Split::ALL {
        for u in corpus.split(split) {
            content += u.content_flags.iter().filter(|&&f| f).count();
            total += u.tokens.len();
        }
    }
    Ok(CorpusStats {
        train: split_stats(&corpus.train),
        valid: split_stats(&corpus.valid),
        test: split_stats(&corpus.test),
        content_token_ratio: content as f64 / total.max(1) as f64,
    })
}
