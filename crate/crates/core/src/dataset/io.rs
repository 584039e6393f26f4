//! JSON-lines corpus files: one header line, then one utterance per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BiasSpec, Corpus, Split, Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::Vector;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    vocab: Vocabulary,
    dims: [usize; 2],
    seed: Option<u64>,
    bias_spec: Option<BiasSpec>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    tokens: Vec<String>,
    content_flags: Vec<bool>,
    audio: Vector,
    visual: Vector,
    label: f64,
    clean_signal: Option<f64>,
    split: Split,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    clamped: bool,
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        vocab: corpus.vocabulary.clone(),
        dims: [corpus.audio_dim, corpus.visual_dim],
        seed: corpus.seed,
        bias_spec: corpus.bias_spec.clone(),
    };
    write_json_line(&mut w, &header, path)?;
    for split in Split::ALL {
        for u in corpus.split(split) {
            let rec = Record {
                tokens: u.tokens.clone(),
                content_flags: u.content_flags.clone(),
                audio: u.audio.clone(),
                visual: u.visual.clone(),
                label: u.label,
                clean_signal: u.clean_signal,
                split,
                clamped: u.clamped,
            };
            write_json_line(&mut w, &rec, path)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json_line<W: Write, T: Serialize>(
    w: &mut W,
    value: &T,
    path: &Path,
) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let header: Header = loop {
        match lines.next() {
            None => {
                return Err(Error::ParseError {
                    line: 1,
                    message: "missing header line".into(),
                })
            }
            Some((i, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| Error::ParseError {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            }
        }
    };

    let [audio_dim, visual_dim] = header.dims;
    let mut corpus = Corpus {
        vocabulary: header.vocab,
        audio_dim,
        visual_dim,
        bias_spec: header.bias_spec,
        seed: header.seed,
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };

    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::ParseError {
            line: i + 1,
            message: e.to_string(),
        })?;
        let u = Utterance {
            tokens: rec.tokens,
            content_flags: rec.content_flags,
            audio: rec.audio,
            visual: rec.visual,
            label: rec.label,
            clean_signal: rec.clean_signal,
            clamped: rec.clamped,
        };
        u.validate(audio_dim, visual_dim)
            .map_err(|e| Error::SchemaError(format!("line {}: {e}", i + 1)))?;
        match rec.split {
            Split::Train => corpus.train.push(u),
            Split::Valid => corpus.valid.push(u),
            Split::Test => corpus.test.push(u),
        }
    }
    corpus.validate()?;
    Ok(corpus)
}
