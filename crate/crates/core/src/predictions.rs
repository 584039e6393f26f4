//! Prediction and debiased-score files.
//!
//! Both are JSON lines: a header object tagged by `kind`, then one record per
//! utterance. Calibration and debiasing read only these files, so they work
//! on predictions from any model.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_json_line, Split};
use crate::debias::{apply_debias, LambdaPair, PredictionTriple};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreHeader {
    Predictions {
        split: Split,
        n: usize,
        /// The label-bias outcome when it is shared by every record.
        label_cf: Option<f64>,
    },
    Debiased {
        split: Split,
        n: usize,
        lambda_hat: f64,
        lambda_tilde: f64,
    },
}

impl ScoreHeader {
    pub fn split(&self) -> Split {
        match self {
            ScoreHeader::Predictions { split, .. } | ScoreHeader::Debiased { split, .. } => *split,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            ScoreHeader::Predictions { n, .. } | ScoreHeader::Debiased { n, .. } => *n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: usize,
    pub factual: f64,
    pub label_cf: f64,
    pub context_cf: f64,
    pub gold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_signal: Option<f64>,
}

impl PredictionRecord {
    pub fn triple(&self) -> PredictionTriple {
        PredictionTriple {
            factual: self.factual,
            label_cf: self.label_cf,
            context_cf: self.context_cf,
            gold: self.gold,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub split: Split,
    pub label_cf: Option<f64>,
    pub records: Vec<PredictionRecord>,
}

impl PredictionSet {
    /// Pair per-utterance triples with the clean signals of the same utterances.
    pub fn new(
        split: Split,
        label_cf: Option<f64>,
        triples: &[PredictionTriple],
        clean: impl IntoIterator<Item = Option<f64>>,
    ) -> Self {
        let records = triples
            .iter()
            .zip(clean)
            .enumerate()
            .map(|(id, (t, clean_signal))| PredictionRecord {
                id,
                factual: t.factual,
                label_cf: t.label_cf,
                context_cf: t.context_cf,
                gold: t.gold,
                clean_signal,
            })
            .collect();
        PredictionSet {
            split,
            label_cf,
            records,
        }
    }

    pub fn triples(&self) -> Vec<PredictionTriple> {
        self.records.iter().map(PredictionRecord::triple).collect()
    }

    pub fn factual(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.factual).collect()
    }

    pub fn golds(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.gold).collect()
    }

    pub fn debias(&self, lambdas: LambdaPair) -> DebiasedSet {
        let scores = apply_debias(&self.triples(), lambdas);
        DebiasedSet {
            split: self.split,
            lambdas,
            records: self
                .records
                .iter()
                .zip(scores)
                .map(|(r, debiased)| DebiasedRecord {
                    id: r.id,
                    debiased,
                    factual: r.factual,
                    gold: r.gold,
                    clean_signal: r.clean_signal,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasedRecord {
    pub id: usize,
    pub debiased: f64,
    pub factual: f64,
    pub gold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_signal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebiasedSet {
    pub split: Split,
    pub lambdas: LambdaPair,
    pub records: Vec<DebiasedRecord>,
}

/// Scores read from either kind of file, for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreColumn {
    pub split: Split,
    pub ids: Vec<usize>,
    pub scores: Vec<f64>,
    pub golds: Vec<f64>,
    pub clean: Vec<Option<f64>>,
}

impl PredictionSet {
    pub fn scores(&self) -> ScoreColumn {
        ScoreColumn {
            split: self.split,
            ids: self.records.iter().map(|r| r.id).collect(),
            scores: self.factual(),
            golds: self.golds(),
            clean: self.records.iter().map(|r| r.clean_signal).collect(),
        }
    }
}

impl DebiasedSet {
    pub fn scores(&self) -> ScoreColumn {
        ScoreColumn {
            split: self.split,
            ids: self.records.iter().map(|r| r.id).collect(),
            scores: self.records.iter().map(|r| r.debiased).collect(),
            golds: self.records.iter().map(|r| r.gold).collect(),
            clean: self.records.iter().map(|r| r.clean_signal).collect(),
        }
    }
}

fn write_lines<T: Serialize>(path: &Path, header: &ScoreHeader, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_json_line(&mut w, header, path)?;
    for r in records {
        write_json_line(&mut w, r, path)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_line<T: DeserializeOwned>(line: &str, number: usize) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::ParseError {
        line: number,
        message: e.to_string(),
    })
}

/// Header plus the raw (line number, text) pairs of the body.
fn read_lines(path: &Path) -> Result<(ScoreHeader, Vec<(usize, String)>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut body = Vec::new();
    let mut header = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            header = Some(parse_line(&line, i + 1)?);
        } else {
            body.push((i + 1, line));
        }
    }
    let header: ScoreHeader = header.ok_or_else(|| Error::ParseError {
        line: 1,
        message: "missing header line".into(),
    })?;
    if header.n() != body.len() {
        return Err(Error::SchemaError(format!(
            "header declares {} records, file has {}",
            header.n(),
            body.len()
        )));
    }
    Ok((header, body))
}

pub fn save_predictions(set: &PredictionSet, path: impl AsRef<Path>) -> Result<()> {
    let header = ScoreHeader::Predictions {
        split: set.split,
        n: set.records.len(),
        label_cf: set.label_cf,
    };
    write_lines(path.as_ref(), &header, &set.records)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<PredictionSet> {
    let (header, body) = read_lines(path.as_ref())?;
    let ScoreHeader::Predictions {
        split, label_cf, ..
    } = header
    else {
        return Err(Error::SchemaError(
            "expected a predictions file, found debiased scores".into(),
        ));
    };
    let records = body
        .iter()
        .map(|(n, l)| {
            let r: PredictionRecord = parse_line(l, *n)?;
            if !r.triple().is_finite() {
                return Err(Error::SchemaError(format!("line {n}: non-finite score")));
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionSet {
        split,
        label_cf,
        records,
    })
}

pub fn save_debiased(set: &DebiasedSet, path: impl AsRef<Path>) -> Result<()> {
    let header = ScoreHeader::Debiased {
        split: set.split,
        n: set.records.len(),
        lambda_hat: set.lambdas.lambda_hat,
        lambda_tilde: set.lambdas.lambda_tilde,
    };
    write_lines(path.as_ref(), &header, &set.records)
}

pub fn load_debiased(path: impl AsRef<Path>) -> Result<DebiasedSet> {
    let (header, body) = read_lines(path.as_ref())?;
    let ScoreHeader::Debiased {
        split,
        lambda_hat,
        lambda_tilde,
        ..
    } = header
    else {
        return Err(Error::SchemaError(
            "expected a debiased file, found predictions".into(),
        ));
    };
    let records = body
        .iter()
        .map(|(n, l)| parse_line(l, *n))
        .collect::<Result<Vec<DebiasedRecord>>>()?;
    Ok(DebiasedSet {
        split,
        lambdas: LambdaPair::new(lambda_hat, lambda_tilde),
        records,
    })
}

/// Load either file kind; predictions contribute their factual scores.
pub fn load_scores(path: impl AsRef<Path>) -> Result<ScoreColumn> {
    let path = path.as_ref();
    let (header, _) = read_lines(path)?;
    match header {
        ScoreHeader::Predictions { .. } => Ok(load_predictions(path)?.scores()),
        ScoreHeader::Debiased { .. } => Ok(load_debiased(path)?.scores()),
    }
}
