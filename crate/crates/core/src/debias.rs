//! Bias elimination and calibration of its two weights.
//!
//! A debiased score is `F(m) - (lambda_hat * F(m_hat) + lambda_tilde * F(m_tilde))`.
//! The weights are picked by maximizing validation weighted F1, first on a
//! coarse lattice over the search square, then on a fine lattice around the
//! coarse winner.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{weighted_f1, Convention};

/// Factual and counterfactual outcomes for one utterance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionTriple {
    pub factual: f64,
    pub label_cf: f64,
    pub context_cf: f64,
    pub gold: f64,
}

impl PredictionTriple {
    pub fn is_finite(&self) -> bool {
        self.factual.is_finite()
            && self.label_cf.is_finite()
            && self.context_cf.is_finite()
            && self.gold.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaPair {
    pub lambda_hat: f64,
    pub lambda_tilde: f64,
}

impl LambdaPair {
    pub const ZERO: LambdaPair = LambdaPair::new(0.0, 0.0);
    pub const ONE: LambdaPair = LambdaPair::new(1.0, 1.0);

    pub const fn new(lambda_hat: f64, lambda_tilde: f64) -> Self {
        LambdaPair {
            lambda_hat,
            lambda_tilde,
        }
    }
}

impl fmt::Display for LambdaPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lambda_hat, self.lambda_tilde)
    }
}

pub fn debiased_score(t: &PredictionTriple, l: LambdaPair) -> f64 {
    t.factual - (l.lambda_hat * t.label_cf + l.lambda_tilde * t.context_cf)
}

pub fn apply_debias(triples: &[PredictionTriple], lambdas: LambdaPair) -> Vec<f64> {
    triples.iter().map(|t| debiased_score(t, lambdas)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub interval: (f64, f64),
    pub coarse_step: f64,
    pub fine_step: f64,
    /// Half-width of the fine window; `None` means one coarse step.
    pub fine_radius: Option<f64>,
    pub convention: Convention,
    /// Also evaluate the full fine lattice and report the gap.
    pub exhaustive: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            interval: (-2.0, 2.0),
            coarse_step: 0.5,
            fine_step: 0.1,
            fine_radius: None,
            convention: Convention::default(),
            exhaustive: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.interval;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(a.is_finite() && b.is_finite() && a < b) {
            return bad(format!("search interval [{a}, {b}] is empty"));
        }
        if !(self.coarse_step > 0.0 && self.fine_step > 0.0) {
            return bad("search steps must be positive".into());
        }
        if self.fine_step > self.coarse_step {
            return bad(format!(
                "fine step {} exceeds coarse step {}",
                self.fine_step, self.coarse_step
            ));
        }
        if self
            .fine_radius
            .is_some_and(|r| !(r >= 0.0 && r.is_finite()))
        {
            return bad("fine radius must be a non-negative number".into());
        }
        Ok(())
    }

    pub fn fine_radius(&self) -> f64 {
        self.fine_radius.unwrap_or(self.coarse_step)
    }
}

const SNAP: f64 = 1e9;

fn snap(x: f64) -> f64 {
    (x * SNAP).round() / SNAP
}

/// Inclusive lattice `lo, lo + step, ...` ending exactly at `hi`.
///
/// Values are snapped to nine decimals so that lattices built from
/// different origins agree on shared points.
pub fn lattice(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor().max(0.0) as usize;
    let mut values: Vec<f64> = (0..=n).map(|k| snap(lo + k as f64 * step)).collect();
    let hi = snap(hi);
    if values.last().is_some_and(|&last| hi - last > 1e-9) {
        values.push(hi);
    }
    values
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    #[default]
    Full,
    /// Pin `lambda_hat = 0` and search `lambda_tilde` only.
    NoLabelElim,
    /// Pin `lambda_tilde = 0` and search `lambda_hat` only.
    NoContextElim,
    /// Fix both weights at 1 without searching.
    NoGss,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::Full,
        AblationMode::NoLabelElim,
        AblationMode::NoContextElim,
        AblationMode::NoGss,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoLabelElim => "no_label_elim",
            AblationMode::NoContextElim => "no_context_elim",
            AblationMode::NoGss => "no_gss",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStage {
    Coarse,
    Fine,
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceCell {
    pub stage: SearchStage,
    pub lambda_hat: f64,
    pub lambda_tilde: f64,
    pub metric: f64,
}

impl TraceCell {
    pub fn lambdas(&self) -> LambdaPair {
        LambdaPair::new(self.lambda_hat, self.lambda_tilde)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveSummary {
    pub lambdas: LambdaPair,
    pub metric: f64,
    pub cells: usize,
    /// Exhaustive best minus coarse-to-fine best; never negative.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub mode: AblationMode,
    pub lambdas: LambdaPair,
    pub metric: f64,
    /// Coarse and fine cells in evaluation order. Exhaustive cells are not
    /// included; they are summarized in `exhaustive`.
    pub trace: Vec<TraceCell>,
    pub exhaustive: Option<ExhaustiveSummary>,
}

impl SearchOutcome {
    pub fn cells(&self, stage: SearchStage) -> usize {
        self.trace.iter().filter(|c| c.stage == stage).count()
    }
}

/// Validation weighted F1 of the debiased scores.
pub fn validation_metric(
    triples: &[PredictionTriple],
    lambdas: LambdaPair,
    convention: Convention,
) -> Result<f64> {
    let golds: Vec<f64> = triples.iter().map(|t| t.gold).collect();
    weighted_f1(&apply_debias(triples, lambdas), &golds, convention)
}

fn check_validation(triples: &[PredictionTriple], convention: Convention) -> Result<()> {
    if triples.is_empty() {
        return Err(Error::DegenerateValidation("no validation samples".into()));
    }
    if let Some(i) = triples.iter().position(|t| !t.is_finite()) {
        return Err(Error::NumericOverflow(format!(
            "validation triple {i} is not finite"
        )));
    }
    let kept = triples.iter().filter(|t| convention.keeps(t.gold));
    let (mut pos, mut neg) = (0, 0);
    for t in kept {
        if convention.positive(t.gold) {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateValidation(format!(
            "validation split needs both classes, found {pos} positive and {neg} negative under {convention}"
        )));
    }
    Ok(())
}

fn evaluate_cells(
    triples: &[PredictionTriple],
    cells: &[LambdaPair],
    stage: SearchStage,
    convention: Convention,
) -> Result<Vec<TraceCell>> {
    cells
        .par_iter()
        .map(|&l| {
            Ok(TraceCell {
                stage,
                lambda_hat: l.lambda_hat,
                lambda_tilde: l.lambda_tilde,
                metric: validation_metric(triples, l, convention)?,
            })
        })
        .collect()
}

/// Highest metric, ties broken by smallest `lambda_hat` then `lambda_tilde`.
fn best<'a>(cells: impl IntoIterator<Item = &'a TraceCell>) -> Option<TraceCell> {
    cells.into_iter().copied().reduce(|a, b| {
        let key = |c: &TraceCell| (c.lambda_hat, c.lambda_tilde);
        if b.metric > a.metric || (b.metric == a.metric && key(&b) < key(&a)) {
            b
        } else {
            a
        }
    })
}

fn grid(hats: &[f64], tildes: &[f64]) -> Vec<LambdaPair> {
    hats.iter()
        .flat_map(|&h| tildes.iter().map(move |&t| LambdaPair::new(h, t)))
        .collect()
}

/// Axis values for one stage; a pinned axis contributes a single value.
fn axes(mode: AblationMode, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    match mode {
        AblationMode::NoLabelElim => (vec![0.0], values.to_vec()),
        AblationMode::NoContextElim => (values.to_vec(), vec![0.0]),
        _ => (values.to_vec(), values.to_vec()),
    }
}

fn window(config: &SearchConfig, centre: f64) -> Vec<f64> {
    let (a, b) = config.interval;
    let r = config.fine_radius();
    lattice((centre - r).max(a), (centre + r).min(b), config.fine_step)
}

/// Calibrate the elimination weights on validation triples.
pub fn grid_search(
    triples: &[PredictionTriple],
    config: &SearchConfig,
    mode: AblationMode,
) -> Result<SearchOutcome> {
    config.validate()?;
    check_validation(triples, config.convention)?;
    let conv = config.convention;

    if mode == AblationMode::NoGss {
        return Ok(SearchOutcome {
            mode,
            lambdas: LambdaPair::ONE,
            metric: validation_metric(triples, LambdaPair::ONE, conv)?,
            trace: Vec::new(),
            exhaustive: None,
        });
    }

    let (a, b) = config.interval;
    let coarse_axis = lattice(a, b, config.coarse_step);
    let (hats, tildes) = axes(mode, &coarse_axis);
    let mut trace = evaluate_cells(triples, &grid(&hats, &tildes), SearchStage::Coarse, conv)?;
    let coarse_best = best(&trace).ok_or(Error::EmptyAggregate)?;

    let fine_hats = match mode {
        AblationMode::NoLabelElim => vec![0.0],
        _ => window(config, coarse_best.lambda_hat),
    };
    let fine_tildes = match mode {
        AblationMode::NoContextElim => vec![0.0],
        _ => window(config, coarse_best.lambda_tilde),
    };
    let fine = evaluate_cells(
        triples,
        &grid(&fine_hats, &fine_tildes),
        SearchStage::Fine,
        conv,
    )?;
    trace.extend(fine);
    let overall = best(&trace).ok_or(Error::EmptyAggregate)?;

    let exhaustive = if config.exhaustive {
        let (hats, tildes) = axes(mode, &lattice(a, b, config.fine_step));
        let cells = evaluate_cells(
            triples,
            &grid(&hats, &tildes),
            SearchStage::Exhaustive,
            conv,
        )?;
        let top = best(&cells).ok_or(Error::EmptyAggregate)?;
        Some(ExhaustiveSummary {
            lambdas: top.lambdas(),
            metric: top.metric,
            cells: cells.len(),
            gap: (top.metric - overall.metric).max(0.0),
        })
    } else {
        None
    };

    Ok(SearchOutcome {
        mode,
        lambdas: overall.lambdas(),
        metric: overall.metric,
        trace,
        exhaustive,
    })
}

/// Contents of a lambdas file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdasFile {
    pub lambda_hat: f64,
    pub lambda_tilde: f64,
    pub metric: f64,
    pub trace_cells: usize,
    #[serde(default)]
    pub mode: AblationMode,
    #[serde(default)]
    pub convention: Convention,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exhaustive: Option<ExhaustiveSummary>,
}

impl LambdasFile {
    pub fn lambdas(&self) -> LambdaPair {
        LambdaPair::new(self.lambda_hat, self.lambda_tilde)
    }
}

impl From<(&SearchOutcome, Convention)> for LambdasFile {
    fn from((o, convention): (&SearchOutcome, Convention)) -> Self {
        LambdasFile {
            lambda_hat: o.lambdas.lambda_hat,
            lambda_tilde: o.lambdas.lambda_tilde,
            metric: o.metric,
            trace_cells: o.trace.len(),
            mode: o.mode,
            convention,
            exhaustive: o.exhaustive,
        }
    }
}
