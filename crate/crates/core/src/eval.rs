//! Seven-class accuracy, binary accuracy, weighted F1 and MAE over
//! real-valued sentiment scores.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::sentiment_class;
use crate::error::{Error, Result};

/// How zero-valued gold labels enter the binary metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// Drop samples whose gold label is exactly 0; classify by `score > 0`.
    #[default]
    NegVsPosExcludingZero,
    /// Keep every sample; classify by `score >= 0`.
    NegVsNonneg,
}

impl Convention {
    pub fn as_str(self) -> &'static str {
        match self {
            Convention::NegVsPosExcludingZero => "neg_vs_pos_excluding_zero",
            Convention::NegVsNonneg => "neg_vs_nonneg",
        }
    }

    pub(crate) fn positive(self, score: f64) -> bool {
        match self {
            Convention::NegVsPosExcludingZero => score > 0.0,
            Convention::NegVsNonneg => score >= 0.0,
        }
    }

    pub(crate) fn keeps(self, gold: f64) -> bool {
        match self {
            Convention::NegVsPosExcludingZero => gold != 0.0,
            Convention::NegVsNonneg => true,
        }
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neg_vs_pos_excluding_zero" => Ok(Convention::NegVsPosExcludingZero),
            "neg_vs_nonneg" => Ok(Convention::NegVsNonneg),
            other => Err(Error::InvalidConfig(format!(
                "unknown convention {other:?}"
            ))),
        }
    }
}

fn check_lengths(preds: &[f64], golds: &[f64]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyAggregate);
    }
    Ok(())
}

pub fn acc7(preds: &[f64], golds: &[f64]) -> Result<f64> {
    check_lengths(preds, golds)?;
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| sentiment_class(**p) == sentiment_class(**g))
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Binary confusion counts with "positive" as class 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(preds: &[f64], golds: &[f64], convention: Convention) -> Result<Confusion> {
    check_lengths(preds, golds)?;
    let mut c = Confusion::default();
    for (&p, &g) in preds.iter().zip(golds) {
        if !convention.keeps(g) {
            continue;
        }
        match (convention.positive(p), convention.positive(g)) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    if c.total() == 0 {
        return Err(Error::DegenerateValidation(
            "every gold label is zero under the excluding-zero convention".into(),
        ));
    }
    Ok(c)
}

pub fn acc2(preds: &[f64], golds: &[f64], convention: Convention) -> Result<f64> {
    let c = confusion(preds, golds, convention)?;
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

fn class_f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Support-weighted mean of the positive-class and negative-class F1.
pub fn weighted_f1(preds: &[f64], golds: &[f64], convention: Convention) -> Result<f64> {
    let c = confusion(preds, golds, convention)?;
    let pos_support = (c.tp + c.fn_) as f64;
    let neg_support = (c.tn + c.fp) as f64;
    let f1_pos = class_f1(c.tp, c.fp, c.fn_);
    let f1_neg = class_f1(c.tn, c.fn_, c.fp);
    Ok((pos_support * f1_pos + neg_support * f1_neg) / c.total() as f64)
}

pub fn mae(preds: &[f64], golds: &[f64]) -> Result<f64> {
    check_lengths(preds, golds)?;
    Ok(preds
        .iter()
        .zip(golds)
        .map(|(p, g)| (p - g).abs())
        .sum::<f64>()
        / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc7: f64,
    pub acc2: f64,
    pub weighted_f1: f64,
    pub mae: f64,
    pub n: usize,
    pub convention: Convention,
}

pub fn evaluate(preds: &[f64], golds: &[f64], convention: Convention) -> Result<MetricsReport> {
    Ok(MetricsReport {
        acc7: acc7(preds, golds)?,
        acc2: acc2(preds, golds, convention)?,
        weighted_f1: weighted_f1(preds, golds, convention)?,
        mae: mae(preds, golds)?,
        n: preds.len(),
        convention,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub acc7: f64,
    pub acc2: f64,
    pub weighted_f1: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub vanilla: MetricsReport,
    pub debiased: MetricsReport,
    /// `debiased - vanilla` for each metric.
    pub delta: MetricDeltas,
}

pub fn compare_reports(vanilla: &MetricsReport, debiased: &MetricsReport) -> Result<DeltaReport> {
    if vanilla.convention != debiased.convention {
        return Err(Error::ConventionMismatch {
            left: vanilla.convention.to_string(),
            right: debiased.convention.to_string(),
        });
    }
    if vanilla.n != debiased.n {
        return Err(Error::LengthMismatch {
            left: vanilla.n,
            right: debiased.n,
        });
    }
    Ok(DeltaReport {
        vanilla: vanilla.clone(),
        debiased: debiased.clone(),
        delta: MetricDeltas {
            acc7: debiased.acc7 - vanilla.acc7,
            acc2: debiased.acc2 - vanilla.acc2,
            weighted_f1: debiased.weighted_f1 - vanilla.weighted_f1,
            mae: debiased.mae - vanilla.mae,
        },
    })
}

impl DeltaReport {
    /// Aligned text table, one row per metric.
    pub fn to_table(&self) -> String {
        let rows = [
            (
                "Acc-7",
                self.vanilla.acc7,
                self.debiased.acc7,
                self.delta.acc7,
            ),
            (
                "Acc-2",
                self.vanilla.acc2,
                self.debiased.acc2,
                self.delta.acc2,
            ),
            (
                "F1",
                self.vanilla.weighted_f1,
                self.debiased.weighted_f1,
                self.delta.weighted_f1,
            ),
            ("MAE", self.vanilla.mae, self.debiased.mae, self.delta.mae),
        ];
        let mut out = format!(
            "{:<8}{:>10}{:>10}{:>10}\n",
            "metric", "vanilla", "debiased", "delta"
        );
        for (name, v, d, delta) in rows {
            out.push_str(&format!("{name:<8}{v:>10.4}{d:>10.4}{delta:>+10.4}\n"));
        }
        out.push_str(&format!(
            "n = {}, convention = {}\n",
            self.vanilla.n, self.vanilla.convention
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng_from_seed;
    use rand::Rng;

    const CONVENTIONS: [Convention; 2] =
        [Convention::NegVsPosExcludingZero, Convention::NegVsNonneg];

    fn random_pairs(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = rng_from_seed(seed);
        let preds = (0..n).map(|_| rng.random_range(-3.5..3.5)).collect();
        // integer and zero golds appear as in real annotations
        let golds = (0..n)
            .map(|_| {
                if rng.random_bool(0.2) {
                    rng.random_range(-3..=3) as f64
                } else {
                    rng.random_range(-3.0..3.0)
                }
            })
            .collect();
        (preds, golds)
    }

    /// Counts by explicit class membership tests, independent of `confusion`.
    fn oracle_counts(preds: &[f64], golds: &[f64], conv: Convention) -> [[usize; 2]; 2] {
        let mut m = [[0usize; 2]; 2];
        for i in 0..preds.len() {
            let (t, p) = match conv {
                Convention::NegVsPosExcludingZero => {
                    if golds[i] == 0.0 {
                        continue;
                    }
                    (golds[i] > 0.0, preds[i] > 0.0)
                }
                Convention::NegVsNonneg => (golds[i] >= 0.0, preds[i] >= 0.0),
            };
            m[t as usize][p as usize] += 1;
        }
        m
    }

    fn oracle_weighted_f1(m: [[usize; 2]; 2]) -> f64 {
        let n: usize = m.iter().flatten().sum();
        let mut total = 0.0;
        for c in 0..2 {
            let tp = m[c][c];
            let fp = m[1 - c][c];
            let fn_ = m[c][1 - c];
            let f1 = if 2 * tp + fp + fn_ == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
            };
            total += (m[c][0] + m[c][1]) as f64 * f1;
        }
        total / n as f64
    }

    #[test]
    fn acc7_examples() {
        let g = [1.0, -2.0, 0.4];
        assert_eq!(acc7(&g, &g).unwrap(), 1.0);
        assert_eq!(acc7(&[2.6], &[3.0]).unwrap(), 1.0);
        assert!(matches!(
            acc7(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn acc7_matches_per_pair_binning() {
        let (p, g) = random_pairs(20, 20);
        let bin = |x: f64| -> i64 {
            let r = if x >= 0.0 {
                (x + 0.5).floor()
            } else {
                -((-x + 0.5).floor())
            };
            r.clamp(-3.0, 3.0) as i64
        };
        let hits = (0..20).filter(|&i| bin(p[i]) == bin(g[i])).count();
        assert!((acc7(&p, &g).unwrap() - hits as f64 / 20.0).abs() < 1e-12);
    }

    #[test]
    fn acc2_examples() {
        let conv = Convention::NegVsPosExcludingZero;
        assert_eq!(acc2(&[1.2, -0.5], &[0.3, -0.1], conv).unwrap(), 1.0);
        // zero gold dropped from the denominator
        assert_eq!(
            acc2(&[1.2, -0.5, 3.0], &[0.3, -0.1, 0.0], conv).unwrap(),
            1.0
        );
        assert_eq!(
            acc2(
                &[1.2, -0.5, -3.0],
                &[0.3, -0.1, 0.0],
                Convention::NegVsNonneg
            )
            .unwrap(),
            2.0 / 3.0
        );
        assert!(matches!(
            acc2(&[1.0, 2.0], &[0.0, 0.0], conv),
            Err(Error::DegenerateValidation(_))
        ));
    }

    #[test]
    fn acc2_matches_hand_count() {
        let (p, g) = random_pairs(30, 30);
        for conv in CONVENTIONS {
            let m = oracle_counts(&p, &g, conv);
            let n: usize = m.iter().flatten().sum();
            let expect = (m[0][0] + m[1][1]) as f64 / n as f64;
            assert!((acc2(&p, &g, conv).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_f1_examples() {
        let conv = Convention::NegVsPosExcludingZero;
        let g = [1.0, -1.0, 2.0, -0.3];
        assert_eq!(weighted_f1(&g, &g, conv).unwrap(), 1.0);
        let all_pos = [1.0; 4];
        let f = weighted_f1(&all_pos, &g, conv).unwrap();
        assert!((f - 1.0 / 3.0).abs() < 1e-12, "{f}");
    }

    #[test]
    fn weighted_f1_matches_confusion_oracle() {
        let (p, g) = random_pairs(25, 25);
        for conv in CONVENTIONS {
            let expect = oracle_weighted_f1(oracle_counts(&p, &g, conv));
            assert!((weighted_f1(&p, &g, conv).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_f1_positive_only_is_plain_f1() {
        let g = [0.5, 1.0, 2.0, 2.5];
        let p = [1.0, -1.0, 0.2, 3.0];
        // precision 1, recall 3/4
        let plain = 2.0 * 1.0 * 0.75 / 1.75;
        let f = weighted_f1(&p, &g, Convention::NegVsPosExcludingZero).unwrap();
        assert!((f - plain).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let (_, g) = random_pairs(3, 40);
        let r = evaluate(&g, &g, Convention::default()).unwrap();
        assert_eq!((r.acc7, r.acc2, r.weighted_f1, r.mae), (1.0, 1.0, 1.0, 0.0));
    }

    #[test]
    fn permutation_invariance() {
        let (p, g) = random_pairs(4, 30);
        let mut idx: Vec<usize> = (0..30).collect();
        idx.reverse();
        idx.swap(3, 17);
        let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
        let gg: Vec<f64> = idx.iter().map(|&i| g[i]).collect();
        for conv in CONVENTIONS {
            let a = evaluate(&p, &g, conv).unwrap();
            let b = evaluate(&pp, &gg, conv).unwrap();
            assert_eq!(
                (a.acc7, a.acc2, a.weighted_f1),
                (b.acc7, b.acc2, b.weighted_f1)
            );
            assert!((a.mae - b.mae).abs() < 1e-12);
        }
    }

    #[test]
    fn compare_examples() {
        let (p, g) = random_pairs(5, 20);
        let r = evaluate(&p, &g, Convention::default()).unwrap();
        let d = compare_reports(&r, &r).unwrap();
        assert_eq!(
            d.delta,
            MetricDeltas {
                acc7: 0.0,
                acc2: 0.0,
                weighted_f1: 0.0,
                mae: 0.0
            }
        );

        let mut v = r.clone();
        v.acc2 = 0.85;
        let mut b = r.clone();
        b.acc2 = 0.87;
        assert!((compare_reports(&v, &b).unwrap().delta.acc2 - 0.02).abs() < 1e-12);

        b.convention = Convention::NegVsNonneg;
        assert!(matches!(
            compare_reports(&v, &b),
            Err(Error::ConventionMismatch { .. })
        ));
        assert!(compare_reports(&r, &r)
            .unwrap()
            .to_table()
            .contains("Acc-7"));
    }
}
