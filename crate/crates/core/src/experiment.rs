//! End-to-end experiment runs driven by one JSON configuration.
//!
//! Every random choice is seeded from the root seed through [`derive_seed`],
//! and no output contains timestamps, so a rerun with the same configuration
//! reproduces every artifact byte for byte.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::counterfactual::{
    compute_label_counterfactual, random_counterfactual_embeddings, ContextTreatment,
    FeaturePolicy, Intervention, LabelTreatment, MaskPolicy,
};
use crate::dataset::{corpus_stats, generate_corpus, save_corpus, Corpus, GeneratorConfig, Split};
use crate::debias::{
    grid_search, AblationMode, LambdaPair, LambdasFile, SearchConfig, SearchOutcome,
};
use crate::error::{Error, Result, StageContext};
use crate::eval::{compare_reports, evaluate, mae, Convention, DeltaReport, MetricsReport};
use crate::model::{save_checkpoint, train, ModelParams, TrainConfig};
use crate::numerics::{derive_seed, RNG_ALGORITHM};
use crate::predictions::{save_debiased, save_predictions, PredictionSet, ScoreColumn};

pub const TOOL_NAME: &str = "mcis";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub enabled: bool,
    /// Per-token probability for the random-mask variant.
    pub random_mask_p: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            enabled: true,
            random_mask_p: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub generator: GeneratorConfig,
    /// The `seed` field inside is replaced by one derived from the root seed.
    pub train: TrainConfig,
    pub search: SearchConfig,
    pub mode: AblationMode,
    pub ablation: SuiteConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            generator: GeneratorConfig::default(),
            train: TrainConfig::default(),
            search: SearchConfig::default(),
            mode: AblationMode::Full,
            ablation: SuiteConfig::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.train.validate()?;
        self.search.validate()?;
        if !(0.0..=1.0).contains(&self.ablation.random_mask_p) {
            return Err(Error::InvalidConfig(format!(
                "random_mask_p {} outside [0, 1]",
                self.ablation.random_mask_p
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        Ok(sha256_hex(&serde_json::to_vec(&canonical)?))
    }
}

/// Seeds for each random component, all derived from the root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub root: u64,
    pub corpus: u64,
    pub train: u64,
    pub rce: u64,
    pub random_mask: u64,
}

impl Seeds {
    pub fn derive(root: u64) -> Self {
        Seeds {
            root,
            corpus: derive_seed(root, "corpus"),
            train: derive_seed(root, "train"),
            rce: derive_seed(root, "rce"),
            random_mask: derive_seed(root, "random_mask"),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Infer the three scores of every utterance in one split.
pub fn infer_split(
    corpus: &Corpus,
    params: &ModelParams,
    intervention: &Intervention,
    split: Split,
) -> Result<PredictionSet> {
    let utterances = corpus.split(split);
    let triples = intervention.triples(params, utterances)?;
    Ok(PredictionSet::new(
        split,
        intervention.shared_label_bias(params)?,
        &triples,
        utterances.iter().map(|u| u.clean_signal),
    ))
}

/// Predictions with the standard counterfactuals for the valid and test splits.
pub fn infer(corpus: &Corpus, params: &ModelParams) -> Result<(PredictionSet, PredictionSet)> {
    params.check_corpus(corpus)?;
    let iv = Intervention::new(compute_label_counterfactual(corpus, params)?);
    Ok((
        infer_split(corpus, params, &iv, Split::Valid)?,
        infer_split(corpus, params, &iv, Split::Test)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanMae {
    pub vanilla: f64,
    pub debiased: f64,
    /// `1 - debiased / vanilla`.
    pub relative_reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub split: Split,
    pub comparison: DeltaReport,
    /// Distance to the generator's bias-free signal, when it was recorded.
    pub clean_mae: Option<CleanMae>,
}

impl ExperimentReport {
    pub fn to_table(&self) -> String {
        let mut out = self.comparison.to_table();
        if let Some(c) = self.clean_mae {
            out.push_str(&format!(
                "{:<8}{:>10.4}{:>10.4}{:>+10.4}\n",
                "clean",
                c.vanilla,
                c.debiased,
                c.debiased - c.vanilla
            ));
        }
        out
    }
}

/// Compare two score columns over the same utterances.
pub fn build_report(
    vanilla: &ScoreColumn,
    debiased: &ScoreColumn,
    convention: Convention,
) -> Result<ExperimentReport> {
    if vanilla.ids != debiased.ids || vanilla.golds != debiased.golds {
        return Err(Error::SchemaError(
            "vanilla and debiased files describe different utterances".into(),
        ));
    }
    let v = evaluate(&vanilla.scores, &vanilla.golds, convention)?;
    let d = evaluate(&debiased.scores, &debiased.golds, convention)?;
    let clean: Option<Vec<f64>> = vanilla.clean.iter().copied().collect();
    let clean_mae = match clean {
        Some(c) if !c.is_empty() => {
            let vm = mae(&vanilla.scores, &c)?;
            let dm = mae(&debiased.scores, &c)?;
            Some(CleanMae {
                vanilla: vm,
                debiased: dm,
                relative_reduction: if vm > 0.0 { 1.0 - dm / vm } else { 0.0 },
            })
        }
        _ => None,
    };
    Ok(ExperimentReport {
        split: vanilla.split,
        comparison: compare_reports(&v, &d)?,
        clean_mae,
    })
}

pub fn write_scores_csv(
    path: impl AsRef<Path>,
    vanilla: &ScoreColumn,
    debiased: &ScoreColumn,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "id,gold,vanilla,debiased").map_err(io)?;
    for i in 0..vanilla.ids.len() {
        writeln!(
            w,
            "{},{},{},{}",
            vanilla.ids[i], vanilla.golds[i], vanilla.scores[i], debiased.scores[i]
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_trace_csv(path: impl AsRef<Path>, outcome: &SearchOutcome) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("stage,lambda_hat,lambda_tilde,metric\n");
    for c in &outcome.trace {
        let stage = serde_json::to_value(c.stage)?;
        text.push_str(&format!(
            "{},{},{},{}\n",
            stage.as_str().unwrap_or_default(),
            c.lambda_hat,
            c.lambda_tilde,
            c.metric
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteVariant {
    Full,
    NoLabelElim,
    NoContextElim,
    NoGss,
    /// Random counterfactual embeddings in place of the training averages.
    Rce,
    AllMask,
    RandomMask,
    /// Audio keeps the utterance's own features in both counterfactuals.
    NoAce,
    /// Visual keeps the utterance's own features in both counterfactuals.
    NoVce,
}

impl SuiteVariant {
    pub const ALL: [SuiteVariant; 9] = [
        SuiteVariant::Full,
        SuiteVariant::NoLabelElim,
        SuiteVariant::NoContextElim,
        SuiteVariant::NoGss,
        SuiteVariant::Rce,
        SuiteVariant::AllMask,
        SuiteVariant::RandomMask,
        SuiteVariant::NoAce,
        SuiteVariant::NoVce,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SuiteVariant::Full => "full",
            SuiteVariant::NoLabelElim => "no_label_elim",
            SuiteVariant::NoContextElim => "no_context_elim",
            SuiteVariant::NoGss => "no_gss",
            SuiteVariant::Rce => "rce",
            SuiteVariant::AllMask => "all_mask",
            SuiteVariant::RandomMask => "random_mask",
            SuiteVariant::NoAce => "no_ace",
            SuiteVariant::NoVce => "no_vce",
        }
    }

    fn search_mode(self) -> AblationMode {
        match self {
            SuiteVariant::NoLabelElim => AblationMode::NoLabelElim,
            SuiteVariant::NoContextElim => AblationMode::NoContextElim,
            SuiteVariant::NoGss => AblationMode::NoGss,
            _ => AblationMode::Full,
        }
    }
}

impl fmt::Display for SuiteVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: SuiteVariant,
    pub lambdas: LambdaPair,
    pub valid_f1: f64,
    pub test: MetricsReport,
    pub clean_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: SuiteVariant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<16}{:>8}{:>8}{:>10}{:>9}{:>9}{:>9}{:>9}{:>10}\n",
            "variant", "l_hat", "l_tilde", "valid_F1", "Acc-7", "Acc-2", "F1", "MAE", "clean_MAE"
        );
        for r in &self.rows {
            let clean = r
                .clean_mae
                .map_or_else(|| "-".to_string(), |c| format!("{c:.4}"));
            out.push_str(&format!(
                "{:<16}{:>8.2}{:>8.2}{:>10.4}{:>9.4}{:>9.4}{:>9.4}{:>9.4}{:>10}\n",
                r.variant.as_str(),
                r.lambdas.lambda_hat,
                r.lambdas.lambda_tilde,
                r.valid_f1,
                r.test.acc7,
                r.test.acc2,
                r.test.weighted_f1,
                r.test.mae,
                clean
            ));
        }
        out
    }
}

fn variant_intervention(
    variant: SuiteVariant,
    corpus: &Corpus,
    params: &ModelParams,
    seeds: &Seeds,
    suite: &SuiteConfig,
) -> Result<Intervention> {
    let cfe = match variant {
        SuiteVariant::Rce => random_counterfactual_embeddings(
            params.embed_dim(),
            params.audio_dim(),
            params.visual_dim(),
            seeds.rce,
        ),
        _ => compute_label_counterfactual(corpus, params)?,
    };
    let mut iv = Intervention::new(cfe);
    match variant {
        SuiteVariant::AllMask => iv.context.mask = MaskPolicy::AllMask,
        SuiteVariant::RandomMask => {
            iv.context.mask = MaskPolicy::RandomMask {
                p: suite.random_mask_p,
                seed: seeds.random_mask,
            }
        }
        SuiteVariant::NoAce => {
            iv.label = LabelTreatment {
                audio: false,
                ..LabelTreatment::default()
            };
            iv.context = ContextTreatment {
                audio: FeaturePolicy::Keep,
                ..ContextTreatment::default()
            };
        }
        SuiteVariant::NoVce => {
            iv.label = LabelTreatment {
                visual: false,
                ..LabelTreatment::default()
            };
            iv.context = ContextTreatment {
                visual: FeaturePolicy::Keep,
                ..ContextTreatment::default()
            };
        }
        _ => {}
    }
    Ok(iv)
}

/// Run the given variants on a trained model, one row each.
pub fn ablation_suite(
    corpus: &Corpus,
    params: &ModelParams,
    search: &SearchConfig,
    suite: &SuiteConfig,
    seeds: &Seeds,
    variants: &[SuiteVariant],
) -> Result<AblationTable> {
    params.check_corpus(corpus)?;
    let search = SearchConfig {
        exhaustive: false,
        ..*search
    };
    let rows = variants
        .iter()
        .map(|&variant| {
            let iv = variant_intervention(variant, corpus, params, seeds, suite)?;
            let valid = infer_split(corpus, params, &iv, Split::Valid)?;
            let test = infer_split(corpus, params, &iv, Split::Test)?;
            let outcome = grid_search(&valid.triples(), &search, variant.search_mode())?;
            let debiased = test.debias(outcome.lambdas).scores();
            let clean: Option<Vec<f64>> = debiased.clean.iter().copied().collect();
            Ok(AblationRow {
                variant,
                lambdas: outcome.lambdas,
                valid_f1: outcome.metric,
                test: evaluate(&debiased.scores, &debiased.golds, search.convention)?,
                clean_mae: clean.map(|c| mae(&debiased.scores, &c)).transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { rows })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub rng: String,
    pub config_sha256: String,
    pub seeds: Seeds,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn artifact(&self, name: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.name == name)
    }
}

struct ArtifactLog {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl ArtifactLog {
    fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    fn record(&mut self, name: &str, file: &str) -> Result<()> {
        let path = self.path(file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.artifacts.push(Artifact {
            name: name.to_string(),
            path: file.to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }
}

/// Generate, train, infer, calibrate, debias, report and optionally ablate,
/// writing every artifact under the configured output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Manifest> {
    config.validate().stage("config")?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir)
        .map_err(|e| Error::io(dir, e))
        .stage("config")?;
    let seeds = Seeds::derive(config.seed);
    let mut log = ArtifactLog {
        dir: dir.clone(),
        artifacts: Vec::new(),
    };

    // Stored relative to itself so the file does not depend on where it lives.
    let stored = ExperimentConfig {
        output_dir: PathBuf::from("."),
        ..config.clone()
    };
    write_json(log.path("config.json"), &stored).stage("config")?;
    log.record("config", "config.json").stage("config")?;

    let corpus = generate_corpus(&config.generator, seeds.corpus).stage("gen")?;
    save_corpus(&corpus, log.path("corpus.jsonl")).stage("gen")?;
    log.record("corpus", "corpus.jsonl").stage("gen")?;

    let stats = corpus_stats(&corpus).stage("stats")?;
    write_json(log.path("stats.json"), &stats).stage("stats")?;
    log.record("stats", "stats.json").stage("stats")?;

    let train_config = TrainConfig {
        seed: seeds.train,
        ..config.train.clone()
    };
    let params = train(&corpus, &train_config).stage("train")?;
    save_checkpoint(&params, log.path("model.json")).stage("train")?;
    log.record("checkpoint", "model.json").stage("train")?;

    let (valid, test) = infer(&corpus, &params).stage("infer")?;
    save_predictions(&valid, log.path("preds_valid.jsonl")).stage("infer")?;
    log.record("preds_valid", "preds_valid.jsonl")
        .stage("infer")?;
    save_predictions(&test, log.path("preds_test.jsonl")).stage("infer")?;
    log.record("preds_test", "preds_test.jsonl")
        .stage("infer")?;

    let outcome = grid_search(&valid.triples(), &config.search, config.mode).stage("calibrate")?;
    let lambdas = LambdasFile::from((&outcome, config.search.convention));
    write_json(log.path("lambdas.json"), &lambdas).stage("calibrate")?;
    log.record("lambdas", "lambdas.json").stage("calibrate")?;
    write_trace_csv(log.path("trace.csv"), &outcome).stage("calibrate")?;
    log.record("trace", "trace.csv").stage("calibrate")?;

    let debiased = test.debias(outcome.lambdas);
    save_debiased(&debiased, log.path("debiased_test.jsonl")).stage("debias")?;
    log.record("debiased_test", "debiased_test.jsonl")
        .stage("debias")?;

    let (vanilla_col, debiased_col) = (test.scores(), debiased.scores());
    let report =
        build_report(&vanilla_col, &debiased_col, config.search.convention).stage("report")?;
    write_json(log.path("report.json"), &report).stage("report")?;
    log.record("report", "report.json").stage("report")?;
    fs::write(log.path("report.txt"), report.to_table())
        .map_err(|e| Error::io(log.path("report.txt"), e))
        .stage("report")?;
    log.record("report_table", "report.txt").stage("report")?;
    write_scores_csv(log.path("scores.csv"), &vanilla_col, &debiased_col).stage("report")?;
    log.record("scores", "scores.csv").stage("report")?;

    if config.ablation.enabled {
        let table = ablation_suite(
            &corpus,
            &params,
            &config.search,
            &config.ablation,
            &seeds,
            &SuiteVariant::ALL,
        )
        .stage("ablate")?;
        write_json(log.path("ablation.json"), &table).stage("ablate")?;
        log.record("ablation", "ablation.json").stage("ablate")?;
        fs::write(log.path("ablation.txt"), table.to_table())
            .map_err(|e| Error::io(log.path("ablation.txt"), e))
            .stage("ablate")?;
        log.record("ablation_table", "ablation.txt")
            .stage("ablate")?;
    }

    let manifest = Manifest {
        tool: TOOL_NAME.to_string(),
        version: TOOL_VERSION.to_string(),
        rng: RNG_ALGORITHM.to_string(),
        config_sha256: config.hash().stage("manifest")?,
        seeds,
        artifacts: log.artifacts,
    };
    write_json(dir.join("manifest.json"), &manifest).stage("manifest")?;
    Ok(manifest)
}
