use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use mcis_core::dataset::{
    corpus_stats, generate_corpus, load_corpus, save_corpus, BiasSpec, GeneratorConfig, Split,
};
use mcis_core::debias::{grid_search, AblationMode, LambdasFile, SearchConfig};
use mcis_core::error::StageContext;
use mcis_core::eval::Convention;
use mcis_core::experiment::{
    ablation_suite, build_report, infer, read_json, run_experiment, write_json, write_scores_csv,
    write_trace_csv, ExperimentConfig, Seeds, SuiteVariant,
};
use mcis_core::model::{load_checkpoint, save_checkpoint, train, TrainConfig};
use mcis_core::predictions::{
    load_debiased, load_predictions, load_scores, save_debiased, save_predictions,
};

#[derive(Parser)]
#[command(
    name = "mcis",
    version,
    about = "Counterfactual label and context debiasing for multimodal sentiment scores"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted biases.
    Gen {
        /// Generator config or bare bias spec (JSON). Defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Summarize label, context-word and content-ratio statistics.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the fusion regressor.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score one split with factual and counterfactual inputs.
    Infer {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = Split::Test)]
        split: Split,
    },
    /// Search elimination weights on validation predictions.
    Calibrate {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long, num_args = 2, value_names = ["ALPHA", "BETA"], allow_negative_numbers = true)]
        interval: Option<Vec<f64>>,
        #[arg(long)]
        coarse: Option<f64>,
        #[arg(long)]
        fine: Option<f64>,
        #[arg(long)]
        fine_radius: Option<f64>,
        /// Also search the full fine lattice and report the gap.
        #[arg(long)]
        exhaustive: bool,
        #[arg(long, default_value_t = AblationMode::Full)]
        mode: AblationMode,
        #[arg(long, default_value_t = Convention::default())]
        convention: Convention,
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV of every evaluated cell.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Apply calibrated weights to a prediction file.
    Debias {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        lambdas: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare vanilla and debiased scores.
    Report {
        #[arg(long)]
        vanilla: PathBuf,
        #[arg(long)]
        debiased: PathBuf,
        #[arg(long, default_value_t = Convention::default())]
        convention: Convention,
        #[arg(long)]
        out: PathBuf,
        /// Per-sample CSV; defaults to scores.csv next to the report.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Run the ablation variants on a trained model.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Experiment config supplying search settings and the root seed.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline from an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the output directory in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_generator_config(path: &Path) -> anyhow::Result<GeneratorConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(cfg) = serde_json::from_str::<GeneratorConfig>(&text) {
        return Ok(cfg);
    }
    let bias_spec: BiasSpec = serde_json::from_str(&text).with_context(|| {
        format!(
            "{} is neither a generator config nor a bias spec",
            path.display()
        )
    })?;
    Ok(GeneratorConfig {
        bias_spec,
        ..GeneratorConfig::default()
    })
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Gen { spec, out, seed } => {
            let cfg = match spec {
                Some(p) => load_generator_config(&p).context("gen stage failed")?,
                None => GeneratorConfig::default(),
            };
            let corpus = generate_corpus(&cfg, seed).stage("gen")?;
            ensure_parent(&out)?;
            save_corpus(&corpus, &out).stage("gen")?;
            println!(
                "wrote {} utterances ({} train, {} valid, {} test) to {}",
                corpus.len(),
                corpus.train.len(),
                corpus.valid.len(),
                corpus.test.len(),
                out.display()
            );
        }
        Command::Stats { corpus, out } => {
            let corpus = load_corpus(&corpus).stage("stats")?;
            let stats = corpus_stats(&corpus).stage("stats")?;
            println!("content-token ratio {:.4}", stats.content_token_ratio);
            for (name, s) in [
                ("train", &stats.train),
                ("valid", &stats.valid),
                ("test", &stats.test),
            ] {
                println!(
                    "{name:<6} n={:<6} positive fraction {:.4}  classes -3..3 {:?}",
                    s.n, s.positive_fraction, s.label_histogram
                );
            }
            if let Some(out) = out {
                ensure_parent(&out)?;
                write_json(&out, &stats).stage("stats")?;
            }
        }
        Command::Train {
            corpus,
            config,
            out,
            seed,
        } => {
            let corpus = load_corpus(&corpus).stage("train")?;
            let mut cfg: TrainConfig = match config {
                Some(p) => read_json(&p).stage("train")?,
                None => TrainConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let params = train(&corpus, &cfg).stage("train")?;
            ensure_parent(&out)?;
            save_checkpoint(&params, &out).stage("train")?;
            if let Some(mae) = params.train_mae {
                println!("final train MAE {mae:.4}");
            }
        }
        Command::Infer {
            corpus,
            ckpt,
            out,
            split,
        } => {
            let corpus = load_corpus(&corpus).stage("infer")?;
            let params = load_checkpoint(&ckpt).stage("infer")?;
            let (valid, test) = infer(&corpus, &params).stage("infer")?;
            let set = match split {
                Split::Valid => valid,
                Split::Test => test,
                Split::Train => {
                    bail!("infer stage failed: predictions are written for valid or test only")
                }
            };
            ensure_parent(&out)?;
            save_predictions(&set, &out).stage("infer")?;
            match set.label_cf {
                Some(v) => println!("{} records, label-bias outcome {v:.6}", set.records.len()),
                None => println!("{} records", set.records.len()),
            }
        }
        Command::Calibrate {
            preds,
            interval,
            coarse,
            fine,
            fine_radius,
            exhaustive,
            mode,
            convention,
            out,
            trace,
        } => {
            let defaults = SearchConfig::default();
            let config = SearchConfig {
                interval: interval.map_or(defaults.interval, |v| (v[0], v[1])),
                coarse_step: coarse.unwrap_or(defaults.coarse_step),
                fine_step: fine.unwrap_or(defaults.fine_step),
                fine_radius,
                convention,
                exhaustive,
            };
            let set = load_predictions(&preds).stage("calibrate")?;
            let outcome = grid_search(&set.triples(), &config, mode).stage("calibrate")?;
            ensure_parent(&out)?;
            write_json(&out, &LambdasFile::from((&outcome, convention))).stage("calibrate")?;
            if let Some(trace) = trace {
                write_trace_csv(&trace, &outcome).stage("calibrate")?;
            }
            println!(
                "lambdas {} validation F1 {:.4} over {} cells",
                outcome.lambdas,
                outcome.metric,
                outcome.trace.len()
            );
            if let Some(ex) = outcome.exhaustive {
                println!(
                    "exhaustive best {} F1 {:.4} over {} cells, gap {:.4}",
                    ex.lambdas, ex.metric, ex.cells, ex.gap
                );
            }
        }
        Command::Debias {
            preds,
            lambdas,
            out,
        } => {
            let set = load_predictions(&preds).stage("debias")?;
            let lambdas: LambdasFile = read_json(&lambdas).stage("debias")?;
            ensure_parent(&out)?;
            save_debiased(&set.debias(lambdas.lambdas()), &out).stage("debias")?;
            println!(
                "debiased {} records with {}",
                set.records.len(),
                lambdas.lambdas()
            );
        }
        Command::Report {
            vanilla,
            debiased,
            convention,
            out,
            scores,
        } => {
            let v = load_scores(&vanilla).stage("report")?;
            let d = load_debiased(&debiased).stage("report")?.scores();
            let report = build_report(&v, &d, convention).stage("report")?;
            ensure_parent(&out)?;
            write_json(&out, &report).stage("report")?;
            let scores = scores.unwrap_or_else(|| out.with_file_name("scores.csv"));
            write_scores_csv(&scores, &v, &d).stage("report")?;
            print!("{}", report.to_table());
        }
        Command::Ablate {
            corpus,
            ckpt,
            config,
            out,
        } => {
            let exp = match config {
                Some(p) => ExperimentConfig::load(&p).stage("ablate")?,
                None => ExperimentConfig::default(),
            };
            let corpus = load_corpus(&corpus).stage("ablate")?;
            let params = load_checkpoint(&ckpt).stage("ablate")?;
            let table = ablation_suite(
                &corpus,
                &params,
                &exp.search,
                &exp.ablation,
                &Seeds::derive(exp.seed),
                &SuiteVariant::ALL,
            )
            .stage("ablate")?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_json(out.join("ablation.json"), &table).stage("ablate")?;
            let text = table.to_table();
            fs::write(out.join("ablation.txt"), &text)
                .with_context(|| format!("writing {}", out.display()))?;
            print!("{text}");
        }
        Command::Run { config, out } => {
            let mut cfg = ExperimentConfig::load(&config).stage("config")?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let manifest = run_experiment(&cfg)?;
            println!(
                "wrote {} artifacts to {} (config {})",
                manifest.artifacts.len(),
                cfg.output_dir.display(),
                &manifest.config_sha256[..12]
            );
            if let Ok(table) = fs::read_to_string(cfg.output_dir.join("report.txt")) {
                print!("{table}");
            }
        }
    }
    Ok(())
}
