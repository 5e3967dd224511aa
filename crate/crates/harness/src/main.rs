use std::path::{Path, PathBuf};
use std::process::ExitCode;

use akd_core::distillation::{ContributionMode, TemperatureMode};
use akd_core::model::Seq2SeqModel;
use akd_core::training::{evaluate_bleu, evaluate_perplexity};
use akd_harness::config::{Ablation, ExperimentConfig};
use akd_harness::data::{gen_data, load_data_dir, DataSet};
use akd_harness::error::{exit, HarnessError, Result};
use akd_harness::pipeline::{
    distill_stage, finetune_stage, individual_stage, run_dir, run_pipeline, threads_from_env, train_teacher_stage,
    Layout,
};
use akd_harness::plot::trace_plot_data;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "akd", version, about = "Transfer learning and adaptive multi-teacher distillation")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Teacher contribution: adaptive or equal.
    #[arg(long, global = true)]
    contribution: Option<ContributionMode>,
    /// Weight temperature: adaptive, none or fixed=<τ>.
    #[arg(long, global = true)]
    temperature: Option<TemperatureMode>,
    /// Use each mini-batch's raw weights without smoothing.
    #[arg(long, global = true)]
    no_smoothing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write corpora and the shared vocabulary.
    GenData,
    /// Train a teacher on one language pair.
    TrainTeacher {
        #[arg(long)]
        language: String,
        /// Directory written by gen-data. Defaults to the run's data dir.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Fine-tune a trained teacher on the low-resource pair.
    Finetune {
        /// Language the teacher was trained on.
        #[arg(long)]
        language: String,
        /// Teacher checkpoint. Defaults to the run's teacher for `language`.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the no-teacher baseline, or distill a student from fine-tuned teachers.
    Distill {
        /// Teacher languages whose fine-tuned models to use. Empty trains the baseline.
        #[arg(long, value_delimiter = ',')]
        teachers: Vec<String>,
        /// Name of the student in the run directory.
        #[arg(long, default_value = "student")]
        name: String,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Report test BLEU and perplexity of a checkpoint on the low-resource pair.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run every stage for every seed and write the result tables.
    Pipeline,
    /// Reshape weight traces into plot-ready CSV.
    Trace {
        /// Run directory or a single trace CSV.
        #[arg(long)]
        run: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<(ExperimentConfig, String)> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| HarnessError::Config("--config is required for this command".into()))?;
    ExperimentConfig::load(path)
}

fn ablation(cli: &Cli) -> Ablation {
    Ablation {
        contribution: cli.contribution,
        temperature: cli.temperature,
        no_smoothing: cli.no_smoothing,
    }
}

fn seed(cli: &Cli, cfg: &ExperimentConfig) -> u64 {
    cli.seed.unwrap_or(cfg.seeds[0])
}

fn layout(cli: &Cli, cfg: &ExperimentConfig) -> Result<Layout> {
    Ok(Layout::new(match &cli.out {
        Some(o) => o.clone(),
        None => run_dir(cfg, seed(cli, cfg))?,
    }))
}

fn data(cfg: &ExperimentConfig, layout: &Layout, dir: &Option<PathBuf>) -> Result<DataSet> {
    let dir = dir.clone().unwrap_or_else(|| layout.data());
    load_data_dir(&dir, &cfg.languages(), cfg.data.ratio_filter)
}

fn load_model(path: &Path, data: &DataSet) -> Result<Seq2SeqModel> {
    Ok(Seq2SeqModel::load_for_vocab(path, &data.vocab)?)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Trace { run } => {
            let out = cli.out.clone().unwrap_or_else(|| {
                if run.is_dir() {
                    run.join(akd_harness::plot::TRACE_DIR)
                } else {
                    run.parent().map(Path::to_path_buf).unwrap_or_default()
                }
            });
            for f in trace_plot_data(run, &out)? {
                println!("{}\n{}", f.long.display(), f.first.display());
            }
            return Ok(());
        }
        Command::Pipeline => {
            let (mut cfg, text) = load_config(cli)?;
            ablation(cli).apply(&mut cfg.distill);
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            if let Some(o) = &cli.out {
                cfg.out_dir = o.clone();
            }
            cfg.validate()?;
            let table = run_pipeline(&cfg, &text, threads_from_env())?;
            print!("{}", table.to_text());
            return Ok(());
        }
        _ => {}
    }

    let (cfg, _) = load_config(cli)?;
    let layout = layout(cli, &cfg)?;
    let seed = seed(cli, &cfg);
    match &cli.command {
        Command::GenData => {
            let data = gen_data(&cfg, seed, &layout.data())?;
            println!("{} ({} tokens)", layout.data().display(), data.vocab.len());
        }
        Command::TrainTeacher { language, data: dir } => {
            let data = data(&cfg, &layout, dir)?;
            let out = train_teacher_stage(&cfg, &data, language, seed, &layout)?;
            println!("{} dev_ppl={:.4}", layout.model("teacher", language).display(), out.best_dev_ppl);
        }
        Command::Finetune {
            language,
            teacher,
            data: dir,
        } => {
            let data = data(&cfg, &layout, dir)?;
            let path = teacher.clone().unwrap_or_else(|| layout.model("teacher", language));
            let teacher = load_model(&path, &data)?;
            let out = finetune_stage(&cfg, &data, &teacher, language, seed, &layout)?;
            println!("{} dev_ppl={:.4}", layout.model("transfer", language).display(), out.best_dev_ppl);
        }
        Command::Distill {
            teachers,
            name,
            data: dir,
        } => {
            let data = data(&cfg, &layout, dir)?;
            if teachers.is_empty() {
                let out = individual_stage(&cfg, &data, seed, &layout)?;
                println!("{} dev_ppl={:.4}", layout.model("individual", "baseline").display(), out.best_dev_ppl);
                return Ok(());
            }
            let mut dcfg = cfg.distill.clone();
            ablation(cli).apply(&mut dcfg);
            dcfg.validate()?;
            let models = teachers
                .iter()
                .map(|t| load_model(&layout.model("transfer", t), &data))
                .collect::<Result<Vec<_>>>()?;
            let out = distill_stage(&cfg, &data, name, models, teachers, &dcfg, seed, threads_from_env(), &layout)?;
            println!(
                "{} dev_ppl={:.4} trace={}",
                layout.model("student", name).display(),
                out.train.best_dev_ppl,
                layout.trace(name).display()
            );
        }
        Command::Evaluate { model, split, data: dir } => {
            let data = data(&cfg, &layout, dir)?;
            let lr = data.language(&cfg.data.low_resource)?;
            let corpus = match split.as_str() {
                "train" => &lr.train,
                "dev" => &lr.dev,
                "test" => &lr.test,
                other => return Err(HarnessError::Config(format!("unknown split {other:?}"))),
            };
            let m = load_model(model, &data)?;
            let report = serde_json::json!({
                "model": model.display().to_string(),
                "split": split,
                "bleu": evaluate_bleu(&m, corpus)?,
                "ppl": evaluate_perplexity(&m, corpus)?,
            });
            println!("{report}");
        }
        Command::Pipeline | Command::Trace { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::from(exit::SUCCESS as u8),
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(stage) = e.failed_stage() {
                eprintln!("failed stage: {stage}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
