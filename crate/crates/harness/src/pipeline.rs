use std::fs;
use std::path::{Path, PathBuf};

use akd_core::distillation::{DistillConfig, TeacherEnsemble};
use akd_core::model::{ModelConfig, Seq2SeqModel};
use akd_core::training::{
    distill_train, evaluate_bleu, evaluate_perplexity, finetune, train_teacher, DistillOutcome, RunFiles,
    TrainConfig, TrainOutcome,
};
use log::info;

use crate::config::{ExperimentConfig, SystemConfig};
use crate::data::{gen_data, DataSet, LanguageData};
use crate::error::{HarnessError, Result};
use crate::plot::{names_path, write_plot_data, TRACE_DIR};
use crate::results::{transfer_name, ResultRow, ResultsTable, INDIVIDUAL};

pub const CONFIG_COPY: &str = "config.toml";
pub const RESOLVED_CONFIG: &str = "resolved.toml";

/// File layout of one run directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn model(&self, kind: &str, name: &str) -> PathBuf {
        self.root.join("models").join(format!("{kind}-{name}.bin"))
    }

    pub fn log(&self, kind: &str, name: &str) -> PathBuf {
        self.root.join("logs").join(format!("{kind}-{name}.jsonl"))
    }

    pub fn trace(&self, system: &str) -> PathBuf {
        self.root.join(TRACE_DIR).join(format!("{system}.csv"))
    }

    fn files(&self, kind: &str, name: &str) -> Result<RunFiles> {
        fs::create_dir_all(self.root.join("models"))?;
        fs::create_dir_all(self.root.join("logs"))?;
        Ok(RunFiles {
            log: Some(self.log(kind, name)),
            trace: None,
            last_good: Some(self.root.join("models").join(format!("{kind}-{name}.last_good.bin"))),
        })
    }
}

/// Directory shared by every seed of `cfg`.
pub fn experiment_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    Ok(cfg.out_dir.join(cfg.hash()?))
}

pub fn run_dir(cfg: &ExperimentConfig, seed: u64) -> Result<PathBuf> {
    Ok(experiment_dir(cfg)?.join(format!("seed-{seed}")))
}

fn with_seed(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..cfg.clone() }
}

/// Trains the teacher for `lang` from scratch and saves it.
pub fn train_teacher_stage(
    cfg: &ExperimentConfig,
    data: &DataSet,
    lang: &str,
    seed: u64,
    layout: &Layout,
) -> Result<TrainOutcome> {
    let l = data.language(lang)?;
    let model_config = cfg.model.with_vocab(data.vocab.len());
    let out = train_teacher(
        &with_seed(&cfg.teacher_train, seed),
        &model_config,
        &l.train,
        &l.dev,
        &layout.files("teacher", lang)?,
    )?;
    out.model.save(&layout.model("teacher", lang))?;
    info!("teacher {lang}: best dev ppl {:.3} at epoch {}", out.best_dev_ppl, out.best_epoch);
    Ok(out)
}

/// Fine-tunes `teacher` (trained on `teacher_lang`) on the low-resource pair and saves it.
pub fn finetune_stage(
    cfg: &ExperimentConfig,
    data: &DataSet,
    teacher: &Seq2SeqModel,
    teacher_lang: &str,
    seed: u64,
    layout: &Layout,
) -> Result<TrainOutcome> {
    let lr = data.language(&cfg.data.low_resource)?;
    let out = finetune(
        teacher,
        &lr.train,
        &lr.dev,
        &with_seed(&cfg.finetune, seed),
        &layout.files("transfer", teacher_lang)?,
    )?;
    out.model.save(&layout.model("transfer", teacher_lang))?;
    info!("transfer {teacher_lang}: best dev ppl {:.3}", out.best_dev_ppl);
    Ok(out)
}

/// Trains the no-teacher baseline on the low-resource pair.
pub fn individual_stage(cfg: &ExperimentConfig, data: &DataSet, seed: u64, layout: &Layout) -> Result<TrainOutcome> {
    let lr = data.language(&cfg.data.low_resource)?;
    let out = train_teacher(
        &with_seed(&cfg.student, seed),
        &cfg.model.with_vocab(data.vocab.len()),
        &lr.train,
        &lr.dev,
        &layout.files("individual", "baseline")?,
    )?;
    out.model.save(&layout.model("individual", "baseline"))?;
    Ok(out)
}

/// Distills a student from `teachers` under `dcfg`, saving the model,
/// the weight trace and its plot data.
#[allow(clippy::too_many_arguments)]
pub fn distill_stage(
    cfg: &ExperimentConfig,
    data: &DataSet,
    system: &str,
    teachers: Vec<Seq2SeqModel>,
    teacher_names: &[String],
    dcfg: &DistillConfig,
    seed: u64,
    threads: usize,
    layout: &Layout,
) -> Result<DistillOutcome> {
    let lr = data.language(&cfg.data.low_resource)?;
    let mut ensemble = TeacherEnsemble::new(teachers, dcfg)?;
    ensemble.set_threads(threads);
    let trace_path = layout.trace(system);
    fs::create_dir_all(trace_path.parent().expect("trace path has a parent"))?;
    let files = RunFiles {
        trace: Some(trace_path.clone()),
        ..layout.files("student", system)?
    };
    let model_config: ModelConfig = cfg.model.with_vocab(data.vocab.len());
    let out = distill_train(
        &model_config,
        &lr.train,
        &lr.dev,
        &mut ensemble,
        dcfg,
        &with_seed(&cfg.student, seed),
        &files,
    )?;
    out.train.model.save(&layout.model("student", system))?;
    fs::write(names_path(&trace_path), teacher_names.join("\n") + "\n")?;
    write_plot_data(&out.trace, teacher_names, &layout.root.join(TRACE_DIR), system)?;
    info!("student {system}: best dev ppl {:.3}", out.train.best_dev_ppl);
    Ok(out)
}

fn result_row(
    cfg: &ExperimentConfig,
    system: &str,
    model: &Seq2SeqModel,
    lr: &LanguageData,
    seed: u64,
    rel_dir: &str,
) -> Result<ResultRow> {
    Ok(ResultRow {
        system: system.to_string(),
        pair: format!("{}-{}", cfg.data.low_resource, cfg.data.target),
        bleu: evaluate_bleu(model, &lr.test)?,
        dev_ppl: evaluate_perplexity(model, &lr.dev)?,
        seed: Some(seed),
        run_dir: rel_dir.to_string(),
    })
}

/// Runs every stage for every seed of `cfg` and returns the results with
/// median rows. `config_text` is copied verbatim into each run directory.
/// Results are rewritten after every stage, so a failure leaves the rows
/// finished so far on disk.
pub fn run_pipeline(cfg: &ExperimentConfig, config_text: &str, threads: usize) -> Result<ResultsTable> {
    cfg.validate()?;
    let root = experiment_dir(cfg)?;
    fs::create_dir_all(&root)?;
    fs::write(root.join(CONFIG_COPY), config_text)?;
    fs::write(root.join(RESOLVED_CONFIG), cfg.to_toml()?)?;
    let mut table = ResultsTable::default();
    for &seed in &cfg.seeds {
        run_seed(cfg, config_text, seed, threads, &root, &mut table)?;
    }
    Ok(table.with_medians())
}

fn run_seed(
    cfg: &ExperimentConfig,
    config_text: &str,
    seed: u64,
    threads: usize,
    root: &Path,
    table: &mut ResultsTable,
) -> Result<()> {
    let rel = format!("seed-{seed}");
    let layout = Layout::new(root.join(&rel));
    fs::create_dir_all(&layout.root)?;
    fs::write(layout.root.join(CONFIG_COPY), config_text)?;
    let stage = |name: String| HarnessError::stage(format!("seed {seed}: {name}"));
    let record = |table: &mut ResultsTable, row: ResultRow| -> Result<()> {
        table.push(row);
        table.with_medians().write(root)
    };

    let data = gen_data(cfg, seed, &layout.data()).map_err(stage("gen-data".into()))?;
    let lr = data.language(&cfg.data.low_resource)?;

    let individual = individual_stage(cfg, &data, seed, &layout).map_err(stage("individual".into()))?;
    let row = result_row(cfg, INDIVIDUAL, &individual.model, lr, seed, &rel).map_err(stage("evaluate".into()))?;
    record(table, row)?;

    let mut transferred = Vec::with_capacity(cfg.teachers.len());
    for t in &cfg.teachers {
        let teacher =
            train_teacher_stage(cfg, &data, t, seed, &layout).map_err(stage(format!("train-teacher {t}")))?;
        let tuned =
            finetune_stage(cfg, &data, &teacher.model, t, seed, &layout).map_err(stage(format!("finetune {t}")))?;
        let row = result_row(cfg, &transfer_name(t), &tuned.model, lr, seed, &rel)
            .map_err(stage(format!("evaluate transfer {t}")))?;
        record(table, row)?;
        transferred.push((t.clone(), tuned.model));
    }

    for system in cfg.systems() {
        let out = distill_system(cfg, &data, &system, &transferred, seed, threads, &layout)
            .map_err(stage(format!("distill {}", system.name)))?;
        let row = result_row(cfg, &system.name, &out.train.model, lr, seed, &rel)
            .map_err(stage(format!("evaluate {}", system.name)))?;
        record(table, row)?;
    }
    Ok(())
}

fn distill_system(
    cfg: &ExperimentConfig,
    data: &DataSet,
    system: &SystemConfig,
    transferred: &[(String, Seq2SeqModel)],
    seed: u64,
    threads: usize,
    layout: &Layout,
) -> Result<DistillOutcome> {
    let dcfg = system.resolve(&cfg.distill)?;
    let names = cfg.system_teachers(system);
    let teachers: Vec<Seq2SeqModel> = names
        .iter()
        .map(|n| {
            transferred
                .iter()
                .find(|(t, _)| t == n)
                .map(|(_, m)| m.clone())
                .expect("validated teacher subset")
        })
        .collect();
    distill_stage(cfg, data, &system.name, teachers, &names, &dcfg, seed, threads, layout)
}

/// Worker threads requested through `AKD_THREADS`, default 1.
pub fn threads_from_env() -> usize {
    std::env::var("AKD_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or(1)
}
