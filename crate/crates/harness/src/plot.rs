use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use akd_core::distillation::WeightTrace;

use crate::error::{HarnessError, Result};

/// Iterations kept in the early-training slice.
pub const FIRST_ITERATIONS: usize = 30;
pub const TRACE_DIR: &str = "traces";

/// One teacher's weights at one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotRow {
    pub iteration: usize,
    pub teacher: String,
    pub weight_raw: f64,
    pub weight_smoothed: f64,
}

fn teacher_names(trace: &WeightTrace, names: &[String]) -> Vec<String> {
    (0..trace.num_teachers)
        .map(|i| names.get(i).cloned().unwrap_or_else(|| format!("teacher_{i}")))
        .collect()
}

/// Reshapes a weight trace to one row per (iteration, teacher).
pub fn long_format(trace: &WeightTrace, names: &[String]) -> Vec<PlotRow> {
    let names = teacher_names(trace, names);
    trace
        .rows
        .iter()
        .flat_map(|r| {
            names.iter().enumerate().map(move |(i, n)| PlotRow {
                iteration: r.step,
                teacher: n.clone(),
                weight_raw: r.raw[i],
                weight_smoothed: r.smoothed[i],
            })
        })
        .collect()
}

pub fn to_csv(rows: &[PlotRow]) -> String {
    let mut s = String::from("iteration,teacher,weight_raw,weight_smoothed\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.iteration, r.teacher, r.weight_raw, r.weight_smoothed);
    }
    s
}

/// Files written for one trace.
#[derive(Clone, Debug)]
pub struct PlotFiles {
    pub long: PathBuf,
    pub first: PathBuf,
}

/// Writes `<stem>.long.csv` and the `<stem>.first30.csv` slice into `dir`.
pub fn write_plot_data(trace: &WeightTrace, names: &[String], dir: &Path, stem: &str) -> Result<PlotFiles> {
    fs::create_dir_all(dir)?;
    let rows = long_format(trace, names);
    let first_len = FIRST_ITERATIONS.min(trace.rows.len()) * trace.num_teachers;
    let files = PlotFiles {
        long: dir.join(format!("{stem}.long.csv")),
        first: dir.join(format!("{stem}.first{FIRST_ITERATIONS}.csv")),
    };
    fs::write(&files.long, to_csv(&rows))?;
    fs::write(&files.first, to_csv(&rows[..first_len]))?;
    Ok(files)
}

/// Teacher names stored next to a trace, one per line.
pub fn names_path(trace: &Path) -> PathBuf {
    trace.with_extension("teachers")
}

fn is_raw_trace(p: &Path) -> bool {
    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
    name.ends_with(".csv") && name.matches('.').count() == 1
}

/// Weight traces of a run directory, or the single file given.
pub fn find_traces(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let dir = path.join(TRACE_DIR);
    let mut found: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_raw_trace(p))
            .collect(),
        Err(_) => Vec::new(),
    };
    found.sort();
    if found.is_empty() {
        return Err(HarnessError::Data(format!("no weight trace under {}", path.display())));
    }
    Ok(found)
}

/// Converts every trace of a run into plot-ready CSV in `out`.
pub fn trace_plot_data(run: &Path, out: &Path) -> Result<Vec<PlotFiles>> {
    find_traces(run)?
        .iter()
        .map(|t| {
            let trace = WeightTrace::read(t)?;
            let names: Vec<String> = fs::read_to_string(names_path(t))
                .map(|s| s.lines().map(str::to_string).collect())
                .unwrap_or_default();
            let stem = t.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
            write_plot_data(&trace, &names, out, stem)
        })
        .collect()
}
