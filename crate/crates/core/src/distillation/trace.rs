use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::weights::ContributionWeights;
use crate::error::{Error, Result};

/// One mini-batch worth of contribution-weight bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    /// 1-based optimizer step.
    pub step: usize,
    /// Position of the batch within its epoch.
    pub batch_id: usize,
    pub perplexities: Vec<f64>,
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub tau: f64,
    pub lambda2: f64,
}

impl TraceRow {
    pub fn new(step: usize, batch_id: usize, w: &ContributionWeights, lambda2: f64) -> Self {
        Self {
            step,
            batch_id,
            perplexities: w.perplexities.clone(),
            raw: w.raw.clone(),
            smoothed: w.smoothed.clone(),
            tau: w.temperature,
            lambda2,
        }
    }
}

/// Weight trace of a distillation run, one row per mini-batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightTrace {
    pub num_teachers: usize,
    pub rows: Vec<TraceRow>,
}

impl WeightTrace {
    pub fn new(num_teachers: usize) -> Self {
        Self {
            num_teachers,
            rows: Vec::new(),
        }
    }

    pub fn header(num_teachers: usize) -> String {
        let mut cols = vec!["step".to_string(), "batch_id".to_string()];
        cols.extend((0..num_teachers).map(|i| format!("teacher_{i}_ppl")));
        cols.extend((0..num_teachers).map(|i| format!("alpha_raw_{i}")));
        cols.extend((0..num_teachers).map(|i| format!("alpha_smoothed_{i}")));
        cols.push("tau".into());
        cols.push("lambda2".into());
        cols.join(",")
    }

    pub fn push(&mut self, row: TraceRow) {
        debug_assert_eq!(row.raw.len(), self.num_teachers);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::header(self.num_teachers);
        out.push('\n');
        for r in &self.rows {
            let mut cells = vec![r.step.to_string(), r.batch_id.to_string()];
            cells.extend(r.perplexities.iter().chain(&r.raw).chain(&r.smoothed).map(f64::to_string));
            cells.push(r.tau.to_string());
            cells.push(r.lambda2.to_string());
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(self.to_csv().as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Data("empty weight trace".into()))?;
        let cols = header.split(',').count();
        if cols < 5 || (cols - 4) % 3 != 0 {
            return Err(Error::Data(format!("unexpected weight trace header {header:?}")));
        }
        let l = (cols - 4) / 3;
        if header != Self::header(l) {
            return Err(Error::Data(format!("unexpected weight trace header {header:?}")));
        }
        let mut trace = Self::new(l);
        for (n, line) in lines.enumerate() {
            let bad = |what: &str| Error::Data(format!("weight trace line {}: {what}", n + 2));
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != cols {
                return Err(bad(&format!("{} columns, expected {cols}", cells.len())));
            }
            let step = cells[0].parse().map_err(|_| bad("bad step"))?;
            let batch_id = cells[1].parse().map_err(|_| bad("bad batch_id"))?;
            let nums = cells[2..]
                .iter()
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("bad number"))?;
            trace.rows.push(TraceRow {
                step,
                batch_id,
                perplexities: nums[..l].to_vec(),
                raw: nums[l..2 * l].to_vec(),
                smoothed: nums[2 * l..3 * l].to_vec(),
                tau: nums[3 * l],
                lambda2: nums[3 * l + 1],
            });
        }
        Ok(trace)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Mean smoothed weight of each teacher over all rows.
    pub fn mean_smoothed(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.num_teachers];
        for r in &self.rows {
            for (a, w) in m.iter_mut().zip(&r.smoothed) {
                *a += w;
            }
        }
        let n = self.rows.len().max(1) as f64;
        m.iter().map(|a| a / n).collect()
    }
}
