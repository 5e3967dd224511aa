use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const INDIVIDUAL: &str = "Individual";

pub fn transfer_name(teacher: &str) -> String {
    format!("Transfer({teacher})")
}

/// One evaluated system on one seed, or a median over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub system: String,
    pub pair: String,
    pub bleu: f64,
    pub dev_ppl: f64,
    /// `None` marks an aggregate row.
    pub seed: Option<u64>,
    /// Run directory the row came from, relative to the experiment root.
    pub run_dir: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

impl ResultsTable {
    pub fn push(&mut self, row: ResultRow) {
        self.rows.push(row);
    }

    /// Systems in order of first appearance.
    pub fn systems(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.system) {
                out.push(r.system.clone());
            }
        }
        out
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut out: Vec<u64> = Vec::new();
        for s in self.rows.iter().filter_map(|r| r.seed) {
            if !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }

    pub fn seed_rows<'a>(&'a self, system: &'a str) -> impl Iterator<Item = &'a ResultRow> {
        self.rows.iter().filter(move |r| r.system == system && r.seed.is_some())
    }

    pub fn median_bleu(&self, system: &str) -> f64 {
        median(&self.seed_rows(system).map(|r| r.bleu).collect::<Vec<_>>())
    }

    /// Per-seed rows plus one median row per system.
    pub fn with_medians(&self) -> Self {
        let mut out = ResultsTable {
            rows: self.rows.iter().filter(|r| r.seed.is_some()).cloned().collect(),
        };
        for system in self.systems() {
            let rows: Vec<&ResultRow> = self.seed_rows(&system).collect();
            if rows.is_empty() {
                continue;
            }
            out.rows.push(ResultRow {
                system: system.clone(),
                pair: rows[0].pair.clone(),
                bleu: median(&rows.iter().map(|r| r.bleu).collect::<Vec<_>>()),
                dev_ppl: median(&rows.iter().map(|r| r.dev_ppl).collect::<Vec<_>>()),
                seed: None,
                run_dir: String::new(),
            });
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("system,pair,bleu,dev_ppl,seed,run_dir\n");
        for r in &self.rows {
            let seed = r.seed.map_or_else(|| "median".to_string(), |s| s.to_string());
            let _ = writeln!(s, "{},{},{},{},{},{}", r.system, r.pair, r.bleu, r.dev_ppl, seed, r.run_dir);
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let bad = |n: usize| crate::error::HarnessError::Data(format!("results line {}: malformed", n + 1));
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 6 {
                return Err(bad(n));
            }
            rows.push(ResultRow {
                system: c[0].into(),
                pair: c[1].into(),
                bleu: c[2].parse().map_err(|_| bad(n))?,
                dev_ppl: c[3].parse().map_err(|_| bad(n))?,
                seed: if c[4] == "median" {
                    None
                } else {
                    Some(c[4].parse().map_err(|_| bad(n))?)
                },
                run_dir: c[5].into(),
            });
        }
        Ok(Self { rows })
    }

    /// Test BLEU pivoted to one line per seed and one column per system,
    /// closed by any median rows.
    pub fn to_text(&self) -> String {
        let systems = self.systems();
        let pair = self.rows.first().map(|r| r.pair.as_str()).unwrap_or("");
        let mut lines: Vec<Vec<String>> = vec![std::iter::once(format!("BLEU {pair}")).chain(systems.iter().cloned()).collect()];
        let cell = |seed: Option<u64>, system: &str| {
            self.rows
                .iter()
                .find(|r| r.seed == seed && r.system == system)
                .map_or_else(|| "-".to_string(), |r| format!("{:.2}", r.bleu))
        };
        for seed in self.seeds() {
            lines.push(
                std::iter::once(format!("seed {seed}"))
                    .chain(systems.iter().map(|s| cell(Some(seed), s)))
                    .collect(),
            );
        }
        if self.rows.iter().any(|r| r.seed.is_none()) {
            lines.push(
                std::iter::once("median".to_string())
                    .chain(systems.iter().map(|s| cell(None, s)))
                    .collect(),
            );
        }
        let widths: Vec<usize> = (0..=systems.len())
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, l) in lines.iter().enumerate() {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        out
    }

    /// Writes `results.csv` and `results.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("results.csv"), self.to_csv())?;
        fs::write(dir.join("results.txt"), self.to_text())?;
        Ok(())
    }
}
