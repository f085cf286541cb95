//! Experiment plans: timed runs over task x budget x mode x frequency x
//! split, averaged over repeats, with per-cell step CSVs, a summary CSV and
//! a text report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{run_repeated, InSituConfig, Mode, RunRecord};
use crate::error::{Error, Result};
use crate::proxysim::MeshConfig;
use crate::tasks::TaskConfig;

fn default_repeats() -> usize {
    3
}
fn default_steps() -> u64 {
    200
}
fn default_warmup() -> u64 {
    10
}
fn default_frequencies() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Replaces `mesh.seed`.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_steps")]
    pub total_steps: u64,
    #[serde(default = "default_warmup")]
    pub warmup_steps: u64,
    #[serde(default)]
    pub mesh: MeshConfig,
    pub worker_budgets: Vec<usize>,
    pub modes: Vec<Mode>,
    /// Candidate `p_insitu` per budget; divisors of `N` up to `N / 2` when
    /// a budget has no entry.
    #[serde(default)]
    pub splits: BTreeMap<usize, Vec<usize>>,
    #[serde(default = "default_frequencies")]
    pub frequencies: Vec<u64>,
    pub tasks: Vec<TaskConfig>,
    #[serde(default)]
    pub async_frequency: Option<u64>,
    #[serde(default)]
    pub synthetic_step_ms: Option<f64>,
}

pub fn default_splits(budget: usize) -> Vec<usize> {
    (1..=budget / 2).filter(|d| budget.is_multiple_of(*d)).collect()
}

/// One configuration of the plan matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub key: String,
    pub config: InSituConfig,
}

impl ExperimentPlan {
    pub fn from_json(text: &str) -> Result<Self> {
        let plan: Self =
            serde_json::from_str(text).map_err(|e| Error::config(format!("plan JSON: {e}")))?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn splits_for(&self, budget: usize, mode: Mode) -> Vec<usize> {
        match mode {
            Mode::Synchronous => vec![0],
            _ => self
                .splits
                .get(&budget)
                .cloned()
                .unwrap_or_else(|| default_splits(budget)),
        }
    }

    /// Expands the matrix into validated cells, in execution order. Hybrid
    /// cells for tasks without a hybrid split are left out with a warning.
    pub fn cells(&self, out_dir: &Path) -> Result<Vec<Cell>> {
        if self.repeats == 0 {
            return Err(Error::config("repeats must be >= 1"));
        }
        let mut mesh = self.mesh.clone();
        if let Some(seed) = self.seed {
            mesh.seed = seed;
        }
        let mut cells = Vec::new();
        for task in &self.tasks {
            for &budget in &self.worker_budgets {
                for &mode in &self.modes {
                    if mode == Mode::Hybrid && !task.supports_hybrid() {
                        log::warn!("skipping hybrid cells for task {}: no hybrid split", task.name());
                        continue;
                    }
                    for &frequency in &self.frequencies {
                        for p in self.splits_for(budget, mode) {
                            let key = format!("{}_n{budget}_{}_p{p}_f{frequency}", task.name(), mode.name());
                            let config = InSituConfig {
                                mode,
                                total_workers: budget,
                                insitu_workers: p,
                                frequency,
                                async_frequency: self.async_frequency,
                                total_steps: self.total_steps,
                                warmup_steps: self.warmup_steps,
                                out_dir: out_dir.join("cells").join(&key),
                                mesh: mesh.clone(),
                                synthetic_step_ms: self.synthetic_step_ms,
                                task: task.clone(),
                            };
                            config
                                .validate()
                                .map_err(|e| Error::config(format!("cell {key}: {e}")))?;
                            cells.push(Cell { key, config });
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

/// One row of `summary.csv`. Times are seconds; `min`/`max` are the extremes
/// of the per-repeat average step time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub task: String,
    pub budget: usize,
    pub mode: Mode,
    pub p_insitu: usize,
    pub frequency: u64,
    pub avg_step_time: f64,
    pub t_sim_avg: f64,
    pub t_insitu_avg: f64,
    pub t_transfer_avg: f64,
    pub t_wait_avg: f64,
    pub min_step_time: f64,
    pub max_step_time: f64,
    pub best: bool,
    pub checksum: String,
    pub bytes_written: u64,
    pub would_be_bytes: u64,
    pub status: String,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    fn group(&self) -> (String, usize, Mode, u64) {
        (self.task.clone(), self.budget, self.mode, self.frequency)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepRecord {
    pub rows: Vec<SweepRow>,
    pub oversubscribed: bool,
}

impl SweepRecord {
    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| !r.ok())
    }

    /// Sets `best` on the fastest successful row of each
    /// (task, budget, mode, frequency) group.
    pub fn mark_best(&mut self) {
        let mut best: BTreeMap<(String, usize, Mode, u64), usize> = BTreeMap::new();
        for (i, row) in self.rows.iter().enumerate() {
            if !row.ok() {
                continue;
            }
            best.entry(row.group())
                .and_modify(|b| {
                    if row.avg_step_time < self.rows[*b].avg_step_time {
                        *b = i;
                    }
                })
                .or_insert(i);
        }
        for row in &mut self.rows {
            row.best = false;
        }
        for i in best.into_values() {
            self.rows[i].best = true;
        }
    }

    /// `(cell key, checksum)` of every successful cell.
    pub fn checksums(&self) -> Vec<(String, String)> {
        self.rows
            .iter()
            .filter(|r| r.ok())
            .map(|r| {
                (
                    format!("{}_n{}_{}_p{}_f{}", r.task, r.budget, r.mode.name(), r.p_insitu, r.frequency),
                    r.checksum.clone(),
                )
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(SUMMARY_COLUMNS).map_err(csv_error)?;
        }
        for row in &self.rows {
            w.serialize(row).map_err(csv_error)?;
        }
        w.into_inner().map_err(|e| Error::Other(format!("summary csv: {e}")))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<SweepRow>, _>>()
            .map_err(|e| Error::config(format!("summary csv: {e}")))?;
        Ok(Self {
            rows,
            oversubscribed: false,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&bytes)
    }
}

const SUMMARY_COLUMNS: [&str; 17] = [
    "task",
    "budget",
    "mode",
    "p_insitu",
    "frequency",
    "avg_step_time",
    "t_sim_avg",
    "t_insitu_avg",
    "t_transfer_avg",
    "t_wait_avg",
    "min_step_time",
    "max_step_time",
    "best",
    "checksum",
    "bytes_written",
    "would_be_bytes",
    "status",
];

fn csv_error(e: csv::Error) -> Error {
    Error::Other(format!("summary csv: {e}"))
}

/// Bytes a full dump of the task's fields at every firing would take.
pub fn would_be_bytes(cfg: &InSituConfig) -> u64 {
    let per_field = cfg.mesh.element_count() as u64 * (cfg.mesh.order as u64 + 1).pow(3) * 8;
    let firings = cfg.total_steps / cfg.frequency;
    per_field * cfg.task.dumped_fields() as u64 * firings
}

/// Inline plus concurrent in-situ time, per simulation step.
fn insitu_per_step(record: &RunRecord, warmup: u64) -> f64 {
    let s = record.summary(warmup);
    let rate = if record.steps.is_empty() {
        0.0
    } else {
        record.insitu.len() as f64 / record.steps.len() as f64
    };
    s.avg_insitu_inline + s.avg_insitu_task * rate
}

fn run_cell(cell: &Cell, repeats: usize, steps_dir: &Path) -> SweepRow {
    let cfg = &cell.config;
    let mut row = SweepRow {
        task: cfg.task.name().to_owned(),
        budget: cfg.total_workers,
        mode: cfg.mode,
        p_insitu: cfg.insitu_workers,
        frequency: cfg.frequency,
        avg_step_time: f64::NAN,
        t_sim_avg: f64::NAN,
        t_insitu_avg: f64::NAN,
        t_transfer_avg: f64::NAN,
        t_wait_avg: f64::NAN,
        min_step_time: f64::NAN,
        max_step_time: f64::NAN,
        best: false,
        checksum: String::new(),
        bytes_written: 0,
        would_be_bytes: would_be_bytes(cfg),
        status: "ok".into(),
    };
    let result = run_repeated(cfg, repeats).and_then(|(records, summary)| {
        for (r, rec) in records.iter().enumerate() {
            rec.write_csv(&steps_dir.join(format!("{}_r{r}.csv", cell.key)), cfg.warmup_steps)?;
        }
        Ok((records, summary))
    });
    match result {
        Ok((records, summary)) => {
            let per_repeat: Vec<f64> = records
                .iter()
                .map(|r| r.summary(cfg.warmup_steps).avg_step)
                .collect();
            let insitu: f64 = records
                .iter()
                .map(|r| insitu_per_step(r, cfg.warmup_steps))
                .sum::<f64>()
                / records.len() as f64;
            row.avg_step_time = summary.avg_step;
            row.t_sim_avg = summary.avg_sim;
            row.t_insitu_avg = insitu;
            row.t_transfer_avg = summary.avg_transfer;
            row.t_wait_avg = summary.avg_wait;
            row.min_step_time = per_repeat.iter().copied().fold(f64::INFINITY, f64::min);
            row.max_step_time = per_repeat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.checksum = records[0].outputs.content_digest();
            row.bytes_written = records[0].outputs.bytes_written();
            if records.iter().any(|r| r.outputs.content_digest() != row.checksum) {
                row.status = "failed: outputs differ between repeats".into();
            }
        }
        Err(e) => {
            log::error!("cell {} failed: {e}", cell.key);
            row.status = format!("failed: {e}");
        }
    }
    row
}

/// Runs every cell of `plan` strictly one after another and writes
/// `steps/*.csv` and `summary.csv` under `out_dir`. Cell failures are
/// recorded in the row status; the plan keeps going.
pub fn run_plan(plan: &ExperimentPlan, out_dir: &Path) -> Result<SweepRecord> {
    let cells = plan.cells(out_dir)?;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let max_budget = plan.worker_budgets.iter().copied().max().unwrap_or(0);
    let oversubscribed = max_budget > cores;
    if oversubscribed {
        log::warn!("plan {} uses up to {max_budget} workers on {cores} hardware threads; timings are oversubscribed", plan.name);
    }
    let steps_dir = out_dir.join("steps");
    let mut record = SweepRecord {
        rows: Vec::with_capacity(cells.len()),
        oversubscribed,
    };
    for (i, cell) in cells.iter().enumerate() {
        log::info!("[{}/{}] {}", i + 1, cells.len(), cell.key);
        record.rows.push(run_cell(cell, plan.repeats, &steps_dir));
    }
    record.mark_best();
    record.write_csv(&out_dir.join("summary.csv"))?;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    /// Long format: `task,budget,mode,p_insitu,frequency,metric,value`.
    pub tidy_csv: String,
    /// Tasks and frequencies whose outputs differ across modes or splits.
    pub inconsistent: Vec<String>,
}

pub fn report(sweep: &SweepRecord) -> Report {
    let mut text = String::new();
    let mut tidy = String::from("task,budget,mode,p_insitu,frequency,metric,value\n");
    if sweep.rows.is_empty() {
        text.push_str("no cells\n");
        return Report {
            text,
            tidy_csv: tidy,
            inconsistent: Vec::new(),
        };
    }
    if sweep.oversubscribed {
        text.push_str("warning: worker budgets exceed hardware threads; timings are oversubscribed\n\n");
    }

    let mut groups: BTreeMap<(String, Mode, usize), Vec<&SweepRow>> = BTreeMap::new();
    for row in &sweep.rows {
        groups
            .entry((row.task.clone(), row.mode, row.budget))
            .or_default()
            .push(row);
    }
    for ((task, mode, budget), rows) in &groups {
        let _ = writeln!(text, "{task} / {} / N = {budget}", mode.name());
        let _ = writeln!(
            text,
            "  {:>4} {:>8} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "freq", "p_insitu", "step [ms]", "sim [ms]", "insitu [ms]", "xfer [ms]", "wait [ms]", "min [ms]", "max [ms]"
        );
        for r in rows {
            let ms = |v: f64| v * 1e3;
            let mark = if r.best { "*" } else { " " };
            if r.ok() {
                let _ = writeln!(
                    text,
                    "{mark} {:>4} {:>8} {:>12.3} {:>12.3} {:>12.3} {:>12.3} {:>12.3} {:>12.3} {:>12.3}",
                    r.frequency,
                    r.p_insitu,
                    ms(r.avg_step_time),
                    ms(r.t_sim_avg),
                    ms(r.t_insitu_avg),
                    ms(r.t_transfer_avg),
                    ms(r.t_wait_avg),
                    ms(r.min_step_time),
                    ms(r.max_step_time)
                );
            } else {
                let _ = writeln!(text, "  {:>4} {:>8} {}", r.frequency, r.p_insitu, r.status);
            }
        }
        text.push('\n');
    }

    for r in &sweep.rows {
        let metrics = [
            ("avg_step_time", r.avg_step_time),
            ("t_sim_avg", r.t_sim_avg),
            ("t_insitu_avg", r.t_insitu_avg),
            ("t_transfer_avg", r.t_transfer_avg),
            ("t_wait_avg", r.t_wait_avg),
            ("min_step_time", r.min_step_time),
            ("max_step_time", r.max_step_time),
            ("bytes_written", r.bytes_written as f64),
            ("would_be_bytes", r.would_be_bytes as f64),
        ];
        for (name, value) in metrics {
            let _ = writeln!(
                tidy,
                "{},{},{},{},{},{name},{value}",
                r.task,
                r.budget,
                r.mode.name(),
                r.p_insitu,
                r.frequency
            );
        }
    }

    let mut sums: BTreeMap<(String, u64), std::collections::BTreeSet<&str>> = BTreeMap::new();
    for r in sweep.rows.iter().filter(|r| r.ok()) {
        sums.entry((r.task.clone(), r.frequency))
            .or_default()
            .insert(r.checksum.as_str());
    }
    let mut inconsistent = Vec::new();
    text.push_str("output checksums across modes and splits:\n");
    for ((task, freq), set) in &sums {
        let verdict = if set.len() == 1 { "identical" } else { "DIFFER" };
        let _ = writeln!(text, "  {task} f={freq}: {verdict}");
        if set.len() != 1 {
            inconsistent.push(format!("{task} f={freq}"));
        }
    }

    let mut io: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for r in sweep.rows.iter().filter(|r| r.ok()) {
        let e = io.entry(r.task.as_str()).or_default();
        e.0 += r.bytes_written;
        e.1 += r.would_be_bytes;
    }
    text.push_str("\nIO written vs full dumps:\n");
    for (task, (written, would)) in io {
        let _ = write!(text, "  {task}: {written} B written, {would} B without in-situ");
        if written > 0 {
            let _ = writeln!(text, " (x{:.1})", would as f64 / written as f64);
        } else {
            text.push('\n');
        }
    }
    let failed = sweep.rows.iter().filter(|r| !r.ok()).count();
    if failed > 0 {
        let _ = writeln!(text, "\n{failed} cell(s) failed");
    }
    Report {
        text,
        tidy_csv: tidy,
        inconsistent,
    }
}

/// Default output directory for a plan.
pub fn plan_out_dir(plan: &ExperimentPlan) -> PathBuf {
    PathBuf::from("out").join(&plan.name)
}
