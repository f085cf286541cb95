use serde::{Deserialize, Serialize};

use super::{run_repeated, InSituConfig, RunSummary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub insitu_workers: usize,
    pub summary: RunSummary,
    pub content_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSweep {
    pub results: Vec<SplitResult>,
    /// Index into `results` of the minimal average step time.
    pub best: usize,
}

impl SplitSweep {
    pub fn best_split(&self) -> usize {
        self.results[self.best].insitu_workers
    }
}

/// Runs `cfg` once per candidate `p_insitu` (each averaged over `repeats`)
/// and locates the split with the lowest average step time.
pub fn sweep_splits(cfg: &InSituConfig, splits: &[usize], repeats: usize) -> Result<SplitSweep> {
    if splits.is_empty() {
        return Err(Error::config("sweep needs at least one split"));
    }
    let mut results = Vec::with_capacity(splits.len());
    for &p in splits {
        let mut c = cfg.clone();
        c.insitu_workers = p;
        c.validate()?;
        let (records, summary) = run_repeated(&c, repeats)?;
        results.push(SplitResult {
            insitu_workers: p,
            summary,
            content_digest: records[0].outputs.content_digest(),
        });
    }
    let best = results
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.summary.avg_step.total_cmp(&b.1.summary.avg_step))
        .map(|(i, _)| i)
        .expect("non-empty");
    Ok(SplitSweep { results, best })
}
