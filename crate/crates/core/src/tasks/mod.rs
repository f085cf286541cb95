//! Concrete in-situ tasks.

pub mod colormap;
pub mod compression;
pub mod image;
pub mod uq;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::engine::{AsyncStage, InSituTask, SyncStage, TaskContext, TaskOutputs};
use crate::error::{Error, Result};
use crate::proxysim::{FieldKind, SnapshotView};
use crate::workers::WorkerGroup;

pub use compression::{CompressionParams, CompressionTask, TruncatedField};
pub use image::{Axis, ImageField, ImageSpec, ImageTask};
pub use uq::{TrainingLags, UqParams, UqResult, UqTask};

/// Task selection and parameters, tagged by `kind` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskConfig {
    None,
    Compression(CompressionParams),
    Image(ImageSpec),
    Uq(UqParams),
    Synthetic(SyntheticParams),
}

impl TaskConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::None => "none",
            TaskConfig::Compression(_) => "compression",
            TaskConfig::Image(_) => "image",
            TaskConfig::Uq(_) => "uq",
            TaskConfig::Synthetic(_) => "synthetic",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TaskConfig::None => Ok(()),
            TaskConfig::Compression(p) => p.validate(),
            TaskConfig::Image(s) => s.validate(),
            TaskConfig::Uq(p) => p.validate(),
            TaskConfig::Synthetic(p) => p.validate(),
        }
    }

    /// Checks parameters that depend on the firing frequency.
    pub fn validate_cadence(&self, frequency: u64) -> Result<()> {
        if let TaskConfig::Uq(p) = self {
            if p.estimate_every % frequency != 0 {
                return Err(Error::config(format!(
                    "uq estimate_every {} must be a multiple of frequency {frequency}",
                    p.estimate_every
                )));
            }
        }
        Ok(())
    }

    /// Hybrid shipping cadence used when the config leaves it unset.
    pub fn default_async_frequency(&self, frequency: u64) -> u64 {
        match self {
            TaskConfig::Uq(p) => p.estimate_every,
            _ => frequency,
        }
    }

    pub fn supports_hybrid(&self) -> bool {
        matches!(
            self,
            TaskConfig::Compression(_) | TaskConfig::Uq(_) | TaskConfig::Synthetic(_)
        )
    }

    /// Fields a full dump would write per firing, for IO accounting.
    pub fn dumped_fields(&self) -> usize {
        match self {
            TaskConfig::None | TaskConfig::Synthetic(_) => 0,
            TaskConfig::Compression(p) => p.fields.len(),
            TaskConfig::Image(s) => s.field.needed().len(),
            TaskConfig::Uq(_) => FieldKind::VELOCITY.len(),
        }
    }
}

pub fn build_task(cfg: &TaskConfig) -> Result<Box<dyn InSituTask>> {
    cfg.validate()?;
    Ok(match cfg {
        TaskConfig::None => Box::new(NoTask),
        TaskConfig::Compression(p) => Box::new(CompressionTask::new(p.clone())),
        TaskConfig::Image(s) => Box::new(ImageTask::new(s.clone())),
        TaskConfig::Uq(p) => Box::new(UqTask::new(p.clone())),
        TaskConfig::Synthetic(p) => Box::new(SyntheticTask::new(p.clone())),
    })
}

pub fn build_hybrid(cfg: &TaskConfig) -> Result<(Box<dyn SyncStage>, Box<dyn AsyncStage>)> {
    cfg.validate()?;
    match cfg {
        TaskConfig::Compression(p) => {
            let (s, a) = compression::hybrid(p.clone());
            Ok((Box::new(s), Box::new(a)))
        }
        TaskConfig::Uq(p) => {
            let (s, a) = uq::hybrid(p.clone());
            Ok((Box::new(s), Box::new(a)))
        }
        TaskConfig::Synthetic(p) => Ok((
            Box::new(SyntheticSync { params: p.clone() }),
            Box::new(SyntheticAsync { params: p.clone() }),
        )),
        other => Err(Error::config(format!(
            "task {} has no hybrid split",
            other.name()
        ))),
    }
}

/// Data handed from a hybrid task's inline half to its concurrent half.
#[derive(Debug, Clone)]
pub enum Intermediate {
    Truncated {
        step_index: u64,
        fields: Vec<TruncatedField>,
    },
    Lags {
        step_index: u64,
        lags: Box<TrainingLags>,
    },
    Synthetic {
        step_index: u64,
    },
}

impl Intermediate {
    pub fn step_index(&self) -> u64 {
        match self {
            Intermediate::Truncated { step_index, .. }
            | Intermediate::Lags { step_index, .. }
            | Intermediate::Synthetic { step_index } => *step_index,
        }
    }
}

/// Does nothing; used for simulation-only baselines.
#[derive(Debug, Default)]
pub struct NoTask;

impl InSituTask for NoTask {
    fn name(&self) -> &'static str {
        "none"
    }
    fn needed_fields(&self) -> Vec<FieldKind> {
        Vec::new()
    }
    fn init(&mut self, _ctx: &TaskContext) -> Result<()> {
        Ok(())
    }
    fn check(&mut self, _s: SnapshotView<'_>, _w: &WorkerGroup) -> Result<()> {
        Ok(())
    }
    fn end(&mut self) -> Result<TaskOutputs> {
        Ok(TaskOutputs::default())
    }
}

/// Sleep-based workload with an Amdahl cost model:
/// `cost_ms * (serial_fraction + (1 - serial_fraction) / workers)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    pub cost_ms: f64,
    #[serde(default)]
    pub serial_fraction: f64,
    /// Inline cost of the hybrid sync part.
    #[serde(default)]
    pub sync_ms: f64,
    #[serde(default)]
    pub fields: Vec<FieldKind>,
}

impl SyntheticParams {
    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.cost_ms) || !ok(self.sync_ms) {
            return Err(Error::config("synthetic costs must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.serial_fraction) {
            return Err(Error::config("serial_fraction must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn cost(&self, workers: usize) -> Duration {
        let sf = self.serial_fraction;
        let ms = self.cost_ms * (sf + (1.0 - sf) / workers as f64);
        Duration::from_secs_f64(ms / 1e3)
    }
}

#[derive(Debug)]
pub struct SyntheticTask {
    params: SyntheticParams,
}

impl SyntheticTask {
    pub fn new(params: SyntheticParams) -> Self {
        Self { params }
    }
}

impl InSituTask for SyntheticTask {
    fn name(&self) -> &'static str {
        "synthetic"
    }
    fn needed_fields(&self) -> Vec<FieldKind> {
        self.params.fields.clone()
    }
    fn init(&mut self, _ctx: &TaskContext) -> Result<()> {
        Ok(())
    }
    fn check(&mut self, _s: SnapshotView<'_>, workers: &WorkerGroup) -> Result<()> {
        std::thread::sleep(self.params.cost(workers.size()));
        Ok(())
    }
    fn end(&mut self) -> Result<TaskOutputs> {
        Ok(TaskOutputs::default())
    }
}

struct SyntheticSync {
    params: SyntheticParams,
}

impl SyncStage for SyntheticSync {
    fn init(&mut self, _ctx: &TaskContext) -> Result<()> {
        Ok(())
    }
    fn sync_part(&mut self, _s: SnapshotView<'_>, _w: &WorkerGroup) -> Result<()> {
        std::thread::sleep(Duration::from_secs_f64(self.params.sync_ms / 1e3));
        Ok(())
    }
    fn take_intermediate(&mut self, step_index: u64) -> Result<Option<Intermediate>> {
        Ok(Some(Intermediate::Synthetic { step_index }))
    }
    fn end(&mut self) -> Result<TaskOutputs> {
        Ok(TaskOutputs::default())
    }
}

struct SyntheticAsync {
    params: SyntheticParams,
}

impl AsyncStage for SyntheticAsync {
    fn init(&mut self, _ctx: &TaskContext) -> Result<()> {
        Ok(())
    }
    fn async_part(&mut self, _d: Intermediate, workers: &WorkerGroup) -> Result<()> {
        std::thread::sleep(self.params.cost(workers.size()));
        Ok(())
    }
    fn end(&mut self) -> Result<TaskOutputs> {
        Ok(TaskOutputs::default())
    }
}

fn require_ctx<'a, T>(slot: &'a Option<T>, task: &str) -> Result<&'a T> {
    slot.as_ref()
        .ok_or_else(|| Error::Lifecycle(format!("{task}: used before init")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_config_json_tags() {
        let c: TaskConfig = serde_json::from_str(r#"{"kind":"compression","epsilon":0.01}"#).unwrap();
        assert_eq!(c.name(), "compression");
        let c: TaskConfig = serde_json::from_str(
            r#"{"kind":"image","axis":"z","slice_position":0.5,"width":8,"height":4}"#,
        )
        .unwrap();
        assert_eq!(c.name(), "image");
        let c: TaskConfig = serde_json::from_str(r#"{"kind":"uq"}"#).unwrap();
        assert_eq!(c.default_async_frequency(1), 50);
        assert!(serde_json::from_str::<TaskConfig>(r#"{"kind":"bogus"}"#).is_err());
    }

    #[test]
    fn amdahl_cost() {
        let p = SyntheticParams {
            cost_ms: 10.0,
            serial_fraction: 0.8,
            sync_ms: 0.0,
            fields: vec![],
        };
        assert!((p.cost(1).as_secs_f64() - 0.010).abs() < 1e-12);
        assert!((p.cost(2).as_secs_f64() - 0.009).abs() < 1e-12);
    }

    #[test]
    fn image_has_no_hybrid() {
        let c: TaskConfig = serde_json::from_str(
            r#"{"kind":"image","axis":"z","slice_position":0.5,"width":8,"height":4}"#,
        )
        .unwrap();
        assert!(build_hybrid(&c).is_err());
        assert!(!c.supports_hybrid());
    }

    #[test]
    fn uq_cadence_must_nest() {
        let c = TaskConfig::Uq(UqParams {
            n_lags: 25,
            estimate_every: 500,
        });
        assert!(c.validate_cadence(20).is_ok());
        assert!(c.validate_cadence(30).is_err());
    }
}
