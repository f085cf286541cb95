use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proxysim::MeshConfig;
use crate::tasks::TaskConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Synchronous,
    Asynchronous,
    Hybrid,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Synchronous => "synchronous",
            Mode::Asynchronous => "asynchronous",
            Mode::Hybrid => "hybrid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "synchronous" => Ok(Mode::Synchronous),
            "asynchronous" => Ok(Mode::Asynchronous),
            "hybrid" => Ok(Mode::Hybrid),
            other => Err(Error::config(format!("unknown mode {other:?}"))),
        }
    }
}

fn default_steps() -> u64 {
    1000
}
fn default_warmup() -> u64 {
    10
}
fn default_frequency() -> u64 {
    1
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// One experiment: coupling mode, worker split, task and mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InSituConfig {
    pub mode: Mode,
    pub total_workers: usize,
    #[serde(default)]
    pub insitu_workers: usize,
    /// The task (or the hybrid sync part) fires every `frequency` steps.
    #[serde(default = "default_frequency")]
    pub frequency: u64,
    /// Hybrid only: intermediate data is shipped every `async_frequency`
    /// steps. `None` takes the task's default; `Some(0)` means never.
    #[serde(default)]
    pub async_frequency: Option<u64>,
    #[serde(default = "default_steps")]
    pub total_steps: u64,
    /// Leading steps excluded from reported means.
    #[serde(default = "default_warmup")]
    pub warmup_steps: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub mesh: MeshConfig,
    /// Replace the proxy's compute with a sleep of this many milliseconds
    /// per step at one worker, scaled by `1 / p_sim`.
    #[serde(default)]
    pub synthetic_step_ms: Option<f64>,
    pub task: TaskConfig,
}

impl InSituConfig {
    pub fn sim_workers(&self) -> usize {
        self.total_workers.saturating_sub(self.insitu_workers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_workers == 0 {
            return Err(Error::config("total_workers must be >= 1"));
        }
        if self.insitu_workers >= self.total_workers {
            return Err(Error::config(format!(
                "insitu_workers {} leaves no simulation worker out of {}",
                self.insitu_workers, self.total_workers
            )));
        }
        match self.mode {
            Mode::Synchronous if self.insitu_workers != 0 => {
                return Err(Error::config("synchronous mode requires insitu_workers = 0"))
            }
            Mode::Asynchronous | Mode::Hybrid if self.insitu_workers == 0 => {
                return Err(Error::config(format!(
                    "{} mode requires insitu_workers >= 1",
                    self.mode.name()
                )))
            }
            _ => {}
        }
        if self.frequency == 0 {
            return Err(Error::config("frequency must be >= 1"));
        }
        if self.mode == Mode::Hybrid {
            let f_async = self.effective_async_frequency();
            if f_async != 0 && !f_async.is_multiple_of(self.frequency) {
                return Err(Error::config(format!(
                    "async_frequency {f_async} must be a multiple of frequency {}",
                    self.frequency
                )));
            }
        }
        if let Some(ms) = self.synthetic_step_ms {
            if !(ms.is_finite() && ms >= 0.0) {
                return Err(Error::config("synthetic_step_ms must be finite and >= 0"));
            }
        }
        self.mesh.validate()?;
        self.task.validate()?;
        self.task.validate_cadence(self.frequency)?;
        if self.mode == Mode::Hybrid && !self.task.supports_hybrid() {
            return Err(Error::config(format!(
                "task {} has no hybrid split",
                self.task.name()
            )));
        }
        Ok(())
    }

    /// Hybrid shipping cadence; 0 means never.
    pub fn effective_async_frequency(&self) -> u64 {
        self.async_frequency
            .unwrap_or_else(|| self.task.default_async_frequency(self.frequency))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::config(format!("config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> InSituConfig {
        InSituConfig::from_json(
            r#"{"mode":"asynchronous","total_workers":4,"insitu_workers":1,
                "task":{"kind":"none"}}"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let c = base();
        assert_eq!(c.total_steps, 1000);
        assert_eq!(c.warmup_steps, 10);
        assert_eq!(c.frequency, 1);
        assert_eq!(c.mesh.order, 7);
        assert_eq!(c.sim_workers(), 3);
    }

    #[test]
    fn split_invariants() {
        let mut c = base();
        c.insitu_workers = 4;
        assert!(c.validate().is_err());
        c.insitu_workers = 0;
        assert!(c.validate().is_err());
        c.mode = Mode::Synchronous;
        assert!(c.validate().is_ok());
        c.insitu_workers = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn hybrid_frequencies_must_nest() {
        let mut c = base();
        c.mode = Mode::Hybrid;
        assert!(c.validate().is_err(), "task none has no hybrid split");
        c.task = serde_json::from_str(r#"{"kind":"synthetic","cost_ms":1.0}"#).unwrap();
        c.frequency = 3;
        c.async_frequency = Some(10);
        assert!(c.validate().is_err());
        c.async_frequency = Some(12);
        assert!(c.validate().is_ok());
        c.async_frequency = Some(0);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = InSituConfig::from_json(
            r#"{"mode":"synchronous","total_workers":1,"bogus":1,"task":{"kind":"none"}}"#,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
