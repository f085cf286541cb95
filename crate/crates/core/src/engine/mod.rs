//! In-situ orchestration: lifecycle, the three coupling modes, resource
//! splits and the staged transfer between simulation and task workers.

mod channel;
mod config;
mod sweep;
mod task;

use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use channel::{stage_channel, Disconnected, SendTiming, StageReceiver, StageSender};
pub use config::{InSituConfig, Mode};
pub use sweep::{sweep_splits, SplitResult, SplitSweep};
pub use task::{
    hex, write_artifact, Artifact, AsyncStage, CompressionRecord, InSituTask, Lifecycle, SyncStage,
    TaskContext, TaskOutputs,
};

use crate::error::{Error, Result};
use crate::proxysim::{self, init_state, FieldKind, FieldSnapshot, SimState, SnapshotView};
use crate::tasks::{self, Intermediate};
use crate::workers::WorkerGroup;

/// The simulation side as the engine drives it.
#[derive(Debug, Clone)]
pub struct Simulator {
    state: SimState,
    synthetic_step: Option<Duration>,
}

impl Simulator {
    pub fn new(state: SimState) -> Self {
        Self {
            state,
            synthetic_step: None,
        }
    }

    /// Adds a sleep of `cost / workers` per step on top of the (typically
    /// tiny) proxy state.
    pub fn with_synthetic_cost(mut self, cost: Duration) -> Self {
        self.synthetic_step = Some(cost);
        self
    }

    pub fn from_config(cfg: &InSituConfig) -> Result<Self> {
        let mut sim = Self::new(init_state(&cfg.mesh)?);
        if let Some(ms) = cfg.synthetic_step_ms {
            sim = sim.with_synthetic_cost(Duration::from_secs_f64(ms / 1e3));
        }
        Ok(sim)
    }

    pub fn advance(&mut self, workers: &WorkerGroup) {
        if let Some(cost) = self.synthetic_step {
            thread::sleep(cost / workers.size() as u32);
        }
        proxysim::step(&mut self.state, workers);
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn view(&self) -> SnapshotView<'_> {
        self.state.view()
    }

    pub fn snapshot(&self, needed: &[FieldKind]) -> FieldSnapshot {
        self.state.snapshot(needed)
    }
}

/// SHA-256 over the bit patterns of every field value, in field then
/// element order.
pub fn state_digest(state: &SimState) -> String {
    let mut h = Sha256::new();
    h.update(state.step_index.to_le_bytes());
    for kind in FieldKind::ALL {
        for f in state.field(kind) {
            for v in &f.values {
                h.update(v.to_bits().to_le_bytes());
            }
        }
    }
    hex(&h.finalize())
}

/// Per-step breakdown, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepTimings {
    pub step_index: u64,
    pub t_sim: f64,
    pub t_transfer: f64,
    pub t_insitu_inline: f64,
    pub t_wait: f64,
    pub t_total: f64,
    pub fired: bool,
}

/// One task invocation on the in-situ workers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InSituTiming {
    pub step_index: u64,
    /// Time parked in `recv` before this message arrived.
    pub t_idle: f64,
    pub t_task: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps_measured: usize,
    pub avg_step: f64,
    pub avg_sim: f64,
    pub avg_transfer: f64,
    pub avg_insitu_inline: f64,
    pub avg_wait: f64,
    /// Mean in-situ-side task time per invocation (asynchronous parts).
    pub avg_insitu_task: f64,
    /// Inline in-situ time over total time.
    pub insitu_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: Mode,
    pub total_workers: usize,
    pub insitu_workers: usize,
    pub steps: Vec<StepTimings>,
    pub insitu: Vec<InSituTiming>,
    pub outputs: TaskOutputs,
    pub final_state_digest: String,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl RunRecord {
    /// Means over steps after `warmup` (all steps if the run is shorter).
    pub fn summary(&self, warmup: u64) -> RunSummary {
        let measured: Vec<&StepTimings> = if self.steps.len() as u64 > warmup {
            self.steps.iter().filter(|s| s.step_index > warmup).collect()
        } else {
            self.steps.iter().collect()
        };
        let total: f64 = measured.iter().map(|s| s.t_total).sum();
        let inline: f64 = measured.iter().map(|s| s.t_insitu_inline).sum();
        RunSummary {
            steps_measured: measured.len(),
            avg_step: mean(measured.iter().map(|s| s.t_total)),
            avg_sim: mean(measured.iter().map(|s| s.t_sim)),
            avg_transfer: mean(measured.iter().map(|s| s.t_transfer)),
            avg_insitu_inline: mean(measured.iter().map(|s| s.t_insitu_inline)),
            avg_wait: mean(measured.iter().map(|s| s.t_wait)),
            avg_insitu_task: mean(self.insitu.iter().map(|t| t.t_task)),
            insitu_share: if total > 0.0 { inline / total } else { 0.0 },
        }
    }

    /// `step,t_sim,t_transfer,t_insitu_inline,t_wait,t_total` plus a final
    /// `mean` row over the measured steps.
    pub fn to_csv(&self, warmup: u64) -> String {
        let mut out = String::from("step,t_sim,t_transfer,t_insitu_inline,t_wait,t_total\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{:.9},{:.9},{:.9},{:.9},{:.9}\n",
                s.step_index, s.t_sim, s.t_transfer, s.t_insitu_inline, s.t_wait, s.t_total
            ));
        }
        let m = self.summary(warmup);
        out.push_str(&format!(
            "mean,{:.9},{:.9},{:.9},{:.9},{:.9}\n",
            m.avg_sim, m.avg_transfer, m.avg_insitu_inline, m.avg_wait, m.avg_step
        ));
        out
    }

    pub fn write_csv(&self, path: &Path, warmup: u64) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_csv(warmup)).map_err(|e| Error::io(path, e))
    }
}

fn fires(step: u64, frequency: u64) -> bool {
    frequency != 0 && step.is_multiple_of(frequency)
}

fn task_error(step: u64, e: Error) -> Error {
    match e {
        e @ Error::Task { .. } => e,
        other => Error::Task {
            step,
            source: Box::new(other),
        },
    }
}

fn context(cfg: &InSituConfig, sim: &Simulator, workers: usize) -> TaskContext {
    TaskContext {
        out_dir: cfg.out_dir.clone(),
        mesh: std::sync::Arc::clone(&sim.state().mesh),
        mode: cfg.mode,
        workers,
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Task runs inline on all `N` workers with a zero-copy view.
pub fn run_synchronous(
    sim: &mut Simulator,
    task: &mut dyn InSituTask,
    cfg: &InSituConfig,
) -> Result<RunRecord> {
    if cfg.mode != Mode::Synchronous {
        return Err(Error::config("run_synchronous needs mode = synchronous"));
    }
    cfg.validate()?;
    let workers = WorkerGroup::new(cfg.total_workers, "sim")?;
    let mut life = Lifecycle::new(task.name());
    life.init()?;
    task.init(&context(cfg, sim, cfg.total_workers))?;

    let mut steps = Vec::with_capacity(cfg.total_steps as usize);
    for _ in 0..cfg.total_steps {
        let t0 = Instant::now();
        sim.advance(&workers);
        let t_sim = t0.elapsed();
        let step = sim.state().step_index;
        let mut t_inline = Duration::ZERO;
        let fired = fires(step, cfg.frequency);
        if fired {
            life.check()?;
            let t1 = Instant::now();
            task.check(sim.view(), &workers)
                .map_err(|e| task_error(step, e))?;
            t_inline = t1.elapsed();
        }
        steps.push(StepTimings {
            step_index: step,
            t_sim: secs(t_sim),
            t_insitu_inline: secs(t_inline),
            t_total: secs(t0.elapsed()),
            fired,
            ..Default::default()
        });
    }
    life.end()?;
    let outputs = task.end()?;
    Ok(RunRecord {
        mode: cfg.mode,
        total_workers: cfg.total_workers,
        insitu_workers: 0,
        steps,
        insitu: Vec::new(),
        outputs,
        final_state_digest: state_digest(sim.state()),
    })
}

type InSituResult = Result<(TaskOutputs, Vec<InSituTiming>)>;

fn join_insitu(h: thread::ScopedJoinHandle<'_, InSituResult>) -> InSituResult {
    h.join()
        .map_err(|_| Error::Other("in-situ worker panicked".into()))?
}

/// Simulation on `p_sim` workers; deep-copied snapshots go through the
/// stage channel to the task on `p_insitu` workers.
pub fn run_asynchronous(
    sim: &mut Simulator,
    task: &mut dyn InSituTask,
    cfg: &InSituConfig,
) -> Result<RunRecord> {
    if cfg.mode != Mode::Asynchronous {
        return Err(Error::config("run_asynchronous needs mode = asynchronous"));
    }
    cfg.validate()?;
    let sim_workers = WorkerGroup::new(cfg.sim_workers(), "sim")?;
    let needed = task.needed_fields();
    let ctx = context(cfg, sim, cfg.insitu_workers);
    let p_insitu = cfg.insitu_workers;

    thread::scope(|scope| {
        let (tx, rx) = stage_channel::<FieldSnapshot>();
        let handle = thread::Builder::new()
            .name("insitu".into())
            .spawn_scoped(scope, move || -> InSituResult {
                let workers = WorkerGroup::new(p_insitu, "insitu")?;
                let mut life = Lifecycle::new(task.name());
                life.init()?;
                task.init(&ctx)?;
                let mut timeline = Vec::new();
                loop {
                    let t0 = Instant::now();
                    let Some(snap) = rx.recv() else { break };
                    let t_idle = t0.elapsed();
                    life.check()?;
                    let t1 = Instant::now();
                    task.check(snap.view(), &workers)
                        .map_err(|e| task_error(snap.step_index, e))?;
                    timeline.push(InSituTiming {
                        step_index: snap.step_index,
                        t_idle: secs(t_idle),
                        t_task: secs(t1.elapsed()),
                    });
                }
                life.end()?;
                Ok((task.end()?, timeline))
            })
            .map_err(|e| Error::Other(format!("spawn in-situ thread: {e}")))?;

        let mut steps = Vec::with_capacity(cfg.total_steps as usize);
        for _ in 0..cfg.total_steps {
            let t0 = Instant::now();
            sim.advance(&sim_workers);
            let t_sim = t0.elapsed();
            let step = sim.state().step_index;
            let fired = fires(step, cfg.frequency);
            let mut timing = StepTimings {
                step_index: step,
                t_sim: secs(t_sim),
                fired,
                ..Default::default()
            };
            if fired {
                let t1 = Instant::now();
                let snap = sim.snapshot(&needed);
                let t_copy = t1.elapsed();
                match tx.send(snap) {
                    Ok(st) => {
                        timing.t_transfer = secs(t_copy + st.handoff);
                        timing.t_wait = secs(st.wait);
                    }
                    Err(_) => break,
                }
            }
            timing.t_total = secs(t0.elapsed());
            steps.push(timing);
        }
        drop(tx);
        let (outputs, insitu) = join_insitu(handle)?;
        if steps.len() as u64 != cfg.total_steps {
            return Err(Error::Other("in-situ side stopped early".into()));
        }
        Ok(RunRecord {
            mode: cfg.mode,
            total_workers: cfg.total_workers,
            insitu_workers: cfg.insitu_workers,
            steps,
            insitu,
            outputs,
            final_state_digest: state_digest(sim.state()),
        })
    })
}

/// `sync_part` inline every `frequency` steps on the simulation workers;
/// intermediate data ships every `async_frequency` steps to `async_part`.
pub fn run_hybrid(
    sim: &mut Simulator,
    sync: &mut dyn SyncStage,
    asynch: &mut dyn AsyncStage,
    cfg: &InSituConfig,
) -> Result<RunRecord> {
    if cfg.mode != Mode::Hybrid {
        return Err(Error::config("run_hybrid needs mode = hybrid"));
    }
    cfg.validate()?;
    let f_async = cfg.effective_async_frequency();
    let sim_workers = WorkerGroup::new(cfg.sim_workers(), "sim")?;
    let async_ctx = context(cfg, sim, cfg.insitu_workers);
    let p_insitu = cfg.insitu_workers;
    let mut sync_life = Lifecycle::new("sync stage");
    sync_life.init()?;
    sync.init(&context(cfg, sim, cfg.sim_workers()))?;

    let result = thread::scope(|scope| {
        let (tx, rx) = stage_channel::<Intermediate>();
        let handle = thread::Builder::new()
            .name("insitu".into())
            .spawn_scoped(scope, move || -> InSituResult {
                let workers = WorkerGroup::new(p_insitu, "insitu")?;
                let mut life = Lifecycle::new("async stage");
                life.init()?;
                asynch.init(&async_ctx)?;
                let mut timeline = Vec::new();
                loop {
                    let t0 = Instant::now();
                    let Some(data) = rx.recv() else { break };
                    let t_idle = t0.elapsed();
                    let step = data.step_index();
                    life.check()?;
                    let t1 = Instant::now();
                    asynch
                        .async_part(data, &workers)
                        .map_err(|e| task_error(step, e))?;
                    timeline.push(InSituTiming {
                        step_index: step,
                        t_idle: secs(t_idle),
                        t_task: secs(t1.elapsed()),
                    });
                }
                life.end()?;
                Ok((asynch.end()?, timeline))
            })
            .map_err(|e| Error::Other(format!("spawn in-situ thread: {e}")))?;

        let mut steps = Vec::with_capacity(cfg.total_steps as usize);
        let mut failure = None;
        let ship = |step: u64, sync: &mut dyn SyncStage, timing: &mut StepTimings| -> Result<bool> {
            let t1 = Instant::now();
            let data = sync.take_intermediate(step).map_err(|e| task_error(step, e))?;
            let t_take = t1.elapsed();
            if let Some(data) = data {
                match tx.send(data) {
                    Ok(st) => {
                        timing.t_transfer += secs(t_take + st.handoff);
                        timing.t_wait += secs(st.wait);
                    }
                    Err(_) => return Ok(false),
                }
            } else {
                timing.t_transfer += secs(t_take);
            }
            Ok(true)
        };
        for _ in 0..cfg.total_steps {
            let t0 = Instant::now();
            sim.advance(&sim_workers);
            let t_sim = t0.elapsed();
            let step = sim.state().step_index;
            let fired = fires(step, cfg.frequency);
            let mut timing = StepTimings {
                step_index: step,
                t_sim: secs(t_sim),
                fired,
                ..Default::default()
            };
            if fired {
                if let Err(e) = sync_life.check() {
                    failure = Some(e);
                    break;
                }
                let t1 = Instant::now();
                if let Err(e) = sync.sync_part(sim.view(), &sim_workers) {
                    failure = Some(task_error(step, e));
                    break;
                }
                timing.t_insitu_inline = secs(t1.elapsed());
            }
            let last = step == cfg.total_steps;
            if fires(step, f_async) || (last && f_async != 0) {
                match ship(step, &mut *sync, &mut timing) {
                    Ok(true) => {}
                    Ok(false) => break,
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                }
            }
            timing.t_total = secs(t0.elapsed());
            steps.push(timing);
        }
        drop(tx);
        let joined = join_insitu(handle);
        if let Some(e) = failure {
            return Err(e);
        }
        let (outputs, insitu) = joined?;
        if steps.len() as u64 != cfg.total_steps {
            return Err(Error::Other("in-situ side stopped early".into()));
        }
        Ok((steps, insitu, outputs))
    });
    let (steps, insitu, mut outputs) = result?;
    sync_life.end()?;
    outputs.merge(sync.end()?);
    Ok(RunRecord {
        mode: cfg.mode,
        total_workers: cfg.total_workers,
        insitu_workers: cfg.insitu_workers,
        steps,
        insitu,
        outputs,
        final_state_digest: state_digest(sim.state()),
    })
}

/// Builds the simulation and task from `cfg` and runs the configured mode.
pub fn run(cfg: &InSituConfig) -> Result<(RunRecord, Simulator)> {
    cfg.validate()?;
    let mut sim = Simulator::from_config(cfg)?;
    let record = match cfg.mode {
        Mode::Synchronous => {
            let mut task = tasks::build_task(&cfg.task)?;
            run_synchronous(&mut sim, task.as_mut(), cfg)?
        }
        Mode::Asynchronous => {
            let mut task = tasks::build_task(&cfg.task)?;
            run_asynchronous(&mut sim, task.as_mut(), cfg)?
        }
        Mode::Hybrid => {
            let (mut s, mut a) = tasks::build_hybrid(&cfg.task)?;
            run_hybrid(&mut sim, s.as_mut(), a.as_mut(), cfg)?
        }
    };
    Ok((record, sim))
}

/// Runs `cfg` `repeats` times and averages the summaries arithmetically.
pub fn run_repeated(cfg: &InSituConfig, repeats: usize) -> Result<(Vec<RunRecord>, RunSummary)> {
    let repeats = repeats.max(1);
    let mut records = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        records.push(run(cfg)?.0);
    }
    let sums: Vec<RunSummary> = records.iter().map(|r| r.summary(cfg.warmup_steps)).collect();
    let avg = |f: fn(&RunSummary) -> f64| mean(sums.iter().map(f));
    let summary = RunSummary {
        steps_measured: sums[0].steps_measured,
        avg_step: avg(|s| s.avg_step),
        avg_sim: avg(|s| s.avg_sim),
        avg_transfer: avg(|s| s.avg_transfer),
        avg_insitu_inline: avg(|s| s.avg_insitu_inline),
        avg_wait: avg(|s| s.avg_wait),
        avg_insitu_task: avg(|s| s.avg_insitu_task),
        insitu_share: avg(|s| s.insitu_share),
    };
    Ok((records, summary))
}
