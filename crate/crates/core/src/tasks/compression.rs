//! Compression-to-archive task: per-element DLT and truncation, then lossless
//! encoding into one `NKCZ` archive per field per firing.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{require_ctx, Intermediate};
use crate::compress::{encode, estimated_rmse, report_from_estimates, truncate, ArchiveMeta, Codec, TruncationSpec};
use crate::engine::{write_artifact, AsyncStage, CompressionRecord, InSituTask, SyncStage, TaskContext, TaskOutputs};
use crate::error::{Error, Result};
use crate::proxysim::{FieldKind, Mesh, SnapshotView};
use crate::spectral::{dlt_forward, SpectralBlock};
use crate::workers::WorkerGroup;

fn all_fields() -> Vec<FieldKind> {
    FieldKind::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionParams {
    pub epsilon: f64,
    #[serde(default)]
    pub codec: Codec,
    #[serde(default = "all_fields")]
    pub fields: Vec<FieldKind>,
}

impl CompressionParams {
    pub(super) fn validate(&self) -> Result<()> {
        TruncationSpec::new(self.epsilon)?;
        if self.fields.is_empty() {
            return Err(Error::config("compression needs at least one field"));
        }
        Ok(())
    }
}

/// One field's truncated spectra at one step.
#[derive(Debug, Clone)]
pub struct TruncatedField {
    pub step_index: u64,
    pub field: FieldKind,
    pub blocks: Vec<SpectralBlock>,
    pub estimated_rmse: Vec<f64>,
}

pub fn archive_name(field: FieldKind, step: u64) -> String {
    format!("{}_{step:08}.nkz", field.name())
}

fn truncate_fields(
    params: &CompressionParams,
    mesh: &Mesh,
    view: SnapshotView<'_>,
    workers: &WorkerGroup,
) -> Result<Vec<TruncatedField>> {
    let spec = TruncationSpec::new(params.epsilon)?;
    let basis = &mesh.basis;
    params
        .fields
        .iter()
        .map(|&kind| {
            let elements = view.field(kind)?;
            let pairs = workers
                .map(elements, |_, f| -> Result<(SpectralBlock, f64)> {
                    let full = dlt_forward(f, basis)?;
                    let kept = truncate(&full, basis, spec);
                    let rmse = estimated_rmse(&full, &kept, basis);
                    Ok((kept, rmse))
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let (blocks, estimated_rmse) = pairs.into_iter().unzip();
            Ok(TruncatedField {
                step_index: view.step_index,
                field: kind,
                blocks,
                estimated_rmse,
            })
        })
        .collect()
}

fn encode_and_write(
    params: &CompressionParams,
    out_dir: &std::path::Path,
    order: usize,
    tf: TruncatedField,
    outputs: &mut TaskOutputs,
) -> Result<()> {
    let meta = ArchiveMeta {
        order,
        epsilon: params.epsilon,
        field_name: tf.field.name().to_owned(),
    };
    let archive = encode(&tf.blocks, &meta, params.codec)?;
    let artifact = write_artifact(out_dir, &archive_name(tf.field, tf.step_index), archive.as_bytes())?;
    outputs.artifacts.push(artifact);
    outputs.compression.push(CompressionRecord {
        step: tf.step_index,
        field: meta.field_name,
        report: report_from_estimates(&archive, tf.estimated_rmse),
    });
    Ok(())
}

struct Setup {
    out_dir: PathBuf,
    mesh: Arc<Mesh>,
}

fn setup(ctx: &TaskContext) -> Setup {
    Setup {
        out_dir: ctx.out_dir.clone(),
        mesh: Arc::clone(&ctx.mesh),
    }
}

/// Whole compression pipeline in one `check`.
pub struct CompressionTask {
    params: CompressionParams,
    setup: Option<Setup>,
    outputs: TaskOutputs,
}

impl CompressionTask {
    pub fn new(params: CompressionParams) -> Self {
        Self {
            params,
            setup: None,
            outputs: TaskOutputs::default(),
        }
    }
}

impl InSituTask for CompressionTask {
    fn name(&self) -> &'static str {
        "compression"
    }

    fn needed_fields(&self) -> Vec<FieldKind> {
        self.params.fields.clone()
    }

    fn init(&mut self, ctx: &TaskContext) -> Result<()> {
        self.params.validate()?;
        self.setup = Some(setup(ctx));
        Ok(())
    }

    fn check(&mut self, view: SnapshotView<'_>, workers: &WorkerGroup) -> Result<()> {
        let s = require_ctx(&self.setup, "compression")?;
        for tf in truncate_fields(&self.params, &s.mesh, view, workers)? {
            encode_and_write(&self.params, &s.out_dir, s.mesh.cfg.order, tf, &mut self.outputs)?;
        }
        Ok(())
    }

    fn end(&mut self) -> Result<TaskOutputs> {
        Ok(std::mem::take(&mut self.outputs))
    }
}

/// Inline truncation.
pub struct CompressionSync {
    params: CompressionParams,
    mesh: Option<Arc<Mesh>>,
    pending: Vec<TruncatedField>,
}

/// Concurrent lossless encoding and writing.
pub struct CompressionAsync {
    params: CompressionParams,
    setup: Option<Setup>,
    outputs: TaskOutputs,
}

pub fn hybrid(params: CompressionParams) -> (CompressionSync, CompressionAsync) {
    (
        CompressionSync {
            params: params.clone(),
            mesh: None,
            pending: Vec::new(),
        },
        CompressionAsync {
            params,
            setup: None,
            outputs: TaskOutputs::default(),
        },
    )
}

impl SyncStage for CompressionSync {
    fn init(&mut self, ctx: &TaskContext) -> Result<()> {
        self.params.validate()?;
        self.mesh = Some(Arc::clone(&ctx.mesh));
        Ok(())
    }

    fn sync_part(&mut self, view: SnapshotView<'_>, workers: &WorkerGroup) -> Result<()> {
        let mesh = require_ctx(&self.mesh, "compression sync")?;
        let fields = truncate_fields(&self.params, mesh, view, workers)?;
        self.pending.extend(fields);
        Ok(())
    }

    fn take_intermediate(&mut self, step_index: u64) -> Result<Option<Intermediate>> {
        if self.pending.is_empty() {
            return Ok(None);
        }
        Ok(Some(Intermediate::Truncated {
            step_index,
            fields: std::mem::take(&mut self.pending),
        }))
    }

    fn end(&mut self) -> Result<TaskOutputs> {
        Ok(TaskOutputs::default())
    }
}

impl AsyncStage for CompressionAsync {
    fn init(&mut self, ctx: &TaskContext) -> Result<()> {
        self.setup = Some(setup(ctx));
        Ok(())
    }

    fn async_part(&mut self, data: Intermediate, _workers: &WorkerGroup) -> Result<()> {
        let s = require_ctx(&self.setup, "compression async")?;
        let Intermediate::Truncated { fields, .. } = data else {
            return Err(Error::Other("compression async part got foreign data".into()));
        };
        for tf in fields {
            encode_and_write(&self.params, &s.out_dir, s.mesh.cfg.order, tf, &mut self.outputs)?;
        }
        Ok(())
    }

    fn end(&mut self) -> Result<TaskOutputs> {
        Ok(std::mem::take(&mut self.outputs))
    }
}
