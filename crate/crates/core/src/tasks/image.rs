//! Axis-aligned slice rendering to binary PPM.
//!
//! Workers interpolate the pixels covered by their share of the slice's
//! elements; the frame is then gathered, colour-mapped and encoded on the
//! calling thread alone.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::colormap;
use super::require_ctx;
use crate::engine::{write_artifact, InSituTask, TaskContext, TaskOutputs};
use crate::error::{Error, Result};
use crate::proxysim::{FieldKind, Mesh, SnapshotView};
use crate::spectral::{dlt_forward, legendre_all, ElementField};
use crate::workers::WorkerGroup;

const MAX_PIXELS_PER_AXIS: u32 = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }

    /// The two in-plane axes, horizontal first.
    pub fn in_plane(self) -> (usize, usize) {
        match self {
            Axis::X => (1, 2),
            Axis::Y => (0, 2),
            Axis::Z => (0, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageField {
    Pressure,
    VelX,
    VelY,
    VelZ,
    #[default]
    VelMag,
}

impl ImageField {
    pub fn needed(self) -> Vec<FieldKind> {
        match self {
            ImageField::Pressure => vec![FieldKind::Pressure],
            ImageField::VelX => vec![FieldKind::VelX],
            ImageField::VelY => vec![FieldKind::VelY],
            ImageField::VelZ => vec![FieldKind::VelZ],
            ImageField::VelMag => FieldKind::VELOCITY.to_vec(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ImageField::Pressure => "pressure",
            ImageField::VelX => "vel_x",
            ImageField::VelY => "vel_y",
            ImageField::VelZ => "vel_z",
            ImageField::VelMag => "vel_mag",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSpec {
    pub axis: Axis,
    /// Plane position as a fraction of the domain extent along `axis`.
    pub slice_position: f64,
    pub width: u32,
    pub height: u32,
    /// Explicit `[lo, hi]`; per-frame min/max when absent.
    #[serde(default)]
    pub value_range: Option<[f64; 2]>,
    #[serde(default)]
    pub field: ImageField,
}

impl ImageSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.slice_position) {
            return Err(Error::config(format!(
                "slice_position {} lies outside the domain [0, 1]",
                self.slice_position
            )));
        }
        for (name, v) in [("width", self.width), ("height", self.height)] {
            if !(1..=MAX_PIXELS_PER_AXIS).contains(&v) {
                return Err(Error::config(format!(
                    "image {name} must be in 1..={MAX_PIXELS_PER_AXIS}, got {v}"
                )));
            }
        }
        if let Some([lo, hi]) = self.value_range {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(format!("value_range [{lo}, {hi}] needs finite lo < hi")));
            }
        }
        Ok(())
    }
}

/// Element index and Legendre values for one pixel column or row.
#[derive(Debug, Clone)]
struct Sample {
    element: usize,
    legendre: Vec<f64>,
}

fn samples(count: u32, elements: usize, order: usize, flip: bool) -> Vec<Sample> {
    (0..count)
        .map(|p| {
            let mut s = (p as f64 + 0.5) / count as f64;
            if flip {
                s = 1.0 - s;
            }
            let scaled = s * elements as f64;
            let element = (scaled.floor() as usize).min(elements - 1);
            let xi = 2.0 * (scaled - element as f64) - 1.0;
            Sample {
                element,
                legendre: legendre_all(order, xi),
            }
        })
        .collect()
}

/// Precomputed geometry of one slice through one mesh.
#[derive(Debug, Clone)]
pub struct SliceRenderer {
    spec: ImageSpec,
    n: usize,
    axes: [usize; 3],
    layer: usize,
    zeta: Vec<f64>,
    columns: Vec<Sample>,
    rows: Vec<Sample>,
    /// Slice elements as `(mesh element id, u index, v index)`.
    elements: Vec<(usize, usize, usize)>,
    cols_of: Vec<Vec<usize>>,
    rows_of: Vec<Vec<usize>>,
}

impl SliceRenderer {
    pub fn new(spec: ImageSpec, mesh: &Mesh) -> Result<Self> {
        spec.validate()?;
        let order = mesh.cfg.order;
        let epa = mesh.cfg.elements_per_axis;
        let a = spec.axis.index();
        let (u, v) = spec.axis.in_plane();
        let scaled = spec.slice_position * epa[a] as f64;
        let layer = (scaled.floor() as usize).min(epa[a] - 1);
        let zeta = legendre_all(order, 2.0 * (scaled - layer as f64) - 1.0);
        let columns = samples(spec.width, epa[u], order, false);
        let rows = samples(spec.height, epa[v], order, true);
        let mut cols_of = vec![Vec::new(); epa[u]];
        for (px, s) in columns.iter().enumerate() {
            cols_of[s.element].push(px);
        }
        let mut rows_of = vec![Vec::new(); epa[v]];
        for (py, s) in rows.iter().enumerate() {
            rows_of[s.element].push(py);
        }
        let mut elements = Vec::with_capacity(epa[u] * epa[v]);
        for iv in 0..epa[v] {
            for iu in 0..epa[u] {
                let mut idx = [0; 3];
                idx[a] = layer;
                idx[u] = iu;
                idx[v] = iv;
                elements.push((mesh.element_id(idx), iu, iv));
            }
        }
        Ok(Self {
            spec,
            n: order + 1,
            axes: [a, u, v],
            layer,
            zeta,
            columns,
            rows,
            elements,
            cols_of,
            rows_of,
        })
    }

    pub fn spec(&self) -> &ImageSpec {
        &self.spec
    }

    /// Element layer the plane cuts along the slice axis.
    pub fn layer(&self) -> usize {
        self.layer
    }

    fn element_values(&self, view: &SnapshotView<'_>, e: usize) -> Result<ElementField> {
        let field = match self.spec.field {
            ImageField::Pressure => view.field(FieldKind::Pressure)?[e].clone(),
            ImageField::VelX => view.field(FieldKind::VelX)?[e].clone(),
            ImageField::VelY => view.field(FieldKind::VelY)?[e].clone(),
            ImageField::VelZ => view.field(FieldKind::VelZ)?[e].clone(),
            ImageField::VelMag => {
                let [x, y, z] = FieldKind::VELOCITY.map(|k| view.field(k));
                let (x, y, z) = (&x?[e], &y?[e], &z?[e]);
                let values = x
                    .values
                    .iter()
                    .zip(&y.values)
                    .zip(&z.values)
                    .map(|((a, b), c)| (a * a + b * b + c * c).sqrt())
                    .collect();
                ElementField {
                    order: x.order,
                    element_id: x.element_id,
                    values,
                }
            }
        };
        Ok(field)
    }

    /// Coefficients summed against `P(zeta)` along the slice axis, indexed
    /// `[v_mode * n + u_mode]`.
    fn collapse(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let [a, u, v] = self.axes;
        let stride = |axis: usize| n.pow(axis as u32);
        let (sa, su, sv) = (stride(a), stride(u), stride(v));
        let mut grid = vec![0.0; n * n];
        for lv in 0..n {
            for lu in 0..n {
                let base = lu * su + lv * sv;
                grid[lv * n + lu] = (0..n).map(|la| coeffs[base + la * sa] * self.zeta[la]).sum();
            }
        }
        grid
    }

    /// Field values per pixel, row-major from the top-left.
    pub fn values(&self, view: SnapshotView<'_>, workers: &WorkerGroup) -> Result<Vec<f64>> {
        let basis = &view.mesh.basis;
        if basis.order() + 1 != self.n {
            return Err(Error::dimension("renderer and snapshot differ in order"));
        }
        let width = self.spec.width as usize;
        let parts = workers.run_blocks(self.elements.len(), |_, range| -> Result<Vec<(usize, f64)>> {
            let mut out = Vec::new();
            for &(e, iu, iv) in &self.elements[range] {
                let block = dlt_forward(&self.element_values(&view, e)?, basis)?;
                let grid = self.collapse(&block.coeffs);
                for &py in &self.rows_of[iv] {
                    let pv = &self.rows[py].legendre;
                    let line: Vec<f64> = (0..self.n)
                        .map(|lu| (0..self.n).map(|lv| grid[lv * self.n + lu] * pv[lv]).sum())
                        .collect();
                    for &px in &self.cols_of[iu] {
                        let pu = &self.columns[px].legendre;
                        let value = line.iter().zip(pu).map(|(c, p)| c * p).sum();
                        out.push((py * width + px, value));
                    }
                }
            }
            Ok(out)
        });
        // Gather through the calling thread only.
        let mut frame = vec![f64::NAN; width * self.spec.height as usize];
        for part in parts {
            for (pixel, value) in part? {
                frame[pixel] = value;
            }
        }
        Ok(frame)
    }

    pub fn ppm(&self, view: SnapshotView<'_>, workers: &WorkerGroup) -> Result<Vec<u8>> {
        let frame = self.values(view, workers)?;
        Ok(encode_ppm(&frame, self.spec.width, self.spec.height, self.spec.value_range))
    }
}

/// Colour-maps `frame` into a binary P6 image.
pub fn encode_ppm(frame: &[f64], width: u32, height: u32, range: Option<[f64; 2]>) -> Vec<u8> {
    let [lo, hi] = range.unwrap_or_else(|| {
        frame
            .iter()
            .fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], &v| [lo.min(v), hi.max(v)])
    });
    let header = format!("P6\n{width} {height}\n255\n");
    let mut out = Vec::with_capacity(header.len() + frame.len() * 3);
    out.extend_from_slice(header.as_bytes());
    for &v in frame {
        out.extend_from_slice(&colormap::color(v, lo, hi));
    }
    out
}

pub fn frame_name(step: u64) -> String {
    format!("frame_{step:08}.ppm")
}

struct Setup {
    out_dir: PathBuf,
    renderer: SliceRenderer,
}

pub struct ImageTask {
    spec: ImageSpec,
    setup: Option<Setup>,
    outputs: TaskOutputs,
}

impl ImageTask {
    pub fn new(spec: ImageSpec) -> Self {
        Self {
            spec,
            setup: None,
            outputs: TaskOutputs::default(),
        }
    }
}

impl InSituTask for ImageTask {
    fn name(&self) -> &'static str {
        "image"
    }

    fn needed_fields(&self) -> Vec<FieldKind> {
        self.spec.field.needed()
    }

    fn init(&mut self, ctx: &TaskContext) -> Result<()> {
        self.setup = Some(Setup {
            out_dir: ctx.out_dir.clone(),
            renderer: SliceRenderer::new(self.spec.clone(), &ctx.mesh)?,
        });
        Ok(())
    }

    fn check(&mut self, view: SnapshotView<'_>, workers: &WorkerGroup) -> Result<()> {
        let s = require_ctx(&self.setup, "image")?;
        let bytes = s.renderer.ppm(view, workers)?;
        let artifact = write_artifact(&s.out_dir, &frame_name(view.step_index), &bytes)?;
        self.outputs.artifacts.push(artifact);
        Ok(())
    }

    fn end(&mut self) -> Result<TaskOutputs> {
        Ok(std::mem::take(&mut self.outputs))
    }
}
