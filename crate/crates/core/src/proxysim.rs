//! Deterministic proxy solver: pressure and three velocity components on a
//! box of spectral elements, driven by a phase-rotating Fourier forcing.
//!
//! Each step, for every element and field:
//!
//! ```text
//! f' = F(t + dt) + 1/2 (f - F(t)) + kappa * tanh(dt * (d/dx + d/dy + d/dz) f)
//! ```
//!
//! `F` is a superposition of `n_modes` plane waves whose phases rotate with
//! time. The deviation `f - F` contracts by 1/2 per step and receives at most
//! `kappa` per step, so it stays below `2 kappa` and fields remain bounded.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{apply_axis, derivative_matrix, gll_basis, unflatten, Basis1D, ElementField};
use crate::workers::{block_range, WorkerGroup};

const DEVIATION_GAIN: f64 = 0.01;
const MAX_WAVENUMBER: u32 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Pressure,
    VelX,
    VelY,
    VelZ,
}

impl FieldKind {
    pub const ALL: [FieldKind; 4] = [
        FieldKind::Pressure,
        FieldKind::VelX,
        FieldKind::VelY,
        FieldKind::VelZ,
    ];
    pub const VELOCITY: [FieldKind; 3] = [FieldKind::VelX, FieldKind::VelY, FieldKind::VelZ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Pressure => "pressure",
            FieldKind::VelX => "vel_x",
            FieldKind::VelY => "vel_y",
            FieldKind::VelZ => "vel_z",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        FieldKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown field {s:?}")))
    }
}

fn default_slope() -> f64 {
    -5.0 / 3.0
}
fn default_modes() -> usize {
    32
}
fn default_dt() -> f64 {
    1e-2
}
fn default_order() -> usize {
    7
}
fn default_elements() -> [usize; 3] {
    [4, 4, 4]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    #[serde(default = "default_elements")]
    pub elements_per_axis: [usize; 3],
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_slope")]
    pub spectrum_slope: f64,
    #[serde(default = "default_modes")]
    pub n_modes: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            elements_per_axis: default_elements(),
            order: default_order(),
            seed: 0,
            spectrum_slope: default_slope(),
            n_modes: default_modes(),
            dt: default_dt(),
        }
    }
}

impl MeshConfig {
    pub fn element_count(&self) -> usize {
        self.elements_per_axis.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.elements_per_axis.contains(&0) {
            return Err(Error::config("elements_per_axis entries must be >= 1"));
        }
        if !(1..=crate::spectral::MAX_ORDER).contains(&self.order) {
            return Err(Error::InvalidOrder(self.order));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("dt must be finite and > 0"));
        }
        if !self.spectrum_slope.is_finite() {
            return Err(Error::config("spectrum_slope must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Mode {
    wave: [f64; 3],
    amplitude: f64,
    phase: f64,
    omega: f64,
}

/// Geometry, basis and forcing tables shared by every state of one run.
#[derive(Debug)]
pub struct Mesh {
    pub cfg: MeshConfig,
    pub basis: Basis1D,
    derivative: Vec<f64>,
    modes: [Vec<Mode>; 4],
    /// Per field, per element: `modes * 3 * n` entries of `(cos, sin)` of
    /// `wave_a * x_a` at the element's nodes along axis `a`.
    tables: [Vec<Vec<(f64, f64)>>; 4],
}

impl Mesh {
    pub fn new(cfg: MeshConfig) -> Result<Self> {
        cfg.validate()?;
        let basis = gll_basis(cfg.order)?;
        let derivative = derivative_matrix(&basis);
        let modes: [Vec<Mode>; 4] = FieldKind::ALL.map(|kind| draw_modes(&cfg, kind));
        let n = basis.len();
        let tables = FieldKind::ALL.map(|kind| {
            (0..cfg.element_count())
                .map(|e| {
                    let coords = element_coords(&cfg, &basis, e);
                    let mut t = Vec::with_capacity(modes[kind.index()].len() * 3 * n);
                    for m in &modes[kind.index()] {
                        for (axis, xs) in coords.iter().enumerate() {
                            t.extend(xs.iter().map(|x| {
                                let a = m.wave[axis] * x;
                                (a.cos(), a.sin())
                            }));
                        }
                    }
                    t
                })
                .collect()
        });
        Ok(Self {
            cfg,
            basis,
            derivative,
            modes,
            tables,
        })
    }

    pub fn element_count(&self) -> usize {
        self.cfg.element_count()
    }

    pub fn element_size(&self) -> [f64; 3] {
        self.cfg.elements_per_axis.map(|e| 1.0 / e as f64)
    }

    /// Integer element coordinates of a flat element id.
    pub fn element_index(&self, e: usize) -> [usize; 3] {
        let [ex, ey, _] = self.cfg.elements_per_axis;
        [e % ex, (e / ex) % ey, e / (ex * ey)]
    }

    pub fn element_id(&self, idx: [usize; 3]) -> usize {
        let [ex, ey, _] = self.cfg.elements_per_axis;
        idx[0] + ex * (idx[1] + ey * idx[2])
    }

    /// Physical node coordinates of element `e`, per axis.
    pub fn node_coords(&self, e: usize) -> [Vec<f64>; 3] {
        element_coords(&self.cfg, &self.basis, e)
    }

    fn forcing(&self, kind: FieldKind, e: usize, time: f64, out: &mut [f64]) {
        let n = self.basis.len();
        let table = &self.tables[kind.index()][e];
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut yz = vec![(0.0, 0.0); n * n];
        for (m, mode) in self.modes[kind.index()].iter().enumerate() {
            let t = &table[m * 3 * n..(m + 1) * 3 * n];
            let (tx, rest) = t.split_at(n);
            let (ty, tz) = rest.split_at(n);
            let theta = mode.phase + mode.omega * time;
            let c = (mode.amplitude * theta.cos(), mode.amplitude * theta.sin());
            for (k, z) in tz.iter().enumerate() {
                let cz = cmul(c, *z);
                for (j, y) in ty.iter().enumerate() {
                    yz[k * n + j] = cmul(cz, *y);
                }
            }
            for (row, a) in yz.iter().enumerate() {
                let dst = &mut out[row * n..(row + 1) * n];
                for (v, x) in dst.iter_mut().zip(tx) {
                    *v += a.0 * x.0 - a.1 * x.1;
                }
            }
        }
    }
}

fn cmul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

fn element_coords(cfg: &MeshConfig, basis: &Basis1D, e: usize) -> [Vec<f64>; 3] {
    let [ex, ey, _] = cfg.elements_per_axis;
    let idx = [e % ex, (e / ex) % ey, e / (ex * ey)];
    std::array::from_fn(|a| {
        let h = 1.0 / cfg.elements_per_axis[a] as f64;
        let x0 = idx[a] as f64 * h;
        basis
            .nodes()
            .iter()
            .map(|xi| x0 + 0.5 * (xi + 1.0) * h)
            .collect()
    })
}

fn draw_modes(cfg: &MeshConfig, kind: FieldKind) -> Vec<Mode> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(kind.index() as u64 + 1);
    let two_pi = std::f64::consts::TAU;
    let mut modes: Vec<Mode> = (0..cfg.n_modes)
        .map(|_| {
            let k = rng.random_range(1..=MAX_WAVENUMBER) as f64;
            let cz: f64 = rng.random_range(-1.0..1.0);
            let az: f64 = rng.random_range(0.0..two_pi);
            let sz = (1.0 - cz * cz).sqrt();
            let dir = [sz * az.cos(), sz * az.sin(), cz];
            Mode {
                wave: dir.map(|d| two_pi * k * d),
                amplitude: k.powf(cfg.spectrum_slope / 2.0),
                phase: rng.random_range(0.0..two_pi),
                omega: two_pi * k,
            }
        })
        .collect();
    // Unit RMS for a field of independent phases.
    let power: f64 = modes.iter().map(|m| m.amplitude * m.amplitude).sum();
    if power > 0.0 {
        let scale = (2.0 / power).sqrt();
        modes.iter_mut().for_each(|m| m.amplitude *= scale);
    }
    modes
}

/// Simulation data at one step.
#[derive(Debug, Clone)]
pub struct SimState {
    pub time: f64,
    pub step_index: u64,
    pub mesh: Arc<Mesh>,
    fields: [Vec<ElementField>; 4],
    forcing: [Vec<Vec<f64>>; 4],
}

impl PartialEq for SimState {
    fn eq(&self, other: &Self) -> bool {
        self.time.to_bits() == other.time.to_bits()
            && self.step_index == other.step_index
            && self.fields == other.fields
            && self.forcing == other.forcing
    }
}

pub fn init_state(cfg: &MeshConfig) -> Result<SimState> {
    let mesh = Arc::new(Mesh::new(cfg.clone())?);
    Ok(SimState::from_mesh(mesh))
}

impl SimState {
    pub fn from_mesh(mesh: Arc<Mesh>) -> Self {
        let n3 = mesh.basis.element_len();
        let order = mesh.cfg.order;
        let forcing: [Vec<Vec<f64>>; 4] = FieldKind::ALL.map(|kind| {
            (0..mesh.element_count())
                .map(|e| {
                    let mut v = vec![0.0; n3];
                    mesh.forcing(kind, e, 0.0, &mut v);
                    v
                })
                .collect()
        });
        let fields = std::array::from_fn(|f| {
            forcing[f]
                .iter()
                .enumerate()
                .map(|(e, v)| ElementField {
                    order,
                    element_id: e as u64,
                    values: v.clone(),
                })
                .collect()
        });
        Self {
            time: 0.0,
            step_index: 0,
            mesh,
            fields,
            forcing,
        }
    }

    pub fn field(&self, kind: FieldKind) -> &[ElementField] {
        &self.fields[kind.index()]
    }

    pub fn element_count(&self) -> usize {
        self.mesh.element_count()
    }

    /// Element ranges owned by each of `workers` simulation workers.
    pub fn ownership(&self, workers: usize) -> Vec<std::ops::Range<usize>> {
        (0..workers)
            .map(|w| block_range(self.element_count(), workers, w))
            .collect()
    }

    pub fn view(&self) -> SnapshotView<'_> {
        SnapshotView {
            step_index: self.step_index,
            time: self.time,
            mesh: &self.mesh,
            fields: FieldKind::ALL.map(|k| Some(self.fields[k.index()].as_slice())),
        }
    }

    /// Deep copy of the requested fields.
    pub fn snapshot(&self, needed: &[FieldKind]) -> FieldSnapshot {
        FieldSnapshot {
            step_index: self.step_index,
            time: self.time,
            mesh: Arc::clone(&self.mesh),
            fields: FieldKind::ALL.map(|k| needed.contains(&k).then(|| self.fields[k.index()].clone())),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.fields
            .iter()
            .flatten()
            .flat_map(|f| f.values.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Advances the state by one `dt`, fanning elements across `workers`.
pub fn step(state: &mut SimState, workers: &WorkerGroup) {
    let mesh = Arc::clone(&state.mesh);
    let t_next = (state.step_index + 1) as f64 * mesh.cfg.dt;
    let dt = mesh.cfg.dt;
    let n = mesh.basis.len();
    let h = mesh.element_size();
    for kind in FieldKind::ALL {
        let fi = kind.index();
        let mut pairs: Vec<(&mut ElementField, &mut Vec<f64>)> = state.fields[fi]
            .iter_mut()
            .zip(state.forcing[fi].iter_mut())
            .collect();
        workers.for_each_mut(&mut pairs, |e, (field, forcing)| {
            let len = field.values.len();
            let mut grad = vec![0.0; len];
            let mut tmp = vec![0.0; len];
            for (axis, ha) in h.iter().enumerate() {
                apply_axis(&mesh.derivative, &field.values, n, axis, &mut tmp);
                let scale = 2.0 / ha;
                grad.iter_mut().zip(&tmp).for_each(|(g, d)| *g += scale * d);
            }
            let mut next_forcing = vec![0.0; len];
            mesh.forcing(kind, e, t_next, &mut next_forcing);
            for (q, v) in field.values.iter_mut().enumerate() {
                let deviation = *v - forcing[q];
                *v = next_forcing[q] + 0.5 * deviation + DEVIATION_GAIN * (dt * grad[q]).tanh();
            }
            **forcing = next_forcing;
        });
    }
    state.step_index += 1;
    state.time = t_next;
}

/// GLL-weighted mean of the velocity magnitude, one value per element.
pub fn element_average_velocity(view: &SnapshotView<'_>) -> Result<Vec<f64>> {
    let basis = &view.mesh.basis;
    let [vx, vy, vz] = FieldKind::VELOCITY.map(|k| view.field(k));
    let (vx, vy, vz) = (vx?, vy?, vz?);
    let volume: f64 = (0..basis.element_len()).map(|i| basis.weight3(i)).sum();
    Ok((0..vx.len())
        .map(|e| {
            let mut acc = 0.0;
            for q in 0..basis.element_len() {
                let (a, b, c) = (vx[e].values[q], vy[e].values[q], vz[e].values[q]);
                acc += basis.weight3(q) * (a * a + b * b + c * c).sqrt();
            }
            acc / volume
        })
        .collect())
}

/// Borrowed access to (a subset of) the fields at one step.
#[derive(Debug, Clone, Copy)]
pub struct SnapshotView<'a> {
    pub step_index: u64,
    pub time: f64,
    pub mesh: &'a Mesh,
    pub fields: [Option<&'a [ElementField]>; 4],
}

impl<'a> SnapshotView<'a> {
    pub fn field(&self, kind: FieldKind) -> Result<&'a [ElementField]> {
        self.fields[kind.index()]
            .ok_or_else(|| Error::Other(format!("field {} not present in snapshot", kind.name())))
    }
}

/// Owned deep copy of fields handed to the in-situ side.
#[derive(Debug, Clone)]
pub struct FieldSnapshot {
    pub step_index: u64,
    pub time: f64,
    pub mesh: Arc<Mesh>,
    pub fields: [Option<Vec<ElementField>>; 4],
}

impl FieldSnapshot {
    pub fn view(&self) -> SnapshotView<'_> {
        SnapshotView {
            step_index: self.step_index,
            time: self.time,
            mesh: &self.mesh,
            fields: std::array::from_fn(|i| self.fields[i].as_deref()),
        }
    }
}

/// Nodal coordinates of element `e` flattened in field layout (x fastest).
pub fn nodal_positions(mesh: &Mesh, e: usize) -> Vec<[f64; 3]> {
    let coords = mesh.node_coords(e);
    let n = mesh.basis.len();
    (0..n * n * n)
        .map(|flat| {
            let (i, j, k) = unflatten(flat, n);
            [coords[0][i], coords[1][j], coords[2][k]]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> MeshConfig {
        MeshConfig {
            elements_per_axis: [2, 2, 2],
            order: 4,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn zero_modes_stay_zero() {
        let cfg = MeshConfig {
            n_modes: 0,
            ..small(1)
        };
        let mut s = init_state(&cfg).unwrap();
        assert_eq!(s.max_abs(), 0.0);
        let g = WorkerGroup::new(1, "sim").unwrap();
        for _ in 0..5 {
            step(&mut s, &g);
        }
        assert_eq!(s.max_abs(), 0.0);
        assert_eq!(s.step_index, 5);
    }

    #[test]
    fn same_seed_same_state() {
        let a = init_state(&small(42)).unwrap();
        let b = init_state(&small(42)).unwrap();
        assert_eq!(a, b);
        let c = init_state(&small(43)).unwrap();
        assert_ne!(a.fields, c.fields);
    }

    #[test]
    fn worker_count_does_not_change_bits() {
        let mut a = init_state(&small(42)).unwrap();
        let mut b = a.clone();
        let g1 = WorkerGroup::new(1, "a").unwrap();
        let g8 = WorkerGroup::new(8, "b").unwrap();
        for _ in 0..10 {
            step(&mut a, &g1);
            step(&mut b, &g8);
        }
        assert_eq!(a, b);
    }

    #[test]
    fn forcing_matches_direct_sum() {
        let mesh = Mesh::new(small(3)).unwrap();
        let mut out = vec![0.0; mesh.basis.element_len()];
        let t = 0.37;
        mesh.forcing(FieldKind::VelY, 5, t, &mut out);
        let pos = nodal_positions(&mesh, 5);
        for (q, x) in pos.iter().enumerate() {
            let direct: f64 = mesh.modes[FieldKind::VelY.index()]
                .iter()
                .map(|m| {
                    let kx: f64 = (0..3).map(|a| m.wave[a] * x[a]).sum();
                    m.amplitude * (kx + m.phase + m.omega * t).cos()
                })
                .sum();
            assert!((out[q] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_velocity_average() {
        let mut s = init_state(&MeshConfig {
            n_modes: 0,
            ..small(0)
        })
        .unwrap();
        for f in &mut s.fields[FieldKind::VelX.index()] {
            f.values.iter_mut().for_each(|v| *v = 1.0);
        }
        let avg = element_average_velocity(&s.view()).unwrap();
        assert!(avg.iter().all(|a| (a - 1.0).abs() < 1e-14));
        let zero = init_state(&MeshConfig {
            n_modes: 0,
            ..small(0)
        })
        .unwrap();
        assert!(element_average_velocity(&zero.view()).unwrap().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn average_velocity_matches_loop_oracle() {
        let cfg = MeshConfig {
            order: 2,
            ..small(17)
        };
        let s = init_state(&cfg).unwrap();
        let avg = element_average_velocity(&s.view()).unwrap();
        let b = gll_basis(2).unwrap();
        let w = b.weights();
        assert_eq!(avg.len(), s.element_count());
        for (e, &got) in avg.iter().enumerate() {
            let (mut num, mut den) = (0.0, 0.0);
            for k in 0..3 {
                for j in 0..3 {
                    for i in 0..3 {
                        let q = i + 3 * j + 9 * k;
                        let ww = w[i] * w[j] * w[k];
                        let m = (s.field(FieldKind::VelX)[e].values[q].powi(2)
                            + s.field(FieldKind::VelY)[e].values[q].powi(2)
                            + s.field(FieldKind::VelZ)[e].values[q].powi(2))
                        .sqrt();
                        num += ww * m;
                        den += ww;
                    }
                }
            }
            assert!((got - num / den).abs() < 1e-12);
        }
    }

    #[test]
    fn snapshot_copies_only_needed() {
        let s = init_state(&small(1)).unwrap();
        let snap = s.snapshot(&[FieldKind::Pressure]);
        assert!(snap.fields[0].is_some());
        assert!(snap.fields[1].is_none());
        assert!(snap.view().field(FieldKind::VelX).is_err());
        assert_eq!(snap.view().field(FieldKind::Pressure).unwrap(), s.field(FieldKind::Pressure));
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = MeshConfig {
            elements_per_axis: [0, 1, 1],
            ..Default::default()
        };
        assert!(init_state(&bad).is_err());
        let bad = MeshConfig {
            dt: 0.0,
            ..Default::default()
        };
        assert!(init_state(&bad).is_err());
    }

    #[test]
    fn ownership_partitions_elements() {
        let s = init_state(&small(1)).unwrap();
        let own = s.ownership(3);
        assert_eq!(own, vec![0..3, 3..6, 6..8]);
    }
}
