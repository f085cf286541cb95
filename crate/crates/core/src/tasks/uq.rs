//! Uncertainty of per-element time averages from a streaming estimate of
//! the autocorrelation function at a fixed set of training lags.
//!
//! Each firing pushes one sample per element (the GLL-weighted mean velocity
//! magnitude). Every `estimate_every` steps the ACF is fitted with
//! `rho(k) = exp(-k / tau)` and the standard error of the mean is
//! `sqrt(var * 2 tau_int / T)` with `tau_int = 1 / (1 - exp(-1 / tau)) - 1/2`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{require_ctx, Intermediate};
use crate::engine::{write_artifact, AsyncStage, InSituTask, SyncStage, TaskContext, TaskOutputs};
use crate::error::{Error, Result};
use crate::proxysim::{FieldKind, SnapshotView};
use crate::workers::WorkerGroup;

/// Lags whose sample ACF falls to this value or below are left out of the fit.
pub const USABLE_RHO: f64 = 0.05;
/// Pairs needed at every lag before an estimate is made.
pub const MIN_PAIRS: u64 = 10;
const MIN_FIT_LAGS: usize = 3;

fn default_lags() -> usize {
    50
}
fn default_estimate_every() -> u64 {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UqParams {
    /// Training lags `1..=n_lags`, in firings.
    #[serde(default = "default_lags")]
    pub n_lags: usize,
    #[serde(default = "default_estimate_every")]
    pub estimate_every: u64,
}

impl Default for UqParams {
    fn default() -> Self {
        Self {
            n_lags: default_lags(),
            estimate_every: default_estimate_every(),
        }
    }
}

impl UqParams {
    pub(super) fn validate(&self) -> Result<()> {
        if self.n_lags == 0 {
            return Err(Error::config("uq n_lags must be >= 1"));
        }
        if self.estimate_every == 0 {
            return Err(Error::config("uq estimate_every must be >= 1"));
        }
        Ok(())
    }
}

/// Streaming sums for one series. Values are stored relative to the first
/// sample to keep the moment sums well conditioned.
#[derive(Debug, Clone, PartialEq)]
struct SeriesLags {
    shift: f64,
    count: u64,
    sum: f64,
    sum_sq: f64,
    ring: Vec<f64>,
    cross: Vec<f64>,
    lag_sum: Vec<f64>,
    lead_sum: Vec<f64>,
    pairs: Vec<u64>,
}

impl SeriesLags {
    fn new(lags: usize) -> Self {
        Self {
            shift: 0.0,
            count: 0,
            sum: 0.0,
            sum_sq: 0.0,
            ring: vec![0.0; lags],
            cross: vec![0.0; lags],
            lag_sum: vec![0.0; lags],
            lead_sum: vec![0.0; lags],
            pairs: vec![0; lags],
        }
    }

    fn push(&mut self, x: f64) {
        if self.count == 0 {
            self.shift = x;
        }
        let y = x - self.shift;
        let k_max = self.ring.len();
        let n = self.count as usize;
        for k in 1..=k_max.min(n) {
            let prev = self.ring[(n - k) % k_max];
            self.cross[k - 1] += prev * y;
            self.lag_sum[k - 1] += prev;
            self.lead_sum[k - 1] += y;
            self.pairs[k - 1] += 1;
        }
        self.ring[n % k_max] = y;
        self.count += 1;
        self.sum += y;
        self.sum_sq += y * y;
    }

    fn shifted_mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    fn variance(&self) -> f64 {
        let mu = self.shifted_mean();
        (self.sum_sq / self.count as f64 - mu * mu).max(0.0)
    }

    fn acf(&self) -> Vec<f64> {
        let var = self.variance();
        let mu = self.shifted_mean();
        (0..self.ring.len())
            .map(|i| {
                let nk = self.pairs[i] as f64;
                if self.pairs[i] == 0 || var <= 0.0 {
                    return 1.0;
                }
                let cov = (self.cross[i] - mu * (self.lag_sum[i] + self.lead_sum[i]) + nk * mu * mu) / nk;
                cov / var
            })
            .collect()
    }
}

/// Sample autocorrelation state at lags `1..=K` for every element.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLags {
    lags: usize,
    series: Vec<SeriesLags>,
}

impl TrainingLags {
    pub fn new(elements: usize, lags: usize) -> Result<Self> {
        if lags == 0 {
            return Err(Error::config("need at least one training lag"));
        }
        Ok(Self {
            lags,
            series: vec![SeriesLags::new(lags); elements],
        })
    }

    pub fn lag_count(&self) -> usize {
        self.lags
    }

    pub fn element_count(&self) -> usize {
        self.series.len()
    }

    /// Samples pushed so far.
    pub fn samples(&self) -> u64 {
        self.series.first().map_or(0, |s| s.count)
    }

    /// Pairs formed at lag `k` (1-based).
    pub fn pairs(&self, k: usize) -> u64 {
        self.series.first().map_or(0, |s| s.pairs[k - 1])
    }

    /// Every lag has at least [`MIN_PAIRS`] pairs.
    pub fn ready(&self) -> bool {
        !self.series.is_empty() && self.pairs(self.lags) >= MIN_PAIRS
    }

    /// Pushes one value per element.
    pub fn update(&mut self, values: &[f64], workers: &WorkerGroup) -> Result<()> {
        if values.len() != self.series.len() {
            return Err(Error::dimension(format!(
                "{} values for {} elements",
                values.len(),
                self.series.len()
            )));
        }
        workers.for_each_mut(&mut self.series, |e, s| s.push(values[e]));
        Ok(())
    }

    pub fn mean(&self, element: usize) -> f64 {
        let s = &self.series[element];
        s.shift + s.shifted_mean()
    }

    pub fn variance(&self, element: usize) -> f64 {
        self.series[element].variance()
    }

    /// `rho(k)` for `k = 1..=K`; 1 wherever the variance is zero.
    pub fn acf(&self, element: usize) -> Vec<f64> {
        self.series[element].acf()
    }

    pub fn estimate_element(&self, element: usize) -> UqResult {
        let s = &self.series[element];
        let t = s.count as f64;
        let rho = s.acf();
        let fit = fit_tau(&rho, t);
        let variance = s.variance();
        let tau_int = integrated_time(fit.tau);
        UqResult {
            element_id: element as u64,
            mean: s.shift + s.shifted_mean(),
            variance,
            tau: fit.tau,
            tau_int,
            uncertainty: (variance * 2.0 * tau_int / t).sqrt(),
            fit_residual: fit.residual,
            fit: fit.kind,
            samples: s.count,
        }
    }

    /// Per-element results; fails until [`TrainingLags::ready`].
    pub fn estimate(&self, workers: &WorkerGroup) -> Result<Vec<UqResult>> {
        if !self.ready() {
            return Err(Error::Other(format!(
                "uq estimate needs {MIN_PAIRS} pairs at lag {}, have {}",
                self.lags,
                self.pairs(self.lags)
            )));
        }
        let ids: Vec<usize> = (0..self.series.len()).collect();
        Ok(workers.map(&ids, |_, &e| self.estimate_element(e)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    /// Least squares over three or more usable lags.
    Exponential,
    /// Only `rho(1)` was usable.
    SingleLag,
    /// No usable lag; `tau = 0` and `tau_int = 1/2`.
    Floor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauFit {
    pub tau: f64,
    pub residual: f64,
    pub kind: FitKind,
}

/// Fits `rho(k) = exp(-k / tau)` to `rho[k - 1]`, using the leading run of
/// lags above [`USABLE_RHO`]. `tau` is capped at `t`.
pub fn fit_tau(rho: &[f64], t: f64) -> TauFit {
    let usable = rho.iter().take_while(|&&r| r > USABLE_RHO).count();
    let cap = |tau: f64| if tau.is_finite() { tau.min(t) } else { t };
    if usable >= MIN_FIT_LAGS {
        // Weighted by rho^2, the inverse variance of ln(rho) to first order.
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &r) in rho[..usable].iter().enumerate() {
            let k = (i + 1) as f64;
            let w = r * r;
            num += w * k * r.ln();
            den += w * k * k;
        }
        let slope = num / den;
        let tau = if slope < 0.0 { cap(-1.0 / slope) } else { t };
        return TauFit {
            tau,
            residual: model_rms(&rho[..usable], tau),
            kind: FitKind::Exponential,
        };
    }
    if usable >= 1 {
        let r = rho[0];
        let tau = if r < 1.0 { cap(-1.0 / r.ln()) } else { t };
        return TauFit {
            tau,
            residual: model_rms(&rho[..usable], tau),
            kind: FitKind::SingleLag,
        };
    }
    TauFit {
        tau: 0.0,
        residual: model_rms(rho, 0.0),
        kind: FitKind::Floor,
    }
}

fn model_rms(rho: &[f64], tau: f64) -> f64 {
    if rho.is_empty() {
        return 0.0;
    }
    let ss: f64 = rho
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let model = if tau > 0.0 { (-((i + 1) as f64) / tau).exp() } else { 0.0 };
            (r - model).powi(2)
        })
        .sum();
    (ss / rho.len() as f64).sqrt()
}

/// `sum_{k>=0} exp(-k / tau) - 1/2`; 1/2 at `tau = 0`.
pub fn integrated_time(tau: f64) -> f64 {
    if tau <= 0.0 {
        return 0.5;
    }
    1.0 / (1.0 - (-1.0 / tau).exp()) - 0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqResult {
    pub element_id: u64,
    pub mean: f64,
    pub variance: f64,
    pub tau: f64,
    pub tau_int: f64,
    pub uncertainty: f64,
    pub fit_residual: f64,
    pub fit: FitKind,
    pub samples: u64,
}

#[derive(Serialize)]
struct CsvRow {
    element_id: u64,
    mean: f64,
    variance: f64,
    tau_int: f64,
    uncertainty: f64,
    fit_residual: f64,
}

pub fn results_csv(results: &[UqResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in results {
        w.serialize(CsvRow {
            element_id: r.element_id,
            mean: r.mean,
            variance: r.variance,
            tau_int: r.tau_int,
            uncertainty: r.uncertainty,
            fit_residual: r.fit_residual,
        })
        .map_err(|e| Error::Other(format!("uq csv: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| Error::Other(format!("uq csv: {e}")))
}

pub fn csv_name(step: u64) -> String {
    format!("uq_{step:08}.csv")
}

/// Mean velocity magnitude per element, split across `workers`.
fn element_samples(view: &SnapshotView<'_>, workers: &WorkerGroup) -> Result<Vec<f64>> {
    let basis = &view.mesh.basis;
    let [vx, vy, vz] = FieldKind::VELOCITY.map(|k| view.field(k));
    let (vx, vy, vz) = (vx?, vy?, vz?);
    let volume: f64 = (0..basis.element_len()).map(|q| basis.weight3(q)).sum();
    Ok(workers.map(vx, |e, x| {
        let mut acc = 0.0;
        for (q, a) in x.values.iter().enumerate() {
            let (b, c) = (vy[e].values[q], vz[e].values[q]);
            acc += basis.weight3(q) * (a * a + b * b + c * c).sqrt();
        }
        acc / volume
    }))
}

fn due(params: &UqParams, step: u64, lags: &TrainingLags) -> bool {
    step.is_multiple_of(params.estimate_every) && lags.ready()
}

fn write_estimate(
    lags: &TrainingLags,
    step: u64,
    out_dir: &std::path::Path,
    workers: &WorkerGroup,
    outputs: &mut TaskOutputs,
) -> Result<()> {
    let results = lags.estimate(workers)?;
    let bytes = results_csv(&results)?;
    outputs.artifacts.push(write_artifact(out_dir, &csv_name(step), &bytes)?);
    Ok(())
}

struct Setup {
    out_dir: PathBuf,
    lags: TrainingLags,
}

fn setup(params: &UqParams, ctx: &TaskContext) -> Result<Setup> {
    params.validate()?;
    Ok(Setup {
        out_dir: ctx.out_dir.clone(),
        lags: TrainingLags::new(ctx.mesh.element_count(), params.n_lags)?,
    })
}

/// Lag updates and estimates in one `check`.
pub struct UqTask {
    params: UqParams,
    setup: Option<Setup>,
    outputs: TaskOutputs,
}

impl UqTask {
    pub fn new(params: UqParams) -> Self {
        Self {
            params,
            setup: None,
            outputs: TaskOutputs::default(),
        }
    }
}

impl InSituTask for UqTask {
    fn name(&self) -> &'static str {
        "uq"
    }

    fn needed_fields(&self) -> Vec<FieldKind> {
        FieldKind::VELOCITY.to_vec()
    }

    fn init(&mut self, ctx: &TaskContext) -> Result<()> {
        self.setup = Some(setup(&self.params, ctx)?);
        Ok(())
    }

    fn check(&mut self, view: SnapshotView<'_>, workers: &WorkerGroup) -> Result<()> {
        require_ctx(&self.setup, "uq")?;
        let s = self.setup.as_mut().expect("checked above");
        let values = element_samples(&view, workers)?;
        s.lags.update(&values, workers)?;
        if due(&self.params, view.step_index, &s.lags) {
            write_estimate(&s.lags, view.step_index, &s.out_dir, workers, &mut self.outputs)?;
        }
        Ok(())
    }

    fn end(&mut self) -> Result<TaskOutputs> {
        Ok(std::mem::take(&mut self.outputs))
    }
}

/// Inline lag updates.
pub struct UqSync {
    params: UqParams,
    lags: Option<TrainingLags>,
    last_step: Option<u64>,
}

/// Concurrent fit and CSV output.
pub struct UqAsync {
    params: UqParams,
    out_dir: Option<PathBuf>,
    outputs: TaskOutputs,
}

pub fn hybrid(params: UqParams) -> (UqSync, UqAsync) {
    (
        UqSync {
            params: params.clone(),
            lags: None,
            last_step: None,
        },
        UqAsync {
            params,
            out_dir: None,
            outputs: TaskOutputs::default(),
        },
    )
}

impl SyncStage for UqSync {
    fn init(&mut self, ctx: &TaskContext) -> Result<()> {
        self.lags = Some(setup(&self.params, ctx)?.lags);
        Ok(())
    }

    fn sync_part(&mut self, view: SnapshotView<'_>, workers: &WorkerGroup) -> Result<()> {
        require_ctx(&self.lags, "uq sync")?;
        let values = element_samples(&view, workers)?;
        self.lags.as_mut().expect("checked above").update(&values, workers)?;
        self.last_step = Some(view.step_index);
        Ok(())
    }

    /// Ships a copy of the lags only at estimation steps that saw an update.
    fn take_intermediate(&mut self, step_index: u64) -> Result<Option<Intermediate>> {
        let lags = require_ctx(&self.lags, "uq sync")?;
        if self.last_step != Some(step_index) || !due(&self.params, step_index, lags) {
            return Ok(None);
        }
        Ok(Some(Intermediate::Lags {
            step_index,
            lags: Box::new(lags.clone()),
        }))
    }

    fn end(&mut self) -> Result<TaskOutputs> {
        Ok(TaskOutputs::default())
    }
}

impl AsyncStage for UqAsync {
    fn init(&mut self, ctx: &TaskContext) -> Result<()> {
        self.params.validate()?;
        self.out_dir = Some(ctx.out_dir.clone());
        Ok(())
    }

    fn async_part(&mut self, data: Intermediate, workers: &WorkerGroup) -> Result<()> {
        let out_dir = require_ctx(&self.out_dir, "uq async")?;
        let Intermediate::Lags { step_index, lags } = data else {
            return Err(Error::Other("uq async part got foreign data".into()));
        };
        write_estimate(&lags, step_index, out_dir, workers, &mut self.outputs)
    }

    fn end(&mut self) -> Result<TaskOutputs> {
        Ok(std::mem::take(&mut self.outputs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn push_all(series: &[f64], lags: usize) -> TrainingLags {
        let mut t = TrainingLags::new(1, lags).unwrap();
        let g = WorkerGroup::new(1, "w").unwrap();
        for &x in series {
            t.update(&[x], &g).unwrap();
        }
        t
    }

    fn batch_acf(x: &[f64], lags: usize) -> Vec<f64> {
        let n = x.len() as f64;
        let mu = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
        (1..=lags)
            .map(|k| {
                let m = x.len() - k;
                let c: f64 = (0..m).map(|t| (x[t] - mu) * (x[t + k] - mu)).sum();
                c / m as f64 / var
            })
            .collect()
    }

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn constant_series_rho_one() {
        let t = push_all(&[3.25; 40], 5);
        assert_eq!(t.acf(0), vec![1.0; 5]);
        assert_eq!(t.variance(0), 0.0);
        let r = t.estimate_element(0);
        assert_eq!(r.uncertainty, 0.0);
    }

    #[test]
    fn alternating_series() {
        let x: Vec<f64> = (0..2000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let rho = push_all(&x, 2).acf(0);
        assert!((rho[0] + 1.0).abs() < 1e-3);
        assert!((rho[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn streaming_matches_batch() {
        let x: Vec<f64> = noise(5, 3000).iter().map(|v| 100.0 + v).collect();
        let s = push_all(&x, 12).acf(0);
        let b = batch_acf(&x, 12);
        for (a, b) in s.iter().zip(&b) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn readiness_needs_pairs_at_every_lag() {
        let t = push_all(&noise(1, 14), 5);
        assert_eq!(t.pairs(5), 9);
        assert!(!t.ready());
        assert!(t.estimate(&WorkerGroup::new(1, "w").unwrap()).is_err());
        let t = push_all(&noise(1, 15), 5);
        assert!(t.ready());
    }

    #[test]
    fn tau_int_closed_form() {
        for tau in [0.3, 1.0, 9.49, 50.0] {
            let direct: f64 = (0..100_000).map(|k| (-(k as f64) / tau).exp()).sum::<f64>() - 0.5;
            assert!((integrated_time(tau) - direct).abs() < 1e-9);
        }
        assert_eq!(integrated_time(0.0), 0.5);
    }

    #[test]
    fn exact_exponential_recovered() {
        let rho: Vec<f64> = (1..=30).map(|k| (-(k as f64) / 7.0).exp()).collect();
        let f = fit_tau(&rho, 1e5);
        assert_eq!(f.kind, FitKind::Exponential);
        assert!((f.tau - 7.0).abs() < 1e-9);
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn fit_fallbacks() {
        let f = fit_tau(&[0.5, 0.01, 0.3], 100.0);
        assert_eq!(f.kind, FitKind::SingleLag);
        assert!((f.tau + 1.0 / 0.5f64.ln()).abs() < 1e-12);
        let f = fit_tau(&[0.01, -0.02], 100.0);
        assert_eq!(f.kind, FitKind::Floor);
        assert_eq!(f.tau, 0.0);
        assert!(f.residual > 0.0);
        let f = fit_tau(&[1.0, 1.0, 1.0], 100.0);
        assert_eq!(f.tau, 100.0);
    }

    #[test]
    fn ar1_tau() {
        let phi: f64 = 0.9;
        let e = noise(11, 100_000);
        let mut x = Vec::with_capacity(e.len());
        let mut prev = 0.0;
        for v in e {
            prev = phi * prev + v;
            x.push(prev);
        }
        let r = push_all(&x, 50).estimate_element(0);
        let exact = -1.0 / phi.ln();
        assert!((r.tau - exact).abs() / exact < 0.15, "tau {}", r.tau);
        assert!(r.uncertainty > (r.variance / r.samples as f64).sqrt());
    }

    #[test]
    fn white_noise_uncorrelated_error() {
        let x = noise(3, 100_000);
        let r = push_all(&x, 50).estimate_element(0);
        let naive = (r.variance / r.samples as f64).sqrt();
        let ratio = r.uncertainty / naive;
        assert!((0.9..=1.1).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn csv_layout() {
        let t = push_all(&noise(2, 30), 3);
        let csv = results_csv(&[t.estimate_element(0)]).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("element_id,mean,variance,tau_int,uncertainty,fit_residual\n0,"));
    }
}
