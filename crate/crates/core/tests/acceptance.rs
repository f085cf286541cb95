//! Acceptance suite. Runs each criterion in sequence (timing criteria must
//! not share the machine with each other) and prints one line per criterion.
//!
//! Criterion 8 needs at least 8 hardware threads. On smaller hosts it is
//! reported as SKIP and criterion 9 runs on the reduced `plans/ci.json`.
//! `INSITU_ACCEPT_FORCE_FULL=1` runs the full plans regardless.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use insitu_core::bench::SweepRecord;
use insitu_core::compress::{
    compress_fields, compression_report, decode, encode, reconstruct, truncate, ArchiveMeta, Codec,
    CompressedArchive, TruncationSpec,
};
use insitu_core::engine::{hex, run, sweep_splits, InSituConfig, Mode, RunRecord};
use insitu_core::proxysim::{init_state, FieldKind, MeshConfig};
use insitu_core::spectral::{dlt_forward, dlt_inverse, gll_basis, Basis1D, ElementField, SpectralBlock};
use insitu_core::tasks::TrainingLags;
use insitu_core::workers::WorkerGroup;
use insitu_core::FormatError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

// Pinned tolerances.
const DLT_REL_TOL: f64 = 1e-10;
const QUADRATURE_TOL: f64 = 1e-10;
const BOUND_SLACK: f64 = 1e-12;
const SYNC_STEP_TOL: f64 = 0.10;
const ASYNC_STEP_TOL: f64 = 0.15;
const WAIT_FRACTION: f64 = 0.90;
const SPLIT_TOL: usize = 1;
const TAU_TOL: f64 = 0.15;
const WHITE_NOISE_TOL: f64 = 0.10;
const ACF_TOL: f64 = 1e-10;
const COMPRESSION_SHARE_MAX: f64 = 0.10;
const IMAGE_SPEEDUP_MIN: f64 = 0.20;

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail: detail.into(),
    }
}

fn within_budget(o: Outcome, start: Instant, limit: Duration) -> Outcome {
    let took = start.elapsed();
    let detail = format!("{} [{:.1} s, limit {} s]", o.detail, took.as_secs_f64(), limit.as_secs());
    match o.status {
        Status::Pass if took > limit => verdict(false, format!("{detail} runtime exceeded")),
        status => Outcome { status, detail },
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn rel_err(actual: f64, expected: f64) -> f64 {
    (actual - expected).abs() / expected.abs()
}

// --- 1 -----------------------------------------------------------------

fn spectral_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_dlt = 0.0f64;
    let mut worst_quad = 0.0f64;
    for p in 1..=15 {
        let basis = gll_basis(p).unwrap();
        for e in 0..100u64 {
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let values: Vec<f64> = (0..basis.element_len())
                .map(|_| scale * rng.random_range(-1.0..1.0))
                .collect();
            let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let field = ElementField::new(p, e, values).unwrap();
            let back = dlt_inverse(&dlt_forward(&field, &basis).unwrap(), &basis).unwrap();
            let err = field
                .values
                .iter()
                .zip(&back.values)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            worst_dlt = worst_dlt.max(err / max);
        }
        // Monomials integrate to 2/(d+1) for even d and 0 for odd d.
        for d in 0..=(2 * p - 1) {
            let exact = if d % 2 == 0 { 2.0 / (d as f64 + 1.0) } else { 0.0 };
            let q: f64 = basis
                .nodes()
                .iter()
                .zip(basis.weights())
                .map(|(x, w)| w * x.powi(d as i32))
                .sum();
            worst_quad = worst_quad.max((q - exact).abs());
        }
    }
    verdict(
        worst_dlt <= DLT_REL_TOL && worst_quad <= QUADRATURE_TOL,
        format!("p=1..15, 100 elements each: round trip {worst_dlt:.2e} x max|f|, quadrature {worst_quad:.2e}"),
    )
}

// --- 2 -----------------------------------------------------------------

fn oracle_rmse(a: &ElementField, b: &ElementField, basis: &Basis1D) -> f64 {
    let n = basis.len();
    let w = basis.weights();
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let idx = i + n * (j + n * k);
                let wt = w[i] * w[j] * w[k];
                let d = a.values[idx] - b.values[idx];
                num += wt * d * d;
                den += wt;
            }
        }
    }
    (num / den).sqrt()
}

fn error_bound() -> Outcome {
    let mesh = MeshConfig {
        elements_per_axis: [4, 4, 4],
        order: 7,
        seed: 2024,
        ..MeshConfig::default()
    };
    let state = init_state(&mesh).unwrap();
    let basis = gll_basis(7).unwrap();
    let epsilons = [1e-4, 1e-3, 1e-2, 1e-1];
    let mut worst_margin = f64::NEG_INFINITY;
    let mut monotone = true;
    let mut summary = Vec::new();
    for kind in FieldKind::ALL {
        let fields = state.field(kind);
        let mut prev = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for eps in epsilons {
            let spec = TruncationSpec::new(eps).unwrap();
            let archive = compress_fields(fields, &basis, spec, kind.name(), Codec::Deflate).unwrap();
            let (_, recon) = reconstruct(archive.as_bytes(), &basis).unwrap();
            assert_eq!(recon.len(), fields.len());
            for (orig, rec) in fields.iter().zip(&recon) {
                worst_margin = worst_margin.max(oracle_rmse(orig, rec, &basis) - eps);
            }
            let report = compression_report(fields, &archive, &basis).unwrap();
            if report.discarded_fraction < prev.0 || report.ratio < prev.1 {
                monotone = false;
            }
            prev = (report.discarded_fraction, report.ratio);
            if kind == FieldKind::VelX {
                summary.push(format!("{eps:.0e}:{:.1}", report.ratio));
            }
        }
    }
    verdict(
        worst_margin <= BOUND_SLACK && monotone,
        format!(
            "64 elements p=7, 4 fields: max(rmse - eps) = {worst_margin:.2e}, monotone = {monotone}, vel_x ratios {}",
            summary.join(" ")
        ),
    )
}

// --- 3 -----------------------------------------------------------------

fn random_block(rng: &mut ChaCha8Rng, order: usize, id: u64, basis: &Basis1D) -> SpectralBlock {
    let n = order + 1;
    let decay = rng.random_range(0.2..1.5);
    let values: Vec<f64> = (0..n * n * n)
        .map(|i| {
            let (a, b, c) = (i % n, (i / n) % n, i / (n * n));
            rng.random_range(-1.0..1.0) * (-decay * (a + b + c) as f64).exp()
        })
        .collect();
    let field = ElementField::new(order, id, values).unwrap();
    let eps = 10f64.powf(rng.random_range(-6.0..0.0));
    truncate(&dlt_forward(&field, basis).unwrap(), basis, TruncationSpec::new(eps).unwrap())
}

fn same_blocks(a: &[SpectralBlock], b: &[SpectralBlock]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.element_id == y.element_id
                && x.order == y.order
                && x.kept_mask == y.kept_mask
                && x.coeffs.iter().zip(&y.coeffs).all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

fn lossless_stage() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bases: Vec<Basis1D> = (1..=7).map(|p| gll_basis(p).unwrap()).collect();
    let mut archives: Vec<Vec<u8>> = Vec::new();
    let mut total_blocks = 0;
    let mut mismatches = 0;
    let mut sizes = vec![0usize, 1];
    let mut remaining = 999;
    while remaining > 0 {
        let n = rng.random_range(1..=20).min(remaining);
        sizes.push(n);
        remaining -= n;
    }
    for size in sizes {
        let order = rng.random_range(1..=7);
        let basis = &bases[order - 1];
        let blocks: Vec<SpectralBlock> = (0..size)
            .map(|i| random_block(&mut rng, order, i as u64 * 3 + 1, basis))
            .collect();
        let codec = if rng.random() { Codec::Deflate } else { Codec::Raw };
        let meta = ArchiveMeta {
            order,
            epsilon: 1e-3,
            field_name: "pressure".into(),
        };
        let archive = encode(&blocks, &meta, codec).unwrap();
        let parsed = CompressedArchive::from_bytes(archive.as_bytes()).unwrap();
        if parsed != archive || !same_blocks(&decode(&parsed), &blocks) {
            mismatches += 1;
        }
        total_blocks += size;
        archives.push(archive.into_bytes());
    }

    // Targeted corruptions. Layout for the name "pressure": codec byte at
    // 38, first record at 47, its kept count at 55..59, payload at 67 for
    // order 3 (8-byte bitmap).
    let basis3 = &bases[2];
    let blocks: Vec<SpectralBlock> = (0..2).map(|i| random_block(&mut rng, 3, i, basis3)).collect();
    let meta = ArchiveMeta {
        order: 3,
        epsilon: 1e-3,
        field_name: "pressure".into(),
    };
    let raw = encode(&blocks, &meta, Codec::Raw).unwrap().into_bytes();
    let deflated = encode(&blocks, &meta, Codec::Deflate).unwrap().into_bytes();
    let edit = |base: &[u8], f: &dyn Fn(&mut Vec<u8>)| {
        let mut b = base.to_vec();
        f(&mut b);
        b
    };
    type Check = fn(&FormatError) -> bool;
    let cases: Vec<(&str, Vec<u8>, Check)> = vec![
        ("BadMagic", edit(&raw, &|b| b[0] = b'X'), |e| matches!(e, FormatError::BadMagic { .. })),
        (
            "UnsupportedVersion",
            edit(&raw, &|b| b[4..8].copy_from_slice(&2u32.to_le_bytes())),
            |e| matches!(e, FormatError::UnsupportedVersion(2)),
        ),
        ("UnknownCodec", edit(&raw, &|b| b[38] = 9), |e| matches!(e, FormatError::UnknownCodec(9))),
        ("TruncatedHeader", raw[..20].to_vec(), |e| matches!(e, FormatError::TruncatedHeader(_))),
        (
            "TruncatedElement",
            raw[..raw.len() - 5].to_vec(),
            |e| matches!(e, FormatError::TruncatedElement { element_index: 1 }),
        ),
        (
            "CorruptPayload",
            edit(&deflated, &|b| b[47..].iter_mut().for_each(|x| *x = 0xff)),
            |e| matches!(e, FormatError::CorruptPayload(_)),
        ),
        (
            "BitmapMismatch",
            edit(&raw, &|b| {
                let kept = u32::from_le_bytes(b[55..59].try_into().unwrap()) + 1;
                b[55..59].copy_from_slice(&kept.to_le_bytes());
            }),
            |e| matches!(e, FormatError::BitmapMismatch { element_index: 0, .. }),
        ),
        (
            "NonFinite",
            edit(&raw, &|b| b[67..75].copy_from_slice(&f64::NAN.to_le_bytes())),
            |e| matches!(e, FormatError::NonFinite { element_index: 0 }),
        ),
        ("TrailingBytes", edit(&raw, &|b| b.push(0)), |e| matches!(e, FormatError::TrailingBytes(1))),
    ];
    let mut wrong_class = Vec::new();
    for (name, bytes, check) in &cases {
        match CompressedArchive::from_bytes(bytes) {
            Err(e) if check(&e) => {}
            other => wrong_class.push(format!("{name}: {other:?}")),
        }
    }

    // Random damage: flips, cuts and insertions must never panic.
    let mut panics = 0;
    let mut rejected = 0;
    for i in 0..3000 {
        let mut b = archives[i % archives.len()].clone();
        match rng.random_range(0..3) {
            0 if !b.is_empty() => {
                let at = rng.random_range(0..b.len());
                b[at] ^= rng.random_range(1..=255u8);
            }
            1 => {
                let at = rng.random_range(0..b.len());
                b.truncate(at);
            }
            _ => {
                let at = rng.random_range(0..=b.len());
                b.insert(at, rng.random());
            }
        }
        match catch_unwind(|| CompressedArchive::from_bytes(&b).map(|a| decode(&a).len() == a.element_count())) {
            Err(_) => panics += 1,
            Ok(Err(_)) => rejected += 1,
            Ok(Ok(consistent)) => assert!(consistent),
        }
    }

    // The CLI must not leave a partial output file behind.
    let dir = tempfile::tempdir().unwrap();
    let mut partial = Vec::new();
    for (name, bytes, _) in &cases {
        let input = dir.path().join(format!("{name}.nkz"));
        std::fs::write(&input, bytes).unwrap();
        let out = dir.path().join(format!("{name}.f64"));
        let status = Command::new(env!("CARGO_BIN_EXE_insitu"))
            .arg("reconstruct")
            .arg(&input)
            .arg(&out)
            .output()
            .unwrap()
            .status;
        if status.code() != Some(3) || out.exists() {
            partial.push(format!("{name}: exit {:?}, output exists {}", status.code(), out.exists()));
        }
    }

    verdict(
        total_blocks == 1000 && mismatches == 0 && wrong_class.is_empty() && panics == 0 && partial.is_empty(),
        format!(
            "{total_blocks} blocks in {} archives (incl. empty and single), {mismatches} mismatches; \
             {} error classes checked, wrong: {wrong_class:?}; 3000 random corruptions: {panics} panics, \
             {rejected} rejected; CLI leftovers: {partial:?}",
            archives.len(),
            cases.len()
        ),
    )
}

// --- 4 -----------------------------------------------------------------

const SYNTH_MESH: &str = r#"{"elements_per_axis":[1,1,1],"order":1,"n_modes":0}"#;

fn synthetic_config(dir: &Path, mode: Mode, n: usize, p: usize, m: f64, s: f64, steps: u64) -> InSituConfig {
    InSituConfig::from_json(&format!(
        r#"{{"mode":"{}","total_workers":{n},"insitu_workers":{p},"total_steps":{steps},"warmup_steps":10,
            "frequency":1,"out_dir":{:?},"synthetic_step_ms":{m},"mesh":{SYNTH_MESH},
            "task":{{"kind":"synthetic","cost_ms":{s}}}}}"#,
        mode.name(),
        dir.to_str().unwrap()
    ))
    .unwrap()
}

fn overlap_laws() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (m, s) = (10.0, 5.0);
    let measure = |cfg: &InSituConfig| -> RunRecord { run(cfg).unwrap().0 };

    let sync = measure(&synthetic_config(dir.path(), Mode::Synchronous, 1, 0, m, s, 200));
    let sync_avg = sync.summary(10).avg_step * 1e3;
    let sync_err = rel_err(sync_avg, m + s);

    let mut lines = vec![format!("sync {sync_avg:.2} ms vs {:.1} ({:.1}%)", m + s, sync_err * 100.0)];
    let mut ok = sync_err <= SYNC_STEP_TOL;
    for (label, task_ms) in [("sim-bound", s), ("task-bound", 2.0 * m)] {
        let rec = measure(&synthetic_config(dir.path(), Mode::Asynchronous, 2, 1, m, task_ms, 200));
        let sum = rec.summary(10);
        let expected = m.max(task_ms) + sum.avg_transfer * 1e3;
        let avg = sum.avg_step * 1e3;
        let err = rel_err(avg, expected);
        ok &= err <= ASYNC_STEP_TOL;
        let fired: Vec<_> = rec.steps.iter().filter(|t| t.fired).collect();
        let waited = fired.iter().filter(|t| t.t_wait > 0.0).count() as f64 / fired.len() as f64;
        if label == "task-bound" {
            ok &= waited >= WAIT_FRACTION;
        }
        lines.push(format!(
            "async {label} {avg:.2} ms vs {expected:.2} ({:.1}%), waited on {:.0}% of firings",
            err * 100.0,
            waited * 100.0
        ));
    }
    verdict(ok, format!("m={m} ms, s={s} ms, 200 steps: {}", lines.join("; ")))
}

// --- 5 -----------------------------------------------------------------

fn sweet_spot() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let sf = 0.8;
    let s_ms = 20.0;
    let mut ok = true;
    let mut lines = Vec::new();
    for (n, sim_ms) in [(4usize, 1.6 * s_ms), (8, 4.0 * s_ms)] {
        // Step time model: the slower of the sim on N - p workers and the
        // task on p workers.
        let model = |p: usize| (sim_ms / (n - p) as f64).max(s_ms * (sf + (1.0 - sf) / p as f64));
        let splits: Vec<usize> = (1..n).collect();
        let predicted = *splits
            .iter()
            .min_by(|a, b| model(**a).total_cmp(&model(**b)))
            .unwrap();
        let cfg = InSituConfig::from_json(&format!(
            r#"{{"mode":"asynchronous","total_workers":{n},"insitu_workers":1,"total_steps":60,"warmup_steps":5,
                "frequency":1,"out_dir":{:?},"synthetic_step_ms":{sim_ms},"mesh":{SYNTH_MESH},
                "task":{{"kind":"synthetic","cost_ms":{s_ms},"serial_fraction":{sf}}}}}"#,
            dir.path().to_str().unwrap()
        ))
        .unwrap();
        let sweep = sweep_splits(&cfg, &splits, 1).unwrap();
        let found = sweep.best_split();
        ok &= found.abs_diff(predicted) <= SPLIT_TOL;
        let curve: Vec<String> = sweep
            .results
            .iter()
            .map(|r| format!("{}:{:.1}", r.insitu_workers, r.summary.avg_step * 1e3))
            .collect();
        lines.push(format!("N={n} argmin {found} (model {predicted}) [{}]", curve.join(" ")));
    }
    verdict(ok, format!("serial fraction {sf}: {}", lines.join("; ")))
}

// --- 6 -----------------------------------------------------------------

fn mode_equivalence() -> Outcome {
    let tasks = [
        ("compression", r#"{"kind":"compression","epsilon":0.001}"#),
        ("image", r#"{"kind":"image","axis":"y","slice_position":0.4,"width":40,"height":30}"#),
        ("uq", r#"{"kind":"uq","n_lags":2,"estimate_every":8}"#),
    ];
    let variants = [
        (Mode::Synchronous, 0),
        (Mode::Asynchronous, 1),
        (Mode::Asynchronous, 2),
        (Mode::Hybrid, 1),
        (Mode::Hybrid, 2),
    ];
    let mut ok = true;
    let mut lines = Vec::new();
    for (name, task) in tasks {
        let mut reference: Option<Vec<(String, Vec<u8>)>> = None;
        let mut runs = 0;
        for (mode, p) in variants {
            if mode == Mode::Hybrid && name == "image" {
                continue;
            }
            let dir = tempfile::tempdir().unwrap();
            let cfg = InSituConfig::from_json(&format!(
                r#"{{"mode":"{}","total_workers":3,"insitu_workers":{p},"total_steps":40,"warmup_steps":0,
                    "frequency":2,"out_dir":{:?},"mesh":{{"elements_per_axis":[2,2,2],"order":5,"seed":23}},
                    "task":{task}}}"#,
                mode.name(),
                dir.path().to_str().unwrap()
            ))
            .unwrap();
            let (rec, _) = run(&cfg).unwrap();
            let mut files: Vec<(String, Vec<u8>)> = rec
                .outputs
                .artifacts
                .iter()
                .map(|a| {
                    let name = a.path.file_name().unwrap().to_string_lossy().into_owned();
                    (name, std::fs::read(&a.path).unwrap())
                })
                .collect();
            files.sort();
            runs += 1;
            match &reference {
                None => {
                    ok &= !files.is_empty();
                    lines.push(format!("{name}: {} files", files.len()));
                    reference = Some(files);
                }
                Some(r) if *r != files => {
                    ok = false;
                    lines.push(format!("{name}: {} p={p} differs", mode.name()));
                }
                Some(_) => {}
            }
        }
        lines.push(format!("{name}: {runs} mode/split variants"));
    }
    verdict(ok, format!("byte comparison, seed 23: {}", lines.join(", ")))
}

// --- 7 -----------------------------------------------------------------

fn ar1(rng: &mut ChaCha8Rng, phi: f64, n: usize, offset: f64) -> Vec<f64> {
    let mut x = 0.0;
    for _ in 0..1000 {
        x = phi * x + rng.sample::<f64, _>(StandardNormal);
    }
    (0..n)
        .map(|_| {
            x = phi * x + rng.sample::<f64, _>(StandardNormal);
            offset + x
        })
        .collect()
}

fn batch_acf(x: &[f64], lags: usize) -> Vec<f64> {
    let t = x.len() as f64;
    let mu = x.iter().sum::<f64>() / t;
    let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / t;
    (1..=lags)
        .map(|k| {
            let cov: f64 = (0..x.len() - k).map(|i| (x[i] - mu) * (x[i + k] - mu)).sum();
            cov / (x.len() - k) as f64 / var
        })
        .collect()
}

fn stream(series: &[Vec<f64>], lags: usize) -> TrainingLags {
    let workers = WorkerGroup::new(1, "uq").unwrap();
    let mut tl = TrainingLags::new(series.len(), lags).unwrap();
    let mut row = vec![0.0; series.len()];
    for t in 0..series[0].len() {
        for (e, s) in series.iter().enumerate() {
            row[e] = s[t];
        }
        tl.update(&row, &workers).unwrap();
    }
    tl
}

fn uq_statistics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t = 100_000;
    let phi: f64 = 0.9;
    let tau_true = -1.0 / phi.ln();

    let series: Vec<Vec<f64>> = (0..4).map(|_| ar1(&mut rng, phi, t, 0.0)).collect();
    let tl = stream(&series, 50);
    let taus: Vec<f64> = (0..4).map(|e| tl.estimate_element(e).tau).collect();
    let tau_err = taus.iter().map(|&x| rel_err(x, tau_true)).fold(0.0, f64::max);

    let noise: Vec<Vec<f64>> = (0..4).map(|_| ar1(&mut rng, 0.0, t, 3.0)).collect();
    let tl = stream(&noise, 50);
    let noise_err = (0..4)
        .map(|e| {
            let r = tl.estimate_element(e);
            rel_err(r.uncertainty, (r.variance / t as f64).sqrt())
        })
        .fold(0.0, f64::max);

    let short = vec![ar1(&mut rng, 0.8, 2000, 5.0)];
    let tl = stream(&short, 50);
    let acf_err = tl
        .acf(0)
        .iter()
        .zip(batch_acf(&short[0], 50))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    verdict(
        tau_err <= TAU_TOL && noise_err <= WHITE_NOISE_TOL && acf_err <= ACF_TOL,
        format!(
            "AR(1) phi=0.9 T=1e5: tau {taus:.2?} vs {tau_true:.2} (max {:.1}%); white noise uncertainty \
             max {:.1}% off; streaming vs batch ACF {acf_err:.1e}",
            tau_err * 100.0,
            noise_err * 100.0
        ),
    )
}

// --- 8 and 9 -----------------------------------------------------------

fn sweep_cli(plan: &Path, out: &Path) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_insitu"))
        .arg("sweep")
        .arg(plan)
        .arg("--out-dir")
        .arg(out)
        .args(["--seed", "7"])
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(String::from_utf8_lossy(&o.stdout).into_owned())
    } else {
        Err(format!("{}: exit {:?}: {}", plan.display(), o.status.code(), String::from_utf8_lossy(&o.stderr)))
    }
}

/// sha256 of every non-timing file under `dir`, keyed by relative path.
fn tree_digest(dir: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            if path.is_dir() {
                if rel != "steps" {
                    walk(root, &path, out);
                }
            } else if !matches!(rel.as_str(), "summary.csv" | "tidy.csv") {
                out.insert(rel, hex(&Sha256::digest(std::fs::read(&path).unwrap())));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

struct Sweeps {
    runs: Vec<(String, PathBuf, PathBuf)>,
    error: Option<String>,
}

fn run_sweeps_twice(plans: &[&str], root: &Path) -> Sweeps {
    let mut runs = Vec::new();
    for name in plans {
        let plan = workspace_root().join("plans").join(format!("{name}.json"));
        let (a, b) = (root.join(name).join("a"), root.join(name).join("b"));
        for out in [&a, &b] {
            if let Err(e) = sweep_cli(&plan, out) {
                return Sweeps { runs, error: Some(e) };
            }
        }
        runs.push((name.to_string(), a, b));
    }
    Sweeps { runs, error: None }
}

fn rows(dir: &Path) -> SweepRecord {
    SweepRecord::load(&dir.join("summary.csv")).unwrap()
}

fn full_plan_trends(sweeps: &Sweeps) -> Outcome {
    if let Some(e) = &sweeps.error {
        return verdict(false, format!("sweep failed: {e}"));
    }
    let find = |name: &str| rows(&sweeps.runs.iter().find(|r| r.0 == name).unwrap().1);
    let min_avg = |rec: &SweepRecord, mode: Mode| {
        rec.rows
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| r.avg_step_time)
            .fold(f64::INFINITY, f64::min)
    };

    let comp = find("full-compression");
    let row = comp.rows.iter().find(|r| r.mode == Mode::Synchronous).unwrap();
    let share = row.t_insitu_avg / row.avg_step_time;
    let a = share < COMPRESSION_SHARE_MAX;

    let image = find("full-image");
    let (img_sync, img_async) = (min_avg(&image, Mode::Synchronous), min_avg(&image, Mode::Asynchronous));
    let gain = 1.0 - img_async / img_sync;
    let b = gain >= IMAGE_SPEEDUP_MIN;

    let uq = find("full-uq");
    let hybrid = min_avg(&uq, Mode::Hybrid);
    let uq_sync = min_avg(&uq, Mode::Synchronous);
    let c = hybrid < uq_sync
        && uq
            .rows
            .iter()
            .filter(|r| r.mode == Mode::Asynchronous)
            .all(|r| hybrid < r.avg_step_time);
    let uq_async = min_avg(&uq, Mode::Asynchronous);

    verdict(
        a && b && c,
        format!(
            "(a) compression share {:.2}% at f=50 [{}]; (b) image async {:.1} ms vs sync {:.1} ms, {:.0}% faster [{}]; \
             (c) uq hybrid {:.1} ms vs sync {:.1} ms, best async {:.1} ms [{}]",
            share * 100.0,
            if a { "ok" } else { "fail" },
            img_async * 1e3,
            img_sync * 1e3,
            gain * 100.0,
            if b { "ok" } else { "fail" },
            hybrid * 1e3,
            uq_sync * 1e3,
            uq_async * 1e3,
            if c { "ok" } else { "fail" },
        ),
    )
}

fn determinism(sweeps: &Sweeps) -> Outcome {
    if let Some(e) = &sweeps.error {
        return verdict(false, format!("sweep failed: {e}"));
    }
    let mut ok = true;
    let mut lines = Vec::new();
    for (name, a, b) in &sweeps.runs {
        let (da, db) = (tree_digest(a), tree_digest(b));
        let (ca, cb) = (rows(a).checksums(), rows(b).checksums());
        let same = !da.is_empty() && da == db && ca == cb;
        ok &= same;
        lines.push(format!(
            "{name}: {} artifacts, {} cell checksums {}",
            da.len(),
            ca.len(),
            if same { "identical" } else { "DIFFER" }
        ));
    }
    verdict(ok, format!("two sweeps, seed 7: {}", lines.join("; ")))
}

// --- harness -----------------------------------------------------------

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    })
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let forced = std::env::var("INSITU_ACCEPT_FORCE_FULL").is_ok_and(|v| v == "1");
    let full = cores >= 8 || forced;

    let mut failed = 0;
    let mut report = |n: u32, o: Outcome| {
        let tag = match o.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Skip => "SKIP",
        };
        println!("criterion {n}: {tag} {}", o.detail);
    };

    let timed = |f: fn() -> Outcome, secs: u64| {
        let start = Instant::now();
        within_budget(guarded(f), start, Duration::from_secs(secs))
    };
    report(1, timed(spectral_correctness, 10));
    report(2, timed(error_bound, 60));
    report(3, timed(lossless_stage, 30));
    report(4, timed(overlap_laws, 180));
    report(5, timed(sweet_spot, 300));
    report(6, timed(mode_equivalence, 180));
    report(7, timed(uq_statistics, 60));

    let root = tempfile::tempdir().unwrap();
    let start = Instant::now();
    if full {
        let sweeps = guarded_sweeps(&["full-compression", "full-image", "full-uq"], root.path());
        report(8, within_budget(guarded(|| full_plan_trends(&sweeps)), start, Duration::from_secs(1800)));
        report(9, within_budget(guarded(|| determinism(&sweeps)), start, Duration::from_secs(1800)));
    } else {
        report(
            8,
            Outcome {
                status: Status::Skip,
                detail: format!(
                    "host has {cores} hardware threads, the full plans need >= 8 (INSITU_ACCEPT_FORCE_FULL=1 overrides)"
                ),
            },
        );
        let sweeps = guarded_sweeps(&["ci"], root.path());
        let o = within_budget(guarded(|| determinism(&sweeps)), start, Duration::from_secs(1800));
        report(9, Outcome { detail: format!("reduced plan: {}", o.detail), ..o });
    }

    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: ok");
}

fn guarded_sweeps(plans: &[&str], root: &Path) -> Sweeps {
    catch_unwind(AssertUnwindSafe(|| run_sweeps_twice(plans, root))).unwrap_or_else(|_| Sweeps {
        runs: Vec::new(),
        error: Some("sweep driver panicked".into()),
    })
}
