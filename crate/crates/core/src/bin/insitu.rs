use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use insitu_core::bench::{self, ExperimentPlan, SweepRecord};
use insitu_core::compress::reconstruct;
use insitu_core::engine::{run_repeated, InSituConfig, RunRecord};
use insitu_core::spectral::gll_basis;
use insitu_core::tasks::TaskConfig;
use insitu_core::{Error, FormatError};

#[derive(Parser)]
#[command(name = "insitu", version, about = "In-situ processing driver for the proxy spectral-element solver")]
struct Cli {
    /// Output directory (overrides the config's `out_dir`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Mesh seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of simulation steps (overrides the config).
    #[arg(long, global = true)]
    steps: Option<u64>,
    /// Repeats per run or plan cell.
    #[arg(long, global = true)]
    repeats: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config whose task is `compression`.
    Compress { config: PathBuf },
    /// Decode an archive and write its nodal values as raw little-endian f64.
    Reconstruct { archive: PathBuf, out: PathBuf },
    /// Run a config whose task is `image`.
    Render { config: PathBuf },
    /// Run a config whose task is `uq`.
    Uq { config: PathBuf },
    /// Run any config once (or `--repeats` times).
    Run { config: PathBuf },
    /// Execute an experiment plan.
    Sweep { plan: PathBuf },
    /// Summarize a `summary.csv` written by `sweep`.
    Report { summary: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::InvalidOrder(_) => 1,
        Error::Format(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8, Error> {
    match &cli.command {
        Command::Compress { config } => run_config(cli, config, Some("compression")),
        Command::Render { config } => run_config(cli, config, Some("image")),
        Command::Uq { config } => run_config(cli, config, Some("uq")),
        Command::Run { config } => run_config(cli, config, None),
        Command::Reconstruct { archive, out } => reconstruct_cmd(archive, out),
        Command::Sweep { plan } => sweep_cmd(cli, plan),
        Command::Report { summary } => report_cmd(summary),
    }
}

/// Loading problems are reported as config errors.
fn load_config(cli: &Cli, path: &Path) -> Result<InSituConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let mut cfg: InSituConfig =
        serde_json::from_str(&text).map_err(|e| Error::config(format!("config JSON: {e}")))?;
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.mesh.seed = seed;
    }
    if let Some(steps) = cli.steps {
        cfg.total_steps = steps;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_config(cli: &Cli, path: &Path, expect: Option<&str>) -> Result<u8, Error> {
    let cfg = load_config(cli, path)?;
    if let Some(kind) = expect {
        if cfg.task.name() != kind {
            return Err(Error::config(format!(
                "this subcommand needs task kind {kind:?}, config has {:?}",
                cfg.task.name()
            )));
        }
    }
    let (records, summary) = run_repeated(&cfg, cli.repeats.unwrap_or(1))?;
    for (r, rec) in records.iter().enumerate() {
        rec.write_csv(&cfg.out_dir.join(format!("steps_r{r}.csv")), cfg.warmup_steps)?;
    }
    let rec = &records[0];
    println!(
        "{} {} N={} p_insitu={} steps={} measured={}",
        cfg.task.name(),
        cfg.mode.name(),
        cfg.total_workers,
        cfg.insitu_workers,
        cfg.total_steps,
        summary.steps_measured
    );
    println!(
        "avg step {:.3} ms  sim {:.3} ms  inline {:.3} ms  transfer {:.3} ms  wait {:.3} ms",
        summary.avg_step * 1e3,
        summary.avg_sim * 1e3,
        summary.avg_insitu_inline * 1e3,
        summary.avg_transfer * 1e3,
        summary.avg_wait * 1e3
    );
    print_task_outputs(&cfg, rec);
    println!("final state {}", rec.final_state_digest);
    println!("outputs {}", rec.outputs.content_digest());
    Ok(0)
}

fn print_task_outputs(cfg: &InSituConfig, rec: &RunRecord) {
    if let TaskConfig::Compression(_) = cfg.task {
        for c in &rec.outputs.compression {
            println!(
                "step {:>8} {:<8} ratio {:>8.2} discarded {:.4} max rmse {:.3e}",
                c.step, c.field, c.report.ratio, c.report.discarded_fraction, c.report.max_rmse
            );
        }
    }
    println!(
        "{} files, {} bytes written, {} bytes as full dumps",
        rec.outputs.artifacts.len(),
        rec.outputs.bytes_written(),
        bench::would_be_bytes(cfg)
    );
}

fn reconstruct_cmd(archive: &Path, out: &Path) -> Result<u8, Error> {
    let bytes = std::fs::read(archive).map_err(|e| Error::io(archive, e))?;
    let order = peek_order(&bytes)?;
    let basis = gll_basis(order).map_err(|_| FormatError::CorruptPayload(format!("order {order}")))?;
    let (meta, fields) = reconstruct(&bytes, &basis)?;
    let mut raw = Vec::with_capacity(fields.len() * basis.element_len() * 8);
    for f in &fields {
        for v in &f.values {
            raw.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(out, &raw).map_err(|e| Error::io(out, e))?;
    println!(
        "{}: field {} order {} eps {} -> {} elements, {} bytes",
        archive.display(),
        meta.field_name,
        meta.order,
        meta.epsilon,
        fields.len(),
        raw.len()
    );
    Ok(0)
}

/// Reads the polynomial order from the archive header.
fn peek_order(bytes: &[u8]) -> Result<usize, Error> {
    let archive = insitu_core::compress::CompressedArchive::from_bytes(bytes)?;
    Ok(archive.meta.order)
}

fn sweep_cmd(cli: &Cli, path: &Path) -> Result<u8, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let mut plan = ExperimentPlan::from_json(&text)?;
    if let Some(seed) = cli.seed {
        plan.seed = Some(seed);
    }
    if let Some(steps) = cli.steps {
        plan.total_steps = steps;
    }
    if let Some(r) = cli.repeats {
        plan.repeats = r;
    }
    let out_dir = cli.out_dir.clone().unwrap_or_else(|| bench::plan_out_dir(&plan));
    let sweep = bench::run_plan(&plan, &out_dir)?;
    let report = bench::report(&sweep);
    print!("{}", report.text);
    write_tidy(&out_dir.join("tidy.csv"), &report.tidy_csv)?;
    Ok(if sweep.any_failed() { 2 } else { 0 })
}

fn report_cmd(path: &Path) -> Result<u8, Error> {
    let sweep = SweepRecord::load(path)?;
    let report = bench::report(&sweep);
    print!("{}", report.text);
    let tidy = path.with_file_name("tidy.csv");
    write_tidy(&tidy, &report.tidy_csv)?;
    Ok(0)
}

fn write_tidy(path: &Path, csv: &str) -> Result<(), Error> {
    std::fs::write(path, csv).map_err(|e| Error::io(path, e))
}
