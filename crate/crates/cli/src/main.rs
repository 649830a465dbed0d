//! `dltrack`: simulate batches, run the tracker, sweep ROC curves, measure
//! per-iteration cost and cross-check the closed-form math against oracles.

mod config;
mod verify;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dltrack_core::evaluation::{complexity_probe, pd_at_pfa, roc_from_trials, run_trials};
use dltrack_core::io::{self, OutputHeader};
use dltrack_core::scenario::{generate, scr_report};
use dltrack_core::track_manager::declare_detections;
use dltrack_core::{run_dl, Error};
use serde::Serialize;

use config::{Format, RunConfig};

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Verification(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig { .. } | Error::SizeLimit { .. } => {
                CliError::Config(e.to_string())
            }
            Error::Io(_) => CliError::Io(e.to_string()),
            Error::OracleFailure(_) => CliError::Verification(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "dltrack",
    version,
    about = "Dynamic-logic joint detection and tracking in clutter"
)]
struct Cli {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides both the scenario and the tracker seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a batch plus truth sidecars.
    Simulate,
    /// Run the tracker on a batch CSV.
    Track {
        /// Batch CSV (`scan,t,x,y,amplitude,doppler`).
        #[arg(long)]
        batch: PathBuf,
        /// Also write the converged association matrix.
        #[arg(long)]
        associations: bool,
    },
    /// Monte-Carlo ROC curves, one file per clutter level.
    Roc {
        /// Overrides the configured trial count.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Per-iteration cost over N and H sweeps.
    Bench,
    /// Cross-check likelihood and M-step against brute-force oracles.
    Verify {
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        h: Option<usize>,
        /// Deliberately corrupt one check (negative control).
        #[arg(long, value_enum)]
        inject_fault: Option<verify::Fault>,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.scenario.rng_seed = seed;
        cfg.dl.rng_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(f) = cli.format {
        cfg.output.format = f;
    }
    match &cli.command {
        Command::Track {
            associations: true, ..
        } => cfg.output.associations = true,
        Command::Roc { trials: Some(t) } => cfg.roc.trials = *t,
        Command::Verify {
            instances, n, h, ..
        } => {
            if let Some(v) = instances {
                cfg.verify.instances = *v;
            }
            if let Some(v) = n {
                cfg.verify.n = *v;
            }
            if let Some(v) = h {
                cfg.verify.h = *v;
            }
        }
        _ => {}
    }
    Ok(cfg)
}

struct Ctx {
    cfg: RunConfig,
    header: OutputHeader,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output.dir.join(name)
    }

    /// Writes a JSON result wrapped with the provenance header fields.
    fn write_json<T: Serialize>(&self, name: &str, data: &T) -> Result<PathBuf, CliError> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            config_hash: String,
            seed: u64,
            data: &'a T,
        }
        let path = self.path(name);
        let w = Wrapped {
            config_hash: format!("{:016x}", self.header.config_hash),
            seed: self.header.seed,
            data,
        };
        fs::write(
            &path,
            serde_json::to_string_pretty(&w).expect("serializable") + "\n",
        )?;
        Ok(path)
    }

    fn json(&self) -> bool {
        self.cfg.output.format == Format::Json
    }
}

/// Writes to stdout; a reader that hung up early (`| head`) is not an error.
pub(crate) fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_summary<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) {
    if json {
        emit(&(serde_json::to_string_pretty(value).expect("serializable") + "\n"));
    } else {
        emit(&text());
    }
}

fn cmd_simulate(ctx: &Ctx) -> Result<(), CliError> {
    let sc = generate(&ctx.cfg.scenario)?;
    let batch = ctx.path("batch.csv");
    io::write_batch(&batch, &sc.batch, &ctx.header)?;
    io::write_truth(
        &ctx.path("truth_targets.csv"),
        &ctx.path("truth_assignments.csv"),
        &sc.truth,
        &ctx.header,
    )?;
    let scr = scr_report(&ctx.cfg.scenario);
    #[derive(Serialize)]
    struct Summary<'a> {
        n: usize,
        seed: u64,
        scr: dltrack_core::ScrReport,
        batch: &'a Path,
    }
    let s = Summary {
        n: sc.batch.len(),
        seed: ctx.cfg.scenario.rng_seed,
        scr,
        batch: &batch,
    };
    print_summary(ctx.json(), &s, || {
        format!(
            "N = {}\nseed = {}\namplitude S/C = {:.3} ({:.2} dB)\ndoppler S/C = {:.3} ({:.2} dB)\nwrote {}\n",
            s.n,
            s.seed,
            scr.amplitude,
            scr.amplitude_db,
            scr.doppler,
            scr.doppler_db,
            batch.display()
        )
    });
    Ok(())
}

fn cmd_track(ctx: &Ctx, batch_path: &Path) -> Result<(), CliError> {
    let batch = io::read_batch(batch_path, &ctx.cfg.scenario.bounds())?;
    let out = run_dl(&batch, &ctx.cfg.dl)?;
    let report = declare_detections(&out.hypotheses, &batch, ctx.cfg.detection.llr_threshold)?;
    if ctx.json() {
        ctx.write_json("detections.json", &report)?;
        ctx.write_json("trace.json", &out.trace)?;
        ctx.write_json("hypotheses.json", &out.hypotheses)?;
    } else {
        io::write_detections(&ctx.path("detections.csv"), &report, &ctx.header)?;
        io::write_trace(&ctx.path("trace.csv"), &out.trace, &ctx.header)?;
        io::write_trace_hypotheses(&ctx.path("trace_hypotheses.csv"), &out.trace, &ctx.header)?;
        io::write_hypotheses(&ctx.path("hypotheses.csv"), &out.hypotheses, &ctx.header)?;
    }
    if ctx.cfg.output.associations {
        io::write_associations(
            &ctx.path("associations.csv"),
            &out.associations,
            &out.hypotheses,
            &ctx.header,
        )?;
    }
    #[derive(Serialize)]
    struct Summary {
        n: usize,
        iterations: usize,
        converged: bool,
        active_tracks: usize,
        detections: usize,
        llr_threshold: f64,
    }
    let s = Summary {
        n: batch.len(),
        iterations: out.trace.iterations(),
        converged: out.trace.converged,
        active_tracks: out.hypotheses.num_active(),
        detections: report.num_detected(),
        llr_threshold: report.threshold,
    };
    print_summary(ctx.json(), &s, || {
        let mut t = format!(
            "N = {}, {} iterations ({}), {} active tracks, {} detections at LLR > {}\n",
            s.n,
            s.iterations,
            if s.converged {
                "converged"
            } else {
                "iteration cap reached"
            },
            s.active_tracks,
            s.detections,
            s.llr_threshold
        );
        for d in report.detected() {
            let p = &d.params;
            t.push_str(&format!(
                "  track {:>3}  llr {:>8.2}  gate {:>3}  x0 {:>8.2} y0 {:>8.2} vx {:>7.3} vy {:>7.3} a {:.3}\n",
                d.track_id,
                d.llr,
                d.gate.len(),
                p.x0,
                p.y0,
                p.vx,
                p.vy,
                p.a
            ));
        }
        t
    });
    Ok(())
}

fn cmd_roc(ctx: &Ctx) -> Result<(), CliError> {
    let roc = &ctx.cfg.roc;
    if roc.thresholds.is_empty() {
        return Err(CliError::Config("roc.thresholds: must not be empty".into()));
    }
    if roc.clutter_levels.is_empty() {
        return Err(CliError::Config(
            "roc.clutter_levels: must not be empty".into(),
        ));
    }
    if roc.trials < 1 {
        return Err(CliError::Config("roc.trials: must be at least 1".into()));
    }
    let pfa_grid = [0.1, 0.2, 0.5, 1.0, 2.0];
    let mut table = Vec::new();
    for &clutter in &roc.clutter_levels {
        let mut sc = ctx.cfg.scenario.clone();
        sc.clutter_per_scan = clutter;
        let criteria = ctx
            .cfg
            .match_criteria
            .unwrap_or_else(|| dltrack_core::MatchCriteria::for_scenario(&sc));
        let outcomes = run_trials(&sc, &ctx.cfg.dl, &criteria, roc.trials)?;
        let area_km2 = sc.area_width * sc.area_height / 1e6;
        let curve = roc_from_trials(&outcomes, &roc.thresholds, area_km2)?;
        if ctx.json() {
            ctx.write_json(&format!("roc_clutter{clutter}.json"), &curve)?;
        } else {
            io::write_roc(
                &ctx.path(&format!("roc_clutter{clutter}.csv")),
                clutter,
                &curve,
                &ctx.header,
            )?;
        }
        table.push((clutter, pfa_grid.map(|p| pd_at_pfa(&curve, p))));
    }
    print_summary(ctx.json(), &table, || {
        let mut t = format!(
            "{} trials per level; pd at pfa per batch\nclutter",
            roc.trials
        );
        for p in pfa_grid {
            t.push_str(&format!("  {p:>6}"));
        }
        t.push('\n');
        for (c, row) in &table {
            t.push_str(&format!("{c:>7}"));
            for v in row {
                t.push_str(&format!("  {v:>6.3}"));
            }
            t.push('\n');
        }
        t
    });
    Ok(())
}

fn cmd_bench(ctx: &Ctx) -> Result<(), CliError> {
    let b = &ctx.cfg.bench;
    let report = complexity_probe(&ctx.cfg.scenario, &ctx.cfg.dl, &b.n_values, &b.h_values)?;
    if ctx.json() {
        ctx.write_json("complexity.json", &report)?;
    } else {
        io::write_complexity(&ctx.path("complexity.csv"), report.rows(), &ctx.header)?;
    }
    print_summary(ctx.json(), &report, || {
        let mut t = String::from("     N   H  ops/iter     ms/iter\n");
        for r in report.rows() {
            t.push_str(&format!(
                "{:>6} {:>3} {:>9.0} {:>11.3}\n",
                r.n, r.h, r.ops_per_iter, r.wall_ms
            ));
        }
        t.push_str(&format!(
            "ops vs N at H={}: slope {:.3}, R2 {:.6}\nops vs H at N={}: slope {:.1}, R2 {:.6}\nwall time vs N: R2 {:.4}\n",
            report.fixed_h, report.n_fit.slope, report.n_fit.r2, report.fixed_n, report.h_fit.slope, report.h_fit.r2,
            report.n_wall_fit.r2
        ));
        t
    });
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli)?;
    if cli.print_config {
        emit(&(serde_json::to_string_pretty(&cfg).expect("serializable") + "\n"));
        return Ok(());
    }
    cfg.validate()?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    let seed = match cli.command {
        Command::Simulate => cfg.scenario.rng_seed,
        _ => cfg.dl.rng_seed,
    };
    let header = OutputHeader {
        config_hash: cfg.hash(),
        seed,
    };
    if !matches!(cli.command, Command::Verify { .. }) {
        fs::create_dir_all(&cfg.output.dir)?;
    }
    let ctx = Ctx { cfg, header };
    match &cli.command {
        Command::Simulate => cmd_simulate(&ctx),
        Command::Track { batch, .. } => cmd_track(&ctx, batch),
        Command::Roc { .. } => cmd_roc(&ctx),
        Command::Bench => cmd_bench(&ctx),
        Command::Verify { inject_fault, .. } => verify::run(&ctx.cfg, *inject_fault, ctx.json()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dltrack: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
