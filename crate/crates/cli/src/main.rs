use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;
use std::time::Instant;

use clap::{Parser, Subcommand};
use fairpath_core::data::{gen_synthetic, split, SplitSpec, SyntheticSpec};
use fairpath_core::harness::{
    aggregate, file_entry, load_dataset, pareto_front, report, run_experiment, with_value, ExperimentConfig, Manifest, RunWriter,
    SweepPoint, SweepRow, SweepSpec,
};
use fairpath_core::oracle::{run_suite, Fault, SuiteOptions};
use fairpath_core::{Error, GroupedDataset};
use serde::Serialize;

/// Default parent of run directories when a config names none.
const OUTPUT_ROOT_VAR: &str = "FAIRPATH_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "fairpath", version, about = "Fair representation learning with implicit bi-level gradients")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one configuration and write a run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every (value, repetition) pair of a sweep spec.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent runs; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Compare finished runs side by side.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check engine gradients and metrics against independent oracles.
    Verify {
        #[arg(long)]
        filter: Option<String>,
        /// Print the reports as JSON instead of one line each.
        #[arg(long)]
        json: bool,
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
    /// Write a synthetic dataset (with the default split) to a file.
    GenSynthetic {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit codes: 0 ok, 1 verification failure, 2 bad input, 3 runtime abort.
struct Fail {
    code: u8,
    msg: String,
}

fn input(e: impl std::fmt::Display) -> Fail {
    Fail {
        code: 2,
        msg: e.to_string(),
    }
}

fn runtime(e: impl std::fmt::Display) -> Fail {
    Fail {
        code: 3,
        msg: e.to_string(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { config, out } => cmd_run(&config, out),
        Cmd::Sweep { spec, out, jobs } => cmd_sweep(&spec, out, jobs),
        Cmd::Report { dirs, out } => cmd_report(&dirs, out.as_deref()),
        Cmd::Verify {
            filter,
            json,
            inject_sign_flip,
        } => cmd_verify(filter, json, inject_sign_flip),
        Cmd::GenSynthetic { spec, out } => cmd_gen(&spec, &out),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn default_dir(name: &str, suffix: &str) -> PathBuf {
    let root = std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    root.join(format!("{name}-{suffix}"))
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Fail> {
    Ok(ExperimentConfig::from_json_file(path).map_err(input)?.resolve_paths(&config_dir(path)))
}

/// Train and write one run directory. `Err` carries the abort message after
/// the partial outputs have been written.
fn train_into(cfg: &ExperimentConfig, ds: &GroupedDataset, seed: u64, dir: &Path) -> Result<Manifest, Fail> {
    let start = Instant::now();
    let result = run_experiment(cfg, ds, seed);
    let wall = start.elapsed().as_secs_f64();
    let mut w = RunWriter::create(dir).map_err(runtime)?;
    let (records, error) = match &result {
        Ok(out) => {
            w.checkpoints(out).map_err(runtime)?;
            (&out.records, None)
        }
        Err(a) => (&a.records, Some(a.error.to_string())),
    };
    w.records(records).map_err(runtime)?;
    let m = w.finish(cfg, ds, seed, records, error, wall).map_err(runtime)?;
    match m.error {
        Some(ref e) => Err(runtime(format!("run aborted after {} epochs: {e} (partial outputs in {})", m.epochs, dir.display()))),
        None => Ok(m),
    }
}

fn cmd_run(path: &Path, out: Option<PathBuf>) -> Result<(), Fail> {
    let cfg = load_config(path)?;
    let ds = load_dataset(&cfg.data).map_err(input)?;
    let dir = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| default_dir(&cfg.name, &format!("s{}-{}", cfg.seed, &cfg.config_hash()[..12])));
    let m = train_into(&cfg, &ds, cfg.seed, &dir)?;
    let last = m.last.as_ref();
    println!(
        "{} [{}] {} epochs: test perf {} gap {} |h0-h1| {}",
        m.name,
        m.method,
        m.epochs,
        fmt(last.and_then(|r| r.test_perf)),
        fmt(last.and_then(|r| r.test_gap)),
        fmt(last.map(|r| r.head_distance)),
    );
    println!("wrote {}", dir.display());
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn fmt_value(v: f64) -> String {
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

#[derive(Serialize)]
struct ParetoListing<'a> {
    method: &'a str,
    task: &'a str,
    /// Lower is better for MSE; higher for accuracy. Lower gap is better.
    front: Vec<&'a SweepRow>,
}

/// Top-level listing of a sweep directory: the spec, every run
/// subdirectory, and the summary files.
#[derive(Serialize)]
struct SweepManifest<'a> {
    spec: &'a SweepSpec,
    config_hash: String,
    runs: Vec<String>,
    files: Vec<fairpath_core::harness::FileEntry>,
}

fn cmd_sweep(path: &Path, out: Option<PathBuf>, jobs: Option<usize>) -> Result<(), Fail> {
    let text = std::fs::read_to_string(path).map_err(|e| input(Error::io(path, e)))?;
    let spec: SweepSpec = serde_json::from_str(&text).map_err(|e| input(Error::config(path.display().to_string(), e.to_string())))?;
    spec.validate().map_err(input)?;
    let base = spec.base_config().resolve_paths(&config_dir(path));
    let ds = load_dataset(&base.data).map_err(input)?;
    let root = out
        .or_else(|| base.output_dir.clone())
        .unwrap_or_else(|| default_dir(&base.name, "sweep"));
    std::fs::create_dir_all(&root).map_err(|e| runtime(Error::io(&root, e)))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(runtime)?;
    let grid = spec.grid();
    let points = Mutex::new(Vec::with_capacity(grid.len()));
    pool.scope(|s| {
        for &(i, value, rep, seed) in &grid {
            let (base, ds, root, points) = (&base, &ds, &root, &points);
            s.spawn(move |_| {
                let cfg = with_value(base, value);
                let dir = root.join(run_name(i, rep));
                let res = train_into(&cfg, ds, seed, &dir);
                let point = match res {
                    Ok(m) => SweepPoint {
                        value,
                        repetition: rep,
                        seed,
                        last: m.last,
                        error: None,
                    },
                    Err(f) => {
                        eprintln!("value {value} repetition {rep}: {}", f.msg);
                        SweepPoint {
                            value,
                            repetition: rep,
                            seed,
                            last: None,
                            error: Some(f.msg),
                        }
                    }
                };
                points.lock().expect("no poisoned lock").push(((i, rep), point));
            });
        }
    });
    let mut points = points.into_inner().expect("no poisoned lock");
    points.sort_by_key(|(k, _)| *k);
    let points: Vec<SweepPoint> = points.into_iter().map(|(_, p)| p).collect();

    let rows = aggregate(&points);
    SweepRow::write_csv(&rows, &root.join("sweep.csv")).map_err(runtime)?;
    let task = fairpath_core::data::task_name(ds.task());
    let listing = ParetoListing {
        method: base.method.name(),
        task,
        front: pareto_front(&rows, ds.task()).into_iter().map(|i| &rows[i]).collect(),
    };
    write_json(&root.join("pareto.json"), &listing)?;
    write_json(&root.join("points.json"), &points)?;
    let files = ["sweep.csv", "pareto.json", "points.json"]
        .iter()
        .map(|f| file_entry(&root, f))
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?;
    let runs = grid.iter().map(|&(i, _, rep, _)| run_name(i, rep)).collect();
    write_json(
        &root.join("manifest.json"),
        &SweepManifest {
            spec: &spec,
            config_hash: base.config_hash(),
            runs,
            files,
        },
    )?;

    println!("{:>10}  {:>4}  {:>17}  {:>17}", "value", "runs", "perf", "gap");
    for r in &rows {
        println!(
            "{:>10}  {:>4}  {:>8} ± {:<6}  {:>8} ± {:<6}",
            fmt_value(r.value),
            r.runs - r.failed,
            fmt(r.perf_mean),
            fmt(r.perf_std),
            fmt(r.gap_mean),
            fmt(r.gap_std)
        );
    }
    println!("wrote {}", root.display());
    let failed = points.iter().filter(|p| p.error.is_some()).count();
    if failed > 0 {
        return Err(runtime(format!("{failed} of {} runs failed", points.len())));
    }
    Ok(())
}

fn run_name(value_index: usize, rep: usize) -> String {
    format!("v{value_index:02}-r{rep:02}")
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), Fail> {
    let text = serde_json::to_string_pretty(v).map_err(runtime)?;
    std::fs::write(path, text + "\n").map_err(|e| runtime(Error::io(path, e)))
}

fn cmd_report(dirs: &[PathBuf], out: Option<&Path>) -> Result<(), Fail> {
    let r = report(dirs).map_err(input)?;
    print!("{}", r.to_text());
    for w in &r.warnings {
        eprintln!("{w}");
    }
    if let Some(p) = out {
        r.write_csv(p).map_err(runtime)?;
    }
    Ok(())
}

fn cmd_verify(filter: Option<String>, json: bool, flip: bool) -> Result<(), Fail> {
    let reports = run_suite(&SuiteOptions {
        filter: filter.clone(),
        fault: flip.then_some(Fault::FlipImplicitSign),
    });
    if reports.is_empty() {
        return Err(input(format!("no check matches `{}`", filter.unwrap_or_default())));
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&reports).map_err(runtime)?);
    } else {
        for r in &reports {
            let tag = if r.passed { "ok  " } else { "FAIL" };
            let note = if r.note.is_empty() { String::new() } else { format!("  ({})", r.note) };
            println!("{tag} {:<40} rel {:.2e} tol {:.0e}{note}", r.quantity, r.rel_error, r.tolerance);
        }
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.quantity.as_str()).collect();
    if failed.is_empty() {
        println!("{} checks passed", reports.len());
        Ok(())
    } else {
        Err(Fail {
            code: 1,
            msg: format!("failed: {}", failed.join(", ")),
        })
    }
}

fn cmd_gen(spec_path: &Path, out: &Path) -> Result<(), Fail> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| input(Error::io(spec_path, e)))?;
    let spec: SyntheticSpec =
        serde_json::from_str(&text).map_err(|e| input(Error::config(spec_path.display().to_string(), e.to_string())))?;
    let ds = split(&gen_synthetic(&spec).map_err(input)?, &SplitSpec::default()).map_err(input)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| runtime(Error::io(dir, e)))?;
    }
    ds.save(out).map_err(runtime)?;
    println!("wrote {} ({} rows, {})", out.display(), ds.len(), ds.provenance());
    Ok(())
}
