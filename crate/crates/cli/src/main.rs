//! Command-line front end: calibrate the cost model, solve one problem with
//! full reports, or sweep worker counts for a strong-scaling table.
//!
//! Exit codes: 0 success, 2 argument/io failure, 3 residual above threshold,
//! 4 singular domain or diagonal block.

use clap::{Args, Parser, Subcommand};
use d3m_core::costmodel::{
    calibrate_kernels, domain_features, CalibrationSet, SampleStore,
};
use d3m_core::error::Error;
use d3m_core::executor::{collect_timeline, MemoryMode};
use d3m_core::pipeline::{atomic_write, prepare, run_parallel, PipelineConfig, Prepared};
use d3m_core::problem::{
    generate_grid_problem, PartitionStrategy, SparseSystem, Stencil,
};
use d3m_core::scheduler::measure_comm_model;
use d3m_core::taskgraph::AgglomerationPolicy;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const RESIDUAL_GATE: f64 = 1e-8;

#[derive(Parser)]
#[command(name = "d3m", version, about = "Domain-decomposition direct solver with DAG-scheduled block LDL^T")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark the dense kernels and write the calibration file
    Calibrate(CalibrateArgs),
    /// Solve one system and write solution + schedule + timing reports
    Solve(SolveArgs),
    /// Solve the same system for several worker counts and report scaling
    Scaling(ScalingArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// Comma-separated operand sizes
    #[arg(long, value_delimiter = ',', default_values_t = vec![32usize, 64, 96, 128, 192, 256])]
    sizes: Vec<usize>,
    /// Measurement repetitions per size
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value = "calibration.json")]
    calibration: PathBuf,
}

#[derive(Args, Clone)]
struct ProblemArgs {
    /// Generate a grid problem: dx[,dy[,dz]]
    #[arg(long, value_delimiter = ',', conflicts_with = "matrix")]
    generate: Option<Vec<usize>>,
    /// Load a Matrix Market file (coordinate real symmetric)
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Stencil for generated problems: laplacian | helmholtz:<k>
    #[arg(long, default_value = "laplacian")]
    stencil: String,
    /// Number of domains
    #[arg(long, default_value_t = 4)]
    domains: usize,
    /// Partitioning strategy: grid | bfs
    #[arg(long, default_value = "bfs")]
    partitioner: String,
    /// Worker count (env D3M_WORKERS overrides)
    #[arg(long, default_value_t = 2)]
    workers: usize,
    /// Memory mode: fast | compact
    #[arg(long, default_value = "compact")]
    memory_mode: String,
    /// Agglomeration policy: column | none
    #[arg(long, default_value = "column")]
    agglomerate: String,
    #[arg(long, default_value = "calibration.json")]
    calibration: PathBuf,
    /// Output directory for artifacts
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed forwarded to the problem generator
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
}

#[derive(Args)]
struct ScalingArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Worker counts to sweep
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 4])]
    worker_list: Vec<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Solve(a) => cmd_solve(&a.problem),
        Command::Scaling(a) => cmd_scaling(&a.problem, &a.worker_list),
    };
    match code {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::SingularDomain { .. } | Error::SingularBlock { .. } => 4,
        _ => 2,
    }
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<ExitCode, Error> {
    let set = calibrate_kernels(&a.sizes, a.reps)?;
    set.save_to(&a.calibration)?;
    println!("calibration written to {}", a.calibration.display());
    println!("fingerprint: {}", set.fingerprint);
    for t in &set.tables {
        println!("  {:?}:", t.kind);
        for (s, tm) in t.sizes.iter().zip(t.times.iter()) {
            println!("    n = {s:5}  median {tm:.3e} s");
        }
    }
    for w in &set.warnings {
        eprintln!("warning: {w}");
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_stencil(text: &str) -> Result<Stencil, Error> {
    if text == "laplacian" {
        return Ok(Stencil::Laplacian);
    }
    if let Some(k) = text.strip_prefix("helmholtz:") {
        let k: f64 = k
            .parse()
            .map_err(|_| Error::invalid(format!("bad helmholtz wavenumber `{k}`")))?;
        return Ok(Stencil::Helmholtz(k));
    }
    Err(Error::invalid(format!(
        "stencil must be `laplacian` or `helmholtz:<k>`, got `{text}`"
    )))
}

fn build_system(a: &ProblemArgs) -> Result<SparseSystem, Error> {
    match (&a.generate, &a.matrix) {
        (Some(dims), None) => generate_grid_problem(dims, parse_stencil(&a.stencil)?, a.seed),
        (None, Some(path)) => SparseSystem::load_from(path),
        (None, None) => Err(Error::invalid("one of --generate or --matrix is required")),
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    }
}

fn load_or_calibrate(path: &Path) -> Result<CalibrationSet, Error> {
    match CalibrationSet::load_from(path) {
        Ok((set, warn)) => {
            if let Some(w) = warn {
                eprintln!("warning: {w}");
            }
            Ok(set)
        }
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => {
            eprintln!(
                "warning: no calibration at {}; running a quick calibration first",
                path.display()
            );
            let set = calibrate_kernels(&[32, 64, 128, 256], 3)?;
            set.save_to(path)?;
            Ok(set)
        }
        Err(e) => Err(e),
    }
}

fn samples_path(calibration: &Path) -> PathBuf {
    let mut p = calibration.as_os_str().to_owned();
    p.push(".samples.jsonl");
    PathBuf::from(p)
}

fn pipeline_config(a: &ProblemArgs, workers: usize) -> Result<PipelineConfig, Error> {
    let partitioner = match a.partitioner.as_str() {
        "grid" => PartitionStrategy::Grid,
        "bfs" => PartitionStrategy::GreedyBfs,
        other => {
            return Err(Error::invalid(format!(
                "partitioner must be `grid` or `bfs`, got `{other}`"
            )))
        }
    };
    let memory_mode = match a.memory_mode.as_str() {
        "fast" => MemoryMode::Fast,
        "compact" => MemoryMode::Compact,
        other => {
            return Err(Error::invalid(format!(
                "memory mode must be `fast` or `compact`, got `{other}`"
            )))
        }
    };
    let agglomeration = match a.agglomerate.as_str() {
        "column" => AgglomerationPolicy::PerBlockColumn,
        "none" => AgglomerationPolicy::None,
        other => {
            return Err(Error::invalid(format!(
                "agglomeration must be `column` or `none`, got `{other}`"
            )))
        }
    };
    Ok(PipelineConfig {
        num_domains: a.domains,
        partitioner,
        workers,
        memory_mode,
        agglomeration,
        comm: measure_comm_model(),
        debug_trace: std::env::var("D3M_TRACE").is_ok_and(|v| v == "1"),
        ..PipelineConfig::default()
    })
}

fn effective_workers(a: &ProblemArgs) -> Result<usize, Error> {
    if let Ok(v) = std::env::var("D3M_WORKERS") {
        let w: usize = v
            .parse()
            .map_err(|_| Error::invalid(format!("bad D3M_WORKERS value `{v}`")))?;
        if w == 0 {
            return Err(Error::invalid("D3M_WORKERS must be at least 1"));
        }
        return Ok(w);
    }
    if a.workers == 0 {
        return Err(Error::invalid("--workers must be at least 1"));
    }
    Ok(a.workers)
}

fn write_solution(out: &Path, solution: &[Vec<f64>], residuals: &[f64]) -> Result<(), Error> {
    let n = solution.first().map_or(0, |v| v.len());
    let mut bytes = Vec::with_capacity(8 * n * solution.len());
    for rhs in solution {
        for v in rhs {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(&out.join("solution.bin"), &bytes)?;
    let header = serde_json::json!({
        "n": n,
        "nrhs": solution.len(),
        "format": "f64le",
        "layout": "one full-length vector per rhs, concatenated",
        "residuals": residuals,
    });
    atomic_write(
        &out.join("solution.json"),
        serde_json::to_string_pretty(&header)
            .expect("header serialization cannot fail")
            .as_bytes(),
    )?;
    Ok(())
}

fn append_measured_samples(
    cal_path: &Path,
    prep: &Prepared,
    trace: &d3m_core::executor::RunTrace,
) {
    let path = samples_path(cal_path);
    let mut durations = vec![0.0f64; prep.state.graph.tasks.len()];
    for r in &trace.records {
        durations[r.task] = r.finish_s - r.start_s;
    }
    for dom in &prep.state.domains {
        let features = domain_features(dom);
        let red = durations[prep.state.graph.primal_of_domain[dom.domain_id]];
        let rec = durations[prep.state.graph.recover_of_domain[dom.domain_id]];
        let _ = SampleStore::append_to(&path, "reduction", features, red.max(1e-9));
        let _ = SampleStore::append_to(&path, "recovery", features, rec.max(1e-9));
    }
}

fn cmd_solve(a: &ProblemArgs) -> Result<ExitCode, Error> {
    let sys = build_system(a)?;
    let workers = effective_workers(a)?;
    let cal = load_or_calibrate(&a.calibration)?;
    let samples = SampleStore::load_from(samples_path(&a.calibration))?;
    let cfg = pipeline_config(a, workers)?;
    std::fs::create_dir_all(&a.out)?;

    let prep = prepare(&sys, &cfg, &cal, &samples)?;
    let out = run_parallel(&sys, &prep, &cfg)?;

    atomic_write(
        &a.out.join("taskgraph.dot"),
        prep.state.graph.to_dot().as_bytes(),
    )?;
    prep.schedule.save_json(&a.out.join("schedule.json"))?;
    let (gantt, breakdown) =
        collect_timeline(&out.exec.trace, &prep.schedule, &prep.state.graph, None)?;
    atomic_write(&a.out.join("gantt.csv"), gantt.as_bytes())?;
    atomic_write(
        &a.out.join("breakdown.json"),
        serde_json::to_string_pretty(&breakdown)
            .expect("breakdown serialization cannot fail")
            .as_bytes(),
    )?;
    write_solution(&a.out, &out.exec.solution, &out.residuals)?;
    append_measured_samples(&a.calibration, &prep, &out.exec.trace);

    let worst = out.residuals.iter().copied().fold(0.0f64, f64::max);
    println!(
        "solved n = {} with {} domains on {} workers ({} tasks)",
        sys.n,
        cfg.num_domains,
        workers,
        prep.state.graph.tasks.len()
    );
    println!(
        "residual = {worst:.3e}, makespan = {:.3} s, peak blocks = {} bytes",
        out.exec.trace.makespan_s, out.exec.trace.peak_block_bytes
    );
    println!("artifacts in {}", a.out.display());
    if worst > RESIDUAL_GATE {
        eprintln!("residual {worst:.3e} above gate {RESIDUAL_GATE:.1e}");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_scaling(a: &ProblemArgs, worker_list: &[usize]) -> Result<ExitCode, Error> {
    if worker_list.is_empty() {
        return Err(Error::invalid("worker list must not be empty"));
    }
    let sys = build_system(a)?;
    let cal = load_or_calibrate(&a.calibration)?;
    let samples = SampleStore::load_from(samples_path(&a.calibration))?;
    std::fs::create_dir_all(&a.out)?;

    let mut rows: Vec<(usize, f64, u64)> = Vec::new();
    let mut reference_bits: Option<Vec<Vec<u64>>> = None;
    let mut first_artifacts = true;
    for &p in worker_list {
        let cfg = pipeline_config(a, p)?;
        let prep = prepare(&sys, &cfg, &cal, &samples)?;
        let out = run_parallel(&sys, &prep, &cfg)?;
        let bits: Vec<Vec<u64>> = out
            .exec
            .solution
            .iter()
            .map(|v| v.iter().map(|x| x.to_bits()).collect())
            .collect();
        match &reference_bits {
            None => reference_bits = Some(bits),
            Some(reference) => {
                if *reference != bits {
                    return Err(Error::invalid(format!(
                        "solution at P = {p} differs from the reference run"
                    )));
                }
            }
        }
        let worst = out.residuals.iter().copied().fold(0.0f64, f64::max);
        if worst > RESIDUAL_GATE {
            eprintln!("residual {worst:.3e} above gate at P = {p}");
            return Ok(ExitCode::from(3));
        }
        if first_artifacts {
            write_solution(&a.out, &out.exec.solution, &out.residuals)?;
            first_artifacts = false;
        }
        rows.push((p, out.exec.trace.makespan_s, out.exec.trace.peak_block_bytes));
        println!(
            "P = {p}: wall = {:.3} s, peak blocks = {} bytes",
            out.exec.trace.makespan_s, out.exec.trace.peak_block_bytes
        );
    }

    let t1 = worker_list
        .iter()
        .position(|&p| p == 1)
        .map(|i| rows[i].1)
        .unwrap_or_else(|| rows[0].1 * rows[0].0 as f64);
    let mut csv = String::from("workers,wall_s,speedup,efficiency,peak_bytes\n");
    for &(p, wall, peak) in &rows {
        let speedup = t1 / wall;
        let efficiency = speedup / p as f64;
        csv.push_str(&format!(
            "{p},{wall:?},{speedup:?},{efficiency:?},{peak}\n"
        ));
    }
    atomic_write(&a.out.join("scaling.csv"), csv.as_bytes())?;
    println!("scaling table in {}", a.out.join("scaling.csv").display());
    Ok(ExitCode::SUCCESS)
}
