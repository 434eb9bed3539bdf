//! End-to-end orchestration shared by the CLI, the demos, and the test
//! suites: partition, split, reduce, schedule, execute, recover.

use crate::blockmat::{symbolic_block_factorize, BlockLayout};
use crate::costmodel::{weigh_graph, CalibrationSet, SampleStore};
use crate::error::Result;
use crate::executor::{
    execute_parallel, execute_sequential, ExecConfig, ExecOutput, MemoryMode, ProblemState,
};
use crate::problem::{
    partition_domains, split_domain_dofs, DomainProblem, Partition, PartitionStrategy,
    SparseSystem,
};
use crate::scheduler::{list_schedule, CommModel, Schedule};
use crate::taskgraph::{agglomerate, build_task_graph, AgglomerationPolicy};
use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

/// Write a file atomically: write to a sibling temp file, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = path.to_path_buf();
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    tmp.set_file_name(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Block pattern touched by the domains' boundary contributions.
pub fn contribution_pattern(
    domains: &[DomainProblem],
    layout: &BlockLayout,
) -> BTreeSet<(usize, usize)> {
    let mut pattern = BTreeSet::new();
    for dom in domains {
        let rows: Vec<usize> = dom.interface.iter().map(|g| layout.pos[g].0).collect();
        for (a, &ri) in rows.iter().enumerate() {
            for &rj in &rows[..=a] {
                pattern.insert(if ri >= rj { (ri, rj) } else { (rj, ri) });
            }
        }
    }
    pattern
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub num_domains: usize,
    pub partitioner: PartitionStrategy,
    pub workers: usize,
    pub memory_mode: MemoryMode,
    pub agglomeration: AgglomerationPolicy,
    pub comm: CommModel,
    pub dense_crossover: usize,
    pub chaos_seed: Option<u64>,
    pub capture_factor: bool,
    pub stall_timeout: Duration,
    pub debug_trace: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            num_domains: 4,
            partitioner: PartitionStrategy::GreedyBfs,
            workers: 1,
            memory_mode: MemoryMode::Compact,
            agglomeration: AgglomerationPolicy::PerBlockColumn,
            comm: CommModel::ZERO,
            dense_crossover: crate::primal::DEFAULT_DENSE_CROSSOVER,
            chaos_seed: None,
            capture_factor: false,
            stall_timeout: Duration::from_secs(30),
            debug_trace: false,
        }
    }
}

impl PipelineConfig {
    pub fn exec_config(&self) -> ExecConfig {
        ExecConfig {
            memory_mode: self.memory_mode,
            chaos_seed: self.chaos_seed,
            stall_timeout: self.stall_timeout,
            capture_factor: self.capture_factor,
            debug_trace: self.debug_trace,
            dense_crossover: self.dense_crossover,
        }
    }
}

/// Everything needed to execute: immutable problem state plus the schedule.
pub struct Prepared {
    pub state: Arc<ProblemState>,
    pub schedule: Schedule,
    pub partition: Partition,
}

pub fn prepare(
    sys: &SparseSystem,
    cfg: &PipelineConfig,
    cal: &CalibrationSet,
    samples: &SampleStore,
) -> Result<Prepared> {
    let partition = partition_domains(sys, cfg.num_domains, cfg.partitioner)?;
    prepare_with_partition(sys, partition, cfg, cal, samples)
}

pub fn prepare_with_partition(
    sys: &SparseSystem,
    partition: Partition,
    cfg: &PipelineConfig,
    cal: &CalibrationSet,
    samples: &SampleStore,
) -> Result<Prepared> {
    let domains = split_domain_dofs(sys, &partition)?;
    let layout = BlockLayout::build(&domains, &partition);
    let pattern = contribution_pattern(&domains, &layout);
    let symb = symbolic_block_factorize(&pattern)?;
    let graph = build_task_graph(&symb, &layout, &domains, sys.rhs.len())?;
    let graph = agglomerate(&graph, cfg.agglomeration);
    let graph = weigh_graph(&graph, cal, samples, &symb, &layout, &domains)?;
    let schedule = list_schedule(&graph, cfg.workers, cfg.comm)?;
    let state = Arc::new(ProblemState {
        total_dofs: sys.n,
        nrhs: sys.rhs.len(),
        domains,
        layout,
        symb,
        graph,
    });
    Ok(Prepared {
        state,
        schedule,
        partition,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub exec: ExecOutput,
    /// relative 2-norm residual per right-hand side
    pub residuals: Vec<f64>,
}

pub fn run_parallel(sys: &SparseSystem, prep: &Prepared, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let exec = execute_parallel(&prep.state, &prep.schedule, &cfg.exec_config())?;
    let residuals = residuals_of(sys, &exec);
    Ok(PipelineOutput { exec, residuals })
}

pub fn run_sequential(sys: &SparseSystem, prep: &Prepared, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let exec = execute_sequential(&prep.state, &cfg.exec_config())?;
    let residuals = residuals_of(sys, &exec);
    Ok(PipelineOutput { exec, residuals })
}

fn residuals_of(sys: &SparseSystem, exec: &ExecOutput) -> Vec<f64> {
    exec.solution
        .iter()
        .zip(sys.rhs.iter())
        .map(|(x, b)| sys.residual_norm(x, b))
        .collect()
}

/// One-call convenience: prepare and run in parallel.
pub fn solve(
    sys: &SparseSystem,
    cfg: &PipelineConfig,
    cal: &CalibrationSet,
    samples: &SampleStore,
) -> Result<(Prepared, PipelineOutput)> {
    let prep = prepare(sys, cfg, cal, samples)?;
    let out = run_parallel(sys, &prep, cfg)?;
    Ok((prep, out))
}
