//! Browser demo bindings: three interactive views over the solver pipeline
//! on a 2-d grid problem — the domain split with its solution field, the
//! reduced block matrix with fill, and the weighted task graph with its
//! static schedule.
//!
//! Everything here is single-threaded and wall-clock free so it runs under
//! `wasm32-unknown-unknown`; kernel weights come from a synthetic flop-rate
//! calibration instead of measurements.

use d3m_core::blockmat::{
    assemble_dual_matrix, sequential_block_ldlt, symbolic_block_factorize, BlockLayout,
};
use d3m_core::costmodel::{synthetic_calibration, weigh_graph, SampleStore};
use d3m_core::pipeline::contribution_pattern;
use d3m_core::primal::{compute_dtn, factor_interior, recover_primal};
use d3m_core::problem::{
    generate_grid_problem, partition_domains, split_domain_dofs, Partition, PartitionStrategy,
    SparseSystem, Stencil,
};
use d3m_core::scheduler::{list_schedule, makespan_bounds, CommModel};
use d3m_core::taskgraph::{agglomerate, build_task_graph, AgglomerationPolicy, TaskGraph};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const DEMO_FLOPS: f64 = 2e9;

struct DemoPipeline {
    sys: SparseSystem,
    partition: Partition,
    domains: Vec<d3m_core::problem::DomainProblem>,
    layout: BlockLayout,
    symb: d3m_core::blockmat::SymbolicFactorization,
    graph: TaskGraph,
}

fn build(nx: usize, ny: usize, num_domains: usize, k: f64) -> Result<DemoPipeline, String> {
    let stencil = if k > 0.0 {
        Stencil::Helmholtz(k)
    } else {
        Stencil::Laplacian
    };
    let sys = generate_grid_problem(&[nx, ny], stencil, 0).map_err(|e| e.to_string())?;
    let partition = partition_domains(&sys, num_domains, PartitionStrategy::Grid)
        .or_else(|_| partition_domains(&sys, num_domains, PartitionStrategy::GreedyBfs))
        .map_err(|e| e.to_string())?;
    let domains = split_domain_dofs(&sys, &partition).map_err(|e| e.to_string())?;
    let layout = BlockLayout::build(&domains, &partition);
    let pattern = contribution_pattern(&domains, &layout);
    let symb = symbolic_block_factorize(&pattern).map_err(|e| e.to_string())?;
    let graph = build_task_graph(&symb, &layout, &domains, 1).map_err(|e| e.to_string())?;
    Ok(DemoPipeline {
        sys,
        partition,
        domains,
        layout,
        symb,
        graph,
    })
}

fn weighted(p: &DemoPipeline, policy: AgglomerationPolicy) -> Result<TaskGraph, String> {
    let g = agglomerate(&p.graph, policy);
    let cal = synthetic_calibration(DEMO_FLOPS);
    weigh_graph(&g, &cal, &SampleStore::default(), &p.symb, &p.layout, &p.domains)
        .map_err(|e| e.to_string())
}

/// Sequential direct solve through the block pipeline, no executor involved.
fn direct_solve(p: &DemoPipeline) -> Result<(Vec<f64>, f64), String> {
    let factors: Vec<_> = p
        .domains
        .iter()
        .map(factor_interior)
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let contribs: Vec<_> = p
        .domains
        .iter()
        .zip(&factors)
        .map(|(d, f)| compute_dtn(d, f))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let kmat = assemble_dual_matrix(&contribs, &p.layout).map_err(|e| e.to_string())?;
    let factor = sequential_block_ldlt(&kmat, &p.symb).map_err(|e| e.to_string())?;
    let xs = factor.block_solve(&kmat.rhs_blocks).map_err(|e| e.to_string())?;
    let mut x = vec![0.0; p.sys.n];
    for (r, seg) in xs.iter().enumerate() {
        for (off, &g) in p.layout.dofs[r].iter().enumerate() {
            x[g] = seg[(off, 0)];
        }
    }
    for (dom, f) in p.domains.iter().zip(&factors) {
        let u_b: Vec<f64> = dom
            .interface
            .iter()
            .map(|g| {
                let (r, off) = p.layout.pos[g];
                xs[r][(off, 0)]
            })
            .collect();
        let u_i = recover_primal(dom, f, &u_b, &dom.f_i[0]).map_err(|e| e.to_string())?;
        for (li, &g) in dom.interior.iter().enumerate() {
            x[g] = u_i[li];
        }
    }
    let residual = p.sys.residual_norm(&x, &p.sys.rhs[0]);
    Ok((x, residual))
}

/// Domain split, interface DOFs, reduced block pattern with fill, and the
/// solution field of the generated 2-d problem.
#[wasm_bindgen]
pub fn decompose_json(nx: usize, ny: usize, domains: usize, helmholtz_k: f64) -> Result<String, String> {
    #[derive(Serialize)]
    struct Blocks {
        sizes: Vec<usize>,
        row_domain: Vec<usize>,
        original: Vec<(usize, usize)>,
        fill: Vec<(usize, usize)>,
    }
    #[derive(Serialize)]
    struct Out {
        nx: usize,
        ny: usize,
        n: usize,
        num_domains: usize,
        owner: Vec<usize>,
        interface: Vec<bool>,
        blocks: Blocks,
        solution: Vec<f64>,
        residual: f64,
    }
    let p = build(nx, ny, domains, helmholtz_k)?;
    let (solution, residual) = direct_solve(&p)?;
    let mut interface = vec![false; p.sys.n];
    for dom in &p.domains {
        for &g in &dom.interface {
            interface[g] = true;
        }
    }
    let original = contribution_pattern(&p.domains, &p.layout);
    let out = Out {
        nx,
        ny,
        n: p.sys.n,
        num_domains: p.partition.num_domains,
        owner: p.partition.owner.clone(),
        interface,
        blocks: Blocks {
            sizes: p.layout.sizes.clone(),
            row_domain: p.layout.row_domain.clone(),
            original: original.iter().copied().collect(),
            fill: p.symb.fill_blocks.iter().copied().collect(),
        },
        solution,
        residual,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Weighted task graph (nodes, phases, edges with payload bytes).
#[wasm_bindgen]
pub fn task_graph_json(
    nx: usize,
    ny: usize,
    domains: usize,
    agglomerate_columns: bool,
) -> Result<String, String> {
    let p = build(nx, ny, domains, 0.0)?;
    let policy = if agglomerate_columns {
        AgglomerationPolicy::PerBlockColumn
    } else {
        AgglomerationPolicy::None
    };
    let g = weighted(&p, policy)?;
    Ok(g.to_json())
}

/// Static list schedule of the weighted graph: per-worker bars plus the
/// critical-path and work lower bounds.
#[wasm_bindgen]
pub fn schedule_json(
    nx: usize,
    ny: usize,
    domains: usize,
    workers: usize,
    agglomerate_columns: bool,
) -> Result<String, String> {
    #[derive(Serialize)]
    struct Bar {
        worker: usize,
        task: usize,
        label: String,
        phase: &'static str,
        start: f64,
        finish: f64,
    }
    #[derive(Serialize)]
    struct Out {
        workers: usize,
        makespan: f64,
        lower_bound: f64,
        critical_path: f64,
        total_work: f64,
        bars: Vec<Bar>,
    }
    let p = build(nx, ny, domains, 0.0)?;
    let policy = if agglomerate_columns {
        AgglomerationPolicy::PerBlockColumn
    } else {
        AgglomerationPolicy::None
    };
    let g = weighted(&p, policy)?;
    let comm = CommModel::new(4e9, 2e-6);
    let s = list_schedule(&g, workers.max(1), comm).map_err(|e| e.to_string())?;
    let b = makespan_bounds(&g, workers.max(1)).map_err(|e| e.to_string())?;
    let mut bars = Vec::new();
    for (w, order) in s.order.iter().enumerate() {
        for &t in order {
            bars.push(Bar {
                worker: w,
                task: t,
                label: g.tasks[t].label(),
                phase: g.tasks[t].phase.name(),
                start: s.start[t],
                finish: s.finish[t],
            });
        }
    }
    let out = Out {
        workers: s.num_workers,
        makespan: s.makespan,
        lower_bound: b.lower,
        critical_path: b.critical_path,
        total_work: b.work,
        bars,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}
