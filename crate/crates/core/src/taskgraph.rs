//! Symbolic simulation of the sequential pipeline into a weighted task DAG:
//! one primal-reduction task per domain, dense dual tasks per symbolic
//! factorization event, solve tasks per block row, and one recovery task per
//! domain, with data-transfer byte counts on every edge.
//!
//! Updates targeting the same destination block are serialized by explicit
//! edges in ascending source order, which pins the parallel execution to the
//! sequential reference bit for bit.

use crate::blockmat::{BlockLayout, SymbolicFactorization};
use crate::error::{Error, Result};
use crate::problem::DomainProblem;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};

pub type TaskId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    PrimalReduction,
    Dual,
    PrimalRecovery,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::PrimalReduction => "primal_reduction",
            Phase::Dual => "dual",
            Phase::PrimalRecovery => "primal_recovery",
        }
    }
}

/// Primitive task: one dense kernel call or one domain-level operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PTaskKind {
    InteriorFactor { domain: usize },
    Dtn { domain: usize },
    RhsReduce { domain: usize },
    BlkFactorize { row: usize },
    BlkTrisolve { row: usize, col: usize },
    BlkUpdate { row: usize, col: usize, src: usize },
    FwdSolveBlk { row: usize },
    DiagSolveBlk { row: usize },
    BwdSolveBlk { row: usize },
    Recover { domain: usize },
}

impl PTaskKind {
    pub fn name(self) -> &'static str {
        match self {
            PTaskKind::InteriorFactor { .. } => "interior_factor",
            PTaskKind::Dtn { .. } => "dtn",
            PTaskKind::RhsReduce { .. } => "rhs_reduce",
            PTaskKind::BlkFactorize { .. } => "blk_factorize",
            PTaskKind::BlkTrisolve { .. } => "blk_trisolve",
            PTaskKind::BlkUpdate { .. } => "blk_update",
            PTaskKind::FwdSolveBlk { .. } => "fwd_solve_blk",
            PTaskKind::DiagSolveBlk { .. } => "diag_solve_blk",
            PTaskKind::BwdSolveBlk { .. } => "bwd_solve_blk",
            PTaskKind::Recover { .. } => "recover",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PTask {
    pub kind: PTaskKind,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Task {
    pub id: TaskId,
    pub ptasks: Vec<PTask>,
    pub phase: Phase,
    /// seconds, the sum of ptask weights; assigned by the cost model
    pub weight: f64,
}

impl Task {
    /// Blocks and domains this task reads or writes, for reporting.
    pub fn resident_data(&self) -> Vec<String> {
        let mut out = Vec::new();
        for p in &self.ptasks {
            let s = match p.kind {
                PTaskKind::InteriorFactor { domain }
                | PTaskKind::Dtn { domain }
                | PTaskKind::RhsReduce { domain }
                | PTaskKind::Recover { domain } => format!("domain:{domain}"),
                PTaskKind::BlkFactorize { row } => format!("block:({row},{row})"),
                PTaskKind::BlkTrisolve { row, col } => format!("block:({row},{col})"),
                PTaskKind::BlkUpdate { row, col, .. } => format!("block:({row},{col})"),
                PTaskKind::FwdSolveBlk { row }
                | PTaskKind::DiagSolveBlk { row }
                | PTaskKind::BwdSolveBlk { row } => format!("seg:{row}"),
            };
            if !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }

    pub fn label(&self) -> String {
        if self.ptasks.is_empty() {
            return format!("task{}", self.id);
        }
        let names: Vec<&str> = self.ptasks.iter().map(|p| p.kind.name()).collect();
        names.join("+")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Edge {
    pub from: TaskId,
    pub to: TaskId,
    pub payload_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgglomerationPolicy {
    PerBlockColumn,
    None,
}

/// Weighted B-DAG of the whole pipeline.
#[derive(Debug, Clone)]
pub struct TaskGraph {
    pub tasks: Vec<Task>,
    pub edges: Vec<Edge>,
    /// incoming edge indices per task
    pub in_edges: Vec<Vec<usize>>,
    /// outgoing edge indices per task
    pub out_edges: Vec<Vec<usize>>,

    // role maps for the executor and the cost model
    pub primal_of_domain: Vec<TaskId>,
    pub recover_of_domain: Vec<TaskId>,
    pub factorize_of_row: Vec<TaskId>,
    pub fwd_of_row: Vec<TaskId>,
    pub diag_of_row: Vec<TaskId>,
    pub bwd_of_row: Vec<TaskId>,
    pub trisolve_of: HashMap<(usize, usize), TaskId>,
    pub update_of: HashMap<(usize, usize, usize), TaskId>,
    /// domains contributing entries to each block, ascending
    pub block_contribs: HashMap<(usize, usize), Vec<usize>>,
    /// domains contributing rhs entries to each block row, ascending
    pub row_g_contribs: Vec<Vec<usize>>,
    /// rows whose solve segments a recovery task reads
    pub recover_rows: Vec<Vec<usize>>,
    pub nrhs: usize,
}

impl TaskGraph {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.tasks.iter().map(|t| t.weight).sum()
    }

    pub fn producers_of(&self, t: TaskId) -> impl Iterator<Item = TaskId> + '_ {
        self.in_edges[t].iter().map(move |&e| self.edges[e].from)
    }

    pub fn consumers_of(&self, t: TaskId) -> impl Iterator<Item = TaskId> + '_ {
        self.out_edges[t].iter().map(move |&e| self.edges[e].to)
    }

    /// Ascending-id topological order; errors with a cycle witness.
    pub fn topo_order(&self) -> Result<Vec<TaskId>> {
        let n = self.tasks.len();
        let mut indeg: Vec<usize> = (0..n).map(|t| self.in_edges[t].len()).collect();
        let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> = indeg
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(t, _)| std::cmp::Reverse(t))
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(std::cmp::Reverse(t)) = ready.pop() {
            order.push(t);
            for &e in &self.out_edges[t] {
                let v = self.edges[e].to;
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    ready.push(std::cmp::Reverse(v));
                }
            }
        }
        if order.len() != n {
            let witness: Vec<TaskId> = (0..n).filter(|&t| indeg[t] > 0).take(8).collect();
            return Err(Error::GraphCycle { witness });
        }
        Ok(order)
    }

    /// Longest weighted path with zero communication cost. Ties broken by
    /// lower task id.
    pub fn critical_path(&self) -> Result<(f64, Vec<TaskId>)> {
        let order = self.topo_order()?;
        let n = self.tasks.len();
        if n == 0 {
            return Ok((0.0, Vec::new()));
        }
        let mut dist = vec![0.0f64; n];
        let mut prev: Vec<Option<TaskId>> = vec![None; n];
        for &t in &order {
            let mut best: Option<(f64, TaskId)> = None;
            for p in self.producers_of(t) {
                let better = match best {
                    None => true,
                    Some((bd, bp)) => dist[p] > bd || (dist[p] == bd && p < bp),
                };
                if better {
                    best = Some((dist[p], p));
                }
            }
            dist[t] = self.tasks[t].weight + best.map_or(0.0, |(d, _)| d);
            prev[t] = best.map(|(_, p)| p);
        }
        let mut end = 0;
        for t in 1..n {
            if dist[t] > dist[end] {
                end = t;
            }
        }
        let mut path = vec![end];
        while let Some(p) = prev[*path.last().unwrap()] {
            path.push(p);
        }
        path.reverse();
        Ok((dist[end], path))
    }

    /// DOT export, one node per task labeled kind+weight.
    pub fn to_dot(&self) -> String {
        use std::fmt::Write;
        let mut s = String::from("digraph tasks {\n  rankdir=TB;\n");
        for t in &self.tasks {
            let color = match t.phase {
                Phase::PrimalReduction => "lightblue",
                Phase::Dual => "lightgray",
                Phase::PrimalRecovery => "lightgreen",
            };
            writeln!(
                s,
                "  t{} [label=\"{}\\n{:.3e}s\", style=filled, fillcolor={}];",
                t.id,
                t.label(),
                t.weight,
                color
            )
            .unwrap();
        }
        for e in &self.edges {
            writeln!(s, "  t{} -> t{} [label=\"{}B\"];", e.from, e.to, e.payload_bytes).unwrap();
        }
        s.push_str("}\n");
        s
    }

    /// JSON export with the full edge list.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Node<'a> {
            id: TaskId,
            label: String,
            phase: &'a str,
            weight: f64,
            ptasks: Vec<&'a str>,
        }
        #[derive(Serialize)]
        struct Export<'a> {
            tasks: Vec<Node<'a>>,
            edges: &'a [Edge],
        }
        let tasks = self
            .tasks
            .iter()
            .map(|t| Node {
                id: t.id,
                label: t.label(),
                phase: t.phase.name(),
                weight: t.weight,
                ptasks: t.ptasks.iter().map(|p| p.kind.name()).collect(),
            })
            .collect();
        serde_json::to_string_pretty(&Export {
            tasks,
            edges: &self.edges,
        })
        .expect("graph export cannot fail")
    }

    /// Build a synthetic graph for scheduler tests and demos.
    pub fn synthetic(weights: &[f64], edges: &[(TaskId, TaskId, u64)]) -> Self {
        let tasks: Vec<Task> = weights
            .iter()
            .enumerate()
            .map(|(id, &w)| Task {
                id,
                ptasks: vec![],
                phase: Phase::Dual,
                weight: w,
            })
            .collect();
        let edge_list: Vec<Edge> = edges
            .iter()
            .map(|&(from, to, payload_bytes)| Edge {
                from,
                to,
                payload_bytes,
            })
            .collect();
        let mut g = TaskGraph {
            in_edges: vec![Vec::new(); tasks.len()],
            out_edges: vec![Vec::new(); tasks.len()],
            tasks,
            edges: edge_list,
            primal_of_domain: vec![],
            recover_of_domain: vec![],
            factorize_of_row: vec![],
            fwd_of_row: vec![],
            diag_of_row: vec![],
            bwd_of_row: vec![],
            trisolve_of: HashMap::new(),
            update_of: HashMap::new(),
            block_contribs: HashMap::new(),
            row_g_contribs: vec![],
            recover_rows: vec![],
            nrhs: 0,
        };
        g.rebuild_adjacency();
        g
    }

    fn rebuild_adjacency(&mut self) {
        self.in_edges = vec![Vec::new(); self.tasks.len()];
        self.out_edges = vec![Vec::new(); self.tasks.len()];
        for (i, e) in self.edges.iter().enumerate() {
            self.out_edges[e.from].push(i);
            self.in_edges[e.to].push(i);
        }
    }
}

struct GraphBuilder {
    tasks: Vec<Task>,
    edges: BTreeMap<(TaskId, TaskId), u64>,
}

impl GraphBuilder {
    fn add_task(&mut self, phase: Phase, ptasks: Vec<PTaskKind>) -> TaskId {
        let id = self.tasks.len();
        self.tasks.push(Task {
            id,
            ptasks: ptasks
                .into_iter()
                .map(|kind| PTask { kind, weight: 0.0 })
                .collect(),
            phase,
            weight: 0.0,
        });
        id
    }

    fn add_edge(&mut self, from: TaskId, to: TaskId, bytes: u64) {
        debug_assert_ne!(from, to);
        self.edges.entry((from, to)).or_insert(bytes);
    }
}

/// Emit the full pipeline task graph from the symbolic factorization and the
/// per-domain problems.
pub fn build_task_graph(
    symb: &SymbolicFactorization,
    layout: &BlockLayout,
    domains: &[DomainProblem],
    nrhs: usize,
) -> Result<TaskGraph> {
    let rows = symb.num_rows;
    if rows != layout.num_rows() {
        return Err(Error::GraphBuild(format!(
            "symbolic factorization has {rows} rows, layout has {}",
            layout.num_rows()
        )));
    }
    let sz = |r: usize| layout.sizes[r] as u64;
    let nd = domains.len();
    let mut b = GraphBuilder {
        tasks: Vec::new(),
        edges: BTreeMap::new(),
    };

    // which blocks and which rhs rows each domain's contribution touches
    let mut block_contribs: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    let mut row_g_contribs: Vec<Vec<usize>> = vec![Vec::new(); rows];
    for dom in domains {
        let mut touched: std::collections::BTreeSet<(usize, usize)> =
            std::collections::BTreeSet::new();
        let mut rows_touched: std::collections::BTreeSet<usize> = std::collections::BTreeSet::new();
        let mapped: Vec<(usize, usize)> = dom
            .interface
            .iter()
            .map(|g| {
                layout.pos.get(g).copied().ok_or_else(|| {
                    Error::GraphBuild(format!(
                        "domain {} references interface DOF {g} outside the layout",
                        dom.domain_id
                    ))
                })
            })
            .collect::<Result<_>>()?;
        for (a, &(ri, _)) in mapped.iter().enumerate() {
            rows_touched.insert(ri);
            for &(rj, _) in &mapped[..=a] {
                let key = if ri >= rj { (ri, rj) } else { (rj, ri) };
                touched.insert(key);
            }
        }
        for key in touched {
            block_contribs.entry(key).or_default().push(dom.domain_id);
        }
        for r in rows_touched {
            row_g_contribs[r].push(dom.domain_id);
        }
    }
    for v in block_contribs.values() {
        debug_assert!(v.windows(2).all(|w| w[0] < w[1]));
    }
    for &(i, j) in block_contribs.keys() {
        if !symb.pattern.contains(&(i, j)) {
            return Err(Error::GraphBuild(format!(
                "contribution touches block ({i},{j}) missing from the symbolic pattern"
            )));
        }
    }

    // primal reduction: one task per domain
    let primal_of_domain: Vec<TaskId> = domains
        .iter()
        .map(|d| {
            b.add_task(
                Phase::PrimalReduction,
                vec![
                    PTaskKind::InteriorFactor { domain: d.domain_id },
                    PTaskKind::Dtn { domain: d.domain_id },
                    PTaskKind::RhsReduce { domain: d.domain_id },
                ],
            )
        })
        .collect();

    // dual factorization events in canonical elimination order
    let mut factorize_of_row = vec![0usize; rows];
    let mut trisolve_of: HashMap<(usize, usize), TaskId> = HashMap::new();
    let mut update_of: HashMap<(usize, usize, usize), TaskId> = HashMap::new();
    for k in 0..rows {
        factorize_of_row[k] = b.add_task(Phase::Dual, vec![PTaskKind::BlkFactorize { row: k }]);
        for &i in &symb.col_rows[k] {
            let t = b.add_task(Phase::Dual, vec![PTaskKind::BlkTrisolve { row: i, col: k }]);
            trisolve_of.insert((i, k), t);
        }
        let cr = &symb.col_rows[k];
        for (a, &j) in cr.iter().enumerate() {
            for &i in &cr[a..] {
                let t = b.add_task(
                    Phase::Dual,
                    vec![PTaskKind::BlkUpdate { row: i, col: j, src: k }],
                );
                update_of.insert((i, j, k), t);
            }
        }
    }

    // solve tasks: forward ascending, diagonal ascending, backward descending
    let fwd_of_row: Vec<TaskId> = (0..rows)
        .map(|r| b.add_task(Phase::Dual, vec![PTaskKind::FwdSolveBlk { row: r }]))
        .collect();
    let diag_of_row: Vec<TaskId> = (0..rows)
        .map(|r| b.add_task(Phase::Dual, vec![PTaskKind::DiagSolveBlk { row: r }]))
        .collect();
    let mut bwd_of_row = vec![0usize; rows];
    for r in (0..rows).rev() {
        bwd_of_row[r] = b.add_task(Phase::Dual, vec![PTaskKind::BwdSolveBlk { row: r }]);
    }

    // recovery: one task per domain
    let recover_of_domain: Vec<TaskId> = domains
        .iter()
        .map(|d| b.add_task(Phase::PrimalRecovery, vec![PTaskKind::Recover { domain: d.domain_id }]))
        .collect();

    // wire the block version chains: contributions feed the first writer,
    // updates chain in ascending source order, the finisher consumes last
    for &(i, j) in &symb.pattern {
        let sources = symb.update_sources(i, j);
        let finisher = if i == j {
            factorize_of_row[i]
        } else {
            trisolve_of[&(i, j)]
        };
        let mut writers: Vec<TaskId> = sources.iter().map(|&k| update_of[&(i, j, k)]).collect();
        writers.push(finisher);
        let contribs = block_contribs.get(&(i, j));
        if let Some(doms) = contribs {
            let c_bytes = |m: usize| {
                let s = domains[m].interface.len() as u64;
                8 * (s * s + s * nrhs as u64)
            };
            for &m in doms {
                b.add_edge(primal_of_domain[m], writers[0], c_bytes(m));
            }
        }
        for w in writers.windows(2) {
            b.add_edge(w[0], w[1], 8 * sz(i) * sz(j));
        }
    }

    // trisolve dependencies
    for k in 0..rows {
        for &i in &symb.col_rows[k] {
            b.add_edge(factorize_of_row[k], trisolve_of[&(i, k)], 8 * sz(k) * sz(k));
        }
        let cr = &symb.col_rows[k];
        for (a, &j) in cr.iter().enumerate() {
            for &i in &cr[a..] {
                let u = update_of[&(i, j, k)];
                b.add_edge(trisolve_of[&(i, k)], u, 8 * sz(i) * sz(k));
                b.add_edge(trisolve_of[&(j, k)], u, 8 * sz(j) * sz(k));
            }
        }
    }

    // solve chains
    for r in 0..rows {
        let fwd = fwd_of_row[r];
        for &m in &row_g_contribs[r] {
            let s = domains[m].interface.len() as u64;
            b.add_edge(primal_of_domain[m], fwd, 8 * s * nrhs as u64);
        }
        b.add_edge(factorize_of_row[r], fwd, 8 * sz(r) * sz(r));
        for &j in &symb.row_cols[r] {
            b.add_edge(trisolve_of[&(r, j)], fwd, 8 * sz(r) * sz(j));
            b.add_edge(fwd_of_row[j], fwd, 8 * sz(j) * nrhs as u64);
        }
        b.add_edge(fwd, diag_of_row[r], 8 * sz(r) * nrhs as u64);
        b.add_edge(factorize_of_row[r], diag_of_row[r], 8 * sz(r) * sz(r));
        let bwd = bwd_of_row[r];
        b.add_edge(diag_of_row[r], bwd, 8 * sz(r) * nrhs as u64);
        b.add_edge(factorize_of_row[r], bwd, 8 * sz(r) * sz(r));
        for &i in &symb.col_rows[r] {
            b.add_edge(trisolve_of[&(i, r)], bwd, 8 * sz(i) * sz(r));
            b.add_edge(bwd_of_row[i], bwd, 8 * sz(i) * nrhs as u64);
        }
    }

    // recovery dependencies
    let mut recover_rows: Vec<Vec<usize>> = vec![Vec::new(); nd];
    for dom in domains {
        let rec = recover_of_domain[dom.domain_id];
        let factor_bytes = 8 * (dom.a_ii.nnz() + dom.interior.len()) as u64;
        b.add_edge(primal_of_domain[dom.domain_id], rec, factor_bytes);
        let mut rows_needed: std::collections::BTreeSet<usize> = std::collections::BTreeSet::new();
        for g in &dom.interface {
            rows_needed.insert(layout.pos[g].0);
        }
        for &r in &rows_needed {
            b.add_edge(bwd_of_row[r], rec, 8 * sz(r) * nrhs as u64);
        }
        recover_rows[dom.domain_id] = rows_needed.into_iter().collect();
    }

    let edges: Vec<Edge> = b
        .edges
        .iter()
        .map(|(&(from, to), &payload_bytes)| Edge {
            from,
            to,
            payload_bytes,
        })
        .collect();
    let mut g = TaskGraph {
        in_edges: vec![Vec::new(); b.tasks.len()],
        out_edges: vec![Vec::new(); b.tasks.len()],
        tasks: b.tasks,
        edges,
        primal_of_domain,
        recover_of_domain,
        factorize_of_row,
        fwd_of_row,
        diag_of_row,
        bwd_of_row,
        trisolve_of,
        update_of,
        block_contribs,
        row_g_contribs,
        recover_rows,
        nrhs,
    };
    g.rebuild_adjacency();
    g.topo_order()?;
    Ok(g)
}

/// Agglomerate ptasks into larger tasks. `PerBlockColumn` merges each
/// trisolve with the one update it alone enables (the diagonal update fed by
/// that trisolve on both sides); `None` returns the graph unchanged.
pub fn agglomerate(g: &TaskGraph, policy: AgglomerationPolicy) -> TaskGraph {
    match policy {
        AgglomerationPolicy::None => g.clone(),
        AgglomerationPolicy::PerBlockColumn => {
            let n = g.tasks.len();
            // target[t] = task this one merges into
            let mut target: Vec<TaskId> = (0..n).collect();
            for (&(i, j, k), &u) in &g.update_of {
                if i == j {
                    target[u] = g.trisolve_of[&(i, k)];
                }
            }
            // new ids in ascending order of surviving old ids
            let mut new_id = vec![usize::MAX; n];
            let mut survivors: Vec<TaskId> = (0..n).filter(|&t| target[t] == t).collect();
            survivors.sort_unstable();
            for (nid, &old) in survivors.iter().enumerate() {
                new_id[old] = nid;
            }
            let mut tasks: Vec<Task> = survivors
                .iter()
                .enumerate()
                .map(|(nid, &old)| Task {
                    id: nid,
                    ptasks: g.tasks[old].ptasks.clone(),
                    phase: g.tasks[old].phase,
                    weight: g.tasks[old].weight,
                })
                .collect();
            // append merged ptasks in ascending old-id order
            let mut merged: Vec<TaskId> = (0..n).filter(|&t| target[t] != t).collect();
            merged.sort_unstable();
            for old in merged {
                let into = new_id[target[old]];
                tasks[into].ptasks.extend(g.tasks[old].ptasks.iter().cloned());
                tasks[into].weight += g.tasks[old].weight;
            }
            // remap edges; distinct merged payloads between one pair add up
            let mut edges: BTreeMap<(TaskId, TaskId), u64> = BTreeMap::new();
            for e in &g.edges {
                let from = new_id[target[e.from]];
                let to = new_id[target[e.to]];
                if from != to {
                    *edges.entry((from, to)).or_insert(0) += e.payload_bytes;
                }
            }
            let remap = |t: TaskId| new_id[target[t]];
            let mut out = TaskGraph {
                in_edges: vec![Vec::new(); tasks.len()],
                out_edges: vec![Vec::new(); tasks.len()],
                tasks,
                edges: edges
                    .into_iter()
                    .map(|((from, to), payload_bytes)| Edge {
                        from,
                        to,
                        payload_bytes,
                    })
                    .collect(),
                primal_of_domain: g.primal_of_domain.iter().map(|&t| remap(t)).collect(),
                recover_of_domain: g.recover_of_domain.iter().map(|&t| remap(t)).collect(),
                factorize_of_row: g.factorize_of_row.iter().map(|&t| remap(t)).collect(),
                fwd_of_row: g.fwd_of_row.iter().map(|&t| remap(t)).collect(),
                diag_of_row: g.diag_of_row.iter().map(|&t| remap(t)).collect(),
                bwd_of_row: g.bwd_of_row.iter().map(|&t| remap(t)).collect(),
                trisolve_of: g
                    .trisolve_of
                    .iter()
                    .map(|(&k, &t)| (k, remap(t)))
                    .collect(),
                update_of: g.update_of.iter().map(|(&k, &t)| (k, remap(t))).collect(),
                block_contribs: g.block_contribs.clone(),
                row_g_contribs: g.row_g_contribs.clone(),
                recover_rows: g.recover_rows.clone(),
                nrhs: g.nrhs,
            };
            out.rebuild_adjacency();
            out.topo_order().expect("agglomeration preserves acyclicity");
            out
        }
    }
}
