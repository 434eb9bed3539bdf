//! Execute a schedule on in-process workers that interact only through
//! message channels carrying immutable copies of produced values.
//!
//! Each worker walks its static task list. Before running a task it drains
//! its inbox until every producer has reported; progress on pending messages
//! is therefore guaranteed at every inter-task boundary. Updates to one
//! destination block are serialized by graph edges in ascending source
//! order, so the parallel result is bitwise identical to the sequential
//! reference for any arrival order (exercised by the chaos-reordering hook).

use crate::blockmat::{
    gemm_minus_a_bt, half_backward_rows, half_forward_rows, kernel_factorize_block,
    kernel_update_block, BlockLayout, SymbolicFactorization,
};
use crate::dense::{gemm_minus_in_place, LdltFactor, Mat, PivotBlocks};
use crate::error::{Error, Result};
use crate::primal::{
    compute_dtn, factor_interior_with_crossover, DtnContribution, InteriorFactor,
};
use crate::problem::DomainProblem;
use crate::scheduler::Schedule;
use crate::taskgraph::{PTaskKind, Phase, TaskGraph, TaskId};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU64, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryMode {
    /// Allocate every fill block up front and retain all values to run end.
    Fast,
    /// Allocate on first write and release values after their last consumer.
    Compact,
}

#[derive(Debug, Clone)]
pub struct ExecConfig {
    pub memory_mode: MemoryMode,
    /// Reorder message arrival pseudo-randomly; used to stress determinism.
    pub chaos_seed: Option<u64>,
    pub stall_timeout: Duration,
    /// Collect factor blocks for bit-level comparisons.
    pub capture_factor: bool,
    /// Emit JSON-lines events to stderr.
    pub debug_trace: bool,
    /// Dense crossover handed to the interior factorization.
    pub dense_crossover: usize,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            memory_mode: MemoryMode::Compact,
            chaos_seed: None,
            stall_timeout: Duration::from_secs(30),
            capture_factor: false,
            debug_trace: false,
            dense_crossover: crate::primal::DEFAULT_DENSE_CROSSOVER,
        }
    }
}

/// Shared read-only problem state.
#[derive(Debug)]
pub struct ProblemState {
    pub domains: Vec<DomainProblem>,
    pub layout: BlockLayout,
    pub symb: SymbolicFactorization,
    pub graph: TaskGraph,
    pub nrhs: usize,
    pub total_dofs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskRecord {
    pub task: TaskId,
    pub worker: usize,
    pub start_s: f64,
    pub finish_s: f64,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub records: Vec<TaskRecord>,
    /// seconds per phase: primal reduction, dual, recovery
    pub phase_seconds: [f64; 3],
    pub peak_block_bytes: u64,
    pub bytes_communicated: u64,
    pub makespan_s: f64,
    pub num_workers: usize,
}

impl RunTrace {
    /// Every task exactly once, intervals disjoint per worker.
    pub fn validate(&self, num_tasks: usize) -> Result<()> {
        if self.records.len() != num_tasks {
            return Err(Error::invalid(format!(
                "trace has {} records for {num_tasks} tasks",
                self.records.len()
            )));
        }
        let mut seen = vec![false; num_tasks];
        let mut per_worker: Vec<Vec<(f64, f64)>> = vec![Vec::new(); self.num_workers];
        for r in &self.records {
            if seen[r.task] {
                return Err(Error::invalid(format!("task {} recorded twice", r.task)));
            }
            seen[r.task] = true;
            per_worker[r.worker].push((r.start_s, r.finish_s));
        }
        for (w, iv) in per_worker.iter_mut().enumerate() {
            iv.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for pair in iv.windows(2) {
                if pair[1].0 + 1e-9 < pair[0].1 {
                    return Err(Error::invalid(format!(
                        "worker {w} intervals overlap: {pair:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OffDiagVal {
    pub l: Mat,
    pub piv: PivotBlocks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ValueKey {
    Contribution(usize),
    Factor(usize),
    DiagFactor(usize),
    OffDiag(usize, usize),
    FwdSeg(usize),
    DiagSeg(usize),
    BwdSeg(usize),
    Recovered(usize),
}

#[derive(Debug, Clone)]
pub enum Value {
    Contribution(Arc<DtnContribution>),
    Factor(Arc<InteriorFactor>),
    DiagFactor(Arc<LdltFactor>),
    OffDiag(Arc<OffDiagVal>),
    Seg(Arc<Mat>),
    Recovered(Arc<Vec<Vec<f64>>>),
}

impl Value {
    fn byte_len(&self) -> u64 {
        match self {
            Value::Contribution(c) => c.byte_len(),
            Value::Factor(f) => 8 * f.stored_entries() as u64,
            Value::DiagFactor(f) => 8 * (f.lower.data.len() + 2 * f.n) as u64,
            Value::OffDiag(o) => 8 * (o.l.data.len() + 2 * o.piv.len()) as u64,
            Value::Seg(m) => m.byte_len(),
            Value::Recovered(r) => 8 * r.iter().map(|v| v.len()).sum::<usize>() as u64,
        }
    }

    /// Deep copy for an honest cross-worker transfer.
    fn deep_copy(&self) -> Value {
        match self {
            Value::Contribution(c) => Value::Contribution(Arc::new((**c).clone())),
            Value::Factor(f) => Value::Factor(Arc::new((**f).clone())),
            Value::DiagFactor(f) => Value::DiagFactor(Arc::new((**f).clone())),
            Value::OffDiag(o) => Value::OffDiag(Arc::new((**o).clone())),
            Value::Seg(m) => Value::Seg(Arc::new((**m).clone())),
            Value::Recovered(r) => Value::Recovered(Arc::new((**r).clone())),
        }
    }
}

enum Msg {
    ProducerDone {
        producer: TaskId,
        values: Vec<(ValueKey, Value)>,
        blocks: Vec<((usize, usize), Mat)>,
    },
    Abort,
}

enum CoordMsg {
    Result(ValueKey, Value),
    Error(TaskId, Error),
    WorkerDone {
        worker: usize,
        records: Vec<TaskRecord>,
    },
}

/// Byte accounting shared by all workers of one run.
#[derive(Debug, Default)]
struct MemTracker {
    current: AtomicI64,
    peak: AtomicI64,
    communicated: AtomicU64,
}

impl MemTracker {
    fn alloc(&self, bytes: u64) {
        let now = self.current.fetch_add(bytes as i64, Ordering::SeqCst) + bytes as i64;
        self.peak.fetch_max(now, Ordering::SeqCst);
    }

    fn free(&self, bytes: u64) {
        self.current.fetch_sub(bytes as i64, Ordering::SeqCst);
    }
}

/// Static execution plan data shared by parallel and sequential paths.
struct ExecPlan {
    /// ValueKeys each task reads
    needs: Vec<BTreeSet<ValueKey>>,
    /// ValueKeys each task produces
    outputs: Vec<BTreeSet<ValueKey>>,
    /// per block: ordered writer chain (updates ascending source, then finisher)
    block_writers: HashMap<(usize, usize), Vec<TaskId>>,
    /// keys wanted by the coordinator (solution + optional factor capture)
    coord_keys: BTreeSet<ValueKey>,
}

fn build_plan(state: &ProblemState, capture_factor: bool) -> ExecPlan {
    let g = &state.graph;
    let symb = &state.symb;
    let n = g.tasks.len();
    let mut needs: Vec<BTreeSet<ValueKey>> = vec![BTreeSet::new(); n];
    let mut outputs: Vec<BTreeSet<ValueKey>> = vec![BTreeSet::new(); n];

    let mut block_sources: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    let mut block_writers: HashMap<(usize, usize), Vec<TaskId>> = HashMap::new();
    for &(i, j) in &symb.pattern {
        let sources = symb.update_sources(i, j);
        let mut writers: Vec<TaskId> = sources
            .iter()
            .map(|&k| g.update_of[&(i, j, k)])
            .collect();
        writers.push(if i == j {
            g.factorize_of_row[i]
        } else {
            g.trisolve_of[&(i, j)]
        });
        block_sources.insert((i, j), sources);
        block_writers.insert((i, j), writers);
    }

    for t in &g.tasks {
        for p in &t.ptasks {
            match p.kind {
                PTaskKind::InteriorFactor { domain } => {
                    outputs[t.id].insert(ValueKey::Factor(domain));
                }
                PTaskKind::Dtn { domain } => {
                    outputs[t.id].insert(ValueKey::Contribution(domain));
                }
                PTaskKind::RhsReduce { .. } => {}
                PTaskKind::BlkFactorize { row } => {
                    outputs[t.id].insert(ValueKey::DiagFactor(row));
                    if block_sources[&(row, row)].is_empty() {
                        for &m in g.block_contribs.get(&(row, row)).into_iter().flatten() {
                            needs[t.id].insert(ValueKey::Contribution(m));
                        }
                    }
                }
                PTaskKind::BlkTrisolve { row, col } => {
                    outputs[t.id].insert(ValueKey::OffDiag(row, col));
                    needs[t.id].insert(ValueKey::DiagFactor(col));
                    if block_sources[&(row, col)].is_empty() {
                        for &m in g.block_contribs.get(&(row, col)).into_iter().flatten() {
                            needs[t.id].insert(ValueKey::Contribution(m));
                        }
                    }
                }
                PTaskKind::BlkUpdate { row, col, src } => {
                    needs[t.id].insert(ValueKey::OffDiag(row, src));
                    needs[t.id].insert(ValueKey::OffDiag(col, src));
                    let first = block_sources[&(row, col)][0] == src;
                    if first {
                        for &m in g.block_contribs.get(&(row, col)).into_iter().flatten() {
                            needs[t.id].insert(ValueKey::Contribution(m));
                        }
                    }
                }
                PTaskKind::FwdSolveBlk { row } => {
                    outputs[t.id].insert(ValueKey::FwdSeg(row));
                    needs[t.id].insert(ValueKey::DiagFactor(row));
                    for &m in &g.row_g_contribs[row] {
                        needs[t.id].insert(ValueKey::Contribution(m));
                    }
                    for &j in &symb.row_cols[row] {
                        needs[t.id].insert(ValueKey::OffDiag(row, j));
                        needs[t.id].insert(ValueKey::FwdSeg(j));
                    }
                }
                PTaskKind::DiagSolveBlk { row } => {
                    outputs[t.id].insert(ValueKey::DiagSeg(row));
                    needs[t.id].insert(ValueKey::DiagFactor(row));
                    needs[t.id].insert(ValueKey::FwdSeg(row));
                }
                PTaskKind::BwdSolveBlk { row } => {
                    outputs[t.id].insert(ValueKey::BwdSeg(row));
                    needs[t.id].insert(ValueKey::DiagFactor(row));
                    needs[t.id].insert(ValueKey::DiagSeg(row));
                    for &i in &symb.col_rows[row] {
                        needs[t.id].insert(ValueKey::OffDiag(i, row));
                        needs[t.id].insert(ValueKey::BwdSeg(i));
                    }
                }
                PTaskKind::Recover { domain } => {
                    outputs[t.id].insert(ValueKey::Recovered(domain));
                    needs[t.id].insert(ValueKey::Factor(domain));
                    for &r in &g.recover_rows[domain] {
                        needs[t.id].insert(ValueKey::BwdSeg(r));
                    }
                }
            }
        }
        // intra-task products are not external needs
        let own: Vec<ValueKey> = needs[t.id]
            .intersection(&outputs[t.id])
            .copied()
            .collect();
        for k in own {
            needs[t.id].remove(&k);
        }
    }

    let mut coord_keys: BTreeSet<ValueKey> = BTreeSet::new();
    for r in 0..symb.num_rows {
        coord_keys.insert(ValueKey::BwdSeg(r));
    }
    for d in 0..state.domains.len() {
        coord_keys.insert(ValueKey::Recovered(d));
    }
    if capture_factor {
        for r in 0..symb.num_rows {
            coord_keys.insert(ValueKey::DiagFactor(r));
        }
        for &(i, j) in &symb.pattern {
            if i != j {
                coord_keys.insert(ValueKey::OffDiag(i, j));
            }
        }
    }

    ExecPlan {
        needs,
        outputs,
        block_writers,
        coord_keys,
    }
}

/// Worker-local storage with byte accounting.
struct Store<'a> {
    values: HashMap<ValueKey, Value>,
    blocks: HashMap<(usize, usize), Mat>,
    tracker: &'a MemTracker,
    keep_everything: bool,
    /// remaining local reads per value key (compact mode eviction)
    remaining: HashMap<ValueKey, usize>,
}

impl<'a> Store<'a> {
    fn insert_value(&mut self, key: ValueKey, v: Value) {
        self.tracker.alloc(v.byte_len());
        if let Some(old) = self.values.insert(key, v) {
            self.tracker.free(old.byte_len());
        }
    }

    fn insert_block(&mut self, key: (usize, usize), m: Mat) {
        self.tracker.alloc(m.byte_len());
        if let Some(old) = self.blocks.insert(key, m) {
            self.tracker.free(old.byte_len());
        }
    }

    fn take_block(&mut self, key: (usize, usize)) -> Option<Mat> {
        let m = self.blocks.remove(&key)?;
        self.tracker.free(m.byte_len());
        Some(m)
    }

    fn get(&self, key: ValueKey) -> Option<&Value> {
        self.values.get(&key)
    }

    /// Note one completed read; evicts in compact mode.
    fn consumed(&mut self, key: ValueKey) {
        if self.keep_everything {
            return;
        }
        if let Some(rem) = self.remaining.get_mut(&key) {
            *rem -= 1;
            if *rem == 0 {
                self.remaining.remove(&key);
                if let Some(v) = self.values.remove(&key) {
                    self.tracker.free(v.byte_len());
                }
            }
        }
    }

    /// Evict a freshly produced value that no local task will ever read.
    fn evict_if_unread(&mut self, key: ValueKey) {
        if self.keep_everything || self.remaining.contains_key(&key) {
            return;
        }
        if let Some(v) = self.values.remove(&key) {
            self.tracker.free(v.byte_len());
        }
    }

}

/// Outputs of one executed task.
struct TaskProducts {
    values: Vec<(ValueKey, Value)>,
    block: Option<((usize, usize), Mat)>,
}

fn assemble_block(
    state: &ProblemState,
    store: &Store<'_>,
    i: usize,
    j: usize,
) -> Result<Mat> {
    let layout = &state.layout;
    let mut m = Mat::zeros(layout.sizes[i], layout.sizes[j]);
    if let Some(doms) = state.graph.block_contribs.get(&(i, j)) {
        for &d in doms {
            let c = match store.get(ValueKey::Contribution(d)) {
                Some(Value::Contribution(c)) => c.clone(),
                _ => {
                    return Err(Error::ScheduleInconsistent(format!(
                        "contribution of domain {d} missing for block ({i},{j})"
                    )))
                }
            };
            let b = c.interface_map.len();
            let mapped: Vec<(usize, usize)> = c
                .interface_map
                .iter()
                .map(|g| layout.pos[g])
                .collect();
            for li in 0..b {
                let (ri, oi) = mapped[li];
                for lj in 0..=li {
                    let (rj, oj) = mapped[lj];
                    let v = c.s_local[(li, lj)];
                    if ri == i && rj == j {
                        m[(oi, oj)] += v;
                        if i == j && oi != oj {
                            m[(oj, oi)] += v;
                        }
                    } else if rj == i && ri == j && i != j {
                        m[(oj, oi)] += v;
                    }
                }
            }
        }
    }
    Ok(m)
}

fn assemble_rhs_segment(state: &ProblemState, store: &Store<'_>, r: usize) -> Result<Mat> {
    let layout = &state.layout;
    let nrhs = state.nrhs;
    let mut seg = Mat::zeros(nrhs, layout.sizes[r]);
    for &d in &state.graph.row_g_contribs[r] {
        let c = match store.get(ValueKey::Contribution(d)) {
            Some(Value::Contribution(c)) => c.clone(),
            _ => {
                return Err(Error::ScheduleInconsistent(format!(
                    "contribution of domain {d} missing for rhs segment {r}"
                )))
            }
        };
        for (li, g) in c.interface_map.iter().enumerate() {
            let (ri, oi) = layout.pos[g];
            if ri == r {
                for (rhs, gl) in c.g_local.iter().enumerate() {
                    seg[(rhs, oi)] += gl[li];
                }
            }
        }
    }
    Ok(seg)
}

/// Run one task's ptasks back to back. Pure with respect to everything but
/// the returned products.
fn execute_task(
    state: &ProblemState,
    store: &mut Store<'_>,
    crossover: usize,
    task: TaskId,
) -> Result<TaskProducts> {
    let g = &state.graph;
    let mut values: Vec<(ValueKey, Value)> = Vec::new();
    let mut block: Option<((usize, usize), Mat)> = None;
    // intra-task lookups see earlier products of this task
    let find = |values: &Vec<(ValueKey, Value)>, store: &Store<'_>, key: ValueKey| -> Option<Value> {
        values
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.clone())
            .or_else(|| store.get(key).cloned())
    };

    for p in &g.tasks[task].ptasks {
        match p.kind {
            PTaskKind::InteriorFactor { domain } => {
                let f = factor_interior_with_crossover(&state.domains[domain], crossover)?;
                values.push((ValueKey::Factor(domain), Value::Factor(Arc::new(f))));
            }
            PTaskKind::Dtn { domain } => {
                let f = match find(&values, store, ValueKey::Factor(domain)) {
                    Some(Value::Factor(f)) => f,
                    _ => unreachable!("interior factor precedes dtn in the same task"),
                };
                let c = compute_dtn(&state.domains[domain], &f)?;
                values.push((
                    ValueKey::Contribution(domain),
                    Value::Contribution(Arc::new(c)),
                ));
            }
            PTaskKind::RhsReduce { .. } => {
                // rhs reduction is folded into the dtn computation
            }
            PTaskKind::BlkFactorize { row } => {
                let kkk = match store.take_block((row, row)) {
                    Some(m) => m,
                    None => assemble_block(state, store, row, row)?,
                };
                let f = kernel_factorize_block(&kkk, row)?;
                values.push((ValueKey::DiagFactor(row), Value::DiagFactor(Arc::new(f))));
            }
            PTaskKind::BlkTrisolve { row, col } => {
                let mut l = match store.take_block((row, col)) {
                    Some(m) => m,
                    None => assemble_block(state, store, row, col)?,
                };
                let f = match find(&values, store, ValueKey::DiagFactor(col)) {
                    Some(Value::DiagFactor(f)) => f,
                    _ => {
                        return Err(Error::ScheduleInconsistent(format!(
                            "diagonal factor {col} missing for trisolve ({row},{col})"
                        )))
                    }
                };
                // in-place form of kernel_trisolve_block on the owned block
                f.solve_rows_in_place(&mut l);
                values.push((
                    ValueKey::OffDiag(row, col),
                    Value::OffDiag(Arc::new(OffDiagVal {
                        l,
                        piv: f.piv.clone(),
                    })),
                ));
            }
            PTaskKind::BlkUpdate { row, col, src } => {
                let mut dest = match block.take() {
                    Some(((i, j), m)) if (i, j) == (row, col) => m,
                    Some(other) => {
                        // a merged task writing two different blocks is not
                        // emitted by any agglomeration policy
                        return Err(Error::ScheduleInconsistent(format!(
                            "task {task} writes block {:?} then ({row},{col})",
                            other.0
                        )));
                    }
                    None => match store.take_block((row, col)) {
                        Some(m) => m,
                        None => assemble_block(state, store, row, col)?,
                    },
                };
                let lik = match find(&values, store, ValueKey::OffDiag(row, src)) {
                    Some(Value::OffDiag(o)) => o,
                    _ => {
                        return Err(Error::ScheduleInconsistent(format!(
                            "factor block ({row},{src}) missing for update ({row},{col},{src})"
                        )))
                    }
                };
                let ljk = if col == row {
                    lik.clone()
                } else {
                    match find(&values, store, ValueKey::OffDiag(col, src)) {
                        Some(Value::OffDiag(o)) => o,
                        _ => {
                            return Err(Error::ScheduleInconsistent(format!(
                                "factor block ({col},{src}) missing for update ({row},{col},{src})"
                            )))
                        }
                    }
                };
                kernel_update_block(&mut dest, &lik.l, &lik.piv, &ljk.l, row == col);
                block = Some(((row, col), dest));
            }
            PTaskKind::FwdSolveBlk { row } => {
                let mut seg = assemble_rhs_segment(state, store, row)?;
                for &j in &state.symb.row_cols[row] {
                    let l = match find(&values, store, ValueKey::OffDiag(row, j)) {
                        Some(Value::OffDiag(o)) => o,
                        _ => {
                            return Err(Error::ScheduleInconsistent(format!(
                                "factor block ({row},{j}) missing for forward solve {row}"
                            )))
                        }
                    };
                    let yj = match find(&values, store, ValueKey::FwdSeg(j)) {
                        Some(Value::Seg(m)) => m,
                        _ => {
                            return Err(Error::ScheduleInconsistent(format!(
                                "forward segment {j} missing for forward solve {row}"
                            )))
                        }
                    };
                    gemm_minus_a_bt(&mut seg, &yj, &l.l);
                }
                let f = match find(&values, store, ValueKey::DiagFactor(row)) {
                    Some(Value::DiagFactor(f)) => f,
                    _ => {
                        return Err(Error::ScheduleInconsistent(format!(
                            "diagonal factor {row} missing for forward solve"
                        )))
                    }
                };
                half_forward_rows(&f, &mut seg);
                values.push((ValueKey::FwdSeg(row), Value::Seg(Arc::new(seg))));
            }
            PTaskKind::DiagSolveBlk { row } => {
                let mut seg = match find(&values, store, ValueKey::FwdSeg(row)) {
                    Some(Value::Seg(m)) => (*m).clone(),
                    _ => {
                        return Err(Error::ScheduleInconsistent(format!(
                            "forward segment {row} missing for diagonal solve"
                        )))
                    }
                };
                let f = match find(&values, store, ValueKey::DiagFactor(row)) {
                    Some(Value::DiagFactor(f)) => f,
                    _ => {
                        return Err(Error::ScheduleInconsistent(format!(
                            "diagonal factor {row} missing for diagonal solve"
                        )))
                    }
                };
                f.piv.solve_cols(&mut seg);
                values.push((ValueKey::DiagSeg(row), Value::Seg(Arc::new(seg))));
            }
            PTaskKind::BwdSolveBlk { row } => {
                let mut seg = match find(&values, store, ValueKey::DiagSeg(row)) {
                    Some(Value::Seg(m)) => (*m).clone(),
                    _ => {
                        return Err(Error::ScheduleInconsistent(format!(
                            "diagonal segment {row} missing for backward solve"
                        )))
                    }
                };
                for &i in &state.symb.col_rows[row] {
                    let l = match find(&values, store, ValueKey::OffDiag(i, row)) {
                        Some(Value::OffDiag(o)) => o,
                        _ => {
                            return Err(Error::ScheduleInconsistent(format!(
                                "factor block ({i},{row}) missing for backward solve {row}"
                            )))
                        }
                    };
                    let xi = match find(&values, store, ValueKey::BwdSeg(i)) {
                        Some(Value::Seg(m)) => m,
                        _ => {
                            return Err(Error::ScheduleInconsistent(format!(
                                "backward segment {i} missing for backward solve {row}"
                            )))
                        }
                    };
                    gemm_minus_in_place(&mut seg, &xi, &l.l, false);
                }
                let f = match find(&values, store, ValueKey::DiagFactor(row)) {
                    Some(Value::DiagFactor(f)) => f,
                    _ => {
                        return Err(Error::ScheduleInconsistent(format!(
                            "diagonal factor {row} missing for backward solve"
                        )))
                    }
                };
                half_backward_rows(&f, &mut seg);
                values.push((ValueKey::BwdSeg(row), Value::Seg(Arc::new(seg))));
            }
            PTaskKind::Recover { domain } => {
                let dom = &state.domains[domain];
                let f = match find(&values, store, ValueKey::Factor(domain)) {
                    Some(Value::Factor(f)) => f,
                    _ => {
                        return Err(Error::ScheduleInconsistent(format!(
                            "interior factor missing for recovery of domain {domain}"
                        )))
                    }
                };
                let nrhs = state.nrhs;
                let mut u_b: Vec<Vec<f64>> = vec![vec![0.0; dom.interface.len()]; nrhs];
                if !dom.interface.is_empty() {
                    let mut segs: HashMap<usize, Arc<Mat>> = HashMap::new();
                    for &r in &state.graph.recover_rows[domain] {
                        match find(&values, store, ValueKey::BwdSeg(r)) {
                            Some(Value::Seg(m)) => {
                                segs.insert(r, m);
                            }
                            _ => {
                                return Err(Error::ScheduleInconsistent(format!(
                                    "backward segment {r} missing for recovery of domain {domain}"
                                )))
                            }
                        }
                    }
                    for (li, g) in dom.interface.iter().enumerate() {
                        let (r, off) = state.layout.pos[g];
                        let seg = &segs[&r];
                        for (rhs, ub) in u_b.iter_mut().enumerate() {
                            ub[li] = seg[(rhs, off)];
                        }
                    }
                }
                let mut recovered: Vec<Vec<f64>> = Vec::with_capacity(nrhs);
                for rhs in 0..nrhs {
                    recovered.push(crate::primal::recover_primal(
                        dom,
                        &f,
                        &u_b[rhs],
                        &dom.f_i[rhs],
                    )?);
                }
                values.push((
                    ValueKey::Recovered(domain),
                    Value::Recovered(Arc::new(recovered)),
                ));
            }
        }
    }
    Ok(TaskProducts { values, block })
}

/// Execution result: one full-length solution vector per right-hand side.
#[derive(Debug, Clone)]
pub struct ExecOutput {
    pub solution: Vec<Vec<f64>>,
    pub trace: RunTrace,
    pub factor_bits: Option<CapturedFactor>,
}

/// Bit patterns of the numeric factor, for equality assertions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapturedFactor {
    pub diag: BTreeMap<usize, (Vec<u64>, Vec<u64>, Vec<u64>)>,
    pub off: BTreeMap<(usize, usize), Vec<u64>>,
}

fn assemble_solution(
    state: &ProblemState,
    results: &HashMap<ValueKey, Value>,
) -> Result<Vec<Vec<f64>>> {
    let nrhs = state.nrhs;
    let mut x = vec![vec![0.0; state.total_dofs]; nrhs];
    for r in 0..state.symb.num_rows {
        let seg = match results.get(&ValueKey::BwdSeg(r)) {
            Some(Value::Seg(m)) => m,
            _ => {
                return Err(Error::ScheduleInconsistent(format!(
                    "missing solve segment for block row {r}"
                )))
            }
        };
        for (off, g) in state.layout.dofs[r].iter().enumerate() {
            for (rhs, xr) in x.iter_mut().enumerate() {
                xr[*g] = seg[(rhs, off)];
            }
        }
    }
    for dom in &state.domains {
        let rec = match results.get(&ValueKey::Recovered(dom.domain_id)) {
            Some(Value::Recovered(v)) => v,
            _ => {
                return Err(Error::ScheduleInconsistent(format!(
                    "missing recovery of domain {}",
                    dom.domain_id
                )))
            }
        };
        for (li, g) in dom.interior.iter().enumerate() {
            for (rhs, xr) in x.iter_mut().enumerate() {
                xr[*g] = rec[rhs][li];
            }
        }
    }
    Ok(x)
}

fn capture_from_results(results: &HashMap<ValueKey, Value>) -> CapturedFactor {
    let mut cap = CapturedFactor {
        diag: BTreeMap::new(),
        off: BTreeMap::new(),
    };
    for (k, v) in results {
        match (k, v) {
            (ValueKey::DiagFactor(r), Value::DiagFactor(f)) => {
                cap.diag.insert(
                    *r,
                    (
                        f.lower.data.iter().map(|x| x.to_bits()).collect(),
                        f.piv.d.iter().map(|x| x.to_bits()).collect(),
                        f.piv.sub.iter().map(|x| x.to_bits()).collect(),
                    ),
                );
            }
            (ValueKey::OffDiag(i, j), Value::OffDiag(o)) => {
                cap.off
                    .insert((*i, *j), o.l.data.iter().map(|x| x.to_bits()).collect());
            }
            _ => {}
        }
    }
    cap
}

/// Sequential reference: run all tasks in ascending topological id order.
pub fn execute_sequential(
    state: &Arc<ProblemState>,
    cfg: &ExecConfig,
) -> Result<ExecOutput> {
    let g = &state.graph;
    let n = g.tasks.len();
    // ids are topological by construction; assert in debug builds
    debug_assert!(g.edges.iter().all(|e| e.from < e.to));
    let plan = build_plan(state, cfg.capture_factor);
    let tracker = MemTracker::default();
    let mut store = Store {
        values: HashMap::new(),
        blocks: HashMap::new(),
        tracker: &tracker,
        keep_everything: cfg.memory_mode == MemoryMode::Fast,
        remaining: HashMap::new(),
    };
    // local consumer counts for compact eviction
    let mut remaining: HashMap<ValueKey, usize> = HashMap::new();
    for t in 0..n {
        for &k in &plan.needs[t] {
            *remaining.entry(k).or_insert(0) += 1;
        }
    }
    store.remaining = remaining;

    if cfg.memory_mode == MemoryMode::Fast {
        for &(i, j) in &state.symb.fill_blocks {
            store.insert_block((i, j), Mat::zeros(state.layout.sizes[i], state.layout.sizes[j]));
        }
    }

    let epoch = Instant::now();
    let mut records = Vec::with_capacity(n);
    let mut results: HashMap<ValueKey, Value> = HashMap::new();
    for t in 0..n {
        let t0 = epoch.elapsed().as_secs_f64();
        let products = execute_task(state, &mut store, cfg.dense_crossover, t)?;
        let t1 = epoch.elapsed().as_secs_f64();
        records.push(TaskRecord {
            task: t,
            worker: 0,
            start_s: t0,
            finish_s: t1,
        });
        for &k in &plan.needs[t] {
            store.consumed(k);
        }
        for (k, v) in products.values {
            if plan.coord_keys.contains(&k) {
                results.insert(k, v.clone());
            }
            store.insert_value(k, v);
            store.evict_if_unread(k);
        }
        if let Some((key, m)) = products.block {
            let writers = &plan.block_writers[&key];
            let pos = writers.iter().position(|&w| w == t).unwrap();
            if pos + 1 < writers.len() {
                store.insert_block(key, m);
            } else {
                // finishers consume the block; nothing retains it
                drop(m);
            }
        }
    }
    let solution = assemble_solution(state, &results)?;
    let factor_bits = cfg
        .capture_factor
        .then(|| capture_from_results(&results));
    let makespan = records.iter().map(|r| r.finish_s).fold(0.0, f64::max);
    let mut phase_seconds = [0.0f64; 3];
    for r in &records {
        let idx = match g.tasks[r.task].phase {
            Phase::PrimalReduction => 0,
            Phase::Dual => 1,
            Phase::PrimalRecovery => 2,
        };
        phase_seconds[idx] += r.finish_s - r.start_s;
    }
    let trace = RunTrace {
        records,
        phase_seconds,
        peak_block_bytes: tracker.peak.load(Ordering::SeqCst).max(0) as u64,
        bytes_communicated: 0,
        makespan_s: makespan,
        num_workers: 1,
    };
    trace.validate(n)?;
    Ok(ExecOutput {
        solution,
        trace,
        factor_bits,
    })
}

/// Execute the schedule on `schedule.num_workers` message-passing workers.
pub fn execute_parallel(
    state: &Arc<ProblemState>,
    schedule: &Schedule,
    cfg: &ExecConfig,
) -> Result<ExecOutput> {
    let g = &state.graph;
    let n = g.tasks.len();
    if schedule.assignment.len() != n {
        return Err(Error::ScheduleInconsistent(format!(
            "schedule covers {} tasks, graph has {n}",
            schedule.assignment.len()
        )));
    }
    let workers = schedule.num_workers;
    if n == 0 {
        return Ok(ExecOutput {
            solution: vec![vec![0.0; state.total_dofs]; state.nrhs],
            trace: RunTrace {
                records: vec![],
                phase_seconds: [0.0; 3],
                peak_block_bytes: 0,
                bytes_communicated: 0,
                makespan_s: 0.0,
                num_workers: workers,
            },
            factor_bits: None,
        });
    }
    let plan = Arc::new(build_plan(state, cfg.capture_factor));
    let tracker = Arc::new(MemTracker::default());
    let abort = Arc::new(AtomicBool::new(false));

    // per-task send plans: (remote worker, value keys) and block forwarding
    let assignment = &schedule.assignment;
    let mut send_values: Vec<BTreeMap<usize, BTreeSet<ValueKey>>> = vec![BTreeMap::new(); n];
    let mut notify: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for e in &g.edges {
        let (pw, cw) = (assignment[e.from], assignment[e.to]);
        if pw != cw {
            notify[e.from].insert(cw);
            let wanted: Vec<ValueKey> = plan.needs[e.to]
                .intersection(&plan.outputs[e.from])
                .copied()
                .collect();
            if !wanted.is_empty() {
                send_values[e.from].entry(cw).or_default().extend(wanted);
            }
        }
    }
    // block forwarding along writer chains
    let mut send_block: Vec<Option<usize>> = vec![None; n];
    for (key, writers) in &plan.block_writers {
        let _ = key;
        for pair in writers.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if assignment[a] != assignment[b] {
                send_block[a] = Some(assignment[b]);
            }
        }
    }
    // local consumer counts per worker for compact eviction
    let mut remaining: Vec<HashMap<ValueKey, usize>> = vec![HashMap::new(); workers];
    for t in 0..n {
        for &k in &plan.needs[t] {
            *remaining[assignment[t]].entry(k).or_insert(0) += 1;
        }
    }

    let (coord_tx, coord_rx) = std::sync::mpsc::channel::<CoordMsg>();
    let mut worker_tx: Vec<Sender<Msg>> = Vec::with_capacity(workers);
    let mut worker_rx: Vec<Option<Receiver<Msg>>> = Vec::with_capacity(workers);
    for _ in 0..workers {
        let (tx, rx) = std::sync::mpsc::channel::<Msg>();
        worker_tx.push(tx);
        worker_rx.push(Some(rx));
    }

    let epoch = Instant::now();
    std::thread::scope(|scope| {
        for w in 0..workers {
            let rx = worker_rx[w].take().unwrap();
            let my_order = schedule.order[w].clone();
            let worker_tx = worker_tx.clone();
            let coord_tx = coord_tx.clone();
            let state = Arc::clone(state);
            let plan = Arc::clone(&plan);
            let tracker = Arc::clone(&tracker);
            let abort = Arc::clone(&abort);
            let my_remaining = remaining[w].clone();
            let send_values = send_values.clone();
            let send_block = send_block.clone();
            let notify = notify.clone();
            let cfg = cfg.clone();
            let assignment = assignment.clone();
            scope.spawn(move || {
                run_worker(WorkerCtx {
                    w,
                    rx,
                    my_order,
                    worker_tx,
                    coord_tx,
                    state,
                    plan,
                    tracker,
                    abort,
                    my_remaining,
                    send_values,
                    send_block,
                    notify,
                    cfg,
                    assignment,
                    epoch,
                });
            });
        }
        drop(coord_tx);

        // coordinator: gather results, traces, and errors
        let mut results: HashMap<ValueKey, Value> = HashMap::new();
        let mut errors: Vec<(TaskId, Error)> = Vec::new();
        let mut traces: Vec<Option<Vec<TaskRecord>>> = vec![None; workers];
        let mut done = 0usize;
        while done < workers {
            match coord_rx.recv() {
                Ok(CoordMsg::Result(k, v)) => {
                    results.insert(k, v);
                }
                Ok(CoordMsg::Error(task, e)) => {
                    errors.push((task, e));
                    abort.store(true, Ordering::SeqCst);
                }
                Ok(CoordMsg::WorkerDone { worker, records }) => {
                    traces[worker] = Some(records);
                    done += 1;
                }
                Err(_) => break,
            }
        }
        if !errors.is_empty() {
            errors.sort_by_key(|(t, _)| *t);
            return Err(errors.remove(0).1);
        }
        let mut records: Vec<TaskRecord> = traces
            .into_iter()
            .flat_map(|t| t.expect("worker finished without a trace"))
            .collect();
        records.sort_by_key(|r| r.task);
        let makespan = records.iter().map(|r| r.finish_s).fold(0.0, f64::max);
        let mut phase_seconds = [0.0f64; 3];
        for r in &records {
            let idx = match g.tasks[r.task].phase {
                Phase::PrimalReduction => 0,
                Phase::Dual => 1,
                Phase::PrimalRecovery => 2,
            };
            phase_seconds[idx] += r.finish_s - r.start_s;
        }
        let trace = RunTrace {
            records,
            phase_seconds,
            peak_block_bytes: tracker.peak.load(Ordering::SeqCst).max(0) as u64,
            bytes_communicated: tracker.communicated.load(Ordering::SeqCst),
            makespan_s: makespan,
            num_workers: workers,
        };
        trace.validate(n)?;
        let solution = assemble_solution(state, &results)?;
        let factor_bits = cfg
            .capture_factor
            .then(|| capture_from_results(&results));
        Ok(ExecOutput {
            solution,
            trace,
            factor_bits,
        })
    })
}

struct WorkerCtx {
    w: usize,
    rx: Receiver<Msg>,
    my_order: Vec<TaskId>,
    worker_tx: Vec<Sender<Msg>>,
    coord_tx: Sender<CoordMsg>,
    state: Arc<ProblemState>,
    plan: Arc<ExecPlan>,
    tracker: Arc<MemTracker>,
    abort: Arc<AtomicBool>,
    my_remaining: HashMap<ValueKey, usize>,
    send_values: Vec<BTreeMap<usize, BTreeSet<ValueKey>>>,
    send_block: Vec<Option<usize>>,
    notify: Vec<BTreeSet<usize>>,
    cfg: ExecConfig,
    assignment: Vec<usize>,
    epoch: Instant,
}

fn run_worker(ctx: WorkerCtx) {
    use rand::{Rng, SeedableRng};
    let WorkerCtx {
        w,
        rx,
        my_order,
        worker_tx,
        coord_tx,
        state,
        plan,
        tracker,
        abort,
        my_remaining,
        send_values,
        send_block,
        notify,
        cfg,
        assignment,
        epoch,
    } = ctx;

    let mut store = Store {
        values: HashMap::new(),
        blocks: HashMap::new(),
        tracker: &tracker,
        keep_everything: cfg.memory_mode == MemoryMode::Fast,
        remaining: my_remaining,
    };
    if cfg.memory_mode == MemoryMode::Fast {
        // preallocate fill blocks whose first writer runs here
        for (&key, writers) in &plan.block_writers {
            if state.symb.fill_blocks.contains(&key) && assignment[writers[0]] == w {
                store.insert_block(
                    key,
                    Mat::zeros(state.layout.sizes[key.0], state.layout.sizes[key.1]),
                );
            }
        }
    }

    let mut chaos_rng = cfg
        .chaos_seed
        .map(|s| rand_chacha::ChaCha8Rng::seed_from_u64(s ^ (w as u64).wrapping_mul(0x9e37)));
    let mut chaos_buffer: Vec<Msg> = Vec::new();
    let mut done_producers: HashSet<TaskId> = HashSet::new();
    let mut records: Vec<TaskRecord> = Vec::with_capacity(my_order.len());

    let trace_event = |event: &str, task: TaskId| {
        if cfg.debug_trace {
            eprintln!(
                "{{\"event\":\"{event}\",\"task\":{task},\"worker\":{w},\"t\":{:.9}}}",
                epoch.elapsed().as_secs_f64()
            );
        }
    };

    let fail = |task: TaskId, e: Error| {
        abort.store(true, Ordering::SeqCst);
        let _ = coord_tx.send(CoordMsg::Error(task, e));
    };

    'tasks: for &t in &my_order {
        // satisfy dependencies via received messages; progress on pending
        // transfers happens here at every inter-task boundary
        let mut waited = Duration::ZERO;
        loop {
            if abort.load(Ordering::SeqCst) {
                break 'tasks;
            }
            let pending: Vec<TaskId> = state
                .graph
                .producers_of(t)
                .filter(|p| !done_producers.contains(p))
                .collect();
            if pending.is_empty() {
                break;
            }
            // drain the channel without blocking first
            let mut got_any = false;
            while let Ok(m) = rx.try_recv() {
                chaos_buffer.push(m);
                got_any = true;
            }
            if chaos_buffer.is_empty() {
                match rx.recv_timeout(Duration::from_millis(10)) {
                    Ok(m) => {
                        chaos_buffer.push(m);
                        got_any = true;
                    }
                    Err(RecvTimeoutError::Timeout) => {
                        waited += Duration::from_millis(10);
                        if waited >= cfg.stall_timeout {
                            fail(
                                t,
                                Error::ExecutionStalled {
                                    worker: w,
                                    task: t,
                                    waited_ms: waited.as_millis() as u64,
                                },
                            );
                            break 'tasks;
                        }
                        continue;
                    }
                    Err(RecvTimeoutError::Disconnected) => {
                        if !abort.load(Ordering::SeqCst) {
                            fail(
                                t,
                                Error::ScheduleInconsistent(format!(
                                    "worker {w} lost its peers while waiting for task {t}"
                                )),
                            );
                        }
                        break 'tasks;
                    }
                }
            }
            if got_any {
                waited = Duration::ZERO;
            }
            // deliver one message, in arrival order or shuffled under chaos
            let idx = match &mut chaos_rng {
                Some(rng) if chaos_buffer.len() > 1 => rng.random_range(0..chaos_buffer.len()),
                _ => 0,
            };
            match chaos_buffer.remove(idx) {
                Msg::Abort => break 'tasks,
                Msg::ProducerDone {
                    producer,
                    values,
                    blocks,
                } => {
                    for (k, v) in values {
                        store.insert_value(k, v);
                    }
                    for (key, m) in blocks {
                        store.insert_block(key, m);
                    }
                    done_producers.insert(producer);
                }
            }
        }
        if abort.load(Ordering::SeqCst) {
            break 'tasks;
        }

        trace_event("start", t);
        let t0 = epoch.elapsed().as_secs_f64();
        let products = match execute_task(&state, &mut store, cfg.dense_crossover, t) {
            Ok(p) => p,
            Err(e) => {
                fail(t, e);
                break 'tasks;
            }
        };
        let t1 = epoch.elapsed().as_secs_f64();
        records.push(TaskRecord {
            task: t,
            worker: w,
            start_s: t0,
            finish_s: t1,
        });
        trace_event("finish", t);

        // account reads before publishing so released inputs free promptly
        for &k in &plan.needs[t] {
            store.consumed(k);
        }

        // publish results the coordinator wants
        for (k, v) in &products.values {
            if plan.coord_keys.contains(k) {
                let _ = coord_tx.send(CoordMsg::Result(*k, v.clone()));
            }
        }

        // outgoing messages: one per remote worker, immutable deep copies;
        // a migrating block whose local copy would be dropped anyway moves
        // into the message instead of being cloned
        let mut block_out = products.block;
        for &dest in &notify[t] {
            let mut values = Vec::new();
            if let Some(keys) = send_values[t].get(&dest) {
                for &k in keys {
                    let v = products
                        .values
                        .iter()
                        .find(|(pk, _)| *pk == k)
                        .map(|(_, v)| v.deep_copy())
                        .expect("send plan references a produced value");
                    tracker
                        .communicated
                        .fetch_add(v.byte_len(), Ordering::SeqCst);
                    values.push((k, v));
                }
            }
            let mut blocks = Vec::new();
            if send_block[t] == Some(dest) {
                if let Some((key, m)) = &block_out {
                    tracker.communicated.fetch_add(m.byte_len(), Ordering::SeqCst);
                    if cfg.memory_mode == MemoryMode::Compact {
                        let (key, m) = block_out.take().unwrap();
                        blocks.push((key, m));
                    } else {
                        blocks.push((*key, m.clone()));
                    }
                }
            }
            let _ = worker_tx[dest].send(Msg::ProducerDone {
                producer: t,
                values,
                blocks,
            });
        }

        // keep local copies; values with no local reader left are evicted
        // right away in compact mode
        done_producers.insert(t);
        for (k, v) in products.values {
            store.insert_value(k, v);
            store.evict_if_unread(k);
        }
        if let Some((key, m)) = block_out {
            let writers = &plan.block_writers[&key];
            let pos = writers.iter().position(|&x| x == t).unwrap();
            let next_local = writers
                .get(pos + 1)
                .map(|&nw| assignment[nw] == w)
                .unwrap_or(false);
            if next_local || cfg.memory_mode == MemoryMode::Fast {
                store.insert_block(key, m);
            }
        }
    }

    let _ = coord_tx.send(CoordMsg::WorkerDone {
        worker: w,
        records,
    });
    // wake peers blocked on recv so aborts propagate
    if abort.load(Ordering::SeqCst) {
        for tx in &worker_tx {
            let _ = tx.send(Msg::Abort);
        }
    }
}

/// Phase breakdown of a completed run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Breakdown {
    pub primal_reduction_s: f64,
    pub dual_factor_solve_s: f64,
    pub recovery_s: f64,
    pub peak_block_bytes: u64,
    pub bytes_communicated: u64,
    pub makespan_actual_s: f64,
    pub parallel_efficiency: Option<f64>,
}

/// Merge actual times into the Gantt CSV and summarize per-phase seconds.
/// `t1_seconds` enables the parallel-efficiency column (T1 / (P * TP)).
pub fn collect_timeline(
    trace: &RunTrace,
    schedule: &Schedule,
    graph: &TaskGraph,
    t1_seconds: Option<f64>,
) -> Result<(String, Breakdown)> {
    let n = graph.tasks.len();
    if trace.records.len() != n || schedule.assignment.len() != n {
        return Err(Error::invalid(format!(
            "trace has {} records, schedule covers {}, graph has {n} tasks",
            trace.records.len(),
            schedule.assignment.len()
        )));
    }
    let mut actuals = vec![(0.0f64, 0.0f64); n];
    for r in &trace.records {
        if schedule.assignment[r.task] != r.worker {
            return Err(Error::invalid(format!(
                "task {} ran on worker {} but was assigned to {}",
                r.task, r.worker, schedule.assignment[r.task]
            )));
        }
        actuals[r.task] = (r.start_s, r.finish_s);
    }
    let csv = schedule.export_gantt_with_actuals(graph, Some(&actuals));
    let efficiency = t1_seconds.map(|t1| {
        let p = trace.num_workers as f64;
        t1 / (p * trace.makespan_s.max(f64::MIN_POSITIVE))
    });
    let breakdown = Breakdown {
        primal_reduction_s: trace.phase_seconds[0],
        dual_factor_solve_s: trace.phase_seconds[1],
        recovery_s: trace.phase_seconds[2],
        peak_block_bytes: trace.peak_block_bytes,
        bytes_communicated: trace.bytes_communicated,
        makespan_actual_s: trace.makespan_s,
        parallel_efficiency: efficiency,
    };
    Ok((csv, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::{synthetic_calibration, SampleStore};
    use crate::pipeline::{prepare, prepare_with_partition, PipelineConfig};
    use crate::problem::{generate_grid_problem, Partition, PartitionStrategy, Stencil};
    use crate::scheduler::CommModel;
    use crate::taskgraph::AgglomerationPolicy;

    fn base_cfg(workers: usize) -> PipelineConfig {
        PipelineConfig {
            workers,
            comm: CommModel::new(1e9, 1e-6),
            ..PipelineConfig::default()
        }
    }

    fn solution_bits(x: &[Vec<f64>]) -> Vec<Vec<u64>> {
        x.iter()
            .map(|v| v.iter().map(|f| f.to_bits()).collect())
            .collect()
    }

    #[test]
    fn single_worker_matches_sequential_bitwise() {
        let sys = generate_grid_problem(&[5], Stencil::Laplacian, 0).unwrap();
        let cfg = base_cfg(1);
        let cal = synthetic_calibration(1e9);
        let prep = prepare_with_partition(
            &sys,
            Partition::new(2, vec![0, 0, 0, 1, 1]).unwrap(),
            &cfg,
            &cal,
            &SampleStore::default(),
        )
        .unwrap();
        let seq = execute_sequential(&prep.state, &cfg.exec_config()).unwrap();
        let par = execute_parallel(&prep.state, &prep.schedule, &cfg.exec_config()).unwrap();
        assert_eq!(solution_bits(&seq.solution), solution_bits(&par.solution));
        // trace order on the single worker equals the schedule order
        let mut by_start = par.trace.records.clone();
        by_start.sort_by(|a, b| a.start_s.partial_cmp(&b.start_s).unwrap());
        let order: Vec<usize> = by_start.iter().map(|r| r.task).collect();
        assert_eq!(order, prep.schedule.order[0]);
        // worked chain values
        assert!((par.solution[0][2] - 4.5).abs() < 1e-13);
        assert!((par.solution[0][0] - 2.5).abs() < 1e-13);
    }

    #[test]
    fn chain_two_workers_bitwise_identical() {
        let sys = generate_grid_problem(&[5], Stencil::Laplacian, 0).unwrap();
        let cfg = base_cfg(2);
        let cal = synthetic_calibration(1e9);
        let prep = prepare_with_partition(
            &sys,
            Partition::new(2, vec![0, 0, 0, 1, 1]).unwrap(),
            &cfg,
            &cal,
            &SampleStore::default(),
        )
        .unwrap();
        let seq = execute_sequential(&prep.state, &cfg.exec_config()).unwrap();
        let par = execute_parallel(&prep.state, &prep.schedule, &cfg.exec_config()).unwrap();
        assert_eq!(solution_bits(&seq.solution), solution_bits(&par.solution));
    }

    #[test]
    fn multi_domain_grid_parallel_matches_sequential() {
        let sys = generate_grid_problem(&[12, 10], Stencil::Laplacian, 0).unwrap();
        let cal = synthetic_calibration(1e9);
        for workers in [1usize, 2, 4, 8] {
            let mut cfg = base_cfg(workers);
            cfg.num_domains = 6;
            cfg.partitioner = PartitionStrategy::GreedyBfs;
            let prep = prepare(&sys, &cfg, &cal, &SampleStore::default()).unwrap();
            let seq = execute_sequential(&prep.state, &cfg.exec_config()).unwrap();
            let par = execute_parallel(&prep.state, &prep.schedule, &cfg.exec_config()).unwrap();
            assert_eq!(
                solution_bits(&seq.solution),
                solution_bits(&par.solution),
                "workers = {workers}"
            );
            let res = sys.residual_norm(&par.solution[0], &sys.rhs[0]);
            assert!(res < 1e-10, "residual {res}");
        }
    }

    #[test]
    fn chaos_reordering_preserves_bits() {
        let sys = generate_grid_problem(&[9, 9], Stencil::Helmholtz(1.1), 0).unwrap();
        let cal = synthetic_calibration(1e9);
        let mut cfg = base_cfg(4);
        cfg.num_domains = 5;
        let prep = prepare(&sys, &cfg, &cal, &SampleStore::default()).unwrap();
        let reference = execute_sequential(&prep.state, &cfg.exec_config()).unwrap();
        for seed in 0..8u64 {
            let mut chaos_cfg = cfg.exec_config();
            chaos_cfg.chaos_seed = Some(seed);
            let par = execute_parallel(&prep.state, &prep.schedule, &chaos_cfg).unwrap();
            assert_eq!(
                solution_bits(&reference.solution),
                solution_bits(&par.solution),
                "chaos seed {seed}"
            );
        }
    }

    #[test]
    fn factor_matches_sequential_block_ldlt_bitwise() {
        use crate::blockmat::{assemble_dual_matrix, sequential_block_ldlt};
        use crate::primal::{compute_dtn, factor_interior};
        let sys = generate_grid_problem(&[10, 8], Stencil::Laplacian, 0).unwrap();
        let mut cfg = base_cfg(3);
        cfg.num_domains = 4;
        cfg.partitioner = PartitionStrategy::Grid;
        cfg.capture_factor = true;
        cfg.agglomeration = AgglomerationPolicy::None;
        let cal = synthetic_calibration(1e9);
        let prep = prepare(&sys, &cfg, &cal, &SampleStore::default()).unwrap();
        let par = execute_parallel(&prep.state, &prep.schedule, &cfg.exec_config()).unwrap();
        let cap = par.factor_bits.unwrap();

        // reference factor through the sequential block routine
        let contribs: Vec<_> = prep
            .state
            .domains
            .iter()
            .map(|d| compute_dtn(d, &factor_interior(d).unwrap()).unwrap())
            .collect();
        let k = assemble_dual_matrix(&contribs, &prep.state.layout).unwrap();
        let f = sequential_block_ldlt(&k, &prep.state.symb).unwrap();
        for (key, bits) in &cap.off {
            let reference: Vec<u64> = f.off[key].data.iter().map(|x| x.to_bits()).collect();
            assert_eq!(*bits, reference, "block {key:?}");
        }
        for (row, (l, d, sub)) in &cap.diag {
            let rf = &f.diag[*row];
            assert_eq!(*l, rf.lower.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            assert_eq!(*d, rf.piv.d.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            assert_eq!(*sub, rf.piv.sub.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn compact_peak_never_exceeds_fast() {
        let sys = generate_grid_problem(&[14, 14], Stencil::Laplacian, 0).unwrap();
        let cal = synthetic_calibration(1e9);
        for workers in [1usize, 3] {
            let mut fast_cfg = base_cfg(workers);
            fast_cfg.num_domains = 7;
            fast_cfg.memory_mode = MemoryMode::Fast;
            let prep = prepare(&sys, &fast_cfg, &cal, &SampleStore::default()).unwrap();
            let fast = execute_parallel(&prep.state, &prep.schedule, &fast_cfg.exec_config())
                .unwrap();
            let mut compact_cfg = fast_cfg.clone();
            compact_cfg.memory_mode = MemoryMode::Compact;
            let compact =
                execute_parallel(&prep.state, &prep.schedule, &compact_cfg.exec_config()).unwrap();
            assert!(
                compact.trace.peak_block_bytes <= fast.trace.peak_block_bytes,
                "workers {workers}: compact {} > fast {}",
                compact.trace.peak_block_bytes,
                fast.trace.peak_block_bytes
            );
            assert_eq!(
                solution_bits(&fast.solution),
                solution_bits(&compact.solution)
            );
        }
    }

    #[test]
    fn empty_graph_returns_immediately() {
        let g = crate::taskgraph::TaskGraph::synthetic(&[], &[]);
        let symb = crate::blockmat::symbolic_block_factorize(&std::collections::BTreeSet::new())
            .unwrap();
        let state = Arc::new(ProblemState {
            domains: vec![],
            layout: crate::blockmat::BlockLayout {
                row_domain: vec![],
                row_of_domain: vec![],
                sizes: vec![],
                dofs: vec![],
                pos: HashMap::new(),
            },
            symb,
            graph: g.clone(),
            nrhs: 0,
            total_dofs: 0,
        });
        let schedule = crate::scheduler::list_schedule(&g, 2, CommModel::ZERO).unwrap();
        let out = execute_parallel(&state, &schedule, &ExecConfig::default()).unwrap();
        assert!(out.trace.records.is_empty());
    }

    #[test]
    fn broken_schedule_stalls_and_reports() {
        let sys = generate_grid_problem(&[8], Stencil::Laplacian, 0).unwrap();
        let mut cfg = base_cfg(2);
        cfg.num_domains = 2;
        let cal = synthetic_calibration(1e9);
        let prep = prepare(&sys, &cfg, &cal, &SampleStore::default()).unwrap();
        // sabotage: reverse one worker's order so a consumer precedes its
        // producer on the same worker
        let mut bad = prep.schedule.clone();
        let longest = (0..bad.num_workers)
            .max_by_key(|&w| bad.order[w].len())
            .unwrap();
        bad.order[longest].reverse();
        let mut exec_cfg = cfg.exec_config();
        exec_cfg.stall_timeout = Duration::from_millis(100);
        match execute_parallel(&prep.state, &bad, &exec_cfg) {
            Err(Error::ExecutionStalled { .. }) => {}
            other => panic!("expected stall, got {other:?}"),
        }
    }

    #[test]
    fn json_round_tripped_schedule_drives_execution() {
        let sys = generate_grid_problem(&[9, 7], Stencil::Laplacian, 0).unwrap();
        let mut cfg = base_cfg(3);
        cfg.num_domains = 4;
        let cal = synthetic_calibration(1e9);
        let prep = prepare(&sys, &cfg, &cal, &SampleStore::default()).unwrap();
        let direct = execute_parallel(&prep.state, &prep.schedule, &cfg.exec_config()).unwrap();
        let restored =
            crate::scheduler::Schedule::from_json(&prep.schedule.to_json()).unwrap();
        let via_json = execute_parallel(&prep.state, &restored, &cfg.exec_config()).unwrap();
        assert_eq!(
            solution_bits(&direct.solution),
            solution_bits(&via_json.solution)
        );
    }

    #[test]
    fn repeated_runs_are_bitwise_stable() {
        let sys = generate_grid_problem(&[7, 6], Stencil::Laplacian, 0).unwrap();
        let mut cfg = base_cfg(3);
        cfg.num_domains = 4;
        let cal = synthetic_calibration(1e9);
        let prep = prepare(&sys, &cfg, &cal, &SampleStore::default()).unwrap();
        let a = execute_parallel(&prep.state, &prep.schedule, &cfg.exec_config()).unwrap();
        let b = execute_parallel(&prep.state, &prep.schedule, &cfg.exec_config()).unwrap();
        assert_eq!(solution_bits(&a.solution), solution_bits(&b.solution));
    }
}

#[cfg(test)]
mod timeline_tests {
    use super::*;
    use crate::costmodel::{synthetic_calibration, SampleStore};
    use crate::pipeline::{prepare, PipelineConfig};
    use crate::problem::{generate_grid_problem, Stencil};
    use crate::scheduler::parse_gantt;

    #[test]
    fn timeline_fills_actuals_and_reports_phases() {
        let sys = generate_grid_problem(&[10, 6], Stencil::Laplacian, 0).unwrap();
        let cfg = PipelineConfig {
            workers: 2,
            num_domains: 4,
            ..PipelineConfig::default()
        };
        let cal = synthetic_calibration(1e9);
        let prep = prepare(&sys, &cfg, &cal, &SampleStore::default()).unwrap();
        let out = execute_parallel(&prep.state, &prep.schedule, &cfg.exec_config()).unwrap();
        let (csv, breakdown) =
            collect_timeline(&out.trace, &prep.schedule, &prep.state.graph, Some(1.0)).unwrap();
        let rows = parse_gantt(&csv).unwrap();
        assert_eq!(rows.len(), prep.state.graph.tasks.len());
        assert!(rows.iter().all(|r| r.actual_start.is_some()));
        // efficiency is defined when t1 is supplied
        assert!(breakdown.parallel_efficiency.is_some());
        // phase sums never exceed makespan times worker count
        let total = breakdown.primal_reduction_s
            + breakdown.dual_factor_solve_s
            + breakdown.recovery_s;
        assert!(total <= breakdown.makespan_actual_s * 2.0 + 1e-9);
    }

    #[test]
    fn p1_efficiency_is_one_by_definition() {
        let sys = generate_grid_problem(&[8, 5], Stencil::Laplacian, 0).unwrap();
        let cfg = PipelineConfig {
            workers: 1,
            num_domains: 3,
            ..PipelineConfig::default()
        };
        let cal = synthetic_calibration(1e9);
        let prep = prepare(&sys, &cfg, &cal, &SampleStore::default()).unwrap();
        let out = execute_parallel(&prep.state, &prep.schedule, &cfg.exec_config()).unwrap();
        let (_, breakdown) = collect_timeline(
            &out.trace,
            &prep.schedule,
            &prep.state.graph,
            Some(out.trace.makespan_s),
        )
        .unwrap();
        let eff = breakdown.parallel_efficiency.unwrap();
        assert!((eff - 1.0).abs() < 1e-9);
    }
}
