//! Static list scheduling of the weighted task DAG onto identical workers.
//!
//! Priorities are upward ranks (task weight plus the heaviest downstream
//! path including edge communication). Tasks are placed in priority order on
//! the worker with the earliest insertion-feasible finish time. All ties
//! break by ascending id / worker index, so schedules are deterministic.

use crate::error::{Error, Result};
use crate::taskgraph::{TaskGraph, TaskId};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Linear latency + bandwidth model for one inter-worker transfer; the rate
/// is stored inverted so a free channel is exactly representable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommModel {
    pub seconds_per_byte: f64,
    pub latency_s: f64,
}

impl CommModel {
    pub const ZERO: CommModel = CommModel {
        seconds_per_byte: 0.0,
        latency_s: 0.0,
    };

    pub fn new(bandwidth_bytes_per_s: f64, latency_s: f64) -> Self {
        CommModel {
            seconds_per_byte: if bandwidth_bytes_per_s.is_finite() && bandwidth_bytes_per_s > 0.0 {
                1.0 / bandwidth_bytes_per_s
            } else {
                0.0
            },
            latency_s,
        }
    }

    pub fn bandwidth_bytes_per_s(&self) -> f64 {
        if self.seconds_per_byte > 0.0 {
            1.0 / self.seconds_per_byte
        } else {
            f64::INFINITY
        }
    }

    pub fn cost(&self, bytes: u64) -> f64 {
        self.latency_s + bytes as f64 * self.seconds_per_byte
    }
}

/// Measure an in-process transfer model: memcpy rate as bandwidth and a
/// small channel ping as latency.
pub fn measure_comm_model() -> CommModel {
    use std::time::Instant;
    let size = 4 << 20;
    let src = vec![1u8; size];
    let mut dst = vec![0u8; size];
    let t0 = Instant::now();
    let reps = 8;
    for _ in 0..reps {
        dst.copy_from_slice(&src);
        std::hint::black_box(&dst);
    }
    let per_copy = t0.elapsed().as_secs_f64() / reps as f64;
    let bandwidth = size as f64 / per_copy.max(1e-9);

    let (tx, rx) = std::sync::mpsc::channel::<[u8; 64]>();
    let n = 2000;
    let t0 = Instant::now();
    let h = std::thread::spawn(move || {
        for _ in 0..n {
            tx.send([0u8; 64]).unwrap();
        }
    });
    for _ in 0..n {
        rx.recv().unwrap();
    }
    h.join().unwrap();
    let latency = (t0.elapsed().as_secs_f64() / n as f64).max(1e-8);
    CommModel::new(bandwidth, latency)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommEvent {
    pub from_task: TaskId,
    pub to_task: TaskId,
    pub bytes: u64,
    pub send_s: f64,
    pub recv_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schedule {
    pub num_workers: usize,
    /// task -> worker
    pub assignment: Vec<usize>,
    /// per worker, tasks ordered by predicted start
    pub order: Vec<Vec<TaskId>>,
    pub start: Vec<f64>,
    pub finish: Vec<f64>,
    pub comm: Vec<CommEvent>,
    pub makespan: f64,
    pub comm_model: CommModel,
}

/// Upward ranks with full communication cost on every edge.
pub fn upward_ranks(g: &TaskGraph, comm: CommModel) -> Result<Vec<f64>> {
    let order = g.topo_order()?;
    let mut rank = vec![0.0f64; g.tasks.len()];
    for &t in order.iter().rev() {
        let mut best = 0.0f64;
        for &e in &g.out_edges[t] {
            let edge = &g.edges[e];
            let c = comm.cost(edge.payload_bytes) + rank[edge.to];
            if c > best {
                best = c;
            }
        }
        rank[t] = g.tasks[t].weight + best;
    }
    Ok(rank)
}

/// List-schedule the graph onto `workers` identical workers.
pub fn list_schedule(g: &TaskGraph, workers: usize, comm: CommModel) -> Result<Schedule> {
    if workers == 0 {
        return Err(Error::invalid("worker count must be at least 1"));
    }
    let n = g.tasks.len();
    let rank = upward_ranks(g, comm)?;
    let mut priority: Vec<TaskId> = (0..n).collect();
    priority.sort_by(|&a, &b| {
        rank[b]
            .partial_cmp(&rank[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut assignment = vec![usize::MAX; n];
    let mut start = vec![0.0f64; n];
    let mut finish = vec![0.0f64; n];
    // per worker: intervals (start, finish, task) sorted by start
    let mut timeline: Vec<Vec<(f64, f64, TaskId)>> = vec![Vec::new(); workers];

    for &t in &priority {
        let w_t = g.tasks[t].weight;
        let mut best: Option<(f64, f64, usize, usize)> = None; // (eft, est, worker, slot)
        for w in 0..workers {
            let mut ready = 0.0f64;
            // receiving a remote value also occupies this worker's cpu, so
            // cross edges lengthen the task's own interval
            let mut receive_occupancy = 0.0f64;
            for &e in &g.in_edges[t] {
                let edge = &g.edges[e];
                let p = edge.from;
                if assignment[p] == usize::MAX {
                    return Err(Error::ScheduleInconsistent(format!(
                        "task {t} scheduled before its producer {p}"
                    )));
                }
                let c = if assignment[p] == w {
                    0.0
                } else {
                    receive_occupancy += comm.cost(edge.payload_bytes);
                    comm.cost(edge.payload_bytes)
                };
                ready = ready.max(finish[p] + c);
            }
            let span = w_t + receive_occupancy;
            // insertion: earliest gap in the timeline that fits
            let tl = &timeline[w];
            let mut est = ready;
            let mut slot = tl.len();
            let mut prev_end = 0.0f64;
            for (i, &(s, f, _)) in tl.iter().enumerate() {
                let cand = ready.max(prev_end);
                if cand + span <= s + 1e-15 {
                    est = cand;
                    slot = i;
                    break;
                }
                prev_end = f;
            }
            if slot == tl.len() {
                est = ready.max(prev_end);
            }
            let eft = est + span;
            let better = match best {
                None => true,
                Some((beft, _, bw, _)) => eft < beft || (eft == beft && w < bw),
            };
            if better {
                best = Some((eft, est, w, slot));
            }
        }
        let (eft, est, w, slot) = best.unwrap();
        assignment[t] = w;
        start[t] = est;
        finish[t] = eft;
        timeline[w].insert(slot, (est, eft, t));
    }

    let order: Vec<Vec<TaskId>> = timeline
        .iter()
        .map(|tl| tl.iter().map(|&(_, _, t)| t).collect())
        .collect();
    let mut comm_events = Vec::new();
    for e in &g.edges {
        if assignment[e.from] != assignment[e.to] {
            let send = finish[e.from];
            comm_events.push(CommEvent {
                from_task: e.from,
                to_task: e.to,
                bytes: e.payload_bytes,
                send_s: send,
                recv_s: send + comm.cost(e.payload_bytes),
            });
        }
    }
    let makespan = finish.iter().copied().fold(0.0, f64::max);
    let s = Schedule {
        num_workers: workers,
        assignment,
        order,
        start,
        finish,
        comm: comm_events,
        makespan,
        comm_model: comm,
    };
    s.validate(g)?;
    Ok(s)
}

impl Schedule {
    /// Precedence and non-overlap feasibility.
    pub fn validate(&self, g: &TaskGraph) -> Result<()> {
        let eps = 1e-9;
        for e in &g.edges {
            let c = if self.assignment[e.from] == self.assignment[e.to] {
                0.0
            } else {
                self.comm_model.cost(e.payload_bytes)
            };
            if self.start[e.to] + eps < self.finish[e.from] + c {
                return Err(Error::ScheduleInconsistent(format!(
                    "edge {} -> {}: start {} < finish {} + comm {c}",
                    e.from, e.to, self.start[e.to], self.finish[e.from]
                )));
            }
        }
        for w in 0..self.num_workers {
            let mut last_finish = 0.0f64;
            for &t in &self.order[w] {
                if self.start[t] + eps < last_finish {
                    return Err(Error::ScheduleInconsistent(format!(
                        "worker {w}: task {t} overlaps its predecessor"
                    )));
                }
                last_finish = self.finish[t];
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::pipeline::atomic_write(path.as_ref(), self.to_json().as_bytes())
    }

    /// Gantt CSV with predicted times; actual columns stay blank until a run
    /// fills them.
    pub fn export_gantt(&self, g: &TaskGraph) -> String {
        self.export_gantt_with_actuals(g, None)
    }

    pub fn export_gantt_with_actuals(
        &self,
        g: &TaskGraph,
        actuals: Option<&[(f64, f64)]>,
    ) -> String {
        use std::fmt::Write;
        let mut s = String::from(
            "worker,task_id,kind,phase,predicted_start,predicted_finish,actual_start,actual_finish\n",
        );
        for w in 0..self.num_workers {
            for &t in &self.order[w] {
                let task = &g.tasks[t];
                let (a_start, a_finish) = match actuals {
                    Some(a) => (format!("{:?}", a[t].0), format!("{:?}", a[t].1)),
                    None => (String::new(), String::new()),
                };
                writeln!(
                    s,
                    "{w},{t},{},{},{:?},{:?},{a_start},{a_finish}",
                    task.label(),
                    task.phase.name(),
                    self.start[t],
                    self.finish[t],
                )
                .unwrap();
            }
        }
        s
    }

    pub fn save_gantt(&self, g: &TaskGraph, path: impl AsRef<Path>) -> Result<()> {
        crate::pipeline::atomic_write(path.as_ref(), self.export_gantt(g).as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanttRow {
    pub worker: usize,
    pub task_id: TaskId,
    pub kind: String,
    pub phase: String,
    pub predicted_start: f64,
    pub predicted_finish: f64,
    pub actual_start: Option<f64>,
    pub actual_finish: Option<f64>,
}

/// Parse a Gantt CSV back into rows; round-trips `export_gantt`.
pub fn parse_gantt(text: &str) -> Result<Vec<GanttRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(Error::parse(i + 1, "expected 8 CSV columns"));
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                Ok(Some(s.parse().map_err(|_| {
                    Error::parse(i + 1, format!("bad float `{s}`"))
                })?))
            }
        };
        rows.push(GanttRow {
            worker: parts[0]
                .parse()
                .map_err(|_| Error::parse(i + 1, "bad worker"))?,
            task_id: parts[1]
                .parse()
                .map_err(|_| Error::parse(i + 1, "bad task id"))?,
            kind: parts[2].to_string(),
            phase: parts[3].to_string(),
            predicted_start: parts[4]
                .parse()
                .map_err(|_| Error::parse(i + 1, "bad start"))?,
            predicted_finish: parts[5]
                .parse()
                .map_err(|_| Error::parse(i + 1, "bad finish"))?,
            actual_start: opt(parts[6])?,
            actual_finish: opt(parts[7])?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MakespanBounds {
    pub lower: f64,
    pub work: f64,
    pub critical_path: f64,
}

/// lower = max(critical path, total work / workers).
pub fn makespan_bounds(g: &TaskGraph, workers: usize) -> Result<MakespanBounds> {
    if workers == 0 {
        return Err(Error::invalid("worker count must be at least 1"));
    }
    let (cp, _) = g.critical_path()?;
    let work = g.total_weight();
    Ok(MakespanBounds {
        lower: cp.max(work / workers as f64),
        work,
        critical_path: cp,
    })
}
