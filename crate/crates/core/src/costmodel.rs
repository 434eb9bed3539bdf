//! Task weights: benchmarked dense-kernel tables for the dual tasks and a
//! k-nearest-neighbor estimator for the primal reduction and recovery tasks.
//!
//! Kernel tables are measured on cubic operand shapes and queried through a
//! flop-equivalent edge length, interpolated linearly in log-log space. That
//! makes lookups exact at measured sizes and near power-law in between.

use crate::blockmat::{BlockLayout, SymbolicFactorization};
use crate::error::{Error, Result};
use crate::problem::DomainProblem;
use crate::taskgraph::{PTaskKind, TaskGraph};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Factorize,
    Trisolve,
    Update,
}

pub const KERNEL_KINDS: [KernelKind; 3] =
    [KernelKind::Factorize, KernelKind::Trisolve, KernelKind::Update];

/// Median seconds per kernel invocation at cubic operand sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelTable {
    pub kind: KernelKind,
    pub sizes: Vec<usize>,
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub fingerprint: String,
    pub timestamp_unix: u64,
    pub tables: Vec<KernelTable>,
    pub warnings: Vec<String>,
}

pub fn machine_fingerprint() -> String {
    let cpus = std::thread::available_parallelism().map_or(0, |p| p.get());
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().replace(' ', "_"))
        })
        .unwrap_or_else(|| "unknown-cpu".to_string());
    format!(
        "{}-{}-{}cpu-{}",
        std::env::consts::OS,
        std::env::consts::ARCH,
        cpus,
        model
    )
}

/// Batch size needed before one measurement spans at least ten clock
/// ticks; `None` when a single invocation is already measurable.
fn promotion_batch(probe_seconds: f64, granularity: f64) -> Option<usize> {
    if probe_seconds >= 10.0 * granularity {
        return None;
    }
    Some(((10.0 * granularity / probe_seconds.max(granularity)).ceil() as usize).max(2))
}

/// Smallest positive distance the monotonic clock can resolve.
fn clock_granularity() -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        let d = (b - a).as_secs_f64();
        if d > 0.0 && d < best {
            best = d;
        }
    }
    if best.is_finite() {
        best
    } else {
        1e-9
    }
}

/// Benchmark the three dense kernels at each size; medians over
/// `repetitions` measurements. Sizes too fast for the clock are promoted by
/// repetition batching and reported as warnings.
pub fn calibrate_kernels(sizes: &[usize], repetitions: usize) -> Result<CalibrationSet> {
    use crate::blockmat::{kernel_factorize_block, kernel_trisolve_block, kernel_update_block};
    use crate::dense::Mat;
    use rand::{Rng, SeedableRng};

    if sizes.is_empty() {
        return Err(Error::invalid("calibration needs at least one size"));
    }
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let repetitions = repetitions.max(3);
    let gran = clock_granularity();
    let mut warnings = Vec::new();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let mut rand_sym = |n: usize| {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                m[(i, j)] = rng.random_range(-1.0..1.0);
            }
            m[(i, i)] += 2.0 * n as f64;
        }
        m
    };

    let mut tables = Vec::new();
    for kind in KERNEL_KINDS {
        let mut times = Vec::new();
        for &n in &sorted {
            let sym = rand_sym(n);
            let factor = kernel_factorize_block(&sym, 0)?;
            let rect = {
                let mut m = Mat::zeros(n, n);
                for v in m.data.iter_mut() {
                    *v = 0.5;
                }
                m
            };
            let mut dest = rand_sym(n);
            let run = |dest: &mut Mat| match kind {
                KernelKind::Factorize => {
                    let _ = kernel_factorize_block(&sym, 0).unwrap();
                }
                KernelKind::Trisolve => {
                    let _ = kernel_trisolve_block(&rect, &factor);
                }
                KernelKind::Update => {
                    kernel_update_block(dest, &rect, &factor.piv, &rect.clone(), false);
                }
            };
            run(&mut dest); // warm-up
            let probe = {
                let t0 = Instant::now();
                run(&mut dest);
                t0.elapsed().as_secs_f64()
            };
            let batch = match promotion_batch(probe, gran) {
                Some(b) => {
                    warnings.push(format!(
                        "{kind:?} at size {n}: promoted to batches of {b} (clock granularity)"
                    ));
                    b
                }
                None => 1,
            };
            let mut samples = Vec::with_capacity(repetitions);
            for _ in 0..repetitions {
                let t0 = Instant::now();
                for _ in 0..batch {
                    run(&mut dest);
                }
                samples.push(t0.elapsed().as_secs_f64() / batch as f64);
            }
            samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = samples[samples.len() / 2].max(f64::MIN_POSITIVE);
            times.push(median);
        }
        for w in times.windows(2) {
            if w[1] <= w[0] {
                warnings.push(format!(
                    "{kind:?}: non-monotone medians ({} then {})",
                    w[0], w[1]
                ));
            }
        }
        tables.push(KernelTable {
            kind,
            sizes: sorted.clone(),
            times,
        });
    }

    Ok(CalibrationSet {
        fingerprint: machine_fingerprint(),
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        tables,
        warnings,
    })
}

/// Synthetic calibration from a pure flop model; deterministic, used where
/// wall-clock measurement is unavailable or undesirable.
pub fn synthetic_calibration(flops_per_second: f64) -> CalibrationSet {
    let sizes = vec![8usize, 32, 128, 512];
    let tables = KERNEL_KINDS
        .iter()
        .map(|&kind| KernelTable {
            kind,
            sizes: sizes.clone(),
            times: sizes
                .iter()
                .map(|&s| kernel_flops(kind, &cubic_dims(kind, s)) / flops_per_second)
                .collect(),
        })
        .collect();
    CalibrationSet {
        fingerprint: "synthetic".to_string(),
        timestamp_unix: 0,
        tables,
        warnings: vec![],
    }
}

fn cubic_dims(kind: KernelKind, s: usize) -> Vec<usize> {
    match kind {
        KernelKind::Factorize => vec![s],
        KernelKind::Trisolve => vec![s, s],
        KernelKind::Update => vec![s, s, s],
    }
}

fn kernel_flops(kind: KernelKind, dims: &[usize]) -> f64 {
    match kind {
        KernelKind::Factorize => {
            let n = dims[0] as f64;
            n * n * n / 3.0
        }
        KernelKind::Trisolve => {
            let (m, n) = (dims[0] as f64, dims[1] as f64);
            m * n * n
        }
        KernelKind::Update => {
            let (m, n, k) = (dims[0] as f64, dims[1] as f64, dims[2] as f64);
            2.0 * m * n * k
        }
    }
}

impl CalibrationSet {
    pub fn table(&self, kind: KernelKind) -> Result<&KernelTable> {
        self.tables
            .iter()
            .find(|t| t.kind == kind)
            .ok_or_else(|| Error::NotCalibrated(format!("no table for {kind:?}")))
    }

    pub fn save_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self)?;
        crate::pipeline::atomic_write(path.as_ref(), &bytes)
    }

    /// Load a calibration file; a fingerprint mismatch is reported as a
    /// warning string, not an error.
    pub fn load_from(path: impl AsRef<Path>) -> Result<(Self, Option<String>)> {
        let bytes = std::fs::read(path.as_ref())?;
        let set: CalibrationSet = serde_json::from_slice(&bytes)?;
        let here = machine_fingerprint();
        let warn = if set.fingerprint != here {
            Some(format!(
                "calibration fingerprint `{}` does not match this machine `{here}`",
                set.fingerprint
            ))
        } else {
            None
        };
        Ok((set, warn))
    }
}

/// Seconds for one dense kernel invocation with the given dims
/// (factorize: [n], trisolve: [rows, factor_order], update: [m, n, k]).
pub fn estimate_dense_cost(set: &CalibrationSet, kind: KernelKind, dims: &[usize]) -> Result<f64> {
    if dims.contains(&0) {
        return Ok(0.0);
    }
    let table = set.table(kind)?;
    if table.sizes.is_empty() {
        return Err(Error::NotCalibrated(format!("{kind:?} table is empty")));
    }
    let flops = kernel_flops(kind, dims);
    let cubic_coeff = kernel_flops(kind, &cubic_dims(kind, 1));
    let edge = (flops / cubic_coeff).cbrt();
    Ok(interp_loglog(&table.sizes, &table.times, edge))
}

/// Piecewise-linear interpolation in log-log space, slope clamped to the
/// boundary interval outside the grid.
fn interp_loglog(sizes: &[usize], times: &[f64], x: f64) -> f64 {
    let n = sizes.len();
    // measured sizes return the stored median exactly
    for i in 0..n {
        let s = sizes[i] as f64;
        if (x - s).abs() <= s * 1e-12 {
            return times[i];
        }
    }
    let lx = x.ln();
    let pt = |i: usize| ((sizes[i] as f64).ln(), times[i].max(f64::MIN_POSITIVE).ln());
    if n == 1 {
        // single point: assume cubic growth
        let (x0, y0) = pt(0);
        return (y0 + 3.0 * (lx - x0)).exp();
    }
    let seg = if x <= sizes[0] as f64 {
        0
    } else if x >= sizes[n - 1] as f64 {
        n - 2
    } else {
        let mut s = 0;
        while s + 2 < n && (sizes[s + 1] as f64) < x {
            s += 1;
        }
        s
    };
    let (x0, y0) = pt(seg);
    let (x1, y1) = pt(seg + 1);
    let slope = (y1 - y0) / (x1 - x0);
    (y0 + slope * (lx - x0)).exp()
}

/// Samples for the k-nearest-neighbor estimator: feature vector
/// [interior_dof_count, interior_nnz, interface_size] and measured seconds.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct KnnSamples {
    pub samples: Vec<([f64; 3], f64)>,
}

impl KnnSamples {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, features: [f64; 3], seconds: f64) {
        self.samples.push((features, seconds));
    }
}

pub fn domain_features(dom: &DomainProblem) -> [f64; 3] {
    [
        dom.interior.len() as f64,
        dom.a_ii.nnz() as f64,
        dom.interface.len() as f64,
    ]
}

/// Inverse-distance-weighted mean of the k nearest samples under Euclidean
/// distance on standardized features; exact matches return that sample.
pub fn knn_estimate(samples: &KnnSamples, query: [f64; 3], k: usize) -> f64 {
    assert!(!samples.is_empty(), "knn estimator needs at least one sample");
    let n = samples.samples.len();
    let k = k.max(1).min(n);
    // standardize features over the sample set
    let mut mean = [0.0f64; 3];
    for (f, _) in &samples.samples {
        for a in 0..3 {
            mean[a] += f[a];
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut var = [0.0f64; 3];
    for (f, _) in &samples.samples {
        for a in 0..3 {
            var[a] += (f[a] - mean[a]).powi(2);
        }
    }
    let sd: Vec<f64> = var
        .iter()
        .map(|v| {
            let s = (v / n as f64).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let dist = |f: &[f64; 3]| -> f64 {
        (0..3)
            .map(|a| ((f[a] - query[a]) / sd[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        dist(&samples.samples[a].0)
            .partial_cmp(&dist(&samples.samples[b].0))
            .unwrap()
            .then(a.cmp(&b))
    });
    let nearest = &order[..k];
    if dist(&samples.samples[nearest[0]].0) == 0.0 {
        return samples.samples[nearest[0]].1;
    }
    let mut wsum = 0.0;
    let mut acc = 0.0;
    for &i in nearest {
        let w = 1.0 / dist(&samples.samples[i].0);
        wsum += w;
        acc += w * samples.samples[i].1;
    }
    acc / wsum
}

/// Sample pools for the two primal phases, persisted as JSON lines.
#[derive(Debug, Clone, Default)]
pub struct SampleStore {
    pub reduction: KnnSamples,
    pub recovery: KnnSamples,
}

#[derive(Serialize, Deserialize)]
struct SampleLine {
    phase: String,
    features: [f64; 3],
    seconds: f64,
}

impl SampleStore {
    pub fn load_from(path: impl AsRef<Path>) -> Result<Self> {
        let mut store = SampleStore::default();
        let text = match std::fs::read_to_string(path.as_ref()) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(store),
            Err(e) => return Err(e.into()),
        };
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let s: SampleLine = serde_json::from_str(line)?;
            match s.phase.as_str() {
                "reduction" => store.reduction.push(s.features, s.seconds),
                "recovery" => store.recovery.push(s.features, s.seconds),
                other => {
                    return Err(Error::invalid(format!("unknown sample phase `{other}`")));
                }
            }
        }
        Ok(store)
    }

    pub fn append_to(
        path: impl AsRef<Path>,
        phase: &str,
        features: [f64; 3],
        seconds: f64,
    ) -> Result<()> {
        use std::io::Write;
        let line = serde_json::to_string(&SampleLine {
            phase: phase.to_string(),
            features,
            seconds,
        })?;
        if let Some(dir) = path.as_ref().parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path.as_ref())?;
        writeln!(f, "{line}")?;
        Ok(())
    }
}

pub const DEFAULT_KNN_K: usize = 3;

/// Assign weights to every ptask and task. Dual tasks use the kernel tables;
/// primal tasks use the KNN pools, falling back to the dense estimate of
/// their dominant ptask when no samples exist.
pub fn weigh_graph(
    g: &TaskGraph,
    set: &CalibrationSet,
    store: &SampleStore,
    symb: &SymbolicFactorization,
    layout: &BlockLayout,
    domains: &[DomainProblem],
) -> Result<TaskGraph> {
    let mut out = g.clone();
    let sz = |r: usize| layout.sizes[r];
    let nrhs = g.nrhs.max(1);
    for task in &mut out.tasks {
        let mut total = 0.0;
        for p in &mut task.ptasks {
            let w = match p.kind {
                PTaskKind::InteriorFactor { domain } => {
                    let dom = &domains[domain];
                    if store.reduction.is_empty() {
                        estimate_dense_cost(set, KernelKind::Factorize, &[dom.interior.len()])?
                    } else {
                        // measured samples cover the whole reduction task
                        knn_estimate(&store.reduction, domain_features(dom), DEFAULT_KNN_K)
                    }
                }
                PTaskKind::Dtn { domain } => {
                    let dom = &domains[domain];
                    if store.reduction.is_empty() {
                        // dominant kernels: the multi-rhs interior solve and
                        // the boundary correction product
                        let b = dom.interface.len();
                        let ni = dom.interior.len();
                        estimate_dense_cost(set, KernelKind::Trisolve, &[b, ni])?
                            + estimate_dense_cost(set, KernelKind::Update, &[b, b, ni])?
                    } else {
                        0.0
                    }
                }
                PTaskKind::RhsReduce { domain } => {
                    let dom = &domains[domain];
                    if store.reduction.is_empty() {
                        estimate_dense_cost(set, KernelKind::Trisolve, &[nrhs, dom.interior.len()])?
                    } else {
                        0.0
                    }
                }
                PTaskKind::Recover { domain } => {
                    let dom = &domains[domain];
                    if dom.interior.is_empty() {
                        0.0
                    } else if store.recovery.is_empty() {
                        estimate_dense_cost(
                            set,
                            KernelKind::Trisolve,
                            &[nrhs, dom.interior.len()],
                        )?
                    } else {
                        knn_estimate(&store.recovery, domain_features(dom), DEFAULT_KNN_K)
                    }
                }
                PTaskKind::BlkFactorize { row } => {
                    estimate_dense_cost(set, KernelKind::Factorize, &[sz(row)])?
                }
                PTaskKind::BlkTrisolve { row, col } => {
                    estimate_dense_cost(set, KernelKind::Trisolve, &[sz(row), sz(col)])?
                }
                PTaskKind::BlkUpdate { row, col, src } => {
                    estimate_dense_cost(set, KernelKind::Update, &[sz(row), sz(col), sz(src)])?
                }
                PTaskKind::FwdSolveBlk { row } => {
                    let mut w =
                        estimate_dense_cost(set, KernelKind::Trisolve, &[nrhs, sz(row)])?;
                    for &j in &symb.row_cols[row] {
                        w += estimate_dense_cost(set, KernelKind::Update, &[nrhs, sz(row), sz(j)])?;
                    }
                    w
                }
                PTaskKind::DiagSolveBlk { row } => {
                    estimate_dense_cost(set, KernelKind::Update, &[nrhs, sz(row), 1])?
                }
                PTaskKind::BwdSolveBlk { row } => {
                    let mut w =
                        estimate_dense_cost(set, KernelKind::Trisolve, &[nrhs, sz(row)])?;
                    for &i in &symb.col_rows[row] {
                        w += estimate_dense_cost(set, KernelKind::Update, &[nrhs, sz(row), sz(i)])?;
                    }
                    w
                }
            };
            p.weight = w;
            total += w;
        }
        task.weight = total;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_set(sizes: Vec<usize>, times: Vec<f64>) -> CalibrationSet {
        CalibrationSet {
            fingerprint: "test".into(),
            timestamp_unix: 0,
            tables: KERNEL_KINDS
                .iter()
                .map(|&kind| KernelTable {
                    kind,
                    sizes: sizes.clone(),
                    times: times.clone(),
                })
                .collect(),
            warnings: vec![],
        }
    }

    #[test]
    fn grid_points_are_exact() {
        let set = toy_set(vec![64, 128], vec![1e-4, 8e-4]);
        let t = estimate_dense_cost(&set, KernelKind::Factorize, &[64]).unwrap();
        assert_eq!(t, 1e-4);
        let t = estimate_dense_cost(&set, KernelKind::Factorize, &[128]).unwrap();
        assert_eq!(t, 8e-4);
        // cubic shapes hit grid points for the other kernels too
        assert_eq!(
            estimate_dense_cost(&set, KernelKind::Trisolve, &[64, 64]).unwrap(),
            1e-4
        );
        assert_eq!(
            estimate_dense_cost(&set, KernelKind::Update, &[128, 128, 128]).unwrap(),
            8e-4
        );
    }

    #[test]
    fn interpolation_matches_loglog_formula() {
        let set = toy_set(vec![64, 128], vec![1e-4, 8e-4]);
        let t = estimate_dense_cost(&set, KernelKind::Factorize, &[96]).unwrap();
        let expect = ((1e-4f64).ln()
            + ((8e-4f64).ln() - (1e-4f64).ln()) * ((96f64).ln() - (64f64).ln())
                / ((128f64).ln() - (64f64).ln()))
        .exp();
        assert!((t - expect).abs() < 1e-18, "{t} vs {expect}");
    }

    #[test]
    fn zero_dims_cost_nothing() {
        let set = toy_set(vec![64], vec![1e-4]);
        assert_eq!(
            estimate_dense_cost(&set, KernelKind::Update, &[0, 10, 10]).unwrap(),
            0.0
        );
    }

    #[test]
    fn doubling_table_doubles_estimates() {
        let a = toy_set(vec![32, 64, 128], vec![1e-5, 1e-4, 8e-4]);
        let b = toy_set(vec![32, 64, 128], vec![2e-5, 2e-4, 16e-4]);
        for dims in [[40usize, 40, 40], [96, 48, 30], [200, 10, 77]] {
            let ta = estimate_dense_cost(&a, KernelKind::Update, &dims).unwrap();
            let tb = estimate_dense_cost(&b, KernelKind::Update, &dims).unwrap();
            assert!((tb / ta - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_between_grid_points() {
        let set = toy_set(vec![16, 64, 256], vec![1e-6, 1e-4, 1e-2]);
        let mut last = 0.0;
        for n in (16..=256).step_by(8) {
            let t = estimate_dense_cost(&set, KernelKind::Factorize, &[n]).unwrap();
            assert!(t > last);
            last = t;
        }
    }

    #[test]
    fn knn_symmetric_average() {
        let mut s = KnnSamples::default();
        s.push([100.0, 0.0, 0.0], 2.0e-3);
        s.push([200.0, 0.0, 0.0], 9.0e-3);
        let t = knn_estimate(&s, [150.0, 0.0, 0.0], 2);
        assert!((t - 5.5e-3).abs() < 1e-15);
    }

    #[test]
    fn knn_exact_match_returns_sample() {
        let mut s = KnnSamples::default();
        s.push([100.0, 0.0, 0.0], 2.0e-3);
        s.push([200.0, 0.0, 0.0], 9.0e-3);
        assert_eq!(knn_estimate(&s, [100.0, 0.0, 0.0], 3), 2.0e-3);
    }

    #[test]
    fn knn_nearest_neighbor_k1() {
        let mut s = KnnSamples::default();
        s.push([100.0, 0.0, 0.0], 2.0e-3);
        s.push([200.0, 0.0, 0.0], 9.0e-3);
        assert_eq!(knn_estimate(&s, [140.0, 0.0, 0.0], 1), 2.0e-3);
    }

    #[test]
    fn knn_bounded_by_neighbor_extremes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let mut s = KnnSamples::default();
        for _ in 0..30 {
            s.push(
                [
                    rng.random_range(0.0..100.0),
                    rng.random_range(0.0..1000.0),
                    rng.random_range(0.0..50.0),
                ],
                rng.random_range(1e-4..1e-1),
            );
        }
        for _ in 0..50 {
            let q = [
                rng.random_range(0.0..100.0),
                rng.random_range(0.0..1000.0),
                rng.random_range(0.0..50.0),
            ];
            let t = knn_estimate(&s, q, 3);
            let min = s.samples.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
            let max = s.samples.iter().map(|x| x.1).fold(0.0f64, f64::max);
            assert!(t >= min && t <= max);
        }
    }

    #[test]
    fn calibration_runs_and_persists() {
        let set = calibrate_kernels(&[8, 16], 3).unwrap();
        assert_eq!(set.tables.len(), 3);
        for t in &set.tables {
            assert_eq!(t.sizes, vec![8, 16]);
            assert!(t.times.iter().all(|&x| x > 0.0 && x.is_finite()));
        }
        let dir = std::env::temp_dir().join("d3m_cal_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cal.json");
        set.save_to(&path).unwrap();
        let (back, warn) = CalibrationSet::load_from(&path).unwrap();
        assert!(warn.is_none());
        assert_eq!(back.fingerprint, set.fingerprint);
        assert_eq!(back.tables[0].times, set.tables[0].times);
    }

    #[test]
    fn calibration_is_monotone_on_spread_sizes() {
        // 32 vs 128 is a 64x flop ratio; any sane machine times it monotone
        let set = calibrate_kernels(&[32, 128], 3).unwrap();
        let f = set.table(KernelKind::Factorize).unwrap();
        assert!(
            f.times[1] > f.times[0],
            "factorize medians not monotone: {:?}",
            f.times
        );
    }

    #[test]
    fn fingerprint_mismatch_warns_on_load() {
        let mut set = synthetic_calibration(1e9);
        set.fingerprint = "someone-elses-machine".into();
        let dir = std::env::temp_dir().join("d3m_cal_mismatch");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cal.json");
        set.save_to(&path).unwrap();
        let (_, warn) = CalibrationSet::load_from(&path).unwrap();
        assert!(warn.is_some());
    }

    #[test]
    fn knn_k_truncates_to_sample_count() {
        let mut s = KnnSamples::default();
        s.push([1.0, 0.0, 0.0], 3.0e-3);
        // k = 5 with one sample degenerates to that sample
        assert_eq!(knn_estimate(&s, [9.0, 0.0, 0.0], 5), 3.0e-3);
    }

    #[test]
    fn timer_promotion_rule() {
        // below ten clock ticks the measurement is batched, otherwise not
        assert_eq!(promotion_batch(1e-3, 1e-9), None);
        assert_eq!(promotion_batch(1e-8, 1e-9), None);
        let b = promotion_batch(1e-9, 1e-9).unwrap();
        assert!(b >= 10);
        let b = promotion_batch(0.0, 1e-9).unwrap();
        assert!(b >= 2);
        // tiny sizes still calibrate to positive finite medians
        let set = calibrate_kernels(&[1], 3).unwrap();
        for t in &set.tables {
            assert!(t.times[0] > 0.0 && t.times[0].is_finite());
        }
    }

    #[test]
    fn sample_store_round_trip() {
        let dir = std::env::temp_dir().join("d3m_samples_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("samples.jsonl");
        let _ = std::fs::remove_file(&path);
        SampleStore::append_to(&path, "reduction", [10.0, 50.0, 4.0], 1e-3).unwrap();
        SampleStore::append_to(&path, "recovery", [10.0, 50.0, 4.0], 2e-4).unwrap();
        let store = SampleStore::load_from(&path).unwrap();
        assert_eq!(store.reduction.samples.len(), 1);
        assert_eq!(store.recovery.samples.len(), 1);
        assert_eq!(store.recovery.samples[0].1, 2e-4);
    }

    #[test]
    fn weigh_graph_is_deterministic_and_positive() {
        use crate::blockmat::{symbolic_block_factorize, BlockLayout};
        use crate::problem::{
            generate_grid_problem, partition_domains, split_domain_dofs, PartitionStrategy,
            Stencil,
        };
        let sys = generate_grid_problem(&[8, 8], Stencil::Laplacian, 0).unwrap();
        let part = partition_domains(&sys, 4, PartitionStrategy::Grid).unwrap();
        let doms = split_domain_dofs(&sys, &part).unwrap();
        let layout = BlockLayout::build(&doms, &part);
        let mut pattern = std::collections::BTreeSet::new();
        for dom in &doms {
            let rows: Vec<usize> = dom.interface.iter().map(|g| layout.pos[g].0).collect();
            for (a, &ri) in rows.iter().enumerate() {
                for &rj in &rows[..=a] {
                    pattern.insert(if ri >= rj { (ri, rj) } else { (rj, ri) });
                }
            }
        }
        let symb = symbolic_block_factorize(&pattern).unwrap();
        let g = crate::taskgraph::build_task_graph(&symb, &layout, &doms, 1).unwrap();
        let set = synthetic_calibration(1e9);
        let store = SampleStore::default();
        let w1 = weigh_graph(&g, &set, &store, &symb, &layout, &doms).unwrap();
        let w2 = weigh_graph(&g, &set, &store, &symb, &layout, &doms).unwrap();
        for (a, b) in w1.tasks.iter().zip(w2.tasks.iter()) {
            assert_eq!(a.weight.to_bits(), b.weight.to_bits());
        }
        for t in &w1.tasks {
            assert!(t.weight > 0.0, "task {} ({}) has zero weight", t.id, t.label());
        }
    }
}
