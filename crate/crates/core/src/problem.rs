//! Problem ingestion: sparse symmetric systems, grid generators, Matrix
//! Market I/O, domain partitioning, and the interior/interface split.
//!
//! The split uses an algebraic separator: every coupling that crosses a
//! domain boundary is covered by marking the endpoint owned by the
//! lower-numbered domain as an interface DOF. Remaining DOFs are interior to
//! their owner and never couple to another domain's interior, so each domain
//! can eliminate its interior independently. Interface-interface matrix and
//! rhs entries are split between the domains that see them with uniform
//! weights, which keeps the scattered sum exactly equal to the global
//! interface submatrix.

use crate::dense::Mat;
use crate::error::{Error, Result};
use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Global symmetric sparse system. Entries hold the lower triangle
/// canonically (row >= col), sorted by (row, col), duplicates forbidden,
/// diagonal structurally present for every row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    pub n: usize,
    pub entries: Vec<(usize, usize, f64)>,
    pub rhs: Vec<Vec<f64>>,
    pub shift: f64,
    /// Lattice dimensions when generated on a grid; enables grid partitioning.
    pub grid: Option<Vec<usize>>,
}

/// Full symmetric adjacency in CSR form, diagonal included.
#[derive(Debug, Clone)]
pub struct Adjacency {
    pub ptr: Vec<usize>,
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseSystem {
    pub fn new(
        n: usize,
        mut entries: Vec<(usize, usize, f64)>,
        rhs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("system must have at least one DOF"));
        }
        for e in entries.iter_mut() {
            if e.0 >= n || e.1 >= n {
                return Err(Error::invalid(format!(
                    "entry ({}, {}) out of range for n = {}",
                    e.0, e.1, n
                )));
            }
            if e.1 > e.0 {
                *e = (e.1, e.0, e.2);
            }
        }
        entries.sort_by_key(|e| (e.0, e.1));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::invalid(format!(
                    "duplicate entry ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }
        let mut has_diag = vec![false; n];
        for &(r, c, _) in &entries {
            if r == c {
                has_diag[r] = true;
            }
        }
        if let Some(r) = has_diag.iter().position(|d| !d) {
            return Err(Error::invalid(format!("row {r} has no diagonal entry")));
        }
        for (k, v) in rhs.iter().enumerate() {
            if v.len() != n {
                return Err(Error::invalid(format!(
                    "rhs {k} has length {} but n = {n}",
                    v.len()
                )));
            }
        }
        Ok(SparseSystem {
            n,
            entries,
            rhs,
            shift: 0.0,
            grid: None,
        })
    }

    pub fn nnz_lower(&self) -> usize {
        self.entries.len()
    }

    /// Full symmetric CSR adjacency with values, diagonal included.
    pub fn adjacency(&self) -> Adjacency {
        let n = self.n;
        let mut counts = vec![0usize; n + 1];
        for &(r, c, _) in &self.entries {
            counts[r + 1] += 1;
            if r != c {
                counts[c + 1] += 1;
            }
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let ptr = counts;
        let nnz = ptr[n];
        let mut idx = vec![0usize; nnz];
        let mut val = vec![0.0; nnz];
        let mut next = ptr.clone();
        for &(r, c, v) in &self.entries {
            idx[next[r]] = c;
            val[next[r]] = v;
            next[r] += 1;
            if r != c {
                idx[next[c]] = r;
                val[next[c]] = v;
                next[c] += 1;
            }
        }
        let mut adj = Adjacency { ptr, idx, val };
        for r in 0..n {
            let (s, e) = (adj.ptr[r], adj.ptr[r + 1]);
            let mut pairs: Vec<(usize, f64)> = adj.idx[s..e]
                .iter()
                .copied()
                .zip(adj.val[s..e].iter().copied())
                .collect();
            pairs.sort_by_key(|p| p.0);
            for (k, (i, v)) in pairs.into_iter().enumerate() {
                adj.idx[s + k] = i;
                adj.val[s + k] = v;
            }
        }
        adj
    }

    /// y = A x with the unregularized operator.
    pub fn multiply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
            if r != c {
                y[c] += v * x[r];
            }
        }
        y
    }

    pub fn residual_norm(&self, x: &[f64], rhs: &[f64]) -> f64 {
        let ax = self.multiply(x);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..self.n {
            let d = ax[i] - rhs[i];
            num += d * d;
            den += rhs[i] * rhs[i];
        }
        num.sqrt() / den.sqrt().max(f64::MIN_POSITIVE)
    }

    pub fn save_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        self.write_matrix_market(&mut out)?;
        crate::pipeline::atomic_write(path.as_ref(), &out)
    }

    pub fn write_matrix_market(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
        if let Some(dims) = &self.grid {
            let joined: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
            writeln!(w, "% grid: {}", joined.join(" "))?;
        }
        if self.shift != 0.0 {
            writeln!(w, "% shift: {:?}", self.shift)?;
        }
        writeln!(w, "{} {} {}", self.n, self.n, self.entries.len())?;
        for &(r, c, v) in &self.entries {
            writeln!(w, "{} {} {:?}", r + 1, c + 1, v)?;
        }
        Ok(())
    }

    pub fn load_from(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path.as_ref())?;
        Self::read_matrix_market(BufReader::new(f))
    }

    pub fn read_matrix_market(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty file"))??;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("%%MatrixMarket") {
            return Err(Error::parse(1, "missing %%MatrixMarket header"));
        }
        if fields.next() != Some("matrix") || fields.next() != Some("coordinate") {
            return Err(Error::parse(
                1,
                "only `matrix coordinate` files are supported",
            ));
        }
        if fields.next() != Some("real") {
            return Err(Error::parse(1, "only real-valued matrices are supported"));
        }
        match fields.next() {
            Some("symmetric") => {}
            other => {
                return Err(Error::parse(
                    1,
                    format!("qualifier must be `symmetric`, found {other:?}"),
                ))
            }
        }

        let mut grid = None;
        let mut shift = 0.0;
        let mut lineno = 1usize;
        let mut dims_line: Option<(usize, usize)> = None;
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        let mut entry_lines: Vec<usize> = Vec::new();

        for line in lines {
            let line = line?;
            lineno += 1;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix('%') {
                let rest = rest.trim();
                if let Some(g) = rest.strip_prefix("grid:") {
                    let dims: std::result::Result<Vec<usize>, _> =
                        g.split_whitespace().map(|x| x.parse()).collect();
                    grid = Some(dims.map_err(|_| Error::parse(lineno, "bad grid comment"))?);
                } else if let Some(s) = rest.strip_prefix("shift:") {
                    shift = s
                        .trim()
                        .parse()
                        .map_err(|_| Error::parse(lineno, "bad shift comment"))?;
                }
                continue;
            }
            if dims_line.is_none() {
                let mut it = t.split_whitespace();
                let m: usize = it
                    .next()
                    .and_then(|x| x.parse().ok())
                    .ok_or_else(|| Error::parse(lineno, "cannot parse row count"))?;
                let nn: usize = it
                    .next()
                    .and_then(|x| x.parse().ok())
                    .ok_or_else(|| Error::parse(lineno, "cannot parse column count"))?;
                let nnz: usize = it
                    .next()
                    .and_then(|x| x.parse().ok())
                    .ok_or_else(|| Error::parse(lineno, "cannot parse nonzero count"))?;
                if m != nn {
                    return Err(Error::parse(lineno, "matrix must be square"));
                }
                if m == 0 {
                    return Err(Error::parse(lineno, "matrix must have at least one row"));
                }
                dims_line = Some((m, nnz));
                continue;
            }
            let (n, nnz) = dims_line.unwrap();
            if entries.len() == nnz {
                return Err(Error::parse(lineno, "more entries than declared"));
            }
            let mut it = t.split_whitespace();
            let i: usize = it
                .next()
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| Error::parse(lineno, "cannot parse row index"))?;
            let j: usize = it
                .next()
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| Error::parse(lineno, "cannot parse column index"))?;
            let v: f64 = it
                .next()
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| Error::parse(lineno, "cannot parse value"))?;
            if i < 1 || i > n || j < 1 || j > n {
                return Err(Error::parse(
                    lineno,
                    format!("index ({i}, {j}) out of range for n = {n}"),
                ));
            }
            // fold upper-triangle entries to the lower triangle
            let (r, c) = if j > i { (j - 1, i - 1) } else { (i - 1, j - 1) };
            entries.push((r, c, v));
            entry_lines.push(lineno);
        }

        let (n, nnz) =
            dims_line.ok_or_else(|| Error::parse(lineno, "missing dimensions line"))?;
        if entries.len() != nnz {
            return Err(Error::parse(
                lineno,
                format!("declared {} entries, found {}", nnz, entries.len()),
            ));
        }
        // duplicates after folding are format errors, reported by line
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.sort_by_key(|&k| (entries[k].0, entries[k].1));
        for w in order.windows(2) {
            let (a, b) = (entries[w[0]], entries[w[1]]);
            if a.0 == b.0 && a.1 == b.1 {
                return Err(Error::parse(
                    entry_lines[w[1]],
                    format!("duplicate entry ({}, {}) after folding", a.0 + 1, a.1 + 1),
                ));
            }
        }

        let rhs = vec![vec![1.0; n]];
        let mut sys = SparseSystem::new(n, entries, rhs).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::parse(lineno, m),
            other => other,
        })?;
        sys.grid = grid;
        sys.shift = shift;
        Ok(sys)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stencil {
    Laplacian,
    Helmholtz(f64),
}

/// Standard 2d-point finite-difference operator on a 1/2/3-d grid with
/// Dirichlet boundary eliminated; rhs defaults to all ones. The `seed`
/// parameter is reserved for randomized stencil variants; the standard
/// stencils are deterministic.
pub fn generate_grid_problem(dims: &[usize], stencil: Stencil, _seed: u64) -> Result<SparseSystem> {
    if dims.is_empty() || dims.len() > 3 {
        return Err(Error::invalid("dims must have 1 to 3 axes"));
    }
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::invalid("each grid dimension must be at least 2"));
    }
    let nd = dims.len();
    let n: usize = dims.iter().product();
    let diag = match stencil {
        Stencil::Laplacian => 2.0 * nd as f64,
        Stencil::Helmholtz(k) => 2.0 * nd as f64 - k * k,
    };
    let strides = {
        let mut s = vec![1usize; nd];
        for a in 1..nd {
            s[a] = s[a - 1] * dims[a - 1];
        }
        s
    };
    let mut entries = Vec::with_capacity(n * (1 + nd));
    for i in 0..n {
        entries.push((i, i, diag));
        let mut rem = i;
        for a in 0..nd {
            let coord = rem % dims[a];
            rem /= dims[a];
            if coord > 0 {
                entries.push((i, i - strides[a], -1.0));
            }
        }
    }
    let mut sys = SparseSystem::new(n, entries, vec![vec![1.0; n]])?;
    sys.grid = Some(dims.to_vec());
    Ok(sys)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub num_domains: usize,
    pub owner: Vec<usize>,
}

pub const DEFAULT_IMBALANCE_TOL: f64 = 0.25;

impl Partition {
    pub fn new(num_domains: usize, owner: Vec<usize>) -> Result<Self> {
        if num_domains == 0 {
            return Err(Error::invalid("num_domains must be positive"));
        }
        let mut seen = vec![false; num_domains];
        for &d in &owner {
            if d >= num_domains {
                return Err(Error::invalid(format!("owner id {d} out of range")));
            }
            seen[d] = true;
        }
        if let Some(d) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("domain {d} owns no DOF")));
        }
        Ok(Partition { num_domains, owner })
    }

    pub fn domain_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.num_domains];
        for &d in &self.owner {
            sizes[d] += 1;
        }
        sizes
    }

    pub fn max_size(&self) -> usize {
        self.domain_sizes().into_iter().max().unwrap_or(0)
    }

    pub fn is_balanced(&self, tol: f64) -> bool {
        let n = self.owner.len();
        let target = n.div_ceil(self.num_domains) as f64;
        self.max_size() as f64 <= target * (1.0 + tol)
    }

    pub fn save_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        for &d in &self.owner {
            writeln!(buf, "{d}")?;
        }
        crate::pipeline::atomic_write(path.as_ref(), &buf)
    }

    pub fn load_from(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path.as_ref())?;
        let mut owner = Vec::new();
        for (k, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            owner.push(
                t.parse()
                    .map_err(|_| Error::parse(k + 1, "bad domain id"))?,
            );
        }
        let num_domains = owner.iter().copied().max().map_or(0, |m| m + 1);
        Partition::new(num_domains, owner)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionStrategy {
    Grid,
    GreedyBfs,
}

pub fn partition_domains(
    sys: &SparseSystem,
    num_domains: usize,
    strategy: PartitionStrategy,
) -> Result<Partition> {
    if num_domains == 0 || num_domains > sys.n {
        return Err(Error::invalid(format!(
            "num_domains must be in 1..={}, got {num_domains}",
            sys.n
        )));
    }
    match strategy {
        PartitionStrategy::Grid => grid_partition(sys, num_domains),
        PartitionStrategy::GreedyBfs => bfs_partition(sys, num_domains),
    }
}

fn grid_partition(sys: &SparseSystem, num_domains: usize) -> Result<Partition> {
    let dims = sys
        .grid
        .as_ref()
        .ok_or_else(|| Error::invalid("grid partitioning requires a generated grid system"))?
        .clone();
    let nd = dims.len();
    // distribute prime factors of num_domains over axes, longest box edge first
    let mut counts = vec![1usize; nd];
    let mut primes = prime_factors(num_domains);
    primes.sort_unstable_by(|a, b| b.cmp(a));
    for p in primes {
        let ax = (0..nd)
            .max_by(|&a, &b| {
                let ra = dims[a] as f64 / counts[a] as f64;
                let rb = dims[b] as f64 / counts[b] as f64;
                ra.partial_cmp(&rb).unwrap()
            })
            .unwrap();
        counts[ax] *= p;
    }
    if counts.iter().zip(&dims).any(|(&c, &d)| c > d) {
        return Err(Error::invalid(format!(
            "cannot slice grid {dims:?} into {num_domains} boxes"
        )));
    }
    let box_of = |coord: usize, dim: usize, cnt: usize| -> usize {
        // inverse of the cut boundaries floor(b * dim / cnt)
        ((coord + 1) * cnt - 1) / dim
    };
    let n = sys.n;
    let mut owner = vec![0usize; n];
    for (i, o) in owner.iter_mut().enumerate() {
        let mut rem = i;
        let mut dom = 0usize;
        let mut mult = 1usize;
        for a in 0..nd {
            let coord = rem % dims[a];
            rem /= dims[a];
            dom += box_of(coord, dims[a], counts[a]) * mult;
            mult *= counts[a];
        }
        *o = dom;
    }
    Partition::new(num_domains, owner)
}

fn prime_factors(mut x: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= x {
        while x % p == 0 {
            out.push(p);
            x /= p;
        }
        p += 1;
    }
    if x > 1 {
        out.push(x);
    }
    out
}

fn bfs_partition(sys: &SparseSystem, num_domains: usize) -> Result<Partition> {
    let n = sys.n;
    let adj = sys.adjacency();
    let mut owner = vec![usize::MAX; n];
    let mut assigned = 0usize;
    for d in 0..num_domains {
        let remaining_domains = num_domains - d;
        let quota = (n - assigned).div_ceil(remaining_domains);
        let mut taken = 0usize;
        let mut queue = std::collections::VecDeque::new();
        while taken < quota {
            if queue.is_empty() {
                // next seed: lowest unassigned DOF (also bridges components)
                match owner.iter().position(|&o| o == usize::MAX) {
                    Some(seed) => queue.push_back(seed),
                    None => break,
                }
            }
            let v = queue.pop_front().unwrap();
            if owner[v] != usize::MAX {
                continue;
            }
            owner[v] = d;
            taken += 1;
            assigned += 1;
            for &u in &adj.idx[adj.ptr[v]..adj.ptr[v + 1]] {
                if owner[u] == usize::MAX {
                    queue.push_back(u);
                }
            }
        }
    }
    debug_assert!(owner.iter().all(|&o| o != usize::MAX));
    Partition::new(num_domains, owner)
}

/// Sparse symmetric matrix in lower-triangular CSR (row >= col), diagonal
/// included, local to one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    pub n: usize,
    pub ptr: Vec<usize>,
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseSym {
    pub fn nnz(&self) -> usize {
        self.idx.len()
    }

    /// Dense lower-triangular copy.
    pub fn to_dense_lower(&self) -> Mat {
        let mut m = Mat::zeros(self.n, self.n);
        for r in 0..self.n {
            for k in self.ptr[r]..self.ptr[r + 1] {
                m[(r, self.idx[k])] = self.val[k];
            }
        }
        m
    }

    pub fn multiply(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for r in 0..self.n {
            for k in self.ptr[r]..self.ptr[r + 1] {
                let c = self.idx[k];
                let v = self.val[k];
                y[r] += v * x[c];
                if c != r {
                    y[c] += v * x[r];
                }
            }
        }
    }
}

/// Rectangular sparse CSR block.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRect {
    pub rows: usize,
    pub cols: usize,
    pub ptr: Vec<usize>,
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseRect {
    pub fn nnz(&self) -> usize {
        self.idx.len()
    }
}

/// One domain's share of the problem after the interior/interface split.
#[derive(Debug, Clone)]
pub struct DomainProblem {
    pub domain_id: usize,
    /// Owned non-interface DOFs, ascending global index.
    pub interior: Vec<usize>,
    /// Interface DOFs this domain touches (owned or not), ascending global index.
    pub interface: Vec<usize>,
    /// Subset of `interface` owned by this domain.
    pub owned_interface: Vec<usize>,
    /// Interior-interior couplings with `shift` added on the diagonal.
    pub a_ii: SparseSym,
    /// Interior x interface couplings in local indices.
    pub a_ib: SparseRect,
    /// Ownership-weighted interface-interface entries, dense symmetric.
    pub a_bb_local: Mat,
    /// Rhs restricted to the interior, one vector per global rhs.
    pub f_i: Vec<Vec<f64>>,
    /// Ownership-weighted rhs on the interface, one vector per global rhs.
    pub f_b_local: Vec<Vec<f64>>,
    pub neighbor_ids: Vec<usize>,
}

impl DomainProblem {
    pub fn interior_nnz(&self) -> usize {
        self.a_ii.nnz()
    }
}

/// Split the system into per-domain problems. See the module docs for the
/// separator construction.
pub fn split_domain_dofs(sys: &SparseSystem, part: &Partition) -> Result<Vec<DomainProblem>> {
    if part.owner.len() != sys.n {
        return Err(Error::invalid("partition length does not match system"));
    }
    let n = sys.n;
    let adj = sys.adjacency();
    let owner = &part.owner;

    // separator: for each cross coupling keep the endpoint owned by the
    // lower-numbered domain
    let mut separator = vec![false; n];
    for a in 0..n {
        for &b in &adj.idx[adj.ptr[a]..adj.ptr[a + 1]] {
            if b > a && owner[a] != owner[b] {
                let s = if owner[a] < owner[b] { a } else { b };
                separator[s] = true;
            }
        }
    }

    // interface(d) = separator DOFs owned by d or coupled to a DOF owned by d
    let mut interface_sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); part.num_domains];
    for s in 0..n {
        if !separator[s] {
            continue;
        }
        interface_sets[owner[s]].insert(s);
        for &u in &adj.idx[adj.ptr[s]..adj.ptr[s + 1]] {
            interface_sets[owner[u]].insert(s);
        }
    }
    let interfaces: Vec<Vec<usize>> = interface_sets
        .into_iter()
        .map(|s| s.into_iter().collect())
        .collect();

    // per separator DOF: the sorted list of domains seeing it
    let mut seen_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (d, iface) in interfaces.iter().enumerate() {
        for &s in iface {
            seen_by[s].push(d);
        }
    }

    // local index maps
    let mut int_local = vec![usize::MAX; n];
    let mut ifc_local = vec![usize::MAX; n];
    let mut interiors: Vec<Vec<usize>> = vec![Vec::new(); part.num_domains];
    for i in 0..n {
        if !separator[i] {
            let d = owner[i];
            int_local[i] = interiors[d].len();
            interiors[d].push(i);
        }
    }

    let nrhs = sys.rhs.len();
    let mut domains: Vec<DomainProblem> = (0..part.num_domains)
        .map(|d| {
            let interface = interfaces[d].clone();
            let owned_interface = interface
                .iter()
                .copied()
                .filter(|&s| owner[s] == d)
                .collect();
            let bsz = interface.len();
            DomainProblem {
                domain_id: d,
                interior: interiors[d].clone(),
                interface,
                owned_interface,
                a_ii: SparseSym {
                    n: interiors[d].len(),
                    ptr: vec![0; interiors[d].len() + 1],
                    idx: vec![],
                    val: vec![],
                },
                a_ib: SparseRect {
                    rows: interiors[d].len(),
                    cols: bsz,
                    ptr: vec![0; interiors[d].len() + 1],
                    idx: vec![],
                    val: vec![],
                },
                a_bb_local: Mat::zeros(bsz, bsz),
                f_i: vec![Vec::new(); nrhs],
                f_b_local: vec![vec![0.0; bsz]; nrhs],
                neighbor_ids: Vec::new(),
            }
        })
        .collect();

    for d in 0..part.num_domains {
        let dom = &mut domains[d];
        for (li, &s) in dom.interface.iter().enumerate() {
            ifc_local[s] = li;
        }
        let mut ii_ptr = Vec::with_capacity(dom.interior.len() + 1);
        let mut ii_idx = Vec::new();
        let mut ii_val = Vec::new();
        let mut ib_ptr = Vec::with_capacity(dom.interior.len() + 1);
        let mut ib_idx = Vec::new();
        let mut ib_val = Vec::new();
        ii_ptr.push(0);
        ib_ptr.push(0);
        for &gi in &dom.interior {
            for k in adj.ptr[gi]..adj.ptr[gi + 1] {
                let gj = adj.idx[k];
                let v = adj.val[k];
                if separator[gj] {
                    debug_assert_ne!(ifc_local[gj], usize::MAX);
                    ib_idx.push(ifc_local[gj]);
                    ib_val.push(v);
                } else {
                    debug_assert_eq!(
                        owner[gj], d,
                        "interior DOF {gi} couples to foreign interior {gj}"
                    );
                    // local indices preserve global order, keep lower triangle
                    if gj <= gi {
                        ii_idx.push(int_local[gj]);
                        let diag_shift = if gj == gi { sys.shift } else { 0.0 };
                        ii_val.push(v + diag_shift);
                    }
                }
            }
            ii_ptr.push(ii_idx.len());
            ib_ptr.push(ib_idx.len());
        }
        dom.a_ii = SparseSym {
            n: dom.interior.len(),
            ptr: ii_ptr,
            idx: ii_idx,
            val: ii_val,
        };
        dom.a_ib = SparseRect {
            rows: dom.interior.len(),
            cols: dom.interface.len(),
            ptr: ib_ptr,
            idx: ib_idx,
            val: ib_val,
        };
        for r in 0..nrhs {
            dom.f_i[r] = dom.interior.iter().map(|&gi| sys.rhs[r][gi]).collect();
        }
        for &s in &dom.interface {
            ifc_local[s] = usize::MAX;
        }
    }

    // ownership-weighted interface-interface entries and rhs
    for &(gr, gc, v) in &sys.entries {
        if separator[gr] && separator[gc] {
            let ds = intersect_sorted(&seen_by[gr], &seen_by[gc]);
            debug_assert!(!ds.is_empty());
            let w = v / ds.len() as f64;
            for d in ds {
                let dom = &mut domains[d];
                let lr = dom.interface.binary_search(&gr).unwrap();
                let lc = dom.interface.binary_search(&gc).unwrap();
                dom.a_bb_local[(lr, lc)] += w;
                if lr != lc {
                    dom.a_bb_local[(lc, lr)] += w;
                }
            }
        }
    }
    for s in 0..n {
        if separator[s] && !seen_by[s].is_empty() {
            let w = 1.0 / seen_by[s].len() as f64;
            for &d in &seen_by[s] {
                let dom = &mut domains[d];
                let ls = dom.interface.binary_search(&s).unwrap();
                for r in 0..nrhs {
                    dom.f_b_local[r][ls] = sys.rhs[r][s] * w;
                }
            }
        }
    }

    // neighbors: domains sharing at least one interface DOF
    for s in 0..n {
        if separator[s] {
            for i in 0..seen_by[s].len() {
                for j in 0..seen_by[s].len() {
                    if i != j {
                        let (a, b) = (seen_by[s][i], seen_by[s][j]);
                        if !domains[a].neighbor_ids.contains(&b) {
                            domains[a].neighbor_ids.push(b);
                        }
                    }
                }
            }
        }
    }
    for dom in &mut domains {
        dom.neighbor_ids.sort_unstable();
    }

    Ok(domains)
}

fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_laplacian_is_tridiagonal() {
        let sys = generate_grid_problem(&[5], Stencil::Laplacian, 0).unwrap();
        assert_eq!(sys.n, 5);
        let mut diag = 0;
        let mut off = 0;
        for &(r, c, v) in &sys.entries {
            if r == c {
                assert_eq!(v, 2.0);
                diag += 1;
            } else {
                assert_eq!(r, c + 1);
                assert_eq!(v, -1.0);
                off += 1;
            }
        }
        assert_eq!((diag, off), (5, 4));
    }

    #[test]
    fn helmholtz_shifts_diagonal() {
        let sys = generate_grid_problem(&[5], Stencil::Helmholtz(1.0), 0).unwrap();
        for &(r, c, v) in &sys.entries {
            if r == c {
                assert_eq!(v, 1.0);
            }
        }
        assert_eq!(sys.n, 5);
    }

    #[test]
    fn grid_2d_has_five_point_stencil() {
        let sys = generate_grid_problem(&[4, 4], Stencil::Laplacian, 0).unwrap();
        assert_eq!(sys.n, 16);
        // node 5 = (row 1, col 1): diagonal 4, lattice neighbors 1, 4, 6, 9
        let adj = sys.adjacency();
        let row5: Vec<usize> = adj.idx[adj.ptr[5]..adj.ptr[6]].to_vec();
        assert_eq!(row5, vec![1, 4, 5, 6, 9]);
        assert!(sys
            .entries
            .iter()
            .any(|&(r, c, v)| r == 5 && c == 5 && v == 4.0));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(
            generate_grid_problem(&[0], Stencil::Laplacian, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            generate_grid_problem(&[5, 1], Stencil::Laplacian, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn matrix_market_round_trip() {
        let sys = generate_grid_problem(&[5], Stencil::Laplacian, 0).unwrap();
        let mut buf = Vec::new();
        sys.write_matrix_market(&mut buf).unwrap();
        let back = SparseSystem::read_matrix_market(&buf[..]).unwrap();
        assert_eq!(sys, back);
    }

    #[test]
    fn single_entry_file_parses() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n1 1 1\n1 1 2.0\n";
        let sys = SparseSystem::read_matrix_market(text.as_bytes()).unwrap();
        assert_eq!(sys.n, 1);
        assert_eq!(sys.entries, vec![(0, 0, 2.0)]);
    }

    #[test]
    fn mirrored_duplicate_is_parse_error() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n2 2 4\n1 1 2.0\n2 2 2.0\n2 1 -1.0\n1 2 -1.0\n";
        match SparseSystem::read_matrix_market(text.as_bytes()) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 6);
                assert!(msg.contains("duplicate"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn general_qualifier_rejected() {
        let text = "%%MatrixMarket matrix coordinate real general\n1 1 1\n1 1 2.0\n";
        match SparseSystem::read_matrix_market(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bfs_partition_of_chain_is_contiguous_balanced() {
        let sys = generate_grid_problem(&[5], Stencil::Laplacian, 0).unwrap();
        let part = partition_domains(&sys, 2, PartitionStrategy::GreedyBfs).unwrap();
        // oracle: enumerate every contiguous balanced 2-split of the chain
        let mut acceptable: Vec<Vec<usize>> = Vec::new();
        for cut in 1..5usize {
            if cut.max(5 - cut) <= 3 {
                let fwd: Vec<usize> = (0..5).map(|i| usize::from(i >= cut)).collect();
                let mirror: Vec<usize> = fwd.iter().map(|&d| 1 - d).collect();
                acceptable.push(fwd);
                acceptable.push(mirror);
            }
        }
        assert!(acceptable.contains(&part.owner), "owner = {:?}", part.owner);
    }

    #[test]
    fn grid_partition_makes_quadrants() {
        let sys = generate_grid_problem(&[4, 4], Stencil::Laplacian, 0).unwrap();
        let part = partition_domains(&sys, 4, PartitionStrategy::Grid).unwrap();
        let expect = |r: usize, c: usize| (c / 2) + 2 * (r / 2);
        for i in 0..16 {
            assert_eq!(part.owner[i], expect(i / 4, i % 4), "dof {i}");
        }
    }

    #[test]
    fn one_domain_per_dof_is_identity() {
        let sys = generate_grid_problem(&[6], Stencil::Laplacian, 0).unwrap();
        let part = partition_domains(&sys, 6, PartitionStrategy::GreedyBfs).unwrap();
        assert_eq!(part.owner, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn too_many_domains_rejected() {
        let sys = generate_grid_problem(&[5], Stencil::Laplacian, 0).unwrap();
        assert!(partition_domains(&sys, 6, PartitionStrategy::GreedyBfs).is_err());
    }

    #[test]
    fn chain_split_matches_worked_values() {
        let sys = generate_grid_problem(&[5], Stencil::Laplacian, 0).unwrap();
        let part = Partition::new(2, vec![0, 0, 0, 1, 1]).unwrap();
        let doms = split_domain_dofs(&sys, &part).unwrap();
        // separator is DOF 2, the lower-owner endpoint of the cross edge 2-3
        assert_eq!(doms[0].interior, vec![0, 1]);
        assert_eq!(doms[0].interface, vec![2]);
        assert_eq!(doms[0].owned_interface, vec![2]);
        assert_eq!(doms[1].interior, vec![3, 4]);
        assert_eq!(doms[1].interface, vec![2]);
        assert!(doms[1].owned_interface.is_empty());
        // the shared diagonal entry 2 splits 1 + 1
        assert_eq!(doms[0].a_bb_local[(0, 0)], 1.0);
        assert_eq!(doms[1].a_bb_local[(0, 0)], 1.0);
        // rhs entry splits the same way
        assert_eq!(doms[0].f_b_local[0][0], 0.5);
        assert_eq!(doms[1].f_b_local[0][0], 0.5);
        assert_eq!(doms[0].neighbor_ids, vec![1]);
        assert_eq!(doms[1].neighbor_ids, vec![0]);
    }

    #[test]
    fn quadrant_split_satisfies_adjacency_scan_oracle() {
        let sys = generate_grid_problem(&[4, 4], Stencil::Laplacian, 0).unwrap();
        let part = partition_domains(&sys, 4, PartitionStrategy::Grid).unwrap();
        let doms = split_domain_dofs(&sys, &part).unwrap();

        // oracle: recompute the separator by direct adjacency scan
        let adj = sys.adjacency();
        let mut sep = [false; 16];
        for a in 0..16 {
            for &b in &adj.idx[adj.ptr[a]..adj.ptr[a + 1]] {
                if part.owner[a] != part.owner[b] {
                    let s = if part.owner[a] < part.owner[b] { a } else { b };
                    sep[s] = true;
                }
            }
        }
        for d in 0..4 {
            let expect_interior: Vec<usize> = (0..16)
                .filter(|&i| part.owner[i] == d && !sep[i])
                .collect();
            assert_eq!(doms[d].interior, expect_interior, "domain {d}");
            for &s in &doms[d].interface {
                assert!(sep[s]);
            }
        }
        scatter_sum_matches(&sys, &doms);
    }

    #[test]
    fn single_domain_has_empty_interface() {
        let sys = generate_grid_problem(&[4, 4], Stencil::Laplacian, 0).unwrap();
        let part = Partition::new(1, vec![0; 16]).unwrap();
        let doms = split_domain_dofs(&sys, &part).unwrap();
        assert!(doms[0].interface.is_empty());
        assert_eq!(doms[0].interior.len(), 16);
    }

    fn scatter_sum_matches(sys: &SparseSystem, doms: &[DomainProblem]) {
        use std::collections::HashMap;
        let mut acc: HashMap<(usize, usize), f64> = HashMap::new();
        for dom in doms {
            let b = dom.interface.len();
            for lr in 0..b {
                for lc in 0..=lr {
                    let v = dom.a_bb_local[(lr, lc)];
                    if v != 0.0 {
                        let (gr, gc) = (dom.interface[lr], dom.interface[lc]);
                        let key = if gr >= gc { (gr, gc) } else { (gc, gr) };
                        *acc.entry(key).or_insert(0.0) += v;
                    }
                }
            }
        }
        for &(r, c, v) in &sys.entries {
            if let Some(&s) = acc.get(&(r, c)) {
                assert!(
                    (s - v).abs() <= 1e-14 * v.abs().max(1.0),
                    "entry ({r},{c}): {s} vs {v}"
                );
                acc.remove(&(r, c));
            }
        }
        for (k, v) in acc {
            assert!(v.abs() <= 1e-14, "spurious scattered entry {k:?} = {v}");
        }
    }

    #[test]
    fn scatter_invariant_on_random_partitions() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let sys = generate_grid_problem(&[6, 5], Stencil::Laplacian, 0).unwrap();
            let d = rng.random_range(2..=6);
            let owner: Vec<usize> = (0..30)
                .map(|i| if i < d { i } else { rng.random_range(0..d) })
                .collect();
            let part = Partition::new(d, owner).unwrap();
            let doms = split_domain_dofs(&sys, &part).unwrap();
            scatter_sum_matches(&sys, &doms);
        }
    }

    #[test]
    fn partition_file_round_trip() {
        let part = Partition::new(3, vec![0, 1, 2, 1, 0]).unwrap();
        let dir = std::env::temp_dir().join("d3m_part_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("part.txt");
        part.save_to(&path).unwrap();
        let back = Partition::load_from(&path).unwrap();
        assert_eq!(part, back);
    }
}
