//! The reduced block-sparse interface matrix, its symbolic factorization,
//! the dense block kernels, and the sequential block LDL^T used as the
//! reference for the parallel executor.
//!
//! Block rows correspond to domains owning at least one interface DOF, in
//! domain order; interface DOFs appear in their owner's row. Elimination
//! runs in block-row order with pivoting confined to diagonal blocks, so the
//! symbolic structure is static.

use crate::dense::{bk_factorize, gemm_minus_in_place, LdltFactor, Mat, PivotBlocks};
use crate::error::{Error, Result};
use crate::primal::DtnContribution;
use crate::problem::{DomainProblem, Partition};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Index layout of the reduced matrix: one block row per domain owning
/// interface DOFs.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    /// domain id per block row, ascending
    pub row_domain: Vec<usize>,
    /// block row of a domain, if it owns interface DOFs
    pub row_of_domain: Vec<Option<usize>>,
    pub sizes: Vec<usize>,
    /// per block row: owned interface DOFs, ascending global index
    pub dofs: Vec<Vec<usize>>,
    /// global DOF -> (block row, offset)
    pub pos: HashMap<usize, (usize, usize)>,
}

impl BlockLayout {
    pub fn build(domains: &[DomainProblem], part: &Partition) -> Self {
        let mut row_domain = Vec::new();
        let mut row_of_domain = vec![None; part.num_domains];
        let mut sizes = Vec::new();
        let mut dofs = Vec::new();
        let mut pos = HashMap::new();
        for dom in domains {
            if dom.owned_interface.is_empty() {
                continue;
            }
            let row = row_domain.len();
            row_of_domain[dom.domain_id] = Some(row);
            row_domain.push(dom.domain_id);
            sizes.push(dom.owned_interface.len());
            for (off, &g) in dom.owned_interface.iter().enumerate() {
                pos.insert(g, (row, off));
            }
            dofs.push(dom.owned_interface.clone());
        }
        BlockLayout {
            row_domain,
            row_of_domain,
            sizes,
            dofs,
            pos,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.sizes.len()
    }

    pub fn total_dofs(&self) -> usize {
        self.sizes.iter().sum()
    }
}

/// Assembled block-sparse reduced matrix.
#[derive(Debug, Clone)]
pub struct BlockMatrix {
    pub layout: BlockLayout,
    /// lower blocks, key (i, j) with i >= j; diagonal blocks stored full
    pub blocks: BTreeMap<(usize, usize), Mat>,
    /// per block row: size x nrhs
    pub rhs_blocks: Vec<Mat>,
    pub nrhs: usize,
}

/// Scatter-add all boundary contributions into the block layout.
pub fn assemble_dual_matrix(
    contribs: &[DtnContribution],
    layout: &BlockLayout,
) -> Result<BlockMatrix> {
    let nrhs = contribs.first().map_or(0, |c| c.g_local.len());
    let mut blocks: BTreeMap<(usize, usize), Mat> = BTreeMap::new();
    let mut rhs_blocks: Vec<Mat> = layout.sizes.iter().map(|&s| Mat::zeros(s, nrhs)).collect();

    for c in contribs {
        if c.g_local.len() != nrhs {
            return Err(Error::Assembly(format!(
                "domain {} carries {} rhs segments, expected {nrhs}",
                c.domain_id,
                c.g_local.len()
            )));
        }
        let b = c.interface_map.len();
        if c.s_local.rows != b || c.s_local.cols != b {
            return Err(Error::Assembly(format!(
                "domain {} contribution is {}x{} but maps {b} DOFs",
                c.domain_id, c.s_local.rows, c.s_local.cols
            )));
        }
        let mapped: Vec<(usize, usize)> = c
            .interface_map
            .iter()
            .map(|g| {
                layout.pos.get(g).copied().ok_or_else(|| {
                    Error::Assembly(format!(
                        "domain {} references unknown interface DOF {g}",
                        c.domain_id
                    ))
                })
            })
            .collect::<Result<_>>()?;
        for li in 0..b {
            let (ri, oi) = mapped[li];
            for lj in 0..=li {
                let (rj, oj) = mapped[lj];
                let v = c.s_local[(li, lj)];
                let ((bi, bj), (ei, ej)) = if ri >= rj {
                    ((ri, rj), (oi, oj))
                } else {
                    ((rj, ri), (oj, oi))
                };
                let block = blocks
                    .entry((bi, bj))
                    .or_insert_with(|| Mat::zeros(layout.sizes[bi], layout.sizes[bj]));
                block[(ei, ej)] += v;
                if bi == bj && ei != ej {
                    block[(ej, ei)] += v;
                }
            }
            for (r, g) in c.g_local.iter().enumerate() {
                rhs_blocks[ri][(oi, r)] += g[li];
            }
        }
    }
    Ok(BlockMatrix {
        layout: layout.clone(),
        blocks,
        rhs_blocks,
        nrhs,
    })
}

impl BlockMatrix {
    pub fn pattern(&self) -> BTreeSet<(usize, usize)> {
        self.blocks.keys().copied().collect()
    }

    /// Dense assembled copy for oracles and debugging.
    pub fn to_dense(&self) -> Mat {
        let n = self.layout.total_dofs();
        let offsets = self.row_offsets();
        let mut m = Mat::zeros(n, n);
        for (&(i, j), b) in &self.blocks {
            for r in 0..b.rows {
                for c in 0..b.cols {
                    let (gr, gc) = (offsets[i] + r, offsets[j] + c);
                    m[(gr, gc)] = b[(r, c)];
                    if i != j {
                        m[(gc, gr)] = b[(r, c)];
                    }
                }
            }
        }
        m
    }

    pub fn row_offsets(&self) -> Vec<usize> {
        let mut off = vec![0usize; self.layout.num_rows()];
        for i in 1..off.len() {
            off[i] = off[i - 1] + self.layout.sizes[i - 1];
        }
        off
    }

    /// JSON debug dump with block sizes and row-major dense arrays.
    pub fn debug_dump(&self) -> String {
        #[derive(Serialize, Deserialize)]
        struct Block {
            row: usize,
            col: usize,
            data: Vec<f64>,
        }
        #[derive(Serialize, Deserialize)]
        struct Dump {
            block_sizes: Vec<usize>,
            blocks: Vec<Block>,
            rhs: Vec<Vec<f64>>,
        }
        let dump = Dump {
            block_sizes: self.layout.sizes.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|(&(i, j), m)| Block {
                    row: i,
                    col: j,
                    data: m.data.clone(),
                })
                .collect(),
            rhs: self.rhs_blocks.iter().map(|m| m.data.clone()).collect(),
        };
        serde_json::to_string_pretty(&dump).expect("dump serialization cannot fail")
    }
}

/// Fill pattern and dependency structure of the block elimination.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicFactorization {
    pub num_rows: usize,
    /// full lower pattern including the diagonal and fill
    pub pattern: BTreeSet<(usize, usize)>,
    /// strictly-lower rows per column, ascending
    pub col_rows: Vec<Vec<usize>>,
    /// strictly-lower columns per row, ascending
    pub row_cols: Vec<Vec<usize>>,
    /// block elimination tree: parent(k) = min { i > k : (i, k) in pattern }
    pub parent: Vec<Option<usize>>,
    /// blocks that are pure fill (absent from the original pattern)
    pub fill_blocks: BTreeSet<(usize, usize)>,
}

/// Closure of the pattern under the block elimination fill rule: if (i, k)
/// and (j, k) are present with i >= j > k then (i, j) is present.
pub fn symbolic_block_factorize(
    pattern: &BTreeSet<(usize, usize)>,
) -> Result<SymbolicFactorization> {
    let num_rows = pattern.iter().map(|&(i, _)| i + 1).max().unwrap_or(0);
    for &(i, j) in pattern {
        if j > i {
            return Err(Error::invalid(format!(
                "pattern entry ({i}, {j}) above the diagonal"
            )));
        }
    }
    for k in 0..num_rows {
        if !pattern.contains(&(k, k)) {
            return Err(Error::invalid(format!("missing diagonal block ({k}, {k})")));
        }
    }

    let mut col_rows: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); num_rows];
    for &(i, j) in pattern {
        if i > j {
            col_rows[j].insert(i);
        }
    }
    for k in 0..num_rows {
        let rows: Vec<usize> = col_rows[k].iter().copied().collect();
        for (a, &j) in rows.iter().enumerate() {
            for &i in &rows[a + 1..] {
                col_rows[j].insert(i);
            }
        }
    }

    let mut full: BTreeSet<(usize, usize)> = (0..num_rows).map(|k| (k, k)).collect();
    let mut row_cols: Vec<Vec<usize>> = vec![Vec::new(); num_rows];
    for (j, rows) in col_rows.iter().enumerate() {
        for &i in rows {
            full.insert((i, j));
            row_cols[i].push(j);
        }
    }
    for cols in &mut row_cols {
        cols.sort_unstable();
    }
    let parent: Vec<Option<usize>> = col_rows
        .iter()
        .map(|rows| rows.iter().next().copied())
        .collect();
    let fill_blocks = full.difference(pattern).copied().collect();

    Ok(SymbolicFactorization {
        num_rows,
        pattern: full,
        col_rows: col_rows
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect(),
        row_cols,
        parent,
        fill_blocks,
    })
}

impl SymbolicFactorization {
    /// Source columns k whose trisolve products update block (i, j).
    pub fn update_sources(&self, i: usize, j: usize) -> Vec<usize> {
        let (a, b) = (&self.row_cols[i], &self.row_cols[j]);
        let mut out = Vec::new();
        let (mut x, mut y) = (0, 0);
        while x < a.len() && y < b.len() {
            match a[x].cmp(&b[y]) {
                std::cmp::Ordering::Less => x += 1,
                std::cmp::Ordering::Greater => y += 1,
                std::cmp::Ordering::Equal => {
                    out.push(a[x]);
                    x += 1;
                    y += 1;
                }
            }
        }
        out
    }

    pub fn num_trisolves(&self) -> usize {
        self.col_rows.iter().map(|r| r.len()).sum()
    }

    pub fn num_updates(&self) -> usize {
        self.col_rows
            .iter()
            .map(|r| r.len() * (r.len() + 1) / 2)
            .sum()
    }
}

/// Factor one diagonal block.
pub fn kernel_factorize_block(kii: &Mat, block: usize) -> Result<LdltFactor> {
    if kii.rows == 0 {
        return Ok(LdltFactor::empty());
    }
    bk_factorize(kii).map_err(|s| Error::SingularBlock {
        block,
        pivot: s.index,
    })
}

/// L_ik = K_ik P^T L_kk^-T D_kk^-1, so that L_ik D_kk (P^T L_kk)^T = K_ik.
pub fn kernel_trisolve_block(kik: &Mat, fkk: &LdltFactor) -> Mat {
    let mut l = kik.clone();
    fkk.solve_rows_in_place(&mut l);
    l
}

/// K_ij -= L_ik D_kk L_jk^T; writes only the lower triangle when `i == j`.
pub fn kernel_update_block(
    kij: &mut Mat,
    lik: &Mat,
    dkk: &PivotBlocks,
    ljk: &Mat,
    lower_only: bool,
) {
    if kij.rows == 0 || kij.cols == 0 || lik.cols == 0 {
        return;
    }
    let mut m = ljk.transpose();
    dkk.mul_rows(&mut m);
    gemm_minus_in_place(kij, lik, &m, lower_only);
}

/// Numeric factor of the reduced matrix.
#[derive(Debug, Clone)]
pub struct BlockFactor {
    pub layout: BlockLayout,
    pub symb: SymbolicFactorization,
    pub diag: Vec<LdltFactor>,
    /// effective off-diagonal factor blocks, key (i, j) with i > j
    pub off: BTreeMap<(usize, usize), Mat>,
}

/// Right-looking sequential block LDL^T in block-row order; the canonical
/// kernel order is the bit-level reference for the parallel executor.
pub fn sequential_block_ldlt(
    k: &BlockMatrix,
    symb: &SymbolicFactorization,
) -> Result<BlockFactor> {
    let d = symb.num_rows;
    if d != k.layout.num_rows() {
        return Err(Error::invalid(
            "symbolic factorization does not match the block layout",
        ));
    }
    let mut work: BTreeMap<(usize, usize), Mat> = k.blocks.clone();
    for &(i, j) in &symb.pattern {
        work.entry((i, j))
            .or_insert_with(|| Mat::zeros(k.layout.sizes[i], k.layout.sizes[j]));
    }
    let mut diag: Vec<LdltFactor> = Vec::with_capacity(d);
    let mut off: BTreeMap<(usize, usize), Mat> = BTreeMap::new();

    for kk in 0..d {
        let kkk = work.remove(&(kk, kk)).expect("diagonal block exists");
        let f = kernel_factorize_block(&kkk, kk)?;
        for &i in &symb.col_rows[kk] {
            let kik = work.remove(&(i, kk)).expect("pattern block exists");
            let lik = kernel_trisolve_block(&kik, &f);
            off.insert((i, kk), lik);
        }
        let rows = &symb.col_rows[kk];
        for (a, &j) in rows.iter().enumerate() {
            for &i in &rows[a..] {
                let lik = &off[&(i, kk)];
                let ljk = &off[&(j, kk)];
                let dest = work.get_mut(&(i, j)).expect("destination block exists");
                kernel_update_block(dest, lik, &f.piv, ljk, i == j);
            }
        }
        diag.push(f);
    }

    Ok(BlockFactor {
        layout: k.layout.clone(),
        symb: symb.clone(),
        diag,
        off,
    })
}

impl BlockFactor {
    /// Solve using forward block substitution, pivot solves, and backward
    /// substitution. Right-hand sides enter per block row as size x nrhs and
    /// leave the same way.
    pub fn block_solve(&self, rhs_blocks: &[Mat]) -> Result<Vec<Mat>> {
        let d = self.symb.num_rows;
        if rhs_blocks.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "{} rhs blocks for {d} block rows",
                rhs_blocks.len()
            )));
        }
        for r in 0..d {
            if rhs_blocks[r].rows != self.layout.sizes[r] {
                return Err(Error::DimensionMismatch(format!(
                    "rhs block {r} has {} rows, expected {}",
                    rhs_blocks[r].rows, self.layout.sizes[r]
                )));
            }
        }
        // one rhs per row internally
        let mut seg: Vec<Mat> = rhs_blocks.iter().map(|m| m.transpose()).collect();
        for r in 0..d {
            let cols: Vec<usize> = self.symb.row_cols[r].clone();
            for j in cols {
                let l = &self.off[&(r, j)];
                let (a, b) = split_two(&mut seg, j, r);
                gemm_minus_a_bt(b, a, l);
            }
            half_forward_rows(&self.diag[r], &mut seg[r]);
        }
        for r in 0..d {
            self.diag[r].piv.solve_cols(&mut seg[r]);
        }
        for r in (0..d).rev() {
            let rows: Vec<usize> = self.symb.col_rows[r].clone();
            for i in rows {
                let l = &self.off[&(i, r)];
                let (a, b) = split_two(&mut seg, i, r);
                gemm_minus_in_place(b, a, l, false);
            }
            half_backward_rows(&self.diag[r], &mut seg[r]);
        }
        Ok(seg.into_iter().map(|m| m.transpose()).collect())
    }
}

/// Disjoint (&, &mut) references into a slice at indices a != b.
fn split_two<T>(v: &mut [T], a: usize, b: usize) -> (&T, &mut T) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = v.split_at_mut(b);
        (&lo[a], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(a);
        (&hi[0], &mut lo[b])
    }
}

/// C -= A B^T with row dot products; small solve-stage helper.
pub fn gemm_minus_a_bt(c: &mut Mat, a: &Mat, b: &Mat) {
    assert_eq!(c.rows, a.rows);
    assert_eq!(c.cols, b.rows);
    assert_eq!(a.cols, b.cols);
    for r in 0..c.rows {
        let arow = a.row(r);
        for i in 0..b.rows {
            let brow = b.row(i);
            let mut s = 0.0;
            for t in 0..a.cols {
                s += arow[t] * brow[t];
            }
            c[(r, i)] -= s;
        }
    }
}

/// row <- row P^T L^-T, the diagonal-block half of a forward substitution
/// for row-layout right-hand sides.
pub fn half_forward_rows(f: &LdltFactor, x: &mut Mat) {
    assert_eq!(x.cols, f.n);
    let n = f.n;
    if n == 0 {
        return;
    }
    let mut buf = vec![0.0; n];
    for r in 0..x.rows {
        let row = x.row_mut(r);
        for i in 0..n {
            buf[i] = row[f.perm[i]];
        }
        row.copy_from_slice(&buf);
        for i in 0..n {
            let li = f.lower.row(i);
            let mut s = row[i];
            for j in 0..i {
                s -= li[j] * row[j];
            }
            row[i] = s;
        }
    }
}

/// row <- row L^-1 P, the diagonal-block half of a backward substitution.
pub fn half_backward_rows(f: &LdltFactor, x: &mut Mat) {
    assert_eq!(x.cols, f.n);
    let n = f.n;
    if n == 0 {
        return;
    }
    let mut buf = vec![0.0; n];
    for r in 0..x.rows {
        let row = x.row_mut(r);
        for i in (0..n).rev() {
            let mut s = row[i];
            for j in i + 1..n {
                s -= f.lower[(j, i)] * row[j];
            }
            row[i] = s;
        }
        for i in 0..n {
            buf[f.perm[i]] = row[i];
        }
        row.copy_from_slice(&buf);
    }
}
