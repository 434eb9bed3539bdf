//! Dense row-major matrices and the symmetric-indefinite kernels.
//!
//! The factorization is an unblocked Bunch-Kaufman LDL^T (lower storage,
//! partial pivoting) producing a unit-lower factor, a block-diagonal pivot
//! sequence of 1x1 and 2x2 blocks, and the pivoting permutation. Solves and
//! the right-looking update kernel are laid out so the innermost loops run
//! over contiguous rows.

use serde::{Deserialize, Serialize};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    #[inline(always)]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline(always)]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Copy the strict lower triangle onto the upper, making the matrix
    /// symmetric from its lower half.
    pub fn mirror_lower(&mut self) {
        assert_eq!(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..i {
                let v = self.data[i * self.cols + j];
                self.data[j * self.cols + i] = v;
            }
        }
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn byte_len(&self) -> u64 {
        (self.data.len() * std::mem::size_of::<f64>()) as u64
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline(always)]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    #[inline(always)]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Block-diagonal pivot sequence. `sub[i] != 0` marks a 2x2 pivot spanning
/// rows i and i+1 with off-diagonal value `sub[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotBlocks {
    pub d: Vec<f64>,
    pub sub: Vec<f64>,
}

impl PivotBlocks {
    pub fn identity(n: usize) -> Self {
        PivotBlocks {
            d: vec![1.0; n],
            sub: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Count of 2x2 pivot blocks.
    pub fn num_2x2(&self) -> usize {
        self.sub.iter().filter(|s| **s != 0.0).count()
    }

    /// Apply D^-1 in place to a vector indexed like the factor rows.
    pub fn solve_vec(&self, x: &mut [f64]) {
        let n = self.d.len();
        let mut i = 0;
        while i < n {
            if self.sub[i] != 0.0 {
                let (d11, d21, d22) = (self.d[i], self.sub[i], self.d[i + 1]);
                let det = d11 * d22 - d21 * d21;
                let (x1, x2) = (x[i], x[i + 1]);
                x[i] = (d22 * x1 - d21 * x2) / det;
                x[i + 1] = (-d21 * x1 + d11 * x2) / det;
                i += 2;
            } else {
                x[i] /= self.d[i];
                i += 1;
            }
        }
    }

    /// Multiply the pivot block-diagonal onto a (n x c) matrix from the left,
    /// in place: rows of `m` mix within each 2x2 pivot.
    pub fn mul_rows(&self, m: &mut Mat) {
        assert_eq!(m.rows, self.d.len());
        let c = m.cols;
        let mut i = 0;
        while i < self.d.len() {
            if self.sub[i] != 0.0 {
                let (d11, d21, d22) = (self.d[i], self.sub[i], self.d[i + 1]);
                for j in 0..c {
                    let a = m.data[i * c + j];
                    let b = m.data[(i + 1) * c + j];
                    m.data[i * c + j] = d11 * a + d21 * b;
                    m.data[(i + 1) * c + j] = d21 * a + d22 * b;
                }
                i += 2;
            } else {
                let d = self.d[i];
                for j in 0..c {
                    m.data[i * c + j] *= d;
                }
                i += 1;
            }
        }
    }

    /// Apply D^-1 from the right to a (r x n) matrix in place: columns mix
    /// within each 2x2 pivot. D is symmetric so this is (D^-1 M^T)^T.
    pub fn solve_cols(&self, m: &mut Mat) {
        assert_eq!(m.cols, self.d.len());
        let c = m.cols;
        let mut j = 0;
        while j < self.d.len() {
            if self.sub[j] != 0.0 {
                let (d11, d21, d22) = (self.d[j], self.sub[j], self.d[j + 1]);
                let det = d11 * d22 - d21 * d21;
                for r in 0..m.rows {
                    let a = m.data[r * c + j];
                    let b = m.data[r * c + j + 1];
                    m.data[r * c + j] = (d22 * a - d21 * b) / det;
                    m.data[r * c + j + 1] = (-d21 * a + d11 * b) / det;
                }
                j += 2;
            } else {
                let d = self.d[j];
                for r in 0..m.rows {
                    m.data[r * c + j] /= d;
                }
                j += 1;
            }
        }
    }
}

/// LDL^T factorization with Bunch-Kaufman pivoting: P A P^T = L D L^T.
/// `perm[i]` is the original index sitting at permuted position i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdltFactor {
    pub n: usize,
    /// Unit lower triangular factor; strict lower part is meaningful.
    pub lower: Mat,
    pub piv: PivotBlocks,
    pub perm: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingularPivot {
    pub index: usize,
}

const BK_ALPHA: f64 = 0.6403882032022076; // (1 + sqrt(17)) / 8

/// Factor a symmetric matrix given by its lower triangle (upper entries are
/// ignored). Returns the pivot index on exact singularity.
pub fn bk_factorize(a: &Mat) -> Result<LdltFactor, SingularPivot> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut w = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut d = vec![0.0; n];
    let mut sub = vec![0.0; n];

    let mut k = 0;
    while k < n {
        let absakk = w[(k, k)].abs();
        let mut imax = k;
        let mut colmax = 0.0f64;
        for i in k + 1..n {
            let v = w[(i, k)].abs();
            if v > colmax {
                colmax = v;
                imax = i;
            }
        }
        if absakk.max(colmax) == 0.0 {
            return Err(SingularPivot { index: k });
        }

        let mut kstep = 1;
        let mut kp = k;
        if absakk < BK_ALPHA * colmax {
            // rowmax over row imax restricted to k..n excluding imax itself
            let mut rowmax = 0.0f64;
            for j in k..imax {
                rowmax = rowmax.max(w[(imax, j)].abs());
            }
            for i in imax + 1..n {
                rowmax = rowmax.max(w[(i, imax)].abs());
            }
            if absakk >= BK_ALPHA * colmax * (colmax / rowmax) {
                kp = k;
            } else if w[(imax, imax)].abs() >= BK_ALPHA * rowmax {
                kp = imax;
            } else {
                kstep = 2;
                kp = imax;
            }
        }

        let kk = k + kstep - 1;
        if kp != kk {
            sym_swap_lower(&mut w, kk, kp);
            perm.swap(kk, kp);
        }

        if kstep == 1 {
            let dk = w[(k, k)];
            if dk == 0.0 {
                return Err(SingularPivot { index: k });
            }
            let r1 = 1.0 / dk;
            // trailing update, row-wise over the lower triangle; stage the
            // pivot column so the inner loop reads contiguously
            let col: Vec<f64> = (k + 1..n).map(|j| w[(j, k)]).collect();
            for i in k + 1..n {
                let lik = w[(i, k)];
                if lik != 0.0 {
                    let s = lik * r1;
                    let c = w.cols;
                    let wi = &mut w.data[i * c..i * c + i + 1];
                    for j in k + 1..=i {
                        wi[j] -= s * col[j - k - 1];
                    }
                }
            }
            for i in k + 1..n {
                w[(i, k)] *= r1;
            }
            d[k] = dk;
        } else {
            let d11 = w[(k, k)];
            let d21 = w[(k + 1, k)];
            let d22 = w[(k + 1, k + 1)];
            let det = d11 * d22 - d21 * d21;
            if det == 0.0 {
                return Err(SingularPivot { index: k });
            }
            // multipliers for rows below the 2x2 pivot
            let mut l1 = vec![0.0; n];
            let mut l2 = vec![0.0; n];
            for i in k + 2..n {
                let a1 = w[(i, k)];
                let a2 = w[(i, k + 1)];
                l1[i] = (a1 * d22 - a2 * d21) / det;
                l2[i] = (-a1 * d21 + a2 * d11) / det;
            }
            for i in k + 2..n {
                let (li1, li2) = (l1[i], l2[i]);
                if li1 != 0.0 || li2 != 0.0 {
                    for j in k + 2..=i {
                        let v = li1 * w[(j, k)] + li2 * w[(j, k + 1)];
                        w[(i, j)] -= v;
                    }
                }
            }
            for i in k + 2..n {
                w[(i, k)] = l1[i];
                w[(i, k + 1)] = l2[i];
            }
            w[(k + 1, k)] = 0.0;
            d[k] = d11;
            d[k + 1] = d22;
            sub[k] = d21;
        }
        k += kstep;
    }

    // zero the pivot columns' upper remnants so `lower` is clean
    for i in 0..n {
        for j in i..n {
            if j > i {
                w[(i, j)] = 0.0;
            }
        }
        w[(i, i)] = 1.0;
    }

    Ok(LdltFactor {
        n,
        lower: w,
        piv: PivotBlocks { d, sub },
        perm,
    })
}

/// Symmetric interchange of rows/columns r and p (r < p assumed not required)
/// touching only the lower triangle.
fn sym_swap_lower(a: &mut Mat, r: usize, p: usize) {
    if r == p {
        return;
    }
    let (r, p) = if r < p { (r, p) } else { (p, r) };
    for j in 0..r {
        let t = a[(r, j)];
        a[(r, j)] = a[(p, j)];
        a[(p, j)] = t;
    }
    for i in p + 1..a.rows {
        let t = a[(i, r)];
        a[(i, r)] = a[(i, p)];
        a[(i, p)] = t;
    }
    for i in r + 1..p {
        let t = a[(i, r)];
        a[(i, r)] = a[(p, i)];
        a[(p, i)] = t;
    }
    let t = a[(r, r)];
    a[(r, r)] = a[(p, p)];
    a[(p, p)] = t;
}

impl LdltFactor {
    pub fn empty() -> Self {
        LdltFactor {
            n: 0,
            lower: Mat::zeros(0, 0),
            piv: PivotBlocks { d: vec![], sub: vec![] },
            perm: vec![],
        }
    }

    /// Solve A x = b for a single right-hand side.
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut x: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        // forward: L y = Pb
        for i in 0..n {
            let row = self.lower.row(i);
            let mut s = x[i];
            for j in 0..i {
                s -= row[j] * x[j];
            }
            x[i] = s;
        }
        self.piv.solve_vec(&mut x);
        // backward: L^T z = y
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lower[(j, i)] * x[j];
            }
            x[i] = s;
        }
        let mut out = vec![0.0; n];
        for i in 0..n {
            out[self.perm[i]] = x[i];
        }
        out
    }

    /// Solve X A = B where B is given with one right-hand side per row of a
    /// (r x n) matrix, in place. Used by the triangular-solve kernel: each row
    /// r of the result satisfies row_r A = b_r.
    pub fn solve_rows_in_place(&self, x: &mut Mat) {
        assert_eq!(x.cols, self.n);
        let n = self.n;
        if n == 0 || x.rows == 0 {
            return;
        }
        // column permutation: X <- X P^T (apply perm per row)
        let mut buf = vec![0.0; n];
        for r in 0..x.rows {
            let row = x.row_mut(r);
            for i in 0..n {
                buf[i] = row[self.perm[i]];
            }
            row.copy_from_slice(&buf);
        }
        // right-solve against L^T: for each row b: solve y L^T = b, i.e.
        // forward substitution over columns using L's rows.
        for r in 0..x.rows {
            for i in 0..n {
                let li = self.lower.row(i);
                let row = x.row_mut(r);
                let mut s = row[i];
                for j in 0..i {
                    s -= li[j] * row[j];
                }
                row[i] = s;
            }
        }
        // right-multiply by D^-1
        self.piv.solve_cols(x);
    }

    /// Reconstruct P^T (L D L^T) P for testing.
    pub fn reconstruct(&self) -> Mat {
        let n = self.n;
        // compute L * D * L^T directly (small n, test-only)
        let mut dlt = self.lower.transpose();
        self.piv.mul_rows(&mut dlt);
        let mut prod = Mat::zeros(n, n);
        for i in 0..n {
            for k in 0..n {
                let a = self.lower[(i, k)];
                if a != 0.0 {
                    for j in 0..n {
                        prod.data[i * n + j] += a * dlt.data[k * n + j];
                    }
                }
            }
        }
        // undo permutation
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(self.perm[i], self.perm[j])] = prod[(i, j)];
            }
        }
        out
    }
}

/// C -= A * M for row-major operands, C (m x n), A (m x k), M (k x n).
/// When `lower_only` is set, C is square and only entries at or below the
/// diagonal are written.
pub fn gemm_minus_in_place(c: &mut Mat, a: &Mat, m: &Mat, lower_only: bool) {
    assert_eq!(c.rows, a.rows);
    assert_eq!(a.cols, m.rows);
    assert_eq!(c.cols, m.cols);
    let n = c.cols;
    let kk = a.cols;
    for i in 0..c.rows {
        let arow = a.row(i);
        let bound = if lower_only { (i + 1).min(n) } else { n };
        let crow = &mut c.data[i * n..i * n + bound];
        for k in 0..kk {
            let aik = arow[k];
            if aik != 0.0 {
                let mrow = &m.data[k * n..k * n + bound];
                for j in 0..bound {
                    crow[j] -= aik * mrow[j];
                }
            }
        }
    }
}

/// C += A^T * B, C (m x n), A (k x m), B (k x n). Used by the Schur-complement
/// correction where A and B share the factored-row layout.
pub fn gemm_at_b_minus(c: &mut Mat, a: &Mat, b: &Mat, lower_only: bool) {
    assert_eq!(a.rows, b.rows);
    assert_eq!(c.rows, a.cols);
    assert_eq!(c.cols, b.cols);
    let n = c.cols;
    for k in 0..a.rows {
        let arow = a.row(k);
        let brow = b.row(k);
        for i in 0..c.rows {
            let aki = arow[i];
            if aki != 0.0 {
                let bound = if lower_only { (i + 1).min(n) } else { n };
                let crow = &mut c.data[i * n..i * n + bound];
                for j in 0..bound {
                    crow[j] -= aki * brow[j];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn reconstruct_error(a: &Mat) -> f64 {
        let f = bk_factorize(a).unwrap();
        let r = f.reconstruct();
        let mut sym = a.clone();
        sym.mirror_lower();
        let mut diff = 0.0f64;
        for i in 0..a.rows {
            for j in 0..a.cols {
                diff = diff.max((r[(i, j)] - sym[(i, j)]).abs());
            }
        }
        diff / sym.max_abs().max(1.0)
    }

    #[test]
    fn identity_factors_trivially() {
        let f = bk_factorize(&Mat::identity(2)).unwrap();
        assert_eq!(f.lower, Mat::identity(2));
        assert_eq!(f.piv.d, vec![1.0, 1.0]);
        assert_eq!(f.piv.num_2x2(), 0);
    }

    #[test]
    fn spd_2x2_pivots_match_hand_elimination() {
        // [[2,-1],[-1,2]] -> D = diag(2, 1.5), L21 = -0.5
        let a = Mat::from_rows(&[&[2.0, -1.0], &[-1.0, 2.0]]);
        let f = bk_factorize(&a).unwrap();
        assert_eq!(f.perm, vec![0, 1]);
        assert_close(f.piv.d[0], 2.0, 1e-15);
        assert_close(f.piv.d[1], 1.5, 1e-15);
        assert_close(f.lower[(1, 0)], -0.5, 1e-15);
    }

    #[test]
    fn kernel_example_4_2_3() {
        // [[4,2],[2,3]] -> D = diag(4,2), L21 = 0.5
        let a = Mat::from_rows(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let f = bk_factorize(&a).unwrap();
        assert_close(f.piv.d[0], 4.0, 1e-15);
        assert_close(f.piv.d[1], 2.0, 1e-15);
        assert_close(f.lower[(1, 0)], 0.5, 1e-15);
    }

    #[test]
    fn zero_diagonal_takes_2x2_pivot() {
        let a = Mat::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let f = bk_factorize(&a).unwrap();
        assert_eq!(f.piv.num_2x2(), 1);
        assert!(reconstruct_error(&a) < 1e-14);
        let x = f.solve_vec(&[3.0, -2.0]);
        assert_close(x[0], -2.0, 1e-14);
        assert_close(x[1], 3.0, 1e-14);
    }

    #[test]
    fn exactly_singular_reports_pivot() {
        let a = Mat::zeros(3, 3);
        let e = bk_factorize(&a).unwrap_err();
        assert_eq!(e.index, 0);
    }

    #[test]
    fn random_indefinite_reconstructs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 2, 3, 5, 8, 13, 40, 97] {
            let mut a = Mat::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let v = rng.random_range(-1.0..1.0);
                    a[(i, j)] = v;
                }
                // drift some diagonals toward zero to provoke 2x2 pivots
                if i % 3 == 0 {
                    a[(i, i)] *= 1e-8;
                }
            }
            assert!(reconstruct_error(&a) < 1e-12, "n={n}");
        }
    }

    #[test]
    fn solve_matches_manual_elimination() {
        let a = Mat::from_rows(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let f = bk_factorize(&a).unwrap();
        let x = f.solve_vec(&[8.0, 7.0]);
        assert_close(x[0], 1.25, 1e-14);
        assert_close(x[1], 1.5, 1e-14);
    }

    #[test]
    fn row_solve_satisfies_half_factor_identity() {
        // solve_rows computes X = B P^T L^-T D^-1, so X D L^T P must equal B.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 17;
        let mut a = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                a[(i, j)] = rng.random_range(-1.0..1.0);
            }
            if i % 4 == 0 {
                a[(i, i)] *= 1e-9; // force pivoting
            }
        }
        let f = bk_factorize(&a).unwrap();

        let mut rhs = Mat::zeros(3, n);
        for r in 0..3 {
            for j in 0..n {
                rhs[(r, j)] = rng.random_range(-2.0..2.0);
            }
        }
        let mut solved = rhs.clone();
        f.solve_rows_in_place(&mut solved);

        for r in 0..3 {
            // w1 = x * D
            let mut w1 = vec![0.0; n];
            let mut j = 0;
            while j < n {
                if f.piv.sub[j] != 0.0 {
                    let (d11, d21, d22) = (f.piv.d[j], f.piv.sub[j], f.piv.d[j + 1]);
                    w1[j] = solved[(r, j)] * d11 + solved[(r, j + 1)] * d21;
                    w1[j + 1] = solved[(r, j)] * d21 + solved[(r, j + 1)] * d22;
                    j += 2;
                } else {
                    w1[j] = solved[(r, j)] * f.piv.d[j];
                    j += 1;
                }
            }
            // w2 = w1 * L^T; then scatter through P
            for c in 0..n {
                let lrow = f.lower.row(c);
                let mut s = 0.0;
                for t in 0..=c {
                    s += w1[t] * lrow[t];
                }
                assert_close(s, rhs[(r, f.perm[c])], 1e-10);
            }
        }
    }

    #[test]
    fn gemm_minus_matches_direct_formula() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (m, k, n) = (3usize, 4usize, 3usize);
        let mut a = Mat::zeros(m, k);
        let mut b = Mat::zeros(k, n);
        let mut c = Mat::zeros(m, n);
        for v in a.data.iter_mut().chain(b.data.iter_mut()).chain(c.data.iter_mut()) {
            *v = rng.random_range(-1.0..1.0);
        }
        let c0 = c.clone();
        gemm_minus_in_place(&mut c, &a, &b, false);
        for i in 0..m {
            for j in 0..n {
                let mut s = c0[(i, j)];
                for t in 0..k {
                    s -= a[(i, t)] * b[(t, j)];
                }
                assert_close(c[(i, j)], s, 1e-13);
            }
        }
    }
}
