//! Shared test oracles, deliberately independent of the library's
//! factorization path: a dense LU solve with partial pivoting and analytic
//! grid eigenvalues.

use d3m_core::problem::{SparseSystem, Stencil};

/// Solve A x = b densely with partial-pivot LU. O(n^3), test-only.
pub fn dense_lu_solve(sys: &SparseSystem, rhs: &[f64]) -> Vec<f64> {
    let n = sys.n;
    let mut a = vec![0.0f64; n * n];
    for &(r, c, v) in &sys.entries {
        a[r * n + c] = v;
        if r != c {
            a[c * n + r] = v;
        }
    }
    let mut x = rhs.to_vec();
    let mut piv: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut best = k;
        let mut best_val = a[piv[k] * n + k].abs();
        for r in k + 1..n {
            let v = a[piv[r] * n + k].abs();
            if v > best_val {
                best = r;
                best_val = v;
            }
        }
        piv.swap(k, best);
        let pk = piv[k];
        let d = a[pk * n + k];
        assert!(d != 0.0, "oracle hit a zero pivot at {k}");
        let prow: Vec<f64> = a[pk * n + k..pk * n + n].to_vec();
        for r in k + 1..n {
            let pr = piv[r];
            let f = a[pr * n + k] / d;
            if f != 0.0 {
                let dst = &mut a[pr * n + k..pr * n + n];
                for (c, pv) in prow.iter().enumerate() {
                    dst[c] -= f * pv;
                }
                x[pr] -= f * x[pk];
            }
        }
    }
    // back substitution on the permuted triangle
    let mut out = vec![0.0f64; n];
    for k in (0..n).rev() {
        let pk = piv[k];
        let mut s = x[pk];
        for c in k + 1..n {
            s -= a[pk * n + c] * out[c];
        }
        out[k] = s / a[pk * n + k];
    }
    out
}

/// Analytic eigenvalues of the Dirichlet grid Laplacian.
pub fn grid_laplacian_eigenvalues(dims: &[usize]) -> Vec<f64> {
    let axes: Vec<Vec<f64>> = dims
        .iter()
        .map(|&d| {
            (1..=d)
                .map(|i| 2.0 - 2.0 * (std::f64::consts::PI * i as f64 / (d as f64 + 1.0)).cos())
                .collect()
        })
        .collect();
    let mut eigs = vec![0.0f64];
    for ax in axes {
        let mut next = Vec::with_capacity(eigs.len() * ax.len());
        for &e in &eigs {
            for &a in &ax {
                next.push(e + a);
            }
        }
        eigs = next;
    }
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eigs
}

/// Pick k so the Helmholtz operator on this grid has at least `want`
/// negative eigenvalues.
pub fn helmholtz_k_with_negatives(dims: &[usize], want: usize) -> f64 {
    let eigs = grid_laplacian_eigenvalues(dims);
    assert!(want < eigs.len(), "grid too small for {want} negative modes");
    // place k^2 strictly between distinct eigenvalues; grid spectra are
    // degenerate, so step past the whole cluster at eigs[want-1]
    let lo = eigs[want - 1];
    let hi = eigs
        .iter()
        .copied()
        .find(|&e| e > lo + 1e-9)
        .expect("spectrum has a gap above the requested mode");
    let k2 = 0.5 * (lo + hi);
    k2.sqrt()
}

/// Count negative eigenvalues of the generated stencil analytically.
pub fn negative_mode_count(dims: &[usize], stencil: Stencil) -> usize {
    let shift = match stencil {
        Stencil::Laplacian => 0.0,
        Stencil::Helmholtz(k) => k * k,
    };
    grid_laplacian_eigenvalues(dims)
        .into_iter()
        .filter(|&e| e - shift < 0.0)
        .count()
}
