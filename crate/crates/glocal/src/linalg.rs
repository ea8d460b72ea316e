//! Small dense linear algebra helpers.
//!
//! Problems handled by this crate are desk-scale (tens of variables, at most
//! a few dozen active pieces), so plain slices and an LU factorization with
//! partial pivoting are all that is needed.

use crate::util::{abs, sqrt};
use alloc::vec;
use alloc::vec::Vec;

/// Inner product.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Euclidean norm.
pub(crate) fn nrm2(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

/// `y += alpha * x`.
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for i in 0..x.len() {
        y[i] += alpha * x[i];
    }
}

/// `a - b` as a new vector.
pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    let mut out = Vec::with_capacity(a.len());
    for i in 0..a.len() {
        out.push(a[i] - b[i]);
    }
    out
}

/// `‖a - b‖`.
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    sqrt(s)
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// Zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds a matrix from row-major data (`data.len() == rows * cols`).
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has wrong length");
        Mat { rows, cols, data }
    }

    /// Number of rows.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of columns.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Element accessor.
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Element mutator.
    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Row view.
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Mutable row view.
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = A x`.
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for r in 0..self.rows {
            out[r] = dot(self.row(r), x);
        }
    }

    /// `out = Aᵀ x`.
    pub fn tr_matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for v in out.iter_mut() {
            *v = 0.0;
        }
        for r in 0..self.rows {
            axpy(x[r], self.row(r), out);
        }
    }

    /// Raw row-major data.
    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Solves the square system `A x = b` in place by LU with partial pivoting.
///
/// Returns `false` when a pivot falls below `pivot_tol` times the row scale,
/// signalling (near-)singularity; `b` then holds garbage.
pub(crate) fn lu_solve(a: &mut Mat, b: &mut [f64], pivot_tol: f64) -> bool {
    let n = a.rows;
    debug_assert_eq!(a.cols, n);
    debug_assert_eq!(b.len(), n);
    let mut scale = 0.0f64;
    for v in a.data.iter() {
        scale = scale.max(abs(*v));
    }
    let threshold = pivot_tol * (1.0 + scale);
    for k in 0..n {
        let mut piv = k;
        let mut best = abs(a.get(k, k));
        for r in (k + 1)..n {
            let v = abs(a.get(r, k));
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best <= threshold {
            return false;
        }
        if piv != k {
            for c in 0..n {
                let t = a.get(k, c);
                a.set(k, c, a.get(piv, c));
                a.set(piv, c, t);
            }
            b.swap(k, piv);
        }
        let d = a.get(k, k);
        for r in (k + 1)..n {
            let f = a.get(r, k) / d;
            if f == 0.0 {
                continue;
            }
            for c in (k + 1)..n {
                let v = a.get(r, c) - f * a.get(k, c);
                a.set(r, c, v);
            }
            b[r] -= f * b[k];
            a.set(r, k, 0.0);
        }
    }
    for k in (0..n).rev() {
        let mut s = b[k];
        for c in (k + 1)..n {
            s -= a.get(k, c) * b[c];
        }
        b[k] = s / a.get(k, k);
    }
    true
}

/// Nonnegative least squares: minimizes `‖Σ_i ν_i a_i + v‖` over `ν ≥ 0`.
///
/// Lawson–Hanson active-set iteration with deterministic (lowest-index on
/// ties) pivoting; returns the coefficients and the residual norm. `dirs`
/// holds the generators `a_i`.
pub(crate) fn nnls_cone_distance(dirs: &[Vec<f64>], v: &[f64]) -> (Vec<f64>, f64) {
    let m = dirs.len();
    let n = v.len();
    let mut nu = vec![0.0f64; m];
    if m == 0 {
        return (nu, nrm2(v));
    }
    // Target of the least-squares fit is -v.
    let mut passive: Vec<bool> = vec![false; m];
    let mut resid: Vec<f64> = v.to_vec();
    let scale = {
        let mut s = nrm2(v);
        for d in dirs {
            s = s.max(nrm2(d));
        }
        1.0 + s
    };
    let tol = 1e-12 * scale;
    for _outer in 0..(4 * m + 16) {
        // Most negative directional derivative of ½‖Σ ν a + v‖² over ν ≥ 0.
        let mut best = -tol;
        let mut enter = usize::MAX;
        for (i, d) in dirs.iter().enumerate() {
            if passive[i] {
                continue;
            }
            let g = dot(d, &resid);
            if g < best {
                best = g;
                enter = i;
            }
        }
        if enter == usize::MAX {
            break;
        }
        passive[enter] = true;
        // Inner loop: least squares on the passive set, trimming negatives.
        loop {
            let act: Vec<usize> = (0..m).filter(|&i| passive[i]).collect();
            let k = act.len();
            let mut gram = Mat::zeros(k, k);
            let mut rhs = vec![0.0f64; k];
            for (p, &i) in act.iter().enumerate() {
                for (q, &j) in act.iter().enumerate() {
                    gram.set(p, q, dot(&dirs[i], &dirs[j]));
                }
                rhs[p] = -dot(&dirs[i], v);
            }
            if !lu_solve(&mut gram, &mut rhs, 1e-14) {
                // Degenerate generators: drop the newcomer and stop growing.
                passive[enter] = false;
                break;
            }
            if rhs.iter().all(|&c| c > -tol) {
                for (p, &i) in act.iter().enumerate() {
                    nu[i] = rhs[p].max(0.0);
                }
                break;
            }
            // Step from the previous feasible ν toward the new fit until the
            // first coefficient hits zero, then deactivate it.
            let mut theta = 1.0f64;
            let mut leave = usize::MAX;
            for (p, &i) in act.iter().enumerate() {
                if rhs[p] < tol {
                    let denom = nu[i] - rhs[p];
                    if denom > 0.0 {
                        let t = nu[i] / denom;
                        if t < theta {
                            theta = t;
                            leave = i;
                        }
                    }
                }
            }
            if leave == usize::MAX {
                for (p, &i) in act.iter().enumerate() {
                    nu[i] = rhs[p].max(0.0);
                }
                break;
            }
            for (p, &i) in act.iter().enumerate() {
                nu[i] += theta * (rhs[p] - nu[i]);
            }
            nu[leave] = 0.0;
            passive[leave] = false;
        }
        // Refresh the residual Σ ν a + v.
        resid.copy_from_slice(v);
        for (i, d) in dirs.iter().enumerate() {
            if nu[i] != 0.0 {
                axpy(nu[i], d, &mut resid);
            }
        }
    }
    (nu, nrm2(&resid))
}

/// Euclidean projection onto the simplex `{w ≥ 0, Σ w = mass}` (sort-based).
pub(crate) fn project_simplex(y: &[f64], mass: f64) -> Vec<f64> {
    let n = y.len();
    debug_assert!(n > 0 && mass >= 0.0);
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));
    let mut cumsum = 0.0;
    let mut theta = (sorted[0] - mass).max(0.0);
    for (k, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let candidate = (cumsum - mass) / (k + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
        }
    }
    let mut out = Vec::with_capacity(n);
    for &v in y {
        out.push((v - theta).max(0.0));
    }
    out
}
