//! Feasible sets: membership, Euclidean projection, and normal-cone geometry.
//!
//! The solvers only ever need three operations from a set: projection,
//! membership within a scaled tolerance, and the distance
//! `dist(0, v + N_X(x))` from zero to a translated normal cone, which is how
//! stationarity residuals measure the constrained part of a certificate.
//!
//! Feasibility and constraint-activity checks use the scaled tolerance
//! `1e-9·(1 + ‖x‖)`; projection ties (possible only for finite point sets)
//! resolve to the lexicographically smallest point.

use crate::linalg::{dist2, dot, nnls_cone_distance, nrm2};
use crate::util::{abs, clamp, sqrt};
use crate::{Error, Result};
use alloc::vec;
use alloc::vec::Vec;

/// Relative tolerance for membership and activity checks at `x`.
pub fn feasibility_tol(x: &[f64]) -> f64 {
    1e-9 * (1.0 + nrm2(x))
}

/// Simple closed convex (or finite) sets the solvers understand.
#[derive(Debug, Clone, PartialEq)]
pub enum FeasibleSet {
    /// All of ℝⁿ.
    WholeSpace {
        /// Ambient dimension.
        dim: usize,
    },
    /// Axis-aligned box `{x : lo ≤ x ≤ hi}`; entries may be ±∞.
    Box {
        /// Lower bounds.
        lo: Vec<f64>,
        /// Upper bounds.
        hi: Vec<f64>,
    },
    /// Closed Euclidean ball.
    Ball {
        /// Center.
        center: Vec<f64>,
        /// Radius (> 0).
        radius: f64,
    },
    /// Intersection `{x : ⟨normals_i, x⟩ ≤ offsets_i}`.
    HalfspaceIntersection {
        /// Outward normals, one per constraint.
        normals: Vec<Vec<f64>>,
        /// Right-hand sides.
        offsets: Vec<f64>,
        /// Ambient dimension.
        dim: usize,
    },
    /// Finite point set; not a solver domain, but the projection target of
    /// distance penalties.
    FinitePointSet {
        /// Member points (nonempty, equal dimension).
        points: Vec<Vec<f64>>,
    },
}

impl FeasibleSet {
    /// Whole space of dimension `n`.
    pub fn whole(dim: usize) -> Self {
        FeasibleSet::WholeSpace { dim }
    }

    /// Box with the given bounds (`lo[i] ≤ hi[i]` required).
    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(&hi).all(|(a, b)| a <= b), "box bounds must be ordered");
        FeasibleSet::Box { lo, hi }
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::WholeSpace { dim } => *dim,
            FeasibleSet::Box { lo, .. } => lo.len(),
            FeasibleSet::Ball { center, .. } => center.len(),
            FeasibleSet::HalfspaceIntersection { dim, .. } => *dim,
            FeasibleSet::FinitePointSet { points } => points[0].len(),
        }
    }

    /// Whether `x` lies in the set within `tol` (use [`feasibility_tol`]).
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            FeasibleSet::WholeSpace { .. } => true,
            FeasibleSet::Box { lo, hi } => x
                .iter()
                .enumerate()
                .all(|(i, &v)| v >= lo[i] - tol && v <= hi[i] + tol),
            FeasibleSet::Ball { center, radius } => dist2(x, center) <= radius + tol,
            FeasibleSet::HalfspaceIntersection { normals, offsets, .. } => normals
                .iter()
                .zip(offsets)
                .all(|(a, &b)| dot(a, x) <= b + tol * (1.0 + abs(b))),
            FeasibleSet::FinitePointSet { points } => {
                points.iter().any(|p| dist2(x, p) <= tol)
            }
        }
    }

    /// Euclidean projection of `x` onto the set.
    ///
    /// For finite point sets, distance ties resolve to the lexicographically
    /// smallest point, which keeps every downstream solver deterministic.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        match self {
            FeasibleSet::WholeSpace { .. } => x.to_vec(),
            FeasibleSet::Box { lo, hi } => {
                let mut out = Vec::with_capacity(x.len());
                for i in 0..x.len() {
                    out.push(clamp(x[i], lo[i], hi[i]));
                }
                out
            }
            FeasibleSet::Ball { center, radius } => {
                let d = dist2(x, center);
                if d <= *radius {
                    return x.to_vec();
                }
                let scale = radius / d;
                let mut out = Vec::with_capacity(x.len());
                for i in 0..x.len() {
                    out.push(center[i] + scale * (x[i] - center[i]));
                }
                out
            }
            FeasibleSet::HalfspaceIntersection { normals, offsets, .. } => {
                project_halfspaces(normals, offsets, x)
            }
            FeasibleSet::FinitePointSet { points } => {
                let mut best = &points[0];
                let mut best_d = dist2(x, best);
                for p in &points[1..] {
                    let d = dist2(x, p);
                    if d < best_d || (d == best_d && lex_less(p, best)) {
                        best = p;
                        best_d = d;
                    }
                }
                best.clone()
            }
        }
    }

    /// Distance from zero to `v + N_X(x)`, the translated normal cone at a
    /// feasible `x`. Equivalently the norm of the tangent-cone projection of
    /// `-v`; a stationarity certificate drives this to zero.
    pub fn tangent_residual(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        let tol = feasibility_tol(x);
        if !self.contains(x, tol) {
            let p = self.project(x);
            return Err(Error::Infeasible { violation: dist2(x, &p) });
        }
        Ok(match self {
            FeasibleSet::WholeSpace { .. } => nrm2(v),
            FeasibleSet::Box { lo, hi } => {
                let mut s = 0.0;
                for i in 0..x.len() {
                    let at_lo = x[i] - lo[i] <= tol * (1.0 + abs(lo[i]));
                    let at_hi = hi[i] - x[i] <= tol * (1.0 + abs(hi[i]));
                    let r = match (at_lo, at_hi) {
                        // Pinned coordinate: the normal cone is the whole line.
                        (true, true) => 0.0,
                        // Lower bound: normals point down, residual is (-v)₊.
                        (true, false) => (-v[i]).max(0.0),
                        // Upper bound: normals point up, residual is (v)₊.
                        (false, true) => v[i].max(0.0),
                        (false, false) => abs(v[i]),
                    };
                    s += r * r;
                }
                sqrt(s)
            }
            FeasibleSet::Ball { center, radius } => {
                let d = dist2(x, center);
                if radius - d > tol * (1.0 + radius) {
                    return Ok(nrm2(v));
                }
                // On the sphere the normal cone is the ray along x - center.
                let mut s = 0.0;
                let lambda = (-dot(v, &sub_dir(x, center)) / d).max(0.0);
                for i in 0..x.len() {
                    let r = v[i] + lambda * (x[i] - center[i]) / d;
                    s += r * r;
                }
                sqrt(s)
            }
            FeasibleSet::HalfspaceIntersection { normals, offsets, .. } => {
                let mut active: Vec<Vec<f64>> = Vec::new();
                for (a, &b) in normals.iter().zip(offsets) {
                    if b - dot(a, x) <= tol * (1.0 + abs(b)) {
                        active.push(a.clone());
                    }
                }
                nnls_cone_distance(&active, v).1
            }
            // Members of a finite set are isolated: the normal cone is all of
            // ℝⁿ and every member is trivially stationary.
            FeasibleSet::FinitePointSet { .. } => 0.0,
        })
    }
}

fn sub_dir(x: &[f64], c: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        out.push(x[i] - c[i]);
    }
    out
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for i in 0..a.len() {
        if a[i] < b[i] {
            return true;
        }
        if a[i] > b[i] {
            return false;
        }
    }
    false
}

/// Projection onto `{x : ⟨a_i, x⟩ ≤ b_i}` by active-set iteration on the
/// constraint multipliers (deterministic, exact up to the linear solves).
fn project_halfspaces(normals: &[Vec<f64>], offsets: &[f64], x: &[f64]) -> Vec<f64> {
    let tol = feasibility_tol(x);
    let violated = normals
        .iter()
        .zip(offsets)
        .any(|(a, &b)| dot(a, x) > b + tol * (1.0 + abs(b)));
    if !violated {
        return x.to_vec();
    }
    // Projection solves min ‖p - x‖² s.t. Ap ≤ b; its KKT system says
    // p = x - Σ ν_i a_i with ν ≥ 0 and complementarity. Dual ascent on ν by
    // Lawson–Hanson applied to the violated system is exact for the small
    // constraint counts this crate works with.
    let m = normals.len();
    let mut active: Vec<usize> = Vec::new();
    let mut p = x.to_vec();
    for _round in 0..(2 * m + 8) {
        let mut worst = tol;
        let mut worst_i = usize::MAX;
        for (i, a) in normals.iter().enumerate() {
            let viol = dot(a, &p) - offsets[i];
            if viol > worst * (1.0 + abs(offsets[i])) && !active.contains(&i) {
                worst = viol;
                worst_i = i;
            }
        }
        if worst_i == usize::MAX {
            break;
        }
        active.push(worst_i);
        active.sort_unstable();
        loop {
            // Equality-project onto the active face: solve (A_W A_Wᵀ) ν = A_W x - b_W.
            let k = active.len();
            let mut gram = crate::linalg::Mat::zeros(k, k);
            let mut rhs = vec![0.0; k];
            for (r, &i) in active.iter().enumerate() {
                for (c, &j) in active.iter().enumerate() {
                    gram.set(r, c, dot(&normals[i], &normals[j]));
                }
                rhs[r] = dot(&normals[i], x) - offsets[i];
            }
            if !crate::linalg::lu_solve(&mut gram, &mut rhs, 1e-13) {
                // Redundant face: drop the most recent constraint.
                active.pop();
                break;
            }
            if let Some(drop_pos) = rhs
                .iter()
                .enumerate()
                .filter(|(_, &v)| v < -1e-12)
                .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
                .map(|(pos, _)| pos)
            {
                active.remove(drop_pos);
                if active.is_empty() {
                    break;
                }
                continue;
            }
            p = x.to_vec();
            for (r, &i) in active.iter().enumerate() {
                crate::linalg::axpy(-rhs[r], &normals[i], &mut p);
            }
            break;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_projection_clamps() {
        let set = FeasibleSet::boxed(vec![-1.0, -1.0], vec![1.0, 1.0]);
        assert_eq!(set.project(&[2.0, 0.5]), vec![1.0, 0.5]);
        assert_eq!(set.project(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn ball_projection_scales() {
        let set = FeasibleSet::Ball { center: vec![0.0, 0.0], radius: 1.0 };
        let p = set.project(&[3.0, 4.0]);
        assert!((p[0] - 0.6).abs() < 1e-14 && (p[1] - 0.8).abs() < 1e-14);
    }

    #[test]
    fn finite_set_tie_breaks_lexicographically() {
        let set = FeasibleSet::FinitePointSet { points: vec![vec![1.0], vec![-1.0]] };
        assert_eq!(set.project(&[0.0]), vec![-1.0]);
        assert_eq!(set.project(&[0.2]), vec![1.0]);
    }

    #[test]
    fn halfspace_projection_matches_hand_case() {
        // {x : x1 + x2 ≤ 1, -x1 ≤ 0}: project (1, 1) → (0.5, 0.5).
        let set = FeasibleSet::HalfspaceIntersection {
            normals: vec![vec![1.0, 1.0], vec![-1.0, 0.0]],
            offsets: vec![1.0, 0.0],
            dim: 2,
        };
        let p = set.project(&[1.0, 1.0]);
        assert!((p[0] - 0.5).abs() < 1e-10 && (p[1] - 0.5).abs() < 1e-10);
        // Corner case: both constraints bind. Project (-1, 3) → (0, 1).
        let p = set.project(&[-1.0, 3.0]);
        assert!((p[0]).abs() < 1e-10 && (p[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn whole_space_residual_is_norm() {
        let set = FeasibleSet::whole(2);
        let r = set.tangent_residual(&[0.3, 0.0], &[1.0, 2.0]).unwrap();
        assert!((r - (5.0f64).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn box_residual_distinguishes_bounds() {
        let set = FeasibleSet::boxed(vec![-2.0], vec![2.0]);
        // Interior: plain norm.
        assert!((set.tangent_residual(&[0.0], &[1.5]).unwrap() - 1.5).abs() < 1e-14);
        // At the upper bound, v = ∇f ≤ 0 means descent points outward and is
        // blocked (stationary); v > 0 leaves the inward descent direction open.
        assert!((set.tangent_residual(&[2.0], &[3.0]).unwrap() - 3.0).abs() < 1e-14);
        assert!(set.tangent_residual(&[2.0], &[-3.0]).unwrap() < 1e-14);
        // Mirror image at the lower bound.
        assert!((set.tangent_residual(&[-2.0], &[-3.0]).unwrap() - 3.0).abs() < 1e-14);
        assert!(set.tangent_residual(&[-2.0], &[3.0]).unwrap() < 1e-14);
    }

    #[test]
    fn ball_residual_uses_radial_cone() {
        let set = FeasibleSet::Ball { center: vec![0.0, 0.0], radius: 1.0 };
        // At (1, 0), v = (-2, 0): descent points outward along +x, blocked by
        // the boundary; the normal ray absorbs v entirely.
        let r = set.tangent_residual(&[1.0, 0.0], &[-2.0, 0.0]).unwrap();
        assert!(r < 1e-12);
        // v = (2, 0): descent points into the ball; nothing absorbs it.
        let r = set.tangent_residual(&[1.0, 0.0], &[2.0, 0.0]).unwrap();
        assert!((r - 2.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_point_is_rejected() {
        let set = FeasibleSet::boxed(vec![0.0], vec![1.0]);
        assert!(matches!(
            set.tangent_residual(&[2.0], &[0.0]),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn finite_member_is_stationary() {
        let set = FeasibleSet::FinitePointSet { points: vec![vec![1.0], vec![-1.0]] };
        assert_eq!(set.tangent_residual(&[1.0], &[5.0]).unwrap(), 0.0);
    }
}
