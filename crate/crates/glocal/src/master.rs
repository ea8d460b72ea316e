//! Master subproblems: strongly convex piecewise-linear-quadratic programs.
//!
//! Every solver in this crate reduces its per-iteration subproblem to
//!
//! ```text
//! min_{x ∈ X}  s(x) + lin0 + ⟨lin, x⟩ + Σ_B max_{l ∈ B} (d_l + ⟨e_l, x⟩) + (1/2t)‖x − x̂‖²
//! ```
//!
//! with a smooth convex `s`. The smooth part is handled by a proximal
//! splitting loop that freezes its gradient and backtracks a curvature
//! estimate; the remaining piecewise-linear-quadratic core is solved by a
//! primal-dual active-set method with an accelerated projected-gradient
//! fallback on the dual. Solutions always come back with the block
//! multipliers `α` (one convex-combination weight per piece) and an
//! independently measured optimality residual, so callers can verify the
//! subgradient selections they extract.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, dist2, nrm2, Mat};
use crate::sets::FeasibleSet;
use crate::util::{abs, sqrt};
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// One additive `max`-of-affine block in the decision variable.
pub struct MasterBlock {
    /// Pieces `(d_l, e_l)` meaning `d_l + ⟨e_l, x⟩`.
    pub pieces: Vec<(f64, Vec<f64>)>,
}

impl MasterBlock {
    /// Value `max_l (d_l + ⟨e_l, x⟩)`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for (d, e) in &self.pieces {
            let v = d + dot(e, x);
            if v > best {
                best = v;
            }
        }
        best
    }
}

/// Piecewise-linear part of a master objective.
pub struct MasterPwl {
    /// Constant term.
    pub lin0: f64,
    /// Global linear term.
    pub lin: Vec<f64>,
    /// Additive max blocks.
    pub blocks: Vec<MasterBlock>,
}

impl MasterPwl {
    /// The zero function on `dim` variables.
    pub fn constant(dim: usize, value: f64) -> Self {
        MasterPwl { lin0: value, lin: vec![0.0; dim], blocks: Vec::new() }
    }

    /// Value at `x`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut v = self.lin0 + dot(&self.lin, x);
        for b in &self.blocks {
            v += b.evaluate(x);
        }
        v
    }

    /// Subgradient selected by the multipliers `alpha` (aligned with the
    /// blocks and their pieces): `lin + Σ_B Σ_l α_l e_l`.
    pub fn slope(&self, alpha: &[Vec<f64>]) -> Vec<f64> {
        let mut g = self.lin.clone();
        for (b, a) in self.blocks.iter().zip(alpha) {
            for (l, (_, e)) in b.pieces.iter().enumerate() {
                if a[l] != 0.0 {
                    axpy(a[l], e, &mut g);
                }
            }
        }
        g
    }
}

/// Smooth convex term of a master objective, passed by reference so each
/// solver can assemble it from its own state without allocation ceremony.
pub struct MasterSmooth<'a> {
    /// Value oracle.
    pub value: &'a dyn Fn(&[f64]) -> f64,
    /// Gradient oracle (writes into the second argument).
    pub gradient: &'a dyn Fn(&[f64], &mut [f64]),
    /// Gradient Lipschitz modulus when known; `None` enables backtracking.
    pub grad_lipschitz: Option<f64>,
}

impl<'a> MasterSmooth<'a> {
    /// The identically-zero smooth part.
    pub fn zero() -> MasterSmooth<'static> {
        MasterSmooth {
            value: &|_x| 0.0,
            gradient: &|_x, g: &mut [f64]| g.fill(0.0),
            grad_lipschitz: Some(0.0),
        }
    }
}

/// Tolerances and caps for the master loop.
#[derive(Clone, Debug)]
pub struct MasterConfig {
    /// Relative optimality tolerance on the measured residual.
    pub tol: f64,
    /// Cap on smooth-splitting iterations (including backtracks).
    pub max_iter: usize,
}

impl Default for MasterConfig {
    fn default() -> Self {
        MasterConfig { tol: 1e-10, max_iter: 10_000 }
    }
}

/// Solution of a master subproblem.
pub struct MasterSolution {
    /// Minimizer over the feasible set.
    pub x: Vec<f64>,
    /// Convex-combination weights per block, aligned with the input pieces.
    pub alpha: Vec<Vec<f64>>,
    /// Full master objective at `x`.
    pub objective: f64,
    /// Piecewise-linear part at `x`.
    pub pwl_value: f64,
    /// Independently measured optimality residual (stationarity in the
    /// tangent cone plus multiplier feasibility and complementarity).
    pub kkt_residual: f64,
    /// Inner iterations spent.
    pub iterations: usize,
    /// Whether the projected-gradient fallback produced the answer.
    pub fallback: bool,
}

/// Solves the full master subproblem with prox weight `1/t` around `center`.
pub fn solve_master(
    set: &FeasibleSet,
    smooth: &MasterSmooth,
    pwl: &MasterPwl,
    t: f64,
    center: &[f64],
    cfg: &MasterConfig,
) -> Result<MasterSolution> {
    let n = set.dim();
    if pwl.lin.len() != n || center.len() != n {
        return Err(Error::Dimension { expected: n, got: pwl.lin.len().max(center.len()) });
    }
    if !(t > 0.0) {
        return Err(Error::Config {
            field: "t",
            message: format!("prox parameter must be positive, got {t}"),
        });
    }
    let mut beta = match smooth.grad_lipschitz {
        Some(l) if l > 0.0 => 1.0 / l,
        Some(_) => f64::INFINITY,
        None => 1.0,
    };
    let adaptive = smooth.grad_lipschitz.is_none();
    let mut w = set.project(center);
    let mut grad = vec![0.0; n];
    let mut iterations = 0usize;
    let mut fallback_used = false;
    loop {
        (smooth.gradient)(&w, &mut grad);
        let inv_beta = if beta.is_finite() { 1.0 / beta } else { 0.0 };
        let gamma = 1.0 / t + inv_beta;
        // p collects the prox centers and the frozen gradient.
        let mut p = vec![0.0; n];
        for i in 0..n {
            p[i] = (center[i] / t + w[i] * inv_beta - grad[i]) / gamma;
        }
        let core = solve_pwlqp(set, gamma, &p, &pwl.lin, &pwl.blocks)?;
        fallback_used |= core.fallback;
        iterations += 1;
        let x = core.x;
        if adaptive {
            let sw = (smooth.value)(&w);
            let sx = (smooth.value)(&x);
            let dxw = dist2(&x, &w);
            let mut linear = sw;
            for i in 0..n {
                linear += grad[i] * (x[i] - w[i]);
            }
            let bound = linear + inv_beta * 0.5 * dxw * dxw;
            if sx > bound + 1e-12 * (1.0 + abs(sw)) {
                beta *= 0.5;
                if iterations >= cfg.max_iter {
                    return Err(Error::Master {
                        reason: format!("curvature backtracking stalled (beta = {beta:e})"),
                        iterations,
                    });
                }
                continue;
            }
        }
        // Measure true stationarity of the full master at x with the
        // multipliers the core reported.
        (smooth.gradient)(&x, &mut grad);
        let mut v = pwl.slope(&core.alpha);
        for i in 0..n {
            v[i] += grad[i] + (x[i] - center[i]) / t;
        }
        let stat = set.tangent_residual(&x, &v)?;
        let side = multiplier_residual(&pwl.blocks, &core.alpha, &x);
        let residual = stat + side;
        let scale = 1.0 + nrm2(&v);
        if residual <= cfg.tol * scale {
            let pwl_value = pwl.evaluate(&x);
            let dxc = dist2(&x, center);
            let objective = (smooth.value)(&x) + pwl_value + dxc * dxc / (2.0 * t);
            return Ok(MasterSolution {
                x,
                alpha: core.alpha,
                objective,
                pwl_value,
                kkt_residual: residual,
                iterations,
                fallback: fallback_used,
            });
        }
        w = x;
        if iterations >= cfg.max_iter {
            return Err(Error::Master {
                reason: format!(
                    "splitting loop did not reach tolerance (residual {residual:e})"
                ),
                iterations,
            });
        }
    }
}

/// Multiplier-side optimality error: simplex feasibility plus
/// complementarity of the block weights at `x`.
fn multiplier_residual(blocks: &[MasterBlock], alpha: &[Vec<f64>], x: &[f64]) -> f64 {
    let mut r = 0.0;
    for (b, a) in blocks.iter().zip(alpha) {
        let best = b.evaluate(x);
        let mut mass = 0.0;
        for (l, (d, e)) in b.pieces.iter().enumerate() {
            mass += a[l];
            if a[l] < 0.0 {
                r += -a[l];
            }
            let gap = best - (d + dot(e, x));
            if a[l] > 0.0 && gap > 0.0 {
                r += a[l] * gap;
            }
        }
        r += abs(1.0 - mass);
    }
    r
}

/// Core solution (no smooth part).
pub(crate) struct PwlqpSolution {
    pub x: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub fallback: bool,
}

/// Solves `min_{x ∈ X} (γ/2)‖x − p‖² + ⟨lin, x⟩ + Σ_B max_l (d_l + ⟨e_l, x⟩)`.
pub(crate) fn solve_pwlqp(
    set: &FeasibleSet,
    gamma: f64,
    p: &[f64],
    lin: &[f64],
    blocks: &[MasterBlock],
) -> Result<PwlqpSolution> {
    debug_assert!(gamma > 0.0);
    for b in blocks {
        debug_assert!(!b.pieces.is_empty(), "blocks must have at least one piece");
    }
    // Pure quadratic: exact projection.
    if blocks.is_empty() {
        let mut target = p.to_vec();
        for i in 0..p.len() {
            target[i] -= lin[i] / gamma;
        }
        let x = set.project(&target);
        return Ok(PwlqpSolution { x, alpha: Vec::new(), fallback: false });
    }
    match set {
        FeasibleSet::FinitePointSet { points } => {
            let mut best = 0usize;
            let mut best_val = f64::INFINITY;
            for (i, pt) in points.iter().enumerate() {
                let v = pwlqp_value(gamma, p, lin, blocks, pt);
                if v < best_val {
                    best_val = v;
                    best = i;
                }
            }
            let x = points[best].clone();
            let alpha = vertex_multipliers(blocks, &x);
            Ok(PwlqpSolution { x, alpha, fallback: false })
        }
        FeasibleSet::Ball { center, radius } => {
            match solve_ball(center, *radius, gamma, p, lin, blocks) {
                Some(sol) => Ok(sol),
                None => Ok(dual_ascent(set, gamma, p, lin, blocks)),
            }
        }
        _ => {
            let rows = linear_rows(set);
            match active_set(gamma, p, lin, blocks, &rows, None) {
                Some((x, alpha)) => Ok(PwlqpSolution { x, alpha, fallback: false }),
                None => {
                    let mut sol = dual_ascent(set, gamma, p, lin, blocks);
                    polish(gamma, p, lin, blocks, &rows, &mut sol);
                    Ok(sol)
                }
            }
        }
    }
}

/// Objective of the core problem at `x`.
fn pwlqp_value(gamma: f64, p: &[f64], lin: &[f64], blocks: &[MasterBlock], x: &[f64]) -> f64 {
    let d = dist2(x, p);
    let mut v = 0.5 * gamma * d * d + dot(lin, x);
    for b in blocks {
        v += b.evaluate(x);
    }
    v
}

/// Multipliers putting unit weight on the lowest-index maximal piece.
fn vertex_multipliers(blocks: &[MasterBlock], x: &[f64]) -> Vec<Vec<f64>> {
    blocks
        .iter()
        .map(|b| {
            let best = b.evaluate(x);
            let mut a = vec![0.0; b.pieces.len()];
            let idx = b
                .pieces
                .iter()
                .position(|(d, e)| d + dot(e, x) == best)
                .unwrap_or(0);
            a[idx] = 1.0;
            a
        })
        .collect()
}

/// Converts sets with affine boundaries to `⟨a, x⟩ ≤ b` rows.
fn linear_rows(set: &FeasibleSet) -> Vec<(Vec<f64>, f64)> {
    match set {
        FeasibleSet::WholeSpace { .. } => Vec::new(),
        FeasibleSet::Box { lo, hi } => {
            let n = lo.len();
            let mut rows = Vec::new();
            for i in 0..n {
                if hi[i].is_finite() {
                    let mut a = vec![0.0; n];
                    a[i] = 1.0;
                    rows.push((a, hi[i]));
                }
                if lo[i].is_finite() {
                    let mut a = vec![0.0; n];
                    a[i] = -1.0;
                    rows.push((a, -lo[i]));
                }
            }
            rows
        }
        FeasibleSet::HalfspaceIntersection { normals, offsets, .. } => {
            normals.iter().cloned().zip(offsets.iter().copied()).collect()
        }
        FeasibleSet::Ball { .. } | FeasibleSet::FinitePointSet { .. } => {
            unreachable!("handled separately")
        }
    }
}

/// Working set for the active-set kernel.
#[derive(Clone)]
struct Working {
    /// Active piece indices per block (each nonempty, sorted).
    pieces: Vec<Vec<usize>>,
    /// Active constraint rows (sorted).
    rows: Vec<usize>,
}

/// Candidate identifier: pieces are `(0, block, piece)`, rows `(1, 0, row)`.
type Key = (u8, usize, usize);

/// Primal-dual active-set method on the core problem with affine rows.
/// Returns `None` when it cycles or hits a singular system it cannot step
/// around; the caller then falls back to dual ascent.
fn active_set(
    gamma: f64,
    p: &[f64],
    lin: &[f64],
    blocks: &[MasterBlock],
    rows: &[(Vec<f64>, f64)],
    init: Option<Working>,
) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = p.len();
    // Initial point ignoring pieces and rows seeds the working set.
    let mut x0 = vec![0.0; n];
    for i in 0..n {
        x0[i] = p[i] - lin[i] / gamma;
    }
    let mut work = init.unwrap_or_else(|| Working {
        pieces: blocks
            .iter()
            .map(|b| {
                let best = b.evaluate(&x0);
                let idx = b
                    .pieces
                    .iter()
                    .position(|(d, e)| d + dot(e, &x0) == best)
                    .unwrap_or(0);
                vec![idx]
            })
            .collect(),
        rows: Vec::new(),
    });
    for (b, w) in blocks.iter().zip(work.pieces.iter_mut()) {
        if w.is_empty() {
            w.push(0);
        }
        w.retain(|&l| l < b.pieces.len());
        if w.is_empty() {
            w.push(0);
        }
    }
    work.rows.retain(|&j| j < rows.len());

    let total_pieces: usize = blocks.iter().map(|b| b.pieces.len()).sum();
    let cap = 48 + 8 * (total_pieces + rows.len() + n);
    let mut blocked: BTreeSet<Key> = BTreeSet::new();
    let mut last_add: Option<Key> = None;
    let drop_tol = 1e-11;

    for _ in 0..cap {
        match kkt_solve(gamma, p, lin, blocks, rows, &work) {
            None => {
                // Singular system: retract the last addition and forbid it.
                match last_add.take() {
                    Some(key) => {
                        match key.0 {
                            0 => {
                                work.pieces[key.1].retain(|&l| l != key.2);
                                if work.pieces[key.1].is_empty() {
                                    return None;
                                }
                            }
                            _ => work.rows.retain(|&j| j != key.2),
                        }
                        blocked.insert(key);
                        continue;
                    }
                    None => return None,
                }
            }
            Some((x, alpha_w, nu)) => {
                // The last addition produced a solvable system: the working
                // set advanced, so previously blocked candidates are fair
                // game again.
                if last_add.take().is_some() {
                    blocked.clear();
                }
                // Drop phase: most negative multiplier goes first.
                let mut drop: Option<(f64, Key)> = None;
                let mut ai = 0usize;
                for (b, w) in work.pieces.iter().enumerate() {
                    for &l in w {
                        let a = alpha_w[ai];
                        ai += 1;
                        if w.len() > 1 && a < -drop_tol {
                            let worse = drop.map(|(v, _)| a < v).unwrap_or(true);
                            if worse {
                                drop = Some((a, (0, b, l)));
                            }
                        }
                    }
                }
                for (k, &j) in work.rows.iter().enumerate() {
                    if nu[k] < -drop_tol {
                        let worse = drop.map(|(v, _)| nu[k] < v).unwrap_or(true);
                        if worse {
                            drop = Some((nu[k], (1, 0, j)));
                        }
                    }
                }
                if let Some((_, key)) = drop {
                    match key.0 {
                        0 => work.pieces[key.1].retain(|&l| l != key.2),
                        _ => work.rows.retain(|&j| j != key.2),
                    }
                    blocked.clear();
                    last_add = None;
                    continue;
                }
                // Add phase: most violated piece or row.
                let mut add: Option<(f64, Key)> = None;
                let mut blocked_violation = false;
                for (b, blk) in blocks.iter().enumerate() {
                    let rb = blk
                        .pieces
                        .iter()
                        .enumerate()
                        .filter(|(l, _)| work.pieces[b].contains(l))
                        .map(|(_, (d, e))| d + dot(e, &x))
                        .fold(f64::NEG_INFINITY, f64::max);
                    for (l, (d, e)) in blk.pieces.iter().enumerate() {
                        if work.pieces[b].contains(&l) {
                            continue;
                        }
                        let val = d + dot(e, &x);
                        let tol = 1e-10 * (1.0 + abs(rb) + abs(*d));
                        let viol = val - rb;
                        if viol <= tol {
                            continue;
                        }
                        if blocked.contains(&(0, b, l)) {
                            blocked_violation = true;
                            continue;
                        }
                        if add.map(|(v, _)| viol > v).unwrap_or(true) {
                            add = Some((viol, (0, b, l)));
                        }
                    }
                }
                for (j, (a, bnd)) in rows.iter().enumerate() {
                    if work.rows.contains(&j) {
                        continue;
                    }
                    let viol = dot(a, &x) - bnd;
                    let tol = 1e-10 * (1.0 + abs(*bnd));
                    if viol <= tol {
                        continue;
                    }
                    if blocked.contains(&(1, 0, j)) {
                        blocked_violation = true;
                        continue;
                    }
                    if add.map(|(v, _)| viol > v).unwrap_or(true) {
                        add = Some((viol, (1, 0, j)));
                    }
                }
                match add {
                    Some((_, key)) => {
                        match key.0 {
                            0 => {
                                work.pieces[key.1].push(key.2);
                                work.pieces[key.1].sort_unstable();
                            }
                            _ => {
                                work.rows.push(key.2);
                                work.rows.sort_unstable();
                            }
                        }
                        last_add = Some(key);
                        continue;
                    }
                    None => {
                        if blocked_violation {
                            // A needed candidate is stuck behind a singular
                            // system; let the fallback settle it.
                            return None;
                        }
                        // Optimal: expand multipliers onto all pieces.
                        let mut alpha: Vec<Vec<f64>> =
                            blocks.iter().map(|b| vec![0.0; b.pieces.len()]).collect();
                        let mut ai = 0usize;
                        for (b, w) in work.pieces.iter().enumerate() {
                            for &l in w {
                                alpha[b][l] = alpha_w[ai].max(0.0);
                                ai += 1;
                            }
                            // Renormalize away the drop tolerance.
                            let mass: f64 = alpha[b].iter().sum();
                            if mass > 0.0 {
                                for v in alpha[b].iter_mut() {
                                    *v /= mass;
                                }
                            }
                        }
                        return Some((x, alpha));
                    }
                }
            }
        }
    }
    None
}

/// Solves the equality-constrained optimality system for a working set.
/// Unknowns: `x`, the working `α`, one `r` per block, the working `ν`.
#[allow(clippy::type_complexity)]
fn kkt_solve(
    gamma: f64,
    p: &[f64],
    lin: &[f64],
    blocks: &[MasterBlock],
    rows: &[(Vec<f64>, f64)],
    work: &Working,
) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = p.len();
    let na: usize = work.pieces.iter().map(|w| w.len()).sum();
    let nb = blocks.len();
    let nr = work.rows.len();
    let dim = n + na + nb + nr;
    let mut m = Mat::zeros(dim, dim);
    let mut rhs = vec![0.0; dim];
    // Column layout: x | α (block order) | r | ν.
    let col_a = n;
    let col_r = n + na;
    let col_nu = n + na + nb;
    // Stationarity rows.
    for i in 0..n {
        m.set(i, i, gamma);
        rhs[i] = gamma * p[i] - lin[i];
    }
    let mut ai = 0usize;
    for (b, w) in work.pieces.iter().enumerate() {
        for &l in w {
            let (_, e) = &blocks[b].pieces[l];
            for i in 0..n {
                m.set(i, col_a + ai, e[i]);
            }
            ai += 1;
        }
    }
    for (k, &j) in work.rows.iter().enumerate() {
        let (a, _) = &rows[j];
        for i in 0..n {
            m.set(i, col_nu + k, a[i]);
        }
    }
    // Piece equalization rows.
    let mut row = n;
    for (b, w) in work.pieces.iter().enumerate() {
        for &l in w {
            let (d, e) = &blocks[b].pieces[l];
            for i in 0..n {
                m.set(row, i, e[i]);
            }
            m.set(row, col_r + b, -1.0);
            rhs[row] = -d;
            row += 1;
        }
    }
    // Simplex mass rows.
    ai = 0;
    for w in &work.pieces {
        for _ in w {
            m.set(row, col_a + ai, 1.0);
            ai += 1;
        }
        rhs[row] = 1.0;
        row += 1;
    }
    // Constraint rows.
    for &j in &work.rows {
        let (a, bnd) = &rows[j];
        for i in 0..n {
            m.set(row, i, a[i]);
        }
        rhs[row] = *bnd;
        row += 1;
    }
    debug_assert_eq!(row, dim);
    if !crate::linalg::lu_solve(&mut m, &mut rhs, 1e-12) {
        return None;
    }
    let x = rhs[..n].to_vec();
    let alpha = rhs[col_a..col_a + na].to_vec();
    let nu = rhs[col_nu..].to_vec();
    Some((x, alpha, nu))
}

/// Trust-region-style wrapper for ball constraints: bisects the multiplier
/// of `‖x − c‖ ≤ r`, solving the unconstrained core at each trial value.
fn solve_ball(
    center: &[f64],
    radius: f64,
    gamma: f64,
    p: &[f64],
    lin: &[f64],
    blocks: &[MasterBlock],
) -> Option<PwlqpSolution> {
    let shifted = |lambda: f64| -> (f64, Vec<f64>) {
        let g = gamma + lambda;
        let mut q = vec![0.0; p.len()];
        for i in 0..p.len() {
            q[i] = (gamma * p[i] + lambda * center[i]) / g;
        }
        (g, q)
    };
    let eval = |lambda: f64| -> Option<(Vec<f64>, Vec<Vec<f64>>, f64)> {
        let (g, q) = shifted(lambda);
        let (x, alpha) = active_set(g, &q, lin, blocks, &[], None)?;
        let d = dist2(&x, center);
        Some((x, alpha, d))
    };
    let (x0, a0, d0) = eval(0.0)?;
    let tol = 1e-12 * (1.0 + radius);
    if d0 <= radius + tol {
        return Some(PwlqpSolution { x: x0, alpha: a0, fallback: false });
    }
    // Bracket: distance to center decreases as the multiplier grows.
    let mut lo = 0.0f64;
    let mut hi = gamma.max(1.0);
    let mut hi_sol = loop {
        let (x, a, d) = eval(hi)?;
        if d <= radius {
            break (x, a, d);
        }
        hi *= 4.0;
        if hi > 1e18 {
            return None;
        }
    };
    for _ in 0..200 {
        if hi_sol.2 >= radius - tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (x, a, d) = eval(mid)?;
        if d > radius {
            lo = mid;
        } else {
            hi = mid;
            hi_sol = (x, a, d);
        }
        if (hi - lo) <= 1e-15 * (1.0 + hi) {
            break;
        }
    }
    let (mut x, alpha, d) = hi_sol;
    // Land exactly on the sphere when the constraint is active.
    if d > 0.0 && d >= radius - 1e-9 * (1.0 + radius) {
        let scale = radius / d;
        for i in 0..x.len() {
            x[i] = center[i] + scale * (x[i] - center[i]);
        }
    }
    Some(PwlqpSolution { x, alpha, fallback: false })
}

/// Accelerated projected-gradient ascent on the dual of the core problem:
/// maximizes `g(α) = min_{x ∈ X} L(x, α)` over the product of simplices.
fn dual_ascent(
    set: &FeasibleSet,
    gamma: f64,
    p: &[f64],
    lin: &[f64],
    blocks: &[MasterBlock],
) -> PwlqpSolution {
    let n = p.len();
    let primal_x = |alpha: &[Vec<f64>]| -> Vec<f64> {
        let mut target = vec![0.0; n];
        for i in 0..n {
            target[i] = p[i] - lin[i] / gamma;
        }
        for (b, a) in blocks.iter().zip(alpha) {
            for (l, (_, e)) in b.pieces.iter().enumerate() {
                if a[l] != 0.0 {
                    for i in 0..n {
                        target[i] -= a[l] * e[i] / gamma;
                    }
                }
            }
        }
        set.project(&target)
    };
    let dual_value = |alpha: &[Vec<f64>], x: &[f64]| -> f64 {
        let d = dist2(x, p);
        let mut v = 0.5 * gamma * d * d + dot(lin, x);
        for (b, a) in blocks.iter().zip(alpha) {
            for (l, (dl, e)) in b.pieces.iter().enumerate() {
                if a[l] != 0.0 {
                    v += a[l] * (dl + dot(e, x));
                }
            }
        }
        v
    };
    // Curvature bound for the dual gradient.
    let mut fro = 0.0;
    for b in blocks {
        for (_, e) in &b.pieces {
            fro += dot(e, e);
        }
    }
    let lcap = (fro / gamma).max(1e-12);
    let step = 1.0 / lcap;
    let mut alpha: Vec<Vec<f64>> = blocks
        .iter()
        .map(|b| {
            let w = 1.0 / b.pieces.len() as f64;
            vec![w; b.pieces.len()]
        })
        .collect();
    let mut x = primal_x(&alpha);
    let mut best_alpha = alpha.clone();
    let mut best_gap = f64::INFINITY;
    let mut momentum = alpha.clone();
    let mut theta = 1.0f64;
    let mut g_prev = dual_value(&alpha, &x);
    for _ in 0..50_000 {
        let xm = primal_x(&momentum);
        // Ascent step on the momentum point, projected back per block.
        let mut next: Vec<Vec<f64>> = Vec::with_capacity(blocks.len());
        for (b, my) in blocks.iter().zip(&momentum) {
            let mut y: Vec<f64> = my.clone();
            for (l, (dl, e)) in b.pieces.iter().enumerate() {
                y[l] += step * (dl + dot(e, &xm));
            }
            next.push(crate::linalg::project_simplex(&y, 1.0));
        }
        let xn = primal_x(&next);
        let g_next = dual_value(&next, &xn);
        let theta_next = 0.5 * (1.0 + sqrt(1.0 + 4.0 * theta * theta));
        if g_next < g_prev {
            // Restart momentum on non-monotone progress.
            momentum = next.clone();
            theta = 1.0;
        } else {
            let coeff = (theta - 1.0) / theta_next;
            momentum = next
                .iter()
                .zip(&alpha)
                .map(|(nw, old)| {
                    nw.iter()
                        .zip(old)
                        .map(|(a, b)| a + coeff * (a - b))
                        .collect::<Vec<f64>>()
                })
                .collect();
            theta = theta_next;
        }
        alpha = next;
        x = xn;
        g_prev = g_prev.max(g_next);
        let primal = pwlqp_value(gamma, p, lin, blocks, &x);
        let gap = primal - g_next;
        if gap < best_gap {
            best_gap = gap;
            best_alpha = alpha.clone();
        }
        if gap <= 1e-13 * (1.0 + abs(primal)) {
            break;
        }
    }
    let x = primal_x(&best_alpha);
    PwlqpSolution { x, alpha: best_alpha, fallback: true }
}

/// One active-set refinement pass seeded from a dual-ascent solution.
fn polish(
    gamma: f64,
    p: &[f64],
    lin: &[f64],
    blocks: &[MasterBlock],
    rows: &[(Vec<f64>, f64)],
    sol: &mut PwlqpSolution,
) {
    let seed = Working {
        pieces: sol
            .alpha
            .iter()
            .map(|a| {
                let peak = a.iter().fold(0.0f64, |m, &v| m.max(v));
                let mut w: Vec<usize> = (0..a.len())
                    .filter(|&l| a[l] > 1e-7 * (1.0 + peak))
                    .collect();
                if w.is_empty() {
                    w.push(
                        (0..a.len())
                            .max_by(|&i, &j| a[i].partial_cmp(&a[j]).expect("finite"))
                            .unwrap_or(0),
                    );
                }
                w
            })
            .collect(),
        rows: rows
            .iter()
            .enumerate()
            .filter(|(_, (a, b))| dot(a, &sol.x) >= b - 1e-8 * (1.0 + abs(*b)))
            .map(|(j, _)| j)
            .collect(),
    };
    if let Some((x, alpha)) = active_set(gamma, p, lin, blocks, rows, Some(seed)) {
        let feasible = rows
            .iter()
            .all(|(a, b)| dot(a, &x) <= b + 1e-9 * (1.0 + abs(*b)));
        if feasible && pwlqp_value(gamma, p, lin, blocks, &x)
            <= pwlqp_value(gamma, p, lin, blocks, &sol.x) + 1e-12
        {
            sol.x = x;
            sol.alpha = alpha;
            sol.fallback = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn whole(n: usize) -> FeasibleSet {
        FeasibleSet::whole(n)
    }

    #[test]
    fn single_piece_closed_form() {
        // min 4x − 5 + ½(x − 2)² → x = −2.
        let blocks = vec![MasterBlock { pieces: vec![(-5.0, vec![4.0])] }];
        let sol = solve_pwlqp(&whole(1), 1.0, &[2.0], &[0.0], &blocks).unwrap();
        assert!((sol.x[0] + 2.0).abs() < 1e-12);
        assert!((sol.alpha[0][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_piece_equalization() {
        // min max(4x − 5, 5 − 4x) + (1/1.8)(x − 2)² → pieces tie at x = 1.25.
        let blocks = vec![MasterBlock {
            pieces: vec![(-5.0, vec![4.0]), (5.0, vec![-4.0])],
        }];
        let g = 1.0 / 0.9;
        let sol = solve_pwlqp(&whole(1), g, &[2.0], &[0.0], &blocks).unwrap();
        assert!((sol.x[0] - 1.25).abs() < 1e-12);
        // Stationarity: γ(x − p) + 4α₁ − 4α₂ = 0 with α₁ + α₂ = 1.
        let diff = g * 0.75 / 4.0;
        assert!((sol.alpha[0][0] - 0.5 * (1.0 + diff)).abs() < 1e-12);
        assert!((sol.alpha[0][1] - 0.5 * (1.0 - diff)).abs() < 1e-12);
    }

    #[test]
    fn pure_projection_shortcut() {
        let set = FeasibleSet::boxed(vec![-1.0, -1.0], vec![1.0, 1.0]);
        let sol = solve_pwlqp(&set, 1.0, &[2.0, 0.25], &[0.0, 0.0], &[]).unwrap();
        assert_eq!(sol.x, vec![1.0, 0.25]);
    }

    #[test]
    fn box_constraint_activates() {
        // min |x − 3| + ½‖x − 0‖² over [−1, 1]: unconstrained kink pull gives
        // x = 1 at the boundary.
        let set = FeasibleSet::boxed(vec![-1.0], vec![1.0]);
        let blocks = vec![MasterBlock {
            pieces: vec![(-3.0, vec![1.0]), (3.0, vec![-1.0])],
        }];
        let sol = solve_pwlqp(&set, 1.0, &[0.0], &[0.0], &blocks).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-10);
        // Below the kink the −1 slope piece is active alone.
        assert!((sol.alpha[0][1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ball_wrapper_hits_sphere() {
        // min ⟨(2, 0), x⟩ + ½‖x − 0‖² over the unit ball: pull along −e₁
        // saturates at x = (−1, 0).
        let set = FeasibleSet::Ball { center: vec![0.0, 0.0], radius: 1.0 };
        let sol = solve_pwlqp(&set, 1.0, &[0.0, 0.0], &[2.0, 0.0], &[]).unwrap();
        assert!((sol.x[0] + 1.0).abs() < 1e-9 && sol.x[1].abs() < 1e-12);
        // With a kink: min |x₁ − 2| + ½‖x‖² over unit ball → x₁ = 1 boundary.
        let blocks = vec![MasterBlock {
            pieces: vec![(-2.0, vec![1.0, 0.0]), (2.0, vec![-1.0, 0.0])],
        }];
        let sol = solve_pwlqp(&set, 1.0, &[0.0, 0.0], &[0.0, 0.0], &blocks).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-7, "got {}", sol.x[0]);
        assert!(sol.x[1].abs() < 1e-9);
    }

    #[test]
    fn dual_ascent_matches_active_set() {
        let blocks = vec![
            MasterBlock {
                pieces: vec![(0.0, vec![1.0, 0.5]), (0.3, vec![-0.5, 0.2])],
            },
            MasterBlock {
                pieces: vec![(0.0, vec![0.0, 0.0]), (-0.2, vec![2.0, -1.0])],
            },
        ];
        let set = whole(2);
        let p = [0.7, -0.4];
        let lin = [0.1, -0.3];
        let direct = solve_pwlqp(&set, 2.0, &p, &lin, &blocks).unwrap();
        let fb = dual_ascent(&set, 2.0, &p, &lin, &blocks);
        let va = pwlqp_value(2.0, &p, &lin, &blocks, &direct.x);
        let vb = pwlqp_value(2.0, &p, &lin, &blocks, &fb.x);
        assert!((va - vb).abs() < 1e-7, "active set {va} vs dual ascent {vb}");
    }

    #[test]
    fn smooth_part_with_known_curvature() {
        // min ½x² + |x − 1| + ½x²: optimum at x = 0.5 where 2x − 1 = 0.
        let value = |x: &[f64]| 0.5 * x[0] * x[0];
        let gradient = |x: &[f64], g: &mut [f64]| g[0] = x[0];
        let smooth = MasterSmooth { value: &value, gradient: &gradient, grad_lipschitz: Some(1.0) };
        let pwl = MasterPwl {
            lin0: 0.0,
            lin: vec![0.0],
            blocks: vec![MasterBlock {
                pieces: vec![(-1.0, vec![1.0]), (1.0, vec![-1.0])],
            }],
        };
        let sol = solve_master(&whole(1), &smooth, &pwl, 1.0, &[0.0], &MasterConfig::default())
            .unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-8, "got {}", sol.x[0]);
        assert!(sol.kkt_residual < 1e-8);
    }

    #[test]
    fn smooth_part_with_backtracking() {
        let value = |x: &[f64]| x[0] * x[0] + 0.5 * x[1] * x[1];
        let gradient = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * x[0];
            g[1] = x[1];
        };
        let smooth = MasterSmooth { value: &value, gradient: &gradient, grad_lipschitz: None };
        let pwl = MasterPwl::constant(2, 0.0);
        // min x₁² + ½x₂² + ½‖x − (1, 1)‖²: x₁ = 1/3, x₂ = 1/2.
        let sol = solve_master(
            &whole(2),
            &smooth,
            &pwl,
            1.0,
            &[1.0, 1.0],
            &MasterConfig::default(),
        )
        .unwrap();
        assert!((sol.x[0] - 1.0 / 3.0).abs() < 1e-8);
        assert!((sol.x[1] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn recovers_from_singular_working_sets() {
        // Regression: this instance once drove the active-set kernel into a
        // singular system; the violated piece stayed blocked and the kernel
        // declared a point optimal that a grid search beat by 0.8. The
        // working-set bookkeeping must re-enable blocked candidates once the
        // set advances.
        let mut rng = crate::util::SplitMix64::new(431);
        let p = [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
        let lin = [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
        let mut blocks = Vec::new();
        for _ in 0..2 {
            let mut pieces = Vec::new();
            for _ in 0..3 {
                pieces.push((
                    rng.uniform(-1.0, 1.0),
                    vec![rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)],
                ));
            }
            blocks.push(MasterBlock { pieces });
        }
        let set = FeasibleSet::boxed(vec![-1.5, -1.5], vec![1.5, 1.5]);
        let sol = solve_pwlqp(&set, 0.2, &p, &lin, &blocks).unwrap();
        let v = pwlqp_value(0.2, &p, &lin, &blocks, &sol.x);
        // Grid optimum for this instance is ≈ −3.67046 near (0.994, 1.5).
        assert!(v <= -3.6704, "kernel value {v}");
        assert!((sol.x[0] - 0.9943).abs() < 1e-3 && (sol.x[1] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn reports_multipliers_consistent_with_slope() {
        let blocks = vec![MasterBlock {
            pieces: vec![(0.0, vec![1.0]), (0.0, vec![-1.0])],
        }];
        let pwl = MasterPwl { lin0: 0.0, lin: vec![0.0], blocks };
        let smooth = MasterSmooth::zero();
        let sol =
            solve_master(&whole(1), &smooth, &pwl, 2.0, &[0.0], &MasterConfig::default()).unwrap();
        // |x| + (1/4)x² has minimum at 0 with α = (½, ½) by symmetry.
        assert!(sol.x[0].abs() < 1e-12);
        let g = pwl.slope(&sol.alpha);
        // Stationarity: slope + (x − 0)/t = 0 → slope = 0.
        assert!(g[0].abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn kernel_beats_feasible_samples(
            seed in 0u64..1_000,
            gamma in 0.2f64..5.0,
        ) {
            // Random 2-D instance over a box: the reported solution must not
            // be beaten by any sampled feasible point, and its measured
            // optimality error must be tiny.
            let mut rng = crate::util::SplitMix64::new(seed);
            let p = [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
            let lin = [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
            let mut blocks = Vec::new();
            for _ in 0..2 {
                let mut pieces = Vec::new();
                for _ in 0..3 {
                    pieces.push((
                        rng.uniform(-1.0, 1.0),
                        vec![rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)],
                    ));
                }
                blocks.push(MasterBlock { pieces });
            }
            let set = FeasibleSet::boxed(vec![-1.5, -1.5], vec![1.5, 1.5]);
            let sol = solve_pwlqp(&set, gamma, &p, &lin, &blocks).unwrap();
            let v = pwlqp_value(gamma, &p, &lin, &blocks, &sol.x);
            for _ in 0..40 {
                let cand = [rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)];
                let vc = pwlqp_value(gamma, &p, &lin, &blocks, &cand);
                prop_assert!(v <= vc + 1e-7, "sample beat kernel: {} < {}", vc, v);
            }
            // Independent residual check.
            let mut vgrad = lin.to_vec();
            for (b, a) in blocks.iter().zip(&sol.alpha) {
                for (l, (_, e)) in b.pieces.iter().enumerate() {
                    crate::linalg::axpy(a[l], e, &mut vgrad);
                }
            }
            for i in 0..2 {
                vgrad[i] += gamma * (sol.x[i] - p[i]);
            }
            let stat = set.tangent_residual(&sol.x, &vgrad).unwrap();
            let side = multiplier_residual(&blocks, &sol.alpha, &sol.x);
            prop_assert!(stat + side < 1e-6, "kkt residual {}", stat + side);
        }
    }
}
