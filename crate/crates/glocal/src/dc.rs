//! Convexification solver for composites whose mapping components split as
//! differences of convex functions, plus the projection-based specialization
//! for weighted squared-distance penalties.
//!
//! At the iterate `x_k` each component `F_i = f¹_i − f²_i` is replaced by
//! the convex majorant `F̄_i(x) = f¹_i(x) − f²_i(x_k) − ⟨s²_ik, x − x_k⟩`
//! (with `s²_ik` a witness subgradient of the concave part), and the
//! iteration minimizes `f0(x) + h(F̄(x)) + (1/2t)‖x − x_k‖²` over the
//! feasible set. Monotone `h` makes `h(F̄(·))` a convex global majorant of
//! `h(F(·))` that touches at the center, so every step descends and the
//! predicted decrease `v` dominates `(1/2t)‖x⁺ − x_k‖²`.
//!
//! The iteration tracks two quantities: `v`, the majorant's predicted
//! decrease, and `e`, the largest linearization gap `f²_i(x⁺) − f²_i(x_k) −
//! ⟨s²_ik, x⁺ − x_k⟩` across components, which certifies how far the frozen
//! witness slope is from the concave part's subdifferential at the new
//! point. The run stops only when both fall below tolerance.

use crate::bundle::StepKind;
use crate::error::{Error, Result};
use crate::linalg::{dot, nrm2, sub};
use crate::master::{solve_master, MasterBlock, MasterConfig, MasterPwl, MasterSmooth};
use crate::oracle::{Convex, ConvexPart};
use crate::problem::CompositeProblem;
use crate::sets::FeasibleSet;
use crate::stationarity::{residual_with_mode, Certificate, DerivativeMode};
use crate::util::sqrt;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Parameters of the convexification iteration.
#[derive(Clone, Debug)]
pub struct DcConfig {
    /// Prox parameter `t > 0` (fixed across iterations).
    pub t: f64,
    /// Stopping tolerance applied to both `v` and `e`.
    pub tol: f64,
    /// Iteration cap.
    pub max_iter: usize,
    /// Witness inexactness budget used by the termination bound; at least
    /// the stopping tolerance whenever that is positive.
    pub e: f64,
    /// Master subproblem tolerances.
    pub master: MasterConfig,
}

impl Default for DcConfig {
    fn default() -> Self {
        DcConfig {
            t: 1.0,
            tol: 1e-8,
            max_iter: 500,
            e: 1e-8,
            master: MasterConfig::default(),
        }
    }
}

impl DcConfig {
    /// Checks the parameter ranges.
    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::Config {
                field: "t",
                message: format!("prox parameter must be positive and finite, got {}", self.t),
            });
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config {
                field: "tol",
                message: format!("stopping tolerance must be nonnegative, got {}", self.tol),
            });
        }
        if self.tol > 0.0 && self.e < self.tol {
            return Err(Error::Config {
                field: "e",
                message: format!(
                    "witness budget must be at least the stopping tolerance ({} < {})",
                    self.e, self.tol
                ),
            });
        }
        if !(self.e >= 0.0) {
            return Err(Error::Config {
                field: "e",
                message: format!("witness budget must be nonnegative, got {}", self.e),
            });
        }
        Ok(())
    }
}

/// Mutable state of a convexification run.
pub struct DcState {
    /// Current iterate (always feasible).
    pub x: Vec<f64>,
    /// True objective at the iterate.
    pub objective: f64,
    /// Concave-part values at the iterate, per component.
    pub f2_values: Vec<f64>,
    /// Witness subgradients of the concave parts at the iterate.
    pub s2: Vec<Vec<f64>>,
    /// Completed iterations.
    pub k: usize,
}

/// One row of the iteration log.
#[derive(Clone, Debug)]
pub struct DcIterationRecord {
    /// Iteration index the step started from.
    pub k: usize,
    /// Move or stop.
    pub step: StepKind,
    /// Predicted decrease of the convex majorant.
    pub v: f64,
    /// Largest concave-part linearization gap at the candidate.
    pub e: f64,
    /// `‖x⁺ − x_k‖`.
    pub step_norm: f64,
    /// True objective at the candidate.
    pub objective: f64,
    /// Measured residual at the candidate.
    pub residual: f64,
}

/// Candidate data produced by one iteration.
pub struct DcStepData {
    /// Candidate point.
    pub x: Vec<f64>,
    /// Outer multipliers recovered from the master.
    pub y: Vec<f64>,
    /// Majorant image `F̄_k(x⁺)` the master optimized over.
    pub z: Vec<f64>,
    /// True image `F(x⁺)`.
    pub fx: Vec<f64>,
    /// Witness-mode certificate at the candidate.
    pub certificate: Certificate,
}

/// Computable termination bound for the convexification iteration: with
/// `z⁺ := F̄_k(x⁺)` and the master multipliers `y⁺`,
/// `sqrt(‖F(x⁺) − z⁺‖² + (1/t²)‖x⁺ − x_k‖² + w²)` where the witness term
/// `w` vanishes when the linearization gap fits inside the configured
/// budget (the frozen slope then lies in the inexact subdifferential at the
/// candidate) and otherwise falls back to the measured slope discrepancy.
#[derive(Clone, Debug)]
pub struct DcEpsilonCertificate {
    /// The bound itself.
    pub epsilon: f64,
    /// `‖F(x⁺) − z⁺‖`: the concave parts' total linearization gap.
    pub primal_term: f64,
    /// `(1/t)‖x⁺ − x_k‖`.
    pub step_term: f64,
    /// Witness-slope discrepancy term.
    pub witness_term: f64,
    /// Whether the witness term is exact (gap within budget or affine
    /// concave parts) rather than a measured upper bound.
    pub witness_exact: bool,
}

/// Result of a convexification (or proximal-distance) run.
pub struct DcResult {
    /// Final point.
    pub x: Vec<f64>,
    /// Outer multipliers at the final point.
    pub y: Vec<f64>,
    /// Image variable at the final point.
    pub z: Vec<f64>,
    /// Objective at the final point.
    pub value: f64,
    /// Whether both stopping tests fired before the iteration cap.
    pub converged: bool,
    /// Completed iterations.
    pub iterations: usize,
    /// Predicted decrease at the last master solve.
    pub final_v: f64,
    /// Linearization gap at the last candidate.
    pub final_e: f64,
    /// Per-iteration log.
    pub records: Vec<DcIterationRecord>,
    /// Witness-mode certificate at the final point.
    pub certificate: Certificate,
    /// Computable termination bound.
    pub epsilon: DcEpsilonCertificate,
}

/// Initializes a run: checks that the problem carries a difference-of-convex
/// split and a nondecreasing outer function, projects the start point, and
/// caches the concave-part data at it.
pub fn dc_init(problem: &CompositeProblem, x0: &[f64], config: &DcConfig) -> Result<DcState> {
    config.validate()?;
    if x0.len() != problem.dim() {
        return Err(Error::Dimension { expected: problem.dim(), got: x0.len() });
    }
    let dc = problem.dc.as_ref().ok_or(Error::Missing("difference-of-convex split"))?;
    if dc.components.len() != problem.map_dim() {
        return Err(Error::Dimension { expected: problem.map_dim(), got: dc.components.len() });
    }
    if !problem.h.nondecreasing() {
        return Err(Error::Unsupported(
            "convexification needs a nondecreasing outer function",
        ));
    }
    let x = problem.set.project(x0);
    let mut state = DcState {
        objective: problem.objective(&x),
        f2_values: Vec::new(),
        s2: Vec::new(),
        x,
        k: 0,
    };
    if !state.objective.is_finite() {
        return Err(Error::NotFinite("objective at the start point"));
    }
    refresh_concave_data(&mut state, problem);
    Ok(state)
}

/// Recomputes concave-part values and witness slopes at the current iterate.
fn refresh_concave_data(state: &mut DcState, problem: &CompositeProblem) {
    let dc = problem.dc.as_ref().expect("checked at init");
    let n = problem.dim();
    state.f2_values.clear();
    state.s2.clear();
    for comp in &dc.components {
        state.f2_values.push(comp.f2.value(&state.x));
        let mut g = vec![0.0; n];
        comp.f2.subgradient(&state.x, &mut g);
        state.s2.push(g);
    }
}

/// Cap on the product expansion of one wrapper block.
const EXPANSION_CAP: usize = 256;

/// Everything the master needs for one convexified subproblem, plus the
/// provenance that recovers outer multipliers from the solution.
struct DcAssembly {
    pwl: MasterPwl,
    /// `prov[block][piece] = [(component, coefficient)]`; empty lists mark
    /// blocks whose multiplier mass is already carried by the linear part.
    prov: Vec<Vec<Vec<(usize, f64)>>>,
    /// Components absorbed smoothly, as `(component, coefficient)`.
    smooth_terms: Vec<(usize, f64)>,
    /// Linearization offsets: `ℓ_i(x) = offsets_i + ⟨s²_ik, x⟩`.
    offsets: Vec<f64>,
}

/// Builds the convexified master data at the current iterate.
fn assemble(problem: &CompositeProblem, state: &DcState) -> Result<DcAssembly> {
    let dc = problem.dc.as_ref().expect("checked at init");
    let n = problem.dim();
    let m = problem.map_dim();
    let canon = problem
        .h
        .pwl_canonical()
        .ok_or(Error::Unsupported("the outer function has no canonical piecewise-linear form"))?;
    let offsets: Vec<f64> =
        (0..m).map(|i| state.f2_values[i] - dot(&state.s2[i], &state.x)).collect();
    let mut blocks = Vec::new();
    let mut prov: Vec<Vec<Vec<(usize, f64)>>> = Vec::new();
    let mut smooth_terms = Vec::new();
    for (j, &coeff) in canon.lin.iter().enumerate() {
        if coeff == 0.0 {
            continue;
        }
        if coeff < 0.0 {
            return Err(Error::Unsupported("outer function decreases in a component"));
        }
        match &dc.components[j].f1 {
            ConvexPart::Smooth(_) => smooth_terms.push((j, coeff)),
            ConvexPart::MaxAffine { pieces } => {
                // coeff · (max_l(d_l + ⟨e_l, x⟩) − ℓ_j(x)) as one block; the
                // multiplier mass is the linear coefficient itself.
                let mut ps = Vec::with_capacity(pieces.len());
                for (d, e) in pieces {
                    let mut ex = vec![0.0; n];
                    for i in 0..n {
                        ex[i] = coeff * (e[i] - state.s2[j][i]);
                    }
                    ps.push((coeff * (d - offsets[j]), ex));
                }
                blocks.push(MasterBlock { pieces: ps });
                prov.push(vec![Vec::new(); blocks.last().unwrap().pieces.len()]);
            }
        }
    }
    for block in &canon.blocks {
        let mut pieces: Vec<(f64, Vec<f64>)> = Vec::new();
        let mut p: Vec<Vec<(usize, f64)>> = Vec::new();
        for (d0, e0) in &block.pieces {
            let nz: Vec<usize> = (0..e0.len()).filter(|&j| e0[j] != 0.0).collect();
            if nz.iter().any(|&j| e0[j] < 0.0) {
                return Err(Error::Unsupported("outer function decreases in a component"));
            }
            let mut piece_lists: Vec<&[(f64, Vec<f64>)]> = Vec::with_capacity(nz.len());
            for &j in &nz {
                match &dc.components[j].f1 {
                    ConvexPart::MaxAffine { pieces } => piece_lists.push(pieces),
                    ConvexPart::Smooth(_) => {
                        return Err(Error::Unsupported(
                            "smooth convex part inside a nonsmooth wrapper block",
                        ))
                    }
                }
            }
            let mut total = 1usize;
            for list in &piece_lists {
                total = total.saturating_mul(list.len().max(1));
            }
            if pieces.len().saturating_add(total) > EXPANSION_CAP {
                return Err(Error::Unsupported("outer wrapper block expands too far"));
            }
            if nz.is_empty() {
                pieces.push((*d0, vec![0.0; n]));
                p.push(Vec::new());
                continue;
            }
            let mut choice = vec![0usize; nz.len()];
            loop {
                let mut d = *d0;
                let mut e = vec![0.0; n];
                let mut sources = Vec::with_capacity(nz.len());
                for (pos, &j) in nz.iter().enumerate() {
                    let (dj, ej) = &piece_lists[pos][choice[pos]];
                    d += e0[j] * (dj - offsets[j]);
                    for i in 0..n {
                        e[i] += e0[j] * (ej[i] - state.s2[j][i]);
                    }
                    sources.push((j, e0[j]));
                }
                pieces.push((d, e));
                p.push(sources);
                let mut pos = 0;
                loop {
                    if pos == nz.len() {
                        break;
                    }
                    choice[pos] += 1;
                    if choice[pos] < piece_lists[pos].len() {
                        break;
                    }
                    choice[pos] = 0;
                    pos += 1;
                }
                if pos == nz.len() {
                    break;
                }
            }
        }
        blocks.push(MasterBlock { pieces });
        prov.push(p);
    }
    // Provenance rows were only recorded for wrapper blocks; pad the
    // MaxAffine-under-linear blocks (whose rows are empty) to align.
    debug_assert_eq!(prov.len(), blocks.len());
    Ok(DcAssembly {
        pwl: MasterPwl { lin0: canon.lin0, lin: vec![0.0; n], blocks },
        prov,
        smooth_terms,
        offsets,
    })
}

/// The majorant image `F̄_k(x)` componentwise.
fn majorant_image(
    problem: &CompositeProblem,
    state: &DcState,
    offsets: &[f64],
    x: &[f64],
) -> Vec<f64> {
    let dc = problem.dc.as_ref().expect("checked at init");
    (0..problem.map_dim())
        .map(|j| dc.components[j].f1.value(x) - offsets[j] - dot(&state.s2[j], x))
        .collect()
}

/// Runs one convexification iteration: solve the convexified master,
/// measure the predicted decrease and the linearization gap, and move
/// unless both stopping tests fire.
pub fn dc_step(
    state: &mut DcState,
    problem: &CompositeProblem,
    config: &DcConfig,
) -> Result<(DcIterationRecord, DcStepData)> {
    let dc = problem.dc.as_ref().ok_or(Error::Missing("difference-of-convex split"))?;
    let m = problem.map_dim();
    let assembly = assemble(problem, state)?;
    let value_closure = |x: &[f64]| {
        let mut v = problem.f0.value(x);
        for &(j, coeff) in &assembly.smooth_terms {
            v += coeff
                * (dc.components[j].f1.value(x) - assembly.offsets[j] - dot(&state.s2[j], x));
        }
        v
    };
    let grad_closure = |x: &[f64], g: &mut [f64]| {
        problem.f0.gradient_into(x, g);
        let mut tmp = vec![0.0; x.len()];
        for &(j, coeff) in &assembly.smooth_terms {
            dc.components[j].f1.subgradient_into(x, &mut tmp);
            for i in 0..x.len() {
                g[i] += coeff * (tmp[i] - state.s2[j][i]);
            }
        }
    };
    let smooth = MasterSmooth {
        value: &value_closure,
        gradient: &grad_closure,
        grad_lipschitz: if assembly.smooth_terms.is_empty() {
            problem.f0.grad_lipschitz
        } else {
            None
        },
    };
    let sol = solve_master(&problem.set, &smooth, &assembly.pwl, config.t, &state.x, &config.master)?;
    let x_next = sol.x;
    let step_norm = nrm2(&sub(&x_next, &state.x));
    let z_next = majorant_image(problem, state, &assembly.offsets, &x_next);
    let majorant_value = problem.f0.value(&x_next) + problem.h.value(&z_next);
    let v = state.objective - majorant_value;
    // Linearization gap of the concave parts at the candidate.
    let mut e_gap = 0.0f64;
    for j in 0..m {
        let lin = state.f2_values[j] + dot(&state.s2[j], &x_next) - dot(&state.s2[j], &state.x);
        let gap = dc.components[j].f2.value(&x_next) - lin;
        e_gap = e_gap.max(gap);
    }
    e_gap = e_gap.max(0.0);
    // Outer multipliers: the canonical linear part plus the wrapper blocks'
    // weighted coefficients.
    let mut y_next = {
        let canon = problem.h.pwl_canonical().expect("assembled above");
        canon.lin
    };
    for (b, rows) in assembly.prov.iter().enumerate() {
        for (p, sources) in rows.iter().enumerate() {
            let a = sol.alpha[b][p].max(0.0);
            if a == 0.0 {
                continue;
            }
            for &(j, c) in sources {
                y_next[j] += a * c;
            }
        }
    }
    let fx_next = problem.image(&x_next);
    let objective_next = problem.f0.value(&x_next) + problem.h.value(&fx_next);
    let breakdown = residual_with_mode(problem, DerivativeMode::DcPair, &x_next, &y_next, &fx_next)?;
    let certificate = Certificate { y: y_next.clone(), z: fx_next.clone(), breakdown };
    let stop = v <= config.tol && e_gap <= config.tol;
    let record = DcIterationRecord {
        k: state.k,
        step: if stop { StepKind::Stop } else { StepKind::Serious },
        v,
        e: e_gap,
        step_norm,
        objective: objective_next,
        residual: certificate.breakdown.total,
    };
    let data = DcStepData { x: x_next, y: y_next, z: z_next, fx: fx_next, certificate };
    if !stop {
        state.x = data.x.clone();
        state.objective = objective_next;
        state.k += 1;
        refresh_concave_data(state, problem);
    }
    Ok((record, data))
}

/// Computable termination bound for a convexification step; see
/// [`DcEpsilonCertificate`].
pub fn dc_epsilon_certificate(
    problem: &CompositeProblem,
    state_before: &DcState,
    data: &DcStepData,
    e_gap: f64,
    config: &DcConfig,
) -> DcEpsilonCertificate {
    let primal_term = nrm2(&sub(&data.fx, &data.z));
    let step_term = nrm2(&sub(&data.x, &state_before.x)) / config.t;
    let (witness_term, witness_exact) = if e_gap <= config.e {
        (0.0, true)
    } else {
        // Measured discrepancy between the frozen slopes and fresh witness
        // slopes at the candidate, weighted by the multipliers.
        let dc = problem.dc.as_ref().expect("checked at init");
        let n = problem.dim();
        let mut acc = vec![0.0; n];
        let mut g = vec![0.0; n];
        for j in 0..problem.map_dim() {
            if data.y[j] == 0.0 {
                continue;
            }
            dc.components[j].f2.subgradient(&data.x, &mut g);
            for i in 0..n {
                acc[i] += data.y[j] * (state_before.s2[j][i] - g[i]);
            }
        }
        (nrm2(&acc), false)
    };
    let epsilon = sqrt(
        primal_term * primal_term + step_term * step_term + witness_term * witness_term,
    );
    DcEpsilonCertificate { epsilon, primal_term, step_term, witness_term, witness_exact }
}

/// Runs the convexification iteration from `x0` until both stopping tests
/// fire or the iteration cap is reached.
pub fn dc_run(problem: &CompositeProblem, config: &DcConfig, x0: &[f64]) -> Result<DcResult> {
    let mut state = dc_init(problem, x0, config)?;
    let mut records = Vec::new();
    let mut last: Option<(DcState, DcStepData, f64)> = None;
    while state.k < config.max_iter {
        let x_before = state.x.clone();
        let f2_before = state.f2_values.clone();
        let s2_before = state.s2.clone();
        let obj_before = state.objective;
        let k_before = state.k;
        let (record, data) = dc_step(&mut state, problem, config)?;
        let stop = record.step == StepKind::Stop;
        let (v, e) = (record.v, record.e);
        records.push(record);
        let before = DcState {
            x: x_before,
            objective: obj_before,
            f2_values: f2_before,
            s2: s2_before,
            k: k_before,
        };
        let epsilon = dc_epsilon_certificate(problem, &before, &data, e, config);
        if stop {
            let value = problem.objective(&data.x);
            return Ok(DcResult {
                value,
                converged: true,
                iterations: state.k,
                final_v: v,
                final_e: e,
                records,
                certificate: data.certificate.clone(),
                epsilon,
                x: data.x,
                y: data.y,
                z: data.z,
            });
        }
        last = Some((before, data, e));
    }
    // Iteration cap: report the current iterate.
    let y = problem.h.subgradient(&problem.image(&state.x));
    let fx = problem.image(&state.x);
    let breakdown = residual_with_mode(problem, DerivativeMode::DcPair, &state.x, &y, &fx)?;
    let certificate = Certificate { y: y.clone(), z: fx.clone(), breakdown };
    let epsilon = match &last {
        Some((before, data, e)) => dc_epsilon_certificate(problem, before, data, *e, config),
        None => DcEpsilonCertificate {
            epsilon: 0.0,
            primal_term: 0.0,
            step_term: 0.0,
            witness_term: 0.0,
            witness_exact: true,
        },
    };
    let final_v = records.last().map(|r| r.v).unwrap_or(0.0);
    let final_e = records.last().map(|r| r.e).unwrap_or(0.0);
    Ok(DcResult {
        x: state.x.clone(),
        y,
        z: fx,
        value: state.objective,
        converged: false,
        iterations: state.k,
        final_v,
        final_e,
        records,
        certificate,
        epsilon,
    })
}

/// Convex part of the squared-distance split: `f²(x) = max_{u ∈ K} (2⟨x, u⟩
/// − ‖u‖²) = ‖x‖² − dist²(x, K)`, whose witness subgradient is twice the
/// projection. Together with `f¹(x) = ‖x‖²` this makes `f¹ − f² = dist²(·, K)`
/// for any closed set with a projection oracle.
pub struct DistanceConvexPart {
    /// Target set.
    pub set: FeasibleSet,
}

impl Convex for DistanceConvexPart {
    fn value(&self, x: &[f64]) -> f64 {
        let p = self.set.project(x);
        let d = sub(x, &p);
        dot(x, x) - dot(&d, &d)
    }
    fn subgradient(&self, x: &[f64], g: &mut [f64]) {
        let p = self.set.project(x);
        for i in 0..g.len() {
            g[i] = 2.0 * p[i];
        }
    }
}

/// Runs the projection-based iteration for weighted squared-distance
/// penalties: each step averages the projections onto the target sets with
/// the prox pull toward the current iterate,
/// `p̂ = (Σ ρ_i p_i + x/t) / (1/t + Σ ρ_i)`, then proximally minimizes the
/// smooth term around `p̂`. This is the same majorant the convexification
/// iteration builds for this structure, so the two runs trace identical
/// iterates.
pub fn proximal_distance_run(
    problem: &CompositeProblem,
    config: &DcConfig,
    x0: &[f64],
) -> Result<DcResult> {
    config.validate()?;
    if x0.len() != problem.dim() {
        return Err(Error::Dimension { expected: problem.dim(), got: x0.len() });
    }
    let form = problem.distance.as_ref().ok_or(Error::Missing("distance structure"))?;
    let n = problem.dim();
    let rho_sum: f64 = form.weights.iter().sum();
    let mu = 1.0 / config.t + rho_sum;
    let mut x = problem.set.project(x0);
    let mut records = Vec::new();
    let mut objective = distance_objective(problem, form, &x);
    let mut k = 0usize;
    let f0v = |p: &[f64]| problem.f0.value(p);
    let f0g = |p: &[f64], g: &mut [f64]| problem.f0.gradient_into(p, g);
    let zero_pwl = MasterPwl::constant(n, 0.0);
    let mut last: Option<(Vec<f64>, Vec<Vec<f64>>, DcStepData, f64)> = None;
    while k < config.max_iter {
        let projections: Vec<Vec<f64>> = form.sets.iter().map(|s| s.project(&x)).collect();
        let mut anchor = vec![0.0; n];
        for (p, &w) in projections.iter().zip(&form.weights) {
            for i in 0..n {
                anchor[i] += w * p[i];
            }
        }
        for i in 0..n {
            anchor[i] = (anchor[i] + x[i] / config.t) / mu;
        }
        let smooth = MasterSmooth {
            value: &f0v,
            gradient: &f0g,
            grad_lipschitz: problem.f0.grad_lipschitz,
        };
        let sol = solve_master(&problem.set, &smooth, &zero_pwl, 1.0 / mu, &anchor, &config.master)?;
        let x_next = sol.x;
        let step_norm = nrm2(&sub(&x_next, &x));
        // Majorant value at the candidate: frozen projections.
        let mut majorant = problem.f0.value(&x_next);
        let mut z_next = Vec::with_capacity(form.sets.len());
        for (p, &w) in projections.iter().zip(&form.weights) {
            let d = sub(&x_next, p);
            let sq = dot(&d, &d);
            majorant += 0.5 * w * sq;
            z_next.push(sq);
        }
        let v = objective - majorant;
        // Linearization gap of the implied concave parts `‖·‖² − dist²`,
        // whose witness slope at x_k is twice the frozen projection.
        let mut e_gap = 0.0f64;
        for (p, set) in projections.iter().zip(&form.sets) {
            let d_old = sub(&x, p);
            let pn = set.project(&x_next);
            let dn = sub(&x_next, &pn);
            let fresh = dot(&x_next, &x_next) - dot(&dn, &dn);
            let lin =
                dot(&x, &x) - dot(&d_old, &d_old) + 2.0 * dot(p, &sub(&x_next, &x));
            e_gap = e_gap.max(fresh - lin);
        }
        e_gap = e_gap.max(0.0);
        let fx_next = problem.image(&x_next);
        let objective_next = problem.f0.value(&x_next) + problem.h.value(&fx_next);
        let y_next = problem.h.subgradient(&fx_next);
        let mode = if problem.dc.is_some() {
            DerivativeMode::DcPair
        } else {
            DerivativeMode::SmoothGradient
        };
        let breakdown = residual_with_mode(problem, mode, &x_next, &y_next, &fx_next)?;
        let certificate = Certificate { y: y_next.clone(), z: fx_next.clone(), breakdown };
        let stop = v <= config.tol && e_gap <= config.tol;
        records.push(DcIterationRecord {
            k,
            step: if stop { StepKind::Stop } else { StepKind::Serious },
            v,
            e: e_gap,
            step_norm,
            objective: objective_next,
            residual: certificate.breakdown.total,
        });
        let data = DcStepData {
            x: x_next.clone(),
            y: y_next,
            z: z_next,
            fx: fx_next,
            certificate,
        };
        if stop {
            let epsilon = distance_epsilon(problem, form, &x, &projections, &data, e_gap, config);
            let value = problem.objective(&data.x);
            return Ok(DcResult {
                value,
                converged: true,
                iterations: k,
                final_v: v,
                final_e: e_gap,
                records,
                certificate: data.certificate.clone(),
                epsilon,
                x: data.x,
                y: data.y,
                z: data.z,
            });
        }
        x = data.x.clone();
        objective = objective_next;
        k += 1;
        last = Some((x.clone(), projections, data, e_gap));
    }
    let fx = problem.image(&x);
    let y = problem.h.subgradient(&fx);
    let mode = if problem.dc.is_some() {
        DerivativeMode::DcPair
    } else {
        DerivativeMode::SmoothGradient
    };
    let breakdown = residual_with_mode(problem, mode, &x, &y, &fx)?;
    let certificate = Certificate { y: y.clone(), z: fx.clone(), breakdown };
    let epsilon = match &last {
        Some((x_before, projections, data, e_gap)) => {
            distance_epsilon(problem, form, x_before, projections, data, *e_gap, config)
        }
        None => DcEpsilonCertificate {
            epsilon: 0.0,
            primal_term: 0.0,
            step_term: 0.0,
            witness_term: 0.0,
            witness_exact: true,
        },
    };
    let final_v = records.last().map(|r| r.v).unwrap_or(0.0);
    let final_e = records.last().map(|r| r.e).unwrap_or(0.0);
    Ok(DcResult {
        x: x.clone(),
        y,
        z: fx,
        value: objective,
        converged: false,
        iterations: k,
        final_v,
        final_e,
        records,
        certificate,
        epsilon,
    })
}

/// Objective under the distance structure (agrees with the composite
/// objective when the instance is consistent).
fn distance_objective(
    problem: &CompositeProblem,
    form: &crate::problem::DistanceForm,
    x: &[f64],
) -> f64 {
    let mut v = problem.f0.value(x);
    for (set, &w) in form.sets.iter().zip(&form.weights) {
        let p = set.project(x);
        let d = sub(x, &p);
        v += 0.5 * w * dot(&d, &d);
    }
    v
}

/// Termination bound for the projection-based iteration, mirroring the
/// convexification bound with `z⁺` the frozen-projection image.
fn distance_epsilon(
    problem: &CompositeProblem,
    form: &crate::problem::DistanceForm,
    x_before: &[f64],
    projections: &[Vec<f64>],
    data: &DcStepData,
    e_gap: f64,
    config: &DcConfig,
) -> DcEpsilonCertificate {
    let primal_term = nrm2(&sub(&data.fx, &data.z));
    let step_term = nrm2(&sub(&data.x, x_before)) / config.t;
    let (witness_term, witness_exact) = if e_gap <= config.e {
        (0.0, true)
    } else {
        let n = problem.dim();
        let mut acc = vec![0.0; n];
        for ((p_old, set), &yj) in projections.iter().zip(&form.sets).zip(&data.y) {
            if yj == 0.0 {
                continue;
            }
            let p_new = set.project(&data.x);
            for i in 0..n {
                acc[i] += yj * 2.0 * (p_old[i] - p_new[i]);
            }
        }
        (nrm2(&acc), false)
    };
    let epsilon = sqrt(
        primal_term * primal_term + step_term * step_term + witness_term * witness_term,
    );
    DcEpsilonCertificate { epsilon, primal_term, step_term, witness_term, witness_exact }
}
