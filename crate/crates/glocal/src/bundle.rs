//! Composite proximal bundle method: the inner solver that drives a
//! cutting-plane lower model of the outer function through proximal master
//! problems with a two-stage descent test and adaptive prox-parameter
//! management.
//!
//! Each iteration linearizes the smooth inner mapping at the current center
//! `x̂`, minimizes `f0(x) + 𝔥(F(x̂) + ∇F(x̂)(x − x̂)) + (1/2t)‖x − x̂‖²` over
//! the feasible set, and classifies the candidate:
//!
//! * predicted decrease within tolerance → stop;
//! * both descent tests pass → serious step (the center moves);
//! * only the model-image test passes → backtracking step (the true image
//!   contradicts the linearization, so the proximal radius shrinks by `τ`);
//! * otherwise → null step (the model is enriched near the center).
//!
//! The predicted decrease `v = f(x̂) − (f0(x⁺) + 𝔥(z⁺))` doubles as the
//! stopping measure; because the model interpolates the outer function at
//! the center image, every master solution satisfies
//! `(1/2t)‖x⁺ − x̂‖² ≤ v`.

use crate::error::{Error, Result};
use crate::linalg::{dot, nrm2, sub, Mat};
use crate::master::{solve_master, MasterBlock, MasterConfig, MasterPwl, MasterSmooth};
use crate::model::{CutTag, CuttingPlaneModel, Linearization, SeriousCutPolicy, StructuredModel};
use crate::problem::CompositeProblem;
use crate::stationarity::{best_certificate, Certificate};
use crate::util::sqrt;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Parameters of the bundle iteration.
#[derive(Clone, Debug)]
pub struct BundleConfig {
    /// Descent fraction `κ ∈ (0, 1)` of the first test; the second test uses
    /// `κ/2`.
    pub kappa: f64,
    /// Backtracking divisor `τ > 1`.
    pub tau: f64,
    /// Initial lower prox bound `t̲` (may shrink through backtracking).
    pub t_lower0: f64,
    /// Initial prox parameter.
    pub t0: f64,
    /// Upper prox bound.
    pub t_max: f64,
    /// Stopping tolerance on the predicted decrease.
    pub tol: f64,
    /// Iteration cap.
    pub max_iter: usize,
    /// What happens to old cuts when the center moves.
    pub serious_policy: SeriousCutPolicy,
    /// Model the outer function through its composition structure (requires
    /// a composed outer function on the problem).
    pub structured: bool,
    /// Cut budget per model (per component when structured).
    pub max_cuts: usize,
    /// Activity tolerance used by cut retention.
    pub activity_tol: f64,
    /// Kink-snapping radius for certificate search.
    pub snap_tol: f64,
    /// Master subproblem tolerances.
    pub master: MasterConfig,
}

impl Default for BundleConfig {
    fn default() -> Self {
        BundleConfig {
            kappa: 0.1,
            tau: 2.0,
            t_lower0: 1e-6,
            t0: 1.0,
            t_max: 100.0,
            tol: 1e-8,
            max_iter: 500,
            serious_policy: SeriousCutPolicy::KeepActive,
            structured: false,
            max_cuts: 50,
            activity_tol: 1e-12,
            snap_tol: 1e-6,
            master: MasterConfig::default(),
        }
    }
}

impl BundleConfig {
    /// Checks the parameter ranges.
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::Config {
                field: "kappa",
                message: format!("descent fraction must lie in (0, 1), got {}", self.kappa),
            });
        }
        if !(self.tau > 1.0) {
            return Err(Error::Config {
                field: "tau",
                message: format!("backtracking divisor must exceed 1, got {}", self.tau),
            });
        }
        if !(self.t_lower0 > 0.0 && self.t_lower0 < self.t0 && self.t0 < self.t_max) {
            return Err(Error::Config {
                field: "t0",
                message: format!(
                    "prox parameters must satisfy 0 < t_lower0 < t0 < t_max, got ({}, {}, {})",
                    self.t_lower0, self.t0, self.t_max
                ),
            });
        }
        if !self.t_max.is_finite() {
            return Err(Error::Config { field: "t_max", message: format!("must be finite, got {}", self.t_max) });
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config {
                field: "tol",
                message: format!("stopping tolerance must be nonnegative, got {}", self.tol),
            });
        }
        if self.max_cuts < 4 {
            return Err(Error::Config {
                field: "max_cuts",
                message: format!("cut budget must be at least 4, got {}", self.max_cuts),
            });
        }
        Ok(())
    }
}

/// Outcome of one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    /// Candidate accepted; the center moved.
    Serious,
    /// Candidate rejected; the model was enriched.
    Null,
    /// Candidate rejected because the true image contradicted the
    /// linearization; the prox parameter shrank.
    Backtracking,
    /// Predicted decrease within tolerance.
    Stop,
}

impl StepKind {
    /// Stable lowercase name (used by the log schema).
    pub fn name(self) -> &'static str {
        match self {
            StepKind::Serious => "serious",
            StepKind::Null => "null",
            StepKind::Backtracking => "backtracking",
            StepKind::Stop => "stop",
        }
    }
}

/// The lower model of the outer function, flat or per-component.
pub enum BundleModel {
    /// One cutting-plane model of the whole outer function.
    Flat(CuttingPlaneModel),
    /// Per-component models composed through the exact monotone wrapper.
    Structured(StructuredModel),
}

impl BundleModel {
    /// Total number of stored cuts.
    pub fn size(&self) -> usize {
        match self {
            BundleModel::Flat(m) => m.len(),
            BundleModel::Structured(s) => s.components.iter().map(|c| c.len()).sum(),
        }
    }
}

/// Mutable state of a bundle run.
pub struct BundleState {
    /// Current center `x̂` (always feasible).
    pub center: Vec<f64>,
    /// Objective `f0(x̂) + h(F(x̂))`.
    pub center_value: f64,
    /// Cached image `F(x̂)`.
    pub center_image: Vec<f64>,
    /// A subgradient of the outer function at the center image.
    pub center_slope: Vec<f64>,
    /// Lower model of the outer function.
    pub model: BundleModel,
    /// Current prox parameter `t`.
    pub t: f64,
    /// Current lower prox bound `t̲`.
    pub t_lower: f64,
    /// Completed iterations.
    pub k: usize,
    /// Guaranteed prox floor `κ/(2τ·L_h·L_F)` when both moduli are exact.
    pub floor: Option<f64>,
    /// Times the floor had to clamp an update that crossed it.
    pub floor_violations: usize,
    /// Smallest prox parameter used by any master solve so far.
    pub min_t: f64,
    /// Largest observed run of consecutive backtracking steps.
    pub max_backtrack_streak: usize,
    last_step: Option<StepKind>,
    backtrack_streak: usize,
}

/// One row of the iteration log.
#[derive(Clone, Debug)]
pub struct IterationRecord {
    /// Iteration index the step started from.
    pub k: usize,
    /// Classification of the step.
    pub step: StepKind,
    /// Predicted decrease `v`.
    pub v: f64,
    /// Prox parameter used by this master solve.
    pub t: f64,
    /// `‖x⁺ − x̂‖`.
    pub step_norm: f64,
    /// True objective at the candidate.
    pub objective: f64,
    /// Cuts in the model used by this master solve.
    pub model_size: usize,
    /// Measured certificate residual at the candidate.
    pub residual: f64,
}

/// Candidate data produced by one iteration (the step's master solution in
/// problem coordinates).
pub struct StepData {
    /// Candidate point `x⁺`.
    pub x: Vec<f64>,
    /// Outer multipliers recovered from the master.
    pub y: Vec<f64>,
    /// Linearized image the master optimized over.
    pub z: Vec<f64>,
    /// True image `F(x⁺)`.
    pub fx: Vec<f64>,
    /// Best measured certificate at the candidate.
    pub certificate: Certificate,
}

/// Computable surrogate of the termination certificate: with `z⋆ := F(x⁺)`
/// and `y⋆ := y⁺`, the bound is
/// `sqrt(‖F(x⁺) − z⋆‖² + (1/t_min²)‖x⁺ − x̂‖² + ‖(∇F(x⁺) − ∇F(x̂))ᵀy⁺‖²)`
/// whose first term vanishes by construction.
#[derive(Clone, Debug)]
pub struct EpsilonCertificate {
    /// The bound itself.
    pub epsilon: f64,
    /// `‖F(x⁺) − z⋆‖` (zero under the surrogate choice).
    pub primal_term: f64,
    /// `(1/t_min)‖x⁺ − x̂‖`.
    pub step_term: f64,
    /// `‖(∇F(x⁺) − ∇F(x̂))ᵀy⁺‖`.
    pub jacobian_term: f64,
    /// Prox floor used in the step term.
    pub t_min: f64,
    /// Whether `t_min` is the guaranteed floor (exact moduli) rather than
    /// the smallest observed prox parameter.
    pub t_min_exact: bool,
}

/// Aggregate statistics of a run.
#[derive(Clone, Debug)]
pub struct BundleStats {
    /// Serious steps taken.
    pub serious: usize,
    /// Null steps taken.
    pub null: usize,
    /// Backtracking steps taken.
    pub backtracking: usize,
    /// Smallest prox parameter used.
    pub min_t: f64,
    /// Guaranteed prox floor, when the moduli were exact.
    pub floor: Option<f64>,
    /// Times an update crossed the guaranteed floor and was clamped.
    pub floor_violations: usize,
    /// Longest run of consecutive backtracking steps.
    pub max_backtrack_streak: usize,
}

/// Result of a bundle run.
pub struct BundleResult {
    /// Final point (the stopping candidate, or the center on iteration-cap
    /// exit).
    pub x: Vec<f64>,
    /// Outer multipliers at the final point.
    pub y: Vec<f64>,
    /// Image variable at the final point.
    pub z: Vec<f64>,
    /// Objective at the final point.
    pub value: f64,
    /// Whether the predicted-decrease test fired before the iteration cap.
    pub converged: bool,
    /// Completed iterations.
    pub iterations: usize,
    /// Predicted decrease at the last master solve.
    pub final_v: f64,
    /// Per-iteration log.
    pub records: Vec<IterationRecord>,
    /// Best measured certificate at the final point.
    pub certificate: Certificate,
    /// Computable termination bound.
    pub epsilon: EpsilonCertificate,
    /// Run statistics.
    pub stats: BundleStats,
}

/// The guaranteed prox floor `κ/(2τ·L_h·L_F)`, available when the mapping
/// moduli are exact and both Lipschitz constants are finite and positive.
fn lemma_floor(problem: &CompositeProblem, config: &BundleConfig) -> Option<f64> {
    if !problem.mapping.lipschitz_exact {
        return None;
    }
    let lf = problem.mapping.mapping_lipschitz()?;
    let lh = problem.h.lipschitz_bound();
    if !(lf > 0.0) || !(lh > 0.0) || !lf.is_finite() || !lh.is_finite() {
        return None;
    }
    Some(config.kappa / (2.0 * config.tau * lh * lf))
}

/// Builds the initial state: projects the start point onto the feasible set
/// and seeds every model with its center cut.
pub fn bundle_init(
    problem: &CompositeProblem,
    x0: &[f64],
    config: &BundleConfig,
) -> Result<BundleState> {
    config.validate()?;
    if x0.len() != problem.dim() {
        return Err(Error::Dimension { expected: problem.dim(), got: x0.len() });
    }
    let center = problem.set.project(x0);
    let center_image = problem.image(&center);
    let center_value = problem.f0.value(&center) + problem.h.value(&center_image);
    if !center_value.is_finite() {
        return Err(Error::NotFinite("objective at the start point"));
    }
    let center_slope = problem.h.subgradient(&center_image);
    let model = if config.structured {
        let (_, comps) = problem
            .composed()
            .ok_or(Error::Unsupported("structured bundling needs a composed outer function"))?;
        let mut sm = StructuredModel::new(
            comps.len(),
            problem.map_dim(),
            config.max_cuts,
            config.activity_tol,
        );
        for (j, hj) in comps.iter().enumerate() {
            sm.components[j].add(Linearization::of(hj, &center_image, CutTag::Center));
        }
        BundleModel::Structured(sm)
    } else {
        let mut m =
            CuttingPlaneModel::new(problem.map_dim(), config.max_cuts, config.activity_tol);
        m.add(Linearization::of(&problem.h, &center_image, CutTag::Center));
        BundleModel::Flat(m)
    };
    let floor = lemma_floor(problem, config);
    let t_lower = match floor {
        Some(f) => config.t_lower0.max(f.min(config.t0)),
        None => config.t_lower0,
    };
    Ok(BundleState {
        center,
        center_value,
        center_image,
        center_slope,
        model,
        t: config.t0,
        t_lower,
        k: 0,
        floor,
        floor_violations: 0,
        min_t: config.t0,
        max_backtrack_streak: 0,
        last_step: None,
        backtrack_streak: 0,
    })
}

/// An x-space affine piece of a z-space cut: the cut composed with the
/// center linearization `z(x) = F(x̂) + ∇F(x̂)(x − x̂)`.
fn cut_to_x(cut: &Linearization, jac: &Mat, fxhat: &[f64], center: &[f64]) -> (f64, Vec<f64>) {
    let n = center.len();
    let mut e = vec![0.0; n];
    jac.tr_matvec(&cut.slope, &mut e);
    let mut d = cut.value - dot(&e, center);
    for i in 0..fxhat.len() {
        d += cut.slope[i] * (fxhat[i] - cut.anchor[i]);
    }
    (d, e)
}

/// Master assembly: the piecewise-linear part in x-space plus, for every
/// piece, which component cuts it came from with which coefficients. The
/// provenance drives multiplier recovery and aggregate-cut construction.
struct Assembly {
    pwl: MasterPwl,
    /// `prov[block][piece] = [(component, cut, coefficient)]`.
    prov: Vec<Vec<Vec<(usize, usize, f64)>>>,
    /// Cuts per component model at assembly time.
    cut_counts: Vec<usize>,
    model_size: usize,
}

impl Assembly {
    /// Per-component cut weights `Σ_pieces α·coefficient` implied by the
    /// master multipliers.
    fn cut_weights(&self, alpha: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut w: Vec<Vec<f64>> = self.cut_counts.iter().map(|&c| vec![0.0; c]).collect();
        for (b, pieces) in self.prov.iter().enumerate() {
            for (p, sources) in pieces.iter().enumerate() {
                let a = alpha[b][p].max(0.0);
                if a == 0.0 {
                    continue;
                }
                for &(j, l, c) in sources {
                    w[j][l] += a * c;
                }
            }
        }
        w
    }
}

/// Assembles the master for a flat model: one block, one piece per cut.
fn assemble_flat(
    model: &CuttingPlaneModel,
    jac: &Mat,
    fxhat: &[f64],
    center: &[f64],
) -> Assembly {
    let n = center.len();
    let mut pieces = Vec::with_capacity(model.len());
    let mut prov = Vec::with_capacity(model.len());
    for (l, cut) in model.cuts().iter().enumerate() {
        pieces.push(cut_to_x(cut, jac, fxhat, center));
        prov.push(vec![(0usize, l, 1.0)]);
    }
    Assembly {
        pwl: MasterPwl { lin0: 0.0, lin: vec![0.0; n], blocks: vec![MasterBlock { pieces }] },
        prov: vec![prov],
        cut_counts: vec![model.len()],
        model_size: model.len(),
    }
}

/// Cap on the product expansion of one composed block.
const EXPANSION_CAP: usize = 256;

/// Assembles the master for a structured model: the monotone wrapper's
/// canonical piecewise-linear form with every component input replaced by
/// that component's cutting-plane model.
fn assemble_structured(
    problem: &CompositeProblem,
    sm: &StructuredModel,
    jac: &Mat,
    fxhat: &[f64],
    center: &[f64],
) -> Result<Assembly> {
    let n = center.len();
    let (h0, _) = problem
        .composed()
        .ok_or(Error::Unsupported("structured bundling needs a composed outer function"))?;
    let canon = h0
        .pwl_canonical()
        .ok_or(Error::Unsupported("the composed wrapper has no canonical piecewise-linear form"))?;
    // x-space image of every component cut.
    let cuts_x: Vec<Vec<(f64, Vec<f64>)>> = sm
        .components
        .iter()
        .map(|m| m.cuts().iter().map(|c| cut_to_x(c, jac, fxhat, center)).collect())
        .collect();
    let cut_counts: Vec<usize> = sm.components.iter().map(|m| m.len()).collect();
    let mut blocks = Vec::new();
    let mut prov = Vec::new();
    // Linear terms over component values become their own blocks, since the
    // component is known only through its (max-affine) model.
    for (j, &coeff) in canon.lin.iter().enumerate() {
        if coeff == 0.0 {
            continue;
        }
        if coeff < 0.0 {
            return Err(Error::Unsupported(
                "composed wrapper decreases in a modeled component",
            ));
        }
        let mut pieces = Vec::with_capacity(cut_counts[j]);
        let mut p = Vec::with_capacity(cut_counts[j]);
        for (l, (d, e)) in cuts_x[j].iter().enumerate() {
            let mut es = vec![0.0; n];
            for i in 0..n {
                es[i] = coeff * e[i];
            }
            pieces.push((coeff * d, es));
            p.push(vec![(j, l, coeff)]);
        }
        blocks.push(MasterBlock { pieces });
        prov.push(p);
    }
    // Each wrapper block expands over the product of its components' cuts.
    for block in &canon.blocks {
        let mut pieces = Vec::new();
        let mut p = Vec::new();
        for (d0, e0) in &block.pieces {
            let nz: Vec<usize> = (0..e0.len()).filter(|&j| e0[j] != 0.0).collect();
            if nz.iter().any(|&j| e0[j] < 0.0) {
                return Err(Error::Unsupported(
                    "composed wrapper decreases in a modeled component",
                ));
            }
            let mut total = 1usize;
            for &j in &nz {
                total = total.saturating_mul(cut_counts[j].max(1));
            }
            if pieces.len().saturating_add(total) > EXPANSION_CAP {
                return Err(Error::Unsupported("composed wrapper block expands too far"));
            }
            if nz.is_empty() {
                pieces.push((*d0, vec![0.0; n]));
                p.push(Vec::new());
                continue;
            }
            // Odometer over one cut choice per involved component.
            let mut choice = vec![0usize; nz.len()];
            loop {
                let mut d = *d0;
                let mut e = vec![0.0; n];
                let mut sources = Vec::with_capacity(nz.len());
                for (pos, &j) in nz.iter().enumerate() {
                    let l = choice[pos];
                    let (dj, ej) = &cuts_x[j][l];
                    d += e0[j] * dj;
                    for i in 0..n {
                        e[i] += e0[j] * ej[i];
                    }
                    sources.push((j, l, e0[j]));
                }
                pieces.push((d, e));
                p.push(sources);
                // Advance the odometer.
                let mut pos = 0;
                loop {
                    if pos == nz.len() {
                        break;
                    }
                    choice[pos] += 1;
                    if choice[pos] < cut_counts[nz[pos]] {
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
    let model_size = cut_counts.iter().sum();
    Ok(Assembly {
        pwl: MasterPwl { lin0: canon.lin0, lin: vec![0.0; n], blocks },
        prov,
        cut_counts,
        model_size,
    })
}

/// Runs one bundle iteration: solve the master, classify the candidate,
/// update the prox parameter and the model.
pub fn bundle_step(
    state: &mut BundleState,
    problem: &CompositeProblem,
    config: &BundleConfig,
) -> Result<(IterationRecord, StepData)> {
    let m = problem.map_dim();
    let jac = problem.mapping.jacobian(&state.center);
    let assembly = match &state.model {
        BundleModel::Flat(model) => assemble_flat(model, &jac, &state.center_image, &state.center),
        BundleModel::Structured(sm) => {
            assemble_structured(problem, sm, &jac, &state.center_image, &state.center)?
        }
    };
    let f0v = |x: &[f64]| problem.f0.value(x);
    let f0g = |x: &[f64], g: &mut [f64]| problem.f0.gradient_into(x, g);
    let smooth = MasterSmooth {
        value: &f0v,
        gradient: &f0g,
        grad_lipschitz: problem.f0.grad_lipschitz,
    };
    state.min_t = state.min_t.min(state.t);
    let sol = solve_master(
        &problem.set,
        &smooth,
        &assembly.pwl,
        state.t,
        &state.center,
        &config.master,
    )?;
    let x_next = sol.x;
    let dx = sub(&x_next, &state.center);
    let step_norm = nrm2(&dx);
    let mut z_next = state.center_image.clone();
    let mut jdx = vec![0.0; m];
    jac.matvec(&dx, &mut jdx);
    for i in 0..m {
        z_next[i] += jdx[i];
    }
    let f0_next = problem.f0.value(&x_next);
    let v = state.center_value - (f0_next + sol.pwl_value);
    // Multipliers and aggregates from the master weights, per component.
    let weights = assembly.cut_weights(&sol.alpha);
    let mut y_next = vec![0.0; m];
    let mut aggregates: Vec<Linearization> = Vec::new();
    {
        let component_models: Vec<&CuttingPlaneModel> = match &state.model {
            BundleModel::Flat(model) => vec![model],
            BundleModel::Structured(sm) => sm.components.iter().collect(),
        };
        for (j, model) in component_models.iter().enumerate() {
            let wj = &weights[j];
            let lam: f64 = wj.iter().sum();
            if lam > 1e-15 {
                let normalized: Vec<f64> = wj.iter().map(|w| w / lam).collect();
                let agg = model.aggregate(&normalized, &z_next);
                for i in 0..m {
                    y_next[i] += lam * agg.slope[i];
                }
                aggregates.push(agg);
            } else {
                // No mass on this component's cuts: fall back to the model's
                // own supporting plane at the candidate image.
                aggregates.push(Linearization {
                    anchor: z_next.clone(),
                    value: model.evaluate(&z_next),
                    slope: model.subgradient(&z_next),
                    tag: CutTag::Aggregate,
                });
            }
        }
    }
    let fx_next = problem.image(&x_next);
    let obj_next = f0_next + problem.h.value(&fx_next);
    let certificate = best_certificate(problem, &x_next, &y_next, &z_next, config.snap_tol)?;
    let mut record = IterationRecord {
        k: state.k,
        step: StepKind::Stop,
        v,
        t: state.t,
        step_norm,
        objective: obj_next,
        model_size: assembly.model_size,
        residual: certificate.breakdown.total,
    };
    let data = StepData { x: x_next, y: y_next, z: z_next, fx: fx_next, certificate };
    if v <= config.tol {
        // Algorithm stopping test, evaluated before the descent tests.
        return Ok((record, data));
    }
    let first = f0_next + problem.h.value(&data.z) <= state.center_value - config.kappa * v;
    let second = obj_next <= state.center_value - 0.5 * config.kappa * v;
    let step = if first && second {
        StepKind::Serious
    } else if first {
        StepKind::Backtracking
    } else {
        StepKind::Null
    };
    record.step = step;
    match step {
        StepKind::Serious => {
            if state.last_step == Some(StepKind::Serious) {
                state.t = config.t_max.min(1.5 * state.t);
            }
            state.center = data.x.clone();
            state.center_image = data.fx.clone();
            state.center_value = obj_next;
            state.center_slope = problem.h.subgradient(&data.fx);
            match &mut state.model {
                BundleModel::Flat(model) => {
                    let cut = Linearization::of(&problem.h, &state.center_image, CutTag::Center);
                    model.update_after_serious(config.serious_policy, cut, &state.center_image);
                }
                BundleModel::Structured(sm) => {
                    let (_, comps) = problem.composed().expect("checked at init");
                    for (j, hj) in comps.iter().enumerate() {
                        let cut = Linearization::of(hj, &state.center_image, CutTag::Center);
                        sm.components[j].update_after_serious(
                            config.serious_policy,
                            cut,
                            &state.center_image,
                        );
                    }
                }
            }
            state.backtrack_streak = 0;
        }
        StepKind::Backtracking => {
            let mut t_new = state.t / config.tau;
            if let Some(floor) = state.floor {
                if t_new < floor {
                    if t_new < floor * (1.0 - 1e-12) {
                        state.floor_violations += 1;
                    }
                    t_new = floor;
                }
            }
            state.t_lower = state.t_lower.min(t_new);
            state.t = t_new;
            update_models_after_null(state, problem, &data, &aggregates);
            state.backtrack_streak += 1;
            state.max_backtrack_streak = state.max_backtrack_streak.max(state.backtrack_streak);
        }
        StepKind::Null => {
            state.t = state.t_lower.max(0.9 * state.t);
            update_models_after_null(state, problem, &data, &aggregates);
            state.backtrack_streak = 0;
        }
        StepKind::Stop => unreachable!("handled above"),
    }
    state.k += 1;
    state.last_step = Some(step);
    Ok((record, data))
}

/// Adds the trial and aggregate cuts after a rejected candidate.
fn update_models_after_null(
    state: &mut BundleState,
    problem: &CompositeProblem,
    data: &StepData,
    aggregates: &[Linearization],
) {
    let probe = state.center_image.clone();
    match &mut state.model {
        BundleModel::Flat(model) => {
            let trial = Linearization::of(&problem.h, &data.z, CutTag::Trial);
            model.update_after_null(trial, Some(aggregates[0].clone()), &probe);
        }
        BundleModel::Structured(sm) => {
            let (_, comps) = problem.composed().expect("checked at init");
            for (j, hj) in comps.iter().enumerate() {
                let trial = Linearization::of(hj, &data.z, CutTag::Trial);
                sm.components[j].update_after_null(trial, Some(aggregates[j].clone()), &probe);
            }
        }
    }
}

/// Computable termination bound from the final candidate: see
/// [`EpsilonCertificate`].
pub fn epsilon_certificate(
    problem: &CompositeProblem,
    center: &[f64],
    x_next: &[f64],
    y_next: &[f64],
    t_min: f64,
    t_min_exact: bool,
) -> EpsilonCertificate {
    let n = problem.dim();
    let step_term = nrm2(&sub(x_next, center)) / t_min;
    let j_next = problem.mapping.jacobian(x_next);
    let j_center = problem.mapping.jacobian(center);
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    j_next.tr_matvec(y_next, &mut a);
    j_center.tr_matvec(y_next, &mut b);
    let jacobian_term = nrm2(&sub(&a, &b));
    let primal_term = 0.0;
    let epsilon = sqrt(primal_term * primal_term + step_term * step_term + jacobian_term * jacobian_term);
    EpsilonCertificate { epsilon, primal_term, step_term, jacobian_term, t_min, t_min_exact }
}

/// Runs the bundle method from `x0` until the stopping test fires or the
/// iteration cap is reached.
pub fn bundle_run(
    problem: &CompositeProblem,
    config: &BundleConfig,
    x0: &[f64],
) -> Result<BundleResult> {
    let mut state = bundle_init(problem, x0, config)?;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut serious = 0usize;
    let mut null = 0usize;
    let mut backtracking = 0usize;
    let mut last: Option<(Vec<f64>, StepData)> = None;
    while state.k < config.max_iter {
        let center_before = state.center.clone();
        let (record, data) = bundle_step(&mut state, problem, config)?;
        let kind = record.step;
        records.push(record);
        match kind {
            StepKind::Stop => {
                let (t_min, t_min_exact) = match state.floor {
                    Some(f) => (f, true),
                    None => (state.min_t, false),
                };
                let epsilon = epsilon_certificate(
                    problem,
                    &center_before,
                    &data.x,
                    &data.y,
                    t_min,
                    t_min_exact,
                );
                let value = problem.objective(&data.x);
                let final_v = records.last().map(|r| r.v).unwrap_or(0.0);
                return Ok(BundleResult {
                    value,
                    converged: true,
                    iterations: state.k,
                    final_v,
                    certificate: data.certificate.clone(),
                    epsilon,
                    records,
                    stats: BundleStats {
                        serious,
                        null,
                        backtracking,
                        min_t: state.min_t,
                        floor: state.floor,
                        floor_violations: state.floor_violations,
                        max_backtrack_streak: state.max_backtrack_streak,
                    },
                    x: data.x,
                    y: data.y,
                    z: data.z,
                });
            }
            StepKind::Serious => serious += 1,
            StepKind::Null => null += 1,
            StepKind::Backtracking => backtracking += 1,
        }
        last = Some((center_before, data));
    }
    // Iteration cap: report the center (best point seen, by monotonicity).
    let certificate = best_certificate(
        problem,
        &state.center,
        &state.center_slope,
        &state.center_image,
        config.snap_tol,
    )?;
    let (t_min, t_min_exact) = match state.floor {
        Some(f) => (f, true),
        None => (state.min_t, false),
    };
    let epsilon = match &last {
        Some((center_before, data)) => {
            epsilon_certificate(problem, center_before, &data.x, &data.y, t_min, t_min_exact)
        }
        None => epsilon_certificate(
            problem,
            &state.center,
            &state.center,
            &state.center_slope,
            t_min,
            t_min_exact,
        ),
    };
    let final_v = records.last().map(|r| r.v).unwrap_or(0.0);
    Ok(BundleResult {
        x: state.center.clone(),
        y: certificate.y.clone(),
        z: certificate.z.clone(),
        value: state.center_value,
        converged: false,
        iterations: state.k,
        final_v,
        records,
        certificate,
        epsilon,
        stats: BundleStats {
            serious,
            null,
            backtracking,
            min_t: state.min_t,
            floor: state.floor,
            floor_violations: state.floor_violations,
            max_backtrack_streak: state.max_backtrack_streak,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{
        AffineMapping, FnMapping, MappingOracle, QuadraticSmooth, SmoothOracle,
    };
    use crate::outer::OuterFunction;
    use crate::sets::FeasibleSet;

    /// `min |x² − 1|` over `[−2, 2]`, exact moduli `L_h = 1`, `L_1 = 4`.
    fn quartic() -> CompositeProblem {
        let mapping = FnMapping {
            value: |x, out| out[0] = x[0] * x[0] - 1.0,
            jacobian: |x, out| out[0] = 2.0 * x[0],
        };
        let mapping = MappingOracle::new(Box::new(mapping), 1, 1, Some(vec![4.0]), true);
        CompositeProblem::new(
            "quartic",
            FeasibleSet::boxed(vec![-2.0], vec![2.0]),
            SmoothOracle::zero(),
            mapping,
            OuterFunction::AbsValue { dim: 1 },
        )
        .unwrap()
    }

    /// `min |x|` over `[−5, 5]` through the identity mapping.
    fn convex_abs() -> CompositeProblem {
        let a = Mat::from_rows(1, 1, vec![1.0]);
        let mapping = MappingOracle::new(
            Box::new(AffineMapping::new(a, vec![0.0])),
            1,
            1,
            Some(vec![0.0]),
            true,
        );
        CompositeProblem::new(
            "abs",
            FeasibleSet::boxed(vec![-5.0], vec![5.0]),
            SmoothOracle::zero(),
            mapping,
            OuterFunction::AbsValue { dim: 1 },
        )
        .unwrap()
    }

    #[test]
    fn quartic_hand_iteration_is_reproduced() {
        // Scripted first two iterations from x̂ = 2 with t0 = 1, κ = 0.1,
        // τ = 2. Master 1: single center cut (slope 1 at image 3) composes
        // to the affine piece 4x − 5, so x₁ = −2, z₁ = −13, v₀ = 16; the
        // first test compares 13 against 3 − 1.6 and fails → null step,
        // t₁ = 0.9. Master 2 equalizes the center and trial pieces at
        // x₂ = 1.25, z₂ = 0, v₁ = 3; both tests pass → serious step.
        let p = quartic();
        let config = BundleConfig::default();
        let mut state = bundle_init(&p, &[2.0], &config).unwrap();
        assert_eq!(state.center_value, 3.0);
        assert!((state.floor.unwrap() - 6.25e-3).abs() < 1e-18);
        assert_eq!(state.t_lower, 6.25e-3);

        let (r0, d0) = bundle_step(&mut state, &p, &config).unwrap();
        assert_eq!(r0.step, StepKind::Null);
        assert!((d0.x[0] + 2.0).abs() < 1e-9, "x1 = {}", d0.x[0]);
        assert!((d0.z[0] + 13.0).abs() < 1e-8, "z1 = {}", d0.z[0]);
        assert!((r0.v - 16.0).abs() < 1e-8);
        assert_eq!(r0.t, 1.0);
        assert!((r0.step_norm - 4.0).abs() < 1e-9);
        assert_eq!(r0.objective, 3.0);
        assert_eq!(r0.model_size, 1);
        assert!((state.t - 0.9).abs() < 1e-15);

        let (r1, d1) = bundle_step(&mut state, &p, &config).unwrap();
        assert_eq!(r1.step, StepKind::Serious);
        assert!((d1.x[0] - 1.25).abs() < 1e-9, "x2 = {}", d1.x[0]);
        assert!((r1.v - 3.0).abs() < 1e-8);
        assert!((r1.step_norm - 0.75).abs() < 1e-9);
        assert!((r1.objective - 0.5625).abs() < 1e-9);
        assert!((state.center[0] - 1.25).abs() < 1e-9);
        assert!((state.center_value - 0.5625).abs() < 1e-9);
        // Previous step was null, so the serious step keeps t.
        assert!((state.t - 0.9).abs() < 1e-15);
        // Multiplier recovered from the equalized pieces: y = 2α₁ − 1 with
        // 4(2α₁ − 1) = (2 − 1.25)/0.9.
        assert!((d1.y[0] - 5.0 / 24.0).abs() < 1e-7, "y = {}", d1.y[0]);
    }

    #[test]
    fn stationary_start_stops_immediately() {
        let p = convex_abs();
        let config = BundleConfig { tol: 0.0, ..BundleConfig::default() };
        let mut state = bundle_init(&p, &[0.0], &config).unwrap();
        let (r, d) = bundle_step(&mut state, &p, &config).unwrap();
        assert_eq!(r.step, StepKind::Stop);
        assert_eq!(r.k, 0);
        assert_eq!(d.x, vec![0.0]);
        assert_eq!(r.v, 0.0);
        let run = bundle_run(&p, &config, &[0.0]).unwrap();
        assert!(run.converged);
        assert_eq!(run.iterations, 0);
        assert_eq!(run.epsilon.epsilon, 0.0);
    }

    #[test]
    fn convex_abs_run_reaches_the_minimizer() {
        let p = convex_abs();
        let config = BundleConfig::default();
        let run = bundle_run(&p, &config, &[3.0]).unwrap();
        assert!(run.converged);
        assert_eq!(run.x, vec![0.0]);
        assert_eq!(run.stats.serious, 4);
        assert_eq!(run.stats.backtracking, 0);
        // Affine mapping: no guaranteed floor (backtracking cannot happen).
        assert!(run.stats.floor.is_none());
        // Two consecutive serious steps bump t by 1.5.
        assert_eq!(run.records[1].t, 1.0);
        assert_eq!(run.records[2].t, 1.5);
        assert_eq!(run.records[3].t, 2.25);
        assert!(run.certificate.breakdown.total <= 1e-12);
        // Center values never increase.
        let mut prev = f64::INFINITY;
        for r in &run.records {
            if r.step == StepKind::Serious {
                assert!(r.objective <= prev + 1e-12);
                prev = r.objective;
            }
        }
    }

    #[test]
    fn curvature_mismatch_forces_backtracking() {
        // f0 = x, F(x) = x², h = 100·max{0, z}: at x̂ = 0 the mapping
        // linearizes to the constant 0, so the model predicts pure linear
        // descent while the true image grows like 100x². The first test
        // passes and the second fails until t ≤ (1 − κ/2)/100, which takes
        // seven halvings from t0 = 1.
        let mapping = FnMapping {
            value: |x, out| out[0] = x[0] * x[0],
            jacobian: |x, out| out[0] = 2.0 * x[0],
        };
        let mapping = MappingOracle::new(Box::new(mapping), 1, 1, Some(vec![4.0]), true);
        let f0 = SmoothOracle::new(
            Box::new(QuadraticSmooth::diagonal(&[0.0], vec![1.0], 0.0)),
            true,
            Some(0.0),
        );
        let p = CompositeProblem::new(
            "steep-hinge",
            FeasibleSet::whole(1),
            f0,
            mapping,
            OuterFunction::hinge(100.0),
        )
        .unwrap();
        let config = BundleConfig::default();
        let mut state = bundle_init(&p, &[0.0], &config).unwrap();
        let (r0, _) = bundle_step(&mut state, &p, &config).unwrap();
        assert_eq!(r0.step, StepKind::Backtracking);
        assert!((state.t - 0.5).abs() < 1e-15);
        let run = bundle_run(&p, &config, &[0.0]).unwrap();
        assert!(run.converged);
        assert_eq!(run.stats.max_backtrack_streak, 7);
        assert_eq!(run.stats.floor_violations, 0);
        // Lemma floor κ/(2τ·L_h·L_F) with L_h = 100, L_F = 4.
        assert!((run.stats.floor.unwrap() - 0.1 / 1600.0).abs() < 1e-18);
        assert!(run.stats.min_t >= run.stats.floor.unwrap());
        // Spec'd cap on consecutive backtracks.
        let cap = ((1.0f64 * 2.0 * 2.0 * 100.0 * 4.0 / 0.1).log2()).ceil() as usize + 1;
        assert!(run.stats.max_backtrack_streak <= cap);
        // True minimizer of x + 100x² on x ≤ 0 side: x* = −1/200. The stop
        // fires once v ≤ 1e-8; with curvature 200 that still allows a few
        // microns of slack around the minimizer.
        assert!((run.x[0] + 0.005).abs() < 1e-5, "x = {}", run.x[0]);
    }

    #[test]
    fn quartic_run_satisfies_certificates_and_floors() {
        let p = quartic();
        let config = BundleConfig::default();
        let run = bundle_run(&p, &config, &[2.0]).unwrap();
        assert!(run.converged);
        assert!(run.iterations <= 500);
        let dist = [-1.0f64, 0.0, 1.0]
            .iter()
            .map(|s| (run.x[0] - s).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(dist <= 1e-4, "final x = {}", run.x[0]);
        assert!(run.certificate.breakdown.total <= 1e-6);
        assert!(run.epsilon.epsilon <= 1e-4);
        assert!(run.epsilon.epsilon >= 0.0);
        assert_eq!(run.epsilon.primal_term, 0.0);
        assert!(run.epsilon.t_min_exact);
        assert_eq!(run.stats.floor_violations, 0);
        for r in &run.records {
            // Prox bounds (Lemma floor holds: exact moduli).
            assert!(r.t >= 6.25e-3 - 1e-18 && r.t <= 100.0);
            // Key relation between predicted decrease and step length.
            assert!(r.step_norm * r.step_norm / (2.0 * r.t) <= r.v + 1e-12);
        }
        // Serious descent: objective drop at least (κ/2)·v.
        let mut center_val = 3.0;
        for r in &run.records {
            if r.step == StepKind::Serious {
                assert!(r.objective <= center_val - 0.05 * r.v + 1e-12);
                center_val = r.objective;
            }
        }
    }

    #[test]
    fn structured_and_flat_masters_agree_on_equivalent_models() {
        // Outer function ρ·max{0, σ(z)} with σ the capped-simplex support
        // function: the flat model {0-cut} ∪ {ρ·(σ-cuts)} represents exactly
        // the same function as the structured hinge over the σ-cuts, so the
        // two master assemblies must produce the same candidate.
        let rho = 2.0;
        let mk_sigma = || OuterFunction::SupportCappedSimplex {
            caps: vec![1.0, 0.6, 0.4],
            groups: 1,
            group_size: 3,
        };
        let sigma = mk_sigma();
        let flat_h = OuterFunction::ScaledHinge {
            rho,
            inner: alloc::boxed::Box::new(mk_sigma()),
        };
        let structured_h = OuterFunction::Composed {
            h0: alloc::boxed::Box::new(OuterFunction::hinge(rho)),
            components: vec![mk_sigma()],
        };
        let mk_mapping = || {
            MappingOracle::new(
                Box::new(AffineMapping::new(
                    Mat::from_rows(3, 2, vec![1.0, 0.5, -0.5, 1.0, 0.25, -1.0]),
                    vec![-0.2, 0.1, -0.4],
                )),
                3,
                2,
                Some(vec![0.0, 0.0, 0.0]),
                true,
            )
        };
        let set = FeasibleSet::boxed(vec![-2.0, -2.0], vec![2.0, 2.0]);
        let flat_p = CompositeProblem::new(
            "support-flat",
            set.clone(),
            SmoothOracle::zero(),
            mk_mapping(),
            flat_h,
        )
        .unwrap();
        let structured_p = CompositeProblem::new(
            "support-structured",
            set,
            SmoothOracle::zero(),
            mk_mapping(),
            structured_h,
        )
        .unwrap();
        let x0 = vec![1.0, -0.5];
        let mut flat_cfg = BundleConfig::default();
        flat_cfg.structured = false;
        let mut structured_cfg = BundleConfig::default();
        structured_cfg.structured = true;
        let mut flat_state = bundle_init(&flat_p, &x0, &flat_cfg).unwrap();
        let mut structured_state = bundle_init(&structured_p, &x0, &structured_cfg).unwrap();
        // Seed equivalent models: σ-cuts at the center image and at a probe
        // image; the flat side carries the 0-cut plus the ρ-scaled σ-cuts.
        let z_probe = vec![0.3, -0.1, 0.2];
        let center_image = flat_state.center_image.clone();
        let mut flat_model = CuttingPlaneModel::new(3, 50, 1e-12);
        let mut sigma_model = CuttingPlaneModel::new(3, 50, 1e-12);
        flat_model.add(Linearization {
            anchor: center_image.clone(),
            value: 0.0,
            slope: vec![0.0; 3],
            tag: CutTag::Center,
        });
        for (z, tag) in [(&center_image, CutTag::Center), (&z_probe, CutTag::Trial)] {
            let c = Linearization::of(&sigma, z, tag);
            flat_model.add(Linearization {
                anchor: c.anchor.clone(),
                value: rho * c.value,
                slope: c.slope.iter().map(|s| rho * s).collect(),
                tag,
            });
            sigma_model.add(c);
        }
        flat_state.model = BundleModel::Flat(flat_model);
        structured_state.model = BundleModel::Structured({
            let mut sm = StructuredModel::new(1, 3, 50, 1e-12);
            sm.components[0] = sigma_model;
            sm
        });
        let (rf, df) = bundle_step(&mut flat_state, &flat_p, &flat_cfg).unwrap();
        let (rs, ds) = bundle_step(&mut structured_state, &structured_p, &structured_cfg).unwrap();
        for i in 0..2 {
            assert!(
                (df.x[i] - ds.x[i]).abs() <= 1e-8,
                "candidates differ: {:?} vs {:?}",
                df.x,
                ds.x
            );
        }
        assert!((rf.v - rs.v).abs() <= 1e-8);
        for i in 0..3 {
            assert!((df.y[i] - ds.y[i]).abs() <= 1e-7, "multipliers differ");
        }
    }
}
