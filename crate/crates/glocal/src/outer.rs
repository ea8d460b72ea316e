//! Convex outer functions `h` applied to the image `F(x)`.
//!
//! Each variant provides values, a deterministic subgradient selection, the
//! distance from a candidate multiplier to the subdifferential (exact when
//! the active faces are enumerable, otherwise a flagged upper bound), and a
//! global Lipschitz bound.
//!
//! Deterministic kink rules, used everywhere a subgradient must be selected:
//! `max{0, t}` contributes slope `0` at `t = 0`; `|t|` contributes `0` at
//! `t = 0`; coordinate maxima with ties return the uniform average over the
//! tied coordinates. Kink membership is decided by exact float comparison;
//! certificate search (not the oracles) is responsible for snapping almost-
//! kink points.

use crate::linalg::{dot, nrm2, project_simplex};
use crate::util::{abs, clamp, pos, sqrt};
use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

/// Convex outer function variants.
pub enum OuterFunction {
    /// `h(z) = Σ a_i z_i + Σ b_i max{0, z_i}` with `b_i ≥ 0`.
    SeparablePwl {
        /// Linear coefficients.
        a: Vec<f64>,
        /// Hinge weights (nonnegative).
        b: Vec<f64>,
    },
    /// `h(z) = ρ · max{0, inner(z)}` with convex `inner`.
    ScaledHinge {
        /// Penalty weight (> 0).
        rho: f64,
        /// Aggregation of coordinates fed to the hinge.
        inner: Box<OuterFunction>,
    },
    /// Support function of `{π : Σπ = 1, 0 ≤ π ≤ caps}` applied to per-group
    /// maxima: `h(u) = max_π Σ_i π_i · max_j u_{ij}` with `u` packed row-major
    /// as `groups × group_size`.
    SupportCappedSimplex {
        /// Per-group mass caps; must sum to at least 1.
        caps: Vec<f64>,
        /// Number of groups.
        groups: usize,
        /// Entries per group.
        group_size: usize,
    },
    /// `h(z) = Σ |z_i|`.
    AbsValue {
        /// Dimension.
        dim: usize,
    },
    /// `h(z) = max_i z_i`.
    MaxOfCoordinates {
        /// Dimension.
        dim: usize,
    },
    /// `h = h0 ∘ (H_1, …, H_d)` with `h0` convex nondecreasing and convex
    /// components `H_k`, all over the same argument.
    Composed {
        /// Outer monotone function (dimension `d`).
        h0: Box<OuterFunction>,
        /// Inner convex components.
        components: Vec<OuterFunction>,
    },
    /// Black-box convex function with caller-certified metadata.
    Generic {
        /// Value and witness-subgradient oracle.
        f: Box<dyn crate::oracle::Convex>,
        /// Argument dimension.
        dim: usize,
        /// Certified Lipschitz bound.
        lipschitz: f64,
        /// Certified monotonicity flag.
        nondecreasing: bool,
    },
}

/// Canonical piecewise-linear description used by the master solver:
/// `h(z) = lin0 + ⟨lin, z⟩ + Σ_B max_{l ∈ B} (d_l + ⟨e_l, z⟩)`.
pub(crate) struct PwlCanonical {
    pub lin0: f64,
    pub lin: Vec<f64>,
    pub blocks: Vec<PwlBlock>,
}

/// One additive max-of-affine block.
pub(crate) struct PwlBlock {
    /// Pieces `(d_l, e_l)`.
    pub pieces: Vec<(f64, Vec<f64>)>,
}

impl OuterFunction {
    /// Identity on ℝ (`h(z) = z₁`), a convenient building block.
    pub fn identity() -> Self {
        OuterFunction::SeparablePwl { a: vec![1.0], b: vec![0.0] }
    }

    /// Plain hinge `ρ·max{0, z₁}` on ℝ.
    pub fn hinge(rho: f64) -> Self {
        OuterFunction::ScaledHinge { rho, inner: Box::new(OuterFunction::identity()) }
    }

    /// Argument dimension.
    pub fn dim(&self) -> usize {
        match self {
            OuterFunction::SeparablePwl { a, .. } => a.len(),
            OuterFunction::ScaledHinge { inner, .. } => inner.dim(),
            OuterFunction::SupportCappedSimplex { groups, group_size, .. } => {
                groups * group_size
            }
            OuterFunction::AbsValue { dim } => *dim,
            OuterFunction::MaxOfCoordinates { dim } => *dim,
            OuterFunction::Composed { components, .. } => components[0].dim(),
            OuterFunction::Generic { dim, .. } => *dim,
        }
    }

    /// Function value at `z`.
    pub fn value(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.dim());
        match self {
            OuterFunction::SeparablePwl { a, b } => {
                let mut s = 0.0;
                for i in 0..z.len() {
                    s += a[i] * z[i] + b[i] * pos(z[i]);
                }
                s
            }
            OuterFunction::ScaledHinge { rho, inner } => rho * pos(inner.value(z)),
            OuterFunction::SupportCappedSimplex { caps, groups, group_size } => {
                SupportEval::new(caps, *groups, *group_size, z).value
            }
            OuterFunction::AbsValue { .. } => z.iter().map(|v| abs(*v)).sum(),
            OuterFunction::MaxOfCoordinates { .. } => {
                let mut m = z[0];
                for &v in &z[1..] {
                    if v > m {
                        m = v;
                    }
                }
                m
            }
            OuterFunction::Composed { h0, components } => {
                let r: Vec<f64> = components.iter().map(|c| c.value(z)).collect();
                h0.value(&r)
            }
            OuterFunction::Generic { f, .. } => f.value(z),
        }
    }

    /// Deterministic subgradient at `z` (see module docs for the kink rules).
    pub fn subgradient(&self, z: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.subgradient_into(z, &mut g);
        g
    }

    /// Writes the deterministic subgradient at `z` into `g`.
    pub fn subgradient_into(&self, z: &[f64], g: &mut [f64]) {
        debug_assert_eq!(z.len(), self.dim());
        match self {
            OuterFunction::SeparablePwl { a, b } => {
                for i in 0..z.len() {
                    g[i] = a[i] + if z[i] > 0.0 { b[i] } else { 0.0 };
                }
            }
            OuterFunction::ScaledHinge { rho, inner } => {
                if inner.value(z) > 0.0 {
                    inner.subgradient_into(z, g);
                    for v in g.iter_mut() {
                        *v *= rho;
                    }
                } else {
                    g.fill(0.0);
                }
            }
            OuterFunction::SupportCappedSimplex { caps, groups, group_size } => {
                SupportEval::new(caps, *groups, *group_size, z).subgradient(g);
            }
            OuterFunction::AbsValue { .. } => {
                for i in 0..z.len() {
                    g[i] = if z[i] > 0.0 {
                        1.0
                    } else if z[i] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
            }
            OuterFunction::MaxOfCoordinates { .. } => {
                let ties = argmax_set(z);
                g.fill(0.0);
                let w = 1.0 / ties.len() as f64;
                for i in ties {
                    g[i] = w;
                }
            }
            OuterFunction::Composed { h0, components } => {
                let r: Vec<f64> = components.iter().map(|c| c.value(z)).collect();
                let w = h0.subgradient(&r);
                g.fill(0.0);
                let mut gk = vec![0.0; z.len()];
                for (k, c) in components.iter().enumerate() {
                    if w[k] == 0.0 {
                        continue;
                    }
                    c.subgradient_into(z, &mut gk);
                    crate::linalg::axpy(w[k], &gk, g);
                }
            }
            OuterFunction::Generic { f, .. } => f.subgradient(z, g),
        }
    }

    /// Distance from `y` to `∂h(z)` plus an exactness flag.
    ///
    /// When the flag is `true` the value is the true Euclidean distance;
    /// otherwise it is an upper bound obtained from a witness subgradient.
    pub fn subdiff_distance(&self, z: &[f64], y: &[f64]) -> (f64, bool) {
        debug_assert_eq!(z.len(), self.dim());
        debug_assert_eq!(y.len(), self.dim());
        match self {
            OuterFunction::SeparablePwl { a, b } => {
                let mut s = 0.0;
                for i in 0..z.len() {
                    let (lo, hi) = if z[i] > 0.0 {
                        (a[i] + b[i], a[i] + b[i])
                    } else if z[i] < 0.0 {
                        (a[i], a[i])
                    } else {
                        (a[i], a[i] + b[i])
                    };
                    let r = y[i] - clamp(y[i], lo, hi);
                    s += r * r;
                }
                (sqrt(s), true)
            }
            OuterFunction::ScaledHinge { rho, inner } => {
                let gamma = inner.value(z);
                if gamma < 0.0 {
                    (nrm2(y), true)
                } else if gamma > 0.0 {
                    let scaled: Vec<f64> = y.iter().map(|v| v / rho).collect();
                    let (d, exact) = inner.subdiff_distance(z, &scaled);
                    (rho * d, exact)
                } else {
                    // ∂h = {θ·g : θ ∈ [0, ρ], g ∈ ∂inner(z)}.
                    match inner.subdiff_singleton(z) {
                        Some(gin) => {
                            let gg = dot(&gin, &gin);
                            let theta = if gg > 0.0 {
                                clamp(dot(y, &gin) / gg, 0.0, *rho)
                            } else {
                                0.0
                            };
                            let mut r = y.to_vec();
                            crate::linalg::axpy(-theta, &gin, &mut r);
                            (nrm2(&r), true)
                        }
                        None => {
                            let gin = inner.subgradient(z);
                            let gg = dot(&gin, &gin);
                            let theta = if gg > 0.0 {
                                clamp(dot(y, &gin) / gg, 0.0, *rho)
                            } else {
                                0.0
                            };
                            let mut r = y.to_vec();
                            crate::linalg::axpy(-theta, &gin, &mut r);
                            (nrm2(&r), false)
                        }
                    }
                }
            }
            OuterFunction::SupportCappedSimplex { caps, groups, group_size } => {
                let eval = SupportEval::new(caps, *groups, *group_size, z);
                let mut g = vec![0.0; z.len()];
                eval.subgradient(&mut g);
                let d = crate::linalg::dist2(y, &g);
                (d, eval.unique_subgradient())
            }
            OuterFunction::AbsValue { .. } => {
                let mut s = 0.0;
                for i in 0..z.len() {
                    let (lo, hi) = if z[i] > 0.0 {
                        (1.0, 1.0)
                    } else if z[i] < 0.0 {
                        (-1.0, -1.0)
                    } else {
                        (-1.0, 1.0)
                    };
                    let r = y[i] - clamp(y[i], lo, hi);
                    s += r * r;
                }
                (sqrt(s), true)
            }
            OuterFunction::MaxOfCoordinates { .. } => {
                // ∂h(z) = conv{e_i : i ∈ argmax}; coordinates decouple, so the
                // distance splits into the off-face part and a simplex
                // projection on the tied coordinates.
                let ties = argmax_set(z);
                let ya: Vec<f64> = ties.iter().map(|&i| y[i]).collect();
                let pa = project_simplex(&ya, 1.0);
                let mut s = 0.0;
                let mut k = 0;
                for i in 0..y.len() {
                    if k < ties.len() && ties[k] == i {
                        let r = y[i] - pa[k];
                        s += r * r;
                        k += 1;
                    } else {
                        s += y[i] * y[i];
                    }
                }
                (sqrt(s), true)
            }
            OuterFunction::Composed { .. } | OuterFunction::Generic { .. } => {
                let g = self.subgradient(z);
                (crate::linalg::dist2(y, &g), false)
            }
        }
    }

    /// The unique subgradient at `z`, when the subdifferential is a
    /// singleton; `None` at kinks or for variants without face enumeration.
    pub(crate) fn subdiff_singleton(&self, z: &[f64]) -> Option<Vec<f64>> {
        match self {
            OuterFunction::SeparablePwl { b, .. } => {
                if z.iter().enumerate().all(|(i, &v)| v != 0.0 || b[i] == 0.0) {
                    Some(self.subgradient(z))
                } else {
                    None
                }
            }
            OuterFunction::AbsValue { .. } => {
                if z.iter().all(|&v| v != 0.0) {
                    Some(self.subgradient(z))
                } else {
                    None
                }
            }
            OuterFunction::MaxOfCoordinates { .. } => {
                if argmax_set(z).len() == 1 {
                    Some(self.subgradient(z))
                } else {
                    None
                }
            }
            OuterFunction::ScaledHinge { rho, inner } => {
                let gamma = inner.value(z);
                if gamma < 0.0 {
                    Some(vec![0.0; self.dim()])
                } else if gamma > 0.0 {
                    inner.subdiff_singleton(z).map(|mut g| {
                        for v in g.iter_mut() {
                            *v *= rho;
                        }
                        g
                    })
                } else {
                    None
                }
            }
            OuterFunction::SupportCappedSimplex { caps, groups, group_size } => {
                let eval = SupportEval::new(caps, *groups, *group_size, z);
                if eval.unique_subgradient() {
                    Some(self.subgradient(z))
                } else {
                    None
                }
            }
            OuterFunction::Composed { .. } | OuterFunction::Generic { .. } => None,
        }
    }

    /// Exact Euclidean projection of `y` onto `∂h(z)`, for variants whose
    /// subdifferential has closed-form structure. Used by certificate search.
    pub fn project_subdifferential(&self, z: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        match self {
            OuterFunction::SeparablePwl { a, b } => {
                let mut out = Vec::with_capacity(y.len());
                for i in 0..y.len() {
                    let (lo, hi) = if z[i] > 0.0 {
                        (a[i] + b[i], a[i] + b[i])
                    } else if z[i] < 0.0 {
                        (a[i], a[i])
                    } else {
                        (a[i], a[i] + b[i])
                    };
                    out.push(clamp(y[i], lo, hi));
                }
                Some(out)
            }
            OuterFunction::AbsValue { .. } => {
                let mut out = Vec::with_capacity(y.len());
                for i in 0..y.len() {
                    let (lo, hi) = if z[i] > 0.0 {
                        (1.0, 1.0)
                    } else if z[i] < 0.0 {
                        (-1.0, -1.0)
                    } else {
                        (-1.0, 1.0)
                    };
                    out.push(clamp(y[i], lo, hi));
                }
                Some(out)
            }
            OuterFunction::MaxOfCoordinates { .. } => {
                let ties = argmax_set(z);
                let ya: Vec<f64> = ties.iter().map(|&i| y[i]).collect();
                let pa = project_simplex(&ya, 1.0);
                let mut out = vec![0.0; y.len()];
                for (k, &i) in ties.iter().enumerate() {
                    out[i] = pa[k];
                }
                Some(out)
            }
            OuterFunction::ScaledHinge { rho, inner } => {
                let gamma = inner.value(z);
                if gamma < 0.0 {
                    return Some(vec![0.0; self.dim()]);
                }
                if gamma > 0.0 {
                    let scaled: Vec<f64> = y.iter().map(|v| v / rho).collect();
                    return inner.project_subdifferential(z, &scaled).map(|mut g| {
                        for v in g.iter_mut() {
                            *v *= rho;
                        }
                        g
                    });
                }
                let gin = inner.subdiff_singleton(z)?;
                let gg = dot(&gin, &gin);
                let theta = if gg > 0.0 { clamp(dot(y, &gin) / gg, 0.0, *rho) } else { 0.0 };
                let mut out = vec![0.0; y.len()];
                crate::linalg::axpy(theta, &gin, &mut out);
                Some(out)
            }
            _ => None,
        }
    }

    /// Global Lipschitz bound (with respect to the Euclidean norm).
    pub fn lipschitz_bound(&self) -> f64 {
        match self {
            OuterFunction::SeparablePwl { a, b } => {
                let mut s = 0.0;
                for i in 0..a.len() {
                    let m = abs(a[i]) + b[i];
                    s += m * m;
                }
                sqrt(s)
            }
            OuterFunction::ScaledHinge { rho, inner } => rho * inner.lipschitz_bound(),
            OuterFunction::SupportCappedSimplex { caps, .. } => {
                // Subgradients are π-weighted selections, so the sharpest
                // bound is max ‖π‖₂ over the capped simplex, attained by
                // filling the largest caps first.
                let mut sorted = caps.clone();
                sorted.sort_by(|x, y| y.partial_cmp(x).expect("finite caps"));
                let mut remaining = 1.0f64;
                let mut s = 0.0;
                for c in sorted {
                    let take = c.min(remaining);
                    s += take * take;
                    remaining -= take;
                    if remaining <= 0.0 {
                        break;
                    }
                }
                sqrt(s)
            }
            OuterFunction::AbsValue { dim } => sqrt(*dim as f64),
            OuterFunction::MaxOfCoordinates { .. } => 1.0,
            OuterFunction::Composed { h0, components } => {
                // Conservative product bound; exact constants require joint
                // structure the oracle does not expose.
                let mut s = 0.0;
                for c in components {
                    let l = c.lipschitz_bound();
                    s += l * l;
                }
                h0.lipschitz_bound() * sqrt(s)
            }
            OuterFunction::Generic { lipschitz, .. } => *lipschitz,
        }
    }

    /// Whether `h` is nondecreasing in every coordinate (needed by the
    /// difference-of-convex solver).
    pub fn nondecreasing(&self) -> bool {
        match self {
            OuterFunction::SeparablePwl { a, .. } => a.iter().all(|&v| v >= 0.0),
            OuterFunction::ScaledHinge { inner, .. } => inner.nondecreasing(),
            OuterFunction::SupportCappedSimplex { .. } => true,
            OuterFunction::AbsValue { .. } => false,
            OuterFunction::MaxOfCoordinates { .. } => true,
            OuterFunction::Composed { h0, components } => {
                h0.nondecreasing() && components.iter().all(|c| c.nondecreasing())
            }
            OuterFunction::Generic { nondecreasing, .. } => *nondecreasing,
        }
    }

    /// Candidate kink-snapped copies of `z` (entries within `tol` of a kink
    /// moved onto it). Certificate search evaluates residuals at these.
    pub fn kink_snap(&self, z: &[f64], tol: f64) -> Vec<Vec<f64>> {
        match self {
            OuterFunction::SeparablePwl { b, .. } => {
                let mut snapped = z.to_vec();
                let mut any = false;
                for i in 0..z.len() {
                    if b[i] > 0.0 && z[i] != 0.0 && abs(z[i]) <= tol {
                        snapped[i] = 0.0;
                        any = true;
                    }
                }
                if any {
                    vec![snapped]
                } else {
                    Vec::new()
                }
            }
            OuterFunction::AbsValue { .. } => {
                let mut snapped = z.to_vec();
                let mut any = false;
                for i in 0..z.len() {
                    if z[i] != 0.0 && abs(z[i]) <= tol {
                        snapped[i] = 0.0;
                        any = true;
                    }
                }
                if any {
                    vec![snapped]
                } else {
                    Vec::new()
                }
            }
            OuterFunction::ScaledHinge { inner, .. } => {
                let mut out = inner.kink_snap(z, tol);
                if self.dim() == 1 && z[0] != 0.0 && abs(z[0]) <= tol {
                    out.push(vec![0.0]);
                }
                out
            }
            _ => Vec::new(),
        }
    }

    /// Canonical piecewise-linear form, when the variant admits one.
    pub(crate) fn pwl_canonical(&self) -> Option<PwlCanonical> {
        let m = self.dim();
        match self {
            OuterFunction::SeparablePwl { a, b } => {
                let mut blocks = Vec::new();
                for i in 0..m {
                    if b[i] > 0.0 {
                        let mut e = vec![0.0; m];
                        e[i] = b[i];
                        blocks.push(PwlBlock {
                            pieces: vec![(0.0, vec![0.0; m]), (0.0, e)],
                        });
                    }
                }
                Some(PwlCanonical { lin0: 0.0, lin: a.clone(), blocks })
            }
            OuterFunction::AbsValue { .. } => {
                let mut blocks = Vec::new();
                for i in 0..m {
                    let mut ep = vec![0.0; m];
                    ep[i] = 1.0;
                    let mut en = vec![0.0; m];
                    en[i] = -1.0;
                    blocks.push(PwlBlock { pieces: vec![(0.0, ep), (0.0, en)] });
                }
                Some(PwlCanonical { lin0: 0.0, lin: vec![0.0; m], blocks })
            }
            OuterFunction::MaxOfCoordinates { .. } => {
                let mut pieces = Vec::with_capacity(m);
                for i in 0..m {
                    let mut e = vec![0.0; m];
                    e[i] = 1.0;
                    pieces.push((0.0, e));
                }
                Some(PwlCanonical {
                    lin0: 0.0,
                    lin: vec![0.0; m],
                    blocks: vec![PwlBlock { pieces }],
                })
            }
            OuterFunction::ScaledHinge { rho, inner } => {
                let base = inner.pwl_canonical()?;
                // ρ·max{0, linear + one block} stays a single block.
                let mut pieces = vec![(0.0, vec![0.0; m])];
                match base.blocks.len() {
                    0 => {
                        let mut e: Vec<f64> = base.lin.clone();
                        for v in e.iter_mut() {
                            *v *= rho;
                        }
                        pieces.push((rho * base.lin0, e));
                    }
                    1 if base.lin0 == 0.0 && base.lin.iter().all(|&v| v == 0.0) => {
                        for (d, e) in &base.blocks[0].pieces {
                            let mut es = e.clone();
                            for v in es.iter_mut() {
                                *v *= rho;
                            }
                            pieces.push((rho * d, es));
                        }
                    }
                    _ => return None,
                }
                Some(PwlCanonical {
                    lin0: 0.0,
                    lin: vec![0.0; m],
                    blocks: vec![PwlBlock { pieces }],
                })
            }
            OuterFunction::SupportCappedSimplex { .. }
            | OuterFunction::Composed { .. }
            | OuterFunction::Generic { .. } => None,
        }
    }
}

/// Indices attaining `max_i z_i` (exact float ties), in increasing order.
fn argmax_set(z: &[f64]) -> Vec<usize> {
    let mut m = z[0];
    for &v in &z[1..] {
        if v > m {
            m = v;
        }
    }
    (0..z.len()).filter(|&i| z[i] == m).collect()
}

/// Shared evaluation state for the capped-simplex support function.
struct SupportEval {
    psi: Vec<f64>,
    argmax: Vec<Vec<usize>>,
    pi: Vec<f64>,
    value: f64,
    pi_unique: bool,
    group_size: usize,
}

impl SupportEval {
    fn new(caps: &[f64], groups: usize, group_size: usize, u: &[f64]) -> Self {
        debug_assert_eq!(u.len(), groups * group_size);
        debug_assert!(caps.iter().sum::<f64>() >= 1.0 - 1e-12, "caps must cover unit mass");
        let mut psi = Vec::with_capacity(groups);
        let mut argmax = Vec::with_capacity(groups);
        for i in 0..groups {
            let row = &u[i * group_size..(i + 1) * group_size];
            let ties = argmax_set(row);
            psi.push(row[ties[0]]);
            argmax.push(ties);
        }
        // Greedy cap filling in decreasing ψ order (stable: ties by index).
        let mut order: Vec<usize> = (0..groups).collect();
        order.sort_by(|&i, &j| psi[j].partial_cmp(&psi[i]).expect("finite"));
        let mut pi = vec![0.0; groups];
        let mut remaining = 1.0f64;
        let mut boundary = psi[order[groups - 1]];
        for &g in &order {
            if remaining <= 0.0 {
                break;
            }
            let take = caps[g].min(remaining);
            pi[g] = take;
            remaining -= take;
            if remaining <= 0.0 {
                boundary = psi[g];
            }
        }
        // The maximizer is unique unless leftover mass at the boundary value
        // can be split between several groups with spare capacity.
        let mass_above: f64 = (0..groups)
            .filter(|&g| psi[g] > boundary)
            .map(|g| caps[g])
            .sum();
        let leftover = 1.0 - mass_above;
        let tied: Vec<usize> = (0..groups)
            .filter(|&g| psi[g] == boundary && caps[g] > 0.0)
            .collect();
        let tied_caps: f64 = tied.iter().map(|&g| caps[g]).sum();
        let pi_unique = leftover <= 0.0 || tied.len() <= 1 || leftover == tied_caps;
        let value = dot(&pi, &psi);
        SupportEval { psi, argmax, pi, value, pi_unique, group_size }
    }

    fn subgradient(&self, g: &mut [f64]) {
        g.fill(0.0);
        for (i, ties) in self.argmax.iter().enumerate() {
            if self.pi[i] == 0.0 {
                continue;
            }
            let w = self.pi[i] / ties.len() as f64;
            for &j in ties {
                g[i * self.group_size + j] = w;
            }
        }
    }

    fn unique_subgradient(&self) -> bool {
        self.pi_unique
            && self
                .argmax
                .iter()
                .enumerate()
                .all(|(i, ties)| self.pi[i] == 0.0 || ties.len() == 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_value_and_subgradient() {
        // h(z) = 2 z₁ + 3 max{0, z₁} - z₂.
        let h = OuterFunction::SeparablePwl { a: vec![2.0, -1.0], b: vec![3.0, 0.0] };
        assert!((h.value(&[1.0, 2.0]) - (2.0 + 3.0 - 2.0)).abs() < 1e-14);
        assert!((h.value(&[-1.0, 0.0]) - (-2.0)).abs() < 1e-14);
        assert_eq!(h.subgradient(&[1.0, 2.0]), vec![5.0, -1.0]);
        // Hinge kink contributes slope 0 deterministically.
        assert_eq!(h.subgradient(&[0.0, 2.0]), vec![2.0, -1.0]);
        assert!(!h.nondecreasing());
        let l = h.lipschitz_bound();
        assert!((l - (25.0f64 + 1.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn abs_subgradient_and_distance() {
        let h = OuterFunction::AbsValue { dim: 1 };
        assert_eq!(h.subgradient(&[0.0]), vec![0.0]);
        // Distance from y = 0.4 to ∂|·|(0) = [-1, 1] is 0; to ∂|·|(2) = {1} it is 0.6.
        let (d, exact) = h.subdiff_distance(&[0.0], &[0.4]);
        assert!(d == 0.0 && exact);
        let (d, exact) = h.subdiff_distance(&[2.0], &[0.4]);
        assert!((d - 0.6).abs() < 1e-14 && exact);
    }

    #[test]
    fn hinge_distance_cases() {
        let h = OuterFunction::hinge(2.0);
        // Negative side: ∂h = {0}.
        let (d, exact) = h.subdiff_distance(&[-1.0], &[0.5]);
        assert!((d - 0.5).abs() < 1e-14 && exact);
        // Positive side: ∂h = {2}.
        let (d, exact) = h.subdiff_distance(&[3.0], &[0.5]);
        assert!((d - 1.5).abs() < 1e-14 && exact);
        // Kink: ∂h = [0, 2]; y = 1.2 is inside.
        let (d, exact) = h.subdiff_distance(&[0.0], &[1.2]);
        assert!(d == 0.0 && exact);
        let (d, _) = h.subdiff_distance(&[0.0], &[2.5]);
        assert!((d - 0.5).abs() < 1e-14);
    }

    #[test]
    fn max_ties_average_and_project() {
        let h = OuterFunction::MaxOfCoordinates { dim: 3 };
        assert_eq!(h.subgradient(&[1.0, 1.0, 0.0]), vec![0.5, 0.5, 0.0]);
        // y = e₃ is far from conv{e₁, e₂}: distance² = 1 (off-face) + ½ (to the
        // midpoint of the tied face after projecting (0,0) up to mass 1).
        let (d, exact) = h.subdiff_distance(&[1.0, 1.0, 0.0], &[0.0, 0.0, 1.0]);
        assert!(exact);
        assert!((d - (1.5f64).sqrt()).abs() < 1e-12);
        let p = h.project_subdifferential(&[1.0, 1.0, 0.0], &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn support_value_matches_sorting_and_brute_force() {
        // Two groups of one entry each, caps (1, 1): plain max.
        let h = OuterFunction::SupportCappedSimplex {
            caps: vec![1.0, 1.0],
            groups: 2,
            group_size: 1,
        };
        assert!((h.value(&[3.0, 1.0]) - 3.0).abs() < 1e-14);
        // Caps (0.6, 0.6): mass splits 0.6 / 0.4.
        let h = OuterFunction::SupportCappedSimplex {
            caps: vec![0.6, 0.6],
            groups: 2,
            group_size: 1,
        };
        assert!((h.value(&[3.0, 1.0]) - (0.6 * 3.0 + 0.4 * 1.0)).abs() < 1e-14);
        let g = h.subgradient(&[3.0, 1.0]);
        assert!((g[0] - 0.6).abs() < 1e-14 && (g[1] - 0.4).abs() < 1e-14);
        assert!(h.nondecreasing());
    }

    #[test]
    fn support_uniqueness_flags() {
        let h = OuterFunction::SupportCappedSimplex {
            caps: vec![0.6, 0.6],
            groups: 2,
            group_size: 1,
        };
        // Distinct ψ: unique subgradient, exact distance.
        let (_, exact) = h.subdiff_distance(&[3.0, 1.0], &[0.0, 0.0]);
        assert!(exact);
        // Tied ψ with splittable leftover: flagged inexact.
        let (_, exact) = h.subdiff_distance(&[2.0, 2.0], &[0.0, 0.0]);
        assert!(!exact);
    }

    #[test]
    fn support_lipschitz_fills_largest_caps() {
        let h = OuterFunction::SupportCappedSimplex {
            caps: vec![0.25, 0.75, 0.5],
            groups: 3,
            group_size: 1,
        };
        // max ‖π‖: take 0.75 then 0.25 → sqrt(0.625).
        assert!((h.lipschitz_bound() - (0.75f64 * 0.75 + 0.25 * 0.25).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn subgradient_inequality_spot_checks() {
        // h(z') ≥ h(z) + ⟨g, z' − z⟩ for the deterministic selections.
        let funcs: Vec<OuterFunction> = vec![
            OuterFunction::SeparablePwl { a: vec![0.5, -0.2], b: vec![1.0, 2.0] },
            OuterFunction::AbsValue { dim: 2 },
            OuterFunction::MaxOfCoordinates { dim: 2 },
            OuterFunction::ScaledHinge {
                rho: 3.0,
                inner: Box::new(OuterFunction::MaxOfCoordinates { dim: 2 }),
            },
        ];
        let mut rng = crate::util::SplitMix64::new(11);
        for h in &funcs {
            for _ in 0..200 {
                let z = vec![rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
                let zp = vec![rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
                let g = h.subgradient(&z);
                let lhs = h.value(&zp);
                let rhs = h.value(&z) + dot(&g, &crate::linalg::sub(&zp, &z));
                assert!(lhs >= rhs - 1e-12, "subgradient inequality violated");
            }
        }
    }

    #[test]
    fn pwl_canonical_reproduces_values() {
        let funcs: Vec<OuterFunction> = vec![
            OuterFunction::SeparablePwl { a: vec![0.5, -0.2], b: vec![1.0, 0.0] },
            OuterFunction::AbsValue { dim: 2 },
            OuterFunction::MaxOfCoordinates { dim: 2 },
            OuterFunction::hinge(2.5),
        ];
        let mut rng = crate::util::SplitMix64::new(3);
        for h in &funcs {
            let canon = h.pwl_canonical().expect("variant is piecewise linear");
            let m = h.dim();
            for _ in 0..100 {
                let z: Vec<f64> = (0..m).map(|_| rng.uniform(-2.0, 2.0)).collect();
                let mut v = canon.lin0 + dot(&canon.lin, &z);
                for blk in &canon.blocks {
                    let mut best = f64::NEG_INFINITY;
                    for (d, e) in &blk.pieces {
                        best = best.max(d + dot(e, &z));
                    }
                    v += best;
                }
                assert!((v - h.value(&z)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn composed_chain_rule() {
        // h = hinge(1) ∘ (max of coordinates): h(z) = max{0, max_i z_i}.
        let h = OuterFunction::Composed {
            h0: Box::new(OuterFunction::hinge(1.0)),
            components: vec![OuterFunction::MaxOfCoordinates { dim: 2 }],
        };
        assert!((h.value(&[0.5, -1.0]) - 0.5).abs() < 1e-14);
        assert_eq!(h.subgradient(&[0.5, -1.0]), vec![1.0, 0.0]);
        assert_eq!(h.value(&[-0.5, -1.0]), 0.0);
        assert!(h.nondecreasing());
    }

    #[test]
    fn kink_snapping() {
        let h = OuterFunction::AbsValue { dim: 2 };
        let snaps = h.kink_snap(&[1e-9, 0.5], 1e-6);
        assert_eq!(snaps, vec![vec![0.0, 0.5]]);
        assert!(h.kink_snap(&[0.3, 0.5], 1e-6).is_empty());
    }
}
