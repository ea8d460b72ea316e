//! Problem-side oracles: smooth functions, smooth mappings, convex functions,
//! and difference-of-convex component pairs.
//!
//! All oracles speak plain `&[f64]` points. Smoothness moduli follow the
//! convention used by the solvers throughout this crate: a component with
//! modulus `L` has `‖∇F_i(x) − ∇F_i(x')‖ ≤ (L/2)·‖x − x'‖`, so an affine
//! component has modulus `0` and `x ↦ x² − 1` has modulus `4`.

use crate::linalg::{dot, Mat};
use crate::util::sqrt;
use crate::{Error, Result};
use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

/// Dense point. Entries must be finite; [`validate_point`] checks that.
pub type Point = Vec<f64>;

/// Checks that every entry of `x` is finite.
pub fn validate_point(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NotFinite("point"))
    }
}

/// Value and gradient of a smooth scalar function.
pub trait Smooth: Send + Sync {
    /// Function value at `x`.
    fn value(&self, x: &[f64]) -> f64;
    /// Writes the gradient at `x` into `g` (`g.len() == x.len()`).
    fn gradient(&self, x: &[f64], g: &mut [f64]);
}

/// Value and one subgradient of a convex (possibly nonsmooth) function.
pub trait Convex: Send + Sync {
    /// Function value at `x`.
    fn value(&self, x: &[f64]) -> f64;
    /// Writes a deterministic subgradient at `x` into `g`.
    fn subgradient(&self, x: &[f64], g: &mut [f64]);
}

/// Value and Jacobian of a smooth vector mapping.
pub trait Mapping: Send + Sync {
    /// Writes `F(x)` into `out` (`out.len() == m`).
    fn value(&self, x: &[f64], out: &mut [f64]);
    /// Writes the row-major Jacobian into `out` (`out.len() == m * n`);
    /// row `i` is the gradient of component `i`.
    fn jacobian(&self, x: &[f64], out: &mut [f64]);
}

/// Smooth objective part `f0` with its certification flags.
pub struct SmoothOracle {
    f: Box<dyn Smooth>,
    /// Whether convexity has been certified by the instance author.
    pub convex: bool,
    /// Gradient Lipschitz modulus when known exactly. `None` makes the
    /// master solver fall back to backtracking line search.
    pub grad_lipschitz: Option<f64>,
}

impl SmoothOracle {
    /// Wraps a smooth function with its flags.
    pub fn new(f: Box<dyn Smooth>, convex: bool, grad_lipschitz: Option<f64>) -> Self {
        SmoothOracle { f, convex, grad_lipschitz }
    }

    /// The identically-zero objective.
    pub fn zero() -> Self {
        SmoothOracle { f: Box::new(ZeroSmooth), convex: true, grad_lipschitz: Some(0.0) }
    }

    /// Function value at `x`.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.f.value(x)
    }

    /// Writes the gradient at `x` into `g`.
    pub fn gradient_into(&self, x: &[f64], g: &mut [f64]) {
        self.f.gradient(x, g);
    }

    /// Gradient at `x` as a fresh vector.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.f.gradient(x, &mut g);
        g
    }
}

/// Smooth inner mapping `F` with per-component smoothness moduli.
pub struct MappingOracle {
    f: Box<dyn Mapping>,
    m: usize,
    n: usize,
    /// Per-component moduli `L_i` (see the module docs for the convention),
    /// when known.
    pub component_lipschitz: Option<Vec<f64>>,
    /// Whether `component_lipschitz` is exact or a sampled estimate.
    pub lipschitz_exact: bool,
}

impl MappingOracle {
    /// Wraps a mapping of shape `m × n` with its smoothness data.
    pub fn new(
        f: Box<dyn Mapping>,
        m: usize,
        n: usize,
        component_lipschitz: Option<Vec<f64>>,
        lipschitz_exact: bool,
    ) -> Self {
        if let Some(l) = &component_lipschitz {
            assert_eq!(l.len(), m, "one modulus per component");
        }
        MappingOracle { f, m, n, component_lipschitz, lipschitz_exact }
    }

    /// Output dimension `m`.
    pub fn output_dim(&self) -> usize {
        self.m
    }

    /// Input dimension `n`.
    pub fn input_dim(&self) -> usize {
        self.n
    }

    /// `F(x)` as a fresh vector.
    pub fn value(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.f.value(x, &mut out);
        out
    }

    /// Writes `F(x)` into `out`.
    pub fn value_into(&self, x: &[f64], out: &mut [f64]) {
        self.f.value(x, out);
    }

    /// Jacobian at `x` as a dense matrix (row `i` = gradient of component `i`).
    pub fn jacobian(&self, x: &[f64]) -> Mat {
        let mut data = vec![0.0; self.m * self.n];
        self.f.jacobian(x, &mut data);
        Mat::from_rows(self.m, self.n, data)
    }

    /// Aggregate curvature `L_F = sqrt(Σ_i L_i²)` of the mapping, when the
    /// component moduli are known.
    pub fn mapping_lipschitz(&self) -> Option<f64> {
        self.component_lipschitz.as_ref().map(|ls| {
            let mut s = 0.0;
            for l in ls {
                s += l * l;
            }
            sqrt(s)
        })
    }
}

/// A convex function in one of the two shapes the difference-of-convex
/// masters can absorb directly: a smooth function (folded into the smooth
/// part of the master) or a finite max of affine pieces (folded into the
/// piecewise-linear part).
pub enum ConvexPart {
    /// Differentiable convex function.
    Smooth(Box<dyn Smooth>),
    /// `max_l { d_l + ⟨e_l, x⟩ }`, stored as `(d_l, e_l)` pairs.
    MaxAffine {
        /// Affine pieces `(offset, slope)`; must be nonempty.
        pieces: Vec<(f64, Vec<f64>)>,
    },
}

impl ConvexPart {
    /// Function value at `x`.
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ConvexPart::Smooth(f) => f.value(x),
            ConvexPart::MaxAffine { pieces } => {
                let mut best = f64::NEG_INFINITY;
                for (d, e) in pieces {
                    let v = d + dot(e, x);
                    if v > best {
                        best = v;
                    }
                }
                best
            }
        }
    }

    /// Writes a deterministic subgradient at `x` into `g`; returns `true`
    /// when the subgradient is unique there (gradient, or untied max piece).
    pub fn subgradient_into(&self, x: &[f64], g: &mut [f64]) -> bool {
        match self {
            ConvexPart::Smooth(f) => {
                f.gradient(x, g);
                true
            }
            ConvexPart::MaxAffine { pieces } => {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                let mut ties = 0usize;
                for (l, (d, e)) in pieces.iter().enumerate() {
                    let v = d + dot(e, x);
                    if v > best {
                        best = v;
                        arg = l;
                        ties = 1;
                    } else if v == best {
                        ties += 1;
                    }
                }
                g.copy_from_slice(&pieces[arg].1);
                ties <= 1
            }
        }
    }
}

/// One component `f_i = f1_i − f2_i` of a difference-of-convex mapping.
pub struct DcComponentOracle {
    /// Convex part entering the masters, in master-absorbable shape.
    pub f1: ConvexPart,
    /// Concave part, linearized at each iterate.
    pub f2: Box<dyn Convex>,
    /// Whether `f2`'s subgradient is a true gradient.
    pub f2_smooth: bool,
}

impl DcComponentOracle {
    /// Component value `f1(x) − f2(x)`.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.f1.value(x) - self.f2.value(x)
    }
}

/// The identically-zero smooth function.
pub struct ZeroSmooth;

impl Smooth for ZeroSmooth {
    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn gradient(&self, _x: &[f64], g: &mut [f64]) {
        g.fill(0.0);
    }
}

/// Quadratic `½ xᵀQx + bᵀx + c` with dense symmetric `Q`.
pub struct QuadraticSmooth {
    q: Mat,
    b: Vec<f64>,
    c: f64,
}

impl QuadraticSmooth {
    /// Builds the quadratic; `q` must be symmetric (not checked) and square.
    pub fn new(q: Mat, b: Vec<f64>, c: f64) -> Self {
        assert_eq!(q.rows(), q.cols());
        assert_eq!(q.rows(), b.len());
        QuadraticSmooth { q, b, c }
    }

    /// Diagonal quadratic `Σ d_i x_i² / 2 + bᵀx + c`.
    pub fn diagonal(d: &[f64], b: Vec<f64>, c: f64) -> Self {
        let n = d.len();
        let mut q = Mat::zeros(n, n);
        for i in 0..n {
            q.set(i, i, d[i]);
        }
        QuadraticSmooth::new(q, b, c)
    }
}

impl Smooth for QuadraticSmooth {
    fn value(&self, x: &[f64]) -> f64 {
        let mut qx = vec![0.0; x.len()];
        self.q.matvec(x, &mut qx);
        0.5 * crate::linalg::dot(x, &qx) + crate::linalg::dot(&self.b, x) + self.c
    }
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        self.q.matvec(x, g);
        crate::linalg::axpy(1.0, &self.b, g);
    }
}

impl Convex for QuadraticSmooth {
    fn value(&self, x: &[f64]) -> f64 {
        Smooth::value(self, x)
    }
    fn subgradient(&self, x: &[f64], g: &mut [f64]) {
        Smooth::gradient(self, x, g);
    }
}

/// Affine mapping `F(x) = A x + b`.
pub struct AffineMapping {
    a: Mat,
    b: Vec<f64>,
}

impl AffineMapping {
    /// Builds `x ↦ A x + b`.
    pub fn new(a: Mat, b: Vec<f64>) -> Self {
        assert_eq!(a.rows(), b.len());
        AffineMapping { a, b }
    }
}

impl Mapping for AffineMapping {
    fn value(&self, x: &[f64], out: &mut [f64]) {
        self.a.matvec(x, out);
        crate::linalg::axpy(1.0, &self.b, out);
    }
    fn jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.a.data());
    }
}

/// Smooth function given by plain function pointers (handy in tests).
pub struct FnSmooth {
    /// Value callback.
    pub value: fn(&[f64]) -> f64,
    /// Gradient callback.
    pub gradient: fn(&[f64], &mut [f64]),
}

impl Smooth for FnSmooth {
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        (self.gradient)(x, g)
    }
}

/// Convex function given by plain function pointers (handy in tests).
pub struct FnConvex {
    /// Value callback.
    pub value: fn(&[f64]) -> f64,
    /// Subgradient callback.
    pub subgradient: fn(&[f64], &mut [f64]),
}

impl Convex for FnConvex {
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn subgradient(&self, x: &[f64], g: &mut [f64]) {
        (self.subgradient)(x, g)
    }
}

/// Mapping given by plain function pointers (handy in tests).
pub struct FnMapping {
    /// Value callback.
    pub value: fn(&[f64], &mut [f64]),
    /// Jacobian callback (row-major).
    pub jacobian: fn(&[f64], &mut [f64]),
}

impl Mapping for FnMapping {
    fn value(&self, x: &[f64], out: &mut [f64]) {
        (self.value)(x, out)
    }
    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        (self.jacobian)(x, out)
    }
}

/// Estimates per-component gradient moduli by sampling gradient differences
/// over a box, in the `(L/2)`-convention of this crate. The result is a lower
/// bound on the true modulus and must be flagged as an estimate.
pub fn estimate_component_lipschitz(
    mapping: &dyn Mapping,
    m: usize,
    n: usize,
    lo: &[f64],
    hi: &[f64],
    samples: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = crate::util::SplitMix64::new(seed);
    let mut best = vec![0.0f64; m];
    let mut ja = vec![0.0; m * n];
    let mut jb = vec![0.0; m * n];
    let mut xa = vec![0.0; n];
    let mut xb = vec![0.0; n];
    for _ in 0..samples {
        for i in 0..n {
            xa[i] = rng.uniform(lo[i], hi[i]);
            xb[i] = rng.uniform(lo[i], hi[i]);
        }
        let d = crate::linalg::dist2(&xa, &xb);
        if d < 1e-9 {
            continue;
        }
        mapping.jacobian(&xa, &mut ja);
        mapping.jacobian(&xb, &mut jb);
        for i in 0..m {
            let mut s = 0.0;
            for j in 0..n {
                let v = ja[i * n + j] - jb[i * n + j];
                s += v * v;
            }
            // ‖∇F_i(xa) − ∇F_i(xb)‖ ≤ (L_i/2)·‖xa − xb‖ gives L_i ≥ 2‖Δ∇‖/‖Δx‖.
            let l = 2.0 * sqrt(s) / d;
            if l > best[i] {
                best[i] = l;
            }
        }
    }
    best
}
