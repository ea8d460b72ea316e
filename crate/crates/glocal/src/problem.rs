//! Composite problem data: `min_{x ∈ X} f0(x) + h(F(x))`.

use crate::error::{Error, Result};
use crate::oracle::{DcComponentOracle, MappingOracle, SmoothOracle};
use crate::outer::OuterFunction;
use crate::sets::FeasibleSet;
use alloc::string::String;
use alloc::vec::Vec;

/// Difference-of-convex split of the mapping: `F_i = f¹_i − f²_i`.
pub struct DcDecomposition {
    /// One split per mapping component, in component order.
    pub components: Vec<DcComponentOracle>,
}

/// Weighted set-distance structure: `h(F(x)) = Σ_i (weights_i/2) · dist²(x, sets_i)`,
/// which the proximal-distance solver exploits through projections.
pub struct DistanceForm {
    /// Target sets.
    pub sets: Vec<FeasibleSet>,
    /// Nonnegative penalty weights.
    pub weights: Vec<f64>,
}

/// Validation summary of what the problem's oracles certify.
#[derive(Clone, Debug)]
pub struct AssumptionFlags {
    /// Lipschitz bound for `h`.
    pub h_lipschitz: f64,
    /// Aggregated curvature constant of the mapping, when certified.
    pub mapping_lipschitz: Option<f64>,
    /// Whether the mapping constants are exact rather than sampled bounds.
    pub lipschitz_exact: bool,
    /// Whether `h` is coordinatewise nondecreasing.
    pub h_nondecreasing: bool,
    /// Whether a difference-of-convex split is attached.
    pub dc_available: bool,
    /// Whether a weighted set-distance form is attached.
    pub distance_available: bool,
}

/// One instance of the composite problem.
pub struct CompositeProblem {
    /// Instance name (used by registries and reports).
    pub name: String,
    /// Feasible set `X`.
    pub set: FeasibleSet,
    /// Smooth additive term `f0`.
    pub f0: SmoothOracle,
    /// Smooth (or difference-of-convex) inner mapping `F`.
    pub mapping: MappingOracle,
    /// Convex outer function `h`.
    pub h: OuterFunction,
    /// Optional difference-of-convex split of `F`.
    pub dc: Option<DcDecomposition>,
    /// Optional weighted set-distance structure.
    pub distance: Option<DistanceForm>,
}

impl CompositeProblem {
    /// Builds and dimension-checks a problem.
    pub fn new(
        name: &str,
        set: FeasibleSet,
        f0: SmoothOracle,
        mapping: MappingOracle,
        h: OuterFunction,
    ) -> Result<Self> {
        if mapping.input_dim() != set.dim() {
            return Err(Error::Dimension { expected: set.dim(), got: mapping.input_dim() });
        }
        if h.dim() != mapping.output_dim() {
            return Err(Error::Dimension { expected: mapping.output_dim(), got: h.dim() });
        }
        Ok(CompositeProblem {
            name: String::from(name),
            set,
            f0,
            mapping,
            h,
            dc: None,
            distance: None,
        })
    }

    /// Attaches a difference-of-convex split (consumes and returns `self`).
    pub fn with_dc(mut self, dc: DcDecomposition) -> Result<Self> {
        if dc.components.len() != self.mapping.output_dim() {
            return Err(Error::Dimension {
                expected: self.mapping.output_dim(),
                got: dc.components.len(),
            });
        }
        self.dc = Some(dc);
        Ok(self)
    }

    /// Attaches a weighted set-distance form (consumes and returns `self`).
    pub fn with_distance(mut self, distance: DistanceForm) -> Result<Self> {
        if distance.sets.len() != distance.weights.len() {
            return Err(Error::Dimension {
                expected: distance.sets.len(),
                got: distance.weights.len(),
            });
        }
        for s in &distance.sets {
            if s.dim() != self.set.dim() {
                return Err(Error::Dimension { expected: self.set.dim(), got: s.dim() });
            }
        }
        if distance.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Config {
                field: "distance.weights",
                message: String::from("weights must be nonnegative"),
            });
        }
        self.distance = Some(distance);
        Ok(self)
    }

    /// Decision dimension `n`.
    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    /// Image dimension `m`.
    pub fn map_dim(&self) -> usize {
        self.mapping.output_dim()
    }

    /// `F(x)`.
    pub fn image(&self, x: &[f64]) -> Vec<f64> {
        self.mapping.value(x)
    }

    /// Full objective `f0(x) + h(F(x))`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.f0.value(x) + self.h.value(&self.mapping.value(x))
    }

    /// The outer function viewed as a monotone composition, when it is one.
    pub fn composed(&self) -> Option<(&OuterFunction, &[OuterFunction])> {
        match &self.h {
            OuterFunction::Composed { h0, components } => Some((h0, components)),
            _ => None,
        }
    }

    /// Summarizes the certified structure.
    pub fn assumptions(&self) -> AssumptionFlags {
        AssumptionFlags {
            h_lipschitz: self.h.lipschitz_bound(),
            mapping_lipschitz: self.mapping.mapping_lipschitz(),
            lipschitz_exact: self.mapping.lipschitz_exact,
            h_nondecreasing: self.h.nondecreasing(),
            dc_available: self.dc.is_some(),
            distance_available: self.distance.is_some(),
        }
    }
}
