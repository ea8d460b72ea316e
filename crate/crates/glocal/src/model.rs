//! Cutting-plane models of the convex outer function.
//!
//! A model is a finite max of linearizations that under-approximates `h`
//! (or, in the structured case, each convex component `H_k` feeding a
//! monotone outer `h0`). The bundle loop maintains two invariants through
//! every update:
//!
//! * interpolation — the model matches `h` at the image of the current
//!   center, so the predicted decrease is measured against the true value;
//! * majorization after null steps — the next model dominates the center,
//!   trial, and aggregate linearizations, which is what drives the descent
//!   analysis.
//!
//! Pruning respects both invariants: cuts tagged as center cuts, the newest
//! trial cut, and the newest aggregate cut are never evicted.

use crate::linalg::{axpy, dot};
use crate::outer::OuterFunction;
use alloc::vec;
use alloc::vec::Vec;

/// Role of a cut inside the model, used by retention rules.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CutTag {
    /// Linearization of `h` (or a component) at the current center's image.
    Center,
    /// Linearization at a trial point.
    Trial,
    /// Convex combination of previous cuts with the master's multipliers.
    Aggregate,
}

/// Affine minorant `z ↦ value + ⟨slope, z − anchor⟩`.
#[derive(Clone, Debug)]
pub struct Linearization {
    /// Point the cut was generated at.
    pub anchor: Vec<f64>,
    /// Function (or model) value at the anchor.
    pub value: f64,
    /// Subgradient at the anchor.
    pub slope: Vec<f64>,
    /// Retention role.
    pub tag: CutTag,
}

impl Linearization {
    /// Cut of `h` at `z` using its deterministic subgradient.
    pub fn of(h: &OuterFunction, z: &[f64], tag: CutTag) -> Self {
        Linearization {
            anchor: z.to_vec(),
            value: h.value(z),
            slope: h.subgradient(z),
            tag,
        }
    }

    /// Evaluates the affine function at `z`.
    pub fn evaluate(&self, z: &[f64]) -> f64 {
        let mut v = self.value;
        for i in 0..z.len() {
            v += self.slope[i] * (z[i] - self.anchor[i]);
        }
        v
    }

    /// Constant term of the `d + ⟨e, z⟩` form.
    pub fn offset(&self) -> f64 {
        self.value - dot(&self.slope, &self.anchor)
    }
}

/// How the model is rebuilt when the center moves.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SeriousCutPolicy {
    /// Keep cuts active at the accepted point, plus the new center cut.
    KeepActive,
    /// Drop everything except the new center cut.
    ResetToCenter,
}

/// Max of affine minorants of a convex function.
pub struct CuttingPlaneModel {
    dim: usize,
    cuts: Vec<Linearization>,
    max_cuts: usize,
    activity_tol: f64,
}

impl CuttingPlaneModel {
    /// Empty model on arguments of dimension `dim`.
    pub fn new(dim: usize, max_cuts: usize, activity_tol: f64) -> Self {
        debug_assert!(max_cuts >= 4, "need room for center, trial, aggregate cuts");
        CuttingPlaneModel { dim, cuts: Vec::new(), max_cuts, activity_tol }
    }

    /// Argument dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The cuts, in insertion order.
    pub fn cuts(&self) -> &[Linearization] {
        &self.cuts
    }

    /// Number of cuts.
    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    /// Whether the model has no cuts yet.
    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    /// Removes all cuts.
    pub fn clear(&mut self) {
        self.cuts.clear();
    }

    /// Adds a cut (no pruning; callers prune via the update entry points).
    pub fn add(&mut self, cut: Linearization) {
        debug_assert_eq!(cut.anchor.len(), self.dim);
        self.cuts.push(cut);
    }

    /// Model value `max_l cut_l(z)`.
    pub fn evaluate(&self, z: &[f64]) -> f64 {
        debug_assert!(!self.cuts.is_empty(), "model evaluated before seeding");
        let mut best = f64::NEG_INFINITY;
        for c in &self.cuts {
            let v = c.evaluate(z);
            if v > best {
                best = v;
            }
        }
        best
    }

    /// Deterministic model subgradient: slope of the lowest-index cut
    /// attaining the max at `z`.
    pub fn subgradient(&self, z: &[f64]) -> Vec<f64> {
        let best = self.evaluate(z);
        for c in &self.cuts {
            if c.evaluate(z) == best {
                return c.slope.clone();
            }
        }
        self.cuts[0].slope.clone()
    }

    /// Convex combination of the cuts with weights `alpha`, anchored at `at`.
    pub fn aggregate(&self, alpha: &[f64], at: &[f64]) -> Linearization {
        debug_assert_eq!(alpha.len(), self.cuts.len());
        let mut slope = vec![0.0; self.dim];
        let mut value = 0.0;
        for (w, c) in alpha.iter().zip(&self.cuts) {
            if *w == 0.0 {
                continue;
            }
            axpy(*w, &c.slope, &mut slope);
            value += *w * c.evaluate(at);
        }
        Linearization { anchor: at.to_vec(), value, slope, tag: CutTag::Aggregate }
    }

    /// Rebuilds the model after an accepted (serious) step: previous center
    /// cuts become ordinary cuts, retention follows `policy`, and `center`
    /// becomes the new center cut. `probe` is the image of the new center.
    pub fn update_after_serious(
        &mut self,
        policy: SeriousCutPolicy,
        center: Linearization,
        probe: &[f64],
    ) {
        for c in self.cuts.iter_mut() {
            if c.tag == CutTag::Center {
                c.tag = CutTag::Trial;
            }
        }
        match policy {
            SeriousCutPolicy::ResetToCenter => self.cuts.clear(),
            SeriousCutPolicy::KeepActive => {
                if !self.cuts.is_empty() {
                    let best = self.evaluate(probe);
                    let tol = self.activity_tol * (1.0 + crate::util::abs(best));
                    self.cuts.retain(|c| best - c.evaluate(probe) <= tol);
                }
            }
        }
        self.cuts.push(center);
        self.prune(probe);
    }

    /// Rebuilds the model after a null or backtracking step: keeps every
    /// center cut, adds the trial and aggregate cuts, then prunes. The
    /// result majorizes all three mandatory linearizations at every point.
    pub fn update_after_null(
        &mut self,
        trial: Linearization,
        aggregate: Option<Linearization>,
        probe: &[f64],
    ) {
        self.cuts.push(trial);
        if let Some(agg) = aggregate {
            self.cuts.push(agg);
        }
        self.prune(probe);
    }

    /// Enforces the cut budget. Mandatory cuts (center cuts, the newest
    /// trial, the newest aggregate) survive; the rest are evicted in order
    /// of decreasing slack at `probe`, oldest first among equals.
    fn prune(&mut self, probe: &[f64]) {
        if self.cuts.len() <= self.max_cuts {
            return;
        }
        let last_trial = self.cuts.iter().rposition(|c| c.tag == CutTag::Trial);
        let last_agg = self.cuts.iter().rposition(|c| c.tag == CutTag::Aggregate);
        let best = self.evaluate(probe);
        let mut order: Vec<usize> = (0..self.cuts.len())
            .filter(|&i| {
                self.cuts[i].tag != CutTag::Center
                    && Some(i) != last_trial
                    && Some(i) != last_agg
            })
            .collect();
        // Largest slack evicted first; ties resolved toward older cuts.
        order.sort_by(|&i, &j| {
            let gi = best - self.cuts[i].evaluate(probe);
            let gj = best - self.cuts[j].evaluate(probe);
            gj.partial_cmp(&gi).expect("finite").then(i.cmp(&j))
        });
        let excess = self.cuts.len() - self.max_cuts;
        let mut drop = vec![false; self.cuts.len()];
        for &i in order.iter().take(excess) {
            drop[i] = true;
        }
        let mut keep = Vec::with_capacity(self.max_cuts);
        for (i, c) in self.cuts.drain(..).enumerate() {
            if !drop[i] {
                keep.push(c);
            }
        }
        self.cuts = keep;
    }
}

/// Per-component cutting-plane models under a monotone piecewise-linear
/// outer function: models `h0(𝔪_1(z), …, 𝔪_d(z)) ≤ h0(H_1(z), …, H_d(z))`.
pub struct StructuredModel {
    /// Component models, one per inner convex function.
    pub components: Vec<CuttingPlaneModel>,
}

impl StructuredModel {
    /// Empty component models for `count` inner functions on `dim_z`.
    pub fn new(count: usize, dim_z: usize, max_cuts: usize, activity_tol: f64) -> Self {
        StructuredModel {
            components: (0..count)
                .map(|_| CuttingPlaneModel::new(dim_z, max_cuts, activity_tol))
                .collect(),
        }
    }

    /// Model value `h0` applied to the component model values.
    pub fn evaluate(&self, h0: &OuterFunction, z: &[f64]) -> f64 {
        let r: Vec<f64> = self.components.iter().map(|m| m.evaluate(z)).collect();
        h0.value(&r)
    }

    /// Deterministic model subgradient via the monotone chain rule.
    pub fn subgradient(&self, h0: &OuterFunction, z: &[f64]) -> Vec<f64> {
        let r: Vec<f64> = self.components.iter().map(|m| m.evaluate(z)).collect();
        let w = h0.subgradient(&r);
        let mut g = vec![0.0; z.len()];
        for (k, m) in self.components.iter().enumerate() {
            if w[k] == 0.0 {
                continue;
            }
            axpy(w[k], &m.subgradient(z), &mut g);
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abs_h() -> OuterFunction {
        OuterFunction::AbsValue { dim: 1 }
    }

    #[test]
    fn cut_evaluation_and_offset() {
        let h = abs_h();
        let cut = Linearization::of(&h, &[2.0], CutTag::Center);
        assert!((cut.evaluate(&[2.0]) - 2.0).abs() < 1e-15);
        assert!((cut.evaluate(&[0.0]) - 0.0).abs() < 1e-15);
        assert!((cut.offset() - 0.0).abs() < 1e-15);
        // Cuts minorize h everywhere.
        assert!(cut.evaluate(&[-3.0]) <= 3.0);
    }

    #[test]
    fn model_max_and_deterministic_subgradient() {
        let h = abs_h();
        let mut m = CuttingPlaneModel::new(1, 8, 1e-12);
        m.add(Linearization::of(&h, &[2.0], CutTag::Center));
        m.add(Linearization::of(&h, &[-2.0], CutTag::Trial));
        // Model is |z| here: max(z, −z).
        assert!((m.evaluate(&[1.5]) - 1.5).abs() < 1e-15);
        assert!((m.evaluate(&[-0.5]) - 0.5).abs() < 1e-15);
        // At the tie z = 0 the lowest-index cut wins.
        assert_eq!(m.subgradient(&[0.0]), vec![1.0]);
    }

    #[test]
    fn aggregate_is_a_valid_minorant() {
        let h = abs_h();
        let mut m = CuttingPlaneModel::new(1, 8, 1e-12);
        m.add(Linearization::of(&h, &[1.0], CutTag::Center));
        m.add(Linearization::of(&h, &[-1.0], CutTag::Trial));
        let agg = m.aggregate(&[0.25, 0.75], &[0.5]);
        assert!((agg.slope[0] - (0.25 - 0.75)).abs() < 1e-15);
        for &z in &[-2.0, -0.3, 0.0, 0.7, 2.0] {
            assert!(agg.evaluate(&[z]) <= h.value(&[z]) + 1e-14);
        }
    }

    #[test]
    fn serious_update_demotes_old_center_and_keeps_active() {
        let h = abs_h();
        let mut m = CuttingPlaneModel::new(1, 8, 1e-9);
        m.add(Linearization::of(&h, &[2.0], CutTag::Center));
        m.add(Linearization::of(&h, &[-5.0], CutTag::Trial));
        // New center at z = 3: the slope-1 cut from z = 2 is active there, the
        // z = −5 cut is not.
        let center = Linearization::of(&h, &[3.0], CutTag::Center);
        m.update_after_serious(SeriousCutPolicy::KeepActive, center, &[3.0]);
        assert_eq!(m.len(), 2);
        assert_eq!(m.cuts().iter().filter(|c| c.tag == CutTag::Center).count(), 1);
        // Interpolation at the new center image.
        assert!((m.evaluate(&[3.0]) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn reset_policy_keeps_only_center() {
        let h = abs_h();
        let mut m = CuttingPlaneModel::new(1, 8, 1e-9);
        m.add(Linearization::of(&h, &[2.0], CutTag::Center));
        m.add(Linearization::of(&h, &[-5.0], CutTag::Trial));
        let center = Linearization::of(&h, &[3.0], CutTag::Center);
        m.update_after_serious(SeriousCutPolicy::ResetToCenter, center, &[3.0]);
        assert_eq!(m.len(), 1);
        assert_eq!(m.cuts()[0].tag, CutTag::Center);
    }

    #[test]
    fn null_update_majorizes_mandatory_cuts_under_pruning() {
        let h = abs_h();
        let mut m = CuttingPlaneModel::new(1, 4, 1e-12);
        m.add(Linearization::of(&h, &[1.0], CutTag::Center));
        for i in 0..6 {
            let z = [-1.0 - i as f64];
            let trial = Linearization::of(&h, &z, CutTag::Trial);
            let agg = m.aggregate(
                &core::iter::once(1.0)
                    .chain(core::iter::repeat(0.0))
                    .take(m.len())
                    .collect::<Vec<_>>(),
                &z,
            );
            m.update_after_null(trial, Some(agg), &z);
            assert!(m.len() <= 4);
            // Center cut always survives.
            assert!(m.cuts().iter().any(|c| c.tag == CutTag::Center));
            // The newest trial cut survives: model matches h at the probe.
            assert!((m.evaluate(&z) - h.value(&z)).abs() < 1e-14);
        }
    }

    #[test]
    fn structured_matches_flat_on_monotone_composition() {
        // h = 2·max{0, H(z)} with H = max of coordinates; models seeded with
        // the same cuts must agree with the flat composition.
        let h0 = OuterFunction::hinge(2.0);
        let inner = OuterFunction::MaxOfCoordinates { dim: 2 };
        let mut s = StructuredModel::new(1, 2, 8, 1e-12);
        for z in [[1.0, -0.5], [-0.2, 0.4], [0.3, 0.3]] {
            s.components[0].add(Linearization::of(&inner, &z, CutTag::Trial));
        }
        let mut rng = crate::util::SplitMix64::new(7);
        for _ in 0..100 {
            let z = [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
            let flat = {
                let r = s.components[0].evaluate(&z);
                h0.value(&[r])
            };
            assert!((s.evaluate(&h0, &z) - flat).abs() < 1e-14);
            // Under-approximation of the true composition.
            let truth = h0.value(&[inner.value(&z)]);
            assert!(s.evaluate(&h0, &z) <= truth + 1e-14);
        }
    }
}
