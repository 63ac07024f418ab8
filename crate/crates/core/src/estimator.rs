//! Scoped targets, factor baselines and the vanilla / factored estimators.
//!
//! Both estimators are written as `g = S · c` where `c` holds one scalar
//! per policy factor. The vanilla estimator uses the full scalarised target
//! `⟨λ, ψ⟩` for every factor; the factored estimator keeps only the targets
//! linked to the factor in `K_Σ`, i.e. `c = K_Σ (λ ∘ ψ)`. The difference is
//! the factor baseline `b^F = (1 − K_Σ)(λ ∘ ψ)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{InfluenceMatrix, InfluenceNetwork, PartitionMap, PolicyFactorisation};
use crate::policy::ScoreMatrix;

/// A target component evaluated on its scoped sub-action `σ_j(a)`.
///
/// Environments here are single-state bandits, so targets take no context.
pub trait Target: Send + Sync {
    fn eval(&self, sub_action: &[f64]) -> f64;
}

struct FnTarget<F>(F);

impl<F: Fn(&[f64]) -> f64 + Send + Sync> Target for FnTarget<F> {
    fn eval(&self, sub_action: &[f64]) -> f64 {
        (self.0)(sub_action)
    }
}

/// Wraps a closure as a shareable [`Target`].
pub fn target_fn<F>(f: F) -> Arc<dyn Target>
where
    F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
{
    Arc::new(FnTarget(f))
}

/// The `m` scoped targets `ψ_j` and multipliers `λ` of a scalarised
/// objective `ψ(a) = Σ_j λ_j ψ_j(σ_j(a))`.
#[derive(Clone)]
pub struct TargetBundle {
    action_count: usize,
    scopes: Vec<PartitionMap>,
    targets: Vec<Arc<dyn Target>>,
    multipliers: Vec<f64>,
    offsets: Vec<f64>,
    lower_bounds: Option<Vec<f64>>,
}

impl fmt::Debug for TargetBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetBundle")
            .field("action_count", &self.action_count)
            .field("scopes", &self.scopes)
            .field("multipliers", &self.multipliers)
            .field("offsets", &self.offsets)
            .field("lower_bounds", &self.lower_bounds)
            .finish_non_exhaustive()
    }
}

impl TargetBundle {
    pub fn new(
        action_count: usize,
        entries: Vec<(PartitionMap, Arc<dyn Target>)>,
        multipliers: Vec<f64>,
    ) -> Result<Self> {
        if multipliers.len() != entries.len() {
            return Err(Error::LengthMismatch {
                expected: entries.len(),
                actual: multipliers.len(),
            });
        }
        if entries.is_empty() {
            return Err(Error::EmptyNetwork {
                actions: action_count,
                targets: 0,
            });
        }
        if let Some((s, _)) = entries.iter().find(|(s, _)| s.total_dims() != action_count) {
            return Err(Error::LengthMismatch {
                expected: action_count,
                actual: s.total_dims(),
            });
        }
        if multipliers.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("multipliers"));
        }
        let m = entries.len();
        let (scopes, targets) = entries.into_iter().unzip();
        Ok(Self {
            action_count,
            scopes,
            targets,
            multipliers,
            offsets: vec![0.0; m],
            lower_bounds: None,
        })
    }

    /// Unit multipliers.
    pub fn unweighted(
        action_count: usize,
        entries: Vec<(PartitionMap, Arc<dyn Target>)>,
    ) -> Result<Self> {
        let m = entries.len();
        Self::new(action_count, entries, vec![1.0; m])
    }

    /// Declares `inf ψ_j` for each target.
    pub fn with_lower_bounds(mut self, bounds: Vec<f64>) -> Result<Self> {
        if bounds.len() != self.targets.len() {
            return Err(Error::LengthMismatch {
                expected: self.targets.len(),
                actual: bounds.len(),
            });
        }
        self.lower_bounds = Some(bounds);
        Ok(self)
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn target_count(&self) -> usize {
        self.targets.len()
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    pub fn scope(&self, j: usize) -> &PartitionMap {
        &self.scopes[j]
    }

    pub fn lower_bounds(&self) -> Option<&[f64]> {
        self.lower_bounds.as_deref()
    }

    /// Constant added to each target by [`TargetBundle::translate`].
    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// Influence network implied by the target scopes.
    pub fn network(&self) -> Result<InfluenceNetwork> {
        InfluenceNetwork::new(
            self.action_count,
            self.targets.len(),
            self.scopes
                .iter()
                .enumerate()
                .flat_map(|(j, s)| s.indices().iter().map(move |&i| (i, j))),
        )
    }

    /// Checks that each scope equals the target's parents in `net`.
    pub fn check_network(&self, net: &InfluenceNetwork) -> Result<()> {
        if net.action_count() != self.action_count || net.target_count() != self.targets.len() {
            return Err(Error::ShapeMismatch(format!(
                "bundle is {}x{}, network is {}x{}",
                self.action_count,
                self.targets.len(),
                net.action_count(),
                net.target_count()
            )));
        }
        for (j, s) in self.scopes.iter().enumerate() {
            if s.indices() != net.parents(j) {
                return Err(Error::ShapeMismatch(format!(
                    "scope of target {j} disagrees with the network"
                )));
            }
        }
        Ok(())
    }

    /// `ψ(a)`; each `ψ_j` only ever sees `σ_j(a)`.
    pub fn evaluate(&self, a: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.targets.len()];
        self.evaluate_into(a, &mut Vec::new(), &mut out)?;
        Ok(out)
    }

    /// Allocation-free variant of [`TargetBundle::evaluate`].
    pub fn evaluate_into(&self, a: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) -> Result<()> {
        if a.len() != self.action_count {
            return Err(Error::LengthMismatch {
                expected: self.action_count,
                actual: a.len(),
            });
        }
        for (j, ((scope, target), off)) in self
            .scopes
            .iter()
            .zip(&self.targets)
            .zip(&self.offsets)
            .enumerate()
        {
            scope.gather_into(a, scratch);
            let v = target.eval(scratch) + off;
            if !v.is_finite() {
                return Err(Error::NonFinite("target value"));
            }
            out[j] = v;
        }
        Ok(())
    }

    /// `⟨λ, ψ⟩`.
    pub fn scalarise(&self, psi: &[f64]) -> f64 {
        self.multipliers.iter().zip(psi).map(|(l, p)| l * p).sum()
    }

    /// Shifts every target by `−Σ_j λ_j inf ψ_j + ε`. The shift is a
    /// constant, so estimator means are unchanged; with non-negative
    /// multipliers and tight bounds every factor's variance change is
    /// non-negative.
    pub fn translate(&self, epsilon: f64) -> Result<Self> {
        let bounds = self
            .lower_bounds
            .as_ref()
            .ok_or(Error::MissingLowerBound(0))?;
        if let Some(j) = bounds.iter().position(|b| !b.is_finite()) {
            return Err(Error::MissingLowerBound(j));
        }
        let shift = -self
            .multipliers
            .iter()
            .zip(bounds)
            .map(|(l, b)| l * b)
            .sum::<f64>()
            + epsilon;
        let mut out = self.clone();
        for o in out.offsets.iter_mut() {
            *o += shift;
        }
        out.lower_bounds = Some(bounds.iter().map(|b| b + shift).collect());
        Ok(out)
    }
}

/// Free-function form of [`TargetBundle::evaluate`].
pub fn evaluate_targets(bundle: &TargetBundle, a: &[f64]) -> Result<Vec<f64>> {
    bundle.evaluate(a)
}

/// Free-function form of [`TargetBundle::translate`].
pub fn translate_targets(bundle: &TargetBundle, epsilon: f64) -> Result<TargetBundle> {
    bundle.translate(epsilon)
}

fn check_shapes(k: &InfluenceMatrix, lambda: &[f64], psi: &[f64]) -> Result<()> {
    if lambda.len() != psi.len() || k.cols() != psi.len() {
        return Err(Error::ShapeMismatch(format!(
            "influence matrix is {}x{} with {} multipliers and {} targets",
            k.rows(),
            k.cols(),
            lambda.len(),
            psi.len()
        )));
    }
    Ok(())
}

/// `λ ∘ ψ` into `out`, returning `⟨λ, ψ⟩`.
pub fn weighted_targets(lambda: &[f64], psi: &[f64], out: &mut Vec<f64>) -> f64 {
    out.clear();
    out.extend(lambda.iter().zip(psi).map(|(l, p)| l * p));
    out.iter().sum()
}

/// `K_Σ (λ ∘ ψ)`: the part of the objective each factor is linked to.
pub fn linked_targets(k: &InfluenceMatrix, weighted: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend((0..k.rows()).map(|i| k.row(i).iter().map(|&j| weighted[j]).sum::<f64>()));
}

/// Factor baselines `b^F_i = Σ_j (1 − K_Σ[i][j]) λ_j ψ_j`.
///
/// Computed as `⟨λ, ψ⟩ − [K_Σ(λ∘ψ)]_i`, which is exactly zero for full rows.
pub fn factor_baselines(k: &InfluenceMatrix, lambda: &[f64], psi: &[f64]) -> Result<Vec<f64>> {
    check_shapes(k, lambda, psi)?;
    let mut w = Vec::new();
    let total = weighted_targets(lambda, psi, &mut w);
    let mut linked = Vec::new();
    linked_targets(k, &w, &mut linked);
    Ok(linked.into_iter().map(|l| total - l).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// `g = S 1 (λ∘ψ)`.
    #[serde(rename = "vpg")]
    Vanilla,
    /// `g = S K_Σ (λ∘ψ)`.
    #[serde(rename = "fpg")]
    Factored,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Estimator::Vanilla => "vpg",
            Estimator::Factored => "fpg",
        }
    }

    /// Per-factor target before any auxiliary baseline.
    pub fn column_targets(
        self,
        k: &InfluenceMatrix,
        weighted: &[f64],
        total: f64,
        out: &mut Vec<f64>,
    ) {
        match self {
            Estimator::Vanilla => {
                out.clear();
                out.resize(k.rows(), total);
            }
            Estimator::Factored => linked_targets(k, weighted, out),
        }
    }
}

/// Auxiliary baseline values subtracted from each factor's target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AuxOffset<'a> {
    None,
    Uniform(f64),
    PerFactor(&'a [f64]),
}

impl AuxOffset<'_> {
    fn at(&self, i: usize) -> f64 {
        match self {
            AuxOffset::None => 0.0,
            AuxOffset::Uniform(b) => *b,
            AuxOffset::PerFactor(v) => v[i],
        }
    }

    fn check(&self, factors: usize) -> Result<()> {
        match self {
            AuxOffset::PerFactor(v) if v.len() != factors => Err(Error::LengthMismatch {
                expected: factors,
                actual: v.len(),
            }),
            _ => Ok(()),
        }
    }
}

/// One draw of a gradient estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub gradient: Vec<f64>,
    pub target_values: Vec<f64>,
    /// `b^F` for the factored estimator, zeros for the vanilla one.
    pub factor_baselines: Vec<f64>,
    /// Auxiliary baseline value subtracted per factor.
    pub aux_offsets: Vec<f64>,
}

impl GradientSample {
    pub fn is_finite(&self) -> bool {
        self.gradient.iter().all(|v| v.is_finite())
    }
}

fn estimate(
    estimator: Estimator,
    s: &ScoreMatrix,
    k: &InfluenceMatrix,
    lambda: &[f64],
    psi: &[f64],
    aux: AuxOffset<'_>,
) -> Result<GradientSample> {
    check_shapes(k, lambda, psi)?;
    if k.rows() != s.factor_count() {
        return Err(Error::ShapeMismatch(format!(
            "score matrix has {} factor columns, K has {} rows",
            s.factor_count(),
            k.rows()
        )));
    }
    aux.check(s.factor_count())?;
    let mut w = Vec::new();
    let total = weighted_targets(lambda, psi, &mut w);
    let mut coef = Vec::new();
    estimator.column_targets(k, &w, total, &mut coef);
    let factor_baselines = match estimator {
        Estimator::Vanilla => vec![0.0; coef.len()],
        Estimator::Factored => coef.iter().map(|c| total - c).collect(),
    };
    let aux_offsets: Vec<f64> = (0..coef.len()).map(|i| aux.at(i)).collect();
    for (c, b) in coef.iter_mut().zip(&aux_offsets) {
        *c -= b;
    }
    Ok(GradientSample {
        gradient: s.mul_vec(&coef),
        target_values: psi.to_vec(),
        factor_baselines,
        aux_offsets,
    })
}

/// Vanilla policy gradient: every factor column scaled by `⟨λ,ψ⟩ − b_aux`.
pub fn vpg(
    s: &ScoreMatrix,
    lambda: &[f64],
    psi: &[f64],
    aux: AuxOffset<'_>,
) -> Result<GradientSample> {
    let k = InfluenceMatrix::all_ones(s.factor_count(), psi.len());
    estimate(Estimator::Vanilla, s, &k, lambda, psi, aux)
}

/// Factored policy gradient `S K_Σ (λ∘ψ)` with optional auxiliary baseline.
pub fn fpg(
    s: &ScoreMatrix,
    k: &InfluenceMatrix,
    lambda: &[f64],
    psi: &[f64],
    aux: AuxOffset<'_>,
) -> Result<GradientSample> {
    estimate(Estimator::Factored, s, k, lambda, psi, aux)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxKind {
    #[default]
    None,
    ScalarTd,
    ActionDependent,
}

impl AuxKind {
    pub fn label(self) -> &'static str {
        match self {
            AuxKind::None => "none",
            AuxKind::ScalarTd => "b(s)",
            AuxKind::ActionDependent => "b(s,a)",
        }
    }
}

/// Learned baseline subtracted on top of (or instead of) factor baselines.
///
/// The action-dependent form is `b(a) = −‖a − w‖₁ / n`. For factor `i` it is
/// evaluated on a counterfactual action whose factor-`i` coordinates are
/// replaced by the policy mean, so the value never depends on the factor's
/// own sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuxiliaryBaseline {
    None,
    ScalarTd {
        value: f64,
        learning_rate: f64,
    },
    ActionDependent {
        weights: Vec<f64>,
        learning_rate: f64,
    },
}

fn check_rate(lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr <= 1.0) {
        return Err(Error::Config(format!(
            "baseline learning rate {lr} outside (0, 1]"
        )));
    }
    Ok(())
}

impl AuxiliaryBaseline {
    pub fn scalar(learning_rate: f64) -> Result<Self> {
        check_rate(learning_rate)?;
        Ok(Self::ScalarTd {
            value: 0.0,
            learning_rate,
        })
    }

    pub fn action_dependent(action_count: usize, learning_rate: f64) -> Result<Self> {
        check_rate(learning_rate)?;
        Ok(Self::ActionDependent {
            weights: vec![0.0; action_count],
            learning_rate,
        })
    }

    pub fn from_kind(kind: AuxKind, action_count: usize, learning_rate: f64) -> Result<Self> {
        match kind {
            AuxKind::None => Ok(Self::None),
            AuxKind::ScalarTd => Self::scalar(learning_rate),
            AuxKind::ActionDependent => Self::action_dependent(action_count, learning_rate),
        }
    }

    pub fn kind(&self) -> AuxKind {
        match self {
            Self::None => AuxKind::None,
            Self::ScalarTd { .. } => AuxKind::ScalarTd,
            Self::ActionDependent { .. } => AuxKind::ActionDependent,
        }
    }

    /// `b(s)` or `b(s, a)`; zero when there is no baseline.
    pub fn value(&self, a: &[f64]) -> f64 {
        match self {
            Self::None => 0.0,
            Self::ScalarTd { value, .. } => *value,
            Self::ActionDependent { weights, .. } => {
                -a.iter()
                    .zip(weights)
                    .map(|(x, w)| (x - w).abs())
                    .sum::<f64>()
                    / weights.len() as f64
            }
        }
    }

    /// Per-factor offsets for action `a`. Returns `None` when no baseline is
    /// configured so callers can skip the subtraction.
    pub fn offsets<'a>(
        &self,
        a: &[f64],
        policy_mean: &[f64],
        sigma: &PolicyFactorisation,
        buf: &'a mut Vec<f64>,
        scratch: &mut Vec<f64>,
    ) -> AuxOffset<'a> {
        match self {
            Self::None => AuxOffset::None,
            Self::ScalarTd { value, .. } => AuxOffset::Uniform(*value),
            Self::ActionDependent { .. } => {
                buf.clear();
                scratch.clear();
                scratch.extend_from_slice(a);
                for f in sigma.factors() {
                    for &d in f.indices() {
                        scratch[d] = policy_mean[d];
                    }
                    buf.push(self.value(scratch));
                    for &d in f.indices() {
                        scratch[d] = a[d];
                    }
                }
                AuxOffset::PerFactor(buf)
            }
        }
    }

    /// One TD (scalar) or SARSA-style (action-dependent) step towards the
    /// observed target. For the ℓ₁ form the subgradient of `|a_d − w_d|`
    /// at a tie is taken as `+1`.
    pub fn update(&mut self, a: &[f64], observed: f64) {
        let current = self.value(a);
        match self {
            Self::None => {}
            Self::ScalarTd {
                value,
                learning_rate,
            } => *value += *learning_rate * (observed - *value),
            Self::ActionDependent {
                weights,
                learning_rate,
            } => {
                let step = *learning_rate * (observed - current) / weights.len() as f64;
                for (w, x) in weights.iter_mut().zip(a) {
                    let sign = if *x >= *w { 1.0 } else { -1.0 };
                    *w += step * sign;
                }
            }
        }
    }
}

/// Free-function form of [`AuxiliaryBaseline::update`].
pub fn update_aux_baseline(aux: &mut AuxiliaryBaseline, a: &[f64], observed: f64) {
    aux.update(a, observed);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{factorise, PolicyFactorisation};
    use crate::policy::FactoredGaussianPolicy;
    use crate::stats::VecMoments;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pm(ix: &[usize], n: usize) -> PartitionMap {
        PartitionMap::new(ix.to_vec(), n).unwrap()
    }

    /// Two actions sharing two targets, a third sharing one of them.
    fn coupled_bundle(lambda: Vec<f64>) -> TargetBundle {
        TargetBundle::new(
            3,
            vec![
                (
                    pm(&[0, 1], 3),
                    target_fn(|x| -(x[0] - 1.0).powi(2) - (x[1] + 0.5).abs()),
                ),
                (
                    pm(&[0, 1, 2], 3),
                    target_fn(|x| -(x[0] + x[1] - x[2]).abs()),
                ),
                (pm(&[2], 3), target_fn(|x| -(x[0] - 2.0).abs())),
            ],
            lambda,
        )
        .unwrap()
    }

    #[test]
    fn scoped_evaluation() {
        let b = coupled_bundle(vec![1.0; 3]);
        let psi = evaluate_targets(&b, &[1.0, -0.5, 2.0]).unwrap();
        assert_eq!(psi, vec![0.0, -1.5, 0.0]);
        assert!(b.evaluate(&[0.0; 2]).is_err());
        let net = b.network().unwrap();
        assert_eq!(
            net.influence_matrix().to_bit_strings(),
            vec!["110", "110", "011"]
        );
        b.check_network(&net).unwrap();
        let other = InfluenceNetwork::new(3, 3, [(0, 0), (1, 1), (2, 2)]).unwrap();
        assert!(b.check_network(&other).is_err());
    }

    #[test]
    fn non_finite_targets_rejected() {
        let b = TargetBundle::unweighted(1, vec![(pm(&[0], 1), target_fn(|x| x[0].ln()))]).unwrap();
        assert_eq!(b.evaluate(&[-1.0]), Err(Error::NonFinite("target value")));
    }

    #[test]
    fn factor_baseline_examples() {
        let ones = InfluenceMatrix::all_ones(2, 3);
        assert_eq!(
            factor_baselines(&ones, &[1.0; 3], &[1.0, -2.0, 5.0]).unwrap(),
            vec![0.0, 0.0]
        );

        let fc = InfluenceMatrix::from_rows(vec![vec![0, 1], vec![1]], 2).unwrap();
        assert_eq!(
            factor_baselines(&fc, &[1.0, 1.0], &[2.0, 3.0]).unwrap(),
            vec![0.0, 2.0]
        );

        let psi = [1.5, -2.0, 4.0, 0.25];
        let b = factor_baselines(&InfluenceMatrix::identity(4), &[1.0; 4], &psi).unwrap();
        for i in 0..4 {
            let others: f64 = (0..4).filter(|&j| j != i).map(|j| psi[j]).sum();
            assert!((b[i] - others).abs() < 1e-12);
        }
        assert!(factor_baselines(&fc, &[1.0], &[2.0, 3.0]).is_err());
    }

    fn unit_policy(sigma: PolicyFactorisation) -> FactoredGaussianPolicy {
        let n = sigma.action_count();
        FactoredGaussianPolicy::isotropic(sigma, vec![0.0; n], 1.0).unwrap()
    }

    #[test]
    fn vpg_reductions() {
        let p = unit_policy(PolicyFactorisation::joint(2).unwrap());
        let s = p.score_matrix(&[0.5, -1.0]).unwrap();
        let zero = vpg(&s, &[1.0, 1.0], &[0.0, 0.0], AuxOffset::None).unwrap();
        assert_eq!(zero.gradient, vec![0.0, 0.0]);
        let g = vpg(&s, &[2.0, 1.0], &[1.0, 3.0], AuxOffset::Uniform(1.0)).unwrap();
        // (⟨λ,ψ⟩ − b) z = 4 z
        assert_eq!(g.gradient, vec![2.0, -4.0]);
    }

    #[test]
    fn fpg_zeroes_unlinked_targets() {
        let net = coupled_bundle(vec![1.0; 3]).network().unwrap();
        let sigma = PolicyFactorisation::new(3, vec![vec![0, 1], vec![2]]).unwrap();
        let k = factorise(&net, &sigma).unwrap().influence_matrix().clone();
        let p = unit_policy(sigma);
        let s = p.score_matrix(&[0.0, 0.0, 1.0]).unwrap();
        // only ψ0 is non-zero: factor 2 must ignore it
        let g = fpg(&s, &k, &[1.0; 3], &[5.0, 0.0, 0.0], AuxOffset::None).unwrap();
        assert_eq!(g.gradient[2], 0.0);
        assert_eq!(g.factor_baselines, vec![0.0, 5.0]);
    }

    #[test]
    fn fpg_with_full_influence_is_vpg() {
        let p = unit_policy(PolicyFactorisation::singletons(3).unwrap());
        let s = p.score_matrix(&[0.3, -1.2, 0.7]).unwrap();
        let psi = [0.1, -2.0, 3.3];
        let lam = [1.0, 0.5, 2.0];
        let v = vpg(&s, &lam, &psi, AuxOffset::Uniform(0.2)).unwrap();
        let f = fpg(
            &s,
            &InfluenceMatrix::all_ones(3, 3),
            &lam,
            &psi,
            AuxOffset::Uniform(0.2),
        )
        .unwrap();
        assert_eq!(v.gradient, f.gradient);
    }

    #[test]
    fn per_factor_aux_shape() {
        let p = unit_policy(PolicyFactorisation::singletons(2).unwrap());
        let s = p.score_matrix(&[1.0, 1.0]).unwrap();
        assert!(vpg(&s, &[1.0], &[1.0], AuxOffset::PerFactor(&[0.0])).is_err());
        let g = vpg(&s, &[1.0], &[1.0], AuxOffset::PerFactor(&[0.0, 1.0])).unwrap();
        assert_eq!(g.gradient, vec![1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn fpg_equals_vpg_minus_factor_correction(
            a in prop::collection::vec(-3.0f64..3.0, 3),
            lam in prop::collection::vec(0.5f64..2.0, 3),
            aux in -2.0f64..2.0,
            split in 0usize..5,
        ) {
            let groups = match split {
                0 => vec![vec![0], vec![1], vec![2]],
                1 => vec![vec![0, 1], vec![2]],
                2 => vec![vec![0, 2], vec![1]],
                3 => vec![vec![0], vec![1, 2]],
                _ => vec![vec![0, 1, 2]],
            };
            let bundle = coupled_bundle(lam.clone());
            let net = bundle.network().unwrap();
            let sigma = PolicyFactorisation::new(3, groups).unwrap();
            let k = factorise(&net, &sigma).unwrap().influence_matrix().clone();
            let p = unit_policy(sigma);
            let s = p.score_matrix(&a).unwrap();
            let psi = bundle.evaluate(&a).unwrap();
            let v = vpg(&s, &lam, &psi, AuxOffset::Uniform(aux)).unwrap();
            let f = fpg(&s, &k, &lam, &psi, AuxOffset::Uniform(aux)).unwrap();
            let b = factor_baselines(&k, &lam, &psi).unwrap();
            let correction = s.mul_vec(&b);
            for d in 0..3 {
                prop_assert!((f.gradient[d] - (v.gradient[d] - correction[d])).abs() < 1e-12);
            }
        }

        #[test]
        fn targets_ignore_coordinates_outside_scope(
            a in prop::collection::vec(-3.0f64..3.0, 3),
            bump in -5.0f64..5.0,
            d in 0usize..3,
        ) {
            let bundle = coupled_bundle(vec![1.0; 3]);
            let psi = bundle.evaluate(&a).unwrap();
            let mut b = a.clone();
            b[d] += bump;
            let moved = bundle.evaluate(&b).unwrap();
            for j in 0..3 {
                if !bundle.scope(j).contains(d) {
                    prop_assert_eq!(psi[j], moved[j]);
                }
            }
        }
    }

    #[test]
    fn scalar_td_updates() {
        let mut b = AuxiliaryBaseline::scalar(0.1).unwrap();
        b.update(&[], -10.0);
        assert!((b.value(&[]) + 1.0).abs() < 1e-15);
        let mut c = AuxiliaryBaseline::scalar(0.1).unwrap();
        for _ in 0..500 {
            c.update(&[], 3.0);
        }
        assert!((c.value(&[]) - 3.0).abs() < 1e-12);
        assert!(AuxiliaryBaseline::scalar(0.0).is_err());
        assert!(AuxiliaryBaseline::scalar(1.5).is_err());
    }

    #[test]
    fn action_dependent_tie_and_fit() {
        let mut b = AuxiliaryBaseline::action_dependent(2, 0.1).unwrap();
        // w = a exactly: tie subgradient
        b.update(&[0.0, 0.0], -1.0);
        match &b {
            AuxiliaryBaseline::ActionDependent { weights, .. } => {
                assert!(weights.iter().all(|w| w.is_finite()));
                assert_eq!(weights, &vec![-0.05, -0.05]);
            }
            _ => unreachable!(),
        }
        // fits −‖a − c‖₁/n when trained on that target
        let c = [1.0, -2.0];
        let mut b = AuxiliaryBaseline::action_dependent(2, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = unit_policy(PolicyFactorisation::singletons(2).unwrap());
        for _ in 0..20_000 {
            let a = p.sample(&mut rng);
            let target = -((a[0] - c[0]).abs() + (a[1] - c[1]).abs()) / 2.0;
            b.update(&a, target);
        }
        if let AuxiliaryBaseline::ActionDependent { weights, .. } = &b {
            assert!(
                (weights[0] - c[0]).abs() < 0.2 && (weights[1] - c[1]).abs() < 0.2,
                "{weights:?}"
            );
        }
    }

    #[test]
    fn counterfactual_offsets_ignore_own_factor() {
        let sigma = PolicyFactorisation::new(3, vec![vec![0, 1], vec![2]]).unwrap();
        let b = AuxiliaryBaseline::ActionDependent {
            weights: vec![0.0; 3],
            learning_rate: 0.1,
        };
        let mean = [0.0; 3];
        let (mut buf, mut scratch) = (Vec::new(), Vec::new());
        let off = b.offsets(&[1.0, 2.0, 3.0], &mean, &sigma, &mut buf, &mut scratch);
        assert_eq!(off, AuxOffset::PerFactor(&[-1.0, -1.0]));
        let mut buf2 = Vec::new();
        let off2 = b.offsets(&[9.0, -9.0, 3.0], &mean, &sigma, &mut buf2, &mut scratch);
        // factor 0's offset is unchanged by its own coordinates
        if let (AuxOffset::PerFactor(x), AuxOffset::PerFactor(y)) = (off, off2) {
            assert_eq!(x[0], y[0]);
        }
    }

    #[test]
    fn translation_shifts_by_weighted_bounds() {
        let b = coupled_bundle(vec![1.0, 2.0, 0.5]);
        assert_eq!(b.translate(0.0).unwrap_err(), Error::MissingLowerBound(0));
        let zero = b
            .clone()
            .with_lower_bounds(vec![0.0; 3])
            .unwrap()
            .translate(0.0)
            .unwrap();
        assert_eq!(
            zero.evaluate(&[0.1, 0.2, 0.3]).unwrap(),
            b.evaluate(&[0.1, 0.2, 0.3]).unwrap()
        );
        let t = b
            .clone()
            .with_lower_bounds(vec![-1.0, -2.0, -4.0])
            .unwrap()
            .translate(0.5)
            .unwrap();
        let shift = 1.0 + 4.0 + 2.0 + 0.5;
        let raw = b.evaluate(&[0.1, 0.2, 0.3]).unwrap();
        let moved = t.evaluate(&[0.1, 0.2, 0.3]).unwrap();
        for j in 0..3 {
            assert!((moved[j] - raw[j] - shift).abs() < 1e-12);
        }
        let inf = b
            .with_lower_bounds(vec![0.0, f64::NEG_INFINITY, 0.0])
            .unwrap();
        assert_eq!(inf.translate(0.0).unwrap_err(), Error::MissingLowerBound(1));
    }

    #[test]
    fn vpg_and_fpg_share_their_mean() {
        // same draws for both estimators; the factor correction averages out
        let bundle = coupled_bundle(vec![1.3, 0.7, 1.9]);
        let net = bundle.network().unwrap();
        let sigma = crate::graph::minimum_factorisation(&net);
        let k = factorise(&net, &sigma).unwrap().influence_matrix().clone();
        let p = unit_policy(sigma);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut diff = VecMoments::new(3);
        for _ in 0..200_000 {
            let a = p.sample(&mut rng);
            let s = p.score_matrix(&a).unwrap();
            let psi = bundle.evaluate(&a).unwrap();
            let v = vpg(&s, bundle.multipliers(), &psi, AuxOffset::None).unwrap();
            let f = fpg(&s, &k, bundle.multipliers(), &psi, AuxOffset::None).unwrap();
            let d: Vec<f64> = v
                .gradient
                .iter()
                .zip(&f.gradient)
                .map(|(x, y)| x - y)
                .collect();
            diff.push(&d);
        }
        for m in diff.coords() {
            assert!(
                m.mean().abs() < 3.0 * m.standard_error(),
                "{} vs {}",
                m.mean(),
                m.standard_error()
            );
        }
    }
}
