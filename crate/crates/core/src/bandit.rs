//! Continuum-armed bandit testbeds.
//!
//! The search bandit pays `Cost(a) = ‖a − c‖₁ + λ ζ_k(a)` with
//! `ζ_k(a) = ‖a_{0..k}‖₂`; the ReLU bandit pays `Σ_i max(e_i a_i, 0)`.
//! Both expose their targets so that `⟨λ, ψ⟩ = −Cost` up to the chosen
//! [`ObjectiveScale`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{target_fn, TargetBundle};
use crate::graph::{InfluenceNetwork, PartitionMap};

/// How the per-target multipliers are normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveScale {
    /// Unit multipliers: `⟨λ, ψ⟩ = −Cost`.
    #[default]
    Sum,
    /// Multipliers divided by `n`: `⟨λ, ψ⟩ = −Cost / n`.
    Mean,
}

impl ObjectiveScale {
    fn factor(self, n: usize) -> f64 {
        match self {
            ObjectiveScale::Sum => 1.0,
            ObjectiveScale::Mean => 1.0 / n as f64,
        }
    }
}

/// Per-target cost components at one action.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditObservation {
    pub target_values: Vec<f64>,
    /// `−⟨λ, ψ⟩`.
    pub cost: f64,
}

/// Search bandit with centroid `c` and the `ζ_k` coupling penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBandit {
    centroid: Vec<f64>,
    penalty: f64,
    penalty_k: usize,
    scale: ObjectiveScale,
    action_box: Option<f64>,
}

pub const CENTROID_RANGE: f64 = 5.0;

impl SearchBandit {
    /// `k = 0` with a positive penalty is normalised to no penalty.
    pub fn new(centroid: Vec<f64>, penalty: f64, penalty_k: usize) -> Result<Self> {
        let n = centroid.len();
        if n == 0 {
            return Err(Error::Config(
                "search bandit needs at least one dimension".into(),
            ));
        }
        if centroid.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("centroid"));
        }
        if !(penalty >= 0.0 && penalty.is_finite()) {
            return Err(Error::Config(format!(
                "penalty {penalty} must be finite and >= 0"
            )));
        }
        if penalty_k > n {
            return Err(Error::Config(format!(
                "penalty_k {penalty_k} exceeds n = {n}"
            )));
        }
        let (penalty, penalty_k) = if penalty == 0.0 || penalty_k == 0 {
            (0.0, 0)
        } else {
            (penalty, penalty_k)
        };
        Ok(Self {
            centroid,
            penalty,
            penalty_k,
            scale: ObjectiveScale::Sum,
            action_box: None,
        })
    }

    /// Draws `c ~ U(−5, 5)ⁿ`.
    pub fn sample<R: Rng + ?Sized>(
        n: usize,
        penalty: f64,
        penalty_k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let centroid = (0..n)
            .map(|_| rng.random_range(-CENTROID_RANGE..CENTROID_RANGE))
            .collect();
        Self::new(centroid, penalty, penalty_k)
    }

    pub fn with_scale(mut self, scale: ObjectiveScale) -> Self {
        self.scale = scale;
        self
    }

    /// Restricts targets to actions clamped into `[−half_width, half_width]ⁿ`,
    /// which makes every target bounded below.
    pub fn with_action_box(mut self, half_width: f64) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::Config(format!(
                "action box {half_width} must be positive"
            )));
        }
        self.action_box = Some(half_width);
        Ok(self)
    }

    pub fn action_count(&self) -> usize {
        self.centroid.len()
    }

    pub fn centroid(&self) -> &[f64] {
        &self.centroid
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn penalty_k(&self) -> usize {
        self.penalty_k
    }

    pub fn scale(&self) -> ObjectiveScale {
        self.scale
    }

    pub fn action_box(&self) -> Option<f64> {
        self.action_box
    }

    pub fn has_coupling(&self) -> bool {
        self.penalty_k > 0
    }

    fn clamp(&self, x: f64) -> f64 {
        match self.action_box {
            Some(b) => x.clamp(-b, b),
            None => x,
        }
    }

    /// Unscaled `‖a − c‖₁ + λ ζ_k(a)`, on clamped actions when boxed.
    pub fn cost(&self, a: &[f64]) -> f64 {
        let dist: f64 = a
            .iter()
            .zip(&self.centroid)
            .map(|(&x, c)| (self.clamp(x) - c).abs())
            .sum();
        let zeta = a[..self.penalty_k]
            .iter()
            .map(|&x| self.clamp(x).powi(2))
            .sum::<f64>()
            .sqrt();
        dist + self.penalty * zeta
    }

    /// Cost-minimising action. Equal to `c` whenever `λ ≤ 1`; otherwise
    /// found by cyclic coordinate descent from `c`.
    pub fn optimum(&self) -> Vec<f64> {
        let mut x = self.centroid.clone();
        let k = self.penalty_k;
        let lam = self.penalty;
        if lam <= 1.0 || k == 0 {
            return x;
        }
        for _ in 0..100_000 {
            // refreshed every sweep so cancellation cannot leave a floor
            let mut sq: f64 = x[..k].iter().map(|v| v * v).sum();
            let mut moved = 0.0f64;
            for i in 0..k {
                let c = self.centroid[i];
                let rest = (sq - x[i] * x[i]).max(0.0);
                let r = rest.sqrt();
                let next = if (lam * c).abs() <= (c * c + rest).sqrt() {
                    c
                } else {
                    c.signum() * r / (lam * lam - 1.0).sqrt()
                };
                moved = moved.max((next - x[i]).abs());
                x[i] = next;
                sq = rest + next * next;
            }
            if moved < 1e-13 {
                break;
            }
        }
        x
    }

    /// `(Cost(μ) − Cost(μ*)) / n`, which is `‖μ − c‖₁ / n` without a penalty.
    pub fn optimality_gap(&self, mean: &[f64]) -> f64 {
        self.gap_meter().gap(mean)
    }

    /// Precomputes the optimum so repeated gap queries cost `O(n)`.
    pub fn gap_meter(&self) -> GapMeter {
        let env = Self {
            action_box: None,
            ..self.clone()
        };
        let best_cost = env.cost(&env.optimum());
        GapMeter { env, best_cost }
    }

    pub fn observe(&self, a: &[f64]) -> Result<BanditObservation> {
        let (_, bundle) = search_targets(self)?;
        let target_values = bundle.evaluate(a)?;
        let cost = -bundle.scalarise(&target_values);
        Ok(BanditObservation {
            target_values,
            cost,
        })
    }
}

/// Optimality gap with a cached optimum.
#[derive(Debug, Clone)]
pub struct GapMeter {
    env: SearchBandit,
    best_cost: f64,
}

impl GapMeter {
    pub fn gap(&self, mean: &[f64]) -> f64 {
        ((self.env.cost(mean) - self.best_cost) / self.env.action_count() as f64).max(0.0)
    }
}

fn zeta(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Targets `ψ_i = −|a_i − c_i|` (n forks) plus, with a penalty, the collider
/// `ψ_ζ = −ζ_k(a)` scoped on the first `k` actions.
pub fn search_targets(env: &SearchBandit) -> Result<(InfluenceNetwork, TargetBundle)> {
    let n = env.action_count();
    let w = env.scale.factor(n);
    let mut entries = Vec::with_capacity(n + 1);
    let mut multipliers = Vec::with_capacity(n + 1);
    let mut bounds = Vec::with_capacity(n + 1);
    let boxed = env.action_box;
    for (i, &c) in env.centroid.iter().enumerate() {
        let t = match boxed {
            Some(b) => target_fn(move |x| -(x[0].clamp(-b, b) - c).abs()),
            None => target_fn(move |x| -(x[0] - c).abs()),
        };
        entries.push((PartitionMap::new(vec![i], n)?, t));
        multipliers.push(w);
        bounds.push(boxed.map_or(f64::NEG_INFINITY, |b| -(c.abs() + b)));
    }
    if env.has_coupling() {
        let k = env.penalty_k;
        let t = match boxed {
            Some(b) => {
                target_fn(move |x| -x.iter().map(|v| v.clamp(-b, b).powi(2)).sum::<f64>().sqrt())
            }
            None => target_fn(|x| -zeta(x)),
        };
        entries.push((PartitionMap::new((0..k).collect(), n)?, t));
        multipliers.push(env.penalty * w);
        bounds.push(boxed.map_or(f64::NEG_INFINITY, |b| -(k as f64).sqrt() * b));
    }
    let mut bundle = TargetBundle::new(n, entries, multipliers)?;
    if boxed.is_some() {
        bundle = bundle.with_lower_bounds(bounds)?;
    }
    Ok((bundle.network()?, bundle))
}

/// ReLU bandit with a fixed sign vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReluBandit {
    signs: Vec<f64>,
    scale: ObjectiveScale,
}

impl ReluBandit {
    pub fn new(signs: Vec<f64>) -> Result<Self> {
        if signs.is_empty() {
            return Err(Error::Config(
                "relu bandit needs at least one dimension".into(),
            ));
        }
        if signs.iter().any(|&e| e != 1.0 && e != -1.0) {
            return Err(Error::Config("relu signs must be +1 or -1".into()));
        }
        Ok(Self {
            signs,
            scale: ObjectiveScale::Sum,
        })
    }

    /// Draws each sign uniformly from {−1, 1}.
    pub fn sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        Self::new(
            (0..n)
                .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                .collect(),
        )
    }

    pub fn with_scale(mut self, scale: ObjectiveScale) -> Self {
        self.scale = scale;
        self
    }

    pub fn action_count(&self) -> usize {
        self.signs.len()
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    /// `Σ_i max(e_i a_i, 0)`.
    pub fn cost(&self, a: &[f64]) -> f64 {
        a.iter()
            .zip(&self.signs)
            .map(|(x, e)| (e * x).max(0.0))
            .sum()
    }
}

/// Targets `ψ_i = −max(e_i a_i, 0)` with singleton scopes.
pub fn relu_targets(env: &ReluBandit) -> Result<(InfluenceNetwork, TargetBundle)> {
    let n = env.action_count();
    let w = env.scale.factor(n);
    let entries = env
        .signs
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            Ok((
                PartitionMap::new(vec![i], n)?,
                target_fn(move |x| -(e * x[0]).max(0.0)),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let bundle = TargetBundle::new(n, entries, vec![w; n])?;
    Ok((bundle.network()?, bundle))
}

/// RNG stream reserved for drawing environment parameters.
pub const ENV_STREAM: u64 = u64::MAX;

/// Declarative environment description, as found in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Search {
        n: usize,
        #[serde(default)]
        penalty: f64,
        #[serde(default)]
        penalty_k: usize,
        #[serde(default)]
        scale: ObjectiveScale,
        #[serde(default)]
        action_box: Option<f64>,
    },
    Relu {
        n: usize,
        #[serde(default)]
        scale: ObjectiveScale,
    },
}

impl EnvSpec {
    pub fn action_count(&self) -> usize {
        match self {
            EnvSpec::Search { n, .. } | EnvSpec::Relu { n, .. } => *n,
        }
    }

    pub fn with_action_count(&self, n: usize) -> Self {
        let mut out = self.clone();
        match &mut out {
            EnvSpec::Search { n: m, .. } | EnvSpec::Relu { n: m, .. } => *m = n,
        }
        out
    }

    /// Instantiates the environment; random parameters come from the
    /// seed's [`ENV_STREAM`].
    pub fn build(&self, seed: u64) -> Result<Environment> {
        let mut rng = crate::stats::chunk_rng(seed, ENV_STREAM);
        Ok(match *self {
            EnvSpec::Search {
                n,
                penalty,
                penalty_k,
                scale,
                action_box,
            } => {
                let mut env =
                    SearchBandit::sample(n, penalty, penalty_k, &mut rng)?.with_scale(scale);
                if let Some(b) = action_box {
                    env = env.with_action_box(b)?;
                }
                Environment::Search(env)
            }
            EnvSpec::Relu { n, scale } => {
                Environment::Relu(ReluBandit::sample(n, &mut rng)?.with_scale(scale))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Environment {
    Search(SearchBandit),
    Relu(ReluBandit),
}

impl Environment {
    pub fn action_count(&self) -> usize {
        match self {
            Environment::Search(e) => e.action_count(),
            Environment::Relu(e) => e.action_count(),
        }
    }

    pub fn targets(&self) -> Result<(InfluenceNetwork, TargetBundle)> {
        match self {
            Environment::Search(e) => search_targets(e),
            Environment::Relu(e) => relu_targets(e),
        }
    }

    pub fn as_search(&self) -> Option<&SearchBandit> {
        match self {
            Environment::Search(e) => Some(e),
            Environment::Relu(_) => None,
        }
    }
}

/// Free-function form of [`SearchBandit::optimality_gap`].
pub fn optimality_gap(env: &SearchBandit, mean: &[f64]) -> f64 {
    env.optimality_gap(mean)
}
