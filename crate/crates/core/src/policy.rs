//! Factored Gaussian policies over real action vectors.
//!
//! Each factor is a diagonal Gaussian over the action coordinates selected by
//! its partition map. Only the means are learned; standard deviations stay
//! fixed. In [`SharingMode::Independent`] the parameter vector is the mean
//! of every action coordinate (so `θ[d]` drives `a[d]`). In
//! [`SharingMode::Shared`] every factor has the same width `w` and reads its
//! mean from one common `w`-vector.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{PartitionMap, PolicyFactorisation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharingMode {
    Independent,
    Shared,
}

/// One diagonal Gaussian factor, used to assemble independent policies.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFactor {
    pub partition: PartitionMap,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Sparsity pattern of a score matrix: for each factor column, the
/// parameter rows it touches, in the factor's local coordinate order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScorePattern {
    param_count: usize,
    col_ptr: Vec<usize>,
    rows: Vec<usize>,
}

/// `|θ| × |Σ|` matrix whose column `i` is `∇_θ ln π_i(σ_i(a))`.
///
/// Entries outside a column's pattern are exact zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pattern: Arc<ScorePattern>,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn param_count(&self) -> usize {
        self.pattern.param_count
    }

    pub fn factor_count(&self) -> usize {
        self.pattern.col_ptr.len() - 1
    }

    fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.pattern.col_ptr[i]..self.pattern.col_ptr[i + 1]
    }

    /// Parameter rows and values of column `i`.
    pub fn column(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.range(i);
        (&self.pattern.rows[r.clone()], &self.values[r])
    }

    /// `⟨z_i, z_i⟩`.
    pub fn column_sq_norm(&self, i: usize) -> f64 {
        self.values[self.range(i)].iter().map(|v| v * v).sum()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let (rows, vals) = self.column(col);
        rows.iter()
            .zip(vals)
            .filter(|(&r, _)| r == row)
            .map(|(_, v)| *v)
            .sum()
    }

    pub fn column_dense(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.param_count()];
        let (rows, vals) = self.column(i);
        for (&r, &v) in rows.iter().zip(vals) {
            out[r] += v;
        }
        out
    }

    /// Row-major dense copy, `param_count` rows by `factor_count` columns.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.factor_count()]; self.param_count()];
        for c in 0..self.factor_count() {
            let (rows, vals) = self.column(c);
            for (&r, &v) in rows.iter().zip(vals) {
                out[r][c] += v;
            }
        }
        out
    }

    /// `out += S · coef`.
    pub fn accumulate(&self, coef: &[f64], out: &mut [f64]) {
        debug_assert_eq!(coef.len(), self.factor_count());
        debug_assert_eq!(out.len(), self.param_count());
        for (c, &w) in coef.iter().enumerate() {
            let r = self.range(c);
            for (&row, &v) in self.pattern.rows[r.clone()].iter().zip(&self.values[r]) {
                out[row] += v * w;
            }
        }
    }

    /// `S · coef`.
    pub fn mul_vec(&self, coef: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.param_count()];
        self.accumulate(coef, &mut out);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Serialisable snapshot of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub mode: SharingMode,
    pub factorisation: PolicyFactorisation,
    pub params: Vec<f64>,
    pub std: Vec<f64>,
}

/// Product of independent Gaussian factors, `π(a) = ∏ π_i(σ_i(a))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredGaussianPolicy {
    factorisation: PolicyFactorisation,
    mode: SharingMode,
    params: Vec<f64>,
    std: Vec<f64>,
    pattern: Arc<ScorePattern>,
}

fn check_std(std: &[f64]) -> Result<()> {
    if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidPolicy(
            "standard deviations must be positive and finite".into(),
        ));
    }
    Ok(())
}

fn check_mean(mean: &[f64]) -> Result<()> {
    if mean.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidPolicy("means must be finite".into()));
    }
    Ok(())
}

impl FactoredGaussianPolicy {
    /// Independent factors; `mean` and `std` are indexed by action coordinate.
    pub fn independent(
        factorisation: PolicyFactorisation,
        mean: Vec<f64>,
        std: Vec<f64>,
    ) -> Result<Self> {
        let n = factorisation.action_count();
        for v in [&mean, &std] {
            if v.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: v.len(),
                });
            }
        }
        check_mean(&mean)?;
        check_std(&std)?;
        let pattern = Self::build_pattern(&factorisation, SharingMode::Independent, n);
        Ok(Self {
            factorisation,
            mode: SharingMode::Independent,
            params: mean,
            std,
            pattern,
        })
    }

    /// Isotropic independent policy with a common standard deviation.
    pub fn isotropic(factorisation: PolicyFactorisation, mean: Vec<f64>, std: f64) -> Result<Self> {
        let n = factorisation.action_count();
        Self::independent(factorisation, mean, vec![std; n])
    }

    /// Assembles an independent policy from explicit factors.
    pub fn from_factors(action_count: usize, factors: Vec<GaussianFactor>) -> Result<Self> {
        let mut mean = vec![0.0; action_count];
        let mut std = vec![1.0; action_count];
        let mut groups = Vec::with_capacity(factors.len());
        for f in &factors {
            if f.partition.total_dims() != action_count {
                return Err(Error::LengthMismatch {
                    expected: action_count,
                    actual: f.partition.total_dims(),
                });
            }
            for v in [&f.mean, &f.std] {
                if v.len() != f.partition.len() {
                    return Err(Error::LengthMismatch {
                        expected: f.partition.len(),
                        actual: v.len(),
                    });
                }
            }
            for (l, &d) in f.partition.indices().iter().enumerate() {
                mean[d] = f.mean[l];
                std[d] = f.std[l];
            }
            groups.push(f.partition.indices().to_vec());
        }
        Self::independent(PolicyFactorisation::new(action_count, groups)?, mean, std)
    }

    /// Shared parameters: every factor has width `mean.len()` and uses the
    /// same mean and standard deviation vectors.
    pub fn shared(
        factorisation: PolicyFactorisation,
        mean: Vec<f64>,
        std: Vec<f64>,
    ) -> Result<Self> {
        let w = mean.len();
        if std.len() != w {
            return Err(Error::LengthMismatch {
                expected: w,
                actual: std.len(),
            });
        }
        if let Some(f) = factorisation.factors().iter().find(|f| f.len() != w) {
            return Err(Error::InvalidPolicy(format!(
                "shared mode needs factors of width {w}, found {}",
                f.len()
            )));
        }
        check_mean(&mean)?;
        check_std(&std)?;
        let pattern = Self::build_pattern(&factorisation, SharingMode::Shared, w);
        Ok(Self {
            factorisation,
            mode: SharingMode::Shared,
            params: mean,
            std,
            pattern,
        })
    }

    pub fn from_state(state: PolicyState) -> Result<Self> {
        match state.mode {
            SharingMode::Independent => {
                Self::independent(state.factorisation, state.params, state.std)
            }
            SharingMode::Shared => Self::shared(state.factorisation, state.params, state.std),
        }
    }

    pub fn state(&self) -> PolicyState {
        PolicyState {
            mode: self.mode,
            factorisation: self.factorisation.clone(),
            params: self.params.clone(),
            std: self.std.clone(),
        }
    }

    fn build_pattern(
        factorisation: &PolicyFactorisation,
        mode: SharingMode,
        param_count: usize,
    ) -> Arc<ScorePattern> {
        let mut col_ptr = vec![0];
        let mut rows = Vec::with_capacity(factorisation.action_count());
        for f in factorisation.factors() {
            match mode {
                SharingMode::Independent => rows.extend_from_slice(f.indices()),
                SharingMode::Shared => rows.extend(0..f.len()),
            }
            col_ptr.push(rows.len());
        }
        Arc::new(ScorePattern {
            param_count,
            col_ptr,
            rows,
        })
    }

    pub fn factorisation(&self) -> &PolicyFactorisation {
        &self.factorisation
    }

    pub fn mode(&self) -> SharingMode {
        self.mode
    }

    pub fn action_count(&self) -> usize {
        self.factorisation.action_count()
    }

    pub fn factor_count(&self) -> usize {
        self.factorisation.len()
    }

    /// `θ`.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Parameter index feeding local coordinate `l` of factor `i`.
    fn param_of(&self, i: usize, l: usize) -> usize {
        self.pattern.rows[self.pattern.col_ptr[i] + l]
    }

    /// View of factor `i` with its partition, mean and standard deviation.
    pub fn factor(&self, i: usize) -> GaussianFactor {
        let partition = self.factorisation.factor(i).clone();
        let k = partition.len();
        GaussianFactor {
            mean: (0..k).map(|l| self.params[self.param_of(i, l)]).collect(),
            std: (0..k).map(|l| self.std[self.param_of(i, l)]).collect(),
            partition,
        }
    }

    /// Policy mean laid out in action coordinates.
    pub fn mean_action(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.action_count()];
        self.mean_action_into(&mut out);
        out
    }

    pub fn mean_action_into(&self, out: &mut [f64]) {
        for (i, f) in self.factorisation.factors().iter().enumerate() {
            for (l, &d) in f.indices().iter().enumerate() {
                out[d] = self.params[self.param_of(i, l)];
            }
        }
    }

    fn check_action(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.action_count() {
            return Err(Error::LengthMismatch {
                expected: self.action_count(),
                actual: a.len(),
            });
        }
        Ok(())
    }

    /// Draws each factor independently and scatters it into action coordinates.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut a = vec![0.0; self.action_count()];
        self.sample_into(rng, &mut a);
        a
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, a: &mut [f64]) {
        for (i, f) in self.factorisation.factors().iter().enumerate() {
            for (l, &d) in f.indices().iter().enumerate() {
                let p = self.param_of(i, l);
                let eps: f64 = rng.sample(StandardNormal);
                a[d] = self.params[p] + self.std[p] * eps;
            }
        }
    }

    /// `ln π_i(σ_i(a))`.
    pub fn factor_log_density(&self, i: usize, a: &[f64]) -> Result<f64> {
        self.check_action(a)?;
        let f = self.factorisation.factor(i);
        Ok(f.indices()
            .iter()
            .enumerate()
            .map(|(l, &d)| {
                let p = self.param_of(i, l);
                let s = self.std[p];
                let u = (a[d] - self.params[p]) / s;
                -0.5 * (2.0 * PI).ln() - s.ln() - 0.5 * u * u
            })
            .sum())
    }

    pub fn log_density(&self, a: &[f64]) -> Result<f64> {
        self.check_action(a)?;
        (0..self.factor_count())
            .map(|i| self.factor_log_density(i, a))
            .sum()
    }

    pub fn score_matrix(&self, a: &[f64]) -> Result<ScoreMatrix> {
        let mut s = ScoreMatrix {
            pattern: Arc::clone(&self.pattern),
            values: Vec::new(),
        };
        self.score_matrix_into(a, &mut s)?;
        Ok(s)
    }

    /// Refills `out` for action `a`, reusing its allocation.
    pub fn score_matrix_into(&self, a: &[f64], out: &mut ScoreMatrix) -> Result<()> {
        self.check_action(a)?;
        if !Arc::ptr_eq(&out.pattern, &self.pattern) {
            out.pattern = Arc::clone(&self.pattern);
        }
        out.values.clear();
        for (i, f) in self.factorisation.factors().iter().enumerate() {
            for (l, &d) in f.indices().iter().enumerate() {
                let p = self.param_of(i, l);
                let s = self.std[p];
                out.values.push((a[d] - self.params[p]) / (s * s));
            }
        }
        Ok(())
    }

    /// An empty score buffer bound to this policy's pattern.
    pub fn score_buffer(&self) -> ScoreMatrix {
        ScoreMatrix {
            pattern: Arc::clone(&self.pattern),
            values: vec![0.0; self.pattern.rows.len()],
        }
    }

    /// Gradient ascent step `θ ← θ + lr·g`. Non-finite input or output
    /// leaves the policy untouched and reports [`Error::Divergence`].
    pub fn apply_gradient(&mut self, g: &[f64], lr: f64) -> Result<()> {
        if g.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                expected: self.params.len(),
                actual: g.len(),
            });
        }
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::InvalidPolicy(format!("learning rate {lr}")));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence);
        }
        if self
            .params
            .iter()
            .zip(g)
            .any(|(t, d)| !(t + lr * d).is_finite())
        {
            return Err(Error::Divergence);
        }
        for (t, d) in self.params.iter_mut().zip(g) {
            *t += lr * d;
        }
        Ok(())
    }
}
