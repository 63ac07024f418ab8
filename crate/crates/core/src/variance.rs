//! Monte Carlo estimates of how much variance the factor baselines remove.
//!
//! For factor `i` with score block `z_i`, vanilla coefficient `t = ⟨λ,ψ⟩`
//! and factor baseline `b_i`, the change `ΔV_i = tr V[z_i t] − tr V[z_i (t − b_i)]`
//! splits into a quadratic term `E[⟨z_i,z_i⟩ b_i²]` and a linear term
//! `2 E[⟨z_i,z_i⟩ (t − b_i) b_i]`. Both are estimated jointly, and compared
//! against the direct difference of sample trace-covariances computed from
//! the very same draws.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bandit::EnvSpec;
use crate::error::{Error, Result};
use crate::estimator::{Estimator, TargetBundle};
use crate::graph::{factorise, FactorisationSpec, InfluenceMatrix};
use crate::policy::{FactoredGaussianPolicy, ScoreMatrix};
use crate::stats::{chunked, Moments, CHUNK_SIZE};

pub const MIN_DECOMPOSITION_SAMPLES: usize = 1000;

/// Estimate and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    fn from_moments(m: &Moments) -> Self {
        Self {
            value: m.mean(),
            se: m.standard_error(),
        }
    }
}

/// Variance terms for one factor, or their mean across factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FactorVariance {
    pub quadratic: Estimate,
    pub linear: Estimate,
    pub delta_formula: Estimate,
    pub delta_direct: Estimate,
}

impl FactorVariance {
    /// `√(se_formula² + se_direct²)`.
    pub fn combined_se(&self) -> f64 {
        self.delta_formula.se.hypot(self.delta_direct.se)
    }

    /// `|formula − direct|` in units of the combined standard error.
    pub fn discrepancy(&self) -> f64 {
        let gap = (self.delta_formula.value - self.delta_direct.value).abs();
        let se = self.combined_se();
        if se > 0.0 {
            gap / se
        } else if gap == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    pub factors: Vec<FactorVariance>,
    /// Arithmetic mean of the per-factor values; standard errors come from
    /// the per-sample factor means.
    pub aggregate: FactorVariance,
    pub sample_count: usize,
    pub seed: u64,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    n: usize,
    factor: &'a str,
    quadratic: f64,
    linear: f64,
    delta_formula: f64,
    delta_direct: f64,
    se_quadratic: f64,
    se_linear: f64,
    se_formula: f64,
    se_direct: f64,
    samples: usize,
    seed: u64,
}

impl VarianceReport {
    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    /// Writes one row per factor and a final `mean` row.
    pub fn write_csv<W: Write>(&self, n: usize, wtr: &mut csv::Writer<W>) -> Result<()> {
        let labels: Vec<String> = (0..self.factors.len()).map(|i| i.to_string()).collect();
        let rows = self
            .factors
            .iter()
            .zip(labels.iter().map(String::as_str))
            .chain(std::iter::once((&self.aggregate, "mean")));
        for (f, label) in rows {
            wtr.serialize(CsvRow {
                n,
                factor: label,
                quadratic: f.quadratic.value,
                linear: f.linear.value,
                delta_formula: f.delta_formula.value,
                delta_direct: f.delta_direct.value,
                se_quadratic: f.quadratic.se,
                se_linear: f.linear.se,
                se_formula: f.delta_formula.se,
                se_direct: f.delta_direct.se,
                samples: self.sample_count,
                seed: self.seed,
            })?;
        }
        Ok(())
    }
}

struct Draw {
    action: Vec<f64>,
    scratch: Vec<f64>,
    psi: Vec<f64>,
    weighted: Vec<f64>,
    linked: Vec<f64>,
    score: ScoreMatrix,
    total: f64,
}

impl Draw {
    fn new(policy: &FactoredGaussianPolicy, bundle: &TargetBundle) -> Self {
        Self {
            action: vec![0.0; policy.action_count()],
            scratch: Vec::new(),
            psi: vec![0.0; bundle.target_count()],
            weighted: Vec::new(),
            linked: Vec::new(),
            score: policy.score_buffer(),
            total: 0.0,
        }
    }

    fn next<R: rand::Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        policy: &FactoredGaussianPolicy,
        bundle: &TargetBundle,
        k: &InfluenceMatrix,
    ) -> Result<()> {
        policy.sample_into(rng, &mut self.action);
        bundle.evaluate_into(&self.action, &mut self.scratch, &mut self.psi)?;
        self.total =
            crate::estimator::weighted_targets(bundle.multipliers(), &self.psi, &mut self.weighted);
        crate::estimator::linked_targets(k, &self.weighted, &mut self.linked);
        policy.score_matrix_into(&self.action, &mut self.score)
    }
}

fn check_setup(
    policy: &FactoredGaussianPolicy,
    bundle: &TargetBundle,
    k: &InfluenceMatrix,
) -> Result<()> {
    if bundle.action_count() != policy.action_count() {
        return Err(Error::LengthMismatch {
            expected: policy.action_count(),
            actual: bundle.action_count(),
        });
    }
    if k.rows() != policy.factor_count() || k.cols() != bundle.target_count() {
        return Err(Error::ShapeMismatch(format!(
            "factored influence matrix is {}x{}, expected {}x{}",
            k.rows(),
            k.cols(),
            policy.factor_count(),
            bundle.target_count()
        )));
    }
    Ok(())
}

/// Offsets of each factor's score block inside a flat buffer.
fn block_offsets(score: &ScoreMatrix) -> Vec<usize> {
    let mut off = vec![0];
    for i in 0..score.factor_count() {
        off.push(off[i] + score.column(i).0.len());
    }
    off
}

struct FirstPass {
    sum_vanilla: Vec<f64>,
    sum_factored: Vec<f64>,
    terms: Vec<[Moments; 3]>,
    mean_terms: [Moments; 3],
}

/// Estimates the quadratic and linear terms for every factor together with
/// the direct trace-covariance difference, all from one seeded stream.
pub fn decompose_variance(
    policy: &FactoredGaussianPolicy,
    bundle: &TargetBundle,
    k: &InfluenceMatrix,
    samples: usize,
    seed: u64,
) -> Result<VarianceReport> {
    if samples < MIN_DECOMPOSITION_SAMPLES {
        return Err(Error::InsufficientSamples {
            required: MIN_DECOMPOSITION_SAMPLES,
            actual: samples,
        });
    }
    check_setup(policy, bundle, k)?;
    let factors = policy.factor_count();
    let offsets = block_offsets(&policy.score_buffer());
    let width = offsets[factors];

    let first = chunked(samples, seed, |rng, len| -> Result<FirstPass> {
        let mut d = Draw::new(policy, bundle);
        let mut acc = FirstPass {
            sum_vanilla: vec![0.0; width],
            sum_factored: vec![0.0; width],
            terms: vec![Default::default(); factors],
            mean_terms: Default::default(),
        };
        for _ in 0..len {
            d.next(rng, policy, bundle, k)?;
            let mut means = [0.0; 3];
            for i in 0..factors {
                let (_, z) = d.score.column(i);
                let base = offsets[i];
                let linked = d.linked[i];
                let mut zz = 0.0;
                for (e, zv) in z.iter().enumerate() {
                    acc.sum_vanilla[base + e] += zv * d.total;
                    acc.sum_factored[base + e] += zv * linked;
                    zz += zv * zv;
                }
                let b = d.total - linked;
                let quad = zz * b * b;
                let lin = 2.0 * zz * (d.total - b) * b;
                let vals = [quad, lin, quad + lin];
                for (m, v) in acc.terms[i].iter_mut().zip(vals) {
                    m.push(v);
                }
                for (s, v) in means.iter_mut().zip(vals) {
                    *s += v;
                }
            }
            for (m, v) in acc.mean_terms.iter_mut().zip(means) {
                m.push(v / factors as f64);
            }
        }
        Ok(acc)
    });

    let mut mean_vanilla = vec![0.0; width];
    let mut mean_factored = vec![0.0; width];
    let mut terms: Vec<[Moments; 3]> = vec![Default::default(); factors];
    let mut mean_terms: [Moments; 3] = Default::default();
    for chunk in first {
        let chunk = chunk?;
        for (a, b) in mean_vanilla.iter_mut().zip(&chunk.sum_vanilla) {
            *a += b;
        }
        for (a, b) in mean_factored.iter_mut().zip(&chunk.sum_factored) {
            *a += b;
        }
        for (t, c) in terms.iter_mut().zip(&chunk.terms) {
            for (m, cm) in t.iter_mut().zip(c) {
                m.merge(cm);
            }
        }
        for (m, cm) in mean_terms.iter_mut().zip(&chunk.mean_terms) {
            m.merge(cm);
        }
    }
    let n = samples as f64;
    for v in mean_vanilla.iter_mut().chain(mean_factored.iter_mut()) {
        *v /= n;
    }

    // Second pass regenerates identical draws and centres them.
    let second = chunked(
        samples,
        seed,
        |rng, len| -> Result<(Vec<Moments>, Moments)> {
            let mut d = Draw::new(policy, bundle);
            let mut per = vec![Moments::default(); factors];
            let mut mean = Moments::default();
            for _ in 0..len {
                d.next(rng, policy, bundle, k)?;
                let mut s = 0.0;
                for (i, m) in per.iter_mut().enumerate() {
                    let (_, z) = d.score.column(i);
                    let base = offsets[i];
                    let mut diff = 0.0;
                    for (e, zv) in z.iter().enumerate() {
                        let x = zv * d.total - mean_vanilla[base + e];
                        let y = zv * d.linked[i] - mean_factored[base + e];
                        diff += x * x - y * y;
                    }
                    m.push(diff);
                    s += diff;
                }
                mean.push(s / factors as f64);
            }
            Ok((per, mean))
        },
    );
    let mut direct = vec![Moments::default(); factors];
    let mut direct_mean = Moments::default();
    for chunk in second {
        let (per, mean) = chunk?;
        for (m, c) in direct.iter_mut().zip(&per) {
            m.merge(c);
        }
        direct_mean.merge(&mean);
    }

    // Unbiased covariance divides the centred sum by N − 1.
    let bessel = n / (n - 1.0);
    let rows: Vec<FactorVariance> = terms
        .iter()
        .zip(&direct)
        .map(|(t, d)| FactorVariance {
            quadratic: Estimate::from_moments(&t[0]),
            linear: Estimate::from_moments(&t[1]),
            delta_formula: Estimate::from_moments(&t[2]),
            delta_direct: Estimate {
                value: d.mean() * bessel,
                se: d.standard_error() * bessel,
            },
        })
        .collect();
    let avg = |f: fn(&FactorVariance) -> f64| rows.iter().map(f).sum::<f64>() / factors as f64;
    let aggregate = FactorVariance {
        quadratic: Estimate {
            value: avg(|r| r.quadratic.value),
            se: mean_terms[0].standard_error(),
        },
        linear: Estimate {
            value: avg(|r| r.linear.value),
            se: mean_terms[1].standard_error(),
        },
        delta_formula: Estimate {
            value: avg(|r| r.delta_formula.value),
            se: mean_terms[2].standard_error(),
        },
        delta_direct: Estimate {
            value: avg(|r| r.delta_direct.value),
            se: direct_mean.standard_error() * bessel,
        },
    };
    Ok(VarianceReport {
        factors: rows,
        aggregate,
        sample_count: samples,
        seed,
    })
}

/// Unbiased trace of the sample covariance of a full gradient estimator.
pub fn direct_variance(
    policy: &FactoredGaussianPolicy,
    bundle: &TargetBundle,
    k: &InfluenceMatrix,
    estimator: Estimator,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    if samples < 2 {
        return Err(Error::InsufficientSamples {
            required: 2,
            actual: samples,
        });
    }
    check_setup(policy, bundle, k)?;
    let dim = policy.param_count();
    let gradient = |d: &mut Draw, coef: &mut Vec<f64>, g: &mut Vec<f64>| {
        estimator.column_targets(k, &d.weighted, d.total, coef);
        g.iter_mut().for_each(|v| *v = 0.0);
        d.score.accumulate(coef, g);
    };
    let sums = chunked(samples, seed, |rng, len| -> Result<Vec<f64>> {
        let mut d = Draw::new(policy, bundle);
        let (mut coef, mut g, mut sum) = (Vec::new(), vec![0.0; dim], vec![0.0; dim]);
        for _ in 0..len {
            d.next(rng, policy, bundle, k)?;
            gradient(&mut d, &mut coef, &mut g);
            for (s, v) in sum.iter_mut().zip(&g) {
                *s += v;
            }
        }
        Ok(sum)
    });
    let mut mean = vec![0.0; dim];
    for s in sums {
        for (m, v) in mean.iter_mut().zip(s?) {
            *m += v;
        }
    }
    let n = samples as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let spread = chunked(samples, seed, |rng, len| -> Result<Moments> {
        let mut d = Draw::new(policy, bundle);
        let (mut coef, mut g) = (Vec::new(), vec![0.0; dim]);
        let mut m = Moments::default();
        for _ in 0..len {
            d.next(rng, policy, bundle, k)?;
            gradient(&mut d, &mut coef, &mut g);
            m.push(g.iter().zip(&mean).map(|(x, mu)| (x - mu).powi(2)).sum());
        }
        Ok(m)
    });
    let mut total = Moments::default();
    for m in spread {
        total.merge(&m?);
    }
    let bessel = n / (n - 1.0);
    Ok(Estimate {
        value: total.mean() * bessel,
        se: total.standard_error() * bessel,
    })
}

fn default_ns() -> Vec<usize> {
    vec![1, 10, 100, 1000]
}

/// A variance sweep over action dimensionalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceConfig {
    /// Template environment; its `n` is replaced by each entry of `ns`.
    pub env: EnvSpec,
    #[serde(default = "default_ns")]
    pub ns: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub factorisation: FactorisationSpec,
    /// Shift targets by their lower bounds plus this margin first.
    #[serde(default)]
    pub translate: Option<f64>,
}

/// Unit Gaussian at the origin on each environment of the sweep.
pub fn variance_sweep(cfg: &VarianceConfig) -> Result<Vec<(usize, VarianceReport)>> {
    if cfg.ns.is_empty() {
        return Err(Error::Config("ns must not be empty".into()));
    }
    cfg.ns
        .iter()
        .map(|&n| {
            let env = cfg.env.with_action_count(n).build(cfg.seed)?;
            let (net, mut bundle) = env.targets()?;
            if let Some(eps) = cfg.translate {
                bundle = bundle.translate(eps)?;
            }
            let sigma = cfg.factorisation.resolve(&net)?;
            let k = factorise(&net, &sigma)?.influence_matrix().clone();
            let policy = FactoredGaussianPolicy::isotropic(sigma, vec![0.0; n], 1.0)?;
            Ok((
                n,
                decompose_variance(&policy, &bundle, &k, cfg.samples, cfg.seed)?,
            ))
        })
        .collect()
}

/// Writes every report of a sweep under one header.
pub fn write_sweep_csv<W: Write>(reports: &[(usize, VarianceReport)], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for (n, r) in reports {
        r.write_csv(*n, &mut wtr)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Number of chunks a run of `samples` draws is split into.
pub fn chunk_count(samples: usize) -> usize {
    samples.div_ceil(CHUNK_SIZE)
}
