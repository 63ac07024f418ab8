//! Seeded training loops on the search bandit.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::{EnvSpec, ObjectiveScale};
use crate::error::{Error, Result};
use crate::estimator::{weighted_targets, AuxKind, AuxiliaryBaseline, Estimator};
use crate::graph::{factorise, FactorisationSpec};
use crate::policy::{FactoredGaussianPolicy, PolicyState};
use crate::stats::{chunk_rng, mean_std, Moments};

/// Runs are flagged as diverged once the gap exceeds this value.
pub const DIVERGENCE_GAP: f64 = 1e6;

/// RNG stream used for the per-iteration action draws.
pub const ACTION_STREAM: u64 = 0;

fn default_pretrain() -> usize {
    1000
}
fn default_stride() -> usize {
    1
}
fn default_baseline_lr() -> f64 {
    0.1
}
fn default_std() -> f64 {
    1.0
}
fn default_threshold() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub estimator: Estimator,
    #[serde(default)]
    pub baseline: AuxKind,
    #[serde(default)]
    pub factorisation: FactorisationSpec,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_pretrain")]
    pub pretrain_episodes: usize,
    #[serde(default = "default_stride")]
    pub log_stride: usize,
    #[serde(default = "default_baseline_lr")]
    pub baseline_learning_rate: f64,
    #[serde(default = "default_std")]
    pub policy_std: f64,
    /// Gap level whose first passage is recorded.
    #[serde(default = "default_threshold")]
    pub gap_threshold: f64,
    /// Log `(μ_{n−1} − c_{n−1})²` and its variance over the final half.
    #[serde(default)]
    pub track_last_dim: bool,
}

impl ExperimentConfig {
    /// Search bandit at `n` dims without penalty, mean-scaled objective,
    /// minimum factorisation and ten seeds.
    pub fn search(
        n: usize,
        estimator: Estimator,
        baseline: AuxKind,
        learning_rate: f64,
        iterations: usize,
    ) -> Self {
        Self {
            env: EnvSpec::Search {
                n,
                penalty: 0.0,
                penalty_k: 0,
                scale: ObjectiveScale::Mean,
                action_box: None,
            },
            estimator,
            baseline,
            factorisation: FactorisationSpec::default(),
            learning_rate,
            iterations,
            seeds: (0..10).collect(),
            pretrain_episodes: default_pretrain(),
            log_stride: default_stride(),
            baseline_learning_rate: default_baseline_lr(),
            policy_std: default_std(),
            gap_threshold: default_threshold(),
            track_last_dim: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate {} must be >= 0",
                self.learning_rate
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.log_stride == 0 {
            return Err(Error::Config("log_stride must be >= 1".into()));
        }
        if !(self.policy_std > 0.0 && self.policy_std.is_finite()) {
            return Err(Error::Config(format!(
                "policy_std {} must be positive",
                self.policy_std
            )));
        }
        if matches!(self.env, EnvSpec::Relu { .. }) {
            return Err(Error::Config("training requires the search bandit".into()));
        }
        if self.env.action_count() == 0 {
            return Err(Error::Config("n must be >= 1".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!("{}_{}", self.estimator.label(), aux_slug(self.baseline))
    }
}

fn aux_slug(kind: AuxKind) -> &'static str {
    match kind {
        AuxKind::None => "none",
        AuxKind::ScalarTd => "state",
        AuxKind::ActionDependent => "action",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    pub iteration: usize,
    /// `−⟨λ, ψ⟩` at the sampled action.
    pub cost: f64,
    pub gap: f64,
    pub err_dim_n: Option<f64>,
    pub diverged: bool,
    /// Cumulative wall-clock rate; not reproducible.
    pub its_per_sec: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub seed: u64,
    pub records: Vec<LogRecord>,
    pub initial_gap: f64,
    pub final_gap: f64,
    pub best_gap: f64,
    /// First iteration whose gap was at or below the threshold.
    pub first_hit: Option<usize>,
    pub diverged_at: Option<usize>,
    pub iterations_run: usize,
    /// Sample variance of `(μ_{n−1} − c_{n−1})²` over the final half.
    pub tail_err_variance: Option<f64>,
    pub its_per_sec: f64,
    pub final_state: PolicyState,
}

impl RunLog {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    /// Reached the threshold and never diverged.
    pub fn converged(&self) -> bool {
        self.first_hit.is_some() && !self.diverged()
    }
}

fn policy_gap(gap: f64) -> bool {
    !gap.is_finite() || gap > DIVERGENCE_GAP
}

/// One seed of `cfg`, fully sequential.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunLog> {
    cfg.validate()?;
    let env = cfg.env.build(seed)?;
    let search = env
        .as_search()
        .ok_or_else(|| Error::Config("training requires the search bandit".into()))?;
    let (net, bundle) = env.targets()?;
    let sigma = cfg.factorisation.resolve(&net)?;
    let k = factorise(&net, &sigma)?.influence_matrix().clone();
    let n = env.action_count();
    let mut policy =
        FactoredGaussianPolicy::isotropic(sigma.clone(), vec![0.0; n], cfg.policy_std)?;
    let mut aux = AuxiliaryBaseline::from_kind(cfg.baseline, n, cfg.baseline_learning_rate)?;
    let meter = search.gap_meter();
    let centre_last = search.centroid()[n - 1];
    let lambda = bundle.multipliers();
    let mut rng = chunk_rng(seed, ACTION_STREAM);

    let mut a = vec![0.0; n];
    let mut mean = vec![0.0; n];
    let mut psi = vec![0.0; bundle.target_count()];
    let (mut scratch, mut weighted, mut coef, mut offsets, mut cf) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut score = policy.score_buffer();
    let mut grad = vec![0.0; policy.param_count()];

    let aux_target = |coef: &[f64], total: f64| match cfg.estimator {
        Estimator::Vanilla => total,
        Estimator::Factored => coef.iter().sum::<f64>() / coef.len() as f64,
    };

    if aux.kind() != AuxKind::None {
        for _ in 0..cfg.pretrain_episodes {
            policy.sample_into(&mut rng, &mut a);
            bundle.evaluate_into(&a, &mut scratch, &mut psi)?;
            let total = weighted_targets(lambda, &psi, &mut weighted);
            cfg.estimator
                .column_targets(&k, &weighted, total, &mut coef);
            aux.update(&a, aux_target(&coef, total));
        }
    }

    policy.mean_action_into(&mut mean);
    let initial_gap = meter.gap(&mean);
    let mut log = RunLog {
        seed,
        records: Vec::with_capacity(cfg.iterations / cfg.log_stride + 1),
        initial_gap,
        final_gap: initial_gap,
        best_gap: initial_gap,
        first_hit: None,
        diverged_at: None,
        iterations_run: 0,
        tail_err_variance: None,
        its_per_sec: 0.0,
        final_state: policy.state(),
    };
    let tail_start = cfg.iterations / 2 + 1;
    let mut tail = Moments::default();
    let start = Instant::now();

    for it in 1..=cfg.iterations {
        policy.sample_into(&mut rng, &mut a);
        bundle.evaluate_into(&a, &mut scratch, &mut psi)?;
        let total = weighted_targets(lambda, &psi, &mut weighted);
        cfg.estimator
            .column_targets(&k, &weighted, total, &mut coef);
        let target = aux_target(&coef, total);
        let offset = aux.offsets(&a, &mean, &sigma, &mut offsets, &mut cf);
        match offset {
            crate::estimator::AuxOffset::None => {}
            crate::estimator::AuxOffset::Uniform(b) => coef.iter_mut().for_each(|c| *c -= b),
            crate::estimator::AuxOffset::PerFactor(b) => {
                coef.iter_mut().zip(b).for_each(|(c, b)| *c -= b)
            }
        }
        policy.score_matrix_into(&a, &mut score)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        score.accumulate(&coef, &mut grad);
        aux.update(&a, target);

        let stepped = policy.apply_gradient(&grad, cfg.learning_rate);
        policy.mean_action_into(&mut mean);
        let gap = meter.gap(&mean);
        let diverged = match stepped {
            Ok(()) => policy_gap(gap),
            Err(Error::Divergence) => true,
            Err(e) => return Err(e),
        };
        log.iterations_run = it;
        log.final_gap = gap;
        if gap < log.best_gap {
            log.best_gap = gap;
        }
        if log.first_hit.is_none() && gap <= cfg.gap_threshold && !diverged {
            log.first_hit = Some(it);
        }
        let err = cfg
            .track_last_dim
            .then(|| (mean[n - 1] - centre_last).powi(2));
        if let Some(e) = err {
            if it >= tail_start {
                tail.push(e);
            }
        }
        if diverged {
            log.diverged_at = Some(it);
        }
        if it % cfg.log_stride == 0 || it == cfg.iterations || diverged {
            let secs = start.elapsed().as_secs_f64();
            log.records.push(LogRecord {
                iteration: it,
                cost: -total,
                gap,
                err_dim_n: err,
                diverged,
                its_per_sec: if secs > 0.0 { it as f64 / secs } else { 0.0 },
            });
        }
        if diverged {
            break;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    log.its_per_sec = if secs > 0.0 {
        log.iterations_run as f64 / secs
    } else {
        0.0
    };
    if cfg.track_last_dim && tail.count() >= 2 {
        log.tail_err_variance = Some(tail.variance());
    }
    log.final_state = policy.state();
    Ok(log)
}

/// Every seed of `cfg`, in parallel; logs come back in seed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunLog>> {
    cfg.validate()?;
    cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect()
}

#[derive(Serialize)]
struct CsvRecord {
    seed: u64,
    iteration: usize,
    cost: f64,
    gap: f64,
    err_dim_n: Option<f64>,
    diverged: bool,
    its_per_sec: f64,
}

/// Columns: `seed, iteration, cost, gap, err_dim_n, diverged, its_per_sec`.
pub fn write_run_csv<W: Write>(logs: &[RunLog], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for log in logs {
        for r in &log.records {
            wtr.serialize(CsvRecord {
                seed: log.seed,
                iteration: r.iteration,
                cost: r.cost,
                gap: r.gap,
                err_dim_n: r.err_dim_n,
                diverged: r.diverged,
                its_per_sec: r.its_per_sec,
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub iteration: usize,
    pub cost_mean: f64,
    pub cost_se: f64,
    pub gap_mean: f64,
    pub gap_se: f64,
    pub seeds: usize,
}

/// Mean and standard error across seeds for every logged iteration.
/// Runs that stopped early simply drop out of later rows.
pub fn aggregate(logs: &[RunLog]) -> Vec<AggregateRow> {
    let mut by_iter: std::collections::BTreeMap<usize, (Moments, Moments)> = Default::default();
    for log in logs {
        for r in &log.records {
            let e = by_iter.entry(r.iteration).or_default();
            e.0.push(r.cost);
            e.1.push(r.gap);
        }
    }
    let se = |m: &Moments| {
        if m.count() >= 2 {
            m.standard_error()
        } else {
            0.0
        }
    };
    by_iter
        .into_iter()
        .map(|(iteration, (c, g))| AggregateRow {
            iteration,
            cost_mean: c.mean(),
            cost_se: se(&c),
            gap_mean: g.mean(),
            gap_se: se(&g),
            seeds: c.count() as usize,
        })
        .collect()
}

/// Columns: `iteration, cost_mean, cost_se, gap_mean, gap_se, seeds`.
pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AliasingSetup {
    pub n: usize,
    pub penalty: f64,
    pub vanilla_learning_rate: f64,
    pub factored_learning_rate: f64,
    pub iterations: usize,
}

impl Default for AliasingSetup {
    fn default() -> Self {
        Self {
            n: 100,
            penalty: 0.01,
            vanilla_learning_rate: 0.001,
            factored_learning_rate: 0.01,
            iterations: 200_000,
        }
    }
}

impl AliasingSetup {
    /// Search bandit with the penalty on all but the last dimension.
    pub fn config(&self, estimator: Estimator, seeds: Vec<u64>) -> ExperimentConfig {
        let lr = match estimator {
            Estimator::Vanilla => self.vanilla_learning_rate,
            Estimator::Factored => self.factored_learning_rate,
        };
        let mut cfg =
            ExperimentConfig::search(self.n, estimator, AuxKind::None, lr, self.iterations);
        cfg.env = EnvSpec::Search {
            n: self.n,
            penalty: self.penalty,
            penalty_k: self.n - 1,
            scale: ObjectiveScale::Mean,
            action_box: None,
        };
        cfg.seeds = seeds;
        cfg.track_last_dim = true;
        cfg.log_stride = (self.iterations / 1000).max(1);
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AliasingResult {
    pub vanilla: Vec<RunLog>,
    pub factored: Vec<RunLog>,
}

impl AliasingResult {
    /// FPG-over-VPG ratio of final-half error variances, per seed.
    pub fn variance_ratios(&self) -> Vec<f64> {
        self.vanilla
            .iter()
            .zip(&self.factored)
            .map(|(v, f)| match (v.tail_err_variance, f.tail_err_variance) {
                (Some(v), Some(f)) => f / v,
                _ => f64::NAN,
            })
            .collect()
    }
}

/// Trains both estimators on the same seeds with the last dimension free
/// of the coupling penalty.
pub fn aliasing_experiment(setup: &AliasingSetup, seeds: &[u64]) -> Result<AliasingResult> {
    if setup.n < 2 {
        return Err(Error::Config("aliasing needs n >= 2".into()));
    }
    Ok(AliasingResult {
        vanilla: run_experiment(&setup.config(Estimator::Vanilla, seeds.to_vec()))?,
        factored: run_experiment(&setup.config(Estimator::Factored, seeds.to_vec()))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputRow {
    pub method: String,
    pub its_per_sec_mean: f64,
    pub its_per_sec_std: f64,
    pub seeds: usize,
}

/// The five estimator / baseline pairings compared for wall-clock cost.
pub fn throughput_configs(
    n: usize,
    iterations: usize,
    seeds: Vec<u64>,
) -> Vec<(String, ExperimentConfig)> {
    [
        (Estimator::Vanilla, AuxKind::None),
        (Estimator::Vanilla, AuxKind::ScalarTd),
        (Estimator::Vanilla, AuxKind::ActionDependent),
        (Estimator::Factored, AuxKind::None),
        (Estimator::Factored, AuxKind::ScalarTd),
    ]
    .into_iter()
    .map(|(e, b)| {
        let mut cfg = ExperimentConfig::search(n, e, b, 0.001, iterations);
        cfg.seeds = seeds.clone();
        cfg.pretrain_episodes = 0;
        cfg.log_stride = iterations;
        (format!("{} {}", e.label().to_uppercase(), b.label()), cfg)
    })
    .collect()
}

/// Iterations per second for each config, seeds run one after another so
/// timings do not compete for cores.
pub fn throughput_benchmark(cfgs: &[(String, ExperimentConfig)]) -> Result<Vec<ThroughputRow>> {
    cfgs.iter()
        .map(|(method, cfg)| {
            if cfg.seeds.len() < 2 {
                return Err(Error::Config(format!(
                    "{method}: throughput needs at least 2 seeds"
                )));
            }
            let rates = cfg
                .seeds
                .iter()
                .map(|&s| run_seed(cfg, s).map(|l| l.its_per_sec))
                .collect::<Result<Vec<_>>>()?;
            let (mean, std) = mean_std(&rates);
            Ok(ThroughputRow {
                method: method.clone(),
                its_per_sec_mean: mean,
                its_per_sec_std: std,
                seeds: rates.len(),
            })
        })
        .collect()
}

/// Columns: `method, its_per_sec_mean, its_per_sec_std, seeds`.
pub fn write_throughput_csv<W: Write>(rows: &[ThroughputRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}
