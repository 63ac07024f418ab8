use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use fpg::estimator::{AuxKind, Estimator};
use fpg::trainer::ExperimentConfig;

pub fn load<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seeds(pub Vec<u64>);

/// Accepts `a..b` (half open) or a comma separated list.
pub fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a
            .trim()
            .parse()
            .map_err(|_| format!("bad seed range `{s}`"))?;
        let b: u64 = b
            .trim()
            .parse()
            .map_err(|_| format!("bad seed range `{s}`"))?;
        (a..b).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse().map_err(|_| format!("bad seed `{t}`")))
            .collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err("seed list is empty".into());
    }
    Ok(Seeds(seeds))
}

fn default_bench_n() -> usize {
    1000
}
fn default_bench_iterations() -> usize {
    20_000
}
fn default_action_iterations() -> usize {
    500
}
fn default_bench_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_bench_n")]
    pub n: usize,
    #[serde(default = "default_bench_iterations")]
    pub iterations: usize,
    /// The action-dependent baseline is far slower, so it gets its own budget.
    #[serde(default = "default_action_iterations")]
    pub action_dependent_iterations: usize,
    #[serde(default = "default_bench_seeds")]
    pub seeds: Vec<u64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n: default_bench_n(),
            iterations: default_bench_iterations(),
            action_dependent_iterations: default_action_iterations(),
            seeds: default_bench_seeds(),
        }
    }
}

/// Grid of estimator, baseline and learning rate around a base config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    pub estimators: Vec<Estimator>,
    pub baselines: Vec<AuxKind>,
    pub learning_rates: Vec<f64>,
}

impl SweepConfig {
    pub fn expand(&self) -> anyhow::Result<Vec<ExperimentConfig>> {
        if self.estimators.is_empty() || self.baselines.is_empty() || self.learning_rates.is_empty()
        {
            bail!("sweep needs at least one estimator, baseline and learning rate");
        }
        let mut out = Vec::new();
        for &estimator in &self.estimators {
            for &baseline in &self.baselines {
                for &learning_rate in &self.learning_rates {
                    out.push(ExperimentConfig {
                        estimator,
                        baseline,
                        learning_rate,
                        ..self.base.clone()
                    });
                }
            }
        }
        Ok(out)
    }
}
