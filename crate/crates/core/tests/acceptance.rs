//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.
//!
//! CSVs are written to `$ACCEPTANCE_OUT` (default: a `acceptance` folder in
//! cargo's target tmpdir) for plotting.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fpg::bandit::{
    relu_targets, search_targets, EnvSpec, ObjectiveScale, ReluBandit, SearchBandit,
};
use fpg::estimator::{target_fn, AuxKind, Estimator, TargetBundle};
use fpg::graph::{
    bruteforce_minimum_partitions, factorise, minimum_factorisation, InfluenceMatrix,
    InfluenceNetwork, PartitionMap, PolicyFactorisation,
};
use fpg::policy::FactoredGaussianPolicy;
use fpg::stats::{chunked, VecMoments};
use fpg::trainer::{
    aggregate, aliasing_experiment, run_experiment, throughput_benchmark, throughput_configs,
    write_aggregate_csv, write_run_csv, write_throughput_csv, AliasingSetup, ExperimentConfig,
    RunLog,
};
use fpg::variance::{decompose_variance, write_sweep_csv, VarianceConfig, VarianceReport};

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;
type Criterion = (&'static str, u64, fn() -> Outcome);

const SEEDS: u64 = 10;

fn out_dir() -> PathBuf {
    let dir = std::env::var_os("ACCEPTANCE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"));
    fs::create_dir_all(&dir).expect("create output dir");
    dir
}

fn coupled_bundle(lambda: Vec<f64>) -> TargetBundle {
    let pm = |ix: &[usize]| PartitionMap::new(ix.to_vec(), 3).unwrap();
    TargetBundle::new(
        3,
        vec![
            (
                pm(&[0, 1]),
                target_fn(|x| -(x[0] - 1.0).powi(2) - (x[1] + 0.5).abs()),
            ),
            (
                pm(&[0, 1, 2]),
                target_fn(|x| (x[0] * x[1]).sin() + 0.5 * x[2] * x[0]),
            ),
            (pm(&[2]), target_fn(|x| -(x[0] - 2.0).abs())),
        ],
        lambda,
    )
    .unwrap()
}

fn unit_policy(sigma: PolicyFactorisation) -> FactoredGaussianPolicy {
    let n = sigma.action_count();
    FactoredGaussianPolicy::isotropic(sigma, vec![0.0; n], 1.0).unwrap()
}

fn mean_gradient(
    policy: &FactoredGaussianPolicy,
    bundle: &TargetBundle,
    k: &InfluenceMatrix,
    estimator: Estimator,
    samples: usize,
    seed: u64,
) -> VecMoments {
    let dim = policy.param_count();
    let parts = chunked(samples, seed, |rng, len| {
        let mut acc = VecMoments::new(dim);
        let (mut w, mut coef) = (Vec::new(), Vec::new());
        for _ in 0..len {
            let a = policy.sample(rng);
            let psi = bundle.evaluate(&a).unwrap();
            let total = fpg::estimator::weighted_targets(bundle.multipliers(), &psi, &mut w);
            estimator.column_targets(k, &w, total, &mut coef);
            acc.push(&policy.score_matrix(&a).unwrap().mul_vec(&coef));
        }
        acc
    });
    let mut total = VecMoments::new(dim);
    for p in &parts {
        total.merge(p);
    }
    total
}

fn unbiasedness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let lambda: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
    let bundle = coupled_bundle(lambda.clone());
    let net = bundle.network()?;
    let sigma = minimum_factorisation(&net);
    let k = factorise(&net, &sigma)?.influence_matrix().clone();
    let policy = unit_policy(sigma);
    let samples = 1_000_000;
    let v = mean_gradient(&policy, &bundle, &k, Estimator::Vanilla, samples, 1);
    let f = mean_gradient(&policy, &bundle, &k, Estimator::Factored, samples, 2);
    let worst = v
        .coords()
        .iter()
        .zip(f.coords())
        .map(|(a, b)| (a.mean() - b.mean()).abs() / a.standard_error().hypot(b.standard_error()))
        .fold(0.0, f64::max);
    Ok((
        worst <= 3.0,
        format!(
            "multipliers {lambda:.3?}, max |Δmean| = {worst:.2} combined SE over {samples} samples"
        ),
    ))
}

fn mf_correctness() -> Outcome {
    let (mut instances, mut disagree, mut non_unique) = (0usize, 0usize, 0usize);
    for n in 1..=4usize {
        for m in 1..=3usize {
            let scopes = (1u32 << n) - 1;
            let mut code = vec![1u32; m];
            loop {
                let mut edges = Vec::new();
                for (j, scope) in code.iter().enumerate() {
                    edges.extend((0..n).filter(|i| scope >> i & 1 == 1).map(|i| (i, j)));
                }
                let net = InfluenceNetwork::new(n, m, edges)?;
                let minima = bruteforce_minimum_partitions(&net)?;
                let mf = minimum_factorisation(&net);
                instances += 1;
                non_unique += usize::from(minima.len() != 1);
                disagree += usize::from(!minima.iter().any(|p| p.same_partition(&mf)));
                let mut j = 0;
                while j < m && code[j] == scopes {
                    code[j] = 1;
                    j += 1;
                }
                if j == m {
                    break;
                }
                code[j] += 1;
            }
        }
    }
    Ok((
        disagree == 0 && non_unique == 0,
        format!("{instances} networks, {disagree} disagreements, {non_unique} with several minima"),
    ))
}

fn consistency_grid() -> Outcome {
    let samples = 100_000;
    let (mut worst, mut min_quad, mut factors) = (0.0f64, f64::INFINITY, 0usize);
    let mut rows = Vec::new();
    for kind in ["search", "relu"] {
        for n in [2usize, 10, 50] {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + n as u64);
            let bundle = match kind {
                "search" => search_targets(&SearchBandit::sample(n, 0.0, 0, &mut rng)?)?.1,
                _ => relu_targets(&ReluBandit::sample(n, &mut rng)?)?.1,
            };
            let net = bundle.network()?;
            let sigma = minimum_factorisation(&net);
            let k = factorise(&net, &sigma)?.influence_matrix().clone();
            let r = decompose_variance(&unit_policy(sigma), &bundle, &k, samples, 7)?;
            for f in &r.factors {
                worst = worst.max(f.discrepancy());
                min_quad = min_quad.min(f.quadratic.value);
                factors += 1;
            }
            rows.push((n, r));
        }
    }
    write_sweep_csv(
        &rows,
        fs::File::create(out_dir().join("variance_consistency.csv"))?,
    )?;
    Ok((
        worst <= 3.0 && min_quad >= 0.0,
        format!("{factors} factors, max |formula − direct| = {worst:.2} combined SE, min quadratic = {min_quad:.3e}"),
    ))
}

fn dimension_sweep(kind: &str) -> Result<Vec<(usize, VarianceReport)>, fpg::Error> {
    let env = match kind {
        "search" => EnvSpec::Search {
            n: 1,
            penalty: 0.0,
            penalty_k: 0,
            scale: ObjectiveScale::Sum,
            action_box: None,
        },
        _ => EnvSpec::Relu {
            n: 1,
            scale: ObjectiveScale::Sum,
        },
    };
    fpg::variance::variance_sweep(&VarianceConfig {
        env,
        ns: vec![1, 10, 100, 1000],
        samples: 100_000,
        seed: 11,
        factorisation: Default::default(),
        translate: None,
    })
}

fn sweep_shape() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for kind in ["search", "relu"] {
        let rows = dimension_sweep(kind)?;
        write_sweep_csv(
            &rows,
            fs::File::create(out_dir().join(format!("variance_sweep_{kind}.csv")))?,
        )?;
        let quads: Vec<f64> = rows
            .iter()
            .map(|(_, r)| r.aggregate.quadratic.value)
            .collect();
        let monotone = quads.windows(2).all(|w| w[1] >= w[0]);
        let dominant = rows
            .iter()
            .filter(|(n, _)| *n >= 10)
            .all(|(_, r)| r.aggregate.quadratic.value > r.aggregate.linear.value.abs());
        let positive = rows.iter().filter(|(n, _)| *n >= 10).all(|(_, r)| {
            r.aggregate.delta_formula.value > 0.0 && r.aggregate.delta_direct.value > 0.0
        });
        ok &= monotone && dominant && positive;
        notes.push(format!(
            "{kind}: quadratic {:.3e}, monotone {monotone}, dominant {dominant}, ΔV>0 {positive}",
            quads.iter().copied().fold(f64::NAN, f64::max)
        ));
    }
    Ok((ok, notes.join("; ")))
}

fn corollary() -> Outcome {
    let samples = 100_000;
    let (mut worst_dv, mut worst_mean, mut factors) = (f64::INFINITY, 0.0f64, 0usize);
    for n in [2usize, 10, 50] {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + n as u64);
        let env = SearchBandit::sample(n, 0.5, n.div_ceil(2), &mut rng)?.with_action_box(10.0)?;
        let (net, raw) = search_targets(&env)?;
        let shifted = raw.translate(0.0)?;
        let sigma = minimum_factorisation(&net);
        let k = factorise(&net, &sigma)?.influence_matrix().clone();
        let policy = unit_policy(sigma);
        let r = decompose_variance(&policy, &shifted, &k, samples, 5)?;
        for f in &r.factors {
            worst_dv =
                worst_dv.min(f.delta_formula.value / f.delta_formula.se.max(f64::MIN_POSITIVE));
            factors += 1;
        }
        // paired draws: the per-sample difference isolates the shift's effect
        for est in [Estimator::Factored, Estimator::Vanilla] {
            let dim = policy.param_count();
            let parts = chunked(samples, 6, |rng, len| {
                let mut acc = VecMoments::new(dim);
                let (mut w, mut coef) = (Vec::new(), Vec::new());
                for _ in 0..len {
                    let a = policy.sample(rng);
                    let s = policy.score_matrix(&a).unwrap();
                    let mut g = [Vec::new(), Vec::new()];
                    for (b, out) in [&raw, &shifted].into_iter().zip(g.iter_mut()) {
                        let psi = b.evaluate(&a).unwrap();
                        let total = fpg::estimator::weighted_targets(b.multipliers(), &psi, &mut w);
                        est.column_targets(&k, &w, total, &mut coef);
                        *out = s.mul_vec(&coef);
                    }
                    let d: Vec<f64> = g[1].iter().zip(&g[0]).map(|(x, y)| x - y).collect();
                    acc.push(&d);
                }
                acc
            });
            let mut diff = VecMoments::new(dim);
            for p in &parts {
                diff.merge(p);
            }
            for m in diff.coords() {
                worst_mean = worst_mean.max(m.mean().abs() / m.standard_error());
            }
        }
    }
    Ok((
        worst_dv >= -3.0 && worst_mean <= 3.0,
        format!(
            "{factors} factors, min ΔV/SE = {worst_dv:.2}, max mean shift = {worst_mean:.2} SE"
        ),
    ))
}

fn summarise(logs: &[RunLog]) -> (usize, usize, usize, f64) {
    let hit = logs.iter().filter(|l| l.converged()).count();
    let diverged = logs.iter().filter(|l| l.diverged()).count();
    let improved = logs
        .iter()
        .filter(|l| !l.diverged() && l.final_gap < l.initial_gap)
        .count();
    let mean_final = logs.iter().map(|l| l.final_gap).sum::<f64>() / logs.len() as f64;
    (hit, diverged, improved, mean_final)
}

fn train(
    estimator: Estimator,
    baseline: AuxKind,
    lr: f64,
    iterations: usize,
    name: &str,
) -> Result<Vec<RunLog>, Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::search(100, estimator, baseline, lr, iterations);
    cfg.seeds = (0..SEEDS).collect();
    cfg.log_stride = (iterations / 200).max(1);
    let logs = run_experiment(&cfg)?;
    let dir = out_dir();
    write_run_csv(
        &logs,
        fs::File::create(dir.join(format!("train_{name}.csv")))?,
    )?;
    write_aggregate_csv(
        &aggregate(&logs),
        fs::File::create(dir.join(format!("train_{name}_aggregate.csv")))?,
    )?;
    Ok(logs)
}

fn training() -> Outcome {
    let fpg_none = train(Estimator::Factored, AuxKind::None, 0.5, 20_000, "fpg_none")?;
    let fpg_state = train(
        Estimator::Factored,
        AuxKind::ScalarTd,
        0.5,
        20_000,
        "fpg_state",
    )?;
    let vpg_state = train(
        Estimator::Vanilla,
        AuxKind::ScalarTd,
        0.5,
        20_000,
        "vpg_state",
    )?;
    let vpg_fast = train(
        Estimator::Vanilla,
        AuxKind::None,
        0.5,
        20_000,
        "vpg_none_fast",
    )?;
    let vpg_slow = train(
        Estimator::Vanilla,
        AuxKind::None,
        0.001,
        200_000,
        "vpg_none_slow",
    )?;

    let (fn_hit, _, _, fn_gap) = summarise(&fpg_none);
    let (fs_hit, _, _, fs_gap) = summarise(&fpg_state);
    let (_, _, _, vs_gap) = summarise(&vpg_state);
    let fails_fast = vpg_fast
        .iter()
        .filter(|l| l.diverged() || l.first_hit.is_none())
        .count();
    let (_, slow_div, slow_improved, slow_gap) = summarise(&vpg_slow);
    let need = (SEEDS * 9 / 10) as usize;
    let ok = fn_hit >= need
        && fs_hit >= need
        && fails_fast >= (SEEDS * 8 / 10) as usize
        && slow_div == 0
        && slow_improved >= need
        && fn_gap.max(fs_gap) <= vs_gap
        && vs_gap <= slow_gap;
    Ok((
        ok,
        format!(
            "FPG hits {fn_hit}/{SEEDS}, FPG+b(s) {fs_hit}/{SEEDS}; VPG@0.5 fails {fails_fast}/{SEEDS}; \
             VPG@0.001 stable and improving {slow_improved}/{SEEDS}; final gaps FPG {fn_gap:.3} / {fs_gap:.3}, \
             VPG+b(s) {vs_gap:.3}, VPG@0.001 {slow_gap:.3}"
        ),
    ))
}

fn aliasing() -> Outcome {
    let setup = AliasingSetup::default();
    let seeds: Vec<u64> = (0..SEEDS).collect();
    let res = aliasing_experiment(&setup, &seeds)?;
    let dir = out_dir();
    write_run_csv(&res.vanilla, fs::File::create(dir.join("alias_vpg.csv"))?)?;
    write_run_csv(&res.factored, fs::File::create(dir.join("alias_fpg.csv"))?)?;
    let ratios = res.variance_ratios();
    let wins = ratios.iter().filter(|&&r| r < 1.0).count();
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    Ok((
        wins >= (SEEDS * 8 / 10) as usize,
        format!(
            "ratio < 1 on {wins}/{SEEDS} seeds, median ratio {:.3e}",
            sorted[sorted.len() / 2]
        ),
    ))
}

fn throughput() -> Outcome {
    let seeds = vec![0, 1, 2];
    let mut cfgs = throughput_configs(1000, 20_000, seeds);
    for (_, cfg) in cfgs
        .iter_mut()
        .filter(|(_, c)| c.baseline == AuxKind::ActionDependent)
    {
        cfg.iterations = 500;
        cfg.log_stride = 500;
    }
    let rows = throughput_benchmark(&cfgs)?;
    write_throughput_csv(&rows, fs::File::create(out_dir().join("throughput.csv"))?)?;
    let rate = |m: &str| {
        rows.iter()
            .find(|r| r.method == m)
            .map(|r| r.its_per_sec_mean)
            .unwrap()
    };
    let fast: Vec<f64> = ["VPG none", "VPG b(s)", "FPG none", "FPG b(s)"]
        .iter()
        .map(|m| rate(m))
        .collect();
    let spread = fast.iter().copied().fold(0.0, f64::max)
        / fast.iter().copied().fold(f64::INFINITY, f64::min);
    let slowdown = rate("VPG none") / rate("VPG b(s,a)");
    let table = rows
        .iter()
        .map(|r| {
            format!(
                "{} {:.0}±{:.0}",
                r.method, r.its_per_sec_mean, r.its_per_sec_std
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    Ok((
        spread <= 2.0 && slowdown >= 10.0,
        format!("it/s {table}; fast spread {spread:.2}x, b(s,a) slowdown {slowdown:.0}x"),
    ))
}

fn strip_wall_clock(csv_text: &str) -> String {
    let mut lines = csv_text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let drop = header.iter().position(|h| *h == "its_per_sec");
    std::iter::once(header.join(","))
        .chain(lines.map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| Some(*i) != drop)
                .map(|(_, f)| f)
                .collect::<Vec<_>>()
                .join(",")
        }))
        .collect::<Vec<_>>()
        .join("\n")
}

fn determinism() -> Outcome {
    let run = || -> Result<Vec<String>, Box<dyn std::error::Error>> {
        let mut out = Vec::new();
        let mut buf = Vec::new();
        write_sweep_csv(&dimension_sweep("relu")?[..2], &mut buf)?;
        out.push(String::from_utf8(buf)?);
        let mut cfg =
            ExperimentConfig::search(100, Estimator::Factored, AuxKind::ScalarTd, 0.5, 20_000);
        cfg.log_stride = 100;
        let logs = run_experiment(&cfg)?;
        let mut buf = Vec::new();
        write_run_csv(&logs, &mut buf)?;
        out.push(strip_wall_clock(&String::from_utf8(buf)?));
        let mut buf = Vec::new();
        write_aggregate_csv(&aggregate(&logs), &mut buf)?;
        out.push(String::from_utf8(buf)?);
        let setup = AliasingSetup {
            iterations: 20_000,
            ..Default::default()
        };
        let res = aliasing_experiment(&setup, &[0, 1])?;
        for logs in [&res.vanilla, &res.factored] {
            let mut buf = Vec::new();
            write_run_csv(logs, &mut buf)?;
            out.push(strip_wall_clock(&String::from_utf8(buf)?));
        }
        Ok(out)
    };
    let first = run()?;
    let second = run()?;
    let same = first.iter().zip(&second).filter(|(a, b)| a == b).count();
    Ok((
        same == first.len() && !first.is_empty(),
        format!(
            "{same}/{} CSVs byte-identical across repeated runs",
            first.len()
        ),
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("unbiasedness", 60, unbiasedness),
        ("mf-correctness", 300, mf_correctness),
        ("variance-consistency", 120, consistency_grid),
        ("variance-sweep-shape", 600, sweep_shape),
        ("translation-nonnegative", 120, corollary),
        ("training-desk-scale", 600, training),
        ("aliasing", 300, aliasing),
        ("throughput-ordering", 300, throughput),
        ("determinism", 600, determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, limit, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let took = start.elapsed();
        let pass = pass && took <= Duration::from_secs(limit);
        if !pass {
            failed += 1;
        }
        println!(
            "{} {name}: {detail} [{:.1}s, limit {limit}s]",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
