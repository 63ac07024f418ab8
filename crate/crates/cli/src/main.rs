mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fpg::graph::{
    factorise, mf_bruteforce_oracle, minimum_factorisation, parse_network, ORACLE_LIMIT,
};
use fpg::trainer::{
    aggregate, aliasing_experiment, run_experiment, throughput_benchmark, throughput_configs,
    write_aggregate_csv, write_run_csv, write_throughput_csv, AliasingSetup, ExperimentConfig,
    RunLog,
};
use fpg::variance::{variance_sweep, write_sweep_csv, VarianceConfig, MIN_DECOMPOSITION_SAMPLES};

use config::{load, parse_seeds, BenchConfig, Seeds, SweepConfig};

#[derive(Parser)]
#[command(name = "fpg", version, about = "Factored policy gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing)
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seeds, e.g. `0..10` or `1,5,9`
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Seeds>,
    /// Override the iteration budget
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Minimum factorisation of an influence network file
    Factorise {
        graph: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cross-check against exhaustive search (n <= 6)
        #[arg(long)]
        oracle: bool,
    },
    /// Variance decomposition sweep
    Variance {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        /// Overrides the config seed (first entry is used)
        #[arg(long, value_parser = parse_seeds)]
        seeds: Option<Seeds>,
    },
    /// Train one configuration over its seeds
    Train(Common),
    /// Paired VPG / FPG runs with one penalty-free dimension
    Alias(Common),
    /// Iterations per second of the five estimator / baseline pairings
    Bench(Common),
    /// Train a grid of estimators, baselines and learning rates
    Sweep(Common),
}

/// Distinguishes bad input (exit 2) from failures while running (exit 1).
enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Run(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn usage<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Usage)
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn cmd_factorise(graph: &Path, out: Option<&Path>, oracle: bool) -> Outcome {
    let text = usage(
        fs::read_to_string(graph).with_context(|| format!("cannot read {}", graph.display())),
    )?;
    let net = usage(
        parse_network(&text).with_context(|| format!("malformed graph {}", graph.display())),
    )?;
    if oracle && net.action_count() > ORACLE_LIMIT {
        return Err(Failure::Usage(anyhow!(
            "--oracle supports at most {ORACLE_LIMIT} actions, graph has {}",
            net.action_count()
        )));
    }
    let mf = minimum_factorisation(&net);
    let k = factorise(&net, &mf)?;
    println!("factors: {}", mf.len());
    for (i, f) in mf.factors().iter().enumerate() {
        println!("  {i}: {:?}", f.indices());
    }
    println!("factored influence matrix:");
    for row in k.influence_matrix().to_bit_strings() {
        println!("  {row}");
    }
    if oracle {
        let brute = mf_bruteforce_oracle(&net)?;
        let agree = brute.same_partition(&mf);
        println!("oracle: {}", if agree { "agrees" } else { "DISAGREES" });
        if !agree {
            return Err(Failure::Run(anyhow!("oracle found {:?}", brute.groups())));
        }
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        serde_json::to_writer_pretty(create(&dir.join("factorisation.json"))?, &mf)?;
        fs::write(
            dir.join("influence.txt"),
            k.influence_matrix().to_bit_strings().join("\n") + "\n",
        )?;
    }
    Ok(())
}

fn cmd_variance(
    config: &Path,
    out: &Path,
    samples: Option<usize>,
    seeds: Option<Seeds>,
) -> Outcome {
    let mut cfg: VarianceConfig = usage(load(config))?;
    if let Some(s) = samples {
        cfg.samples = s;
    }
    if let Some(s) = seeds {
        cfg.seed = s.0[0];
    }
    if cfg.samples < MIN_DECOMPOSITION_SAMPLES {
        return Err(Failure::Usage(anyhow!(
            "samples = {} is below the minimum of {MIN_DECOMPOSITION_SAMPLES}",
            cfg.samples
        )));
    }
    create_dir(out)?;
    let reports = variance_sweep(&cfg)?;
    write_sweep_csv(&reports, create(&out.join("variance.csv"))?)?;
    for (n, r) in &reports {
        let a = &r.aggregate;
        println!(
            "n={n:<5} quadratic {:>12.4e}  linear {:>12.4e}  ΔV formula {:>12.4e}  direct {:>12.4e}",
            a.quadratic.value, a.linear.value, a.delta_formula.value, a.delta_direct.value
        );
    }
    Ok(())
}

fn experiment(common: &Common) -> Result<ExperimentConfig, Failure> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Failure::Usage(anyhow!("--config is required")))?;
    let mut cfg: ExperimentConfig = usage(load(path))?;
    if let Some(s) = &common.seeds {
        cfg.seeds = s.0.clone();
    }
    if let Some(i) = common.iterations {
        cfg.iterations = i;
    }
    usage(cfg.validate().map_err(Into::into))?;
    Ok(cfg)
}

fn write_runs(dir: &Path, logs: &[RunLog]) -> Outcome {
    create_dir(dir)?;
    for log in logs {
        write_run_csv(
            std::slice::from_ref(log),
            create(&dir.join(format!("seed_{}.csv", log.seed)))?,
        )?;
    }
    write_aggregate_csv(&aggregate(logs), create(&dir.join("aggregate.csv"))?)?;
    let states: Vec<_> = logs.iter().map(|l| (l.seed, &l.final_state)).collect();
    serde_json::to_writer_pretty(create(&dir.join("final_states.json"))?, &states)?;
    Ok(())
}

fn report(label: &str, logs: &[RunLog]) {
    let hits = logs.iter().filter(|l| l.converged()).count();
    let diverged = logs.iter().filter(|l| l.diverged()).count();
    let gap = logs.iter().map(|l| l.final_gap).sum::<f64>() / logs.len() as f64;
    println!(
        "{label}: mean final gap {gap:.4}, reached threshold {hits}/{n}, diverged {diverged}/{n}",
        n = logs.len()
    );
}

fn cmd_train(common: &Common) -> Outcome {
    let cfg = experiment(common)?;
    let logs = run_experiment(&cfg)?;
    write_runs(&common.out, &logs)?;
    report(&cfg.label(), &logs);
    Ok(())
}

#[derive(Serialize)]
struct AliasRow {
    seed: u64,
    vpg_tail_variance: Option<f64>,
    fpg_tail_variance: Option<f64>,
    ratio: f64,
}

fn cmd_alias(common: &Common) -> Outcome {
    let mut setup: AliasingSetup = match &common.config {
        Some(p) => usage(load(p))?,
        None => AliasingSetup::default(),
    };
    if let Some(i) = common.iterations {
        setup.iterations = i;
    }
    let seeds = common
        .seeds
        .clone()
        .map_or_else(|| (0..10).collect(), |s| s.0);
    let res = usage(aliasing_experiment(&setup, &seeds).map_err(Into::into))?;
    create_dir(&common.out)?;
    write_run_csv(&res.vanilla, create(&common.out.join("alias_vpg.csv"))?)?;
    write_run_csv(&res.factored, create(&common.out.join("alias_fpg.csv"))?)?;
    let mut wtr = csv::Writer::from_writer(create(&common.out.join("alias_summary.csv"))?);
    let ratios = res.variance_ratios();
    for ((v, f), ratio) in res.vanilla.iter().zip(&res.factored).zip(&ratios) {
        wtr.serialize(AliasRow {
            seed: v.seed,
            vpg_tail_variance: v.tail_err_variance,
            fpg_tail_variance: f.tail_err_variance,
            ratio: *ratio,
        })?;
    }
    wtr.flush()?;
    let wins = ratios.iter().filter(|&&r| r < 1.0).count();
    println!(
        "FPG error variance below VPG on {wins}/{} seeds",
        ratios.len()
    );
    Ok(())
}

fn cmd_bench(common: &Common) -> Outcome {
    let mut bench: BenchConfig = match &common.config {
        Some(p) => usage(load(p))?,
        None => BenchConfig::default(),
    };
    if let Some(s) = &common.seeds {
        bench.seeds = s.0.clone();
    }
    if let Some(i) = common.iterations {
        bench.iterations = i;
    }
    let mut cfgs = throughput_configs(bench.n, bench.iterations, bench.seeds.clone());
    for (_, cfg) in cfgs.iter_mut() {
        if cfg.baseline == fpg::estimator::AuxKind::ActionDependent {
            cfg.iterations = bench.action_dependent_iterations;
            cfg.log_stride = bench.action_dependent_iterations;
        }
    }
    let rows = usage(throughput_benchmark(&cfgs).map_err(Into::into))?;
    create_dir(&common.out)?;
    write_throughput_csv(&rows, create(&common.out.join("throughput.csv"))?)?;
    for r in &rows {
        println!(
            "{:<12} {:>10.0} ± {:<8.0} it/s",
            r.method, r.its_per_sec_mean, r.its_per_sec_std
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    run: String,
    estimator: &'static str,
    baseline: &'static str,
    learning_rate: f64,
    mean_final_gap: f64,
    reached: usize,
    diverged: usize,
    seeds: usize,
}

fn cmd_sweep(common: &Common) -> Outcome {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Failure::Usage(anyhow!("--config is required")))?;
    let sweep: SweepConfig = usage(load(path))?;
    let mut cfgs = usage(sweep.expand())?;
    for cfg in &mut cfgs {
        if let Some(s) = &common.seeds {
            cfg.seeds = s.0.clone();
        }
        if let Some(i) = common.iterations {
            cfg.iterations = i;
        }
        usage(cfg.validate().map_err(Into::into))?;
    }
    create_dir(&common.out)?;
    let mut wtr = csv::Writer::from_writer(create(&common.out.join("summary.csv"))?);
    for cfg in &cfgs {
        let run = format!("{}_lr{}", cfg.label(), cfg.learning_rate);
        let logs = run_experiment(cfg)?;
        write_runs(&common.out.join(&run), &logs)?;
        report(&run, &logs);
        wtr.serialize(SweepRow {
            estimator: cfg.estimator.label(),
            baseline: cfg.baseline.label(),
            learning_rate: cfg.learning_rate,
            mean_final_gap: logs.iter().map(|l| l.final_gap).sum::<f64>() / logs.len() as f64,
            reached: logs.iter().filter(|l| l.converged()).count(),
            diverged: logs.iter().filter(|l| l.diverged()).count(),
            seeds: logs.len(),
            run,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Factorise { graph, out, oracle } => cmd_factorise(graph, out.as_deref(), *oracle),
        Command::Variance {
            config,
            out,
            samples,
            seeds,
        } => cmd_variance(config, out, *samples, seeds.clone()),
        Command::Train(c) => cmd_train(c),
        Command::Alias(c) => cmd_alias(c),
        Command::Bench(c) => cmd_bench(c),
        Command::Sweep(c) => cmd_sweep(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
