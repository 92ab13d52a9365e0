//! Command-line front end. Every subcommand prints one JSON summary
//! to stdout; progress and artifacts go to the output directory.
//! Exit codes: 0 success, 1 invalid input or a failed certification,
//! 2 numeric abort mid-run.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use coopo::config::{self, RunConfig};
use coopo::cycle::{run_coopo, run_ppo_baseline, CoopoConfig, RunOutcome};
use coopo::data::{generate, BehaviorDescriptor, Tier};
use coopo::envs::make_benchmark;
use coopo::metrics::{export_plots, read_metrics, MetricWriter, Phase};
use coopo::verify::run_suites;
use coopo::{Error, Result};

#[derive(Parser)]
#[command(name = "coopo", version, about = "Cyclic offline-online policy optimization at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file and stream metrics to a CSV.
    Train(TrainArgs),
    /// Roll a scripted behavior policy and save the transitions.
    GenData(GenDataArgs),
    /// Run certification suites; one JSON report per suite.
    Verify(VerifyArgs),
    /// Run several algorithms over a seed range on one task.
    Compare(CompareArgs),
    /// Collapse metrics CSVs into per-figure curves with seed bands.
    ExportPlots(ExportPlotsArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Algo {
    Coopo,
    Ppo,
}

impl Algo {
    fn name(self) -> &'static str {
        match self {
            Algo::Coopo => "coopo",
            Algo::Ppo => "ppo",
        }
    }

    fn run(
        self,
        cfg: &CoopoConfig,
        out_dir: Option<&std::path::Path>,
        sink: &mut MetricWriter,
    ) -> Result<RunOutcome> {
        match self {
            Algo::Coopo => run_coopo(cfg, out_dir, sink),
            Algo::Ppo => run_ppo_baseline(cfg, out_dir, sink),
        }
    }
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Run configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; beats both the config and COOPO_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; beats the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Algo::Coopo)]
    algo: Algo,
}

#[derive(clap::Args)]
struct GenDataArgs {
    /// Environment name (bandit2, chain5, grid4x4, pointmass).
    #[arg(long)]
    env: String,
    #[arg(long, value_enum, default_value_t = TierArg::Medium)]
    tier: TierArg,
    /// Number of transitions.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Generation seed; beats COOPO_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; defaults to `<env>_<tier>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TierArg {
    Expert,
    Medium,
    Random,
}

impl TierArg {
    fn tier(self) -> Tier {
        match self {
            TierArg::Expert => Tier::Expert,
            TierArg::Medium => Tier::Medium,
            TierArg::Random => Tier::Random,
        }
    }

    fn name(self) -> &'static str {
        match self {
            TierArg::Expert => "expert",
            TierArg::Medium => "medium",
            TierArg::Random => "random",
        }
    }
}

#[derive(clap::Args)]
struct VerifyArgs {
    /// Suite name, or "all".
    #[arg(long, default_value = "all")]
    suite: String,
    /// Also write the reports to `<out>/verify_report.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct CompareArgs {
    /// Algorithm to include; repeat the flag for several.
    #[arg(long = "algo", value_enum, default_values_t = [Algo::Coopo, Algo::Ppo])]
    algos: Vec<Algo>,
    /// Base run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment, overriding the config.
    #[arg(long)]
    env: Option<String>,
    /// Number of consecutive seeds per algorithm.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// Transitions to generate when the config names no dataset.
    #[arg(long, default_value_t = 5_000)]
    dataset_size: usize,
    /// Eval return that counts as solved in the summary.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct ExportPlotsArgs {
    /// Directory holding metrics CSVs; every *.csv inside is read.
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(args) => train(args),
        Command::GenData(args) => gen_data(args),
        Command::Verify(args) => verify(args),
        Command::Compare(args) => compare(args),
        Command::ExportPlots(args) => export(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numeric(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn env_seed() -> Result<Option<u64>> {
    config::seed_override(std::env::var("COOPO_SEED").ok().as_deref())
}

fn emit(summary: serde_json::Value) {
    println!("{summary}");
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = config::parse_file(&args.config)?;
    config::apply_seed_override(&mut cfg, std::env::var("COOPO_SEED").ok().as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.out = Some(out);
    }
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Error::input("no output directory: pass --out or set `out` in the config"))?;

    cfg.write_resolved(&out)?;
    let run_cfg = match args.algo {
        Algo::Coopo => cfg.to_coopo()?,
        Algo::Ppo => cfg.to_baseline(),
    };
    let metrics_path = out.join(format!("{}.csv", run_cfg.run_id));
    let mut writer = MetricWriter::create(&metrics_path)?;
    let outcome = args.algo.run(&run_cfg, Some(&out), &mut writer)?;

    emit(serde_json::json!({
        "run_id": run_cfg.run_id,
        "algo": args.algo.name(),
        "metrics": metrics_path,
        "cycles": outcome.reports.len(),
        "final_return": outcome.reports.last().map(|r| r.j_after),
        "env_steps": outcome.env_steps,
        "trajectories": outcome.trajectories,
    }));
    Ok(())
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let seed = match args.seed {
        Some(seed) => seed,
        None => env_seed()?.unwrap_or(0),
    };
    let mut env = make_benchmark(&args.env)?;
    let behavior = BehaviorDescriptor::for_env(&env, args.tier.tier());
    let dataset = generate(&mut env, &behavior, args.n, seed)?;
    let path = args
        .out
        .unwrap_or_else(|| PathBuf::from(format!("{}_{}.json", args.env, args.tier.name())));
    dataset.save(&path)?;

    emit(serde_json::json!({
        "path": path,
        "env": args.env,
        "tier": args.tier.name(),
        "n": dataset.meta.n,
        "seed": seed,
    }));
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<()> {
    let reports = run_suites(&args.suite)?;
    for report in &reports {
        println!("{}", serde_json::to_string(report).expect("reports serialize"));
    }
    if let Some(out) = args.out {
        std::fs::create_dir_all(&out)?;
        let text = serde_json::to_string_pretty(&reports).expect("reports serialize");
        std::fs::write(out.join("verify_report.json"), text)?;
    }
    let failed: Vec<&str> =
        reports.iter().filter(|r| !r.pass).map(|r| r.suite.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::input(format!("suites failed: {}", failed.join(", "))))
    }
}

fn compare(args: CompareArgs) -> Result<()> {
    let mut base = match &args.config {
        Some(path) => config::parse_file(path)?,
        None => RunConfig::default(),
    };
    config::apply_seed_override(&mut base, std::env::var("COOPO_SEED").ok().as_deref())?;
    if let Some(env_name) = args.env {
        base.env = env_name;
    }
    if args.seeds == 0 {
        return Err(Error::input("--seeds must be at least 1"));
    }
    std::fs::create_dir_all(&args.out)?;

    if base.dataset.is_none() {
        let mut env = make_benchmark(&base.env)?;
        let behavior = BehaviorDescriptor::for_env(&env, Tier::Medium);
        let dataset = generate(&mut env, &behavior, args.dataset_size, base.seed)?;
        let path = args.out.join(format!("{}_medium.json", base.env));
        dataset.save(&path)?;
        base.dataset = Some(path);
    }
    base.validate()?;
    base.write_resolved(&args.out)?;

    let mut algos: Vec<Algo> = Vec::new();
    for algo in args.algos {
        if !algos.contains(&algo) {
            algos.push(algo);
        }
    }

    let mut summaries = Vec::new();
    for algo in algos {
        let mut finals = Vec::new();
        let mut to_threshold = Vec::new();
        for offset in 0..args.seeds {
            let mut cfg = base.clone();
            cfg.seed = base.seed + offset;
            cfg.run_id = Some(format!("{}_s{}", algo.name(), cfg.seed));
            let run_cfg = match algo {
                Algo::Coopo => cfg.to_coopo()?,
                Algo::Ppo => cfg.to_baseline(),
            };
            let path = args.out.join(format!("{}.csv", run_cfg.run_id));
            let mut writer = MetricWriter::create(&path)?;
            let outcome = algo.run(&run_cfg, None, &mut writer)?;
            finals.push(outcome.reports.last().map(|r| r.j_after));
            if let Some(threshold) = args.threshold {
                let hit = read_metrics(&path)?
                    .iter()
                    .filter(|r| r.phase == Phase::Eval && r.mean_return >= threshold)
                    .map(|r| r.traj_cum)
                    .min();
                to_threshold.push(hit);
            }
        }
        summaries.push(serde_json::json!({
            "algo": algo.name(),
            "final_returns": finals,
            "trajectories_to_threshold": if args.threshold.is_some() {
                Some(&to_threshold)
            } else {
                None
            },
        }));
    }

    emit(serde_json::json!({
        "out": args.out,
        "env": base.env,
        "seeds": args.seeds,
        "threshold": args.threshold,
        "runs": summaries,
    }));
    Ok(())
}

fn export(args: ExportPlotsArgs) -> Result<()> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(&args.metrics)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    files.sort();
    let written = export_plots(&files, &args.out)?;
    emit(serde_json::json!({ "figures": written }));
    Ok(())
}
