use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vapvi_core::data::{generate, sidecar_path};
use vapvi_core::experiment::{parse_results, run, summarize, summary_csv, ExperimentConfig, InstanceSpec};
use vapvi_core::instances::{build_synthetic, SyntheticConfig};
use vapvi_core::mdp::{exact_value_iteration, fmt_f64, FeatureMap, LinearMdp, PolicyTable};
use vapvi_core::SplitMode;

#[derive(Parser)]
#[command(name = "vapvi", version, about = "Offline pessimistic value iteration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the two-state synthetic instance and its behavior policy.
    Synth(SynthArgs),
    /// Write a random member of the lower-bound family.
    Hard(HardArgs),
    /// Sample an offline dataset from an instance.
    Gen(GenArgs),
    /// Run an experiment sweep and write the results CSV.
    Run(RunArgs),
    /// Per-(algorithm, H, K) mean and standard deviation of a results CSV.
    Summarize(SummarizeArgs),
    /// Print the optimal value of an instance.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    horizon: usize,
    #[arg(long, default_value_t = 0.9)]
    r: f64,
    #[arg(long, default_value_t = 0.6)]
    p: f64,
    /// Standard deviation of Gaussian reward noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    out: PathBuf,
    /// Behavior policy output; defaults to `<out>.behavior.json`.
    #[arg(long)]
    behavior_out: Option<PathBuf>,
}

#[derive(Args)]
struct HardArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    horizon: usize,
    /// Gap parameter; defaults to 1/sqrt(3d).
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    behavior_out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Behavior policy JSON; uniform when absent.
    #[arg(long)]
    behavior: Option<PathBuf>,
    #[arg(long)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "bonus-c")]
    bonus_c: Option<f64>,
    /// Use the same data for the value and variance regressions.
    #[arg(long, conflicts_with = "split")]
    no_split: bool,
    /// Use disjoint halves for the value and variance regressions.
    #[arg(long)]
    split: bool,
    #[arg(long)]
    no_higher_order: bool,
    /// Overrides the config's output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    csv: PathBuf,
    /// Write the summary here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Instance JSON.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    instance: Option<PathBuf>,
    /// Experiment config; prints one value per horizon.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::Hard(a) => hard(a),
        Command::Gen(a) => gen(a),
        Command::Run(a) => run_cmd(a),
        Command::Summarize(a) => summarize_cmd(a),
        Command::Oracle(a) => oracle(a),
    }
}

fn behavior_path(out: &Path, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".behavior.json");
        PathBuf::from(s)
    })
}

fn write_instance(mdp: &LinearMdp, behavior: &PolicyTable, out: &Path, behavior_out: Option<PathBuf>) -> Result<()> {
    mdp.save(out).with_context(|| format!("writing {}", out.display()))?;
    let bpath = behavior_path(out, behavior_out);
    std::fs::write(&bpath, serde_json::to_string(behavior)? + "\n")
        .with_context(|| format!("writing {}", bpath.display()))?;
    println!("{} {}", out.display(), mdp.content_hash());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut config = SyntheticConfig::new(a.horizon);
    config.r = a.r;
    config.p = a.p;
    config.reward_noise_std = a.noise;
    let (mdp, behavior) = build_synthetic(&config)?;
    write_instance(&mdp, &behavior, &a.out, a.behavior_out)
}

fn hard(a: HardArgs) -> Result<()> {
    let spec = InstanceSpec::Hard {
        d: a.d,
        delta: a.delta,
        seed: a.seed,
        reward_noise_std: 1.0,
    };
    let (mdp, behavior) = spec.build(a.horizon)?;
    write_instance(&mdp, &behavior, &a.out, a.behavior_out)
}

fn gen(a: GenArgs) -> Result<()> {
    let mdp = LinearMdp::load(&a.instance).with_context(|| format!("reading {}", a.instance.display()))?;
    let behavior = match &a.behavior {
        Some(p) => {
            let table: PolicyTable = serde_json::from_str(&std::fs::read_to_string(p)?)?;
            table.validate()?;
            table
        }
        None => PolicyTable::uniform(mdp.horizon(), mdp.num_states(), mdp.num_actions()),
    };
    let data = generate(&mdp, &behavior, a.episodes, a.seed)?;
    data.save(&a.out)?;
    println!("{} ({} episodes, meta {})", a.out.display(), a.episodes, sidecar_path(&a.out).display());
    Ok(())
}

fn run_cmd(a: RunArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    if let Some(seed) = a.seed {
        config.master_seed = seed;
    }
    if let Some(lambda) = a.lambda {
        config.lambda = lambda;
    }
    if let Some(c) = a.bonus_c {
        config.c = c;
    }
    if a.no_split {
        config.split_mode = SplitMode::None;
    }
    if a.split {
        config.split_mode = SplitMode::Half;
    }
    if a.no_higher_order {
        config.higher_order = false;
    }
    if let Some(out) = a.out {
        config.output = Some(out);
    }
    config.validate()?;
    let Some(out) = config.output.clone() else {
        bail!("no output path: set \"output\" in the config or pass --out");
    };
    let result = run(&config, a.jobs)?;
    result.save(&out).with_context(|| format!("writing {}", out.display()))?;
    println!("{} rows -> {}", result.rows.len(), out.display());
    Ok(())
}

fn summarize_cmd(a: SummarizeArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.csv).with_context(|| format!("reading {}", a.csv.display()))?;
    let rows = parse_results(&text)?;
    let summary = summary_csv(&summarize(&rows));
    match a.out {
        Some(p) => std::fs::write(&p, summary).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{summary}"),
    }
    Ok(())
}

fn oracle(a: OracleArgs) -> Result<()> {
    if let Some(path) = a.instance {
        let mdp = LinearMdp::load(&path).with_context(|| format!("reading {}", path.display()))?;
        println!("{}", fmt_f64(exact_value_iteration(&mdp).v_star));
        return Ok(());
    }
    let path = a.config.expect("clap requires one of the two");
    let config = ExperimentConfig::load(&path)?;
    for &h in &config.h_list {
        let (mdp, _) = config.instance.build(h)?;
        println!("H={h} {}", fmt_f64(exact_value_iteration(&mdp).v_star));
    }
    Ok(())
}
