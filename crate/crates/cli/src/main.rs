//! `fastrate`: command-line front end of the rate laboratory.
//!
//! Exit codes: 0 on PASS (or plain success), 2 on FAIL, 3 on VACUOUS and 1
//! on any error.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fastrate_core::bernstein::{run_check, write_probes_csv, CheckConfig};
use fastrate_core::bounds::eval::eval_json;
use fastrate_core::experiments::{
    compare_theory, emit_all, read_raw_table, run, ExperimentConfig, RateCurve, TheorySource, Verdict,
    DEFAULT_FIT_WINDOW,
};
use fastrate_core::nets::{build_net, default_lipschitz, entropy_check};
use fastrate_core::{sample, DistributionSpec};

#[derive(Parser)]
#[command(name = "fastrate", version, about = "Fast-rate laboratory for heavy-tailed k-means ERM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rate experiments.
    #[command(subcommand)]
    Rates(RatesCommand),
    /// Closed-form bound evaluators.
    #[command(subcommand)]
    Bounds(BoundsCommand),
    /// Bernstein-condition probes and fits.
    #[command(subcommand)]
    Bernstein(BernsteinCommand),
    /// Grid ε-nets over codebooks.
    #[command(subcommand)]
    Net(NetCommand),
}

#[derive(Subcommand)]
enum RatesCommand {
    /// Run all trials of a config, then aggregate, fit and compare.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        /// Overrides the config's output directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Re-aggregate and fit a raw trial table.
    Fit(FitArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FIT_WINDOW)]
    window: usize,
    /// Moment order, k and d for a theory comparison; all three or none.
    #[arg(long, requires_all = ["k", "d"])]
    r: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    /// Directory for rates.{csv,json,svg}.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BoundsCommand {
    /// Evaluate one JSON request, read from a file or stdin.
    Eval {
        #[arg(short, long)]
        input: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BernsteinCommand {
    /// Probe, fit and write `fit.json` and `probes.csv`.
    Check {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long, default_value = ".")]
        output: PathBuf,
    },
}

#[derive(Subcommand)]
enum NetCommand {
    /// Build a grid net and report its size and entropy check.
    Build(NetArgs),
}

#[derive(Args)]
struct NetArgs {
    #[arg(long)]
    rho: f64,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    epsilon: f64,
    /// Lipschitz constant; estimated from `--spec` when absent.
    #[arg(long)]
    lipschitz: Option<f64>,
    /// JSON law used to estimate the Lipschitz constant.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    sample_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    c_entropy: Option<f64>,
    #[arg(long)]
    k_entropy: Option<f64>,
    /// Writes the members as a point file.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn rates_run(config: &Path, threads: Option<usize>, output: Option<PathBuf>) -> Result<Verdict> {
    let mut cfg = ExperimentConfig::load(config)?;
    let dir = output
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(config.file_stem().unwrap_or_default()));
    cfg.output_dir = Some(dir.clone());
    let out = run(&cfg, threads)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    let failed = out.table.iter().filter(|r| r.excess.is_none()).count();
    if failed > 0 {
        eprintln!("warning: {failed} trials failed and were excluded");
    }
    for path in emit_all(&out.curve, &dir)? {
        eprintln!("wrote {}", path.display());
    }
    let theory = out.curve.theory.clone().expect("run compares against theory");
    print_json(&theory)?;
    Ok(theory.verdict)
}

fn rates_fit(args: FitArgs) -> Result<Option<Verdict>> {
    let table = read_raw_table(&args.input)?;
    if table.is_empty() {
        bail!("{} has no trials", args.input.display());
    }
    let mut curve = RateCurve::from_table(&table, args.window);
    if let (Some(r), Some(k), Some(d)) = (args.r, args.k, args.d) {
        curve.theory = Some(compare_theory(&curve, &TheorySource::KMeans { r, k, d }));
    }
    if let Some(dir) = &args.output {
        emit_all(&curve, dir)?;
    }
    print_json(&curve)?;
    Ok(curve.theory.map(|t| t.verdict))
}

fn bounds_eval(input: Option<PathBuf>) -> Result<()> {
    let text = match input {
        Some(path) => read_text(&path)?,
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    print_json(&eval_json(&text)?)
}

fn bernstein_check(config: &Path, output: &Path) -> Result<bool> {
    let cfg: CheckConfig = serde_json::from_str(&read_text(config)?)
        .with_context(|| format!("parsing {}", config.display()))?;
    let (fit, probes) = run_check(&cfg)?;
    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    let fit_path = output.join("fit.json");
    fs::write(&fit_path, serde_json::to_string_pretty(&fit)?)
        .with_context(|| format!("writing {}", fit_path.display()))?;
    write_probes_csv(&output.join("probes.csv"), &probes)?;
    print_json(&fit)?;
    Ok(fit.pieces.iter().all(|p| p.satisfied))
}

fn net_build(args: NetArgs) -> Result<()> {
    let lipschitz = match (args.lipschitz, &args.spec) {
        (Some(l), _) => l,
        (None, Some(path)) => {
            let spec: DistributionSpec = serde_json::from_str(&read_text(path)?)
                .with_context(|| format!("parsing {}", path.display()))?;
            let s = sample(&spec, args.sample_size, args.seed)?;
            default_lipschitz(&s, args.k, args.rho, args.seed)?
        }
        (None, None) => bail!("either --lipschitz or --spec is required"),
    };
    let net = build_net(args.rho, args.d, args.k, args.epsilon, lipschitz)?;
    let entropy = match (args.c_entropy, args.k_entropy) {
        (Some(c), Some(k)) => Some(entropy_check(&net, c, k)?),
        (None, None) => None,
        _ => bail!("--c-entropy and --k-entropy go together"),
    };
    if let Some(path) = &args.output {
        net.write(path)?;
    }
    print_json(&serde_json::json!({ "net": net, "entropy": entropy }))
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let verdict_code = |v: Verdict| ExitCode::from(v.exit_code() as u8);
    Ok(match cli.command {
        Command::Rates(RatesCommand::Run {
            config,
            threads,
            output,
        }) => verdict_code(rates_run(&config, threads, output)?),
        Command::Rates(RatesCommand::Fit(args)) => rates_fit(args)?.map_or(ExitCode::SUCCESS, verdict_code),
        Command::Bounds(BoundsCommand::Eval { input }) => {
            bounds_eval(input)?;
            ExitCode::SUCCESS
        }
        Command::Bernstein(BernsteinCommand::Check { config, output }) => {
            if bernstein_check(&config, &output)? {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Command::Net(NetCommand::Build(args)) => {
            net_build(args)?;
            ExitCode::SUCCESS
        }
    })
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
