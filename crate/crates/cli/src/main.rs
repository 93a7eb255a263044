use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptive_pt::config::{BuiltTarget, RunConfig};
use adaptive_pt::diagnostics::{mode_occupancy, write_occupancy_csv};
use adaptive_pt::harness::{compare, write_compare_csv, Shift};
use adaptive_pt::output::write_run_outputs;
use adaptive_pt::sampler::run_with_model;
use adaptive_pt::validate::{run_checks, CheckOptions};
use adaptive_pt::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Mahalanobis radius used when counting mode visits.
const OCCUPANCY_RADIUS: f64 = 4.0;

#[derive(Parser, Debug)]
#[command(
    name = "adaptive-pt",
    version,
    about = "Adaptive parallel tempering sampler"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the adaptive sampler and write samples, report and traces.
    Run(RunArgs),
    /// Compare the adaptive sampler with shifted fixed-parameter baselines.
    Compare(CompareArgs),
    /// Run the built-in correctness checks.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Built-in preset: section41 or section42.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Keep every n-th post-burn-in state.
    #[arg(long)]
    thin: Option<u64>,
    /// Fraction of iterations discarded as burn-in.
    #[arg(long)]
    burn_in_frac: Option<f64>,
    /// Directory receiving all outputs.
    #[arg(long, default_value = "adaptive-pt-out")]
    output: PathBuf,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = match (&self.preset, &self.config) {
            (Some(name), None) => RunConfig::preset(name)?,
            (None, Some(path)) => RunConfig::load(path)?,
            _ => return Err(Error::Config("give either --preset or --config".into())),
        };
        if let Some(v) = self.seed {
            config.run.seed = v;
        }
        if let Some(v) = self.iterations {
            config.run.iterations = v;
        }
        if let Some(v) = self.threads {
            config.run.threads = v;
        }
        if let Some(v) = self.thin {
            config.run.thin = v;
        }
        if let Some(v) = self.burn_in_frac {
            config.run.burn_in_frac = v;
        }
        if config.run.threads == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Shift grid, e.g. "zeta:0.5,1,2,3;gamma:0.1,3;L:-2..2". Empty runs the adaptive sampler only.
    #[arg(long, default_value = "")]
    grid: String,
    /// Runs per cell.
    #[arg(long, default_value_t = 5)]
    seeds: usize,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reverse the sign of the temperature update (checks that the suite can fail).
    #[arg(long, hide = true)]
    inject_sign_flip: bool,
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let out = &args.config.output;
    let built = config.target.spec.build()?;
    let report = run_with_model(&config, built.model())?;
    write_run_outputs(out, &report)?;

    if let BuiltTarget::Mixture(target) = &built {
        if !report.samples.is_empty() {
            let occ = mode_occupancy(
                &report.samples,
                target.means(),
                target.variances(),
                OCCUPANCY_RADIUS,
            )?;
            write_occupancy_csv(
                BufWriter::new(File::create(out.join("occupancy.csv"))?),
                &occ,
            )?;
            println!(
                "mode occupancy: {:?}, unassigned {:.4}",
                occ.fractions, occ.unassigned
            );
        }
    }

    let ladder = &report.final_ladder;
    println!(
        "iterations: {}  seed: {}",
        config.run.iterations, config.run.seed
    );
    println!("final ladder length: {}", ladder.len);
    println!("inverse temperatures: {}", format_list(&ladder.t));
    println!(
        "proposal variance sums: {}",
        format_list(&ladder.gamma_sums())
    );
    println!(
        "exchange ratios (post burn-in): {}",
        format_list(&report.exchange_ratios())
    );
    for t in &report.truncations {
        println!(
            "ladder cut from {} to {} at iteration {}",
            t.from, t.to, t.iteration
        );
    }
    println!("samples kept: {}", report.sample_count);
    println!("runtime: {:.2} s", report.elapsed_seconds);
    println!("outputs written to {}", out.display());
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let grid = Shift::parse_grid(&args.grid)?;
    let rows = compare(&config, &grid, args.seeds, config.run.seed)?;
    let out: &Path = &args.config.output;
    fs::create_dir_all(out)?;
    write_compare_csv(
        BufWriter::new(File::create(out.join("compare.csv"))?),
        &rows,
    )?;
    fs::write(
        out.join("compare.json"),
        serde_json::to_string_pretty(&rows)?,
    )?;
    fs::write(out.join("effective_config.toml"), config.to_toml()?)?;

    println!(
        "{:<10} {:>6} {:>12} {:>12} {:>10}",
        "kind", "phi", "mean_rmse", "se_rmse", "mean_er"
    );
    for r in &rows {
        let phi = r.phi.map_or_else(|| "-".to_string(), |p| p.to_string());
        println!(
            "{:<10} {:>6} {:>12.5} {:>12.5} {:>10.4}",
            r.kind, phi, r.mean_rmse, r.se_rmse, r.mean_exchange_ratio
        );
    }
    println!("outputs written to {}", out.display());
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<bool> {
    let results = run_checks(&CheckOptions {
        seed: args.seed,
        inject_sign_flip: args.inject_sign_flip,
    });
    for r in &results {
        println!(
            "{} {}: {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    Ok(results.iter().all(|r| r.passed))
}

fn format_list(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|v| format!("{v:.4}")).collect();
    format!("[{}]", items.join(", "))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|_| true),
        Command::Compare(a) => cmd_compare(a).map(|_| true),
        Command::Validate(a) => cmd_validate(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
