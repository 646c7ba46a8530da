use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shapool::attack::AttackMode;
use shapool_cli::config::{AttackMethod, ExperimentConfig, ShadowSource};
use shapool_cli::error::{CliError, CliResult};
use shapool_cli::gradcheck::{gradient_suite, FD_STEP};
use shapool_cli::pipeline::{run_all, write_summary, Outcome, Workspace};

#[derive(Parser)]
#[command(name = "shapool", version, about = "Shadow-pool privacy auditing pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides `output_dir`.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long, value_parser = parse_source)]
    source: Option<ShadowSource>,
    #[arg(long, value_parser = parse_method)]
    method: Option<AttackMethod>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<AttackMode>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or load the dataset and fix the id layout.
    GenData(Common),
    /// Train the model under audit.
    TrainTarget(Common),
    /// Train independent shadow models.
    TrainShadows(Common),
    /// Make masked copies of the shadow models.
    Augment(Common),
    /// Train the shadow pools.
    TrainPool(Common),
    /// Fine-tune the served pathways of each pool.
    Align(Common),
    /// Score the audited queries and write results, ROC and scores.
    Attack {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Member-logit overlap with the target and ensemble diversity.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_source)]
        source: Option<ShadowSource>,
    },
    /// Summarize attack results into BASE / SHAPOOL / delta rows.
    Report {
        #[command(flatten)]
        common: Common,
        /// Further run directories to average with this one.
        #[arg(long)]
        runs: Vec<PathBuf>,
    },
    /// Finite-difference check of the training gradients on toy pools.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        pools: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Central-difference step.
        #[arg(long, default_value_t = FD_STEP)]
        step: f64,
        /// Also write every case to this JSON file.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Every stage in order.
    Run {
        #[command(flatten)]
        common: Common,
        /// Run seeds 0 to 4 in `seed_<k>` subdirectories and average them.
        #[arg(long)]
        five_seeds: bool,
    },
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|_| format!("unknown value `{s}`"))
}

fn parse_source(s: &str) -> Result<ShadowSource, String> {
    parse_enum(s)
}

fn parse_method(s: &str) -> Result<AttackMethod, String> {
    parse_enum(s)
}

fn parse_mode(s: &str) -> Result<AttackMode, String> {
    parse_enum(s)
}

fn load(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(out) = &common.output {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn announce(stage: &str, outcome: Outcome) {
    match outcome {
        Outcome::Ran => eprintln!("{stage}: done"),
        Outcome::UpToDate => eprintln!("{stage}: up to date"),
    }
}

fn stage(common: &Common, name: &str, f: fn(&Workspace) -> CliResult<Outcome>) -> CliResult<()> {
    let ws = Workspace::new(load(common)?);
    announce(name, f(&ws)?);
    Ok(())
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::GenData(c) => stage(&c, "gen-data", Workspace::gen_data),
        Command::TrainTarget(c) => stage(&c, "train-target", Workspace::train_target),
        Command::TrainShadows(c) => stage(&c, "train-shadows", Workspace::train_shadows),
        Command::Augment(c) => stage(&c, "augment", Workspace::augment),
        Command::TrainPool(c) => stage(&c, "train-pool", Workspace::train_pool),
        Command::Align(c) => stage(&c, "align", Workspace::align),
        Command::Attack { common, attack } => {
            let mut cfg = load(&common)?;
            cfg.attack.source = attack.source.unwrap_or(cfg.attack.source);
            cfg.attack.method = attack.method.unwrap_or(cfg.attack.method);
            cfg.attack.mode = attack.mode.unwrap_or(cfg.attack.mode);
            let ws = Workspace::new(cfg);
            announce("attack", ws.attack()?);
            let results = ws.attack_dir(ws.cfg.attack.source).join("results.json");
            let text = std::fs::read_to_string(&results).map_err(|e| CliError::Io {
                path: results,
                source: e,
            })?;
            print!("{text}");
            Ok(())
        }
        Command::Diagnose { common, source } => {
            let mut cfg = load(&common)?;
            cfg.attack.source = source.unwrap_or(cfg.attack.source);
            announce("diagnose", Workspace::new(cfg).diagnose()?);
            Ok(())
        }
        Command::Report { common, runs } => {
            let ws = Workspace::new(load(&common)?);
            let mut all = vec![Workspace::new(ws.cfg.clone())];
            for dir in runs {
                all.push(Workspace::new(ws.cfg.with_seed(ws.cfg.seed, dir)));
            }
            print!("{}", write_summary(&all, &ws.root)?.to_table());
            Ok(())
        }
        Command::Gradcheck {
            pools,
            tolerance,
            step,
            json,
        } => {
            let cases = gradient_suite(pools, step, tolerance)?;
            if let Some(path) = json {
                let bytes = serde_json::to_vec_pretty(&cases).expect("cases serialize");
                std::fs::write(&path, bytes).map_err(|e| CliError::Io { path, source: e })?;
            }
            let worst = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
            println!("{} checks on {pools} pools, max relative error {worst:.3e}", cases.len());
            if worst < tolerance {
                Ok(())
            } else {
                Err(shapool::Error::Numeric(format!("gradient error {worst:.3e} exceeds {tolerance:.1e}")).into())
            }
        }
        Command::Run { common, five_seeds } => {
            let cfg = load(&common)?;
            if five_seeds {
                let runs: Vec<Workspace> = (0..5)
                    .map(|s| Workspace::new(cfg.with_seed(s, cfg.output_dir.join(format!("seed_{s}")))))
                    .collect();
                for ws in &runs {
                    eprintln!("seed {}", ws.cfg.seed);
                    run_all(ws)?;
                }
                print!("{}", write_summary(&runs, &cfg.output_dir)?.to_table());
            } else {
                print!("{}", run_all(&Workspace::new(cfg))?.to_table());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
