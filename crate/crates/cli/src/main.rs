mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::Failure;

#[derive(Parser)]
#[command(name = "council", version, about = "Deliberative council classification with gated overrides")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset inspection and preparation.
    #[command(subcommand)]
    Data(DataCommand),
    /// Print Phase-1 exemplars for query samples.
    Retrieve(RetrieveArgs),
    /// Run the council over a dataset.
    Classify(ClassifyArgs),
    /// Collapse repeated runs into modal predictions with agreement.
    Aggregate(AggregateArgs),
    /// Build, verify, guard and apply overrides.
    #[command(subcommand)]
    Override(OverrideCommand),
    /// Score predictions against gold labels.
    Evaluate(EvaluateArgs),
    /// Agreement across repeated prediction runs.
    Stability(StabilityArgs),
    /// Majority-class attractor diagnostics from council traces.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum DataCommand {
    /// Class distribution of a dataset.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Grouped k-fold split by dialogue.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Cap large classes and oversample small ones.
    Balance {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 300)]
        cap: usize,
        #[arg(long, default_value_t = 0)]
        floor: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic labeled corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Total samples in training-set proportions; the training counts when absent.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 200)]
        dialogues: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "dlg")]
        prefix: String,
    },
    /// Write the 472-sample override evidence fixture.
    Fixture {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Labeled corpus for the retrieval index (overrides `data.corpus`).
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    input: PathBuf,
    /// Query sample positions; every sample when absent.
    #[arg(long, value_delimiter = ',')]
    samples: Vec<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Rank by relevance only instead of MMR.
    #[arg(long)]
    top_k: bool,
    /// Allow exemplars from the query's own dialogue.
    #[arg(long)]
    no_exclude: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Http,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Write per-sample council traces here.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct AggregateArgs {
    /// Run file with `{"sample_id", "labels"}` lines.
    #[arg(long, conflicts_with = "predictions")]
    runs: Option<PathBuf>,
    /// Prediction files, one per run.
    #[arg(long, num_args = 1..)]
    predictions: Vec<PathBuf>,
    #[arg(long)]
    name: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PolicyArgs {
    /// Guard policy TOML; falls back to `[policy]` of `--config`.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum OverrideCommand {
    /// Evaluate every (sample, target) pair and write proposals.
    Build {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        evidence_dir: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Candidate evaluation log; `<out>.audit.jsonl` when absent.
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Re-verify proposals from independently loaded evidence.
    Verify {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        evidence_dir: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        proposals: PathBuf,
        /// Verified proposals; rejected ones go to `<out>.rejected.jsonl`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Accept or reject the whole verified set.
    Guard {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rewrite base predictions with guarded proposals.
    Apply {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        accepted: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Diff report JSON; `<out>.diff.json` when absent.
        #[arg(long)]
        diff: Option<PathBuf>,
        /// Gold labels for corrected/regressed/lateral counts.
        #[arg(long)]
        gold: Option<PathBuf>,
    },
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    /// Gold labels: a dataset or a prediction file.
    #[arg(long)]
    gold: PathBuf,
    /// Reference predictions for a delta line.
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct StabilityArgs {
    #[arg(long, num_args = 2.., required = true)]
    predictions: Vec<PathBuf>,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// `traces.jsonl` written by `classify --trace-dir`.
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long)]
    json: bool,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Data(cmd) => match cmd {
            DataCommand::Stats { input, json } => commands::data_stats(&input, json),
            DataCommand::Split { input, k, seed, out_dir } => commands::data_split(&input, k, seed, &out_dir),
            DataCommand::Balance {
                input,
                cap,
                floor,
                seed,
                out,
            } => commands::data_balance(&input, cap, floor, seed, &out),
            DataCommand::Synth {
                out,
                n,
                dialogues,
                seed,
                prefix,
            } => commands::data_synth(&out, n, dialogues, seed, prefix),
            DataCommand::Fixture { out_dir, seed } => commands::data_fixture(&out_dir, seed),
        },
        Command::Retrieve(a) => {
            let cfg = commands::load_run_config(a.run.config.as_deref(), a.run.corpus, a.run.seed)?;
            commands::retrieve(
                &cfg,
                &commands::RetrieveOptions {
                    input: a.input,
                    samples: a.samples,
                    k: a.k,
                    lambda: a.lambda,
                    top_k: a.top_k,
                    exclude: !a.no_exclude,
                    out: a.out,
                },
            )
        }
        Command::Classify(a) => {
            let mut cfg = commands::load_run_config(a.run.config.as_deref(), a.run.corpus, a.run.seed)?;
            if let Some(b) = a.backend {
                cfg.backend.kind = match b {
                    BackendArg::Mock => config::BackendKind::Mock,
                    BackendArg::Http => config::BackendKind::Http,
                };
            }
            if let Some(t) = a.trace_dir {
                cfg.output.trace_dir = Some(t);
            }
            if let Some(t) = a.threads {
                cfg.parallelism = t;
            }
            cfg.check_paths().map_err(Failure::config)?;
            commands::classify(&cfg, &a.input, &a.out)
        }
        Command::Aggregate(a) => commands::aggregate(a.runs.as_deref(), &a.predictions, &a.name, &a.out),
        Command::Override(cmd) => match cmd {
            OverrideCommand::Build {
                policy,
                evidence_dir,
                base,
                out,
                audit,
            } => {
                let policy = commands::load_policy(policy.policy.as_deref(), policy.config.as_deref())?;
                commands::override_build(&policy, &evidence_dir, &base, &out, audit)
            }
            OverrideCommand::Verify {
                policy,
                evidence_dir,
                base,
                proposals,
                out,
            } => {
                let policy = commands::load_policy(policy.policy.as_deref(), policy.config.as_deref())?;
                commands::override_verify(&policy, &evidence_dir, &base, &proposals, &out)
            }
            OverrideCommand::Guard {
                policy,
                base,
                proposals,
                out,
            } => {
                let policy = commands::load_policy(policy.policy.as_deref(), policy.config.as_deref())?;
                commands::override_guard(&policy, &base, &proposals, &out)
            }
            OverrideCommand::Apply {
                base,
                accepted,
                out,
                diff,
                gold,
            } => commands::override_apply(&base, &accepted, &out, diff, gold.as_deref()),
        },
        Command::Evaluate(a) => commands::evaluate(&a.pred, &a.gold, a.base.as_deref(), a.json),
        Command::Stability(a) => commands::stability(&a.predictions, &a.gold, a.json),
        Command::Report(a) => commands::report(&a.traces, &a.gold, a.top, a.json),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.code)
        }
    }
}
