use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lesson_loop_cli::{cmd_ablate, cmd_replay, cmd_report, cmd_run, Overrides, ReportFormat, RunOutcome, RunRequest};
use lesson_loop_core::{Ablation, TaskKind};

/// Exit status for a replay whose transcript differs from the recorded one.
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "lesson-loop", version, about = "Lesson-based multi-agent code optimization runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every problem of a problem set.
    Run(RunArgs),
    /// Run once per ablation variant.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated variants; all of them by default.
        #[arg(long, value_delimiter = ',', value_parser = parse_ablation)]
        variants: Vec<Ablation>,
    },
    /// Re-execute a run from its captured fixtures and compare transcripts.
    Replay { run_dir: PathBuf },
    /// Print the summary of a run.
    Report {
        run_dir: PathBuf,
        /// json or csv.
        #[arg(long, default_value = "json")]
        format: ReportFormat,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Problem-set directory.
    #[arg(long)]
    problems: PathBuf,
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root; defaults to $LESSONL_RUN_ROOT, then ./runs.
    #[arg(long)]
    output_root: Option<PathBuf>,
    /// Improvement rounds after the initial one [default: 4].
    #[arg(long)]
    rounds: Option<usize>,
    /// Lessons per round [default: 4].
    #[arg(long)]
    k: Option<usize>,
    /// Minimum score x factor for the speedup half [default: 1.1, or 0.5 in generate mode].
    #[arg(long)]
    threshold: Option<f64>,
    /// Factor adjustment step [default: 0.1].
    #[arg(long)]
    epsilon: Option<f64>,
    /// optimize or generate [default: optimize].
    #[arg(long, value_parser = parse_mode)]
    mode: Option<TaskKind>,
    /// full, speedup_only, relevance_only, no_adjustment, random_k or no_lessons [default: full].
    #[arg(long, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    /// Run seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Ask for parallel code and compile with the parallel flags.
    #[arg(long)]
    parallel: bool,
    /// Repeat the whole run with derived seeds and report mean and std [default: 1].
    #[arg(long)]
    repeats: Option<usize>,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    Ablation::parse(s).ok_or_else(|| {
        let names: Vec<_> = Ablation::ALL.iter().map(|a| a.as_str()).collect();
        format!("unknown ablation '{s}' (expected one of {})", names.join(", "))
    })
}

fn parse_mode(s: &str) -> Result<TaskKind, String> {
    match s {
        "optimize" => Ok(TaskKind::Optimize),
        "generate" => Ok(TaskKind::Generate),
        _ => Err(format!("unknown mode '{s}' (expected optimize or generate)")),
    }
}

impl RunArgs {
    fn request(self) -> RunRequest {
        RunRequest {
            problems: self.problems,
            config: self.config,
            output_root: self.output_root,
            overrides: Overrides {
                rounds: self.rounds,
                k: self.k,
                threshold: self.threshold,
                epsilon: self.epsilon,
                mode: self.mode,
                ablation: self.ablation,
                seed: self.seed,
                parallel: self.parallel.then_some(true),
                repeats: self.repeats,
            },
        }
    }
}

fn print_outcome(label: &str, o: &RunOutcome) {
    println!("{label}{}", o.run_dir.display());
    if let Some(r) = &o.report {
        let s = &r.summary;
        println!(
            "  correct {:.3}  >2x {:.3}  geomean speedup {:.3}",
            s.correct_fraction, s.gt2x_fraction, s.geomean_speedup
        );
        if let Some(stats) = &r.repeat_stats {
            println!(
                "  over {} repeats: geomean {:.3} ± {:.3}",
                stats.repeats, stats.geomean_speedup.mean, stats.geomean_speedup.std
            );
        }
    }
    for f in &o.failures {
        eprintln!("failed: {f}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args.request()).map(|o| {
            print_outcome("", &o);
            if o.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE }
        }),
        Command::Ablate { run, variants } => {
            let variants = if variants.is_empty() { Ablation::ALL.to_vec() } else { variants };
            cmd_ablate(&run.request(), &variants).map(|outcomes| {
                let mut ok = true;
                for (v, o) in &outcomes {
                    print_outcome(&format!("{v}: "), o);
                    ok &= o.failures.is_empty();
                }
                if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE }
            })
        }
        Command::Replay { run_dir } => cmd_replay(&run_dir).map(|divergences| {
            if divergences.is_empty() {
                println!("replay matches {}", run_dir.display());
                ExitCode::SUCCESS
            } else {
                for d in &divergences {
                    eprintln!("{d}");
                }
                ExitCode::from(EXIT_DIVERGED)
            }
        }),
        Command::Report { run_dir, format } => cmd_report(&run_dir, format).map(|text| {
            print!("{text}");
            ExitCode::SUCCESS
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
