use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use metahrl::error::Error;
use metahrl::harness::config::{RunConfig, Scenario};
use metahrl::harness::runs;
use metahrl::hpo::{SearchSpace, TuneSettings};

#[derive(Parser)]
#[command(name = "metahrl", version, about = "Hierarchical meta-RL on trap gridworlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train on the 6x6 three-trap level.
    TrainFixed {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Meta-train along the curriculum ladder.
    TrainGradual {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Full agent against the no-meta and no-intrinsic variants.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Random search with median pruning over the meta-training rates.
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Meta-iterations per trial.
        #[arg(long, default_value_t = 100)]
        trial_iterations: usize,
        #[arg(long)]
        no_pruning: bool,
    },
    /// Score a checkpoint on held-out tasks.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Redraw charts from a metrics file.
    Plot {
        metrics: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory. Defaults to `$METAHRL_OUT/<scenario>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_meta: bool,
    #[arg(long)]
    no_intrinsic: bool,
    #[arg(long)]
    no_curriculum: bool,
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    /// File values first, then flags. `scenario` replaces the file's
    /// scenario unless the file asks for a custom one.
    fn load(&self, scenario: Option<Scenario>) -> Result<RunConfig, Error> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::preset(scenario.unwrap_or_default()),
        };
        if let Some(s) = scenario {
            if c.scenario != Scenario::Custom {
                c.scenario = s;
            }
        }
        if self.seed.is_some() {
            c.seed = self.seed;
        }
        if self.out.is_some() {
            c.out_dir = self.out.clone();
        }
        if self.workers.is_some() {
            c.workers = self.workers;
        }
        if self.no_meta {
            c.meta_enabled = Some(false);
        }
        if self.no_intrinsic {
            c.intrinsic_enabled = Some(false);
        }
        if self.no_curriculum {
            c.curriculum_enabled = Some(false);
        }
        Ok(c)
    }
}

fn subdir(c: &mut RunConfig, explicit: bool, name: &str) {
    if !explicit {
        let base = c.resolved().out_dir.unwrap();
        c.out_dir = Some(base.join(name));
    }
}

fn train(common: &Common, scenario: Scenario, resume: Option<&Path>) -> Result<(), Error> {
    let config = common.load(Some(scenario))?;
    let out = runs::run_training(&config, resume)?;
    let last = out.report.metrics.last();
    println!(
        "{} iterations -> {}",
        out.report.metrics.len(),
        out.dir.display()
    );
    if let Some(r) = last {
        println!(
            "final: level {} success {:.3} reward {:.3} meta-loss {:.4}",
            r.level, r.success_rate, r.avg_reward, r.meta_loss
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::TrainFixed { common, resume } => train(&common, Scenario::Fixed, resume.as_deref()),
        Command::TrainGradual { common, resume } => train(&common, Scenario::Gradual, resume.as_deref()),
        Command::Ablate { common } => {
            let mut config = common.load(None)?;
            subdir(&mut config, common.out.is_some(), "ablation");
            let out = runs::run_ablation_suite(&config)?;
            for (name, run) in &out.runs {
                let tail = &run.report.metrics[run.report.metrics.len().saturating_sub(50)..];
                let mean = tail.iter().map(|r| r.success_rate).sum::<f64>() / tail.len().max(1) as f64;
                println!("{name:>12}: final-50 success {mean:.3}");
            }
            println!("report -> {}", out.dir.join("comparison.csv").display());
            Ok(())
        }
        Command::Tune {
            common,
            trials,
            trial_iterations,
            no_pruning,
        } => {
            let mut config = common.load(None)?;
            config.meta_iterations = Some(trial_iterations);
            config.plots = Some(false);
            subdir(&mut config, common.out.is_some(), "tune");
            let settings = TuneSettings {
                n_trials: trials,
                seed: config.resolved().seed.unwrap(),
                pruning: !no_pruning,
                ..TuneSettings::default()
            };
            let (dir, study) = runs::run_tune(&config, &settings, &SearchSpace::default())?;
            let best = &study.trials[study.best];
            println!(
                "best trial {} objective {:?}; study -> {}",
                best.id,
                best.objective,
                dir.join("study.tsv").display()
            );
            Ok(())
        }
        Command::Eval { common, checkpoint } => {
            let config = common.load(None)?;
            let e = runs::run_eval(&config, &checkpoint)?;
            println!(
                "episodes {} success {:.3} mean return {:.3}",
                e.episodes, e.success_rate, e.mean_ext_return
            );
            Ok(())
        }
        Command::Plot { metrics, out } => {
            for p in runs::run_plot(&metrics, out.as_deref())? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::Parse { .. } | Error::OutOfRange(_) => 2,
        Error::Io { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
