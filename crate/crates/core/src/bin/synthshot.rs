use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use synthshot::demo;
use synthshot::pipeline::{PipelineError, RunConfig, Runner, StageSummary, ABLATIONS, CONFIG_FILE};

#[derive(Parser)]
#[command(name = "synthshot", version, about = "Self-generated in-context examples for text-to-SQL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Every stage in order, resuming from existing artifacts.
    Run {
        #[command(flatten)]
        setup: Setup,
        /// Also write the analysis tables.
        #[arg(long)]
        analyze: bool,
    },
    /// Validate inputs and write config.json and schemas.norm.json.
    Ingest {
        #[command(flatten)]
        setup: Setup,
    },
    /// Schema linking and example generation.
    Generate(RunDir),
    /// Judge scoring, threshold selection and fallback.
    Score(RunDir),
    /// Final SQL per case; also writes pred.sql.
    Infer(RunDir),
    /// Grade predictions (this run's, or an external pred.sql).
    Evaluate {
        #[command(flatten)]
        dir: RunDir,
        #[arg(long)]
        pred: Option<PathBuf>,
    },
    /// Score census, similarity bins, threshold sweep and weight grid.
    Analyze(RunDir),
    /// Render report.txt from 05_eval.json.
    Report(RunDir),
    /// Rerun the pipeline once per ablation under analysis/ablations/.
    Ablate {
        #[command(flatten)]
        dir: RunDir,
        /// Ablations to run (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
    },
    /// Write a small offline fixture (dataset, databases, scripted replies, config).
    Demo { dir: PathBuf },
}

#[derive(Args)]
struct RunDir {
    #[arg(long)]
    run_dir: PathBuf,
}

#[derive(Args)]
struct Setup {
    #[arg(long)]
    run_dir: PathBuf,
    /// RunConfig JSON; defaults to the run directory's config.json.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overwrite a run directory whose config differs.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    n_examples: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_reasoning: bool,
    #[arg(long)]
    no_filtering: bool,
    #[arg(long)]
    no_schema_linking: bool,
    #[arg(long)]
    no_examples: bool,
}

impl Setup {
    fn runner(&self) -> Result<Runner, PipelineError> {
        let path = self.config.clone().unwrap_or_else(|| self.run_dir.join(CONFIG_FILE));
        if !path.exists() {
            return Err(PipelineError::Config(format!("no config at {}; pass --config", path.display())));
        }
        let mut cfg = RunConfig::from_file(&path)?;
        if self.limit.is_some() {
            cfg.limit = self.limit;
        }
        if let Some(t) = self.theta {
            cfg.theta = t;
        }
        if let Some(n) = self.n_examples {
            cfg.n_examples = n;
        }
        if let Some(p) = self.parallelism {
            cfg.parallelism = p;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.ablation.no_reasoning |= self.no_reasoning;
        cfg.ablation.no_filtering |= self.no_filtering;
        cfg.ablation.no_schema_linking |= self.no_schema_linking;
        cfg.ablation.no_examples |= self.no_examples;
        Runner::new(cfg, &self.run_dir)
    }
}

fn print_stages(stages: &[StageSummary]) -> i32 {
    let mut failed = 0;
    for s in stages {
        eprintln!("{:<10} computed {:>4}  reused {:>4}  failed {:>4}", s.stage, s.computed, s.reused, s.failed.len());
        for (id, why) in &s.failed {
            eprintln!("  case {id}: {why}");
        }
        failed += s.failed.len();
    }
    i32::from(failed > 0)
}

fn dispatch(cmd: Command) -> Result<i32, PipelineError> {
    let open = |d: &Path| Runner::open(d);
    Ok(match cmd {
        Command::Run { setup, analyze } => {
            let r = setup.runner()?;
            let summary = r.run(setup.force)?;
            let code = print_stages(&summary.stages);
            if let Some(rep) = &summary.report {
                print!("{}", rep.render_text());
            }
            if analyze {
                r.analyze()?;
            }
            eprintln!("backend calls: {}", r.clients.backend_calls());
            code
        }
        Command::Ingest { setup } => print_stages(&[setup.runner()?.ingest(setup.force)?]),
        Command::Generate(d) => print_stages(&open(&d.run_dir)?.generate()?),
        Command::Score(d) => print_stages(&[open(&d.run_dir)?.score()?]),
        Command::Infer(d) => print_stages(&[open(&d.run_dir)?.infer()?]),
        Command::Evaluate { dir, pred } => {
            let file = open(&dir.run_dir)?.evaluate(pred.as_deref())?;
            print!("{}", file.report.render_text());
            0
        }
        Command::Analyze(d) => {
            let out = open(&d.run_dir)?.analyze()?;
            for row in &out.census.rows {
                println!("rel >= {:<4} retained {:>6}  filtered {:>6.2}%", row.threshold, row.retained, row.filtered_pct);
            }
            if let Some(c) = out.correlation {
                println!("correlation(similarity, EX) = {c:.4}");
            }
            0
        }
        Command::Report(d) => {
            print!("{}", open(&d.run_dir)?.report()?.render_text());
            0
        }
        Command::Ablate { dir, only } => {
            let names: Vec<&str> = if only.is_empty() {
                ABLATIONS.to_vec()
            } else {
                only.iter().map(String::as_str).collect()
            };
            for (name, rep) in open(&dir.run_dir)?.ablation_grid(&names)? {
                let ex = rep.overall().ex.map_or("-".into(), |v| format!("{v:.1}"));
                println!("{name:<18} EX {ex}");
            }
            0
        }
        Command::Demo { dir } => {
            let fx = demo::write_fixture(&dir).map_err(|e| PipelineError::Io {
                path: dir.clone(),
                message: e.to_string(),
            })?;
            let cfg_path = dir.join("config.json");
            let text = serde_json::to_string_pretty(&fx.config()).expect("config serializes") + "\n";
            std::fs::write(&cfg_path, text).map_err(|e| PipelineError::Io {
                path: cfg_path.clone(),
                message: e.to_string(),
            })?;
            println!("wrote fixture to {}", dir.display());
            println!("try: synthshot run --config {} --run-dir runs/demo", cfg_path.display());
            0
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
