use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsvm::experiment::{
    exit_code, run_baseline, run_experiment, run_gen_data, run_sweep, spectral_report,
    spectral_report_json, ExperimentConfig,
};

#[derive(Parser)]
#[command(
    name = "dsvm",
    version,
    about = "Distributed SVM training by continuous-time gradient tracking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the networked flow and write every artifact.
    Run(Overrides),
    /// Eigenstructure of the system matrix at t = 0; no simulation.
    SpectralReport(Overrides),
    /// Solve the centralized problem only.
    Baseline(Overrides),
    /// Simulate once per configured alpha, in parallel.
    Sweep(Overrides),
    /// Write the synthetic dataset only.
    GenData(Overrides),
}

#[derive(Args)]
struct Overrides {
    /// TOML configuration; unspecified keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    t_end: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    record_every: Option<usize>,
    /// Write W and A of every switching interval as CSV.
    #[arg(long)]
    dump_graphs: bool,
    /// Abort on any invariant violation instead of warning.
    #[arg(long)]
    strict_invariants: bool,
}

impl Overrides {
    fn resolve(&self) -> dsvm::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.t_end {
            cfg.t_end = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.record_every {
            cfg.record_every = v;
        }
        cfg.dump_graphs |= self.dump_graphs;
        cfg.strict |= self.strict_invariants;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cmd: Command) -> dsvm::Result<()> {
    match cmd {
        Command::Run(o) => {
            let s = run_experiment(&o.resolve()?)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&s).expect("summary serializes")
            );
        }
        Command::SpectralReport(o) => {
            let cfg = o.resolve()?;
            let json = spectral_report_json(&spectral_report(&cfg)?);
            std::fs::create_dir_all(&cfg.out_dir)?;
            std::fs::write(cfg.out_dir.join("spectral_report.json"), &json)?;
            println!("{json}");
        }
        Command::Baseline(o) => println!("{}", run_baseline(&o.resolve()?)?.to_json()),
        Command::Sweep(o) => {
            for s in run_sweep(&o.resolve()?)? {
                println!(
                    "alpha {:>8}  decay slope {:>12.4e}  slowest mode {:>12.4e}  disagreement {:>10.3e}",
                    s.alpha,
                    s.initial_decay_slope,
                    s.slowest_mode_re.unwrap_or(f64::NAN),
                    s.final_monitors.disagreement
                );
            }
        }
        Command::GenData(o) => {
            let cfg = o.resolve()?;
            let d = run_gen_data(&cfg)?;
            println!(
                "wrote {} points to {}",
                d.len(),
                cfg.out_dir.join("dataset.csv").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
