//! Batch front end: reads a TOML job file, runs it, writes artifacts.

mod config;
mod jobs;

use std::path::PathBuf;

use clap::Parser;

pub use config::{
    BaseFee, BenchmarkBlock, BenchmarkCase, CalibrationBlock, ContractBlock, FeeBlock, GridBlock, JobConfig, JobKind,
    ModelBlock, OutputsBlock, VixBlock, VixKind,
};
pub use jobs::{run_job, Failure, RunSummary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "vactmc", version, about = "GMMB valuation on two-layer Markov chains")]
pub struct Args {
    /// Job file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the job named in the file.
    #[arg(long, value_enum)]
    pub job: Option<JobKind>,
    /// Overrides the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Reads, overrides and validates the job file.
pub fn load_config(args: &Args) -> Result<JobConfig, Failure> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut value: toml::Table = toml::from_str(&text).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(job) = args.job {
        let name = toml::Value::try_from(job).expect("job kind serializes");
        value.insert("job".into(), name);
    }
    if let Some(out) = &args.out {
        let outputs = value.entry("outputs").or_insert_with(|| toml::Value::Table(Default::default()));
        match outputs {
            toml::Value::Table(t) => {
                t.insert("dir".into(), toml::Value::String(out.to_string_lossy().into_owned()));
            }
            _ => return Err(Failure::Config("`outputs` must be a table".into())),
        }
    }
    let cfg: JobConfig = value.try_into().map_err(|e: toml::de::Error| Failure::Config(e.to_string()))?;
    cfg.validate().map_err(Failure::from)?;
    Ok(cfg)
}

/// Parses arguments, runs the job and returns the process exit code.
pub fn main_exit() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let args = Args::parse();
    if let Some(t) = args.threads {
        if t == 0 {
            eprintln!("error: --threads must be >= 1");
            return EXIT_CONFIG;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    }
    let outcome = load_config(&args).and_then(|cfg| run_job(&cfg));
    match outcome {
        Ok(summary) => {
            for a in &summary.artifacts {
                println!("{}", a.display());
            }
            EXIT_OK
        }
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
