use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use wavekernel::harness::{execute, exit_code, write_outputs, Command, RunConfig};
use wavekernel::Result;

/// Matrix-free DG acoustics: convergence, throughput, operation counts and
/// critical Courant numbers.
#[derive(Debug, Parser)]
#[command(name = "wavekernel", version)]
struct Cli {
    /// convergence | throughput | opcount | courant | run
    command: String,
    /// key = value file; flags given here override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    degree: Option<String>,
    /// elements per direction (coarsest mesh for convergence)
    #[arg(long)]
    elements: Option<String>,
    /// comma-separated: rk4, lsrk45, lsrk59, ader, ader-hdg
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    courant: Option<String>,
    #[arg(long)]
    end_time: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    /// vertex displacement amplitude
    #[arg(long)]
    deform: Option<String>,
    /// soft | periodic
    #[arg(long)]
    boundary: Option<String>,
    /// none | every | second | third
    #[arg(long)]
    reduction: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    /// number of meshes in a convergence study
    #[arg(long)]
    levels: Option<String>,
    /// measured steps (throughput) or steps per stability trial (courant)
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    warmup: Option<String>,
    #[arg(long)]
    repeats: Option<String>,
    /// CSV destination, stdout if absent
    #[arg(long)]
    output: Option<String>,
    /// JSON mirror of the CSV records
    #[arg(long)]
    json: Option<String>,
}

impl Cli {
    fn overrides(&self) -> Vec<(&'static str, &String)> {
        let all = [
            ("dim", &self.dim),
            ("degree", &self.degree),
            ("elements", &self.elements),
            ("scheme", &self.scheme),
            ("courant", &self.courant),
            ("end-time", &self.end_time),
            ("mode", &self.mode),
            ("deform", &self.deform),
            ("boundary", &self.boundary),
            ("reduction", &self.reduction),
            ("tau", &self.tau),
            ("threads", &self.threads),
            ("levels", &self.levels),
            ("steps", &self.steps),
            ("warmup", &self.warmup),
            ("repeats", &self.repeats),
            ("output", &self.output),
            ("json", &self.json),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
            .collect()
    }
}

fn configure(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::new(cli.command.parse::<Command>()?);
    if let Some(p) = &cli.config {
        cfg.apply_file(p)?;
        cfg.command = cli.command.parse()?;
    }
    for (k, v) in cli.overrides() {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure(&cli).and_then(|cfg| {
        let report = execute(&cfg)?;
        eprint!("{}", report.summary);
        write_outputs(&cfg, &report, std::io::stdout().lock())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
