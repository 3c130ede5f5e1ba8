mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Format;

const AFTER_HELP: &str = "\
Exit status: 0 when every asserted check passes, 2 when a check fails,
1 on usage, configuration or numerical errors.

Every report embeds the resolved configuration, its hash and content hashes
of the kernel matrices used. CSV reports start with `#` comment lines holding
the same metadata, followed by these columns:

  kernel     t,x,y,value
  sweep      check_name,t,x,y,value,rhs,ratio
  verify     check_name,t,x,value,reference,metric
  calibrate  check_name,t,x,value,reference,metric
  mc         alpha,delta_or_none,t,x0,y_center,mean,stderr,n_paths,seed
  blowup     length,cutoff_eps,partial_sum,last_ratio

`kernel` also writes each matrix in binary form as kernel_t<t>.hhk.";

#[derive(Debug, Parser)]
#[command(name = "hardyheat", version, about = "Heat kernels of the fractional Laplacian with a critical Hardy potential", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file, or `default` for the shipped configuration.
    #[arg(long, global = true, default_value = "default", value_name = "PATH")]
    config: String,

    /// Override a configuration value; dotted keys address sections (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Worker threads.
    #[arg(long, global = true, env = "HARDYHEAT_THREADS")]
    threads: Option<usize>,

    /// Output directory (overrides output.dir).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Report format (overrides output.format).
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Monte Carlo seed (overrides mc.seed).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Kernel matrices at every time of t_list, with values on x_list × y_list.
    Kernel,
    /// Ratios of the kernel to the two-sided envelope over t_list × x_list × y_list.
    Sweep,
    /// The checks listed in verify.checks.
    Verify,
    /// Monte Carlo estimates of the killed and perturbed kernels at mc.points.
    Mc,
    /// Series growth for a supercritical coupling under cutoff refinement.
    Blowup,
    /// Normalization of the time profile behind the power functions x^{-β}.
    Calibrate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Kernel => "kernel",
            Command::Sweep => "sweep",
            Command::Verify => "verify",
            Command::Mc => "mc",
            Command::Blowup => "blowup",
            Command::Calibrate => "calibrate",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration.
    Usage(String),
    Library(hardyheat::Error),
    Io(std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Library(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<hardyheat::Error> for CliError {
    fn from(e: hardyheat::Error) -> Self {
        CliError::Library(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
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
    match execute(&cli) {
        Ok(outcome) => {
            if let Some(n) = &outcome.notice {
                eprintln!("note: {n}");
            }
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                eprintln!("{}: at least one check failed", cli.command.name());
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: &Cli) -> Result<run::Outcome, CliError> {
    let text = config::load_text(&cli.config)?;
    let mut overrides = cli.set.clone();
    if let Some(dir) = &cli.out {
        overrides.push(format!("output.dir={}", toml_string(&dir.display().to_string())));
    }
    if let Some(f) = cli.format {
        overrides.push(format!("output.format=\"{}\"", if f == Format::Csv { "csv" } else { "json" }));
    }
    if let Some(s) = cli.seed {
        overrides.push(format!("mc.seed={s}"));
    }
    let cfg = config::parse(&text, &overrides)?;
    if let Some(n) = cli.threads {
        hardyheat::configure_threads(n)?;
    }
    run::run(cli.command, &cfg)
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}
