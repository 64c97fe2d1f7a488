use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use colsim::commands::{problem_size, Artifacts};
use colsim::{cmd_run, cmd_stats, cmd_sweep, load_config, CliError, Overrides, PRESETS};

/// Print a line, ignoring a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "colsim", version, about = "Cortical column grid simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One distributed run at a single worker count
    Run(Common),
    /// Strong-scaling sweep over a list of worker counts
    Sweep(Common),
    /// Connectome size and statistics, no dynamics
    Stats(Common),
    /// List built-in presets
    Presets,
}

#[derive(Args)]
struct Common {
    /// Configuration file (TOML); optional when --preset is given
    config: Option<PathBuf>,
    /// Worker count, or a comma-separated list for sweeps
    #[arg(long, value_delimiter = ',')]
    workers: Option<Vec<u32>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dump_raster: bool,
    #[arg(long)]
    dump_connectome: bool,
    /// inproc or tcp
    #[arg(long)]
    transport: Option<String>,
    /// Base preset; overrides the file's own `preset` key
    #[arg(long)]
    preset: Option<String>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset.clone(),
            workers: self.workers.clone(),
            seed: self.seed,
            out: self.out.clone(),
            dump_raster: self.dump_raster,
            dump_connectome: self.dump_connectome,
            transport: self.transport.clone(),
        }
    }
}

fn list(artifacts: &Artifacts) {
    for f in &artifacts.files {
        say!("wrote {}", f.display());
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.3e}"))
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Presets => {
            for p in PRESETS {
                say!("{p}");
            }
        }
        Command::Run(c) => {
            let config = load_config(c.config.as_deref(), &c.overrides())?;
            let (report, artifacts) = cmd_run(&config)?;
            say!(
                "{} {:?} P={} synapses={} rate={:.2} Hz wall/sim-s={} cost/event={}",
                report.grid_label(),
                report.kernel,
                report.workers,
                report.recurrent_synapses,
                report.mean_rate_hz,
                fmt_opt(report.wall_per_sim_second()),
                fmt_opt(report.cost_per_event()),
            );
            list(&artifacts);
        }
        Command::Sweep(c) => {
            let config = load_config(c.config.as_deref(), &c.overrides())?;
            let (report, artifacts) = cmd_sweep(&config)?;
            say!("workers,time,speedup,efficiency");
            for r in &report.scaling.rows {
                say!("{},{:.4e},{:.3},{:.3}", r.workers, r.time, r.speedup, r.efficiency);
            }
            list(&artifacts);
        }
        Command::Stats(c) => {
            let config = load_config(c.config.as_deref(), &c.overrides())?;
            let size = problem_size(&config)?;
            say!(
                "columns={} neurons={} ({}) stencil={}x{} expected_synapses={:.4e} ({})",
                size.columns,
                size.neurons,
                size.neurons_label,
                size.stencil_side,
                size.stencil_side,
                size.expected_recurrent_synapses,
                size.expected_synapses_label,
            );
            let (report, artifacts) = cmd_stats(&config)?;
            match (&report.sampled, &report.sampling_skipped) {
                (Some(s), _) => say!(
                    "sampled synapses={} mean_out_degree={:.2} local_fraction={:.4}",
                    s.total_synapses, s.mean_out_degree, s.local_fraction
                ),
                (None, Some(why)) => say!("sampling skipped: {why}"),
                (None, None) => {}
            }
            list(&artifacts);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.error_line());
            ExitCode::FAILURE
        }
    }
}
