use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use colsim_core::bench::{self, RunRow, ScalingTable, SimReport};
use colsim_core::connectome::{self, ConnectomeStats, TargetFilter, Wiring};
use colsim_core::distrib::{run_distributed, RunOutcome, TransportKind};
use colsim_core::engine::{self, Spike};
use colsim_core::model::{expected_out_degree, ColumnGrid, ExpectedDegree, KernelShape, Stencil};

use crate::config::{parse_config_with_preset, preset_config, ConfigError, RasterFormat, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] colsim_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(e) => e.kind(),
            CliError::Core(e) => e.kind(),
            CliError::Io { .. } => "io",
            CliError::Usage(_) => "usage",
        }
    }

    /// Single-line JSON object suitable for log scraping.
    pub fn error_line(&self) -> String {
        serde_json::json!({ "status": "error", "kind": self.kind(), "message": self.to_string() }).to_string()
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Command-line settings that override the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub workers: Option<Vec<u32>>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub dump_raster: bool,
    pub dump_connectome: bool,
    pub transport: Option<String>,
}

/// Read and validate a configuration, then apply command-line overrides.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> CliResult<RunConfig> {
    let mut config = match path {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            parse_config_with_preset(&text, &path.display().to_string(), overrides.preset.as_deref())?
        }
        None => match &overrides.preset {
            Some(name) => preset_config(name)?,
            None => return Err(CliError::Usage("a config path or --preset is required".into())),
        },
    };
    if let Some(workers) = &overrides.workers {
        let columns = config.grid.columns();
        if workers.is_empty() || workers.iter().any(|&p| p == 0 || p > columns) {
            return Err(ConfigError::Semantic {
                origin: "--workers".into(),
                line: 0,
                key: "run.workers".into(),
                message: format!("constraint violated: every worker count must satisfy 1 <= P <= {columns}"),
            }
            .into());
        }
        config.workers = workers.clone();
    }
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(out) = &overrides.out {
        config.output.dir = out.clone();
    }
    config.output.dump_raster |= overrides.dump_raster;
    config.output.dump_connectome |= overrides.dump_connectome;
    match overrides.transport.as_deref() {
        None => {}
        Some("inproc") => config.transport = TransportKind::Inproc,
        Some("tcp") => {
            if !matches!(config.transport, TransportKind::Tcp { .. }) {
                config.transport = TransportKind::Tcp { hosts: Vec::new() };
            }
        }
        Some(other) => {
            return Err(CliError::Usage(format!(
                "--transport must be `inproc` or `tcp`, got `{other}`"
            )))
        }
    }
    Ok(config)
}

/// Closed-form size of a configuration; never materializes synapses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSize {
    pub grid_x: u32,
    pub grid_y: u32,
    pub columns: u32,
    pub neurons: u64,
    pub neurons_label: String,
    pub kernel: KernelShape,
    pub stencil_half_width: u32,
    pub stencil_side: u32,
    pub stencil_offsets: usize,
    pub expected_out_degree: ExpectedDegree,
    pub expected_recurrent_synapses: f64,
    pub expected_synapses_label: String,
    pub external_synapses: u64,
}

/// Millions with one decimal, e.g. 714240 -> "0.7M".
pub fn millions_label(n: f64) -> String {
    format!("{:.1}M", n / 1e6)
}

/// Billions with one decimal, e.g. 9.3e8 -> "0.9G".
pub fn billions_label(n: f64) -> String {
    format!("{:.1}G", n / 1e9)
}

pub fn problem_size(config: &RunConfig) -> CliResult<ProblemSize> {
    let grid = ColumnGrid::new(config.grid)?;
    let wiring = Wiring::new(grid, config.kernel, &config.neuron, config.delay, config.dt, config.seed)?;
    let stencil: &Stencil = wiring.stencil();
    let expected = wiring.expected_total();
    let neurons = config.grid.total_neurons();
    Ok(ProblemSize {
        grid_x: config.grid.grid_x,
        grid_y: config.grid.grid_y,
        columns: config.grid.columns(),
        neurons,
        neurons_label: millions_label(neurons as f64),
        kernel: config.kernel.shape,
        stencil_half_width: stencil.half_width,
        stencil_side: stencil.side(),
        stencil_offsets: stencil.offsets.len(),
        expected_out_degree: expected_out_degree(&config.kernel, &config.grid)?,
        expected_recurrent_synapses: expected,
        expected_synapses_label: billions_label(expected),
        external_synapses: neurons * u64::from(config.external.synapses_per_neuron),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub config_digest: String,
    pub problem: ProblemSize,
    /// Present when the connectome fit in the synapse budget.
    pub sampled: Option<ConnectomeStats>,
    /// Why sampling was skipped, when it was.
    pub sampling_skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config_digest: String,
    pub scaling: ScalingTable,
    pub runs: Vec<SimReport>,
}

/// Artifacts written by one command, for the caller to list.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
}

impl Artifacts {
    fn create(&mut self, dir: &Path, name: &str) -> CliResult<(PathBuf, BufWriter<File>)> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(name);
        let file = File::create(&path).map_err(io_err(&path))?;
        self.files.push(path.clone());
        Ok((path, BufWriter::new(file)))
    }

    fn write_with<F>(&mut self, dir: &Path, name: &str, f: F) -> CliResult<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> colsim_core::Result<()>,
    {
        let (path, mut w) = self.create(dir, name)?;
        f(&mut w)?;
        w.flush().map_err(io_err(&path))?;
        Ok(())
    }
}

fn write_config(config: &RunConfig, artifacts: &mut Artifacts) -> CliResult<()> {
    artifacts.write_with(&config.output.dir, "config.toml", |w| {
        w.write_all(config.to_toml().as_bytes())?;
        Ok(())
    })
}

fn write_raster(config: &RunConfig, workers: u32, raster: &[Spike], artifacts: &mut Artifacts) -> CliResult<()> {
    let digest = config.short_digest();
    match config.output.raster_format {
        RasterFormat::Text => artifacts.write_with(&config.output.dir, &format!("raster-{digest}-p{workers}.csv"), |w| {
            writeln!(w, "# config_digest={}", config.digest())?;
            writeln!(w, "step,neuron")?;
            engine::write_raster_text(w, raster)
        }),
        RasterFormat::Binary => {
            artifacts.write_with(&config.output.dir, &format!("raster-{digest}-p{workers}.bin"), |w| {
                engine::write_raster_binary(w, raster)
            })
        }
    }
}

fn write_connectome(config: &RunConfig, artifacts: &mut Artifacts) -> CliResult<()> {
    let grid = ColumnGrid::new(config.grid)?;
    let wiring = Wiring::new(grid.clone(), config.kernel, &config.neuron, config.delay, config.dt, config.seed)?;
    let synapses = connectome::generate_synapses(&wiring, &TargetFilter::All, config.synapse_budget)?;
    artifacts.write_with(
        &config.output.dir,
        &format!("connectome-{}.bin", config.short_digest()),
        |w| connectome::write_dump(w, &grid, &synapses),
    )
}

fn execute(config: &RunConfig, workers: u32) -> CliResult<RunOutcome> {
    Ok(run_distributed(&config.run_spec(workers), &config.transport)?)
}

/// One distributed run at a single worker count.
pub fn cmd_run(config: &RunConfig) -> CliResult<(SimReport, Artifacts)> {
    let [workers] = config.workers[..] else {
        return Err(CliError::Usage(format!(
            "run takes one worker count, got {:?}; use `sweep` for a list",
            config.workers
        )));
    };
    let outcome = execute(config, workers)?;
    let mut artifacts = Artifacts::default();
    let dir = &config.output.dir;
    write_config(config, &mut artifacts)?;
    artifacts.write_with(dir, "report.json", |w| bench::write_json(w, &outcome.report))?;
    artifacts.write_with(dir, "report.csv", |w| {
        bench::write_csv(w, &[RunRow::from_report(&outcome.report, None)])
    })?;
    if config.output.dump_raster {
        write_raster(config, workers, &outcome.raster, &mut artifacts)?;
    }
    if config.output.dump_connectome {
        write_connectome(config, &mut artifacts)?;
    }
    Ok((outcome.report, artifacts))
}

/// Repeat the run over every worker count and tabulate strong scaling.
pub fn cmd_sweep(config: &RunConfig) -> CliResult<(SweepReport, Artifacts)> {
    let mut workers = config.workers.clone();
    workers.sort_unstable();
    let mut artifacts = Artifacts::default();
    let mut runs = Vec::with_capacity(workers.len());
    for &p in &workers {
        let outcome = execute(config, p)?;
        if config.output.dump_raster {
            write_raster(config, p, &outcome.raster, &mut artifacts)?;
        }
        runs.push(outcome.report);
    }
    let points: Vec<(u32, f64)> = runs
        .iter()
        .map(|r| (r.workers, r.wall_per_sim_second().unwrap_or(0.0)))
        .collect();
    let scaling = bench::speedup_efficiency(&points)?;
    let rows: Vec<RunRow> = runs
        .iter()
        .map(|r| RunRow::from_report(r, scaling.row(r.workers)))
        .collect();
    let report = SweepReport {
        config_digest: config.digest(),
        scaling,
        runs,
    };
    let dir = &config.output.dir;
    write_config(config, &mut artifacts)?;
    artifacts.write_with(dir, "scaling.csv", |w| bench::write_csv(w, &rows))?;
    artifacts.write_with(dir, "scaling.json", |w| bench::write_json(w, &report))?;
    if config.output.dump_connectome {
        write_connectome(config, &mut artifacts)?;
    }
    Ok((report, artifacts))
}

/// Connectome inspection only: analytic size always, sampled statistics
/// when the expected synapse count fits the budget.
pub fn cmd_stats(config: &RunConfig) -> CliResult<(StatsReport, Artifacts)> {
    let problem = problem_size(config)?;
    let grid = ColumnGrid::new(config.grid)?;
    let wiring = Wiring::new(grid, config.kernel, &config.neuron, config.delay, config.dt, config.seed)?;
    let (sampled, sampling_skipped) = match connectome::sample_stats(&wiring, config.synapse_budget) {
        Ok(stats) => (Some(stats), None),
        Err(e @ colsim_core::Error::SynapseBudget { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let report = StatsReport {
        config_digest: config.digest(),
        problem,
        sampled,
        sampling_skipped,
    };
    let mut artifacts = Artifacts::default();
    write_config(config, &mut artifacts)?;
    artifacts.write_with(&config.output.dir, "stats.json", |w| bench::write_json(w, &report))?;
    if config.output.dump_connectome {
        write_connectome(config, &mut artifacts)?;
    }
    Ok((report, artifacts))
}
