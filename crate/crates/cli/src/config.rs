//! Run configuration: a TOML document of `key = value` pairs grouped in
//! sections, optionally layered over a named preset.
//!
//! ```toml
//! preset = "desk-gaussian-12x12"   # optional base
//!
//! [grid]
//! x = 12
//! y = 12
//! alpha = 100.0
//! neurons_per_column = 124
//! excitatory_fraction = 0.8
//!
//! [kernel]
//! shape = "gaussian"          # or "exponential"
//! amplitude = 0.05
//! scale = 100.0               # sigma or lambda, µm
//! cutoff = 0.001
//! local_probability = 0.8
//!
//! [run]
//! dt = 0.1
//! duration_ms = 1000.0
//! warmup_ms = 200.0
//! seed = 1
//! workers = [1, 2, 4, 8]
//! ```
//!
//! Sections `[neuron]`, `[external]`, `[delay]`, `[transport]` and
//! `[output]` are optional. Unknown keys are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use colsim_core::connectome::DelayModel;
use colsim_core::distrib::{RunSpec, TransportKind};
use colsim_core::model::{ConnectivityKernel, ExternalDrive, GridSpec, KernelShape, NeuronParams, SfaCoupling};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}:{line}:{column}: syntax error: {message}")]
    Syntax {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{origin}:{line}: unknown key `{key}`")]
    UnknownKey { origin: String, line: usize, key: String },
    #[error("{origin}:{line}: {message}")]
    Semantic {
        origin: String,
        line: usize,
        key: String,
        message: String,
    },
    #[error("unknown preset `{0}` (see `colsim presets`)")]
    UnknownPreset(String),
}

impl ConfigError {
    pub fn kind(&self) -> &'static str {
        match self {
            ConfigError::Syntax { .. } => "syntax",
            ConfigError::UnknownKey { .. } => "unknown_key",
            ConfigError::Semantic { .. } => "semantic",
            ConfigError::UnknownPreset(_) => "unknown_preset",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RasterFormat {
    #[default]
    Text,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub dump_raster: bool,
    pub raster_format: RasterFormat,
    pub dump_connectome: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            dump_raster: false,
            raster_format: RasterFormat::Text,
            dump_connectome: false,
        }
    }
}

/// A fully resolved, validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub grid: GridSpec,
    pub kernel: ConnectivityKernel,
    pub neuron: NeuronParams,
    pub external: ExternalDrive,
    pub delay: DelayModel,
    pub dt: f64,
    pub duration_ms: f64,
    pub warmup_ms: f64,
    pub seed: u64,
    /// One entry for `run`; the sweep list for `sweep`.
    pub workers: Vec<u32>,
    pub timeout_ms: u64,
    pub synapse_budget: Option<u64>,
    pub transport: TransportKind,
    pub output: OutputConfig,
}

impl RunConfig {
    /// SHA-256 over the canonical JSON of every setting that determines the
    /// simulated network and its dynamics, hex encoded. Worker count,
    /// transport, timeouts, budgets and output options are excluded: they
    /// do not change the raster.
    pub fn digest(&self) -> String {
        let mut canon = self.clone();
        canon.preset = None;
        canon.workers = Vec::new();
        canon.transport = TransportKind::Inproc;
        canon.timeout_ms = 0;
        canon.synapse_budget = None;
        canon.output = OutputConfig::default();
        let json = serde_json::to_vec(&canon).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn short_digest(&self) -> String {
        self.digest()[..12].to_string()
    }

    pub fn run_spec(&self, workers: u32) -> RunSpec {
        RunSpec {
            grid: self.grid,
            kernel: self.kernel,
            neuron: self.neuron,
            drive: self.external,
            delays: self.delay,
            dt: self.dt,
            duration_ms: self.duration_ms,
            warmup_ms: self.warmup_ms,
            seed: self.seed,
            workers,
            timeout_ms: self.timeout_ms,
            synapse_budget: self.synapse_budget,
            digest: self.digest(),
        }
    }

    /// The resolved configuration as TOML, with its digest in a comment.
    pub fn to_toml(&self) -> String {
        let raw = RawConfig::from_resolved(self);
        format!(
            "# config_digest = {}\n{}",
            self.digest(),
            toml::to_string_pretty(&raw).expect("config serializes")
        )
    }
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<RawGrid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel: Option<RawKernel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    neuron: Option<RawNeuron>,
    #[serde(skip_serializing_if = "Option::is_none")]
    external: Option<RawExternal>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delay: Option<RawDelay>,
    #[serde(skip_serializing_if = "Option::is_none")]
    run: Option<RawRun>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transport: Option<RawTransport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<RawOutput>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    x: Option<u32>,
    y: Option<u32>,
    alpha: Option<f64>,
    neurons_per_column: Option<u32>,
    excitatory_fraction: Option<f64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKernel {
    shape: Option<KernelShape>,
    amplitude: Option<f64>,
    scale: Option<f64>,
    cutoff: Option<f64>,
    local_probability: Option<f64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNeuron {
    tau_m: Option<f64>,
    v_rest: Option<f64>,
    v_threshold: Option<f64>,
    v_reset: Option<f64>,
    tau_refractory: Option<f64>,
    tau_sfa: Option<f64>,
    sfa_increment: Option<f64>,
    j_exc: Option<f64>,
    j_inh: Option<f64>,
    sfa_coupling: Option<SfaCoupling>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExternal {
    synapses_per_neuron: Option<u32>,
    rate_per_synapse: Option<f64>,
    weight: Option<f64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDelay {
    mode: Option<String>,
    ms: Option<f64>,
    min_ms: Option<f64>,
    speed: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum WorkerList {
    One(u32),
    Many(Vec<u32>),
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    dt: Option<f64>,
    duration_ms: Option<f64>,
    warmup_ms: Option<f64>,
    seed: Option<u64>,
    workers: Option<WorkerList>,
    timeout_ms: Option<u64>,
    /// 0 disables the budget.
    synapse_budget: Option<u64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransport {
    kind: Option<String>,
    hosts: Option<Vec<String>>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    dump_raster: Option<bool>,
    raster_format: Option<RasterFormat>,
    dump_connectome: Option<bool>,
}

impl RawConfig {
    fn from_resolved(c: &RunConfig) -> Self {
        let (mode, ms, min_ms, speed) = match c.delay {
            DelayModel::Constant { ms } => ("constant", Some(ms), None, None),
            DelayModel::Linear { min_ms, speed } => ("linear", None, Some(min_ms), Some(speed)),
        };
        let (kind, hosts) = match &c.transport {
            TransportKind::Inproc => ("inproc", None),
            TransportKind::Tcp { hosts } => ("tcp", Some(hosts.iter().map(|h| h.to_string()).collect())),
        };
        let n = c.neuron;
        RawConfig {
            preset: c.preset.clone(),
            grid: Some(RawGrid {
                x: Some(c.grid.grid_x),
                y: Some(c.grid.grid_y),
                alpha: Some(c.grid.alpha),
                neurons_per_column: Some(c.grid.neurons_per_column),
                excitatory_fraction: Some(c.grid.excitatory_fraction),
            }),
            kernel: Some(RawKernel {
                shape: Some(c.kernel.shape),
                amplitude: Some(c.kernel.amplitude),
                scale: Some(c.kernel.scale),
                cutoff: Some(c.kernel.cutoff),
                local_probability: Some(c.kernel.local_probability),
            }),
            neuron: Some(RawNeuron {
                tau_m: Some(n.tau_m),
                v_rest: Some(n.v_rest),
                v_threshold: Some(n.v_threshold),
                v_reset: Some(n.v_reset),
                tau_refractory: Some(n.tau_refractory),
                tau_sfa: Some(n.tau_sfa),
                sfa_increment: Some(n.sfa_increment),
                j_exc: Some(n.j_exc),
                j_inh: Some(n.j_inh),
                sfa_coupling: Some(n.sfa_coupling),
            }),
            external: Some(RawExternal {
                synapses_per_neuron: Some(c.external.synapses_per_neuron),
                rate_per_synapse: Some(c.external.rate_per_synapse),
                weight: Some(c.external.weight),
            }),
            delay: Some(RawDelay {
                mode: Some(mode.into()),
                ms,
                min_ms,
                speed,
            }),
            run: Some(RawRun {
                dt: Some(c.dt),
                duration_ms: Some(c.duration_ms),
                warmup_ms: Some(c.warmup_ms),
                seed: Some(c.seed),
                workers: Some(WorkerList::Many(c.workers.clone())),
                timeout_ms: Some(c.timeout_ms),
                synapse_budget: Some(c.synapse_budget.unwrap_or(0)),
            }),
            transport: Some(RawTransport {
                kind: Some(kind.into()),
                hosts,
            }),
            output: Some(RawOutput {
                dir: Some(c.output.dir.clone()),
                dump_raster: Some(c.output.dump_raster),
                raster_format: Some(c.output.raster_format),
                dump_connectome: Some(c.output.dump_connectome),
            }),
        }
    }
}

/// Partially specified configuration used as the layering base.
#[derive(Debug, Clone)]
struct Base {
    grid: Option<GridSpec>,
    kernel: ConnectivityKernel,
    run: RunDefaults,
}

#[derive(Debug, Clone, Copy)]
struct RunDefaults {
    duration_ms: f64,
    workers: &'static [u32],
}

const DEFAULT_RUN: RunDefaults = RunDefaults {
    duration_ms: 1000.0,
    workers: &[1],
};

/// Named configurations. The `paper-*` presets use the published grid
/// sizes and 1240 neurons per column; `desk-*` presets are scaled down and
/// are not the published problem sizes.
pub const PRESETS: &[&str] = &[
    "paper-gaussian-24x24",
    "paper-gaussian-48x48",
    "paper-gaussian-96x96",
    "paper-exponential-24x24",
    "paper-exponential-48x48",
    "paper-exponential-96x96",
    "desk-gaussian-8x8",
    "desk-exponential-8x8",
    "desk-gaussian-12x12",
    "desk-exponential-12x12",
    "desk-gaussian-24x24",
    "desk-exponential-24x24",
];

fn preset(name: &str) -> Option<Base> {
    let mut parts = name.splitn(3, '-');
    let family = parts.next()?;
    let kernel = match parts.next()? {
        "gaussian" => ConnectivityKernel::paper_gaussian(),
        "exponential" => ConnectivityKernel::paper_exponential(),
        _ => return None,
    };
    let size = parts.next()?;
    let (neurons, sizes, run): (u32, &[u32], RunDefaults) = match family {
        "paper" => (1240, &[24, 48, 96], DEFAULT_RUN),
        "desk" => (
            0,
            &[8, 12, 24],
            RunDefaults {
                duration_ms: 500.0,
                workers: &[1, 2, 4, 8],
            },
        ),
        _ => return None,
    };
    let side = sizes.iter().copied().find(|s| size == format!("{s}x{s}"))?;
    let neurons = if neurons > 0 {
        neurons
    } else if side == 8 {
        40
    } else {
        124
    };
    Some(Base {
        grid: Some(GridSpec {
            grid_x: side,
            grid_y: side,
            alpha: 100.0,
            neurons_per_column: neurons,
            excitatory_fraction: 0.8,
        }),
        kernel,
        run,
    })
}

/// Resolve a built-in preset without any overrides.
pub fn preset_config(name: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with_preset("", "<preset>", Some(name))
}

pub fn parse_config(text: &str, origin: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with_preset(text, origin, None)
}

/// Parse `text`, layering it over `preset_override` (or the document's own
/// `preset` key), then validate.
pub fn parse_config_with_preset(
    text: &str,
    origin: &str,
    preset_override: Option<&str>,
) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| syntax_error(text, origin, &e))?;
    let loc = Locator { text, origin };

    let preset_name = preset_override.map(str::to_string).or(raw.preset.clone());
    let base = match &preset_name {
        Some(name) => preset(name).ok_or_else(|| ConfigError::UnknownPreset(name.clone()))?,
        None => Base {
            grid: None,
            kernel: ConnectivityKernel::paper_gaussian(),
            run: DEFAULT_RUN,
        },
    };

    let g = raw.grid.clone().unwrap_or_default();
    let grid = match (base.grid, &raw.grid) {
        (None, None) => return Err(loc.semantic("grid", "", "section [grid] is mandatory (or name a preset)")),
        (base_grid, _) => {
            let need = |v: Option<u32>, key: &str| {
                v.ok_or_else(|| loc.semantic("grid", key, &format!("grid.{key} is required")))
            };
            let b = base_grid;
            GridSpec {
                grid_x: need(g.x.or(b.map(|b| b.grid_x)), "x")?,
                grid_y: need(g.y.or(b.map(|b| b.grid_y)), "y")?,
                alpha: g.alpha.or(b.map(|b| b.alpha)).unwrap_or(100.0),
                neurons_per_column: need(g.neurons_per_column.or(b.map(|b| b.neurons_per_column)), "neurons_per_column")?,
                excitatory_fraction: g.excitatory_fraction.or(b.map(|b| b.excitatory_fraction)).unwrap_or(0.8),
            }
        }
    };
    check(&loc, "grid", "x", grid.grid_x >= 1, "grid.x >= 1")?;
    check(&loc, "grid", "y", grid.grid_y >= 1, "grid.y >= 1")?;
    check(&loc, "grid", "alpha", grid.alpha > 0.0 && grid.alpha.is_finite(), "grid.alpha > 0")?;
    check(&loc, "grid", "neurons_per_column", grid.neurons_per_column >= 1, "grid.neurons_per_column >= 1")?;
    check(
        &loc,
        "grid",
        "excitatory_fraction",
        (0.0..=1.0).contains(&grid.excitatory_fraction),
        "grid.excitatory_fraction in [0, 1]",
    )?;
    check(
        &loc,
        "grid",
        "neurons_per_column",
        grid.total_neurons() <= u64::from(u32::MAX),
        "total neurons must fit in 32 bits",
    )?;

    let k = raw.kernel.clone().unwrap_or_default();
    let shape = k.shape.unwrap_or(base.kernel.shape);
    // Switching shape without a preset picks up that shape's reference constants.
    let kbase = if shape == base.kernel.shape {
        base.kernel
    } else {
        match shape {
            KernelShape::Gaussian => ConnectivityKernel::paper_gaussian(),
            KernelShape::Exponential => ConnectivityKernel::paper_exponential(),
        }
    };
    let kernel = ConnectivityKernel {
        shape,
        amplitude: k.amplitude.unwrap_or(kbase.amplitude),
        scale: k.scale.unwrap_or(kbase.scale),
        cutoff: k.cutoff.unwrap_or(kbase.cutoff),
        local_probability: k.local_probability.unwrap_or(kbase.local_probability),
    };
    check(
        &loc,
        "kernel",
        "amplitude",
        kernel.amplitude > 0.0 && kernel.amplitude <= 1.0,
        "kernel.amplitude in (0, 1]",
    )?;
    check(&loc, "kernel", "scale", kernel.scale > 0.0 && kernel.scale.is_finite(), "kernel.scale > 0")?;
    check(&loc, "kernel", "cutoff", kernel.cutoff > 0.0, "kernel.cutoff > 0")?;
    check(
        &loc,
        "kernel",
        "cutoff",
        kernel.cutoff <= kernel.amplitude,
        "stencil constraint: kernel.cutoff must not exceed kernel.amplitude",
    )?;
    check(
        &loc,
        "kernel",
        "local_probability",
        (0.0..=1.0).contains(&kernel.local_probability),
        "kernel.local_probability in [0, 1]",
    )?;

    let d = NeuronParams::default();
    let n = raw.neuron.clone().unwrap_or_default();
    let neuron = NeuronParams {
        tau_m: n.tau_m.unwrap_or(d.tau_m),
        v_rest: n.v_rest.unwrap_or(d.v_rest),
        v_threshold: n.v_threshold.unwrap_or(d.v_threshold),
        v_reset: n.v_reset.unwrap_or(d.v_reset),
        tau_refractory: n.tau_refractory.unwrap_or(d.tau_refractory),
        tau_sfa: n.tau_sfa.unwrap_or(d.tau_sfa),
        sfa_increment: n.sfa_increment.unwrap_or(d.sfa_increment),
        j_exc: n.j_exc.unwrap_or(d.j_exc),
        j_inh: n.j_inh.unwrap_or(d.j_inh),
        sfa_coupling: n.sfa_coupling.unwrap_or(d.sfa_coupling),
    };
    check(&loc, "neuron", "tau_m", neuron.tau_m > 0.0, "neuron.tau_m > 0")?;
    check(&loc, "neuron", "tau_sfa", neuron.tau_sfa > 0.0, "neuron.tau_sfa > 0")?;
    check(&loc, "neuron", "tau_refractory", neuron.tau_refractory >= 0.0, "neuron.tau_refractory >= 0")?;
    check(
        &loc,
        "neuron",
        "v_reset",
        neuron.v_reset < neuron.v_threshold,
        "neuron.v_reset < neuron.v_threshold",
    )?;
    check(
        &loc,
        "neuron",
        "v_rest",
        neuron.v_rest < neuron.v_threshold,
        "neuron.v_rest < neuron.v_threshold",
    )?;
    check(&loc, "neuron", "j_exc", neuron.j_exc > 0.0, "neuron.j_exc > 0")?;
    check(&loc, "neuron", "j_inh", neuron.j_inh < 0.0, "neuron.j_inh < 0")?;

    let de = ExternalDrive::default();
    let e = raw.external.clone().unwrap_or_default();
    let external = ExternalDrive {
        synapses_per_neuron: e.synapses_per_neuron.unwrap_or(de.synapses_per_neuron),
        rate_per_synapse: e.rate_per_synapse.unwrap_or(de.rate_per_synapse),
        weight: e.weight.unwrap_or(de.weight),
    };
    check(
        &loc,
        "external",
        "rate_per_synapse",
        external.rate_per_synapse >= 0.0 && external.rate_per_synapse.is_finite(),
        "external.rate_per_synapse >= 0",
    )?;

    let r = raw.run.clone().unwrap_or_default();
    let dt = r.dt.unwrap_or(0.1);
    check(&loc, "run", "dt", dt > 0.0 && dt.is_finite(), "run.dt > 0")?;

    let dl = raw.delay.clone().unwrap_or_default();
    let delay = match dl.mode.as_deref().unwrap_or("constant") {
        "constant" => DelayModel::Constant { ms: dl.ms.unwrap_or(1.0) },
        "linear" => DelayModel::Linear {
            min_ms: dl.min_ms.unwrap_or(1.0),
            speed: dl
                .speed
                .ok_or_else(|| loc.semantic("delay", "mode", "delay.speed is required for linear delays"))?,
        },
        other => {
            return Err(loc.semantic(
                "delay",
                "mode",
                &format!("delay.mode must be `constant` or `linear`, got `{other}`"),
            ))
        }
    };
    if let DelayModel::Linear { speed, .. } = delay {
        check(&loc, "delay", "speed", speed > 0.0 && speed.is_finite(), "delay.speed > 0")?;
    }
    check(
        &loc,
        "delay",
        if matches!(delay, DelayModel::Constant { .. }) { "ms" } else { "min_ms" },
        delay.validate(dt).is_ok(),
        "minimum delay must be at least one timestep",
    )?;

    let duration_ms = r.duration_ms.unwrap_or(base.run.duration_ms);
    check(&loc, "run", "duration_ms", duration_ms >= 0.0 && duration_ms.is_finite(), "run.duration_ms >= 0")?;
    let warmup_ms = r.warmup_ms.unwrap_or(200.0);
    check(&loc, "run", "warmup_ms", warmup_ms >= 0.0 && warmup_ms.is_finite(), "run.warmup_ms >= 0")?;
    let workers = match r.workers {
        Some(WorkerList::One(n)) => vec![n],
        Some(WorkerList::Many(v)) => v,
        None => base.run.workers.to_vec(),
    };
    check(&loc, "run", "workers", !workers.is_empty(), "run.workers must not be empty")?;
    check(
        &loc,
        "run",
        "workers",
        workers.iter().all(|&p| p >= 1 && p <= grid.columns()),
        "every run.workers entry must satisfy 1 <= P <= grid.x * grid.y",
    )?;
    let mut sorted = workers.clone();
    sorted.sort_unstable();
    sorted.dedup();
    check(&loc, "run", "workers", sorted.len() == workers.len(), "run.workers entries must be distinct")?;

    let t = raw.transport.clone().unwrap_or_default();
    let transport = match t.kind.as_deref().unwrap_or("inproc") {
        "inproc" => TransportKind::Inproc,
        "tcp" => {
            let hosts = t
                .hosts
                .unwrap_or_default()
                .iter()
                .map(|h| {
                    h.parse()
                        .map_err(|_| loc.semantic("transport", "hosts", &format!("`{h}` is not host:port")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            TransportKind::Tcp { hosts }
        }
        other => {
            return Err(loc.semantic(
                "transport",
                "kind",
                &format!("transport.kind must be `inproc` or `tcp`, got `{other}`"),
            ))
        }
    };

    let o = raw.output.clone().unwrap_or_default();
    let od = OutputConfig::default();
    let output = OutputConfig {
        dir: o.dir.unwrap_or(od.dir),
        dump_raster: o.dump_raster.unwrap_or(od.dump_raster),
        raster_format: o.raster_format.unwrap_or(od.raster_format),
        dump_connectome: o.dump_connectome.unwrap_or(od.dump_connectome),
    };

    Ok(RunConfig {
        preset: preset_name,
        grid,
        kernel,
        neuron,
        external,
        delay,
        dt,
        duration_ms,
        warmup_ms,
        seed: r.seed.unwrap_or(1),
        workers,
        timeout_ms: r.timeout_ms.unwrap_or(60_000),
        synapse_budget: match r.synapse_budget {
            Some(0) => None,
            Some(b) => Some(b),
            None => Some(200_000_000),
        },
        transport,
        output,
    })
}

fn check(loc: &Locator, section: &str, key: &str, ok: bool, constraint: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(loc.semantic(section, key, &format!("constraint violated: {constraint}")))
    }
}

struct Locator<'a> {
    text: &'a str,
    origin: &'a str,
}

impl Locator<'_> {
    /// 1-based line of `key` inside `[section]`, or of the section header
    /// itself, or 0 when absent (value came from a preset or default).
    fn line_of(&self, section: &str, key: &str) -> usize {
        let mut current = String::new();
        let mut header_line = 0;
        for (i, line) in self.text.lines().enumerate() {
            let l = line.trim();
            if l.starts_with('[') {
                current = l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
                if current == section {
                    header_line = i + 1;
                }
                continue;
            }
            if current == section && !key.is_empty() {
                if let Some((k, _)) = l.split_once('=') {
                    if k.trim() == key {
                        return i + 1;
                    }
                }
            }
        }
        header_line
    }

    fn semantic(&self, section: &str, key: &str, message: &str) -> ConfigError {
        ConfigError::Semantic {
            origin: self.origin.to_string(),
            line: self.line_of(section, key),
            key: if key.is_empty() {
                section.to_string()
            } else {
                format!("{section}.{key}")
            },
            message: message.to_string(),
        }
    }
}

fn syntax_error(text: &str, origin: &str, e: &toml::de::Error) -> ConfigError {
    let (line, column) = e
        .span()
        .map(|span| {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
            (line, column)
        })
        .unwrap_or((0, 0));
    let message = e.message().to_string();
    if let Some(rest) = message.strip_prefix("unknown field `") {
        let key = rest.split('`').next().unwrap_or_default().to_string();
        return ConfigError::UnknownKey {
            origin: origin.to_string(),
            line,
            key,
        };
    }
    ConfigError::Syntax {
        origin: origin.to_string(),
        line,
        column,
        message,
    }
}
