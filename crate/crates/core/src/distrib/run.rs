use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::partition::{partition_columns, Partition};
use super::plan::{build_exchange_plan, ExchangePlan};
use super::transport::{Endpoint, RecvError, TransportKind};
use super::wire::SpikeMessage;
use crate::bench::{resident_bytes, SimReport, WorkerTiming};
use crate::connectome::{check_budget, DelayModel, Wiring};
use crate::engine::{Dynamics, MemoryAccount, Spike, Worker, WorkerReport};
use crate::error::{Error, Result};
use crate::model::{ColumnGrid, ConnectivityKernel, ExternalDrive, GridSpec, NeuronParams};

/// Everything a distributed run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub grid: GridSpec,
    pub kernel: ConnectivityKernel,
    pub neuron: NeuronParams,
    pub drive: ExternalDrive,
    pub delays: DelayModel,
    pub dt: f64,
    pub duration_ms: f64,
    /// Simulated time excluded from rate and timing statistics.
    pub warmup_ms: f64,
    pub seed: u64,
    pub workers: u32,
    pub timeout_ms: u64,
    /// Refuse runs whose expected synapse count exceeds this.
    pub synapse_budget: Option<u64>,
    /// Digest of the originating configuration, echoed into the report.
    pub digest: String,
}

impl RunSpec {
    /// Paper constants on a small grid: 0.1 ms steps, 1 ms delays, default
    /// neuron and drive parameters.
    pub fn desk(grid: GridSpec, kernel: ConnectivityKernel, workers: u32) -> Self {
        Self {
            grid,
            kernel,
            neuron: NeuronParams::default(),
            drive: ExternalDrive::default(),
            delays: DelayModel::default(),
            dt: 0.1,
            duration_ms: 500.0,
            warmup_ms: 200.0,
            seed: 1,
            workers,
            timeout_ms: 60_000,
            synapse_budget: Some(200_000_000),
            digest: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.kernel.validate()?;
        self.neuron.validate()?;
        self.drive.validate()?;
        self.delays.validate(self.dt)?;
        if !(self.duration_ms.is_finite() && self.duration_ms >= 0.0) {
            return Err(Error::invalid("run", "duration_ms >= 0"));
        }
        if !(self.warmup_ms.is_finite() && self.warmup_ms >= 0.0) {
            return Err(Error::invalid("run", "warmup_ms >= 0"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        (self.duration_ms / self.dt).round() as u64
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_ms / self.dt).round() as u64
    }

    fn dynamics(&self) -> Dynamics {
        Dynamics {
            neuron: self.neuron,
            drive: self.drive,
            dt: self.dt,
            seed: self.seed,
        }
    }
}

/// Report plus the merged, sorted spike raster.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: SimReport,
    pub raster: Vec<Spike>,
}

/// Partition, plan, connect and run all workers in lockstep windows.
pub fn run_distributed(spec: &RunSpec, transport: &TransportKind) -> Result<RunOutcome> {
    spec.validate()?;
    let grid = ColumnGrid::new(spec.grid)?;
    let wiring = Wiring::new(grid.clone(), spec.kernel, &spec.neuron, spec.delays, spec.dt, spec.seed)?;
    check_budget(wiring.expected_total(), spec.synapse_budget)?;
    let partition = partition_columns(&spec.grid, spec.workers)?;
    let plan = build_exchange_plan(&partition, &grid, wiring.stencil());
    let endpoints = transport.connect(&plan)?;

    let results: Vec<Result<WorkerReport>> = std::thread::scope(|scope| {
        let handles: Vec<_> = endpoints
            .into_iter()
            .enumerate()
            .map(|(w, endpoint)| {
                let (wiring, partition, plan) = (&wiring, &partition, &plan);
                scope.spawn(move || worker_main(w as u32, spec, wiring, partition, plan, endpoint))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });

    let mut reports = Vec::with_capacity(results.len());
    let mut first_err: Option<Error> = None;
    for r in results {
        match r {
            Ok(rep) => reports.push(rep),
            // A peer failure shows up elsewhere as timeouts or hang-ups;
            // prefer the root cause.
            Err(e) => {
                let secondary = matches!(e, Error::PeerTimeout { .. } | Error::Transport { .. });
                if first_err.is_none() || (!secondary && is_secondary(first_err.as_ref())) {
                    first_err = Some(e);
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(merge_reports(spec, &grid, &partition, transport, reports))
}

fn is_secondary(e: Option<&Error>) -> bool {
    matches!(e, Some(Error::PeerTimeout { .. }) | Some(Error::Transport { .. }))
}

fn worker_main(
    id: u32,
    spec: &RunSpec,
    wiring: &Wiring,
    partition: &Partition,
    plan: &ExchangePlan,
    mut endpoint: Box<dyn Endpoint>,
) -> Result<WorkerReport> {
    let mut worker = Worker::build(id, wiring, partition.columns_of(id), &spec.dynamics())?;
    let grid = wiring.grid();
    let npc = u64::from(grid.neurons_per_column());
    let my_plan = plan.worker(id);
    // Per peer, a column mask of what it subscribes to.
    let subscriptions: Vec<(u32, Vec<bool>)> = my_plan
        .send
        .iter()
        .map(|(&peer, cols)| {
            let mut mask = vec![false; grid.num_columns() as usize];
            cols.iter().for_each(|c| mask[c.0 as usize] = true);
            (peer, mask)
        })
        .collect();
    let timeout = Duration::from_millis(spec.timeout_ms);
    let window = u64::from(worker.min_delay());
    let total = spec.total_steps();
    let warmup = spec.warmup_steps();

    let mut raster = Vec::new();
    let (mut wall, mut compute, mut wait) = (0.0, 0.0, 0.0);
    let (mut spikes_sent, mut messages_sent) = (0u64, 0u64);
    let mut peak_buffer = 0u64;
    let mut t = 0u64;
    let mut window_index = 0u64;
    while t < total {
        let n = window.min(total - t);
        let began = Instant::now();
        let emitted = worker.advance(n as u32)?;
        let computed = began.elapsed();

        let exchange = Instant::now();
        let mut buffer_bytes = 0u64;
        for (peer, mask) in &subscriptions {
            let spikes: Vec<Spike> = emitted
                .iter()
                .filter(|s| mask[(s.neuron.0 / npc) as usize])
                .copied()
                .collect();
            spikes_sent += spikes.len() as u64;
            messages_sent += 1;
            let msg = SpikeMessage {
                sender: id,
                window_start: t,
                spikes,
            };
            let frame = msg.encode();
            buffer_bytes += frame.len() as u64;
            endpoint.send(*peer, frame)?;
        }
        let mut batch = emitted.clone();
        for &peer in &my_plan.receive {
            let frame = endpoint.recv(peer, timeout).map_err(|e| match e {
                RecvError::Timeout => Error::PeerTimeout {
                    worker: id,
                    peer,
                    window: window_index,
                    timeout_ms: spec.timeout_ms,
                },
                RecvError::Closed(reason) => Error::Transport { worker: id, peer, reason },
            })?;
            buffer_bytes += frame.len() as u64;
            let msg = SpikeMessage::decode(&frame, peer, window)?;
            if msg.window_start != t {
                return Err(Error::MalformedFrame {
                    sender: peer,
                    offset: 4,
                    reason: format!("window start {} but expected {t}", msg.window_start),
                });
            }
            batch.extend_from_slice(&msg.spikes);
        }
        let waited = exchange.elapsed();

        let scheduling = Instant::now();
        batch.sort_unstable();
        worker.schedule(&batch)?;
        let computed = computed + scheduling.elapsed();

        peak_buffer = peak_buffer.max(buffer_bytes);
        if t >= warmup {
            compute += computed.as_secs_f64();
            wait += waited.as_secs_f64();
            wall += began.elapsed().as_secs_f64();
        }
        raster.extend_from_slice(&emitted);
        t += n;
        window_index += 1;
    }

    let mut memory = worker.memory();
    memory.message_buffers = peak_buffer;
    Ok(WorkerReport {
        worker: id,
        neurons: worker.num_neurons() as u64,
        synapses: worker.num_synapses(),
        steps: total,
        measured_spikes: raster.iter().filter(|s| s.step >= warmup).count() as u64,
        raster,
        spike_counts: worker.spike_counts().to_vec(),
        delivered_events: worker.delivered_events(),
        external_events: worker.external_events(),
        pending_events: worker.pending_events(),
        wall_seconds: wall,
        compute_seconds: compute,
        exchange_wait_seconds: wait,
        spikes_sent,
        messages_sent,
        memory,
    })
}

fn merge_reports(
    spec: &RunSpec,
    grid: &ColumnGrid,
    partition: &Partition,
    transport: &TransportKind,
    mut reports: Vec<WorkerReport>,
) -> RunOutcome {
    reports.sort_by_key(|r| r.worker);
    let mut raster: Vec<Spike> = reports.iter().flat_map(|r| r.raster.iter().copied()).collect();
    raster.sort_unstable();
    let mut memory = MemoryAccount::default();
    reports.iter().for_each(|r| memory.merge(&r.memory));
    let neurons = grid.total_neurons();
    let measured_steps = spec.total_steps().saturating_sub(spec.warmup_steps());
    let measured_ms = measured_steps as f64 * spec.dt;
    let measured_spikes: u64 = reports.iter().map(|r| r.measured_spikes).sum();
    let mean_rate_hz = if measured_ms > 0.0 {
        measured_spikes as f64 / (neurons as f64 * measured_ms * 1e-3)
    } else {
        0.0
    };
    let report = SimReport {
        config_digest: spec.digest.clone(),
        grid_x: spec.grid.grid_x,
        grid_y: spec.grid.grid_y,
        neurons_per_column: spec.grid.neurons_per_column,
        kernel: spec.kernel.shape,
        stencil_half_width: crate::model::stencil_halfwidth(&spec.kernel, spec.grid.alpha).unwrap_or(0),
        workers: spec.workers,
        tiles: (partition.tiles_x, partition.tiles_y),
        transport: transport.name().to_string(),
        seed: spec.seed,
        dt_ms: spec.dt,
        simulated_ms: spec.total_steps() as f64 * spec.dt,
        measured_ms,
        neurons,
        recurrent_synapses: reports.iter().map(|r| r.synapses).sum(),
        external_synapses_per_neuron: spec.drive.synapses_per_neuron,
        total_spikes: raster.len() as u64,
        measured_spikes,
        mean_rate_hz,
        delivered_events: reports.iter().map(|r| r.delivered_events).sum(),
        external_events: reports.iter().map(|r| r.external_events).sum(),
        spikes_sent: reports.iter().map(|r| r.spikes_sent).sum(),
        messages_sent: reports.iter().map(|r| r.messages_sent).sum(),
        wall_seconds: reports.iter().map(|r| r.wall_seconds).fold(0.0, f64::max),
        per_worker: reports
            .iter()
            .map(|r| WorkerTiming {
                worker: r.worker,
                neurons: r.neurons,
                synapses: r.synapses,
                wall_seconds: r.wall_seconds,
                compute_seconds: r.compute_seconds,
                exchange_wait_seconds: r.exchange_wait_seconds,
            })
            .collect(),
        memory,
        resident_bytes: resident_bytes(),
    };
    RunOutcome { report, raster }
}
