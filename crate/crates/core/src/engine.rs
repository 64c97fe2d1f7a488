//! Single-worker simulation engine.
//!
//! Membrane integration is time-driven (every neuron, every step); synaptic
//! deliveries are event-driven through a ring of per-step buckets. A worker
//! owns the neurons of a set of columns plus the incoming synapses onto them.
//!
//! Spikes are scheduled into the queue only at window boundaries, in
//! `(step, source id)` order, and buckets are consumed in insertion order.
//! The per-neuron input sum is therefore accumulated in the same order no
//! matter how columns are split across workers.

use std::io::Write;
use std::mem::size_of;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::connectome::Wiring;
use crate::error::{Error, Result};
use crate::model::{ColumnGrid, ColumnId, ExternalDrive, NeuronId, NeuronParams, SfaCoupling};
use crate::rng::{KeyedRng, PoissonTable, Stream};

/// One emitted spike. Orders by step, then neuron id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Spike {
    pub step: u64,
    pub neuron: NeuronId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronState {
    /// Membrane potential, mV.
    pub v: f64,
    /// Adaptation variable, mV-equivalent.
    pub w: f64,
    /// First step at which the neuron may integrate and fire again.
    pub refractory_until: u64,
    pub last_spike: Option<u64>,
}

impl NeuronState {
    pub fn at_rest(params: &NeuronParams) -> Self {
        Self {
            v: params.v_rest,
            w: 0.0,
            refractory_until: 0,
            last_spike: None,
        }
    }
}

/// Precomputed exponential-Euler factors for one (params, dt) pair.
#[derive(Debug, Clone, Copy)]
pub struct LifIntegrator {
    params: NeuronParams,
    membrane_decay: f64,
    sfa_decay: f64,
    sfa_gain: f64,
    refractory_steps: u64,
}

impl LifIntegrator {
    pub fn new(params: &NeuronParams, dt: f64) -> Result<Self> {
        params.validate()?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("engine", "dt > 0"));
        }
        let membrane_decay = (-dt / params.tau_m).exp();
        let sfa_gain = match params.sfa_coupling {
            SfaCoupling::AdaptationRate => dt / params.tau_sfa,
            SfaCoupling::Membrane => 1.0 - membrane_decay,
        };
        Ok(Self {
            params: *params,
            membrane_decay,
            sfa_decay: (-dt / params.tau_sfa).exp(),
            sfa_gain,
            refractory_steps: (params.tau_refractory / dt).round() as u64,
        })
    }

    pub fn refractory_steps(&self) -> u64 {
        self.refractory_steps
    }

    /// Advance one neuron by one step. `input` is the summed mV jump of all
    /// deliveries landing on this step. Returns whether the neuron spiked.
    #[inline]
    pub fn step(&self, state: &mut NeuronState, input: f64, step: u64) -> bool {
        let p = &self.params;
        let w_old = state.w;
        state.w = w_old * self.sfa_decay;
        if step < state.refractory_until {
            state.v = p.v_reset;
            return false;
        }
        state.v = p.v_rest + (state.v - p.v_rest) * self.membrane_decay + input - w_old * self.sfa_gain;
        if state.v >= p.v_threshold {
            state.v = p.v_reset;
            state.w += p.sfa_increment;
            state.refractory_until = step + self.refractory_steps;
            state.last_spike = Some(step);
            return true;
        }
        false
    }
}

/// Functional form of [`LifIntegrator::step`].
pub fn step_neuron(
    state: &NeuronState,
    params: &NeuronParams,
    input: f64,
    dt: f64,
    step: u64,
) -> Result<(NeuronState, bool)> {
    let integrator = LifIntegrator::new(params, dt)?;
    let mut next = *state;
    let spiked = integrator.step(&mut next, input, step);
    if !(next.v.is_finite() && next.w.is_finite()) {
        return Err(Error::NonFinite {
            neuron: 0,
            step,
            v: next.v,
            w: next.w,
        });
    }
    Ok((next, spiked))
}

/// Number of external deliveries to `neuron` during `step`, drawn from the
/// keyed external stream.
pub fn external_drive_events(drive: &ExternalDrive, dt: f64, neuron: NeuronId, step: u64, seed: u64) -> u64 {
    KeyedRng::new(seed, Stream::External).poisson(neuron.0, step, drive.mean_per_step(dt))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[repr(C)]
pub struct Delivery {
    pub target: u32,
    pub weight: f32,
}

/// Ring of per-step delivery buckets.
#[derive(Debug, Clone)]
pub struct EventQueue {
    buckets: Vec<Vec<Delivery>>,
    /// Step whose bucket is delivered next.
    current: u64,
    pending: u64,
}

impl EventQueue {
    pub fn new(depth: usize) -> Self {
        Self {
            buckets: vec![Vec::new(); depth.max(1)],
            current: 0,
            pending: 0,
        }
    }

    pub fn depth(&self) -> usize {
        self.buckets.len()
    }

    pub fn current_step(&self) -> u64 {
        self.current
    }

    pub fn pending(&self) -> u64 {
        self.pending
    }

    /// Queue a delivery for `step`. Fails when `step` is already delivered
    /// or lies beyond the ring's horizon.
    pub fn schedule(&mut self, step: u64, delivery: Delivery, source: NeuronId) -> Result<()> {
        if step < self.current {
            return Err(Error::LateDelivery {
                source_id: source.0,
                due: step,
                current: self.current,
            });
        }
        let depth = self.buckets.len() as u64;
        assert!(
            step < self.current + depth,
            "delivery at step {step} beyond queue horizon {} + {depth}",
            self.current
        );
        self.buckets[(step % depth) as usize].push(delivery);
        self.pending += 1;
        Ok(())
    }

    /// Hand the current step's bucket to `f` in insertion order, then move
    /// on to the next step.
    pub fn deliver<F: FnMut(&Delivery)>(&mut self, mut f: F) -> u64 {
        let depth = self.buckets.len() as u64;
        let bucket = &mut self.buckets[(self.current % depth) as usize];
        let n = bucket.len() as u64;
        bucket.iter().for_each(&mut f);
        bucket.clear();
        self.pending -= n;
        self.current += 1;
        n
    }

    pub fn bytes(&self) -> u64 {
        (self.buckets.capacity() * size_of::<Vec<Delivery>>()
            + self
                .buckets
                .iter()
                .map(|b| b.capacity() * size_of::<Delivery>())
                .sum::<usize>()) as u64
    }
}

/// Incoming synapse as stored by a worker, grouped by source.
#[derive(Debug, Clone, Copy, PartialEq)]
#[repr(C)]
pub struct LocalSynapse {
    pub target: u32,
    pub weight: f32,
    pub delay: u32,
}

/// Analytic memory use by category, counted from declared record layouts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryAccount {
    pub synapses: u64,
    pub synapse_index: u64,
    pub neuron_state: u64,
    pub event_queue: u64,
    pub message_buffers: u64,
}

impl MemoryAccount {
    pub fn total(&self) -> u64 {
        self.synapses + self.synapse_index + self.neuron_state + self.event_queue + self.message_buffers
    }

    pub fn merge(&mut self, other: &MemoryAccount) {
        self.synapses += other.synapses;
        self.synapse_index += other.synapse_index;
        self.neuron_state += other.neuron_state;
        self.event_queue += other.event_queue;
        self.message_buffers += other.message_buffers;
    }
}

/// Dynamics settings shared by every worker of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    pub neuron: NeuronParams,
    pub drive: ExternalDrive,
    pub dt: f64,
    pub seed: u64,
}

const NO_SLOT: u32 = u32::MAX;

/// The neurons and incoming synapses of one worker.
pub struct Worker {
    id: u32,
    grid: ColumnGrid,
    columns: Vec<ColumnId>,
    /// column id -> local slot, or NO_SLOT
    local_slot: Vec<u32>,
    /// column id -> source slot in the synapse index, or NO_SLOT
    source_slot: Vec<u32>,
    source_columns: Vec<ColumnId>,
    offsets: Vec<u32>,
    synapses: Vec<LocalSynapse>,
    states: Vec<NeuronState>,
    input: Vec<f64>,
    queue: EventQueue,
    integrator: LifIntegrator,
    ext_rng: KeyedRng,
    ext_table: PoissonTable,
    ext_mean: f64,
    ext_weight: f64,
    min_delay: u32,
    step: u64,
    delivered_events: u64,
    external_events: u64,
    spike_counts: Vec<u32>,
}

impl Worker {
    /// Build a worker owning `columns`, sampling its incoming synapses from
    /// `wiring`.
    pub fn build(id: u32, wiring: &Wiring, columns: &[ColumnId], dynamics: &Dynamics) -> Result<Self> {
        let grid = wiring.grid().clone();
        let npc = grid.neurons_per_column();
        let mut columns = columns.to_vec();
        columns.sort();
        columns.dedup();

        let mut local_slot = vec![NO_SLOT; grid.num_columns() as usize];
        for (slot, c) in columns.iter().enumerate() {
            local_slot[c.0 as usize] = slot as u32;
        }

        // Sources reaching my columns, in column order.
        let mut source_columns: Vec<ColumnId> = columns
            .iter()
            .flat_map(|&c| wiring.reachable_columns(c).into_iter().map(|(s, _)| s))
            .collect();
        source_columns.sort();
        source_columns.dedup();
        let mut source_slot = vec![NO_SLOT; grid.num_columns() as usize];
        for (slot, c) in source_columns.iter().enumerate() {
            source_slot[c.0 as usize] = slot as u32;
        }

        let n_sources = source_columns.len() * npc as usize;
        let mut offsets = vec![0u32; n_sources + 1];
        let mut synapses = Vec::new();
        let mut overflow = false;
        wiring.for_each_synapse(&columns, |s| {
            let (sc, si) = (s.source.0 / u64::from(npc), s.source.0 % u64::from(npc));
            let (tc, ti) = (s.target.0 / u64::from(npc), s.target.0 % u64::from(npc));
            let src = source_slot[sc as usize] as usize * npc as usize + si as usize;
            let target = local_slot[tc as usize] as u64 * u64::from(npc) + ti;
            offsets[src + 1] += 1;
            overflow |= synapses.len() >= u32::MAX as usize;
            synapses.push(LocalSynapse {
                target: target as u32,
                weight: s.weight,
                delay: s.delay,
            });
        });
        if overflow {
            return Err(Error::invalid("worker", "fewer than 2^32 synapses per worker"));
        }
        // Synapses arrive grouped by source in ascending order, so a prefix
        // sum of the per-source counts yields the CSR offsets.
        for i in 0..n_sources {
            offsets[i + 1] += offsets[i];
        }

        let integrator = LifIntegrator::new(&dynamics.neuron, dynamics.dt)?;
        dynamics.drive.validate()?;
        let init = KeyedRng::new(dynamics.seed, Stream::InitialState);
        let p = dynamics.neuron;
        let states: Vec<NeuronState> = columns
            .iter()
            .flat_map(|&c| (0..npc).map(move |i| (c, i)))
            .map(|(c, i)| {
                let u = init.uniform(grid.neuron(c, i).0, 0);
                NeuronState {
                    v: p.v_rest + u * (p.v_threshold - p.v_rest),
                    ..NeuronState::at_rest(&p)
                }
            })
            .collect();
        let n_local = states.len();
        let min_delay = wiring.min_delay_steps();
        let depth = (wiring.max_delay_steps() + min_delay + 1) as usize;

        Ok(Self {
            id,
            columns,
            local_slot,
            source_slot,
            source_columns,
            offsets,
            synapses,
            input: vec![0.0; n_local],
            spike_counts: vec![0; n_local],
            states,
            queue: EventQueue::new(depth),
            integrator,
            ext_rng: KeyedRng::new(dynamics.seed, Stream::External),
            ext_table: PoissonTable::new(dynamics.drive.mean_per_step(dynamics.dt)),
            ext_mean: dynamics.drive.mean_per_step(dynamics.dt),
            ext_weight: dynamics.drive.weight,
            min_delay,
            step: 0,
            delivered_events: 0,
            external_events: 0,
            grid,
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn columns(&self) -> &[ColumnId] {
        &self.columns
    }

    pub fn source_columns(&self) -> &[ColumnId] {
        &self.source_columns
    }

    pub fn num_neurons(&self) -> usize {
        self.states.len()
    }

    pub fn num_synapses(&self) -> u64 {
        self.synapses.len() as u64
    }

    pub fn synapses(&self) -> &[LocalSynapse] {
        &self.synapses
    }

    pub fn synapse_offsets(&self) -> &[u32] {
        &self.offsets
    }

    pub fn states(&self) -> &[NeuronState] {
        &self.states
    }

    pub fn queue(&self) -> &EventQueue {
        &self.queue
    }

    pub fn min_delay(&self) -> u32 {
        self.min_delay
    }

    pub fn current_step(&self) -> u64 {
        self.step
    }

    pub fn delivered_events(&self) -> u64 {
        self.delivered_events
    }

    pub fn external_events(&self) -> u64 {
        self.external_events
    }

    pub fn pending_events(&self) -> u64 {
        self.queue.pending()
    }

    pub fn spike_counts(&self) -> &[u32] {
        &self.spike_counts
    }

    /// Global id of local neuron `index`.
    pub fn global_id(&self, index: usize) -> NeuronId {
        let npc = self.grid.neurons_per_column() as usize;
        self.grid.neuron(self.columns[index / npc], (index % npc) as u32)
    }

    pub fn owns(&self, column: ColumnId) -> bool {
        self.local_slot[column.0 as usize] != NO_SLOT
    }

    /// Number of local synapses projected by `source`.
    pub fn out_degree(&self, source: NeuronId) -> u64 {
        let npc = u64::from(self.grid.neurons_per_column());
        let slot = self.source_slot[(source.0 / npc) as usize];
        if slot == NO_SLOT {
            return 0;
        }
        let i = (u64::from(slot) * npc + source.0 % npc) as usize;
        u64::from(self.offsets[i + 1] - self.offsets[i])
    }

    /// Queue the deliveries caused by `spikes`, which must be sorted by
    /// `(step, neuron)`. Spikes from columns that do not project here are
    /// ignored.
    pub fn schedule(&mut self, spikes: &[Spike]) -> Result<()> {
        debug_assert!(spikes.windows(2).all(|w| w[0] <= w[1]));
        let npc = u64::from(self.grid.neurons_per_column());
        for spike in spikes {
            let column = spike.neuron.0 / npc;
            let Some(&slot) = self.source_slot.get(column as usize) else {
                continue;
            };
            if slot == NO_SLOT {
                continue;
            }
            let i = (u64::from(slot) * npc + spike.neuron.0 % npc) as usize;
            let (lo, hi) = (self.offsets[i] as usize, self.offsets[i + 1] as usize);
            for syn in &self.synapses[lo..hi] {
                self.queue.schedule(
                    spike.step + u64::from(syn.delay),
                    Delivery {
                        target: syn.target,
                        weight: syn.weight,
                    },
                    spike.neuron,
                )?;
            }
        }
        Ok(())
    }

    /// Integrate `steps` steps and return the spikes emitted, sorted.
    pub fn advance(&mut self, steps: u32) -> Result<Vec<Spike>> {
        let mut emitted = Vec::new();
        for _ in 0..steps {
            let t = self.step;
            let input = &mut self.input;
            self.delivered_events += self.queue.deliver(|d| input[d.target as usize] += f64::from(d.weight));
            let npc = self.grid.neurons_per_column() as usize;
            for (slot, column) in self.columns.iter().enumerate() {
                let base = self.grid.first_neuron(*column).0;
                for j in 0..npc {
                    let i = slot * npc + j;
                    let gid = NeuronId(base + j as u64);
                    let mut current = self.input[i];
                    if self.ext_mean > 0.0 {
                        let n = self.ext_rng.poisson_from(gid.0, t, &self.ext_table);
                        self.external_events += n;
                        current += n as f64 * self.ext_weight;
                    }
                    self.input[i] = 0.0;
                    let state = &mut self.states[i];
                    if self.integrator.step(state, current, t) {
                        emitted.push(Spike { step: t, neuron: gid });
                        self.spike_counts[i] += 1;
                    }
                    if !(state.v.is_finite() && state.w.is_finite()) {
                        return Err(Error::NonFinite {
                            neuron: gid.0,
                            step: t,
                            v: state.v,
                            w: state.w,
                        });
                    }
                }
            }
            self.step += 1;
        }
        Ok(emitted)
    }

    /// Analytic memory of the live structures.
    pub fn memory(&self) -> MemoryAccount {
        let u32s = size_of::<u32>() as u64;
        MemoryAccount {
            synapses: self.synapses.len() as u64 * size_of::<LocalSynapse>() as u64,
            synapse_index: self.offsets.len() as u64 * u32s
                + (self.source_slot.len() + self.local_slot.len()) as u64 * u32s
                + self.source_columns.len() as u64 * size_of::<ColumnId>() as u64,
            neuron_state: self.states.len() as u64
                * (size_of::<NeuronState>() + size_of::<f64>() + size_of::<u32>()) as u64,
            event_queue: self.queue.bytes(),
            message_buffers: 0,
        }
    }
}

/// Per-worker measurements of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub worker: u32,
    pub neurons: u64,
    pub synapses: u64,
    pub steps: u64,
    /// Spikes emitted by this worker's neurons, sorted.
    pub raster: Vec<Spike>,
    /// Spike count per local neuron, in local order.
    pub spike_counts: Vec<u32>,
    /// Spikes emitted at or after the warm-up step.
    pub measured_spikes: u64,
    pub delivered_events: u64,
    pub external_events: u64,
    pub pending_events: u64,
    /// Window-loop wall time after warm-up, seconds.
    pub wall_seconds: f64,
    pub compute_seconds: f64,
    pub exchange_wait_seconds: f64,
    pub spikes_sent: u64,
    pub messages_sent: u64,
    pub memory: MemoryAccount,
}

/// Run one worker with no peers. `inbox` holds spikes emitted elsewhere
/// (sorted), which are merged with local spikes at each window boundary.
pub fn run_worker(
    worker: &mut Worker,
    inbox: &[Spike],
    duration_ms: f64,
    dt: f64,
    warmup_ms: f64,
) -> Result<WorkerReport> {
    let total_steps = (duration_ms / dt).round() as u64;
    let warmup_step = (warmup_ms / dt).round() as u64;
    let window = u64::from(worker.min_delay());
    let mut raster = Vec::new();
    let mut last_window: Vec<Spike> = Vec::new();
    let mut next_inbox = 0usize;
    let (mut wall, mut compute) = (0.0, 0.0);
    let start_step = worker.current_step();
    let mut t = start_step;
    while t < start_step + total_steps {
        let began = Instant::now();
        // Remote spikes due before this window must already be in the queue.
        let mut batch = std::mem::take(&mut last_window);
        while next_inbox < inbox.len() && inbox[next_inbox].step < t {
            batch.push(inbox[next_inbox]);
            next_inbox += 1;
        }
        batch.sort_unstable();
        worker.schedule(&batch)?;
        let n = window.min(start_step + total_steps - t);
        let emitted = worker.advance(n as u32)?;
        let elapsed = began.elapsed().as_secs_f64();
        if t >= warmup_step {
            wall += elapsed;
            compute += elapsed;
        }
        raster.extend_from_slice(&emitted);
        last_window = emitted;
        t += n;
    }
    let measured_spikes = raster.iter().filter(|s| s.step >= warmup_step).count() as u64;
    Ok(WorkerReport {
        worker: worker.id(),
        neurons: worker.num_neurons() as u64,
        synapses: worker.num_synapses(),
        steps: total_steps,
        raster,
        spike_counts: worker.spike_counts().to_vec(),
        measured_spikes,
        delivered_events: worker.delivered_events(),
        external_events: worker.external_events(),
        pending_events: worker.pending_events(),
        wall_seconds: wall,
        compute_seconds: compute,
        exchange_wait_seconds: 0.0,
        spikes_sent: 0,
        messages_sent: 0,
        memory: worker.memory(),
    })
}

/// Raster dump as `timestep,neuron_id` lines.
pub fn write_raster_text<W: Write>(mut w: W, raster: &[Spike]) -> Result<()> {
    for s in raster {
        writeln!(w, "{},{}", s.step, s.neuron.0)?;
    }
    w.flush()?;
    Ok(())
}

/// Raster dump as little-endian (u64 step, u64 id) pairs.
pub fn write_raster_binary<W: Write>(mut w: W, raster: &[Spike]) -> Result<()> {
    for s in raster {
        w.write_all(&s.step.to_le_bytes())?;
        w.write_all(&s.neuron.0.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}
