//! Deterministic sampling of the recurrent synapse population.
//!
//! Each ordered neuron pair is an independent Bernoulli trial whose uniform
//! comes from the counter RNG keyed by `(seed, source, target)`. Any worker
//! can therefore regenerate exactly its own slice of the connectome, and the
//! union of slices equals the single-pass result.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ColumnGrid, ColumnId, ConnectivityKernel, NeuronId, NeuronParams, Stencil};
use crate::rng::{KeyedRng, Stream};

pub const DUMP_MAGIC: &[u8; 4] = b"CSNN";
pub const DUMP_VERSION: u32 = 1;
pub const DUMP_HEADER_BYTES: usize = 32;
pub const DUMP_RECORD_BYTES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynapseRecord {
    pub source: NeuronId,
    pub target: NeuronId,
    /// mV jump delivered to the target.
    pub weight: f32,
    /// Delay in timesteps.
    pub delay: u32,
}

/// Axonal delay assignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DelayModel {
    Constant { ms: f64 },
    /// `max(min_ms, r / speed)` with `speed` in µm/ms.
    Linear { min_ms: f64, speed: f64 },
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel::Constant { ms: 1.0 }
    }
}

impl DelayModel {
    pub fn validate(&self, dt: f64) -> Result<()> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("delay", "dt > 0"));
        }
        let min_ms = match *self {
            DelayModel::Constant { ms } => ms,
            DelayModel::Linear { min_ms, speed } => {
                if !(speed.is_finite() && speed > 0.0) {
                    return Err(Error::invalid("delay", "conduction speed > 0"));
                }
                min_ms
            }
        };
        if !(min_ms.is_finite() && (min_ms / dt).round() >= 1.0) {
            return Err(Error::invalid("delay", "minimum delay >= 1 timestep"));
        }
        Ok(())
    }

    /// Smallest delay any synapse can get, in steps. This is the exchange
    /// window length.
    pub fn min_steps(&self, dt: f64) -> u32 {
        let ms = match *self {
            DelayModel::Constant { ms } => ms,
            DelayModel::Linear { min_ms, .. } => min_ms,
        };
        ((ms / dt).round() as u32).max(1)
    }

    pub fn steps(&self, distance_um: f64, dt: f64) -> u32 {
        match *self {
            DelayModel::Constant { .. } => self.min_steps(dt),
            DelayModel::Linear { speed, .. } => {
                let ms = distance_um / speed;
                ((ms / dt).round() as u32).max(self.min_steps(dt))
            }
        }
    }

    /// Largest delay reachable within a stencil of the given half-width.
    pub fn max_steps(&self, half_width: u32, alpha: f64, dt: f64) -> u32 {
        let far = alpha * f64::from(half_width) * std::f64::consts::SQRT_2;
        self.steps(far, dt)
    }
}

/// Connection probability between two neurons.
///
/// Same column gives the local probability. Different columns give the
/// kernel value when the offset lies in the stencil and passes the cutoff,
/// and 0 otherwise.
pub fn pair_probability(
    grid: &ColumnGrid,
    kernel: &ConnectivityKernel,
    source: NeuronId,
    target: NeuronId,
) -> Result<f64> {
    if source == target {
        return Err(Error::Autapse(source.0));
    }
    let (sc, _) = grid.locate(source)?;
    let (tc, _) = grid.locate(target)?;
    if sc == tc {
        return Ok(kernel.local_probability);
    }
    let h = i64::from(crate::model::stencil_halfwidth(kernel, grid.spec().alpha)?);
    let (sx, sy) = grid.column_coords(sc);
    let (tx, ty) = grid.column_coords(tc);
    let dx = i64::from(tx) - i64::from(sx);
    let dy = i64::from(ty) - i64::from(sy);
    if dx.abs() > h || dy.abs() > h {
        return Ok(0.0);
    }
    let p = kernel.probability(grid.column_distance(sc, tc))?;
    Ok(if p >= kernel.cutoff { p } else { 0.0 })
}

/// Everything needed to sample synapses: grid, kernel, its stencil, weights,
/// delays and the keyed RNG.
#[derive(Debug, Clone)]
pub struct Wiring {
    grid: ColumnGrid,
    kernel: ConnectivityKernel,
    stencil: Stencil,
    j_exc: f32,
    j_inh: f32,
    delays: DelayModel,
    dt: f64,
    rng: KeyedRng,
}

/// Candidate target column for a given source column.
#[derive(Debug, Clone, Copy)]
struct Reach {
    target: ColumnId,
    probability: f64,
    delay: u32,
}

impl Wiring {
    pub fn new(
        grid: ColumnGrid,
        kernel: ConnectivityKernel,
        params: &NeuronParams,
        delays: DelayModel,
        dt: f64,
        seed: u64,
    ) -> Result<Self> {
        kernel.validate()?;
        delays.validate(dt)?;
        let stencil = Stencil::build(&kernel, grid.spec().alpha)?;
        Ok(Self {
            grid,
            kernel,
            stencil,
            j_exc: params.j_exc as f32,
            j_inh: params.j_inh as f32,
            delays,
            dt,
            rng: KeyedRng::new(seed, Stream::Connectome),
        })
    }

    pub fn grid(&self) -> &ColumnGrid {
        &self.grid
    }

    pub fn kernel(&self) -> &ConnectivityKernel {
        &self.kernel
    }

    pub fn stencil(&self) -> &Stencil {
        &self.stencil
    }

    pub fn delays(&self) -> &DelayModel {
        &self.delays
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn min_delay_steps(&self) -> u32 {
        self.delays.min_steps(self.dt)
    }

    pub fn max_delay_steps(&self) -> u32 {
        self.delays
            .max_steps(self.stencil.half_width, self.grid.spec().alpha, self.dt)
    }

    pub fn weight_of(&self, source_index: u32) -> f32 {
        if self.grid.is_excitatory_index(source_index) {
            self.j_exc
        } else {
            self.j_inh
        }
    }

    /// Columns reachable from `column` (including itself) with their pair
    /// probabilities, clipped at the grid boundary.
    pub fn reachable_columns(&self, column: ColumnId) -> Vec<(ColumnId, f64)> {
        let (cx, cy) = self.grid.column_coords(column);
        let mut out = Vec::with_capacity(self.stencil.offsets.len() + 1);
        out.push((column, self.kernel.local_probability));
        for o in &self.stencil.offsets {
            if let Some(c) = self
                .grid
                .column_at(i64::from(cx) + i64::from(o.dx), i64::from(cy) + i64::from(o.dy))
            {
                out.push((c, o.probability));
            }
        }
        out.sort_by_key(|(c, _)| *c);
        out
    }

    /// Source columns feeding `targets`, each with the target columns it
    /// reaches, all sorted by column id.
    fn plan_for_targets(&self, targets: &[ColumnId]) -> BTreeMap<ColumnId, Vec<Reach>> {
        let mut plan: BTreeMap<ColumnId, Vec<Reach>> = BTreeMap::new();
        for &tc in targets {
            // The stencil is symmetric, so the sources of tc are the columns tc reaches.
            for (sc, p) in self.reachable_columns(tc) {
                if p <= 0.0 {
                    continue;
                }
                let r = self.grid.column_distance(sc, tc);
                plan.entry(sc).or_default().push(Reach {
                    target: tc,
                    probability: p,
                    delay: self.delays.steps(r, self.dt),
                });
            }
        }
        for reaches in plan.values_mut() {
            reaches.sort_by_key(|r| r.target);
            reaches.dedup_by_key(|r| r.target);
        }
        plan
    }

    /// Expected number of synapses onto the target columns.
    pub fn expected_synapses(&self, targets: &[ColumnId]) -> f64 {
        let npc = f64::from(self.grid.neurons_per_column());
        self.plan_for_targets(targets)
            .iter()
            .flat_map(|(sc, reaches)| reaches.iter().map(move |r| (sc, r)))
            .map(|(sc, r)| {
                let pairs = if *sc == r.target { npc * (npc - 1.0) } else { npc * npc };
                pairs * r.probability
            })
            .sum()
    }

    /// Expected size of the full connectome, edge clipping included.
    pub fn expected_total(&self) -> f64 {
        let npc = f64::from(self.grid.neurons_per_column());
        let (gx, gy) = (i64::from(self.grid.spec().grid_x), i64::from(self.grid.spec().grid_y));
        // Offset (dx, dy) fits (gx - |dx|) * (gy - |dy|) source/target column pairs.
        let remote: f64 = self
            .stencil
            .offsets
            .iter()
            .map(|o| {
                let fits = (gx - i64::from(o.dx.abs())).max(0) * (gy - i64::from(o.dy.abs())).max(0);
                fits as f64 * o.probability
            })
            .sum();
        let local = f64::from(self.grid.num_columns()) * (npc - 1.0) * self.kernel.local_probability;
        npc * (local + npc * remote)
    }

    /// Visit every synapse whose target lies in `targets`, ordered by source
    /// id, then target id.
    pub fn for_each_synapse<F: FnMut(SynapseRecord)>(&self, targets: &[ColumnId], mut f: F) {
        let npc = self.grid.neurons_per_column();
        for (sc, reaches) in self.plan_for_targets(targets) {
            for si in 0..npc {
                let source = self.grid.neuron(sc, si);
                let weight = self.weight_of(si);
                for reach in &reaches {
                    let base = self.grid.first_neuron(reach.target).0;
                    for ti in 0..npc {
                        let target = base + u64::from(ti);
                        if target == source.0 {
                            continue;
                        }
                        if self.rng.bernoulli(source.0, target, reach.probability) {
                            f(SynapseRecord {
                                source,
                                target: NeuronId(target),
                                weight,
                                delay: reach.delay,
                            });
                        }
                    }
                }
            }
        }
    }
}

/// Restricts generation to synapses whose targets live in these columns.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetFilter {
    All,
    Columns(Vec<ColumnId>),
}

impl TargetFilter {
    fn columns(&self, grid: &ColumnGrid) -> Vec<ColumnId> {
        match self {
            TargetFilter::All => grid.columns().map(|(c, _)| c).collect(),
            TargetFilter::Columns(cols) => {
                let mut cols = cols.clone();
                cols.sort();
                cols.dedup();
                cols
            }
        }
    }
}

pub fn check_budget(estimate: f64, budget: Option<u64>) -> Result<()> {
    match budget {
        Some(budget) if estimate > budget as f64 => Err(Error::SynapseBudget { estimate, budget }),
        _ => Ok(()),
    }
}

/// Materialize the synapses selected by `filter`, refusing when the expected
/// count exceeds `budget`.
pub fn generate_synapses(
    wiring: &Wiring,
    filter: &TargetFilter,
    budget: Option<u64>,
) -> Result<Vec<SynapseRecord>> {
    let targets = filter.columns(wiring.grid());
    check_budget(wiring.expected_synapses(&targets), budget)?;
    let mut out = Vec::new();
    wiring.for_each_synapse(&targets, |s| out.push(s));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectomeStats {
    pub total_synapses: u64,
    pub local_synapses: u64,
    pub mean_out_degree: f64,
    /// 0 for an empty connectome.
    pub local_fraction: f64,
    pub stencil_half_width: u32,
    /// (out-degree, number of neurons with that out-degree), ascending.
    pub out_degree_histogram: Vec<(u64, u64)>,
}

impl ConnectomeStats {
    fn from_degrees(
        degrees: &[u32],
        total: u64,
        local: u64,
        stencil_half_width: u32,
    ) -> Self {
        let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
        for &d in degrees {
            *hist.entry(u64::from(d)).or_default() += 1;
        }
        let neurons = degrees.len() as f64;
        Self {
            total_synapses: total,
            local_synapses: local,
            mean_out_degree: if neurons > 0.0 { total as f64 / neurons } else { 0.0 },
            local_fraction: if total > 0 { local as f64 / total as f64 } else { 0.0 },
            stencil_half_width,
            out_degree_histogram: hist.into_iter().collect(),
        }
    }
}

/// Exact statistics over a complete synapse stream.
pub fn connectome_stats<I>(synapses: I, grid: &ColumnGrid, stencil_half_width: u32) -> Result<ConnectomeStats>
where
    I: IntoIterator<Item = SynapseRecord>,
{
    let mut degrees = vec![0u32; grid.total_neurons() as usize];
    let (mut total, mut local) = (0u64, 0u64);
    for s in synapses {
        let (sc, _) = grid.locate(s.source)?;
        let (tc, _) = grid.locate(s.target)?;
        degrees[s.source.0 as usize] += 1;
        total += 1;
        if sc == tc {
            local += 1;
        }
    }
    Ok(ConnectomeStats::from_degrees(&degrees, total, local, stencil_half_width))
}

/// Sample the whole connectome in parallel over target columns without
/// storing it, and return its statistics.
pub fn sample_stats(wiring: &Wiring, budget: Option<u64>) -> Result<ConnectomeStats> {
    let grid = wiring.grid();
    check_budget(wiring.expected_total(), budget)?;
    let columns: Vec<ColumnId> = grid.columns().map(|(c, _)| c).collect();
    let n = grid.total_neurons() as usize;
    let (degrees, total, local) = columns
        .par_iter()
        .fold(
            || (vec![0u32; n], 0u64, 0u64),
            |(mut deg, mut total, mut local), &tc| {
                let npc = u64::from(grid.neurons_per_column());
                wiring.for_each_synapse(&[tc], |s| {
                    deg[s.source.0 as usize] += 1;
                    total += 1;
                    if s.source.0 / npc == s.target.0 / npc {
                        local += 1;
                    }
                });
                (deg, total, local)
            },
        )
        .reduce(
            || (vec![0u32; n], 0, 0),
            |(mut a, ta, la), (b, tb, lb)| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                (a, ta + tb, la + lb)
            },
        );
    Ok(ConnectomeStats::from_degrees(
        &degrees,
        total,
        local,
        wiring.stencil().half_width,
    ))
}

/// Write the binary dump: 32-byte header then 24-byte little-endian records.
pub fn write_dump<W: Write>(mut w: W, grid: &ColumnGrid, synapses: &[SynapseRecord]) -> Result<()> {
    let spec = grid.spec();
    let mut header = [0u8; DUMP_HEADER_BYTES];
    header[0..4].copy_from_slice(DUMP_MAGIC);
    header[4..8].copy_from_slice(&DUMP_VERSION.to_le_bytes());
    header[8..12].copy_from_slice(&spec.grid_x.to_le_bytes());
    header[12..16].copy_from_slice(&spec.grid_y.to_le_bytes());
    header[16..20].copy_from_slice(&spec.neurons_per_column.to_le_bytes());
    // bytes 20..24 reserved
    header[24..32].copy_from_slice(&(synapses.len() as u64).to_le_bytes());
    w.write_all(&header)?;
    let mut rec = [0u8; DUMP_RECORD_BYTES];
    for s in synapses {
        rec[0..8].copy_from_slice(&s.source.0.to_le_bytes());
        rec[8..16].copy_from_slice(&s.target.0.to_le_bytes());
        rec[16..20].copy_from_slice(&s.weight.to_le_bytes());
        rec[20..24].copy_from_slice(&s.delay.to_le_bytes());
        w.write_all(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DumpHeader {
    pub version: u32,
    pub grid_x: u32,
    pub grid_y: u32,
    pub neurons_per_column: u32,
    pub records: u64,
}

pub fn read_dump<R: Read>(mut r: R) -> Result<(DumpHeader, Vec<SynapseRecord>)> {
    let mut header = [0u8; DUMP_HEADER_BYTES];
    r.read_exact(&mut header)?;
    if &header[0..4] != DUMP_MAGIC {
        return Err(Error::BadDump("missing CSNN magic".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let h = DumpHeader {
        version: u32_at(4),
        grid_x: u32_at(8),
        grid_y: u32_at(12),
        neurons_per_column: u32_at(16),
        records: u64::from_le_bytes(header[24..32].try_into().unwrap()),
    };
    if h.version != DUMP_VERSION {
        return Err(Error::BadDump(format!("unsupported version {}", h.version)));
    }
    let mut out = Vec::with_capacity(h.records.min(1 << 24) as usize);
    let mut rec = [0u8; DUMP_RECORD_BYTES];
    for i in 0..h.records {
        r.read_exact(&mut rec)
            .map_err(|e| Error::BadDump(format!("record {i}: {e}")))?;
        out.push(SynapseRecord {
            source: NeuronId(u64::from_le_bytes(rec[0..8].try_into().unwrap())),
            target: NeuronId(u64::from_le_bytes(rec[8..16].try_into().unwrap())),
            weight: f32::from_le_bytes(rec[16..20].try_into().unwrap()),
            delay: u32::from_le_bytes(rec[20..24].try_into().unwrap()),
        });
    }
    Ok((h, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GridSpec;
    use approx::assert_relative_eq;

    fn grid(x: u32, y: u32, npc: u32) -> ColumnGrid {
        ColumnGrid::new(GridSpec::new(x, y, 100.0, npc, 0.8).unwrap()).unwrap()
    }

    fn wiring(g: ColumnGrid, k: ConnectivityKernel, seed: u64) -> Wiring {
        Wiring::new(g, k, &NeuronParams::default(), DelayModel::default(), 0.1, seed).unwrap()
    }

    #[test]
    fn pair_probability_cases() {
        let g = grid(24, 24, 1240);
        let k = ConnectivityKernel::paper_gaussian();
        assert_eq!(pair_probability(&g, &k, NeuronId(0), NeuronId(1)).unwrap(), 0.8);
        let right = g.first_neuron(ColumnId(1));
        assert_relative_eq!(
            pair_probability(&g, &k, NeuronId(0), right).unwrap(),
            0.030_326_532_985_631_67,
            epsilon = 1e-15
        );
        // (3, 0) is inside the 7x7 square but below the cutoff.
        let far = g.first_neuron(ColumnId(3));
        assert_eq!(pair_probability(&g, &k, NeuronId(0), far).unwrap(), 0.0);
        assert!(matches!(
            pair_probability(&g, &k, NeuronId(5), NeuronId(5)),
            Err(Error::Autapse(5))
        ));
        assert!(matches!(
            pair_probability(&g, &k, NeuronId(0), NeuronId(u64::MAX)),
            Err(Error::NeuronOutOfRange { .. })
        ));
    }

    #[test]
    fn local_only_zero_probability_is_empty() {
        let k = ConnectivityKernel::gaussian(0.05, 100.0, 0.05, 0.0).unwrap();
        let w = wiring(grid(3, 3, 8), k, 1);
        assert!(generate_synapses(&w, &TargetFilter::All, None).unwrap().is_empty());
        let stats = sample_stats(&w, None).unwrap();
        assert_eq!(stats.total_synapses, 0);
        assert_eq!(stats.local_fraction, 0.0);
    }

    #[test]
    fn single_column_is_all_local() {
        let w = wiring(grid(1, 1, 30), ConnectivityKernel::paper_exponential(), 3);
        let syn = generate_synapses(&w, &TargetFilter::All, None).unwrap();
        let stats = connectome_stats(syn.iter().copied(), w.grid(), 10).unwrap();
        assert!(stats.total_synapses > 0);
        assert_eq!(stats.local_fraction, 1.0);
    }

    #[test]
    fn budget_refusal_reports_estimate() {
        let w = wiring(grid(4, 4, 50), ConnectivityKernel::paper_gaussian(), 3);
        let err = generate_synapses(&w, &TargetFilter::All, Some(10)).unwrap_err();
        match err {
            Error::SynapseBudget { estimate, budget } => {
                assert_eq!(budget, 10);
                assert!(estimate > 1000.0);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn records_respect_invariants() {
        let w = wiring(grid(4, 4, 20), ConnectivityKernel::paper_gaussian(), 11);
        let g = w.grid().clone();
        for s in generate_synapses(&w, &TargetFilter::All, None).unwrap() {
            assert_ne!(s.source, s.target);
            assert!(s.delay >= 1);
            let exc = g.is_excitatory(s.source).unwrap();
            assert_eq!(exc, s.weight > 0.0);
        }
    }

    #[test]
    fn stats_match_stream_and_sampled() {
        let w = wiring(grid(5, 4, 12), ConnectivityKernel::paper_exponential(), 5);
        let syn = generate_synapses(&w, &TargetFilter::All, None).unwrap();
        let a = connectome_stats(syn.iter().copied(), w.grid(), w.stencil().half_width).unwrap();
        let b = sample_stats(&w, None).unwrap();
        assert_eq!(a, b);
        let sum: u64 = a.out_degree_histogram.iter().map(|(d, n)| d * n).sum();
        assert_eq!(sum, a.total_synapses);
    }

    #[test]
    fn closed_form_total_matches_column_sum() {
        for k in [ConnectivityKernel::paper_gaussian(), ConnectivityKernel::paper_exponential()] {
            let w = wiring(grid(13, 7, 9), k, 1);
            let all: Vec<ColumnId> = w.grid().columns().map(|(c, _)| c).collect();
            assert_relative_eq!(w.expected_total(), w.expected_synapses(&all), max_relative = 1e-12);
        }
    }

    #[test]
    fn linear_delays_grow_with_distance() {
        let d = DelayModel::Linear { min_ms: 1.0, speed: 100.0 };
        assert_eq!(d.min_steps(0.1), 10);
        assert_eq!(d.steps(0.0, 0.1), 10);
        assert_eq!(d.steps(300.0, 0.1), 30);
        assert!(DelayModel::Constant { ms: 0.01 }.validate(0.1).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let w = wiring(grid(2, 2, 6), ConnectivityKernel::paper_gaussian(), 2);
        let syn = generate_synapses(&w, &TargetFilter::All, None).unwrap();
        let mut buf = Vec::new();
        write_dump(&mut buf, w.grid(), &syn).unwrap();
        assert_eq!(buf.len(), DUMP_HEADER_BYTES + DUMP_RECORD_BYTES * syn.len());
        assert_eq!(&buf[0..4], b"CSNN");
        let (h, back) = read_dump(&buf[..]).unwrap();
        assert_eq!((h.grid_x, h.grid_y, h.neurons_per_column), (2, 2, 6));
        assert_eq!(back, syn);
        assert!(read_dump(&buf[..buf.len() - 1]).is_err());
    }
}
