//! Domain types for columnar grids and the closed-form connectivity math
//! (kernel probabilities, stencil extent, expected degrees) shared by every
//! other module.
//!
//! Units are fixed throughout: distances in µm, times in ms, potentials in
//! mV and rates in Hz.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global neuron identifier. Ids are contiguous per column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId(pub u64);

/// Row-major column identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub grid_x: u32,
    pub grid_y: u32,
    /// Columnar spacing in µm.
    pub alpha: f64,
    pub neurons_per_column: u32,
    pub excitatory_fraction: f64,
}

impl GridSpec {
    pub fn new(
        grid_x: u32,
        grid_y: u32,
        alpha: f64,
        neurons_per_column: u32,
        excitatory_fraction: f64,
    ) -> Result<Self> {
        let spec = Self {
            grid_x,
            grid_y,
            alpha,
            neurons_per_column,
            excitatory_fraction,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_x < 1 || self.grid_y < 1 {
            return Err(Error::invalid("grid", "grid_x >= 1 and grid_y >= 1"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::invalid("grid", "alpha > 0"));
        }
        if self.neurons_per_column < 1 {
            return Err(Error::invalid("grid", "neurons_per_column >= 1"));
        }
        if !(0.0..=1.0).contains(&self.excitatory_fraction) {
            return Err(Error::invalid("grid", "excitatory_fraction in [0, 1]"));
        }
        Ok(())
    }

    pub fn columns(&self) -> u32 {
        self.grid_x * self.grid_y
    }

    pub fn total_neurons(&self) -> u64 {
        u64::from(self.columns()) * u64::from(self.neurons_per_column)
    }

    /// Excitatory neurons per column, `round(fraction * n)`.
    pub fn excitatory_per_column(&self) -> u32 {
        (self.excitatory_fraction * f64::from(self.neurons_per_column)).round() as u32
    }
}

/// A realized grid: column coordinates plus the global neuron id layout
/// (per column, excitatory block first, then inhibitory block).
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnGrid {
    spec: GridSpec,
    excitatory_per_column: u32,
}

impl ColumnGrid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        if spec.total_neurons() > u64::from(u32::MAX) {
            return Err(Error::invalid(
                "grid",
                "total neurons must fit in 32 bits (grid_x * grid_y * neurons_per_column <= 4294967295)",
            ));
        }
        Ok(Self {
            excitatory_per_column: spec.excitatory_per_column(),
            spec,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn num_columns(&self) -> u32 {
        self.spec.columns()
    }

    pub fn total_neurons(&self) -> u64 {
        self.spec.total_neurons()
    }

    pub fn neurons_per_column(&self) -> u32 {
        self.spec.neurons_per_column
    }

    pub fn column_coords(&self, column: ColumnId) -> (u32, u32) {
        (column.0 % self.spec.grid_x, column.0 / self.spec.grid_x)
    }

    /// Column at `(cx, cy)`, or `None` when outside the grid.
    pub fn column_at(&self, cx: i64, cy: i64) -> Option<ColumnId> {
        if cx < 0 || cy < 0 || cx >= i64::from(self.spec.grid_x) || cy >= i64::from(self.spec.grid_y) {
            return None;
        }
        Some(ColumnId(cy as u32 * self.spec.grid_x + cx as u32))
    }

    pub fn columns(&self) -> impl Iterator<Item = (ColumnId, (u32, u32))> + '_ {
        (0..self.num_columns()).map(move |c| (ColumnId(c), self.column_coords(ColumnId(c))))
    }

    /// First global id of `column`.
    pub fn first_neuron(&self, column: ColumnId) -> NeuronId {
        NeuronId(u64::from(column.0) * u64::from(self.spec.neurons_per_column))
    }

    pub fn neuron(&self, column: ColumnId, index: u32) -> NeuronId {
        NeuronId(self.first_neuron(column).0 + u64::from(index))
    }

    pub fn locate(&self, neuron: NeuronId) -> Result<(ColumnId, u32)> {
        if neuron.0 >= self.total_neurons() {
            return Err(Error::NeuronOutOfRange {
                id: neuron.0,
                total: self.total_neurons(),
            });
        }
        let npc = u64::from(self.spec.neurons_per_column);
        Ok((ColumnId((neuron.0 / npc) as u32), (neuron.0 % npc) as u32))
    }

    pub fn is_excitatory_index(&self, index: u32) -> bool {
        index < self.excitatory_per_column
    }

    pub fn is_excitatory(&self, neuron: NeuronId) -> Result<bool> {
        self.locate(neuron).map(|(_, i)| self.is_excitatory_index(i))
    }

    pub fn excitatory_per_column(&self) -> u32 {
        self.excitatory_per_column
    }

    /// Center-to-center distance in µm.
    pub fn column_distance(&self, a: ColumnId, b: ColumnId) -> f64 {
        let (ax, ay) = self.column_coords(a);
        let (bx, by) = self.column_coords(b);
        let dx = f64::from(ax) - f64::from(bx);
        let dy = f64::from(ay) - f64::from(by);
        self.spec.alpha * (dx * dx + dy * dy).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelShape {
    /// `A * exp(-r^2 / (2 sigma^2))`
    Gaussian,
    /// `A * exp(-r / lambda)`
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityKernel {
    pub shape: KernelShape,
    /// Probability at r = 0.
    pub amplitude: f64,
    /// sigma (Gaussian) or lambda (exponential), in µm.
    pub scale: f64,
    /// Minimum remote probability; pairs below it are never connected.
    pub cutoff: f64,
    /// Per-pair connection probability inside one column.
    pub local_probability: f64,
}

impl ConnectivityKernel {
    pub fn gaussian(amplitude: f64, sigma: f64, cutoff: f64, local_probability: f64) -> Result<Self> {
        Self::new(KernelShape::Gaussian, amplitude, sigma, cutoff, local_probability)
    }

    pub fn exponential(amplitude: f64, lambda: f64, cutoff: f64, local_probability: f64) -> Result<Self> {
        Self::new(KernelShape::Exponential, amplitude, lambda, cutoff, local_probability)
    }

    pub fn new(
        shape: KernelShape,
        amplitude: f64,
        scale: f64,
        cutoff: f64,
        local_probability: f64,
    ) -> Result<Self> {
        let k = Self {
            shape,
            amplitude,
            scale,
            cutoff,
            local_probability,
        };
        k.validate()?;
        Ok(k)
    }

    /// The 0.05 / 100 µm Gaussian with cutoff 1/1000 and local probability 0.8.
    pub fn paper_gaussian() -> Self {
        Self {
            shape: KernelShape::Gaussian,
            amplitude: 0.05,
            scale: 100.0,
            cutoff: 1e-3,
            local_probability: 0.8,
        }
    }

    /// The 0.03 / 290 µm exponential with cutoff 1/1000 and local probability 0.8.
    pub fn paper_exponential() -> Self {
        Self {
            shape: KernelShape::Exponential,
            amplitude: 0.03,
            scale: 290.0,
            cutoff: 1e-3,
            local_probability: 0.8,
        }
    }

    /// Checks `0 < A <= 1`, `scale > 0`, `0 < cutoff <= A` and the local
    /// probability range. A cutoff equal to the amplitude is accepted and
    /// means local-only connectivity.
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return Err(Error::invalid("kernel", "0 < amplitude <= 1"));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::invalid("kernel", "scale > 0"));
        }
        if !(self.cutoff > 0.0) {
            return Err(Error::invalid("kernel", "cutoff > 0"));
        }
        if self.cutoff > self.amplitude {
            return Err(Error::invalid(
                "kernel",
                "stencil cutoff must not exceed amplitude (cutoff <= amplitude)",
            ));
        }
        if !(0.0..=1.0).contains(&self.local_probability) {
            return Err(Error::invalid("kernel", "0 <= local_probability <= 1"));
        }
        Ok(())
    }

    /// Remote connection probability at distance `r` µm.
    pub fn probability(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::NegativeDistance(r));
        }
        Ok(self.probability_unchecked(r))
    }

    pub(crate) fn probability_unchecked(&self, r: f64) -> f64 {
        match self.shape {
            KernelShape::Gaussian => self.amplitude * (-(r * r) / (2.0 * self.scale * self.scale)).exp(),
            KernelShape::Exponential => self.amplitude * (-r / self.scale).exp(),
        }
    }

    /// Distance at which the probability falls to the cutoff.
    pub fn cutoff_radius(&self) -> f64 {
        let ln_ratio = (self.amplitude / self.cutoff).ln().max(0.0);
        match self.shape {
            KernelShape::Gaussian => self.scale * (2.0 * ln_ratio).sqrt(),
            KernelShape::Exponential => self.scale * ln_ratio,
        }
    }
}

/// Free-function form of [`ConnectivityKernel::probability`].
pub fn kernel_probability(kernel: &ConnectivityKernel, r: f64) -> Result<f64> {
    kernel.probability(r)
}

/// One reachable column offset and its connection probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StencilOffset {
    pub dx: i32,
    pub dy: i32,
    pub probability: f64,
}

/// The set of remote column offsets reachable from a source column.
///
/// `half_width` bounds the square; `offsets` holds only the entries whose
/// probability passes the cutoff, ordered by (dy, dx).
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub half_width: u32,
    pub offsets: Vec<StencilOffset>,
}

impl Stencil {
    pub fn side(&self) -> u32 {
        2 * self.half_width + 1
    }

    pub fn is_local_only(&self) -> bool {
        self.half_width == 0
    }

    pub fn probability_at(&self, dx: i32, dy: i32) -> Option<f64> {
        self.offsets
            .iter()
            .find(|o| o.dx == dx && o.dy == dy)
            .map(|o| o.probability)
    }

    pub fn build(kernel: &ConnectivityKernel, alpha: f64) -> Result<Self> {
        let half_width = stencil_halfwidth(kernel, alpha)?;
        let h = half_width as i32;
        let mut offsets = Vec::new();
        for dy in -h..=h {
            for dx in -h..=h {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let r = alpha * f64::from(dx * dx + dy * dy).sqrt();
                let p = kernel.probability_unchecked(r);
                if p >= kernel.cutoff {
                    offsets.push(StencilOffset { dx, dy, probability: p });
                }
            }
        }
        Ok(Self { half_width, offsets })
    }
}

/// Half-width `H = ceil(r*/alpha)` of the bounding square, where `r*` solves
/// `probability(r*) = cutoff`. Returns 0 (local-only) when the cutoff equals
/// the amplitude.
pub fn stencil_halfwidth(kernel: &ConnectivityKernel, alpha: f64) -> Result<u32> {
    kernel.validate()?;
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid("grid", "alpha > 0"));
    }
    if kernel.cutoff >= kernel.amplitude {
        return Ok(0);
    }
    Ok((kernel.cutoff_radius() / alpha).ceil() as u32)
}

/// Expected synapses projected by one neuron of an interior column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedDegree {
    pub local: f64,
    pub remote: f64,
}

impl ExpectedDegree {
    pub fn total(&self) -> f64 {
        self.local + self.remote
    }

    pub fn local_fraction(&self) -> f64 {
        let t = self.total();
        if t > 0.0 {
            self.local / t
        } else {
            0.0
        }
    }
}

pub fn expected_out_degree(kernel: &ConnectivityKernel, spec: &GridSpec) -> Result<ExpectedDegree> {
    let stencil = Stencil::build(kernel, spec.alpha)?;
    let npc = f64::from(spec.neurons_per_column);
    let local = kernel.local_probability * (npc - 1.0);
    let remote = npc * stencil.offsets.iter().map(|o| o.probability).sum::<f64>();
    Ok(ExpectedDegree { local, remote })
}

/// How the adaptation variable enters the membrane update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SfaCoupling {
    /// Subtract `w * dt / tau_sfa` each step.
    #[default]
    AdaptationRate,
    /// Treat `w` as a steady current-equivalent: subtract `w * (1 - exp(-dt / tau_m))`.
    Membrane,
}

/// LIF with spike-frequency adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub tau_m: f64,
    pub v_rest: f64,
    pub v_threshold: f64,
    pub v_reset: f64,
    pub tau_refractory: f64,
    pub tau_sfa: f64,
    pub sfa_increment: f64,
    pub j_exc: f64,
    pub j_inh: f64,
    #[serde(default)]
    pub sfa_coupling: SfaCoupling,
}

impl Default for NeuronParams {
    fn default() -> Self {
        Self {
            tau_m: 20.0,
            v_rest: -70.0,
            v_threshold: -50.0,
            v_reset: -60.0,
            tau_refractory: 2.0,
            tau_sfa: 120.0,
            sfa_increment: 1.0,
            j_exc: 0.4,
            j_inh: -2.0,
            sfa_coupling: SfaCoupling::AdaptationRate,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.tau_m,
            self.v_rest,
            self.v_threshold,
            self.v_reset,
            self.tau_refractory,
            self.tau_sfa,
            self.sfa_increment,
            self.j_exc,
            self.j_inh,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::invalid("neuron", "all parameters finite"));
        }
        if self.tau_m <= 0.0 || self.tau_sfa <= 0.0 {
            return Err(Error::invalid("neuron", "tau_m > 0 and tau_sfa > 0"));
        }
        if self.tau_refractory < 0.0 {
            return Err(Error::invalid("neuron", "tau_refractory >= 0"));
        }
        if self.v_reset >= self.v_threshold || self.v_rest >= self.v_threshold {
            return Err(Error::invalid("neuron", "v_reset < v_threshold and v_rest < v_threshold"));
        }
        if self.j_exc <= 0.0 || self.j_inh >= 0.0 {
            return Err(Error::invalid("neuron", "j_exc > 0 and j_inh < 0"));
        }
        Ok(())
    }
}

/// Afferent drive from outside the simulated network, aggregated into one
/// Poisson source per neuron.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExternalDrive {
    pub synapses_per_neuron: u32,
    /// Hz per synapse.
    pub rate_per_synapse: f64,
    /// mV jump per delivery.
    pub weight: f64,
}

impl Default for ExternalDrive {
    fn default() -> Self {
        Self {
            synapses_per_neuron: 540,
            rate_per_synapse: 3.0,
            weight: 0.7,
        }
    }
}

impl ExternalDrive {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_per_synapse.is_finite() && self.rate_per_synapse >= 0.0) {
            return Err(Error::invalid("external", "rate_per_synapse >= 0"));
        }
        if !self.weight.is_finite() {
            return Err(Error::invalid("external", "weight finite"));
        }
        Ok(())
    }

    /// Aggregate event rate per neuron in Hz.
    pub fn total_rate(&self) -> f64 {
        f64::from(self.synapses_per_neuron) * self.rate_per_synapse
    }

    /// Mean external deliveries per neuron per step of `dt_ms`.
    pub fn mean_per_step(&self, dt_ms: f64) -> f64 {
        self.total_rate() * dt_ms * 1e-3
    }
}
