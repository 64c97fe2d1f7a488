//! Performance metrics over run reports: cost per synaptic event, strong
//! scaling tables, bytes per synapse and kernel cost ratios, with CSV and
//! JSON emitters.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::MemoryAccount;
use crate::error::{Error, Result};
use crate::model::KernelShape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerTiming {
    pub worker: u32,
    pub neurons: u64,
    pub synapses: u64,
    pub wall_seconds: f64,
    pub compute_seconds: f64,
    pub exchange_wait_seconds: f64,
}

/// Measurements of one run. Rates and timings cover only the post-warm-up
/// interval (`measured_ms`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config_digest: String,
    pub grid_x: u32,
    pub grid_y: u32,
    pub neurons_per_column: u32,
    pub kernel: KernelShape,
    pub stencil_half_width: u32,
    pub workers: u32,
    pub tiles: (u32, u32),
    pub transport: String,
    pub seed: u64,
    pub dt_ms: f64,
    pub simulated_ms: f64,
    pub measured_ms: f64,
    pub neurons: u64,
    pub recurrent_synapses: u64,
    pub external_synapses_per_neuron: u32,
    pub total_spikes: u64,
    pub measured_spikes: u64,
    pub mean_rate_hz: f64,
    pub delivered_events: u64,
    pub external_events: u64,
    pub spikes_sent: u64,
    pub messages_sent: u64,
    /// Slowest worker's window-loop time over the measured interval.
    pub wall_seconds: f64,
    pub per_worker: Vec<WorkerTiming>,
    pub memory: MemoryAccount,
    /// OS resident set size at report time, when the platform exposes it.
    pub resident_bytes: Option<u64>,
}

impl SimReport {
    /// Elapsed wall time per simulated second of activity.
    pub fn wall_per_sim_second(&self) -> Option<f64> {
        (self.measured_ms > 0.0).then(|| self.wall_seconds / (self.measured_ms * 1e-3))
    }

    pub fn cost_per_event(&self) -> Option<f64> {
        cost_per_synaptic_event(self.wall_per_sim_second()?, self.recurrent_synapses, self.mean_rate_hz)
    }

    /// Cross-check metric: wall time divided by recurrent deliveries
    /// actually performed.
    pub fn cost_per_delivered_event(&self) -> Option<f64> {
        (self.delivered_events > 0).then(|| self.wall_seconds / self.delivered_events as f64)
    }

    /// Recurrent plus external synapses.
    pub fn total_equivalent_synapses(&self) -> u64 {
        self.recurrent_synapses + self.neurons * u64::from(self.external_synapses_per_neuron)
    }

    pub fn grid_label(&self) -> String {
        format!("{}x{}", self.grid_x, self.grid_y)
    }
}

/// `wall / (synapses * rate)`; `None` when the rate or synapse count is zero.
pub fn cost_per_synaptic_event(wall_per_sim_second: f64, synapses: u64, rate_hz: f64) -> Option<f64> {
    (synapses > 0 && rate_hz > 0.0).then(|| wall_per_sim_second / (synapses as f64 * rate_hz))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub workers: u32,
    pub time: f64,
    pub speedup: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
}

impl ScalingTable {
    pub fn row(&self, workers: u32) -> Option<&ScalingRow> {
        self.rows.iter().find(|r| r.workers == workers)
    }
}

/// Strong-scaling speedup and efficiency relative to the smallest worker
/// count. `time` may be wall time per simulated second or cost per event;
/// only ratios matter.
pub fn speedup_efficiency(points: &[(u32, f64)]) -> Result<ScalingTable> {
    let mut seen = BTreeSet::new();
    for &(p, t) in points {
        if !seen.insert(p) {
            return Err(Error::DuplicateRow(p));
        }
        if !(t > 0.0) || p == 0 {
            return Err(Error::EmptyTable);
        }
    }
    let &(base_p, base_t) = points.iter().min_by_key(|(p, _)| *p).ok_or(Error::EmptyTable)?;
    let mut rows: Vec<ScalingRow> = points
        .iter()
        .map(|&(p, t)| {
            let speedup = base_t / t;
            ScalingRow {
                workers: p,
                time: t,
                speedup,
                efficiency: speedup * f64::from(base_p) / f64::from(p),
            }
        })
        .collect();
    rows.sort_by_key(|r| r.workers);
    Ok(ScalingTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BytesPerSynapse {
    pub analytic: f64,
    /// Resident-set probe divided by synapses; never mixed into `analytic`.
    pub resident: Option<f64>,
}

pub fn memory_per_synapse(report: &SimReport) -> Option<BytesPerSynapse> {
    let n = report.recurrent_synapses;
    (n > 0).then(|| BytesPerSynapse {
        analytic: report.memory.total() as f64 / n as f64,
        resident: report.resident_bytes.map(|b| b as f64 / n as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRatio {
    /// Exponential cost per event over Gaussian cost per event.
    pub cost_ratio: Option<f64>,
    /// Raw wall time per simulated second, same order.
    pub elapsed_ratio: Option<f64>,
}

pub fn connectivity_cost_ratio(exponential: &SimReport, gaussian: &SimReport) -> Result<CostRatio> {
    if (exponential.grid_x, exponential.grid_y, exponential.neurons_per_column)
        != (gaussian.grid_x, gaussian.grid_y, gaussian.neurons_per_column)
    {
        return Err(Error::Mismatch(format!(
            "grid {}x{}x{} vs {}x{}x{}",
            exponential.grid_x,
            exponential.grid_y,
            exponential.neurons_per_column,
            gaussian.grid_x,
            gaussian.grid_y,
            gaussian.neurons_per_column
        )));
    }
    if exponential.workers != gaussian.workers {
        return Err(Error::Mismatch(format!(
            "worker counts {} vs {}",
            exponential.workers, gaussian.workers
        )));
    }
    let ratio = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    Ok(CostRatio {
        cost_ratio: ratio(exponential.cost_per_event(), gaussian.cost_per_event()),
        elapsed_ratio: ratio(exponential.wall_per_sim_second(), gaussian.wall_per_sim_second()),
    })
}

/// Resident set size from `/proc/self/status`.
pub fn resident_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// One CSV/JSON row. Column order is part of the output format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub config_digest: String,
    pub grid: String,
    pub kernel: KernelShape,
    pub workers: u32,
    pub synapses: u64,
    pub rate_hz: f64,
    pub wall_per_sim_s: Option<f64>,
    pub cost_per_event: Option<f64>,
    pub speedup: Option<f64>,
    pub efficiency: Option<f64>,
    pub bytes_per_synapse: Option<f64>,
}

pub const CSV_HEADER: [&str; 11] = [
    "config_digest",
    "grid",
    "kernel",
    "workers",
    "synapses",
    "rate_hz",
    "wall_per_sim_s",
    "cost_per_event",
    "speedup",
    "efficiency",
    "bytes_per_synapse",
];

impl RunRow {
    pub fn from_report(report: &SimReport, scaling: Option<&ScalingRow>) -> Self {
        Self {
            config_digest: report.config_digest.clone(),
            grid: report.grid_label(),
            kernel: report.kernel,
            workers: report.workers,
            synapses: report.recurrent_synapses,
            rate_hz: report.mean_rate_hz,
            wall_per_sim_s: report.wall_per_sim_second(),
            cost_per_event: report.cost_per_event(),
            speedup: scaling.map(|s| s.speedup),
            efficiency: scaling.map(|s| s.efficiency),
            bytes_per_synapse: memory_per_synapse(report).map(|m| m.analytic),
        }
    }
}

/// Rows sorted by (grid, kernel, workers) for direct plotting.
pub fn write_csv<W: Write>(w: W, rows: &[RunRow]) -> Result<()> {
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| {
        (a.grid.as_str(), a.kernel as u8, a.workers).cmp(&(b.grid.as_str(), b.kernel as u8, b.workers))
    });
    let mut out = csv::Writer::from_writer(w);
    for r in &rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<RunRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(Error::from)
}

pub fn write_json<W: Write, T: Serialize>(w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(w, value)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn synthetic(kernel: KernelShape, wall: f64, synapses: u64, rate: f64) -> SimReport {
        SimReport {
            config_digest: "d".into(),
            grid_x: 4,
            grid_y: 4,
            neurons_per_column: 10,
            kernel,
            stencil_half_width: 3,
            workers: 2,
            tiles: (1, 2),
            transport: "inproc".into(),
            seed: 1,
            dt_ms: 0.1,
            simulated_ms: 1200.0,
            measured_ms: 1000.0,
            neurons: 160,
            recurrent_synapses: synapses,
            external_synapses_per_neuron: 540,
            total_spikes: 0,
            measured_spikes: 0,
            mean_rate_hz: rate,
            delivered_events: 100,
            external_events: 0,
            spikes_sent: 0,
            messages_sent: 0,
            wall_seconds: wall,
            per_worker: vec![],
            memory: MemoryAccount {
                synapses: synapses * 12,
                ..Default::default()
            },
            resident_bytes: None,
        }
    }

    #[test]
    fn cost_formula() {
        assert_relative_eq!(cost_per_synaptic_event(1.0, 1_000_000, 1.0).unwrap(), 1e-6);
        assert_relative_eq!(
            cost_per_synaptic_event(100.0, 900_000_000, 7.5).unwrap(),
            1.481_481_481_481_481_4e-8,
            max_relative = 1e-12
        );
        assert_eq!(cost_per_synaptic_event(1.0, 10, 0.0), None);
    }

    #[test]
    fn scaling_identities() {
        let t = speedup_efficiency(&[(1, 2.8e-7), (96, 4.2e-9)]).unwrap();
        assert_relative_eq!(t.row(96).unwrap().speedup, 66.666_666, epsilon = 1e-4);
        assert_relative_eq!(t.row(96).unwrap().efficiency, 0.694_444, epsilon = 1e-5);
        let one = speedup_efficiency(&[(4, 3.0)]).unwrap();
        assert_eq!((one.rows[0].speedup, one.rows[0].efficiency), (1.0, 1.0));
        let ideal: Vec<(u32, f64)> = [2, 4, 8, 16].iter().map(|&p| (p, 64.0 / f64::from(p))).collect();
        assert!(speedup_efficiency(&ideal)
            .unwrap()
            .rows
            .iter()
            .all(|r| (r.efficiency - 1.0).abs() < 1e-12));
        assert!(matches!(speedup_efficiency(&[(2, 1.0), (2, 0.5)]), Err(Error::DuplicateRow(2))));
        assert!(matches!(speedup_efficiency(&[]), Err(Error::EmptyTable)));
    }

    #[test]
    fn cost_ratio_cases() {
        let g = synthetic(KernelShape::Gaussian, 10.0, 1000, 5.0);
        assert_eq!(connectivity_cost_ratio(&g, &g).unwrap().cost_ratio, Some(1.0));
        let e = synthetic(KernelShape::Exponential, 20.0, 1000, 5.0);
        let r = connectivity_cost_ratio(&e, &g).unwrap();
        assert_relative_eq!(r.cost_ratio.unwrap(), 2.0);
        assert_relative_eq!(r.elapsed_ratio.unwrap(), 2.0);
        let mut other = g.clone();
        other.workers = 3;
        assert!(connectivity_cost_ratio(&e, &other).is_err());
    }

    #[test]
    fn bytes_per_synapse_amortizes() {
        let mut r = synthetic(KernelShape::Gaussian, 1.0, 1000, 1.0);
        r.memory.neuron_state = 4000;
        let small = memory_per_synapse(&r).unwrap().analytic;
        r.recurrent_synapses = 2000;
        r.memory.synapses = 2000 * 12;
        let large = memory_per_synapse(&r).unwrap().analytic;
        assert!(large < small && large > 12.0);
        r.recurrent_synapses = 0;
        assert!(memory_per_synapse(&r).is_none());
    }

    #[test]
    fn csv_is_sorted_and_reparseable() {
        let a = RunRow::from_report(&synthetic(KernelShape::Exponential, 2.0, 10, 1.0), None);
        let mut b = RunRow::from_report(&synthetic(KernelShape::Gaussian, 1.0, 10, 1.0), None);
        b.workers = 8;
        let mut buf = Vec::new();
        write_csv(&mut buf, &[a.clone(), b.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&CSV_HEADER.join(",")));
        assert_eq!(read_csv(&buf[..]).unwrap(), vec![b, a]);
    }
}
