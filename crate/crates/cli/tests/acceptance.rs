//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Runs sequentially so that the timing
//! criteria are not disturbed by each other.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_distr::{Distribution, Poisson};

use colsim::commands::{cmd_run, cmd_stats, cmd_sweep, problem_size};
use colsim::config::{preset_config, RunConfig};
use colsim_core::bench::{connectivity_cost_ratio, memory_per_synapse, speedup_efficiency, SimReport};
use colsim_core::connectome::{generate_synapses, DelayModel, TargetFilter, Wiring};
use colsim_core::distrib::{run_distributed, RunSpec, TransportKind};
use colsim_core::engine::{LifIntegrator, NeuronState};
use colsim_core::model::{
    expected_out_degree, stencil_halfwidth, ColumnGrid, ColumnId, ConnectivityKernel, GridSpec, KernelShape,
    NeuronParams,
};
use colsim_core::rng::{KeyedRng, Stream};

enum Verdict {
    Pass,
    Fail,
    NotRun,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

/// Exact and statistical criteria always gate the exit status. Wall-clock
/// criteria gate it only when COLSIM_STRICT_PERF is set, since they depend
/// on the machine the suite runs on.
#[derive(Clone, Copy, PartialEq)]
enum Gate {
    Always,
    Performance,
}

fn judge(ok: bool, detail: String) -> Outcome {
    Outcome {
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        detail,
    }
}

fn kernels() -> [ConnectivityKernel; 2] {
    [ConnectivityKernel::paper_gaussian(), ConnectivityKernel::paper_exponential()]
}

fn label(shape: KernelShape) -> &'static str {
    match shape {
        KernelShape::Gaussian => "gaussian",
        KernelShape::Exponential => "exponential",
    }
}

fn oracle_kernel(k: &ConnectivityKernel, r: f64) -> f64 {
    match k.shape {
        KernelShape::Gaussian => k.amplitude * (-(r * r) / (2.0 * k.scale * k.scale)).exp(),
        KernelShape::Exponential => k.amplitude * (-r / k.scale).exp(),
    }
}

fn oracle_pair(spec: &GridSpec, k: &ConnectivityKernel, s: u64, t: u64) -> f64 {
    let npc = u64::from(spec.neurons_per_column);
    let (sc, tc) = (s / npc, t / npc);
    if sc == tc {
        return k.local_probability;
    }
    let gx = u64::from(spec.grid_x);
    let dx = (sc % gx) as f64 - (tc % gx) as f64;
    let dy = (sc / gx) as f64 - (tc / gx) as f64;
    let p = oracle_kernel(k, spec.alpha * dx.hypot(dy));
    if p >= k.cutoff {
        p
    } else {
        0.0
    }
}

fn wiring(spec: GridSpec, kernel: ConnectivityKernel, seed: u64) -> Wiring {
    Wiring::new(
        ColumnGrid::new(spec).unwrap(),
        kernel,
        &NeuronParams::default(),
        DelayModel::default(),
        0.1,
        seed,
    )
    .unwrap()
}

fn with_out(mut config: RunConfig, dir: &Path) -> RunConfig {
    config.output.dir = dir.to_path_buf();
    config
}

fn stencil_reproduction() -> Outcome {
    let began = Instant::now();
    let g = stencil_halfwidth(&ConnectivityKernel::paper_gaussian(), 100.0).unwrap();
    let e = stencil_halfwidth(&ConnectivityKernel::paper_exponential(), 100.0).unwrap();
    let secs = began.elapsed().as_secs_f64();
    let (gs, es) = (2 * g + 1, 2 * e + 1);
    judge(
        gs == 7 && es == 21 && secs < 1.0,
        format!("gaussian {gs}x{gs} (want 7x7), exponential {es}x{es} (want 21x21), {secs:.2e} s (< 1 s)"),
    )
}

fn problem_size_arithmetic(out: &Path) -> Outcome {
    let began = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (size, columns, neurons, rounded) in [
        ("24x24", 576, 714_240, "0.7M"),
        ("48x48", 2304, 2_856_960, "2.9M"),
        ("96x96", 9216, 11_427_840, "11.4M"),
    ] {
        for kernel in ["gaussian", "exponential"] {
            let config = with_out(preset_config(&format!("paper-{kernel}-{size}")).unwrap(), out);
            let p = problem_size(&config).unwrap();
            let side = if kernel == "gaussian" { 7 } else { 21 };
            ok &= p.columns == columns && p.neurons == neurons && p.neurons_label == rounded && p.stencil_side == side;
            if kernel == "gaussian" {
                parts.push(format!("{size}: {} columns, {} neurons ({})", p.columns, p.neurons, p.neurons_label));
            }
        }
    }
    // the full stats command on the largest preset must stay analytic
    let (stats, _) = cmd_stats(&with_out(preset_config("paper-gaussian-96x96").unwrap(), out)).unwrap();
    ok &= stats.sampled.is_none() && stats.sampling_skipped.is_some() && stats.problem.stencil_side == 7;
    let secs = began.elapsed().as_secs_f64();
    ok &= secs < 1.0;
    judge(ok, format!("{}; {secs:.3} s (< 1 s)", parts.join("; ")))
}

fn metric_formulas() -> Outcome {
    let table = speedup_efficiency(&[(1, 2.8e-7), (96, 4.2e-9)]).unwrap();
    let row = table.row(96).unwrap();
    let sig3 = |x: f64| {
        let mag = 10f64.powi(2 - x.abs().log10().floor() as i32);
        (x * mag).round() / mag
    };
    judge(
        sig3(row.speedup) == 66.7 && sig3(row.efficiency) == 0.694,
        format!("speedup {:.4} (want 66.7), efficiency {:.4} (want 0.694)", row.speedup, row.efficiency),
    )
}

fn partition_invariance(out: &Path) -> Outcome {
    let began = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for kernel in ["gaussian", "exponential"] {
        let mut dumps = Vec::new();
        for p in [1u32, 4, 16] {
            let dir = out.join(format!("inv-{kernel}-{p}"));
            let mut config = with_out(preset_config(&format!("desk-{kernel}-8x8")).unwrap(), &dir);
            config.workers = vec![p];
            config.seed = 42;
            config.output.dump_raster = true;
            let (report, artifacts) = cmd_run(&config).unwrap();
            let raster = artifacts
                .files
                .iter()
                .find(|f| f.file_name().unwrap().to_string_lossy().starts_with("raster-"))
                .unwrap();
            dumps.push((report.total_spikes, fs::read(raster).unwrap()));
        }
        let same = dumps.windows(2).all(|w| w[0].1 == w[1].1);
        ok &= same && dumps[0].0 > 0;
        parts.push(format!(
            "{kernel}: {} spikes, {} raster bytes, identical across P=1,4,16: {same}",
            dumps[0].0,
            dumps[0].1.len()
        ));
    }
    let secs = began.elapsed().as_secs_f64();
    ok &= secs < 300.0;
    judge(ok, format!("{}; {secs:.1} s (< 300 s)", parts.join("; ")))
}

fn connectome_statistics() -> Outcome {
    let began = Instant::now();
    let spec = GridSpec::new(12, 12, 100.0, 124, 0.8).unwrap();
    let npc = 124u64;
    let mut ok = true;
    let mut parts = Vec::new();
    for kernel in kernels() {
        let w = wiring(spec, kernel, 7);
        let h = i64::from(w.stencil().half_width);
        let mut degree = vec![0u64; spec.total_neurons() as usize];
        let mut violations = 0u64;
        let all: Vec<ColumnId> = (0..144).map(ColumnId).collect();
        w.for_each_synapse(&all, |s| {
            degree[s.source.0 as usize] += 1;
            let (sc, tc) = (s.source.0 / npc, s.target.0 / npc);
            let (dx, dy) = ((sc % 12) as i64 - (tc % 12) as i64, (sc / 12) as i64 - (tc / 12) as i64);
            if s.source == s.target || dx.abs() > h || dy.abs() > h || oracle_pair(&spec, &kernel, s.source.0, s.target.0) <= 0.0 {
                violations += 1;
            }
        });
        // mean and binomial variance of total degree over any column subset
        let moments = |columns: &[u64]| {
            let (mut m, mut v) = (0.0, 0.0);
            for &sc in columns {
                for tc in 0..144u64 {
                    let t = tc * npc + u64::from(tc == sc);
                    let p = oracle_pair(&spec, &kernel, sc * npc, t);
                    let pairs = if tc == sc { (npc * (npc - 1)) as f64 } else { (npc * npc) as f64 };
                    m += pairs * p;
                    v += pairs * p * (1.0 - p);
                }
            }
            (m, v)
        };
        let observed = |columns: &[u64]| -> u64 {
            columns.iter().flat_map(|c| c * npc..(c + 1) * npc).map(|i| degree[i as usize]).sum()
        };
        let reach = w.stencil().offsets.iter().map(|o| o.dx.abs().max(o.dy.abs())).max().unwrap_or(0) as u64;
        let interior: Vec<u64> = (0..144)
            .filter(|c| (c % 12).min(11 - c % 12) >= reach && (c / 12).min(11 - c / 12) >= reach)
            .collect();
        let everything: Vec<u64> = (0..144).collect();
        let e = expected_out_degree(&kernel, &spec).unwrap();

        let (m_all, v_all) = moments(&everything);
        let z_all = (observed(&everything) as f64 - m_all) / v_all.sqrt();
        let mean_all = observed(&everything) as f64 / spec.total_neurons() as f64;
        let mut line = format!(
            "{}: mean out-degree {mean_all:.2} vs edge-clipped expectation {:.2} (z={z_all:.2})",
            label(kernel.shape),
            m_all / spec.total_neurons() as f64
        );
        ok &= z_all.abs() < 3.0 && violations == 0;
        if !interior.is_empty() {
            let (m_in, v_in) = moments(&interior);
            let n_in = (interior.len() as u64 * npc) as f64;
            let z_in = (observed(&interior) as f64 - m_in) / v_in.sqrt();
            ok &= z_in.abs() < 3.0 && (m_in / n_in - e.total()).abs() < 1e-9 * e.total();
            line += &format!(
                ", interior {:.2} vs expected_out_degree {:.2} (z={z_in:.2})",
                observed(&interior) as f64 / n_in,
                e.total()
            );
        } else {
            line += ", no fully interior column at this half-width";
        }
        line += &format!(", stencil violations {violations}");
        parts.push(line);
    }
    let secs = began.elapsed().as_secs_f64();
    ok &= secs < 120.0;
    judge(ok, format!("{}; |z| < 3; {secs:.1} s (< 120 s)", parts.join("; ")))
}

fn oracle_equivalence() -> Outcome {
    let spec = GridSpec::new(2, 2, 100.0, 4, 0.8).unwrap();
    let params = NeuronParams::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for kernel in kernels() {
        let seed = 11;
        let w = wiring(spec, kernel, seed);
        let got = generate_synapses(&w, &TargetFilter::All, None).unwrap();
        let rng = KeyedRng::new(seed, Stream::Connectome);
        let mut expected = Vec::new();
        let mut brute_total = 0.0;
        for s in 0..16u64 {
            for t in 0..16u64 {
                if s == t {
                    continue;
                }
                let p = oracle_pair(&spec, &kernel, s, t);
                brute_total += p;
                if p > 0.0 && rng.bernoulli(s, t, p) {
                    let weight = if s % 4 < 3 { params.j_exc } else { params.j_inh } as f32;
                    expected.push((s, t, weight, 10u32));
                }
            }
        }
        let got: Vec<_> = got.iter().map(|r| (r.source.0, r.target.0, r.weight, r.delay)).collect();
        let same = got == expected;
        let total_err = (w.expected_total() - brute_total).abs();

        // expected_out_degree assumes a full stencil: check it on the centre
        // of a grid large enough to hold one
        let side = 2 * stencil_halfwidth(&kernel, 100.0).unwrap() + 1;
        let big = GridSpec::new(side, side, 100.0, 4, 0.8).unwrap();
        let centre = u64::from(side / 2 * side + side / 2) * 4;
        let brute: f64 = (0..big.total_neurons())
            .filter(|&t| t != centre)
            .map(|t| oracle_pair(&big, &kernel, centre, t))
            .sum();
        let degree_err = (expected_out_degree(&kernel, &big).unwrap().total() - brute).abs();
        ok &= same && total_err <= 1e-9 && degree_err <= 1e-9;
        parts.push(format!(
            "{}: {} edges identical: {same}; 2x2 pair-sum error {total_err:.1e}; interior degree error {degree_err:.1e}",
            label(kernel.shape),
            got.len()
        ));
    }
    judge(ok, format!("{} (tolerance 1e-9)", parts.join("; ")))
}

fn reference_rate(p: &NeuronParams, spec: &RunSpec, duration_ms: f64, warmup_ms: f64, seed: u64) -> f64 {
    let dt = spec.dt;
    let d = &spec.drive;
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let poisson = Poisson::new(f64::from(d.synapses_per_neuron) * d.rate_per_synapse * dt * 1e-3).unwrap();
    let decay = (-dt / p.tau_m).exp();
    let adapt_decay = (-dt / p.tau_sfa).exp();
    let refractory = (p.tau_refractory / dt).round() as u64;
    let warmup = (warmup_ms / dt).round() as u64;
    let (mut v, mut w, mut blocked, mut spikes) = (p.v_rest, 0.0f64, 0u64, 0u64);
    for k in 0..(duration_ms / dt).round() as u64 {
        let kicks: f64 = poisson.sample(&mut rng);
        let w_prev = w;
        w *= adapt_decay;
        if k < blocked {
            v = p.v_reset;
            continue;
        }
        v = p.v_rest + (v - p.v_rest) * decay + kicks * d.weight - w_prev * dt / p.tau_sfa;
        if v >= p.v_threshold {
            v = p.v_reset;
            w += p.sfa_increment;
            blocked = k + refractory;
            spikes += u64::from(k >= warmup);
        }
    }
    spikes as f64 / ((duration_ms - warmup_ms) * 1e-3)
}

fn dynamics_sanity() -> Outcome {
    let kernel = ConnectivityKernel::gaussian(0.05, 100.0, 0.05, 0.0).unwrap();
    let mut spec = RunSpec::desk(GridSpec::new(2, 2, 100.0, 50, 0.8).unwrap(), kernel, 4);
    spec.duration_ms = 3000.0;
    spec.warmup_ms = 500.0;
    let simulated = run_distributed(&spec, &TransportKind::Inproc).unwrap().report.mean_rate_hz;
    let reference =
        (0..40).map(|i| reference_rate(&spec.neuron, &spec, 20_000.0, 500.0, i)).sum::<f64>() / 40.0;
    let rel = (simulated - reference).abs() / reference;

    let params = NeuronParams::default();
    let lif = LifIntegrator::new(&params, 0.1).unwrap();
    let mut worst: f64 = 0.0;
    for drive in [21.0, 25.0, 30.0, 50.0] {
        let mut state = NeuronState::at_rest(&params);
        let input = drive * (1.0 - (-0.1 / params.tau_m).exp());
        let k = (0..100_000u64).find(|&k| lif.step(&mut state, input, k)).unwrap();
        let t_star = params.tau_m * (drive / (drive - 20.0)).ln();
        worst = worst.max(((k + 1) as f64 * 0.1 - t_star).abs());
    }
    judge(
        rel < 0.05 && worst <= 0.1,
        format!(
            "external-only rate {simulated:.2} Hz vs reference {reference:.2} Hz (rel {rel:.3} < 0.05); \
             first-spike error {worst:.3} ms (<= dt 0.1 ms)"
        ),
    )
}

const COST_REPEATS: usize = 3;

fn desk_12x12(kernel: &str, out: &Path, repeat: usize) -> SimReport {
    let dir = out.join(format!("{kernel}-{repeat}"));
    let mut config = with_out(preset_config(&format!("desk-{kernel}-12x12")).unwrap(), &dir);
    config.workers = vec![4];
    cmd_run(&config).unwrap().0
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn relative_cost(gauss: &[SimReport], exp: &[SimReport]) -> Outcome {
    let wall = |rs: &[SimReport]| median(rs.iter().map(|r| r.wall_per_sim_second().unwrap()).collect());
    let (g, e) = (wall(gauss), wall(exp));
    let ratio = connectivity_cost_ratio(&exp[0], &gauss[0]).unwrap();
    let cost = |rs: &[SimReport]| median(rs.iter().map(|r| r.cost_per_event().unwrap()).collect());
    let delivered = |r: &SimReport| r.delivered_events as f64 / (r.simulated_ms * 1e-3);
    judge(
        e > g,
        format!(
            "12x12x124, P=4, median of {COST_REPEATS}: wall/sim-s exponential {e:.3} s vs gaussian {g:.3} s \
             (elapsed ratio {:.3}); cost-per-event ratio {:.2} (full-scale reference range 1.9-2.3, not asserted); \
             rates {:.1} / {:.1} Hz; delivered events/s {:.3e} / {:.3e}; analytic schema check {}",
            e / g,
            cost(exp) / cost(gauss),
            exp[0].mean_rate_hz,
            gauss[0].mean_rate_hz,
            delivered(&exp[0]),
            delivered(&gauss[0]),
            if ratio.elapsed_ratio.is_some() { "ok" } else { "missing" },
        ),
    )
}

fn strong_scaling(out: &Path) -> Outcome {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut config = with_out(preset_config("desk-gaussian-24x24").unwrap(), out);
    config.workers = vec![1, 2, 4, 8];
    let (sweep, _) = cmd_sweep(&config).unwrap();
    let table: Vec<String> = sweep
        .scaling
        .rows
        .iter()
        .map(|r| format!("P={} speedup {:.2} eff {:.2}", r.workers, r.speedup, r.efficiency))
        .collect();
    let monotone = sweep.scaling.rows.windows(2).all(|w| w[1].speedup > w[0].speedup);
    let eff8 = sweep.scaling.row(8).unwrap().efficiency;
    let detail = format!(
        "24x24x124 gaussian: {}; monotone {monotone}, efficiency at P=8 {eff8:.2} (want >= 0.5)",
        table.join(", ")
    );
    if cores < 8 {
        return Outcome {
            verdict: Verdict::NotRun,
            detail: format!("precondition (8 cores) unmet, {cores} available; measured for the record: {detail}"),
        };
    }
    judge(monotone && eff8 >= 0.5, detail)
}

fn memory_comparability(gauss: &SimReport, exp: &SimReport) -> Outcome {
    let g = memory_per_synapse(gauss).unwrap().analytic;
    let e = memory_per_synapse(exp).unwrap().analytic;
    let rel = (e - g).abs() / g.min(e);
    let rss = |r: &SimReport| memory_per_synapse(r).and_then(|m| m.resident).map_or("n/a".into(), |b| format!("{b:.1}"));
    judge(
        gauss.neurons == exp.neurons && rel <= 0.2,
        format!(
            "analytic bytes/synapse gaussian {g:.2}, exponential {e:.2} (difference {:.1}% <= 20%); \
             process RSS/synapse {} / {} (reported only)",
            rel * 100.0,
            rss(gauss),
            rss(exp)
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    // interleaved so that drifts in machine load hit both kernels alike
    let (mut gauss, mut exp) = (Vec::new(), Vec::new());
    for repeat in 0..COST_REPEATS {
        gauss.push(desk_12x12("gaussian", out, repeat));
        exp.push(desk_12x12("exponential", out, repeat));
    }
    let criteria: Vec<(&str, Gate, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("stencil reproduction", Gate::Always, Box::new(stencil_reproduction)),
        ("problem-size arithmetic", Gate::Always, Box::new(|| problem_size_arithmetic(out))),
        ("metric-formula reproduction", Gate::Always, Box::new(metric_formulas)),
        ("partition invariance", Gate::Always, Box::new(|| partition_invariance(out))),
        ("connectome statistics", Gate::Always, Box::new(connectome_statistics)),
        ("oracle equivalence", Gate::Always, Box::new(oracle_equivalence)),
        ("dynamics sanity", Gate::Always, Box::new(dynamics_sanity)),
        ("relative connectivity cost", Gate::Performance, Box::new(|| relative_cost(&gauss, &exp))),
        ("strong scaling shape", Gate::Performance, Box::new(|| strong_scaling(out))),
        ("memory comparability", Gate::Always, Box::new(|| memory_comparability(&gauss[0], &exp[0]))),
    ];
    let strict_perf = std::env::var_os("COLSIM_STRICT_PERF").is_some();
    let mut failed = 0;
    for (i, (name, gate, check)) in criteria.into_iter().enumerate() {
        let o = check();
        let tag = match o.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                if gate == Gate::Always || strict_perf {
                    failed += 1;
                }
                "FAIL"
            }
            Verdict::NotRun => "NOT RUN",
        };
        println!("acceptance {:>2} {tag}: {name}: {}", i + 1, o.detail);
    }
    if failed > 0 {
        eprintln!("{failed} gating acceptance criteria failed");
        std::process::exit(1);
    }
}
