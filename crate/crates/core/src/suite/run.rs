//! Execute a sweep config end to end.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use super::analysis::analyze;
use super::config::{spec_for, AnalysisConfig, BackendKind, OutputFormat, SweepConfig};
use super::report::{plot_files, results_csv};
use super::{PlotSpec, ResultRow, SuiteError, SuiteResults};
use crate::backend::bridge::{resolve_bridge_path, BridgeBackend};
use crate::backend::replay::ReplayBackend;
use crate::backend::{Backend, ExecutionPolicy, MeasurementRecord};
use crate::kernels::memory::STATIC_SHARED_LIMIT;
use crate::kernels::{generate, GenContext, KernelSpec, WorkloadClass};
use crate::metrics::{self, Aggregation};
use crate::power::{average_power, sample_during, PowerError};

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct SuiteOverrides {
    pub backend: Option<BackendKind>,
    /// Replace the config's fixtures; resolved against the working directory.
    pub fixtures: Vec<PathBuf>,
    pub device: Option<u32>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSummary {
    pub out_dir: PathBuf,
    pub artifacts: Vec<PathBuf>,
    pub results: SuiteResults,
}

/// Open every backend the config names: one per replay fixture, or the bridge.
pub fn open_backends(
    cfg: &SweepConfig,
    base: &Path,
    ov: &SuiteOverrides,
    workdir: &Path,
) -> Result<Vec<Box<dyn Backend>>, SuiteError> {
    let kind = ov.backend.unwrap_or(cfg.backend.kind);
    match kind {
        BackendKind::Replay => {
            let paths: Vec<PathBuf> = if ov.fixtures.is_empty() {
                cfg.backend.fixtures.iter().map(|p| cfg.resolve(base, p)).collect()
            } else {
                ov.fixtures.clone()
            };
            if paths.is_empty() {
                return Err(SuiteError::config("backend.fixtures", "replay needs at least one fixture"));
            }
            paths
                .iter()
                .map(|p| {
                    ReplayBackend::load(p)
                        .map(|b| Box::new(b) as Box<dyn Backend>)
                        .map_err(|e| SuiteError::config("backend.fixtures", format!("{}: {e}", p.display())))
                })
                .collect()
        }
        BackendKind::Gpu => {
            let bridge = resolve_bridge_path(cfg.backend.bridge.as_deref().map(|p| cfg.resolve(base, p)).as_deref());
            let device = ov.device.unwrap_or(cfg.backend.device);
            let b = BridgeBackend::spawn(&bridge, device, workdir.to_path_buf())
                .map_err(|e| SuiteError::Backend { spec: "device_info".into(), source: e })?;
            Ok(vec![Box::new(b)])
        }
    }
}

fn plot_spec(cfg: &SweepConfig) -> PlotSpec {
    let families = cfg.families();
    let x = match &cfg.analysis {
        AnalysisConfig::Saturation { x, .. } | AnalysisConfig::Crossover { x } => x.clone(),
        _ => {
            let varying =
                cfg.axes.iter().find(|(n, v)| v.expand(n).map(|e| e.len() > 1).unwrap_or(false) && *n != "mma");
            varying.or_else(|| cfg.axes.first()).map(|(n, _)| n.clone()).unwrap_or_default()
        }
    };
    let (y, label) = match families.first() {
        Some(WorkloadClass::MmaSync) => ("ipc_per_sm", "warp instructions per cycle per SM"),
        Some(f) if f.is_scalar_compute() => ("completion_latency", "cycles per instruction"),
        Some(WorkloadClass::L2WarpLoadStore) => ("access_latency", "cycles per warp"),
        Some(WorkloadClass::GlobalBandwidthRead | WorkloadClass::GlobalBandwidthWrite) => ("bandwidth_gbps", "GB/s"),
        _ => ("access_latency", "cycles per access"),
    };
    PlotSpec { log_x: x == "working_set_bytes", x, y: y.into(), y_label: label.into() }
}

/// Reduce one record to the metrics its family supports.
pub fn reduce(
    record: &MeasurementRecord,
    overhead: u64,
    agg: Aggregation,
    avg_power_w: Option<f64>,
) -> Result<IndexMap<String, f64>, metrics::MetricsError> {
    let spec = &record.spec;
    let mut m: IndexMap<String, f64> = IndexMap::new();
    if spec.workload.is_compute() {
        let c = metrics::completion_latency(record, overhead, agg)?;
        if spec.ilp == 1 {
            m.insert("true_latency".into(), c.completion_latency_cycles.unwrap_or_default());
        }
        m.insert("completion_latency".into(), c.completion_latency_cycles.unwrap_or_default());
        let t = metrics::throughput(record, overhead)?;
        m.insert("ipc_per_sm".into(), t.instructions_per_cycle_per_sm);
        if let Some(tf) = t.tflops {
            m.insert("tflops".into(), tf);
            if let Some(w) = avg_power_w {
                m.insert("perf_per_watt".into(), metrics::perf_per_watt(tf, w)?);
            }
        }
    }
    match spec.workload {
        WorkloadClass::PointerChase
        | WorkloadClass::SharedMemStride
        | WorkloadClass::L1Stride
        | WorkloadClass::L2WarpLoadStore => {
            m.insert("access_latency".into(), metrics::access_latency(record, overhead, agg)?);
        }
        WorkloadClass::GlobalBandwidthRead | WorkloadClass::GlobalBandwidthWrite => {
            m.insert("bandwidth_gbps".into(), metrics::bandwidth(record)? / 1e9);
        }
        WorkloadClass::ClockOverhead => {
            let v: Vec<f64> = record.cycles_per_warp.iter().map(|&c| c as f64).collect();
            m.insert("overhead_cycles".into(), Aggregation::Median.apply(&v).unwrap_or_default());
        }
        _ => {}
    }
    if let Some(w) = avg_power_w {
        m.insert("avg_power_w".into(), w);
    }
    m.insert("wall_time_s".into(), record.wall_time_s);
    let mut ordered = IndexMap::new();
    for k in super::METRIC_ORDER {
        if let Some(v) = m.get(k) {
            ordered.insert(k.to_string(), *v);
        }
    }
    Ok(ordered)
}

fn execute(
    backend: &mut dyn Backend,
    spec: &KernelSpec,
    ctx: &GenContext,
    policy: &ExecutionPolicy,
    power: bool,
) -> Result<(MeasurementRecord, Option<f64>), SuiteError> {
    let key = spec.canonical_key();
    let kernel = generate(spec, ctx).map_err(|e| SuiteError::Kernel { spec: key.clone(), source: e })?;
    if !power {
        let rec =
            backend.run(&kernel, spec, policy).map_err(|e| SuiteError::Backend { spec: key.clone(), source: e })?;
        return Ok((rec, None));
    }
    let mut sampler = backend.power_sampler(spec).ok_or_else(|| SuiteError::Power {
        spec: key.clone(),
        source: PowerError::SamplerUnavailable("no sampler for this point".into()),
    })?;
    let (rec, trace) = sample_during(sampler.as_mut(), || backend.run(&kernel, spec, policy))
        .map_err(|e| SuiteError::Power { spec: key.clone(), source: e })?;
    let w = average_power(&trace).map_err(|e| SuiteError::Power { spec: key, source: e })?;
    Ok((rec, Some(w)))
}

/// Run every point of the sweep on every backend and collect reduced rows.
pub fn collect(cfg: &SweepConfig, backends: &mut [Box<dyn Backend>], seed: u64) -> Result<SuiteResults, SuiteError> {
    let points = cfg.points()?;
    let families = cfg.families();
    let policy =
        ExecutionPolicy { repetitions: cfg.policy.repetitions, warmup_discards: cfg.policy.warmup_discards, seed };
    let mut rows = Vec::new();
    let mut devices = Vec::new();
    for backend in backends.iter_mut() {
        let device = backend.device().clone();
        let overhead =
            backend.clock_overhead().map_err(|e| SuiteError::Backend { spec: "ClockOverhead".into(), source: e })?;
        let mut ctx = GenContext { seed, l1_bytes: u64::from(device.l1_kb) * 1024, ..GenContext::default() };
        for family in &families {
            for point in &points {
                let spec = spec_for(*family, point)?;
                if spec.workload == WorkloadClass::SharedMemStride
                    && spec.working_set_bytes > STATIC_SHARED_LIMIT
                    && ctx.shared_limit_bytes.is_none()
                {
                    ctx.shared_limit_bytes = Some(
                        backend
                            .probe_shared_limit()
                            .map_err(|e| SuiteError::Backend { spec: spec.canonical_key(), source: e })?,
                    );
                }
                let (rec, watts) = execute(backend.as_mut(), &spec, &ctx, &policy, cfg.power)?;
                let metrics = reduce(&rec, overhead, cfg.aggregation_for(*family), watts)
                    .map_err(|e| SuiteError::Metrics { spec: spec.canonical_key(), source: e })?;
                rows.push(ResultRow {
                    device: device.chip.clone(),
                    workload: *family,
                    point: point.clone(),
                    spec_key: spec.canonical_key(),
                    repetitions: rec.repetitions,
                    metrics,
                    checksum: rec.checksum,
                });
            }
        }
        devices.push(device);
    }
    Ok(SuiteResults { families, axes: cfg.axes.keys().cloned().collect(), devices, plot: plot_spec(cfg), rows })
}

fn write(path: PathBuf, text: &str, artifacts: &mut Vec<PathBuf>) -> Result<(), SuiteError> {
    std::fs::write(&path, text).map_err(|e| SuiteError::io(&path, e))?;
    artifacts.push(path);
    Ok(())
}

/// Load, validate and execute `config_path`, writing every declared artifact.
///
/// On failure after the output directory is known, `error.json` holds the
/// machine-readable summary.
pub fn run_suite(config_path: &Path, ov: &SuiteOverrides) -> Result<SuiteSummary, SuiteError> {
    let write_error = |dir: &Path, e: &SuiteError| {
        let text = serde_json::to_string_pretty(&e.summary()).unwrap_or_default();
        let _ = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(dir.join("error.json"), text + "\n"));
    };
    let cfg = match SweepConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            // Without a parsed config only an explicit output directory is known.
            if let Some(dir) = &ov.out {
                write_error(dir, &e);
            }
            return Err(e);
        }
    };
    let base = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let out_dir = ov.out.clone().unwrap_or_else(|| cfg.resolve(&base, &cfg.output.dir));
    std::fs::create_dir_all(&out_dir).map_err(|e| SuiteError::io(&out_dir, e))?;
    let _ = std::fs::remove_file(out_dir.join("error.json"));
    let outcome = run_in(&cfg, &base, &out_dir, ov);
    if let Err(e) = &outcome {
        write_error(&out_dir, e);
    }
    outcome
}

fn run_in(cfg: &SweepConfig, base: &Path, out_dir: &Path, ov: &SuiteOverrides) -> Result<SuiteSummary, SuiteError> {
    let seed = ov.seed.unwrap_or(cfg.policy.seed);
    let mut backends = open_backends(cfg, base, ov, &out_dir.join("kernels"))?;
    let results = collect(cfg, &mut backends, seed)?;
    let mut artifacts = Vec::new();
    for f in &cfg.output.formats {
        match f {
            OutputFormat::Csv => write(out_dir.join("results.csv"), &results_csv(&results), &mut artifacts)?,
            OutputFormat::Json => {
                let text = serde_json::to_string_pretty(&results).unwrap_or_default() + "\n";
                write(out_dir.join("results.json"), &text, &mut artifacts)?;
            }
        }
    }
    if cfg.analysis != AnalysisConfig::None {
        let report = analyze(&results, &cfg.analysis)?;
        let text = serde_json::to_string_pretty(&report).unwrap_or_default() + "\n";
        write(out_dir.join("analysis.json"), &text, &mut artifacts)?;
    }
    if cfg.output.plot {
        let (dat, gp) = plot_files(&results, "plot.dat");
        write(out_dir.join("plot.dat"), &dat, &mut artifacts)?;
        write(out_dir.join("plot.gp"), &gp, &mut artifacts)?;
    }
    Ok(SuiteSummary { out_dir: out_dir.to_path_buf(), artifacts, results })
}
