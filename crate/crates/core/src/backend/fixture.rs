//! Versioned trace fixtures: device facts, recorded distributions and parametric models.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, DeviceIdentity};
use crate::kernels::{KernelSpec, WorkloadClass};
use crate::power::PowerTrace;

pub const FIXTURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceFixture {
    pub fixture_version: u32,
    pub device: DeviceIdentity,
    pub clock_overhead_cycles: u64,
    pub shared_limit_bytes: u64,
    pub bandwidth: BandwidthFacts,
    /// Multiplier applied to the first repetition of arithmetic workloads (cold caches).
    #[serde(default = "unit")]
    pub first_run_penalty: f64,
    #[serde(default)]
    pub entries: Vec<FixtureEntry>,
    #[serde(default)]
    pub generators: Generators,
    #[serde(default)]
    pub power_traces: Vec<FixturePowerTrace>,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthFacts {
    pub read_bytes_per_s: f64,
    pub write_bytes_per_s: f64,
}

/// Recorded per-warp cycles for one exact spec; repetitions cycle through `cycles`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    pub spec: KernelSpec,
    pub cycles: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generators {
    #[serde(default)]
    pub compute: Vec<ComputeModel>,
    #[serde(default)]
    pub mma: Option<MmaModel>,
    #[serde(default)]
    pub pointer_chase: Option<ChaseModel>,
    #[serde(default)]
    pub strided: Vec<StridedModel>,
    #[serde(default)]
    pub l2: Option<L2Model>,
}

/// Scalar arithmetic: cycles per instruction as a function of chain length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeModel {
    pub workload: WorkloadClass,
    /// `(chain_len, cycles per instruction)` knots, interpolated in log(chain_len).
    pub true_cpi: Vec<(f64, f64)>,
    /// Cycles per instruction once independent chains overlap (ilp >= 2).
    pub completion_cpi: f64,
    #[serde(default)]
    pub noise: f64,
}

/// Tensor-core issue model: a warp retires `min(ilp, max_ilp) / issue_cycles`
/// instructions per cycle until the SM total reaches `peak_warp_slots / issue_cycles`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmaModel {
    pub issue_cycles: f64,
    pub max_ilp: u32,
    pub peak_warp_slots: f64,
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plateau {
    /// Largest working set served at this latency; `None` for the last level.
    pub upper_bytes: Option<u64>,
    pub cycles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaseModel {
    pub levels: Vec<Plateau>,
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StridedModel {
    pub workload: WorkloadClass,
    pub stride: u32,
    /// `(warps, cycles per access)` knots, linear in warps.
    pub per_access_cycles: Vec<(f64, f64)>,
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L2Model {
    /// `(warps, per-warp cycles)` knots at `reference_accesses`, linear in warps.
    pub per_warp_cycles: Vec<(f64, f64)>,
    pub reference_accesses: u32,
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixturePowerTrace {
    /// `mma:<format>` for tensor-core sweeps, `gemm:<M>x<N>x<K>` for GEMM runs.
    pub label: String,
    pub interval_s: f64,
    /// Host-clock instants bracketing the run.
    pub window: (f64, f64),
    pub samples: Vec<(f64, f64)>,
}

impl FixturePowerTrace {
    pub fn trace(&self) -> Result<PowerTrace, BackendError> {
        PowerTrace::new(self.samples.clone(), format!("fixture:{}", self.label), self.interval_s)
            .map_err(|e| BackendError::Fixture(format!("power trace {}: {e}", self.label)))
    }
}

/// Power label for a spec, when one applies.
pub fn power_label(spec: &KernelSpec) -> Option<String> {
    match (spec.workload, spec.mma) {
        (WorkloadClass::MmaSync, Some(d)) => Some(format!("mma:{}", d.a_type)),
        _ => None,
    }
}

/// Expected per-warp cycles of one repetition before noise and overhead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelPoint {
    pub base_cycles: f64,
    pub noise: f64,
}

impl TraceFixture {
    pub fn from_json_str(text: &str) -> Result<Self, BackendError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| BackendError::Fixture(format!("not JSON: {e}")))?;
        match value.get("fixture_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(FIXTURE_VERSION) => {}
            Some(v) => {
                return Err(BackendError::Fixture(format!(
                    "unsupported fixture_version {v}; this build reads version {FIXTURE_VERSION}"
                )))
            }
            None => return Err(BackendError::Fixture("missing fixture_version".into())),
        }
        let fixture: TraceFixture = serde_json::from_value(value).map_err(|e| BackendError::Fixture(e.to_string()))?;
        fixture.validate()?;
        Ok(fixture)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| match e {
            BackendError::Fixture(m) => BackendError::Fixture(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::Fixture(m));
        self.device.validate()?;
        if self.shared_limit_bytes == 0 {
            return bad("shared_limit_bytes must be positive".into());
        }
        if !(self.bandwidth.read_bytes_per_s > 0.0 && self.bandwidth.write_bytes_per_s > 0.0) {
            return bad("bandwidth figures must be positive".into());
        }
        if !(self.first_run_penalty >= 1.0) {
            return bad("first_run_penalty must be at least 1".into());
        }
        for e in &self.entries {
            e.spec
                .validate()
                .map_err(|err| BackendError::Fixture(format!("entry {}: {err}", e.spec.canonical_key())))?;
            if e.cycles.is_empty() {
                return bad(format!("entry {} has no cycles", e.spec.canonical_key()));
            }
        }
        let g = &self.generators;
        for m in &g.compute {
            if !m.workload.is_scalar_compute() {
                return bad(format!("compute model for non-arithmetic workload {}", m.workload));
            }
            check_knots(&format!("compute {}", m.workload), &m.true_cpi)?;
            check_noise(m.noise)?;
        }
        if let Some(m) = &g.mma {
            if !(m.issue_cycles > 0.0) || m.max_ilp == 0 || !(m.peak_warp_slots > 0.0) {
                return bad("mma model parameters must be positive".into());
            }
            check_noise(m.noise)?;
        }
        if let Some(m) = &g.pointer_chase {
            if m.levels.is_empty() || m.levels.last().and_then(|l| l.upper_bytes).is_some() {
                return bad("pointer-chase levels must end with an unbounded level".into());
            }
            let bounds: Vec<u64> = m.levels.iter().filter_map(|l| l.upper_bytes).collect();
            if bounds.len() + 1 != m.levels.len() || bounds.windows(2).any(|w| w[0] >= w[1]) {
                return bad("pointer-chase level bounds must strictly increase".into());
            }
            check_noise(m.noise)?;
        }
        for m in &g.strided {
            if !matches!(m.workload, WorkloadClass::SharedMemStride | WorkloadClass::L1Stride) {
                return bad(format!("strided model for {}", m.workload));
            }
            check_knots(&format!("strided {} stride {}", m.workload, m.stride), &m.per_access_cycles)?;
            check_noise(m.noise)?;
        }
        if let Some(m) = &g.l2 {
            check_knots("l2", &m.per_warp_cycles)?;
            check_noise(m.noise)?;
            if m.reference_accesses == 0 {
                return bad("l2 reference_accesses must be positive".into());
            }
        }
        for t in &self.power_traces {
            t.trace()?;
            if t.window.0 >= t.window.1 {
                return bad(format!("power trace {} has an empty window", t.label));
            }
        }
        Ok(())
    }

    pub fn power_trace(&self, label: &str) -> Option<&FixturePowerTrace> {
        self.power_traces.iter().find(|t| t.label == label)
    }

    pub fn exact_entry(&self, spec: &KernelSpec) -> Option<&FixtureEntry> {
        let key = spec.canonical_key();
        self.entries.iter().find(|e| e.spec.canonical_key() == key)
    }

    /// Parametric prediction for `spec`, if a model covers it.
    pub fn model(&self, spec: &KernelSpec) -> Option<ModelPoint> {
        use WorkloadClass::*;
        let g = &self.generators;
        match spec.workload {
            PureInt32Mad | PureFp32Fma | PureFp64Fma | MixedIntFp32(_) => {
                let m = g.compute.iter().find(|m| m.workload == spec.workload)?;
                let cpi =
                    if spec.ilp == 1 { interp_log(&m.true_cpi, f64::from(spec.chain_len)) } else { m.completion_cpi };
                Some(ModelPoint { base_cycles: cpi * spec.instructions_per_thread() as f64, noise: m.noise })
            }
            MmaSync => {
                let m = g.mma.as_ref()?;
                let w = f64::from(spec.warps);
                let overlap = f64::from(spec.ilp.min(m.max_ilp));
                let sm_rate = (w * overlap).min(m.peak_warp_slots) / m.issue_cycles;
                let per_warp_rate = sm_rate / w;
                Some(ModelPoint { base_cycles: spec.instructions_per_thread() as f64 / per_warp_rate, noise: m.noise })
            }
            PointerChase => {
                let m = g.pointer_chase.as_ref()?;
                let level =
                    m.levels.iter().find(|l| l.upper_bytes.map(|u| spec.working_set_bytes <= u).unwrap_or(true))?;
                Some(ModelPoint { base_cycles: level.cycles * f64::from(spec.accesses), noise: m.noise })
            }
            SharedMemStride | L1Stride => {
                let m = g.strided.iter().find(|m| m.workload == spec.workload && m.stride == spec.stride)?;
                let per = interp_linear(&m.per_access_cycles, f64::from(spec.warps));
                Some(ModelPoint { base_cycles: per * f64::from(spec.accesses), noise: m.noise })
            }
            L2WarpLoadStore => {
                let m = g.l2.as_ref()?;
                let per = interp_linear(&m.per_warp_cycles, f64::from(spec.warps));
                Some(ModelPoint {
                    base_cycles: per * f64::from(spec.accesses) / f64::from(m.reference_accesses),
                    noise: m.noise,
                })
            }
            GlobalBandwidthRead | GlobalBandwidthWrite => {
                let bw = if spec.workload == GlobalBandwidthRead {
                    self.bandwidth.read_bytes_per_s
                } else {
                    self.bandwidth.write_bytes_per_s
                };
                let seconds = spec.working_set_bytes as f64 * f64::from(spec.iterations) / bw;
                Some(ModelPoint { base_cycles: seconds * self.device.clock_hz(), noise: 0.0 })
            }
            ClockOverhead => Some(ModelPoint { base_cycles: 0.0, noise: 0.0 }),
        }
    }

    /// One noisy sample: overhead plus the model value scaled by a factor in `[1 - noise, 1 + noise]`.
    pub fn sample<R: Rng>(&self, point: ModelPoint, penalty: f64, rng: &mut R) -> u64 {
        let jitter = if point.noise > 0.0 { rng.gen_range(-point.noise..=point.noise) } else { 0.0 };
        let v = point.base_cycles * penalty * (1.0 + jitter);
        self.clock_overhead_cycles + v.round().max(0.0) as u64
    }
}

fn check_knots(what: &str, knots: &[(f64, f64)]) -> Result<(), BackendError> {
    if knots.is_empty() {
        return Err(BackendError::Fixture(format!("{what}: no knots")));
    }
    if knots.iter().any(|&(x, y)| !(x > 0.0) || !(y >= 0.0) || !y.is_finite()) {
        return Err(BackendError::Fixture(format!("{what}: knots must have x > 0 and finite y >= 0")));
    }
    if knots.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(BackendError::Fixture(format!("{what}: knot x values must strictly increase")));
    }
    Ok(())
}

fn check_noise(noise: f64) -> Result<(), BackendError> {
    if !(0.0..0.5).contains(&noise) {
        return Err(BackendError::Fixture(format!("noise {noise} outside [0, 0.5)")));
    }
    Ok(())
}

/// Piecewise-linear interpolation, clamped at the end knots.
pub fn interp_linear(knots: &[(f64, f64)], x: f64) -> f64 {
    interp_by(knots, x, |v| v)
}

/// Interpolation linear in `ln x`, clamped at the end knots.
pub fn interp_log(knots: &[(f64, f64)], x: f64) -> f64 {
    interp_by(knots, x, f64::ln)
}

fn interp_by(knots: &[(f64, f64)], x: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (first, last) = (knots[0], knots[knots.len() - 1]);
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    for w in knots.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x <= x1 {
            let t = (f(x) - f(x0)) / (f(x1) - f(x0));
            return y0 + t * (y1 - y0);
        }
    }
    last.1
}
