//! Kernel execution behind one trait: a live bridge process or a recorded fixture.

pub mod bridge;
pub mod fixture;
pub mod replay;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{gen_clock_overhead, Direction, KernelError, KernelSpec, PtxKernel};
use crate::power::PowerSampler;

pub use bridge::{BridgeBackend, BridgeRequest, BridgeResponse};
pub use fixture::{TraceFixture, FIXTURE_VERSION};
pub use replay::ReplayBackend;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeviceIdentity {
    pub name: String,
    pub chip: String,
    pub sm_count: u32,
    pub clock_mhz: u32,
    pub l1_kb: u32,
    pub l2_mb: u32,
    pub global_gb: u32,
    pub memory_kind: String,
}

impl DeviceIdentity {
    pub fn validate(&self) -> Result<(), BackendError> {
        let caps = [
            ("sm_count", self.sm_count),
            ("clock_mhz", self.clock_mhz),
            ("l1_kb", self.l1_kb),
            ("l2_mb", self.l2_mb),
            ("global_gb", self.global_gb),
        ];
        for (field, v) in caps {
            if v == 0 {
                return Err(BackendError::Fixture(format!("device.{field} must be positive")));
            }
        }
        Ok(())
    }

    pub fn l2_bytes(&self) -> u64 {
        u64::from(self.l2_mb) << 20
    }

    pub fn global_bytes(&self) -> u64 {
        u64::from(self.global_gb) << 30
    }

    pub fn clock_hz(&self) -> f64 {
        f64::from(self.clock_mhz) * 1e6
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionPolicy {
    pub repetitions: u32,
    #[serde(default = "default_warmup")]
    pub warmup_discards: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_warmup() -> u32 {
    1
}

impl Default for ExecutionPolicy {
    fn default() -> Self {
        ExecutionPolicy { repetitions: 1024, warmup_discards: 1, seed: 0 }
    }
}

impl ExecutionPolicy {
    /// At least one repetition survives the warm-up discard.
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.repetitions <= self.warmup_discards {
            return Err(BackendError::InvalidSpec(format!(
                "repetitions ({}) must exceed warmup_discards ({})",
                self.repetitions, self.warmup_discards
            )));
        }
        Ok(())
    }

    pub fn retained(&self) -> u32 {
        self.repetitions - self.warmup_discards
    }
}

/// Raw output of one executed configuration. Clock overhead is still included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub spec: KernelSpec,
    pub device: DeviceIdentity,
    /// Retained repetitions back to back, `warps` entries each.
    pub cycles_per_warp: Vec<u64>,
    pub wall_time_s: f64,
    pub repetitions: u32,
    pub discarded_warmups: u32,
    /// Thread blocks in the launch.
    pub blocks: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_samples_w: Option<Vec<(f64, f64)>>,
    pub checksum: String,
}

impl MeasurementRecord {
    /// Cycle slots per repetition.
    pub fn warps(&self) -> usize {
        if self.repetitions == 0 {
            0
        } else {
            self.cycles_per_warp.len() / self.repetitions as usize
        }
    }

    pub fn per_repetition(&self) -> impl Iterator<Item = &[u64]> {
        self.cycles_per_warp.chunks(self.warps().max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("device unavailable: {0}")]
    DeviceUnavailable(String),
    #[error("kernel {kernel} failed to load: {diagnostics}")]
    KernelLoadFailed { kernel: String, diagnostics: String },
    #[error("fixture has no entry for {key}")]
    FixtureMiss { key: String },
    #[error("invalid request: {0}")]
    InvalidSpec(String),
    #[error("{bytes} bytes exceed device memory of {capacity} bytes")]
    FootprintTooLarge { bytes: u64, capacity: u64 },
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error("bridge protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Uniform device abstraction.
pub trait Backend {
    fn device(&self) -> &DeviceIdentity;

    /// Execute `policy.repetitions` launches, keeping all but the first `warmup_discards`.
    fn run(
        &mut self,
        kernel: &PtxKernel,
        spec: &KernelSpec,
        policy: &ExecutionPolicy,
    ) -> Result<MeasurementRecord, BackendError>;

    /// Largest accepted dynamic shared-memory allocation in bytes.
    fn probe_shared_limit(&mut self) -> Result<u64, BackendError>;

    /// Sustained bytes per second over `bytes`, best of several repetitions.
    fn measure_bandwidth(&mut self, direction: Direction, bytes: u64) -> Result<f64, BackendError>;

    /// Raw cycles between two adjacent clock reads: the minimum over a short run.
    fn clock_overhead(&mut self) -> Result<u64, BackendError> {
        let kernel = gen_clock_overhead();
        let policy = ExecutionPolicy { repetitions: 16, warmup_discards: 1, seed: 0 };
        let rec = self.run(&kernel, &kernel.spec, &policy)?;
        rec.cycles_per_warp
            .iter()
            .copied()
            .min()
            .ok_or_else(|| BackendError::Protocol("clock overhead run returned no cycles".into()))
    }

    /// Sampler covering runs of `spec`, when the backend has one.
    fn power_sampler(&self, _spec: &KernelSpec) -> Option<Box<dyn PowerSampler>> {
        None
    }
}

/// Checks shared by both backends before a launch.
pub(crate) fn check_run_inputs(
    kernel: &PtxKernel,
    spec: &KernelSpec,
    policy: &ExecutionPolicy,
) -> Result<(), BackendError> {
    policy.validate()?;
    if kernel.spec != *spec {
        return Err(BackendError::InvalidSpec(format!(
            "kernel {} was generated for {}, not {}",
            kernel.name,
            kernel.spec.canonical_key(),
            spec.canonical_key()
        )));
    }
    Ok(())
}

/// Bandwidth footprints must spill L2 and fit in device memory.
pub(crate) fn check_bandwidth_bytes(device: &DeviceIdentity, bytes: u64) -> Result<(), BackendError> {
    if bytes == 0 {
        return Err(BackendError::InvalidSpec("cannot measure bandwidth over 0 bytes".into()));
    }
    if bytes <= device.l2_bytes() {
        return Err(BackendError::InvalidSpec(format!(
            "{bytes} bytes fit in the {} MB L2; use a larger footprint",
            device.l2_mb
        )));
    }
    if bytes > device.global_bytes() {
        return Err(BackendError::FootprintTooLarge { bytes, capacity: device.global_bytes() });
    }
    Ok(())
}

/// Largest `n` in `lo..=hi` with `accept(n)`, for an `accept` that holds on a prefix.
/// Returns `None` when even `lo` is rejected.
pub fn max_accepted<E>(lo: u64, hi: u64, mut accept: impl FnMut(u64) -> Result<bool, E>) -> Result<Option<u64>, E> {
    if lo > hi || !accept(lo)? {
        return Ok(None);
    }
    let (mut good, mut bad) = (lo, hi.saturating_add(1));
    while bad - good > 1 {
        let mid = good + (bad - good) / 2;
        if accept(mid)? {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(Some(good))
}

/// 64-bit FNV-1a.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_search_finds_threshold() {
        for n in [1u64, 2, 99, 101_376, 232_448, 1 << 20] {
            let got = max_accepted(1, 1 << 20, |x| Ok::<_, ()>(x <= n)).unwrap();
            assert_eq!(got, Some(n));
        }
        assert_eq!(max_accepted(5, 10, |_| Ok::<_, ()>(false)).unwrap(), None);
        assert_eq!(max_accepted(5, 10, |_| Ok::<_, ()>(true)).unwrap(), Some(10));
    }

    #[test]
    fn binary_search_is_logarithmic() {
        let mut calls = 0;
        max_accepted(1, 1 << 30, |x| {
            calls += 1;
            Ok::<_, ()>(x < 12345)
        })
        .unwrap();
        assert!(calls <= 32, "{calls}");
    }

    #[test]
    fn policy_retains_at_least_one() {
        let p = ExecutionPolicy { repetitions: 1024, warmup_discards: 1, seed: 0 };
        assert_eq!(p.retained(), 1023);
        assert!(ExecutionPolicy { repetitions: 1, warmup_discards: 1, seed: 0 }.validate().is_err());
    }

    #[test]
    fn fnv_known_vector() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
