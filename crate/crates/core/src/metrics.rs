//! Latency, throughput, TFLOPS and performance-per-watt from raw records.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::MeasurementRecord;
use crate::kernels::{MatrixShape, WorkloadClass};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("{0}")]
    WrongWorkload(String),
    #[error("measured cycles do not exceed the clock overhead")]
    ZeroCycles,
    #[error("runtime must be finite and positive, got {0}")]
    InvalidRuntime(f64),
    #[error("power must be finite and positive, got {0}")]
    InvalidPower(f64),
    #[error("record holds no cycle samples")]
    EmptyRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Median,
}

impl Aggregation {
    /// Median for memory probes, mean for arithmetic.
    pub fn default_for(workload: WorkloadClass) -> Self {
        if workload.is_memory() {
            Aggregation::Median
        } else {
            Aggregation::Mean
        }
    }

    pub fn apply(&self, values: &[f64]) -> Option<f64> {
        if values.is_empty() {
            return None;
        }
        Some(match self {
            Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregation::Median => median(values),
        })
    }
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyResult {
    pub true_latency_cycles: Option<f64>,
    pub completion_latency_cycles: Option<f64>,
    pub aggregation: Aggregation,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputResult {
    pub instructions_per_cycle_per_sm: f64,
    pub tflops: Option<f64>,
    pub bytes_per_second: Option<f64>,
}

fn per_sample(record: &MeasurementRecord, overhead: u64, per: f64) -> Result<Vec<f64>, MetricsError> {
    if record.cycles_per_warp.is_empty() {
        return Err(MetricsError::EmptyRecord);
    }
    Ok(record.cycles_per_warp.iter().map(|&c| c.saturating_sub(overhead) as f64 / per).collect())
}

fn latency(record: &MeasurementRecord, overhead: u64, agg: Aggregation) -> Result<(f64, usize), MetricsError> {
    let n = record.spec.instructions_per_thread() as f64;
    let samples = per_sample(record, overhead, n)?;
    Ok((agg.apply(&samples).unwrap_or(0.0), samples.len()))
}

/// Cycles per instruction of a single serialized chain.
pub fn true_latency(
    record: &MeasurementRecord,
    overhead: u64,
    agg: Aggregation,
) -> Result<LatencyResult, MetricsError> {
    let spec = &record.spec;
    if !spec.workload.is_compute() {
        return Err(MetricsError::WrongWorkload(format!("{} is not an arithmetic chain", spec.workload)));
    }
    if spec.ilp > 1 {
        return Err(MetricsError::WrongWorkload(format!(
            "true latency needs a single dependent chain, record has ilp = {}",
            spec.ilp
        )));
    }
    let (v, n) = latency(record, overhead, agg)?;
    Ok(LatencyResult { true_latency_cycles: Some(v), completion_latency_cycles: None, aggregation: agg, n })
}

/// Cycles per instruction with independent chains free to overlap.
pub fn completion_latency(
    record: &MeasurementRecord,
    overhead: u64,
    agg: Aggregation,
) -> Result<LatencyResult, MetricsError> {
    if !record.spec.workload.is_compute() {
        return Err(MetricsError::WrongWorkload(format!(
            "completion latency applies to arithmetic workloads, not {}",
            record.spec.workload
        )));
    }
    let (v, n) = latency(record, overhead, agg)?;
    Ok(LatencyResult { true_latency_cycles: None, completion_latency_cycles: Some(v), aggregation: agg, n })
}

/// Cycles per access for pointer-chase and strided probes; per-warp cycles for the L2 probe.
pub fn access_latency(record: &MeasurementRecord, overhead: u64, agg: Aggregation) -> Result<f64, MetricsError> {
    use WorkloadClass::*;
    let per = match record.spec.workload {
        PointerChase | SharedMemStride | L1Stride => f64::from(record.spec.accesses),
        L2WarpLoadStore => 1.0,
        other => return Err(MetricsError::WrongWorkload(format!("{other} has no access latency"))),
    };
    let samples = per_sample(record, overhead, per)?;
    Ok(agg.apply(&samples).unwrap_or(0.0))
}

/// Warp instructions retired per cycle per occupied SM, averaged over repetitions.
///
/// A repetition's elapsed time is its slowest warp minus the overhead.
pub fn throughput(record: &MeasurementRecord, overhead: u64) -> Result<ThroughputResult, MetricsError> {
    let spec = &record.spec;
    if !spec.workload.is_compute() {
        return Err(MetricsError::WrongWorkload(format!(
            "throughput applies to arithmetic workloads, not {}",
            spec.workload
        )));
    }
    if record.cycles_per_warp.is_empty() {
        return Err(MetricsError::EmptyRecord);
    }
    let sms = record.blocks.min(record.device.sm_count).max(1) as f64;
    let warps = record.warps() as f64;
    let n = spec.instructions_per_thread() as f64;
    let mut rates = Vec::new();
    for rep in record.per_repetition() {
        let slowest = rep.iter().copied().max().unwrap_or(0);
        if slowest <= overhead {
            return Err(MetricsError::ZeroCycles);
        }
        rates.push(warps * n / (slowest - overhead) as f64 / sms);
    }
    let ipc = Aggregation::Mean.apply(&rates).unwrap_or(0.0);
    let tflops = match (spec.workload, spec.mma) {
        (WorkloadClass::MmaSync, Some(d)) => Some(ipc * sms * d.tile.flops() as f64 * record.device.clock_hz() / 1e12),
        _ => None,
    };
    Ok(ThroughputResult { instructions_per_cycle_per_sm: ipc, tflops, bytes_per_second: None })
}

/// Bytes moved per second of wall time for a bandwidth record.
pub fn bandwidth(record: &MeasurementRecord) -> Result<f64, MetricsError> {
    let spec = &record.spec;
    if !matches!(spec.workload, WorkloadClass::GlobalBandwidthRead | WorkloadClass::GlobalBandwidthWrite) {
        return Err(MetricsError::WrongWorkload(format!("{} is not a bandwidth sweep", spec.workload)));
    }
    if !(record.wall_time_s > 0.0) {
        return Err(MetricsError::InvalidRuntime(record.wall_time_s));
    }
    let moved = (spec.working_set_bytes / 16 * 16) as f64 * f64::from(spec.iterations) * f64::from(record.repetitions);
    Ok(moved / record.wall_time_s)
}

/// `2 * M * N * K / runtime`, in units of 10^12 FLOP/s.
pub fn gemm_tflops(shape: MatrixShape, runtime_s: f64) -> Result<f64, MetricsError> {
    if !(runtime_s.is_finite() && runtime_s > 0.0) {
        return Err(MetricsError::InvalidRuntime(runtime_s));
    }
    Ok(shape.flops() as f64 / runtime_s / 1e12)
}

pub fn perf_per_watt(tflops: f64, avg_watts: f64) -> Result<f64, MetricsError> {
    if !(avg_watts.is_finite() && avg_watts > 0.0) {
        return Err(MetricsError::InvalidPower(avg_watts));
    }
    Ok(tflops / avg_watts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::DeviceIdentity;
    use crate::kernels::KernelSpec;

    fn device() -> DeviceIdentity {
        DeviceIdentity {
            name: "t".into(),
            chip: "T".into(),
            sm_count: 4,
            clock_mhz: 1000,
            l1_kb: 128,
            l2_mb: 4,
            global_gb: 1,
            memory_kind: "x".into(),
        }
    }

    fn record(spec: KernelSpec, cycles: Vec<u64>, reps: u32) -> MeasurementRecord {
        MeasurementRecord {
            spec,
            device: device(),
            cycles_per_warp: cycles,
            wall_time_s: 1.0,
            repetitions: reps,
            discarded_warmups: 0,
            blocks: 1,
            power_samples_w: None,
            checksum: String::new(),
        }
    }

    #[test]
    fn int32_latency_of_four() {
        let spec = KernelSpec::dependent_chain(WorkloadClass::PureInt32Mad, 1, 1024);
        let r = true_latency(&record(spec, vec![4097], 1), 1, Aggregation::Median).unwrap();
        assert_eq!(r.true_latency_cycles, Some(4.0));
    }

    #[test]
    fn empty_region_is_zero() {
        let spec = KernelSpec::dependent_chain(WorkloadClass::PureFp32Fma, 1, 1).with_ilp(2);
        let r = completion_latency(&record(spec, vec![1, 1], 2), 1, Aggregation::Mean).unwrap();
        assert_eq!(r.completion_latency_cycles, Some(0.0));
    }

    #[test]
    fn wrong_workloads() {
        let ilp = KernelSpec::dependent_chain(WorkloadClass::PureFp32Fma, 1, 8).with_ilp(2);
        assert!(matches!(
            true_latency(&record(ilp, vec![9], 1), 1, Aggregation::Mean),
            Err(MetricsError::WrongWorkload(_))
        ));
        let chase = KernelSpec::pointer_chase(64, 4);
        assert!(completion_latency(&record(chase.clone(), vec![9], 1), 1, Aggregation::Mean).is_err());
        assert_eq!(access_latency(&record(chase, vec![141], 1), 1, Aggregation::Median).unwrap(), 35.0);
    }

    #[test]
    fn throughput_unit_rate() {
        let spec = KernelSpec::dependent_chain(WorkloadClass::PureInt32Mad, 1, 1024);
        let t = throughput(&record(spec, vec![1025], 1), 1).unwrap();
        assert_eq!(t.instructions_per_cycle_per_sm, 1.0);
        assert_eq!(t.tflops, None);
    }

    #[test]
    fn throughput_uses_slowest_warp() {
        let spec = KernelSpec::dependent_chain(WorkloadClass::PureInt32Mad, 1, 100).with_warps(2);
        let t = throughput(&record(spec, vec![101, 201, 101, 201], 2), 1).unwrap();
        assert_eq!(t.instructions_per_cycle_per_sm, 1.0);
    }

    #[test]
    fn zero_cycles() {
        let spec = KernelSpec::dependent_chain(WorkloadClass::PureInt32Mad, 1, 1);
        assert_eq!(throughput(&record(spec, vec![1], 1), 1), Err(MetricsError::ZeroCycles));
    }

    #[test]
    fn gemm_formula() {
        assert!((gemm_tflops(MatrixShape::new(1, 1, 1), 2.0).unwrap() - 1e-12).abs() < 1e-27);
        let t = gemm_tflops(MatrixShape::new(8192, 8192, 8192), 4.710e-3).unwrap();
        assert!((t - 233.4).abs() < 0.05, "{t}");
        assert!(matches!(gemm_tflops(MatrixShape::new(1, 1, 1), 0.0), Err(MetricsError::InvalidRuntime(_))));
    }

    #[test]
    fn per_watt() {
        assert!((perf_per_watt(10.0, 50.0).unwrap() - 0.2).abs() < 1e-15);
        assert!(matches!(perf_per_watt(1.0, 0.0), Err(MetricsError::InvalidPower(_))));
        assert!(perf_per_watt(1.0, f64::NAN).is_err());
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn default_aggregation() {
        assert_eq!(Aggregation::default_for(WorkloadClass::PointerChase), Aggregation::Median);
        assert_eq!(Aggregation::default_for(WorkloadClass::PureFp64Fma), Aggregation::Mean);
    }
}
