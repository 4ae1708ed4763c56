//! Live backend: a child process speaking newline-delimited JSON on stdin/stdout.
//!
//! One request is in flight at a time and every response echoes its request id.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use super::{
    check_bandwidth_bytes, check_run_inputs, max_accepted, Backend, BackendError, DeviceIdentity, ExecutionPolicy,
    MeasurementRecord,
};
use crate::kernels::{
    gen_bandwidth, gen_strided_probe, BufferSpec, Direction, KernelSpec, ProbeSpace, PtxKernel, ResultLayout,
    WorkloadClass,
};
use crate::power::{CommandSampler, CsvColumns, PowerSampler};

/// Environment variable naming the bridge executable.
pub const BRIDGE_ENV: &str = "GPUDISSECT_BRIDGE";
pub const DEFAULT_BRIDGE: &str = "gpudissect-bridge";
/// Separate single-repetition launches per bandwidth measurement.
pub const BANDWIDTH_TRIALS: u32 = 5;
/// Upper end of the dynamic shared-memory search.
pub const SHARED_PROBE_CEILING: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeOp {
    Launch,
    DeviceInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeRequest {
    pub id: u64,
    pub op: BridgeOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ptx_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<[u32; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<[u32; 3]>,
    #[serde(default)]
    pub dynamic_shared_bytes: u32,
    /// Kernel parameters in order; host files are absolute paths.
    #[serde(default)]
    pub buffer_spec: Vec<BufferSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ResultLayout>,
    #[serde(default)]
    pub reps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeResponse {
    pub id: u64,
    /// `cycle_slots` values per repetition, repetitions back to back.
    #[serde(default)]
    pub cycles: Vec<u64>,
    /// Elapsed host time across all repetitions.
    #[serde(default)]
    pub wall_time_ns: u64,
    #[serde(default)]
    pub checksum: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub device: Option<DeviceIdentity>,
}

impl BridgeRequest {
    pub fn launch(id: u64, ptx_path: &Path, kernel: &PtxKernel, buffers: Vec<BufferSpec>, reps: u32) -> Self {
        BridgeRequest {
            id,
            op: BridgeOp::Launch,
            ptx_path: Some(ptx_path.to_string_lossy().into_owned()),
            entry: Some(kernel.entry_symbol.clone()),
            grid: Some(kernel.launch.grid),
            block: Some(kernel.launch.block),
            dynamic_shared_bytes: kernel.launch.dynamic_shared_bytes,
            buffer_spec: buffers,
            result: Some(kernel.result_layout.clone()),
            reps,
        }
    }

    pub fn device_info(id: u64) -> Self {
        BridgeRequest {
            id,
            op: BridgeOp::DeviceInfo,
            ptx_path: None,
            entry: None,
            grid: None,
            block: None,
            dynamic_shared_bytes: 0,
            buffer_spec: Vec::new(),
            result: None,
            reps: 0,
        }
    }
}

/// Bridge path: `$GPUDISSECT_BRIDGE`, else `explicit`, else [`DEFAULT_BRIDGE`] on `PATH`.
pub fn resolve_bridge_path(explicit: Option<&Path>) -> PathBuf {
    match std::env::var_os(BRIDGE_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => explicit.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(DEFAULT_BRIDGE)),
    }
}

struct PowerConfig {
    template: String,
    period_s: f64,
    columns: CsvColumns,
}

pub struct BridgeBackend {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    next_id: u64,
    device: DeviceIdentity,
    device_index: u32,
    workdir: PathBuf,
    power: Option<PowerConfig>,
}

impl BridgeBackend {
    /// Spawn `program --device <index>` and ask it for the device identity.
    /// Generated kernels are written under `workdir`.
    pub fn spawn(program: &Path, device_index: u32, workdir: PathBuf) -> Result<Self, BackendError> {
        let mut child = Command::new(program)
            .arg("--device")
            .arg(device_index.to_string())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::DeviceUnavailable(format!("cannot start {}: {e}", program.display())))?;
        let stdin = child.stdin.take().ok_or_else(|| BackendError::DeviceUnavailable("bridge stdin".into()))?;
        let stdout = child.stdout.take().ok_or_else(|| BackendError::DeviceUnavailable("bridge stdout".into()))?;
        let mut backend = BridgeBackend {
            child,
            stdin,
            stdout: BufReader::new(stdout),
            next_id: 1,
            device: DeviceIdentity {
                name: String::new(),
                chip: String::new(),
                sm_count: 1,
                clock_mhz: 1,
                l1_kb: 1,
                l2_mb: 1,
                global_gb: 1,
                memory_kind: String::new(),
            },
            device_index,
            workdir,
            power: None,
        };
        let id = backend.take_id();
        let resp = backend.call(&BridgeRequest::device_info(id))?;
        if let Some(err) = resp.error {
            return Err(BackendError::DeviceUnavailable(err));
        }
        backend.device =
            resp.device.ok_or_else(|| BackendError::Protocol("device_info response carries no device".into()))?;
        backend.device.validate().map_err(|e| BackendError::Protocol(e.to_string()))?;
        log::info!("bridge device {} ({})", backend.device.name, backend.device.chip);
        Ok(backend)
    }

    /// Sample power with an external command while runs execute.
    pub fn with_power_sampler(mut self, template: impl Into<String>, period_s: f64, columns: CsvColumns) -> Self {
        self.power = Some(PowerConfig { template: template.into(), period_s, columns });
        self
    }

    fn take_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Send one request and wait for its response.
    pub fn call(&mut self, req: &BridgeRequest) -> Result<BridgeResponse, BackendError> {
        let line = serde_json::to_string(req).map_err(|e| BackendError::Protocol(e.to_string()))?;
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| BackendError::DeviceUnavailable(format!("bridge closed its input: {e}")))?;
        let mut reply = String::new();
        let n = self
            .stdout
            .read_line(&mut reply)
            .map_err(|e| BackendError::DeviceUnavailable(format!("bridge read failed: {e}")))?;
        if n == 0 {
            return Err(BackendError::DeviceUnavailable("bridge exited".into()));
        }
        let resp: BridgeResponse = serde_json::from_str(reply.trim_end())
            .map_err(|e| BackendError::Protocol(format!("unparsable response `{}`: {e}", reply.trim_end())))?;
        if resp.id != req.id {
            return Err(BackendError::Protocol(format!("response id {} for request {}", resp.id, req.id)));
        }
        Ok(resp)
    }

    fn launch(&mut self, kernel: &PtxKernel, reps: u32) -> Result<BridgeResponse, BackendError> {
        let written = kernel.write_to(&self.workdir)?;
        let id = self.take_id();
        let req = BridgeRequest::launch(id, &written.ptx_path, kernel, written.buffers, reps);
        self.call(&req)
    }
}

impl Drop for BridgeBackend {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Backend for BridgeBackend {
    fn device(&self) -> &DeviceIdentity {
        &self.device
    }

    fn run(
        &mut self,
        kernel: &PtxKernel,
        spec: &KernelSpec,
        policy: &ExecutionPolicy,
    ) -> Result<MeasurementRecord, BackendError> {
        check_run_inputs(kernel, spec, policy)?;
        let resp = self.launch(kernel, policy.repetitions)?;
        if let Some(diagnostics) = resp.error {
            return Err(BackendError::KernelLoadFailed { kernel: kernel.name.clone(), diagnostics });
        }
        let slots = kernel.result_layout.cycle_slots as usize;
        let expected = slots * policy.repetitions as usize;
        if resp.cycles.len() != expected {
            return Err(BackendError::Protocol(format!(
                "expected {expected} cycle values ({slots} per repetition), got {}",
                resp.cycles.len()
            )));
        }
        let retained = resp.cycles[slots * policy.warmup_discards as usize..].to_vec();
        let wall_time_s =
            resp.wall_time_ns as f64 * 1e-9 * f64::from(policy.retained()) / f64::from(policy.repetitions);
        Ok(MeasurementRecord {
            spec: spec.clone(),
            device: self.device.clone(),
            cycles_per_warp: retained,
            wall_time_s,
            repetitions: policy.retained(),
            discarded_warmups: policy.warmup_discards,
            blocks: kernel.launch.blocks(),
            power_samples_w: None,
            checksum: resp.checksum.unwrap_or_default(),
        })
    }

    fn probe_shared_limit(&mut self) -> Result<u64, BackendError> {
        let spec = KernelSpec {
            stride: 1,
            accesses: 1,
            working_set_bytes: 1024,
            ..KernelSpec::new(WorkloadClass::SharedMemStride)
        };
        let mut kernel = gen_strided_probe(&spec, ProbeSpace::SharedDynamic { limit_bytes: SHARED_PROBE_CEILING })?;
        let found = max_accepted(1024, SHARED_PROBE_CEILING, |bytes| {
            kernel.launch.dynamic_shared_bytes = bytes as u32;
            let resp = self.launch(&kernel, 1)?;
            Ok::<_, BackendError>(resp.error.is_none())
        })?;
        found.ok_or_else(|| BackendError::DeviceUnavailable("no dynamic shared allocation was accepted".into()))
    }

    fn measure_bandwidth(&mut self, direction: Direction, bytes: u64) -> Result<f64, BackendError> {
        check_bandwidth_bytes(&self.device, bytes)?;
        let kernel = gen_bandwidth(direction, bytes, 1)?;
        let moved = (bytes / 16 * 16) as f64;
        let mut best: f64 = 0.0;
        for _ in 0..BANDWIDTH_TRIALS {
            let resp = self.launch(&kernel, 1)?;
            if let Some(diagnostics) = resp.error {
                return Err(BackendError::KernelLoadFailed { kernel: kernel.name.clone(), diagnostics });
            }
            if resp.wall_time_ns > 0 {
                best = best.max(moved / (resp.wall_time_ns as f64 * 1e-9));
            }
        }
        if best <= 0.0 {
            return Err(BackendError::Protocol("bandwidth launches reported zero elapsed time".into()));
        }
        Ok(best)
    }

    fn power_sampler(&self, _spec: &KernelSpec) -> Option<Box<dyn PowerSampler>> {
        let p = self.power.as_ref()?;
        CommandSampler::from_template(&p.template, p.period_s, self.device_index, p.columns)
            .ok()
            .map(|s| Box::new(s) as Box<dyn PowerSampler>)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_shape() {
        let req = BridgeRequest::device_info(7);
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"id":7,"op":"device_info","dynamic_shared_bytes":0,"buffer_spec":[],"reps":0}"#
        );
    }

    #[test]
    fn response_defaults() {
        let r: BridgeResponse = serde_json::from_str(r#"{"id":3,"error":"CUDA_ERROR_INVALID_PTX"}"#).unwrap();
        assert_eq!(r.id, 3);
        assert!(r.cycles.is_empty());
        assert_eq!(r.error.as_deref(), Some("CUDA_ERROR_INVALID_PTX"));
    }

    #[test]
    fn missing_binary_is_device_unavailable() {
        let err = BridgeBackend::spawn(Path::new("/nonexistent/bridge"), 0, std::env::temp_dir()).err().unwrap();
        assert!(matches!(err, BackendError::DeviceUnavailable(_)));
    }
}
