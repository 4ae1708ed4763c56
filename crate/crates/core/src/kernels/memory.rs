//! Strided shared/L1 probes, the L2 warp-scaling probe, bandwidth sweeps and clock overhead.

use serde::{Deserialize, Serialize};

use super::compute::{
    close_measured_loop, declare_scratch, open_measured_loop, standard_buffers, standard_result_layout, store_checksum,
    store_warp_cycles, thread_ids, CHECKSUM_PARAM, CYCLES_PARAM,
};
use super::emit::{BufferInit, BufferSpec, LaunchConfig, PtxKernel, PtxTarget, PtxWriter};
use super::spec::{KernelSpec, WorkloadClass, MAX_WARPS};
use super::KernelError;

/// Largest statically declared shared array.
pub const STATIC_SHARED_LIMIT: u64 = 48 * 1024;
pub const DEFAULT_PROBE_FOOTPRINT: u64 = 16 * 1024;
pub const L2_PROBE_FOOTPRINT: u64 = 8 * 1024 * 1024;
pub const L2_PROBE_ACCESSES: u32 = 1024;
pub const BANDWIDTH_GRID: u32 = 1024;
pub const BANDWIDTH_BLOCK: u32 = 256;

const DATA_PARAM: &str = "data_ptr";
const STAMPS_PARAM: &str = "stamps_ptr";

/// Where a strided probe's loads land.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "space")]
pub enum ProbeSpace {
    /// Statically sized `.shared` array.
    Shared,
    /// `.extern .shared` array sized at launch, bounded by the device limit.
    SharedDynamic { limit_bytes: u64 },
    /// Read-only global loads sized to stay L1-resident.
    L1ViaGlobal { l1_bytes: u64 },
}

impl ProbeSpace {
    fn capacity(&self) -> (u64, &'static str) {
        match *self {
            ProbeSpace::Shared => (STATIC_SHARED_LIMIT, "static shared memory"),
            ProbeSpace::SharedDynamic { limit_bytes } => (limit_bytes, "dynamic shared memory"),
            ProbeSpace::L1ViaGlobal { l1_bytes } => (l1_bytes, "L1"),
        }
    }

    fn workload(&self) -> WorkloadClass {
        match self {
            ProbeSpace::L1ViaGlobal { .. } => WorkloadClass::L1Stride,
            _ => WorkloadClass::SharedMemStride,
        }
    }
}

/// Each thread issues `spec.accesses` dependent 32-bit loads, starting at
/// `tid * stride` and advancing by `stride * threads` words, wrapped to the footprint.
pub fn gen_strided_probe(spec: &KernelSpec, space: ProbeSpace) -> Result<PtxKernel, KernelError> {
    if spec.workload != space.workload() {
        return Err(KernelError::InvalidSpec(format!(
            "{:?} probes run {} specs, got {}",
            space,
            space.workload(),
            spec.workload
        )));
    }
    spec.validate()?;
    let footprint = if spec.working_set_bytes == 0 { DEFAULT_PROBE_FOOTPRINT } else { spec.working_set_bytes };
    if !footprint.is_power_of_two() || footprint < 128 {
        return Err(KernelError::InvalidSpec(format!(
            "probe footprint must be a power of two of at least 128 bytes, got {footprint}"
        )));
    }
    let (capacity, space_name) = space.capacity();
    if footprint > capacity {
        return Err(KernelError::FootprintTooLarge { bytes: footprint, capacity, space: space_name.into() });
    }
    let mask = footprint / 4 - 1;
    let threads = spec.warps * 32;
    let step = u64::from(spec.stride) * u64::from(threads);

    let tag = match space {
        ProbeSpace::Shared => "smem",
        ProbeSpace::SharedDynamic { .. } => "smemdyn",
        ProbeSpace::L1ViaGlobal { .. } => "l1",
    };
    let name = format!("{tag}_s{}_w{}_a{}_f{footprint}", spec.stride, spec.warps, spec.accesses);
    let target = PtxTarget::for_spec(spec);
    let mut launch = LaunchConfig::single_block(threads);

    let mut w = PtxWriter::new(&name, spec, &target);
    let global = matches!(space, ProbeSpace::L1ViaGlobal { .. });
    match space {
        ProbeSpace::Shared => w.raw(&format!(".shared .align 16 .b8 probe_smem[{footprint}];\n")),
        ProbeSpace::SharedDynamic { .. } => {
            w.raw(".extern .shared .align 16 .b8 probe_smem[];\n");
            launch.dynamic_shared_bytes = footprint as u32;
        }
        ProbeSpace::L1ViaGlobal { .. } => {}
    }
    if global {
        w.entry(&name, &[DATA_PARAM, CYCLES_PARAM, CHECKSUM_PARAM]);
    } else {
        w.entry(&name, &[CYCLES_PARAM, CHECKSUM_PARAM]);
    }
    declare_scratch(&mut w);
    w.raw("");
    thread_ids(&mut w);

    if global {
        w.ins(format!("ld.param.u64 %rd10, [{DATA_PARAM}]"));
        w.ins("cvta.to.global.u64 %rd10, %rd10");
        w.comment("untimed pass over the same addresses to fill L1");
        w.ins(format!("mul.lo.u32 %r13, %r0, {}", spec.stride));
        w.ins("mov.u32 %r7, 0");
        w.label("$L_warm");
        strided_step(&mut w, true, mask, step);
        w.ins("add.u32 %r7, %r7, 1");
        w.ins(format!("setp.lt.u32 %p2, %r7, {}", spec.accesses));
        w.ins("@%p2 bra $L_warm");
    } else {
        w.ins("mov.u32 %r8, probe_smem");
        w.comment("zero the probe array");
        w.ins("mov.u32 %r12, 0");
        w.ins("mov.u32 %r9, %r0");
        w.label("$L_init");
        w.ins(format!("setp.ge.u32 %p2, %r9, {}", mask + 1));
        w.ins("@%p2 bra $L_init_done");
        w.ins("shl.b32 %r10, %r9, 2");
        w.ins("add.u32 %r11, %r8, %r10");
        w.ins("st.shared.u32 [%r11], %r12");
        w.ins("add.u32 %r9, %r9, %r1");
        w.ins("bra.uni $L_init");
        w.label("$L_init_done");
    }

    w.ins(format!("mul.lo.u32 %r13, %r0, {}", spec.stride));
    open_measured_loop(&mut w);
    strided_step(&mut w, global, mask, step);
    close_measured_loop(&mut w, spec.accesses);
    store_warp_cycles(&mut w, "%rd1", "%rd2");
    store_checksum(&mut w, "%r13", "u32");

    let result_layout = standard_result_layout(&launch);
    let mut buffers = Vec::new();
    if global {
        buffers.push(BufferSpec { param: DATA_PARAM.into(), bytes: footprint, init: BufferInit::Zeroed });
    }
    buffers.extend(standard_buffers(&result_layout));
    Ok(PtxKernel {
        entry_symbol: name.clone(),
        name,
        source: w.finish(),
        launch,
        buffers,
        result_layout,
        target,
        spec: spec.clone(),
        host_data: Vec::new(),
    })
}

/// One load at word index `%r13 & mask`; the loaded (zero) value feeds the next index.
fn strided_step(w: &mut PtxWriter, global: bool, mask: u64, step: u64) {
    w.ins(format!("and.b32 %r14, %r13, {mask}"));
    w.ins("shl.b32 %r14, %r14, 2");
    if global {
        w.ins("cvt.u64.u32 %rd12, %r14");
        w.ins("add.s64 %rd13, %rd10, %rd12");
        w.ins("ld.global.nc.u32 %r15, [%rd13]");
    } else {
        w.ins("add.u32 %r14, %r8, %r14");
        w.ins("ld.shared.u32 %r15, [%r14]");
    }
    w.ins("add.u32 %r13, %r13, %r15");
    w.ins(format!("add.u32 %r13, %r13, {step}"));
}

/// L2 warp-scaling probe with the standard footprint and access count.
pub fn gen_l2_warp_probe(warps: u32) -> Result<PtxKernel, KernelError> {
    let spec = KernelSpec {
        warps,
        working_set_bytes: L2_PROBE_FOOTPRINT,
        accesses: L2_PROBE_ACCESSES,
        ..KernelSpec::new(WorkloadClass::L2WarpLoadStore)
    };
    gen_l2_probe_spec(&spec)
}

/// Every thread issues `spec.accesses` L1-bypassing load/store pairs over the footprint;
/// lane 0 records the warp's start and end stamps.
pub fn gen_l2_probe_spec(spec: &KernelSpec) -> Result<PtxKernel, KernelError> {
    if spec.workload != WorkloadClass::L2WarpLoadStore {
        return Err(KernelError::InvalidSpec(format!("expected L2WarpLoadStore, got {}", spec.workload)));
    }
    if spec.warps == 0 || spec.warps > MAX_WARPS {
        return Err(KernelError::InvalidSpec(format!("warps must be in 1..={MAX_WARPS}, got {}", spec.warps)));
    }
    spec.validate()?;
    let footprint = spec.working_set_bytes;
    if !footprint.is_power_of_two() || footprint < 4096 {
        return Err(KernelError::InvalidSpec(format!(
            "L2 footprint must be a power of two of at least 4096 bytes, got {footprint}"
        )));
    }
    let mask = footprint / 4 - 1;
    let threads = spec.warps * 32;
    let name = format!("l2_w{}_a{}_f{footprint}", spec.warps, spec.accesses);
    let target = PtxTarget::for_spec(spec);
    let launch = LaunchConfig::single_block(threads);

    let mut w = PtxWriter::new(&name, spec, &target);
    w.entry(&name, &[DATA_PARAM, STAMPS_PARAM, CYCLES_PARAM, CHECKSUM_PARAM]);
    declare_scratch(&mut w);
    w.raw("");
    thread_ids(&mut w);
    w.ins(format!("ld.param.u64 %rd10, [{DATA_PARAM}]"));
    w.ins("cvta.to.global.u64 %rd10, %rd10");
    w.ins("mov.u32 %r13, %r0");
    w.ins("mov.u32 %r16, 0");

    open_measured_loop(&mut w);
    w.ins(format!("and.b32 %r14, %r13, {mask}"));
    w.ins("mul.wide.u32 %rd12, %r14, 4");
    w.ins("add.s64 %rd13, %rd10, %rd12");
    w.ins("ld.global.cg.u32 %r15, [%rd13]");
    w.ins("add.u32 %r15, %r15, 1");
    w.ins("st.global.cg.u32 [%rd13], %r15");
    w.ins("add.u32 %r16, %r16, %r15");
    w.ins(format!("add.u32 %r13, %r13, {}", u64::from(threads) * 8));
    close_measured_loop(&mut w, spec.accesses);

    w.ins("setp.ne.u32 %p3, %r4, 0");
    w.ins("@%p3 bra $L_after_stamps");
    w.ins(format!("ld.param.u64 %rd14, [{STAMPS_PARAM}]"));
    w.ins("cvta.to.global.u64 %rd14, %rd14");
    w.ins("mul.wide.u32 %rd15, %r5, 16");
    w.ins("add.s64 %rd16, %rd14, %rd15");
    w.ins("st.global.u64 [%rd16], %rd1");
    w.ins("st.global.u64 [%rd16+8], %rd2");
    w.label("$L_after_stamps");
    store_warp_cycles(&mut w, "%rd1", "%rd2");
    store_checksum(&mut w, "%r16", "u32");

    let result_layout = standard_result_layout(&launch);
    let mut buffers = vec![
        BufferSpec { param: DATA_PARAM.into(), bytes: footprint, init: BufferInit::Zeroed },
        BufferSpec {
            param: STAMPS_PARAM.into(),
            bytes: u64::from(result_layout.cycle_slots) * 16,
            init: BufferInit::Zeroed,
        },
    ];
    buffers.extend(standard_buffers(&result_layout));
    Ok(PtxKernel {
        entry_symbol: name.clone(),
        name,
        source: w.finish(),
        launch,
        buffers,
        result_layout,
        target,
        spec: spec.clone(),
        host_data: Vec::new(),
    })
}

/// Direction of a bandwidth sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Read,
    Write,
}

impl Direction {
    pub fn workload(&self) -> WorkloadClass {
        match self {
            Direction::Read => WorkloadClass::GlobalBandwidthRead,
            Direction::Write => WorkloadClass::GlobalBandwidthWrite,
        }
    }
}

/// Grid-stride 16-byte vector sweep over `bytes`, repeated `passes` times.
pub fn gen_bandwidth(direction: Direction, bytes: u64, passes: u32) -> Result<PtxKernel, KernelError> {
    let spec = KernelSpec { working_set_bytes: bytes, iterations: passes, ..KernelSpec::new(direction.workload()) };
    gen_bandwidth_spec(&spec)
}

pub fn gen_bandwidth_spec(spec: &KernelSpec) -> Result<PtxKernel, KernelError> {
    let direction = match spec.workload {
        WorkloadClass::GlobalBandwidthRead => Direction::Read,
        WorkloadClass::GlobalBandwidthWrite => Direction::Write,
        other => return Err(KernelError::InvalidSpec(format!("expected a bandwidth workload, got {other}"))),
    };
    spec.validate()?;
    let vectors = spec.working_set_bytes / 16;
    if vectors == 0 {
        return Err(KernelError::InvalidSpec(format!(
            "bandwidth sweeps move at least 16 bytes, got {}",
            spec.working_set_bytes
        )));
    }
    let tag = match direction {
        Direction::Read => "bwread",
        Direction::Write => "bwwrite",
    };
    let name = format!("{tag}_b{}_p{}", spec.working_set_bytes, spec.iterations);
    let target = PtxTarget::for_spec(spec);
    let launch = LaunchConfig { grid: [BANDWIDTH_GRID, 1, 1], block: [BANDWIDTH_BLOCK, 1, 1], dynamic_shared_bytes: 0 };
    let total_threads = launch.total_threads();

    let mut w = PtxWriter::new(&name, spec, &target);
    w.entry(&name, &[DATA_PARAM, CYCLES_PARAM, CHECKSUM_PARAM]);
    declare_scratch(&mut w);
    w.raw("");
    thread_ids(&mut w);
    w.ins(format!("ld.param.u64 %rd10, [{DATA_PARAM}]"));
    w.ins("cvta.to.global.u64 %rd10, %rd10");
    w.ins("mov.u32 %r16, 0");
    w.ins("mov.u32 %r8, 1");
    w.ins("mov.u32 %r9, 2");
    w.ins("mov.u32 %r10, 3");
    w.ins("mov.u32 %r11, 4");

    open_measured_loop(&mut w);
    w.ins("cvt.u64.u32 %rd11, %r3");
    w.label("$L_sweep");
    w.ins(format!("setp.ge.u64 %p2, %rd11, {vectors}"));
    w.ins("@%p2 bra $L_sweep_done");
    w.ins("shl.b64 %rd12, %rd11, 4");
    w.ins("add.s64 %rd13, %rd10, %rd12");
    match direction {
        Direction::Read => {
            w.ins("ld.global.v4.u32 {%r12, %r13, %r14, %r15}, [%rd13]");
            w.ins("xor.b32 %r16, %r16, %r12");
            w.ins("xor.b32 %r16, %r16, %r15");
        }
        Direction::Write => {
            w.ins("st.global.v4.u32 [%rd13], {%r8, %r9, %r10, %r11}");
            w.ins("add.u32 %r16, %r16, 1");
        }
    }
    w.ins(format!("add.s64 %rd11, %rd11, {total_threads}"));
    w.ins("bra.uni $L_sweep");
    w.label("$L_sweep_done");
    close_measured_loop(&mut w, spec.iterations);
    store_warp_cycles(&mut w, "%rd1", "%rd2");
    store_checksum(&mut w, "%r16", "u32");

    let result_layout = standard_result_layout(&launch);
    let mut buffers = vec![BufferSpec { param: DATA_PARAM.into(), bytes: vectors * 16, init: BufferInit::Zeroed }];
    buffers.extend(standard_buffers(&result_layout));
    Ok(PtxKernel {
        entry_symbol: name.clone(),
        name,
        source: w.finish(),
        launch,
        buffers,
        result_layout,
        target,
        spec: spec.clone(),
        host_data: Vec::new(),
    })
}

/// Two adjacent clock reads with nothing between them.
pub fn gen_clock_overhead() -> PtxKernel {
    let spec = KernelSpec::new(WorkloadClass::ClockOverhead);
    let name = "clock_overhead".to_string();
    let target = PtxTarget::for_spec(&spec);
    let launch = LaunchConfig::single_block(32);

    let mut w = PtxWriter::new(&name, &spec, &target);
    w.entry(&name, &[CYCLES_PARAM, CHECKSUM_PARAM]);
    declare_scratch(&mut w);
    w.raw("");
    thread_ids(&mut w);
    w.ins("mov.u64 %rd1, %clock64");
    w.ins("mov.u64 %rd2, %clock64");
    store_warp_cycles(&mut w, "%rd1", "%rd2");
    store_checksum(&mut w, "%rd2", "u64");

    let result_layout = standard_result_layout(&launch);
    PtxKernel {
        entry_symbol: name.clone(),
        buffers: standard_buffers(&result_layout),
        name,
        source: w.finish(),
        launch,
        result_layout,
        target,
        spec,
        host_data: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strided(workload: WorkloadClass, stride: u32, warps: u32, accesses: u32) -> KernelSpec {
        KernelSpec { stride, warps, accesses, ..KernelSpec::new(workload) }
    }

    #[test]
    fn shared_stride_one_single_warp() {
        let spec = strided(WorkloadClass::SharedMemStride, 1, 1, 32);
        let k = gen_strided_probe(&spec, ProbeSpace::Shared).unwrap();
        assert!(k.source.contains(".shared .align 16 .b8 probe_smem[16384];"));
        assert!(k.source.contains("setp.lt.u32 %p0, %r6, 32;"));
        assert!(k.source.contains("add.u32 %r13, %r13, 32;"));
        assert_eq!(k.source.matches("ld.shared.u32").count(), 1);
    }

    #[test]
    fn shared_stride_four_full_block() {
        let spec = strided(WorkloadClass::SharedMemStride, 4, 32, 32);
        let k = gen_strided_probe(&spec, ProbeSpace::Shared).unwrap();
        assert!(k.source.contains("mul.lo.u32 %r13, %r0, 4;"));
        assert!(k.source.contains("add.u32 %r13, %r13, 4096;"));
        assert_eq!(k.launch.block[0], 1024);
        assert_eq!(k.result_layout.cycle_slots, 32);
    }

    #[test]
    fn l1_probe_uses_read_only_global_loads() {
        let spec = strided(WorkloadClass::L1Stride, 4, 8, 32);
        let k = gen_strided_probe(&spec, ProbeSpace::L1ViaGlobal { l1_bytes: 128 * 1024 }).unwrap();
        assert_eq!(k.source.matches("ld.global.nc.u32").count(), 2);
        assert_eq!(k.buffers[0].param, "data_ptr");
        assert!(gen_strided_probe(&spec, ProbeSpace::Shared).is_err());
    }

    #[test]
    fn footprint_limits() {
        let mut spec = strided(WorkloadClass::SharedMemStride, 1, 1, 32);
        spec.working_set_bytes = 64 * 1024;
        assert!(matches!(
            gen_strided_probe(&spec, ProbeSpace::Shared),
            Err(KernelError::FootprintTooLarge { bytes: 65536, capacity: 49152, .. })
        ));
        let k = gen_strided_probe(&spec, ProbeSpace::SharedDynamic { limit_bytes: 101_376 }).unwrap();
        assert_eq!(k.launch.dynamic_shared_bytes, 65536);
        assert!(k.source.contains(".extern .shared"));
        spec.working_set_bytes = 3000;
        assert!(gen_strided_probe(&spec, ProbeSpace::Shared).is_err());
    }

    #[test]
    fn l2_probe_shape() {
        let k = gen_l2_warp_probe(4).unwrap();
        assert_eq!(k.source.matches("ld.global.cg.u32").count(), 1);
        assert_eq!(k.source.matches("st.global.cg.u32").count(), 1);
        assert!(k.source.contains("setp.lt.u32 %p0, %r6, 1024;"));
        assert_eq!(k.buffers[1].bytes, 4 * 16);
        assert!(matches!(gen_l2_warp_probe(0), Err(KernelError::InvalidSpec(_))));
        assert!(gen_l2_warp_probe(33).is_err());
    }

    #[test]
    fn bandwidth_kernels() {
        let r = gen_bandwidth(Direction::Read, 1 << 30, 2).unwrap();
        assert!(r.source.contains("ld.global.v4.u32"));
        assert_eq!(r.launch.total_threads(), 262_144);
        let w = gen_bandwidth(Direction::Write, 1 << 20, 1).unwrap();
        assert!(w.source.contains("st.global.v4.u32"));
        assert!(gen_bandwidth(Direction::Read, 0, 1).is_err());
        assert!(gen_bandwidth(Direction::Read, 8, 1).is_err());
    }

    #[test]
    fn clock_overhead_has_adjacent_reads() {
        let k = gen_clock_overhead();
        assert!(k.source.contains("mov.u64 %rd1, %clock64;\n\tmov.u64 %rd2, %clock64;\n"));
        assert_eq!(k.source.matches("%clock64").count(), 2);
    }
}
