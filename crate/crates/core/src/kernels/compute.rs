//! Arithmetic dependency-chain, ILP and tensor-core kernels.

use super::emit::{
    BufferInit, BufferSpec, CycleGranularity, LaunchConfig, PtxKernel, PtxTarget, PtxWriter, ResultLayout,
};
use super::mma::{gen_mma_instruction_with, MmaDescriptor, TileCapabilities};
use super::spec::{KernelSpec, MixPattern, WorkloadClass};
use super::KernelError;

/// 32-bit register slots a thread may spend before a spec is rejected.
pub const REGISTER_BUDGET: u32 = 200;

/// Slots reserved for loop counter, thread ids, clock samples and pointers.
const FIXED_SLOTS: u32 = 16;

/// Register slots a compute kernel for `spec` needs per thread.
///
/// Each chain owns a destination and an operand register; tensor-core chains
/// own one accumulator set and share the A/B fragments.
pub fn register_demand(spec: &KernelSpec) -> u32 {
    let per_chain = match spec.workload {
        WorkloadClass::PureFp64Fma => 4,
        WorkloadClass::MmaSync => match spec.mma {
            Some(d) => {
                let f = d.fragments();
                return FIXED_SLOTS
                    .saturating_add(f.input_slots())
                    .saturating_add(spec.ilp.saturating_mul(f.accumulator_slots()));
            }
            None => 0,
        },
        _ => 2,
    };
    FIXED_SLOTS.saturating_add(spec.ilp.saturating_mul(per_chain))
}

/// One serialized chain of `spec.chain_len` dependent instructions per loop iteration.
pub fn gen_dependent_chain(spec: &KernelSpec) -> Result<PtxKernel, KernelError> {
    if !spec.workload.is_scalar_compute() {
        return Err(KernelError::InvalidSpec(format!(
            "dependent chains are built for scalar arithmetic, not {}",
            spec.workload
        )));
    }
    if spec.ilp != 1 {
        return Err(KernelError::InvalidSpec(format!("a dependent chain has ilp = 1, got {}", spec.ilp)));
    }
    gen_independent_ilp(spec)
}

/// `spec.ilp` disjoint chains interleaved round-robin, each `spec.chain_len` deep.
pub fn gen_independent_ilp(spec: &KernelSpec) -> Result<PtxKernel, KernelError> {
    gen_independent_ilp_with(spec, TileCapabilities::default())
}

pub fn gen_independent_ilp_with(spec: &KernelSpec, caps: TileCapabilities) -> Result<PtxKernel, KernelError> {
    spec.validate()?;
    if !spec.workload.is_compute() {
        return Err(KernelError::InvalidSpec(format!("{} is not an arithmetic workload", spec.workload)));
    }
    let demand = register_demand(spec);
    if demand > REGISTER_BUDGET {
        return Err(KernelError::SpecTooLarge { demand, budget: REGISTER_BUDGET });
    }
    match (spec.workload, spec.mma) {
        (WorkloadClass::MmaSync, Some(desc)) => mma_kernel(spec, &desc, caps),
        _ => scalar_kernel(spec),
    }
}

pub(crate) fn kernel_name(spec: &KernelSpec) -> String {
    let family = match spec.workload {
        WorkloadClass::PureInt32Mad => "int32".to_string(),
        WorkloadClass::PureFp32Fma => "fp32".to_string(),
        WorkloadClass::PureFp64Fma => "fp64".to_string(),
        WorkloadClass::MixedIntFp32(p) => format!("mixed{}_{}", p.int_run, p.fp_run),
        WorkloadClass::MmaSync => match spec.mma {
            Some(d) => format!("mma_{}_{}", d.a_type, d.tile),
            None => "mma".to_string(),
        },
        other => other.family_name().to_ascii_lowercase(),
    };
    format!("{family}_c{}_x{}_i{}_w{}", spec.chain_len, spec.ilp, spec.iterations, spec.warps)
}

/// Standard parameter list: per-warp cycles, then per-thread checksum.
pub(crate) const CYCLES_PARAM: &str = "cycles_ptr";
pub(crate) const CHECKSUM_PARAM: &str = "checksum_ptr";

pub(crate) fn declare_scratch(w: &mut PtxWriter) {
    w.raw("\t.reg .pred \t%p<4>;");
    w.raw("\t.reg .b32 \t%r<24>;");
    w.raw("\t.reg .b64 \t%rd<24>;");
}

/// %r0 tid, %r1 ntid, %r2 ctaid, %r3 global thread id, %r4 lane, %r5 global warp id.
pub(crate) fn thread_ids(w: &mut PtxWriter) {
    w.ins("mov.u32 %r0, %tid.x");
    w.ins("mov.u32 %r1, %ntid.x");
    w.ins("mov.u32 %r2, %ctaid.x");
    w.ins("mul.lo.u32 %r3, %r2, %r1");
    w.ins("add.u32 %r3, %r3, %r0");
    w.ins("and.b32 %r4, %r0, 31");
    w.ins("shr.u32 %r5, %r3, 5");
}

/// Lane 0 of every warp stores `end - start` into `cycles_ptr[warp]`.
pub(crate) fn store_warp_cycles(w: &mut PtxWriter, start: &str, end: &str) {
    w.ins(format!("sub.s64 %rd3, {end}, {start}"));
    w.ins("setp.ne.u32 %p1, %r4, 0");
    w.ins("@%p1 bra $L_after_cycles");
    w.ins(format!("ld.param.u64 %rd4, [{CYCLES_PARAM}]"));
    w.ins("cvta.to.global.u64 %rd4, %rd4");
    w.ins("mul.wide.u32 %rd5, %r5, 8");
    w.ins("add.s64 %rd6, %rd4, %rd5");
    w.ins("st.global.u64 [%rd6], %rd3");
    w.label("$L_after_cycles");
}

/// Every thread stores `value` into its 8-byte checksum slot.
pub(crate) fn store_checksum(w: &mut PtxWriter, value: &str, store_type: &str) {
    w.ins(format!("ld.param.u64 %rd7, [{CHECKSUM_PARAM}]"));
    w.ins("cvta.to.global.u64 %rd7, %rd7");
    w.ins("mul.wide.u32 %rd8, %r3, 8");
    w.ins("add.s64 %rd9, %rd7, %rd8");
    w.ins(format!("st.global.{store_type} [%rd9], {value}"));
}

/// Loop counter in %r6; the measured region is bracketed by the only two clock reads.
pub(crate) fn open_measured_loop(w: &mut PtxWriter) {
    w.ins("mov.u32 %r6, 0");
    w.ins("bar.sync 0");
    w.ins("mov.u64 %rd1, %clock64");
    w.label("$L_measure");
}

pub(crate) fn close_measured_loop(w: &mut PtxWriter, iterations: u32) {
    w.ins("add.u32 %r6, %r6, 1");
    w.ins(format!("setp.lt.u32 %p0, %r6, {iterations}"));
    w.ins("@%p0 bra $L_measure");
    w.ins("mov.u64 %rd2, %clock64");
}

pub(crate) fn standard_result_layout(launch: &LaunchConfig) -> ResultLayout {
    ResultLayout {
        cycles_param: CYCLES_PARAM.into(),
        granularity: CycleGranularity::PerWarp,
        cycle_slots: launch.warps_per_block() * launch.blocks(),
        checksum_param: CHECKSUM_PARAM.into(),
        checksum_slots: launch.total_threads(),
    }
}

pub(crate) fn standard_buffers(layout: &ResultLayout) -> Vec<BufferSpec> {
    vec![
        BufferSpec { param: CYCLES_PARAM.into(), bytes: u64::from(layout.cycle_slots) * 8, init: BufferInit::Zeroed },
        BufferSpec { param: CHECKSUM_PARAM.into(), bytes: layout.checksum_slots * 8, init: BufferInit::Zeroed },
    ]
}

#[derive(Clone, Copy)]
enum ScalarBank {
    Int,
    Fp32,
    Fp64,
    Mixed(MixPattern),
}

impl ScalarBank {
    fn of(w: WorkloadClass) -> Self {
        match w {
            WorkloadClass::PureInt32Mad => Self::Int,
            WorkloadClass::PureFp32Fma => Self::Fp32,
            WorkloadClass::PureFp64Fma => Self::Fp64,
            WorkloadClass::MixedIntFp32(p) => Self::Mixed(p),
            _ => unreachable!("scalar bank requested for {w}"),
        }
    }

    fn reg_type(&self) -> &'static str {
        match self {
            Self::Int => ".s32",
            Self::Fp32 => ".f32",
            Self::Fp64 => ".f64",
            Self::Mixed(_) => ".b32",
        }
    }

    /// Opcode (with type suffix) for chain position `step`.
    fn opcode(&self, step: u32) -> &'static str {
        match self {
            Self::Int => "mad.lo.s32",
            Self::Fp32 => "fma.rn.f32",
            Self::Fp64 => "fma.rn.f64",
            Self::Mixed(p) if p.is_int(step) => "mad.lo.s32",
            Self::Mixed(_) => "fma.rn.f32",
        }
    }
}

fn scalar_kernel(spec: &KernelSpec) -> Result<PtxKernel, KernelError> {
    let bank = ScalarBank::of(spec.workload);
    let name = kernel_name(spec);
    let target = PtxTarget::for_spec(spec);
    let launch = LaunchConfig::single_block(spec.warps * 32);
    let ilp = spec.ilp;

    let mut w = PtxWriter::new(&name, spec, &target);
    w.entry(&name, &[CYCLES_PARAM, CHECKSUM_PARAM]);
    declare_scratch(&mut w);
    w.raw(&format!("\t.reg {} \t%c<{ilp}>;", bank.reg_type()));
    w.raw(&format!("\t.reg {} \t%k<{ilp}>;", bank.reg_type()));
    w.raw("");
    thread_ids(&mut w);

    w.comment("seed chain and operand registers from the thread id");
    for c in 0..ilp {
        match bank {
            ScalarBank::Int => {
                w.ins(format!("add.s32 %c{c}, %r3, {}", c + 1));
                w.ins(format!("add.s32 %k{c}, %r0, {}", c + 3));
            }
            ScalarBank::Fp32 => {
                w.ins(format!("cvt.rn.f32.u32 %c{c}, %r3"));
                w.ins(format!("cvt.rn.f32.u32 %k{c}, %r0"));
                w.ins(format!("mul.f32 %k{c}, %k{c}, 0f33800000"));
                w.ins(format!("add.f32 %k{c}, %k{c}, 0f3F7FF000"));
            }
            ScalarBank::Fp64 => {
                w.ins(format!("cvt.rn.f64.u32 %c{c}, %r3"));
                w.ins(format!("cvt.rn.f64.u32 %k{c}, %r0"));
                w.ins(format!("mul.f64 %k{c}, %k{c}, 0d3E70000000000000"));
                w.ins(format!("add.f64 %k{c}, %k{c}, 0d3FEFFE0000000000"));
            }
            ScalarBank::Mixed(_) => {
                w.ins(format!("add.u32 %c{c}, %r3, {}", c + 1));
                w.ins(format!("or.b32 %k{c}, %r0, 1065353216"));
            }
        }
    }

    open_measured_loop(&mut w);
    for step in 0..spec.chain_len {
        let op = bank.opcode(step);
        for c in 0..ilp {
            w.ins(format!("{op} %c{c}, %c{c}, %k{c}, %k{c}"));
        }
    }
    close_measured_loop(&mut w, spec.iterations);
    store_warp_cycles(&mut w, "%rd1", "%rd2");

    let (combine, store_type) = match bank {
        ScalarBank::Int => ("add.s32", "b32"),
        ScalarBank::Fp32 => ("add.f32", "f32"),
        ScalarBank::Fp64 => ("add.f64", "f64"),
        ScalarBank::Mixed(_) => ("xor.b32", "b32"),
    };
    for c in 1..ilp {
        w.ins(format!("{combine} %c0, %c0, %c{c}"));
    }
    store_checksum(&mut w, "%c0", store_type);

    let result_layout = standard_result_layout(&launch);
    Ok(PtxKernel {
        entry_symbol: name.clone(),
        buffers: standard_buffers(&result_layout),
        name,
        source: w.finish(),
        launch,
        result_layout,
        target,
        spec: spec.clone(),
        host_data: Vec::new(),
    })
}

fn reg_list(prefix: &str, range: std::ops::Range<u32>) -> String {
    let regs: Vec<String> = range.map(|i| format!("%{prefix}{i}")).collect();
    format!("{{{}}}", regs.join(", "))
}

fn mma_kernel(spec: &KernelSpec, desc: &MmaDescriptor, caps: TileCapabilities) -> Result<PtxKernel, KernelError> {
    let instr = gen_mma_instruction_with(desc, caps)?;
    let frag = desc.fragments();
    let name = kernel_name(spec);
    let target = PtxTarget::for_spec(spec);
    let launch = LaunchConfig::single_block(spec.warps * 32);
    let ilp = spec.ilp;
    let (in_ty, acc_ty) = if frag.double { (".f64", ".f64") } else { (".b32", ".f32") };

    let mut w = PtxWriter::new(&name, spec, &target);
    w.entry(&name, &[CYCLES_PARAM, CHECKSUM_PARAM]);
    declare_scratch(&mut w);
    w.raw(&format!("\t.reg {in_ty} \t%a<{}>;", frag.a));
    w.raw(&format!("\t.reg {in_ty} \t%b<{}>;", frag.b));
    w.raw(&format!("\t.reg {acc_ty} \t%acc<{}>;", ilp * frag.c));
    w.raw("");
    thread_ids(&mut w);

    w.comment("operand fragments derived from the thread id, accumulators cleared");
    for (prefix, count) in [("a", frag.a), ("b", frag.b)] {
        for i in 0..count {
            if frag.double {
                w.ins(format!("cvt.rn.f64.u32 %{prefix}{i}, %r0"));
            } else {
                w.ins(format!("or.b32 %{prefix}{i}, %r0, {}", 0x3800_3800u32 + i));
            }
        }
    }
    for j in 0..ilp * frag.c {
        if frag.double {
            w.ins(format!("mov.f64 %acc{j}, 0d0000000000000000"));
        } else {
            w.ins(format!("mov.f32 %acc{j}, 0f00000000"));
        }
    }

    let a = reg_list("a", 0..frag.a);
    let b = reg_list("b", 0..frag.b);
    open_measured_loop(&mut w);
    for _ in 0..spec.chain_len {
        for c in 0..ilp {
            let d = reg_list("acc", c * frag.c..(c + 1) * frag.c);
            w.ins(format!("{instr} {d}, {a}, {b}, {d}"));
        }
    }
    close_measured_loop(&mut w, spec.iterations);
    store_warp_cycles(&mut w, "%rd1", "%rd2");

    let (combine, store_type) = if frag.double { ("add.f64", "f64") } else { ("add.f32", "f32") };
    for j in 1..ilp * frag.c {
        w.ins(format!("{combine} %acc0, %acc0, %acc{j}"));
    }
    store_checksum(&mut w, "%acc0", store_type);

    let result_layout = standard_result_layout(&launch);
    Ok(PtxKernel {
        entry_symbol: name.clone(),
        buffers: standard_buffers(&result_layout),
        name,
        source: w.finish(),
        launch,
        result_layout,
        target,
        spec: spec.clone(),
        host_data: Vec::new(),
    })
}
