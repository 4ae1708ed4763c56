//! PTX microbenchmark generation.
//!
//! Every generated kernel brackets its measured region with exactly two
//! `%clock64` reads and stores a value derived from the measured work, so the
//! assembler cannot discard it.

pub mod chase;
pub mod compute;
pub mod emit;
pub mod memory;
pub mod mma;
pub mod spec;
pub mod wellformed;

use thiserror::Error;

pub use chase::{cyclic_permutation, gen_pointer_chase, gen_pointer_chase_spec, verify_single_cycle};
pub use compute::{
    gen_dependent_chain, gen_independent_ilp, gen_independent_ilp_with, register_demand, REGISTER_BUDGET,
};
pub use emit::{
    BufferInit, BufferSpec, LaunchConfig, LaunchMetadata, PtxKernel, PtxTarget, ResultLayout, WrittenKernel,
};
pub use memory::{
    gen_bandwidth, gen_bandwidth_spec, gen_clock_overhead, gen_l2_probe_spec, gen_l2_warp_probe, gen_strided_probe,
    Direction, ProbeSpace, STATIC_SHARED_LIMIT,
};
pub use mma::{
    gen_mma_instruction, gen_mma_instruction_with, AccumType, ElementType, KindSuffix, MatrixShape, MmaDescriptor,
    TileCapabilities, LOW_PRECISION_FORMATS,
};
pub use spec::{KernelSpec, MixPattern, WorkloadClass, MAX_WARPS};
pub use wellformed::{check_well_formed, ptx_problems};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("invalid kernel spec: {0}")]
    InvalidSpec(String),
    #[error("spec needs {demand} registers per thread, budget is {budget}")]
    SpecTooLarge { demand: u32, budget: u32 },
    #[error("invalid precision kind: {0}")]
    InvalidPrecisionKind(String),
    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),
    #[error("footprint of {bytes} bytes exceeds {space} capacity of {capacity} bytes")]
    FootprintTooLarge { bytes: u64, capacity: u64, space: String },
    #[error("malformed PTX: {}", .0.join("; "))]
    Malformed(Vec<String>),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Device facts and options that select between generator variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenContext {
    /// Seeds the pointer-chase permutation.
    pub seed: u64,
    pub caps: TileCapabilities,
    /// Dynamic shared-memory ceiling; footprints above the static limit need it.
    pub shared_limit_bytes: Option<u64>,
    pub l1_bytes: u64,
}

impl Default for GenContext {
    fn default() -> Self {
        GenContext { seed: 0, caps: TileCapabilities::default(), shared_limit_bytes: None, l1_bytes: 128 * 1024 }
    }
}

/// Generate the kernel for any family.
pub fn generate(spec: &KernelSpec, ctx: &GenContext) -> Result<PtxKernel, KernelError> {
    use WorkloadClass::*;
    match spec.workload {
        PureInt32Mad | PureFp32Fma | PureFp64Fma | MixedIntFp32(_) | MmaSync => {
            gen_independent_ilp_with(spec, ctx.caps)
        }
        PointerChase => gen_pointer_chase_spec(spec, ctx.seed),
        SharedMemStride => {
            let footprint =
                if spec.working_set_bytes == 0 { memory::DEFAULT_PROBE_FOOTPRINT } else { spec.working_set_bytes };
            let space = match ctx.shared_limit_bytes {
                Some(limit_bytes) if footprint > STATIC_SHARED_LIMIT => ProbeSpace::SharedDynamic { limit_bytes },
                _ => ProbeSpace::Shared,
            };
            gen_strided_probe(spec, space)
        }
        L1Stride => gen_strided_probe(spec, ProbeSpace::L1ViaGlobal { l1_bytes: ctx.l1_bytes }),
        L2WarpLoadStore => gen_l2_probe_spec(spec),
        GlobalBandwidthRead | GlobalBandwidthWrite => gen_bandwidth_spec(spec),
        ClockOverhead => {
            spec.validate()?;
            Ok(gen_clock_overhead())
        }
    }
}
