//! Declarative description of one microbenchmark kernel.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::mma::MmaDescriptor;
use super::KernelError;

/// Largest single-SM launch width used by the suite.
pub const MAX_WARPS: u32 = 32;

/// INT32:FP32 interleaving of a mixed workload, as run lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MixPattern {
    pub int_run: u32,
    pub fp_run: u32,
}

impl MixPattern {
    /// Strict 1:1 alternation.
    pub const MIXED1: MixPattern = MixPattern { int_run: 1, fp_run: 1 };
    /// Two INT32 instructions per FP32 instruction.
    pub const MIXED2: MixPattern = MixPattern { int_run: 2, fp_run: 1 };

    /// Whether position `step` of a chain issues an INT32 instruction.
    pub fn is_int(&self, step: u32) -> bool {
        step % (self.int_run + self.fp_run) < self.int_run
    }
}

/// Which workload a kernel measures. Exactly one per kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WorkloadClass {
    PureInt32Mad,
    PureFp32Fma,
    PureFp64Fma,
    MixedIntFp32(MixPattern),
    MmaSync,
    PointerChase,
    SharedMemStride,
    L1Stride,
    L2WarpLoadStore,
    GlobalBandwidthRead,
    GlobalBandwidthWrite,
    ClockOverhead,
}

impl WorkloadClass {
    /// Scalar arithmetic families that build dependency chains.
    pub fn is_scalar_compute(&self) -> bool {
        matches!(self, Self::PureInt32Mad | Self::PureFp32Fma | Self::PureFp64Fma | Self::MixedIntFp32(_))
    }

    /// Families that can be measured as instruction latency or throughput.
    pub fn is_compute(&self) -> bool {
        self.is_scalar_compute() || matches!(self, Self::MmaSync)
    }

    pub fn is_memory(&self) -> bool {
        matches!(
            self,
            Self::PointerChase
                | Self::SharedMemStride
                | Self::L1Stride
                | Self::L2WarpLoadStore
                | Self::GlobalBandwidthRead
                | Self::GlobalBandwidthWrite
        )
    }

    /// Name of the family without any variant payload.
    pub fn family_name(&self) -> &'static str {
        match self {
            Self::PureInt32Mad => "PureInt32Mad",
            Self::PureFp32Fma => "PureFp32Fma",
            Self::PureFp64Fma => "PureFp64Fma",
            Self::MixedIntFp32(_) => "MixedIntFp32",
            Self::MmaSync => "MmaSync",
            Self::PointerChase => "PointerChase",
            Self::SharedMemStride => "SharedMemStride",
            Self::L1Stride => "L1Stride",
            Self::L2WarpLoadStore => "L2WarpLoadStore",
            Self::GlobalBandwidthRead => "GlobalBandwidthRead",
            Self::GlobalBandwidthWrite => "GlobalBandwidthWrite",
            Self::ClockOverhead => "ClockOverhead",
        }
    }
}

impl fmt::Display for WorkloadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MixedIntFp32(p) if *p == MixPattern::MIXED1 => f.write_str("MixedIntFp32:Mixed1"),
            Self::MixedIntFp32(p) if *p == MixPattern::MIXED2 => f.write_str("MixedIntFp32:Mixed2"),
            Self::MixedIntFp32(p) => write!(f, "MixedIntFp32:{}:{}", p.int_run, p.fp_run),
            other => f.write_str(other.family_name()),
        }
    }
}

impl FromStr for WorkloadClass {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || KernelError::InvalidSpec(format!("unknown workload class `{s}`"));
        let mut parts = s.trim().splitn(2, ':');
        let head = parts.next().unwrap_or_default();
        let tail = parts.next();
        let simple = match head {
            "PureInt32Mad" => Some(Self::PureInt32Mad),
            "PureFp32Fma" => Some(Self::PureFp32Fma),
            "PureFp64Fma" => Some(Self::PureFp64Fma),
            "MmaSync" => Some(Self::MmaSync),
            "PointerChase" => Some(Self::PointerChase),
            "SharedMemStride" => Some(Self::SharedMemStride),
            "L1Stride" => Some(Self::L1Stride),
            "L2WarpLoadStore" => Some(Self::L2WarpLoadStore),
            "GlobalBandwidthRead" => Some(Self::GlobalBandwidthRead),
            "GlobalBandwidthWrite" => Some(Self::GlobalBandwidthWrite),
            "ClockOverhead" => Some(Self::ClockOverhead),
            "MixedIntFp32" => None,
            _ => return Err(bad()),
        };
        match (simple, tail) {
            (Some(w), None) => Ok(w),
            (Some(_), Some(_)) => Err(bad()),
            (None, None) | (None, Some("Mixed1")) => Ok(Self::MixedIntFp32(MixPattern::MIXED1)),
            (None, Some("Mixed2")) => Ok(Self::MixedIntFp32(MixPattern::MIXED2)),
            (None, Some(ratio)) => {
                let (i, f) = ratio.split_once(':').ok_or_else(bad)?;
                let int_run: u32 = i.parse().map_err(|_| bad())?;
                let fp_run: u32 = f.parse().map_err(|_| bad())?;
                if int_run == 0 || fp_run == 0 {
                    return Err(bad());
                }
                Ok(Self::MixedIntFp32(MixPattern { int_run, fp_run }))
            }
        }
    }
}

impl Serialize for WorkloadClass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WorkloadClass {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One microbenchmark configuration.
///
/// Fields a family does not use must hold their neutral value
/// (see [`KernelSpec::NEUTRAL`]); [`KernelSpec::validate`] enforces this.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub workload: WorkloadClass,
    #[serde(default = "one")]
    pub chain_len: u32,
    #[serde(default = "one")]
    pub ilp: u32,
    #[serde(default = "one")]
    pub iterations: u32,
    #[serde(default = "one")]
    pub warps: u32,
    #[serde(default)]
    pub stride: u32,
    #[serde(default)]
    pub working_set_bytes: u64,
    #[serde(default)]
    pub accesses: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mma: Option<MmaDescriptor>,
}

fn one() -> u32 {
    1
}

impl KernelSpec {
    /// Neutral values, by field: chain_len/ilp/iterations/warps = 1, the rest 0 / none.
    pub const NEUTRAL: KernelSpec = KernelSpec {
        workload: WorkloadClass::ClockOverhead,
        chain_len: 1,
        ilp: 1,
        iterations: 1,
        warps: 1,
        stride: 0,
        working_set_bytes: 0,
        accesses: 0,
        mma: None,
    };

    pub fn new(workload: WorkloadClass) -> Self {
        KernelSpec { workload, ..Self::NEUTRAL }
    }

    pub fn dependent_chain(workload: WorkloadClass, chain_len: u32, iterations: u32) -> Self {
        KernelSpec { chain_len, iterations, ..Self::new(workload) }
    }

    pub fn mma(desc: MmaDescriptor, ilp: u32, warps: u32, iterations: u32) -> Self {
        KernelSpec { ilp, warps, iterations, mma: Some(desc), ..Self::new(WorkloadClass::MmaSync) }
    }

    pub fn pointer_chase(working_set_bytes: u64, accesses: u32) -> Self {
        KernelSpec { working_set_bytes, accesses, ..Self::new(WorkloadClass::PointerChase) }
    }

    pub fn with_warps(mut self, warps: u32) -> Self {
        self.warps = warps;
        self
    }

    pub fn with_ilp(mut self, ilp: u32) -> Self {
        self.ilp = ilp;
        self
    }

    /// Measured instructions executed by one thread: chain_len × ilp × iterations.
    pub fn instructions_per_thread(&self) -> u64 {
        u64::from(self.chain_len) * u64::from(self.ilp) * u64::from(self.iterations)
    }

    /// Choose `iterations` so the instruction count stays near `total`
    /// regardless of chain length and ILP.
    pub fn hold_total_instructions(mut self, total: u64) -> Self {
        let per_iter = u64::from(self.chain_len) * u64::from(self.ilp);
        let iters = (total / per_iter.max(1)).max(1);
        self.iterations = u32::try_from(iters).unwrap_or(u32::MAX);
        self
    }

    /// Fields this workload family reads.
    pub fn uses(&self) -> FieldUse {
        use WorkloadClass::*;
        match self.workload {
            PureInt32Mad | PureFp32Fma | PureFp64Fma | MixedIntFp32(_) => {
                FieldUse { chain_len: true, ilp: true, iterations: true, warps: true, ..FieldUse::NONE }
            }
            MmaSync => {
                FieldUse { chain_len: true, ilp: true, iterations: true, warps: true, mma: true, ..FieldUse::NONE }
            }
            PointerChase => FieldUse { working_set_bytes: true, accesses: true, ..FieldUse::NONE },
            SharedMemStride | L1Stride => {
                FieldUse { warps: true, stride: true, working_set_bytes: true, accesses: true, ..FieldUse::NONE }
            }
            L2WarpLoadStore => FieldUse { warps: true, working_set_bytes: true, accesses: true, ..FieldUse::NONE },
            GlobalBandwidthRead | GlobalBandwidthWrite => {
                FieldUse { iterations: true, working_set_bytes: true, ..FieldUse::NONE }
            }
            ClockOverhead => FieldUse::NONE,
        }
    }

    /// Copy with every field the family ignores reset to neutral.
    pub fn normalized(&self) -> KernelSpec {
        let u = self.uses();
        let n = &Self::NEUTRAL;
        KernelSpec {
            workload: self.workload,
            chain_len: if u.chain_len { self.chain_len } else { n.chain_len },
            ilp: if u.ilp { self.ilp } else { n.ilp },
            iterations: if u.iterations { self.iterations } else { n.iterations },
            warps: if u.warps { self.warps } else { n.warps },
            stride: if u.stride { self.stride } else { n.stride },
            working_set_bytes: if u.working_set_bytes { self.working_set_bytes } else { 0 },
            accesses: if u.accesses { self.accesses } else { 0 },
            mma: if u.mma { self.mma } else { None },
        }
    }

    /// Stable lookup key: fields in fixed order, ignored fields normalized.
    pub fn canonical_key(&self) -> String {
        let s = self.normalized();
        let mma = s.mma.map(|m| m.to_string()).unwrap_or_else(|| "none".into());
        format!(
            "{};chain_len={};ilp={};iterations={};warps={};stride={};working_set_bytes={};accesses={};mma={}",
            s.workload, s.chain_len, s.ilp, s.iterations, s.warps, s.stride, s.working_set_bytes, s.accesses, mma
        )
    }

    /// Check ranges and neutral-value rules for the family.
    pub fn validate(&self) -> Result<(), KernelError> {
        let invalid = |msg: String| Err(KernelError::InvalidSpec(msg));
        let u = self.uses();
        let n = &Self::NEUTRAL;
        let family = self.workload.family_name();
        let check_neutral = |used: bool, name: &str, is_neutral: bool| -> Result<(), KernelError> {
            if !used && !is_neutral {
                return Err(KernelError::InvalidSpec(format!(
                    "{family} ignores `{name}`; it must be left at its neutral value"
                )));
            }
            Ok(())
        };
        check_neutral(u.chain_len, "chain_len", self.chain_len == n.chain_len)?;
        check_neutral(u.ilp, "ilp", self.ilp == n.ilp)?;
        check_neutral(u.iterations, "iterations", self.iterations == n.iterations)?;
        check_neutral(u.warps, "warps", self.warps == n.warps)?;
        check_neutral(u.stride, "stride", self.stride == 0)?;
        check_neutral(u.working_set_bytes, "working_set_bytes", self.working_set_bytes == 0)?;
        check_neutral(u.accesses, "accesses", self.accesses == 0)?;
        check_neutral(u.mma, "mma", self.mma.is_none())?;

        if self.chain_len == 0 {
            return invalid("chain_len must be at least 1".into());
        }
        if self.ilp == 0 {
            return invalid("ilp must be at least 1".into());
        }
        if self.iterations == 0 {
            return invalid("iterations must be at least 1".into());
        }
        if self.warps == 0 || self.warps > MAX_WARPS {
            return invalid(format!("warps must be in 1..={MAX_WARPS}, got {}", self.warps));
        }
        use WorkloadClass::*;
        match self.workload {
            MmaSync if self.mma.is_none() => invalid("MmaSync requires an mma descriptor".into()),
            PointerChase if self.working_set_bytes < 8 => {
                invalid("pointer chase needs at least one 8-byte element".into())
            }
            PointerChase | SharedMemStride | L1Stride | L2WarpLoadStore if self.accesses == 0 => {
                invalid(format!("{family} needs accesses >= 1"))
            }
            SharedMemStride | L1Stride if self.stride == 0 => invalid("stride must be at least 1".into()),
            GlobalBandwidthRead | GlobalBandwidthWrite if self.working_set_bytes == 0 => {
                invalid("bandwidth kernels must move at least one byte".into())
            }
            _ => Ok(()),
        }
    }
}

/// Which [`KernelSpec`] fields a family reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldUse {
    pub chain_len: bool,
    pub ilp: bool,
    pub iterations: bool,
    pub warps: bool,
    pub stride: bool,
    pub working_set_bytes: bool,
    pub accesses: bool,
    pub mma: bool,
}

impl FieldUse {
    pub const NONE: FieldUse = FieldUse {
        chain_len: false,
        ilp: false,
        iterations: false,
        warps: false,
        stride: false,
        working_set_bytes: false,
        accesses: false,
        mma: false,
    };
}
