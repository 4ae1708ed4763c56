//! Tensor-core `mma.sync` instruction descriptors and text generation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::KernelError;

/// Tile shape M×N×K of one matrix instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MatrixShape {
    pub m: u32,
    pub n: u32,
    pub k: u32,
}

impl MatrixShape {
    pub const M16N8K32: MatrixShape = MatrixShape { m: 16, n: 8, k: 32 };
    pub const M16N8K16: MatrixShape = MatrixShape { m: 16, n: 8, k: 16 };
    pub const M16N8K8: MatrixShape = MatrixShape { m: 16, n: 8, k: 8 };
    pub const M16N8K4: MatrixShape = MatrixShape { m: 16, n: 8, k: 4 };
    pub const M8N8K4: MatrixShape = MatrixShape { m: 8, n: 8, k: 4 };
    pub const M8N8K16: MatrixShape = MatrixShape { m: 8, n: 8, k: 16 };
    pub const M16N8K64: MatrixShape = MatrixShape { m: 16, n: 8, k: 64 };

    pub fn new(m: u32, n: u32, k: u32) -> Self {
        MatrixShape { m, n, k }
    }

    /// Floating-point operations of one multiply-accumulate over the tile.
    pub fn flops(&self) -> u64 {
        2 * u64::from(self.m) * u64::from(self.n) * u64::from(self.k)
    }
}

impl fmt::Display for MatrixShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}n{}k{}", self.m, self.n, self.k)
    }
}

impl FromStr for MatrixShape {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || KernelError::UnsupportedShape(format!("cannot parse tile `{s}`"));
        let rest = s.strip_prefix('m').ok_or_else(bad)?;
        let (m, rest) = rest.split_once('n').ok_or_else(bad)?;
        let (n, k) = rest.split_once('k').ok_or_else(bad)?;
        let parse = |v: &str| v.parse::<u32>().ok().filter(|&x| x > 0).ok_or_else(bad);
        Ok(MatrixShape { m: parse(m)?, n: parse(n)?, k: parse(k)? })
    }
}

impl Serialize for MatrixShape {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MatrixShape {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Operand element encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementType {
    E2m1,
    E2m3,
    E3m2,
    E4m3,
    E5m2,
    F16,
    Bf16,
    Tf32,
    F64,
}

impl ElementType {
    pub const ALL: [ElementType; 9] =
        [Self::E2m1, Self::E2m3, Self::E3m2, Self::E4m3, Self::E5m2, Self::F16, Self::Bf16, Self::Tf32, Self::F64];

    pub fn ptx_name(&self) -> &'static str {
        match self {
            Self::E2m1 => "e2m1",
            Self::E2m3 => "e2m3",
            Self::E3m2 => "e3m2",
            Self::E4m3 => "e4m3",
            Self::E5m2 => "e5m2",
            Self::F16 => "f16",
            Self::Bf16 => "bf16",
            Self::Tf32 => "tf32",
            Self::F64 => "f64",
        }
    }

    /// FP4/FP6/FP8 encodings that only exist under `.kind::f8f6f4`.
    pub fn needs_f8f6f4(&self) -> bool {
        matches!(self, Self::E2m1 | Self::E2m3 | Self::E3m2 | Self::E4m3 | Self::E5m2)
    }

    /// Significant bits of the encoding (FP4 = 4, FP6 = 6, ...).
    pub fn width_bits(&self) -> u32 {
        match self {
            Self::E2m1 => 4,
            Self::E2m3 | Self::E3m2 => 6,
            Self::E4m3 | Self::E5m2 => 8,
            Self::F16 | Self::Bf16 => 16,
            Self::Tf32 => 32,
            Self::F64 => 64,
        }
    }

    /// Bits each element occupies inside operand registers.
    fn container_bits(&self) -> u32 {
        match self {
            // sub-byte formats are padded into 8-bit containers under f8f6f4
            Self::E2m1 | Self::E2m3 | Self::E3m2 | Self::E4m3 | Self::E5m2 => 8,
            Self::F16 | Self::Bf16 => 16,
            Self::Tf32 => 32,
            Self::F64 => 64,
        }
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.ptx_name())
    }
}

impl FromStr for ElementType {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.ptx_name() == s.trim())
            .ok_or_else(|| KernelError::InvalidSpec(format!("unknown element type `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccumType {
    F32,
    F64,
}

impl AccumType {
    pub fn ptx_name(&self) -> &'static str {
        match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindSuffix {
    F8f6f4,
}

/// One `mma.sync` variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmaDescriptor {
    pub tile: MatrixShape,
    pub a_type: ElementType,
    pub b_type: ElementType,
    pub accum_type: AccumType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind_suffix: Option<KindSuffix>,
}

/// The low-precision formats exercised with m16n8k32 `.kind::f8f6f4`.
pub const LOW_PRECISION_FORMATS: [ElementType; 5] =
    [ElementType::E2m1, ElementType::E3m2, ElementType::E2m3, ElementType::E4m3, ElementType::E5m2];

impl MmaDescriptor {
    /// m16n8k32, f32 accumulate, with the kind suffix set when the format requires it.
    pub fn m16n8k32(format: ElementType) -> Self {
        MmaDescriptor {
            tile: MatrixShape::M16N8K32,
            a_type: format,
            b_type: format,
            accum_type: if format == ElementType::F64 { AccumType::F64 } else { AccumType::F32 },
            kind_suffix: format.needs_f8f6f4().then_some(KindSuffix::F8f6f4),
        }
    }

    pub fn uses_f8f6f4(&self) -> bool {
        self.kind_suffix == Some(KindSuffix::F8f6f4)
    }

    /// Per-thread operand fragment sizes.
    pub fn fragments(&self) -> Fragments {
        let t = &self.tile;
        let a_elems = t.m * t.k / 32;
        let b_elems = t.k * t.n / 32;
        let c_elems = t.m * t.n / 32;
        if self.a_type == ElementType::F64 {
            Fragments { a: a_elems.max(1), b: b_elems.max(1), c: c_elems.max(1), double: true }
        } else {
            let bits = self.a_type.container_bits();
            Fragments {
                a: (a_elems * bits / 32).max(1),
                b: (b_elems * bits / 32).max(1),
                c: c_elems.max(1),
                double: false,
            }
        }
    }
}

impl fmt::Display for MmaDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}.{}", self.tile, self.a_type, self.b_type, self.accum_type.ptx_name())?;
        if self.uses_f8f6f4() {
            f.write_str("+f8f6f4")?;
        }
        Ok(())
    }
}

/// Operand register counts for one thread.
///
/// `a`/`b` count 32-bit registers (64-bit when `double`), `c` counts accumulator registers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fragments {
    pub a: u32,
    pub b: u32,
    pub c: u32,
    pub double: bool,
}

impl Fragments {
    /// 32-bit register slots consumed by one accumulator set.
    pub fn accumulator_slots(&self) -> u32 {
        if self.double {
            self.c * 2
        } else {
            self.c
        }
    }

    pub fn input_slots(&self) -> u32 {
        let n = self.a + self.b;
        if self.double {
            n * 2
        } else {
            n
        }
    }
}

/// Shapes gated behind a flag because their fragment layouts differ from m16n8k32.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileCapabilities {
    pub extended_shapes: bool,
}

/// Full `mma.sync` instruction text (without operands) with default capabilities.
pub fn gen_mma_instruction(desc: &MmaDescriptor) -> Result<String, KernelError> {
    gen_mma_instruction_with(desc, TileCapabilities::default())
}

pub fn gen_mma_instruction_with(desc: &MmaDescriptor, caps: TileCapabilities) -> Result<String, KernelError> {
    if desc.a_type != desc.b_type {
        return Err(KernelError::InvalidSpec(format!(
            "operand types must match, got {} and {}",
            desc.a_type, desc.b_type
        )));
    }
    let ty = desc.a_type;
    if ty.needs_f8f6f4() && !desc.uses_f8f6f4() {
        return Err(KernelError::InvalidPrecisionKind(format!("{ty} operands require .kind::f8f6f4")));
    }
    if !ty.needs_f8f6f4() && desc.uses_f8f6f4() {
        return Err(KernelError::InvalidPrecisionKind(format!(".kind::f8f6f4 does not apply to {ty} operands")));
    }
    let expected_accum = if ty == ElementType::F64 { AccumType::F64 } else { AccumType::F32 };
    if desc.accum_type != expected_accum {
        return Err(KernelError::UnsupportedShape(format!(
            "{ty} operands accumulate in {}, not {}",
            expected_accum.ptx_name(),
            desc.accum_type.ptx_name()
        )));
    }
    if !shape_supported(desc.tile, ty, caps) {
        return Err(KernelError::UnsupportedShape(format!("{} with {ty} operands", desc.tile)));
    }

    let mut s = String::from("mma.sync.aligned");
    if desc.uses_f8f6f4() {
        s.push_str(".kind::f8f6f4");
    }
    let acc = desc.accum_type.ptx_name();
    s.push_str(&format!(".{}.row.col.{acc}.{ty}.{ty}.{acc}", desc.tile));
    Ok(s)
}

fn shape_supported(tile: MatrixShape, ty: ElementType, caps: TileCapabilities) -> bool {
    use ElementType::*;
    match ty {
        E2m1 | E2m3 | E3m2 | E4m3 | E5m2 => {
            tile == MatrixShape::M16N8K32
                || (caps.extended_shapes && (tile == MatrixShape::M8N8K16 || tile == MatrixShape::M16N8K64))
        }
        F16 | Bf16 => [MatrixShape::M16N8K8, MatrixShape::M16N8K16, MatrixShape::M16N8K32].contains(&tile),
        Tf32 => [MatrixShape::M16N8K4, MatrixShape::M16N8K8].contains(&tile),
        F64 => tile == MatrixShape::M8N8K4,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn e2m1_row() {
        let s = gen_mma_instruction(&MmaDescriptor::m16n8k32(ElementType::E2m1)).unwrap();
        assert_eq!(s, "mma.sync.aligned.kind::f8f6f4.m16n8k32.row.col.f32.e2m1.e2m1.f32");
    }

    #[test]
    fn f16_without_kind() {
        let s = gen_mma_instruction(&MmaDescriptor::m16n8k32(ElementType::F16)).unwrap();
        assert_eq!(s, "mma.sync.aligned.m16n8k32.row.col.f32.f16.f16.f32");
    }

    #[test]
    fn fp8_without_kind_is_rejected() {
        let mut d = MmaDescriptor::m16n8k32(ElementType::E4m3);
        d.kind_suffix = None;
        assert!(matches!(gen_mma_instruction(&d), Err(KernelError::InvalidPrecisionKind(_))));
    }

    #[test]
    fn kind_on_f16_is_rejected() {
        let mut d = MmaDescriptor::m16n8k32(ElementType::F16);
        d.kind_suffix = Some(KindSuffix::F8f6f4);
        assert!(matches!(gen_mma_instruction(&d), Err(KernelError::InvalidPrecisionKind(_))));
    }

    #[test]
    fn extended_shapes_need_the_flag() {
        let mut d = MmaDescriptor::m16n8k32(ElementType::E4m3);
        d.tile = MatrixShape::M16N8K64;
        assert!(matches!(gen_mma_instruction(&d), Err(KernelError::UnsupportedShape(_))));
        let s = gen_mma_instruction_with(&d, TileCapabilities { extended_shapes: true }).unwrap();
        assert!(s.contains(".m16n8k64."));
    }

    #[test]
    fn f64_uses_m8n8k4() {
        let d = MmaDescriptor {
            tile: MatrixShape::M8N8K4,
            a_type: ElementType::F64,
            b_type: ElementType::F64,
            accum_type: AccumType::F64,
            kind_suffix: None,
        };
        assert_eq!(gen_mma_instruction(&d).unwrap(), "mma.sync.aligned.m8n8k4.row.col.f64.f64.f64.f64");
        assert_eq!(d.fragments(), Fragments { a: 1, b: 1, c: 2, double: true });
    }

    #[test]
    fn fragments_for_fp8_tile() {
        let f = MmaDescriptor::m16n8k32(ElementType::E5m2).fragments();
        assert_eq!(f, Fragments { a: 4, b: 2, c: 4, double: false });
    }

    #[test]
    fn tile_parse() {
        assert_eq!("m16n8k32".parse::<MatrixShape>().unwrap(), MatrixShape::M16N8K32);
        assert!("m0n8k32".parse::<MatrixShape>().is_err());
        assert!("16x8x32".parse::<MatrixShape>().is_err());
    }
}
