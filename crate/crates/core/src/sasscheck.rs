//! Parse disassembled SASS listings and check that generated kernels survived
//! the assembler intact.

use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::mma::{ElementType, MmaDescriptor};
use crate::kernels::{KernelSpec, WorkloadClass};

#[derive(Debug, Error)]
pub enum SassError {
    #[error("listing line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("listing holds {found} {opcode} instructions, expected at least {expected}")]
    ListingMismatch { opcode: String, expected: u64, found: u64 },
    #[error("no matrix instruction in listing")]
    NoMatrixInstructionFound,
    #[error("function `{0}` not found in listing")]
    FunctionNotFound(String),
    #[error("{0} has no arithmetic chain to verify")]
    NotAChain(String),
    #[error("disassembler failed: {0}")]
    DisassemblerFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SassInstruction {
    pub address: u64,
    pub predicate: Option<String>,
    /// Opcode with modifiers, e.g. `IMAD.MOV.U32`.
    pub opcode: String,
    pub operands: String,
}

impl SassInstruction {
    pub fn base(&self) -> &str {
        self.opcode.split('.').next().unwrap_or_default()
    }

    pub fn modifiers(&self) -> impl Iterator<Item = &str> {
        self.opcode.split('.').skip(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SassFunction {
    pub name: String,
    pub instructions: Vec<SassInstruction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SassListing {
    /// Lowercase `sm_XX[a]`, when the listing names it.
    pub arch: Option<String>,
    pub functions: Vec<SassFunction>,
}

fn arch_from_line(line: &str) -> Option<String> {
    if let Some(rest) = line.trim().strip_prefix("code for ") {
        return Some(rest.trim().to_ascii_lowercase());
    }
    let at = line.find("EF_CUDA_SM")?;
    let digits: String = line[at + 10..].chars().take_while(|c| c.is_ascii_alphanumeric()).collect();
    (!digits.is_empty()).then(|| format!("sm_{}", digits.to_ascii_lowercase()))
}

fn parse_instruction(text: &str, line: usize) -> Result<Option<SassInstruction>, SassError> {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("/*") else { return Ok(None) };
    let Some(end) = rest.find("*/") else {
        return Err(SassError::Parse { line, message: "unterminated address comment".into() });
    };
    let Ok(address) = u64::from_str_radix(rest[..end].trim(), 16) else {
        // Encoding-only continuation lines carry a hex word, not an address.
        return Ok(None);
    };
    let body = rest[end + 2..].trim();
    let Some(semi) = body.find(';') else {
        if body.is_empty() || body.starts_with("/*") {
            return Ok(None);
        }
        return Err(SassError::Parse { line, message: format!("missing `;` in `{body}`") });
    };
    let mut words = body[..semi].split_whitespace().peekable();
    let predicate = match words.peek() {
        Some(w) if w.starts_with('@') => Some(words.next().unwrap_or_default()[1..].to_string()),
        _ => None,
    };
    let Some(opcode) = words.next() else {
        return Err(SassError::Parse { line, message: "empty instruction".into() });
    };
    if !opcode.chars().next().is_some_and(|c| c.is_ascii_uppercase()) {
        return Err(SassError::Parse { line, message: format!("bad opcode `{opcode}`") });
    }
    let operands = words.collect::<Vec<_>>().join(" ");
    Ok(Some(SassInstruction { address, predicate, opcode: opcode.to_string(), operands }))
}

/// Parse `cuobjdump -sass` / `nvdisasm` style text.
pub fn parse_listing(text: &str) -> Result<SassListing, SassError> {
    let mut arch = None;
    let mut functions: Vec<SassFunction> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if arch.is_none() {
            arch = arch_from_line(line);
        }
        if let Some(name) = line.trim().strip_prefix("Function :") {
            functions.push(SassFunction { name: name.trim().to_string(), instructions: Vec::new() });
            continue;
        }
        if let Some(ins) = parse_instruction(line, n)? {
            match functions.last_mut() {
                Some(f) => f.instructions.push(ins),
                None => functions.push(SassFunction { name: String::new(), instructions: vec![ins] }),
            }
        }
    }
    Ok(SassListing { arch, functions })
}

impl SassListing {
    /// The function called `name`, or the only function in the listing.
    pub fn function(&self, name: &str) -> Result<&SassFunction, SassError> {
        if let Some(f) = self.functions.iter().find(|f| f.name == name) {
            return Ok(f);
        }
        match self.functions.as_slice() {
            [only] => Ok(only),
            _ => Err(SassError::FunctionNotFound(name.to_string())),
        }
    }
}

/// IMAD forms the compiler uses for moves and address arithmetic.
const IMAD_HELPERS: [&str; 5] = ["MOV", "SHL", "WIDE", "IADD", "HI"];

fn is_chain_op(ins: &SassInstruction, workload: WorkloadClass) -> bool {
    let base = ins.base();
    let int = || base == "IMAD" && !ins.modifiers().any(|m| IMAD_HELPERS.contains(&m));
    match workload {
        WorkloadClass::PureInt32Mad => int(),
        WorkloadClass::PureFp32Fma => base == "FFMA",
        WorkloadClass::PureFp64Fma => base == "DFMA",
        WorkloadClass::MixedIntFp32(_) => int() || base == "FFMA",
        WorkloadClass::MmaSync => is_matrix(base),
        _ => false,
    }
}

fn is_matrix(base: &str) -> bool {
    matches!(base, "HMMA" | "QMMA" | "OMMA" | "IMMA" | "DMMA")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainCheck {
    pub function: String,
    pub expected_min: u64,
    pub found: u64,
}

/// Every chain instruction in the loop body must appear in the listing.
pub fn verify_chain_integrity(listing: &SassListing, spec: &KernelSpec) -> Result<ChainCheck, SassError> {
    if !spec.workload.is_compute() {
        return Err(SassError::NotAChain(spec.workload.to_string()));
    }
    let name = crate::kernels::compute::kernel_name(spec);
    let f = listing.function(&name)?;
    let found = f.instructions.iter().filter(|i| is_chain_op(i, spec.workload)).count() as u64;
    let expected = u64::from(spec.chain_len) * u64::from(spec.ilp);
    if found < expected {
        return Err(SassError::ListingMismatch {
            opcode: match spec.workload {
                WorkloadClass::PureInt32Mad => "IMAD",
                WorkloadClass::PureFp32Fma => "FFMA",
                WorkloadClass::PureFp64Fma => "DFMA",
                WorkloadClass::MixedIntFp32(_) => "IMAD+FFMA",
                _ => "MMA",
            }
            .into(),
            expected,
            found,
        });
    }
    Ok(ChainCheck { function: f.name.clone(), expected_min: expected, found })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmaClassification {
    pub arch: String,
    /// Distinct matrix opcodes in listing order, with modifiers.
    pub opcodes: Vec<String>,
    pub expected: Vec<String>,
    pub consistent: bool,
}

/// Matrix opcode families the assembler is known to emit for `a_type` on `arch`.
pub fn expected_matrix_opcodes(arch: &str, a_type: ElementType) -> &'static [&'static str] {
    let blackwell = arch.trim_start_matches("sm_").starts_with("12");
    match a_type {
        ElementType::F64 => &["DMMA"],
        ElementType::F16 | ElementType::Bf16 | ElementType::Tf32 => &["HMMA"],
        _ if !blackwell => &["HMMA"],
        ElementType::E2m1 => &["QMMA", "OMMA"],
        _ => &["QMMA"],
    }
}

/// Which matrix instruction family the assembler chose for `desc`.
pub fn classify_mma(listing: &SassListing, desc: &MmaDescriptor) -> Result<MmaClassification, SassError> {
    let mut opcodes: Vec<String> = Vec::new();
    for ins in listing.functions.iter().flat_map(|f| &f.instructions) {
        if is_matrix(ins.base()) && !opcodes.contains(&ins.opcode) {
            opcodes.push(ins.opcode.clone());
        }
    }
    if opcodes.is_empty() {
        return Err(SassError::NoMatrixInstructionFound);
    }
    let arch = listing.arch.clone().unwrap_or_default();
    let expected = expected_matrix_opcodes(&arch, desc.a_type);
    let consistent = opcodes.iter().all(|o| expected.contains(&o.split('.').next().unwrap_or_default()));
    Ok(MmaClassification { arch, opcodes, expected: expected.iter().map(|s| s.to_string()).collect(), consistent })
}

pub const DEFAULT_ASSEMBLE: &str = "ptxas -arch={arch} {ptx} -o {cubin}";
pub const DEFAULT_DISASSEMBLE: &str = "cuobjdump -sass {cubin}";

/// Assemble and disassemble a PTX file with external tools.
///
/// Templates are whitespace-split; `{arch}`, `{ptx}` and `{cubin}` are
/// substituted per word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Disassembler {
    pub assemble: String,
    pub disassemble: String,
}

impl Default for Disassembler {
    fn default() -> Self {
        Disassembler { assemble: DEFAULT_ASSEMBLE.into(), disassemble: DEFAULT_DISASSEMBLE.into() }
    }
}

fn run_template(template: &str, vars: &[(&str, &str)]) -> Result<String, SassError> {
    let words: Vec<String> =
        template.split_whitespace().map(|w| vars.iter().fold(w.to_string(), |acc, (k, v)| acc.replace(k, v))).collect();
    let (prog, args) = words.split_first().ok_or_else(|| SassError::DisassemblerFailed("empty command".into()))?;
    let out =
        Command::new(prog).args(args).output().map_err(|e| SassError::DisassemblerFailed(format!("{prog}: {e}")))?;
    if !out.status.success() {
        return Err(SassError::DisassemblerFailed(format!(
            "{prog} exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

impl Disassembler {
    pub fn listing(&self, ptx: &Path, arch: &str) -> Result<SassListing, SassError> {
        let cubin = ptx.with_extension("cubin");
        let (ptx_s, cubin_s) = (ptx.to_string_lossy(), cubin.to_string_lossy());
        let vars = [("{arch}", arch), ("{ptx}", &*ptx_s), ("{cubin}", &*cubin_s)];
        run_template(&self.assemble, &vars)?;
        parse_listing(&run_template(&self.disassemble, &vars)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LISTING: &str = "
\tcode for sm_90
\t\tFunction : int32_c2_x1_i1_w1
\t.headerflags\t@\"EF_CUDA_SM90 EF_CUDA_VIRTUAL_SM(EF_CUDA_SM90)\"
        /*0000*/                   LDC R1, c[0x0][0x28] ;            /* 0x00000a00ff017b82 */
                                                                      /* 0x000fe40000000800 */
        /*0010*/                   IMAD.MOV.U32 R2, RZ, RZ, 0x1 ;
        /*0020*/                   IMAD R3, R2, R2, R2 ;
        /*0030*/                   IMAD R3, R3, R3, R2 ;
        /*0040*/              @!P0 BRA `(.L_x_0) ;
        /*0050*/                   EXIT ;
";

    #[test]
    fn parses_listing() {
        let l = parse_listing(LISTING).unwrap();
        assert_eq!(l.arch.as_deref(), Some("sm_90"));
        assert_eq!(l.functions.len(), 1);
        let f = &l.functions[0];
        assert_eq!(f.instructions.len(), 6);
        assert_eq!(f.instructions[4].predicate.as_deref(), Some("!P0"));
        assert_eq!(f.instructions[1].base(), "IMAD");
        assert_eq!(f.instructions[2].operands, "R3, R2, R2, R2");
    }

    #[test]
    fn chain_counts_exclude_helpers() {
        let l = parse_listing(LISTING).unwrap();
        let spec = KernelSpec::dependent_chain(WorkloadClass::PureInt32Mad, 2, 1);
        let c = verify_chain_integrity(&l, &spec).unwrap();
        assert_eq!((c.expected_min, c.found), (2, 2));
        let spec3 = KernelSpec::dependent_chain(WorkloadClass::PureInt32Mad, 3, 1);
        assert!(matches!(
            verify_chain_integrity(&l, &spec3),
            Err(SassError::ListingMismatch { expected: 3, found: 2, .. })
        ));
    }

    #[test]
    fn arch_from_headerflags() {
        let l = parse_listing("\t.headerflags @\"EF_CUDA_SM120A\"\n/*0000*/ EXIT ;").unwrap();
        assert_eq!(l.arch.as_deref(), Some("sm_120a"));
    }

    #[test]
    fn no_matrix_instruction() {
        let l = parse_listing(LISTING).unwrap();
        let d = MmaDescriptor::m16n8k32(ElementType::E4m3);
        assert!(matches!(classify_mma(&l, &d), Err(SassError::NoMatrixInstructionFound)));
    }

    #[test]
    fn expectations() {
        assert_eq!(expected_matrix_opcodes("sm_90", ElementType::E4m3), &["HMMA"]);
        assert_eq!(expected_matrix_opcodes("sm_120a", ElementType::E5m2), &["QMMA"]);
        assert_eq!(expected_matrix_opcodes("sm_120a", ElementType::E2m1), &["QMMA", "OMMA"]);
        assert_eq!(expected_matrix_opcodes("sm_120a", ElementType::F16), &["HMMA"]);
    }

    #[test]
    fn malformed_line() {
        assert!(matches!(parse_listing("/*0010*/ IMAD R1, R2"), Err(SassError::Parse { line: 1, .. })));
    }

    #[test]
    fn templated_tools() {
        let dir = tempfile::tempdir().unwrap();
        let ptx = dir.path().join("k.ptx");
        std::fs::write(&ptx, LISTING).unwrap();
        let d = Disassembler { assemble: "cp {ptx} {cubin}".into(), disassemble: "cat {cubin}".into() };
        assert_eq!(d.listing(&ptx, "sm_90").unwrap().functions[0].name, "int32_c2_x1_i1_w1");
        let bad = Disassembler { assemble: "false".into(), disassemble: "cat {cubin}".into() };
        assert!(matches!(bad.listing(&ptx, "sm_90"), Err(SassError::DisassemblerFailed(_))));
    }
}
