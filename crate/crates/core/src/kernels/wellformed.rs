//! Structural PTX checks: directives, braces, register declarations, labels, opcodes.

use std::collections::{BTreeMap, BTreeSet};

use super::KernelError;

const SPECIAL_REGS: &[&str] = &["tid", "ntid", "ctaid", "nctaid", "laneid", "warpid", "smid", "clock", "clock64"];

const OPCODES: &[&str] = &[
    "mov", "add", "sub", "mul", "mad", "fma", "and", "or", "xor", "not", "shl", "shr", "setp", "selp", "bra", "ld",
    "st", "cvta", "cvt", "bar", "ret", "mma", "min", "max",
];

/// Every problem found in `source`; empty means well-formed.
pub fn ptx_problems(source: &str) -> Vec<String> {
    let mut problems = Vec::new();
    let lines: Vec<(usize, &str)> = source
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, strip_comment(l).trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();

    let version = lines.iter().find_map(|(_, l)| l.strip_prefix(".version ")).map(str::trim);
    let target = lines.iter().find_map(|(_, l)| l.strip_prefix(".target ")).map(str::trim);
    let version = match version.and_then(parse_version) {
        Some(v) => Some(v),
        None => {
            problems.push("missing or unparsable .version directive".to_string());
            None
        }
    };
    if target.is_none() {
        problems.push("missing .target directive".to_string());
    }
    if !lines.iter().any(|(_, l)| *l == ".address_size 64") {
        problems.push("missing .address_size 64".to_string());
    }
    let ordered: Vec<&str> = lines.iter().map(|(_, l)| *l).take(3).collect();
    if ordered.first().map(|l| !l.starts_with(".version")).unwrap_or(true) {
        problems.push(".version must be the first directive".to_string());
    }

    let mut depth: i64 = 0;
    let mut ranges: BTreeMap<String, u32> = BTreeMap::new();
    let mut scalars: BTreeSet<String> = BTreeSet::new();
    let mut params: BTreeSet<String> = BTreeSet::new();
    let mut labels: BTreeSet<String> = BTreeSet::new();
    let mut branches: Vec<(usize, String)> = Vec::new();
    let mut uses: Vec<(usize, String)> = Vec::new();
    let mut in_params = false;
    let mut entries = 0;

    for &(n, line) in &lines {
        for c in line.chars() {
            match c {
                '{' => depth += 1,
                '}' => depth -= 1,
                _ => {}
            }
        }
        if depth < 0 {
            problems.push(format!("line {n}: unbalanced closing brace"));
            depth = 0;
        }
        if line.starts_with(".visible .entry ") || line.starts_with(".entry ") {
            entries += 1;
            in_params = true;
            continue;
        }
        if in_params {
            if line == ")" {
                in_params = false;
            } else if let Some(rest) = line.strip_prefix(".param ") {
                if let Some(name) = rest.split_whitespace().last() {
                    params.insert(name.trim_end_matches(',').to_string());
                }
            } else {
                problems.push(format!("line {n}: unexpected text in parameter list: {line}"));
            }
            continue;
        }
        if line.starts_with('.') && depth == 0 {
            continue;
        }
        if line == "{" || line == "}" {
            continue;
        }
        if let Some(label) = line.strip_suffix(':') {
            if !is_ident(label) {
                problems.push(format!("line {n}: bad label `{label}`"));
            }
            if !labels.insert(label.to_string()) {
                problems.push(format!("line {n}: duplicate label `{label}`"));
            }
            continue;
        }
        if !line.ends_with(';') {
            problems.push(format!("line {n}: statement does not end with `;`: {line}"));
            continue;
        }
        let stmt = line.trim_end_matches(';').trim();
        if let Some(decl) = stmt.strip_prefix(".reg ") {
            match parse_reg_decl(decl) {
                Some((name, Some(count))) => {
                    ranges.insert(name, count);
                }
                Some((name, None)) => {
                    scalars.insert(name);
                }
                None => problems.push(format!("line {n}: bad register declaration: {stmt}")),
            }
            continue;
        }
        let body = match stmt.strip_prefix('@') {
            Some(rest) => {
                let (pred, tail) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
                uses.push((n, pred.trim_start_matches('!').trim_start_matches('%').to_string()));
                tail.trim()
            }
            None => stmt,
        };
        let (op, operands) = body.split_once(char::is_whitespace).unwrap_or((body, ""));
        let root = op.split('.').next().unwrap_or("");
        if !OPCODES.contains(&root) {
            problems.push(format!("line {n}: unknown opcode `{op}`"));
        }
        if op.contains("kind::f8f6f4") {
            if let Some(v) = version {
                if v < (8, 7) {
                    problems.push(format!(
                        "line {n}: .kind::f8f6f4 needs PTX 8.7 or newer, module declares {}.{}",
                        v.0, v.1
                    ));
                }
            }
            if !target.map(is_family_specific_blackwell).unwrap_or(false) {
                problems.push(format!(
                    "line {n}: .kind::f8f6f4 needs an sm_1xxa target, module declares {}",
                    target.unwrap_or("nothing")
                ));
            }
        }
        if root == "bra" {
            branches.push((n, operands.trim().to_string()));
            continue;
        }
        if op.starts_with("ld.param") {
            if let Some(p) = bracketed(operands) {
                if !params.contains(p) {
                    problems.push(format!("line {n}: undeclared parameter `{p}`"));
                }
            }
        }
        for reg in register_tokens(operands) {
            uses.push((n, reg));
        }
    }

    if depth != 0 {
        problems.push(format!("unbalanced braces: {depth} left open"));
    }
    if entries == 0 {
        problems.push("no .entry found".to_string());
    }
    for (n, target) in branches {
        if !labels.contains(&target) {
            problems.push(format!("line {n}: branch to undefined label `{target}`"));
        }
    }
    for (n, reg) in uses {
        if !is_declared(&reg, &ranges, &scalars) {
            problems.push(format!("line {n}: undeclared register `%{reg}`"));
        }
    }
    problems
}

/// `Ok` iff [`ptx_problems`] is empty.
pub fn check_well_formed(source: &str) -> Result<(), KernelError> {
    let problems = ptx_problems(source);
    if problems.is_empty() {
        Ok(())
    } else {
        Err(KernelError::Malformed(problems))
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find("//") {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_version(v: &str) -> Option<(u32, u32)> {
    let (a, b) = v.split_once('.')?;
    Some((a.parse().ok()?, b.parse().ok()?))
}

fn is_family_specific_blackwell(target: &str) -> bool {
    target
        .strip_prefix("sm_1")
        .and_then(|rest| rest.strip_suffix('a'))
        .map(|digits| digits.len() == 2 && digits.bytes().all(|b| b.is_ascii_digit()))
        .unwrap_or(false)
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '$')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$')
}

/// `.type %name<N>` or `.type %name`.
fn parse_reg_decl(decl: &str) -> Option<(String, Option<u32>)> {
    let mut parts = decl.split_whitespace();
    let ty = parts.next()?;
    let reg = parts.next()?;
    if !ty.starts_with('.') || parts.next().is_some() {
        return None;
    }
    let reg = reg.strip_prefix('%')?;
    match reg.split_once('<') {
        Some((name, rest)) => {
            let count: u32 = rest.strip_suffix('>')?.parse().ok()?;
            is_ident(name).then(|| (name.to_string(), Some(count)))
        }
        None => is_ident(reg).then(|| (reg.to_string(), None)),
    }
}

fn bracketed(operands: &str) -> Option<&str> {
    let start = operands.find('[')?;
    let end = operands[start..].find(']')? + start;
    Some(operands[start + 1..end].trim())
}

/// Register names (without `%`) referenced in an operand list.
fn register_tokens(operands: &str) -> Vec<String> {
    let mut out = Vec::new();
    let bytes = operands.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let start = i + 1;
            let mut end = start;
            while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
                end += 1;
            }
            out.push(operands[start..end].to_string());
            i = end;
        } else {
            i += 1;
        }
    }
    out
}

fn is_declared(reg: &str, ranges: &BTreeMap<String, u32>, scalars: &BTreeSet<String>) -> bool {
    if SPECIAL_REGS.contains(&reg) || scalars.contains(reg) {
        return true;
    }
    let split = reg.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    let (prefix, digits) = reg.split_at(split);
    match (ranges.get(prefix), digits.parse::<u32>()) {
        (Some(&count), Ok(idx)) => idx < count && (digits == "0" || !digits.starts_with('0')),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "\
.version 8.7
.target sm_90
.address_size 64

.visible .entry k(
\t.param .u64 out
)
{
\t.reg .b32 %r<2>;
\t.reg .b64 %rd<2>;
\tmov.u32 %r0, %tid.x;
$L_top:
\tld.param.u64 %rd0, [out];
\tadd.u32 %r1, %r0, 1;
\tsetp.lt.u32 %p0, %r1, 4;
\tret;
}
";

    #[test]
    fn reports_undeclared_predicate() {
        let problems = ptx_problems(GOOD);
        assert_eq!(problems, vec!["line 15: undeclared register `%p0`".to_string()]);
    }

    #[test]
    fn accepts_after_declaring() {
        let fixed = GOOD.replace("\t.reg .b64 %rd<2>;", "\t.reg .b64 %rd<2>;\n\t.reg .pred %p<1>;");
        assert!(check_well_formed(&fixed).is_ok());
    }

    #[test]
    fn catches_each_defect() {
        let fixed = GOOD.replace("\t.reg .b64 %rd<2>;", "\t.reg .b64 %rd<2>;\n\t.reg .pred %p<1>;");
        let cases = [
            (fixed.replace(".version 8.7\n", ""), ".version"),
            (fixed.replace("ret;\n}", "ret;\n"), "unbalanced"),
            (fixed.replace("%r1, %r0, 1", "%r2, %r0, 1"), "undeclared register `%r2`"),
            (fixed.replace("ret;", "ret;\n\tbra $L_nowhere;"), "undefined label"),
            (fixed.replace("add.u32 %r1, %r0, 1;", "add.u32 %r1, %r0, 1"), "does not end"),
            (fixed.replace("[out]", "[other]"), "undeclared parameter"),
            (fixed.replace("ret;", "frobnicate.u32 %r0;"), "unknown opcode"),
        ];
        for (src, needle) in cases {
            let problems = ptx_problems(&src);
            assert!(problems.iter().any(|p| p.contains(needle)), "{needle}: {problems:?}");
        }
    }

    #[test]
    fn kind_requires_new_isa_and_arch_specific_target() {
        let base = GOOD.replace("\t.reg .b64 %rd<2>;", "\t.reg .b64 %rd<2>;\n\t.reg .pred %p<1>;").replace(
            "ret;",
            "mma.sync.aligned.kind::f8f6f4.m16n8k32.row.col.f32.e4m3.e4m3.f32 {%r0}, {%r0}, {%r0}, {%r0};\n\tret;",
        );
        assert!(ptx_problems(&base).iter().any(|p| p.contains("sm_1xxa")));
        let good = base.replace("sm_90", "sm_120a");
        assert!(ptx_problems(&good).is_empty(), "{:?}", ptx_problems(&good));
        let old = good.replace(".version 8.7", ".version 8.6");
        assert!(ptx_problems(&old).iter().any(|p| p.contains("8.7")));
    }

    #[test]
    fn target_family_pattern() {
        assert!(is_family_specific_blackwell("sm_120a"));
        assert!(is_family_specific_blackwell("sm_100a"));
        assert!(!is_family_specific_blackwell("sm_120"));
        assert!(!is_family_specific_blackwell("sm_90a"));
    }
}
