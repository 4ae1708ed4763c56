//! Oracles shared by the property suites and the acceptance run.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use gpudissect::kernels::{
    check_well_formed, KernelSpec, MixPattern, MmaDescriptor, WorkloadClass, LOW_PRECISION_FORMATS,
};
use num_bigint::BigUint;
use num_traits::ToPrimitive;
use proptest::prelude::*;

pub fn opcode_for(w: WorkloadClass, step: u32) -> &'static str {
    match w {
        WorkloadClass::PureInt32Mad => "mad.lo.s32",
        WorkloadClass::PureFp32Fma => "fma.rn.f32",
        WorkloadClass::PureFp64Fma => "fma.rn.f64",
        WorkloadClass::MixedIntFp32(p) => {
            if step % (p.int_run + p.fp_run) < p.int_run {
                "mad.lo.s32"
            } else {
                "fma.rn.f32"
            }
        }
        WorkloadClass::MmaSync => "mma.sync",
        _ => unreachable!(),
    }
}

/// Lines strictly between the measured-loop label and its back-edge.
pub fn loop_body(src: &str) -> Vec<String> {
    let lines: Vec<&str> = src.lines().map(str::trim).collect();
    let start = lines.iter().position(|l| *l == "$L_measure:").expect("loop label");
    let end = lines.iter().rposition(|l| l.ends_with("bra $L_measure;")).expect("back-edge");
    lines[start + 1..end].iter().map(|l| l.to_string()).collect()
}

/// Operand groups of an instruction: `{a, b}` braces collapse into one group.
pub fn operands(line: &str) -> (String, Vec<Vec<String>>) {
    let line = line.trim_end_matches(';');
    let (op, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
    let mut groups = Vec::new();
    let mut cur = String::new();
    let mut depth = 0;
    for c in rest.chars() {
        match c {
            '{' => depth += 1,
            '}' => depth -= 1,
            ',' if depth == 0 => {
                groups.push(cur.clone());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    if !cur.trim().is_empty() {
        groups.push(cur);
    }
    let groups = groups
        .into_iter()
        .map(|g| g.trim().trim_matches(|c| c == '{' || c == '}').split(',').map(|s| s.trim().to_string()).collect())
        .collect();
    (op.to_string(), groups)
}

/// Checks opcode counts and that the chain instructions form exactly `ilp`
/// disjoint def-use chains of `chain_len` links each.
pub fn check_chains(spec: &KernelSpec, src: &str) -> Result<(), String> {
    let body = loop_body(src);
    let chain_ops: Vec<&String> =
        body.iter().filter(|l| ["mad.", "fma.", "mma."].iter().any(|p| l.starts_with(p))).collect();
    let expected = (spec.chain_len * spec.ilp) as usize;
    if chain_ops.len() != expected {
        return Err(format!("{} chain ops, expected {expected}", chain_ops.len()));
    }
    let mut owner: BTreeMap<String, usize> = BTreeMap::new();
    let mut links: BTreeMap<usize, u32> = BTreeMap::new();
    let mut chain_regs: BTreeSet<String> = BTreeSet::new();
    for (i, line) in chain_ops.iter().enumerate() {
        let step = i as u32 / spec.ilp;
        let want = opcode_for(spec.workload, step);
        if !line.starts_with(want) {
            return Err(format!("op {i} is `{line}`, expected {want}"));
        }
        let (_, g) = operands(line);
        let (dest, acc) = if spec.workload == WorkloadClass::MmaSync {
            (g[0].clone(), g[3].clone())
        } else {
            (g[0].clone(), g[1].clone())
        };
        if dest != acc {
            return Err(format!("op {i} does not read its own destination: {line}"));
        }
        let key = dest.join(",");
        let next = owner.len();
        let id = *owner.entry(key).or_insert(next);
        if id != i % spec.ilp as usize {
            return Err(format!("op {i} belongs to chain {id}, expected {}", i % spec.ilp as usize));
        }
        *links.entry(id).or_default() += 1;
        chain_regs.extend(dest);
    }
    if owner.len() != spec.ilp as usize {
        return Err(format!("{} chains, expected {}", owner.len(), spec.ilp));
    }
    if links.values().any(|&n| n != spec.chain_len) {
        return Err(format!("uneven chain lengths {links:?}"));
    }
    for line in &chain_ops {
        let (_, g) = operands(line);
        let dest: BTreeSet<&String> = g[0].iter().collect();
        for src in g.iter().skip(1).flatten() {
            if chain_regs.contains(src) && !dest.contains(src) {
                return Err(format!("cross-chain read of {src} in `{line}`"));
            }
        }
    }
    Ok(())
}

pub fn structure(src: &str) -> Result<(), String> {
    let clocks = src.lines().filter(|l| l.contains("%clock64")).count();
    if clocks != 2 {
        return Err(format!("{clocks} clock reads"));
    }
    if !src.lines().any(|l| l.trim().starts_with("st.global") && l.contains("[%rd9]")) {
        return Err("missing checksum store".into());
    }
    if src.matches('{').count() != src.matches('}').count() {
        return Err("unbalanced braces".into());
    }
    check_well_formed(src).map_err(|e| e.to_string())
}

pub fn workload() -> impl Strategy<Value = WorkloadClass> {
    prop_oneof![
        Just(WorkloadClass::PureInt32Mad),
        Just(WorkloadClass::PureFp32Fma),
        Just(WorkloadClass::PureFp64Fma),
        (1u32..4, 1u32..4).prop_map(|(i, f)| WorkloadClass::MixedIntFp32(MixPattern { int_run: i, fp_run: f })),
        Just(WorkloadClass::MmaSync),
    ]
}

pub fn spec() -> impl Strategy<Value = KernelSpec> {
    (workload(), 1u32..48, 1u32..12, 1u32..6, 1u32..=32, 0usize..LOW_PRECISION_FORMATS.len()).prop_map(
        |(w, chain_len, ilp, iterations, warps, fmt)| {
            let mut s = KernelSpec::dependent_chain(w, chain_len, iterations).with_ilp(ilp).with_warps(warps);
            if w == WorkloadClass::MmaSync {
                s.mma = Some(MmaDescriptor::m16n8k32(LOW_PRECISION_FORMATS[fmt]));
            }
            s
        },
    )
}

/// `2MNK / (runtime * 1e12)` in exact rational arithmetic, rounded once to f64.
pub fn tflops_oracle(m: u32, n: u32, k: u32, runtime: f64) -> f64 {
    let bits = runtime.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = (bits & ((1 << 52) - 1)) | (1 << 52);
    let e = exp - 1075;
    let mut num = BigUint::from(2u32) * m * n * k;
    let mut den = BigUint::from(mant) * BigUint::from(10u32).pow(12);
    if e < 0 {
        num <<= (-e) as usize;
    } else {
        den <<= e as usize;
    }
    const S: usize = 200;
    let q = (num << S) / den;
    let hi = q.bits().saturating_sub(64);
    let top = (&q >> hi as usize).to_u64().unwrap() as f64;
    top * 2f64.powi(hi as i32 - S as i32)
}
