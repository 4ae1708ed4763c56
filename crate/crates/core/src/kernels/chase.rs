//! Pointer-chase latency probe over a random single-cycle permutation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::compute::{
    close_measured_loop, declare_scratch, open_measured_loop, standard_buffers, standard_result_layout, store_checksum,
    store_warp_cycles, thread_ids, CHECKSUM_PARAM, CYCLES_PARAM,
};
use super::emit::{BufferInit, BufferSpec, HostBuffer, HostWords, LaunchConfig, PtxKernel, PtxTarget, PtxWriter};
use super::spec::{KernelSpec, WorkloadClass};
use super::KernelError;

pub const ELEMENT_BYTES: u64 = 8;
/// Timed dependent loads when the caller does not choose a count.
pub const DEFAULT_CHASE_ACCESSES: u32 = 1024;
/// Cap on untimed warm-up steps.
pub const MAX_WARM_STEPS: u64 = 1 << 24;

pub(crate) const CHAIN_PARAM: &str = "chain_ptr";

/// `next[i]` for a permutation consisting of exactly one cycle through all
/// `elements` slots (Sattolo's algorithm). One element yields a self-loop.
pub fn cyclic_permutation(elements: u64, seed: u64) -> Vec<u64> {
    let n = elements as usize;
    let mut next: Vec<u64> = (0..elements).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..i);
        next.swap(i, j);
    }
    next
}

/// True iff following `next` from slot 0 visits every slot once and returns after `len` steps.
pub fn verify_single_cycle(next: &[u64]) -> bool {
    let n = next.len();
    if n == 0 {
        return false;
    }
    let mut seen = vec![false; n];
    let mut at = 0usize;
    for _ in 0..n {
        if seen[at] {
            return false;
        }
        seen[at] = true;
        match usize::try_from(next[at]) {
            Ok(v) if v < n => at = v,
            _ => return false,
        }
    }
    at == 0
}

/// Pointer chase over `working_set_bytes` with [`DEFAULT_CHASE_ACCESSES`] timed loads.
pub fn gen_pointer_chase(working_set_bytes: u64, seed: u64) -> Result<PtxKernel, KernelError> {
    gen_pointer_chase_spec(&KernelSpec::pointer_chase(working_set_bytes, DEFAULT_CHASE_ACCESSES), seed)
}

pub fn gen_pointer_chase_spec(spec: &KernelSpec, seed: u64) -> Result<PtxKernel, KernelError> {
    if spec.workload != WorkloadClass::PointerChase {
        return Err(KernelError::InvalidSpec(format!("expected PointerChase, got {}", spec.workload)));
    }
    spec.validate()?;
    let elements = spec.working_set_bytes / ELEMENT_BYTES;
    let warm = elements.min(MAX_WARM_STEPS);
    let name = format!("chase_ws{}_a{}_s{seed}", spec.working_set_bytes, spec.accesses);
    let target = PtxTarget::for_spec(spec);
    let launch = LaunchConfig::single_block(1);

    let mut w = PtxWriter::new(&name, spec, &target);
    w.entry(&name, &[CHAIN_PARAM, CYCLES_PARAM, CHECKSUM_PARAM]);
    declare_scratch(&mut w);
    w.raw("");
    thread_ids(&mut w);
    w.ins(format!("ld.param.u64 %rd10, [{CHAIN_PARAM}]"));
    w.ins("cvta.to.global.u64 %rd10, %rd10");
    w.ins("mov.u64 %rd11, 0");

    w.comment("untimed pass to populate the caches");
    w.ins("mov.u32 %r7, 0");
    w.label("$L_warm");
    chase_step(&mut w);
    w.ins("add.u32 %r7, %r7, 1");
    w.ins(format!("setp.lt.u32 %p2, %r7, {warm}"));
    w.ins("@%p2 bra $L_warm");

    open_measured_loop(&mut w);
    chase_step(&mut w);
    close_measured_loop(&mut w, spec.accesses);
    store_warp_cycles(&mut w, "%rd1", "%rd2");
    store_checksum(&mut w, "%rd11", "u64");

    let result_layout = standard_result_layout(&launch);
    let mut buffers = vec![BufferSpec {
        param: CHAIN_PARAM.into(),
        bytes: elements * ELEMENT_BYTES,
        init: BufferInit::HostFile { file: format!("{name}.{CHAIN_PARAM}.bin") },
    }];
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
        host_data: vec![HostBuffer {
            param: CHAIN_PARAM.into(),
            words: HostWords::CyclicPermutation { elements, seed },
        }],
    })
}

/// `%rd11 = chain[%rd11]`; the address depends on the previous load.
fn chase_step(w: &mut PtxWriter) {
    w.ins("shl.b64 %rd12, %rd11, 3");
    w.ins("add.s64 %rd13, %rd10, %rd12");
    w.ins("ld.global.ca.u64 %rd11, [%rd13]");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_42_visits_all_1024_slots() {
        let next = cyclic_permutation(1024, 42);
        assert!(verify_single_cycle(&next));
        let mut sorted = next.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..1024).collect::<Vec<_>>());
    }

    #[test]
    fn single_element_is_self_loop() {
        assert_eq!(cyclic_permutation(1, 7), vec![0]);
        assert!(verify_single_cycle(&[0]));
    }

    #[test]
    fn detects_two_cycles() {
        assert!(!verify_single_cycle(&[1, 0, 3, 2]));
        assert!(!verify_single_cycle(&[]));
        assert!(!verify_single_cycle(&[5]));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(cyclic_permutation(500, 3), cyclic_permutation(500, 3));
        assert_ne!(cyclic_permutation(500, 3), cyclic_permutation(500, 4));
    }

    #[test]
    fn kernel_layout() {
        let k = gen_pointer_chase(8, 42).unwrap();
        assert_eq!(k.source.matches("%clock64").count(), 2);
        assert_eq!(k.source.matches("ld.global.ca.u64").count(), 2);
        assert_eq!(k.buffers[0].bytes, 8);
        assert_eq!(k.launch.total_threads(), 1);
        assert!(gen_pointer_chase(4, 42).is_err());
    }

    #[test]
    fn chain_written_as_little_endian_words() {
        let dir = tempfile::tempdir().unwrap();
        let k = gen_pointer_chase(64, 9).unwrap();
        let written = k.write_to(dir.path()).unwrap();
        let BufferInit::HostFile { file } = &written.buffers[0].init else {
            panic!("chain buffer must come from a host file");
        };
        let bytes = std::fs::read(file).unwrap();
        let words: Vec<u64> = bytes.chunks(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(words, cyclic_permutation(8, 9));
        assert!(verify_single_cycle(&words));
    }
}
