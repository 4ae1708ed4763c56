//! Deterministic backend that answers from a [`TraceFixture`].

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::fixture::{power_label, TraceFixture};
use super::{
    check_bandwidth_bytes, check_run_inputs, fnv1a, Backend, BackendError, DeviceIdentity, ExecutionPolicy,
    MeasurementRecord,
};
use crate::kernels::{Direction, KernelSpec, PtxKernel};
use crate::power::{PowerSampler, ReplaySampler};

#[derive(Debug, Clone)]
pub struct ReplayBackend {
    fixture: TraceFixture,
}

impl ReplayBackend {
    pub fn new(fixture: TraceFixture) -> Self {
        ReplayBackend { fixture }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        TraceFixture::load(path).map(Self::new)
    }

    pub fn fixture(&self) -> &TraceFixture {
        &self.fixture
    }
}

impl Backend for ReplayBackend {
    fn device(&self) -> &DeviceIdentity {
        &self.fixture.device
    }

    fn run(
        &mut self,
        kernel: &PtxKernel,
        spec: &KernelSpec,
        policy: &ExecutionPolicy,
    ) -> Result<MeasurementRecord, BackendError> {
        check_run_inputs(kernel, spec, policy)?;
        let key = spec.canonical_key();
        let slots = kernel.result_layout.cycle_slots as usize;
        let reps = policy.repetitions as usize;
        let warm = policy.warmup_discards as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(key.as_bytes()) ^ policy.seed.rotate_left(17));

        let mut all = Vec::with_capacity(slots * reps);
        if let Some(entry) = self.fixture.exact_entry(spec) {
            for i in 0..slots * reps {
                all.push(entry.cycles[i % entry.cycles.len()]);
            }
        } else {
            let point = self.fixture.model(spec).ok_or_else(|| BackendError::FixtureMiss { key: key.clone() })?;
            for rep in 0..reps {
                let penalty =
                    if rep == 0 && spec.workload.is_scalar_compute() { self.fixture.first_run_penalty } else { 1.0 };
                for _ in 0..slots {
                    all.push(self.fixture.sample(point, penalty, &mut rng));
                }
            }
        }

        let retained = all.split_off(warm * slots);
        let hz = self.fixture.device.clock_hz();
        let wall_time_s =
            retained.chunks(slots.max(1)).map(|rep| rep.iter().copied().max().unwrap_or(0) as f64 / hz).sum();
        let mut digest = key.into_bytes();
        for c in &retained {
            digest.extend_from_slice(&c.to_le_bytes());
        }
        Ok(MeasurementRecord {
            spec: spec.clone(),
            device: self.fixture.device.clone(),
            cycles_per_warp: retained,
            wall_time_s,
            repetitions: policy.retained(),
            discarded_warmups: policy.warmup_discards,
            blocks: kernel.launch.blocks(),
            power_samples_w: None,
            checksum: format!("{:016x}", fnv1a(&digest)),
        })
    }

    fn probe_shared_limit(&mut self) -> Result<u64, BackendError> {
        Ok(self.fixture.shared_limit_bytes)
    }

    fn measure_bandwidth(&mut self, direction: Direction, bytes: u64) -> Result<f64, BackendError> {
        check_bandwidth_bytes(&self.fixture.device, bytes)?;
        Ok(match direction {
            Direction::Read => self.fixture.bandwidth.read_bytes_per_s,
            Direction::Write => self.fixture.bandwidth.write_bytes_per_s,
        })
    }

    fn clock_overhead(&mut self) -> Result<u64, BackendError> {
        Ok(self.fixture.clock_overhead_cycles)
    }

    fn power_sampler(&self, spec: &KernelSpec) -> Option<Box<dyn PowerSampler>> {
        let stored = self.fixture.power_trace(&power_label(spec)?)?;
        let trace = stored.trace().ok()?;
        Some(Box::new(ReplaySampler::new(trace, stored.window)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::fixture::{ChaseModel, FixtureEntry, Plateau};
    use crate::kernels::{gen_clock_overhead, gen_pointer_chase_spec, GenContext, WorkloadClass};

    fn fixture() -> TraceFixture {
        let mut f = TraceFixture::from_json_str(&crate::backend::fixture::tests::minimal_json(1)).unwrap();
        f.generators.pointer_chase = Some(ChaseModel {
            levels: vec![
                Plateau { upper_bytes: Some(1 << 17), cycles: 35.0 },
                Plateau { upper_bytes: None, cycles: 400.0 },
            ],
            noise: 0.02,
        });
        f
    }

    #[test]
    fn clock_overhead_kernel_returns_overhead() {
        let mut b = ReplayBackend::new(fixture());
        let k = gen_clock_overhead();
        let rec = b.run(&k, &k.spec, &ExecutionPolicy { repetitions: 4, warmup_discards: 1, seed: 0 }).unwrap();
        assert_eq!(rec.cycles_per_warp, vec![2; 3]);
        assert_eq!(rec.repetitions, 3);
        assert!(rec.wall_time_s > 0.0);
    }

    #[test]
    fn warmup_discard_arithmetic() {
        let mut b = ReplayBackend::new(fixture());
        let spec = KernelSpec::pointer_chase(4096, 16);
        let k = gen_pointer_chase_spec(&spec, 1).unwrap();
        let rec = b.run(&k, &spec, &ExecutionPolicy { repetitions: 1024, warmup_discards: 1, seed: 3 }).unwrap();
        assert_eq!(rec.repetitions, 1023);
        assert_eq!(rec.cycles_per_warp.len(), 1023);
        assert_eq!(rec.spec, spec);
    }

    #[test]
    fn fixture_miss_names_key() {
        let mut b = ReplayBackend::new(fixture());
        let spec = KernelSpec::dependent_chain(WorkloadClass::PureInt32Mad, 4, 8);
        let k = crate::kernels::generate(&spec, &GenContext::default()).unwrap();
        match b.run(&k, &spec, &ExecutionPolicy::default()) {
            Err(BackendError::FixtureMiss { key }) => assert_eq!(key, spec.canonical_key()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exact_entries_take_precedence() {
        let mut f = fixture();
        let spec = KernelSpec::pointer_chase(4096, 16);
        f.entries.push(FixtureEntry { spec: spec.clone(), cycles: vec![100, 200] });
        let mut b = ReplayBackend::new(f);
        let k = gen_pointer_chase_spec(&spec, 1).unwrap();
        let rec = b.run(&k, &spec, &ExecutionPolicy { repetitions: 5, warmup_discards: 1, seed: 0 }).unwrap();
        assert_eq!(rec.cycles_per_warp, vec![200, 100, 200, 100]);
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = KernelSpec::pointer_chase(1 << 20, 64);
        let k = gen_pointer_chase_spec(&spec, 1).unwrap();
        let p = ExecutionPolicy { repetitions: 50, warmup_discards: 1, seed: 11 };
        let a = ReplayBackend::new(fixture()).run(&k, &spec, &p).unwrap();
        let b = ReplayBackend::new(fixture()).run(&k, &spec, &p).unwrap();
        assert_eq!(a, b);
        let c = ReplayBackend::new(fixture()).run(&k, &spec, &ExecutionPolicy { seed: 12, ..p }).unwrap();
        assert_ne!(a.cycles_per_warp, c.cycles_per_warp);
    }

    #[test]
    fn mismatched_kernel_rejected() {
        let spec = KernelSpec::pointer_chase(4096, 16);
        let k = gen_pointer_chase_spec(&KernelSpec::pointer_chase(8192, 16), 1).unwrap();
        assert!(matches!(
            ReplayBackend::new(fixture()).run(&k, &spec, &ExecutionPolicy::default()),
            Err(BackendError::InvalidSpec(_))
        ));
    }

    #[test]
    fn bandwidth_bounds() {
        let mut b = ReplayBackend::new(fixture());
        assert!(matches!(b.measure_bandwidth(Direction::Read, 0), Err(BackendError::InvalidSpec(_))));
        assert!(matches!(b.measure_bandwidth(Direction::Read, 1 << 20), Err(BackendError::InvalidSpec(_))));
        assert!(matches!(b.measure_bandwidth(Direction::Write, 2 << 30), Err(BackendError::FootprintTooLarge { .. })));
        assert_eq!(b.measure_bandwidth(Direction::Write, 512 << 20).unwrap(), 5e11);
    }
}
