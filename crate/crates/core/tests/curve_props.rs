use gpudissect::curves::{
    crossover, detect_boundaries, saturation_point, CurveError, CurveSense, HierarchyReport, LatencyCurve, XKind,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RATIO: f64 = 1.5;

/// Plateau heights with consecutive ratios of at least 2, each held for `lens[i]` samples
/// on a half-octave grid starting at 1 KiB.
fn staircase() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (2usize..=5).prop_flat_map(|n| {
        (10.0f64..60.0, prop::collection::vec(2.0f64..4.0, n - 1), prop::collection::vec(3usize..8, n)).prop_map(
            |(base, steps, lens)| {
                let mut h = vec![base];
                for s in steps {
                    let last = *h.last().unwrap();
                    h.push(last * s);
                }
                (h, lens)
            },
        )
    })
}

fn build(heights: &[f64], lens: &[usize]) -> Vec<(u64, f64)> {
    let mut pts = Vec::new();
    for (h, &n) in heights.iter().zip(lens) {
        for _ in 0..n {
            let i = pts.len() as i32;
            let x = (1024.0 * 2f64.powf(i as f64 / 2.0)).round() as u64;
            pts.push((x, *h));
        }
    }
    pts
}

fn detect(pts: Vec<(u64, f64)>) -> HierarchyReport {
    detect_boundaries(&LatencyCurve::new(XKind::Bytes, pts).unwrap(), RATIO).unwrap()
}

proptest! {
    #[test]
    fn detects_every_step((h, lens) in staircase()) {
        let r = detect(build(&h, &lens));
        prop_assert_eq!(r.levels.len(), h.len());
        for (l, want) in r.levels.iter().zip(&h) {
            prop_assert!((l.plateau_cycles - want).abs() <= 1e-9 * want);
        }
    }

    #[test]
    fn invariant_under_y_scaling((h, lens) in staircase(), k in -3.0f64..3.0) {
        let curve = LatencyCurve::new(XKind::Bytes, build(&h, &lens)).unwrap();
        let factor = 10f64.powf(k);
        let a = detect_boundaries(&curve, RATIO).unwrap();
        let b = detect_boundaries(&curve.scaled(factor).unwrap(), RATIO).unwrap();
        prop_assert_eq!(&a.boundaries, &b.boundaries);
        prop_assert_eq!(a.levels.len(), b.levels.len());
        for (x, y) in a.levels.iter().zip(&b.levels) {
            prop_assert!((x.plateau_cycles * factor - y.plateau_cycles).abs() <= 1e-9 * y.plateau_cycles);
            prop_assert!((x.confidence - y.confidence).abs() <= 1e-9);
        }
    }

    #[test]
    fn robust_to_noise_below_threshold((h, lens) in staircase(), seed in any::<u64>()) {
        // Steps are at least 2x; +/-10% noise keeps steps above 1.63x and plateaus below 1.23x.
        let clean = detect(build(&h, &lens));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy: Vec<(u64, f64)> =
            build(&h, &lens).into_iter().map(|(x, y)| (x, y * (1.0 + rng.gen_range(-0.1..0.1)))).collect();
        let r = detect(noisy);
        prop_assert_eq!(&r.boundaries, &clean.boundaries);
    }

    #[test]
    fn extents_partition_the_sampled_range((h, lens) in staircase()) {
        let pts = build(&h, &lens);
        let r = detect(pts.clone());
        prop_assert_eq!(r.levels[0].extent_lower_bytes, pts[0].0);
        prop_assert_eq!(r.levels.last().unwrap().extent_upper_bytes, pts.last().unwrap().0);
        for w in r.levels.windows(2) {
            prop_assert_eq!(w[0].extent_upper_bytes, w[1].extent_lower_bytes);
            prop_assert!(w[0].extent_lower_bytes < w[0].extent_upper_bytes);
        }
        prop_assert_eq!(r.boundaries.len(), r.levels.len() - 1);
    }

    #[test]
    fn crossover_is_symmetric(
        xa in prop::collection::btree_set(1u64..64, 2..12),
        xb in prop::collection::btree_set(1u64..64, 2..12),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mk = |xs: &std::collections::BTreeSet<u64>| {
            LatencyCurve::new(XKind::Warps, xs.iter().map(|&x| (x, rng.gen_range(1.0..100.0))).collect()).unwrap()
        };
        let (a, b) = (mk(&xa), mk(&xb));
        match (crossover(&a, &b), crossover(&b, &a)) {
            (Ok(p), Ok(q)) => prop_assert_eq!(p, q),
            (Err(CurveError::DisjointDomains), Err(CurveError::DisjointDomains)) => {}
            (p, q) => prop_assert!(false, "asymmetric: {p:?} vs {q:?}"),
        }
    }

    #[test]
    fn crossover_of_identical_curves_is_none(xs in prop::collection::btree_set(1u64..64, 2..12), y in 1.0f64..50.0) {
        let c = LatencyCurve::new(XKind::Warps, xs.iter().map(|&x| (x, y + x as f64)).collect()).unwrap();
        prop_assert_eq!(crossover(&c, &c).unwrap(), None);
    }

    #[test]
    fn saturation_of_clamped_ramp(knee in 1u64..20, extra in 3u64..12, peak in 1.0f64..200.0) {
        let pts: Vec<(u64, f64)> = (1..=knee + extra).map(|x| (x, peak * x.min(knee) as f64 / knee as f64)).collect();
        let c = LatencyCurve::new(XKind::Ilp, pts).unwrap();
        prop_assert_eq!(saturation_point(&c, 3, 0.0, CurveSense::HigherIsBetter).unwrap(), knee);
    }
}

#[test]
fn flat_curve_is_one_level() {
    let r = detect((0..8).map(|i| (1024u64 << i, 40.0)).collect());
    assert_eq!(r.levels.len(), 1);
}

#[test]
fn all_transitions_is_no_plateau() {
    let pts: Vec<(u64, f64)> = (0..6).map(|i| (1024u64 << i, 2f64.powi(i * 2))).collect();
    let c = LatencyCurve::new(XKind::Bytes, pts).unwrap();
    assert!(matches!(detect_boundaries(&c, RATIO), Err(CurveError::NoPlateauFound)));
}
