use brw_core::percolation::percolate_with;
use brw_core::renorm::vertex_half;
use brw_core::stats::{tail_from_values, wilson};
use brw_core::*;
use proptest::prelude::*;

fn lazy(dim: usize) -> DispersalKernel {
    DispersalKernel::new(dim, KernelFamily::LazyNearestNeighbor { laziness: 0.3 }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn runs_are_deterministic_and_bounded(seed in any::<u64>(), lambda in 0.0f64..4.0, half in 0u64..5) {
        let side = 2 * half + 1;
        let mut p = SimulationParams::new(lambda, lazy(2), CubeDomain::discrete(2, side).unwrap());
        p.seed = seed;
        p.horizon = 5.0;
        p.population_cap = 500;
        p.record_genealogy = true;
        let init = ParticleConfiguration::single(&[0.0, 0.0]);
        let (a, ga) = run(&p, &init).unwrap();
        let (b, _) = run(&p, &init).unwrap();
        prop_assert_eq!(a.outcome, b.outcome);
        prop_assert_eq!(a.events, b.events);
        prop_assert!(a.peak_population >= 1);
        let g = ga.unwrap();
        // every retained node sits in the cube; suppressed births sit outside
        for n in g.nodes() {
            let inside = p.domain.contains(&n.position);
            prop_assert_eq!(inside, n.fate != Fate::SuppressedAtBirth);
        }
        match a.outcome {
            Outcome::Extinct { tau } => {
                prop_assert!(tau <= p.horizon);
                prop_assert!(g.alive_ids().is_empty());
            }
            Outcome::CensoredHorizon { alive } => prop_assert_eq!(alive, g.alive_ids().len()),
            Outcome::CensoredCap { alive } => prop_assert!(alive >= p.population_cap),
        }
    }

    #[test]
    fn percolation_stays_in_the_cone(seed in any::<u64>(), p in 0.0f64..=1.0, height in 1u32..60) {
        let r = percolate_with(p, height, seed, true).unwrap();
        let levels = r.reached.unwrap();
        prop_assert_eq!(levels.len() as u32, r.sigma.levels_reached() + 1);
        for (m, level) in levels.iter().enumerate() {
            prop_assert!(!level.is_empty());
            for &n in level {
                prop_assert!((n + m as i64).rem_euclid(2) == 0 && n.unsigned_abs() as usize <= m);
            }
        }
    }

    #[test]
    fn parity_alternates(n in -1000i64..1000, m in 0u32..1000) {
        prop_assume!((n + i64::from(m)).rem_euclid(2) == 0);
        prop_assert_eq!(vertex_half(n + 1, m + 1), vertex_half(n, m));
        prop_assert_ne!(vertex_half(n - 1, m + 1), vertex_half(n, m));
        prop_assert_eq!(vertex_half(n, m + 4), vertex_half(n, m));
    }

    #[test]
    fn wilson_brackets_the_estimate(trials in 1u64..100_000, frac in 0.0f64..=1.0) {
        let k = (frac * trials as f64).floor() as u64;
        let (lo, hi) = wilson(k, trials);
        let est = k as f64 / trials as f64;
        prop_assert!((0.0..=est).contains(&lo) && (est..=1.0).contains(&hi));
    }

    #[test]
    fn tails_never_increase(values in prop::collection::vec(prop::option::of(0.0f64..50.0), 1..200)) {
        let grid: Vec<f64> = (0..60).map(f64::from).collect();
        let t = tail_from_values(&values, &grid).unwrap();
        prop_assert!(t.tail.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(t.tail.iter().zip(&t.lower).zip(&t.upper).all(|((v, l), u)| l <= v && v <= u));
    }
}
