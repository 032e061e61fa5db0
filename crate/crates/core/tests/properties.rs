use hsic_tune::analysis::{make_goal_flags, GoalSet};
use hsic_tune::hsic::{hsic_goal_value, HsicOptions};
use hsic_tune::rng;
use hsic_tune::space::{Configuration, ParameterSpec, SearchSpace};
use hsic_tune::trial::Trial;
use proptest::prelude::*;

fn trials_from(scores: &[f64]) -> Vec<Trial> {
    scores.iter().enumerate().map(|(i, s)| Trial::ok(i as u64, Configuration::new(), *s, 0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_is_nonnegative_and_order_free(
        data in prop::collection::vec((0.0f64..1.0, any::<bool>()), 12..120),
        rot in 0usize..1000,
    ) {
        let u: Vec<f64> = data.iter().map(|d| d.0).collect();
        let mut z: Vec<bool> = data.iter().map(|d| d.1).collect();
        z[0] = true;
        z[1] = true;
        let opts = HsicOptions::default();
        let s = hsic_goal_value(&u, &z, None, &opts).unwrap();
        prop_assert!(s.value >= 0.0);
        let k = rot % u.len();
        let (mut ur, mut zr) = (u.clone(), z.clone());
        ur.rotate_left(k);
        zr.rotate_left(k);
        let r = hsic_goal_value(&ur, &zr, None, &opts).unwrap();
        prop_assert!((r.value - s.value).abs() <= 1e-12);
    }

    #[test]
    fn best_percentile_flags_at_most_the_requested_share(
        scores in prop::collection::vec(prop_oneof![0.0f64..1.0, Just(0.5)], 10..300),
        p in 0.01f64..0.9,
    ) {
        let t = trials_from(&scores);
        match make_goal_flags(&t, &GoalSet::BestPercentile { p }) {
            Ok(z) => {
                let m = z.iter().filter(|b| **b).count();
                prop_assert!(m >= 1);
                prop_assert!(m as f64 <= (p * scores.len() as f64).ceil());
                let worst_in = scores.iter().zip(&z).filter(|(_, f)| **f).map(|(s, _)| *s).fold(f64::MIN, f64::max);
                let best_out = scores.iter().zip(&z).filter(|(_, f)| !**f).map(|(s, _)| *s).fold(f64::MAX, f64::min);
                prop_assert!(worst_in < best_out);
            }
            Err(e) => {
                let expected = matches!(e, hsic_tune::Error::GoalTooSmall { .. } | hsic_tune::Error::InvalidArgument(_));
                prop_assert!(expected, "unexpected error {}", e);
            }
        }
    }

    #[test]
    fn sampled_values_stay_in_the_space(seed in any::<u64>()) {
        let space = SearchSpace::new(
            vec![
                ParameterSpec::continuous("a", -1.0, 3.0),
                ParameterSpec::log_continuous("b", 1e-4, 1.0),
                ParameterSpec::integer("c", 2, 9),
                ParameterSpec::categorical("d", &["x", "y", "z"]),
                ParameterSpec::boolean("e"),
            ],
            vec![],
        ).unwrap();
        let c = space.sample(&mut rng::stream(seed));
        prop_assert_eq!(space.validate(&c).unwrap(), c.clone());
        for p in space.params() {
            let u = p.midpoint_rank(c.get(&p.name).unwrap()).unwrap();
            prop_assert!((0.0..=1.0).contains(&u));
            prop_assert!(p.contains(&p.from_rank(u)));
        }
    }

    #[test]
    fn derived_seeds_do_not_collide_for_neighbours(seed in any::<u64>(), i in 0u64..1_000_000) {
        prop_assert_ne!(rng::trial_seed(seed, i), rng::trial_seed(seed, i + 1));
        prop_assert_ne!(rng::derive_named(seed, "a", &[i]), rng::derive_named(seed, "b", &[i]));
    }
}
