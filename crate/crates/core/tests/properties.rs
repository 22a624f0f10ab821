use proptest::prelude::*;

use robustpo::mdp::{self, MdpParts, PolicyMatrix, TabularIsaMdp};

fn normalise(raw: Vec<f64>) -> Vec<f64> {
    let t: f64 = raw.iter().sum();
    raw.iter().map(|x| x / t).collect()
}

prop_compose! {
    fn arb_mdp()(n in 2usize..5, a in 2usize..4)(
        reward in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, a), n),
        transition in prop::collection::vec(prop::collection::vec(prop::collection::vec(0.01f64..1.0, n), a), n),
        mu0 in prop::collection::vec(0.01f64..1.0, n),
        extra in prop::collection::vec(prop::collection::vec(0..n, 0..3), n),
        pi in prop::collection::vec(prop::collection::vec(0.01f64..1.0, a), n),
        gamma in 0.3f64..0.95,
    ) -> (TabularIsaMdp, PolicyMatrix) {
        let perturb_sets = extra
            .into_iter()
            .enumerate()
            .map(|(s, e)| {
                let mut set = vec![s];
                for t in e {
                    if !set.contains(&t) {
                        set.push(t);
                    }
                }
                set
            })
            .collect();
        let m = TabularIsaMdp::new(MdpParts {
            reward,
            transition: transition.into_iter().map(|s| s.into_iter().map(normalise).collect()).collect(),
            gamma,
            mu0: normalise(mu0),
            perturb_sets,
            embeddings: None,
        })
        .unwrap();
        (m, PolicyMatrix::from_rows(pi.into_iter().map(normalise).collect()).unwrap())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn strongest_adversary_is_pointwise_worst((m, pi) in arb_mdp()) {
        let natural = mdp::solve_value(&m, &pi).unwrap().v;
        let (_, strongest) = mdp::strongest_adversary_exact(&m, &pi).unwrap();
        let (_, brute) = mdp::brute_force_strongest(&m, &pi).unwrap();
        for s in 0..m.n_states() {
            prop_assert!(strongest.v[s] <= natural[s] + 1e-9);
            prop_assert!((strongest.v[s] - brute.v[s]).abs() <= 1e-9);
        }
    }

    #[test]
    fn values_respect_reward_bounds((m, pi) in arb_mdp()) {
        let v = mdp::solve_value(&m, &pi).unwrap().v;
        let rmax = m.reward_rows().iter().flatten().fold(0.0f64, |acc, r| acc.max(r.abs()));
        let bound = rmax / (1.0 - m.gamma());
        prop_assert!(v.iter().all(|x| x.abs() <= bound + 1e-9));
    }
}
