use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdher::envs::{compute_reward, make_env, GoalObservation};
use tdher::harness::train::evaluate_policy;

/// Drives the point toward the goal at full speed, then lands on it exactly.
fn proportional(obs: &GoalObservation) -> Vec<f64> {
    obs.observation
        .iter()
        .zip(&obs.desired_goal)
        .map(|(x, g)| ((g - x) / 0.1).clamp(-1.0, 1.0))
        .collect()
}

#[test]
fn scripted_controller_solves_point_reach() {
    for n in [2, 3, 8] {
        let mut env = make_env("point_reach", Some(n)).unwrap();
        assert_eq!(evaluate_policy(env.as_mut(), 100, 0, proportional).unwrap(), 1.0);
    }
}

#[test]
fn random_policy_rarely_solves_push_box() {
    let mut env = make_env("push_box", None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let rate = evaluate_policy(env.as_mut(), 500, 1000, |_| {
        vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
    })
    .unwrap();
    assert!(rate < 0.05, "random success {rate}");
}

#[test]
fn single_episode_evaluation_is_binary() {
    let mut env = make_env("point_reach", Some(2)).unwrap();
    for seed in 0..20 {
        let good = evaluate_policy(env.as_mut(), 1, seed, proportional).unwrap();
        let idle = evaluate_policy(env.as_mut(), 1, seed, |_| vec![0.0, 0.0]).unwrap();
        assert_eq!(good, 1.0);
        assert_eq!(idle, 0.0);
    }
}

#[test]
fn initial_goal_lies_outside_tolerance() {
    for name in ["point_reach", "push_box", "bit_flip"] {
        let mut env = make_env(name, None).unwrap();
        let tol = env.spec().success_tol;
        let hits = (0..1000)
            .filter(|&s| {
                let o = env.reset(s);
                compute_reward(&o.achieved_goal, &o.desired_goal, tol).unwrap() == 0.0
            })
            .count();
        assert!(hits <= 10, "{name}: {hits} trivially solved resets");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trajectories_are_bounded_deterministic_and_reward_pure(
        seed in 0u64..100_000,
        env_idx in 0usize..3,
        actions in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 10), 1..70),
    ) {
        let name = ["point_reach", "push_box", "bit_flip"][env_idx];
        let mut a = make_env(name, None).unwrap();
        let mut b = make_env(name, None).unwrap();
        prop_assert_eq!(a.reset(seed), b.reset(seed));
        let spec = a.spec().clone();
        for act in actions.iter().take(spec.horizon) {
            let act = &act[..spec.action_dim];
            let sa = a.step(act).unwrap();
            let sb = b.step(act).unwrap();
            prop_assert_eq!(&sa, &sb);
            prop_assert!(sa.obs.observation.iter().all(|v| v.is_finite() && v.abs() <= 2.0));
            prop_assert_eq!(sa.reward, compute_reward(&sa.obs.achieved_goal, &sa.obs.desired_goal, spec.success_tol).unwrap());
            prop_assert_eq!(sa.is_success, sa.reward == 0.0);
        }
    }
}
