use mag_core::envs::JointObsDynamics;
use mag_core::local_models::LocalModelSet;
use mag_core::rng::SeedKey;
use mag_core::theory::{
    bound_report, default_truncation, epsilon_pi, exact_return, kl, pinsker_check, random_distribution, random_model_near,
    random_policy, perturb_policy, rhs_stepwise, rhs_scaled, tv, BoundInputs, DistributionTable,
};
use mag_core::types::SpaceSpec;
use proptest::prelude::*;
use rand::Rng;

fn dynamics(seed: u64, obs: Vec<usize>, actions: usize, gamma: f64) -> JointObsDynamics {
    let mut rng = SeedKey::new(seed).child("dyn").rng();
    let sp = SpaceSpec::new(obs, actions);
    let n = sp.n_joint_obs();
    let rows = (0..sp.n_cells()).map(|_| random_distribution(n, 1.5, &mut rng)).collect();
    let reward = (0..sp.n_cells()).map(|_| rng.gen_range(-2.0..2.0)).collect();
    JointObsDynamics::from_tables(sp, rows, reward, random_distribution(n, 1.0, &mut rng), gamma).unwrap()
}

#[test]
fn single_state_return_is_a_geometric_series() {
    let sp = SpaceSpec::new(vec![1], 2);
    let d = JointObsDynamics::from_tables(sp.clone(), vec![vec![1.0], vec![1.0]], vec![1.0, 3.0], vec![1.0], 0.8).unwrap();
    let pol = mag_core::policy::JointPolicy::from_tables(sp, &[vec![vec![0.25, 0.75]]]).unwrap();
    let t = default_truncation(0.8, d.r_max(), 1e-10);
    let r = exact_return(&d, &pol, 0.8, t);
    // the policy's own probabilities carry the action floor
    let pi = pol.joint_action_dist(&mag_core::types::JointObservation(vec![0]));
    assert!((pi[0] - 0.25).abs() < 1e-7);
    let expected = (pi[0] * 1.0 + pi[1] * 3.0) / (1.0 - 0.8);
    assert!((r.value - expected).abs() <= r.tail_bound + 1e-9, "{} vs {expected}", r.value);
}

#[test]
fn epsilon_pi_is_the_largest_joint_action_tv() {
    let d = dynamics(1, vec![2, 3], 2, 0.9);
    let mut rng = SeedKey::new(2).rng();
    let a = random_policy(&d.spaces, &mut rng);
    let b = random_policy(&d.spaces, &mut rng);
    let mut worst: f64 = 0.0;
    for o in 0..d.spaces.n_joint_obs() {
        let obs = d.spaces.decode_obs(o);
        let (p, q) = (a.joint_action_dist(&obs), b.joint_action_dist(&obs));
        worst = worst.max(0.5 * p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum::<f64>());
    }
    assert!((epsilon_pi(&a, &b) - worst).abs() < 1e-12);
    assert_eq!(epsilon_pi(&a, &a), 0.0);
}

#[test]
fn perfect_model_leaves_only_the_policy_term() {
    let d = dynamics(3, vec![2, 2], 2, 0.9);
    // product rows so the factored model can be exact
    let sp = d.spaces.clone();
    let nja = sp.n_joint_actions();
    let rows: Vec<Vec<f64>> = (0..sp.n_cells())
        .map(|c| {
            let m0 = d.agent_marginal(c / nja, c % nja, 0);
            let m1 = d.agent_marginal(c / nja, c % nja, 1);
            (0..sp.n_joint_obs()).map(|o2| {
                let ids = sp.decode_obs(o2);
                m0[ids.agent(0)] * m1[ids.agent(1)]
            }).collect()
        })
        .collect();
    let d = JointObsDynamics::from_tables(sp.clone(), rows, d.reward.clone(), d.init.clone(), 0.9).unwrap();
    let ms = LocalModelSet::from_dynamics(&d);
    let mut rng = SeedKey::new(4).rng();
    let policy = random_policy(&sp, &mut rng);
    let pi_d = perturb_policy(&policy, 0.4, &mut rng);
    let t = default_truncation(0.9, d.r_max(), 1e-8);
    let r = bound_report(&BoundInputs { dyn_: &d, ms: &ms, policy: &policy, pi_d: &pi_d, init: None, gamma: 0.9, horizon: t }).unwrap();
    assert!(r.eps_m.iter().all(|&e| e == 0.0));
    assert!(r.gap < 1e-9);
    let policy_term = d.r_max() / (0.1f64 * 0.1) * 2.0 * r.eps_pi;
    assert!((r.rhs_stepwise - policy_term).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bound_and_tightness_hold(seed in 0u64..10_000, noise in 0.0f64..0.8, shift in 0.0f64..0.8, gamma in 0.5f64..0.95) {
        let d = dynamics(seed, vec![2, 2], 2, gamma);
        let mut rng = SeedKey::new(seed).child("inst").rng();
        let ms = random_model_near(&d, noise, &mut rng);
        let policy = random_policy(&d.spaces, &mut rng);
        let pi_d = perturb_policy(&policy, shift, &mut rng);
        let t = default_truncation(gamma, d.r_max(), 1e-8);
        let r = bound_report(&BoundInputs { dyn_: &d, ms: &ms, policy: &policy, pi_d: &pi_d, init: None, gamma, horizon: t }).unwrap();
        prop_assert!(r.check().is_ok(), "{:?}", r.check());
        prop_assert!(r.gap <= r.rhs_stepwise + 2.0 * r.tail_bound + 1e-9);
        prop_assert!(r.rhs_stepwise <= r.rhs_scaled + 1e-9);
        prop_assert!((r.rhs_stepwise - rhs_stepwise(r.r_max, gamma, r.eps_pi, &r.eps_m)).abs() < 1e-12);
        prop_assert!((r.rhs_scaled - rhs_scaled(r.r_max, gamma, r.eps_pi, r.delta)).abs() < 1e-12);
    }

    #[test]
    fn pinsker_and_kl_properties(n in 2usize..8, seed in 0u64..10_000, sharp in 0.3f64..4.0) {
        let mut rng = SeedKey::new(seed).rng();
        let p = random_distribution(n, sharp, &mut rng);
        let q = random_distribution(n, sharp, &mut rng);
        prop_assert!(kl(&p, &q) >= -1e-15);
        prop_assert!(kl(&p, &p).abs() < 1e-15);
        prop_assert!(tv(&p, &q) <= (kl(&p, &q) / 2.0).sqrt() + 1e-12);
        let c = pinsker_check(&DistributionTable::new(p).unwrap(), &DistributionTable::new(q).unwrap());
        prop_assert!(c.holds(1e-12));
    }
}
