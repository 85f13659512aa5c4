use mag_core::envs::{parse_env_file, preset, write_env_file, PRESET_NAMES};
use mag_core::policy::{evaluate_return, JointPolicy};
use mag_core::rng::SeedKey;
use mag_core::stats::chi_square_gof;
use mag_core::theory::{exact_return, random_policy};
use mag_core::types::SpaceSpec;

#[test]
fn sampled_successors_match_transition_rows() {
    let env = preset("coop_matrix_chain").unwrap();
    let sp = env.spaces().clone();
    for (state, ja) in [(0, 0), (1, sp.n_joint_actions() - 1), (env.n_states() - 1, 1)] {
        let row = env.transition_row(state, ja).to_vec();
        let act = sp.decode_action(ja);
        let mut counts = vec![0u64; env.n_states()];
        let mut rng = SeedKey::new(5).indexed("state", state).rng();
        for _ in 0..4000 {
            let mut ep = mag_core::envs::EpisodeState { state, t: 0, done: false };
            env.step_with(&mut ep, &act, &mut rng).unwrap();
            counts[ep.state] += 1;
        }
        let test = chi_square_gof(&counts, &row);
        assert!(test.p_value > 1e-3, "state {state} action {ja}: {test:?}");
    }
}

#[test]
fn monte_carlo_return_agrees_with_exact_evaluation() {
    for name in PRESET_NAMES {
        let env = preset(name).unwrap();
        let d = env.derive_joint_obs_dynamics().unwrap();
        let policy = random_policy(env.spaces(), &mut SeedKey::new(9).child(name).rng());
        let exact = exact_return(&d, &policy, 1.0, env.horizon()).value;
        let mc = evaluate_return(&env, &policy, 4000, &SeedKey::new(10).child(name)).unwrap();
        assert!((mc.mean - exact).abs() < 4.0 * mc.se + 1e-9, "{name}: mc {} ± {} vs exact {exact}", mc.mean, mc.se);
    }
}

#[test]
fn derived_rows_are_distributions_and_lumping_is_exact() {
    for name in PRESET_NAMES {
        let env = preset(name).unwrap();
        let d = env.derive_joint_obs_dynamics().unwrap();
        for row in &d.transition {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // every state's successor-observation distribution equals its group's row
        let sp = env.spaces();
        for s in 0..env.n_states() {
            if env.is_terminal_state(s) {
                continue;
            }
            let o = sp.encode_obs(&env.observe(s));
            for a in 0..sp.n_joint_actions() {
                let mut by_obs = vec![0.0; sp.n_joint_obs()];
                for (s2, p) in env.transition_row(s, a).iter().enumerate() {
                    by_obs[sp.encode_obs(&env.observe(s2))] += p;
                }
                for (x, y) in by_obs.iter().zip(d.row(o, a)) {
                    assert!((x - y).abs() < 1e-12, "{name} state {s} action {a}");
                }
                assert_eq!(env.reward(s, a), d.reward_at(o, a));
            }
        }
    }
}

#[test]
fn env_files_round_trip() {
    for name in PRESET_NAMES {
        let env = preset(name).unwrap();
        let text = write_env_file(&env);
        let back = parse_env_file(&text).unwrap();
        assert_eq!(back, env, "{name}");
        assert_eq!(write_env_file(&back), text);
    }
}

#[test]
fn malformed_env_files_are_rejected() {
    let env = preset("figure1_toy").unwrap();
    let text = write_env_file(&env);
    assert!(parse_env_file(&text.replacen("horizon", "horizn", 1)).is_err());
    assert!(parse_env_file("").is_err());
}

#[test]
fn deterministic_policy_return_by_hand() {
    // figure1_toy with a fixed policy: compare to a hand-rolled forward pass
    // over the state process.
    let env = preset("figure1_toy").unwrap();
    let sp: SpaceSpec = env.spaces().clone();
    let tables: Vec<Vec<Vec<f64>>> = sp
        .obs_sizes
        .iter()
        .map(|&n| (0..n).map(|o| (0..sp.n_actions).map(|a| if a == o % sp.n_actions { 1.0 } else { 0.0 }).collect()).collect())
        .collect();
    let policy = JointPolicy::from_tables(sp.clone(), &tables).unwrap();
    let mut dist = env.init_dist().to_vec();
    let mut total = 0.0;
    for _ in 0..env.horizon() {
        let mut next = vec![0.0; env.n_states()];
        for (s, &p) in dist.iter().enumerate() {
            if p == 0.0 || env.is_terminal_state(s) {
                continue;
            }
            let probs = policy.joint_action_dist(&env.observe(s));
            for (ja, &q) in probs.iter().enumerate() {
                total += p * q * env.reward(s, ja);
                for (s2, &r) in env.transition_row(s, ja).iter().enumerate() {
                    next[s2] += p * q * r;
                }
            }
        }
        dist = next;
    }
    let d = env.derive_joint_obs_dynamics().unwrap();
    let exact = exact_return(&d, &policy, 1.0, env.horizon()).value;
    assert!((exact - total).abs() < 1e-6, "{exact} vs {total}");
}
