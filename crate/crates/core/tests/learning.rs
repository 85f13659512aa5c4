use mag_core::dataset::Dataset;
use mag_core::envs::preset;
use mag_core::local_models::{LocalModelSet, ModelBackend, ModelHyper};
use mag_core::model_reward::{expected_label_error, label_error, ErrorQuery, ModelRewardPredictor, RewardHyper};
use mag_core::policy::{collect_episode, ppo_update, CentralizedCritic, JointPolicy, PolicyHyper};
use mag_core::rng::SeedKey;
use mag_core::theory::{random_policy, tv};
use mag_core::types::{EnvTransition, JointAction, JointObservation, SpaceSpec};

fn env_data(name: &str, episodes: usize, seed: u64) -> Dataset {
    let env = preset(name).unwrap();
    let pol = random_policy(env.spaces(), &mut SeedKey::new(seed).child("behaviour").rng());
    let mut d = Dataset::new(env.spaces().clone(), 1_000_000).unwrap();
    for e in 0..episodes {
        d.extend(collect_episode(&env, &pol, &SeedKey::new(seed).indexed("ep", e)).unwrap()).unwrap();
    }
    d
}

#[test]
fn tabular_models_recover_true_marginals_on_visited_cells() {
    let env = preset("coop_matrix_chain").unwrap();
    let dyn_ = env.derive_joint_obs_dynamics().unwrap();
    let d = env_data("coop_matrix_chain", 3000, 1);
    let mut ms = LocalModelSet::new(d.spaces().clone(), ModelHyper::default(), &SeedKey::new(0));
    ms.train_one_step(&d, 1, &SeedKey::new(0)).unwrap();
    let sp = d.spaces().clone();
    let mut visits = vec![0usize; sp.n_cells()];
    for t in d.iter() {
        visits[sp.cell(sp.encode_obs(&t.obs), sp.encode_action(&t.act))] += 1;
    }
    let mut checked = 0;
    for o in 0..sp.n_joint_obs() {
        for a in 0..sp.n_joint_actions() {
            if visits[sp.cell(o, a)] < 2000 {
                continue;
            }
            checked += 1;
            for i in 0..sp.n_agents() {
                let gap = tv(&ms.agent_dist(i, o, a), &dyn_.agent_marginal(o, a, i));
                assert!(gap < 0.05, "cell ({o},{a}) agent {i}: tv {gap}");
            }
            assert!((ms.predict_joint_idx(o, a).mean_reward() - dyn_.reward_at(o, a)).abs() < 1e-9);
        }
    }
    assert!(checked > 0);
}

#[test]
fn mlp_models_reduce_nll_towards_the_tabular_fit() {
    let d = env_data("figure1_toy", 200, 2);
    let mut tab = LocalModelSet::new(d.spaces().clone(), ModelHyper::default(), &SeedKey::new(0));
    tab.train_one_step(&d, 1, &SeedKey::new(0)).unwrap();
    let hyper = ModelHyper { backend: ModelBackend::Mlp, lr: 5e-3, ..ModelHyper::default() };
    let mut mlp = LocalModelSet::new(d.spaces().clone(), hyper, &SeedKey::new(3));
    let start = mlp.nll(&d);
    let mut last = start;
    for step in 0..30 {
        last = mlp.train_one_step(&d, 2, &SeedKey::new(4).indexed("step", step)).unwrap().nll;
    }
    assert!(last < start * 0.7, "{start} -> {last}");
    assert!(last < tab.nll(&d) + 0.1, "mlp {last} vs tabular {}", tab.nll(&d));
    mlp.validate().unwrap();
}

#[test]
fn label_errors_average_to_their_expectation() {
    let d = env_data("figure1_toy", 5, 3);
    let mut ms = LocalModelSet::new(d.spaces().clone(), ModelHyper::default(), &SeedKey::new(0));
    ms.train_one_step(&d, 1, &SeedKey::new(0)).unwrap();
    let t = d.get(3).unwrap();
    let n = 20_000;
    let mean = label_error(t, &ms, n, &SeedKey::new(5));
    let exact = expected_label_error(t, &ms);
    // per-draw miss count has variance at most N/4
    let se = (ms.n_agents() as f64 / 4.0 / n as f64).sqrt();
    assert!((mean - exact).abs() < 5.0 * se, "{mean} vs {exact}");
}

#[test]
fn perfect_deterministic_model_has_zero_label_error() {
    let sp = SpaceSpec::new(vec![2, 2], 2);
    let probs: Vec<Vec<Vec<f64>>> =
        (0..2).map(|_| (0..sp.n_cells()).map(|c| if c % 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect()).collect();
    let rewards = vec![vec![0.5; sp.n_cells()]; 2];
    let ms = LocalModelSet::from_tables(sp.clone(), probs, rewards).unwrap();
    let o = JointObservation(vec![1, 0]);
    let a = JointAction(vec![0, 0]);
    let c = sp.cell(sp.encode_obs(&o), sp.encode_action(&a));
    let next = if c % 2 == 0 { JointObservation(vec![0, 0]) } else { JointObservation(vec![1, 1]) };
    let t = EnvTransition { obs: o, act: a, reward: 0.5, next_obs: next, terminal: false };
    assert_eq!(label_error(&t, &ms, 8, &SeedKey::new(1)), 0.0);
    assert_eq!(expected_label_error(&t, &ms), 0.0);
}

#[test]
fn error_predictor_separates_two_clusters() {
    let sp = SpaceSpec::new(vec![3, 3], 2);
    let mut queries = Vec::new();
    let mut labels = Vec::new();
    for j in 0..800 {
        let cluster = j % 2;
        let q = ErrorQuery {
            obs: JointObservation(vec![cluster, (j / 2) % 3]),
            act: JointAction(vec![(j / 6) % 2, (j / 12) % 2]),
            reward: 0.1 * ((j % 5) as f64),
            next_obs: JointObservation(vec![(j / 3) % 3, cluster]),
        };
        queries.push(q);
        labels.push(if cluster == 0 { 0.2 } else { 1.5 });
    }
    let hyper = RewardHyper { hidden: vec![32, 32], samples_per_epoch: 800, ..RewardHyper::default() };
    let mut rp = ModelRewardPredictor::new(sp, hyper, &SeedKey::new(6));
    let stats = rp.train_on_labels(&queries, &labels, 40, &SeedKey::new(7)).unwrap();
    let mse = stats.held_out_mse.unwrap();
    assert!(mse < 0.05, "held-out mse {mse}");
    let first = stats.train_losses[0];
    let last = *stats.train_losses.last().unwrap();
    assert!(last < first, "losses {first} -> {last}");
    let early: f64 = stats.train_losses[..5].iter().sum::<f64>() / 5.0;
    let late: f64 = stats.train_losses[35..].iter().sum::<f64>() / 5.0;
    assert!(late < early);
}

/// Two agents, one observation each, reward 1 only when both pick action 1.
fn coordination_batch(policy: &JointPolicy, n: usize, seed: &SeedKey) -> Dataset {
    let o = JointObservation(vec![0, 0]);
    let mut d = Dataset::new(policy.spaces.clone(), n).unwrap();
    for j in 0..n {
        let a = policy.act(&o, &seed.indexed("draw", j));
        let reward = if a.0 == [1, 1] { 1.0 } else { 0.0 };
        d.append(EnvTransition { obs: o.clone(), act: a, reward, next_obs: o.clone(), terminal: true }).unwrap();
    }
    d
}

#[test]
fn policy_updates_climb_towards_the_coordinated_action() {
    let sp = SpaceSpec::new(vec![1, 1], 3);
    let hyper = PolicyHyper { actor_lr: 0.05, critic_lr: 0.05, ..PolicyHyper::default() };
    let mut policy = JointPolicy::new(sp.clone(), &hyper, &SeedKey::new(1));
    let mut critic = CentralizedCritic::new(sp.clone(), &hyper, &SeedKey::new(2));
    let o = JointObservation(vec![0, 0]);
    let target = sp.encode_action(&JointAction(vec![1, 1]));
    let mut probs = vec![policy.joint_action_dist(&o)[target]];
    for it in 0..25 {
        let d = coordination_batch(&policy, 256, &SeedKey::new(3).indexed("batch", it));
        let (p, c, _) = ppo_update(&policy, &critic, &d, 4, &hyper, 0.99, None, &SeedKey::new(4).indexed("ppo", it)).unwrap();
        assert_eq!(p.version, policy.version + 1);
        policy = p;
        critic = c;
        probs.push(policy.joint_action_dist(&o)[target]);
    }
    let last = *probs.last().unwrap();
    assert!(last > 0.8, "final probability {last}; trajectory {probs:?}");
    // improvement between consecutive windows of five updates
    let windows: Vec<f64> = probs.chunks(5).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    for w in windows.windows(2) {
        assert!(w[1] >= w[0] - 1e-3, "{windows:?}");
    }
}
