use mag_core::config::{ExperimentConfig, Mode};
use mag_core::harness::{
    analyze_error, load_trained, oracle_check, run_experiment, verify_bound, MetricsRecord, Trained, METRICS_CSV_FILE,
    METRICS_FILE, MODELS_FILE, PREDICTOR_FILE,
};
use mag_core::local_models::LocalModelSet;
use mag_core::model_reward::ModelRewardPredictor;
use mag_core::rng::SeedKey;

fn quick(env: &str, episodes: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(env).unwrap();
    cfg.episodes = episodes;
    cfg.eval_every = 2;
    cfg.eval_episodes = 5;
    cfg
}

#[test]
fn one_iteration_populates_every_field() {
    let mut cfg = quick("coop_matrix_chain", 1);
    cfg.audit_every = 1;
    let out = run_experiment(&cfg, None).unwrap();
    assert_eq!(out.records.len(), 1);
    let r = &out.records[0];
    assert_eq!(r.iteration, 1);
    assert!(r.env_steps > 0);
    assert!(r.exact_return.is_some() && r.predictor_mse.is_some() && r.rollout_error.is_some());
    assert!(r.bound_gap.unwrap() <= r.bound_rhs.unwrap());
    assert_eq!(r.policy_version, 1);
    assert!(r.model_nll.is_finite() && r.eval_return.is_finite());
}

#[test]
fn records_are_persisted_and_steps_are_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick("figure1_toy", 7);
    let out = run_experiment(&cfg, Some(dir.path())).unwrap();
    // cadence 2 plus the final iteration
    let iters: Vec<usize> = out.records.iter().map(|r| r.iteration).collect();
    assert_eq!(iters, vec![2, 4, 6, 7]);
    for w in out.records.windows(2) {
        assert!(w[1].env_steps > w[0].env_steps);
        assert!(w[1].policy_version > w[0].policy_version);
    }
    // evaluation episodes are not counted: a fixed-horizon env gives horizon steps per iteration
    assert_eq!(out.records.last().unwrap().env_steps, 7 * out.env.horizon());

    let text = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    for (line, rec) in lines.iter().zip(&out.records) {
        assert_eq!(*line, rec.to_line());
        assert_eq!(MetricsRecord::parse_line(line)["iteration"], rec.iteration.to_string());
    }
    let csv = std::fs::read_to_string(dir.path().join(METRICS_CSV_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(csv.lines().next().unwrap(), MetricsRecord::csv_header());

    let saved = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(saved, cfg);
    let trained = load_trained(&cfg, dir.path()).unwrap();
    assert_eq!(trained.policy, out.policy);
    assert_eq!(trained.models, out.models);
}

#[test]
fn counting_evaluation_steps_is_opt_in() {
    let mut cfg = quick("figure1_toy", 2);
    cfg.count_eval_steps = true;
    let out = run_experiment(&cfg, None).unwrap();
    let h = out.env.horizon();
    assert_eq!(out.records[0].env_steps, 2 * h + cfg.eval_episodes * h);
}

#[test]
fn greedy_mode_trains_no_error_predictor() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick("figure1_toy", 2);
    cfg.mode = Mode::Greedy;
    let out = run_experiment(&cfg, Some(dir.path())).unwrap();
    assert!(out.predictor.is_none());
    assert!(out.records[0].predictor_mse.is_none());
    assert!(!dir.path().join(PREDICTOR_FILE).exists());
}

#[test]
fn perfect_model_gives_a_zero_difference_series() {
    let cfg = quick("coop_matrix_chain", 3);
    let out = run_experiment(&cfg, None).unwrap();
    let d = out.dynamics.clone().unwrap();
    let trained = Trained {
        models: LocalModelSet::from_dynamics(&d),
        predictor: Some(ModelRewardPredictor::new(d.spaces.clone(), cfg.reward.clone(), &SeedKey::new(1))),
        ..out.into_trained()
    };
    let table = analyze_error(&cfg, &trained, 200, &SeedKey::new(2)).unwrap();
    assert!(table.exact);
    assert_eq!(table.planned.len(), cfg.rollout.k);
    assert!(table.difference().iter().all(|&x| x == 0.0), "{:?}", table.difference());
}

#[test]
fn accumulated_error_series_are_non_decreasing() {
    let cfg = quick("figure1_toy", 4);
    let trained = run_experiment(&cfg, None).unwrap().into_trained();
    let table = analyze_error(&cfg, &trained, 200, &SeedKey::new(3)).unwrap();
    for s in [&table.planned, &table.greedy] {
        assert!(s.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn bound_holds_for_trained_components() {
    let cfg = quick("coop_matrix_chain", 3);
    let trained = run_experiment(&cfg, None).unwrap().into_trained();
    let report = verify_bound(&cfg, Some(&trained), &SeedKey::new(4)).unwrap();
    report.check().unwrap();
    let record = report.to_record();
    assert!(record.lines().any(|l| l.starts_with("rhs_stepwise ")));
    assert!(record.lines().all(|l| l.split_once(' ').is_some()));
}

#[test]
fn oracle_check_passes_on_presets_and_is_seed_stable() {
    let mut verdicts = Vec::new();
    for seed in 1..=5 {
        let mut cfg = ExperimentConfig::preset("coop_matrix_chain").unwrap();
        cfg.seed = seed;
        let report = oracle_check(&cfg, None);
        assert!(report.all_passed(), "{}", report.to_text());
        verdicts.push(report.checks.iter().map(|c| c.passed).collect::<Vec<_>>());
    }
    assert!(verdicts.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn corrupted_model_checkpoint_is_reported_with_its_module() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick("coop_matrix_chain", 1);
    run_experiment(&cfg, Some(dir.path())).unwrap();
    let path = dir.path().join(MODELS_FILE);
    let mut models: LocalModelSet = mag_core::checkpoint::load(&path).unwrap();
    if let mag_core::local_models::Predictor::Table { probs, .. } = &mut models.models[0].predictor {
        probs[0] += 0.5;
    } else {
        panic!("tabular preset expected");
    }
    mag_core::checkpoint::save(&models, &path).unwrap();
    let report = oracle_check(&cfg, Some(dir.path()));
    assert!(!report.all_passed());
    let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).collect();
    assert_eq!(failed.len(), 1);
    assert!(failed[0].detail.contains("local_models"), "{}", failed[0].detail);
}

#[test]
fn invalid_configs_exit_with_configuration_code() {
    let mut cfg = quick("figure1_toy", 1);
    cfg.rollout.h = cfg.rollout.k + 1;
    assert_eq!(run_experiment(&cfg, None).err().unwrap().exit_code(), 3);
    let cfg = ExperimentConfig { env: "missing".into(), ..ExperimentConfig::default() };
    assert_eq!(run_experiment(&cfg, None).err().unwrap().exit_code(), 3);
}
