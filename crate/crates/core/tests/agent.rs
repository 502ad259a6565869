use latent_mpc::agent::{
    collect_seed_episodes, outer_loop, run_control_episode, AgentConfig, Dataset, DatasetWriter,
    EpisodeMode, LoopConfig, Policy,
};
use latent_mpc::ensemble::{Ensemble, TrainConfig};
use latent_mpc::envs::{EnvSpec, EnvState, Environment, Pendulum, PointMass, Step};
use latent_mpc::planner::PlanConfig;
use latent_mpc::rssm::RssmConfig;
use latent_mpc::{Error, Execution, Result};

fn small_rssm(env: &dyn Environment) -> RssmConfig {
    let spec = env.spec();
    let mut c = RssmConfig::new(spec.obs_dim, spec.action_dim);
    c.h_dim = 8;
    c.s_dim = 2;
    c.hidden_dim = 8;
    c
}

fn small_plan() -> PlanConfig {
    PlanConfig {
        candidates: 10,
        iterations: 2,
        horizon: 4,
        components: 2,
        ..PlanConfig::default()
    }
}

#[test]
fn seed_episodes_have_the_expected_size() {
    let env = Pendulum::default();
    assert!(collect_seed_episodes(&env, 0, 1).unwrap().is_empty());
    let data = collect_seed_episodes(&env, 5, 1).unwrap();
    assert_eq!(data.transitions(), 500);
    assert!(data.episodes.iter().all(|e| e.policy == Policy::Random && e.len() == 100));
}

#[test]
fn random_actions_pass_a_uniformity_test() {
    let env = PointMass::default();
    let data = collect_seed_episodes(&env, 50, 3).unwrap();
    let mut xs: Vec<f64> = data
        .episodes
        .iter()
        .flat_map(|e| e.actions.iter().flatten().copied())
        .collect();
    assert_eq!(xs.len(), 10_000);
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = (x + 1.0) / 2.0;
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max);
    // Kolmogorov-Smirnov critical value at the 1% level.
    assert!(d < 1.63 / n.sqrt(), "D = {d}");
}

/// Pendulum with a one-step horizon.
struct OneStep(Pendulum, EnvSpec);

impl Environment for OneStep {
    fn spec(&self) -> &EnvSpec {
        &self.1
    }
    fn reset(&self, seed: u64) -> (EnvState, Vec<f64>) {
        self.0.reset(seed)
    }
    fn step(&self, state: &EnvState, action: &[f64]) -> Result<Step> {
        self.0.step(state, action)
    }
    fn observe(&self, state: &EnvState) -> Vec<f64> {
        self.0.observe(state)
    }
}

#[test]
fn one_step_horizon_gives_one_transition() {
    let inner = Pendulum::default();
    let spec = EnvSpec {
        horizon: 1,
        ..inner.spec().clone()
    };
    let env = OneStep(inner, spec);
    let ensemble = Ensemble::new(&small_rssm(&env), 2, 0).unwrap();
    let out = run_control_episode(&env, &ensemble, &small_plan(), 0.3, EpisodeMode::Explore, 4, Execution::Sequential);
    assert!(!out.failed());
    assert_eq!(out.record.len(), 1);
    assert_eq!(out.plan_best.len(), 1);
}

#[test]
fn untrained_ensemble_completes_an_episode() {
    let env = PointMass::default();
    let ensemble = Ensemble::new(&small_rssm(&env), 3, 1).unwrap();
    let out = run_control_episode(&env, &ensemble, &small_plan(), 0.3, EpisodeMode::Explore, 2, Execution::Parallel);
    assert!(!out.failed());
    assert_eq!(out.record.len(), 100);
    assert!(out.reward.is_finite());
    assert!(out
        .record
        .actions
        .iter()
        .flatten()
        .all(|a| (-1.0..=1.0).contains(a)));
}

#[test]
fn evaluation_episodes_are_reproducible() {
    let env = Pendulum::default();
    let ensemble = Ensemble::new(&small_rssm(&env), 2, 5).unwrap();
    let run = |exec| run_control_episode(&env, &ensemble, &small_plan(), 0.0, EpisodeMode::Evaluate, 11, exec);
    let a = run(Execution::Sequential);
    let b = run(Execution::Parallel);
    assert_eq!(a.record, b.record);
    assert_eq!(a.reward, b.reward);
    assert_eq!(a.record.policy, Policy::Evaluate);
}

fn loop_config(env: &dyn Environment, iterations: usize) -> LoopConfig {
    LoopConfig {
        rssm: small_rssm(env),
        plan: small_plan(),
        train: TrainConfig {
            batch_size: 2,
            seq_len: 6,
            ..TrainConfig::default()
        },
        agent: AgentConfig {
            seed_episodes: 2,
            train_steps: 3,
            outer_iterations: iterations,
            ..AgentConfig::default()
        },
        ensemble_size: 2,
        seed: 8,
    }
}

#[test]
fn zero_iterations_only_record_seed_data() {
    let env = PointMass::default();
    let (history, _, data) =
        outer_loop::<Error>(&env, &loop_config(&env, 0), Execution::Sequential, |_, _, _| Ok(())).unwrap();
    assert_eq!(history.iterations.len(), 1);
    assert_eq!(history.iterations[0].iteration, 0);
    assert_eq!(history.iterations[0].transitions, 200);
    assert!(history.episode_rewards().is_empty());
    assert_eq!(data.episodes.len(), 2);
}

#[test]
fn dataset_grows_every_iteration_and_only_from_the_env() {
    let env = PointMass::default();
    let mut sizes = Vec::new();
    let (history, _, data) = outer_loop::<Error>(&env, &loop_config(&env, 3), Execution::Parallel, |row, _, d| {
        assert_eq!(row.transitions, d.transitions());
        sizes.push(d.transitions());
        Ok(())
    })
    .unwrap();
    assert_eq!(sizes, vec![200, 300, 400, 500]);
    assert_eq!(history.episode_rewards().len(), 3);
    // Replaying each stored episode through the env reproduces its rewards
    // and observations.
    for ep in &data.episodes {
        let (mut state, obs) = env.reset(ep.seed);
        assert_eq!(obs, ep.observations[0]);
        for t in 0..ep.len() {
            let step = env.step(&state, &ep.actions[t]).unwrap();
            assert_eq!(step.reward, ep.rewards[t]);
            if t + 1 < ep.len() {
                assert_eq!(step.observation, ep.observations[t + 1]);
            }
            state = step.state;
        }
    }
}

#[test]
fn callback_errors_stop_the_loop() {
    let env = PointMass::default();
    let err = outer_loop(&env, &loop_config(&env, 3), Execution::Sequential, |row, _, _| {
        if row.iteration == 1 {
            Err(Error::Config("stop".into()))
        } else {
            Ok(())
        }
    })
    .unwrap_err();
    assert!(matches!(err, Error::Config(msg) if msg == "stop"));
}

#[test]
fn dataset_file_appends_episodes() {
    let dir = std::env::temp_dir().join(format!("lmpd-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("data.lmpd");
    let env = Pendulum::default();
    let data = collect_seed_episodes(&env, 3, 2).unwrap();
    let mut w = DatasetWriter::create(&path, 2, 1).unwrap();
    w.write(&data.episodes[0]).unwrap();
    drop(w);
    let mut w = DatasetWriter::append(&path, 2, 1).unwrap();
    w.write(&data.episodes[1]).unwrap();
    w.write(&data.episodes[2]).unwrap();
    drop(w);
    assert_eq!(Dataset::load(&path).unwrap(), data);
    assert!(DatasetWriter::append(&path, 3, 1).is_err());
    std::fs::remove_dir_all(dir).unwrap();
}
