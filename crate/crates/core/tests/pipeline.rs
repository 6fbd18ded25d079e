use igft_core::dialogue::{
    extract_turn_samples, read_trajectory_log, write_trajectory_log, EpisodeConfig, OraclePolicy, SimulatorConfig,
    SimulatorFactory,
};
use igft_core::embedding::LexicalEmbedder;
use igft_core::eval::{evaluate_trajectory, RuleExtractor, TemplateHpiGenerator};
use igft_core::grpo::{train, GrpoConfig, NoopObserver, SelfPlay, TrainObserver, TrainState};
use igft_core::policy::{Checkpoint, SoftmaxPolicy};
use igft_core::reward::{RewardConfig, RewardModel};
use igft_core::vignette::{generate_synthetic_cases, load_cases, save_cases, CategoryRegistry, VignetteCase};

fn cases(n: usize, seed: u64) -> Vec<VignetteCase> {
    generate_synthetic_cases(n, seed, &CategoryRegistry::default(), (10, 15)).unwrap()
}

fn factory() -> SimulatorFactory {
    SimulatorFactory { config: SimulatorConfig::default() }
}

#[test]
fn generated_cases_round_trip_through_case_file() {
    let registry = CategoryRegistry::default();
    let original = cases(350, 11);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cases.jsonl");
    save_cases(&path, &original).unwrap();
    let loaded = load_cases(&path, &registry).unwrap();
    assert_eq!(loaded.len(), 350);
    assert_eq!(loaded, original);
    assert!(loaded.iter().all(|c| (10..=15).contains(&c.entities.len())));
}

#[test]
fn oracle_closed_loop_recalls_every_entity() {
    let cases = cases(100, 5);
    let model = RewardModel::heuristic(RewardConfig::default()).unwrap();
    let patients = factory();
    let play = SelfPlay { cases: &cases, model: &model, patients: &patients, episode: EpisodeConfig::default() };
    let provider = LexicalEmbedder::default();
    for (i, case) in cases.iter().enumerate() {
        let traj = play.play(&OraclePolicy::default(), case, 0, &[i as u64]).unwrap();
        assert_eq!(traj.revealed_count(), case.entities.len(), "case {}", case.case_id);
        let ev = evaluate_trajectory(&traj, case, &TemplateHpiGenerator, &RuleExtractor, &provider, 0.85).unwrap();
        assert_eq!(ev.result.recall, 1.0, "case {}", case.case_id);
        assert_eq!(ev.generated.len(), case.entities.len() + 1);
    }
}

#[test]
fn trajectory_log_round_trips_and_samples_match_turns() {
    let cases = cases(3, 2);
    let model = RewardModel::heuristic(RewardConfig::default()).unwrap();
    let patients = factory();
    let play = SelfPlay { cases: &cases, model: &model, patients: &patients, episode: EpisodeConfig::default() };
    let policy = SoftmaxPolicy::uniform(CategoryRegistry::default());
    let trajs = play.rollout(&policy, 9).unwrap();
    let mut buf = Vec::new();
    write_trajectory_log(&mut buf, &trajs).unwrap();
    let records = read_trajectory_log(buf.as_slice()).unwrap();
    let turns: usize = trajs.iter().map(|t| t.turns.len()).sum();
    assert_eq!(records.len(), turns);
    for t in &trajs {
        assert_eq!(extract_turn_samples(t).len(), t.turns.len());
    }
    assert_eq!(play.rollout(&policy, 9).unwrap(), trajs);
}

fn small_config(epochs: usize) -> GrpoConfig {
    GrpoConfig { epochs, steps_per_epoch: 3, learning_rate: 0.05, ..GrpoConfig::default() }
}

#[test]
fn training_is_deterministic_and_resumable() {
    let cases = cases(6, 1);
    let model = RewardModel::heuristic(RewardConfig::default()).unwrap();
    let patients = factory();
    let play = SelfPlay { cases: &cases, model: &model, patients: &patients, episode: EpisodeConfig::default() };
    let fresh = || TrainState::fresh(SoftmaxPolicy::uniform(CategoryRegistry::default()));

    let straight = train(&play, fresh(), &small_config(4), &mut NoopObserver).unwrap();
    let again = train(&play, fresh(), &small_config(4), &mut NoopObserver).unwrap();
    assert_eq!(straight.history, again.history);
    assert_eq!(straight.history.len(), 12);

    let half = train(&play, fresh(), &small_config(2), &mut NoopObserver).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let s = &half.state;
    Checkpoint::new(&s.policy, Some(s.optimizer.clone()), s.epochs_completed).save(&path).unwrap();

    let template = SoftmaxPolicy::uniform(CategoryRegistry::default());
    let (policy, ckpt) = Checkpoint::load(&path, &template).unwrap();
    let resumed_state =
        TrainState { policy, optimizer: ckpt.optimizer.unwrap(), epochs_completed: ckpt.epochs_completed };
    let resumed = train(&play, resumed_state, &small_config(4), &mut NoopObserver).unwrap();

    let mut joined = half.history.clone();
    joined.extend(resumed.history);
    assert_eq!(joined, straight.history);
    assert_eq!(resumed.state.policy.params, straight.state.policy.params);
}

#[test]
fn zero_epochs_leave_parameters_untouched() {
    let cases = cases(2, 1);
    let model = RewardModel::heuristic(RewardConfig::default()).unwrap();
    let patients = factory();
    let play = SelfPlay { cases: &cases, model: &model, patients: &patients, episode: EpisodeConfig::default() };
    let init = TrainState::fresh(SoftmaxPolicy::uniform(CategoryRegistry::default()));
    let out = train(&play, init.clone(), &small_config(0), &mut NoopObserver).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.state.policy.params, init.policy.params);
}

struct FailAfter(usize, Option<usize>);

impl TrainObserver for FailAfter {
    fn on_epoch_end(&mut self, state: &TrainState) -> Result<(), String> {
        if state.epochs_completed >= self.0 {
            Err("disk full".into())
        } else {
            Ok(())
        }
    }

    fn on_abort(&mut self, state: &TrainState, _: &igft_core::grpo::GrpoError) {
        self.1 = Some(state.epochs_completed);
    }
}

#[test]
fn observer_failure_aborts_with_last_state() {
    let cases = cases(2, 1);
    let model = RewardModel::heuristic(RewardConfig::default()).unwrap();
    let patients = factory();
    let play = SelfPlay { cases: &cases, model: &model, patients: &patients, episode: EpisodeConfig::default() };
    let mut obs = FailAfter(1, None);
    let init = TrainState::fresh(SoftmaxPolicy::uniform(CategoryRegistry::default()));
    assert!(train(&play, init, &small_config(3), &mut obs).is_err());
    assert_eq!(obs.1, Some(1));
}
