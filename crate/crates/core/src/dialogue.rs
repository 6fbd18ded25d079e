//! Simulated interviews: a rule-based patient, the question/answer loop,
//! trajectories and the per-turn training samples cut from them.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{
    detect_revealed, elicitation_relevance, CoverageError, CoverageState, MatchResult, Reveal,
    DEFAULT_SEMANTIC_THRESHOLD,
};
use crate::embedding::{EmbeddingProvider, ProviderError};
use crate::infogain::GainBreakdown;
use crate::quality::{AssessmentContext, QualityScores, RewardBreakdown};
use crate::reward::{RewardError, RewardModel, ScoredQuestion};
use crate::seed::{derive_rng, text_digest};
use crate::text;
use crate::vignette::{ClinicalEntity, Sex, VignetteCase};

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error("embedding provider failed: {0}")]
    Provider(#[from] ProviderError),
    #[error("patient failed: {0}")]
    Patient(String),
    #[error("interviewer failed: {0}")]
    Interviewer(String),
    #[error("interviewer produced an empty question")]
    EmptyQuestion,
    #[error("invalid episode configuration: {0}")]
    Config(String),
}

/// An aborted episode, carrying every turn completed before the failure.
#[derive(Debug, Error)]
#[error("episode for case {} aborted after {} turns: {source}", .partial.header.case_id, .partial.turns.len())]
pub struct EpisodeError {
    pub partial: Box<Trajectory>,
    pub source: DialogueError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseHeader {
    pub case_id: String,
    pub age: u32,
    pub sex: Sex,
    pub chief_complaint: String,
    /// Category of the entity whose surface equals the chief complaint.
    pub chief_category: Option<String>,
}

impl CaseHeader {
    pub fn from_case(case: &VignetteCase) -> Self {
        let cc = text::normalize(&case.chief_complaint);
        let chief_category =
            case.entities.iter().find(|e| text::normalize(&e.surface) == cc).map(|e| e.category.clone());
        Self {
            case_id: case.case_id.clone(),
            age: case.age,
            sex: case.sex,
            chief_complaint: case.chief_complaint.clone(),
            chief_category,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub question: String,
    pub answer: String,
    /// Entity ids detected in the answer.
    pub revealed: Vec<String>,
}

/// Everything known before the doctor asks the next question.
#[derive(Debug, Clone, PartialEq)]
pub struct InterviewState {
    pub header: CaseHeader,
    pub coverage: CoverageState,
    pub history: Vec<Exchange>,
    pub max_turns: usize,
}

impl InterviewState {
    pub fn new(case: &VignetteCase, max_turns: usize) -> Self {
        Self {
            header: CaseHeader::from_case(case),
            coverage: CoverageState::new(case.entities.clone()),
            history: Vec::new(),
            max_turns,
        }
    }

    pub fn turn(&self) -> usize {
        self.history.len()
    }

    pub fn last_answer_informative(&self) -> bool {
        self.history.last().is_some_and(|x| !x.revealed.is_empty())
    }

    /// Chief complaint followed by the question/answer pairs so far.
    pub fn history_text(&self) -> String {
        let mut out = format!("Chief complaint: {}", self.header.chief_complaint);
        for x in &self.history {
            out.push_str(&format!("\nDoctor: {}\nPatient: {}", x.question, x.answer));
        }
        out
    }

    /// History plus a digest of the still-hidden entities.
    pub fn state_text(&self) -> String {
        let uncovered = self.coverage.uncovered();
        let digest = uncovered.iter().map(|e| format!("{} ({})", e.surface, e.category)).collect::<Vec<_>>().join("; ");
        format!("{}\nUncovered: {digest}", self.history_text())
    }

    /// Expected reward of asking `question` now.
    pub fn score(&self, model: &RewardModel, question: &str) -> Result<ScoredQuestion, RewardError> {
        let uncovered = self.coverage.uncovered();
        let conversation = self.history_text();
        let ctx = AssessmentContext {
            chief_complaint: &self.header.chief_complaint,
            conversation: &conversation,
            uncovered: &uncovered,
            all_entities: self.coverage.all_entities(),
        };
        model.score(question, &uncovered, &ctx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    /// Most entities disclosed in a single answer.
    pub disclosure_cap: usize,
    /// Minimum question relevance for an entity to be disclosed.
    pub reveal_threshold: f64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self { disclosure_cap: 2, reveal_threshold: 0.4 }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<(), DialogueError> {
        if self.disclosure_cap == 0 {
            return Err(DialogueError::Config("disclosure_cap must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.reveal_threshold) {
            return Err(DialogueError::Config(format!(
                "reveal_threshold must lie in [0, 1], got {}",
                self.reveal_threshold
            )));
        }
        Ok(())
    }
}

const REPLY_FRAMES: [&str; 3] = ["Yes, there is {s}.", "I have noticed {s}.", "Now that you ask, {s}."];

const NON_INFORMATIVE: [&str; 3] =
    ["I'm not sure, nothing comes to mind.", "I can't think of anything like that.", "No, not really."];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientReply {
    pub answer: String,
    /// Entity ids the patient chose to disclose.
    pub disclosed: Vec<String>,
}

/// Rule-based patient that discloses the entities a question most directly
/// asks about, a few at a time.
#[derive(Debug, Clone)]
pub struct PatientSimulator {
    pub config: SimulatorConfig,
    pub seed: u64,
}

impl PatientSimulator {
    pub fn new(config: SimulatorConfig, seed: u64) -> Self {
        Self { config, seed }
    }
}

/// Ranks uncovered entities by relevance to `question`, discloses the top
/// ones above the reveal threshold by naming their surfaces verbatim, and
/// otherwise gives a non-informative reply. Phrasing is drawn from a stream
/// keyed on the seed, the question and the number of covered entities.
pub fn patient_answer(
    sim: &PatientSimulator,
    question: &str,
    state: &CoverageState,
    provider: &dyn EmbeddingProvider,
) -> Result<PatientReply, ProviderError> {
    let mut rng = derive_rng(sim.seed, &[text_digest(question), state.covered_count() as u64]);
    let mut ranked = Vec::new();
    if !text::tokenize(question).is_empty() {
        for (idx, e) in state.uncovered().into_iter().enumerate() {
            let rel = elicitation_relevance(e, question, provider)?;
            if rel >= sim.config.reveal_threshold {
                ranked.push((rel, idx, e));
            }
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.truncate(sim.config.disclosure_cap);
    if ranked.is_empty() {
        let answer = NON_INFORMATIVE.choose(&mut rng).expect("non-empty").to_string();
        return Ok(PatientReply { answer, disclosed: Vec::new() });
    }
    let sentences: Vec<String> = ranked
        .iter()
        .map(|(_, _, e)| REPLY_FRAMES.choose(&mut rng).expect("non-empty").replace("{s}", &e.surface))
        .collect();
    Ok(PatientReply { answer: sentences.join(" "), disclosed: ranked.iter().map(|(_, _, e)| e.id.clone()).collect() })
}

pub trait Patient: Send + Sync {
    fn respond(
        &self,
        question: &str,
        state: &InterviewState,
        provider: &dyn EmbeddingProvider,
    ) -> Result<PatientReply, DialogueError>;
}

impl Patient for PatientSimulator {
    fn respond(
        &self,
        question: &str,
        state: &InterviewState,
        provider: &dyn EmbeddingProvider,
    ) -> Result<PatientReply, DialogueError> {
        Ok(patient_answer(self, question, &state.coverage, provider)?)
    }
}

/// Builds one patient per episode.
pub trait PatientFactory: Send + Sync {
    fn create(&self, case: &VignetteCase, seed: u64) -> Box<dyn Patient>;
}

#[derive(Debug, Clone, Default)]
pub struct SimulatorFactory {
    pub config: SimulatorConfig,
}

impl PatientFactory for SimulatorFactory {
    fn create(&self, _case: &VignetteCase, seed: u64) -> Box<dyn Patient> {
        Box::new(PatientSimulator::new(self.config, seed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskedQuestion {
    pub text: String,
    pub template: Option<usize>,
    pub log_prob: Option<f64>,
}

pub trait Interviewer: Send + Sync {
    fn ask(&self, state: &InterviewState, rng: &mut ChaCha8Rng) -> Result<AskedQuestion, DialogueError>;
}

/// Reference interviewer that asks directly about the first uncovered
/// entities by name.
#[derive(Debug, Clone, Copy)]
pub struct OraclePolicy {
    pub per_turn: usize,
}

impl Default for OraclePolicy {
    fn default() -> Self {
        Self { per_turn: SimulatorConfig::default().disclosure_cap }
    }
}

impl Interviewer for OraclePolicy {
    fn ask(&self, state: &InterviewState, _rng: &mut ChaCha8Rng) -> Result<AskedQuestion, DialogueError> {
        let names: Vec<&str> =
            state.coverage.uncovered().into_iter().take(self.per_turn.max(1)).map(|e| e.surface.as_str()).collect();
        let text = match names.as_slice() {
            [] => "Is there anything else you would like to tell me?".to_string(),
            [one] => format!("Have you experienced {one}?"),
            [init @ .., last] => format!("Have you experienced {} or {last}?", init.join(", ")),
        };
        Ok(AskedQuestion { text, template: None, log_prob: None })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub max_turns: usize,
    pub discount: f64,
    pub semantic_threshold: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { max_turns: 8, discount: 1.0, semantic_threshold: DEFAULT_SEMANTIC_THRESHOLD }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), DialogueError> {
        if self.max_turns == 0 {
            return Err(DialogueError::Config("max_turns must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(DialogueError::Config(format!("discount must lie in [0, 1], got {}", self.discount)));
        }
        if !(self.semantic_threshold > 0.0 && self.semantic_threshold <= 1.0) {
            return Err(DialogueError::Config(format!(
                "semantic_threshold must lie in (0, 1], got {}",
                self.semantic_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSnapshot {
    pub covered: Vec<Reveal>,
    pub uncovered: Vec<String>,
}

impl CoverageSnapshot {
    pub fn of(state: &CoverageState) -> Self {
        Self {
            covered: state.covered().to_vec(),
            uncovered: state.uncovered().into_iter().map(|e| e.id.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: usize,
    pub question: String,
    pub template: Option<usize>,
    pub log_prob: Option<f64>,
    pub answer: String,
    pub disclosed: Vec<String>,
    pub revealed: Vec<MatchResult>,
    /// Expected gain of the question, computed before the answer.
    pub gain: GainBreakdown,
    pub reward: RewardBreakdown,
    /// Coverage after this turn's answer.
    pub coverage: CoverageSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub header: CaseHeader,
    pub entities: Vec<ClinicalEntity>,
    pub max_turns: usize,
    pub discount: f64,
    pub turns: Vec<TurnRecord>,
    /// Discounted sum of per-turn rewards.
    pub total_reward: f64,
}

impl Trajectory {
    fn discounted(&self, f: impl Fn(&TurnRecord) -> f64) -> f64 {
        let mut scale = 1.0;
        let mut sum = 0.0;
        for t in &self.turns {
            sum += scale * f(t);
            scale *= self.discount;
        }
        sum
    }

    /// Discounted sum of the per-turn expected weighted information gain.
    pub fn cumulative_ig(&self) -> f64 {
        self.discounted(|t| t.gain.weighted_ig)
    }

    pub fn revealed_count(&self) -> usize {
        self.turns.iter().map(|t| t.revealed.len()).sum()
    }

    /// Total category weight of the entities actually revealed.
    pub fn revealed_mass(&self) -> f64 {
        self.turns
            .iter()
            .flat_map(|t| &t.revealed)
            .filter_map(|m| self.entities.iter().find(|e| e.id == m.entity_id))
            .fold(0.0, |acc, e| acc + e.importance_weight)
    }

    pub fn final_coverage(&self) -> CoverageState {
        let mut state = CoverageState::new(self.entities.clone());
        for t in &self.turns {
            state.apply(&t.revealed, t.turn).expect("trajectory reveals are consistent");
        }
        state
    }

    fn push(&mut self, record: TurnRecord) {
        self.turns.push(record);
        self.total_reward = self.discounted(|t| t.reward.total);
    }
}

/// Plays one interview: question, pre-answer reward, patient answer and
/// coverage update each turn, until `max_turns` or until nothing is left
/// uncovered.
pub fn run_episode(
    interviewer: &dyn Interviewer,
    patient: &dyn Patient,
    case: &VignetteCase,
    model: &RewardModel,
    config: &EpisodeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory, EpisodeError> {
    let mut state = InterviewState::new(case, config.max_turns);
    let mut traj = Trajectory {
        header: state.header.clone(),
        entities: case.entities.clone(),
        max_turns: config.max_turns,
        discount: config.discount,
        turns: Vec::new(),
        total_reward: 0.0,
    };
    if let Err(source) = config.validate() {
        return Err(EpisodeError { partial: Box::new(traj), source });
    }
    while state.turn() < config.max_turns && !state.coverage.is_exhausted() {
        match play_turn(interviewer, patient, &mut state, model, config, rng) {
            Ok(record) => traj.push(record),
            Err(source) => return Err(EpisodeError { partial: Box::new(traj), source }),
        }
    }
    Ok(traj)
}

fn play_turn(
    interviewer: &dyn Interviewer,
    patient: &dyn Patient,
    state: &mut InterviewState,
    model: &RewardModel,
    config: &EpisodeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TurnRecord, DialogueError> {
    let turn = state.turn();
    let asked = interviewer.ask(state, rng)?;
    if asked.text.trim().is_empty() {
        return Err(DialogueError::EmptyQuestion);
    }
    let scored = state.score(model, &asked.text)?;
    let provider = model.provider().as_ref();
    let reply = patient.respond(&asked.text, state, provider)?;
    let revealed = {
        let uncovered = state.coverage.uncovered();
        detect_revealed(&reply.answer, &uncovered, provider, config.semantic_threshold)?
    };
    for id in &reply.disclosed {
        if !revealed.iter().any(|m| &m.entity_id == id) {
            log::warn!("case {}: disclosed entity {id} was not detected in the answer", state.header.case_id);
        }
    }
    state.coverage.apply(&revealed, turn)?;
    state.history.push(Exchange {
        question: asked.text.clone(),
        answer: reply.answer.clone(),
        revealed: revealed.iter().map(|m| m.entity_id.clone()).collect(),
    });
    Ok(TurnRecord {
        turn,
        question: asked.text,
        template: asked.template,
        log_prob: asked.log_prob,
        answer: reply.answer,
        disclosed: reply.disclosed,
        revealed,
        gain: scored.gain,
        reward: scored.reward,
        coverage: CoverageSnapshot::of(&state.coverage),
    })
}

/// The state before one turn's question.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnSample {
    pub case_id: String,
    pub turn: usize,
    pub state: InterviewState,
}

impl TurnSample {
    pub fn state_text(&self) -> String {
        self.state.state_text()
    }
}

/// One sample per turn; sample `t` holds the history strictly before turn
/// `t`'s question.
pub fn extract_turn_samples(trajectory: &Trajectory) -> Vec<TurnSample> {
    let mut state = InterviewState {
        header: trajectory.header.clone(),
        coverage: CoverageState::new(trajectory.entities.clone()),
        history: Vec::new(),
        max_turns: trajectory.max_turns,
    };
    let mut out = Vec::with_capacity(trajectory.turns.len());
    for t in &trajectory.turns {
        out.push(TurnSample { case_id: trajectory.header.case_id.clone(), turn: t.turn, state: state.clone() });
        state.coverage.apply(&t.revealed, t.turn).expect("trajectory reveals are consistent");
        state.history.push(Exchange {
            question: t.question.clone(),
            answer: t.answer.clone(),
            revealed: t.revealed.iter().map(|m| m.entity_id.clone()).collect(),
        });
    }
    out
}

/// One line of a trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnLogRecord {
    pub case_id: String,
    pub episode: usize,
    pub turn: usize,
    pub question: String,
    pub template: Option<usize>,
    pub answer: String,
    pub revealed: Vec<String>,
    pub ig: f64,
    pub weighted_ig: f64,
    pub quality: QualityScores,
    pub lambda: f64,
    pub reward: f64,
}

pub fn trajectory_log_records(episode: usize, trajectory: &Trajectory) -> Vec<TurnLogRecord> {
    trajectory
        .turns
        .iter()
        .map(|t| TurnLogRecord {
            case_id: trajectory.header.case_id.clone(),
            episode,
            turn: t.turn,
            question: t.question.clone(),
            template: t.template,
            answer: t.answer.clone(),
            revealed: t.revealed.iter().map(|m| m.entity_id.clone()).collect(),
            ig: t.gain.ig,
            weighted_ig: t.reward.weighted_ig,
            quality: t.reward.quality.clone(),
            lambda: t.reward.lambda,
            reward: t.reward.total,
        })
        .collect()
}

pub fn write_trajectory_log<W: Write>(mut writer: W, trajectories: &[Trajectory]) -> std::io::Result<()> {
    for (episode, traj) in trajectories.iter().enumerate() {
        for rec in trajectory_log_records(episode, traj) {
            serde_json::to_writer(&mut writer, &rec)?;
            writer.write_all(b"\n")?;
        }
    }
    writer.flush()
}

pub fn read_trajectory_log<R: BufRead>(reader: R) -> std::io::Result<Vec<TurnLogRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
