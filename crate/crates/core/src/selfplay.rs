//! Dialogue self-play: the user simulator and the system bot take turns
//! from a scenario until the user says good bye or the turn budget runs out.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rayon::prelude::*;

use crate::dialogue::{
    DialogueAct, GoalOutcome, Outline, OutlineTurn, TurnAnnotation, INTENT_SLOT,
};
use crate::rng::{derive_seed, seeded};
use crate::scenario::{sample_scenario, Constraint, Scenario, ScenarioConfig, ScenarioError, UserGoal};
use crate::system_agent::{next_system_turn, resolve_reference, SystemConfig, SystemState};
use crate::task_spec::{Entity, TaskSpec};
use crate::template::TemplateGrammar;
use crate::user_sim::{is_goal_satisfied, Agenda, UserAction};

pub const DEFAULT_MAX_TURNS: usize = 30;

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("only {} unique outlines after the retry budget; {missing} missing", outlines.len())]
    RetryBudgetExhausted { outlines: Vec<Outline>, missing: usize },
}

/// Everything self-play needs besides the scenario.
#[derive(Debug, Clone)]
pub struct SelfPlay {
    pub specs: Vec<TaskSpec>,
    pub system: SystemConfig,
    pub grammar: TemplateGrammar,
    pub max_turns: usize,
    /// Extra episodes allowed when deduplication rejects outlines.
    pub retry_budget: Option<usize>,
}

impl SelfPlay {
    pub fn new(specs: Vec<TaskSpec>) -> Self {
        SelfPlay {
            specs,
            system: SystemConfig::default(),
            grammar: TemplateGrammar::default(),
            max_turns: DEFAULT_MAX_TURNS,
            retry_budget: None,
        }
    }

    /// Plays one episode.
    ///
    /// # Panics
    /// If `max_turns` is below 4.
    pub fn run_episode<R: Rng + ?Sized>(&self, scenario: &Scenario, rng: &mut R) -> Outline {
        assert!(self.max_turns >= 4, "max_turns must be at least 4");
        let goals = &scenario.goals;
        let mut committed: Vec<Option<Entity>> = vec![None; goals.len()];
        let mut resolved: Vec<UserGoal> = Vec::with_capacity(goals.len());
        let mut system = SystemState::new();
        let mut turns: Vec<TurnAnnotation> = Vec::new();
        let mut tracker: BTreeMap<String, String> = BTreeMap::new();
        let mut complete = false;

        let mut goal_index = 0;
        resolved.push(resolve_goal(&goals[0], &committed, &mut system));
        let mut agenda = agenda_for(&resolved[0], goals.len() > 1, rng);

        let (mut last_system, state) =
            next_system_turn(&system, None, &self.specs, &self.system, rng);
        system = state;
        turns.push(last_system.clone());

        while turns.len() < self.max_turns {
            let action = match agenda.next_user_turn(Some(&last_system), &scenario.profile, rng) {
                Ok(action) => action,
                Err(_) => break,
            };
            let mut user = match action {
                UserAction::Turn(turn) => turn,
                UserAction::GoalFinished { prefix, .. } => {
                    goal_index += 1;
                    tracker.clear();
                    resolved.push(resolve_goal(&goals[goal_index], &committed, &mut system));
                    agenda = agenda_for(&resolved[goal_index], goal_index + 1 < goals.len(), rng);
                    let opening = match agenda.next_user_turn(None, &scenario.profile, rng) {
                        Ok(UserAction::Turn(turn)) => turn,
                        _ => break,
                    };
                    let mut turn = opening;
                    let mut frames = prefix;
                    frames.append(&mut turn.frames);
                    turn.frames = frames;
                    turn
                }
            };
            for frame in user.frames.iter().filter(|f| f.act == DialogueAct::Inform) {
                for (slot, value) in &frame.slots {
                    if let Some(v) = value.as_single() {
                        tracker.insert(slot.clone(), v.to_string());
                    }
                }
            }
            user.dialogue_state = tracker.clone();
            user.api_state = system.api_state;
            let bye = user.has_act(DialogueAct::GoodBye);
            turns.push(user);
            if bye {
                complete = true;
                break;
            }
            if turns.len() >= self.max_turns {
                break;
            }
            let (turn, state) = next_system_turn(&system, turns.last(), &self.specs, &self.system, rng);
            system = state;
            if turn.has_act(DialogueAct::NotifySuccess) {
                committed[goal_index] = system.committed.clone();
            }
            last_system = turn.clone();
            turns.push(turn);
        }

        // Goals never reached keep their unresolved form.
        for goal in goals.iter().skip(resolved.len()) {
            resolved.push(goal.clone());
        }
        let outcomes: Vec<GoalOutcome> = resolved
            .into_iter()
            .zip(committed.iter().cloned())
            .map(|(goal, committed)| GoalOutcome { goal, committed })
            .collect();
        let success = committed.iter().all(Option::is_some);
        let turns = turns
            .into_iter()
            .map(|annotation| OutlineTurn {
                template: self
                    .grammar
                    .render_turn(&annotation)
                    .unwrap_or_else(|_| annotation.canonical_key()),
                annotation,
            })
            .collect();
        Outline {
            id: format!("outline-{:016x}", scenario.seed),
            scenario: scenario.clone(),
            turns,
            complete,
            success,
            outcomes,
        }
    }

    /// Samples and plays `n` episodes with seeds derived from `seed`. With
    /// `dedup`, outlines repeating an earlier canonical-key sequence are
    /// replaced by further episodes until the retry budget is spent.
    pub fn generate_outlines(
        &self,
        config: &ScenarioConfig,
        n: usize,
        seed: u64,
        dedup: bool,
    ) -> Result<Vec<Outline>, GenerateError> {
        let budget = self.retry_budget.unwrap_or(2 * n + 100);
        let limit = if dedup { n + budget } else { n };
        let mut accepted: Vec<Outline> = Vec::with_capacity(n);
        let mut seen: HashSet<Vec<String>> = HashSet::new();
        let mut next_index = 0usize;
        while accepted.len() < n && next_index < limit {
            let end = (next_index + (n - accepted.len()).max(64)).min(limit);
            let batch: Result<Vec<Outline>, ScenarioError> = (next_index..end)
                .into_par_iter()
                .map(|i| self.play_indexed(config, seed, i))
                .collect();
            for outline in batch? {
                if accepted.len() == n {
                    break;
                }
                if dedup && !seen.insert(outline.key_sequence()) {
                    continue;
                }
                accepted.push(outline);
            }
            next_index = end;
        }
        if accepted.len() < n {
            let missing = n - accepted.len();
            return Err(GenerateError::RetryBudgetExhausted {
                outlines: accepted,
                missing,
            });
        }
        Ok(accepted)
    }

    fn play_indexed(&self, config: &ScenarioConfig, seed: u64, index: usize) -> Result<Outline, ScenarioError> {
        let episode_seed = derive_seed(seed, index as u64);
        let scenario = sample_scenario(&self.specs, config, episode_seed)?;
        let mut rng = seeded(derive_seed(episode_seed, u64::MAX));
        let mut outline = self.run_episode(&scenario, &mut rng);
        outline.id = format!("outline-{index:06}");
        Ok(outline)
    }
}

/// Plays one episode with the default system configuration and grammar.
pub fn run_episode<R: Rng + ?Sized>(
    scenario: &Scenario,
    specs: &[TaskSpec],
    max_turns: usize,
    rng: &mut R,
) -> Outline {
    let mut play = SelfPlay::new(specs.to_vec());
    play.max_turns = max_turns;
    play.run_episode(scenario, rng)
}

/// Batch generation with default settings.
pub fn generate_outlines(
    specs: &[TaskSpec],
    config: &ScenarioConfig,
    n: usize,
    seed: u64,
    dedup: bool,
) -> Result<Vec<Outline>, GenerateError> {
    SelfPlay::new(specs.to_vec()).generate_outlines(config, n, seed, dedup)
}

/// Binds referenced slots to the entities committed so far. A reference to
/// a failed goal leaves the slot Open.
fn resolve_goal(goal: &UserGoal, committed: &[Option<Entity>], system: &mut SystemState) -> UserGoal {
    let mut goal = goal.clone();
    let references = std::mem::take(&mut goal.references);
    for (slot, reference) in references {
        match resolve_reference(&reference, committed) {
            Ok(value) => {
                if let Some(c) = goal.constraint_mut(&slot) {
                    *c = Constraint::fixed(slot.clone(), value.clone());
                }
                system.add_alias(slot.clone(), reference.description.clone(), value);
                goal.references.insert(slot, reference);
            }
            Err(_) => {
                if let Some(c) = goal.constraint_mut(&slot) {
                    *c = Constraint::open(slot.clone());
                }
            }
        }
    }
    goal
}

fn agenda_for<R: Rng + ?Sized>(goal: &UserGoal, more_goals: bool, rng: &mut R) -> Agenda {
    let agenda = Agenda::shuffled(goal.clone(), rng);
    if more_goals {
        agenda.followed_by_another_goal()
    } else {
        agenda
    }
}

/// Per-goal success judged by the user's own criterion.
pub fn goals_satisfied(outline: &Outline) -> bool {
    outline
        .outcomes
        .iter()
        .all(|o| is_goal_satisfied(&o.goal, o.committed.as_ref()))
}

/// The intent of the first user turn, if any.
pub fn opening_intent(outline: &Outline) -> Option<&str> {
    outline
        .annotations()
        .flat_map(|a| a.frames.iter())
        .find_map(|f| f.get(INTENT_SLOT))
}
