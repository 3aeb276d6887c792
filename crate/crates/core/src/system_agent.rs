//! Rule-based system bot: a finite state machine that answers the user with
//! a response frame and drives the dialogue forward with an initiate frame.
//!
//! Flow per goal: gather search constraints, query the database, offer
//! matches, let the user modify constraints or ask about the offer, then
//! confirm (for transactional intents) and commit.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue::{
    is_dontcare, ApiState, DialogueAct, Frame, SlotValue, Speaker, TurnAnnotation, INTENT_SLOT,
};
use crate::scenario::GoalReference;
use crate::task_spec::{Entity, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    /// Chance of acknowledging an inform before requesting the next slot.
    pub p_ack: f64,
    /// Chance of presenting several matches at once with SELECT.
    pub select_prob: f64,
    pub select_size: usize,
    /// Most slots asked for in one REQUEST frame.
    pub request_batch: usize,
    /// Chance of asking for several missing slots at once (up to
    /// `request_batch`) instead of one.
    pub p_multi_request: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            p_ack: 0.5,
            select_prob: 0.3,
            select_size: 2,
            request_batch: 2,
            p_multi_request: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Greet,
    GatherPrefs,
    Offered,
    Confirming,
    Done,
    Failed,
}

/// A user phrase standing for a concrete attribute, e.g. location
/// "near the theatre" for the committed theatre's location.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alias {
    pub slot: String,
    pub description: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemState {
    pub phase: Phase,
    pub task: Option<String>,
    pub intent: Option<String>,
    /// Constraints heard from the user, with aliases resolved.
    pub constraints: BTreeMap<String, String>,
    /// Slots whose value came in through an alias, with the user's phrase.
    pub surface: BTreeMap<String, String>,
    pub results: Vec<Entity>,
    pub offer_cursor: usize,
    /// Entities in the last OFFER (one) or SELECT (several).
    pub offered: Vec<Entity>,
    /// The entity the user accepted, pending confirmation.
    pub accepted: Option<Entity>,
    pub confirm_sent: bool,
    pub committed: Option<Entity>,
    /// Entities committed by earlier goals, in order.
    pub memory: Vec<Entity>,
    pub aliases: Vec<Alias>,
    pub api_state: ApiState,
}

impl Default for SystemState {
    fn default() -> Self {
        SystemState {
            phase: Phase::Greet,
            task: None,
            intent: None,
            constraints: BTreeMap::new(),
            surface: BTreeMap::new(),
            results: Vec::new(),
            offer_cursor: 0,
            offered: Vec::new(),
            accepted: None,
            confirm_sent: false,
            committed: None,
            memory: Vec::new(),
            aliases: Vec::new(),
            api_state: ApiState::NotQueried,
        }
    }
}

impl SystemState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_alias(&mut self, slot: impl Into<String>, description: impl Into<String>, value: impl Into<String>) {
        self.aliases.push(Alias {
            slot: slot.into(),
            description: description.into(),
            value: value.into(),
        });
    }

    fn alias(&self, slot: &str, phrase: &str) -> Option<&str> {
        self.aliases
            .iter()
            .rev()
            .find(|a| a.slot == slot && a.description.eq_ignore_ascii_case(phrase))
            .map(|a| a.value.as_str())
    }

    fn start_goal(&mut self, task: &str, intent: &str) {
        if let Some(done) = self.committed.take() {
            self.memory.push(done);
        }
        let memory = std::mem::take(&mut self.memory);
        let aliases = std::mem::take(&mut self.aliases);
        *self = SystemState {
            phase: Phase::GatherPrefs,
            task: Some(task.to_string()),
            intent: Some(intent.to_string()),
            memory,
            aliases,
            ..SystemState::default()
        };
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no transition from {phase:?} on {input}")]
pub struct IllegalTransition {
    pub phase: Phase,
    pub input: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("referenced goal {goal} committed no entity with `{slot}`")]
pub struct UnresolvedReference {
    pub goal: usize,
    pub slot: String,
}

/// Looks up the attribute a reference points at in the entities committed
/// by earlier goals (`None` where a goal failed).
pub fn resolve_reference(
    reference: &GoalReference,
    memory: &[Option<Entity>],
) -> Result<String, UnresolvedReference> {
    memory
        .get(reference.goal)
        .and_then(Option::as_ref)
        .and_then(|e| e.get(&reference.source_slot))
        .map(str::to_string)
        .ok_or_else(|| UnresolvedReference {
            goal: reference.goal,
            slot: reference.source_slot.clone(),
        })
}

fn spec_for<'a>(specs: &'a [TaskSpec], state: &SystemState) -> Option<&'a TaskSpec> {
    let task = state.task.as_deref()?;
    specs.iter().find(|s| s.name() == task)
}

fn illegal(state: &SystemState, user: Option<&TurnAnnotation>) -> IllegalTransition {
    IllegalTransition {
        phase: state.phase,
        input: user.map_or_else(|| "no input".to_string(), TurnAnnotation::canonical_key),
    }
}

fn system_turn(frames: Vec<Frame>, state: &SystemState) -> TurnAnnotation {
    let mut turn = TurnAnnotation::new(Speaker::System, frames);
    turn.dialogue_state = state.constraints.clone();
    if let Some(intent) = &state.intent {
        turn.dialogue_state.insert(INTENT_SLOT.to_string(), intent.clone());
    }
    turn.api_state = state.api_state;
    turn
}

/// Produces the system's next turn. Input the FSM cannot handle yields
/// CANT_UNDERSTAND and leaves the state unchanged.
pub fn next_system_turn<R: Rng + ?Sized>(
    state: &SystemState,
    last_user: Option<&TurnAnnotation>,
    specs: &[TaskSpec],
    config: &SystemConfig,
    rng: &mut R,
) -> (TurnAnnotation, SystemState) {
    match transition(state, last_user, specs, config, rng) {
        Ok(step) => step,
        Err(_) => (
            system_turn(vec![Frame::new(DialogueAct::CantUnderstand)], state),
            state.clone(),
        ),
    }
}

/// The transition function proper.
pub fn transition<R: Rng + ?Sized>(
    state: &SystemState,
    last_user: Option<&TurnAnnotation>,
    specs: &[TaskSpec],
    config: &SystemConfig,
    rng: &mut R,
) -> Result<(TurnAnnotation, SystemState), IllegalTransition> {
    let mut next = state.clone();
    let Some(user) = last_user else {
        if state.phase != Phase::Greet {
            return Err(illegal(state, None));
        }
        next.phase = Phase::GatherPrefs;
        return Ok((system_turn(vec![Frame::new(DialogueAct::Greeting)], &next), next));
    };
    if user.speaker != Speaker::User {
        return Err(illegal(state, Some(user)));
    }
    if user.has_act(DialogueAct::GoodBye) {
        return Ok((system_turn(vec![Frame::new(DialogueAct::GoodBye)], &next), next));
    }

    // A new intent opens (or upgrades) a goal.
    if let Some(intent) = user.frames.iter().find_map(Frame::intent) {
        let spec = specs
            .iter()
            .find(|s| s.schema.has_intent(intent))
            .ok_or_else(|| illegal(state, Some(user)))?;
        let same_task = next.task.as_deref() == Some(spec.name());
        if same_task && !matches!(next.phase, Phase::Done | Phase::Failed) {
            next.intent = Some(intent.to_string());
        } else {
            next.start_goal(spec.name(), intent);
        }
    }
    let spec = spec_for(specs, &next).ok_or_else(|| illegal(state, Some(user)))?;
    let name_slot = spec.schema.entity_name_slot.clone();

    // Absorb informed values.
    let mut search_changed = false;
    let mut informed = false;
    let mut chosen: Option<String> = None;
    for frame in user.frames.iter().filter(|f| f.act == DialogueAct::Inform) {
        for (slot, value) in &frame.slots {
            if slot == INTENT_SLOT {
                continue;
            }
            let value = value.as_single().ok_or_else(|| illegal(state, Some(user)))?;
            if name_slot.as_deref() == Some(slot.as_str()) {
                chosen = Some(value.to_string());
                continue;
            }
            if !spec.slot(slot).is_some_and(|s| s.constrainable) {
                return Err(illegal(state, Some(user)));
            }
            informed = true;
            let resolved = match next.alias(slot, value).map(str::to_string) {
                Some(actual) => {
                    next.surface.insert(slot.clone(), value.to_string());
                    actual
                }
                None => {
                    next.surface.remove(slot);
                    value.to_string()
                }
            };
            let previous = next.constraints.insert(slot.clone(), resolved.clone());
            if spec.is_column(slot) && previous.is_none_or(|p| !p.eq_ignore_ascii_case(&resolved)) {
                search_changed = true;
            }
        }
    }

    let acts: Vec<DialogueAct> = user.acts().collect();
    let has = |a: DialogueAct| acts.contains(&a);
    if acts
        .iter()
        .any(|a| matches!(a, DialogueAct::Other | DialogueAct::CantUnderstand))
    {
        return Err(illegal(state, Some(user)));
    }

    // Questions about the current offer.
    if let Some(request) = user.frame(DialogueAct::Request) {
        if next.phase != Phase::Offered || next.offered.len() != 1 {
            return Err(illegal(state, Some(user)));
        }
        let entity = &next.offered[0];
        let mut answer = Frame::new(DialogueAct::Inform);
        for slot in request.slots.keys() {
            if spec.slot(slot).is_none() {
                return Err(illegal(state, Some(user)));
            }
            let value = entity.get(slot).unwrap_or("unknown").to_string();
            answer.slots.insert(slot.clone(), SlotValue::Single(value));
        }
        return Ok((system_turn(vec![answer], &next), next));
    }

    if search_changed && !matches!(next.phase, Phase::Done | Phase::Failed) {
        next.accepted = None;
        next.confirm_sent = false;
        if next.phase != Phase::GatherPrefs {
            next.phase = Phase::GatherPrefs;
        }
        return gather_or_query(next, spec, informed, config, rng);
    }

    match next.phase {
        Phase::Greet => Err(illegal(state, Some(user))),
        Phase::GatherPrefs => {
            if !informed && user.frames.iter().all(|f| f.intent().is_none()) {
                return Err(illegal(state, Some(user)));
            }
            gather_or_query(next, spec, informed, config, rng)
        }
        Phase::Offered => {
            let selected = match &chosen {
                Some(name) => {
                    let slot = name_slot.as_deref().unwrap_or_default();
                    let found = next
                        .offered
                        .iter()
                        .chain(next.results.iter())
                        .find(|e| e.get(slot).is_some_and(|v| v.eq_ignore_ascii_case(name)))
                        .cloned();
                    Some(found.ok_or_else(|| illegal(state, Some(user)))?)
                }
                None if has(DialogueAct::Affirm) && next.offered.len() == 1 => {
                    Some(next.offered[0].clone())
                }
                None => None,
            };
            if let Some(entity) = selected {
                next.accepted = Some(entity);
                next.phase = Phase::Confirming;
                return close_transaction(next, spec, config, rng);
            }
            if has(DialogueAct::RequestAlts) || has(DialogueAct::Negate) {
                let step = next.offered.len().max(1);
                next.offer_cursor += step;
                if next.offer_cursor < next.results.len() {
                    return present(next, spec, config, rng, None);
                }
                next.offer_cursor = 0;
                return present(next, spec, config, rng, Some(Frame::new(DialogueAct::NotifyFailure)));
            }
            if informed {
                // Parameters given alongside the offer discussion.
                let frames = vec![Frame::new(DialogueAct::Affirm)];
                return Ok((system_turn(frames, &next), next));
            }
            Err(illegal(state, Some(user)))
        }
        Phase::Confirming => {
            if next.confirm_sent && has(DialogueAct::Affirm) && !has(DialogueAct::Negate) {
                commit(&mut next, spec);
                return Ok((system_turn(vec![Frame::new(DialogueAct::NotifySuccess)], &next), next));
            }
            if informed || has(DialogueAct::Negate) || chosen.is_some() {
                if let Some(name) = chosen {
                    let slot = name_slot.as_deref().unwrap_or_default();
                    if let Some(e) = next
                        .results
                        .iter()
                        .find(|e| e.get(slot).is_some_and(|v| v.eq_ignore_ascii_case(&name)))
                    {
                        next.accepted = Some(e.clone());
                    }
                }
                return close_transaction(next, spec, config, rng);
            }
            Err(illegal(state, Some(user)))
        }
        Phase::Done | Phase::Failed => {
            if has(DialogueAct::ThankYou) {
                return Ok((system_turn(vec![Frame::new(DialogueAct::GoodBye)], &next), next));
            }
            Err(illegal(state, Some(user)))
        }
    }
}

fn maybe_ack<R: Rng + ?Sized>(informed: bool, config: &SystemConfig, rng: &mut R) -> Vec<Frame> {
    if informed && rng.gen_bool(config.p_ack.clamp(0.0, 1.0)) {
        vec![Frame::new(DialogueAct::Affirm)]
    } else {
        Vec::new()
    }
}

fn request_batch<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> usize {
    if config.request_batch > 1 && rng.gen_bool(config.p_multi_request.clamp(0.0, 1.0)) {
        config.request_batch
    } else {
        1
    }
}

/// Requests the next missing search slots, or queries once all are known.
fn gather_or_query<R: Rng + ?Sized>(
    mut next: SystemState,
    spec: &TaskSpec,
    informed: bool,
    config: &SystemConfig,
    rng: &mut R,
) -> Result<(TurnAnnotation, SystemState), IllegalTransition> {
    let batch = request_batch(config, rng);
    let missing: Vec<String> = spec
        .search_slots()
        .filter(|s| !next.constraints.contains_key(&s.name))
        .map(|s| s.name.clone())
        .take(batch)
        .collect();
    if !missing.is_empty() {
        let mut frames = maybe_ack(informed, config, rng);
        frames.push(Frame::request(missing));
        return Ok((system_turn(frames, &next), next));
    }
    let filter: BTreeMap<String, String> = next
        .constraints
        .iter()
        .filter(|(slot, value)| spec.is_column(slot) && !is_dontcare(value))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let results: Vec<Entity> = spec
        .query_map(&filter)
        .expect("constraints only hold schema slots")
        .into_iter()
        .cloned()
        .collect();
    next.api_state = ApiState::Queried {
        match_count: results.len(),
    };
    next.results = results;
    next.offer_cursor = 0;
    next.offered.clear();
    if next.results.is_empty() {
        next.phase = Phase::GatherPrefs;
        return Ok((
            system_turn(vec![Frame::new(DialogueAct::NotifyFailure)], &next),
            next,
        ));
    }
    present(next, spec, config, rng, None)
}

/// Offers the entity at the cursor, or several with SELECT.
fn present<R: Rng + ?Sized>(
    mut next: SystemState,
    spec: &TaskSpec,
    config: &SystemConfig,
    rng: &mut R,
    response: Option<Frame>,
) -> Result<(TurnAnnotation, SystemState), IllegalTransition> {
    let remaining = &next.results[next.offer_cursor..];
    let name_slot = spec.schema.entity_name_slot.as_deref();
    let mut frames: Vec<Frame> = response.into_iter().collect();
    let select = name_slot.is_some()
        && config.select_size >= 2
        && remaining.len() >= 2
        && rng.gen_bool(config.select_prob.clamp(0.0, 1.0));
    if let (true, Some(name_slot)) = (select, name_slot) {
        let shown: Vec<Entity> = remaining.iter().take(config.select_size).cloned().collect();
        let names: Vec<String> = shown
            .iter()
            .filter_map(|e| e.get(name_slot))
            .map(str::to_string)
            .collect();
        let mut frame = Frame::new(DialogueAct::Select).with(name_slot, SlotValue::Set(names));
        for (slot, phrase) in &next.surface {
            frame.slots.insert(slot.clone(), SlotValue::Single(phrase.clone()));
        }
        frames.push(frame);
        next.offered = shown;
    } else {
        let entity = remaining[0].clone();
        let mut frame = Frame::new(DialogueAct::Offer);
        if let Some(v) = name_slot.and_then(|n| entity.get(n)) {
            frame.slots.insert(name_slot.unwrap_or_default().to_string(), SlotValue::single(v));
        }
        for slot in spec.search_slots() {
            let open = next.constraints.get(&slot.name).is_none_or(|v| is_dontcare(v));
            if let (true, Some(v)) = (open, entity.get(&slot.name)) {
                frame.slots.insert(slot.name.clone(), SlotValue::single(v));
            }
        }
        if frame.slots.is_empty() {
            for (k, v) in &entity.attributes {
                frame.slots.insert(k.clone(), SlotValue::single(v.clone()));
            }
        }
        frames.push(frame);
        next.offered = vec![entity];
    }
    next.phase = Phase::Offered;
    Ok((system_turn(frames, &next), next))
}

/// After acceptance: collect transaction parameters, confirm, or succeed.
fn close_transaction<R: Rng + ?Sized>(
    mut next: SystemState,
    spec: &TaskSpec,
    config: &SystemConfig,
    rng: &mut R,
) -> Result<(TurnAnnotation, SystemState), IllegalTransition> {
    let intent = next.intent.clone().unwrap_or_default();
    let entity = next.accepted.clone().expect("closing requires an accepted offer");
    let batch = request_batch(config, rng);
    let missing: Vec<String> = spec
        .param_slots()
        .filter(|s| !next.constraints.contains_key(&s.name))
        .map(|s| s.name.clone())
        .take(batch)
        .collect();
    if !missing.is_empty() {
        let mut frames = maybe_ack(true, config, rng);
        frames.push(Frame::request(missing));
        return Ok((system_turn(frames, &next), next));
    }
    if !spec.schema.confirms(&intent) {
        commit(&mut next, spec);
        return Ok((system_turn(vec![Frame::new(DialogueAct::NotifySuccess)], &next), next));
    }
    let mut confirm = Frame::new(DialogueAct::Confirm);
    if let Some(name_slot) = spec.schema.entity_name_slot.as_deref() {
        if let Some(v) = entity.get(name_slot) {
            confirm.slots.insert(name_slot.to_string(), SlotValue::single(v));
        }
    }
    for slot in spec.param_slots() {
        if let Some(v) = next.constraints.get(&slot.name) {
            confirm.slots.insert(slot.name.clone(), SlotValue::single(v.clone()));
        }
    }
    next.confirm_sent = true;
    let frames = vec![Frame::new(DialogueAct::Affirm), confirm];
    Ok((system_turn(frames, &next), next))
}

/// Records the accepted entity together with the transaction parameters.
fn commit(next: &mut SystemState, spec: &TaskSpec) {
    let mut entity = next.accepted.clone().expect("committing requires an accepted offer");
    for slot in spec.param_slots() {
        if let Some(v) = next.constraints.get(&slot.name).filter(|v| !is_dontcare(v)) {
            entity.attributes.insert(slot.name.clone(), v.clone());
        }
    }
    next.committed = Some(entity);
    next.phase = Phase::Done;
    next.api_state = ApiState::Committed;
}

/// One row of the transition table: phase, user input, system output, next phase.
pub const TRANSITIONS: &[(Phase, &str, &str, Phase)] = &[
    (Phase::Greet, "(start)", "GREETING", Phase::GatherPrefs),
    (Phase::GatherPrefs, "INFORM, search slots missing", "[AFFIRM] REQUEST(next missing search slot)", Phase::GatherPrefs),
    (Phase::GatherPrefs, "INFORM, search slots complete, no match", "NOTIFY_FAILURE", Phase::GatherPrefs),
    (Phase::GatherPrefs, "INFORM, search slots complete, one match or no select", "OFFER(name, open attributes)", Phase::Offered),
    (Phase::GatherPrefs, "INFORM, search slots complete, 2+ matches and select", "SELECT(name={...}, referenced slots)", Phase::Offered),
    (Phase::Offered, "REQUEST(slot)", "INFORM(slot=offered value)", Phase::Offered),
    (Phase::Offered, "REQUEST_ALTS or NEGATE, matches left", "OFFER/SELECT(next)", Phase::Offered),
    (Phase::Offered, "REQUEST_ALTS or NEGATE, matches exhausted", "NOTIFY_FAILURE OFFER/SELECT(first)", Phase::Offered),
    (Phase::Offered, "changed search constraint", "re-query as in GatherPrefs", Phase::GatherPrefs),
    (Phase::Offered, "AFFIRM or INFORM(name), params missing", "[AFFIRM] REQUEST(next missing param)", Phase::Confirming),
    (Phase::Offered, "AFFIRM or INFORM(name), params complete, find intent", "NOTIFY_SUCCESS", Phase::Done),
    (Phase::Offered, "AFFIRM or INFORM(name), confirm intent, params complete", "AFFIRM CONFIRM(name, params)", Phase::Confirming),
    (Phase::Confirming, "INFORM(params) or NEGATE INFORM(corrections)", "REQUEST(param) or AFFIRM CONFIRM(...)", Phase::Confirming),
    (Phase::Confirming, "AFFIRM after CONFIRM", "NOTIFY_SUCCESS", Phase::Done),
    (Phase::Done, "INFORM(intent=new)", "start next goal", Phase::GatherPrefs),
    (Phase::Failed, "INFORM(intent=new)", "start next goal", Phase::GatherPrefs),
    (Phase::Done, "THANK_YOU or GOOD_BYE", "GOOD_BYE", Phase::Done),
];

/// Renders [`TRANSITIONS`] as a plain-text table. Any other input in any
/// phase yields CANT_UNDERSTAND with the state unchanged.
pub fn transition_report() -> String {
    let mut out = String::from("phase | user input | system turn | next phase\n");
    for (phase, input, output, to) in TRANSITIONS {
        out.push_str(&format!("{phase:?} | {input} | {output} | {to:?}\n"));
    }
    out.push_str("* | anything else | CANT_UNDERSTAND | unchanged\n");
    out
}
