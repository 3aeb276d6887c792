//! Agenda-based user simulator conditioned on a user profile.
//!
//! The agenda is a stack of pending user frames. System turns are answered
//! first (requests, confirmations, offers, failures); otherwise the top of
//! the stack is popped, possibly merging several informs into one turn.

use std::collections::BTreeSet;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue::{
    DialogueAct, Frame, SlotValue, Speaker, TurnAnnotation, DONTCARE, INTENT_SLOT,
};
use crate::scenario::{ConstraintKind, UserGoal, UserProfile};

pub use crate::scenario::is_goal_satisfied;

/// Most constraint slots packed into one INFORM frame.
pub const MERGE_CAP: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UserSimError {
    #[error("the user already said good bye")]
    ClosedDialogue,
}

/// What the user does next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UserAction {
    Turn(TurnAnnotation),
    /// The current goal ended and another goal follows; `prefix` holds frames
    /// to say before moving on (e.g. a final NEGATE).
    GoalFinished { success: bool, prefix: Vec<Frame> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agenda {
    /// Pending frames, top of the stack last.
    pub stack: Vec<Frame>,
    pub goal: UserGoal,
    pub relaxations_used: u32,
    /// Value the user currently wants per constrained slot (`dontcare` for Open).
    current: IndexMap<String, String>,
    one_of_pos: IndexMap<String, usize>,
    odometer_steps: usize,
    flexible_opened: bool,
    asked_alts: bool,
    asked: BTreeSet<String>,
    pending_offer: Option<Frame>,
    /// When false, the end of the goal is reported instead of closing the dialogue.
    final_goal: bool,
    closed: bool,
}

/// Builds the agenda for a goal: GOOD_BYE and THANK_YOU at the bottom, one
/// INFORM per non-Open constraint, and the intent on top.
pub fn init_agenda(goal: &UserGoal, _profile: &UserProfile) -> Agenda {
    Agenda::new(goal.clone())
}

impl Agenda {
    pub fn new(goal: UserGoal) -> Self {
        let mut current = IndexMap::new();
        let mut one_of_pos = IndexMap::new();
        for c in &goal.constraints {
            let value = c.initial_value().unwrap_or(DONTCARE).to_string();
            current.insert(c.slot.clone(), value);
            if matches!(c.kind, ConstraintKind::OneOf { .. }) {
                one_of_pos.insert(c.slot.clone(), 0);
            }
        }
        let mut stack = vec![
            Frame::new(DialogueAct::GoodBye),
            Frame::new(DialogueAct::ThankYou),
        ];
        for c in goal.constraints.iter().rev() {
            if c.kind != ConstraintKind::Open {
                stack.push(Frame::new(DialogueAct::Inform).with(c.slot.clone(), String::new()));
            }
        }
        stack.push(Frame::new(DialogueAct::Inform).with(INTENT_SLOT, goal.intent.clone()));
        let mut agenda = Agenda {
            stack,
            goal,
            relaxations_used: 0,
            current,
            one_of_pos,
            odometer_steps: 0,
            flexible_opened: false,
            asked_alts: false,
            asked: BTreeSet::new(),
            pending_offer: None,
            final_goal: true,
            closed: false,
        };
        agenda.refresh_stack_values();
        agenda
    }

    /// Like [`Agenda::new`], with the constraint informs in random order:
    /// the user volunteers constraints in no fixed sequence.
    pub fn shuffled<R: Rng + ?Sized>(goal: UserGoal, rng: &mut R) -> Self {
        let mut agenda = Agenda::new(goal);
        let informs = agenda.stack.len() - 1;
        agenda.stack[2..informs].shuffle(rng);
        agenda
    }

    /// Marks that another goal follows this one.
    pub fn followed_by_another_goal(mut self) -> Self {
        self.final_goal = false;
        self
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Current value for a slot: the goal's (possibly relaxed) value, the
    /// reference description for referenced slots, or `dontcare`.
    pub fn value_for(&self, slot: &str) -> String {
        if slot == INTENT_SLOT {
            return self.goal.intent.clone();
        }
        if let Some(reference) = self.goal.references.get(slot) {
            return reference.description.clone();
        }
        self.current
            .get(slot)
            .cloned()
            .unwrap_or_else(|| DONTCARE.to_string())
    }

    fn refresh_stack_values(&mut self) {
        let values: Vec<Vec<(String, String)>> = self
            .stack
            .iter()
            .map(|f| f.slots.keys().map(|k| (k.clone(), self.value_for(k))).collect())
            .collect();
        for (frame, vals) in self.stack.iter_mut().zip(values) {
            if frame.act == DialogueAct::Inform {
                for (k, v) in vals {
                    frame.slots.insert(k, SlotValue::Single(v));
                }
            }
        }
    }

    fn top_is_constraint_inform(&self) -> bool {
        self.stack
            .last()
            .is_some_and(|f| f.act == DialogueAct::Inform && f.intent().is_none())
    }

    fn remove_pending_informs(&mut self, slot: &str) {
        self.stack
            .retain(|f| !(f.act == DialogueAct::Inform && f.slots.contains_key(slot)));
    }

    /// Pops further constraint informs into `frame` while the profile's
    /// verbosity allows, up to [`MERGE_CAP`] constraint slots.
    fn merge_more<R: Rng + ?Sized>(&mut self, frame: &mut Frame, profile: &UserProfile, rng: &mut R) {
        loop {
            let count = frame.slots.keys().filter(|k| *k != INTENT_SLOT).count();
            if count >= MERGE_CAP || !self.top_is_constraint_inform() {
                return;
            }
            if !rng.gen_bool(profile.p_multi_slot.clamp(0.0, 1.0)) {
                return;
            }
            let next = self.stack.pop().expect("checked non-empty");
            for (k, _) in next.slots {
                let v = self.value_for(&k);
                frame.slots.insert(k, SlotValue::Single(v));
            }
        }
    }

    fn closing_frames(&mut self) -> Vec<Frame> {
        self.stack.clear();
        self.closed = true;
        vec![
            Frame::new(DialogueAct::ThankYou),
            Frame::new(DialogueAct::GoodBye),
        ]
    }

    fn finish(&mut self, success: bool, mut prefix: Vec<Frame>) -> UserAction {
        if self.final_goal {
            prefix.extend(self.closing_frames());
            UserAction::Turn(user_turn(prefix))
        } else {
            self.stack.clear();
            self.closed = true;
            UserAction::GoalFinished { success, prefix }
        }
    }

    fn pop_agenda<R: Rng + ?Sized>(&mut self, profile: &UserProfile, rng: &mut R) -> UserAction {
        match self.stack.pop() {
            None => self.finish(false, vec![]),
            Some(frame) if frame.act == DialogueAct::Inform => {
                let mut frame = frame;
                for (k, v) in frame.slots.iter_mut() {
                    *v = SlotValue::Single(self.value_for(k));
                }
                self.merge_more(&mut frame, profile, rng);
                UserAction::Turn(user_turn(vec![frame]))
            }
            Some(frame) if matches!(frame.act, DialogueAct::ThankYou | DialogueAct::GoodBye) => {
                // Nothing left to negotiate.
                self.finish(false, vec![])
            }
            Some(frame) => UserAction::Turn(user_turn(vec![frame])),
        }
    }

    fn answer_request<R: Rng + ?Sized>(
        &mut self,
        request: &Frame,
        profile: &UserProfile,
        rng: &mut R,
    ) -> UserAction {
        let mut inform = Frame::new(DialogueAct::Inform);
        for slot in request.slots.keys() {
            inform
                .slots
                .insert(slot.clone(), SlotValue::Single(self.value_for(slot)));
            self.remove_pending_informs(slot);
        }
        self.merge_more(&mut inform, profile, rng);
        UserAction::Turn(user_turn(vec![inform]))
    }

    fn answer_confirm(&mut self, confirm: &Frame) -> UserAction {
        let mut corrections = Frame::new(DialogueAct::Inform);
        for (slot, value) in &confirm.slots {
            let Some(shown) = value.as_single() else { continue };
            if !self.current.contains_key(slot) {
                continue;
            }
            let wanted = self.value_for(slot);
            if crate::dialogue::is_dontcare(&wanted) {
                continue;
            }
            let resolved = self.resolved_value(slot);
            if !same(shown, &wanted) && !same(shown, &resolved) {
                corrections.slots.insert(slot.clone(), SlotValue::Single(wanted));
            }
        }
        if corrections.slots.is_empty() {
            UserAction::Turn(user_turn(vec![Frame::new(DialogueAct::Affirm)]))
        } else {
            UserAction::Turn(user_turn(vec![Frame::new(DialogueAct::Negate), corrections]))
        }
    }

    fn resolved_value(&self, slot: &str) -> String {
        self.current
            .get(slot)
            .cloned()
            .unwrap_or_else(|| DONTCARE.to_string())
    }

    /// Whether a shown value is acceptable for a slot given the current
    /// (possibly relaxed) wants. `None` means a flexible mismatch.
    fn judge(&self, slot: &str, shown: &str) -> Option<bool> {
        if self
            .goal
            .references
            .get(slot)
            .is_some_and(|r| same(&r.description, shown))
        {
            return Some(true);
        }
        let Some(c) = self.goal.constraint(slot) else {
            return Some(true);
        };
        match &c.kind {
            ConstraintKind::Fixed { value } => Some(same(shown, value)),
            ConstraintKind::OneOf { values } => Some(values.iter().any(|v| same(shown, v))),
            ConstraintKind::Flexible { preferred } => {
                let current = self.resolved_value(slot);
                if crate::dialogue::is_dontcare(&current) || same(shown, preferred) {
                    Some(true)
                } else {
                    None
                }
            }
            ConstraintKind::Open => Some(true),
        }
    }

    fn handle_offer<R: Rng + ?Sized>(
        &mut self,
        offer: &Frame,
        allow_request: bool,
        profile: &UserProfile,
        rng: &mut R,
    ) -> UserAction {
        if allow_request
            && offer.act == DialogueAct::Offer
            && rng.gen_bool(profile.p_request_info.clamp(0.0, 1.0))
        {
            let candidate = self
                .goal
                .requests
                .iter()
                .find(|s| {
                    !offer.slots.contains_key(*s)
                        && !self.asked.contains(*s)
                        && self
                            .current
                            .get(*s)
                            .is_none_or(|v| crate::dialogue::is_dontcare(v))
                })
                .cloned();
            if let Some(slot) = candidate {
                self.asked.insert(slot.clone());
                self.pending_offer = Some(offer.clone());
                return UserAction::Turn(user_turn(vec![Frame::request([slot])]));
            }
        }
        self.pending_offer = None;

        let mut violation = false;
        let mut flexible_mismatch = false;
        let mut choice: Option<(String, String)> = None;
        for (slot, value) in &offer.slots {
            match value {
                SlotValue::Single(v) => match self.judge(slot, v) {
                    Some(true) => {}
                    Some(false) => violation = true,
                    None => flexible_mismatch = true,
                },
                SlotValue::Set(options) => {
                    let ok: Vec<&String> = options
                        .iter()
                        .filter(|v| self.judge(slot, v) == Some(true))
                        .collect();
                    match ok.first() {
                        Some(v) => choice = Some((slot.clone(), (*v).clone())),
                        None => violation = true,
                    }
                }
            }
        }
        let acceptable = !violation
            && (!flexible_mismatch || rng.gen_bool(profile.p_accept_flexible.clamp(0.0, 1.0)));
        if acceptable {
            if !self.asked_alts && rng.gen_bool(profile.p_request_alts.clamp(0.0, 1.0)) {
                self.asked_alts = true;
                return UserAction::Turn(user_turn(vec![Frame::new(DialogueAct::RequestAlts)]));
            }
            return match choice {
                Some((slot, value)) => {
                    let mut pick = Frame::new(DialogueAct::Inform).with(slot, value);
                    self.merge_more(&mut pick, profile, rng);
                    UserAction::Turn(user_turn(vec![pick]))
                }
                None => {
                    let mut frames = vec![Frame::new(DialogueAct::Affirm)];
                    if self.top_is_constraint_inform() && rng.gen_bool(profile.p_multi_slot.clamp(0.0, 1.0)) {
                        let mut extra = self.stack.pop().expect("checked non-empty");
                        for (k, v) in extra.slots.iter_mut() {
                            *v = SlotValue::Single(self.value_for(k));
                        }
                        self.merge_more(&mut extra, profile, rng);
                        frames.push(extra);
                    }
                    UserAction::Turn(user_turn(frames))
                }
            };
        }
        match self.relax(profile, rng) {
            Some(relaxed) => UserAction::Turn(user_turn(vec![Frame::new(DialogueAct::Negate), relaxed])),
            None => self.finish(false, vec![Frame::new(DialogueAct::Negate)]),
        }
    }

    fn one_of_values(&self, slot: &str) -> &[String] {
        match self.goal.constraint(slot).map(|c| &c.kind) {
            Some(ConstraintKind::OneOf { values }) => values,
            _ => &[],
        }
    }

    /// Loosens the goal by one step: the OneOf odometer advances first; once
    /// every combination has been tried, all Flexible slots open to
    /// `dontcare` (if the profile accepts) and the odometer may cycle again.
    fn relax<R: Rng + ?Sized>(&mut self, profile: &UserProfile, rng: &mut R) -> Option<Frame> {
        if self.relaxations_used >= profile.max_goal_relaxations {
            return None;
        }
        let combos: usize = self
            .one_of_pos
            .keys()
            .map(|s| self.one_of_values(s).len().max(1))
            .product();
        let mut changed: Vec<String> = Vec::new();
        if !self.one_of_pos.is_empty() && self.odometer_steps + 1 < combos {
            let slots: Vec<String> = self.one_of_pos.keys().cloned().collect();
            for slot in slots.iter().rev() {
                let len = self.one_of_values(slot).len().max(1);
                let pos = self.one_of_pos[slot];
                let next = (pos + 1) % len;
                self.one_of_pos.insert(slot.clone(), next);
                let value = self.one_of_values(slot)[next].clone();
                self.current.insert(slot.clone(), value);
                changed.push(slot.clone());
                if next != 0 {
                    break;
                }
            }
            self.odometer_steps += 1;
        } else if !self.flexible_opened {
            let flexible: Vec<String> = self
                .goal
                .constraints
                .iter()
                .filter(|c| matches!(c.kind, ConstraintKind::Flexible { .. }))
                .map(|c| c.slot.clone())
                .collect();
            if flexible.is_empty() || !rng.gen_bool(profile.p_accept_flexible.clamp(0.0, 1.0)) {
                return None;
            }
            for slot in &flexible {
                self.current.insert(slot.clone(), DONTCARE.to_string());
            }
            self.flexible_opened = true;
            self.odometer_steps = 0;
            changed = flexible;
        } else {
            return None;
        }
        self.relaxations_used += 1;
        self.refresh_stack_values();
        let mut frame = Frame::new(DialogueAct::Inform);
        let order: Vec<String> = self.goal.constraints.iter().map(|c| c.slot.clone()).collect();
        for slot in order.into_iter().filter(|s| changed.contains(s)) {
            self.remove_pending_informs(&slot);
            let v = self.value_for(&slot);
            frame.slots.insert(slot, SlotValue::Single(v));
        }
        Some(frame)
    }

    /// Produces the user's next move given the system's last turn.
    pub fn next_user_turn<R: Rng + ?Sized>(
        &mut self,
        last_system: Option<&TurnAnnotation>,
        profile: &UserProfile,
        rng: &mut R,
    ) -> Result<UserAction, UserSimError> {
        if self.closed {
            return Err(UserSimError::ClosedDialogue);
        }
        let Some(system) = last_system else {
            return Ok(self.pop_agenda(profile, rng));
        };
        if system.has_act(DialogueAct::NotifySuccess) {
            return Ok(self.finish(true, vec![]));
        }
        if let Some(offer) = system
            .frames
            .iter()
            .find(|f| matches!(f.act, DialogueAct::Offer | DialogueAct::Select))
        {
            return Ok(self.handle_offer(offer, true, profile, rng));
        }
        if let Some(request) = system.frame(DialogueAct::Request) {
            return Ok(self.answer_request(request, profile, rng));
        }
        if let Some(confirm) = system.frame(DialogueAct::Confirm) {
            return Ok(self.answer_confirm(confirm));
        }
        if system.has_act(DialogueAct::Inform) {
            if let Some(offer) = self.pending_offer.take() {
                return Ok(self.handle_offer(&offer, false, profile, rng));
            }
        }
        if system.has_act(DialogueAct::NotifyFailure) {
            return Ok(match self.relax(profile, rng) {
                Some(relaxed) => UserAction::Turn(user_turn(vec![relaxed])),
                None => self.finish(false, vec![]),
            });
        }
        Ok(self.pop_agenda(profile, rng))
    }
}

fn same(a: &str, b: &str) -> bool {
    a.to_lowercase() == b.to_lowercase()
}

fn user_turn(frames: Vec<Frame>) -> TurnAnnotation {
    TurnAnnotation::new(Speaker::User, frames)
}
