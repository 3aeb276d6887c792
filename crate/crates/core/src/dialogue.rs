//! Dialogue acts, frames, turn annotations, outlines and finished dialogues.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::scenario::{Scenario, UserGoal};
use crate::task_spec::Entity;

/// Reserved slot carrying the user's intent inside an INFORM frame.
pub const INTENT_SLOT: &str = "intent";

/// Sentinel value meaning "no preference" for a slot.
pub const DONTCARE: &str = "dontcare";

pub fn is_dontcare(value: &str) -> bool {
    value.eq_ignore_ascii_case(DONTCARE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DialogueAct {
    Greeting,
    Inform,
    Confirm,
    Request,
    RequestAlts,
    Offer,
    Select,
    Affirm,
    Negate,
    NotifySuccess,
    NotifyFailure,
    ThankYou,
    GoodBye,
    CantUnderstand,
    Other,
}

impl DialogueAct {
    pub const ALL: [DialogueAct; 15] = [
        DialogueAct::Greeting,
        DialogueAct::Inform,
        DialogueAct::Confirm,
        DialogueAct::Request,
        DialogueAct::RequestAlts,
        DialogueAct::Offer,
        DialogueAct::Select,
        DialogueAct::Affirm,
        DialogueAct::Negate,
        DialogueAct::NotifySuccess,
        DialogueAct::NotifyFailure,
        DialogueAct::ThankYou,
        DialogueAct::GoodBye,
        DialogueAct::CantUnderstand,
        DialogueAct::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DialogueAct::Greeting => "GREETING",
            DialogueAct::Inform => "INFORM",
            DialogueAct::Confirm => "CONFIRM",
            DialogueAct::Request => "REQUEST",
            DialogueAct::RequestAlts => "REQUEST_ALTS",
            DialogueAct::Offer => "OFFER",
            DialogueAct::Select => "SELECT",
            DialogueAct::Affirm => "AFFIRM",
            DialogueAct::Negate => "NEGATE",
            DialogueAct::NotifySuccess => "NOTIFY_SUCCESS",
            DialogueAct::NotifyFailure => "NOTIFY_FAILURE",
            DialogueAct::ThankYou => "THANK_YOU",
            DialogueAct::GoodBye => "GOOD_BYE",
            DialogueAct::CantUnderstand => "CANT_UNDERSTAND",
            DialogueAct::Other => "OTHER",
        }
    }

    /// Whether `speaker` may produce this act.
    pub fn allowed_for(self, speaker: Speaker) -> bool {
        match self {
            DialogueAct::RequestAlts | DialogueAct::Other => speaker == Speaker::User,
            DialogueAct::Offer
            | DialogueAct::Select
            | DialogueAct::NotifySuccess
            | DialogueAct::NotifyFailure => speaker == Speaker::System,
            _ => true,
        }
    }

    /// Role of the act inside a system turn: a response to the user's
    /// previous turn, or an initiative that moves the dialogue forward.
    pub fn system_role(self) -> SystemRole {
        match self {
            DialogueAct::Affirm
            | DialogueAct::Negate
            | DialogueAct::Inform
            | DialogueAct::NotifyFailure
            | DialogueAct::CantUnderstand
            | DialogueAct::ThankYou
            | DialogueAct::Other
            | DialogueAct::RequestAlts => SystemRole::Response,
            DialogueAct::Greeting
            | DialogueAct::Request
            | DialogueAct::Confirm
            | DialogueAct::Offer
            | DialogueAct::Select
            | DialogueAct::NotifySuccess
            | DialogueAct::GoodBye => SystemRole::Initiate,
        }
    }
}

impl fmt::Display for DialogueAct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown dialogue act `{0}`")]
pub struct UnknownAct(pub String);

impl FromStr for DialogueAct {
    type Err = UnknownAct;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        DialogueAct::ALL
            .iter()
            .copied()
            .find(|act| act.name() == upper)
            .ok_or_else(|| UnknownAct(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemRole {
    Response,
    Initiate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "U")]
    User,
    #[serde(rename = "S")]
    System,
}

impl Speaker {
    pub fn tag(self) -> &'static str {
        match self {
            Speaker::User => "U",
            Speaker::System => "S",
        }
    }

    pub fn other(self) -> Speaker {
        match self {
            Speaker::User => Speaker::System,
            Speaker::System => Speaker::User,
        }
    }
}

/// A slot value: a single string, or a set of strings (only under SELECT).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SlotValue {
    Single(String),
    Set(Vec<String>),
}

impl SlotValue {
    pub fn single(value: impl Into<String>) -> Self {
        SlotValue::Single(value.into())
    }

    pub fn as_single(&self) -> Option<&str> {
        match self {
            SlotValue::Single(v) => Some(v),
            SlotValue::Set(_) => None,
        }
    }

    /// Every concrete string carried by this value.
    pub fn values(&self) -> Vec<&str> {
        match self {
            SlotValue::Single(v) => vec![v.as_str()],
            SlotValue::Set(vs) => vs.iter().map(String::as_str).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            SlotValue::Single(v) => v.is_empty(),
            SlotValue::Set(vs) => vs.is_empty(),
        }
    }
}

impl From<&str> for SlotValue {
    fn from(v: &str) -> Self {
        SlotValue::Single(v.to_string())
    }
}

impl From<String> for SlotValue {
    fn from(v: String) -> Self {
        SlotValue::Single(v)
    }
}

/// One dialogue act with its slot-value map. Slot order is significant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub act: DialogueAct,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub slots: IndexMap<String, SlotValue>,
}

impl Frame {
    pub fn new(act: DialogueAct) -> Self {
        Frame {
            act,
            slots: IndexMap::new(),
        }
    }

    pub fn with(mut self, slot: impl Into<String>, value: impl Into<SlotValue>) -> Self {
        self.slots.insert(slot.into(), value.into());
        self
    }

    /// A REQUEST frame: slot names with empty values.
    pub fn request<I, S>(slots: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut frame = Frame::new(DialogueAct::Request);
        for slot in slots {
            frame.slots.insert(slot.into(), SlotValue::Single(String::new()));
        }
        frame
    }

    pub fn get(&self, slot: &str) -> Option<&str> {
        self.slots.get(slot).and_then(SlotValue::as_single)
    }

    pub fn intent(&self) -> Option<&str> {
        if self.act == DialogueAct::Inform {
            self.get(INTENT_SLOT)
        } else {
            None
        }
    }

    fn sorted_slot_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.slots.keys().map(String::as_str).collect();
        names.sort_unstable();
        names
    }

    fn key_part(&self) -> String {
        if self.slots.is_empty() {
            self.act.name().to_string()
        } else {
            format!("{}({})", self.act.name(), self.sorted_slot_names().join(","))
        }
    }

    fn strict_key_part(&self) -> String {
        if self.slots.is_empty() {
            return self.act.name().to_string();
        }
        let mut pairs: Vec<(&str, String)> = self
            .slots
            .iter()
            .map(|(name, value)| {
                let rendered = match value {
                    SlotValue::Single(v) => v.to_lowercase(),
                    SlotValue::Set(vs) => {
                        let mut vs: Vec<String> = vs.iter().map(|v| v.to_lowercase()).collect();
                        vs.sort();
                        format!("{{{}}}", vs.join("/"))
                    }
                };
                (name.as_str(), rendered)
            })
            .collect();
        pairs.sort();
        let body: Vec<String> = pairs
            .into_iter()
            .map(|(name, value)| {
                if value.is_empty() {
                    name.to_string()
                } else {
                    format!("{name}={value}")
                }
            })
            .collect();
        format!("{}({})", self.act.name(), body.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
#[derive(Default)]
pub enum ApiState {
    #[default]
    NotQueried,
    Queried { match_count: usize },
    Committed,
}


/// Semantics of one turn: who spoke, what they did, and the dialogue state
/// after the turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnAnnotation {
    pub speaker: Speaker,
    pub frames: Vec<Frame>,
    #[serde(default)]
    pub dialogue_state: BTreeMap<String, String>,
    #[serde(default)]
    pub api_state: ApiState,
}

impl TurnAnnotation {
    pub fn new(speaker: Speaker, frames: Vec<Frame>) -> Self {
        TurnAnnotation {
            speaker,
            frames,
            dialogue_state: BTreeMap::new(),
            api_state: ApiState::NotQueried,
        }
    }

    pub fn acts(&self) -> impl Iterator<Item = DialogueAct> + '_ {
        self.frames.iter().map(|f| f.act)
    }

    pub fn has_act(&self, act: DialogueAct) -> bool {
        self.frames.iter().any(|f| f.act == act)
    }

    pub fn frame(&self, act: DialogueAct) -> Option<&Frame> {
        self.frames.iter().find(|f| f.act == act)
    }

    /// Value-free key: speaker tag, then each frame's act and sorted slot names.
    pub fn canonical_key(&self) -> String {
        let mut parts = Vec::with_capacity(self.frames.len() + 1);
        parts.push(self.speaker.tag().to_string());
        parts.extend(self.frames.iter().map(Frame::key_part));
        parts.join("|")
    }

    /// Like [`canonical_key`](Self::canonical_key) but keeps (lowercased) slot values.
    pub fn strict_key(&self) -> String {
        let mut parts = Vec::with_capacity(self.frames.len() + 1);
        parts.push(self.speaker.tag().to_string());
        parts.extend(self.frames.iter().map(Frame::strict_key_part));
        parts.join("|")
    }

    /// Every violated well-formedness rule. Empty means the annotation is valid.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.frames.is_empty() {
            out.push(Violation::new(None, "a turn needs at least one frame"));
        }
        for (i, frame) in self.frames.iter().enumerate() {
            if !frame.act.allowed_for(self.speaker) {
                let only = match self.speaker {
                    Speaker::User => "system-only",
                    Speaker::System => "user-only",
                };
                out.push(Violation::new(Some(i), format!("{} is {only}", frame.act)));
            }
            if frame.act == DialogueAct::Request
                && frame.slots.values().any(|v| !v.is_empty())
            {
                out.push(Violation::new(
                    Some(i),
                    "REQUEST carries slot names with empty values",
                ));
            }
            if frame.act != DialogueAct::Select
                && frame.slots.values().any(|v| matches!(v, SlotValue::Set(_)))
            {
                out.push(Violation::new(
                    Some(i),
                    format!("set values are only allowed under SELECT, found in {}", frame.act),
                ));
            }
        }
        if self.speaker == Speaker::System {
            if self.frames.len() > 2 {
                out.push(Violation::new(
                    None,
                    format!(
                        "system turn has {} frames; at most one response and one initiate",
                        self.frames.len()
                    ),
                ));
            } else if self.frames.len() == 2 {
                let roles = (
                    self.frames[0].act.system_role(),
                    self.frames[1].act.system_role(),
                );
                if roles != (SystemRole::Response, SystemRole::Initiate) {
                    out.push(Violation::new(
                        None,
                        "at most one response and one initiate, response first",
                    ));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub frame: Option<usize>,
    pub message: String,
}

impl Violation {
    fn new(frame: Option<usize>, message: impl Into<String>) -> Self {
        Violation {
            frame,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.frame {
            Some(i) => write!(f, "frame {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Checks speaker alternation across a whole turn sequence (system first)
/// in addition to per-turn rules.
pub fn validate_sequence<'a, I>(annotations: I) -> Vec<(usize, Violation)>
where
    I: IntoIterator<Item = &'a TurnAnnotation>,
{
    let mut out = Vec::new();
    let mut expected = Speaker::System;
    for (i, annotation) in annotations.into_iter().enumerate() {
        if annotation.speaker != expected {
            out.push((
                i,
                Violation::new(None, format!("expected {:?} to speak", expected)),
            ));
        }
        out.extend(annotation.violations().into_iter().map(|v| (i, v)));
        expected = annotation.speaker.other();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlineTurn {
    pub template: String,
    #[serde(flatten)]
    pub annotation: TurnAnnotation,
}

/// What happened to one goal of the scenario during self-play.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalOutcome {
    /// The goal with cross-goal references resolved.
    pub goal: UserGoal,
    pub committed: Option<Entity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outline {
    pub id: String,
    pub scenario: Scenario,
    pub turns: Vec<OutlineTurn>,
    /// Ended on a user GOOD_BYE rather than the turn limit.
    pub complete: bool,
    pub success: bool,
    #[serde(default)]
    pub outcomes: Vec<GoalOutcome>,
}

impl Outline {
    pub fn annotations(&self) -> impl Iterator<Item = &TurnAnnotation> {
        self.turns.iter().map(|t| &t.annotation)
    }

    pub fn key_sequence(&self) -> Vec<String> {
        self.annotations().map(TurnAnnotation::canonical_key).collect()
    }
}

/// A character range in an utterance holding a slot value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotSpan {
    pub slot: String,
    pub start: usize,
    pub end: usize,
    pub value: String,
}

impl SlotSpan {
    /// Substring equality under case-insensitive comparison, offsets in chars.
    pub fn holds_in(&self, utterance: &str) -> bool {
        if self.start > self.end {
            return false;
        }
        let chars: Vec<char> = utterance.chars().collect();
        if self.end > chars.len() {
            return false;
        }
        let slice: String = chars[self.start..self.end].iter().collect();
        slice.to_lowercase() == self.value.to_lowercase()
    }
}

/// Whether all spans hold in `utterance` and none overlap.
pub fn spans_valid(utterance: &str, spans: &[SlotSpan]) -> bool {
    if !spans.iter().all(|s| s.holds_in(utterance)) {
        return false;
    }
    let mut ranges: Vec<(usize, usize)> = spans.iter().map(|s| (s.start, s.end)).collect();
    ranges.sort_unstable();
    ranges.windows(2).all(|w| w[0].1 <= w[1].0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub utterance: String,
    #[serde(default)]
    pub spans: Vec<SlotSpan>,
    #[serde(flatten)]
    pub annotation: TurnAnnotation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub outline_ref: String,
    pub turns: Vec<DialogueTurn>,
}

impl Dialogue {
    pub fn key_sequence(&self) -> Vec<String> {
        self.turns
            .iter()
            .map(|t| t.annotation.canonical_key())
            .collect()
    }
}
