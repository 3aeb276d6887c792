//! Template utterances: a small data-driven grammar mapping turn annotations
//! to plain sentences, with developer overrides for specific frames.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dialogue::{
    is_dontcare, DialogueAct, Frame, SlotValue, Speaker, TurnAnnotation, INTENT_SLOT,
};

pub const DEFAULT_GRAMMAR: &str = include_str!("../data/grammar.json");

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("no template rule for {0}")]
    MissingRule(DialogueAct),
    #[error("template `{template}`: {detail}")]
    PlaceholderMismatch { template: String, detail: String },
    #[error("cannot parse grammar document: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Skeletons for one act. `text` is the fallback; `user`/`system` take
/// precedence for that speaker; `with_intent`/`intent_only` apply to INFORM
/// frames carrying an intent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub with_intent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent_only: Option<String>,
}

/// Fixed text for a run of consecutive slotless frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Combination {
    pub acts: Vec<DialogueAct>,
    pub text: String,
}

/// A developer template for one act and exact slot-name set. Slot values
/// are written as `<slot>` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Override {
    pub act: DialogueAct,
    #[serde(default)]
    pub slots: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<Speaker>,
    pub template: String,
}

impl Override {
    fn matches(&self, frame: &Frame, speaker: Speaker) -> bool {
        if self.act != frame.act || self.speaker.is_some_and(|s| s != speaker) {
            return false;
        }
        let want: BTreeSet<&str> = self.slots.iter().map(String::as_str).collect();
        let have: BTreeSet<&str> = frame.slots.keys().map(String::as_str).collect();
        want == have
    }

    fn validate(&self) -> Result<(), TemplateError> {
        let placeholders = placeholders(&self.template);
        let mismatch = |detail: String| TemplateError::PlaceholderMismatch {
            template: self.template.clone(),
            detail,
        };
        for p in &placeholders {
            if !self.slots.iter().any(|s| s == p) {
                return Err(mismatch(format!("placeholder <{p}> is not in the key's slots")));
            }
        }
        for slot in &self.slots {
            if slot != INTENT_SLOT && !placeholders.contains(slot) {
                return Err(mismatch(format!("slot `{slot}` has no placeholder")));
            }
        }
        Ok(())
    }
}

fn placeholders(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('<') {
        let after = &rest[open + 1..];
        let Some(close) = after.find('>') else { break };
        let name = &after[..close];
        if !name.is_empty() && name.chars().all(|c| c.is_alphanumeric() || c == '_') {
            out.push(name.to_string());
        }
        rest = &after[close + 1..];
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateGrammar {
    pub pair: String,
    pub joiner: String,
    pub set_joiner: String,
    pub dontcare: String,
    pub rules: BTreeMap<DialogueAct, ActRule>,
    #[serde(default)]
    pub combinations: Vec<Combination>,
    #[serde(default)]
    pub overrides: Vec<Override>,
}

impl Default for TemplateGrammar {
    fn default() -> Self {
        TemplateGrammar::from_json(DEFAULT_GRAMMAR).expect("bundled grammar is valid")
    }
}

impl TemplateGrammar {
    pub fn from_json(doc: &str) -> Result<Self, TemplateError> {
        let grammar: TemplateGrammar = serde_json::from_str(doc)?;
        for o in &grammar.overrides {
            o.validate()?;
        }
        Ok(grammar)
    }

    /// Adds overrides from a JSON list; later entries shadow earlier ones
    /// and the grammar's own rules.
    pub fn load_overrides(mut self, doc: &str) -> Result<Self, TemplateError> {
        let doc = doc.trim();
        if doc.is_empty() {
            return Ok(self);
        }
        let overrides: Vec<Override> = serde_json::from_str(doc)?;
        for o in &overrides {
            o.validate()?;
        }
        self.overrides.extend(overrides);
        Ok(self)
    }

    fn value_text(&self, value: &str) -> String {
        if is_dontcare(value) {
            self.dontcare.clone()
        } else {
            value.to_string()
        }
    }

    fn slot_value_text(&self, value: &SlotValue) -> String {
        match value {
            SlotValue::Single(v) => self.value_text(v),
            SlotValue::Set(vs) => vs
                .iter()
                .map(|v| self.value_text(v))
                .collect::<Vec<_>>()
                .join(&self.set_joiner),
        }
    }

    fn pairs<'a, I>(&self, slots: I) -> String
    where
        I: IntoIterator<Item = (&'a String, &'a SlotValue)>,
    {
        slots
            .into_iter()
            .map(|(name, value)| {
                self.pair
                    .replace("{slot}", &humanize(name))
                    .replace("{value}", &self.slot_value_text(value))
            })
            .collect::<Vec<_>>()
            .join(&self.joiner)
    }

    /// Renders one frame as spoken by `speaker`.
    pub fn render_frame(&self, frame: &Frame, speaker: Speaker) -> Result<String, TemplateError> {
        if let Some(o) = self.overrides.iter().rev().find(|o| o.matches(frame, speaker)) {
            let mut text = o.template.clone();
            for (name, value) in &frame.slots {
                text = text.replace(&format!("<{name}>"), &self.slot_value_text(value));
            }
            return Ok(text);
        }
        let rule = self
            .rules
            .get(&frame.act)
            .ok_or(TemplateError::MissingRule(frame.act))?;
        let by_speaker = match speaker {
            Speaker::User => rule.user.as_ref(),
            Speaker::System => rule.system.as_ref(),
        };
        let others: Vec<(&String, &SlotValue)> = frame
            .slots
            .iter()
            .filter(|(k, _)| k.as_str() != INTENT_SLOT)
            .collect();
        let intent = frame.intent().map(humanize);
        let skeleton = match (&intent, others.is_empty()) {
            (Some(_), false) if rule.with_intent.is_some() => rule.with_intent.as_ref(),
            (Some(_), true) if rule.intent_only.is_some() => rule.intent_only.as_ref(),
            _ => None,
        }
        .or(by_speaker)
        .or(rule.text.as_ref())
        .ok_or(TemplateError::MissingRule(frame.act))?;

        let set_slot = frame
            .slots
            .iter()
            .find(|(_, v)| matches!(v, SlotValue::Set(_)));
        let rest: Vec<(&String, &SlotValue)> = others
            .iter()
            .copied()
            .filter(|(k, _)| set_slot.is_none_or(|(s, _)| s != *k))
            .collect();
        let with_pairs = if rest.is_empty() {
            String::new()
        } else {
            format!(" with {}", self.pairs(rest.iter().copied()))
        };
        let slot_names = frame
            .slots
            .keys()
            .map(|k| humanize(k))
            .collect::<Vec<_>>()
            .join(&self.joiner);
        let text = skeleton
            .replace("{intent}", intent.as_deref().unwrap_or(""))
            .replace("{pairs}", &self.pairs(others.iter().copied()))
            .replace("{slots}", &slot_names)
            .replace("{set_slot}", &set_slot.map(|(k, _)| humanize(k)).unwrap_or_default())
            .replace(
                "{set_values}",
                &set_slot.map(|(_, v)| self.slot_value_text(v)).unwrap_or_default(),
            )
            .replace("{with_pairs}", &with_pairs);
        Ok(capitalize(&text))
    }

    /// Renders every frame of a turn, joined by single spaces.
    pub fn render_turn(&self, annotation: &TurnAnnotation) -> Result<String, TemplateError> {
        let frames = &annotation.frames;
        let mut parts = Vec::with_capacity(frames.len());
        let mut i = 0;
        'outer: while i < frames.len() {
            for combo in &self.combinations {
                let n = combo.acts.len();
                if n > 0
                    && i + n <= frames.len()
                    && frames[i..i + n]
                        .iter()
                        .zip(&combo.acts)
                        .all(|(f, a)| f.act == *a && f.slots.is_empty())
                {
                    parts.push(combo.text.clone());
                    i += n;
                    continue 'outer;
                }
            }
            parts.push(self.render_frame(&frames[i], annotation.speaker)?);
            i += 1;
        }
        Ok(parts.join(" "))
    }
}

/// `num_tickets` becomes `num tickets`.
pub fn humanize(name: &str) -> String {
    name.replace('_', " ")
}

fn capitalize(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}
