//! Crowd paraphrase post-processing: contextual rewrite tasks, meaning
//! validation, slot span tagging and dialogue finalization.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dialogue::{
    is_dontcare, spans_valid, Dialogue, DialogueAct, DialogueTurn, Frame, Outline, SlotSpan,
    TurnAnnotation, INTENT_SLOT,
};

pub const DROP_MEANING: &str = "meaning-validation";
pub const DROP_UNVALIDATED: &str = "unvalidated";
pub const DROP_SPANS: &str = "span-annotation";

/// Worker id recorded on identity rewrites.
pub const AUTO_WORKER: &str = "auto";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CrowdError {
    #[error("expected exactly 2 validation votes, got {0}")]
    WrongVoteCount(usize),
    #[error("worker `{0}` voted twice on one utterance")]
    DuplicateVoter(String),
    #[error("reference to unknown {0}")]
    DanglingReference(String),
    #[error("rewrite for `{task_id}` is malformed: {detail}")]
    MalformedRewrite { task_id: String, detail: String },
    #[error("task `{0}` has more than one rewrite")]
    DuplicateRewrite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Open,
    Submitted,
    Validated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateLine {
    pub index: usize,
    pub template: String,
}

/// One contextual rewrite job: the whole outline, never isolated turns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseTask {
    pub task_id: String,
    pub outline_ref: String,
    pub turns: Vec<TemplateLine>,
    pub status: TaskStatus,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewriteOrigin {
    #[default]
    Crowd,
    /// Identity paraphrase; counts as validated.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rewrite {
    pub task_id: String,
    pub worker_id: String,
    pub utterances: Vec<String>,
    #[serde(default)]
    pub origin: RewriteOrigin,
}

impl Rewrite {
    /// One non-empty utterance per outline turn.
    pub fn check(&self, turn_count: usize) -> Result<(), CrowdError> {
        let malformed = |detail: String| CrowdError::MalformedRewrite {
            task_id: self.task_id.clone(),
            detail,
        };
        if self.utterances.len() != turn_count {
            return Err(malformed(format!(
                "{} utterances for {turn_count} turns",
                self.utterances.len()
            )));
        }
        if let Some(i) = self.utterances.iter().position(|u| u.trim().is_empty()) {
            return Err(malformed(format!("utterance {i} is empty")));
        }
        Ok(())
    }
}

/// Points at one utterance of one rewrite task.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UtteranceRef {
    pub task_id: String,
    pub turn: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationVote {
    pub utterance: UtteranceRef,
    pub worker_id: String,
    pub same_meaning: bool,
}

/// A worker's manual span marking for an utterance whose values were not
/// found automatically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanFix {
    pub utterance: UtteranceRef,
    pub worker_id: String,
    pub spans: Vec<SlotSpan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Keep,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanTagging {
    Complete(Vec<SlotSpan>),
    /// Spans found so far, and the slots whose values were not found.
    MissingSlots { found: Vec<SlotSpan>, missing: Vec<String> },
}

/// Builds `k` rewrite tasks per outline.
pub fn make_tasks(outlines: &[Outline], k: usize) -> Vec<ParaphraseTask> {
    let k = k.max(1);
    outlines
        .iter()
        .flat_map(|o| {
            (0..k).map(move |r| ParaphraseTask {
                task_id: format!("{}/p{r}", o.id),
                outline_ref: o.id.clone(),
                turns: o
                    .turns
                    .iter()
                    .enumerate()
                    .map(|(index, t)| TemplateLine {
                        index,
                        template: t.template.clone(),
                    })
                    .collect(),
                status: TaskStatus::Open,
            })
        })
        .collect()
}

/// Identity paraphrase: every utterance is the template.
pub fn auto_paraphrase(outline: &Outline, task_id: &str) -> Rewrite {
    Rewrite {
        task_id: task_id.to_string(),
        worker_id: AUTO_WORKER.to_string(),
        utterances: outline.turns.iter().map(|t| t.template.clone()).collect(),
        origin: RewriteOrigin::Auto,
    }
}

/// Keep iff two distinct workers both said the meaning is the same.
pub fn apply_validation(votes: &[ValidationVote]) -> Result<Verdict, CrowdError> {
    if votes.len() != 2 {
        return Err(CrowdError::WrongVoteCount(votes.len()));
    }
    if votes[0].worker_id == votes[1].worker_id {
        return Err(CrowdError::DuplicateVoter(votes[0].worker_id.clone()));
    }
    Ok(if votes.iter().all(|v| v.same_meaning) {
        Verdict::Keep
    } else {
        Verdict::Drop
    })
}

/// Slot values that must appear verbatim in an utterance, in frame order:
/// values of INFORM, OFFER, CONFIRM and SELECT frames, except the intent and
/// `dontcare`.
pub fn taggable_values(annotation: &TurnAnnotation) -> Vec<(String, String)> {
    annotation
        .frames
        .iter()
        .filter(|f| is_taggable_frame(f))
        .flat_map(|f| {
            f.slots
                .iter()
                .filter(|(slot, _)| *slot != INTENT_SLOT)
                .flat_map(|(slot, value)| {
                    value
                        .values()
                        .into_iter()
                        .filter(|v| !is_dontcare(v) && !v.is_empty())
                        .map(move |v| (slot.clone(), v.to_string()))
                })
        })
        .collect()
}

/// Values that are not spanned (intent, `dontcare`) and so must agree
/// exactly between two annotations for an utterance to be reused.
pub fn untagged_values(annotation: &TurnAnnotation) -> Vec<(String, String)> {
    annotation
        .frames
        .iter()
        .flat_map(|f| {
            let taggable = is_taggable_frame(f);
            f.slots.iter().flat_map(move |(slot, value)| {
                value
                    .values()
                    .into_iter()
                    .filter(move |v| !taggable || slot == INTENT_SLOT || is_dontcare(v))
                    .map(move |v| (slot.clone(), v.to_lowercase()))
            })
        })
        .collect()
}

fn is_taggable_frame(frame: &Frame) -> bool {
    matches!(
        frame.act,
        DialogueAct::Inform | DialogueAct::Offer | DialogueAct::Confirm | DialogueAct::Select
    )
}

fn chars_eq_ci(a: &[char], b: &[char]) -> bool {
    a.len() == b.len()
        && a
            .iter()
            .zip(b)
            .all(|(x, y)| x == y || x.to_lowercase().eq(y.to_lowercase()))
}

fn is_word_char(c: Option<&char>) -> bool {
    c.is_some_and(|c| c.is_alphanumeric())
}

/// Leftmost case-insensitive occurrence of `needle` not overlapping `taken`,
/// preferring occurrences on word boundaries.
fn find_free(hay: &[char], needle: &[char], taken: &[(usize, usize)]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    let free = |s: usize| taken.iter().all(|&(a, b)| s + needle.len() <= a || s >= b);
    let candidates: Vec<usize> = (0..=hay.len() - needle.len())
        .filter(|&s| chars_eq_ci(&hay[s..s + needle.len()], needle) && free(s))
        .collect();
    let bounded = candidates.iter().copied().find(|&s| {
        let before = if s == 0 { None } else { hay.get(s - 1) };
        !is_word_char(before) && !is_word_char(hay.get(s + needle.len()))
    });
    bounded.or_else(|| candidates.first().copied())
}

/// Finds each taggable value in the utterance by substring match. Spans
/// come back in value order; earlier values claim earlier occurrences.
pub fn tag_spans(annotation: &TurnAnnotation, utterance: &str) -> SpanTagging {
    let hay: Vec<char> = utterance.chars().collect();
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut found = Vec::new();
    let mut missing = Vec::new();
    for (slot, value) in taggable_values(annotation) {
        let needle: Vec<char> = value.chars().collect();
        match find_free(&hay, &needle, &taken) {
            Some(start) => {
                let end = start + needle.len();
                taken.push((start, end));
                found.push(SlotSpan {
                    slot,
                    start,
                    end,
                    value,
                });
            }
            None => {
                if !missing.contains(&slot) {
                    missing.push(slot);
                }
            }
        }
    }
    if missing.is_empty() {
        SpanTagging::Complete(found)
    } else {
        SpanTagging::MissingSlots { found, missing }
    }
}

/// Spans from two agreeing span fixes, with values set to the marked text.
/// `None` when fewer than two workers agree or the marking is invalid.
fn agreed_fix(utterance: &str, fixes: &[&SpanFix]) -> Option<Vec<SlotSpan>> {
    let chars: Vec<char> = utterance.chars().collect();
    let normalize = |fix: &SpanFix| -> Option<Vec<SlotSpan>> {
        let mut spans: Vec<SlotSpan> = fix
            .spans
            .iter()
            .map(|s| {
                (s.start <= s.end && s.end <= chars.len()).then(|| SlotSpan {
                    slot: s.slot.clone(),
                    start: s.start,
                    end: s.end,
                    value: chars[s.start..s.end].iter().collect(),
                })
            })
            .collect::<Option<_>>()?;
        spans.sort_by(|a, b| (a.start, a.end, &a.slot).cmp(&(b.start, b.end, &b.slot)));
        Some(spans)
    };
    for (i, a) in fixes.iter().enumerate() {
        for b in &fixes[i + 1..] {
            if a.worker_id == b.worker_id {
                continue;
            }
            let (Some(x), Some(y)) = (normalize(a), normalize(b)) else {
                continue;
            };
            if x == y && x.iter().all(|s| s.start < s.end) {
                return Some(x);
            }
        }
    }
    None
}

/// Combines automatic spans with agreed manual ones for the missing slots,
/// ordered like [`taggable_values`].
pub fn complete_spans(
    annotation: &TurnAnnotation,
    utterance: &str,
    fixes: &[&SpanFix],
) -> Option<Vec<SlotSpan>> {
    match tag_spans(annotation, utterance) {
        SpanTagging::Complete(spans) => Some(spans),
        SpanTagging::MissingSlots { found, missing } => {
            let manual = agreed_fix(utterance, fixes)?;
            let values = taggable_values(annotation);
            let mut auto = found
                .into_iter()
                .filter(|s| !missing.contains(&s.slot))
                .peekable();
            let mut manual_by_slot: HashMap<&str, Vec<&SlotSpan>> = HashMap::new();
            for s in &manual {
                manual_by_slot.entry(s.slot.as_str()).or_default().push(s);
            }
            for list in manual_by_slot.values_mut() {
                list.reverse();
            }
            let mut out = Vec::with_capacity(values.len());
            for (slot, value) in &values {
                if missing.contains(slot) {
                    out.push((*manual_by_slot.get_mut(slot.as_str())?.pop()?).clone());
                    continue;
                }
                match auto.peek() {
                    Some(s) if &s.slot == slot && s.value.eq_ignore_ascii_case(value) => {
                        out.push(auto.next().expect("peeked"));
                    }
                    _ => return None,
                }
            }
            spans_valid(utterance, &out).then_some(out)
        }
    }
}

/// A validated, tagged utterance stored for reuse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapEntry {
    pub utterance: String,
    pub spans: Vec<SlotSpan>,
    /// Key including values, for exact reuse.
    pub strict_key: String,
    pub frames: Vec<Frame>,
}

/// Canonical annotation key to the utterances realizing it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseMap {
    pub entries: BTreeMap<String, Vec<MapEntry>>,
}

impl ParaphraseMap {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn get(&self, key: &str) -> &[MapEntry] {
        self.entries.get(key).map_or(&[], Vec::as_slice)
    }

    /// Adds an utterance unless the same (strict key, utterance) is stored.
    pub fn insert(&mut self, annotation: &TurnAnnotation, utterance: &str, spans: Vec<SlotSpan>) {
        let strict_key = annotation.strict_key();
        let list = self.entries.entry(annotation.canonical_key()).or_default();
        if list
            .iter()
            .any(|e| e.strict_key == strict_key && e.utterance == utterance)
        {
            return;
        }
        list.push(MapEntry {
            utterance: utterance.to_string(),
            spans,
            strict_key,
            frames: annotation.frames.clone(),
        });
    }
}

/// Losses by cause. `dialogues_in == dialogues_out + sum(causes)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    pub dialogues_in: usize,
    pub dialogues_out: usize,
    pub causes: BTreeMap<String, usize>,
}

impl DropReport {
    pub fn dropped(&self) -> usize {
        self.causes.values().sum()
    }

    fn record(&mut self, cause: &str) {
        *self.causes.entry(cause.to_string()).or_default() += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finalized {
    pub dialogues: Vec<Dialogue>,
    pub map: ParaphraseMap,
    pub report: DropReport,
}

/// Outcome of one rewritten turn.
enum TurnFate {
    Survives(Vec<SlotSpan>),
    Lost(&'static str),
}

fn judge_turn(
    rewrite: &Rewrite,
    turn: usize,
    annotation: &TurnAnnotation,
    votes: &HashMap<UtteranceRef, Vec<&ValidationVote>>,
    fixes: &HashMap<UtteranceRef, Vec<&SpanFix>>,
) -> Result<TurnFate, CrowdError> {
    let key = UtteranceRef {
        task_id: rewrite.task_id.clone(),
        turn,
    };
    if rewrite.origin == RewriteOrigin::Crowd {
        let cast: Vec<ValidationVote> = votes
            .get(&key)
            .map(|v| v.iter().map(|v| (*v).clone()).collect())
            .unwrap_or_default();
        if cast.len() != 2 {
            return Ok(TurnFate::Lost(DROP_UNVALIDATED));
        }
        if apply_validation(&cast)? == Verdict::Drop {
            return Ok(TurnFate::Lost(DROP_MEANING));
        }
    }
    let utterance = &rewrite.utterances[turn];
    let marked = fixes.get(&key).map(Vec::as_slice).unwrap_or(&[]);
    Ok(match complete_spans(annotation, utterance, marked) {
        Some(spans) => TurnFate::Survives(spans),
        None => TurnFate::Lost(DROP_SPANS),
    })
}

/// Applies validation and span rules to every rewrite. Each rewrite whose
/// turns all survive becomes a dialogue; every surviving utterance, even
/// from a dropped dialogue, enters the paraphrase map.
pub fn finalize(
    outlines: &[Outline],
    tasks: &[ParaphraseTask],
    rewrites: &[Rewrite],
    votes: &[ValidationVote],
    fixes: &[SpanFix],
) -> Result<Finalized, CrowdError> {
    let outline_by_id: HashMap<&str, &Outline> = outlines.iter().map(|o| (o.id.as_str(), o)).collect();
    let task_by_id: HashMap<&str, &ParaphraseTask> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let rewritten: HashSet<&str> = rewrites.iter().map(|r| r.task_id.as_str()).collect();

    let mut vote_index: HashMap<UtteranceRef, Vec<&ValidationVote>> = HashMap::new();
    for v in votes {
        if !rewritten.contains(v.utterance.task_id.as_str()) {
            return Err(CrowdError::DanglingReference(format!("task `{}` in a vote", v.utterance.task_id)));
        }
        vote_index.entry(v.utterance.clone()).or_default().push(v);
    }
    let mut fix_index: HashMap<UtteranceRef, Vec<&SpanFix>> = HashMap::new();
    for f in fixes {
        if !rewritten.contains(f.utterance.task_id.as_str()) {
            return Err(CrowdError::DanglingReference(format!("task `{}` in a span fix", f.utterance.task_id)));
        }
        fix_index.entry(f.utterance.clone()).or_default().push(f);
    }

    let mut seen_tasks = HashSet::new();
    let mut out = Finalized {
        dialogues: Vec::new(),
        map: ParaphraseMap::default(),
        report: DropReport::default(),
    };
    for rewrite in rewrites {
        if !seen_tasks.insert(rewrite.task_id.as_str()) {
            return Err(CrowdError::DuplicateRewrite(rewrite.task_id.clone()));
        }
        let task = task_by_id
            .get(rewrite.task_id.as_str())
            .ok_or_else(|| CrowdError::DanglingReference(format!("task `{}`", rewrite.task_id)))?;
        let outline = outline_by_id
            .get(task.outline_ref.as_str())
            .ok_or_else(|| CrowdError::DanglingReference(format!("outline `{}`", task.outline_ref)))?;
        rewrite.check(outline.turns.len())?;
        out.report.dialogues_in += 1;

        let mut turns = Vec::with_capacity(outline.turns.len());
        let mut lost: Option<&'static str> = None;
        for (i, turn) in outline.turns.iter().enumerate() {
            match judge_turn(rewrite, i, &turn.annotation, &vote_index, &fix_index)? {
                TurnFate::Survives(spans) => {
                    out.map.insert(&turn.annotation, &rewrite.utterances[i], spans.clone());
                    turns.push(DialogueTurn {
                        utterance: rewrite.utterances[i].clone(),
                        spans,
                        annotation: turn.annotation.clone(),
                    });
                }
                TurnFate::Lost(cause) => {
                    lost.get_or_insert(cause);
                }
            }
        }
        match lost {
            Some(cause) => out.report.record(cause),
            None => {
                out.report.dialogues_out += 1;
                out.dialogues.push(Dialogue {
                    id: rewrite.task_id.clone(),
                    outline_ref: outline.id.clone(),
                    turns,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{OutlineTurn, SlotValue, Speaker};
    use crate::fixtures;
    use crate::rng::seeded;
    use crate::selfplay::run_episode;

    fn user(frames: Vec<Frame>) -> TurnAnnotation {
        TurnAnnotation::new(Speaker::User, frames)
    }

    fn vote(task: &str, turn: usize, worker: &str, yes: bool) -> ValidationVote {
        ValidationVote {
            utterance: UtteranceRef {
                task_id: task.into(),
                turn,
            },
            worker_id: worker.into(),
            same_meaning: yes,
        }
    }

    fn sample_outline() -> Outline {
        let scenario = fixtures::two_task_scenario();
        let specs = [fixtures::showtimes_spec(), fixtures::dining_spec()];
        run_episode(&scenario, &specs, 30, &mut seeded(2))
    }

    #[test]
    fn tags_evening_in_paraphrase() {
        let a = user(vec![Frame::new(DialogueAct::Inform).with("time", "evening")]);
        let utterance = "Anytime during the evening works for me.";
        match tag_spans(&a, utterance) {
            SpanTagging::Complete(spans) => {
                assert_eq!(spans.len(), 1);
                assert_eq!((spans[0].start, spans[0].end), (19, 26));
                assert!(spans_valid(utterance, &spans));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_value_is_reported() {
        let a = user(vec![Frame::new(DialogueAct::Inform).with("time", "between 5pm and 8pm")]);
        assert_eq!(
            tag_spans(&a, "some time in the evening"),
            SpanTagging::MissingSlots {
                found: vec![],
                missing: vec!["time".into()]
            }
        );
    }

    #[test]
    fn slotless_turns_have_no_spans() {
        let a = TurnAnnotation::new(Speaker::System, vec![Frame::new(DialogueAct::Greeting)]);
        assert_eq!(tag_spans(&a, "Hi there"), SpanTagging::Complete(vec![]));
    }

    #[test]
    fn shared_values_go_to_earlier_slots_first() {
        let a = user(vec![Frame::new(DialogueAct::Inform)
            .with("num_people", "2")
            .with("num_tickets", "2")]);
        let SpanTagging::Complete(spans) = tag_spans(&a, "2 people and 2 tickets") else {
            panic!()
        };
        assert_eq!((spans[0].slot.as_str(), spans[0].start), ("num_people", 0));
        assert_eq!((spans[1].slot.as_str(), spans[1].start), ("num_tickets", 13));
    }

    #[test]
    fn word_boundaries_are_preferred() {
        let a = user(vec![Frame::new(DialogueAct::Inform)
            .with("num_people", "2")
            .with("time", "12pm")]);
        let SpanTagging::Complete(spans) = tag_spans(&a, "at 12pm for 2") else {
            panic!()
        };
        assert_eq!(spans[0].start, 12);
        assert_eq!(spans[1].start, 3);
    }

    #[test]
    fn select_sets_are_tagged_per_member() {
        let a = TurnAnnotation::new(
            Speaker::System,
            vec![Frame::new(DialogueAct::Select)
                .with("restaurant", SlotValue::Set(vec!["First Wok".into(), "Lucy's Grill".into()]))],
        );
        let SpanTagging::Complete(spans) = tag_spans(&a, "First Wok or Lucy's Grill?") else {
            panic!()
        };
        assert_eq!(spans.len(), 2);
    }

    #[test]
    fn vote_table() {
        let cases = [
            (true, true, Verdict::Keep),
            (true, false, Verdict::Drop),
            (false, true, Verdict::Drop),
            (false, false, Verdict::Drop),
        ];
        for (a, b, expected) in cases {
            let votes = [vote("t", 0, "w1", a), vote("t", 0, "w2", b)];
            assert_eq!(apply_validation(&votes).unwrap(), expected);
        }
        assert_eq!(
            apply_validation(&[vote("t", 0, "w1", true)]),
            Err(CrowdError::WrongVoteCount(1))
        );
        assert!(matches!(
            apply_validation(&[vote("t", 0, "w1", true), vote("t", 0, "w1", true)]),
            Err(CrowdError::DuplicateVoter(_))
        ));
    }

    #[test]
    fn tasks_replicate_whole_outlines() {
        let outline = sample_outline();
        let tasks = make_tasks(std::slice::from_ref(&outline), 2);
        assert_eq!(tasks.len(), 2);
        assert_ne!(tasks[0].task_id, tasks[1].task_id);
        assert_eq!(tasks[0].turns.len(), outline.turns.len());
        assert_eq!(make_tasks(std::slice::from_ref(&outline), 1).len(), 1);
    }

    #[test]
    fn auto_rewrites_finalize_without_drops() {
        let outline = sample_outline();
        let tasks = make_tasks(std::slice::from_ref(&outline), 1);
        let rewrite = auto_paraphrase(&outline, &tasks[0].task_id);
        let done = finalize(std::slice::from_ref(&outline), &tasks, &[rewrite], &[], &[]).unwrap();
        assert_eq!(done.dialogues.len(), 1);
        assert_eq!(done.report.dropped(), 0);
        let keys: HashSet<String> = outline.key_sequence().into_iter().collect();
        assert_eq!(done.map.entries.len(), keys.len());
        for turn in &done.dialogues[0].turns {
            assert!(spans_valid(&turn.utterance, &turn.spans));
        }
    }

    fn tiny_outline() -> Outline {
        let mut outline = sample_outline();
        outline.turns.truncate(4);
        outline
    }

    fn crowd_rewrite(task: &str, outline: &Outline) -> Rewrite {
        Rewrite {
            task_id: task.into(),
            worker_id: "w0".into(),
            utterances: outline.turns.iter().map(|t| t.template.clone()).collect(),
            origin: RewriteOrigin::Crowd,
        }
    }

    #[test]
    fn a_voted_down_turn_drops_the_dialogue() {
        let outline = tiny_outline();
        let tasks = make_tasks(std::slice::from_ref(&outline), 1);
        let id = tasks[0].task_id.clone();
        let rewrite = crowd_rewrite(&id, &outline);
        let mut votes = Vec::new();
        for turn in 0..4 {
            votes.push(vote(&id, turn, "a", true));
            votes.push(vote(&id, turn, "b", turn != 2));
        }
        let done = finalize(&[outline], &tasks, &[rewrite], &votes, &[]).unwrap();
        assert!(done.dialogues.is_empty());
        assert_eq!(done.report.causes.get(DROP_MEANING), Some(&1));
        assert_eq!(done.report.dialogues_in, done.report.dialogues_out + done.report.dropped());
        // The three surviving turns still enter the map.
        assert_eq!(done.map.len(), 3);
    }

    #[test]
    fn span_fixes_need_two_agreeing_workers() {
        let mut outline = tiny_outline();
        outline.turns[3] = OutlineTurn {
            template: "Time is between 5pm and 8pm.".into(),
            annotation: user(vec![Frame::new(DialogueAct::Inform).with("time", "between 5pm and 8pm")]),
        };
        let tasks = make_tasks(std::slice::from_ref(&outline), 1);
        let id = tasks[0].task_id.clone();
        let mut rewrite = crowd_rewrite(&id, &outline);
        rewrite.utterances[3] = "some time in the evening".into();
        let mut votes = Vec::new();
        for turn in 0..4 {
            votes.push(vote(&id, turn, "a", true));
            votes.push(vote(&id, turn, "b", true));
        }
        let fix = |worker: &str, end: usize| SpanFix {
            utterance: UtteranceRef {
                task_id: id.clone(),
                turn: 3,
            },
            worker_id: worker.into(),
            spans: vec![SlotSpan {
                slot: "time".into(),
                start: 13,
                end,
                value: String::new(),
            }],
        };
        let disagree = [fix("a", 24), fix("b", 16)];
        let done = finalize(&[outline.clone()], &tasks, &[rewrite.clone()], &votes, &disagree).unwrap();
        assert_eq!(done.report.causes.get(DROP_SPANS), Some(&1));

        let agree = [fix("a", 24), fix("b", 24)];
        let done = finalize(&[outline], &tasks, &[rewrite], &votes, &agree).unwrap();
        assert_eq!(done.dialogues.len(), 1);
        let span = &done.dialogues[0].turns[3].spans[0];
        assert_eq!(span.value, "the evening");
    }

    #[test]
    fn missing_votes_count_as_unvalidated() {
        let outline = tiny_outline();
        let tasks = make_tasks(std::slice::from_ref(&outline), 1);
        let rewrite = crowd_rewrite(&tasks[0].task_id, &outline);
        let done = finalize(&[outline], &tasks, &[rewrite], &[], &[]).unwrap();
        assert_eq!(done.report.causes.get(DROP_UNVALIDATED), Some(&1));
    }

    #[test]
    fn dangling_references_are_errors() {
        let outline = tiny_outline();
        let tasks = make_tasks(std::slice::from_ref(&outline), 1);
        let rewrite = auto_paraphrase(&outline, "nope");
        assert!(matches!(
            finalize(std::slice::from_ref(&outline), &tasks, &[rewrite], &[], &[]),
            Err(CrowdError::DanglingReference(_))
        ));
        let rewrite = auto_paraphrase(&outline, &tasks[0].task_id);
        let stray = vote("elsewhere", 0, "a", true);
        assert!(matches!(
            finalize(&[outline], &tasks, &[rewrite], &[stray], &[]),
            Err(CrowdError::DanglingReference(_))
        ));
    }

    #[test]
    fn malformed_rewrites_are_rejected() {
        let outline = tiny_outline();
        let mut rewrite = auto_paraphrase(&outline, "t");
        rewrite.utterances.pop();
        assert!(rewrite.check(4).is_err());
        rewrite.utterances.push("  ".into());
        assert!(rewrite.check(4).is_err());
    }
}
