//! Local crowd task service. Hands out paraphrase, validation, span and
//! rating tasks, checks submissions with the same rules finalization uses,
//! and persists accepted submissions to append-only logs.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dialogen_core::crowd::{
    apply_validation, complete_spans, finalize, make_tasks, tag_spans, taggable_values, DropReport,
    Finalized, ParaphraseTask, Rewrite, RewriteOrigin, SpanFix, SpanTagging, UtteranceRef,
    ValidationVote, Verdict,
};
use dialogen_core::dialogue::{Outline, SlotSpan, Speaker};
use dialogen_core::metrics::{compute_report, MetricsError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::io::{read_jsonl, replay_jsonl, write_jsonl, AppendLog, IoError};
use crate::ratings::{check_scores, dimensions, summarize, Rating, RATERS_PER_TURN};

pub const OUTLINES_FILE: &str = "outlines.jsonl";
pub const TASKS_FILE: &str = "tasks.jsonl";
pub const REWRITES_LOG: &str = "rewrites.jsonl";
pub const VOTES_LOG: &str = "votes.jsonl";
pub const SPANS_LOG: &str = "spans.jsonl";
pub const RATINGS_LOG: &str = "ratings.jsonl";

/// Span markings accepted per utterance while no two of them agree.
pub const MAX_SPAN_FIXES: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("worker `{worker}` already submitted task `{task}`")]
    DuplicateSubmission { worker: String, task: String },
    #[error("task `{0}` is no longer open")]
    TaskClosed(String),
    #[error("malformed submission: {0}")]
    MalformedSubmission(String),
    #[error("no finalized dialogues yet")]
    EmptyCorpus,
    #[error(transparent)]
    Storage(#[from] IoError),
    #[error("state is inconsistent: {0}")]
    Corrupt(String),
}

impl ServiceError {
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::UnknownTask(_) => "UnknownTask",
            ServiceError::DuplicateSubmission { .. } => "DuplicateSubmission",
            ServiceError::TaskClosed(_) => "TaskClosed",
            ServiceError::MalformedSubmission(_) => "MalformedSubmission",
            ServiceError::EmptyCorpus => "EmptyCorpus",
            ServiceError::Storage(_) => "Storage",
            ServiceError::Corrupt(_) => "Corrupt",
        }
    }

    fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownTask(_) | ServiceError::EmptyCorpus => StatusCode::NOT_FOUND,
            ServiceError::DuplicateSubmission { .. } | ServiceError::TaskClosed(_) => StatusCode::CONFLICT,
            ServiceError::MalformedSubmission(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Storage(_) | ServiceError::Corrupt(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.kind(), "detail": self.to_string()});
        (self.status(), Json(body)).into_response()
    }
}

fn malformed(detail: impl Into<String>) -> ServiceError {
    ServiceError::MalformedSubmission(detail.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Paraphrase,
    Validate,
    Span,
    Rate,
}

/// A worker's answer to one task. Validation, span and rating task ids are
/// `<rewrite or dialogue id>#<turn>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Submission {
    Paraphrase {
        task_id: String,
        worker_id: String,
        utterances: Vec<String>,
    },
    Validate {
        task_id: String,
        worker_id: String,
        same_meaning: bool,
    },
    Span {
        task_id: String,
        worker_id: String,
        spans: Vec<SlotSpan>,
    },
    Rate {
        task_id: String,
        worker_id: String,
        scores: BTreeMap<String, u8>,
    },
}

/// A submission that passed every check, in its log form.
#[derive(Debug, Clone, PartialEq)]
pub enum Accepted {
    Rewrite(Rewrite),
    Vote(ValidationVote),
    Fix(SpanFix),
    Rating(Rating),
}

pub fn turn_task_id(base: &str, turn: usize) -> String {
    format!("{base}#{turn}")
}

fn parse_turn_task(task_id: &str) -> Result<(&str, usize), ServiceError> {
    task_id
        .rsplit_once('#')
        .and_then(|(base, turn)| Some((base, turn.parse().ok()?)))
        .ok_or_else(|| ServiceError::UnknownTask(task_id.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnLine {
    pub index: usize,
    pub speaker: Speaker,
    pub template: String,
}

fn turn_lines(outline: &Outline) -> Vec<TurnLine> {
    outline
        .turns
        .iter()
        .enumerate()
        .map(|(index, turn)| TurnLine {
            index,
            speaker: turn.annotation.speaker,
            template: turn.template.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectedValue {
    pub slot: String,
    pub value: String,
}

/// An open task as shown to a worker.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TaskView {
    Paraphrase {
        task_id: String,
        outline_ref: String,
        turns: Vec<TurnLine>,
    },
    /// The rewritten turn, shown with the outline's templates for context.
    Validate {
        task_id: String,
        utterance: UtteranceRef,
        speaker: Speaker,
        template: String,
        paraphrase: String,
        context: Vec<TurnLine>,
    },
    Span {
        task_id: String,
        utterance: UtteranceRef,
        text: String,
        found: Vec<SlotSpan>,
        missing: Vec<ExpectedValue>,
    },
    Rate {
        task_id: String,
        dialogue_id: String,
        turn: usize,
        speaker: Speaker,
        context: Vec<String>,
        utterance: String,
        dimensions: Vec<String>,
    },
}

/// In-memory pipeline state. All mutation goes through [`Board::check`]
/// followed by [`Board::apply`].
#[derive(Debug, Clone)]
pub struct Board {
    outlines: Vec<Outline>,
    outline_idx: HashMap<String, usize>,
    tasks: Vec<ParaphraseTask>,
    task_idx: HashMap<String, usize>,
    rewrites: Vec<Rewrite>,
    rewrite_idx: HashMap<String, usize>,
    votes: Vec<ValidationVote>,
    votes_by: HashMap<UtteranceRef, Vec<usize>>,
    fixes: Vec<SpanFix>,
    fixes_by: HashMap<UtteranceRef, Vec<usize>>,
    ratings: Vec<Rating>,
    ratings_by: HashMap<(String, usize), Vec<usize>>,
    finalized: Arc<Finalized>,
    dialogue_idx: HashMap<String, usize>,
}

impl Board {
    pub fn new(outlines: Vec<Outline>, tasks: Vec<ParaphraseTask>) -> Result<Self, ServiceError> {
        let outline_idx: HashMap<String, usize> =
            outlines.iter().enumerate().map(|(i, o)| (o.id.clone(), i)).collect();
        let task_idx: HashMap<String, usize> =
            tasks.iter().enumerate().map(|(i, t)| (t.task_id.clone(), i)).collect();
        if outline_idx.len() != outlines.len() || task_idx.len() != tasks.len() {
            return Err(ServiceError::Corrupt("duplicate outline or task id".into()));
        }
        if let Some(t) = tasks.iter().find(|t| !outline_idx.contains_key(&t.outline_ref)) {
            return Err(ServiceError::Corrupt(format!("task `{}` has no outline", t.task_id)));
        }
        let mut board = Board {
            outlines,
            outline_idx,
            tasks,
            task_idx,
            rewrites: Vec::new(),
            rewrite_idx: HashMap::new(),
            votes: Vec::new(),
            votes_by: HashMap::new(),
            fixes: Vec::new(),
            fixes_by: HashMap::new(),
            ratings: Vec::new(),
            ratings_by: HashMap::new(),
            finalized: Arc::new(Finalized {
                dialogues: Vec::new(),
                map: Default::default(),
                report: DropReport::default(),
            }),
            dialogue_idx: HashMap::new(),
        };
        board.refinalize();
        Ok(board)
    }

    fn refinalize(&mut self) {
        let f = finalize(&self.outlines, &self.tasks, &self.rewrites, &self.votes, &self.fixes)
            .expect("board only holds submissions that pass the crowd checks");
        self.dialogue_idx = f.dialogues.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
        self.finalized = Arc::new(f);
    }

    pub fn finalized(&self) -> Arc<Finalized> {
        Arc::clone(&self.finalized)
    }

    pub fn outlines(&self) -> &[Outline] {
        &self.outlines
    }

    pub fn tasks(&self) -> &[ParaphraseTask] {
        &self.tasks
    }

    pub fn rewrites(&self) -> &[Rewrite] {
        &self.rewrites
    }

    pub fn votes(&self) -> &[ValidationVote] {
        &self.votes
    }

    pub fn fixes(&self) -> &[SpanFix] {
        &self.fixes
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    fn outline_of(&self, rewrite: &Rewrite) -> &Outline {
        let task = &self.tasks[self.task_idx[&rewrite.task_id]];
        &self.outlines[self.outline_idx[&task.outline_ref]]
    }

    fn utterance(&self, task_id: &str) -> Result<(&Rewrite, UtteranceRef), ServiceError> {
        let (base, turn) = parse_turn_task(task_id)?;
        let rewrite = self
            .rewrite_idx
            .get(base)
            .map(|&i| &self.rewrites[i])
            .filter(|r| turn < r.utterances.len())
            .ok_or_else(|| ServiceError::UnknownTask(task_id.to_string()))?;
        Ok((rewrite, UtteranceRef { task_id: base.to_string(), turn }))
    }

    /// `None` while a crowd utterance still lacks two votes.
    pub fn verdict(&self, rewrite: &Rewrite, utterance: &UtteranceRef) -> Option<Verdict> {
        if rewrite.origin == RewriteOrigin::Auto {
            return Some(Verdict::Keep);
        }
        let idx = self.votes_by.get(utterance)?;
        let cast: Vec<ValidationVote> = idx.iter().map(|&i| self.votes[i].clone()).collect();
        apply_validation(&cast).ok()
    }

    /// Whether a kept utterance still needs manual spans.
    fn span_tagging(&self, rewrite: &Rewrite, turn: usize) -> SpanTagging {
        let annotation = &self.outline_of(rewrite).turns[turn].annotation;
        tag_spans(annotation, &rewrite.utterances[turn])
    }

    /// Whether two agreeing markings already complete the spans.
    fn spans_settled(&self, rewrite: &Rewrite, utterance: &UtteranceRef) -> bool {
        let annotation = &self.outline_of(rewrite).turns[utterance.turn].annotation;
        let marked: Vec<&SpanFix> = self
            .fixes_by
            .get(utterance)
            .map(|v| v.iter().map(|&i| &self.fixes[i]).collect())
            .unwrap_or_default();
        complete_spans(annotation, &rewrite.utterances[utterance.turn], &marked).is_some()
    }

    /// Validates a submission against current state without changing it.
    pub fn check(&self, submission: Submission) -> Result<Accepted, ServiceError> {
        match submission {
            Submission::Paraphrase { task_id, worker_id, utterances } => {
                let task = self
                    .task_idx
                    .get(&task_id)
                    .map(|&i| &self.tasks[i])
                    .ok_or_else(|| ServiceError::UnknownTask(task_id.clone()))?;
                require_worker(&worker_id)?;
                if let Some(&i) = self.rewrite_idx.get(&task_id) {
                    return Err(if self.rewrites[i].worker_id == worker_id {
                        ServiceError::DuplicateSubmission { worker: worker_id, task: task_id }
                    } else {
                        ServiceError::TaskClosed(task_id)
                    });
                }
                let rewrite = Rewrite {
                    task_id,
                    worker_id,
                    utterances,
                    origin: RewriteOrigin::Crowd,
                };
                rewrite.check(task.turns.len()).map_err(|e| malformed(e.to_string()))?;
                Ok(Accepted::Rewrite(rewrite))
            }
            Submission::Validate { task_id, worker_id, same_meaning } => {
                let (rewrite, utterance) = self.utterance(&task_id)?;
                require_worker(&worker_id)?;
                if rewrite.origin == RewriteOrigin::Auto {
                    return Err(ServiceError::TaskClosed(task_id));
                }
                let cast = self.votes_by.get(&utterance).map(Vec::as_slice).unwrap_or(&[]);
                if cast.iter().any(|&i| self.votes[i].worker_id == worker_id) {
                    return Err(ServiceError::DuplicateSubmission { worker: worker_id, task: task_id });
                }
                if cast.len() >= 2 {
                    return Err(ServiceError::TaskClosed(task_id));
                }
                Ok(Accepted::Vote(ValidationVote { utterance, worker_id, same_meaning }))
            }
            Submission::Span { task_id, worker_id, spans } => {
                let (rewrite, utterance) = self.utterance(&task_id)?;
                require_worker(&worker_id)?;
                if self.verdict(rewrite, &utterance) != Some(Verdict::Keep) {
                    return Err(ServiceError::TaskClosed(task_id));
                }
                let SpanTagging::MissingSlots { found, missing } = self.span_tagging(rewrite, utterance.turn) else {
                    return Err(ServiceError::TaskClosed(task_id));
                };
                let marked = self.fixes_by.get(&utterance).map(Vec::as_slice).unwrap_or(&[]);
                if marked.iter().any(|&i| self.fixes[i].worker_id == worker_id) {
                    return Err(ServiceError::DuplicateSubmission { worker: worker_id, task: task_id });
                }
                if marked.len() >= MAX_SPAN_FIXES || self.spans_settled(rewrite, &utterance) {
                    return Err(ServiceError::TaskClosed(task_id));
                }
                let text = &rewrite.utterances[utterance.turn];
                let annotation = &self.outline_of(rewrite).turns[utterance.turn].annotation;
                let spans = check_fix(text, &taggable_values(annotation), &found, &missing, spans)?;
                Ok(Accepted::Fix(SpanFix { utterance, worker_id, spans }))
            }
            Submission::Rate { task_id, worker_id, scores } => {
                let (dialogue_id, turn) = parse_turn_task(&task_id)?;
                let dialogue = self
                    .dialogue_idx
                    .get(dialogue_id)
                    .map(|&i| &self.finalized.dialogues[i])
                    .filter(|d| turn < d.turns.len())
                    .ok_or_else(|| ServiceError::UnknownTask(task_id.clone()))?;
                require_worker(&worker_id)?;
                let key = (dialogue_id.to_string(), turn);
                let given = self.ratings_by.get(&key).map(Vec::as_slice).unwrap_or(&[]);
                if given.iter().any(|&i| self.ratings[i].worker_id == worker_id) {
                    return Err(ServiceError::DuplicateSubmission { worker: worker_id, task: task_id });
                }
                if given.len() >= RATERS_PER_TURN {
                    return Err(ServiceError::TaskClosed(task_id));
                }
                check_scores(dialogue.turns[turn].annotation.speaker, &scores).map_err(malformed)?;
                Ok(Accepted::Rating(Rating {
                    dialogue_id: key.0,
                    turn,
                    worker_id,
                    scores,
                }))
            }
        }
    }

    pub fn apply(&mut self, accepted: Accepted) {
        match accepted {
            Accepted::Rewrite(r) => {
                self.rewrite_idx.insert(r.task_id.clone(), self.rewrites.len());
                if let Some(&i) = self.task_idx.get(&r.task_id) {
                    self.tasks[i].status = dialogen_core::crowd::TaskStatus::Submitted;
                }
                self.rewrites.push(r);
                self.refinalize();
            }
            Accepted::Vote(v) => {
                self.votes_by.entry(v.utterance.clone()).or_default().push(self.votes.len());
                self.votes.push(v);
                self.refinalize();
            }
            Accepted::Fix(f) => {
                self.fixes_by.entry(f.utterance.clone()).or_default().push(self.fixes.len());
                self.fixes.push(f);
                self.refinalize();
            }
            Accepted::Rating(r) => {
                self.ratings_by
                    .entry((r.dialogue_id.clone(), r.turn))
                    .or_default()
                    .push(self.ratings.len());
                self.ratings.push(r);
            }
        }
    }

    /// Accepts an automatic rewrite for an open task.
    pub fn check_auto(&self, rewrite: Rewrite) -> Result<Accepted, ServiceError> {
        let task = self
            .task_idx
            .get(&rewrite.task_id)
            .map(|&i| &self.tasks[i])
            .ok_or_else(|| ServiceError::UnknownTask(rewrite.task_id.clone()))?;
        if self.rewrite_idx.contains_key(&rewrite.task_id) {
            return Err(ServiceError::TaskClosed(rewrite.task_id));
        }
        rewrite.check(task.turns.len()).map_err(|e| malformed(e.to_string()))?;
        Ok(Accepted::Rewrite(rewrite))
    }

    /// First open task of `kind` that `worker` may take, in a fixed order.
    pub fn next_task(&self, kind: TaskKind, worker: &str) -> Option<TaskView> {
        match kind {
            TaskKind::Paraphrase => self
                .tasks
                .iter()
                .find(|t| !self.rewrite_idx.contains_key(&t.task_id))
                .map(|t| {
                    let outline = &self.outlines[self.outline_idx[&t.outline_ref]];
                    TaskView::Paraphrase {
                        task_id: t.task_id.clone(),
                        outline_ref: t.outline_ref.clone(),
                        turns: turn_lines(outline),
                    }
                }),
            TaskKind::Validate => self.crowd_utterances().find_map(|(r, u)| {
                let cast = self.votes_by.get(&u).map(Vec::as_slice).unwrap_or(&[]);
                let open = r.worker_id != worker
                    && cast.len() < 2
                    && cast.iter().all(|&i| self.votes[i].worker_id != worker);
                open.then(|| {
                    let outline = self.outline_of(r);
                    let turn = &outline.turns[u.turn];
                    TaskView::Validate {
                        task_id: turn_task_id(&u.task_id, u.turn),
                        speaker: turn.annotation.speaker,
                        template: turn.template.clone(),
                        paraphrase: r.utterances[u.turn].clone(),
                        context: turn_lines(outline),
                        utterance: u,
                    }
                })
            }),
            TaskKind::Span => self.all_utterances().find_map(|(r, u)| {
                if self.verdict(r, &u) != Some(Verdict::Keep) {
                    return None;
                }
                let SpanTagging::MissingSlots { found, missing } = self.span_tagging(r, u.turn) else {
                    return None;
                };
                let marked = self.fixes_by.get(&u).map(Vec::as_slice).unwrap_or(&[]);
                if marked.len() >= MAX_SPAN_FIXES
                    || marked.iter().any(|&i| self.fixes[i].worker_id == worker)
                    || self.spans_settled(r, &u)
                {
                    return None;
                }
                let annotation = &self.outline_of(r).turns[u.turn].annotation;
                let found: Vec<SlotSpan> = found.into_iter().filter(|s| !missing.contains(&s.slot)).collect();
                let missing = taggable_values(annotation)
                    .into_iter()
                    .filter(|(slot, _)| missing.contains(slot))
                    .map(|(slot, value)| ExpectedValue { slot, value })
                    .collect();
                Some(TaskView::Span {
                    task_id: turn_task_id(&u.task_id, u.turn),
                    text: r.utterances[u.turn].clone(),
                    found,
                    missing,
                    utterance: u,
                })
            }),
            TaskKind::Rate => self.finalized.dialogues.iter().find_map(|d| {
                (0..d.turns.len()).find_map(|turn| {
                    let given = self
                        .ratings_by
                        .get(&(d.id.clone(), turn))
                        .map(Vec::as_slice)
                        .unwrap_or(&[]);
                    let open = given.len() < RATERS_PER_TURN
                        && given.iter().all(|&i| self.ratings[i].worker_id != worker);
                    open.then(|| {
                        let speaker = d.turns[turn].annotation.speaker;
                        TaskView::Rate {
                            task_id: turn_task_id(&d.id, turn),
                            dialogue_id: d.id.clone(),
                            turn,
                            speaker,
                            context: d.turns[..turn].iter().map(|t| t.utterance.clone()).collect(),
                            utterance: d.turns[turn].utterance.clone(),
                            dimensions: dimensions(speaker).iter().map(|s| s.to_string()).collect(),
                        }
                    })
                })
            }),
        }
    }

    fn all_utterances(&self) -> impl Iterator<Item = (&Rewrite, UtteranceRef)> {
        self.rewrites.iter().flat_map(|r| {
            (0..r.utterances.len()).map(move |turn| {
                (
                    r,
                    UtteranceRef {
                        task_id: r.task_id.clone(),
                        turn,
                    },
                )
            })
        })
    }

    fn crowd_utterances(&self) -> impl Iterator<Item = (&Rewrite, UtteranceRef)> {
        self.all_utterances().filter(|(r, _)| r.origin == RewriteOrigin::Crowd)
    }

    pub fn status(&self) -> Status {
        let mut utterances = UtteranceCounts::default();
        let mut verdicts = BTreeMap::new();
        for (r, u) in self.crowd_utterances() {
            let verdict = self.verdict(r, &u);
            match verdict {
                Some(Verdict::Keep) => utterances.keep += 1,
                Some(Verdict::Drop) => utterances.drop += 1,
                None => utterances.pending += 1,
            }
            let label = match verdict {
                Some(Verdict::Keep) => "keep",
                Some(Verdict::Drop) => "drop",
                None => "pending",
            };
            verdicts.insert(turn_task_id(&u.task_id, u.turn), label.to_string());
        }
        let f = &self.finalized;
        Status {
            outlines: self.outlines.len(),
            tasks: self.tasks.len(),
            open_tasks: self.tasks.len() - self.rewrites.len(),
            rewrites: self.rewrites.len(),
            votes: self.votes.len(),
            span_fixes: self.fixes.len(),
            ratings: self.ratings.len(),
            utterances,
            verdicts,
            dialogues: f.dialogues.len(),
            map_utterances: f.map.len(),
            drops: f.report.clone(),
        }
    }
}

fn require_worker(worker: &str) -> Result<(), ServiceError> {
    if worker.trim().is_empty() {
        Err(malformed("worker_id is empty"))
    } else {
        Ok(())
    }
}

/// A span marking must cover exactly the values tagging missed, within the
/// utterance, without overlapping each other or the automatic spans.
fn check_fix(
    text: &str,
    values: &[(String, String)],
    found: &[SlotSpan],
    missing: &[String],
    spans: Vec<SlotSpan>,
) -> Result<Vec<SlotSpan>, ServiceError> {
    let len = text.chars().count();
    let mut expected: Vec<&str> = values
        .iter()
        .filter(|(slot, _)| missing.contains(slot))
        .map(|(slot, _)| slot.as_str())
        .collect();
    let mut given: Vec<&str> = spans.iter().map(|s| s.slot.as_str()).collect();
    expected.sort_unstable();
    given.sort_unstable();
    if expected != given {
        return Err(malformed(format!(
            "expected spans for [{}], got [{}]",
            expected.join(", "),
            given.join(", ")
        )));
    }
    let chars: Vec<char> = text.chars().collect();
    let spans: Vec<SlotSpan> = spans
        .into_iter()
        .map(|s| {
            if s.start >= s.end || s.end > len {
                return Err(malformed(format!("span {}..{} for {} is outside the utterance", s.start, s.end, s.slot)));
            }
            Ok(SlotSpan {
                value: chars[s.start..s.end].iter().collect(),
                ..s
            })
        })
        .collect::<Result<_, _>>()?;
    let kept = found.iter().filter(|s| !missing.contains(&s.slot));
    let mut ranges: Vec<(usize, usize)> = spans.iter().chain(kept).map(|s| (s.start, s.end)).collect();
    ranges.sort_unstable();
    if ranges.windows(2).any(|w| w[0].1 > w[1].0) {
        return Err(malformed("spans overlap"));
    }
    Ok(spans)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceCounts {
    pub pending: usize,
    pub keep: usize,
    pub drop: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Status {
    pub outlines: usize,
    pub tasks: usize,
    pub open_tasks: usize,
    pub rewrites: usize,
    pub votes: usize,
    pub span_fixes: usize,
    pub ratings: usize,
    /// Crowd-written utterances by validation outcome.
    pub utterances: UtteranceCounts,
    /// `<task>#<turn>` to keep, drop or pending.
    pub verdicts: BTreeMap<String, String>,
    pub dialogues: usize,
    pub map_utterances: usize,
    pub drops: DropReport,
}

struct Logs {
    rewrites: AppendLog,
    votes: AppendLog,
    spans: AppendLog,
    ratings: AppendLog,
}

/// The board plus its on-disk logs. Each accepted submission is written to
/// its log before it changes the board.
pub struct Service {
    board: Board,
    logs: Logs,
    dir: PathBuf,
}

/// Writes the outlines and `k` paraphrase tasks per outline into a fresh
/// state directory with empty logs.
pub fn init_state(dir: &Path, outlines: &[Outline], k: usize) -> Result<Vec<ParaphraseTask>, IoError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::Fs {
        path: dir.to_path_buf(),
        source,
    })?;
    let tasks = make_tasks(outlines, k);
    write_jsonl(&dir.join(OUTLINES_FILE), outlines)?;
    write_jsonl(&dir.join(TASKS_FILE), &tasks)?;
    for log in [REWRITES_LOG, VOTES_LOG, SPANS_LOG, RATINGS_LOG] {
        write_jsonl::<Value>(&dir.join(log), &[])?;
    }
    Ok(tasks)
}

impl Service {
    /// Loads outlines and tasks, then replays every log through the same
    /// checks live submissions pass.
    pub fn open(dir: &Path) -> Result<Self, ServiceError> {
        let outlines: Vec<Outline> = read_jsonl(&dir.join(OUTLINES_FILE))?;
        let tasks: Vec<ParaphraseTask> = read_jsonl(&dir.join(TASKS_FILE))?;
        let mut board = Board::new(outlines, tasks)?;
        let replay_err = |log: &str, e: ServiceError| ServiceError::Corrupt(format!("{log}: {e}"));
        for r in replay_jsonl::<Rewrite>(&dir.join(REWRITES_LOG))? {
            let accepted = match r.origin {
                RewriteOrigin::Auto => board.check_auto(r),
                RewriteOrigin::Crowd => board.check(Submission::Paraphrase {
                    task_id: r.task_id,
                    worker_id: r.worker_id,
                    utterances: r.utterances,
                }),
            }
            .map_err(|e| replay_err(REWRITES_LOG, e))?;
            board.apply(accepted);
        }
        for v in replay_jsonl::<ValidationVote>(&dir.join(VOTES_LOG))? {
            let accepted = board
                .check(Submission::Validate {
                    task_id: turn_task_id(&v.utterance.task_id, v.utterance.turn),
                    worker_id: v.worker_id,
                    same_meaning: v.same_meaning,
                })
                .map_err(|e| replay_err(VOTES_LOG, e))?;
            board.apply(accepted);
        }
        for f in replay_jsonl::<SpanFix>(&dir.join(SPANS_LOG))? {
            let accepted = board
                .check(Submission::Span {
                    task_id: turn_task_id(&f.utterance.task_id, f.utterance.turn),
                    worker_id: f.worker_id,
                    spans: f.spans,
                })
                .map_err(|e| replay_err(SPANS_LOG, e))?;
            board.apply(accepted);
        }
        for r in replay_jsonl::<Rating>(&dir.join(RATINGS_LOG))? {
            let accepted = board
                .check(Submission::Rate {
                    task_id: turn_task_id(&r.dialogue_id, r.turn),
                    worker_id: r.worker_id,
                    scores: r.scores,
                })
                .map_err(|e| replay_err(RATINGS_LOG, e))?;
            board.apply(accepted);
        }
        let logs = Logs {
            rewrites: AppendLog::open(&dir.join(REWRITES_LOG))?,
            votes: AppendLog::open(&dir.join(VOTES_LOG))?,
            spans: AppendLog::open(&dir.join(SPANS_LOG))?,
            ratings: AppendLog::open(&dir.join(RATINGS_LOG))?,
        };
        Ok(Service {
            board,
            logs,
            dir: dir.to_path_buf(),
        })
    }

    pub fn board(&self) -> &Board {
        &self.board
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn submit(&mut self, submission: Submission) -> Result<(), ServiceError> {
        let accepted = self.board.check(submission)?;
        self.commit(accepted)
    }

    /// Records identity rewrites for every task that has none yet.
    pub fn auto_paraphrase_open(&mut self) -> Result<usize, ServiceError> {
        let open: Vec<Rewrite> = self
            .board
            .tasks
            .iter()
            .filter(|t| !self.board.rewrite_idx.contains_key(&t.task_id))
            .map(|t| {
                let outline = &self.board.outlines[self.board.outline_idx[&t.outline_ref]];
                dialogen_core::crowd::auto_paraphrase(outline, &t.task_id)
            })
            .collect();
        let n = open.len();
        for r in open {
            let accepted = self.board.check_auto(r)?;
            self.commit(accepted)?;
        }
        Ok(n)
    }

    fn commit(&mut self, accepted: Accepted) -> Result<(), ServiceError> {
        match &accepted {
            Accepted::Rewrite(r) => self.logs.rewrites.append(r)?,
            Accepted::Vote(v) => self.logs.votes.append(v)?,
            Accepted::Fix(f) => self.logs.spans.append(f)?,
            Accepted::Rating(r) => self.logs.ratings.append(r)?,
        }
        self.board.apply(accepted);
        Ok(())
    }
}

pub type Shared = Arc<RwLock<Service>>;

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    #[serde(rename = "type")]
    pub kind: Option<String>,
    pub worker: Option<String>,
}

pub fn router(service: Service) -> Router {
    let shared: Shared = Arc::new(RwLock::new(service));
    Router::new()
        .route("/tasks/next", get(next_task))
        .route("/tasks/submit", post(submit))
        .route("/status", get(status))
        .route("/corpus", get(corpus))
        .route("/report", get(report))
        .route("/ratings/summary", get(rating_summary))
        .with_state(shared)
}

fn read(shared: &Shared) -> std::sync::RwLockReadGuard<'_, Service> {
    shared.read().unwrap_or_else(|e| e.into_inner())
}

async fn next_task(State(shared): State<Shared>, Query(q): Query<NextQuery>) -> Response {
    let kind = match q.kind.as_deref().map(|k| serde_json::from_value::<TaskKind>(Value::String(k.to_string()))) {
        Some(Ok(kind)) => kind,
        Some(Err(_)) | None => {
            return malformed("query parameter `type` must be paraphrase, validate, span or rate").into_response()
        }
    };
    let worker = q.worker.unwrap_or_default();
    match read(&shared).board.next_task(kind, &worker) {
        Some(view) => Json(view).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn submit(State(shared): State<Shared>, body: Result<Json<Submission>, JsonRejection>) -> Response {
    let Json(submission) = match body {
        Ok(b) => b,
        Err(e) => return malformed(e.body_text()).into_response(),
    };
    let mut service = shared.write().unwrap_or_else(|e| e.into_inner());
    match service.submit(submission) {
        Ok(()) => (StatusCode::CREATED, Json(json!({"accepted": true}))).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn status(State(shared): State<Shared>) -> Json<Status> {
    Json(read(&shared).board.status())
}

async fn corpus(State(shared): State<Shared>) -> Response {
    let finalized = read(&shared).board.finalized();
    Json(&finalized.dialogues).into_response()
}

async fn report(State(shared): State<Shared>) -> Response {
    let finalized = read(&shared).board.finalized();
    match compute_report(&finalized.dialogues) {
        Ok(r) => Json(r).into_response(),
        Err(MetricsError::EmptyCorpus) => ServiceError::EmptyCorpus.into_response(),
    }
}

async fn rating_summary(State(shared): State<Shared>) -> Response {
    Json(summarize(read(&shared).board.ratings())).into_response()
}

/// Serves until interrupted.
pub async fn serve(service: Service, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
