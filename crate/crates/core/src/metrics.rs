//! Corpus diversity statistics: token and bigram variety, and dialogue-flow
//! variety measured on value-free annotation keys.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dialogue::{Dialogue, DialogueAct, DialogueTurn, Frame, SlotValue, Speaker, TurnAnnotation};

/// Lowercases, keeps alphanumeric runs whole (an apostrophe between two
/// alphanumerics stays inside the run), and makes every other
/// non-whitespace character its own token.
pub fn tokenize(utterance: &str) -> Vec<String> {
    let chars: Vec<char> = utterance.chars().collect();
    let mut tokens = Vec::new();
    let mut word = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let inner_apostrophe = (c == '\'' || c == '\u{2019}')
            && !word.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() || inner_apostrophe {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub dialogues: usize,
    pub total_turns: usize,
    pub total_tokens: usize,
    pub avg_turns_per_dialogue: f64,
    pub avg_tokens_per_turn: f64,
    /// Unique unigrams over total tokens; 0 for a corpus without tokens.
    pub unique_token_ratio: f64,
    /// Unique bigrams over total tokens; bigrams do not cross utterances.
    pub unique_bigram_ratio: f64,
    /// Unique transitions over total turns.
    pub unique_transition_ratio: f64,
    /// Unique windows of 3 transitions over all such windows; `None` when
    /// no dialogue has 4 turns.
    pub unique_subdialogue_ratio_k3: Option<f64>,
    pub unique_subdialogue_ratio_k5: Option<f64>,
    pub unique_outline_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("corpus is empty")]
    EmptyCorpus,
}

/// Mergeable partial counts for one shard of a corpus.
#[derive(Debug, Clone, Default)]
pub struct Tally {
    dialogues: usize,
    turns: usize,
    tokens: usize,
    unigrams: HashSet<String>,
    bigrams: HashSet<(String, String)>,
    transitions: HashSet<(String, String)>,
    windows3: (usize, HashSet<Vec<String>>),
    windows5: (usize, HashSet<Vec<String>>),
    outlines: HashSet<Vec<String>>,
}

impl Tally {
    pub fn add(&mut self, dialogue: &Dialogue) {
        self.dialogues += 1;
        self.turns += dialogue.turns.len();
        for turn in &dialogue.turns {
            let tokens = tokenize(&turn.utterance);
            self.tokens += tokens.len();
            for pair in tokens.windows(2) {
                self.bigrams.insert((pair[0].clone(), pair[1].clone()));
            }
            self.unigrams.extend(tokens);
        }
        let keys = dialogue.key_sequence();
        for pair in keys.windows(2) {
            self.transitions.insert((pair[0].clone(), pair[1].clone()));
        }
        for (k, (total, seen)) in [(3, &mut self.windows3), (5, &mut self.windows5)] {
            for window in keys.windows(k + 1) {
                *total += 1;
                seen.insert(window.to_vec());
            }
        }
        self.outlines.insert(keys);
    }

    pub fn merge(mut self, other: Tally) -> Tally {
        self.dialogues += other.dialogues;
        self.turns += other.turns;
        self.tokens += other.tokens;
        self.unigrams.extend(other.unigrams);
        self.bigrams.extend(other.bigrams);
        self.transitions.extend(other.transitions);
        self.windows3.0 += other.windows3.0;
        self.windows3.1.extend(other.windows3.1);
        self.windows5.0 += other.windows5.0;
        self.windows5.1.extend(other.windows5.1);
        self.outlines.extend(other.outlines);
        self
    }

    pub fn report(&self) -> Result<DiversityReport, MetricsError> {
        if self.dialogues == 0 {
            return Err(MetricsError::EmptyCorpus);
        }
        let per = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let window = |(total, seen): &(usize, HashSet<Vec<String>>)| (*total > 0).then(|| per(seen.len(), *total));
        Ok(DiversityReport {
            dialogues: self.dialogues,
            total_turns: self.turns,
            total_tokens: self.tokens,
            avg_turns_per_dialogue: per(self.turns, self.dialogues),
            avg_tokens_per_turn: per(self.tokens, self.turns),
            unique_token_ratio: per(self.unigrams.len(), self.tokens),
            unique_bigram_ratio: per(self.bigrams.len(), self.tokens),
            unique_transition_ratio: per(self.transitions.len(), self.turns),
            unique_subdialogue_ratio_k3: window(&self.windows3),
            unique_subdialogue_ratio_k5: window(&self.windows5),
            unique_outline_ratio: per(self.outlines.len(), self.dialogues),
        })
    }

    pub fn distinct_transitions(&self) -> usize {
        self.transitions.len()
    }
}

pub fn compute_report(corpus: &[Dialogue]) -> Result<DiversityReport, MetricsError> {
    corpus
        .par_iter()
        .fold(Tally::default, |mut t, d| {
            t.add(d);
            t
        })
        .reduce(Tally::default, Tally::merge)
        .report()
}

impl DiversityReport {
    /// Aligned two-column text table, one row per statistic.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let rows = [
            ("Dialogues", self.dialogues.to_string()),
            ("Total turns", self.total_turns.to_string()),
            ("Total tokens", self.total_tokens.to_string()),
            ("Avg. turns per dialogue", format!("{:.2}", self.avg_turns_per_dialogue)),
            ("Avg. tokens per turn", format!("{:.2}", self.avg_tokens_per_turn)),
            ("Unique tokens / Total tokens", format!("{:.4}", self.unique_token_ratio)),
            ("Unique bigrams / Total tokens", format!("{:.4}", self.unique_bigram_ratio)),
            ("Unique transitions / Total turns", format!("{:.4}", self.unique_transition_ratio)),
            ("Unique subdialogues (k=3) / Total", opt(self.unique_subdialogue_ratio_k3)),
            ("Unique subdialogues (k=5) / Total", opt(self.unique_subdialogue_ratio_k5)),
            ("Unique full outlines / Total dialogues", format!("{:.4}", self.unique_outline_ratio)),
        ];
        let width = rows.iter().map(|(name, _)| name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (name, value) in rows {
            let _ = writeln!(out, "{name:<width$}  {value:>10}");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// JSON array or JSON Lines of [`Dialogue`].
    Native,
    /// DSTC2-style sessions of system `output` / user `input` pairs with
    /// lowercase act labels.
    Dstc2Like,
    /// Simulated-dialogue release format: turns with `system_acts`,
    /// `system_utterance`, `user_acts`, `user_utterance`.
    SimJson,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown corpus format `{0}` (expected native, dstc2_like or sim_json)")]
pub struct UnknownFormat(pub String);

impl FromStr for CorpusFormat {
    type Err = UnknownFormat;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "native" => Ok(CorpusFormat::Native),
            "dstc2_like" | "dstc2" => Ok(CorpusFormat::Dstc2Like),
            "sim_json" | "sim" => Ok(CorpusFormat::SimJson),
            _ => Err(UnknownFormat(s.to_string())),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ImportError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    UnknownFormat(#[from] UnknownFormat),
}

/// External act label to [`DialogueAct`], matched case-insensitively.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActMap(pub BTreeMap<String, DialogueAct>);

impl ActMap {
    pub fn dstc2() -> Self {
        use DialogueAct::*;
        let pairs = [
            ("welcomemsg", Greeting),
            ("hello", Greeting),
            ("inform", Inform),
            ("request", Request),
            ("reqalts", RequestAlts),
            ("offer", Offer),
            ("select", Select),
            ("confirm", Confirm),
            ("expl-conf", Confirm),
            ("impl-conf", Confirm),
            ("confirm-domain", Confirm),
            ("affirm", Affirm),
            ("ack", Affirm),
            ("negate", Negate),
            ("deny", Negate),
            ("canthelp", NotifyFailure),
            ("canthelp.exception", NotifyFailure),
            ("thankyou", ThankYou),
            ("bye", GoodBye),
        ];
        ActMap(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }

    /// The map first, then the act's own name; `None` if neither applies.
    pub fn lookup(&self, label: &str) -> Option<DialogueAct> {
        let label = label.trim().to_ascii_lowercase();
        self.0.get(&label).copied().or_else(|| label.parse().ok())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Imported {
    pub dialogues: Vec<Dialogue>,
    /// Unmappable act label to occurrence count; each became OTHER.
    pub unmapped: BTreeMap<String, usize>,
}

impl Imported {
    pub fn warnings(&self) -> usize {
        self.unmapped.values().sum()
    }
}

pub fn import_corpus(path: &Path, format: CorpusFormat, acts: &ActMap) -> Result<Imported, ImportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ImportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text, format, acts)
}

pub fn parse_corpus(text: &str, format: CorpusFormat, acts: &ActMap) -> Result<Imported, ImportError> {
    let parse = |e: serde_json::Error| ImportError::Parse(e.to_string());
    match format {
        CorpusFormat::Native => Ok(Imported {
            dialogues: parse_native(text).map_err(parse)?,
            unmapped: BTreeMap::new(),
        }),
        CorpusFormat::Dstc2Like => {
            let sessions: Vec<Dstc2Session> = serde_json::from_str(text).map_err(parse)?;
            let mut out = Imported::default();
            for s in sessions {
                let mut turns = Vec::new();
                for t in s.turns {
                    for (speaker, side) in [(Speaker::System, t.output), (Speaker::User, t.input)] {
                        if let Some(side) = side {
                            let frames = dstc2_frames(&side.dialog_acts, acts, &mut out.unmapped);
                            turns.push(plain_turn(speaker, side.transcript, frames));
                        }
                    }
                }
                out.dialogues.push(Dialogue {
                    id: s.session_id.clone(),
                    outline_ref: s.session_id,
                    turns,
                });
            }
            Ok(out)
        }
        CorpusFormat::SimJson => {
            let dialogues: Vec<SimDialogue> = serde_json::from_str(text).map_err(parse)?;
            let mut out = Imported::default();
            for d in dialogues {
                let mut turns = Vec::new();
                for t in d.turns {
                    let sides = [
                        (Speaker::System, t.system_utterance, t.system_acts),
                        (Speaker::User, t.user_utterance, t.user_acts),
                    ];
                    for (speaker, utterance, raw) in sides {
                        if let Some(u) = utterance {
                            let frames = sim_frames(&raw, acts, &mut out.unmapped);
                            turns.push(plain_turn(speaker, u.text, frames));
                        }
                    }
                }
                out.dialogues.push(Dialogue {
                    id: d.dialogue_id.clone(),
                    outline_ref: d.dialogue_id,
                    turns,
                });
            }
            Ok(out)
        }
    }
}

/// Native corpora are either one JSON array or one dialogue per line.
pub fn parse_native(text: &str) -> Result<Vec<Dialogue>, serde_json::Error> {
    if text.trim_start().starts_with('[') {
        serde_json::from_str(text)
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    }
}

fn plain_turn(speaker: Speaker, utterance: String, frames: Vec<Frame>) -> DialogueTurn {
    DialogueTurn {
        utterance,
        spans: Vec::new(),
        annotation: TurnAnnotation::new(speaker, frames),
    }
}

fn map_act(label: &str, acts: &ActMap, unmapped: &mut BTreeMap<String, usize>) -> DialogueAct {
    acts.lookup(label).unwrap_or_else(|| {
        *unmapped.entry(label.to_string()).or_default() += 1;
        DialogueAct::Other
    })
}

/// Adds a slot to the frame for `act`, creating it in first-seen order.
fn push_slot(frames: &mut Vec<Frame>, act: DialogueAct, slot: Option<String>) {
    let idx = match frames.iter().position(|f| f.act == act) {
        Some(i) => i,
        None => {
            frames.push(Frame::new(act));
            frames.len() - 1
        }
    };
    if let Some((name, value)) = slot.map(|s| split_slot(act, s)) {
        frames[idx].slots.insert(name, value);
    }
}

fn split_slot(act: DialogueAct, encoded: String) -> (String, SlotValue) {
    match encoded.split_once('\u{0}') {
        Some((name, value)) if act != DialogueAct::Request => (name.to_string(), SlotValue::single(value)),
        Some((name, _)) => (name.to_string(), SlotValue::single("")),
        None => (encoded, SlotValue::single("")),
    }
}

fn dstc2_frames(raw: &[Dstc2Act], acts: &ActMap, unmapped: &mut BTreeMap<String, usize>) -> Vec<Frame> {
    let mut frames = Vec::new();
    for a in raw {
        let act = map_act(&a.act, acts, unmapped);
        if a.slots.is_empty() {
            push_slot(&mut frames, act, None);
        }
        for pair in &a.slots {
            // A DSTC2 request names its slot as the pair's value: ["slot", "food"].
            let slot = match (act, pair.as_slice()) {
                (DialogueAct::Request, [_, name]) => name.clone(),
                (_, [name, value]) => format!("{name}\u{0}{value}"),
                (_, [name]) => name.clone(),
                _ => continue,
            };
            push_slot(&mut frames, act, Some(slot));
        }
    }
    frames
}

fn sim_frames(raw: &[SimAct], acts: &ActMap, unmapped: &mut BTreeMap<String, usize>) -> Vec<Frame> {
    let mut frames = Vec::new();
    for a in raw {
        let act = map_act(&a.kind, acts, unmapped);
        let slot = a.slot.as_ref().map(|s| match &a.value {
            Some(v) => format!("{s}\u{0}{v}"),
            None => s.clone(),
        });
        push_slot(&mut frames, act, slot);
    }
    frames
}

#[derive(Deserialize)]
struct Dstc2Session {
    #[serde(alias = "session-id")]
    session_id: String,
    turns: Vec<Dstc2Turn>,
}

#[derive(Deserialize)]
struct Dstc2Turn {
    output: Option<Dstc2Side>,
    input: Option<Dstc2Side>,
}

#[derive(Deserialize)]
struct Dstc2Side {
    transcript: String,
    #[serde(default, alias = "dialog-acts")]
    dialog_acts: Vec<Dstc2Act>,
}

#[derive(Deserialize)]
struct Dstc2Act {
    act: String,
    #[serde(default)]
    slots: Vec<Vec<String>>,
}

#[derive(Deserialize)]
struct SimDialogue {
    dialogue_id: String,
    turns: Vec<SimTurn>,
}

#[derive(Deserialize)]
struct SimTurn {
    #[serde(default)]
    system_acts: Vec<SimAct>,
    system_utterance: Option<SimUtterance>,
    #[serde(default)]
    user_acts: Vec<SimAct>,
    user_utterance: Option<SimUtterance>,
}

#[derive(Deserialize)]
struct SimUtterance {
    text: String,
}

#[derive(Deserialize)]
struct SimAct {
    #[serde(rename = "type")]
    kind: String,
    slot: Option<String>,
    value: Option<String>,
}
