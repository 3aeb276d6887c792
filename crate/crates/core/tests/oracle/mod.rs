//! Hand-built fixture dialogues and a brute-force recount of the diversity
//! report that shares no code with the library beyond the data types.

#![allow(dead_code)]

use dialogen_core::dialogue::{Dialogue, DialogueAct, DialogueTurn, Frame, Speaker, TurnAnnotation};
use dialogen_core::metrics::DiversityReport;

pub fn turn(speaker: Speaker, text: &str, frames: Vec<Frame>) -> DialogueTurn {
    DialogueTurn {
        utterance: text.to_string(),
        spans: Vec::new(),
        annotation: TurnAnnotation::new(speaker, frames),
    }
}

pub fn greet() -> DialogueTurn {
    turn(Speaker::System, "Hi, how can I help you?", vec![Frame::new(DialogueAct::Greeting)])
}

pub fn inform(slot: &str, value: &str, text: &str) -> DialogueTurn {
    turn(Speaker::User, text, vec![Frame::new(DialogueAct::Inform).with(slot, value)])
}

pub fn request(slot: &str, text: &str) -> DialogueTurn {
    turn(
        Speaker::System,
        text,
        vec![Frame::new(DialogueAct::Affirm), Frame::request([slot])],
    )
}

pub fn bye(text: &str) -> DialogueTurn {
    turn(
        Speaker::User,
        text,
        vec![Frame::new(DialogueAct::ThankYou), Frame::new(DialogueAct::GoodBye)],
    )
}

pub fn dialogue(id: &str, turns: Vec<DialogueTurn>) -> Dialogue {
    Dialogue {
        id: id.into(),
        outline_ref: id.into(),
        turns,
    }
}

/// Five hand-built dialogues: a 6-turn flow twice (different wording), a
/// 4-turn flow, a 7-turn flow and a single-turn dialogue.
pub fn fixture_corpus() -> Vec<Dialogue> {
    vec![
        dialogue(
            "d1",
            vec![
                greet(),
                inform("time", "6pm", "Dinner at 6pm, please."),
                request("date", "OK. Which day?"),
                inform("date", "friday", "Friday."),
                request("party", "Sure. How many people?"),
                bye("Thanks, bye!"),
            ],
        ),
        dialogue(
            "d2",
            vec![
                greet(),
                inform("time", "7pm", "I'd like 7pm."),
                request("date", "OK. Which day?"),
                inform("date", "monday", "Monday works."),
                request("party", "Great. For how many?"),
                bye("Thank you. Good bye."),
            ],
        ),
        dialogue(
            "d3",
            vec![
                greet(),
                inform("date", "friday", "Friday, please."),
                request("time", "What time?"),
                bye("Never mind, bye!"),
            ],
        ),
        dialogue(
            "d4",
            vec![
                greet(),
                inform("time", "6pm", "6pm."),
                request("date", "Which day?"),
                inform("date", "friday", "Friday."),
                request("date", "Which day again?"),
                inform("date", "friday", "Friday!"),
                bye("Bye."),
            ],
        ),
        dialogue("d5", vec![bye("bye")]),
    ]
}

/// Independent tokenizer: classify characters, glue letters/digits and
/// apostrophes between them.
pub fn oracle_tokens(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let cs: Vec<char> = lower.chars().collect();
    let mut out: Vec<String> = Vec::new();
    let mut i = 0;
    while i < cs.len() {
        let c = cs[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() {
            let mut j = i;
            while j < cs.len()
                && (cs[j].is_alphanumeric()
                    || (cs[j] == '\'' && j + 1 < cs.len() && cs[j + 1].is_alphanumeric()))
            {
                j += 1;
            }
            out.push(cs[i..j].iter().collect());
            i = j;
        } else {
            out.push(c.to_string());
            i += 1;
        }
    }
    out
}

pub fn key(t: &DialogueTurn) -> String {
    t.annotation.canonical_key()
}

pub fn count_unique<T: PartialEq>(items: &[T]) -> usize {
    let mut seen: Vec<&T> = Vec::new();
    for x in items {
        if !seen.contains(&x) {
            seen.push(x);
        }
    }
    seen.len()
}

pub fn brute_force(corpus: &[Dialogue]) -> DiversityReport {
    let mut tokens: Vec<String> = Vec::new();
    let mut bigrams: Vec<(String, String)> = Vec::new();
    let mut transitions: Vec<(String, String)> = Vec::new();
    let mut sub3: Vec<Vec<String>> = Vec::new();
    let mut sub5: Vec<Vec<String>> = Vec::new();
    let mut outlines: Vec<Vec<String>> = Vec::new();
    let mut turns = 0;
    for d in corpus {
        turns += d.turns.len();
        for t in &d.turns {
            let toks = oracle_tokens(&t.utterance);
            for i in 1..toks.len() {
                bigrams.push((toks[i - 1].clone(), toks[i].clone()));
            }
            tokens.extend(toks);
        }
        let keys: Vec<String> = d.turns.iter().map(key).collect();
        for i in 0..keys.len() {
            if i + 1 < keys.len() {
                transitions.push((keys[i].clone(), keys[i + 1].clone()));
            }
            if i + 3 < keys.len() {
                sub3.push(keys[i..=i + 3].to_vec());
            }
            if i + 5 < keys.len() {
                sub5.push(keys[i..=i + 5].to_vec());
            }
        }
        outlines.push(keys);
    }
    // Same convention as the library: an empty denominator gives 0.
    let ratio = |u: usize, n: usize| if n == 0 { 0.0 } else { u as f64 / n as f64 };
    DiversityReport {
        dialogues: corpus.len(),
        total_turns: turns,
        total_tokens: tokens.len(),
        avg_turns_per_dialogue: ratio(turns, corpus.len()),
        avg_tokens_per_turn: ratio(tokens.len(), turns),
        unique_token_ratio: ratio(count_unique(&tokens), tokens.len()),
        unique_bigram_ratio: ratio(count_unique(&bigrams), tokens.len()),
        unique_transition_ratio: ratio(count_unique(&transitions), turns),
        unique_subdialogue_ratio_k3: (!sub3.is_empty()).then(|| ratio(count_unique(&sub3), sub3.len())),
        unique_subdialogue_ratio_k5: (!sub5.is_empty()).then(|| ratio(count_unique(&sub5), sub5.len())),
        unique_outline_ratio: ratio(count_unique(&outlines), corpus.len()),
    }
}
