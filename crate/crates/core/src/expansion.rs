//! Synthetic expansion: realize new outlines by sampling stored utterances
//! for each turn's annotation. Outlines with a turn that has no usable
//! utterance are dropped.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crowd::{taggable_values, untagged_values, MapEntry, ParaphraseMap};
use crate::dialogue::{spans_valid, Dialogue, DialogueTurn, Outline, SlotSpan, TurnAnnotation};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyMode {
    /// Reuse only utterances recorded for the same annotation, values included.
    #[default]
    Strict,
    /// Reuse any utterance with the same value-free key, swapping span values.
    Substitute,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExpansionError {
    #[error("paraphrase map is empty")]
    EmptyMap,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expansion {
    pub dialogues: Vec<Dialogue>,
    pub dropped: usize,
    pub dropped_outlines: Vec<String>,
}

/// Rewrites the spanned values of a stored utterance to those of
/// `annotation`. Fails when unspanned values (intent, `dontcare`) differ,
/// when a span does not hold the old value verbatim, or when the result
/// breaks the span invariant.
pub fn substitute(entry: &MapEntry, annotation: &TurnAnnotation) -> Option<(String, Vec<SlotSpan>)> {
    let old = TurnAnnotation::new(annotation.speaker, entry.frames.clone());
    if untagged_values(&old) != untagged_values(annotation) {
        return None;
    }
    let old_values = taggable_values(&old);
    let new_values = taggable_values(annotation);
    if old_values.len() != new_values.len() || entry.spans.len() != old_values.len() {
        return None;
    }
    for ((span, (old_slot, old_value)), (new_slot, _)) in entry.spans.iter().zip(&old_values).zip(&new_values) {
        if &span.slot != old_slot
            || old_slot != new_slot
            || !span.value.eq_ignore_ascii_case(old_value)
            || !span.holds_in(&entry.utterance)
        {
            return None;
        }
    }
    let chars: Vec<char> = entry.utterance.chars().collect();
    let mut order: Vec<usize> = (0..entry.spans.len()).collect();
    order.sort_by_key(|&i| entry.spans[i].start);
    let mut text = String::new();
    let mut cursor = 0usize;
    let mut offset = 0usize;
    let mut spans = entry.spans.clone();
    for i in order {
        let span = &entry.spans[i];
        if span.start < cursor {
            return None;
        }
        let before: String = chars[cursor..span.start].iter().collect();
        offset += before.chars().count();
        text.push_str(&before);
        let value = &new_values[i].1;
        let start = offset;
        text.push_str(value);
        offset += value.chars().count();
        spans[i] = SlotSpan {
            slot: span.slot.clone(),
            start,
            end: offset,
            value: value.clone(),
        };
        cursor = span.end;
    }
    text.extend(&chars[cursor..]);
    spans_valid(&text, &spans).then_some((text, spans))
}

/// Usable realizations of one annotation.
pub fn candidates(map: &ParaphraseMap, annotation: &TurnAnnotation, mode: KeyMode) -> Vec<(String, Vec<SlotSpan>)> {
    let strict_key = annotation.strict_key();
    map.get(&annotation.canonical_key())
        .iter()
        .filter_map(|entry| {
            if entry.strict_key == strict_key {
                Some((entry.utterance.clone(), entry.spans.clone()))
            } else if mode == KeyMode::Substitute {
                substitute(entry, annotation)
            } else {
                None
            }
        })
        .collect()
}

fn realize(outline: &Outline, map: &ParaphraseMap, mode: KeyMode, seed: u64) -> Option<Dialogue> {
    let mut rng = seeded(seed);
    let mut turns = Vec::with_capacity(outline.turns.len());
    for turn in &outline.turns {
        let options = candidates(map, &turn.annotation, mode);
        let (utterance, spans) = options.choose(&mut rng)?.clone();
        turns.push(DialogueTurn {
            utterance,
            spans,
            annotation: turn.annotation.clone(),
        });
    }
    Some(Dialogue {
        id: format!("{}/x", outline.id),
        outline_ref: outline.id.clone(),
        turns,
    })
}

/// Realizes every outline from the map, one derived seed per outline.
pub fn expand(
    outlines: &[Outline],
    map: &ParaphraseMap,
    mode: KeyMode,
    seed: u64,
) -> Result<Expansion, ExpansionError> {
    if map.is_empty() {
        return Err(ExpansionError::EmptyMap);
    }
    let realized: Vec<Option<Dialogue>> = outlines
        .par_iter()
        .enumerate()
        .map(|(i, o)| realize(o, map, mode, derive_seed(seed, i as u64)))
        .collect();
    let mut out = Expansion::default();
    for (outline, dialogue) in outlines.iter().zip(realized) {
        match dialogue {
            Some(d) => out.dialogues.push(d),
            None => {
                out.dropped += 1;
                out.dropped_outlines.push(outline.id.clone());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crowd::{auto_paraphrase, finalize, make_tasks};
    use crate::dialogue::{DialogueAct, Frame, OutlineTurn, Speaker};
    use crate::fixtures;
    use crate::selfplay::SelfPlay;

    fn corpus(n: usize, seed: u64) -> Vec<Outline> {
        SelfPlay::new(vec![fixtures::restaurant_spec()])
            .generate_outlines(&fixtures::restaurant_config(), n, seed, false)
            .unwrap()
    }

    fn map_of(outlines: &[Outline]) -> ParaphraseMap {
        let tasks = make_tasks(outlines, 1);
        let rewrites: Vec<_> = tasks
            .iter()
            .zip(outlines)
            .map(|(t, o)| auto_paraphrase(o, &t.task_id))
            .collect();
        finalize(outlines, &tasks, &rewrites, &[], &[]).unwrap().map
    }

    #[test]
    fn closure_reproduces_every_outline() {
        let outlines = corpus(40, 3);
        let map = map_of(&outlines);
        let out = expand(&outlines, &map, KeyMode::Strict, 9).unwrap();
        assert_eq!(out.dropped, 0);
        assert_eq!(out.dialogues.len(), outlines.len());
        for d in &out.dialogues {
            for t in &d.turns {
                assert!(spans_valid(&t.utterance, &t.spans));
                assert!(!map.get(&t.annotation.canonical_key()).is_empty());
            }
        }
    }

    #[test]
    fn novel_annotation_drops_the_outline() {
        let outlines = corpus(10, 4);
        let map = map_of(&outlines);
        let mut odd = outlines[0].clone();
        odd.turns.insert(
            1,
            OutlineTurn {
                template: "Request alternatives.".into(),
                annotation: TurnAnnotation::new(
                    Speaker::System,
                    vec![Frame::new(DialogueAct::NotifyFailure), Frame::new(DialogueAct::GoodBye)],
                ),
            },
        );
        let mut set = outlines.clone();
        set.push(odd);
        let out = expand(&set, &map, KeyMode::Substitute, 1).unwrap();
        assert_eq!(out.dropped, 1);
        assert_eq!(out.dialogues.len(), outlines.len());
    }

    #[test]
    fn substitution_swaps_values() {
        let speaker = Speaker::User;
        let old = TurnAnnotation::new(speaker, vec![Frame::new(DialogueAct::Inform).with("time", "evening")]);
        let mut map = ParaphraseMap::default();
        map.insert(
            &old,
            "The evening works.",
            vec![SlotSpan {
                slot: "time".into(),
                start: 4,
                end: 11,
                value: "evening".into(),
            }],
        );
        let new = TurnAnnotation::new(speaker, vec![Frame::new(DialogueAct::Inform).with("time", "6pm")]);
        assert!(candidates(&map, &new, KeyMode::Strict).is_empty());
        let got = candidates(&map, &new, KeyMode::Substitute);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].0, "The 6pm works.");
        assert_eq!((got[0].1[0].start, got[0].1[0].end), (4, 7));
    }

    #[test]
    fn substitution_skips_dontcare_and_surface_spans() {
        let speaker = Speaker::User;
        let old = TurnAnnotation::new(speaker, vec![Frame::new(DialogueAct::Inform).with("time", "between 5pm and 8pm")]);
        let mut map = ParaphraseMap::default();
        map.insert(
            &old,
            "some time in the evening",
            vec![SlotSpan {
                slot: "time".into(),
                start: 13,
                end: 24,
                value: "the evening".into(),
            }],
        );
        let new = TurnAnnotation::new(speaker, vec![Frame::new(DialogueAct::Inform).with("time", "6pm")]);
        assert!(candidates(&map, &new, KeyMode::Substitute).is_empty());
        let care = TurnAnnotation::new(speaker, vec![Frame::new(DialogueAct::Inform).with("time", "dontcare")]);
        assert!(candidates(&map, &care, KeyMode::Substitute).is_empty());
    }

    #[test]
    fn empty_map_is_an_error() {
        assert_eq!(
            expand(&[], &ParaphraseMap::default(), KeyMode::Strict, 0),
            Err(ExpansionError::EmptyMap)
        );
    }

    #[test]
    fn expansion_is_deterministic_and_grows_the_corpus() {
        let seed_set = corpus(100, 5);
        let map = map_of(&seed_set);
        let large = corpus(1000, 6);
        let a = expand(&large, &map, KeyMode::Substitute, 2).unwrap();
        let b = expand(&large, &map, KeyMode::Substitute, 2).unwrap();
        assert_eq!(a, b);
        assert!(a.dialogues.len() > seed_set.len());
        assert_eq!(a.dialogues.len() + a.dropped, large.len());
    }
}
