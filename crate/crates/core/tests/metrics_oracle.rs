//! Diversity report checked against a brute-force recount.

mod oracle;

use dialogen_core::dialogue::{Dialogue, DialogueAct, DialogueTurn, Frame, Speaker};
use dialogen_core::metrics::{compute_report, tokenize};
use dialogen_core::selfplay::SelfPlay;
use dialogen_core::{crowd, fixtures};
use oracle::{brute_force, dialogue, fixture_corpus, oracle_tokens, turn};
use proptest::prelude::*;

#[test]
fn oracle_tokenizer_agrees_on_hand_examples() {
    assert_eq!(oracle_tokens("Hi, how can I help you?"), ["hi", ",", "how", "can", "i", "help", "you", "?"]);
    assert_eq!(oracle_tokens("I'd like 7pm."), ["i'd", "like", "7pm", "."]);
    assert_eq!(tokenize("I'd like 7pm."), oracle_tokens("I'd like 7pm."));
}

#[test]
fn fixture_report_matches_hand_counts() {
    let corpus = fixture_corpus();
    let r = compute_report(&corpus).unwrap();
    // Counted by hand from the fixture: 24 turns; d1 and d2 share a flow.
    assert_eq!(r.dialogues, 5);
    assert_eq!(r.total_turns, 24);
    assert_eq!(r.unique_outline_ratio, 4.0 / 5.0);
    // Transitions: d1 gives 5 (d2 repeats them), d3 adds 3, d4 adds
    // INFORM(date)>REQUEST(date) and INFORM(date)>BYE, d5 has none.
    assert_eq!(r.unique_transition_ratio, 10.0 / 24.0);
    assert_eq!(r, brute_force(&corpus));
}

#[test]
fn fixture_report_equals_brute_force_exactly() {
    let corpus = fixture_corpus();
    let start = std::time::Instant::now();
    let fast = compute_report(&corpus).unwrap();
    assert_eq!(fast, brute_force(&corpus));
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn generated_corpus_matches_brute_force() {
    let outlines = SelfPlay::new(vec![fixtures::restaurant_spec()])
        .generate_outlines(&fixtures::restaurant_config(), 60, 8, false)
        .unwrap();
    let tasks = crowd::make_tasks(&outlines, 1);
    let rewrites: Vec<_> = tasks
        .iter()
        .zip(&outlines)
        .map(|(t, o)| crowd::auto_paraphrase(o, &t.task_id))
        .collect();
    let f = crowd::finalize(&outlines, &tasks, &rewrites, &[], &[]).unwrap();
    let fast = compute_report(&f.dialogues).unwrap();
    let slow = brute_force(&f.dialogues);
    assert_eq!(fast, slow);
}

fn arb_turn() -> impl Strategy<Value = DialogueTurn> {
    let words = prop::sample::select(vec!["hi", "ok", "6pm", "Friday", "don't", ",", "?", "!", "table", "two"]);
    (
        prop::collection::vec(words, 0..6),
        0usize..4,
        any::<bool>(),
    )
        .prop_map(|(ws, act, user)| {
            let frames = match act {
                0 => vec![Frame::new(DialogueAct::Greeting)],
                1 => vec![Frame::new(DialogueAct::Inform).with("time", "x")],
                2 => vec![Frame::request(["date"])],
                _ => vec![Frame::new(DialogueAct::Affirm)],
            };
            let speaker = if user { Speaker::User } else { Speaker::System };
            turn(speaker, &ws.join(" "), frames)
        })
}

fn arb_corpus() -> impl Strategy<Value = Vec<Dialogue>> {
    prop::collection::vec(prop::collection::vec(arb_turn(), 0..9), 1..=5).prop_map(|ds| {
        ds.into_iter()
            .enumerate()
            .map(|(i, turns)| dialogue(&format!("d{i}"), turns))
            .collect()
    })
}

proptest! {
    #[test]
    fn report_equals_brute_force_on_small_corpora(corpus in arb_corpus()) {
        prop_assert_eq!(compute_report(&corpus).unwrap(), brute_force(&corpus));
    }

    #[test]
    fn unique_counts_never_exceed_totals(corpus in arb_corpus()) {
        let r = compute_report(&corpus).unwrap();
        for ratio in [r.unique_token_ratio, r.unique_bigram_ratio, r.unique_transition_ratio, r.unique_outline_ratio] {
            prop_assert!((0.0..=1.0).contains(&ratio));
        }
        for ratio in [r.unique_subdialogue_ratio_k3, r.unique_subdialogue_ratio_k5].into_iter().flatten() {
            prop_assert!(ratio > 0.0 && ratio <= 1.0);
        }
    }
}

/// Longer windows are at least as distinctive on generated corpora. This is
/// an empirical property, not a theorem: a 4-turn dialogue plus two identical
/// 6-turn dialogues gives 4/7 at k=3 and 1/2 at k=5.
#[test]
fn longer_windows_are_more_distinctive_on_generated_corpora() {
    for seed in 0..5 {
        let outlines = SelfPlay::new(vec![fixtures::restaurant_spec()])
            .generate_outlines(&fixtures::restaurant_config(), 200, seed, false)
            .unwrap();
        let corpus: Vec<Dialogue> = outlines
            .iter()
            .map(|o| Dialogue {
                id: o.id.clone(),
                outline_ref: o.id.clone(),
                turns: o
                    .turns
                    .iter()
                    .map(|t| turn(t.annotation.speaker, &t.template, t.annotation.frames.clone()))
                    .collect(),
            })
            .collect();
        let r = compute_report(&corpus).unwrap();
        assert!(r.unique_subdialogue_ratio_k5.unwrap() >= r.unique_subdialogue_ratio_k3.unwrap());
    }
}

#[test]
fn monotonicity_counterexample_is_real() {
    // Two copies of a 6-turn flow with distinct keys plus one 4-turn flow:
    // k=3 has 4 unique of 7 windows, k=5 has 1 unique of 2.
    let c = fixture_corpus();
    let corpus = vec![c[0].clone(), c[0].clone(), c[2].clone()];
    let r = compute_report(&corpus).unwrap();
    assert_eq!(r.unique_subdialogue_ratio_k3, Some(4.0 / 7.0));
    assert_eq!(r.unique_subdialogue_ratio_k5, Some(0.5));
    assert_eq!(r, brute_force(&corpus));
}
