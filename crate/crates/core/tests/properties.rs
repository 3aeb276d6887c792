//! Property checks against independent oracles.

use std::collections::BTreeMap;

use dialogen_core::crowd::{tag_spans, SpanTagging};
use dialogen_core::dialogue::{Dialogue, DialogueTurn, Outline};
use dialogen_core::fixtures;
use dialogen_core::rng::seeded;
use dialogen_core::scenario::sample_scenario;
use dialogen_core::selfplay::SelfPlay;
use proptest::prelude::*;

fn constraint_strategy() -> impl Strategy<Value = BTreeMap<String, String>> {
    let spec = fixtures::restaurant_spec();
    let mut options: Vec<(String, String)> = Vec::new();
    for slot in spec.columns() {
        for v in spec.column_values(slot) {
            options.push((slot.clone(), v.to_string()));
            options.push((slot.clone(), v.to_uppercase()));
        }
        options.push((slot.clone(), "dontcare".into()));
        options.push((slot.clone(), "no such value".into()));
    }
    prop::collection::vec(prop::sample::select(options), 0..4)
        .prop_map(|pairs| pairs.into_iter().collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn query_matches_linear_scan(constraints in constraint_strategy()) {
        let spec = fixtures::restaurant_spec();
        let got: Vec<usize> = spec
            .query_map(&constraints)
            .unwrap()
            .into_iter()
            .map(|e| spec.db.entities.iter().position(|x| std::ptr::eq(x, e)).unwrap())
            .collect();
        let expected: Vec<usize> = spec
            .db
            .entities
            .iter()
            .enumerate()
            .filter(|(_, e)| {
                constraints.iter().all(|(slot, want)| {
                    want == "dontcare"
                        || e.attributes.get(slot).map(|v| v.to_lowercase()) == Some(want.to_lowercase())
                })
            })
            .map(|(i, _)| i)
            .collect();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn outlines_round_trip_through_json(seed in 0u64..10_000) {
        let play = SelfPlay::new(vec![fixtures::restaurant_spec()]);
        let scenario = sample_scenario(&play.specs, &fixtures::restaurant_config(), seed).unwrap();
        let outline = play.run_episode(&scenario, &mut seeded(seed));
        let text = serde_json::to_string(&outline).unwrap();
        let back: Outline = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &outline);
        let dialogue = Dialogue {
            id: "d".into(),
            outline_ref: outline.id.clone(),
            turns: outline
                .turns
                .iter()
                .map(|t| DialogueTurn { utterance: t.template.clone(), spans: Vec::new(), annotation: t.annotation.clone() })
                .collect(),
        };
        let back: Dialogue = serde_json::from_str(&serde_json::to_string(&dialogue).unwrap()).unwrap();
        prop_assert_eq!(back, dialogue);
    }

    /// Every slot value a turn carries is written out verbatim in its template.
    #[test]
    fn templates_carry_every_value(seed in 0u64..10_000) {
        let specs = vec![fixtures::movie_spec(), fixtures::restaurant_spec()];
        let play = SelfPlay::new(specs);
        let scenario = sample_scenario(&play.specs, &fixtures::movie_restaurant_config(), seed).unwrap();
        let outline = play.run_episode(&scenario, &mut seeded(seed));
        for t in &outline.turns {
            let tagged = tag_spans(&t.annotation, &t.template);
            prop_assert!(matches!(tagged, SpanTagging::Complete(_)), "{} {:?}", t.template, tagged);
        }
    }
}
