//! Per-turn quality ratings: user turns are rated for naturalness, system
//! turns for politeness, clarity and optimality, each on a 1 to 5 scale.

use std::collections::BTreeMap;

use dialogen_core::dialogue::Speaker;
use serde::{Deserialize, Serialize};

pub const USER_DIMENSIONS: [&str; 1] = ["natural"];
pub const SYSTEM_DIMENSIONS: [&str; 3] = ["polite", "clear", "optimal"];
pub const RATERS_PER_TURN: usize = 3;
pub const SCALE: std::ops::RangeInclusive<u8> = 1..=5;

pub fn dimensions(speaker: Speaker) -> &'static [&'static str] {
    match speaker {
        Speaker::User => &USER_DIMENSIONS,
        Speaker::System => &SYSTEM_DIMENSIONS,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub dialogue_id: String,
    pub turn: usize,
    pub worker_id: String,
    pub scores: BTreeMap<String, u8>,
}

/// Checks that `scores` covers exactly the speaker's dimensions on the scale.
pub fn check_scores(speaker: Speaker, scores: &BTreeMap<String, u8>) -> Result<(), String> {
    let dims = dimensions(speaker);
    let mut expected: Vec<&str> = dims.to_vec();
    expected.sort_unstable();
    let given: Vec<&str> = scores.keys().map(String::as_str).collect();
    if given != expected {
        return Err(format!("a {} turn is rated on {} exactly, got {}", speaker.tag(), dims.join(", "), given.join(", ")));
    }
    match scores.iter().find(|(_, s)| !SCALE.contains(s)) {
        Some((dim, s)) => Err(format!("score {s} for {dim} is outside 1..=5")),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSummary {
    pub votes: usize,
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub stddev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSummary {
    pub dimensions: BTreeMap<String, DimensionSummary>,
    pub turns_rated: usize,
    pub turns_fully_rated: usize,
}

pub fn summarize(ratings: &[Rating]) -> RatingSummary {
    let mut by_dim: BTreeMap<String, Vec<f64>> = USER_DIMENSIONS
        .iter()
        .chain(&SYSTEM_DIMENSIONS)
        .map(|d| (d.to_string(), Vec::new()))
        .collect();
    let mut per_turn: BTreeMap<(&str, usize), usize> = BTreeMap::new();
    for r in ratings {
        *per_turn.entry((r.dialogue_id.as_str(), r.turn)).or_default() += 1;
        for (dim, &score) in &r.scores {
            by_dim.entry(dim.clone()).or_default().push(f64::from(score));
        }
    }
    let dimensions = by_dim
        .into_iter()
        .map(|(dim, xs)| {
            let n = xs.len() as f64;
            let mean = (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / n);
            let stddev = mean.map(|m| (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt());
            (dim, DimensionSummary { votes: xs.len(), mean, stddev })
        })
        .collect();
    RatingSummary {
        dimensions,
        turns_rated: per_turn.len(),
        turns_fully_rated: per_turn.values().filter(|&&c| c >= RATERS_PER_TURN).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rating(turn: usize, worker: &str, pairs: &[(&str, u8)]) -> Rating {
        Rating {
            dialogue_id: "d".into(),
            turn,
            worker_id: worker.into(),
            scores: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    #[test]
    fn summary_means_and_deviations() {
        let rs = [
            rating(0, "a", &[("natural", 5)]),
            rating(0, "b", &[("natural", 3)]),
            rating(0, "c", &[("natural", 4)]),
            rating(1, "a", &[("polite", 5), ("clear", 4), ("optimal", 2)]),
        ];
        let s = summarize(&rs);
        let nat = &s.dimensions["natural"];
        assert_eq!(nat.votes, 3);
        assert_eq!(nat.mean, Some(4.0));
        assert!((nat.stddev.unwrap() - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(s.dimensions["optimal"].stddev, Some(0.0));
        assert_eq!((s.turns_rated, s.turns_fully_rated), (2, 1));
    }

    #[test]
    fn empty_dimensions_have_no_mean() {
        let s = summarize(&[]);
        assert_eq!(s.dimensions.len(), 4);
        assert!(s.dimensions.values().all(|d| d.votes == 0 && d.mean.is_none()));
    }

    #[test]
    fn scores_must_match_speaker_and_scale() {
        let ok = rating(0, "a", &[("natural", 1)]).scores;
        assert!(check_scores(Speaker::User, &ok).is_ok());
        assert!(check_scores(Speaker::System, &ok).is_err());
        let high = rating(0, "a", &[("natural", 6)]).scores;
        assert!(check_scores(Speaker::User, &high).is_err());
        let sys = rating(0, "a", &[("polite", 5), ("clear", 5), ("optimal", 5)]).scores;
        assert!(check_scores(Speaker::System, &sys).is_ok());
    }
}
