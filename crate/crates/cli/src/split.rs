//! Train/dev/test partition that keeps every rewrite of an outline together.

use std::collections::HashMap;

use dialogen_core::dialogue::Dialogue;
use dialogen_core::rng::seeded;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("too few dialogues: {dialogues} dialogues from {outlines} outlines leave the {split} split empty")]
    TooFewDialogues {
        dialogues: usize,
        outlines: usize,
        split: &'static str,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<Dialogue>,
    pub dev: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
}

pub const NAMES: [&str; 3] = ["train", "dev", "test"];

/// Shuffles outline groups with `seed` and fills train, dev and test in that
/// order until each reaches its share of dialogues. Within a split the input
/// order is kept. With `require_nonempty`, any empty split is an error.
pub fn split_corpus(
    dialogues: &[Dialogue],
    ratios: [f64; 3],
    seed: u64,
    require_nonempty: bool,
) -> Result<Split, SplitError> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(SplitError::InvalidRatios(ratios));
    }
    let mut group_of: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, d) in dialogues.iter().enumerate() {
        let g = *group_of.entry(d.outline_ref.as_str()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut seeded(seed));

    let n = dialogues.len() as f64;
    let bounds = [ratios[0] * n, (ratios[0] + ratios[1]) * n];
    let mut target = vec![0usize; dialogues.len()];
    let mut placed = 0usize;
    for g in order {
        let at = placed as f64;
        let which = if at < bounds[0] - 1e-9 {
            0
        } else if at < bounds[1] - 1e-9 {
            1
        } else {
            2
        };
        for &i in &groups[g] {
            target[i] = which;
        }
        placed += groups[g].len();
    }

    let mut out = Split::default();
    for (d, &which) in dialogues.iter().zip(&target) {
        match which {
            0 => out.train.push(d.clone()),
            1 => out.dev.push(d.clone()),
            _ => out.test.push(d.clone()),
        }
    }
    if require_nonempty {
        for (name, part) in NAMES.iter().zip([&out.train, &out.dev, &out.test]) {
            if part.is_empty() {
                return Err(SplitError::TooFewDialogues {
                    dialogues: dialogues.len(),
                    outlines: groups.len(),
                    split: name,
                });
            }
        }
    }
    Ok(out)
}
