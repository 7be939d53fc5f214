use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ActionMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// Highest-probability action, lowest index on ties.
    #[default]
    Greedy,
    /// Inverse-CDF draw; used while exploring.
    Sample,
}

/// Zeroes masked entries and rescales the rest to sum to one.
///
/// If every allowed entry of `dist` is zero the result is uniform over the
/// allowed actions.
pub fn mask_and_renormalize(dist: &[f64], mask: &ActionMask) -> Result<Vec<f64>> {
    if dist.len() != mask.len() {
        return Err(Error::DimensionMismatch {
            what: "action mask",
            expected: dist.len(),
            got: mask.len(),
        });
    }
    let allowed = mask.count_allowed();
    if allowed == 0 {
        return Err(Error::AllMasked);
    }
    let total: f64 = dist
        .iter()
        .zip(mask.iter())
        .filter(|(_, m)| *m)
        .map(|(p, _)| *p)
        .sum();
    let out = if total > 0.0 {
        dist.iter()
            .zip(mask.iter())
            .map(|(p, m)| if m { p / total } else { 0.0 })
            .collect()
    } else {
        let u = 1.0 / allowed as f64;
        mask.iter().map(|m| if m { u } else { 0.0 }).collect()
    };
    Ok(out)
}

/// Lowest-index argmax.
pub fn argmax(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in dist.iter().enumerate() {
        if *p > dist[best] {
            best = i;
        }
    }
    best
}

pub fn select_action<R: Rng + ?Sized>(dist: &[f64], mode: SelectionMode, rng: &mut R) -> usize {
    match mode {
        SelectionMode::Greedy => argmax(dist),
        SelectionMode::Sample => {
            let u: f64 = rng.gen();
            let mut cum = 0.0;
            let mut last_nonzero = argmax(dist);
            for (i, p) in dist.iter().enumerate() {
                if *p <= 0.0 {
                    continue;
                }
                cum += p;
                last_nonzero = i;
                if u < cum {
                    return i;
                }
            }
            // rounding left u just above the final cumulative sum
            last_nonzero
        }
    }
}
