use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Prediction, Scores};
use crate::annotation::LabelClass;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    #[default]
    Mean,
    Majority,
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(FusionStrategy::Mean),
            "majority" => Ok(FusionStrategy::Majority),
            _ => Err(Error::Contract(format!("unknown fusion strategy {s:?}"))),
        }
    }
}

/// Combine several models' predictions for one post.
///
/// `Mean` averages scores per class and renormalises. `Majority` takes the
/// most-voted argmax, breaking vote ties by mean score and then by class
/// order; its scores are the mean scores.
pub fn fuse(preds: &[Prediction], strategy: FusionStrategy) -> Result<Prediction> {
    let first = preds.first().ok_or_else(|| Error::Contract("fuse needs at least one prediction".into()))?;
    if let Some(p) = preds.iter().find(|p| p.post_id != first.post_id) {
        return Err(Error::Contract(format!(
            "fuse over mixed post ids {} and {}",
            first.post_id, p.post_id
        )));
    }
    if preds.len() == 1 {
        return Ok(first.clone());
    }
    let mut mean = [0.0; 4];
    for p in preds {
        for (m, s) in mean.iter_mut().zip(p.scores.0) {
            *m += s;
        }
    }
    let total: f64 = mean.iter().sum();
    let mean = Scores(mean.map(|m| m / total));
    match strategy {
        FusionStrategy::Mean => Ok(Prediction::new(first.post_id.clone(), mean)),
        FusionStrategy::Majority => {
            let mut votes = [0usize; 4];
            for p in preds {
                votes[p.argmax.index()] += 1;
            }
            let mut best = 0;
            for c in 1..4 {
                if votes[c] > votes[best] || (votes[c] == votes[best] && mean.0[c] > mean.0[best]) {
                    best = c;
                }
            }
            Ok(Prediction {
                post_id: first.post_id.clone(),
                scores: mean,
                argmax: LabelClass::ALL[best],
            })
        }
    }
}
