//! Four-class post filtering.
//!
//! The in-process baseline is multinomial logistic regression over hashed
//! n-gram features. Heavier models plug in through the line-protocol
//! adapter in [`scorer`], and [`fuse`] combines any number of them.

mod eval;
mod features;
mod fusion;
mod model;
pub mod scorer;

use serde::{Deserialize, Serialize};

use crate::annotation::LabelClass;
use crate::corpus::MatchedPost;
use crate::{Error, Result};

pub use eval::{evaluate, ClassMetrics, EvalReport};
pub use features::{featurize, FeatureConfig, FeatureVector};
pub use fusion::{fuse, FusionStrategy};
pub use model::{LinearModel, TrainConfig, TrainReport};
pub use scorer::{ExternalScorer, ScorerEndpoint};

/// Per-class probabilities in [`LabelClass::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ScoresRepr", into = "ScoresRepr")]
pub struct Scores(pub [f64; 4]);

#[derive(Serialize, Deserialize)]
struct ScoresRepr {
    nonmedical_use: f64,
    consumption: f64,
    mention: f64,
    unrelated: f64,
}

impl From<ScoresRepr> for Scores {
    fn from(r: ScoresRepr) -> Self {
        Scores([r.nonmedical_use, r.consumption, r.mention, r.unrelated])
    }
}

impl From<Scores> for ScoresRepr {
    fn from(s: Scores) -> Self {
        let [nonmedical_use, consumption, mention, unrelated] = s.0;
        ScoresRepr { nonmedical_use, consumption, mention, unrelated }
    }
}

impl Scores {
    pub fn get(&self, c: LabelClass) -> f64 {
        self.0[c.index()]
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// First class attaining the maximum.
    pub fn argmax(&self) -> LabelClass {
        let mut best = 0;
        for i in 1..4 {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        LabelClass::ALL[best]
    }

    pub fn uniform() -> Self {
        Scores([0.25; 4])
    }

    /// Softmax of logits, max-shifted for stability.
    pub fn softmax(logits: [f64; 4]) -> Self {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e = logits.map(|z| (z - m).exp());
        let s: f64 = e.iter().sum();
        Scores(e.map(|v| v / s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub post_id: String,
    pub scores: Scores,
    /// The highest-scoring class, earliest in declaration order on ties.
    /// Majority fusion is the one exception: there it is the vote winner.
    pub argmax: LabelClass,
}

impl Prediction {
    pub fn new(post_id: impl Into<String>, scores: Scores) -> Self {
        Prediction { post_id: post_id.into(), argmax: scores.argmax(), scores }
    }
}

/// A matched post with its (possibly fused) prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedPost {
    #[serde(flatten)]
    pub matched: MatchedPost,
    pub prediction: Prediction,
}

/// Labelled training example as stored in JSONL training files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledText {
    #[serde(default)]
    pub post_id: String,
    pub text: String,
    pub label: LabelClass,
}

/// Read a labelled JSONL file.
pub fn read_labeled(path: impl AsRef<std::path::Path>) -> Result<Vec<LabeledText>> {
    crate::corpus::read_jsonl_values(path)
}

/// Classify matched posts with every model and fuse per post.
pub fn classify_posts(
    posts: &[MatchedPost],
    models: &[LinearModel],
    scorers: &[ExternalScorer],
    strategy: FusionStrategy,
    exec: crate::Exec,
) -> Result<Vec<ClassifiedPost>> {
    if models.is_empty() && scorers.is_empty() {
        return Err(Error::Contract("classification needs at least one model or scorer".into()));
    }
    let mut per_model: Vec<Vec<Prediction>> = models
        .iter()
        .map(|m| {
            exec.map(posts, |p| {
                let x = featurize(&p.normalized_text(), m.feature_config());
                m.predict(&p.post.post_id, &x)
            })
        })
        .collect();
    for s in scorers {
        let batch: Vec<(String, String)> =
            posts.iter().map(|p| (p.post.post_id.clone(), p.post.text.clone())).collect();
        per_model.push(s.score(&batch)?);
    }
    posts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let preds: Vec<Prediction> = per_model.iter().map(|m| m[i].clone()).collect();
            Ok(ClassifiedPost { matched: p.clone(), prediction: fuse(&preds, strategy)? })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_serialise_by_class_name() {
        let s = Scores([0.1, 0.2, 0.3, 0.4]);
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"{"nonmedical_use":0.1,"consumption":0.2,"mention":0.3,"unrelated":0.4}"#);
        assert_eq!(serde_json::from_str::<Scores>(&j).unwrap(), s);
    }

    #[test]
    fn argmax_ties_pick_declaration_order() {
        assert_eq!(Scores::uniform().argmax(), LabelClass::NonmedicalUse);
        assert_eq!(Scores([0.1, 0.4, 0.4, 0.1]).argmax(), LabelClass::Consumption);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = Scores::softmax([1.0, 2.0, -3.0, 0.5]);
        let b = Scores::softmax([101.0, 102.0, 97.0, 100.5]);
        for i in 0..4 {
            assert!((a.0[i] - b.0[i]).abs() < 1e-15);
        }
        assert!((a.sum() - 1.0).abs() < 1e-12);
        assert_eq!(Scores::softmax([0.0; 4]), Scores::uniform());
    }
}
