use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Prediction;
use crate::annotation::LabelClass;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: LabelClass,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: u64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub micro_recall: f64,
    /// Rows are gold classes, columns predicted classes.
    pub confusion: [[u64; 4]; 4],
}

impl EvalReport {
    pub fn class(&self, c: LabelClass) -> &ClassMetrics {
        &self.per_class[c.index()]
    }

    /// The surveillance target row.
    pub fn minority(&self) -> &ClassMetrics {
        self.class(LabelClass::NonmedicalUse)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision/recall/F1, macro-F1 and the confusion matrix.
/// `0/0` is taken as 0.
pub fn evaluate(preds: &[Prediction], gold: &HashMap<String, LabelClass>) -> Result<EvalReport> {
    if preds.is_empty() {
        return Err(Error::Contract("evaluate needs at least one prediction".into()));
    }
    let mut confusion = [[0u64; 4]; 4];
    for p in preds {
        let g = gold
            .get(&p.post_id)
            .ok_or_else(|| Error::Contract(format!("no gold label for post {}", p.post_id)))?;
        confusion[g.index()][p.argmax.index()] += 1;
    }
    let n = preds.len() as u64;
    let per_class: Vec<ClassMetrics> = LabelClass::ALL
        .into_iter()
        .map(|c| {
            let k = c.index();
            let tp = confusion[k][k];
            let support: u64 = confusion[k].iter().sum();
            let predicted: u64 = confusion.iter().map(|row| row[k]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            ClassMetrics { class: c, tp, fp: predicted - tp, fn_: support - tp, support, precision, recall, f1 }
        })
        .collect();
    let trace: u64 = (0..4).map(|k| confusion[k][k]).sum();
    let total_fn: u64 = per_class.iter().map(|m| m.fn_).sum();
    Ok(EvalReport {
        n,
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / 4.0,
        accuracy: ratio(trace, n),
        micro_recall: ratio(trace, trace + total_fn),
        per_class,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::Scores;
    use proptest::prelude::*;
    use LabelClass::*;

    fn pred(id: usize, c: LabelClass) -> Prediction {
        let mut s = [0.0; 4];
        s[c.index()] = 1.0;
        Prediction::new(id.to_string(), Scores(s))
    }

    fn run(pairs: &[(LabelClass, LabelClass)]) -> EvalReport {
        let preds: Vec<_> = pairs.iter().enumerate().map(|(i, (_, p))| pred(i, *p)).collect();
        let gold = pairs.iter().enumerate().map(|(i, (g, _))| (i.to_string(), *g)).collect();
        evaluate(&preds, &gold).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let r = run(&LabelClass::ALL.map(|c| (c, c)));
        assert!(r.per_class.iter().all(|m| m.f1 == 1.0));
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn two_thirds_case() {
        // NonmedicalUse: TP=2, FP=1, FN=1
        let r = run(&[
            (NonmedicalUse, NonmedicalUse),
            (NonmedicalUse, NonmedicalUse),
            (Mention, NonmedicalUse),
            (NonmedicalUse, Mention),
        ]);
        let m = r.minority();
        assert_eq!((m.tp, m.fp, m.fn_), (2, 1, 1));
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_predictor() {
        let r = run(&LabelClass::ALL.map(|c| (c, Mention)));
        assert_eq!(r.class(Mention).recall, 1.0);
        for c in [NonmedicalUse, Consumption, Unrelated] {
            assert_eq!(r.class(c).f1, 0.0);
        }
    }

    #[test]
    fn contract_errors() {
        assert!(evaluate(&[], &HashMap::new()).is_err());
        assert!(matches!(evaluate(&[pred(0, Mention)], &HashMap::new()), Err(Error::Contract(_))));
    }

    proptest! {
        #[test]
        fn micro_recall_equals_accuracy(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200)) {
            let pairs: Vec<_> = pairs.into_iter().map(|(g, p)| (LabelClass::ALL[g], LabelClass::ALL[p])).collect();
            let r = run(&pairs);
            let trace: u64 = (0..4).map(|k| r.confusion[k][k]).sum();
            prop_assert!((r.micro_recall - r.accuracy).abs() <= 1e-12);
            prop_assert!((r.accuracy - trace as f64 / r.n as f64).abs() <= 1e-12);
        }
    }
}
