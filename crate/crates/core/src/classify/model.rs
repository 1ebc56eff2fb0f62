use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureConfig, FeatureVector, Prediction, Scores};
use crate::annotation::LabelClass;
use crate::{Error, Result};

const MODEL_FORMAT: &str = "toxipipe-linear-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Loss weight per class, in declaration order.
    pub class_weights: [f64; 4],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            learning_rate: 0.05,
            l2: 1e-6,
            class_weights: [1.0; 4],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean weighted cross-entropy over each epoch's pass, measured before
    /// each example's update.
    pub epoch_losses: Vec<f64>,
}

/// Multinomial logistic regression over a hashed feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    features: FeatureConfig,
    /// Class-major: `weights[c * dim + i]`.
    weights: Vec<f64>,
    bias: [f64; 4],
    train: TrainConfig,
    report: TrainReport,
}

impl LinearModel {
    /// All-zero model; predicts uniform scores.
    pub fn zeros(features: FeatureConfig) -> Self {
        LinearModel {
            weights: vec![0.0; 4 * features.dimension()],
            features,
            bias: [0.0; 4],
            train: TrainConfig::default(),
            report: TrainReport { epoch_losses: Vec::new() },
        }
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        &self.features
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn dimension(&self) -> usize {
        self.features.dimension()
    }

    pub fn bias(&self) -> [f64; 4] {
        self.bias
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, class: LabelClass, index: u32) -> f64 {
        self.weights[class.index() * self.dimension() + index as usize]
    }

    pub fn set_weight(&mut self, class: LabelClass, index: u32, w: f64) {
        let d = self.dimension();
        self.weights[class.index() * d + index as usize] = w;
    }

    pub fn set_bias(&mut self, bias: [f64; 4]) {
        self.bias = bias;
    }

    pub fn logits(&self, x: &FeatureVector) -> [f64; 4] {
        let d = self.dimension();
        let mut z = self.bias;
        for (c, zc) in z.iter_mut().enumerate() {
            let row = &self.weights[c * d..(c + 1) * d];
            for &(i, v) in &x.entries {
                *zc += row[i as usize] * v;
            }
        }
        z
    }

    pub fn predict(&self, post_id: &str, x: &FeatureVector) -> Prediction {
        Prediction::new(post_id, Scores::softmax(self.logits(x)))
    }

    /// Fit by SGD on the class-weighted cross-entropy plus `l2/2·‖W‖²`
    /// (bias unregularised). Example order is reshuffled every epoch from
    /// `cfg.seed`, so training is bit-reproducible.
    pub fn train(
        data: &[(FeatureVector, LabelClass)],
        features: FeatureConfig,
        cfg: TrainConfig,
    ) -> Result<Self> {
        let mut present = [false; 4];
        for (_, y) in data {
            present[y.index()] = true;
        }
        if present.iter().filter(|p| **p).count() < 2 {
            return Err(Error::Contract("training data must contain at least two classes".into()));
        }
        if cfg.class_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Contract("class weights must be finite and non-negative".into()));
        }
        let d = features.dimension();
        for (x, _) in data {
            if x.entries.iter().any(|(i, _)| *i as usize >= d) {
                return Err(Error::Contract("feature index outside the model's hash space".into()));
            }
        }

        let mut model = LinearModel::zeros(features);
        model.train = cfg;
        // W = scale · V; L2 shrinkage only touches `scale`.
        let mut scale = 1.0f64;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let lr = cfg.learning_rate;

        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut loss = 0.0;
            for &k in &order {
                let (x, y) = &data[k];
                let wy = cfg.class_weights[y.index()];
                let mut z = model.bias;
                for (c, zc) in z.iter_mut().enumerate() {
                    let row = &model.weights[c * d..(c + 1) * d];
                    *zc += scale * x.entries.iter().map(|&(i, v)| row[i as usize] * v).sum::<f64>();
                }
                let p = Scores::softmax(z).0;
                loss += -wy * p[y.index()].max(f64::MIN_POSITIVE).ln();

                scale *= 1.0 - lr * cfg.l2;
                if scale < 1e-6 {
                    model.weights.iter_mut().for_each(|w| *w *= scale);
                    scale = 1.0;
                }
                if wy == 0.0 {
                    continue;
                }
                for c in 0..4 {
                    let g = wy * (p[c] - f64::from(u8::from(c == y.index())));
                    model.bias[c] -= lr * g;
                    let row = &mut model.weights[c * d..(c + 1) * d];
                    for &(i, v) in &x.entries {
                        row[i as usize] -= lr * g * v / scale;
                    }
                }
            }
            model.report.epoch_losses.push(loss / data.len().max(1) as f64);
        }
        model.weights.iter_mut().for_each(|w| *w *= scale);
        Ok(model)
    }

    /// Full-batch objective `(1/N) Σ w_y·CE + l2/2·‖W‖²`.
    pub fn objective(&self, data: &[(FeatureVector, LabelClass)], class_weights: [f64; 4], l2: f64) -> f64 {
        let ce: f64 = data
            .iter()
            .map(|(x, y)| {
                let z = self.logits(x);
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                class_weights[y.index()] * (lse - z[y.index()])
            })
            .sum();
        let reg: f64 = self.weights.iter().map(|w| w * w).sum();
        ce / data.len() as f64 + 0.5 * l2 * reg
    }

    /// Analytic gradient of [`LinearModel::objective`]: (dW class-major, db).
    pub fn objective_gradient(
        &self,
        data: &[(FeatureVector, LabelClass)],
        class_weights: [f64; 4],
        l2: f64,
    ) -> (Vec<f64>, [f64; 4]) {
        let d = self.dimension();
        let n = data.len() as f64;
        let mut gw: Vec<f64> = self.weights.iter().map(|w| l2 * w).collect();
        let mut gb = [0.0; 4];
        for (x, y) in data {
            let p = Scores::softmax(self.logits(x)).0;
            let wy = class_weights[y.index()];
            for c in 0..4 {
                let g = wy * (p[c] - f64::from(u8::from(c == y.index()))) / n;
                gb[c] += g;
                for &(i, v) in &x.entries {
                    gw[c * d + i as usize] += g * v;
                }
            }
        }
        (gw, gb)
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(Error::Contract("weight vector has the wrong length".into()));
        }
        self.weights = weights;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let d = self.dimension();
        let weights: Vec<(usize, u32, f64)> = self
            .weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(k, w)| (k / d, (k % d) as u32, *w))
            .collect();
        Ok(serde_json::to_string(&ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            features: self.features,
            classes: LabelClass::ALL.to_vec(),
            bias: self.bias,
            weights,
            train: self.train,
            epoch_losses: self.report.epoch_losses.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(s)?;
        if f.format != MODEL_FORMAT || f.version != MODEL_VERSION {
            return Err(Error::Format {
                path: None,
                line: None,
                message: format!("unsupported model container {} v{}", f.format, f.version),
            });
        }
        if f.classes != LabelClass::ALL {
            return Err(Error::Format { path: None, line: None, message: "model class list mismatch".into() });
        }
        if f.features.hash_bits > 26 {
            return Err(Error::Format { path: None, line: None, message: "hash space too large".into() });
        }
        let mut m = LinearModel::zeros(f.features);
        let d = m.dimension();
        for (c, i, w) in f.weights {
            if c >= 4 || i as usize >= d || !w.is_finite() {
                return Err(Error::Format { path: None, line: None, message: "weight entry out of range".into() });
            }
            m.weights[c * d + i as usize] = w;
        }
        m.bias = f.bias;
        m.train = f.train;
        m.report.epoch_losses = f.epoch_losses;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s).map_err(|e| e.with_path(path))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    features: FeatureConfig,
    classes: Vec<LabelClass>,
    bias: [f64; 4],
    /// Sparse (class, index, weight) triples of non-zero weights.
    weights: Vec<(usize, u32, f64)>,
    train: TrainConfig,
    epoch_losses: Vec<f64>,
}
