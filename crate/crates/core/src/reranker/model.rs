//! A small feedforward relevance classifier trained from scratch:
//! input → 64 (ReLU) → 16 (ReLU) → 1 (sigmoid), class-weighted binary
//! cross-entropy, mini-batch gradient descent with momentum.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FeatureVector, LabeledPair, SCALAR_FEATURES};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const HIDDEN_LAYERS: [usize; 2] = [64, 16];
/// Upper bound on the automatic positive-class weight.
pub const MAX_POSITIVE_WEIGHT: f64 = 50.0;

#[derive(Debug, Error, PartialEq)]
pub enum RerankerError {
    #[error("feature dimension {got} does not match the model's {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training set needs both classes ({positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("training set is empty")]
    Empty,
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("model layers do not chain: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Weight on positive examples; `None` uses negatives/positives capped
    /// at [`MAX_POSITIVE_WEIGHT`].
    pub class_weight: Option<f64>,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            momentum: 0.9,
            epochs: 40,
            batch_size: 32,
            seed: 17,
            class_weight: None,
        }
    }
}

/// Fully connected layer; `weights` is row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn seeded(inputs: usize, outputs: usize, bias: f64, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / inputs.max(1) as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect(),
            bias: vec![bias; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.bias).map(|(row, b)| {
            row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b
        }));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub params: TrainParams,
    pub positive_weight: f64,
    pub pairs: usize,
    pub positives: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankerModel {
    pub format_version: u32,
    /// Names of every input, in order.
    pub feature_order: Vec<String>,
    pub scalar_count: usize,
    pub field_dim: usize,
    pub chunk_dim: usize,
    /// Standardization of the scalar block.
    pub scalar_mean: Vec<f64>,
    pub scalar_std: Vec<f64>,
    pub layers: Vec<Dense>,
    pub seed: u64,
    pub training: Option<TrainingMetadata>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit, stable for large |z|.
fn bce_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn scalar_names(count: usize) -> Vec<String> {
    if count == SCALAR_FEATURES.len() {
        SCALAR_FEATURES.iter().map(|s| (*s).to_owned()).collect()
    } else {
        (0..count).map(|i| format!("scalar_{i}")).collect()
    }
}

/// Automatic positive weight for a label set.
pub fn positive_weight(labels: impl IntoIterator<Item = u8>) -> f64 {
    let (mut pos, mut neg) = (0usize, 0usize);
    for l in labels {
        if l == 1 { pos += 1 } else { neg += 1 }
    }
    if pos == 0 || neg == 0 {
        1.0
    } else {
        (neg as f64 / pos as f64).min(MAX_POSITIVE_WEIGHT)
    }
}

struct Gradients {
    weights: Vec<Vec<f64>>,
    bias: Vec<Vec<f64>>,
}

impl RerankerModel {
    /// Seeded weights with identity standardization.
    pub fn seeded(scalar_count: usize, field_dim: usize, chunk_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = scalar_count + field_dim + chunk_dim;
        let mut layers = Vec::new();
        let mut prev = input;
        for &h in &HIDDEN_LAYERS {
            // A small positive bias keeps ReLU units off their kink at init.
            layers.push(Dense::seeded(prev, h, 0.01, &mut rng));
            prev = h;
        }
        layers.push(Dense::seeded(prev, 1, 0.0, &mut rng));
        let mut feature_order = scalar_names(scalar_count);
        feature_order.extend((0..field_dim).map(|i| format!("field_embedding_{i}")));
        feature_order.extend((0..chunk_dim).map(|i| format!("chunk_embedding_{i}")));
        Self {
            format_version: MODEL_FORMAT_VERSION,
            feature_order,
            scalar_count,
            field_dim,
            chunk_dim,
            scalar_mean: vec![0.0; scalar_count],
            scalar_std: vec![1.0; scalar_count],
            layers,
            seed,
            training: None,
        }
    }

    /// Seeded weights with standardization fitted to `pairs`; this is the
    /// starting point of [`train`].
    pub fn initialize(pairs: &[LabeledPair], seed: u64) -> Result<Self, RerankerError> {
        let first = pairs.first().ok_or(RerankerError::Empty)?;
        let f = &first.features;
        let mut m = Self::seeded(f.scalars.len(), f.field_embedding.len(), f.chunk_embedding.len(), seed);
        for p in pairs {
            m.check_dim(&p.features)?;
        }
        let n = pairs.len() as f64;
        for j in 0..m.scalar_count {
            let mean = pairs.iter().map(|p| p.features.scalars[j]).sum::<f64>() / n;
            let var = pairs.iter().map(|p| (p.features.scalars[j] - mean).powi(2)).sum::<f64>() / n;
            m.scalar_mean[j] = mean;
            m.scalar_std[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Ok(m)
    }

    pub fn input_dim(&self) -> usize {
        self.scalar_count + self.field_dim + self.chunk_dim
    }

    pub fn validate(&self) -> Result<(), RerankerError> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(RerankerError::Version(self.format_version));
        }
        let mut prev = self.input_dim();
        for (i, l) in self.layers.iter().enumerate() {
            if l.inputs != prev || l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(RerankerError::Shape(format!("layer {i}")));
            }
            prev = l.outputs;
        }
        if prev != 1 || self.scalar_mean.len() != self.scalar_count || self.scalar_std.len() != self.scalar_count {
            return Err(RerankerError::Shape("output or normalization block".into()));
        }
        Ok(())
    }

    fn check_dim(&self, f: &FeatureVector) -> Result<(), RerankerError> {
        let shape_ok = f.scalars.len() == self.scalar_count
            && f.field_embedding.len() == self.field_dim
            && f.chunk_embedding.len() == self.chunk_dim;
        if shape_ok {
            Ok(())
        } else {
            Err(RerankerError::DimensionMismatch { expected: self.input_dim(), got: f.dim() })
        }
    }

    /// Model input: standardized scalars followed by both raw embeddings.
    pub fn input(&self, f: &FeatureVector) -> Result<Vec<f64>, RerankerError> {
        self.check_dim(f)?;
        let mut x = Vec::with_capacity(self.input_dim());
        x.extend(
            f.scalars
                .iter()
                .zip(self.scalar_mean.iter().zip(&self.scalar_std))
                .map(|(v, (m, s))| (v - m) / s),
        );
        x.extend_from_slice(&f.field_embedding);
        x.extend_from_slice(&f.chunk_embedding);
        Ok(x)
    }

    /// Activations of every layer (input first) and the output logit.
    fn forward(&self, x: &[f64]) -> (Vec<Vec<f64>>, f64) {
        let mut acts = vec![x.to_vec()];
        let mut z = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(acts.last().expect("input present"), &mut z);
            if i + 1 < self.layers.len() {
                acts.push(z.iter().map(|v| v.max(0.0)).collect());
            }
        }
        (acts, z[0])
    }

    fn logit(&self, x: &[f64]) -> f64 {
        self.forward(x).1
    }

    /// Relevance in (0, 1).
    pub fn predict(&self, f: &FeatureVector) -> Result<f64, RerankerError> {
        Ok(sigmoid(self.logit(&self.input(f)?)))
    }

    /// Weighted mean cross-entropy over standardized inputs.
    fn loss(&self, xs: &[Vec<f64>], ys: &[f64], pos_weight: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let w = if y > 0.5 { pos_weight } else { 1.0 };
            num += w * bce_logit(self.logit(x), y);
            den += w;
        }
        num / den
    }

    fn gradients(&self, xs: &[Vec<f64>], ys: &[f64], pos_weight: f64, idx: &[usize]) -> Gradients {
        let mut g = Gradients {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: self.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        };
        let den: f64 = idx.iter().map(|&i| if ys[i] > 0.5 { pos_weight } else { 1.0 }).sum();
        for &i in idx {
            let (acts, z) = self.forward(&xs[i]);
            let w = if ys[i] > 0.5 { pos_weight } else { 1.0 };
            let mut delta = vec![w * (sigmoid(z) - ys[i]) / den];
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let a = &acts[l];
                for (o, d) in delta.iter().enumerate() {
                    g.bias[l][o] += d;
                    let row = &mut g.weights[l][o * layer.inputs..(o + 1) * layer.inputs];
                    for (gw, av) in row.iter_mut().zip(a) {
                        *gw += d * av;
                    }
                }
                if l > 0 {
                    let mut prev = vec![0.0; layer.inputs];
                    for (o, d) in delta.iter().enumerate() {
                        let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                        for (p, wv) in prev.iter_mut().zip(row) {
                            *p += wv * d;
                        }
                    }
                    // acts[l] is the ReLU output, positive exactly where the unit is active.
                    for (p, av) in prev.iter_mut().zip(a) {
                        if *av <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        g
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    fn param_mut(&mut self, mut k: usize) -> &mut f64 {
        for l in &mut self.layers {
            if k < l.weights.len() {
                return &mut l.weights[k];
            }
            k -= l.weights.len();
            if k < l.bias.len() {
                return &mut l.bias[k];
            }
            k -= l.bias.len();
        }
        panic!("parameter index out of range")
    }

    fn prepared(&self, pairs: &[LabeledPair]) -> Result<(Vec<Vec<f64>>, Vec<f64>), RerankerError> {
        let xs = pairs.iter().map(|p| self.input(&p.features)).collect::<Result<Vec<_>, _>>()?;
        let ys = pairs.iter().map(|p| f64::from(p.label)).collect();
        Ok((xs, ys))
    }
}

/// Fits a model. Deterministic for a given seed and pair order.
pub fn train(pairs: &[LabeledPair], params: &TrainParams) -> Result<RerankerModel, RerankerError> {
    let positives = pairs.iter().filter(|p| p.label == 1).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(RerankerError::SingleClass { positives, negatives });
    }
    let mut model = RerankerModel::initialize(pairs, params.seed)?;
    let pos_weight = params.class_weight.unwrap_or_else(|| positive_weight(pairs.iter().map(|p| p.label)));
    let (xs, ys) = model.prepared(pairs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_0f_ba7c);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut velocity: Vec<f64> = vec![0.0; model.params_mut().count()];
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch_size.max(1)) {
            let g = model.gradients(&xs, &ys, pos_weight, batch);
            let grads = g.weights.iter().zip(&g.bias).flat_map(|(w, b)| w.iter().chain(b));
            for ((p, v), gv) in model.params_mut().zip(velocity.iter_mut()).zip(grads) {
                *v = params.momentum * *v - params.learning_rate * gv;
                *p += *v;
            }
        }
    }
    let final_loss = model.loss(&xs, &ys, pos_weight);
    log::info!("reranker trained on {} pairs ({positives} positive), final loss {final_loss:.6}", pairs.len());
    model.training = Some(TrainingMetadata {
        params: params.clone(),
        positive_weight: pos_weight,
        pairs: pairs.len(),
        positives,
        final_loss,
    });
    Ok(model)
}

/// Largest relative disagreement between backpropagated loss gradients and
/// central finite differences, over every parameter. The relative error is
/// `|a − n| / max(|a| + |n|, 1e-6)`, so parameters whose true gradient is
/// near zero are judged on absolute error.
pub fn gradient_check(model: &RerankerModel, pairs: &[LabeledPair], epsilon: f64) -> Result<f64, RerankerError> {
    let pos_weight = positive_weight(pairs.iter().map(|p| p.label));
    let (xs, ys) = model.prepared(pairs)?;
    let all: Vec<usize> = (0..pairs.len()).collect();
    let g = model.gradients(&xs, &ys, pos_weight, &all);
    let analytic: Vec<f64> = g
        .weights
        .iter()
        .zip(&g.bias)
        .flat_map(|(w, b)| w.iter().chain(b).copied())
        .collect();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.iter().enumerate() {
        let original = *probe.param_mut(k);
        *probe.param_mut(k) = original + epsilon;
        let up = probe.loss(&xs, &ys, pos_weight);
        *probe.param_mut(k) = original - epsilon;
        let down = probe.loss(&xs, &ys, pos_weight);
        *probe.param_mut(k) = original;
        let numeric = (up - down) / (2.0 * epsilon);
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Area under the ROC curve (tied scores share their average rank).
/// `None` unless both classes are present.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return None;
    }
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    Some((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(scalars: Vec<f64>, emb: Vec<f64>, label: u8) -> LabeledPair {
        LabeledPair {
            doc_id: "d".into(),
            chunk_index: 0,
            field_key: "f".into(),
            features: FeatureVector { scalars, field_embedding: emb.clone(), chunk_embedding: emb },
            label,
        }
    }

    /// Positives at +1 and negatives at −1 on the first coordinate, noise elsewhere.
    fn separable(n: usize, seed: u64) -> Vec<LabeledPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = (i % 3 == 0) as u8;
                let mut s: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                s[0] = if label == 1 { 1.0 } else { -1.0 };
                let e: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
                pair(s, e, label)
            })
            .collect()
    }

    fn accuracy(m: &RerankerModel, pairs: &[LabeledPair]) -> f64 {
        pairs
            .iter()
            .filter(|p| (m.predict(&p.features).unwrap() > 0.5) == (p.label == 1))
            .count() as f64
            / pairs.len() as f64
    }

    #[test]
    fn separable_fixture_is_learned() {
        let data = separable(120, 1);
        let m = train(&data, &TrainParams::default()).unwrap();
        assert!(accuracy(&m, &data) >= 0.99);
        let mean = |label: u8| {
            let s: Vec<f64> = data.iter().filter(|p| p.label == label).map(|p| m.predict(&p.features).unwrap()).collect();
            s.iter().sum::<f64>() / s.len() as f64
        };
        assert!(mean(1) > mean(0));
        m.validate().unwrap();
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let data = separable(30, 2);
        let params = TrainParams { epochs: 0, ..Default::default() };
        let m = train(&data, &params).unwrap();
        let init = RerankerModel::initialize(&data, params.seed).unwrap();
        assert_eq!(m.layers, init.layers);
    }

    #[test]
    fn same_seed_same_bits() {
        let data = separable(60, 3);
        let p = TrainParams { epochs: 5, ..Default::default() };
        let a = serde_json::to_string(&train(&data, &p).unwrap()).unwrap();
        let b = serde_json::to_string(&train(&data, &p).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_rejected() {
        let data: Vec<_> = separable(30, 4).into_iter().filter(|p| p.label == 0).collect();
        assert!(matches!(train(&data, &TrainParams::default()), Err(RerankerError::SingleClass { .. })));
    }

    #[test]
    fn zero_weights_predict_half() {
        let mut m = RerankerModel::seeded(2, 0, 0, 0);
        for l in &mut m.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let f = FeatureVector { scalars: vec![3.0, -7.0], field_embedding: vec![], chunk_embedding: vec![] };
        assert_eq!(m.predict(&f).unwrap(), 0.5);
    }

    #[test]
    fn monotone_single_feature_model() {
        let mut m = RerankerModel::seeded(1, 0, 0, 0);
        for l in &mut m.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.01);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let score = |x: f64| m.predict(&FeatureVector { scalars: vec![x], field_embedding: vec![], chunk_embedding: vec![] }).unwrap();
        assert!(score(2.0) > score(1.0));
        assert!(score(1.0) > score(0.5));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = RerankerModel::seeded(2, 1, 1, 0);
        let f = FeatureVector { scalars: vec![1.0], field_embedding: vec![0.0], chunk_embedding: vec![0.0] };
        assert_eq!(m.predict(&f), Err(RerankerError::DimensionMismatch { expected: 4, got: 3 }));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let data = separable(8, 5);
        let m = RerankerModel::initialize(&data, 11).unwrap();
        let err = gradient_check(&m, &data, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
        let err2 = gradient_check(&m, &data, 2e-5).unwrap();
        assert!(err2 < 1e-4, "{err2}");
        assert_ne!(err, err2);
    }

    #[test]
    fn constant_features_still_check() {
        let data: Vec<_> = (0..8).map(|i| pair(vec![1.0; 4], vec![0.25; 3], (i % 2) as u8)).collect();
        let m = RerankerModel::initialize(&data, 3).unwrap();
        assert!(gradient_check(&m, &data, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.9], &[0, 1]), Some(1.0));
        assert_eq!(roc_auc(&[0.9, 0.1], &[0, 1]), Some(0.0));
        assert_eq!(roc_auc(&[0.5, 0.5], &[0, 1]), Some(0.5));
        assert_eq!(roc_auc(&[0.5], &[1]), None);
    }

    #[test]
    fn model_round_trips_through_json() {
        let data = separable(30, 6);
        let m = train(&data, &TrainParams { epochs: 2, ..Default::default() }).unwrap();
        let back: RerankerModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        back.validate().unwrap();
    }
}
