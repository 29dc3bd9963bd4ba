//! A small differentiable binary classifier: logistic regression or a
//! one-hidden-layer tanh MLP, with binary cross-entropy loss, exact
//! gradients, an SGD step, and evaluation metrics (accuracy, AUC-ROC).
//!
//! Models are flat parameter vectors so they can be clipped, noised,
//! aggregated, and checkpointed without caring about layer structure.

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{seeded, Stream};

/// Classifier architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Logistic { n_features: usize },
    Mlp { n_features: usize, hidden: usize },
}

impl Arch {
    pub fn n_features(&self) -> usize {
        match *self {
            Arch::Logistic { n_features } => n_features,
            Arch::Mlp { n_features, .. } => n_features,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Arch::Logistic { n_features } => n_features + 1,
            // W1 (d x h) + b1 (h) + w2 (h) + b2 (1)
            Arch::Mlp { n_features, hidden } => n_features * hidden + hidden + hidden + 1,
        }
    }
}

/// The shared model: a flat parameter vector plus its architecture and a
/// version counter bumped once per aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub params: Vec<f64>,
    pub arch: Arch,
    pub version: u64,
}

/// A flat gradient (or model-delta update) aligned with a model's params.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
}

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Evaluation metrics on a labeled dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub auc_roc: f64,
    pub loss: f64,
    /// True when the dataset held a single class, in which case `auc_roc`
    /// is the 0.5 convention value rather than a measurement.
    pub single_class: bool,
}

/// Initialize a model: logistic weights start at zero; MLP weights are drawn
/// uniformly in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]` per layer, deterministic
/// in `seed`.
pub fn init_model(arch: Arch, seed: u64) -> GlobalModel {
    let params = match arch {
        Arch::Logistic { n_features } => vec![0.0; n_features + 1],
        Arch::Mlp { n_features, hidden } => {
            let mut rng = seeded(seed, Stream::ModelInit);
            let mut params = Vec::with_capacity(arch.param_count());
            let bound1 = 1.0 / (n_features as f64).sqrt();
            for _ in 0..n_features * hidden + hidden {
                params.push(rng.random_range(-bound1..=bound1));
            }
            let bound2 = 1.0 / (hidden as f64).sqrt();
            for _ in 0..hidden + 1 {
                params.push(rng.random_range(-bound2..=bound2));
            }
            params
        }
    };
    GlobalModel { params, arch, version: 0 }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy from the logit.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

/// Forward pass returning the logit; for MLPs also fills `hidden_out` with
/// the tanh activations needed by backprop.
fn forward(model: &GlobalModel, x: &[f64], hidden_out: &mut Vec<f64>) -> f64 {
    match model.arch {
        Arch::Logistic { n_features } => {
            let w = &model.params[..n_features];
            let b = model.params[n_features];
            w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + b
        }
        Arch::Mlp { n_features, hidden } => {
            let (w1, rest) = model.params.split_at(n_features * hidden);
            let (b1, rest) = rest.split_at(hidden);
            let (w2, b2) = rest.split_at(hidden);
            hidden_out.clear();
            for j in 0..hidden {
                let mut z = b1[j];
                for (i, xi) in x.iter().enumerate() {
                    z += w1[i * hidden + j] * xi;
                }
                hidden_out.push(z.tanh());
            }
            hidden_out
                .iter()
                .zip(w2)
                .map(|(a, w)| a * w)
                .sum::<f64>()
                + b2[0]
        }
    }
}

/// Mean binary cross-entropy over `batch` and its exact gradient.
pub fn loss_and_gradient(
    model: &GlobalModel,
    data: &Dataset,
    batch: &[usize],
) -> Result<(f64, GradientVector)> {
    if batch.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    if data.n_features() != model.arch.n_features() {
        return Err(Error::Shape(format!(
            "batch has {} features, model expects {}",
            data.n_features(),
            model.arch.n_features()
        )));
    }
    let mut grad = vec![0.0; model.params.len()];
    let mut loss = 0.0;
    let mut hidden = Vec::new();
    let scale = 1.0 / batch.len() as f64;

    for &i in batch {
        let x = data.row(i);
        let y = data.label(i) as f64;
        let z = forward(model, x, &mut hidden);
        loss += bce_from_logit(z, y) * scale;
        let dz = (sigmoid(z) - y) * scale;
        match model.arch {
            Arch::Logistic { n_features } => {
                for (j, xi) in x.iter().enumerate() {
                    grad[j] += dz * xi;
                }
                grad[n_features] += dz;
            }
            Arch::Mlp { n_features, hidden: h } => {
                let w2_off = n_features * h + h;
                for j in 0..h {
                    let a = hidden[j];
                    // output layer
                    grad[w2_off + j] += dz * a;
                    // hidden pre-activation
                    let da = dz * model.params[w2_off + j];
                    let dzj = da * (1.0 - a * a);
                    for (i_in, xi) in x.iter().enumerate() {
                        grad[i_in * h + j] += dzj * xi;
                    }
                    grad[n_features * h + j] += dzj;
                }
                grad[w2_off + h] += dz;
            }
        }
    }
    Ok((loss, GradientVector { values: grad }))
}

/// One SGD step: `params' = params - lr * update`. The version counter is
/// untouched; it bumps only at aggregation.
pub fn apply_update(model: &GlobalModel, update: &GradientVector, lr: f64) -> Result<GlobalModel> {
    if update.values.len() != model.params.len() {
        return Err(Error::Shape(format!(
            "update has {} entries, model has {}",
            update.values.len(),
            model.params.len()
        )));
    }
    let params = model
        .params
        .iter()
        .zip(&update.values)
        .map(|(p, u)| p - lr * u)
        .collect();
    Ok(GlobalModel { params, arch: model.arch, version: model.version })
}

/// Classifier scores sigma(logit) for every sample.
pub fn scores(model: &GlobalModel, data: &Dataset) -> Vec<f64> {
    let mut hidden = Vec::new();
    (0..data.n_samples())
        .map(|i| sigmoid(forward(model, data.row(i), &mut hidden)))
        .collect()
}

/// AUC-ROC via the Mann-Whitney rank statistic, ties counted 1/2.
/// Returns `(0.5, true)` when only one class is present.
pub fn auc_roc(score_values: &[f64], labels: &[u8]) -> (f64, bool) {
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return (0.5, true);
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| score_values[a].partial_cmp(&score_values[b]).unwrap());

    // Average ranks within tie groups (1-indexed).
    let n = order.len();
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && score_values[order[j]] == score_values[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &sample in &order[i..j] {
            if labels[sample] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let p = n_pos as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    ((u / (p * n_neg as f64)).clamp(0.0, 1.0), false)
}

/// Accuracy at `threshold`, AUC-ROC, and mean loss on `dataset`.
pub fn evaluate(model: &GlobalModel, dataset: &Dataset, threshold: f64) -> Result<EvalReport> {
    if dataset.n_samples() == 0 {
        return Err(Error::Parameter("cannot evaluate on an empty dataset".into()));
    }
    if dataset.n_features() != model.arch.n_features() {
        return Err(Error::Shape(format!(
            "dataset has {} features, model expects {}",
            dataset.n_features(),
            model.arch.n_features()
        )));
    }
    let s = scores(model, dataset);
    let correct = s
        .iter()
        .zip(dataset.labels())
        .filter(|(si, &y)| (**si >= threshold) == (y == 1))
        .count();
    let accuracy = correct as f64 / dataset.n_samples() as f64;
    let (auc, single_class) = auc_roc(&s, dataset.labels());
    let batch: Vec<usize> = (0..dataset.n_samples()).collect();
    let (loss, _) = loss_and_gradient(model, dataset, &batch)?;
    Ok(EvalReport { accuracy, auc_roc: auc, loss, single_class })
}
