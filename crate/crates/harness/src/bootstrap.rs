//! Building the initial index from documents' training queries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use incindex_core::index::{representative_query, IndexState, Matrix};
use incindex_core::{linalg, Error, NewDocument, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearHeadConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Stop once train accuracy has not improved for this many epochs.
    pub patience: usize,
    pub seed: u64,
}

impl Default for LinearHeadConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 0.1,
            patience: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BootstrapMode {
    /// Each document vector is the mean of its training queries.
    ClassMean,
    /// Document vectors are a softmax classifier over training queries.
    LinearHead(LinearHeadConfig),
}

/// `Z` is always the per-document mean of the training queries.
pub fn bootstrap(docs: &[NewDocument], dim: usize, mode: BootstrapMode) -> Result<IndexState> {
    let mut means = Vec::with_capacity(docs.len() * dim);
    for doc in docs {
        if doc.queries.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "document {:?} has no training queries",
                doc.doc_id
            )));
        }
        let mean = representative_query(&doc.queries)?;
        if mean.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: mean.dim(),
            });
        }
        means.extend_from_slice(&mean);
    }
    let z = Matrix::new(docs.len(), dim, means)?;
    let v = match mode {
        BootstrapMode::ClassMean => z.clone(),
        BootstrapMode::LinearHead(cfg) => train_linear_head(docs, dim, &cfg)?,
    };
    let ids: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
    IndexState::new(&v, &z, &ids)
}

/// Full-batch gradient descent on mean softmax cross-entropy.
pub fn train_linear_head(docs: &[NewDocument], dim: usize, cfg: &LinearHeadConfig) -> Result<Matrix> {
    let n_docs = docs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0 / (dim.max(1) as f64).sqrt()).expect("finite std");
    let mut w: Vec<f64> = (0..n_docs * dim).map(|_| normal.sample(&mut rng)).collect();

    let examples: Vec<(Vec<f64>, usize)> = docs
        .iter()
        .enumerate()
        .flat_map(|(j, d)| d.queries.iter().map(move |q| (linalg::to_f64(q), j)))
        .collect();
    let n = examples.len() as f64;

    let mut best_acc = -1.0;
    let mut stale = 0;
    let mut logits = vec![0.0; n_docs];
    for _ in 0..cfg.epochs {
        let mut grad = vec![0.0; w.len()];
        let mut correct = 0usize;
        for (q, gold) in &examples {
            for (j, l) in logits.iter_mut().enumerate() {
                *l = linalg::dot64(&w[j * dim..(j + 1) * dim], q);
            }
            let top = logits
                .iter()
                .enumerate()
                .fold(0, |best, (j, l)| if *l > logits[best] { j } else { best });
            if top == *gold {
                correct += 1;
            }
            let max = logits[top];
            let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            for (j, l) in logits.iter().enumerate() {
                let p = (l - max).exp() / total - if j == *gold { 1.0 } else { 0.0 };
                linalg::axpy(p / n, q, &mut grad[j * dim..(j + 1) * dim]);
            }
        }
        let acc = correct as f64 / n;
        if acc > best_acc {
            best_acc = acc;
            stale = 0;
        } else {
            stale += 1;
        }
        if acc >= 1.0 || stale >= cfg.patience {
            break;
        }
        linalg::axpy(-cfg.learning_rate, &grad, &mut w);
    }
    Matrix::new(n_docs, dim, linalg::to_f32(&w))
}
