//! Synthetic embedding corpora: every document is a random unit-norm
//! center and its queries are noisy, renormalized copies of it.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use incindex_core::index::Matrix;
use incindex_core::store::{self, QueryKind, QueryRecord, Split};
use incindex_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_docs: usize,
    pub dim: usize,
    /// Training queries per document.
    pub queries_per_doc: usize,
    /// When set, each document draws its training-query count uniformly
    /// from `queries_per_doc..=max`.
    pub max_queries_per_doc: Option<usize>,
    pub val_per_doc: usize,
    pub test_per_doc: usize,
    /// Expected norm of the noise added to the center before
    /// renormalization.
    pub cluster_std: f64,
    pub initial_fraction: f64,
    pub new_fraction: f64,
    pub tune_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_docs: 2000,
            dim: 64,
            queries_per_doc: 5,
            max_queries_per_doc: None,
            val_per_doc: 2,
            test_per_doc: 1,
            cluster_std: 0.15,
            initial_fraction: 0.90,
            new_fraction: 0.09,
            tune_fraction: 0.01,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fractions = [self.initial_fraction, self.new_fraction, self.tune_fraction];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
            || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidConfig(format!(
                "split fractions {fractions:?} must lie in [0, 1] and sum to 1"
            )));
        }
        if self.queries_per_doc == 0 {
            return Err(Error::InvalidConfig("queries_per_doc must be >= 1".into()));
        }
        if self.max_queries_per_doc.is_some_and(|m| m < self.queries_per_doc) {
            return Err(Error::InvalidConfig(
                "max_queries_per_doc is below queries_per_doc".into(),
            ));
        }
        if self.dim == 0 {
            return Err(Error::InvalidConfig("dim must be >= 1".into()));
        }
        if !(self.cluster_std >= 0.0 && self.cluster_std.is_finite()) {
            return Err(Error::InvalidConfig("cluster_std must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Document counts for the initial, new and tuning parts.
    pub fn part_sizes(&self) -> (usize, usize, usize) {
        let n = self.n_docs as f64;
        let initial = (n * self.initial_fraction).round() as usize;
        let new = ((n * self.new_fraction).round() as usize).min(self.n_docs - initial);
        (initial, new, self.n_docs - initial - new)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Part {
    Initial,
    New,
    Tune,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Initial, Part::New, Part::Tune];

    pub fn name(self) -> &'static str {
        match self {
            Part::Initial => "initial",
            Part::New => "new",
            Part::Tune => "tune",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticQuery {
    pub embedding: Vec<f32>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDoc {
    pub doc_id: String,
    pub center: Vec<f32>,
    pub queries: Vec<SyntheticQuery>,
}

/// Documents of each part, in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub dim: usize,
    pub initial: Vec<SyntheticDoc>,
    pub new: Vec<SyntheticDoc>,
    pub tune: Vec<SyntheticDoc>,
}

impl SyntheticCorpus {
    pub fn part(&self, part: Part) -> &[SyntheticDoc] {
        match part {
            Part::Initial => &self.initial,
            Part::New => &self.new,
            Part::Tune => &self.tune,
        }
    }
}

fn unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn to_unit_f32(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let per_coord = spec.cluster_std / (spec.dim as f64).sqrt();
    let noise = rand_distr::Normal::new(0.0, per_coord).expect("finite std");

    let mut docs = Vec::with_capacity(spec.n_docs);
    for i in 0..spec.n_docs {
        let center = unit(&mut rng, spec.dim);
        let n_train = match spec.max_queries_per_doc {
            Some(max) => rng.gen_range(spec.queries_per_doc..=max),
            None => spec.queries_per_doc,
        };
        let splits = std::iter::repeat(Split::Train)
            .take(n_train)
            .chain(std::iter::repeat(Split::Val).take(spec.val_per_doc))
            .chain(std::iter::repeat(Split::Test).take(spec.test_per_doc));
        let queries = splits
            .map(|split| {
                let mut q = center.clone();
                if spec.cluster_std > 0.0 {
                    q.iter_mut().for_each(|x| *x += noise.sample(&mut rng));
                }
                SyntheticQuery {
                    embedding: to_unit_f32(&q),
                    split,
                }
            })
            .collect();
        docs.push(SyntheticDoc {
            doc_id: format!("doc{i:06}"),
            center: to_unit_f32(&center),
            queries,
        });
    }

    docs.shuffle(&mut rng);
    let (n_initial, n_new, _) = spec.part_sizes();
    let tune = docs.split_off(n_initial + n_new);
    let new = docs.split_off(n_initial);
    Ok(SyntheticCorpus {
        dim: spec.dim,
        initial: docs,
        new,
        tune,
    })
}

/// Embedding matrix and manifest rows for a list of documents.
pub fn to_files(docs: &[SyntheticDoc], dim: usize) -> Result<(Matrix, Vec<QueryRecord>)> {
    let mut data = Vec::new();
    let mut records = Vec::new();
    for doc in docs {
        for q in &doc.queries {
            records.push(QueryRecord {
                row_index: records.len(),
                doc_id: doc.doc_id.clone(),
                kind: if q.split == Split::Train {
                    QueryKind::Generated
                } else {
                    QueryKind::Natural
                },
                split: q.split,
            });
            data.extend_from_slice(&q.embedding);
        }
    }
    Ok((Matrix::new(records.len(), dim, data)?, records))
}

/// Writes `<part>.idsi` and `<part>.tsv` for each part into `dir`.
pub fn write_corpus(corpus: &SyntheticCorpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for part in Part::ALL {
        let (matrix, records) = to_files(corpus.part(part), corpus.dim)?;
        store::write_embedding_matrix(&matrix, dir.join(format!("{}.idsi", part.name())))?;
        store::write_query_manifest(&records, dir.join(format!("{}.tsv", part.name())))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_parts() {
        let spec = SyntheticSpec {
            n_docs: 10,
            dim: 8,
            queries_per_doc: 3,
            ..Default::default()
        };
        let c = generate(&spec).unwrap();
        let all: Vec<&SyntheticDoc> = c.initial.iter().chain(&c.new).chain(&c.tune).collect();
        assert_eq!(all.len(), 10);
        let train: usize = all
            .iter()
            .map(|d| d.queries.iter().filter(|q| q.split == Split::Train).count())
            .sum();
        assert_eq!(train, 30);
        assert_eq!((c.initial.len(), c.new.len(), c.tune.len()), (9, 1, 0));
    }

    #[test]
    fn zero_noise_queries_equal_center() {
        let c = generate(&SyntheticSpec {
            n_docs: 5,
            dim: 4,
            cluster_std: 0.0,
            ..Default::default()
        })
        .unwrap();
        for d in &c.initial {
            for q in &d.queries {
                assert_eq!(q.embedding, d.center);
            }
        }
    }

    #[test]
    fn rejects_bad_fractions() {
        let spec = SyntheticSpec {
            initial_fraction: 0.8,
            ..Default::default()
        };
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn variable_query_counts_stay_in_range() {
        let c = generate(&SyntheticSpec {
            n_docs: 50,
            dim: 4,
            queries_per_doc: 2,
            max_queries_per_doc: Some(4),
            ..Default::default()
        })
        .unwrap();
        for d in &c.initial {
            let n = d.queries.iter().filter(|q| q.split == Split::Train).count();
            assert!((2..=4).contains(&n));
        }
    }
}
