//! Query embeddings paired with their manifest.

use std::collections::HashMap;
use std::path::Path;

use incindex_core::index::{Embedding, Matrix};
use incindex_core::store::{self, QueryRecord, Split};
use incindex_core::{Error, LabeledQuery, NewDocument, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub matrix: Matrix,
    pub records: Vec<QueryRecord>,
}

impl QuerySet {
    pub fn new(matrix: Matrix, records: Vec<QueryRecord>) -> Result<Self> {
        if let Some(r) = records.iter().find(|r| r.row_index >= matrix.rows()) {
            return Err(Error::InvalidArgument(format!(
                "manifest row {} out of range for {} embeddings",
                r.row_index,
                matrix.rows()
            )));
        }
        Ok(Self { matrix, records })
    }

    pub fn load(embeddings: &Path, manifest: &Path) -> Result<Self> {
        let matrix = store::read_embedding_matrix(embeddings)?;
        let records = store::read_query_manifest(manifest, matrix.rows())?;
        Self::new(matrix, records)
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Doc ids in order of first appearance.
    pub fn doc_ids(&self) -> Vec<String> {
        let mut seen = HashMap::new();
        let mut order = Vec::new();
        for r in &self.records {
            if seen.insert(r.doc_id.as_str(), ()).is_none() {
                order.push(r.doc_id.clone());
            }
        }
        order
    }

    /// Every document in arrival order with its queries from `split`;
    /// documents without such queries get an empty list.
    pub fn documents(&self, split: Split) -> Result<Vec<NewDocument>> {
        let mut by_doc: HashMap<&str, Vec<Embedding>> = HashMap::new();
        for r in self.records.iter().filter(|r| r.split == split) {
            by_doc
                .entry(r.doc_id.as_str())
                .or_default()
                .push(Embedding::new(self.matrix.row(r.row_index).to_vec())?);
        }
        Ok(self
            .doc_ids()
            .into_iter()
            .map(|doc_id| NewDocument {
                queries: by_doc.remove(doc_id.as_str()).unwrap_or_default(),
                doc_id,
            })
            .collect())
    }

    /// Queries from any of `splits`, labeled with their gold document.
    pub fn labeled(&self, splits: &[Split]) -> Vec<LabeledQuery> {
        self.records
            .iter()
            .filter(|r| splits.contains(&r.split))
            .map(|r| LabeledQuery {
                embedding: self.matrix.row(r.row_index).to_vec(),
                gold: r.doc_id.clone(),
            })
            .collect()
    }
}
