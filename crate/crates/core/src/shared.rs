//! A single-writer, many-reader handle on the live index.
//!
//! Readers take an `Arc` of the last committed [`IndexState`] without
//! locking. The writer optimizes against that same committed state, applies
//! the append to a cheap clone and publishes the clone atomically, so a
//! reader never observes a half-added document.

use std::sync::{Arc, Mutex};

use arc_swap::ArcSwap;

use crate::error::Result;
use crate::incremental::{plan_document, AddReport};
use crate::index::IndexState;
use crate::lbfgs::OptimizerConfig;
use crate::objective::Hyperparams;

pub struct SharedIndex {
    current: ArcSwap<IndexState>,
    writer: Mutex<()>,
}

impl SharedIndex {
    pub fn new(state: IndexState) -> Self {
        Self {
            current: ArcSwap::from_pointee(state),
            writer: Mutex::new(()),
        }
    }

    /// The last committed state.
    pub fn load(&self) -> Arc<IndexState> {
        self.current.load_full()
    }

    /// Optimizes and publishes one document. Concurrent callers are
    /// serialized; readers keep seeing the previous state until the
    /// new one is published.
    pub fn add_document<E: AsRef<[f32]>>(
        &self,
        doc_id: &str,
        query_embeddings: &[E],
        hp: &Hyperparams,
        cfg: &OptimizerConfig,
        seed: u64,
    ) -> Result<AddReport> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let base = self.current.load_full();
        let placement = plan_document(&base, doc_id, query_embeddings, hp, cfg, seed)?;
        let mut next = IndexState::clone(&base);
        let report = placement.commit(&mut next)?;
        self.current.store(Arc::new(next));
        Ok(report)
    }

    /// Swaps in a different state, e.g. one loaded from a snapshot.
    pub fn replace(&self, state: IndexState) {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        self.current.store(Arc::new(state));
    }
}

impl std::fmt::Debug for SharedIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = self.current.load();
        f.debug_struct("SharedIndex")
            .field("len", &s.len())
            .field("dim", &s.dim())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{Embedding, Matrix};

    #[test]
    fn readers_keep_their_snapshot() {
        let m = Matrix::from_rows(&[[1.0f32, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let shared = SharedIndex::new(IndexState::new(&m, &m, &["a", "b"]).unwrap());
        let before = shared.load();
        let report = shared
            .add_document(
                "c",
                &[Embedding::new(vec![0.0, 0.0, 1.0]).unwrap()],
                &Hyperparams::default(),
                &OptimizerConfig::default(),
                1,
            )
            .unwrap();
        assert_eq!(report.doc_id.row, 2);
        assert_eq!(before.len(), 2);
        assert_eq!(shared.load().len(), 3);
        assert!(shared
            .add_document(
                "c",
                &[Embedding::new(vec![0.0, 0.0, 1.0]).unwrap()],
                &Hyperparams::default(),
                &OptimizerConfig::default(),
                1,
            )
            .is_err());
        assert_eq!(shared.load().len(), 3);
    }
}
