//! Incremental document-vector index.
//!
//! A retrieval index scores a query embedding `q` against stored document
//! vectors by inner product. New documents get a vector by minimizing a
//! hinge-style loss that makes the document win its own representative
//! query while leaving every existing document's top-1 result untouched.

pub mod error;
pub mod incremental;
pub mod index;
pub mod lbfgs;
pub mod linalg;
pub mod objective;
pub mod retrieval;
pub mod shared;
pub mod store;
pub mod tuner;

pub use error::{Error, Result};
pub use incremental::{
    add_document, add_stream, check_feasibility, plan_document, restart_policy, AddReport,
    Feasibility, NewDocument, Placement, MAX_RESTARTS,
};
pub use index::{representative_query, DocId, Embedding, IndexState, Matrix, RowStore};
pub use lbfgs::{minimize, MinimizeResult, Objective, OptimizerConfig};
pub use objective::{Hyperparams, LossVariant, ObjectiveContext};
pub use retrieval::{
    evaluate_split, f_beta_target, hits_at_k, mrr_at_k, top_k, Hit, LabeledQuery, MetricsReport,
    RankedResult, SplitMetrics,
};
pub use shared::SharedIndex;
pub use tuner::{tune, tune_with_target, SearchSpace, TrialRecord, TuneConfig, TuneOutcome};
