//! Adding a stream of documents and evaluating at checkpoints.

use std::collections::HashSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use incindex_core::{
    add_stream, evaluate_split, AddReport, Error, Hyperparams, IndexState, LabeledQuery,
    MetricsReport, NewDocument, OptimizerConfig, Result,
};

/// One CSV row; field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamCheckpointRow {
    pub docs_added: usize,
    pub hits1_orig: Option<f64>,
    pub hits5_orig: Option<f64>,
    pub hits10_orig: Option<f64>,
    pub mrr10_orig: Option<f64>,
    pub hits1_new: Option<f64>,
    pub hits5_new: Option<f64>,
    pub hits10_new: Option<f64>,
    pub mrr10_new: Option<f64>,
    pub cumulative_add_seconds: f64,
    /// Share of the added documents that met every constraint; 1 before
    /// any document is added.
    pub feasible_fraction: f64,
}

impl StreamCheckpointRow {
    pub fn from_metrics(
        docs_added: usize,
        m: &MetricsReport,
        cumulative_add_seconds: f64,
        feasible_fraction: f64,
    ) -> Self {
        Self {
            docs_added,
            hits1_orig: m.original.map(|p| p.hits1),
            hits5_orig: m.original.map(|p| p.hits5),
            hits10_orig: m.original.map(|p| p.hits10),
            mrr10_orig: m.original.map(|p| p.mrr10),
            hits1_new: m.new.map(|p| p.hits1),
            hits5_new: m.new.map(|p| p.hits5),
            hits10_new: m.new.map(|p| p.hits10),
            mrr10_new: m.new.map(|p| p.mrr10),
            cumulative_add_seconds,
            feasible_fraction,
        }
    }
}

/// Held-out queries for original documents and for the streamed ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamEval {
    pub original: Vec<LabeledQuery>,
    pub new: Vec<LabeledQuery>,
}

impl StreamEval {
    /// Original-document queries plus the new-document queries whose gold
    /// is already indexed.
    pub fn evaluate(&self, state: &IndexState) -> Result<MetricsReport> {
        let mut queries = self.original.clone();
        queries.extend(
            self.new
                .iter()
                .filter(|q| state.row_of(&q.gold).is_some_and(|row| !state.is_original(row)))
                .cloned(),
        );
        evaluate_split(state, &queries)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutcome {
    pub rows: Vec<StreamCheckpointRow>,
    pub reports: Vec<AddReport>,
}

/// Adds `docs` in order and evaluates after the given cumulative counts.
/// A checkpoint of 0 evaluates before anything is added.
pub fn run_stream(
    state: &mut IndexState,
    docs: &[NewDocument],
    checkpoints: &[usize],
    hp: &Hyperparams,
    cfg: &OptimizerConfig,
    seed: u64,
    eval: &StreamEval,
) -> Result<StreamOutcome> {
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "checkpoints must be strictly increasing".into(),
        ));
    }
    if let Some(&last) = checkpoints.last() {
        if last > docs.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint {last} exceeds the {} documents in the stream",
                docs.len()
            )));
        }
    }
    let mut ids = HashSet::with_capacity(docs.len());
    if let Some(dup) = docs.iter().find(|d| !ids.insert(d.doc_id.as_str())) {
        return Err(Error::DuplicateId(dup.doc_id.clone()));
    }

    let mut reports: Vec<AddReport> = Vec::with_capacity(docs.len());
    let mut rows = Vec::with_capacity(checkpoints.len());
    let mut seconds = 0.0;
    for &cp in checkpoints {
        let batch = add_stream(state, &docs[reports.len()..cp], hp, cfg, seed)?;
        seconds += batch.iter().map(|r| r.wall_millis / 1e3).sum::<f64>();
        reports.extend(batch);
        let feasible = if reports.is_empty() {
            1.0
        } else {
            reports.iter().filter(|r| r.feasible).count() as f64 / reports.len() as f64
        };
        let metrics = eval.evaluate(state)?;
        rows.push(StreamCheckpointRow::from_metrics(cp, &metrics, seconds, feasible));
    }
    Ok(StreamOutcome { rows, reports })
}

pub fn write_checkpoint_csv<W: Write>(rows: &[StreamCheckpointRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record([
        "docs_added",
        "hits1_orig",
        "hits5_orig",
        "hits10_orig",
        "mrr10_orig",
        "hits1_new",
        "hits5_new",
        "hits10_new",
        "mrr10_new",
        "cumulative_add_seconds",
        "feasible_fraction",
    ])
    .map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}
