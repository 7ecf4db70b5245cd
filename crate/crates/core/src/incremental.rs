//! Adding documents: optimize a new row of `V`, verify it, restart on
//! failure, commit.
//!
//! A document is *feasible* when its vector strictly outscores every
//! existing row for its own representative query, and strictly stays below
//! every existing row's own score `d_j` for that row's representative query.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::index::{representative_query, DocId, Embedding, IndexState};
use crate::lbfgs::{minimize, OptimizerConfig};
use crate::linalg;
use crate::objective::{max_existing_score, Hyperparams, ObjectiveContext};

/// Restarts allowed after the first attempt.
pub const MAX_RESTARTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AddReport {
    pub doc_id: DocId,
    pub feasible: bool,
    /// Optimizer iterations summed over all attempts.
    pub iterations: usize,
    pub restarts: u32,
    pub final_loss: f64,
    /// `min_j (d_j − z_j·v)` over rows present before the addition.
    pub min_old_margin: f64,
    /// `q̄·v − max_j q̄·v_j` over rows present before the addition.
    pub new_margin: f64,
    /// Every attempt stopped on the update-norm rule rather than the
    /// iteration cap.
    pub converged_by_tol: bool,
    pub wall_millis: f64,
}

impl AddReport {
    /// Equality on everything except wall time.
    pub fn same_outcome(&self, other: &AddReport) -> bool {
        self.doc_id == other.doc_id
            && self.feasible == other.feasible
            && self.iterations == other.iterations
            && self.restarts == other.restarts
            && self.final_loss.to_bits() == other.final_loss.to_bits()
            && self.min_old_margin.to_bits() == other.min_old_margin.to_bits()
            && self.new_margin.to_bits() == other.new_margin.to_bits()
            && self.converged_by_tol == other.converged_by_tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    pub new_margin: f64,
    pub min_old_margin: f64,
}

/// Checks a candidate vector against every current row. On an empty index
/// both margins are `+∞` and the check passes vacuously.
pub fn check_feasibility(state: &IndexState, v: &[f32], q_bar: &[f32]) -> Result<Feasibility> {
    let c = if state.is_empty() {
        f64::NEG_INFINITY
    } else {
        max_existing_score(state.vectors(), q_bar)?
    };
    feasibility_with_max(state, v, q_bar, c)
}

fn feasibility_with_max(state: &IndexState, v: &[f32], q_bar: &[f32], c: f64) -> Result<Feasibility> {
    for x in [v, q_bar] {
        if x.len() != state.dim() {
            return Err(Error::DimensionMismatch {
                expected: state.dim(),
                got: x.len(),
            });
        }
    }
    let new_margin = linalg::dot(q_bar, v) - c;
    let mut min_old_margin = f64::INFINITY;
    state.queries().for_each_row(|j, z| {
        let m = f64::from(state.diag(j)) - linalg::dot(z, v);
        min_old_margin = min_old_margin.min(m);
    });
    Ok(Feasibility {
        feasible: new_margin > 0.0 && min_old_margin > 0.0,
        new_margin,
        min_old_margin,
    })
}

/// Margins for restart `attempt` (1-based): both shrink by `0.5^attempt`
/// relative to `hp`; the weights are kept. Also returns a fresh init seed.
pub fn restart_policy(attempt: u32, hp: &Hyperparams, seed: u64) -> Result<(Hyperparams, u64)> {
    if attempt == 0 || attempt > MAX_RESTARTS {
        return Err(Error::AttemptOutOfRange {
            attempt,
            max: MAX_RESTARTS,
        });
    }
    let scale = 0.5f64.powi(attempt as i32);
    let next = Hyperparams {
        gamma1: hp.gamma1 * scale,
        gamma2: hp.gamma2 * scale,
        ..*hp
    };
    let mut fresh = derive_seed(seed, u64::from(attempt));
    if fresh == seed {
        fresh = fresh.wrapping_add(1);
    }
    Ok((next, fresh))
}

/// SplitMix64 finalizer over `seed` and a stream index.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `N(0, 1/h)` per coordinate, so `‖v₀‖ ≈ 1`.
pub fn random_init(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0 / (dim.max(1) as f64).sqrt()).expect("finite std");
    (0..dim).map(|_| normal.sample(&mut rng)).collect()
}

/// An optimized, verified but not yet committed document vector.
#[derive(Debug, Clone)]
pub struct Placement {
    pub doc_id: String,
    pub q_bar: Embedding,
    pub vector: Vec<f32>,
    pub feasible: bool,
    pub iterations: usize,
    pub restarts: u32,
    pub final_loss: f64,
    pub min_old_margin: f64,
    pub new_margin: f64,
    pub converged_by_tol: bool,
    started: Instant,
}

impl Placement {
    /// Appends the vector to `state`. `state` must be the state the
    /// placement was computed against (or an unmodified clone of it).
    pub fn commit(self, state: &mut IndexState) -> Result<AddReport> {
        let doc_id = state.append_document(&self.doc_id, &self.vector, &self.q_bar)?;
        Ok(AddReport {
            doc_id,
            feasible: self.feasible,
            iterations: self.iterations,
            restarts: self.restarts,
            final_loss: self.final_loss,
            min_old_margin: self.min_old_margin,
            new_margin: self.new_margin,
            converged_by_tol: self.converged_by_tol,
            wall_millis: self.started.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// Seed used for the document that will land in row `row`.
pub fn document_seed(seed: u64, row: usize) -> u64 {
    derive_seed(seed, row as u64)
}

/// Runs the optimization for one document against `state` without
/// modifying it.
pub fn plan_document<E: AsRef<[f32]>>(
    state: &IndexState,
    doc_id: &str,
    query_embeddings: &[E],
    hp: &Hyperparams,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<Placement> {
    let started = Instant::now();
    let q_bar = validate_document(state, doc_id, query_embeddings)?;
    hp.validate()?;
    cfg.validate()?;

    let c = if state.is_empty() {
        f64::NEG_INFINITY
    } else {
        max_existing_score(state.vectors(), &q_bar)?
    };

    let mut attempt_hp = *hp;
    let mut attempt_seed = document_seed(seed, state.len());
    let mut iterations = 0;
    let mut all_converged = true;
    let mut best: Option<(f64, Candidate)> = None;

    for attempt in 0..=MAX_RESTARTS {
        if attempt > 0 {
            (attempt_hp, attempt_seed) = restart_policy(attempt, hp, attempt_seed)?;
        }
        let ctx = ObjectiveContext::with_max_score(state, &q_bar, c, attempt_hp)?;
        let x0 = random_init(state.dim(), attempt_seed);
        let res = minimize(&ctx, &x0, cfg)?;
        iterations += res.iterations;
        all_converged &= res.converged_by_tol;

        let vector = linalg::to_f32(&res.x_star);
        let feas = feasibility_with_max(state, &vector, &q_bar, c)?;
        let candidate = Candidate {
            vector,
            feas,
            final_loss: res.final_value,
            restarts: attempt,
        };
        if feas.feasible {
            best = Some((f64::NEG_INFINITY, candidate));
            break;
        }
        // Attempts use different margins; rank them under the caller's hp.
        let base_loss = if attempt == 0 {
            res.final_value
        } else {
            ObjectiveContext::with_max_score(state, &q_bar, c, *hp)?.total_loss(&res.x_star)
        };
        if best.as_ref().map_or(true, |(l, _)| base_loss < *l) {
            best = Some((base_loss, candidate));
        }
    }

    let (_, chosen) = best.expect("at least one attempt runs");
    let restarts = if chosen.feas.feasible {
        chosen.restarts
    } else {
        MAX_RESTARTS
    };
    Ok(Placement {
        doc_id: doc_id.to_owned(),
        q_bar,
        vector: chosen.vector,
        feasible: chosen.feas.feasible,
        iterations,
        restarts,
        final_loss: chosen.final_loss,
        min_old_margin: chosen.feas.min_old_margin,
        new_margin: chosen.feas.new_margin,
        converged_by_tol: all_converged,
        started,
    })
}

struct Candidate {
    vector: Vec<f32>,
    feas: Feasibility,
    final_loss: f64,
    restarts: u32,
}

fn validate_document<E: AsRef<[f32]>>(
    state: &IndexState,
    doc_id: &str,
    query_embeddings: &[E],
) -> Result<Embedding> {
    if state.row_of(doc_id).is_some() {
        return Err(Error::DuplicateId(doc_id.to_owned()));
    }
    let q_bar = representative_query(query_embeddings)?;
    if q_bar.dim() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            got: q_bar.dim(),
        });
    }
    Ok(q_bar)
}

/// Optimizes and commits one document.
pub fn add_document<E: AsRef<[f32]>>(
    state: &mut IndexState,
    doc_id: &str,
    query_embeddings: &[E],
    hp: &Hyperparams,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<AddReport> {
    plan_document(state, doc_id, query_embeddings, hp, cfg, seed)?.commit(state)
}

/// A document waiting to be indexed.
#[derive(Debug, Clone, PartialEq)]
pub struct NewDocument {
    pub doc_id: String,
    pub queries: Vec<Embedding>,
}

/// Adds documents strictly in order; each sees all earlier ones. Ids and
/// dimensions are validated for the whole batch before anything is added.
pub fn add_stream(
    state: &mut IndexState,
    docs: &[NewDocument],
    hp: &Hyperparams,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<Vec<AddReport>> {
    let mut seen = std::collections::HashSet::with_capacity(docs.len());
    for doc in docs {
        if !seen.insert(doc.doc_id.as_str()) {
            return Err(Error::DuplicateId(doc.doc_id.clone()));
        }
        validate_document(state, &doc.doc_id, &doc.queries)?;
    }
    docs.iter()
        .map(|doc| add_document(state, &doc.doc_id, &doc.queries, hp, cfg, seed))
        .collect()
}
