//! Random search over `(λ1, λ2, γ1, γ2)`.
//!
//! Every trial adds the tuning documents to its own clone of the base index
//! and scores MRR@10 on held-out queries for the tuning documents (`y_tune`)
//! and for the original documents (`y_orig`).

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::incremental::{add_stream, derive_seed, NewDocument};
use crate::index::IndexState;
use crate::lbfgs::OptimizerConfig;
use crate::objective::{Hyperparams, LossVariant};
use crate::retrieval::{f_beta_target, score_queries, LabeledQuery};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSpace {
    /// Uniform bounds.
    pub lambda1: (f64, f64),
    /// Uniform bounds.
    pub gamma1: (f64, f64),
    /// Uniform bounds.
    pub gamma2: (f64, f64),
    /// Log-uniform bounds.
    pub lambda2: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            lambda1: (0.05, 0.95),
            gamma1: (0.0, 10.0),
            gamma2: (0.0, 10.0),
            lambda2: (1e-8, 1e-3),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let (l1_lo, l1_hi) = self.lambda1;
        let (l2_lo, l2_hi) = self.lambda2;
        let ok = l1_lo > 0.0
            && l1_hi < 1.0
            && l1_lo <= l1_hi
            && self.gamma1.0 >= 0.0
            && self.gamma1.0 <= self.gamma1.1
            && self.gamma2.0 >= 0.0
            && self.gamma2.0 <= self.gamma2.1
            && l2_lo > 0.0
            && l2_lo <= l2_hi;
        let finite = [l1_lo, l1_hi, l2_lo, l2_hi, self.gamma1.1, self.gamma2.1]
            .iter()
            .all(|x| x.is_finite());
        if ok && finite {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid search space {self:?}")))
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Margins must be strictly positive; a draw of exactly zero is redrawn.
fn positive_uniform<R: Rng>(rng: &mut R, bounds: (f64, f64)) -> f64 {
    loop {
        let x = uniform(rng, bounds);
        if x > 0.0 {
            return x;
        }
    }
}

/// One draw per field from its distribution.
pub fn sample_config<R: Rng>(rng: &mut R, space: &SearchSpace, variant: LossVariant) -> Hyperparams {
    let lambda1 = uniform(rng, space.lambda1);
    let gamma1 = positive_uniform(rng, space.gamma1);
    let gamma2 = positive_uniform(rng, space.gamma2);
    let (lo, hi) = space.lambda2;
    let lambda2 = uniform(rng, (lo.ln(), hi.ln())).exp().clamp(lo, hi);
    Hyperparams {
        lambda1,
        lambda2,
        gamma1,
        gamma2,
        loss_variant: variant,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneConfig {
    pub trials: usize,
    pub beta: f64,
    pub seed: u64,
    pub loss_variant: LossVariant,
    pub space: SearchSpace,
    pub optimizer: OptimizerConfig,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            trials: 50,
            beta: 5.0,
            seed: 0,
            loss_variant: LossVariant::default(),
            space: SearchSpace::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub hp: Hyperparams,
    pub y_tune: f64,
    pub y_orig: f64,
    pub y_target: f64,
    pub wall_millis: f64,
    /// Share of tuning documents whose addition met every constraint.
    pub feasible_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub best: Hyperparams,
    pub best_trial: usize,
    pub trials: Vec<TrialRecord>,
}

/// Everything a trial is scored on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialScores {
    pub y_tune: f64,
    pub y_orig: f64,
    pub feasible_fraction: f64,
    pub wall_millis: f64,
}

/// Tunes with the F-beta target of the two MRR@10 scores.
pub fn tune(
    base: &IndexState,
    tune_docs: &[NewDocument],
    val_orig: &[LabeledQuery],
    val_tune: &[LabeledQuery],
    cfg: &TuneConfig,
) -> Result<TuneOutcome> {
    let beta = cfg.beta;
    tune_with_target(base, tune_docs, val_orig, val_tune, cfg, |s| {
        f_beta_target(s.y_tune, s.y_orig, beta)
    })
}

/// Tunes with a caller-supplied target; the highest target wins, ties go
/// to the earliest trial.
pub fn tune_with_target<T>(
    base: &IndexState,
    tune_docs: &[NewDocument],
    val_orig: &[LabeledQuery],
    val_tune: &[LabeledQuery],
    cfg: &TuneConfig,
    target: T,
) -> Result<TuneOutcome>
where
    T: Fn(&TrialScores) -> f64,
{
    if tune_docs.is_empty() {
        return Err(Error::Empty("tuning documents"));
    }
    if cfg.trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    if !(cfg.beta > 0.0 && cfg.beta.is_finite()) {
        return Err(Error::InvalidConfig(format!("beta must be positive, got {}", cfg.beta)));
    }
    cfg.space.validate()?;
    cfg.optimizer.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.trials);
    let mut best: Option<(f64, usize)> = None;
    for trial in 0..cfg.trials {
        let hp = sample_config(&mut rng, &cfg.space, cfg.loss_variant);
        let started = Instant::now();
        let mut state = base.clone();
        let reports = add_stream(
            &mut state,
            tune_docs,
            &hp,
            &cfg.optimizer,
            derive_seed(cfg.seed, trial as u64),
        )?;
        let y_orig = score_queries(&state, val_orig)?.mrr10;
        let y_tune = score_queries(&state, val_tune)?.mrr10;
        let scores = TrialScores {
            y_tune,
            y_orig,
            feasible_fraction: reports.iter().filter(|r| r.feasible).count() as f64
                / reports.len() as f64,
            wall_millis: started.elapsed().as_secs_f64() * 1e3,
        };
        let y_target = target(&scores);
        if best.map_or(true, |(b, _)| y_target > b) {
            best = Some((y_target, trial));
        }
        records.push(TrialRecord {
            trial,
            hp,
            y_tune,
            y_orig,
            y_target,
            wall_millis: scores.wall_millis,
            feasible_fraction: scores.feasible_fraction,
        });
    }
    let (_, best_trial) = best.expect("at least one trial");
    Ok(TuneOutcome {
        best: records[best_trial].hp,
        best_trial,
        trials: records,
    })
}

#[derive(Serialize)]
struct TrialRow {
    trial: usize,
    lambda1: f64,
    lambda2: f64,
    gamma1: f64,
    gamma2: f64,
    y_tune: f64,
    y_orig: f64,
    y_target: f64,
    wall_millis: f64,
}

/// Writes the trial log as CSV with a header row.
pub fn write_trial_csv<W: Write>(records: &[TrialRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record([
            "trial", "lambda1", "lambda2", "gamma1", "gamma2", "y_tune", "y_orig", "y_target",
            "wall_millis",
        ])
        .map_err(csv_error)?;
    }
    for r in records {
        w.serialize(TrialRow {
            trial: r.trial,
            lambda1: r.hp.lambda1,
            lambda2: r.hp.lambda2,
            gamma1: r.hp.gamma1,
            gamma2: r.hp.gamma2,
            y_tune: r.y_tune,
            y_orig: r.y_orig,
            y_target: r.y_target,
            wall_millis: r.wall_millis,
        })
        .map_err(csv_error)?;
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
