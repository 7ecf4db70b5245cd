//! Loss for placing one new document vector.
//!
//! With `a(v) = c − q̄·v + γ1` (new document must outscore every existing row
//! for its own representative query) and `r_j(v) = z_j·v − d_j + γ2` (the new
//! vector must stay below every existing row's own score):
//!
//! ```text
//! L(v) = λ1·ℓ1(v) + (1 − λ1)·ℓ2(v) + λ2·‖v‖²
//! ℓ1 = max(0, a)^p        ℓ2 = Σ_j max(0, r_j)^p       p = 2 (squared hinge) or 1
//! ```

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{IndexState, RowStore};
use crate::lbfgs::Objective;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    #[default]
    SquaredHinge,
    Hinge,
}

impl LossVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::SquaredHinge => "squared_hinge",
            LossVariant::Hinge => "hinge",
        }
    }
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared_hinge" => Ok(Self::SquaredHinge),
            "hinge" => Ok(Self::Hinge),
            other => Err(Error::InvalidArgument(format!("unknown loss variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Weight of the new-document term; the old-document term gets `1 − λ1`.
    pub lambda1: f64,
    /// L2 weight on the new vector.
    pub lambda2: f64,
    /// Margin for the new document over the best existing score.
    pub gamma1: f64,
    /// Margin kept below each existing document's own score.
    pub gamma2: f64,
    #[serde(default)]
    pub loss_variant: LossVariant,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lambda1: 0.5,
            lambda2: 1e-6,
            gamma1: 0.5,
            gamma2: 0.1,
            loss_variant: LossVariant::SquaredHinge,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidHyperparams(what));
        if !(self.lambda1 > 0.0 && self.lambda1 < 1.0) {
            return bad(format!("lambda1={} not in (0, 1)", self.lambda1));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return bad(format!("lambda2={} must be >= 0", self.lambda2));
        }
        if !(self.gamma1 > 0.0 && self.gamma1.is_finite()) {
            return bad(format!("gamma1={} must be > 0", self.gamma1));
        }
        if !(self.gamma2 > 0.0 && self.gamma2.is_finite()) {
            return bad(format!("gamma2={} must be > 0", self.gamma2));
        }
        Ok(())
    }
}

/// Exact `max_j q̄·v_j` over the stored rows.
pub fn max_existing_score(vectors: &RowStore, q_bar: &[f32]) -> Result<f64> {
    if vectors.is_empty() {
        return Err(Error::Empty("document vectors"));
    }
    if q_bar.len() != vectors.width() {
        return Err(Error::DimensionMismatch {
            expected: vectors.width(),
            got: q_bar.len(),
        });
    }
    let mut best = f64::NEG_INFINITY;
    vectors.for_each_row(|_, row| best = best.max(linalg::dot(row, q_bar)));
    Ok(best)
}

/// Everything the loss needs for one addition; `c` is frozen at construction
/// because `V` does not change while the new vector is optimized.
///
/// [`Objective::evaluate`] keeps an orthonormal basis of every point it has
/// seen together with `z_j·u` for each basis vector `u`. Optimizer iterates
/// stay in the span of the start point, `q̄` and the few `z_j` whose hinge
/// fires, so most evaluations touch only the active rows of `Z` instead of
/// scanning all of it.
#[derive(Debug, Clone)]
pub struct ObjectiveContext<'a> {
    q_bar: Vec<f64>,
    c: f64,
    queries: &'a RowStore,
    diag: Vec<f64>,
    hp: Hyperparams,
    span: RefCell<SpanCache>,
}

/// Basis size at which evaluation falls back to full scans.
const MAX_BASIS: usize = 48;
/// Residual, relative to `‖x‖`, below which `x` counts as inside the span.
const SPAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Default)]
struct SpanCache {
    basis: Vec<Vec<f64>>,
    /// `projections[k][j] = z_j·basis[k]`
    projections: Vec<Vec<f64>>,
    /// Directions to fold in with the next scan.
    pending: Vec<Vec<f64>>,
    disabled: bool,
}

impl SpanCache {
    fn seeded(q_bar: Vec<f64>) -> Self {
        Self {
            pending: vec![q_bar],
            ..Default::default()
        }
    }

    fn coordinates(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut residual = x.to_vec();
        let mut coeffs = Vec::with_capacity(self.basis.len());
        for u in &self.basis {
            let c = linalg::dot64(u, &residual);
            linalg::axpy(-c, u, &mut residual);
            coeffs.push(c);
        }
        // Second sweep against loss of orthogonality.
        for (u, c) in self.basis.iter().zip(coeffs.iter_mut()) {
            let extra = linalg::dot64(u, &residual);
            linalg::axpy(-extra, u, &mut residual);
            *c += extra;
        }
        (coeffs, residual)
    }

    fn extend(&mut self, queries: &RowStore, candidates: Vec<Vec<f64>>) {
        let mut fresh: Vec<Vec<f64>> = Vec::new();
        for mut v in candidates {
            let original = linalg::norm64(&v);
            for _ in 0..2 {
                for u in self.basis.iter().chain(&fresh) {
                    let c = linalg::dot64(u, &v);
                    linalg::axpy(-c, u, &mut v);
                }
            }
            let n = linalg::norm64(&v);
            if n > 1e-10 * original && n > 0.0 {
                v.iter_mut().for_each(|x| *x /= n);
                fresh.push(v);
            }
        }
        if fresh.is_empty() {
            return;
        }
        let mut cols: Vec<Vec<f64>> = (0..fresh.len())
            .map(|_| Vec::with_capacity(queries.len()))
            .collect();
        queries.for_each_row(|_, z| {
            let mut k = 0;
            while k + 1 < fresh.len() {
                let (a, b) = linalg::dot2_mixed(z, &fresh[k], &fresh[k + 1]);
                cols[k].push(a);
                cols[k + 1].push(b);
                k += 2;
            }
            if k < fresh.len() {
                cols[k].push(linalg::dot_mixed(z, &fresh[k]));
            }
        });
        self.basis.extend(fresh);
        self.projections.extend(cols);
    }
}

impl<'a> ObjectiveContext<'a> {
    /// Builds the context, computing `c` over the current rows. On an empty
    /// index `c = −∞` and the new-document term vanishes.
    pub fn new(state: &'a IndexState, q_bar: &[f32], hp: Hyperparams) -> Result<Self> {
        let c = if state.is_empty() {
            f64::NEG_INFINITY
        } else {
            max_existing_score(state.vectors(), q_bar)?
        };
        Self::with_max_score(state, q_bar, c, hp)
    }

    pub fn with_max_score(
        state: &'a IndexState,
        q_bar: &[f32],
        c: f64,
        hp: Hyperparams,
    ) -> Result<Self> {
        if q_bar.len() != state.dim() {
            return Err(Error::DimensionMismatch {
                expected: state.dim(),
                got: q_bar.len(),
            });
        }
        hp.validate()?;
        Ok(Self {
            q_bar: linalg::to_f64(q_bar),
            c,
            queries: state.queries(),
            diag: state
                .diag_store()
                .iter()
                .map(|r| f64::from(r[0]))
                .collect(),
            hp,
            span: RefCell::new(SpanCache::seeded(linalg::to_f64(q_bar))),
        })
    }

    pub fn max_score(&self) -> f64 {
        self.c
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn dim(&self) -> usize {
        self.q_bar.len()
    }

    fn new_doc_arg(&self, v: &[f64]) -> f64 {
        self.c - linalg::dot64(&self.q_bar, v) + self.hp.gamma1
    }

    fn hinge(&self, arg: f64) -> f64 {
        if arg > 0.0 {
            match self.hp.loss_variant {
                LossVariant::SquaredHinge => arg * arg,
                LossVariant::Hinge => arg,
            }
        } else {
            0.0
        }
    }

    /// d/d(arg) of the hinge; zero at the kink.
    fn hinge_slope(&self, arg: f64) -> f64 {
        if arg > 0.0 {
            match self.hp.loss_variant {
                LossVariant::SquaredHinge => 2.0 * arg,
                LossVariant::Hinge => 1.0,
            }
        } else {
            0.0
        }
    }

    pub fn loss_l1(&self, v: &[f64]) -> f64 {
        self.hinge(self.new_doc_arg(v))
    }

    pub fn loss_l2(&self, v: &[f64]) -> f64 {
        let mut sum = 0.0;
        self.queries.for_each_row(|j, z| {
            sum += self.hinge(linalg::dot_mixed(z, v) - self.diag[j] + self.hp.gamma2);
        });
        sum
    }

    pub fn total_loss(&self, v: &[f64]) -> f64 {
        let Hyperparams {
            lambda1, lambda2, ..
        } = self.hp;
        lambda1 * self.loss_l1(v) + (1.0 - lambda1) * self.loss_l2(v) + lambda2 * linalg::dot64(v, v)
    }

    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; v.len()];
        self.value_and_gradient(v, &mut g);
        g
    }

    /// Loss and gradient in one scan over `Z`.
    pub fn value_and_gradient(&self, v: &[f64], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(v.len(), self.dim());
        let Hyperparams {
            lambda1,
            lambda2,
            gamma2,
            ..
        } = self.hp;

        for (g, x) in grad.iter_mut().zip(v) {
            *g = 2.0 * lambda2 * x;
        }
        let a = self.new_doc_arg(v);
        let l1 = self.hinge(a);
        let s1 = self.hinge_slope(a);
        if s1 != 0.0 {
            linalg::axpy(-lambda1 * s1, &self.q_bar, grad);
        }

        let mut l2 = 0.0;
        let w2 = 1.0 - lambda1;
        self.queries.for_each_row(|j, z| {
            let r = linalg::dot_mixed(z, v) - self.diag[j] + gamma2;
            if r > 0.0 {
                l2 += self.hinge(r);
                linalg::axpy_mixed(w2 * self.hinge_slope(r), z, grad);
            }
        });

        lambda1 * l1 + w2 * l2 + lambda2 * linalg::dot64(v, v)
    }
}

impl Objective for ObjectiveContext<'_> {
    fn reset(&self) {
        *self.span.borrow_mut() = SpanCache::seeded(self.q_bar.clone());
    }

    /// Same value as [`ObjectiveContext::value_and_gradient`] up to rounding.
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut span = self.span.borrow_mut();
        if span.disabled {
            return self.value_and_gradient(x, grad);
        }
        let (mut coeffs, residual) = span.coordinates(x);
        if linalg::norm64(&residual) > SPAN_TOL * linalg::norm64(x) {
            if span.basis.len() + span.pending.len() >= MAX_BASIS {
                span.disabled = true;
                return self.value_and_gradient(x, grad);
            }
            let mut candidates = std::mem::take(&mut span.pending);
            candidates.push(residual);
            span.extend(self.queries, candidates);
            coeffs = span.coordinates(x).0;
        }

        let Hyperparams {
            lambda1,
            lambda2,
            gamma2,
            ..
        } = self.hp;
        let mut margins: Vec<f64> = self.diag.iter().map(|d| gamma2 - d).collect();
        for (c, col) in coeffs.iter().zip(&span.projections) {
            linalg::axpy(*c, col, &mut margins);
        }

        for (g, xi) in grad.iter_mut().zip(x) {
            *g = 2.0 * lambda2 * xi;
        }
        let a = self.new_doc_arg(x);
        let l1 = self.hinge(a);
        let s1 = self.hinge_slope(a);
        if s1 != 0.0 {
            linalg::axpy(-lambda1 * s1, &self.q_bar, grad);
        }
        let w2 = 1.0 - lambda1;
        let mut l2 = 0.0;
        let mut active = 0usize;
        for (j, r) in margins.iter().enumerate() {
            if *r > 0.0 {
                active += 1;
                l2 += self.hinge(*r);
                linalg::axpy_mixed(w2 * self.hinge_slope(*r), self.queries.row(j), grad);
            }
        }
        // Many active rows means the span keeps growing; scan directly.
        if active > 64 && active * 16 > margins.len() {
            span.disabled = true;
        }
        lambda1 * l1 + w2 * l2 + lambda2 * linalg::dot64(x, x)
    }
}
