//! Limited-memory BFGS with a strong Wolfe line search.
//!
//! The line search follows the bracketing/zoom scheme of Nocedal & Wright
//! (Algorithms 3.5 and 3.6) with safeguarded cubic interpolation. The outer
//! loop stops after `max_iterations` or once a step `‖Δx‖₂` falls below
//! `update_norm_tol`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot64, norm64};

/// A differentiable function of a dense vector.
pub trait Objective {
    /// Returns `f(x)` and writes `∇f(x)` into `grad`.
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Drops any state kept between evaluations. [`minimize`] calls this
    /// first so that repeated runs give bit-identical iterates.
    fn reset(&self) {}
}

/// Adapts a separate value closure and gradient closure.
pub struct FnObjective<F, G> {
    f: F,
    g: G,
}

impl<F, G> FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    pub fn new(f: F, g: G) -> Self {
        Self { f, g }
    }
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.g)(x, grad);
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub update_norm_tol: f64,
    pub initial_step: f64,
    pub history_size: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub max_line_search_evals: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            update_norm_tol: 1e-3,
            initial_step: 1.0,
            history_size: 10,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_search_evals: 25,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return bad(format!(
                "need 0 < c1 < c2 < 1, got c1={} c2={}",
                self.wolfe_c1, self.wolfe_c2
            ));
        }
        if self.history_size == 0 {
            return bad("history_size must be >= 1".into());
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1".into());
        }
        if self.max_line_search_evals == 0 {
            return bad("max_line_search_evals must be >= 1".into());
        }
        if !(self.update_norm_tol > 0.0 && self.initial_step > 0.0) {
            return bad("tolerances and initial_step must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeResult {
    pub x_star: Vec<f64>,
    pub iterations: usize,
    pub converged_by_tol: bool,
    pub final_value: f64,
    pub function_evals: usize,
    /// A line search and its fallback both failed to decrease `f`; `x_star`
    /// is the last accepted iterate and the run counts as converged.
    pub line_search_failed: bool,
}

/// Curvature pairs `(s, y)` for the two-loop recursion, oldest first.
#[derive(Debug, Clone)]
pub struct History {
    capacity: usize,
    pairs: VecDeque<Pair>,
}

#[derive(Debug, Clone)]
struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

impl History {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            pairs: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    /// Stores the pair if `sᵀy > 1e-10·‖s‖‖y‖`, evicting the oldest when
    /// full. Returns whether the pair was kept.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot64(&s, &y);
        if !(sy > 1e-10 * norm64(&s) * norm64(&y)) {
            return false;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back(Pair { s, y, rho: 1.0 / sy });
        true
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// `−H·grad` where `H` is the L-BFGS inverse-Hessian estimate. The
    /// initial guess is `(sᵀy / yᵀy)·I` from the newest pair, or `I`.
    pub fn direction(&self, grad: &[f64]) -> Vec<f64> {
        let mut q = grad.to_vec();
        let mut alphas = vec![0.0; self.pairs.len()];
        for (i, pair) in self.pairs.iter().enumerate().rev() {
            let a = pair.rho * dot64(&pair.s, &q);
            alphas[i] = a;
            axpy(-a, &pair.y, &mut q);
        }
        let gamma = self
            .pairs
            .back()
            .map_or(1.0, |p| 1.0 / (p.rho * dot64(&p.y, &p.y)));
        q.iter_mut().for_each(|v| *v *= gamma);
        for (i, pair) in self.pairs.iter().enumerate() {
            let b = pair.rho * dot64(&pair.y, &q);
            axpy(alphas[i] - b, &pair.s, &mut q);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

/// Two-loop recursion over an explicit pair list (no curvature filtering).
pub fn two_loop_direction(pairs: &[(Vec<f64>, Vec<f64>)], grad: &[f64]) -> Vec<f64> {
    let mut history = History::new(pairs.len().max(1));
    for (s, y) in pairs {
        let sy = dot64(s, y);
        history.pairs.push_back(Pair {
            s: s.clone(),
            y: y.clone(),
            rho: 1.0 / sy,
        });
    }
    history.direction(grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome {
    pub step: f64,
    pub value: f64,
    pub grad: Vec<f64>,
    pub evals: usize,
    /// Both strong Wolfe conditions hold at `step`. When false the eval
    /// budget ran out and `step` is the lowest point seen (possibly 0).
    pub satisfied: bool,
}

/// Strong Wolfe line search from `x` along `p`, starting at `cfg.initial_step`.
pub fn strong_wolfe_line_search<O: Objective + ?Sized>(
    obj: &O,
    x: &[f64],
    p: &[f64],
    cfg: &OptimizerConfig,
) -> Result<LineSearchOutcome> {
    let mut g0 = vec![0.0; x.len()];
    let f0 = obj.evaluate(x, &mut g0);
    let mut out = line_search(obj, x, f0, &g0, p, cfg.initial_step, cfg)?;
    out.evals += 1;
    Ok(out)
}

struct Point {
    step: f64,
    value: f64,
    slope: f64,
    grad: Vec<f64>,
}

fn line_search<O: Objective + ?Sized>(
    obj: &O,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    p: &[f64],
    initial_step: f64,
    cfg: &OptimizerConfig,
) -> Result<LineSearchOutcome> {
    let slope0 = dot64(g0, p);
    if !(slope0 < 0.0) {
        return Err(Error::NonDescent(slope0));
    }
    let c1 = cfg.wolfe_c1;
    let c2 = cfg.wolfe_c2;
    let budget = cfg.max_line_search_evals;

    let mut xt = vec![0.0; x.len()];
    let evals = std::cell::Cell::new(0usize);
    let mut eval = |step: f64| -> Point {
        for ((t, xi), pi) in xt.iter_mut().zip(x).zip(p) {
            *t = xi + step * pi;
        }
        let mut grad = vec![0.0; x.len()];
        let value = obj.evaluate(&xt, &mut grad);
        evals.set(evals.get() + 1);
        Point {
            step,
            value,
            slope: dot64(&grad, p),
            grad,
        }
    };

    let armijo = |pt: &Point| pt.value <= f0 + c1 * pt.step * slope0;
    let curvature = |pt: &Point| pt.slope.abs() <= -c2 * slope0;

    let mut best = Point {
        step: 0.0,
        value: f0,
        slope: slope0,
        grad: g0.to_vec(),
    };
    let keep_best = |best: &mut Point, pt: &Point| {
        if pt.value < best.value && pt.value.is_finite() {
            *best = Point {
                step: pt.step,
                value: pt.value,
                slope: pt.slope,
                grad: pt.grad.clone(),
            };
        }
    };
    let done = |pt: Point, evals: usize| LineSearchOutcome {
        step: pt.step,
        value: pt.value,
        grad: pt.grad,
        evals,
        satisfied: true,
    };

    // Bracketing phase.
    let mut prev = Point {
        step: 0.0,
        value: f0,
        slope: slope0,
        grad: g0.to_vec(),
    };
    let mut step = initial_step;
    let (mut lo, mut hi);
    let mut first = true;
    loop {
        let cur = eval(step);
        keep_best(&mut best, &cur);
        let ok_value = cur.value.is_finite();
        if !ok_value || !armijo(&cur) || (!first && cur.value >= prev.value) {
            lo = prev;
            hi = cur;
            break;
        }
        if curvature(&cur) {
            return Ok(done(cur, evals.get()));
        }
        if cur.slope >= 0.0 {
            lo = cur;
            hi = prev;
            break;
        }
        if evals.get() >= budget {
            return Ok(exhausted(best, evals.get()));
        }
        let lower = cur.step + 0.01 * (cur.step - prev.step);
        let upper = cur.step * 10.0;
        step = cubic_minimizer(&prev, &cur, lower, upper);
        prev = cur;
        first = false;
    }

    // Zoom phase: `lo` satisfies Armijo and has the lowest value so far;
    // the minimizer lies between `lo.step` and `hi.step`.
    loop {
        if evals.get() >= budget {
            return Ok(exhausted(best, evals.get()));
        }
        let (a, b) = if lo.step < hi.step {
            (lo.step, hi.step)
        } else {
            (hi.step, lo.step)
        };
        let width = b - a;
        if width * norm64(p) < 1e-14 {
            return Ok(exhausted(best, evals.get()));
        }
        let mut trial = if hi.value.is_finite() {
            cubic_minimizer(&lo, &hi, a, b)
        } else {
            0.5 * (a + b)
        };
        // Keep trials away from the interval ends.
        if trial < a + 0.1 * width || trial > b - 0.1 * width {
            trial = 0.5 * (a + b);
        }
        let cur = eval(trial);
        keep_best(&mut best, &cur);
        if !cur.value.is_finite() || !armijo(&cur) || cur.value >= lo.value {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Ok(done(cur, evals.get()));
            }
            if cur.slope * (hi.step - lo.step) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
}

fn exhausted(best: Point, evals: usize) -> LineSearchOutcome {
    LineSearchOutcome {
        step: best.step,
        value: best.value,
        grad: best.grad,
        evals,
        satisfied: false,
    }
}

/// Minimizer of the cubic through two points with slopes, clamped to
/// `[lower, upper]`; the midpoint when the cubic has no real minimizer.
fn cubic_minimizer(p1: &Point, p2: &Point, lower: f64, upper: f64) -> f64 {
    let (x1, f1, g1) = (p1.step, p1.value, p1.slope);
    let (x2, f2, g2) = (p2.step, p2.value, p2.slope);
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let disc = d1 * d1 - g1 * g2;
    if disc >= 0.0 && (x1 - x2) != 0.0 {
        let d2 = disc.sqrt();
        let t = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if t.is_finite() {
            return t.clamp(lower, upper);
        }
    }
    0.5 * (lower + upper)
}

/// Minimizes `obj` from `x0`.
pub fn minimize<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    cfg: &OptimizerConfig,
) -> Result<MinimizeResult> {
    cfg.validate()?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial point"));
    }
    obj.reset();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; x.len()];
    let mut f = obj.evaluate(&x, &mut g);
    let mut evals = 1;
    if !f.is_finite() {
        return Err(Error::NonFinite("objective at initial point"));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient at initial point"));
    }

    let mut history = History::new(cfg.history_size);
    let mut iterations = 0;
    let mut converged_by_tol = false;
    let mut line_search_failed = false;

    for it in 1..=cfg.max_iterations {
        iterations = it;
        if g.iter().all(|&v| v == 0.0) {
            // Stationary: the update is exactly zero.
            converged_by_tol = true;
            break;
        }
        let mut p = history.direction(&g);
        if !(dot64(&g, &p) < 0.0) {
            history.clear();
            p = g.iter().map(|v| -v).collect();
        }
        // Without curvature information, cap the first trial step's length.
        let step0 = if history.is_empty() {
            let g1: f64 = g.iter().map(|v| v.abs()).sum();
            cfg.initial_step * (1.0 / g1).min(1.0)
        } else {
            cfg.initial_step
        };

        let ls = line_search(obj, &x, f, &g, &p, step0, cfg)?;
        evals += ls.evals;
        let (step, f_new, g_new) = if ls.satisfied || ls.value < f {
            (ls.step, ls.value, ls.grad)
        } else {
            let tiny = 1e-4 / norm64(&p);
            let xt: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + tiny * pi).collect();
            let mut gt = vec![0.0; x.len()];
            let ft = obj.evaluate(&xt, &mut gt);
            evals += 1;
            if ft < f {
                (tiny, ft, gt)
            } else {
                // No step lowers f, so the update taken is zero.
                line_search_failed = true;
                converged_by_tol = true;
                break;
            }
        };

        let s: Vec<f64> = p.iter().map(|v| step * v).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let step_norm = norm64(&s);
        axpy(1.0, &s, &mut x);
        history.push(s, y);
        f = f_new;
        g = g_new;
        if step_norm < cfg.update_norm_tol {
            converged_by_tol = true;
            break;
        }
    }

    Ok(MinimizeResult {
        x_star: x,
        iterations,
        converged_by_tol,
        final_value: f,
        function_evals: evals,
        line_search_failed,
    })
}
