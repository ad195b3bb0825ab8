//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The point is treated as one flat vector. Directions come from the
//! two-loop recursion over the last `memory` curvature pairs, scaled by
//! `γ = sᵀy / yᵀy`. The first iteration (and any iteration after the history
//! is reset) takes a steepest-descent step with initial length `1/‖g‖∞`.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Scalar, Tensor};

/// Pairs with `yᵀs` at or below this are not stored.
pub const CURVATURE_EPS: f64 = 1e-10;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite loss or gradient at the starting point")]
    NonFiniteStart,
    #[error("gradient shape {actual:?} does not match point shape {expected:?}")]
    GradShape { expected: Vec<usize>, actual: Vec<usize> },
    #[error("not a descent direction (gᵀd = {0})")]
    NotDescent(f64),
    #[error("line search found no acceptable step in {0} evaluations")]
    LineSearchExhausted(usize),
    #[error("invalid optimizer config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    pub memory: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    /// Stop once `‖g‖∞` is at or below this.
    pub grad_tol: f64,
    pub max_line_search_steps: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            max_iters: 500,
            memory: 10,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            grad_tol: 1e-8,
            max_line_search_steps: 20,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: &str| Err(OptimError::BadConfig(m.into()));
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return bad("need 0 < c1 < c2 < 1");
        }
        if self.memory == 0 {
            return bad("memory must be at least 1");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if self.max_line_search_steps == 0 {
            return bad("max_line_search_steps must be at least 1");
        }
        if !(self.grad_tol >= 0.0) {
            return bad("grad_tol must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIters,
    GradTol,
    LineSearchFailure,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::MaxIters => "max_iters",
            Termination::GradTol => "grad_tol",
            Termination::LineSearchFailure => "line_search_failure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub loss: f64,
    /// `‖g‖∞` (projected gradient in box mode).
    pub grad_norm: f64,
    /// Accepted line-search multiplier; 0 for the starting point.
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    /// The starting point.
    pub initial: TraceEntry,
    /// One entry per accepted iteration.
    pub steps: Vec<TraceEntry>,
    pub termination: Termination,
    pub evaluations: usize,
}

impl OptimizationTrace {
    pub fn final_loss(&self) -> f64 {
        self.steps.last().unwrap_or(&self.initial).loss
    }

    pub fn final_grad_norm(&self) -> f64 {
        self.steps.last().unwrap_or(&self.initial).grad_norm
    }

    /// `iter,loss,grad_norm,step`, starting point first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,loss,grad_norm,step\n");
        for e in std::iter::once(&self.initial).chain(&self.steps) {
            let _ = writeln!(out, "{},{:e},{:e},{:e}", e.iter, e.loss, e.grad_norm, e.step);
        }
        out
    }
}

/// An accepted line-search point.
#[derive(Debug, Clone)]
pub struct LineStep<T: Scalar> {
    pub step: f64,
    pub x: Tensor<T>,
    pub f: f64,
    pub g: Tensor<T>,
    pub evaluations: usize,
}

/// Strong-Wolfe search along `direction` from `x`, starting at `α = 1`.
///
/// The returned step satisfies `f(x+αd) ≤ f0 + c1·α·g0ᵀd` and
/// `|g(x+αd)ᵀd| ≤ c2·|g0ᵀd|`.
pub fn line_search_wolfe<T, F>(
    mut objective: F,
    x: &Tensor<T>,
    direction: &Tensor<T>,
    f0: f64,
    g0: &Tensor<T>,
    cfg: &LbfgsConfig,
) -> Result<LineStep<T>, OptimError>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> (f64, Tensor<T>),
{
    let mut obj = |p: &Tensor<T>| Ok::<_, OptimError>(objective(p));
    cfg.validate()?;
    search(&mut obj, x, direction, f0, g0, 1.0, cfg).map_err(|e| match e {
        SearchFail::Objective(e) => e,
        SearchFail::Exhausted(n, _) => OptimError::LineSearchExhausted(n),
        SearchFail::NotDescent(v) => OptimError::NotDescent(v),
    })
}

enum SearchFail<T: Scalar, E> {
    Objective(E),
    /// No acceptable step; carries the evaluation count and the lowest trial
    /// point that improved on `f0`, if any.
    Exhausted(usize, Option<Box<LineStep<T>>>),
    NotDescent(f64),
}

/// Nocedal–Wright bracketing and zoom with cubic interpolation.
fn search<T, E, F>(
    objective: &mut F,
    x: &Tensor<T>,
    d: &Tensor<T>,
    f0: f64,
    g0: &Tensor<T>,
    alpha0: f64,
    cfg: &LbfgsConfig,
) -> Result<LineStep<T>, SearchFail<T, E>>
where
    T: Scalar,
    E: From<OptimError>,
    F: FnMut(&Tensor<T>) -> Result<(f64, Tensor<T>), E>,
{
    let dphi0 = g0.dot(d).map_err(|_| SearchFail::Objective(grad_shape(x, g0).into()))?;
    if !(dphi0 < 0.0) {
        return Err(SearchFail::NotDescent(dphi0));
    }
    let (c1, c2) = (cfg.wolfe_c1, cfg.wolfe_c2);
    let mut evals = 0;
    let mut best: Option<LineStep<T>> = None;

    let mut eval = |alpha: f64, evals: &mut usize, best: &mut Option<LineStep<T>>| {
        *evals += 1;
        let mut p = x.clone();
        p.add_scaled(T::from_f64(alpha), d).expect("direction matches point");
        let (f, g) = objective(&p).map_err(SearchFail::Objective)?;
        if g.dims() != x.dims() {
            return Err(SearchFail::Objective(grad_shape(x, &g).into()));
        }
        let f = if f.is_finite() && g.is_finite() {
            f
        } else {
            f64::INFINITY
        };
        let dphi = if f.is_finite() {
            g.dot(d).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        let point = LineStep {
            step: alpha,
            x: p,
            f,
            g,
            evaluations: *evals,
        };
        if f < f0 && best.as_ref().is_none_or(|b| f < b.f) {
            *best = Some(point.clone());
        }
        Ok((point, dphi))
    };
    let armijo = |alpha: f64, f: f64| f <= f0 + c1 * alpha * dphi0;
    let curvature = |dphi: f64| dphi.abs() <= -c2 * dphi0;

    // Bracketing phase.
    let (mut lo, mut hi);
    let mut prev = (0.0, f0, dphi0);
    let mut alpha = alpha0;
    loop {
        if evals >= cfg.max_line_search_steps {
            return Err(SearchFail::Exhausted(evals, best.map(Box::new)));
        }
        let (pt, dphi) = eval(alpha, &mut evals, &mut best)?;
        if !armijo(alpha, pt.f) || (evals > 1 && pt.f >= prev.1) {
            lo = prev;
            hi = (alpha, pt.f, dphi);
            break;
        }
        if curvature(dphi) {
            return Ok(pt);
        }
        if dphi >= 0.0 {
            lo = (alpha, pt.f, dphi);
            hi = prev;
            break;
        }
        let next = extrapolate((prev.0, prev.2), (alpha, dphi));
        prev = (alpha, pt.f, dphi);
        alpha = next;
    }

    // Zoom phase: `lo` satisfies sufficient decrease and has the lowest f so far.
    loop {
        if evals >= cfg.max_line_search_steps {
            return Err(SearchFail::Exhausted(evals, best.map(Box::new)));
        }
        let alpha = interpolate(lo, hi);
        if alpha == lo.0 || alpha == hi.0 {
            return Err(SearchFail::Exhausted(evals, best.map(Box::new)));
        }
        let (pt, dphi) = eval(alpha, &mut evals, &mut best)?;
        if !armijo(alpha, pt.f) || pt.f >= lo.1 {
            hi = (alpha, pt.f, dphi);
        } else {
            if curvature(dphi) {
                return Ok(pt);
            }
            if dphi * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (alpha, pt.f, dphi);
        }
    }
}

/// Next bracketing trial past `b`: the zero of the secant of φ' through `a`
/// and `b`, clamped to `[2, 10]·α_b`.
fn extrapolate(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lo, hi) = (2.0 * b.0, 10.0 * b.0);
    let t = b.0 - b.1 * (b.0 - a.0) / (b.1 - a.1);
    if t.is_finite() && b.1 > a.1 {
        t.clamp(lo, hi)
    } else {
        lo
    }
}

/// Cubic interpolation minimiser between `(α, φ, φ')` points, kept at least a
/// tenth of the interval away from either end; bisection otherwise.
fn interpolate(a: (f64, f64, f64), b: (f64, f64, f64)) -> f64 {
    let (lo, hi) = (a.0.min(b.0), a.0.max(b.0));
    let mid = 0.5 * (a.0 + b.0);
    let margin = 0.1 * (hi - lo);
    let d1 = a.2 + b.2 - 3.0 * (a.1 - b.1) / (a.0 - b.0);
    let disc = d1 * d1 - a.2 * b.2;
    if !disc.is_finite() || disc < 0.0 {
        return mid;
    }
    let d2 = (b.0 - a.0).signum() * disc.sqrt();
    let t = b.0 - (b.0 - a.0) * (b.2 + d2 - d1) / (b.2 - a.2 + 2.0 * d2);
    if t.is_finite() && t >= lo + margin && t <= hi - margin {
        t
    } else {
        mid
    }
}

fn grad_shape<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>) -> OptimError {
    OptimError::GradShape {
        expected: x.dims().to_vec(),
        actual: g.dims().to_vec(),
    }
}

struct History<T: Scalar> {
    pairs: VecDeque<(Tensor<T>, Tensor<T>, f64)>,
    memory: usize,
}

impl<T: Scalar> History<T> {
    fn new(memory: usize) -> Self {
        History {
            pairs: VecDeque::with_capacity(memory),
            memory,
        }
    }

    fn push(&mut self, s: Tensor<T>, y: Tensor<T>) {
        let ys = y.dot(&s).unwrap_or(0.0);
        if !(ys > CURVATURE_EPS) {
            return;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / ys));
    }

    fn clear(&mut self) {
        self.pairs.clear();
    }

    /// `−H·g` by the two-loop recursion.
    fn direction(&self, g: &Tensor<T>) -> Tensor<T> {
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * s.dot(&q).unwrap_or(0.0);
            q.add_scaled(T::from_f64(-a), y).expect("history matches point");
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = s.dot(y).unwrap_or(0.0) / y.frobenius_sq();
            q = q.scale(T::from_f64(gamma));
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&q).unwrap_or(0.0);
            q.add_scaled(T::from_f64(a - b), s).expect("history matches point");
        }
        q.scale(T::from_f64(-1.0))
    }
}

/// Unconstrained minimisation of `objective` from `x0`.
pub fn minimize<T, F>(
    mut objective: F,
    x0: &Tensor<T>,
    cfg: &LbfgsConfig,
) -> Result<(Tensor<T>, OptimizationTrace), OptimError>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> (f64, Tensor<T>),
{
    try_minimize(|p| Ok::<_, OptimError>(objective(p)), x0, cfg)
}

/// [`minimize`] with a fallible objective; its first error aborts the run.
pub fn try_minimize<T, E, F>(
    mut objective: F,
    x0: &Tensor<T>,
    cfg: &LbfgsConfig,
) -> Result<(Tensor<T>, OptimizationTrace), E>
where
    T: Scalar,
    E: From<OptimError>,
    F: FnMut(&Tensor<T>) -> Result<(f64, Tensor<T>), E>,
{
    cfg.validate()?;
    let mut x = x0.clone();
    let (mut f, mut g) = start(&mut objective, &x)?;
    let mut trace = OptimizationTrace {
        initial: TraceEntry {
            iter: 0,
            loss: f,
            grad_norm: g.max_abs(),
            step: 0.0,
        },
        steps: Vec::new(),
        termination: Termination::MaxIters,
        evaluations: 1,
    };
    if g.max_abs() <= cfg.grad_tol {
        trace.termination = Termination::GradTol;
        return Ok((x, trace));
    }
    let mut history = History::new(cfg.memory);

    for iter in 1..=cfg.max_iters {
        let (mut d, mut alpha0) = (history.direction(&g), 1.0);
        if history.pairs.is_empty() || !(g.dot(&d).unwrap_or(f64::NAN) < 0.0) {
            history.clear();
            d = g.scale(T::from_f64(-1.0));
            alpha0 = 1.0 / g.max_abs();
        }
        let (ls, failed) = match search(&mut objective, &x, &d, f, &g, alpha0, cfg) {
            Ok(ls) if ls.f < f => (ls, false),
            Ok(ls) => {
                trace.evaluations += ls.evaluations;
                trace.termination = Termination::LineSearchFailure;
                break;
            }
            Err(SearchFail::Objective(e)) => return Err(e),
            Err(SearchFail::Exhausted(n, Some(best))) => (
                LineStep {
                    evaluations: n,
                    ..*best
                },
                true,
            ),
            Err(SearchFail::Exhausted(n, None)) => {
                trace.evaluations += n;
                trace.termination = Termination::LineSearchFailure;
                break;
            }
            Err(SearchFail::NotDescent(_)) => {
                trace.termination = Termination::LineSearchFailure;
                break;
            }
        };
        trace.evaluations += ls.evaluations;
        let s = ls.x.sub(&x).expect("same shape");
        let y = ls.g.sub(&g).expect("same shape");
        history.push(s, y);
        x = ls.x;
        f = ls.f;
        g = ls.g;
        let grad_norm = g.max_abs();
        trace.steps.push(TraceEntry {
            iter,
            loss: f,
            grad_norm,
            step: ls.step,
        });
        if grad_norm <= cfg.grad_tol {
            trace.termination = Termination::GradTol;
            break;
        }
        if failed {
            trace.termination = Termination::LineSearchFailure;
            break;
        }
    }
    Ok((x, trace))
}

fn start<T, E, F>(objective: &mut F, x: &Tensor<T>) -> Result<(f64, Tensor<T>), E>
where
    T: Scalar,
    E: From<OptimError>,
    F: FnMut(&Tensor<T>) -> Result<(f64, Tensor<T>), E>,
{
    let (f, g) = objective(x)?;
    if g.dims() != x.dims() {
        return Err(grad_shape(x, &g).into());
    }
    if !f.is_finite() || !g.is_finite() {
        return Err(OptimError::NonFiniteStart.into());
    }
    Ok((f, g))
}

/// Box bounds for [`try_minimize_in_box`], elementwise `lower ≤ x ≤ upper`.
#[derive(Debug, Clone)]
pub struct Bounds<T: Scalar> {
    pub lower: Tensor<T>,
    pub upper: Tensor<T>,
}

impl<T: Scalar> Bounds<T> {
    pub fn project(&self, x: &Tensor<T>) -> Tensor<T> {
        let data = x
            .as_slice()
            .iter()
            .zip(self.lower.as_slice().iter().zip(self.upper.as_slice()))
            .map(|(&v, (&lo, &hi))| v.max(lo).min(hi))
            .collect();
        Tensor::from_vec(x.dims(), data).expect("bounds match point")
    }

    /// `‖P(x − g) − x‖∞`, zero exactly at box-constrained stationary points.
    pub fn projected_grad_norm(&self, x: &Tensor<T>, g: &Tensor<T>) -> f64 {
        let mut p = x.clone();
        p.add_scaled(T::from_f64(-1.0), g).expect("gradient matches point");
        self.project(&p).sub(x).expect("same shape").max_abs()
    }
}

/// L-BFGS with the iterate projected onto `bounds` after every step.
///
/// The step along the quasi-Newton direction is found by projected
/// backtracking with sufficient decrease measured on the actual step
/// `s = P(x + αd) − x`. When that fails the history is dropped and projected
/// steepest descent is tried before giving up.
pub fn try_minimize_in_box<T, E, F>(
    mut objective: F,
    x0: &Tensor<T>,
    bounds: &Bounds<T>,
    cfg: &LbfgsConfig,
) -> Result<(Tensor<T>, OptimizationTrace), E>
where
    T: Scalar,
    E: From<OptimError>,
    F: FnMut(&Tensor<T>) -> Result<(f64, Tensor<T>), E>,
{
    cfg.validate()?;
    for b in [&bounds.lower, &bounds.upper] {
        if b.dims() != x0.dims() {
            return Err(OptimError::BadConfig(format!("bounds shape {:?} != point {:?}", b.dims(), x0.dims())).into());
        }
    }
    if bounds
        .lower
        .as_slice()
        .iter()
        .zip(bounds.upper.as_slice())
        .any(|(l, u)| l > u)
    {
        return Err(OptimError::BadConfig("lower bound above upper bound".into()).into());
    }
    let mut x = bounds.project(x0);
    let (mut f, mut g) = start(&mut objective, &x)?;
    let mut pg = bounds.projected_grad_norm(&x, &g);
    let mut trace = OptimizationTrace {
        initial: TraceEntry {
            iter: 0,
            loss: f,
            grad_norm: pg,
            step: 0.0,
        },
        steps: Vec::new(),
        termination: Termination::MaxIters,
        evaluations: 1,
    };
    if pg <= cfg.grad_tol {
        trace.termination = Termination::GradTol;
        return Ok((x, trace));
    }
    let mut history = History::new(cfg.memory);

    'outer: for iter in 1..=cfg.max_iters {
        let mut accepted = None;
        for steepest in [false, true] {
            let (d, mut alpha) = if steepest || history.pairs.is_empty() {
                (g.scale(T::from_f64(-1.0)), 1.0 / g.max_abs())
            } else {
                (history.direction(&g), 1.0)
            };
            for _ in 0..cfg.max_line_search_steps {
                let mut p = x.clone();
                p.add_scaled(T::from_f64(alpha), &d).expect("direction matches point");
                let p = bounds.project(&p);
                let s = p.sub(&x).expect("same shape");
                let gs = g.dot(&s).expect("same shape");
                if !(gs < 0.0) {
                    break;
                }
                trace.evaluations += 1;
                let (fp, gp) = objective(&p)?;
                if gp.dims() != x.dims() {
                    return Err(grad_shape(&x, &gp).into());
                }
                if fp.is_finite() && gp.is_finite() && fp <= f + cfg.wolfe_c1 * gs && fp < f {
                    accepted = Some((alpha, p, fp, gp, s));
                    break;
                }
                alpha *= 0.5;
            }
            if accepted.is_some() || history.pairs.is_empty() {
                break;
            }
            history.clear();
        }
        let Some((alpha, p, fp, gp, s)) = accepted else {
            trace.termination = Termination::LineSearchFailure;
            break 'outer;
        };
        history.push(s, gp.sub(&g).expect("same shape"));
        x = p;
        f = fp;
        g = gp;
        pg = bounds.projected_grad_norm(&x, &g);
        trace.steps.push(TraceEntry {
            iter,
            loss: f,
            grad_norm: pg,
            step: alpha,
        });
        if pg <= cfg.grad_tol {
            trace.termination = Termination::GradTol;
            break;
        }
    }
    Ok((x, trace))
}
