//! Alternating gradient descent on the reconstruction objective.
//!
//! Each outer iteration takes `f0_iters` steps in the template with the
//! flows frozen, then `v_iters` steps in the velocity coefficients. Steps
//! are accepted by an Armijo test on the smoothed objective. Step lengths
//! are Barzilai–Borwein quotients after a normalized first step, so the
//! iterates are unchanged when every weight is multiplied by a common
//! constant.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::math::{self, Vec2};
use crate::objective::{evaluate_objective, evaluate_with_flows, grad_f0, grad_v, Evaluation, Init, ModelConfig, Problem};
use crate::velocity::{VectorField, VelocityField};

/// Template, velocity and everything derived from them.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub f0: ScalarField,
    pub v: VelocityField,
    pub eval: Evaluation,
}

impl ModelState {
    pub fn new(problem: &Problem, f0: ScalarField, v: VelocityField, cfg: &ModelConfig) -> Result<Self> {
        let eval = evaluate_objective(problem, &f0, &v, cfg)?;
        Ok(Self { f0, v, eval })
    }

    /// Starting point selected by `cfg.init`, with `v = 0`.
    pub fn initial(problem: &Problem, cfg: &ModelConfig) -> Result<Self> {
        let f0 = match cfg.init {
            Init::BackProjection => problem.backprojection()?,
            Init::Zero => ScalarField::zeros(*problem.grid()),
        };
        let v = VelocityField::zeros(problem.spec.clone(), problem.time_grid.clone());
        Self::new(problem, f0, v, cfg)
    }

    pub fn objective(&self) -> f64 {
        self.eval.breakdown.value
    }

    pub fn frames(&self) -> &[ScalarField] {
        &self.eval.frames
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    /// Relative decrease of an outer iteration fell below `tol`.
    Converged,
    MaxIterations,
    /// Both gradients vanish exactly.
    Stationary,
    /// No phase of an outer iteration found an Armijo step.
    LineSearchStall,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIterations => "max_iterations",
            Status::Stationary => "stationary",
            Status::LineSearchStall => "line_search_stall",
        }
    }
}

/// One row of the iteration log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub iter: usize,
    pub objective: f64,
    /// `1/T Σ D_i`.
    pub data: f64,
    pub r1_exact_tv: f64,
    pub r1_smoothed: f64,
    /// `1/T Σ ∫_0^{t_i} ‖v‖²_V`.
    pub r2: f64,
    pub f0_l1: f64,
    pub f0_linf: f64,
    /// Euclidean length of the template change in this iteration.
    pub step_f0: f64,
    /// Euclidean length of the coefficient change in this iteration.
    pub step_v: f64,
    pub status: &'static str,
}

impl LogRecord {
    pub const COLUMNS: [&'static str; 11] = [
        "iter",
        "objective",
        "data",
        "r1_exact_tv",
        "r1_smoothed",
        "r2",
        "f0_l1",
        "f0_linf",
        "step_f0",
        "step_v",
        "status",
    ];

    fn of(iter: usize, s: &ModelState, step_f0: f64, step_v: f64, status: &'static str) -> Self {
        let b = &s.eval.breakdown;
        Self {
            iter,
            objective: b.value,
            data: b.data_mean(),
            r1_exact_tv: b.tv_exact,
            r1_smoothed: b.tv_smoothed,
            r2: b.r2_mean(),
            f0_l1: s.f0.l1_norm(),
            f0_linf: s.f0.linf_norm(),
            step_f0,
            step_v,
            status,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub state: ModelState,
    pub log: Vec<LogRecord>,
    pub status: Status,
}

fn norm_sq(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum()
}

fn flat(a: &[Vec2]) -> impl Iterator<Item = f64> + '_ {
    a.iter().flat_map(|p| p.iter().copied())
}

/// Step lengths of one variable block: the first is normalized, later ones
/// are BB quotients, falling back to the last accepted length.
struct StepRule {
    last: Option<f64>,
}

impl StepRule {
    fn trial(&self, first: impl FnOnce() -> f64, bb: Option<(f64, f64)>) -> f64 {
        if let Some((sy, yy)) = bb {
            if sy > 0.0 && yy > 0.0 {
                return sy / yy;
            }
        }
        self.last.unwrap_or_else(first)
    }
}

enum Phase {
    Stepped(f64),
    Stalled,
    Flat,
}

fn f0_phase(problem: &Problem, state: &mut ModelState, cfg: &ModelConfig, rule: &mut StepRule) -> Result<Phase> {
    let start = state.f0.clone();
    let mut g = grad_f0(&state.eval, cfg)?;
    let mut prev: Option<(ScalarField, ScalarField)> = None;
    let mut moved = false;
    for _ in 0..cfg.f0_iters {
        let gg = norm_sq(g.values());
        if gg == 0.0 {
            break;
        }
        let bb = prev.as_ref().map(|(x0, g0)| {
            let s = state.f0.sub(x0).unwrap();
            let y = g.sub(g0).unwrap();
            (s.dot(&y), y.dot(&y))
        });
        let f_norm = math::sqrt(norm_sq(state.f0.values())).max(1.0);
        let mut alpha = rule.trial(|| cfg.f0_step * f_norm / math::sqrt(gg), bb);
        let j0 = state.objective();
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let trial = state.f0.lincomb(1.0, &g, -alpha)?;
            let eval = evaluate_with_flows(problem, &trial, state.eval.flows.clone(), state.eval.breakdown.r2.clone(), cfg)?;
            if eval.breakdown.value <= j0 - cfg.armijo_c * alpha * gg {
                accepted = Some((trial, eval));
                break;
            }
            alpha *= cfg.backtrack_factor;
        }
        let Some((f0, eval)) = accepted else {
            break;
        };
        rule.last = Some(alpha);
        let old = core::mem::replace(&mut state.f0, f0);
        state.eval = eval;
        let g_new = grad_f0(&state.eval, cfg)?;
        prev = Some((old, core::mem::replace(&mut g, g_new)));
        moved = true;
    }
    if !moved {
        return Ok(if norm_sq(g.values()) == 0.0 { Phase::Flat } else { Phase::Stalled });
    }
    Ok(Phase::Stepped(math::sqrt(norm_sq(state.f0.sub(&start)?.values()))))
}

fn v_phase(problem: &Problem, state: &mut ModelState, cfg: &ModelConfig, rule: &mut StepRule) -> Result<Phase> {
    let start: Vec<Vec2> = state.v.coefficients().to_vec();
    let mut g = grad_v(problem, &state.f0, &state.v, &state.eval, cfg)?;
    let mut prev: Option<(Vec<Vec2>, Vec<Vec2>)> = None;
    let mut moved = false;
    for _ in 0..cfg.v_iters {
        let gg: f64 = flat(&g).map(|x| x * x).sum();
        if gg == 0.0 {
            break;
        }
        let bb = prev.as_ref().map(|(a0, g0)| {
            let (mut sy, mut yy) = (0.0, 0.0);
            for ((a, b), (c, d)) in flat(state.v.coefficients()).zip(flat(a0)).zip(flat(&g).zip(flat(g0))) {
                sy += (a - b) * (c - d);
                yy += (c - d) * (c - d);
            }
            (sy, yy)
        });
        let first = || {
            let dir = VelocityField::from_coefficients(state.v.spec().clone(), state.v.time_grid().clone(), g.clone())
                .map(|d| d.max_speed())
                .unwrap_or(0.0);
            if dir > 0.0 {
                cfg.v_step_speed / dir
            } else {
                1.0
            }
        };
        let mut alpha = rule.trial(first, bb);
        let j0 = state.objective();
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let trial = state.v.offset(&g, -alpha)?;
            match evaluate_objective(problem, &state.f0, &trial, cfg) {
                Ok(eval) if eval.breakdown.value <= j0 - cfg.armijo_c * alpha * gg => {
                    accepted = Some((trial, eval));
                    break;
                }
                Ok(_) | Err(Error::NonFiniteTrajectory) => {}
                Err(e) => return Err(e),
            }
            alpha *= cfg.backtrack_factor;
        }
        let Some((v, eval)) = accepted else {
            break;
        };
        rule.last = Some(alpha);
        let old = core::mem::replace(&mut state.v, v).coefficients().to_vec();
        state.eval = eval;
        let g_new = grad_v(problem, &state.f0, &state.v, &state.eval, cfg)?;
        prev = Some((old, core::mem::replace(&mut g, g_new)));
        moved = true;
    }
    if !moved {
        return Ok(if flat(&g).all(|x| x == 0.0) { Phase::Flat } else { Phase::Stalled });
    }
    let d: f64 = flat(state.v.coefficients()).zip(flat(&start)).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(Phase::Stepped(math::sqrt(d)))
}

/// Alternating minimization from `init`. The accepted objective values are
/// strictly decreasing.
pub fn minimize(problem: &Problem, init: ModelState, cfg: &ModelConfig) -> Result<MinimizeResult> {
    cfg.validate()?;
    let mut state = init;
    let mut log = alloc::vec![LogRecord::of(0, &state, 0.0, 0.0, "init")];
    let (mut rule_f, mut rule_v) = (StepRule { last: None }, StepRule { last: None });
    let mut status = Status::MaxIterations;
    for iter in 1..=cfg.max_outer_iters {
        let j_prev = state.objective();
        let pf = if cfg.f0_iters > 0 { f0_phase(problem, &mut state, cfg, &mut rule_f)? } else { Phase::Flat };
        let pv = if cfg.v_iters > 0 { v_phase(problem, &mut state, cfg, &mut rule_v)? } else { Phase::Flat };
        let step = |p: &Phase| if let Phase::Stepped(s) = p { *s } else { 0.0 };
        let (sf, sv) = (step(&pf), step(&pv));
        let done = match (&pf, &pv) {
            (Phase::Flat, Phase::Flat) => Some(Status::Stationary),
            (Phase::Stepped(_), _) | (_, Phase::Stepped(_)) => {
                if j_prev - state.objective() < cfg.tol * j_prev.abs() {
                    Some(Status::Converged)
                } else {
                    None
                }
            }
            _ => Some(Status::LineSearchStall),
        };
        let fallback = if iter == cfg.max_outer_iters { Status::MaxIterations.name() } else { "step" };
        let label = done.map_or(fallback, Status::name);
        log.push(LogRecord::of(iter, &state, sf, sv, label));
        if let Some(s) = done {
            status = s;
            break;
        }
    }
    Ok(MinimizeResult { state, log, status })
}
