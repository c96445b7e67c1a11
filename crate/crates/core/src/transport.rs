//! Characteristic solution of the transport equation `∂_t f + v·∇f = 0`,
//! `f(t) = f0 ∘ φ_{t,0}`, and numerical probes of its weak form,
//! renormalization, and stability under perturbed inputs.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::flow::{flow_jacobians, integrate_flow, inverse_flow, FlowMap};
use crate::grid::{integrate, ScalarField, TimeGrid};
use crate::math::{self, det2, Fingerprint, Vec2};
use crate::mollifier::{mollify, Mollifier};
use crate::par;
use crate::velocity::VectorField;

/// Frames `f(t, ·)` at selected time-grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySolution {
    pub time_grid: TimeGrid,
    pub times: Vec<f64>,
    pub frames: Vec<ScalarField>,
    /// Fingerprint of the `(f0, v)` pair.
    pub source: u64,
}

impl TrajectorySolution {
    pub fn frame_at(&self, t: f64) -> Option<&ScalarField> {
        self.times.iter().position(|&s| s == t).map(|i| &self.frames[i])
    }

    /// True if the frames sit on every time-grid point `τ_0..τ_M`.
    pub fn is_dense(&self) -> bool {
        self.times == self.time_grid.times()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> Self {
        Self {
            frames: self.frames.iter().map(|fr| fr.map(f)).collect(),
            ..self.clone()
        }
    }
}

pub fn source_fingerprint<V: VectorField + ?Sized>(f0: &ScalarField, v: &V) -> u64 {
    let mut h = Fingerprint::default();
    let g = f0.grid();
    h.write_u64(g.nx as u64);
    h.write_u64(g.ny as u64);
    h.write_all(f0.values());
    h.write_u64(v.fingerprint());
    h.finish()
}

/// How `f0` is read off between samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Interpolation {
    /// Monotone, so frames obey the maximum principle; the reconstruction
    /// adjoint assumes it.
    #[default]
    Bilinear,
    /// Catmull–Rom. Higher order and free of the numerical diffusion that
    /// bilinear pullbacks add, at the price of overshoot near jumps.
    Cubic,
}

/// `f0 ∘ F`: bilinear samples of `f0` at the endpoints of `F`.
pub fn pullback(f0: &ScalarField, flow: &FlowMap) -> Result<ScalarField> {
    pullback_with(f0, flow, Interpolation::Bilinear)
}

pub fn pullback_with(f0: &ScalarField, flow: &FlowMap, interp: Interpolation) -> Result<ScalarField> {
    if f0.grid() != flow.grid() {
        return Err(Error::GridMismatch);
    }
    let vals = match interp {
        Interpolation::Bilinear => par::map(flow.positions(), |&p| crate::grid::interpolate(f0, p)),
        Interpolation::Cubic => par::map(flow.positions(), |&p| crate::grid::interpolate_cubic(f0, p)),
    };
    ScalarField::from_values(*f0.grid(), vals)
}

/// Exact transpose of [`pullback`] in the plain Euclidean pairing of
/// sample vectors: scatters each node value onto the stencil its endpoint
/// was read from.
pub fn pullback_transpose(g: &ScalarField, flow: &FlowMap) -> Result<ScalarField> {
    if g.grid() != flow.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = *g.grid();
    let mut out = vec![0.0; grid.len()];
    for (&p, &val) in flow.positions().iter().zip(g.values()) {
        if val == 0.0 {
            continue;
        }
        if let Some(s) = grid.stencil(p) {
            for (&k, &w) in s.idx.iter().zip(&s.w) {
                out[k] += w * val;
            }
        }
    }
    ScalarField::from_values(grid, out)
}

fn check_times(tg: &TimeGrid, times: &[f64]) -> Result<()> {
    for &t in times {
        if tg.index_of(t).is_none() {
            return Err(Error::TimeOutOfRange(t));
        }
    }
    Ok(())
}

/// `f(t, x) = f0(φ_{t,0}(x))` at each requested time-grid point.
pub fn solve_transport<V: VectorField + ?Sized>(
    f0: &ScalarField,
    v: &V,
    eval_times: &[f64],
    substeps: usize,
) -> Result<TrajectorySolution> {
    solve_transport_with(f0, v, eval_times, substeps, Interpolation::Bilinear)
}

pub fn solve_transport_with<V: VectorField + ?Sized>(
    f0: &ScalarField,
    v: &V,
    eval_times: &[f64],
    substeps: usize,
    interp: Interpolation,
) -> Result<TrajectorySolution> {
    let tg = v.time_grid().clone();
    check_times(&tg, eval_times)?;
    let mut frames = Vec::with_capacity(eval_times.len());
    for &t in eval_times {
        frames.push(if t == 0.0 || v.is_zero() {
            f0.clone()
        } else {
            pullback_with(f0, &inverse_flow(v, f0.grid(), t, substeps)?, interp)?
        });
    }
    Ok(TrajectorySolution {
        source: source_fingerprint(f0, v),
        time_grid: tg,
        times: eval_times.to_vec(),
        frames,
    })
}

/// Frames at the observation times of the velocity's time grid.
pub fn solve_at_observations<V: VectorField + ?Sized>(
    f0: &ScalarField,
    v: &V,
    substeps: usize,
) -> Result<TrajectorySolution> {
    let tg = v.time_grid();
    let times: Vec<f64> = tg.obs_indices().iter().map(|&k| tg.time(k)).collect();
    solve_transport(f0, v, &times, substeps)
}

/// Frames at all `M + 1` time-grid points.
pub fn solve_dense<V: VectorField + ?Sized>(f0: &ScalarField, v: &V, substeps: usize) -> Result<TrajectorySolution> {
    solve_transport(f0, v, &v.time_grid().times(), substeps)
}

pub fn solve_dense_with<V: VectorField + ?Sized>(
    f0: &ScalarField,
    v: &V,
    substeps: usize,
    interp: Interpolation,
) -> Result<TrajectorySolution> {
    solve_transport_with(f0, v, &v.time_grid().times(), substeps, interp)
}

/// Time profiles of the built-in space-time test functions. All vanish at
/// `t = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeProfile {
    /// `1 − t`
    Linear,
    /// `(1 − t)²`
    Quadratic,
    /// `t (1 − t)²`
    Cubic,
}

impl TimeProfile {
    pub const ALL: [TimeProfile; 3] = [TimeProfile::Linear, TimeProfile::Quadratic, TimeProfile::Cubic];

    pub fn value(self, t: f64) -> f64 {
        let u = 1.0 - t;
        match self {
            TimeProfile::Linear => u,
            TimeProfile::Quadratic => u * u,
            TimeProfile::Cubic => t * u * u,
        }
    }

    pub fn derivative(self, t: f64) -> f64 {
        let u = 1.0 - t;
        match self {
            TimeProfile::Linear => -1.0,
            TimeProfile::Quadratic => -2.0 * u,
            TimeProfile::Cubic => u * u - 2.0 * t * u,
        }
    }

    /// `∫_a^b q`, by Simpson's rule (exact for cubics).
    fn integral(self, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (self.value(a) + 4.0 * self.value(0.5 * (a + b)) + self.value(b))
    }
}

/// `φ(t, x, y) = b(x) b(y) q(t)` with `b(u) = (1 − ((u − c)/r)²)³` on
/// `|u − c| < r` and zero elsewhere (a C² bump).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestFunction {
    pub center: Vec2,
    pub radius: f64,
    pub profile: TimeProfile,
}

fn bump(u: f64, c: f64, r: f64) -> (f64, f64) {
    let z = (u - c) / r;
    if z.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let w = 1.0 - z * z;
    (w * w * w, -6.0 * z * w * w / r)
}

impl TestFunction {
    /// Spatial factor and its gradient.
    pub fn spatial(&self, p: Vec2) -> (f64, Vec2) {
        let (bx, dbx) = bump(p[0], self.center[0], self.radius);
        let (by, dby) = bump(p[1], self.center[1], self.radius);
        (bx * by, [dbx * by, bx * dby])
    }
}

/// The fixed family: three interior bumps times the three time profiles.
pub fn builtin_test_family() -> Vec<TestFunction> {
    let bumps = [([0.0, 0.0], 0.6), ([0.3, -0.2], 0.4), ([-0.35, 0.3], 0.45)];
    let mut out = Vec::new();
    for (center, radius) in bumps {
        for profile in TimeProfile::ALL {
            out.push(TestFunction { center, radius, profile });
        }
    }
    out
}

/// Residual of the weak form
/// `∫∫ f (∂_t φ + φ div v + v·∇φ) dx dt + ∫ f0 φ(0, ·) dx` for each test
/// function, from dense frames.
///
/// Space: midpoint rule on the image grid. Time: per-interval trapezoid
/// with that interval's velocity for the transport terms; the `∂_t φ` term
/// integrates the linear-in-time frame interpolant exactly, so a stationary
/// solution telescopes to zero.
pub fn weak_residual<V: VectorField + ?Sized>(
    sol: &TrajectorySolution,
    f0: &ScalarField,
    v: &V,
    test_fns: &[TestFunction],
) -> Result<Vec<f64>> {
    let tg = v.time_grid();
    if sol.times != tg.times() {
        return Err(Error::ShapeMismatch("weak residual needs frames at every time-grid point"));
    }
    let grid = *f0.grid();
    for fr in &sol.frames {
        if fr.grid() != &grid {
            return Err(Error::GridMismatch);
        }
    }
    for (n, phi) in test_fns.iter().enumerate() {
        if phi.profile.value(1.0) != 0.0 {
            return Err(Error::TestFunctionSupportViolation(n));
        }
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                if grid.is_boundary(i, j) && phi.spatial(grid.node(i, j)).0 != 0.0 {
                    return Err(Error::TestFunctionSupportViolation(n));
                }
            }
        }
    }

    let nodes = grid.nodes();
    let da = grid.cell_area();
    let m = tg.steps();
    let dt = tg.dt();

    // per interval k, per node: (v·∇φ + φ div v) depends on the test fn, so
    // cache v and div v per interval at both interval endpoints
    let mut fields: Vec<(Vec<Vec2>, Vec<f64>, Vec<Vec2>, Vec<f64>)> = Vec::with_capacity(m);
    for k in 0..m {
        let (a, b) = (tg.time(k), tg.time(k + 1));
        let sample = |t: f64| -> (Vec<Vec2>, Vec<f64>) {
            let vj: Vec<(Vec2, f64)> = par::map(&nodes, |&p| {
                let (u, j) = v.velocity_and_jacobian(k, t, p);
                (u, j[0][0] + j[1][1])
            });
            vj.into_iter().unzip()
        };
        let (ua, da_) = sample(a);
        let (ub, db_) = sample(b);
        fields.push((ua, da_, ub, db_));
    }

    let mut out = Vec::with_capacity(test_fns.len());
    for phi in test_fns {
        let sp: Vec<(f64, Vec2)> = nodes.iter().map(|&p| phi.spatial(p)).collect();
        // ∫ f B
        let moment = |f: &ScalarField| -> f64 { f.values().iter().zip(&sp).map(|(x, s)| x * s.0).sum::<f64>() * da };
        // ∫ f (B div v + v·∇B)
        let flux = |f: &ScalarField, u: &[Vec2], dv: &[f64]| -> f64 {
            let mut s = 0.0;
            for n in 0..nodes.len() {
                let (b, gb) = sp[n];
                s += f.values()[n] * (b * dv[n] + u[n][0] * gb[0] + u[n][1] * gb[1]);
            }
            s * da
        };
        let q = phi.profile;
        let mut total = q.value(0.0) * moment(f0);
        for k in 0..m {
            let (a, b) = (tg.time(k), tg.time(k + 1));
            let (fa, fb) = (&sol.frames[k], &sol.frames[k + 1]);
            // ∫_a^b q'(t) [(1−s) f_a + s f_b] dt with s = (t − a)/(b − a)
            let qbar = q.integral(a, b) / (b - a);
            total += (qbar - q.value(a)) * moment(fa) + (q.value(b) - qbar) * moment(fb);
            let (ua, dva, ub, dvb) = &fields[k];
            total += 0.5 * dt * (q.value(a) * flux(fa, ua, dva) + q.value(b) * flux(fb, ub, dvb));
        }
        out.push(total);
    }
    Ok(out)
}

/// C¹ nonlinearities for the renormalization probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Beta {
    Square,
    Cube,
    /// `tanh`, a smooth saturation.
    SmoothClip,
}

impl Beta {
    pub const ALL: [Beta; 3] = [Beta::Square, Beta::Cube, Beta::SmoothClip];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Beta::Square => x * x,
            Beta::Cube => x * x * x,
            Beta::SmoothClip => libm::tanh(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Beta::Square => "square",
            Beta::Cube => "cube",
            Beta::SmoothClip => "smooth_clip",
        }
    }
}

/// Max weak residual over `test_fns` of `β(f)` against initial datum
/// `β(f0)`, from a dense characteristic solution.
pub fn renormalization_residual<V: VectorField + ?Sized>(
    sol: &TrajectorySolution,
    f0: &ScalarField,
    v: &V,
    beta: Beta,
    test_fns: &[TestFunction],
) -> Result<f64> {
    let bsol = sol.map(|x| beta.apply(x));
    let bf0 = f0.map(|x| beta.apply(x));
    Ok(max_abs(&weak_residual(&bsol, &bf0, v, test_fns)?))
}

pub fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `∫ |f − g|` by the midpoint rule.
pub fn l1_distance(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    f.check_grid(g)?;
    Ok(f.values().iter().zip(g.values()).map(|(a, b)| (a - b).abs()).sum::<f64>() * f.grid().cell_area())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MollifiedConvergenceReport {
    pub epsilons: Vec<f64>,
    pub times: Vec<f64>,
    /// `errors[e][i] = ‖f_ε(t_i) − f(t_i)‖_{L¹}` for `ε = epsilons[e]`.
    pub errors: Vec<Vec<f64>>,
    /// Errors decrease along the schedule at every time.
    pub monotone: bool,
}

/// Transport of mollified initial data against transport of the data
/// itself, at the observation times.
pub fn mollified_initialdata_convergence<V: VectorField + ?Sized>(
    f0: &ScalarField,
    v: &V,
    eps_schedule: &[f64],
    substeps: usize,
) -> Result<MollifiedConvergenceReport> {
    if eps_schedule.is_empty() {
        return Err(Error::EmptySequence);
    }
    let tg = v.time_grid();
    let times: Vec<f64> = tg.obs_indices().iter().map(|&k| tg.time(k)).collect();
    // one set of inverse flows serves every ε
    let flows: Vec<Option<FlowMap>> = times
        .iter()
        .map(|&t| {
            if t == 0.0 || v.is_zero() {
                Ok(None)
            } else {
                inverse_flow(v, f0.grid(), t, substeps).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    let push = |g: &ScalarField, fl: &Option<FlowMap>| -> Result<ScalarField> {
        match fl {
            None => Ok(g.clone()),
            Some(fl) => pullback(g, fl),
        }
    };
    let base: Vec<ScalarField> = flows.iter().map(|fl| push(f0, fl)).collect::<Result<_>>()?;
    let mut errors = Vec::with_capacity(eps_schedule.len());
    for &eps in eps_schedule {
        let m = Mollifier::new(*f0.grid(), eps)?;
        let fe = mollify(f0, &m)?;
        let mut row = Vec::with_capacity(times.len());
        for (fl, b) in flows.iter().zip(&base) {
            row.push(l1_distance(&push(&fe, fl)?, b)?);
        }
        errors.push(row);
    }
    let monotone = errors.windows(2).all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| b < a));
    Ok(MollifiedConvergenceReport {
        epsilons: eps_schedule.to_vec(),
        times,
        errors,
        monotone,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// `d_n = max_i ‖S(f0ⁿ, vₙ)(t_i) − S(f0, v)(t_i)‖_{L¹}`.
    pub discrepancies: Vec<f64>,
    /// `max_i ‖det ∇φ_{0,t_i}‖_∞ · ‖f0ⁿ − f0‖_{L¹}`, the change-of-variables
    /// bound, when the velocity sequence is constant.
    pub bounds: Option<Vec<f64>>,
    pub strictly_decreasing: bool,
    pub bound_dominates: Option<bool>,
}

/// Distance of transported sequences to the transported limit, with the
/// change-of-variables bound for sequences that only perturb `f0`.
pub fn stability_probe<V: VectorField>(
    f0_seq: &[ScalarField],
    v_seq: &[V],
    f0_limit: &ScalarField,
    v_limit: &V,
    substeps: usize,
) -> Result<StabilityReport> {
    if f0_seq.is_empty() || f0_seq.len() != v_seq.len() {
        return Err(Error::EmptySequence);
    }
    for f in f0_seq {
        f0_limit.check_grid(f)?;
    }
    let limit = solve_at_observations(f0_limit, v_limit, substeps)?;
    let mut discrepancies = Vec::with_capacity(f0_seq.len());
    for (f, v) in f0_seq.iter().zip(v_seq) {
        if v.time_grid() != v_limit.time_grid() {
            return Err(Error::GridMismatch);
        }
        let s = solve_at_observations(f, v, substeps)?;
        let mut d = 0.0f64;
        for (a, b) in s.frames.iter().zip(&limit.frames) {
            d = d.max(l1_distance(a, b)?);
        }
        discrepancies.push(d);
    }
    let strictly_decreasing = discrepancies.windows(2).all(|w| w[1] < w[0]);

    let same_v = v_seq.iter().all(|v| v.fingerprint() == v_limit.fingerprint());
    let bounds = if same_v {
        let mut det_max = 0.0f64;
        for &t in &limit.times {
            let fwd = integrate_flow(v_limit, f0_limit.grid(), 0.0, t, substeps)?;
            for j in flow_jacobians(&fwd) {
                det_max = det_max.max(det2(&j).abs());
            }
        }
        Some(
            f0_seq
                .iter()
                .map(|f| Ok(det_max * l1_distance(f, f0_limit)?))
                .collect::<Result<Vec<f64>>>()?,
        )
    } else {
        None
    };
    let bound_dominates = bounds
        .as_ref()
        .map(|b| b.iter().zip(&discrepancies).all(|(b, d)| d <= b));
    Ok(StabilityReport {
        discrepancies,
        bounds,
        strictly_decreasing,
        bound_dominates,
    })
}

/// `(∫ f(t), ∫ f0 · det ∇φ_{0,t})`, the two sides of the change of
/// variables, computed independently.
pub fn mass_change_of_variables<V: VectorField + ?Sized>(
    f0: &ScalarField,
    v: &V,
    t: f64,
    substeps: usize,
) -> Result<(f64, f64)> {
    let ft = solve_transport(f0, v, &[t], substeps)?.frames.remove(0);
    let fwd = integrate_flow(v, f0.grid(), 0.0, t, substeps)?;
    let det: Vec<f64> = flow_jacobians(&fwd).iter().map(det2).collect();
    let weighted: f64 = f0.values().iter().zip(&det).map(|(a, d)| a * d).sum::<f64>() * f0.grid().cell_area();
    Ok((integrate(&ft), weighted))
}

/// Relative L² distance `‖a − b‖ / ‖b‖`.
pub fn relative_l2(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.check_grid(b)?;
    let num: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.values().iter().map(|y| y * y).sum();
    Ok(if den == 0.0 { math::sqrt(num) } else { math::sqrt(num / den) })
}
