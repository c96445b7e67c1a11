//! Flows of the velocity ODE `∂_t φ = v(t, φ)`: node-wise RK4 integration,
//! composition, inverses, Jacobians, and the Hadamard / Gronwall bounds.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, ScalarField, TimeGrid};
use crate::math::{self, det2, spectral_norm, Mat2, Vec2};
use crate::par;
use crate::velocity::{lipschitz_on_grid, VectorField, VelocityField};

/// Endpoints `φ_{s,t}(x)` of every image-grid node `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMap {
    grid: ImageGrid,
    positions: Vec<Vec2>,
    s: f64,
    t: f64,
}

impl FlowMap {
    pub fn identity(grid: ImageGrid, s: f64, t: f64) -> Self {
        Self {
            grid,
            positions: grid.nodes(),
            s,
            t,
        }
    }

    pub fn from_positions(grid: ImageGrid, positions: Vec<Vec2>, s: f64, t: f64) -> Result<Self> {
        if positions.len() != grid.len() {
            return Err(Error::ShapeMismatch("position count differs from grid size"));
        }
        if positions.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(Error::NonFiniteTrajectory);
        }
        Ok(Self {
            grid,
            positions,
            s,
            t,
        })
    }

    /// A synthetic map `x ↦ f(x)`.
    pub fn from_fn(grid: ImageGrid, s: f64, t: f64, f: impl Fn(Vec2) -> Vec2) -> Result<Self> {
        Self::from_positions(grid, grid.nodes().into_iter().map(f).collect(), s, t)
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    pub fn positions(&self) -> &[Vec2] {
        &self.positions
    }

    pub fn start_time(&self) -> f64 {
        self.s
    }

    pub fn end_time(&self) -> f64 {
        self.t
    }

    /// Largest node distance to another map on the same grid.
    pub fn max_distance(&self, other: &FlowMap) -> f64 {
        self.positions
            .iter()
            .zip(&other.positions)
            .map(|(a, b)| math::hypot(a[0] - b[0], a[1] - b[1]))
            .fold(0.0, f64::max)
    }

    /// Largest node distance to the identity.
    pub fn max_displacement(&self) -> f64 {
        self.max_distance(&FlowMap::identity(self.grid, self.s, self.s))
    }

    /// Bilinear interpolation of the map at an arbitrary point. Beyond the
    /// hull of the nodes the displacement is held constant.
    pub fn eval(&self, p: Vec2) -> Vec2 {
        let g = &self.grid;
        let lo = g.node(0, 0);
        let hi = g.node(g.nx - 1, g.ny - 1);
        let q = [p[0].clamp(lo[0], hi[0]), p[1].clamp(lo[1], hi[1])];
        let s = g.stencil(q).expect("clamped point lies in the domain");
        let mut out = [p[0] - q[0], p[1] - q[1]];
        for (&k, &w) in s.idx.iter().zip(&s.w) {
            out[0] += w * self.positions[k][0];
            out[1] += w * self.positions[k][1];
        }
        out
    }
}

/// One classical RK4 step of `dy/dt = v(t, y)` inside interval `k`.
#[inline]
fn rk4_step<V: VectorField + ?Sized>(v: &V, k: usize, t: f64, h: f64, y: Vec2) -> Vec2 {
    let k1 = v.velocity(k, t, y);
    let k2 = v.velocity(k, t + 0.5 * h, [y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
    let k3 = v.velocity(k, t + 0.5 * h, [y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
    let k4 = v.velocity(k, t + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
    [
        y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// A piece of `[s, t]` inside one time-grid interval, in marching order.
#[derive(Debug, Clone, Copy)]
struct Segment {
    interval: usize,
    start: f64,
    end: f64,
}

fn segments(tg: &TimeGrid, s: f64, t: f64) -> Result<Vec<Segment>> {
    for x in [s, t] {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::TimeOutOfRange(x));
        }
    }
    let mut out = Vec::new();
    let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
    for k in 0..tg.steps() {
        let a = lo.max(tg.time(k));
        let b = hi.min(tg.time(k + 1));
        if b > a {
            out.push(if s <= t {
                Segment { interval: k, start: a, end: b }
            } else {
                Segment { interval: k, start: b, end: a }
            });
        }
    }
    if s > t {
        out.reverse();
    }
    Ok(out)
}

/// Escape box: Ω inflated to twice its size about its center.
fn escape_box(grid: &ImageGrid) -> [f64; 4] {
    let c = grid.center();
    let wx = grid.x_max - grid.x_min;
    let wy = grid.y_max - grid.y_min;
    [c[0] - wx, c[0] + wx, c[1] - wy, c[1] + wy]
}

#[inline]
fn escaped(b: &[f64; 4], p: Vec2) -> bool {
    !(p[0] >= b[0] && p[0] <= b[1] && p[1] >= b[2] && p[1] <= b[3])
}

fn integrate_one<V: VectorField + ?Sized>(
    v: &V,
    segs: &[Segment],
    substeps: usize,
    bbox: &[f64; 4],
    mut y: Vec2,
) -> Option<Vec2> {
    for seg in segs {
        let h = (seg.end - seg.start) / substeps as f64;
        for n in 0..substeps {
            let t = seg.start + n as f64 * h;
            y = rk4_step(v, seg.interval, t, h, y);
            if escaped(bbox, y) {
                return None;
            }
        }
    }
    Some(y)
}

/// Carries arbitrary points from time `s` to time `t` (backward if `t < s`).
/// The escape box is taken from `domain`.
pub fn integrate_points<V: VectorField + ?Sized>(
    v: &V,
    domain: &ImageGrid,
    points: &[Vec2],
    s: f64,
    t: f64,
    substeps: usize,
) -> Result<Vec<Vec2>> {
    let substeps = substeps.max(1);
    let segs = segments(v.time_grid(), s, t)?;
    if v.is_zero() || segs.is_empty() {
        return Ok(points.to_vec());
    }
    let bbox = escape_box(domain);
    let out = par::map(points, |&p| integrate_one(v, &segs, substeps, &bbox, p));
    out.into_iter().map(|p| p.ok_or(Error::NonFiniteTrajectory)).collect()
}

/// `φ_{s,t}` on the nodes of `grid` by classical RK4 with `substeps` steps
/// per time-grid interval.
pub fn integrate_flow<V: VectorField + ?Sized>(
    v: &V,
    grid: &ImageGrid,
    s: f64,
    t: f64,
    substeps: usize,
) -> Result<FlowMap> {
    let positions = integrate_points(v, grid, &grid.nodes(), s, t, substeps)?;
    Ok(FlowMap {
        grid: *grid,
        positions,
        s,
        t,
    })
}

/// `(φ_t)^{-1} = φ_{t,0}`.
pub fn inverse_flow<V: VectorField + ?Sized>(v: &V, grid: &ImageGrid, t: f64, substeps: usize) -> Result<FlowMap> {
    integrate_flow(v, grid, t, 0.0, substeps)
}

/// `b ∘ a`: first `a` (from `s` to `r`), then `b` (from `r` to `t`), with `b`
/// interpolated bilinearly at the endpoints of `a`.
pub fn compose(a: &FlowMap, b: &FlowMap) -> Result<FlowMap> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch);
    }
    if (a.t - b.s).abs() > 1e-12 {
        return Err(Error::TimeMismatch { end: a.t, start: b.s });
    }
    Ok(FlowMap {
        grid: a.grid,
        positions: a.positions.iter().map(|&p| b.eval(p)).collect(),
        s: a.s,
        t: b.t,
    })
}

fn interior_max_deviation(grid: &ImageGrid, pos: &[Vec2]) -> f64 {
    let mut m = 0.0f64;
    for j in 1..grid.ny.saturating_sub(1) {
        for i in 1..grid.nx.saturating_sub(1) {
            let x = grid.node(i, j);
            let y = pos[grid.index(i, j)];
            m = m.max(math::hypot(y[0] - x[0], y[1] - x[1]));
        }
    }
    m
}

/// Max interior-node deviation of `φ_{t,0} ∘ φ_{0,t}` from the identity.
///
/// With `interpolated` the composition goes through [`compose`]; otherwise
/// the backward flow is integrated directly from the forward endpoints, so
/// only the time-stepping error remains.
pub fn round_trip_error<V: VectorField + ?Sized>(
    v: &V,
    grid: &ImageGrid,
    t: f64,
    substeps: usize,
    interpolated: bool,
) -> Result<f64> {
    let fwd = integrate_flow(v, grid, 0.0, t, substeps)?;
    let back = if interpolated {
        let inv = inverse_flow(v, grid, t, substeps)?;
        compose(&fwd, &inv)?.positions
    } else {
        integrate_points(v, grid, &fwd.positions, t, 0.0, substeps)?
    };
    Ok(interior_max_deviation(grid, &back))
}

/// Max node distance between `φ_{s,t}` and `φ_{r,t} ∘ φ_{s,r}`, with the
/// same two composition modes as [`round_trip_error`].
pub fn semigroup_error<V: VectorField + ?Sized>(
    v: &V,
    grid: &ImageGrid,
    s: f64,
    r: f64,
    t: f64,
    substeps: usize,
    interpolated: bool,
) -> Result<f64> {
    let direct = integrate_flow(v, grid, s, t, substeps)?;
    let first = integrate_flow(v, grid, s, r, substeps)?;
    let chained = if interpolated {
        compose(&first, &integrate_flow(v, grid, r, t, substeps)?)?
    } else {
        let pos = integrate_points(v, grid, &first.positions, r, t, substeps)?;
        FlowMap::from_positions(*grid, pos, s, t)?
    };
    Ok(direct.max_distance(&chained))
}

/// Central-difference Jacobian of the position field at every node; the
/// boundary ring copies the nearest interior node.
pub fn flow_jacobians(f: &FlowMap) -> Vec<Mat2> {
    let g = &f.grid;
    let (hx, hy) = (g.hx(), g.hy());
    let clampi = |i: usize, n: usize| i.clamp(1, n.saturating_sub(2).max(1));
    let mut out = Vec::with_capacity(g.len());
    for j in 0..g.ny {
        for i in 0..g.nx {
            let (ic, jc) = (clampi(i, g.nx), clampi(j, g.ny));
            if g.nx < 3 || g.ny < 3 {
                out.push([[1.0, 0.0], [0.0, 1.0]]);
                continue;
            }
            let pe = f.positions[g.index(ic + 1, jc)];
            let pw = f.positions[g.index(ic - 1, jc)];
            let pn = f.positions[g.index(ic, jc + 1)];
            let ps = f.positions[g.index(ic, jc - 1)];
            out.push([
                [(pe[0] - pw[0]) / (2.0 * hx), (pn[0] - ps[0]) / (2.0 * hy)],
                [(pe[1] - pw[1]) / (2.0 * hx), (pn[1] - ps[1]) / (2.0 * hy)],
            ]);
        }
    }
    out
}

/// `det ∇φ` per node.
pub fn jacobian_determinant(f: &FlowMap) -> ScalarField {
    let vals = flow_jacobians(f).iter().map(det2).collect();
    ScalarField::from_values(f.grid, vals).unwrap_or_else(|_| ScalarField::zeros(f.grid))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HadamardCheck {
    pub lhs: f64,
    pub rhs_rows: f64,
    pub rhs_cols: f64,
    pub holds: bool,
}

/// `|det A|` against the products of row norms and of column norms.
/// Equality cases are accepted up to a relative rounding slack of 1e-12.
pub fn hadamard_check(a: &Mat2) -> HadamardCheck {
    let lhs = det2(a).abs();
    let rhs_rows = math::hypot(a[0][0], a[0][1]) * math::hypot(a[1][0], a[1][1]);
    let rhs_cols = math::hypot(a[0][0], a[1][0]) * math::hypot(a[0][1], a[1][1]);
    let slack = 1.0 + 1e-12;
    HadamardCheck {
        lhs,
        rhs_rows,
        rhs_cols,
        holds: lhs <= rhs_rows * slack && lhs <= rhs_cols * slack,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GronwallReport {
    /// Max spectral norm of the sampled flow Jacobian.
    pub lip_flow: f64,
    /// `exp(Σ Δτ · Lip(v(τ_k)))` over the intervals covering `[0, t]`.
    pub gronwall_bound: f64,
    /// `‖det ∇φ‖_∞` over nodes.
    pub det_max: f64,
    pub det_min: f64,
    /// `N^{N/2} Lip(φ)^N` with `N = 2`.
    pub det_bound: f64,
    pub tolerance: f64,
    pub lip_ok: bool,
    pub det_ok: bool,
    /// Worst Hadamard violation count over the sampled Jacobians.
    pub hadamard_violations: usize,
}

impl GronwallReport {
    pub fn holds(&self) -> bool {
        self.lip_ok && self.det_ok && self.hadamard_violations == 0
    }
}

/// Relative slack for grid sampling in the Gronwall / determinant checks.
pub const GRONWALL_TOLERANCE: f64 = 0.05;

/// Measured flow Lipschitz constant and Jacobian determinant of `φ_{0,t}`
/// against their Gronwall and Hadamard bounds.
pub fn gronwall_jacobian_report<V: VectorField + ?Sized>(
    v: &V,
    grid: &ImageGrid,
    t: f64,
    substeps: usize,
) -> Result<GronwallReport> {
    let flow = integrate_flow(v, grid, 0.0, t, substeps)?;
    let jacs = flow_jacobians(&flow);
    let lip_flow = jacs.iter().map(spectral_norm).fold(0.0, f64::max);
    let dets: Vec<f64> = jacs.iter().map(det2).collect();
    let det_max = dets.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let det_min = dets.iter().copied().fold(f64::INFINITY, f64::min);
    let hadamard_violations = jacs.iter().filter(|j| !hadamard_check(j).holds).count();

    let mut integral = 0.0;
    for seg in segments(v.time_grid(), 0.0, t)? {
        let lip_v = lipschitz_on_grid(v, seg.interval, seg.start, grid);
        integral += (seg.end - seg.start).abs() * lip_v;
    }
    let gronwall_bound = math::exp(integral);
    let n = crate::DIM as i32;
    let det_bound = math::sqrt(math::powi(n as f64, n)) * math::powi(lip_flow, n);
    let tol = GRONWALL_TOLERANCE;
    Ok(GronwallReport {
        lip_flow,
        gronwall_bound,
        det_max,
        det_min,
        det_bound,
        tolerance: tol,
        lip_ok: lip_flow <= gronwall_bound * (1.0 + tol),
        det_ok: det_max <= det_bound * (1.0 + tol),
        hadamard_violations,
    })
}

/// Per-node reverse-mode sensitivities of a flow with respect to the
/// coefficients of a kernel velocity field.
///
/// For the points `starts` carried from `s` to `t`, and cotangents
/// `lambda_end` on their endpoints, adds `Σ_n (∂y_n(t)/∂α)ᵀ λ_n` into
/// `grad` (laid out like [`VelocityField::coefficients`]). This is the exact
/// transpose of the discrete RK4 map, stages included.
pub fn backprop_coefficients(
    v: &VelocityField,
    domain: &ImageGrid,
    starts: &[Vec2],
    s: f64,
    t: f64,
    substeps: usize,
    lambda_end: &[Vec2],
    grad: &mut [Vec2],
) -> Result<()> {
    if starts.len() != lambda_end.len() {
        return Err(Error::ShapeMismatch("one cotangent per point"));
    }
    if grad.len() != v.coefficients().len() {
        return Err(Error::ShapeMismatch("gradient buffer length"));
    }
    let substeps = substeps.max(1);
    let segs = segments(VectorField::time_grid(v), s, t)?;
    let bbox = escape_box(domain);
    let nc = v.spec().n_control();

    let partials = par::map_chunks(starts.len(), |range| -> Result<Vec<Vec2>> {
        let mut local = vec![[0.0; 2]; grad.len()];
        let mut ys: Vec<Vec2> = Vec::new();
        for n in range {
            let lam = lambda_end[n];
            if lam == [0.0, 0.0] {
                continue;
            }
            // forward sweep, recording the state at the start of every step
            ys.clear();
            let mut y = starts[n];
            for seg in &segs {
                let h = (seg.end - seg.start) / substeps as f64;
                for _ in 0..substeps {
                    ys.push(y);
                    y = rk4_step(v, seg.interval, 0.0, h, y);
                    if escaped(&bbox, y) {
                        return Err(Error::NonFiniteTrajectory);
                    }
                }
            }
            // reverse sweep
            let mut ybar = lam;
            let mut idx = ys.len();
            for seg in segs.iter().rev() {
                let h = (seg.end - seg.start) / substeps as f64;
                let k = seg.interval;
                let out = &mut local[k * nc..(k + 1) * nc];
                for _ in 0..substeps {
                    idx -= 1;
                    ybar = rk4_step_vjp(v, k, h, ys[idx], ybar, out);
                }
            }
        }
        Ok(local)
    });
    for part in partials {
        let part = part?;
        for (g, p) in grad.iter_mut().zip(&part) {
            g[0] += p[0];
            g[1] += p[1];
        }
    }
    Ok(())
}

#[inline]
fn mat_t_vec(j: &Mat2, x: Vec2) -> Vec2 {
    [j[0][0] * x[0] + j[1][0] * x[1], j[0][1] * x[0] + j[1][1] * x[1]]
}

/// Transpose of one RK4 step: returns `ȳ₀` and accumulates the coefficient
/// cotangent of interval `k` into `out`.
fn rk4_step_vjp(v: &VelocityField, k: usize, h: f64, y0: Vec2, y1bar: Vec2, out: &mut [Vec2]) -> Vec2 {
    let k1 = v.velocity(k, 0.0, y0);
    let a2 = [y0[0] + 0.5 * h * k1[0], y0[1] + 0.5 * h * k1[1]];
    let k2 = v.velocity(k, 0.0, a2);
    let a3 = [y0[0] + 0.5 * h * k2[0], y0[1] + 0.5 * h * k2[1]];
    let k3 = v.velocity(k, 0.0, a3);
    let a4 = [y0[0] + h * k3[0], y0[1] + h * k3[1]];

    let sc = |s: f64, x: Vec2| [s * x[0], s * x[1]];
    let add = |a: Vec2, b: Vec2| [a[0] + b[0], a[1] + b[1]];

    let mut ybar = y1bar;
    let mut k1bar = sc(h / 6.0, y1bar);
    let mut k2bar = sc(h / 3.0, y1bar);
    let mut k3bar = sc(h / 3.0, y1bar);
    let k4bar = sc(h / 6.0, y1bar);

    let j4 = v.jacobian(k, 0.0, a4);
    v.accumulate_coefficient_vjp(a4, k4bar, out);
    let a4bar = mat_t_vec(&j4, k4bar);
    ybar = add(ybar, a4bar);
    k3bar = add(k3bar, sc(h, a4bar));

    let j3 = v.jacobian(k, 0.0, a3);
    v.accumulate_coefficient_vjp(a3, k3bar, out);
    let a3bar = mat_t_vec(&j3, k3bar);
    ybar = add(ybar, a3bar);
    k2bar = add(k2bar, sc(0.5 * h, a3bar));

    let j2 = v.jacobian(k, 0.0, a2);
    v.accumulate_coefficient_vjp(a2, k2bar, out);
    let a2bar = mat_t_vec(&j2, k2bar);
    ybar = add(ybar, a2bar);
    k1bar = add(k1bar, sc(0.5 * h, a2bar));

    let j1 = v.jacobian(k, 0.0, y0);
    v.accumulate_coefficient_vjp(y0, k1bar, out);
    add(ybar, mat_t_vec(&j1, k1bar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::velocity::{AnalyticField, AnalyticMotion, BoundaryWindow, KernelSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rotation(grid: &ImageGrid, omega: f64, steps: usize) -> AnalyticField {
        let w = BoundaryWindow::new(grid, grid.h_max(), 0.4).unwrap();
        AnalyticField::new(
            AnalyticMotion::Rotation { omega, center: [0.0, 0.0] },
            Some(w),
            TimeGrid::new(steps, vec![steps]).unwrap(),
        )
    }

    fn rotate(p: Vec2, th: f64) -> Vec2 {
        let (s, c) = th.sin_cos();
        [c * p[0] - s * p[1], s * p[0] + c * p[1]]
    }

    #[test]
    fn zero_field_gives_identity() {
        let g = ImageGrid::square(16).unwrap();
        let spec = KernelSpec::new(g, 4, 4, 0.3).unwrap();
        let v = VelocityField::zeros(spec, TimeGrid::new(4, vec![4]).unwrap());
        for (s, t) in [(0.0, 1.0), (0.75, 0.25), (0.3, 0.3)] {
            let f = integrate_flow(&v, &g, s, t, 4).unwrap();
            assert_eq!(f.positions(), &g.nodes()[..]);
        }
    }

    #[test]
    fn rotation_flow_matches_analytic() {
        let g = ImageGrid::square(64).unwrap();
        let v = rotation(&g, 0.5, 8);
        let f = integrate_flow(&v, &g, 0.0, 1.0, 8).unwrap();
        for (x, y) in g.nodes().iter().zip(f.positions()) {
            if x[0].hypot(x[1]) < 0.55 {
                let e = rotate(*x, 0.5);
                assert!((e[0] - y[0]).hypot(e[1] - y[1]) <= 1e-8);
            }
        }
        let inv = inverse_flow(&v, &g, 1.0, 8).unwrap();
        for (x, y) in g.nodes().iter().zip(inv.positions()) {
            if x[0].hypot(x[1]) < 0.55 {
                let e = rotate(*x, -0.5);
                assert!((e[0] - y[0]).hypot(e[1] - y[1]) <= 1e-6);
            }
        }
    }

    #[test]
    fn translation_exact() {
        let g = ImageGrid::square(32).unwrap();
        let w = BoundaryWindow::new(&g, g.h_max(), 0.4).unwrap();
        let v = AnalyticField::new(
            AnalyticMotion::Translation { velocity: [0.2, 0.0] },
            Some(w),
            TimeGrid::new(4, vec![4]).unwrap(),
        );
        let f = integrate_flow(&v, &g, 0.0, 0.75, 1).unwrap();
        for (x, y) in g.nodes().iter().zip(f.positions()) {
            if x[0].abs() < 0.4 && x[1].abs() < 0.55 {
                assert!((y[0] - x[0] - 0.15).abs() < 1e-10 && (y[1] - x[1]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn compose_identity_cases() {
        let g = ImageGrid::square(32).unwrap();
        let v = rotation(&g, 0.7, 4);
        let f = integrate_flow(&v, &g, 0.0, 0.5, 4).unwrap();
        let id0 = FlowMap::identity(g, 0.0, 0.0);
        assert_eq!(compose(&id0, &f).unwrap(), f);
        let id1 = FlowMap::identity(g, 0.5, 0.5);
        let c = compose(&f, &id1).unwrap();
        assert!(c.max_distance(&f) <= 1e-10);
        assert!(matches!(compose(&id1, &f), Err(Error::TimeMismatch { .. })));
        let other = FlowMap::identity(ImageGrid::square(16).unwrap(), 0.5, 0.5);
        assert_eq!(compose(&f, &other), Err(Error::GridMismatch));
    }

    #[test]
    fn rotations_compose() {
        let g = ImageGrid::square(128).unwrap();
        let a = FlowMap::from_fn(g, 0.0, 0.5, |p| rotate(p, 0.3)).unwrap();
        let b = FlowMap::from_fn(g, 0.5, 1.0, |p| rotate(p, 0.4)).unwrap();
        let c = compose(&a, &b).unwrap();
        for (x, y) in g.nodes().iter().zip(c.positions()) {
            if x[0].hypot(x[1]) < 0.9 {
                let e = rotate(*x, 0.7);
                assert!((e[0] - y[0]).hypot(e[1] - y[1]) <= 1e-6);
            }
        }
    }

    #[test]
    fn determinants_of_synthetic_maps() {
        let g = ImageGrid::square(32).unwrap();
        let id = jacobian_determinant(&FlowMap::identity(g, 0.0, 0.0));
        assert!(id.values().iter().all(|&d| (d - 1.0).abs() < 1e-12));
        let rot = jacobian_determinant(&FlowMap::from_fn(g, 0.0, 1.0, |p| rotate(p, 0.8)).unwrap());
        assert!(rot.values().iter().all(|&d| (d - 1.0).abs() < 1e-6));
        let dil = jacobian_determinant(&FlowMap::from_fn(g, 0.0, 1.0, |p| [1.1 * p[0], 1.1 * p[1]]).unwrap());
        assert!(dil.values().iter().all(|&d| (d - 1.21).abs() < 1e-8));
    }

    #[test]
    fn hadamard_equality_cases() {
        let i = hadamard_check(&[[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!((i.lhs, i.rhs_rows, i.rhs_cols, i.holds), (1.0, 1.0, 1.0, true));
        let d = hadamard_check(&[[2.0, 0.0], [0.0, 3.0]]);
        assert_eq!((d.lhs, d.rhs_rows, d.rhs_cols, d.holds), (6.0, 6.0, 6.0, true));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let m = [
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            ];
            assert!(hadamard_check(&m).holds);
        }
    }

    #[test]
    fn gronwall_for_zero_and_rotation() {
        let g = ImageGrid::square(32).unwrap();
        let z = rotation(&g, 0.0, 4);
        let r = gronwall_jacobian_report(&z, &g, 1.0, 4).unwrap();
        assert_eq!(r.lip_flow, 1.0);
        assert_eq!(r.gronwall_bound, 1.0);
        assert!((r.det_bound - 2.0).abs() < 1e-15);
        assert_eq!(r.det_max, 1.0);
        assert!(r.holds());
    }

    fn random_field(g: ImageGrid, steps: usize, speed: f64, seed: u64) -> VelocityField {
        let spec = KernelSpec::new(g, 6, 6, 0.35).unwrap();
        let tg = TimeGrid::uniform_observations(steps, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = spec.n_control() * steps;
        let a = (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        VelocityField::from_coefficients(spec, tg, a).unwrap().with_max_speed(speed)
    }

    #[test]
    fn rk4_order_on_rotation() {
        let g = ImageGrid::square(32).unwrap();
        let v = rotation(&g, 2.0, 2);
        let errs: Vec<f64> = [1, 2, 4, 8]
            .iter()
            .map(|&n| {
                let f = integrate_flow(&v, &g, 0.0, 1.0, n).unwrap();
                g.nodes()
                    .iter()
                    .zip(f.positions())
                    .filter(|(x, _)| x[0].hypot(x[1]) < 0.55)
                    .map(|(x, y)| {
                        let e = rotate(*x, 2.0);
                        (e[0] - y[0]).hypot(e[1] - y[1])
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 3.7, "{errs:?}");
        }
    }

    #[test]
    fn group_laws_converge() {
        let g = ImageGrid::square(64).unwrap();
        let v = random_field(g, 16, 0.4, 7);
        let rt: Vec<f64> = [1, 2, 4].iter().map(|&n| round_trip_error(&v, &g, 1.0, n, false).unwrap()).collect();
        assert!(rt[0] <= 1e-3 && rt[0] / rt[2] >= 8.0, "{rt:?}");
        assert!(round_trip_error(&v, &g, 1.0, 4, true).unwrap() <= 1e-3);
        let sg: Vec<f64> =
            [1, 2, 4].iter().map(|&n| semigroup_error(&v, &g, 0.1, 0.45, 0.9, n, false).unwrap()).collect();
        assert!(sg[0] <= 1e-3 && sg[0] / sg[2] >= 8.0, "{sg:?}");
        assert!(semigroup_error(&v, &g, 0.1, 0.45, 0.9, 4, true).unwrap() <= 1e-3);
    }

    #[test]
    fn gronwall_and_positivity_on_random_fields() {
        let g = ImageGrid::square(32).unwrap();
        for seed in 0..5 {
            let v = random_field(g, 8, 0.5, seed);
            let r = gronwall_jacobian_report(&v, &g, 1.0, 4).unwrap();
            assert!(r.holds(), "{r:?}");
            assert!(r.det_min > 0.0);
        }
        let rot = rotation(&g, 0.5, 8);
        let r = gronwall_jacobian_report(&rot, &g, 1.0, 8).unwrap();
        assert!(r.holds());
    }

    #[test]
    fn escape_is_reported() {
        let g = ImageGrid::square(8).unwrap();
        let v = AnalyticField::new(
            AnalyticMotion::Translation { velocity: [5.0, 0.0] },
            None,
            TimeGrid::new(1, vec![1]).unwrap(),
        );
        assert_eq!(integrate_flow(&v, &g, 0.0, 1.0, 2), Err(Error::NonFiniteTrajectory));
    }

    #[test]
    fn coefficient_backprop_matches_finite_differences() {
        let g = ImageGrid::square(12).unwrap();
        let spec = KernelSpec::new(g, 3, 3, 0.35).unwrap();
        let tg = TimeGrid::new(2, vec![2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let alpha: Vec<Vec2> = (0..18).map(|_| [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)]).collect();
        let v = VelocityField::from_coefficients(spec, tg, alpha).unwrap();
        let starts = g.nodes();
        let lam: Vec<Vec2> = (0..starts.len()).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let objective = |v: &VelocityField| -> f64 {
            let end = integrate_points(v, &g, &starts, 1.0, 0.0, 3).unwrap();
            end.iter().zip(&lam).map(|(y, l)| y[0] * l[0] + y[1] * l[1]).sum()
        };
        let mut grad = vec![[0.0; 2]; 18];
        backprop_coefficients(&v, &g, &starts, 1.0, 0.0, 3, &lam, &mut grad).unwrap();
        let dir: Vec<Vec2> = (0..18).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let h = 1e-5;
        let fd = (objective(&v.offset(&dir, h).unwrap()) - objective(&v.offset(&dir, -h).unwrap())) / (2.0 * h);
        let an: f64 = grad.iter().zip(&dir).map(|(a, b)| a[0] * b[0] + a[1] * b[1]).sum();
        assert!((fd - an).abs() <= 1e-7 * (1.0 + an.abs()), "{fd} vs {an}");
    }
}
