//! Time-dependent velocity fields.
//!
//! The admissible space is realized as a Gaussian reproducing-kernel space
//! spanned by kernels centered on a tensor lattice of control points,
//! multiplied by a smooth window that vanishes near ∂Ω:
//!
//! ```text
//! v(t, x) = w(x) · Σ_j K(x, x_j) α_j(t),    K(x, y) = exp(−|x − y|² / 2σ²)
//! ```
//!
//! Coefficients are piecewise constant in time over the intervals of a
//! [`TimeGrid`]. The norm `‖v(t)‖²_V = αᵀ K α` is measured on the
//! unwindowed expansion. Because the lattice is a tensor product the Gram
//! matrix factors as `K = K_y ⊗ K_x`; only the one-dimensional factors are
//! stored.
//!
//! [`VectorField`] abstracts what the flow integrator needs, so analytic
//! reference fields ([`AnalyticField`]) run through the same code paths.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, ScalarField, TimeGrid};
use crate::math::{self, spectral_norm, Fingerprint, Mat2, Vec2};

/// A velocity field sampled by the flow integrator.
///
/// `interval` is the time-grid interval the integrator is marching through;
/// fields that are piecewise constant in time use it instead of `t` so that
/// RK4 stages evaluated at an interval's closing time still see that
/// interval's coefficients.
pub trait VectorField: Sync {
    fn time_grid(&self) -> &TimeGrid;

    fn velocity(&self, interval: usize, t: f64, p: Vec2) -> Vec2;

    /// Spatial Jacobian, `J[i][j] = ∂v_i / ∂x_j`.
    fn jacobian(&self, interval: usize, t: f64, p: Vec2) -> Mat2;

    fn velocity_and_jacobian(&self, interval: usize, t: f64, p: Vec2) -> (Vec2, Mat2) {
        (self.velocity(interval, t, p), self.jacobian(interval, t, p))
    }

    fn divergence(&self, interval: usize, t: f64, p: Vec2) -> f64 {
        let j = self.jacobian(interval, t, p);
        j[0][0] + j[1][1]
    }

    /// True if the field vanishes identically (flows are then the identity).
    fn is_zero(&self) -> bool {
        false
    }

    /// Identifier of the field's parameters.
    fn fingerprint(&self) -> u64 {
        0
    }
}

/// Quintic smoothstep on [0, 1] and its derivative.
#[inline]
fn smoothstep(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0)
    } else {
        let t2 = t * t;
        (
            t2 * t * (10.0 - 15.0 * t + 6.0 * t2),
            30.0 * t2 * (1.0 - 2.0 * t + t2),
        )
    }
}

/// Separable taper `w(x, y) = s(d_x) s(d_y)` where `d_x`, `d_y` are the
/// distances to the nearest vertical / horizontal side of Ω. `s` is zero
/// for `d ≤ band` and one for `d ≥ ramp_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryWindow {
    x: [f64; 2],
    y: [f64; 2],
    band: f64,
    ramp_end: f64,
}

impl BoundaryWindow {
    pub fn new(domain: &ImageGrid, band: f64, ramp_end: f64) -> Result<Self> {
        if !(band >= 0.0 && ramp_end > band) {
            return Err(Error::InvalidKernel("window ramp must end beyond its zero band"));
        }
        Ok(Self {
            x: [domain.x_min, domain.x_max],
            y: [domain.y_min, domain.y_max],
            band,
            ramp_end,
        })
    }

    pub fn band(&self) -> f64 {
        self.band
    }

    pub fn ramp_end(&self) -> f64 {
        self.ramp_end
    }

    #[inline]
    fn axis(&self, v: f64, lo: f64, hi: f64) -> (f64, f64) {
        let (d, sign) = if v - lo <= hi - v { (v - lo, 1.0) } else { (hi - v, -1.0) };
        let width = self.ramp_end - self.band;
        let (s, ds) = smoothstep((d - self.band) / width);
        (s, sign * ds / width)
    }

    #[inline]
    pub fn value(&self, p: Vec2) -> f64 {
        self.axis(p[0], self.x[0], self.x[1]).0 * self.axis(p[1], self.y[0], self.y[1]).0
    }

    #[inline]
    pub fn value_and_gradient(&self, p: Vec2) -> (f64, Vec2) {
        let (sx, dsx) = self.axis(p[0], self.x[0], self.x[1]);
        let (sy, dsy) = self.axis(p[1], self.y[0], self.y[1]);
        (sx * sy, [dsx * sy, sx * dsy])
    }

    /// Upper bound on `|∇w|`.
    pub fn gradient_bound(&self) -> f64 {
        math::sqrt(2.0) * 15.0 / (8.0 * (self.ramp_end - self.band))
    }
}

/// Gaussian kernel on a control lattice, plus the boundary window.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    sigma: f64,
    image_grid: ImageGrid,
    control: ImageGrid,
    window: BoundaryWindow,
    cx: Vec<f64>,
    cy: Vec<f64>,
    gram_x: Vec<f64>,
    gram_y: Vec<f64>,
}

/// 1-D Gaussian Gram matrix of a set of centers.
fn gram_1d(c: &[f64], sigma: f64) -> Vec<f64> {
    let n = c.len();
    let mut g = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            let d = c[a] - c[b];
            g[a * n + b] = math::exp(-d * d / (2.0 * sigma * sigma));
        }
    }
    g
}

impl KernelSpec {
    /// Kernel of width `sigma` on an `ncx × ncy` control lattice spanning the
    /// image domain. The window is zero within one image cell of ∂Ω (so the
    /// outer ring of image samples sees exactly zero velocity) and one at
    /// distance ≥ 2σ.
    pub fn new(image_grid: ImageGrid, ncx: usize, ncy: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidKernel("sigma must be positive"));
        }
        let band = image_grid.h_max();
        let window = BoundaryWindow::new(&image_grid, band, 2.0 * sigma)
            .map_err(|_| Error::InvalidKernel("2·sigma must exceed one image cell"))?;
        Self::with_window(image_grid, ncx, ncy, sigma, window)
    }

    pub fn with_window(
        image_grid: ImageGrid,
        ncx: usize,
        ncy: usize,
        sigma: f64,
        window: BoundaryWindow,
    ) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidKernel("sigma must be positive"));
        }
        if ncx > MAX_CONTROL_PER_AXIS || ncy > MAX_CONTROL_PER_AXIS {
            return Err(Error::InvalidKernel("control lattice exceeds 64 points per axis"));
        }
        let g = image_grid;
        let control = ImageGrid::new(ncx, ncy, [g.x_min, g.x_max], [g.y_min, g.y_max])
            .map_err(|_| Error::InvalidKernel("control lattice must be nonempty"))?;
        let cx: Vec<f64> = (0..ncx).map(|a| control.node(a, 0)[0]).collect();
        let cy: Vec<f64> = (0..ncy).map(|b| control.node(0, b)[1]).collect();
        let gram_x = gram_1d(&cx, sigma);
        let gram_y = gram_1d(&cy, sigma);
        Ok(Self {
            sigma,
            image_grid,
            control,
            window,
            cx,
            cy,
            gram_x,
            gram_y,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn image_grid(&self) -> &ImageGrid {
        &self.image_grid
    }

    pub fn control_grid(&self) -> &ImageGrid {
        &self.control
    }

    pub fn window(&self) -> &BoundaryWindow {
        &self.window
    }

    /// Number of control points.
    pub fn n_control(&self) -> usize {
        self.cx.len() * self.cy.len()
    }

    /// Control point `j` (x index inner).
    pub fn control_point(&self, j: usize) -> Vec2 {
        let n = self.cx.len();
        [self.cx[j % n], self.cy[j / n]]
    }

    pub fn kernel(&self, p: Vec2, q: Vec2) -> f64 {
        let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
        math::exp(-(dx * dx + dy * dy) / (2.0 * self.sigma * self.sigma))
    }

    /// Constant `C` with `sup|v| ≤ C‖v‖_V` and `sup‖∇v‖ ≤ C‖v‖_V` for every
    /// windowed expansion: `|u(x)| ≤ ‖u‖`, `‖∇u(x)‖_F ≤ √2‖u‖/σ`, and the
    /// product rule through the window adds `sup|∇w|·‖u‖`.
    pub fn embedding_constant(&self) -> f64 {
        (self.window.gradient_bound() + math::sqrt(2.0) / self.sigma).max(1.0)
    }

    /// Kernel values and x/y-derivative factors of the separable expansion
    /// at `p`: `(gx, dgx, gy, dgy)`.
    fn factors(&self, p: Vec2, buf: &mut FactorBuf) {
        let s2 = self.sigma * self.sigma;
        for (a, &c) in self.cx.iter().enumerate() {
            let d = p[0] - c;
            let g = math::exp(-d * d / (2.0 * s2));
            buf.gx[a] = g;
            buf.dgx[a] = -d / s2 * g;
        }
        for (b, &c) in self.cy.iter().enumerate() {
            let d = p[1] - c;
            let g = math::exp(-d * d / (2.0 * s2));
            buf.gy[b] = g;
            buf.dgy[b] = -d / s2 * g;
        }
    }

    /// Dense control-point Gram matrix `K_y ⊗ K_x` (row-major).
    pub fn dense_gram(&self) -> Vec<f64> {
        let n = self.n_control();
        let nx = self.cx.len();
        let ny = self.cy.len();
        let mut k = vec![0.0; n * n];
        for j in 0..n {
            for l in 0..n {
                k[j * n + l] = self.gram_x[(j % nx) * nx + l % nx] * self.gram_y[(j / nx) * ny + l / nx];
            }
        }
        k
    }

    /// `K α` for one time slice.
    pub fn gram_apply(&self, alpha: &[Vec2]) -> Vec<Vec2> {
        let nx = self.cx.len();
        let ny = self.cy.len();
        // along x: t[b][a'] = Σ_a K_x[a'][a] α[b][a]
        let mut t = vec![[0.0; 2]; nx * ny];
        for b in 0..ny {
            for a2 in 0..nx {
                let mut s = [0.0, 0.0];
                for a in 0..nx {
                    let k = self.gram_x[a2 * nx + a];
                    let v = alpha[b * nx + a];
                    s[0] += k * v[0];
                    s[1] += k * v[1];
                }
                t[b * nx + a2] = s;
            }
        }
        let mut out = vec![[0.0; 2]; nx * ny];
        for b2 in 0..ny {
            for b in 0..ny {
                let k = self.gram_y[b2 * ny + b];
                for a in 0..nx {
                    let v = t[b * nx + a];
                    let o = &mut out[b2 * nx + a];
                    o[0] += k * v[0];
                    o[1] += k * v[1];
                }
            }
        }
        out
    }
}

/// Largest control-lattice size per axis.
pub const MAX_CONTROL_PER_AXIS: usize = 64;

struct FactorBuf {
    gx: [f64; MAX_CONTROL_PER_AXIS],
    dgx: [f64; MAX_CONTROL_PER_AXIS],
    gy: [f64; MAX_CONTROL_PER_AXIS],
    dgy: [f64; MAX_CONTROL_PER_AXIS],
}

impl Default for FactorBuf {
    fn default() -> Self {
        Self {
            gx: [0.0; MAX_CONTROL_PER_AXIS],
            dgx: [0.0; MAX_CONTROL_PER_AXIS],
            gy: [0.0; MAX_CONTROL_PER_AXIS],
            dgy: [0.0; MAX_CONTROL_PER_AXIS],
        }
    }
}

/// Kernel-expansion velocity field with coefficients piecewise constant in
/// time.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    spec: KernelSpec,
    time_grid: TimeGrid,
    /// `steps × n_control` 2-vectors, interval-major.
    alpha: Vec<Vec2>,
}

impl VelocityField {
    pub fn zeros(spec: KernelSpec, time_grid: TimeGrid) -> Self {
        let n = spec.n_control() * time_grid.steps();
        Self {
            spec,
            time_grid,
            alpha: vec![[0.0; 2]; n],
        }
    }

    pub fn from_coefficients(spec: KernelSpec, time_grid: TimeGrid, alpha: Vec<Vec2>) -> Result<Self> {
        if alpha.len() != spec.n_control() * time_grid.steps() {
            return Err(Error::ShapeMismatch("coefficient count != steps × control points"));
        }
        if alpha.iter().any(|a| !(a[0].is_finite() && a[1].is_finite())) {
            return Err(Error::InvalidKernel("non-finite coefficient"));
        }
        Ok(Self {
            spec,
            time_grid,
            alpha,
        })
    }

    /// Fits coefficients so the unwindowed expansion interpolates
    /// `target(t, x_j)` at the control points on every interval (target
    /// sampled at interval midpoints), with a small ridge term.
    pub fn fit(
        spec: KernelSpec,
        time_grid: TimeGrid,
        target: impl Fn(f64, Vec2) -> Vec2,
    ) -> Result<Self> {
        let ridge = 1e-8;
        let nx = spec.cx.len();
        let ny = spec.cy.len();
        let lx = cholesky_with_ridge(&spec.gram_x, nx, ridge)?;
        let ly = cholesky_with_ridge(&spec.gram_y, ny, ridge)?;
        let n = spec.n_control();
        let mut alpha = Vec::with_capacity(n * time_grid.steps());
        for k in 0..time_grid.steps() {
            let t = (k as f64 + 0.5) * time_grid.dt();
            let mut rhs: Vec<Vec2> = (0..n).map(|j| target(t, spec.control_point(j))).collect();
            for c in 0..2 {
                // solve (K_y ⊗ K_x) a = rhs: x-direction solves on every row,
                // then y-direction solves on every column
                let mut col = vec![0.0; nx.max(ny)];
                for b in 0..ny {
                    for a in 0..nx {
                        col[a] = rhs[b * nx + a][c];
                    }
                    cholesky_solve(&lx, nx, &mut col[..nx]);
                    for a in 0..nx {
                        rhs[b * nx + a][c] = col[a];
                    }
                }
                for a in 0..nx {
                    for b in 0..ny {
                        col[b] = rhs[b * nx + a][c];
                    }
                    cholesky_solve(&ly, ny, &mut col[..ny]);
                    for b in 0..ny {
                        rhs[b * nx + a][c] = col[b];
                    }
                }
            }
            alpha.extend(rhs);
        }
        Self::from_coefficients(spec, time_grid, alpha)
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn coefficients(&self) -> &[Vec2] {
        &self.alpha
    }

    pub fn coefficients_mut(&mut self) -> &mut [Vec2] {
        &mut self.alpha
    }

    /// Coefficients of one time interval.
    pub fn slice(&self, k: usize) -> &[Vec2] {
        let n = self.spec.n_control();
        &self.alpha[k * n..(k + 1) * n]
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for a in out.alpha.iter_mut() {
            a[0] *= s;
            a[1] *= s;
        }
        out
    }

    /// `self + s·dir` for a coefficient-space direction of matching length.
    pub fn offset(&self, dir: &[Vec2], s: f64) -> Result<Self> {
        if dir.len() != self.alpha.len() {
            return Err(Error::ShapeMismatch("direction length"));
        }
        let mut out = self.clone();
        for (a, d) in out.alpha.iter_mut().zip(dir) {
            a[0] += s * d[0];
            a[1] += s * d[1];
        }
        Ok(out)
    }

    /// Largest `|v(τ_k, x)|` over intervals and image-grid nodes.
    pub fn max_speed(&self) -> f64 {
        let nodes = self.spec.image_grid.nodes();
        let mut m = 0.0f64;
        for k in 0..self.time_grid.steps() {
            for &p in &nodes {
                let u = self.velocity(k, 0.0, p);
                m = m.max(math::hypot(u[0], u[1]));
            }
        }
        m
    }

    /// Rescales the coefficients so that [`max_speed`](Self::max_speed)
    /// equals `target`. A zero field is left unchanged.
    pub fn with_max_speed(&self, target: f64) -> Self {
        let m = self.max_speed();
        if m == 0.0 {
            return self.clone();
        }
        self.scaled(target / m)
    }

    pub fn is_identically_zero(&self) -> bool {
        self.alpha.iter().all(|a| a[0] == 0.0 && a[1] == 0.0)
    }

    fn eval_in(&self, k: usize, p: Vec2, buf: &mut FactorBuf, with_jac: bool) -> (Vec2, Mat2) {
        let (w, dw) = self.spec.window.value_and_gradient(p);
        if w == 0.0 && (!with_jac || (dw[0] == 0.0 && dw[1] == 0.0)) {
            return ([0.0; 2], [[0.0; 2]; 2]);
        }
        self.spec.factors(p, buf);
        let nx = self.spec.cx.len();
        let alpha = self.slice(k);
        let mut u = [0.0; 2];
        let mut ux = [0.0; 2];
        let mut uy = [0.0; 2];
        for (b, row) in alpha.chunks_exact(nx).enumerate() {
            let (mut s, mut sx) = ([0.0; 2], [0.0; 2]);
            for (a, v) in row.iter().enumerate() {
                let g = buf.gx[a];
                s[0] += g * v[0];
                s[1] += g * v[1];
                if with_jac {
                    let dg = buf.dgx[a];
                    sx[0] += dg * v[0];
                    sx[1] += dg * v[1];
                }
            }
            let gy = buf.gy[b];
            u[0] += gy * s[0];
            u[1] += gy * s[1];
            if with_jac {
                ux[0] += gy * sx[0];
                ux[1] += gy * sx[1];
                let dgy = buf.dgy[b];
                uy[0] += dgy * s[0];
                uy[1] += dgy * s[1];
            }
        }
        let v = [w * u[0], w * u[1]];
        let jac = if with_jac {
            [
                [u[0] * dw[0] + w * ux[0], u[0] * dw[1] + w * uy[0]],
                [u[1] * dw[0] + w * ux[1], u[1] * dw[1] + w * uy[1]],
            ]
        } else {
            [[0.0; 2]; 2]
        };
        (v, jac)
    }

    /// `v(t, p)`.
    pub fn eval_velocity(&self, t: f64, p: Vec2) -> Result<Vec2> {
        let k = self.time_grid.interval_of(t)?;
        Ok(self.velocity(k, t, p))
    }

    /// `‖v(τ_k)‖²_V = α_kᵀ K α_k`.
    pub fn v_norm_sq(&self, k: usize) -> Result<f64> {
        if k >= self.time_grid.steps() {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: self.time_grid.steps(),
            });
        }
        let a = self.slice(k);
        let ka = self.spec.gram_apply(a);
        Ok(a.iter().zip(&ka).map(|(x, y)| x[0] * y[0] + x[1] * y[1]).sum())
    }

    /// `∫_0^{τ_up_to} ‖v(τ)‖²_V dτ = Δτ Σ_{k < up_to} ‖v(τ_k)‖²_V`.
    pub fn r2_energy(&self, up_to: usize) -> Result<f64> {
        if up_to > self.time_grid.steps() {
            return Err(Error::IndexOutOfRange {
                index: up_to,
                len: self.time_grid.steps() + 1,
            });
        }
        let mut s = 0.0;
        for k in 0..up_to {
            s += self.v_norm_sq(k)?;
        }
        Ok(self.time_grid.dt() * s)
    }

    /// Analytic divergence sampled on the image grid.
    pub fn divergence_field(&self, t: f64) -> Result<ScalarField> {
        let k = self.time_grid.interval_of(t)?;
        let mut buf = FactorBuf::default();
        Ok(ScalarField::from_fn(self.spec.image_grid, |p| {
            let (_, j) = self.eval_in(k, p, &mut buf, true);
            j[0][0] + j[1][1]
        }))
    }

    /// Max over image-grid samples of the spectral norm of the analytic
    /// Jacobian.
    pub fn lipschitz_estimate(&self, t: f64) -> Result<f64> {
        let k = self.time_grid.interval_of(t)?;
        Ok(lipschitz_on_grid(self, k, t, &self.spec.image_grid))
    }

    /// Adds `λ · ∂v(p)/∂α_k` (a vector–Jacobian product) into `out`, which
    /// holds one 2-vector per control point of interval `k`.
    pub fn accumulate_coefficient_vjp(&self, p: Vec2, lambda: Vec2, out: &mut [Vec2]) {
        let w = self.spec.window.value(p);
        if w == 0.0 || (lambda[0] == 0.0 && lambda[1] == 0.0) {
            return;
        }
        let mut buf = FactorBuf::default();
        self.spec.factors(p, &mut buf);
        let nx = self.spec.cx.len();
        for (b, row) in out.chunks_exact_mut(nx).enumerate() {
            let wy = w * buf.gy[b];
            for (a, o) in row.iter_mut().enumerate() {
                let s = wy * buf.gx[a];
                o[0] += s * lambda[0];
                o[1] += s * lambda[1];
            }
        }
    }
}

impl VectorField for VelocityField {
    fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    fn velocity(&self, interval: usize, _t: f64, p: Vec2) -> Vec2 {
        let mut buf = FactorBuf::default();
        self.eval_in(interval, p, &mut buf, false).0
    }

    fn jacobian(&self, interval: usize, _t: f64, p: Vec2) -> Mat2 {
        let mut buf = FactorBuf::default();
        self.eval_in(interval, p, &mut buf, true).1
    }

    fn velocity_and_jacobian(&self, interval: usize, _t: f64, p: Vec2) -> (Vec2, Mat2) {
        let mut buf = FactorBuf::default();
        self.eval_in(interval, p, &mut buf, true)
    }

    fn is_zero(&self) -> bool {
        self.is_identically_zero()
    }

    fn fingerprint(&self) -> u64 {
        let mut h = Fingerprint::default();
        let g = &self.spec.image_grid;
        h.write_all(&[g.x_min, g.x_max, g.y_min, g.y_max, self.spec.sigma]);
        for n in [g.nx, g.ny, self.spec.cx.len(), self.spec.cy.len(), self.time_grid.steps()] {
            h.write_u64(n as u64);
        }
        h.write_all(&[self.spec.window.band(), self.spec.window.ramp_end()]);
        for a in &self.alpha {
            h.write_all(a);
        }
        h.finish()
    }
}

/// Max spectral norm of `∇v` over the samples of `grid` on one interval.
pub fn lipschitz_on_grid<V: VectorField + ?Sized>(v: &V, interval: usize, t: f64, grid: &ImageGrid) -> f64 {
    grid.nodes()
        .into_iter()
        .map(|p| spectral_norm(&v.jacobian(interval, t, p)))
        .fold(0.0, f64::max)
}

/// Closed-form reference motions, optionally tapered by a window.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalyticMotion {
    /// `ω (−(y − c_y), x − c_x)`.
    Rotation { omega: f64, center: Vec2 },
    /// Constant velocity.
    Translation { velocity: Vec2 },
    /// `A x + b`.
    Affine { a: Mat2, b: Vec2 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticField {
    pub motion: AnalyticMotion,
    pub window: Option<BoundaryWindow>,
    pub time_grid: TimeGrid,
}

impl AnalyticField {
    pub fn new(motion: AnalyticMotion, window: Option<BoundaryWindow>, time_grid: TimeGrid) -> Self {
        Self {
            motion,
            window,
            time_grid,
        }
    }

    fn raw(&self, p: Vec2) -> (Vec2, Mat2) {
        match self.motion {
            AnalyticMotion::Rotation { omega, center } => (
                [-omega * (p[1] - center[1]), omega * (p[0] - center[0])],
                [[0.0, -omega], [omega, 0.0]],
            ),
            AnalyticMotion::Translation { velocity } => (velocity, [[0.0; 2]; 2]),
            AnalyticMotion::Affine { a, b } => (
                [
                    a[0][0] * p[0] + a[0][1] * p[1] + b[0],
                    a[1][0] * p[0] + a[1][1] * p[1] + b[1],
                ],
                a,
            ),
        }
    }
}

impl VectorField for AnalyticField {
    fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    fn velocity(&self, _interval: usize, _t: f64, p: Vec2) -> Vec2 {
        let (u, _) = self.raw(p);
        match &self.window {
            None => u,
            Some(w) => {
                let s = w.value(p);
                [s * u[0], s * u[1]]
            }
        }
    }

    fn jacobian(&self, interval: usize, t: f64, p: Vec2) -> Mat2 {
        self.velocity_and_jacobian(interval, t, p).1
    }

    fn velocity_and_jacobian(&self, _interval: usize, _t: f64, p: Vec2) -> (Vec2, Mat2) {
        let (u, ju) = self.raw(p);
        match &self.window {
            None => (u, ju),
            Some(w) => {
                let (s, ds) = w.value_and_gradient(p);
                (
                    [s * u[0], s * u[1]],
                    [
                        [u[0] * ds[0] + s * ju[0][0], u[0] * ds[1] + s * ju[0][1]],
                        [u[1] * ds[0] + s * ju[1][0], u[1] * ds[1] + s * ju[1][1]],
                    ],
                )
            }
        }
    }

    fn is_zero(&self) -> bool {
        match self.motion {
            AnalyticMotion::Rotation { omega, .. } => omega == 0.0,
            AnalyticMotion::Translation { velocity } => velocity == [0.0, 0.0],
            AnalyticMotion::Affine { a, b } => a == [[0.0; 2]; 2] && b == [0.0; 2],
        }
    }

    fn fingerprint(&self) -> u64 {
        let mut h = Fingerprint::default();
        match self.motion {
            AnalyticMotion::Rotation { omega, center } => {
                h.write_u64(1);
                h.write_all(&[omega, center[0], center[1]]);
            }
            AnalyticMotion::Translation { velocity } => {
                h.write_u64(2);
                h.write_all(&velocity);
            }
            AnalyticMotion::Affine { a, b } => {
                h.write_u64(3);
                h.write_all(&[a[0][0], a[0][1], a[1][0], a[1][1], b[0], b[1]]);
            }
        }
        if let Some(w) = &self.window {
            h.write_all(&[w.band(), w.ramp_end()]);
        }
        h.write_u64(self.time_grid.steps() as u64);
        h.finish()
    }
}

/// Lower Cholesky factor of `m + ridge·I` (dense row-major `n × n`).
fn cholesky_with_ridge(m: &[f64], n: usize, ridge: f64) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[i * n + j] + if i == j { ridge } else { 0.0 };
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::NotPositiveDefinite);
                }
                l[i * n + i] = math::sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}
