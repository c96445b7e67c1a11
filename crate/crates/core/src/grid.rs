//! Uniform cell-centered discretization of a rectangle Ω ⊂ ℝ² and of the
//! time interval [0, 1], with the scalar field container every other
//! module works on.
//!
//! Samples live at cell centers, stored row-major with `y` as the outer
//! index. Quadrature is the midpoint rule, interpolation is bilinear, and a
//! field is extended by zero outside Ω.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, Vec2};

/// Interpolation coordinates within this distance of a sample (in index
/// units) are snapped onto it, so maps that land on nodes reproduce
/// samples exactly.
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageGrid {
    pub nx: usize,
    pub ny: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl ImageGrid {
    pub fn new(nx: usize, ny: usize, x: [f64; 2], y: [f64; 2]) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidGrid("pixel counts must be positive"));
        }
        if !(x[0].is_finite() && x[1].is_finite() && y[0].is_finite() && y[1].is_finite()) {
            return Err(Error::InvalidGrid("bounds must be finite"));
        }
        if x[1] <= x[0] || y[1] <= y[0] {
            return Err(Error::InvalidGrid("empty domain"));
        }
        Ok(Self {
            nx,
            ny,
            x_min: x[0],
            x_max: x[1],
            y_min: y[0],
            y_max: y[1],
        })
    }

    /// `n × n` cells on the default domain Ω = [−1, 1]².
    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n, [-1.0, 1.0], [-1.0, 1.0])
    }

    #[inline]
    pub fn hx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    #[inline]
    pub fn hy(&self) -> f64 {
        (self.y_max - self.y_min) / self.ny as f64
    }

    #[inline]
    pub fn h_max(&self) -> f64 {
        self.hx().max(self.hy())
    }

    /// Lebesgue measure of one cell.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    /// Lebesgue measure of Ω.
    #[inline]
    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Cell center of pixel `(i, j)`.
    #[inline]
    pub fn node(&self, i: usize, j: usize) -> Vec2 {
        [
            self.x_min + (i as f64 + 0.5) * self.hx(),
            self.y_min + (j as f64 + 0.5) * self.hy(),
        ]
    }

    /// All cell centers in storage order.
    pub fn nodes(&self) -> Vec<Vec2> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push(self.node(i, j));
            }
        }
        out
    }

    pub fn center(&self) -> Vec2 {
        [
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        ]
    }

    /// Closed-domain membership.
    #[inline]
    pub fn contains(&self, p: Vec2) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }

    /// Distance from `p` to ∂Ω (zero or negative outside).
    pub fn distance_to_boundary(&self, p: Vec2) -> f64 {
        let dx = (p[0] - self.x_min).min(self.x_max - p[0]);
        let dy = (p[1] - self.y_min).min(self.y_max - p[1]);
        dx.min(dy)
    }

    /// True for pixels on the outermost ring.
    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.nx || j + 1 == self.ny
    }

    /// Pixel index ranges `(i0..i1, j0..j1)` of cells whose centers are at
    /// distance greater than `eps` from ∂Ω (the interior domain Ω_ε).
    pub fn interior_range(&self, eps: f64) -> (core::ops::Range<usize>, core::ops::Range<usize>) {
        let ri = (0..self.nx)
            .filter(|&i| {
                let x = self.node(i, 0)[0];
                (x - self.x_min).min(self.x_max - x) > eps
            })
            .fold(None, |acc: Option<(usize, usize)>, i| match acc {
                None => Some((i, i + 1)),
                Some((a, _)) => Some((a, i + 1)),
            })
            .unwrap_or((0, 0));
        let rj = (0..self.ny)
            .filter(|&j| {
                let y = self.node(0, j)[1];
                (y - self.y_min).min(self.y_max - y) > eps
            })
            .fold(None, |acc: Option<(usize, usize)>, j| match acc {
                None => Some((j, j + 1)),
                Some((a, _)) => Some((a, j + 1)),
            })
            .unwrap_or((0, 0));
        (ri.0..ri.1, rj.0..rj.1)
    }
}

/// Bilinear stencil of a point: four sample indices and weights summing
/// to one. Weights may be zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub idx: [usize; 4],
    pub w: [f64; 4],
}

#[derive(Debug, Clone, Copy)]
struct AxisStencil {
    i0: usize,
    i1: usize,
    w1: f64,
    /// Coordinate was clamped to the sample hull (derivative is zero).
    clamped: bool,
    /// Coordinate was snapped onto a sample.
    snapped: bool,
}

fn axis_stencil(u: f64, n: usize) -> AxisStencil {
    if n == 1 {
        return AxisStencil {
            i0: 0,
            i1: 0,
            w1: 0.0,
            clamped: true,
            snapped: false,
        };
    }
    let top = (n - 1) as f64;
    let (u, clamped) = if u < 0.0 {
        (0.0, true)
    } else if u > top {
        (top, true)
    } else {
        (u, false)
    };
    let r = math::round(u);
    let (u, snapped) = if (u - r).abs() <= SNAP { (r, true) } else { (u, false) };
    let i0 = (math::floor(u) as usize).min(n - 2);
    AxisStencil {
        i0,
        i1: i0 + 1,
        w1: u - i0 as f64,
        clamped,
        snapped,
    }
}

impl ImageGrid {
    #[inline]
    fn fractional(&self, p: Vec2) -> (f64, f64) {
        (
            (p[0] - self.x_min) / self.hx() - 0.5,
            (p[1] - self.y_min) / self.hy() - 0.5,
        )
    }

    /// Bilinear stencil of `p`, or `None` outside Ω (zero extension).
    pub fn stencil(&self, p: Vec2) -> Option<Stencil> {
        if !self.contains(p) {
            return None;
        }
        let (u, v) = self.fractional(p);
        let a = axis_stencil(u, self.nx);
        let b = axis_stencil(v, self.ny);
        let (wx0, wx1) = (1.0 - a.w1, a.w1);
        let (wy0, wy1) = (1.0 - b.w1, b.w1);
        Some(Stencil {
            idx: [
                self.index(a.i0, b.i0),
                self.index(a.i1, b.i0),
                self.index(a.i0, b.i1),
                self.index(a.i1, b.i1),
            ],
            w: [wx0 * wy0, wx1 * wy0, wx0 * wy1, wx1 * wy1],
        })
    }
}

/// Cell-centered samples of a function Ω → ℝ.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: ImageGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: ImageGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: ImageGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Wraps samples, rejecting wrong lengths and non-finite values.
    pub fn from_values(grid: ImageGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch("sample count differs from grid size"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("non-finite sample"));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: ImageGrid, mut f: impl FnMut(Vec2) -> f64) -> Self {
        let values = grid.nodes().into_iter().map(&mut f).collect();
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    /// `a·self + b·other`.
    pub fn lincomb(&self, a: f64, other: &ScalarField, b: f64) -> Result<Self> {
        self.check_grid(other)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn sub(&self, other: &ScalarField) -> Result<Self> {
        self.lincomb(1.0, other, -1.0)
    }

    /// `self += a·other`.
    pub fn axpy(&mut self, a: f64, other: &ScalarField) -> Result<()> {
        self.check_grid(other)?;
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
        Ok(())
    }

    pub fn check_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Euclidean inner product of the sample vectors.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn linf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// ∫_Ω |f| dx.
    pub fn l1_norm(&self) -> f64 {
        self.grid.cell_area() * self.values.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// (∫_Ω f² dx)^{1/2}.
    pub fn l2_norm(&self) -> f64 {
        math::sqrt(self.grid.cell_area() * self.values.iter().map(|v| v * v).sum::<f64>())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Bilinear interpolation of cell-center samples; zero outside Ω.
///
/// Inside Ω but beyond the outermost cell centers the nearest samples are
/// held constant, so constants are reproduced on all of Ω.
pub fn interpolate(field: &ScalarField, p: Vec2) -> f64 {
    let g = &field.grid;
    if !g.contains(p) {
        return 0.0;
    }
    let (u, v) = g.fractional(p);
    let a = axis_stencil(u, g.nx);
    let b = axis_stencil(v, g.ny);
    let f = |i: usize, j: usize| field.values[g.index(i, j)];
    let r0 = lerp(f(a.i0, b.i0), f(a.i1, b.i0), a.w1);
    let r1 = lerp(f(a.i0, b.i1), f(a.i1, b.i1), a.w1);
    lerp(r0, r1, b.w1)
}

/// `a + t (b − a)`: reproduces constants bit-exactly and both endpoints.
#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 1.0 {
        b
    } else {
        a + t * (b - a)
    }
}

/// Keys cubic convolution weight (`a = −1/2`, Catmull–Rom).
fn keys(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        (1.5 * x - 2.5) * x * x + 1.0
    } else if x < 2.0 {
        ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
    } else {
        0.0
    }
}

/// Catmull–Rom interpolation of cell-center samples; zero outside Ω.
///
/// Third-order accurate for smooth data and exact on quadratics away from
/// the edge, but not monotone: it can overshoot the sample range near
/// jumps. Indices past the edge repeat the outermost sample.
pub fn interpolate_cubic(field: &ScalarField, p: Vec2) -> f64 {
    let g = &field.grid;
    if !g.contains(p) {
        return 0.0;
    }
    let (u, v) = g.fractional(p);
    let snap = |x: f64, n: usize| {
        let x = x.clamp(0.0, (n - 1) as f64);
        let r = math::round(x);
        if (x - r).abs() <= SNAP {
            r
        } else {
            x
        }
    };
    let (u, v) = (snap(u, g.nx), snap(v, g.ny));
    let (i0, j0) = (math::floor(u) as isize, math::floor(v) as isize);
    let wx: [f64; 4] = core::array::from_fn(|k| keys(u - (i0 + k as isize - 1) as f64));
    let wy: [f64; 4] = core::array::from_fn(|k| keys(v - (j0 + k as isize - 1) as f64));
    let col = |i: isize| (i.clamp(0, g.nx as isize - 1)) as usize;
    let row = |j: isize| (j.clamp(0, g.ny as isize - 1)) as usize;
    let mut s = 0.0;
    for (dj, wyj) in wy.iter().enumerate() {
        let j = row(j0 + dj as isize - 1);
        let mut r = 0.0;
        for (di, wxi) in wx.iter().enumerate() {
            r += wxi * field.values[g.index(col(i0 + di as isize - 1), j)];
        }
        s += wyj * r;
    }
    s
}

/// Interpolated value and its spatial gradient.
///
/// At a sample line the bilinear interpolant has a kink; there the
/// derivative across it is the average of both one-sided slopes.
pub fn interpolate_with_gradient(field: &ScalarField, p: Vec2) -> (f64, Vec2) {
    let g = &field.grid;
    if !g.contains(p) {
        return (0.0, [0.0, 0.0]);
    }
    let (u, v) = g.fractional(p);
    let a = axis_stencil(u, g.nx);
    let b = axis_stencil(v, g.ny);
    let f = |i: usize, j: usize| field.values[g.index(i, j)];
    let (wx0, wx1) = (1.0 - a.w1, a.w1);
    let (wy0, wy1) = (1.0 - b.w1, b.w1);
    let value = lerp(
        lerp(f(a.i0, b.i0), f(a.i1, b.i0), a.w1),
        lerp(f(a.i0, b.i1), f(a.i1, b.i1), a.w1),
        b.w1,
    );

    // Derivative along x of the row blend at a given y-stencil.
    let slope_x = |j: usize| -> f64 {
        if a.clamped {
            0.0
        } else if a.snapped && a.w1 == 0.0 && a.i0 > 0 {
            0.5 * (f(a.i1, j) - f(a.i0 - 1, j))
        } else if a.snapped && a.w1 == 1.0 && a.i1 + 1 < g.nx {
            0.5 * (f(a.i1 + 1, j) - f(a.i0, j))
        } else {
            f(a.i1, j) - f(a.i0, j)
        }
    };
    let slope_y = |i: usize| -> f64 {
        if b.clamped {
            0.0
        } else if b.snapped && b.w1 == 0.0 && b.i0 > 0 {
            0.5 * (f(i, b.i1) - f(i, b.i0 - 1))
        } else if b.snapped && b.w1 == 1.0 && b.i1 + 1 < g.ny {
            0.5 * (f(i, b.i1 + 1) - f(i, b.i0))
        } else {
            f(i, b.i1) - f(i, b.i0)
        }
    };
    let dx = (wy0 * slope_x(b.i0) + wy1 * slope_x(b.i1)) / g.hx();
    let dy = (wx0 * slope_y(a.i0) + wx1 * slope_y(a.i1)) / g.hy();
    (value, [dx, dy])
}

/// Central differences in the interior, one-sided on the boundary ring.
pub fn gradient_central(field: &ScalarField) -> Result<(ScalarField, ScalarField)> {
    let g = field.grid;
    if g.nx < 3 || g.ny < 3 {
        return Err(Error::GridTooSmall { nx: g.nx, ny: g.ny });
    }
    let (hx, hy) = (g.hx(), g.hy());
    let mut gx = ScalarField::zeros(g);
    let mut gy = ScalarField::zeros(g);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.index(i, j);
            gx.values[k] = if i == 0 {
                (field.at(1, j) - field.at(0, j)) / hx
            } else if i + 1 == g.nx {
                (field.at(i, j) - field.at(i - 1, j)) / hx
            } else {
                (field.at(i + 1, j) - field.at(i - 1, j)) / (2.0 * hx)
            };
            gy.values[k] = if j == 0 {
                (field.at(i, 1) - field.at(i, 0)) / hy
            } else if j + 1 == g.ny {
                (field.at(i, j) - field.at(i, j - 1)) / hy
            } else {
                (field.at(i, j + 1) - field.at(i, j - 1)) / (2.0 * hy)
            };
        }
    }
    Ok((gx, gy))
}

/// Midpoint rule: `cell_area · Σ values`.
pub fn integrate(field: &ScalarField) -> f64 {
    field.grid.cell_area() * field.values.iter().sum::<f64>()
}

/// Uniform time grid `τ_k = k / M` on [0, 1] with the observation indices
/// at which data exist.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeGrid {
    steps: usize,
    obs_indices: Vec<usize>,
}

impl TimeGrid {
    pub fn new(steps: usize, obs_indices: Vec<usize>) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidTimeGrid("step count must be positive"));
        }
        if obs_indices.iter().any(|&k| k == 0 || k > steps) {
            return Err(Error::InvalidTimeGrid("observation index outside 1..=M"));
        }
        if obs_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidTimeGrid("observation indices not strictly increasing"));
        }
        Ok(Self { steps, obs_indices })
    }

    /// `T` observation times evenly spread over `]0, 1]`; `T` must divide `M`.
    pub fn uniform_observations(steps: usize, n_obs: usize) -> Result<Self> {
        if n_obs == 0 || steps % n_obs != 0 {
            return Err(Error::InvalidTimeGrid("observation count must divide M"));
        }
        let stride = steps / n_obs;
        Self::new(steps, (1..=n_obs).map(|i| i * stride).collect())
    }

    /// Number of intervals `M`.
    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    #[inline]
    pub fn obs_indices(&self) -> &[usize] {
        &self.obs_indices
    }

    pub fn n_obs(&self) -> usize {
        self.obs_indices.len()
    }

    /// Interval containing `t` (`t = 1` belongs to the last interval).
    pub fn interval_of(&self, t: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange(t));
        }
        Ok(((math::floor(t * self.steps as f64) as usize).min(self.steps - 1)).max(0))
    }

    /// Grid index of `t` if it is a grid time (up to rounding).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = math::round(t * self.steps as f64);
        if k >= 0.0 && k <= self.steps as f64 && (k - t * self.steps as f64).abs() < 1e-9 {
            Some(k as usize)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> ImageGrid {
        ImageGrid::square(n).unwrap()
    }

    #[test]
    fn grid_rejects_degenerate_bounds() {
        assert!(ImageGrid::new(4, 4, [1.0, 1.0], [0.0, 1.0]).is_err());
        assert!(ImageGrid::new(0, 4, [0.0, 1.0], [0.0, 1.0]).is_err());
        let g = grid(8);
        assert_eq!(g.hx(), 0.25);
        assert_eq!(g.cell_area(), 0.0625);
    }

    #[test]
    fn interpolation_reproduces_constants_inside() {
        let f = ScalarField::constant(grid(16), 2.5);
        for p in [[0.0, 0.0], [0.99, -0.99], [-1.0, 1.0], [0.3, 0.71]] {
            assert_eq!(interpolate(&f, p), 2.5);
        }
    }

    #[test]
    fn interpolation_zero_outside() {
        let f = ScalarField::constant(grid(16), 2.5);
        assert_eq!(interpolate(&f, [10.0, 10.0]), 0.0);
        assert_eq!(interpolate(&f, [1.0 + 1e-12, 0.0]), 0.0);
    }

    #[test]
    fn interpolation_exact_on_affine() {
        let g = grid(64);
        let f = ScalarField::from_fn(g, |p| p[0] + 2.0 * p[1]);
        // deterministic pseudo-random interior points
        let mut s = 12345u64;
        for _ in 0..500 {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let a = (s >> 11) as f64 / (1u64 << 53) as f64;
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let b = (s >> 11) as f64 / (1u64 << 53) as f64;
            let m = 1.0 - 1.5 * g.hx();
            let p = [m * (2.0 * a - 1.0), m * (2.0 * b - 1.0)];
            assert!((interpolate(&f, p) - (p[0] + 2.0 * p[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_hits_nodes_exactly() {
        let g = grid(33);
        let f = ScalarField::from_fn(g, |p| (3.0 * p[0]).sin() + p[1] * p[1]);
        for j in 0..g.ny {
            for i in 0..g.nx {
                assert_eq!(interpolate(&f, g.node(i, j)), f.at(i, j));
            }
        }
    }

    #[test]
    fn cubic_hits_nodes_and_constants() {
        let g = grid(33);
        let f = ScalarField::from_fn(g, |p| (3.0 * p[0]).sin() + p[1] * p[1]);
        for j in 0..g.ny {
            for i in 0..g.nx {
                assert_eq!(interpolate_cubic(&f, g.node(i, j)), f.at(i, j));
            }
        }
        let c = ScalarField::constant(g, -1.25);
        for p in [[0.0, 0.0], [0.99, -0.99], [-1.0, 1.0], [0.3, 0.71]] {
            assert!((interpolate_cubic(&c, p) + 1.25).abs() < 1e-14);
        }
        assert_eq!(interpolate_cubic(&c, [1.5, 0.0]), 0.0);
    }

    #[test]
    fn cubic_exact_on_quadratics_inside() {
        let g = grid(40);
        let q = |p: Vec2| 1.0 + p[0] - 2.0 * p[1] + 3.0 * p[0] * p[0] - p[0] * p[1] + 0.5 * p[1] * p[1];
        let f = ScalarField::from_fn(g, q);
        for p in [[0.1, 0.2], [-0.63, 0.41], [0.77, -0.052], [0.0, 0.0]] {
            assert!((interpolate_cubic(&f, p) - q(p)).abs() < 1e-12);
        }
    }

    #[test]
    fn cubic_converges_faster_than_bilinear() {
        let err = |n: usize, cubic: bool| {
            let g = grid(n);
            let h = |p: Vec2| (2.0 * p[0]).sin() * (1.5 * p[1]).cos();
            let f = ScalarField::from_fn(g, h);
            let mut e = 0.0f64;
            for k in 0..200 {
                let p = [0.7 * (0.37 * k as f64).sin(), 0.7 * (0.53 * k as f64 + 1.0).cos()];
                let v = if cubic { interpolate_cubic(&f, p) } else { interpolate(&f, p) };
                e = e.max((v - h(p)).abs());
            }
            e
        };
        let (c1, c2) = (err(32, true), err(64, true));
        assert!(c1 / c2 > 7.0, "cubic order ratio {}", c1 / c2);
        assert!(c2 < 0.1 * err(64, false));
    }

    #[test]
    fn interpolation_gradient_matches_affine_slope() {
        let g = grid(32);
        let f = ScalarField::from_fn(g, |p| 0.5 * p[0] - 3.0 * p[1]);
        for p in [[0.1, 0.2], g.node(10, 11), [-0.7, 0.33]] {
            let (v, d) = interpolate_with_gradient(&f, p);
            assert!((v - interpolate(&f, p)).abs() < 1e-15);
            assert!((d[0] - 0.5).abs() < 1e-12 && (d[1] + 3.0).abs() < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn gradient_exact_on_linear() {
        let g = grid(16);
        let f = ScalarField::from_fn(g, |p| 3.0 * p[0] - p[1]);
        let (gx, gy) = gradient_central(&f).unwrap();
        for j in 0..g.ny {
            for i in 0..g.nx {
                assert!((gx.at(i, j) - 3.0).abs() < 1e-12);
                assert!((gy.at(i, j) + 1.0).abs() < 1e-12);
            }
        }
        let (cx, cy) = gradient_central(&ScalarField::constant(g, 5.0)).unwrap();
        assert_eq!(cx.linf_norm(), 0.0);
        assert_eq!(cy.linf_norm(), 0.0);
    }

    #[test]
    fn gradient_rejects_tiny_grids() {
        let g = ImageGrid::new(2, 5, [0.0, 1.0], [0.0, 1.0]).unwrap();
        assert_eq!(
            gradient_central(&ScalarField::zeros(g)),
            Err(Error::GridTooSmall { nx: 2, ny: 5 })
        );
    }

    #[test]
    fn gradient_second_order() {
        let pi = core::f64::consts::PI;
        let err = |n: usize| {
            let g = grid(n);
            let f = ScalarField::from_fn(g, |p| (pi * p[0]).sin());
            let (gx, _) = gradient_central(&f).unwrap();
            let mut e: f64 = 0.0;
            for j in 1..n - 1 {
                for i in 1..n - 1 {
                    let x = g.node(i, j)[0];
                    e = e.max((gx.at(i, j) - pi * (pi * x).cos()).abs());
                }
            }
            e
        };
        let (e1, e2) = (err(128), err(256));
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() < 0.1, "order {order}");
        // leading term of the truncation error is π³h²/6
        let h = 2.0 / 128.0;
        assert!(e1 <= 1.05 * pi.powi(3) * h * h / 6.0, "{e1}");
    }

    #[test]
    fn midpoint_quadrature() {
        let g = grid(256);
        assert_eq!(integrate(&ScalarField::constant(g, 1.0)), 4.0);
        assert_eq!(integrate(&ScalarField::zeros(g)), 0.0);
        let f = ScalarField::from_fn(g, |p| p[0] * p[0] + p[1] * p[1]);
        assert!((integrate(&f) - 8.0 / 3.0).abs() < 1e-3);
    }

    #[test]
    fn bump_gradient_integrates_to_small() {
        let g = grid(64);
        let f = ScalarField::from_fn(g, |p| {
            let r2 = p[0] * p[0] + p[1] * p[1];
            if r2 < 0.25 { math::powi(0.25 - r2, 3) * 64.0 } else { 0.0 }
        });
        let (gx, _) = gradient_central(&f).unwrap();
        assert!(integrate(&gx).abs() < g.hx());
    }

    #[test]
    fn time_grid_validation() {
        assert!(TimeGrid::new(4, vec![0, 2]).is_err());
        assert!(TimeGrid::new(4, vec![2, 2]).is_err());
        assert!(TimeGrid::new(4, vec![5]).is_err());
        let tg = TimeGrid::uniform_observations(8, 4).unwrap();
        assert_eq!(tg.obs_indices(), &[2, 4, 6, 8]);
        assert_eq!(tg.interval_of(1.0).unwrap(), 7);
        assert_eq!(tg.interval_of(0.0).unwrap(), 0);
        assert_eq!(tg.index_of(0.75), Some(6));
        assert_eq!(tg.index_of(0.3), None);
    }
}
