//! Sparse-angle parallel-beam projections and their exact transpose.
//!
//! Ray `(θ, s)` is the line `{c + s e_θ + r e_θ^⊥}` with `e_θ = (cos θ, sin θ)`
//! and `c` the center of Ω. The line integral is sampled at half-cell
//! spacing over the circumscribed disk of Ω with bilinear weights; sample
//! weights falling on the same pixel are merged into one matrix entry.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, ScalarField};
use crate::math::{self, Vec2};
use crate::par;

/// Per-observation projection angles and the detector geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSchedule {
    angles: Vec<Vec<f64>>,
    n_det: usize,
    det_spacing: f64,
}

/// The golden ratio conjugate `(√5 − 1)/2`.
const GOLDEN: f64 = 0.618_033_988_749_894_9;

impl AngleSchedule {
    /// Validates the schedule and checks on `grid` that every ray of every
    /// nonempty angle set sees the constant image 1 (`𝒯 1 > 0`).
    pub fn new(angles: Vec<Vec<f64>>, n_det: usize, det_spacing: f64, grid: &ImageGrid) -> Result<Self> {
        if angles.iter().all(|a| a.is_empty()) {
            return Err(Error::InvalidSchedule("no angles at any observation"));
        }
        if angles.iter().flatten().any(|&a| !(0.0..core::f64::consts::PI).contains(&a)) {
            return Err(Error::InvalidSchedule("angles must lie in [0, π)"));
        }
        if n_det == 0 || !(det_spacing > 0.0) || !det_spacing.is_finite() {
            return Err(Error::InvalidSchedule("detector needs bins and a positive spacing"));
        }
        let s = Self {
            angles,
            n_det,
            det_spacing,
        };
        let one = ScalarField::constant(*grid, 1.0);
        for i in 0..s.n_obs() {
            if s.angles[i].is_empty() {
                continue;
            }
            let sino = RadonOperator::new(&s, i, grid)?.forward(&one)?;
            if !sino.values.iter().all(|&x| x > 0.0) {
                return Err(Error::InvalidSchedule("a ray misses the domain"));
            }
        }
        Ok(s)
    }

    /// `per_obs` equispaced angles at each of `n_obs` times, each set
    /// shifted by a golden-ratio fraction of the angular spacing; detector
    /// of `nx` bins at spacing `h_x`.
    pub fn golden(n_obs: usize, per_obs: usize, grid: &ImageGrid) -> Result<Self> {
        Self::golden_with_detector(n_obs, per_obs, grid.nx, grid.hx(), grid)
    }

    pub fn golden_with_detector(
        n_obs: usize,
        per_obs: usize,
        n_det: usize,
        det_spacing: f64,
        grid: &ImageGrid,
    ) -> Result<Self> {
        let pi = core::f64::consts::PI;
        let step = pi / per_obs as f64;
        let angles = (0..n_obs)
            .map(|i| {
                let x = i as f64 * GOLDEN;
                let off = (x - math::floor(x)) * step;
                (0..per_obs).map(|j| off + j as f64 * step).collect()
            })
            .collect();
        Self::new(angles, n_det, det_spacing, grid)
    }

    /// The same `n` equispaced angles `jπ/n` at every time.
    pub fn full(n_obs: usize, n: usize, grid: &ImageGrid) -> Result<Self> {
        let pi = core::f64::consts::PI;
        let a: Vec<f64> = (0..n).map(|j| j as f64 * pi / n as f64).collect();
        Self::new(vec![a; n_obs], grid.nx, grid.hx(), grid)
    }

    pub fn n_obs(&self) -> usize {
        self.angles.len()
    }

    pub fn angles(&self, i: usize) -> Result<&[f64]> {
        self.angles.get(i).map(|a| a.as_slice()).ok_or(Error::IndexOutOfRange {
            index: i,
            len: self.angles.len(),
        })
    }

    pub fn n_det(&self) -> usize {
        self.n_det
    }

    pub fn det_spacing(&self) -> f64 {
        self.det_spacing
    }

    /// Signed offset of bin `k`.
    pub fn bin_offset(&self, k: usize) -> f64 {
        (k as f64 - 0.5 * (self.n_det as f64 - 1.0)) * self.det_spacing
    }
}

/// Line integrals for one observation, angle-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub obs_index: usize,
    pub angles: Vec<f64>,
    pub n_det: usize,
    pub det_spacing: f64,
    pub values: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(schedule: &AngleSchedule, i: usize) -> Result<Self> {
        let angles = schedule.angles(i)?.to_vec();
        let n = angles.len() * schedule.n_det;
        Ok(Self {
            obs_index: i,
            angles,
            n_det: schedule.n_det,
            det_spacing: schedule.det_spacing,
            values: vec![0.0; n],
        })
    }

    pub fn from_values(schedule: &AngleSchedule, i: usize, values: Vec<f64>) -> Result<Self> {
        let mut s = Self::zeros(schedule, i)?;
        if values.len() != s.values.len() {
            return Err(Error::ShapeMismatch("sinogram length != angles × bins"));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite sinogram value"));
        }
        s.values = values;
        Ok(s)
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn at(&self, a: usize, k: usize) -> f64 {
        self.values[a * self.n_det + k]
    }

    /// Detector-weighted inner product `Δs Σ a b`.
    pub fn dot(&self, other: &Sinogram) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * self.det_spacing
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    fn matches(&self, schedule: &AngleSchedule, i: usize) -> Result<()> {
        let a = schedule.angles(i)?;
        if self.obs_index != i || self.angles != a || self.n_det != schedule.n_det || self.det_spacing != schedule.det_spacing
        {
            return Err(Error::ShapeMismatch("sinogram does not match the schedule"));
        }
        if self.values.len() != a.len() * self.n_det {
            return Err(Error::ShapeMismatch("sinogram length != angles × bins"));
        }
        Ok(())
    }
}

/// Sparse projection matrix of one observation (rows = angle-major bins).
#[derive(Debug, Clone)]
pub struct RadonOperator {
    grid: ImageGrid,
    obs_index: usize,
    angles: Vec<f64>,
    n_det: usize,
    det_spacing: f64,
    row_start: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

fn ray_row(grid: &ImageGrid, theta: f64, s: f64, scratch: &mut Vec<(u32, f64)>) {
    let c = grid.center();
    let half_diag = 0.5 * math::hypot(grid.x_max - grid.x_min, grid.y_max - grid.y_min);
    let step = 0.5 * grid.hx().min(grid.hy());
    let n = math::ceil(2.0 * half_diag / step) as usize;
    let dr = 2.0 * half_diag / n as f64;
    let (st, ct) = (math::sin(theta), math::cos(theta));
    let base: Vec2 = [c[0] + s * ct, c[1] + s * st];
    scratch.clear();
    for m in 0..n {
        let r = -half_diag + (m as f64 + 0.5) * dr;
        let p = [base[0] - r * st, base[1] + r * ct];
        if let Some(sten) = grid.stencil(p) {
            for (&k, &w) in sten.idx.iter().zip(&sten.w) {
                if w != 0.0 {
                    scratch.push((k as u32, w * dr));
                }
            }
        }
    }
    scratch.sort_unstable_by_key(|e| e.0);
    // merge duplicates in place
    let mut out = 0;
    for n in 0..scratch.len() {
        if out > 0 && scratch[out - 1].0 == scratch[n].0 {
            scratch[out - 1].1 += scratch[n].1;
        } else {
            scratch[out] = scratch[n];
            out += 1;
        }
    }
    scratch.truncate(out);
}

impl RadonOperator {
    pub fn new(schedule: &AngleSchedule, i: usize, grid: &ImageGrid) -> Result<Self> {
        let angles = schedule.angles(i)?.to_vec();
        let n_det = schedule.n_det;
        let rays: Vec<(f64, f64)> = angles
            .iter()
            .flat_map(|&th| (0..n_det).map(move |k| (th, schedule.bin_offset(k))))
            .collect();
        let rows: Vec<Vec<(u32, f64)>> = par::map(&rays, |&(th, s)| {
            let mut row = Vec::new();
            ray_row(grid, th, s, &mut row);
            row
        });
        let mut row_start = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_start.push(0);
        for row in rows {
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_start.push(cols.len());
        }
        Ok(Self {
            grid: *grid,
            obs_index: i,
            angles,
            n_det,
            det_spacing: schedule.det_spacing,
            row_start,
            cols,
            vals,
        })
    }

    /// One operator per observation index.
    pub fn for_schedule(schedule: &AngleSchedule, grid: &ImageGrid) -> Result<Vec<Self>> {
        (0..schedule.n_obs()).map(|i| Self::new(schedule, i, grid)).collect()
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    pub fn obs_index(&self) -> usize {
        self.obs_index
    }

    pub fn n_rows(&self) -> usize {
        self.row_start.len() - 1
    }

    fn empty_sinogram(&self) -> Sinogram {
        Sinogram {
            obs_index: self.obs_index,
            angles: self.angles.clone(),
            n_det: self.n_det,
            det_spacing: self.det_spacing,
            values: vec![0.0; self.n_rows()],
        }
    }

    pub fn forward(&self, f: &ScalarField) -> Result<Sinogram> {
        if f.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let x = f.values();
        let mut out = self.empty_sinogram();
        for (r, o) in out.values.iter_mut().enumerate() {
            let (a, b) = (self.row_start[r], self.row_start[r + 1]);
            *o = self.cols[a..b].iter().zip(&self.vals[a..b]).map(|(&c, &w)| w * x[c as usize]).sum();
        }
        Ok(out)
    }

    /// Exact transpose of [`forward`](Self::forward) (plain sums, no
    /// detector weight).
    pub fn adjoint(&self, g: &Sinogram) -> Result<ScalarField> {
        if g.obs_index != self.obs_index || g.angles != self.angles || g.n_det != self.n_det {
            return Err(Error::ShapeMismatch("sinogram does not match the operator"));
        }
        if g.values.len() != self.n_rows() {
            return Err(Error::ShapeMismatch("sinogram length != angles × bins"));
        }
        let mut out = vec![0.0; self.grid.len()];
        for (r, &y) in g.values.iter().enumerate() {
            if y == 0.0 {
                continue;
            }
            let (a, b) = (self.row_start[r], self.row_start[r + 1]);
            for (&c, &w) in self.cols[a..b].iter().zip(&self.vals[a..b]) {
                out[c as usize] += w * y;
            }
        }
        ScalarField::from_values(self.grid, out)
    }

    /// `(Δs ‖A f − g‖², 2 Δs Aᵀ(A f − g))`.
    pub fn data_term(&self, f: &ScalarField, g: &Sinogram) -> Result<(f64, ScalarField)> {
        let mut r = self.forward(f)?;
        if g.values.len() != r.values.len() || g.angles != r.angles {
            return Err(Error::ShapeMismatch("data does not match the operator"));
        }
        for (a, b) in r.values.iter_mut().zip(&g.values) {
            *a -= b;
        }
        let value = r.values.iter().map(|x| x * x).sum::<f64>() * self.det_spacing;
        let grad = self.adjoint(&r)?.scaled(2.0 * self.det_spacing);
        Ok((value, grad))
    }

    /// Largest singular value of the matrix, by power iteration on `AᵀA`
    /// from `start`.
    pub fn operator_norm(&self, start: &ScalarField, iters: usize) -> Result<f64> {
        let mut x = start.clone();
        let mut sigma = 0.0;
        for _ in 0..iters.max(1) {
            let nx = plain_norm(&x);
            if nx == 0.0 {
                return Ok(0.0);
            }
            x = x.scaled(1.0 / nx);
            let ax = self.forward(&x)?;
            sigma = math::sqrt(ax.values.iter().map(|v| v * v).sum::<f64>());
            x = self.adjoint(&ax)?;
        }
        Ok(sigma)
    }
}

/// Euclidean norm of the sample vector (no cell-area weight).
fn plain_norm(f: &ScalarField) -> f64 {
    math::sqrt(f.values().iter().map(|v| v * v).sum())
}

/// `𝒯_{t_i} f`.
pub fn radon_forward(f: &ScalarField, i: usize, schedule: &AngleSchedule) -> Result<Sinogram> {
    RadonOperator::new(schedule, i, f.grid())?.forward(f)
}

/// `𝒯_{t_i}ᵀ g` on `grid`.
pub fn radon_adjoint(g: &Sinogram, i: usize, schedule: &AngleSchedule, grid: &ImageGrid) -> Result<ScalarField> {
    g.matches(schedule, i)?;
    RadonOperator::new(schedule, i, grid)?.adjoint(g)
}

/// `(‖𝒯 f − g‖², 2 𝒯ᵀ(𝒯 f − g))` with detector-bin weights.
pub fn data_term(f: &ScalarField, g: &Sinogram, i: usize, schedule: &AngleSchedule) -> Result<(f64, ScalarField)> {
    g.matches(schedule, i)?;
    RadonOperator::new(schedule, i, f.grid())?.data_term(f, g)
}
