//! Standard mollifier, discrete convolution, total variation and the
//! BV-boundedness diagnostics used along minimizing sequences.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, ScalarField};
use crate::math;

/// Unnormalized profile `exp(1 / (r² − 1))` for `r < 1`.
#[inline]
fn profile(r2: f64) -> f64 {
    if r2 < 1.0 {
        math::exp(1.0 / (r2 - 1.0))
    } else {
        0.0
    }
}

/// Normalization constant of the standard mollifier in two dimensions:
/// `C = 1 / ∫_{B(0,1)} exp(1/(|x|²−1)) dx`, with the radial integral done
/// by composite Simpson.
pub fn mollifier_constant() -> f64 {
    let n = 4000;
    let h = 1.0 / n as f64;
    let g = |r: f64| r * profile(r * r);
    let mut s = g(0.0) + g(1.0);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * g(k as f64 * h);
    }
    let radial = s * h / 3.0;
    1.0 / (2.0 * core::f64::consts::PI * radial)
}

/// `ρ_ε` sampled on the pixel lattice of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Mollifier {
    epsilon: f64,
    constant: f64,
    grid: ImageGrid,
    /// Half-widths of the stencil in pixels.
    ra: usize,
    rb: usize,
    /// `(2ra+1) × (2rb+1)` samples, row-major with offset `b` outer.
    kernel: Vec<f64>,
}

impl Mollifier {
    /// Samples `ρ_ε` on the pixel offsets of `grid` and renormalizes so
    /// that `cell_area · Σ samples = 1`.
    pub fn new(grid: ImageGrid, epsilon: f64) -> Result<Self> {
        let min = 2.0 * grid.h_max();
        if !(epsilon >= min) {
            return Err(Error::KernelUnresolvable { epsilon, min });
        }
        let constant = mollifier_constant();
        let (hx, hy) = (grid.hx(), grid.hy());
        let ra = math::ceil(epsilon / hx) as usize;
        let rb = math::ceil(epsilon / hy) as usize;
        let scale = constant / (epsilon * epsilon);
        let mut kernel = Vec::with_capacity((2 * ra + 1) * (2 * rb + 1));
        for b in -(rb as isize)..=(rb as isize) {
            for a in -(ra as isize)..=(ra as isize) {
                let x = a as f64 * hx / epsilon;
                let y = b as f64 * hy / epsilon;
                kernel.push(scale * profile(x * x + y * y));
            }
        }
        let mass = grid.cell_area() * kernel.iter().sum::<f64>();
        for k in kernel.iter_mut() {
            *k /= mass;
        }
        Ok(Self {
            epsilon,
            constant,
            grid,
            ra,
            rb,
            kernel,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// The continuous normalization constant `C`.
    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.kernel
    }

    /// `cell_area · Σ samples`; one up to rounding.
    pub fn discrete_mass(&self) -> f64 {
        self.grid.cell_area() * self.kernel.iter().sum::<f64>()
    }

    /// Sample at pixel offset `(a, b)`; zero beyond the stencil.
    pub fn sample(&self, a: isize, b: isize) -> f64 {
        if a.unsigned_abs() > self.ra || b.unsigned_abs() > self.rb {
            return 0.0;
        }
        let w = 2 * self.ra + 1;
        self.kernel[(b + self.rb as isize) as usize * w + (a + self.ra as isize) as usize]
    }
}

/// Discrete convolution `f ∗ ρ_ε` with zero extension of `f`.
pub fn mollify(f: &ScalarField, m: &Mollifier) -> Result<ScalarField> {
    let g = *f.grid();
    if g != m.grid {
        return Err(Error::GridMismatch);
    }
    let area = g.cell_area();
    let (ra, rb) = (m.ra as isize, m.rb as isize);
    let w = 2 * m.ra + 1;
    let src = f.values();
    let mut out = ScalarField::zeros(g);
    let dst = out.values_mut();
    let (nx, ny) = (g.nx as isize, g.ny as isize);
    for j in 0..ny {
        for i in 0..nx {
            let mut acc = 0.0;
            for b in -rb..=rb {
                let jj = j - b;
                if jj < 0 || jj >= ny {
                    continue;
                }
                let krow = (b + rb) as usize * w;
                let frow = jj as usize * g.nx;
                for a in -ra..=ra {
                    let ii = i - a;
                    if ii < 0 || ii >= nx {
                        continue;
                    }
                    acc += m.kernel[krow + (a + ra) as usize] * src[frow + ii as usize];
                }
            }
            dst[j as usize * g.nx + i as usize] = area * acc;
        }
    }
    Ok(out)
}

/// Forward differences with zero extension past the last row/column.
#[inline]
fn forward_diffs(f: &ScalarField, i: usize, j: usize) -> (f64, f64) {
    let g = f.grid();
    let c = f.at(i, j);
    let ex = if i + 1 < g.nx { f.at(i + 1, j) } else { 0.0 };
    let ey = if j + 1 < g.ny { f.at(i, j + 1) } else { 0.0 };
    ((ex - c) / g.hx(), (ey - c) / g.hy())
}

/// Isotropic discrete total variation over all of Ω.
pub fn total_variation(f: &ScalarField) -> f64 {
    let g = *f.grid();
    total_variation_region(f, 0..g.nx, 0..g.ny)
}

/// Isotropic discrete total variation summed over the cells of a pixel
/// box (forward differences may still reach one cell past the box).
pub fn total_variation_region(
    f: &ScalarField,
    ri: core::ops::Range<usize>,
    rj: core::ops::Range<usize>,
) -> f64 {
    let area = f.grid().cell_area();
    let mut s = 0.0;
    for j in rj {
        for i in ri.clone() {
            let (dx, dy) = forward_diffs(f, i, j);
            s += math::hypot(dx, dy);
        }
    }
    s * area
}

/// Total variation restricted to Ω_ε = {x : dist(x, ∂Ω) > ε}.
pub fn total_variation_interior(f: &ScalarField, eps: f64) -> f64 {
    let (ri, rj) = f.grid().interior_range(eps);
    // forward differences out of the last interior cell stay inside Ω_ε's
    // closure; drop that last row/column so every difference is interior
    let ri = ri.start..ri.end.saturating_sub(1).max(ri.start);
    let rj = rj.start..rj.end.saturating_sub(1).max(rj.start);
    total_variation_region(f, ri, rj)
}

/// `Σ √(|D⁺f|² + δ²) · cell_area` and its exact gradient with respect to
/// the samples.
pub fn tv_smoothed(f: &ScalarField, delta: f64) -> Result<(f64, ScalarField)> {
    if !(delta > 0.0) {
        return Err(Error::NonPositiveDelta(delta));
    }
    let g = *f.grid();
    let area = g.cell_area();
    let (hx, hy) = (g.hx(), g.hy());
    let d2 = delta * delta;
    let mut value = 0.0;
    let mut grad = ScalarField::zeros(g);
    let gv = grad.values_mut();
    for j in 0..g.ny {
        for i in 0..g.nx {
            let (dx, dy) = forward_diffs(f, i, j);
            let rho = math::sqrt(dx * dx + dy * dy + d2);
            value += rho;
            let (px, py) = (area * dx / rho, area * dy / rho);
            let c = g.index(i, j);
            gv[c] -= px / hx + py / hy;
            if i + 1 < g.nx {
                gv[c + 1] += px / hx;
            }
            if j + 1 < g.ny {
                gv[c + g.nx] += py / hy;
            }
        }
    }
    Ok((value * area, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvRow {
    pub l1: f64,
    pub linf: f64,
    pub tv: f64,
}

/// Per-element norms of a sequence and their running maxima.
#[derive(Debug, Clone, PartialEq)]
pub struct BvReport {
    pub rows: Vec<BvRow>,
    pub running_max: Vec<BvRow>,
}

impl BvReport {
    pub fn max(&self) -> BvRow {
        *self.running_max.last().expect("report is nonempty")
    }
}

/// L¹, L∞ and total variation of every element; no convergence claim.
pub fn bv_bound_diagnostics(seq: &[ScalarField]) -> Result<BvReport> {
    let first = seq.first().ok_or(Error::EmptySequence)?;
    let mut rows = Vec::with_capacity(seq.len());
    let mut running_max = Vec::with_capacity(seq.len());
    let mut m = BvRow {
        l1: 0.0,
        linf: 0.0,
        tv: 0.0,
    };
    for f in seq {
        first.check_grid(f)?;
        let r = BvRow {
            l1: f.l1_norm(),
            linf: f.linf_norm(),
            tv: total_variation(f),
        };
        m = BvRow {
            l1: m.l1.max(r.l1),
            linf: m.linf.max(r.linf),
            tv: m.tv.max(r.tv),
        };
        rows.push(r);
        running_max.push(m);
    }
    Ok(BvReport { rows, running_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::integrate;

    fn disk(g: ImageGrid, r: f64) -> ScalarField {
        ScalarField::from_fn(g, |p| if p[0] * p[0] + p[1] * p[1] < r * r { 1.0 } else { 0.0 })
    }

    #[test]
    fn constant_matches_known_value() {
        // ∫_{B1} exp(1/(|x|²−1)) dx ≈ 0.46651239317...
        let c = mollifier_constant();
        assert!((1.0 / c - 0.466_512_393).abs() < 1e-7, "{}", 1.0 / c);
    }

    #[test]
    fn unresolvable_radius_rejected() {
        let g = ImageGrid::square(64).unwrap();
        assert!(matches!(Mollifier::new(g, 0.05), Err(Error::KernelUnresolvable { .. })));
        assert!(Mollifier::new(g, 0.0625).is_ok());
    }

    #[test]
    fn kernel_mass_and_support() {
        let g = ImageGrid::square(128).unwrap();
        let m = Mollifier::new(g, 0.1).unwrap();
        assert!((m.discrete_mass() - 1.0).abs() < 1e-10);
        let (hx, hy) = (g.hx(), g.hy());
        for b in -20isize..=20 {
            for a in -20isize..=20 {
                let r = ((a as f64 * hx).powi(2) + (b as f64 * hy).powi(2)).sqrt();
                if r >= 0.1 {
                    assert_eq!(m.sample(a, b), 0.0);
                }
            }
        }
    }

    #[test]
    fn reproduces_constants_inside() {
        let g = ImageGrid::square(64).unwrap();
        let m = Mollifier::new(g, 0.1).unwrap();
        let out = mollify(&ScalarField::constant(g, 3.0), &m).unwrap();
        let (ri, rj) = g.interior_range(0.1);
        for j in rj {
            for i in ri.clone() {
                assert!((out.at(i, j) - 3.0).abs() < 1e-8);
            }
        }
        assert_eq!(mollify(&ScalarField::zeros(g), &m).unwrap().linf_norm(), 0.0);
    }

    #[test]
    fn mass_preserved_for_interior_support() {
        let g = ImageGrid::square(128).unwrap();
        let m = Mollifier::new(g, 0.08).unwrap();
        let f = disk(g, 0.5);
        let out = mollify(&f, &m).unwrap();
        let (a, b) = (integrate(&out), integrate(&f));
        assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()));
    }

    #[test]
    fn disk_mollification_error_bounded_by_annulus() {
        let g = ImageGrid::square(256).unwrap();
        let f = disk(g, 0.5);
        let err = |eps: f64| {
            let m = Mollifier::new(g, eps).unwrap();
            mollify(&f, &m).unwrap().sub(&f).unwrap().l1_norm()
        };
        let (e1, e2) = (err(0.05), err(0.025));
        let annulus = 2.0 * core::f64::consts::PI * 0.5 * 2.0 * 0.05;
        assert!(e1 <= annulus, "{e1} > {annulus}");
        assert!(e2 < e1);
    }

    #[test]
    fn tv_of_constant_and_ramp() {
        let g = ImageGrid::square(128).unwrap();
        let c = ScalarField::constant(g, 2.0);
        // only the zero-extension jump on the far edges contributes
        let (ri, rj) = g.interior_range(0.0);
        assert_eq!(total_variation_region(&c, ri.start..ri.end - 1, rj.start..rj.end - 1), 0.0);
        let ramp = ScalarField::from_fn(g, |p| p[0]);
        let tv = total_variation_region(&ramp, 0..g.nx - 1, 0..g.ny - 1);
        assert!((tv - 4.0).abs() < 0.02 * 4.0, "{tv}");
    }

    #[test]
    fn tv_of_square_tends_to_perimeter() {
        let g = ImageGrid::square(512).unwrap();
        let sq = ScalarField::from_fn(g, |p| {
            if p[0].abs() < 0.5 && p[1].abs() < 0.5 { 1.0 } else { 0.0 }
        });
        let tv = total_variation(&sq);
        assert!((tv - 4.0).abs() < 0.05 * 4.0, "{tv}");
    }

    #[test]
    fn tv_positively_homogeneous() {
        let g = ImageGrid::square(32).unwrap();
        let f = ScalarField::from_fn(g, |p| (3.0 * p[0]).sin() * p[1]);
        let base = total_variation(&f);
        for a in [-2.0, 0.5, 3.0] {
            let t = total_variation(&f.scaled(a));
            assert!((t - a.abs() * base).abs() <= 1e-10 * base);
        }
    }

    #[test]
    fn smoothed_tv_floor_and_dominance() {
        let g = ImageGrid::square(16).unwrap();
        let (v, grad) = tv_smoothed(&ScalarField::zeros(g), 1e-3).unwrap();
        assert!((v - 1e-3 * 4.0).abs() < 1e-15);
        assert_eq!(grad.linf_norm(), 0.0);
        let f = ScalarField::from_fn(g, |p| p[0] * p[1] + (p[0] > 0.2) as i32 as f64);
        assert!(tv_smoothed(&f, 1e-3).unwrap().0 >= total_variation(&f));
        assert_eq!(tv_smoothed(&f, 0.0), Err(Error::NonPositiveDelta(0.0)));
    }

    #[test]
    fn smoothed_tv_gradient_matches_central_differences() {
        let g = ImageGrid::square(16).unwrap();
        let mut s = 7u64;
        let mut rnd = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let f = ScalarField::from_values(g, (0..g.len()).map(|_| rnd()).collect()).unwrap();
        let u = ScalarField::from_values(g, (0..g.len()).map(|_| rnd()).collect()).unwrap();
        let delta = 1e-2;
        let (value, grad) = tv_smoothed(&f, delta).unwrap();
        let h = 1e-4;
        let plus = tv_smoothed(&f.lincomb(1.0, &u, h).unwrap(), delta).unwrap().0;
        let minus = tv_smoothed(&f.lincomb(1.0, &u, -h).unwrap(), delta).unwrap().0;
        let fd = (plus - minus) / (2.0 * h);
        assert!((grad.dot(&u) - fd).abs() <= 1e-5 * (1.0 + value.abs()));
    }

    #[test]
    fn bv_report_rows() {
        let g = ImageGrid::square(32).unwrap();
        let f = disk(g, 0.4);
        let seq: Vec<_> = (1..=5).map(|n| f.scaled(1.0 / n as f64)).collect();
        let rep = bv_bound_diagnostics(&seq).unwrap();
        let tv0 = rep.rows[0].tv;
        for (n, r) in rep.rows.iter().enumerate() {
            assert!((r.tv - tv0 / (n + 1) as f64).abs() < 1e-10);
        }
        assert_eq!(rep.max().tv, tv0);
        assert_eq!(bv_bound_diagnostics(&[]), Err(Error::EmptySequence));
        let same = bv_bound_diagnostics(&[f.clone(), f.clone()]).unwrap();
        assert_eq!(same.rows[0], same.rows[1]);
    }
}
