//! Synthetic ground truth: a template image and a kernel velocity field
//! fitted to an analytic motion.

use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, TimeGrid};
use crate::math::{self, Vec2};
use crate::velocity::{KernelSpec, VelocityField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomId {
    TranslatingDisk,
    RotatingBump,
    SheppLikeStatic,
}

impl PhantomId {
    pub const ALL: [PhantomId; 3] = [PhantomId::TranslatingDisk, PhantomId::RotatingBump, PhantomId::SheppLikeStatic];

    pub fn name(self) -> &'static str {
        match self {
            PhantomId::TranslatingDisk => "translating_disk",
            PhantomId::RotatingBump => "rotating_bump",
            PhantomId::SheppLikeStatic => "shepp_like_static",
        }
    }
}

impl FromStr for PhantomId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PhantomId::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPhantom(String::from(s)))
    }
}

/// Shape and motion parameters of the phantoms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomParams {
    pub disk_radius: f64,
    /// Disk center at `t = 0`.
    pub disk_start: Vec2,
    /// Translation velocity.
    pub disk_velocity: Vec2,
    pub bump_center: Vec2,
    pub bump_width: f64,
    /// Angular speed of the rotation about the domain center.
    pub omega: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            disk_radius: 0.3,
            disk_start: [-0.15, 0.0],
            disk_velocity: [0.3, 0.0],
            bump_center: [0.3, 0.0],
            bump_width: 0.12,
            omega: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub id: PhantomId,
    pub f0: ScalarField,
    pub v: VelocityField,
}

/// Ground truth on the image grid of `spec` with default parameters.
pub fn make_phantom(id: PhantomId, spec: &KernelSpec, time_grid: &TimeGrid) -> Result<Phantom> {
    make_phantom_with(id, spec, time_grid, &PhantomParams::default())
}

pub fn make_phantom_with(
    id: PhantomId,
    spec: &KernelSpec,
    time_grid: &TimeGrid,
    p: &PhantomParams,
) -> Result<Phantom> {
    let grid = *spec.image_grid();
    let c = grid.center();
    let (f0, v) = match id {
        PhantomId::TranslatingDisk => {
            let (c0, r) = (p.disk_start, p.disk_radius);
            let f0 = ScalarField::from_fn(grid, |x| {
                if math::hypot(x[0] - c0[0], x[1] - c0[1]) <= r {
                    1.0
                } else {
                    0.0
                }
            });
            let u = p.disk_velocity;
            (f0, VelocityField::fit(spec.clone(), time_grid.clone(), |_, _| u)?)
        }
        PhantomId::RotatingBump => {
            let (b, s) = (p.bump_center, p.bump_width);
            let f0 = ScalarField::from_fn(grid, |x| {
                let d2 = (x[0] - b[0]) * (x[0] - b[0]) + (x[1] - b[1]) * (x[1] - b[1]);
                math::exp(-d2 / (2.0 * s * s))
            });
            let w = p.omega;
            let v = VelocityField::fit(spec.clone(), time_grid.clone(), |_, x| {
                [-w * (x[1] - c[1]), w * (x[0] - c[0])]
            })?;
            (f0, v)
        }
        PhantomId::SheppLikeStatic => (shepp_logan(&grid), VelocityField::zeros(spec.clone(), time_grid.clone())),
    };
    Ok(Phantom { id, f0, v })
}

/// Modified Shepp–Logan head (Toft's contrast), scaled to the inscribed
/// disk of Ω at 90%.
fn shepp_logan(grid: &crate::grid::ImageGrid) -> ScalarField {
    // (intensity, semi-axis a, semi-axis b, center x, center y, angle deg)
    const E: [[f64; 6]; 10] = [
        [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
        [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
        [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
        [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
        [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
        [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
        [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
        [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
        [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
        [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
    ];
    let c = grid.center();
    let half = 0.5 * (grid.x_max - grid.x_min).min(grid.y_max - grid.y_min);
    let scale = 0.9 * half;
    let ellipses: Vec<([f64; 6], f64, f64)> = E
        .iter()
        .map(|e| {
            let th = e[5] * core::f64::consts::PI / 180.0;
            (*e, math::cos(th), math::sin(th))
        })
        .collect();
    ScalarField::from_fn(*grid, |x| {
        let (u, v) = ((x[0] - c[0]) / scale, (x[1] - c[1]) / scale);
        let mut s = 0.0;
        for (e, ct, st) in &ellipses {
            let (dx, dy) = (u - e[3], v - e[4]);
            let xr = dx * ct + dy * st;
            let yr = -dx * st + dy * ct;
            if (xr / e[1]) * (xr / e[1]) + (yr / e[2]) * (yr / e[2]) <= 1.0 {
                s += e[0];
            }
        }
        s
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ImageGrid;
    use crate::transport::solve_transport;

    fn centroid(f: &ScalarField) -> Vec2 {
        let g = f.grid();
        let (mut m, mut x, mut y) = (0.0, 0.0, 0.0);
        for (p, v) in g.nodes().iter().zip(f.values()) {
            m += v;
            x += v * p[0];
            y += v * p[1];
        }
        [x / m, y / m]
    }

    fn setup() -> (KernelSpec, TimeGrid) {
        let g = ImageGrid::square(64).unwrap();
        (KernelSpec::new(g, 8, 8, 0.25).unwrap(), TimeGrid::uniform_observations(8, 4).unwrap())
    }

    #[test]
    fn names_round_trip() {
        for id in PhantomId::ALL {
            assert_eq!(id.name().parse::<PhantomId>().unwrap(), id);
        }
        assert_eq!("heart".parse::<PhantomId>(), Err(Error::UnknownPhantom("heart".into())));
    }

    #[test]
    fn static_phantom_has_no_motion() {
        let (spec, tg) = setup();
        let p = make_phantom(PhantomId::SheppLikeStatic, &spec, &tg).unwrap();
        assert!(p.v.is_identically_zero());
        assert!(p.f0.max() > 0.9 && p.f0.min() >= -1e-12);
    }

    #[test]
    fn disk_translates() {
        let (spec, tg) = setup();
        let p = make_phantom(PhantomId::TranslatingDisk, &spec, &tg).unwrap();
        let pp = PhantomParams::default();
        let c0 = centroid(&p.f0);
        let sol = solve_transport(&p.f0, &p.v, &[0.5, 1.0], 4).unwrap();
        for (t, f) in sol.times.iter().zip(&sol.frames) {
            let c = centroid(f);
            let d = [c[0] - c0[0], c[1] - c0[1]];
            let e = [pp.disk_velocity[0] * t, pp.disk_velocity[1] * t];
            assert!((d[0] - e[0]).hypot(d[1] - e[1]) <= 0.01 * e[0].hypot(e[1]), "{d:?} {e:?}");
        }
    }

    #[test]
    fn bump_follows_an_arc() {
        let (spec, tg) = setup();
        let p = make_phantom(PhantomId::RotatingBump, &spec, &tg).unwrap();
        let pp = PhantomParams::default();
        let r0 = pp.bump_center[0].hypot(pp.bump_center[1]);
        let sol = solve_transport(&p.f0, &p.v, &[0.25, 0.5, 0.75, 1.0], 4).unwrap();
        for (t, f) in sol.times.iter().zip(&sol.frames) {
            let c = centroid(f);
            assert!((c[0].hypot(c[1]) - r0).abs() <= 0.01 * r0);
            let ang = c[1].atan2(c[0]);
            assert!((ang - pp.omega * t).abs() <= 0.01 * pp.omega * t, "{ang} {t}");
        }
    }
}
