//! Property batteries behind `stiflow verify`.
//!
//! Every check records what was measured, the bound it is held to and the
//! outcome. The functions are public so that callers can run a single
//! property on its own.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stiflow_core::flow::{
    flow_jacobians, gronwall_jacobian_report, hadamard_check, integrate_flow, inverse_flow, round_trip_error,
    semigroup_error, GRONWALL_TOLERANCE,
};
use stiflow_core::mollifier::{mollify, total_variation, total_variation_interior};
use stiflow_core::objective::{evaluate_objective, evaluate_with_flows, grad_f0, grad_v};
use stiflow_core::radon::radon_forward;
use stiflow_core::transport::{
    builtin_test_family, max_abs, relative_l2, renormalization_residual, solve_dense, solve_dense_with, solve_transport,
    stability_probe, weak_residual, Beta, Interpolation,
};
use stiflow_core::velocity::{AnalyticField, AnalyticMotion, BoundaryWindow};
use stiflow_core::{
    make_phantom, AngleSchedule, ImageGrid, KernelSpec, Mat2, ModelConfig, Mollifier, PhantomId, Problem,
    RadonOperator, ScalarField, Sinogram, TimeGrid, Vec2, VelocityField,
};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Flow,
    Transport,
    Mollifier,
    Radon,
    Gradients,
    All,
}

impl Suite {
    pub const EACH: [Suite; 5] = [Suite::Flow, Suite::Transport, Suite::Mollifier, Suite::Radon, Suite::Gradients];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Flow => "flow",
            Suite::Transport => "transport",
            Suite::Mollifier => "mollifier",
            Suite::Radon => "radon",
            Suite::Gradients => "gradients",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::EACH
            .into_iter()
            .chain([Suite::All])
            .find(|x| x.name() == s)
            .ok_or_else(|| CliError::UnknownSuite(s.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = ">")]
    Above,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
            Relation::Above => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub measured: f64,
    pub relation: Relation,
    pub bound: f64,
    pub passed: bool,
}

impl Check {
    fn new(suite: Suite, name: impl Into<String>, measured: f64, relation: Relation, bound: f64) -> Self {
        let passed = match relation {
            Relation::AtMost => measured <= bound,
            Relation::AtLeast => measured >= bound,
            Relation::Above => measured > bound,
        };
        Self {
            suite: suite.name().into(),
            name: name.into(),
            measured,
            relation,
            bound,
            passed,
        }
    }

    fn at_most(suite: Suite, name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self::new(suite, name, measured, Relation::AtMost, bound)
    }

    fn at_least(suite: Suite, name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self::new(suite, name, measured, Relation::AtLeast, bound)
    }

    fn above(suite: Suite, name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self::new(suite, name, measured, Relation::Above, bound)
    }

    /// A yes/no property, recorded as 1 (holds) against 1.
    fn holds(suite: Suite, name: impl Into<String>, ok: bool) -> Self {
        Self::at_least(suite, name, if ok { 1.0 } else { 0.0 }, 1.0)
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<9} {:<52} {:>12.4e} {:>2} {:<10.4e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.measured,
            self.relation.symbol(),
            self.bound
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "{}", c.line());
        }
        let _ = writeln!(s, "{} checks, {} failed", self.checks.len(), self.failures());
        s
    }
}

pub fn run_suite(suite: Suite) -> Result<Report> {
    let mut checks = Vec::new();
    match suite {
        Suite::Flow => {
            checks.extend(hadamard_random(100_000, 1));
            checks.extend(flow_identity()?);
            checks.extend(flow_group_laws()?);
            checks.extend(gronwall_bounds(20)?);
        }
        Suite::Transport => {
            checks.extend(characteristic_transport()?);
            checks.extend(weak_residual_convergence()?);
            checks.extend(renormalization()?);
            checks.extend(stability()?);
        }
        Suite::Mollifier => checks.extend(mollifier()?),
        Suite::Radon => checks.extend(radon()?),
        Suite::Gradients => checks.extend(gradients()?),
        Suite::All => {
            for s in Suite::EACH {
                checks.extend(run_suite(s)?.checks);
            }
        }
    }
    Ok(Report { checks })
}

fn random_matrix(rng: &mut ChaCha8Rng) -> Mat2 {
    let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
    let mut m = [[0.0; 2]; 2];
    for r in &mut m {
        for x in r.iter_mut() {
            *x = scale * rng.gen_range(-1.0..1.0);
        }
    }
    // a share of singular and orthogonal-column matrices, where equality
    // cases live
    match rng.gen_range(0..10) {
        0 => m[1] = [2.0 * m[0][0], 2.0 * m[0][1]],
        1 => m = [[m[0][0], -m[1][0]], [m[1][0], m[0][0]]],
        _ => {}
    }
    m
}

pub fn hadamard_random(count: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let violations = (0..count).filter(|_| !hadamard_check(&random_matrix(&mut rng)).holds).count();
    vec![Check::at_most(
        Suite::Flow,
        format!("hadamard violations, {count} random matrices"),
        violations as f64,
        0.0,
    )]
}

fn hadamard_violations(jacobians: &[Mat2]) -> usize {
    jacobians.iter().filter(|j| !hadamard_check(j).holds).count()
}

fn random_kernel_field(g: ImageGrid, steps: usize, speed: f64, seed: u64) -> Result<VelocityField> {
    let spec = KernelSpec::new(g, 6, 6, 0.35)?;
    let tg = TimeGrid::uniform_observations(steps, 4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n_control() * steps;
    let a = (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
    Ok(VelocityField::from_coefficients(spec, tg, a)?.with_max_speed(speed))
}

fn windowed(g: &ImageGrid, motion: AnalyticMotion, steps: usize) -> Result<AnalyticField> {
    let w = BoundaryWindow::new(g, g.h_max(), 0.3)?;
    Ok(AnalyticField::new(motion, Some(w), TimeGrid::uniform_observations(steps, 4)?))
}

fn rotation(g: &ImageGrid, omega: f64, steps: usize) -> Result<AnalyticField> {
    windowed(g, AnalyticMotion::Rotation { omega, center: [0.0, 0.0] }, steps)
}

fn rotate(p: Vec2, th: f64) -> Vec2 {
    let (s, c) = th.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

fn gaussian(g: ImageGrid, c: Vec2, s: f64) -> ScalarField {
    ScalarField::from_fn(g, |p| (-((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / (2.0 * s * s)).exp())
}

fn disk(g: ImageGrid, c: Vec2, r: f64) -> ScalarField {
    ScalarField::from_fn(g, |p| if (p[0] - c[0]).hypot(p[1] - c[1]) <= r { 1.0 } else { 0.0 })
}

/// A zero kernel field must give identity flows, unit Jacobians and
/// zero group-law defects.
pub fn flow_identity() -> Result<Vec<Check>> {
    let s = Suite::Flow;
    let g = ImageGrid::square(32)?;
    let v = VelocityField::zeros(KernelSpec::new(g, 6, 6, 0.35)?, TimeGrid::uniform_observations(8, 4)?);
    let f = integrate_flow(&v, &g, 0.0, 1.0, 2)?;
    let disp = f.max_displacement();
    let det_dev = flow_jacobians(&f)
        .iter()
        .map(|j| (stiflow_core::det2(j) - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(vec![
        Check::at_most(s, "zero field: flow displacement", disp, 0.0),
        Check::at_most(s, "zero field: |det - 1|", det_dev, 1e-12),
        Check::at_most(s, "zero field: round trip", round_trip_error(&v, &g, 1.0, 2, true)?, 0.0),
        Check::at_most(s, "zero field: semigroup", semigroup_error(&v, &g, 0.1, 0.5, 0.9, 2, true)?, 0.0),
    ])
}

/// Round-trip and semigroup defects on a random kernel field at 64×64,
/// M = 16, their decay under substep doubling, and the RK4 order on the
/// analytic rotation.
pub fn flow_group_laws() -> Result<Vec<Check>> {
    let s = Suite::Flow;
    let g = ImageGrid::square(64)?;
    let v = random_kernel_field(g, 16, 0.4, 7)?;
    let rt: Vec<f64> = [1, 2, 4]
        .iter()
        .map(|&n| round_trip_error(&v, &g, 1.0, n, false))
        .collect::<stiflow_core::Result<_>>()?;
    let sg: Vec<f64> = [1, 2, 4]
        .iter()
        .map(|&n| semigroup_error(&v, &g, 0.1, 0.45, 0.9, n, false))
        .collect::<stiflow_core::Result<_>>()?;
    let mut checks = vec![
        Check::at_most(s, "round trip error, 64x64 M=16", rt[0], 1e-3),
        Check::at_least(s, "round trip decay over two doublings", rt[0] / rt[2], 8.0),
        Check::at_most(s, "semigroup error, 64x64 M=16", sg[0], 1e-3),
        Check::at_least(s, "semigroup decay over two doublings", sg[0] / sg[2], 8.0),
        Check::at_most(s, "round trip, interpolated composition", round_trip_error(&v, &g, 1.0, 4, true)?, 1e-3),
        Check::at_most(
            s,
            "semigroup, interpolated composition",
            semigroup_error(&v, &g, 0.1, 0.45, 0.9, 4, true)?,
            1e-3,
        ),
    ];

    let mut jac = flow_jacobians(&integrate_flow(&v, &g, 0.0, 1.0, 4)?);
    jac.extend(flow_jacobians(&inverse_flow(&v, &g, 1.0, 4)?));
    checks.push(Check::at_most(
        s,
        "hadamard violations, group-law flow jacobians",
        hadamard_violations(&jac) as f64,
        0.0,
    ));

    let gr = ImageGrid::square(32)?;
    let rot = windowed(
        &gr,
        AnalyticMotion::Rotation { omega: 2.0, center: [0.0, 0.0] },
        8,
    )?;
    let errs: Vec<f64> = [1, 2, 4, 8]
        .iter()
        .map(|&n| {
            let f = integrate_flow(&rot, &gr, 0.0, 1.0, n)?;
            Ok(gr
                .nodes()
                .iter()
                .zip(f.positions())
                .filter(|(x, _)| x[0].hypot(x[1]) < 0.55)
                .map(|(x, y)| {
                    let e = rotate(*x, 2.0);
                    (e[0] - y[0]).hypot(e[1] - y[1])
                })
                .fold(0.0, f64::max))
        })
        .collect::<Result<_>>()?;
    let order = errs.windows(2).map(|w| (w[0] / w[1]).log2()).fold(f64::INFINITY, f64::min);
    checks.push(Check::at_least(s, "RK4 order on rotation (worst doubling)", order, 3.7));
    Ok(checks)
}

/// Gronwall and Jacobian-determinant bounds over random admissible fields.
pub fn gronwall_bounds(draws: u64) -> Result<Vec<Check>> {
    let s = Suite::Flow;
    let g = ImageGrid::square(64)?;
    let (mut lip_ratio, mut det_ratio, mut det_min) = (0.0f64, 0.0f64, f64::INFINITY);
    let mut violations = 0;
    for seed in 0..draws {
        let speed = 0.2 + 0.5 * (seed as f64 / draws as f64);
        let v = random_kernel_field(g, 8, speed, 100 + seed)?;
        let r = gronwall_jacobian_report(&v, &g, 1.0, 4)?;
        lip_ratio = lip_ratio.max(r.lip_flow / r.gronwall_bound);
        det_ratio = det_ratio.max(r.det_max / r.det_bound);
        det_min = det_min.min(r.det_min);
        violations += r.hadamard_violations;
    }
    let bound = 1.0 + GRONWALL_TOLERANCE;
    Ok(vec![
        Check::at_most(s, format!("Lip(flow) / Gronwall bound, {draws} draws"), lip_ratio, bound),
        Check::at_most(s, format!("max det / 2 Lip(flow)^2, {draws} draws"), det_ratio, bound),
        Check::above(s, "min det of flow jacobian", det_min, 0.0),
        Check::at_most(s, "hadamard violations, gronwall-suite jacobians", violations as f64, 0.0),
    ])
}

/// Characteristic solution accuracy, maximum principle and linearity.
pub fn characteristic_transport() -> Result<Vec<Check>> {
    let s = Suite::Transport;
    let g = ImageGrid::square(128)?;
    let c = [0.3, 0.1];
    let sol = solve_transport(&gaussian(g, c, 0.12), &rotation(&g, 0.5, 8)?, &[1.0], 4)?;
    let err = relative_l2(&sol.frames[0], &gaussian(g, rotate(c, 0.5), 0.12))?;

    let gs = ImageGrid::square(64)?;
    let runs: Vec<(ScalarField, Box<dyn Fn() -> Result<stiflow_core::TrajectorySolution>>)> = vec![
        (disk(gs, [0.2, 0.0], 0.3), Box::new(move || Ok(solve_dense(&disk(gs, [0.2, 0.0], 0.3), &rotation(&gs, 1.3, 8)?, 4)?))),
        (
            disk(gs, [-0.2, 0.1], 0.25),
            Box::new(move || {
                let v = windowed(&gs, AnalyticMotion::Translation { velocity: [0.3, 0.1] }, 8)?;
                Ok(solve_dense(&disk(gs, [-0.2, 0.1], 0.25), &v, 2)?)
            }),
        ),
        (
            gaussian(gs, [0.0, 0.1], 0.2),
            Box::new(move || {
                let v = random_kernel_field(gs, 8, 0.5, 3)?;
                Ok(solve_dense(&gaussian(gs, [0.0, 0.1], 0.2), &v, 2)?)
            }),
        ),
    ];
    let mut violation = 0.0f64;
    for (f0, run) in &runs {
        let (lo, hi) = (f0.min(), f0.max());
        for fr in run()?.frames {
            violation = violation.max(lo - fr.min()).max(fr.max() - hi);
        }
    }

    let v = random_kernel_field(gs, 8, 0.5, 5)?;
    let (a, b) = (disk(gs, [0.1, 0.0], 0.3), gaussian(gs, [-0.2, 0.2], 0.15));
    let mix = solve_dense(&a.lincomb(0.7, &b, -1.9)?, &v, 2)?;
    let (sa, sb) = (solve_dense(&a, &v, 2)?, solve_dense(&b, &v, 2)?);
    let mut lin = 0.0f64;
    for k in 0..mix.frames.len() {
        let e = sa.frames[k].lincomb(0.7, &sb.frames[k], -1.9)?;
        lin = lin.max(mix.frames[k].sub(&e)?.linf_norm());
    }
    Ok(vec![
        Check::at_most(s, "rotated bump relative L2 error, 128x128", err, 0.02),
        Check::at_most(s, "maximum principle violation, all frames", violation, 1e-6),
        Check::at_most(s, "linearity defect in f0", lin, 1e-10),
    ])
}

const LEVELS: [(usize, usize); 3] = [(32, 8), (64, 16), (128, 32)];

struct ResidualRow {
    plain: f64,
    renormalized: f64,
}

fn residual_table(
    f0: impl Fn(ImageGrid) -> ScalarField,
    motion: AnalyticMotion,
    beta: Option<Beta>,
    interp: Interpolation,
) -> Result<Vec<ResidualRow>> {
    LEVELS
        .iter()
        .map(|&(n, m)| {
            let g = ImageGrid::square(n)?;
            let v = windowed(&g, motion.clone(), m)?;
            let f = f0(g);
            let sol = solve_dense_with(&f, &v, 2, interp)?;
            let fam = builtin_test_family();
            let plain = max_abs(&weak_residual(&sol, &f, &v, &fam)?);
            let renormalized = match beta {
                Some(b) => renormalization_residual(&sol, &f, &v, b, &fam)?,
                None => plain,
            };
            Ok(ResidualRow { plain, renormalized })
        })
        .collect()
}

/// Residuals of the weak form over the fixed test family under joint
/// space-time refinement.
pub fn weak_residual_convergence() -> Result<Vec<Check>> {
    let s = Suite::Transport;
    let mut checks = Vec::new();
    let motions = [
        ("rotation", AnalyticMotion::Rotation { omega: 1.0, center: [0.0, 0.0] }),
        ("translation", AnalyticMotion::Translation { velocity: [0.3, 0.1] }),
    ];
    for (mname, motion) in motions {
        for data in ["smooth", "indicator"] {
            let f0 = |g: ImageGrid| {
                if data == "smooth" {
                    gaussian(g, [0.2, 0.0], 0.15)
                } else {
                    disk(g, [0.1, 0.0], 0.3)
                }
            };
            let t = residual_table(f0, motion.clone(), None, Interpolation::Bilinear)?;
            for (k, w) in t.windows(2).enumerate() {
                checks.push(Check::at_least(
                    s,
                    format!("weak residual ratio {mname}/{data}, n={}->{}", LEVELS[k].0, LEVELS[k + 1].0),
                    w[0].plain / w[1].plain,
                    1.8,
                ));
            }
        }
    }
    Ok(checks)
}

/// Weak residuals of `β(f)` next to those of `f` on the rotating bump.
///
/// Frames come from the cubic pullback: the numerical diffusion of a
/// bilinear one is conservative for `f` but not for `β(f)`, and would
/// dominate the comparison.
pub fn renormalization() -> Result<Vec<Check>> {
    let s = Suite::Transport;
    let params = stiflow_core::phantom::PhantomParams::default();
    let motion = AnalyticMotion::Rotation { omega: params.omega, center: [0.0, 0.0] };
    let f0 = |g: ImageGrid| gaussian(g, params.bump_center, params.bump_width);
    let mut checks = Vec::new();
    for beta in Beta::ALL {
        let t = residual_table(f0, motion.clone(), Some(beta), Interpolation::Cubic)?;
        for (k, row) in t.iter().enumerate() {
            checks.push(Check::at_most(
                s,
                format!("renormalized/plain residual, {} n={}", beta.name(), LEVELS[k].0),
                row.renormalized / row.plain,
                2.0,
            ));
        }
        for (k, w) in t.windows(2).enumerate() {
            checks.push(Check::at_least(
                s,
                format!("renormalized residual ratio {}, n={}->{}", beta.name(), LEVELS[k].0, LEVELS[k + 1].0),
                w[0].renormalized / w[1].renormalized,
                1.8,
            ));
        }
    }
    Ok(checks)
}

/// Convergent input sequences: mollified templates under a fixed field
/// (where the change-of-variables bound applies) and perturbed fields
/// under a fixed template.
pub fn stability() -> Result<Vec<Check>> {
    let s = Suite::Transport;
    let g = ImageGrid::square(64)?;
    let v = rotation(&g, 1.0, 8)?;
    let mut checks = Vec::new();
    for (name, f0) in [("smooth", gaussian(g, [0.2, 0.0], 0.2)), ("indicator", disk(g, [0.1, 0.0], 0.3))] {
        let fs: Vec<ScalarField> = [0.4, 0.2, 0.1]
            .iter()
            .map(|&e| mollify(&f0, &Mollifier::new(g, e)?))
            .collect::<stiflow_core::Result<_>>()?;
        let r = stability_probe(&fs, &vec![v.clone(); fs.len()], &f0, &v, 4)?;
        checks.push(Check::holds(
            s,
            format!("mollified {name} data: discrepancies strictly decrease"),
            r.strictly_decreasing,
        ));
        let margin = r
            .bounds
            .as_ref()
            .map(|b| b.iter().zip(&r.discrepancies).map(|(b, d)| b / d).fold(f64::INFINITY, f64::min))
            .unwrap_or(0.0);
        checks.push(Check::at_least(
            s,
            format!("mollified {name} data: bound / discrepancy"),
            margin,
            1.0,
        ));
    }
    let f0 = gaussian(g, [0.2, 0.0], 0.2);
    let vs: Vec<AnalyticField> = (1..5)
        .map(|n| rotation(&g, 1.0 + 0.5f64.powi(n), 8))
        .collect::<Result<_>>()?;
    let r = stability_probe(&vec![f0.clone(); vs.len()], &vs, &f0, &v, 4)?;
    checks.push(Check::holds(s, "perturbed velocities: discrepancies strictly decrease", r.strictly_decreasing));
    Ok(checks)
}

/// Kernel mass, L¹ error on the disk indicator against the annulus bound,
/// and TV decrease on Ω_ε.
pub fn mollifier() -> Result<Vec<Check>> {
    let s = Suite::Mollifier;
    let g = ImageGrid::square(256)?;
    let r = 0.5;
    let f = disk(g, [0.0, 0.0], r);
    let tv = total_variation(&f);
    let mut checks = Vec::new();
    let mut errs = Vec::new();
    for eps in [0.1, 0.05, 0.025] {
        let m = Mollifier::new(g, eps)?;
        checks.push(Check::at_most(s, format!("|kernel mass - 1|, eps={eps}"), (m.discrete_mass() - 1.0).abs(), 1e-10));
        let fe = mollify(&f, &m)?;
        let err = fe.sub(&f)?.l1_norm();
        let annulus = 2.0 * std::f64::consts::PI * r * 2.0 * eps;
        checks.push(Check::at_most(s, format!("L1 mollification error, eps={eps}"), err, annulus));
        checks.push(Check::at_most(
            s,
            format!("TV on interior band / TV, eps={eps}"),
            total_variation_interior(&fe, eps) / tv,
            1.0,
        ));
        errs.push(err);
    }
    checks.push(Check::holds(s, "L1 error strictly decreasing in eps", errs.windows(2).all(|w| w[1] < w[0])));
    Ok(checks)
}

/// Dot-product test, disk chords and positivity of the projection of 1.
pub fn radon() -> Result<Vec<Check>> {
    let s = Suite::Radon;
    let mut checks = Vec::new();

    let g = ImageGrid::square(64)?;
    let sched = AngleSchedule::golden(4, 10, &g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for pair in 0..20 {
        let op = RadonOperator::new(&sched, pair % 4, &g)?;
        let f = ScalarField::from_fn(g, |_| rng.gen_range(-1.0..1.0));
        let mut y = Sinogram::zeros(&sched, pair % 4)?;
        y.values.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let lhs: f64 = op.forward(&f)?.values.iter().zip(&y.values).map(|(a, b)| a * b).sum();
        let rhs = f.dot(&op.adjoint(&y)?);
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }
    checks.push(Check::at_most(s, "dot test relative error, 20 pairs", worst, 1e-6));

    let g = ImageGrid::square(256)?;
    let r = 0.5;
    let full = AngleSchedule::full(1, 6, &g)?;
    let sino = radon_forward(&disk(g, [0.0, 0.0], r), 0, &full)?;
    let mut chord = 0.0f64;
    for a in 0..sino.n_angles() {
        for k in 0..sino.n_det {
            let o = full.bin_offset(k);
            let exact = if o.abs() < r { 2.0 * (r * r - o * o).sqrt() } else { 0.0 };
            chord = chord.max((sino.at(a, k) - exact).abs());
        }
    }
    checks.push(Check::at_most(s, "disk chord error / diameter, 256x256", chord / (2.0 * r), 0.02));

    let mut min_one = f64::INFINITY;
    for n in [32, 64, 128] {
        let g = ImageGrid::square(n)?;
        for sched in [AngleSchedule::golden(4, 10, &g)?, AngleSchedule::full(2, 16, &g)?] {
            let ones = ScalarField::constant(g, 1.0);
            for i in 0..sched.n_obs() {
                let p = radon_forward(&ones, i, &sched)?;
                min_one = p.values.iter().copied().fold(min_one, f64::min);
            }
        }
    }
    checks.push(Check::above(s, "min of projection of 1, all schedules", min_one, 0.0));
    Ok(checks)
}

fn random_field(g: ImageGrid, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ScalarField {
    ScalarField::from_fn(g, |_| rng.gen_range(lo..hi))
}

fn problem_from(
    spec: KernelSpec,
    tg: TimeGrid,
    sched: AngleSchedule,
    truth: &ScalarField,
    v: &VelocityField,
) -> Result<Problem> {
    let (_, data) = crate::simulate::clean_data(truth, v, &sched, 2, Interpolation::Bilinear)?;
    Ok(Problem::new(spec, tg, sched, data)?)
}

/// Central-difference checks of both gradients along random directions.
pub fn gradient_errors(n: usize, nc: usize, steps: usize, seed: u64) -> Result<(f64, f64)> {
    let g = ImageGrid::square(n)?;
    let spec = KernelSpec::new(g, nc, nc, 0.35)?;
    let tg = TimeGrid::uniform_observations(steps, 2)?;
    let sched = AngleSchedule::golden(2, 6, &g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_v = |rng: &mut ChaCha8Rng, speed: f64| -> Result<VelocityField> {
        let a = (0..spec.n_control() * steps)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        Ok(VelocityField::from_coefficients(spec.clone(), tg.clone(), a)?.with_max_speed(speed))
    };
    let vt = random_v(&mut rng, 0.3)?;
    let p = problem_from(spec.clone(), tg.clone(), sched, &gaussian(g, [0.15, 0.0], 0.2), &vt)?;
    let v = random_v(&mut rng, 0.2)?;
    let cfg = ModelConfig {
        mu1: 1e-2,
        mu2: 1e-2,
        ..ModelConfig::default()
    };

    let f0 = random_field(g, &mut rng, 0.0, 1.0);
    let e = evaluate_objective(&p, &f0, &v, &cfg)?;
    let gf = grad_f0(&e, &cfg)?;
    let d = random_field(g, &mut rng, -1.0, 1.0);
    let h = 1e-5;
    let j = |f: &ScalarField| -> Result<f64> {
        Ok(evaluate_with_flows(&p, f, e.flows.clone(), e.breakdown.r2.clone(), &cfg)?.breakdown.value)
    };
    let fd = (j(&f0.lincomb(1.0, &d, h)?)? - j(&f0.lincomb(1.0, &d, -h)?)?) / (2.0 * h);
    let an = gf.dot(&d);
    let err_f0 = (fd - an).abs() / an.abs();

    let f0 = gaussian(g, [0.1, 0.05], 0.22);
    let e = evaluate_objective(&p, &f0, &v, &cfg)?;
    let gv = grad_v(&p, &f0, &v, &e, &cfg)?;
    let dir: Vec<Vec2> = (0..gv.len())
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();
    let h = 1e-6;
    let j = |w: &VelocityField| -> Result<f64> { Ok(evaluate_objective(&p, &f0, w, &cfg)?.breakdown.value) };
    let fd = (j(&v.offset(&dir, h)?)? - j(&v.offset(&dir, -h)?)?) / (2.0 * h);
    let an: f64 = gv.iter().zip(&dir).map(|(a, b)| a[0] * b[0] + a[1] * b[1]).sum();
    Ok((err_f0, (fd - an).abs() / an.abs()))
}

/// Gradients on the designated small instances (32×32 for the template,
/// 16×16 with a 3×3 lattice and M = 2 for the velocity) and at the
/// default experiment size.
pub fn gradients() -> Result<Vec<Check>> {
    let s = Suite::Gradients;
    let (ef, _) = gradient_errors(32, 5, 4, 4)?;
    let (_, ev) = gradient_errors(16, 3, 2, 8)?;
    let (ef64, ev64) = gradient_errors(64, 8, 8, 21)?;
    let mut checks = vec![
        Check::at_most(s, "grad_f0 finite-difference error, 32x32", ef, 1e-4),
        Check::at_most(s, "grad_v finite-difference error, 16x16 3x3 M=2", ev, 1e-3),
        Check::at_most(s, "grad_f0 finite-difference error, 64x64", ef64, 1e-4),
        Check::at_most(s, "grad_v finite-difference error, 64x64 8x8 M=8", ev64, 1e-3),
    ];

    // the default phantom's ground truth fits its own data
    let g = ImageGrid::square(32)?;
    let spec = KernelSpec::new(g, 8, 8, 0.25)?;
    let tg = TimeGrid::uniform_observations(8, 4)?;
    let ph = make_phantom(PhantomId::TranslatingDisk, &spec, &tg)?;
    let sched = AngleSchedule::golden(4, 10, &g)?;
    let cfg = ModelConfig {
        mu1: 0.0,
        ..ModelConfig::default()
    };
    let p = problem_from(spec, tg, sched, &ph.f0, &ph.v)?;
    let e = evaluate_objective(&p, &ph.f0, &ph.v, &cfg)?;
    let gf = grad_f0(&e, &cfg)?;
    let scale = e.residual_grads.iter().map(|r| r.linf_norm()).fold(0.0, f64::max).max(1.0);
    checks.push(Check::at_most(s, "grad_f0 at a data-consistent state / scale", gf.linf_norm() / scale, 1e-6));
    Ok(checks)
}
