//! The reconstruction objective
//! `J = 1/T Σ_i (w·D_i + μ₂ ∫_0^{t_i} ‖v‖²_V) + μ₁ TV_δ(f0)` and its exact
//! gradients with respect to the template samples and the velocity
//! coefficients.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::flow::{backprop_coefficients, inverse_flow, FlowMap};
use crate::grid::{interpolate_with_gradient, ImageGrid, ScalarField, TimeGrid};
use crate::math::Vec2;
use crate::mollifier::{total_variation, tv_smoothed};
use crate::radon::{AngleSchedule, RadonOperator, Sinogram};
use crate::transport::{pullback, pullback_transpose};
use crate::velocity::{KernelSpec, VelocityField};

/// How the optimizer builds its starting template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Back-projection of all data, scaled by the least-squares factor.
    BackProjection,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// TV weight, `≥ 0`.
    pub mu1: f64,
    /// Velocity-energy weight, `> 0`.
    pub mu2: f64,
    /// Smoothing of the TV term inside the optimizer.
    pub tv_delta: f64,
    /// Common weight of the data terms.
    pub data_weight: f64,
    /// RK4 substeps per time-grid interval.
    pub substeps: usize,
    pub max_outer_iters: usize,
    /// Gradient steps in `f0` per outer iteration.
    pub f0_iters: usize,
    /// Gradient steps in the velocity per outer iteration.
    pub v_iters: usize,
    /// Stop once an outer iteration lowers `J` by less than `tol·J`.
    pub tol: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    /// First `f0` step length, relative to `max(‖f0‖, 1)` (Euclidean norm
    /// of the samples).
    pub f0_step: f64,
    /// First velocity step, as the largest speed change it may cause.
    pub v_step_speed: f64,
    pub init: Init,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mu1: 5e-4,
            mu2: 1e-4,
            tv_delta: 1e-2,
            data_weight: 1.0,
            substeps: 2,
            max_outer_iters: 40,
            f0_iters: 20,
            v_iters: 3,
            tol: 1e-6,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 30,
            f0_step: 0.5,
            v_step_speed: 0.05,
            init: Init::BackProjection,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if !pos(self.mu2) {
            return Err(Error::InvalidConfig("mu2 must be positive"));
        }
        if !(self.mu1 >= 0.0 && self.mu1.is_finite()) {
            return Err(Error::InvalidConfig("mu1 must be nonnegative"));
        }
        if !(self.data_weight >= 0.0 && self.data_weight.is_finite()) {
            return Err(Error::InvalidConfig("data_weight must be nonnegative"));
        }
        if !pos(self.tv_delta) || !pos(self.tol) || !pos(self.armijo_c) || !pos(self.f0_step) || !pos(self.v_step_speed)
        {
            return Err(Error::InvalidConfig("tv_delta, tol, armijo_c and step sizes must be positive"));
        }
        if self.armijo_c >= 1.0 {
            return Err(Error::InvalidConfig("armijo_c must be below 1"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::InvalidConfig("backtrack_factor must lie in (0, 1)"));
        }
        if self.substeps == 0 || self.max_backtracks == 0 {
            return Err(Error::InvalidConfig("substeps and max_backtracks must be at least 1"));
        }
        Ok(())
    }
}

/// Geometry and data of one reconstruction problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: KernelSpec,
    pub time_grid: TimeGrid,
    pub schedule: AngleSchedule,
    pub operators: Vec<RadonOperator>,
    pub data: Vec<Sinogram>,
}

impl Problem {
    pub fn new(spec: KernelSpec, time_grid: TimeGrid, schedule: AngleSchedule, data: Vec<Sinogram>) -> Result<Self> {
        let n = time_grid.n_obs();
        if schedule.n_obs() != n || data.len() != n {
            return Err(Error::ShapeMismatch("one angle set and one sinogram per observation time"));
        }
        let grid = *spec.image_grid();
        let operators = RadonOperator::for_schedule(&schedule, &grid)?;
        for (i, (g, op)) in data.iter().zip(&operators).enumerate() {
            if g.obs_index != i || g.values.len() != op.n_rows() {
                return Err(Error::ShapeMismatch("sinogram does not match the schedule"));
            }
        }
        Ok(Self {
            spec,
            time_grid,
            schedule,
            operators,
            data,
        })
    }

    pub fn grid(&self) -> &ImageGrid {
        self.spec.image_grid()
    }

    pub fn n_obs(&self) -> usize {
        self.time_grid.n_obs()
    }

    pub fn obs_times(&self) -> Vec<f64> {
        self.time_grid.obs_indices().iter().map(|&k| self.time_grid.time(k)).collect()
    }

    /// Scaled back-projection `s Σ Aᵢᵀ gᵢ` with `s` minimizing
    /// `Σ ‖s Aᵢ b − gᵢ‖²`.
    pub fn backprojection(&self) -> Result<ScalarField> {
        let mut b = ScalarField::zeros(*self.grid());
        for (op, g) in self.operators.iter().zip(&self.data) {
            b.axpy(1.0, &op.adjoint(g)?)?;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (op, g) in self.operators.iter().zip(&self.data) {
            let ab = op.forward(&b)?;
            num += ab.values.iter().zip(&g.values).map(|(x, y)| x * y).sum::<f64>();
            den += ab.values.iter().map(|x| x * x).sum::<f64>();
        }
        Ok(if den > 0.0 { b.scaled(num / den) } else { b })
    }
}

/// Term-by-term values of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Breakdown {
    /// `D_i = Δs ‖Aᵢ f(t_i) − gᵢ‖²` (unweighted).
    pub data: Vec<f64>,
    /// `∫_0^{t_i} ‖v‖²_V`.
    pub r2: Vec<f64>,
    pub tv_smoothed: f64,
    pub tv_exact: f64,
    pub value: f64,
}

impl Breakdown {
    pub fn assemble(data: Vec<f64>, r2: Vec<f64>, tv_smoothed: f64, tv_exact: f64, cfg: &ModelConfig) -> Self {
        let mut b = Self {
            data,
            r2,
            tv_smoothed,
            tv_exact,
            value: 0.0,
        };
        b.value = b.recompute(cfg);
        b
    }

    /// `1/T Σ (w D_i + μ₂ r2_i) + μ₁ TV_δ`.
    pub fn recompute(&self, cfg: &ModelConfig) -> f64 {
        let t = self.data.len() as f64;
        let s: f64 = self
            .data
            .iter()
            .zip(&self.r2)
            .map(|(d, r)| cfg.data_weight * d + cfg.mu2 * r)
            .sum();
        s / t + cfg.mu1 * self.tv_smoothed
    }

    /// `1/T Σ D_i`.
    pub fn data_mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// `1/T Σ r2_i`.
    pub fn r2_mean(&self) -> f64 {
        self.r2.iter().sum::<f64>() / self.r2.len() as f64
    }
}

/// Everything the gradients need at one `(f0, v)`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// `φ_{t_i,0}` per observation.
    pub flows: Vec<FlowMap>,
    /// `f(t_i) = f0 ∘ φ_{t_i,0}`.
    pub frames: Vec<ScalarField>,
    /// `∂D_i/∂f(t_i) = 2Δs Aᵢᵀ(Aᵢ f(t_i) − gᵢ)`.
    pub residual_grads: Vec<ScalarField>,
    pub tv_grad: ScalarField,
    pub breakdown: Breakdown,
}

fn r2_terms(problem: &Problem, v: &VelocityField) -> Result<Vec<f64>> {
    problem.time_grid.obs_indices().iter().map(|&k| v.r2_energy(k)).collect()
}

/// Inverse flows to every observation time.
pub fn observation_flows(problem: &Problem, v: &VelocityField, substeps: usize) -> Result<Vec<FlowMap>> {
    problem
        .obs_times()
        .iter()
        .map(|&t| inverse_flow(v, problem.grid(), t, substeps))
        .collect()
}

/// Objective pieces for `f0` with the flows (and hence `v`) held fixed.
pub fn evaluate_with_flows(
    problem: &Problem,
    f0: &ScalarField,
    flows: Vec<FlowMap>,
    r2: Vec<f64>,
    cfg: &ModelConfig,
) -> Result<Evaluation> {
    if f0.grid() != problem.grid() {
        return Err(Error::GridMismatch);
    }
    let mut frames = Vec::with_capacity(flows.len());
    let mut residual_grads = Vec::with_capacity(flows.len());
    let mut data = Vec::with_capacity(flows.len());
    for ((fl, op), g) in flows.iter().zip(&problem.operators).zip(&problem.data) {
        let f = pullback(f0, fl)?;
        let (d, gr) = op.data_term(&f, g)?;
        frames.push(f);
        residual_grads.push(gr);
        data.push(d);
    }
    let (tvs, tv_grad) = tv_smoothed(f0, cfg.tv_delta)?;
    let breakdown = Breakdown::assemble(data, r2, tvs, total_variation(f0), cfg);
    Ok(Evaluation {
        flows,
        frames,
        residual_grads,
        tv_grad,
        breakdown,
    })
}

/// `J(f0, v)` with all intermediate quantities.
pub fn evaluate_objective(problem: &Problem, f0: &ScalarField, v: &VelocityField, cfg: &ModelConfig) -> Result<Evaluation> {
    let flows = observation_flows(problem, v, cfg.substeps)?;
    evaluate_with_flows(problem, f0, flows, r2_terms(problem, v)?, cfg)
}

/// `∂J/∂f0`: the data gradients pulled back to `t = 0` through the exact
/// transpose of the interpolation, plus the TV gradient.
pub fn grad_f0(eval: &Evaluation, cfg: &ModelConfig) -> Result<ScalarField> {
    let t = eval.flows.len() as f64;
    let mut g = eval.tv_grad.scaled(cfg.mu1);
    for (gr, fl) in eval.residual_grads.iter().zip(&eval.flows) {
        g.axpy(cfg.data_weight / t, &pullback_transpose(gr, fl)?)?;
    }
    Ok(g)
}

/// `∂J/∂α`, laid out like [`VelocityField::coefficients`]: reverse
/// accumulation through the RK4 flows and the interpolation, plus the
/// energy term `μ₂/T · Δτ · 2Kα_k · #{i : t_i > τ_k}`.
pub fn grad_v(
    problem: &Problem,
    f0: &ScalarField,
    v: &VelocityField,
    eval: &Evaluation,
    cfg: &ModelConfig,
) -> Result<Vec<Vec2>> {
    let grid = *problem.grid();
    let nodes = grid.nodes();
    let t_count = problem.n_obs() as f64;
    let mut grad = vec![[0.0; 2]; v.coefficients().len()];
    if cfg.data_weight != 0.0 {
        for ((gr, fl), &t) in eval.residual_grads.iter().zip(&eval.flows).zip(&problem.obs_times()) {
            let scale = cfg.data_weight / t_count;
            let lambda: Vec<Vec2> = fl
                .positions()
                .iter()
                .zip(gr.values())
                .map(|(&y, &r)| {
                    if r == 0.0 {
                        return [0.0, 0.0];
                    }
                    let (_, d) = interpolate_with_gradient(f0, y);
                    [scale * r * d[0], scale * r * d[1]]
                })
                .collect();
            backprop_coefficients(v, &grid, &nodes, t, 0.0, cfg.substeps, &lambda, &mut grad)?;
        }
    }
    let tg = &problem.time_grid;
    let nc = v.spec().n_control();
    for k in 0..tg.steps() {
        let count = tg.obs_indices().iter().filter(|&&ki| ki > k).count();
        if count == 0 {
            continue;
        }
        let c = cfg.mu2 / t_count * tg.dt() * 2.0 * count as f64;
        let ka = v.spec().gram_apply(v.slice(k));
        for (g, a) in grad[k * nc..(k + 1) * nc].iter_mut().zip(&ka) {
            g[0] += c * a[0];
            g[1] += c * a[1];
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{make_phantom, PhantomId};
    use crate::radon::radon_forward;
    use crate::transport::solve_at_observations;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(n: usize, nc: usize, steps: usize, n_obs: usize, data_from: &ScalarField, v: Option<&VelocityField>) -> Problem {
        let g = ImageGrid::square(n).unwrap();
        let spec = KernelSpec::new(g, nc, nc, 0.35).unwrap();
        let tg = TimeGrid::uniform_observations(steps, n_obs).unwrap();
        let sched = AngleSchedule::golden(n_obs, 6, &g).unwrap();
        let frames = match v {
            Some(v) => solve_at_observations(data_from, v, 2).unwrap().frames,
            None => vec![data_from.clone(); n_obs],
        };
        let data = frames.iter().enumerate().map(|(i, f)| radon_forward(f, i, &sched).unwrap()).collect();
        Problem::new(spec, tg, sched, data).unwrap()
    }

    fn blob(g: ImageGrid, c: Vec2, s: f64) -> ScalarField {
        ScalarField::from_fn(g, |p| (-((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / (2.0 * s * s)).exp())
    }

    fn random_v(spec: &KernelSpec, tg: &TimeGrid, rng: &mut ChaCha8Rng, speed: f64) -> VelocityField {
        let n = spec.n_control() * tg.steps();
        let a = (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        VelocityField::from_coefficients(spec.clone(), tg.clone(), a).unwrap().with_max_speed(speed)
    }

    fn cfg() -> ModelConfig {
        ModelConfig { mu1: 1e-2, mu2: 1e-2, ..ModelConfig::default() }
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig { mu2: 0.0, ..ModelConfig::default() };
        assert_eq!(bad.validate(), Err(Error::InvalidConfig("mu2 must be positive")));
    }

    #[test]
    fn zero_state_is_the_tv_floor() {
        let g = ImageGrid::square(16).unwrap();
        let p = problem(16, 4, 4, 2, &ScalarField::zeros(g), None);
        let c = cfg();
        let v = VelocityField::zeros(p.spec.clone(), p.time_grid.clone());
        let e = evaluate_objective(&p, &ScalarField::zeros(g), &v, &c).unwrap();
        assert!((e.breakdown.value - c.mu1 * c.tv_delta * 4.0).abs() <= 1e-15);
        assert_eq!(e.breakdown.data, vec![0.0; 2]);
        assert_eq!(e.breakdown.r2, vec![0.0; 2]);
        assert_eq!(grad_f0(&e, &c).unwrap().linf_norm(), 0.0);
    }

    #[test]
    fn weights_enter_linearly() {
        let g = ImageGrid::square(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = blob(g, [0.1, 0.0], 0.2);
        let p = problem(16, 4, 4, 2, &truth, None);
        let v = random_v(&p.spec, &p.time_grid, &mut rng, 0.2);
        let f0 = blob(g, [0.0, 0.1], 0.25);
        let c1 = cfg();
        let c2 = ModelConfig { mu2: 2.0 * c1.mu2, ..c1.clone() };
        let a = evaluate_objective(&p, &f0, &v, &c1).unwrap().breakdown;
        let b = evaluate_objective(&p, &f0, &v, &c2).unwrap().breakdown;
        assert_eq!((a.data.clone(), a.tv_smoothed), (b.data.clone(), b.tv_smoothed));
        let r2a = c1.mu2 * a.r2_mean();
        assert!(((b.value - a.value) - r2a).abs() <= 1e-15 * a.value.max(1.0));
        assert!((a.recompute(&c1) - a.value).abs() <= 1e-12);
    }

    #[test]
    fn grad_f0_matches_finite_differences() {
        let g = ImageGrid::square(32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = blob(g, [0.1, 0.0], 0.2);
        let p = problem(32, 5, 4, 2, &truth, None);
        let v = random_v(&p.spec, &p.time_grid, &mut rng, 0.3);
        let c = cfg();
        let f0 = ScalarField::from_fn(g, |_| rng.gen_range(0.0..1.0));
        let e = evaluate_objective(&p, &f0, &v, &c).unwrap();
        let gr = grad_f0(&e, &c).unwrap();
        let d = ScalarField::from_fn(g, |_| rng.gen_range(-1.0..1.0));
        let h = 1e-5;
        let j = |f: &ScalarField| evaluate_with_flows(&p, f, e.flows.clone(), e.breakdown.r2.clone(), &c).unwrap().breakdown.value;
        let fd = (j(&f0.lincomb(1.0, &d, h).unwrap()) - j(&f0.lincomb(1.0, &d, -h).unwrap())) / (2.0 * h);
        let an = gr.dot(&d);
        assert!((fd - an).abs() <= 1e-4 * an.abs(), "{fd} {an}");
    }

    #[test]
    fn grad_f0_at_zero_velocity_is_plain_backprojection() {
        let g = ImageGrid::square(16).unwrap();
        let truth = blob(g, [0.1, 0.0], 0.2);
        let p = problem(16, 4, 4, 2, &truth, None);
        let c = ModelConfig { mu1: 0.0, ..cfg() };
        let v = VelocityField::zeros(p.spec.clone(), p.time_grid.clone());
        let f0 = blob(g, [0.0, 0.0], 0.3);
        let e = evaluate_objective(&p, &f0, &v, &c).unwrap();
        let mut expect = ScalarField::zeros(g);
        for (op, d) in p.operators.iter().zip(&p.data) {
            expect.axpy(0.5, &op.data_term(&f0, d).unwrap().1).unwrap();
        }
        assert!(grad_f0(&e, &c).unwrap().sub(&expect).unwrap().linf_norm() <= 1e-12 * expect.linf_norm());
        // and vanishes on consistent data
        let e = evaluate_objective(&p, &truth, &v, &c).unwrap();
        assert!(grad_f0(&e, &c).unwrap().linf_norm() <= 1e-12);
    }

    #[test]
    fn grad_v_matches_finite_differences() {
        let g = ImageGrid::square(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth = blob(g, [0.15, 0.0], 0.2);
        let p0 = problem(16, 3, 2, 2, &truth, None);
        let vt = random_v(&p0.spec, &p0.time_grid, &mut rng, 0.3);
        let p = problem(16, 3, 2, 2, &truth, Some(&vt));
        let v = random_v(&p.spec, &p.time_grid, &mut rng, 0.2);
        let c = cfg();
        let f0 = blob(g, [0.1, 0.05], 0.22);
        let e = evaluate_objective(&p, &f0, &v, &c).unwrap();
        let gr = grad_v(&p, &f0, &v, &e, &c).unwrap();
        let n = v.coefficients().len();
        let d: Vec<Vec2> = (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let h = 1e-6;
        let j = |w: &VelocityField| evaluate_objective(&p, &f0, w, &c).unwrap().breakdown.value;
        let fd = (j(&v.offset(&d, h).unwrap()) - j(&v.offset(&d, -h).unwrap())) / (2.0 * h);
        let an: f64 = gr.iter().zip(&d).map(|(a, b)| a[0] * b[0] + a[1] * b[1]).sum();
        assert!((fd - an).abs() <= 1e-3 * an.abs(), "{fd} {an}");
    }

    #[test]
    fn energy_only_gradient() {
        let g = ImageGrid::square(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = problem(16, 4, 4, 2, &blob(g, [0.0, 0.0], 0.2), None);
        let v = random_v(&p.spec, &p.time_grid, &mut rng, 0.3);
        let c = ModelConfig { data_weight: 0.0, ..cfg() };
        let f0 = blob(g, [0.1, 0.0], 0.2);
        let e = evaluate_objective(&p, &f0, &v, &c).unwrap();
        let gr = grad_v(&p, &f0, &v, &e, &c).unwrap();
        // observations at τ_2 and τ_4: intervals 0, 1 are counted twice
        let nc = p.spec.n_control();
        for k in 0..4 {
            let count = if k < 2 { 2.0 } else { 1.0 };
            let ka = p.spec.gram_apply(v.slice(k));
            for (a, b) in gr[k * nc..(k + 1) * nc].iter().zip(&ka) {
                let e = c.mu2 / 2.0 * p.time_grid.dt() * 2.0 * count;
                assert!((a[0] - e * b[0]).abs() <= 1e-15 && (a[1] - e * b[1]).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn mirror_symmetry_of_the_velocity_gradient() {
        let g = ImageGrid::square(32).unwrap();
        let spec = KernelSpec::new(g, 6, 6, 0.35).unwrap();
        let tg = TimeGrid::uniform_observations(4, 2).unwrap();
        let sched = AngleSchedule::full(2, 12, &g).unwrap();
        let truth = blob(g, [0.0, 0.1], 0.3);
        let data = (0..2).map(|i| radon_forward(&truth, i, &sched).unwrap()).collect();
        let p = Problem::new(spec.clone(), tg.clone(), sched, data).unwrap();
        let f0 = blob(g, [0.0, 0.0], 0.25);
        let v = VelocityField::zeros(spec, tg);
        let c = cfg();
        let e = evaluate_objective(&p, &f0, &v, &c).unwrap();
        let gr = grad_v(&p, &f0, &v, &e, &c).unwrap();
        let scale = gr.iter().fold(0.0f64, |m, a| m.max(a[0].abs()).max(a[1].abs()));
        assert!(scale > 0.0);
        let nc = 6;
        for k in 0..4 {
            for j in 0..nc {
                for i in 0..nc {
                    let a = gr[k * 36 + j * nc + i];
                    let b = gr[k * 36 + j * nc + (nc - 1 - i)];
                    // x → −x flips the x-component and keeps the y-component
                    assert!((a[0] + b[0]).abs() <= 1e-6 * scale);
                    assert!((a[1] - b[1]).abs() <= 1e-6 * scale);
                }
            }
        }
    }

    #[test]
    fn ground_truth_is_near_the_data() {
        let g = ImageGrid::square(32).unwrap();
        let spec = KernelSpec::new(g, 8, 8, 0.25).unwrap();
        let tg = TimeGrid::uniform_observations(8, 4).unwrap();
        let ph = make_phantom(PhantomId::TranslatingDisk, &spec, &tg).unwrap();
        let sched = AngleSchedule::golden(4, 10, &g).unwrap();
        let c = cfg();
        let frames = solve_at_observations(&ph.f0, &ph.v, c.substeps).unwrap().frames;
        let data = frames.iter().enumerate().map(|(i, f)| radon_forward(f, i, &sched).unwrap()).collect();
        let p = Problem::new(spec, tg, sched, data).unwrap();
        let e = evaluate_objective(&p, &ph.f0, &ph.v, &c).unwrap();
        assert!(e.breakdown.data.iter().all(|&d| d <= 1e-20));
        let r2: Vec<f64> = p.time_grid.obs_indices().iter().map(|&k| ph.v.r2_energy(k).unwrap()).collect();
        assert_eq!(e.breakdown.r2, r2);
    }
}
