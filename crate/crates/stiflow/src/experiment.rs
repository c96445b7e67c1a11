//! The `phantom`, `simulate` and `reconstruct` runs and their artifacts.

use std::path::Path;

use serde::{Deserialize, Serialize};
use stiflow_core::transport::relative_l2;
use stiflow_core::{make_phantom, minimize, ModelState, Phantom, Problem, ScalarField, Sinogram};

use crate::config::{ExperimentConfig, Setup};
use crate::error::Result;
use crate::io;
use crate::simulate::{add_noise, clean_data};

fn write_field_and_png(out: &Path, name: &str, f: &ScalarField, png: bool) -> Result<()> {
    io::write_field(&out.join(name), f)?;
    if png {
        io::write_png(&out.join(format!("{name}.png")), f)?;
    }
    Ok(())
}

/// Ground truth and its exact trajectory at the observation times.
pub struct Truth {
    pub phantom: Phantom,
    pub frames: Vec<ScalarField>,
    pub data: Vec<Sinogram>,
}

pub fn ground_truth(cfg: &ExperimentConfig, setup: &Setup) -> Result<Truth> {
    let phantom = make_phantom(setup.phantom, &setup.spec, &setup.time_grid)?;
    let (frames, mut data) = clean_data(&phantom.f0, &phantom.v, &setup.schedule, setup.model.substeps, setup.interpolation)?;
    add_noise(&mut data, cfg.noise.sigma, cfg.seed)?;
    Ok(Truth { phantom, frames, data })
}

fn write_truth(out: &Path, truth: &Truth, png: bool) -> Result<()> {
    write_field_and_png(out, "truth_f0", &truth.phantom.f0, png)?;
    io::write_velocity(&out.join("truth_v"), &truth.phantom.v)?;
    for (i, f) in truth.frames.iter().enumerate() {
        write_field_and_png(out, &format!("truth_frame_{i}"), f, png)?;
    }
    Ok(())
}

pub fn run_phantom(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let setup = cfg.validate()?;
    write_truth(out, &ground_truth(cfg, &setup)?, cfg.output.png)
}

pub fn run_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let setup = cfg.validate()?;
    let truth = ground_truth(cfg, &setup)?;
    write_truth(out, &truth, cfg.output.png)?;
    for g in &truth.data {
        io::write_sinogram(&out.join(format!("sinogram_{}", g.obs_index)), g)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSummary {
    pub value: f64,
    pub data: Vec<f64>,
    pub r2: Vec<f64>,
    pub tv_smoothed: f64,
    pub tv_exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub config_sha256: String,
    pub phantom: String,
    pub status: String,
    pub iterations: usize,
    /// Relative L² error of each reconstructed frame, when ground truth is
    /// known.
    pub frame_errors: Option<Vec<f64>>,
    pub initial_objective: f64,
    pub objective: ObjectiveSummary,
    pub f0_l1: f64,
    pub f0_linf: f64,
}

/// Reconstructs from simulated (or loaded) data and writes every artifact.
pub fn run_reconstruct(cfg: &ExperimentConfig, out: &Path) -> Result<Metrics> {
    let setup = cfg.validate()?;
    let (schedule, data, truth_frames) = match &cfg.data.dir {
        Some(dir) => {
            let (s, d) = io::read_sinograms(dir, setup.time_grid.n_obs(), &setup.grid)?;
            let truth: Option<Vec<ScalarField>> = (0..setup.time_grid.n_obs())
                .map(|i| io::read_field(&dir.join(format!("truth_frame_{i}"))).ok())
                .collect();
            (s, d, truth)
        }
        None => {
            let t = ground_truth(cfg, &setup)?;
            (setup.schedule.clone(), t.data, Some(t.frames))
        }
    };
    let problem = Problem::new(setup.spec.clone(), setup.time_grid.clone(), schedule, data)?;
    let init = ModelState::initial(&problem, &setup.model)?;
    let initial_objective = init.objective();
    let result = minimize(&problem, init, &setup.model)?;
    let state = &result.state;

    let png = cfg.output.png;
    write_field_and_png(out, "f0", &state.f0, png)?;
    io::write_velocity(&out.join("v"), &state.v)?;
    for (i, f) in state.frames().iter().enumerate() {
        write_field_and_png(out, &format!("frame_{i}"), f, png)?;
    }
    io::write_log(&out.join("log.csv"), &result.log)?;

    let frame_errors = truth_frames
        .map(|t| t.iter().zip(state.frames()).map(|(a, b)| relative_l2(b, a)).collect::<stiflow_core::Result<Vec<_>>>())
        .transpose()?;
    let b = &state.eval.breakdown;
    let metrics = Metrics {
        config_sha256: cfg.digest(),
        phantom: cfg.phantom.clone(),
        status: result.status.name().into(),
        iterations: result.log.len() - 1,
        frame_errors,
        initial_objective,
        objective: ObjectiveSummary {
            value: b.value,
            data: b.data.clone(),
            r2: b.r2.clone(),
            tv_smoothed: b.tv_smoothed,
            tv_exact: b.tv_exact,
        },
        f0_l1: state.f0.l1_norm(),
        f0_linf: state.f0.linf_norm(),
    };
    io::write_json(&out.join("metrics.json"), &metrics)?;
    Ok(metrics)
}
