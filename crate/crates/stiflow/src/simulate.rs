//! Synthetic tomographic data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use stiflow_core::radon::radon_forward;
use stiflow_core::transport::{solve_transport_with, Interpolation};
use stiflow_core::{AngleSchedule, ScalarField, Sinogram, VectorField};

use crate::error::{CliError, Result};

/// Exact sinograms of the transported template at every observation time.
pub fn clean_data<V: VectorField>(
    f0: &ScalarField,
    v: &V,
    schedule: &AngleSchedule,
    substeps: usize,
    interp: Interpolation,
) -> Result<(Vec<ScalarField>, Vec<Sinogram>)> {
    let tg = v.time_grid();
    let times: Vec<f64> = tg.obs_indices().iter().map(|&k| tg.time(k)).collect();
    let frames = solve_transport_with(f0, v, &times, substeps, interp)?.frames;
    let data = frames
        .iter()
        .enumerate()
        .map(|(i, f)| radon_forward(f, i, schedule))
        .collect::<stiflow_core::Result<_>>()?;
    Ok((frames, data))
}

/// Adds independent `N(0, sigma²)` draws to every bin, in observation then
/// angle then bin order.
pub fn add_noise(data: &mut [Sinogram], sigma: f64, seed: u64) -> Result<()> {
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| CliError::Config(format!("noise.sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for g in data {
        for x in &mut g.values {
            *x += normal.sample(&mut rng);
        }
    }
    Ok(())
}

pub fn simulate_data<V: VectorField>(
    f0: &ScalarField,
    v: &V,
    schedule: &AngleSchedule,
    noise_sigma: f64,
    seed: u64,
    substeps: usize,
    interp: Interpolation,
) -> Result<Vec<Sinogram>> {
    let (_, mut data) = clean_data(f0, v, schedule, substeps, interp)?;
    add_noise(&mut data, noise_sigma, seed)?;
    Ok(data)
}
