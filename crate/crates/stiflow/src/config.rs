//! Experiment configuration.
//!
//! One TOML file describes a whole run. Every key is optional; unknown
//! keys are rejected. The full schema with its defaults:
//!
//! ```toml
//! seed = 1                       # noise RNG seed
//! phantom = "translating_disk"   # translating_disk | rotating_bump | shepp_like_static
//!
//! [grid]
//! n = 64                         # pixels per axis on [-1, 1]²
//!
//! [time]
//! steps = 8                      # uniform steps on [0, 1]
//! observations = 4               # observation times, evenly spaced, last at t = 1
//!
//! [kernel]
//! control = 8                    # control points per axis
//! sigma = 0.25                   # Gaussian kernel width
//!
//! [angles]
//! per_time = 10
//! schedule = "golden"            # golden | full
//!
//! [transport]
//! interpolation = "bilinear"     # bilinear | cubic, for ground-truth frames and data
//!
//! [noise]
//! sigma = 0.0                    # std of additive Gaussian noise per bin
//!
//! [model]
//! mu1 = 5e-4                     # TV weight
//! mu2 = 1e-4                     # velocity energy weight, must be > 0
//! tv_delta = 1e-2
//! data_weight = 1.0
//! substeps = 2
//! max_outer_iters = 40
//! f0_iters = 20
//! v_iters = 3
//! tol = 1e-6
//! armijo_c = 1e-4
//! backtrack_factor = 0.5
//! max_backtracks = 30
//! f0_step = 0.5
//! v_step_speed = 0.05
//! init = "backprojection"        # backprojection | zero
//!
//! [data]
//! dir = "sim"                    # optional: read sinograms written by `simulate`
//!
//! [output]
//! dir = "out"
//! png = true
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stiflow_core::objective::Init;
use stiflow_core::transport::Interpolation;
use stiflow_core::{AngleSchedule, ImageGrid, KernelSpec, ModelConfig, PhantomId, TimeGrid};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub phantom: String,
    pub grid: GridSection,
    pub time: TimeSection,
    pub kernel: KernelSection,
    pub angles: AngleSection,
    pub transport: TransportSection,
    pub noise: NoiseSection,
    pub model: ModelSection,
    pub data: DataSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSection {
    pub steps: usize,
    pub observations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub control: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Golden,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AngleSection {
    pub per_time: usize,
    pub schedule: ScheduleKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpolationKind {
    Bilinear,
    Cubic,
}

/// How the ground truth is transported. Reconstruction always uses the
/// bilinear model, so `cubic` also keeps simulated data from being
/// produced by the very operator that inverts it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportSection {
    pub interpolation: InterpolationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Backprojection,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub mu1: f64,
    pub mu2: f64,
    pub tv_delta: f64,
    pub data_weight: f64,
    pub substeps: usize,
    pub max_outer_iters: usize,
    pub f0_iters: usize,
    pub v_iters: usize,
    pub tol: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    pub f0_step: f64,
    pub v_step_speed: f64,
    pub init: InitKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub png: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            phantom: PhantomId::TranslatingDisk.name().into(),
            grid: GridSection { n: 64 },
            time: TimeSection { steps: 8, observations: 4 },
            kernel: KernelSection { control: 8, sigma: 0.25 },
            angles: AngleSection {
                per_time: 10,
                schedule: ScheduleKind::Golden,
            },
            transport: TransportSection {
                interpolation: InterpolationKind::Bilinear,
            },
            noise: NoiseSection { sigma: 0.0 },
            model: ModelSection::default(),
            data: DataSection::default(),
            output: OutputSection {
                dir: PathBuf::from("out"),
                png: true,
            },
        }
    }
}

impl Default for GridSection {
    fn default() -> Self {
        ExperimentConfig::default().grid
    }
}

impl Default for TimeSection {
    fn default() -> Self {
        ExperimentConfig::default().time
    }
}

impl Default for KernelSection {
    fn default() -> Self {
        ExperimentConfig::default().kernel
    }
}

impl Default for AngleSection {
    fn default() -> Self {
        ExperimentConfig::default().angles
    }
}

impl Default for TransportSection {
    fn default() -> Self {
        ExperimentConfig::default().transport
    }
}

impl Default for NoiseSection {
    fn default() -> Self {
        ExperimentConfig::default().noise
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        ExperimentConfig::default().output
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            mu1: m.mu1,
            mu2: m.mu2,
            tv_delta: m.tv_delta,
            data_weight: m.data_weight,
            substeps: m.substeps,
            max_outer_iters: m.max_outer_iters,
            f0_iters: m.f0_iters,
            v_iters: m.v_iters,
            tol: m.tol,
            armijo_c: m.armijo_c,
            backtrack_factor: m.backtrack_factor,
            max_backtracks: m.max_backtracks,
            f0_step: m.f0_step,
            v_step_speed: m.v_step_speed,
            init: match m.init {
                Init::BackProjection => InitKind::Backprojection,
                Init::Zero => InitKind::Zero,
            },
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self) -> ModelConfig {
        ModelConfig {
            mu1: self.mu1,
            mu2: self.mu2,
            tv_delta: self.tv_delta,
            data_weight: self.data_weight,
            substeps: self.substeps,
            max_outer_iters: self.max_outer_iters,
            f0_iters: self.f0_iters,
            v_iters: self.v_iters,
            tol: self.tol,
            armijo_c: self.armijo_c,
            backtrack_factor: self.backtrack_factor,
            max_backtracks: self.max_backtracks,
            f0_step: self.f0_step,
            v_step_speed: self.v_step_speed,
            init: match self.init {
                InitKind::Backprojection => Init::BackProjection,
                InitKind::Zero => Init::Zero,
            },
        }
    }
}

/// Core objects built from a validated configuration.
#[derive(Debug, Clone)]
pub struct Setup {
    pub phantom: PhantomId,
    pub grid: ImageGrid,
    pub time_grid: TimeGrid,
    pub spec: KernelSpec,
    pub schedule: AngleSchedule,
    pub interpolation: Interpolation,
    pub model: ModelConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, as lowercase hex. The
    /// `[output]` section does not enter it: where results go does not
    /// change them.
    pub fn digest(&self) -> String {
        let canonical = Self {
            output: OutputSection::default(),
            ..self.clone()
        };
        let d = Sha256::digest(canonical.to_toml().as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checks every rule and builds the core objects; nothing is computed
    /// before this succeeds.
    pub fn validate(&self) -> Result<Setup> {
        let cfg = |m: &str| CliError::Config(m.to_string());
        let phantom: PhantomId = self.phantom.parse()?;
        if self.grid.n < 8 {
            return Err(cfg("grid.n must be at least 8"));
        }
        if !(self.noise.sigma >= 0.0 && self.noise.sigma.is_finite()) {
            return Err(cfg("noise.sigma must be nonnegative"));
        }
        if self.angles.per_time == 0 {
            return Err(cfg("angles.per_time must be positive"));
        }
        let grid = ImageGrid::square(self.grid.n)?;
        let time_grid = TimeGrid::uniform_observations(self.time.steps, self.time.observations)?;
        let spec = KernelSpec::new(grid, self.kernel.control, self.kernel.control, self.kernel.sigma)?;
        let n_obs = time_grid.n_obs();
        let schedule = match self.angles.schedule {
            ScheduleKind::Golden => AngleSchedule::golden(n_obs, self.angles.per_time, &grid)?,
            ScheduleKind::Full => AngleSchedule::full(n_obs, self.angles.per_time, &grid)?,
        };
        let model = self.model.to_model_config();
        model.validate()?;
        let interpolation = match self.transport.interpolation {
            InterpolationKind::Bilinear => Interpolation::Bilinear,
            InterpolationKind::Cubic => Interpolation::Cubic,
        };
        Ok(Setup {
            phantom,
            grid,
            time_grid,
            spec,
            schedule,
            interpolation,
            model,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = ExperimentConfig::default();
        c.model.mu1 = 3e-3;
        c.data.dir = Some("sim".into());
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
    }

    #[test]
    fn digest_ignores_output_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output.dir = "elsewhere".into();
        b.output.png = false;
        assert_eq!(a.digest(), b.digest());
        b.seed = 2;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(ExperimentConfig::from_toml("sede = 3"), Err(CliError::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml("[model]\nmu3 = 1.0"), Err(CliError::Config(_))));
    }

    #[test]
    fn zero_mu2_rejected() {
        let c = ExperimentConfig::from_toml("[model]\nmu2 = 0.0").unwrap();
        let e = c.validate().unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn bad_phantom_rejected() {
        let c = ExperimentConfig::from_toml("phantom = \"heart\"").unwrap();
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
    }
}
