//! File formats.
//!
//! Arrays are stored as little-endian `f32` in `<stem>.f32` with a JSON
//! sidecar `<stem>.json` describing the shape and geometry. PNG previews are
//! 8-bit grayscale, min-max normalized, with the normalization written to
//! `<stem>.png.json`. The iteration log is CSV.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stiflow_core::velocity::BoundaryWindow;
use stiflow_core::{AngleSchedule, ImageGrid, KernelSpec, LogRecord, ScalarField, Sinogram, TimeGrid, VelocityField};

use crate::error::{CliError, Result};

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_bytes(path)?).map_err(|e| CliError::format(path, e))
}

fn write_f32(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(|x| (x as f32).to_le_bytes()).collect();
    write_bytes(path, &bytes)
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = read_bytes(path)?;
    if bytes.len() != 4 * expected {
        return Err(CliError::format(
            path,
            format!("expected {expected} f32 values, found {} bytes", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridHeader {
    pub nx: usize,
    pub ny: usize,
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl From<&ImageGrid> for GridHeader {
    fn from(g: &ImageGrid) -> Self {
        Self {
            nx: g.nx,
            ny: g.ny,
            x: [g.x_min, g.x_max],
            y: [g.y_min, g.y_max],
        }
    }
}

impl GridHeader {
    pub fn grid(&self) -> stiflow_core::Result<ImageGrid> {
        ImageGrid::new(self.nx, self.ny, self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Header {
    /// Row-major samples, `y` outer.
    ScalarField { grid: GridHeader },
    /// Coefficients ordered step, control point (row-major), component.
    VelocityField {
        grid: GridHeader,
        control: [usize; 2],
        sigma: f64,
        window_band: f64,
        window_ramp_end: f64,
        steps: usize,
        obs_indices: Vec<usize>,
    },
    /// Values ordered angle-major.
    Sinogram {
        obs_index: usize,
        angles: Vec<f64>,
        n_det: usize,
        det_spacing: f64,
    },
}

fn read_header(stem: &Path) -> Result<Header> {
    read_json(&with_ext(stem, "json"))
}

pub fn write_field(stem: &Path, f: &ScalarField) -> Result<()> {
    write_json(&with_ext(stem, "json"), &Header::ScalarField { grid: f.grid().into() })?;
    write_f32(&with_ext(stem, "f32"), f.values().iter().copied())
}

pub fn read_field(stem: &Path) -> Result<ScalarField> {
    let Header::ScalarField { grid } = read_header(stem)? else {
        return Err(CliError::format(with_ext(stem, "json"), "not a scalar field"));
    };
    let grid = grid.grid()?;
    let values = read_f32(&with_ext(stem, "f32"), grid.len())?;
    Ok(ScalarField::from_values(grid, values)?)
}

pub fn write_velocity(stem: &Path, v: &VelocityField) -> Result<()> {
    let spec = v.spec();
    let tg = stiflow_core::VectorField::time_grid(v);
    let c = spec.control_grid();
    let header = Header::VelocityField {
        grid: spec.image_grid().into(),
        control: [c.nx, c.ny],
        sigma: spec.sigma(),
        window_band: spec.window().band(),
        window_ramp_end: spec.window().ramp_end(),
        steps: tg.steps(),
        obs_indices: tg.obs_indices().to_vec(),
    };
    write_json(&with_ext(stem, "json"), &header)?;
    write_f32(&with_ext(stem, "f32"), v.coefficients().iter().flat_map(|a| a.iter().copied()))
}

pub fn read_velocity(stem: &Path) -> Result<VelocityField> {
    let Header::VelocityField {
        grid,
        control,
        sigma,
        window_band,
        window_ramp_end,
        steps,
        obs_indices,
    } = read_header(stem)?
    else {
        return Err(CliError::format(with_ext(stem, "json"), "not a velocity field"));
    };
    let grid = grid.grid()?;
    let window = BoundaryWindow::new(&grid, window_band, window_ramp_end)?;
    let spec = KernelSpec::with_window(grid, control[0], control[1], sigma, window)?;
    let tg = TimeGrid::new(steps, obs_indices)?;
    let n = steps * spec.n_control();
    let flat = read_f32(&with_ext(stem, "f32"), 2 * n)?;
    let alpha = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    Ok(VelocityField::from_coefficients(spec, tg, alpha)?)
}

pub fn write_sinogram(stem: &Path, g: &Sinogram) -> Result<()> {
    let header = Header::Sinogram {
        obs_index: g.obs_index,
        angles: g.angles.clone(),
        n_det: g.n_det,
        det_spacing: g.det_spacing,
    };
    write_json(&with_ext(stem, "json"), &header)?;
    write_f32(&with_ext(stem, "f32"), g.values.iter().copied())
}

pub fn read_sinogram(stem: &Path) -> Result<Sinogram> {
    let Header::Sinogram {
        obs_index,
        angles,
        n_det,
        det_spacing,
    } = read_header(stem)?
    else {
        return Err(CliError::format(with_ext(stem, "json"), "not a sinogram"));
    };
    let values = read_f32(&with_ext(stem, "f32"), angles.len() * n_det)?;
    Ok(Sinogram {
        obs_index,
        angles,
        n_det,
        det_spacing,
        values,
    })
}

/// Sinograms `sinogram_0 …` from a directory, with the schedule they imply.
pub fn read_sinograms(dir: &Path, n_obs: usize, grid: &ImageGrid) -> Result<(AngleSchedule, Vec<Sinogram>)> {
    let data: Vec<Sinogram> = (0..n_obs)
        .map(|i| read_sinogram(&dir.join(format!("sinogram_{i}"))))
        .collect::<Result<_>>()?;
    let Some(first) = data.first() else {
        return Err(CliError::Config("no observation times".into()));
    };
    for (i, g) in data.iter().enumerate() {
        if g.obs_index != i || g.n_det != first.n_det || g.det_spacing != first.det_spacing {
            return Err(CliError::format(dir, format!("sinogram_{i} does not match sinogram_0")));
        }
    }
    let angles = data.iter().map(|g| g.angles.clone()).collect();
    let schedule = AngleSchedule::new(angles, first.n_det, first.det_spacing, grid)?;
    Ok((schedule, data))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PngNormalization {
    pub width: usize,
    pub height: usize,
    /// Value mapped to 0.
    pub min: f64,
    /// Value mapped to 255.
    pub max: f64,
}

/// Grayscale preview; the top image row is the largest `y`.
pub fn write_png(path: &Path, f: &ScalarField) -> Result<()> {
    let g = f.grid();
    let (lo, hi) = (f.min(), f.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut pixels = Vec::with_capacity(g.len());
    for j in (0..g.ny).rev() {
        for i in 0..g.nx {
            let u = ((f.at(i, j) - lo) / span * 255.0).round();
            pixels.push(u.clamp(0.0, 255.0) as u8);
        }
    }
    let img = image::GrayImage::from_raw(g.nx as u32, g.ny as u32, pixels).expect("buffer matches size");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| CliError::format(path, e))?;
    let norm = PngNormalization {
        width: g.nx,
        height: g.ny,
        min: lo,
        max: lo + span,
    };
    write_json(&with_ext(path, "json"), &norm)
}

/// Inverse of [`write_png`] up to 8-bit quantization, on `[-1, 1]²`.
pub fn read_png(path: &Path) -> Result<ScalarField> {
    let norm: PngNormalization = read_json(&with_ext(path, "json"))?;
    let img = image::open(path).map_err(|e| CliError::format(path, e))?.into_luma8();
    if img.width() as usize != norm.width || img.height() as usize != norm.height {
        return Err(CliError::format(path, "size differs from its sidecar"));
    }
    let grid = ImageGrid::new(norm.width, norm.height, [-1.0, 1.0], [-1.0, 1.0])?;
    let mut values = vec![0.0; grid.len()];
    for (x, y, p) in img.enumerate_pixels() {
        let j = norm.height - 1 - y as usize;
        values[grid.index(x as usize, j)] = norm.min + p.0[0] as f64 / 255.0 * (norm.max - norm.min);
    }
    Ok(ScalarField::from_values(grid, values)?)
}

/// A parsed log row.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    /// The numeric columns in header order.
    pub values: [f64; 9],
    pub status: String,
}

pub fn write_log(path: &Path, log: &[LogRecord]) -> Result<()> {
    let mut out = LogRecord::COLUMNS.join(",");
    out.push('\n');
    for r in log {
        let nums = [
            r.objective,
            r.data,
            r.r1_exact_tv,
            r.r1_smoothed,
            r.r2,
            r.f0_l1,
            r.f0_linf,
            r.step_f0,
            r.step_v,
        ];
        out.push_str(&r.iter.to_string());
        for x in nums {
            out.push_str(&format!(",{x:e}"));
        }
        out.push(',');
        out.push_str(r.status);
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let text = String::from_utf8(read_bytes(path)?).map_err(|e| CliError::format(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(LogRecord::COLUMNS.join(",").as_str()) {
        return Err(CliError::format(path, "unexpected header"));
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let bad = || CliError::format(path, format!("malformed row {}", k + 1));
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != LogRecord::COLUMNS.len() {
                return Err(bad());
            }
            let iter = cells[0].parse().map_err(|_| bad())?;
            let mut values = [0.0; 9];
            for (v, c) in values.iter_mut().zip(&cells[1..10]) {
                *v = c.parse().map_err(|_| bad())?;
            }
            Ok(LogRow {
                iter,
                values,
                status: cells[10].to_string(),
            })
        })
        .collect()
}
