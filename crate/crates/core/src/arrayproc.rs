//! Conventional ULA beamforming over normalized field vectors.
//!
//! Element `m` of the steering vector (`m = -M..=M`) is
//! `exp(-j k m spacing cos(gamma)) / sqrt(L)`. The excess response applies its
//! Hermitian to the elementwise ratio `E_0 / E_theta`, which under the field
//! normalization is simply `1 / e_l`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::diffraction::{FieldVector, DEEP_FADE};
use crate::geometry::Scenario;
use crate::rng::{self, Domain};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArrayError {
    #[error("length mismatch: expected {expected} links, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("deep fade on link {link}: |e| below {DEEP_FADE:e}")]
    DivisionGuard { link: usize },
    #[error("FFT size {n_fft} smaller than array length {links}")]
    FftTooShort { n_fft: usize, links: usize },
    #[error("direction {0} outside [0, pi]")]
    InvalidDirection(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteeringConfig {
    pub num_antennas: usize,
    pub spacing: f64,
    pub wavelength: f64,
}

impl SteeringConfig {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self { num_antennas: s.num_antennas(), spacing: s.antenna_spacing(), wavelength: s.wavelength() }
    }

    fn half_aperture(&self) -> isize {
        (self.num_antennas / 2) as isize
    }

    fn check_len(&self, got: usize) -> Result<(), ArrayError> {
        if got != self.num_antennas {
            return Err(ArrayError::LengthMismatch { expected: self.num_antennas, got });
        }
        Ok(())
    }
}

/// Receiver noise with per-element variance `variance` (relative to the unit
/// free-space field).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub variance: f64,
    pub rng_seed: u64,
}

impl NoiseSpec {
    pub fn silent() -> Self {
        Self { variance: 0.0, rng_seed: 0 }
    }
}

/// DoA scan of the excess response on an ascending `gamma` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayResponse {
    pub gamma_grid: Vec<f64>,
    pub response: Vec<Complex64>,
    /// `20 log10 |F|` per grid point.
    pub attenuation_db: Vec<f64>,
    pub gamma_max: f64,
    pub max_index: usize,
}

impl ArrayResponse {
    fn from_grid(gamma_grid: Vec<f64>, response: Vec<Complex64>) -> Self {
        let attenuation_db = response.iter().map(|f| 20.0 * f.norm().log10()).collect();
        let max_index = argmax_first(response.iter().map(|f| f.norm()));
        Self { gamma_max: gamma_grid[max_index], gamma_grid, response, attenuation_db, max_index }
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax_first(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn steering_vector(gamma: f64, cfg: &SteeringConfig) -> Vec<Complex64> {
    let m_half = cfg.half_aperture();
    let k = 2.0 * std::f64::consts::PI / cfg.wavelength;
    let norm = 1.0 / (cfg.num_antennas as f64).sqrt();
    (-m_half..=m_half)
        .map(|m| Complex64::from_polar(norm, -k * m as f64 * cfg.spacing * gamma.cos()))
        .collect()
}

fn check_gamma(gamma: f64) -> Result<(), ArrayError> {
    if !(0.0..=std::f64::consts::PI).contains(&gamma) {
        return Err(ArrayError::InvalidDirection(gamma));
    }
    Ok(())
}

/// `w(gamma)^H (E + n)` with complex Gaussian noise drawn from `noise.rng_seed`.
pub fn beamform(fields: &FieldVector, gamma: f64, noise: &NoiseSpec, cfg: &SteeringConfig) -> Result<Complex64, ArrayError> {
    cfg.check_len(fields.len())?;
    check_gamma(gamma)?;
    let w = steering_vector(gamma, cfg);
    let sigma = (noise.variance / 2.0).sqrt();
    let mut rng = rng::stream(noise.rng_seed, Domain::Noise, 0);
    let mut acc = Complex64::new(0.0, 0.0);
    for (wm, e) in w.iter().zip(fields.values()) {
        let n = if noise.variance > 0.0 {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(sigma * re, sigma * im)
        } else {
            Complex64::new(0.0, 0.0)
        };
        acc += wm.conj() * (e + n);
    }
    Ok(acc)
}

/// Elementwise `E_0 / E_theta`.
pub fn field_ratio(fields: &FieldVector) -> Result<Vec<Complex64>, ArrayError> {
    fields
        .values()
        .iter()
        .enumerate()
        .map(|(link, e)| if e.norm() < DEEP_FADE { Err(ArrayError::DivisionGuard { link }) } else { Ok(e.inv()) })
        .collect()
}

/// Body-induced excess response `F(gamma) = w(gamma)^H (E_0 / E_theta)`.
pub fn excess_response(fields: &FieldVector, gamma: f64, cfg: &SteeringConfig) -> Result<Complex64, ArrayError> {
    cfg.check_len(fields.len())?;
    check_gamma(gamma)?;
    let ratio = field_ratio(fields)?;
    Ok(steering_vector(gamma, cfg).iter().zip(&ratio).map(|(w, r)| w.conj() * r).sum())
}

/// Excess response over the FFT grid. Bin `b` has spatial frequency
/// `u = b / n_fft` wrapped to `[-1/2, 1/2)` and maps to
/// `gamma = arccos(u lambda / spacing)`; bins outside the visible region are
/// dropped. The grid is returned in ascending `gamma`.
pub fn doa_spectrum(fields: &FieldVector, cfg: &SteeringConfig, n_fft: usize) -> Result<ArrayResponse, ArrayError> {
    cfg.check_len(fields.len())?;
    if n_fft < cfg.num_antennas {
        return Err(ArrayError::FftTooShort { n_fft, links: cfg.num_antennas });
    }
    let ratio = field_ratio(fields)?;
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    buf[..ratio.len()].copy_from_slice(&ratio);
    // unnormalized inverse transform: sum_n x[n] exp(+j 2 pi n b / N)
    FftPlanner::new().plan_fft_inverse(n_fft).process(&mut buf);

    let m_half = cfg.half_aperture() as f64;
    let norm = 1.0 / (cfg.num_antennas as f64).sqrt();
    let mut bins: Vec<(f64, Complex64)> = buf
        .iter()
        .enumerate()
        .filter_map(|(b, x)| {
            let mut u = b as f64 / n_fft as f64;
            if u >= 0.5 {
                u -= 1.0;
            }
            let c = u * cfg.wavelength / cfg.spacing;
            if !(-1.0..=1.0).contains(&c) {
                return None;
            }
            // shift the phase reference from element -M to the array center
            let f = x * Complex64::from_polar(norm, -2.0 * std::f64::consts::PI * m_half * u);
            Some((c.acos(), f))
        })
        .collect();
    bins.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (grid, response) = bins.into_iter().unzip();
    Ok(ArrayResponse::from_grid(grid, response))
}
