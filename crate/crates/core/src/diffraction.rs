//! Scalar diffraction by a perfectly absorbing sheet.
//!
//! The normalized field at a receiver is the free-space field minus the
//! contribution of the blocked aperture,
//!
//! ```text
//! e = 1 - (j / lambda) * Int_S  d / (r1 r2) * exp(-j k (r1 + r2 - d)) dS
//! ```
//!
//! so that an unobstructed link gives exactly `1 + 0j`. The surface integral is
//! evaluated with an adaptive tiled cubature: each tile is integrated with a
//! tensor Gauss-Legendre rule and compared against the sum over its 2x2
//! children; tiles whose difference exceeds their area share of the absolute
//! tolerance are subdivided.

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{body_sheet_for_link, build_ula, AbsorbingSheet, BodyState, Scenario, Vec3};

/// Deep-fade threshold for field magnitudes.
pub const DEEP_FADE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffractionError {
    #[error("tolerance {tolerance:e} not met at subdivision depth {depth} (estimate {estimate:e})")]
    ToleranceNotMet { tolerance: f64, depth: usize, estimate: f64 },
    #[error("link {link}: {source}")]
    Link {
        link: usize,
        #[source]
        source: Box<DiffractionError>,
    },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid integration config: {0}")]
    InvalidConfig(String),
}

/// Complex field per link, normalized to the free-space field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVector {
    values: Vec<Complex64>,
}

impl FieldVector {
    pub fn new(values: Vec<Complex64>) -> Self {
        Self { values }
    }

    /// `E_0` under the normalization: all ones.
    pub fn free_space(links: usize) -> Self {
        Self { values: vec![Complex64::new(1.0, 0.0); links] }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Per-link excess attenuation in dB.
    pub fn attenuation_db(&self) -> Vec<f64> {
        self.values.iter().map(|&e| excess_attenuation_db(e)).collect()
    }

    /// Values in reversed link order (mirror across the array center).
    pub fn reversed(&self) -> Self {
        Self { values: self.values.iter().rev().copied().collect() }
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationConfig {
    /// Absolute tolerance on the normalized field.
    pub abs_tolerance: f64,
    /// Edge length of the initial tiles in meters.
    pub initial_tile: f64,
    pub max_subdivision_depth: usize,
}

impl IntegrationConfig {
    /// Default tiling for `wavelength`: one-wavelength tiles, 12 levels.
    pub fn new(abs_tolerance: f64, wavelength: f64) -> Self {
        Self { abs_tolerance, initial_tile: wavelength, max_subdivision_depth: 12 }
    }

    pub fn validate(&self) -> Result<(), DiffractionError> {
        if !(self.abs_tolerance > 0.0) {
            return Err(DiffractionError::InvalidConfig("tolerance must be positive".into()));
        }
        if !(self.initial_tile > 0.0 && self.initial_tile.is_finite()) {
            return Err(DiffractionError::InvalidConfig("initial tile must be positive".into()));
        }
        if self.max_subdivision_depth < 1 {
            return Err(DiffractionError::InvalidConfig("depth must be at least 1".into()));
        }
        Ok(())
    }
}

// 4-point Gauss-Legendre on [-1, 1].
const GL_NODES: [f64; 4] = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
const GL_WEIGHTS: [f64; 4] = [0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9];

/// Integrand of the blocked contribution, without the `j / lambda` prefactor.
struct Kernel {
    tx: Vec3,
    rx: Vec3,
    d: f64,
    k: f64,
    origin: Vec3,
    u: Vec3,
}

impl Kernel {
    #[inline]
    fn eval(&self, a: f64, b: f64) -> Complex64 {
        let s = Vec3::new(self.origin.x + a * self.u.x, self.origin.y + a * self.u.y, self.origin.z + b);
        let r1 = s.distance(self.tx);
        let r2 = s.distance(self.rx);
        let amp = self.d / (r1 * r2);
        let (sin, cos) = (-self.k * (r1 + r2 - self.d)).sin_cos();
        Complex64::new(amp * cos, amp * sin)
    }

    /// Tensor Gauss-Legendre rule over `[a0, a1] x [b0, b1]`.
    fn rule(&self, t: &Tile) -> Complex64 {
        let (ha, hb) = ((t.a1 - t.a0) / 2.0, (t.b1 - t.b0) / 2.0);
        let (ca, cb) = ((t.a1 + t.a0) / 2.0, (t.b1 + t.b0) / 2.0);
        let mut acc = Complex64::new(0.0, 0.0);
        for (&xa, &wa) in GL_NODES.iter().zip(&GL_WEIGHTS) {
            let mut row = Complex64::new(0.0, 0.0);
            for (&xb, &wb) in GL_NODES.iter().zip(&GL_WEIGHTS) {
                row += self.eval(ca + ha * xa, cb + hb * xb) * wb;
            }
            acc += row * wa;
        }
        acc * (ha * hb)
    }
}

#[derive(Debug, Clone, Copy)]
struct Tile {
    a0: f64,
    a1: f64,
    b0: f64,
    b1: f64,
}

impl Tile {
    fn area(&self) -> f64 {
        (self.a1 - self.a0) * (self.b1 - self.b0)
    }

    fn children(&self) -> [Tile; 4] {
        let am = 0.5 * (self.a0 + self.a1);
        let bm = 0.5 * (self.b0 + self.b1);
        [
            Tile { a0: self.a0, a1: am, b0: self.b0, b1: bm },
            Tile { a0: am, a1: self.a1, b0: self.b0, b1: bm },
            Tile { a0: self.a0, a1: am, b0: bm, b1: self.b1 },
            Tile { a0: am, a1: self.a1, b0: bm, b1: self.b1 },
        ]
    }
}

/// Result of one link integration with its bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkIntegral {
    pub field: Complex64,
    /// Sum of the accepted tiles' error estimates, in field units.
    pub error_estimate: f64,
    pub tiles: usize,
}

struct Refiner<'a> {
    kernel: &'a Kernel,
    // converts integral units to field units
    scale: f64,
    max_depth: usize,
    tiles: usize,
    error: f64,
}

impl Refiner<'_> {
    fn refine(&mut self, tile: Tile, coarse: Complex64, tol: f64, depth: usize) -> Result<Complex64, DiffractionError> {
        let children = tile.children();
        let parts = children.map(|c| self.kernel.rule(&c));
        let fine = parts[0] + parts[1] + parts[2] + parts[3];
        let estimate = (fine - coarse).norm() * self.scale;
        if estimate <= tol {
            self.tiles += 1;
            self.error += estimate;
            return Ok(fine);
        }
        if depth >= self.max_depth {
            return Err(DiffractionError::ToleranceNotMet { tolerance: tol, depth, estimate });
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for (child, part) in children.iter().zip(parts) {
            acc += self.refine(*child, part, tol / 4.0, depth + 1)?;
        }
        Ok(acc)
    }
}

/// Normalized field `E_theta / E_0` for the link `tx -> rx` obstructed by `sheet`.
pub fn integrate_link(
    sheet: &AbsorbingSheet,
    tx: Vec3,
    rx: Vec3,
    wavelength: f64,
    cfg: &IntegrationConfig,
) -> Result<LinkIntegral, DiffractionError> {
    cfg.validate()?;
    let d = tx.distance(rx);
    if !(d > 0.0) {
        return Err(DiffractionError::InvalidGeometry("tx and rx coincide".into()));
    }
    if !(wavelength > 0.0) {
        return Err(DiffractionError::InvalidGeometry("wavelength must be positive".into()));
    }
    let one = Complex64::new(1.0, 0.0);
    if sheet.area() == 0.0 {
        return Ok(LinkIntegral { field: one, error_estimate: 0.0, tiles: 0 });
    }
    let on_sheet_tol = 1e-9 * (1.0 + d);
    if sheet.contains(tx, on_sheet_tol) || sheet.contains(rx, on_sheet_tol) {
        return Err(DiffractionError::InvalidGeometry("sheet contains an antenna".into()));
    }

    let u = sheet.width_axis();
    let origin = sheet.center;
    let kernel = Kernel { tx, rx, d, k: 2.0 * std::f64::consts::PI / wavelength, origin, u };
    let nx = (sheet.width / cfg.initial_tile).ceil().max(1.0) as usize;
    let ny = (sheet.height / cfg.initial_tile).ceil().max(1.0) as usize;
    let (tw, th) = (sheet.width / nx as f64, sheet.height / ny as f64);
    let (a_lo, b_lo) = (-sheet.width / 2.0, -sheet.height / 2.0);
    let tol = cfg.abs_tolerance / (nx * ny) as f64;

    let mut refiner = Refiner { kernel: &kernel, scale: 1.0 / wavelength, max_depth: cfg.max_subdivision_depth, tiles: 0, error: 0.0 };
    let mut blocked = Complex64::new(0.0, 0.0);
    for j in 0..ny {
        for i in 0..nx {
            let tile = Tile {
                a0: a_lo + i as f64 * tw,
                a1: if i + 1 == nx { -a_lo } else { a_lo + (i + 1) as f64 * tw },
                b0: b_lo + j as f64 * th,
                b1: if j + 1 == ny { -b_lo } else { b_lo + (j + 1) as f64 * th },
            };
            debug_assert!(tile.area() > 0.0);
            let coarse = kernel.rule(&tile);
            blocked += refiner.refine(tile, coarse, tol, 1)?;
        }
    }
    // e = 1 - (j / lambda) * blocked
    let field = one - Complex64::new(0.0, 1.0 / wavelength) * blocked;
    Ok(LinkIntegral { field, error_estimate: refiner.error, tiles: refiner.tiles })
}

/// Normalized field for one link; see [`integrate_link`].
pub fn normalized_field_link(
    sheet: &AbsorbingSheet,
    tx: Vec3,
    rx: Vec3,
    wavelength: f64,
    cfg: &IntegrationConfig,
) -> Result<Complex64, DiffractionError> {
    integrate_link(sheet, tx, rx, wavelength, cfg).map(|r| r.field)
}

/// Field at every array element with `body` present. Each link sees the body
/// silhouette perpendicular to its own TX -> RX line.
pub fn field_vector(body: &BodyState, scenario: &Scenario, cfg: &IntegrationConfig) -> Result<FieldVector, DiffractionError> {
    let tx = scenario.tx_position();
    let lambda = scenario.wavelength();
    build_ula(scenario)
        .into_iter()
        .enumerate()
        .map(|(link, rx)| {
            let sheet = body_sheet_for_link(body, tx, rx);
            normalized_field_link(&sheet, tx, rx, lambda, cfg)
                .map_err(|e| DiffractionError::Link { link, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(FieldVector::new)
}

/// [`field_vector`] with links evaluated concurrently. Bit-identical to the
/// sequential version.
pub fn field_vector_par(body: &BodyState, scenario: &Scenario, cfg: &IntegrationConfig) -> Result<FieldVector, DiffractionError> {
    let tx = scenario.tx_position();
    let lambda = scenario.wavelength();
    build_ula(scenario)
        .into_par_iter()
        .enumerate()
        .map(|(link, rx)| {
            let sheet = body_sheet_for_link(body, tx, rx);
            normalized_field_link(&sheet, tx, rx, lambda, cfg)
                .map_err(|e| DiffractionError::Link { link, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(FieldVector::new)
}

/// `-20 log10 |e|`; `+inf` for deep fades below [`DEEP_FADE`].
pub fn excess_attenuation_db(e: Complex64) -> f64 {
    let mag = e.norm();
    if mag < DEEP_FADE {
        f64::INFINITY
    } else {
        -20.0 * mag.log10()
    }
}
