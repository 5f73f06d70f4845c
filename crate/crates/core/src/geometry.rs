//! Scenario geometry: the transmitter, the receive ULA, the body feature vector
//! and the absorbing sheet that stands in for the body.
//!
//! Frame: TX at `(0, 0, h)`, line of sight along `+x`, array axis along `+y`,
//! ground plane at `z = 0`.

use std::f64::consts::FRAC_PI_2;
use std::ops::{Add, Mul, Neg, Sub};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Domain};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid body state: {0}")]
    InvalidBody(String),
    #[error("invalid sheet: {0}")]
    InvalidSheet(String),
    #[error("invalid perturbation spec: {0}")]
    InvalidPerturbation(String),
    #[error("scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    /// Projection onto the ground plane.
    pub fn horizontal(self) -> Vec3 {
        Vec3::new(self.x, self.y, 0.0)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(v: [f64; 3]) -> Self {
        Vec3::new(v[0], v[1], v[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// TX, receive ULA and carrier. Both ends sit at the same link height.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    tx_position: Vec3,
    array_center: Vec3,
    array_axis: Vec3,
    num_antennas: usize,
    antenna_spacing: f64,
    carrier_frequency: f64,
}

impl Scenario {
    pub fn new(
        tx_position: Vec3,
        array_center: Vec3,
        array_axis: Vec3,
        num_antennas: usize,
        antenna_spacing: f64,
        carrier_frequency: f64,
    ) -> Result<Self, GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidScenario(m.to_string()));
        if !tx_position.is_finite() || !array_center.is_finite() || !array_axis.is_finite() {
            return bad("positions must be finite");
        }
        if num_antennas % 2 != 1 {
            return bad("number of antennas must be a positive odd integer");
        }
        if !(antenna_spacing > 0.0 && antenna_spacing.is_finite()) {
            return bad("antenna spacing must be positive");
        }
        if !(carrier_frequency > 0.0 && carrier_frequency.is_finite()) {
            return bad("carrier frequency must be positive");
        }
        if (tx_position.z - array_center.z).abs() > 1e-12 {
            return bad("tx and array center must share the link height");
        }
        let axis_norm = array_axis.norm();
        if !(axis_norm > 0.0) {
            return bad("array axis must be non-zero");
        }
        let array_axis = array_axis * (1.0 / axis_norm);
        if array_axis.z.abs() > 1e-12 {
            return bad("array axis must be horizontal");
        }
        if tx_position.distance(array_center) <= 0.0 {
            return bad("tx and array center coincide");
        }
        Ok(Self {
            tx_position,
            array_center,
            array_axis,
            num_antennas,
            antenna_spacing,
            carrier_frequency,
        })
    }

    /// Builds a scenario with spacing given in wavelengths.
    pub fn with_spacing_in_wavelengths(
        tx_position: Vec3,
        array_center: Vec3,
        array_axis: Vec3,
        num_antennas: usize,
        spacing_over_lambda: f64,
        carrier_frequency: f64,
    ) -> Result<Self, GeometryError> {
        let lambda = SPEED_OF_LIGHT / carrier_frequency;
        Self::new(
            tx_position,
            array_center,
            array_axis,
            num_antennas,
            spacing_over_lambda * lambda,
            carrier_frequency,
        )
    }

    /// 2.4 GHz link of 4 m at 0.99 m height, received by a 9-element
    /// half-wavelength ULA perpendicular to the line of sight.
    pub fn reference() -> Self {
        Self::with_reference_links(9)
    }

    /// The reference geometry with a different (odd) number of antennas.
    pub fn with_reference_links(num_antennas: usize) -> Self {
        let h = 0.99;
        Self::with_spacing_in_wavelengths(
            Vec3::new(0.0, 0.0, h),
            Vec3::new(4.0, 0.0, h),
            Vec3::new(0.0, 1.0, 0.0),
            num_antennas,
            0.5,
            2.4e9,
        )
        .expect("reference scenario is valid")
    }

    pub fn tx_position(&self) -> Vec3 {
        self.tx_position
    }
    pub fn array_center(&self) -> Vec3 {
        self.array_center
    }
    pub fn array_axis(&self) -> Vec3 {
        self.array_axis
    }
    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }
    /// `M` with `L = 2M + 1`.
    pub fn half_aperture(&self) -> usize {
        self.num_antennas / 2
    }
    pub fn antenna_spacing(&self) -> f64 {
        self.antenna_spacing
    }
    pub fn carrier_frequency(&self) -> f64 {
        self.carrier_frequency
    }
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }
    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength()
    }
    pub fn link_height(&self) -> f64 {
        self.tx_position.z
    }
    /// TX to central-antenna distance `d`.
    pub fn link_distance(&self) -> f64 {
        self.tx_position.distance(self.array_center)
    }

    /// Horizontal unit vector from TX towards the array center.
    pub fn los_direction(&self) -> Vec3 {
        (self.array_center - self.tx_position).horizontal().normalized()
    }

    pub fn antenna(&self, m: isize) -> Vec3 {
        self.array_center + self.array_axis * (m as f64 * self.antenna_spacing)
    }
}

/// Antenna positions ordered `m = -M..=M`; index `M` is the array center.
pub fn build_ula(scenario: &Scenario) -> Vec<Vec3> {
    let m = scenario.half_aperture() as isize;
    (-m..=m).map(|i| scenario.antenna(i)).collect()
}

/// Body feature vector `[p, phi, h_S, w_S1, w_S2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyState {
    /// Ground-plane point (`z = 0`).
    pub position: Vec3,
    /// Orientation against the line-of-sight azimuth, in `[-pi/2, pi/2]`.
    pub orientation: f64,
    pub height: f64,
    pub width_max: f64,
    pub width_min: f64,
}

impl BodyState {
    pub fn new(
        x: f64,
        y: f64,
        orientation: f64,
        height: f64,
        width_max: f64,
        width_min: f64,
    ) -> Result<Self, GeometryError> {
        let body = Self {
            position: Vec3::new(x, y, 0.0),
            orientation,
            height,
            width_max,
            width_min,
        };
        body.validate()?;
        Ok(body)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidBody(m.to_string()));
        if !self.position.is_finite() || self.position.z != 0.0 {
            return bad("position must be a finite ground-plane point");
        }
        if !(-FRAC_PI_2..=FRAC_PI_2).contains(&self.orientation) {
            return bad("orientation must lie in [-pi/2, pi/2]");
        }
        if !(self.height > 0.0 && self.height.is_finite()) {
            return bad("height must be positive");
        }
        if !(self.width_min > 0.0 && self.width_min <= self.width_max && self.width_max.is_finite()) {
            return bad("widths must satisfy 0 < w_min <= w_max");
        }
        Ok(())
    }

    /// Features in condition order `x, y, phi, h_S, w_S1, w_S2`.
    pub fn features(&self) -> [f64; 6] {
        [
            self.position.x,
            self.position.y,
            self.orientation,
            self.height,
            self.width_max,
            self.width_min,
        ]
    }

    pub fn from_features(f: [f64; 6]) -> Result<Self, GeometryError> {
        Self::new(f[0], f[1], f[2], f[3], f[4], f[5])
    }

    /// Silhouette width of a rectangular footprint rotated by `phi`.
    pub fn projected_width(&self) -> f64 {
        self.width_max * self.orientation.cos().abs() + self.width_min * self.orientation.sin().abs()
    }

    /// The same body mirrored across the line-of-sight plane `y = 0`.
    pub fn mirrored(&self) -> Self {
        Self {
            position: Vec3::new(self.position.x, -self.position.y, 0.0),
            orientation: -self.orientation,
            ..*self
        }
    }
}

/// Vertical, perfectly absorbing rectangle. A zero-area sheet is an empty
/// obstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsorbingSheet {
    pub center: Vec3,
    pub normal: Vec3,
    pub width: f64,
    pub height: f64,
}

impl AbsorbingSheet {
    pub fn new(center: Vec3, normal: Vec3, width: f64, height: f64) -> Result<Self, GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidSheet(m.to_string()));
        if !center.is_finite() || !normal.is_finite() {
            return bad("center and normal must be finite");
        }
        let n = normal.horizontal();
        if n.norm() == 0.0 || normal.z.abs() > 1e-12 * normal.norm() {
            return bad("normal must be horizontal and non-zero");
        }
        if !(width >= 0.0 && height >= 0.0 && width.is_finite() && height.is_finite()) {
            return bad("width and height must be non-negative");
        }
        Ok(Self { center, normal: n.normalized(), width, height })
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Horizontal in-plane unit vector (`z x normal`).
    pub fn width_axis(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, 1.0).cross(self.normal).normalized()
    }

    /// Point at in-plane offsets `(a, b)` from the center along width and height.
    pub fn point(&self, a: f64, b: f64) -> Vec3 {
        let u = self.width_axis();
        Vec3::new(self.center.x + a * u.x, self.center.y + a * u.y, self.center.z + b)
    }

    /// True when `p` lies on the sheet surface (within `tol` of its plane).
    pub fn contains(&self, p: Vec3, tol: f64) -> bool {
        let rel = p - self.center;
        rel.dot(self.normal).abs() <= tol
            && rel.dot(self.width_axis()).abs() <= self.width / 2.0 + tol
            && rel.z.abs() <= self.height / 2.0 + tol
    }
}

/// Ground-standing sheet for `body`, facing `toward` in azimuth.
pub fn body_sheet_facing(body: &BodyState, normal: Vec3) -> AbsorbingSheet {
    AbsorbingSheet::new(
        Vec3::new(body.position.x, body.position.y, body.height / 2.0),
        normal,
        body.projected_width(),
        body.height,
    )
    .expect("validated body yields a valid sheet")
}

/// Sheet for `body`, its normal along the body to array-center azimuth.
pub fn body_to_sheet(body: &BodyState, scenario: &Scenario) -> AbsorbingSheet {
    let to_array = (scenario.array_center() - body.position).horizontal();
    let normal = if to_array.norm() > 1e-12 { to_array } else { scenario.los_direction() };
    body_sheet_facing(body, normal)
}

/// Sheet for `body` as seen by one link: the silhouette is placed in the
/// vertical plane through the body perpendicular to the TX to `rx` line.
pub fn body_sheet_for_link(body: &BodyState, tx: Vec3, rx: Vec3) -> AbsorbingSheet {
    body_sheet_facing(body, (rx - tx).horizontal())
}

/// Uncertainty model around a nominal body state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    pub position_radius: f64,
    pub orientation_sigma: f64,
    pub rng_seed: u64,
}

impl PerturbationSpec {
    pub fn new(position_radius: f64, orientation_sigma: f64, rng_seed: u64) -> Result<Self, GeometryError> {
        if !(position_radius >= 0.0 && position_radius.is_finite()) {
            return Err(GeometryError::InvalidPerturbation("position radius must be >= 0".into()));
        }
        if !(orientation_sigma >= 0.0 && orientation_sigma.is_finite()) {
            return Err(GeometryError::InvalidPerturbation("orientation sigma must be >= 0".into()));
        }
        Ok(Self { position_radius, orientation_sigma, rng_seed })
    }

    /// 5 cm positional jitter, 5 degree orientation jitter.
    pub fn small_movements(rng_seed: u64) -> Self {
        Self { position_radius: 0.05, orientation_sigma: 5f64.to_radians(), rng_seed }
    }
}

/// Draw number `index` from `p(theta | theta_k)`: uniform disc for the position,
/// clamped Gaussian for the orientation. Sizes are kept.
pub fn sample_perturbed_state(nominal: &BodyState, spec: &PerturbationSpec, index: u64) -> BodyState {
    let mut rng = rng::stream(spec.rng_seed, Domain::Perturbation, index);
    let u: f64 = rng.random();
    let angle: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let gauss: f64 = rng.sample(StandardNormal);
    let r = spec.position_radius * u.sqrt();
    BodyState {
        position: Vec3::new(
            nominal.position.x + r * angle.cos(),
            nominal.position.y + r * angle.sin(),
            0.0,
        ),
        orientation: (nominal.orientation + spec.orientation_sigma * gauss).clamp(-FRAC_PI_2, FRAC_PI_2),
        ..*nominal
    }
}

/// First Fresnel ellipsoid of the central link: excess path at most `lambda / 2`.
pub fn first_fresnel_contains(point: Vec3, scenario: &Scenario) -> bool {
    let tx = scenario.tx_position();
    let rx = scenario.array_center();
    tx.distance(point) + point.distance(rx) <= scenario.link_distance() + scenario.wavelength() / 2.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BodyDoc {
    pub p: [f64; 2],
    pub phi: f64,
    pub hs: f64,
    pub ws1: f64,
    pub ws2: f64,
}

/// On-disk scenario description (JSON).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioDoc {
    pub tx: [f64; 3],
    pub array_center: [f64; 3],
    pub array_axis: [f64; 3],
    #[serde(rename = "L")]
    pub num_antennas: usize,
    pub spacing_over_lambda: f64,
    pub fc_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<BodyDoc>,
}

impl ScenarioDoc {
    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GeometryError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_parts(scenario: &Scenario, body: Option<&BodyState>) -> Self {
        Self {
            tx: scenario.tx_position().into(),
            array_center: scenario.array_center().into(),
            array_axis: scenario.array_axis().into(),
            num_antennas: scenario.num_antennas(),
            spacing_over_lambda: scenario.antenna_spacing() / scenario.wavelength(),
            fc_hz: scenario.carrier_frequency(),
            body: body.map(|b| BodyDoc {
                p: [b.position.x, b.position.y],
                phi: b.orientation,
                hs: b.height,
                ws1: b.width_max,
                ws2: b.width_min,
            }),
        }
    }

    pub fn scenario(&self) -> Result<Scenario, GeometryError> {
        Scenario::with_spacing_in_wavelengths(
            self.tx.into(),
            self.array_center.into(),
            self.array_axis.into(),
            self.num_antennas,
            self.spacing_over_lambda,
            self.fc_hz,
        )
    }

    pub fn body(&self) -> Result<Option<BodyState>, GeometryError> {
        self.body
            .as_ref()
            .map(|b| BodyState::new(b.p[0], b.p[1], b.phi, b.hs, b.ws1, b.ws2))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fig3_body(y: f64) -> BodyState {
        BodyState::new(2.0, y, 0.0, 1.65, 0.55, 0.25).unwrap()
    }

    #[test]
    fn reference_wavelength() {
        let s = Scenario::reference();
        assert!((s.wavelength() - SPEED_OF_LIGHT / 2.4e9).abs() / s.wavelength() < 1e-12);
        assert!((s.link_distance() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn ula_reference_endpoints() {
        let s = Scenario::reference();
        let ula = build_ula(&s);
        assert_eq!(ula.len(), 9);
        let half = s.wavelength() / 2.0;
        assert!((ula[0].y + 4.0 * half).abs() < 1e-15);
        assert!((ula[8].y - 4.0 * half).abs() < 1e-15);
        assert!((ula[0].y + 0.2498).abs() < 1e-3);
        assert_eq!(ula[4], s.array_center());
        assert!(ula.iter().all(|p| p.x == 4.0 && p.z == 0.99));
    }

    #[test]
    fn ula_degenerate_and_unit() {
        let one = Scenario::new(Vec3::new(0.0, 0.0, 1.0), Vec3::new(3.0, 1.0, 1.0), Vec3::new(0.0, 1.0, 0.0), 1, 0.1, 1e9).unwrap();
        assert_eq!(build_ula(&one), vec![one.array_center()]);
        let three = Scenario::new(Vec3::new(-1.0, 0.0, 0.0), Vec3::default(), Vec3::new(0.0, 1.0, 0.0), 3, 1.0, 1e9).unwrap();
        let ys: Vec<f64> = build_ula(&three).iter().map(|p| p.y).collect();
        assert_eq!(ys, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn scenario_rejects_even_arrays() {
        let r = Scenario::new(Vec3::new(0.0, 0.0, 1.0), Vec3::new(3.0, 0.0, 1.0), Vec3::new(0.0, 1.0, 0.0), 4, 0.1, 1e9);
        assert!(matches!(r, Err(GeometryError::InvalidScenario(_))));
        let r = Scenario::new(Vec3::new(0.0, 0.0, 1.0), Vec3::new(3.0, 0.0, 1.2), Vec3::new(0.0, 1.0, 0.0), 3, 0.1, 1e9);
        assert!(r.is_err());
    }

    #[test]
    fn body_invariants() {
        assert!(BodyState::new(2.0, 0.0, 1.7, 1.65, 0.55, 0.25).is_err());
        assert!(BodyState::new(2.0, 0.0, 0.0, 1.65, 0.25, 0.55).is_err());
        assert!(BodyState::new(2.0, 0.0, 0.0, 0.0, 0.55, 0.25).is_err());
    }

    #[test]
    fn sheet_widths() {
        let s = Scenario::reference();
        let mut b = fig3_body(0.0);
        assert!((body_to_sheet(&b, &s).width - 0.55).abs() < 1e-15);
        b.orientation = FRAC_PI_2;
        assert!((body_to_sheet(&b, &s).width - 0.25).abs() < 1e-15);
        b.orientation = std::f64::consts::FRAC_PI_4;
        let w = body_to_sheet(&b, &s).width;
        assert!((w - 0.8 / 2f64.sqrt()).abs() < 1e-12);
        assert!((w - 0.5657).abs() < 1e-4);
    }

    #[test]
    fn sheet_stands_on_ground_facing_array() {
        let s = Scenario::reference();
        let sheet = body_to_sheet(&fig3_body(0.25), &s);
        assert!((sheet.center.z - 0.825).abs() < 1e-15);
        assert!((sheet.center.z - sheet.height / 2.0).abs() < 1e-15);
        let expect = Vec3::new(2.0, -0.25, 0.0).normalized();
        assert!((sheet.normal - expect).norm() < 1e-15);
        assert!(sheet.normal.z == 0.0);
    }

    #[test]
    fn perturbation_zero_is_identity() {
        let b = fig3_body(0.1);
        let spec = PerturbationSpec::new(0.0, 0.0, 3).unwrap();
        for i in 0..10 {
            assert_eq!(sample_perturbed_state(&b, &spec, i), b);
        }
    }

    #[test]
    fn perturbation_stays_in_disc() {
        let b = fig3_body(-0.2);
        let spec = PerturbationSpec::small_movements(11);
        for i in 0..2000 {
            let p = sample_perturbed_state(&b, &spec, i);
            assert!(p.position.distance(b.position) <= 0.05);
            assert!(p.validate().is_ok());
            assert_eq!((p.height, p.width_max, p.width_min), (b.height, b.width_max, b.width_min));
        }
    }

    #[test]
    fn perturbation_mean_radius() {
        let b = fig3_body(0.0);
        let spec = PerturbationSpec::new(0.05, 0.0, 99).unwrap();
        let n = 10_000;
        let mean: f64 = (0..n).map(|i| sample_perturbed_state(&b, &spec, i).position.distance(b.position)).sum::<f64>() / n as f64;
        let expect = 2.0 / 3.0 * 0.05;
        assert!((mean - expect).abs() < 0.02 * expect, "mean {mean}");
    }

    #[test]
    fn perturbation_orientation_is_clamped() {
        let b = BodyState::new(2.0, 0.0, 1.5, 1.7, 0.5, 0.3).unwrap();
        let spec = PerturbationSpec::new(0.0, 1.0, 5).unwrap();
        for i in 0..500 {
            let p = sample_perturbed_state(&b, &spec, i);
            assert!(p.orientation.abs() <= FRAC_PI_2);
        }
    }

    #[test]
    fn fresnel_membership() {
        let s = Scenario::reference();
        assert!(first_fresnel_contains(Vec3::new(2.0, 0.0, 0.99), &s));
        assert!(!first_fresnel_contains(Vec3::new(2.0, 1.0, 0.99), &s));
        assert!(first_fresnel_contains(s.tx_position(), &s));
        // semi-minor axis at the midpoint
        let b = (s.wavelength() * 4.0).sqrt() / 2.0;
        assert!((b - 0.353).abs() < 1e-3);
        assert!(first_fresnel_contains(Vec3::new(2.0, 0.99 * b, 0.99), &s));
        assert!(!first_fresnel_contains(Vec3::new(2.0, 1.01 * b, 0.99), &s));
    }

    #[test]
    fn scenario_doc_roundtrip() {
        let json = r#"{"tx":[0,0,0.99],"array_center":[4,0,0.99],"array_axis":[0,1,0],"L":9,
            "spacing_over_lambda":0.5,"fc_hz":2.4e9,"body":{"p":[2,0.25],"phi":0,"hs":1.65,"ws1":0.55,"ws2":0.25}}"#;
        let doc = ScenarioDoc::from_json(json).unwrap();
        let s = doc.scenario().unwrap();
        assert_eq!(s, Scenario::reference());
        assert_eq!(doc.body().unwrap(), Some(fig3_body(0.25)));
        let again = ScenarioDoc::from_parts(&s, Some(&fig3_body(0.25)));
        assert_eq!(again.scenario().unwrap(), s);
    }

    proptest! {
        #[test]
        fn ula_is_symmetric(l in 0usize..12, spacing in 0.01f64..2.0, cx in -5f64..5.0, cy in -5f64..5.0) {
            let s = Scenario::new(Vec3::new(cx - 3.0, cy, 1.0), Vec3::new(cx, cy, 1.0), Vec3::new(0.3, 0.7, 0.0), 2 * l + 1, spacing, 1e9).unwrap();
            let ula = build_ula(&s);
            for m in 0..=l {
                let sum = ula[l + m] + ula[l - m];
                let c2 = s.array_center() * 2.0;
                prop_assert!((sum - c2).norm() <= 1e-12 * (1.0 + c2.norm() + spacing * l as f64));
            }
        }

        #[test]
        fn projected_width_bounds(phi in -FRAC_PI_2..FRAC_PI_2, w2 in 0.05f64..0.5, extra in 0.0f64..0.5) {
            let b = BodyState::new(2.0, 0.0, phi, 1.7, w2 + extra, w2).unwrap();
            let w = b.projected_width();
            prop_assert!(w >= b.width_min - 1e-15);
            prop_assert!(w <= b.width_max + b.width_min + 1e-15);
        }

        #[test]
        fn fresnel_monotone_in_lateral_offset(x in 0.1f64..3.9, y in 0.0f64..1.0, scale in 1.0f64..4.0) {
            let s = Scenario::reference();
            let inner = first_fresnel_contains(Vec3::new(x, y, 0.99), &s);
            let outer = first_fresnel_contains(Vec3::new(x, y * scale, 0.99), &s);
            prop_assert!(inner || !outer);
        }

        #[test]
        fn perturbation_reproducible(seed in any::<u64>(), idx in any::<u64>()) {
            let b = BodyState::new(2.0, 0.1, 0.2, 1.8, 0.5, 0.3).unwrap();
            let spec = PerturbationSpec::small_movements(seed);
            let a = sample_perturbed_state(&b, &spec, idx);
            let c = sample_perturbed_state(&b, &spec, idx);
            prop_assert_eq!(a.features().map(f64::to_bits), c.features().map(f64::to_bits));
        }
    }
}
