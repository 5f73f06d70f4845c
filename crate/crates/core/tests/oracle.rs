//! Cross-checks the tiled integrator against a plain midpoint sum of the
//! same Fresnel-Kirchhoff integrand, with the sheet built independently.

use num_complex::Complex64;
use rf_shadow::diffraction::{field_vector, IntegrationConfig};
use rf_shadow::geometry::{build_ula, BodyState, Scenario};

fn midpoint_field(body: &BodyState, s: &Scenario, rx: [f64; 3], nu: usize, nv: usize) -> Complex64 {
    let tx = [0.0, 0.0, s.link_height()];
    let lambda = s.wavelength();
    let k = 2.0 * std::f64::consts::PI / lambda;
    let d = ((rx[0] - tx[0]).powi(2) + (rx[1] - tx[1]).powi(2)).sqrt();
    let (nx, ny) = ((rx[0] - tx[0]) / d, (rx[1] - tx[1]) / d);
    let width = body.width_max * body.orientation.cos().abs() + body.width_min * body.orientation.sin().abs();
    let (du, dv) = (width / nu as f64, body.height / nv as f64);
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..nu {
        let u = -width / 2.0 + (i as f64 + 0.5) * du;
        let (px, py) = (body.position.x - ny * u, body.position.y + nx * u);
        for j in 0..nv {
            let pz = (j as f64 + 0.5) * dv;
            let r1 = ((px - tx[0]).powi(2) + (py - tx[1]).powi(2) + (pz - tx[2]).powi(2)).sqrt();
            let r2 = ((px - rx[0]).powi(2) + (py - rx[1]).powi(2) + (pz - rx[2]).powi(2)).sqrt();
            acc += Complex64::from_polar(d / (r1 * r2), -k * (r1 + r2 - d));
        }
    }
    1.0 - Complex64::new(0.0, 1.0 / lambda) * acc * (du * dv)
}

#[test]
fn tiled_integral_matches_midpoint_sum() {
    let s = Scenario::reference();
    let cfg = IntegrationConfig::new(1e-6, s.wavelength());
    let ula = build_ula(&s);
    for body in [
        BodyState::new(2.0, 0.25, 0.0, 1.65, 0.55, 0.25).unwrap(),
        BodyState::new(1.2, -0.1, 0.6, 1.9, 0.5, 0.3).unwrap(),
    ] {
        let tiled = field_vector(&body, &s, &cfg).unwrap();
        for link in [0, 4, 7] {
            let rx = ula[link];
            let brute = midpoint_field(&body, &s, [rx.x, rx.y, rx.z], 500, 1500);
            let diff = (tiled.values()[link] - brute).norm();
            assert!(diff < 2e-3, "link {link}: tiled {} brute {brute} ({diff:e})", tiled.values()[link]);
        }
    }
}
