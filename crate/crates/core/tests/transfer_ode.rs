//! Frequency response of the modal bore against direct integration of its
//! mode equations driven by `du/dt` with `u = cos Ωt`.

use std::f64::consts::PI;

use num_complex::Complex64;
use reedhb::ModalImpedance;

/// Steady complex amplitude of the pressure at the probe for a unit cosine
/// flow at `omega`.
fn integrated_response(z: &ModalImpedance, omega: f64) -> Complex64 {
    let modes = z.modes();
    let weight: Vec<f64> = modes.iter().map(|m| z.gain() * (m.wavenumber * z.source_position()).cos()).collect();
    let probe: Vec<f64> = modes.iter().map(|m| (m.wavenumber * z.position()).cos()).collect();
    let per_period = 4000;
    let dt = 2.0 * PI / omega / per_period as f64;
    let settle = (250.0 / (2.0 * PI / omega)).ceil() as usize;
    let rates = |t: f64, y: &[f64]| -> Vec<f64> {
        let source = -omega * (omega * t).sin();
        let mut d = vec![0.0; y.len()];
        for (n, m) in modes.iter().enumerate() {
            let (p, v) = (y[2 * n], y[2 * n + 1]);
            d[2 * n] = v;
            d[2 * n + 1] = -m.omega * m.loss * v - m.omega * m.omega * p + weight[n] * source;
        }
        d
    };
    let mut y = vec![0.0; 2 * modes.len()];
    let mut t = 0.0;
    let step = |t: f64, y: &mut Vec<f64>| {
        let k1 = rates(t, y);
        let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, k)| a + 0.5 * dt * k).collect();
        let k2 = rates(t + 0.5 * dt, &y2);
        let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, k)| a + 0.5 * dt * k).collect();
        let k3 = rates(t + 0.5 * dt, &y3);
        let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, k)| a + dt * k).collect();
        let k4 = rates(t + dt, &y4);
        for i in 0..y.len() {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    };
    for _ in 0..settle * per_period {
        step(t, &mut y);
        t += dt;
    }
    // one period, rectangle rule is exact for trigonometric polynomials
    let mut acc = Complex64::new(0.0, 0.0);
    for _ in 0..per_period {
        let p0: f64 = (0..modes.len()).map(|n| probe[n] * y[2 * n]).sum();
        acc += p0 * Complex64::from_polar(1.0, -omega * t);
        step(t, &mut y);
        t += dt;
    }
    2.0 * acc / per_period as f64
}

#[test]
fn impedance_matches_integrated_modes() {
    let z = ModalImpedance::from_first_mode(1.0, 1.0, 0.2, 3)
        .unwrap()
        .with_positions(0.3, 0.6)
        .unwrap();
    for omega in [0.7, 1.0, 2.3, 3.1] {
        let expected = z.impedance(omega);
        let got = integrated_response(&z, omega);
        assert!((got - expected).norm() < 1e-6 * expected.norm(), "omega {omega}: {got} vs {expected}");
    }
}
