//! The time-domain reed (a driven second-order state) against the
//! frequency-domain reed response used by harmonic balance.

use reedhb::bifurcation::{BifurcationReport, ClarinetModel, ScanGrid};
use reedhb::hbsolver::{continue_branch, HbSystem};
use reedhb::oracle::{compare_magnitudes, simulate, steady_spectrum, SimConfig};
use reedhb::{ClarinetParams, ReedResponse};

#[test]
fn single_oscillator_reed_matches_harmonic_balance() {
    let params = ClarinetParams {
        reed: ReedResponse::SingleOscillator { gain: 1.0, omega_r: 7.3, damping: 0.4 },
        ..Default::default()
    };
    let report = BifurcationReport::analyze(&ClarinetModel::new(params.clone()), &ScanGrid::around(1.0)).unwrap();
    let target = 0.03;
    let gamma = report.gamma0 + target * target / report.alpha;
    let branch = continue_branch(&HbSystem::new(params.clone()), &report, &[gamma], 1e-12, 50).unwrap();
    let hb = &branch.points[0];
    let sim_params = params.with_gamma(gamma);
    let cfg = SimConfig {
        duration: 40_000.0,
        transient_fraction: 0.8,
        kick: 2.0 * hb.amplitude(),
        ..SimConfig::for_params(&sim_params)
    };
    let sim = steady_spectrum(&simulate(&sim_params, &cfg).unwrap(), hb.omega, params.order).unwrap();
    assert!((sim.omega() / hb.omega - 1.0).abs() < 1e-8, "{} vs {}", sim.omega(), hb.omega);
    for e in compare_magnitudes(&sim, &hb.spectrum, 3) {
        assert!(e.relative() < 1e-4, "q {}: {:e} vs {:e}", e.q, e.simulated, e.reference);
    }
}
