//! Acceptance criteria on the default configuration, one line per criterion.
//!
//! Run with `cargo test -p reedhb --test acceptance -- --nocapture` to see
//! the report.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reedhb::bifurcation::{BifurcationReport, ClarinetModel, ScanGrid};
use reedhb::hbsolver::{continue_branch, gamma_schedule, Branch, HbSystem, Spacing};
use reedhb::oracle::{
    check_convolution_bounds, check_decay, check_smallness, check_worman, compare_magnitudes, simulate,
    steady_spectrum, SimConfig, DECAY_GATE,
};
use reedhb::spectrum::{convolve_with, nonlinear_term, ConvolutionBackend, KernelSet, Sequence, Spectrum};
use reedhb::ClarinetParams;

struct Outcome {
    lines: Vec<String>,
    failed: Vec<&'static str>,
}

impl Outcome {
    fn record(&mut self, id: &'static str, pass: bool, detail: String) {
        let line = format!("{id} {}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push(line);
        if !pass {
            self.failed.push(id);
        }
    }
}

fn fit_line(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// `β₁` rebuilt from the flow law and the modal sum of the bore.
fn characteristic_oracle(p: &ClarinetParams, gamma: f64, omega: f64) -> Complex64 {
    let z = &p.impedance;
    let i = Complex64::i();
    let green: Complex64 = z
        .modes()
        .iter()
        .map(|m| {
            let w = z.gain() * (m.wavenumber * z.position()).cos() * (m.wavenumber * z.source_position()).cos();
            w / Complex64::new(m.omega * m.omega - omega * omega, omega * m.omega * m.loss)
        })
        .sum();
    let impedance = i * omega * green;
    let zeta = p.zeta;
    let reed = p.reed.eval(omega);
    // d(u²)/dp of u² = ζ²(1−γ+Dp)²(γ−p) at p = 0
    let flow_gain = zeta * zeta * (1.0 - gamma) * (2.0 * gamma * reed - (1.0 - gamma));
    2.0 * zeta * (1.0 - gamma) * gamma.sqrt() / impedance - flow_gain
}

fn amplitudes(b: &Branch) -> Vec<f64> {
    b.points.iter().map(|p| p.amplitude()).collect()
}

#[test]
fn acceptance_criteria() {
    let mut out = Outcome { lines: Vec::new(), failed: Vec::new() };
    let params = ClarinetParams::default();
    let model = ClarinetModel::new(params.clone());
    let grid = ScanGrid::around(1.0);
    let report = BifurcationReport::analyze(&model, &grid).expect("threshold");
    let system = HbSystem::new(params.clone());
    println!(
        "threshold gamma0 = {:.10}, omega0 = {:.10}, alpha = {:.6}, omega' = {:.6e}",
        report.gamma0, report.omega0, report.alpha, report.omega_slope
    );

    // Sweep shared by AC-1, AC-2, AC-3 and AC-8.
    let gammas = gamma_schedule(report.gamma0, 1e-4, 1e-2, 20, Spacing::Log).unwrap();
    let sweep = continue_branch(&system, &report, &gammas, 1e-10, 50).expect("sweep");
    assert!(sweep.stopped.is_none(), "{:?}", sweep.stopped);

    // AC-1
    let window: Vec<_> = sweep.points.iter().filter(|p| (0.01..=0.05).contains(&p.amplitude())).collect();
    let worst = window.iter().map(|p| check_worman(&p.spectrum, 1.0).k_max_verified).min().unwrap_or(0);
    out.record(
        "AC-1",
        !window.is_empty() && worst >= 5,
        format!("{} points with |P1| in [0.01, 0.05], smallest k_max_verified = {worst} (need >= 5)", window.len()),
    );

    // AC-2
    let pts: Vec<(f64, f64)> = sweep
        .points
        .iter()
        .map(|p| ((p.gamma - report.gamma0).ln(), p.amplitude().ln()))
        .collect();
    let (icpt, slope) = fit_line(&pts);
    let prefactor = icpt.exp();
    let expected = report.alpha.abs().sqrt();
    let pref_err = (prefactor / expected - 1.0).abs();
    let sq: Vec<(f64, f64)> = sweep.points.iter().map(|p| (p.gamma - report.gamma0, p.amplitude().powi(2))).collect();
    let (_, sq_slope) = fit_line(&sq);
    out.record(
        "AC-2",
        (slope - 0.5).abs() <= 0.02 && pref_err <= 0.05,
        format!(
            "log-log slope {slope:.5} (0.5 +- 0.02), prefactor {prefactor:.5} vs sqrt|alpha| {expected:.5} ({:.2}%), |P1|^2 slope {sq_slope:.5} vs alpha {:.5}",
            100.0 * pref_err,
            report.alpha
        ),
    );

    // AC-3
    let om: Vec<(f64, f64)> = sweep.points.iter().map(|p| (p.gamma - report.gamma0, p.omega)).collect();
    let (w0, wslope) = fit_line(&om);
    let slope_err = (wslope / report.omega_slope - 1.0).abs();
    let icpt_err = (w0 - report.omega0).abs() / report.omega0;
    out.record(
        "AC-3",
        slope_err <= 0.05 && icpt_err <= 1e-6,
        format!(
            "fitted slope {wslope:.5e} vs {:.5e} ({:.2}%), intercept relative error {icpt_err:.2e} (<= 1e-6)",
            report.omega_slope,
            100.0 * slope_err
        ),
    );

    // AC-4
    let target = 0.03;
    let gamma = report.gamma0 + target * target / report.alpha;
    let hb = continue_branch(&system, &report, &[gamma], 1e-12, 50).expect("branch point");
    let hb = &hb.points[0];
    let sim_params = params.with_gamma(gamma);
    let cfg = SimConfig {
        duration: 50_000.0,
        transient_fraction: 0.8,
        kick: 2.0 * hb.amplitude(),
        ..SimConfig::for_params(&sim_params)
    };
    let signal = simulate(&sim_params, &cfg).expect("simulation");
    let sim = steady_spectrum(&signal, hb.omega, params.order).expect("steady spectrum");
    let errors = compare_magnitudes(&sim, &hb.spectrum, 5);
    let rel_gate = 1e-3 * hb.amplitude();
    let worst_rel = errors.iter().map(|e| e.relative()).fold(0.0, f64::max);
    let freq_err = (sim.omega() / hb.omega - 1.0).abs();
    out.record(
        "AC-4",
        worst_rel <= rel_gate && freq_err <= 1e-3,
        format!(
            "|P1| = {:.4}, max relative |P_q| error q<=5 = {worst_rel:.2e} (<= {rel_gate:.2e}), frequency relative error {freq_err:.2e}",
            hb.amplitude()
        ),
    );
    for e in &errors {
        println!("      q = {}: HB {:.6e}, simulated {:.6e}, relative {:.2e}", e.q, e.reference, e.simulated, e.relative());
    }

    // AC-5
    let residual = characteristic_oracle(&params, report.gamma0, report.omega0).norm();
    let (ng, nw) = (grid.gamma_cells + 1, grid.omega_cells + 1);
    let node = |i: usize, j: usize| characteristic_oracle(&params, grid.gamma(i), grid.omega(j));
    let nodes: Vec<Vec<Complex64>> = (0..ng).map(|i| (0..nw).map(|j| node(i, j)).collect()).collect();
    let straddles = |v: [f64; 4]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        lo <= 0.0 && hi >= 0.0 && lo < hi
    };
    let mut cells = Vec::new();
    for i in 0..grid.gamma_cells {
        for j in 0..grid.omega_cells {
            let c = [nodes[i][j], nodes[i + 1][j], nodes[i][j + 1], nodes[i + 1][j + 1]];
            if straddles(c.map(|z| z.re)) && straddles(c.map(|z| z.im)) {
                cells.push((i, j));
            }
        }
    }
    let contains = cells.len() == 1 && {
        let (i, j) = cells[0];
        (grid.gamma(i)..=grid.gamma(i + 1)).contains(&report.gamma0)
            && (grid.omega(j)..=grid.omega(j + 1)).contains(&report.omega0)
    };
    out.record(
        "AC-5",
        residual <= 1e-10 && contains,
        format!(
            "|beta1(gamma0, omega0)| = {residual:.2e} (<= 1e-10), {} sign-change cell(s) on {}x{}, containing threshold: {contains}",
            cells.len(),
            grid.gamma_cells,
            grid.omega_cells
        ),
    );

    // AC-6 over just over a decade of |P1| around [1e-3, 1e-2], next to threshold
    let near = gamma_schedule(report.gamma0, 0.95e-6 / report.alpha, 1.05e-4 / report.alpha, 12, Spacing::Log).unwrap();
    let near = continue_branch(&system, &report, &near, 1e-13, 60).expect("near-threshold branch");
    let ratios: Vec<f64> = near.points.iter().map(|p| check_smallness(&p.spectrum, f64::INFINITY).max_ratio()).collect();
    let amps = amplitudes(&near);
    let spread = ratios.iter().cloned().fold(0.0, f64::max) / ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let shrink = amps.iter().cloned().fold(0.0, f64::max) / amps.iter().cloned().fold(f64::INFINITY, f64::min);
    out.record(
        "AC-6",
        near.stopped.is_none() && shrink >= 10.0 && spread < 2.0,
        format!(
            "|P1| from {:.3e} to {:.3e} ({shrink:.2}x): max_q |P_q|/|P1|^2 varies {spread:.3}x (< 2)",
            amps[0],
            amps[amps.len() - 1]
        ),
    );
    let wide: Vec<f64> = sweep.points.iter().map(|p| check_smallness(&p.spectrum, f64::INFINITY).max_ratio()).collect();
    println!(
        "      over the AC-2 sweep (|P1| {:.3e} to {:.3e}) the same ratio varies {:.2}x",
        sweep.points[0].amplitude(),
        sweep.points[sweep.points.len() - 1].amplitude(),
        wide.iter().cloned().fold(0.0, f64::max) / wide.iter().cloned().fold(f64::INFINITY, f64::min)
    );

    // AC-7
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rand_c = |rng: &mut ChaCha8Rng| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let mut conv_err: f64 = 0.0;
    for _ in 0..500 {
        let a = Sequence::from_fn(32, |_| rand_c(&mut rng));
        let b = Sequence::from_fn(32, |_| rand_c(&mut rng));
        let f = convolve_with(&a, &b, ConvolutionBackend::Fft);
        let d = convolve_with(&a, &b, ConvolutionBackend::Direct);
        conv_err = conv_err.max(f.values().iter().zip(d.values()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max));
    }
    let mut cubic_err: f64 = 0.0;
    for _ in 0..100 {
        let n = 8;
        let s = Spectrum::from_fn(1.0, n, |_| rand_c(&mut rng)).unwrap();
        let filters: Vec<Sequence> = (0..3).map(|_| Sequence::from_fn(n, |_| rand_c(&mut rng))).collect();
        let k = KernelSet::new(3, filters.clone()).unwrap();
        let got = nonlinear_term(&k, &s).unwrap();
        let p = s.two_sided();
        let ni = n as isize;
        for q in -3 * ni..=3 * ni {
            let mut sum = Complex64::new(0.0, 0.0);
            for a in -ni..=ni {
                for b in -ni..=ni {
                    let c = q - a - b;
                    if c.abs() <= ni {
                        sum += filters[0].get(a) * p.get(a) * filters[1].get(b) * p.get(b) * filters[2].get(c) * p.get(c);
                    }
                }
            }
            cubic_err = cubic_err.max((got.get(q) - sum).norm());
        }
    }
    out.record(
        "AC-7",
        conv_err <= 1e-12 && cubic_err <= 1e-12,
        format!("FFT vs direct max error {conv_err:.2e} (500 pairs, M = 32), cubic term vs triple sum {cubic_err:.2e} (100 spectra, N = 8)"),
    );

    // AC-8
    let exponents: Vec<f64> = sweep.points.iter().map(|p| check_decay(&p.spectrum).exponent).collect();
    let worst_exp = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    out.record(
        "AC-8",
        worst_exp <= DECAY_GATE,
        format!("largest fitted decay exponent over {} solutions: {worst_exp:.3} (<= {DECAY_GATE})", exponents.len()),
    );

    // AC-9
    let stats = check_convolution_bounds(2000, 32, 2024);
    let first = check_convolution_bounds(1000, 32, 2024);
    let growth = stats.c1 / first.c1;
    out.record(
        "AC-9",
        first.young_violations == 0 && first.explicit_violations == 0 && stats.explicit_violations == 0
            && stats.young_violations == 0 && (growth - 1.0).abs() <= 0.2,
        format!(
            "violations over 1000/2000 trials: {}/{}, fitted c1 {:.4} -> {:.4} on doubling ({:+.2}%), max tail {:.3e}",
            first.young_violations + first.explicit_violations,
            stats.young_violations + stats.explicit_violations,
            first.c1,
            stats.c1,
            100.0 * (growth - 1.0),
            stats.max_tail
        ),
    );

    assert!(out.failed.is_empty(), "failed: {:?}\n{}", out.failed, out.lines.join("\n"));
}
