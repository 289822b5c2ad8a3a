//! Independent checks on harmonic balance solutions: a time-domain
//! simulation of the same model, steady-state spectrum extraction, and
//! checkers for harmonic smallness, decay and convolution bounds.
//!
//! The simulation shares only [`ClarinetParams`] with the frequency-domain
//! code. The bore is integrated as a bank of damped modes driven by the time
//! derivative of the Bernoulli flow.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::clarinet::ClarinetParams;
use crate::spectrum::{convolve, Sequence, Spectrum, SpectrumError};
use crate::transfer::ReedResponse;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid simulation setting: {0}")]
    InvalidConfig(String),
    #[error("regime violated at t = {time:.6}: {condition} ({value:.3e})")]
    Regime { time: f64, condition: &'static str, value: f64 },
    #[error("flow update did not converge at t = {0:.6}")]
    AlgebraicLoop(f64),
    #[error("signal spans {periods:.1} periods, at least {required} are needed")]
    TooShort { periods: f64, required: usize },
    #[error("not-periodic: the fundamental carries {0:.3} of the oscillating power")]
    NotPeriodic(f64),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

/// How the source term `du/dt` of the bore equations is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlowDerivative {
    /// Differentiate the flow law through the state: exact, explicit.
    #[default]
    ChainRule,
    /// `(u_{n+1} − u_n)/dt` held over each step, with `u_{n+1}` found by
    /// fixed-point iteration.
    BackwardDifference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub duration: f64,
    /// Fraction of the run discarded before samples are kept.
    pub transient_fraction: f64,
    /// Initial displacement of the first bore mode.
    pub kick: f64,
    pub flow_derivative: FlowDerivative,
}

/// Minimum `duration/dt`.
pub const MIN_STEPS: f64 = 1e4;

impl SimConfig {
    /// `dt = (2π/ω_max)/64` with `ω_max` the fastest mode of bore or reed.
    pub fn default_dt(p: &ClarinetParams) -> f64 {
        let mut w = p.impedance.modes().iter().map(|m| m.omega).fold(0.0, f64::max);
        if let ReedResponse::SingleOscillator { omega_r, .. } = p.reed {
            w = w.max(omega_r);
        }
        2.0 * PI / w / 64.0
    }

    pub fn for_params(p: &ClarinetParams) -> Self {
        Self {
            dt: Self::default_dt(p),
            duration: 2000.0,
            transient_fraction: 0.5,
            kick: 1e-3,
            flow_derivative: FlowDerivative::default(),
        }
    }

    fn validate(&self) -> Result<(), OracleError> {
        let bad = |m: String| Err(OracleError::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt = {}", self.dt));
        }
        if !(self.duration / self.dt >= MIN_STEPS) {
            return bad(format!("duration/dt = {} is below {MIN_STEPS}", self.duration / self.dt));
        }
        if !(0.0..1.0).contains(&self.transient_fraction) {
            return bad(format!("transient_fraction = {}", self.transient_fraction));
        }
        if !self.kick.is_finite() {
            return bad(format!("kick = {}", self.kick));
        }
        Ok(())
    }
}

/// Samples kept after the transient, spaced by `dt` from `start_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub dt: f64,
    pub start_time: f64,
    pub pressure: Vec<f64>,
    pub flow: Vec<f64>,
}

impl Signal {
    pub fn duration(&self) -> f64 {
        self.dt * self.pressure.len() as f64
    }

    /// Root mean square of the pressure over the last `fraction` of samples.
    pub fn tail_rms(&self, fraction: f64) -> f64 {
        let n = self.pressure.len();
        let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
        let tail = &self.pressure[n - k..];
        (tail.iter().map(|x| x * x).sum::<f64>() / k as f64).sqrt()
    }
}

/// Mode bank plus reed, state `[p_n…, ṗ_n…, h, ḣ]` (reed entries only for a
/// dynamic reed).
struct Bank {
    zeta: f64,
    gamma: f64,
    stiffness: Vec<f64>,
    damping: Vec<f64>,
    forcing: Vec<f64>,
    probe: Vec<f64>,
    reed: ReedResponse,
}

struct Closure {
    u: f64,
    dudt: f64,
}

impl Bank {
    fn new(p: &ClarinetParams) -> Self {
        let z = &p.impedance;
        let modes = z.modes();
        Self {
            zeta: p.zeta,
            gamma: p.gamma,
            stiffness: modes.iter().map(|m| m.omega * m.omega).collect(),
            damping: modes.iter().map(|m| m.omega * m.loss).collect(),
            forcing: modes.iter().map(|m| z.gain() * (m.wavenumber * z.source_position()).cos()).collect(),
            probe: modes.iter().map(|m| (m.wavenumber * z.position()).cos()).collect(),
            reed: p.reed,
        }
    }

    fn modes(&self) -> usize {
        self.stiffness.len()
    }

    fn len(&self) -> usize {
        2 * self.modes() + if self.dynamic() { 2 } else { 0 }
    }

    fn dynamic(&self) -> bool {
        matches!(self.reed, ReedResponse::SingleOscillator { .. })
    }

    /// Mouthpiece pressure, its rate, reed opening and its rate.
    fn observe(&self, y: &[f64]) -> (f64, f64, f64, f64) {
        let m = self.modes();
        let p0: f64 = self.probe.iter().zip(&y[..m]).map(|(a, b)| a * b).sum();
        let v0: f64 = self.probe.iter().zip(&y[m..2 * m]).map(|(a, b)| a * b).sum();
        let (h, hd) = match self.reed {
            ReedResponse::QuasiStatic { gain } => (gain * p0, gain * v0),
            ReedResponse::SingleOscillator { .. } => (y[2 * m], y[2 * m + 1]),
        };
        (p0, v0, h, hd)
    }

    fn flow(&self, y: &[f64], time: f64) -> Result<Closure, OracleError> {
        let (p0, v0, h, hd) = self.observe(y);
        let drop = self.gamma - p0;
        if !(drop > 0.0) {
            return Err(OracleError::Regime { time, condition: "gamma - p >= 0", value: drop });
        }
        let opening = 1.0 - self.gamma + h;
        if !(opening >= 0.0) {
            return Err(OracleError::Regime { time, condition: "1 - gamma + h >= 0", value: opening });
        }
        let root = drop.sqrt();
        let u = self.zeta * opening * root;
        let dudt = self.zeta * (root * hd - opening * v0 / (2.0 * root));
        Ok(Closure { u, dudt })
    }

    /// Writes `dy/dt` given the source `du/dt`.
    fn rates(&self, y: &[f64], dudt: f64, dy: &mut [f64]) {
        let m = self.modes();
        for n in 0..m {
            dy[n] = y[m + n];
            dy[m + n] = -self.damping[n] * y[m + n] - self.stiffness[n] * y[n] + self.forcing[n] * dudt;
        }
        if let ReedResponse::SingleOscillator { gain, omega_r, damping } = self.reed {
            let p0: f64 = self.probe.iter().zip(&y[..m]).map(|(a, b)| a * b).sum();
            dy[2 * m] = y[2 * m + 1];
            dy[2 * m + 1] = omega_r * omega_r * (gain * p0 - y[2 * m]) - damping * omega_r * y[2 * m + 1];
        }
    }
}

struct Rk4 {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        Self { k: std::array::from_fn(|_| vec![0.0; n]), tmp: vec![0.0; n] }
    }

    /// One step of `ẏ = f(y)`.
    fn step(
        &mut self,
        y: &mut [f64],
        dt: f64,
        mut f: impl FnMut(&[f64], &mut [f64]) -> Result<(), OracleError>,
    ) -> Result<(), OracleError> {
        let weights = [0.5, 0.5, 1.0];
        f(y, &mut self.k[0])?;
        for s in 0..3 {
            for i in 0..y.len() {
                self.tmp[i] = y[i] + weights[s] * dt * self.k[s][i];
            }
            let (head, tail) = self.k.split_at_mut(s + 1);
            let _ = head;
            f(&self.tmp, &mut tail[0])?;
        }
        for i in 0..y.len() {
            y[i] += dt / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
        }
        Ok(())
    }
}

/// Integrates the model from the static regime with mode 1 displaced by
/// `cfg.kick`, returning the samples after the transient.
pub fn simulate(p: &ClarinetParams, cfg: &SimConfig) -> Result<Signal, OracleError> {
    cfg.validate()?;
    if !(p.zeta >= 0.0 && p.zeta.is_finite()) || !(p.gamma > 0.0 && p.gamma < 1.0) {
        return Err(OracleError::InvalidConfig(format!("zeta = {}, gamma = {}", p.zeta, p.gamma)));
    }
    p.reed.validate().map_err(|e| OracleError::InvalidConfig(e.to_string()))?;
    let bank = Bank::new(p);
    let mut y = vec![0.0; bank.len()];
    y[0] = cfg.kick;
    if bank.dynamic() {
        let (p0, ..) = bank.observe(&y);
        y[2 * bank.modes()] = bank.reed.gain() * p0;
    }
    let steps = (cfg.duration / cfg.dt).round() as usize;
    let keep_from = (steps as f64 * cfg.transient_fraction).ceil() as usize;
    let mut signal = Signal {
        dt: cfg.dt,
        start_time: keep_from as f64 * cfg.dt,
        pressure: Vec::with_capacity(steps + 1 - keep_from),
        flow: Vec::with_capacity(steps + 1 - keep_from),
    };
    let mut rk = Rk4::new(y.len());
    let mut u = bank.flow(&y, 0.0)?.u;
    let mut u_prev = u;
    for step in 0..=steps {
        let t = step as f64 * cfg.dt;
        if step >= keep_from {
            signal.pressure.push(bank.observe(&y).0);
            signal.flow.push(u);
        }
        if step == steps {
            break;
        }
        match cfg.flow_derivative {
            FlowDerivative::ChainRule => {
                rk.step(&mut y, cfg.dt, |s, d| {
                    let c = bank.flow(s, t)?;
                    bank.rates(s, c.dudt, d);
                    Ok(())
                })?;
                u = bank.flow(&y, t + cfg.dt)?.u;
            }
            FlowDerivative::BackwardDifference => {
                let start = y.clone();
                let mut guess = 2.0 * u - u_prev;
                let mut converged = false;
                for _ in 0..20 {
                    y.copy_from_slice(&start);
                    let source = (guess - u) / cfg.dt;
                    rk.step(&mut y, cfg.dt, |s, d| {
                        bank.rates(s, source, d);
                        Ok(())
                    })?;
                    let next = bank.flow(&y, t + cfg.dt)?.u;
                    let change = next - guess;
                    guess = next;
                    if change.abs() <= 1e-12 * next.abs().max(1.0) {
                        converged = true;
                        break;
                    }
                }
                if !converged {
                    return Err(OracleError::AlgebraicLoop(t));
                }
                u_prev = u;
                u = guess;
            }
        }
    }
    Ok(signal)
}

/// Periods required by [`steady_spectrum`].
pub const MIN_PERIODS: usize = 20;
const SEARCH_WIDTH: f64 = 0.02;
const SAMPLES_PER_PERIOD: usize = 64;

/// Uniform samples with an 8-point Lagrange interpolant.
struct Resampler<'a> {
    samples: &'a [f64],
    dt: f64,
}

impl Resampler<'_> {
    /// Value at `t` measured from the first sample.
    fn at(&self, t: f64) -> f64 {
        let x = t / self.dt;
        let last = self.samples.len() - 8;
        let base = ((x.floor() as isize) - 3).clamp(0, last as isize) as usize;
        let mut sum = 0.0;
        for j in 0..8 {
            let xj = (base + j) as f64;
            let mut w = 1.0;
            for k in 0..8 {
                if k != j {
                    w *= (x - (base + k) as f64) / (xj - (base + k) as f64);
                }
            }
            sum += w * self.samples[base + j];
        }
        sum
    }

    /// Resamples `periods` periods at `omega` ending at the last sample.
    fn window(&self, omega: f64, periods: usize, per_period: usize) -> (Vec<f64>, f64) {
        let span = periods as f64 * 2.0 * PI / omega;
        let end = (self.samples.len() - 1) as f64 * self.dt;
        let start = end - span;
        let k = periods * per_period;
        let h = span / k as f64;
        ((0..k).map(|i| self.at(start + i as f64 * h)).collect(), start)
    }
}

/// Phase advance of the fundamental from the first to the second half of the
/// window; zero when `omega` makes both halves exact periods.
fn phase_drift(r: &Resampler, omega: f64, half: usize, per_period: usize) -> f64 {
    let (v, _) = r.window(omega, 2 * half, per_period);
    let (first, second) = v.split_at(half * per_period);
    (harmonic(second, half, 1) / harmonic(first, half, 1)).arg()
}

/// Secant iteration on [`phase_drift`]; the maximum of the fundamental is
/// biased by leakage, the zero drift is not.
fn refine_by_phase(r: &Resampler, start: f64, half: usize, per_period: usize) -> f64 {
    let mut w0 = start;
    let mut d0 = phase_drift(r, w0, half, per_period);
    let mut w1 = start * (1.0 + 1e-7);
    let mut d1 = phase_drift(r, w1, half, per_period);
    for _ in 0..30 {
        if d1 == d0 || d1.abs() < 1e-15 {
            break;
        }
        let next = w1 - d1 * (w1 - w0) / (d1 - d0);
        if !next.is_finite() || (next - start).abs() > 1e-3 * start {
            return start;
        }
        (w0, d0) = (w1, d1);
        w1 = next;
        d1 = phase_drift(r, w1, half, per_period);
        if (w1 - w0).abs() < 1e-15 * w1 {
            break;
        }
    }
    w1
}

fn harmonic(values: &[f64], periods: usize, q: usize) -> Complex64 {
    let k = values.len();
    let step = -2.0 * PI * (q * periods) as f64 / k as f64;
    values
        .iter()
        .enumerate()
        .map(|(i, &x)| x * Complex64::from_polar(1.0, step * i as f64))
        .sum::<Complex64>()
        / k as f64
}

/// Spectrum of the pressure after refining the fundamental near
/// `expected_omega` (within ±2%).
pub fn steady_spectrum(signal: &Signal, expected_omega: f64, order: usize) -> Result<Spectrum, OracleError> {
    steady_spectrum_of(&signal.pressure, signal.dt, expected_omega, order)
}

/// [`steady_spectrum`] on raw uniformly spaced samples.
pub fn steady_spectrum_of(
    samples: &[f64],
    dt: f64,
    expected_omega: f64,
    order: usize,
) -> Result<Spectrum, OracleError> {
    if !(expected_omega > 0.0) {
        return Err(SpectrumError::InvalidOmega(expected_omega).into());
    }
    let lo = expected_omega * (1.0 - SEARCH_WIDTH);
    let hi = expected_omega * (1.0 + SEARCH_WIDTH);
    let available = dt * samples.len().saturating_sub(8) as f64;
    let periods = (available * lo / (2.0 * PI)).floor() as usize;
    if samples.len() < 16 || periods < MIN_PERIODS {
        return Err(OracleError::TooShort {
            periods: available * expected_omega / (2.0 * PI),
            required: MIN_PERIODS,
        });
    }
    let per_period = SAMPLES_PER_PERIOD.max(4 * order + 4);
    let r = Resampler { samples, dt };
    let fundamental = |w: f64| {
        let (v, _) = r.window(w, periods, per_period);
        harmonic(&v, periods, 1).norm()
    };
    // Coarse scan at a quarter of the peak width, then golden section.
    let cells = ((hi - lo) / (expected_omega / (4.0 * periods as f64))).ceil().max(8.0) as usize;
    let grid: Vec<f64> = (0..=cells).map(|i| lo + (hi - lo) * i as f64 / cells as f64).collect();
    let values: Vec<f64> = grid.par_iter().map(|&w| fundamental(w)).collect();
    let best = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("grid is not empty");
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(cells)]);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (fundamental(c), fundamental(d));
    while (b - a) > 1e-13 * expected_omega {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = fundamental(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = fundamental(d);
        }
    }
    let omega = refine_by_phase(&r, 0.5 * (a + b), periods / 2, per_period);
    let (v, _) = r.window(omega, periods, per_period);
    let coeffs: Vec<Complex64> = (0..=order).map(|q| harmonic(&v, periods, q)).collect();
    let mean = coeffs[0].re;
    let ac_power = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
    let share = if ac_power > 0.0 { 2.0 * coeffs[1].norm_sqr() / ac_power } else { 0.0 };
    if !(share >= 0.5) {
        return Err(OracleError::NotPeriodic(share));
    }
    Ok(Spectrum::new(omega, coeffs)?)
}

/// Per-harmonic comparison between a simulated and a reference spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicError {
    pub q: usize,
    pub reference: f64,
    pub simulated: f64,
}

impl HarmonicError {
    pub fn absolute(&self) -> f64 {
        (self.simulated - self.reference).abs()
    }

    pub fn relative(&self) -> f64 {
        self.absolute() / self.reference
    }
}

pub fn compare_magnitudes(simulated: &Spectrum, reference: &Spectrum, max_q: usize) -> Vec<HarmonicError> {
    (1..=max_q.min(simulated.order()).min(reference.order()))
        .map(|q| HarmonicError {
            q,
            reference: reference.coeffs()[q].norm(),
            simulated: simulated.coeffs()[q].norm(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WormanReport {
    /// Largest rank `k` with `|P_q| <= C|P₁|^q` for every `2 <= q <= k`;
    /// 1 when the bound already fails at `q = 2`.
    pub k_max_verified: usize,
    /// Smallest `C` for which every harmonic above [`NOISE_FLOOR`] satisfies
    /// the bound.
    pub fitted_c: f64,
    /// `(q, log|P_q| − q log|P₁| − log C)`.
    pub margins: Vec<(usize, f64)>,
}

/// Harmonics below `NOISE_FLOOR·|P₁|` are treated as roundoff by fits.
pub const NOISE_FLOOR: f64 = 1e-13;

pub fn check_worman(s: &Spectrum, c: f64) -> WormanReport {
    let m = s.magnitudes();
    let p1 = m[1];
    let margins: Vec<(usize, f64)> = (2..=s.order())
        .map(|q| (q, m[q].ln() - q as f64 * p1.ln() - c.ln()))
        .collect();
    let k_max_verified = margins
        .iter()
        .take_while(|(_, margin)| *margin <= 0.0)
        .last()
        .map_or(1, |(q, _)| *q);
    let fitted_c = (2..=s.order())
        .filter(|&q| m[q] > NOISE_FLOOR * p1)
        .map(|q| m[q] / p1.powi(q as i32))
        .fold(0.0, f64::max);
    WormanReport { k_max_verified, fitted_c, margins }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayReport {
    /// `max_q |P_q| q²` over `1 <= q <= N`.
    pub a0: f64,
    /// Least-squares slope of `log|P_q|` against `log q` for `q >= 2`.
    pub exponent: f64,
}

/// Gate applied to converged solutions.
pub const DECAY_GATE: f64 = -2.0 + 0.3;

pub fn check_decay(s: &Spectrum) -> DecayReport {
    let m = s.magnitudes();
    let a0 = (1..=s.order()).map(|q| m[q] * (q * q) as f64).fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = (2..=s.order())
        .filter(|&q| m[q] > 0.0)
        .map(|q| ((q as f64).ln(), m[q].ln()))
        .collect();
    let n = pts.len() as f64;
    let exponent = if pts.len() < 2 {
        f64::NEG_INFINITY
    } else {
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    };
    DecayReport { a0, exponent }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallnessReport {
    /// `(q, |P_q|/|P₁|²)` for `2 <= q <= N`.
    pub ratios: Vec<(usize, f64)>,
    pub passed: bool,
}

impl SmallnessReport {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().map(|r| r.1).fold(0.0, f64::max)
    }

    pub fn failures(&self, c0: f64) -> Vec<usize> {
        self.ratios.iter().filter(|r| r.1 > c0).map(|r| r.0).collect()
    }
}

pub fn check_smallness(s: &Spectrum, c0: f64) -> SmallnessReport {
    let m = s.magnitudes();
    let e2 = m[1] * m[1];
    let ratios: Vec<(usize, f64)> = (2..=s.order()).map(|q| (q, m[q] / e2)).collect();
    let passed = ratios.iter().all(|r| r.1 <= c0);
    SmallnessReport { ratios, passed }
}

/// Parameters of one random pair in [`check_convolution_bounds`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTrial {
    pub lambda: f64,
    pub theta: f64,
    pub alpha: f64,
    pub a1: f64,
    pub a2: f64,
    /// `sup |f∗g|`.
    pub sup: f64,
    /// `sup |f∗g|` over `a₁^{3/4} λ^{5/4+θ}`.
    pub normalized: f64,
    /// `max_{|q|>=4} |(f∗g)(q)| |q|^{1+α/4}`.
    pub tail: f64,
    pub young_bound: f64,
    pub explicit_bound: f64,
}

impl BoundTrial {
    /// Evaluates a given pair; `lambda..a2` describe the caps it satisfies.
    pub fn evaluate(f: &Sequence, g: &Sequence, lambda: f64, theta: f64, alpha: f64, a1: f64, a2: f64) -> Self {
        let fg = convolve(f, g);
        let sup = fg.max_abs();
        let tail = fg
            .iter()
            .filter(|(q, _)| q.unsigned_abs() >= 4)
            .map(|(q, v)| v.norm() * (q.unsigned_abs() as f64).powf(1.0 + alpha / 4.0))
            .fold(0.0, f64::max);
        let young_bound = f.l1_norm() * g.max_abs();
        // min(λ, a₁/k²) <= λ^{1/4}(a₁/k²)^{3/4}, summed over the support
        let m = f.half_width();
        let partial: f64 = (1..=m).map(|k| (k as f64).powf(-1.5)).sum();
        let explicit_bound = lambda.powf(1.0 + theta) * (lambda + 2.0 * partial * a1.powf(0.75) * lambda.powf(0.25));
        let scale = a1.powf(0.75) * lambda.powf(1.25 + theta);
        Self {
            lambda,
            theta,
            alpha,
            a1,
            a2,
            sup,
            normalized: sup / scale,
            tail,
            young_bound,
            explicit_bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundStatistics {
    pub trials: usize,
    pub seed: u64,
    pub young_violations: usize,
    pub explicit_violations: usize,
    /// Largest normalized ratio over the first half of the trials.
    pub c1_half: f64,
    /// Largest normalized ratio over all trials.
    pub c1: f64,
    /// Trials in the second half exceeding `c1_half`.
    pub fitted_violations: usize,
    pub max_tail: f64,
}

impl BoundStatistics {
    /// `c1 / c1_half`, the growth of the fitted constant when trials double.
    pub fn c1_growth(&self) -> f64 {
        self.c1 / self.c1_half
    }
}

fn bounded_sequence(
    rng: &mut ChaCha8Rng,
    m: usize,
    cap: impl Fn(isize) -> f64,
    random_phase: bool,
) -> Sequence {
    Sequence::from_fn(m, |q| {
        let r = cap(q) * rng.gen_range(0.8..=1.0);
        if random_phase {
            Complex64::from_polar(r, rng.gen_range(0.0..2.0 * PI))
        } else {
            Complex64::new(r, 0.0)
        }
    })
}

/// Random pair meeting `|f(q)| <= min(λ, a₁/q²)` and
/// `|g(q)| <= min(λ^{1+θ}, a₂/|q|^{1+α})` on `|q| <= m`.
pub fn random_trial(rng: &mut ChaCha8Rng, m: usize) -> BoundTrial {
    let lambda: f64 = rng.gen_range(0.01..=0.5);
    let theta: f64 = rng.gen_range(0.0..=0.5);
    let alpha = rng.gen_range(0.25..=1.0);
    let a1 = rng.gen_range(0.5..=2.0);
    let a2 = rng.gen_range(0.5..=2.0);
    let random_phase = rng.gen_bool(0.5);
    let f = bounded_sequence(rng, m, |q| lambda.min(a1 / (q * q) as f64), random_phase);
    let g = bounded_sequence(
        rng,
        m,
        |q| lambda.powf(1.0 + theta).min(a2 / (q.unsigned_abs() as f64).powf(1.0 + alpha)),
        random_phase,
    );
    BoundTrial::evaluate(&f, &g, lambda, theta, alpha, a1, a2)
}

/// Runs `trials` seeded random pairs on `|q| <= m` and tallies bound checks.
pub fn check_convolution_bounds(trials: usize, m: usize, seed: u64) -> BoundStatistics {
    let results: Vec<BoundTrial> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            random_trial(&mut rng, m)
        })
        .collect();
    let half = trials.div_ceil(2);
    let max_norm = |r: &[BoundTrial]| r.iter().map(|t| t.normalized).fold(0.0, f64::max);
    let c1_half = max_norm(&results[..half]);
    let slack = 1.0 + 1e-12;
    BoundStatistics {
        trials,
        seed,
        young_violations: results.iter().filter(|t| t.sup > t.young_bound * slack).count(),
        explicit_violations: results.iter().filter(|t| t.sup > t.explicit_bound * slack).count(),
        c1_half,
        c1: max_norm(&results),
        fitted_violations: results[half..].iter().filter(|t| t.normalized > c1_half).count(),
        max_tail: results.iter().map(|t| t.tail).fold(0.0, f64::max),
    }
}
