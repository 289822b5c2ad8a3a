//! Newton solution of the truncated harmonic balance system with the period
//! as an unknown, and natural-parameter continuation in `γ`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::bifurcation::BifurcationReport;
use crate::clarinet::{flatten, ClarinetError, ClarinetParams};
use crate::spectrum::{Spectrum, SpectrumError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HbError {
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("unknown vector of length {0} does not describe a spectrum (need 2N+3 with N >= 1)")]
    BadLength(usize),
    #[error("branch needs at least one step")]
    NoSteps,
    #[error("first branch point at gamma = {gamma} did not converge ({status})")]
    FirstPoint { gamma: f64, status: SolveStatus },
    #[error("second harmonic is resonant at the predictor: |beta_2| = {0:.3e}")]
    ResonantPredictor(f64),
    #[error("invalid gamma schedule: {0}")]
    InvalidSchedule(String),
    #[error("malformed branch CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Model(#[from] ClarinetError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

/// Flat Newton state `[Re P₁, Im P₁, …, Re P_N, Im P_N, P₀, U₀, ω]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnknownVector(Vec<f64>);

impl UnknownVector {
    pub fn pack(s: &Spectrum, u0: f64) -> Self {
        let mut v = Vec::with_capacity(2 * s.order() + 3);
        for p in &s.coeffs()[1..] {
            v.push(p.re);
            v.push(p.im);
        }
        v.extend([s.coeffs()[0].re, u0, s.omega()]);
        Self(v)
    }

    pub fn from_vec(v: Vec<f64>) -> Result<Self, HbError> {
        if v.len() < 5 || v.len() % 2 == 0 {
            return Err(HbError::BadLength(v.len()));
        }
        Ok(Self(v))
    }

    pub fn order(&self) -> usize {
        (self.0.len() - 3) / 2
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn omega(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn u0(&self) -> f64 {
        self.0[self.0.len() - 2]
    }

    pub fn unpack(&self) -> Result<(Spectrum, f64), HbError> {
        let n = self.order();
        let mut coeffs = Vec::with_capacity(n + 1);
        coeffs.push(Complex64::new(self.0[2 * n], 0.0));
        for q in 0..n {
            coeffs.push(Complex64::new(self.0[2 * q], self.0[2 * q + 1]));
        }
        Ok((Spectrum::new(self.omega(), coeffs)?, self.u0()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianKind {
    #[default]
    FiniteDifference,
    Analytic,
}

/// The reed model's harmonic balance equations closed by the phase
/// condition `Im P₁ = 0`; `γ` is supplied per call.
#[derive(Debug, Clone)]
pub struct HbSystem {
    pub params: ClarinetParams,
    pub jacobian: JacobianKind,
}

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 50;
const SINGULAR_CONDITION: f64 = 1e14;

impl HbSystem {
    pub fn new(params: ClarinetParams) -> Self {
        Self { params, jacobian: JacobianKind::default() }
    }

    pub fn with_jacobian(mut self, jacobian: JacobianKind) -> Self {
        self.jacobian = jacobian;
        self
    }

    pub fn order(&self) -> usize {
        self.params.order
    }

    /// Equations in the order `[Re R_q, Im R_q]` for `q = 1..N`, the mean
    /// pressure balance, the mean-flow equation, the phase condition.
    pub fn assemble(&self, u: &UnknownVector, gamma: f64) -> Result<Vec<f64>, HbError> {
        let (s, u0) = u.unpack()?;
        let p = self.params.with_gamma(gamma);
        let mut r = p.residual_real(&s, u0)?;
        let mean = r.pop().expect("residual has a mean equation");
        r.push(p.mean_pressure_residual(s.coeffs()[0].re, u0));
        r.push(mean);
        r.push(s.coeffs()[1].im);
        Ok(r)
    }

    pub fn jacobian(&self, u: &UnknownVector, gamma: f64) -> Result<DMatrix<f64>, HbError> {
        match self.jacobian {
            JacobianKind::FiniteDifference => self.jacobian_fd(u, gamma),
            JacobianKind::Analytic => self.jacobian_analytic(u, gamma),
        }
    }

    /// Central differences with step `1e-7·max(|u_j|, 1)`.
    pub fn jacobian_fd(&self, u: &UnknownVector, gamma: f64) -> Result<DMatrix<f64>, HbError> {
        let n = u.0.len();
        let columns: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let h = 1e-7 * u.0[j].abs().max(1.0);
                let mut plus = u.clone();
                plus.0[j] += h;
                let mut minus = u.clone();
                minus.0[j] -= h;
                let fp = self.assemble(&plus, gamma)?;
                let fm = self.assemble(&minus, gamma)?;
                Ok(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
            })
            .collect::<Result<_, HbError>>()?;
        Ok(DMatrix::from_fn(n, n, |i, j| columns[j][i]))
    }

    /// Exact Jacobian from the multilinear structure of the residual.
    pub fn jacobian_analytic(&self, u: &UnknownVector, gamma: f64) -> Result<DMatrix<f64>, HbError> {
        let (s, u0) = u.unpack()?;
        let p = self.params.with_gamma(gamma);
        let n = s.order();
        let dim = 2 * n + 3;
        let zero = Spectrum::zeros(s.omega(), n)?;
        let unit = |q: usize, v: Complex64| {
            let mut c = zero.coeffs().to_vec();
            c[q] = v;
            Spectrum::new(s.omega(), c)
        };
        let mut directions = Vec::with_capacity(dim);
        for q in 1..=n {
            directions.push((unit(q, Complex64::new(1.0, 0.0))?, 0.0));
            directions.push((unit(q, Complex64::new(0.0, 1.0))?, 0.0));
        }
        directions.push((unit(0, Complex64::new(1.0, 0.0))?, 0.0));
        directions.push((zero.clone(), 1.0));
        let mut columns: Vec<Vec<Complex64>> = directions
            .par_iter()
            .map(|(dp, du)| p.residual_derivative(&s, u0, dp, *du))
            .collect::<Result<_, _>>()?;
        columns.push(p.residual_omega_derivative(&s, u0)?);
        let z0 = p.impedance.impedance(0.0).re;
        let mut jac = DMatrix::zeros(dim, dim);
        for (j, col) in columns.iter().enumerate() {
            let mut flat = flatten(col);
            let mean = flat.pop().expect("mean row");
            for (i, v) in flat.into_iter().enumerate() {
                jac[(i, j)] = v;
            }
            jac[(2 * n + 1, j)] = mean;
        }
        jac[(2 * n, 2 * n)] = 1.0;
        jac[(2 * n, 2 * n + 1)] = -z0;
        jac[(2 * n + 2, 1)] = 1.0;
        Ok(jac)
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    SingularJacobian,
    /// The damped step could not reduce the residual.
    Stalled,
    /// The residual could not be evaluated (e.g. the mean flow left `U₀ > 0`).
    InvalidState,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max-iterations",
            SolveStatus::SingularJacobian => "singular-jacobian",
            SolveStatus::Stalled => "stalled",
            SolveStatus::InvalidState => "invalid-state",
        })
    }
}

/// `|P₁|` below which a solution counts as the static regime.
pub const TRIVIAL_AMPLITUDE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct BranchPoint {
    pub gamma: f64,
    pub omega: f64,
    pub u0: f64,
    pub spectrum: Spectrum,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub status: SolveStatus,
}

impl BranchPoint {
    pub fn amplitude(&self) -> f64 {
        self.spectrum.coeffs()[1].norm()
    }

    pub fn is_trivial(&self) -> bool {
        self.amplitude() < TRIVIAL_AMPLITUDE
    }

    pub fn unknowns(&self) -> UnknownVector {
        UnknownVector::pack(&self.spectrum, self.u0)
    }
}

/// Damped Newton iteration. Returns the last iterate whether or not it
/// converged; errors are reserved for unusable input.
pub fn newton_solve(
    system: &HbSystem,
    start: &UnknownVector,
    gamma: f64,
    tol: f64,
    max_iter: usize,
) -> Result<BranchPoint, HbError> {
    if !(tol > 0.0) {
        return Err(HbError::InvalidTolerance(tol));
    }
    let mut x = start.clone();
    let mut f = system.assemble(&x, gamma)?;
    let mut norm = sup_norm(&f);
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    while iterations < max_iter {
        if norm <= tol {
            status = SolveStatus::Converged;
            break;
        }
        iterations += 1;
        match damped_step(system, &x, &f, norm, gamma, tol) {
            Ok((nx, nf, nn)) => (x, f, norm) = (nx, nf, nn),
            Err(s) => {
                status = s;
                break;
            }
        }
    }
    if status == SolveStatus::MaxIterations && norm <= tol {
        status = SolveStatus::Converged;
    }
    // One more step once converged: near threshold the amplitude direction is
    // weakly conditioned and the tolerance alone leaves visible error in |P₁|.
    if status == SolveStatus::Converged && norm > 0.0 {
        if let Ok((nx, _, nn)) = damped_step(system, &x, &f, norm, gamma, 0.0) {
            if nn < norm {
                (x, norm) = (nx, nn);
                iterations += 1;
            }
        }
    }
    let (mut s, u0) = x.unpack()?;
    if s.coeffs()[1].re < 0.0 {
        s = s.rotated(std::f64::consts::PI);
    }
    Ok(BranchPoint {
        gamma,
        omega: s.omega(),
        u0,
        spectrum: s,
        residual_norm: norm,
        converged: status == SolveStatus::Converged,
        iterations,
        status,
    })
}

fn damped_step(
    system: &HbSystem,
    x: &UnknownVector,
    f: &[f64],
    norm: f64,
    gamma: f64,
    tol: f64,
) -> Result<(UnknownVector, Vec<f64>, f64), SolveStatus> {
    let jac = system.jacobian(x, gamma).map_err(|_| SolveStatus::InvalidState)?;
    let svd = jac.svd(true, true);
    let (smax, smin) = svd
        .singular_values
        .iter()
        .fold((0.0f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
    if !(smax / smin <= SINGULAR_CONDITION) {
        return Err(SolveStatus::SingularJacobian);
    }
    let step = svd
        .solve(&-DVector::from_column_slice(f), 0.0)
        .map_err(|_| SolveStatus::SingularJacobian)?;
    let mut lambda = 1.0;
    while lambda >= 1e-10 {
        let trial = UnknownVector(x.0.iter().zip(step.iter()).map(|(a, d)| a + lambda * d).collect());
        if let Ok(ft) = system.assemble(&trial, gamma) {
            let nt = sup_norm(&ft);
            if nt.is_finite() && (nt < norm || nt <= tol) {
                return Ok((trial, ft, nt));
            }
        }
        lambda *= 0.5;
    }
    Err(SolveStatus::Stalled)
}

/// Starting point from the local laws at threshold: `P₁ = √(α δ)` (real),
/// `P₂ = β₂⁻¹ H_{2,1} P₁²`, `U₀ = √u₀₀`, `ω = ω₀ + ω′ δ`. On the side where
/// no branch exists the amplitude `√|αδ|` is used so Newton can collapse it.
pub fn predictor(
    system: &HbSystem,
    report: &BifurcationReport,
    gamma: f64,
) -> Result<UnknownVector, HbError> {
    let p = system.params.with_gamma(gamma);
    let omega = report.omega_at(gamma);
    let a = (report.alpha * (gamma - report.gamma0)).abs().sqrt();
    let beta2 = p.linear_eigenvalue(2, omega)?;
    if beta2.norm() < 1e-12 {
        return Err(HbError::ResonantPredictor(beta2.norm()));
    }
    let small = ClarinetParams { order: 2, ..p.clone() };
    let h21 = small.coefficients(omega)?.h(2, 1);
    let n = system.order();
    let s = Spectrum::from_fn(omega, n, |q| match q {
        1 => Complex64::new(a, 0.0),
        2 => h21 * a * a / beta2,
        _ => Complex64::new(0.0, 0.0),
    })?;
    Ok(UnknownVector::pack(&s, p.static_flow()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Spacing {
    #[default]
    Log,
    Linear,
}

/// `γ₀ + δ` for `steps` values of `δ` between the given (signed) offsets.
/// Logarithmic spacing requires both offsets nonzero and of the same sign.
pub fn gamma_schedule(
    gamma0: f64,
    delta_start: f64,
    delta_end: f64,
    steps: usize,
    spacing: Spacing,
) -> Result<Vec<f64>, HbError> {
    if steps == 0 {
        return Err(HbError::NoSteps);
    }
    if steps == 1 {
        return Ok(vec![gamma0 + delta_start]);
    }
    let t = |k: usize| k as f64 / (steps - 1) as f64;
    Ok(match spacing {
        Spacing::Linear => (0..steps)
            .map(|k| gamma0 + delta_start + (delta_end - delta_start) * t(k))
            .collect(),
        Spacing::Log => {
            let sign = delta_start.signum();
            if delta_start == 0.0 || delta_end == 0.0 || sign != delta_end.signum() {
                return Err(HbError::InvalidSchedule(format!(
                    "log spacing needs same-sign nonzero offsets, got {delta_start} and {delta_end}"
                )));
            }
            let (a, b) = (delta_start.abs().ln(), delta_end.abs().ln());
            (0..steps).map(|k| gamma0 + sign * (a + (b - a) * t(k)).exp()).collect()
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    /// Set when the march stopped before the last requested `γ`.
    pub stopped: Option<String>,
}

impl Branch {
    /// True when the converged points collapsed onto the static regime.
    pub fn is_trivial(&self) -> bool {
        !self.points.is_empty() && self.points.iter().all(|p| p.is_trivial())
    }
}

/// Solves at `gammas[0]` from the amplitude-law predictor, then at each
/// following value from the previous solution.
pub fn continue_branch(
    system: &HbSystem,
    report: &BifurcationReport,
    gammas: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Branch, HbError> {
    let Some(&first) = gammas.first() else {
        return Err(HbError::NoSteps);
    };
    let seed = predictor(system, report, first)?;
    let point = newton_solve(system, &seed, first, tol, max_iter)?;
    if !point.converged {
        return Err(HbError::FirstPoint { gamma: first, status: point.status });
    }
    let mut points = vec![point];
    let mut stopped = None;
    for &gamma in &gammas[1..] {
        let seed = points.last().expect("non-empty").unknowns();
        let point = newton_solve(system, &seed, gamma, tol, max_iter)?;
        if !point.converged {
            stopped = Some(format!("no convergence at gamma = {gamma} ({})", point.status));
            break;
        }
        points.push(point);
    }
    Ok(Branch { points, stopped })
}

/// One row of the branch CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchRow {
    pub gamma: f64,
    pub omega: f64,
    pub u0: f64,
    pub p1_arg: f64,
    /// `|P_q|` for `q = 1..=N`.
    pub magnitudes: Vec<f64>,
    pub residual: f64,
    pub converged: bool,
}

impl BranchRow {
    pub fn from_point(p: &BranchPoint) -> Self {
        Self {
            gamma: p.gamma,
            omega: p.omega,
            u0: p.u0,
            p1_arg: p.spectrum.coeffs()[1].arg(),
            magnitudes: p.spectrum.magnitudes()[1..].to_vec(),
            residual: p.residual_norm,
            converged: p.converged,
        }
    }

    /// Spectrum with the stored magnitudes, `P₁` at its stored phase and the
    /// other harmonics real. Enough for magnitude-based checks.
    pub fn magnitude_spectrum(&self) -> Result<Spectrum, HbError> {
        let mut c = vec![Complex64::new(0.0, 0.0)];
        for (k, &m) in self.magnitudes.iter().enumerate() {
            c.push(if k == 0 { Complex64::from_polar(m, self.p1_arg) } else { Complex64::new(m, 0.0) });
        }
        Ok(Spectrum::new(self.omega, c)?)
    }
}

pub fn branch_csv_header(order: usize) -> String {
    let mut cols = vec!["gamma".to_string(), "omega".into(), "U0".into(), "P1_abs".into(), "P1_arg".into()];
    cols.extend((2..=order).map(|q| format!("P{q}_abs")));
    cols.extend(["residual".to_string(), "converged".into()]);
    cols.join(",")
}

pub fn write_branch_csv(rows: &[BranchRow]) -> String {
    let order = rows.first().map_or(1, |r| r.magnitudes.len());
    let mut out = branch_csv_header(order);
    out.push('\n');
    for r in rows {
        let mut f = vec![r.gamma, r.omega, r.u0, r.magnitudes[0], r.p1_arg];
        f.extend(&r.magnitudes[1..]);
        f.push(r.residual);
        let mut line: Vec<String> = f.iter().map(|v| format!("{v:.16e}")).collect();
        line.push(r.converged.to_string());
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn read_branch_csv(text: &str) -> Result<Vec<BranchRow>, HbError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| HbError::Csv("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let order = cols.len().checked_sub(6).filter(|&n| n >= 1).ok_or_else(|| {
        HbError::Csv(format!("header has {} columns", cols.len()))
    })?;
    if header.trim() != branch_csv_header(order) {
        return Err(HbError::Csv(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(HbError::Csv(format!("row {} has {} fields", k + 1, fields.len())));
        }
        let num = |i: usize| {
            fields[i]
                .parse::<f64>()
                .map_err(|e| HbError::Csv(format!("row {} column {}: {e}", k + 1, cols[i])))
        };
        let mut magnitudes = vec![num(3)?];
        for i in 5..5 + order - 1 {
            magnitudes.push(num(i)?);
        }
        let converged = match fields[cols.len() - 1] {
            "true" => true,
            "false" => false,
            other => return Err(HbError::Csv(format!("row {}: converged = {other:?}", k + 1))),
        };
        rows.push(BranchRow {
            gamma: num(0)?,
            omega: num(1)?,
            u0: num(2)?,
            p1_arg: num(4)?,
            magnitudes,
            residual: num(cols.len() - 2)?,
            converged,
        });
    }
    Ok(rows)
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn unknown_vector_round_trip(order in 1usize..8, seed in proptest::collection::vec(-1.0..1.0f64, 40), u0 in 0.01..1.0f64, omega in 0.1..5.0f64) {
            let s = Spectrum::from_fn(omega, order, |q| Complex64::new(seed[2 * q], if q == 0 { 0.0 } else { seed[2 * q + 1] })).unwrap();
            let v = UnknownVector::pack(&s, u0);
            prop_assert_eq!(v.order(), order);
            let (back, u) = v.unpack().unwrap();
            prop_assert_eq!(back, s);
            prop_assert_eq!(u, u0);
        }

        #[test]
        fn schedule_hits_endpoints_monotonically(g0 in 0.1..0.9f64, a in 1e-6..1e-3f64, ratio in 1.5..1e3f64, steps in 2usize..40, log in any::<bool>()) {
            let spacing = if log { Spacing::Log } else { Spacing::Linear };
            let g = gamma_schedule(g0, a, a * ratio, steps, spacing).unwrap();
            prop_assert_eq!(g.len(), steps);
            prop_assert!((g[0] - (g0 + a)).abs() < 1e-14);
            prop_assert!((g[steps - 1] - (g0 + a * ratio)).abs() < 1e-12);
            prop_assert!(g.windows(2).all(|w| w[1] > w[0]));
        }
    }
}
