//! Onset of oscillation: the threshold `(γ₀, ω₀)` where the eigenvalue of the
//! static regime at the fundamental vanishes, and the local laws of the
//! bifurcating branch.
//!
//! Near threshold the first-harmonic equation reduces to
//! `β₁(γ, ω) P₁ = D₁ |P₁|² P₁`. Splitting it along and across `D₁` gives the
//! frequency slope `ω′ = −Im[D̄₁ ∂_γβ₁] / Im[D̄₁ ∂_ωβ₁]` and the amplitude law
//! `|P₁|² = α (γ − γ₀)` with `α = (∂_γβ₁ + ω′ ∂_ωβ₁) / D₁`, which is real.

use std::collections::VecDeque;
use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::clarinet::{ClarinetCoefficients, ClarinetError, ClarinetParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BifurcationError {
    #[error("no-bracket: the characteristic has no sign-change cell in the scanned range")]
    NoBracket,
    #[error("multiple-bracket: {0} separate sign-change regions in the scanned range")]
    MultipleBrackets(usize),
    #[error("newton-divergence: threshold refinement stalled at |beta| = {0:.3e}")]
    NewtonDivergence(f64),
    #[error("invalid scan range {name} = [{lo}, {hi}]")]
    InvalidRange { name: &'static str, lo: f64, hi: f64 },
    #[error("grid must have at least 2 cells per axis")]
    InvalidGrid,
    #[error("second harmonic is resonant: |beta_2| = {0:.3e}")]
    ResonantSecondHarmonic(f64),
    #[error("transversality failure: |D1| = {0:.3e}")]
    Transversality(f64),
    #[error("frequency slope undefined: Im[conj(D1) dbeta/domega] = {0:.3e}")]
    VanishingDenominator(f64),
    #[error("finite-difference derivative not converged (relative mismatch {0:.3e})")]
    Richardson(f64),
    #[error(transparent)]
    Model(#[from] ClarinetError),
}

/// A one-parameter family whose static regime loses stability through a pair
/// of eigenvalues at the fundamental.
pub trait HopfModel: Sync {
    /// `β₁(γ, ω)`.
    fn characteristic(&self, gamma: f64, omega: f64) -> Result<Complex64, BifurcationError>;

    /// Cubic coefficient `D₁` of the reduced first-harmonic equation.
    fn d1(&self, gamma: f64, omega: f64) -> Result<Complex64, BifurcationError>;
}

/// Kernel values of the harmonic balance system linearized at a stationary
/// point: `β_q P_q = Σ g₂(q,n) P_{q−n} P_n + Σ g₃(q,n,m) P_{q−n} P_{n−m} P_m`.
pub trait NormalFormKernels {
    fn eigenvalue(&self, q: isize) -> Result<Complex64, BifurcationError>;
    fn quadratic(&self, q: isize, n: isize) -> Complex64;
    fn cubic(&self, q: isize, n: isize, m: isize) -> Complex64;

    /// Coupling `κ` through an auxiliary mean unknown that shifts `β₁` by
    /// `κ (g₂(0,1) + g₂(0,−1)) |P₁|²`. Zero when there is none.
    fn mean_flow_gain(&self) -> Complex64 {
        Complex64::new(0.0, 0.0)
    }
}

/// `D₁ = β₂⁻¹ g₂(2,1)(g₂(1,2) + g₂(1,−1)) + g₃(1,0,1) + g₃(1,0,−1) + g₃(1,2,1)
/// + κ (g₂(0,1) + g₂(0,−1))`.
pub fn compute_d1(k: &impl NormalFormKernels) -> Result<Complex64, BifurcationError> {
    let beta2 = k.eigenvalue(2)?;
    if beta2.norm() < 1e-12 {
        return Err(BifurcationError::ResonantSecondHarmonic(beta2.norm()));
    }
    let second = k.quadratic(2, 1) * (k.quadratic(1, 2) + k.quadratic(1, -1)) / beta2;
    let cubic = k.cubic(1, 0, 1) + k.cubic(1, 0, -1) + k.cubic(1, 2, 1);
    let mean = k.mean_flow_gain() * (k.quadratic(0, 1) + k.quadratic(0, -1));
    Ok(second + cubic + mean)
}

/// Normal-form kernels of the reed model around its static regime.
#[derive(Debug, Clone)]
pub struct StationaryKernels {
    params: ClarinetParams,
    omega: f64,
    coeffs: ClarinetCoefficients,
}

impl StationaryKernels {
    pub fn new(params: &ClarinetParams, omega: f64) -> Result<Self, BifurcationError> {
        // the normal form only needs harmonics up to 2
        let small = ClarinetParams { order: 1, ..params.clone() };
        let coeffs = small.coefficients(omega)?;
        Ok(Self { params: small, omega, coeffs })
    }

    pub fn coefficients(&self) -> &ClarinetCoefficients {
        &self.coeffs
    }
}

impl NormalFormKernels for StationaryKernels {
    fn eigenvalue(&self, q: isize) -> Result<Complex64, BifurcationError> {
        Ok(self.params.linear_eigenvalue(q, self.omega)?)
    }

    fn quadratic(&self, q: isize, n: isize) -> Complex64 {
        self.coeffs.h(q, n)
    }

    fn cubic(&self, q: isize, n: isize, m: isize) -> Complex64 {
        self.coeffs.c(q, n, m)
    }

    /// Eliminating `U₀ ≈ √u₀₀ + (H₀,₁ + H₀,₋₁)|P₁|² / (2√u₀₀)` from the
    /// linear term `2U₀Ŷ(ω)P₁` gives `κ = −Ŷ(ω)/√u₀₀`.
    fn mean_flow_gain(&self) -> Complex64 {
        -self.coeffs.admittance(1).expect("harmonic 1 is sampled") / self.params.static_flow()
    }
}

/// The reed model with `γ` as bifurcation parameter.
#[derive(Debug, Clone)]
pub struct ClarinetModel {
    pub params: ClarinetParams,
}

impl ClarinetModel {
    pub fn new(params: ClarinetParams) -> Self {
        Self { params }
    }
}

impl HopfModel for ClarinetModel {
    fn characteristic(&self, gamma: f64, omega: f64) -> Result<Complex64, BifurcationError> {
        Ok(self.params.with_gamma(gamma).characteristic(omega)?)
    }

    fn d1(&self, gamma: f64, omega: f64) -> Result<Complex64, BifurcationError> {
        compute_d1(&StationaryKernels::new(&self.params.with_gamma(gamma), omega)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanGrid {
    pub gamma_range: (f64, f64),
    pub omega_range: (f64, f64),
    pub gamma_cells: usize,
    pub omega_cells: usize,
}

impl ScanGrid {
    /// `γ ∈ [0.01, 0.99]`, `ω ∈ [0.5ω₁, 1.5ω₁]`, 400 × 400 cells.
    pub fn around(omega1: f64) -> Self {
        Self {
            gamma_range: (0.01, 0.99),
            omega_range: (0.5 * omega1, 1.5 * omega1),
            gamma_cells: 400,
            omega_cells: 400,
        }
    }

    fn validate(&self) -> Result<(), BifurcationError> {
        for (name, (lo, hi)) in [("gamma_range", self.gamma_range), ("omega_range", self.omega_range)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(BifurcationError::InvalidRange { name, lo, hi });
            }
        }
        if self.gamma_cells < 2 || self.omega_cells < 2 {
            return Err(BifurcationError::InvalidGrid);
        }
        Ok(())
    }

    pub fn gamma(&self, i: usize) -> f64 {
        let (lo, hi) = self.gamma_range;
        lo + (hi - lo) * i as f64 / self.gamma_cells as f64
    }

    pub fn omega(&self, j: usize) -> f64 {
        let (lo, hi) = self.omega_range;
        lo + (hi - lo) * j as f64 / self.omega_cells as f64
    }
}

/// Cells `(i, j)` of the grid in which both `Re β` and `Im β` take both signs
/// at the corners, in lexicographic order.
pub fn sign_change_cells(
    model: &impl HopfModel,
    grid: &ScanGrid,
) -> Result<Vec<(usize, usize)>, BifurcationError> {
    grid.validate()?;
    let (ng, nw) = (grid.gamma_cells + 1, grid.omega_cells + 1);
    let nodes: Vec<Complex64> = (0..ng * nw)
        .into_par_iter()
        .map(|k| model.characteristic(grid.gamma(k / nw), grid.omega(k % nw)))
        .collect::<Result<_, _>>()?;
    let at = |i: usize, j: usize| nodes[i * nw + j];
    let changes = |v: [f64; 4]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        lo <= 0.0 && hi >= 0.0 && lo < hi
    };
    let mut cells = Vec::new();
    for i in 0..grid.gamma_cells {
        for j in 0..grid.omega_cells {
            let c = [at(i, j), at(i + 1, j), at(i, j + 1), at(i + 1, j + 1)];
            if changes(c.map(|z| z.re)) && changes(c.map(|z| z.im)) {
                cells.push((i, j));
            }
        }
    }
    Ok(cells)
}

/// Groups cells into 8-connected clusters; each cluster lists its cells in
/// lexicographic order and clusters are ordered by their first cell.
pub fn cluster_cells(cells: &[(usize, usize)]) -> Vec<Vec<(usize, usize)>> {
    let mut seen = vec![false; cells.len()];
    let mut clusters = Vec::new();
    for start in 0..cells.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut cluster = vec![cells[start]];
        let mut queue = VecDeque::from([start]);
        while let Some(k) = queue.pop_front() {
            let (i, j) = cells[k];
            for (other, &(a, b)) in cells.iter().enumerate() {
                if !seen[other] && a.abs_diff(i) <= 1 && b.abs_diff(j) <= 1 {
                    seen[other] = true;
                    cluster.push((a, b));
                    queue.push_back(other);
                }
            }
        }
        cluster.sort_unstable();
        clusters.push(cluster);
    }
    clusters
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub gamma0: f64,
    pub omega0: f64,
    /// `|β₁(γ₀, ω₀)|` after refinement.
    pub residual: f64,
    /// Sign-change cells found by the scan.
    pub cells: usize,
}

const THRESHOLD_TOL: f64 = 1e-10;

/// Scans the grid for a single region where `β₁` vanishes and refines it by
/// a two-dimensional Newton iteration.
pub fn find_threshold(model: &impl HopfModel, grid: &ScanGrid) -> Result<Threshold, BifurcationError> {
    let cells = sign_change_cells(model, grid)?;
    let clusters = cluster_cells(&cells);
    match clusters.len() {
        0 => return Err(BifurcationError::NoBracket),
        1 => {}
        n => return Err(BifurcationError::MultipleBrackets(n)),
    }
    let (i, j) = clusters[0][0];
    let dg = grid.gamma(1) - grid.gamma(0);
    let dw = grid.omega(1) - grid.omega(0);
    let start = (grid.gamma(i) + 0.5 * dg, grid.omega(j) + 0.5 * dw);
    let (gamma0, omega0, residual) = refine_root(model, start, (dg, dw))?;
    Ok(Threshold { gamma0, omega0, residual, cells: cells.len() })
}

fn refine_root(
    model: &impl HopfModel,
    (mut g, mut w): (f64, f64),
    (dg, dw): (f64, f64),
) -> Result<(f64, f64, f64), BifurcationError> {
    let mut beta = model.characteristic(g, w)?;
    for _ in 0..50 {
        if beta.norm() <= 1e-14 {
            break;
        }
        let hg = 1e-7 * g.abs().max(dg);
        let hw = 1e-7 * w.abs().max(dw);
        let bg = (model.characteristic(g + hg, w)? - model.characteristic(g - hg, w)?) / (2.0 * hg);
        let bw = (model.characteristic(g, w + hw)? - model.characteristic(g, w - hw)?) / (2.0 * hw);
        let det = bg.re * bw.im - bw.re * bg.im;
        if det == 0.0 || !det.is_finite() {
            return Err(BifurcationError::NewtonDivergence(beta.norm()));
        }
        let step_g = -(bw.im * beta.re - bw.re * beta.im) / det;
        let step_w = -(-bg.im * beta.re + bg.re * beta.im) / det;
        let mut lambda = 1.0;
        loop {
            let (ng, nw) = (g + lambda * step_g, w + lambda * step_w);
            if let Ok(nb) = model.characteristic(ng, nw) {
                if nb.norm() < beta.norm() || lambda < 1e-3 {
                    g = ng;
                    w = nw;
                    beta = nb;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-6 {
                return Err(BifurcationError::NewtonDivergence(beta.norm()));
            }
        }
    }
    if beta.norm() <= THRESHOLD_TOL {
        Ok((g, w, beta.norm()))
    } else {
        Err(BifurcationError::NewtonDivergence(beta.norm()))
    }
}

/// Central difference of `f` with step `h`, checked against step `2h`.
fn derivative(
    f: impl Fn(f64) -> Result<Complex64, BifurcationError>,
    x: f64,
    h: f64,
) -> Result<Complex64, BifurcationError> {
    let d1 = (f(x + h)? - f(x - h)?) / (2.0 * h);
    let d2 = (f(x + 2.0 * h)? - f(x - 2.0 * h)?) / (4.0 * h);
    let scale = d1.norm().max(1e-300);
    let mismatch = (d1 - d2).norm() / scale;
    if mismatch > 1e-6 && (d1 - d2).norm() > 1e-12 {
        return Err(BifurcationError::Richardson(mismatch));
    }
    // Richardson extrapolation of the two estimates
    Ok((4.0 * d1 - d2) / 3.0)
}

/// `(∂β₁/∂γ, ∂β₁/∂ω)` at `(gamma, omega)` by central differences.
pub fn characteristic_derivatives(
    model: &impl HopfModel,
    gamma: f64,
    omega: f64,
) -> Result<(Complex64, Complex64), BifurcationError> {
    let bg = derivative(|g| model.characteristic(g, omega), gamma, 1e-6 * gamma.abs())?;
    let bw = derivative(|w| model.characteristic(gamma, w), omega, 1e-6 * omega.abs())?;
    Ok((bg, bw))
}

/// `ω′(γ₀) = −Im[D̄₁ ∂_γβ₁] / Im[D̄₁ ∂_ωβ₁]`.
pub fn frequency_slope(
    dbeta_dgamma: Complex64,
    dbeta_domega: Complex64,
    d1: Complex64,
) -> Result<f64, BifurcationError> {
    let den = (d1.conj() * dbeta_domega).im;
    let scale = d1.norm() * dbeta_domega.norm();
    if den.abs() <= 1e-12 * scale.max(1.0) {
        return Err(BifurcationError::VanishingDenominator(den));
    }
    Ok(-(d1.conj() * dbeta_dgamma).im / den)
}

/// `α = (∂_γβ₁ + ω′ ∂_ωβ₁) / D₁` as `(Re α, |Im α|)`.
pub fn compute_alpha(
    dbeta_dgamma: Complex64,
    dbeta_domega: Complex64,
    d1: Complex64,
) -> Result<(f64, f64), BifurcationError> {
    if d1.norm() < 1e-12 {
        return Err(BifurcationError::Transversality(d1.norm()));
    }
    let slope = frequency_slope(dbeta_dgamma, dbeta_domega, d1)?;
    let alpha = (dbeta_dgamma + slope * dbeta_domega) / d1;
    Ok((alpha.re, alpha.im.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Direct,
    Inverse,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Direct => "direct",
            Direction::Inverse => "inverse",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BifurcationReport {
    pub gamma0: f64,
    pub omega0: f64,
    pub characteristic_residual: f64,
    pub dbeta_dgamma: Complex64,
    pub dbeta_domega: Complex64,
    pub d1: Complex64,
    pub alpha: f64,
    pub im_alpha_residual: f64,
    /// `∂_γβ₁ / D₁` without the frequency correction; its imaginary part
    /// measures how much the frequency shift matters.
    pub alpha_partial: Complex64,
    pub direction: Direction,
    pub omega_slope: f64,
}

impl BifurcationReport {
    /// Builds the report at a known threshold.
    pub fn at(model: &impl HopfModel, threshold: &Threshold) -> Result<Self, BifurcationError> {
        let (g, w) = (threshold.gamma0, threshold.omega0);
        let (bg, bw) = characteristic_derivatives(model, g, w)?;
        let d1 = model.d1(g, w)?;
        let (alpha, im_alpha_residual) = compute_alpha(bg, bw, d1)?;
        let omega_slope = frequency_slope(bg, bw, d1)?;
        Ok(Self {
            gamma0: g,
            omega0: w,
            characteristic_residual: threshold.residual,
            dbeta_dgamma: bg,
            dbeta_domega: bw,
            d1,
            alpha,
            im_alpha_residual,
            alpha_partial: bg / d1,
            direction: if alpha > 0.0 { Direction::Direct } else { Direction::Inverse },
            omega_slope,
        })
    }

    pub fn analyze(model: &impl HopfModel, grid: &ScanGrid) -> Result<Self, BifurcationError> {
        Self::at(model, &find_threshold(model, grid)?)
    }

    /// Amplitude-law prediction of `|P₁|` at `gamma`; zero on the side where
    /// no oscillating branch exists.
    pub fn amplitude(&self, gamma: f64) -> f64 {
        (self.alpha * (gamma - self.gamma0)).max(0.0).sqrt()
    }

    pub fn omega_at(&self, gamma: f64) -> f64 {
        self.omega0 + self.omega_slope * (gamma - self.gamma0)
    }

    /// Flat `key = value` lines, full precision.
    pub fn to_key_values(&self) -> String {
        let c = |z: Complex64| format!("{:.16e} {:.16e}", z.re, z.im);
        [
            format!("gamma0 = {:.16e}", self.gamma0),
            format!("omega0 = {:.16e}", self.omega0),
            format!("characteristic_residual = {:.16e}", self.characteristic_residual),
            format!("dbeta_dgamma = {}", c(self.dbeta_dgamma)),
            format!("dbeta_domega = {}", c(self.dbeta_domega)),
            format!("D1 = {}", c(self.d1)),
            format!("alpha = {:.16e}", self.alpha),
            format!("im_alpha_residual = {:.16e}", self.im_alpha_residual),
            format!("alpha_partial = {}", c(self.alpha_partial)),
            format!("direction = {}", self.direction),
            format!("omega_slope = {:.16e}", self.omega_slope),
        ]
        .join("\n")
            + "\n"
    }
}

impl fmt::Display for BifurcationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "threshold gamma0 = {:.6}, omega0 = {:.6}", self.gamma0, self.omega0)?;
        writeln!(f, "alpha = {:.6} ({}), |Im alpha| = {:.3e}", self.alpha, self.direction, self.im_alpha_residual)?;
        writeln!(f, "D1 = {:.6} {:+.6}i", self.d1.re, self.d1.im)?;
        write!(f, "frequency slope = {:.6}", self.omega_slope)
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn complex() -> impl Strategy<Value = Complex64> {
        (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(re, im)| Complex64::new(re, im))
    }

    proptest! {
        #[test]
        fn alpha_is_real_and_scale_covariant(bg in complex(), bw in complex(), d1 in complex(), k in 0.1..10.0f64) {
            prop_assume!(d1.norm() > 0.1 && (d1.conj() * bw).im.abs() > 0.05);
            let slope = frequency_slope(bg, bw, d1).unwrap();
            let alpha = (bg + slope * bw) / d1;
            prop_assert!(alpha.im.abs() <= 1e-9 * (1.0 + alpha.norm()));
            // scaling the whole reduced equation leaves both laws unchanged
            let kc = Complex64::new(0.0, k);
            let (a, _) = compute_alpha(bg, bw, d1).unwrap();
            let (b, _) = compute_alpha(kc * bg, kc * bw, kc * d1).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            let s2 = frequency_slope(kc * bg, kc * bw, kc * d1).unwrap();
            prop_assert!((slope - s2).abs() <= 1e-9 * (1.0 + slope.abs()));
        }
    }
}
