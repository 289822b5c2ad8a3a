//! The reed-instrument model: Bernoulli flow through the reed channel, a
//! linear reed, and the modal bore.
//!
//! In the time domain the flow obeys `u² = ζ²(1-γ+h)²(γ-p)` with `h = D̂ p`
//! and `p = Ẑ u`. Squaring makes the nonlinearity an exact cubic polynomial,
//! so the harmonic balance equations are
//!
//! ```text
//! q ≠ 0:  (2U₀Ŷ(q) − A_q) P_q = Σ_n H_{q,n} P_{q−n} P_n + Σ_{n,m} C_{q,n,m} P_{q−n} P_{n−m} P_m
//! q = 0:  U₀² = u₀₀ + A₀P₀ + Σ_n H_{0,n} P_{−n} P_n + Σ_{n,m} C_{0,n,m} P_{−n} P_{n−m} P_m
//! ```
//!
//! with the mean flow `U₀` kept as its own unknown. Equivalently, the residual
//! is the spectrum of `ũ²` minus the spectrum of the Bernoulli right-hand
//! side, where `ũ` has mean `U₀` and harmonics `Ŷ(q)P_q`. That is how
//! [`ClarinetParams::residual`] evaluates it, through separable kernels;
//! [`ClarinetCoefficients::residual_direct`] sums the coefficient tables.

use num_complex::Complex64;
use thiserror::Error;

use crate::spectrum::{
    convolve, multilinear_term, KernelSet, Sequence, Spectrum, SpectrumError, DEFAULT_ORDER,
};
use crate::transfer::{ModalImpedance, ReedResponse, TransferError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClarinetError {
    #[error("invalid model parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("mean flow U0 must be positive, got {0}")]
    NonPositiveMeanFlow(f64),
    #[error("angular frequency must be positive, got {0}")]
    InvalidOmega(f64),
    #[error("outside the small-oscillation regime: {condition} violated ({value:.3e})")]
    Regime { condition: &'static str, value: f64 },
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

/// Embouchure, blowing pressure, bore, reed and truncation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClarinetParams {
    pub zeta: f64,
    pub gamma: f64,
    pub impedance: ModalImpedance,
    pub reed: ReedResponse,
    pub order: usize,
}

pub const DEFAULT_ZETA: f64 = 0.5;
pub const DEFAULT_GAMMA: f64 = 0.5;
pub const DEFAULT_REED_GAIN: f64 = 1.0;

impl Default for ClarinetParams {
    fn default() -> Self {
        Self {
            zeta: DEFAULT_ZETA,
            gamma: DEFAULT_GAMMA,
            impedance: ModalImpedance::clarinet_default(),
            reed: ReedResponse::QuasiStatic { gain: DEFAULT_REED_GAIN },
            order: DEFAULT_ORDER,
        }
    }
}

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

impl ClarinetParams {
    pub fn new(
        zeta: f64,
        gamma: f64,
        impedance: ModalImpedance,
        reed: ReedResponse,
        order: usize,
    ) -> Result<Self, ClarinetError> {
        let p = Self { zeta, gamma, impedance, reed, order };
        p.validate()?;
        Ok(p)
    }

    /// `ζ > 0`, `0 < γ < 1`, order at least 1, valid reed.
    pub fn validate(&self) -> Result<(), ClarinetError> {
        if !(self.zeta.is_finite() && self.zeta > 0.0) {
            return Err(ClarinetError::InvalidParameter { name: "zeta", value: self.zeta });
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(ClarinetError::InvalidParameter { name: "gamma", value: self.gamma });
        }
        if self.order == 0 {
            return Err(ClarinetError::InvalidParameter { name: "order", value: 0.0 });
        }
        self.reed.validate()?;
        Ok(())
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { gamma, ..self.clone() }
    }

    /// Mean flow squared of the static regime, `ζ²γ(1-γ)²`.
    pub fn u00(&self) -> f64 {
        self.zeta * self.zeta * self.gamma * (1.0 - self.gamma).powi(2)
    }

    /// Positive static mean flow `ζ(1-γ)√γ`.
    pub fn static_flow(&self) -> f64 {
        self.u00().sqrt()
    }

    /// `A(ω) = 2ζ²γ(1-γ)D̂(ω) − ζ²(1-γ)²`, so that `A_q = A(qω)`.
    pub fn linear_gain(&self, omega: f64) -> Complex64 {
        let z2 = self.zeta * self.zeta;
        let g = self.gamma;
        2.0 * z2 * g * (1.0 - g) * self.reed.eval(omega) - z2 * (1.0 - g) * (1.0 - g)
    }

    /// `β₁(γ, ω) = 2√u₀₀ Ŷ(ω) − A(ω)`: eigenvalue of the linearization about
    /// the static regime at harmonic one.
    pub fn characteristic(&self, omega: f64) -> Result<Complex64, ClarinetError> {
        Ok(2.0 * self.static_flow() * self.impedance.admittance(omega)? - self.linear_gain(omega))
    }

    /// Same eigenvalue at harmonic `q` of fundamental `omega`.
    pub fn linear_eigenvalue(&self, q: isize, omega: f64) -> Result<Complex64, ClarinetError> {
        self.characteristic(q as f64 * omega)
    }

    /// Flow through the reed channel, `u = ζ(1−γ+h)√(γ−p)`.
    pub fn bernoulli_flow(&self, p: f64, h: f64) -> Result<f64, ClarinetError> {
        let drop = self.gamma - p;
        if !(drop >= 0.0) {
            return Err(ClarinetError::Regime { condition: "gamma - p >= 0", value: drop });
        }
        let opening = 1.0 - self.gamma + h;
        if !(opening >= 0.0) {
            return Err(ClarinetError::Regime { condition: "1 - gamma + h >= 0", value: opening });
        }
        Ok(self.zeta * opening * drop.sqrt())
    }

    /// The mean-pressure balance `P₀ − Ẑ(0)U₀`; `Ẑ(0) = 0` for the modal bore.
    pub fn mean_pressure_residual(&self, p0: f64, u0: f64) -> f64 {
        p0 - (self.impedance.impedance(0.0) * u0).re
    }

    fn kernels(&self, omega: f64, order: usize) -> Result<ResidualKernels, ClarinetError> {
        ResidualKernels::new(self, omega, order)
    }

    /// Harmonic balance residual `R_q` for `q = 0..=N` (index 0 is the
    /// mean-flow equation). The fundamental is taken from `s`.
    pub fn residual(&self, s: &Spectrum, u0: f64) -> Result<Vec<Complex64>, ClarinetError> {
        let full = self.residual_two_sided(s, u0)?;
        Ok((0..=s.order()).map(|q| full.get(q as isize)).collect())
    }

    /// Residual over `|q| <= N`, negative harmonics included.
    pub fn residual_two_sided(&self, s: &Spectrum, u0: f64) -> Result<Sequence, ClarinetError> {
        if !(u0 > 0.0) {
            return Err(ClarinetError::NonPositiveMeanFlow(u0));
        }
        let k = self.kernels(s.omega(), s.order())?;
        k.residual(&s.two_sided(), u0)
    }

    /// Real layout `[Re R_1, Im R_1, …, Re R_N, Im R_N, Re R_0]`.
    pub fn residual_real(&self, s: &Spectrum, u0: f64) -> Result<Vec<f64>, ClarinetError> {
        Ok(flatten(&self.residual(s, u0)?))
    }

    /// Directional derivative of [`residual`](Self::residual) along a change
    /// `dp` of the harmonics and `du0` of the mean flow, at fixed `ω`.
    pub fn residual_derivative(
        &self,
        s: &Spectrum,
        u0: f64,
        dp: &Spectrum,
        du0: f64,
    ) -> Result<Vec<Complex64>, ClarinetError> {
        let k = self.kernels(s.omega(), s.order())?;
        let out = k.derivative(&s.two_sided(), u0, &dp.two_sided(), du0)?;
        Ok((0..=s.order()).map(|q| out.get(q as isize)).collect())
    }

    /// Partial derivative of the residual with respect to the fundamental.
    pub fn residual_omega_derivative(
        &self,
        s: &Spectrum,
        u0: f64,
    ) -> Result<Vec<Complex64>, ClarinetError> {
        let k = self.kernels(s.omega(), s.order())?;
        let out = k.omega_derivative(&s.two_sided(), u0)?;
        Ok((0..=s.order()).map(|q| out.get(q as isize)).collect())
    }

    pub fn coefficients(&self, omega: f64) -> Result<ClarinetCoefficients, ClarinetError> {
        ClarinetCoefficients::assemble(self, omega)
    }
}

/// `[Re R_1, Im R_1, …, Re R_N, Im R_N, Re R_0]`.
pub fn flatten(r: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * r.len() - 1);
    for v in &r[1..] {
        out.push(v.re);
        out.push(v.im);
    }
    out.push(r[0].re);
    out
}

/// Filters sampled at `qω` for `|q| <= N`, plus their `ω`-derivatives.
struct ResidualKernels {
    zeta: f64,
    gamma: f64,
    u00: f64,
    reed: Sequence,
    reed_d: Sequence,
    admittance: Sequence,
    admittance_d: Sequence,
    gain: Sequence,
    gain_d: Sequence,
    one: Sequence,
}

impl ResidualKernels {
    fn new(p: &ClarinetParams, omega: f64, order: usize) -> Result<Self, ClarinetError> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(ClarinetError::InvalidOmega(omega));
        }
        let n = order;
        let z2 = p.zeta * p.zeta;
        let g = p.gamma;
        let reed = Sequence::from_fn(n, |q| p.reed.eval(q as f64 * omega));
        let reed_d = Sequence::from_fn(n, |q| q as f64 * p.reed.derivative(q as f64 * omega));
        let mut admittance = Sequence::zeros(n);
        let mut admittance_d = Sequence::zeros(n);
        for q in (-(n as isize)..=n as isize).filter(|&q| q != 0) {
            let w = q as f64 * omega;
            admittance.set(q, p.impedance.admittance(w)?);
            admittance_d.set(q, q as f64 * p.impedance.admittance_derivative(w)?);
        }
        let gain = Sequence::from_fn(n, |q| p.linear_gain(q as f64 * omega));
        let gain_d = reed_d.scaled(Complex64::new(2.0 * z2 * g * (1.0 - g), 0.0));
        Ok(Self {
            zeta: p.zeta,
            gamma: g,
            u00: p.u00(),
            reed,
            reed_d,
            admittance,
            admittance_d,
            gain,
            gain_d,
            one: Sequence::from_fn(n, |_| Complex64::new(1.0, 0.0)),
        })
    }

    fn kernel(&self, filters: &[&Sequence]) -> Result<KernelSet, ClarinetError> {
        Ok(KernelSet::new(filters.len(), filters.iter().map(|f| (*f).clone()).collect())?)
    }

    /// Spectrum of the flow: `U₀` at 0, `Ŷ(q)P_q` elsewhere.
    fn flow(&self, p: &Sequence, u0: f64) -> Sequence {
        let mut u = p.filtered(&self.admittance);
        u.set(0, Complex64::new(u0, 0.0));
        u
    }

    /// `ζ²γ (D̂a ∗ D̂b)`, the `h²` monomial of `ζ²(1−γ+h)²(γ−p)`.
    fn hh(&self, d: [&Sequence; 2], a: &Sequence, b: &Sequence) -> Result<Sequence, ClarinetError> {
        let z2 = self.zeta * self.zeta;
        Ok(multilinear_term(&self.kernel(&d)?, &[a, b])?.scaled((z2 * self.gamma).into()))
    }

    /// `−2ζ²(1−γ) (D̂a ∗ b)`, the `hp` monomial.
    fn hp(&self, d: &Sequence, a: &Sequence, b: &Sequence) -> Result<Sequence, ClarinetError> {
        let z2 = self.zeta * self.zeta;
        Ok(multilinear_term(&self.kernel(&[d, &self.one])?, &[a, b])?
            .scaled((-2.0 * z2 * (1.0 - self.gamma)).into()))
    }

    /// `−ζ² (D̂a ∗ D̂b ∗ c)`, the `h²p` monomial.
    fn hhp(
        &self,
        d: [&Sequence; 2],
        a: &Sequence,
        b: &Sequence,
        c: &Sequence,
    ) -> Result<Sequence, ClarinetError> {
        let z2 = self.zeta * self.zeta;
        Ok(multilinear_term(&self.kernel(&[d[0], d[1], &self.one])?, &[a, b, c])?
            .scaled((-z2).into()))
    }

    fn residual(&self, p: &Sequence, u0: f64) -> Result<Sequence, ClarinetError> {
        let u = self.flow(p, u0);
        let lhs = convolve(&u, &u);
        let mut rhs = p.filtered(&self.gain);
        rhs.set(0, rhs.get(0) + self.u00);
        let d = &self.reed;
        let nl = self.hh([d, d], p, p)?.add(&self.hp(d, p, p)?).add(&self.hhp([d, d], p, p, p)?);
        Ok(lhs.add(&rhs.add(&nl).scaled((-1.0).into())).truncated(p.half_width()))
    }

    fn derivative(
        &self,
        p: &Sequence,
        u0: f64,
        dp: &Sequence,
        du0: f64,
    ) -> Result<Sequence, ClarinetError> {
        let u = self.flow(p, u0);
        let du = self.flow(dp, du0);
        let lhs = convolve(&u, &du).scaled(2.0.into());
        let d = &self.reed;
        let nl = self
            .hh([d, d], dp, p)?
            .add(&self.hh([d, d], p, dp)?)
            .add(&self.hp(d, dp, p)?)
            .add(&self.hp(d, p, dp)?)
            .add(&self.hhp([d, d], dp, p, p)?)
            .add(&self.hhp([d, d], p, dp, p)?)
            .add(&self.hhp([d, d], p, p, dp)?);
        let rhs = dp.filtered(&self.gain).add(&nl);
        Ok(lhs.add(&rhs.scaled((-1.0).into())).truncated(p.half_width()))
    }

    fn omega_derivative(&self, p: &Sequence, u0: f64) -> Result<Sequence, ClarinetError> {
        let u = self.flow(p, u0);
        let du = p.filtered(&self.admittance_d);
        let lhs = convolve(&u, &du).scaled(2.0.into());
        let (d, dd) = (&self.reed, &self.reed_d);
        let nl = self
            .hh([dd, d], p, p)?
            .add(&self.hh([d, dd], p, p)?)
            .add(&self.hp(dd, p, p)?)
            .add(&self.hhp([dd, d], p, p, p)?)
            .add(&self.hhp([d, dd], p, p, p)?);
        let rhs = p.filtered(&self.gain_d).add(&nl);
        Ok(lhs.add(&rhs.scaled((-1.0).into())).truncated(p.half_width()))
    }
}

/// Tabulated coefficients `u₀₀, A_q, B_{q,n}, C_{q,n,m}, H_{q,n}` at a fixed
/// fundamental. Indices are valid for `|q|, |n|, |m| <= 3N`.
#[derive(Debug, Clone)]
pub struct ClarinetCoefficients {
    zeta: f64,
    gamma: f64,
    u00: f64,
    omega: f64,
    half_width: usize,
    reed: Sequence,
    admittance: Sequence,
}

impl ClarinetCoefficients {
    /// Negative `omega` is allowed and yields the conjugate tables.
    pub fn assemble(p: &ClarinetParams, omega: f64) -> Result<Self, ClarinetError> {
        if !(omega.is_finite() && omega != 0.0) {
            return Err(ClarinetError::InvalidOmega(omega));
        }
        let half_width = 3 * p.order;
        // q − n and n − m reach twice the padded range
        let span = 2 * half_width;
        let reed = Sequence::from_fn(span, |q| p.reed.eval(q as f64 * omega));
        let mut admittance = Sequence::zeros(span);
        for q in (-(span as isize)..=span as isize).filter(|&q| q != 0) {
            admittance.set(q, p.impedance.admittance(q as f64 * omega)?);
        }
        Ok(Self {
            zeta: p.zeta,
            gamma: p.gamma,
            u00: p.u00(),
            omega,
            half_width,
            reed,
            admittance,
        })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn u00(&self) -> f64 {
        self.u00
    }

    fn check(&self, idx: &[isize]) {
        for &i in idx {
            assert!(
                i.unsigned_abs() <= self.half_width,
                "coefficient index {i} outside |q| <= {}",
                self.half_width
            );
        }
    }

    fn d(&self, q: isize) -> Complex64 {
        self.reed.get(q)
    }

    /// `Ŷ(qω)`; `None` at `q = 0` where it is undefined.
    pub fn admittance(&self, q: isize) -> Option<Complex64> {
        (q != 0).then(|| self.admittance.get(q))
    }

    pub fn reed(&self, q: isize) -> Complex64 {
        self.d(q)
    }

    pub fn a(&self, q: isize) -> Complex64 {
        self.check(&[q]);
        let z2 = self.zeta * self.zeta;
        let g = self.gamma;
        2.0 * z2 * g * (1.0 - g) * self.d(q) - z2 * (1.0 - g) * (1.0 - g)
    }

    pub fn b(&self, q: isize, n: isize) -> Complex64 {
        self.check(&[q, n]);
        let z2 = self.zeta * self.zeta;
        let g = self.gamma;
        z2 * g * self.d(q - n) * self.d(n) - 2.0 * z2 * (1.0 - g) * self.d(q - n)
    }

    pub fn c(&self, q: isize, n: isize, m: isize) -> Complex64 {
        self.check(&[q, n, m]);
        -self.zeta * self.zeta * self.d(q - n) * self.d(n - m)
    }

    /// `H_{q,n} = B_{q,n} − Ŷ(q−n)Ŷ(n)` for `n ∉ {0, q}`; at `n ∈ {0, q}` the
    /// flow product is a mean-flow term and `H_{q,n} = B_{q,n}`.
    pub fn h(&self, q: isize, n: isize) -> Complex64 {
        let b = self.b(q, n);
        if n == 0 || n == q {
            b
        } else {
            b - self.admittance.get(q - n) * self.admittance.get(n)
        }
    }

    /// `2U₀Ŷ(q) − A_q`, the linear coefficient of harmonic `q ≠ 0`.
    pub fn linear(&self, q: isize, u0: f64) -> Complex64 {
        2.0 * u0 * self.admittance.get(q) - self.a(q)
    }

    /// Residual by explicit summation over the coefficient tables.
    pub fn residual_direct(&self, s: &Spectrum, u0: f64) -> Result<Vec<Complex64>, ClarinetError> {
        if !(u0 > 0.0) {
            return Err(ClarinetError::NonPositiveMeanFlow(u0));
        }
        let n = s.order() as isize;
        assert!(
            3 * n <= self.half_width as isize,
            "spectrum order exceeds the coefficient tables"
        );
        let p = |q: isize| s.coeff(q);
        let mut out = Vec::with_capacity(s.order() + 1);
        for q in 0..=n {
            let mut quad = zero();
            let mut cubic = zero();
            for k in -n..=n {
                quad += self.h(q, k) * p(q - k) * p(k);
            }
            // the middle index of P_{q-k} P_{k-m} P_m spans |k| <= 2N
            for k in -2 * n..=2 * n {
                for m in -n..=n {
                    cubic += self.c(q, k, m) * p(q - k) * p(k - m) * p(m);
                }
            }
            let r = if q == 0 {
                Complex64::new(u0 * u0 - self.u00, 0.0) - self.a(0) * p(0) - quad - cubic
            } else {
                self.linear(q, u0) * p(q) - quad - cubic
            };
            out.push(r);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn unit_reed(zeta: f64, gamma: f64, order: usize) -> ClarinetParams {
        ClarinetParams {
            zeta,
            gamma,
            impedance: ModalImpedance::clarinet_default(),
            reed: ReedResponse::QuasiStatic { gain: 1.0 },
            order,
        }
    }

    fn dynamic(gamma: f64, order: usize) -> ClarinetParams {
        ClarinetParams {
            zeta: 0.4,
            gamma,
            impedance: ModalImpedance::clarinet_default(),
            reed: ReedResponse::SingleOscillator { gain: 0.9, omega_r: 7.3, damping: 0.4 },
            order,
        }
    }

    fn small_spectrum(rng: &mut ChaCha8Rng, omega: f64, order: usize, scale: f64) -> Spectrum {
        Spectrum::from_fn(omega, order, |q| {
            if q == 0 {
                c(0.0, 0.0)
            } else {
                c(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)) / q as f64
            }
        })
        .unwrap()
    }

    #[test]
    fn coefficient_closed_forms() {
        let p = unit_reed(1.0, 0.0, 4);
        let k = p.coefficients(1.0).unwrap();
        assert_eq!(k.u00(), 0.0);
        for q in -12..=12 {
            assert!((k.a(q) - c(-1.0, 0.0)).norm() < 1e-15);
        }
        let p = unit_reed(1.0, 0.5, 4);
        let k = p.coefficients(1.0).unwrap();
        assert!((k.u00() - 0.125).abs() < 1e-15);
        assert!((k.a(3) - c(0.25, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn h_matches_term_by_term_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..5 {
            let gamma = rng.gen_range(0.05..0.95);
            let zeta = rng.gen_range(0.1..1.5);
            let omega = rng.gen_range(0.6..1.4);
            let mut p = dynamic(gamma, 3);
            p.zeta = zeta;
            let k = p.coefficients(omega).unwrap();
            let d = |q: isize| p.reed.eval(q as f64 * omega);
            let y = |q: isize| p.impedance.admittance(q as f64 * omega).unwrap();
            for q in -9isize..=9 {
                for n in -9isize..=9 {
                    let b = zeta * zeta * gamma * d(q - n) * d(n)
                        - 2.0 * zeta * zeta * (1.0 - gamma) * d(q - n);
                    let expected = if n == 0 || n == q { b } else { b - y(q - n) * y(n) };
                    assert!((k.h(q, n) - expected).norm() < 1e-12 * expected.norm().max(1.0));
                }
            }
        }
    }

    #[test]
    fn coefficient_tables_are_hermitian() {
        let p = dynamic(0.4, 2);
        let k = p.coefficients(0.97).unwrap();
        for q in -6isize..=6 {
            assert!((k.a(-q) - k.a(q).conj()).norm() < 1e-14);
            for n in -6isize..=6 {
                assert!((k.h(-q, -n) - k.h(q, n).conj()).norm() < 1e-10);
                for m in -6isize..=6 {
                    assert!((k.c(-q, -n, -m) - k.c(q, n, m).conj()).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    #[should_panic(expected = "outside")]
    fn coefficient_index_range_is_enforced() {
        let k = unit_reed(0.5, 0.5, 2).coefficients(1.0).unwrap();
        k.c(7, 0, 0);
    }

    #[test]
    fn static_regime_has_zero_residual() {
        for gamma in [0.01, 0.2, 0.5, 0.77, 0.99] {
            for omega in [0.3, 1.0, 2.2] {
                let p = dynamic(gamma, 6);
                let s = Spectrum::zeros(omega, 6).unwrap();
                let r = p.residual(&s, p.static_flow()).unwrap();
                assert!(r.iter().all(|v| v.norm() < 1e-15), "gamma {gamma} omega {omega}");
            }
        }
    }

    #[test]
    fn doubled_mean_flow_only_breaks_the_mean_equation() {
        let p = unit_reed(0.5, 0.4, 5);
        let s = Spectrum::zeros(1.0, 5).unwrap();
        let r = p.residual(&s, 2.0 * p.static_flow()).unwrap();
        assert!((r[0] - c(3.0 * p.u00(), 0.0)).norm() < 1e-15);
        assert!(r[1..].iter().all(|v| v.norm() < 1e-16));
    }

    #[test]
    fn residual_rejects_non_positive_mean_flow() {
        let p = unit_reed(0.5, 0.4, 3);
        let s = Spectrum::zeros(1.0, 3).unwrap();
        assert_eq!(p.residual(&s, 0.0), Err(ClarinetError::NonPositiveMeanFlow(0.0)));
        assert!(p.residual(&s, -1.0).is_err());
    }

    #[test]
    fn kernel_and_direct_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for p in [unit_reed(0.45, 0.37, 5), dynamic(0.6, 5)] {
            let omega = 1.03;
            let mut s = small_spectrum(&mut rng, omega, 5, 0.05);
            // a nonzero mean exercises the A_0 P_0 and B_{q,0} bookkeeping
            s = Spectrum::from_fn(omega, 5, |q| if q == 0 { c(0.01, 0.0) } else { s.coeffs()[q] })
                .unwrap();
            let u0 = p.static_flow() * 1.1;
            let fast = p.residual(&s, u0).unwrap();
            let direct = p.coefficients(omega).unwrap().residual_direct(&s, u0).unwrap();
            for (a, b) in fast.iter().zip(&direct) {
                assert!((a - b).norm() < 1e-13, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn residual_matches_time_domain_bernoulli() {
        // ũ² − ζ²(1−γ+h)²(γ−p), sampled and analyzed, against the residual
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for p in [unit_reed(0.5, 0.42, 6), dynamic(0.55, 6)] {
            let omega = 0.98;
            let s = small_spectrum(&mut rng, omega, 6, 1e-2);
            let u0 = p.static_flow() + 3e-4;
            let flow = Spectrum::from_fn(omega, 6, |q| {
                if q == 0 {
                    c(u0, 0.0)
                } else {
                    p.impedance.admittance(q as f64 * omega).unwrap() * s.coeffs()[q]
                }
            })
            .unwrap();
            let reed = Spectrum::from_fn(omega, 6, |q| p.reed.eval(q as f64 * omega) * s.coeffs()[q])
                .unwrap();
            let t = Spectrum::period_grid(omega, 64);
            let diff: Vec<f64> = t
                .iter()
                .map(|&t| {
                    let pr = s.sample(t);
                    let h = reed.sample(t);
                    let u = p.bernoulli_flow(pr, h).unwrap();
                    flow.sample(t).powi(2) - u * u
                })
                .collect();
            let time = Spectrum::analyze(&diff, omega, 6).unwrap();
            let freq = p.residual(&s, u0).unwrap();
            for q in 0..=6 {
                assert!((time.coeffs()[q] - freq[q]).norm() < 1e-12, "q {q}");
            }
        }
    }

    #[test]
    fn residual_is_conjugate_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let p = dynamic(0.5, 7);
        for _ in 0..10 {
            let s = small_spectrum(&mut rng, 1.1, 7, 0.1);
            let r = p.residual_two_sided(&s, p.static_flow()).unwrap();
            assert!(r.conjugate_asymmetry() < 1e-15);
            assert!(r.get(0).im.abs() < 1e-15);
        }
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let p = dynamic(0.45, 5);
        let omega = 1.01;
        let s = small_spectrum(&mut rng, omega, 5, 0.05);
        let dp = small_spectrum(&mut rng, omega, 5, 1.0);
        let u0 = p.static_flow();
        let du0 = 0.3;
        let h = 1e-6;
        let shift = |t: f64| {
            Spectrum::from_fn(omega, 5, |q| s.coeffs()[q] + dp.coeffs()[q] * t).unwrap()
        };
        let plus = p.residual(&shift(h), u0 + du0 * h).unwrap();
        let minus = p.residual(&shift(-h), u0 - du0 * h).unwrap();
        let an = p.residual_derivative(&s, u0, &dp, du0).unwrap();
        for q in 0..=5 {
            let fd = (plus[q] - minus[q]) / (2.0 * h);
            assert!((fd - an[q]).norm() < 1e-7 * an[q].norm().max(1.0), "q {q}: {fd} vs {}", an[q]);
        }
        let plus = p.residual(&s.with_omega(omega + h).unwrap(), u0).unwrap();
        let minus = p.residual(&s.with_omega(omega - h).unwrap(), u0).unwrap();
        let an = p.residual_omega_derivative(&s, u0).unwrap();
        for q in 0..=5 {
            let fd = (plus[q] - minus[q]) / (2.0 * h);
            assert!((fd - an[q]).norm() < 1e-7 * an[q].norm().max(1.0), "q {q}: {fd} vs {}", an[q]);
        }
    }

    #[test]
    fn characteristic_closed_form() {
        let p = unit_reed(1.0, 0.5, 4);
        let w = 1.2;
        let y = p.impedance.admittance(w).unwrap();
        let expected = 2.0 * 0.125f64.sqrt() * y - c(0.25, 0.0);
        assert!((p.characteristic(w).unwrap() - expected).norm() < 1e-14);
        // γ → 0: the static flow vanishes and β → −A₁ → ζ²
        let p = unit_reed(0.8, 1e-12, 4);
        assert!((p.characteristic(w).unwrap() - c(0.64, 0.0)).norm() < 1e-5);
        assert!(matches!(p.characteristic(0.0), Err(ClarinetError::Transfer(_))));
    }

    #[test]
    fn bernoulli_flow_identities() {
        let p = unit_reed(0.7, 0.3, 2);
        let u = p.bernoulli_flow(0.0, 0.0).unwrap();
        assert!((u * u - p.u00()).abs() < 1e-16);
        assert_eq!(p.bernoulli_flow(0.3, 0.1).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..1000 {
            let pr = rng.gen_range(-0.5..0.3);
            let h = rng.gen_range(-0.7..0.5);
            let u = p.bernoulli_flow(pr, h).unwrap();
            let rhs = 0.49 * (0.7 + h).powi(2) * (0.3 - pr);
            assert!((u * u - rhs).abs() < 1e-14);
            assert!(u >= 0.0);
        }
        match p.bernoulli_flow(0.31, 0.0) {
            Err(ClarinetError::Regime { condition, .. }) => assert_eq!(condition, "gamma - p >= 0"),
            other => panic!("{other:?}"),
        }
        match p.bernoulli_flow(0.0, -0.71) {
            Err(ClarinetError::Regime { condition, .. }) => assert_eq!(condition, "1 - gamma + h >= 0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn params_validation() {
        let z = ModalImpedance::clarinet_default();
        let r = ReedResponse::default();
        assert!(ClarinetParams::new(0.5, 0.5, z.clone(), r, 8).is_ok());
        assert!(ClarinetParams::new(0.0, 0.5, z.clone(), r, 8).is_err());
        assert!(ClarinetParams::new(0.5, 1.0, z.clone(), r, 8).is_err());
        assert!(ClarinetParams::new(0.5, 0.5, z, r, 0).is_err());
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn residual_commutes_with_time_shift(
            coeffs in proptest::collection::vec(-0.02..0.02f64, 10),
            theta in -3.2..3.2f64,
            gamma in 0.2..0.8f64,
            omega in 0.7..1.3f64,
        ) {
            let p = ClarinetParams { gamma, order: 4, ..Default::default() };
            let s = Spectrum::from_fn(omega, 4, |q| {
                Complex64::new(coeffs[2 * q], if q == 0 { 0.0 } else { coeffs[2 * q + 1] })
            }).unwrap();
            let u0 = p.static_flow();
            let r = p.residual(&s, u0).unwrap();
            let shifted = p.residual(&s.rotated(theta), u0).unwrap();
            for (q, (a, b)) in r.iter().zip(&shifted).enumerate() {
                let expected = a * Complex64::from_polar(1.0, q as f64 * theta);
                prop_assert!((expected - b).norm() < 1e-14, "q {}: {} vs {}", q, expected, b);
            }
        }
    }
}
