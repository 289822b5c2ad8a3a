//! Truncated Fourier series of real periodic signals, and the convolution
//! machinery used to evaluate polynomial nonlinearities in the frequency
//! domain.
//!
//! A [`Spectrum`] stores only the harmonics `q >= 0`; the negative side is
//! implied by conjugate symmetry, so every spectrum built through the public
//! API describes a real signal. Products of signals become convolutions of
//! two-sided [`Sequence`]s, computed exactly (no wrap-around) either by a
//! zero-padded FFT or by direct summation.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

/// Default truncation order for periodic solutions.
pub const DEFAULT_ORDER: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("fundamental angular frequency must be finite and positive, got {0}")]
    InvalidOmega(f64),
    #[error("truncation order must be at least 1")]
    ZeroOrder,
    #[error("coefficient of harmonic {0} is not finite")]
    NonFinite(usize),
    #[error("{samples} samples cannot resolve order {order} (need at least {required})")]
    TooFewSamples {
        samples: usize,
        order: usize,
        required: usize,
    },
    #[error("nonlinearity degree must be at least 2, got {0}")]
    Degree(usize),
    #[error("kernel set of degree {degree} needs {degree} filters, got {filters}")]
    FilterCount { degree: usize, filters: usize },
    #[error("filter {index} is sampled on |q| <= {half_width} but the argument reaches {required}")]
    FilterRange {
        index: usize,
        half_width: usize,
        required: usize,
    },
    #[error("filter {0} has a non-finite sample")]
    UnboundedFilter(usize),
    #[error("malformed spectrum csv: {0}")]
    Csv(String),
}

/// A finite two-sided complex sequence indexed by `-half_width..=half_width`.
///
/// Reads outside the stored range return zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    half_width: usize,
    values: Vec<Complex64>,
}

impl Sequence {
    pub fn zeros(half_width: usize) -> Self {
        Self {
            half_width,
            values: vec![Complex64::new(0.0, 0.0); 2 * half_width + 1],
        }
    }

    pub fn from_fn(half_width: usize, mut f: impl FnMut(isize) -> Complex64) -> Self {
        let h = half_width as isize;
        Self {
            half_width,
            values: (-h..=h).map(&mut f).collect(),
        }
    }

    /// Builds a sequence from values ordered from `-M` to `M`. Returns `None`
    /// when the length is even.
    pub fn from_values(values: Vec<Complex64>) -> Option<Self> {
        if values.len() % 2 == 0 {
            return None;
        }
        Some(Self {
            half_width: values.len() / 2,
            values,
        })
    }

    pub fn delta(half_width: usize, value: Complex64) -> Self {
        let mut s = Self::zeros(half_width);
        s.set(0, value);
        s
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn get(&self, q: isize) -> Complex64 {
        if q.unsigned_abs() > self.half_width {
            return Complex64::new(0.0, 0.0);
        }
        self.values[(q + self.half_width as isize) as usize]
    }

    /// Panics when `q` is outside the stored range.
    pub fn set(&mut self, q: isize, value: Complex64) {
        assert!(
            q.unsigned_abs() <= self.half_width,
            "index {q} outside |q| <= {}",
            self.half_width
        );
        let idx = (q + self.half_width as isize) as usize;
        self.values[idx] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (isize, Complex64)> + '_ {
        let h = self.half_width as isize;
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (i as isize - h, *v))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Largest `|x(-q) - conj(x(q))|` over the stored range.
    pub fn conjugate_asymmetry(&self) -> f64 {
        let h = self.half_width as isize;
        (0..=h)
            .map(|q| (self.get(-q) - self.get(q).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Pointwise product with a sampled filter.
    pub fn filtered(&self, filter: &Sequence) -> Sequence {
        Sequence::from_fn(self.half_width, |q| filter.get(q) * self.get(q))
    }

    pub fn truncated(&self, half_width: usize) -> Sequence {
        Sequence::from_fn(half_width, |q| self.get(q))
    }

    pub fn scaled(&self, factor: Complex64) -> Sequence {
        Sequence {
            half_width: self.half_width,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Pointwise sum; the result spans the wider of the two ranges.
    pub fn add(&self, other: &Sequence) -> Sequence {
        let h = self.half_width.max(other.half_width);
        Sequence::from_fn(h, |q| self.get(q) + other.get(q))
    }
}

/// Which algorithm [`convolve_with`] uses. Both are exact over the full
/// output range; `Direct` is kept as an independent reference path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ConvolutionBackend {
    #[default]
    Fft,
    Direct,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// `out(q) = sum_k a(q - k) b(k)` over every index pair, via zero-padded FFT.
pub fn convolve(a: &Sequence, b: &Sequence) -> Sequence {
    convolve_with(a, b, ConvolutionBackend::Fft)
}

pub fn convolve_with(a: &Sequence, b: &Sequence, backend: ConvolutionBackend) -> Sequence {
    match backend {
        ConvolutionBackend::Fft => convolve_fft(a, b),
        ConvolutionBackend::Direct => convolve_direct(a, b),
    }
}

fn convolve_direct(a: &Sequence, b: &Sequence) -> Sequence {
    let half = a.half_width + b.half_width;
    let mut out = vec![Complex64::new(0.0, 0.0); 2 * half + 1];
    for (i, x) in a.values.iter().enumerate() {
        if *x == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (j, y) in b.values.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    Sequence {
        half_width: half,
        values: out,
    }
}

fn convolve_fft(a: &Sequence, b: &Sequence) -> Sequence {
    let half = a.half_width + b.half_width;
    // linear convolution length; padding to it removes all wrap-around
    let len = a.values.len() + b.values.len() - 1;
    let mut fa = vec![Complex64::new(0.0, 0.0); len];
    let mut fb = vec![Complex64::new(0.0, 0.0); len];
    fa[..a.values.len()].copy_from_slice(&a.values);
    fb[..b.values.len()].copy_from_slice(&b.values);
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let forward = planner.plan_fft_forward(len);
        forward.process(&mut fa);
        forward.process(&mut fb);
        for (x, y) in fa.iter_mut().zip(&fb) {
            *x *= y;
        }
        planner.plan_fft_inverse(len).process(&mut fa);
    });
    let scale = 1.0 / len as f64;
    Sequence {
        half_width: half,
        values: fa.into_iter().map(|v| v * scale).collect(),
    }
}

/// Truncated Fourier coefficients `P_0..P_N` of a real `2π/ω`-periodic signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    omega: f64,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    /// `coeffs[q]` is `P_q` for `q = 0..=N`. The imaginary part of `P_0` is
    /// dropped since the mean of a real signal is real.
    pub fn new(omega: f64, mut coeffs: Vec<Complex64>) -> Result<Self, SpectrumError> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(SpectrumError::InvalidOmega(omega));
        }
        if coeffs.len() < 2 {
            return Err(SpectrumError::ZeroOrder);
        }
        if let Some(q) = coeffs
            .iter()
            .position(|c| !(c.re.is_finite() && c.im.is_finite()))
        {
            return Err(SpectrumError::NonFinite(q));
        }
        coeffs[0].im = 0.0;
        Ok(Self { omega, coeffs })
    }

    pub fn zeros(omega: f64, order: usize) -> Result<Self, SpectrumError> {
        Self::new(omega, vec![Complex64::new(0.0, 0.0); order + 1])
    }

    pub fn from_fn(
        omega: f64,
        order: usize,
        f: impl FnMut(usize) -> Complex64,
    ) -> Result<Self, SpectrumError> {
        Self::new(omega, (0..=order).map(f).collect())
    }

    /// Keeps the `0..=order` part of a two-sided sequence.
    pub fn from_sequence(
        omega: f64,
        seq: &Sequence,
        order: usize,
    ) -> Result<Self, SpectrumError> {
        Self::from_fn(omega, order, |q| seq.get(q as isize))
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// `P_q` for any integer `q`; zero beyond the truncation order.
    pub fn coeff(&self, q: isize) -> Complex64 {
        let n = q.unsigned_abs();
        if n >= self.coeffs.len() {
            return Complex64::new(0.0, 0.0);
        }
        if q < 0 {
            self.coeffs[n].conj()
        } else {
            self.coeffs[n]
        }
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.norm()).collect()
    }

    pub fn with_omega(&self, omega: f64) -> Result<Self, SpectrumError> {
        Self::new(omega, self.coeffs.clone())
    }

    /// Time shift expressed on the coefficients: `P_q -> P_q e^{iqθ}`.
    pub fn rotated(&self, theta: f64) -> Self {
        Self {
            omega: self.omega,
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .map(|(q, c)| c * Complex64::from_polar(1.0, q as f64 * theta))
                .collect(),
        }
    }

    pub fn two_sided(&self) -> Sequence {
        Sequence::from_fn(self.order(), |q| self.coeff(q))
    }

    /// Sum of `|P_q|^2` over the full two-sided range.
    pub fn mean_square(&self) -> f64 {
        self.coeffs[0].norm_sqr() + 2.0 * self.coeffs[1..].iter().map(|c| c.norm_sqr()).sum::<f64>()
    }

    /// `p(t) = P_0 + 2 Σ Re(P_q e^{iqωt})`.
    pub fn synthesize(&self, t_grid: &[f64]) -> Vec<f64> {
        t_grid.iter().map(|&t| self.sample(t)).collect()
    }

    pub fn sample(&self, t: f64) -> f64 {
        let base = Complex64::from_polar(1.0, self.omega * t);
        let mut rot = Complex64::new(1.0, 0.0);
        let mut acc = self.coeffs[0].re;
        for c in &self.coeffs[1..] {
            rot *= base;
            acc += 2.0 * (c * rot).re;
        }
        acc
    }

    /// Time derivative of the synthesized signal.
    pub fn sample_derivative(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for (q, c) in self.coeffs.iter().enumerate().skip(1) {
            let w = q as f64 * self.omega;
            acc += 2.0 * (c * Complex64::new(0.0, w) * Complex64::from_polar(1.0, w * t)).re;
        }
        acc
    }

    /// `count` equally spaced sample times covering one period, starting at 0.
    pub fn period_grid(omega: f64, count: usize) -> Vec<f64> {
        let tau = 2.0 * PI / omega;
        (0..count).map(|j| j as f64 * tau / count as f64).collect()
    }

    /// Discrete Fourier analysis of `samples`, which must cover exactly one
    /// period uniformly (first sample at `t = 0`, last one before `t = τ`).
    pub fn analyze(samples: &[f64], omega: f64, order: usize) -> Result<Self, SpectrumError> {
        if order == 0 {
            return Err(SpectrumError::ZeroOrder);
        }
        let required = 2 * order + 2;
        if samples.len() < required {
            return Err(SpectrumError::TooFewSamples {
                samples: samples.len(),
                order,
                required,
            });
        }
        let len = samples.len();
        let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        PLANNER.with(|planner| planner.borrow_mut().plan_fft_forward(len).process(&mut buf));
        let scale = 1.0 / len as f64;
        Self::new(omega, buf[..=order].iter().map(|c| c * scale).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# omega = {:.16e}", self.omega);
        let _ = writeln!(out, "# N = {}", self.order());
        out.push_str("q,re,im\n");
        for (q, c) in self.coeffs.iter().enumerate() {
            let _ = writeln!(out, "{q},{:.16e},{:.16e}", c.re, c.im);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, SpectrumError> {
        let bad = |msg: String| SpectrumError::Csv(msg);
        let mut omega = None;
        let mut order = None;
        let mut coeffs = Vec::new();
        let mut saw_header = false;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(meta) = line.strip_prefix('#') {
                let (key, value) = meta
                    .split_once('=')
                    .ok_or_else(|| bad(format!("metadata line without '=': {line}")))?;
                match key.trim() {
                    "omega" => {
                        omega = Some(value.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?)
                    }
                    "N" => {
                        order = Some(value.trim().parse::<usize>().map_err(|e| bad(e.to_string()))?)
                    }
                    other => return Err(bad(format!("unknown metadata key {other}"))),
                }
                continue;
            }
            if !saw_header {
                if line.replace(' ', "") != "q,re,im" {
                    return Err(bad(format!("expected header q,re,im, got {line}")));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {line}")));
            }
            let q: usize = fields[0].parse().map_err(|_| bad(format!("bad index {}", fields[0])))?;
            if q != coeffs.len() {
                return Err(bad(format!("harmonic {q} out of order")));
            }
            let re: f64 = fields[1].parse().map_err(|_| bad(format!("bad value {}", fields[1])))?;
            let im: f64 = fields[2].parse().map_err(|_| bad(format!("bad value {}", fields[2])))?;
            coeffs.push(Complex64::new(re, im));
        }
        let omega = omega.ok_or_else(|| bad("missing omega".into()))?;
        let order = order.ok_or_else(|| bad("missing N".into()))?;
        if coeffs.len() != order + 1 {
            return Err(bad(format!("N = {order} but {} rows", coeffs.len())));
        }
        Self::new(omega, coeffs)
    }
}

/// The sampled filters `Ẑ_{n,1} .. Ẑ_{n,n}` of one degree-`n` monomial
/// `(Z_{n,1} p)(Z_{n,2} p)...(Z_{n,n} p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    filters: Vec<Sequence>,
}

impl KernelSet {
    pub fn new(degree: usize, filters: Vec<Sequence>) -> Result<Self, SpectrumError> {
        if degree < 2 {
            return Err(SpectrumError::Degree(degree));
        }
        if filters.len() != degree {
            return Err(SpectrumError::FilterCount {
                degree,
                filters: filters.len(),
            });
        }
        if let Some(i) = filters.iter().position(|f| !f.is_finite()) {
            return Err(SpectrumError::UnboundedFilter(i));
        }
        Ok(Self { filters })
    }

    /// All filters identically one: the plain power `p^n`.
    pub fn identity(degree: usize, half_width: usize) -> Result<Self, SpectrumError> {
        let one = Sequence::from_fn(half_width, |_| Complex64::new(1.0, 0.0));
        Self::new(degree, vec![one; degree])
    }

    pub fn degree(&self) -> usize {
        self.filters.len()
    }

    pub fn filters(&self) -> &[Sequence] {
        &self.filters
    }
}

/// `S(g_n, n, P)` for the separable kernel `g_n(q,k_1..k_{n-1}) =
/// Ẑ_1(q-k_1) Ẑ_2(k_1-k_2) ... Ẑ_n(k_{n-1})`, over `|q| <= nN`.
pub fn nonlinear_term(kernels: &KernelSet, s: &Spectrum) -> Result<Sequence, SpectrumError> {
    let p = s.two_sided();
    let args = vec![&p; kernels.degree()];
    multilinear_term(kernels, &args)
}

/// The symmetric-free multilinear form behind [`nonlinear_term`]: slot `i`
/// receives `args[i]` filtered by `Ẑ_i`. Used for directional derivatives.
pub fn multilinear_term(
    kernels: &KernelSet,
    args: &[&Sequence],
) -> Result<Sequence, SpectrumError> {
    multilinear_term_with(kernels, args, ConvolutionBackend::Fft)
}

pub fn multilinear_term_with(
    kernels: &KernelSet,
    args: &[&Sequence],
    backend: ConvolutionBackend,
) -> Result<Sequence, SpectrumError> {
    if args.len() != kernels.degree() {
        return Err(SpectrumError::FilterCount {
            degree: args.len(),
            filters: kernels.degree(),
        });
    }
    let mut filtered = Vec::with_capacity(args.len());
    for (i, (arg, filter)) in args.iter().zip(&kernels.filters).enumerate() {
        if filter.half_width < arg.half_width {
            return Err(SpectrumError::FilterRange {
                index: i,
                half_width: filter.half_width,
                required: arg.half_width,
            });
        }
        filtered.push(arg.filtered(filter));
    }
    let mut acc = filtered[0].clone();
    for f in &filtered[1..] {
        acc = convolve_with(&acc, f, backend);
    }
    Ok(acc)
}
