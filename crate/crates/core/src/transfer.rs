//! Linear frequency responses of the resonator and the reed.
//!
//! The bore is described by a truncated modal Green function
//! `ĝ(x, ω; x_s) = c Σ cos(k_n x) cos(k_n x_s) / (ω_n² + iωω_n q_n − ω²)`.
//! Pressure is driven by the time derivative of the entering flow, so the
//! input impedance relating flow to pressure is `Ẑ(ω) = iω ĝ(ω)`. It vanishes
//! at `ω = 0`, which is why the admittance is undefined there and the mean
//! flow is carried as a separate unknown.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransferError {
    #[error("admittance is undefined at omega = 0")]
    ZeroFrequency,
    #[error("at least one mode is required")]
    NoModes,
    #[error("invalid transfer parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

fn positive(name: &'static str, value: f64) -> Result<f64, TransferError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(TransferError::InvalidParameter { name, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    /// rad/m
    pub wavenumber: f64,
    /// rad/s
    pub omega: f64,
    pub loss: f64,
}

/// Modal input impedance of a cylindrical bore closed at the reed end.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalImpedance {
    gain: f64,
    length: f64,
    position: f64,
    source_position: f64,
    modes: Vec<Mode>,
}

impl ModalImpedance {
    /// `k_n = (2n-1)π/(2ℓ)`, `ω_n = wave_speed·k_n`, `q_n = loss_coefficient·√k_n`.
    pub fn new(
        gain: f64,
        length: f64,
        wave_speed: f64,
        loss_coefficient: f64,
        mode_count: usize,
    ) -> Result<Self, TransferError> {
        if !gain.is_finite() {
            return Err(TransferError::InvalidParameter { name: "gain", value: gain });
        }
        let length = positive("length", length)?;
        let wave_speed = positive("wave_speed", wave_speed)?;
        let loss_coefficient = positive("loss_coefficient", loss_coefficient)?;
        if mode_count == 0 {
            return Err(TransferError::NoModes);
        }
        let modes = (1..=mode_count)
            .map(|n| {
                let k = (2 * n - 1) as f64 * PI / (2.0 * length);
                Mode {
                    wavenumber: k,
                    omega: wave_speed * k,
                    loss: loss_coefficient * k.sqrt(),
                }
            })
            .collect();
        Ok(Self {
            gain,
            length,
            position: 0.0,
            source_position: 0.0,
            modes,
        })
    }

    /// Bore of unit length parameterized by its first resonance: `ω_n = (2n-1)ω_1`
    /// and `q_n = q_1 √(2n-1)`.
    pub fn from_first_mode(
        gain: f64,
        omega1: f64,
        q1: f64,
        mode_count: usize,
    ) -> Result<Self, TransferError> {
        let length = 1.0;
        let k1 = PI / (2.0 * length);
        let omega1 = positive("omega1", omega1)?;
        let q1 = positive("q1", q1)?;
        Self::new(gain, length, omega1 / k1, q1 / k1.sqrt(), mode_count)
    }

    /// Rescales the gain so that `|Ẑ(ω_1)|` equals `target`.
    pub fn with_peak_impedance(mut self, target: f64) -> Result<Self, TransferError> {
        let target = positive("peak_impedance", target)?;
        let current = self.impedance(self.modes[0].omega).norm();
        self.gain *= target / current;
        Ok(self)
    }

    pub fn with_gain(mut self, gain: f64) -> Result<Self, TransferError> {
        if !gain.is_finite() {
            return Err(TransferError::InvalidParameter { name: "gain", value: gain });
        }
        self.gain = gain;
        Ok(self)
    }

    /// Measurement point `x` and source point `x_s`, both in `[0, ℓ]`.
    pub fn with_positions(mut self, position: f64, source_position: f64) -> Result<Self, TransferError> {
        for (name, value) in [("position", position), ("source_position", source_position)] {
            if !(value.is_finite() && (0.0..=self.length).contains(&value)) {
                return Err(TransferError::InvalidParameter { name, value });
            }
        }
        self.position = position;
        self.source_position = source_position;
        Ok(self)
    }

    /// Default clarinet-like bore: `ω_1 = 1`, 8 modes, `q_1 = 0.02`, `|Ẑ(ω_1)| = 10`.
    pub fn clarinet_default() -> Self {
        Self::from_first_mode(1.0, 1.0, 0.02, 8)
            .and_then(|z| z.with_peak_impedance(10.0))
            .expect("default bore parameters are valid")
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn position(&self) -> f64 {
        self.position
    }

    pub fn source_position(&self) -> f64 {
        self.source_position
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    /// Coupling `c cos(k_n x) cos(k_n x_s)` of mode `n` between source and probe.
    pub fn mode_weight(&self, mode: &Mode) -> f64 {
        self.gain * (mode.wavenumber * self.position).cos() * (mode.wavenumber * self.source_position).cos()
    }

    fn denominator(mode: &Mode, omega: f64) -> Complex64 {
        Complex64::new(mode.omega * mode.omega - omega * omega, omega * mode.omega * mode.loss)
    }

    /// The modal Green function `ĝ(x, ω; x_s)`.
    pub fn green(&self, omega: f64) -> Complex64 {
        self.modes
            .iter()
            .map(|m| self.mode_weight(m) / Self::denominator(m, omega))
            .sum()
    }

    pub fn green_derivative(&self, omega: f64) -> Complex64 {
        self.modes
            .iter()
            .map(|m| {
                let den = Self::denominator(m, omega);
                let dden = Complex64::new(-2.0 * omega, m.omega * m.loss);
                -self.mode_weight(m) * dden / (den * den)
            })
            .sum()
    }

    /// `Ẑ(ω) = iω ĝ(ω)`.
    pub fn impedance(&self, omega: f64) -> Complex64 {
        Complex64::new(0.0, omega) * self.green(omega)
    }

    pub fn impedance_derivative(&self, omega: f64) -> Complex64 {
        Complex64::i() * self.green(omega) + Complex64::new(0.0, omega) * self.green_derivative(omega)
    }

    /// `Ŷ(ω) = 1/Ẑ(ω)`, rejected at `ω = 0`.
    pub fn admittance(&self, omega: f64) -> Result<Complex64, TransferError> {
        if omega == 0.0 {
            return Err(TransferError::ZeroFrequency);
        }
        Ok(self.impedance(omega).inv())
    }

    pub fn admittance_derivative(&self, omega: f64) -> Result<Complex64, TransferError> {
        if omega == 0.0 {
            return Err(TransferError::ZeroFrequency);
        }
        let z = self.impedance(omega);
        Ok(-self.impedance_derivative(omega) / (z * z))
    }
}

/// Linear reed response `H = D̂ P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReedResponse {
    /// Massless reed: opening follows pressure instantaneously.
    QuasiStatic { gain: f64 },
    /// One-mass reed: `ḧ/ω_r² + (damping/ω_r) ḣ + h = gain·p`.
    SingleOscillator { gain: f64, omega_r: f64, damping: f64 },
}

impl Default for ReedResponse {
    fn default() -> Self {
        ReedResponse::QuasiStatic { gain: 1.0 }
    }
}

impl ReedResponse {
    pub fn validate(&self) -> Result<(), TransferError> {
        match *self {
            ReedResponse::QuasiStatic { gain } => {
                if !gain.is_finite() {
                    return Err(TransferError::InvalidParameter { name: "reed_gain", value: gain });
                }
            }
            ReedResponse::SingleOscillator { gain, omega_r, damping } => {
                if !gain.is_finite() {
                    return Err(TransferError::InvalidParameter { name: "reed_gain", value: gain });
                }
                positive("reed_omega", omega_r)?;
                positive("reed_damping", damping)?;
            }
        }
        Ok(())
    }

    pub fn gain(&self) -> f64 {
        match *self {
            ReedResponse::QuasiStatic { gain } | ReedResponse::SingleOscillator { gain, .. } => gain,
        }
    }

    pub fn eval(&self, omega: f64) -> Complex64 {
        match *self {
            ReedResponse::QuasiStatic { gain } => Complex64::new(gain, 0.0),
            ReedResponse::SingleOscillator { gain, omega_r, damping } => {
                let r = omega / omega_r;
                gain / Complex64::new(1.0 - r * r, damping * r)
            }
        }
    }

    pub fn derivative(&self, omega: f64) -> Complex64 {
        match *self {
            ReedResponse::QuasiStatic { .. } => Complex64::new(0.0, 0.0),
            ReedResponse::SingleOscillator { gain, omega_r, damping } => {
                let r = omega / omega_r;
                let den = Complex64::new(1.0 - r * r, damping * r);
                let dden = Complex64::new(-2.0 * r, damping) / omega_r;
                -gain * dden / (den * den)
            }
        }
    }
}
