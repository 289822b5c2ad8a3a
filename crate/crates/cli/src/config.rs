//! Run configuration: one TOML file, one level of sections. Every key has a
//! default, so an empty file runs the default clarinet.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use reedhb::bifurcation::ScanGrid;
use reedhb::hbsolver::{JacobianKind, Spacing, DEFAULT_MAX_ITER, DEFAULT_TOL};
use reedhb::oracle::{FlowDerivative, SimConfig};
use reedhb::spectrum::DEFAULT_ORDER;
use reedhb::{ClarinetParams, ModalImpedance, ReedResponse};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub solver: SolverSection,
    pub threshold: ThresholdSection,
    pub sweep: SweepSection,
    pub oracle: OracleSection,
    pub verify: VerifySection,
    pub transfer: TransferSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReedKind {
    QuasiStatic,
    SingleOscillator,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub zeta: f64,
    /// Mouth pressure for commands that work at a fixed operating point.
    pub gamma: f64,
    pub reed: ReedKind,
    pub reed_gain: f64,
    pub reed_omega: f64,
    pub reed_damping: f64,
    pub omega1: f64,
    pub q1: f64,
    pub modes: usize,
    pub peak_impedance: f64,
    pub position: f64,
    pub source_position: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            zeta: 0.5,
            gamma: 0.5,
            reed: ReedKind::QuasiStatic,
            reed_gain: 1.0,
            reed_omega: 20.0,
            reed_damping: 0.5,
            omega1: 1.0,
            q1: 0.02,
            modes: 8,
            peak_impedance: 10.0,
            position: 0.0,
            source_position: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianChoice {
    FiniteDifference,
    Analytic,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub order: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub jacobian: JacobianChoice,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { order: DEFAULT_ORDER, tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER, jacobian: JacobianChoice::FiniteDifference }
    }
}

/// Scan ranges default to `γ ∈ [0.01, 0.99]`, `ω ∈ [0.5ω₁, 1.5ω₁]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdSection {
    pub gamma_range: Option<[f64; 2]>,
    pub omega_range: Option<[f64; 2]>,
    pub gamma_cells: usize,
    pub omega_cells: usize,
}

impl Default for ThresholdSection {
    fn default() -> Self {
        Self { gamma_range: None, omega_range: None, gamma_cells: 400, omega_cells: 400 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpacingChoice {
    Log,
    Linear,
}

/// Offsets `δ = γ − γ₀`; negative values march below threshold.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub delta_start: f64,
    pub delta_end: f64,
    pub steps: usize,
    pub spacing: SpacingChoice,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { delta_start: 1e-4, delta_end: 1e-2, steps: 20, spacing: SpacingChoice::Log }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowDerivativeChoice {
    ChainRule,
    BackwardDifference,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    /// Defaults to a 64th of the fastest modal period.
    pub dt: Option<f64>,
    pub duration: f64,
    pub transient_fraction: f64,
    /// Defaults to twice the stored `|P₁|` of the compared branch point.
    pub kick: Option<f64>,
    pub flow_derivative: FlowDerivativeChoice,
    /// Branch point compared: the row with `|P₁|` closest to this.
    pub target_amplitude: f64,
    pub max_harmonic: usize,
    /// Run the time-domain comparison as part of `verify`.
    pub enabled: bool,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            dt: None,
            duration: 50_000.0,
            transient_fraction: 0.8,
            kick: None,
            flow_derivative: FlowDerivativeChoice::ChainRule,
            target_amplitude: 0.03,
            max_harmonic: 5,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub worman_c: f64,
    /// A point passes when the bound holds for every `2 <= q <= worman_rank`.
    pub worman_rank: usize,
    pub bound_trials: usize,
    pub bound_half_width: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self { worman_c: 1.0, worman_rank: 5, bound_trials: 1000, bound_half_width: 32 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferSection {
    pub omega_min: f64,
    pub omega_max: f64,
    pub points: usize,
}

impl Default for TransferSection {
    fn default() -> Self {
        Self { omega_min: 0.05, omega_max: 10.0, points: 2000 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| anyhow::anyhow!("{}", e.to_string().trim_end()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    fn validate(&self) -> Result<()> {
        self.params()?;
        let s = &self.solver;
        if !(s.tol > 0.0) || s.max_iter == 0 {
            bail!("solver: tol must be positive and max_iter at least 1");
        }
        if self.sweep.steps == 0 {
            bail!("sweep: steps must be at least 1");
        }
        let t = &self.transfer;
        if !(t.omega_min < t.omega_max) || t.points < 2 {
            bail!("transfer: need omega_min < omega_max and at least 2 points");
        }
        if self.oracle.max_harmonic == 0 || self.verify.worman_rank < 2 || self.verify.bound_trials < 2 {
            bail!("oracle.max_harmonic >= 1, verify.worman_rank >= 2 and verify.bound_trials >= 2 are required");
        }
        Ok(())
    }

    pub fn impedance(&self) -> Result<ModalImpedance> {
        let m = &self.model;
        Ok(ModalImpedance::from_first_mode(1.0, m.omega1, m.q1, m.modes)?
            .with_peak_impedance(m.peak_impedance)?
            .with_positions(m.position, m.source_position)?)
    }

    pub fn reed(&self) -> ReedResponse {
        let m = &self.model;
        match m.reed {
            ReedKind::QuasiStatic => ReedResponse::QuasiStatic { gain: m.reed_gain },
            ReedKind::SingleOscillator => {
                ReedResponse::SingleOscillator { gain: m.reed_gain, omega_r: m.reed_omega, damping: m.reed_damping }
            }
        }
    }

    pub fn params(&self) -> Result<ClarinetParams> {
        Ok(ClarinetParams::new(self.model.zeta, self.model.gamma, self.impedance()?, self.reed(), self.solver.order)?)
    }

    pub fn grid(&self) -> ScanGrid {
        let t = &self.threshold;
        let mut g = ScanGrid::around(self.model.omega1);
        if let Some([a, b]) = t.gamma_range {
            g.gamma_range = (a, b);
        }
        if let Some([a, b]) = t.omega_range {
            g.omega_range = (a, b);
        }
        g.gamma_cells = t.gamma_cells;
        g.omega_cells = t.omega_cells;
        g
    }

    pub fn jacobian(&self) -> JacobianKind {
        match self.solver.jacobian {
            JacobianChoice::FiniteDifference => JacobianKind::FiniteDifference,
            JacobianChoice::Analytic => JacobianKind::Analytic,
        }
    }

    pub fn spacing(&self) -> Spacing {
        match self.sweep.spacing {
            SpacingChoice::Log => Spacing::Log,
            SpacingChoice::Linear => Spacing::Linear,
        }
    }

    pub fn sim_config(&self, params: &ClarinetParams, kick: f64) -> SimConfig {
        let o = &self.oracle;
        SimConfig {
            dt: o.dt.unwrap_or_else(|| SimConfig::default_dt(params)),
            duration: o.duration,
            transient_fraction: o.transient_fraction,
            kick: o.kick.unwrap_or(kick),
            flow_derivative: match o.flow_derivative {
                FlowDerivativeChoice::ChainRule => FlowDerivative::ChainRule,
                FlowDerivativeChoice::BackwardDifference => FlowDerivative::BackwardDifference,
            },
        }
    }
}
