//! Harmonic balance and bifurcation analysis for a reed-driven bore.

pub mod bifurcation;
pub mod clarinet;
pub mod hbsolver;
pub mod oracle;
pub mod spectrum;
pub mod transfer;

pub use bifurcation::{BifurcationError, BifurcationReport, ClarinetModel, Direction, ScanGrid};
pub use clarinet::{ClarinetCoefficients, ClarinetError, ClarinetParams};
pub use hbsolver::{Branch, BranchPoint, HbError, HbSystem, JacobianKind, SolveStatus, UnknownVector};
pub use oracle::{simulate, steady_spectrum, OracleError, SimConfig, Signal};
pub use spectrum::{Sequence, Spectrum, SpectrumError};
pub use transfer::{ModalImpedance, ReedResponse, TransferError};
