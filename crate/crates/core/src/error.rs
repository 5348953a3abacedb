use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("model is gapless: min dispersion {min_gap:e} below tolerance {tolerance:e}")]
    GaplessModel { min_gap: f64, tolerance: f64 },
    #[error("chiral symmetry broken (omega_delta = {omega_delta})")]
    ChiralityBroken { omega_delta: f64 },
    #[error("site {site} out of range for a lattice of {sites} sites")]
    InvalidSite { site: usize, sites: usize },
    #[error("lattice of {n_cells} cells is smaller than the minimum {min}")]
    SizeTooSmall { n_cells: usize, min: usize },
    #[error("state is not normalized (norm^2 = {norm_sq})")]
    NotNormalized { norm_sq: f64 },
    #[error("energy {energy} lies inside a band")]
    EnergyInBand { energy: f64 },
    #[error("polynomial root {modulus} lies on the unit circle")]
    RootOnUnitCircle { modulus: f64 },
    #[error("no pole of the emitter Green function in the {gap} gap")]
    NoPoleInGap { gap: String },
    #[error("no in-gap eigenstate found in ({lo}, {hi})")]
    NoInGapState { lo: f64, hi: f64 },
    #[error("chain has no edge states inside the gap window")]
    NoEdgeStates,
    #[error("band structure has no in-band Van Hove singularity")]
    NoVhs,
    #[error("time grid too short: {reason}")]
    GridTooShort { reason: String },
    #[error("tone {index} has non-positive frequency {value}")]
    NonPositiveTone { index: usize, value: f64 },
    #[error("amplitude square root needs a positive {name}, got {value}")]
    SqrtDomain { name: &'static str, value: f64 },
    #[error("integration step {dt} exceeds bound {max_dt}")]
    StepTooLarge { dt: f64, max_dt: f64 },
    #[error("frequency hierarchy violated: {detail}")]
    HierarchyViolated { detail: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
