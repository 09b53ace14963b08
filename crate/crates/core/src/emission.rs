//! Photon statistics from the dot dynamics: emission probabilities and the
//! sixteen coincidence integrands of the time-bin projective measurements.

use serde::{Deserialize, Serialize};

use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::lindblad::Trajectory;
use crate::model::{ModelParams, Operator, B, DIM, G, X};

/// Number of two-photon projective measurements.
pub const N_PROJECTORS: usize = 16;

/// Single-photon analyzer settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Analyzer {
    /// early time bin
    #[serde(rename = "e")]
    Early,
    /// late time bin
    #[serde(rename = "l")]
    Late,
    /// `(|e⟩ + |l⟩)/√2`
    #[serde(rename = "+")]
    Plus,
    /// `(|e⟩ − i|l⟩)/√2`
    #[serde(rename = "R")]
    Right,
}

impl Analyzer {
    pub const fn symbol(self) -> &'static str {
        match self {
            Analyzer::Early => "e",
            Analyzer::Late => "l",
            Analyzer::Plus => "+",
            Analyzer::Right => "R",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        match s.trim() {
            "e" => Some(Analyzer::Early),
            "l" => Some(Analyzer::Late),
            "+" => Some(Analyzer::Plus),
            "R" => Some(Analyzer::Right),
            _ => None,
        }
    }
}

/// `(biexciton analyzer, exciton analyzer)` for ν = 1..=16, in measurement-table order.
pub const PROJECTOR_LABELS: [(Analyzer, Analyzer); N_PROJECTORS] = {
    use Analyzer::*;
    [
        (Plus, Plus),
        (Plus, Right),
        (Plus, Early),
        (Plus, Late),
        (Right, Plus),
        (Right, Right),
        (Right, Early),
        (Right, Late),
        (Early, Plus),
        (Early, Right),
        (Early, Early),
        (Early, Late),
        (Late, Plus),
        (Late, Right),
        (Late, Early),
        (Late, Late),
    ]
};

/// Pairs of ν (1-based) whose integrands are the same expression.
pub const IDENTICAL_ROWS: [(usize, usize); 6] = [(3, 4), (7, 8), (9, 10), (13, 14), (11, 16), (12, 15)];

/// The sixteen coincidence integrands η_ν evaluated on a dot state.
///
/// Every entry is a polynomial in `ρ_bb`, `ρ_xx`, `ρ_bx ρ_xb` and `ρ_bg ρ_gb`,
/// so the result is invariant under diagonal phase rotations of the state.
#[inline]
pub fn eta_all(rho: &Operator) -> [f64; N_PROJECTORS] {
    let bb = rho[(B, B)].re;
    let xx = rho[(X, X)].re;
    let bx_xb = (rho[(B, X)] * rho[(X, B)]).re;
    let bg_gb = (rho[(B, G)] * rho[(G, B)]).re;

    let with_bx = 0.5 * (bb * (1.0 + xx) + 2.0 * bx_xb + xx * bb);
    let plain = 0.5 * (bb * (1.0 + xx) + xx * bb);
    [
        0.5 * (bb * (1.0 + xx) + 2.0 * bx_xb + bg_gb + xx * bb),
        with_bx,
        with_bx,
        with_bx,
        plain,
        0.5 * (bb * (1.0 + xx) - bg_gb + xx * bb),
        plain,
        plain,
        plain,
        plain,
        bb,
        2.0 * xx * bb,
        plain,
        plain,
        2.0 * xx * bb,
        bb,
    ]
}

/// η_ν for a single 1-based projector index on a five-level dot state.
pub fn eta(nu: usize, rho: &DensityMatrix) -> Result<f64> {
    if !(1..=N_PROJECTORS).contains(&nu) {
        return Err(Error::ProjectorIndex(nu));
    }
    if rho.dim() != DIM {
        return Err(Error::DimensionMismatch { expected: DIM, got: rho.dim() });
    }
    let m = Operator::from_fn(|i, j| rho.get(i, j));
    Ok(eta_all(&m)[nu - 1])
}

/// Emission probabilities `P_i = γ_i ∫⟨i|ρ|i⟩dt` for the exciton and biexciton.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionProbabilities {
    pub p_x: f64,
    pub p_b: f64,
}

pub fn emission_probabilities(traj: &Trajectory, p: &ModelParams) -> Result<EmissionProbabilities> {
    traj.ensure_horizon(p.t_total)?;
    let acc = traj.final_accumulators();
    Ok(EmissionProbabilities {
        p_x: p.gamma_x * acc.pop_x,
        p_b: p.gamma_b * acc.pop_b,
    })
}

/// Simulated or measured coincidence counts `n_ν`, ν = 1..=16.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoincidenceVector {
    counts: [f64; N_PROJECTORS],
}

impl CoincidenceVector {
    pub fn new(counts: [f64; N_PROJECTORS]) -> Result<Self> {
        if let Some((i, c)) = counts.iter().enumerate().find(|(_, c)| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::InvalidDataset(format!("count for nu = {} is {c}; counts must be finite and >= 0", i + 1)));
        }
        Ok(CoincidenceVector { counts })
    }

    pub fn counts(&self) -> &[f64; N_PROJECTORS] {
        &self.counts
    }

    /// Count for a 1-based projector index.
    pub fn get(&self, nu: usize) -> Result<f64> {
        if !(1..=N_PROJECTORS).contains(&nu) {
            return Err(Error::ProjectorIndex(nu));
        }
        Ok(self.counts[nu - 1])
    }

    pub fn labels(&self) -> &'static [(Analyzer, Analyzer); N_PROJECTORS] {
        &PROJECTOR_LABELS
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        CoincidenceVector::new(self.counts.map(|c| c * factor))
    }
}

/// `n_ν = ∫η_ν dt` read from the trajectory accumulators.
pub fn coincidence_counts(traj: &Trajectory) -> Result<CoincidenceVector> {
    if traj.accumulators().is_empty() {
        return Err(Error::InvalidState("trajectory carries no accumulators".into()));
    }
    CoincidenceVector::new(traj.final_accumulators().eta.map(|v| v.max(0.0)))
}
