//! Lindblad master-equation engine for the driven dot.
//!
//! The state vector integrated by the solver is the flattened 5×5 density
//! matrix followed by the running integrals of `ρ_xx`, `ρ_bb` and the sixteen
//! coincidence integrands, so time integrals share the solver's error control.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::density::{DensityMatrix, StateTolerance};
use crate::emission::{eta_all, N_PROJECTORS};
use crate::error::{Error, Result};
use crate::integrator::{Dopri5, Stats, Tolerances};
use crate::model::{bare_energies, collapse_operators, pulse_envelope, Channel, ModelParams, Operator, B, C64, DIM, G, X};

const RHO_LEN: usize = 2 * DIM * DIM;
const ACC_POP_X: usize = RHO_LEN;
const ACC_POP_B: usize = RHO_LEN + 1;
const ACC_ETA: usize = RHO_LEN + 2;
/// Length of the augmented real state vector.
pub const STATE_LEN: usize = RHO_LEN + 2 + N_PROJECTORS;

/// Reference frame the solver integrates in. Stored states are always
/// reported in the frame of [`crate::model::hamiltonian`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Rotating with the static level energies; the drive carries the phases
    /// and the free evolution after the pulse is slow.
    #[default]
    Rotating,
    /// Integrate the Hamiltonian as given.
    Lab,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveOptions {
    #[serde(flatten)]
    pub tol: Tolerances,
    pub frame: Frame,
    /// Half-width of the pulse window in units of the FWHM.
    pub pulse_window: f64,
    /// Largest step inside the pulse window, in units of the FWHM.
    pub pulse_step: f64,
    /// Largest step outside the pulse window, ps.
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            tol: Tolerances::default(),
            frame: Frame::Rotating,
            pulse_window: 4.0,
            pulse_step: 0.1,
            max_step: 50.0,
            max_steps: 2_000_000,
        }
    }
}

impl EvolveOptions {
    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.tol = Tolerances { rtol, atol };
        self
    }

    pub fn with_frame(mut self, frame: Frame) -> Self {
        self.frame = frame;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.tol.validate()?;
        if !(self.pulse_window > 0.0 && self.pulse_step > 0.0 && self.max_step > 0.0) || self.max_steps == 0 {
            return Err(Error::Config("evolve options must be positive".into()));
        }
        Ok(())
    }
}

/// Running integrals at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Accumulators {
    /// `∫ρ_xx dt`, ps
    pub pop_x: f64,
    /// `∫ρ_bb dt`, ps
    pub pop_b: f64,
    /// `∫η_ν dt`, ps
    pub eta: [f64; N_PROJECTORS],
}

impl Accumulators {
    fn from_state(y: &[f64; STATE_LEN]) -> Self {
        let mut eta = [0.0; N_PROJECTORS];
        eta.copy_from_slice(&y[ACC_ETA..ACC_ETA + N_PROJECTORS]);
        Accumulators { pop_x: y[ACC_POP_X], pop_b: y[ACC_POP_B], eta }
    }
}

/// Time-ordered dot states with the running integrals.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Operator>,
    accumulators: Vec<Accumulators>,
    stats: Stats,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Operator] {
        &self.states
    }

    pub fn accumulators(&self) -> &[Accumulators] {
        &self.accumulators
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn final_state(&self) -> &Operator {
        self.states.last().expect("trajectory has at least the initial state")
    }

    pub fn final_accumulators(&self) -> &Accumulators {
        self.accumulators.last().expect("trajectory has at least the initial state")
    }

    pub fn solver_stats(&self) -> Stats {
        self.stats
    }

    pub fn density_matrix(&self, index: usize) -> DensityMatrix {
        let m = &self.states[index];
        DensityMatrix::from_matrix(DMatrix::from_fn(DIM, DIM, |i, j| m[(i, j)])).expect("square")
    }

    pub(crate) fn ensure_horizon(&self, horizon: f64) -> Result<()> {
        let end = self.end_time();
        if end < horizon * (1.0 - 1e-12) {
            return Err(Error::TruncatedTrajectory { end, horizon });
        }
        Ok(())
    }

    /// Drops every sample after `t`; used to exercise truncation handling.
    pub fn truncated(&self, t: f64) -> Trajectory {
        let n = self.times.partition_point(|&s| s <= t).max(1);
        Trajectory {
            times: self.times[..n].to_vec(),
            states: self.states[..n].to_vec(),
            accumulators: self.accumulators[..n].to_vec(),
            stats: self.stats,
        }
    }

    /// Checks every stored state against the density-matrix invariants.
    pub fn check_states(&self, tol: StateTolerance) -> Result<()> {
        for (k, t) in self.times.iter().enumerate() {
            self.density_matrix(k)
                .check(tol)
                .map_err(|e| Error::InvalidState(format!("at t = {t} ps: {e}")))?;
        }
        Ok(())
    }
}

#[inline]
fn load(y: &[f64], rho: &mut Operator) {
    for k in 0..DIM * DIM {
        rho[(k / DIM, k % DIM)] = C64::new(y[2 * k], y[2 * k + 1]);
    }
}

#[inline]
fn store(rho: &Operator, y: &mut [f64]) {
    for k in 0..DIM * DIM {
        let z = rho[(k / DIM, k % DIM)];
        y[2 * k] = z.re;
        y[2 * k + 1] = z.im;
    }
}

/// Nonzero entries of the (possibly frame-rotated) Hamiltonian.
struct SparseHamiltonian {
    entries: [(usize, usize, C64); 9],
    len: usize,
}

impl SparseHamiltonian {
    fn at(t: f64, p: &ModelParams, frame: Frame) -> Self {
        let mut h = SparseHamiltonian { entries: [(0, 0, C64::new(0.0, 0.0)); 9], len: 0 };
        let energies = bare_energies(p);
        let omega = pulse_envelope(t, p);
        match frame {
            Frame::Lab => {
                for (i, e) in energies.iter().enumerate() {
                    if *e != 0.0 {
                        h.push(i, i, C64::new(*e, 0.0));
                    }
                }
                if omega != 0.0 {
                    let w = C64::new(omega, 0.0);
                    h.push(G, X, w);
                    h.push(X, G, w);
                    h.push(X, B, w);
                    h.push(B, X, w);
                }
            }
            Frame::Rotating => {
                if omega != 0.0 {
                    // H_I[k, l] = V[k, l] exp(i (E_k − E_l) t)
                    let gx = C64::from_polar(omega, (energies[G] - energies[X]) * t);
                    let xb = C64::from_polar(omega, (energies[X] - energies[B]) * t);
                    h.push(G, X, gx);
                    h.push(X, G, gx.conj());
                    h.push(X, B, xb);
                    h.push(B, X, xb.conj());
                }
            }
        }
        h
    }

    #[inline]
    fn push(&mut self, i: usize, j: usize, v: C64) {
        self.entries[self.len] = (i, j, v);
        self.len += 1;
    }

    fn entries(&self) -> &[(usize, usize, C64)] {
        &self.entries[..self.len]
    }
}

/// `i[ρ, H] + Σ_j D[R_j](ρ)` using the sparsity of H and of the channels.
fn generator(rho: &Operator, t: f64, p: &ModelParams, frame: Frame) -> Operator {
    let mut d = Operator::zeros();
    let i_unit = C64::new(0.0, 1.0);

    for &(k, l, h) in SparseHamiltonian::at(t, p, frame).entries() {
        // (ρH)[r, l] += ρ[r, k] h ; (Hρ)[k, c] += h ρ[l, c]
        let ih = i_unit * h;
        for r in 0..DIM {
            d[(r, l)] += ih * rho[(r, k)];
        }
        for c in 0..DIM {
            d[(k, c)] -= ih * rho[(l, c)];
        }
    }

    for op in collapse_operators(t, p) {
        let rate = op.rate();
        if rate == 0.0 {
            continue;
        }
        match op.channel {
            Channel::Jump { from, to } => {
                d[(to, to)] += rho[(from, from)] * rate;
                let half = 0.5 * rate;
                for k in 0..DIM {
                    d[(from, k)] -= rho[(from, k)] * half;
                    d[(k, from)] -= rho[(k, from)] * half;
                }
            }
            Channel::Dephasing { upper, lower } => {
                let weight = |k: usize| {
                    if k == upper {
                        1.0
                    } else if k == lower {
                        -1.0
                    } else {
                        0.0
                    }
                };
                for r in 0..DIM {
                    for c in 0..DIM {
                        let dv = weight(r) - weight(c);
                        if dv != 0.0 {
                            d[(r, c)] -= rho[(r, c)] * (0.5 * rate * dv * dv);
                        }
                    }
                }
            }
        }
    }

    // exact Hermitian symmetry keeps the integrated state Hermitian
    for r in 0..DIM {
        d[(r, r)].im = 0.0;
        for c in r + 1..DIM {
            let avg = (d[(r, c)] + d[(c, r)].conj()) * 0.5;
            d[(r, c)] = avg;
            d[(c, r)] = avg.conj();
        }
    }
    d
}

/// Right-hand side of the master equation,
/// `i[ρ,H] + ½Σⱼ(2RⱼρRⱼ† − Rⱼ†Rⱼρ − ρRⱼ†Rⱼ)`, for a five-level state.
pub fn lindblad_rhs(rho: &DensityMatrix, t: f64, p: &ModelParams) -> Result<DMatrix<C64>> {
    if rho.dim() != DIM {
        return Err(Error::DimensionMismatch { expected: DIM, got: rho.dim() });
    }
    let m = Operator::from_fn(|i, j| rho.get(i, j));
    let d = generator(&m, t, p, Frame::Lab);
    Ok(DMatrix::from_fn(DIM, DIM, |i, j| d[(i, j)]))
}

/// Phase factors taking a rotating-frame state to the lab frame at time `t`.
fn to_lab(rho: &Operator, t: f64, energies: &[f64; DIM]) -> Operator {
    Operator::from_fn(|k, l| {
        let de = energies[k] - energies[l];
        if de == 0.0 {
            rho[(k, l)]
        } else {
            rho[(k, l)] * C64::from_polar(1.0, -de * t)
        }
    })
}

fn to_rotating(rho: &Operator, t: f64, energies: &[f64; DIM]) -> Operator {
    Operator::from_fn(|k, l| {
        let de = energies[k] - energies[l];
        if de == 0.0 {
            rho[(k, l)]
        } else {
            rho[(k, l)] * C64::from_polar(1.0, de * t)
        }
    })
}

/// Integrates the master equation from `init` at t = 0 over `[0, t_total]`.
pub fn evolve(p: &ModelParams, init: &DensityMatrix, opts: &EvolveOptions) -> Result<Trajectory> {
    p.validate()?;
    opts.validate()?;
    if init.dim() != DIM {
        return Err(Error::DimensionMismatch { expected: DIM, got: init.dim() });
    }
    init.check(StateTolerance::default())?;

    let energies = bare_energies(p);
    let frame = opts.frame;
    let rho0 = Operator::from_fn(|i, j| init.get(i, j));

    let mut y = [0.0; STATE_LEN];
    store(&to_rotating_if(&rho0, 0.0, &energies, frame), &mut y);

    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![rho0],
        accumulators: vec![Accumulators::default()],
        stats: Stats::default(),
    };

    let rhs = |t: f64, y: &[f64; STATE_LEN], dy: &mut [f64; STATE_LEN]| {
        let mut rho = Operator::zeros();
        load(y, &mut rho);
        let d = generator(&rho, t, p, frame);
        store(&d, dy);
        dy[ACC_POP_X] = rho[(X, X)].re;
        dy[ACC_POP_B] = rho[(B, B)].re;
        dy[ACC_ETA..ACC_ETA + N_PROJECTORS].copy_from_slice(&eta_all(&rho));
    };

    let half_window = opts.pulse_window * p.tau;
    let window_start = (p.t0 - half_window).clamp(0.0, p.t_total);
    let window_end = (p.t0 + half_window).clamp(0.0, p.t_total);
    let segments = [
        (0.0, window_start, opts.max_step),
        (window_start, window_end, (opts.pulse_step * p.tau).min(opts.max_step)),
        (window_end, p.t_total, opts.max_step),
    ];

    let mut h = 0.0;
    for (start, end, h_max) in segments {
        if end <= start {
            continue;
        }
        let solver = Dopri5::new(opts.tol).with_h_max(h_max).with_max_steps(opts.max_steps);
        let stats = solver.integrate(rhs, start, end, &mut y, &mut h, |t, y| {
            let mut rho = Operator::zeros();
            load(y, &mut rho);
            let sym = (rho + rho.adjoint()) * C64::new(0.5, 0.0);
            let changed = sym != rho;
            if changed {
                store(&sym, y);
            }
            traj.times.push(t);
            traj.states.push(to_lab_if(&sym, t, &energies, frame));
            traj.accumulators.push(Accumulators::from_state(y));
            changed
        })?;
        traj.stats += stats;
    }
    Ok(traj)
}

fn to_lab_if(rho: &Operator, t: f64, energies: &[f64; DIM], frame: Frame) -> Operator {
    match frame {
        Frame::Lab => *rho,
        Frame::Rotating => to_lab(rho, t, energies),
    }
}

fn to_rotating_if(rho: &Operator, t: f64, energies: &[f64; DIM], frame: Frame) -> Operator {
    match frame {
        Frame::Lab => *rho,
        Frame::Rotating => to_rotating(rho, t, energies),
    }
}

/// Initial dot state selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    #[default]
    Ground,
    Exciton,
    Biexciton,
}

impl InitialState {
    pub fn density_matrix(self) -> DensityMatrix {
        let index = match self {
            InitialState::Ground => G,
            InitialState::Exciton => X,
            InitialState::Biexciton => B,
        };
        DensityMatrix::basis_state(DIM, index)
    }
}
