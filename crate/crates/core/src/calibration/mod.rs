//! Parameter extraction: exponential decay fits for the radiative rates and
//! the Rabi-oscillation fit that matches simulated emission probabilities to
//! measured biexciton and exciton counts.

mod decay;
mod optimizer;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emission::{emission_probabilities, EmissionProbabilities};
use crate::error::{Error, Result};
use crate::lindblad::{evolve, EvolveOptions, InitialState};
use crate::model::{power_to_omega0, ModelParams, ParamName};
use optimizer::{latin_hypercube, levenberg_marquardt, nelder_mead, Evaluator, PolishOptions, SimplexOptions};

pub use decay::{fit_decay, DecayFit, MIN_DECAY_POINTS};

/// How the power column of a [`RabiDataset`] was recorded. Both are mapped to
/// Ω₀ through `k_p_scale`/`k_p_off`; the tag only documents the axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerUnit {
    /// average laser power as read off the power meter
    #[default]
    AveragePower,
    /// power rescaled so that the first Rabi maximum sits at π
    ExcitationAngle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RabiRow {
    pub power: f64,
    pub counts_b: f64,
    pub counts_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiDataset {
    pub rows: Vec<RabiRow>,
    /// pulse FWHM used for every row, ps
    pub tau: f64,
    #[serde(default)]
    pub power_unit: PowerUnit,
}

impl RabiDataset {
    pub fn new(rows: Vec<RabiRow>, tau: f64, power_unit: PowerUnit) -> Result<Self> {
        let data = RabiDataset { rows, tau, power_unit };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::InvalidDataset("Rabi dataset has no rows".into()));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidDataset(format!("pulse FWHM must be positive, got {}", self.tau)));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if !r.power.is_finite() || !(r.counts_b.is_finite() && r.counts_b >= 0.0) || !(r.counts_x.is_finite() && r.counts_x >= 0.0) {
                return Err(Error::InvalidDataset(format!("Rabi row {}: need finite power and counts >= 0", i + 1)));
            }
            if i > 0 && r.power <= self.rows[i - 1].power {
                return Err(Error::InvalidDataset(format!("Rabi row {}: powers must be strictly increasing", i + 1)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedCounts {
    pub counts_b: f64,
    pub counts_x: f64,
    pub p_b: f64,
    pub p_x: f64,
}

/// `counts_i = k_c_scale_i · P_i + k_c_off_i`.
pub fn counts_from_probabilities(p: &ModelParams, probs: EmissionProbabilities) -> PredictedCounts {
    PredictedCounts {
        counts_b: p.k_c_scale_b * probs.p_b + p.k_c_off_b,
        counts_x: p.k_c_scale_x * probs.p_x + p.k_c_off_x,
        p_b: probs.p_b,
        p_x: probs.p_x,
    }
}

fn emission_at_power(p: &ModelParams, power: f64, opts: &EvolveOptions) -> Result<EmissionProbabilities> {
    let q = ModelParams { omega0: power_to_omega0(power, p)?, ..*p };
    let traj = evolve(&q, &InitialState::Ground.density_matrix(), opts)?;
    emission_probabilities(&traj, &q)
}

/// Detected counts at one laser power, via the full evolve → emission pipeline.
pub fn predict_counts(p: &ModelParams, power: f64) -> Result<PredictedCounts> {
    predict_counts_with(p, power, &EvolveOptions::default())
}

pub fn predict_counts_with(p: &ModelParams, power: f64, opts: &EvolveOptions) -> Result<PredictedCounts> {
    Ok(counts_from_probabilities(p, emission_at_power(p, power, opts)?))
}

/// A fitted parameter and the closed interval it is searched in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeParam {
    pub name: ParamName,
    pub lower: f64,
    pub upper: f64,
}

impl FreeParam {
    pub fn new(name: ParamName, lower: f64, upper: f64) -> Self {
        FreeParam { name, lower, upper }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower < self.upper) {
            return Err(Error::InvalidBounds { name: self.name.to_string(), lower: self.lower, upper: self.upper });
        }
        Ok(())
    }

    /// Positive intervals are searched in log scale.
    fn logarithmic(&self) -> bool {
        self.lower > 0.0
    }

    fn unit_coord(&self, v: f64) -> f64 {
        let v = v.clamp(self.lower, self.upper);
        if self.logarithmic() {
            (v / self.lower).ln() / (self.upper / self.lower).ln()
        } else {
            (v - self.lower) / (self.upper - self.lower)
        }
    }

    fn value_at(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let v = if self.logarithmic() {
            self.lower * (self.upper / self.lower).powf(u)
        } else {
            self.lower + u * (self.upper - self.lower)
        };
        v.clamp(self.lower, self.upper)
    }
}

/// The Rabi-fit parameters with bounds one decade either side of their current values.
pub fn default_free_params(p: &ModelParams) -> Vec<FreeParam> {
    ParamName::RABI_FIT
        .iter()
        .map(|&name| {
            let v = p.get(name);
            if v > 0.0 {
                FreeParam::new(name, v / 10.0, v * 10.0)
            } else {
                FreeParam::new(name, 0.0, 1.0)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub seed: u64,
    /// Total objective evaluations; each costs one solve per dataset row.
    pub max_evaluations: usize,
    /// Latin-hypercube samples; 0 picks ten per nonlinear parameter.
    pub lhs_samples: usize,
    pub simplex_evaluations: usize,
    /// Finish with a Levenberg–Marquardt polish on the residual vector.
    pub polish: bool,
    pub evolve: EvolveOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            seed: 0,
            max_evaluations: 2000,
            lhs_samples: 0,
            simplex_evaluations: 600,
            polish: true,
            evolve: EvolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedPoint {
    pub evaluation: usize,
    pub power: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub params: ModelParams,
    /// sum of squared count residuals over both species
    pub residual: f64,
    /// the same sum at the starting parameters
    pub initial_residual: f64,
    pub evaluations: usize,
    pub solver_runs: usize,
    pub bounds: Vec<FreeParam>,
    /// the evaluation budget ran out before the local search converged
    pub budget_exhausted: bool,
    pub power_unit: PowerUnit,
    pub skipped: Vec<SkippedPoint>,
}

impl FitReport {
    pub fn improved(&self) -> bool {
        self.residual < self.initial_residual
    }
}

fn is_linear(name: ParamName) -> bool {
    matches!(name, ParamName::KCScaleB | ParamName::KCScaleX | ParamName::KCOffB | ParamName::KCOffX)
}

/// Linear count model `y ≈ s·P + o` with each coefficient either fixed or bounded.
struct LinearPart {
    scale: (f64, Option<(f64, f64)>),
    offset: (f64, Option<(f64, f64)>),
}

impl LinearPart {
    fn ssr(p: &[f64], y: &[f64], s: f64, o: f64) -> f64 {
        p.iter().zip(y).map(|(p, y)| (s * p + o - y).powi(2)).sum()
    }

    /// Minimizes the squared residual over the free coefficients inside their bounds.
    fn solve(&self, p: &[f64], y: &[f64]) -> (f64, f64) {
        let n = p.len() as f64;
        let (sp, sy) = (p.iter().sum::<f64>(), y.iter().sum::<f64>());
        let spp: f64 = p.iter().map(|v| v * v).sum();
        let spy: f64 = p.iter().zip(y).map(|(a, b)| a * b).sum();
        let best_scale = |o: f64, (lo, hi): (f64, f64), fallback: f64| {
            if spp > 0.0 {
                ((spy - o * sp) / spp).clamp(lo, hi)
            } else {
                fallback.clamp(lo, hi)
            }
        };
        let best_offset = |s: f64, (lo, hi): (f64, f64)| ((sy - s * sp) / n).clamp(lo, hi);
        match (self.scale, self.offset) {
            ((s, None), (o, None)) => (s, o),
            ((s0, Some(sb)), (o, None)) => (best_scale(o, sb, s0), o),
            ((s, None), (_, Some(ob))) => (s, best_offset(s, ob)),
            ((s0, Some(sb)), (_, Some(ob))) => {
                let det = n * spp - sp * sp;
                if det > 1e-300 * n * spp.max(1.0) {
                    let s = (n * spy - sp * sy) / det;
                    let o = (sy - s * sp) / n;
                    if (sb.0..=sb.1).contains(&s) && (ob.0..=ob.1).contains(&o) {
                        return (s, o);
                    }
                }
                // the constrained optimum lies on an edge of the box
                let mut candidates = vec![
                    (sb.0, best_offset(sb.0, ob)),
                    (sb.1, best_offset(sb.1, ob)),
                    (best_scale(ob.0, sb, s0), ob.0),
                    (best_scale(ob.1, sb, s0), ob.1),
                ];
                if det <= 1e-300 * n * spp.max(1.0) {
                    let s = s0.clamp(sb.0, sb.1);
                    candidates.push((s, best_offset(s, ob)));
                }
                candidates
                    .into_iter()
                    .min_by(|a, b| Self::ssr(p, y, a.0, a.1).total_cmp(&Self::ssr(p, y, b.0, b.1)))
                    .expect("non-empty")
            }
        }
    }
}

/// Fits the free parameters to a Rabi dataset by least squares on both count
/// series. Count scales and offsets that are free are solved exactly for each
/// candidate; the remaining parameters are searched by Latin-hypercube
/// sampling, Nelder–Mead and a Levenberg–Marquardt polish in normalized
/// (log-scaled where positive) coordinates.
pub fn fit_rabi(data: &RabiDataset, start: &ModelParams, free: &[FreeParam], opts: &FitOptions) -> Result<FitReport> {
    if free.is_empty() {
        return Err(Error::NoFreeParameters);
    }
    data.validate()?;
    opts.evolve.validate()?;
    if opts.max_evaluations == 0 {
        return Err(Error::Config("fit needs at least one objective evaluation".into()));
    }
    for (i, f) in free.iter().enumerate() {
        f.validate()?;
        if free[..i].iter().any(|g| g.name == f.name) {
            return Err(Error::Config(format!("parameter `{}` listed twice", f.name)));
        }
    }
    let mut base = ModelParams { tau: data.tau, ..*start };
    for f in free {
        base.set(f.name, base.get(f.name).clamp(f.lower, f.upper));
    }
    base.validate()?;

    let nonlinear: Vec<FreeParam> = free.iter().copied().filter(|f| !is_linear(f.name)).collect();
    let bound_of = |name: ParamName| free.iter().find(|f| f.name == name).map(|f| (f.lower, f.upper));
    let species = [
        LinearPart {
            scale: (base.k_c_scale_b, bound_of(ParamName::KCScaleB)),
            offset: (base.k_c_off_b, bound_of(ParamName::KCOffB)),
        },
        LinearPart {
            scale: (base.k_c_scale_x, bound_of(ParamName::KCScaleX)),
            offset: (base.k_c_off_x, bound_of(ParamName::KCOffX)),
        },
    ];
    let observed = [
        data.rows.iter().map(|r| r.counts_b).collect::<Vec<_>>(),
        data.rows.iter().map(|r| r.counts_x).collect::<Vec<_>>(),
    ];
    let n_rows = data.rows.len();

    let mut skipped = Vec::new();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut initial_residual = None;
    let mut evaluation = 0usize;

    let objective = |u: &[f64]| -> Vec<f64> {
        evaluation += 1;
        let mut q = base;
        for (f, &x) in nonlinear.iter().zip(u) {
            q.set(f.name, f.value_at(x));
        }
        let probs: Vec<Result<EmissionProbabilities>> =
            data.rows.par_iter().map(|r| emission_at_power(&q, r.power, &opts.evolve)).collect();

        let mut ok = vec![true; n_rows];
        let mut pb = vec![0.0; n_rows];
        let mut px = vec![0.0; n_rows];
        for (k, res) in probs.into_iter().enumerate() {
            match res {
                Ok(e) => {
                    pb[k] = e.p_b;
                    px[k] = e.p_x;
                }
                Err(e) => {
                    log::warn!("fit evaluation {evaluation}: power {} skipped: {e}", data.rows[k].power);
                    skipped.push(SkippedPoint { evaluation, power: data.rows[k].power, message: e.to_string() });
                    ok[k] = false;
                }
            }
        }
        if !ok.iter().any(|&b| b) {
            return vec![f64::INFINITY; 2 * n_rows];
        }
        let keep = |v: &[f64]| v.iter().zip(&ok).filter(|(_, &k)| k).map(|(x, _)| *x).collect::<Vec<_>>();
        let mut residuals = vec![0.0; 2 * n_rows];
        let mut coeffs = [(0.0, 0.0); 2];
        for (sp, (part, p)) in species.iter().zip([&pb, &px]).enumerate() {
            let (s, o) = part.solve(&keep(p), &keep(&observed[sp]));
            coeffs[sp] = (s, o);
            for k in (0..n_rows).filter(|&k| ok[k]) {
                residuals[sp * n_rows + k] = s * p[k] + o - observed[sp][k];
            }
        }
        let value: f64 = residuals.iter().map(|r| r * r).sum();
        if initial_residual.is_none() {
            // starting count scales and offsets, before profiling
            let start_value: f64 = (0..n_rows)
                .filter(|&k| ok[k])
                .map(|k| {
                    (base.k_c_scale_b * pb[k] + base.k_c_off_b - observed[0][k]).powi(2)
                        + (base.k_c_scale_x * px[k] + base.k_c_off_x - observed[1][k]).powi(2)
                })
                .sum();
            initial_residual = Some(start_value);
        }
        if value.is_finite() && best.as_ref().is_none_or(|(b, _)| value < *b) {
            q.k_c_scale_b = coeffs[0].0;
            q.k_c_off_b = coeffs[0].1;
            q.k_c_scale_x = coeffs[1].0;
            q.k_c_off_x = coeffs[1].1;
            best = Some((value, q));
        }
        residuals
    };

    let dim = nonlinear.len();
    let mut ev = Evaluator::new(objective, opts.max_evaluations, dim);
    let u0: Vec<f64> = nonlinear.iter().map(|f| f.unit_coord(base.get(f.name))).collect();
    ev.value(&u0);

    if dim > 0 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
        let n_lhs = if opts.lhs_samples > 0 { opts.lhs_samples } else { 10 * dim };
        for u in latin_hypercube(n_lhs, dim, &mut rng) {
            if ev.value(&u).is_none() {
                break;
            }
        }
        let simplex = SimplexOptions {
            initial_step: 0.1,
            max_evaluations: opts.simplex_evaluations,
            ftol: 1e-10,
            xtol: 1e-6,
        };
        let from = ev.best_u.clone();
        nelder_mead(&mut ev, &from, simplex);
        if opts.polish {
            let from = ev.best_u.clone();
            levenberg_marquardt(&mut ev, &from, PolishOptions { fd_step: 1e-4, max_iterations: 50, rtol: 1e-12 });
        }
    }
    let used = ev.used;
    let budget_exhausted = ev.exhausted() && dim > 0;
    drop(ev);

    let (residual, params) = best.ok_or_else(|| {
        Error::InvalidDataset("every dataset row failed to simulate at every candidate".into())
    })?;
    if budget_exhausted {
        log::warn!("fit stopped after {used} evaluations (budget exhausted)");
    }
    Ok(FitReport {
        params,
        residual,
        initial_residual: initial_residual.unwrap_or(f64::INFINITY),
        evaluations: used,
        solver_runs: used * n_rows,
        bounds: free.to_vec(),
        budget_exhausted,
        power_unit: data.power_unit,
        skipped,
    })
}
