//! Driven quantum-dot model: parameters, pulse envelope, Hamiltonian and
//! collapse operators on the fixed basis `(g, x, b, d_x, d_b)`.
//!
//! Units: ħ = 1, times in ps, energies and rates in THz (1/ps).

use std::fmt;
use std::str::FromStr;

use nalgebra::{Complex, Matrix5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Dimension of the dot Hilbert space.
pub const DIM: usize = 5;

/// Square operator on the dot space.
pub type Operator = Matrix5<C64>;

/// Level indices of the dot basis. The order is shared by every module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(usize)]
pub enum Level {
    Ground = 0,
    Exciton = 1,
    Biexciton = 2,
    DarkExciton = 3,
    DarkBiexciton = 4,
}

impl Level {
    pub const ALL: [Level; DIM] = [
        Level::Ground,
        Level::Exciton,
        Level::Biexciton,
        Level::DarkExciton,
        Level::DarkBiexciton,
    ];

    #[inline]
    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn label(self) -> &'static str {
        match self {
            Level::Ground => "g",
            Level::Exciton => "x",
            Level::Biexciton => "b",
            Level::DarkExciton => "dx",
            Level::DarkBiexciton => "db",
        }
    }
}

pub const G: usize = Level::Ground.index();
pub const X: usize = Level::Exciton.index();
pub const B: usize = Level::Biexciton.index();
pub const DX: usize = Level::DarkExciton.index();
pub const DB: usize = Level::DarkBiexciton.index();

/// Physical and calibration parameters of the driven dot.
///
/// `Default` holds the fixed values and fitted values of the reference
/// nanowire dot, with the pulse set to the π/15 operating point
/// (`omega0 = 0.05` THz, `tau = 85` ps).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Exciton detuning from the laser, THz.
    pub delta_x: f64,
    /// Biexciton detuning from the two-photon resonance, THz.
    pub delta_b: f64,
    /// Rabi-frequency amplitude, THz.
    pub omega0: f64,
    /// Pulse FWHM, ps.
    pub tau: f64,
    /// Pulse centre, ps.
    pub t0: f64,
    /// Integration horizon, ps.
    pub t_total: f64,
    pub gamma_b: f64,
    pub gamma_x: f64,
    pub gamma_bx_i0: f64,
    pub gamma_xg_i0: f64,
    pub gamma_bx_const: f64,
    pub gamma_xg_const: f64,
    pub gamma_bd_i0: f64,
    pub gamma_xd_i0: f64,
    /// Exponent of the intensity dependence of dephasing and dark-state loss.
    pub n_exp: f64,
    /// Rabi scaling frequency, THz.
    pub omega_s: f64,
    pub k_p_scale: f64,
    pub k_p_off: f64,
    pub k_c_scale_b: f64,
    pub k_c_scale_x: f64,
    pub k_c_off_b: f64,
    pub k_c_off_x: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            delta_x: 1.60,
            delta_b: 0.0,
            omega0: 0.05,
            tau: 85.0,
            t0: 300.0,
            t_total: 7000.0,
            gamma_b: 1.0 / 458.0,
            gamma_x: 1.0 / 1241.0,
            gamma_bx_i0: 0.03,
            gamma_xg_i0: 0.69,
            gamma_bx_const: 0.56e-3,
            gamma_xg_const: 0.25e-3,
            gamma_bd_i0: 1.16e-3,
            gamma_xd_i0: 9.51e-3,
            n_exp: 2.0,
            omega_s: 1.0,
            k_p_scale: 3.12e6,
            k_p_off: 0.0,
            k_c_scale_b: 4.08e4,
            k_c_scale_x: 3.92e4,
            k_c_off_b: 1.50e3,
            k_c_off_x: 1.50e3,
        }
    }
}

/// The bundled default parameter file.
pub const DEFAULT_PARAMS_JSON: &str = include_str!("../data/default_params.json");

impl ModelParams {
    pub fn from_json(text: &str) -> Result<Self> {
        let p: ModelParams = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ModelParams serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for name in ParamName::ALL {
            let v = self.get(name);
            if !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name: name.as_str(),
                    reason: format!("non-finite value {v}"),
                });
            }
        }
        for name in ParamName::RATES {
            if self.get(name) < 0.0 {
                return Err(Error::InvalidParameter {
                    name: name.as_str(),
                    reason: "rates must be non-negative".into(),
                });
            }
        }
        if self.omega0 < 0.0 {
            return Err(Error::InvalidParameter {
                name: "omega0",
                reason: "Rabi amplitude must be non-negative".into(),
            });
        }
        if self.tau <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "tau",
                reason: "pulse width must be positive".into(),
            });
        }
        if self.omega_s <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "omega_s",
                reason: "scaling frequency must be positive".into(),
            });
        }
        if self.t0 < 0.0 || self.t_total <= self.t0 {
            return Err(Error::InvalidParameter {
                name: "t_total",
                reason: format!("need 0 <= t0 < t_total (t0 = {}, t_total = {})", self.t0, self.t_total),
            });
        }
        Ok(())
    }

    pub fn get(&self, name: ParamName) -> f64 {
        *self.field(name)
    }

    pub fn set(&mut self, name: ParamName, value: f64) {
        *self.field_mut(name) = value;
    }

    pub fn with(mut self, name: ParamName, value: f64) -> Self {
        self.set(name, value);
        self
    }

    fn field(&self, name: ParamName) -> &f64 {
        use ParamName::*;
        match name {
            DeltaX => &self.delta_x,
            DeltaB => &self.delta_b,
            Omega0 => &self.omega0,
            Tau => &self.tau,
            T0 => &self.t0,
            TTotal => &self.t_total,
            GammaB => &self.gamma_b,
            GammaX => &self.gamma_x,
            GammaBxI0 => &self.gamma_bx_i0,
            GammaXgI0 => &self.gamma_xg_i0,
            GammaBxConst => &self.gamma_bx_const,
            GammaXgConst => &self.gamma_xg_const,
            GammaBdI0 => &self.gamma_bd_i0,
            GammaXdI0 => &self.gamma_xd_i0,
            NExp => &self.n_exp,
            OmegaS => &self.omega_s,
            KPScale => &self.k_p_scale,
            KPOff => &self.k_p_off,
            KCScaleB => &self.k_c_scale_b,
            KCScaleX => &self.k_c_scale_x,
            KCOffB => &self.k_c_off_b,
            KCOffX => &self.k_c_off_x,
        }
    }

    fn field_mut(&mut self, name: ParamName) -> &mut f64 {
        use ParamName::*;
        match name {
            DeltaX => &mut self.delta_x,
            DeltaB => &mut self.delta_b,
            Omega0 => &mut self.omega0,
            Tau => &mut self.tau,
            T0 => &mut self.t0,
            TTotal => &mut self.t_total,
            GammaB => &mut self.gamma_b,
            GammaX => &mut self.gamma_x,
            GammaBxI0 => &mut self.gamma_bx_i0,
            GammaXgI0 => &mut self.gamma_xg_i0,
            GammaBxConst => &mut self.gamma_bx_const,
            GammaXgConst => &mut self.gamma_xg_const,
            GammaBdI0 => &mut self.gamma_bd_i0,
            GammaXdI0 => &mut self.gamma_xd_i0,
            NExp => &mut self.n_exp,
            OmegaS => &mut self.omega_s,
            KPScale => &mut self.k_p_scale,
            KPOff => &mut self.k_p_off,
            KCScaleB => &mut self.k_c_scale_b,
            KCScaleX => &mut self.k_c_scale_x,
            KCOffB => &mut self.k_c_off_b,
            KCOffX => &mut self.k_c_off_x,
        }
    }

    /// Intensity factor `(Ω(t)/Ω_S)^n` shared by the intensity-dependent channels.
    #[inline]
    pub fn intensity_factor(&self, t: f64) -> f64 {
        (pulse_envelope(t, self) / self.omega_s).powf(self.n_exp)
    }
}

/// Names of the scalar fields of [`ModelParams`], spelled as in the JSON schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamName {
    DeltaX,
    DeltaB,
    Omega0,
    Tau,
    T0,
    TTotal,
    GammaB,
    GammaX,
    GammaBxI0,
    GammaXgI0,
    GammaBxConst,
    GammaXgConst,
    GammaBdI0,
    GammaXdI0,
    NExp,
    OmegaS,
    KPScale,
    KPOff,
    KCScaleB,
    KCScaleX,
    KCOffB,
    KCOffX,
}

impl ParamName {
    pub const ALL: [ParamName; 22] = {
        use ParamName::*;
        [
            DeltaX, DeltaB, Omega0, Tau, T0, TTotal, GammaB, GammaX, GammaBxI0, GammaXgI0,
            GammaBxConst, GammaXgConst, GammaBdI0, GammaXdI0, NExp, OmegaS, KPScale, KPOff,
            KCScaleB, KCScaleX, KCOffB, KCOffX,
        ]
    };

    pub const RATES: [ParamName; 8] = {
        use ParamName::*;
        [
            GammaB, GammaX, GammaBxI0, GammaXgI0, GammaBxConst, GammaXgConst, GammaBdI0, GammaXdI0,
        ]
    };

    /// Parameters obtained from the Rabi-oscillation fit of the reference dot.
    pub const RABI_FIT: [ParamName; 11] = {
        use ParamName::*;
        [
            GammaBxI0, GammaXgI0, GammaBxConst, GammaXgConst, GammaBdI0, GammaXdI0, KPScale,
            KCScaleB, KCScaleX, KCOffB, KCOffX,
        ]
    };

    pub const fn as_str(self) -> &'static str {
        use ParamName::*;
        match self {
            DeltaX => "delta_x",
            DeltaB => "delta_b",
            Omega0 => "omega0",
            Tau => "tau",
            T0 => "t0",
            TTotal => "t_total",
            GammaB => "gamma_b",
            GammaX => "gamma_x",
            GammaBxI0 => "gamma_bx_i0",
            GammaXgI0 => "gamma_xg_i0",
            GammaBxConst => "gamma_bx_const",
            GammaXgConst => "gamma_xg_const",
            GammaBdI0 => "gamma_bd_i0",
            GammaXdI0 => "gamma_xd_i0",
            NExp => "n_exp",
            OmegaS => "omega_s",
            KPScale => "k_p_scale",
            KPOff => "k_p_off",
            KCScaleB => "k_c_scale_b",
            KCScaleX => "k_c_scale_x",
            KCOffB => "k_c_off_b",
            KCOffX => "k_c_off_x",
        }
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown parameter name `{s}`")))
    }
}

/// Gaussian Rabi frequency `Ω(t) = Ω₀ exp(−4 ln2 (t − t₀)² / τ²)`.
#[inline]
pub fn pulse_envelope(t: f64, p: &ModelParams) -> f64 {
    let dt = t - p.t0;
    p.omega0 * (-4.0 * std::f64::consts::LN_2 * dt * dt / (p.tau * p.tau)).exp()
}

/// Maps an average laser power to the Rabi amplitude,
/// `Ω₀ = sqrt(k_p_scale |p + k_p_off| / τ)`.
pub fn power_to_omega0(power: f64, p: &ModelParams) -> Result<f64> {
    if !(p.tau > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: "pulse width must be positive".into(),
        });
    }
    Ok((p.k_p_scale * (power + p.k_p_off).abs() / p.tau).sqrt())
}

/// Inverse of [`power_to_omega0`] on the branch `p + k_p_off >= 0`.
pub fn omega0_to_power(omega0: f64, p: &ModelParams) -> Result<f64> {
    if !(p.tau > 0.0) || p.k_p_scale <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "k_p_scale",
            reason: "need tau > 0 and k_p_scale > 0 to invert the power map".into(),
        });
    }
    Ok(omega0 * omega0 * p.tau / p.k_p_scale - p.k_p_off)
}

/// Static (drive-free) diagonal of the Hamiltonian: `diag(0, Δx−Δb, −2Δb, 0, 0)`.
#[inline]
pub fn bare_energies(p: &ModelParams) -> [f64; DIM] {
    [0.0, p.delta_x - p.delta_b, -2.0 * p.delta_b, 0.0, 0.0]
}

/// Hamiltonian in the effective interaction picture at time `t`.
pub fn hamiltonian(t: f64, p: &ModelParams) -> Operator {
    let mut h = Operator::zeros();
    for (i, e) in bare_energies(p).into_iter().enumerate() {
        h[(i, i)] = C64::new(e, 0.0);
    }
    let omega = C64::new(pulse_envelope(t, p), 0.0);
    h[(G, X)] = omega;
    h[(X, G)] = omega;
    h[(X, B)] = omega;
    h[(B, X)] = omega;
    h
}

/// Sparsity pattern of a collapse operator (amplitude factored out).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    /// `|to⟩⟨from|`
    Jump { from: usize, to: usize },
    /// `|upper⟩⟨upper| − |lower⟩⟨lower|`
    Dephasing { upper: usize, lower: usize },
}

/// A Lindblad operator `amplitude × pattern`, with a real non-negative amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapseOperator {
    pub label: &'static str,
    pub channel: Channel,
    pub amplitude: f64,
}

impl CollapseOperator {
    pub fn matrix(&self) -> Operator {
        let mut m = Operator::zeros();
        let a = C64::new(self.amplitude, 0.0);
        match self.channel {
            Channel::Jump { from, to } => m[(to, from)] = a,
            Channel::Dephasing { upper, lower } => {
                m[(upper, upper)] = a;
                m[(lower, lower)] = -a;
            }
        }
        m
    }

    /// Rate `amplitude²` of the channel.
    #[inline]
    pub fn rate(&self) -> f64 {
        self.amplitude * self.amplitude
    }
}

/// The six collapse operators at time `t`: radiative decay of x and b,
/// dephasing of the x–g and b–x transitions, and dark-state loss from x and b.
pub fn collapse_operators(t: f64, p: &ModelParams) -> [CollapseOperator; 6] {
    let s = p.intensity_factor(t);
    [
        CollapseOperator {
            label: "R1",
            channel: Channel::Jump { from: X, to: G },
            amplitude: p.gamma_x.sqrt(),
        },
        CollapseOperator {
            label: "R2",
            channel: Channel::Jump { from: B, to: X },
            amplitude: p.gamma_b.sqrt(),
        },
        CollapseOperator {
            label: "R3",
            channel: Channel::Dephasing { upper: X, lower: G },
            amplitude: (p.gamma_xg_const + p.gamma_xg_i0 * s).sqrt(),
        },
        CollapseOperator {
            label: "R4",
            channel: Channel::Dephasing { upper: B, lower: X },
            amplitude: (p.gamma_bx_const + p.gamma_bx_i0 * s).sqrt(),
        },
        CollapseOperator {
            label: "R5",
            channel: Channel::Jump { from: X, to: DX },
            amplitude: (p.gamma_xd_i0 * s).sqrt(),
        },
        CollapseOperator {
            label: "R6",
            channel: Channel::Jump { from: B, to: DB },
            amplitude: (p.gamma_bd_i0 * s).sqrt(),
        },
    ]
}

/// Largest entrywise deviation `max |H − H†|`.
pub fn hermiticity_defect(m: &Operator) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..DIM {
        for j in 0..DIM {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}
