//! Single-exponential decay fits `a·exp(−γt) + c` for lifetime measurements.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of samples accepted by [`fit_decay`].
pub const MIN_DECAY_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// decay rate γ, THz
    pub rate: f64,
    pub amplitude: f64,
    pub offset: f64,
    /// sum of squared residuals
    pub residual: f64,
    /// γ from the closed-form log-linear estimate, before refinement
    pub initial_rate: f64,
}

impl DecayFit {
    /// Lifetime `1/γ` in ps.
    pub fn lifetime(&self) -> f64 {
        1.0 / self.rate
    }
}

fn validate(series: &[(f64, f64)]) -> Result<()> {
    if series.len() < MIN_DECAY_POINTS {
        return Err(Error::InsufficientPoints { needed: MIN_DECAY_POINTS, got: series.len() });
    }
    for (i, &(t, y)) in series.iter().enumerate() {
        if !t.is_finite() || !(y.is_finite() && y > 0.0) {
            return Err(Error::InvalidDataset(format!("decay row {}: need finite t and counts > 0, got ({t}, {y})", i + 1)));
        }
        if i > 0 && t <= series[i - 1].0 {
            return Err(Error::InvalidDataset(format!("decay row {}: times must be strictly increasing", i + 1)));
        }
    }
    Ok(())
}

/// Ordinary least-squares line `y = α + βx`.
fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let beta = sxy / sxx;
    (my - beta * mx, beta)
}

/// Best `(a, c, ssr)` for a fixed rate: linear least squares on `[exp(−γt), 1]`.
fn profile(series: &[(f64, f64)], rate: f64) -> (f64, f64, f64) {
    let t_ref = series[0].0;
    let (mut s_ee, mut s_e, mut s_ey, mut s_y) = (0.0, 0.0, 0.0, 0.0);
    for &(t, y) in series {
        let e = (-rate * (t - t_ref)).exp();
        s_ee += e * e;
        s_e += e;
        s_ey += e * y;
        s_y += y;
    }
    let n = series.len() as f64;
    let det = s_ee * n - s_e * s_e;
    let (a, c) = if det.abs() > 1e-300 {
        ((s_ey * n - s_e * s_y) / det, (s_ee * s_y - s_e * s_ey) / det)
    } else {
        (0.0, s_y / n)
    };
    let ssr = series
        .iter()
        .map(|&(t, y)| {
            let r = a * (-rate * (t - t_ref)).exp() + c - y;
            r * r
        })
        .sum();
    // amplitude referenced back to t = 0
    (a * (rate * t_ref).exp(), c, ssr)
}

/// Fits `a·exp(−γt) + c` to `(t ps, counts)` rows.
///
/// The starting rate comes from a log-linear fit after subtracting an offset
/// taken from the series tail. It is then refined by minimizing the residual
/// over `ln γ`, with `a` and `c` solved exactly at every trial rate.
pub fn fit_decay(series: &[(f64, f64)]) -> Result<DecayFit> {
    validate(series)?;
    let (lo, hi) = series.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| (lo.min(y), hi.max(y)));
    if hi - lo <= 1e-12 * hi {
        return Err(Error::NonDecaying("series is constant".into()));
    }

    let n_tail = (series.len() / 10).max(3);
    let tail = series[series.len() - n_tail..].iter().map(|p| p.1).sum::<f64>() / n_tail as f64;
    // keep every shifted sample positive even when the tail has not settled
    let offset = tail.min(lo - 1e-3 * (hi - lo));
    let (t, logy): (Vec<f64>, Vec<f64>) = series.iter().map(|&(t, y)| (t, (y - offset).ln())).unzip();
    let (_, slope) = line_fit(&t, &logy);
    let initial_rate = -slope;
    if !(initial_rate > 0.0) || !initial_rate.is_finite() {
        return Err(Error::NonDecaying(format!("log-linear rate estimate {initial_rate:e} is not positive")));
    }

    // coarse scan over ln γ, then golden-section on the bracketing interval
    let objective = |u: f64| profile(series, u.exp()).2;
    let (u_lo, u_hi) = (initial_rate.ln() - 3.0 * std::f64::consts::LN_10, initial_rate.ln() + 3.0 * std::f64::consts::LN_10);
    let n_scan = 121;
    let grid: Vec<f64> = (0..n_scan).map(|k| u_lo + (u_hi - u_lo) * k as f64 / (n_scan - 1) as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&u| objective(u)).collect();
    let k_best = (0..n_scan).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    if k_best == 0 {
        return Err(Error::NonDecaying("residual keeps falling as the rate goes to zero".into()));
    }
    let (mut a, mut b) = (grid[k_best - 1], grid[(k_best + 1).min(n_scan - 1)]);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while b - a > 1e-12 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    let rate = (0.5 * (a + b)).exp();
    let (amplitude, offset, residual) = profile(series, rate);
    if amplitude <= 0.0 {
        return Err(Error::NonDecaying(format!("fitted amplitude {amplitude:e} is not positive")));
    }
    Ok(DecayFit { rate, amplitude, offset, residual, initial_rate })
}
