//! Fidelity and brightness maps over the pulse parameters (Ω₀, τ), iso-count
//! contours through them, and a check of how closely fidelity follows the
//! pulse energy.

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::model::ModelParams;
use crate::pipeline::{analyze_counts, simulate_counts, PipelineOptions};

/// Outcome of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed { stage: Stage, message: String },
}

impl CellStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, CellStatus::Ok)
    }
}

impl fmt::Display for CellStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellStatus::Ok => f.write_str("ok"),
            CellStatus::Failed { stage, message } => write!(f, "failed[{}]: {message}", stage.as_str()),
        }
    }
}

/// Row-major (Ω₀ outer, τ inner) maps over a rectangular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    omega0_axis: Vec<f64>,
    tau_axis: Vec<f64>,
    fidelity: Vec<f64>,
    total_counts: Vec<f64>,
    counts_norm: Vec<f64>,
    status: Vec<CellStatus>,
}

fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::InvalidGrid(format!("{name} axis is empty")));
    }
    if axis.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidGrid(format!("{name} axis values must be positive")));
    }
    if axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(format!("{name} axis must be strictly increasing")));
    }
    Ok(())
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

impl SweepGrid {
    /// Assembles a grid from per-cell values; NaN marks a missing value.
    /// Counts are normalized by their maximum over the grid.
    pub fn from_fields(
        omega0_axis: Vec<f64>,
        tau_axis: Vec<f64>,
        fidelity: Vec<f64>,
        total_counts: Vec<f64>,
        status: Vec<CellStatus>,
    ) -> Result<Self> {
        check_axis("omega0", &omega0_axis)?;
        check_axis("tau", &tau_axis)?;
        let n = omega0_axis.len() * tau_axis.len();
        if fidelity.len() != n || total_counts.len() != n || status.len() != n {
            return Err(Error::InvalidGrid(format!("expected {n} cells per field")));
        }
        let max = total_counts.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        let counts_norm = total_counts
            .iter()
            .map(|&c| if c.is_finite() && max > 0.0 { c / max } else { f64::NAN })
            .collect();
        Ok(SweepGrid { omega0_axis, tau_axis, fidelity, total_counts, counts_norm, status })
    }

    pub fn omega0_axis(&self) -> &[f64] {
        &self.omega0_axis
    }

    pub fn tau_axis(&self) -> &[f64] {
        &self.tau_axis
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.omega0_axis.len(), self.tau_axis.len())
    }

    fn index(&self, i: usize, j: usize) -> usize {
        i * self.tau_axis.len() + j
    }

    pub fn fidelity(&self, i: usize, j: usize) -> f64 {
        self.fidelity[self.index(i, j)]
    }

    pub fn total_counts(&self, i: usize, j: usize) -> f64 {
        self.total_counts[self.index(i, j)]
    }

    pub fn counts_norm(&self, i: usize, j: usize) -> f64 {
        self.counts_norm[self.index(i, j)]
    }

    pub fn status(&self, i: usize, j: usize) -> &CellStatus {
        &self.status[self.index(i, j)]
    }

    pub fn failed_cells(&self) -> usize {
        self.status.iter().filter(|s| !s.is_ok()).count()
    }

    /// `(i, j)` of the cell with the largest normalized counts (first on ties).
    pub fn max_cell(&self) -> Option<(usize, usize)> {
        let (no, nt) = self.shape();
        let mut best: Option<((usize, usize), f64)> = None;
        for i in 0..no {
            for j in 0..nt {
                let v = self.counts_norm(i, j);
                if v.is_finite() && best.is_none_or(|(_, b)| v > b) {
                    best = Some(((i, j), v));
                }
            }
        }
        best.map(|(ij, _)| ij)
    }

    /// Cells in Ω₀-outer order as `(i, j, Ω₀, τ)`.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
        let nt = self.tau_axis.len();
        (0..self.omega0_axis.len() * nt).map(move |k| (k / nt, k % nt, self.omega0_axis[k / nt], self.tau_axis[k % nt]))
    }
}

/// Outcome of the pipeline at one (Ω₀, τ).
#[derive(Debug, Clone, PartialEq)]
pub struct PointOutcome {
    pub fidelity: f64,
    pub total_counts: f64,
    pub status: CellStatus,
}

/// Runs the pipeline with `omega0` and `tau` substituted into `p`. Failures
/// are captured in the status; counts survive a tomography failure.
pub fn sweep_point(p: &ModelParams, omega0: f64, tau: f64, opts: &PipelineOptions) -> PointOutcome {
    let q = ModelParams { omega0, tau, ..*p };
    let failed = |e: Error, total_counts: f64| {
        log::warn!("sweep cell (omega0 = {omega0}, tau = {tau}) failed: {e}");
        PointOutcome {
            fidelity: f64::NAN,
            total_counts,
            status: CellStatus::Failed { stage: e.stage(), message: e.to_string() },
        }
    };
    let counts = match simulate_counts(&q, opts) {
        Ok((_, _, counts)) => counts,
        Err(e) => return failed(e, f64::NAN),
    };
    match analyze_counts(&counts, opts.bell_phase) {
        Ok((_, _, fidelity)) => PointOutcome { fidelity, total_counts: counts.total(), status: CellStatus::Ok },
        // counts stay meaningful when only the reconstruction failed
        Err(e) => failed(e, counts.total()),
    }
}

/// Evaluates every grid cell in parallel. Cell failures are recorded and never
/// abort the grid; each cell depends only on its own (Ω₀, τ).
pub fn run_sweep(p: &ModelParams, omega0_axis: &[f64], tau_axis: &[f64], opts: &PipelineOptions) -> Result<SweepGrid> {
    check_axis("omega0", omega0_axis)?;
    check_axis("tau", tau_axis)?;
    let nt = tau_axis.len();
    let outcomes: Vec<PointOutcome> = (0..omega0_axis.len() * nt)
        .into_par_iter()
        .map(|k| sweep_point(p, omega0_axis[k / nt], tau_axis[k % nt], opts))
        .collect();
    let mut fidelity = Vec::with_capacity(outcomes.len());
    let mut counts = Vec::with_capacity(outcomes.len());
    let mut status = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        fidelity.push(o.fidelity);
        counts.push(o.total_counts);
        status.push(o.status);
    }
    SweepGrid::from_fields(omega0_axis.to_vec(), tau_axis.to_vec(), fidelity, counts, status)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourPoint {
    /// index of the connected piece of the level set this point belongs to
    pub branch: usize,
    pub omega0: f64,
    pub tau: f64,
    pub fidelity: f64,
}

/// Grid edge identifier: `(i, j, horizontal)` is the edge from `(i, j)` to
/// `(i+1, j)` if horizontal, otherwise to `(i, j+1)`.
type EdgeKey = (usize, usize, bool);

/// Level set `counts_norm = level` by marching squares, with fidelity
/// interpolated bilinearly onto it. Connected pieces are oriented and listed
/// by increasing Ω₀.
pub fn iso_count_contour(grid: &SweepGrid, level: f64) -> Result<Vec<ContourPoint>> {
    let finite = grid.counts_norm.iter().copied().filter(|v| v.is_finite());
    let (min, max) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(level > min && level <= max) {
        return Err(Error::LevelOutOfRange { level, min, max });
    }
    if level == max {
        let (i, j) = grid.max_cell().expect("finite maximum exists");
        return Ok(vec![ContourPoint {
            branch: 0,
            omega0: grid.omega0_axis[i],
            tau: grid.tau_axis[j],
            fidelity: grid.fidelity(i, j),
        }]);
    }

    let (no, nt) = grid.shape();
    let inside = |i: usize, j: usize| grid.counts_norm(i, j) >= level;
    let crossing = |(i, j, horizontal): EdgeKey| -> ContourPoint {
        let (i2, j2) = if horizontal { (i + 1, j) } else { (i, j + 1) };
        let (v0, v1) = (grid.counts_norm(i, j), grid.counts_norm(i2, j2));
        let s = ((level - v0) / (v1 - v0)).clamp(0.0, 1.0);
        let lerp = |a: f64, b: f64| a + s * (b - a);
        ContourPoint {
            branch: 0,
            omega0: lerp(grid.omega0_axis[i], grid.omega0_axis[i2]),
            tau: lerp(grid.tau_axis[j], grid.tau_axis[j2]),
            // bilinear interpolation restricted to a cell edge is linear
            fidelity: lerp(grid.fidelity(i, j), grid.fidelity(i2, j2)),
        }
    };

    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
    for i in 0..no.saturating_sub(1) {
        for j in 0..nt.saturating_sub(1) {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            if corners.iter().any(|&(a, b)| !grid.counts_norm(a, b).is_finite()) {
                continue;
            }
            // edges in corner order: bottom, right, top, left
            let edges: [EdgeKey; 4] = [(i, j, true), (i + 1, j, false), (i, j + 1, true), (i, j, false)];
            let flags: Vec<bool> = corners.iter().map(|&(a, b)| inside(a, b)).collect();
            let cut: Vec<EdgeKey> = (0..4).filter(|&e| flags[e] != flags[(e + 1) % 4]).map(|e| edges[e]).collect();
            match cut.len() {
                2 => segments.push((cut[0], cut[1])),
                4 => {
                    // saddle: the cell-centre average decides which corners connect
                    let centre = corners.iter().map(|&(a, b)| grid.counts_norm(a, b)).sum::<f64>() / 4.0;
                    if (centre >= level) == flags[0] {
                        segments.push((edges[0], edges[1]));
                        segments.push((edges[2], edges[3]));
                    } else {
                        segments.push((edges[3], edges[0]));
                        segments.push((edges[1], edges[2]));
                    }
                }
                _ => {}
            }
        }
    }

    // chain segments sharing an edge crossing into polylines
    let mut by_edge: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        by_edge.entry(*a).or_default().push(k);
        by_edge.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut lines: Vec<Vec<EdgeKey>> = Vec::new();
    let extend = |line: &mut Vec<EdgeKey>, used: &mut Vec<bool>| loop {
        let tail = *line.last().expect("non-empty");
        let next = by_edge.get(&tail).and_then(|ks| ks.iter().copied().find(|&k| !used[k]));
        let Some(k) = next else { break };
        used[k] = true;
        let (a, b) = segments[k];
        line.push(if a == tail { b } else { a });
    };
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut line = vec![segments[start].0, segments[start].1];
        extend(&mut line, &mut used);
        line.reverse();
        extend(&mut line, &mut used);
        lines.push(line);
    }

    let mut paths: Vec<Vec<ContourPoint>> = lines
        .into_iter()
        .map(|line| {
            let mut pts: Vec<ContourPoint> = line.into_iter().map(crossing).collect();
            pts.dedup_by(|a, b| a.omega0 == b.omega0 && a.tau == b.tau);
            if pts.len() > 1 && pts[0].omega0 > pts[pts.len() - 1].omega0 {
                pts.reverse();
            }
            pts
        })
        .collect();
    let key = |p: &Vec<ContourPoint>| p.iter().map(|c| c.omega0).fold(f64::INFINITY, f64::min);
    paths.sort_by(|a, b| key(a).total_cmp(&key(b)).then(a[0].tau.total_cmp(&b[0].tau)));
    Ok(paths
        .into_iter()
        .enumerate()
        .flat_map(|(branch, pts)| pts.into_iter().map(move |p| ContourPoint { branch, ..p }))
        .collect())
}

/// How closely fidelity iso-lines follow lines of constant pulse energy Ω₀²τ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyAlignment {
    /// `2⟨cos²θ⟩ − 1` over the angle θ between ∇F and ∇(Ω₀²τ) in index
    /// coordinates: 1 for parallel iso-lines, 0 for unrelated fields
    pub alignment: Option<f64>,
    /// Pearson correlation of fidelity and normalized counts over all ok cells
    pub counts_fidelity_correlation: Option<f64>,
    pub cells_used: usize,
    pub insufficient_variation: bool,
}

/// Index-space gradient with one-sided differences at the borders.
fn gradient(field: impl Fn(usize, usize) -> f64, no: usize, nt: usize, i: usize, j: usize) -> (f64, f64) {
    let diff = |lo: (usize, usize), hi: (usize, usize), span: usize| {
        if span == 0 {
            0.0
        } else {
            (field(hi.0, hi.1) - field(lo.0, lo.1)) / span as f64
        }
    };
    let (i0, i1) = (i.saturating_sub(1), (i + 1).min(no - 1));
    let (j0, j1) = (j.saturating_sub(1), (j + 1).min(nt - 1));
    (diff((i0, j), (i1, j), i1 - i0), diff((i, j0), (i, j1), j1 - j0))
}

/// Alignment of fidelity and pulse-energy iso-lines over the low-energy
/// quadrant (lower half of both axes). Reported, not asserted.
pub fn energy_contour_check(grid: &SweepGrid) -> EnergyAlignment {
    let (no, nt) = grid.shape();
    let energy = |i: usize, j: usize| grid.omega0_axis[i].powi(2) * grid.tau_axis[j];
    let (qo, qt) = (no.div_ceil(2), nt.div_ceil(2));

    let mut sum = 0.0;
    let mut used = 0usize;
    let mut energy_range = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..qo {
        for j in 0..qt {
            let e = energy(i, j);
            energy_range = (energy_range.0.min(e), energy_range.1.max(e));
            let (fo, ft) = gradient(|a, b| grid.fidelity(a, b), no, nt, i, j);
            let (eo, et) = gradient(energy, no, nt, i, j);
            let (nf, ne) = (fo.hypot(ft), eo.hypot(et));
            if !(nf.is_finite() && nf > 0.0 && ne > 0.0) {
                continue;
            }
            let cos = (fo * eo + ft * et) / (nf * ne);
            sum += cos * cos;
            used += 1;
        }
    }
    let flat_energy = energy_range.1 - energy_range.0 <= 1e-12 * energy_range.1.abs();
    let insufficient_variation = used == 0 || flat_energy;
    let alignment = (!insufficient_variation).then(|| 2.0 * sum / used as f64 - 1.0);

    let pairs: Vec<(f64, f64)> = (0..no * nt)
        .filter(|&k| grid.status[k].is_ok() && grid.fidelity[k].is_finite() && grid.counts_norm[k].is_finite())
        .map(|k| (grid.fidelity[k], grid.counts_norm[k]))
        .collect();
    EnergyAlignment {
        alignment,
        counts_fidelity_correlation: pearson(&pairs),
        cells_used: used,
        insufficient_variation,
    }
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 3 {
        return None;
    }
    let n = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}
