//! File formats: JSON artifacts wrapped with the resolved config, and CSV
//! tables whose `#` comment header carries the schema version, units and
//! config. All writes go through a temporary file renamed into place.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::calibration::{PowerUnit, RabiDataset, RabiRow};
use crate::config::{RunConfig, SCHEMA_VERSION};
use crate::density::DensityMatrix;
use crate::emission::{Analyzer, CoincidenceVector, N_PROJECTORS, PROJECTOR_LABELS};
use crate::error::{Error, Result, Stage};
use crate::lindblad::Trajectory;
use crate::model::{B, DB, DX, G, X};
use crate::sweep::{CellStatus, ContourPoint, SweepGrid};

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// JSON artifact: payload plus the config that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub schema_version: u32,
    pub kind: String,
    pub config: RunConfig,
    pub data: T,
}

pub fn write_json_artifact<T: Serialize>(path: &Path, kind: &str, config: &RunConfig, data: &T) -> Result<()> {
    let artifact = Artifact { schema_version: SCHEMA_VERSION, kind: kind.to_owned(), config: config.clone(), data };
    let mut text = serde_json::to_string_pretty(&artifact)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json_artifact<T: DeserializeOwned>(path: &Path) -> Result<Artifact<T>> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| schema(path, e.to_string()))
}

/// Reads a density matrix from either a bare `{dim, re, im}` object or an artifact.
pub fn read_density_matrix(path: &Path) -> Result<DensityMatrix> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either {
        Bare(DensityMatrix),
        Wrapped(Box<Artifact<DensityMatrix>>),
    }
    let text = read_text(path)?;
    match serde_json::from_str::<Either>(&text).map_err(|e| schema(path, e.to_string()))? {
        Either::Bare(m) => Ok(m),
        Either::Wrapped(a) => Ok(a.data),
    }
}

fn schema(path: &Path, message: impl Into<String>) -> Error {
    Error::Schema { path: path.to_path_buf(), message: message.into() }
}

/// `# key: value` header lines written ahead of every CSV table.
fn comment_header(kind: &str, units: &str, config: &RunConfig, extra: &[(&str, String)]) -> String {
    let mut out = format!("# kind: {kind}\n# schema_version: {SCHEMA_VERSION}\n# units: {units}\n");
    for (k, v) in extra {
        out += &format!("# {k}: {v}\n");
    }
    let compact = serde_json::to_string(config).expect("config serializes");
    out += &format!("# config: {compact}\n");
    out
}

fn csv_bytes(header: String, columns: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut buf = header.into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(columns).map_err(csv_err)?;
        for r in rows {
            w.write_record(&r).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(buf)
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidDataset(e.to_string())
}

/// Shortest representation that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v}")
}

/// A parsed CSV table with its comment metadata.
pub struct Table {
    path: PathBuf,
    pub metadata: BTreeMap<String, String>,
    headers: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut metadata = BTreeMap::new();
        for line in text.lines().filter_map(|l| l.trim_start().strip_prefix('#')) {
            if let Some((k, v)) = line.split_once(':') {
                metadata.insert(k.trim().to_owned(), v.trim().to_owned());
            }
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| schema(path, e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| schema(path, e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec.iter().map(str::to_owned).collect()));
        }
        if let Some(v) = metadata.get("schema_version") {
            if v.parse::<u32>().ok() != Some(SCHEMA_VERSION) {
                return Err(schema(path, format!("schema_version {v} is not supported")));
            }
        }
        Ok(Table { path: path.to_path_buf(), metadata, headers, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| schema(&self.path, format!("missing column `{name}` (have: {})", self.headers.join(", "))))
    }

    pub fn str_at(&self, row: usize, col: usize) -> &str {
        &self.rows[row].1[col]
    }

    pub fn f64_at(&self, row: usize, col: usize) -> Result<f64> {
        let raw = self.str_at(row, col);
        raw.parse().map_err(|_| self.cell_error(row, col, format!("cannot parse `{raw}` as a number")))
    }

    pub fn cell_error(&self, row: usize, col: usize, message: impl std::fmt::Display) -> Error {
        schema(&self.path, format!("line {}, column `{}`: {message}", self.rows[row].0, self.headers[col]))
    }

    fn f64_column(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name)?;
        (0..self.len()).map(|r| self.f64_at(r, c)).collect()
    }
}

/// One trajectory sample as written to CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub populations: [f64; 5],
    pub abs_rho_bg: f64,
    pub abs_rho_bx: f64,
    pub abs_rho_xg: f64,
}

const TRAJECTORY_COLUMNS: [&str; 9] = ["t", "pop_g", "pop_x", "pop_b", "pop_dx", "pop_db", "abs_rho_bg", "abs_rho_bx", "abs_rho_xg"];

pub fn trajectory_rows(traj: &Trajectory) -> Vec<TrajectoryRow> {
    traj.times()
        .iter()
        .zip(traj.states())
        .map(|(&t, s)| TrajectoryRow {
            t,
            populations: [G, X, B, DX, DB].map(|k| s[(k, k)].re),
            abs_rho_bg: s[(B, G)].norm(),
            abs_rho_bx: s[(B, X)].norm(),
            abs_rho_xg: s[(X, G)].norm(),
        })
        .collect()
}

pub fn write_trajectory_csv(path: &Path, rows: &[TrajectoryRow], config: &RunConfig) -> Result<()> {
    let header = comment_header("trajectory", "t ps; populations and coherence magnitudes dimensionless", config, &[]);
    let body = rows.iter().map(|r| {
        let mut v = vec![num(r.t)];
        v.extend(r.populations.iter().map(|&p| num(p)));
        v.extend([num(r.abs_rho_bg), num(r.abs_rho_bx), num(r.abs_rho_xg)]);
        v
    });
    write_atomic(path, &csv_bytes(header, &TRAJECTORY_COLUMNS, body)?)
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let t = Table::read(path)?;
    let cols: Vec<Vec<f64>> = TRAJECTORY_COLUMNS.iter().map(|c| t.f64_column(c)).collect::<Result<_>>()?;
    Ok((0..t.len())
        .map(|r| TrajectoryRow {
            t: cols[0][r],
            populations: [cols[1][r], cols[2][r], cols[3][r], cols[4][r], cols[5][r]],
            abs_rho_bg: cols[6][r],
            abs_rho_bx: cols[7][r],
            abs_rho_xg: cols[8][r],
        })
        .collect())
}

const COUNTS_COLUMNS: [&str; 4] = ["nu", "biexciton_projector", "exciton_projector", "counts"];

pub fn write_counts_csv(path: &Path, counts: &CoincidenceVector, config: &RunConfig) -> Result<()> {
    let header = comment_header("counts", "counts in units of the time-integrated coincidence rate (ps)", config, &[]);
    let body = PROJECTOR_LABELS.iter().zip(counts.counts()).enumerate().map(|(k, ((b, x), c))| {
        vec![(k + 1).to_string(), b.symbol().to_owned(), x.symbol().to_owned(), num(*c)]
    });
    write_atomic(path, &csv_bytes(header, &COUNTS_COLUMNS, body)?)
}

/// Reads 16 counts keyed by `nu`; analyzer columns, when present, must match the table.
pub fn read_counts_csv(path: &Path) -> Result<CoincidenceVector> {
    let t = Table::read(path)?;
    if t.len() != N_PROJECTORS {
        return Err(schema(path, format!("expected {N_PROJECTORS} rows, found {}", t.len())));
    }
    let (c_nu, c_counts) = (t.column("nu")?, t.column("counts")?);
    let analyzers = (t.column("biexciton_projector").ok(), t.column("exciton_projector").ok());
    let mut values = [f64::NAN; N_PROJECTORS];
    for r in 0..t.len() {
        let nu: usize = t
            .str_at(r, c_nu)
            .parse()
            .ok()
            .filter(|n| (1..=N_PROJECTORS).contains(n))
            .ok_or_else(|| t.cell_error(r, c_nu, "nu must be an integer in 1..=16"))?;
        if !values[nu - 1].is_nan() {
            return Err(t.cell_error(r, c_nu, format!("nu = {nu} appears twice")));
        }
        let (want_b, want_x) = PROJECTOR_LABELS[nu - 1];
        for (col, want) in [(analyzers.0, want_b), (analyzers.1, want_x)] {
            if let Some(c) = col {
                if Analyzer::from_symbol(t.str_at(r, c)) != Some(want) {
                    return Err(t.cell_error(r, c, format!("nu = {nu} expects analyzer `{}`", want.symbol())));
                }
            }
        }
        let v = t.f64_at(r, c_counts)?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(t.cell_error(r, c_counts, "counts must be finite and >= 0"));
        }
        values[nu - 1] = v;
    }
    CoincidenceVector::new(values)
}

const SWEEP_COLUMNS: [&str; 6] = ["omega0", "tau", "fidelity", "counts_norm", "counts_total", "status"];

pub fn write_sweep_csv(path: &Path, grid: &SweepGrid, config: &RunConfig) -> Result<()> {
    let header = comment_header("sweep", "omega0 THz; tau ps; counts_total ps", config, &[]);
    let body = grid.cells().map(|(i, j, o, t)| {
        vec![
            num(o),
            num(t),
            num(grid.fidelity(i, j)),
            num(grid.counts_norm(i, j)),
            num(grid.total_counts(i, j)),
            grid.status(i, j).to_string(),
        ]
    });
    write_atomic(path, &csv_bytes(header, &SWEEP_COLUMNS, body)?)
}

fn parse_status(raw: &str) -> Option<CellStatus> {
    if raw == "ok" {
        return Some(CellStatus::Ok);
    }
    let rest = raw.strip_prefix("failed[")?;
    let (stage, message) = rest.split_once("]: ")?;
    let stage: Stage = serde_json::from_value(serde_json::Value::String(stage.to_owned())).ok()?;
    Some(CellStatus::Failed { stage, message: message.to_owned() })
}

/// Rebuilds a grid from its long-format CSV (Ω₀-outer cell order).
pub fn read_sweep_csv(path: &Path) -> Result<SweepGrid> {
    let t = Table::read(path)?;
    if t.is_empty() {
        return Err(schema(path, "sweep table has no rows"));
    }
    let omega = t.f64_column("omega0")?;
    let tau = t.f64_column("tau")?;
    let fidelity = t.f64_column("fidelity")?;
    let total = t.f64_column("counts_total")?;
    let c_status = t.column("status")?;
    let status = (0..t.len())
        .map(|r| parse_status(t.str_at(r, c_status)).ok_or_else(|| t.cell_error(r, c_status, "unrecognized status")))
        .collect::<Result<Vec<_>>>()?;

    let mut omega_axis: Vec<f64> = Vec::new();
    for &o in &omega {
        if omega_axis.last() != Some(&o) {
            omega_axis.push(o);
        }
    }
    let nt = t.len() / omega_axis.len();
    let tau_axis = tau[..nt].to_vec();
    for r in 0..t.len() {
        if omega[r] != omega_axis[r / nt] || tau[r] != tau_axis[r % nt] {
            return Err(t.cell_error(r, 0, "rows do not form an omega0-major rectangular grid"));
        }
    }
    SweepGrid::from_fields(omega_axis, tau_axis, fidelity, total, status)
}

const CONTOUR_COLUMNS: [&str; 4] = ["branch", "omega0", "tau", "fidelity"];

pub fn write_contour_csv(path: &Path, level: f64, points: &[ContourPoint], config: &RunConfig) -> Result<()> {
    let header = comment_header("contour", "omega0 THz; tau ps", config, &[("level", num(level))]);
    let body = points.iter().map(|p| vec![p.branch.to_string(), num(p.omega0), num(p.tau), num(p.fidelity)]);
    write_atomic(path, &csv_bytes(header, &CONTOUR_COLUMNS, body)?)
}

pub fn read_contour_csv(path: &Path) -> Result<Vec<ContourPoint>> {
    let t = Table::read(path)?;
    let c_branch = t.column("branch")?;
    let (o, ta, f) = (t.f64_column("omega0")?, t.f64_column("tau")?, t.f64_column("fidelity")?);
    (0..t.len())
        .map(|r| {
            let branch = t.str_at(r, c_branch).parse().map_err(|_| t.cell_error(r, c_branch, "branch must be an integer"))?;
            Ok(ContourPoint { branch, omega0: o[r], tau: ta[r], fidelity: f[r] })
        })
        .collect()
}

const RABI_COLUMNS: [&str; 3] = ["power", "counts_b", "counts_x"];

pub fn write_rabi_csv(path: &Path, data: &RabiDataset, config: &RunConfig) -> Result<()> {
    let unit = serde_json::to_value(data.power_unit)?.as_str().unwrap_or_default().to_owned();
    let header = comment_header("rabi", "power in dataset units; counts per integration window", config, &[("tau_ps", num(data.tau)), ("power_unit", unit)]);
    let body = data.rows.iter().map(|r| vec![num(r.power), num(r.counts_b), num(r.counts_x)]);
    write_atomic(path, &csv_bytes(header, &RABI_COLUMNS, body)?)
}

/// Reads a Rabi dataset. Pulse width and power unit come from the `tau_ps` and
/// `power_unit` header lines when present, else from the given defaults.
pub fn read_rabi_csv(path: &Path, default_tau: f64, default_unit: PowerUnit) -> Result<RabiDataset> {
    let t = Table::read(path)?;
    let tau = match t.metadata.get("tau_ps") {
        Some(v) => v.parse().map_err(|_| schema(path, format!("header tau_ps `{v}` is not a number")))?,
        None => default_tau,
    };
    let power_unit = match t.metadata.get("power_unit") {
        Some(v) => serde_json::from_value(serde_json::Value::String(v.clone()))
            .map_err(|_| schema(path, format!("unknown power_unit `{v}`")))?,
        None => default_unit,
    };
    let (p, b, x) = (t.f64_column("power")?, t.f64_column("counts_b")?, t.f64_column("counts_x")?);
    let rows = (0..t.len()).map(|r| RabiRow { power: p[r], counts_b: b[r], counts_x: x[r] }).collect();
    RabiDataset::new(rows, tau, power_unit).map_err(|e| schema(path, e.to_string()))
}

const DECAY_COLUMNS: [&str; 2] = ["t", "counts"];

pub fn write_decay_csv(path: &Path, series: &[(f64, f64)], config: &RunConfig) -> Result<()> {
    let header = comment_header("decay", "t ps", config, &[]);
    let body = series.iter().map(|(t, c)| vec![num(*t), num(*c)]);
    write_atomic(path, &csv_bytes(header, &DECAY_COLUMNS, body)?)
}

pub fn read_decay_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let t = Table::read(path)?;
    let (ts, cs) = (t.f64_column("t")?, t.f64_column("counts")?);
    Ok(ts.into_iter().zip(cs).collect())
}

/// Fitted Rabi curve next to the observations.
pub fn write_rabi_fit_csv(path: &Path, rows: &[(RabiRow, f64, f64)], config: &RunConfig) -> Result<()> {
    let header = comment_header("rabi-fit", "power in dataset units", config, &[]);
    let cols = ["power", "counts_b", "counts_x", "fit_counts_b", "fit_counts_x"];
    let body = rows.iter().map(|(r, b, x)| vec![num(r.power), num(r.counts_b), num(r.counts_x), num(*b), num(*x)]);
    write_atomic(path, &csv_bytes(header, &cols, body)?)
}
