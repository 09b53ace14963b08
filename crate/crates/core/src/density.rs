//! Dense complex density matrices and Hermitian spectral helpers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::C64;

/// Eigenvalues in `[-NEGATIVE_CLAMP, 0)` are treated as rounding noise and
/// clamped to zero; anything more negative is rejected.
pub const NEGATIVE_CLAMP: f64 = 1e-10;

/// Tolerances for the physical-state checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateTolerance {
    pub hermiticity: f64,
    pub trace: f64,
    pub min_eigenvalue: f64,
}

impl Default for StateTolerance {
    fn default() -> Self {
        StateTolerance {
            hermiticity: 1e-10,
            trace: 1e-8,
            min_eigenvalue: -1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    data: DMatrix<C64>,
}

impl DensityMatrix {
    /// Wraps a square matrix without checking physicality.
    pub fn from_matrix(data: DMatrix<C64>) -> Result<Self> {
        if data.nrows() != data.ncols() || data.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                expected: data.nrows().max(1),
                got: data.ncols(),
            });
        }
        Ok(DensityMatrix { data })
    }

    /// `|ψ⟩⟨ψ|` for a ket normalized here.
    pub fn pure(ket: &[C64]) -> Self {
        let v = DVector::from_column_slice(ket);
        let v = &v / C64::new(v.norm(), 0.0);
        DensityMatrix { data: &v * v.adjoint() }
    }

    pub fn basis_state(dim: usize, index: usize) -> Self {
        let mut data = DMatrix::zeros(dim, dim);
        data[(index, index)] = C64::new(1.0, 0.0);
        DensityMatrix { data }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityMatrix {
            data: DMatrix::identity(dim, dim) / C64::new(dim as f64, 0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[(i, j)]
    }

    pub fn trace(&self) -> C64 {
        self.data.trace()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        hermiticity_defect(&self.data)
    }

    /// Eigenvalues in ascending order (Hermitian part of the matrix).
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigen(&self.data).0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn purity(&self) -> f64 {
        (&self.data * &self.data).trace().re
    }

    pub fn frobenius_distance(&self, other: &DensityMatrix) -> f64 {
        (&self.data - &other.data).norm()
    }

    /// Expectation `⟨ψ|ρ|ψ⟩` (real part).
    pub fn expectation(&self, ket: &[C64]) -> f64 {
        let v = DVector::from_column_slice(ket);
        (v.adjoint() * &self.data * &v)[(0, 0)].re
    }

    pub fn check(&self, tol: StateTolerance) -> Result<()> {
        let herm = self.hermiticity_defect();
        if herm > tol.hermiticity {
            return Err(Error::InvalidState(format!("hermiticity defect {herm:e}")));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > tol.trace || tr.im.abs() > tol.trace {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let min = self.min_eigenvalue();
        if min < tol.min_eigenvalue {
            return Err(Error::InvalidState(format!("minimum eigenvalue {min:e}")));
        }
        Ok(())
    }

    pub fn is_physical(&self, tol: StateTolerance) -> bool {
        self.check(tol).is_ok()
    }
}

pub fn hermiticity_defect(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Spectral decomposition of the Hermitian part of `m`; eigenvalues ascending,
/// eigenvectors as matching columns.
pub fn hermitian_eigen(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// `V diag(f(λ)) V†`.
pub fn spectral_map(values: &[f64], vectors: &DMatrix<C64>, f: impl Fn(f64) -> f64) -> DMatrix<C64> {
    let n = vectors.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, &lambda) in values.iter().enumerate() {
        let w = f(lambda);
        if w == 0.0 {
            continue;
        }
        let col = vectors.column(k);
        out += col * col.adjoint() * C64::new(w, 0.0);
    }
    out
}

/// Clamps the spectrum of a nominally PSD matrix: rounding-level values
/// (below the eigen-solver resolution, or negative down to
/// [`NEGATIVE_CLAMP`]) become exactly zero.
pub fn clamp_spectrum(values: &mut [f64]) -> Result<()> {
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let floor = 64.0 * f64::EPSILON * scale;
    for v in values.iter_mut() {
        if *v < -NEGATIVE_CLAMP {
            return Err(Error::NotPositive { min_eigenvalue: *v });
        }
        if *v <= floor {
            *v = 0.0;
        }
    }
    Ok(())
}

/// Principal square root of a positive-semidefinite Hermitian matrix.
pub fn psd_sqrt(m: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let (mut values, vectors) = hermitian_eigen(m);
    clamp_spectrum(&mut values)?;
    Ok(spectral_map(&values, &vectors, f64::sqrt))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixJson {
    dim: usize,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl Serialize for DensityMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.dim();
        let row = |f: fn(&C64) -> f64, i: usize| (0..n).map(|j| f(&self.data[(i, j)])).collect();
        MatrixJson {
            dim: n,
            re: (0..n).map(|i| row(|z| z.re, i)).collect(),
            im: (0..n).map(|i| row(|z| z.im, i)).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = MatrixJson::deserialize(deserializer)?;
        let n = raw.dim;
        let shape_ok = |rows: &Vec<Vec<f64>>| rows.len() == n && rows.iter().all(|r| r.len() == n);
        if n == 0 || !shape_ok(&raw.re) || !shape_ok(&raw.im) {
            return Err(D::Error::custom(format!("matrix rows must be {n} x {n}")));
        }
        let data = DMatrix::from_fn(n, n, |i, j| C64::new(raw.re[i][j], raw.im[i][j]));
        Ok(DensityMatrix { data })
    }
}
