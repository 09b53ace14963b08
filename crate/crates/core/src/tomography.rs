//! Linear-inversion two-photon tomography, physicality projection and
//! fidelity measures.
//!
//! Two-photon kets use the basis `{|ee⟩, |el⟩, |le⟩, |ll⟩}` with the
//! biexciton photon first. The operator basis is
//! `Γ = (I, σx, σy, σz) ⊗ (I, σx, σy, σz)` in row-major order, so
//! `Γ_1 = I⊗I`, `Γ_2 = I⊗σx`, …, `Γ_16 = σz⊗σz`.

use nalgebra::{DMatrix, SMatrix};

use crate::density::{clamp_spectrum, hermitian_eigen, psd_sqrt, spectral_map, DensityMatrix, NEGATIVE_CLAMP};
use crate::emission::{Analyzer, CoincidenceVector, N_PROJECTORS, PROJECTOR_LABELS};
use crate::error::{Error, Result};
use crate::model::C64;

/// Two-photon Hilbert-space dimension.
pub const PAIR_DIM: usize = 4;

type Ket = [C64; PAIR_DIM];
type Mat4 = SMatrix<C64, PAIR_DIM, PAIR_DIM>;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn single_photon(a: Analyzer) -> [C64; 2] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    match a {
        Analyzer::Early => [c(1.0, 0.0), c(0.0, 0.0)],
        Analyzer::Late => [c(0.0, 0.0), c(1.0, 0.0)],
        Analyzer::Plus => [c(s, 0.0), c(s, 0.0)],
        Analyzer::Right => [c(s, 0.0), c(0.0, -s)],
    }
}

/// The sixteen measured two-photon kets.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorSet {
    kets: [Ket; N_PROJECTORS],
}

impl Default for ProjectorSet {
    /// Products of the analyzer states in measurement-table order.
    fn default() -> Self {
        let kets = PROJECTOR_LABELS.map(|(b, x)| {
            let (u, v) = (single_photon(b), single_photon(x));
            [u[0] * v[0], u[0] * v[1], u[1] * v[0], u[1] * v[1]]
        });
        ProjectorSet { kets }
    }
}

impl ProjectorSet {
    pub fn new(kets: [Ket; N_PROJECTORS]) -> Result<Self> {
        for (i, k) in kets.iter().enumerate() {
            let norm: f64 = k.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter {
                    name: "projector",
                    reason: format!("ket {} has norm {norm}", i + 1),
                });
            }
        }
        Ok(ProjectorSet { kets })
    }

    pub fn kets(&self) -> &[Ket; N_PROJECTORS] {
        &self.kets
    }

    /// Born-rule probabilities `⟨ψ_ν|ρ|ψ_ν⟩` for a two-photon state.
    pub fn born_counts(&self, rho: &DensityMatrix) -> Result<CoincidenceVector> {
        if rho.dim() != PAIR_DIM {
            return Err(Error::DimensionMismatch { expected: PAIR_DIM, got: rho.dim() });
        }
        let mut n = [0.0; N_PROJECTORS];
        for (slot, ket) in n.iter_mut().zip(&self.kets) {
            *slot = rho.expectation(ket).max(0.0);
        }
        CoincidenceVector::new(n)
    }
}

fn pauli(k: usize) -> [[C64; 2]; 2] {
    let (o, l, i) = (c(0.0, 0.0), c(1.0, 0.0), c(0.0, 1.0));
    match k {
        0 => [[l, o], [o, l]],
        1 => [[o, l], [l, o]],
        2 => [[o, -i], [i, o]],
        _ => [[l, o], [o, -l]],
    }
}

/// `Γ_{4a+b} = σ_a ⊗ σ_b`, 0-based.
fn gamma(index: usize) -> Mat4 {
    let (a, b) = (pauli(index / 4), pauli(index % 4));
    Mat4::from_fn(|r, col| a[r / 2][col / 2] * b[r % 2][col % 2])
}

/// Precomputed inversion data for a projector set.
#[derive(Debug, Clone)]
pub struct ReconstructionBasis {
    gammas: [Mat4; N_PROJECTORS],
    b: DMatrix<f64>,
    m: [Mat4; N_PROJECTORS],
    condition_number: f64,
}

impl ReconstructionBasis {
    pub fn gammas(&self) -> &[SMatrix<C64, 4, 4>; N_PROJECTORS] {
        &self.gammas
    }

    /// `B_{i,ν} = ⟨ψ_i|Γ_ν|ψ_i⟩`.
    pub fn b_matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// `M_ν = Σ_i Γ_i (B⁻¹)_{i,ν}`.
    pub fn m_matrices(&self) -> &[SMatrix<C64, 4, 4>; N_PROJECTORS] {
        &self.m
    }

    /// 2-norm condition number of `B`.
    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }
}

pub fn build_basis(ps: &ProjectorSet) -> Result<ReconstructionBasis> {
    let gammas: [Mat4; N_PROJECTORS] = std::array::from_fn(gamma);
    let b = DMatrix::from_fn(N_PROJECTORS, N_PROJECTORS, |i, nu| {
        let psi = Mat4::from_fn(|r, col| if col == 0 { ps.kets[i][r] } else { c(0.0, 0.0) });
        (psi.adjoint() * gammas[nu] * psi)[(0, 0)].re
    });
    let svd = b.clone().svd(false, false);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_min > 1e-12 * s_max) {
        return Err(Error::SingularBasis);
    }
    let b_inv = b.clone().try_inverse().ok_or(Error::SingularBasis)?;
    let m = std::array::from_fn(|nu| {
        let mut acc = Mat4::zeros();
        for (i, g) in gammas.iter().enumerate() {
            acc += g * c(b_inv[(i, nu)], 0.0);
        }
        acc
    });
    Ok(ReconstructionBasis {
        gammas,
        b,
        m,
        condition_number: s_max / s_min,
    })
}

/// `ρ = Σ_ν M_ν n_ν / k` with `k = Σ_ν tr(M_ν) n_ν`.
pub fn reconstruct(n: &CoincidenceVector, basis: &ReconstructionBasis) -> Result<DensityMatrix> {
    let mut acc = Mat4::zeros();
    let mut k = 0.0;
    for (m, &count) in basis.m.iter().zip(n.counts()) {
        acc += m * c(count, 0.0);
        k += m.trace().re * count;
    }
    if !(k.abs() > 0.0) || !k.is_finite() {
        return Err(Error::DegenerateCounts);
    }
    let mut rho = acc / c(k, 0.0);
    // enforce the structural symmetries exactly
    for r in 0..PAIR_DIM {
        rho[(r, r)].im = 0.0;
        for col in r + 1..PAIR_DIM {
            let avg = (rho[(r, col)] + rho[(col, r)].conj()) * 0.5;
            rho[(r, col)] = avg;
            rho[(col, r)] = avg.conj();
        }
    }
    let tr = rho.trace().re;
    for r in 0..PAIR_DIM {
        rho[(r, r)].re += (1.0 - tr) / PAIR_DIM as f64;
    }
    DensityMatrix::from_matrix(DMatrix::from_fn(PAIR_DIM, PAIR_DIM, |i, j| rho[(i, j)]))
}

/// Euclidean projection of a real vector onto the probability simplex.
pub fn project_simplex(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cumulative += v;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
        }
    }
    values.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Nearest (Frobenius) unit-trace positive-semidefinite matrix, obtained by
/// projecting the spectrum of the Hermitian part onto the simplex.
pub fn project_physical(rho: &DensityMatrix) -> DensityMatrix {
    let (values, vectors) = hermitian_eigen(rho.matrix());
    if values[0] >= 0.0 && (values.iter().sum::<f64>() - 1.0).abs() <= 1e-15 && rho.hermiticity_defect() == 0.0 {
        return rho.clone();
    }
    let projected = project_simplex(&values);
    DensityMatrix::from_matrix(spectral_map(&projected, &vectors, |x| x)).expect("square")
}

fn ensure_psd(rho: &DensityMatrix) -> Result<()> {
    let min = rho.min_eigenvalue();
    if min < -NEGATIVE_CLAMP {
        return Err(Error::NotPositive { min_eigenvalue: min });
    }
    Ok(())
}

/// Mixed-state fidelity `tr √(√a b √a)`.
pub fn fidelity_mixed(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    ensure_psd(a)?;
    ensure_psd(b)?;
    let sa = psd_sqrt(a.matrix())?;
    let inner = &sa * b.matrix() * &sa;
    let (mut values, _) = hermitian_eigen(&inner);
    clamp_spectrum(&mut values)?;
    let f: f64 = values.iter().map(|v| v.sqrt()).sum();
    Ok(f.clamp(0.0, 1.0))
}

/// `(|ee⟩ + e^{iΔφ}|ll⟩)/√2`.
pub fn bell_state(phase: f64) -> Ket {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [c(s, 0.0), c(0.0, 0.0), c(0.0, 0.0), C64::from_polar(s, phase)]
}

/// Fidelity `√|⟨Φ|ρ|Φ⟩|` with the Bell state of pump phase `phase`.
pub fn fidelity_bell(rho: &DensityMatrix, phase: f64) -> Result<f64> {
    if rho.dim() != PAIR_DIM {
        return Err(Error::DimensionMismatch { expected: PAIR_DIM, got: rho.dim() });
    }
    Ok(rho.expectation(&bell_state(phase)).abs().sqrt().min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn random_state(rng: &mut impl Rng, rank: usize) -> DensityMatrix {
        let a = DMatrix::from_fn(PAIR_DIM, rank, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let m = &a * a.adjoint();
        let tr = m.trace();
        DensityMatrix::from_matrix(m / tr).unwrap()
    }

    #[test]
    fn default_kets_match_table() {
        let ps = ProjectorSet::default();
        let h = 0.5;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let k = ps.kets();
        for z in k[0] {
            assert!((z - c(h, 0.0)).norm() < 1e-15);
        }
        for (z, want) in k[1].iter().zip([c(h, 0.0), c(0.0, -h), c(h, 0.0), c(0.0, -h)]) {
            assert!((z - want).norm() < 1e-15);
        }
        for (z, want) in k[5].iter().zip([c(h, 0.0), c(0.0, -h), c(0.0, -h), c(-h, 0.0)]) {
            assert!((z - want).norm() < 1e-15);
        }
        for (z, want) in k[2].iter().zip([c(s, 0.0), c(0.0, 0.0), c(s, 0.0), c(0.0, 0.0)]) {
            assert!((z - want).norm() < 1e-15);
        }
        assert_eq!(k[10], [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(k[11], [c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(k[14], [c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        for ket in k {
            let norm: f64 = ket.iter().map(|z| z.norm_sqr()).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        assert!(ProjectorSet::new(*k).is_ok());
        let mut bad = *k;
        bad[0][0] = c(2.0, 0.0);
        assert!(ProjectorSet::new(bad).is_err());
    }

    #[test]
    fn gamma_orthogonality() {
        let basis = build_basis(&ProjectorSet::default()).unwrap();
        let g = basis.gammas();
        assert_eq!(g[0], Mat4::identity());
        for i in 0..16 {
            for j in 0..16 {
                let tr = (g[i] * g[j]).trace();
                let want = if i == j { 4.0 } else { 0.0 };
                assert!((tr - c(want, 0.0)).norm() < 1e-14, "tr(G{i} G{j})");
            }
        }
        for i in 0..16 {
            assert!((basis.b_matrix()[(i, 0)] - 1.0).abs() < 1e-14);
        }
        assert!(basis.condition_number().is_finite());
        assert!(basis.condition_number() < 100.0);
    }

    #[test]
    fn incomplete_set_is_singular() {
        let k = ProjectorSet::default().kets()[10];
        let ps = ProjectorSet::new([k; 16]).unwrap();
        assert!(matches!(build_basis(&ps), Err(Error::SingularBasis)));
    }

    #[test]
    fn bell_state_roundtrip() {
        let ps = ProjectorSet::default();
        let basis = build_basis(&ps).unwrap();
        let phi = DensityMatrix::pure(&bell_state(0.0));
        let n = ps.born_counts(&phi).unwrap();
        let rho = reconstruct(&n, &basis).unwrap();
        assert!(rho.frobenius_distance(&phi) < 1e-10);
        assert_relative_eq!(rho.get(0, 3).re, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn maximally_mixed_roundtrip_and_scale_invariance() {
        let ps = ProjectorSet::default();
        let basis = build_basis(&ps).unwrap();
        let mixed = DensityMatrix::maximally_mixed(4);
        let n = ps.born_counts(&mixed).unwrap();
        let rho = reconstruct(&n, &basis).unwrap();
        assert!(rho.frobenius_distance(&mixed) < 1e-10);
        let scaled = reconstruct(&n.scaled(1234.5).unwrap(), &basis).unwrap();
        assert!(scaled.frobenius_distance(&rho) < 1e-12);
    }

    #[test]
    fn zero_counts_are_degenerate() {
        let basis = build_basis(&ProjectorSet::default()).unwrap();
        let n = CoincidenceVector::new([0.0; 16]).unwrap();
        assert!(matches!(reconstruct(&n, &basis), Err(Error::DegenerateCounts)));
    }

    #[test]
    fn reconstruct_has_exact_unit_trace() {
        let ps = ProjectorSet::default();
        let basis = build_basis(&ps).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let counts: [f64; 16] = std::array::from_fn(|_| rng.random_range(0.0..100.0));
            let rho = reconstruct(&CoincidenceVector::new(counts).unwrap(), &basis).unwrap();
            assert!((rho.trace().re - 1.0).abs() < 1e-15);
            assert_eq!(rho.hermiticity_defect(), 0.0);
        }
    }

    /// Brute-force simplex projection: try every support set, solve the
    /// equality-constrained least squares on it and keep the best feasible one.
    fn brute_force_simplex(v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 1u32..(1 << n) {
            let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let shift = (1.0 - support.iter().map(|&i| v[i]).sum::<f64>()) / support.len() as f64;
            let mut x = vec![0.0; n];
            for &i in &support {
                x[i] = v[i] + shift;
            }
            if x.iter().any(|&xi| xi < 0.0) {
                continue;
            }
            let dist: f64 = x.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                best = Some((dist, x));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn simplex_projection_matches_brute_force() {
        let cases = [
            vec![1.1, -0.1, 0.0, 0.0],
            vec![0.7, 0.5, -0.05, -0.15],
            vec![0.4, 0.3, 0.2, 0.1],
            vec![2.0, 1.0, -1.0, -1.0],
            vec![0.26, 0.26, 0.26, 0.22],
        ];
        for v in cases {
            let fast = project_simplex(&v);
            let slow = brute_force_simplex(&v);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-14, "{v:?}: {fast:?} vs {slow:?}");
            }
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..1.0)).collect();
            let (fast, slow) = (project_simplex(&v), brute_force_simplex(&v));
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_of_clipped_spectrum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let u = random_state(&mut rng, 4);
        let (_, vectors) = hermitian_eigen(u.matrix());
        let raw = DensityMatrix::from_matrix(spectral_map(&[1.1, -0.1, 0.0, 0.0], &vectors, |x| x)).unwrap();
        let out = project_physical(&raw);
        assert!(out.min_eigenvalue() >= -1e-15);
        assert_relative_eq!(out.trace().re, 1.0, epsilon = 1e-14);
        let again = project_physical(&out);
        assert!(again.frobenius_distance(&out) < 1e-12);
    }

    #[test]
    fn projection_leaves_physical_states_alone() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for rank in 1..=4 {
            let rho = random_state(&mut rng, rank);
            assert!(project_physical(&rho).frobenius_distance(&rho) < 1e-12);
        }
    }

    #[test]
    fn fidelity_special_cases() {
        let phi = DensityMatrix::pure(&bell_state(0.0));
        let mixed = DensityMatrix::maximally_mixed(4);
        assert_relative_eq!(fidelity_mixed(&phi, &mixed).unwrap(), 0.5, epsilon = 1e-9);
        assert_relative_eq!(fidelity_mixed(&mixed, &phi).unwrap(), 0.5, epsilon = 1e-9);
        assert_relative_eq!(fidelity_mixed(&phi, &phi).unwrap(), 1.0, epsilon = 1e-9);
        let psi = DensityMatrix::pure(&[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let orth = DensityMatrix::pure(&[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert!(fidelity_mixed(&psi, &orth).unwrap() < 1e-9);
        // pure states: |⟨ψ|φ⟩|
        assert_relative_eq!(fidelity_mixed(&psi, &phi).unwrap(), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-9);
    }

    #[test]
    fn fidelity_rejects_non_psd() {
        let bad = DensityMatrix::from_matrix(spectral_map(
            &[1.2, -0.2, 0.0, 0.0],
            &DMatrix::identity(4, 4),
            |x| x,
        ))
        .unwrap();
        assert!(matches!(fidelity_mixed(&bad, &DensityMatrix::maximally_mixed(4)), Err(Error::NotPositive { .. })));
    }

    #[test]
    fn bell_fidelity() {
        let phi = DensityMatrix::pure(&bell_state(0.0));
        assert_relative_eq!(fidelity_bell(&phi, 0.0).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(fidelity_bell(&DensityMatrix::maximally_mixed(4), 0.0).unwrap(), 0.5, epsilon = 1e-14);
        let minus = DensityMatrix::pure(&bell_state(std::f64::consts::PI));
        assert!(fidelity_bell(&minus, 0.0).unwrap() < 1e-7);
        assert_relative_eq!(fidelity_bell(&minus, std::f64::consts::PI).unwrap(), 1.0, epsilon = 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn born_roundtrip(seed in any::<u64>(), rank in 1usize..=4) {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let ps = ProjectorSet::default();
                let basis = build_basis(&ps).unwrap();
                let rho = random_state(&mut rng, rank);
                let back = reconstruct(&ps.born_counts(&rho).unwrap(), &basis).unwrap();
                prop_assert!(back.frobenius_distance(&rho) < 1e-9);
            }

            #[test]
            fn fidelity_symmetric(seed in any::<u64>()) {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let a = random_state(&mut rng, 4);
                let b = random_state(&mut rng, 2);
                let fab = fidelity_mixed(&a, &b).unwrap();
                let fba = fidelity_mixed(&b, &a).unwrap();
                prop_assert!((fab - fba).abs() < 1e-9);
                prop_assert!((0.0..=1.0).contains(&fab));
            }

            #[test]
            fn projection_idempotent_and_trace_preserving(seed in any::<u64>()) {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let h = DMatrix::from_fn(4, 4, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
                let herm = (&h + h.adjoint()) * c(0.5, 0.0);
                let tr = herm.trace().re;
                let mut m = herm;
                for i in 0..4 {
                    m[(i, i)].re += (1.0 - tr) / 4.0;
                }
                let raw = DensityMatrix::from_matrix(m).unwrap();
                let once = project_physical(&raw);
                let twice = project_physical(&once);
                prop_assert!((once.trace().re - 1.0).abs() < 1e-12);
                prop_assert!(once.min_eigenvalue() > -1e-12);
                prop_assert!(twice.frobenius_distance(&once) < 1e-12);
            }
        }
    }
}
