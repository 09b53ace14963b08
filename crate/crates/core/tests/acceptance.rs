//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any criterion fails.
//!
//! Criterion 7 needs measured coincidence counts in the `counts` CSV layout;
//! point `TIMEBIN_EXPERIMENTAL_COUNTS` at the file to run it, otherwise it is
//! reported as SKIP.
//!
//! Run a subset with `cargo test --test acceptance -- 3 6`.

use std::time::{Duration, Instant};

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use timebin_core::calibration::{fit_rabi, predict_counts, FitOptions, FreeParam, PowerUnit, RabiDataset, RabiRow};
use timebin_core::emission::emission_probabilities;
use timebin_core::lindblad::{evolve, EvolveOptions, InitialState};
use timebin_core::model::{omega0_to_power, ModelParams, ParamName, B, X};
use timebin_core::pipeline::{analyze_counts, default_basis, run_pipeline, PipelineOptions};
use timebin_core::sweep::{linspace, run_sweep};
use timebin_core::tomography::{fidelity_mixed, reconstruct, ProjectorSet};
use timebin_core::DensityMatrix;

type Verdict = std::result::Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Option<Verdict>);

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Log-uniform draw in [v/10, 10 v]; zero stays zero.
fn within_decade(rng: &mut ChaCha8Rng, v: f64) -> f64 {
    v * 10f64.powf(rng.random_range(-1.0..=1.0))
}

fn random_state(rng: &mut ChaCha8Rng, dim: usize, rank: usize) -> DensityMatrix {
    let g = DMatrix::from_fn(dim, rank, |_, _| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let m = &g * g.adjoint();
    let tr = m.trace().re;
    DensityMatrix::from_matrix(m / Complex::from(tr)).unwrap()
}

fn c1_trace_positivity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let (mut worst_trace, mut worst_eig, mut steps) = (0.0f64, f64::INFINITY, 0usize);
    for _ in 0..50 {
        let mut p = ModelParams::default();
        for name in ParamName::RATES {
            p.set(name, within_decade(&mut rng, p.get(name)));
        }
        p.omega0 = rng.random_range(0.01..0.5);
        p.tau = rng.random_range(10.0..150.0);
        let traj = evolve(&p, &InitialState::Ground.density_matrix(), &EvolveOptions::default()).map_err(|e| e.to_string())?;
        if traj.end_time() < 7000.0 {
            return Err(format!("trajectory stops at {} ps", traj.end_time()));
        }
        for i in 0..traj.len() {
            let rho = traj.density_matrix(i);
            worst_trace = worst_trace.max((rho.trace().re - 1.0).abs());
            worst_eig = worst_eig.min(rho.min_eigenvalue());
        }
        steps += traj.len();
    }
    let elapsed = secs(start.elapsed());
    check(
        worst_trace < 1e-8 && worst_eig > -1e-8 && elapsed < 60.0,
        format!("max |tr-1| = {worst_trace:.2e}, min eigenvalue = {worst_eig:.2e} over {steps} stored states, {elapsed:.1} s"),
    )
}

fn c2_decay_oracle() -> Verdict {
    let p = ModelParams { omega0: 0.0, ..ModelParams::default() };
    let traj = evolve(&p, &InitialState::Biexciton.density_matrix(), &EvolveOptions::default()).map_err(|e| e.to_string())?;
    let (gb, gx) = (1.0 / 458.0, p.gamma_x);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (t, rho) in traj.times().iter().zip(traj.states()) {
        if *t > 3.0 * 458.0 {
            break;
        }
        let b = (-gb * t).exp();
        // cascade feeding of the exciton
        let x = gb / (gx - gb) * ((-gb * t).exp() - (-gx * t).exp());
        worst = worst.max((rho[(B, B)].re - b).abs()).max((rho[(X, X)].re - x).abs());
        checked += 1;
    }
    check(worst < 1e-6 && checked > 10, format!("max population error {worst:.2e} over {checked} states up to 1374 ps"))
}

fn c3_operating_point() -> Verdict {
    let p = ModelParams::default();
    let traj = evolve(&p, &InitialState::Ground.density_matrix(), &EvolveOptions::default()).map_err(|e| e.to_string())?;
    let e = emission_probabilities(&traj, &p).map_err(|e| e.to_string())?;
    let pb2 = e.p_b * e.p_b;
    let band = (e.p_b - 0.075).abs() <= 0.015;
    check(
        band && pb2 < 0.006,
        format!(
            "P_b = {:.4} (target 0.075 ± 0.015: {}), P_b² = {pb2:.2e} (< 0.006: {})",
            e.p_b,
            if band { "ok" } else { "out of band" },
            if pb2 < 0.006 { "ok" } else { "too large" },
        ),
    )
}

fn c4_rabi_structure() -> Verdict {
    let base = ModelParams::default();
    let omegas = linspace(0.01, 0.8, 80);
    let mut pb = Vec::with_capacity(omegas.len());
    for &o in &omegas {
        let power = omega0_to_power(o, &base).map_err(|e| e.to_string())?;
        pb.push(predict_counts(&base, power).map_err(|e| e.to_string())?.p_b);
    }
    let maxima: Vec<usize> = (1..pb.len() - 1).filter(|&i| pb[i] > pb[i - 1] && pb[i] >= pb[i + 1]).collect();
    let minima: Vec<usize> = (1..pb.len() - 1).filter(|&i| pb[i] < pb[i - 1] && pb[i] <= pb[i + 1]).collect();
    let Some(&first) = maxima.first() else {
        return Err("no local maximum of P_b".into());
    };
    let rising = pb[..=first].windows(2).all(|w| w[1] > w[0]);
    let peaks: Vec<f64> = maxima.iter().map(|&i| pb[i]).collect();
    let troughs: Vec<f64> = minima.iter().map(|&i| pb[i]).collect();
    let damped = peaks.windows(2).all(|w| w[1] < w[0]) && troughs.windows(2).all(|w| w[1] > w[0]);
    let visibility: Vec<f64> = peaks.iter().zip(&troughs).map(|(a, b)| (a - b) / (a + b)).collect();
    let fading = visibility.windows(2).all(|w| w[1] < w[0]);
    check(
        rising && maxima.len() >= 2 && damped && fading,
        format!(
            "first maximum P_b = {:.3} at Ω₀ = {:.3} THz; peaks {:?}; troughs {:?}",
            pb[first],
            omegas[first],
            peaks.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            troughs.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        ),
    )
}

fn c5_tomography_roundtrip() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ps = ProjectorSet::default();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for k in 0..100 {
        let rho = random_state(&mut rng, 4, 1 + k % 4);
        let counts = ps.born_counts(&rho).map_err(|e| e.to_string())?;
        let back = reconstruct(&counts, default_basis()).map_err(|e| e.to_string())?;
        worst = worst.max(back.frobenius_distance(&rho));
    }
    check(worst < 1e-9, format!("max Frobenius error {worst:.2e} over 100 states, {:.2} s", secs(start.elapsed())))
}

fn c6_end_to_end_fidelity() -> Verdict {
    let r = run_pipeline(&ModelParams::default(), &PipelineOptions::default()).map_err(|e| e.to_string())?;
    check(
        r.fidelity_bell >= 0.88,
        format!(
            "fidelity_bell = {:.4} (floor 0.88; experimental 0.90 {})",
            r.fidelity_bell,
            if r.fidelity_bell >= 0.90 { "reached" } else { "not reached" }
        ),
    )
}

fn c7_experimental_counts() -> Option<Verdict> {
    let path = std::env::var_os("TIMEBIN_EXPERIMENTAL_COUNTS")?;
    Some((|| {
        let counts = timebin_core::io::read_counts_csv(path.as_ref()).map_err(|e| e.to_string())?;
        let (_, measured, _) = analyze_counts(&counts, 0.0).map_err(|e| e.to_string())?;
        let model = run_pipeline(&ModelParams::default(), &PipelineOptions::default()).map_err(|e| e.to_string())?;
        let f = fidelity_mixed(&measured, &model.physical).map_err(|e| e.to_string())?;
        check((f - 0.96).abs() <= 0.02, format!("F_ρ = {f:.4} (target 0.96 ± 0.02)"))
    })())
}

fn c8_fit_recovery() -> Verdict {
    let truth = ModelParams::default();
    let rows = (0..15)
        .map(|k| {
            let o = 0.03 + (0.45 - 0.03) * k as f64 / 14.0;
            let power = omega0_to_power(o, &truth)?;
            let c = predict_counts(&truth, power)?;
            Ok(RabiRow { power, counts_b: c.counts_b, counts_x: c.counts_x })
        })
        .collect::<timebin_core::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let data = RabiDataset::new(rows, truth.tau, PowerUnit::AveragePower).map_err(|e| e.to_string())?;
    let names = ParamName::RABI_FIT;
    let factors = [1.6, 0.6, 1.5, 0.7, 1.4, 0.65, 1.15, 0.8, 1.25, 0.7, 1.3];
    let mut start = truth;
    for (&n, f) in names.iter().zip(factors) {
        start.set(n, truth.get(n) * f);
    }
    let free: Vec<FreeParam> = names.iter().map(|&n| FreeParam::new(n, truth.get(n) / 5.0, truth.get(n) * 5.0)).collect();
    let opts = FitOptions { seed: 1, ..FitOptions::default() };
    let clock = Instant::now();
    let report = fit_rabi(&data, &start, &free, &opts).map_err(|e| e.to_string())?;
    let errors: Vec<(ParamName, f64)> = names.iter().map(|&n| (n, report.params.get(n) / truth.get(n) - 1.0)).collect();
    let worst = errors.iter().map(|(_, e)| e.abs()).fold(0.0, f64::max);
    let detail = errors.iter().map(|(n, e)| format!("{n} {:+.2}%", 100.0 * e)).collect::<Vec<_>>().join(", ");
    check(
        worst < 0.10 && report.evaluations <= 2000,
        format!(
            "15 powers, {} free, {} evaluations, {:.0} s, worst {:.3}%: {detail}",
            names.len(),
            report.evaluations,
            secs(clock.elapsed()),
            100.0 * worst
        ),
    )
}

fn c9_desk_sweep() -> Verdict {
    let p = ModelParams::default();
    let opts = PipelineOptions::default();
    let clock = Instant::now();
    let grid = run_sweep(&p, &linspace(0.01, 0.3, 20), &linspace(10.0, 150.0, 20), &opts).map_err(|e| e.to_string())?;
    let elapsed = secs(clock.elapsed());
    let max_norm = grid.cells().map(|(i, j, _, _)| grid.counts_norm(i, j)).filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let corner = grid.fidelity(0, 0);
    let reference = run_pipeline(&p, &opts).map_err(|e| e.to_string())?.fidelity_bell;
    check(
        elapsed < 600.0 && (max_norm - 1.0).abs() < 1e-12 && corner >= reference,
        format!(
            "{elapsed:.0} s, {} failed cells, max counts_norm = {max_norm}, F(0.01, 10) = {corner:.4} vs F(0.05, 85) = {reference:.4}",
            grid.failed_cells()
        ),
    )
}

fn c10_mixed_fidelity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut self_err = 0.0f64;
    let mut sym_err = 0.0f64;
    for k in 0..50 {
        let a = random_state(&mut rng, 4, 1 + k % 4);
        let b = random_state(&mut rng, 4, 1 + (k / 4) % 4);
        self_err = self_err.max((fidelity_mixed(&a, &a).map_err(|e| e.to_string())? - 1.0).abs());
        let (ab, ba) = (fidelity_mixed(&a, &b).map_err(|e| e.to_string())?, fidelity_mixed(&b, &a).map_err(|e| e.to_string())?);
        sym_err = sym_err.max((ab - ba).abs());
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let phi = DensityMatrix::pure(&[Complex::new(s, 0.0), Complex::default(), Complex::default(), Complex::new(s, 0.0)]);
    let mixed = DensityMatrix::maximally_mixed(4);
    let half = fidelity_mixed(&phi, &mixed).map_err(|e| e.to_string())?;
    check(
        self_err < 1e-9 && (half - 0.5).abs() < 1e-9 && sym_err < 1e-9,
        format!("|F(ρ,ρ)-1| ≤ {self_err:.1e}, F(Φ⁺, I/4) = {half:.12}, asymmetry ≤ {sym_err:.1e}"),
    )
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 10] = [
        (1, "trace and positivity over 50 random parameter sets", || Some(c1_trace_positivity())),
        (2, "biexciton decay matches the analytic cascade", || Some(c2_decay_oracle())),
        (3, "operating-point emission probability", || Some(c3_operating_point())),
        (4, "Rabi oscillation with damped visibility", || Some(c4_rabi_structure())),
        (5, "tomography roundtrip on 100 random states", || Some(c5_tomography_roundtrip())),
        (6, "end-to-end Bell fidelity at the operating point", || Some(c6_end_to_end_fidelity())),
        (7, "mixed fidelity against measured counts", c7_experimental_counts),
        (8, "Rabi fit recovers synthetic parameters", || Some(c8_fit_recovery())),
        (9, "desk-scale sweep", || Some(c9_desk_sweep())),
        (10, "mixed-fidelity metric identities", || Some(c10_mixed_fidelity())),
    ];
    let mut failed = 0;
    for (n, title, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let outcome = match std::panic::catch_unwind(run) {
            Ok(Some(Ok(d))) => Outcome::Pass(d),
            Ok(Some(Err(d))) => Outcome::Fail(d),
            Ok(None) => Outcome::Skip("set TIMEBIN_EXPERIMENTAL_COUNTS to a counts CSV to run".into()),
            Err(_) => Outcome::Fail("panicked".into()),
        };
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {n:>2} {tag}: {title}: {detail}");
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
