//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance` runs the fast tier; criteria 5, 7 and 9
//! take hours on one core and run with `cargo test --release --test
//! acceptance -- --slow`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use dxyz_core::analysis::{
    bimodality, bimodality_samples, build_histogram, count_modes, fit_decay, fit_ensemble_decay, gap_point,
    gap_sweep, histogram_from_samples, interior_minimum, GapMethod,
};
use dxyz_core::integrate::{rk4_evolve, rk4_evolve_with};
use dxyz_core::liouville::{build_liouvillian, full_spectrum, vec_index};
use dxyz_core::operators::{build_hamiltonian, z2_operator};
use dxyz_core::trajectories::{run_ensemble, TrajectoryProblem, TrajectorySettings, Unraveling};
use dxyz_core::{
    Axis, Couplings, DensityMatrix, Direction, EvolveSettings, LatticeGeometry, Observable, PureState,
    SparseOperator,
};
use ndarray::Array2;
use num_complex::Complex64 as C;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use common::{PAPER_1D, PAPER_2D};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn couplings(j: (f64, f64, f64)) -> Couplings {
    Couplings::new(j.0, j.1, j.2, 1.0).unwrap()
}

fn mx_rk4(geom: &LatticeGeometry, c: &Couplings, dt: f64, t_max: f64, record_every: usize) -> (Vec<f64>, Vec<f64>) {
    let h = build_hamiltonian(geom, c).unwrap();
    let rho0 = DensityMatrix::product(geom.n_sites(), Direction::PlusX).unwrap();
    let s = EvolveSettings {
        dt,
        t_max,
        record_every,
    };
    let series = rk4_evolve(&rho0, &h, c, &s, &[Observable::Magnetization(Axis::X)]).unwrap();
    (series.times, series.columns[0].clone())
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let geom = LatticeGeometry::single_site();
    let c = Couplings::new(0.0, 0.0, 0.0, 1.0).unwrap();
    let h = build_hamiltonian(&geom, &c).unwrap();
    let spectrum = full_spectrum(&build_liouvillian(&h, &c, 1).unwrap()).unwrap();
    let mut got: Vec<C> = spectrum.eigenvalues.iter().map(|e| e.value()).collect();
    got.sort_by(|a, b| b.re.total_cmp(&a.re));
    let expected = [0.0, -0.5, -0.5, -1.0];
    let err = got
        .iter()
        .zip(expected)
        .map(|(g, e)| (g - C::new(e, 0.0)).norm())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    check(
        got.len() == 4 && err < 1e-10 && (spectrum.gap - 0.5).abs() < 1e-10 && elapsed < Duration::from_secs(1),
        format!("max eigenvalue error {err:.1e}, gap {:.12}, {elapsed:.2?}", spectrum.gap),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (lx, j) in [(2, PAPER_1D), (2, PAPER_2D), (3, PAPER_1D), (3, PAPER_2D)] {
        let geom = LatticeGeometry::chain(lx, true).unwrap();
        let (_, mx) = mx_rk4(&geom, &couplings(j), 1e-3, 20.0, 100);
        let exact = common::exact_mx_series(lx, 1, j, 1.0, 0.1, 200);
        let err = mx.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        parts.push(format!("N={lx} J={j:?}: {err:.1e}"));
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-6 && elapsed < Duration::from_secs(60),
        format!("max |ΔM^x| {} ({elapsed:.1?})", parts.join(", ")),
    )
}

fn criterion_3() -> Outcome {
    let n_traj = 2000;
    let (dt, t_max, every) = (1e-3, 4.0, 100);
    let mut points = 0;
    let mut failures = 0;
    let mut parts = Vec::new();
    for (lx, ly, j) in [(3, 1, PAPER_1D), (2, 2, PAPER_2D)] {
        let geom = LatticeGeometry::rect(lx, ly, true).unwrap();
        let c = couplings(j);
        let (_, reference) = mx_rk4(&geom, &c, dt, t_max, every);
        for unraveling in [Unraveling::Jump, Unraveling::Homodyne] {
            let problem = TrajectoryProblem {
                psi0: PureState::product(geom.n_sites(), Direction::PlusX).unwrap(),
                h: build_hamiltonian(&geom, &c).unwrap(),
                couplings: c,
                unraveling,
                settings: TrajectorySettings {
                    record_every: every,
                    ..TrajectorySettings::new(dt, t_max)
                },
                extra: vec![],
            };
            let ens = run_ensemble(&problem, n_traj, 1000).unwrap();
            let (mean, se) = ens.column("mx").unwrap();
            let se = se.unwrap();
            let mut local = 0;
            let mut worst: f64 = 0.0;
            for ((m, s), r) in mean.iter().zip(se).zip(&reference) {
                let z = (m - r).abs() / s.max(1e-300);
                if (m - r).abs() > 3.0 * s + 1e-12 {
                    local += 1;
                }
                if *s > 0.0 {
                    worst = worst.max(z);
                }
            }
            points += mean.len();
            failures += local;
            parts.push(format!("{lx}x{ly} {unraveling}: {local}/{} beyond 3σ (max {worst:.2}σ)", mean.len()));
        }
    }
    let rate = failures as f64 / points as f64;
    check(
        rate < 0.01,
        format!("{}; failure rate {:.2}%", parts.join(", "), 100.0 * rate),
    )
}

fn criterion_4() -> Outcome {
    let method = GapMethod::Rk4 {
        dt: 1e-3,
        t_max: 40.0,
        t_start: 10.0,
    };
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (lx, ly, j, jys) in [(4, 1, PAPER_1D, [2.0, 2.2, 2.4]), (2, 2, PAPER_2D, [1.0, 1.1, 1.2])] {
        let geom = LatticeGeometry::rect(lx, ly, true).unwrap();
        for jy in jys {
            let p = gap_point(&geom, &couplings((j.0, jy, j.2)), &method, true).map_err(|e| e.to_string())?;
            let exact = p.lambda_exact.unwrap();
            let rel = (p.lambda - exact).abs() / exact;
            worst = worst.max(rel);
            parts.push(format!("{lx}x{ly} jy={jy}: fit {:.5} exact {exact:.5}", p.lambda));
        }
    }
    check(
        worst < 0.02,
        format!("{}; worst relative deviation {:.3}%", parts.join(", "), 100.0 * worst),
    )
}

fn criterion_5() -> Outcome {
    // The 2x2 gap comes from exact diagonalization: at jy = jx the M^x decay
    // oscillates through zero and has no log-linear tail to fit.
    let jys: Vec<f64> = (0..=14).map(|k| 0.9 + 0.05 * k as f64).collect();
    let geom2 = LatticeGeometry::rect(2, 2, true).unwrap();
    let sweep = gap_sweep(&geom2, &couplings(PAPER_2D), &jys, &GapMethod::Spectrum, true).map_err(|e| e.to_string())?;
    let k2 = interior_minimum(&sweep);
    let min2 = sweep.iter().map(|p| p.lambda).fold(f64::INFINITY, f64::min);
    let arg2 = sweep.iter().find(|p| p.lambda == min2).unwrap().jy;

    let geom3 = LatticeGeometry::rect(3, 3, true).unwrap();
    let mut best3 = (f64::INFINITY, 0.0, 0.0);
    let mut parts = Vec::new();
    for jy in [1.05, 1.1, 1.15] {
        let c = couplings((PAPER_2D.0, jy, PAPER_2D.2));
        let problem = TrajectoryProblem {
            psi0: PureState::product(9, Direction::PlusX).unwrap(),
            h: build_hamiltonian(&geom3, &c).unwrap(),
            couplings: c,
            unraveling: Unraveling::Jump,
            settings: TrajectorySettings {
                record_every: 20,
                ..TrajectorySettings::new(5e-3, 30.0)
            },
            extra: vec![],
        };
        let ens = run_ensemble(&problem, 500, 5000).map_err(|e| e.to_string())?;
        let (fit, err) = fit_ensemble_decay(&ens.records, 5.0, 100, 17).map_err(|e| e.to_string())?;
        parts.push(format!("3x3 jy={jy}: {:.4}±{err:.4}", fit.lambda_fit));
        if fit.lambda_fit < best3.0 {
            best3 = (fit.lambda_fit, err, jy);
        }
    }
    let combined = best3.1;
    check(
        k2.is_some() && best3.0 + 2.0 * combined < min2,
        format!(
            "2x2 interior minimum {min2:.4} at jy={arg2} ({}); {}; min λ(3x3) {:.4} vs min λ(2x2) {min2:.4}, 2σ = {:.4}",
            if k2.is_some() { "interior" } else { "at edge" },
            parts.join(", "),
            best3.0,
            2.0 * combined
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let gauss: Vec<f64> = (0..1_000_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let uniform: Vec<f64> = (0..1_000_000).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
    let peaks: Vec<f64> = (0..1000).map(|k| if k % 2 == 0 { 0.7 } else { -0.7 }).collect();
    let bg = bimodality_samples(&gauss).unwrap();
    let bu = bimodality_samples(&uniform).unwrap();
    let bp = bimodality(&histogram_from_samples(&peaks, 40, 0.0, vec![]).unwrap()).unwrap();
    check(
        (bg - 1.0 / 3.0).abs() < 0.002 && (bu - 5.0 / 9.0).abs() < 0.002 && bp == 1.0,
        format!("gaussian {bg:.5}, uniform {bu:.5}, delta peaks {bp}"),
    )
}

fn criterion_7() -> Outcome {
    let geom = LatticeGeometry::rect(3, 3, true).unwrap();
    let t_s = 50.0;
    let mut results = Vec::new();
    for jy in [0.95, 1.25] {
        let c = couplings((PAPER_2D.0, jy, PAPER_2D.2));
        let problem = TrajectoryProblem {
            psi0: PureState::product(9, Direction::MinusZ).unwrap(),
            h: build_hamiltonian(&geom, &c).unwrap(),
            couplings: c,
            unraveling: Unraveling::Homodyne,
            settings: TrajectorySettings::new(1e-3, 1000.0),
            extra: vec![],
        };
        let ens = run_ensemble(&problem, 16, 7000).map_err(|e| e.to_string())?;
        let hist = build_histogram(&ens.records, t_s, 40).map_err(|e| e.to_string())?;
        let b = bimodality(&hist).map_err(|e| e.to_string())?;
        results.push((jy, b, count_modes(&hist, 0.8)));
    }
    let (_, b_low, modes_low) = results[0];
    let (_, b_high, modes_high) = results[1];
    check(
        b_high - b_low > 0.2 && modes_high.count == 2 && modes_high.peak > 0.2 && modes_low.count == 1,
        format!(
            "b(0.95) = {b_low:.3} ({} mode(s)), b(1.25) = {b_high:.3} ({} mode(s), peak ±{:.3}), Δb = {:.3}",
            modes_low.count,
            modes_high.count,
            modes_high.peak,
            b_high - b_low
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    let geom = LatticeGeometry::rect(2, 2, true).unwrap();
    let c = couplings(PAPER_2D);
    let h = build_hamiltonian(&geom, &c).unwrap();
    let rho0 = DensityMatrix::product(4, Direction::PlusX).unwrap();
    let s = EvolveSettings {
        dt: 1e-3,
        t_max: 5.0,
        record_every: 100,
    };
    let (mut trace_err, mut herm_err): (f64, f64) = (0.0, 0.0);
    let last = rk4_evolve_with(&rho0, &h, &c, &s, |_, rho| {
        trace_err = trace_err.max((rho.trace() - C::new(1.0, 0.0)).norm());
        herm_err = herm_err.max(rho.hermiticity_error());
        Ok(())
    })
    .unwrap();
    let min_eig = last.min_eigenvalue();
    ok &= trace_err < 1e-10 && herm_err < 1e-10 && min_eig > -1e-8;
    notes.push(format!("trace {trace_err:.1e}, hermiticity {herm_err:.1e}, min eig {min_eig:.1e}"));

    let u = z2_operator(4).unwrap();
    let record = [Observable::Magnetization(Axis::X)];
    let a = rk4_evolve(&rho0, &h, &c, &s, &record).unwrap();
    let b = rk4_evolve(&rho0.conjugate_by(&u).unwrap(), &h, &c, &s, &record).unwrap();
    let z2 = a.columns[0]
        .iter()
        .zip(&b.columns[0])
        .map(|(x, y)| (x + y).abs())
        .fold(0.0, f64::max);
    ok &= z2 < 1e-12;
    notes.push(format!("Z2 covariance {z2:.1e}"));

    let problem = |unraveling| TrajectoryProblem {
        psi0: PureState::product(4, Direction::PlusX).unwrap(),
        h: h.clone(),
        couplings: c,
        unraveling,
        settings: TrajectorySettings {
            keep_states: true,
            record_every: 50,
            ..TrajectorySettings::new(1e-3, 2.0)
        },
        extra: vec![],
    };
    let mut norm_err: f64 = 0.0;
    let mut deterministic = true;
    for unraveling in [Unraveling::Jump, Unraveling::Homodyne] {
        let p = problem(unraveling);
        let ens = run_ensemble(&p, 8, 42).unwrap();
        for (k, rec) in ens.records.iter().enumerate() {
            for state in rec.states.as_ref().unwrap() {
                norm_err = norm_err.max((state.iter().map(|a| a.norm_sqr()).sum::<f64>() - 1.0).abs());
            }
            deterministic &= *rec == p.run_trajectory(42 + k as u64).unwrap();
        }
        deterministic &= ens == run_ensemble(&p, 8, 42).unwrap();
    }
    ok &= norm_err < 1e-12 && deterministic;
    notes.push(format!("trajectory norm {norm_err:.1e}, deterministic {deterministic}"));

    let mut op_err: f64 = 0.0;
    for (lx, ly) in [(2, 1), (3, 1), (4, 1), (2, 2)] {
        let geom = LatticeGeometry::rect(lx, ly, true).unwrap();
        let c = couplings(PAPER_1D);
        let n = lx * ly;
        let h = build_hamiltonian(&geom, &c).unwrap();
        let oracle = common::hamiltonian(lx, ly, PAPER_1D);
        op_err = op_err.max(max_diff(&h.to_dense(), &oracle));
        if n <= 3 {
            let l = build_liouvillian(&h, &c, n).unwrap();
            let lo = common::liouvillian(&oracle, 1.0, n);
            let dim = 1 << n;
            for a in 0..dim {
                for b in 0..dim {
                    for a2 in 0..dim {
                        for b2 in 0..dim {
                            let got = l.matrix().get(vec_index(a, b, dim), vec_index(a2, b2, dim));
                            let want = lo[[a + b * dim, a2 + b2 * dim]];
                            op_err = op_err.max((got - want).norm());
                        }
                    }
                }
            }
        }
        let dense = SparseOperator::from_dense(&oracle);
        let x: Vec<C> = (0..1 << n).map(|k| C::new((k as f64).sin(), (k as f64).cos())).collect();
        let mut y1 = vec![C::new(0.0, 0.0); 1 << n];
        h.apply(&x, &mut y1);
        let y2 = oracle.dot(&ndarray::Array1::from_vec(x.clone()));
        op_err = op_err.max(y1.iter().zip(&y2).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max));
        op_err = op_err.max(dense.max_abs_diff(&h));
    }
    ok &= op_err < 1e-12;
    notes.push(format!("matrix-free vs dense {op_err:.1e}"));
    check(ok, notes.join(", "))
}

fn criterion_9() -> Outcome {
    let c = couplings(PAPER_1D);
    let fit = |n: usize, dt: f64| -> Result<f64, String> {
        let geom = LatticeGeometry::chain(n, true).unwrap();
        let (times, mx) = mx_rk4(&geom, &c, dt, 40.0, ((0.1 / dt).round() as usize).max(1));
        fit_decay(&times, &mx, 10.0, 0.0).map(|f| f.lambda_fit).map_err(|e| e.to_string())
    };
    let l8_fine = fit(8, 5e-3)?;
    let l8 = fit(8, 2e-2)?;
    let l10 = fit(10, 2e-2)?;
    let step_rel = (l8 - l8_fine).abs() / l8_fine;
    let rel = (l10 - l8).abs() / l8;
    check(
        rel < 0.10 && step_rel < 0.01,
        format!(
            "λ(8x1) = {l8:.5} (dt 5e-3: {l8_fine:.5}, step effect {:.2}%), λ(10x1) = {l10:.5}, difference {:.2}%",
            100.0 * step_rel,
            100.0 * rel
        ),
    )
}

fn max_diff(a: &Array2<C>, b: &Array2<C>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn main() {
    let slow = std::env::args().any(|a| a == "--slow");
    let criteria: [(u32, &str, bool, fn() -> Outcome); 9] = [
        (1, "analytic single-spin spectrum", false, criterion_1),
        (2, "rk4 vs matrix-exponential oracle", false, criterion_2),
        (3, "unraveling equivalence", false, criterion_3),
        (4, "gap benchmark against exact diagonalization", false, criterion_4),
        (5, "gap minimum and size dependence", true, criterion_5),
        (6, "bimodality endpoints", false, criterion_6),
        (7, "transition signature in p(M^x)", true, criterion_7),
        (8, "invariant suite", false, criterion_8),
        (9, "1D saturation substitute", true, criterion_9),
    ];
    let filter: Vec<u32> = std::env::args().filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, is_slow, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        if is_slow && !slow {
            println!("criterion {id} [{name}]: SKIP (slow tier, run with -- --slow)");
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {id} [{name}]: PASS ({elapsed:.1?}) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} [{name}]: FAIL ({elapsed:.1?}) {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
