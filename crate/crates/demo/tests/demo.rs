use dxyz_demo::{eigenvalues, homodyne, relaxation, System, MAX_SPECTRUM_SITES};

fn single_spin() -> System {
    System {
        lx: 1,
        ly: 1,
        jx: 0.9,
        jy: 1.1,
        jz: 1.0,
        gamma: 1.0,
    }
}

#[test]
fn single_spin_relaxation() {
    let s = relaxation(single_spin(), 1e-3, 4.0).unwrap();
    assert_eq!(s.times().len(), s.values().len());
    assert!(s.times().len() <= 402);
    assert_eq!(*s.times().last().unwrap(), 4.0);
    for (t, m) in s.times().iter().zip(s.values()) {
        assert!((m - (-t / 2.0).exp()).abs() < 1e-10);
    }
}

#[test]
fn trajectories_are_seeded() {
    let sys = System { lx: 2, ..single_spin() };
    let a = homodyne(sys, 1e-3, 2.0, 5).unwrap();
    let b = homodyne(sys, 1e-3, 2.0, 5).unwrap();
    let c = homodyne(sys, 1e-3, 2.0, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.values(), c.values());
    assert!(a.values().iter().all(|m| m.abs() <= 1.0));
}

#[test]
fn single_spin_spectrum() {
    let spec = eigenvalues(single_spin()).unwrap();
    let mut re = spec.re();
    re.sort_by(f64::total_cmp);
    for (got, want) in re.iter().zip([-1.0, -0.5, -0.5, 0.0]) {
        assert!((got - want).abs() < 1e-12);
    }
    assert!((spec.gap() - 0.5).abs() < 1e-12);
}

#[test]
fn oversized_lattices_are_refused() {
    let sys = System { lx: MAX_SPECTRUM_SITES + 1, ..single_spin() };
    assert!(eigenvalues(sys).unwrap_err().contains("at most"));
}
