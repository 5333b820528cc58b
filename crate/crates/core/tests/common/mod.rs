//! Dense oracles built from Kronecker products, independent of the library's
//! bit-twiddling operators.

#![allow(dead_code)]

use ndarray::linalg::kron;
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C;

pub const PAPER_1D: (f64, f64, f64) = (1.8, 2.2, 2.0);
pub const PAPER_2D: (f64, f64, f64) = (0.9, 1.1, 1.0);

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

/// Single-site matrices in the (down, up) basis.
pub fn pauli(axis: char) -> Array2<C> {
    let z = c(0.0, 0.0);
    let o = c(1.0, 0.0);
    match axis {
        'x' => Array2::from_shape_vec((2, 2), vec![z, o, o, z]).unwrap(),
        'y' => Array2::from_shape_vec((2, 2), vec![z, c(0.0, 1.0), c(0.0, -1.0), z]).unwrap(),
        'z' => Array2::from_shape_vec((2, 2), vec![-o, z, z, o]).unwrap(),
        // σ- = |↓⟩⟨↑|
        '-' => Array2::from_shape_vec((2, 2), vec![z, o, z, z]).unwrap(),
        'i' => Array2::eye(2),
        _ => unreachable!(),
    }
}

/// `op` on `site` of `n`; site `j` is bit `j`, so it is the `j`-th factor
/// from the right.
pub fn site_op(op: &Array2<C>, site: usize, n: usize) -> Array2<C> {
    let mut out = Array2::<C>::eye(1);
    for k in (0..n).rev() {
        let factor = if k == site { op.clone() } else { pauli('i') };
        out = kron(&out, &factor);
    }
    out
}

pub fn dagger(a: &Array2<C>) -> Array2<C> {
    a.t().mapv(|v| v.conj())
}

/// Periodic nearest-neighbor pairs of an `lx` by `ly` lattice, deduplicated.
pub fn bonds(lx: usize, ly: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let idx = |x: usize, y: usize| x + lx * y;
    for y in 0..ly {
        for x in 0..lx {
            for (a, b) in [(idx(x, y), idx((x + 1) % lx, y)), (idx(x, y), idx(x, (y + 1) % ly))] {
                let p = (a.min(b), a.max(b));
                if a != b && !out.contains(&p) {
                    out.push(p);
                }
            }
        }
    }
    out
}

pub fn hamiltonian(lx: usize, ly: usize, j: (f64, f64, f64)) -> Array2<C> {
    let n = lx * ly;
    let dim = 1 << n;
    let mut h = Array2::<C>::zeros((dim, dim));
    for (a, b) in bonds(lx, ly) {
        for (axis, coupling) in [('x', j.0), ('y', j.1), ('z', j.2)] {
            let s = pauli(axis);
            h = h + site_op(&s, a, n).dot(&site_op(&s, b, n)) * c(coupling, 0.0);
        }
    }
    h
}

/// Column-stacked Lindbladian, `vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)`.
pub fn liouvillian(h: &Array2<C>, gamma: f64, n: usize) -> Array2<C> {
    let dim = h.nrows();
    let id = Array2::<C>::eye(dim);
    let mut l = (kron(&id, h) - kron(&h.t().to_owned(), &id)) * c(0.0, -1.0);
    for j in 0..n {
        let lj = site_op(&pauli('-'), j, n);
        let ldl = dagger(&lj).dot(&lj);
        let jump = kron(&lj.mapv(|v| v.conj()), &lj);
        let anti = kron(&id, &ldl) + kron(&ldl.t().to_owned(), &id);
        l = l + (jump - anti * c(0.5, 0.0)) * c(gamma, 0.0);
    }
    l
}

fn norm1(a: &Array2<C>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(a)` by scaling and squaring with a degree-24 Taylor polynomial.
pub fn expm(a: &Array2<C>) -> Array2<C> {
    let norm = norm1(a);
    let squarings = if norm > 0.25 { (norm / 0.25).log2().ceil() as i32 } else { 0 };
    let scaled = a * c(0.5f64.powi(squarings), 0.0);
    let dim = a.nrows();
    let mut result = Array2::<C>::eye(dim);
    let mut term = Array2::<C>::eye(dim);
    for k in 1..=24 {
        term = term.dot(&scaled) * c(1.0 / k as f64, 0.0);
        result += &term;
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}

pub fn vec_col(rho: &Array2<C>) -> Array1<C> {
    let dim = rho.nrows();
    Array1::from_shape_fn(dim * dim, |k| rho[[k % dim, k / dim]])
}

pub fn unvec_col(v: &Array1<C>) -> Array2<C> {
    let dim = (v.len() as f64).sqrt().round() as usize;
    Array2::from_shape_fn((dim, dim), |(a, b)| v[a + b * dim])
}

/// Product state with every spin along +x.
pub fn plus_x(n: usize) -> Array2<C> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut psi = Array1::<C>::from_elem(1, c(1.0, 0.0));
    for _ in 0..n {
        let single = Array1::from_vec(vec![c(h, 0.0), c(h, 0.0)]);
        let next: Vec<C> = single.iter().flat_map(|s| psi.iter().map(move |p| s * p)).collect();
        psi = Array1::from_vec(next);
    }
    let dim = psi.len();
    Array2::from_shape_fn((dim, dim), |(a, b)| psi[a] * psi[b].conj())
}

pub fn mx(rho: &Array2<C>, n: usize) -> f64 {
    (0..n)
        .map(|j| site_op(&pauli('x'), j, n).dot(rho).diag().sum().re)
        .sum::<f64>()
        / n as f64
}

/// `M^x(k τ)` for `k = 0..=steps` under exact propagation.
pub fn exact_mx_series(lx: usize, ly: usize, j: (f64, f64, f64), gamma: f64, tau: f64, steps: usize) -> Vec<f64> {
    let n = lx * ly;
    let l = liouvillian(&hamiltonian(lx, ly, j), gamma, n);
    let prop = expm(&(l * c(tau, 0.0)));
    let mut v = vec_col(&plus_x(n));
    let mut out = vec![mx(&unvec_col(&v), n)];
    for _ in 0..steps {
        v = prop.dot(&v);
        out.push(mx(&unvec_col(&v), n));
    }
    out
}

/// `ρ(t)` under exact propagation from all spins +x.
pub fn exact_rho(lx: usize, ly: usize, j: (f64, f64, f64), gamma: f64, t: f64) -> Array2<C> {
    let n = lx * ly;
    let l = liouvillian(&hamiltonian(lx, ly, j), gamma, n);
    unvec_col(&expm(&(l * c(t, 0.0))).dot(&vec_col(&plus_x(n))))
}
