//! Vectorized Lindblad generator, its spectrum and steady state.
//!
//! Vectorization is column stacking: element `(a, b)` of a `D x D` operator
//! sits at index `a + b * D`, so that `vec(A X B) = (Bᵀ ⊗ A) vec(X)`. With
//! this convention the generator reads
//!
//! ```text
//! L = −i(I⊗H − Hᵀ⊗I) + γ Σ_j [ conj(σ-_j)⊗σ-_j − ½(I⊗n_j + n_jᵀ⊗I) ],  n_j = σ+_j σ-_j
//! ```
//!
//! The π rotation about z acts on `|a⟩⟨b|` with sign `(-1)^popcount(a ^ b)`,
//! so the generator splits into an even and an odd parity block which are
//! diagonalized separately.

use std::io::Write;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operators::{Couplings, SparseOperator, C64, I, ONE, ZERO};
use crate::state::DensityMatrix;

/// Largest superoperator dimension `build_liouvillian` accepts (`4^7`).
pub const DEFAULT_SPECTRAL_MAX_DIM: usize = 1 << 14;
/// Largest superoperator dimension diagonalized densely (`4^6`).
pub const DEFAULT_DENSE_EIG_MAX_DIM: usize = 1 << 12;
/// Relative tolerance, in units of γ, separating the zero eigenvalue.
pub const DEFAULT_ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Liouvillian {
    n_sites: usize,
    gamma: f64,
    matrix: SparseOperator,
}

#[inline]
pub fn vec_index(row: usize, col: usize, dim: usize) -> usize {
    row + col * dim
}

/// Column-stacked `vec(ρ)`.
pub fn vectorize(rho: &Array2<C64>) -> Vec<C64> {
    let dim = rho.nrows();
    let mut out = vec![ZERO; dim * dim];
    for ((a, b), &v) in rho.indexed_iter() {
        out[vec_index(a, b, dim)] = v;
    }
    out
}

pub fn unvectorize(v: &[C64]) -> Array2<C64> {
    let dim = (v.len() as f64).sqrt().round() as usize;
    assert_eq!(dim * dim, v.len(), "vector length is not a square");
    Array2::from_shape_fn((dim, dim), |(a, b)| v[vec_index(a, b, dim)])
}

/// `+1` when `|a⟩⟨b|` is even under the π rotation about z, else `-1`.
#[inline]
pub fn element_parity(a: usize, b: usize) -> i8 {
    if (a ^ b).count_ones().is_multiple_of(2) {
        1
    } else {
        -1
    }
}

pub fn build_liouvillian(h: &SparseOperator, c: &Couplings, n_sites: usize) -> Result<Liouvillian> {
    build_liouvillian_with_max(h, c, n_sites, DEFAULT_SPECTRAL_MAX_DIM)
}

pub fn build_liouvillian_with_max(
    h: &SparseOperator,
    c: &Couplings,
    n_sites: usize,
    max_dim: usize,
) -> Result<Liouvillian> {
    c.validate()?;
    if 2 * n_sites >= usize::BITS as usize || 1usize << (2 * n_sites) > max_dim {
        return Err(Error::SpectralSize {
            dim: 1usize.checked_shl(2 * n_sites as u32).unwrap_or(usize::MAX),
            max: max_dim,
        });
    }
    let dim = 1usize << n_sites;
    if h.dim() != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: h.dim(),
        });
    }
    let gamma = c.gamma;
    let mut triplets = Vec::with_capacity(2 * h.nnz() * dim + (n_sites + 1) * dim * dim);
    for (r, col, v) in h.entries() {
        for other in 0..dim {
            // −i H ρ
            triplets.push((vec_index(r, other, dim), vec_index(col, other, dim), -I * v));
            // +i ρ H
            triplets.push((vec_index(other, col, dim), vec_index(other, r, dim), I * v));
        }
    }
    for b in 0..dim {
        for a in 0..dim {
            let k = vec_index(a, b, dim);
            let ups = (a.count_ones() + b.count_ones()) as f64;
            if ups != 0.0 {
                triplets.push((k, k, C64::from(-0.5 * gamma * ups)));
            }
            let common = a & b;
            for j in 0..n_sites {
                let bit = 1usize << j;
                if common & bit != 0 {
                    triplets.push((vec_index(a ^ bit, b ^ bit, dim), k, C64::from(gamma)));
                }
            }
        }
    }
    Ok(Liouvillian {
        n_sites,
        gamma,
        matrix: SparseOperator::from_triplets(dim * dim, triplets),
    })
}

impl Liouvillian {
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Hilbert-space dimension `2^N`.
    pub fn hilbert_dim(&self) -> usize {
        1 << self.n_sites
    }

    /// Superoperator dimension `4^N`.
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &SparseOperator {
        &self.matrix
    }

    /// `L[ρ]` through the vectorized generator.
    pub fn apply(&self, rho: &Array2<C64>) -> Array2<C64> {
        let v = vectorize(rho);
        let mut out = vec![ZERO; v.len()];
        self.matrix.apply(&v, &mut out);
        unvectorize(&out)
    }

    pub fn zero_tol(&self) -> f64 {
        DEFAULT_ZERO_TOL * if self.gamma > 0.0 { self.gamma } else { 1.0 }
    }

    /// Index lists of the even and odd parity sectors, or `None` when some
    /// entry couples the two sectors.
    fn parity_sectors(&self) -> Option<[Vec<usize>; 2]> {
        let dim = self.hilbert_dim();
        let parity = |k: usize| element_parity(k % dim, k / dim);
        if self.matrix.entries().any(|(r, c, _)| parity(r) != parity(c)) {
            return None;
        }
        let (even, odd) = (0..self.dim()).partition(|&k| parity(k) == 1);
        Some([even, odd])
    }

    fn dense_block(&self, indices: &[usize]) -> faer::Mat<C64> {
        let mut position = vec![usize::MAX; self.dim()];
        for (p, &k) in indices.iter().enumerate() {
            position[k] = p;
        }
        let mut block = faer::Mat::<C64>::zeros(indices.len(), indices.len());
        for (p, &k) in indices.iter().enumerate() {
            let (cols, vals) = self.matrix.row(k);
            for (&c, &v) in cols.iter().zip(vals) {
                let q = position[c];
                if q != usize::MAX {
                    block[(p, q)] = v;
                }
            }
        }
        block
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
    /// Z₂ parity of the eigenmode: `1`, `-1`, or `0` when unresolved.
    pub parity: i8,
}

impl Eigenvalue {
    pub fn value(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SpectrumWarning {
    /// More than one eigenvalue lies within `zero_tol` of zero.
    DegenerateSteadyState { count: usize },
    /// The slowest decay rate is within ten times `zero_tol`; both the
    /// steady-state eigenvalue and the gap candidate are reported.
    NearCritical { steady: (f64, f64), gap: (f64, f64) },
}

#[derive(Debug, Clone)]
pub struct LiouvillianSpectrum {
    /// All eigenvalues, ordered by decreasing real part.
    pub eigenvalues: Vec<Eigenvalue>,
    pub steady_state: DensityMatrix,
    /// Eigenmode of the gap eigenvalue, unit Frobenius norm.
    pub slow_mode: Array2<C64>,
    /// `min |Re λ|` over the nonzero eigenvalues.
    pub gap: f64,
    pub gap_eigenvalue: Eigenvalue,
    pub zero_tol: f64,
    pub warnings: Vec<SpectrumWarning>,
}

#[derive(Debug, Clone, Copy)]
pub struct SpectrumOptions {
    pub dense_max_dim: usize,
    /// Zero tolerance in units of γ.
    pub zero_tol: f64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            dense_max_dim: DEFAULT_DENSE_EIG_MAX_DIM,
            zero_tol: DEFAULT_ZERO_TOL,
        }
    }
}

pub fn full_spectrum(l: &Liouvillian) -> Result<LiouvillianSpectrum> {
    full_spectrum_with(l, SpectrumOptions::default())
}

pub fn full_spectrum_with(l: &Liouvillian, opts: SpectrumOptions) -> Result<LiouvillianSpectrum> {
    if l.dim() > opts.dense_max_dim {
        return Err(Error::SpectralSize {
            dim: l.dim(),
            max: opts.dense_max_dim,
        });
    }
    let zero_tol = opts.zero_tol * if l.gamma > 0.0 { l.gamma } else { 1.0 };
    let blocks: Vec<(i8, Vec<usize>)> = match l.parity_sectors() {
        Some([even, odd]) => vec![(1, even), (-1, odd)],
        None => vec![(0, (0..l.dim()).collect())],
    };

    let mut eigenvalues = Vec::with_capacity(l.dim());
    let mut dense_blocks = Vec::with_capacity(blocks.len());
    for (parity, indices) in &blocks {
        if indices.is_empty() {
            continue;
        }
        let block = l.dense_block(indices);
        let values = block
            .eigenvalues()
            .map_err(|_| Error::Convergence {
                iterations: 0,
                residual: f64::NAN,
            })?;
        eigenvalues.extend(values.into_iter().map(|v| Eigenvalue {
            re: v.re,
            im: v.im,
            parity: *parity,
        }));
        dense_blocks.push((*parity, indices, block));
    }
    eigenvalues.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));

    let (steady_pos, steady_abs) = eigenvalues
        .iter()
        .enumerate()
        .map(|(k, e)| (k, e.value().norm()))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("nonempty spectrum");
    if steady_abs > zero_tol {
        return Err(Error::NoSteadyState {
            zero_tol,
            smallest: steady_abs,
        });
    }
    let mut warnings = Vec::new();
    let zero_count = eigenvalues
        .iter()
        .filter(|e| e.value().norm() <= zero_tol)
        .count();
    if zero_count > 1 {
        warnings.push(SpectrumWarning::DegenerateSteadyState { count: zero_count });
    }
    let steady = eigenvalues[steady_pos];
    let gap_eigenvalue = eigenvalues
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != steady_pos)
        .map(|(_, e)| *e)
        .min_by(|x, y| x.re.abs().total_cmp(&y.re.abs()))
        .unwrap_or(steady);
    let gap = gap_eigenvalue.re.abs();
    if gap < 10.0 * zero_tol {
        warnings.push(SpectrumWarning::NearCritical {
            steady: (steady.re, steady.im),
            gap: (gap_eigenvalue.re, gap_eigenvalue.im),
        });
    }

    let mode_of = |target: Eigenvalue| -> Result<Vec<C64>> {
        let (_, indices, block) = dense_blocks
            .iter()
            .find(|(p, _, _)| *p == target.parity)
            .expect("eigenvalue comes from a block");
        let local = inverse_iteration(block, target.value())?;
        let mut full = vec![ZERO; l.dim()];
        for (&k, v) in indices.iter().zip(local) {
            full[k] = v;
        }
        Ok(full)
    };

    let null = unvectorize(&mode_of(steady)?);
    let steady_state = normalize_steady_state(null)?;
    let mut slow = unvectorize(&mode_of(gap_eigenvalue)?);
    let norm = slow.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    slow.mapv_inplace(|v| v / norm);

    Ok(LiouvillianSpectrum {
        eigenvalues,
        steady_state,
        slow_mode: slow,
        gap,
        gap_eigenvalue,
        zero_tol,
        warnings,
    })
}

/// Eigenvector of `block` for an eigenvalue estimate, by two rounds of
/// inverse iteration.
fn inverse_iteration(block: &faer::Mat<C64>, eigenvalue: C64) -> Result<Vec<C64>> {
    let n = block.nrows();
    let scale = (0..n)
        .map(|k| block[(k, k)].norm())
        .fold(1.0_f64, f64::max);
    let shift = eigenvalue + C64::new(1e-13 * scale, 1e-13 * scale);
    let shifted = faer::Mat::<C64>::from_fn(n, n, |i, j| {
        if i == j {
            block[(i, j)] - shift
        } else {
            block[(i, j)]
        }
    });
    let lu = shifted.partial_piv_lu();
    let mut x = faer::Mat::<C64>::from_fn(n, 1, |i, _| C64::new(1.0 + (i % 7) as f64 * 0.1, 0.0));
    for _ in 0..3 {
        x = faer::linalg::solvers::Solve::solve(&lu, &x);
        let norm = (0..n).map(|i| x[(i, 0)].norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Convergence {
                iterations: 0,
                residual: norm,
            });
        }
        for i in 0..n {
            x[(i, 0)] /= norm;
        }
    }
    Ok((0..n).map(|i| x[(i, 0)]).collect())
}

fn normalize_steady_state(mut rho: Array2<C64>) -> Result<DensityMatrix> {
    let trace: C64 = rho.diag().sum();
    if trace.norm() < 1e-300 {
        return Err(Error::NoSteadyState {
            zero_tol: 0.0,
            smallest: 0.0,
        });
    }
    rho.mapv_inplace(|v| v / trace);
    let herm = (&rho + &rho.t().mapv(|v| v.conj())).mapv(|v| v * 0.5);
    DensityMatrix::from_matrix(herm)
}

#[derive(Debug, Clone, Copy)]
pub struct SteadyStateOptions {
    pub dense_max_dim: usize,
    /// Residual bound `‖L[ρ]‖` in units of γ.
    pub tolerance: f64,
    pub restart: usize,
    pub max_iterations: usize,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self {
            dense_max_dim: DEFAULT_DENSE_EIG_MAX_DIM,
            tolerance: 1e-8,
            restart: 60,
            max_iterations: 20_000,
        }
    }
}

/// Steady state by solving `L[ρ] = 0` with `Tr ρ = 1`.
///
/// Solves `(L + v wᵀ) x = v`, where `w` is the trace functional and
/// `wᵀ v = 1`; since `wᵀ L = 0` every solution has unit trace and lies in the
/// kernel of `L`. Dense LU below `dense_max_dim`, restarted GMRES above.
pub fn steady_state_direct(l: &Liouvillian) -> Result<DensityMatrix> {
    steady_state_with(l, SteadyStateOptions::default())
}

pub fn steady_state_with(l: &Liouvillian, opts: SteadyStateOptions) -> Result<DensityMatrix> {
    let dim = l.hilbert_dim();
    // The trace functional only touches diagonal elements, which are all even.
    let sector: Vec<usize> = match l.parity_sectors() {
        Some([even, _]) => even,
        None => (0..l.dim()).collect(),
    };
    let mut position = vec![usize::MAX; l.dim()];
    for (p, &k) in sector.iter().enumerate() {
        position[k] = p;
    }
    let n = sector.len();
    let trace_positions: Vec<usize> = (0..dim).map(|a| position[vec_index(a, a, dim)]).collect();
    let v_entry = C64::from(1.0 / dim as f64);

    let solution: Vec<C64> = if l.dim() <= opts.dense_max_dim {
        let mut m = l.dense_block(&sector);
        for &i in &trace_positions {
            for &j in &trace_positions {
                m[(i, j)] += v_entry;
            }
        }
        let mut rhs = faer::Mat::<C64>::zeros(n, 1);
        for &i in &trace_positions {
            rhs[(i, 0)] = v_entry;
        }
        let x = faer::linalg::solvers::Solve::solve(&m.partial_piv_lu(), &rhs);
        (0..n).map(|i| x[(i, 0)]).collect()
    } else {
        let sub = SectorOperator::new(&l.matrix, &sector, &position);
        let apply = |x: &[C64], y: &mut [C64]| {
            sub.apply(x, y);
            let tr: C64 = trace_positions.iter().map(|&p| x[p]).sum();
            for &p in &trace_positions {
                y[p] += v_entry * tr;
            }
        };
        let mut rhs = vec![ZERO; n];
        for &p in &trace_positions {
            rhs[p] = v_entry;
        }
        let diag: Vec<C64> = (0..n)
            .map(|p| {
                let d = sub.diagonal(p)
                    + if trace_positions.contains(&p) {
                        v_entry
                    } else {
                        ZERO
                    };
                if d == ZERO {
                    ONE
                } else {
                    d
                }
            })
            .collect();
        gmres(
            apply,
            &diag,
            &rhs,
            opts.tolerance * l.gamma.max(f64::MIN_POSITIVE) * 1e-2,
            opts.restart,
            opts.max_iterations,
        )?
    };

    let mut full = vec![ZERO; l.dim()];
    for (&k, v) in sector.iter().zip(solution) {
        full[k] = v;
    }
    let rho = normalize_steady_state(unvectorize(&full))?;
    let residual = residual_norm(l, rho.matrix());
    let bound = opts.tolerance * if l.gamma > 0.0 { l.gamma } else { 1.0 };
    if residual > bound || !residual.is_finite() {
        return Err(Error::Convergence {
            iterations: opts.max_iterations,
            residual,
        });
    }
    Ok(rho)
}

/// Frobenius norm of `L[ρ]`.
pub fn residual_norm(l: &Liouvillian, rho: &Array2<C64>) -> f64 {
    l.apply(rho).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

struct SectorOperator {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SectorOperator {
    fn new(matrix: &SparseOperator, sector: &[usize], position: &[usize]) -> Self {
        let mut row_ptr = Vec::with_capacity(sector.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for &k in sector {
            let (c, v) = matrix.row(k);
            for (&c, &v) in c.iter().zip(v) {
                if position[c] != usize::MAX {
                    cols.push(position[c]);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            row_ptr,
            cols,
            vals,
        }
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            *out = self.cols[span.clone()]
                .iter()
                .zip(&self.vals[span])
                .map(|(&c, &v)| v * x[c])
                .sum();
        }
    }

    fn diagonal(&self, r: usize) -> C64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .zip(&self.vals[span])
            .find(|(&c, _)| c == r)
            .map_or(ZERO, |(_, &v)| v)
    }
}

/// Right-preconditioned restarted GMRES with a Jacobi preconditioner.
fn gmres<F>(
    apply: F,
    diag: &[C64],
    rhs: &[C64],
    tol: f64,
    restart: usize,
    max_iterations: usize,
) -> Result<Vec<C64>>
where
    F: Fn(&[C64], &mut [C64]),
{
    let n = rhs.len();
    let dot = |a: &[C64], b: &[C64]| -> C64 { a.iter().zip(b).map(|(x, y)| x.conj() * y).sum() };
    let norm = |a: &[C64]| -> f64 { a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt() };
    let precondition = |x: &[C64]| -> Vec<C64> { x.iter().zip(diag).map(|(v, d)| v / d).collect() };

    let mut x = vec![ZERO; n];
    let mut work = vec![ZERO; n];
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < max_iterations {
        apply(&x, &mut work);
        let r: Vec<C64> = rhs.iter().zip(&work).map(|(b, ax)| b - ax).collect();
        let beta = norm(&r);
        residual = beta;
        if beta <= tol {
            return Ok(x);
        }
        let mut basis: Vec<Vec<C64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess = vec![vec![ZERO; restart]; restart + 1];
        let mut cs = vec![ZERO; restart];
        let mut sn = vec![ZERO; restart];
        let mut g = vec![ZERO; restart + 1];
        g[0] = C64::from(beta);
        let mut used = 0;
        for k in 0..restart {
            iterations += 1;
            let z = precondition(&basis[k]);
            apply(&z, &mut work);
            let mut w = work.clone();
            for (i, q) in basis.iter().enumerate() {
                let hik = dot(q, &w);
                hess[i][k] = hik;
                for (wv, qv) in w.iter_mut().zip(q) {
                    *wv -= hik * qv;
                }
            }
            let hnext = norm(&w);
            hess[k + 1][k] = C64::from(hnext);
            for i in 0..k {
                let temp = cs[i].conj() * hess[i][k] + sn[i].conj() * hess[i + 1][k];
                hess[i + 1][k] = -sn[i] * hess[i][k] + cs[i] * hess[i + 1][k];
                hess[i][k] = temp;
            }
            let (a, b) = (hess[k][k], hess[k + 1][k]);
            let denom = (a.norm_sqr() + b.norm_sqr()).sqrt();
            if denom == 0.0 {
                used = k;
                break;
            }
            cs[k] = a / denom;
            sn[k] = b / denom;
            hess[k][k] = cs[k].conj() * a + sn[k].conj() * b;
            hess[k + 1][k] = ZERO;
            g[k + 1] = -sn[k] * g[k];
            g[k] = cs[k].conj() * g[k];
            used = k + 1;
            residual = g[k + 1].norm();
            if residual <= tol || hnext == 0.0 || iterations >= max_iterations {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }
        let mut y = vec![ZERO; used];
        for i in (0..used).rev() {
            let mut acc = g[i];
            for j in i + 1..used {
                acc -= hess[i][j] * y[j];
            }
            y[i] = acc / hess[i][i];
        }
        let mut update = vec![ZERO; n];
        for (q, &yi) in basis.iter().zip(&y) {
            for (u, qv) in update.iter_mut().zip(q) {
                *u += yi * qv;
            }
        }
        for (xv, u) in x.iter_mut().zip(precondition(&update)) {
            *xv += u;
        }
        if residual <= tol {
            return Ok(x);
        }
    }
    Err(Error::Convergence {
        iterations,
        residual,
    })
}

/// Writes eigenvalues as CSV with columns `re,im,parity`.
pub fn write_spectrum_csv<W: Write>(spectrum: &LiouvillianSpectrum, mut out: W) -> std::io::Result<()> {
    writeln!(out, "re,im,parity")?;
    for e in &spectrum.eigenvalues {
        writeln!(out, "{:.15e},{:.15e},{}", e.re, e.im, e.parity)?;
    }
    Ok(())
}
