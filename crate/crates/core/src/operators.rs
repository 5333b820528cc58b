//! Spin operators on the `2^N` computational basis.
//!
//! Basis convention: bit `b` of a basis index is the state of site `b`, with
//! bit value 1 meaning spin up (the +1 eigenstate of σ^z). Under this
//! convention σ^+ = |↑⟩⟨↓|, σ^- = |↓⟩⟨↑| and σ^y = i(σ^- − σ^+), so
//! σ^y|↑⟩ = i|↓⟩ and σ^y|↓⟩ = −i|↑⟩.

use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeGeometry, DEFAULT_MAX_SITES};
use crate::state::PureState;

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// Coupling constants of the XYZ Hamiltonian and the spin-flip rate.
///
/// Energies and rates share units with ħ = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Couplings {
    pub jx: f64,
    pub jy: f64,
    pub jz: f64,
    pub gamma: f64,
}

impl Couplings {
    pub fn new(jx: f64, jy: f64, jz: f64, gamma: f64) -> Result<Self> {
        let c = Self { jx, jy, jz, gamma };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jx.is_finite() && self.jy.is_finite() && self.jz.is_finite()) {
            return Err(Error::InvalidParameter("couplings must be finite".into()));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be finite and non-negative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    pub fn with_jy(self, jy: f64) -> Self {
        Self { jy, ..self }
    }
}

/// Single-site operator label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "x")]
    X,
    #[serde(rename = "y")]
    Y,
    #[serde(rename = "z")]
    Z,
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Axis {
    /// Action on a single spin: `Some((flips, amplitude))`, or `None` when the
    /// spin is annihilated.
    #[inline]
    fn act(self, up: bool) -> Option<(bool, C64)> {
        match (self, up) {
            (Axis::X, _) => Some((true, ONE)),
            (Axis::Y, true) => Some((true, I)),
            (Axis::Y, false) => Some((true, -I)),
            (Axis::Z, true) => Some((false, ONE)),
            (Axis::Z, false) => Some((false, -ONE)),
            (Axis::Plus, false) | (Axis::Minus, true) => Some((true, ONE)),
            (Axis::Plus, true) | (Axis::Minus, false) => None,
        }
    }

    fn flips(self) -> bool {
        !matches!(self, Axis::Z)
    }
}

/// A coefficient times a tensor product of single-site operators.
///
/// Every such string maps a basis state to at most one basis state, which is
/// what lets [`apply_pauli_string`] run without building a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliString {
    coefficient: C64,
    factors: Vec<(usize, Axis)>,
    flip_mask: usize,
}

impl PauliString {
    pub fn new(coefficient: C64, mut factors: Vec<(usize, Axis)>) -> Result<Self> {
        factors.sort_by_key(|&(site, _)| site);
        if factors.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidParameter(
                "a Pauli string holds at most one factor per site".into(),
            ));
        }
        if factors.iter().any(|&(site, _)| site >= usize::BITS as usize) {
            return Err(Error::InvalidParameter("site index too large".into()));
        }
        let flip_mask = factors
            .iter()
            .filter(|(_, axis)| axis.flips())
            .fold(0usize, |mask, &(site, _)| mask | (1 << site));
        Ok(Self {
            coefficient,
            factors,
            flip_mask,
        })
    }

    pub fn identity() -> Self {
        Self {
            coefficient: ONE,
            factors: Vec::new(),
            flip_mask: 0,
        }
    }

    pub fn single(site: usize, axis: Axis) -> Self {
        Self::new(ONE, vec![(site, axis)]).expect("single factor is always valid")
    }

    pub fn pair(site_a: usize, axis_a: Axis, site_b: usize, axis_b: Axis) -> Result<Self> {
        Self::new(ONE, vec![(site_a, axis_a), (site_b, axis_b)])
    }

    pub fn scaled(mut self, factor: C64) -> Self {
        self.coefficient *= factor;
        self
    }

    pub fn coefficient(&self) -> C64 {
        self.coefficient
    }

    pub fn factors(&self) -> &[(usize, Axis)] {
        &self.factors
    }

    /// Largest site index plus one.
    pub fn support(&self) -> usize {
        self.factors.last().map_or(0, |&(site, _)| site + 1)
    }

    pub(crate) fn check_sites(&self, n_sites: usize) -> Result<()> {
        match self.factors.iter().find(|&&(site, _)| site >= n_sites) {
            Some(&(site, _)) => Err(Error::SiteIndex { site, n_sites }),
            None => Ok(()),
        }
    }

    /// Image of basis state `basis`: the target index and its amplitude.
    #[inline]
    pub fn action(&self, basis: usize) -> Option<(usize, C64)> {
        let mut amp = self.coefficient;
        for &(site, axis) in &self.factors {
            let (_, a) = axis.act(basis >> site & 1 == 1)?;
            amp *= a;
        }
        Some((basis ^ self.flip_mask, amp))
    }

    pub fn to_sparse(&self, n_sites: usize) -> Result<SparseOperator> {
        SparseOperator::from_pauli_sum(n_sites, std::slice::from_ref(self))
    }

    /// Hermitian conjugate.
    pub fn adjoint(&self) -> Self {
        let factors = self
            .factors
            .iter()
            .map(|&(site, axis)| {
                let axis = match axis {
                    Axis::Plus => Axis::Minus,
                    Axis::Minus => Axis::Plus,
                    other => other,
                };
                (site, axis)
            })
            .collect();
        Self {
            coefficient: self.coefficient.conj(),
            factors,
            flip_mask: self.flip_mask,
        }
    }
}

/// Applies a Pauli string to a state by bit manipulation.
pub fn apply_pauli_string(ps: &PauliString, state: &PureState) -> Result<PureState> {
    let n_sites = state.n_sites();
    ps.check_sites(n_sites)?;
    let psi = state.amplitudes();
    let mut out = vec![ZERO; psi.len()];
    for (basis, &amp) in psi.iter().enumerate() {
        if let Some((target, factor)) = ps.action(basis) {
            out[target] += factor * amp;
        }
    }
    PureState::from_amplitudes(out)
}

/// Builds the `2^n_sites`-dimensional matrix of a single-site operator.
pub fn pauli_matrix(site: usize, axis: Axis, n_sites: usize) -> Result<SparseOperator> {
    if n_sites > DEFAULT_MAX_SITES {
        return Err(Error::Size {
            n_sites,
            max: DEFAULT_MAX_SITES,
        });
    }
    if site >= n_sites {
        return Err(Error::SiteIndex { site, n_sites });
    }
    PauliString::single(site, axis).to_sparse(n_sites)
}

/// Square complex matrix in compressed sparse row form.
///
/// Rows are stored in order with ascending, unique column indices; explicit
/// zeros are dropped at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseOperator {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: vec![0; dim + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal((0..dim).map(|_| ONE).collect())
    }

    pub fn diagonal(diag: Vec<C64>) -> Self {
        Self::from_triplets(
            diag.len(),
            diag.into_iter().enumerate().map(|(k, v)| (k, k, v)).collect(),
        )
    }

    /// Sums duplicate `(row, col)` entries.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, C64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<C64> = Vec::with_capacity(triplets.len());
        let mut rows = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            assert!(r < dim && c < dim, "triplet ({r}, {c}) outside dimension {dim}");
            if rows.last() == Some(&r) && cols.last() == Some(&c) {
                *vals.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
            }
        }
        let mut kept_cols = Vec::with_capacity(cols.len());
        let mut kept_vals = Vec::with_capacity(vals.len());
        for ((r, c), v) in rows.into_iter().zip(cols).zip(vals) {
            if v != ZERO {
                row_ptr[r + 1] += 1;
                kept_cols.push(c);
                kept_vals.push(v);
            }
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            dim,
            row_ptr,
            cols: kept_cols,
            vals: kept_vals,
        }
    }

    pub fn from_pauli_sum(n_sites: usize, terms: &[PauliString]) -> Result<Self> {
        let dim = checked_dim(n_sites)?;
        for term in terms {
            term.check_sites(n_sites)?;
        }
        let mut triplets = Vec::with_capacity(terms.len() * dim);
        for term in terms {
            for basis in 0..dim {
                if let Some((target, amp)) = term.action(basis) {
                    triplets.push((target, basis, amp));
                }
            }
        }
        Ok(Self::from_triplets(dim, triplets))
    }

    pub fn from_dense(matrix: &Array2<C64>) -> Self {
        let dim = matrix.nrows();
        assert_eq!(dim, matrix.ncols(), "operator must be square");
        let triplets = matrix
            .indexed_iter()
            .filter(|(_, &v)| v != ZERO)
            .map(|((r, c), &v)| (r, c, v))
            .collect();
        Self::from_triplets(dim, triplets)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored (structurally nonzero) entries.
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[C64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[span.clone()], &self.vals[span])
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(ZERO, |k| vals[k])
    }

    /// Iterates over stored `(row, col, value)` entries.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        for (r, out) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            *out = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    /// `y += alpha A x`.
    pub fn apply_add(&self, alpha: C64, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        for (r, out) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            let acc: C64 = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
            *out += alpha * acc;
        }
    }

    pub fn apply_state(&self, state: &PureState) -> Result<PureState> {
        if state.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: state.dim(),
            });
        }
        let mut out = vec![ZERO; self.dim];
        self.apply(state.amplitudes(), &mut out);
        PureState::from_amplitudes(out)
    }

    /// `out += alpha A rho` for a row-major dense matrix.
    pub fn left_mul_add(&self, alpha: C64, rho: &Array2<C64>, out: &mut Array2<C64>) {
        let dim = self.dim;
        assert_eq!(rho.dim(), (dim, dim));
        assert_eq!(out.dim(), (dim, dim));
        let rho = rho.as_slice().expect("standard layout");
        let out = out.as_slice_mut().expect("standard layout");
        for r in 0..dim {
            let (cols, vals) = self.row(r);
            let out_row = &mut out[r * dim..(r + 1) * dim];
            for (&c, &v) in cols.iter().zip(vals) {
                let coeff = alpha * v;
                let rho_row = &rho[c * dim..(c + 1) * dim];
                for (o, &x) in out_row.iter_mut().zip(rho_row) {
                    *o += coeff * x;
                }
            }
        }
    }

    /// `out += alpha rho A` for a row-major dense matrix.
    pub fn right_mul_add(&self, alpha: C64, rho: &Array2<C64>, out: &mut Array2<C64>) {
        let dim = self.dim;
        assert_eq!(rho.dim(), (dim, dim));
        assert_eq!(out.dim(), (dim, dim));
        let rho = rho.as_slice().expect("standard layout");
        let out = out.as_slice_mut().expect("standard layout");
        for a in 0..dim {
            let rho_row = &rho[a * dim..(a + 1) * dim];
            let out_row = &mut out[a * dim..(a + 1) * dim];
            for (c, &x) in rho_row.iter().enumerate() {
                if x == ZERO {
                    continue;
                }
                let x = alpha * x;
                let (cols, vals) = self.row(c);
                for (&b, &v) in cols.iter().zip(vals) {
                    out_row[b] += x * v;
                }
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self::from_triplets(self.dim, self.entries().chain(other.entries()).collect())
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self::from_triplets(
            self.dim,
            self.entries().map(|(r, c, v)| (r, c, factor * v)).collect(),
        )
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut triplets = Vec::new();
        for r in 0..self.dim {
            let (cols, vals) = self.row(r);
            for (&k, &a) in cols.iter().zip(vals) {
                let (cols2, vals2) = other.row(k);
                for (&c, &b) in cols2.iter().zip(vals2) {
                    triplets.push((r, c, a * b));
                }
            }
        }
        Self::from_triplets(self.dim, triplets)
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(
            self.dim,
            self.entries().map(|(r, c, v)| (c, r, v.conj())).collect(),
        )
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.dim, self.entries().map(|(r, c, v)| (c, r, v)).collect())
    }

    /// Largest entrywise modulus of `A - A†`.
    pub fn hermiticity_error(&self) -> f64 {
        self.entries()
            .map(|(r, c, v)| (v - self.get(c, r).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.add(&other.scale(-ONE))
            .vals
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|k| self.get(k, k)).sum()
    }

    /// Canonical dense export, row-major `dim x dim`.
    pub fn to_dense(&self) -> Array2<C64> {
        let mut m = Array2::zeros((self.dim, self.dim));
        for (r, c, v) in self.entries() {
            m[[r, c]] = v;
        }
        m
    }

    /// Writes the dense matrix as CSV, one matrix row per line, with columns
    /// `re(A[r,0]), im(A[r,0]), re(A[r,1]), im(A[r,1]), ...`.
    pub fn write_dense_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let dense = self.to_dense();
        for row in dense.rows() {
            let line: Vec<String> = row
                .iter()
                .flat_map(|v| [format!("{:e}", v.re), format!("{:e}", v.im)])
                .collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Writes the dense matrix in binary: the dimension as a little-endian
    /// `u64`, then `dim * dim` pairs of little-endian `f64` (re, im) in
    /// row-major order.
    pub fn write_dense_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(&(self.dim as u64).to_le_bytes())?;
        for v in self.to_dense().iter() {
            out.write_all(&v.re.to_le_bytes())?;
            out.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }
}

fn checked_dim(n_sites: usize) -> Result<usize> {
    if n_sites > DEFAULT_MAX_SITES {
        return Err(Error::Size {
            n_sites,
            max: DEFAULT_MAX_SITES,
        });
    }
    Ok(1 << n_sites)
}

/// The XYZ Hamiltonian `Σ_<ij> (Jx σx σx + Jy σy σy + Jz σz σz)`.
pub fn build_hamiltonian(geom: &LatticeGeometry, c: &Couplings) -> Result<SparseOperator> {
    build_hamiltonian_with_max(geom, c, DEFAULT_MAX_SITES)
}

pub fn build_hamiltonian_with_max(
    geom: &LatticeGeometry,
    c: &Couplings,
    max_sites: usize,
) -> Result<SparseOperator> {
    c.validate()?;
    let n_sites = geom.n_sites();
    if n_sites > max_sites.min(DEFAULT_MAX_SITES) {
        return Err(Error::Size {
            n_sites,
            max: max_sites.min(DEFAULT_MAX_SITES),
        });
    }
    let mut terms = Vec::with_capacity(3 * geom.bonds().len());
    for bond in geom.bonds() {
        let m = f64::from(bond.multiplicity);
        for (axis, j) in [(Axis::X, c.jx), (Axis::Y, c.jy), (Axis::Z, c.jz)] {
            terms.push(PauliString::pair(bond.i, axis, bond.j, axis)?.scaled(C64::from(m * j)));
        }
    }
    SparseOperator::from_pauli_sum(n_sites, &terms)
}

/// `H - (iγ/2) Σ_j σ+_j σ-_j`, the no-jump generator of the quantum-jump
/// unraveling.
pub fn build_effective_hamiltonian(
    h: &SparseOperator,
    c: &Couplings,
    n_sites: usize,
) -> Result<SparseOperator> {
    let dim = checked_dim(n_sites)?;
    if h.dim() != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: h.dim(),
        });
    }
    let damping = (0..dim)
        .map(|basis| C64::new(0.0, -0.5 * c.gamma * basis.count_ones() as f64))
        .collect();
    Ok(h.add(&SparseOperator::diagonal(damping)))
}

/// `U = ⊗_j σ^z_j`, the π rotation about z that flips σ^x and σ^y.
pub fn z2_operator(n_sites: usize) -> Result<SparseOperator> {
    let dim = checked_dim(n_sites)?;
    Ok(SparseOperator::diagonal(
        (0..dim).map(|basis| C64::from(z2_sign(basis, n_sites))).collect(),
    ))
}

/// Eigenvalue of `⊗_j σ^z_j` on a basis state: `(-1)^(number of down spins)`.
#[inline]
pub fn z2_sign(basis: usize, n_sites: usize) -> f64 {
    if (n_sites as u32 - basis.count_ones()).is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// `Σ_j σ^axis_j`.
pub fn total_spin(n_sites: usize, axis: Axis) -> Result<SparseOperator> {
    let terms: Vec<_> = (0..n_sites).map(|j| PauliString::single(j, axis)).collect();
    SparseOperator::from_pauli_sum(n_sites, &terms)
}
