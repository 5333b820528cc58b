//! Pure states and density matrices on the computational basis.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::DEFAULT_MAX_SITES;
use crate::operators::{Axis, PauliString, SparseOperator, C64, I, ONE, ZERO};

/// Direction of a fully polarized product state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "+x")]
    PlusX,
    #[serde(rename = "-x")]
    MinusX,
    #[serde(rename = "+y")]
    PlusY,
    #[serde(rename = "-y")]
    MinusY,
    #[serde(rename = "+z")]
    PlusZ,
    #[serde(rename = "-z")]
    MinusZ,
}

impl Direction {
    /// Single-spin amplitudes `(down, up)`.
    fn spinor(self) -> [C64; 2] {
        let h = C64::from(std::f64::consts::FRAC_1_SQRT_2);
        match self {
            Direction::PlusX => [h, h],
            Direction::MinusX => [-h, h],
            Direction::PlusY => [I * h, h],
            Direction::MinusY => [-I * h, h],
            Direction::PlusZ => [ZERO, ONE],
            Direction::MinusZ => [ONE, ZERO],
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Direction::PlusX => "+x",
            Direction::MinusX => "-x",
            Direction::PlusY => "+y",
            Direction::MinusY => "-y",
            Direction::PlusZ => "+z",
            Direction::MinusZ => "-z",
        };
        f.write_str(s)
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "+x" | "x" => Direction::PlusX,
            "-x" => Direction::MinusX,
            "+y" | "y" => Direction::PlusY,
            "-y" => Direction::MinusY,
            "+z" | "z" => Direction::PlusZ,
            "-z" => Direction::MinusZ,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown direction {other:?}, expected one of +x -x +y -y +z -z"
                )))
            }
        })
    }
}

fn sites_for_dim(dim: usize) -> Result<usize> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(Error::InvalidParameter(format!(
            "state dimension {dim} is not a power of two"
        )));
    }
    Ok(dim.trailing_zeros() as usize)
}

fn check_sites(n_sites: usize) -> Result<usize> {
    if n_sites > DEFAULT_MAX_SITES {
        return Err(Error::Size {
            n_sites,
            max: DEFAULT_MAX_SITES,
        });
    }
    Ok(1 << n_sites)
}

/// A state vector of `2^N` amplitudes. Not necessarily normalized; the
/// trajectory integrators carry unnormalized states between renormalizations.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    n_sites: usize,
    amplitudes: Vec<C64>,
}

impl PureState {
    pub fn from_amplitudes(amplitudes: Vec<C64>) -> Result<Self> {
        let n_sites = sites_for_dim(amplitudes.len())?;
        Ok(Self {
            n_sites,
            amplitudes,
        })
    }

    pub fn basis(n_sites: usize, index: usize) -> Result<Self> {
        let dim = check_sites(n_sites)?;
        if index >= dim {
            return Err(Error::Dimension {
                expected: dim,
                got: index,
            });
        }
        let mut amplitudes = vec![ZERO; dim];
        amplitudes[index] = ONE;
        Ok(Self {
            n_sites,
            amplitudes,
        })
    }

    pub fn product(n_sites: usize, direction: Direction) -> Result<Self> {
        let dim = check_sites(n_sites)?;
        let spinor = direction.spinor();
        let amplitudes = (0..dim)
            .map(|basis| {
                (0..n_sites)
                    .map(|site| spinor[basis >> site & 1])
                    .product()
            })
            .collect();
        Ok(Self {
            n_sites,
            amplitudes,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let norm = self.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "cannot normalize state of norm {norm}"
            )));
        }
        let inv = 1.0 / norm;
        self.amplitudes.iter_mut().for_each(|a| *a *= inv);
        Ok(())
    }

    /// `⟨ψ|P|ψ⟩` for an unnormalized `ψ`; divide by `norm_sqr` as needed.
    pub fn expectation(&self, ps: &PauliString) -> Result<C64> {
        ps.check_sites(self.n_sites)?;
        Ok(self
            .amplitudes
            .iter()
            .enumerate()
            .filter_map(|(basis, &amp)| {
                ps.action(basis)
                    .map(|(target, factor)| self.amplitudes[target].conj() * factor * amp)
            })
            .sum())
    }

    /// `⟨ψ|σ^x_j|ψ⟩` (unnormalized).
    #[inline]
    pub fn sigma_x(&self, site: usize) -> f64 {
        let bit = 1usize << site;
        let psi = &self.amplitudes;
        let mut acc = 0.0;
        for basis in 0..psi.len() {
            if basis & bit == 0 {
                acc += (psi[basis].conj() * psi[basis | bit]).re;
            }
        }
        2.0 * acc
    }

    /// Site-averaged `⟨Σ_j σ^x_j⟩ / N` of the normalized state.
    pub fn magnetization_x(&self) -> f64 {
        let total: f64 = (0..self.n_sites).map(|j| self.sigma_x(j)).sum();
        total / (self.n_sites as f64 * self.norm_sqr())
    }

    /// `⟨ψ|σ+_j σ-_j|ψ⟩`, the weight of site `j` being up (unnormalized).
    #[inline]
    pub fn up_population(&self, site: usize) -> f64 {
        let bit = 1usize << site;
        self.amplitudes
            .iter()
            .enumerate()
            .filter(|(basis, _)| basis & bit != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    pub fn projector(&self) -> DensityMatrix {
        let dim = self.dim();
        let psi = &self.amplitudes;
        let matrix = Array2::from_shape_fn((dim, dim), |(a, b)| psi[a] * psi[b].conj());
        DensityMatrix {
            n_sites: self.n_sites,
            matrix,
        }
    }
}

/// A `2^N x 2^N` density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n_sites: usize,
    matrix: Array2<C64>,
}

impl DensityMatrix {
    pub fn from_matrix(matrix: Array2<C64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Dimension {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        let n_sites = sites_for_dim(matrix.nrows())?;
        let matrix = if matrix.is_standard_layout() {
            matrix
        } else {
            matrix.as_standard_layout().to_owned()
        };
        Ok(Self { n_sites, matrix })
    }

    pub fn product(n_sites: usize, direction: Direction) -> Result<Self> {
        Ok(PureState::product(n_sites, direction)?.projector())
    }

    pub fn maximally_mixed(n_sites: usize) -> Result<Self> {
        let dim = check_sites(n_sites)?;
        let matrix = Array2::from_diag_elem(dim, C64::from(1.0 / dim as f64));
        Ok(Self { n_sites, matrix })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut Array2<C64> {
        &mut self.matrix
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.diag().sum()
    }

    /// Largest entrywise modulus of `ρ − ρ†`.
    pub fn hermiticity_error(&self) -> f64 {
        let dim = self.dim();
        let mut worst: f64 = 0.0;
        for a in 0..dim {
            for b in a..dim {
                worst = worst.max((self.matrix[[a, b]] - self.matrix[[b, a]].conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let dim = self.dim();
        let m = faer::Mat::<C64>::from_fn(dim, dim, |a, b| {
            0.5 * (self.matrix[[a, b]] + self.matrix[[b, a]].conj())
        });
        m.self_adjoint_eigenvalues(faer::Side::Lower)
            .map(|ev| ev.into_iter().fold(f64::INFINITY, f64::min))
            .unwrap_or(f64::NAN)
    }

    /// Checks Hermiticity, unit trace and positivity to the given tolerances.
    pub fn validate(&self, hermitian_tol: f64, trace_tol: f64, positivity_tol: f64) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > hermitian_tol {
            return Err(Error::InvalidParameter(format!(
                "density matrix not Hermitian: max |ρ − ρ†| = {herm:e}"
            )));
        }
        let trace = self.trace();
        if (trace - ONE).norm() > trace_tol {
            return Err(Error::InvalidParameter(format!(
                "density matrix trace {trace} differs from 1"
            )));
        }
        let min_ev = self.min_eigenvalue();
        if min_ev < -positivity_tol {
            return Err(Error::InvalidParameter(format!(
                "density matrix has negative eigenvalue {min_ev:e}"
            )));
        }
        Ok(())
    }

    /// `Tr(ρ O)` for a sparse operator.
    pub fn expectation(&self, op: &SparseOperator) -> Result<C64> {
        if op.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: op.dim(),
            });
        }
        // Tr(ρ O) = Σ_b Σ_a O_ba ρ_ab
        Ok(op
            .entries()
            .map(|(b, a, v)| v * self.matrix[[a, b]])
            .sum())
    }

    /// `Tr(ρ P)` without building the matrix of `P`.
    pub fn expectation_pauli(&self, ps: &PauliString) -> Result<C64> {
        ps.check_sites(self.n_sites)?;
        // P|a⟩ = c(a)|t(a)⟩, so Tr(ρP) = Σ_a ⟨a|ρP|a⟩ = Σ_a c(a) ρ[a, t(a)].
        Ok((0..self.dim())
            .filter_map(|basis| {
                ps.action(basis)
                    .map(|(target, factor)| factor * self.matrix[[basis, target]])
            })
            .sum())
    }

    /// Site-averaged `Σ_j Tr(ρ σ^x_j) / N`.
    pub fn magnetization_x(&self) -> f64 {
        self.magnetization(Axis::X)
    }

    pub fn magnetization(&self, axis: Axis) -> f64 {
        let total: f64 = (0..self.n_sites)
            .map(|j| {
                self.expectation_pauli(&PauliString::single(j, axis))
                    .expect("site in range")
                    .re
            })
            .sum();
        total / self.n_sites as f64
    }

    /// Largest entrywise modulus of `self − other`.
    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        self.matrix
            .iter()
            .zip(other.matrix.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `U ρ U†` for a diagonal ±1 unitary such as the Z₂ rotation.
    pub fn conjugate_by(&self, u: &SparseOperator) -> Result<DensityMatrix> {
        if u.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: u.dim(),
            });
        }
        let dim = self.dim();
        let mut tmp = Array2::zeros((dim, dim));
        u.left_mul_add(ONE, &self.matrix, &mut tmp);
        let mut out = Array2::zeros((dim, dim));
        u.adjoint().right_mul_add(ONE, &tmp, &mut out);
        DensityMatrix::from_matrix(out)
    }
}
