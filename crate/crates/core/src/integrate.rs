//! Deterministic Lindblad evolution of the density matrix by classic RK4.
//!
//! The generator is applied in operator form on `2^N x 2^N` matrices:
//!
//! ```text
//! L[ρ] = −i(Hρ − ρH) + γ Σ_j (σ-_j ρ σ+_j − ½{σ+_j σ-_j, ρ})
//! ```
//!
//! so the `4^N` superoperator is never built.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{Axis, Couplings, PauliString, SparseOperator, C64, I, ZERO};
use crate::state::{DensityMatrix, Direction, PureState};

/// Largest lattice evolved with the density-matrix integrator.
pub const MAX_RK4_SITES: usize = 10;
/// Trace drift that aborts an evolution.
pub const TRACE_DRIFT_LIMIT: f64 = 1e-6;
/// Default integration step in units of 1/γ.
pub const DEFAULT_DT: f64 = 1e-3;
/// Default cap on the number of recorded rows.
pub const DEFAULT_MAX_ROWS: usize = 10_000;

/// Builds a pure product state with every spin along `direction`.
pub fn product_state(n_sites: usize, direction: Direction) -> Result<DensityMatrix> {
    DensityMatrix::product(n_sites, direction)
}

pub fn product_pure_state(n_sites: usize, direction: Direction) -> Result<PureState> {
    PureState::product(n_sites, direction)
}

/// `Tr(ρ O)`.
pub fn expectation(rho: &DensityMatrix, op: &SparseOperator) -> Result<C64> {
    rho.expectation(op)
}

pub fn expectation_pauli(rho: &DensityMatrix, ps: &PauliString) -> Result<C64> {
    rho.expectation_pauli(ps)
}

/// A quantity recorded along an evolution.
#[derive(Debug, Clone, PartialEq)]
pub enum Observable {
    /// Site-averaged `Σ_j ⟨σ^axis_j⟩ / N`.
    Magnetization(Axis),
    /// `⟨σ^axis_site⟩`.
    Site(usize, Axis),
    /// Real part of a Pauli-string expectation, with a column label.
    Pauli(String, PauliString),
    /// `Tr ρ`.
    Trace,
}

impl Observable {
    pub fn label(&self) -> String {
        let axis_name = |a: &Axis| match a {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
            Axis::Plus => "plus",
            Axis::Minus => "minus",
        };
        match self {
            Observable::Magnetization(a) => format!("m{}", axis_name(a)),
            Observable::Site(j, a) => format!("s{}_{}", axis_name(a), j),
            Observable::Pauli(label, _) => label.clone(),
            Observable::Trace => "trace".into(),
        }
    }

    pub fn evaluate(&self, rho: &DensityMatrix) -> Result<f64> {
        Ok(match self {
            Observable::Magnetization(a) => rho.magnetization(*a),
            Observable::Site(j, a) => rho.expectation_pauli(&PauliString::single(*j, *a))?.re,
            Observable::Pauli(_, ps) => rho.expectation_pauli(ps)?.re,
            Observable::Trace => rho.trace().re,
        })
    }

    pub fn evaluate_pure(&self, psi: &PureState) -> Result<f64> {
        let norm = psi.norm_sqr();
        Ok(match self {
            Observable::Magnetization(Axis::X) => psi.magnetization_x(),
            Observable::Magnetization(a) => {
                let total: f64 = (0..psi.n_sites())
                    .map(|j| psi.expectation(&PauliString::single(j, *a)).map(|v| v.re))
                    .sum::<Result<f64>>()?;
                total / (psi.n_sites() as f64 * norm)
            }
            Observable::Site(j, a) => psi.expectation(&PauliString::single(*j, *a))?.re / norm,
            Observable::Pauli(_, ps) => psi.expectation(ps)?.re / norm,
            Observable::Trace => 1.0,
        })
    }
}

/// Columns of real values sampled at strictly increasing times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub labels: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn new(labels: Vec<String>) -> Self {
        let columns = vec![Vec::new(); labels.len()];
        Self {
            times: Vec::new(),
            labels,
            columns,
        }
    }

    pub fn push(&mut self, time: f64, values: &[f64]) {
        assert_eq!(values.len(), self.labels.len());
        if let Some(&last) = self.times.last() {
            assert!(time > last, "times must increase strictly");
        }
        self.times.push(time);
        for (col, &v) in self.columns.iter_mut().zip(values) {
            col.push(v);
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, label: &str) -> Option<&[f64]> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|k| self.columns[k].as_slice())
    }

    /// CSV with a header of labels; the first column is `t` in units of 1/γ.
    /// Each `(key, value)` in `metadata` becomes a leading `# key: value` line.
    pub fn write_csv<W: Write>(&self, mut out: W, metadata: &[(String, String)]) -> std::io::Result<()> {
        for (key, value) in metadata {
            writeln!(out, "# {key}: {value}")?;
        }
        write!(out, "t")?;
        for label in &self.labels {
            write!(out, ",{label}")?;
        }
        writeln!(out)?;
        for (k, t) in self.times.iter().enumerate() {
            write!(out, "{t}")?;
            for col in &self.columns {
                write!(out, ",{:.15e}", col[k])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveSettings {
    pub dt: f64,
    pub t_max: f64,
    /// Record every this many steps.
    pub record_every: usize,
}

impl EvolveSettings {
    /// Settings with `record_every` chosen so at most [`DEFAULT_MAX_ROWS`]
    /// rows are produced.
    pub fn new(dt: f64, t_max: f64) -> Self {
        Self {
            dt,
            t_max,
            record_every: default_record_every(dt, t_max),
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "t_max must be positive, got {}",
                self.t_max
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn default_record_every(dt: f64, t_max: f64) -> usize {
    let steps = (t_max / dt).round().max(1.0) as usize;
    steps.div_ceil(DEFAULT_MAX_ROWS - 1).max(1)
}

/// `out = L[ρ]` in operator form.
pub fn lindblad_rhs(
    h: &SparseOperator,
    gamma: f64,
    n_sites: usize,
    rho: &Array2<C64>,
    out: &mut Array2<C64>,
) {
    let dim = rho.nrows();
    out.fill(ZERO);
    h.left_mul_add(-I, rho, out);
    h.right_mul_add(I, rho, out);
    if gamma == 0.0 {
        return;
    }
    let src = rho.as_slice().expect("standard layout");
    let dst = out.as_slice_mut().expect("standard layout");
    let half = 0.5 * gamma;
    let popcount: Vec<f64> = (0..dim).map(|a| a.count_ones() as f64).collect();
    for a in 0..dim {
        for b in 0..dim {
            let v = src[a * dim + b];
            dst[a * dim + b] -= v * (half * (popcount[a] + popcount[b]));
            let mut common = a & b;
            while common != 0 {
                let bit = common & common.wrapping_neg();
                dst[(a ^ bit) * dim + (b ^ bit)] += v * gamma;
                common ^= bit;
            }
        }
    }
    debug_assert!(n_sites == dim.trailing_zeros() as usize);
}

/// Classic RK4 stepper for `dρ/dt = L[ρ]`.
pub struct LindbladRk4<'a> {
    h: &'a SparseOperator,
    gamma: f64,
    n_sites: usize,
    k: Array2<C64>,
    acc: Array2<C64>,
    stage: Array2<C64>,
}

impl<'a> LindbladRk4<'a> {
    pub fn new(h: &'a SparseOperator, c: &Couplings, n_sites: usize) -> Result<Self> {
        c.validate()?;
        if n_sites > MAX_RK4_SITES {
            return Err(Error::Size {
                n_sites,
                max: MAX_RK4_SITES,
            });
        }
        let dim = 1usize << n_sites;
        if h.dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: h.dim(),
            });
        }
        Ok(Self {
            h,
            gamma: c.gamma,
            n_sites,
            k: Array2::zeros((dim, dim)),
            acc: Array2::zeros((dim, dim)),
            stage: Array2::zeros((dim, dim)),
        })
    }

    /// Advances `rho` by one step of size `dt`.
    pub fn step(&mut self, rho: &mut Array2<C64>, dt: f64) {
        let (h, gamma, n) = (self.h, self.gamma, self.n_sites);
        let half = C64::from(0.5 * dt);
        let sixth = C64::from(dt / 6.0);
        let third = C64::from(dt / 3.0);

        lindblad_rhs(h, gamma, n, rho, &mut self.k);
        self.acc.zip_mut_with(&self.k, |a, &k| *a = sixth * k);
        ndarray::Zip::from(&mut self.stage)
            .and(&*rho)
            .and(&self.k)
            .for_each(|s, &r, &k| *s = r + half * k);

        lindblad_rhs(h, gamma, n, &self.stage, &mut self.k);
        self.acc.zip_mut_with(&self.k, |a, &k| *a += third * k);
        ndarray::Zip::from(&mut self.stage)
            .and(&*rho)
            .and(&self.k)
            .for_each(|s, &r, &k| *s = r + half * k);

        lindblad_rhs(h, gamma, n, &self.stage, &mut self.k);
        self.acc.zip_mut_with(&self.k, |a, &k| *a += third * k);
        let full = C64::from(dt);
        ndarray::Zip::from(&mut self.stage)
            .and(&*rho)
            .and(&self.k)
            .for_each(|s, &r, &k| *s = r + full * k);

        lindblad_rhs(h, gamma, n, &self.stage, &mut self.k);
        ndarray::Zip::from(&mut *rho)
            .and(&self.acc)
            .and(&self.k)
            .for_each(|r, &a, &k| *r += a + sixth * k);
    }
}

/// Evolves `rho0` and calls `visit(t, ρ(t))` at every record point.
pub fn rk4_evolve_with<F>(
    rho0: &DensityMatrix,
    h: &SparseOperator,
    c: &Couplings,
    settings: &EvolveSettings,
    mut visit: F,
) -> Result<DensityMatrix>
where
    F: FnMut(f64, &DensityMatrix) -> Result<()>,
{
    settings.validate()?;
    let n_sites = rho0.n_sites();
    let mut stepper = LindbladRk4::new(h, c, n_sites)?;
    let initial_trace = rho0.trace();
    let mut rho = rho0.clone();
    let n_steps = settings.n_steps();
    for step in 0..=n_steps {
        if step > 0 {
            stepper.step(rho.matrix_mut(), settings.dt);
        }
        if step % settings.record_every == 0 || step == n_steps {
            let time = step as f64 * settings.dt;
            let trace = rho.trace();
            if !(trace.re.is_finite() && trace.im.is_finite())
                || rho.matrix().iter().any(|v| !v.re.is_finite() || !v.im.is_finite())
            {
                return Err(Error::Divergence { time });
            }
            let drift = (trace - initial_trace).norm();
            if drift > TRACE_DRIFT_LIMIT {
                return Err(Error::StepSize { time, drift });
            }
            visit(time, &rho)?;
        }
    }
    Ok(rho)
}

/// Evolves `rho0` under the master equation and records `Tr(ρ O)` for every
/// observable.
pub fn rk4_evolve(
    rho0: &DensityMatrix,
    h: &SparseOperator,
    c: &Couplings,
    settings: &EvolveSettings,
    record: &[Observable],
) -> Result<TimeSeries> {
    let mut series = TimeSeries::new(record.iter().map(Observable::label).collect());
    let mut row = vec![0.0; record.len()];
    rk4_evolve_with(rho0, h, c, settings, |t, rho| {
        for (slot, obs) in row.iter_mut().zip(record) {
            *slot = obs.evaluate(rho)?;
        }
        series.push(t, &row);
        Ok(())
    })?;
    Ok(series)
}
