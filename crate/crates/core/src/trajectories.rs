//! Stochastic unravelings of the master equation.
//!
//! Two unravelings are provided:
//!
//! - quantum jumps (Monte Carlo wave functions): no-jump evolution under
//!   `H_eff = H − (iγ/2) Σ_j σ+_j σ-_j` until the squared norm falls below a
//!   pre-drawn uniform number, then a `σ-_j` jump;
//! - homodyne detection of the emitted field, the diffusive stochastic
//!   Schrödinger equation
//!
//! ```text
//! dψ = [−iH − γ/2 Σ_j (σ+_j σ-_j − s_j σ-_j + s_j²/4)] ψ dt
//!      + √γ Σ_j (σ-_j − s_j/2) ψ dW_j,        s_j = ⟨σ^x_j⟩,
//! ```
//!
//! with independent Wiener increments of variance `dt`.
//!
//! Random numbers come from ChaCha20 with an all-zero key; trajectory seed
//! `s` selects stream `s`, so trajectories `base_seed + k` use disjoint
//! streams of one generator.

use std::io::Write;

use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{Observable, TimeSeries};
use crate::operators::{build_effective_hamiltonian, Couplings, SparseOperator, C64, I, ZERO};
use crate::state::{DensityMatrix, PureState};

/// Identity of the random number generator, for output metadata.
pub const GENERATOR: &str = "ChaCha20 (rand_chacha 0.10), zero key, stream = seed";
/// Smallest pre-renormalization norm accepted by the homodyne integrator.
pub const NORM_COLLAPSE_LIMIT: f64 = 1e-6;
/// Default spacing between recorded points of a trajectory, in units of 1/γ.
pub const DEFAULT_RECORD_SPACING: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unraveling {
    Jump,
    Homodyne,
}

impl std::fmt::Display for Unraveling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Unraveling::Jump => "jump",
            Unraveling::Homodyne => "homodyne",
        })
    }
}

/// Integrator for the deterministic part of a step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Fourth-order Taylor (equivalently RK4) for the linear drift, with the
    /// homodyne feedback `s_j` frozen over the step.
    #[default]
    Rk4,
    /// First-order Euler drift.
    Euler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySettings {
    pub dt: f64,
    pub t_max: f64,
    pub record_every: usize,
    pub scheme: Scheme,
    /// Also record `⟨σ^x_j⟩` for every site.
    pub record_sites: bool,
    /// Keep the normalized state at every recorded time.
    pub keep_states: bool,
}

impl TrajectorySettings {
    pub fn new(dt: f64, t_max: f64) -> Self {
        Self {
            dt,
            t_max,
            record_every: ((DEFAULT_RECORD_SPACING / dt).round() as usize).max(1),
            scheme: Scheme::Rk4,
            record_sites: false,
            keep_states: false,
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

    fn is_record_step(&self, step: usize, n_steps: usize) -> bool {
        step.is_multiple_of(self.record_every) || step == n_steps
    }
}

/// One stochastic trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub seed: u64,
    /// First column `mx`: site-averaged `⟨Σ_j σ^x_j⟩ / N`; then
    /// `sx_j` per site when requested, then extra observables.
    pub series: TimeSeries,
    /// Times of quantum jumps (jump unraveling only).
    pub jump_times: Vec<f64>,
    pub jump_sites: Vec<usize>,
    /// Normalized states at the recorded times, when kept.
    pub states: Option<Vec<Vec<C64>>>,
}

impl TrajectoryRecord {
    pub fn times(&self) -> &[f64] {
        &self.series.times
    }

    pub fn mx_psi(&self) -> &[f64] {
        &self.series.columns[0]
    }

    pub fn write_csv<W: Write>(&self, out: W, metadata: &[(String, String)]) -> std::io::Result<()> {
        let mut meta = metadata.to_vec();
        meta.push(("seed".into(), self.seed.to_string()));
        if !self.jump_times.is_empty() {
            meta.push(("jumps".into(), self.jump_times.len().to_string()));
        }
        self.series.write_csv(out, &meta)
    }
}

fn record_labels(n_sites: usize, settings: &TrajectorySettings, extra: &[Observable]) -> Vec<String> {
    let mut labels = vec!["mx".to_string()];
    if settings.record_sites {
        labels.extend((0..n_sites).map(|j| format!("sx_{j}")));
    }
    labels.extend(extra.iter().map(Observable::label));
    labels
}

fn trajectory_rng(seed: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::from_seed([0u8; 32]);
    rng.set_stream(seed);
    rng
}

fn check_initial(psi0: &PureState, op: &SparseOperator) -> Result<()> {
    if op.dim() != psi0.dim() {
        return Err(Error::Dimension {
            expected: psi0.dim(),
            got: op.dim(),
        });
    }
    if (psi0.norm_sqr() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter(format!(
            "initial state must be normalized, squared norm is {}",
            psi0.norm_sqr()
        )));
    }
    Ok(())
}

struct Recorder<'a> {
    settings: &'a TrajectorySettings,
    extra: &'a [Observable],
    series: TimeSeries,
    row: Vec<f64>,
    states: Option<Vec<Vec<C64>>>,
}

impl<'a> Recorder<'a> {
    fn new(n_sites: usize, settings: &'a TrajectorySettings, extra: &'a [Observable]) -> Self {
        let labels = record_labels(n_sites, settings, extra);
        let row = vec![0.0; labels.len()];
        Self {
            settings,
            extra,
            series: TimeSeries::new(labels),
            row,
            states: settings.keep_states.then(Vec::new),
        }
    }

    /// Records the normalized observables of `psi`, which may carry any norm.
    fn record(&mut self, time: f64, psi: &PureState) -> Result<()> {
        let n = psi.n_sites();
        let norm = psi.norm_sqr();
        let mut total = 0.0;
        for j in 0..n {
            let sx = psi.sigma_x(j) / norm;
            total += sx;
            if self.settings.record_sites {
                self.row[1 + j] = sx;
            }
        }
        self.row[0] = total / n as f64;
        let offset = if self.settings.record_sites { 1 + n } else { 1 };
        for (k, obs) in self.extra.iter().enumerate() {
            self.row[offset + k] = obs.evaluate_pure(psi)?;
        }
        self.series.push(time, &self.row);
        if let Some(states) = &mut self.states {
            let scale = 1.0 / norm.sqrt();
            states.push(psi.amplitudes().iter().map(|a| a * scale).collect());
        }
        Ok(())
    }
}

/// `out = Σ_{k≤4} (dt A)^k / k! psi`, with `apply(x, y)` computing `y = A x`.
fn taylor4<F>(mut apply: F, psi: &mut [C64], dt: f64, term: &mut [C64], next: &mut [C64])
where
    F: FnMut(&[C64], &mut [C64]),
{
    term.copy_from_slice(psi);
    for k in 1..=4 {
        apply(term, next);
        let factor = dt / k as f64;
        for ((t, n), p) in term.iter_mut().zip(next.iter()).zip(psi.iter_mut()) {
            *t = n * factor;
            *p += *t;
        }
    }
}

fn check_finite(psi: &[C64], time: f64) -> Result<()> {
    if psi.iter().all(|a| a.re.is_finite() && a.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { time })
    }
}

/// One quantum-jump trajectory. `h_eff` is the no-jump generator from
/// [`build_effective_hamiltonian`].
pub fn mcwf_trajectory(
    psi0: &PureState,
    h_eff: &SparseOperator,
    c: &Couplings,
    settings: &TrajectorySettings,
    seed: u64,
) -> Result<TrajectoryRecord> {
    mcwf_trajectory_with(psi0, h_eff, c, settings, &[], seed)
}

pub fn mcwf_trajectory_with(
    psi0: &PureState,
    h_eff: &SparseOperator,
    c: &Couplings,
    settings: &TrajectorySettings,
    extra: &[Observable],
    seed: u64,
) -> Result<TrajectoryRecord> {
    c.validate()?;
    settings.validate()?;
    check_initial(psi0, h_eff)?;
    let n_sites = psi0.n_sites();
    let dim = psi0.dim();
    let dt = settings.dt;
    let n_steps = settings.n_steps();
    let mut rng = trajectory_rng(seed);
    let mut recorder = Recorder::new(n_sites, settings, extra);

    let mut psi = psi0.clone();
    let mut term = vec![ZERO; dim];
    let mut next = vec![ZERO; dim];
    let mut threshold: f64 = rng.random();
    let mut jump_times = Vec::new();
    let mut jump_sites = Vec::new();
    let mut weights = vec![0.0; n_sites];

    recorder.record(0.0, &psi)?;
    for step in 1..=n_steps {
        let time = step as f64 * dt;
        let amps = psi.amplitudes_mut();
        match settings.scheme {
            Scheme::Rk4 => taylor4(
                |x, y| {
                    h_eff.apply(x, y);
                    y.iter_mut().for_each(|v| *v *= -I);
                },
                amps,
                dt,
                &mut term,
                &mut next,
            ),
            Scheme::Euler => {
                h_eff.apply(amps, &mut next);
                for (p, n) in amps.iter_mut().zip(&next) {
                    *p += -I * dt * n;
                }
            }
        }
        let norm = psi.norm_sqr();
        if !norm.is_finite() {
            return Err(Error::Divergence { time });
        }
        if norm < threshold {
            for (j, w) in weights.iter_mut().enumerate() {
                *w = c.gamma * psi.up_population(j);
            }
            let total: f64 = weights.iter().sum();
            if !(total > 0.0) {
                return Err(Error::DarkJump { time });
            }
            let mut pick = rng.random::<f64>() * total;
            let mut site = n_sites - 1;
            for (j, w) in weights.iter().enumerate() {
                if pick < *w {
                    site = j;
                    break;
                }
                pick -= w;
            }
            while weights[site] == 0.0 {
                site -= 1;
            }
            let bit = 1usize << site;
            let amps = psi.amplitudes_mut();
            for basis in 0..dim {
                if basis & bit == 0 {
                    amps[basis] = amps[basis | bit];
                    amps[basis | bit] = ZERO;
                }
            }
            psi.normalize()?;
            threshold = rng.random();
            jump_times.push(time);
            jump_sites.push(site);
        }
        if settings.is_record_step(step, n_steps) {
            recorder.record(time, &psi)?;
        }
    }

    Ok(TrajectoryRecord {
        seed,
        series: recorder.series,
        jump_times,
        jump_sites,
        states: recorder.states,
    })
}

/// `y = D x` for the homodyne drift with feedback `s` frozen.
fn homodyne_drift(
    h: &SparseOperator,
    gamma: f64,
    s: &[f64],
    x: &[C64],
    y: &mut [C64],
    popcount: &[f64],
) {
    h.apply(x, y);
    let shift: f64 = s.iter().map(|v| v * v).sum::<f64>() * 0.25;
    for (basis, out) in y.iter_mut().enumerate() {
        *out = -I * *out - x[basis] * (0.5 * gamma * (popcount[basis] + shift));
    }
    for (j, &sj) in s.iter().enumerate() {
        if sj == 0.0 {
            continue;
        }
        let bit = 1usize << j;
        let coef = 0.5 * gamma * sj;
        for basis in 0..x.len() {
            if basis & bit != 0 {
                y[basis ^ bit] += x[basis] * coef;
            }
        }
    }
}

/// One homodyne trajectory of the diffusive unraveling.
pub fn homodyne_trajectory(
    psi0: &PureState,
    h: &SparseOperator,
    c: &Couplings,
    settings: &TrajectorySettings,
    seed: u64,
) -> Result<TrajectoryRecord> {
    homodyne_trajectory_with(psi0, h, c, settings, &[], seed)
}

pub fn homodyne_trajectory_with(
    psi0: &PureState,
    h: &SparseOperator,
    c: &Couplings,
    settings: &TrajectorySettings,
    extra: &[Observable],
    seed: u64,
) -> Result<TrajectoryRecord> {
    c.validate()?;
    settings.validate()?;
    check_initial(psi0, h)?;
    let n_sites = psi0.n_sites();
    let dim = psi0.dim();
    let dt = settings.dt;
    let sqrt_dt = dt.sqrt();
    let sqrt_gamma = c.gamma.sqrt();
    let n_steps = settings.n_steps();
    let mut rng = trajectory_rng(seed);
    let mut recorder = Recorder::new(n_sites, settings, extra);
    let popcount: Vec<f64> = (0..dim).map(|b| b.count_ones() as f64).collect();

    let mut psi = psi0.clone();
    let mut start = vec![ZERO; dim];
    let mut term = vec![ZERO; dim];
    let mut next = vec![ZERO; dim];
    let mut s = vec![0.0; n_sites];
    let mut dw = vec![0.0; n_sites];

    recorder.record(0.0, &psi)?;
    for step in 1..=n_steps {
        let time = step as f64 * dt;
        for (j, sj) in s.iter_mut().enumerate() {
            *sj = psi.sigma_x(j);
        }
        for w in dw.iter_mut() {
            *w = rng.sample::<f64, _>(StandardNormal) * sqrt_dt;
        }
        let amps = psi.amplitudes_mut();
        start.copy_from_slice(amps);
        let gamma = c.gamma;
        match settings.scheme {
            Scheme::Rk4 => taylor4(
                |x, y| homodyne_drift(h, gamma, &s, x, y, &popcount),
                amps,
                dt,
                &mut term,
                &mut next,
            ),
            Scheme::Euler => {
                homodyne_drift(h, gamma, &s, &start, &mut next, &popcount);
                for (p, n) in amps.iter_mut().zip(&next) {
                    *p += n * dt;
                }
            }
        }
        if gamma > 0.0 {
            let center: f64 = s.iter().zip(&dw).map(|(sj, w)| sj * w).sum::<f64>() * 0.5;
            for (p, x) in amps.iter_mut().zip(&start) {
                *p -= x * (sqrt_gamma * center);
            }
            for (j, &w) in dw.iter().enumerate() {
                let bit = 1usize << j;
                let coef = sqrt_gamma * w;
                for basis in 0..dim {
                    if basis & bit != 0 {
                        amps[basis ^ bit] += start[basis] * coef;
                    }
                }
            }
        }
        check_finite(psi.amplitudes(), time)?;
        let norm = psi.norm();
        if norm < NORM_COLLAPSE_LIMIT {
            return Err(Error::NormCollapse { time, norm });
        }
        let scale = 1.0 / norm;
        psi.amplitudes_mut().iter_mut().for_each(|a| *a *= scale);
        if settings.is_record_step(step, n_steps) {
            recorder.record(time, &psi)?;
        }
    }

    Ok(TrajectoryRecord {
        seed,
        series: recorder.series,
        jump_times: Vec::new(),
        jump_sites: Vec::new(),
        states: recorder.states,
    })
}

/// Everything needed to launch trajectories of one model.
#[derive(Debug, Clone)]
pub struct TrajectoryProblem {
    pub psi0: PureState,
    pub h: SparseOperator,
    pub couplings: Couplings,
    pub unraveling: Unraveling,
    pub settings: TrajectorySettings,
    pub extra: Vec<Observable>,
}

impl TrajectoryProblem {
    /// Runs trajectory `seed`. `h_eff` must be supplied for the jump
    /// unraveling.
    fn run_one(&self, h_eff: Option<&SparseOperator>, seed: u64) -> Result<TrajectoryRecord> {
        match self.unraveling {
            Unraveling::Jump => mcwf_trajectory_with(
                &self.psi0,
                h_eff.expect("effective Hamiltonian"),
                &self.couplings,
                &self.settings,
                &self.extra,
                seed,
            ),
            Unraveling::Homodyne => homodyne_trajectory_with(
                &self.psi0,
                &self.h,
                &self.couplings,
                &self.settings,
                &self.extra,
                seed,
            ),
        }
    }

    pub fn run_trajectory(&self, seed: u64) -> Result<TrajectoryRecord> {
        let h_eff = self.effective_hamiltonian()?;
        self.run_one(h_eff.as_ref(), seed)
    }

    fn effective_hamiltonian(&self) -> Result<Option<SparseOperator>> {
        match self.unraveling {
            Unraveling::Jump => Ok(Some(build_effective_hamiltonian(
                &self.h,
                &self.couplings,
                self.psi0.n_sites(),
            )?)),
            Unraveling::Homodyne => Ok(None),
        }
    }
}

/// Ensemble averages of a set of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub n_traj: usize,
    pub base_seed: u64,
    pub times: Vec<f64>,
    pub labels: Vec<String>,
    pub mean: Vec<Vec<f64>>,
    /// Standard error of the mean; absent for a single trajectory.
    pub std_err: Option<Vec<Vec<f64>>>,
    /// `(1/N_T) Σ_k |ψ_k⟩⟨ψ_k|` at each recorded time, when states were kept.
    pub rho: Option<Vec<DensityMatrix>>,
    pub records: Vec<TrajectoryRecord>,
}

impl EnsembleResult {
    pub fn column(&self, label: &str) -> Option<(&[f64], Option<&[f64]>)> {
        let k = self.labels.iter().position(|l| l == label)?;
        Some((&self.mean[k], self.std_err.as_ref().map(|se| se[k].as_slice())))
    }

    /// Summary CSV: `t`, then `<label>_mean` and `<label>_se` per column.
    pub fn write_csv<W: Write>(&self, mut out: W, metadata: &[(String, String)]) -> std::io::Result<()> {
        for (key, value) in metadata {
            writeln!(out, "# {key}: {value}")?;
        }
        writeln!(out, "# n_traj: {}", self.n_traj)?;
        writeln!(out, "# base_seed: {}", self.base_seed)?;
        write!(out, "t")?;
        for label in &self.labels {
            write!(out, ",{label}_mean,{label}_se")?;
        }
        writeln!(out)?;
        for (k, t) in self.times.iter().enumerate() {
            write!(out, "{t}")?;
            for (c, col) in self.mean.iter().enumerate() {
                write!(out, ",{:.15e}", col[k])?;
                match &self.std_err {
                    Some(se) => write!(out, ",{:.15e}", se[c][k])?,
                    None => write!(out, ",")?,
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Runs trajectories with seeds `base_seed + k`, `k < n_traj`, and averages
/// them. Results do not depend on whether the `parallel` feature is enabled.
pub fn run_ensemble(problem: &TrajectoryProblem, n_traj: usize, base_seed: u64) -> Result<EnsembleResult> {
    if n_traj == 0 {
        return Err(Error::InvalidParameter("n_traj must be at least 1".into()));
    }
    let h_eff = problem.effective_hamiltonian()?;
    let run = |k: usize| {
        problem
            .run_one(h_eff.as_ref(), base_seed.wrapping_add(k as u64))
            .map_err(|e| Error::Trajectory {
                index: k,
                source: Box::new(e),
            })
    };

    #[cfg(feature = "parallel")]
    let results: Vec<Result<TrajectoryRecord>> = {
        use rayon::prelude::*;
        (0..n_traj).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<TrajectoryRecord>> = (0..n_traj).map(run).collect();

    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(aggregate(records, base_seed))
}

/// Means, standard errors and the reconstructed density matrix of records
/// sharing one time grid, reduced in record order.
pub fn aggregate(records: Vec<TrajectoryRecord>, base_seed: u64) -> EnsembleResult {
    let n = records.len();
    let first = &records[0].series;
    let times = first.times.clone();
    let labels = first.labels.clone();
    let n_cols = labels.len();
    let n_times = times.len();

    let mut mean = vec![vec![0.0; n_times]; n_cols];
    for rec in &records {
        for (m, col) in mean.iter_mut().zip(&rec.series.columns) {
            for (a, v) in m.iter_mut().zip(col) {
                *a += v;
            }
        }
    }
    mean.iter_mut().flatten().for_each(|v| *v /= n as f64);

    let std_err = (n > 1).then(|| {
        let mut var = vec![vec![0.0; n_times]; n_cols];
        for rec in &records {
            for ((s, m), col) in var.iter_mut().zip(&mean).zip(&rec.series.columns) {
                for ((a, mu), v) in s.iter_mut().zip(m).zip(col) {
                    *a += (v - mu) * (v - mu);
                }
            }
        }
        var.iter_mut()
            .flatten()
            .for_each(|v| *v = (*v / ((n - 1) as f64 * n as f64)).sqrt());
        var
    });

    let rho = records.iter().all(|r| r.states.is_some()).then(|| {
        let dim = records[0].states.as_ref().unwrap()[0].len();
        let n_sites = dim.trailing_zeros() as usize;
        (0..n_times)
            .map(|t| {
                let mut acc = Array2::<C64>::zeros((dim, dim));
                for rec in &records {
                    let psi = &rec.states.as_ref().unwrap()[t];
                    for a in 0..dim {
                        for b in 0..dim {
                            acc[[a, b]] += psi[a] * psi[b].conj();
                        }
                    }
                }
                acc.mapv_inplace(|v| v / n as f64);
                DensityMatrix::from_matrix(acc).expect("power-of-two dimension")
            })
            .inspect(|rho| debug_assert_eq!(rho.n_sites(), n_sites))
            .collect()
    });

    EnsembleResult {
        n_traj: n,
        base_seed,
        times,
        labels,
        mean,
        std_err,
        rho,
        records,
    }
}

/// Run description written alongside trajectory outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetadata {
    pub unraveling: Unraveling,
    pub generator: String,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub dt: f64,
    pub t_max: f64,
    pub record_every: usize,
    pub scheme: Scheme,
    pub couplings: Couplings,
}

impl TrajectoryMetadata {
    pub fn new(problem: &TrajectoryProblem, n_traj: usize, base_seed: u64) -> Self {
        Self {
            unraveling: problem.unraveling,
            generator: GENERATOR.into(),
            base_seed,
            seeds: (0..n_traj as u64).map(|k| base_seed.wrapping_add(k)).collect(),
            dt: problem.settings.dt,
            t_max: problem.settings.t_max,
            record_every: problem.settings.record_every,
            scheme: problem.settings.scheme,
            couplings: problem.couplings,
        }
    }
}
