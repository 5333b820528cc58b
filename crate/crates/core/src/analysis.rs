//! Decay-rate fits, magnetization histograms and the bimodality coefficient.

use std::io::Write;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{rk4_evolve, EvolveSettings, Observable};
use crate::lattice::LatticeGeometry;
use crate::liouville::{build_liouvillian, full_spectrum};
use crate::operators::{build_hamiltonian, Axis, Couplings};
use crate::state::{DensityMatrix, Direction, PureState};
use crate::trajectories::{run_ensemble, TrajectoryProblem, TrajectoryRecord, TrajectorySettings, Unraveling};

/// Fewest points accepted in a fit window.
pub const MIN_FIT_POINTS: usize = 10;
/// Deviations from the steady value below this are treated as zero.
pub const FIT_FLOOR: f64 = 1e-12;
/// Default start of the fit window, in units of 1/γ.
pub const DEFAULT_FIT_START: f64 = 5.0;
/// Default histogram resolution.
pub const DEFAULT_BINS: usize = 50;

/// Result of fitting `v(t) − v_ss = A e^{−λ t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub lambda_fit: f64,
    pub amplitude: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// RMS deviation of the log-linear fit.
    pub residual: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits the tail `t ≥ t_start` of `values` with a single exponential by least
/// squares on `ln|v − steady_value|`.
pub fn fit_decay(times: &[f64], values: &[f64], t_start: f64, steady_value: f64) -> Result<DecayFit> {
    fit_decay_window(times, values, t_start, f64::INFINITY, steady_value)
}

pub fn fit_decay_window(
    times: &[f64],
    values: &[f64],
    t_start: f64,
    t_end: f64,
    steady_value: f64,
) -> Result<DecayFit> {
    if times.len() != values.len() {
        return Err(Error::Dimension {
            expected: times.len(),
            got: values.len(),
        });
    }
    let window: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= t_start && **t <= t_end)
        .map(|(t, v)| (*t, v - steady_value))
        .collect();
    let usable: Vec<(f64, f64)> = window.iter().copied().filter(|(_, d)| d.abs() > FIT_FLOOR).collect();
    let span_end = window.last().map_or(t_start, |p| p.0);
    if usable.len() < MIN_FIT_POINTS {
        return Err(Error::FitWindow {
            t_start,
            t_end: span_end,
            points: usable.len(),
            required: MIN_FIT_POINTS,
        });
    }
    let sign = usable[0].1.signum();
    if let Some(&(time, _)) = usable.iter().find(|(_, d)| d.signum() != sign) {
        return Err(Error::Oscillation { time });
    }

    let n = usable.len() as f64;
    let mean_t = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = usable.iter().map(|p| p.1.abs().ln()).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(t, d) in &usable {
        let (x, y) = (t - mean_t, d.abs().ln() - mean_y);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_t;
    let ss_res: f64 = usable
        .iter()
        .map(|&(t, d)| {
            let r = d.abs().ln() - (intercept + slope * t);
            r * r
        })
        .sum();
    let lambda_fit = -slope;
    if !(lambda_fit.is_finite() && lambda_fit > 0.0) {
        return Err(Error::NoDecay { rate: lambda_fit });
    }
    Ok(DecayFit {
        lambda_fit,
        amplitude: sign * intercept.exp(),
        t_start: usable[0].0,
        t_end: usable[usable.len() - 1].0,
        residual: (ss_res / n).sqrt(),
        r_squared: if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 },
        points: usable.len(),
    })
}

/// How the decay rate of each sweep point is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum GapMethod {
    /// Fit of the density-matrix evolution of `M^x`.
    Rk4 { dt: f64, t_max: f64, t_start: f64 },
    /// Fit of the quantum-jump ensemble mean of `M^x`.
    Jump {
        dt: f64,
        t_max: f64,
        t_start: f64,
        n_traj: usize,
        base_seed: u64,
    },
    /// Exact diagonalization only.
    Spectrum,
}

/// One point of a gap sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub jy: f64,
    /// Fitted rate, or the exact gap for [`GapMethod::Spectrum`].
    pub lambda: f64,
    pub fit: Option<DecayFit>,
    /// Exact gap, when the spectrum was computed.
    pub lambda_exact: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepError {
    pub jy: f64,
    pub source: Error,
}

impl std::fmt::Display for SweepError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "jy = {}: {}", self.jy, self.source)
    }
}

impl std::error::Error for SweepError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

/// Relaxation rate of `M^x` from the all-`+x` state at one coupling set.
pub fn gap_point(geom: &LatticeGeometry, c: &Couplings, method: &GapMethod, with_exact: bool) -> Result<GapPoint> {
    let n = geom.n_sites();
    let h = build_hamiltonian(geom, c)?;
    let exact = if with_exact || matches!(method, GapMethod::Spectrum) {
        let l = build_liouvillian(&h, c, n)?;
        Some(full_spectrum(&l)?.gap)
    } else {
        None
    };
    let fit = match *method {
        GapMethod::Spectrum => None,
        GapMethod::Rk4 { dt, t_max, t_start } => {
            let rho0 = DensityMatrix::product(n, Direction::PlusX)?;
            let settings = EvolveSettings::new(dt, t_max);
            let series = rk4_evolve(&rho0, &h, c, &settings, &[Observable::Magnetization(Axis::X)])?;
            Some(fit_decay(&series.times, &series.columns[0], t_start, 0.0)?)
        }
        GapMethod::Jump {
            dt,
            t_max,
            t_start,
            n_traj,
            base_seed,
        } => {
            let problem = TrajectoryProblem {
                psi0: PureState::product(n, Direction::PlusX)?,
                h,
                couplings: *c,
                unraveling: Unraveling::Jump,
                settings: TrajectorySettings::new(dt, t_max),
                extra: Vec::new(),
            };
            let ens = run_ensemble(&problem, n_traj, base_seed)?;
            let (mean, se) = ens.column("mx").expect("mx column");
            Some(fit_decay_noisy(&ens.times, mean, se, t_start)?)
        }
    };
    let lambda = fit.map_or_else(|| exact.expect("exact gap"), |f| f.lambda_fit);
    Ok(GapPoint {
        jy: c.jy,
        lambda,
        fit,
        lambda_exact: exact,
    })
}

/// Fits a noisy ensemble mean, ending the window where the signal falls to
/// three standard errors.
pub fn fit_decay_noisy(times: &[f64], mean: &[f64], se: Option<&[f64]>, t_start: f64) -> Result<DecayFit> {
    let t_end = match se {
        Some(se) => times
            .iter()
            .zip(mean.iter().zip(se))
            .filter(|(t, _)| **t >= t_start)
            .find(|(_, (m, s))| m.abs() <= 3.0 * **s)
            .map_or(f64::INFINITY, |(t, _)| *t),
        None => f64::INFINITY,
    };
    fit_decay_window(times, mean, t_start, t_end, 0.0)
}

/// Decay fit of the ensemble mean of `M^x_Ψ` with a bootstrap standard
/// error of the rate from `n_resample` resamplings of the trajectories.
pub fn fit_ensemble_decay(
    records: &[TrajectoryRecord],
    t_start: f64,
    n_resample: usize,
    seed: u64,
) -> Result<(DecayFit, f64)> {
    let columns: Vec<&[f64]> = records.iter().map(|r| r.mx_psi()).collect();
    let times = records
        .first()
        .ok_or_else(|| Error::InvalidParameter("no trajectories to fit".into()))?
        .times();
    let fit_indices = |indices: &mut dyn Iterator<Item = usize>| {
        let picked: Vec<&[f64]> = indices.map(|k| columns[k]).collect();
        let (mean, se) = mean_and_se(&picked);
        fit_decay_noisy(times, &mean, Some(&se), t_start)
    };
    let fit = fit_indices(&mut (0..records.len()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = records.len();
    let rates: Vec<f64> = (0..n_resample)
        .filter_map(|_| {
            let mut draws = (0..n).map(|_| rng.random_range(0..n)).collect::<Vec<_>>().into_iter();
            fit_indices(&mut draws).ok().map(|f| f.lambda_fit)
        })
        .collect();
    if rates.len() < 2 || rates.len() * 2 < n_resample {
        return Err(Error::InvalidParameter(format!(
            "only {} of {n_resample} bootstrap fits succeeded",
            rates.len()
        )));
    }
    let mu = rates.iter().sum::<f64>() / rates.len() as f64;
    let var = rates.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / (rates.len() - 1) as f64;
    Ok((fit, var.sqrt()))
}

fn mean_and_se(columns: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let n = columns.len() as f64;
    let len = columns[0].len();
    let mean: Vec<f64> = (0..len).map(|k| columns.iter().map(|c| c[k]).sum::<f64>() / n).collect();
    let se = (0..len)
        .map(|k| {
            if columns.len() < 2 {
                return 0.0;
            }
            let ss: f64 = columns.iter().map(|c| (c[k] - mean[k]).powi(2)).sum();
            (ss / ((n - 1.0) * n)).sqrt()
        })
        .collect();
    (mean, se)
}

/// Relaxation rate for every `jy`, other couplings fixed.
pub fn gap_sweep(
    geom: &LatticeGeometry,
    base: &Couplings,
    jy_values: &[f64],
    method: &GapMethod,
    with_exact: bool,
) -> std::result::Result<Vec<GapPoint>, SweepError> {
    jy_values
        .iter()
        .map(|&jy| {
            gap_point(geom, &base.with_jy(jy), method, with_exact).map_err(|source| SweepError { jy, source })
        })
        .collect()
}

pub fn write_gap_csv<W: Write>(points: &[GapPoint], mut out: W, metadata: &[(String, String)]) -> std::io::Result<()> {
    for (key, value) in metadata {
        writeln!(out, "# {key}: {value}")?;
    }
    writeln!(out, "jy,lambda,amplitude,residual,r_squared,lambda_exact")?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.12e}"));
    for p in points {
        writeln!(
            out,
            "{},{:.12e},{},{},{},{}",
            p.jy,
            p.lambda,
            opt(p.fit.map(|f| f.amplitude)),
            opt(p.fit.map(|f| f.residual)),
            opt(p.fit.map(|f| f.r_squared)),
            opt(p.lambda_exact),
        )?;
    }
    Ok(())
}

/// Index of the sweep point with the smallest rate, if it lies strictly
/// inside the sweep.
pub fn interior_minimum(points: &[GapPoint]) -> Option<usize> {
    let k = points
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.lambda.total_cmp(&b.1.lambda))?
        .0;
    (k > 0 && k + 1 < points.len()).then_some(k)
}

/// Default discard time: three relaxation times when a rate estimate exists,
/// otherwise a tenth of the total time.
pub fn default_t_s(lambda_est: Option<f64>, t_total: f64) -> f64 {
    match lambda_est {
        Some(l) if l > 0.0 && l.is_finite() => (3.0 / l).min(t_total),
        _ => 0.1 * t_total,
    }
}

/// Pooled distribution of `M^x_Ψ` after `t_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagHistogram {
    pub bin_edges: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub sample_count: usize,
    pub t_s: f64,
    pub sources: Vec<u64>,
    /// Raw-sample moments `⟨M²⟩` and `⟨M⁴⟩`.
    pub moment2: f64,
    pub moment4: f64,
}

impl MagHistogram {
    pub fn n_bins(&self) -> usize {
        self.probabilities.len()
    }

    pub fn bin_width(&self) -> f64 {
        2.0 / self.n_bins() as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W, metadata: &[(String, String)]) -> std::io::Result<()> {
        for (key, value) in metadata {
            writeln!(out, "# {key}: {value}")?;
        }
        writeln!(out, "# t_s: {}", self.t_s)?;
        writeln!(out, "# sample_count: {}", self.sample_count)?;
        writeln!(out, "bin_center,probability")?;
        for (c, p) in self.centers().iter().zip(&self.probabilities) {
            writeln!(out, "{c},{p:.15e}")?;
        }
        Ok(())
    }
}

/// Histogram of raw samples over `[−1, 1]`.
pub fn histogram_from_samples(samples: &[f64], n_bins: usize, t_s: f64, sources: Vec<u64>) -> Result<MagHistogram> {
    if n_bins < 2 {
        return Err(Error::InvalidParameter(format!("n_bins must be at least 2, got {n_bins}")));
    }
    if samples.is_empty() {
        return Err(Error::EmptyWindow { t_s });
    }
    let mut counts = vec![0usize; n_bins];
    for &x in samples {
        let x = x.clamp(-1.0, 1.0);
        let k = (((x + 1.0) * 0.5 * n_bins as f64) as usize).min(n_bins - 1);
        counts[k] += 1;
    }
    let (m2, m4) = even_moments(samples.iter().map(|x| x.clamp(-1.0, 1.0)));
    let total = samples.len() as f64;
    Ok(MagHistogram {
        bin_edges: (0..=n_bins).map(|k| -1.0 + 2.0 * k as f64 / n_bins as f64).collect(),
        probabilities: counts.iter().map(|&c| c as f64 / total).collect(),
        sample_count: samples.len(),
        t_s,
        sources,
        moment2: m2,
        moment4: m4,
    })
}

/// Every `M^x_Ψ` sample recorded strictly after `t_s`.
pub fn pooled_samples(records: &[TrajectoryRecord], t_s: f64) -> Vec<f64> {
    records
        .iter()
        .flat_map(|r| {
            r.times()
                .iter()
                .zip(r.mx_psi())
                .filter(move |(t, _)| **t > t_s)
                .map(|(_, m)| *m)
        })
        .collect()
}

/// Histogram of `M^x_Ψ(t)` for `t > t_s`, pooled across records.
pub fn build_histogram(records: &[TrajectoryRecord], t_s: f64, n_bins: usize) -> Result<MagHistogram> {
    let samples = pooled_samples(records, t_s);
    histogram_from_samples(&samples, n_bins, t_s, records.iter().map(|r| r.seed).collect())
}

/// `b = ⟨M²⟩² / ⟨M⁴⟩` from the raw-sample moments of the histogram.
pub fn bimodality(hist: &MagHistogram) -> Result<f64> {
    if !(hist.moment4 > 0.0) {
        return Err(Error::UndefinedBimodality);
    }
    Ok(hist.moment2 * hist.moment2 / hist.moment4)
}

pub fn bimodality_samples(samples: &[f64]) -> Result<f64> {
    let (m2, m4) = even_moments(samples.iter().copied());
    if !(m4 > 0.0) {
        return Err(Error::UndefinedBimodality);
    }
    Ok(m2 * m2 / m4)
}

/// `(⟨x²⟩, ⟨x⁴⟩)` as running means, exact when every `|x|` is equal.
fn even_moments(samples: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut m2, mut m4) = (0.0, 0.0);
    for (k, x) in samples.enumerate() {
        let x2 = x * x;
        let w = 1.0 / (k + 1) as f64;
        m2 += (x2 - m2) * w;
        m4 += (x2 * x2 - m4) * w;
    }
    (m2, m4)
}

/// `b` from bin centers and probabilities.
pub fn bimodality_binned(hist: &MagHistogram) -> Result<f64> {
    let (m2, m4) = hist
        .centers()
        .iter()
        .zip(&hist.probabilities)
        .fold((0.0, 0.0), |(a, b), (c, p)| (a + p * c * c, b + p * c.powi(4)));
    if !(m4 > 0.0) {
        return Err(Error::UndefinedBimodality);
    }
    Ok(m2 * m2 / m4)
}

/// Peak structure of a histogram after symmetrizing `M → −M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Modes {
    /// 1 for a single peak at zero, 2 for a symmetric pair at `±peak`.
    pub count: usize,
    pub peak: f64,
    /// Symmetrized probability at the center relative to the peak.
    pub dip_ratio: f64,
}

/// Counts modes of the sign-symmetrized, lightly smoothed histogram. Two
/// modes are reported when the maximum over `M ≥ 0` sits away from the
/// center and the center falls below `dip` times the peak height.
pub fn count_modes(hist: &MagHistogram, dip: f64) -> Modes {
    let n = hist.n_bins();
    let p = &hist.probabilities;
    let sym: Vec<f64> = (0..n).map(|k| 0.5 * (p[k] + p[n - 1 - k])).collect();
    let smooth: Vec<f64> = (0..n)
        .map(|k| {
            let lo = k.saturating_sub(1);
            let hi = (k + 1).min(n - 1);
            sym[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let centers = hist.centers();
    let half = n / 2;
    let (k_peak, &p_peak) = smooth[half..]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, v)| (k + half, v))
        .expect("at least two bins");
    let center = if n % 2 == 1 {
        smooth[half]
    } else {
        0.5 * (smooth[half - 1] + smooth[half])
    };
    let k_peak = (k_peak.saturating_sub(1).max(half)..=(k_peak + 1).min(n - 1))
        .max_by(|a, b| sym[*a].total_cmp(&sym[*b]).then(b.cmp(a)))
        .unwrap_or(k_peak);
    let dip_ratio = if p_peak > 0.0 { center / p_peak } else { 1.0 };
    let bimodal = k_peak > half + usize::from(n % 2 == 1) && dip_ratio < dip;
    Modes {
        count: if bimodal { 2 } else { 1 },
        peak: if bimodal { centers[k_peak] } else { 0.0 },
        dip_ratio,
    }
}

/// Integrated autocorrelation time, in samples, with the self-consistent
/// window `M ≥ 5 τ`.
pub fn autocorrelation_time(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 2 {
        return 1.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for lag in 1..n {
        let c: f64 = series[..n - lag]
            .iter()
            .zip(&series[lag..])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / (n as f64 * var);
        tau += 2.0 * c;
        if lag as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

/// Post-`t_s` autocorrelation time averaged over records, in units of time.
pub fn mean_autocorrelation_time(records: &[TrajectoryRecord], t_s: f64) -> f64 {
    let taus: Vec<f64> = records
        .iter()
        .filter_map(|r| {
            let times = r.times();
            let start = times.iter().position(|t| *t > t_s)?;
            let spacing = times.get(start + 1).map(|t| t - times[start])?;
            Some(autocorrelation_time(&r.mx_psi()[start..]) * spacing)
        })
        .collect();
    if taus.is_empty() {
        0.0
    } else {
        taus.iter().sum::<f64>() / taus.len() as f64
    }
}

/// Parameters of a homodyne bimodality sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BimodalitySettings {
    pub trajectory: TrajectorySettings,
    pub n_traj: usize,
    pub base_seed: u64,
    pub t_s: f64,
    pub n_bins: usize,
    pub initial: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BimodalityPoint {
    pub jy: f64,
    pub b: f64,
    pub sample_count: usize,
    /// Mean integrated autocorrelation time of `M^x_Ψ`, in units of 1/γ.
    pub tau_int: f64,
    pub modes: Modes,
    pub histogram: MagHistogram,
}

/// Homodyne ensemble, histogram and bimodality at one coupling set.
pub fn bimodality_point(geom: &LatticeGeometry, c: &Couplings, s: &BimodalitySettings) -> Result<BimodalityPoint> {
    let n = geom.n_sites();
    let problem = TrajectoryProblem {
        psi0: PureState::product(n, s.initial)?,
        h: build_hamiltonian(geom, c)?,
        couplings: *c,
        unraveling: Unraveling::Homodyne,
        settings: s.trajectory.clone(),
        extra: Vec::new(),
    };
    let ens = run_ensemble(&problem, s.n_traj, s.base_seed)?;
    let histogram = build_histogram(&ens.records, s.t_s, s.n_bins)?;
    Ok(BimodalityPoint {
        jy: c.jy,
        b: bimodality(&histogram)?,
        sample_count: histogram.sample_count,
        tau_int: mean_autocorrelation_time(&ens.records, s.t_s),
        modes: count_modes(&histogram, 0.8),
        histogram,
    })
}

pub fn bimodality_sweep(
    geom: &LatticeGeometry,
    base: &Couplings,
    jy_values: &[f64],
    s: &BimodalitySettings,
) -> std::result::Result<Vec<BimodalityPoint>, SweepError> {
    jy_values
        .iter()
        .map(|&jy| bimodality_point(geom, &base.with_jy(jy), s).map_err(|source| SweepError { jy, source }))
        .collect()
}

pub fn write_bimodality_csv<W: Write>(
    points: &[BimodalityPoint],
    mut out: W,
    metadata: &[(String, String)],
) -> std::io::Result<()> {
    for (key, value) in metadata {
        writeln!(out, "# {key}: {value}")?;
    }
    writeln!(out, "jy,b,sample_count,tau_int,modes,peak")?;
    for p in points {
        writeln!(
            out,
            "{},{:.12e},{},{:.6e},{},{}",
            p.jy, p.b, p.sample_count, p.tau_int, p.modes.count, p.modes.peak
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::TimeSeries;
    use approx::assert_abs_diff_eq;
    use rand_distr::StandardNormal;

    fn record(seed: u64, times: Vec<f64>, mx: Vec<f64>) -> TrajectoryRecord {
        let mut series = TimeSeries::new(vec!["mx".into()]);
        for (t, m) in times.into_iter().zip(mx) {
            series.push(t, &[m]);
        }
        TrajectoryRecord {
            seed,
            series,
            jump_times: vec![],
            jump_sites: vec![],
            states: None,
        }
    }

    #[test]
    fn exact_exponential() {
        let times: Vec<f64> = (0..=450).map(|k| 5.0 + 0.1 * k as f64).collect();
        let values: Vec<f64> = times.iter().map(|t| 0.7 * (-0.3 * t).exp()).collect();
        let fit = fit_decay(&times, &values, 5.0, 0.0).unwrap();
        assert!((fit.lambda_fit - 0.3).abs() / 0.3 < 1e-10);
        assert_abs_diff_eq!(fit.amplitude, 0.7, epsilon = 1e-9);
        assert!(fit.residual < 1e-12);
        assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn negative_amplitude_and_offset() {
        let times: Vec<f64> = (0..100).map(|k| k as f64 * 0.2).collect();
        let values: Vec<f64> = times.iter().map(|t| 0.25 - 1.5 * (-0.8 * t).exp()).collect();
        let fit = fit_decay(&times, &values, 1.0, 0.25).unwrap();
        assert_abs_diff_eq!(fit.lambda_fit, 0.8, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.amplitude, -1.5, epsilon = 1e-9);
    }

    #[test]
    fn oscillation_detected() {
        let times: Vec<f64> = (0..200).map(|k| k as f64 * 0.1).collect();
        let values: Vec<f64> = times.iter().map(|t| (-0.2 * t).exp() * (3.0 * t).cos()).collect();
        assert!(matches!(fit_decay(&times, &values, 5.0, 0.0), Err(Error::Oscillation { .. })));
    }

    #[test]
    fn short_window_rejected() {
        let times: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let values: Vec<f64> = times.iter().map(|t| (-t).exp()).collect();
        assert!(matches!(
            fit_decay(&times, &values, 15.0, 0.0),
            Err(Error::FitWindow { points: 5, .. })
        ));
    }

    #[test]
    fn noisy_fit_stops_at_noise_floor() {
        let times: Vec<f64> = (0..100).map(|k| k as f64 * 0.2).collect();
        let mean: Vec<f64> = times.iter().map(|t| (-0.5 * t).exp()).collect();
        let se = vec![1e-3; times.len()];
        let fit = fit_decay_noisy(&times, &mean, Some(&se), 1.0).unwrap();
        assert!(fit.t_end < 12.0);
        assert_abs_diff_eq!(fit.lambda_fit, 0.5, epsilon = 1e-10);
    }

    #[test]
    fn ensemble_fit_with_bootstrap_error() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let times: Vec<f64> = (0..200).map(|k| k as f64 * 0.1).collect();
        let recs: Vec<_> = (0..200)
            .map(|s| {
                let mx = times
                    .iter()
                    .map(|t| (-0.4 * t).exp() + 0.05 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                record(s, times.clone(), mx)
            })
            .collect();
        let (fit, err) = fit_ensemble_decay(&recs, 1.0, 40, 2).unwrap();
        assert!(err > 0.0 && err < 0.05);
        assert!((fit.lambda_fit - 0.4).abs() < 5.0 * err);
    }

    #[test]
    fn single_spin_gap_sweep_is_flat() {
        let geom = LatticeGeometry::rect(1, 1, true).unwrap();
        let base = Couplings::new(0.0, 0.0, 0.0, 1.0).unwrap();
        let method = GapMethod::Rk4 {
            dt: 1e-3,
            t_max: 20.0,
            t_start: 5.0,
        };
        let points = gap_sweep(&geom, &base, &[0.5, 1.0, 1.5], &method, true).unwrap();
        for p in &points {
            assert_abs_diff_eq!(p.lambda, 0.5, epsilon = 1e-4);
            assert_abs_diff_eq!(p.lambda_exact.unwrap(), 0.5, epsilon = 1e-10);
        }
        let mut buf = Vec::new();
        write_gap_csv(&points, &mut buf, &[]).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("jy,lambda,"));
    }

    #[test]
    fn interior_minimum_detection() {
        let mk = |jy: f64, lambda: f64| GapPoint {
            jy,
            lambda,
            fit: None,
            lambda_exact: None,
        };
        assert_eq!(interior_minimum(&[mk(1.0, 0.5), mk(1.1, 0.2), mk(1.2, 0.3)]), Some(1));
        assert_eq!(interior_minimum(&[mk(1.0, 0.1), mk(1.1, 0.2), mk(1.2, 0.3)]), None);
    }

    #[test]
    fn default_discard_time() {
        assert_abs_diff_eq!(default_t_s(Some(0.3), 1000.0), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(default_t_s(None, 1000.0), 100.0);
    }

    #[test]
    fn constant_zero_records_fill_central_bin() {
        let recs = vec![record(0, vec![0.0, 1.0, 2.0], vec![0.0; 3])];
        let hist = build_histogram(&recs, 0.5, 11).unwrap();
        assert_eq!(hist.sample_count, 2);
        assert_eq!(hist.probabilities.iter().filter(|p| **p > 0.0).count(), 1);
        assert_abs_diff_eq!(hist.probabilities[5], 1.0);
        assert_eq!(bimodality(&hist), Err(Error::UndefinedBimodality));
    }

    #[test]
    fn symmetric_records_give_two_equal_peaks() {
        let times: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let recs = vec![
            record(1, times.clone(), vec![0.6; 100]),
            record(2, times, vec![-0.6; 100]),
        ];
        let hist = build_histogram(&recs, 0.0, 40).unwrap();
        let occupied: Vec<f64> = hist.probabilities.iter().copied().filter(|p| *p > 0.0).collect();
        assert_eq!(occupied.len(), 2);
        assert_abs_diff_eq!(occupied[0], occupied[1]);
        assert_eq!(bimodality(&hist).unwrap(), 1.0);
        let modes = count_modes(&hist, 0.8);
        assert_eq!(modes.count, 2);
        assert!((modes.peak - 0.6).abs() <= hist.bin_width());
        assert_eq!(hist.sources, vec![1, 2]);
    }

    #[test]
    fn empty_window_rejected() {
        let recs = vec![record(0, vec![0.0, 1.0], vec![0.1, 0.2])];
        assert_eq!(build_histogram(&recs, 5.0, 10), Err(Error::EmptyWindow { t_s: 5.0 }));
    }

    #[test]
    fn probabilities_normalized_and_supported() {
        let samples: Vec<f64> = (0..1000).map(|k| (k as f64 * 0.37).sin()).collect();
        let hist = histogram_from_samples(&samples, 40, 0.0, vec![]).unwrap();
        assert!((hist.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(hist.bin_edges[0], -1.0);
        assert_eq!(*hist.bin_edges.last().unwrap(), 1.0);
    }

    #[test]
    fn gaussian_is_monomodal_and_uniform_is_five_ninths() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let gauss: Vec<f64> = (0..200_000).map(|_| 0.15 * rng.sample::<f64, _>(StandardNormal)).collect();
        let hist = histogram_from_samples(&gauss, 40, 0.0, vec![]).unwrap();
        assert_eq!(count_modes(&hist, 0.8).count, 1);
        assert_abs_diff_eq!(bimodality(&hist).unwrap(), 1.0 / 3.0, epsilon = 0.01);
        let uniform: Vec<f64> = (0..200_000).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        assert_abs_diff_eq!(bimodality_samples(&uniform).unwrap(), 5.0 / 9.0, epsilon = 0.01);
    }

    #[test]
    fn autocorrelation_of_white_and_correlated_noise() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let white: Vec<f64> = (0..20_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        assert!(autocorrelation_time(&white) < 1.5);
        let phi: f64 = 0.9;
        let mut x = 0.0;
        let ar: Vec<f64> = white
            .iter()
            .map(|w| {
                x = phi * x + w;
                x
            })
            .collect();
        let expected = (1.0 + phi) / (1.0 - phi);
        let tau = autocorrelation_time(&ar);
        assert!((tau - expected).abs() / expected < 0.25, "tau = {tau}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mixture(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let z = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let sign = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            (z, sign)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn sign_and_permutation_invariant(samples in prop::collection::vec(-1.0f64..1.0, 2..200), rot in 0usize..200) {
                prop_assume!(samples.iter().any(|x| *x != 0.0));
                let b = bimodality_samples(&samples).unwrap();
                let flipped: Vec<f64> = samples.iter().map(|x| -x).collect();
                let mut rotated = samples.clone();
                let k = rot % rotated.len();
                rotated.rotate_left(k);
                rotated.reverse();
                prop_assert!((bimodality_samples(&flipped).unwrap() - b).abs() < 1e-12);
                prop_assert!((bimodality_samples(&rotated).unwrap() - b).abs() < 1e-12);
                prop_assert!(b > 0.0 && b <= 1.0 + 1e-12);
            }

            #[test]
            fn mixture_b_increases_with_separation(seed in 0u64..1000, sigma in 0.05f64..0.2) {
                let (z, sign) = mixture(seed, 20_000);
                let tol = 0.02;
                let (mut last, mut last_analytic) = (0.0, 0.0);
                for r in [0.0, 0.5, 1.0, 1.5, 2.0, 3.0] {
                    let m = r * sigma;
                    let samples: Vec<f64> = z.iter().zip(&sign).map(|(z, s)| s * m + sigma * z).collect();
                    let b = bimodality_samples(&samples).unwrap();
                    let analytic = (r * r + 1.0).powi(2) / (r.powi(4) + 6.0 * r * r + 3.0);
                    prop_assert!((b - analytic).abs() < tol);
                    // Ordering is only resolvable when the exact step exceeds the
                    // sampling band on both ends.
                    if analytic - last_analytic > 2.0 * tol {
                        prop_assert!(b > last, "r = {r}: {b} <= {last}");
                        (last, last_analytic) = (b, analytic);
                    }
                }
            }

            #[test]
            fn binned_b_close_to_raw(seed in 0u64..1000, n_bins in 40usize..120) {
                // Enough samples that sampling noise, O(h/√n), stays below
                // the O(h²) binning bias under test.
                let (z, sign) = mixture(seed, 50_000);
                let samples: Vec<f64> = z.iter().zip(&sign).map(|(z, s)| (s * 0.4 + 0.15 * z).clamp(-1.0, 1.0)).collect();
                let hist = histogram_from_samples(&samples, n_bins, 0.0, vec![]).unwrap();
                let h = hist.bin_width();
                let raw = bimodality(&hist).unwrap();
                let binned = bimodality_binned(&hist).unwrap();
                prop_assert!((raw - binned).abs() < 2.0 * h * h, "raw {raw} binned {binned} h {h}");
            }
        }
    }
}
