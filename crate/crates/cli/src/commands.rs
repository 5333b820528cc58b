//! Subcommand implementations.

use std::fmt;

use dxyz_core::analysis::{
    self, bimodality_point, count_modes, default_t_s, gap_point, BimodalitySettings, GapMethod, GapPoint,
};
use dxyz_core::integrate::{rk4_evolve, EvolveSettings};
use dxyz_core::liouville::{build_liouvillian, full_spectrum, write_spectrum_csv, DEFAULT_DENSE_EIG_MAX_DIM};
use dxyz_core::operators::build_hamiltonian;
use dxyz_core::trajectories::{run_ensemble, TrajectoryMetadata, TrajectoryProblem, TrajectorySettings, Unraveling};
use dxyz_core::{Axis, Couplings, DensityMatrix, Direction, LatticeGeometry, Observable, PureState};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{ConfigError, ExperimentConfig, Method};
use crate::output::{finite, jy_tag, RunOutput};

/// Failure of a subcommand, mapped to the process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Numerical(dxyz_core::Error),
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }

    fn config(message: impl Into<String>, origin: &str) -> Self {
        CliError::Config(ConfigError {
            message: message.into(),
            origin: Some(origin.into()),
        })
    }

    fn at_jy(jy: f64, e: dxyz_core::Error) -> Self {
        match CliError::from(e) {
            CliError::Numerical(e) => CliError::Numerical(e),
            CliError::Config(mut c) => {
                c.message = format!("at jy = {jy}: {}", c.message);
                CliError::Config(c)
            }
            other => other,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Numerical(e) => write!(f, "numerical failure: {e}"),
            CliError::Io(e) => write!(f, "output error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

/// Problems with the requested system are configuration errors; failures
/// during the computation are numerical.
fn is_numerical(e: &dxyz_core::Error) -> bool {
    use dxyz_core::Error::*;
    match e {
        InvalidGeometry(_) | Size { .. } | SiteIndex { .. } | Dimension { .. } | InvalidParameter(_)
        | SpectralSize { .. } => false,
        NoSteadyState { .. }
        | Convergence { .. }
        | StepSize { .. }
        | NormCollapse { .. }
        | Divergence { .. }
        | DarkJump { .. }
        | Oscillation { .. }
        | FitWindow { .. }
        | NoDecay { .. }
        | EmptyWindow { .. }
        | UndefinedBimodality => true,
        Trajectory { source, .. } => is_numerical(source),
    }
}

impl From<dxyz_core::Error> for CliError {
    fn from(e: dxyz_core::Error) -> Self {
        if is_numerical(&e) {
            CliError::Numerical(e)
        } else {
            CliError::Config(ConfigError {
                message: e.to_string(),
                origin: None,
            })
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// One-line human summary printed to stdout.
pub struct Summary(pub Vec<String>);

fn couplings_at(config: &ExperimentConfig, jy: f64) -> CliResult<Couplings> {
    let c = config.couplings();
    Ok(Couplings::new(c.jx, jy, c.jz, c.gamma)?)
}

fn trajectory_settings(config: &ExperimentConfig, t_max: f64) -> TrajectorySettings {
    let r = &config.run;
    let mut s = TrajectorySettings::new(r.dt, t_max);
    if let Some(k) = r.record_every {
        s.record_every = k;
    }
    s.scheme = r.scheme;
    s.record_sites = r.record_sites;
    s
}

fn unraveling(method: Method, command: &str) -> CliResult<Unraveling> {
    match method {
        Method::Jump => Ok(Unraveling::Jump),
        Method::Homodyne => Ok(Unraveling::Homodyne),
        other => Err(CliError::config(
            format!("{command} needs method jump or homodyne, got {other}"),
            "run.method",
        )),
    }
}

fn exact_gap(geom: &LatticeGeometry, c: &Couplings) -> dxyz_core::Result<Option<f64>> {
    let n = geom.n_sites();
    if 1usize << (2 * n) > DEFAULT_DENSE_EIG_MAX_DIM {
        return Ok(None);
    }
    let h = build_hamiltonian(geom, c)?;
    let l = build_liouvillian(&h, c, n)?;
    Ok(Some(full_spectrum(&l)?.gap))
}

/// `M^x, M^y, M^z` versus time from the master equation, or the ensemble
/// mean of `M^x` for the stochastic methods.
pub fn evolve(config: &ExperimentConfig) -> CliResult<Summary> {
    let geom = config.geometry()?;
    let c = couplings_at(config, config.couplings.jy)?;
    let h = build_hamiltonian(&geom, &c)?;
    let n = geom.n_sites();
    let initial = config.run.initial.unwrap_or(Direction::PlusX);
    let mut out = RunOutput::create("evolve", config)?;
    match config.run.method {
        Method::Rk4 => {
            let mut s = EvolveSettings::new(config.run.dt, config.run.t_max);
            if let Some(k) = config.run.record_every {
                s.record_every = k;
            }
            let observables = [
                Observable::Magnetization(Axis::X),
                Observable::Magnetization(Axis::Y),
                Observable::Magnetization(Axis::Z),
            ];
            let rho0 = DensityMatrix::product(n, initial)?;
            let series = rk4_evolve(&rho0, &h, &c, &s, &observables)?;
            let meta = out.metadata_with(&[("method", "rk4".into()), ("initial", initial_label(initial))]);
            out.write("evolve.csv", |buf| series.write_csv(buf, &meta))?;
            let last = series.len() - 1;
            let results = json!({
                "rows": series.len(),
                "record_every": s.record_every,
                "final": {
                    "t": series.times[last],
                    "mx": finite(series.columns[0][last]),
                    "my": finite(series.columns[1][last]),
                    "mz": finite(series.columns[2][last]),
                },
            });
            let dir = out.dir().display().to_string();
            out.finish(config, &results)?;
            Ok(Summary(vec![format!(
                "evolve: {} rows to {dir}/evolve.csv, M^x(t = {}) = {:.6e}",
                series.len(),
                series.times[last],
                series.columns[0][last]
            )]))
        }
        Method::Jump | Method::Homodyne => {
            let problem = TrajectoryProblem {
                psi0: PureState::product(n, initial)?,
                h,
                couplings: c,
                unraveling: unraveling(config.run.method, "evolve")?,
                settings: trajectory_settings(config, config.run.t_max),
                extra: vec![Observable::Magnetization(Axis::Y), Observable::Magnetization(Axis::Z)],
            };
            let ens = run_ensemble(&problem, config.run.n_traj, config.run.base_seed)?;
            let meta = out.metadata_with(&[
                ("method", config.run.method.to_string()),
                ("initial", initial_label(initial)),
            ]);
            out.write("evolve.csv", |buf| ens.write_csv(buf, &meta))?;
            let (mean, _) = ens.column("mx").expect("mx is always recorded");
            let last = ens.times.len() - 1;
            let results = json!({
                "rows": ens.times.len(),
                "trajectories": TrajectoryMetadata::new(&problem, config.run.n_traj, config.run.base_seed),
                "final": {"t": ens.times[last], "mx_mean": finite(mean[last])},
            });
            let dir = out.dir().display().to_string();
            out.finish(config, &results)?;
            Ok(Summary(vec![format!(
                "evolve: {} trajectories, {} rows to {dir}/evolve.csv, mean M^x(t = {}) = {:.6e}",
                config.run.n_traj,
                ens.times.len(),
                ens.times[last],
                mean[last]
            )]))
        }
        Method::Spectrum => Err(CliError::config(
            "evolve needs method rk4, jump or homodyne; use the spectrum command for eigenvalues",
            "run.method",
        )),
    }
}

fn initial_label(d: Direction) -> String {
    serde_json::to_value(d)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Relaxation rate of `M^x` for each `jy` of the sweep.
pub fn gap(config: &ExperimentConfig) -> CliResult<Summary> {
    let geom = config.geometry()?;
    let r = &config.run;
    let method = match r.method {
        Method::Rk4 => GapMethod::Rk4 {
            dt: r.dt,
            t_max: r.t_max,
            t_start: r.fit_start,
        },
        Method::Jump => GapMethod::Jump {
            dt: r.dt,
            t_max: r.t_max,
            t_start: r.fit_start,
            n_traj: r.n_traj,
            base_seed: r.base_seed,
        },
        Method::Spectrum => GapMethod::Spectrum,
        Method::Homodyne => {
            return Err(CliError::config(
                "gap needs method rk4, jump or spectrum",
                "run.method",
            ))
        }
    };
    let jy_values = config.jy_values();
    let base = config.couplings();
    let points: Vec<GapPoint> = jy_values
        .par_iter()
        .map(|&jy| {
            let c = Couplings::new(base.jx, jy, base.jz, base.gamma).map_err(|e| CliError::at_jy(jy, e))?;
            gap_point(&geom, &c, &method, r.exact).map_err(|e| CliError::at_jy(jy, e))
        })
        .collect::<CliResult<_>>()?;
    let mut out = RunOutput::create("gap", config)?;
    let meta = out.metadata_with(&[("method", r.method.to_string()), ("lattice", geom.label())]);
    out.write("gap.csv", |buf| analysis::write_gap_csv(&points, buf, &meta))?;
    let minimum = analysis::interior_minimum(&points).map(|k| points[k].jy);
    let results = json!({
        "method": method,
        "points": points.iter().map(|p| json!({
            "jy": p.jy,
            "lambda": finite(p.lambda),
            "lambda_exact": p.lambda_exact.map(finite),
            "r_squared": p.fit.map(|f| finite(f.r_squared)),
        })).collect::<Vec<_>>(),
        "interior_minimum_jy": minimum,
    });
    let dir = out.dir().display().to_string();
    out.finish(config, &results)?;
    let mut lines: Vec<String> = points
        .iter()
        .map(|p| format!("jy = {}: lambda = {:.6}", p.jy, p.lambda))
        .collect();
    lines.push(format!("gap: {} points to {dir}/gap.csv", points.len()));
    Ok(Summary(lines))
}

/// Individual trajectories with their ensemble average.
pub fn trajectories(config: &ExperimentConfig) -> CliResult<Summary> {
    let geom = config.geometry()?;
    let c = couplings_at(config, config.couplings.jy)?;
    let n = geom.n_sites();
    let unraveling = unraveling(config.run.method, "trajectories")?;
    let initial = config.run.initial.unwrap_or(Direction::PlusX);
    let problem = TrajectoryProblem {
        psi0: PureState::product(n, initial)?,
        h: build_hamiltonian(&geom, &c)?,
        couplings: c,
        unraveling,
        settings: trajectory_settings(config, config.trajectory_time()),
        extra: Vec::new(),
    };
    let ens = run_ensemble(&problem, config.run.n_traj, config.run.base_seed)?;
    let mut out = RunOutput::create("trajectories", config)?;
    let meta = out.metadata_with(&[("unraveling", unraveling.to_string()), ("initial", initial_label(initial))]);
    for rec in &ens.records {
        out.write(&format!("trajectory_{}.csv", rec.seed), |buf| rec.write_csv(buf, &meta))?;
    }
    out.write("ensemble.csv", |buf| ens.write_csv(buf, &meta))?;
    let results = json!({
        "trajectories": TrajectoryMetadata::new(&problem, config.run.n_traj, config.run.base_seed),
        "jumps": ens.records.iter().map(|r| r.jump_times.len()).collect::<Vec<_>>(),
        "rows": ens.times.len(),
    });
    let dir = out.dir().display().to_string();
    out.finish(config, &results)?;
    Ok(Summary(vec![format!(
        "trajectories: {} {unraveling} trajectories of {} rows to {dir}",
        ens.n_traj,
        ens.times.len()
    )]))
}

/// Homodyne histograms of `M^x_Ψ` and their bimodality coefficient per `jy`.
pub fn bimodality(config: &ExperimentConfig) -> CliResult<Summary> {
    if config.run.method != Method::Homodyne && config.run.method != Method::Rk4 {
        return Err(CliError::config(
            format!("bimodality samples homodyne trajectories, got method {}", config.run.method),
            "run.method",
        ));
    }
    let geom = config.geometry()?;
    let r = &config.run;
    let t_total = config.trajectory_time();
    let base = config.couplings();
    let initial = r.initial.unwrap_or(Direction::MinusZ);
    let mut points = Vec::new();
    let mut t_s_used = Vec::new();
    for jy in config.jy_values() {
        let c = Couplings::new(base.jx, jy, base.jz, base.gamma).map_err(|e| CliError::at_jy(jy, e))?;
        let t_s = match r.t_s {
            Some(t) => t,
            None => {
                let estimate = match r.lambda_est {
                    Some(l) => Some(l),
                    None => exact_gap(&geom, &c).map_err(|e| CliError::at_jy(jy, e))?,
                };
                default_t_s(estimate, t_total)
            }
        };
        if t_s >= t_total {
            return Err(CliError::config(
                format!("default t_s = {t_s} at jy = {jy} leaves no samples before t = {t_total}; set run.t_s"),
                "run.t_s",
            ));
        }
        let settings = BimodalitySettings {
            trajectory: trajectory_settings(config, t_total),
            n_traj: r.n_traj,
            base_seed: r.base_seed,
            t_s,
            n_bins: r.n_bins,
            initial,
        };
        points.push(bimodality_point(&geom, &c, &settings).map_err(|e| CliError::at_jy(jy, e))?);
        t_s_used.push(t_s);
    }
    let mut out = RunOutput::create("bimodality", config)?;
    let meta = out.metadata_with(&[
        ("unraveling", "homodyne".into()),
        ("initial", initial_label(initial)),
        ("lattice", geom.label()),
    ]);
    out.write("bimodality.csv", |buf| analysis::write_bimodality_csv(&points, buf, &meta))?;
    for p in &points {
        let hmeta = out.metadata_with(&[("jy", p.jy.to_string())]);
        out.write(&format!("histogram_jy{}.csv", jy_tag(p.jy)), |buf| {
            p.histogram.write_csv(buf, &hmeta)
        })?;
    }
    let results = json!({
        "points": points.iter().zip(&t_s_used).map(|(p, t_s)| json!({
            "jy": p.jy,
            "b": finite(p.b),
            "t_s": t_s,
            "sample_count": p.sample_count,
            "tau_int": finite(p.tau_int),
            "modes": count_modes(&p.histogram, 0.8),
        })).collect::<Vec<_>>(),
    });
    let dir = out.dir().display().to_string();
    out.finish(config, &results)?;
    let mut lines: Vec<String> = points
        .iter()
        .map(|p| format!("jy = {}: b = {:.4}, {} mode(s)", p.jy, p.b, p.modes.count))
        .collect();
    lines.push(format!("bimodality: {} points to {dir}/bimodality.csv", points.len()));
    Ok(Summary(lines))
}

/// Full Liouvillian spectrum with parities.
pub fn spectrum(config: &ExperimentConfig) -> CliResult<Summary> {
    let geom = config.geometry()?;
    let c = couplings_at(config, config.couplings.jy)?;
    let h = build_hamiltonian(&geom, &c)?;
    let l = build_liouvillian(&h, &c, geom.n_sites())?;
    let spec = full_spectrum(&l)?;
    let mut out = RunOutput::create("spectrum", config)?;
    let meta = out.metadata_with(&[
        ("lattice", geom.label()),
        ("gap", format!("{:.15e}", spec.gap)),
    ]);
    out.write("spectrum.csv", |buf| {
        use std::io::Write;
        for (k, v) in &meta {
            writeln!(buf, "# {k}: {v}")?;
        }
        write_spectrum_csv(&spec, &mut *buf)
    })?;
    let results = json!({
        "eigenvalues": spec.eigenvalues.len(),
        "gap": spec.gap,
        "gap_eigenvalue": spec.gap_eigenvalue,
        "zero_tol": spec.zero_tol,
        "warnings": spec.warnings,
        "steady_state_mx": spec.steady_state.magnetization_x(),
    });
    let dir = out.dir().display().to_string();
    out.finish(config, &results)?;
    let mut lines = vec![format!(
        "spectrum: {} eigenvalues to {dir}/spectrum.csv, gap = {:.10} at {:.6} {:+.6}i",
        spec.eigenvalues.len(),
        spec.gap,
        spec.gap_eigenvalue.re,
        spec.gap_eigenvalue.im
    )];
    lines.extend(spec.warnings.iter().map(|w| format!("warning: {w:?}")));
    Ok(Summary(lines))
}
