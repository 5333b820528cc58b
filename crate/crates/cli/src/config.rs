//! Experiment configuration: one TOML file, optional preset, flag overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use dxyz_core::trajectories::Scheme;
use dxyz_core::{BondMultiplicity, Couplings, Direction, LatticeGeometry};
use serde::{Deserialize, Serialize};

pub const PAPER_1D: &str = include_str!("../presets/paper-1d.toml");
pub const PAPER_2D: &str = include_str!("../presets/paper-2d.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rk4,
    Jump,
    Homodyne,
    Spectrum,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Rk4 => "rk4",
            Method::Jump => "jump",
            Method::Homodyne => "homodyne",
            Method::Spectrum => "spectrum",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeConfig {
    pub lx: usize,
    pub ly: usize,
    pub periodic: bool,
    pub bonds: BondMultiplicity,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            lx: 2,
            ly: 2,
            periodic: true,
            bonds: BondMultiplicity::Merge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingConfig {
    pub jx: f64,
    pub jy: f64,
    pub jz: f64,
    pub gamma: f64,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            jx: 0.9,
            jy: 1.1,
            jz: 1.0,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: Method,
    pub dt: f64,
    /// Duration of deterministic runs and of gap fits.
    pub t_max: f64,
    /// Duration of single trajectories; `t_max` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_total: Option<f64>,
    /// Samples before this time are discarded from histograms.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_s: Option<f64>,
    /// Prior relaxation-rate estimate used for the default `t_s`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_est: Option<f64>,
    pub n_traj: usize,
    pub base_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<Direction>,
    pub scheme: Scheme,
    pub fit_start: f64,
    pub n_bins: usize,
    pub record_sites: bool,
    /// Also compute the exact gap in gap sweeps.
    pub exact: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk4,
            dt: 1e-3,
            t_max: 20.0,
            t_total: None,
            t_s: None,
            lambda_est: None,
            n_traj: 16,
            base_seed: 0,
            record_every: None,
            initial: None,
            scheme: Scheme::Rk4,
            fit_start: 5.0,
            n_bins: 50,
            record_sites: false,
            exact: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// `jy` values of a sweep; empty means the single `couplings.jy`.
    pub jy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub lattice: LatticeConfig,
    pub couplings: CouplingConfig,
    pub run: RunConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

/// A configuration problem, located in the file or attributed to a flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub message: String,
    pub origin: Option<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.origin {
            Some(origin) => write!(f, "{origin}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Values given on the command line; each one replaces the file value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub lx: Option<usize>,
    pub ly: Option<usize>,
    pub periodic: Option<bool>,
    pub jx: Option<f64>,
    pub jy: Option<f64>,
    pub jz: Option<f64>,
    pub gamma: Option<f64>,
    pub method: Option<Method>,
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    pub t_total: Option<f64>,
    pub t_s: Option<f64>,
    pub n_traj: Option<usize>,
    pub base_seed: Option<u64>,
    pub record_every: Option<usize>,
    pub initial: Option<Direction>,
    pub jy_list: Option<Vec<f64>>,
    pub fit_start: Option<f64>,
    pub n_bins: Option<usize>,
    pub lambda_est: Option<f64>,
    pub scheme: Option<Scheme>,
    pub exact: Option<bool>,
    pub out: Option<PathBuf>,
}

/// Where the configuration text came from, for error locations.
#[derive(Debug, Clone, Default)]
pub struct Source {
    pub name: String,
    pub text: String,
}

impl Source {
    /// 1-based line of the first `key = ...` assignment.
    pub fn line_of(&self, key: &str) -> Option<usize> {
        self.text.lines().position(|line| {
            let line = line.trim_start();
            line.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|k| k + 1)
    }
}

pub fn preset(name: &str) -> Result<Source, ConfigError> {
    let text = match name {
        "paper-1d" => PAPER_1D,
        "paper-2d" => PAPER_2D,
        other => {
            return Err(ConfigError {
                message: format!("unknown preset '{other}' (expected paper-1d or paper-2d)"),
                origin: Some("--preset".into()),
            })
        }
    };
    Ok(Source {
        name: format!("preset {name}"),
        text: text.into(),
    })
}

pub fn read_source(path: &Path) -> Result<Source, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        message: format!("cannot read: {e}"),
        origin: Some(path.display().to_string()),
    })?;
    Ok(Source {
        name: path.display().to_string(),
        text,
    })
}

pub fn parse(source: &Source) -> Result<ExperimentConfig, ConfigError> {
    toml::from_str(&source.text).map_err(|e| {
        let line = e
            .span()
            .map(|span| source.text[..span.start.min(source.text.len())].matches('\n').count() + 1);
        ConfigError {
            message: e.message().trim().to_string(),
            origin: Some(match line {
                Some(line) => format!("{}:{line}", source.name),
                None => source.name.clone(),
            }),
        }
    })
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(self.lattice.lx, o.lx);
        set!(self.lattice.ly, o.ly);
        set!(self.lattice.periodic, o.periodic);
        set!(self.couplings.jx, o.jx);
        set!(self.couplings.jy, o.jy);
        set!(self.couplings.jz, o.jz);
        set!(self.couplings.gamma, o.gamma);
        set!(self.run.method, o.method);
        set!(self.run.dt, o.dt);
        set!(self.run.t_max, o.t_max);
        set!(self.run.n_traj, o.n_traj);
        set!(self.run.base_seed, o.base_seed);
        set!(self.sweep.jy, o.jy_list);
        set!(self.run.fit_start, o.fit_start);
        set!(self.run.n_bins, o.n_bins);
        set!(self.run.scheme, o.scheme);
        set!(self.run.exact, o.exact);
        if o.lambda_est.is_some() {
            self.run.lambda_est = o.lambda_est;
        }
        set!(self.output.dir, o.out);
        if o.t_total.is_some() {
            self.run.t_total = o.t_total;
        }
        if o.t_s.is_some() {
            self.run.t_s = o.t_s;
        }
        if o.record_every.is_some() {
            self.run.record_every = o.record_every;
        }
        if o.initial.is_some() {
            self.run.initial = o.initial;
        }
    }

    pub fn geometry(&self) -> dxyz_core::Result<LatticeGeometry> {
        LatticeGeometry::rect_with(
            self.lattice.lx,
            self.lattice.ly,
            self.lattice.periodic,
            self.lattice.bonds,
            dxyz_core::lattice::DEFAULT_MAX_SITES,
        )
    }

    pub fn couplings(&self) -> Couplings {
        let c = &self.couplings;
        Couplings {
            jx: c.jx,
            jy: c.jy,
            jz: c.jz,
            gamma: c.gamma,
        }
    }

    pub fn trajectory_time(&self) -> f64 {
        self.run.t_total.unwrap_or(self.run.t_max)
    }

    pub fn jy_values(&self) -> Vec<f64> {
        if self.sweep.jy.is_empty() {
            vec![self.couplings.jy]
        } else {
            self.sweep.jy.clone()
        }
    }

    /// Checks value ranges, naming the offending key with its file line or
    /// flag.
    pub fn validate(&self, source: &Source, overrides: &Overrides) -> Result<(), ConfigError> {
        let fail = |key: &str, flag: &str, flagged: bool, message: String| {
            let origin = if flagged {
                Some(format!("--{flag}"))
            } else {
                let leaf = key.rsplit('.').next().unwrap_or(key);
                Some(match source.line_of(leaf) {
                    Some(line) => format!("{}:{line}: {key}", source.name),
                    None => format!("{}: {key}", source.name),
                })
            };
            Err(ConfigError { message, origin })
        };
        let positive = |v: f64| v > 0.0 && v.is_finite();

        let l = &self.lattice;
        if l.lx == 0 || l.ly == 0 {
            let key = if l.lx == 0 { "lattice.lx" } else { "lattice.ly" };
            let flagged = if l.lx == 0 { overrides.lx.is_some() } else { overrides.ly.is_some() };
            return fail(key, &key[8..], flagged, "lattice extents must be at least 1".into());
        }
        if l.lx * l.ly > dxyz_core::lattice::DEFAULT_MAX_SITES {
            return fail(
                "lattice.lx",
                "lx",
                overrides.lx.is_some() || overrides.ly.is_some(),
                format!(
                    "{} sites exceed the maximum of {}",
                    l.lx * l.ly,
                    dxyz_core::lattice::DEFAULT_MAX_SITES
                ),
            );
        }
        let c = &self.couplings;
        for (key, flag, value, flagged) in [
            ("couplings.jx", "jx", c.jx, overrides.jx.is_some()),
            ("couplings.jy", "jy", c.jy, overrides.jy.is_some()),
            ("couplings.jz", "jz", c.jz, overrides.jz.is_some()),
        ] {
            if !value.is_finite() {
                return fail(key, flag, flagged, format!("must be finite, got {value}"));
            }
        }
        if !(c.gamma >= 0.0 && c.gamma.is_finite()) {
            return fail(
                "couplings.gamma",
                "gamma",
                overrides.gamma.is_some(),
                format!("must be non-negative, got {}", c.gamma),
            );
        }
        let r = &self.run;
        if !positive(r.dt) {
            return fail("run.dt", "dt", overrides.dt.is_some(), format!("must be positive, got {}", r.dt));
        }
        if !positive(r.t_max) {
            return fail(
                "run.t_max",
                "t-max",
                overrides.t_max.is_some(),
                format!("must be positive, got {}", r.t_max),
            );
        }
        if r.dt > r.t_max {
            return fail("run.dt", "dt", overrides.dt.is_some(), format!("exceeds t_max = {}", r.t_max));
        }
        if let Some(t) = r.t_total {
            if !positive(t) {
                return fail(
                    "run.t_total",
                    "t-total",
                    overrides.t_total.is_some(),
                    format!("must be positive, got {t}"),
                );
            }
        }
        if let Some(t) = r.t_s {
            if !(t >= 0.0 && t.is_finite()) {
                return fail("run.t_s", "t-s", overrides.t_s.is_some(), format!("must be non-negative, got {t}"));
            }
            if t >= self.trajectory_time() {
                return fail(
                    "run.t_s",
                    "t-s",
                    overrides.t_s.is_some(),
                    format!("must be below the trajectory duration {}", self.trajectory_time()),
                );
            }
        }
        if let Some(l) = r.lambda_est {
            if !positive(l) {
                return fail("run.lambda_est", "lambda-est", overrides.lambda_est.is_some(), format!("must be positive, got {l}"));
            }
        }
        if matches!(r.method, Method::Jump | Method::Homodyne) && r.n_traj == 0 {
            return fail(
                "run.n_traj",
                "n-traj",
                overrides.n_traj.is_some(),
                "stochastic methods need n_traj of at least 1".into(),
            );
        }
        if r.record_every == Some(0) {
            return fail(
                "run.record_every",
                "record-every",
                overrides.record_every.is_some(),
                "must be at least 1".into(),
            );
        }
        if !(r.fit_start >= 0.0 && r.fit_start.is_finite()) {
            return fail("run.fit_start", "fit-start", overrides.fit_start.is_some(), format!("must be non-negative, got {}", r.fit_start));
        }
        if r.n_bins < 2 {
            return fail("run.n_bins", "n-bins", overrides.n_bins.is_some(), format!("must be at least 2, got {}", r.n_bins));
        }
        if let Some(bad) = self.sweep.jy.iter().find(|v| !v.is_finite()) {
            return fail("sweep.jy", "jy-list", overrides.jy_list.is_some(), format!("non-finite value {bad}"));
        }
        Ok(())
    }
}

/// Parses `a,b,c` or an inclusive range `start:stop:step`.
pub fn parse_jy_list(text: &str) -> Result<Vec<f64>, String> {
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("'{s}': {e}"));
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err("range must be start:stop:step".into());
        }
        let (start, stop, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
        if !(step > 0.0) || stop < start {
            return Err("range needs step > 0 and stop >= start".into());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        // Rounded so 0.9 + 0.05·k prints as 0.95 rather than 0.9500000000000001.
        Ok((0..=count).map(|k| ((start + step * k as f64) * 1e12).round() / 1e12).collect())
    } else {
        text.split(',').map(parse).collect()
    }
}

/// Loads a preset and/or file, applies flags and validates.
pub fn resolve(
    preset_name: Option<&str>,
    file: Option<&Path>,
    overrides: &Overrides,
) -> Result<(ExperimentConfig, Source), ConfigError> {
    let source = match (file, preset_name) {
        (Some(path), _) => read_source(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => Source {
            name: "defaults".into(),
            text: String::new(),
        },
    };
    let mut config = match (file, preset_name) {
        (Some(_), Some(name)) => {
            let mut base: toml::Table = toml::from_str(&preset(name)?.text).expect("preset parses");
            let top: toml::Table = toml::from_str(&source.text).map_err(|e| ConfigError {
                message: e.message().trim().to_string(),
                origin: Some(source.name.clone()),
            })?;
            merge(&mut base, top);
            let merged = Source {
                name: source.name.clone(),
                text: toml::to_string(&base).expect("table serializes"),
            };
            parse(&merged).map_err(|mut e| {
                e.origin = Some(source.name.clone());
                e
            })?
        }
        _ => parse(&source)?,
    };
    config.apply(overrides);
    config.validate(&source, overrides)?;
    Ok((config, source))
}

fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}
