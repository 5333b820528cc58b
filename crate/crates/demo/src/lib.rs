//! Browser bindings: master-equation relaxation of `M^x`, a single homodyne
//! trajectory and the Liouvillian spectrum, sized for interactive use.

use dxyz_core::integrate::{rk4_evolve, EvolveSettings};
use dxyz_core::liouville::{build_liouvillian, full_spectrum};
use dxyz_core::operators::build_hamiltonian;
use dxyz_core::trajectories::{homodyne_trajectory, TrajectorySettings};
use dxyz_core::{Axis, Couplings, DensityMatrix, Direction, LatticeGeometry, Observable, PureState};
use wasm_bindgen::prelude::*;

/// Largest lattice each operation accepts in the browser.
pub const MAX_EVOLVE_SITES: usize = 6;
pub const MAX_TRAJECTORY_SITES: usize = 9;
pub const MAX_SPECTRUM_SITES: usize = 4;
/// Points sent back for plotting.
pub const PLOT_POINTS: usize = 400;

#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    times: Vec<f64>,
    values: Vec<f64>,
}

#[wasm_bindgen]
impl Series {
    #[wasm_bindgen(getter)]
    pub fn times(&self) -> Vec<f64> {
        self.times.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }
}

#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    re: Vec<f64>,
    im: Vec<f64>,
    parity: Vec<i8>,
    gap: f64,
}

#[wasm_bindgen]
impl Spectrum {
    #[wasm_bindgen(getter)]
    pub fn re(&self) -> Vec<f64> {
        self.re.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn im(&self) -> Vec<f64> {
        self.im.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn parity(&self) -> Vec<i8> {
        self.parity.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn gap(&self) -> f64 {
        self.gap
    }
}

/// Lattice and couplings as entered in the page.
#[derive(Debug, Clone, Copy)]
pub struct System {
    pub lx: usize,
    pub ly: usize,
    pub jx: f64,
    pub jy: f64,
    pub jz: f64,
    pub gamma: f64,
}

impl System {
    fn build(&self, max_sites: usize) -> Result<(LatticeGeometry, Couplings), String> {
        if self.lx * self.ly > max_sites {
            return Err(format!(
                "{}x{} has {} sites; the demo allows at most {max_sites} here",
                self.lx,
                self.ly,
                self.lx * self.ly
            ));
        }
        let geom = LatticeGeometry::rect(self.lx, self.ly, true).map_err(|e| e.to_string())?;
        let c = Couplings::new(self.jx, self.jy, self.jz, self.gamma).map_err(|e| e.to_string())?;
        Ok((geom, c))
    }
}

fn record_every(dt: f64, t_max: f64) -> usize {
    ((t_max / dt / PLOT_POINTS as f64).round() as usize).max(1)
}

/// `M^x(t)` from the fully x-polarized state.
pub fn relaxation(sys: System, dt: f64, t_max: f64) -> Result<Series, String> {
    let (geom, c) = sys.build(MAX_EVOLVE_SITES)?;
    let n = geom.n_sites();
    let h = build_hamiltonian(&geom, &c).map_err(|e| e.to_string())?;
    let rho0 = DensityMatrix::product(n, Direction::PlusX).map_err(|e| e.to_string())?;
    let s = EvolveSettings {
        dt,
        t_max,
        record_every: record_every(dt, t_max),
    };
    let series = rk4_evolve(&rho0, &h, &c, &s, &[Observable::Magnetization(Axis::X)]).map_err(|e| e.to_string())?;
    Ok(Series {
        values: series.columns.into_iter().next().unwrap_or_default(),
        times: series.times,
    })
}

/// `M^x_Ψ(t)` along one homodyne trajectory from the all-down state.
pub fn homodyne(sys: System, dt: f64, t_max: f64, seed: u64) -> Result<Series, String> {
    let (geom, c) = sys.build(MAX_TRAJECTORY_SITES)?;
    let n = geom.n_sites();
    let h = build_hamiltonian(&geom, &c).map_err(|e| e.to_string())?;
    let psi0 = PureState::product(n, Direction::MinusZ).map_err(|e| e.to_string())?;
    let s = TrajectorySettings {
        record_every: record_every(dt, t_max),
        ..TrajectorySettings::new(dt, t_max)
    };
    let rec = homodyne_trajectory(&psi0, &h, &c, &s, seed).map_err(|e| e.to_string())?;
    Ok(Series {
        times: rec.times().to_vec(),
        values: rec.mx_psi().to_vec(),
    })
}

/// All Liouvillian eigenvalues with their Z₂ parity.
pub fn eigenvalues(sys: System) -> Result<Spectrum, String> {
    let (geom, c) = sys.build(MAX_SPECTRUM_SITES)?;
    let h = build_hamiltonian(&geom, &c).map_err(|e| e.to_string())?;
    let l = build_liouvillian(&h, &c, geom.n_sites()).map_err(|e| e.to_string())?;
    let spec = full_spectrum(&l).map_err(|e| e.to_string())?;
    Ok(Spectrum {
        re: spec.eigenvalues.iter().map(|e| e.re).collect(),
        im: spec.eigenvalues.iter().map(|e| e.im).collect(),
        parity: spec.eigenvalues.iter().map(|e| e.parity).collect(),
        gap: spec.gap,
    })
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen]
pub fn evolve_mx(
    lx: usize,
    ly: usize,
    jx: f64,
    jy: f64,
    jz: f64,
    gamma: f64,
    dt: f64,
    t_max: f64,
) -> Result<Series, JsError> {
    relaxation(System { lx, ly, jx, jy, jz, gamma }, dt, t_max).map_err(|e| JsError::new(&e))
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen]
pub fn trajectory_mx(
    lx: usize,
    ly: usize,
    jx: f64,
    jy: f64,
    jz: f64,
    gamma: f64,
    dt: f64,
    t_max: f64,
    seed: u32,
) -> Result<Series, JsError> {
    homodyne(System { lx, ly, jx, jy, jz, gamma }, dt, t_max, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn liouvillian_spectrum(lx: usize, ly: usize, jx: f64, jy: f64, jz: f64, gamma: f64) -> Result<Spectrum, JsError> {
    eigenvalues(System { lx, ly, jx, jy, jz, gamma }).map_err(|e| JsError::new(&e))
}
