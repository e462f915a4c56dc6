//! Hydrostatic stress along wire trees.
//!
//! Each tree is discretized into finite volumes and written as the linear
//! descriptor system `C σ' = A σ + B j − D`, where `A` carries the diffusive
//! back-flux, `B j` the electron-wind drive and `D` the thermomigration drive.
//! The control-volume weighted stress sum is conserved while every terminal
//! is blocking; a nucleated void is modelled by a Robin row at one node.

mod grid;
mod system;
mod void;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

pub use grid::{build_stress_grid, BranchGrid, StressGrid};
pub use system::{
    assemble_stress_system, detect_nucleation, screen_tree, solve_steady_state, step_transient, BackwardEuler,
    Classification, Face, Nucleation, ScreenResult, StressSystem,
};
pub use void::{growth_delta_r, phase_advance, stamp_void_robin, void_volume, Phase, VoidState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaterialParams {
    /// Elementary charge, C.
    pub e_charge: f64,
    /// Effective charge number.
    pub z_eff: f64,
    /// Electrical resistivity of the wire, Ω m.
    pub rho_el: f64,
    /// Atomic volume, m³.
    pub omega: f64,
    /// Diffusivity prefactor, m²/s.
    pub d0: f64,
    /// Activation energy, J.
    pub ea: f64,
    /// Boltzmann constant, J/K.
    pub kb: f64,
    /// Effective bulk modulus, Pa.
    pub bulk_modulus: f64,
    /// Initial residual stress, Pa.
    pub sigma_t: f64,
    /// Nucleation threshold, Pa.
    pub sigma_crit: f64,
    /// Void interface thickness, m.
    pub delta: f64,
    /// Heat of transport, J.
    pub q_star: f64,
    /// Barrier resistivity, Ω m.
    pub rho_ta: f64,
    /// Barrier thickness, m.
    pub h_ta: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        let e = 1.602176634e-19;
        Self {
            e_charge: e,
            z_eff: 10.0,
            rho_el: 2.25e-8,
            omega: 1.182e-29,
            d0: 7.56e-5,
            ea: 1.1 * e,
            kb: 1.380649e-23,
            bulk_modulus: 1e11,
            sigma_t: 0.0,
            sigma_crit: 4e8,
            delta: 1e-9,
            q_star: 1.4e-20,
            rho_ta: 2e-6,
            h_ta: 5e-9,
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("e_charge", self.e_charge),
            ("z_eff", self.z_eff),
            ("rho_el", self.rho_el),
            ("omega", self.omega),
            ("d0", self.d0),
            ("ea", self.ea),
            ("kb", self.kb),
            ("bulk_modulus", self.bulk_modulus),
            ("sigma_crit", self.sigma_crit),
            ("delta", self.delta),
            ("rho_ta", self.rho_ta),
            ("h_ta", self.h_ta),
        ];
        for (k, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Param {
                    key: format!("material.{k}"),
                    msg: format!("must be positive, got {v}"),
                });
            }
        }
        for (k, v) in [("sigma_t", self.sigma_t), ("q_star", self.q_star)] {
            if !v.is_finite() {
                return Err(Error::Param {
                    key: format!("material.{k}"),
                    msg: "must be finite".into(),
                });
            }
        }
        Ok(())
    }

    /// Stress diffusivity κ(T) = D0 exp(−Ea/kT) · B Ω / (k T).
    pub fn kappa(&self, temperature: f64) -> f64 {
        let kt = self.kb * temperature;
        self.d0 * (-self.ea / kt).exp() * self.bulk_modulus * self.omega / kt
    }

    /// Electron-wind stress gradient per unit current density, eZρ/Ω.
    pub fn em_coefficient(&self) -> f64 {
        self.e_charge * self.z_eff * self.rho_el / self.omega
    }

    /// Electron-wind stress gradient S for current density `j`.
    pub fn em_gradient(&self, j: f64) -> f64 {
        self.em_coefficient() * j
    }

    /// Thermomigration stress gradient M = Q*/(Ω T) dT/dx.
    pub fn tm_gradient(&self, temperature: f64, dtdx: f64) -> f64 {
        self.q_star / (self.omega * temperature) * dtdx
    }
}

/// Stress snapshots at a sequence of times; column `k` is the state at
/// `times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.times.len()
    }

    pub fn state(&self, k: usize) -> Vec<f64> {
        self.states.column(k).iter().copied().collect()
    }

    pub fn last(&self) -> Vec<f64> {
        self.state(self.steps() - 1)
    }

    /// Column maximum and its lowest index.
    pub fn max_at(&self, k: usize) -> (usize, f64) {
        let col = self.states.column(k);
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &v) in col.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    }
}

/// Uniform inner step list covering `span` with steps no longer than `dt`.
pub fn uniform_steps(span: f64, dt: f64) -> Vec<f64> {
    let n = ((span / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    vec![span / n as f64; n]
}
