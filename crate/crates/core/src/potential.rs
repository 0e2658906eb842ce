//! Shifted double-well potential `F(s) = ¼(s² − 1)² + γ`, the discrete
//! energies built from it, and the multiplicative noise coefficient ρ.
//!
//! The interface parameter ε enters as in the gradient flow of
//! `(ε/2)∫|∇u|² + ε⁻¹∫F(u)`: the stiffness term carries a factor ε and every
//! occurrence of `F`, `F'`, `F''` in the scheme carries ε⁻¹. With ε = 1 the
//! scheme is the unscaled one.

use crate::fem::{FieldVector, LumpedMass, StiffnessMatrix};

/// Choice of the noise coefficient ρ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RhoKind {
    /// `(2√ε)⁻¹ max{1 − s², 0}`: noise acts only in the diffuse interface.
    #[default]
    Indicator,
    /// `(2√ε)⁻¹ (1 + s²)⁻¹`: a C² alternative with bounded derivatives.
    Smooth,
}

impl RhoKind {
    pub fn name(self) -> &'static str {
        match self {
            RhoKind::Indicator => "indicator",
            RhoKind::Smooth => "smooth",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "indicator" => Some(RhoKind::Indicator),
            "smooth" => Some(RhoKind::Smooth),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialParams {
    pub gamma: f64,
    pub epsilon: f64,
    pub rho: RhoKind,
}

impl Default for PotentialParams {
    fn default() -> Self {
        Self {
            gamma: 1e-5,
            epsilon: 0.02,
            rho: RhoKind::Indicator,
        }
    }
}

impl PotentialParams {
    pub fn new(gamma: f64, epsilon: f64) -> Self {
        Self {
            gamma,
            epsilon,
            rho: RhoKind::Indicator,
        }
    }

    pub fn with_rho(mut self, rho: RhoKind) -> Self {
        self.rho = rho;
        self
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            errs.push(format!(
                "gamma must be positive so that E_h >= gamma > 0 (got {})",
                self.gamma
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            errs.push(format!("epsilon must be positive (got {})", self.epsilon));
        }
        errs
    }

    pub fn f(&self, s: f64) -> f64 {
        let q = s * s - 1.0;
        0.25 * q * q + self.gamma
    }

    pub fn f1(&self, s: f64) -> f64 {
        s * s * s - s
    }

    pub fn f2(&self, s: f64) -> f64 {
        3.0 * s * s - 1.0
    }

    pub fn rho(&self, s: f64) -> f64 {
        let scale = 0.5 / self.epsilon.sqrt();
        match self.rho {
            RhoKind::Indicator => scale * (1.0 - s * s).max(0.0),
            RhoKind::Smooth => scale / (1.0 + s * s),
        }
    }

    /// Global Lipschitz constant of ρ.
    pub fn rho_lipschitz(&self) -> f64 {
        let inv = 1.0 / self.epsilon.sqrt();
        match self.rho {
            RhoKind::Indicator => inv,
            // max |d/ds (1+s²)⁻¹| = 3√3/8 at s = 1/√3
            RhoKind::Smooth => 0.5 * inv * 3.0 * 3f64.sqrt() / 8.0,
        }
    }
}

/// `E_h(φ) = ε⁻¹ Σ_i m_i F(φ_i)`.
pub fn energy_eh(phi: &FieldVector, mass: &LumpedMass, params: &PotentialParams) -> f64 {
    energy_eh_slice(phi.values(), mass.diag(), params)
}

pub(crate) fn energy_eh_slice(phi: &[f64], mass: &[f64], params: &PotentialParams) -> f64 {
    let mut acc = 0.0;
    for i in 0..mass.len() {
        acc += mass[i] * params.f(phi[i]);
    }
    acc / params.epsilon
}

/// Modified SAV energy `(ε/2) φᵀKφ + r²`.
pub fn energy_total(phi: &FieldVector, r: f64, stiff: &StiffnessMatrix, params: &PotentialParams) -> f64 {
    let grad = stiff.matrix().bilinear(phi.values(), phi.values());
    0.5 * params.epsilon * grad + r * r
}

/// Original (non-SAV) discrete free energy `(ε/2) φᵀKφ + E_h(φ)`.
pub fn energy_free(
    phi: &FieldVector,
    mass: &LumpedMass,
    stiff: &StiffnessMatrix,
    params: &PotentialParams,
) -> f64 {
    let grad = stiff.matrix().bilinear(phi.values(), phi.values());
    0.5 * params.epsilon * grad + energy_eh(phi, mass, params)
}
