//! Carreau–Yasuda shear-thinning viscosity, shear-rate recovery from the
//! deviatoric stress, and the viscosity <-> relaxation-rate mapping.

use crate::error::{Error, Result};
use crate::lattice::CS2;
use serde::{Deserialize, Serialize};

/// Carreau–Yasuda parameters
/// μ(γ̇) = μ_∞ + (μ₀ − μ_∞)(1 + (λγ̇)^a)^((n−1)/a).
///
/// Shear-thinning requires μ₀ > μ_∞ and n < 1. Table 1 lists the two limit
/// viscosities without ordering; the shear-thinning constraint fixes
/// μ₀ = 0.16 and μ_∞ = 0.0035 Pa·s, the standard blood parameter set that
/// λ = 8.2, n = 0.2128, a = 0.64 belong to.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CarreauYasudaParams {
    /// Zero-shear viscosity μ₀ in Pa·s.
    pub mu0_pa_s: f64,
    /// Infinite-shear viscosity μ_∞ in Pa·s.
    pub mu_inf_pa_s: f64,
    /// Viscosity relaxation time λ in seconds.
    pub lambda_s: f64,
    /// Power-law index n.
    pub power_index_n: f64,
    /// Transition parameter a.
    pub transition_a: f64,
}

impl Default for CarreauYasudaParams {
    fn default() -> Self {
        CarreauYasudaParams {
            mu0_pa_s: 0.16,
            mu_inf_pa_s: 0.0035,
            lambda_s: 8.2,
            power_index_n: 0.2128,
            transition_a: 0.64,
        }
    }
}

impl CarreauYasudaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu0_pa_s > self.mu_inf_pa_s && self.mu_inf_pa_s > 0.0) {
            return Err(Error::Config(format!(
                "shear-thinning needs mu0 > mu_inf > 0, got mu0={} mu_inf={}",
                self.mu0_pa_s, self.mu_inf_pa_s
            )));
        }
        if !(self.lambda_s > 0.0 && self.transition_a > 0.0) {
            return Err(Error::Config("lambda and a must be positive".into()));
        }
        if !(self.power_index_n > 0.0 && self.power_index_n < 1.0) {
            return Err(Error::Config(format!(
                "power-law index must be in (0,1), got {}",
                self.power_index_n
            )));
        }
        Ok(())
    }

    /// μ(γ̇) for γ̇ ≥ 0 (both in physical units). Monotone non-increasing,
    /// bounded in [μ_∞, μ₀].
    pub fn mu(&self, gamma_dot: f64) -> Result<f64> {
        if gamma_dot < 0.0 {
            return Err(Error::InvalidInput(format!("shear rate must be >= 0, got {gamma_dot}")));
        }
        Ok(self.mu_unchecked(gamma_dot))
    }

    /// Same as [`Self::mu`] without the sign check; used on the hot path where
    /// the Frobenius norm guarantees γ̇ ≥ 0.
    #[inline]
    pub fn mu_unchecked(&self, gamma_dot: f64) -> f64 {
        let a = self.transition_a;
        let x = (self.lambda_s * gamma_dot).powf(a);
        self.mu_inf_pa_s
            + (self.mu0_pa_s - self.mu_inf_pa_s) * (1.0 + x).powf((self.power_index_n - 1.0) / a)
    }
}

/// Relaxation-rate clamp bounds; the γ̇-from-previous-μ lag can transiently
/// push ω outside stable ranges.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OmegaClamp {
    pub omega_min: f64,
    pub omega_max: f64,
}

impl Default for OmegaClamp {
    fn default() -> Self {
        OmegaClamp { omega_min: 0.2, omega_max: 1.95 }
    }
}

impl OmegaClamp {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.omega_min && self.omega_min < self.omega_max && self.omega_max < 2.0) {
            return Err(Error::Config(format!(
                "need 0 < omega_min < omega_max < 2, got [{}, {}]",
                self.omega_min, self.omega_max
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, omega: f64) -> f64 {
        omega.clamp(self.omega_min, self.omega_max)
    }
}

/// ω = 2ρc_s²Δt / (2μ + ρc_s²Δt) in lattice units (Δt = 1), unclamped.
#[inline]
pub fn omega_from_mu_unclamped(mu_lat: f64, rho_lat: f64) -> f64 {
    let rc = rho_lat * CS2;
    2.0 * rc / (2.0 * mu_lat + rc)
}

/// Clamped relaxation rate for a lattice viscosity and local density.
#[inline]
pub fn omega_from_mu(mu_lat: f64, rho_lat: f64, clamp: &OmegaClamp) -> f64 {
    clamp.apply(omega_from_mu_unclamped(mu_lat, rho_lat))
}

/// Inverse mapping: μ = ρc_s²Δt (2 − ω) / (2ω) (lattice units, Δt = 1).
#[inline]
pub fn mu_from_omega(omega: f64, rho_lat: f64) -> f64 {
    rho_lat * CS2 * (2.0 - omega) / (2.0 * omega)
}

/// γ̇ = ‖σ‖_F / μ_prev: shear rate recovered from the deviatoric stress using
/// the previous step's dynamic viscosity. Unit-agnostic.
#[inline]
pub fn shear_rate_from_stress(sigma_frobenius: f64, mu_prev: f64) -> f64 {
    sigma_frobenius / mu_prev
}

/// Frobenius norm of a symmetric 3x3 tensor stored as
/// [xx, yy, zz, xy, xz, yz].
#[inline]
pub fn frobenius_sym(s: &[f64; 6]) -> f64 {
    (s[0] * s[0]
        + s[1] * s[1]
        + s[2] * s[2]
        + 2.0 * (s[3] * s[3] + s[4] * s[4] + s[5] * s[5]))
        .sqrt()
}
