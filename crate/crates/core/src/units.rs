//! Conversion between physical SI quantities and lattice units.
//!
//! All solver state lives in lattice units (dx = dt = 1, reference density 1).
//! Conversion happens only at config ingestion and output emission.

use crate::error::{Error, Result};
use crate::lattice::CS2;
use crate::rheology;
use serde::{Deserialize, Serialize};

/// Grid spacing, time step and reference density tying lattice units to SI.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct UnitScales {
    /// Grid size Δx in meters.
    pub dx_m: f64,
    /// Time-step size Δt in seconds.
    pub dt_s: f64,
    /// Reference density in kg/m³.
    pub rho0_kg_m3: f64,
}

impl Default for UnitScales {
    fn default() -> Self {
        UnitScales { dx_m: 43.9e-6, dt_s: 10.8e-6, rho0_kg_m3: 1060.0 }
    }
}

impl UnitScales {
    pub fn validate(&self) -> Result<()> {
        if !(self.dx_m > 0.0 && self.dt_s > 0.0 && self.rho0_kg_m3 > 0.0) {
            return Err(Error::Config(format!(
                "unit scales must be positive: dx={} dt={} rho0={}",
                self.dx_m, self.dt_s, self.rho0_kg_m3
            )));
        }
        Ok(())
    }

    /// u [m/s] -> lattice velocity.
    #[inline]
    pub fn velocity_to_lattice(&self, u_m_s: f64) -> f64 {
        u_m_s * self.dt_s / self.dx_m
    }

    /// lattice velocity -> m/s.
    #[inline]
    pub fn velocity_to_physical(&self, u_lat: f64) -> f64 {
        u_lat * self.dx_m / self.dt_s
    }

    /// ν [m²/s] -> lattice kinematic viscosity. Requires ν > 0.
    pub fn kinematic_viscosity_to_lattice(&self, nu_m2_s: f64) -> Result<f64> {
        if !(nu_m2_s > 0.0) {
            return Err(Error::InvalidInput(format!(
                "kinematic viscosity must be positive, got {nu_m2_s}"
            )));
        }
        Ok(nu_m2_s * self.dt_s / (self.dx_m * self.dx_m))
    }

    /// μ [Pa·s] -> lattice dynamic viscosity (reference density maps to 1).
    #[inline]
    pub fn dynamic_viscosity_to_lattice(&self, mu_pa_s: f64) -> f64 {
        mu_pa_s * self.dt_s / (self.rho0_kg_m3 * self.dx_m * self.dx_m)
    }

    /// lattice dynamic viscosity -> Pa·s.
    #[inline]
    pub fn dynamic_viscosity_to_physical(&self, mu_lat: f64) -> f64 {
        mu_lat * self.rho0_kg_m3 * self.dx_m * self.dx_m / self.dt_s
    }

    /// a [m/s²] -> lattice acceleration.
    #[inline]
    pub fn acceleration_to_lattice(&self, a_m_s2: f64) -> f64 {
        a_m_s2 * self.dt_s * self.dt_s / self.dx_m
    }

    /// length [m] -> lattice length.
    #[inline]
    pub fn length_to_lattice(&self, l_m: f64) -> f64 {
        l_m / self.dx_m
    }

    /// permeability [m²] -> lattice permeability.
    #[inline]
    pub fn permeability_to_lattice(&self, k_m2: f64) -> f64 {
        k_m2 / (self.dx_m * self.dx_m)
    }

    /// lattice stress (pressure-like) -> Pa.
    #[inline]
    pub fn stress_to_physical(&self, s_lat: f64) -> f64 {
        s_lat * self.rho0_kg_m3 * (self.dx_m / self.dt_s) * (self.dx_m / self.dt_s)
    }

    /// lattice shear rate (1/step) -> 1/s.
    #[inline]
    pub fn shear_rate_to_physical(&self, g_lat: f64) -> f64 {
        g_lat / self.dt_s
    }

    /// lattice density -> kg/m³.
    #[inline]
    pub fn density_to_physical(&self, rho_lat: f64) -> f64 {
        rho_lat * self.rho0_kg_m3
    }
}

/// Advisory stability diagnostics for a configuration. Warnings never abort a
/// run; deliberately stressed test configs are allowed to proceed.
#[derive(Debug, Clone, Default)]
pub struct StabilityReport {
    /// Peak inflow mean velocity over the waveform, in lattice units.
    pub peak_lattice_velocity: f64,
    /// Peak lattice Mach number (peak velocity / c_s).
    pub peak_mach: f64,
    /// Relaxation-rate range implied by the viscosity limits [μ_∞, μ₀].
    pub omega_range: (f64, f64),
    pub warnings: Vec<String>,
}

impl StabilityReport {
    /// Build the report from the peak waveform velocity and viscosity limits.
    pub fn evaluate(
        scales: &UnitScales,
        peak_inflow_m_s: f64,
        mu_low_pa_s: f64,
        mu_high_pa_s: f64,
    ) -> StabilityReport {
        let u_lat = scales.velocity_to_lattice(peak_inflow_m_s.abs());
        let cs = CS2.sqrt();
        let mut warnings = Vec::new();
        if u_lat > 0.1 {
            warnings.push(format!(
                "peak lattice velocity {u_lat:.4} exceeds 0.1; compressibility errors grow"
            ));
        }
        let mu_lo = scales.dynamic_viscosity_to_lattice(mu_low_pa_s.min(mu_high_pa_s));
        let mu_hi = scales.dynamic_viscosity_to_lattice(mu_low_pa_s.max(mu_high_pa_s));
        // omega is monotone decreasing in mu: high mu -> low omega.
        let omega_lo = rheology::omega_from_mu_unclamped(mu_hi, 1.0);
        let omega_hi = rheology::omega_from_mu_unclamped(mu_lo, 1.0);
        for (name, w) in [("min", omega_lo), ("max", omega_hi)] {
            if !(0.05..=1.95).contains(&w) {
                warnings.push(format!(
                    "relaxation rate {name} {w:.4} outside (0.05, 1.95); expect instability or excessive diffusion"
                ));
            }
        }
        StabilityReport {
            peak_lattice_velocity: u_lat,
            peak_mach: u_lat / cs,
            omega_range: (omega_lo, omega_hi),
            warnings,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table1() -> UnitScales {
        UnitScales::default()
    }

    #[test]
    fn velocity_table1() {
        // 1 m/s with Table-1 scales.
        let s = table1();
        let u = s.velocity_to_lattice(1.0);
        assert!((u - 10.8e-6 / 43.9e-6).abs() < 1e-15);
        assert!((u - 0.2460).abs() < 1e-4);
    }

    #[test]
    fn velocity_zero() {
        assert_eq!(table1().velocity_to_lattice(0.0), 0.0);
    }

    #[test]
    fn kinematic_viscosity_table1() {
        let s = table1();
        let nu0 = s.kinematic_viscosity_to_lattice(0.16 / 1060.0).unwrap();
        assert!((nu0 - 0.845).abs() < 5e-3, "{nu0}");
        let nu_inf = s.kinematic_viscosity_to_lattice(0.0035 / 1060.0).unwrap();
        assert!((nu_inf - 0.0185).abs() < 2e-4, "{nu_inf}");
    }

    #[test]
    fn kinematic_viscosity_rejects_nonpositive() {
        assert!(table1().kinematic_viscosity_to_lattice(0.0).is_err());
        assert!(table1().kinematic_viscosity_to_lattice(-1.0).is_err());
    }

    #[test]
    fn stability_peak_half_meter_per_second_warns() {
        let r = StabilityReport::evaluate(&table1(), 0.5, 0.0035, 0.16);
        assert!((r.peak_lattice_velocity - 0.123).abs() < 5e-4);
        assert!(r.warnings.iter().any(|w| w.contains("peak lattice velocity")));
    }

    #[test]
    fn stability_zero_flow_no_warning() {
        let r = StabilityReport::evaluate(&table1(), 0.0, 0.0035, 0.16);
        assert!(r.warnings.is_empty(), "{:?}", r.warnings);
    }

    #[test]
    fn stability_table1_omega_range_inside_bounds() {
        let r = StabilityReport::evaluate(&table1(), 0.0, 0.0035, 0.16);
        let (lo, hi) = r.omega_range;
        assert!(lo > 0.0 && hi < 2.0, "({lo}, {hi})");
        assert!(lo < hi);
        // Both endpoints computed by omega_from_mu at the viscosity limits.
        assert!((lo - 0.3292).abs() < 1e-3, "{lo}");
        assert!((hi - 1.8003).abs() < 1e-3, "{hi}");
    }

    proptest! {
        #[test]
        fn round_trips_velocity(u in -10.0f64..10.0) {
            let s = table1();
            let back = s.velocity_to_physical(s.velocity_to_lattice(u));
            prop_assert!((back - u).abs() <= 1e-14 * u.abs().max(1.0));
        }

        #[test]
        fn round_trips_viscosity(mu in 1e-6f64..10.0) {
            let s = table1();
            let back = s.dynamic_viscosity_to_physical(s.dynamic_viscosity_to_lattice(mu));
            prop_assert!((back - mu).abs() <= 1e-14 * mu);
        }
    }
}
