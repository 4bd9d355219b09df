//! Coil-as-porous-medium closures: Kozeny–Carman permeability, Ergun's
//! Forchheimer constant, the Darcy–Forchheimer drag force and the recovery of
//! the true velocity from the preliminary velocity.
//!
//! All functions are pure per-cell operations and unit-agnostic: feed lattice
//! quantities to get lattice results.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Closure parameters shared by every porous cell.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PorousClosure {
    /// Permeability scaling diameter d_p in meters.
    pub d_p_m: f64,
    /// Floor applied to the porosity field; the continuum drag model diverges
    /// as φ → 0 inside dense coil cores.
    pub phi_min: f64,
    /// Cells with φ at or above this are treated as pure fluid and bypass the
    /// drag entirely (the Kozeny–Carman relation is singular at φ = 1).
    pub phi_pure_fluid_threshold: f64,
}

impl Default for PorousClosure {
    fn default() -> Self {
        PorousClosure {
            d_p_m: 1.25e-3,
            phi_min: 0.05,
            phi_pure_fluid_threshold: 1.0 - 1e-9,
        }
    }
}

impl PorousClosure {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_p_m > 0.0) {
            return Err(Error::Config(format!("d_p must be positive, got {}", self.d_p_m)));
        }
        if !(0.0 < self.phi_min
            && self.phi_min < self.phi_pure_fluid_threshold
            && self.phi_pure_fluid_threshold <= 1.0)
        {
            return Err(Error::Config(format!(
                "need 0 < phi_min < phi_pure_fluid_threshold <= 1, got {} and {}",
                self.phi_min, self.phi_pure_fluid_threshold
            )));
        }
        Ok(())
    }
}

/// Per-cell drag state: permeability, Forchheimer constant and porosity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellDrag {
    /// Scalar isotropic permeability k (K = k·Id). Infinite for pure fluid.
    pub k: f64,
    /// Forchheimer constant C_F.
    pub c_f: f64,
    /// Porosity φ ∈ (0, 1].
    pub phi: f64,
    /// True when φ reached the pure-fluid threshold: no drag at all.
    pub pure_fluid: bool,
}

impl CellDrag {
    /// Pure-fluid cell: φ = 1, no drag.
    pub fn pure_fluid() -> CellDrag {
        CellDrag { k: f64::INFINITY, c_f: 0.0, phi: 1.0, pure_fluid: true }
    }

    /// Build the per-cell drag state from a porosity value. `d_p` must be in
    /// the same length unit as the produced permeability's square root.
    pub fn from_porosity(phi_raw: f64, d_p: f64, closure: &PorousClosure) -> CellDrag {
        if phi_raw >= closure.phi_pure_fluid_threshold {
            return CellDrag::pure_fluid();
        }
        let phi = phi_raw.max(closure.phi_min);
        CellDrag {
            k: kozeny_carman_k(phi, d_p).expect("phi clamped below 1"),
            c_f: ergun_cf(phi).expect("phi clamped above 0"),
            phi,
            pure_fluid: false,
        }
    }
}

/// Kozeny–Carman permeability k = φ³ d_p² / (150 (1 − φ)²).
///
/// Returns `Err` for φ ≥ 1: the relation is singular there and the caller must
/// bypass the drag instead of dividing by zero.
pub fn kozeny_carman_k(phi: f64, d_p: f64) -> Result<f64> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(Error::InvalidInput(format!(
            "Kozeny-Carman needs porosity in (0,1), got {phi}; treat phi>=1 as pure fluid"
        )));
    }
    let one_minus = 1.0 - phi;
    Ok(phi * phi * phi * d_p * d_p / (150.0 * one_minus * one_minus))
}

/// Ergun's Forchheimer constant C_F = 1.75 / sqrt(150 φ³).
pub fn ergun_cf(phi: f64) -> Result<f64> {
    if !(phi > 0.0 && phi <= 1.0) {
        return Err(Error::InvalidInput(format!("Ergun C_F needs porosity in (0,1], got {phi}")));
    }
    Ok(1.75 / (150.0 * phi * phi * phi).sqrt())
}

/// Darcy–Forchheimer drag f(u) = −(φ²ν/k)·u − (φ³ C_F/√k)·‖u‖·u.
///
/// Exactly zero for pure-fluid cells regardless of `u`.
#[inline]
pub fn drag_force(u: [f64; 3], cell: &CellDrag, nu: f64) -> [f64; 3] {
    if cell.pure_fluid {
        return [0.0; 3];
    }
    let phi = cell.phi;
    let darcy = phi * phi * nu / cell.k;
    let speed = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    let forch = phi * phi * phi * cell.c_f / cell.k.sqrt() * speed;
    let c = -(darcy + forch);
    [c * u[0], c * u[1], c * u[2]]
}

/// Recovers the true velocity u from the preliminary velocity v for scalar
/// permeability, via the closed form
/// u = v / (C₀ + sqrt(C₀² + C₁‖v‖)) with
/// C₀ = 1/2 + φνΔt/(4k) and C₁ = Δtφ²C_F/(2√k).
#[inline]
pub fn solve_velocity_isotropic(v_pre: [f64; 3], cell: &CellDrag, nu: f64, dt: f64) -> [f64; 3] {
    let (c0, c1) = if cell.pure_fluid {
        (0.5, 0.0)
    } else {
        (
            0.5 + cell.phi * nu * dt / (4.0 * cell.k),
            dt * cell.phi * cell.phi * cell.c_f / (2.0 * cell.k.sqrt()),
        )
    };
    solve_velocity_coeffs(v_pre, c0, c1)
}

/// The closed form above with precomputed coefficients (hot path).
#[inline]
pub fn solve_velocity_coeffs(v_pre: [f64; 3], c0: f64, c1: f64) -> [f64; 3] {
    let vn = (v_pre[0] * v_pre[0] + v_pre[1] * v_pre[1] + v_pre[2] * v_pre[2]).sqrt();
    let denom = c0 + (c0 * c0 + c1 * vn).sqrt();
    let s = 1.0 / denom;
    [v_pre[0] * s, v_pre[1] * s, v_pre[2] * s]
}

/// Result of the anisotropic fixed-point velocity solve.
#[derive(Debug, Clone, Copy)]
pub struct AnisotropicSolve {
    pub u: [f64; 3],
    pub iterations: usize,
    pub last_increment: f64,
}

/// Fixed-point iteration u_{m+1} = X_m⁻¹ v with
/// X_m = I + (φνΔt/2)K⁻¹ + (φ²C_FΔt/2)‖u_m‖K^{−1/2}
/// for a symmetric positive definite permeability tensor K.
///
/// K^{−1/2} is the inverse of the unique SPD square root of K. Iterate norms
/// never exceed ‖v‖ and successive increments contract.
#[allow(clippy::too_many_arguments)]
pub fn solve_velocity_anisotropic(
    v_pre: [f64; 3],
    k_tensor: &Matrix3<f64>,
    phi: f64,
    nu: f64,
    c_f: f64,
    dt: f64,
    u_init: [f64; 3],
    tol: f64,
    max_iter: usize,
) -> Result<AnisotropicSolve> {
    if tol <= 0.0 {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let sym_err = (k_tensor - k_tensor.transpose()).norm();
    if sym_err > 1e-12 * k_tensor.norm().max(1.0) {
        return Err(Error::InvalidInput("permeability tensor is not symmetric".into()));
    }
    let eig = nalgebra::SymmetricEigen::new(*k_tensor);
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::InvalidInput(format!(
            "permeability tensor is not positive definite (eigenvalues {:?})",
            eig.eigenvalues.as_slice()
        )));
    }
    let q = eig.eigenvectors;
    let k_inv = q * Matrix3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l)) * q.transpose();
    let k_inv_sqrt =
        q * Matrix3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * q.transpose();

    let v = Vector3::from(v_pre);
    let darcy_part = Matrix3::identity() + k_inv * (phi * nu * dt / 2.0);
    let forch_coeff = phi * phi * c_f * dt / 2.0;

    let mut u = Vector3::from(u_init);
    let mut last_increment = f64::INFINITY;
    for m in 0..max_iter {
        let x = darcy_part + k_inv_sqrt * (forch_coeff * u.norm());
        let u_next = x
            .lu()
            .solve(&v)
            .ok_or_else(|| Error::InvalidInput("singular iteration matrix".into()))?;
        last_increment = (u_next - u).norm();
        u = u_next;
        debug_assert!(u.norm() <= v.norm() * (1.0 + 1e-12));
        if last_increment <= tol {
            return Ok(AnisotropicSolve { u: [u.x, u.y, u.z], iterations: m + 1, last_increment });
        }
    }
    Err(Error::NonConvergence { iters: max_iter, residual: last_increment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TABLE1_DP: f64 = 1.25e-3;

    fn closure() -> PorousClosure {
        PorousClosure::default()
    }

    #[test]
    fn kozeny_carman_half_porosity() {
        let k = kozeny_carman_k(0.5, TABLE1_DP).unwrap();
        assert!((k - 5.2083e-9).abs() < 1e-13 * 5.2083e-9 + 1e-13, "{k:e}");
        // frozen from direct evaluation: 0.125 * (1.25e-3)^2 / (150 * 0.25)
        assert!((k - 0.125 * TABLE1_DP * TABLE1_DP / 37.5).abs() < 1e-24);
    }

    #[test]
    fn kozeny_carman_vanishes_monotonically_at_low_porosity() {
        let mut prev = 0.0;
        for i in 1..50 {
            let phi = i as f64 * 0.01;
            let k = kozeny_carman_k(phi, TABLE1_DP).unwrap();
            assert!(k > prev);
            prev = k;
        }
        assert!(kozeny_carman_k(1e-9, TABLE1_DP).unwrap() < 1e-30);
    }

    #[test]
    fn kozeny_carman_rejects_pure_fluid() {
        assert!(kozeny_carman_k(1.0, TABLE1_DP).is_err());
        assert!(kozeny_carman_k(1.5, TABLE1_DP).is_err());
    }

    #[test]
    fn pure_fluid_threshold_bypasses_drag() {
        let cell = CellDrag::from_porosity(0.999_999_999_5, TABLE1_DP, &closure());
        assert!(cell.pure_fluid);
        let f = drag_force([0.3, -0.2, 0.1], &cell, 0.8);
        assert_eq!(f, [0.0; 3]);
    }

    #[test]
    fn ergun_reference_values() {
        let cf1 = ergun_cf(1.0).unwrap();
        assert!((cf1 - 1.75 / 150.0f64.sqrt()).abs() < 1e-15);
        assert!((cf1 - 0.142887).abs() < 1e-6);
        let cf_half = ergun_cf(0.5).unwrap();
        assert!((cf_half - 0.404145).abs() < 1e-6);
    }

    #[test]
    fn ergun_monotone_decreasing() {
        let mut prev = f64::INFINITY;
        for i in 1..=100 {
            let cf = ergun_cf(i as f64 / 100.0).unwrap();
            assert!(cf < prev);
            prev = cf;
        }
        assert!(ergun_cf(0.0).is_err());
        assert!(ergun_cf(-0.2).is_err());
    }

    #[test]
    fn drag_zero_velocity() {
        let cell = CellDrag::from_porosity(0.5, 1.0, &closure());
        assert_eq!(drag_force([0.0; 3], &cell, 0.1), [0.0; 3]);
    }

    #[test]
    fn isotropic_solve_zero_and_pure_fluid() {
        let cell = CellDrag::from_porosity(0.4, 1.0, &closure());
        assert_eq!(solve_velocity_isotropic([0.0; 3], &cell, 0.1, 1.0), [0.0; 3]);
        let free = CellDrag::pure_fluid();
        let v = [0.07, -0.01, 0.02];
        let u = solve_velocity_isotropic(v, &free, 0.1, 1.0);
        for a in 0..3 {
            assert!((u[a] - v[a]).abs() < 1e-16);
        }
    }

    /// Residual oracle: the returned u must satisfy the implicit relation
    /// u = v + (Δt / 2φ) f(u) that defines the velocity moment.
    fn implicit_residual(v: [f64; 3], u: [f64; 3], cell: &CellDrag, nu: f64, dt: f64) -> f64 {
        let f = drag_force(u, cell, nu);
        let mut r2 = 0.0;
        for a in 0..3 {
            let rhs = v[a] + 0.5 * dt / cell.phi * f[a];
            r2 += (u[a] - rhs) * (u[a] - rhs);
        }
        let vn = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        r2.sqrt() / vn.max(1e-300)
    }

    proptest! {
        #[test]
        fn drag_is_dissipative(
            ux in -0.2f64..0.2, uy in -0.2f64..0.2, uz in -0.2f64..0.2,
            phi in 0.06f64..0.99, logk in -8.0f64..2.0,
        ) {
            let cell = CellDrag {
                k: 10f64.powf(logk),
                c_f: ergun_cf(phi).unwrap(),
                phi,
                pure_fluid: false,
            };
            let u = [ux, uy, uz];
            let f = drag_force(u, &cell, 0.05);
            let power = f[0] * u[0] + f[1] * u[1] + f[2] * u[2];
            prop_assert!(power <= 0.0);
        }

        #[test]
        fn isotropic_solve_satisfies_implicit_relation(
            vx in -0.15f64..0.15, vy in -0.15f64..0.15, vz in -0.15f64..0.15,
            phi in 0.1f64..0.99, logk in -6.0f64..2.0,
        ) {
            let cell = CellDrag {
                k: 10f64.powf(logk),
                c_f: ergun_cf(phi).unwrap(),
                phi,
                pure_fluid: false,
            };
            let nu = 0.02;
            let v = [vx, vy, vz];
            let u = solve_velocity_isotropic(v, &cell, nu, 1.0);
            prop_assert!(implicit_residual(v, u, &cell, nu, 1.0) < 1e-12);
            // drag never accelerates
            let un = (u[0]*u[0]+u[1]*u[1]+u[2]*u[2]).sqrt();
            let vn = (v[0]*v[0]+v[1]*v[1]+v[2]*v[2]).sqrt();
            prop_assert!(un <= vn * (1.0 + 1e-14));
        }

        #[test]
        fn isotropic_solve_rotation_equivariant(
            vx in -0.1f64..0.1, vy in -0.1f64..0.1, vz in -0.1f64..0.1,
            angle in 0.0f64..std::f64::consts::TAU,
        ) {
            // rotation around z
            let (s, c) = angle.sin_cos();
            let rot = |v: [f64;3]| [c*v[0]-s*v[1], s*v[0]+c*v[1], v[2]];
            let cell = CellDrag::from_porosity(0.5, 1.0, &closure());
            let v = [vx, vy, vz];
            let u_then_rot = rot(solve_velocity_isotropic(v, &cell, 0.05, 1.0));
            let rot_then_u = solve_velocity_isotropic(rot(v), &cell, 0.05, 1.0);
            for a in 0..3 {
                prop_assert!((u_then_rot[a] - rot_then_u[a]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn anisotropic_matches_isotropic_closed_form() {
        let phi = 0.55;
        let k = 3.7e-3;
        let cell = CellDrag { k, c_f: ergun_cf(phi).unwrap(), phi, pure_fluid: false };
        let nu = 0.03;
        let v = [0.08, -0.03, 0.05];
        let expect = solve_velocity_isotropic(v, &cell, nu, 1.0);
        let got = solve_velocity_anisotropic(
            v,
            &(Matrix3::identity() * k),
            phi,
            nu,
            cell.c_f,
            1.0,
            v,
            1e-15,
            200,
        )
        .unwrap();
        for a in 0..3 {
            assert!((got.u[a] - expect[a]).abs() < 1e-10 * expect[a].abs().max(1e-3));
        }
    }

    #[test]
    fn anisotropic_zero_preliminary_velocity() {
        let got = solve_velocity_anisotropic(
            [0.0; 3],
            &(Matrix3::identity() * 0.01),
            0.5,
            0.05,
            0.4,
            1.0,
            [0.0; 3],
            1e-14,
            10,
        )
        .unwrap();
        assert_eq!(got.u, [0.0; 3]);
        assert_eq!(got.iterations, 1);
    }

    #[test]
    fn anisotropic_rejects_non_spd() {
        let mut k = Matrix3::identity() * 0.01;
        k[(0, 1)] = 0.5; // asymmetric
        assert!(solve_velocity_anisotropic(
            [0.01; 3], &k, 0.5, 0.05, 0.4, 1.0, [0.0; 3], 1e-12, 50
        )
        .is_err());
        let neg = Matrix3::from_diagonal(&Vector3::new(0.01, -0.01, 0.01));
        assert!(solve_velocity_anisotropic(
            [0.01; 3], &neg, 0.5, 0.05, 0.4, 1.0, [0.0; 3], 1e-12, 50
        )
        .is_err());
    }

    #[test]
    fn anisotropic_increments_contract() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            // random SPD tensor K = A Aᵀ + eps I
            let a = Matrix3::from_fn(|_, _| rng.gen_range(-0.1..0.1));
            let k = a * a.transpose() + Matrix3::identity() * 1e-3;
            let v = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)];
            let phi: f64 = rng.gen_range(0.1..0.95);
            let c_f = ergun_cf(phi).unwrap();
            // replicate the iteration to observe increments
            let eig = nalgebra::SymmetricEigen::new(k);
            let q = eig.eigenvectors;
            let k_inv =
                q * Matrix3::from_diagonal(&eig.eigenvalues.map(|l: f64| 1.0 / l)) * q.transpose();
            let k_inv_sqrt = q
                * Matrix3::from_diagonal(&eig.eigenvalues.map(|l: f64| 1.0 / l.sqrt()))
                * q.transpose();
            let vv = Vector3::from(v);
            let base = Matrix3::identity() + k_inv * (phi * 0.02 / 2.0);
            let mut u = vv;
            let mut prev_inc = f64::INFINITY;
            for _ in 0..30 {
                let x: Matrix3<f64> = base + k_inv_sqrt * (phi * phi * c_f / 2.0 * u.norm());
                let u_next = x.lu().solve(&vv).unwrap();
                let inc = (u_next - u).norm();
                assert!(u_next.norm() <= vv.norm() * (1.0 + 1e-12));
                if prev_inc.is_finite() && inc > 1e-16 {
                    assert!(inc < prev_inc, "increments must strictly decrease: {inc} vs {prev_inc}");
                }
                prev_inc = inc;
                u = u_next;
                if inc < 1e-16 {
                    break;
                }
            }
        }
    }

    #[test]
    fn cell_drag_clamps_porosity_floor() {
        let cell = CellDrag::from_porosity(0.001, TABLE1_DP, &closure());
        assert_eq!(cell.phi, 0.05);
        assert!(cell.k > 0.0 && cell.k.is_finite());
    }
}
