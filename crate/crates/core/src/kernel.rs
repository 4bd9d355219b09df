//! The collide–stream kernel: macroscopic moments, equilibrium, SRT collision
//! with porosity-correction and Guo forcing terms, deviatoric stress
//! extraction and push streaming.
//!
//! Collision and streaming are fused into one data-parallel pass: each cell
//! reads its own 27 populations, collides them and scatters the results
//! through the precomputed target table (which also realizes half-way
//! bounce-back). The table is injective, so no two cells ever write the same
//! slot and results are bit-identical regardless of worker count.

use crate::domain::{SimulationDomain, DROPPED};
use crate::lattice::{Q, VELOCITIES, VELOCITIES_F, WEIGHTS};
use crate::porous::solve_velocity_coeffs;
use crate::rheology::{frobenius_sym, omega_from_mu_unclamped, OmegaClamp};
use rayon::prelude::*;
use std::sync::atomic::{AtomicBool, Ordering};

/// Per-cell macroscopic state after the collide phase.
#[derive(Debug, Clone, Copy)]
pub struct MacroCell {
    /// Volume-averaged density ρ = φ⁻¹ Σ f_i.
    pub rho: f64,
    /// Drag-corrected velocity.
    pub u: [f64; 3],
    /// Dynamic viscosity (lattice units).
    pub mu: f64,
    /// Relaxation rate used in this cell's latest collision.
    pub omega: f64,
}

impl MacroCell {
    /// Pressure p = c_s² ρ.
    #[inline]
    pub fn pressure(&self) -> f64 {
        crate::lattice::CS2 * self.rho
    }
}

/// Carreau–Yasuda evaluated directly in lattice units.
#[derive(Debug, Clone, Copy)]
pub struct CyLattice {
    pub mu_inf_lat: f64,
    pub mu_delta_lat: f64,
    /// λ expressed in time steps (λ_s / Δt_s): multiplies the lattice shear rate.
    pub lambda_steps: f64,
    /// (n − 1) / a.
    pub exponent: f64,
    pub a: f64,
}

impl CyLattice {
    #[inline]
    pub fn mu_lat(&self, gamma_dot_lat: f64) -> f64 {
        let x = (self.lambda_steps * gamma_dot_lat).powf(self.a);
        self.mu_inf_lat + self.mu_delta_lat * (1.0 + x).powf(self.exponent)
    }
}

/// Viscosity update mode.
#[derive(Debug, Clone, Copy)]
pub enum RheologyMode {
    /// Constant dynamic viscosity (lattice units).
    Newtonian { mu_lat: f64 },
    CarreauYasuda(CyLattice),
}

/// Everything the collide phase needs besides the domain.
#[derive(Debug, Clone)]
pub struct KernelParams {
    /// Uniform body acceleration in lattice units, added to the drag force.
    pub gravity: [f64; 3],
    pub rheology: RheologyMode,
    pub omega_clamp: OmegaClamp,
}

/// Equilibrium f_i^eq = w_i φ ρ (1 + 3c·u + 4.5(c·u)² − 1.5u·u) for one
/// direction.
#[inline]
pub fn equilibrium_dir(i: usize, phi: f64, rho: f64, u: [f64; 3]) -> f64 {
    let c = VELOCITIES[i];
    let cu = c[0] as f64 * u[0] + c[1] as f64 * u[1] + c[2] as f64 * u[2];
    let uu = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
    WEIGHTS[i] * phi * rho * (1.0 + 3.0 * cu + 4.5 * cu * cu - 1.5 * uu)
}

/// Full 27-direction equilibrium.
#[inline]
pub fn equilibrium(phi: f64, rho: f64, u: [f64; 3]) -> [f64; Q] {
    std::array::from_fn(|i| equilibrium_dir(i, phi, rho, u))
}

/// Raw moments of one cell: density ρ = φ⁻¹ Σ f_i and preliminary velocity
/// v = (φρ)⁻¹ Σ f_i c_i.
#[inline]
pub fn moments(f_cell: &[f64], phi: f64) -> (f64, [f64; 3]) {
    debug_assert_eq!(f_cell.len(), Q);
    let mut phirho = 0.0;
    let mut mom = [0.0; 3];
    for i in 0..Q {
        let fi = f_cell[i];
        phirho += fi;
        let c = VELOCITIES[i];
        mom[0] += fi * c[0] as f64;
        mom[1] += fi * c[1] as f64;
        mom[2] += fi * c[2] as f64;
    }
    let rho = phirho / phi;
    let inv = 1.0 / phirho;
    (rho, [mom[0] * inv, mom[1] * inv, mom[2] * inv])
}

/// Guo forcing term for one direction:
/// Ω_i^f = Δt w_i ρ (1 − ω/2) [ (c_i − u)/c_s² + (c_i·u)c_i/c_s⁴ ] · F.
#[inline]
pub fn guo_forcing_dir(i: usize, rho: f64, u: [f64; 3], force: [f64; 3], omega: f64) -> f64 {
    let c = VELOCITIES[i];
    let cf = c[0] as f64 * force[0] + c[1] as f64 * force[1] + c[2] as f64 * force[2];
    let cu = c[0] as f64 * u[0] + c[1] as f64 * u[1] + c[2] as f64 * u[2];
    let uf = u[0] * force[0] + u[1] * force[1] + u[2] * force[2];
    WEIGHTS[i] * rho * (1.0 - 0.5 * omega) * (3.0 * (cf - uf) + 9.0 * cu * cf)
}

/// Deviatoric stress from the non-equilibrium populations:
/// σ = (ω/2 − 1) [ Σ_i (f_i − f_i^eq) c_i⊗c_i + (Δt/2) ρ (F⊗u + u⊗F) ]
/// with the *previous* relaxation rate. Returned as [xx, yy, zz, xy, xz, yz].
#[inline]
pub fn deviatoric_stress(
    f_cell: &[f64],
    feq: &[f64; Q],
    rho: f64,
    u: [f64; 3],
    force: [f64; 3],
    omega_prev: f64,
) -> [f64; 6] {
    let mut s = [0.0f64; 6];
    for i in 0..Q {
        let fneq = f_cell[i] - feq[i];
        let [cx, cy, cz] = VELOCITIES_F[i];
        s[0] += fneq * cx * cx;
        s[1] += fneq * cy * cy;
        s[2] += fneq * cz * cz;
        s[3] += fneq * cx * cy;
        s[4] += fneq * cx * cz;
        s[5] += fneq * cy * cz;
    }
    s[0] += rho * force[0] * u[0];
    s[1] += rho * force[1] * u[1];
    s[2] += rho * force[2] * u[2];
    s[3] += 0.5 * rho * (force[0] * u[1] + u[0] * force[1]);
    s[4] += 0.5 * rho * (force[0] * u[2] + u[0] * force[2]);
    s[5] += 0.5 * rho * (force[1] * u[2] + u[1] * force[2]);
    let pref = 0.5 * omega_prev - 1.0;
    for v in s.iter_mut() {
        *v *= pref;
    }
    s
}

/// First numerical problem found by a pass, in deterministic cell order.
#[derive(Debug, Clone)]
pub struct BlowUp {
    pub cell: usize,
    pub what: String,
}

/// Shared scatter target for the streaming writes. Soundness rests on the
/// injectivity of `SimulationDomain::stream_target`: every slot has at most
/// one writer per step.
struct ScatterBuf {
    ptr: *mut f64,
    len: usize,
}

unsafe impl Sync for ScatterBuf {}

impl ScatterBuf {
    #[inline]
    unsafe fn write(&self, idx: usize, v: f64) {
        debug_assert!(idx < self.len);
        *self.ptr.add(idx) = v;
    }
}

/// Per-cell collision result.
struct CellOutcome {
    vals: [f64; Q],
    mac: MacroCell,
    sigma: [f64; 6],
    finite: bool,
}

/// Cell-local collision; `None` signals a non-positive or non-finite cell
/// mass. Shared by the parallel pass and the serial blow-up rescan.
#[inline(always)]
fn collide_cell(
    fc: &[f64; Q],
    idx: usize,
    dom: &SimulationDomain,
    params: &KernelParams,
    mu_prev: f64,
    omega_prev: f64,
    needs_sigma: bool,
) -> Option<CellOutcome> {
    let phi = dom.phi[idx];
    let mut phirho = 0.0;
    let mut mom = [0.0f64; 3];
    for i in 0..Q {
        let fi = fc[i];
        let c = VELOCITIES_F[i];
        phirho += fi;
        mom[0] += fi * c[0];
        mom[1] += fi * c[1];
        mom[2] += fi * c[2];
    }
    if !(phirho > 1e-12) || !phirho.is_finite() {
        return None;
    }
    let rho = phirho / phi;
    let inv_phirho = 1.0 / phirho;
    let gravity = params.gravity;
    let half_over_phi = 0.5 / phi;
    let v = [
        mom[0] * inv_phirho + half_over_phi * gravity[0],
        mom[1] * inv_phirho + half_over_phi * gravity[1],
        mom[2] * inv_phirho + half_over_phi * gravity[2],
    ];
    let dc = dom.drag[idx];
    let u = solve_velocity_coeffs(v, dc.c0, dc.c1);
    let speed = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    let drag_c = -(dc.darcy + dc.forch * speed);
    let force = [
        drag_c * u[0] + gravity[0],
        drag_c * u[1] + gravity[1],
        drag_c * u[2] + gravity[2],
    ];

    // equilibrium, expanded in place (phirho = φρ)
    let uu = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
    let mut feq = [0.0f64; Q];
    for i in 0..Q {
        let c = VELOCITIES_F[i];
        let cu = c[0] * u[0] + c[1] * u[1] + c[2] * u[2];
        feq[i] = WEIGHTS[i] * phirho * (1.0 + 3.0 * cu + 4.5 * cu * cu - 1.5 * uu);
    }

    let mut sigma = [0.0f64; 6];
    if needs_sigma {
        sigma = deviatoric_stress(fc, &feq, rho, u, force, omega_prev);
    }

    let (mu_new, omega_new) = match params.rheology {
        RheologyMode::Newtonian { mu_lat } => (mu_lat, omega_from_mu_unclamped(mu_lat, rho)),
        RheologyMode::CarreauYasuda(cy) => {
            let gamma = frobenius_sym(&sigma) / mu_prev;
            let mu = cy.mu_lat(gamma);
            (mu, omega_from_mu_unclamped(mu, rho))
        }
    };
    let omega_new = params.omega_clamp.apply(omega_new);

    let guo_pref = rho * (1.0 - 0.5 * omega_new);
    let uf = u[0] * force[0] + u[1] * force[1] + u[2] * force[2];
    let mut vals = [0.0f64; Q];
    let mut check = 0.0f64;
    if dom.phi_varies[idx] {
        for i in 0..Q {
            let c = VELOCITIES_F[i];
            let cf = c[0] * force[0] + c[1] * force[1] + c[2] * force[2];
            let cu = c[0] * u[0] + c[1] * u[1] + c[2] * u[2];
            let nb_phi = match dom.neighbor(idx, VELOCITIES[i]) {
                Some(nb) if !dom.flags[nb].is_solid() => dom.phi[nb],
                _ => phi,
            };
            let val = fc[i] - omega_new * (fc[i] - feq[i])
                + WEIGHTS[i] * (guo_pref * (3.0 * (cf - uf) + 9.0 * cu * cf) + rho * (nb_phi - phi));
            check += val;
            vals[i] = val;
        }
    } else {
        for i in 0..Q {
            let c = VELOCITIES_F[i];
            let cf = c[0] * force[0] + c[1] * force[1] + c[2] * force[2];
            let cu = c[0] * u[0] + c[1] * u[1] + c[2] * u[2];
            let val = fc[i] - omega_new * (fc[i] - feq[i])
                + WEIGHTS[i] * guo_pref * (3.0 * (cf - uf) + 9.0 * cu * cf);
            check += val;
            vals[i] = val;
        }
    }
    Some(CellOutcome {
        vals,
        mac: MacroCell { rho, u, mu: mu_new, omega: omega_new },
        sigma,
        finite: check.is_finite(),
    })
}

/// Fused collide+stream: collides every fluid cell of `f` and scatters the
/// post-collision populations into `f_next` through the target table.
/// Fresh macroscopic fields land in `macros`/`sigma` cell-locally.
///
/// Slots in `f_next` that no cell streams into (open-boundary
/// reconstructions) keep their previous content; the boundary pass overwrites
/// them before they are read. `track_sigma` controls whether the deviatoric
/// stress is stored; the Carreau–Yasuda update needs it every step, Newtonian
/// runs only on observable steps.
pub fn collide_stream(
    f: &[f64],
    f_next: &mut [f64],
    macros: &mut [MacroCell],
    sigma: &mut [[f64; 6]],
    dom: &SimulationDomain,
    params: &KernelParams,
    track_sigma: bool,
) -> Option<BlowUp> {
    assert_eq!(f.len(), dom.n_cells() * Q);
    assert_eq!(f_next.len(), f.len());
    let trouble = AtomicBool::new(false);
    let needs_sigma = track_sigma || matches!(params.rheology, RheologyMode::CarreauYasuda(_));
    let scatter = ScatterBuf { ptr: f_next.as_mut_ptr(), len: f_next.len() };
    let scatter_ref = &scatter;

    macros
        .par_iter_mut()
        .zip(sigma.par_iter_mut())
        .enumerate()
        .with_min_len(1024)
        .for_each(|(idx, (mac, sig))| {
            if dom.flags[idx].is_solid() {
                return;
            }
            let base = idx * Q;
            let fc: &[f64; Q] = f[base..base + Q].try_into().unwrap();
            match collide_cell(fc, idx, dom, params, mac.mu, mac.omega, needs_sigma) {
                Some(out) => {
                    if !out.finite {
                        trouble.store(true, Ordering::Relaxed);
                        return;
                    }
                    let targets: &[u32; Q] = dom.stream_target[base..base + Q].try_into().unwrap();
                    for i in 0..Q {
                        let target = targets[i];
                        if target != DROPPED {
                            // SAFETY: stream_target is injective over
                            // non-dropped entries; this slot has no other
                            // writer this pass.
                            unsafe { scatter_ref.write(target as usize, out.vals[i]) };
                        }
                    }
                    *mac = out.mac;
                    if needs_sigma {
                        *sig = out.sigma;
                    }
                }
                None => {
                    trouble.store(true, Ordering::Relaxed);
                }
            }
        });

    if trouble.load(Ordering::Relaxed) {
        // deterministic report: rescan serially in cell order. The macro
        // fields of flagged cells were not overwritten, so the rescan sees
        // the same previous-step viscosity state.
        for idx in 0..dom.n_cells() {
            if dom.flags[idx].is_solid() {
                continue;
            }
            let base = idx * Q;
            let fc: &[f64; Q] = f[base..base + Q].try_into().unwrap();
            match collide_cell(fc, idx, dom, params, macros[idx].mu, macros[idx].omega, needs_sigma)
            {
                Some(out) if out.finite => {}
                Some(_) => {
                    return Some(BlowUp {
                        cell: idx,
                        what: "non-finite post-collision population".into(),
                    });
                }
                None => {
                    let phirho: f64 = fc.iter().sum();
                    return Some(BlowUp {
                        cell: idx,
                        what: format!("non-positive or non-finite cell mass φρ = {phirho:e}"),
                    });
                }
            }
        }
        return Some(BlowUp { cell: 0, what: "numerical trouble flagged but not localized".into() });
    }
    None
}

/// Pure streaming through the target table, no collision. Diagnostic path:
/// populations are moved (or reflected) verbatim, never altered.
pub fn stream_only(f: &[f64], f_next: &mut [f64], dom: &SimulationDomain) {
    for idx in 0..dom.n_cells() {
        if dom.flags[idx].is_solid() {
            continue;
        }
        let base = idx * Q;
        for i in 0..Q {
            let target = dom.stream_target[base + i];
            if target != DROPPED {
                f_next[target as usize] = f[base + i];
            }
        }
    }
}

/// Initializes populations to equilibrium at rest: f = f_eq(φ, ρ = 1, u = 0).
pub fn initialize_rest(f: &mut [f64], dom: &SimulationDomain) {
    for idx in 0..dom.n_cells() {
        let base = idx * Q;
        if dom.flags[idx].is_solid() {
            for i in 0..Q {
                f[base + i] = 0.0;
            }
        } else {
            let feq = equilibrium(dom.phi[idx], 1.0, [0.0; 3]);
            f[base..base + Q].copy_from_slice(&feq);
        }
    }
}
