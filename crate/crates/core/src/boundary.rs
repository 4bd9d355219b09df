//! Wall, inlet and outlet treatments.
//!
//! No-slip walls use half-way bounce-back, realized inside the precomputed
//! streaming table (see `SimulationDomain::build_tables`): a population that
//! would stream into a solid cell is reflected into the opposite direction at
//! its origin cell. Inlet planes impose a velocity with the Zou–He
//! (non-equilibrium bounce-back) closure; outlets extrapolate the unknown
//! populations from interior neighbors to avoid spurious reflections.

use crate::domain::{BoundaryPatch, SimulationDomain};
use crate::error::{Error, Result};
use crate::kernel::equilibrium_dir;
use crate::lattice::{self, Q};
use serde::{Deserialize, Serialize};
use std::io::BufReader;
use std::path::Path;

/// Tabulated periodic inflow waveform with a pre-run ramp.
#[derive(Debug, Clone)]
pub struct InflowWaveform {
    /// Ordered (t, v) pairs with t[0] = 0 and t.last() = period; the final
    /// row closes the cycle.
    pub samples: Vec<(f64, f64)>,
    pub period_s: f64,
    pub ramp_steps: u64,
    pub ramp_shape: RampShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RampShape {
    #[default]
    Linear,
    Smoothstep,
}

impl InflowWaveform {
    pub fn from_samples(
        samples: Vec<(f64, f64)>,
        ramp_steps: u64,
        ramp_shape: RampShape,
    ) -> Result<InflowWaveform> {
        if samples.len() < 2 {
            return Err(Error::Config("waveform needs at least 2 samples".into()));
        }
        if samples[0].0 != 0.0 {
            return Err(Error::Config("waveform must start at t = 0".into()));
        }
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config("waveform times must be strictly increasing".into()));
        }
        if samples.iter().any(|&(_, v)| !v.is_finite()) {
            return Err(Error::Config("waveform velocities must be finite".into()));
        }
        let period_s = samples.last().unwrap().0;
        if (samples[0].1 - samples.last().unwrap().1).abs() > 1e-9 * samples[0].1.abs().max(1.0) {
            log::warn!("waveform does not close periodically: v(0) != v(period)");
        }
        Ok(InflowWaveform { samples, period_s, ramp_steps, ramp_shape })
    }

    /// Constant-velocity waveform (steady inflow).
    pub fn constant(v_m_s: f64, period_s: f64, ramp_steps: u64) -> InflowWaveform {
        InflowWaveform {
            samples: vec![(0.0, v_m_s), (period_s, v_m_s)],
            period_s,
            ramp_steps,
            ramp_shape: RampShape::Linear,
        }
    }

    /// Reads the waveform CSV (`t_seconds,v_m_per_s`, ≥ 2 rows, strictly
    /// increasing t, first row at t = 0).
    pub fn read_csv(path: &Path, ramp_steps: u64, ramp_shape: RampShape) -> Result<InflowWaveform> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(BufReader::new(file));
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            if rec.len() != 2 {
                return Err(Error::format(path, format!("expected 2 columns, got {}", rec.len())));
            }
            let t = rec[0].trim().parse::<f64>().map_err(|e| Error::format(path, e.to_string()))?;
            let v = rec[1].trim().parse::<f64>().map_err(|e| Error::format(path, e.to_string()))?;
            samples.push((t, v));
        }
        Self::from_samples(samples, ramp_steps, ramp_shape)
            .map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write_csv(samples: &[(f64, f64)], path: &Path) -> Result<()> {
        use std::io::Write;
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        (|| -> std::io::Result<()> {
            writeln!(w, "t_seconds,v_m_per_s")?;
            for (t, v) in samples {
                writeln!(w, "{t:.9e},{v:.9e}")?;
            }
            w.flush()
        })()
        .map_err(|e| Error::io(path, e))
    }

    /// Peak |v| over one period.
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, &(_, v)| m.max(v.abs()))
    }

    /// Mean velocity at time `t_s`. Negative times are the pre-run ramp:
    /// v(0) scaled from 0 at t = −ramp_duration to full value at t = 0.
    pub fn sample(&self, t_s: f64, ramp_duration_s: f64) -> f64 {
        if t_s < 0.0 {
            let s = if ramp_duration_s > 0.0 {
                ((t_s + ramp_duration_s) / ramp_duration_s).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let factor = match self.ramp_shape {
                RampShape::Linear => s,
                RampShape::Smoothstep => s * s * (3.0 - 2.0 * s),
            };
            return factor * self.samples[0].1;
        }
        let t = t_s.rem_euclid(self.period_s);
        let hi = self.samples.partition_point(|&(ts, _)| ts <= t);
        if hi == 0 {
            return self.samples[0].1;
        }
        if hi >= self.samples.len() {
            return self.samples.last().unwrap().1;
        }
        let (t0, v0) = self.samples[hi - 1];
        let (t1, v1) = self.samples[hi];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

/// Hagen–Poiseuille profile u_⊥(r) = 2 v_mean (1 − r²/R²), zero outside R.
#[inline]
pub fn poiseuille_profile(r: f64, radius: f64, v_mean: f64) -> f64 {
    if r > radius {
        0.0
    } else {
        2.0 * v_mean * (1.0 - r * r / (radius * radius))
    }
}

/// Precomputed per-cell inlet data: Poiseuille factor relative to the mean
/// velocity, so the target speed is `factor * v(t)`.
#[derive(Debug, Clone)]
pub struct InletProfile {
    pub factors: Vec<f64>,
    pub inward: [f64; 3],
}

impl InletProfile {
    pub fn build(dom: &SimulationDomain, patch: &BoundaryPatch) -> InletProfile {
        let n = patch.inward_normal();
        let inward = [n[0] as f64, n[1] as f64, n[2] as f64];
        let factors = patch
            .cells
            .iter()
            .map(|&cell| {
                let (x, y, z) = dom.coords(cell as usize);
                let p = [x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5];
                let mut r2 = 0.0;
                for a in 0..3 {
                    if a != patch.normal_axis {
                        r2 += (p[a] - patch.center[a]) * (p[a] - patch.center[a]);
                    }
                }
                poiseuille_profile(r2.sqrt(), patch.radius, 1.0)
            })
            .collect();
        InletProfile { factors, inward }
    }
}

/// Zou–He velocity inlet: reconstructs the unknown incoming populations on an
/// axis-aligned plane so the cell's moments match the target velocity and the
/// locally computed density (non-equilibrium bounce-back with transverse
/// momentum correction).
///
/// `targets` holds the lattice target velocity per patch cell. Patch cells
/// must be pure fluid (φ = 1, no drag).
pub fn zou_he_apply(f: &mut [f64], patch: &BoundaryPatch, targets: &[[f64; 3]]) {
    let axis = patch.normal_axis;
    let sign = patch.inward_sign;
    for (ci, &cell) in patch.cells.iter().enumerate() {
        let u = targets[ci];
        let base = cell as usize * Q;
        let u_n = u[axis] * sign as f64;
        let mut s0 = 0.0;
        let mut s_out = 0.0;
        for i in 0..Q {
            let ca = lattice::VELOCITIES[i][axis];
            if ca == 0 {
                s0 += f[base + i];
            } else if ca == -sign {
                s_out += f[base + i];
            }
        }
        let rho = (s0 + 2.0 * s_out) / (1.0 - u_n);
        // non-equilibrium bounce-back for the unknown set
        for i in 0..Q {
            if lattice::VELOCITIES[i][axis] == sign {
                let opp = lattice::OPPOSITE[i];
                f[base + i] =
                    f[base + opp] + equilibrium_dir(i, 1.0, rho, u) - equilibrium_dir(opp, 1.0, rho, u);
            }
        }
        // cancel the residual transverse momentum within the unknown set
        for t_axis in 0..3 {
            if t_axis == axis {
                continue;
            }
            let mut m_t = 0.0;
            for i in 0..Q {
                m_t += f[base + i] * lattice::VELOCITIES[i][t_axis] as f64;
            }
            let excess = (m_t - rho * u[t_axis]) / 6.0;
            for i in 0..Q {
                if lattice::VELOCITIES[i][axis] == sign {
                    let ct = lattice::VELOCITIES[i][t_axis];
                    if ct == 1 {
                        f[base + i] -= excess;
                    } else if ct == -1 {
                        f[base + i] += excess;
                    }
                }
            }
        }
    }
}

/// Outlet scheme for the unknown populations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutletScheme {
    /// First-order linear extrapolation from the two interior neighbors.
    #[default]
    LinearExtrapolation,
    /// Copy from the first interior neighbor.
    ZeroGradient,
}

/// Extrapolation outflow: sets each unknown incoming population on the outlet
/// plane from the same-direction populations of the interior neighbor cells
/// along the patch normal.
pub fn extrapolation_outlet(
    f: &mut [f64],
    dom: &SimulationDomain,
    patch: &BoundaryPatch,
    scheme: OutletScheme,
) {
    let inward = patch.inward_normal();
    let dirs = patch.incoming_dirs();
    for &cell in &patch.cells {
        let n1 = dom.neighbor(cell as usize, inward).expect("validated: 3 cells deep");
        let n2 = dom.neighbor(n1, inward).expect("validated: 3 cells deep");
        for &i in &dirs {
            let v = match scheme {
                OutletScheme::LinearExtrapolation => 2.0 * f[n1 * Q + i] - f[n2 * Q + i],
                OutletScheme::ZeroGradient => f[n1 * Q + i],
            };
            f[cell as usize * Q + i] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CellFlag, PatchKind};
    use crate::kernel::equilibrium;

    fn make_waveform() -> InflowWaveform {
        InflowWaveform::from_samples(
            vec![(0.0, 0.10), (0.25, 0.30), (0.5, 0.20), (0.75, 0.15), (1.0, 0.10)],
            1500,
            RampShape::Linear,
        )
        .unwrap()
    }

    #[test]
    fn waveform_periodicity_and_interpolation() {
        let w = make_waveform();
        assert!((w.sample(1.0, 0.0) - w.sample(0.0, 0.0)).abs() < 1e-15);
        assert!((w.sample(2.5, 0.0) - w.sample(0.5, 0.0)).abs() < 1e-12);
        // midpoint between samples -> arithmetic mean
        let mid = w.sample(0.125, 0.0);
        assert!((mid - 0.20).abs() < 1e-12);
    }

    #[test]
    fn waveform_ramp_scales_value_at_zero() {
        let w = make_waveform();
        let ramp = 0.0162; // 1500 steps at 10.8 us
        assert!((w.sample(-ramp / 2.0, ramp) - 0.5 * 0.10).abs() < 1e-12);
        assert!(w.sample(-ramp, ramp).abs() < 1e-15);
        assert!((w.sample(0.0, ramp) - 0.10).abs() < 1e-15);
    }

    #[test]
    fn waveform_rejects_bad_input() {
        assert!(InflowWaveform::from_samples(vec![(0.0, 1.0)], 0, RampShape::Linear).is_err());
        assert!(
            InflowWaveform::from_samples(vec![(0.1, 1.0), (0.2, 1.0)], 0, RampShape::Linear).is_err()
        );
        assert!(InflowWaveform::from_samples(
            vec![(0.0, 1.0), (0.2, 1.0), (0.2, 2.0)],
            0,
            RampShape::Linear
        )
        .is_err());
    }

    #[test]
    fn poiseuille_centerline_wall_and_mean() {
        assert_eq!(poiseuille_profile(0.0, 2.0, 0.3), 0.6);
        assert_eq!(poiseuille_profile(2.0, 2.0, 0.3), 0.0);
        assert_eq!(poiseuille_profile(3.0, 2.0, 0.3), 0.0);
        // disk average of the profile = v_mean (midpoint quadrature oracle)
        let radius = 1.0;
        let v_mean = 0.25;
        let n = 4000;
        let mut sum = 0.0;
        let mut area = 0.0;
        for k in 0..n {
            let r = (k as f64 + 0.5) / n as f64 * radius;
            let ring = 2.0 * std::f64::consts::PI * r * (radius / n as f64);
            sum += poiseuille_profile(r, radius, v_mean) * ring;
            area += ring;
        }
        assert!((sum / area - v_mean).abs() < 1e-6);
    }

    /// Small bounded box, fluid everywhere, with an inlet plane at z=0.
    fn test_patch_domain() -> (SimulationDomain, BoundaryPatch) {
        let mut dom = SimulationDomain::periodic_uniform([4, 4, 5], 1.0);
        dom.periodic = [true, true, false];
        let mut cells = Vec::new();
        for y in 0..4 {
            for x in 0..4 {
                let idx = dom.index(x, y, 0);
                dom.flags[idx] = CellFlag::Inlet;
                cells.push(idx as u32);
            }
        }
        dom.build_tables();
        let patch = BoundaryPatch {
            kind: PatchKind::Inlet,
            cells,
            normal_axis: 2,
            inward_sign: 1,
            center: [2.0, 2.0, 0.5],
            radius: (16.0 / std::f64::consts::PI).sqrt(),
        };
        (dom, patch)
    }

    #[test]
    fn zou_he_imposes_target_moments_exactly() {
        let (dom, patch) = test_patch_domain();
        let n = dom.n_cells();
        let mut f = vec![0.0; n * Q];
        // start from a non-trivial state
        for cell in 0..n {
            let u = [0.01, -0.02, 0.015];
            let feq = equilibrium(1.0, 1.03, u);
            f[cell * Q..cell * Q + Q].copy_from_slice(&feq);
        }
        let targets: Vec<[f64; 3]> =
            patch.cells.iter().map(|_| [0.0, 0.0, 0.04]).collect();
        zou_he_apply(&mut f, &patch, &targets);
        for (ci, &cell) in patch.cells.iter().enumerate() {
            let base = cell as usize * Q;
            let rho: f64 = f[base..base + Q].iter().sum();
            let mut m = [0.0; 3];
            for i in 0..Q {
                for a in 0..3 {
                    m[a] += f[base + i] * lattice::VELOCITIES[i][a] as f64;
                }
            }
            for a in 0..3 {
                let u = m[a] / rho;
                assert!(
                    (u - targets[ci][a]).abs() < 1e-10,
                    "axis {a}: imposed {u} vs target {}",
                    targets[ci][a]
                );
            }
        }
    }

    #[test]
    fn zou_he_zero_target_has_zero_net_flux() {
        let (dom, patch) = test_patch_domain();
        let n = dom.n_cells();
        let mut f = vec![0.0; n * Q];
        for cell in 0..n {
            let feq = equilibrium(1.0, 1.0, [0.005, 0.003, -0.01]);
            f[cell * Q..cell * Q + Q].copy_from_slice(&feq);
        }
        let targets: Vec<[f64; 3]> = patch.cells.iter().map(|_| [0.0; 3]).collect();
        zou_he_apply(&mut f, &patch, &targets);
        let mut flux = 0.0;
        for &cell in &patch.cells {
            let base = cell as usize * Q;
            for i in 0..Q {
                flux += f[base + i] * lattice::VELOCITIES[i][2] as f64;
            }
        }
        assert!(flux.abs() < 1e-12, "net flux {flux}");
    }

    /// Outlet domain: bounded along z with the outlet plane at the far face.
    fn outlet_domain() -> (SimulationDomain, BoundaryPatch) {
        let mut dom = SimulationDomain::periodic_uniform([3, 3, 6], 1.0);
        dom.periodic = [true, true, false];
        let mut cells = Vec::new();
        for y in 0..3 {
            for x in 0..3 {
                let idx = dom.index(x, y, 5);
                dom.flags[idx] = CellFlag::Outlet;
                cells.push(idx as u32);
            }
        }
        dom.build_tables();
        let patch = BoundaryPatch {
            kind: PatchKind::Outlet,
            cells,
            normal_axis: 2,
            inward_sign: -1,
            center: [1.5, 1.5, 5.5],
            radius: 1.7,
        };
        (dom, patch)
    }

    #[test]
    fn outlet_preserves_uniform_field_exactly() {
        let (dom, patch) = outlet_domain();
        let n = dom.n_cells();
        let feq = equilibrium(1.0, 1.0, [0.0, 0.0, 0.05]);
        let mut f = vec![0.0; n * Q];
        for cell in 0..n {
            f[cell * Q..cell * Q + Q].copy_from_slice(&feq);
        }
        let before = f.clone();
        extrapolation_outlet(&mut f, &dom, &patch, OutletScheme::LinearExtrapolation);
        assert_eq!(f, before);
    }

    #[test]
    fn outlet_reproduces_linear_ramp_exactly() {
        let (dom, patch) = outlet_domain();
        let n = dom.n_cells();
        let mut f = vec![0.0; n * Q];
        for cell in 0..n {
            let (_, _, z) = dom.coords(cell);
            for i in 0..Q {
                f[cell * Q + i] = 0.1 + 0.01 * z as f64 + 0.001 * i as f64;
            }
        }
        // wipe the unknowns, then reconstruct
        let dirs = patch.incoming_dirs();
        for &cell in &patch.cells {
            for &i in &dirs {
                f[cell as usize * Q + i] = f64::NAN;
            }
        }
        extrapolation_outlet(&mut f, &dom, &patch, OutletScheme::LinearExtrapolation);
        for &cell in &patch.cells {
            for &i in &dirs {
                let expect = 0.1 + 0.01 * 5.0 + 0.001 * i as f64;
                let got = f[cell as usize * Q + i];
                assert!((got - expect).abs() < 1e-14, "dir {i}: {got} vs {expect}");
            }
        }
    }

    #[test]
    fn outlet_zero_gradient_copies_neighbor() {
        let (dom, patch) = outlet_domain();
        let n = dom.n_cells();
        let mut f = vec![0.0; n * Q];
        for cell in 0..n {
            let (_, _, z) = dom.coords(cell);
            for i in 0..Q {
                f[cell * Q + i] = (z * Q + i) as f64;
            }
        }
        extrapolation_outlet(&mut f, &dom, &patch, OutletScheme::ZeroGradient);
        let dirs = patch.incoming_dirs();
        for &cell in &patch.cells {
            for &i in &dirs {
                assert_eq!(f[cell as usize * Q + i], (4 * Q + i) as f64);
            }
        }
    }
}
