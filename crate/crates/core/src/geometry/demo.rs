//! Synthetic "sphere-on-tube" aneurysm generator plus a random-walk coil
//! generator, so the full pipeline runs without patient data.

use super::{CoilWire, VoxelLabel, VoxelMask};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Parameters of the synthetic geometry.
#[derive(Debug, Clone)]
pub struct DemoSpec {
    pub dims: [usize; 3],
    pub dx_m: f64,
    /// Parent vessel radius.
    pub tube_radius_m: f64,
    /// Aneurysm sac radius.
    pub sac_radius_m: f64,
    /// Coil wire diameter.
    pub wire_diameter_m: f64,
}

impl DemoSpec {
    /// A 64³-scale default: 0.6 mm parent vessel with a 0.9 mm sac.
    pub fn default_64() -> DemoSpec {
        DemoSpec {
            dims: [64, 64, 96],
            dx_m: 50e-6,
            tube_radius_m: 0.6e-3,
            sac_radius_m: 0.9e-3,
            wire_diameter_m: 0.2e-3,
        }
    }

    fn tube_center_vox(&self) -> [f64; 2] {
        let rt = self.tube_radius_m / self.dx_m;
        [self.dims[0] as f64 / 2.0, rt + 3.0]
    }

    fn sac_center_vox(&self) -> [f64; 3] {
        let [cx, cy] = self.tube_center_vox();
        let rt = self.tube_radius_m / self.dx_m;
        let rs = self.sac_radius_m / self.dx_m;
        // sac overlaps the tube wall; neck opening ~0.8 rs wide
        [cx, cy + rt + 0.6 * rs, self.dims[2] as f64 / 2.0]
    }

    pub fn validate(&self) -> Result<()> {
        let [cx, cy] = self.tube_center_vox();
        let rt = self.tube_radius_m / self.dx_m;
        let rs = self.sac_radius_m / self.dx_m;
        let sc = self.sac_center_vox();
        if cx - rt < 1.0
            || cy - rt < 1.0
            || cx + rt > self.dims[0] as f64 - 1.0
            || sc[1] + rs > self.dims[1] as f64 - 1.0
            || sc[2] + rs > self.dims[2] as f64 - 1.0
            || sc[2] - rs < 1.0
        {
            return Err(Error::Config(
                "demo geometry does not fit the requested grid with a closed solid shell".into(),
            ));
        }
        Ok(())
    }
}

/// Builds the vessel mask (tube + sac, with inlet/outlet disks at the tube
/// ends) and the sac region mask (sphere minus tube) used for averages.
pub fn build_demo_mask(spec: &DemoSpec) -> Result<(VoxelMask, VoxelMask)> {
    spec.validate()?;
    let [nx, ny, nz] = spec.dims;
    let mut mask = VoxelMask::new(spec.dims, spec.dx_m, [0.0; 3]);
    let mut sac = VoxelMask::new(spec.dims, spec.dx_m, [0.0; 3]);
    let [cx, cy] = spec.tube_center_vox();
    let sc = spec.sac_center_vox();
    let rt = spec.tube_radius_m / spec.dx_m;
    let rs = spec.sac_radius_m / spec.dx_m;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let px = x as f64 + 0.5;
                let py = y as f64 + 0.5;
                let pz = z as f64 + 0.5;
                let in_tube = {
                    let dx = px - cx;
                    let dy = py - cy;
                    dx * dx + dy * dy < rt * rt
                };
                let in_sac = {
                    let dx = px - sc[0];
                    let dy = py - sc[1];
                    let dz = pz - sc[2];
                    dx * dx + dy * dy + dz * dz < rs * rs
                };
                if in_tube && z == 0 {
                    mask.set(x, y, z, VoxelLabel::Inlet);
                } else if in_tube && z == nz - 1 {
                    mask.set(x, y, z, VoxelLabel::Outlet);
                } else if in_tube || (in_sac && z > 0 && z < nz - 1) {
                    mask.set(x, y, z, VoxelLabel::Fluid);
                }
                if in_sac && !in_tube && z > 0 && z < nz - 1 {
                    sac.set(x, y, z, VoxelLabel::Fluid);
                }
            }
        }
    }
    Ok((mask, sac))
}

/// Generates a random-walk coil inside the sac whose analytic packing density
/// hits `packing` (wire volume / sac fluid volume). Deterministic in the seed.
pub fn generate_coil(spec: &DemoSpec, sac_mask: &VoxelMask, packing: f64, seed: u64) -> Result<CoilWire> {
    if !(packing > 0.0 && packing < 0.6) {
        return Err(Error::Config(format!("packing density {packing} outside (0, 0.6)")));
    }
    let sac_voxels = sac_mask.data.iter().filter(|l| l.is_fluid_like()).count();
    if sac_voxels == 0 {
        return Err(Error::Geometry("sac region is empty".into()));
    }
    let sac_volume = sac_voxels as f64 * sac_mask.spacing_m.powi(3);
    let d = spec.wire_diameter_m;
    let target_length = packing * sac_volume / (std::f64::consts::PI * d * d / 4.0);

    let sc_vox = spec.sac_center_vox();
    let center = [
        sc_vox[0] * spec.dx_m,
        sc_vox[1] * spec.dx_m,
        sc_vox[2] * spec.dx_m,
    ];
    // keep the wire surface inside the sac; loops stay clear of the neck
    let r_max = spec.sac_radius_m - d;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (packing * 1e6) as u64);
    let step = 0.8 * d;
    let mut points = vec![center];
    let mut dir = random_unit(&mut rng);
    let mut length = 0.0;
    while length < target_length {
        let p = *points.last().unwrap();
        // coil-like bending: persistent direction with random perturbation
        let perturb = random_unit(&mut rng);
        let mut cand = [
            dir[0] + 0.75 * perturb[0],
            dir[1] + 0.75 * perturb[1],
            dir[2] + 0.75 * perturb[2],
        ];
        normalize(&mut cand);
        let mut next = [p[0] + step * cand[0], p[1] + step * cand[1], p[2] + step * cand[2]];
        let mut tries = 0;
        while dist(&next, &center) > r_max {
            // bias back toward the sac interior
            let mut inward = [center[0] - p[0], center[1] - p[1], center[2] - p[2]];
            normalize(&mut inward);
            let perturb = random_unit(&mut rng);
            cand = [
                inward[0] + 0.6 * perturb[0],
                inward[1] + 0.6 * perturb[1],
                inward[2] + 0.6 * perturb[2],
            ];
            normalize(&mut cand);
            next = [p[0] + step * cand[0], p[1] + step * cand[1], p[2] + step * cand[2]];
            tries += 1;
            if tries > 100 {
                return Err(Error::Geometry("coil generator failed to stay inside the sac".into()));
            }
        }
        dir = cand;
        points.push(next);
        length += step;
    }
    Ok(CoilWire { centerline_m: points, wire_diameter_m: d })
}

/// Two-harmonic synthetic heartbeat waveform, strictly positive. Samples
/// cover t ∈ [0, period] inclusive; the last row closes the cycle.
pub fn synthetic_waveform(v_mean_m_s: f64, period_s: f64, n_samples: usize) -> Vec<(f64, f64)> {
    let n = n_samples.max(8);
    (0..=n)
        .map(|k| {
            let t = k as f64 * period_s / n as f64;
            let s = t / period_s * std::f64::consts::TAU;
            let v = v_mean_m_s * (1.0 + 0.45 * s.sin() + 0.25 * (2.0 * s + 1.0).sin());
            (t, v)
        })
        .collect()
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.gen_range(-1.0f64..1.0),
            rng.gen_range(-1.0f64..1.0),
            rng.gen_range(-1.0f64..1.0),
        ];
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 1e-6 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn normalize(v: &mut [f64; 3]) {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-300);
    v[0] /= n;
    v[1] /= n;
    v[2] /= n;
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{classify_cells, packing_density, porosity_by_convolution, SimMode};
    use crate::porous::PorousClosure;

    #[test]
    fn demo_mask_classifies_cleanly() {
        let spec = DemoSpec::default_64();
        let (mask, sac) = build_demo_mask(&spec).unwrap();
        assert!(mask.count(VoxelLabel::Inlet) > 0);
        assert!(mask.count(VoxelLabel::Outlet) > 0);
        assert!(sac.count(VoxelLabel::Fluid) > 1000);
        let dom =
            classify_cells(&mask, None, SimMode::VolumeAveraged, &PorousClosure::default()).unwrap();
        assert_eq!(dom.patches.len(), 2);
    }

    #[test]
    fn generated_coils_bracket_clinical_packing_range() {
        let spec = DemoSpec::default_64();
        let (mask, sac) = build_demo_mask(&spec).unwrap();
        for packing in [0.15, 0.20, 0.25] {
            let wire = generate_coil(&spec, &sac, packing, 42).unwrap();
            let rho = packing_density(&wire, &sac).unwrap();
            assert!((0.14..=0.26).contains(&rho), "packing {packing} -> {rho}");
            assert!((rho - packing).abs() < 0.01);
            // wire must voxelize into the vessel without escapes
            let out = crate::geometry::voxelize_coil(&wire, &mask).unwrap();
            assert!(out.labeled_voxels > 0);
            assert_eq!(out.escaped_voxels, 0, "coil left the fluid region");
        }
    }

    #[test]
    fn coil_generation_is_deterministic_in_seed() {
        let spec = DemoSpec::default_64();
        let (_, sac) = build_demo_mask(&spec).unwrap();
        let a = generate_coil(&spec, &sac, 0.2, 7).unwrap();
        let b = generate_coil(&spec, &sac, 0.2, 7).unwrap();
        assert_eq!(a.centerline_m.len(), b.centerline_m.len());
        for (p, q) in a.centerline_m.iter().zip(&b.centerline_m) {
            assert_eq!(p, q);
        }
        let c = generate_coil(&spec, &sac, 0.2, 8).unwrap();
        assert_ne!(a.centerline_m, c.centerline_m);
    }

    #[test]
    fn heavier_coil_lowers_porosity() {
        let spec = DemoSpec::default_64();
        let (mask, sac) = build_demo_mask(&spec).unwrap();
        let mut mean_phi = Vec::new();
        for packing in [0.15, 0.25] {
            let wire = generate_coil(&spec, &sac, packing, 11).unwrap();
            let vox = crate::geometry::voxelize_coil(&wire, &mask).unwrap();
            let field = porosity_by_convolution(&vox.mask, 3.0 * spec.wire_diameter_m, 0.05).unwrap();
            let sac_cells: Vec<usize> = (0..mask.n_voxels())
                .filter(|&i| sac.data[i].is_fluid_like())
                .collect();
            let mean: f64 =
                sac_cells.iter().map(|&i| field.phi[i]).sum::<f64>() / sac_cells.len() as f64;
            mean_phi.push(mean);
        }
        assert!(mean_phi[1] < mean_phi[0], "denser coil must lower sac porosity: {mean_phi:?}");
    }

    #[test]
    fn waveform_is_positive_and_periodic() {
        let w = synthetic_waveform(0.1, 0.4, 64);
        assert_eq!(w.len(), 65);
        assert!(w.iter().all(|&(_, v)| v > 0.0));
        assert!((w[0].1 - w.last().unwrap().1).abs() < 1e-12);
        assert!((w.last().unwrap().0 - 0.4).abs() < 1e-12);
    }
}
