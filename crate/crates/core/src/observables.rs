//! Derived quantities and outputs: wall shear stress, region averages,
//! conservation tallies, VTK field export and the time-series CSV.
//!
//! Every reduction uses fixed-order pairwise summation so output is
//! reproducible bit-exactly across runs and worker counts.

use crate::domain::SimulationDomain;
use crate::error::{Error, Result};
use crate::kernel::MacroCell;
use crate::rheology::frobenius_sym;
use crate::units::UnitScales;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Fixed-order pairwise summation; deterministic and accurate.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Arithmetic mean of per-cell magnitudes over a region.
pub fn region_average(magnitudes: &[f64]) -> Result<f64> {
    if magnitudes.is_empty() {
        return Err(Error::InvalidInput("region average over an empty region".into()));
    }
    Ok(pairwise_sum(magnitudes) / magnitudes.len() as f64)
}

/// Outward unit normals on the wall-adjacent cells.
#[derive(Debug, Clone)]
pub struct NormalField {
    pub cells: Vec<u32>,
    pub normals: Vec<[f64; 3]>,
    /// Wall-adjacent cells skipped because the smoothed gradient degenerated.
    pub skipped: usize,
}

/// Estimates wall normals as the normalized gradient of a Gaussian-smoothed
/// solid indicator (smoothing radius 2Δx), pointing from fluid into solid.
/// Outside a bounded domain counts as solid.
pub fn estimate_normals(dom: &SimulationDomain) -> NormalField {
    const SIGMA: f64 = 2.0;
    const REACH: i32 = 4; // 2σ truncation
    let mut cells = Vec::with_capacity(dom.wall_adjacent.len());
    let mut normals = Vec::with_capacity(dom.wall_adjacent.len());
    let mut skipped = 0;
    for &cell in &dom.wall_adjacent {
        let mut grad = [0.0f64; 3];
        for dz in -REACH..=REACH {
            for dy in -REACH..=REACH {
                for dx in -REACH..=REACH {
                    if dx == 0 && dy == 0 && dz == 0 {
                        continue;
                    }
                    let solid = match dom.neighbor(cell as usize, [dx, dy, dz]) {
                        Some(nb) => dom.flags[nb].is_solid(),
                        None => true,
                    };
                    if solid {
                        let r2 = (dx * dx + dy * dy + dz * dz) as f64;
                        let w = (-r2 / (2.0 * SIGMA * SIGMA)).exp();
                        grad[0] += w * dx as f64;
                        grad[1] += w * dy as f64;
                        grad[2] += w * dz as f64;
                    }
                }
            }
        }
        let norm = (grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2]).sqrt();
        if norm < 1e-12 {
            skipped += 1;
            continue;
        }
        cells.push(cell);
        normals.push([grad[0] / norm, grad[1] / norm, grad[2] / norm]);
    }
    if skipped > 0 {
        log::debug!("normal estimation skipped {skipped} degenerate wall cells");
    }
    NormalField { cells, normals, skipped }
}

/// One wall shear stress sample: τ = σn − (n·σn)n, tangential by
/// construction, in physical Pa.
#[derive(Debug, Clone, Copy)]
pub struct WallSample {
    pub cell: u32,
    pub normal: [f64; 3],
    pub tau_pa: [f64; 3],
}

impl WallSample {
    pub fn magnitude(&self) -> f64 {
        let t = self.tau_pa;
        (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt()
    }
}

/// σ·n for a symmetric tensor stored as [xx, yy, zz, xy, xz, yz].
#[inline]
fn sym_mul(s: &[f64; 6], n: [f64; 3]) -> [f64; 3] {
    [
        s[0] * n[0] + s[3] * n[1] + s[4] * n[2],
        s[3] * n[0] + s[1] * n[1] + s[5] * n[2],
        s[4] * n[0] + s[5] * n[1] + s[2] * n[2],
    ]
}

/// Wall shear stress on the wall-adjacent cells from the first fluid-cell
/// stress value (half-link extrapolation), projected onto the wall-tangential
/// plane and converted to Pa.
pub fn wall_shear_stress(
    sigma_lat: &[[f64; 6]],
    normals: &NormalField,
    scales: &UnitScales,
) -> Vec<WallSample> {
    let to_pa = scales.stress_to_physical(1.0);
    normals
        .cells
        .iter()
        .zip(&normals.normals)
        .map(|(&cell, &n)| {
            let s = &sigma_lat[cell as usize];
            let traction = sym_mul(s, n);
            let normal_part = traction[0] * n[0] + traction[1] * n[1] + traction[2] * n[2];
            let tau = [
                (traction[0] - normal_part * n[0]) * to_pa,
                (traction[1] - normal_part * n[1]) * to_pa,
                (traction[2] - normal_part * n[2]) * to_pa,
            ];
            WallSample { cell, normal: n, tau_pa: tau }
        })
        .collect()
}

/// Total lattice mass Σ_cells Σ_i f_i, deterministic.
pub fn total_mass(f: &[f64]) -> f64 {
    pairwise_sum(f)
}

/// Maximum velocity magnitude over fluid cells, lattice units.
pub fn max_speed(macros: &[MacroCell], dom: &SimulationDomain) -> f64 {
    let mut m = 0.0f64;
    for idx in 0..dom.n_cells() {
        if dom.flags[idx].is_solid() {
            continue;
        }
        let u = macros[idx].u;
        m = m.max((u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt());
    }
    m
}

/// Time-series CSV writer:
/// `t_s,mean_speed_m_s,mean_wss_pa,total_mass,max_speed_m_s`.
pub struct SeriesWriter {
    w: BufWriter<std::fs::File>,
    path: std::path::PathBuf,
}

impl SeriesWriter {
    pub fn create(path: &Path) -> Result<SeriesWriter> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "t_s,mean_speed_m_s,mean_wss_pa,total_mass,max_speed_m_s")
            .map_err(|e| Error::io(path, e))?;
        Ok(SeriesWriter { w, path: path.to_path_buf() })
    }

    pub fn write_row(
        &mut self,
        t_s: f64,
        mean_speed_m_s: f64,
        mean_wss_pa: f64,
        total_mass: f64,
        max_speed_m_s: f64,
    ) -> Result<()> {
        writeln!(
            self.w,
            "{t_s:.9e},{mean_speed_m_s:.9e},{mean_wss_pa:.9e},{total_mass:.9e},{max_speed_m_s:.9e}"
        )
        .map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Writes a legacy-VTK structured-points file with φ, ρ, p, u, μ and ‖σ‖_F in
/// physical units (ASCII header, big-endian binary doubles). Deterministic
/// byte output for fixed input.
pub fn export_fields(
    path: &Path,
    dom: &SimulationDomain,
    macros: &[MacroCell],
    sigma_lat: &[[f64; 6]],
    scales: &UnitScales,
    t_s: f64,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let n = dom.n_cells();
    let solid = |i: usize| dom.flags[i].is_solid();

    let write_scalars = |w: &mut BufWriter<std::fs::File>,
                         name: &str,
                         value: &dyn Fn(usize) -> f64|
     -> std::io::Result<()> {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for i in 0..n {
            w.write_all(&value(i).to_be_bytes())?;
        }
        writeln!(w)?;
        Ok(())
    };

    (|| -> std::io::Result<()> {
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "coilflow fields t={t_s:.9e} s")?;
        writeln!(w, "BINARY")?;
        writeln!(w, "DATASET STRUCTURED_POINTS")?;
        writeln!(w, "DIMENSIONS {} {} {}", dom.dims[0], dom.dims[1], dom.dims[2])?;
        writeln!(
            w,
            "ORIGIN {:.9e} {:.9e} {:.9e}",
            dom.origin_m[0], dom.origin_m[1], dom.origin_m[2]
        )?;
        writeln!(w, "SPACING {0:.9e} {0:.9e} {0:.9e}", dom.dx_m)?;
        writeln!(w, "POINT_DATA {n}")?;

        write_scalars(&mut w, "porosity", &|i| if solid(i) { 0.0 } else { dom.phi[i] })?;
        write_scalars(&mut w, "density", &|i| {
            if solid(i) {
                0.0
            } else {
                scales.density_to_physical(macros[i].rho)
            }
        })?;
        write_scalars(&mut w, "pressure", &|i| {
            if solid(i) {
                0.0
            } else {
                scales.stress_to_physical(macros[i].pressure())
            }
        })?;
        writeln!(w, "VECTORS velocity double")?;
        for i in 0..n {
            let u = if solid(i) { [0.0; 3] } else { macros[i].u };
            for a in 0..3 {
                w.write_all(&scales.velocity_to_physical(u[a]).to_be_bytes())?;
            }
        }
        writeln!(w)?;
        write_scalars(&mut w, "viscosity", &|i| {
            if solid(i) {
                0.0
            } else {
                scales.dynamic_viscosity_to_physical(macros[i].mu)
            }
        })?;
        write_scalars(&mut w, "stress_frobenius", &|i| {
            if solid(i) {
                0.0
            } else {
                scales.stress_to_physical(frobenius_sym(&sigma_lat[i]))
            }
        })?;
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}
