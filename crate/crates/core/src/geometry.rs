//! Geometry ingestion: voxel masks, coil wire centerlines, the windowed
//! porosity convolution, cell classification and packing density.

use crate::domain::{BoundaryPatch, CellFlag, PatchKind, SimulationDomain};
use crate::error::{Error, Result};
use crate::porous::PorousClosure;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub mod demo;

/// Voxel labels stored in mask files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum VoxelLabel {
    Solid = 0,
    Fluid = 1,
    Inlet = 2,
    Outlet = 3,
    /// Voxel occupied by coil wire.
    Coil = 4,
}

impl VoxelLabel {
    pub fn from_u8(v: u8) -> Result<VoxelLabel> {
        Ok(match v {
            0 => VoxelLabel::Solid,
            1 => VoxelLabel::Fluid,
            2 => VoxelLabel::Inlet,
            3 => VoxelLabel::Outlet,
            4 => VoxelLabel::Coil,
            other => return Err(Error::InvalidInput(format!("unknown voxel label {other}"))),
        })
    }

    /// Fluid-like labels carry populations.
    pub fn is_fluid_like(self) -> bool {
        !matches!(self, VoxelLabel::Solid)
    }
}

/// A labeled voxel grid.
#[derive(Debug, Clone)]
pub struct VoxelMask {
    pub dims: [usize; 3],
    pub spacing_m: f64,
    pub origin_m: [f64; 3],
    pub data: Vec<VoxelLabel>,
}

const MASK_MAGIC: &[u8; 8] = b"VOXMASK1";

#[derive(Serialize, Deserialize)]
struct MaskHeader {
    dims: [usize; 3],
    spacing_m: f64,
    origin_m: [f64; 3],
    labels: Vec<(String, u8)>,
    endianness: String,
    data: String,
}

impl VoxelMask {
    pub fn new(dims: [usize; 3], spacing_m: f64, origin_m: [f64; 3]) -> VoxelMask {
        VoxelMask { dims, spacing_m, origin_m, data: vec![VoxelLabel::Solid; dims[0] * dims[1] * dims[2]] }
    }

    pub fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> VoxelLabel {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, label: VoxelLabel) {
        let i = self.index(x, y, z);
        self.data[i] = label;
    }

    /// Position of a voxel center in meters.
    #[inline]
    pub fn center_m(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            self.origin_m[0] + (x as f64 + 0.5) * self.spacing_m,
            self.origin_m[1] + (y as f64 + 0.5) * self.spacing_m,
            self.origin_m[2] + (z as f64 + 0.5) * self.spacing_m,
        ]
    }

    pub fn count(&self, label: VoxelLabel) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }

    /// Writes the mask container: magic, little-endian u32 header length,
    /// JSON header, then raw u8 labels (x fastest).
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = MaskHeader {
            dims: self.dims,
            spacing_m: self.spacing_m,
            origin_m: self.origin_m,
            labels: vec![
                ("solid".into(), 0),
                ("fluid".into(), 1),
                ("inlet".into(), 2),
                ("outlet".into(), 3),
                ("coil".into(), 4),
            ],
            endianness: "little".into(),
            data: "u8".into(),
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::format(path, format!("header encode: {e}")))?;
        (|| -> std::io::Result<()> {
            w.write_all(MASK_MAGIC)?;
            w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
            w.write_all(&header_bytes)?;
            let bytes: Vec<u8> = self.data.iter().map(|&l| l as u8).collect();
            w.write_all(&bytes)?;
            w.flush()
        })()
        .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<VoxelMask> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != MASK_MAGIC {
            return Err(Error::format(path, "not a VOXMASK1 file"));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(|e| Error::io(path, e))?;
        let mut header_bytes = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header_bytes).map_err(|e| Error::io(path, e))?;
        let header: MaskHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::format(path, format!("header decode: {e}")))?;
        let n = header.dims[0] * header.dims[1] * header.dims[2];
        let mut raw = vec![0u8; n];
        r.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;
        let data = raw
            .into_iter()
            .map(VoxelLabel::from_u8)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(VoxelMask {
            dims: header.dims,
            spacing_m: header.spacing_m,
            origin_m: header.origin_m,
            data,
        })
    }
}

/// A coil wire: ordered centerline points plus wire diameter.
#[derive(Debug, Clone)]
pub struct CoilWire {
    pub centerline_m: Vec<[f64; 3]>,
    pub wire_diameter_m: f64,
}

impl CoilWire {
    pub fn validate(&self) -> Result<()> {
        if self.centerline_m.len() < 2 {
            return Err(Error::InvalidInput("coil centerline needs at least 2 points".into()));
        }
        if !(self.wire_diameter_m > 0.0) {
            return Err(Error::InvalidInput("wire diameter must be positive".into()));
        }
        Ok(())
    }

    /// Total centerline length in meters.
    pub fn length_m(&self) -> f64 {
        self.centerline_m
            .windows(2)
            .map(|s| {
                let d = [s[1][0] - s[0][0], s[1][1] - s[0][1], s[1][2] - s[0][2]];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            })
            .sum()
    }

    /// Reads the coil CSV (`x_m,y_m,z_m` header, one row per point).
    pub fn read_csv(path: &Path, wire_diameter_m: f64) -> Result<CoilWire> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(BufReader::new(file));
        let mut centerline = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            if rec.len() != 3 {
                return Err(Error::format(path, format!("expected 3 columns, got {}", rec.len())));
            }
            let mut p = [0.0; 3];
            for a in 0..3 {
                p[a] = rec[a]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::format(path, format!("bad coordinate {:?}: {e}", &rec[a])))?;
            }
            centerline.push(p);
        }
        let wire = CoilWire { centerline_m: centerline, wire_diameter_m };
        wire.validate()?;
        Ok(wire)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        (|| -> std::io::Result<()> {
            writeln!(w, "x_m,y_m,z_m")?;
            for p in &self.centerline_m {
                writeln!(w, "{:.9e},{:.9e},{:.9e}", p[0], p[1], p[2])?;
            }
            w.flush()
        })()
        .map_err(|e| Error::io(path, e))
    }
}

/// Result of labeling coil voxels into a mask.
#[derive(Debug)]
pub struct VoxelizeOutcome {
    pub mask: VoxelMask,
    /// Voxels within wire reach that were not plain fluid (wire escaping the
    /// fluid region); clinically relevant misplacement signal.
    pub escaped_voxels: usize,
    pub labeled_voxels: usize,
}

/// Labels voxels whose centers lie within `wire_diameter/2` of any centerline
/// segment as coil wire. Only plain-fluid voxels convert; all other labels are
/// preserved (and counted as escapes when within reach).
pub fn voxelize_coil(wire: &CoilWire, mask: &VoxelMask) -> Result<VoxelizeOutcome> {
    wire.validate()?;
    let mut out = mask.clone();
    let r = wire.wire_diameter_m / 2.0;
    let sp = mask.spacing_m;
    let mut escaped = 0usize;
    let mut labeled = 0usize;
    for seg in wire.centerline_m.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        // voxel AABB around the segment, padded by the wire radius
        let lo = [
            ((a[0].min(b[0]) - r - mask.origin_m[0]) / sp - 0.5).floor().max(0.0) as usize,
            ((a[1].min(b[1]) - r - mask.origin_m[1]) / sp - 0.5).floor().max(0.0) as usize,
            ((a[2].min(b[2]) - r - mask.origin_m[2]) / sp - 0.5).floor().max(0.0) as usize,
        ];
        let hi = [
            (((a[0].max(b[0]) + r - mask.origin_m[0]) / sp + 0.5).ceil() as usize).min(mask.dims[0]),
            (((a[1].max(b[1]) + r - mask.origin_m[1]) / sp + 0.5).ceil() as usize).min(mask.dims[1]),
            (((a[2].max(b[2]) + r - mask.origin_m[2]) / sp + 0.5).ceil() as usize).min(mask.dims[2]),
        ];
        let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let ab2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                for x in lo[0]..hi[0] {
                    let c = mask.center_m(x, y, z);
                    let ac = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
                    let t = if ab2 > 0.0 {
                        ((ac[0] * ab[0] + ac[1] * ab[1] + ac[2] * ab[2]) / ab2).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    let d = [ac[0] - t * ab[0], ac[1] - t * ab[1], ac[2] - t * ab[2]];
                    if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r * r {
                        let idx = out.index(x, y, z);
                        match out.data[idx] {
                            VoxelLabel::Fluid => {
                                out.data[idx] = VoxelLabel::Coil;
                                labeled += 1;
                            }
                            VoxelLabel::Coil => {}
                            _ => escaped += 1,
                        }
                    }
                }
            }
        }
    }
    if escaped > 0 {
        log::warn!("coil wire escapes the fluid region at {escaped} voxels");
    }
    Ok(VoxelizeOutcome { mask: out, escaped_voxels: escaped, labeled_voxels: labeled })
}

/// Porosity field produced by the windowed convolution.
#[derive(Debug, Clone)]
pub struct PorosityField {
    pub phi: Vec<f64>,
    pub window_m: f64,
}

/// φ(x) = 1 − coil-voxel fraction inside the cubic window centered at x,
/// clamped below at `phi_min`. The window side is `2·floor(window/(2Δx)) + 1`
/// voxels and is clipped at the domain boundary.
///
/// Implemented with a summed-volume table so the cost is independent of the
/// window size.
pub fn porosity_by_convolution(mask: &VoxelMask, window_m: f64, phi_min: f64) -> Result<PorosityField> {
    if window_m < mask.spacing_m {
        return Err(Error::InvalidInput(format!(
            "window {window_m} m must be at least one voxel ({} m)",
            mask.spacing_m
        )));
    }
    let [nx, ny, nz] = mask.dims;
    let h = (window_m / (2.0 * mask.spacing_m)).floor() as i64;

    // summed-volume table over the coil indicator, dims (nx+1, ny+1, nz+1)
    let sx = nx + 1;
    let sy = ny + 1;
    let idx_s = |x: usize, y: usize, z: usize| x + sx * (y + sy * z);
    let mut svt = vec![0u64; (nx + 1) * (ny + 1) * (nz + 1)];
    for z in 0..nz {
        for y in 0..ny {
            let mut row = 0u64;
            for x in 0..nx {
                if mask.get(x, y, z) == VoxelLabel::Coil {
                    row += 1;
                }
                svt[idx_s(x + 1, y + 1, z + 1)] = row + svt[idx_s(x + 1, y, z + 1)]
                    + svt[idx_s(x + 1, y + 1, z)]
                    - svt[idx_s(x + 1, y, z)];
            }
        }
    }
    let box_count = |lo: [usize; 3], hi: [usize; 3]| -> u64 {
        // half-open [lo, hi)
        let s = |x: usize, y: usize, z: usize| svt[idx_s(x, y, z)];
        s(hi[0], hi[1], hi[2])
            .wrapping_sub(s(lo[0], hi[1], hi[2]))
            .wrapping_sub(s(hi[0], lo[1], hi[2]))
            .wrapping_sub(s(hi[0], hi[1], lo[2]))
            .wrapping_add(s(lo[0], lo[1], hi[2]))
            .wrapping_add(s(lo[0], hi[1], lo[2]))
            .wrapping_add(s(hi[0], lo[1], lo[2]))
            .wrapping_sub(s(lo[0], lo[1], lo[2]))
    };

    let mut phi = vec![1.0f64; mask.n_voxels()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let lo = [
                    (x as i64 - h).max(0) as usize,
                    (y as i64 - h).max(0) as usize,
                    (z as i64 - h).max(0) as usize,
                ];
                let hi = [
                    ((x as i64 + h + 1).min(nx as i64)) as usize,
                    ((y as i64 + h + 1).min(ny as i64)) as usize,
                    ((z as i64 + h + 1).min(nz as i64)) as usize,
                ];
                let vol = ((hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2])) as f64;
                let coil = box_count(lo, hi) as f64;
                phi[mask.index(x, y, z)] = (1.0 - coil / vol).clamp(phi_min, 1.0);
            }
        }
    }
    Ok(PorosityField { phi, window_m })
}

/// Simulation mode: resolve the coil as solid walls or average it into a
/// porosity field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    FullyResolved,
    VolumeAveraged,
}

/// Builds the simulation domain from a mask: flags cells, attaches the
/// porosity field (volume-averaged mode), finds in/outflow patches and
/// validates connectivity and boundary coverage.
pub fn classify_cells(
    mask: &VoxelMask,
    porosity: Option<&PorosityField>,
    mode: SimMode,
    closure: &PorousClosure,
) -> Result<SimulationDomain> {
    let n = mask.n_voxels();
    let mut dom = SimulationDomain::new_solid(mask.dims, mask.spacing_m);
    dom.origin_m = mask.origin_m;

    for i in 0..n {
        let (flag, phi) = match mask.data[i] {
            VoxelLabel::Solid => (CellFlag::Solid, 1.0),
            VoxelLabel::Inlet => (CellFlag::Inlet, 1.0),
            VoxelLabel::Outlet => (CellFlag::Outlet, 1.0),
            VoxelLabel::Fluid | VoxelLabel::Coil => match mode {
                SimMode::FullyResolved => {
                    if mask.data[i] == VoxelLabel::Coil {
                        (CellFlag::Solid, 1.0)
                    } else {
                        (CellFlag::Fluid, 1.0)
                    }
                }
                SimMode::VolumeAveraged => {
                    let phi = porosity
                        .map(|p| p.phi[i].clamp(closure.phi_min, 1.0))
                        .unwrap_or(1.0);
                    if phi < closure.phi_pure_fluid_threshold {
                        (CellFlag::Porous, phi)
                    } else {
                        (CellFlag::Fluid, 1.0)
                    }
                }
            },
        };
        dom.flags[i] = flag;
        dom.phi[i] = phi;
    }

    dom.patches = find_patches(&dom, CellFlag::Inlet, PatchKind::Inlet)?
        .into_iter()
        .chain(find_patches(&dom, CellFlag::Outlet, PatchKind::Outlet)?)
        .collect();
    if !dom.patches.iter().any(|p| p.kind == PatchKind::Inlet) {
        return Err(Error::Geometry("mask has no inlet voxels".into()));
    }
    if !dom.patches.iter().any(|p| p.kind == PatchKind::Outlet) {
        return Err(Error::Geometry("mask has no outlet voxels".into()));
    }

    check_connectivity(&dom)?;
    dom.build_tables();
    dom.validate_patches()?;
    let uncovered = dom.audit_coverage();
    if !uncovered.is_empty() {
        let (cell, dir) = uncovered[0];
        let (x, y, z) = dom.coords(cell);
        return Err(Error::Geometry(format!(
            "{} population slots are neither streamed, bounced nor reconstructed by a patch \
             (first: cell ({x},{y},{z}) direction {dir}); the fluid region must be closed by \
             solid or in/outflow labels",
            uncovered.len()
        )));
    }
    Ok(dom)
}

/// Groups inlet/outlet cells into connected planar patches and derives the
/// inward normal, centroid and area-equivalent radius of each.
fn find_patches(dom: &SimulationDomain, flag: CellFlag, kind: PatchKind) -> Result<Vec<BoundaryPatch>> {
    let n = dom.n_cells();
    let mut seen = vec![false; n];
    let mut patches = Vec::new();
    for start in 0..n {
        if dom.flags[start] != flag || seen[start] {
            continue;
        }
        // flood fill over 26-connectivity within the same label
        let mut cells = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(c) = queue.pop_front() {
            cells.push(c as u32);
            for i in 1..crate::lattice::Q {
                if let Some(nb) = dom.neighbor(c, crate::lattice::VELOCITIES[i]) {
                    if dom.flags[nb] == flag && !seen[nb] {
                        seen[nb] = true;
                        queue.push_back(nb);
                    }
                }
            }
        }
        // the patch must be planar along exactly one axis
        let coords: Vec<(usize, usize, usize)> = cells.iter().map(|&c| dom.coords(c as usize)).collect();
        let planar_axis = (0..3).find(|&a| {
            let v = [coords[0].0, coords[0].1, coords[0].2][a];
            coords.iter().all(|&(x, y, z)| [x, y, z][a] == v)
        });
        let axis = planar_axis.ok_or_else(|| {
            Error::Geometry(format!("{kind:?} patch with {} cells is not an axis-aligned plane", cells.len()))
        })?;
        let plane_coord = [coords[0].0, coords[0].1, coords[0].2][axis];
        // inward = the side along the axis where fluid continues
        let inward_sign = if plane_coord == 0 {
            1
        } else if plane_coord == dom.dims[axis] - 1 {
            -1
        } else {
            let mut dir = [0i32; 3];
            dir[axis] = 1;
            let plus_fluid = cells.iter().any(|&c| {
                dom.neighbor(c as usize, dir)
                    .map(|nb| !dom.flags[nb].is_solid() && dom.flags[nb] != flag)
                    .unwrap_or(false)
            });
            if plus_fluid {
                1
            } else {
                -1
            }
        };
        let mut center = [0.0f64; 3];
        for &(x, y, z) in &coords {
            center[0] += x as f64 + 0.5;
            center[1] += y as f64 + 0.5;
            center[2] += z as f64 + 0.5;
        }
        for c in center.iter_mut() {
            *c /= cells.len() as f64;
        }
        let radius = (cells.len() as f64 / std::f64::consts::PI).sqrt();
        patches.push(BoundaryPatch { kind, cells, normal_axis: axis, inward_sign, center, radius });
    }
    Ok(patches)
}

/// The fluid region must be 6-connected from the inlets to every outlet.
fn check_connectivity(dom: &SimulationDomain) -> Result<()> {
    let n = dom.n_cells();
    let mut reach = vec![false; n];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for p in dom.patches.iter().filter(|p| p.kind == PatchKind::Inlet) {
        for &c in &p.cells {
            if !reach[c as usize] {
                reach[c as usize] = true;
                queue.push_back(c as usize);
            }
        }
    }
    const FACES: [[i32; 3]; 6] =
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
    while let Some(c) = queue.pop_front() {
        for d in FACES {
            if let Some(nb) = dom.neighbor(c, d) {
                if !dom.flags[nb].is_solid() && !reach[nb] {
                    reach[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
    }
    for p in dom.patches.iter().filter(|p| p.kind == PatchKind::Outlet) {
        if p.cells.iter().any(|&c| !reach[c as usize]) {
            return Err(Error::Geometry(
                "fluid region is not 6-connected between inlet and outlet".into(),
            ));
        }
    }
    let stranded = (0..n)
        .filter(|&i| !dom.flags[i].is_solid() && !reach[i])
        .count();
    if stranded > 0 {
        log::warn!("{stranded} fluid cells are not reachable from the inlet");
    }
    Ok(())
}

/// Analytic packing density: coil wire volume (centerline length × π d²/4)
/// divided by the sac fluid volume taken from the region mask.
pub fn packing_density(wire: &CoilWire, sac_mask: &VoxelMask) -> Result<f64> {
    let sac_voxels = sac_mask.data.iter().filter(|l| l.is_fluid_like()).count();
    if sac_voxels == 0 {
        return Err(Error::InvalidInput("sac region is empty".into()));
    }
    let sac_volume = sac_voxels as f64 * sac_mask.spacing_m.powi(3);
    let wire_volume =
        wire.length_m() * std::f64::consts::PI * wire.wire_diameter_m * wire.wire_diameter_m / 4.0;
    Ok(wire_volume / sac_volume)
}

/// Cells of the sac region (non-solid voxels of the region mask) that are
/// fluid in the simulation domain.
pub fn region_cells(dom: &SimulationDomain, region: &VoxelMask) -> Result<Vec<u32>> {
    if region.dims != dom.dims {
        return Err(Error::Geometry(format!(
            "region mask dims {:?} do not match domain dims {:?}",
            region.dims, dom.dims
        )));
    }
    Ok((0..dom.n_cells())
        .filter(|&i| region.data[i].is_fluid_like() && !dom.flags[i].is_solid())
        .map(|i| i as u32)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_fluid_box(dims: [usize; 3], spacing: f64) -> VoxelMask {
        let mut m = VoxelMask::new(dims, spacing, [0.0; 3]);
        for v in m.data.iter_mut() {
            *v = VoxelLabel::Fluid;
        }
        m
    }

    #[test]
    fn voxelize_straight_segment_matches_cylinder_volume() {
        let sp = 1e-3;
        let mask = empty_fluid_box([26, 18, 18], sp);
        // axis through voxel centers (y = z = 8.5 sp)
        let wire = CoilWire {
            centerline_m: vec![[5.0 * sp, 8.5 * sp, 8.5 * sp], [15.0 * sp, 8.5 * sp, 8.5 * sp]],
            wire_diameter_m: 5.0 * sp,
        };
        let out = voxelize_coil(&wire, &mask).unwrap();
        // analytic: cylinder of length 10 voxels, radius 2.5, plus end caps
        // (centers within radius of the endpoints)
        let cylinder = std::f64::consts::PI * 2.5 * 2.5 * 10.0;
        let caps = 4.0 / 3.0 * std::f64::consts::PI * 2.5f64.powi(3);
        let expect = cylinder + caps;
        let got = out.labeled_voxels as f64;
        assert!(
            (got - expect).abs() / expect < 0.15,
            "labeled {got} vs analytic {expect}"
        );
        assert_eq!(out.escaped_voxels, 0);
    }

    #[test]
    fn voxelize_degenerate_segment_is_sphere() {
        let sp = 1e-3;
        let mask = empty_fluid_box([16, 16, 16], sp);
        let p = [8.5 * sp, 8.5 * sp, 8.5 * sp]; // a voxel center
        let wire = CoilWire { centerline_m: vec![p, p], wire_diameter_m: 6.0 * sp };
        let out = voxelize_coil(&wire, &mask).unwrap();
        let expect = 4.0 / 3.0 * std::f64::consts::PI * 3.0f64.powi(3);
        let got = out.labeled_voxels as f64;
        assert!((got - expect).abs() / expect < 0.15, "labeled {got} vs sphere {expect}");
    }

    #[test]
    fn voxelize_wire_outside_fluid_warns() {
        let sp = 1e-3;
        let mask = VoxelMask::new([16, 16, 16], sp, [0.0; 3]); // all solid
        let wire = CoilWire {
            centerline_m: vec![[4.0 * sp, 8.0 * sp, 8.0 * sp], [12.0 * sp, 8.0 * sp, 8.0 * sp]],
            wire_diameter_m: 2.0 * sp,
        };
        let out = voxelize_coil(&wire, &mask).unwrap();
        assert_eq!(out.labeled_voxels, 0);
        assert!(out.escaped_voxels > 0);
    }

    #[test]
    fn porosity_pure_fluid_and_full_block() {
        let sp = 1e-3;
        let mut mask = empty_fluid_box([16, 16, 16], sp);
        let field = porosity_by_convolution(&mask, 3.0 * sp, 0.05).unwrap();
        assert!(field.phi.iter().all(|&p| p == 1.0));
        for v in mask.data.iter_mut() {
            *v = VoxelLabel::Coil;
        }
        let field = porosity_by_convolution(&mask, 3.0 * sp, 0.05).unwrap();
        assert!(field.phi.iter().all(|&p| p == 0.05), "clamped at phi_min");
    }

    #[test]
    fn porosity_half_space_interface() {
        let sp = 1e-3;
        let dims = [20, 20, 20];
        let mut mask = empty_fluid_box(dims, sp);
        for z in 0..20 {
            for y in 0..20 {
                for x in 0..10 {
                    mask.set(x, y, z, VoxelLabel::Coil);
                }
            }
        }
        let window = 5.0 * sp;
        let field = porosity_by_convolution(&mask, window, 0.05).unwrap();
        // brute-force window count oracle at the interface cell (10, 10, 10)
        let h = 2i64;
        let mut count = 0;
        let mut total = 0;
        for dz in -h..=h {
            for dy in -h..=h {
                for dx in -h..=h {
                    let (x, y, z) = (10 + dx, 10 + dy, 10 + dz);
                    total += 1;
                    if mask.get(x as usize, y as usize, z as usize) == VoxelLabel::Coil {
                        count += 1;
                    }
                }
            }
        }
        let expect = 1.0 - count as f64 / total as f64;
        let got = field.phi[mask.index(10, 10, 10)];
        assert!((got - expect).abs() < 1e-12);
        // half-space: phi = 0.5 within one voxel layer of discretization
        assert!((got - 0.5).abs() <= 1.0 / (2 * h + 1) as f64 + 1e-12);
    }

    #[test]
    fn porosity_monotone_under_added_coil() {
        let sp = 1e-3;
        let mut mask = empty_fluid_box([12, 12, 12], sp);
        mask.set(6, 6, 6, VoxelLabel::Coil);
        let a = porosity_by_convolution(&mask, 5.0 * sp, 0.05).unwrap();
        mask.set(7, 6, 6, VoxelLabel::Coil);
        let b = porosity_by_convolution(&mask, 5.0 * sp, 0.05).unwrap();
        for i in 0..a.phi.len() {
            assert!(b.phi[i] <= a.phi[i] + 1e-15);
        }
    }

    #[test]
    fn porosity_invariant_under_noncoil_relabeling() {
        let sp = 1e-3;
        let mut mask = empty_fluid_box([10, 10, 10], sp);
        mask.set(5, 5, 5, VoxelLabel::Coil);
        let a = porosity_by_convolution(&mask, 3.0 * sp, 0.05).unwrap();
        mask.set(0, 0, 0, VoxelLabel::Solid);
        mask.set(1, 0, 0, VoxelLabel::Inlet);
        mask.set(2, 0, 0, VoxelLabel::Outlet);
        let b = porosity_by_convolution(&mask, 3.0 * sp, 0.05).unwrap();
        assert_eq!(a.phi, b.phi);
    }

    /// Straight tube along z with inlet/outlet disks.
    pub fn tube_mask(r_vox: f64, nz: usize) -> VoxelMask {
        let side = (2.0 * r_vox).ceil() as usize + 4;
        let mut mask = VoxelMask::new([side, side, nz], 1e-3, [0.0; 3]);
        let cx = side as f64 / 2.0;
        for z in 0..nz {
            for y in 0..side {
                for x in 0..side {
                    let dx = x as f64 + 0.5 - cx;
                    let dy = y as f64 + 0.5 - cx;
                    if dx * dx + dy * dy < r_vox * r_vox {
                        let label = if z == 0 {
                            VoxelLabel::Inlet
                        } else if z == nz - 1 {
                            VoxelLabel::Outlet
                        } else {
                            VoxelLabel::Fluid
                        };
                        mask.set(x, y, z, label);
                    }
                }
            }
        }
        mask
    }

    #[test]
    fn classify_straight_tube() {
        let mask = tube_mask(6.0, 12);
        let dom = classify_cells(&mask, None, SimMode::VolumeAveraged, &PorousClosure::default()).unwrap();
        assert_eq!(dom.patches.len(), 2);
        let inlet = dom.patches.iter().find(|p| p.kind == PatchKind::Inlet).unwrap();
        assert_eq!(inlet.normal_axis, 2);
        assert_eq!(inlet.inward_sign, 1);
        assert!((inlet.radius - 6.0).abs() < 0.3, "{}", inlet.radius);
        assert!(!dom.wall_adjacent.is_empty());
        assert!(dom.flags.iter().any(|&f| f == CellFlag::Fluid));
        assert!(dom.audit_coverage().is_empty());
    }

    #[test]
    fn classify_modes_from_same_coil_input() {
        let mut mask = tube_mask(6.0, 12);
        // a small coil blob mid-tube
        let c = mask.dims[0] / 2;
        mask.set(c, c, 6, VoxelLabel::Coil);
        mask.set(c + 1, c, 6, VoxelLabel::Coil);
        let phi = porosity_by_convolution(&mask, 3e-3, 0.05).unwrap();
        let closure = PorousClosure::default();
        let fr = classify_cells(&mask, None, SimMode::FullyResolved, &closure).unwrap();
        let va = classify_cells(&mask, Some(&phi), SimMode::VolumeAveraged, &closure).unwrap();
        // fully resolved: coil voxels become solid, no porous flags
        assert!(fr.flags.iter().all(|&f| f != CellFlag::Porous));
        assert_eq!(fr.flags[fr.index(c, c, 6)], CellFlag::Solid);
        assert!(fr.phi.iter().all(|&p| p == 1.0));
        // volume averaged: no solid coil voxels, porous region nonempty
        assert_eq!(va.flags[va.index(c, c, 6)], CellFlag::Porous);
        assert!(va.phi.iter().any(|&p| p < 1.0));
    }

    #[test]
    fn classify_rejects_disconnected_geometry() {
        let mut mask = tube_mask(5.0, 16);
        // solid wall across the middle
        for y in 0..mask.dims[1] {
            for x in 0..mask.dims[0] {
                mask.set(x, y, 8, VoxelLabel::Solid);
            }
        }
        let err = classify_cells(&mask, None, SimMode::VolumeAveraged, &PorousClosure::default());
        assert!(matches!(err, Err(Error::Geometry(_))));
    }

    #[test]
    fn packing_density_formula() {
        let sp = 1e-3;
        let mut sac = VoxelMask::new([10, 10, 10], sp, [0.0; 3]);
        for v in sac.data.iter_mut() {
            *v = VoxelLabel::Fluid;
        }
        let d = 0.5e-3;
        let wire = CoilWire {
            centerline_m: vec![[0.0; 3], [0.0, 0.0, 4e-3]],
            wire_diameter_m: d,
        };
        let got = packing_density(&wire, &sac).unwrap();
        let expect = 4e-3 * std::f64::consts::PI * d * d / 4.0 / (1000.0 * sp.powi(3));
        assert!((got - expect).abs() < 1e-15);
        // zero length
        let wire0 = CoilWire { centerline_m: vec![[0.0; 3], [0.0; 3]], wire_diameter_m: d };
        assert_eq!(packing_density(&wire0, &sac).unwrap(), 0.0);
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vox");
        let mut mask = VoxelMask::new([3, 4, 5], 2e-3, [0.1, 0.2, 0.3]);
        mask.set(1, 2, 3, VoxelLabel::Fluid);
        mask.set(2, 0, 4, VoxelLabel::Coil);
        mask.write(&path).unwrap();
        let back = VoxelMask::read(&path).unwrap();
        assert_eq!(back.dims, mask.dims);
        assert_eq!(back.spacing_m, mask.spacing_m);
        assert_eq!(back.origin_m, mask.origin_m);
        assert!(back.data.iter().zip(&mask.data).all(|(a, b)| a == b));
    }

    #[test]
    fn coil_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("coil.csv");
        let wire = CoilWire {
            centerline_m: vec![[1e-3, 2e-3, 3e-3], [4e-3, 5e-3, 6e-3], [7e-3, 8e-3, 9e-3]],
            wire_diameter_m: 0.2e-3,
        };
        wire.write_csv(&path).unwrap();
        let back = CoilWire::read_csv(&path, 0.2e-3).unwrap();
        assert_eq!(back.centerline_m.len(), 3);
        for (a, b) in back.centerline_m.iter().zip(&wire.centerline_m) {
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-12);
            }
        }
    }
}
