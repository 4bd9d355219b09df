//! The simulation domain: voxel grid with per-cell flags, porosity, drag
//! coefficients, boundary patches and the precomputed streaming table.

use crate::error::{Error, Result};
use crate::lattice::{self, Q};
use crate::porous::{CellDrag, PorousClosure};

/// Per-cell classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum CellFlag {
    /// Wall or unresolved exterior; holds no populations.
    Solid = 0,
    /// Pure fluid, φ = 1.
    Fluid = 1,
    /// Fluid with φ < 1 and Darcy–Forchheimer drag.
    Porous = 2,
    /// Fluid cell on an inflow patch plane.
    Inlet = 3,
    /// Fluid cell on an outflow patch plane.
    Outlet = 4,
}

impl CellFlag {
    #[inline]
    pub fn is_solid(self) -> bool {
        self == CellFlag::Solid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchKind {
    Inlet,
    Outlet,
}

/// A planar, axis-aligned inflow or outflow patch.
#[derive(Debug, Clone)]
pub struct BoundaryPatch {
    pub kind: PatchKind,
    /// Cell indices on the patch plane.
    pub cells: Vec<u32>,
    /// Axis of the patch normal (0 = x, 1 = y, 2 = z).
    pub normal_axis: usize,
    /// Sign of the inward normal along that axis.
    pub inward_sign: i32,
    /// Patch centroid, lattice coordinates of cell centers.
    pub center: [f64; 3],
    /// Area-equivalent patch radius in lattice units.
    pub radius: f64,
}

impl BoundaryPatch {
    /// Inward unit normal as integer components.
    pub fn inward_normal(&self) -> [i32; 3] {
        let mut n = [0i32; 3];
        n[self.normal_axis] = self.inward_sign;
        n
    }

    /// Directions whose populations enter the domain through this patch
    /// (the unknown set reconstructed by the boundary condition).
    pub fn incoming_dirs(&self) -> Vec<usize> {
        let n = self.inward_normal();
        (0..Q)
            .filter(|&i| {
                let c = lattice::VELOCITIES[i];
                c[0] * n[0] + c[1] * n[1] + c[2] * n[2] > 0
            })
            .collect()
    }
}

/// Per-cell drag coefficients in lattice units, precomputed once.
///
/// `c0`/`c1` feed the closed-form velocity solve; `darcy`/`forch` evaluate the
/// drag force. Pure-fluid cells carry (0.5, 0, 0, 0) so the same code path
/// reduces to u = v with zero drag.
#[derive(Debug, Clone, Copy)]
pub struct DragCoeff {
    pub c0: f64,
    pub c1: f64,
    /// φ²ν/k.
    pub darcy: f64,
    /// φ³C_F/√k.
    pub forch: f64,
}

impl DragCoeff {
    pub const FREE: DragCoeff = DragCoeff { c0: 0.5, c1: 0.0, darcy: 0.0, forch: 0.0 };

    /// Coefficients from the per-cell drag state (lattice units, Δt = 1).
    pub fn from_cell(cell: &CellDrag, nu: f64) -> DragCoeff {
        if cell.pure_fluid {
            return DragCoeff::FREE;
        }
        let sqrt_k = cell.k.sqrt();
        DragCoeff {
            c0: 0.5 + cell.phi * nu / (4.0 * cell.k),
            c1: cell.phi * cell.phi * cell.c_f / (2.0 * sqrt_k),
            darcy: cell.phi * cell.phi * nu / cell.k,
            forch: cell.phi * cell.phi * cell.phi * cell.c_f / sqrt_k,
        }
    }
}

/// Sentinel in the streaming table: the population leaves the domain through
/// an open boundary and is dropped.
pub const DROPPED: u32 = u32::MAX;

/// Voxel grid with everything the kernel needs. Immutable during simulation.
#[derive(Debug, Clone)]
pub struct SimulationDomain {
    pub dims: [usize; 3],
    pub periodic: [bool; 3],
    pub dx_m: f64,
    pub origin_m: [f64; 3],
    pub flags: Vec<CellFlag>,
    /// Porosity per cell; 1.0 on pure fluid, clamped to [phi_min, 1].
    pub phi: Vec<f64>,
    pub patches: Vec<BoundaryPatch>,
    /// Fluid cells with at least one link into a solid cell.
    pub wall_adjacent: Vec<u32>,
    /// Per-cell lattice drag coefficients (built by [`Self::build_drag`]).
    pub drag: Vec<DragCoeff>,
    /// Push-streaming target slot per (cell, direction): the regular
    /// downstream slot, the own-cell opposite slot for half-way bounce-back,
    /// or [`DROPPED`] when the population exits through an open face.
    pub stream_target: Vec<u32>,
    /// True where some lattice neighbor has a different porosity.
    pub phi_varies: Vec<bool>,
}

impl SimulationDomain {
    pub fn n_cells(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.dims[0];
        let y = (idx / self.dims[0]) % self.dims[1];
        let z = idx / (self.dims[0] * self.dims[1]);
        (x, y, z)
    }

    /// Neighbor index along direction `c`, respecting periodic wrap.
    /// Returns None when the neighbor is outside a bounded axis.
    #[inline]
    pub fn neighbor(&self, idx: usize, c: [i32; 3]) -> Option<usize> {
        let (x, y, z) = self.coords(idx);
        let mut p = [x as i64 + c[0] as i64, y as i64 + c[1] as i64, z as i64 + c[2] as i64];
        for a in 0..3 {
            let n = self.dims[a] as i64;
            if p[a] < 0 || p[a] >= n {
                if self.periodic[a] {
                    p[a] = p[a].rem_euclid(n);
                } else {
                    return None;
                }
            }
        }
        Some(self.index(p[0] as usize, p[1] as usize, p[2] as usize))
    }

    /// Empty bounded domain of solids; building block for tests and masks.
    pub fn new_solid(dims: [usize; 3], dx_m: f64) -> SimulationDomain {
        let n = dims[0] * dims[1] * dims[2];
        SimulationDomain {
            dims,
            periodic: [false; 3],
            dx_m,
            origin_m: [0.0; 3],
            flags: vec![CellFlag::Solid; n],
            phi: vec![1.0; n],
            patches: Vec::new(),
            wall_adjacent: Vec::new(),
            drag: Vec::new(),
            stream_target: Vec::new(),
            phi_varies: Vec::new(),
        }
    }

    /// Fully periodic all-fluid box with uniform porosity; the porous-plug and
    /// conservation oracles run on this.
    pub fn periodic_uniform(dims: [usize; 3], phi: f64) -> SimulationDomain {
        let n = dims[0] * dims[1] * dims[2];
        let flag = if phi < 1.0 { CellFlag::Porous } else { CellFlag::Fluid };
        SimulationDomain {
            dims,
            periodic: [true; 3],
            dx_m: 1.0,
            origin_m: [0.0; 3],
            flags: vec![flag; n],
            phi: vec![phi; n],
            patches: Vec::new(),
            wall_adjacent: Vec::new(),
            drag: Vec::new(),
            stream_target: Vec::new(),
            phi_varies: Vec::new(),
        }
    }

    /// Precomputes the streaming table, wall-adjacency and porosity-variation
    /// flags. Must be called after flags/phi/patches are final.
    ///
    /// The push table is injective over its non-dropped entries: slot
    /// (y, i) is written only by cell y − c_i (regular streaming, possible
    /// only when that cell is fluid) or by cell y itself reflecting direction
    /// ī (possible only when y − c_i is solid). The kernel's parallel scatter
    /// relies on this.
    pub fn build_tables(&mut self) {
        let n = self.n_cells();
        let mut table = vec![DROPPED; n * Q];
        let mut walls = Vec::new();
        let mut varies = vec![false; n];
        for idx in 0..n {
            if self.flags[idx].is_solid() {
                continue;
            }
            let mut wall_here = false;
            let mut phi_here_varies = false;
            for i in 0..Q {
                let c = lattice::VELOCITIES[i];
                match self.neighbor(idx, c) {
                    Some(nb) if !self.flags[nb].is_solid() => {
                        table[idx * Q + i] = (nb * Q + i) as u32;
                        if i != 0 && self.phi[nb] != self.phi[idx] {
                            phi_here_varies = true;
                        }
                    }
                    Some(_) => {
                        // half-way bounce-back: reflect into the opposite
                        // direction at the origin cell
                        table[idx * Q + i] = (idx * Q + lattice::OPPOSITE[i]) as u32;
                        wall_here = true;
                    }
                    None => {
                        // leaves the domain through an open face; a patch
                        // reconstruction must own the reciprocal slot
                    }
                }
            }
            if wall_here {
                walls.push(idx as u32);
            }
            varies[idx] = phi_here_varies;
        }
        self.stream_target = table;
        self.wall_adjacent = walls;
        self.phi_varies = varies;
    }

    /// Builds per-cell drag coefficients. `d_p_lat` and `nu_lat` are the
    /// permeability scaling diameter and the (zero-shear) kinematic viscosity
    /// in lattice units.
    pub fn build_drag(&mut self, closure: &PorousClosure, d_p_lat: f64, nu_lat: f64) {
        let n = self.n_cells();
        let mut drag = vec![DragCoeff::FREE; n];
        for idx in 0..n {
            if self.flags[idx] == CellFlag::Porous {
                let cell = CellDrag::from_porosity(self.phi[idx], d_p_lat, closure);
                drag[idx] = DragCoeff::from_cell(&cell, nu_lat);
            }
        }
        self.drag = drag;
    }

    /// Audits that every population slot of every fluid cell is assigned each
    /// step: by streaming, by bounce-back, or by a patch reconstruction.
    /// Returns the uncovered (cell, direction) pairs.
    pub fn audit_coverage(&self) -> Vec<(usize, usize)> {
        assert!(!self.stream_target.is_empty(), "build_tables first");
        let mut covered = vec![false; self.n_cells() * Q];
        for idx in 0..self.n_cells() {
            if self.flags[idx].is_solid() {
                continue;
            }
            for i in 0..Q {
                let target = self.stream_target[idx * Q + i];
                if target != DROPPED {
                    covered[target as usize] = true;
                }
            }
        }
        for patch in &self.patches {
            for &cell in &patch.cells {
                for i in patch.incoming_dirs() {
                    covered[cell as usize * Q + i] = true;
                }
            }
        }
        let mut uncovered = Vec::new();
        for idx in 0..self.n_cells() {
            if self.flags[idx].is_solid() {
                continue;
            }
            for i in 0..Q {
                if !covered[idx * Q + i] {
                    uncovered.push((idx, i));
                }
            }
        }
        uncovered
    }

    /// Validates patch geometry: planar, axis-aligned, pure fluid, and (for
    /// outlets) at least two interior cells upstream along the normal.
    pub fn validate_patches(&self) -> Result<()> {
        for (pi, patch) in self.patches.iter().enumerate() {
            if patch.cells.is_empty() {
                return Err(Error::Geometry(format!("patch {pi} has no cells")));
            }
            let axis = patch.normal_axis;
            let coord_of = |cell: u32| -> usize {
                let (x, y, z) = self.coords(cell as usize);
                [x, y, z][axis]
            };
            let c0 = coord_of(patch.cells[0]);
            if patch.cells.iter().any(|&c| coord_of(c) != c0) {
                return Err(Error::Geometry(format!("patch {pi} is not planar along its normal axis")));
            }
            for &cell in &patch.cells {
                if self.phi[cell as usize] < 1.0 {
                    return Err(Error::Geometry(format!(
                        "patch {pi} cell {cell} lies in a porous region; in/outflow patches must be pure fluid"
                    )));
                }
            }
            if patch.kind == PatchKind::Outlet {
                let n = patch.inward_normal();
                for &cell in &patch.cells {
                    let n1 = self.neighbor(cell as usize, n);
                    let n2 = n1.and_then(|c| self.neighbor(c, n));
                    let ok = matches!((n1, n2), (Some(a), Some(b))
                        if !self.flags[a].is_solid() && !self.flags[b].is_solid());
                    if !ok {
                        return Err(Error::Geometry(format!(
                            "outlet patch {pi}: domain is thinner than 3 cells along the outflow normal at cell {cell}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_neighbor_wraps() {
        let d = SimulationDomain::periodic_uniform([4, 3, 2], 1.0);
        let idx = d.index(0, 0, 0);
        assert_eq!(d.neighbor(idx, [-1, 0, 0]), Some(d.index(3, 0, 0)));
        assert_eq!(d.neighbor(idx, [0, -1, -1]), Some(d.index(0, 2, 1)));
    }

    #[test]
    fn bounded_neighbor_edges() {
        let mut d = SimulationDomain::periodic_uniform([4, 4, 4], 1.0);
        d.periodic = [false; 3];
        assert_eq!(d.neighbor(d.index(0, 2, 2), [-1, 0, 0]), None);
        assert_eq!(d.neighbor(d.index(1, 2, 2), [-1, 0, 0]), Some(d.index(0, 2, 2)));
    }

    #[test]
    fn stream_table_periodic_fluid_has_full_coverage() {
        let mut d = SimulationDomain::periodic_uniform([4, 4, 4], 1.0);
        d.build_tables();
        assert!(d.audit_coverage().is_empty());
        // every slot pushes to the downwind neighbor, same direction
        let idx = d.index(2, 2, 2);
        for i in 0..Q {
            let c = lattice::VELOCITIES[i];
            let target = d.stream_target[idx * Q + i] as usize;
            let nb = d.neighbor(idx, c).unwrap();
            assert_eq!(target, nb * Q + i);
        }
    }

    #[test]
    fn stream_table_is_injective_over_writes() {
        // no two (cell, dir) pairs may push into the same slot
        let mut d = SimulationDomain::periodic_uniform([5, 4, 3], 1.0);
        d.periodic = [true, false, true];
        for idx in 0..d.n_cells() {
            let (_, y, _) = d.coords(idx);
            if y == 0 {
                d.flags[idx] = CellFlag::Solid;
            }
        }
        d.build_tables();
        let mut seen = vec![false; d.n_cells() * Q];
        for (slot, &t) in d.stream_target.iter().enumerate() {
            if d.flags[slot / Q].is_solid() || t == DROPPED {
                continue;
            }
            assert!(!seen[t as usize], "slot {t} written twice");
            seen[t as usize] = true;
        }
    }

    #[test]
    fn stream_table_reflects_at_solid() {
        let mut d = SimulationDomain::periodic_uniform([4, 4, 4], 1.0);
        d.periodic = [false; 3];
        // solidify everything except one cell
        for f in d.flags.iter_mut() {
            *f = CellFlag::Solid;
        }
        let idx = d.index(1, 1, 1);
        d.flags[idx] = CellFlag::Fluid;
        d.build_tables();
        for i in 1..Q {
            assert_eq!(d.stream_target[idx * Q + i] as usize, idx * Q + lattice::OPPOSITE[i]);
        }
        assert_eq!(d.stream_target[idx * Q] as usize, idx * Q);
        assert!(d.audit_coverage().is_empty());
        assert_eq!(d.wall_adjacent, vec![idx as u32]);
    }

    #[test]
    fn uncovered_open_face_is_detected() {
        // fluid cell on the domain face without a patch -> uncovered slots
        let mut d = SimulationDomain::periodic_uniform([3, 3, 3], 1.0);
        d.periodic = [false; 3];
        d.build_tables();
        let uncovered = d.audit_coverage();
        assert!(!uncovered.is_empty());
    }

    #[test]
    fn patch_incoming_dirs_count() {
        let patch = BoundaryPatch {
            kind: PatchKind::Inlet,
            cells: vec![0],
            normal_axis: 2,
            inward_sign: 1,
            center: [0.0; 3],
            radius: 1.0,
        };
        let dirs = patch.incoming_dirs();
        assert_eq!(dirs.len(), 9);
        assert!(dirs.iter().all(|&i| lattice::VELOCITIES[i][2] == 1));
    }

    #[test]
    fn phi_varies_marks_interface_cells() {
        let mut d = SimulationDomain::periodic_uniform([4, 4, 4], 1.0);
        let porous = d.index(2, 2, 2);
        d.phi[porous] = 0.5;
        d.flags[porous] = CellFlag::Porous;
        d.build_tables();
        assert!(d.phi_varies[porous]);
        assert!(d.phi_varies[d.index(1, 2, 2)]);
        assert!(!d.phi_varies[d.index(0, 0, 0)]);
    }
}
