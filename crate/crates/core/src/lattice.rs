//! The D3Q27 velocity set: discrete velocities, weights, speed of sound and
//! direction algebra shared by every kernel.
//!
//! Direction ordering is fixed (rest, then the 6 face directions, then the 12
//! edge directions, then the 8 corner directions) so that checkpoints written
//! by one build restart bit-exactly on another.

/// Number of discrete velocities.
pub const Q: usize = 27;

/// Lattice speed of sound squared, c_s^2 = 1/3.
pub const CS2: f64 = 1.0 / 3.0;

/// 1 / c_s^2.
pub const INV_CS2: f64 = 3.0;

/// 1 / c_s^4.
pub const INV_CS4: f64 = 9.0;

/// Tag written into checkpoints to pin the direction ordering.
pub const ORDERING_TAG: &str = "d3q27-rest-face-edge-corner-v1";

/// The 27 discrete velocities, rest first, then faces, edges, corners.
pub const VELOCITIES: [[i32; 3]; Q] = [
    [0, 0, 0],
    // faces
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
    // edges
    [1, 1, 0],
    [-1, -1, 0],
    [1, -1, 0],
    [-1, 1, 0],
    [1, 0, 1],
    [-1, 0, -1],
    [1, 0, -1],
    [-1, 0, 1],
    [0, 1, 1],
    [0, -1, -1],
    [0, 1, -1],
    [0, -1, 1],
    // corners
    [1, 1, 1],
    [-1, -1, -1],
    [1, 1, -1],
    [-1, -1, 1],
    [1, -1, 1],
    [-1, 1, -1],
    [1, -1, -1],
    [-1, 1, 1],
];

/// The velocities as f64, for the hot loops.
pub const VELOCITIES_F: [[f64; 3]; Q] = {
    let mut out = [[0.0; 3]; Q];
    let mut i = 0;
    while i < Q {
        out[i] = [VELOCITIES[i][0] as f64, VELOCITIES[i][1] as f64, VELOCITIES[i][2] as f64];
        i += 1;
    }
    out
};

const W_REST: f64 = 8.0 / 27.0;
const W_FACE: f64 = 2.0 / 27.0;
const W_EDGE: f64 = 1.0 / 54.0;
const W_CORNER: f64 = 1.0 / 216.0;

/// Lattice weights matching [`VELOCITIES`].
pub const WEIGHTS: [f64; Q] = [
    W_REST, //
    W_FACE, W_FACE, W_FACE, W_FACE, W_FACE, W_FACE, //
    W_EDGE, W_EDGE, W_EDGE, W_EDGE, W_EDGE, W_EDGE, //
    W_EDGE, W_EDGE, W_EDGE, W_EDGE, W_EDGE, W_EDGE, //
    W_CORNER, W_CORNER, W_CORNER, W_CORNER, W_CORNER, W_CORNER, W_CORNER, W_CORNER,
];

/// Index map i -> ī with c_ī = -c_i. Opposites are stored pairwise in
/// [`VELOCITIES`], so the map is mechanical.
pub const OPPOSITE: [usize; Q] = [
    0, //
    2, 1, 4, 3, 6, 5, //
    8, 7, 10, 9, 12, 11, 14, 13, 16, 15, 18, 17, //
    20, 19, 22, 21, 24, 23, 26, 25,
];

/// The D3Q27 velocity set with weights and direction algebra.
///
/// Immutable after construction; freely shared between threads.
#[derive(Debug, Clone)]
pub struct LatticeDescriptor {
    pub velocities: [[i32; 3]; Q],
    pub weights: [f64; Q],
    pub cs2: f64,
    pub opposite: [usize; Q],
}

/// Returns the canonical D3Q27 descriptor.
pub fn d3q27() -> LatticeDescriptor {
    LatticeDescriptor {
        velocities: VELOCITIES,
        weights: WEIGHTS,
        cs2: CS2,
        opposite: OPPOSITE,
    }
}

impl LatticeDescriptor {
    /// c_i · v for direction `i`.
    #[inline]
    pub fn dot(&self, i: usize, v: [f64; 3]) -> f64 {
        let c = self.velocities[i];
        c[0] as f64 * v[0] + c[1] as f64 * v[1] + c[2] as f64 * v[2]
    }
}
