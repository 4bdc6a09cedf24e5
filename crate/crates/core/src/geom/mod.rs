//! Atomic systems, periodic neighbor lists and per-edge local frames.

mod frame;
mod neighbors;
mod system;

pub use frame::{
    compute_frame, local_centroid, scalarize, tensorize, CentroidWeights, Frame, FRAME_EPS,
};
pub use neighbors::{build_neighbor_list, Edge, EdgeNeighborhoods, Graph, MAX_CUTOFF, Triplet};
pub use system::{AtomicSystem, Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeomError {
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("cutoff must be positive, got {0}")]
    NonPositiveCutoff(f64),
    #[error("cutoff {0} Å exceeds the {MAX_CUTOFF} Å limit")]
    CutoffTooLarge(f64),
    #[error("degenerate cell: determinant {0:e} Å³")]
    DegenerateCell(f64),
    #[error("atoms {0} and {1} coincide")]
    CoincidentAtoms(usize, usize),
    #[error("edge has zero length")]
    ZeroLengthEdge,
}

pub(crate) fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn scale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}
