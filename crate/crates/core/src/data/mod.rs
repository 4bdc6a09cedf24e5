//! Labeled configurations: extended XYZ I/O, a Lennard-Jones labeler,
//! synthetic structure generators and deterministic dataset splits.

mod elements;
mod extxyz;
mod lj;
mod split;
mod synthetic;

use std::collections::BTreeMap;

pub use elements::{atomic_mass, atomic_number, symbol};
pub use extxyz::{
    format_frame, parse_extxyz, parse_extxyz_str, read_extxyz, to_extxyz_string, write_extxyz,
    ExtxyzReader,
};
pub use lj::{lj_oracle, LennardJones, LjOutput};
pub(crate) use split::sha256_hex;
pub use split::{split, split_indices, Dataset, DatasetManifest, ManifestFile, Split};
pub use synthetic::{dimer_sweep, fcc, lj_frames, rattle};

use crate::geom::{AtomicSystem, GeomError, Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("atoms {i} and {j} overlap at {distance} Å")]
    Overlap { i: usize, j: usize, distance: f64 },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("split: {0}")]
    Split(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Per-atom property column carried through from an input file untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    /// Extended XYZ type letter: `S`, `R`, `I` or `L`.
    pub kind: char,
    pub width: usize,
    /// Row-major tokens, `width` per atom.
    pub values: Vec<String>,
}

/// One structure with its reference labels.
///
/// Energies are totals in eV, forces eV/Å and stress eV/Å³ with the
/// convention `σ = (1/V) ∂E/∂ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub system: AtomicSystem,
    pub energy: f64,
    pub forces: Vec<Vec3>,
    /// False when the source carried no forces; `forces` is then all zero.
    pub has_forces: bool,
    pub stress: Option<Mat3>,
    pub weight: f64,
    pub metadata: BTreeMap<String, String>,
    pub extra_columns: Vec<Column>,
}

impl LabeledFrame {
    pub fn new(system: AtomicSystem, energy: f64, forces: Vec<Vec3>) -> Result<Self, DataError> {
        let frame = Self {
            system,
            energy,
            forces,
            has_forces: true,
            stress: None,
            weight: 1.0,
            metadata: BTreeMap::new(),
            extra_columns: Vec::new(),
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.system.len();
        let bad = |m: String| Err(DataError::InvalidFrame(m));
        if self.forces.len() != n {
            return bad(format!("{} force rows for {n} atoms", self.forces.len()));
        }
        if !self.energy.is_finite() {
            return bad("non-finite energy".into());
        }
        if self.forces.iter().flatten().any(|f| !f.is_finite()) {
            return bad("non-finite force".into());
        }
        if self.stress.iter().flatten().flatten().any(|s| !s.is_finite()) {
            return bad("non-finite stress".into());
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return bad(format!("weight {} must be finite and non-negative", self.weight));
        }
        if let Some(c) = self.extra_columns.iter().find(|c| c.values.len() != n * c.width) {
            return bad(format!("column `{}` has {} values for {n} atoms", c.name, c.values.len()));
        }
        Ok(())
    }

    pub fn num_atoms(&self) -> usize {
        self.system.len()
    }

    pub fn energy_per_atom(&self) -> f64 {
        self.energy / self.system.len() as f64
    }
}
