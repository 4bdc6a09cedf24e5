use super::{cross, dot, GeomError};

pub type Vec3 = [f64; 3];
/// 3x3 matrix; for cells the rows are lattice vectors.
pub type Mat3 = [[f64; 3]; 3];

/// Species, Cartesian positions (Å) and an optional periodic cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicSystem {
    pub species: Vec<u8>,
    pub positions: Vec<Vec3>,
    pub cell: Option<Mat3>,
    pub pbc: [bool; 3],
}

impl AtomicSystem {
    pub fn new(
        species: Vec<u8>,
        positions: Vec<Vec3>,
        cell: Option<Mat3>,
        pbc: [bool; 3],
    ) -> Result<Self, GeomError> {
        let sys = Self {
            species,
            positions,
            cell,
            pbc,
        };
        sys.validate()?;
        Ok(sys)
    }

    /// Isolated cluster without a cell.
    pub fn molecule(species: Vec<u8>, positions: Vec<Vec3>) -> Result<Self, GeomError> {
        Self::new(species, positions, None, [false; 3])
    }

    /// Fully periodic system.
    pub fn periodic(species: Vec<u8>, positions: Vec<Vec3>, cell: Mat3) -> Result<Self, GeomError> {
        Self::new(species, positions, Some(cell), [true; 3])
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if self.positions.is_empty() {
            return Err(GeomError::InvalidSystem("system has no atoms".into()));
        }
        if self.species.len() != self.positions.len() {
            return Err(GeomError::InvalidSystem(format!(
                "{} species for {} positions",
                self.species.len(),
                self.positions.len()
            )));
        }
        if let Some(z) = self.species.iter().find(|&&z| !(1..=118).contains(&z)) {
            return Err(GeomError::InvalidSystem(format!("atomic number {z} outside 1..=118")));
        }
        if self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeomError::InvalidSystem("non-finite position".into()));
        }
        match (&self.cell, self.pbc.iter().any(|&p| p)) {
            (Some(cell), true) => {
                let det = det3(cell);
                if !(det > 1e-6) {
                    return Err(GeomError::DegenerateCell(det));
                }
            }
            (None, false) => {}
            (Some(_), false) => {
                return Err(GeomError::InvalidSystem("cell given without periodic axes".into()))
            }
            (None, true) => {
                return Err(GeomError::InvalidSystem("periodic axes require a cell".into()))
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_periodic(&self) -> bool {
        self.cell.is_some()
    }

    pub fn volume(&self) -> Option<f64> {
        self.cell.as_ref().map(det3)
    }

    /// Lattice translation `shift · cell`; zero without a cell.
    pub fn lattice_vector(&self, shift: [i32; 3]) -> Vec3 {
        match &self.cell {
            Some(cell) => lattice_vector(cell, shift),
            None => [0.0; 3],
        }
    }

    /// Positions folded into the cell along periodic axes.
    pub fn wrapped_positions(&self) -> Vec<Vec3> {
        let Some(cell) = &self.cell else {
            return self.positions.clone();
        };
        let inv = inverse3(cell);
        self.positions
            .iter()
            .map(|p| {
                let f = frac(p, &inv);
                let mut shift = [0i32; 3];
                for a in 0..3 {
                    if self.pbc[a] {
                        shift[a] = f[a].floor() as i32;
                    }
                }
                let t = lattice_vector(cell, shift);
                [p[0] - t[0], p[1] - t[1], p[2] - t[2]]
            })
            .collect()
    }
}

pub(crate) fn lattice_vector(cell: &Mat3, shift: [i32; 3]) -> Vec3 {
    let mut out = [0.0; 3];
    for (a, &s) in shift.iter().enumerate() {
        if s != 0 {
            let s = s as f64;
            for c in 0..3 {
                out[c] += s * cell[a][c];
            }
        }
    }
    out
}

pub(crate) fn det3(m: &Mat3) -> f64 {
    dot(&m[0], &cross(&m[1], &m[2]))
}

/// Inverse of a row-vector cell: `frac = pos · inv`.
pub(crate) fn inverse3(m: &Mat3) -> Mat3 {
    let det = det3(m);
    let c0 = cross(&m[1], &m[2]);
    let c1 = cross(&m[2], &m[0]);
    let c2 = cross(&m[0], &m[1]);
    let mut inv = [[0.0; 3]; 3];
    for r in 0..3 {
        inv[r][0] = c0[r] / det;
        inv[r][1] = c1[r] / det;
        inv[r][2] = c2[r] / det;
    }
    inv
}

pub(crate) fn frac(p: &Vec3, inv: &Mat3) -> Vec3 {
    let mut f = [0.0; 3];
    for (c, fc) in f.iter_mut().enumerate() {
        *fc = p[0] * inv[0][c] + p[1] * inv[1][c] + p[2] * inv[2][c];
    }
    f
}

/// Distance between the two lattice planes spanned by the other two vectors.
pub(crate) fn heights(cell: &Mat3) -> Vec3 {
    let v = det3(cell).abs();
    [
        v / super::norm(&cross(&cell[1], &cell[2])),
        v / super::norm(&cross(&cell[2], &cell[0])),
        v / super::norm(&cross(&cell[0], &cell[1])),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_requires_periodic_axis_and_vice_versa() {
        let cell = [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]];
        assert!(AtomicSystem::new(vec![1], vec![[0.0; 3]], Some(cell), [false; 3]).is_err());
        assert!(AtomicSystem::new(vec![1], vec![[0.0; 3]], None, [true, false, false]).is_err());
        assert!(AtomicSystem::new(vec![1], vec![[0.0; 3]], Some(cell), [true, true, false]).is_ok());
    }

    #[test]
    fn degenerate_cell_and_empty_system_rejected() {
        let flat = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        assert!(matches!(
            AtomicSystem::periodic(vec![1], vec![[0.0; 3]], flat),
            Err(GeomError::DegenerateCell(_))
        ));
        assert!(AtomicSystem::molecule(vec![], vec![]).is_err());
        assert!(AtomicSystem::molecule(vec![0], vec![[0.0; 3]]).is_err());
    }

    #[test]
    fn inverse_roundtrip() {
        let cell = [[3.0, 0.2, 0.1], [0.5, 4.0, -0.3], [0.0, 0.7, 5.0]];
        let inv = inverse3(&cell);
        let p = [1.3, -2.0, 0.4];
        let f = frac(&p, &inv);
        let back: Vec3 = std::array::from_fn(|c| (0..3).map(|a| f[a] * cell[a][c]).sum());
        for c in 0..3 {
            assert!((back[c] - p[c]).abs() < 1e-12);
        }
    }
}
