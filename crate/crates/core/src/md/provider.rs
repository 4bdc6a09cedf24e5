use crate::data::LennardJones;
use crate::geom::{AtomicSystem, Vec3};
use crate::model::{predict, ModelState};

/// Potential energy (eV) and forces (eV/Å) for a configuration.
pub trait ForceProvider {
    fn compute(&mut self, system: &AtomicSystem) -> Result<(f64, Vec<Vec3>), String>;
}

impl ForceProvider for LennardJones {
    fn compute(&mut self, system: &AtomicSystem) -> Result<(f64, Vec<Vec3>), String> {
        let out = self.evaluate(system).map_err(|e| e.to_string())?;
        Ok((out.energy, out.forces))
    }
}

impl ForceProvider for ModelState {
    fn compute(&mut self, system: &AtomicSystem) -> Result<(f64, Vec<Vec3>), String> {
        let p = predict(self, system).map_err(|e| e.to_string())?;
        Ok((p.energy, p.forces))
    }
}

pub struct ZeroForce;

impl ForceProvider for ZeroForce {
    fn compute(&mut self, system: &AtomicSystem) -> Result<(f64, Vec<Vec3>), String> {
        Ok((0.0, vec![[0.0; 3]; system.len()]))
    }
}

/// Independent isotropic springs `½ k |x − x₀|²` per atom; `k` in eV/Å².
pub struct Harmonic {
    pub k: f64,
    pub centers: Vec<Vec3>,
}

impl ForceProvider for Harmonic {
    fn compute(&mut self, system: &AtomicSystem) -> Result<(f64, Vec<Vec3>), String> {
        if system.len() != self.centers.len() {
            return Err(format!("{} centers for {} atoms", self.centers.len(), system.len()));
        }
        let mut e = 0.0;
        let forces = system
            .positions
            .iter()
            .zip(&self.centers)
            .map(|(x, c)| {
                let d: Vec3 = std::array::from_fn(|a| x[a] - c[a]);
                e += 0.5 * self.k * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
                d.map(|v| -self.k * v)
            })
            .collect();
        Ok((e, forces))
    }
}
