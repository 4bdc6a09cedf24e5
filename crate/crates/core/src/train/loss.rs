use super::TrainError;
use crate::data::LabeledFrame;
use crate::geom::Vec3;

/// Weighted MAE loss over a batch and its derivatives with respect to each
/// predicted energy and force.
#[derive(Debug, Clone, PartialEq)]
pub struct Loss {
    pub total: f64,
    /// Mean |ΔE| / N in eV/atom.
    pub energy_mae: f64,
    /// Mean |ΔF| over force components in eV/Å.
    pub force_mae: f64,
    /// `∂total/∂E_b` per frame.
    pub d_energy: Vec<f64>,
    /// `∂total/∂F_b` per frame and atom.
    pub d_forces: Vec<Vec<Vec3>>,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `λ_E · mean_b w_b |ΔE_b / N_b| + λ_F · mean_k w |ΔF_k|`, where the force
/// mean runs over the components of frames that carry forces.
pub fn loss(
    energies: &[f64],
    forces: &[Vec<Vec3>],
    targets: &[&LabeledFrame],
    lambda_e: f64,
    lambda_f: f64,
) -> Result<Loss, TrainError> {
    let b = targets.len();
    if b == 0 {
        return Err(TrainError::EmptyBatch);
    }
    if energies.len() != b || forces.len() != b {
        return Err(TrainError::ShapeMismatch(format!(
            "{} energies and {} force sets for {b} targets",
            energies.len(),
            forces.len()
        )));
    }
    for (k, (f, t)) in forces.iter().zip(targets).enumerate() {
        if f.len() != t.num_atoms() {
            return Err(TrainError::ShapeMismatch(format!(
                "frame {k}: {} force rows for {} atoms",
                f.len(),
                t.num_atoms()
            )));
        }
    }
    let n_comp: usize = targets.iter().filter(|t| t.has_forces).map(|t| 3 * t.num_atoms()).sum();
    let mut e_sum = 0.0;
    let mut f_sum = 0.0;
    let mut e_term = 0.0;
    let mut f_term = 0.0;
    let mut d_energy = Vec::with_capacity(b);
    let mut d_forces = Vec::with_capacity(b);
    for ((&e, f), t) in energies.iter().zip(forces).zip(targets) {
        let n = t.num_atoms() as f64;
        let de = (e - t.energy) / n;
        e_sum += de.abs();
        e_term += t.weight * de.abs();
        d_energy.push(lambda_e * t.weight * sign(de) / (n * b as f64));
        let mut df = vec![[0.0; 3]; f.len()];
        if t.has_forces {
            for ((p, q), d) in f.iter().zip(&t.forces).zip(df.iter_mut()) {
                for a in 0..3 {
                    let r = p[a] - q[a];
                    f_sum += r.abs();
                    f_term += t.weight * r.abs();
                    d[a] = lambda_f * t.weight * sign(r) / n_comp as f64;
                }
            }
        }
        d_forces.push(df);
    }
    let f_mean = |x: f64| if n_comp > 0 { x / n_comp as f64 } else { 0.0 };
    Ok(Loss {
        total: lambda_e * e_term / b as f64 + lambda_f * f_mean(f_term),
        energy_mae: e_sum / b as f64,
        force_mae: f_mean(f_sum),
        d_energy,
        d_forces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::AtomicSystem;

    fn frame(n: usize, e: f64, f: f64) -> LabeledFrame {
        let pos = (0..n).map(|k| [k as f64 * 2.0, 0.0, 0.0]).collect();
        let sys = AtomicSystem::molecule(vec![1; n], pos).unwrap();
        LabeledFrame::new(sys, e, vec![[f; 3]; n]).unwrap()
    }

    #[test]
    fn weighted_arithmetic() {
        let t = frame(2, 1.0, 0.0);
        // per-atom energy error 0.5, every force component off by 0.1
        let l = loss(&[2.0], &[vec![[0.1; 3]; 2]], &[&t], 4.0, 100.0).unwrap();
        assert!((l.energy_mae - 0.5).abs() < 1e-15);
        assert!((l.force_mae - 0.1).abs() < 1e-15);
        assert!((l.total - 12.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_energy_free() {
        let t = frame(3, -2.0, 0.3);
        let l = loss(&[-2.0], &[t.forces.clone()], &[&t], 4.0, 100.0).unwrap();
        assert_eq!(l.total, 0.0);
        let l0 = loss(&[5.0], &[vec![[0.5; 3]; 3]], &[&t], 0.0, 100.0).unwrap();
        assert_eq!(l0.total, 100.0 * l0.force_mae);
    }

    #[test]
    fn adjoints_match_differences() {
        let t = [frame(2, 1.0, 0.2), frame(3, 0.0, -0.1)];
        let refs: Vec<&LabeledFrame> = t.iter().collect();
        let e = [1.3, -0.4];
        let f = vec![vec![[0.25, 0.1, 0.3]; 2], vec![[0.0, -0.3, 0.2]; 3]];
        let l = loss(&e, &f, &refs, 4.0, 100.0).unwrap();
        let h = 1e-7;
        let mut ep = e;
        ep[1] += h;
        let lp = loss(&ep, &f, &refs, 4.0, 100.0).unwrap();
        assert!(((lp.total - l.total) / h - l.d_energy[1]).abs() < 1e-6);
        let mut fp = f.clone();
        fp[0][1][2] += h;
        let lp = loss(&e, &fp, &refs, 4.0, 100.0).unwrap();
        assert!(((lp.total - l.total) / h - l.d_forces[0][1][2]).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_batches() {
        let t = frame(2, 0.0, 0.0);
        assert!(matches!(loss(&[], &[], &[], 1.0, 1.0), Err(TrainError::EmptyBatch)));
        assert!(loss(&[0.0], &[vec![[0.0; 3]; 3]], &[&t], 1.0, 1.0).is_err());
    }
}
