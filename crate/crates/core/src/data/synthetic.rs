use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, LabeledFrame, LennardJones};
use crate::geom::AtomicSystem;

/// Periodic face-centred cubic crystal of `repeat` conventional cells with
/// lattice constant `a`.
pub fn fcc(z: u8, a: f64, repeat: [usize; 3]) -> Result<AtomicSystem, DataError> {
    const BASIS: [[f64; 3]; 4] = [[0.0, 0.0, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]];
    let mut pos = Vec::new();
    for i in 0..repeat[0] {
        for j in 0..repeat[1] {
            for k in 0..repeat[2] {
                for b in BASIS {
                    pos.push([
                        a * (i as f64 + b[0]),
                        a * (j as f64 + b[1]),
                        a * (k as f64 + b[2]),
                    ]);
                }
            }
        }
    }
    let cell = [
        [a * repeat[0] as f64, 0.0, 0.0],
        [0.0, a * repeat[1] as f64, 0.0],
        [0.0, 0.0, a * repeat[2] as f64],
    ];
    Ok(AtomicSystem::periodic(vec![z; pos.len()], pos, cell)?)
}

/// Copy of `system` with every coordinate displaced by `N(0, amplitude²)`.
pub fn rattle(system: &AtomicSystem, amplitude: f64, rng: &mut ChaCha8Rng) -> AtomicSystem {
    let normal = Normal::new(0.0, amplitude).expect("finite amplitude");
    let mut out = system.clone();
    for p in out.positions.iter_mut().flatten() {
        *p += normal.sample(rng);
    }
    out
}

/// `count` rattled copies of `base`, labeled by `lj`.
pub fn lj_frames(
    base: &AtomicSystem,
    lj: &LennardJones,
    count: usize,
    amplitude: f64,
    seed: u64,
) -> Result<Vec<LabeledFrame>, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| lj.label(&rattle(base, amplitude, &mut rng)))
        .collect()
}

/// Isolated dimers at `count` evenly spaced separations in `[r_min, r_max]`.
pub fn dimer_sweep(
    z: u8,
    r_min: f64,
    r_max: f64,
    count: usize,
    lj: &LennardJones,
) -> Result<Vec<LabeledFrame>, DataError> {
    (0..count)
        .map(|k| {
            let t = if count > 1 { k as f64 / (count - 1) as f64 } else { 0.0 };
            let r = r_min + t * (r_max - r_min);
            let sys = AtomicSystem::molecule(vec![z, z], vec![[0.0; 3], [r, 0.0, 0.0]])?;
            lj.label(&sys)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fcc_counts_and_spacing() {
        let s = fcc(18, 5.26, [2, 2, 2]).unwrap();
        assert_eq!(s.len(), 32);
        assert!((s.volume().unwrap() - 10.52f64.powi(3)).abs() < 1e-9);
        let g = crate::geom::build_neighbor_list(&s, 3.8).unwrap();
        // twelve nearest neighbors at a/√2
        assert_eq!(g.num_edges(), 32 * 12);
        assert!(g.dij.iter().all(|d| (d - 5.26 / 2f64.sqrt()).abs() < 1e-12));
    }

    #[test]
    fn perfect_fcc_has_no_forces() {
        let lj = LennardJones::new(0.0104, 3.4, 10.2);
        let f = lj.label(&fcc(18, 5.26, [2, 2, 2]).unwrap()).unwrap();
        assert!(f.forces.iter().flatten().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn generated_frames_are_seeded() {
        let lj = LennardJones::new(0.0104, 3.4, 10.2);
        let base = fcc(18, 5.26, [1, 1, 1]).unwrap();
        let a = lj_frames(&base, &lj, 3, 0.05, 4).unwrap();
        assert_eq!(a, lj_frames(&base, &lj, 3, 0.05, 4).unwrap());
        assert_ne!(a, lj_frames(&base, &lj, 3, 0.05, 5).unwrap());
        assert_ne!(a[0].energy, a[1].energy);
        let d = dimer_sweep(18, 3.2, 6.0, 5, &lj).unwrap();
        assert_eq!(d.len(), 5);
        assert_eq!(d[4].system.positions[1][0], 6.0);
    }
}
