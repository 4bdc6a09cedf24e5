use super::{DataError, LabeledFrame};
use crate::geom::{build_neighbor_list, AtomicSystem, GeomError, Mat3, Vec3};

/// 12-6 Lennard-Jones pair potential truncated at `cutoff`.
///
/// With `shifted` the pair energy is offset so it vanishes at the cutoff;
/// the force keeps a small jump there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LennardJones {
    pub epsilon: f64,
    pub sigma: f64,
    pub cutoff: f64,
    pub shifted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LjOutput {
    pub energy: f64,
    pub forces: Vec<Vec3>,
    /// `(1/V) ∂E/∂ε`; periodic systems only.
    pub stress: Option<Mat3>,
}

impl LennardJones {
    pub fn new(epsilon: f64, sigma: f64, cutoff: f64) -> Self {
        Self {
            epsilon,
            sigma,
            cutoff,
            shifted: true,
        }
    }

    fn raw(&self, r: f64) -> (f64, f64) {
        let s6 = (self.sigma / r).powi(6);
        let e = 4.0 * self.epsilon * (s6 * s6 - s6);
        let de = -24.0 * self.epsilon * (2.0 * s6 * s6 - s6) / r;
        (e, de)
    }

    /// Pair energy and its radial derivative `dφ/dr`; zero beyond the cutoff.
    pub fn pair(&self, r: f64) -> (f64, f64) {
        if r > self.cutoff {
            return (0.0, 0.0);
        }
        let (e, de) = self.raw(r);
        let offset = if self.shifted { self.raw(self.cutoff).0 } else { 0.0 };
        (e - offset, de)
    }

    pub fn evaluate(&self, system: &AtomicSystem) -> Result<LjOutput, DataError> {
        let graph = build_neighbor_list(system, self.cutoff).map_err(|e| match e {
            GeomError::CoincidentAtoms(i, j) => DataError::Overlap { i, j, distance: 0.0 },
            e => e.into(),
        })?;
        let mut energy = 0.0;
        let mut forces = vec![[0.0; 3]; system.len()];
        let mut w = [[0.0; 3]; 3];
        // each pair appears as two directed edges
        for (e, edge) in graph.edges.iter().enumerate() {
            let r = graph.dij[e];
            if r < 0.1 * self.sigma {
                return Err(DataError::Overlap {
                    i: edge.i,
                    j: edge.j,
                    distance: r,
                });
            }
            let (phi, dphi) = self.pair(r);
            energy += 0.5 * phi;
            let v = graph.rij[e];
            for a in 0..3 {
                forces[edge.i][a] -= dphi * v[a] / r;
                for b in 0..3 {
                    w[a][b] += 0.5 * dphi * v[a] * v[b] / r;
                }
            }
        }
        let stress = system.volume().map(|vol| w.map(|row| row.map(|x| x / vol)));
        Ok(LjOutput {
            energy,
            forces,
            stress,
        })
    }

    pub fn label(&self, system: &AtomicSystem) -> Result<LabeledFrame, DataError> {
        let out = self.evaluate(system)?;
        let mut frame = LabeledFrame::new(system.clone(), out.energy, out.forces)?;
        frame.stress = out.stress;
        Ok(frame)
    }
}

/// Cutoff-shifted Lennard-Jones labels for `system`.
pub fn lj_oracle(
    system: &AtomicSystem,
    epsilon: f64,
    sigma: f64,
    cutoff: f64,
) -> Result<LabeledFrame, DataError> {
    LennardJones::new(epsilon, sigma, cutoff).label(system)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_rotation, rotate};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 0.0104;
    const SIG: f64 = 3.4;

    fn dimer(r: f64) -> AtomicSystem {
        AtomicSystem::molecule(vec![18, 18], vec![[0.0; 3], [r, 0.0, 0.0]]).unwrap()
    }

    fn argon_box(rng: &mut ChaCha8Rng, n: usize) -> AtomicSystem {
        crate::testutil::random_box(rng, n, &[18], 7.5, 3.2)
    }

    #[test]
    fn dimer_minimum() {
        let rmin = 2f64.powf(1.0 / 6.0) * SIG;
        let frame = lj_oracle(&dimer(rmin), EPS, SIG, 3.0 * SIG).unwrap();
        for f in &frame.forces {
            assert!(f.iter().all(|v| v.abs() < 1e-15), "{f:?}");
        }
        let unshifted = LennardJones {
            shifted: false,
            ..LennardJones::new(EPS, SIG, 3.0 * SIG)
        };
        let e = unshifted.evaluate(&dimer(rmin)).unwrap().energy;
        assert!((e + EPS).abs() < 1e-15, "{e}");
        // shifted energy vanishes at the cutoff
        let lj = LennardJones::new(EPS, SIG, 3.0 * SIG);
        assert_eq!(lj.pair(3.0 * SIG).0, 0.0);
        assert_eq!(lj.pair(3.0 * SIG + 1e-9), (0.0, 0.0));
    }

    #[test]
    fn overlap_rejected() {
        let err = lj_oracle(&dimer(0.2), EPS, SIG, 3.0 * SIG).unwrap_err();
        assert!(matches!(err, DataError::Overlap { .. }), "{err}");
        let same = AtomicSystem::molecule(vec![18, 18], vec![[1.0; 3], [1.0; 3]]).unwrap();
        assert!(matches!(lj_oracle(&same, EPS, SIG, 10.0), Err(DataError::Overlap { .. })));
    }

    #[test]
    fn periodic_forces_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lj = LennardJones::new(EPS, SIG, 3.0 * SIG);
        let sys = argon_box(&mut rng, 8);
        let out = lj.evaluate(&sys).unwrap();
        let h = 1e-5;
        for i in 0..sys.len() {
            for a in 0..3 {
                let mut p = sys.clone();
                p.positions[i][a] += h;
                let mut m = sys.clone();
                m.positions[i][a] -= h;
                let fd = -(lj.evaluate(&p).unwrap().energy - lj.evaluate(&m).unwrap().energy) / (2.0 * h);
                assert!((fd - out.forces[i][a]).abs() < 1e-8, "{i},{a}: {fd} vs {}", out.forces[i][a]);
            }
        }
    }

    #[test]
    fn stress_matches_strain_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lj = LennardJones::new(EPS, SIG, 3.0 * SIG);
        let sys = argon_box(&mut rng, 8);
        let stress = lj.evaluate(&sys).unwrap().stress.unwrap();
        let vol = sys.volume().unwrap();
        let h = 1e-6;
        let strained = |a: usize, b: usize, t: f64| {
            let mut f = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
            f[a][b] += t / 2.0;
            f[b][a] += t / 2.0;
            let map = |v: &Vec3| -> Vec3 { std::array::from_fn(|c| (0..3).map(|k| v[k] * f[k][c]).sum()) };
            let mut s = sys.clone();
            s.positions = sys.positions.iter().map(map).collect();
            s.cell = sys.cell.map(|c| c.map(|row| map(&row)));
            lj.evaluate(&s).unwrap().energy
        };
        for a in 0..3 {
            for b in 0..3 {
                let fd = (strained(a, b, h) - strained(a, b, -h)) / (2.0 * h) / vol;
                assert!((fd - stress[a][b]).abs() < 1e-9, "{a}{b}: {fd} vs {}", stress[a][b]);
            }
        }
    }

    #[test]
    fn newton_third_law_in_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pos = crate::testutil::scattered_points(&mut rng, 12, 9.0, 3.0);
        let sys = AtomicSystem::molecule(vec![18; 12], pos).unwrap();
        let out = LennardJones::new(EPS, SIG, 3.0 * SIG).evaluate(&sys).unwrap();
        for a in 0..3 {
            let net: f64 = out.forces.iter().map(|f| f[a]).sum();
            assert!(net.abs() < 1e-14);
        }
        assert!(out.stress.is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn invariance_suite(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lj = LennardJones::new(EPS, SIG, 3.0 * SIG);
            let sys = argon_box(&mut rng, 6);
            let base = lj.evaluate(&sys).unwrap();
            let r = random_rotation(&mut rng);
            let t: Vec3 = std::array::from_fn(|_| rng.random_range(-5.0..5.0));
            let mut moved = sys.clone();
            moved.positions = sys.positions.iter().map(|p| {
                let q = rotate(&r, p);
                [q[0] + t[0], q[1] + t[1], q[2] + t[2]]
            }).collect();
            moved.cell = sys.cell.map(|c| c.map(|row| rotate(&r, &row)));
            let perm: Vec<usize> = (0..sys.len()).rev().collect();
            moved.positions = perm.iter().map(|&i| moved.positions[i]).collect();
            let out = lj.evaluate(&moved).unwrap();
            prop_assert!((out.energy - base.energy).abs() < 1e-10);
            for (k, &i) in perm.iter().enumerate() {
                let want = rotate(&r, &base.forces[i]);
                for a in 0..3 {
                    prop_assert!((out.forces[k][a] - want[a]).abs() < 1e-10);
                }
            }
            let s0 = base.stress.unwrap();
            let s1 = out.stress.unwrap();
            for a in 0..3 {
                for b in 0..3 {
                    let want: f64 = (0..3).flat_map(|k| (0..3).map(move |l| (k, l)))
                        .map(|(k, l)| r[a][k] * s0[k][l] * r[b][l]).sum();
                    prop_assert!((s1[a][b] - want).abs() < 1e-10);
                }
            }
        }
    }
}
