use std::collections::HashMap;

use super::neighbors::edge_neighborhood;
use super::{add, cross, dot, norm, scale, sub, AtomicSystem, GeomError, Graph, Vec3};
use crate::diffcore::Unary;

/// Width of the degeneracy gate `c² / (c² + ε²)`, in Å².
pub const FRAME_EPS: f64 = 1e-3;

/// Below this cross-product norm the second and third axes are dropped.
const COLLAPSE: f64 = 1e-12;

/// Orthonormal triad attached to a directed edge.
///
/// `gate` fades the second and third axes out as the triangle
/// `(x_i, x_j, x̄)` approaches collinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub e1: Vec3,
    pub e2: Vec3,
    pub e3: Vec3,
    pub gate: f64,
}

impl Frame {
    /// Applies a rotation matrix (acting on column vectors) to every axis.
    pub fn rotated(&self, r: &[[f64; 3]; 3]) -> Frame {
        let rot = |v: &Vec3| -> Vec3 { std::array::from_fn(|a| dot(&r[a], v)) };
        Frame {
            e1: rot(&self.e1),
            e2: rot(&self.e2),
            e3: rot(&self.e3),
            gate: self.gate,
        }
    }
}

pub fn compute_frame(xi: &Vec3, xj: &Vec3, centroid: &Vec3) -> Result<Frame, GeomError> {
    let r = sub(xi, xj);
    let d = norm(&r);
    if d == 0.0 {
        return Err(GeomError::ZeroLengthEdge);
    }
    let e1 = scale(&r, 1.0 / d);
    let u = cross(&sub(xi, centroid), &sub(xj, centroid));
    let c = norm(&u);
    if c < COLLAPSE {
        return Ok(Frame {
            e1,
            e2: [0.0; 3],
            e3: [0.0; 3],
            gate: 0.0,
        });
    }
    let e2 = scale(&u, 1.0 / c);
    let w = cross(&r, &u);
    let e3 = scale(&w, 1.0 / norm(&w));
    let gate = c * c / (c * c + FRAME_EPS * FRAME_EPS);
    Ok(Frame { e1, e2, e3, gate })
}

/// Frame coordinates of `v`, with the gated axes scaled by the gate.
pub fn scalarize(v: &Vec3, frame: &Frame) -> Vec3 {
    [
        dot(&frame.e1, v),
        frame.gate * dot(&frame.e2, v),
        frame.gate * dot(&frame.e3, v),
    ]
}

pub fn tensorize(s: &Vec3, frame: &Frame) -> Vec3 {
    add(
        &add(&scale(&frame.e1, s[0]), &scale(&frame.e2, s[1])),
        &scale(&frame.e3, s[2]),
    )
}

/// Smooth membership weight used for the local centroid and for
/// common-neighbor terms: 1 up to `on`, cosine fade to 0 at the cutoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentroidWeights {
    pub on: f64,
    pub off: f64,
}

impl CentroidWeights {
    pub const ON_FRACTION: f64 = 0.8;

    pub fn for_cutoff(cutoff: f64) -> Self {
        Self {
            on: Self::ON_FRACTION * cutoff,
            off: cutoff,
        }
    }

    pub fn switch(&self) -> Unary {
        Unary::Switch {
            on: self.on,
            off: self.off,
        }
    }

    pub fn weight(&self, d: f64) -> f64 {
        self.switch().eval(d)
    }

    /// Soft union membership given the distances to `i` and to `j`.
    pub fn union_weight(&self, d_i: f64, d_j: f64) -> f64 {
        1.0 - (1.0 - self.weight(d_i)) * (1.0 - self.weight(d_j))
    }
}

/// Weighted mean of the image points in `N(i) ∪ N(j) ∪ {i, j}` for edge `e`.
///
/// Points are unwrapped along edge vectors, so the result sits next to the
/// edge regardless of how positions are folded into the cell. `i` and `j`
/// carry weight 1; other points carry [`CentroidWeights::union_weight`],
/// which is 1 for every point well inside the cutoff of either end.
pub fn local_centroid(e: usize, graph: &Graph, system: &AtomicSystem) -> Vec3 {
    let weights = CentroidWeights::for_cutoff(graph.cutoff);
    let nb = edge_neighborhood(graph, e, &mut HashMap::new());
    let r = graph.rij[e];
    let mut num = scale(&r, -1.0);
    let mut den = 2.0;
    let points = nb
        .direct
        .iter()
        .map(|&ik| scale(&graph.rij[ik], -1.0))
        .chain(nb.indirect.iter().map(|&jk| scale(&add(&r, &graph.rij[jk]), -1.0)));
    for a in points {
        let b = add(&a, &r);
        let w = weights.union_weight(norm(&a), norm(&b));
        num = add(&num, &scale(&a, w));
        den += w;
    }
    add(&system.positions[graph.edges[e].i], &scale(&num, 1.0 / den))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geom::build_neighbor_list;

    pub(crate) fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
        // normalized random quaternion
        let q: [f64; 4] = loop {
            let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.1 && n <= 1.0 {
                break q.map(|v| v / n);
            }
        };
        let [w, x, y, z] = q;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    fn apply(r: &[[f64; 3]; 3], v: &Vec3) -> Vec3 {
        std::array::from_fn(|a| dot(&r[a], v))
    }

    fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
        std::array::from_fn(|_| rng.random_range(-s..s))
    }

    fn close(a: &Vec3, b: &Vec3, tol: f64) -> bool {
        (0..3).all(|k| (a[k] - b[k]).abs() < tol)
    }

    fn example_frame() -> Frame {
        compute_frame(&[1.0, 0.0, 0.0], &[0.0; 3], &[0.5, 0.5, 0.0]).unwrap()
    }

    #[test]
    fn hand_evaluated_frame() {
        let f = example_frame();
        assert!(close(&f.e1, &[1.0, 0.0, 0.0], 1e-15));
        assert!(close(&f.e2, &[0.0, 0.0, -1.0], 1e-15));
        assert!(close(&f.e3, &[0.0, 1.0, 0.0], 1e-15));
        // c = 0.5 Å², gate = 0.25 / (0.25 + 1e-6)
        assert!((f.gate - 0.25 / (0.25 + 1e-6)).abs() < 1e-15);
    }

    #[test]
    fn collinear_centroid_collapses_frame() {
        let f = compute_frame(&[2.0, 0.0, 0.0], &[0.0; 3], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(f.gate, 0.0);
        assert_eq!(f.e2, [0.0; 3]);
        assert_eq!(f.e3, [0.0; 3]);
        assert!(compute_frame(&[1.0; 3], &[1.0; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn random_frames_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let f = compute_frame(&rand_vec(&mut rng, 2.0), &rand_vec(&mut rng, 2.0), &rand_vec(&mut rng, 2.0))
                .unwrap();
            if f.gate <= 0.5 {
                continue;
            }
            let axes = [f.e1, f.e2, f.e3];
            for a in 0..3 {
                assert!((norm(&axes[a]) - 1.0).abs() < 1e-9);
                for b in 0..a {
                    assert!(dot(&axes[a], &axes[b]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn scalarize_examples() {
        let f = example_frame();
        assert!(close(&scalarize(&f.e1, &f), &[1.0, 0.0, 0.0], 1e-15));
        let s = scalarize(&[1.0, 2.0, 3.0], &f);
        assert!(close(&s, &[1.0, -3.0, 2.0], 1e-4));
        assert!(close(&s, &[1.0, -3.0 * f.gate, 2.0 * f.gate], 1e-15));
        assert_eq!(scalarize(&[0.0; 3], &f), [0.0; 3]);
    }

    #[test]
    fn tensorize_inverts_scalarize() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = example_frame();
        assert!(close(&tensorize(&[1.0, 0.0, 0.0], &f), &f.e1, 0.0 + 1e-15));
        let mut checked = 0;
        while checked < 100 {
            // c must exceed ~300 Å² for the gate to round to 1 within 1e-11
            let f = compute_frame(&rand_vec(&mut rng, 40.0), &rand_vec(&mut rng, 40.0), &rand_vec(&mut rng, 40.0))
                .unwrap();
            if 1.0 - f.gate > 1e-11 {
                continue;
            }
            let v = rand_vec(&mut rng, 5.0);
            assert!(close(&tensorize(&scalarize(&v, &f), &f), &v, 1e-10));
            checked += 1;
        }
    }

    #[test]
    fn frames_are_se3_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let r = random_rotation(&mut rng);
            let t = rand_vec(&mut rng, 10.0);
            let (xi, xj, xc) = (rand_vec(&mut rng, 2.0), rand_vec(&mut rng, 2.0), rand_vec(&mut rng, 2.0));
            let f = compute_frame(&xi, &xj, &xc).unwrap();
            let m = |x: &Vec3| add(&apply(&r, x), &t);
            let g = compute_frame(&m(&xi), &m(&xj), &m(&xc)).unwrap();
            let fr = f.rotated(&r);
            assert!(close(&g.e1, &fr.e1, 1e-10) && close(&g.e2, &fr.e2, 1e-10) && close(&g.e3, &fr.e3, 1e-10));
            assert!((g.gate - f.gate).abs() < 1e-10);
            let v = rand_vec(&mut rng, 3.0);
            assert!(close(&scalarize(&apply(&r, &v), &g), &scalarize(&v, &f), 1e-10));
            let s = rand_vec(&mut rng, 3.0);
            assert!(close(&tensorize(&s, &fr), &apply(&r, &tensorize(&s, &f)), 1e-10));
        }
    }

    #[test]
    fn scalarize_is_continuous_through_collinearity() {
        // Slide the centroid across the i-j line. The gate has slope ~1/ε near
        // collinearity, so continuity shows as the largest jump shrinking in
        // proportion to the step; a discontinuity would keep it fixed.
        let (xi, xj) = ([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]);
        let v = [0.3, 0.7, -0.4];
        let sample = |p: f64| {
            let f = compute_frame(&xi, &xj, &[0.2, p, 0.1 * p]).unwrap();
            scalarize(&v, &f)
        };
        let max_jump = |step: f64| {
            let mut worst: f64 = 0.0;
            let mut p = -2e-3;
            while p < 2e-3 {
                let (a, b) = (sample(p), sample(p + step));
                worst = worst.max((0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max));
                p += step;
            }
            worst
        };
        let mut prev = max_jump(1e-4);
        for &step in &[1e-5, 1e-6, 1e-7] {
            let j = max_jump(step);
            assert!(j <= prev / 5.0, "jump {j} at step {step}, previous {prev}");
            prev = j;
        }
        // away from the degenerate window the outputs vary slowly
        let (a, b) = (sample(0.5), sample(0.5 + 1e-4));
        assert!((0..3).all(|k| (a[k] - b[k]).abs() <= 10.0 * 1e-4));
    }

    #[test]
    fn dimer_centroid_is_midpoint() {
        let s = AtomicSystem::molecule(vec![1, 1], vec![[0.0; 3], [1.0, 0.4, 0.0]]).unwrap();
        let g = build_neighbor_list(&s, 3.0).unwrap();
        assert!(close(&local_centroid(0, &g, &s), &[0.5, 0.2, 0.0], 1e-15));
    }

    #[test]
    fn triangle_centroid() {
        let h = 3f64.sqrt() / 2.0;
        let pos = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.5, h, 0.0]];
        let s = AtomicSystem::molecule(vec![1; 3], pos).unwrap();
        let g = build_neighbor_list(&s, 2.0).unwrap();
        let e = g.edges.iter().position(|e| e.i == 0 && e.j == 1).unwrap();
        assert!(close(&local_centroid(e, &g, &s), &[0.5, h / 3.0, 0.0], 1e-14));
    }

    #[test]
    fn periodic_centroid_ignores_wrapping() {
        let cell = [[6.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 4.0]];
        let pos = vec![[0.1, 0.0, 0.0], [1.6, 0.5, 0.2], [3.1, -0.2, 0.4], [4.6, 0.3, -0.1]];
        let a = AtomicSystem::new(vec![6; 4], pos.clone(), Some(cell), [true, false, false]).unwrap();
        let mut shifted = pos;
        shifted[0][0] += 6.0;
        shifted[2][0] -= 6.0;
        let b = AtomicSystem::new(vec![6; 4], shifted, Some(cell), [true, false, false]).unwrap();
        let (ga, gb) = (build_neighbor_list(&a, 3.5).unwrap(), build_neighbor_list(&b, 3.5).unwrap());
        assert_eq!(ga.num_edges(), gb.num_edges());
        for (ea, edge) in ga.edges.iter().enumerate() {
            let eb = gb.edges.iter().position(|x| x.i == edge.i && x.j == edge.j && gb.rij
                [gb.edges.iter().position(|y| y == x).unwrap()]
                .iter()
                .zip(&ga.rij[ea])
                .all(|(p, q)| (p - q).abs() < 1e-9))
                .unwrap();
            let ca = sub(&local_centroid(ea, &ga, &a), &a.positions[edge.i]);
            let cb = sub(&local_centroid(eb, &gb, &b), &b.positions[edge.i]);
            assert!(close(&ca, &cb, 1e-10));
        }
    }
}
