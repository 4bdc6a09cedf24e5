//! Shared fixtures for unit tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::geom::{AtomicSystem, Mat3, Vec3};

/// Uniform random rotation from a normalized quaternion.
pub fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
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

pub fn rotate(r: &Mat3, v: &Vec3) -> Vec3 {
    std::array::from_fn(|a| r[a][0] * v[0] + r[a][1] * v[1] + r[a][2] * v[2])
}

/// Points in a cube of side `box_len` no closer than `min_dist`.
pub fn scattered_points(rng: &mut ChaCha8Rng, n: usize, box_len: f64, min_dist: f64) -> Vec<Vec3> {
    let mut pts: Vec<Vec3> = Vec::with_capacity(n);
    while pts.len() < n {
        let p: Vec3 = std::array::from_fn(|_| rng.random_range(0.0..box_len));
        let ok = pts.iter().all(|q| {
            let d: f64 = (0..3).map(|a| (p[a] - q[a]).powi(2)).sum();
            d.sqrt() >= min_dist
        });
        if ok {
            pts.push(p);
        }
    }
    pts
}

pub fn random_cluster(rng: &mut ChaCha8Rng, n: usize, species: &[u8]) -> AtomicSystem {
    let box_len = (n as f64 * 8.0).cbrt().max(2.5);
    let pos = scattered_points(rng, n, box_len, 1.0);
    let z = (0..n).map(|i| species[i % species.len()]).collect();
    AtomicSystem::molecule(z, pos).unwrap()
}

/// Fully periodic box with a mildly sheared cell.
pub fn random_periodic(rng: &mut ChaCha8Rng, n: usize, species: &[u8]) -> AtomicSystem {
    let side = (n as f64 * 20.0).cbrt().max(4.5);
    random_box(rng, n, species, side, 1.8)
}

/// Sheared periodic box of side `side`, minimum images at least about `min_dist` apart.
pub fn random_box(
    rng: &mut ChaCha8Rng,
    n: usize,
    species: &[u8],
    side: f64,
    min_dist: f64,
) -> AtomicSystem {
    let cell = [
        [side, 0.0, 0.0],
        [rng.random_range(-0.5..0.5), side, 0.0],
        [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), side],
    ];
    // fractional coordinates, rejecting close minimum images
    let mut frac: Vec<Vec3> = Vec::with_capacity(n);
    while frac.len() < n {
        let p: Vec3 = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let ok = frac.iter().all(|q| {
            let d: f64 = (0..3)
                .map(|a| {
                    let x = (p[a] - q[a]).abs();
                    x.min(1.0 - x).powi(2)
                })
                .sum();
            d.sqrt() * side >= min_dist
        });
        if ok {
            frac.push(p);
        }
    }
    let pos = frac
        .iter()
        .map(|f| std::array::from_fn(|c| (0..3).map(|a| f[a] * cell[a][c]).sum()))
        .collect();
    let z = (0..n).map(|i| species[i % species.len()]).collect();
    AtomicSystem::periodic(z, pos, cell).unwrap()
}
