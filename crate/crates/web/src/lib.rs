//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every function returns a flat `Float64Array`; the layout is given per
//! function.

use wasm_bindgen::prelude::*;

use localframe::data::{fcc, LennardJones};
use localframe::geom::compute_frame;
use localframe::md::{run_nve, MdState};
use localframe::model::{rbf_expand, ModelConfig};

/// Radial basis functions sampled at `points` distances in `(0, cutoff]`.
///
/// Layout: `points` rows of `[r, φ_1(r), …, φ_K(r)]`.
#[wasm_bindgen]
pub fn rbf_curves(num_basis: usize, cutoff: f64, points: usize) -> Result<Vec<f64>, JsError> {
    let config = ModelConfig {
        num_basis,
        cutoff,
        ..ModelConfig::default()
    };
    if num_basis < 2 || !(cutoff > 0.0) || points < 2 {
        return Err(JsError::new("need at least 2 basis functions, 2 points and a positive cutoff"));
    }
    let mut out = Vec::with_capacity(points * (num_basis + 1));
    for k in 1..=points {
        let r = cutoff * k as f64 / points as f64;
        out.push(r);
        out.extend(rbf_expand(r, &config).map_err(|e| JsError::new(&e.to_string()))?);
    }
    Ok(out)
}

/// Frame of the edge from `(0,0,0)` to `(d,0,0)` with the centroid at
/// `(cx, cy, 0)`.
///
/// Layout: `[e1 (3), e2 (3), e3 (3), gate]`.
#[wasm_bindgen]
pub fn edge_frame(d: f64, cx: f64, cy: f64) -> Result<Vec<f64>, JsError> {
    let f = compute_frame(&[0.0; 3], &[d, 0.0, 0.0], &[cx, cy, 0.0]).map_err(|e| JsError::new(&e.to_string()))?;
    let mut out: Vec<f64> = [f.e1, f.e2, f.e3].concat();
    out.push(f.gate);
    Ok(out)
}

/// Lennard-Jones pair energy (eV) and force (eV/Å) on `points` separations.
///
/// Layout: `points` rows of `[r, E, F]`.
#[wasm_bindgen]
pub fn lj_curve(epsilon: f64, sigma: f64, cutoff: f64, r_min: f64, r_max: f64, points: usize) -> Vec<f64> {
    let lj = LennardJones::new(epsilon, sigma, cutoff);
    (0..points)
        .flat_map(|k| {
            let r = r_min + (r_max - r_min) * k as f64 / (points.max(2) - 1) as f64;
            let (e, de) = lj.pair(r);
            [r, e, -de]
        })
        .collect()
}

/// NVE trajectory of a 32-atom Lennard-Jones argon crystal started from
/// the lattice at `temperature` K.
///
/// Layout: one row per sample of `[time fs, potential, kinetic, total]`,
/// energies in meV/atom relative to the initial total.
#[wasm_bindgen]
pub fn md_energy_trace(temperature: f64, dt: f64, steps: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    let err = |e: &dyn std::fmt::Display| JsError::new(&e.to_string());
    let system = fcc(18, 5.26, [2, 2, 2]).map_err(|e| err(&e))?;
    let state = MdState::thermalized(system, temperature, seed).map_err(|e| err(&e))?;
    let mut lj = LennardJones::new(0.0104, 3.4, 10.2);
    let every = (steps / 200).max(1);
    let (_, report) = run_nve(&state, &mut lj, dt, steps, every, &mut |_, _| {}).map_err(|e| err(&e))?;
    let n = report.num_atoms as f64;
    let e0 = report.samples[0].total;
    Ok(report
        .samples
        .iter()
        .flat_map(|s| {
            [
                s.time,
                1e3 * (s.potential - e0) / n,
                1e3 * s.kinetic / n,
                1e3 * (s.total - e0) / n,
            ]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rbf_layout() {
        let v = rbf_curves(4, 5.0, 10).unwrap();
        assert_eq!(v.len(), 50);
        // envelope vanishes at the cutoff
        assert_eq!(v[45], 5.0);
        assert!(v[46..].iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn frame_axes_are_orthonormal() {
        let f = edge_frame(1.5, 0.7, 1.1).unwrap();
        let dot = |a: usize, b: usize| (0..3).map(|k| f[3 * a + k] * f[3 * b + k]).sum::<f64>();
        for a in 0..3 {
            for b in 0..3 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot(a, b) - want).abs() < 1e-12);
            }
        }
        assert!(f[9] > 0.99);
        // centroid on the edge axis collapses the frame
        assert_eq!(edge_frame(1.5, 0.7, 0.0).unwrap()[9], 0.0);
    }

    #[test]
    fn lj_minimum() {
        let r0 = 2f64.powf(1.0 / 6.0) * 3.4;
        let v = lj_curve(0.0104, 3.4, 10.2, r0, r0 + 1.0, 2);
        assert!(v[2].abs() < 1e-12);
        assert!(v[1] < 0.0);
    }

    #[test]
    fn md_trace_conserves_energy() {
        let v = md_energy_trace(40.0, 2.0, 200, 1).unwrap();
        assert_eq!(v.len(), 4 * 201);
        let worst = v.chunks(4).map(|r| r[3].abs()).fold(0.0, f64::max);
        assert!(worst < 0.05, "{worst}");
    }
}
