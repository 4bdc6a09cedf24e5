//! Plain-array versions of the per-edge and per-node feature maps. The tape
//! forward pass builds the same quantities from diffcore primitives.

use super::{ModelConfig, ModelError};
use crate::diffcore::Unary;

/// Cosine cutoff envelope `½(cos(πd/rc) + 1)`, zero beyond `rc`.
pub fn envelope(cutoff: f64) -> Unary {
    Unary::Switch { on: 0.0, off: cutoff }
}

/// Gaussian centers `μ_k = k · rc / (K − 1)` and width `γ = (K / rc)²`.
pub fn rbf_centers(config: &ModelConfig) -> (Vec<f64>, f64) {
    let k = config.num_basis;
    let rc = config.cutoff;
    let mu = (0..k).map(|i| i as f64 * rc / (k - 1) as f64).collect();
    (mu, (k as f64 / rc).powi(2))
}

pub fn rbf_expand(d: f64, config: &ModelConfig) -> Result<Vec<f64>, ModelError> {
    if !(d > 0.0 && d <= config.cutoff) {
        return Err(ModelError::DistanceOutOfRange {
            distance: d,
            cutoff: config.cutoff,
        });
    }
    let (mu, gamma) = rbf_centers(config);
    let env = envelope(config.cutoff).eval(d);
    Ok(mu.iter().map(|m| (-gamma * (d - m).powi(2)).exp() * env).collect())
}

/// Base frequencies `θ_n = 10000^(−2(n−1)/d)` for `n = 1..=d/2`.
pub fn rope_theta(d: usize) -> Vec<f64> {
    (0..d / 2)
        .map(|k| 10000f64.powf(-2.0 * k as f64 / d as f64))
        .collect()
}

/// Head that owns channel pair `k`.
pub fn pair_head(k: usize, config: &ModelConfig) -> usize {
    2 * k / config.head_width()
}

/// Per-pair angles `θ_n · a_head(n)` from the per-head scalars `a = hᵀ W`.
///
/// `w` is the `d × heads` angle head, row-major.
pub fn rope_angles(h: &[f64], w: &[f64], config: &ModelConfig) -> Vec<f64> {
    let (d, heads) = (config.hidden_channels, config.num_heads);
    let a: Vec<f64> = (0..heads)
        .map(|q| (0..d).map(|c| h[c] * w[c * heads + q]).sum())
        .collect();
    rope_theta(d)
        .iter()
        .enumerate()
        .map(|(k, t)| t * a[pair_head(k, config)])
        .collect()
}

/// Rotates each channel pair `(h[2k], h[2k+1])` by `angles[k]`.
pub fn rope_rotate(h: &[f64], angles: &[f64]) -> Vec<f64> {
    assert_eq!(h.len(), 2 * angles.len(), "rope_rotate needs d/2 angles");
    let mut out = vec![0.0; h.len()];
    for (k, &t) in angles.iter().enumerate() {
        let (s, c) = t.sin_cos();
        out[2 * k] = h[2 * k] * c - h[2 * k + 1] * s;
        out[2 * k + 1] = h[2 * k] * s + h[2 * k + 1] * c;
    }
    out
}

/// `out[c] = (M h2)[c] · h1[c]` with `M` row-major `d × d`.
pub fn temporal_connect(h1: &[f64], h2: &[f64], m: &[f64]) -> Vec<f64> {
    let d = h1.len();
    (0..d)
        .map(|c| (0..d).map(|k| m[c * d + k] * h2[k]).sum::<f64>() * h1[c])
        .collect()
}
