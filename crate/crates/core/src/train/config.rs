use serde::{Deserialize, Serialize};

use super::EnergyWeightRamp;

/// How the force-loss parameter gradient differences `∂E/∂θ` along the
/// force-residual direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HvpScheme {
    /// One displaced evaluation, O(h) error.
    Forward,
    /// Two displaced evaluations, O(h²) error.
    Central,
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Initial learning rate of the cosine schedule.
    pub lr: f64,
    /// Maximum global gradient norm.
    pub grad_clip: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Energy loss weight, used when `dynamic_weights` is absent.
    pub lambda_e: f64,
    /// Force loss weight.
    pub lambda_f: f64,
    pub dynamic_weights: Option<EnergyWeightRamp>,
    pub seed: u64,
    /// Displacement in Å for the force-loss gradient.
    pub hvp_step: f64,
    pub hvp_scheme: HvpScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            grad_clip: 0.5,
            epochs: 100,
            batch_size: 4,
            lambda_e: 4.0,
            lambda_f: 100.0,
            dynamic_weights: None,
            seed: 0,
            hvp_step: 1e-3,
            hvp_scheme: HvpScheme::Forward,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            out.push(format!("lr: must be positive, got {}", self.lr));
        }
        if !(self.grad_clip > 0.0 && self.grad_clip.is_finite()) {
            out.push(format!("grad_clip: must be positive, got {}", self.grad_clip));
        }
        if self.epochs == 0 {
            out.push("epochs: must be at least 1".into());
        }
        if self.batch_size == 0 {
            out.push("batch_size: must be at least 1".into());
        }
        if !(self.lambda_e >= 0.0 && self.lambda_e.is_finite()) {
            out.push(format!("lambda_e: must be non-negative, got {}", self.lambda_e));
        }
        if !(self.lambda_f > 0.0 && self.lambda_f.is_finite()) {
            out.push(format!("lambda_f: must be positive, got {}", self.lambda_f));
        }
        if let Some(r) = &self.dynamic_weights {
            if !(r.start >= 0.0 && r.end >= 0.0) {
                out.push("dynamic_weights: start and end must be non-negative".into());
            }
            if !(0.0..=1.0).contains(&r.ramp_fraction) {
                out.push(format!("dynamic_weights.ramp_fraction: must lie in [0, 1], got {}", r.ramp_fraction));
            }
        }
        if !(self.hvp_step > 0.0 && self.hvp_step < 0.1) {
            out.push(format!("hvp_step: must lie in (0, 0.1) Å, got {}", self.hvp_step));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_violations() {
        let c = TrainConfig::default();
        assert!(c.violations().is_empty());
        assert_eq!((c.lr, c.grad_clip, c.lambda_f), (5e-4, 0.5, 100.0));
        let bad = TrainConfig {
            lr: 0.0,
            grad_clip: -1.0,
            lambda_f: 0.0,
            lambda_e: -1.0,
            ..c
        };
        let v = bad.violations();
        assert_eq!(v.len(), 4, "{v:?}");
    }

    #[test]
    fn toml_roundtrip_and_unknown_fields() {
        let c = TrainConfig {
            dynamic_weights: Some(EnergyWeightRamp::default()),
            ..TrainConfig::default()
        };
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), c);
        assert!(toml::from_str::<TrainConfig>("lrr = 1.0").is_err());
        let partial: TrainConfig = toml::from_str("epochs = 3\nhvp_scheme = \"central\"").unwrap();
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.hvp_scheme, HvpScheme::Central);
    }
}
