use serde::{Deserialize, Serialize};

use crate::geom::MAX_CUTOFF;

/// Network hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    /// Feature dimension `d`.
    pub hidden_channels: usize,
    pub num_heads: usize,
    pub num_basis: usize,
    /// Å.
    pub cutoff: f64,
    pub rope_enabled: bool,
    pub temporal_enabled: bool,
    pub lse_enabled: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 3,
            hidden_channels: 128,
            num_heads: 16,
            num_basis: 32,
            cutoff: 5.0,
            rope_enabled: true,
            temporal_enabled: true,
            lse_enabled: true,
        }
    }
}

impl ModelConfig {
    /// Every violated constraint, as `field: reason` strings.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.num_layers == 0 {
            out.push("num_layers: must be at least 1".to_string());
        }
        if self.hidden_channels == 0 || self.hidden_channels % 2 != 0 {
            out.push(format!(
                "hidden_channels: must be a positive even number, got {}",
                self.hidden_channels
            ));
        }
        if self.num_heads == 0 {
            out.push("num_heads: must be at least 1".to_string());
        } else if self.hidden_channels % self.num_heads != 0 {
            out.push(format!(
                "num_heads: {} does not divide hidden_channels {}",
                self.num_heads, self.hidden_channels
            ));
        }
        if self.num_basis < 2 {
            out.push(format!("num_basis: must be at least 2, got {}", self.num_basis));
        }
        if !(self.cutoff > 0.0 && self.cutoff <= MAX_CUTOFF) {
            out.push(format!("cutoff: must be in (0, {MAX_CUTOFF}] Å, got {}", self.cutoff));
        }
        out
    }

    pub fn validate(&self) -> Result<(), super::ModelError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(super::ModelError::InvalidConfig(v))
        }
    }

    pub fn head_width(&self) -> usize {
        self.hidden_channels / self.num_heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_small_configuration() {
        let c = ModelConfig::default();
        assert_eq!(
            (c.num_layers, c.num_heads, c.num_basis, c.hidden_channels, c.cutoff),
            (3, 16, 32, 128, 5.0)
        );
        assert!(c.violations().is_empty());
    }

    #[test]
    fn all_violations_reported() {
        let c = ModelConfig {
            num_layers: 0,
            hidden_channels: 7,
            num_heads: 2,
            num_basis: 1,
            cutoff: -1.0,
            ..ModelConfig::default()
        };
        let v = c.violations();
        assert_eq!(v.len(), 5, "{v:?}");
    }

    #[test]
    fn unknown_field_rejected() {
        let err = toml::from_str::<ModelConfig>("num_layer = 2").unwrap_err();
        assert!(err.to_string().contains("num_layer"));
    }
}
