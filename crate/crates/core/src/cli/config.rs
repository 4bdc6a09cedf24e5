use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Where training frames come from and how they are split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Extended XYZ files, relative to the config file.
    pub paths: Vec<PathBuf>,
    /// Train, validation and test fractions.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            paths: Vec::new(),
            ratios: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

/// Contents of a run configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut cfg.data.paths {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every violated constraint across all sections.
    pub fn violations(&self) -> Vec<String> {
        let mut out: Vec<String> = self.model.violations().into_iter().map(|v| format!("model.{v}")).collect();
        out.extend(self.train.violations().into_iter().map(|v| format!("train.{v}")));
        if self.data.paths.is_empty() {
            out.push("data.paths: at least one dataset file is required".into());
        }
        let r = self.data.ratios;
        if r.iter().any(|x| !(*x > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            out.push(format!("data.ratios: must be three positive fractions summing to 1, got {r:?}"));
        }
        out
    }
}

/// Help text listing every configuration field with its unit.
pub const CONFIG_FIELDS: &str = "\
Run config file (TOML). Unknown fields are rejected.

[model]
  num_layers        int      message-passing layers (default 3)
  hidden_channels   int      feature width d, even (default 128)
  num_heads         int      gating heads, divides d (default 16)
  num_basis         int      Gaussian radial basis size (default 32)
  cutoff            Å        neighbor cutoff (default 5.0)
  rope_enabled      bool     rotary relative rotation of features (default true)
  temporal_enabled  bool     bilinear cross-layer residual (default true)
  lse_enabled       bool     common-neighbor structure encoding (default true)

[train]
  lr                1        initial learning rate, cosine decay to 0 (default 5e-4)
  grad_clip         1        max global gradient norm (default 0.5)
  epochs            int      passes over the training split (default 100)
  batch_size        int      frames per step (default 4)
  lambda_e          1        weight of the per-atom energy MAE in eV (default 4)
  lambda_f          1        weight of the force MAE in eV/Å (default 100)
  dynamic_weights   table    optional λ_E ramp: start, end, ramp_fraction (0.05, 4, 0.5)
  seed              int      batch order seed (default 0)
  hvp_step          Å        displacement for the force-loss gradient (default 1e-3)
  hvp_scheme        string   forward | central (default forward)

[data]
  paths             [path]   extended XYZ files, relative to the config file
  ratios            [1; 3]   train/val/test fractions (default [0.8, 0.1, 0.1])
  seed              int      split shuffle seed (default 0)

Units: energies eV (reported meV/atom), forces eV/Å (reported meV/Å),
stress eV/Å³, lengths Å, time fs, masses amu.
";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_field_is_documented() {
        let cfg = RunConfig::default();
        let value: toml::Value = toml::from_str(&cfg.to_toml()).unwrap();
        for (section, table) in value.as_table().unwrap() {
            for key in table.as_table().unwrap().keys() {
                assert!(
                    CONFIG_FIELDS.lines().any(|l| l.trim_start().starts_with(&format!("{key} "))),
                    "{section}.{key} undocumented"
                );
            }
            assert!(CONFIG_FIELDS.contains(&format!("[{section}]")));
        }
        for key in ["dynamic_weights", "paths"] {
            assert!(CONFIG_FIELDS.contains(key));
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_toml("[train]\nlearning_rate = 1e-3\n").is_err());
        assert!(RunConfig::from_toml("[modle]\n").is_err());
        let ok = RunConfig::from_toml("[train]\nlr = 1e-3\n[data]\npaths = ['a.xyz']\n").unwrap();
        assert_eq!(ok.train.lr, 1e-3);
        assert_eq!(ok.model, ModelConfig::default());
    }

    #[test]
    fn violations_cover_all_sections() {
        let mut cfg = RunConfig::default();
        cfg.model.hidden_channels = 7;
        cfg.train.lr = 0.0;
        cfg.data.ratios = [0.5, 0.5, 0.5];
        let v = cfg.violations();
        for prefix in ["model.hidden_channels", "train.lr", "data.paths", "data.ratios"] {
            assert!(v.iter().any(|m| m.starts_with(prefix)), "{prefix} missing from {v:?}");
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.data.paths = vec!["x.xyz".into()];
        cfg.train.dynamic_weights = Some(Default::default());
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
