use serde::{Deserialize, Serialize};

/// `lr0 · ½(1 + cos(π · step / total_steps))`; `step` is clamped to the run.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Energy-weight ramp: `start` at step 0, linear to `end` over the first
/// `ramp_fraction` of the run, then held.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyWeightRamp {
    pub start: f64,
    pub end: f64,
    pub ramp_fraction: f64,
}

impl Default for EnergyWeightRamp {
    fn default() -> Self {
        Self {
            start: 0.05,
            end: 4.0,
            ramp_fraction: 0.5,
        }
    }
}

pub fn dynamic_lambda_e(step: usize, total_steps: usize, ramp: &EnergyWeightRamp) -> f64 {
    let ramp_steps = ramp.ramp_fraction * total_steps as f64;
    if ramp_steps <= 0.0 || step as f64 >= ramp_steps {
        return ramp.end;
    }
    let t = step as f64 / ramp_steps;
    ramp.start + t * (ramp.end - ramp.start)
}
