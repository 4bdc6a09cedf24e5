//! Microcanonical dynamics with velocity Verlet and energy-drift
//! diagnostics.
//!
//! Units: Å, fs, amu and eV. Forces come from any [`ForceProvider`]; the
//! neighbor list is rebuilt from scratch on every evaluation.

mod provider;

pub use provider::{ForceProvider, Harmonic, ZeroForce};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::atomic_mass;
use crate::geom::{AtomicSystem, Vec3};

/// Boltzmann constant, eV/K.
pub const BOLTZMANN: f64 = 8.617333262e-5;
/// One amu·Å²/fs² expressed in eV.
pub const AMU_A2_FS2_IN_EV: f64 = 103.642_696_526_805;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MdError {
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid run: {0}")]
    InvalidRun(String),
    #[error("force evaluation failed at step {step}: {message}")]
    Force { step: usize, message: String },
}

/// Positions, velocities (Å/fs) and masses (amu) at time `time` fs.
///
/// Positions are never wrapped during integration; use
/// [`MdState::output_system`] for a wrapped copy.
#[derive(Debug, Clone, PartialEq)]
pub struct MdState {
    pub system: AtomicSystem,
    pub velocities: Vec<Vec3>,
    pub masses: Vec<f64>,
    pub time: f64,
    pub step: usize,
    /// Potential energy and forces at the current positions, once known.
    cache: Option<(f64, Vec<Vec3>)>,
}

impl MdState {
    /// Standard atomic masses for each species.
    pub fn new(system: AtomicSystem, velocities: Vec<Vec3>) -> Result<Self, MdError> {
        let masses = system.species.iter().map(|&z| atomic_mass(z)).collect();
        Self::with_masses(system, velocities, masses)
    }

    pub fn with_masses(
        system: AtomicSystem,
        velocities: Vec<Vec3>,
        masses: Vec<f64>,
    ) -> Result<Self, MdError> {
        let n = system.len();
        if velocities.len() != n || masses.len() != n {
            return Err(MdError::InvalidState(format!(
                "{n} atoms, {} velocities, {} masses",
                velocities.len(),
                masses.len()
            )));
        }
        if let Some(m) = masses.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(MdError::InvalidState(format!("mass {m} must be positive")));
        }
        if velocities.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MdError::InvalidState("non-finite velocity".into()));
        }
        Ok(Self {
            system,
            velocities,
            masses,
            time: 0.0,
            step: 0,
            cache: None,
        })
    }

    pub fn at_rest(system: AtomicSystem) -> Result<Self, MdError> {
        let n = system.len();
        Self::new(system, vec![[0.0; 3]; n])
    }

    /// Maxwell-Boltzmann velocities at `temperature` K with the
    /// centre-of-mass momentum removed.
    pub fn thermalized(system: AtomicSystem, temperature: f64, seed: u64) -> Result<Self, MdError> {
        if !(temperature >= 0.0 && temperature.is_finite()) {
            return Err(MdError::InvalidState(format!("temperature {temperature} K")));
        }
        let mut state = Self::at_rest(system)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (v, m) in state.velocities.iter_mut().zip(&state.masses) {
            let sd = (BOLTZMANN * temperature / (m * AMU_A2_FS2_IN_EV)).sqrt();
            let normal = Normal::new(0.0, sd).expect("finite spread");
            *v = std::array::from_fn(|_| normal.sample(&mut rng));
        }
        let total_mass: f64 = state.masses.iter().sum();
        let p = state.momentum();
        for v in &mut state.velocities {
            for a in 0..3 {
                v[a] -= p[a] / total_mass;
            }
        }
        Ok(state)
    }

    /// eV.
    pub fn kinetic_energy(&self) -> f64 {
        let mv2: f64 = self
            .velocities
            .iter()
            .zip(&self.masses)
            .map(|(v, m)| m * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]))
            .sum();
        0.5 * mv2 * AMU_A2_FS2_IN_EV
    }

    /// Instantaneous temperature `2K / (3 n k_B)`, K.
    pub fn temperature(&self) -> f64 {
        2.0 * self.kinetic_energy() / (3.0 * self.system.len() as f64 * BOLTZMANN)
    }

    /// Total momentum, amu·Å/fs.
    pub fn momentum(&self) -> Vec3 {
        let mut p = [0.0; 3];
        for (v, m) in self.velocities.iter().zip(&self.masses) {
            for a in 0..3 {
                p[a] += m * v[a];
            }
        }
        p
    }

    /// Copy of the system with positions wrapped into the cell.
    pub fn output_system(&self) -> AtomicSystem {
        let mut s = self.system.clone();
        s.positions = self.system.wrapped_positions();
        s
    }

    fn forces(&mut self, provider: &mut dyn ForceProvider) -> Result<(f64, Vec<Vec3>), MdError> {
        if self.cache.is_none() {
            let out = provider.compute(&self.system).map_err(|message| MdError::Force {
                step: self.step,
                message,
            })?;
            self.cache = Some(out);
        }
        Ok(self.cache.clone().expect("just filled"))
    }
}

/// One velocity-Verlet step of `dt` fs: half kick, drift, fresh force
/// evaluation, half kick.
pub fn verlet_step(
    state: &MdState,
    provider: &mut dyn ForceProvider,
    dt: f64,
) -> Result<MdState, MdError> {
    let mut next = state.clone();
    advance(&mut next, provider, dt)?;
    Ok(next)
}

fn advance(state: &mut MdState, provider: &mut dyn ForceProvider, dt: f64) -> Result<(), MdError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(MdError::InvalidRun(format!("time step {dt} fs must be positive")));
    }
    let (_, f) = state.forces(provider)?;
    kick(state, &f, dt);
    for (x, v) in state.system.positions.iter_mut().zip(&state.velocities) {
        for a in 0..3 {
            x[a] += dt * v[a];
        }
    }
    state.cache = None;
    state.step += 1;
    state.time += dt;
    let (_, f) = state.forces(provider)?;
    kick(state, &f, dt);
    Ok(())
}

fn kick(state: &mut MdState, forces: &[Vec3], dt: f64) {
    for ((v, f), m) in state.velocities.iter_mut().zip(forces).zip(&state.masses) {
        let c = 0.5 * dt / (m * AMU_A2_FS2_IN_EV);
        for a in 0..3 {
            v[a] += c * f[a];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdSample {
    pub step: usize,
    /// fs.
    pub time: f64,
    /// eV.
    pub potential: f64,
    pub kinetic: f64,
    pub total: f64,
    /// K.
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdReport {
    pub num_atoms: usize,
    /// fs.
    pub dt: f64,
    pub samples: Vec<MdSample>,
    /// Least-squares slope of total energy, meV/atom/ps.
    pub drift_mev_atom_ps: f64,
    /// Largest deviation of total energy from the first sample, eV.
    pub max_energy_error: f64,
}

/// Integrates `n_steps` of NVE dynamics, sampling the initial state and
/// every `sample_every`-th step after it. `on_sample` sees each sampled
/// state, e.g. to write a trajectory.
pub fn run_nve(
    initial: &MdState,
    provider: &mut dyn ForceProvider,
    dt: f64,
    n_steps: usize,
    sample_every: usize,
    on_sample: &mut dyn FnMut(&MdState, &MdSample),
) -> Result<(MdState, MdReport), MdError> {
    if n_steps == 0 {
        return Err(MdError::InvalidRun("n_steps must be at least 1".into()));
    }
    if sample_every == 0 {
        return Err(MdError::InvalidRun("sample_every must be at least 1".into()));
    }
    let mut state = initial.clone();
    let mut samples = Vec::new();
    let mut record = |state: &mut MdState, provider: &mut dyn ForceProvider| -> Result<(), MdError> {
        let (potential, _) = state.forces(provider)?;
        let kinetic = state.kinetic_energy();
        let s = MdSample {
            step: state.step,
            time: state.time,
            potential,
            kinetic,
            total: potential + kinetic,
            temperature: state.temperature(),
        };
        on_sample(state, &s);
        samples.push(s);
        Ok(())
    };
    record(&mut state, provider)?;
    for k in 1..=n_steps {
        advance(&mut state, provider, dt)?;
        if k % sample_every == 0 {
            record(&mut state, provider)?;
        }
    }
    let n = state.system.len();
    let t: Vec<f64> = samples.iter().map(|s| s.time).collect();
    let e: Vec<f64> = samples.iter().map(|s| s.total).collect();
    // eV/fs → meV/atom/ps
    let drift_mev_atom_ps = slope(&t, &e) * 1e6 / n as f64;
    let max_energy_error = e.iter().map(|x| (x - e[0]).abs()).fold(0.0, f64::max);
    Ok((
        state,
        MdReport {
            num_atoms: n,
            dt,
            samples,
            drift_mev_atom_ps,
            max_energy_error,
        },
    ))
}

/// Ordinary least-squares slope of `y` against `x`; zero for fewer than two
/// distinct abscissae.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}
