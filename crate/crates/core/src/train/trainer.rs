use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    clip_global_norm, cosine_lr, dynamic_lambda_e, evaluate_frames, loss, Adam, HvpScheme,
    TrainConfig, TrainError,
};
use crate::data::LabeledFrame;
use crate::diffcore::{Array, DiffError};
use crate::model::{evaluate, fit_energy_shifts, Checkpoint, ModelError, ModelState, Request, Topology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub lambda_e: f64,
    pub lambda_f: f64,
    pub loss: f64,
    pub energy_mae_mev_atom: f64,
    pub force_mae_mev_a: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Completed epochs.
    pub epoch: usize,
    pub step: usize,
    pub val_energy_mae_mev_atom: f64,
    pub val_force_mae_mev_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub step: usize,
    pub train_energy_mae_mev_atom: f64,
    pub train_force_mae_mev_a: f64,
    pub val_energy_mae_mev_atom: Option<f64>,
    pub val_force_mae_mev_a: Option<f64>,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Step(StepRecord),
    Epoch(EpochRecord),
    Final(FinalRecord),
}

/// Mini-batch optimizer state over a fixed set of frames.
///
/// Batches come from a per-epoch permutation seeded by `(seed, epoch)`, so
/// a resumed run replays exactly the batches the uninterrupted run would.
pub struct Trainer {
    state: ModelState,
    adam: Adam,
    config: TrainConfig,
    train: Vec<LabeledFrame>,
    train_topos: Vec<Topology>,
    val: Vec<LabeledFrame>,
    val_topos: Vec<Topology>,
    step: usize,
    last_good: Option<PathBuf>,
}

fn topologies(state: &ModelState, frames: &[LabeledFrame]) -> Result<Vec<Topology>, ModelError> {
    frames
        .iter()
        .map(|f| Topology::build(&f.system, state.config().cutoff))
        .collect()
}

/// RMS force of `state` over the first few frames that carry forces.
fn raw_force_rms(state: &ModelState, frames: &[LabeledFrame]) -> Result<f64, TrainError> {
    let (mut sum, mut count) = (0.0, 0usize);
    for f in frames.iter().filter(|f| f.has_forces).take(8) {
        let topo = Topology::build(&f.system, state.config().cutoff)?;
        let req = Request {
            forces: true,
            ..Request::default()
        };
        let out = evaluate(state, &f.system, &topo, req)?;
        let forces = out.forces.expect("requested");
        sum += forces.iter().flatten().map(|v| v * v).sum::<f64>();
        count += 3 * forces.len();
    }
    Ok(if count > 0 { (sum / count as f64).sqrt() } else { 0.0 })
}

impl Trainer {
    /// Fits per-species energy shifts on `train` and sets the energy scale
    /// so the untrained model's RMS force matches the training forces (the
    /// residual per-atom energy spread when no forces are present).
    pub fn new(
        mut state: ModelState,
        config: TrainConfig,
        train: Vec<LabeledFrame>,
        val: Vec<LabeledFrame>,
    ) -> Result<Self, TrainError> {
        let v = config.violations();
        if !v.is_empty() {
            return Err(TrainError::Config(v));
        }
        if train.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let pairs: Vec<(&[u8], f64)> = train.iter().map(|f| (&f.system.species[..], f.energy)).collect();
        let (shifts, spread) = fit_energy_shifts(&pairs);
        let comps: Vec<f64> = train
            .iter()
            .filter(|f| f.has_forces)
            .flat_map(|f| f.forces.iter().flatten().copied())
            .collect();
        let rms = (comps.iter().map(|v| v * v).sum::<f64>() / comps.len().max(1) as f64).sqrt();
        state.set_energy_reference(&shifts, 1.0);
        let raw = raw_force_rms(&state, &train)?;
        let scale = if rms > 0.0 && raw > 0.0 {
            rms / raw
        } else {
            [spread, 1.0].into_iter().find(|s| *s > 0.0).unwrap_or(1.0)
        };
        state.set_energy_reference(&shifts, scale);
        Self::assemble(state, config, train, val, None)
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(
        checkpoint: &Checkpoint,
        config: TrainConfig,
        train: Vec<LabeledFrame>,
        val: Vec<LabeledFrame>,
    ) -> Result<Self, TrainError> {
        let meta = &checkpoint.metadata;
        let saved: TrainConfig = serde_json::from_value(meta["train_config"].clone())
            .map_err(|e| TrainError::Resume(format!("checkpoint lacks a training config: {e}")))?;
        if saved != config {
            return Err(TrainError::Resume("training config differs from the checkpoint's".into()));
        }
        let step = meta["step"].as_u64().ok_or_else(|| TrainError::Resume("missing step".into()))?;
        let t = meta["adam_t"].as_u64().ok_or_else(|| TrainError::Resume("missing adam_t".into()))?;
        let state = checkpoint.state.clone();
        let mut adam = Adam::new(&state.arrays().iter().map(Array::shape).collect::<Vec<_>>());
        adam.t = t;
        for (k, name) in state.names().iter().enumerate() {
            if !state.is_trainable(k) {
                continue;
            }
            for (slot, prefix) in [(&mut adam.m[k], "adam.m."), (&mut adam.v[k], "adam.v.")] {
                let key = format!("{prefix}{name}");
                let (_, a) = checkpoint
                    .extra
                    .iter()
                    .find(|(n, _)| *n == key)
                    .ok_or_else(|| TrainError::Resume(format!("missing optimizer array {key}")))?;
                if a.shape() != slot.shape() {
                    return Err(TrainError::Resume(format!("optimizer array {key} has the wrong shape")));
                }
                *slot = a.clone();
            }
        }
        let mut tr = Self::assemble(state, config, train, val, Some(adam))?;
        if step as usize > tr.total_steps() {
            return Err(TrainError::Resume(format!("step {step} beyond the run's {} steps", tr.total_steps())));
        }
        tr.step = step as usize;
        Ok(tr)
    }

    fn assemble(
        state: ModelState,
        config: TrainConfig,
        train: Vec<LabeledFrame>,
        val: Vec<LabeledFrame>,
        adam: Option<Adam>,
    ) -> Result<Self, TrainError> {
        let train_topos = topologies(&state, &train)?;
        let val_topos = topologies(&state, &val)?;
        let adam = adam.unwrap_or_else(|| Adam::new(&state.arrays().iter().map(Array::shape).collect::<Vec<_>>()));
        Ok(Self {
            state,
            adam,
            config,
            train,
            train_topos,
            val,
            val_topos,
            step: 0,
            last_good: None,
        })
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    #[cfg(test)]
    pub(crate) fn state_mut(&mut self) -> &mut ModelState {
        &mut self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.train.len().div_ceil(self.config.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.config.epochs * self.steps_per_epoch()
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.total_steps()
    }

    /// Path reported if a later step turns non-finite.
    pub fn set_last_good(&mut self, path: PathBuf) {
        self.last_good = Some(path);
    }

    fn batch(&self, step: usize) -> Vec<usize> {
        let spe = self.steps_per_epoch();
        let (epoch, b) = (step / spe, step % spe);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        let bs = self.config.batch_size;
        order[b * bs..((b + 1) * bs).min(order.len())].to_vec()
    }

    fn non_finite(&self) -> TrainError {
        TrainError::NonFinite {
            step: self.step,
            last_good: self.last_good.clone(),
        }
    }

    fn guard<T>(&self, r: Result<T, ModelError>) -> Result<T, TrainError> {
        r.map_err(|e| match e {
            ModelError::Diff(DiffError::NonFinite { .. }) => self.non_finite(),
            e => e.into(),
        })
    }

    /// `∂E/∂θ` at positions displaced by `shift · u` on the frame's topology.
    fn displaced_grads(&self, k: usize, u: &[[f64; 3]], shift: f64) -> Result<Vec<Array>, TrainError> {
        let mut sys = self.train[k].system.clone();
        for (p, d) in sys.positions.iter_mut().zip(u) {
            for a in 0..3 {
                p[a] += shift * d[a];
            }
        }
        let req = Request {
            params: true,
            ..Request::default()
        };
        let out = self.guard(evaluate(&self.state, &sys, &self.train_topos[k], req))?;
        Ok(out.param_grads.expect("requested"))
    }

    /// Batch loss and its gradient with respect to every state array.
    pub(crate) fn gradient(
        &self,
        idx: &[usize],
        lambda_e: f64,
        lambda_f: f64,
    ) -> Result<(super::Loss, Vec<Array>), TrainError> {
        let req = Request {
            forces: true,
            params: true,
            ..Request::default()
        };
        let mut energies = Vec::with_capacity(idx.len());
        let mut forces = Vec::with_capacity(idx.len());
        let mut grads_e = Vec::with_capacity(idx.len());
        for &k in idx {
            let out = self.guard(evaluate(&self.state, &self.train[k].system, &self.train_topos[k], req))?;
            energies.push(out.energy);
            forces.push(out.forces.expect("requested"));
            grads_e.push(out.param_grads.expect("requested"));
        }
        let targets: Vec<&LabeledFrame> = idx.iter().map(|&k| &self.train[k]).collect();
        let l = loss(&energies, &forces, &targets, lambda_e, lambda_f)?;
        if !l.total.is_finite() {
            return Err(self.non_finite());
        }

        let mut grads: Vec<Array> = self.state.arrays().iter().map(|a| Array::zeros(a.shape())).collect();
        let h = self.config.hvp_step;
        for (b, &k) in idx.iter().enumerate() {
            axpy(&mut grads, l.d_energy[b], &grads_e[b]);
            // dL/dθ through the forces is −∂/∂θ (u · ∇E), differenced along û
            let u = &l.d_forces[b];
            let umax = u.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            if umax == 0.0 {
                continue;
            }
            let unit: Vec<[f64; 3]> = u.iter().map(|r| r.map(|v| v / umax)).collect();
            let plus = self.displaced_grads(k, &unit, h)?;
            match self.config.hvp_scheme {
                HvpScheme::Forward => {
                    axpy(&mut grads, -umax / h, &plus);
                    axpy(&mut grads, umax / h, &grads_e[b]);
                }
                HvpScheme::Central => {
                    let minus = self.displaced_grads(k, &unit, -h)?;
                    axpy(&mut grads, -umax / (2.0 * h), &plus);
                    axpy(&mut grads, umax / (2.0 * h), &minus);
                }
            }
        }
        if !grads.iter().all(Array::is_finite) {
            return Err(self.non_finite());
        }
        Ok((l, grads))
    }

    /// One optimizer update on the next batch.
    pub fn step(&mut self) -> Result<StepRecord, TrainError> {
        if self.is_finished() {
            return Err(TrainError::Finished(self.total_steps()));
        }
        let total = self.total_steps();
        let idx = self.batch(self.step);
        let lr = cosine_lr(self.step, total, self.config.lr);
        let lambda_e = match &self.config.dynamic_weights {
            Some(r) => dynamic_lambda_e(self.step, total, r),
            None => self.config.lambda_e,
        };
        let lambda_f = self.config.lambda_f;
        let (l, mut grads) = self.gradient(&idx, lambda_e, lambda_f)?;
        let mask: Vec<bool> = (0..grads.len()).map(|k| self.state.is_trainable(k)).collect();
        for (g, &m) in grads.iter_mut().zip(&mask) {
            if !m {
                g.scale_in_place(0.0);
            }
        }
        let grad_norm = clip_global_norm(&mut grads, self.config.grad_clip);
        self.adam.update(self.state.arrays_mut(), &grads, &mask, lr);
        let rec = StepRecord {
            step: self.step,
            epoch: self.step / self.steps_per_epoch(),
            lr,
            lambda_e,
            lambda_f,
            loss: l.total,
            energy_mae_mev_atom: 1e3 * l.energy_mae,
            force_mae_mev_a: 1e3 * l.force_mae,
            grad_norm,
        };
        self.step += 1;
        Ok(rec)
    }

    /// Runs until the schedule ends or `max_steps` more updates were made,
    /// emitting step records, per-epoch validation and a final summary.
    pub fn run(
        &mut self,
        max_steps: Option<usize>,
        sink: &mut dyn FnMut(&LogRecord),
    ) -> Result<(), TrainError> {
        let stop = max_steps.map_or(self.total_steps(), |m| (self.step + m).min(self.total_steps()));
        while self.step < stop {
            let rec = self.step()?;
            sink(&LogRecord::Step(rec));
            if self.step % self.steps_per_epoch() == 0 && !self.val.is_empty() {
                let v = self.validate()?;
                sink(&LogRecord::Epoch(EpochRecord {
                    epoch: self.step / self.steps_per_epoch(),
                    step: self.step,
                    val_energy_mae_mev_atom: v.0,
                    val_force_mae_mev_a: v.1,
                }));
            }
            if self.is_finished() {
                let train: Vec<&LabeledFrame> = self.train.iter().collect();
                let t = evaluate_frames(&self.state, &train, Some(&self.train_topos))?;
                let v = if self.val.is_empty() { None } else { Some(self.validate()?) };
                sink(&LogRecord::Final(FinalRecord {
                    step: self.step,
                    train_energy_mae_mev_atom: t.energy_mae,
                    train_force_mae_mev_a: t.force_mae,
                    val_energy_mae_mev_atom: v.map(|v| v.0),
                    val_force_mae_mev_a: v.map(|v| v.1),
                }));
            }
        }
        Ok(())
    }

    /// Validation (energy meV/atom, force meV/Å).
    pub fn validate(&self) -> Result<(f64, f64), TrainError> {
        let val: Vec<&LabeledFrame> = self.val.iter().collect();
        let r = evaluate_frames(&self.state, &val, Some(&self.val_topos))?;
        Ok((r.energy_mae, r.force_mae))
    }

    /// Model plus optimizer moments, step counter and training config.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.state.clone());
        for (k, name) in self.state.names().iter().enumerate() {
            if self.state.is_trainable(k) {
                ck.extra.push((format!("adam.m.{name}"), self.adam.m[k].clone()));
                ck.extra.push((format!("adam.v.{name}"), self.adam.v[k].clone()));
            }
        }
        ck.metadata = serde_json::json!({
            "step": self.step,
            "adam_t": self.adam.t,
            "train_config": self.config,
        });
        ck
    }
}

fn axpy(acc: &mut [Array], alpha: f64, x: &[Array]) {
    for (a, b) in acc.iter_mut().zip(x) {
        for (p, q) in a.data_mut().iter_mut().zip(b.data()) {
            *p += alpha * q;
        }
    }
}
