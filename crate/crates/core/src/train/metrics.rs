use serde::Serialize;

use super::TrainError;
use crate::data::LabeledFrame;
use crate::model::{evaluate, ModelState, Request, Topology};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyRow {
    pub frame: usize,
    pub n_atoms: usize,
    pub reference: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForceRow {
    pub frame: usize,
    pub atom: usize,
    pub axis: usize,
    pub reference: f64,
    pub predicted: f64,
}

/// Errors of a model on a set of frames, plus parity data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub frames: usize,
    /// meV/atom.
    pub energy_mae: f64,
    /// meV/Å, over frames that carry forces.
    pub force_mae: f64,
    pub energy_rows: Vec<EnergyRow>,
    pub force_rows: Vec<ForceRow>,
    /// Frames containing a species the model has no energy shift for.
    pub unfitted_species_frames: Vec<usize>,
}

/// Evaluates every frame; `topologies`, when given, must align with `frames`.
pub fn evaluate_frames(
    state: &ModelState,
    frames: &[&LabeledFrame],
    topologies: Option<&[Topology]>,
) -> Result<EvalReport, TrainError> {
    if frames.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let fitted = state.fitted_species();
    let mut energy_rows = Vec::with_capacity(frames.len());
    let mut force_rows = Vec::new();
    let mut unfitted = Vec::new();
    let (mut e_sum, mut f_sum, mut f_count) = (0.0, 0.0, 0usize);
    let req = Request {
        forces: true,
        ..Request::default()
    };
    for (k, frame) in frames.iter().enumerate() {
        let sys = &frame.system;
        if sys.species.iter().any(|z| !fitted.contains(z)) {
            unfitted.push(k);
        }
        let built;
        let topo = match topologies {
            Some(t) => &t[k],
            None => {
                built = Topology::build(sys, state.config().cutoff)?;
                &built
            }
        };
        let out = evaluate(state, sys, topo, req)?;
        let n = sys.len();
        e_sum += (out.energy - frame.energy).abs() / n as f64;
        energy_rows.push(EnergyRow {
            frame: k,
            n_atoms: n,
            reference: frame.energy,
            predicted: out.energy,
        });
        if frame.has_forces {
            let pred = out.forces.expect("requested");
            for (atom, (p, q)) in pred.iter().zip(&frame.forces).enumerate() {
                for axis in 0..3 {
                    f_sum += (p[axis] - q[axis]).abs();
                    f_count += 1;
                    force_rows.push(ForceRow {
                        frame: k,
                        atom,
                        axis,
                        reference: q[axis],
                        predicted: p[axis],
                    });
                }
            }
        }
    }
    Ok(EvalReport {
        frames: frames.len(),
        energy_mae: 1e3 * e_sum / frames.len() as f64,
        force_mae: if f_count > 0 { 1e3 * f_sum / f_count as f64 } else { 0.0 },
        energy_rows,
        force_rows,
        unfitted_species_frames: unfitted,
    })
}

/// Errors of predicting zero force and the mean per-atom energy.
pub fn baseline_mae(train: &[&LabeledFrame], eval: &[&LabeledFrame]) -> (f64, f64) {
    let mean = train.iter().map(|f| f.energy_per_atom()).sum::<f64>() / train.len().max(1) as f64;
    let e = eval.iter().map(|f| (f.energy_per_atom() - mean).abs()).sum::<f64>() / eval.len().max(1) as f64;
    let comps: Vec<f64> = eval
        .iter()
        .filter(|f| f.has_forces)
        .flat_map(|f| f.forces.iter().flatten().copied())
        .collect();
    let fm = comps.iter().map(|v| v.abs()).sum::<f64>() / comps.len().max(1) as f64;
    (1e3 * e, 1e3 * fm)
}
