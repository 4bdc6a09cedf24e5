//! Wall time and resident memory of energy+force evaluation across
//! replicated supercells. CPU timings on the host only.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::geom::AtomicSystem;
use crate::model::{evaluate, ModelState, Request, Topology};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenchError {
    #[error("supercell requires a periodic system")]
    NotPeriodic,
    #[error("invalid bench setting: {0}")]
    Invalid(String),
}

/// `system` replicated `repeat[a]` times along each lattice vector.
pub fn supercell(system: &AtomicSystem, repeat: [usize; 3]) -> Result<AtomicSystem, BenchError> {
    let cell = system.cell.filter(|_| system.is_periodic()).ok_or(BenchError::NotPeriodic)?;
    if repeat.contains(&0) {
        return Err(BenchError::Invalid(format!("repeat {repeat:?} must be at least 1")));
    }
    let mut species = Vec::new();
    let mut positions = Vec::new();
    for i in 0..repeat[0] {
        for j in 0..repeat[1] {
            for k in 0..repeat[2] {
                let t = system.lattice_vector([i as i32, j as i32, k as i32]);
                species.extend_from_slice(&system.species);
                positions.extend(system.positions.iter().map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]));
            }
        }
    }
    let cell = std::array::from_fn(|a| cell[a].map(|x| x * repeat[a] as f64));
    AtomicSystem::new(species, positions, Some(cell), system.pbc).map_err(|e| BenchError::Invalid(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub repeats: Vec<[usize; 3]>,
    /// Evaluations per timed sample.
    pub batch_size: usize,
    /// Timed samples per size.
    pub reps: usize,
    /// Untimed samples per size.
    pub warmup: usize,
    /// Worker threads sharing each batch.
    pub threads: usize,
    /// Sizes whose estimated working set exceeds this are reported as
    /// failures instead of being run.
    pub memory_limit_mb: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            repeats: vec![[1, 1, 1], [2, 1, 1], [2, 2, 1], [2, 2, 2], [4, 2, 2], [4, 4, 2]],
            batch_size: 1,
            reps: 5,
            warmup: 1,
            threads: 1,
            memory_limit_mb: 8192.0,
        }
    }
}

/// One row of the benchmark table. Times are per evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub n_atoms: usize,
    pub repeat: [usize; 3],
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub rss_delta_mb: f64,
    pub batch_size: usize,
    pub repetitions: usize,
    pub threads: usize,
    /// Energy of the last evaluation, eV.
    pub energy: f64,
    pub error: Option<String>,
}

impl BenchResult {
    pub fn per_atom_ms(&self) -> f64 {
        self.mean_ms / self.n_atoms as f64
    }

    fn failed(n_atoms: usize, repeat: [usize; 3], config: &BenchConfig, error: String) -> Self {
        Self {
            n_atoms,
            repeat,
            mean_ms: f64::NAN,
            min_ms: f64::NAN,
            max_ms: f64::NAN,
            rss_delta_mb: f64::NAN,
            batch_size: config.batch_size,
            repetitions: 0,
            threads: config.threads,
            energy: f64::NAN,
            error: Some(error),
        }
    }
}

pub const TABLE_HEADER: &str = "# CPU-only desk-scale timing on this host; not comparable to GPU measurements";

/// Energy and forces with a fresh neighbor list, as in production use.
fn energy_and_forces(state: &ModelState, system: &AtomicSystem) -> Result<f64, String> {
    let topo = Topology::build(system, state.config().cutoff).map_err(|e| e.to_string())?;
    let req = Request {
        forces: true,
        ..Request::default()
    };
    Ok(evaluate(state, system, &topo, req).map_err(|e| e.to_string())?.energy)
}

fn batch(state: &ModelState, system: &AtomicSystem, config: &BenchConfig) -> Result<f64, String> {
    let threads = config.threads.clamp(1, config.batch_size);
    if threads == 1 {
        let mut e = 0.0;
        for _ in 0..config.batch_size {
            e = energy_and_forces(state, system)?;
        }
        return Ok(e);
    }
    let per = config.batch_size.div_ceil(threads);
    let outs: Vec<Result<f64, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let count = per.min(config.batch_size.saturating_sub(w * per));
                s.spawn(move || {
                    let mut e = 0.0;
                    for _ in 0..count {
                        e = energy_and_forces(state, system)?;
                    }
                    Ok(e)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("worker panicked".into()))).collect()
    });
    let mut e = 0.0;
    for o in outs {
        e = o?;
    }
    Ok(e)
}

/// Rough peak of the evaluation tape in MB: each edge and triplet row keeps
/// a few dozen `d`-wide arrays alive for the backward pass.
pub fn estimated_memory_mb(state: &ModelState, topo: &Topology) -> f64 {
    let d = state.config().hidden_channels as f64;
    let layers = state.config().num_layers as f64;
    let rows = 60.0 * topo.num_edges() as f64 + 12.0 * topo.num_triplets() as f64;
    rows * d * layers * 8.0 / 1e6
}

fn run_size(state: &ModelState, system: &AtomicSystem, repeat: [usize; 3], config: &BenchConfig) -> BenchResult {
    let n = system.len();
    let topo = match Topology::build(system, state.config().cutoff) {
        Ok(t) => t,
        Err(e) => return BenchResult::failed(n, repeat, config, e.to_string()),
    };
    let est = estimated_memory_mb(state, &topo) * config.threads.clamp(1, config.batch_size) as f64;
    if est > config.memory_limit_mb {
        let msg = format!("estimated {est:.0} MB exceeds the {} MB limit", config.memory_limit_mb);
        return BenchResult::failed(n, repeat, config, msg);
    }
    drop(topo);
    let outcome = catch_unwind(AssertUnwindSafe(|| -> Result<BenchResult, String> {
        for _ in 0..config.warmup {
            batch(state, system, config)?;
        }
        reset_peak_rss();
        let before = resident_mb();
        let mut times = Vec::with_capacity(config.reps);
        let mut energy = f64::NAN;
        for _ in 0..config.reps {
            let t = Instant::now();
            energy = batch(state, system, config)?;
            times.push(t.elapsed().as_secs_f64() * 1e3 / config.batch_size as f64);
        }
        let rss_delta_mb = match (before, peak_resident_mb()) {
            (Some(b), Some(p)) => (p - b).max(0.0),
            _ => f64::NAN,
        };
        Ok(BenchResult {
            n_atoms: n,
            repeat,
            mean_ms: times.iter().sum::<f64>() / times.len() as f64,
            min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
            max_ms: times.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            rss_delta_mb,
            batch_size: config.batch_size,
            repetitions: times.len(),
            threads: config.threads,
            energy,
            error: None,
        })
    }));
    match outcome {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => BenchResult::failed(n, repeat, config, e),
        Err(_) => BenchResult::failed(n, repeat, config, "evaluation panicked".into()),
    }
}

/// Times every supercell of `base` listed in `config.repeats`. Failures
/// become rows with `error` set.
pub fn run_bench(
    state: &ModelState,
    base: &AtomicSystem,
    config: &BenchConfig,
    on_row: &mut dyn FnMut(&BenchResult),
) -> Result<Vec<BenchResult>, BenchError> {
    if config.reps < 5 {
        return Err(BenchError::Invalid(format!("reps {} must be at least 5", config.reps)));
    }
    if config.batch_size == 0 || config.threads == 0 {
        return Err(BenchError::Invalid("batch_size and threads must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for &r in &config.repeats {
        let sys = supercell(base, r)?;
        let row = run_size(state, &sys, r, config);
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// Comma-separated table with a comment header.
pub fn format_table(rows: &[BenchResult]) -> String {
    let mut out = format!("{TABLE_HEADER}\n");
    out.push_str("n_atoms,repeat,mean_ms,min_ms,max_ms,per_atom_ms,rss_delta_mb,batch_size,repetitions,threads,error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{}x{}x{},{:.3},{:.3},{:.3},{:.5},{:.1},{},{},{},{}\n",
            r.n_atoms,
            r.repeat[0],
            r.repeat[1],
            r.repeat[2],
            r.mean_ms,
            r.min_ms,
            r.max_ms,
            r.per_atom_ms(),
            r.rss_delta_mb,
            r.batch_size,
            r.repetitions,
            r.threads,
            r.error.as_deref().unwrap_or("")
        ));
    }
    out
}

fn status_kb(key: &str) -> Option<f64> {
    let text = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = text.lines().find(|l| l.starts_with(key))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn resident_mb() -> Option<f64> {
    status_kb("VmRSS:").map(|kb| kb / 1024.0)
}

fn peak_resident_mb() -> Option<f64> {
    status_kb("VmHWM:").map(|kb| kb / 1024.0)
}

/// Resets the kernel's high-water mark so the next peak is per size.
fn reset_peak_rss() {
    let _ = std::fs::write("/proc/self/clear_refs", "5");
}
