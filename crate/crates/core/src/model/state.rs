use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError};
use crate::diffcore::Array;

/// Number of supported elements; species `Z` uses embedding row `Z - 1`.
pub const NUM_SPECIES: usize = 118;

/// Name of the per-species energy offset table, indexed by atomic number.
pub const ENERGY_SHIFT: &str = "energy_shift";
pub const ENERGY_SCALE: &str = "energy_scale";

#[derive(Debug, Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    /// Normal with standard deviation `gain / sqrt(fan_in)`.
    Normal { fan_in: usize, gain: f64 },
}

/// Parameter names, shapes and initializers in storage order.
fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.hidden_channels;
    let (k, heads) = (config.num_basis, config.num_heads);
    let lecun = |fan_in| Init::Normal { fan_in, gain: 1.0 };
    let small = |fan_in| Init::Normal { fan_in, gain: 0.1 };
    let mut out = vec![(
        "embedding".to_string(),
        vec![NUM_SPECIES, d],
        lecun(1),
    )];
    for l in 0..config.num_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        out.extend([
            (p("w_dst"), vec![d, d], lecun(d)),
            (p("w_src"), vec![d, d], lecun(d)),
            (p("w_rbf"), vec![k, d], lecun(k)),
            (p("b1"), vec![d], Init::Zeros),
            (p("w_rope"), vec![d, heads], small(d)),
            (p("w2"), vec![d, 2 * d + heads], lecun(d)),
            (p("b2"), vec![2 * d + heads], Init::Zeros),
            (p("w_va0"), vec![d, d], lecun(d)),
            (p("w_va1"), vec![d, d], lecun(d)),
            (p("w_va2"), vec![d, d], lecun(d)),
            (p("c_axis0"), vec![d], small(1)),
            (p("c_axis1"), vec![d], small(1)),
            (p("c_axis2"), vec![d], small(1)),
            (p("c_self"), vec![d], small(1)),
            (p("w_ls"), vec![3, d], lecun(3)),
            (p("w_lh"), vec![d, d], lecun(d)),
            (p("b_l"), vec![d], Init::Zeros),
            (p("w_l2"), vec![d, d], lecun(d)),
            (p("b_l2"), vec![d], Init::Zeros),
            (p("w_u1"), vec![d, d], lecun(d)),
            (p("w_u2"), vec![d, d], lecun(d)),
            (p("ln_gain"), vec![d], Init::Ones),
            (p("ln_bias"), vec![d], Init::Zeros),
            (p("temporal"), vec![d, d], small(d)),
        ]);
    }
    let half = d / 2;
    out.extend([
        ("readout.w1".to_string(), vec![d, half], lecun(d)),
        ("readout.b1".to_string(), vec![half], Init::Zeros),
        ("readout.w2".to_string(), vec![half, 1], lecun(half)),
        ("readout.b2".to_string(), vec![1], Init::Zeros),
        (ENERGY_SHIFT.to_string(), vec![NUM_SPECIES + 1], Init::Zeros),
        (ENERGY_SCALE.to_string(), vec![1], Init::Ones),
    ]);
    out
}

/// All learnable and fixed arrays of a model, addressed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    config: ModelConfig,
    names: Vec<String>,
    arrays: Vec<Array>,
    index: HashMap<String, usize>,
}

impl ModelState {
    /// Random initialization from a seeded ChaCha stream.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut arrays = Vec::new();
        for (name, shape, init) in layout(config) {
            let len: usize = shape.iter().product();
            let data = match init {
                Init::Zeros => vec![0.0; len],
                Init::Ones => vec![1.0; len],
                Init::Normal { fan_in, gain } => {
                    let dist = Normal::new(0.0, gain / (fan_in as f64).sqrt())
                        .expect("positive standard deviation");
                    (0..len).map(|_| dist.sample(&mut rng)).collect()
                }
            };
            names.push(name);
            arrays.push(Array::new(shape, data).expect("layout shapes are consistent"));
        }
        Ok(Self::assemble(config.clone(), names, arrays))
    }

    /// Rebuilds a state from stored arrays, checking names and shapes
    /// against the layout implied by `config`.
    pub fn from_arrays(
        config: ModelConfig,
        named: Vec<(String, Array)>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != named.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} arrays, found {}",
                expected.len(),
                named.len()
            )));
        }
        let mut names = Vec::new();
        let mut arrays = Vec::new();
        for ((name, shape, _), (got_name, array)) in expected.into_iter().zip(named) {
            if name != got_name || shape != array.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "array {got_name} {:?} where {name} {shape:?} was expected",
                    array.shape()
                )));
            }
            if !array.is_finite() {
                return Err(ModelError::Checkpoint(format!("array {name} has non-finite values")));
            }
            names.push(name);
            arrays.push(array);
        }
        Ok(Self::assemble(config, names, arrays))
    }

    fn assemble(config: ModelConfig, names: Vec<String>, arrays: Vec<Array>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self {
            config,
            names,
            arrays,
            index,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Same parameters with different ablation toggles.
    pub fn with_toggles(&self, rope: bool, temporal: bool, lse: bool) -> Self {
        let mut out = self.clone();
        out.config.rope_enabled = rope;
        out.config.temporal_enabled = temporal;
        out.config.lse_enabled = lse;
        out
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn arrays(&self) -> &[Array] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [Array] {
        &mut self.arrays
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Array by name. Panics on unknown names, which are programming errors.
    pub fn get(&self, name: &str) -> &Array {
        &self.arrays[self.index[name]]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array {
        let i = self.index[name];
        &mut self.arrays[i]
    }

    /// Whether the optimizer updates this array. Energy shifts are fitted,
    /// not trained.
    pub fn is_trainable(&self, index: usize) -> bool {
        self.names[index] != ENERGY_SHIFT
    }

    /// Total number of stored scalars.
    pub fn parameter_count(&self) -> usize {
        self.arrays.iter().map(Array::len).sum()
    }

    pub fn trainable_count(&self) -> usize {
        (0..self.arrays.len())
            .filter(|&i| self.is_trainable(i))
            .map(|i| self.arrays[i].len())
            .sum()
    }

    pub fn energy_shift(&self, z: u8) -> f64 {
        self.get(ENERGY_SHIFT).data()[z as usize]
    }

    pub fn energy_scale(&self) -> f64 {
        self.get(ENERGY_SCALE).item()
    }

    /// Species with a fitted (nonzero) energy shift.
    pub fn fitted_species(&self) -> Vec<u8> {
        let shifts = self.get(ENERGY_SHIFT).data();
        (1..=NUM_SPECIES as u8)
            .filter(|&z| shifts[z as usize] != 0.0)
            .collect()
    }

    pub fn set_energy_reference(&mut self, shifts: &BTreeMap<u8, f64>, scale: f64) {
        let table = self.get_mut(ENERGY_SHIFT).data_mut();
        table.iter_mut().for_each(|v| *v = 0.0);
        for (&z, &s) in shifts {
            table[z as usize] = s;
        }
        self.get_mut(ENERGY_SCALE).data_mut()[0] = scale;
    }
}

/// Least-squares per-species energies: minimizes `Σ_f (E_f − Σ_z n_fz μ_z)²`.
///
/// Returns the shifts and the standard deviation of the per-atom residuals
/// `(E_f − Σ_z n_fz μ_z) / N_f`.
pub fn fit_energy_shifts(frames: &[(&[u8], f64)]) -> (BTreeMap<u8, f64>, f64) {
    let mut species: Vec<u8> = frames.iter().flat_map(|(s, _)| s.iter().copied()).collect();
    species.sort_unstable();
    species.dedup();
    let m = species.len();
    let col = |z: u8| species.binary_search(&z).expect("species collected above");
    let counts: Vec<Vec<f64>> = frames
        .iter()
        .map(|(s, _)| {
            let mut c = vec![0.0; m];
            for &z in s.iter() {
                c[col(z)] += 1.0;
            }
            c
        })
        .collect();
    // normal equations with a tiny ridge for species that always co-occur
    let mut a = vec![vec![0.0; m + 1]; m];
    for (c, (_, e)) in counts.iter().zip(frames) {
        for r in 0..m {
            for k in 0..m {
                a[r][k] += c[r] * c[k];
            }
            a[r][m] += c[r] * e;
        }
    }
    for (r, row) in a.iter_mut().enumerate() {
        row[r] += 1e-9 * (1.0 + row[r]);
    }
    let mu = solve(a);
    let shifts: BTreeMap<u8, f64> = species.iter().copied().zip(mu.iter().copied()).collect();
    let residuals: Vec<f64> = counts
        .iter()
        .zip(frames)
        .map(|(c, (s, e))| (e - c.iter().zip(&mu).map(|(n, u)| n * u).sum::<f64>()) / s.len() as f64)
        .collect();
    let n = residuals.len().max(1) as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let std = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    (shifts, std)
}

/// Gauss-Jordan elimination with partial pivoting on an augmented matrix.
fn solve(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let m = a.len();
    for c in 0..m {
        let p = (c..m)
            .max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs()))
            .expect("non-empty range");
        a.swap(c, p);
        let piv = a[c][c];
        for v in a[c].iter_mut() {
            *v /= piv;
        }
        for r in 0..m {
            if r != c {
                let f = a[r][c];
                if f != 0.0 {
                    for k in c..=m {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
    }
    a.iter().map(|row| row[m]).collect()
}
