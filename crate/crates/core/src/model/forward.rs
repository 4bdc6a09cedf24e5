use std::sync::Arc;

use super::basis::{envelope, pair_head, rbf_centers, rope_theta};
use super::{ModelConfig, ModelError, ModelState};
use crate::diffcore::{Array, Tape, Unary, Var};

const LN_EPS: f64 = 1e-5;
use crate::geom::{
    build_neighbor_list, AtomicSystem, CentroidWeights, EdgeNeighborhoods, Graph, Mat3, Vec3,
    FRAME_EPS,
};

/// Neighbor graph plus the index maps the forward pass gathers with.
///
/// Only the topology is used; geometry is recomputed on the tape from the
/// positions, so one topology can serve slightly displaced positions.
#[derive(Debug, Clone)]
pub struct Topology {
    pub graph: Graph,
    recv: Arc<[usize]>,
    send: Arc<[usize]>,
    shifts: Array,
    dir_owner: Arc<[usize]>,
    dir_edge: Arc<[usize]>,
    ind_owner: Arc<[usize]>,
    ind_edge: Arc<[usize]>,
    point_owner: Arc<[usize]>,
    tri_owner: Arc<[usize]>,
    tri_ik: Arc<[usize]>,
    tri_jk: Arc<[usize]>,
    tri_k: Arc<[usize]>,
}

impl Topology {
    pub fn build(system: &AtomicSystem, cutoff: f64) -> Result<Self, ModelError> {
        Ok(Self::from_graph(build_neighbor_list(system, cutoff)?))
    }

    pub fn from_graph(graph: Graph) -> Self {
        let nb = EdgeNeighborhoods::build(&graph);
        let shifts = graph
            .edges
            .iter()
            .flat_map(|e| e.shift.map(f64::from))
            .collect();
        let arc = |v: Vec<usize>| -> Arc<[usize]> { v.into() };
        let mut point_owner = nb.direct_owner.clone();
        point_owner.extend_from_slice(&nb.indirect_owner);
        Self {
            recv: arc(graph.receivers()),
            send: arc(graph.senders()),
            shifts: Array::new(vec![graph.num_edges(), 3], shifts).expect("three per edge"),
            dir_owner: arc(nb.direct_owner),
            dir_edge: arc(nb.direct_edge),
            ind_owner: arc(nb.indirect_owner),
            ind_edge: arc(nb.indirect_edge),
            point_owner: arc(point_owner),
            tri_owner: arc(nb.common.iter().map(|t| t.owner).collect()),
            tri_ik: arc(nb.common.iter().map(|t| t.ik).collect()),
            tri_jk: arc(nb.common.iter().map(|t| t.jk).collect()),
            tri_k: arc(nb.common.iter().map(|t| t.k).collect()),
            graph,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.graph.num_edges()
    }

    pub fn num_triplets(&self) -> usize {
        self.tri_k.len()
    }
}

/// Energy in eV, forces in eV/Å, stress in eV/Å³.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub energy: f64,
    pub forces: Vec<Vec3>,
    pub stress: Option<Mat3>,
}

/// Which derivatives [`evaluate`] should return.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Request {
    pub forces: bool,
    pub stress: bool,
    pub params: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub energy: f64,
    pub forces: Option<Vec<Vec3>>,
    pub stress: Option<Mat3>,
    /// `∂E/∂θ` aligned with [`ModelState::arrays`]; zeros for fixed arrays.
    pub param_grads: Option<Vec<Array>>,
}

/// Energy, forces and, for periodic systems, stress.
pub fn predict(state: &ModelState, system: &AtomicSystem) -> Result<Prediction, ModelError> {
    let topo = Topology::build(system, state.config().cutoff)?;
    let req = Request {
        forces: true,
        stress: system.is_periodic(),
        params: false,
    };
    let out = evaluate(state, system, &topo, req)?;
    Ok(Prediction {
        energy: out.energy,
        forces: out.forces.expect("requested"),
        stress: out.stress,
    })
}

pub fn energy(state: &ModelState, system: &AtomicSystem) -> Result<f64, ModelError> {
    let topo = Topology::build(system, state.config().cutoff)?;
    Ok(evaluate(state, system, &topo, Request::default())?.energy)
}

/// Stress alone; errors for systems without a cell.
pub fn stress(state: &ModelState, system: &AtomicSystem) -> Result<Mat3, ModelError> {
    if !system.is_periodic() {
        return Err(ModelError::NotPeriodic);
    }
    Ok(predict(state, system)?.stress.expect("periodic system"))
}

/// Runs the network on `system` with a precomputed topology.
pub fn evaluate(
    state: &ModelState,
    system: &AtomicSystem,
    topo: &Topology,
    req: Request,
) -> Result<Evaluation, ModelError> {
    if req.stress && !system.is_periodic() {
        return Err(ModelError::NotPeriodic);
    }
    let n = system.len();
    if topo.graph.num_atoms() != n {
        return Err(ModelError::TopologyMismatch {
            atoms: n,
            topology: topo.graph.num_atoms(),
        });
    }
    let mut t = Tape::new();
    let params: Vec<Var> = state
        .arrays()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            if req.params && state.is_trainable(i) {
                t.leaf(a.clone())
            } else {
                t.constant(a.clone())
            }
        })
        .collect();
    let flat: Vec<f64> = system.positions.iter().flatten().copied().collect();
    let pos = t.leaf(Array::new(vec![n, 3], flat)?);
    let strain = req.stress.then(|| t.leaf(Array::zeros(&[3, 3])));
    let energy = Forward {
        state,
        params: &params,
        topo,
        cfg: state.config(),
    }
    .energy(&mut t, system, pos, strain)?;

    let mut wrt = vec![pos];
    wrt.extend(strain);
    if req.params {
        wrt.extend(params.iter().copied());
    }
    let need_grad = req.forces || req.stress || req.params;
    let mut grads = if need_grad {
        t.gradient(energy, &wrt)?
    } else {
        Vec::new()
    }
    .into_iter();
    let g_pos = need_grad.then(|| grads.next().expect("position gradient"));
    let forces = if req.forces {
        g_pos.map(|g| g.data().chunks(3).map(|c| [-c[0], -c[1], -c[2]]).collect())
    } else {
        None
    };
    let stress = if req.stress {
        let g = grads.next().expect("strain gradient");
        let v = system.volume().expect("periodic system");
        let d = g.data();
        Some(std::array::from_fn(|a| std::array::from_fn(|b| d[3 * a + b] / v)))
    } else {
        None
    };
    let param_grads = req.params.then(|| grads.collect());
    Ok(Evaluation {
        energy: t.value(energy).item(),
        forces,
        stress,
        param_grads,
    })
}

/// Per-edge geometry on the tape.
pub(crate) struct EdgeGeometry {
    pub r: Var,
    pub dist: Var,
    pub e1: Var,
    /// `gate · e2` and `gate · e3`.
    pub ge2: Var,
    pub ge3: Var,
}

struct Forward<'a> {
    state: &'a ModelState,
    params: &'a [Var],
    topo: &'a Topology,
    cfg: &'a ModelConfig,
}

impl Forward<'_> {
    fn p(&self, name: &str) -> Var {
        self.params[self.state.position(name).expect("parameter exists")]
    }

    fn lp(&self, layer: usize, name: &str) -> Var {
        self.p(&format!("layers.{layer}.{name}"))
    }

    fn energy(
        &self,
        t: &mut Tape,
        system: &AtomicSystem,
        pos: Var,
        strain: Option<Var>,
    ) -> Result<Var, ModelError> {
        let cfg = self.cfg;
        let n = system.len();
        let d = cfg.hidden_channels;
        let heads = cfg.num_heads;

        let species: Arc<[usize]> = system.species.iter().map(|&z| z as usize - 1).collect();
        let mut h = t.gather(self.p("embedding"), species)?;

        if self.topo.num_edges() > 0 {
            let geo = edge_geometry(t, system, self.topo, cfg.cutoff, pos, strain)?;
            let env = t.unary(geo.dist, envelope(cfg.cutoff))?;
            let rbf = self.rbf(t, geo.dist, env)?;
            let theta = t.constant(theta_matrix(cfg));
            let expand = t.constant(head_expansion(cfg));
            let recv = self.topo.recv.clone();
            let send = self.topo.send.clone();

            let mut v: Option<Var> = None;
            let mut residuals: Vec<Var> = Vec::new();
            for l in 0..cfg.num_layers {
                let p_dst = t.matmul(h, self.lp(l, "w_dst"))?;
                let p_src = t.matmul(h, self.lp(l, "w_src"))?;
                let mut src = t.gather(p_src, send.clone())?;
                if cfg.rope_enabled {
                    let a = t.matmul(h, self.lp(l, "w_rope"))?;
                    let ang = t.matmul(a, theta)?;
                    let ai = t.gather(ang, recv.clone())?;
                    let aj = t.gather(ang, send.clone())?;
                    let rel = t.sub(ai, aj)?;
                    src = t.rope(src, rel)?;
                }
                let dst = t.gather(p_dst, recv.clone())?;
                let mut pre = t.add(dst, src)?;
                let radial = t.matmul(rbf, self.lp(l, "w_rbf"))?;
                pre = t.add(pre, radial)?;
                if let Some(v) = v {
                    // scalarized neighbor vectors, one projection per frame axis
                    let v3 = t.reshape(v, vec![3 * n, d])?;
                    for (a, axis) in [geo.e1, geo.ge2, geo.ge3].into_iter().enumerate() {
                        let proj = t.matmul(v3, self.lp(l, &format!("w_va{a}")))?;
                        let proj = t.reshape(proj, vec![n, 3 * d])?;
                        let vj = t.gather(proj, send.clone())?;
                        let s = t.vec_dot(axis, vj)?;
                        pre = t.add(pre, s)?;
                    }
                }
                if cfg.lse_enabled && self.topo.num_triplets() > 0 {
                    let a = self.local_structure(t, l, h, &geo)?;
                    pre = t.add(pre, a)?;
                }
                pre = t.add_row(pre, self.lp(l, "b1"))?;
                let hid = t.silu(pre)?;
                let out = t.matmul(hid, self.lp(l, "w2"))?;
                let out = t.add_row(out, self.lp(l, "b2"))?;
                let m = t.slice_cols(out, 0, d)?;
                let g = t.slice_cols(out, d, 2 * d)?;
                let scores = t.slice_cols(out, 2 * d, 2 * d + heads)?;

                let weights = t.softmax(scores)?;
                let weights = t.scale(weights, heads as f64)?;
                let gate = t.matmul(weights, expand)?;
                let msg = t.mul(m, gate)?;
                let msg = t.mul_col(msg, env)?;
                let agg = t.segment_sum(msg, recv.clone(), n)?;
                let u = t.matmul(agg, self.lp(l, "w_u1"))?;
                let u = t.silu(u)?;
                let u = t.matmul(u, self.lp(l, "w_u2"))?;
                let h_new = t.add(h, u)?;
                let h_new = self.layer_norm(t, l, h_new)?;

                let ge = t.mul_col(g, env)?;
                let mut dv = None;
                for (axis, coef) in [(geo.e1, "c_axis0"), (geo.ge2, "c_axis1"), (geo.ge3, "c_axis2")] {
                    let w = t.mul_row(ge, self.lp(l, coef))?;
                    let term = t.vec_outer(axis, w)?;
                    dv = Some(match dv {
                        Some(acc) => t.add(acc, term)?,
                        None => term,
                    });
                }
                let mut dv = dv.expect("three axes");
                if let Some(v) = v {
                    let w = t.mul_row(ge, self.lp(l, "c_self"))?;
                    let vj = t.gather(v, send.clone())?;
                    let term = t.channel_scale(vj, w)?;
                    dv = t.add(dv, term)?;
                }
                let dv = t.segment_sum(dv, recv.clone(), n)?;
                v = Some(match v {
                    Some(v) => t.add(v, dv)?,
                    None => dv,
                });

                if cfg.temporal_enabled {
                    let mixed = t.matmul_t(h_new, self.lp(l, "temporal"), false, true)?;
                    let tl = t.mul(mixed, h)?;
                    residuals.push(tl);
                    h = t.add(h_new, tl)?;
                } else {
                    h = h_new;
                }
            }
            // readout sees h_L plus every temporal residual; the last one is
            // already in h
            residuals.pop();
            for tl in residuals {
                h = t.add(h, tl)?;
            }
        }
        self.readout(t, system, h)
    }

    fn layer_norm(&self, t: &mut Tape, l: usize, x: Var) -> Result<Var, ModelError> {
        let d = self.cfg.hidden_channels;
        let avg = t.constant(Array::full(&[d, 1], 1.0 / d as f64));
        let mean = t.matmul(x, avg)?;
        let mean = t.broadcast_cols(mean, d)?;
        let c = t.sub(x, mean)?;
        let var = t.dot(c, c)?;
        let var = t.scale(var, 1.0 / d as f64)?;
        let var = t.offset(var, LN_EPS)?;
        let std = t.unary(var, Unary::Sqrt)?;
        let y = t.div_col(c, std)?;
        let y = t.mul_row(y, self.lp(l, "ln_gain"))?;
        Ok(t.add_row(y, self.lp(l, "ln_bias"))?)
    }

    fn rbf(&self, t: &mut Tape, dist: Var, env: Var) -> Result<Var, ModelError> {
        let (mu, gamma) = rbf_centers(self.cfg);
        let neg_mu = t.constant(Array::vector(mu.iter().map(|m| -m).collect()));
        let dk = t.broadcast_cols(dist, self.cfg.num_basis)?;
        let dk = t.add_row(dk, neg_mu)?;
        let sq = t.square(dk)?;
        let arg = t.scale(sq, -gamma)?;
        let g = t.exp(arg)?;
        Ok(t.mul_col(g, env)?)
    }

    /// Invariant encoding of the common neighbors of every edge.
    fn local_structure(
        &self,
        t: &mut Tape,
        l: usize,
        h: Var,
        geo: &EdgeGeometry,
    ) -> Result<Var, ModelError> {
        let topo = self.topo;
        let e = topo.num_edges();
        let switch = CentroidWeights::for_cutoff(self.cfg.cutoff).switch();
        let r_ik = t.gather(geo.r, topo.tri_ik.clone())?;
        let r_jk = t.gather(geo.r, topo.tri_jk.clone())?;
        let r_e = t.gather(geo.r, topo.tri_owner.clone())?;
        // displacement from the edge midpoint to k: x_k − (x_i + x_j)/2
        let half = t.scale(r_e, 0.5)?;
        let delta = t.sub(half, r_ik)?;
        let mut cols = Vec::with_capacity(3);
        for axis in [geo.e1, geo.ge2, geo.ge3] {
            let ax = t.gather(axis, topo.tri_owner.clone())?;
            let s = t.dot(ax, delta)?;
            cols.push(t.reshape(s, vec![topo.num_triplets(), 1])?);
        }
        let s = t.concat_cols(&cols)?;
        let z = t.matmul(s, self.lp(l, "w_ls"))?;
        // bias folded in per atom before the gather
        let hk = t.matmul(h, self.lp(l, "w_lh"))?;
        let hk = t.add_row(hk, self.lp(l, "b_l"))?;
        let hk = t.gather(hk, topo.tri_k.clone())?;
        let z = t.add(z, hk)?;
        let z = t.silu(z)?;
        let d_ik = t.norm(r_ik)?;
        let d_jk = t.norm(r_jk)?;
        let w_ik = t.unary(d_ik, switch)?;
        let w_jk = t.unary(d_jk, switch)?;
        let w = t.mul(w_ik, w_jk)?;
        let z = t.mul_col(z, w)?;
        let agg = t.segment_sum(z, topo.tri_owner.clone(), e)?;
        let w = t.reshape(w, vec![topo.num_triplets(), 1])?;
        let wsum = t.segment_sum(w, topo.tri_owner.clone(), e)?;
        let a = t.matmul(agg, self.lp(l, "w_l2"))?;
        let b = t.reshape(self.lp(l, "b_l2"), vec![1, self.cfg.hidden_channels])?;
        let bias = t.matmul(wsum, b)?;
        Ok(t.add(a, bias)?)
    }

    fn readout(&self, t: &mut Tape, system: &AtomicSystem, h: Var) -> Result<Var, ModelError> {
        let x = t.matmul(h, self.p("readout.w1"))?;
        let x = t.add_row(x, self.p("readout.b1"))?;
        let x = t.silu(x)?;
        let x = t.matmul(x, self.p("readout.w2"))?;
        let x = t.add_row(x, self.p("readout.b2"))?;
        let x = t.mul_row(x, self.p(super::state::ENERGY_SCALE))?;
        let shifts: Vec<f64> = system.species.iter().map(|&z| self.state.energy_shift(z)).collect();
        let shifts = t.constant(Array::new(vec![system.len(), 1], shifts)?);
        let per_atom = t.add(x, shifts)?;
        Ok(t.sum_sorted(per_atom)?)
    }
}

/// Edge vectors, distances and gated frames recorded on the tape.
pub(crate) fn edge_geometry(
    t: &mut Tape,
    system: &AtomicSystem,
    topo: &Topology,
    cutoff: f64,
    pos: Var,
    strain: Option<Var>,
) -> Result<EdgeGeometry, ModelError> {
    let e = topo.num_edges();
    let (pos, cell) = match strain {
        Some(eps) => {
            // x → x (I + sym ε), cell → cell (I + sym ε)
            let eye = t.constant(Array::identity(3));
            let eps_t = t.matmul_t(eps, eye, true, false)?;
            let sym = t.add(eps, eps_t)?;
            let sym = t.scale(sym, 0.5)?;
            let f = t.add(eye, sym)?;
            let cell = t.constant(Array::from_rows(&system.cell.expect("periodic system")));
            (t.matmul(pos, f)?, Some(t.matmul(cell, f)?))
        }
        None => (pos, system.cell.map(|c| t.constant(Array::from_rows(&c)))),
    };
    let xi = t.gather(pos, topo.recv.clone())?;
    let xj = t.gather(pos, topo.send.clone())?;
    let mut r = t.sub(xi, xj)?;
    if let Some(cell) = cell {
        let s = t.constant(topo.shifts.clone());
        let offset = t.matmul(s, cell)?;
        r = t.add(r, offset)?;
    }
    let dist = t.norm(r)?;
    let e1 = t.div_col(r, dist)?;

    // weighted centroid offset x̄ − x_i = (−r + Σ w a) / (2 + Σ w)
    let switch = CentroidWeights::for_cutoff(cutoff).switch();
    let pts = topo.point_owner.len();
    let mut num = t.neg(r)?;
    let mut den = t.constant(Array::full(&[e], 2.0));
    if pts > 0 {
        let r_dir = t.gather(r, topo.dir_edge.clone())?;
        let a_dir = t.neg(r_dir)?;
        let r_own = t.gather(r, topo.dir_owner.clone())?;
        let b_dir = t.add(a_dir, r_own)?;
        let r_ind = t.gather(r, topo.ind_edge.clone())?;
        let r_own = t.gather(r, topo.ind_owner.clone())?;
        let a_ind = t.add(r_own, r_ind)?;
        let a_ind = t.neg(a_ind)?;
        let b_ind = t.neg(r_ind)?;
        let a = t.concat_rows(&[a_dir, a_ind])?;
        let b = t.concat_rows(&[b_dir, b_ind])?;
        let da = t.norm(a)?;
        let db = t.norm(b)?;
        let wa = t.unary(da, switch)?;
        let wb = t.unary(db, switch)?;
        let both = t.mul(wa, wb)?;
        let w = t.add(wa, wb)?;
        let w = t.sub(w, both)?;
        let wa_pts = t.mul_col(a, w)?;
        let sum = t.segment_sum(wa_pts, topo.point_owner.clone(), e)?;
        num = t.add(num, sum)?;
        let w = t.reshape(w, vec![pts, 1])?;
        let wsum = t.segment_sum(w, topo.point_owner.clone(), e)?;
        let wsum = t.reshape(wsum, vec![e])?;
        den = t.add(den, wsum)?;
    }
    let offset = t.div_col(num, den)?;
    let ci = t.neg(offset)?;
    let cj = t.sub(ci, r)?;
    let u = t.cross(ci, cj)?;
    let c = t.norm(u)?;
    let c2 = t.square(c)?;
    let denom = t.offset(c2, FRAME_EPS * FRAME_EPS)?;
    let factor = t.div(c, denom)?;
    let ge2 = t.mul_col(u, factor)?;
    let ge3 = t.cross(e1, ge2)?;
    Ok(EdgeGeometry {
        r,
        dist,
        e1,
        ge2,
        ge3,
    })
}

/// `heads × d/2` matrix with `θ_k` in the row of the head owning pair `k`.
fn theta_matrix(cfg: &ModelConfig) -> Array {
    let half = cfg.hidden_channels / 2;
    let theta = rope_theta(cfg.hidden_channels);
    let mut data = vec![0.0; cfg.num_heads * half];
    for (k, th) in theta.iter().enumerate() {
        data[pair_head(k, cfg) * half + k] = *th;
    }
    Array::new(vec![cfg.num_heads, half], data).expect("consistent shape")
}

/// `heads × d` indicator of which head owns each channel.
fn head_expansion(cfg: &ModelConfig) -> Array {
    let d = cfg.hidden_channels;
    let w = cfg.head_width();
    let mut data = vec![0.0; cfg.num_heads * d];
    for c in 0..d {
        data[(c / w) * d + c] = 1.0;
    }
    Array::new(vec![cfg.num_heads, d], data).expect("consistent shape")
}
