use std::collections::HashMap;

use super::system::{frac, heights, inverse3, lattice_vector};
use super::{norm, AtomicSystem, GeomError, Vec3};

/// Largest accepted cutoff in Å.
pub const MAX_CUTOFF: f64 = 50.0;

/// Directed edge from atom `i` to the image of atom `j` displaced by `-shift · cell`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub shift: [i32; 3],
}

/// Directed neighbor graph.
///
/// `rij[e] = x_i - x_j + shift · cell`. Edges are grouped by `i`, and within
/// one atom ordered by the bit pattern of `rij`, which makes the order
/// independent of atom labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub edges: Vec<Edge>,
    pub rij: Vec<Vec3>,
    pub dij: Vec<f64>,
    /// Outgoing edge ids per atom, in storage order.
    pub neighbor_index: Vec<Vec<usize>>,
    /// Id of the opposite edge `(j, i, -shift)`.
    pub reverse: Vec<usize>,
    pub cutoff: f64,
}

impl Graph {
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_atoms(&self) -> usize {
        self.neighbor_index.len()
    }

    pub fn senders(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.j).collect()
    }

    pub fn receivers(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.i).collect()
    }
}

fn cmp_vec(a: &Vec3, b: &Vec3) -> std::cmp::Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

/// All directed pairs (including periodic images) with `0 < d <= cutoff`.
///
/// Image points of every atom are binned on a cubic grid of width `cutoff`,
/// so each atom only inspects the 27 surrounding bins.
pub fn build_neighbor_list(system: &AtomicSystem, cutoff: f64) -> Result<Graph, GeomError> {
    if !(cutoff > 0.0) {
        return Err(GeomError::NonPositiveCutoff(cutoff));
    }
    if cutoff > MAX_CUTOFF {
        return Err(GeomError::CutoffTooLarge(cutoff));
    }
    system.validate()?;
    let n = system.len();

    // Home-cell positions w = x - offset · cell and the image range per axis.
    let (wrapped, offsets, range) = match &system.cell {
        Some(cell) => {
            let inv = inverse3(cell);
            let h = heights(cell);
            let mut range = [0i32; 3];
            for a in 0..3 {
                if system.pbc[a] {
                    range[a] = (cutoff / h[a]).floor() as i32 + 1;
                }
            }
            let mut wrapped = Vec::with_capacity(n);
            let mut offsets = Vec::with_capacity(n);
            for p in &system.positions {
                let f = frac(p, &inv);
                let mut o = [0i32; 3];
                for a in 0..3 {
                    if system.pbc[a] {
                        o[a] = f[a].floor() as i32;
                    }
                }
                let t = lattice_vector(cell, o);
                wrapped.push([p[0] - t[0], p[1] - t[1], p[2] - t[2]]);
                offsets.push(o);
            }
            (wrapped, offsets, range)
        }
        None => (system.positions.clone(), vec![[0i32; 3]; n], [0; 3]),
    };

    let mut points: Vec<(usize, [i32; 3], Vec3)> = Vec::new();
    for t0 in -range[0]..=range[0] {
        for t1 in -range[1]..=range[1] {
            for t2 in -range[2]..=range[2] {
                let t = [t0, t1, t2];
                let tv = system.lattice_vector(t);
                for (j, w) in wrapped.iter().enumerate() {
                    points.push((j, t, [w[0] + tv[0], w[1] + tv[1], w[2] + tv[2]]));
                }
            }
        }
    }
    let bin_of = |p: &Vec3| -> [i64; 3] { std::array::from_fn(|c| (p[c] / cutoff).floor() as i64) };
    let mut bins: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (idx, (_, _, p)) in points.iter().enumerate() {
        bins.entry(bin_of(p)).or_default().push(idx);
    }

    let search = cutoff * (1.0 + 1e-9);
    let mut found: Vec<(Edge, Vec3)> = Vec::new();
    for (i, wi) in wrapped.iter().enumerate() {
        let b = bin_of(wi);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(list) = bins.get(&[b[0] + dx, b[1] + dy, b[2] + dz]) else {
                        continue;
                    };
                    for &idx in list {
                        let (j, t, p) = &points[idx];
                        if *j == i && *t == [0, 0, 0] {
                            continue;
                        }
                        let d = norm(&[wi[0] - p[0], wi[1] - p[1], wi[2] - p[2]]);
                        if d > search {
                            continue;
                        }
                        let (oi, oj) = (offsets[i], offsets[*j]);
                        let shift = std::array::from_fn(|a| oj[a] - oi[a] - t[a]);
                        let r = edge_vector(system, i, *j, shift);
                        let d = norm(&r);
                        if d == 0.0 {
                            return Err(GeomError::CoincidentAtoms(i, *j));
                        }
                        if d <= cutoff {
                            found.push((Edge { i, j: *j, shift }, r));
                        }
                    }
                }
            }
        }
    }
    Ok(assemble(n, cutoff, found))
}

/// `x_i - x_j + shift · cell`, the single formula used for every edge vector.
pub(crate) fn edge_vector(system: &AtomicSystem, i: usize, j: usize, shift: [i32; 3]) -> Vec3 {
    let (xi, xj) = (system.positions[i], system.positions[j]);
    let t = system.lattice_vector(shift);
    [
        xi[0] - xj[0] + t[0],
        xi[1] - xj[1] + t[1],
        xi[2] - xj[2] + t[2],
    ]
}

fn assemble(n: usize, cutoff: f64, mut found: Vec<(Edge, Vec3)>) -> Graph {
    found.sort_by(|a, b| a.0.i.cmp(&b.0.i).then(cmp_vec(&a.1, &b.1)));
    let mut neighbor_index = vec![Vec::new(); n];
    let mut lookup = HashMap::with_capacity(found.len());
    for (id, (e, _)) in found.iter().enumerate() {
        neighbor_index[e.i].push(id);
        lookup.insert(*e, id);
    }
    let reverse = found
        .iter()
        .map(|(e, _)| {
            let back = Edge {
                i: e.j,
                j: e.i,
                shift: [-e.shift[0], -e.shift[1], -e.shift[2]],
            };
            lookup[&back]
        })
        .collect();
    let dij = found.iter().map(|(_, r)| norm(r)).collect();
    let (edges, rij) = found.into_iter().unzip();
    Graph {
        edges,
        rij,
        dij,
        neighbor_index,
        reverse,
        cutoff,
    }
}

/// A common neighbor `k` of edge `owner = (i, j)`, reached by `ik` from `i`
/// and by `jk` from the image of `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub owner: usize,
    pub ik: usize,
    pub jk: usize,
    pub k: usize,
}

/// Per-edge neighborhoods `N(i) ∪ N(j)` and `N(i) ∩ N(j)`, expressed as
/// paths through existing edges so positions can be recovered from edge
/// vectors alone. Image points are identified by atom and lattice offset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeNeighborhoods {
    /// Points of `N(i)` other than `j`: `(owner edge, edge i→k)`.
    pub direct_owner: Vec<usize>,
    pub direct_edge: Vec<usize>,
    /// Points of `N(j) \ N(i)` other than `i`: `(owner edge, edge j→k)`.
    pub indirect_owner: Vec<usize>,
    pub indirect_edge: Vec<usize>,
    pub common: Vec<Triplet>,
}

impl EdgeNeighborhoods {
    pub fn build(graph: &Graph) -> Self {
        let mut out = Self::default();
        let mut seen = HashMap::new();
        for e in 0..graph.num_edges() {
            let nb = edge_neighborhood(graph, e, &mut seen);
            out.direct_owner.extend(std::iter::repeat_n(e, nb.direct.len()));
            out.direct_edge.extend(nb.direct);
            out.indirect_owner.extend(std::iter::repeat_n(e, nb.indirect.len()));
            out.indirect_edge.extend(nb.indirect);
            out.common.extend(nb.common);
        }
        out
    }
}

pub(crate) struct SingleEdgeNeighborhood {
    pub direct: Vec<usize>,
    pub indirect: Vec<usize>,
    pub common: Vec<Triplet>,
}

pub(crate) fn edge_neighborhood(
    graph: &Graph,
    e: usize,
    seen: &mut HashMap<(usize, [i32; 3]), usize>,
) -> SingleEdgeNeighborhood {
    let edge = graph.edges[e];
    seen.clear();
    let mut direct = Vec::new();
    for &ik in &graph.neighbor_index[edge.i] {
        if ik == e {
            continue;
        }
        let k = graph.edges[ik];
        seen.insert((k.j, k.shift), ik);
        direct.push(ik);
    }
    let mut indirect = Vec::new();
    let mut common = Vec::new();
    for &jk in &graph.neighbor_index[edge.j] {
        let k = graph.edges[jk];
        let id = (k.j, std::array::from_fn(|a| k.shift[a] + edge.shift[a]));
        if id == (edge.i, [0, 0, 0]) {
            continue;
        }
        match seen.get(&id) {
            Some(&ik) => common.push(Triplet {
                owner: e,
                ik,
                jk,
                k: k.j,
            }),
            None => indirect.push(jk),
        }
    }
    // common neighbors follow the order in which i lists them
    common.sort_by_key(|t| t.ik);
    SingleEdgeNeighborhood {
        direct,
        indirect,
        common,
    }
}
