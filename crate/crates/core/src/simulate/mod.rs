//! Ground-truth graphs, interaction matrices and samplers for the simulation
//! designs.
//!
//! Nodes are 0-based. Every random routine takes an [`RngSeed`]; the pair
//! `(seed, stream)` fully determines its output, so independent trials can
//! run concurrently on distinct streams.

mod samplers;

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layout::{Layout, ParameterJson, ParameterVector};
use crate::linalg::{min_eigenvalue, spd_inverse};
use crate::losses::FamilySpec;
use crate::{Error, Result};

pub use samplers::{
    contaminate, sample_mvn, sample_mvt, sample_normal_conditionals_gibbs, sample_second_moment, sample_truncated_mvn_gibbs,
    truncated_standard_normal, GibbsSchedule,
};

/// Seed plus stream id of a ChaCha8 generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream: u64,
}

impl RngSeed {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        Self { stream, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Undirected simple graph on nodes `0..m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    m: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    pub fn new(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (j, k) in edges {
            if j == k {
                return Err(Error::InvalidArgument(format!("self-loop at node {j}")));
            }
            if j >= m || k >= m {
                return Err(Error::InvalidArgument(format!("edge ({j}, {k}) outside {m} nodes")));
            }
            set.insert((j.min(k), j.max(k)));
        }
        Ok(Self { m, edges: set })
    }

    pub fn empty(m: usize) -> Self {
        Self { m, edges: BTreeSet::new() }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, j: usize, k: usize) -> bool {
        self.edges.contains(&(j.min(k), j.max(k)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.m];
        for &(j, k) in &self.edges {
            deg[j] += 1;
            deg[k] += 1;
        }
        deg
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    pub fn neighbors(&self, j: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| if a == j { Some(b) } else if b == j { Some(a) } else { None })
            .collect()
    }

    /// Number of unordered non-adjacent pairs.
    pub fn num_non_edges(&self) -> usize {
        self.m * (self.m - 1) / 2 - self.edges.len()
    }

    /// Edge set of the off-diagonal nonzero pattern of a symmetric matrix.
    pub fn from_pattern(mat: &DMatrix<f64>, tol: f64) -> Self {
        let m = mat.nrows();
        let mut edges = BTreeSet::new();
        for j in 0..m {
            for k in (j + 1)..m {
                if mat[(j, k)].abs() > tol || mat[(k, j)].abs() > tol {
                    edges.insert((j, k));
                }
            }
        }
        Self { m, edges }
    }

    /// Disjoint union placing `other` after the nodes of `self`.
    pub fn disjoint_union(&self, other: &Graph) -> Graph {
        let off = self.m;
        let mut edges = self.edges.clone();
        edges.extend(other.edges.iter().map(|&(j, k)| (j + off, k + off)));
        Graph { m: self.m + other.m, edges }
    }
}

/// Graph families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GraphKind {
    Chain { m: usize },
    /// `side × side` 4-nearest-neighbor lattice, node `r·side + c`.
    Lattice2d { side: usize },
    /// Node 0 joined to nodes `1..=d`; the remaining nodes are isolated.
    Star { m: usize, d: usize },
    /// `components` disjoint lattices; in each, `hubs` random nodes receive
    /// random extra neighbors in their component until their degree reaches
    /// `hub_degree`.
    HubLattice { components: usize, side: usize, hubs: usize, hub_degree: usize },
    ErdosRenyi { m: usize, p: f64 },
}

pub fn gen_graph(kind: GraphKind, seed: RngSeed) -> Result<Graph> {
    match kind {
        GraphKind::Chain { m } => {
            if m == 0 {
                return Err(Error::InvalidArgument("chain needs m >= 1".into()));
            }
            Graph::new(m, (1..m).map(|j| (j - 1, j)))
        }
        GraphKind::Lattice2d { side } => {
            if side == 0 {
                return Err(Error::InvalidArgument("lattice needs side >= 1".into()));
            }
            Ok(lattice(side))
        }
        GraphKind::Star { m, d } => {
            if d == 0 || d >= m {
                return Err(Error::InvalidArgument(format!("star needs 1 <= d < m, got d={d}, m={m}")));
            }
            Graph::new(m, (1..=d).map(|k| (0, k)))
        }
        GraphKind::HubLattice { components, side, hubs, hub_degree } => {
            let size = side * side;
            if components == 0 || side == 0 || hubs > size || hub_degree >= size {
                return Err(Error::InvalidArgument("invalid hub-lattice parameters".into()));
            }
            let mut rng = seed.rng();
            let mut g = Graph::empty(0);
            for _ in 0..components {
                let mut comp = lattice(side);
                let hub_set: Vec<usize> = sample_indices(&mut rng, size, hubs).into_vec();
                for &hub in &hub_set {
                    // hubs only attach to non-hubs so that every hub ends at exactly `hub_degree`
                    let mut others: Vec<usize> =
                        (0..size).filter(|&k| !hub_set.contains(&k) && !comp.has_edge(hub, k)).collect();
                    let need = hub_degree.saturating_sub(comp.neighbors(hub).len()).min(others.len());
                    for i in 0..need {
                        let pick = rng.random_range(i..others.len());
                        others.swap(i, pick);
                        comp.edges.insert((hub.min(others[i]), hub.max(others[i])));
                    }
                }
                g = g.disjoint_union(&comp);
            }
            Ok(g)
        }
        GraphKind::ErdosRenyi { m, p } => {
            if m == 0 || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("Erdos-Renyi needs m >= 1 and p in [0,1], got {p}")));
            }
            let mut rng = seed.rng();
            let mut edges = vec![];
            for j in 0..m {
                for k in (j + 1)..m {
                    if rng.random::<f64>() < p {
                        edges.push((j, k));
                    }
                }
            }
            Graph::new(m, edges)
        }
    }
}

fn lattice(side: usize) -> Graph {
    let mut edges = BTreeSet::new();
    for r in 0..side {
        for c in 0..side {
            let v = r * side + c;
            if c + 1 < side {
                edges.insert((v, v + 1));
            }
            if r + 1 < side {
                edges.insert((v, v + side));
            }
        }
    }
    Graph { m: side * side, edges }
}

/// Ground truth of a simulation design.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthSpec {
    pub graph: Graph,
    pub family: FamilySpec,
    /// True parameter in the family's layout.
    pub theta: ParameterVector<f64>,
    /// Covariance of the (pre-truncation) normal for Gaussian designs.
    pub sigma: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthJson {
    pub graph: Graph,
    pub family: FamilySpec,
    pub theta: ParameterJson,
    pub sigma: Option<Vec<Vec<f64>>>,
    pub seed: Option<RngSeed>,
}

impl TruthSpec {
    fn gaussian(family: FamilySpec, k: DMatrix<f64>, sigma: DMatrix<f64>, graph: Graph) -> Result<Self> {
        let layout = Arc::new(Layout::symmetric(k.nrows()));
        let theta = ParameterVector::from_parts(layout, &[k], &[])?;
        Ok(Self { graph, family, theta, sigma: Some(sigma) })
    }

    /// Precision `K*` for Gaussian designs.
    pub fn precision(&self) -> Option<DMatrix<f64>> {
        self.sigma.as_ref().map(|_| self.theta.matrix(0))
    }

    pub fn to_json(&self, seed: Option<RngSeed>) -> TruthJson {
        TruthJson {
            graph: self.graph.clone(),
            family: self.family,
            theta: self.theta.to_json(),
            sigma: self.sigma.as_ref().map(|s| s.row_iter().map(|r| r.iter().copied().collect()).collect()),
            seed,
        }
    }

    pub fn from_json(json: &TruthJson) -> Result<Self> {
        let layout = Arc::new(json.family.layout(json.graph.m()));
        let theta = ParameterVector::from_json(layout, &json.theta)?;
        let sigma = json.sigma.as_ref().map(|rows| {
            let m = rows.len();
            DMatrix::from_fn(m, m, |i, j| rows[i][j])
        });
        Ok(Self { graph: json.graph.clone(), family: json.family, theta, sigma })
    }
}

fn correlation(mat: &DMatrix<f64>) -> DMatrix<f64> {
    let d: Vec<f64> = (0..mat.nrows()).map(|j| mat[(j, j)].sqrt()).collect();
    let mut out = DMatrix::from_fn(mat.nrows(), mat.ncols(), |i, j| mat[(i, j)] / (d[i] * d[j]));
    for j in 0..mat.nrows() {
        out[(j, j)] = 1.0;
    }
    symmetrize(&mut out);
    out
}

fn symmetrize(mat: &mut DMatrix<f64>) {
    for j in 0..mat.nrows() {
        for i in (j + 1)..mat.nrows() {
            let v = 0.5 * (mat[(i, j)] + mat[(j, i)]);
            mat[(i, j)] = v;
            mat[(j, i)] = v;
        }
    }
}

/// Gaussian truth from a graph via the partial-correlation construction:
/// uniform `[0.5, 1]` weights on both adjacency slots of every edge, rows
/// rescaled by 1.5 times their absolute sums, averaged with the transpose,
/// unit diagonal, inverted and converted to a correlation matrix `Σ*`.
pub fn precision_peng(graph: &Graph, seed: RngSeed) -> Result<TruthSpec> {
    let m = graph.m();
    if m == 0 {
        return Err(Error::InvalidArgument("empty graph".into()));
    }
    let mut rng = seed.rng();
    for _attempt in 0..10 {
        let mut a = DMatrix::<f64>::zeros(m, m);
        for &(j, k) in graph.edges() {
            a[(j, k)] = rng.random_range(0.5..=1.0);
            a[(k, j)] = rng.random_range(0.5..=1.0);
        }
        for j in 0..m {
            let s: f64 = a.row(j).iter().map(|v| v.abs()).sum();
            if s > 0.0 {
                for k in 0..m {
                    a[(j, k)] /= 1.5 * s;
                }
            }
        }
        let mut p = (&a + a.transpose()) * 0.5;
        for j in 0..m {
            p[(j, j)] = 1.0;
        }
        let Ok(inv) = spd_inverse(&p, None) else { continue };
        let sigma = correlation(&inv);
        let Ok(mut k) = spd_inverse(&sigma, None) else { continue };
        // exact zeros off the graph; the inverse pattern matches up to round-off
        for j in 0..m {
            for l in 0..m {
                if j != l && !graph.has_edge(j, l) {
                    k[(j, l)] = 0.0;
                }
            }
        }
        return TruthSpec::gaussian(FamilySpec::gaussian(), k, sigma, graph.clone());
    }
    Err(Error::Rank { block: None, detail: "partial-correlation construction singular after 10 draws".into() })
}

/// Truncated Gaussian truth: `num_blocks` complete blocks whose
/// lower-triangle entries are 0 with probability 0.2 and uniform on
/// `[0.5, 1]` otherwise, with a common diagonal chosen so that the minimum
/// eigenvalue of `K*` is 0.1.
pub fn precision_block_uniform(num_blocks: usize, block_size: usize, seed: RngSeed) -> Result<TruthSpec> {
    if num_blocks == 0 || block_size == 0 {
        return Err(Error::InvalidArgument("need at least one nonempty block".into()));
    }
    let m = num_blocks * block_size;
    let mut rng = seed.rng();
    let mut a = DMatrix::<f64>::zeros(m, m);
    for blk in 0..num_blocks {
        let off = blk * block_size;
        for j in 0..block_size {
            for i in (j + 1)..block_size {
                let v = if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random_range(0.5..=1.0) };
                a[(off + i, off + j)] = v;
                a[(off + j, off + i)] = v;
            }
        }
    }
    // Adding δ to the diagonal shifts every eigenvalue by δ.
    let shift = 0.1 - min_eigenvalue(&a);
    let mut k = a;
    for j in 0..m {
        k[(j, j)] = shift;
    }
    let graph = Graph::from_pattern(&k, 0.0);
    let sigma = spd_inverse(&k, None)?;
    TruthSpec::gaussian(FamilySpec::truncated_gaussian(), k, sigma, graph)
}

/// Sparse signed precision: lower-triangle entries −1/0/1 with
/// probabilities 0.01/0.98/0.01, diagonal `1 + degree`, then the diagonal
/// scaled by a common factor so that the minimum eigenvalue is
/// `target_min_eig`.
pub fn precision_discrete(m: usize, target_min_eig: f64, seed: RngSeed) -> Result<TruthSpec> {
    if m < 2 {
        return Err(Error::InvalidArgument("precision_discrete needs m >= 2".into()));
    }
    if !(target_min_eig > 0.0) {
        return Err(Error::InvalidArgument("target eigenvalue must be positive".into()));
    }
    let mut rng = seed.rng();
    let mut k = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        for i in (j + 1)..m {
            let u: f64 = rng.random();
            let v = if u < 0.01 { -1.0 } else if u < 0.02 { 1.0 } else { 0.0 };
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let base: Vec<f64> = (0..m).map(|j| 1.0 + k.row(j).iter().filter(|v| **v != 0.0).count() as f64).collect();
    let with_scale = |f: f64| {
        let mut out = k.clone();
        for j in 0..m {
            out[(j, j)] = f * base[j];
        }
        out
    };
    let eig = |f: f64| min_eigenvalue(&with_scale(f));
    // λ_min is increasing in the diagonal scale
    let (mut lo, mut hi) = (0.0, 1.0);
    while eig(hi) < target_min_eig {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if eig(mid) < target_min_eig {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let k = with_scale(hi);
    let graph = Graph::from_pattern(&k, 0.0);
    let sigma = spd_inverse(&k, None)?;
    TruthSpec::gaussian(FamilySpec::gaussian(), k, sigma, graph)
}

/// Precision with unit diagonal and constant `value` on the edges.
pub fn constant_precision(graph: &Graph, value: f64) -> Result<TruthSpec> {
    let m = graph.m();
    let mut k = DMatrix::<f64>::identity(m, m);
    for &(j, l) in graph.edges() {
        k[(j, l)] = value;
        k[(l, j)] = value;
    }
    let sigma = spd_inverse(&k, None)
        .map_err(|_| Error::InvalidArgument(format!("precision with edge value {value} is not positive definite")))?;
    TruthSpec::gaussian(FamilySpec::gaussian(), k, sigma, graph.clone())
}

/// Chain with `κ*_{j,j+1} = 0.3`.
pub fn chain_truth(m: usize) -> Result<TruthSpec> {
    constant_precision(&gen_graph(GraphKind::Chain { m }, RngSeed::new(0))?, 0.3)
}

/// Lattice with edge entries 0.2.
pub fn lattice_truth(side: usize) -> Result<TruthSpec> {
    constant_precision(&gen_graph(GraphKind::Lattice2d { side }, RngSeed::new(0))?, 0.2)
}

/// Star with hub degree `d` and edge entries `2.5/d` placed in the
/// precision matrix (the graph of `K*` must be the star).
pub fn star_truth(m: usize, d: usize) -> Result<TruthSpec> {
    constant_precision(&gen_graph(GraphKind::Star { m, d }, RngSeed::new(0))?, 2.5 / d as f64)
}

/// Normal-conditionals truth on a graph: quartic interactions
/// `B⁽²⁾ = −adjacency/25`, quadratic coefficients −1, linear coefficients
/// 8/50 (stored in the `(B, B⁽²⁾, b)` layout with `B = −I`).
pub fn normal_conditionals_truth(graph: &Graph) -> Result<TruthSpec> {
    let m = graph.m();
    let layout = Arc::new(Layout::normal_conditionals(m));
    let b = -DMatrix::<f64>::identity(m, m);
    let mut b2 = DMatrix::<f64>::zeros(m, m);
    for &(j, k) in graph.edges() {
        b2[(j, k)] = -1.0 / 25.0;
        b2[(k, j)] = -1.0 / 25.0;
    }
    let theta = ParameterVector::from_parts(layout, &[b, b2], &[vec![8.0 / 50.0; m]])?;
    Ok(TruthSpec { graph: graph.clone(), family: FamilySpec::normal_conditionals(), theta, sigma: None })
}

/// Pieces of a normal-conditionals truth in the sampler's form:
/// quartic matrix `B⁽²⁾`, quadratic coefficients (diagonal of `B`) and
/// linear coefficients.
pub fn normal_conditionals_parts(truth: &TruthSpec) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    let layout = truth.theta.layout();
    if layout.num_pair_stats() != 2 || layout.num_single_stats() != 1 {
        return Err(Error::InvalidArgument("truth is not in the normal-conditionals layout".into()));
    }
    let b = truth.theta.matrix(0);
    if (0..b.nrows()).any(|j| (0..b.ncols()).any(|k| j != k && b[(j, k)] != 0.0)) {
        return Err(Error::Unsupported("sampler handles off-diagonal x_j x_k terms only when zero".into()));
    }
    Ok((truth.theta.matrix(1), b.diagonal(), DVector::from_vec(truth.theta.singles(0))))
}
