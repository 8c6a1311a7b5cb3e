//! Empirical score matching losses as block-diagonal quadratics.
//!
//! Every builder returns a [`QuadraticLoss`] in the canonical convention
//! `loss(θ) = ½ θᵀΓθ − gᵀθ + c`, where `θ` is the full block-layout vector of
//! a [`Layout`]. Blocks are symmetric positive semidefinite by construction
//! (sums of weighted outer products).

mod stats;

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{sample_covariance, DataMatrix};
use crate::layout::{Layout, ParameterVector, Position};
use crate::linalg::max_asymmetry;
use crate::{Error, Float, Result};

pub use stats::{
    ClosureStats, LocationGaussianStats, NormalConditionalStats, PairwiseStats, StatPartials,
    SymmetricQuadraticStats,
};

/// Support of the model density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    RealLine,
    NonnegativeOrthant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    GaussianCentered,
    TruncatedGaussianCentered,
    TruncatedGaussianLocation,
    NormalConditionals,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    pub domain: Domain,
}

impl FamilySpec {
    pub fn new(kind: FamilyKind, domain: Domain) -> Result<Self> {
        let truncated = matches!(
            kind,
            FamilyKind::TruncatedGaussianCentered | FamilyKind::TruncatedGaussianLocation
        );
        if truncated && domain != Domain::NonnegativeOrthant {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} is supported on the non-negative orthant only"
            )));
        }
        Ok(Self { kind, domain })
    }

    pub fn gaussian() -> Self {
        Self { kind: FamilyKind::GaussianCentered, domain: Domain::RealLine }
    }

    pub fn truncated_gaussian() -> Self {
        Self { kind: FamilyKind::TruncatedGaussianCentered, domain: Domain::NonnegativeOrthant }
    }

    pub fn truncated_gaussian_location() -> Self {
        Self { kind: FamilyKind::TruncatedGaussianLocation, domain: Domain::NonnegativeOrthant }
    }

    pub fn normal_conditionals() -> Self {
        Self { kind: FamilyKind::NormalConditionals, domain: Domain::RealLine }
    }

    pub fn layout(&self, m: usize) -> Layout {
        match self.kind {
            FamilyKind::GaussianCentered | FamilyKind::TruncatedGaussianCentered => Layout::symmetric(m),
            FamilyKind::TruncatedGaussianLocation => Layout::with_location(m),
            FamilyKind::NormalConditionals => Layout::normal_conditionals(m),
        }
    }
}

/// Diagonal blocks of a block-diagonal matrix. The Gaussian losses repeat a
/// single block `m` times, which is stored once.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockDiag<T: Float> {
    Shared { block: DMatrix<T>, count: usize },
    Distinct(Vec<DMatrix<T>>),
}

impl<T: Float> BlockDiag<T> {
    pub fn num_blocks(&self) -> usize {
        match self {
            BlockDiag::Shared { count, .. } => *count,
            BlockDiag::Distinct(v) => v.len(),
        }
    }

    #[inline]
    pub fn block(&self, j: usize) -> &DMatrix<T> {
        match self {
            BlockDiag::Shared { block, count } => {
                assert!(j < *count, "block index out of range");
                block
            }
            BlockDiag::Distinct(v) => &v[j],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &DMatrix<T>> + '_ {
        (0..self.num_blocks()).map(move |j| self.block(j))
    }

    pub fn block_dim(&self) -> usize {
        self.block(0).nrows()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        match self {
            BlockDiag::Shared { block, count } => BlockDiag::Shared { block: block.map(f), count: *count },
            BlockDiag::Distinct(v) => BlockDiag::Distinct(v.iter().map(|b| b.map(&f)).collect()),
        }
    }
}

/// Empirical score matching loss `½ θᵀΓθ − gᵀθ + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLoss<T: Float> {
    layout: Arc<Layout>,
    gamma: BlockDiag<T>,
    g: Vec<T>,
    c: T,
    family: Option<FamilySpec>,
}

/// Debug serialization with dense blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticLossJson {
    pub m: usize,
    pub pair_stats: Vec<String>,
    pub single_stats: Vec<String>,
    pub family: Option<FamilySpec>,
    pub blocks: Vec<Vec<Vec<f64>>>,
    pub g: Vec<f64>,
    pub c: f64,
}

impl<T: Float> QuadraticLoss<T> {
    pub fn new(layout: Arc<Layout>, gamma: BlockDiag<T>, g: Vec<T>, c: T) -> Result<Self> {
        let p = layout.block_dim();
        if gamma.num_blocks() != layout.m() {
            return Err(Error::Contract(format!(
                "{} blocks for a layout over {} variables",
                gamma.num_blocks(),
                layout.m()
            )));
        }
        for (j, b) in gamma.iter().enumerate() {
            if b.nrows() != p || b.ncols() != p {
                return Err(Error::Contract(format!("block {j} is not {p}x{p}")));
            }
        }
        if g.len() != layout.full_dim() {
            return Err(Error::Contract(format!(
                "linear term has length {}, expected {}",
                g.len(),
                layout.full_dim()
            )));
        }
        Ok(Self { layout, gamma, g, c, family: None })
    }

    pub fn with_family(mut self, family: FamilySpec) -> Self {
        self.family = Some(family);
        self
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn family(&self) -> Option<FamilySpec> {
        self.family
    }

    pub fn gamma(&self) -> &BlockDiag<T> {
        &self.gamma
    }

    pub fn block(&self, j: usize) -> &DMatrix<T> {
        self.gamma.block(j)
    }

    pub fn g(&self) -> &[T] {
        &self.g
    }

    pub fn c(&self) -> T {
        self.c
    }

    #[inline]
    pub fn g_at(&self, pos: Position) -> T {
        self.g[pos.block * self.layout.block_dim() + pos.index]
    }

    /// `Γ_b θ_b` for every block.
    pub fn block_products(&self, full: &[T]) -> Vec<Vec<T>> {
        let p = self.layout.block_dim();
        (0..self.layout.m())
            .map(|b| {
                let blk = self.gamma.block(b);
                let theta_b = &full[b * p..(b + 1) * p];
                let mut out = vec![T::zero(); p];
                for (c, t) in theta_b.iter().enumerate() {
                    if *t != T::zero() {
                        for (r, o) in out.iter_mut().enumerate() {
                            *o += blk[(r, c)] * *t;
                        }
                    }
                }
                out
            })
            .collect()
    }

    /// `½ θᵀΓθ − gᵀθ` on a full block-layout vector.
    pub fn quadratic_part_full(&self, full: &[T]) -> T {
        let p = self.layout.block_dim();
        let prods = self.block_products(full);
        let half = T::lit(0.5);
        let mut total = T::zero();
        for b in 0..self.layout.m() {
            for i in 0..p {
                let t = full[b * p + i];
                total += half * t * prods[b][i] - self.g[b * p + i] * t;
            }
        }
        total
    }

    pub fn quadratic_part(&self, theta: &ParameterVector<T>) -> T {
        self.quadratic_part_full(&theta.full_vec())
    }

    /// Full loss including the constant.
    pub fn value(&self, theta: &ParameterVector<T>) -> T {
        self.quadratic_part(theta) + self.c
    }

    /// Reduced linear term `b_r = Σ_{positions of r} g`.
    pub fn reduced_linear(&self) -> Vec<T> {
        (0..self.layout.num_coords())
            .map(|r| self.layout.positions(r).map(|pos| self.g_at(pos)).sum())
            .collect()
    }

    /// Entry `H_rs` of the reduced Hessian.
    pub fn hessian_entry(&self, r: usize, s: usize) -> T {
        let mut total = T::zero();
        for pr in self.layout.positions(r) {
            for ps in self.layout.positions(s) {
                if pr.block == ps.block {
                    total += self.gamma.block(pr.block)[(pr.index, ps.index)];
                }
            }
        }
        total
    }

    /// Gradient of the smooth part in reduced coordinates.
    pub fn reduced_gradient(&self, theta: &[T]) -> Vec<T> {
        let full = ParameterVector::from_values(self.layout.clone(), theta.to_vec())
            .expect("theta matches layout")
            .full_vec();
        let prods = self.block_products(&full);
        (0..self.layout.num_coords())
            .map(|r| {
                self.layout
                    .positions(r)
                    .map(|pos| prods[pos.block][pos.index] - self.g_at(pos))
                    .sum()
            })
            .collect()
    }

    /// Reduced Hessian-vector product `H v`.
    pub fn reduced_hessian_mul(&self, v: &[T]) -> Vec<T> {
        let full = ParameterVector::from_values(self.layout.clone(), v.to_vec())
            .expect("vector matches layout")
            .full_vec();
        let prods = self.block_products(&full);
        (0..self.layout.num_coords())
            .map(|r| self.layout.positions(r).map(|pos| prods[pos.block][pos.index]).sum())
            .collect()
    }

    /// Largest absolute block diagonal entry.
    pub fn max_block_diagonal(&self) -> T {
        let mut best = T::zero();
        for b in self.gamma.iter() {
            for i in 0..b.nrows() {
                best = best.max(b[(i, i)].abs());
            }
        }
        best
    }

    pub fn to_json(&self) -> QuadraticLossJson {
        QuadraticLossJson {
            m: self.layout.m(),
            pair_stats: self.layout.pair_stats().iter().map(|s| s.name.clone()).collect(),
            single_stats: self.layout.single_stats().to_vec(),
            family: self.family,
            blocks: self
                .gamma
                .iter()
                .map(|b| {
                    (0..b.nrows())
                        .map(|i| (0..b.ncols()).map(|j| b[(i, j)].to_f64_lossy()).collect())
                        .collect()
                })
                .collect(),
            g: self.g.iter().map(|v| v.to_f64_lossy()).collect(),
            c: self.c.to_f64_lossy(),
        }
    }
}

/// Gaussian loss `−tr(K) + ½ tr(KKW)`: every block equals `W`, `g = vec(I)`.
pub fn build_gaussian_loss<T: Float>(w: &DMatrix<T>) -> Result<QuadraticLoss<T>> {
    let m = w.nrows();
    if w.ncols() != m {
        return Err(Error::InvalidArgument(format!("W is {}x{}, not square", m, w.ncols())));
    }
    let scale = w.iter().fold(T::one(), |acc, v| acc.max(v.abs()));
    if max_asymmetry(w) > T::lit(1e-12) * scale {
        return Err(Error::InvalidArgument("W must be symmetric".into()));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("W has non-finite entries".into()));
    }
    let layout = Arc::new(Layout::symmetric(m));
    let mut g = vec![T::zero(); m * m];
    for j in 0..m {
        g[j * m + j] = T::one();
    }
    QuadraticLoss::new(layout, BlockDiag::Shared { block: w.clone(), count: m }, g, T::zero())
        .map(|l| l.with_family(FamilySpec::gaussian()))
}

/// Gaussian loss in trace form `−tr(K) + ½ tr(KKW)` at an arbitrary square
/// `K`. Agrees with the quadratic on symmetric `K` and takes the same value at
/// `K` and `Kᵀ`.
pub fn gaussian_trace_loss<T: Float>(k: &DMatrix<T>, w: &DMatrix<T>) -> T {
    (k * k * w).trace() * T::lit(0.5) - k.trace()
}

/// Population Gaussian loss with `Γ* = I ⊗ Σ*` and `g* = vec(I)`.
pub fn population_gaussian_loss<T: Float>(sigma: &DMatrix<T>) -> Result<QuadraticLoss<T>> {
    build_gaussian_loss(sigma)
}

/// Non-negative score matching loss of the centered truncated normal family.
/// Block `j` is `(1/n) Σ_i x_ij² x⁽ⁱ⁾x⁽ⁱ⁾ᵀ` and `g = 2 vec(W) + vec(diag W)`.
pub fn build_nonneg_gaussian_loss<T: Float>(x: &DataMatrix<T>) -> Result<QuadraticLoss<T>> {
    x.require_nonnegative()?;
    let (n, m) = (x.n(), x.m());
    let nf = T::from_usize(n).unwrap();
    let xv = x.values();
    let mut blocks = Vec::with_capacity(m);
    for j in 0..m {
        // rows scaled by x_ij, then Γ_j = Xjᵀ Xj / n
        let mut xj = xv.clone();
        for i in 0..n {
            let w = xv[(i, j)];
            for c in 0..m {
                xj[(i, c)] *= w;
            }
        }
        let mut blk = xj.tr_mul(&xj);
        blk.iter_mut().for_each(|v| *v /= nf);
        symmetrize(&mut blk);
        blocks.push(blk);
    }
    let w = sample_covariance(x);
    let two = T::lit(2.0);
    let mut g = vec![T::zero(); m * m];
    for j in 0..m {
        for k in 0..m {
            g[j * m + k] = two * w[(k, j)];
        }
        g[j * m + j] += w[(j, j)];
    }
    let layout = Arc::new(Layout::symmetric(m));
    QuadraticLoss::new(layout, BlockDiag::Distinct(blocks), g, T::zero())
        .map(|l| l.with_family(FamilySpec::truncated_gaussian()))
}

/// Score matching loss of the normal-conditionals family with parameters
/// `(B, B⁽²⁾, b)`.
pub fn build_normal_conditionals_loss<T: Float>(x: &DataMatrix<T>) -> Result<QuadraticLoss<T>> {
    build_general_pairwise_loss(&NormalConditionalStats, x, Domain::RealLine)
        .map(|l| l.with_family(FamilySpec::normal_conditionals()))
}

/// Non-negative score matching loss of the truncated normal family with an
/// unknown location, parameterized by `K` and `η = Kμ`.
pub fn build_truncated_location_loss<T: Float>(x: &DataMatrix<T>) -> Result<QuadraticLoss<T>> {
    build_general_pairwise_loss(&LocationGaussianStats, x, Domain::NonnegativeOrthant)
        .map(|l| l.with_family(FamilySpec::truncated_gaussian_location()))
}

/// Builds the loss of an arbitrary pairwise family from the partial
/// derivatives of its statistics. On the non-negative orthant each
/// coordinate's contribution is weighted by `x_j²` (plus the `2x_j` drift
/// term of the non-negative scoring rule).
pub fn build_general_pairwise_loss<T: Float, S: PairwiseStats<T> + ?Sized>(
    stats: &S,
    x: &DataMatrix<T>,
    domain: Domain,
) -> Result<QuadraticLoss<T>> {
    if domain == Domain::NonnegativeOrthant {
        x.require_nonnegative()?;
    }
    let (n, m) = (x.n(), x.m());
    let layout = Arc::new(stats.layout(m)?);
    if layout.m() != m {
        return Err(Error::Contract(format!(
            "statistics declare a layout over {} variables, data has {m}",
            layout.m()
        )));
    }
    let p = layout.block_dim();
    let nf = T::from_usize(n).unwrap();
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let mut blocks = vec![DMatrix::<T>::zeros(p, p); m];
    let mut g = vec![T::zero(); m * p];
    let mut c = T::zero();
    let mut row = vec![T::zero(); m];
    for i in 0..n {
        for (j, v) in row.iter_mut().enumerate() {
            *v = x.get(i, j);
        }
        for j in 0..m {
            let StatPartials { h, hjj, db, d2b } = stats.partials(&row, j);
            if h.len() != p || hjj.len() != p {
                return Err(Error::Contract(format!(
                    "statistic partials have lengths {} and {}, layout block dimension is {p}",
                    h.len(),
                    hjj.len()
                )));
            }
            let (weight, lin_h, lin_hjj, constant) = match domain {
                Domain::RealLine => (T::one(), db, T::one(), d2b + half * db * db),
                Domain::NonnegativeOrthant => {
                    let xj = row[j];
                    let x2 = xj * xj;
                    (x2, two * xj + x2 * db, x2, two * xj * db + x2 * d2b + half * x2 * db * db)
                }
            };
            if weight != T::zero() {
                let blk = &mut blocks[j];
                for a in 0..p {
                    if h[a] == T::zero() {
                        continue;
                    }
                    let wa = weight * h[a];
                    for b in a..p {
                        blk[(a, b)] += wa * h[b];
                    }
                }
            }
            let gj = &mut g[j * p..(j + 1) * p];
            for a in 0..p {
                gj[a] -= lin_h * h[a] + lin_hjj * hjj[a];
            }
            c += constant;
        }
    }
    for blk in blocks.iter_mut() {
        for a in 0..p {
            for b in a..p {
                let v = blk[(a, b)] / nf;
                blk[(a, b)] = v;
                blk[(b, a)] = v;
            }
        }
    }
    g.iter_mut().for_each(|v| *v /= nf);
    c /= nf;
    QuadraticLoss::new(layout, BlockDiag::Distinct(blocks), g, c)
}

/// Dispatches to the builder of `family`.
pub fn build_loss<T: Float>(family: FamilySpec, x: &DataMatrix<T>) -> Result<QuadraticLoss<T>> {
    match family.kind {
        FamilyKind::GaussianCentered => {
            if family.domain == Domain::NonnegativeOrthant {
                // centered Gaussian statistics under the non-negative scoring rule
                return build_general_pairwise_loss(&SymmetricQuadraticStats, x, family.domain)
                    .map(|l| l.with_family(family));
            }
            build_gaussian_loss(&sample_covariance(x))
        }
        FamilyKind::TruncatedGaussianCentered => build_nonneg_gaussian_loss(x),
        FamilyKind::TruncatedGaussianLocation => build_truncated_location_loss(x),
        FamilyKind::NormalConditionals => {
            if family.domain == Domain::NonnegativeOrthant {
                return build_general_pairwise_loss(&NormalConditionalStats, x, family.domain)
                    .map(|l| l.with_family(family));
            }
            build_normal_conditionals_loss(x)
        }
    }
}

fn symmetrize<T: Float>(a: &mut DMatrix<T>) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = (a[(i, j)] + a[(j, i)]) * T::lit(0.5);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}
