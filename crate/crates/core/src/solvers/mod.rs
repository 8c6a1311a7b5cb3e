//! Penalized minimization of score matching quadratics.
//!
//! The objective is `½ θᵀΓθ − gᵀθ + λ·pen(θ)` in reduced coordinates, where
//! `pen` is an ℓ1 norm or a sum of Euclidean group norms over the penalized
//! coordinates. Every penalized coordinate carries a multiplicity: an
//! unordered off-diagonal pair stands for both `θ_jk` and `θ_kj` of the
//! symmetric matrix, so the default off-diagonal penalty weighs it twice.
//!
//! Three solvers are provided: generic cyclic coordinate descent
//! ([`solve_cd`], which also handles groups), a Gaussian-specialized variant
//! ([`solve_cd_gaussian`]) and the piecewise-linear homotopy ([`solve_path`]).

mod cd;
mod gaussian;
mod path;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::layout::{Coord, Layout, ParameterJson, ParameterVector};
use crate::linalg::spd_solve;
use crate::losses::QuadraticLoss;
use crate::{Error, Float, Result};

pub use cd::{solve_cd, solve_group_cd};
pub use gaussian::solve_cd_gaussian;
pub use path::{solve_path, PathJson, PathStop, SolutionPath, Termination};

/// `sign(a)·max(|a| − b, 0)`.
pub fn soft_threshold<T: Float>(a: T, b: T) -> T {
    debug_assert!(b >= T::zero(), "negative threshold");
    if a > b {
        a - b
    } else if a < -b {
        a + b
    } else {
        T::zero()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyMode {
    L1,
    Group,
}

/// Which reduced coordinates are penalized, and how.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec<T: Float> {
    mode: PenaltyMode,
    num_coords: usize,
    /// Penalty multiplicity per coordinate, zero when unpenalized.
    weight: Vec<T>,
    groups: Vec<Vec<usize>>,
    group_weight: Vec<T>,
}

/// A minimization unit of coordinate descent and of the KKT check.
#[derive(Debug, Clone)]
pub(crate) enum Unit<T> {
    Free(usize),
    Single(usize, T),
    Pair([usize; 2], T),
}

impl<T: Float> PenaltySpec<T> {
    /// ℓ1 on every off-diagonal pair coordinate with multiplicity 2;
    /// diagonals and singletons unpenalized.
    pub fn offdiag_l1(layout: &Layout) -> Self {
        let two = T::lit(2.0);
        let weight = (0..layout.num_coords())
            .map(|r| if layout.is_offdiagonal(r) { two } else { T::zero() })
            .collect();
        Self { mode: PenaltyMode::L1, num_coords: layout.num_coords(), weight, groups: vec![], group_weight: vec![] }
    }

    /// ℓ1 on an explicit coordinate set with a common multiplicity.
    pub fn l1(layout: &Layout, penalized: &[usize], multiplicity: T) -> Result<Self> {
        check_multiplicity(multiplicity)?;
        let mut weight = vec![T::zero(); layout.num_coords()];
        for &r in penalized {
            if r >= weight.len() {
                return Err(Error::InvalidArgument(format!("coordinate {r} outside layout")));
            }
            weight[r] = multiplicity;
        }
        Ok(Self { mode: PenaltyMode::L1, num_coords: weight.len(), weight, groups: vec![], group_weight: vec![] })
    }

    /// Group lasso over the off-diagonal pairs: one group per unordered pair
    /// `(j, k)` collecting that pair's coordinate in every statistic type,
    /// with multiplicity 2.
    pub fn pair_groups(layout: &Layout) -> Self {
        let groups = layout.pair_groups().into_iter().map(|(_, g)| g).collect();
        Self::groups(layout, groups, T::lit(2.0)).expect("layout pair groups are disjoint")
    }

    /// Group lasso over disjoint coordinate groups; the union of the groups
    /// is the penalized set.
    pub fn groups(layout: &Layout, groups: Vec<Vec<usize>>, multiplicity: T) -> Result<Self> {
        check_multiplicity(multiplicity)?;
        let n = layout.num_coords();
        let mut weight = vec![T::zero(); n];
        let mut seen = vec![false; n];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::InvalidArgument("empty penalty group".into()));
            }
            for &r in g {
                if r >= n {
                    return Err(Error::InvalidArgument(format!("coordinate {r} outside layout")));
                }
                if seen[r] {
                    return Err(Error::InvalidArgument(format!("coordinate {r} appears in two groups")));
                }
                seen[r] = true;
                weight[r] = multiplicity;
            }
        }
        let group_weight = vec![multiplicity; groups.len()];
        Ok(Self { mode: PenaltyMode::Group, num_coords: n, weight, groups, group_weight })
    }

    pub fn mode(&self) -> PenaltyMode {
        self.mode
    }

    pub fn num_coords(&self) -> usize {
        self.num_coords
    }

    pub fn is_penalized(&self, r: usize) -> bool {
        self.weight[r] > T::zero()
    }

    pub fn multiplicity(&self, r: usize) -> T {
        self.weight[r]
    }

    pub fn group_list(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn unpenalized(&self) -> Vec<usize> {
        (0..self.num_coords).filter(|&r| !self.is_penalized(r)).collect()
    }

    /// `pen(θ)` without the factor λ.
    pub fn value(&self, theta: &[T]) -> T {
        match self.mode {
            PenaltyMode::L1 => theta.iter().zip(&self.weight).map(|(t, w)| *w * t.abs()).sum(),
            PenaltyMode::Group => self
                .groups
                .iter()
                .zip(&self.group_weight)
                .map(|(g, w)| *w * g.iter().map(|&r| theta[r] * theta[r]).sum::<T>().sqrt())
                .sum(),
        }
    }

    pub(crate) fn check_layout(&self, layout: &Layout) -> Result<()> {
        if layout.num_coords() != self.num_coords {
            return Err(Error::Contract(format!(
                "penalty covers {} coordinates, loss has {}",
                self.num_coords,
                layout.num_coords()
            )));
        }
        Ok(())
    }

    /// Units in coordinate order; a group is placed at its first member.
    pub(crate) fn units(&self) -> Result<Vec<Unit<T>>> {
        let mut group_of = vec![None; self.num_coords];
        for (gi, g) in self.groups.iter().enumerate() {
            if g.len() > 2 {
                return Err(Error::Unsupported(format!("penalty group of size {} (at most 2)", g.len())));
            }
            for &r in g {
                group_of[r] = Some(gi);
            }
        }
        let mut placed = vec![false; self.groups.len()];
        let mut units = Vec::with_capacity(self.num_coords);
        for r in 0..self.num_coords {
            if !self.is_penalized(r) {
                units.push(Unit::Free(r));
                continue;
            }
            match (self.mode, group_of[r]) {
                (PenaltyMode::Group, Some(gi)) => {
                    if placed[gi] {
                        continue;
                    }
                    placed[gi] = true;
                    let g = &self.groups[gi];
                    let w = self.group_weight[gi];
                    units.push(if g.len() == 1 { Unit::Single(g[0], w) } else { Unit::Pair([g[0], g[1]], w) });
                }
                _ => units.push(Unit::Single(r, self.weight[r])),
            }
        }
        Ok(units)
    }
}

fn check_multiplicity<T: Float>(w: T) -> Result<()> {
    if !(w > T::zero()) || !w.is_finite() {
        return Err(Error::InvalidArgument(format!("penalty multiplicity must be positive, got {w}")));
    }
    Ok(())
}

/// Coordinate descent controls.
#[derive(Debug, Clone, Copy)]
pub struct CdOptions<T> {
    /// Convergence threshold on the ℓ1 change of a full sweep.
    pub tol: T,
    /// Maximum number of sweeps (full or active-set).
    pub t_max: usize,
}

impl<T: Float> Default for CdOptions<T> {
    fn default() -> Self {
        Self { tol: T::lit(1e-8), t_max: 10_000 }
    }
}

impl<T: Float> CdOptions<T> {
    pub fn new(tol: T, t_max: usize) -> Self {
        Self { tol, t_max }
    }

    pub(crate) fn validate(&self, lambda: T) -> Result<()> {
        if !(lambda >= T::zero()) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be finite and nonnegative, got {lambda}")));
        }
        if !(self.tol > T::zero()) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// A penalized minimizer at one penalty level.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate<T: Float> {
    pub theta: ParameterVector<T>,
    pub lambda: T,
    pub kkt_residual: T,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateJson {
    pub lambda: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Off-diagonal support as `(j, k)` pairs with `j < k`.
    pub edges: Vec<(usize, usize)>,
    pub theta: ParameterJson,
}

impl<T: Float> Estimate<T> {
    pub fn layout(&self) -> &Arc<Layout> {
        self.theta.layout()
    }

    pub fn to_json(&self) -> EstimateJson {
        EstimateJson {
            lambda: self.lambda.to_f64_lossy(),
            kkt_residual: self.kkt_residual.to_f64_lossy(),
            iterations: self.iterations,
            converged: self.converged,
            edges: self.theta.edge_support(T::zero()).into_iter().collect(),
            theta: self.theta.to_json(),
        }
    }
}

/// Maximum violation of the optimality conditions given the smooth gradient.
pub(crate) fn kkt_from_gradient<T: Float>(units: &[Unit<T>], theta: &[T], grad: &[T], lambda: T) -> T {
    let mut worst = T::zero();
    for unit in units {
        let v = match *unit {
            Unit::Free(r) => grad[r].abs(),
            Unit::Single(r, w) => {
                let t = lambda * w;
                if theta[r] == T::zero() {
                    (grad[r].abs() - t).max(T::zero())
                } else {
                    (grad[r] + t * theta[r].signum()).abs()
                }
            }
            Unit::Pair([a, b], w) => {
                let t = lambda * w;
                let norm = (theta[a] * theta[a] + theta[b] * theta[b]).sqrt();
                if norm == T::zero() {
                    ((grad[a] * grad[a] + grad[b] * grad[b]).sqrt() - t).max(T::zero())
                } else {
                    let ra = grad[a] + t * theta[a] / norm;
                    let rb = grad[b] + t * theta[b] / norm;
                    (ra * ra + rb * rb).sqrt()
                }
            }
        };
        worst = worst.max(v);
    }
    worst
}

/// Maximum violation of the stationarity/subgradient conditions of the
/// penalized objective at `theta`.
pub fn kkt_residual<T: Float>(
    loss: &QuadraticLoss<T>,
    penalty: &PenaltySpec<T>,
    theta: &ParameterVector<T>,
    lambda: T,
) -> Result<T> {
    penalty.check_layout(loss.layout())?;
    if theta.values().len() != loss.layout().num_coords() {
        return Err(Error::Contract("parameter vector does not match loss layout".into()));
    }
    let grad = loss.reduced_gradient(theta.values());
    Ok(kkt_from_gradient(&penalty.units()?, theta.values(), &grad, lambda))
}

/// Penalized objective `½ θᵀΓθ − gᵀθ + c + λ·pen(θ)`.
pub fn objective<T: Float>(loss: &QuadraticLoss<T>, penalty: &PenaltySpec<T>, theta: &ParameterVector<T>, lambda: T) -> T {
    loss.value(theta) + lambda * penalty.value(theta.values())
}

/// Stationary point over the unpenalized coordinates with every penalized
/// coordinate held at zero.
pub fn unpenalized_solution<T: Float>(loss: &QuadraticLoss<T>, penalty: &PenaltySpec<T>) -> Result<Vec<T>> {
    penalty.check_layout(loss.layout())?;
    let free = penalty.unpenalized();
    let mut theta = vec![T::zero(); penalty.num_coords()];
    if free.is_empty() {
        return Ok(theta);
    }
    let b = loss.reduced_linear();
    let h = nalgebra::DMatrix::from_fn(free.len(), free.len(), |a, c| loss.hessian_entry(free[a], free[c]));
    let rhs: Vec<T> = free.iter().map(|&r| b[r]).collect();
    let sol = spd_solve(&h, &rhs, None).map_err(|e| match e {
        Error::Rank { detail, .. } => {
            let block = first_block_of(loss.layout(), &free, &h);
            Error::Rank { block, detail: format!("unpenalized subproblem: {detail}") }
        }
        other => other,
    })?;
    for (r, v) in free.iter().zip(sol) {
        theta[*r] = v;
    }
    Ok(theta)
}

/// Block of the first unpenalized coordinate with a vanishing curvature, for
/// error reporting.
fn first_block_of<T: Float>(layout: &Layout, free: &[usize], h: &nalgebra::DMatrix<T>) -> Option<usize> {
    let scale = (0..h.nrows()).map(|i| h[(i, i)].abs()).fold(T::zero(), |a, b| a.max(b));
    free.iter()
        .enumerate()
        .find(|(i, _)| h[(*i, *i)] <= T::lit(1e-12) * scale)
        .map(|(_, &r)| match layout.coord(r) {
            Coord::Pair { j, .. } => j,
            Coord::Single { j, .. } => j,
        })
}

/// Smallest λ at which every penalized coordinate is zero at the optimum.
pub fn lambda_max<T: Float>(loss: &QuadraticLoss<T>, penalty: &PenaltySpec<T>) -> Result<T> {
    let theta = unpenalized_solution(loss, penalty)?;
    let grad = loss.reduced_gradient(&theta);
    let mut best = T::zero();
    for unit in penalty.units()? {
        let v = match unit {
            Unit::Free(_) => continue,
            Unit::Single(r, w) => grad[r].abs() / w,
            Unit::Pair([a, b], w) => (grad[a] * grad[a] + grad[b] * grad[b]).sqrt() / w,
        };
        best = best.max(v);
    }
    Ok(best)
}
