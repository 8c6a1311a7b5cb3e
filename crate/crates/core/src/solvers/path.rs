//! Piecewise-linear homotopy for the ℓ1-penalized quadratic.
//!
//! Between knots the active set `A` (unpenalized coordinates plus nonzero
//! penalized ones with signs `s`) is fixed and the stationarity conditions
//! `H_AA θ_A − b_A + λ·w∘s = 0` give `θ_A(λ) = α − λβ` with
//! `α = H_AA⁻¹ b_A`, `β = H_AA⁻¹ (w∘s)`. The inactive gradients are affine
//! in λ as well, so the next knot is the largest λ below the current one at
//! which an inactive gradient reaches `±λw` (entry) or an active coordinate
//! reaches zero (drop). `H_AA⁻¹` is maintained by bordering updates and
//! refreshed from a fresh factorization periodically.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::layout::{Coord, Layout, ParameterVector};
use crate::linalg::Cholesky;
use crate::losses::QuadraticLoss;
use crate::{Error, Float, Result};

use super::{kkt_from_gradient, unpenalized_solution, PenaltyMode, PenaltySpec};

/// Stopping rule for [`solve_path`].
#[derive(Debug, Clone, Copy)]
pub struct PathStop<T> {
    pub lambda_min: T,
    /// Stop once this many penalized coordinates are active.
    pub max_active: Option<usize>,
}

impl<T: Float> Default for PathStop<T> {
    fn default() -> Self {
        Self { lambda_min: T::zero(), max_active: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// Reached λ = 0, where the gradient of the smooth part vanishes on the
    /// active set.
    GradientZero,
    /// The active-set curvature block became numerically singular.
    RankLimit,
    UserLambdaMin,
    MaxActive,
    /// Too many consecutive events without progress in λ.
    IterationLimit,
}

/// Sparse vector of reduced coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
struct Sparse<T> {
    idx: Vec<usize>,
    val: Vec<T>,
}

impl<T: Float> Sparse<T> {
    fn from_dense(v: &[T]) -> Self {
        let mut out = Sparse { idx: vec![], val: vec![] };
        for (i, x) in v.iter().enumerate() {
            if *x != T::zero() {
                out.idx.push(i);
                out.val.push(*x);
            }
        }
        out
    }

    fn add_into(&self, dense: &mut [T], scale: T) {
        for (i, v) in self.idx.iter().zip(&self.val) {
            dense[*i] += scale * *v;
        }
    }
}

/// Exact regularization path: knots in increasing order, θ at each knot,
/// slopes on each segment and the penalized active set on each segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPath<T: Float> {
    layout: Arc<Layout>,
    knots: Vec<T>,
    coefficients: Vec<Sparse<T>>,
    slopes: Vec<Sparse<T>>,
    active_sets: Vec<Vec<usize>>,
    kkt: Vec<T>,
    termination: Termination,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathJson {
    pub m: usize,
    pub coordinates: Vec<String>,
    pub knots: Vec<f64>,
    /// Sparse `(coordinate, value)` lists, one per knot.
    pub coefficients: Vec<Vec<(usize, f64)>>,
    /// Sparse slopes, one per segment `[knots[i], knots[i+1]]`.
    pub slopes: Vec<Vec<(usize, f64)>>,
    /// Off-diagonal support per segment as `(j, k)` pairs.
    pub active_sets: Vec<Vec<(usize, usize)>>,
    pub kkt_residual: Vec<f64>,
    pub termination: Termination,
}

impl<T: Float> SolutionPath<T> {
    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    /// Knots `λ_0 < … < λ_R`.
    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn num_segments(&self) -> usize {
        self.slopes.len()
    }

    pub fn termination(&self) -> Termination {
        self.termination
    }

    pub fn kkt_residuals(&self) -> &[T] {
        &self.kkt
    }

    pub fn lambda_max(&self) -> T {
        *self.knots.last().expect("path has at least one knot")
    }

    pub fn lambda_min(&self) -> T {
        self.knots[0]
    }

    /// θ at knot `i`.
    pub fn knot_theta(&self, i: usize) -> ParameterVector<T> {
        let mut v = vec![T::zero(); self.layout.num_coords()];
        self.coefficients[i].add_into(&mut v, T::one());
        ParameterVector::from_values(self.layout.clone(), v).expect("path coefficients match layout")
    }

    /// Slope of segment `i` as a dense vector.
    pub fn slope(&self, i: usize) -> Vec<T> {
        let mut v = vec![T::zero(); self.layout.num_coords()];
        self.slopes[i].add_into(&mut v, T::one());
        v
    }

    /// Penalized coordinates active on segment `i`.
    pub fn active_set(&self, i: usize) -> &[usize] {
        &self.active_sets[i]
    }

    /// Off-diagonal edges active on segment `i`.
    pub fn segment_edges(&self, i: usize) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self.active_sets[i]
            .iter()
            .filter(|&&r| self.layout.is_offdiagonal(r))
            .filter_map(|&r| self.layout.coord(r).pair())
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn segment_midpoints(&self) -> Vec<T> {
        let half = T::lit(0.5);
        self.knots.windows(2).map(|w| (w[0] + w[1]) * half).collect()
    }

    /// Linear interpolation; constant above the largest knot. Fails below
    /// the smallest knot.
    pub fn theta_at(&self, lambda: T) -> Result<ParameterVector<T>> {
        if lambda < self.knots[0] || lambda.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "lambda {lambda} below the path's smallest knot {}",
                self.knots[0]
            )));
        }
        let last = self.knots.len() - 1;
        if lambda >= self.knots[last] {
            return Ok(self.knot_theta(last));
        }
        let i = self.knots.partition_point(|k| *k <= lambda) - 1;
        let mut v = vec![T::zero(); self.layout.num_coords()];
        self.coefficients[i].add_into(&mut v, T::one());
        self.slopes[i].add_into(&mut v, lambda - self.knots[i]);
        ParameterVector::from_values(self.layout.clone(), v)
    }

    /// Off-diagonal ℓ1 norm `t(λ) = Σ_{j≠k} |θ_jk|` at knot `i`.
    pub fn t_at_knot(&self, i: usize) -> T {
        self.knot_theta(i).offdiag_l1()
    }

    pub fn to_json(&self) -> PathJson {
        let sparse = |s: &Sparse<T>| s.idx.iter().zip(&s.val).map(|(i, v)| (*i, v.to_f64_lossy())).collect();
        PathJson {
            m: self.layout.m(),
            coordinates: (0..self.layout.num_coords()).map(|r| coord_name(&self.layout, r)).collect(),
            knots: self.knots.iter().map(|k| k.to_f64_lossy()).collect(),
            coefficients: self.coefficients.iter().map(sparse).collect(),
            slopes: self.slopes.iter().map(sparse).collect(),
            active_sets: (0..self.num_segments()).map(|i| self.segment_edges(i)).collect(),
            kkt_residual: self.kkt.iter().map(|k| k.to_f64_lossy()).collect(),
            termination: self.termination,
        }
    }

    /// Long-format CSV `lambda,t,coordinate,value` with one row per knot and
    /// coordinate that is nonzero somewhere on the path.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut used = vec![false; self.layout.num_coords()];
        for c in &self.coefficients {
            for i in &c.idx {
                used[*i] = true;
            }
        }
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["lambda", "t", "coordinate", "value"])?;
        for (i, knot) in self.knots.iter().enumerate() {
            let theta = self.knot_theta(i);
            let t = theta.offdiag_l1();
            for (r, _) in used.iter().enumerate().filter(|(_, u)| **u) {
                out.write_record([
                    format!("{:e}", knot.to_f64_lossy()),
                    format!("{:e}", t.to_f64_lossy()),
                    coord_name(&self.layout, r),
                    format!("{:e}", theta.values()[r].to_f64_lossy()),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Human-readable coordinate id such as `K[0,3]` or `b[2]`.
pub fn coord_name(layout: &Layout, r: usize) -> String {
    match layout.coord(r) {
        Coord::Pair { stat, j, k } => format!("{}[{j},{k}]", layout.pair_stats()[stat].name),
        Coord::Single { stat, j } => format!("{}[{j}]", layout.single_stats()[stat]),
    }
}

/// Rejects losses with an obviously indefinite block: negative diagonal
/// entries or a failed factorization of the slightly shifted block.
fn check_psd<T: Float>(loss: &QuadraticLoss<T>) -> Result<()> {
    let m = loss.layout().m();
    let distinct = match loss.gamma() {
        crate::losses::BlockDiag::Shared { .. } => 1,
        crate::losses::BlockDiag::Distinct(_) => m,
    };
    for b in 0..distinct {
        let blk = loss.block(b);
        let p = blk.nrows();
        let scale = (0..p).map(|i| blk[(i, i)]).fold(T::zero(), |a, v| a.max(v.abs()));
        if (0..p).any(|i| blk[(i, i)] < T::zero()) {
            return Err(Error::InvalidArgument(format!("block {b} has a negative diagonal entry")));
        }
        let shift = T::lit(1e-9) * scale.max(T::min_positive_value());
        let mut shifted = blk.clone();
        for i in 0..p {
            shifted[(i, i)] += shift;
        }
        if Cholesky::new(&shifted, T::zero()).is_err() && scale > T::zero() {
            return Err(Error::InvalidArgument(format!("block {b} is not positive semidefinite")));
        }
    }
    Ok(())
}

/// Active set with a maintained inverse of its curvature block.
struct ActiveSet<'a, T: Float> {
    loss: &'a QuadraticLoss<T>,
    coords: Vec<usize>,
    /// Sign for penalized coordinates, zero for unpenalized ones.
    signs: Vec<T>,
    inv: DMatrix<T>,
    updates: usize,
}

const REFRESH_EVERY: usize = 32;

impl<'a, T: Float> ActiveSet<'a, T> {
    fn new(loss: &'a QuadraticLoss<T>) -> Self {
        Self { loss, coords: vec![], signs: vec![], inv: DMatrix::zeros(0, 0), updates: 0 }
    }

    fn len(&self) -> usize {
        self.coords.len()
    }

    /// Bordering update; `false` when the new Schur complement is numerically
    /// zero.
    fn add(&mut self, r: usize, sign: T) -> bool {
        let k = self.len();
        let hrr = self.loss.hessian_entry(r, r);
        if !(hrr > T::zero()) {
            return false;
        }
        let u: Vec<T> = self.coords.iter().map(|&a| self.loss.hessian_entry(a, r)).collect();
        let mu: Vec<T> = (0..k).map(|i| (0..k).map(|j| self.inv[(i, j)] * u[j]).sum()).collect();
        let schur = hrr - u.iter().zip(&mu).map(|(a, b)| *a * *b).sum::<T>();
        if !(schur > T::lit(1e-10) * hrr) {
            return false;
        }
        let mut next = DMatrix::<T>::zeros(k + 1, k + 1);
        for i in 0..k {
            for j in 0..k {
                next[(i, j)] = self.inv[(i, j)] + mu[i] * mu[j] / schur;
            }
            next[(i, k)] = -mu[i] / schur;
            next[(k, i)] = -mu[i] / schur;
        }
        next[(k, k)] = T::one() / schur;
        self.inv = next;
        self.coords.push(r);
        self.signs.push(sign);
        self.updates += 1;
        true
    }

    fn remove(&mut self, r: usize) {
        let Some(i) = self.coords.iter().position(|&c| c == r) else { return };
        let k = self.len();
        let d = self.inv[(i, i)];
        let keep: Vec<usize> = (0..k).filter(|&j| j != i).collect();
        let next = DMatrix::from_fn(k - 1, k - 1, |a, b| {
            let (a, b) = (keep[a], keep[b]);
            self.inv[(a, b)] - self.inv[(a, i)] * self.inv[(i, b)] / d
        });
        self.inv = next;
        self.coords.remove(i);
        self.signs.remove(i);
        self.updates += 1;
    }

    /// Recomputes the inverse from scratch; `false` if singular.
    fn refresh(&mut self) -> bool {
        let k = self.len();
        let h = DMatrix::from_fn(k, k, |a, b| self.loss.hessian_entry(self.coords[a], self.coords[b]));
        match Cholesky::new(&h, T::lit(1e-13)) {
            Ok(c) => {
                self.inv = c.inverse();
                self.updates = 0;
                true
            }
            Err(_) => false,
        }
    }

    fn apply_inv(&self, rhs: &[T]) -> Vec<T> {
        let k = self.len();
        (0..k).map(|i| (0..k).map(|j| self.inv[(i, j)] * rhs[j]).sum()).collect()
    }

    fn scatter(&self, vals: &[T], n: usize) -> Vec<T> {
        let mut out = vec![T::zero(); n];
        for (r, v) in self.coords.iter().zip(vals) {
            out[*r] = *v;
        }
        out
    }

    /// Solves `H_AA x = rhs` with one step of iterative refinement and returns
    /// the scattered solution together with the full product `H x`.
    fn solve(&self, rhs: &[T], n: usize) -> (Vec<T>, Vec<T>) {
        let x = self.apply_inv(rhs);
        let full = self.scatter(&x, n);
        let hx = self.loss.reduced_hessian_mul(&full);
        let resid: Vec<T> = self.coords.iter().zip(rhs).map(|(r, b)| *b - hx[*r]).collect();
        let dx = self.apply_inv(&resid);
        let x: Vec<T> = x.iter().zip(&dx).map(|(a, b)| *a + *b).collect();
        let full = self.scatter(&x, n);
        let hx = self.loss.reduced_hessian_mul(&full);
        (full, hx)
    }
}

enum Event {
    Enter(usize, i8),
    Drop(usize),
}

/// Exact ℓ1 regularization path from `λ_max` down to `stop.lambda_min`.
pub fn solve_path<T: Float>(
    loss: &QuadraticLoss<T>,
    penalty: &PenaltySpec<T>,
    stop: PathStop<T>,
) -> Result<SolutionPath<T>> {
    penalty.check_layout(loss.layout())?;
    if penalty.mode() == PenaltyMode::Group {
        return Err(Error::Unsupported("group-penalized paths are not piecewise linear".into()));
    }
    if !(stop.lambda_min >= T::zero()) {
        return Err(Error::InvalidArgument(format!("lambda_min must be nonnegative, got {}", stop.lambda_min)));
    }
    check_psd(loss)?;
    let layout = loss.layout().clone();
    let n = layout.num_coords();
    let units = penalty.units()?;
    let b = loss.reduced_linear();
    let w: Vec<T> = (0..n).map(|r| penalty.multiplicity(r)).collect();

    let theta0 = unpenalized_solution(loss, penalty)?;
    let grad0 = loss.reduced_gradient(&theta0);
    let penalized: Vec<usize> = (0..n).filter(|&r| penalty.is_penalized(r)).collect();
    let lam_max = penalized.iter().map(|&r| grad0[r].abs() / w[r]).fold(T::zero(), |a, v| a.max(v));
    let scale = lam_max.max(T::min_positive_value());
    let tie = T::lit(1e-12) * scale;

    let mut active = ActiveSet::new(loss);
    for r in penalty.unpenalized() {
        if !active.add(r, T::zero()) {
            return Err(Error::Rank { block: None, detail: "unpenalized subproblem is singular".into() });
        }
    }
    let mut is_active = vec![false; n];
    for &r in &active.coords {
        is_active[r] = true;
    }

    let mut knots_desc = vec![lam_max];
    let mut thetas = vec![Sparse::from_dense(&theta0)];
    let mut seg_slopes: Vec<Sparse<T>> = vec![];
    let mut seg_active: Vec<Vec<usize>> = vec![];
    let mut kkt = vec![kkt_from_gradient(&units, &theta0, &grad0, lam_max)];

    let finish_at_min = |lm: T| if lm == T::zero() { Termination::GradientZero } else { Termination::UserLambdaMin };
    let termination;
    if lam_max <= stop.lambda_min {
        termination = finish_at_min(stop.lambda_min);
        return Ok(assemble(layout, knots_desc, thetas, seg_slopes, seg_active, kkt, termination));
    }

    // Entries at λ_max.
    let mut pending: Vec<(usize, T)> = penalized
        .iter()
        .filter(|&&r| grad0[r].abs() / w[r] >= lam_max - tie && grad0[r] != T::zero())
        .map(|&r| (r, -grad0[r].signum()))
        .collect();
    let mut fresh_in: Vec<usize> = vec![];
    let mut fresh_out: Vec<usize> = vec![];
    let mut lam = lam_max;
    let mut stalled = 0usize;
    let stall_limit = 4 * n + 100;

    loop {
        fresh_in.clear();
        let mut rank_hit = false;
        for (r, s) in pending.drain(..) {
            if !active.add(r, s) {
                rank_hit = true;
                break;
            }
            is_active[r] = true;
            fresh_in.push(r);
        }
        if active.updates >= REFRESH_EVERY && !active.refresh() {
            rank_hit = true;
        }
        if rank_hit {
            termination = Termination::RankLimit;
            break;
        }
        let n_pen_active = active.signs.iter().filter(|s| **s != T::zero()).count();
        if let Some(cap) = stop.max_active {
            if n_pen_active >= cap {
                termination = Termination::MaxActive;
                break;
            }
        }

        let rhs_a: Vec<T> = active.coords.iter().map(|&r| b[r]).collect();
        let rhs_b: Vec<T> = active.coords.iter().zip(&active.signs).map(|(&r, s)| w[r] * *s).collect();
        let (alpha, h_alpha) = active.solve(&rhs_a, n);
        let (beta, h_beta) = active.solve(&rhs_b, n);

        // Candidate events strictly below λ, or overdue ones clamped to λ.
        let mut best = stop.lambda_min;
        let mut events: Vec<(T, Event)> = vec![];
        for &r in &penalized {
            if is_active[r] {
                let i = active.coords.iter().position(|&c| c == r).unwrap();
                let s = active.signs[i];
                if s * beta[r] < T::zero() {
                    let at = (alpha[r] / beta[r]).min(lam);
                    // a coordinate that just entered may not leave at the same knot
                    let immediate = fresh_in.contains(&r) && at >= lam - tie;
                    if at >= T::zero() && !immediate {
                        events.push((at, Event::Drop(r)));
                    }
                }
            } else {
                let p = h_alpha[r] - b[r];
                let q = h_beta[r];
                // +boundary: p − λq = λw; −boundary: p − λq = −λw
                for (denom, sign) in [(q + w[r], -1i8), (q - w[r], 1i8)] {
                    let outward = if sign < 0 { denom > T::zero() } else { denom < T::zero() };
                    if outward {
                        let at = (p / denom).min(lam);
                        // nor may a coordinate that just left return at the same knot
                        let immediate = fresh_out.contains(&r) && at >= lam - tie;
                        if at >= T::zero() && !immediate {
                            events.push((at, Event::Enter(r, sign)));
                        }
                    }
                }
            }
        }
        for (at, _) in &events {
            best = best.max(*at);
        }
        let next = best;

        if next < lam - tie {
            let slope: Vec<T> = beta.iter().map(|v| -*v).collect();
            let theta_next: Vec<T> = alpha.iter().zip(&beta).map(|(a, bb)| *a - next * *bb).collect();
            seg_slopes.push(Sparse::from_dense(&slope));
            let mut act: Vec<usize> =
                active.coords.iter().zip(&active.signs).filter(|(_, s)| **s != T::zero()).map(|(r, _)| *r).collect();
            act.sort_unstable();
            seg_active.push(act);
            let mut cleaned = theta_next.clone();
            for (r, v) in cleaned.iter_mut().enumerate() {
                if !is_active[r] {
                    *v = T::zero();
                }
            }
            let grad = loss.reduced_gradient(&cleaned);
            kkt.push(kkt_from_gradient(&units, &cleaned, &grad, next));
            knots_desc.push(next);
            thetas.push(Sparse::from_dense(&cleaned));
            lam = next;
            fresh_out.clear();
            stalled = 0;
        } else {
            stalled += 1;
            if stalled > stall_limit {
                termination = Termination::IterationLimit;
                break;
            }
        }

        if lam <= stop.lambda_min {
            termination = finish_at_min(stop.lambda_min);
            break;
        }

        // Events at this knot: drops first, then entries.
        let at_knot = |at: &T| *at >= lam - tie;
        let mut drops = vec![];
        for (at, ev) in &events {
            if let Event::Drop(r) = ev {
                if at_knot(at) {
                    drops.push(*r);
                }
            }
        }
        let dropped = !drops.is_empty();
        for r in drops {
            active.remove(r);
            is_active[r] = false;
            fresh_out.push(r);
            if let Some(last) = thetas.last_mut() {
                if let Some(pos) = last.idx.iter().position(|&i| i == r) {
                    last.val[pos] = T::zero();
                }
            }
        }
        if dropped {
            // certify the knot with the dropped coordinates at exactly zero
            let mut dense = vec![T::zero(); n];
            let last = thetas.last().expect("at least one knot");
            last.add_into(&mut dense, T::one());
            let grad = loss.reduced_gradient(&dense);
            *kkt.last_mut().expect("one residual per knot") = kkt_from_gradient(&units, &dense, &grad, lam);
        }
        for (at, ev) in &events {
            if let Event::Enter(r, sign) = ev {
                if at_knot(at) && !is_active[*r] && !pending.iter().any(|(c, _)| c == r) {
                    pending.push((*r, T::lit(*sign as f64)));
                }
            }
        }
        if pending.is_empty() && !events.iter().any(|(at, _)| at_knot(at)) {
            // No event at this knot and λ did not reach lambda_min: only
            // possible through round-off; stop rather than loop.
            termination = Termination::IterationLimit;
            break;
        }
    }

    Ok(assemble(layout, knots_desc, thetas, seg_slopes, seg_active, kkt, termination))
}

fn assemble<T: Float>(
    layout: Arc<Layout>,
    mut knots_desc: Vec<T>,
    mut thetas: Vec<Sparse<T>>,
    mut slopes: Vec<Sparse<T>>,
    mut active: Vec<Vec<usize>>,
    mut kkt: Vec<T>,
    termination: Termination,
) -> SolutionPath<T> {
    for s in &mut thetas {
        let keep: Vec<bool> = s.val.iter().map(|v| *v != T::zero()).collect();
        let mut k = keep.iter();
        s.idx.retain(|_| *k.next().unwrap());
        s.val.retain(|v| *v != T::zero());
    }
    knots_desc.reverse();
    thetas.reverse();
    slopes.reverse();
    active.reverse();
    kkt.reverse();
    SolutionPath { layout, knots: knots_desc, coefficients: thetas, slopes, active_sets: active, kkt, termination }
}
