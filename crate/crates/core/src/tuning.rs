//! Penalty selection by extended BIC, optionally after refitting on the
//! selected support.
//!
//! The score is `2·(½θᵀΓθ − gᵀθ) + |E|·log n + 4|E|·γ·log m`, where `|E|` is
//! the number of unordered off-diagonal pairs in the support. For the
//! Gaussian loss the first term is `−2 tr(K) + tr(KKW)`.
//!
//! The fit term of this criterion is an average over the sample, while the
//! complexity terms grow with `log n`. Taken literally the complexity terms
//! dominate and the empty graph is selected at any realistic sample size, so
//! [`EbicConfig`] can weight the fit term by `n` (the analogue of the
//! log-likelihood in ordinary BIC). [`ebic_score`] is always the literal
//! form.

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::layout::{Coord, ParameterVector};
use crate::linalg::{Cholesky, DEFAULT_PIVOT_TOL};
use crate::losses::QuadraticLoss;
use crate::solvers::{kkt_residual, Estimate, PenaltySpec, SolutionPath};
use crate::{Error, Float, Result};

/// Weight of the fit term in the selection criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitWeight {
    /// `2·loss`, exactly as the criterion is written.
    Literal,
    /// `2n·loss`, the likelihood-scale analogue.
    SampleSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EbicConfig {
    pub gamma: f64,
    pub refit: bool,
    pub fit_weight: FitWeight,
}

impl Default for EbicConfig {
    fn default() -> Self {
        Self { gamma: 0.5, refit: false, fit_weight: FitWeight::SampleSize }
    }
}

impl EbicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("EBIC gamma must lie in [0, 1], got {}", self.gamma)));
        }
        Ok(())
    }
}

fn complexity(edges: usize, n: usize, m: usize, gamma: f64) -> f64 {
    let e = edges as f64;
    e * (n as f64).ln() + 4.0 * e * gamma * (m as f64).ln()
}

/// Literal extended BIC of a parameter vector.
pub fn ebic_score_theta<T: Float>(theta: &ParameterVector<T>, loss: &QuadraticLoss<T>, n: usize, m: usize, gamma: f64) -> f64 {
    let fit = 2.0 * loss.quadratic_part(theta).to_f64_lossy();
    fit + complexity(theta.edge_support(T::zero()).len(), n, m, gamma)
}

/// Literal extended BIC of an estimate.
pub fn ebic_score<T: Float>(estimate: &Estimate<T>, loss: &QuadraticLoss<T>, n: usize, m: usize, gamma: f64) -> f64 {
    ebic_score_theta(&estimate.theta, loss, n, m, gamma)
}

fn weighted_score<T: Float>(theta: &ParameterVector<T>, loss: &QuadraticLoss<T>, n: usize, cfg: &EbicConfig) -> f64 {
    let m = loss.layout().m();
    let w = match cfg.fit_weight {
        FitWeight::Literal => 1.0,
        FitWeight::SampleSize => n as f64,
    };
    let fit = 2.0 * w * loss.quadratic_part(theta).to_f64_lossy();
    fit + complexity(theta.edge_support(T::zero()).len(), n, m, cfg.gamma)
}

/// Unpenalized score matching estimate restricted to `support`: solves
/// `H_SS θ_S = b_S` over the support's pair coordinates (all statistic
/// types) together with every unpenalized coordinate.
pub fn refit_restricted<T: Float>(
    loss: &QuadraticLoss<T>,
    penalty: &PenaltySpec<T>,
    support: &BTreeSet<(usize, usize)>,
) -> Result<ParameterVector<T>> {
    let layout = loss.layout();
    let mut coords: Vec<usize> = (0..layout.num_coords())
        .filter(|&r| {
            if !penalty.is_penalized(r) {
                return true;
            }
            match layout.coord(r).pair() {
                Some((j, k)) if j != k => support.contains(&(j.min(k), j.max(k))),
                _ => false,
            }
        })
        .collect();
    coords.sort_unstable();
    for &(j, k) in support {
        if j == k || j >= layout.m() || k >= layout.m() {
            return Err(Error::InvalidArgument(format!("({j}, {k}) is not an off-diagonal pair")));
        }
    }
    let b = loss.reduced_linear();
    let h = DMatrix::from_fn(coords.len(), coords.len(), |a, c| loss.hessian_entry(coords[a], coords[c]));
    let rhs: Vec<T> = coords.iter().map(|&r| b[r]).collect();
    let sol = Cholesky::new(&h, T::lit(DEFAULT_PIVOT_TOL)).map(|c| c.solve(&rhs)).map_err(|pivot| {
        let r = coords[pivot];
        let block = match layout.coord(r) {
            Coord::Pair { j, .. } | Coord::Single { j, .. } => j,
        };
        Error::Rank {
            block: Some(block),
            detail: format!("restricted system singular at coordinate {r} ({:?})", layout.coord(r)),
        }
    })?;
    let mut values = vec![T::zero(); layout.num_coords()];
    for (r, v) in coords.iter().zip(sol) {
        values[*r] = v;
    }
    ParameterVector::from_values(layout.clone(), values)
}

/// Log-spaced grid of `count` values from `lambda_max` down to
/// `ratio · lambda_max`.
pub fn lambda_grid(lambda_max: f64, count: usize, ratio: f64) -> Vec<f64> {
    if count == 0 {
        return vec![];
    }
    if count == 1 {
        return vec![lambda_max];
    }
    let (hi, lo) = (lambda_max.ln(), (ratio * lambda_max).ln());
    (0..count).map(|i| (hi + (lo - hi) * i as f64 / (count - 1) as f64).exp()).collect()
}

pub const DEFAULT_GRID_SIZE: usize = 50;
pub const DEFAULT_GRID_RATIO: f64 = 1e-3;

/// Candidates for selection.
pub enum Candidates<'a, T: Float> {
    /// Knots and segment midpoints of a path.
    Path(&'a SolutionPath<T>),
    Grid(&'a [Estimate<T>]),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EbicRow {
    pub lambda: f64,
    pub score: f64,
    pub support_size: usize,
    /// Refit requested but the restricted system was singular; the
    /// unrefitted estimate was scored.
    pub refit_failed: bool,
}

#[derive(Debug, Clone)]
pub struct EbicSelection<T: Float> {
    pub lambda: T,
    /// Selected estimate (refitted when requested and possible).
    pub estimate: Estimate<T>,
    pub score: f64,
    pub refit_failed: bool,
    pub table: Vec<EbicRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EbicReport {
    pub config: EbicConfig,
    pub selected_lambda: f64,
    pub selected_score: f64,
    pub refit_failed: bool,
    pub rows: Vec<EbicRow>,
}

impl<T: Float> EbicSelection<T> {
    pub fn report(&self, config: EbicConfig) -> EbicReport {
        EbicReport {
            config,
            selected_lambda: self.lambda.to_f64_lossy(),
            selected_score: self.score,
            refit_failed: self.refit_failed,
            rows: self.table.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["lambda", "score", "support_size", "refit_failed"])?;
        for row in &self.table {
            out.write_record([
                format!("{:e}", row.lambda),
                format!("{:e}", row.score),
                row.support_size.to_string(),
                row.refit_failed.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Picks the candidate minimizing the extended BIC; ties go to the larger λ.
pub fn select_lambda_ebic<T: Float>(
    candidates: Candidates<'_, T>,
    loss: &QuadraticLoss<T>,
    penalty: &PenaltySpec<T>,
    n: usize,
    config: &EbicConfig,
) -> Result<EbicSelection<T>> {
    config.validate()?;
    let mut pool: Vec<Estimate<T>> = match candidates {
        Candidates::Grid(list) => list.to_vec(),
        Candidates::Path(path) => {
            let mut lams: Vec<T> = path.knots().to_vec();
            lams.extend(path.segment_midpoints());
            lams.into_iter()
                .map(|lam| {
                    let theta = path.theta_at(lam)?;
                    let kkt = kkt_residual(loss, penalty, &theta, lam)?;
                    Ok(Estimate { theta, lambda: lam, kkt_residual: kkt, iterations: 0, converged: true })
                })
                .collect::<Result<_>>()?
        }
    };
    if pool.is_empty() {
        return Err(Error::InvalidArgument("no candidates for EBIC selection".into()));
    }
    // larger λ first, so strict improvement is needed to move to a smaller one
    pool.sort_by(|a, b| b.lambda.partial_cmp(&a.lambda).unwrap_or(std::cmp::Ordering::Equal));

    let mut table = Vec::with_capacity(pool.len());
    let mut best: Option<(usize, f64, Estimate<T>, bool)> = None;
    for (i, est) in pool.iter().enumerate() {
        let support = est.theta.edge_support(T::zero());
        let (scored, failed) = if config.refit {
            match refit_restricted(loss, penalty, &support) {
                Ok(theta) => {
                    let kkt = kkt_residual(loss, penalty, &theta, T::zero())?;
                    (Estimate { theta, lambda: est.lambda, kkt_residual: kkt, iterations: 0, converged: true }, false)
                }
                Err(Error::Rank { .. }) => (est.clone(), true),
                Err(e) => return Err(e),
            }
        } else {
            (est.clone(), false)
        };
        let score = weighted_score(&scored.theta, loss, n, config);
        table.push(EbicRow { lambda: est.lambda.to_f64_lossy(), score, support_size: support.len(), refit_failed: failed });
        let tol = 1e-12 * score.abs().max(1.0);
        let better = match &best {
            None => true,
            Some((_, s, _, _)) => score < *s - tol,
        };
        if better && score.is_finite() {
            best = Some((i, score, scored, failed));
        }
    }
    let (i, score, estimate, refit_failed) = match best {
        Some(b) => b,
        None => {
            let est = pool[0].clone();
            (0, f64::NAN, est, false)
        }
    };
    Ok(EbicSelection { lambda: pool[i].lambda, estimate, score, refit_failed, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{build_gaussian_loss, population_gaussian_loss};
    use crate::solvers::{lambda_max, solve_cd, solve_path, CdOptions, PathStop};

    fn est(loss: &QuadraticLoss<f64>, theta: ParameterVector<f64>, lambda: f64) -> Estimate<f64> {
        let pen = PenaltySpec::offdiag_l1(loss.layout());
        let kkt = kkt_residual(loss, &pen, &theta, lambda).unwrap();
        Estimate { theta, lambda, kkt_residual: kkt, iterations: 0, converged: true }
    }

    #[test]
    fn identity_score() {
        let m = 5;
        let w = DMatrix::<f64>::identity(m, m);
        let loss = build_gaussian_loss(&w).unwrap();
        let theta = ParameterVector::from_parts(loss.layout().clone(), &[w.clone()], &[]).unwrap();
        let e = est(&loss, theta, 1.0);
        assert!((ebic_score(&e, &loss, 100, m, 0.5) - (-2.0 * m as f64 + m as f64)).abs() < 1e-12);
    }

    #[test]
    fn additive_in_support_size() {
        let w = DMatrix::<f64>::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, 0.2, 0.1, 0.2, 1.0]);
        let loss = build_gaussian_loss(&w).unwrap();
        let layout = loss.layout().clone();
        let mut k = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 0.7, 1.0]));
        let base = ebic_score(&est(&loss, ParameterVector::from_parts(layout.clone(), &[k.clone()], &[]).unwrap(), 0.0), &loss, 50, 3, 0.0);
        let base_fit = base;
        k[(0, 1)] = 0.1;
        k[(1, 0)] = 0.1;
        let th = ParameterVector::from_parts(layout.clone(), &[k.clone()], &[]).unwrap();
        let fit = 2.0 * loss.quadratic_part(&th);
        for gamma in [0.0, 0.5, 1.0] {
            let s = ebic_score_theta(&th, &loss, 50, 3, gamma);
            let slope = (50f64).ln() + 4.0 * gamma * (3f64).ln();
            assert!((s - (fit + slope)).abs() < 1e-12);
        }
        assert!(base_fit.is_finite());
    }

    #[test]
    fn refit_full_support_is_inverse() {
        let w = DMatrix::<f64>::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, 0.2, 0.1, 0.2, 1.0]);
        let loss = build_gaussian_loss(&w).unwrap();
        let pen = PenaltySpec::offdiag_l1(loss.layout());
        let all: BTreeSet<_> = [(0, 1), (0, 2), (1, 2)].into_iter().collect();
        let k = refit_restricted(&loss, &pen, &all).unwrap().matrix(0);
        assert!((k - w.clone().try_inverse().unwrap()).abs().max() < 1e-12);
        let k = refit_restricted(&loss, &pen, &BTreeSet::new()).unwrap().matrix(0);
        for j in 0..3 {
            assert!((k[(j, j)] - 1.0 / w[(j, j)]).abs() < 1e-14);
        }
        // listing order is irrelevant
        let swapped: BTreeSet<_> = [(1, 2), (0, 1)].into_iter().collect();
        let a = refit_restricted(&loss, &pen, &swapped).unwrap();
        let b = refit_restricted(&loss, &pen, &[(0, 1), (1, 2)].into_iter().collect()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn refit_population_recovers_truth() {
        // chain precision
        let m = 5;
        let mut k = DMatrix::<f64>::identity(m, m);
        for j in 0..m - 1 {
            k[(j, j + 1)] = 0.3;
            k[(j + 1, j)] = 0.3;
        }
        let sigma = k.clone().try_inverse().unwrap();
        let loss = population_gaussian_loss(&sigma).unwrap();
        let pen = PenaltySpec::offdiag_l1(loss.layout());
        let support: BTreeSet<_> = (0..m - 1).map(|j| (j, j + 1)).collect();
        let est = refit_restricted(&loss, &pen, &support).unwrap().matrix(0);
        assert!((est - k).abs().max() < 1e-12);
    }

    #[test]
    fn refit_rank_error_names_block() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let loss = build_gaussian_loss(&w).unwrap();
        let pen = PenaltySpec::offdiag_l1(loss.layout());
        let err = refit_restricted(&loss, &pen, &[(0, 1)].into_iter().collect()).unwrap_err();
        assert!(matches!(err, Error::Rank { block: Some(_), .. }), "{err}");
    }

    #[test]
    fn selection_tie_and_single() {
        let w = DMatrix::<f64>::identity(3, 3);
        let loss = build_gaussian_loss(&w).unwrap();
        let pen = PenaltySpec::offdiag_l1(loss.layout());
        let th = ParameterVector::from_parts(loss.layout().clone(), &[w.clone()], &[]).unwrap();
        let a = est(&loss, th.clone(), 0.1);
        let b = est(&loss, th, 0.7);
        let cfg = EbicConfig::default();
        let sel = select_lambda_ebic(Candidates::Grid(&[a.clone()]), &loss, &pen, 10, &cfg).unwrap();
        assert_eq!(sel.lambda, 0.1);
        let sel = select_lambda_ebic(Candidates::Grid(&[a, b]), &loss, &pen, 10, &cfg).unwrap();
        assert_eq!(sel.lambda, 0.7);
        assert!(select_lambda_ebic(Candidates::<f64>::Grid(&[]), &loss, &pen, 10, &cfg).is_err());
        let bad = EbicConfig { gamma: 1.5, ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn grid_shape() {
        let g = lambda_grid(2.0, 50, 1e-3);
        assert_eq!(g.len(), 50);
        assert!((g[0] - 2.0).abs() < 1e-15 && (g[49] - 2e-3).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn path_and_grid_candidates_agree() {
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 1.0]);
        let loss = population_gaussian_loss(&sigma).unwrap();
        let pen = PenaltySpec::offdiag_l1(loss.layout());
        let path = solve_path(&loss, &pen, PathStop::default()).unwrap();
        let cfg = EbicConfig { refit: true, ..EbicConfig::default() };
        let sel = select_lambda_ebic(Candidates::Path(&path), &loss, &pen, 500, &cfg).unwrap();
        // the refitted chain support is the truth
        let support = sel.estimate.theta.edge_support(1e-9);
        assert_eq!(support, [(0, 1), (1, 2)].into_iter().collect());
        let lmax = lambda_max(&loss, &pen).unwrap();
        let grid: Vec<_> = lambda_grid(lmax, 30, 1e-3)
            .into_iter()
            .map(|l| solve_cd(&loss, &pen, l, &CdOptions::default(), None).unwrap())
            .collect();
        let sel2 = select_lambda_ebic(Candidates::Grid(&grid), &loss, &pen, 500, &cfg).unwrap();
        assert_eq!(sel2.estimate.theta.edge_support(1e-9), support);
        let json = serde_json::to_value(sel.report(cfg)).unwrap();
        assert!(json["rows"].as_array().unwrap().len() > 1);
    }
}
