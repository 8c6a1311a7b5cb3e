//! Population quantities behind the sparsistency theory: the expected
//! Hessian `Γ*`, the incoherence parameter α, the norm constants and the
//! model complexity, plus signed-support comparison of estimates.
//!
//! Positions refer to the full block layout of a [`Layout`]: block `j`
//! occupies indices `j·p .. (j+1)·p` with `p = Layout::block_dim`.
//!
//! Two support conventions are available. [`SupportConvention::OffDiagonal`]
//! puts only the nonzero off-diagonal entries of `Θ*` in `S`, with the
//! diagonal (and any singleton) positions in `Sᶜ`; this is the convention
//! under which the 4-node example crosses zero at `ρ = ½(√3 − 1)`.
//! [`SupportConvention::WithDiagonal`] adds every unpenalized position to
//! `S`, matching the witness construction where diagonals are never
//! thresholded.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_covariance, DataMatrix};
use crate::layout::ParameterVector;
use crate::linalg::{inf_norm, spd_inverse};
use crate::losses::{build_loss, BlockDiag, FamilyKind};
use crate::simulate::{
    normal_conditionals_parts, sample_mvn, sample_normal_conditionals_gibbs, sample_truncated_mvn_gibbs,
    GibbsSchedule, RngSeed, TruthSpec,
};
use crate::{Error, Result};

/// Default tolerance below which an estimated entry counts as zero.
pub const DEFAULT_ZERO_TOL: f64 = 1e-6;

/// The 4×4 covariance with unit diagonal, `σ₂₃ = 0`, `σ₁₄ = 2ρ²` and all
/// other off-diagonal entries `ρ`. Its precision has `κ₁₄ = 0`.
pub fn meinshausen_sigma(rho: f64) -> Result<DMatrix<f64>> {
    if !(0.0..std::f64::consts::FRAC_1_SQRT_2).contains(&rho) {
        return Err(Error::InvalidArgument(format!("rho must lie in [0, 1/sqrt(2)), got {rho}")));
    }
    let mut s = DMatrix::from_element(4, 4, rho);
    for j in 0..4 {
        s[(j, j)] = 1.0;
    }
    s[(1, 2)] = 0.0;
    s[(2, 1)] = 0.0;
    s[(0, 3)] = 2.0 * rho * rho;
    s[(3, 0)] = 2.0 * rho * rho;
    Ok(s)
}

/// Monte Carlo settings for [`population_gamma`]. The sample is drawn as
/// `batches` independent chains on separate RNG streams; standard errors are
/// batch-means standard errors, so they absorb Gibbs autocorrelation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub samples: usize,
    pub batches: usize,
    pub seed: RngSeed,
    pub schedule: GibbsSchedule,
}

impl McOptions {
    pub fn new(samples: usize, seed: RngSeed) -> Self {
        Self { samples, batches: 20, seed, schedule: GibbsSchedule::default() }
    }
}

/// Expected `Γ` and `g` under the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationGamma {
    pub gamma: BlockDiag<f64>,
    pub g: Vec<f64>,
    /// Entrywise standard errors of `gamma`; `None` when exact.
    pub std_errors: Option<BlockDiag<f64>>,
}

/// `Γ*` for the truth's family. Gaussian truths are exact (every block is
/// `Σ*`) unless `mc` is given; other families require `mc`.
pub fn population_gamma(truth: &TruthSpec, mc: Option<McOptions>) -> Result<PopulationGamma> {
    let m = truth.graph.m();
    let kind = truth.family.kind;
    let Some(mc) = mc else {
        if kind != FamilyKind::GaussianCentered {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} has no closed-form Γ*; Monte Carlo samples are required"
            )));
        }
        let sigma = truth.sigma.clone().ok_or_else(|| Error::InvalidArgument("Gaussian truth without Σ*".into()))?;
        let mut g = vec![0.0; m * m];
        for j in 0..m {
            g[j * m + j] = 1.0;
        }
        return Ok(PopulationGamma { gamma: BlockDiag::Shared { block: sigma, count: m }, g, std_errors: None });
    };
    if mc.batches < 2 || mc.samples < mc.batches {
        return Err(Error::InvalidArgument("need at least 2 batches and one sample per batch".into()));
    }
    let per_batch = mc.samples / mc.batches;
    let draw = |stream: u64| -> Result<DataMatrix<f64>> {
        let seed = mc.seed.with_stream(stream);
        match kind {
            FamilyKind::GaussianCentered => {
                let sigma = truth.sigma.as_ref().ok_or_else(|| Error::InvalidArgument("Gaussian truth without Σ*".into()))?;
                sample_mvn(sigma, per_batch, seed)
            }
            FamilyKind::TruncatedGaussianCentered => {
                let k = truth.precision().ok_or_else(|| Error::InvalidArgument("truncated truth without K*".into()))?;
                sample_truncated_mvn_gibbs(&k, per_batch, mc.schedule, seed)
            }
            FamilyKind::NormalConditionals => {
                let (b2, quad, lin) = normal_conditionals_parts(truth)?;
                sample_normal_conditionals_gibbs(&b2, &quad, &lin, per_batch, mc.schedule, seed)
            }
            FamilyKind::TruncatedGaussianLocation => {
                Err(Error::Unsupported("no sampler for the truncated family with location".into()))
            }
        }
    };
    let batches: Vec<(Vec<DMatrix<f64>>, Vec<f64>)> = (0..mc.batches as u64)
        .into_par_iter()
        .map(|b| -> Result<_> {
            let x = draw(b)?;
            if kind == FamilyKind::GaussianCentered {
                let w = sample_covariance(&x);
                let mut g = vec![0.0; m * m];
                for j in 0..m {
                    g[j * m + j] = 1.0;
                }
                return Ok((vec![w; m], g));
            }
            let loss = build_loss(truth.family, &x)?;
            Ok((loss.gamma().iter().cloned().collect(), loss.g().to_vec()))
        })
        .collect::<Result<_>>()?;
    let nb = batches.len() as f64;
    let mut mean: Vec<DMatrix<f64>> = batches[0].0.iter().map(|b| b * 0.0).collect();
    let mut g = vec![0.0; batches[0].1.len()];
    for (blocks, gb) in &batches {
        for (acc, b) in mean.iter_mut().zip(blocks) {
            *acc += b / nb;
        }
        for (acc, v) in g.iter_mut().zip(gb) {
            *acc += v / nb;
        }
    }
    let mut se: Vec<DMatrix<f64>> = mean.iter().map(|b| b * 0.0).collect();
    for (blocks, _) in &batches {
        for ((acc, b), mu) in se.iter_mut().zip(blocks).zip(&mean) {
            *acc += (b - mu).map(|d| d * d);
        }
    }
    for s in se.iter_mut() {
        *s = s.map(|v| (v / (nb - 1.0) / nb).sqrt());
    }
    Ok(PopulationGamma { gamma: BlockDiag::Distinct(mean), g, std_errors: Some(BlockDiag::Distinct(se)) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportConvention {
    OffDiagonal,
    WithDiagonal,
}

/// Full-layout positions of the support of `theta` under `convention`.
pub fn support_positions(theta: &ParameterVector<f64>, convention: SupportConvention) -> BTreeSet<usize> {
    let layout = theta.layout();
    let p = layout.block_dim();
    let mut out = BTreeSet::new();
    for (r, &v) in theta.values().iter().enumerate() {
        let off = layout.is_offdiagonal(r);
        let keep = if off { v != 0.0 } else { convention == SupportConvention::WithDiagonal };
        if keep {
            out.extend(layout.positions(r).map(|pos| pos.block * p + pos.index));
        }
    }
    out
}

/// Per-block index lists `(S_j, Sᶜ_j)` of a support.
fn split_blocks(gamma: &BlockDiag<f64>, support: &BTreeSet<usize>) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let p = gamma.block_dim();
    let total = p * gamma.num_blocks();
    if let Some(&bad) = support.iter().find(|&&s| s >= total) {
        return Err(Error::InvalidArgument(format!("support position {bad} outside Γ of dimension {total}")));
    }
    Ok((0..gamma.num_blocks())
        .map(|j| (0..p).partition(|a| support.contains(&(j * p + a))))
        .collect())
}

fn submatrix(b: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, k| b[(rows[i], cols[k])])
}

/// Inverses of the `Γ*_SS` blocks together with `|||Γ*_{SᶜS}(Γ*_SS)⁻¹|||_∞`.
fn support_inverses(gamma: &BlockDiag<f64>, support: &BTreeSet<usize>) -> Result<(Vec<DMatrix<f64>>, f64)> {
    let mut inverses = Vec::new();
    let mut norm = 0.0f64;
    for (j, (s, sc)) in split_blocks(gamma, support)?.into_iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        let b = gamma.block(j);
        let inv = spd_inverse(&submatrix(b, &s, &s), Some(j))?;
        if !sc.is_empty() {
            norm = norm.max(inf_norm(&(submatrix(b, &sc, &s) * &inv)));
        }
        inverses.push(inv);
    }
    Ok((inverses, norm))
}

/// Incoherence `α = 1 − |||Γ*_{SᶜS}(Γ*_SS)⁻¹|||_∞`, with `support` given as
/// full-layout positions.
pub fn irrepresentability_alpha(gamma: &BlockDiag<f64>, support: &BTreeSet<usize>) -> Result<f64> {
    Ok(1.0 - support_inverses(gamma, support)?.1)
}

/// `|||(Γ*_SS)⁻¹|||_∞`.
pub fn c_gamma(gamma: &BlockDiag<f64>, support: &BTreeSet<usize>) -> Result<f64> {
    let (inverses, _) = support_inverses(gamma, support)?;
    Ok(inverses.iter().map(inf_norm).fold(0.0, f64::max))
}

/// Theory constants at the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub alpha: f64,
    pub c_gamma_star: f64,
    pub c_theta_star: f64,
    /// `(4/α)·c_Γ*·max_j Σ*_jj`; present for Gaussian truths with `α > 0`.
    pub model_complexity: Option<f64>,
    /// Off-diagonal support as ordered `(statistic, j, k)` triples.
    pub support: Vec<(usize, usize, usize)>,
    pub alpha_with_diagonal: f64,
    pub c_gamma_star_with_diagonal: f64,
}

/// `|||Θ*|||_∞`, the largest absolute sum over a block of the full layout
/// (the maximum row sum of `K*` in the Gaussian case).
pub fn c_theta(theta: &ParameterVector<f64>) -> f64 {
    let p = theta.layout().block_dim();
    theta
        .full_vec()
        .chunks(p)
        .map(|blk| blk.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// α, `c_Γ*`, `c_Θ*` and (for Gaussian truths) the model complexity,
/// under both support conventions.
pub fn theory_constants(
    gamma: &BlockDiag<f64>,
    theta: &ParameterVector<f64>,
    sigma: Option<&DMatrix<f64>>,
) -> Result<TheoryReport> {
    let p = theta.layout().block_dim();
    if gamma.block_dim() != p || gamma.num_blocks() != theta.layout().m() {
        return Err(Error::InvalidArgument("Γ* does not match the layout of Θ*".into()));
    }
    let s_off = support_positions(theta, SupportConvention::OffDiagonal);
    let s_diag = support_positions(theta, SupportConvention::WithDiagonal);
    let (inv_off, norm_off) = support_inverses(gamma, &s_off)?;
    let (inv_diag, norm_diag) = support_inverses(gamma, &s_diag)?;
    let alpha = 1.0 - norm_off;
    let c_gamma_star = inv_off.iter().map(inf_norm).fold(0.0, f64::max);
    let model_complexity = match sigma {
        Some(s) if alpha > 0.0 => {
            let max_diag = s.diagonal().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Some(4.0 / alpha * c_gamma_star * max_diag)
        }
        _ => None,
    };
    let layout = theta.layout();
    let mut support = Vec::new();
    for (r, &v) in theta.values().iter().enumerate() {
        if let crate::layout::Coord::Pair { stat, j, k } = layout.coord(r) {
            if j != k && v != 0.0 {
                support.push((stat, j, k));
                support.push((stat, k, j));
            }
        }
    }
    support.sort_unstable();
    Ok(TheoryReport {
        alpha,
        c_gamma_star,
        c_theta_star: c_theta(theta),
        model_complexity,
        support,
        alpha_with_diagonal: 1.0 - norm_diag,
        c_gamma_star_with_diagonal: inv_diag.iter().map(inf_norm).fold(0.0, f64::max),
    })
}

/// Theory report of a Gaussian truth with exact `Γ* = I ⊗ Σ*`.
pub fn gaussian_theory(truth: &TruthSpec) -> Result<TheoryReport> {
    let pop = population_gamma(truth, None)?;
    theory_constants(&pop.gamma, &truth.theta, truth.sigma.as_ref())
}

/// Exact signed support recovery: the off-diagonal entries with
/// `|θ̂| > zero_tol` are exactly the nonzero entries of the truth, with
/// matching signs.
pub fn signed_support_match(estimate: &ParameterVector<f64>, truth: &ParameterVector<f64>, zero_tol: f64) -> bool {
    let layout = truth.layout();
    if estimate.layout().as_ref() != layout.as_ref() {
        return false;
    }
    estimate.values().iter().zip(truth.values()).enumerate().all(|(r, (&e, &t))| {
        if !layout.is_offdiagonal(r) {
            return true;
        }
        if t == 0.0 {
            e.abs() <= zero_tol
        } else {
            e.abs() > zero_tol && e.signum() == t.signum()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::Layout;
    use crate::simulate::{chain_truth, constant_precision, precision_block_uniform, Graph};
    use std::sync::Arc;

    fn meinshausen_truth(rho: f64) -> TruthSpec {
        let sigma = meinshausen_sigma(rho).unwrap();
        let mut k = spd_inverse(&sigma, None).unwrap();
        k[(0, 3)] = 0.0;
        k[(3, 0)] = 0.0;
        let graph = Graph::from_pattern(&k, 0.0);
        let theta = ParameterVector::from_parts(Arc::new(Layout::symmetric(4)), &[k], &[]).unwrap();
        TruthSpec { graph, family: crate::losses::FamilySpec::gaussian(), theta, sigma: Some(sigma) }
    }

    fn alpha_at(rho: f64) -> f64 {
        gaussian_theory(&meinshausen_truth(rho)).unwrap().alpha
    }

    #[test]
    fn meinshausen_structure() {
        assert_eq!(meinshausen_sigma(0.0).unwrap(), DMatrix::identity(4, 4));
        let k = spd_inverse(&meinshausen_sigma(0.3).unwrap(), None).unwrap();
        assert!(k[(0, 3)].abs() < 1e-10);
        let g = Graph::from_pattern(&k, 1e-10);
        assert_eq!(g.edges().iter().copied().collect::<Vec<_>>(), vec![(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]);
        assert!(meinshausen_sigma(0.75).is_err());
        assert!(meinshausen_sigma(-0.1).is_err());
    }

    #[test]
    fn meinshausen_threshold() {
        let (mut lo, mut hi) = (0.2, 0.5);
        assert!(alpha_at(lo) > 0.0 && alpha_at(hi) < 0.0);
        while hi - lo > 1e-6 {
            let mid = 0.5 * (lo + hi);
            if alpha_at(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - 0.5 * (3f64.sqrt() - 1.0)).abs() < 1e-5, "{lo}");
    }

    #[test]
    fn meinshausen_alpha_decreasing() {
        let grid: Vec<f64> = (1..=50).map(|i| 0.7 * i as f64 / 51.0).collect();
        let alphas: Vec<f64> = grid.iter().map(|&r| alpha_at(r)).collect();
        assert!(alphas.windows(2).all(|w| w[1] < w[0]), "{alphas:?}");
        // frozen regression value at ρ = 0.2
        let a = alpha_at(0.2);
        assert!((a - 0.52).abs() < 1e-12, "{a}");
        // it also matches 1 − 2ρ(1 + ρ), whose root is ½(√3 − 1)
        for &r in &grid {
            assert!((alpha_at(r) - (1.0 - 2.0 * r * (1.0 + r))).abs() < 1e-10);
        }
    }

    #[test]
    fn diagonal_gamma_alpha_one() {
        let gamma = BlockDiag::Shared { block: DMatrix::from_diagonal_element(3, 3, 2.0), count: 3 };
        let support: BTreeSet<usize> = [1, 3].into_iter().collect();
        assert_eq!(irrepresentability_alpha(&gamma, &support).unwrap(), 1.0);
        let id = BlockDiag::Shared { block: DMatrix::<f64>::identity(3, 3), count: 3 };
        assert_eq!(c_gamma(&id, &support).unwrap(), 1.0);
    }

    #[test]
    fn singular_support_block() {
        let gamma = BlockDiag::Shared { block: DMatrix::from_element(2, 2, 1.0), count: 2 };
        let support: BTreeSet<usize> = [0, 1].into_iter().collect();
        assert!(matches!(irrepresentability_alpha(&gamma, &support), Err(Error::Rank { block: Some(0), .. })));
    }

    #[test]
    fn identity_theta_constant() {
        let t = constant_precision(&Graph::empty(3), 0.0).unwrap();
        let r = gaussian_theory(&t).unwrap();
        assert_eq!(r.c_theta_star, 1.0);
        assert_eq!(r.alpha_with_diagonal, 1.0);
        assert!(r.support.is_empty());
    }

    #[test]
    fn gaussian_stationarity() {
        let t = chain_truth(8).unwrap();
        let pop = population_gamma(&t, None).unwrap();
        let sigma = t.sigma.as_ref().unwrap();
        let k = t.precision().unwrap();
        let r = sigma * k - DMatrix::identity(8, 8);
        assert!(r.abs().max() < 1e-10);
        // block j of Γ* vec(K*) is Σ* K*[:, j]
        let full = t.theta.full_vec();
        for j in 0..8 {
            let col = nalgebra::DVector::from_row_slice(&full[j * 8..(j + 1) * 8]);
            let prod = pop.gamma.block(j) * col;
            for a in 0..8 {
                assert!((prod[a] - pop.g[j * 8 + a]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn chain_complexity_constant_in_m() {
        let a = gaussian_theory(&chain_truth(64).unwrap()).unwrap();
        let b = gaussian_theory(&chain_truth(100).unwrap()).unwrap();
        let (ca, cb) = (a.model_complexity.unwrap(), b.model_complexity.unwrap());
        assert!((ca - cb).abs() / ca < 0.01, "{ca} {cb}");
        assert!((a.alpha - 0.4).abs() < 1e-6, "{}", a.alpha);
    }

    #[test]
    fn relabeling_invariance() {
        let g = Graph::new(5, [(0, 1), (1, 2), (2, 3), (1, 4)]).unwrap();
        let t = constant_precision(&g, 0.3).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let pg = Graph::new(5, g.edges().iter().map(|&(a, b)| (perm[a], perm[b]))).unwrap();
        let pt = constant_precision(&pg, 0.3).unwrap();
        let (r1, r2) = (gaussian_theory(&t).unwrap(), gaussian_theory(&pt).unwrap());
        assert!((r1.alpha - r2.alpha).abs() < 1e-12);
        assert!((r1.c_gamma_star - r2.c_gamma_star).abs() < 1e-12);
        assert!((r1.alpha_with_diagonal - r2.alpha_with_diagonal).abs() < 1e-12);
        assert_eq!(r1.c_theta_star, r2.c_theta_star);
    }

    #[test]
    fn mc_gaussian_matches_exact() {
        let t = chain_truth(4).unwrap();
        let exact = population_gamma(&t, None).unwrap();
        let mc = population_gamma(&t, Some(McOptions::new(20_000, RngSeed::new(3)))).unwrap();
        let se = mc.std_errors.unwrap();
        for j in 0..4 {
            let d = mc.gamma.block(j) - exact.gamma.block(j);
            for (dv, sv) in d.iter().zip(se.block(j).iter()) {
                assert!(dv.abs() <= 5.0 * sv + 1e-12, "{dv} {sv}");
            }
        }
    }

    #[test]
    fn mc_truncated_fourth_moment() {
        let t = constant_precision(&Graph::empty(1), 0.0).unwrap();
        let t = TruthSpec { family: crate::losses::FamilySpec::truncated_gaussian(), ..t };
        assert!(population_gamma(&t, None).is_err());
        let pop = population_gamma(&t, Some(McOptions::new(40_000, RngSeed::new(4)))).unwrap();
        let est = pop.gamma.block(0)[(0, 0)];
        let se = pop.std_errors.unwrap().block(0)[(0, 0)];
        assert!((est - 3.0).abs() < 3.0 * se, "{est} ± {se}");
    }

    #[test]
    fn mc_truncated_theory_runs() {
        let t = precision_block_uniform(1, 4, RngSeed::new(1)).unwrap();
        let pop = population_gamma(&t, Some(McOptions::new(4000, RngSeed::new(2)))).unwrap();
        let r = theory_constants(&pop.gamma, &t.theta, None).unwrap();
        assert!(r.model_complexity.is_none());
        assert!(r.alpha <= 1.0);
    }

    #[test]
    fn signed_support() {
        let t = chain_truth(4).unwrap().theta;
        assert!(signed_support_match(&t, &t, DEFAULT_ZERO_TOL));
        let mut flipped = t.clone();
        let r = t.layout().pair_index(0, 0, 1).unwrap();
        flipped.values_mut()[r] = -0.3;
        assert!(!signed_support_match(&flipped, &t, DEFAULT_ZERO_TOL));
        let mut extra = t.clone();
        let r = t.layout().pair_index(0, 0, 3).unwrap();
        extra.values_mut()[r] = 2.0 * DEFAULT_ZERO_TOL;
        assert!(!signed_support_match(&extra, &t, DEFAULT_ZERO_TOL));
        let mut small = t.clone();
        small.values_mut()[r] = 0.5 * DEFAULT_ZERO_TOL;
        assert!(signed_support_match(&small, &t, DEFAULT_ZERO_TOL));
    }
}
