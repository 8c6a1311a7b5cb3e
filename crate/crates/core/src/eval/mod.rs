//! Scoring estimated graphs against the truth and the recovery experiments.

mod experiment;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{sample_covariance, DataMatrix};
use crate::losses::{build_gaussian_loss, build_nonneg_gaussian_loss, build_normal_conditionals_loss};
use crate::simulate::Graph;
use crate::solvers::{lambda_max, solve_group_cd, solve_path, CdOptions, PathStop, PenaltySpec, SolutionPath};
use crate::tuning::lambda_grid;
use crate::{Error, Result};

pub use experiment::{
    calibrate_lambda_constant, recovery_probability, Design, ExperimentConfig, GridPoint, RecoveryRow, RecoveryTable,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub lambda: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points ordered by decreasing λ and the trapezoidal area under them.
///
/// The area starts at `(0, 0)` and, past the last point, continues
/// horizontally at the last true-positive rate to `FPR = 1`; a path that
/// stops early is therefore not credited with edges it never selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["lambda", "fpr", "tpr"])?;
        for p in &self.points {
            w.write_record([p.lambda.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// ROC curve of a sequence of supports, given in order of decreasing λ.
pub fn roc_from_supports(supports: &[(f64, BTreeSet<(usize, usize)>)], truth: &Graph) -> Result<RocCurve> {
    let m = truth.m();
    let positives = truth.num_edges();
    let negatives = truth.num_non_edges();
    if positives == 0 {
        return Err(Error::InvalidArgument(
            "true graph has no edges, so the true-positive rate is undefined; score false positives only".into(),
        ));
    }
    if negatives == 0 {
        return Err(Error::InvalidArgument("true graph is complete, so the false-positive rate is undefined".into()));
    }
    let mut points = Vec::with_capacity(supports.len());
    for (lambda, support) in supports {
        let mut tp = 0usize;
        for &(j, k) in support {
            if j >= k || k >= m {
                return Err(Error::InvalidArgument(format!("edge ({j}, {k}) is not a pair j < k < {m}")));
            }
            if truth.has_edge(j, k) {
                tp += 1;
            }
        }
        let fp = support.len() - tp;
        points.push(RocPoint { lambda: *lambda, fpr: fp as f64 / negatives as f64, tpr: tp as f64 / positives as f64 });
    }
    let mut sorted: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("rates are finite"));
    let mut auc = 0.0;
    let (mut x0, mut y0) = (0.0, 0.0);
    for (x, y) in sorted {
        auc += (x - x0) * (y + y0) * 0.5;
        (x0, y0) = (x, y);
    }
    auc += (1.0 - x0) * y0;
    Ok(RocCurve { points, auc })
}

/// One ROC point per path segment, using the segment's off-diagonal
/// support.
pub fn roc_points(path: &SolutionPath<f64>, truth: &Graph) -> Result<RocCurve> {
    if path.layout().m() != truth.m() {
        return Err(Error::InvalidArgument(format!(
            "path has {} variables, truth graph has {}",
            path.layout().m(),
            truth.m()
        )));
    }
    let mids = path.segment_midpoints();
    let supports: Vec<(f64, BTreeSet<(usize, usize)>)> = (0..path.num_segments())
        .rev()
        .map(|i| (mids[i], path.segment_edges(i).into_iter().collect()))
        .collect();
    if supports.is_empty() {
        // a single knot: nothing is ever selected
        return roc_from_supports(&[(path.lambda_max(), BTreeSet::new())], truth);
    }
    roc_from_supports(&supports, truth)
}

/// Number of nodes of each degree.
pub fn degree_distribution(graph: &Graph) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    for d in graph.degrees() {
        *out.entry(d).or_insert(0) += 1;
    }
    out
}

/// A success curve: `(x, success)` pairs.
pub type Curve = Vec<(f64, f64)>;

fn interpolate(curve: &[(f64, f64)], x: f64) -> f64 {
    let i = curve.partition_point(|p| p.0 < x);
    if i == 0 {
        return curve[0].1;
    }
    if i == curve.len() {
        return curve[curve.len() - 1].1;
    }
    let (x0, y0) = curve[i - 1];
    let (x1, y1) = curve[i];
    if x1 == x0 {
        return y1;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Largest vertical distance between any two piecewise-linear curves over
/// the range covered by all of them. Each curve needs at least two points.
pub fn curve_alignment(curves: &[Curve]) -> Result<f64> {
    if curves.len() < 2 {
        return Err(Error::InvalidArgument("need at least two curves".into()));
    }
    let mut sorted = Vec::with_capacity(curves.len());
    for c in curves {
        if c.len() < 2 {
            return Err(Error::InvalidArgument("each curve needs at least two grid points".into()));
        }
        let mut c = c.clone();
        c.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite abscissae"));
        sorted.push(c);
    }
    let lo = sorted.iter().map(|c| c[0].0).fold(f64::NEG_INFINITY, f64::max);
    let hi = sorted.iter().map(|c| c[c.len() - 1].0).fold(f64::INFINITY, f64::min);
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("curves do not overlap: common range [{lo}, {hi}] is empty")));
    }
    // the difference of piecewise-linear curves peaks at a knot of one of them
    let mut xs: Vec<f64> = sorted.iter().flatten().map(|p| p.0).filter(|x| *x >= lo && *x <= hi).collect();
    xs.push(lo);
    xs.push(hi);
    let mut worst = 0.0f64;
    for &x in &xs {
        let ys: Vec<f64> = sorted.iter().map(|c| interpolate(c, x)).collect();
        let (min, max) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(*y), b.max(*y)));
        worst = worst.max(max - min);
    }
    Ok(worst)
}

/// Alignment of the success curves of a recovery table after mapping each
/// row to `rescale(n, grid value)`.
pub fn rescale_alignment(table: &RecoveryTable, rescale: impl Fn(usize, f64) -> f64) -> Result<f64> {
    let mut curves: BTreeMap<u64, Curve> = BTreeMap::new();
    for row in &table.rows {
        curves.entry(row.value.to_bits()).or_default().push((rescale(row.n, row.value), row.success));
    }
    curve_alignment(&curves.into_values().collect::<Vec<_>>())
}

/// Estimators compared by [`auc_comparison`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitFamily {
    /// ℓ1 path of the centered Gaussian loss on the data as given.
    Gaussian,
    /// The same estimator after subtracting column means, as covariance-based
    /// Gaussian methods do.
    GaussianCenteredData,
    /// ℓ1 path of the non-negative (truncated Gaussian) loss.
    TruncatedGaussian,
    /// Pairwise group lasso on the normal-conditionals family, on a λ grid.
    NormalConditionalsGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyAuc {
    pub family: FitFamily,
    pub auc: f64,
    pub roc: RocCurve,
}

/// Grid settings for families without an exact path.
#[derive(Debug, Clone, Copy)]
pub struct GridOptions {
    pub count: usize,
    pub ratio: f64,
    pub cd: CdOptions<f64>,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self { count: 40, ratio: 1e-4, cd: CdOptions::new(1e-7, 5000) }
    }
}

/// ROC curve of one estimator on `data`.
pub fn family_roc(data: &DataMatrix<f64>, truth: &Graph, family: FitFamily, grid: &GridOptions) -> Result<RocCurve> {
    if data.m() != truth.m() {
        return Err(Error::InvalidArgument(format!("data has {} variables, truth has {}", data.m(), truth.m())));
    }
    match family {
        FitFamily::Gaussian | FitFamily::GaussianCenteredData => {
            let w = if family == FitFamily::Gaussian {
                sample_covariance(data)
            } else {
                sample_covariance(&data.centered())
            };
            let loss = build_gaussian_loss(&w)?;
            let path = solve_path(&loss, &PenaltySpec::offdiag_l1(loss.layout()), PathStop::default())?;
            roc_points(&path, truth)
        }
        FitFamily::TruncatedGaussian => {
            let loss = build_nonneg_gaussian_loss(data)?;
            let path = solve_path(&loss, &PenaltySpec::offdiag_l1(loss.layout()), PathStop::default())?;
            roc_points(&path, truth)
        }
        FitFamily::NormalConditionalsGroup => {
            let loss = build_normal_conditionals_loss(data)?;
            let penalty = PenaltySpec::pair_groups(loss.layout());
            let lmax = lambda_max(&loss, &penalty)?;
            let mut warm = None;
            let mut supports = Vec::with_capacity(grid.count);
            for lambda in lambda_grid(lmax, grid.count, grid.ratio) {
                let est = solve_group_cd(&loss, &penalty, lambda, &grid.cd, warm.as_ref())?;
                supports.push((lambda, est.theta.edge_support(0.0)));
                warm = Some(est.theta);
            }
            roc_from_supports(&supports, truth)
        }
    }
}

/// Fits every family on the same data and reports its ROC curve and AUC.
/// Non-negative families reject data with negative entries.
pub fn auc_comparison(
    data: &DataMatrix<f64>,
    truth: &Graph,
    families: &[FitFamily],
    grid: &GridOptions,
) -> Result<Vec<FamilyAuc>> {
    families
        .iter()
        .map(|&family| {
            let roc = family_roc(data, truth, family, grid)?;
            Ok(FamilyAuc { family, auc: roc.auc, roc })
        })
        .collect()
}

#[cfg(test)]
mod tests;
