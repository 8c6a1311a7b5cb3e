use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use scorematch::data::sample_covariance;
use scorematch::layout::ParameterVector;
use scorematch::linalg::spd_inverse;
use scorematch::losses::{build_loss, Domain, FamilyKind, FamilySpec};
use scorematch::solvers::{
    kkt_residual, lambda_max, solve_cd, solve_cd_gaussian, solve_group_cd, solve_path, CdOptions, Estimate,
    EstimateJson, PathJson, PathStop, PenaltySpec,
};
use scorematch::tuning::{lambda_grid, select_lambda_ebic, Candidates, EbicConfig, EbicReport, FitWeight};
use scorematch::{DataMatrix64, QuadraticLoss64};

use crate::manifest::{open, Run};
use crate::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    Gaussian,
    TruncatedGaussian,
    TruncatedGaussianLocation,
    NormalConditionals,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainName {
    Real,
    Nonnegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyName {
    /// ℓ1 on off-diagonal interactions.
    L1,
    /// Euclidean norm over all interaction statistics of each pair.
    Group,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverName {
    Path,
    Cd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitWeightName {
    SampleSize,
    Literal,
}

/// Data file, model family and preprocessing.
#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Headerless CSV, one sample per line.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub family: FamilyName,
    /// Support of the model; truncated families always use `nonnegative`.
    #[arg(long, value_enum)]
    pub domain: Option<DomainName>,
    /// Subtract column means before fitting.
    #[arg(long)]
    pub center: bool,
    /// Center and scale columns to unit variance before fitting.
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SolveArgs {
    #[arg(long, value_enum, default_value = "l1")]
    pub penalty: PenaltyName,
    /// Number of grid values when no λ is given.
    #[arg(long, default_value_t = scorematch::tuning::DEFAULT_GRID_SIZE)]
    pub grid_size: usize,
    /// Smallest grid value as a fraction of λ_max.
    #[arg(long, default_value_t = scorematch::tuning::DEFAULT_GRID_RATIO)]
    pub grid_ratio: f64,
    /// Coordinate descent tolerance on the ℓ1 change of a sweep.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "path")]
    pub solver: SolverName,
    /// Single penalty level for `--solver cd`; without it a grid is fitted.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[command(flatten)]
    pub solve: SolveArgs,
    /// Path solver: stop at this λ.
    #[arg(long, default_value_t = 0.0)]
    pub lambda_min: f64,
    /// Path solver: stop once this many penalized coordinates are active.
    #[arg(long)]
    pub max_active: Option<usize>,
    /// Re-check KKT residuals and, for Gaussian paths that reach λ = 0, the
    /// endpoint `W⁻¹`; writes verify.json and fails if a check fails.
    #[arg(long)]
    pub verify: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitKind {
    Path,
    Estimate,
    Grid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupNorm {
    pub j: usize,
    pub k: usize,
    pub norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    #[serde(flatten)]
    pub estimate: EstimateJson,
    /// Nonzero pair-group norms, for the group penalty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_norms: Option<Vec<GroupNorm>>,
}

/// Contents of `path.json`, `estimate.json` and `estimates.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitFile {
    pub kind: FitKind,
    pub family: FamilySpec,
    pub penalty: PenaltyName,
    pub n: usize,
    pub m: usize,
    pub center: bool,
    pub standardize: bool,
    #[serde(default)]
    pub estimates: Vec<FitRecord>,
    #[serde(default)]
    pub path: Option<PathJson>,
}

pub fn read_data(path: &Path, center: bool, standardize: bool) -> anyhow::Result<DataMatrix64> {
    let x = DataMatrix64::read_csv(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    Ok(if standardize {
        x.standardized()
    } else if center {
        x.centered()
    } else {
        x
    })
}

pub fn family_spec(family: FamilyName, domain: Option<DomainName>) -> anyhow::Result<FamilySpec> {
    let kind = match family {
        FamilyName::Gaussian => FamilyKind::GaussianCentered,
        FamilyName::TruncatedGaussian => FamilyKind::TruncatedGaussianCentered,
        FamilyName::TruncatedGaussianLocation => FamilyKind::TruncatedGaussianLocation,
        FamilyName::NormalConditionals => FamilyKind::NormalConditionals,
    };
    let truncated = matches!(family, FamilyName::TruncatedGaussian | FamilyName::TruncatedGaussianLocation);
    let domain = match domain {
        Some(DomainName::Real) if truncated => {
            return Err(usage(format!(
                "family {family:?} is a truncated model on the non-negative orthant; --domain real is not available"
            )))
        }
        Some(DomainName::Real) => Domain::RealLine,
        Some(DomainName::Nonnegative) => Domain::NonnegativeOrthant,
        None if truncated => Domain::NonnegativeOrthant,
        None => Domain::RealLine,
    };
    Ok(FamilySpec::new(kind, domain)?)
}

/// Checks that the data fit the family's domain and builds the loss.
pub fn loss_for(family: FamilySpec, x: &DataMatrix64) -> anyhow::Result<QuadraticLoss64> {
    if family.domain == Domain::NonnegativeOrthant {
        if let Err(e) = x.require_nonnegative() {
            return Err(usage(format!(
                "{e}. The {} model uses the non-negative scoring rule (domain nonnegative); \
                 pass non-negative data, or fit a real-line family without --domain nonnegative",
                serde_json::to_value(family.kind)?.as_str().unwrap_or_default()
            )));
        }
    }
    Ok(build_loss(family, x)?)
}

pub fn penalty_for(loss: &QuadraticLoss64, penalty: PenaltyName) -> PenaltySpec<f64> {
    match penalty {
        PenaltyName::L1 => PenaltySpec::offdiag_l1(loss.layout()),
        PenaltyName::Group => PenaltySpec::pair_groups(loss.layout()),
    }
}

fn record(est: &Estimate<f64>, penalty: PenaltyName) -> FitRecord {
    let group_norms = (penalty == PenaltyName::Group).then(|| {
        let v = est.theta.values();
        est.layout()
            .pair_groups()
            .into_iter()
            .map(|((j, k), coords)| GroupNorm { j, k, norm: coords.iter().map(|&r| v[r] * v[r]).sum::<f64>().sqrt() })
            .filter(|g| g.norm > 0.0)
            .collect()
    });
    FitRecord { estimate: est.to_json(), group_norms }
}

fn grid(loss: &QuadraticLoss64, penalty: &PenaltySpec<f64>, s: &SolveArgs) -> anyhow::Result<Vec<f64>> {
    if s.grid_size == 0 {
        return Err(usage("--grid-size must be at least 1"));
    }
    if !(s.grid_ratio > 0.0 && s.grid_ratio < 1.0) {
        return Err(usage("--grid-ratio must lie in (0, 1)"));
    }
    let lmax = lambda_max(loss, penalty)?;
    if lmax <= 0.0 {
        return Ok(vec![0.0]);
    }
    Ok(lambda_grid(lmax, s.grid_size, s.grid_ratio))
}

/// Coordinate descent at each λ, warm-started along the list.
fn solve_grid(
    loss: &QuadraticLoss64,
    x: &DataMatrix64,
    family: FamilySpec,
    penalty_name: PenaltyName,
    lambdas: &[f64],
    s: &SolveArgs,
) -> anyhow::Result<Vec<Estimate<f64>>> {
    let penalty = penalty_for(loss, penalty_name);
    let cd = CdOptions::new(s.tol, s.max_iter);
    let gaussian = family == FamilySpec::gaussian() && penalty_name == PenaltyName::L1;
    let w = gaussian.then(|| sample_covariance(x));
    let mut out: Vec<Estimate<f64>> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let warm = out.last().map(|e| &e.theta);
        let est = match (penalty_name, &w) {
            (PenaltyName::Group, _) => solve_group_cd(loss, &penalty, lambda, &cd, warm)?,
            (PenaltyName::L1, Some(w)) => solve_cd_gaussian(w, lambda, &cd, warm)?,
            (PenaltyName::L1, None) => solve_cd(loss, &penalty, lambda, &cd, warm)?,
        };
        if !est.converged {
            eprintln!("warning: coordinate descent did not converge at lambda = {lambda:e}");
        }
        out.push(est);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub pass: bool,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

fn theta_from_sparse(loss: &QuadraticLoss64, coeffs: &[(usize, f64)]) -> anyhow::Result<ParameterVector<f64>> {
    let mut values = vec![0.0; loss.layout().num_coords()];
    for &(r, v) in coeffs {
        *values
            .get_mut(r)
            .ok_or_else(|| usage(format!("path coordinate {r} is outside the layout of the data")))? = v;
    }
    Ok(ParameterVector::from_values(loss.layout().clone(), values)?)
}

/// KKT residuals of every stored solution and, for Gaussian paths ending at
/// λ = 0, the distance of the endpoint from `W⁻¹`.
pub fn verify_fit(fit: &FitFile, x: &DataMatrix64, kkt_tol: f64, endpoint_tol: f64) -> anyhow::Result<VerifyReport> {
    if x.m() != fit.m {
        return Err(usage(format!("data has {} variables, the fit has {}", x.m(), fit.m)));
    }
    let loss = loss_for(fit.family, x)?;
    let penalty = penalty_for(&loss, fit.penalty);
    let mut solutions = Vec::new();
    for rec in &fit.estimates {
        solutions.push((rec.estimate.lambda, ParameterVector::from_json(loss.layout().clone(), &rec.estimate.theta)?));
    }
    let mut notes = vec![];
    let mut checks = vec![];
    if let Some(path) = &fit.path {
        for (lambda, coeffs) in path.knots.iter().zip(&path.coefficients) {
            solutions.push((*lambda, theta_from_sparse(&loss, coeffs)?));
        }
        let endpoint = path.knots.first().copied().filter(|l| *l == 0.0);
        match endpoint {
            Some(_) if fit.family == FamilySpec::gaussian() => {
                let k = theta_from_sparse(&loss, &path.coefficients[0])?.matrix(0);
                let winv = spd_inverse(&sample_covariance(x), None)?;
                let diff = (k - winv).amax();
                checks.push(Check {
                    name: "endpoint_minus_inverse_w".into(),
                    value: diff,
                    tolerance: endpoint_tol,
                    pass: diff <= endpoint_tol,
                });
            }
            Some(_) => notes.push("endpoint check applies to the Gaussian family only".into()),
            None => notes.push(format!("path stops at lambda = {:e} ({:?})", path.knots[0], path.termination)),
        }
    }
    let mut worst: f64 = 0.0;
    for (lambda, theta) in &solutions {
        worst = worst.max(kkt_residual(&loss, &penalty, theta, *lambda)?);
    }
    checks.insert(0, Check { name: "max_kkt_residual".into(), value: worst, tolerance: kkt_tol, pass: worst <= kkt_tol });
    Ok(VerifyReport { pass: checks.iter().all(|c| c.pass), checks, notes })
}

fn finish_verify(run: &mut Run, report: &VerifyReport) -> anyhow::Result<()> {
    run.write_json("verify.json", report)?;
    for c in &report.checks {
        eprintln!("{}: {:e} (tolerance {:e}) {}", c.name, c.value, c.tolerance, if c.pass { "ok" } else { "FAILED" });
    }
    Ok(())
}

pub fn run_fit(a: FitArgs) -> anyhow::Result<()> {
    let family = family_spec(a.data.family, a.data.domain)?;
    let x = read_data(&a.data.data, a.data.center, a.data.standardize)?;
    let loss = loss_for(family, &x)?;
    let mut fit = FitFile {
        kind: FitKind::Path,
        family,
        penalty: a.solve.penalty,
        n: x.n(),
        m: x.m(),
        center: a.data.center,
        standardize: a.data.standardize,
        estimates: vec![],
        path: None,
    };
    let mut run = Run::start("fit", &a.out)?;
    run.input(&a.data.data);
    match a.solver {
        SolverName::Path => {
            if a.solve.penalty == PenaltyName::Group {
                return Err(usage("the group penalty has no piecewise-linear path; use --solver cd"));
            }
            if a.lambda.is_some() {
                return Err(usage("--lambda applies to --solver cd; the path solver covers every λ"));
            }
            let penalty = penalty_for(&loss, a.solve.penalty);
            let path = solve_path(&loss, &penalty, PathStop { lambda_min: a.lambda_min, max_active: a.max_active })?;
            run.write("path.csv", |w| Ok(path.write_csv(w)?))?;
            fit.path = Some(path.to_json());
            run.write_json("path.json", &fit)?;
        }
        SolverName::Cd => {
            let lambdas = match a.lambda {
                Some(l) => vec![l],
                None => grid(&loss, &penalty_for(&loss, a.solve.penalty), &a.solve)?,
            };
            let ests = solve_grid(&loss, &x, family, a.solve.penalty, &lambdas, &a.solve)?;
            fit.estimates = ests.iter().map(|e| record(e, a.solve.penalty)).collect();
            if a.lambda.is_some() {
                fit.kind = FitKind::Estimate;
                run.write_json("estimate.json", &fit)?;
            } else {
                fit.kind = FitKind::Grid;
                run.write_json("estimates.json", &fit)?;
            }
        }
    }
    let mut failed = false;
    if a.verify {
        let report = verify_fit(&fit, &x, 1e-6, 1e-8)?;
        finish_verify(&mut run, &report)?;
        failed = !report.pass;
    }
    run.finish(&a, None)?;
    if failed {
        anyhow::bail!("verification failed; see verify.json");
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    /// Data the fit was computed from (preprocessing is taken from the fit).
    #[arg(long)]
    pub data: PathBuf,
    /// path.json, estimate.json or estimates.json written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    pub kkt_tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub endpoint_tol: f64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub fn read_fit(path: &Path) -> anyhow::Result<FitFile> {
    serde_json::from_reader(std::io::BufReader::new(open(path)?)).with_context(|| format!("parsing {}", path.display()))
}

pub fn run_verify(a: VerifyArgs) -> anyhow::Result<()> {
    let fit = read_fit(&a.fit)?;
    let x = read_data(&a.data, fit.center, fit.standardize)?;
    let report = verify_fit(&fit, &x, a.kkt_tol, a.endpoint_tol)?;
    let mut run = Run::start("verify", &a.out)?;
    run.input(&a.data);
    run.input(&a.fit);
    finish_verify(&mut run, &report)?;
    run.finish(&a, None)?;
    if !report.pass {
        anyhow::bail!("verification failed; see verify.json");
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Candidates from the exact path (knots and segment midpoints) or a CD grid.
    #[arg(long, value_enum, default_value = "path")]
    pub solver: SolverName,
    /// Explicit candidate λ values (comma separated); fitted by CD.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Vec<f64>,
    #[command(flatten)]
    pub solve: SolveArgs,
    /// EBIC γ.
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    /// Score the unpenalized refit on each candidate support.
    #[arg(long)]
    pub refit: bool,
    /// Weight of the loss term: `sample-size` (2n·loss) or `literal` (2·loss).
    #[arg(long, value_enum, default_value = "sample-size")]
    pub fit_weight: FitWeightName,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Selection {
    selected_lambda: f64,
    score: f64,
    refit_failed: bool,
    estimate: FitRecord,
    report: EbicReport,
}

pub fn run_tune(a: TuneArgs) -> anyhow::Result<()> {
    let family = family_spec(a.data.family, a.data.domain)?;
    let x = read_data(&a.data.data, a.data.center, a.data.standardize)?;
    let loss = loss_for(family, &x)?;
    let penalty = penalty_for(&loss, a.solve.penalty);
    let config = EbicConfig {
        gamma: a.gamma,
        refit: a.refit,
        fit_weight: match a.fit_weight {
            FitWeightName::SampleSize => FitWeight::SampleSize,
            FitWeightName::Literal => FitWeight::Literal,
        },
    };
    config.validate()?;
    let use_path = a.lambdas.is_empty() && a.solver == SolverName::Path && a.solve.penalty == PenaltyName::L1;
    let selection = if use_path {
        let path = solve_path(&loss, &penalty, PathStop::default())?;
        select_lambda_ebic(Candidates::Path(&path), &loss, &penalty, x.n(), &config)?
    } else {
        let mut lambdas = if a.lambdas.is_empty() { grid(&loss, &penalty, &a.solve)? } else { a.lambdas.clone() };
        // warm starts run from large to small λ
        lambdas.sort_by(|p, q| q.total_cmp(p));
        let ests = solve_grid(&loss, &x, family, a.solve.penalty, &lambdas, &a.solve)?;
        select_lambda_ebic(Candidates::Grid(&ests), &loss, &penalty, x.n(), &config)?
    };
    let mut run = Run::start("tune", &a.out)?;
    run.input(&a.data.data);
    run.write("ebic.csv", |w| Ok(selection.write_csv(w)?))?;
    run.write_json(
        "selection.json",
        &Selection {
            selected_lambda: selection.lambda,
            score: selection.score,
            refit_failed: selection.refit_failed,
            estimate: record(&selection.estimate, a.solve.penalty),
            report: selection.report(config),
        },
    )?;
    run.finish(&a, None)
}
