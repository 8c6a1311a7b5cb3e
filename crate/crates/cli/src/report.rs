use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use serde::Serialize;

use scorematch::diagnostics::{population_gamma, signed_support_match, theory_constants, McOptions, TheoryReport};
use scorematch::eval::{
    auc_comparison, degree_distribution, recovery_probability, rescale_alignment, roc_from_supports,
    ExperimentConfig, FitFamily, GridOptions, RecoveryTable, RocCurve,
};
use scorematch::layout::ParameterVector;
use scorematch::simulate::{GibbsSchedule, RngSeed, TruthJson, TruthSpec};

use crate::fit::{read_data, read_fit, FitKind};
use crate::manifest::{open, Run};
use crate::usage;

fn read_truth(path: &Path) -> anyhow::Result<TruthSpec> {
    let json: TruthJson = serde_json::from_reader(std::io::BufReader::new(open(path)?))
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(TruthSpec::from_json(&json)?)
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    /// truth.json written by `simulate`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Monte Carlo sample size for Γ*; required for non-Gaussian truths.
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Independent chains used for batch-means standard errors.
    #[arg(long, default_value_t = 20)]
    pub mc_batches: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub burnin: usize,
    #[arg(long, default_value_t = 10)]
    pub thin: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Diagnosis {
    #[serde(flatten)]
    theory: TheoryReport,
    monte_carlo: bool,
    /// Largest entrywise standard error of the Monte Carlo Γ*.
    max_std_error: Option<f64>,
    degree_distribution: BTreeMap<usize, usize>,
}

pub fn run_diagnose(a: DiagnoseArgs) -> anyhow::Result<()> {
    let truth = read_truth(&a.truth)?;
    let mc = a.mc_samples.map(|samples| McOptions {
        samples,
        batches: a.mc_batches,
        seed: RngSeed::new(a.seed),
        schedule: GibbsSchedule { burnin: a.burnin, thin: a.thin },
    });
    let pop = population_gamma(&truth, mc)?;
    let theory = theory_constants(&pop.gamma, &truth.theta, truth.sigma.as_ref())?;
    let max_std_error = pop.std_errors.as_ref().map(|se| se.iter().map(|b| b.amax()).fold(0.0, f64::max));
    let mut run = Run::start("diagnose", &a.out)?;
    run.input(&a.truth);
    run.write_json(
        "theory.json",
        &Diagnosis {
            theory,
            monte_carlo: mc.is_some(),
            max_std_error,
            degree_distribution: degree_distribution(&truth.graph),
        },
    )?;
    let seed = mc.map(|_| a.seed);
    run.finish(&a, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyChoice {
    Gaussian,
    GaussianCentered,
    TruncatedGaussian,
    NormalConditionalsGroup,
}

impl From<FamilyChoice> for FitFamily {
    fn from(f: FamilyChoice) -> Self {
        match f {
            FamilyChoice::Gaussian => FitFamily::Gaussian,
            FamilyChoice::GaussianCentered => FitFamily::GaussianCenteredData,
            FamilyChoice::TruncatedGaussian => FitFamily::TruncatedGaussian,
            FamilyChoice::NormalConditionalsGroup => FitFamily::NormalConditionalsGroup,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// truth.json written by `simulate`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Fit file to score (path.json, estimate.json or estimates.json).
    #[arg(long, conflicts_with = "data")]
    pub fit: Option<PathBuf>,
    /// Data set on which to fit and compare `--families`.
    #[arg(long, requires = "families")]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub families: Vec<FamilyChoice>,
    /// Entries with |θ| at or below this count as zero.
    #[arg(long, default_value_t = scorematch::diagnostics::DEFAULT_ZERO_TOL)]
    pub zero_tol: f64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct FitEval {
    auc: Option<f64>,
    points: usize,
    /// Exact signed-support recovery of a single estimate.
    signed_support_match: Option<bool>,
    true_edges: usize,
    degree_distribution: BTreeMap<usize, usize>,
}

fn write_roc(run: &mut Run, name: &str, roc: &RocCurve) -> anyhow::Result<()> {
    run.write(name, |w| Ok(roc.write_csv(w)?))
}

pub fn run_eval(a: EvalArgs) -> anyhow::Result<()> {
    let truth = read_truth(&a.truth)?;
    let mut run = Run::start("eval", &a.out)?;
    run.input(&a.truth);
    match (&a.fit, &a.data) {
        (Some(fit_path), None) => {
            let fit = read_fit(fit_path)?;
            run.input(fit_path);
            if fit.m != truth.graph.m() {
                return Err(usage(format!("fit has {} variables, truth has {}", fit.m, truth.graph.m())));
            }
            let supports: Vec<(f64, BTreeSet<(usize, usize)>)> = match &fit.path {
                Some(path) => {
                    // one point per segment, largest λ first
                    let mut s: Vec<_> = (0..path.active_sets.len())
                        .map(|i| {
                            let mid = 0.5 * (path.knots[i] + path.knots[i + 1]);
                            (mid, path.active_sets[i].iter().copied().collect())
                        })
                        .collect();
                    s.reverse();
                    s
                }
                None => {
                    let mut s: Vec<_> = fit
                        .estimates
                        .iter()
                        .map(|r| {
                            let theta = ParameterVector::from_json(
                                std::sync::Arc::new(fit.family.layout(fit.m)),
                                &r.estimate.theta,
                            )?;
                            Ok((r.estimate.lambda, theta.edge_support(a.zero_tol)))
                        })
                        .collect::<anyhow::Result<_>>()?;
                    s.sort_by(|p: &(f64, _), q| q.0.total_cmp(&p.0));
                    s
                }
            };
            let roc = roc_from_supports(&supports, &truth.graph)?;
            let single = fit.kind == FitKind::Estimate && fit.estimates.len() == 1;
            let signed = if single && fit.family == truth.family {
                let theta = ParameterVector::from_json(truth.theta.layout().clone(), &fit.estimates[0].estimate.theta)?;
                Some(signed_support_match(&theta, &truth.theta, a.zero_tol))
            } else {
                None
            };
            write_roc(&mut run, "roc.csv", &roc)?;
            run.write_json(
                "eval.json",
                &FitEval {
                    auc: (!single).then_some(roc.auc),
                    points: roc.points.len(),
                    signed_support_match: signed,
                    true_edges: truth.graph.num_edges(),
                    degree_distribution: degree_distribution(&truth.graph),
                },
            )?;
        }
        (None, Some(data_path)) => {
            let x = read_data(data_path, false, false)?;
            run.input(data_path);
            let families: Vec<FitFamily> = a.families.iter().map(|&f| f.into()).collect();
            let results = auc_comparison(&x, &truth.graph, &families, &GridOptions::default())?;
            let mut summary = BTreeMap::new();
            for (choice, r) in a.families.iter().zip(&results) {
                let name = serde_json::to_value(choice)?.as_str().unwrap_or_default().to_string();
                write_roc(&mut run, &format!("roc_{name}.csv"), &r.roc)?;
                summary.insert(name, r.auc);
            }
            run.write_json("auc.json", &summary)?;
        }
        _ => return Err(usage("give either --fit, or --data with --families")),
    }
    run.finish(&a, None)
}

#[derive(Debug, Args, Serialize)]
pub struct ExperimentArgs {
    /// Experiment configuration, TOML or JSON (by extension).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the number of trials per grid point.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Alignment {
    /// Sup-distance between success curves against n.
    raw: Option<f64>,
    /// The same after rescaling n.
    rescaled: Option<f64>,
}

fn read_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let config = if json {
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?
    };
    Ok(config)
}

fn alignment(config: &ExperimentConfig, table: &RecoveryTable) -> Alignment {
    let usable = config.grid.len() >= 2 && config.grid.iter().all(|g| g.n.len() >= 2);
    if !usable {
        return Alignment { raw: None, rescaled: None };
    }
    Alignment {
        raw: rescale_alignment(table, |n, _| n as f64).ok(),
        rescaled: rescale_alignment(table, |n, v| config.rescaled_n(n, v).unwrap_or(f64::NAN)).ok(),
    }
}

pub fn run_experiment(a: ExperimentArgs) -> anyhow::Result<()> {
    let mut config = read_config(&a.config)?;
    if let Some(t) = a.trials {
        config.trials = t;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    let table = recovery_probability(&config)?;
    let mut run = Run::start("experiment", &a.out)?;
    run.input(&a.config);
    run.write("recovery.csv", |w| Ok(table.write_csv(w)?))?;
    run.write_json("recovery.json", &table)?;
    run.write_json("alignment.json", &alignment(&config, &table))?;
    let seed = config.seed;
    run.finish(&config, Some(seed))
}
