//! Signed-support recovery experiments over grids of sample sizes.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{gaussian_theory, signed_support_match, DEFAULT_ZERO_TOL};
use crate::losses::build_nonneg_gaussian_loss;
use crate::simulate::{
    chain_truth, constant_precision, gen_graph, lattice_truth, sample_second_moment, sample_truncated_mvn_gibbs,
    star_truth, GibbsSchedule, GraphKind, RngSeed, TruthSpec,
};
use crate::solvers::{solve_cd, solve_cd_gaussian, CdOptions, PenaltySpec};
use crate::{Error, Result};

/// Experiment designs. The meaning of a grid point's `value` depends on the
/// design: the number of nodes for the chain, lattice and non-negative
/// chain; the hub degree for the star; the edge strength for the
/// complexity chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    VaryMChain,
    VaryMLattice,
    VaryDStar,
    VaryComplexityChain,
    NonnegChainScaling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub value: f64,
    pub n: Vec<usize>,
}

fn default_seed() -> u64 {
    1
}

fn default_zero_tol() -> f64 {
    DEFAULT_ZERO_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub design: Design,
    pub grid: Vec<GridPoint>,
    pub trials: usize,
    /// `c` in `λ = c · rate(n, m)`.
    pub lambda_constant: f64,
    /// Exponent `a` of the x-axis `n/(log m)^a`; defaults to 1, or 8 for the
    /// non-negative design. The star design always rescales by `1/d²`.
    #[serde(default)]
    pub rescale_exponent: Option<f64>,
    /// Exponent `b` of the rate `√((log m)^b / n)`; same defaults.
    #[serde(default)]
    pub rate_exponent: Option<f64>,
    /// Number of nodes for the star (default 200) and complexity (default
    /// 64) designs.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_zero_tol")]
    pub zero_tol: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidArgument("grid is empty".into()));
        }
        if !(self.lambda_constant > 0.0) {
            return Err(Error::InvalidArgument("lambda_constant must be positive".into()));
        }
        if !(self.zero_tol >= 0.0) {
            return Err(Error::InvalidArgument("zero_tol must be nonnegative".into()));
        }
        for g in &self.grid {
            if g.n.iter().any(|&n| n == 0) {
                return Err(Error::InvalidArgument("sample sizes must be positive".into()));
            }
            self.truth(g.value)?;
        }
        Ok(())
    }

    fn default_exponent(&self) -> f64 {
        if self.design == Design::NonnegChainScaling {
            8.0
        } else {
            1.0
        }
    }

    pub fn rescale_exponent(&self) -> f64 {
        self.rescale_exponent.unwrap_or_else(|| self.default_exponent())
    }

    pub fn rate_exponent(&self) -> f64 {
        self.rate_exponent.unwrap_or_else(|| self.default_exponent())
    }

    fn integer(value: f64, what: &str) -> Result<usize> {
        if value >= 1.0 && value.fract() == 0.0 {
            Ok(value as usize)
        } else {
            Err(Error::InvalidArgument(format!("{what} must be a positive integer, got {value}")))
        }
    }

    /// Number of nodes at a grid value.
    pub fn num_nodes(&self, value: f64) -> Result<usize> {
        match self.design {
            Design::VaryDStar => Ok(self.m.unwrap_or(200)),
            Design::VaryComplexityChain => Ok(self.m.unwrap_or(64)),
            _ => Self::integer(value, "m"),
        }
    }

    /// Ground truth at a grid value.
    pub fn truth(&self, value: f64) -> Result<TruthSpec> {
        let m = self.num_nodes(value)?;
        match self.design {
            Design::VaryMChain => chain_truth(m),
            Design::VaryMLattice => {
                let side = (m as f64).sqrt().round() as usize;
                if side * side != m {
                    return Err(Error::InvalidArgument(format!("lattice size {m} is not a perfect square")));
                }
                lattice_truth(side)
            }
            Design::VaryDStar => star_truth(m, Self::integer(value, "d")?),
            Design::VaryComplexityChain => constant_precision(&gen_graph(GraphKind::Chain { m }, RngSeed::new(0))?, value),
            Design::NonnegChainScaling => {
                let t = chain_truth(m)?;
                Ok(TruthSpec { family: crate::losses::FamilySpec::truncated_gaussian(), ..t })
            }
        }
    }

    pub fn rate(&self, n: usize, m: usize) -> f64 {
        ((m as f64).ln().powf(self.rate_exponent()) / n as f64).sqrt()
    }

    /// x-axis value after rescaling.
    pub fn rescaled_n(&self, n: usize, value: f64) -> Result<f64> {
        if self.design == Design::VaryDStar {
            return Ok(n as f64 / (value * value));
        }
        let m = self.num_nodes(value)?;
        Ok(n as f64 / (m as f64).ln().powf(self.rescale_exponent()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub value: f64,
    pub n: usize,
    pub rescaled_n: f64,
    pub lambda: f64,
    pub success: f64,
    pub trials: usize,
    /// Trials where the solver failed or did not converge (counted as
    /// unsuccessful).
    pub failures: usize,
    /// Model complexity of the Gaussian truth when defined.
    pub complexity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryTable {
    pub design: Design,
    pub lambda_constant: f64,
    pub rows: Vec<RecoveryRow>,
}

impl RecoveryTable {
    /// Columns `grid,n,rescaled_n,success,lambda,trials,failures`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["grid", "n", "rescaled_n", "success", "lambda", "trials", "failures"])?;
        for r in &self.rows {
            w.write_record([
                r.value.to_string(),
                r.n.to_string(),
                r.rescaled_n.to_string(),
                r.success.to_string(),
                r.lambda.to_string(),
                r.trials.to_string(),
                r.failures.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcome of one trial: `Some(success)` or `None` on solver failure.
fn run_trial(config: &ExperimentConfig, truth: &TruthSpec, n: usize, lambda: f64, seed: RngSeed) -> Option<bool> {
    let cd = CdOptions::new(1e-8, 2000);
    let estimate = if config.design == Design::NonnegChainScaling {
        let k = truth.precision()?;
        let x = sample_truncated_mvn_gibbs(&k, n, GibbsSchedule::default(), seed).ok()?;
        let loss = build_nonneg_gaussian_loss(&x).ok()?;
        solve_cd(&loss, &PenaltySpec::offdiag_l1(loss.layout()), lambda, &cd, None).ok()?
    } else {
        let w = sample_second_moment(truth.sigma.as_ref()?, n, seed).ok()?;
        solve_cd_gaussian(&w, lambda, &cd, None).ok()?
    };
    if !estimate.converged {
        return None;
    }
    Some(signed_support_match(&estimate.theta, &truth.theta, config.zero_tol))
}

/// Fraction of trials with exact signed-support recovery at every grid point
/// and sample size, with `λ = c · √((log m)^b / n)`.
///
/// Trial `t` at grid point `g` and sample size index `i` draws from stream
/// `(g, i, t)` of the master seed, so the table does not depend on thread
/// scheduling.
pub fn recovery_probability(config: &ExperimentConfig) -> Result<RecoveryTable> {
    config.validate()?;
    let mut rows = Vec::new();
    for (g, point) in config.grid.iter().enumerate() {
        let truth = config.truth(point.value)?;
        let m = truth.graph.m();
        let complexity = if config.design == Design::NonnegChainScaling {
            None
        } else {
            gaussian_theory(&truth).ok().and_then(|r| r.model_complexity)
        };
        for (i, &n) in point.n.iter().enumerate() {
            let lambda = config.lambda_constant * config.rate(n, m);
            let outcomes: Vec<Option<bool>> = (0..config.trials)
                .into_par_iter()
                .map(|t| {
                    let stream = ((g as u64) << 40) | ((i as u64) << 20) | t as u64;
                    run_trial(config, &truth, n, lambda, RngSeed::new(config.seed).with_stream(stream))
                })
                .collect();
            let successes = outcomes.iter().filter(|o| **o == Some(true)).count();
            let failures = outcomes.iter().filter(|o| o.is_none()).count();
            rows.push(RecoveryRow {
                value: point.value,
                n,
                rescaled_n: config.rescaled_n(n, point.value)?,
                lambda,
                success: successes as f64 / config.trials as f64,
                trials: config.trials,
                failures,
                complexity,
            });
        }
    }
    Ok(RecoveryTable { design: config.design, lambda_constant: config.lambda_constant, rows })
}

/// Pilot calibration of the rate constant: runs the experiment for each
/// candidate and returns the one with the largest mean success over the
/// grid (ties go to the earlier candidate), together with all mean successes.
pub fn calibrate_lambda_constant(config: &ExperimentConfig, candidates: &[f64]) -> Result<(f64, Vec<(f64, f64)>)> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate constants".into()));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for &c in candidates {
        let table = recovery_probability(&ExperimentConfig { lambda_constant: c, ..config.clone() })?;
        let mean = table.rows.iter().map(|r| r.success).sum::<f64>() / table.rows.len() as f64;
        scores.push((c, mean));
    }
    let best = scores
        .iter()
        .fold(None::<(f64, f64)>, |acc, &(c, s)| match acc {
            Some((_, bs)) if bs >= s => acc,
            _ => Some((c, s)),
        })
        .expect("nonempty");
    Ok((best.0, scores))
}
