use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, ValueEnum};
use serde::Serialize;

use scorematch::diagnostics::meinshausen_sigma;
use scorematch::layout::{Layout, ParameterVector};
use scorematch::linalg::spd_inverse;
use scorematch::losses::FamilySpec;
use scorematch::simulate::{
    chain_truth, contaminate, gen_graph, lattice_truth, normal_conditionals_parts, normal_conditionals_truth,
    precision_block_uniform, precision_discrete, precision_peng, sample_mvn, sample_mvt,
    sample_normal_conditionals_gibbs, sample_truncated_mvn_gibbs, star_truth, GibbsSchedule, Graph, GraphKind,
    RngSeed, TruthSpec,
};
use scorematch::DataMatrix64;

use crate::manifest::Run;
use crate::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignName {
    /// Chain with edge entries 0.3 (`--m`).
    Chain,
    /// 4-neighbour lattice with edge entries 0.2 (`--side`).
    Lattice,
    /// Hub `0` joined to `--d` leaves among `--m` nodes, edge entries 2.5/d.
    Star,
    /// Lattice components with hubs, partial-correlation construction
    /// (`--components`, `--side`, `--hubs`, `--hub-degree`).
    Peng,
    /// Non-negative truncated Gaussian with random complete blocks
    /// (`--blocks`, `--block-size`).
    TruncatedBlocks,
    /// Sparse ±1 precision, minimum eigenvalue `--target-eig` (`--m`).
    Discrete,
    /// `discrete` with a fraction of rows replaced by noise
    /// (`--fraction`, `--noise-variance`).
    Contaminated,
    /// Multivariate t on an Erdős–Rényi graph (`--m`, `--p`, `--df`).
    Mvt,
    /// Normal-conditionals model on a lattice (`--side`).
    NormalConditionals,
    /// The 4-node covariance with parameter `--rho`.
    Meinshausen,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub design: DesignName,
    /// Sample size.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub hubs: Option<usize>,
    #[arg(long)]
    pub hub_degree: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub block_size: Option<usize>,
    #[arg(long)]
    pub target_eig: Option<f64>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub noise_variance: Option<f64>,
    /// Edge probability of the Erdős–Rényi graph.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub df: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Gibbs burn-in sweeps.
    #[arg(long, default_value_t = 100)]
    pub burnin: usize,
    /// Gibbs sweeps between kept samples.
    #[arg(long, default_value_t = 10)]
    pub thin: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Parameters after design defaults are applied; recorded in the manifest.
#[derive(Debug, Default, Serialize)]
struct Resolved {
    design: Option<DesignName>,
    n: usize,
    seed: u64,
    m: Option<usize>,
    side: Option<usize>,
    d: Option<usize>,
    components: Option<usize>,
    hubs: Option<usize>,
    hub_degree: Option<usize>,
    blocks: Option<usize>,
    block_size: Option<usize>,
    target_eig: Option<f64>,
    fraction: Option<f64>,
    noise_variance: Option<f64>,
    p: Option<f64>,
    df: Option<f64>,
    rho: Option<f64>,
    burnin: Option<usize>,
    thin: Option<usize>,
}

// streams of the master seed
const TRUTH: u64 = 0;
const DATA: u64 = 1;
const NOISE: u64 = 2;
const WEIGHTS: u64 = 3;

fn meinshausen_truth(rho: f64) -> anyhow::Result<TruthSpec> {
    let sigma = meinshausen_sigma(rho)?;
    let mut k = spd_inverse(&sigma, None)?;
    // the construction zeroes κ₁₄ exactly; clean up rounding in the inverse
    k.iter_mut().filter(|v| v.abs() < 1e-12).for_each(|v| *v = 0.0);
    let graph = Graph::from_pattern(&k, 0.0);
    let theta = ParameterVector::from_parts(Arc::new(Layout::symmetric(4)), &[k], &[])?;
    Ok(TruthSpec { graph, family: FamilySpec::gaussian(), theta, sigma: Some(sigma) })
}

fn gaussian_sample(truth: &TruthSpec, n: usize, seed: RngSeed) -> anyhow::Result<DataMatrix64> {
    let sigma = truth.sigma.as_ref().ok_or_else(|| anyhow::anyhow!("truth has no covariance"))?;
    Ok(sample_mvn(sigma, n, seed)?)
}

fn generate(a: &SimulateArgs, r: &mut Resolved) -> anyhow::Result<(TruthSpec, DataMatrix64)> {
    let seed = RngSeed::new(a.seed);
    let (truth_seed, data_seed) = (seed.with_stream(TRUTH), seed.with_stream(DATA));
    let schedule = GibbsSchedule { burnin: a.burnin, thin: a.thin };
    if a.thin == 0 {
        return Err(usage("--thin must be at least 1"));
    }
    let out = match a.design {
        DesignName::Chain => {
            let m = *r.m.insert(a.m.unwrap_or(64));
            let truth = chain_truth(m)?;
            let x = gaussian_sample(&truth, a.n, data_seed)?;
            (truth, x)
        }
        DesignName::Lattice => {
            let side = *r.side.insert(a.side.unwrap_or(8));
            let truth = lattice_truth(side)?;
            let x = gaussian_sample(&truth, a.n, data_seed)?;
            (truth, x)
        }
        DesignName::Star => {
            let m = *r.m.insert(a.m.unwrap_or(200));
            let d = *r.d.insert(a.d.unwrap_or(10));
            let truth = star_truth(m, d)?;
            let x = gaussian_sample(&truth, a.n, data_seed)?;
            (truth, x)
        }
        DesignName::Peng => {
            let kind = GraphKind::HubLattice {
                components: *r.components.insert(a.components.unwrap_or(10)),
                side: *r.side.insert(a.side.unwrap_or(10)),
                hubs: *r.hubs.insert(a.hubs.unwrap_or(3)),
                hub_degree: *r.hub_degree.insert(a.hub_degree.unwrap_or(20)),
            };
            let graph = gen_graph(kind, truth_seed)?;
            let truth = precision_peng(&graph, seed.with_stream(WEIGHTS))?;
            let x = gaussian_sample(&truth, a.n, data_seed)?;
            (truth, x)
        }
        DesignName::TruncatedBlocks => {
            let blocks = *r.blocks.insert(a.blocks.unwrap_or(10));
            let size = *r.block_size.insert(a.block_size.unwrap_or(10));
            (r.burnin, r.thin) = (Some(a.burnin), Some(a.thin));
            let truth = precision_block_uniform(blocks, size, truth_seed)?;
            let k = truth.precision().expect("block design has a precision");
            let x = sample_truncated_mvn_gibbs(&k, a.n, schedule, data_seed)?;
            (truth, x)
        }
        DesignName::Discrete | DesignName::Contaminated => {
            let m = *r.m.insert(a.m.unwrap_or(200));
            let eig = *r.target_eig.insert(a.target_eig.unwrap_or(0.6));
            let truth = precision_discrete(m, eig, truth_seed)?;
            let mut x = gaussian_sample(&truth, a.n, data_seed)?;
            if a.design == DesignName::Contaminated {
                let fraction = *r.fraction.insert(a.fraction.unwrap_or(0.02));
                let var = *r.noise_variance.insert(a.noise_variance.unwrap_or(0.2));
                x = contaminate(&x, fraction, var, seed.with_stream(NOISE))?;
            }
            (truth, x)
        }
        DesignName::Mvt => {
            let m = *r.m.insert(a.m.unwrap_or(200));
            let p = *r.p.insert(a.p.unwrap_or(0.01));
            let df = *r.df.insert(a.df.unwrap_or(3.0));
            let graph = gen_graph(GraphKind::ErdosRenyi { m, p }, truth_seed)?;
            let truth = precision_peng(&graph, seed.with_stream(WEIGHTS))?;
            let x = sample_mvt(truth.sigma.as_ref().expect("Gaussian truth"), df, a.n, data_seed)?;
            (truth, x)
        }
        DesignName::NormalConditionals => {
            let side = *r.side.insert(a.side.unwrap_or(25));
            (r.burnin, r.thin) = (Some(a.burnin), Some(a.thin));
            let truth = normal_conditionals_truth(&gen_graph(GraphKind::Lattice2d { side }, truth_seed)?)?;
            let (quartic, quadratic, linear) = normal_conditionals_parts(&truth)?;
            let x = sample_normal_conditionals_gibbs(&quartic, &quadratic, &linear, a.n, schedule, data_seed)?;
            (truth, x)
        }
        DesignName::Meinshausen => {
            let rho = *r.rho.insert(a.rho.unwrap_or(0.3));
            let truth = meinshausen_truth(rho)?;
            let x = gaussian_sample(&truth, a.n, data_seed)?;
            (truth, x)
        }
    };
    Ok(out)
}

pub fn run(a: SimulateArgs) -> anyhow::Result<()> {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let mut resolved = Resolved { design: Some(a.design), n: a.n, seed: a.seed, ..Default::default() };
    let (truth, x) = generate(&a, &mut resolved)?;
    let mut run = Run::start("simulate", &a.out)?;
    run.write("data.csv", |w| Ok(x.write_csv(w)?))?;
    run.write_json("truth.json", &truth.to_json(Some(RngSeed::new(a.seed))))?;
    run.finish(&resolved, Some(a.seed))
}
