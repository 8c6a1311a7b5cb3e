use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp, StandardNormal};

use crate::data::DataMatrix;
use crate::linalg::Cholesky;
use crate::{Error, Result};

use super::RngSeed;

/// Burn-in and thinning of a Gibbs chain, counted in full sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GibbsSchedule {
    pub burnin: usize,
    pub thin: usize,
}

impl Default for GibbsSchedule {
    fn default() -> Self {
        Self { burnin: 100, thin: 10 }
    }
}

fn lower_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sigma.nrows() != sigma.ncols() || sigma.nrows() == 0 {
        return Err(Error::InvalidArgument("covariance must be square and nonempty".into()));
    }
    sigma
        .clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidArgument("covariance is not positive definite".into()))
}

fn standard_normals<R: Rng>(rng: &mut R, n: usize, m: usize) -> DMatrix<f64> {
    // row-major fill so that rows are produced one after another
    let mut z = DMatrix::<f64>::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            z[(i, j)] = rng.sample(StandardNormal);
        }
    }
    z
}

/// `n` draws from `N(0, Σ)` as `Z Lᵀ` with `Σ = L Lᵀ`.
pub fn sample_mvn(sigma: &DMatrix<f64>, n: usize, seed: RngSeed) -> Result<DataMatrix<f64>> {
    let l = lower_factor(sigma)?;
    let mut rng = seed.rng();
    let z = standard_normals(&mut rng, n, sigma.nrows());
    DataMatrix::new(z * l.transpose())
}

/// Multivariate t with scatter matrix `Σ` (covariance `df/(df−2)·Σ`).
pub fn sample_mvt(sigma: &DMatrix<f64>, df: f64, n: usize, seed: RngSeed) -> Result<DataMatrix<f64>> {
    if !(df >= 1.0) {
        return Err(Error::InvalidArgument(format!("degrees of freedom must be >= 1, got {df}")));
    }
    let l = lower_factor(sigma)?;
    let mut rng = seed.rng();
    let m = sigma.nrows();
    let chi = ChiSquared::new(df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut z = standard_normals(&mut rng, n, m);
    for i in 0..n {
        let w: f64 = chi.sample(&mut rng);
        let s = (df / w).sqrt();
        for j in 0..m {
            z[(i, j)] *= s;
        }
    }
    DataMatrix::new(z * l.transpose())
}

/// Standard normal conditioned on `z ≥ a`: plain rejection for `a ≤ 0`,
/// exponential proposals with the optimal rate otherwise.
pub fn truncated_standard_normal<R: Rng>(rng: &mut R, a: f64) -> f64 {
    if a <= 0.0 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z >= a {
                return z;
            }
        }
    }
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    let exp = Exp::new(rate).expect("positive rate");
    loop {
        let z = a + exp.sample(rng);
        let u: f64 = rng.random();
        if u <= (-0.5 * (z - rate) * (z - rate)).exp() {
            return z;
        }
    }
}

/// Gibbs sampler for `N(0, K⁻¹)` truncated to the nonnegative orthant,
/// started at the vector of ones.
pub fn sample_truncated_mvn_gibbs(
    k: &DMatrix<f64>,
    n: usize,
    schedule: GibbsSchedule,
    seed: RngSeed,
) -> Result<DataMatrix<f64>> {
    let m = k.nrows();
    if m == 0 || k.ncols() != m {
        return Err(Error::InvalidArgument("precision must be square and nonempty".into()));
    }
    if Cholesky::new(k, 1e-12).is_err() {
        return Err(Error::InvalidArgument("precision is not positive definite".into()));
    }
    if schedule.thin == 0 {
        return Err(Error::InvalidArgument("thin must be >= 1".into()));
    }
    let mut rng = seed.rng();
    let mut x = vec![1.0; m];
    let sd: Vec<f64> = (0..m).map(|j| 1.0 / k[(j, j)].sqrt()).collect();
    let sweep = |x: &mut [f64], rng: &mut rand_chacha::ChaCha8Rng| {
        for j in 0..m {
            let col = k.column(j);
            let mut s = 0.0;
            for (l, xl) in x.iter().enumerate() {
                if l != j {
                    s += col[l] * xl;
                }
            }
            let mean = -s / k[(j, j)];
            let z = truncated_standard_normal(rng, -mean / sd[j]);
            x[j] = (mean + sd[j] * z).max(0.0);
        }
    };
    for _ in 0..schedule.burnin {
        sweep(&mut x, &mut rng);
    }
    let mut out = DMatrix::<f64>::zeros(n, m);
    for i in 0..n {
        for _ in 0..schedule.thin {
            sweep(&mut x, &mut rng);
        }
        for j in 0..m {
            out[(i, j)] = x[j];
        }
    }
    DataMatrix::new(out)
}

/// Gibbs sampler for the density proportional to
/// `exp{Σ_{j≠k} β_jk x_j² x_k² + Σ_j β⁽²⁾_j x_j² + Σ_j β_j x_j}`, with the
/// first sum over ordered pairs, started at zero.
///
/// Given the rest, `X_j` is normal with quadratic coefficient
/// `a_j = β⁽²⁾_j + 2 Σ_{k≠j} β_jk x_k²`, variance `−1/(2a_j)` and mean
/// `−β_j/(2a_j)`.
pub fn sample_normal_conditionals_gibbs(
    quartic: &DMatrix<f64>,
    quadratic: &DVector<f64>,
    linear: &DVector<f64>,
    n: usize,
    schedule: GibbsSchedule,
    seed: RngSeed,
) -> Result<DataMatrix<f64>> {
    let m = quartic.nrows();
    if m == 0 || quartic.ncols() != m || quadratic.len() != m || linear.len() != m {
        return Err(Error::InvalidArgument("normal-conditionals parameters have inconsistent sizes".into()));
    }
    for j in 0..m {
        if quartic[(j, j)] != 0.0 {
            return Err(Error::InvalidArgument("quartic interaction matrix must have zero diagonal".into()));
        }
        for k in 0..m {
            if quartic[(j, k)] != quartic[(k, j)] {
                return Err(Error::InvalidArgument("quartic interaction matrix must be symmetric".into()));
            }
        }
    }
    if schedule.thin == 0 {
        return Err(Error::InvalidArgument("thin must be >= 1".into()));
    }
    let mut rng = seed.rng();
    let mut x = vec![0.0; m];
    let sweep = |x: &mut [f64], rng: &mut rand_chacha::ChaCha8Rng| -> Result<()> {
        for j in 0..m {
            let col = quartic.column(j);
            let mut a = quadratic[j];
            for (l, xl) in x.iter().enumerate() {
                if l != j {
                    a += 2.0 * col[l] * xl * xl;
                }
            }
            if !(a < 0.0) {
                return Err(Error::NonNormalizable { coordinate: j, coefficient: a });
            }
            let var = -0.5 / a;
            let mean = -linear[j] / (2.0 * a);
            let z: f64 = rng.sample(StandardNormal);
            x[j] = mean + var.sqrt() * z;
        }
        Ok(())
    };
    for _ in 0..schedule.burnin {
        sweep(&mut x, &mut rng)?;
    }
    let mut out = DMatrix::<f64>::zeros(n, m);
    for i in 0..n {
        for _ in 0..schedule.thin {
            sweep(&mut x, &mut rng)?;
        }
        for j in 0..m {
            out[(i, j)] = x[j];
        }
    }
    DataMatrix::new(out)
}

/// Replaces `⌈fraction·n⌉` uniformly chosen rows by i.i.d. `N(0, variance)`
/// entries.
pub fn contaminate(x: &DataMatrix<f64>, fraction: f64, variance: f64, seed: RngSeed) -> Result<DataMatrix<f64>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("fraction must lie in [0, 1], got {fraction}")));
    }
    if !(variance >= 0.0) {
        return Err(Error::InvalidArgument("noise variance must be nonnegative".into()));
    }
    let n = x.n();
    // guard against 0.02·150 = 3.0000000000000004
    let count = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let count = count.min(n);
    let mut rng = seed.rng();
    let mut values = x.values().clone();
    let sd = variance.sqrt();
    let mut rows: Vec<usize> = sample_indices(&mut rng, n, count).into_vec();
    rows.sort_unstable();
    for i in rows {
        for j in 0..x.m() {
            let z: f64 = rng.sample(StandardNormal);
            values[(i, j)] = sd * z;
        }
    }
    DataMatrix::new(values)
}

/// Second-moment matrix `W = (1/n) Σ_i x⁽ⁱ⁾x⁽ⁱ⁾ᵀ` of `n` draws from
/// `N(0, Σ)` without forming the draws. For `n ≥ m` this uses the Bartlett
/// decomposition `nW = L A Aᵀ Lᵀ` with `A` lower triangular,
/// `A_ii² ~ χ²_{n−i}` and standard normal entries below the diagonal; the
/// cost is independent of `n`. Smaller `n` falls back to explicit sampling.
pub fn sample_second_moment(sigma: &DMatrix<f64>, n: usize, seed: RngSeed) -> Result<DMatrix<f64>> {
    let m = sigma.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("need n >= 1".into()));
    }
    if n < m {
        return Ok(crate::data::sample_covariance(&sample_mvn(sigma, n, seed)?));
    }
    let l = lower_factor(sigma)?;
    let mut rng = seed.rng();
    let mut a = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        let chi = ChiSquared::new((n - i) as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        a[(i, i)] = chi.sample(&mut rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let mut w = &la * la.transpose() / n as f64;
    for j in 0..m {
        for i in (j + 1)..m {
            let v = w[(i, j)];
            w[(j, i)] = v;
        }
    }
    Ok(w)
}
