//! Score matching objective evaluated from a log-density by finite
//! differences, independent of the quadratic-form builders.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scorematch::data::DataMatrix;
use scorematch::layout::{Layout, ParameterVector};
use scorematch::losses::{build_loss, Domain, FamilySpec, QuadraticLoss};

pub type LogDensity = dyn Fn(&[f64]) -> f64;

/// Richardson-extrapolated central differences; exact up to rounding for
/// polynomials of degree ≤ 4.
pub fn partials(f: &LogDensity, x: &[f64], j: usize, h: f64) -> (f64, f64) {
    let at = |d: f64| {
        let mut y = x.to_vec();
        y[j] += d;
        f(&y)
    };
    let f0 = at(0.0);
    let d1 = |h: f64| (at(h) - at(-h)) / (2.0 * h);
    let d2 = |h: f64| (at(h) - 2.0 * f0 + at(-h)) / (h * h);
    ((4.0 * d1(h) - d1(2.0 * h)) / 3.0, (4.0 * d2(h) - d2(2.0 * h)) / 3.0)
}

/// Average Hyvärinen score (real line) or its non-negative variant.
pub fn empirical_score(f: &LogDensity, x: &DataMatrix<f64>, nonneg: bool) -> f64 {
    let mut total = 0.0;
    for i in 0..x.n() {
        let row = x.row(i);
        for j in 0..x.m() {
            let h = 1e-3 * (1.0 + row[j].abs());
            let (d1, d2) = partials(f, &row, j, h);
            total += if nonneg {
                let xj = row[j];
                2.0 * xj * d1 + xj * xj * d2 + 0.5 * xj * xj * d1 * d1
            } else {
                d2 + 0.5 * d1 * d1
            };
        }
    }
    total / x.n() as f64
}

pub fn random_symmetric(m: usize, scale: f64, zero_diag: bool, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(m, m);
    for j in 0..m {
        for k in j..m {
            let v = if j == k && zero_diag { 0.0 } else { scale * rng.random_range(-1.0..1.0) };
            a[(j, k)] = v;
            a[(k, j)] = v;
        }
    }
    a
}

pub fn random_data(n: usize, m: usize, nonneg: bool, rng: &mut ChaCha8Rng) -> DataMatrix<f64> {
    let values = DMatrix::from_fn(n, m, |_, _| {
        let v: f64 = rng.random_range(-1.5..1.5);
        if nonneg {
            v.abs()
        } else {
            v
        }
    });
    DataMatrix::new(values).unwrap()
}

/// Parameter and log-density of a random member of `family`.
pub fn random_model(family: FamilySpec, m: usize, rng: &mut ChaCha8Rng) -> (ParameterVector<f64>, Box<LogDensity>) {
    if family == FamilySpec::normal_conditionals() {
        let b = random_symmetric(m, 1.0, false, rng);
        let b2 = random_symmetric(m, 0.5, true, rng);
        let lin: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let theta = ParameterVector::from_parts(
            Arc::new(Layout::normal_conditionals(m)),
            &[b.clone(), b2.clone()],
            &[lin.clone()],
        )
        .unwrap();
        let f = move |x: &[f64]| {
            let mut s = 0.0;
            for j in 0..m {
                s += lin[j] * x[j];
                for k in 0..m {
                    s += b[(j, k)] * x[j] * x[k];
                    if j != k {
                        s += b2[(j, k)] * x[j] * x[j] * x[k] * x[k];
                    }
                }
            }
            s
        };
        (theta, Box::new(f))
    } else {
        let k = random_symmetric(m, 1.0, false, rng);
        let theta = ParameterVector::from_parts(Arc::new(Layout::symmetric(m)), &[k.clone()], &[]).unwrap();
        let f = move |x: &[f64]| {
            let v = DMatrix::from_column_slice(m, 1, x);
            -0.5 * (v.transpose() * &k * &v)[(0, 0)]
        };
        (theta, Box::new(f))
    }
}

pub fn quadratic_minus_linear(loss: &QuadraticLoss<f64>, theta: &ParameterVector<f64>) -> f64 {
    loss.value(theta) - loss.c()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Relative errors of `½θᵀΓθ − gᵀθ` against the finite-difference score on
/// one random instance: for the difference between two random parameters
/// (any θ-free constant cancels) and for the level itself.
pub fn oracle_errors(family: FamilySpec, n: usize, m: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nonneg = family.domain == Domain::NonnegativeOrthant;
    let x = random_data(n, m, nonneg, &mut rng);
    let loss = build_loss(family, &x).unwrap();
    let (t1, f1) = random_model(family, m, &mut rng);
    let (t2, f2) = random_model(family, m, &mut rng);
    let (q1, q2) = (quadratic_minus_linear(&loss, &t1), quadratic_minus_linear(&loss, &t2));
    let (s1, s2) = (empirical_score(&*f1, &x, nonneg), empirical_score(&*f2, &x, nonneg));
    (rel_err(q1 - q2, s1 - s2), rel_err(q1, s1))
}
