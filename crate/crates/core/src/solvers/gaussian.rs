use std::sync::Arc;

use nalgebra::DMatrix;

use crate::layout::{Layout, ParameterVector};
use crate::linalg::max_asymmetry;
use crate::{Error, Float, Result};

use super::{kkt_from_gradient, soft_threshold, CdOptions, Estimate, PenaltySpec, Unit};

/// Coordinate descent for the Gaussian loss `−tr(K) + ½ tr(KKW)` with the
/// off-diagonal ℓ1 penalty, working directly on `K` and `P = W K`.
///
/// Diagonal update: `κ_jj ← κ_jj − (P_jj − 1)/w_jj`. Pair update with
/// curvature `c = w_jj + w_kk` and gradient `P_jk + P_kj`:
/// `κ_jk ← Soft(c κ_jk − grad, 2λ)/c`. Visits coordinates in the same order
/// as [`super::solve_cd`] on the equivalent generic loss.
pub fn solve_cd_gaussian<T: Float>(
    w: &DMatrix<T>,
    lambda: T,
    options: &CdOptions<T>,
    warm_start: Option<&ParameterVector<T>>,
) -> Result<Estimate<T>> {
    options.validate(lambda)?;
    let m = w.nrows();
    if m == 0 || w.ncols() != m {
        return Err(Error::InvalidArgument(format!("W must be square and nonempty, got {}x{}", m, w.ncols())));
    }
    let scale = (0..m).map(|j| w[(j, j)].abs()).fold(T::zero(), |a, b| a.max(b));
    if max_asymmetry(w) > T::lit(1e-12) * scale.max(T::one()) {
        return Err(Error::InvalidArgument("W is not symmetric".into()));
    }
    if let Some(j) = (0..m).find(|&j| !(w[(j, j)] > T::zero())) {
        return Err(Error::Rank { block: Some(j), detail: format!("w_{j}{j} is not positive") });
    }
    let layout = Arc::new(Layout::symmetric(m));
    let mut k = DMatrix::<T>::zeros(m, m);
    if let Some(ws) = warm_start {
        if ws.layout().num_coords() != layout.num_coords() {
            return Err(Error::Contract("warm start does not match dimension".into()));
        }
        k = ws.matrix(0);
    }
    let mut p = w * &k;
    let two_lambda = T::lit(2.0) * lambda;

    // One diagonal or pair update; returns |δ|.
    let update = |k: &mut DMatrix<T>, p: &mut DMatrix<T>, j: usize, l: usize| -> T {
        let old = k[(j, l)];
        let new = if j == l {
            old - (p[(j, j)] - T::one()) / w[(j, j)]
        } else {
            let curv = w[(j, j)] + w[(l, l)];
            let grad = p[(j, l)] + p[(l, j)];
            soft_threshold(curv * old - grad, two_lambda) / curv
        };
        let delta = new - old;
        if delta == T::zero() {
            return T::zero();
        }
        k[(j, l)] = new;
        k[(l, j)] = new;
        if j == l {
            axpy_column(p, j, delta, w, j);
        } else {
            axpy_column(p, l, delta, w, j);
            axpy_column(p, j, delta, w, l);
        }
        delta.abs()
    };

    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.t_max {
        let mut change = T::zero();
        for j in 0..m {
            for l in j..m {
                change += update(&mut k, &mut p, j, l);
            }
        }
        iterations += 1;
        if change <= options.tol {
            converged = true;
            break;
        }
        while iterations < options.t_max {
            let mut inner = T::zero();
            for j in 0..m {
                for l in j..m {
                    if j == l || k[(j, l)] != T::zero() {
                        inner += update(&mut k, &mut p, j, l);
                    }
                }
            }
            iterations += 1;
            if inner <= options.tol {
                break;
            }
        }
    }

    let theta = ParameterVector::from_parts(layout.clone(), &[k], &[])?;
    let grad: Vec<T> = layout
        .coords()
        .iter()
        .map(|c| {
            let (j, l) = c.pair().expect("symmetric layout has only pairs");
            if j == l {
                p[(j, j)] - T::one()
            } else {
                p[(j, l)] + p[(l, j)]
            }
        })
        .collect();
    let units = PenaltySpec::offdiag_l1(&layout).units()?;
    debug_assert!(units.iter().all(|u| !matches!(u, Unit::Pair(..))));
    let kkt = kkt_from_gradient(&units, theta.values(), &grad, lambda);
    Ok(Estimate { theta, lambda, kkt_residual: kkt, iterations, converged })
}

/// `P[:, dst] += δ · W[:, src]`.
#[inline]
fn axpy_column<T: Float>(p: &mut DMatrix<T>, dst: usize, delta: T, w: &DMatrix<T>, src: usize) {
    let wc = w.column(src);
    for (o, c) in p.column_mut(dst).iter_mut().zip(wc.iter()) {
        *o += delta * *c;
    }
}
