use crate::layout::ParameterVector;
use crate::losses::QuadraticLoss;
use crate::{Error, Float, Result};

use super::{kkt_from_gradient, soft_threshold, CdOptions, Estimate, PenaltyMode, PenaltySpec, Unit};

/// Running state: reduced θ plus the block products `Γ_b θ_b`, kept in sync
/// so that a coordinate gradient costs one or two lookups.
struct Work<'a, T: Float> {
    loss: &'a QuadraticLoss<T>,
    theta: Vec<T>,
    prods: Vec<Vec<T>>,
    hdiag: Vec<T>,
}

impl<'a, T: Float> Work<'a, T> {
    fn new(loss: &'a QuadraticLoss<T>, theta: Vec<T>) -> Self {
        let layout = loss.layout();
        let full = ParameterVector::from_values(layout.clone(), theta.clone())
            .expect("theta matches layout")
            .full_vec();
        let prods = loss.block_products(&full);
        let hdiag = (0..layout.num_coords()).map(|r| loss.hessian_entry(r, r)).collect();
        Self { loss, theta, prods, hdiag }
    }

    #[inline]
    fn grad(&self, r: usize) -> T {
        self.loss
            .layout()
            .positions(r)
            .map(|pos| self.prods[pos.block][pos.index] - self.loss.g_at(pos))
            .sum()
    }

    /// Sets `θ_r` and returns `|change|`.
    fn set(&mut self, r: usize, value: T) -> T {
        let delta = value - self.theta[r];
        if delta == T::zero() {
            return T::zero();
        }
        self.theta[r] = value;
        for pos in self.loss.layout().positions(r) {
            let col = self.loss.block(pos.block).column(pos.index);
            for (o, c) in self.prods[pos.block].iter_mut().zip(col.iter()) {
                *o += delta * *c;
            }
        }
        delta.abs()
    }

    fn is_active(&self, unit: &Unit<T>) -> bool {
        match *unit {
            Unit::Free(_) => true,
            Unit::Single(r, _) => self.theta[r] != T::zero(),
            Unit::Pair([a, b], _) => self.theta[a] != T::zero() || self.theta[b] != T::zero(),
        }
    }

    /// Exact minimization over one unit; returns the ℓ1 change.
    fn update(&mut self, unit: &Unit<T>, lambda: T) -> T {
        match *unit {
            Unit::Free(r) => {
                let h = self.hdiag[r];
                if !(h > T::zero()) {
                    return T::zero();
                }
                let v = self.theta[r] - self.grad(r) / h;
                self.set(r, v)
            }
            Unit::Single(r, w) => {
                let h = self.hdiag[r];
                if !(h > T::zero()) {
                    return T::zero();
                }
                let z = h * self.theta[r] - self.grad(r);
                self.set(r, soft_threshold(z, lambda * w) / h)
            }
            Unit::Pair([a, b], w) => {
                let haa = self.hdiag[a];
                let hbb = self.hdiag[b];
                let hab = self.loss.hessian_entry(a, b);
                let (ta, tb) = (self.theta[a], self.theta[b]);
                // linear term of the local quadratic ½vᵀHv − zᵀv
                let za = haa * ta + hab * tb - self.grad(a);
                let zb = hab * ta + hbb * tb - self.grad(b);
                match group_step([[haa, hab], [hab, hbb]], [za, zb], lambda * w) {
                    Some([va, vb]) => self.set(a, va) + self.set(b, vb),
                    None => T::zero(),
                }
            }
        }
    }
}

/// Minimizer of `½vᵀHv − zᵀv + t‖v‖` for a 2×2 PSD `H`. Returns `None` when
/// the subproblem is unbounded below or degenerate.
pub(crate) fn group_step<T: Float>(h: [[T; 2]; 2], z: [T; 2], t: T) -> Option<[T; 2]> {
    let znorm = (z[0] * z[0] + z[1] * z[1]).sqrt();
    if znorm <= t {
        return Some([T::zero(), T::zero()]);
    }
    let (a, c, d) = (h[0][0], h[0][1], h[1][1]);
    let half = T::lit(0.5);
    let mid = (a + d) * half;
    let rad = (((a - d) * half).powi(2) + c * c).sqrt();
    let e = [(mid + rad).max(T::zero()), (mid - rad).max(T::zero())];
    let q1 = if rad == T::zero() {
        [T::one(), T::zero()]
    } else {
        let u = [c, e[0] - a];
        let v = [e[0] - d, c];
        let pick = if u[0].abs() + u[1].abs() >= v[0].abs() + v[1].abs() { u } else { v };
        let n = (pick[0] * pick[0] + pick[1] * pick[1]).sqrt();
        [pick[0] / n, pick[1] / n]
    };
    let q2 = [-q1[1], q1[0]];
    let coef = [q1[0] * z[0] + q1[1] * z[1], q2[0] * z[0] + q2[1] * z[1]];
    let tiny = T::lit(1e-14) * e[0].max(T::min_positive_value());
    // A flat direction with enough pull makes the problem unbounded.
    for i in 0..2 {
        if e[i] <= tiny && coef[i].abs() >= t {
            return None;
        }
    }
    if e[0] <= tiny {
        return None;
    }
    // μ‖v(μ)‖ = t with v(μ) = Σ coef_i/(e_i+μ) q_i; the left side increases in μ.
    let f = |mu: T| {
        let s: T = (0..2).map(|i| (mu * coef[i] / (e[i] + mu)).powi(2)).sum();
        s.sqrt() - t
    };
    let mut lo = T::zero();
    let mut hi = t.max(e[0]);
    let mut guard = 0;
    while f(hi) < T::zero() {
        hi = hi * T::lit(2.0);
        guard += 1;
        if guard > 2000 {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = (lo + hi) * half;
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = (lo + hi) * half;
    let s = [coef[0] / (e[0] + mu), coef[1] / (e[1] + mu)];
    Some([s[0] * q1[0] + s[1] * q2[0], s[0] * q1[1] + s[1] * q2[1]])
}

/// One pass over `units`; returns the ℓ1 change.
fn sweep<T: Float>(work: &mut Work<'_, T>, units: &[Unit<T>], lambda: T, active_only: bool) -> T {
    let mut change = T::zero();
    for unit in units {
        if active_only && !work.is_active(unit) {
            continue;
        }
        change += work.update(unit, lambda);
    }
    change
}

/// Cyclic coordinate descent with active-set cycling.
///
/// Full sweeps alternate with sweeps over the currently nonzero units; the
/// solver reports convergence only after a full sweep whose ℓ1 change is at
/// most `tol`. Running out of sweeps is not an error: the estimate comes back
/// with `converged == false`.
pub fn solve_cd<T: Float>(
    loss: &QuadraticLoss<T>,
    penalty: &PenaltySpec<T>,
    lambda: T,
    options: &CdOptions<T>,
    warm_start: Option<&ParameterVector<T>>,
) -> Result<Estimate<T>> {
    options.validate(lambda)?;
    penalty.check_layout(loss.layout())?;
    let units = penalty.units()?;
    let theta0 = match warm_start {
        Some(w) => {
            if w.values().len() != loss.layout().num_coords() {
                return Err(Error::Contract("warm start does not match loss layout".into()));
            }
            w.values().to_vec()
        }
        None => vec![T::zero(); loss.layout().num_coords()],
    };
    let mut work = Work::new(loss, theta0);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.t_max {
        let change = sweep(&mut work, &units, lambda, false);
        iterations += 1;
        if change <= options.tol {
            converged = true;
            break;
        }
        while iterations < options.t_max {
            let inner = sweep(&mut work, &units, lambda, true);
            iterations += 1;
            if inner <= options.tol {
                break;
            }
        }
    }
    let grad: Vec<T> = (0..work.theta.len()).map(|r| work.grad(r)).collect();
    let kkt = kkt_from_gradient(&units, &work.theta, &grad, lambda);
    Ok(Estimate {
        theta: ParameterVector::from_values(loss.layout().clone(), work.theta)?,
        lambda,
        kkt_residual: kkt,
        iterations,
        converged,
    })
}

/// Block coordinate descent for a group penalty with groups of size at most
/// two.
pub fn solve_group_cd<T: Float>(
    loss: &QuadraticLoss<T>,
    penalty: &PenaltySpec<T>,
    lambda: T,
    options: &CdOptions<T>,
    warm_start: Option<&ParameterVector<T>>,
) -> Result<Estimate<T>> {
    if penalty.mode() != PenaltyMode::Group {
        return Err(Error::InvalidArgument("solve_group_cd needs a group penalty".into()));
    }
    solve_cd(loss, penalty, lambda, options, warm_start)
}
