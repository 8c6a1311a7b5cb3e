use crate::layout::{Layout, PairStat};
use crate::{Float, Result};

/// Partial derivatives at a point `x` with respect to coordinate `x_j`.
///
/// `h` and `hjj` are the first and second partials of the block-`j`
/// statistic vector, arranged so that `∂_j log q(x) = hᵀθ_j + ∂_j b(x)` where
/// `θ_j` is block `j` of the parameter. `db` and `d2b` are the partials of the
/// base-measure term `b(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatPartials<T> {
    pub h: Vec<T>,
    pub hjj: Vec<T>,
    pub db: T,
    pub d2b: T,
}

/// A pairwise exponential family described through its statistic partials.
pub trait PairwiseStats<T: Float> {
    fn layout(&self, m: usize) -> Result<Layout>;

    fn partials(&self, x: &[T], j: usize) -> StatPartials<T>;
}

/// `log q(x) = −½ xᵀKx` (centered Gaussian / truncated Gaussian).
#[derive(Debug, Clone, Copy, Default)]
pub struct SymmetricQuadraticStats;

impl<T: Float> PairwiseStats<T> for SymmetricQuadraticStats {
    fn layout(&self, m: usize) -> Result<Layout> {
        Ok(Layout::symmetric(m))
    }

    fn partials(&self, x: &[T], j: usize) -> StatPartials<T> {
        let m = x.len();
        let h = x.iter().map(|v| -*v).collect();
        let mut hjj = vec![T::zero(); m];
        hjj[j] = -T::one();
        StatPartials { h, hjj, db: T::zero(), d2b: T::zero() }
    }
}

/// `log q(x) = −½ xᵀKx + ηᵀx`, a Gaussian with unknown location (`η = Kμ`).
#[derive(Debug, Clone, Copy, Default)]
pub struct LocationGaussianStats;

impl<T: Float> PairwiseStats<T> for LocationGaussianStats {
    fn layout(&self, m: usize) -> Result<Layout> {
        Ok(Layout::with_location(m))
    }

    fn partials(&self, x: &[T], j: usize) -> StatPartials<T> {
        let m = x.len();
        let mut h: Vec<T> = x.iter().map(|v| -*v).collect();
        h.push(T::one());
        let mut hjj = vec![T::zero(); m + 1];
        hjj[j] = -T::one();
        StatPartials { h, hjj, db: T::zero(), d2b: T::zero() }
    }
}

/// `log q(x) = Σ_{j≠k} β⁽²⁾_jk x_j²x_k² + Σ_{j,k} β_jk x_j x_k + Σ_j β_j x_j`.
///
/// Both sums over pairs run over ordered pairs, so `∂_j log q =
/// 2(Bx)_j + 4 x_j Σ_{k≠j} β⁽²⁾_jk x_k² + β_j`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalConditionalStats;

impl<T: Float> PairwiseStats<T> for NormalConditionalStats {
    fn layout(&self, m: usize) -> Result<Layout> {
        Ok(Layout::normal_conditionals(m))
    }

    fn partials(&self, x: &[T], j: usize) -> StatPartials<T> {
        let m = x.len();
        let two = T::lit(2.0);
        let four = T::lit(4.0);
        let mut h = vec![T::zero(); 2 * m + 1];
        let mut hjj = vec![T::zero(); 2 * m + 1];
        for k in 0..m {
            h[k] = two * x[k];
            if k != j {
                let xk2 = x[k] * x[k];
                h[m + k] = four * x[j] * xk2;
                hjj[m + k] = four * xk2;
            }
        }
        hjj[j] = two;
        h[2 * m] = T::one();
        StatPartials { h, hjj, db: T::zero(), d2b: T::zero() }
    }
}

type PartialFn<T> = dyn Fn(&[T], usize) -> Vec<T> + Send + Sync;
type BaseFn<T> = dyn Fn(&[T], usize) -> (T, T) + Send + Sync;

/// Family given by user callbacks. Each callback returns a vector that must
/// have the layout's block dimension; mismatches are contract errors at build
/// time.
pub struct ClosureStats<T: Float> {
    pair_stats: Vec<PairStat>,
    single_stats: Vec<String>,
    h: Box<PartialFn<T>>,
    hjj: Box<PartialFn<T>>,
    base: Option<Box<BaseFn<T>>>,
}

impl<T: Float> ClosureStats<T> {
    pub fn new(
        pair_stats: Vec<PairStat>,
        single_stats: Vec<String>,
        h: impl Fn(&[T], usize) -> Vec<T> + Send + Sync + 'static,
        hjj: impl Fn(&[T], usize) -> Vec<T> + Send + Sync + 'static,
    ) -> Self {
        Self { pair_stats, single_stats, h: Box::new(h), hjj: Box::new(hjj), base: None }
    }

    /// Adds base-measure partials `(∂_j b, ∂_jj b)`.
    pub fn with_base(mut self, base: impl Fn(&[T], usize) -> (T, T) + Send + Sync + 'static) -> Self {
        self.base = Some(Box::new(base));
        self
    }
}

impl<T: Float> PairwiseStats<T> for ClosureStats<T> {
    fn layout(&self, m: usize) -> Result<Layout> {
        Layout::new(m, self.pair_stats.clone(), self.single_stats.clone())
    }

    fn partials(&self, x: &[T], j: usize) -> StatPartials<T> {
        let (db, d2b) = self.base.as_ref().map_or((T::zero(), T::zero()), |f| f(x, j));
        StatPartials { h: (self.h)(x, j), hjj: (self.hjj)(x, j), db, d2b }
    }
}
