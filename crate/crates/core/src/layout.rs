//! Parameter layouts for pairwise interaction families.
//!
//! A family with `A` pairwise statistic types and `L` singleton statistic
//! types over `m` variables has a block-diagonal score matching quadratic with
//! `m` blocks of size `A·m + L`. Block `j` holds column `j` of each interaction
//! matrix followed by the `j`-th singleton parameters: index `a·m + k` is
//! `Θ⁽ᵃ⁾[k, j]` and index `A·m + l` is `θ⁽ˡ⁾[j]`.
//!
//! Symmetry is structural: solvers work on reduced coordinates, one per
//! unordered pair `j ≤ k` and statistic, and every reduced pair coordinate
//! occupies two positions of the full vector (one in block `j`, one in block
//! `k`).

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Float, Result};

/// One reduced coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Coord {
    /// Interaction `Θ⁽ˢᵗᵃᵗ⁾[j, k]` with `j ≤ k`.
    Pair { stat: usize, j: usize, k: usize },
    /// Singleton parameter `θ⁽ˢᵗᵃᵗ⁾[j]`.
    Single { stat: usize, j: usize },
}

impl Coord {
    pub fn is_offdiagonal(&self) -> bool {
        matches!(self, Coord::Pair { j, k, .. } if j != k)
    }

    pub fn pair(&self) -> Option<(usize, usize)> {
        match *self {
            Coord::Pair { j, k, .. } => Some((j, k)),
            Coord::Single { .. } => None,
        }
    }
}

/// Location of a full-vector entry: `(block, index within block)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Position {
    pub block: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStat {
    pub name: String,
    /// The diagonal of this interaction matrix is structurally zero.
    pub zero_diagonal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    m: usize,
    pair_stats: Vec<PairStat>,
    single_stats: Vec<String>,
    coords: Vec<Coord>,
    positions: Vec<(Position, Option<Position>)>,
    pair_lookup: Vec<Option<usize>>,
}

impl Layout {
    pub fn new(m: usize, pair_stats: Vec<PairStat>, single_stats: Vec<String>) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("layout needs m >= 1".into()));
        }
        let a_count = pair_stats.len();
        let mut coords = Vec::new();
        let mut positions = Vec::new();
        let mut pair_lookup = vec![None; a_count * m * m];
        for (a, stat) in pair_stats.iter().enumerate() {
            for j in 0..m {
                for k in j..m {
                    if j == k && stat.zero_diagonal {
                        continue;
                    }
                    let r = coords.len();
                    pair_lookup[a * m * m + j * m + k] = Some(r);
                    pair_lookup[a * m * m + k * m + j] = Some(r);
                    coords.push(Coord::Pair { stat: a, j, k });
                    let first = Position { block: k, index: a * m + j };
                    let second = (j != k).then_some(Position { block: j, index: a * m + k });
                    positions.push((first, second));
                }
            }
        }
        for l in 0..single_stats.len() {
            for j in 0..m {
                coords.push(Coord::Single { stat: l, j });
                positions.push((Position { block: j, index: a_count * m + l }, None));
            }
        }
        Ok(Self { m, pair_stats, single_stats, coords, positions, pair_lookup })
    }

    /// Symmetric `m × m` interaction matrix, the centered Gaussian layout.
    pub fn symmetric(m: usize) -> Self {
        Self::new(m, vec![PairStat { name: "K".into(), zero_diagonal: false }], vec![])
            .expect("m >= 1")
    }

    /// Interaction matrix plus one singleton vector (location family).
    pub fn with_location(m: usize) -> Self {
        Self::new(
            m,
            vec![PairStat { name: "K".into(), zero_diagonal: false }],
            vec!["eta".into()],
        )
        .expect("m >= 1")
    }

    /// `(B, B⁽²⁾, b)` layout of the normal-conditionals family.
    pub fn normal_conditionals(m: usize) -> Self {
        Self::new(
            m,
            vec![
                PairStat { name: "B".into(), zero_diagonal: false },
                PairStat { name: "B2".into(), zero_diagonal: true },
            ],
            vec!["b".into()],
        )
        .expect("m >= 1")
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn pair_stats(&self) -> &[PairStat] {
        &self.pair_stats
    }

    pub fn single_stats(&self) -> &[String] {
        &self.single_stats
    }

    pub fn num_pair_stats(&self) -> usize {
        self.pair_stats.len()
    }

    pub fn num_single_stats(&self) -> usize {
        self.single_stats.len()
    }

    pub fn block_dim(&self) -> usize {
        self.pair_stats.len() * self.m + self.single_stats.len()
    }

    pub fn full_dim(&self) -> usize {
        self.m * self.block_dim()
    }

    pub fn num_coords(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn coord(&self, r: usize) -> Coord {
        self.coords[r]
    }

    /// Full-vector positions of reduced coordinate `r` (one or two).
    pub fn positions(&self, r: usize) -> impl Iterator<Item = Position> + '_ {
        let (first, second) = self.positions[r];
        std::iter::once(first).chain(second)
    }

    pub fn is_offdiagonal(&self, r: usize) -> bool {
        self.coords[r].is_offdiagonal()
    }

    /// Reduced index of `Θ⁽ˢᵗᵃᵗ⁾[j, k]` in either order.
    pub fn pair_index(&self, stat: usize, j: usize, k: usize) -> Option<usize> {
        if stat >= self.pair_stats.len() || j >= self.m || k >= self.m {
            return None;
        }
        self.pair_lookup[stat * self.m * self.m + j * self.m + k]
    }

    pub fn single_index(&self, stat: usize, j: usize) -> Option<usize> {
        if stat >= self.single_stats.len() || j >= self.m {
            return None;
        }
        let pair_count = self.coords.len() - self.single_stats.len() * self.m;
        Some(pair_count + stat * self.m + j)
    }

    /// Reduced coordinate stored at a full-vector position, if any.
    pub fn coord_at(&self, pos: Position) -> Option<usize> {
        let a_count = self.pair_stats.len();
        if pos.index < a_count * self.m {
            self.pair_index(pos.index / self.m, pos.index % self.m, pos.block)
        } else {
            self.single_index(pos.index - a_count * self.m, pos.block)
        }
    }

    /// Reduced coordinates of all off-diagonal pairs `(j, k)`, `j < k`,
    /// grouped by pair: one entry per statistic type.
    pub fn pair_groups(&self) -> Vec<((usize, usize), Vec<usize>)> {
        let mut out = Vec::new();
        for j in 0..self.m {
            for k in (j + 1)..self.m {
                let members: Vec<usize> = (0..self.pair_stats.len())
                    .filter_map(|a| self.pair_index(a, j, k))
                    .collect();
                out.push(((j, k), members));
            }
        }
        out
    }
}

/// Parameter values in reduced coordinates of a [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector<T: Float> {
    layout: Arc<Layout>,
    values: Vec<T>,
}

/// Serialized form: one dense symmetric matrix per pairwise statistic and
/// one vector per singleton statistic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterJson {
    pub m: usize,
    pub pair_stats: Vec<String>,
    pub matrices: Vec<Vec<Vec<f64>>>,
    pub single_stats: Vec<String>,
    pub singles: Vec<Vec<f64>>,
}

impl<T: Float> ParameterVector<T> {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![T::zero(); layout.num_coords()];
        Self { layout, values }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.num_coords() {
            return Err(Error::Contract(format!(
                "parameter vector has {} entries, layout needs {}",
                values.len(),
                layout.num_coords()
            )));
        }
        Ok(Self { layout, values })
    }

    /// Builds from one symmetric matrix per pairwise statistic and one vector
    /// per singleton statistic. Only the upper triangle of each matrix is read;
    /// structurally zero diagonals must be zero.
    pub fn from_parts(layout: Arc<Layout>, matrices: &[DMatrix<T>], singles: &[Vec<T>]) -> Result<Self> {
        let m = layout.m();
        if matrices.len() != layout.num_pair_stats() || singles.len() != layout.num_single_stats() {
            return Err(Error::Contract("parameter parts do not match layout".into()));
        }
        let mut out = Self::zeros(layout.clone());
        for (a, mat) in matrices.iter().enumerate() {
            if mat.nrows() != m || mat.ncols() != m {
                return Err(Error::Contract(format!("matrix {a} is not {m}x{m}")));
            }
            for j in 0..m {
                for k in j..m {
                    match layout.pair_index(a, j, k) {
                        Some(r) => out.values[r] = mat[(j, k)],
                        None if mat[(j, k)] != T::zero() => {
                            return Err(Error::Contract(format!(
                                "statistic {a} has a structurally zero diagonal but entry ({j},{j}) is nonzero"
                            )))
                        }
                        None => {}
                    }
                }
            }
        }
        for (l, v) in singles.iter().enumerate() {
            if v.len() != m {
                return Err(Error::Contract(format!("singleton vector {l} has wrong length")));
            }
            for (j, x) in v.iter().enumerate() {
                out.values[layout.single_index(l, j).unwrap()] = *x;
            }
        }
        Ok(out)
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Exactly symmetric matrix view of pairwise statistic `stat`.
    pub fn matrix(&self, stat: usize) -> DMatrix<T> {
        let m = self.layout.m();
        DMatrix::from_fn(m, m, |j, k| {
            self.layout.pair_index(stat, j, k).map_or(T::zero(), |r| self.values[r])
        })
    }

    pub fn singles(&self, stat: usize) -> Vec<T> {
        (0..self.layout.m())
            .map(|j| self.values[self.layout.single_index(stat, j).unwrap()])
            .collect()
    }

    /// Full block-layout vector of dimension `m · (A·m + L)`.
    pub fn full_vec(&self) -> Vec<T> {
        let p = self.layout.block_dim();
        let mut full = vec![T::zero(); self.layout.full_dim()];
        for (r, v) in self.values.iter().enumerate() {
            for pos in self.layout.positions(r) {
                full[pos.block * p + pos.index] = *v;
            }
        }
        full
    }

    /// Off-diagonal pairs `(j, k)`, `j < k`, where some statistic exceeds
    /// `zero_tol` in magnitude.
    pub fn edge_support(&self, zero_tol: T) -> BTreeSet<(usize, usize)> {
        self.values
            .iter()
            .enumerate()
            .filter(|(r, v)| self.layout.is_offdiagonal(*r) && v.abs() > zero_tol)
            .filter_map(|(r, _)| self.layout.coord(r).pair())
            .collect()
    }

    /// `Σ_{j≠k} |θ_jk|` summed over pairwise statistics (each unordered pair
    /// counted twice).
    pub fn offdiag_l1(&self) -> T {
        let two = T::lit(2.0);
        self.values
            .iter()
            .enumerate()
            .filter(|(r, _)| self.layout.is_offdiagonal(*r))
            .map(|(_, v)| two * v.abs())
            .sum()
    }

    pub fn to_json(&self) -> ParameterJson {
        let m = self.layout.m();
        ParameterJson {
            m,
            pair_stats: self.layout.pair_stats().iter().map(|s| s.name.clone()).collect(),
            matrices: (0..self.layout.num_pair_stats())
                .map(|a| {
                    let mat = self.matrix(a);
                    (0..m)
                        .map(|j| (0..m).map(|k| mat[(j, k)].to_f64_lossy()).collect())
                        .collect()
                })
                .collect(),
            single_stats: self.layout.single_stats().to_vec(),
            singles: (0..self.layout.num_single_stats())
                .map(|l| self.singles(l).into_iter().map(Float::to_f64_lossy).collect())
                .collect(),
        }
    }

    pub fn from_json(layout: Arc<Layout>, json: &ParameterJson) -> Result<Self> {
        let matrices: Vec<DMatrix<T>> = json
            .matrices
            .iter()
            .map(|rows| {
                let m = rows.len();
                DMatrix::from_fn(m, m, |j, k| T::lit(rows[j].get(k).copied().unwrap_or(f64::NAN)))
            })
            .collect();
        let singles: Vec<Vec<T>> =
            json.singles.iter().map(|v| v.iter().map(|x| T::lit(*x)).collect()).collect();
        Self::from_parts(layout, &matrices, &singles)
    }
}
