//! Deterministic 1:1 matching of controls to treated individuals, on a scalar score or on
//! covariates by Mahalanobis distance, plus random subsampling of the larger arm.
//!
//! Ties between equal-distance candidates go to the lower original index.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{Arm, MatchedPairSet, TrialDataset};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    #[default]
    Scalar,
    Mahalanobis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchAlgorithm {
    /// Minimum total distance (assignment problem).
    #[default]
    Optimal,
    /// Rank pairing for scalar scores; nearest available neighbour otherwise.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchSpec {
    pub mode: MatchMode,
    pub algorithm: MatchAlgorithm,
    /// Seed for subsampling the larger arm.
    pub seed: u64,
}

impl Default for MatchSpec {
    fn default() -> Self {
        MatchSpec {
            mode: MatchMode::Scalar,
            algorithm: MatchAlgorithm::Optimal,
            seed: 20_230_101,
        }
    }
}

/// What one side of the matching is described by.
#[derive(Debug, Clone, Copy)]
pub enum MatchSide<'a> {
    Scores(&'a [f64]),
    Covariates(ArrayView2<'a, f64>),
}

impl MatchSide<'_> {
    fn len(&self) -> usize {
        match self {
            MatchSide::Scores(s) => s.len(),
            MatchSide::Covariates(x) => x.nrows(),
        }
    }
}

/// Pair controls with treated individuals. Returns `min(n0, n1)` pairs of
/// `(control position, treated position)`.
pub fn match_pairs(
    spec: &MatchSpec,
    controls: MatchSide<'_>,
    treated: MatchSide<'_>,
) -> Result<MatchedPairSet> {
    if controls.len() == 0 || treated.len() == 0 {
        return Err(Error::Invalid("matching needs both sides non-empty".into()));
    }
    match (spec.mode, controls, treated) {
        (MatchMode::Scalar, MatchSide::Scores(c), MatchSide::Scores(t)) => {
            if c.iter().chain(t).any(|v| v.is_nan()) {
                return Err(Error::InvalidData("NaN matching score".into()));
            }
            Ok(match_scalar(c, t, spec.algorithm))
        }
        (MatchMode::Mahalanobis, MatchSide::Covariates(c), MatchSide::Covariates(t)) => {
            match_mahalanobis(c, t, spec.algorithm)
        }
        _ => Err(Error::Invalid(
            "match mode does not agree with the kind of input supplied".into(),
        )),
    }
}

/// Matching on a scalar score with absolute-difference distance.
pub fn match_scalar(controls: &[f64], treated: &[f64], algorithm: MatchAlgorithm) -> MatchedPairSet {
    let pairs = if controls.len() == treated.len() {
        // For equal sides and |x - y| cost, pairing by rank is an optimal assignment.
        rank_pairs(controls, treated)
    } else {
        match algorithm {
            MatchAlgorithm::Optimal => {
                let cost = Array2::from_shape_fn((controls.len(), treated.len()), |(i, j)| {
                    (controls[i] - treated[j]).abs()
                });
                optimal_assignment(cost.view())
            }
            MatchAlgorithm::Greedy => {
                let cost = Array2::from_shape_fn((controls.len(), treated.len()), |(i, j)| {
                    (controls[i] - treated[j]).abs()
                });
                greedy_assignment(cost.view())
            }
        }
    };
    let total = pairs
        .iter()
        .map(|&(i, j)| (controls[i] - treated[j]).abs())
        .sum();
    MatchedPairSet {
        pairs,
        match_scalar: "score".into(),
        total_distance: total,
    }
}

fn rank_order(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    idx
}

fn rank_pairs(controls: &[f64], treated: &[f64]) -> Vec<(usize, usize)> {
    rank_order(controls)
        .into_iter()
        .zip(rank_order(treated))
        .collect()
}

/// Mahalanobis distances between all control/treated rows, with the covariance matrix
/// estimated from both sides pooled.
pub fn mahalanobis_distances(
    controls: ArrayView2<'_, f64>,
    treated: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    let p = controls.ncols();
    if p == 0 || treated.ncols() != p {
        return Err(Error::Dimension(format!(
            "controls have {p} covariates, treated have {}",
            treated.ncols()
        )));
    }
    let all = concatenate(Axis(0), &[controls, treated]).expect("same column count");
    let n = all.nrows();
    if n < 2 {
        return Err(Error::SingularCovariance);
    }
    let means = all.mean_axis(Axis(0)).expect("non-empty");
    let mut cov = vec![0.0; p * p];
    for row in all.outer_iter() {
        for r in 0..p {
            for c in 0..p {
                cov[r * p + c] += (row[r] - means[r]) * (row[c] - means[c]);
            }
        }
    }
    cov.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    let chol = Cholesky::factor(&cov, p, 1e-12).map_err(|_| Error::SingularCovariance)?;
    let mut buf = vec![0.0; p];
    Ok(Array2::from_shape_fn((controls.nrows(), treated.nrows()), |(i, j)| {
        for k in 0..p {
            buf[k] = controls[[i, k]] - treated[[j, k]];
        }
        chol.forward(&mut buf);
        buf.iter().map(|v| v * v).sum::<f64>().sqrt()
    }))
}

pub fn match_mahalanobis(
    controls: ArrayView2<'_, f64>,
    treated: ArrayView2<'_, f64>,
    algorithm: MatchAlgorithm,
) -> Result<MatchedPairSet> {
    let dist = mahalanobis_distances(controls, treated)?;
    let pairs = match algorithm {
        MatchAlgorithm::Optimal => optimal_assignment(dist.view()),
        MatchAlgorithm::Greedy => greedy_assignment(dist.view()),
    };
    let total = pairs.iter().map(|&(i, j)| dist[[i, j]]).sum();
    Ok(MatchedPairSet {
        pairs,
        match_scalar: "mahalanobis".into(),
        total_distance: total,
    })
}

/// Nearest available neighbour: each member of the smaller side, in index order, takes
/// the closest unused member of the other side.
pub fn greedy_assignment(cost: ArrayView2<'_, f64>) -> Vec<(usize, usize)> {
    let (r, c) = cost.dim();
    let transpose = r > c;
    let (rows, cols) = if transpose { (c, r) } else { (r, c) };
    let at = |i: usize, j: usize| if transpose { cost[[j, i]] } else { cost[[i, j]] };
    let mut used = vec![false; cols];
    let mut out = Vec::with_capacity(rows);
    for i in 0..rows {
        let mut best: Option<(usize, f64)> = None;
        for (j, taken) in used.iter().enumerate() {
            if *taken {
                continue;
            }
            let d = at(i, j);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        let (j, _) = best.expect("cols >= rows");
        used[j] = true;
        out.push(if transpose { (j, i) } else { (i, j) });
    }
    out.sort_unstable();
    out
}

/// Minimum-cost assignment of the smaller side into the larger (Hungarian algorithm with
/// potentials, O(n^2 m)). Returns `(row, col)` pairs sorted by row.
pub fn optimal_assignment(cost: ArrayView2<'_, f64>) -> Vec<(usize, usize)> {
    let (r, c) = cost.dim();
    let transpose = r > c;
    let (n, m) = if transpose { (c, r) } else { (r, c) };
    let at = |i: usize, j: usize| if transpose { cost[[j, i]] } else { cost[[i, j]] };

    // 1-based arrays; index 0 is the virtual row/column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| {
            if transpose {
                (j - 1, p[j] - 1)
            } else {
                (p[j] - 1, j - 1)
            }
        })
        .collect();
    out.sort_unstable();
    out
}

/// Index sets that keep the smaller arm whole and subsample the larger arm to equal size.
/// Balanced data yields the full index set once, whatever `repeats` is.
pub fn balance_subsample(d: &TrialDataset, seed: u64, repeats: usize) -> Vec<Vec<usize>> {
    let controls = d.arm_indices(Arm::Control);
    let treated = d.arm_indices(Arm::Treated);
    let (small, large) = if controls.len() < treated.len() {
        (controls, treated)
    } else {
        (treated, controls)
    };
    match subsample_positions(small.len(), large.len(), seed, repeats) {
        None => vec![(0..d.n()).collect()],
        Some(draws) => draws
            .into_iter()
            .map(|pos| {
                let mut set = small.clone();
                set.extend(pos.into_iter().map(|k| large[k]));
                set.sort_unstable();
                set
            })
            .collect(),
    }
}

/// Positions into the larger arm drawn for each subsample, or `None` when the arms are
/// already balanced.
pub(crate) fn subsample_positions(small: usize, large: usize, seed: u64, repeats: usize) -> Option<Vec<Vec<usize>>> {
    if small == large {
        return None;
    }
    let mut rng = rng::stream(seed, &[rng::tag("balance")]);
    Some(
        (0..repeats.max(1))
            .map(|_| sample(&mut rng, large, small).into_vec())
            .collect(),
    )
}
