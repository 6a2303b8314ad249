//! Estimators for the sufficient statistic `f(θ)` and for `df/dθ` from the
//! deployment history.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float as _;
use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::env::EnvSpec;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{lstsq_min_norm, Cholesky, Matrix};

/// Relative rank tolerance for the finite-difference least-squares solve.
pub const RANK_TOL: f64 = 1e-10;

/// Sample mean of each group (mixture cluster or class label), concatenated in
/// group order. Regression environments estimate `β` by ordinary least squares.
pub fn estimate_f(batch: &Batch, env: &EnvSpec) -> Result<Vec<f64>> {
    if let EnvSpec::Regression { .. } = env {
        return estimate_beta(batch, 0.0);
    }
    let d = env.feature_dim();
    check_dim("estimate_f", d, batch.dim())?;
    let groups = env.groups();
    match env {
        EnvSpec::GaussianMixture { .. } if batch.clusters().is_none() => {
            return Err(Error::Estimation(
                "mixture batch has no cluster assignments".into(),
            ));
        }
        EnvSpec::Classification { .. } if batch.labels().is_none() => {
            return Err(Error::Estimation(
                "classification batch has no labels".into(),
            ));
        }
        _ => {}
    }
    group_means(batch, groups)
}

/// Per-group feature means; group membership from [`Batch::group`].
pub fn group_means(batch: &Batch, groups: usize) -> Result<Vec<f64>> {
    let d = batch.dim();
    let mut sums = vec![0.0; groups * d];
    let mut counts = vec![0usize; groups];
    for i in 0..batch.len() {
        let g = batch.group(i);
        if g >= groups {
            return Err(Error::Estimation(format!("group index {g} ≥ {groups}")));
        }
        counts[g] += 1;
        for (s, x) in sums[g * d..(g + 1) * d].iter_mut().zip(batch.row(i)) {
            *s += x;
        }
    }
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Estimation(format!("group {g} has no samples")));
    }
    for (g, &c) in counts.iter().enumerate() {
        for s in &mut sums[g * d..(g + 1) * d] {
            *s /= c as f64;
        }
    }
    Ok(sums)
}

/// Unbiased per-group sample covariances around the supplied group means.
pub fn group_covariances(batch: &Batch, groups: usize, means: &[f64]) -> Result<Vec<Matrix>> {
    let d = batch.dim();
    check_dim("group_covariances means", groups * d, means.len())?;
    let mut covs = vec![Matrix::zeros(d, d); groups];
    let mut counts = vec![0usize; groups];
    let mut r = vec![0.0; d];
    for i in 0..batch.len() {
        let g = batch.group(i);
        if g >= groups {
            return Err(Error::Estimation(format!("group index {g} ≥ {groups}")));
        }
        counts[g] += 1;
        for ((ri, x), m) in r.iter_mut().zip(batch.row(i)).zip(&means[g * d..]) {
            *ri = x - m;
        }
        for a in 0..d {
            for b in 0..d {
                covs[g][(a, b)] += r[a] * r[b];
            }
        }
    }
    for (g, c) in covs.iter_mut().enumerate() {
        if counts[g] < 2 {
            return Err(Error::Estimation(format!(
                "group {g} has {} samples; covariance needs 2",
                counts[g]
            )));
        }
        let denom = (counts[g] - 1) as f64;
        for a in 0..d {
            for b in 0..d {
                c[(a, b)] /= denom;
            }
        }
    }
    Ok(covs)
}

/// Ridge-regularized least squares for `y ≈ bᵀx`:
/// `argmin_b Σ (y − bᵀx)²/2 + (λ/2)‖b‖²`, solved through the normal equations.
pub fn estimate_beta(batch: &Batch, ridge: f64) -> Result<Vec<f64>> {
    let y = batch
        .responses()
        .ok_or_else(|| Error::Estimation("batch has no responses".into()))?;
    if !(ridge >= 0.0) {
        return Err(Error::Estimation(format!("ridge strength {ridge} < 0")));
    }
    let p = batch.dim();
    if batch.len() <= p {
        return Err(Error::Estimation(format!(
            "need more than {p} samples for {p} coefficients, got {}",
            batch.len()
        )));
    }
    let mut gram = Matrix::zeros(p, p);
    let mut rhs = vec![0.0; p];
    for (i, &yi) in y.iter().enumerate() {
        let x = batch.row(i);
        for a in 0..p {
            rhs[a] += x[a] * yi;
            for b in 0..=a {
                gram[(a, b)] += x[a] * x[b];
            }
        }
    }
    for a in 0..p {
        gram[(a, a)] += ridge;
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    let chol =
        Cholesky::new(&gram).map_err(|_| Error::Estimation("normal matrix is singular".into()))?;
    chol.solve(&rhs)
}

/// One past deployment: the parameters and the statistic estimated there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub theta: Vec<f64>,
    pub f_hat: Vec<f64>,
}

/// Rolling window of past `(θ_s, f̂_s)` pairs, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    entries: VecDeque<HistoryEntry>,
    capacity: usize,
}

impl History {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            entries: VecDeque::new(),
            capacity: capacity.max(1),
        }
    }

    /// History that keeps every deployment.
    pub fn unbounded() -> Self {
        Self::with_capacity(usize::MAX)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, theta: Vec<f64>, f_hat: Vec<f64>) -> Result<()> {
        if let Some(first) = self.entries.front() {
            check_dim("History::push (θ)", first.theta.len(), theta.len())?;
            check_dim("History::push (f̂)", first.f_hat.len(), f_hat.len())?;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(HistoryEntry { theta, f_hat });
        Ok(())
    }

    pub fn entries(&self) -> impl DoubleEndedIterator<Item = &HistoryEntry> + ExactSizeIterator {
        self.entries.iter()
    }

    /// The `m` most recent entries, newest first.
    pub fn recent(&self, m: usize) -> impl Iterator<Item = &HistoryEntry> {
        self.entries.iter().rev().take(m)
    }
}

/// Least-squares estimate of `df/dθ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianEstimate {
    /// `k × p` matrix.
    pub matrix: Matrix,
    /// Frobenius norm of `Δf − J·Δθ` over the columns actually used.
    pub residual: f64,
    /// Largest numerical rank of the parameter-difference system across rows.
    pub rank: usize,
    /// History columns that entered the solve (after dropping zero moves).
    pub columns_used: usize,
    /// Fewer usable columns than free parameters: the system is not overdetermined.
    pub underdetermined: bool,
    /// The solve fell back to the minimum-norm solution.
    pub rank_deficient: bool,
}

/// `Δf (Δθ)†` over the `min(H, len)` most recent history entries, with the
/// differences taken against the current `(θ_t, f̂_t)`.
pub fn finite_diff_jacobian(
    hist: &History,
    theta_t: &[f64],
    f_t: &[f64],
    horizon: usize,
) -> Result<JacobianEstimate> {
    finite_diff_jacobian_masked(hist, theta_t, f_t, horizon, None)
}

/// [`finite_diff_jacobian`] with a structural mask: entry `(r, c)` of the
/// Jacobian is estimated only when `mask[r][c]` is true and fixed at zero
/// otherwise.
pub fn finite_diff_jacobian_masked(
    hist: &History,
    theta_t: &[f64],
    f_t: &[f64],
    horizon: usize,
    mask: Option<&[Vec<bool>]>,
) -> Result<JacobianEstimate> {
    let m = horizon.min(hist.len());
    let mut dtheta = Vec::with_capacity(m);
    let mut df = Vec::with_capacity(m);
    for e in hist.recent(m) {
        check_dim("finite_diff_jacobian (θ)", theta_t.len(), e.theta.len())?;
        check_dim("finite_diff_jacobian (f̂)", f_t.len(), e.f_hat.len())?;
        dtheta.push(sub(&e.theta, theta_t));
        df.push(sub(&e.f_hat, f_t));
    }
    solve_differences(&dtheta, &df, theta_t.len(), f_t.len(), mask)
}

/// Split-sample variant: the current deployment's batch was partitioned and
/// `f_parts[i]` estimates `f(θ_t)` from part `i`. Pair `i` uses
/// `f̂_{t−1−i} − f_parts[i]`, so the noise in each difference is independent.
pub fn finite_diff_jacobian_split(
    hist: &History,
    theta_t: &[f64],
    f_parts: &[Vec<f64>],
    horizon: usize,
    mask: Option<&[Vec<bool>]>,
) -> Result<JacobianEstimate> {
    let k = f_parts
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Estimation("no split estimates supplied".into()))?;
    let m = horizon.min(hist.len()).min(f_parts.len());
    let mut dtheta = Vec::with_capacity(m);
    let mut df = Vec::with_capacity(m);
    for (e, part) in hist.recent(m).zip(f_parts) {
        check_dim(
            "finite_diff_jacobian_split (θ)",
            theta_t.len(),
            e.theta.len(),
        )?;
        check_dim("finite_diff_jacobian_split (f̂)", k, part.len())?;
        check_dim("finite_diff_jacobian_split (f̂)", k, e.f_hat.len())?;
        dtheta.push(sub(&e.theta, theta_t));
        df.push(sub(&e.f_hat, part));
    }
    solve_differences(&dtheta, &df, theta_t.len(), k, mask)
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn solve_differences(
    dtheta: &[Vec<f64>],
    df: &[Vec<f64>],
    p: usize,
    k: usize,
    mask: Option<&[Vec<bool>]>,
) -> Result<JacobianEstimate> {
    if dtheta.is_empty() {
        return Err(Error::Estimation(
            "finite differences need at least one history entry".into(),
        ));
    }
    if let Some(mask) = mask {
        check_dim("Jacobian mask rows", k, mask.len())?;
        for row in mask {
            check_dim("Jacobian mask cols", p, row.len())?;
        }
    }
    let mut matrix = Matrix::zeros(k, p);
    let mut residual_sq = 0.0;
    let mut rank = 0;
    let mut columns_used = 0;
    let mut underdetermined = false;
    let mut rank_deficient = false;

    for r in 0..k {
        let free: Vec<usize> = (0..p).filter(|&c| mask.is_none_or(|m| m[r][c])).collect();
        if free.is_empty() {
            continue;
        }
        // Drop history columns with no movement in the free coordinates.
        let used: Vec<usize> = (0..dtheta.len())
            .filter(|&j| free.iter().any(|&c| dtheta[j][c] != 0.0))
            .collect();
        if used.is_empty() {
            return Err(Error::DegenerateHistory);
        }
        let a = Matrix::from_row_major(
            used.len(),
            free.len(),
            used.iter()
                .flat_map(|&j| free.iter().map(move |&c| dtheta[j][c]))
                .collect(),
        )?;
        let b = Matrix::from_row_major(used.len(), 1, used.iter().map(|&j| df[j][r]).collect())?;
        let ls = lstsq_min_norm(&a, &b, RANK_TOL)?;
        if ls.rank == 0 {
            return Err(Error::DegenerateHistory);
        }
        for (i, &c) in free.iter().enumerate() {
            matrix[(r, c)] = ls.solution[(i, 0)];
        }
        residual_sq += ls.residual * ls.residual;
        rank = rank.max(ls.rank);
        columns_used = columns_used.max(used.len());
        underdetermined |= used.len() < free.len();
        rank_deficient |= ls.rank < free.len();
    }

    if !matrix.is_finite() {
        return Err(Error::Estimation("non-finite Jacobian estimate".into()));
    }
    Ok(JacobianEstimate {
        matrix,
        residual: residual_sq.sqrt(),
        rank,
        columns_used,
        underdetermined,
        rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hist(points: &[(f64, f64)]) -> History {
        let mut h = History::unbounded();
        for &(t, f) in points {
            h.push(vec![t], vec![f]).unwrap();
        }
        h
    }

    #[test]
    fn constant_batch_mean() {
        let env = EnvSpec::LinearMeanGaussian {
            a0: 0.0,
            a1: 1.0,
            variance: 1.0,
        };
        let b = Batch::from_scalars(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(estimate_f(&b, &env).unwrap(), vec![2.0]);
    }

    #[test]
    fn per_cluster_means() {
        let env = EnvSpec::GaussianMixture {
            components: vec![
                crate::env::MixtureComponent {
                    weight: 0.5,
                    a0: 0.0,
                    a1: 1.0,
                    variance: 1.0,
                },
                crate::env::MixtureComponent {
                    weight: 0.5,
                    a0: 0.0,
                    a1: 1.0,
                    variance: 1.0,
                },
            ],
        };
        let b = Batch::from_scalars(&[1.0, 10.0, 3.0])
            .unwrap()
            .with_clusters(vec![0, 1, 0])
            .unwrap();
        assert_eq!(estimate_f(&b, &env).unwrap(), vec![2.0, 10.0]);

        let lonely = Batch::from_scalars(&[1.0, 3.0])
            .unwrap()
            .with_clusters(vec![0, 0])
            .unwrap();
        assert!(matches!(
            estimate_f(&lonely, &env),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn beta_exact_fit_and_zero_response() {
        let b = Batch::from_scalars(&[1.0, 2.0, -1.0])
            .unwrap()
            .with_responses(vec![3.0, 6.0, -3.0])
            .unwrap();
        assert_relative_eq!(estimate_beta(&b, 0.0).unwrap()[0], 3.0, epsilon = 1e-12);
        let z = Batch::from_scalars(&[1.0, 2.0])
            .unwrap()
            .with_responses(vec![0.0, 0.0])
            .unwrap();
        assert_eq!(estimate_beta(&z, 0.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn beta_singular_without_ridge() {
        let b = Batch::from_scalars(&[0.0, 0.0])
            .unwrap()
            .with_responses(vec![1.0, 2.0])
            .unwrap();
        assert!(matches!(estimate_beta(&b, 0.0), Err(Error::Estimation(_))));
        assert_eq!(estimate_beta(&b, 1.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn single_step_linear_slope() {
        let h = hist(&[(0.0, 0.0)]);
        let j = finite_diff_jacobian(&h, &[0.1], &[0.2], 1).unwrap();
        assert_relative_eq!(j.matrix[(0, 0)], 2.0, epsilon = 1e-12);
        assert!(!j.underdetermined);
    }

    #[test]
    fn constant_statistic_gives_zero_slope() {
        let h = hist(&[(0.3, 5.0), (0.5, 5.0), (0.9, 5.0)]);
        let j = finite_diff_jacobian(&h, &[1.0], &[5.0], 3).unwrap();
        assert_eq!(j.matrix[(0, 0)], 0.0);
    }

    #[test]
    fn quadratic_bias_is_bounded_by_spacing() {
        let f = |t: f64| t * t;
        let h = hist(&[
            (0.8, f(0.8)),
            (0.85, f(0.85)),
            (0.9, f(0.9)),
            (0.95, f(0.95)),
        ]);
        let j = finite_diff_jacobian(&h, &[1.0], &[1.0], 4).unwrap();
        assert!(
            (j.matrix[(0, 0)] - 2.0).abs() <= 0.2,
            "{}",
            j.matrix[(0, 0)]
        );
    }

    #[test]
    fn zero_movement_is_degenerate() {
        let h = hist(&[(0.5, 1.0), (0.5, 2.0)]);
        assert_eq!(
            finite_diff_jacobian(&h, &[0.5], &[0.0], 2).unwrap_err(),
            Error::DegenerateHistory
        );
    }

    #[test]
    fn tied_columns_are_dropped() {
        // θ_{t-1} = θ_t: that column carries no information and is skipped.
        let h = hist(&[(0.0, 0.0), (1.0, 99.0)]);
        let j = finite_diff_jacobian(&h, &[1.0], &[3.0], 2).unwrap();
        assert_relative_eq!(j.matrix[(0, 0)], 3.0, epsilon = 1e-12);
        assert_eq!(j.columns_used, 1);
    }

    #[test]
    fn underdetermined_flag_when_fewer_columns_than_params() {
        let mut h = History::unbounded();
        h.push(vec![1.0, 0.0], vec![2.0]).unwrap();
        let j = finite_diff_jacobian(&h, &[0.0, 0.0], &[0.0], 4).unwrap();
        assert!(j.underdetermined);
        assert!(j.rank_deficient);
        assert_relative_eq!(j.matrix[(0, 0)], 2.0, epsilon = 1e-12);
        assert_eq!(j.matrix[(0, 1)], 0.0);
    }

    #[test]
    fn mask_restricts_to_free_entries() {
        let mut h = History::unbounded();
        h.push(vec![0.3, 1.0], vec![1.0, -3.0]).unwrap();
        h.push(vec![-0.2, 0.5], vec![1.0, -1.5]).unwrap();
        let mask = vec![vec![false, false], vec![false, true]];
        let j = finite_diff_jacobian_masked(&h, &[0.0, 0.0], &[1.0, 0.0], 2, Some(&mask)).unwrap();
        assert_eq!(j.matrix.row(0), &[0.0, 0.0]);
        assert_eq!(j.matrix[(1, 0)], 0.0);
        assert_relative_eq!(j.matrix[(1, 1)], -3.0, epsilon = 1e-12);
    }

    #[test]
    fn history_capacity_evicts_oldest() {
        let mut h = History::with_capacity(2);
        for t in 0..4 {
            h.push(vec![t as f64], vec![0.0]).unwrap();
        }
        let thetas: Vec<f64> = h.entries().map(|e| e.theta[0]).collect();
        assert_eq!(thetas, vec![2.0, 3.0]);
        assert!(h.push(vec![1.0, 2.0], vec![0.0]).is_err());
    }

    #[test]
    fn split_with_one_part_matches_plain() {
        let h = hist(&[(0.0, 1.0), (0.4, 1.8)]);
        let plain = finite_diff_jacobian(&h, &[1.0], &[3.0], 1).unwrap();
        let split = finite_diff_jacobian_split(&h, &[1.0], &[vec![3.0]], 1, None).unwrap();
        assert_eq!(plain, split);
    }
}
