//! Agent RMSE and the OSPA map error.

use nalgebra::DMatrix;

use crate::error::ParamError;
use crate::geometry::Vec2;
use crate::models::check;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OspaParams {
    pub cutoff: f64,
    pub order: f64,
}

impl Default for OspaParams {
    fn default() -> Self {
        Self { cutoff: 5.0, order: 1.0 }
    }
}

impl OspaParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        check(self.cutoff > 0.0 && self.cutoff.is_finite(), "cutoff", self.cutoff)?;
        check(self.order >= 1.0 && self.order.is_finite(), "order", self.order)
    }
}

/// Minimum-cost assignment of `min(rows, cols)` pairs.
///
/// Returns `(pairs, total_cost)` with `pairs[r] = Some(c)` for assigned rows.
/// Shortest augmenting path (Jonker-Volgenant style) Hungarian method,
/// `O(n^2 m)` for `n <= m` after transposing.
pub fn optimal_assignment(cost: &DMatrix<f64>) -> (Vec<Option<usize>>, f64) {
    let (nr, nc) = cost.shape();
    if nr == 0 || nc == 0 {
        return (vec![None; nr], 0.0);
    }
    if nr > nc {
        let (t, total) = optimal_assignment(&cost.transpose());
        let mut pairs = vec![None; nr];
        for (c, r) in t.iter().enumerate() {
            if let Some(r) = r {
                pairs[*r] = Some(c);
            }
        }
        return (pairs, total);
    }
    // rows n <= cols m; 1-based arrays with a virtual column 0
    let (n, m) = (nr, nc);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
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
    let mut pairs = vec![None; n];
    let mut total = 0.0;
    for j in 1..=m {
        if p[j] != 0 {
            pairs[p[j] - 1] = Some(j - 1);
            total += cost[(p[j] - 1, j - 1)];
        }
    }
    (pairs, total)
}

/// OSPA distance between two point sets with Euclidean base distance.
/// Two empty sets are at distance zero.
pub fn ospa(truth: &[Vec2], estimate: &[Vec2], params: &OspaParams) -> f64 {
    let (n, m) = (truth.len(), estimate.len());
    let c = params.cutoff;
    let p = params.order;
    if n == 0 && m == 0 {
        return 0.0;
    }
    if n == 0 || m == 0 {
        return c;
    }
    let cost = DMatrix::from_fn(n, m, |i, j| (truth[i] - estimate[j]).norm().min(c).powf(p));
    let (_, assigned) = optimal_assignment(&cost);
    let big = n.max(m);
    let penalty = c.powf(p) * (big - n.min(m)) as f64;
    ((assigned + penalty) / big as f64).powf(1.0 / p)
}

/// Per-step root mean square position error over runs.
///
/// `runs[r][n]` is the estimate of run `r` at step `n`.
pub fn rmse(truth: &[Vec2], runs: &[Vec<Vec2>]) -> Result<Vec<f64>, ParamError> {
    if runs.is_empty() {
        return Err(ParamError::Invalid("rmse needs at least one run".into()));
    }
    for (r, est) in runs.iter().enumerate() {
        if est.len() != truth.len() {
            return Err(ParamError::Invalid(format!(
                "run {r} has {} estimates for {} true positions",
                est.len(),
                truth.len()
            )));
        }
    }
    Ok((0..truth.len())
        .map(|n| {
            let mse = runs.iter().map(|est| (est[n] - truth[n]).norm_squared()).sum::<f64>() / runs.len() as f64;
            mse.sqrt()
        })
        .collect())
}
