//! Loopy belief propagation for probabilistic data association between the
//! legacy features and the measurements of one anchor.
//!
//! Association is described redundantly by feature-oriented variables
//! `c_k in {0..M}` and measurement-oriented variables `b_m in {0..K}`, tied
//! together by the pairwise exclusion indicator [`exclusion_psi`]. Index 0
//! means "no association" on both sides; features and measurements are
//! 1-based inside the association alphabets.
//!
//! [`da_iterate`] runs the scalar-ratio form of the message recursion, which
//! costs `O(K M)` per iteration. [`da_iterate_direct`] evaluates the full
//! vector messages and is kept for cross-checking. [`exact_da_marginals`]
//! enumerates all feasible joint associations and is the test oracle.

use nalgebra::DMatrix;

use crate::error::DaError;

pub const DEFAULT_TOLERANCE: f64 = 1e-7;
pub const DEFAULT_MAX_ITERATIONS: usize = 1000;
/// Largest K or M accepted by the enumeration oracle.
pub const ENUMERATION_LIMIT: usize = 8;

/// Incoming messages of one association problem.
///
/// `beta` is K x (M+1) with `beta[(k, c)]` the message into `c_k`; `xi` is
/// M x (K+1) with `xi[(m, b)]` the message into `b_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DaInputs {
    pub beta: DMatrix<f64>,
    pub xi: DMatrix<f64>,
}

impl DaInputs {
    pub fn new(beta: DMatrix<f64>, xi: DMatrix<f64>) -> Result<Self, DaError> {
        let inputs = Self { beta, xi };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn num_features(&self) -> usize {
        self.beta.nrows()
    }

    pub fn num_measurements(&self) -> usize {
        self.xi.nrows()
    }

    pub fn validate(&self) -> Result<(), DaError> {
        let (k, m) = (self.beta.nrows(), self.xi.nrows());
        if self.beta.ncols() != m + 1 || self.xi.ncols() != k + 1 {
            return Err(DaError::ShapeMismatch {
                beta_rows: self.beta.nrows(),
                beta_cols: self.beta.ncols(),
                xi_rows: self.xi.nrows(),
                xi_cols: self.xi.ncols(),
            });
        }
        for (name, mat) in [("beta", &self.beta), ("xi", &self.xi)] {
            if mat.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(DaError::InvalidEntry(name));
            }
            for (row, r) in mat.row_iter().enumerate() {
                if !r.iter().any(|v| *v > 0.0) {
                    return Err(DaError::DegenerateInput { which: name, row });
                }
            }
        }
        Ok(())
    }
}

/// Outgoing messages, each row normalized to sum to one.
///
/// `eta` is K x (M+1) (into `c_k`), `sigma_out` is M x (K+1) (into `b_m`).
#[derive(Debug, Clone, PartialEq)]
pub struct DaOutputs {
    pub eta: DMatrix<f64>,
    pub sigma_out: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl DaOutputs {
    fn trivial(k: usize, m: usize) -> Self {
        Self {
            eta: DMatrix::from_element(k, m + 1, 1.0 / (m + 1) as f64),
            sigma_out: DMatrix::from_element(m, k + 1, 1.0 / (k + 1) as f64),
            iterations: 0,
            converged: true,
        }
    }

    /// Approximate posterior association probabilities `p(c_k)`, i.e. the
    /// normalized product of `beta` and `eta`.
    pub fn feature_marginals(&self, inputs: &DaInputs) -> DMatrix<f64> {
        normalized_rows(inputs.beta.component_mul(&self.eta))
    }

    /// Approximate posterior association probabilities `p(b_m)`.
    pub fn measurement_marginals(&self, inputs: &DaInputs) -> DMatrix<f64> {
        normalized_rows(inputs.xi.component_mul(&self.sigma_out))
    }
}

/// Pairwise exclusion indicator between `c_k` and `b_m`: zero when exactly
/// one side claims the pair `(k, m)`.
pub fn exclusion_psi(c: usize, b: usize, k: usize, m: usize) -> u8 {
    let c_claims = c == m;
    let b_claims = b == k;
    u8::from(c_claims == b_claims)
}

/// Runs the message recursion until the root-sum-square change of the
/// measurement-to-feature messages drops below `eps`, or for at most
/// `p_max` iterations.
///
/// Uses the scalar-ratio form when every `beta[(k, 0)]` and `xi[(m, 0)]`
/// is positive and falls back to the direct form otherwise.
pub fn da_iterate(inputs: &DaInputs, eps: f64, p_max: usize) -> Result<DaOutputs, DaError> {
    inputs.validate()?;
    let (k, m) = (inputs.num_features(), inputs.num_measurements());
    if k == 0 || m == 0 {
        return Ok(DaOutputs::trivial(k, m));
    }
    let ratio_ok = inputs.beta.column(0).iter().all(|v| *v > 0.0) && inputs.xi.column(0).iter().all(|v| *v > 0.0);
    if ratio_ok {
        Ok(ratio_form(inputs, eps, p_max))
    } else {
        Ok(direct_form(inputs, eps, p_max))
    }
}

/// Full vector-message recursion. Slower than [`da_iterate`]; produces the
/// same fixed point.
pub fn da_iterate_direct(inputs: &DaInputs, eps: f64, p_max: usize) -> Result<DaOutputs, DaError> {
    inputs.validate()?;
    let (k, m) = (inputs.num_features(), inputs.num_measurements());
    if k == 0 || m == 0 {
        return Ok(DaOutputs::trivial(k, m));
    }
    Ok(direct_form(inputs, eps, p_max))
}

// Every message nu_{m->k} takes one value for c_k = m and a common value for
// all other c_k; likewise zeta_{k->m} for b_m = k vs. b_m != k. Only the
// ratio of the two values is propagated.
fn ratio_form(inputs: &DaInputs, eps: f64, p_max: usize) -> DaOutputs {
    let (nk, nm) = (inputs.num_features(), inputs.num_measurements());
    let beta = &inputs.beta;
    let xi = &inputs.xi;

    // zeta ratio, K x M, initialized with nu = 1
    let mut zeta = DMatrix::<f64>::zeros(nk, nm);
    for k in 0..nk {
        let total: f64 = beta.row(k).sum();
        for m in 0..nm {
            zeta[(k, m)] = beta[(k, m + 1)] / (total - beta[(k, m + 1)]);
        }
    }
    // nu ratio, stored K x M for locality with zeta
    let mut nu = DMatrix::<f64>::from_element(nk, nm, 1.0);
    let mut prev = nu.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < p_max {
        iterations += 1;
        std::mem::swap(&mut prev, &mut nu);
        for m in 0..nm {
            let mut total = xi[(m, 0)];
            for k in 0..nk {
                total += xi[(m, k + 1)] * zeta[(k, m)];
            }
            for k in 0..nk {
                let own = xi[(m, k + 1)] * zeta[(k, m)];
                nu[(k, m)] = xi[(m, k + 1)] / (total - own).max(f64::MIN_POSITIVE);
            }
        }
        for k in 0..nk {
            let mut total = beta[(k, 0)];
            for m in 0..nm {
                total += beta[(k, m + 1)] * nu[(k, m)];
            }
            for m in 0..nm {
                let own = beta[(k, m + 1)] * nu[(k, m)];
                zeta[(k, m)] = beta[(k, m + 1)] / (total - own).max(f64::MIN_POSITIVE);
            }
        }
        let change: f64 = nu.iter().zip(prev.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if change < eps {
            converged = true;
            break;
        }
    }

    let mut eta = DMatrix::<f64>::zeros(nk, nm + 1);
    for k in 0..nk {
        eta[(k, 0)] = 1.0;
        for m in 0..nm {
            eta[(k, m + 1)] = nu[(k, m)];
        }
    }
    let mut sigma_out = DMatrix::<f64>::zeros(nm, nk + 1);
    for m in 0..nm {
        sigma_out[(m, 0)] = 1.0;
        for k in 0..nk {
            sigma_out[(m, k + 1)] = zeta[(k, m)];
        }
    }
    DaOutputs {
        eta: normalized_rows(eta),
        sigma_out: normalized_rows(sigma_out),
        iterations,
        converged,
    }
}

fn direct_form(inputs: &DaInputs, eps: f64, p_max: usize) -> DaOutputs {
    let (nk, nm) = (inputs.num_features(), inputs.num_measurements());
    let beta = &inputs.beta;
    let xi = &inputs.xi;

    // zeta[k][m] over b in 0..=K; nu[m][k] over c in 0..=M
    let mut zeta: Vec<Vec<Vec<f64>>> = (0..nk)
        .map(|k| {
            (0..nm)
                .map(|m| {
                    let msg: Vec<f64> = (0..=nk)
                        .map(|b| {
                            (0..=nm)
                                .map(|c| beta[(k, c)] * f64::from(exclusion_psi(c, b, k + 1, m + 1)))
                                .sum()
                        })
                        .collect();
                    normalized(msg)
                })
                .collect()
        })
        .collect();
    let mut nu: Vec<Vec<Vec<f64>>> = vec![vec![vec![1.0 / (nm + 1) as f64; nm + 1]; nk]; nm];

    let mut iterations = 0;
    let mut converged = false;
    while iterations < p_max {
        iterations += 1;
        let mut change = 0.0;
        for m in 0..nm {
            for k in 0..nk {
                let msg: Vec<f64> = (0..=nm)
                    .map(|c| {
                        (0..=nk)
                            .map(|b| {
                                let psi = f64::from(exclusion_psi(c, b, k + 1, m + 1));
                                if psi == 0.0 {
                                    return 0.0;
                                }
                                let others: f64 = (0..nk).filter(|&kk| kk != k).map(|kk| zeta[kk][m][b]).product();
                                xi[(m, b)] * others
                            })
                            .sum()
                    })
                    .collect();
                let msg = normalized(msg);
                change += msg.iter().zip(&nu[m][k]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                nu[m][k] = msg;
            }
        }
        for k in 0..nk {
            for m in 0..nm {
                let msg: Vec<f64> = (0..=nk)
                    .map(|b| {
                        (0..=nm)
                            .map(|c| {
                                let psi = f64::from(exclusion_psi(c, b, k + 1, m + 1));
                                if psi == 0.0 {
                                    return 0.0;
                                }
                                let others: f64 = (0..nm).filter(|&mm| mm != m).map(|mm| nu[mm][k][c]).product();
                                beta[(k, c)] * others
                            })
                            .sum()
                    })
                    .collect();
                zeta[k][m] = normalized(msg);
            }
        }
        if change.sqrt() < eps {
            converged = true;
            break;
        }
    }

    let eta = DMatrix::from_fn(nk, nm + 1, |k, c| (0..nm).map(|m| nu[m][k][c]).product());
    let sigma_out = DMatrix::from_fn(nm, nk + 1, |m, b| (0..nk).map(|k| zeta[k][m][b]).product());
    DaOutputs {
        eta: normalized_rows(eta),
        sigma_out: normalized_rows(sigma_out),
        iterations,
        converged,
    }
}

/// Exact posterior association marginals by enumerating every feasible
/// joint association.
///
/// The returned `eta` holds `p(c_k)` and `sigma_out` holds `p(b_m)`; unlike
/// the BP outputs these already include the incoming `beta` / `xi`.
pub fn exact_da_marginals(inputs: &DaInputs) -> Result<DaOutputs, DaError> {
    inputs.validate()?;
    let (nk, nm) = (inputs.num_features(), inputs.num_measurements());
    if nk > ENUMERATION_LIMIT || nm > ENUMERATION_LIMIT {
        return Err(DaError::TooLarge { k: nk, m: nm, limit: ENUMERATION_LIMIT });
    }
    let mut pc = DMatrix::<f64>::zeros(nk, nm + 1);
    let mut pb = DMatrix::<f64>::zeros(nm, nk + 1);
    let mut assignment = vec![0usize; nk];
    let mut used = vec![false; nm];
    enumerate(inputs, 0, &mut assignment, &mut used, &mut pc, &mut pb);
    Ok(DaOutputs {
        eta: normalized_rows(pc),
        sigma_out: normalized_rows(pb),
        iterations: 0,
        converged: true,
    })
}

fn enumerate(
    inputs: &DaInputs,
    k: usize,
    assignment: &mut [usize],
    used: &mut [bool],
    pc: &mut DMatrix<f64>,
    pb: &mut DMatrix<f64>,
) {
    let nk = assignment.len();
    let nm = used.len();
    if k == nk {
        let mut b = vec![0usize; nm];
        let mut weight = 1.0;
        for (kk, &c) in assignment.iter().enumerate() {
            weight *= inputs.beta[(kk, c)];
            if c > 0 {
                b[c - 1] = kk + 1;
            }
        }
        for (m, &bm) in b.iter().enumerate() {
            weight *= inputs.xi[(m, bm)];
        }
        if weight == 0.0 {
            return;
        }
        for (kk, &c) in assignment.iter().enumerate() {
            pc[(kk, c)] += weight;
        }
        for (m, &bm) in b.iter().enumerate() {
            pb[(m, bm)] += weight;
        }
        return;
    }
    assignment[k] = 0;
    enumerate(inputs, k + 1, assignment, used, pc, pb);
    for m in 0..nm {
        if !used[m] {
            used[m] = true;
            assignment[k] = m + 1;
            enumerate(inputs, k + 1, assignment, used, pc, pb);
            used[m] = false;
        }
    }
    assignment[k] = 0;
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
    v
}

fn normalized_rows(mut mat: DMatrix<f64>) -> DMatrix<f64> {
    for mut row in mat.row_iter_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        }
    }
    mat
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_inputs(rng: &mut ChaCha8Rng, k: usize, m: usize) -> DaInputs {
        let beta = DMatrix::from_fn(k, m + 1, |_, _| rng.random::<f64>());
        let xi = DMatrix::from_fn(m, k + 1, |_, _| rng.random::<f64>());
        DaInputs::new(beta, xi).unwrap()
    }

    fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn psi_cases() {
        assert_eq!(exclusion_psi(2, 3, 3, 2), 1);
        assert_eq!(exclusion_psi(2, 0, 3, 2), 0);
        assert_eq!(exclusion_psi(0, 3, 3, 2), 0);
        assert_eq!(exclusion_psi(0, 0, 3, 2), 1);
        assert_eq!(exclusion_psi(1, 1, 3, 2), 1);
    }

    #[test]
    fn empty_problems_converge_immediately() {
        let inputs = DaInputs::new(DMatrix::zeros(0, 3), DMatrix::from_element(2, 1, 1.0)).unwrap();
        let out = da_iterate(&inputs, 1e-7, 1000).unwrap();
        assert_eq!((out.eta.nrows(), out.sigma_out.nrows()), (0, 2));
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
        assert!(out.sigma_out.iter().all(|v| *v == 1.0));

        let inputs = DaInputs::new(DMatrix::from_element(3, 1, 0.5), DMatrix::zeros(0, 4)).unwrap();
        let out = da_iterate(&inputs, 1e-7, 1000).unwrap();
        assert_eq!(out.eta.shape(), (3, 1));
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn single_pair_posterior() {
        let beta = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let xi = DMatrix::from_row_slice(1, 2, &[1.0, 3.0]);
        let inputs = DaInputs::new(beta, xi).unwrap();
        let out = da_iterate(&inputs, 1e-12, 1000).unwrap();
        let p = out.feature_marginals(&inputs);
        assert_relative_eq!(p[(0, 1)], 6.0 / 7.0, epsilon = 1e-12);
        let exact = exact_da_marginals(&inputs).unwrap();
        assert_relative_eq!(exact.eta[(0, 1)], 6.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_rows_rejected() {
        let beta = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let xi = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(matches!(DaInputs::new(beta, xi), Err(DaError::DegenerateInput { which: "beta", row: 0 })));
        let beta = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let xi = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        assert!(matches!(DaInputs::new(beta, xi), Err(DaError::DegenerateInput { which: "xi", row: 0 })));
        let beta = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 1.0]);
        let xi = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(matches!(DaInputs::new(beta, xi), Err(DaError::ShapeMismatch { .. })));
    }

    #[test]
    fn two_by_two_loopy_close_to_oracle() {
        // Loopy BP is not exact on single instances; the error is measured
        // over a batch of random problems.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let (mut err, mut mass) = (0.0, 0.0);
        for _ in 0..1000 {
            let inputs = random_inputs(&mut rng, 2, 2);
            let bp = da_iterate(&inputs, 1e-10, 1000).unwrap().feature_marginals(&inputs);
            let exact = exact_da_marginals(&inputs).unwrap().eta;
            err += (&bp - &exact).abs().sum();
            mass += exact.sum();
        }
        assert!(err / mass < 0.10, "relative L1 error {}", err / mass);
    }

    #[test]
    fn tree_instances_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for i in 0..200 {
            let n = rng.random_range(1..=6);
            let (k, m) = if i % 2 == 0 { (1, n) } else { (n, 1) };
            let inputs = random_inputs(&mut rng, k, m);
            let out = da_iterate(&inputs, 1e-13, 1000).unwrap();
            let exact = exact_da_marginals(&inputs).unwrap();
            assert!(max_abs_diff(&out.feature_marginals(&inputs), &exact.eta) < 1e-9);
            assert!(max_abs_diff(&out.measurement_marginals(&inputs), &exact.sigma_out) < 1e-9);
        }
    }

    #[test]
    fn ratio_and_direct_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let k = rng.random_range(1..=4);
            let m = rng.random_range(1..=4);
            let inputs = random_inputs(&mut rng, k, m);
            let fast = da_iterate(&inputs, 1e-13, 5000).unwrap();
            let slow = da_iterate_direct(&inputs, 1e-13, 5000).unwrap();
            assert!(max_abs_diff(&fast.eta, &slow.eta) < 1e-8);
            assert!(max_abs_diff(&fast.sigma_out, &slow.sigma_out) < 1e-8);
        }
    }

    #[test]
    fn zero_missed_detection_entries_use_direct_form() {
        // beta[(0,0)] = 0 forces feature 1 to take a measurement.
        let beta = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 2.0, 1.0, 3.0, 0.5]);
        let xi = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 2.0, 1.0, 1.0]);
        let inputs = DaInputs::new(beta, xi).unwrap();
        let out = da_iterate(&inputs, 1e-12, 1000).unwrap();
        let p = out.feature_marginals(&inputs);
        assert_eq!(p[(0, 0)], 0.0);
        let exact = exact_da_marginals(&inputs).unwrap();
        assert!(max_abs_diff(&p, &exact.eta) < 0.1);
    }

    #[test]
    fn uniform_inputs_give_uniform_oracle_marginals() {
        let inputs = DaInputs::new(DMatrix::from_element(1, 4, 0.3), DMatrix::from_element(3, 2, 2.0)).unwrap();
        let exact = exact_da_marginals(&inputs).unwrap();
        for c in 0..4 {
            assert_relative_eq!(exact.eta[(0, c)], 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn oracle_marginals_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = random_inputs(&mut rng, 3, 3);
        let exact = exact_da_marginals(&inputs).unwrap();
        for row in exact.eta.row_iter().chain(exact.sigma_out.row_iter()) {
            assert_relative_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn oracle_size_guard() {
        let inputs = DaInputs::new(DMatrix::from_element(9, 2, 1.0), DMatrix::from_element(1, 10, 1.0)).unwrap();
        assert!(matches!(exact_da_marginals(&inputs), Err(DaError::TooLarge { .. })));
    }

    #[test]
    fn scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let inputs = random_inputs(&mut rng, 3, 4);
            let base = da_iterate(&inputs, 1e-12, 1000).unwrap().feature_marginals(&inputs);
            let mut scaled = inputs.clone();
            for k in 0..3 {
                let s = rng.random_range(0.01..100.0);
                scaled.beta.row_mut(k).scale_mut(s);
            }
            let out = da_iterate(&scaled, 1e-12, 1000).unwrap().feature_marginals(&scaled);
            assert!(max_abs_diff(&base, &out) < 1e-12);
        }
    }

    #[test]
    fn messages_stay_nonnegative_and_converge() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..1000 {
            let k = rng.random_range(1..=6);
            let m = rng.random_range(1..=6);
            let inputs = random_inputs(&mut rng, k, m);
            let out = da_iterate(&inputs, DEFAULT_TOLERANCE, DEFAULT_MAX_ITERATIONS).unwrap();
            assert!(out.converged, "did not converge for K={k} M={m}");
            assert!(out.iterations <= DEFAULT_MAX_ITERATIONS);
            assert!(out.eta.iter().chain(out.sigma_out.iter()).all(|v| *v >= 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn exclusion_forces_zero_marginal() {
        // Measurement 1 can only be explained by feature 2 (xi_1(b) = 0 for b != 2),
        // so feature 1 can never take measurement 1.
        let beta = DMatrix::from_row_slice(2, 3, &[1.0, 4.0, 0.5, 1.0, 2.0, 0.7]);
        let xi = DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 1.0, 1.5, 1.0, 1.0]);
        let inputs = DaInputs::new(beta, xi).unwrap();
        let exact = exact_da_marginals(&inputs).unwrap();
        assert_eq!(exact.eta[(0, 1)], 0.0);
        let bp = da_iterate(&inputs, 1e-12, 1000).unwrap().feature_marginals(&inputs);
        assert!(bp[(0, 1)].abs() < 1e-12);
        assert!(max_abs_diff(&bp, &exact.eta) < 0.05);
    }
}
