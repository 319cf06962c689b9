//! Small dense linear-algebra kernel: LU solves for symmetric systems, the
//! 2x2 solve behind per-link least squares, and an active-set solver for the
//! concave pricing QP with flow-balance equalities and price caps.

use ndarray::{Array1, Array2};
use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// LU factorization with partial pivoting.
pub(crate) struct LuFactors {
    lu: Array2<f64>,
    perm: Vec<usize>,
}

pub(crate) fn lu_factor(a: &Array2<f64>) -> Result<LuFactors> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "LU needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let tol = 1e-13 * scale;
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut piv = k;
        let mut best = lu[[k, k]].abs();
        for r in (k + 1)..n {
            let v = lu[[r, k]].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best <= tol {
            return Err(Error::SingularMatrix);
        }
        if piv != k {
            for c in 0..n {
                let tmp = lu[[k, c]];
                lu[[k, c]] = lu[[piv, c]];
                lu[[piv, c]] = tmp;
            }
            perm.swap(k, piv);
        }
        let d = lu[[k, k]];
        for r in (k + 1)..n {
            let m = lu[[r, k]] / d;
            lu[[r, k]] = m;
            for c in (k + 1)..n {
                lu[[r, c]] -= m * lu[[k, c]];
            }
        }
    }
    Ok(LuFactors { lu, perm })
}

pub(crate) fn lu_solve(f: &LuFactors, b: &Array1<f64>) -> Array1<f64> {
    let n = f.perm.len();
    let mut x = Array1::zeros(n);
    for i in 0..n {
        x[i] = b[f.perm[i]];
    }
    // forward substitution (unit lower triangle)
    for i in 1..n {
        let mut s = x[i];
        for j in 0..i {
            s -= f.lu[[i, j]] * x[j];
        }
        x[i] = s;
    }
    // back substitution
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= f.lu[[i, j]] * x[j];
        }
        x[i] = s / f.lu[[i, i]];
    }
    x
}

/// Solve `a * x = b` for symmetric `a`, with one step of iterative refinement.
///
/// Singular inputs are reported, never regularized.
pub fn solve_symmetric(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{} but rhs has length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let f = lu_factor(a)?;
    let mut x = lu_solve(&f, b);
    let r = b - &a.dot(&x);
    let dx = lu_solve(&f, &r);
    x += &dx;
    Ok(x)
}

/// Invert a square matrix via LU; used for the Laplacian generalized inverse.
pub fn invert(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let f = lu_factor(a)?;
    let mut inv = Array2::zeros((n, n));
    let mut e = Array1::zeros(n);
    for c in 0..n {
        e.fill(0.0);
        e[c] = 1.0;
        let col = lu_solve(&f, &e);
        for r in 0..n {
            inv[[r, c]] = col[r];
        }
    }
    Ok(inv)
}

/// Exact Cramer solve of a 2x2 system.
///
/// A near-zero determinant means the regression history carries no price
/// dispersion, so this reports [`Error::DegenerateHistory`].
pub fn solve_2x2(m: [[f64; 2]; 2], b: [f64; 2]) -> Result<[f64; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale = m
        .iter()
        .flatten()
        .fold(0.0f64, |acc, x| acc.max(x.abs()))
        .powi(2)
        .max(1e-300);
    if det.abs() < 1e-12 * scale {
        return Err(Error::DegenerateHistory);
    }
    Ok([
        (b[0] * m[1][1] - m[0][1] * b[1]) / det,
        (m[0][0] * b[1] - b[0] * m[1][0]) / det,
    ])
}

/// Concave QP with equality constraints and upper bounds:
///
/// ```text
///     maximize   (1/2) x' H x + q' x      (H symmetric negative definite)
///     subject to A x = b,  x <= u
/// ```
///
/// Flow-balance equality rows may sum to zero (one redundant row); the solver
/// drops the last row in that case and reports its dual as zero, so the
/// remaining duals are expressed relative to that reference row.
#[derive(Debug, Clone)]
pub struct KktSystem {
    pub hessian: Array2<f64>,
    pub linear_term: Array1<f64>,
    pub equality_matrix: Array2<f64>,
    pub equality_rhs: Array1<f64>,
    pub upper_bounds: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub solution: Array1<f64>,
    pub eq_duals: Array1<f64>,
    pub bound_duals: Array1<f64>,
    pub active_set: Vec<usize>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl KktSystem {
    fn validate(&self) -> Result<()> {
        let m = self.hessian.nrows();
        if self.hessian.ncols() != m
            || self.linear_term.len() != m
            || self.upper_bounds.len() != m
            || self.equality_matrix.ncols() != m
            || self.equality_matrix.nrows() != self.equality_rhs.len()
        {
            return Err(Error::DimensionMismatch(
                "KKT system blocks do not conform".into(),
            ));
        }
        Ok(())
    }

    /// Worst violation over stationarity, primal feasibility, dual feasibility
    /// and complementary slackness.
    pub fn kkt_residual(
        &self,
        x: &Array1<f64>,
        sigma: &Array1<f64>,
        mu: &Array1<f64>,
    ) -> f64 {
        let grad = self.hessian.dot(x) + &self.linear_term;
        let at_sigma = self.equality_matrix.t().dot(sigma);
        let mut res = 0.0f64;
        for l in 0..x.len() {
            res = res.max((grad[l] - at_sigma[l] - mu[l]).abs());
            res = res.max(x[l] - self.upper_bounds[l]);
            res = res.max(-mu[l]);
            res = res.max((mu[l] * (self.upper_bounds[l] - x[l])).abs());
        }
        let eq = self.equality_matrix.dot(x) - &self.equality_rhs;
        for v in eq.iter() {
            res = res.max(v.abs());
        }
        res
    }
}

/// Index rows of `a` kept after dropping one redundant flow-balance row.
fn kept_equality_rows(a: &Array2<f64>, b: &Array1<f64>) -> Vec<usize> {
    let k = a.nrows();
    if k == 0 {
        return vec![];
    }
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let col_sums_zero = (0..a.ncols()).all(|j| {
        let s: f64 = (0..k).map(|i| a[[i, j]]).sum();
        s.abs() <= 1e-9 * scale
    });
    let rhs_sum: f64 = b.iter().sum();
    if col_sums_zero && rhs_sum.abs() <= 1e-9 * scale {
        (0..k - 1).collect()
    } else {
        (0..k).collect()
    }
}

/// Active-set solve of the capped pricing QP. Each iteration pins the working
/// set at the bound and performs one equality-KKT solve; caps enter the set
/// when violated and leave when their multiplier turns negative.
pub fn solve_eq_qp_active_set(sys: &KktSystem) -> Result<QpSolution> {
    sys.validate()?;
    let m = sys.hessian.nrows();
    let rows = kept_equality_rows(&sys.equality_matrix, &sys.equality_rhs);
    let max_iter = 10 * m.max(1);
    let u = &sys.upper_bounds;
    let bound_scale = 1.0 + u.iter().fold(0.0f64, |a, x| a.max(x.abs()));

    let mut working: BTreeSet<usize> = BTreeSet::new();
    let mut last_mu: Array1<f64> = Array1::zeros(m);
    let mut last_added: Option<usize> = None;
    let mut last_residual = f64::NAN;
    for iter in 1..=max_iter {
        let (x, sigma) = match solve_subproblem(sys, &rows, &working) {
            Ok(pair) => pair,
            Err(e) => {
                // the newest pin conflicts with the equalities: release the
                // least-justified existing pin and retry
                let added = last_added.take();
                let drop = working
                    .iter()
                    .copied()
                    .filter(|&l| Some(l) != added)
                    .min_by(|&a, &b| {
                        last_mu[a].partial_cmp(&last_mu[b]).unwrap().then(a.cmp(&b))
                    });
                match drop {
                    Some(l) => {
                        working.remove(&l);
                        continue;
                    }
                    None => return Err(e),
                }
            }
        };
        // bound multipliers from stationarity on pinned coordinates
        let grad = sys.hessian.dot(&x) + &sys.linear_term;
        let at_sigma = sys.equality_matrix.t().dot(&sigma);
        let mut mu = Array1::zeros(m);
        for &l in &working {
            mu[l] = grad[l] - at_sigma[l];
        }
        last_mu = mu.clone();

        let most_violated = (0..m)
            .filter(|&l| !working.contains(&l))
            .map(|l| (l, x[l] - u[l]))
            .filter(|&(_, gap)| gap > 1e-10 * bound_scale)
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)));
        if let Some((l, _)) = most_violated {
            working.insert(l);
            last_added = Some(l);
            continue;
        }
        let most_negative = working
            .iter()
            .copied()
            .filter(|&l| mu[l] < -1e-10 * bound_scale)
            .min_by(|&a, &b| mu[a].partial_cmp(&mu[b]).unwrap().then(a.cmp(&b)));
        if let Some(l) = most_negative {
            working.remove(&l);
            last_added = None;
            continue;
        }

        // clamp pinned coordinates exactly and drop negligible multipliers
        let mut x = x;
        for &l in &working {
            x[l] = u[l];
            if mu[l] < 0.0 {
                mu[l] = 0.0;
            }
        }
        last_residual = sys.kkt_residual(&x, &sigma, &mu);
        if last_residual <= 1e-8 {
            return Ok(QpSolution {
                solution: x,
                eq_duals: sigma,
                bound_duals: mu,
                active_set: working.into_iter().collect(),
                kkt_residual: last_residual,
                iterations: iter,
            });
        }
        return Err(Error::SolverFailure {
            iterations: iter,
            residual: last_residual,
        });
    }
    Err(Error::SolverFailure {
        iterations: max_iter,
        residual: last_residual,
    })
}

/// One equality-KKT solve with the working set pinned at its bounds.
///
/// Free-variable stationarity and the surviving equality rows are assembled
/// into a symmetric indefinite system; equality rows that become constant
/// (all their variables pinned) are checked for consistency and skipped.
fn solve_subproblem(
    sys: &KktSystem,
    rows: &[usize],
    working: &BTreeSet<usize>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let m = sys.hessian.nrows();
    let u = &sys.upper_bounds;
    let free: Vec<usize> = (0..m).filter(|l| !working.contains(l)).collect();
    let nf = free.len();

    // equality rows with at least one free variable
    let a_scale = sys
        .equality_matrix
        .iter()
        .fold(0.0f64, |acc, x| acc.max(x.abs()))
        .max(1.0);
    let mut live_rows = Vec::new();
    for &r in rows {
        let has_free = free.iter().any(|&l| sys.equality_matrix[[r, l]].abs() > 1e-14 * a_scale);
        let fixed_part: f64 = working
            .iter()
            .map(|&l| sys.equality_matrix[[r, l]] * u[l])
            .sum();
        if has_free {
            live_rows.push((r, sys.equality_rhs[r] - fixed_part));
        } else if (sys.equality_rhs[r] - fixed_part).abs() > 1e-8 * (1.0 + a_scale) {
            return Err(Error::SolverFailure {
                iterations: 0,
                residual: (sys.equality_rhs[r] - fixed_part).abs(),
            });
        }
    }
    let nk = live_rows.len();

    let dim = nf + nk;
    let mut x = Array1::zeros(m);
    for &l in working {
        x[l] = u[l];
    }
    let mut sigma = Array1::zeros(sys.equality_matrix.nrows());
    if dim == 0 {
        return Ok((x, sigma));
    }

    let mut kkt = Array2::zeros((dim, dim));
    let mut rhs = Array1::zeros(dim);
    for (fi, &l) in free.iter().enumerate() {
        for (fj, &l2) in free.iter().enumerate() {
            kkt[[fi, fj]] = -sys.hessian[[l, l2]];
        }
        let mut q = sys.linear_term[l];
        for &w in working {
            q += sys.hessian[[l, w]] * u[w];
        }
        rhs[fi] = q;
        for (ri, &(r, _)) in live_rows.iter().enumerate() {
            kkt[[fi, nf + ri]] = sys.equality_matrix[[r, l]];
            kkt[[nf + ri, fi]] = sys.equality_matrix[[r, l]];
        }
    }
    for (ri, &(_, b)) in live_rows.iter().enumerate() {
        rhs[nf + ri] = b;
    }

    let f = lu_factor(&kkt)?;
    let mut sol = lu_solve(&f, &rhs);
    let r = &rhs - &kkt.dot(&sol);
    let dsol = lu_solve(&f, &r);
    sol += &dsol;

    for (fi, &l) in free.iter().enumerate() {
        x[l] = sol[fi];
    }
    for (ri, &(r, _)) in live_rows.iter().enumerate() {
        sigma[r] = sol[nf + ri];
    }
    Ok((x, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn solve_symmetric_identity_returns_rhs() {
        let a = Array2::eye(3);
        let b = array![1.0, -2.0, 3.5];
        let x = solve_symmetric(&a, &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn solve_symmetric_diagonal() {
        let a = array![[2.0, 0.0], [0.0, 4.0]];
        let b = array![2.0, 8.0];
        let x = solve_symmetric(&a, &b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn solve_symmetric_random_spd_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = 8;
            let mut m = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    m[[i, j]] = rng.random_range(-1.0..1.0);
                }
            }
            let a = m.t().dot(&m) + Array2::<f64>::eye(n);
            let b = Array1::from_iter((0..n).map(|_| rng.random_range(-5.0..5.0)));
            let x = solve_symmetric(&a, &b).unwrap();
            let res = &b - &a.dot(&x);
            let bmax = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            let rmax = res.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            assert!(rmax <= 1e-9 * (1.0 + bmax), "residual {rmax}");
        }
    }

    #[test]
    fn solve_symmetric_reports_singular() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        let b = array![1.0, 2.0];
        assert!(matches!(solve_symmetric(&a, &b), Err(Error::SingularMatrix)));
    }

    #[test]
    fn solve_2x2_identity() {
        let x = solve_2x2([[1.0, 0.0], [0.0, 1.0]], [3.0, 5.0]).unwrap();
        assert_eq!(x, [3.0, 5.0]);
    }

    #[test]
    fn solve_2x2_back_substitution() {
        let m = [[2.0, -3.0], [3.0, -5.0]];
        let b = [-1.0, -3.0];
        let x = solve_2x2(m, b).unwrap();
        for i in 0..2 {
            let lhs = m[i][0] * x[0] + m[i][1] * x[1];
            assert!((lhs - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn solve_2x2_singular_is_degenerate_history() {
        let r = solve_2x2([[1.0, 1.0], [1.0, 1.0]], [1.0, 2.0]);
        assert!(matches!(r, Err(Error::DegenerateHistory)));
    }

    fn random_unbounded_system(rng: &mut ChaCha8Rng, m: usize, k: usize) -> KktSystem {
        let mut g = Array2::zeros((m, m));
        for i in 0..m {
            for j in 0..m {
                g[[i, j]] = rng.random_range(-1.0..1.0);
            }
        }
        let hessian = -(g.t().dot(&g) + Array2::<f64>::eye(m));
        let mut equality_matrix = Array2::zeros((k, m));
        for i in 0..k {
            for j in 0..m {
                equality_matrix[[i, j]] = rng.random_range(-1.0..1.0);
            }
        }
        KktSystem {
            hessian,
            linear_term: Array1::from_iter((0..m).map(|_| rng.random_range(-2.0..2.0))),
            equality_matrix,
            equality_rhs: Array1::from_iter((0..k).map(|_| rng.random_range(-1.0..1.0))),
            upper_bounds: Array1::from_elem(m, 1e12),
        }
    }

    #[test]
    fn qp_without_active_bounds_matches_direct_kkt_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let (m, k) = (6, 2);
            let sys = random_unbounded_system(&mut rng, m, k);
            let sol = solve_eq_qp_active_set(&sys).unwrap();
            assert!(sol.active_set.is_empty());

            // oracle: assemble the equality KKT system and solve it directly
            let dim = m + k;
            let mut kkt = Array2::zeros((dim, dim));
            let mut rhs = Array1::zeros(dim);
            for i in 0..m {
                for j in 0..m {
                    kkt[[i, j]] = -sys.hessian[[i, j]];
                }
                rhs[i] = sys.linear_term[i];
                for r in 0..k {
                    kkt[[i, m + r]] = sys.equality_matrix[[r, i]];
                    kkt[[m + r, i]] = sys.equality_matrix[[r, i]];
                }
            }
            for r in 0..k {
                rhs[m + r] = sys.equality_rhs[r];
            }
            let direct = solve_symmetric(&kkt, &rhs).unwrap();
            for i in 0..m {
                assert!((sol.solution[i] - direct[i]).abs() <= 1e-9);
            }
        }
    }

    /// Two-location pricing shape: xi=1, beta=2.5, alpha=3.75, c=0.1.
    fn symmetric_two_location(p_max: f64) -> KktSystem {
        let (xi, beta, alpha, c) = (1.0, 2.5, 3.75, 0.1);
        let q = xi * (alpha + c * beta);
        KktSystem {
            hessian: array![[-2.0 * xi * beta, 0.0], [0.0, -2.0 * xi * beta]],
            linear_term: array![q, q],
            equality_matrix: array![[-beta, beta], [beta, -beta]],
            equality_rhs: array![0.0, 0.0],
            upper_bounds: array![p_max, p_max],
        }
    }

    #[test]
    fn qp_symmetric_two_location_prices() {
        let sol = solve_eq_qp_active_set(&symmetric_two_location(1.0)).unwrap();
        assert!((sol.solution[0] - 0.8).abs() < 1e-12);
        assert!((sol.solution[1] - 0.8).abs() < 1e-12);
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn qp_binding_cap_reports_positive_dual() {
        // cap below the unconstrained optimum 0.8 binds both links
        let sys = symmetric_two_location(0.5);
        let sol = solve_eq_qp_active_set(&sys).unwrap();
        assert!((sol.solution[0] - 0.5).abs() < 1e-12);
        assert!((sol.solution[1] - 0.5).abs() < 1e-12);
        assert!(!sol.active_set.is_empty());
        assert!(sol.active_set.iter().any(|&l| sol.bound_duals[l] > 0.0));
        // dual feasibility and complementary slackness
        for l in 0..2 {
            assert!(sol.bound_duals[l] >= 0.0);
            assert!((sol.bound_duals[l] * (0.5 - sol.solution[l])).abs() <= 1e-8);
        }
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn qp_asymmetric_binding_cap_matches_grid_search() {
        // two locations, asymmetric demand: cap binds on one link only
        let (xi12, xi21) = (1.0, 2.0);
        let (b12, b21) = (2.0, 3.0);
        let (a12, a21) = (5.0, 3.0);
        let c = 0.1;
        let p_max = 1.0;
        let sys = KktSystem {
            hessian: array![[-2.0 * xi12 * b12, 0.0], [0.0, -2.0 * xi21 * b21]],
            linear_term: array![xi12 * (a12 + c * b12), xi21 * (a21 + c * b21)],
            equality_matrix: array![[-b12, b21], [b12, -b21]],
            equality_rhs: array![a21 - a12, a12 - a21],
            upper_bounds: array![p_max, p_max],
        };
        let sol = solve_eq_qp_active_set(&sys).unwrap();

        // brute force along the one-dimensional feasible line p21(p12)
        let f = |p12: f64, p21: f64| {
            -xi12 * b12 * p12 * p12
                + xi12 * (a12 + c * b12) * p12
                - xi21 * b21 * p21 * p21
                + xi21 * (a21 + c * b21) * p21
        };
        let p21_of = |p12: f64| (a21 - a12 + b12 * p12) / b21;
        let mut best = f64::NEG_INFINITY;
        let mut best_p = (0.0, 0.0);
        let lo = -2.0;
        let steps = 2_000_000usize;
        for s in 0..=steps {
            let p12 = lo + (p_max - lo) * (s as f64) / (steps as f64);
            let p21 = p21_of(p12);
            if p21 > p_max {
                continue;
            }
            let v = f(p12, p21);
            if v > best {
                best = v;
                best_p = (p12, p21);
            }
        }
        assert!((sol.solution[0] - best_p.0).abs() < 1e-4);
        assert!((sol.solution[1] - best_p.1).abs() < 1e-4);
        assert!(sol.kkt_residual <= 1e-8);
        assert!(!sol.active_set.is_empty());
    }
}
