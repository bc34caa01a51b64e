//! Dense linear-algebra and optimization kernels: modified Gram-Schmidt,
//! orthonormal complements, pivoted-QR least squares, power-iteration
//! spectral estimates, soft-thresholding, and a proximal-gradient LASSO
//! solver with momentum and restarts.
//!
//! Everything here is self-contained and deterministic; the matrices this
//! crate meets are at most a few hundred columns wide.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Relative threshold below which a vector is treated as linearly dependent.
/// Gaussian inputs are almost surely full rank; this only guards degenerate
/// fixtures.
pub const DROP_TOL: f64 = 1e-10;

fn l2_norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

fn linf_norm(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().fold(0.0, |acc, &x| acc.max(x.abs()))
}

/// `sign(v) * max(|v| - tau, 0)`, the proximal map of `tau * ||.||_1`.
pub fn soft_threshold_scalar(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// Entrywise soft threshold.
pub fn soft_threshold(v: ArrayView1<'_, f64>, tau: f64) -> Array1<f64> {
    v.mapv(|x| soft_threshold_scalar(x, tau))
}

/// Power-iteration estimate of the largest eigenvalue of a symmetric
/// positive semidefinite operator, to 1e-4 relative change or 1000 rounds.
fn power_iteration(dim: usize, apply: impl Fn(&Array1<f64>) -> Array1<f64>) -> f64 {
    let mut v = Array1::from_elem(dim, 1.0 / (dim as f64).sqrt());
    let mut lambda = 0.0;
    let mut basis_cursor = 0;
    for _ in 0..1000 {
        let w = apply(&v);
        let new_lambda = v.dot(&w);
        let norm = l2_norm(w.view());
        if norm == 0.0 {
            // v is in the null space; restart from the next basis vector.
            if basis_cursor >= dim {
                return 0.0;
            }
            v.fill(0.0);
            v[basis_cursor] = 1.0;
            basis_cursor += 1;
            continue;
        }
        let done = (new_lambda - lambda).abs() <= 1e-4 * new_lambda.abs();
        lambda = new_lambda;
        v = w / norm;
        if done {
            break;
        }
    }
    lambda
}

/// Estimate of the squared spectral norm of `a` (largest eigenvalue of
/// `a^T a`), multiplied by a 1.01 safety factor so `1/result` is a valid
/// gradient step size.
pub fn spectral_norm_sq(a: ArrayView2<'_, f64>) -> f64 {
    let lambda = power_iteration(a.ncols(), |v| {
        let av = a.dot(v);
        a.t().dot(&av)
    });
    lambda * 1.01
}

/// Outcome of a Gram-Schmidt pass.
#[derive(Debug, Clone)]
pub struct MgsOutcome {
    /// Orthonormal vectors spanning the input space.
    pub basis: Vec<Array1<f64>>,
    /// Positions of inputs dropped as numerically dependent.
    pub dropped: Vec<usize>,
}

/// Modified Gram-Schmidt with one re-orthogonalization pass. Inputs whose
/// norm after projection falls below `DROP_TOL` times their original norm
/// are dropped and reported, never fatal.
pub fn mgs_orthonormalize(columns: &[Array1<f64>]) -> MgsOutcome {
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(columns.len());
    let mut dropped = Vec::new();
    for (idx, col) in columns.iter().enumerate() {
        let original = l2_norm(col.view());
        let mut v = col.clone();
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.scaled_add(-c, q);
            }
        }
        let norm = l2_norm(v.view());
        if norm <= DROP_TOL * original {
            dropped.push(idx);
        } else {
            basis.push(v / norm);
        }
    }
    MgsOutcome { basis, dropped }
}

/// Orthonormal basis of the orthogonal complement of `a`'s column space.
#[derive(Debug, Clone)]
pub struct Complement {
    /// `m x (m - rank)` matrix with orthonormal columns, `q^T a = 0`.
    pub q: Array2<f64>,
    /// Numerical rank of `a`.
    pub rank: usize,
    /// True when `rank < a.ncols()`.
    pub rank_deficient: bool,
}

/// Computes an orthonormal basis for the orthogonal complement of the column
/// space of `a` by extending its Gram-Schmidt basis with standard basis
/// vectors.
pub fn orthonormal_complement(a: ArrayView2<'_, f64>) -> Complement {
    let m = a.nrows();
    let cols: Vec<Array1<f64>> = (0..a.ncols()).map(|j| a.column(j).to_owned()).collect();
    let mgs = mgs_orthonormalize(&cols);
    let rank = mgs.basis.len();
    let mut all = mgs.basis;
    let want = m - rank;
    let mut q = Array2::zeros((m, want));
    let mut found = 0;
    for i in 0..m {
        if found == want {
            break;
        }
        let mut v = Array1::zeros(m);
        v[i] = 1.0;
        for _ in 0..2 {
            for b in &all {
                let c = b.dot(&v);
                v.scaled_add(-c, b);
            }
        }
        let norm = l2_norm(v.view());
        if norm > DROP_TOL {
            let unit = v / norm;
            q.column_mut(found).assign(&unit);
            all.push(unit);
            found += 1;
        }
    }
    debug_assert_eq!(found, want);
    Complement {
        q,
        rank,
        rank_deficient: rank < a.ncols(),
    }
}

/// Least-squares solution together with rank information.
#[derive(Debug, Clone)]
pub struct LeastSquaresResult {
    pub solution: Array1<f64>,
    pub rank: usize,
    /// True when `rank < ncols`; the solution is then the minimum-norm one.
    pub rank_deficient: bool,
}

/// Minimizes `||a x - b||_2` via Householder QR with column pivoting.
/// Full-rank systems get the unique solution; rank-deficient (including
/// underdetermined) systems get the minimum-norm solution, flagged.
pub fn least_squares(a: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Result<LeastSquaresResult> {
    let (rows, cols) = a.dim();
    if rows != b.len() {
        return Err(Error::Dimension(format!(
            "least_squares: a has {rows} rows, b has {}",
            b.len()
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension("least_squares: empty system".into()));
    }

    let mut r = a.to_owned();
    let mut qtb = b.to_owned();
    let mut jpvt: Vec<usize> = (0..cols).collect();
    let steps = rows.min(cols);

    // Trailing squared column norms, downdated after each reflection and
    // recomputed when cancellation makes them unreliable.
    let mut col_norms: Vec<f64> = (0..cols).map(|j| r.column(j).dot(&r.column(j))).collect();
    let norms_initial = col_norms.clone();

    let mut diag = Vec::with_capacity(steps);
    for k in 0..steps {
        let (pivot, &pivot_norm) = col_norms[k..]
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .map(|(off, v)| (k + off, v))
            .unwrap();
        if pivot != k {
            for i in 0..rows {
                r.swap((i, k), (i, pivot));
            }
            col_norms.swap(k, pivot);
            jpvt.swap(k, pivot);
        }
        if pivot_norm <= 0.0 {
            diag.push(0.0);
            continue;
        }

        // Householder vector for column k below the diagonal.
        let mut alpha = 0.0;
        for i in k..rows {
            alpha += r[(i, k)] * r[(i, k)];
        }
        let alpha = alpha.sqrt();
        if alpha == 0.0 {
            diag.push(0.0);
            continue;
        }
        let beta = if r[(k, k)] >= 0.0 { -alpha } else { alpha };
        let mut v = Array1::zeros(rows - k);
        for i in k..rows {
            v[i - k] = r[(i, k)];
        }
        v[0] -= beta;
        let vnorm_sq = v.dot(&v);
        if vnorm_sq > 0.0 {
            // Apply I - 2 v v^T / (v^T v) to the trailing block and to b.
            for j in k..cols {
                let mut dot = 0.0;
                for i in k..rows {
                    dot += v[i - k] * r[(i, j)];
                }
                let scale = 2.0 * dot / vnorm_sq;
                for i in k..rows {
                    r[(i, j)] -= scale * v[i - k];
                }
            }
            let mut dot = 0.0;
            for i in k..rows {
                dot += v[i - k] * qtb[i];
            }
            let scale = 2.0 * dot / vnorm_sq;
            for i in k..rows {
                qtb[i] -= scale * v[i - k];
            }
        }
        r[(k, k)] = beta;
        for i in (k + 1)..rows {
            r[(i, k)] = 0.0;
        }
        diag.push(beta.abs());

        for j in (k + 1)..cols {
            let updated = col_norms[j] - r[(k, j)] * r[(k, j)];
            col_norms[j] = if updated < 1e-12 * norms_initial[jpvt[j]].max(1e-300) {
                (k + 1..rows).map(|i| r[(i, j)] * r[(i, j)]).sum()
            } else {
                updated
            };
        }
    }

    let tol = DROP_TOL * diag.first().copied().unwrap_or(0.0);
    let rank = diag.iter().take_while(|&&d| d > tol).count();

    // Back-substitute on the leading rank x rank block.
    let mut x_perm = Array1::zeros(cols);
    for i in (0..rank).rev() {
        let mut s = qtb[i];
        for j in (i + 1)..rank {
            s -= r[(i, j)] * x_perm[j];
        }
        x_perm[i] = s / r[(i, i)];
    }

    let rank_deficient = rank < cols;
    let mut solution = Array1::zeros(cols);
    for (perm_pos, &orig) in jpvt.iter().enumerate() {
        solution[orig] = x_perm[perm_pos];
    }

    if rank_deficient && rank > 0 {
        // Null-space basis from the free columns of R, orthonormalized, then
        // projected out of the basic solution to obtain the min-norm one.
        let mut null_vecs = Vec::with_capacity(cols - rank);
        for free in rank..cols {
            let mut w = Array1::zeros(rank);
            for i in (0..rank).rev() {
                let mut s = r[(i, free)];
                for j in (i + 1)..rank {
                    s -= r[(i, j)] * w[j];
                }
                w[i] = s / r[(i, i)];
            }
            let mut v = Array1::zeros(cols);
            for i in 0..rank {
                v[jpvt[i]] = w[i];
            }
            v[jpvt[free]] = -1.0;
            null_vecs.push(v);
        }
        let basis = mgs_orthonormalize(&null_vecs).basis;
        for q in &basis {
            let c = q.dot(&solution);
            solution.scaled_add(-c, q);
        }
    }

    Ok(LeastSquaresResult {
        solution,
        rank,
        rank_deficient,
    })
}

/// LASSO solver configuration. `lambda: None` applies the default
/// `0.1 * ||a^T b||_inf`, which scales with the data and keeps the solution
/// nonzero (`lambda >= ||a^T b||_inf` forces it to zero).
#[derive(Debug, Clone, PartialEq)]
pub struct LassoConfig {
    pub lambda: Option<f64>,
    pub max_iters: usize,
    /// KKT stopping threshold, scaled by `1 + ||a^T b||_inf`.
    pub tol: f64,
    /// Momentum (with function restart) versus plain proximal gradient.
    pub acceleration: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            max_iters: 20_000,
            tol: 1e-6,
            acceleration: true,
        }
    }
}

/// Solver output. `objectives` records the objective after every iteration,
/// nonincreasing thanks to the restart rule.
#[derive(Debug, Clone)]
pub struct LassoSolution {
    pub coefficients: Array1<f64>,
    pub iterations_used: usize,
    pub final_objective: f64,
    pub kkt_residual: f64,
    /// Resolved regularization weight actually used.
    pub lambda: f64,
    pub objectives: Vec<f64>,
}

/// Smooth part of the objective, evaluated either through the data matrix or
/// through a precomputed Gram system when the matrix is tall.
enum LassoOp<'a> {
    Direct {
        a: ArrayView2<'a, f64>,
        b: ArrayView1<'a, f64>,
    },
    Gram {
        gram: Array2<f64>,
        atb: Array1<f64>,
        b_norm_sq: f64,
    },
}

impl LassoOp<'_> {
    fn gradient(&self, x: &Array1<f64>) -> Array1<f64> {
        match self {
            LassoOp::Direct { a, b } => {
                let r = a.dot(x) - b;
                a.t().dot(&r)
            }
            LassoOp::Gram { gram, atb, .. } => gram.dot(x) - atb,
        }
    }

    /// Returns `(0.5 ||ax - b||^2, gradient)`.
    fn eval(&self, x: &Array1<f64>) -> (f64, Array1<f64>) {
        match self {
            LassoOp::Direct { a, b } => {
                let r = a.dot(x) - b;
                let obj = 0.5 * r.dot(&r);
                (obj, a.t().dot(&r))
            }
            LassoOp::Gram {
                gram,
                atb,
                b_norm_sq,
            } => {
                let gx = gram.dot(x);
                let obj = 0.5 * x.dot(&gx) - atb.dot(x) + 0.5 * b_norm_sq;
                (obj, gx - atb)
            }
        }
    }
}

fn kkt_residual(x: &Array1<f64>, grad: &Array1<f64>, lambda: f64) -> f64 {
    let mut worst = 0.0f64;
    for (&xi, &gi) in x.iter().zip(grad.iter()) {
        let r = if xi > 0.0 {
            (gi + lambda).abs()
        } else if xi < 0.0 {
            (gi - lambda).abs()
        } else {
            (gi.abs() - lambda).max(0.0)
        };
        worst = worst.max(r);
    }
    worst
}

/// Solves `min_x 0.5 ||a x - b||_2^2 + lambda ||x||_1` by proximal gradient
/// with step `1 / (1.01 ||a||^2)`, optional momentum, and function restart.
/// Convergence is certified by the KKT residual at the iterate; hitting
/// `max_iters` first yields [`Error::NonConvergence`] carrying the best
/// iterate found.
pub fn lasso<'a>(
    a: ArrayView2<'a, f64>,
    b: ArrayView1<'a, f64>,
    config: &LassoConfig,
) -> Result<LassoSolution> {
    let (rows, cols) = a.dim();
    if rows != b.len() {
        return Err(Error::Dimension(format!(
            "lasso: a has {rows} rows, b has {}",
            b.len()
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension("lasso: empty system".into()));
    }
    if config.tol <= 0.0 {
        return Err(Error::Domain("lasso: tol must be > 0".into()));
    }
    if a.iter().all(|&v| v == 0.0) {
        return Err(Error::Domain("lasso: matrix is zero".into()));
    }

    let atb = a.t().dot(&b);
    let lambda = match config.lambda {
        Some(l) if l < 0.0 => return Err(Error::Domain("lasso: lambda must be >= 0".into())),
        Some(l) => l,
        None => 0.1 * linf_norm(atb.view()),
    };

    let (op, lipschitz) = if rows >= cols {
        let gram = a.t().dot(&a);
        let lip = power_iteration(cols, |v| gram.dot(v)) * 1.01;
        (
            LassoOp::Gram {
                gram,
                atb: atb.clone(),
                b_norm_sq: b.dot(&b),
            },
            lip,
        )
    } else {
        (LassoOp::Direct { a, b }, spectral_norm_sq(a))
    };
    let step = 1.0 / lipschitz;
    let kkt_scale = config.tol * (1.0 + linf_norm(atb.view()));

    let l1 = |x: &Array1<f64>| x.iter().map(|v| v.abs()).sum::<f64>();
    let prox_step = |from: &Array1<f64>, grad: &Array1<f64>| {
        let shifted = from - &(grad * step);
        soft_threshold(shifted.view(), step * lambda)
    };

    let mut x = Array1::zeros(cols);
    let (smooth0, grad0) = op.eval(&x);
    let mut obj_x = smooth0;
    let mut kkt = kkt_residual(&x, &grad0, lambda);
    let mut objectives = vec![obj_x];
    let mut y = x.clone();
    let mut theta = 1.0f64;
    let mut best: (f64, Array1<f64>, f64) = (kkt, x.clone(), obj_x);
    let mut iterations_used = 0;

    if kkt > kkt_scale {
        for iter in 1..=config.max_iters {
            iterations_used = iter;
            let grad_y = op.gradient(&y);
            let mut x_new = prox_step(&y, &grad_y);
            let (mut smooth, mut grad_new) = op.eval(&x_new);
            let mut obj_new = smooth + lambda * l1(&x_new);
            if config.acceleration && obj_new > obj_x {
                // Momentum overshoot: restart and retake a plain step from x,
                // which cannot increase the objective at step <= 1/L.
                theta = 1.0;
                let grad_x = op.gradient(&x);
                x_new = prox_step(&x, &grad_x);
                let (s2, g2) = op.eval(&x_new);
                smooth = s2;
                grad_new = g2;
                obj_new = smooth + lambda * l1(&x_new);
            }
            kkt = kkt_residual(&x_new, &grad_new, lambda);
            objectives.push(obj_new);

            if config.acceleration {
                let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
                let momentum = (theta - 1.0) / theta_new;
                y = &x_new + &((&x_new - &x) * momentum);
                theta = theta_new;
            } else {
                y = x_new.clone();
            }
            x = x_new;
            obj_x = obj_new;
            if kkt < best.0 {
                best = (kkt, x.clone(), obj_x);
            }
            if kkt <= kkt_scale {
                break;
            }
        }
    }

    let solution = LassoSolution {
        coefficients: x,
        iterations_used,
        final_objective: obj_x,
        kkt_residual: kkt,
        lambda,
        objectives,
    };
    if kkt <= kkt_scale {
        Ok(solution)
    } else {
        let best_solution = LassoSolution {
            coefficients: best.1,
            iterations_used,
            final_objective: best.2,
            kkt_residual: best.0,
            lambda,
            objectives: solution.objectives,
        };
        Err(Error::NonConvergence {
            residual: best.0,
            best: Box::new(best_solution),
        })
    }
}
