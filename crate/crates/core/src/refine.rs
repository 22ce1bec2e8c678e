//! Local refinement of rounded estimates and dual certificates built from them.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{exp_so3, hat};
use crate::ipm::ConicProgram;

const MAX_NEWTON_ITERS: usize = 50;

/// `tr(Q RᵀR) + λ Σ_{i≥2} (s_i² - 1)²` with `s_i² = ‖R_i‖²_F / 3`.
pub fn penalized_cost(q: &DMatrix<f64>, r: &DMatrix<f64>, lambda: f64) -> f64 {
    let mut f = (r * q * r.transpose()).trace();
    if lambda > 0.0 {
        let n = r.ncols() / 3;
        for i in 1..n {
            f += lambda * (r.columns(3 * i, 3).norm_squared() / 3.0 - 1.0).powi(2);
        }
    }
    f
}

fn basis() -> [Matrix3<f64>; 4] {
    [
        Matrix3::identity(),
        hat(&Vector3::x()),
        hat(&Vector3::y()),
        hat(&Vector3::z()),
    ]
}

fn block(r: &DMatrix<f64>, i: usize) -> Matrix3<f64> {
    r.fixed_view::<3, 3>(0, 3 * i).into_owned()
}

/// Gradient and Hessian in the coordinates `M_i ← M_i exp(a_i) exp(ω_i^)`, frames 2..N.
fn derivatives(q: &DMatrix<f64>, r: &DMatrix<f64>, lambda: f64) -> (DVector<f64>, DMatrix<f64>) {
    let n = r.ncols() / 3;
    let p = 4 * (n - 1);
    let k = basis();
    let g_full = r * q * 2.0;
    let mk: Vec<[Matrix3<f64>; 4]> = (1..n)
        .map(|i| {
            let m = block(r, i);
            [m * k[0], m * k[1], m * k[2], m * k[3]]
        })
        .collect();
    let mut grad = DVector::zeros(p);
    let mut hess = DMatrix::zeros(p, p);
    for (a, i) in (1..n).enumerate() {
        let gi = block(&g_full, i);
        let m = block(r, i);
        let s2 = m.norm_squared() / 3.0;
        for u in 0..4 {
            grad[4 * a + u] = gi.dot(&mk[a][u]);
            for v in 0..4 {
                let kk = (k[u] * k[v] + k[v] * k[u]) * 0.5;
                hess[(4 * a + u, 4 * a + v)] += gi.dot(&(m * kk));
            }
        }
        if lambda > 0.0 {
            grad[4 * a] += 4.0 * lambda * s2 * (s2 - 1.0);
            hess[(4 * a, 4 * a)] += 8.0 * lambda * s2 * (2.0 * s2 - 1.0);
        }
    }
    for (a, i) in (1..n).enumerate() {
        for (b, j) in (1..n).enumerate().skip(a) {
            let qij: Matrix3<f64> = q.fixed_view::<3, 3>(3 * i, 3 * j).into_owned();
            for v in 0..4 {
                let y = qij * mk[b][v].transpose();
                for u in 0..4 {
                    let h = 2.0 * (mk[a][u] * y).trace();
                    hess[(4 * a + u, 4 * b + v)] += h;
                    if a != b {
                        hess[(4 * b + v, 4 * a + u)] += h;
                    }
                }
            }
        }
    }
    (grad, hess)
}

fn retract(r: &DMatrix<f64>, step: &DVector<f64>) -> DMatrix<f64> {
    let mut out = r.clone();
    for i in 1..r.ncols() / 3 {
        let d = step.fixed_rows::<4>(4 * (i - 1));
        let m = block(r, i) * d[0].exp() * exp_so3(&Vector3::new(d[1], d[2], d[3]));
        out.fixed_view_mut::<3, 3>(0, 3 * i).copy_from(&m);
    }
    out
}

/// Riemannian gradient in the same coordinates as [`derivatives`].
fn gradient(q: &DMatrix<f64>, r: &DMatrix<f64>, lambda: f64) -> DVector<f64> {
    let n = r.ncols() / 3;
    let k = basis();
    let g_full = r * q * 2.0;
    let mut grad = DVector::zeros(4 * (n - 1));
    for i in 1..n {
        let (gi, m) = (block(&g_full, i), block(r, i));
        for u in 0..4 {
            grad[4 * (i - 1) + u] = gi.dot(&(m * k[u]));
        }
        if lambda > 0.0 {
            let s2 = m.norm_squared() / 3.0;
            grad[4 * (i - 1)] += 4.0 * lambda * s2 * (s2 - 1.0);
        }
    }
    grad
}

/// Damped Newton descent on [`penalized_cost`] over scaled rotations, frame 1 held fixed.
///
/// Near a minimizer the cost is dominated by rounding, so a step that leaves it unchanged within
/// that noise is still taken when it halves the gradient. Returns the input when no step helps.
pub fn refine_scaled_rotations(q: &DMatrix<f64>, r: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let n = r.ncols() / 3;
    if n < 2 {
        return r.clone();
    }
    let mut cur = r.clone();
    let mut f = penalized_cost(q, &cur, lambda);
    let q_norm = q.norm();
    for _ in 0..MAX_NEWTON_ITERS {
        let (g, h) = derivatives(q, &cur, lambda);
        let g_norm = g.norm();
        if g_norm == 0.0 {
            break;
        }
        let diag_max = h.diagonal().amax().max(f64::MIN_POSITIVE);
        let mut damping = 0.0;
        let step = loop {
            let mut hd = h.clone();
            for k in 0..hd.nrows() {
                hd[(k, k)] += damping;
            }
            if let Some(ch) = hd.cholesky() {
                break Some(-ch.solve(&g));
            }
            damping = if damping == 0.0 { 1e-10 * diag_max } else { damping * 10.0 };
            if damping > diag_max * 1e6 {
                break None;
            }
        };
        let Some(step) = step else { break };
        let noise = 1e-13 * (q_norm * cur.norm_squared() + lambda * n as f64);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let cand = retract(&cur, &(&step * alpha));
            let fc = penalized_cost(q, &cand, lambda);
            let flat = fc <= f + noise && gradient(q, &cand, lambda).norm() < 0.5 * g_norm;
            if fc < f - noise || flat {
                accepted = Some((cand, fc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        cur = cand;
        f = fc;
    }
    cur
}

#[derive(Clone, Debug)]
pub struct DualCertificate {
    /// `bᵀy` corrected by `λ_min(S_b) tr(V_bV_bᵀ)` for blocks with a negative minimum eigenvalue.
    pub bound: f64,
    pub y: DVector<f64>,
    /// Minimum eigenvalue of each dual slack block `S_b = C_b - (Aᵀy)_b`.
    pub min_eigenvalues: Vec<f64>,
    /// `‖S V‖ / (1 + ‖C V‖)` over all blocks.
    pub stationarity_residual: f64,
}

impl DualCertificate {
    /// Every slack block is PSD up to `tol · (1 + ‖C_b‖_F)`.
    pub fn is_psd(&self, program: &ConicProgram, tol: f64) -> bool {
        self.min_eigenvalues
            .iter()
            .zip(&program.cost)
            .all(|(&l, c)| l >= -tol * (1.0 + c.norm()))
    }
}

/// Dual multipliers making `S_b V_b = 0` for a primal candidate `X_b = V_b V_bᵀ`, by least squares.
pub fn dual_certificate(program: &ConicProgram, factors: &[DMatrix<f64>]) -> Result<DualCertificate> {
    if factors.len() != program.block_sizes.len() {
        return Err(Error::InvalidInput("one factor per block is required".into()));
    }
    let mut offsets = Vec::with_capacity(factors.len());
    let mut rows = 0;
    for (f, &n) in factors.iter().zip(&program.block_sizes) {
        if f.nrows() != n {
            return Err(Error::InvalidInput(format!("factor has {} rows, block has {n}", f.nrows())));
        }
        offsets.push(rows);
        rows += n * f.ncols();
    }
    let m = program.n_constraints();

    // Row-wise sparse B with B y = vec((Aᵀy) V), and c = vec(C V).
    let mut b_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
    for (k, con) in program.constraints.iter().enumerate() {
        for (blk, a) in &con.parts {
            let v = &factors[*blk];
            let n = program.block_sizes[*blk];
            for (r, c, val) in a.full_entries() {
                for col in 0..v.ncols() {
                    b_rows[offsets[*blk] + col * n + r].push((k, val * v[(c, col)]));
                }
            }
        }
    }
    let mut rhs = DVector::zeros(rows);
    for (blk, v) in factors.iter().enumerate() {
        let cv = &program.cost[blk] * v;
        rhs.rows_mut(offsets[blk], cv.len()).copy_from_slice(cv.as_slice());
    }
    let apply_b = |y: &DVector<f64>| -> DVector<f64> {
        DVector::from_iterator(rows, b_rows.iter().map(|row| row.iter().map(|&(k, v)| v * y[k]).sum::<f64>()))
    };
    let apply_bt = |r: &DVector<f64>| -> DVector<f64> {
        let mut out = DVector::zeros(m);
        for (row, &rv) in b_rows.iter().zip(r.iter()) {
            for &(k, v) in row {
                out[k] += v * rv;
            }
        }
        out
    };
    let mut normal = DMatrix::<f64>::zeros(m, m);
    for row in &b_rows {
        for &(k1, v1) in row {
            for &(k2, v2) in row {
                normal[(k1, k2)] += v1 * v2;
            }
        }
    }
    let ridge = 1e-14 * normal.diagonal().amax().max(f64::MIN_POSITIVE);
    for k in 0..m {
        normal[(k, k)] += ridge;
    }
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::Solver("certificate normal equations are not positive definite".into()))?;
    let mut y = chol.solve(&apply_bt(&rhs));
    for _ in 0..2 {
        let r = &rhs - apply_b(&y);
        y += chol.solve(&apply_bt(&r));
    }
    let residual = (&rhs - apply_b(&y)).norm() / (1.0 + rhs.norm());

    let aty = program.adjoint(&y);
    let mut bound = program.b.dot(&y);
    let mut min_eigenvalues = Vec::with_capacity(factors.len());
    for ((c, a), v) in program.cost.iter().zip(&aty).zip(factors) {
        let s = c - a;
        let s = (&s + s.transpose()) * 0.5;
        let lmin = s.symmetric_eigenvalues().min();
        if lmin < 0.0 {
            bound += lmin * v.norm_squared();
        }
        min_eigenvalues.push(lmin);
    }
    Ok(DualCertificate {
        bound,
        y,
        min_eigenvalues,
        stationarity_residual: residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n + 2, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose()
    }

    fn stacked(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(3, 3 * n);
        r.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        for i in 1..n {
            let m = random_rotation(rng) * rng.random_range(0.5..1.5);
            r.fixed_view_mut::<3, 3>(0, 3 * i).copy_from(&m);
        }
        r
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 4;
        let q = random_psd(&mut rng, 3 * n);
        let r = stacked(&mut rng, n);
        for lambda in [0.0, 3.0] {
            let (g, h) = derivatives(&q, &r, lambda);
            let eps = 1e-5;
            for k in 0..g.len() {
                let mut e = DVector::zeros(g.len());
                e[k] = eps;
                let fp = penalized_cost(&q, &retract(&r, &e), lambda);
                let fm = penalized_cost(&q, &retract(&r, &(-&e)), lambda);
                let f0 = penalized_cost(&q, &r, lambda);
                assert!(((fp - fm) / (2.0 * eps) - g[k]).abs() < 1e-6 * (1.0 + g[k].abs()));
                assert!(((fp - 2.0 * f0 + fm) / (eps * eps) - h[(k, k)]).abs() < 1e-3 * (1.0 + h[(k, k)].abs()));
            }
        }
    }

    #[test]
    fn refinement_recovers_a_planted_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 5;
        let truth = stacked(&mut rng, n);
        // Q with null space exactly the rows of the planted point.
        let p = DMatrix::<f64>::identity(3 * n, 3 * n) - truth.transpose() * (&truth * truth.transpose()).try_inverse().unwrap() * &truth;
        let q = &p * p.transpose();
        let mut start = truth.clone();
        for i in 1..n {
            let m = block(&truth, i) * exp_so3(&Vector3::new(0.05, -0.03, 0.02)) * 1.03;
            start.fixed_view_mut::<3, 3>(0, 3 * i).copy_from(&m);
        }
        let out = refine_scaled_rotations(&q, &start, 0.0);
        assert!((&out - &truth).amax() < 1e-9);
    }
}
