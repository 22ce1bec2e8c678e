//! Dense Nesterov–Todd predictor-corrector method with an infeasible start.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::presolve::presolve;
use super::{
    block_inner, block_norm, ConicProgram, ConicSolver, IpmSettings, IterateRecord, SdpSolution, SolveStatus,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct InteriorPoint {
    pub settings: IpmSettings,
}

impl InteriorPoint {
    pub fn new(settings: IpmSettings) -> Self {
        Self { settings }
    }
}

impl ConicSolver for InteriorPoint {
    fn name(&self) -> &str {
        "interior-point"
    }

    fn solve(&self, problem: &ConicProgram) -> Result<SdpSolution> {
        problem.validate()?;
        let m = problem.n_constraints();
        let (keep, dropped) = if self.settings.presolve {
            let p = presolve(problem, self.settings.presolve_tol);
            if !p.consistent {
                return Ok(SdpSolution::infeasible(problem, p.dropped));
            }
            (p.kept, p.dropped)
        } else {
            ((0..m).collect(), Vec::new())
        };
        let reduced = if dropped.is_empty() {
            problem.clone()
        } else {
            problem.select_constraints(&keep)
        };
        let mut sol = solve_reduced(&reduced, &self.settings)?;
        if !dropped.is_empty() {
            let mut y = DVector::zeros(m);
            for (k, &i) in keep.iter().enumerate() {
                y[i] = sol.y[k];
            }
            sol.y = y;
            // Report residuals against the full constraint set.
            let rp = &problem.b - problem.apply(&sol.x);
            sol.primal_infeasibility = rp.norm() / (1.0 + problem.b.norm());
        }
        sol.dropped_constraints = dropped;
        Ok(sol)
    }
}

/// Per-block Nesterov–Todd scaling: `W = G Gᵀ`, `Gᵀ S G = G⁻¹ X G⁻ᵀ = diag(d)`.
struct Scaling {
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    w: DMatrix<f64>,
    d: DVector<f64>,
    l_inv: DMatrix<f64>,
    r_inv: DMatrix<f64>,
}

fn lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    l.solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("Cholesky factor has a positive diagonal")
}

fn scaling(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<Scaling> {
    let l = x.clone().cholesky()?.unpack();
    let r = s.clone().cholesky()?.unpack();
    let rl = r.transpose() * &l;
    let lsl = rl.transpose() * &rl;
    let eig = SymmetricEigen::new(lsl);
    let d = eig.eigenvalues.map(|v| v.max(f64::MIN_POSITIVE).sqrt());
    let q = eig.eigenvectors;
    let d_isqrt = d.map(|v| 1.0 / v.sqrt());
    let d_sqrt = d.map(|v| v.sqrt());
    let g = &l * &q * DMatrix::from_diagonal(&d_isqrt);
    let l_inv = lower_inverse(&l);
    let g_inv = DMatrix::from_diagonal(&d_sqrt) * q.transpose() * &l_inv;
    let mut w = &g * g.transpose();
    symmetrize(&mut w);
    let r_inv = lower_inverse(&r);
    Some(Scaling {
        g,
        g_inv,
        w,
        d,
        l_inv,
        r_inv,
    })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest step `α ≤ 1` keeping `X + α dX ⪰ 0`, damped by `fraction`.
fn step_length(l_inv: &DMatrix<f64>, dx: &DMatrix<f64>, fraction: f64) -> f64 {
    let mut t = l_inv * dx * l_inv.transpose();
    symmetrize(&mut t);
    let lmin = t.symmetric_eigenvalues().min();
    if lmin >= 0.0 {
        1.0
    } else {
        (fraction * (-1.0 / lmin)).min(1.0)
    }
}

/// Iterations without a better iterate before giving up.
const NO_PROGRESS_ITERS: usize = 15;

/// Constraint entries grouped by block for the Schur complement.
struct BlockIndex {
    /// For each block: `(constraint, full entries)`.
    per_block: Vec<Vec<(usize, Vec<(usize, usize, f64)>)>>,
}

impl BlockIndex {
    fn new(p: &ConicProgram) -> Self {
        let mut per_block = vec![Vec::new(); p.block_sizes.len()];
        for (i, con) in p.constraints.iter().enumerate() {
            for (blk, m) in &con.parts {
                per_block[*blk].push((i, m.full_entries()));
            }
        }
        Self { per_block }
    }
}

/// `M_ij = ⟨A_i, W A_j W⟩`.
fn schur_complement(index: &BlockIndex, scal: &[Scaling], m: usize) -> DMatrix<f64> {
    let mut mat = DMatrix::zeros(m, m);
    for (blk, cons) in index.per_block.iter().enumerate() {
        let w = &scal[blk].w;
        for (a, (i, ei)) in cons.iter().enumerate() {
            for (j, ej) in cons[a..].iter() {
                let mut acc = 0.0;
                for &(q, r, va) in ei {
                    for &(s, p, vb) in ej {
                        acc += va * vb * w[(q, s)] * w[(p, r)];
                    }
                }
                mat[(*i, *j)] += acc;
                if i != j {
                    mat[(*j, *i)] += acc;
                }
            }
        }
    }
    mat
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    dy: DVector<f64>,
    ds: Vec<DMatrix<f64>>,
}

fn solve_direction(
    p: &ConicProgram,
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    schur: &DMatrix<f64>,
    scal: &[Scaling],
    rp: &DVector<f64>,
    rd: &[DMatrix<f64>],
    rc: &[DMatrix<f64>],
) -> Direction {
    // M dy = rp - A(Rc - W Rd W)
    let tmp: Vec<DMatrix<f64>> = rc
        .iter()
        .zip(rd)
        .zip(scal)
        .map(|((c, d), sc)| c - &sc.w * d * &sc.w)
        .collect();
    let rhs = rp - p.apply(&tmp);
    let mut dy = chol.solve(&rhs);
    for _ in 0..2 {
        let r = &rhs - schur * &dy;
        dy += chol.solve(&r);
    }
    let aty = p.adjoint(&dy);
    let ds: Vec<DMatrix<f64>> = rd.iter().zip(&aty).map(|(d, a)| d - a).collect();
    let dx: Vec<DMatrix<f64>> = rc
        .iter()
        .zip(&ds)
        .zip(scal)
        .map(|((c, s), sc)| {
            let mut v = c - &sc.w * s * &sc.w;
            symmetrize(&mut v);
            v
        })
        .collect();
    Direction { dx, dy, ds }
}

struct Metrics {
    pobj: f64,
    dobj: f64,
    xs: f64,
    pinf: f64,
    dinf: f64,
    rel_gap: f64,
}

fn unscale(x: &[DMatrix<f64>], f: f64) -> Vec<DMatrix<f64>> {
    x.iter().map(|b| b * f).collect()
}

fn solve_reduced(p: &ConicProgram, settings: &IpmSettings) -> Result<SdpSolution> {
    let m = p.n_constraints();
    let n_total: usize = p.block_sizes.iter().sum();
    let b_norm = p.b.norm();
    let c_norm = block_norm(&p.cost);

    // Work with C / c_scale and b / b_scale.
    let c_scale = c_norm.max(1.0);
    let b_scale = b_norm.max(1.0);
    let sp = ConicProgram {
        block_sizes: p.block_sizes.clone(),
        cost: unscale(&p.cost, 1.0 / c_scale),
        constraints: p.constraints.clone(),
        b: &p.b / b_scale,
    };
    let index = BlockIndex::new(&sp);

    let tau = block_norm(&sp.cost).max(sp.b.norm()).max(1.0);
    let mut x: Vec<DMatrix<f64>> = p.block_sizes.iter().map(|&n| DMatrix::identity(n, n) * tau).collect();
    let mut s = x.clone();
    let mut y = DVector::zeros(m);

    let metrics = |x: &[DMatrix<f64>], y: &DVector<f64>, s: &[DMatrix<f64>]| -> (Metrics, DVector<f64>, Vec<DMatrix<f64>>) {
        let rp = &sp.b - sp.apply(x);
        let aty = sp.adjoint(y);
        let rd: Vec<DMatrix<f64>> = sp
            .cost
            .iter()
            .zip(&aty)
            .zip(s)
            .map(|((c, a), s)| c - a - s)
            .collect();
        let pobj = sp.objective(x) * c_scale * b_scale;
        let dobj = sp.b.dot(y) * c_scale * b_scale;
        let xs = block_inner(x, s) * c_scale * b_scale;
        let pinf = rp.norm() * b_scale / (1.0 + b_norm);
        let dinf = block_norm(&rd) * c_scale / (1.0 + c_norm);
        let rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        (
            Metrics {
                pobj,
                dobj,
                xs,
                pinf,
                dinf,
                rel_gap,
            },
            rp,
            rd,
        )
    };

    let mut trace = Vec::new();
    let mut best: Option<(f64, Vec<DMatrix<f64>>, DVector<f64>, Vec<DMatrix<f64>>, usize)> = None;
    let mut status = SolveStatus::Inaccurate;
    let mut iterations = 0;
    let mut stall = 0;
    let mut prev_step = 1.0f64;

    for it in 0..=settings.max_iters {
        iterations = it;
        let (mt, rp, rd) = metrics(&x, &y, &s);
        if !(mt.pobj.is_finite() && mt.dobj.is_finite()) {
            status = SolveStatus::Failed;
            break;
        }
        trace.push(IterateRecord {
            primal_objective: mt.pobj,
            dual_objective: mt.dobj,
            complementarity: mt.xs,
            primal_infeasibility: mt.pinf,
            dual_infeasibility: mt.dinf,
            residual_gap: mt.pobj - mt.dobj - mt.xs,
        });
        if settings.verbose {
            eprintln!(
                "{it:4} pobj {:+.10e} dobj {:+.10e} gap {:.2e} pinf {:.2e} dinf {:.2e}",
                mt.pobj, mt.dobj, mt.rel_gap, mt.pinf, mt.dinf
            );
        }
        let score = mt.rel_gap.max(mt.pinf).max(mt.dinf);
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, x.clone(), y.clone(), s.clone(), it));
        } else if best.as_ref().is_some_and(|b| it >= b.4 + NO_PROGRESS_ITERS) {
            break;
        }
        if mt.rel_gap <= settings.gap_tol && mt.pinf <= settings.feas_tol && mt.dinf <= settings.feas_tol {
            status = SolveStatus::Optimal;
            break;
        }
        // Dual objective diverging while the dual stays feasible certifies primal infeasibility.
        let y_norm = y.norm();
        if y_norm > 1e12 && mt.dinf <= 1e-6 && sp.b.dot(&y) > 1e-3 * y_norm * sp.b.norm() {
            status = SolveStatus::Infeasible;
            break;
        }
        if it == settings.max_iters {
            break;
        }

        let mu = block_inner(&x, &s) / n_total as f64;
        let scal: Option<Vec<Scaling>> = x.iter().zip(&s).map(|(xb, sb)| scaling(xb, sb)).collect();
        let Some(scal) = scal else {
            status = SolveStatus::Inaccurate;
            break;
        };
        let mut schur = schur_complement(&index, &scal, m);
        let mut chol = schur.clone().cholesky();
        if chol.is_none() {
            let diag_max = schur.diagonal().amax().max(1e-300);
            for i in 0..m {
                schur[(i, i)] += 1e-14 * diag_max;
            }
            chol = schur.clone().cholesky();
        }
        let Some(chol) = chol else {
            break;
        };

        // Predictor.
        let rc_aff: Vec<DMatrix<f64>> = x.iter().map(|b| -b).collect();
        let aff = solve_direction(&sp, &chol, &schur, &scal, &rp, &rd, &rc_aff);
        let ap = scal
            .iter()
            .zip(&aff.dx)
            .map(|(sc, d)| step_length(&sc.l_inv, d, 1.0))
            .fold(1.0, f64::min);
        let ad = scal
            .iter()
            .zip(&aff.ds)
            .map(|(sc, d)| step_length(&sc.r_inv, d, 1.0))
            .fold(1.0, f64::min);
        let xs_now = block_inner(&x, &s);
        let x_aff: Vec<DMatrix<f64>> = x.iter().zip(&aff.dx).map(|(a, d)| a + d * ap).collect();
        let s_aff: Vec<DMatrix<f64>> = s.iter().zip(&aff.ds).map(|(a, d)| a + d * ad).collect();
        let ratio = (block_inner(&x_aff, &s_aff) / xs_now).clamp(0.0, 1.0);
        let expon = (3.0 * ap.min(ad).powi(2)).max(1.0);
        let sigma = ratio.powf(expon);

        // Corrector in the scaled space.
        let rc: Vec<DMatrix<f64>> = scal
            .iter()
            .zip(aff.dx.iter().zip(&aff.ds))
            .map(|(sc, (dx, ds))| {
                let n = sc.d.len();
                let dxt = &sc.g_inv * dx * sc.g_inv.transpose();
                let dst = sc.g.transpose() * ds * &sc.g;
                let prod = &dxt * &dst;
                let mut z = DMatrix::zeros(n, n);
                for q in 0..n {
                    for r in 0..n {
                        let mut rt = -0.5 * (prod[(q, r)] + prod[(r, q)]);
                        if q == r {
                            rt += sigma * mu - sc.d[q] * sc.d[q];
                        }
                        z[(q, r)] = 2.0 * rt / (sc.d[q] + sc.d[r]);
                    }
                }
                let mut out = &sc.g * z * sc.g.transpose();
                symmetrize(&mut out);
                out
            })
            .collect();
        let dir = solve_direction(&sp, &chol, &schur, &scal, &rp, &rd, &rc);
        let fraction = settings.step_fraction.min(0.9 + 0.09 * prev_step);
        let ap = scal
            .iter()
            .zip(&dir.dx)
            .map(|(sc, d)| step_length(&sc.l_inv, d, fraction))
            .fold(1.0, f64::min);
        let ad = scal
            .iter()
            .zip(&dir.ds)
            .map(|(sc, d)| step_length(&sc.r_inv, d, fraction))
            .fold(1.0, f64::min);
        for (b, d) in x.iter_mut().zip(&dir.dx) {
            *b += d * ap;
            symmetrize(b);
        }
        for (b, d) in s.iter_mut().zip(&dir.ds) {
            *b += d * ad;
            symmetrize(b);
        }
        y += &dir.dy * ad;
        prev_step = ap.min(ad);

        if ap.max(ad) < 1e-10 {
            stall += 1;
            if stall >= 5 {
                break;
            }
        } else {
            stall = 0;
        }
    }

    if status == SolveStatus::Inaccurate || status == SolveStatus::Failed {
        if let Some((_, bx, by, bs, _)) = best.take() {
            x = bx;
            y = by;
            s = bs;
        }
        if status == SolveStatus::Failed && x.iter().all(|b| b.iter().all(|v| v.is_finite())) {
            status = SolveStatus::Inaccurate;
        }
    }
    let (mt, _, _) = metrics(&x, &y, &s);
    if status == SolveStatus::Failed {
        return Err(Error::Solver("interior-point iterates became non-finite".into()));
    }
    Ok(SdpSolution {
        status,
        x: unscale(&x, b_scale),
        y: y * c_scale,
        s: unscale(&s, c_scale),
        primal_objective: mt.pobj,
        dual_objective: mt.dobj,
        relative_gap: mt.rel_gap,
        primal_infeasibility: mt.pinf,
        dual_infeasibility: mt.dinf,
        iterations,
        dropped_constraints: Vec::new(),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{Constraint, SparseSym};
    use super::*;

    fn diag_constraint(_n: usize, k: usize) -> Constraint {
        let mut a = SparseSym::new();
        a.push(k, k, 1.0);
        Constraint::single(0, a)
    }

    /// `min ⟨C, X⟩ s.t. diag(X) = 1` is the max-cut relaxation; for `C = -11ᵀ` the optimum is `-n²`.
    #[test]
    fn maxcut_all_ones() {
        let n = 5;
        let p = ConicProgram {
            block_sizes: vec![n],
            cost: vec![-DMatrix::from_element(n, n, 1.0)],
            constraints: (0..n).map(|k| diag_constraint(n, k)).collect(),
            b: DVector::from_element(n, 1.0),
        };
        let sol = InteriorPoint::default().solve(&p).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal_objective + 25.0).abs() < 1e-7);
        assert!((sol.dual_objective + 25.0).abs() < 1e-7);
    }

    /// `min ⟨C, X⟩ s.t. tr X = 1` has optimum `λ_min(C)`.
    #[test]
    fn trace_constraint_gives_min_eigenvalue() {
        let c = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.5, -1.0, 3.0, 0.2, 0.5, 0.2, 1.0]);
        let mut a = SparseSym::new();
        for k in 0..3 {
            a.push(k, k, 1.0);
        }
        let p = ConicProgram {
            block_sizes: vec![3],
            cost: vec![c.clone()],
            constraints: vec![Constraint::single(0, a)],
            b: DVector::from_element(1, 1.0),
        };
        let sol = InteriorPoint::default().solve(&p).unwrap();
        let lmin = c.symmetric_eigenvalues().min();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal_objective - lmin).abs() < 1e-8);
    }
}
