//! Semidefinite relaxation, rounding and certification.
//!
//! The relaxation lifts `R = [s₁R₁ … s_NR_N]` to `X = RᵀR ⪰ 0` and keeps the linear
//! consequences of each diagonal block being a scaled identity.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_with, ProblemMatrices};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{project_to_so3, SimilarityTransform};
use crate::graph::ViewGraph;
use crate::refine::{dual_certificate, penalized_cost, refine_scaled_rotations};
use crate::ipm::{
    ConicProgram, ConicSolver, Constraint, InteriorPoint, IpmSettings, SdpSolution, SolveStatus, SparseSym,
};

/// Default relative suboptimality accepted as a certificate.
pub const DEFAULT_ETA_TOL: f64 = 0.05;
/// Relative suboptimality below which the relaxation is reported as exact.
pub const EXACT_ETA_TOL: f64 = 1e-6;
/// Rounded scales below this are reported as degenerate.
pub const MIN_SCALE: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct SdpProblem {
    pub program: ConicProgram,
    pub n_frames: usize,
    pub lambda: f64,
    pub anchor_first: bool,
}

fn entry(r: usize, c: usize, v: f64) -> SparseSym {
    let mut m = SparseSym::new();
    m.push(r, c, v);
    m
}

/// Constraint reading `X[r][c]` (off-diagonal entries use half weight in the symmetric pair).
fn read(block: usize, r: usize, c: usize) -> Constraint {
    Constraint::single(block, entry(r, c, if r == c { 1.0 } else { 0.5 }))
}

fn diag_difference(o: usize, a: usize, b: usize) -> Constraint {
    let mut m = SparseSym::new();
    m.push(o + a, o + a, 1.0);
    m.push(o + b, o + b, -1.0);
    Constraint::single(0, m)
}

fn frame_constraints(n: usize, anchor_first: bool) -> (Vec<Constraint>, Vec<f64>) {
    let mut cons = Vec::with_capacity(5 * n + 1);
    let mut b = Vec::with_capacity(5 * n + 1);
    if anchor_first {
        for k in 0..3 {
            cons.push(read(0, k, k));
            b.push(1.0);
        }
    } else {
        let mut tr = SparseSym::new();
        for k in 0..3 {
            tr.push(k, k, 1.0);
        }
        cons.push(Constraint::single(0, tr));
        b.push(3.0);
        cons.push(diag_difference(0, 0, 1));
        cons.push(diag_difference(0, 1, 2));
        b.extend([0.0, 0.0]);
    }
    for (r, c) in [(0, 1), (0, 2), (1, 2)] {
        cons.push(read(0, r, c));
        b.push(0.0);
    }
    for i in 1..n {
        let o = 3 * i;
        for (r, c) in [(0, 1), (0, 2), (1, 2)] {
            cons.push(read(0, o + r, o + c));
            b.push(0.0);
        }
        cons.push(diag_difference(o, 0, 1));
        cons.push(diag_difference(o, 1, 2));
        b.extend([0.0, 0.0]);
    }
    (cons, b)
}

fn check_cost(q: &DMatrix<f64>) -> Result<usize> {
    if q.nrows() != q.ncols() || q.nrows() % 3 != 0 || q.nrows() == 0 {
        return Err(Error::InvalidInput(format!("cost must be 3N×3N, got {}×{}", q.nrows(), q.ncols())));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("cost has non-finite entries".into()));
    }
    let asym = (q - q.transpose()).amax();
    if asym > 1e-9 * q.amax().max(1.0) {
        return Err(Error::InvalidInput(format!("cost is not symmetric (max asymmetry {asym:e})")));
    }
    Ok(q.nrows() / 3)
}

/// `min tr(QX)` subject to the scaled-identity block structure; `5(N-1) + 6` equalities.
///
/// With `anchor_first` the first block is fixed to `I₃`; otherwise only `tr(X₁₁) = 3` and the
/// block structure are imposed, which keeps the same constraint count.
pub fn build_sdp(q: &DMatrix<f64>, anchor_first: bool) -> Result<SdpProblem> {
    let n = check_cost(q)?;
    let (constraints, b) = frame_constraints(n, anchor_first);
    Ok(SdpProblem {
        program: ConicProgram {
            block_sizes: vec![3 * n],
            cost: vec![(q + q.transpose()) * 0.5],
            constraints,
            b: b.into(),
        },
        n_frames: n,
        lambda: 0.0,
        anchor_first,
    })
}

/// Adds `λ Σ_{i≥2} (tr(X_ii)/3 - 1)²` through the epigraph blocks `[[1, m_i], [m_i, u_i]] ⪰ 0`
/// with `m_i = tr(X_ii)/3 - 1`; `7N - 1` equalities for `λ > 0`.
pub fn build_regularized_sdp(q: &DMatrix<f64>, lambda: f64) -> Result<SdpProblem> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let mut p = build_sdp(q, true)?;
    if lambda == 0.0 {
        return Ok(p);
    }
    let n = p.n_frames;
    let prog = &mut p.program;
    let mut b: Vec<f64> = prog.b.iter().copied().collect();
    for i in 1..n {
        let blk = i;
        prog.block_sizes.push(2);
        prog.cost.push(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, lambda]));
        prog.constraints.push(read(blk, 0, 0));
        b.push(1.0);
        let mut x = SparseSym::new();
        for k in 0..3 {
            x.push(3 * i + k, 3 * i + k, -1.0 / 3.0);
        }
        prog.constraints.push(Constraint {
            parts: vec![(blk, entry(0, 1, 0.5)), (0, x)],
        });
        b.push(-1.0);
    }
    prog.b = b.into();
    p.lambda = lambda;
    Ok(p)
}

impl SdpProblem {
    pub fn n_constraints(&self) -> usize {
        self.program.n_constraints()
    }

    /// Objective of the lifted problem at `X = RᵀR`, with auxiliary blocks at their optimum.
    pub fn lifted_objective(&self, r_stacked: &DMatrix<f64>) -> f64 {
        let x = r_stacked.transpose() * r_stacked;
        self.program.cost[0].dot(&x) + self.lambda * scale_penalty(r_stacked)
    }

    /// Primal point `X = RᵀR` with `u_i = m_i²` in the auxiliary blocks.
    pub fn lift(&self, r_stacked: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let x = r_stacked.transpose() * r_stacked;
        let mut blocks = vec![x.clone()];
        if self.program.block_sizes.len() > 1 {
            for i in 1..self.n_frames {
                let m = x.view((3 * i, 3 * i), (3, 3)).trace() / 3.0 - 1.0;
                blocks.push(DMatrix::from_row_slice(2, 2, &[1.0, m, m, m * m]));
            }
        }
        blocks
    }

    pub fn solve(&self, solver: &dyn ConicSolver) -> Result<SdpSolution> {
        solver.solve(&self.program)
    }
}

/// `Σ_{i≥2} (s_i² - 1)²` with `s_i² = tr(X_ii)/3`.
fn scale_penalty(r_stacked: &DMatrix<f64>) -> f64 {
    let n = r_stacked.ncols() / 3;
    (1..n)
        .map(|i| {
            let b = r_stacked.columns(3 * i, 3);
            (b.norm_squared() / 3.0 - 1.0).powi(2)
        })
        .sum()
}

/// Residuals of the six quadratic equalities characterizing `{sR : s ≥ 0, R ∈ O(3)}`:
/// equal column norms and mutually orthogonal columns.
pub fn scaled_orthogonal_residuals(m: &Matrix3<f64>) -> [f64; 6] {
    let c = |k: usize| m.column(k).into_owned();
    let (c1, c2, c3) = (c(0), c(1), c(2));
    [
        c1.dot(&c1) - c2.dot(&c2),
        c2.dot(&c2) - c3.dot(&c3),
        c1.dot(&c1) - c3.dot(&c3),
        c1.dot(&c2),
        c1.dot(&c3),
        c2.dot(&c3),
    ]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameEstimate {
    pub id: usize,
    pub s: f64,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct SyncSolution {
    pub transforms: Vec<SimilarityTransform>,
    /// SDP optimum; a lower bound on the nonconvex optimum.
    pub f_star: f64,
    /// Objective at the rounded feasible point.
    pub rho_hat: f64,
    pub eta: f64,
    pub certified: bool,
    pub det_positive: bool,
    /// `η ≤ 1e-6`.
    pub exact: bool,
    pub eta_tol: f64,
    pub lambda: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// `det(U₁ᵀU_i)` before projection, one per frame.
    pub block_determinants: Vec<f64>,
    pub bound_source: BoundSource,
}

/// Where `f_star` came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSource {
    /// The interior-point objective values.
    Solver,
    /// Multipliers recovered from the refined estimate with a PSD slack.
    Certificate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificateReport {
    pub certified: bool,
    pub exact: bool,
    pub eta: f64,
    pub eta_tol: f64,
    pub det_positive: bool,
}

/// η ≤ `eta_tol` and every pre-projection block has positive determinant.
pub fn certify(solution: &SyncSolution, eta_tol: f64) -> CertificateReport {
    CertificateReport {
        certified: solution.eta <= eta_tol && solution.det_positive,
        exact: solution.eta <= EXACT_ETA_TOL,
        eta: solution.eta,
        eta_tol,
        det_positive: solution.det_positive,
    }
}

pub fn relative_suboptimality(f_star: f64, rho_hat: f64) -> f64 {
    (rho_hat - f_star) / (1.0 + f_star.abs() + rho_hat.abs())
}

/// Rounds the 3N×3N block `x` to one similarity per frame.
///
/// `f_star` is the optimum of the problem that produced `x`; when `lambda > 0` the rounded
/// objective includes the same scale penalty so that η compares like with like.
pub fn round_matrix(
    x: &DMatrix<f64>,
    matrices: &ProblemMatrices,
    f_star: f64,
    lambda: f64,
) -> Result<SyncSolution> {
    let n = matrices.n_frames;
    if x.nrows() != 3 * n || x.ncols() != 3 * n {
        return Err(Error::InvalidInput(format!("X must be {0}×{0}", 3 * n)));
    }
    let mut xs = (x + x.transpose()) * 0.5;
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("X has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(std::mem::take(&mut xs));
    let mut order: Vec<usize> = (0..3 * n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut u = DMatrix::zeros(3 * n, 3);
    for (k, &idx) in order.iter().take(3).enumerate() {
        let scale = eig.eigenvalues[idx].max(0.0).sqrt();
        u.set_column(k, &(eig.eigenvectors.column(idx) * scale));
    }
    let block = |u: &DMatrix<f64>, i: usize| -> Matrix3<f64> { u.fixed_view::<3, 3>(3 * i, 0).into_owned() };
    if block(&u, 0).determinant() < 0.0 {
        let c = -u.column(2);
        u.set_column(2, &c);
    }
    let y1 = block(&u, 0);
    let mut transforms = Vec::with_capacity(n);
    let mut dets = Vec::with_capacity(n);
    transforms.push(SimilarityTransform::identity());
    dets.push((y1 * y1.transpose()).determinant());
    for i in 1..n {
        let m = y1 * block(&u, i).transpose();
        dets.push(m.determinant());
        let s = m.norm() / 3f64.sqrt();
        if !(s >= MIN_SCALE) {
            return Err(Error::DegenerateScale { frame: i, scale: s });
        }
        transforms.push(SimilarityTransform {
            scale: s,
            rotation: project_to_so3(&(m / s)),
            translation: Vector3::zeros(),
        });
    }
    let r_stacked = crate::assembly::stack_scaled_rotations(&transforms);
    let t = matrices.recover_translations(&r_stacked);
    for (i, tr) in transforms.iter_mut().enumerate().skip(1) {
        tr.translation = Vector3::new(t[3 * i], t[3 * i + 1], t[3 * i + 2]);
    }
    let mut rho_hat = matrices.scaled_rotation_cost(&r_stacked);
    if lambda > 0.0 {
        rho_hat += lambda * scale_penalty(&r_stacked);
    }
    let eta = relative_suboptimality(f_star, rho_hat);
    let det_positive = dets.iter().all(|&d| d > 0.0);
    Ok(SyncSolution {
        transforms,
        f_star,
        rho_hat,
        eta,
        certified: eta <= DEFAULT_ETA_TOL && det_positive,
        det_positive,
        exact: eta <= EXACT_ETA_TOL,
        eta_tol: DEFAULT_ETA_TOL,
        lambda,
        status: SolveStatus::Optimal,
        iterations: 0,
        block_determinants: dets,
        bound_source: BoundSource::Solver,
    })
}

/// Rounds a solved relaxation.
pub fn round_solution(solution: &SdpSolution, problem: &SdpProblem, matrices: &ProblemMatrices) -> Result<SyncSolution> {
    if matches!(solution.status, SolveStatus::Infeasible | SolveStatus::Failed) {
        return Err(Error::Solver(format!("cannot round a solution with status {:?}", solution.status)));
    }
    // The dual value is a valid lower bound at any dual-feasible iterate.
    let f_star = solution.primal_objective.min(solution.dual_objective);
    let mut out = round_matrix(&solution.x[0], matrices, f_star, problem.lambda)?;
    out.status = solution.status;
    out.iterations = solution.iterations;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct SyncOptions {
    pub lambda: f64,
    pub anchor_first: bool,
    pub eta_tol: f64,
    pub ipm: IpmSettings,
    pub execution: Execution,
    /// Polish the rounded estimate locally and try to certify it with a dual point.
    pub refine: bool,
}

impl Default for SyncOptions {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            anchor_first: true,
            eta_tol: DEFAULT_ETA_TOL,
            ipm: IpmSettings::default(),
            execution: Execution::default(),
            refine: true,
        }
    }
}

/// Assemble, relax, solve, round and certify.
pub fn solve_graph(graph: &ViewGraph, options: &SyncOptions) -> Result<SyncSolution> {
    let solver = InteriorPoint::new(options.ipm.clone());
    solve_graph_with(graph, options, &solver)
}

pub fn solve_graph_with(graph: &ViewGraph, options: &SyncOptions, solver: &dyn ConicSolver) -> Result<SyncSolution> {
    let matrices = assemble_with(graph, options.execution)?;
    solve_matrices(&matrices, options, solver)
}

pub fn solve_matrices(matrices: &ProblemMatrices, options: &SyncOptions, solver: &dyn ConicSolver) -> Result<SyncSolution> {
    let problem = if options.lambda > 0.0 {
        if !options.anchor_first {
            return Err(Error::InvalidInput("scale regularization requires an anchored first frame".into()));
        }
        build_regularized_sdp(&matrices.q, options.lambda)?
    } else {
        build_sdp(&matrices.q, options.anchor_first)?
    };
    let sdp = problem.solve(solver)?;
    let mut out = round_solution(&sdp, &problem, matrices)?;
    if options.refine {
        polish(&mut out, &problem, matrices);
    }
    let report = certify(&out, options.eta_tol);
    out.certified = report.certified;
    out.eta_tol = options.eta_tol;
    Ok(out)
}

/// Slack blocks may dip this far below zero, relative to `1 + ‖C_b‖_F`, and still certify.
pub const CERTIFICATE_PSD_TOL: f64 = 1e-10;

/// Factors `V_b` with `X_b = V_b V_bᵀ` for the lift of a stacked estimate.
pub fn lifted_factors(problem: &SdpProblem, r_stacked: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let mut factors = vec![r_stacked.transpose()];
    if problem.program.block_sizes.len() > 1 {
        for i in 1..problem.n_frames {
            let m = r_stacked.columns(3 * i, 3).norm_squared() / 3.0 - 1.0;
            factors.push(DMatrix::from_column_slice(2, 1, &[1.0, m]));
        }
    }
    factors
}

/// Newton refinement of the rounded point, then a dual certificate at the refined point.
///
/// The estimate is replaced only if its objective drops; `f_star` only if the certificate bound
/// is higher than the solver's.
fn polish(out: &mut SyncSolution, problem: &SdpProblem, matrices: &ProblemMatrices) {
    let lambda = problem.lambda;
    let start = crate::assembly::stack_scaled_rotations(&out.transforms);
    let refined = refine_scaled_rotations(&matrices.q, &start, lambda);
    let rho = penalized_cost(&matrices.q, &refined, lambda);
    if rho <= out.rho_hat + 1e-13 * (matrices.q.norm() * start.norm_squared() + lambda * matrices.n_frames as f64) {
        let t = matrices.recover_translations(&refined);
        for (i, tr) in out.transforms.iter_mut().enumerate().skip(1) {
            let m: Matrix3<f64> = refined.fixed_view::<3, 3>(0, 3 * i).into_owned();
            let s = m.norm() / 3f64.sqrt();
            tr.scale = s;
            tr.rotation = project_to_so3(&(m / s));
            tr.translation = Vector3::new(t[3 * i], t[3 * i + 1], t[3 * i + 2]);
        }
        out.rho_hat = rho;
    }
    let r = crate::assembly::stack_scaled_rotations(&out.transforms);
    if let Ok(cert) = dual_certificate(&problem.program, &lifted_factors(problem, &r)) {
        if cert.is_psd(&problem.program, CERTIFICATE_PSD_TOL) && cert.bound > out.f_star {
            out.f_star = cert.bound;
            out.bound_source = BoundSource::Certificate;
        }
    }
    out.eta = relative_suboptimality(out.f_star, out.rho_hat);
    out.exact = out.eta <= EXACT_ETA_TOL;
}

impl SyncSolution {
    pub fn frames(&self) -> Vec<FrameEstimate> {
        self.transforms
            .iter()
            .enumerate()
            .map(|(id, t)| FrameEstimate {
                id,
                s: t.scale,
                r: t.rotation_row_major(),
                t: [t.translation.x, t.translation.y, t.translation.z],
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "frames": self.frames(),
            "f_star": self.f_star,
            "rho_hat": self.rho_hat,
            "eta": self.eta,
            "certified": self.certified,
            "det_positive": self.det_positive,
            "exact": self.exact,
            "eta_tol": self.eta_tol,
            "lambda": self.lambda,
            "eta_reference": if self.lambda > 0.0 { "regularized" } else { "unregularized" },
            "status": self.status,
            "iterations": self.iterations,
            "f_star_source": self.bound_source,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<SyncSolution> {
        let frames: Vec<FrameEstimate> = serde_json::from_value(v["frames"].clone())?;
        let num = |k: &str| {
            v[k].as_f64()
                .ok_or_else(|| Error::Schema(format!("missing numeric field `{k}`")))
        };
        let transforms = frames
            .iter()
            .map(|f| {
                SimilarityTransform::new(
                    f.s,
                    Matrix3::from_row_slice(&f.r),
                    Vector3::new(f.t[0], f.t[1], f.t[2]),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let eta = num("eta")?;
        Ok(SyncSolution {
            transforms,
            f_star: num("f_star")?,
            rho_hat: num("rho_hat")?,
            eta,
            certified: v["certified"].as_bool().unwrap_or(false),
            det_positive: v["det_positive"].as_bool().unwrap_or(true),
            exact: eta <= EXACT_ETA_TOL,
            eta_tol: v["eta_tol"].as_f64().unwrap_or(DEFAULT_ETA_TOL),
            lambda: v["lambda"].as_f64().unwrap_or(0.0),
            status: serde_json::from_value(v["status"].clone()).unwrap_or(SolveStatus::Optimal),
            iterations: v["iterations"].as_u64().unwrap_or(0) as usize,
            block_determinants: Vec::new(),
            bound_source: serde_json::from_value(v["f_star_source"].clone()).unwrap_or(BoundSource::Solver),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, stack_scaled_rotations};
    use crate::geometry::random_rotation;
    use crate::graph::{Correspondence, Edge, Frame};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_scaled(rng: &mut ChaCha8Rng, n: usize) -> Vec<SimilarityTransform> {
        let mut out = vec![SimilarityTransform::identity()];
        for _ in 1..n {
            out.push(SimilarityTransform {
                scale: rng.random_range(0.3..3.0),
                rotation: random_rotation(rng),
                translation: Vector3::zeros(),
            });
        }
        out
    }

    fn noise_free_graph(rng: &mut ChaCha8Rng, truth: &[SimilarityTransform]) -> ViewGraph {
        let world: Vec<Vector3<f64>> = (0..20)
            .map(|_| Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let frames = truth
            .iter()
            .enumerate()
            .map(|(i, t)| Frame::new(format!("{i}"), world.iter().map(|p| t.inverse().apply(p)).collect()))
            .collect();
        let mut edges = Vec::new();
        for i in 0..truth.len() {
            for j in i + 1..truth.len() {
                edges.push(Edge::new(i, j, (0..20).map(|k| Correspondence::new(k, k, 1.0)).collect()));
            }
        }
        ViewGraph::new(frames, edges)
    }

    #[test]
    fn constraint_counts() {
        for n in 1..6 {
            let q = DMatrix::identity(3 * n, 3 * n);
            assert_eq!(build_sdp(&q, true).unwrap().n_constraints(), 5 * (n - 1) + 6);
            assert_eq!(build_sdp(&q, false).unwrap().n_constraints(), 5 * (n - 1) + 6);
            assert_eq!(build_regularized_sdp(&q, 2.0).unwrap().n_constraints(), 7 * n - 1);
        }
        assert_eq!(build_sdp(&DMatrix::identity(6, 6), true).unwrap().n_constraints(), 11);
        assert!(build_regularized_sdp(&DMatrix::identity(6, 6), -1.0).is_err());
    }

    #[test]
    fn lifted_scaled_rotations_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for n in [1, 3, 5] {
            let r = stack_scaled_rotations(&random_scaled(&mut rng, n));
            let q = DMatrix::identity(3 * n, 3 * n);
            for p in [build_sdp(&q, true).unwrap(), build_regularized_sdp(&q, 3.0).unwrap()] {
                let x = p.lift(&r);
                let res = &p.program.b - p.program.apply(&x);
                assert!(res.amax() < 1e-12, "{}", res.amax());
            }
        }
    }

    #[test]
    fn scaled_orthogonal_membership() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut r = random_rotation(&mut rng);
            if rng.random_bool(0.5) {
                r = -r;
            }
            let m = r * rng.random_range(0.0..4.0);
            assert!(scaled_orthogonal_residuals(&m).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn exact_rank_three_rounds_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let truth = random_scaled(&mut rng, 4);
        let g = noise_free_graph(&mut rng, &truth);
        let m = assemble(&g).unwrap();
        let r = stack_scaled_rotations(&truth);
        let x = r.transpose() * &r;
        let f = m.q.dot(&x);
        let sol = round_matrix(&x, &m, f, 0.0).unwrap();
        for (a, b) in sol.transforms.iter().zip(&truth) {
            assert!((a.scale - b.scale).abs() < 1e-9);
            assert!((a.rotation - b.rotation).norm() < 1e-9);
        }
        assert!(sol.eta.abs() < 1e-9);
        assert!(certify(&sol, DEFAULT_ETA_TOL).certified);
    }

    #[test]
    fn identical_frames_round_to_identity() {
        let n = 3;
        let ones = DMatrix::from_element(n, n, 1.0);
        let x = ones.kronecker(&DMatrix::<f64>::identity(3, 3));
        let frames = (0..n)
            .map(|i| Frame::new(format!("{i}"), vec![Vector3::x(), Vector3::y(), Vector3::z(), Vector3::new(1.0, 1.0, 0.0)]))
            .collect();
        let edges = vec![
            Edge::new(0, 1, (0..4).map(|k| Correspondence::new(k, k, 1.0)).collect()),
            Edge::new(1, 2, (0..4).map(|k| Correspondence::new(k, k, 1.0)).collect()),
        ];
        let m = assemble(&ViewGraph::new(frames, edges)).unwrap();
        let sol = round_matrix(&x, &m, 0.0, 0.0).unwrap();
        for t in &sol.transforms {
            assert!((t.scale - 1.0).abs() < 1e-12);
            assert!((t.rotation - Matrix3::identity()).norm() < 1e-12);
        }
    }

    #[test]
    fn reflection_is_not_certified() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut truth = random_scaled(&mut rng, 3);
        let g = noise_free_graph(&mut rng, &truth);
        let m = assemble(&g).unwrap();
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        truth[2].rotation *= flip;
        let r = stack_scaled_rotations(&truth);
        let x = r.transpose() * &r;
        let sol = round_matrix(&x, &m, m.q.dot(&x), 0.0).unwrap();
        assert!(!sol.det_positive);
        assert!(!certify(&sol, 1.0).certified);
    }

    #[test]
    fn eta_threshold() {
        let mut s = round_matrix(
            &DMatrix::identity(3, 3),
            &assemble(&ViewGraph::new(vec![Frame::new("a", vec![])], vec![])).unwrap(),
            0.0,
            0.0,
        )
        .unwrap();
        s.eta = 0.09;
        assert!(!certify(&s, 0.05).certified);
        s.eta = 0.04;
        assert!(certify(&s, 0.05).certified);
    }

    #[test]
    fn degenerate_scale_is_reported() {
        let g = ViewGraph::new(
            vec![Frame::new("a", vec![Vector3::x()]), Frame::new("b", vec![Vector3::x()])],
            vec![Edge::new(0, 1, vec![Correspondence::new(0, 0, 1.0)])],
        );
        let m = assemble(&g).unwrap();
        let mut x = DMatrix::zeros(6, 6);
        x.view_mut((0, 0), (3, 3)).fill_with_identity();
        assert!(matches!(round_matrix(&x, &m, 0.0, 0.0), Err(Error::DegenerateScale { frame: 1, .. })));
    }

    #[test]
    fn single_frame_is_trivial() {
        let q = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.0, 0.0, 0.0, 3.0]);
        let p = build_sdp(&q, true).unwrap();
        assert_eq!(p.n_constraints(), 6);
        let sol = p.solve(&InteriorPoint::default()).unwrap();
        assert!((sol.primal_objective - q.trace()).abs() < 1e-8);
        assert!((&sol.x[0] - DMatrix::<f64>::identity(3, 3)).amax() < 1e-8);
    }

    #[test]
    fn noise_free_sync_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut truth = random_scaled(&mut rng, 4);
        for t in truth.iter_mut().skip(1) {
            t.translation = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        }
        let g = noise_free_graph(&mut rng, &truth);
        let sol = solve_graph(&g, &SyncOptions::default()).unwrap();
        assert!(sol.exact, "eta = {}", sol.eta);
        for (a, b) in sol.transforms.iter().zip(&truth) {
            assert!((a.scale - b.scale).abs() < 1e-5);
            assert!((a.translation - b.translation).norm() < 1e-4);
        }
        let json = sol.to_json();
        let back = SyncSolution::from_json(&json).unwrap();
        assert_eq!(back.transforms.len(), 4);
        assert_eq!(back.f_star, sol.f_star);
    }
}
