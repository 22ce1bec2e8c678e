//! Closed-form cost matrices and translation elimination.
//!
//! With `t ∈ R^{3N}` the stacked translations and `R = [s₁R₁ … s_NR_N]` the
//! stacked scaled rotations, the weighted point-to-point cost reads
//! `tr(T Q1 Tᵀ) + 2 tr(R V Tᵀ) + tr(R Q2 Rᵀ)` where `T = [t₁ … t_N]`.
//! Eliminating translations with frame 0 anchored leaves `tr(Q RᵀR)`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geometry::SimilarityTransform;
use crate::graph::{connected_components, ViewGraph};

/// `Q1` (N×N), `Q2` (3N×3N) and `V` (3N×N) before translation elimination.
#[derive(Clone, Debug)]
pub struct CostBlocks {
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

/// Cost blocks plus the elimination operator `A` (N×3N) and reduced cost `Q` (3N×3N).
#[derive(Clone, Debug)]
pub struct ProblemMatrices {
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub n_frames: usize,
}

struct EdgeMoments {
    i: usize,
    j: usize,
    w: f64,
    sum_a: Vector3<f64>,
    sum_b: Vector3<f64>,
    aa: Matrix3<f64>,
    bb: Matrix3<f64>,
    ab: Matrix3<f64>,
}

fn edge_moments(graph: &ViewGraph, edge: usize) -> EdgeMoments {
    let e = &graph.edges[edge];
    let (pi, pj) = (&graph.frames[e.i].points, &graph.frames[e.j].points);
    let mut m = EdgeMoments {
        i: e.i,
        j: e.j,
        w: 0.0,
        sum_a: Vector3::zeros(),
        sum_b: Vector3::zeros(),
        aa: Matrix3::zeros(),
        bb: Matrix3::zeros(),
        ab: Matrix3::zeros(),
    };
    for c in &e.matches {
        let (a, b, w) = (pi[c.ki], pj[c.kj], c.weight);
        m.w += w;
        m.sum_a += a * w;
        m.sum_b += b * w;
        m.aa += a * a.transpose() * w;
        m.bb += b * b.transpose() * w;
        m.ab += a * b.transpose() * w;
    }
    m
}

pub fn assemble_cost_blocks(graph: &ViewGraph) -> Result<CostBlocks> {
    assemble_cost_blocks_with(graph, Execution::default())
}

/// Per-edge moments are computed with `exec`; accumulation runs in edge order.
pub fn assemble_cost_blocks_with(graph: &ViewGraph, exec: Execution) -> Result<CostBlocks> {
    let n = graph.n_frames();
    for (idx, e) in graph.edges.iter().enumerate() {
        if e.i >= n || e.j >= n || e.i == e.j {
            return Err(Error::IndexOutOfRange(format!("edge {idx} has endpoints ({}, {})", e.i, e.j)));
        }
        let (ni, nj) = (graph.frames[e.i].points.len(), graph.frames[e.j].points.len());
        if e.matches.iter().any(|c| c.ki >= ni || c.kj >= nj) {
            return Err(Error::IndexOutOfRange(format!("edge {idx} references a missing point")));
        }
    }
    let moments = exec::map_range(graph.edges.len(), exec, |e| edge_moments(graph, e));
    let mut q1 = DMatrix::zeros(n, n);
    let mut q2 = DMatrix::zeros(3 * n, 3 * n);
    let mut v = DMatrix::zeros(3 * n, n);
    for m in &moments {
        let (i, j) = (m.i, m.j);
        q1[(i, i)] += m.w;
        q1[(j, j)] += m.w;
        q1[(i, j)] -= m.w;
        q1[(j, i)] -= m.w;

        let mut blk = q2.fixed_view_mut::<3, 3>(3 * i, 3 * i);
        blk += m.aa;
        let mut blk = q2.fixed_view_mut::<3, 3>(3 * j, 3 * j);
        blk += m.bb;
        let mut blk = q2.fixed_view_mut::<3, 3>(3 * i, 3 * j);
        blk -= m.ab;
        let mut blk = q2.fixed_view_mut::<3, 3>(3 * j, 3 * i);
        blk -= m.ab.transpose();

        let mut col = v.fixed_view_mut::<3, 1>(3 * i, i);
        col += m.sum_a;
        let mut col = v.fixed_view_mut::<3, 1>(3 * i, j);
        col -= m.sum_a;
        let mut col = v.fixed_view_mut::<3, 1>(3 * j, i);
        col -= m.sum_b;
        let mut col = v.fixed_view_mut::<3, 1>(3 * j, j);
        col += m.sum_b;
    }
    Ok(CostBlocks { q1, q2, v })
}

pub fn assemble(graph: &ViewGraph) -> Result<ProblemMatrices> {
    assemble_with(graph, Execution::default())
}

pub fn assemble_with(graph: &ViewGraph, exec: Execution) -> Result<ProblemMatrices> {
    let n = graph.n_frames();
    if n == 0 {
        return Err(Error::InvalidInput("graph has no frames".into()));
    }
    let blocks = assemble_cost_blocks_with(graph, exec)?;
    let comps = connected_components(
        n,
        graph
            .edges
            .iter()
            .filter(|e| e.total_weight() > 0.0)
            .map(|e| (e.i, e.j)),
    );
    if comps.len() > 1 {
        return Err(Error::Assembly(format!(
            "Q̄1ᵀQ̄1 is singular: the weighted graph has {} connected components",
            comps.len()
        )));
    }
    eliminate_translations(blocks)
}

/// Builds `A = [0; -(Q̄1ᵀQ̄1)⁻¹Q̄1ᵀVᵀ]` and `Q = AᵀQ1A + VA + AᵀVᵀ + Q2`, symmetrized.
pub fn eliminate_translations(blocks: CostBlocks) -> Result<ProblemMatrices> {
    let CostBlocks { q1, q2, v } = blocks;
    let n = q1.nrows();
    let mut a = DMatrix::zeros(n, 3 * n);
    if n > 1 {
        let q1_bar = q1.columns(1, n - 1);
        let normal = q1_bar.transpose() * q1_bar;
        let chol = normal
            .cholesky()
            .ok_or_else(|| Error::Assembly("Q̄1ᵀQ̄1 is singular; the weighted graph is disconnected".into()))?;
        let rhs = q1_bar.transpose() * v.transpose();
        let a_bar = -chol.solve(&rhs);
        a.rows_mut(1, n - 1).copy_from(&a_bar);
    }
    let va = &v * &a;
    let mut q = a.transpose() * &q1 * &a + &va + va.transpose() + &q2;
    q = (&q + q.transpose()) * 0.5;
    Ok(ProblemMatrices {
        q1,
        q2,
        v,
        a,
        q,
        n_frames: n,
    })
}

/// `[s₁R₁ … s_NR_N]` as a 3×3N matrix.
pub fn stack_scaled_rotations(transforms: &[SimilarityTransform]) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(3, 3 * transforms.len());
    for (i, t) in transforms.iter().enumerate() {
        r.fixed_view_mut::<3, 3>(0, 3 * i).copy_from(&t.scaled_rotation());
    }
    r
}

/// `[t₁ … t_N]` as a 3×N matrix.
pub fn stack_translations(transforms: &[SimilarityTransform]) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(3, transforms.len());
    for (i, x) in transforms.iter().enumerate() {
        t.fixed_view_mut::<3, 1>(0, i).copy_from(&x.translation);
    }
    t
}

/// Weighted sum of squared point-to-point residuals, evaluated correspondence by correspondence.
pub fn evaluate_objective(graph: &ViewGraph, transforms: &[SimilarityTransform]) -> f64 {
    graph
        .edges
        .iter()
        .map(|e| {
            let (ti, tj) = (&transforms[e.i], &transforms[e.j]);
            let (pi, pj) = (&graph.frames[e.i].points, &graph.frames[e.j].points);
            e.matches
                .iter()
                .map(|c| c.weight * (ti.apply(&pi[c.ki]) - tj.apply(&pj[c.kj])).norm_squared())
                .sum::<f64>()
        })
        .sum()
}

/// `L(t, r) = tᵀ(Q1⊗I)t + 2rᵀ(V⊗I)t + rᵀ(Q2⊗I)r` in matricized form.
pub fn evaluate_quadratic_form(q1: &DMatrix<f64>, q2: &DMatrix<f64>, v: &DMatrix<f64>, r: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    let tq1t = (t * q1 * t.transpose()).trace();
    let rvt = (r * v * t.transpose()).trace();
    let rq2r = (r * q2 * r.transpose()).trace();
    tq1t + 2.0 * rvt + rq2r
}

impl CostBlocks {
    pub fn evaluate(&self, transforms: &[SimilarityTransform]) -> f64 {
        evaluate_quadratic_form(
            &self.q1,
            &self.q2,
            &self.v,
            &stack_scaled_rotations(transforms),
            &stack_translations(transforms),
        )
    }
}

impl ProblemMatrices {
    pub fn evaluate(&self, transforms: &[SimilarityTransform]) -> f64 {
        evaluate_quadratic_form(
            &self.q1,
            &self.q2,
            &self.v,
            &stack_scaled_rotations(transforms),
            &stack_translations(transforms),
        )
    }

    /// Optimal translations `t = (A ⊗ I₃) vec(R)` as a 3N vector; the first block is zero.
    pub fn recover_translations(&self, r_stacked: &DMatrix<f64>) -> DVector<f64> {
        let t = r_stacked * self.a.transpose();
        DVector::from_column_slice(t.as_slice())
    }

    /// `tr(Q RᵀR)`.
    pub fn scaled_rotation_cost(&self, r_stacked: &DMatrix<f64>) -> f64 {
        (r_stacked * &self.q * r_stacked.transpose()).trace()
    }
}

pub fn recover_translations(matrices: &ProblemMatrices, r_stacked: &DMatrix<f64>) -> DVector<f64> {
    matrices.recover_translations(r_stacked)
}

pub fn evaluate_scaled_rotation_cost(matrices: &ProblemMatrices, r_stacked: &DMatrix<f64>) -> f64 {
    matrices.scaled_rotation_cost(r_stacked)
}
