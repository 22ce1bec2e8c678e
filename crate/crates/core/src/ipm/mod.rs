//! Block-diagonal semidefinite programs and a primal-dual interior-point solver.
//!
//! Primal: `min ⟨C, X⟩  s.t.  ⟨A_i, X⟩ = b_i,  X ⪰ 0`.
//! Dual:   `max bᵀy     s.t.  Σ y_i A_i + S = C,  S ⪰ 0`.

mod interior_point;
pub mod presolve;
pub mod sdpa;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use interior_point::InteriorPoint;

/// Symmetric sparse matrix stored as upper-triangle triplets `(row, col, value)` with `row <= col`.
/// An off-diagonal triplet stands for both `(row, col)` and `(col, row)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseSym {
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseSym {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `v` at `(r, c)` and, when off-diagonal, at `(c, r)`.
    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        let (r, c) = if r <= c { (r, c) } else { (c, r) };
        self.entries.push((r, c, v));
    }

    /// Every stored matrix entry, including mirrored ones.
    pub fn full_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(2 * self.entries.len());
        for &(r, c, v) in &self.entries {
            out.push((r, c, v));
            if r != c {
                out.push((c, r, v));
            }
        }
        out
    }

    pub fn inner(&self, x: &DMatrix<f64>) -> f64 {
        self.entries
            .iter()
            .map(|&(r, c, v)| if r == c { v * x[(r, c)] } else { 2.0 * v * x[(r, c)] })
            .sum()
    }

    pub fn add_scaled_to(&self, alpha: f64, out: &mut DMatrix<f64>) {
        for &(r, c, v) in &self.entries {
            out[(r, c)] += alpha * v;
            if r != c {
                out[(c, r)] += alpha * v;
            }
        }
    }

    pub fn to_dense(&self, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        self.add_scaled_to(1.0, &mut m);
        m
    }
}

/// One linear constraint; `parts` holds `(block, matrix)` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Constraint {
    pub parts: Vec<(usize, SparseSym)>,
}

impl Constraint {
    pub fn single(block: usize, m: SparseSym) -> Self {
        Self { parts: vec![(block, m)] }
    }

    pub fn inner(&self, x: &[DMatrix<f64>]) -> f64 {
        self.parts.iter().map(|(b, m)| m.inner(&x[*b])).sum()
    }
}

#[derive(Clone, Debug)]
pub struct ConicProgram {
    pub block_sizes: Vec<usize>,
    pub cost: Vec<DMatrix<f64>>,
    pub constraints: Vec<Constraint>,
    pub b: DVector<f64>,
}

impl ConicProgram {
    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_sizes.len() != self.cost.len() {
            return Err(Error::InvalidInput("cost block count mismatch".into()));
        }
        for (k, (n, c)) in self.block_sizes.iter().zip(&self.cost).enumerate() {
            if c.nrows() != *n || c.ncols() != *n {
                return Err(Error::InvalidInput(format!("cost block {k} has wrong shape")));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("cost block {k} is not finite")));
            }
        }
        if self.b.len() != self.constraints.len() {
            return Err(Error::InvalidInput("b length does not match constraint count".into()));
        }
        for (i, con) in self.constraints.iter().enumerate() {
            for (blk, m) in &con.parts {
                let n = *self
                    .block_sizes
                    .get(*blk)
                    .ok_or_else(|| Error::InvalidInput(format!("constraint {i} references block {blk}")))?;
                if m.entries.iter().any(|&(r, c, v)| r >= n || c >= n || !v.is_finite()) {
                    return Err(Error::InvalidInput(format!("constraint {i} has an invalid entry")));
                }
            }
        }
        Ok(())
    }

    /// `A(X)`.
    pub fn apply(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_iterator(self.constraints.len(), self.constraints.iter().map(|c| c.inner(x)))
    }

    /// `Aᵀ(y) = Σ y_i A_i`.
    pub fn adjoint(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = self.block_sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for (con, &yi) in self.constraints.iter().zip(y.iter()) {
            for (blk, m) in &con.parts {
                m.add_scaled_to(yi, &mut out[*blk]);
            }
        }
        out
    }

    pub fn objective(&self, x: &[DMatrix<f64>]) -> f64 {
        block_inner(&self.cost, x)
    }

    /// Keeps only the listed constraints, in the given order.
    pub fn select_constraints(&self, keep: &[usize]) -> ConicProgram {
        ConicProgram {
            block_sizes: self.block_sizes.clone(),
            cost: self.cost.clone(),
            constraints: keep.iter().map(|&i| self.constraints[i].clone()).collect(),
            b: DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.b[i])),
        }
    }
}

pub fn block_inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

pub fn block_norm(a: &[DMatrix<f64>]) -> f64 {
    a.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// Iteration limit or stall; the best iterate is returned.
    Inaccurate,
    Infeasible,
    Failed,
}

#[derive(Clone, Debug)]
pub struct IpmSettings {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iters: usize,
    pub step_fraction: f64,
    pub presolve: bool,
    pub presolve_tol: f64,
    pub verbose: bool,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self {
            gap_tol: 1e-9,
            feas_tol: 1e-9,
            max_iters: 200,
            step_fraction: 0.98,
            presolve: true,
            presolve_tol: 1e-10,
            verbose: false,
        }
    }
}

/// Objective values and residuals at one iterate, in the caller's scaling.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IterateRecord {
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `⟨X, S⟩`.
    pub complementarity: f64,
    /// `‖b - A(X)‖ / (1 + ‖b‖)`.
    pub primal_infeasibility: f64,
    /// `‖C - Aᵀy - S‖ / (1 + ‖C‖)`.
    pub dual_infeasibility: f64,
    /// `⟨C,X⟩ - bᵀy - ⟨X,S⟩`, which vanishes at feasible iterates.
    pub residual_gap: f64,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub x: Vec<DMatrix<f64>>,
    pub y: DVector<f64>,
    pub s: Vec<DMatrix<f64>>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub relative_gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub iterations: usize,
    pub dropped_constraints: Vec<usize>,
    pub trace: Vec<IterateRecord>,
}

impl SdpSolution {
    pub fn infeasible(problem: &ConicProgram, dropped: Vec<usize>) -> Self {
        let zeros: Vec<DMatrix<f64>> = problem.block_sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        Self {
            status: SolveStatus::Infeasible,
            x: zeros.clone(),
            y: DVector::zeros(problem.n_constraints()),
            s: zeros,
            primal_objective: f64::NAN,
            dual_objective: f64::NAN,
            relative_gap: f64::NAN,
            primal_infeasibility: f64::NAN,
            dual_infeasibility: f64::NAN,
            iterations: 0,
            dropped_constraints: dropped,
            trace: Vec::new(),
        }
    }
}

/// A solver for [`ConicProgram`]s.
pub trait ConicSolver: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, problem: &ConicProgram) -> Result<SdpSolution>;
}
