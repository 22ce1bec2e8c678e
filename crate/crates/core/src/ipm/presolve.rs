//! Removal of linearly dependent equality constraints.

use std::collections::HashMap;

use nalgebra::DVector;

use super::ConicProgram;

#[derive(Clone, Debug)]
pub struct Presolved {
    /// Independent rows in their original order.
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    /// False when a dependent row's right-hand side contradicts the rows it depends on.
    pub consistent: bool,
}

/// Scans rows in order and keeps each one that is not in the span of the rows kept so far,
/// using an incremental Cholesky factor of the Gram matrix `⟨A_i, A_j⟩`.
pub fn presolve(p: &ConicProgram, tol: f64) -> Presolved {
    let m = p.n_constraints();
    // (block, row, col) -> list of (constraint, value) over upper-triangle entries.
    let mut by_entry: HashMap<(usize, usize, usize), Vec<(usize, f64)>> = HashMap::new();
    let mut own: Vec<HashMap<(usize, usize, usize), f64>> = Vec::with_capacity(m);
    for (i, con) in p.constraints.iter().enumerate() {
        let mut mine = HashMap::new();
        for (blk, sm) in &con.parts {
            for &(r, c, v) in &sm.entries {
                *mine.entry((*blk, r, c)).or_insert(0.0) += v;
            }
        }
        for (&key, &v) in &mine {
            by_entry.entry(key).or_default().push((i, v));
        }
        own.push(mine);
    }

    let mut kept: Vec<usize> = Vec::new();
    let mut position = vec![usize::MAX; m];
    // Rows of the lower-triangular factor for kept constraints.
    let mut l_rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped = Vec::new();
    let mut consistent = true;

    for k in 0..m {
        let weight = |r: usize, c: usize| if r == c { 1.0 } else { 2.0 };
        let gkk: f64 = own[k].iter().map(|(&(_, r, c), v)| weight(r, c) * v * v).sum();
        let mut g = vec![0.0; kept.len()];
        for (&key, &v) in &own[k] {
            for &(j, vj) in &by_entry[&key] {
                if j < k && position[j] != usize::MAX {
                    g[position[j]] += weight(key.1, key.2) * v * vj;
                }
            }
        }
        // Forward substitution L l = g.
        let mut l = vec![0.0; kept.len()];
        for a in 0..kept.len() {
            let row = &l_rows[a];
            let mut acc = g[a];
            for (c, lc) in l.iter().enumerate().take(a) {
                acc -= row[c] * lc;
            }
            l[a] = acc / row[a];
        }
        let pivot = gkk - l.iter().map(|v| v * v).sum::<f64>();
        if gkk == 0.0 || pivot <= tol * gkk {
            // A_k = Σ c_j A_j with c = L⁻ᵀ l.
            let mut coef = l.clone();
            for a in (0..kept.len()).rev() {
                let mut acc = coef[a];
                for (r, lr) in l_rows.iter().enumerate().skip(a + 1) {
                    acc -= lr[a] * coef[r];
                }
                coef[a] = acc / l_rows[a][a];
            }
            let implied: f64 = coef.iter().zip(&kept).map(|(c, &j)| c * p.b[j]).sum();
            let scale = 1.0 + p.b[k].abs() + implied.abs();
            if (p.b[k] - implied).abs() > 1e-8 * scale {
                consistent = false;
            }
            dropped.push(k);
        } else {
            let mut row = l;
            row.push(pivot.sqrt());
            l_rows.push(row);
            position[k] = kept.len();
            kept.push(k);
        }
    }
    Presolved {
        kept,
        dropped,
        consistent,
    }
}

/// Residual `b - A(X)` restricted to the given rows.
pub fn row_residual(p: &ConicProgram, x: &[nalgebra::DMatrix<f64>], rows: &[usize]) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.iter().map(|&i| p.b[i] - p.constraints[i].inner(x)))
}

#[cfg(test)]
mod tests {
    use super::super::{Constraint, SparseSym};
    use super::*;
    use nalgebra::DMatrix;

    fn diag(n: usize, k: usize, v: f64) -> Constraint {
        let mut a = SparseSym::new();
        a.push(k, k, v);
        let _ = n;
        Constraint::single(0, a)
    }

    fn program(cons: Vec<Constraint>, b: Vec<f64>) -> ConicProgram {
        ConicProgram {
            block_sizes: vec![3],
            cost: vec![DMatrix::identity(3, 3)],
            constraints: cons,
            b: DVector::from_vec(b),
        }
    }

    #[test]
    fn duplicate_keeps_first() {
        let p = program(vec![diag(3, 0, 1.0), diag(3, 1, 1.0), diag(3, 0, 2.0)], vec![1.0, 1.0, 2.0]);
        let r = presolve(&p, 1e-10);
        assert_eq!(r.kept, vec![0, 1]);
        assert_eq!(r.dropped, vec![2]);
        assert!(r.consistent);
    }

    #[test]
    fn contradiction_is_detected() {
        let p = program(vec![diag(3, 0, 1.0), diag(3, 0, 1.0)], vec![1.0, 2.0]);
        assert!(!presolve(&p, 1e-10).consistent);
    }

    #[test]
    fn combination_is_dependent() {
        let mut t = SparseSym::new();
        t.push(0, 0, 1.0);
        t.push(1, 1, 1.0);
        let p = program(
            vec![diag(3, 0, 1.0), diag(3, 1, 1.0), Constraint::single(0, t)],
            vec![1.0, 1.0, 2.0],
        );
        let r = presolve(&p, 1e-10);
        assert_eq!(r.dropped, vec![2]);
        assert!(r.consistent);
    }
}
