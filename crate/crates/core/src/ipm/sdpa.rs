//! SDPA sparse format export.
//!
//! SDPA solves `min cᵀx s.t. Σ x_i F_i - F0 ⪰ 0`. Writing `F0 = -C`, `F_i = A_i` and `c = b`
//! gives `x = -y` for the dual of [`ConicProgram`].

use std::fmt::Write as _;
use std::path::Path;

use super::ConicProgram;
use crate::error::Result;

pub fn to_sdpa_string(p: &ConicProgram) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "* block-diagonal SDP");
    let _ = writeln!(out, "{}", p.n_constraints());
    let _ = writeln!(out, "{}", p.block_sizes.len());
    let sizes: Vec<String> = p.block_sizes.iter().map(|n| n.to_string()).collect();
    let _ = writeln!(out, "{}", sizes.join(" "));
    let b: Vec<String> = p.b.iter().map(|v| format!("{v}")).collect();
    let _ = writeln!(out, "{}", b.join(" "));
    for (blk, c) in p.cost.iter().enumerate() {
        for col in 0..c.ncols() {
            for row in 0..=col {
                let v = c[(row, col)];
                if v != 0.0 {
                    let _ = writeln!(out, "0 {} {} {} {}", blk + 1, row + 1, col + 1, -v);
                }
            }
        }
    }
    for (i, con) in p.constraints.iter().enumerate() {
        for (blk, m) in &con.parts {
            for &(r, c, v) in &m.entries {
                if v != 0.0 {
                    let _ = writeln!(out, "{} {} {} {} {}", i + 1, blk + 1, r + 1, c + 1, v);
                }
            }
        }
    }
    out
}

pub fn write_sdpa(p: &ConicProgram, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_sdpa_string(p))?;
    Ok(())
}
