//! Outlier-robust wrappers built on graduated non-convexity with a truncated least squares loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geometry::SimilarityTransform;
use crate::graph::{connected_components, Edge, EdgeView, ViewGraph};
use crate::ipm::{ConicSolver, InteriorPoint};
use crate::registration::{register_edge, EdgeRegistration, NoiseModel};
use crate::sdp::{solve_graph_with, SyncOptions, SyncSolution};

/// Edges need at least this many correspondences for a closed-form registration.
pub const MIN_EDGE_INLIERS: usize = 3;

/// Smallest GNC consensus an edge registration is trusted with. Three pairs leave only two
/// redundant equations for a similarity, so random triples often fit within `β`.
pub const MIN_EDGE_CONSENSUS: usize = 4;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GncSettings {
    /// Inlier residual bound.
    pub beta: f64,
    pub mu_update: f64,
    pub max_outer_iters: usize,
    /// Stop once no weight moves by more than this.
    pub weight_tol: f64,
    /// Weights must also be this close to 0 or 1.
    pub binary_tol: f64,
}

impl GncSettings {
    pub fn new(beta: f64) -> Result<Self> {
        let s = Self {
            beta,
            mu_update: 1.4,
            max_outer_iters: 100,
            weight_tol: 1e-6,
            binary_tol: 1e-3,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidInput(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.mu_update > 1.0) {
            return Err(Error::InvalidInput(format!("mu_update must exceed 1, got {}", self.mu_update)));
        }
        Ok(())
    }

    /// Bound for residuals in the anchor frame.
    pub fn global(noise: &NoiseModel) -> Result<Self> {
        Self::new(noise.global_bound())
    }

    /// Bound for residuals expressed in a frame with scale `s_i`.
    pub fn edge(noise: &NoiseModel, s_i: f64) -> Result<Self> {
        Self::new(noise.edge_bound(s_i)?)
    }
}

/// Surrogate values around one continuation step at fixed `mu`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GncStep {
    pub mu: f64,
    /// Before the weight update.
    pub before: f64,
    /// After the weight update, residuals unchanged.
    pub after_weights: f64,
    /// After re-solving with the new weights.
    pub after_solve: f64,
}

#[derive(Clone, Debug)]
pub struct RobustResult<S> {
    pub solution: S,
    pub weights: Vec<f64>,
    pub inlier_mask: Vec<bool>,
    /// Number of weighted solves.
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<GncStep>,
}

/// `Σ w r² + μ c² (1 - w) / (μ + w)`.
pub fn tls_surrogate(residuals: &[f64], weights: &[f64], mu: f64, c2: f64) -> f64 {
    residuals
        .iter()
        .zip(weights)
        .map(|(r, w)| w * r * r + mu * c2 * (1.0 - w) / (mu + w))
        .sum()
}

/// Closed-form minimizer of the surrogate over `w ∈ [0, 1]` for fixed residuals.
pub fn tls_weight(r: f64, mu: f64, c2: f64) -> f64 {
    let r2 = r * r;
    if r2 <= mu / (mu + 1.0) * c2 {
        1.0
    } else if r2 >= (mu + 1.0) / mu * c2 {
        0.0
    } else {
        (c2.sqrt() / r * (mu * (mu + 1.0)).sqrt() - mu).clamp(0.0, 1.0)
    }
}

fn check_residuals(r: &[f64], n: usize) -> Result<()> {
    if r.len() != n {
        return Err(Error::InvalidInput(format!("expected {n} residuals, got {}", r.len())));
    }
    if let Some(k) = r.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteResidual(k));
    }
    Ok(())
}

/// Alternates a weighted solve with the TLS weight update while `μ` grows geometrically.
///
/// `solve` receives weights in `[0, 1]`; `residuals` returns one unsquared residual per weight.
pub fn gnc_tls<S>(
    n: usize,
    settings: &GncSettings,
    mut solve: impl FnMut(&[f64]) -> Result<S>,
    mut residuals: impl FnMut(&S) -> Vec<f64>,
) -> Result<RobustResult<S>> {
    settings.validate()?;
    let c2 = settings.beta * settings.beta;
    let mut w = vec![1.0; n];
    let mut sol = solve(&w)?;
    let mut r = residuals(&sol);
    check_residuals(&r, n)?;
    let r2_max = r.iter().fold(0.0_f64, |m, v| m.max(v * v));
    let mut iterations = 1;
    let mut trace = Vec::new();
    if r2_max <= c2 {
        return Ok(RobustResult {
            solution: sol,
            inlier_mask: vec![true; n],
            weights: w,
            iterations,
            converged: true,
            trace,
        });
    }
    let mut mu = c2 / (2.0 * r2_max - c2);
    let mut converged = false;
    for _ in 0..settings.max_outer_iters {
        let before = tls_surrogate(&r, &w, mu, c2);
        let new_w: Vec<f64> = r.iter().map(|&ri| tls_weight(ri, mu, c2)).collect();
        let after_weights = tls_surrogate(&r, &new_w, mu, c2);
        let delta = w
            .iter()
            .zip(&new_w)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        w = new_w;
        sol = solve(&w)?;
        r = residuals(&sol);
        check_residuals(&r, n)?;
        iterations += 1;
        trace.push(GncStep {
            mu,
            before,
            after_weights,
            after_solve: tls_surrogate(&r, &w, mu, c2),
        });
        let binary = w
            .iter()
            .all(|&v| v <= settings.binary_tol || v >= 1.0 - settings.binary_tol);
        if delta <= settings.weight_tol && binary {
            converged = true;
            break;
        }
        mu *= settings.mu_update;
    }
    Ok(RobustResult {
        solution: sol,
        inlier_mask: w.iter().map(|&v| v >= 0.5).collect(),
        weights: w,
        iterations,
        converged,
        trace,
    })
}

/// Point-to-point residual norms for every correspondence, in edge order.
pub fn correspondence_residuals(graph: &ViewGraph, transforms: &[SimilarityTransform]) -> Vec<f64> {
    graph
        .edges
        .iter()
        .flat_map(|e| {
            let (ti, tj) = (&transforms[e.i], &transforms[e.j]);
            let (pi, pj) = (&graph.frames[e.i].points, &graph.frames[e.j].points);
            e.matches
                .iter()
                .map(move |c| (ti.apply(&pi[c.ki]) - tj.apply(&pj[c.kj])).norm())
        })
        .collect()
}

/// GNC around the full relaxation: every weighted solve is an SDP on the reweighted graph.
pub fn simsync_gnc(graph: &ViewGraph, settings: &GncSettings, options: &SyncOptions) -> Result<RobustResult<SyncSolution>> {
    let solver = InteriorPoint::new(options.ipm.clone());
    simsync_gnc_with(graph, settings, options, &solver)
}

pub fn simsync_gnc_with(
    graph: &ViewGraph,
    settings: &GncSettings,
    options: &SyncOptions,
    solver: &dyn ConicSolver,
) -> Result<RobustResult<SyncSolution>> {
    gnc_tls(
        graph.n_matches(),
        settings,
        |w| solve_graph_with(&graph.reweighted(w)?, options, solver),
        |s| correspondence_residuals(graph, &s.transforms),
    )
}

/// Per-edge outcome of pruning.
#[derive(Clone, Debug)]
pub struct PruneResult {
    pub graph: ViewGraph,
    /// Inlier mask per original edge.
    pub masks: Vec<Vec<bool>>,
    /// Registration per original edge; `None` when the edge could not be registered.
    pub registrations: Vec<Option<EdgeRegistration>>,
    /// Original indices of edges removed for having fewer than three inliers.
    pub dropped_edges: Vec<usize>,
}

/// Keeps masked correspondences, drops edges left with fewer than three, and checks connectivity.
pub fn apply_masks(graph: &ViewGraph, masks: &[Vec<bool>]) -> Result<(ViewGraph, Vec<usize>)> {
    if masks.len() != graph.edges.len() {
        return Err(Error::InvalidInput("one mask per edge is required".into()));
    }
    let mut edges = Vec::new();
    let mut dropped = Vec::new();
    for (idx, (e, m)) in graph.edges.iter().zip(masks).enumerate() {
        if m.len() != e.matches.len() {
            return Err(Error::InvalidInput(format!("mask for edge {idx} has the wrong length")));
        }
        let kept: Vec<_> = e
            .matches
            .iter()
            .zip(m)
            .filter(|(_, &keep)| keep)
            .map(|(c, _)| *c)
            .collect();
        if kept.len() < MIN_EDGE_INLIERS {
            dropped.push(idx);
        } else {
            edges.push(Edge {
                i: e.i,
                j: e.j,
                matches: kept,
            });
        }
    }
    let comps = connected_components(
        graph.n_frames(),
        edges.iter().filter(|e| e.total_weight() > 0.0).map(|e| (e.i, e.j)),
    );
    if comps.len() > 1 {
        return Err(Error::DisconnectedAfterPruning { components: comps });
    }
    Ok((
        ViewGraph {
            frames: graph.frames.clone(),
            edges,
        },
        dropped,
    ))
}

fn gnc_edge(view: &EdgeView, settings: &GncSettings) -> Result<RobustResult<EdgeRegistration>> {
    gnc_tls(
        view.weights.len(),
        settings,
        |w| {
            let ww: Vec<f64> = w.iter().zip(&view.weights).map(|(a, b)| a * b).collect();
            register_edge(view.i, view.j, &view.points_i, &view.points_j, &ww)
        },
        |reg| reg.residuals.iter().map(|e| e.norm()).collect(),
    )
}

/// Registers every edge robustly, then removes the correspondences GNC rejects.
///
/// Edges whose registration fails, or whose consensus is below [`MIN_EDGE_CONSENSUS`], are
/// treated as fully outlying.
pub fn edge_prune_gnc(graph: &ViewGraph, settings: &GncSettings, exec: Execution) -> Result<PruneResult> {
    settings.validate()?;
    if let Some((idx, e)) = graph
        .edges
        .iter()
        .enumerate()
        .find(|(_, e)| e.matches.len() < MIN_EDGE_INLIERS)
    {
        return Err(Error::InvalidInput(format!(
            "edge {idx} ({}, {}) has {} correspondences; at least {MIN_EDGE_INLIERS} are needed",
            e.i,
            e.j,
            e.matches.len()
        )));
    }
    let outcomes = exec::map_range(graph.edges.len(), exec, |k| gnc_edge(&graph.edge_view(k), settings));
    let mut masks = Vec::with_capacity(outcomes.len());
    let mut registrations = Vec::with_capacity(outcomes.len());
    for (k, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(r) if r.inlier_mask.iter().filter(|&&m| m).count() >= MIN_EDGE_CONSENSUS => {
                masks.push(r.inlier_mask);
                registrations.push(Some(r.solution));
            }
            Err(Error::NonFiniteResidual(i)) => return Err(Error::NonFiniteResidual(i)),
            _ => {
                masks.push(vec![false; graph.edges[k].matches.len()]);
                registrations.push(None);
            }
        }
    }
    let (pruned, dropped_edges) = apply_masks(graph, &masks)?;
    Ok(PruneResult {
        graph: pruned,
        masks,
        registrations,
        dropped_edges,
    })
}

/// Applies a caller-supplied inlier selector to every edge, with the same post-validation as
/// [`edge_prune_gnc`].
pub fn external_prune_hook<F>(graph: &ViewGraph, prune_fn: F) -> Result<(ViewGraph, Vec<usize>)>
where
    F: Fn(&EdgeView) -> Vec<bool>,
{
    let masks: Vec<Vec<bool>> = (0..graph.edges.len()).map(|k| prune_fn(&graph.edge_view(k))).collect();
    apply_masks(graph, &masks)
}

/// Selector keeping correspondences whose residual under known transforms is at most `beta`.
pub fn oracle_pruner(truth: Vec<SimilarityTransform>, beta: f64) -> impl Fn(&EdgeView) -> Vec<bool> {
    move |v: &EdgeView| {
        let (ti, tj) = (&truth[v.i], &truth[v.j]);
        v.points_i
            .iter()
            .zip(&v.points_j)
            .map(|(a, b)| (ti.apply(a) - tj.apply(b)).norm() <= beta)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_update_is_continuous_and_minimizing() {
        let c2 = 1.0f64;
        for &mu in &[0.01f64, 0.3, 1.0, 5.0, 100.0] {
            let lo = (mu / (mu + 1.0) * c2).sqrt();
            let hi = ((mu + 1.0) / mu * c2).sqrt();
            assert!((tls_weight(lo * (1.0 + 1e-12), mu, c2) - 1.0).abs() < 1e-6);
            assert!(tls_weight(hi * (1.0 - 1e-12), mu, c2).abs() < 1e-6);
            for k in 0..50 {
                let r = 0.05 * k as f64;
                let w = tls_weight(r, mu, c2);
                let f = tls_surrogate(&[r], &[w], mu, c2);
                for j in 0..=100 {
                    let v = j as f64 / 100.0;
                    assert!(f <= tls_surrogate(&[r], &[v], mu, c2) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn small_residuals_stop_immediately() {
        let s = GncSettings::new(1.0).unwrap();
        let out = gnc_tls(4, &s, |_| Ok(()), |_| vec![0.1, 0.2, 0.3, 0.9]).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn scalar_location_rejects_outlier() {
        // Weighted mean of samples; one gross outlier.
        let xs = [0.0, 0.01, -0.02, 0.015, -0.005, 10.0];
        let s = GncSettings::new(0.1).unwrap();
        let out = gnc_tls(
            xs.len(),
            &s,
            |w| Ok(xs.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / w.iter().sum::<f64>()),
            |m| xs.iter().map(|x| (x - m).abs()).collect(),
        )
        .unwrap();
        assert!(out.converged);
        assert_eq!(out.inlier_mask, vec![true, true, true, true, true, false]);
        for step in &out.trace {
            assert!(step.after_weights <= step.before + 1e-9);
            assert!(step.after_solve <= step.after_weights + 1e-9);
        }
    }

    #[test]
    fn non_finite_residual_aborts() {
        let s = GncSettings::new(1.0).unwrap();
        let out = gnc_tls(2, &s, |_| Ok(()), |_| vec![0.0, f64::NAN]);
        assert!(matches!(out, Err(Error::NonFiniteResidual(1))));
    }

    #[test]
    fn settings_validation() {
        assert!(GncSettings::new(0.0).is_err());
        let mut s = GncSettings::new(1.0).unwrap();
        s.mu_update = 1.0;
        assert!(s.validate().is_err());
    }
}
