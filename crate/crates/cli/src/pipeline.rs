use std::str::FromStr;

use serde::{Deserialize, Serialize};
use simsync::registration::NoiseModel;
use simsync::robust::{apply_masks, edge_prune_gnc, oracle_pruner, simsync_gnc, GncSettings};
use simsync::sdp::{solve_graph, SyncOptions, SyncSolution};
use simsync::{Error, Execution, Result, SimilarityTransform, ViewGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Plain,
    Regularized,
    SimsyncGnc,
    EdgePruneGnc,
    OraclePrune,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::Regularized => "regularized",
            Mode::SimsyncGnc => "simsync-gnc",
            Mode::EdgePruneGnc => "edge-prune-gnc",
            Mode::OraclePrune => "oracle-prune",
        }
    }

    pub fn is_robust(self) -> bool {
        matches!(self, Mode::SimsyncGnc | Mode::EdgePruneGnc | Mode::OraclePrune)
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "plain" => Ok(Mode::Plain),
            "regularized" => Ok(Mode::Regularized),
            "simsync-gnc" => Ok(Mode::SimsyncGnc),
            "edge-prune-gnc" => Ok(Mode::EdgePruneGnc),
            "oracle-prune" => Ok(Mode::OraclePrune),
            _ => Err(format!(
                "unknown mode `{s}` (expected plain, regularized, simsync-gnc, edge-prune-gnc or oracle-prune)"
            )),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineParams {
    pub mode: Mode,
    pub lambda: f64,
    pub eta_tol: f64,
    /// Measurement noise used for GNC and oracle bounds.
    pub noise_sigma: f64,
    pub confidence: f64,
    pub refine: bool,
    pub max_iters: usize,
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidInput(format!("lambda must be finite and nonnegative, got {}", self.lambda)));
        }
        if self.mode == Mode::Regularized && self.lambda == 0.0 {
            return Err(Error::InvalidInput("regularized mode needs --lambda > 0".into()));
        }
        if self.mode == Mode::Plain && self.lambda > 0.0 {
            return Err(Error::InvalidInput("plain mode solves with λ = 0; use --mode regularized".into()));
        }
        if !(self.eta_tol > 0.0) {
            return Err(Error::InvalidInput(format!("eta tolerance must be positive, got {}", self.eta_tol)));
        }
        if self.mode.is_robust() {
            NoiseModel::new(self.noise_sigma, self.confidence)?;
        }
        Ok(())
    }

    pub fn sync_options(&self, execution: Execution) -> SyncOptions {
        let mut o = SyncOptions {
            lambda: self.lambda,
            eta_tol: self.eta_tol,
            execution,
            refine: self.refine,
            ..SyncOptions::default()
        };
        o.ipm.max_iters = self.max_iters;
        o
    }
}

pub struct PipelineOutput {
    pub solution: SyncSolution,
    /// Per-edge inlier masks over the input graph, for modes that select correspondences.
    pub masks: Option<Vec<Vec<bool>>>,
    pub dropped_edges: Vec<usize>,
}

fn split_mask(graph: &ViewGraph, flat: &[bool]) -> Vec<Vec<bool>> {
    let mut out = Vec::with_capacity(graph.edges.len());
    let mut k = 0;
    for e in &graph.edges {
        out.push(flat[k..k + e.matches.len()].to_vec());
        k += e.matches.len();
    }
    out
}

/// `truth` is needed only by the oracle mode.
pub fn run(
    graph: &ViewGraph,
    truth: Option<&[SimilarityTransform]>,
    params: &PipelineParams,
    execution: Execution,
) -> Result<PipelineOutput> {
    params.validate()?;
    let options = params.sync_options(execution);
    let noise = || NoiseModel::new(params.noise_sigma, params.confidence);
    match params.mode {
        Mode::Plain | Mode::Regularized => Ok(PipelineOutput {
            solution: solve_graph(graph, &options)?,
            masks: None,
            dropped_edges: Vec::new(),
        }),
        Mode::SimsyncGnc => {
            let r = simsync_gnc(graph, &GncSettings::global(&noise()?)?, &options)?;
            Ok(PipelineOutput {
                masks: Some(split_mask(graph, &r.inlier_mask)),
                solution: r.solution,
                dropped_edges: Vec::new(),
            })
        }
        Mode::EdgePruneGnc => {
            let pruned = edge_prune_gnc(graph, &GncSettings::edge(&noise()?, 1.0)?, execution)?;
            Ok(PipelineOutput {
                solution: solve_graph(&pruned.graph, &options)?,
                masks: Some(pruned.masks),
                dropped_edges: pruned.dropped_edges,
            })
        }
        Mode::OraclePrune => {
            let truth = truth.ok_or_else(|| Error::InvalidInput("oracle-prune needs ground truth (--truth)".into()))?;
            if truth.len() != graph.n_frames() {
                return Err(Error::InvalidInput(format!(
                    "ground truth has {} frames, graph has {}",
                    truth.len(),
                    graph.n_frames()
                )));
            }
            let pruner = oracle_pruner(truth.to_vec(), noise()?.global_bound());
            let masks: Vec<Vec<bool>> = (0..graph.edges.len()).map(|k| pruner(&graph.edge_view(k))).collect();
            let (pruned, dropped) = apply_masks(graph, &masks)?;
            Ok(PipelineOutput {
                solution: solve_graph(&pruned, &options)?,
                masks: Some(masks),
                dropped_edges: dropped,
            })
        }
    }
}

/// `(precision, recall)` of kept correspondences against true inlier masks.
pub fn inlier_scores(kept: &[Vec<bool>], truth: &[Vec<bool>]) -> Option<(f64, f64)> {
    if kept.len() != truth.len() || kept.iter().zip(truth).any(|(a, b)| a.len() != b.len()) {
        return None;
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (a, b) in kept.iter().zip(truth) {
        for (&k, &t) in a.iter().zip(b) {
            match (k, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    Some((precision, recall))
}

/// Exit code for an error: 2 for bad input, 1 for anything the pipeline failed at.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_)
        | Error::Schema(_)
        | Error::IndexOutOfRange(_)
        | Error::Disconnected { .. }
        | Error::Io(_)
        | Error::Json(_) => 2,
        _ => 1,
    }
}
