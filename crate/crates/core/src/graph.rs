//! Measurement graph: frames of lifted 3D keypoints joined by weighted
//! correspondence edges, plus validation and JSON file I/O.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }
}

/// Lifts a pixel with known depth to `d·K⁻¹[u, v, 1]ᵀ`. The z component is `depth` exactly.
pub fn lift_keypoint(pixel: [f64; 2], intrinsics: &CameraIntrinsics, depth: f64) -> Result<Vector3<f64>> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::InvalidInput(format!("depth must be positive, got {depth}")));
    }
    let x = (pixel[0] - intrinsics.cx) / intrinsics.fx;
    let y = (pixel[1] - intrinsics.cy) / intrinsics.fy;
    Ok(Vector3::new(x * depth, y * depth, depth))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    /// External identifier; internal ids are positions in `ViewGraph::frames`.
    pub label: String,
    pub points: Vec<Vector3<f64>>,
    pub intrinsics: Option<CameraIntrinsics>,
}

impl Frame {
    pub fn new(label: impl Into<String>, points: Vec<Vector3<f64>>) -> Self {
        Self {
            label: label.into(),
            points,
            intrinsics: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    /// Point index in frame `i`.
    pub ki: usize,
    /// Point index in frame `j`.
    pub kj: usize,
    pub weight: f64,
}

impl Correspondence {
    pub fn new(ki: usize, kj: usize, weight: f64) -> Self {
        Self { ki, kj, weight }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub matches: Vec<Correspondence>,
}

impl Edge {
    /// Stores the edge with `i < j`, swapping correspondence sides when needed.
    pub fn new(i: usize, j: usize, matches: Vec<Correspondence>) -> Self {
        if i <= j {
            Self { i, j, matches }
        } else {
            let matches = matches
                .into_iter()
                .map(|c| Correspondence::new(c.kj, c.ki, c.weight))
                .collect();
            Self { i: j, j: i, matches }
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.matches.iter().map(|c| c.weight).sum()
    }
}

/// Points and weights of one edge, as seen by per-edge estimators and pruners.
#[derive(Clone, Debug)]
pub struct EdgeView {
    pub i: usize,
    pub j: usize,
    pub points_i: Vec<Vector3<f64>>,
    pub points_j: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ViewGraph {
    pub frames: Vec<Frame>,
    pub edges: Vec<Edge>,
}

impl ViewGraph {
    pub fn new(frames: Vec<Frame>, edges: Vec<Edge>) -> Self {
        let edges = edges.into_iter().map(|e| Edge::new(e.i, e.j, e.matches)).collect();
        Self { frames, edges }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_matches(&self) -> usize {
        self.edges.iter().map(|e| e.matches.len()).sum()
    }

    /// Correspondence weights flattened in edge order.
    pub fn weights_flat(&self) -> Vec<f64> {
        self.edges
            .iter()
            .flat_map(|e| e.matches.iter().map(|c| c.weight))
            .collect()
    }

    /// Copy of the graph with every correspondence weight multiplied by `factors` (edge order).
    pub fn reweighted(&self, factors: &[f64]) -> Result<ViewGraph> {
        if factors.len() != self.n_matches() {
            return Err(Error::InvalidInput(format!(
                "expected {} weights, got {}",
                self.n_matches(),
                factors.len()
            )));
        }
        let mut g = self.clone();
        let mut it = factors.iter();
        for e in &mut g.edges {
            for c in &mut e.matches {
                c.weight *= it.next().copied().unwrap_or(1.0);
            }
        }
        Ok(g)
    }

    pub fn edge_view(&self, edge: usize) -> EdgeView {
        let e = &self.edges[edge];
        let fi = &self.frames[e.i].points;
        let fj = &self.frames[e.j].points;
        EdgeView {
            i: e.i,
            j: e.j,
            points_i: e.matches.iter().map(|c| fi[c.ki]).collect(),
            points_j: e.matches.iter().map(|c| fj[c.kj]).collect(),
            weights: e.matches.iter().map(|c| c.weight).collect(),
        }
    }
}

/// Chain edges `(i, i+d)` for `1 ≤ d ≤ stride`. Stride 2 gives the neighbouring-three-frames graph.
pub fn build_chain_graph(n_frames: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if n_frames < 2 {
        return Err(Error::InvalidInput("chain graph needs at least 2 frames".into()));
    }
    if stride < 1 {
        return Err(Error::InvalidInput("stride must be at least 1".into()));
    }
    let mut edges = Vec::new();
    for i in 0..n_frames {
        for d in 1..=stride {
            if i + d < n_frames {
                edges.push((i, i + d));
            }
        }
    }
    Ok(edges)
}

/// Connected components over `n` nodes, each sorted, ordered by smallest member.
pub fn connected_components(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (a, b) in edges {
        if a >= n || b >= n {
            continue;
        }
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            parent[hi] = lo;
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        let r = find(&mut parent, v);
        groups.entry(r).or_default().push(v);
    }
    groups.into_values().collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub n_frames: usize,
    /// Components counting every edge regardless of weight.
    pub topological_components: usize,
    /// Components counting only edges with positive total weight.
    pub components: usize,
    pub self_loops: Vec<usize>,
    pub duplicate_edges: Vec<(usize, usize)>,
    pub zero_weight_edges: Vec<usize>,
    pub empty_edges: Vec<usize>,
    pub invalid_weights: Vec<usize>,
    pub out_of_range: Vec<String>,
}

impl ValidationReport {
    pub fn disconnected(&self) -> bool {
        self.topological_components > 1
    }

    /// Connected topologically but split once zero-weight edges are ignored.
    pub fn effectively_disconnected(&self) -> bool {
        self.components > 1
    }

    pub fn is_ok(&self) -> bool {
        self.n_frames >= 1
            && self.components == 1
            && self.self_loops.is_empty()
            && self.duplicate_edges.is_empty()
            && self.invalid_weights.is_empty()
            && self.out_of_range.is_empty()
    }

    pub fn issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_frames == 0 {
            out.push("graph has no frames".to_string());
        }
        if self.disconnected() {
            out.push(format!("disconnected ({} components)", self.topological_components));
        } else if self.effectively_disconnected() {
            out.push(format!(
                "effectively disconnected ({} components over positive-weight edges)",
                self.components
            ));
        }
        for e in &self.self_loops {
            out.push(format!("edge {e} is a self loop"));
        }
        for (i, j) in &self.duplicate_edges {
            out.push(format!("duplicate edge ({i}, {j})"));
        }
        for e in &self.zero_weight_edges {
            out.push(format!("edge {e} has zero total weight"));
        }
        for e in &self.empty_edges {
            out.push(format!("edge {e} has no correspondences"));
        }
        for e in &self.invalid_weights {
            out.push(format!("edge {e} has a negative or non-finite weight"));
        }
        out.extend(self.out_of_range.iter().cloned());
        out
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            return Ok(());
        }
        if !self.out_of_range.is_empty() {
            return Err(Error::IndexOutOfRange(self.out_of_range.join("; ")));
        }
        if self.components > 1 && self.self_loops.is_empty() && self.duplicate_edges.is_empty() && self.invalid_weights.is_empty() {
            return Err(Error::Disconnected {
                components: self.components,
            });
        }
        Err(Error::InvalidInput(self.issues().join("; ")))
    }
}

pub fn validate(graph: &ViewGraph) -> ValidationReport {
    let n = graph.n_frames();
    let mut report = ValidationReport {
        n_frames: n,
        ..Default::default()
    };
    let mut seen = HashSet::new();
    for (idx, e) in graph.edges.iter().enumerate() {
        if e.i >= n || e.j >= n {
            report
                .out_of_range
                .push(format!("edge {idx} references frame ({}, {}) but graph has {n} frames", e.i, e.j));
            continue;
        }
        if e.i == e.j {
            report.self_loops.push(idx);
        }
        let key = (e.i.min(e.j), e.i.max(e.j));
        if !seen.insert(key) {
            report.duplicate_edges.push(key);
        }
        if e.matches.is_empty() {
            report.empty_edges.push(idx);
        }
        let (ni, nj) = (graph.frames[e.i].points.len(), graph.frames[e.j].points.len());
        for (k, c) in e.matches.iter().enumerate() {
            if c.ki >= ni || c.kj >= nj {
                report.out_of_range.push(format!(
                    "edge {idx} match {k} references points ({}, {}) beyond ({ni}, {nj})",
                    c.ki, c.kj
                ));
            }
        }
        if e.matches.iter().any(|c| !(c.weight >= 0.0) || !c.weight.is_finite()) {
            report.invalid_weights.push(idx);
        }
        if !e.matches.is_empty() && !(e.total_weight() > 0.0) {
            report.zero_weight_edges.push(idx);
        }
    }
    let in_range = |e: &&Edge| e.i < n && e.j < n;
    report.topological_components =
        connected_components(n, graph.edges.iter().filter(in_range).map(|e| (e.i, e.j))).len();
    report.components = connected_components(
        n,
        graph
            .edges
            .iter()
            .filter(in_range)
            .filter(|e| e.total_weight() > 0.0)
            .map(|e| (e.i, e.j)),
    )
    .len();
    report
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Deserialize)]
struct RawKeypoint {
    pixel: [f64; 2],
    depth: f64,
}

#[derive(Debug, Deserialize)]
struct RawFrameIn {
    id: String,
    #[serde(default)]
    intrinsics: Option<CameraIntrinsics>,
    #[serde(default)]
    points: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    keypoints: Option<Vec<RawKeypoint>>,
}

#[derive(Debug, Deserialize)]
struct RawEdgeIn {
    i: String,
    j: String,
    matches: Vec<[f64; 3]>,
}

#[derive(Debug, Deserialize)]
struct RawGraphIn {
    frames: Vec<RawFrameIn>,
    edges: Vec<RawEdgeIn>,
}

#[derive(Serialize)]
struct RawFrameOut<'a> {
    id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    intrinsics: Option<CameraIntrinsics>,
    points: Vec<[f64; 3]>,
}

#[derive(Serialize)]
struct RawEdgeOut<'a> {
    i: &'a str,
    j: &'a str,
    matches: Vec<(usize, usize, f64)>,
}

#[derive(Serialize)]
struct RawGraphOut<'a> {
    frames: Vec<RawFrameOut<'a>>,
    edges: Vec<RawEdgeOut<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<&'a serde_json::Value>,
}

/// Options applied while ingesting a graph file.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReadOptions {
    /// Drop keypoints whose depth lies in the top `q` fraction of their frame (e.g. 0.1).
    pub depth_trim_quantile: Option<f64>,
}

pub fn read_graph(path: impl AsRef<Path>) -> Result<ViewGraph> {
    read_graph_with(path, ReadOptions::default())
}

pub fn read_graph_with(path: impl AsRef<Path>, options: ReadOptions) -> Result<ViewGraph> {
    let text = fs::read_to_string(path)?;
    parse_graph(&text, options)
}

pub fn parse_graph(text: &str, options: ReadOptions) -> Result<ViewGraph> {
    let raw: RawGraphIn = serde_json::from_str(text)?;
    if let Some(q) = options.depth_trim_quantile {
        if !(0.0..1.0).contains(&q) {
            return Err(Error::InvalidInput(format!("depth trim quantile must be in [0, 1), got {q}")));
        }
    }
    let mut index_of: HashMap<String, usize> = HashMap::new();
    let mut frames = Vec::with_capacity(raw.frames.len());
    // Per frame: old point index -> new index (None when trimmed).
    let mut remaps: Vec<Option<Vec<Option<usize>>>> = Vec::with_capacity(raw.frames.len());
    for (idx, f) in raw.frames.into_iter().enumerate() {
        if index_of.insert(f.id.clone(), idx).is_some() {
            return Err(Error::Schema(format!("duplicate frame id {:?}", f.id)));
        }
        let (points, remap) = match (f.points, f.keypoints) {
            (Some(points), None) => (
                points
                    .into_iter()
                    .map(|p| {
                        if p.iter().all(|v| v.is_finite()) {
                            Ok(Vector3::from(p))
                        } else {
                            Err(Error::Schema(format!("frame {:?} has a non-finite point", f.id)))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?,
                None,
            ),
            (None, Some(keypoints)) => {
                let intr = f
                    .intrinsics
                    .ok_or_else(|| Error::Schema(format!("frame {:?} has keypoints but no intrinsics", f.id)))?;
                let intr = CameraIntrinsics::new(intr.fx, intr.fy, intr.cx, intr.cy)
                    .map_err(|e| Error::Schema(format!("frame {:?}: {e}", f.id)))?;
                lift_frame(&f.id, &keypoints, &intr, options.depth_trim_quantile)?
            }
            _ => {
                return Err(Error::Schema(format!(
                    "frame {:?} must carry exactly one of `points` or `keypoints`",
                    f.id
                )))
            }
        };
        remaps.push(remap);
        frames.push(Frame {
            label: f.id,
            points,
            intrinsics: f.intrinsics,
        });
    }

    let mut edges = Vec::with_capacity(raw.edges.len());
    for (eidx, e) in raw.edges.into_iter().enumerate() {
        let lookup = |id: &str| {
            index_of
                .get(id)
                .copied()
                .ok_or_else(|| Error::IndexOutOfRange(format!("edge {eidx} references unknown frame {id:?}")))
        };
        let (i, j) = (lookup(&e.i)?, lookup(&e.j)?);
        if i == j {
            return Err(Error::Schema(format!("edge {eidx} is a self loop on {:?}", e.i)));
        }
        let mut matches = Vec::with_capacity(e.matches.len());
        for (k, [ki, kj, w]) in e.matches.into_iter().enumerate() {
            let ki = as_index(ki).ok_or_else(|| Error::Schema(format!("edge {eidx} match {k}: bad index {ki}")))?;
            let kj = as_index(kj).ok_or_else(|| Error::Schema(format!("edge {eidx} match {k}: bad index {kj}")))?;
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Schema(format!("edge {eidx} match {k}: weight {w} must be nonnegative")));
            }
            let ki = remap_index(&remaps[i], ki, &frames[i], eidx)?;
            let kj = remap_index(&remaps[j], kj, &frames[j], eidx)?;
            if let (Some(ki), Some(kj)) = (ki, kj) {
                matches.push(Correspondence::new(ki, kj, w));
            }
        }
        if matches.is_empty() && options.depth_trim_quantile.is_some() {
            continue;
        }
        edges.push(Edge::new(i, j, matches));
    }
    let graph = ViewGraph::new(frames, edges);
    let report = validate(&graph);
    if !report.out_of_range.is_empty() {
        return Err(Error::IndexOutOfRange(report.out_of_range.join("; ")));
    }
    if !report.duplicate_edges.is_empty() {
        return Err(Error::Schema(format!("duplicate edges {:?}", report.duplicate_edges)));
    }
    Ok(graph)
}

fn as_index(v: f64) -> Option<usize> {
    (v >= 0.0 && v.fract() == 0.0 && v < usize::MAX as f64).then_some(v as usize)
}

fn remap_index(remap: &Option<Vec<Option<usize>>>, k: usize, frame: &Frame, edge: usize) -> Result<Option<usize>> {
    match remap {
        None => {
            if k >= frame.points.len() {
                return Err(Error::IndexOutOfRange(format!(
                    "edge {edge} references point {k} of frame {:?} with {} points",
                    frame.label,
                    frame.points.len()
                )));
            }
            Ok(Some(k))
        }
        Some(map) => map
            .get(k)
            .copied()
            .ok_or_else(|| Error::IndexOutOfRange(format!("edge {edge} references keypoint {k} of frame {:?}", frame.label))),
    }
}

type LiftedFrame = (Vec<Vector3<f64>>, Option<Vec<Option<usize>>>);

fn lift_frame(
    id: &str,
    keypoints: &[RawKeypoint],
    intr: &CameraIntrinsics,
    trim: Option<f64>,
) -> Result<LiftedFrame> {
    let threshold = match trim {
        Some(q) if q > 0.0 && !keypoints.is_empty() => {
            let mut depths: Vec<f64> = keypoints.iter().map(|k| k.depth).collect();
            depths.sort_by(|a, b| a.total_cmp(b));
            let keep = ((1.0 - q) * depths.len() as f64).ceil() as usize;
            Some(depths[keep.clamp(1, depths.len()) - 1])
        }
        _ => None,
    };
    let mut points = Vec::with_capacity(keypoints.len());
    let mut remap = Vec::with_capacity(keypoints.len());
    for kp in keypoints {
        let p = lift_keypoint(kp.pixel, intr, kp.depth).map_err(|e| Error::Schema(format!("frame {id:?}: {e}")))?;
        if threshold.is_some_and(|t| kp.depth > t) {
            remap.push(None);
        } else {
            remap.push(Some(points.len()));
            points.push(p);
        }
    }
    Ok((points, Some(remap)))
}

pub fn write_graph(graph: &ViewGraph, path: impl AsRef<Path>) -> Result<()> {
    write_graph_with_meta(graph, None, path)
}

pub fn write_graph_with_meta(graph: &ViewGraph, meta: Option<&serde_json::Value>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, graph_to_json(graph, meta)?)?;
    Ok(())
}

pub fn graph_to_json(graph: &ViewGraph, meta: Option<&serde_json::Value>) -> Result<String> {
    let out = RawGraphOut {
        frames: graph
            .frames
            .iter()
            .map(|f| RawFrameOut {
                id: &f.label,
                intrinsics: f.intrinsics,
                points: f.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            })
            .collect(),
        edges: graph
            .edges
            .iter()
            .map(|e| RawEdgeOut {
                i: &graph.frames[e.i].label,
                j: &graph.frames[e.j].label,
                matches: e.matches.iter().map(|c| (c.ki, c.kj, c.weight)).collect(),
            })
            .collect(),
        meta,
    };
    Ok(serde_json::to_string(&out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn chain(n: usize) -> ViewGraph {
        let frames = (0..n)
            .map(|i| Frame::new(format!("f{i}"), vec![Vector3::new(i as f64, 1.0, 2.0); 3]))
            .collect();
        let edges = (0..n - 1)
            .map(|i| Edge::new(i, i + 1, vec![Correspondence::new(0, 1, 1.0)]))
            .collect();
        ViewGraph::new(frames, edges)
    }

    #[test]
    fn lift_principal_ray() {
        let k = CameraIntrinsics::new(500.0, 400.0, 320.0, 240.0).unwrap();
        assert_eq!(lift_keypoint([320.0, 240.0], &k, 2.0).unwrap(), Vector3::new(0.0, 0.0, 2.0));
        assert_eq!(lift_keypoint([820.0, 240.0], &k, 1.0).unwrap(), Vector3::new(1.0, 0.0, 1.0));
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
        assert_eq!(lift_keypoint([320.0, 240.0], &k, 3.0).unwrap(), Vector3::new(0.0, 0.0, 3.0));
        assert!(lift_keypoint([1.0, 1.0], &k, 0.0).is_err());
        assert!(lift_keypoint([1.0, 1.0], &k, -1.0).is_err());
    }

    #[test]
    fn lifted_depth_is_exact() {
        let k = CameraIntrinsics::new(517.3, 516.5, 318.6, 255.3).unwrap();
        for d in [0.1, 0.7311, 3.0, 12.25] {
            assert_eq!(lift_keypoint([12.5, 400.25], &k, d).unwrap().z, d);
        }
    }

    #[test]
    fn chain_graph_examples() {
        assert_eq!(build_chain_graph(3, 1).unwrap(), vec![(0, 1), (1, 2)]);
        assert_eq!(
            build_chain_graph(5, 2).unwrap(),
            vec![(0, 1), (0, 2), (1, 2), (1, 3), (2, 3), (2, 4), (3, 4)]
        );
        assert_eq!(build_chain_graph(2, 4).unwrap(), vec![(0, 1)]);
        assert!(build_chain_graph(1, 1).is_err());
    }

    #[test]
    fn chain_graph_matches_neighbouring_three_frames() {
        // Enumerate the 1-based construction directly and compare.
        for n in 2usize..12 {
            let mut expected = Vec::new();
            for i in 1..=n.saturating_sub(2) {
                expected.push((i - 1, i));
                expected.push((i - 1, i + 1));
            }
            expected.push((n - 2, n - 1));
            expected.sort();
            expected.dedup();
            let mut got = build_chain_graph(n, 2).unwrap();
            got.sort();
            assert_eq!(got, expected, "n = {n}");
        }
    }

    #[test]
    fn validate_flags_problems() {
        let g = chain(3);
        assert!(validate(&g).is_ok());

        let mut split = chain(4);
        split.edges.remove(1);
        let r = validate(&split);
        assert!(r.disconnected());
        assert!(!r.is_ok());
        assert!(matches!(r.into_result(), Err(Error::Disconnected { components: 2 })));

        let mut zero = chain(3);
        zero.edges[0].matches[0].weight = 0.0;
        let r = validate(&zero);
        assert!(!r.disconnected());
        assert!(r.effectively_disconnected());
        assert_eq!(r.zero_weight_edges, vec![0]);
        assert!(!r.is_ok());

        let mut dup = chain(3);
        dup.edges.push(Edge::new(1, 0, vec![Correspondence::new(0, 0, 1.0)]));
        assert_eq!(validate(&dup).duplicate_edges, vec![(0, 1)]);

        let mut oob = chain(3);
        oob.edges[0].matches[0].kj = 99;
        assert_eq!(validate(&oob).out_of_range.len(), 1);
    }

    #[test]
    fn edge_orientation_is_canonical() {
        let e = Edge::new(3, 1, vec![Correspondence::new(7, 2, 0.5)]);
        assert_eq!((e.i, e.j), (1, 3));
        assert_eq!(e.matches[0], Correspondence::new(2, 7, 0.5));
    }

    #[test]
    fn file_round_trip() {
        let mut g = chain(4);
        g.frames[1].points[0] = Vector3::new(0.1 + 0.2, -1e-300, 1.0 / 3.0);
        g.frames[2].intrinsics = Some(CameraIntrinsics::new(500.0, 501.0, 320.5, 240.25).unwrap());
        g.edges[1].matches.push(Correspondence::new(2, 1, 0.123456789012345678));
        let text = graph_to_json(&g, None).unwrap();
        let back = parse_graph(&text, ReadOptions::default()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn negative_weight_is_schema_error() {
        let text = r#"{"frames":[{"id":"a","points":[[0,0,1]]},{"id":"b","points":[[0,0,1]]}],
            "edges":[{"i":"a","j":"b","matches":[[0,0,-1.0]]}]}"#;
        assert!(matches!(parse_graph(text, ReadOptions::default()), Err(Error::Schema(_))));
    }

    #[test]
    fn malformed_and_out_of_range() {
        assert!(matches!(parse_graph("{not json", ReadOptions::default()), Err(Error::Json(_))));
        let text = r#"{"frames":[{"id":"a","points":[[0,0,1]]},{"id":"b","points":[[0,0,1]]}],
            "edges":[{"i":"a","j":"b","matches":[[0,4,1.0]]}]}"#;
        assert!(matches!(parse_graph(text, ReadOptions::default()), Err(Error::IndexOutOfRange(_))));
        let text = r#"{"frames":[{"id":"a","points":[[0,0,1]]}],
            "edges":[{"i":"a","j":"zz","matches":[[0,0,1.0]]}]}"#;
        assert!(matches!(parse_graph(text, ReadOptions::default()), Err(Error::IndexOutOfRange(_))));
        let both = r#"{"frames":[{"id":"a","points":[[0,0,1]],"keypoints":[]}],"edges":[]}"#;
        assert!(matches!(parse_graph(both, ReadOptions::default()), Err(Error::Schema(_))));
        let no_intr = r#"{"frames":[{"id":"a","keypoints":[{"pixel":[1,2],"depth":1}]}],"edges":[]}"#;
        assert!(matches!(parse_graph(no_intr, ReadOptions::default()), Err(Error::Schema(_))));
    }

    #[test]
    fn keypoints_are_lifted_on_load() {
        let k = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0).unwrap();
        let kps = [([100.0, 50.0], 2.5), ([400.0, 300.0], 1.25), ([320.0, 240.0], 4.0)];
        let kp_json: Vec<String> = kps
            .iter()
            .map(|(p, d)| format!(r#"{{"pixel":[{},{}],"depth":{}}}"#, p[0], p[1], d))
            .collect();
        let lifted: Vec<Vector3<f64>> = kps.iter().map(|(p, d)| lift_keypoint(*p, &k, *d).unwrap()).collect();
        let pts_json: Vec<String> = lifted.iter().map(|p| format!("[{:?},{:?},{:?}]", p.x, p.y, p.z)).collect();
        let intr = r#""intrinsics":{"fx":500,"fy":480,"cx":320,"cy":240}"#;
        let with_kp = format!(
            r#"{{"frames":[{{"id":"a",{intr},"keypoints":[{}]}},{{"id":"b","points":[[0,0,1],[1,0,1],[0,1,1]]}}],
               "edges":[{{"i":"a","j":"b","matches":[[0,0,1],[1,1,1],[2,2,0.5]]}}]}}"#,
            kp_json.join(",")
        );
        let with_pts = format!(
            r#"{{"frames":[{{"id":"a",{intr},"points":[{}]}},{{"id":"b","points":[[0,0,1],[1,0,1],[0,1,1]]}}],
               "edges":[{{"i":"a","j":"b","matches":[[0,0,1],[1,1,1],[2,2,0.5]]}}]}}"#,
            pts_json.join(",")
        );
        let a = parse_graph(&with_kp, ReadOptions::default()).unwrap();
        let b = parse_graph(&with_pts, ReadOptions::default()).unwrap();
        assert_eq!(a, b);
        for (p, (_, d)) in a.frames[0].points.iter().zip(kps.iter()) {
            assert_eq!(p.z, *d);
        }
    }

    #[test]
    fn depth_trim_drops_far_keypoints() {
        let kps: Vec<String> = (1..=10)
            .map(|d| format!(r#"{{"pixel":[320,240],"depth":{d}}}"#))
            .collect();
        let text = format!(
            r#"{{"frames":[{{"id":"a","intrinsics":{{"fx":1,"fy":1,"cx":320,"cy":240}},"keypoints":[{}]}},
                {{"id":"b","points":[[0,0,1],[0,0,2]]}}],
               "edges":[{{"i":"a","j":"b","matches":[[0,0,1],[9,1,1]]}}]}}"#,
            kps.join(",")
        );
        let g = parse_graph(&text, ReadOptions { depth_trim_quantile: Some(0.1) }).unwrap();
        assert_eq!(g.frames[0].points.len(), 9);
        assert_eq!(g.edges[0].matches.len(), 1);
        assert_relative_eq!(g.frames[0].points[8].z, 9.0);
    }
}
