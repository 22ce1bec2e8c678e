//! Synthetic view graphs: Gaussian world cloud, circle / grid / line trajectories,
//! field-of-view correspondences, unknown scales and outliers.
//!
//! Every random draw comes from a ChaCha8 stream keyed by `(seed, purpose, i, j)`, so
//! instances do not depend on the order or thread in which edges are generated.

use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geometry::{look_at, SimilarityTransform};
use crate::graph::{connected_components, Correspondence, Edge, Frame, ViewGraph};

/// Smallest `|I_ij|` for which an edge is created, and the smallest subset size.
pub const MIN_EDGE_POINTS: usize = 10;
pub const CIRCLE_RADIUS: f64 = 10.0;
pub const LINE_LENGTH: f64 = 3.0;
pub const LINE_DISTANCE: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Circle,
    Grid,
    Line,
}

impl Dataset {
    pub fn name(self) -> &'static str {
        match self {
            Dataset::Circle => "circle",
            Dataset::Grid => "grid",
            Dataset::Line => "line",
        }
    }
}

impl FromStr for Dataset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(Dataset::Circle),
            "grid" => Ok(Dataset::Grid),
            "line" => Ok(Dataset::Line),
            _ => Err(Error::InvalidInput(format!("unknown dataset `{s}` (circle | grid | line)"))),
        }
    }
}

impl std::fmt::Display for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub dataset: Dataset,
    pub n_poses: usize,
    pub n_points: usize,
    pub sigma: f64,
    pub fov_deg: f64,
    pub outlier_rate: f64,
    pub scale_range: [f64; 2],
    pub seed: u64,
}

impl SimConfig {
    /// 60° field of view, unknown scales drawn from `[0.9, 1.1]`, no outliers.
    pub fn new(dataset: Dataset, n_poses: usize, n_points: usize, sigma: f64, seed: u64) -> Self {
        Self {
            dataset,
            n_poses,
            n_points,
            sigma,
            fov_deg: 60.0,
            outlier_rate: 0.0,
            scale_range: [0.9, 1.1],
            seed,
        }
    }

    pub fn with_scales(mut self, lo: f64, hi: f64) -> Self {
        self.scale_range = [lo, hi];
        self
    }

    pub fn with_outliers(mut self, rate: f64) -> Self {
        self.outlier_rate = rate;
        self
    }

    pub fn with_fov(mut self, fov_deg: f64) -> Self {
        self.fov_deg = fov_deg;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.n_poses < 2 {
            return bad(format!("n_poses must be at least 2, got {}", self.n_poses));
        }
        if self.n_points < MIN_EDGE_POINTS {
            return bad(format!("n_points must be at least {MIN_EDGE_POINTS}, got {}", self.n_points));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma must be finite and nonnegative, got {}", self.sigma));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg <= 360.0) {
            return bad(format!("fov_deg must lie in (0, 360], got {}", self.fov_deg));
        }
        if !(0.0..1.0).contains(&self.outlier_rate) {
            return bad(format!("outlier_rate must lie in [0, 1), got {}", self.outlier_rate));
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("scale_range must satisfy 0 < lo ≤ hi, got [{lo}, {hi}]"));
        }
        Ok(())
    }
}

/// Camera-to-world pose: world point = `rotation · p + center`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub center: Vector3<f64>,
}

impl Pose {
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.center)
    }
}

#[derive(Clone, Copy)]
#[repr(u64)]
enum Purpose {
    World = 1,
    Trajectory = 2,
    Noise = 3,
    Scale = 4,
    Subset = 5,
    Outlier = 6,
}

fn stream(seed: u64, purpose: Purpose, i: usize, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) | ((i as u64) << 28) | j as u64);
    rng
}

fn gaussian_point<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// `n` points drawn from `N(0, I₃)`.
pub fn world_points(n: usize, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = stream(seed, Purpose::World, 0, 0);
    (0..n).map(|_| gaussian_point(&mut rng)).collect()
}

/// Integer nodes on the surface of `[-1, 1]³` (26 of them).
pub fn grid_nodes() -> Vec<Vector3<f64>> {
    let mut out = Vec::new();
    for x in -1..=1 {
        for y in -1..=1 {
            for z in -1..=1 {
                if x != 0 || y != 0 || z != 0 {
                    out.push(Vector3::new(x as f64, y as f64, z as f64));
                }
            }
        }
    }
    out
}

fn grid_neighbours(nodes: &[Vector3<f64>], k: usize) -> Vec<usize> {
    (0..nodes.len())
        .filter(|&m| ((nodes[m] - nodes[k]).norm_squared() - 1.0).abs() < 1e-12)
        .collect()
}

pub fn gen_trajectory(config: &SimConfig) -> Result<Vec<Pose>> {
    config.validate()?;
    let n = config.n_poses;
    let origin = Vector3::zeros();
    let poses = match config.dataset {
        Dataset::Circle => (0..n)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                let c = Vector3::new(CIRCLE_RADIUS * th.cos(), CIRCLE_RADIUS * th.sin(), 0.0);
                Pose {
                    rotation: look_at(&c, &origin),
                    center: c,
                }
            })
            .collect(),
        Dataset::Line => (0..n)
            .map(|k| {
                let x = LINE_LENGTH * k as f64 / (n - 1) as f64 - LINE_LENGTH / 2.0;
                let c = Vector3::new(x, -LINE_DISTANCE, 0.0);
                Pose {
                    rotation: look_at(&c, &origin),
                    center: c,
                }
            })
            .collect(),
        Dataset::Grid => {
            let nodes = grid_nodes();
            let mut rng = stream(config.seed, Purpose::Trajectory, 0, 0);
            let mut k = rng.random_range(0..nodes.len());
            let mut out = Vec::with_capacity(n);
            for step in 0..n {
                if step > 0 {
                    let nb = grid_neighbours(&nodes, k);
                    k = nb[rng.random_range(0..nb.len())];
                }
                out.push(Pose {
                    rotation: look_at(&nodes[k], &origin),
                    center: nodes[k],
                });
            }
            out
        }
    };
    Ok(poses)
}

/// Noisy per-frame clouds `R_iᵀ(P - c_i) + ε` with `ε ~ N(0, σ² I₃)`.
pub fn observe(poses: &[Pose], world: &[Vector3<f64>], sigma: f64, seed: u64, exec: Execution) -> Vec<Vec<Vector3<f64>>> {
    exec::map_range(poses.len(), exec, |i| {
        let mut rng = stream(seed, Purpose::Noise, i, 0);
        world
            .iter()
            .map(|p| {
                let e = gaussian_point(&mut rng) * sigma;
                poses[i].to_camera(p) + e
            })
            .collect()
    })
}

/// Whether each world point lies within the cone of half-angle `fov/2` about the camera z-axis.
pub fn visibility(pose: &Pose, world: &[Vector3<f64>], fov_deg: f64) -> Vec<bool> {
    let cos_half = (fov_deg.to_radians() / 2.0).cos();
    world
        .iter()
        .map(|p| {
            let q = pose.to_camera(p);
            let norm = q.norm();
            norm > 0.0 && q.z >= cos_half * norm
        })
        .collect()
}

/// Correspondences for every pair whose shared field of view contains at least ten points.
///
/// Each edge keeps a uniform random subset of the shared points of uniform random size in
/// `[10, |I_ij|]`, sorted by point index.
pub fn fov_correspondences(
    poses: &[Pose],
    world: &[Vector3<f64>],
    fov_deg: f64,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Edge>> {
    let vis: Vec<Vec<bool>> = exec::map(poses, exec, |p| visibility(p, world, fov_deg));
    let pairs: Vec<(usize, usize)> = (0..poses.len())
        .flat_map(|i| (i + 1..poses.len()).map(move |j| (i, j)))
        .collect();
    let edges: Vec<Option<Edge>> = exec::map(&pairs, exec, |&(i, j)| {
        let shared: Vec<usize> = (0..world.len()).filter(|&k| vis[i][k] && vis[j][k]).collect();
        if shared.len() < MIN_EDGE_POINTS {
            return None;
        }
        let mut rng = stream(seed, Purpose::Subset, i, j);
        let q = rng.random_range(MIN_EDGE_POINTS..=shared.len());
        let mut pick: Vec<usize> = sample(&mut rng, shared.len(), q).into_iter().map(|a| shared[a]).collect();
        pick.sort_unstable();
        Some(Edge::new(i, j, pick.into_iter().map(|k| Correspondence::new(k, k, 1.0)).collect()))
    });
    let edges: Vec<Edge> = edges.into_iter().flatten().collect();
    let comps = connected_components(poses.len(), edges.iter().map(|e| (e.i, e.j)));
    if comps.len() > 1 {
        return Err(Error::SparseSimulation {
            components: comps.len(),
        });
    }
    Ok(edges)
}

/// Divides every cloud but the first by a scale drawn uniformly from `range`.
pub fn apply_unknown_scales(clouds: &mut [Vec<Vector3<f64>>], range: [f64; 2], seed: u64) -> Vec<f64> {
    let mut scales = vec![1.0; clouds.len()];
    for (i, cloud) in clouds.iter_mut().enumerate().skip(1) {
        let s = if range[0] == range[1] {
            range[0]
        } else {
            stream(seed, Purpose::Scale, i, 0).random_range(range[0]..=range[1])
        };
        scales[i] = s;
        if s != 1.0 {
            for p in cloud.iter_mut() {
                *p /= s;
            }
        }
    }
    scales
}

/// Replaces the frame-i side of `⌊rate · n_ij⌋` correspondences per edge with a fresh
/// `N(0, I₃)` point appended to frame i. Returns per-edge masks with `true` for inliers.
///
/// Frame i is the target of edge registration, so the outliers do not skew the source centroid.
pub fn inject_outliers(graph: &mut ViewGraph, rate: f64, seed: u64) -> Result<Vec<Vec<bool>>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidInput(format!("outlier rate must lie in [0, 1), got {rate}")));
    }
    let mut masks = Vec::with_capacity(graph.edges.len());
    for e in graph.edges.iter_mut() {
        let n = e.matches.len();
        let mut mask = vec![true; n];
        let k = (rate * n as f64).floor() as usize;
        if k > 0 {
            let mut rng = stream(seed, Purpose::Outlier, e.i, e.j);
            let mut chosen: Vec<usize> = sample(&mut rng, n, k).into_vec();
            chosen.sort_unstable();
            for idx in chosen {
                let frame = &mut graph.frames[e.i];
                frame.points.push(gaussian_point(&mut rng));
                e.matches[idx].ki = frame.points.len() - 1;
                mask[idx] = false;
            }
        }
        masks.push(mask);
    }
    Ok(masks)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Camera-to-anchor similarities; the first is the identity.
    pub transforms: Vec<SimilarityTransform>,
    pub scales: Vec<f64>,
    pub poses: Vec<Pose>,
    pub world_points: Vec<Vector3<f64>>,
    pub inlier_masks: Vec<Vec<bool>>,
}

impl GroundTruth {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "transforms": self.transforms.iter().map(|t| serde_json::json!({
                "s": t.scale,
                "R": t.rotation_row_major(),
                "t": [t.translation.x, t.translation.y, t.translation.z],
            })).collect::<Vec<_>>(),
            "scales": self.scales,
            "inlier_masks": self.inlier_masks,
        })
    }

    pub fn transforms_from_json(v: &serde_json::Value) -> Result<Vec<SimilarityTransform>> {
        let arr = v["transforms"]
            .as_array()
            .ok_or_else(|| Error::Schema("ground truth needs a `transforms` array".into()))?;
        arr.iter()
            .enumerate()
            .map(|(k, t)| {
                let nums = |key: &str, len: usize| -> Result<Vec<f64>> {
                    let a = t[key]
                        .as_array()
                        .filter(|a| a.len() == len)
                        .ok_or_else(|| Error::Schema(format!("transform {k}: `{key}` must have {len} numbers")))?;
                    a.iter()
                        .map(|x| x.as_f64().ok_or_else(|| Error::Schema(format!("transform {k}: non-numeric `{key}`"))))
                        .collect()
                };
                let s = t["s"]
                    .as_f64()
                    .ok_or_else(|| Error::Schema(format!("transform {k}: missing `s`")))?;
                let r = nums("R", 9)?;
                let tr = nums("t", 3)?;
                SimilarityTransform::new(s, Matrix3::from_row_slice(&r), Vector3::new(tr[0], tr[1], tr[2]))
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SimInstance {
    pub config: SimConfig,
    pub graph: ViewGraph,
    pub truth: GroundTruth,
}

/// Similarities mapping each frame's measurements into the first frame.
pub fn ground_truth_transforms(poses: &[Pose], scales: &[f64]) -> Vec<SimilarityTransform> {
    let world: Vec<SimilarityTransform> = poses
        .iter()
        .zip(scales)
        .map(|(p, &s)| SimilarityTransform {
            scale: s,
            rotation: p.rotation,
            translation: p.center,
        })
        .collect();
    let anchor = world[0].inverse();
    world.iter().map(|t| anchor.compose(t)).collect()
}

pub fn simulate(config: &SimConfig) -> Result<SimInstance> {
    simulate_with(config, Execution::default())
}

pub fn simulate_with(config: &SimConfig, exec: Execution) -> Result<SimInstance> {
    config.validate()?;
    let poses = gen_trajectory(config)?;
    let world = world_points(config.n_points, config.seed);
    let mut clouds = observe(&poses, &world, config.sigma, config.seed, exec);
    let scales = apply_unknown_scales(&mut clouds, config.scale_range, config.seed);
    let edges = fov_correspondences(&poses, &world, config.fov_deg, config.seed, exec)?;
    let frames = clouds
        .into_iter()
        .enumerate()
        .map(|(i, pts)| Frame::new(format!("frame_{i:04}"), pts))
        .collect();
    let mut graph = ViewGraph::new(frames, edges);
    let inlier_masks = inject_outliers(&mut graph, config.outlier_rate, config.seed)?;
    let transforms = ground_truth_transforms(&poses, &scales);
    Ok(SimInstance {
        config: config.clone(),
        graph,
        truth: GroundTruth {
            transforms,
            scales,
            poses,
            world_points: world,
            inlier_masks,
        },
    })
}
