//! Trajectory error metrics.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotation_distance_deg, SimilarityTransform};
use crate::registration::weighted_umeyama;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeMode {
    /// Express both trajectories relative to their first frame.
    Anchor,
    /// Anchor, then rescale estimated translations by `median‖t_gt‖ / median‖t_est‖`.
    MedianScale,
    /// Anchor, then fit a similarity between estimated and true positions.
    Sim3,
}

impl FromStr for GaugeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anchor" => Ok(GaugeMode::Anchor),
            "median_scale" | "median-scale" => Ok(GaugeMode::MedianScale),
            "sim3" => Ok(GaugeMode::Sim3),
            _ => Err(Error::InvalidInput(format!("unknown gauge mode `{s}`"))),
        }
    }
}

fn anchored(x: &[SimilarityTransform]) -> Vec<SimilarityTransform> {
    let a = x[0].inverse();
    x.iter().map(|t| a.compose(t)).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Returns `(estimate, ground truth)` in a common gauge.
pub fn align_gauge(
    est: &[SimilarityTransform],
    gt: &[SimilarityTransform],
    mode: GaugeMode,
) -> Result<(Vec<SimilarityTransform>, Vec<SimilarityTransform>)> {
    if est.len() != gt.len() || est.is_empty() {
        return Err(Error::InvalidInput(format!(
            "trajectories must be non-empty and equally long ({} vs {})",
            est.len(),
            gt.len()
        )));
    }
    let mut e = anchored(est);
    let g = anchored(gt);
    match mode {
        GaugeMode::Anchor => {}
        GaugeMode::MedianScale => {
            let me = median(e.iter().map(|t| t.translation.norm()).collect());
            let mg = median(g.iter().map(|t| t.translation.norm()).collect());
            if !(me > 0.0) {
                return Err(Error::Degenerate("median estimated translation norm is zero".into()));
            }
            let f = mg / me;
            for t in &mut e {
                t.translation *= f;
            }
        }
        GaugeMode::Sim3 => {
            let x: Vec<_> = e.iter().map(|t| t.translation).collect();
            let y: Vec<_> = g.iter().map(|t| t.translation).collect();
            let fit = weighted_umeyama(&x, &y, &vec![1.0; x.len()])?.transform;
            for t in &mut e {
                t.translation = fit.apply(&t.translation);
                t.rotation = fit.rotation * t.rotation;
            }
        }
    }
    Ok((e, g))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rot_err_deg: f64,
    pub trans_err: f64,
    pub scale_err: f64,
    pub ate: f64,
    pub rpe_t: f64,
    pub rpe_r: f64,
    pub eta: f64,
}

/// Errors between trajectories that are already in a common gauge; `eta` is left at zero.
pub fn compute_metrics(est: &[SimilarityTransform], gt: &[SimilarityTransform]) -> MetricsReport {
    let n = est.len().min(gt.len());
    if n == 0 {
        return MetricsReport::default();
    }
    let nf = n as f64;
    let mut m = MetricsReport::default();
    for (a, b) in est.iter().zip(gt) {
        m.rot_err_deg += rotation_distance_deg(&a.rotation, &b.rotation);
        let d = (a.translation - b.translation).norm();
        m.trans_err += d;
        m.ate += d * d;
        m.scale_err += (a.scale / b.scale - 1.0).abs();
    }
    m.rot_err_deg /= nf;
    m.trans_err /= nf;
    m.scale_err /= nf;
    m.ate = (m.ate / nf).sqrt();
    if n > 1 {
        for k in 0..n - 1 {
            let (e0, e1, g0, g1) = (&est[k], &est[k + 1], &gt[k], &gt[k + 1]);
            let re = e0.rotation.transpose() * e1.rotation;
            let rg = g0.rotation.transpose() * g1.rotation;
            let te = e0.rotation.transpose() * (e1.translation - e0.translation);
            let tg = g0.rotation.transpose() * (g1.translation - g0.translation);
            m.rpe_r += rotation_distance_deg(&re, &rg);
            m.rpe_t += (te - tg).norm();
        }
        m.rpe_r /= (n - 1) as f64;
        m.rpe_t /= (n - 1) as f64;
    }
    m
}

/// One line of the metrics CSV.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricsRow {
    pub seed: u64,
    pub dataset: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub sigma: f64,
    pub lambda: f64,
    pub outlier_rate: f64,
    pub method: String,
    pub rot_err_deg: f64,
    pub trans_err: f64,
    pub scale_err: f64,
    pub ate: f64,
    pub rpe_t: f64,
    pub rpe_r: f64,
    pub eta: f64,
    pub certified: bool,
    pub wall_ms: f64,
}

pub const CSV_HEADER: &str =
    "seed,dataset,N,sigma,lambda,outlier_rate,method,rot_err_deg,trans_err,scale_err,ate,rpe_t,rpe_r,eta,certified,wall_ms";

/// Mean estimated scale over frames 2..N (frame 1 is fixed to 1).
pub fn mean_scale(est: &[SimilarityTransform]) -> f64 {
    if est.len() < 2 {
        return 1.0;
    }
    est[1..].iter().map(|t| t.scale).sum::<f64>() / (est.len() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_so3, random_rotation};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn traj(rng: &mut ChaCha8Rng, n: usize) -> Vec<SimilarityTransform> {
        let mut v: Vec<_> = (0..n)
            .map(|_| SimilarityTransform {
                scale: rng.random_range(0.8..1.2),
                rotation: random_rotation(rng),
                translation: Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0)),
            })
            .collect();
        v[0] = SimilarityTransform::identity();
        v
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = traj(&mut rng, 6);
        let (e, g) = align_gauge(&gt, &gt, GaugeMode::Anchor).unwrap();
        let m = compute_metrics(&e, &g);
        assert!(m.rot_err_deg < 1e-6 && m.trans_err < 1e-12 && m.ate < 1e-12 && m.rpe_t < 1e-12);
    }

    #[test]
    fn median_scale_undoes_halving() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = traj(&mut rng, 5);
        let half: Vec<_> = gt
            .iter()
            .map(|t| SimilarityTransform {
                translation: t.translation * 0.5,
                ..*t
            })
            .collect();
        let (e, g) = align_gauge(&half, &gt, GaugeMode::MedianScale).unwrap();
        for (a, b) in e.iter().zip(&g) {
            assert!((a.translation - b.translation).norm() < 1e-12);
        }
        let zero = vec![SimilarityTransform::identity(); 5];
        assert!(align_gauge(&zero, &gt, GaugeMode::MedianScale).is_err());
    }

    #[test]
    fn anchor_removes_a_global_gauge() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = traj(&mut rng, 7);
        let gauge = SimilarityTransform {
            scale: 1.0,
            rotation: random_rotation(&mut rng),
            translation: Vector3::new(3.0, -1.0, 2.0),
        };
        let est: Vec<_> = gt.iter().map(|t| gauge.compose(t)).collect();
        let (e, g) = align_gauge(&est, &gt, GaugeMode::Anchor).unwrap();
        let m = compute_metrics(&e, &g);
        assert!(m.rot_err_deg < 1e-5 && m.ate < 1e-12 && m.rpe_r < 1e-5 && m.rpe_t < 1e-12);
    }

    #[test]
    fn single_rotation_perturbation() {
        let n = 5;
        let gt = vec![SimilarityTransform::identity(); n];
        let mut est = gt.clone();
        est[2].rotation = exp_so3(&Vector3::new(0.0, 0.0, 10f64.to_radians()));
        let m = compute_metrics(&est, &gt);
        assert!((m.rot_err_deg - 10.0 / n as f64).abs() < 1e-9);
        // Pairs (1,2) and (2,3) each carry 10°.
        assert!((m.rpe_r - 20.0 / (n - 1) as f64).abs() < 1e-9);
    }

    #[test]
    fn constant_offset_ate() {
        let n = 6;
        let c = 0.7;
        let gt = vec![SimilarityTransform::identity(); n];
        let mut est = gt.clone();
        for t in est.iter_mut().skip(1) {
            t.translation = Vector3::new(c, 0.0, 0.0);
        }
        let m = compute_metrics(&est, &gt);
        assert!((m.ate - c * ((n - 1) as f64 / n as f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ate_ignores_order_but_rpe_does_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = traj(&mut rng, 6);
        let est = traj(&mut rng, 6);
        let m = compute_metrics(&est, &gt);
        let perm = [3, 1, 5, 0, 2, 4];
        let e2: Vec<_> = perm.iter().map(|&k| est[k]).collect();
        let g2: Vec<_> = perm.iter().map(|&k| gt[k]).collect();
        let m2 = compute_metrics(&e2, &g2);
        assert!((m.ate - m2.ate).abs() < 1e-12);
        assert!((m.rpe_t - m2.rpe_t).abs() > 1e-6);
    }
}
