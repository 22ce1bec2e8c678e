//! Closed-form two-cloud registration, its covariance and χ² noise bounds.

use nalgebra::{Matrix3, Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{hat, SimilarityTransform};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// χ² quantile with 3 degrees of freedom at 0.9999.
pub const CHI2_3DOF_9999: f64 = 21.11;
pub const DEFAULT_CONFIDENCE: f64 = 0.9999;

/// Similarity mapping frame-j points onto frame-i points, with per-correspondence residuals.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeRegistration {
    pub i: usize,
    pub j: usize,
    pub transform: SimilarityTransform,
    pub residuals: Vec<Vector3<f64>>,
}

#[derive(Clone, Debug)]
pub struct Registration {
    pub transform: SimilarityTransform,
    /// Set when the closed form yields `s ≤ 0`; the transform then carries that scale unchanged.
    pub nonpositive_scale: bool,
}

fn weighted_moments(
    x: &[Vector3<f64>],
    y: &[Vector3<f64>],
    w: &[f64],
) -> Result<(Vector3<f64>, Vector3<f64>, Matrix3<f64>, f64)> {
    if x.len() != y.len() || x.len() != w.len() {
        return Err(Error::InvalidInput("point and weight counts differ".into()));
    }
    if x.len() < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 correspondences, got {}", x.len())));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("total weight must be positive".into()));
    }
    let mut mx = Vector3::zeros();
    let mut my = Vector3::zeros();
    for ((a, b), &wk) in x.iter().zip(y).zip(w) {
        mx += a * wk;
        my += b * wk;
    }
    mx /= total;
    my /= total;
    let mut cov = Matrix3::zeros();
    let mut bnorm = 0.0;
    for ((a, b), &wk) in x.iter().zip(y).zip(w) {
        let (da, db) = (a - mx, b - my);
        cov += db * da.transpose() * wk;
        bnorm += wk * da.norm_squared();
    }
    Ok((mx, my, cov, bnorm))
}

/// `(U, D, V, S)` of `ABᵀ`, rejecting rank ≤ 1.
fn procrustes(cov: &Matrix3<f64>) -> Result<(Matrix3<f64>, Vector3<f64>, Matrix3<f64>, Matrix3<f64>)> {
    let svd = cov.svd(true, true);
    let u = svd.u.expect("svd u");
    let v = svd.v_t.expect("svd v_t").transpose();
    let d = svd.singular_values;
    if !(d[0] > 0.0) || d[1] <= 1e-12 * d[0] {
        return Err(Error::Degenerate(format!(
            "cross-covariance has rank ≤ 1 (singular values {:e}, {:e}, {:e})",
            d[0], d[1], d[2]
        )));
    }
    let sign = if u.determinant() * v.determinant() < 0.0 { -1.0 } else { 1.0 };
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign));
    Ok((u, d, v, s))
}

/// Minimizes `Σ w_k ‖y_k - (s R x_k + t)‖²` in closed form.
pub fn weighted_umeyama(x: &[Vector3<f64>], y: &[Vector3<f64>], w: &[f64]) -> Result<Registration> {
    let (mx, my, cov, bnorm) = weighted_moments(x, y, w)?;
    let (u, d, v, sm) = procrustes(&cov)?;
    let r = u * sm * v.transpose();
    let s = (d[0] + d[1] + sm[(2, 2)] * d[2]) / bnorm;
    let t = my - r * mx * s;
    Ok(Registration {
        transform: SimilarityTransform {
            scale: s,
            rotation: r,
            translation: t,
        },
        nonpositive_scale: s <= 0.0,
    })
}

/// Rigid variant with `s = 1`.
pub fn weighted_arun(x: &[Vector3<f64>], y: &[Vector3<f64>], w: &[f64]) -> Result<Registration> {
    let (mx, my, cov, _) = weighted_moments(x, y, w)?;
    let (u, _, v, sm) = procrustes(&cov)?;
    let r = u * sm * v.transpose();
    Ok(Registration {
        transform: SimilarityTransform {
            scale: 1.0,
            rotation: r,
            translation: my - r * mx,
        },
        nonpositive_scale: false,
    })
}

pub fn weighted_cost(x: &[Vector3<f64>], y: &[Vector3<f64>], w: &[f64], t: &SimilarityTransform) -> f64 {
    x.iter()
        .zip(y)
        .zip(w)
        .map(|((a, b), wk)| wk * (b - t.apply(a)).norm_squared())
        .sum()
}

/// Registers frame-j points onto frame-i points.
pub fn register_edge(
    i: usize,
    j: usize,
    points_i: &[Vector3<f64>],
    points_j: &[Vector3<f64>],
    w: &[f64],
) -> Result<EdgeRegistration> {
    let reg = weighted_umeyama(points_j, points_i, w)?;
    let residuals = points_j
        .iter()
        .zip(points_i)
        .map(|(pj, pi)| pi - reg.transform.apply(pj))
        .collect();
    Ok(EdgeRegistration {
        i,
        j,
        transform: reg.transform,
        residuals,
    })
}

/// Covariance of the right-perturbation `(ω, δ)` of a rigid registration `p_i ≈ R* p_j + t*`,
/// `σ² (Σ_k w_k H_kᵀH_k)⁻¹` with `H_k = [-R* hat(p_jk), I₃]`.
///
/// `sigma` is the standard deviation of each coordinate of the residual `p_i - R p_j - t`.
pub fn arun_covariance(
    points_i: &[Vector3<f64>],
    points_j: &[Vector3<f64>],
    r_star: &Matrix3<f64>,
    sigma: f64,
    weights: Option<&[f64]>,
) -> Result<Matrix6<f64>> {
    if points_i.len() != points_j.len() {
        return Err(Error::InvalidInput("matched clouds differ in length".into()));
    }
    if points_j.len() < 3 {
        return Err(Error::InvalidInput("need at least 3 correspondences".into()));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidInput(format!("sigma must be finite and nonnegative, got {sigma}")));
    }
    if let Some(w) = weights {
        if w.len() != points_j.len() || w.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidInput("weights must be nonnegative, one per point".into()));
        }
    }
    let mut info = Matrix6::zeros();
    for (k, p) in points_j.iter().enumerate() {
        let wk = weights.map_or(1.0, |w| w[k]);
        let mut h = nalgebra::Matrix3x6::zeros();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-r_star * hat(p)));
        h.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        info += h.transpose() * h * wk;
    }
    let eig = info.symmetric_eigenvalues();
    if eig.min() <= 1e-12 * eig.max().max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate("information matrix is singular (collinear points?)".into()));
    }
    let inv = info
        .cholesky()
        .ok_or_else(|| Error::Degenerate("information matrix is not positive definite".into()))?
        .inverse();
    let cov = inv * (sigma * sigma);
    Ok((cov + cov.transpose()) * 0.5)
}

/// χ² quantile: exactly 21.11 for `(0.9999, 3)`, the inverse CDF otherwise.
pub fn chi2_quantile(confidence: f64, dof: u32) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) || dof == 0 {
        return Err(Error::InvalidInput(format!(
            "need 0 < confidence < 1 and dof ≥ 1, got {confidence}, {dof}"
        )));
    }
    if confidence == DEFAULT_CONFIDENCE && dof == 3 {
        return Ok(CHI2_3DOF_9999);
    }
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(dist.inverse_cdf(confidence))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    pub confidence: f64,
    pub chi2_threshold: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64, confidence: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self {
            sigma,
            confidence,
            chi2_threshold: chi2_quantile(confidence, 3)?,
        })
    }

    /// Residual bound in the anchor frame: `√χ² · √2 · σ`.
    pub fn global_bound(&self) -> f64 {
        self.chi2_threshold.sqrt() * 2f64.sqrt() * self.sigma
    }

    /// Residual bound in the coordinates of a frame with scale `s_i`.
    pub fn edge_bound(&self, s_i: f64) -> Result<f64> {
        if !(s_i > 0.0) || !s_i.is_finite() {
            return Err(Error::InvalidInput(format!("scale must be positive, got {s_i}")));
        }
        Ok(self.global_bound() / s_i)
    }
}

pub fn noise_bound_global(sigma: f64) -> Result<f64> {
    Ok(NoiseModel::new(sigma, DEFAULT_CONFIDENCE)?.global_bound())
}

pub fn noise_bound_edge(sigma: f64, s_i: f64) -> Result<f64> {
    NoiseModel::new(sigma, DEFAULT_CONFIDENCE)?.edge_bound(s_i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect()
    }

    #[test]
    fn identity_registration() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let x = cloud(&mut rng, 10);
        let r = weighted_umeyama(&x, &x, &[1.0; 10]).unwrap().transform;
        assert!((r.scale - 1.0).abs() < 1e-12);
        assert!((r.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(r.translation.norm() < 1e-12);
    }

    #[test]
    fn recovers_forward_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let x = cloud(&mut rng, 12);
            let truth = SimilarityTransform {
                scale: 2.0,
                rotation: random_rotation(&mut rng),
                translation: Vector3::new(1.0, -2.0, 0.5),
            };
            let y: Vec<_> = x.iter().map(|p| truth.apply(p)).collect();
            let w: Vec<f64> = (0..12).map(|_| rng.random_range(0.2..3.0)).collect();
            let r = weighted_umeyama(&x, &y, &w).unwrap().transform;
            assert!((r.scale - 2.0).abs() < 1e-10);
            assert!((r.rotation - truth.rotation).norm() < 1e-10);
            assert!((r.translation - truth.translation).norm() < 1e-10);
            let res = register_edge(0, 1, &y, &x, &w).unwrap();
            assert!(res.residuals.iter().all(|e| e.norm() < 1e-10));
        }
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let x: Vec<_> = (0..5).map(|k| Vector3::new(k as f64, 0.0, 0.0)).collect();
        assert!(matches!(weighted_umeyama(&x, &x, &[1.0; 5]), Err(Error::Degenerate(_))));
        assert!(weighted_umeyama(&x[..2], &x[..2], &[1.0; 2]).is_err());
    }

    #[test]
    fn noise_bounds() {
        assert!((noise_bound_global(1.0).unwrap() - 42.22f64.sqrt()).abs() < 1e-12);
        assert!((noise_bound_global(1.0).unwrap() - 6.4977).abs() < 1e-4);
        assert!((noise_bound_global(0.01).unwrap() - 0.064977).abs() < 1e-6);
        assert!(noise_bound_global(0.0).is_err());
        assert!((noise_bound_edge(0.01, 1.0).unwrap() - noise_bound_global(0.01).unwrap()).abs() < 1e-15);
        assert!((noise_bound_edge(0.01, 2.0).unwrap() - 0.032489).abs() < 1e-6);
        assert!(noise_bound_edge(0.01, 0.0).is_err());
        assert!(noise_bound_edge(0.01, -1.0).is_err());
    }

    #[test]
    fn chi2_quantiles() {
        assert_eq!(chi2_quantile(0.9999, 3).unwrap(), 21.11);
        // Reference quantiles of the χ² distribution.
        for (p, k, q) in [(0.95, 3, 7.814727903), (0.99, 3, 11.34486673), (0.95, 10, 18.30703805), (0.5, 3, 2.365973884)] {
            let got = chi2_quantile(p, k).unwrap();
            assert!((got - q).abs() / q < 1e-6, "{p} {k}: {got} vs {q}");
        }
        assert!(chi2_quantile(1.0, 3).is_err());
        // The tabulated constant is the rounded quantile.
        assert!((ChiSquared::new(3.0).unwrap().inverse_cdf(0.9999) - 21.11).abs() < 5e-3);
    }

    #[test]
    fn covariance_scaling_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let pj = cloud(&mut rng, 20);
        let r = random_rotation(&mut rng);
        let pi: Vec<_> = pj.iter().map(|p| r * p).collect();
        let c1 = arun_covariance(&pi, &pj, &r, 0.1, None).unwrap();
        let c2 = arun_covariance(&pi, &pj, &r, 0.2, None).unwrap();
        assert!((c2 - c1 * 4.0).norm() < 1e-12 * c2.norm());
        let pj2: Vec<_> = pj.iter().chain(&pj).copied().collect();
        let pi2: Vec<_> = pi.iter().chain(&pi).copied().collect();
        let ch = arun_covariance(&pi2, &pj2, &r, 0.1, None).unwrap();
        assert!((ch * 2.0 - c1).norm() < 1e-12 * c1.norm());
        assert!(c1.symmetric_eigenvalues().min() > 0.0);
        let collinear: Vec<_> = (0..5).map(|k| Vector3::new(k as f64, 0.0, 0.0)).collect();
        assert!(arun_covariance(&collinear, &collinear, &Matrix3::identity(), 0.1, None).is_err());
    }
}
