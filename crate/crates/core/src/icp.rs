//! Residuals, Jacobians, gradients and Gauss-Newton Hessians of the
//! point-to-point loss under a right perturbation `T · exp(ξ)`.
//!
//! Conventions: `e = T p - q`, `J = ∂e/∂ξ = [-R[p]×, R]`, `b = -Jᵀe`,
//! `H = JᵀJ`. The loss is `L = Σ ρ(‖e‖)` and `b = -½ ∇L`.

use nalgebra::{Matrix3x6, Matrix6, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{hat, Pose, Twist};
use crate::pointcloud::PointCloud;

/// Fewest correspondences that can constrain all six degrees of freedom.
pub const MIN_CORRESPONDENCES: usize = 6;

/// Smallest admissible eigenvalue of a matrix passed to [`newton_step`].
pub const SINGULAR_EIGENVALUE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct PointTerms {
    pub residual: Vector3<f64>,
    pub jacobian: Matrix3x6<f64>,
    pub gradient: Vector6<f64>,
    pub hessian: Matrix6<f64>,
}

pub fn point_terms(pose: &Pose, p_src: &Vector3<f64>, q_tgt: &Vector3<f64>) -> PointTerms {
    let r = pose.rotation.matrix();
    let residual = pose.transform_point(p_src) - q_tgt;
    let mut jacobian = Matrix3x6::zeros();
    jacobian
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(-r * hat(p_src)));
    jacobian.fixed_view_mut::<3, 3>(0, 3).copy_from(r);
    let jt = jacobian.transpose();
    PointTerms {
        residual,
        gradient: -(jt * residual),
        hessian: jt * jacobian,
        jacobian,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustOptions {
    /// Huber threshold in meters; `None` disables the kernel.
    pub huber_delta: Option<f64>,
    /// Pairs whose residual norm exceeds this are dropped.
    pub max_correspondence_distance: f64,
}

impl Default for RobustOptions {
    fn default() -> Self {
        RobustOptions {
            huber_delta: Some(0.5),
            max_correspondence_distance: 2.0,
        }
    }
}

impl RobustOptions {
    /// Plain least squares with no rejection.
    pub fn none() -> Self {
        RobustOptions {
            huber_delta: None,
            max_correspondence_distance: f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CloudTerms {
    pub loss: f64,
    pub gradient: Vector6<f64>,
    pub hessian: Matrix6<f64>,
    pub matches: usize,
}

impl CloudTerms {
    pub fn zero() -> Self {
        CloudTerms {
            loss: 0.0,
            gradient: Vector6::zeros(),
            hessian: Matrix6::zeros(),
            matches: 0,
        }
    }
}

/// IRLS weight `min(1, δ/‖e‖)` and the Huber loss value.
fn huber(norm: f64, delta: Option<f64>) -> (f64, f64) {
    match delta {
        Some(d) if norm > d => (d / norm, 2.0 * d * norm - d * d),
        _ => (1.0, norm * norm),
    }
}

/// Sums per-point terms over `(source index, target index)` pairs in the
/// given order.
pub fn cloud_terms(
    pose: &Pose,
    source: &PointCloud,
    target: &PointCloud,
    correspondences: &[(usize, usize)],
    robust: &RobustOptions,
) -> Result<CloudTerms> {
    let mut acc = CloudTerms::zero();
    for &(s, t) in correspondences {
        let terms = point_terms(pose, source.get(s), target.get(t));
        let norm = terms.residual.norm();
        if norm > robust.max_correspondence_distance {
            continue;
        }
        let (w, rho) = huber(norm, robust.huber_delta);
        acc.loss += rho;
        acc.gradient += terms.gradient * w;
        acc.hessian += terms.hessian * w;
        acc.matches += 1;
    }
    if acc.matches < MIN_CORRESPONDENCES {
        return Err(Error::UnderConstrained {
            matches: acc.matches,
            required: MIN_CORRESPONDENCES,
        });
    }
    Ok(acc)
}

pub fn min_eigenvalue(m: &Matrix6<f64>) -> f64 {
    SymmetricEigen::new(*m).eigenvalues.min()
}

/// Solves `(H + damping·I) Δξ = b` by Cholesky factorization.
pub fn newton_step(terms: &CloudTerms, damping: f64) -> Result<Twist> {
    solve_spd(&terms.hessian, &terms.gradient, damping).map(Twist)
}

pub fn solve_spd(h: &Matrix6<f64>, b: &Vector6<f64>, damping: f64) -> Result<Vector6<f64>> {
    let damped = h + Matrix6::identity() * damping;
    let min_eig = min_eigenvalue(&damped);
    if !(min_eig >= SINGULAR_EIGENVALUE) {
        return Err(Error::SingularSystem {
            min_eigenvalue: min_eig,
        });
    }
    damped
        .cholesky()
        .map(|c| c.solve(b))
        .ok_or(Error::SingularSystem {
            min_eigenvalue: min_eig,
        })
}

/// Undamped solve, retrying once with `1e-9·trace(H)/6` on failure.
pub fn solve_with_retry(h: &Matrix6<f64>, b: &Vector6<f64>) -> Result<Vector6<f64>> {
    solve_spd(h, b, 0.0).or_else(|_| solve_spd(h, b, 1e-9 * h.trace() / 6.0))
}
