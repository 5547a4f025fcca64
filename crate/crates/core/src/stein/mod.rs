//! Stein Variational Newton ICP.
//!
//! A set of twist particles, each a right perturbation of the prior pose, is
//! moved jointly: the SVGD direction combines kernel-weighted log-likelihood
//! gradients with a repulsive kernel-gradient term, and in Newton mode it is
//! preconditioned per particle by the kernel-averaged Gauss-Newton Hessian.
//! The particle mean gives the pose correction and the particle scatter its
//! covariance.

mod kernel;
mod solver;

pub use kernel::{median_bandwidth, rbf_kernel, svgd_direction, svn_hessian, MIN_BANDWIDTH};
pub use solver::{init_particles, solve_icp, solve_icp_with_tree, ParticleSet};

use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::icp::RobustOptions;
use crate::manifold::{Pose, Twist};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    /// Median heuristic, recomputed every iteration.
    Median,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMode {
    /// Newton-preconditioned updates with unit step.
    Svn,
    /// First-order SVGD updates driven by Adam.
    Svgd,
}

impl std::str::FromStr for SolverMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svn" => Ok(SolverMode::Svn),
            "svgd" => Ok(SolverMode::Svgd),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorWeight {
    Off,
    /// Adds the Gaussian log-prior `N(0, Σ̌)` of the prior covariance.
    Gaussian,
}

/// How the point-to-point loss is turned into a log-likelihood
/// `-L / (2 s²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodScale {
    /// `s² = Σ L / Σ (3·matches - 6)` pooled over the particles each
    /// iteration.
    Residual,
    /// Fixed point noise standard deviation in meters.
    Sigma(f64),
    /// `s = 1`.
    Unit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub particle_count: usize,
    /// Per-axis standard deviation of the initial particles, `[θ; ρ]`.
    pub init_sigma: [f64; 6],
    pub max_iterations: usize,
    pub early_stop_eps: f64,
    pub bandwidth: Bandwidth,
    pub mode: SolverMode,
    pub svgd_step_size: f64,
    pub prior_weight: PriorWeight,
    pub likelihood: LikelihoodScale,
    /// Sub-target neighborhood size.
    pub neighborhood_size: usize,
    pub robust: RobustOptions,
    /// Refine the particle mean with a Karcher-mean iteration.
    pub karcher_mean: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            particle_count: 30,
            init_sigma: [0.05, 0.05, 0.05, 0.1, 0.1, 0.1],
            max_iterations: 100,
            early_stop_eps: 1e-6,
            bandwidth: Bandwidth::Median,
            mode: SolverMode::Svn,
            svgd_step_size: 0.01,
            prior_weight: PriorWeight::Off,
            likelihood: LikelihoodScale::Residual,
            neighborhood_size: 20,
            robust: RobustOptions::default(),
            karcher_mean: false,
        }
    }
}

impl SolverConfig {
    /// Single deterministic particle: plain Gauss-Newton ICP.
    pub fn gauss_newton() -> Self {
        SolverConfig {
            particle_count: 1,
            init_sigma: [0.0; 6],
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.particle_count == 0 {
            return bad("particle_count must be >= 1");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1");
        }
        if !(self.early_stop_eps > 0.0) {
            return bad("early_stop_eps must be > 0");
        }
        if self.init_sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("init_sigma entries must be finite and >= 0");
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return bad("fixed bandwidth must be > 0");
            }
        }
        if let LikelihoodScale::Sigma(s) = self.likelihood {
            if !(s > 0.0 && s.is_finite()) {
                return bad("likelihood sigma must be > 0");
            }
        }
        if !(self.svgd_step_size > 0.0) {
            return bad("svgd_step_size must be > 0");
        }
        if self.neighborhood_size == 0 {
            return bad("neighborhood_size must be >= 1");
        }
        if !(self.robust.max_correspondence_distance > 0.0) {
            return bad("max_correspondence_distance must be > 0");
        }
        Ok(())
    }
}

/// A pose with a 6×6 covariance in `[θ; ρ]` ordering.
///
/// As a solver input only `pose` and `covariance` are read. As an output the
/// remaining fields describe the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseWithCovariance {
    pub pose: Pose,
    pub covariance: Matrix6<f64>,
    /// Mean particle twist relative to the prior pose.
    pub mean_twist: Twist,
    /// Particle covariance before transport by the prior's adjoint.
    pub particle_covariance: Matrix6<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Mean squared particle update norm, one entry per iteration.
    pub update_norms: Vec<f64>,
    /// Particles whose Newton system stayed singular after damping, summed
    /// over iterations.
    pub frozen_updates: usize,
    pub particles: Vec<Twist>,
}

impl PoseWithCovariance {
    pub fn new(pose: Pose, covariance: Matrix6<f64>) -> Self {
        PoseWithCovariance {
            pose,
            covariance,
            mean_twist: Twist::zero(),
            particle_covariance: Matrix6::zeros(),
            iterations: 0,
            converged: false,
            update_norms: Vec::new(),
            frozen_updates: 0,
            particles: Vec::new(),
        }
    }

    pub fn certain(pose: Pose) -> Self {
        PoseWithCovariance::new(pose, Matrix6::zeros())
    }
}
