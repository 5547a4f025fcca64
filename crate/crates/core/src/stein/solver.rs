use nalgebra::{Matrix6, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::icp::{cloud_terms, solve_with_retry, CloudTerms, RobustOptions};
use crate::manifold::{adjoint, pose_boxplus, se3_exp, se3_log, twist_compose, Pose, Twist};
use crate::pointcloud::{build_sub_targets, nearest_in_subtarget, KdTree, PointCloud, SubTargetIndex};

use super::kernel::{median_bandwidth, svgd_direction, svn_hessian};
use super::{Bandwidth, LikelihoodScale, PoseWithCovariance, PriorWeight, SolverConfig, SolverMode};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const MIN_RESIDUAL_VARIANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet {
    pub twists: Vec<Twist>,
    pub terms: Vec<CloudTerms>,
    pub iteration: usize,
}

/// Draws `K` twists, component `j` from `N(0, init_sigma[j]²)`.
pub fn init_particles(config: &SolverConfig, seed: u64) -> ParticleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let twists = (0..config.particle_count)
        .map(|_| {
            Twist(Vector6::from_fn(|j, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * config.init_sigma[j]
            }))
        })
        .collect();
    ParticleSet {
        twists,
        terms: Vec::new(),
        iteration: 0,
    }
}

fn particle_terms(
    pose: &Pose,
    source: &PointCloud,
    target: &PointCloud,
    sub: &SubTargetIndex,
    robust: &RobustOptions,
) -> Result<CloudTerms> {
    let corr: Vec<(usize, usize)> = source
        .points()
        .iter()
        .enumerate()
        .map(|(n, p)| {
            let (q, _) = nearest_in_subtarget(&pose.transform_point(p), sub.neighborhood(n), target);
            (n, q)
        })
        .collect();
    cloud_terms(pose, source, target, &corr, robust)
}

fn residual_variance(terms: &[CloudTerms]) -> f64 {
    let loss: f64 = terms.iter().map(|t| t.loss).sum();
    let dof: f64 = terms
        .iter()
        .map(|t| (3 * t.matches) as f64 - 6.0)
        .sum::<f64>()
        .max(1.0);
    (loss / dof).max(MIN_RESIDUAL_VARIANCE)
}

fn prior_information(prior: &PoseWithCovariance, weight: PriorWeight) -> Result<Option<Matrix6<f64>>> {
    match weight {
        PriorWeight::Off => Ok(None),
        PriorWeight::Gaussian => {
            let sym = 0.5 * (prior.covariance + prior.covariance.transpose());
            sym.cholesky()
                .map(|c| Some(c.inverse()))
                .ok_or(Error::NotPositiveDefinite("prior covariance"))
        }
    }
}

struct Adam {
    m: Vec<Vector6<f64>>,
    v: Vec<Vector6<f64>>,
    t: i32,
}

impl Adam {
    fn new(k: usize) -> Self {
        Adam {
            m: vec![Vector6::zeros(); k],
            v: vec![Vector6::zeros(); k],
            t: 0,
        }
    }

    fn steps(&mut self, directions: &[Vector6<f64>], lr: f64) -> Vec<Vector6<f64>> {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        directions
            .iter()
            .enumerate()
            .map(|(k, g)| {
                self.m[k] = self.m[k] * ADAM_BETA1 + g * (1.0 - ADAM_BETA1);
                self.v[k] = self.v[k] * ADAM_BETA2 + g.component_mul(g) * (1.0 - ADAM_BETA2);
                let m_hat = self.m[k] / c1;
                let v_hat = self.v[k] / c2;
                m_hat.zip_map(&v_hat, |m, v| lr * m / (v.sqrt() + ADAM_EPS))
            })
            .collect()
    }
}

fn mean_twist(twists: &[Twist]) -> Twist {
    let sum = twists.iter().fold(Vector6::zeros(), |acc, t| acc + t.0);
    Twist(sum / twists.len() as f64)
}

/// Iterated mean on the group: `μ ← μ · exp(mean log(μ⁻¹ · exp(ξk)))`.
fn karcher_mean(twists: &[Twist], start: Twist) -> Twist {
    let mut mu = se3_exp(&start);
    for _ in 0..50 {
        let inv = mu.inverse();
        let deltas: Vec<Twist> = twists
            .iter()
            .map(|t| se3_log(&(inv * se3_exp(t))))
            .collect();
        let step = mean_twist(&deltas);
        mu = pose_boxplus(&mu, &step);
        if step.0.norm() < 1e-14 {
            break;
        }
    }
    se3_log(&mu)
}

/// Scatter `1/K Σ (ξk - μ)(ξk - μ)ᵀ`, symmetrized.
fn scatter(twists: &[Twist], mean: &Twist) -> Matrix6<f64> {
    let mut acc = Matrix6::zeros();
    for t in twists {
        let d = t.0 - mean.0;
        acc += d * d.transpose();
    }
    acc /= twists.len() as f64;
    0.5 * (acc + acc.transpose())
}

/// Aligns `source` to `target` starting from `prior`.
pub fn solve_icp(
    prior: &PoseWithCovariance,
    source: &PointCloud,
    target: &PointCloud,
    config: &SolverConfig,
    seed: u64,
) -> Result<PoseWithCovariance> {
    let tree = KdTree::build(target)?;
    solve_icp_with_tree(prior, source, &tree, config, seed)
}

/// As [`solve_icp`], reusing a prebuilt target index.
pub fn solve_icp_with_tree(
    prior: &PoseWithCovariance,
    source: &PointCloud,
    target: &KdTree,
    config: &SolverConfig,
    seed: u64,
) -> Result<PoseWithCovariance> {
    config.validate()?;
    source.ensure_non_empty()?;
    let target_cloud = target.cloud();
    let prior_pose = prior.pose;
    let prior_info = prior_information(prior, config.prior_weight)?;
    let sub = build_sub_targets(source, target, config.neighborhood_size, &prior_pose)?;

    let mut particles = init_particles(config, seed);
    let k_count = particles.twists.len();
    let mut adam = Adam::new(k_count);
    let mut update_norms = Vec::new();
    let mut converged = false;
    let mut frozen_updates = 0;

    for iteration in 1..=config.max_iterations {
        // Every coupling term below reads the particle states as of the
        // start of this iteration.
        let terms: Vec<CloudTerms> = particles
            .twists
            .par_iter()
            .map(|xi| {
                let pose = pose_boxplus(&prior_pose, xi);
                particle_terms(&pose, source, target_cloud, &sub, &config.robust)
            })
            .collect::<Result<_>>()?;

        let inv_var = match config.likelihood {
            LikelihoodScale::Residual => 1.0 / residual_variance(&terms),
            LikelihoodScale::Sigma(s) => 1.0 / (s * s),
            LikelihoodScale::Unit => 1.0,
        };
        let (gradients, hessians): (Vec<Vector6<f64>>, Vec<Matrix6<f64>>) = particles
            .twists
            .iter()
            .zip(&terms)
            .map(|(xi, t)| match &prior_info {
                Some(info) => (
                    t.gradient * inv_var - info * xi.0,
                    t.hessian * inv_var + info,
                ),
                None => (t.gradient * inv_var, t.hessian * inv_var),
            })
            .unzip();

        let h = match config.bandwidth {
            Bandwidth::Median => median_bandwidth(&particles.twists),
            Bandwidth::Fixed(h) => h,
        };
        let phi = svgd_direction(&particles.twists, &gradients, h);

        let steps: Vec<Vector6<f64>> = match config.mode {
            SolverMode::Svn => {
                let solved: Vec<Option<Vector6<f64>>> = (0..k_count)
                    .into_par_iter()
                    .map(|k| {
                        let h_tilde = svn_hessian(&particles.twists, &hessians, h, k);
                        solve_with_retry(&h_tilde, &phi[k]).ok()
                    })
                    .collect();
                solved
                    .into_iter()
                    .map(|s| {
                        s.unwrap_or_else(|| {
                            frozen_updates += 1;
                            Vector6::zeros()
                        })
                    })
                    .collect()
            }
            SolverMode::Svgd => adam.steps(&phi, config.svgd_step_size),
        };

        let mean_sq = steps.iter().map(|s| s.norm_squared()).sum::<f64>() / k_count as f64;
        update_norms.push(mean_sq);
        particles.twists = particles
            .twists
            .iter()
            .zip(&steps)
            .map(|(xi, d)| twist_compose(xi, &Twist(*d)))
            .collect();
        particles.terms = terms;
        particles.iteration = iteration;

        log::debug!("iteration {iteration}: mean squared update {mean_sq:e}, bandwidth {h:e}");
        if mean_sq < config.early_stop_eps {
            converged = true;
            break;
        }
    }

    let mut mean = mean_twist(&particles.twists);
    if config.karcher_mean {
        mean = karcher_mean(&particles.twists, mean);
    }
    let particle_covariance = scatter(&particles.twists, &mean);
    let ad = adjoint(&prior_pose);
    let covariance = prior.covariance + ad * particle_covariance * ad.transpose();

    Ok(PoseWithCovariance {
        pose: pose_boxplus(&prior_pose, &mean),
        covariance: 0.5 * (covariance + covariance.transpose()),
        mean_twist: mean,
        particle_covariance,
        iterations: particles.iteration,
        converged,
        update_norms,
        frozen_updates,
        particles: particles.twists,
    })
}
