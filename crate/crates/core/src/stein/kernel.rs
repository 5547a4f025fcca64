//! RBF kernel coupling between particles.

use nalgebra::{Matrix6, Vector6};

use crate::manifold::Twist;

/// Lower bound on the bandwidth.
pub const MIN_BANDWIDTH: f64 = 1e-6;

/// `k = exp(-‖a - b‖² / h)` and its gradient with respect to `a`.
pub fn rbf_kernel(a: &Twist, b: &Twist, h: f64) -> (f64, Vector6<f64>) {
    let diff = a.0 - b.0;
    let k = (-diff.norm_squared() / h).exp();
    (k, diff * (-2.0 / h * k))
}

/// `med² / ln(K + 1)` over pairwise particle distances, floored at
/// [`MIN_BANDWIDTH`].
pub fn median_bandwidth(particles: &[Twist]) -> f64 {
    let n = particles.len();
    if n < 2 {
        return MIN_BANDWIDTH;
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push((particles[i].0 - particles[j].0).norm());
        }
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let med = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    (med * med / ((n + 1) as f64).ln()).max(MIN_BANDWIDTH)
}

/// SVGD direction for every particle:
/// `φ(ξk) = 1/K Σl [k(ξl, ξk) ∇log p(ξl) + ∇ξl k(ξl, ξk)]`.
///
/// `gradients[l]` is the log-density gradient at particle `l`.
pub fn svgd_direction(particles: &[Twist], gradients: &[Vector6<f64>], h: f64) -> Vec<Vector6<f64>> {
    let k_count = particles.len() as f64;
    particles
        .iter()
        .map(|xk| {
            let mut phi = Vector6::zeros();
            for (xl, gl) in particles.iter().zip(gradients) {
                let (k, grad_k) = rbf_kernel(xl, xk, h);
                phi += gl * k + grad_k;
            }
            phi / k_count
        })
        .collect()
}

/// Kernel-averaged Hessian for particle `k`:
/// `H̃(ξk) = 1/K Σl [H(ξl) k(ξl, ξk)² + ∇k ∇kᵀ]`.
///
/// `hessians[l]` is the negative log-density Hessian at particle `l`.
pub fn svn_hessian(particles: &[Twist], hessians: &[Matrix6<f64>], h: f64, k: usize) -> Matrix6<f64> {
    let xk = &particles[k];
    let mut acc = Matrix6::zeros();
    for (xl, hl) in particles.iter().zip(hessians) {
        let (kv, grad_k) = rbf_kernel(xl, xk, h);
        acc += hl * (kv * kv) + grad_k * grad_k.transpose();
    }
    acc / particles.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icp::min_eigenvalue;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_twist(rng: &mut ChaCha8Rng) -> Twist {
        Twist(Vector6::from_fn(|_, _| rng.random_range(-0.5..0.5)))
    }

    #[test]
    fn kernel_at_coincident_points() {
        let a = Twist::from_slice(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let (k, g) = rbf_kernel(&a, &a, 0.7);
        assert_eq!(k, 1.0);
        assert_eq!(g, Vector6::zeros());
    }

    #[test]
    fn kernel_at_one_bandwidth() {
        let a = Twist::zero();
        let b = Twist::from_slice(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.5]);
        let (k, _) = rbf_kernel(&a, &b, 0.25);
        assert!((k - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn kernel_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (random_twist(&mut rng), random_twist(&mut rng));
        let h = 0.4;
        let (_, g) = rbf_kernel(&a, &b, h);
        let step = 1e-6;
        for j in 0..6 {
            let mut ap = a;
            let mut am = a;
            ap.0[j] += step;
            am.0[j] -= step;
            let fd = (rbf_kernel(&ap, &b, h).0 - rbf_kernel(&am, &b, h).0) / (2.0 * step);
            assert!((fd - g[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn bandwidth_two_particles() {
        let d = 0.3;
        let p = [Twist::zero(), Twist::from_slice(&[d, 0.0, 0.0, 0.0, 0.0, 0.0])];
        assert!((median_bandwidth(&p) - d * d / 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn bandwidth_floors() {
        assert_eq!(median_bandwidth(&[Twist::zero(); 5]), MIN_BANDWIDTH);
        assert_eq!(median_bandwidth(&[Twist::zero()]), MIN_BANDWIDTH);
    }

    #[test]
    fn bandwidth_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: Vec<Twist> = (0..30).map(|_| random_twist(&mut rng)).collect();
        let mut all = Vec::new();
        for a in &p {
            for b in &p {
                let d = (a.0 - b.0).norm();
                if d > 0.0 {
                    all.push(d);
                }
            }
        }
        // Every unordered pair appears twice; 435 pairs is odd, so the
        // median is the 218th distinct entry, at doubled index 435.
        all.sort_by(f64::total_cmp);
        assert_eq!(all.len(), 870);
        let med = all[435];
        let expect = med * med / 31f64.ln();
        assert!((median_bandwidth(&p) - expect).abs() < 1e-15);
    }

    #[test]
    fn single_particle_direction_is_its_gradient() {
        let p = [Twist::from_slice(&[0.1, 0.0, 0.0, 0.0, 0.2, 0.0])];
        let g = [Vector6::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0)];
        assert_eq!(svgd_direction(&p, &g, 0.3), vec![g[0]]);
    }

    #[test]
    fn identical_particles_average_attraction() {
        let x = Twist::from_slice(&[0.1, 0.0, 0.0, 0.0, 0.2, 0.0]);
        let p = [x, x];
        let g = [Vector6::repeat(1.0), Vector6::repeat(3.0)];
        let phi = svgd_direction(&p, &g, 0.3);
        assert_eq!(phi[0], Vector6::repeat(2.0));
        assert_eq!(phi[1], Vector6::repeat(2.0));
    }

    #[test]
    fn direction_and_hessian_match_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p: Vec<Twist> = (0..5).map(|_| random_twist(&mut rng)).collect();
        let g: Vec<Vector6<f64>> = (0..5)
            .map(|_| Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let hs: Vec<Matrix6<f64>> = (0..5)
            .map(|_| {
                let a = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
                a * a.transpose()
            })
            .collect();
        let h = 0.35;
        let phi = svgd_direction(&p, &g, h);
        for k in 0..5 {
            let mut expect = Vector6::zeros();
            let mut expect_h = Matrix6::zeros();
            for l in 0..5 {
                let diff = p[l].0 - p[k].0;
                let kv = (-diff.dot(&diff) / h).exp();
                let grad = -2.0 / h * kv * diff;
                expect += kv * g[l] + grad;
                expect_h += kv * kv * hs[l] + grad * grad.transpose();
            }
            assert!((phi[k] - expect / 5.0).norm() < 1e-12);
            let hk = svn_hessian(&p, &hs, h, k);
            assert!((hk - expect_h / 5.0).norm() < 1e-12);
            assert!(min_eigenvalue(&hk) >= -1e-12);
        }
    }

    #[test]
    fn hessian_single_and_coincident() {
        let x = Twist::zero();
        let hs = [Matrix6::identity() * 3.0];
        assert_eq!(svn_hessian(&[x], &hs, 0.5, 0), hs[0]);
        let hs = [Matrix6::identity(); 4];
        assert_eq!(svn_hessian(&[x; 4], &hs, 0.5, 2), Matrix6::identity());
    }
}
