//! Distance head: normalize both latents, take the mapped Euclidean
//! distance, score with the contrastive loss, and back-propagate to the
//! pre-normalization latents.

use super::distance::{euclidean, squash, squash_derivative};
use super::loss::{contrastive_loss, contrastive_loss_grad};
use crate::ndiff::{dot, L2_EPSILON};

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub distance: f64,
    pub loss: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_partner: Vec<f64>,
}

fn normalize(x: &[f64]) -> (Vec<f64>, f64) {
    let n = (dot(x, x) + L2_EPSILON).sqrt();
    (x.iter().map(|v| v / n).collect(), n)
}

fn normalize_backward(x: &[f64], norm: f64, g: &[f64]) -> Vec<f64> {
    let proj = dot(x, g) / (norm * norm * norm);
    x.iter().zip(g).map(|(&xi, &gi)| gi / norm - xi * proj).collect()
}

/// Loss of one pair and its gradients with respect to both unnormalized latents.
pub fn pair_loss(anchor: &[f64], partner: &[f64], target: f64) -> HeadOutput {
    let (a, na) = normalize(anchor);
    let (p, np) = normalize(partner);
    let d = euclidean(&a, &p);
    let distance = squash(d);
    let loss = contrastive_loss(distance, target);
    // At d == 0 the distance has no gradient direction; the subgradient 0 is used.
    let coeff = if d > 0.0 {
        contrastive_loss_grad(distance, target) * squash_derivative(d) / d
    } else {
        0.0
    };
    let ga: Vec<f64> = a.iter().zip(&p).map(|(x, y)| coeff * (x - y)).collect();
    let gp: Vec<f64> = ga.iter().map(|v| -v).collect();
    HeadOutput {
        distance,
        loss,
        grad_anchor: normalize_backward(anchor, na, &ga),
        grad_partner: normalize_backward(partner, np, &gp),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff::compare_gradients;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn head_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &target in &[0.0, 1.0, 0.37] {
            let a: Vec<f64> = (0..64).map(|_| rng.random::<f64>() - 0.5).collect();
            let p: Vec<f64> = (0..64).map(|_| rng.random::<f64>() - 0.5).collect();
            let out = pair_loss(&a, &p, target);
            let report = compare_gradients(
                &["anchor".into(), "partner".into()],
                &[a, p],
                &[out.grad_anchor, out.grad_partner],
                |b| pair_loss(&b[0], &b[1], target).loss,
                1e-5,
                1e-4,
            );
            assert!(report.passed(), "{report}");
        }
    }

    #[test]
    fn identical_latents_are_a_zero_loss_positive() {
        let a = vec![0.5; 64];
        let out = pair_loss(&a, &a, 0.0);
        assert_eq!((out.distance, out.loss), (0.0, 0.0));
        assert!(out.grad_anchor.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn scale_invariant_in_latent_length() {
        let a: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
        let p: Vec<f64> = (0..64).map(|i| (i as f64).cos()).collect();
        let a3: Vec<f64> = a.iter().map(|v| 3.0 * v).collect();
        let d1 = pair_loss(&a, &p, 1.0).distance;
        let d2 = pair_loss(&a3, &p, 1.0).distance;
        assert!((d1 - d2).abs() < 1e-12);
    }
}
