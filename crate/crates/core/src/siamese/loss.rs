/// Contrastive loss `(1 - y) d^2 + y max(0, 1 - d)^2` for a mapped distance
/// `d` and dissimilarity target `y` (0 = same class, 1 = different).
pub fn contrastive_loss(d: f64, y: f64) -> f64 {
    let hinge = (1.0 - d).max(0.0);
    (1.0 - y) * d * d + y * hinge * hinge
}

/// `d/dd` of [`contrastive_loss`].
pub fn contrastive_loss_grad(d: f64, y: f64) -> f64 {
    let hinge = (1.0 - d).max(0.0);
    2.0 * (1.0 - y) * d - 2.0 * y * hinge
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_values() {
        assert_eq!(contrastive_loss(0.0, 0.0), 0.0);
        assert_eq!(contrastive_loss(0.5, 1.0), 0.25);
        assert_eq!(contrastive_loss(0.5, 0.0), 0.25);
        assert!((contrastive_loss(0.2, 0.5) - 0.34).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn endpoint_identities(d in 0.0f64..1.0) {
            prop_assert_eq!(contrastive_loss(d, 0.0), d * d);
            prop_assert_eq!(contrastive_loss(d, 1.0), (1.0 - d).max(0.0).powi(2));
        }

        #[test]
        fn nonnegative_and_zero_only_at_matched_pair(d in 0.0f64..1.0, y in 0.0f64..=1.0) {
            let l = contrastive_loss(d, y);
            prop_assert!(l >= 0.0);
            if l == 0.0 {
                prop_assert!(d == 0.0 && y == 0.0);
            }
        }

        #[test]
        fn gradient_matches_difference_quotient(d in 0.01f64..0.99, y in 0.0f64..=1.0) {
            let h = 1e-6;
            let fd = (contrastive_loss(d + h, y) - contrastive_loss(d - h, y)) / (2.0 * h);
            prop_assert!((fd - contrastive_loss_grad(d, y)).abs() < 1e-8);
        }
    }
}
