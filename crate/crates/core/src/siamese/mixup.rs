//! Latent mixup: interpolated partners with interpolated targets.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use super::SiameseError;
use crate::catalog::Location;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixupConfig {
    pub alpha: f64,
    pub mixes_per_pair: usize,
}

impl Default for MixupConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            mixes_per_pair: 50,
        }
    }
}

impl MixupConfig {
    pub fn validate(&self) -> Result<(), SiameseError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(SiameseError::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.mixes_per_pair == 0 {
            return Err(SiameseError::Config("mixes_per_pair must be at least 1".into()));
        }
        Ok(())
    }
}

/// Draws a mixing weight from `Beta(alpha, alpha)`.
///
/// For `alpha == 2` this is the median of three independent uniforms, whose
/// density `6 x (1 - x)` is exactly `Beta(2, 2)`.
pub fn sample_lambda(rng: &mut impl Rng, alpha: f64) -> f64 {
    if alpha == 2.0 {
        let mut u = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        u.sort_by(f64::total_cmp);
        u[1]
    } else {
        Beta::new(alpha, alpha)
            .expect("alpha validated positive")
            .sample(rng)
    }
}

/// `lambda a + (1 - lambda) b`, elementwise.
pub fn mix(lambda: f64, a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
        .collect()
}

/// Anchor latent, partner latent and dissimilarity target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub anchor: Vec<f64>,
    pub partner: Vec<f64>,
    pub target: f64,
    /// Weight of the same-class latent in the partner.
    pub lambda: f64,
}

/// A latent together with the class it was computed from.
#[derive(Debug, Clone, Copy)]
pub struct Labeled<'a> {
    pub latent: &'a [f64],
    pub class: Location,
}

/// One training pair per `lambda`: partner `lambda x1 + (1 - lambda) x2` with
/// target `1 - lambda`, where `x1` shares the anchor's class and `x2` does not.
pub fn mixup_pairs(
    anchor: Labeled<'_>,
    same: Labeled<'_>,
    other: Labeled<'_>,
    lambdas: &[f64],
) -> Result<Vec<TrainingPair>, SiameseError> {
    if same.class != anchor.class {
        return Err(SiameseError::PairClass(
            "first mixing partner must share the anchor's class".into(),
        ));
    }
    if other.class == anchor.class {
        return Err(SiameseError::PairClass(
            "second mixing partner must come from a different class".into(),
        ));
    }
    Ok(lambdas
        .iter()
        .map(|&lambda| TrainingPair {
            anchor: anchor.latent.to_vec(),
            partner: mix(lambda, same.latent, other.latent),
            target: 1.0 - lambda,
            lambda,
        })
        .collect())
}
