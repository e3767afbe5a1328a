use crate::embedder::EmbeddingVector;

/// Squashes a Euclidean distance into `[0, 1)`: `2 sigmoid(d) - 1`.
///
/// Written as `tanh(d / 2)`, which is the same function without the
/// cancellation near `d = 0`.
pub fn squash(distance: f64) -> f64 {
    (0.5 * distance).tanh()
}

/// Derivative of [`squash`] with respect to the raw distance.
pub fn squash_derivative(distance: f64) -> f64 {
    let t = squash(distance);
    0.5 * (1.0 - t * t)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mapped distance between two embeddings, 0 iff they are equal.
pub fn mapped_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    squash(euclidean(a.values(), b.values()))
}
