use rand::Rng;

use super::{Scalar, Tensor};

/// Kaiming-uniform draw with ReLU gain: `U[-b, b]`, `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform_init<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    assert!(fan_in >= 1, "fan_in must be >= 1");
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..=bound)))
}
