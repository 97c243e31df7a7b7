use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Real, Tensor};

/// Deterministic generator for a `(seed, stream)` pair.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Kaiming-uniform style initialization scaled by fan-in: weights and biases
/// drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn init_linear<T: Real, R: Rng>(
    rng: &mut R,
    fan_in: usize,
    fan_out: usize,
) -> (Tensor<T>, Tensor<T>) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut draw = |n: usize| -> Vec<T> {
        (0..n)
            .map(|_| T::from_f64(rng.random_range(-bound..bound)))
            .collect()
    };
    let w = Tensor::new(vec![fan_in, fan_out], draw(fan_in * fan_out)).expect("consistent shape");
    let b = Tensor::vector(draw(fan_out));
    (w, b)
}
