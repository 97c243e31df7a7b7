use crate::error::{Error, Result};
use crate::numeric::{Real, Tensor};

/// Elementwise mean of a sequence of equal-length feature vectors.
pub fn average_over_time<T: Real>(seq: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = seq
        .first()
        .ok_or_else(|| Error::contract("average_over_time needs at least one step"))?;
    let d = first.len();
    let mut acc = vec![0.0f64; d];
    for step in seq {
        if step.len() != d {
            return Err(Error::dim(format!(
                "sequence step has {} values, expected {d}",
                step.len()
            )));
        }
        for (a, v) in acc.iter_mut().zip(step.data()) {
            *a += v.as_f64();
        }
    }
    let n = seq.len() as f64;
    Ok(Tensor::vector(acc.into_iter().map(|s| T::from_f64(s / n)).collect()))
}
